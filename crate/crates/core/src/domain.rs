//! Shared domain types: array geometry, medium, pulse, source field and pixel grid.
//!
//! Everything is SI internally (metres, seconds, hertz). The array lies on the
//! line z = 0 and the imaging plane is (x, z) with z pointing into the medium.

use ndarray::Array2;
use std::f64::consts::PI;

use crate::error::{AeError, Result};

/// A point in the imaging plane [m].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point {
    pub x: f64,
    pub z: f64,
}

impl Point {
    pub const fn new(x: f64, z: f64) -> Self {
        Point { x, z }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.z - other.z)
    }
}

/// Linear transducer array at depth z = 0.
#[derive(Debug, Clone, PartialEq)]
pub struct ArrayGeometry {
    pub num_elements: usize,
    /// Element pitch [m].
    pub pitch: f64,
    /// Lateral centre of the array [m].
    pub center_x: f64,
}

impl ArrayGeometry {
    pub fn new(num_elements: usize, pitch: f64) -> Result<Self> {
        let g = ArrayGeometry {
            num_elements,
            pitch,
            center_x: 0.0,
        };
        g.validate()?;
        Ok(g)
    }

    /// 64 elements at 0.315 mm, a 20.16 mm wide aperture.
    pub fn p4_2() -> Self {
        ArrayGeometry {
            num_elements: 64,
            pitch: 0.315e-3,
            center_x: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_elements == 0 {
            return Err(AeError::param("num_elements", "must be positive"));
        }
        if !(self.pitch > 0.0) || !self.pitch.is_finite() {
            return Err(AeError::param("pitch", "must be positive and finite"));
        }
        if !self.center_x.is_finite() {
            return Err(AeError::param("center_x", "must be finite"));
        }
        Ok(())
    }

    pub fn element_x(&self, index: usize) -> f64 {
        self.center_x + (index as f64 - (self.num_elements as f64 - 1.0) / 2.0) * self.pitch
    }

    pub fn element_position(&self, index: usize) -> Point {
        Point::new(self.element_x(index), 0.0)
    }

    pub fn element_positions(&self) -> Vec<f64> {
        (0..self.num_elements).map(|i| self.element_x(i)).collect()
    }

    /// Total aperture width, `M * pitch`.
    pub fn aperture_width(&self) -> f64 {
        self.num_elements as f64 * self.pitch
    }

    pub fn left_edge(&self) -> f64 {
        self.center_x - self.aperture_width() / 2.0
    }
}

/// Propagation medium and acoustoelectric constants.
#[derive(Debug, Clone, PartialEq)]
pub struct Medium {
    /// Speed of sound [m/s].
    pub sos: f64,
    /// Acoustoelectric interaction constant [1/Pa].
    pub k_i: f64,
    /// Pressure amplitude [Pa].
    pub p0: f64,
    /// Per-sample thermal noise variance before averaging [V^2].
    pub noise_power: f64,
}

impl Medium {
    pub fn water() -> Self {
        Medium {
            sos: 1480.0,
            k_i: 1.0,
            p0: 1.0,
            noise_power: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sos > 0.0) || !self.sos.is_finite() {
            return Err(AeError::param("sos", "must be positive and finite"));
        }
        if !(self.noise_power >= 0.0) || !self.noise_power.is_finite() {
            return Err(AeError::param("noise_power", "must be non-negative"));
        }
        if !self.k_i.is_finite() || !self.p0.is_finite() {
            return Err(AeError::param("k_i/p0", "must be finite"));
        }
        Ok(())
    }

    /// `-K_I * P0`, the leading factor of the AE voltage.
    pub fn ae_gain(&self) -> f64 {
        -self.k_i * self.p0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PulseKind {
    /// Single-sample impulse.
    Impulse,
    /// `num_cycles` of a sine under a Hann window.
    Tone,
}

/// Transmitted pulse waveform and the sampling rate it is rendered at.
#[derive(Debug, Clone, PartialEq)]
pub struct PulseSpec {
    pub center_frequency: f64,
    pub num_cycles: f64,
    pub sample_rate: f64,
    pub kind: PulseKind,
}

impl PulseSpec {
    pub fn tone(center_frequency: f64, num_cycles: f64, sample_rate: f64) -> Result<Self> {
        let p = PulseSpec {
            center_frequency,
            num_cycles,
            sample_rate,
            kind: PulseKind::Tone,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn impulse(center_frequency: f64, sample_rate: f64) -> Result<Self> {
        let p = PulseSpec {
            center_frequency,
            num_cycles: 1.0,
            sample_rate,
            kind: PulseKind::Impulse,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.center_frequency > 0.0) || !self.center_frequency.is_finite() {
            return Err(AeError::param("center_frequency", "must be positive"));
        }
        if !(self.num_cycles > 0.0) || !self.num_cycles.is_finite() {
            return Err(AeError::param("num_cycles", "must be positive"));
        }
        if !(self.sample_rate >= 8.0 * self.center_frequency) || !self.sample_rate.is_finite() {
            return Err(AeError::param(
                "sample_rate",
                format!(
                    "{} Hz is below 8x the centre frequency ({} Hz)",
                    self.sample_rate, self.center_frequency
                ),
            ));
        }
        Ok(())
    }

    /// Number of samples in the rendered waveform; always odd so the pulse has a centre sample.
    pub fn length_samples(&self) -> usize {
        match self.kind {
            PulseKind::Impulse => 1,
            PulseKind::Tone => {
                let span = self.num_cycles * self.sample_rate / self.center_frequency;
                2 * (span / 2.0).round().max(1.0) as usize + 1
            }
        }
    }

    /// Index of the sample that corresponds to t = 0.
    pub fn center_index(&self) -> usize {
        self.length_samples() / 2
    }

    /// Sampled waveform `a(t)`, centred at t = 0.
    pub fn waveform(&self) -> Vec<f64> {
        match self.kind {
            PulseKind::Impulse => vec![1.0],
            PulseKind::Tone => {
                let n = self.length_samples();
                let c = self.center_index() as f64;
                let duration = self.num_cycles / self.center_frequency;
                (0..n)
                    .map(|j| {
                        let t = (j as f64 - c) / self.sample_rate;
                        if t.abs() > duration / 2.0 {
                            return 0.0;
                        }
                        let window = 0.5 * (1.0 + (2.0 * PI * t / duration).cos());
                        (2.0 * PI * self.center_frequency * t).sin() * window
                    })
                    .collect()
            }
        }
    }
}

/// Sampled 2D source field `s(x, z)`. `values[[ix, iz]]` sits at
/// `(origin.x + ix * dx, origin.z + iz * dz)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SFieldGrid {
    pub origin: Point,
    pub dx: f64,
    pub dz: f64,
    pub values: Array2<f64>,
}

impl SFieldGrid {
    pub fn new(origin: Point, dx: f64, dz: f64, values: Array2<f64>) -> Result<Self> {
        let g = SFieldGrid {
            origin,
            dx,
            dz,
            values,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn zeros(origin: Point, dx: f64, dz: f64, nx: usize, nz: usize) -> Result<Self> {
        Self::new(origin, dx, dz, Array2::zeros((nx, nz)))
    }

    /// A single cell at `position` holding `value`.
    pub fn point(position: Point, value: f64, dx: f64, dz: f64) -> Result<Self> {
        Self::new(position, dx, dz, Array2::from_elem((1, 1), value))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dx > 0.0) || !(self.dz > 0.0) {
            return Err(AeError::param("dx/dz", "spacing must be positive"));
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(AeError::param("values", "all source values must be finite"));
        }
        Ok(())
    }

    pub fn shape(&self) -> (usize, usize) {
        self.values.dim()
    }

    pub fn cell_area(&self) -> f64 {
        self.dx * self.dz
    }

    pub fn position(&self, ix: usize, iz: usize) -> Point {
        Point::new(
            self.origin.x + ix as f64 * self.dx,
            self.origin.z + iz as f64 * self.dz,
        )
    }

    /// Nonzero cells as `(position, value)`.
    pub fn nonzero_cells(&self) -> impl Iterator<Item = (Point, f64)> + '_ {
        self.values
            .indexed_iter()
            .filter(|(_, v)| **v != 0.0)
            .map(|((ix, iz), v)| (self.position(ix, iz), *v))
    }

    pub fn scaled(&self, factor: f64) -> SFieldGrid {
        SFieldGrid {
            values: &self.values * factor,
            ..self.clone()
        }
    }
}

/// Regular reconstruction grid. Pixel `(ix, iz)` sits at
/// `(origin.x + ix * dx, origin.z + iz * dz)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelGrid {
    pub origin: Point,
    pub dx: f64,
    pub dz: f64,
    pub nx: usize,
    pub nz: usize,
}

impl PixelGrid {
    pub fn new(origin: Point, dx: f64, dz: f64, nx: usize, nz: usize) -> Result<Self> {
        let g = PixelGrid {
            origin,
            dx,
            dz,
            nx,
            nz,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dx > 0.0) || !(self.dz > 0.0) {
            return Err(AeError::param("dx/dz", "pixel spacing must be positive"));
        }
        if self.nx == 0 || self.nz == 0 {
            return Err(AeError::param("nx/nz", "grid must have at least one pixel"));
        }
        Ok(())
    }

    pub fn x(&self, ix: usize) -> f64 {
        self.origin.x + ix as f64 * self.dx
    }

    pub fn z(&self, iz: usize) -> f64 {
        self.origin.z + iz as f64 * self.dz
    }

    pub fn point(&self, ix: usize, iz: usize) -> Point {
        Point::new(self.x(ix), self.z(iz))
    }

    pub fn dim(&self) -> (usize, usize) {
        (self.nx, self.nz)
    }

    pub fn len(&self) -> usize {
        self.nx * self.nz
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn lateral_span(&self) -> f64 {
        self.nx as f64 * self.dx
    }

    /// Column whose x is nearest to `x`, if `x` lies within half a pixel of the grid.
    pub fn nearest_column(&self, x: f64) -> Option<usize> {
        let f = ((x - self.origin.x) / self.dx).round();
        (f >= 0.0 && (f as usize) < self.nx).then_some(f as usize)
    }

    pub fn nearest_row(&self, z: f64) -> Option<usize> {
        let f = ((z - self.origin.z) / self.dz).round();
        (f >= 0.0 && (f as usize) < self.nz).then_some(f as usize)
    }
}

/// Two-component vector field on a regular grid.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    pub x: Array2<f64>,
    pub z: Array2<f64>,
}

impl VectorField {
    pub fn uniform(shape: (usize, usize), vx: f64, vz: f64) -> Self {
        VectorField {
            x: Array2::from_elem(shape, vx),
            z: Array2::from_elem(shape, vz),
        }
    }
}

/// Projected electric field `s = J_L . (rho0 J_I)` from the lead field, current
/// density and resistivity, all sampled on the same grid.
pub fn compose_s_field(
    lead_field: &VectorField,
    current_density: &VectorField,
    resistivity: &Array2<f64>,
    origin: Point,
    dx: f64,
    dz: f64,
) -> Result<SFieldGrid> {
    let shape = resistivity.dim();
    for (name, dim) in [
        ("lead_field.x", lead_field.x.dim()),
        ("lead_field.z", lead_field.z.dim()),
        ("current_density.x", current_density.x.dim()),
        ("current_density.z", current_density.z.dim()),
    ] {
        if dim != shape {
            return Err(AeError::DimensionMismatch(format!(
                "{name} is {dim:?}, resistivity is {shape:?}"
            )));
        }
    }
    let mut values = Array2::zeros(shape);
    ndarray::Zip::from(&mut values)
        .and(&lead_field.x)
        .and(&lead_field.z)
        .and(&current_density.x)
        .and(&current_density.z)
        .and(resistivity)
        .for_each(|s, &lx, &lz, &jx, &jz, &rho| {
            *s = lx * (rho * jx) + lz * (rho * jz);
        });
    SFieldGrid::new(origin, dx, dz, values)
}

/// Acoustic wavelength `c / f_c`.
pub fn wavelength(medium: &Medium, pulse: &PulseSpec) -> f64 {
    medium.sos / pulse.center_frequency
}

/// Reconstruction grid spanning the aperture laterally and `(0, max_depth]` in depth,
/// sampled at 0.43 wavelengths laterally and 0.25 wavelengths axially.
pub fn default_pixel_grid(
    geometry: &ArrayGeometry,
    medium: &Medium,
    pulse: &PulseSpec,
    max_depth: f64,
) -> Result<PixelGrid> {
    if !(max_depth > 0.0) {
        return Err(AeError::param("max_depth", "must be positive"));
    }
    let lambda = wavelength(medium, pulse);
    let dx = 0.43 * lambda;
    let dz = 0.25 * lambda;
    let width = geometry.aperture_width();
    // Small tolerance so spans that are exact multiples of the spacing don't gain a pixel.
    let nx = ((width / dx) - 1e-9).ceil().max(1.0) as usize;
    let nz = ((max_depth / dz) + 1e-9).floor().max(1.0) as usize;
    PixelGrid::new(Point::new(geometry.left_edge(), dz), dx, dz, nx, nz)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn element_positions_symmetric() {
        let g = ArrayGeometry {
            num_elements: 7,
            pitch: 0.3e-3,
            center_x: 1.5e-3,
        };
        for i in 0..7 {
            assert_relative_eq!(
                g.element_x(i) + g.element_x(6 - i),
                2.0 * g.center_x,
                epsilon = 1e-15
            );
        }
        assert_relative_eq!(g.element_x(3), 1.5e-3);
    }

    #[test]
    fn compose_examples() {
        let rho = Array2::from_elem((3, 2), 2.0);
        let s = compose_s_field(
            &VectorField::uniform((3, 2), 1.0, 0.0),
            &VectorField::uniform((3, 2), 1.0, 0.0),
            &rho,
            Point::default(),
            1.0,
            1.0,
        )
        .unwrap();
        assert!(s.values.iter().all(|&v| v == 2.0));

        let s = compose_s_field(
            &VectorField::uniform((3, 2), 1.0, 0.0),
            &VectorField::uniform((3, 2), 0.0, 1.0),
            &Array2::from_elem((3, 2), 7.3),
            Point::default(),
            1.0,
            1.0,
        )
        .unwrap();
        assert!(s.values.iter().all(|&v| v == 0.0));

        let s = compose_s_field(
            &VectorField::uniform((1, 1), 0.5, 0.5),
            &VectorField::uniform((1, 1), 2.0, 0.0),
            &Array2::from_elem((1, 1), 1.0),
            Point::default(),
            1.0,
            1.0,
        )
        .unwrap();
        assert_eq!(s.values[[0, 0]], 1.0);
    }

    #[test]
    fn compose_rejects_mismatched_grids() {
        let err = compose_s_field(
            &VectorField::uniform((3, 2), 1.0, 0.0),
            &VectorField::uniform((2, 2), 1.0, 0.0),
            &Array2::from_elem((3, 2), 1.0),
            Point::default(),
            1.0,
            1.0,
        );
        assert!(matches!(err, Err(AeError::DimensionMismatch(_))));
    }

    #[test]
    fn wavelength_examples() {
        let pulse = |fc: f64| PulseSpec::tone(fc, 1.0, 10.0 * fc).unwrap();
        let med = |c: f64| Medium {
            sos: c,
            ..Medium::water()
        };
        assert_relative_eq!(
            wavelength(&med(1480.0), &pulse(2e6)),
            0.74e-3,
            max_relative = 1e-12
        );
        assert_relative_eq!(wavelength(&med(1.0), &pulse(1.0)), 1.0);
        assert_relative_eq!(
            wavelength(&med(1540.0), &pulse(5e6)),
            0.308e-3,
            max_relative = 1e-12
        );
    }

    #[test]
    fn default_grid_matches_p4_2_layout() {
        let pulse = PulseSpec::tone(2e6, 1.0, 20e6).unwrap();
        let g =
            default_pixel_grid(&ArrayGeometry::p4_2(), &Medium::water(), &pulse, 50e-3).unwrap();
        assert_relative_eq!(g.dx, 0.3182e-3, max_relative = 1e-12);
        assert_relative_eq!(g.dz, 0.185e-3, max_relative = 1e-12);
        assert_relative_eq!(
            ArrayGeometry::p4_2().aperture_width(),
            20.16e-3,
            max_relative = 1e-12
        );
        assert!((g.lateral_span() - 20.16e-3).abs() <= g.dx);
        assert_relative_eq!(g.x(0), -10.08e-3, max_relative = 1e-12);
        assert_eq!((g.nx, g.nz), (64, 270));
        assert!(g.z(g.nz - 1) <= 50e-3 && g.z(0) > 0.0);
    }

    #[test]
    fn default_grid_minimal_depth_and_small_array() {
        let pulse = PulseSpec::tone(2e6, 1.0, 20e6).unwrap();
        let med = Medium::water();
        let dz = 0.25 * wavelength(&med, &pulse);
        let g = default_pixel_grid(&ArrayGeometry::p4_2(), &med, &pulse, dz).unwrap();
        assert_eq!(g.nz, 1);

        let two = ArrayGeometry::new(2, 1e-3).unwrap();
        let g = default_pixel_grid(&two, &med, &pulse, 5e-3).unwrap();
        assert_relative_eq!(two.aperture_width(), 2e-3);
        assert!((g.lateral_span() - 2e-3).abs() <= g.dx);
    }

    #[test]
    fn pulse_validation() {
        assert!(PulseSpec::tone(2e6, 1.0, 15e6).is_err());
        assert!(PulseSpec::tone(2e6, 0.0, 20e6).is_err());
        let p = PulseSpec::tone(2e6, 1.0, 20e6).unwrap();
        assert_eq!(p.length_samples(), 11);
        let w = p.waveform();
        // odd pulse, zero at the centre and at the window edges
        assert!(w[5].abs() < 1e-12 && w[0].abs() < 1e-12 && w[10].abs() < 1e-12);
        for j in 0..11 {
            assert_relative_eq!(w[j], -w[10 - j], epsilon = 1e-12);
        }
        assert_eq!(PulseSpec::impulse(2e6, 20e6).unwrap().waveform(), vec![1.0]);
    }

    #[test]
    fn geometry_validation() {
        assert!(ArrayGeometry::new(0, 1e-3).is_err());
        assert!(ArrayGeometry::new(4, 0.0).is_err());
        assert!(SFieldGrid::point(Point::default(), f64::NAN, 1.0, 1.0).is_err());
        assert!(PixelGrid::new(Point::default(), 1.0, 1.0, 0, 3).is_err());
    }
}
