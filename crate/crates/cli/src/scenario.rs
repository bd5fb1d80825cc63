//! Scenario files: one TOML document fully determines a run.
//!
//! Lengths carry an `_mm` suffix and are converted to metres when the scenario is
//! turned into core types. Every section except `seed`, `max_depth_mm` and
//! `transmit` has defaults matching a 64-element, 0.315 mm pitch, 2 MHz probe in
//! water.

use ae_core::domain::{default_pixel_grid, wavelength};
use ae_core::{
    AcquisitionSpec, ArrayGeometry, Decay, Directivity, Medium, PixelGrid, Point, PressureModel,
    PulseKind, PulseSpec, Roi, SFieldGrid, SimulationSetup, TargetSpec, TransmitEvent,
};
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::Path;

const MM: f64 = 1e-3;
const MHZ: f64 = 1e6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default = "default_name")]
    pub name: String,
    pub seed: u64,
    /// Deepest point to image and record.
    pub max_depth_mm: f64,
    #[serde(default)]
    pub geometry: GeometryCfg,
    #[serde(default)]
    pub medium: MediumCfg,
    #[serde(default)]
    pub pulse: PulseCfg,
    #[serde(default)]
    pub pressure: PressureCfg,
    #[serde(default)]
    pub acquisition: AcquisitionCfg,
    #[serde(default)]
    pub s_field: SFieldCfg,
    pub transmit: TransmitCfg,
    #[serde(default)]
    pub reconstruction: ReconstructionCfg,
    #[serde(default)]
    pub targets: Vec<TargetCfg>,
}

fn default_name() -> String {
    "scenario".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometryCfg {
    pub num_elements: usize,
    pub pitch_mm: f64,
    pub center_x_mm: f64,
}

impl Default for GeometryCfg {
    fn default() -> Self {
        GeometryCfg {
            num_elements: 64,
            pitch_mm: 0.315,
            center_x_mm: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MediumCfg {
    pub sos_m_per_s: f64,
    pub k_i: f64,
    pub p0: f64,
}

impl Default for MediumCfg {
    fn default() -> Self {
        MediumCfg {
            sos_m_per_s: 1480.0,
            k_i: 1.0,
            p0: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PulseKindCfg {
    Tone,
    Impulse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PulseCfg {
    pub kind: PulseKindCfg,
    pub center_frequency_mhz: f64,
    pub num_cycles: f64,
    pub sample_rate_mhz: f64,
}

impl Default for PulseCfg {
    fn default() -> Self {
        PulseCfg {
            kind: PulseKindCfg::Tone,
            center_frequency_mhz: 2.0,
            num_cycles: 1.0,
            sample_rate_mhz: 20.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecayCfg {
    None,
    InverseSqrt,
    Inverse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DirectivityCfg {
    Omni,
    Cosine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PressureCfg {
    pub decay: DecayCfg,
    pub r_min_mm: f64,
    pub directivity: DirectivityCfg,
}

impl Default for PressureCfg {
    fn default() -> Self {
        PressureCfg {
            decay: DecayCfg::None,
            r_min_mm: 1.0,
            directivity: DirectivityCfg::Omni,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AcquisitionCfg {
    /// Transmits averaged per acquisition.
    pub k: u32,
    /// Thermal noise variance of a single, unaveraged acquisition sample.
    pub noise_power: f64,
    pub common_mode_amplitude: f64,
    pub rf_gain: f64,
}

impl Default for AcquisitionCfg {
    fn default() -> Self {
        AcquisitionCfg {
            k: 1,
            noise_power: 0.0,
            common_mode_amplitude: 0.0,
            rf_gain: 1.0,
        }
    }
}

/// A point source. `amplitude` is the integrated strength, so it does not depend on
/// the rasterisation spacing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointCfg {
    pub x_mm: f64,
    pub z_mm: f64,
    pub amplitude: f64,
}

/// A uniform disc; `amplitude` is the s value inside it per square millimetre, so
/// `amplitude * pi * radius_mm^2` is its integrated strength.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscCfg {
    pub x_mm: f64,
    pub z_mm: f64,
    pub radius_mm: f64,
    pub amplitude: f64,
}

/// Externally computed field stored as CSV: one line per depth row, values in
/// lateral order, sampled at the section's `dx_mm`/`dz_mm`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SFieldFileCfg {
    pub path: String,
    pub origin_x_mm: f64,
    pub origin_z_mm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SFieldCfg {
    pub dx_mm: f64,
    pub dz_mm: f64,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub points: Vec<PointCfg>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub discs: Vec<DiscCfg>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub file: Option<SFieldFileCfg>,
}

impl Default for SFieldCfg {
    fn default() -> Self {
        SFieldCfg {
            dx_mm: 0.05,
            dz_mm: 0.05,
            points: Vec::new(),
            discs: Vec::new(),
            file: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case", deny_unknown_fields)]
pub enum TransmitCfg {
    /// One single-element transmit per element.
    Sa,
    /// Full-aperture focused lines. Without explicit centres there is one line per
    /// reconstruction grid column.
    Fus {
        focal_depth_mm: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        line_centers_mm: Option<Vec<f64>>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    #[default]
    None,
    Cf,
    Cfpl,
}

impl Weighting {
    pub fn as_str(&self) -> &'static str {
        match self {
            Weighting::None => "none",
            Weighting::Cf => "cf",
            Weighting::Cfpl => "cfpl",
        }
    }
}

impl std::str::FromStr for Weighting {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(Weighting::None),
            "cf" => Ok(Weighting::Cf),
            "cfpl" => Ok(Weighting::Cfpl),
            other => Err(format!("unknown weighting `{other}` (none, cf, cfpl)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WindowAlignmentCfg {
    Causal,
    #[default]
    Centered,
}

impl From<WindowAlignmentCfg> for ae_core::WindowAlignment {
    fn from(v: WindowAlignmentCfg) -> Self {
        match v {
            WindowAlignmentCfg::Causal => ae_core::WindowAlignment::Causal,
            WindowAlignmentCfg::Centered => ae_core::WindowAlignment::Centered,
        }
    }
}

/// Reconstruction grid overrides; unset fields keep the default grid's values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct GridCfg {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub origin_x_mm: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub origin_z_mm: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dx_mm: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dz_mm: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nx: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nz: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReconstructionCfg {
    pub f_number: f64,
    pub weighting: Weighting,
    pub amplitude_correct: bool,
    /// Beam-map floor for amplitude correction, relative to the map's peak.
    pub epsilon: f64,
    /// Display range of the envelope PGMs.
    pub dynamic_range_db: f64,
    /// CFPL window placement relative to the arrival time.
    pub cfpl_window: WindowAlignmentCfg,
    pub grid: GridCfg,
}

impl Default for ReconstructionCfg {
    fn default() -> Self {
        ReconstructionCfg {
            f_number: 1.5,
            weighting: Weighting::None,
            amplitude_correct: false,
            epsilon: ae_core::coherence::DEFAULT_EPSILON,
            dynamic_range_db: 40.0,
            cfpl_window: WindowAlignmentCfg::Centered,
            grid: GridCfg::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoiCfg {
    pub x_min_mm: f64,
    pub x_max_mm: f64,
    pub z_min_mm: f64,
    pub z_max_mm: f64,
}

impl RoiCfg {
    fn to_roi(&self) -> Roi {
        Roi {
            x_min: self.x_min_mm * MM,
            x_max: self.x_max_mm * MM,
            z_min: self.z_min_mm * MM,
            z_max: self.z_max_mm * MM,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetCfg {
    pub label: String,
    pub x_mm: f64,
    pub z_mm: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<String>,
    #[serde(default = "one")]
    pub signal_half_width_mm: f64,
    #[serde(default = "one")]
    pub signal_half_depth_mm: f64,
    /// Region the noise variance is measured over. A target without one is
    /// reported with an error entry.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_roi: Option<RoiCfg>,
}

fn one() -> f64 {
    1.0
}

/// Validation failures, each tagged with the offending field path.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioError {
    pub issues: Vec<(String, String)>,
}

impl fmt::Display for ScenarioError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "invalid scenario:")?;
        for (path, msg) in &self.issues {
            writeln!(f, "  {path}: {msg}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ScenarioError {}

#[derive(Default)]
struct Issues(Vec<(String, String)>);

impl Issues {
    fn check(&mut self, ok: bool, path: impl Into<String>, msg: impl Into<String>) {
        if !ok {
            self.0.push((path.into(), msg.into()));
        }
    }
    fn positive(&mut self, v: f64, path: &str) {
        self.check(
            v > 0.0 && v.is_finite(),
            path,
            format!("must be positive and finite, got {v}"),
        );
    }
    fn finite(&mut self, v: f64, path: impl Into<String>) {
        self.check(v.is_finite(), path, format!("must be finite, got {v}"));
    }
}

impl Scenario {
    pub fn from_toml(text: &str) -> anyhow::Result<Scenario> {
        let scenario: Scenario = toml::from_str(text)?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario always serialises")
    }

    pub fn load(path: &Path) -> anyhow::Result<Scenario> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| anyhow::anyhow!("reading scenario {}: {e}", path.display()))?;
        Scenario::from_toml(&text).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let mut is = Issues::default();
        is.positive(self.max_depth_mm, "max_depth_mm");
        is.check(
            self.seed <= i64::MAX as u64,
            "seed",
            "must fit a signed 64-bit integer",
        );

        let g = &self.geometry;
        is.check(
            g.num_elements >= 1,
            "geometry.num_elements",
            "must be at least 1",
        );
        is.check(
            g.num_elements <= u16::MAX as usize,
            "geometry.num_elements",
            "must fit in 16 bits",
        );
        is.positive(g.pitch_mm, "geometry.pitch_mm");
        is.finite(g.center_x_mm, "geometry.center_x_mm");

        is.positive(self.medium.sos_m_per_s, "medium.sos_m_per_s");
        is.finite(self.medium.k_i, "medium.k_i");
        is.finite(self.medium.p0, "medium.p0");

        let p = &self.pulse;
        is.positive(p.center_frequency_mhz, "pulse.center_frequency_mhz");
        is.positive(p.num_cycles, "pulse.num_cycles");
        is.positive(p.sample_rate_mhz, "pulse.sample_rate_mhz");
        is.check(
            p.sample_rate_mhz >= 8.0 * p.center_frequency_mhz,
            "pulse.sample_rate_mhz",
            "must be at least 8x the centre frequency",
        );
        is.positive(self.pressure.r_min_mm, "pressure.r_min_mm");

        let a = &self.acquisition;
        is.check(a.k >= 1, "acquisition.k", "must be at least 1");
        is.check(
            a.noise_power >= 0.0 && a.noise_power.is_finite(),
            "acquisition.noise_power",
            "must be >= 0",
        );
        is.finite(a.common_mode_amplitude, "acquisition.common_mode_amplitude");
        is.finite(a.rf_gain, "acquisition.rf_gain");

        let s = &self.s_field;
        is.positive(s.dx_mm, "s_field.dx_mm");
        is.positive(s.dz_mm, "s_field.dz_mm");
        let depth_ok = |z: f64| z > 0.0 && z <= self.max_depth_mm;
        for (i, pt) in s.points.iter().enumerate() {
            is.finite(pt.x_mm, format!("s_field.points[{i}].x_mm"));
            is.check(
                depth_ok(pt.z_mm),
                format!("s_field.points[{i}].z_mm"),
                "must lie in (0, max_depth_mm]",
            );
            is.finite(pt.amplitude, format!("s_field.points[{i}].amplitude"));
        }
        for (i, d) in s.discs.iter().enumerate() {
            is.finite(d.x_mm, format!("s_field.discs[{i}].x_mm"));
            is.check(
                d.radius_mm > 0.0,
                format!("s_field.discs[{i}].radius_mm"),
                "must be positive",
            );
            is.check(
                d.z_mm - d.radius_mm > 0.0 && depth_ok(d.z_mm + d.radius_mm),
                format!("s_field.discs[{i}].z_mm"),
                "disc must lie in (0, max_depth_mm]",
            );
            is.finite(d.amplitude, format!("s_field.discs[{i}].amplitude"));
        }
        if s.file.is_some() {
            is.check(
                s.points.is_empty() && s.discs.is_empty(),
                "s_field.file",
                "cannot be combined with points or discs",
            );
        }

        if let TransmitCfg::Fus {
            focal_depth_mm,
            line_centers_mm,
        } = &self.transmit
        {
            is.check(
                depth_ok(*focal_depth_mm),
                "transmit.focal_depth_mm",
                "must lie in (0, max_depth_mm]",
            );
            if let Some(lines) = line_centers_mm {
                is.check(
                    !lines.is_empty(),
                    "transmit.line_centers_mm",
                    "must not be empty",
                );
                for (i, x) in lines.iter().enumerate() {
                    is.finite(*x, format!("transmit.line_centers_mm[{i}]"));
                }
            }
        }

        let r = &self.reconstruction;
        is.positive(r.f_number, "reconstruction.f_number");
        is.positive(r.epsilon, "reconstruction.epsilon");
        is.positive(r.dynamic_range_db, "reconstruction.dynamic_range_db");
        for (name, v) in [("dx_mm", r.grid.dx_mm), ("dz_mm", r.grid.dz_mm)] {
            if let Some(v) = v {
                is.positive(v, &format!("reconstruction.grid.{name}"));
            }
        }
        for (name, v) in [("nx", r.grid.nx), ("nz", r.grid.nz)] {
            is.check(
                v != Some(0),
                format!("reconstruction.grid.{name}"),
                "must be at least 1",
            );
        }

        // targets must sit inside the reconstruction grid
        if is.0.is_empty() {
            match self.pixel_grid() {
                Ok(grid) => {
                    let (x0, x1) = (grid.x(0), grid.x(grid.nx - 1));
                    let (z0, z1) = (grid.z(0), grid.z(grid.nz - 1));
                    for (i, t) in self.targets.iter().enumerate() {
                        let (x, z) = (t.x_mm * MM, t.z_mm * MM);
                        is.check(
                            x >= x0 - grid.dx / 2.0 && x <= x1 + grid.dx / 2.0,
                            format!("targets[{i}].x_mm"),
                            format!(
                                "{} mm is outside the grid [{:.3}, {:.3}] mm",
                                t.x_mm,
                                x0 / MM,
                                x1 / MM
                            ),
                        );
                        is.check(
                            z >= z0 - grid.dz / 2.0 && z <= z1 + grid.dz / 2.0,
                            format!("targets[{i}].z_mm"),
                            format!(
                                "{} mm is outside the grid [{:.3}, {:.3}] mm",
                                t.z_mm,
                                z0 / MM,
                                z1 / MM
                            ),
                        );
                        is.check(
                            t.signal_half_width_mm > 0.0 && t.signal_half_depth_mm > 0.0,
                            format!("targets[{i}]"),
                            "signal half sizes must be positive",
                        );
                    }
                }
                Err(e) => is.check(false, "reconstruction.grid", e.to_string()),
            }
        }
        let mut labels: Vec<&str> = self.targets.iter().map(|t| t.label.as_str()).collect();
        labels.sort_unstable();
        for w in labels.windows(2) {
            is.check(
                w[0] != w[1],
                "targets",
                format!("duplicate label `{}`", w[0]),
            );
        }

        if is.0.is_empty() {
            Ok(())
        } else {
            Err(ScenarioError { issues: is.0 })
        }
    }

    pub fn geometry(&self) -> ArrayGeometry {
        ArrayGeometry {
            num_elements: self.geometry.num_elements,
            pitch: self.geometry.pitch_mm * MM,
            center_x: self.geometry.center_x_mm * MM,
        }
    }

    pub fn medium(&self) -> Medium {
        Medium {
            sos: self.medium.sos_m_per_s,
            k_i: self.medium.k_i,
            p0: self.medium.p0,
            noise_power: self.acquisition.noise_power,
        }
    }

    pub fn pulse(&self) -> PulseSpec {
        PulseSpec {
            center_frequency: self.pulse.center_frequency_mhz * MHZ,
            num_cycles: self.pulse.num_cycles,
            sample_rate: self.pulse.sample_rate_mhz * MHZ,
            kind: match self.pulse.kind {
                PulseKindCfg::Tone => PulseKind::Tone,
                PulseKindCfg::Impulse => PulseKind::Impulse,
            },
        }
    }

    pub fn pressure_model(&self) -> PressureModel {
        PressureModel {
            decay: match self.pressure.decay {
                DecayCfg::None => Decay::None,
                DecayCfg::InverseSqrt => Decay::InverseSqrt,
                DecayCfg::Inverse => Decay::Inverse,
            },
            r_min: self.pressure.r_min_mm * MM,
            directivity: match self.pressure.directivity {
                DirectivityCfg::Omni => Directivity::Omni,
                DirectivityCfg::Cosine => Directivity::Cosine,
            },
        }
    }

    pub fn acquisition(&self) -> AcquisitionSpec {
        AcquisitionSpec {
            k: self.acquisition.k,
            noise_power: self.acquisition.noise_power,
            common_mode_amplitude: self.acquisition.common_mode_amplitude,
            rf_gain: self.acquisition.rf_gain,
        }
    }

    /// Default grid over the aperture down to `max_depth_mm`, with any overrides applied.
    pub fn pixel_grid(&self) -> ae_core::Result<PixelGrid> {
        let base = default_pixel_grid(
            &self.geometry(),
            &self.medium(),
            &self.pulse(),
            self.max_depth_mm * MM,
        )?;
        let o = &self.reconstruction.grid;
        PixelGrid::new(
            Point::new(
                o.origin_x_mm.map_or(base.origin.x, |v| v * MM),
                o.origin_z_mm.map_or(base.origin.z, |v| v * MM),
            ),
            o.dx_mm.map_or(base.dx, |v| v * MM),
            o.dz_mm.map_or(base.dz, |v| v * MM),
            o.nx.unwrap_or(base.nx),
            o.nz.unwrap_or(base.nz),
        )
    }

    pub fn wavelength(&self) -> f64 {
        wavelength(&self.medium(), &self.pulse())
    }

    pub fn setup(&self) -> ae_core::Result<SimulationSetup> {
        let grid = self.pixel_grid()?;
        Ok(SimulationSetup {
            geometry: self.geometry(),
            medium: self.medium(),
            pulse: self.pulse(),
            model: self.pressure_model(),
            acquisition: self.acquisition(),
            max_depth: (self.max_depth_mm * MM).max(grid.z(grid.nz - 1)),
        })
    }

    pub fn events(&self) -> ae_core::Result<Vec<TransmitEvent>> {
        let geometry = self.geometry();
        match &self.transmit {
            TransmitCfg::Sa => Ok(ae_core::forward::single_element_sequence(&geometry)),
            TransmitCfg::Fus {
                focal_depth_mm,
                line_centers_mm,
            } => {
                let lines: Vec<f64> = match line_centers_mm {
                    Some(l) => l.iter().map(|x| x * MM).collect(),
                    None => {
                        let grid = self.pixel_grid()?;
                        (0..grid.nx).map(|ix| grid.x(ix)).collect()
                    }
                };
                ae_core::forward::focused_sequence(
                    &geometry,
                    &self.medium(),
                    focal_depth_mm * MM,
                    &lines,
                )
            }
        }
    }

    /// Rasterises the source description. `base_dir` resolves a relative field file.
    pub fn s_field(&self, base_dir: &Path) -> anyhow::Result<SFieldGrid> {
        let s = &self.s_field;
        let (dx, dz) = (s.dx_mm * MM, s.dz_mm * MM);
        if let Some(file) = &s.file {
            let path = base_dir.join(&file.path);
            let text = std::fs::read_to_string(&path).map_err(|e| {
                anyhow::anyhow!("s_field.file.path: reading {}: {e}", path.display())
            })?;
            let values =
                parse_field_csv(&text).map_err(|e| anyhow::anyhow!("s_field.file.path: {e}"))?;
            let origin = Point::new(file.origin_x_mm * MM, file.origin_z_mm * MM);
            return Ok(SFieldGrid::new(origin, dx, dz, values)?);
        }
        rasterize(&s.points, &s.discs, dx, dz)
    }

    pub fn targets(&self) -> Vec<TargetSpec> {
        self.targets
            .iter()
            .map(|t| {
                let position = Point::new(t.x_mm * MM, t.z_mm * MM);
                TargetSpec {
                    label: t.label.clone(),
                    position,
                    signal_roi: Roi::around(
                        position,
                        t.signal_half_width_mm * MM,
                        t.signal_half_depth_mm * MM,
                    ),
                    // an inverted region selects no pixels and yields a per-row error
                    noise_roi: t.noise_roi.as_ref().map_or(
                        Roi {
                            x_min: 1.0,
                            x_max: -1.0,
                            z_min: 1.0,
                            z_max: -1.0,
                        },
                        RoiCfg::to_roi,
                    ),
                    group: t.group.clone(),
                }
            })
            .collect()
    }

    /// Moves every source, target and noise region by `dz_mm`
    /// (the phantom is moved relative to the probe; the focus stays put).
    pub fn shifted(&self, dz_mm: f64) -> Scenario {
        let mut s = self.clone();
        for p in &mut s.s_field.points {
            p.z_mm += dz_mm;
        }
        for d in &mut s.s_field.discs {
            d.z_mm += dz_mm;
        }
        if let Some(f) = &mut s.s_field.file {
            f.origin_z_mm += dz_mm;
        }
        for t in &mut s.targets {
            t.z_mm += dz_mm;
            if let Some(r) = &mut t.noise_roi {
                r.z_min_mm += dz_mm;
                r.z_max_mm += dz_mm;
            }
        }
        s
    }
}

fn parse_field_csv(text: &str) -> Result<Array2<f64>, String> {
    let rows: Vec<Vec<f64>> = text
        .lines()
        .filter(|l| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .enumerate()
        .map(|(i, l)| {
            l.split(',')
                .map(|v| v.trim().parse::<f64>().map_err(|e| format!("row {i}: {e}")))
                .collect()
        })
        .collect::<Result<_, _>>()?;
    let nz = rows.len();
    let nx = rows.first().map_or(0, Vec::len);
    if nz == 0 || nx == 0 {
        return Err("empty field".into());
    }
    if rows.iter().any(|r| r.len() != nx) {
        return Err("rows have different lengths".into());
    }
    Ok(Array2::from_shape_fn((nx, nz), |(ix, iz)| rows[iz][ix]))
}

/// Points go to their nearest cell as `amplitude / cell_area`; discs set every cell
/// whose centre lies inside them. The grid is aligned to multiples of the spacing.
fn rasterize(
    points: &[PointCfg],
    discs: &[DiscCfg],
    dx: f64,
    dz: f64,
) -> anyhow::Result<SFieldGrid> {
    let mut xs: Vec<(f64, f64)> = points.iter().map(|p| (p.x_mm * MM, p.x_mm * MM)).collect();
    let mut zs: Vec<(f64, f64)> = points.iter().map(|p| (p.z_mm * MM, p.z_mm * MM)).collect();
    for d in discs {
        let (x, z, r) = (d.x_mm * MM, d.z_mm * MM, d.radius_mm * MM);
        xs.push((x - r, x + r));
        zs.push((z - r, z + r));
    }
    if xs.is_empty() {
        // sham: a single empty cell
        return Ok(SFieldGrid::zeros(Point::new(0.0, dz), dx, dz, 1, 1)?);
    }
    let x_lo = xs.iter().map(|v| v.0).fold(f64::INFINITY, f64::min);
    let x_hi = xs.iter().map(|v| v.1).fold(f64::NEG_INFINITY, f64::max);
    let z_lo = zs.iter().map(|v| v.0).fold(f64::INFINITY, f64::min);
    let z_hi = zs.iter().map(|v| v.1).fold(f64::NEG_INFINITY, f64::max);
    let ix0 = (x_lo / dx).floor() as i64 - 1;
    let iz0 = (z_lo / dz).floor() as i64 - 1;
    let nx = ((x_hi / dx).ceil() as i64 + 1 - ix0 + 1) as usize;
    let nz = ((z_hi / dz).ceil() as i64 + 1 - iz0 + 1) as usize;
    let origin = Point::new(ix0 as f64 * dx, iz0 as f64 * dz);
    let mut field = SFieldGrid::zeros(origin, dx, dz, nx, nz)?;
    let area = dx * dz;
    for p in points {
        let ix = ((p.x_mm * MM - origin.x) / dx).round() as usize;
        let iz = ((p.z_mm * MM - origin.z) / dz).round() as usize;
        field.values[[ix, iz]] += p.amplitude / area;
    }
    for d in discs {
        let c = Point::new(d.x_mm * MM, d.z_mm * MM);
        let r = d.radius_mm * MM;
        for ix in 0..nx {
            for iz in 0..nz {
                if field.position(ix, iz).distance(&c) <= r {
                    field.values[[ix, iz]] += d.amplitude / (MM * MM);
                }
            }
        }
    }
    Ok(field)
}
