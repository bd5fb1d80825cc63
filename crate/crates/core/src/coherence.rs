//! Coherence factor maps over the SA aperture and beam-amplitude correction.

use ndarray::Array2;

use crate::domain::{ArrayGeometry, PixelGrid};
use crate::error::{AeError, Result};
use crate::forward::{element_beam_amplitude, PressureModel};
use crate::reconstruct::{envelope, sub_aperture_elements, ApertureSamples, BeamformedImage};

pub const DEFAULT_EPSILON: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoherenceKind {
    Cf,
    Cfpl,
}

/// Per-pixel coherence in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoherenceMap {
    pub grid: PixelGrid,
    pub values: Array2<f64>,
    pub kind: CoherenceKind,
    /// Window length for CFPL.
    pub pulse_samples: Option<usize>,
}

impl CoherenceMap {
    pub fn mean(&self) -> f64 {
        self.values.mean().unwrap_or(0.0)
    }
}

/// `|sum s|^2 / (n * sum |s|^2)`, zero when the energy is zero.
#[inline]
fn cf_of(values: impl Iterator<Item = f64>, n: u16) -> f64 {
    let (mut coherent, mut energy) = (0.0, 0.0);
    let mut first = None;
    let mut uniform = true;
    let mut count = 0usize;
    for v in values {
        coherent += v;
        energy += v * v;
        count += 1;
        match first {
            None => first = Some(v),
            Some(f) => uniform &= v == f,
        }
    }
    if energy == 0.0 || n == 0 {
        return 0.0;
    }
    // Rounding in the two sums leaves a perfectly coherent vector a few ulp either
    // side of one, so that case is settled exactly.
    if uniform && count == n as usize {
        return 1.0;
    }
    (coherent * coherent / energy / n as f64).min(1.0)
}

/// Coherence factor from the delayed aperture samples. The normalisation uses the
/// number of in-record samples actually available at each pixel.
pub fn coherence_factor(samples: &ApertureSamples) -> CoherenceMap {
    let grid = samples.grid.clone();
    let values = Array2::from_shape_fn(grid.dim(), |(ix, iz)| {
        let p = samples.pixel_index(ix, iz);
        cf_of(samples.pixel(p).iter().copied(), samples.valid[p])
    });
    CoherenceMap {
        grid,
        values,
        kind: CoherenceKind::Cf,
        pulse_samples: None,
    }
}

/// Pulse-length coherence factor: the CF at each of the `P` window instants,
/// averaged over the window.
pub fn coherence_factor_pl(samples: &ApertureSamples) -> Result<CoherenceMap> {
    let p_len = samples.window_len;
    if p_len == 0 {
        return Err(AeError::param(
            "window_len",
            "aperture samples were recorded without pulse windows",
        ));
    }
    let grid = samples.grid.clone();
    let values = Array2::from_shape_fn(grid.dim(), |(ix, iz)| {
        let p = samples.pixel_index(ix, iz);
        let w = samples.window(p).expect("window_len > 0");
        let n = samples.valid[p];
        let total: f64 = (0..p_len)
            .map(|j| cf_of(w.iter().skip(j).step_by(p_len).copied(), n))
            .sum();
        total / p_len as f64
    });
    Ok(CoherenceMap {
        grid,
        values,
        kind: CoherenceKind::Cfpl,
        pulse_samples: Some(p_len),
    })
}

fn recompute_envelope(image: BeamformedImage, had_envelope: bool) -> Result<BeamformedImage> {
    if had_envelope {
        envelope(&image)
    } else {
        Ok(image)
    }
}

/// Multiplies pre-envelope values by the coherence map; the envelope, if present,
/// is recomputed from the weighted values.
pub fn apply_weighting(image: &BeamformedImage, map: &CoherenceMap) -> Result<BeamformedImage> {
    if image.grid != map.grid {
        return Err(AeError::DimensionMismatch(
            "coherence map grid differs from image grid".into(),
        ));
    }
    let weighted = image.with_values(&image.values * &map.values);
    recompute_envelope(weighted, image.envelope.is_some())
}

/// Synthesised on-target beam amplitude per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamMap {
    pub grid: PixelGrid,
    pub values: Array2<f64>,
}

/// Sum of the single-element beam amplitudes over each pixel's sub-aperture.
/// With no decay this is the local (edge-truncated) element count.
pub fn effective_beam_map(
    geometry: &ArrayGeometry,
    grid: &PixelGrid,
    f_number: f64,
    model: &PressureModel,
) -> BeamMap {
    let values = Array2::from_shape_fn(grid.dim(), |(ix, iz)| {
        let px = grid.point(ix, iz);
        sub_aperture_elements(px, geometry, f_number)
            .map(|i| element_beam_amplitude(geometry, i, px, model))
            .sum()
    });
    BeamMap {
        grid: grid.clone(),
        values,
    }
}

/// Divides the image by the beam map, clamping the divisor at `epsilon * max(beam)`.
pub fn amplitude_correct(
    image: &BeamformedImage,
    beam: &BeamMap,
    epsilon: f64,
) -> Result<BeamformedImage> {
    if image.grid != beam.grid {
        return Err(AeError::DimensionMismatch(
            "beam map grid differs from image grid".into(),
        ));
    }
    if !(epsilon > 0.0) {
        return Err(AeError::param("epsilon", "must be positive"));
    }
    let peak = beam.values.iter().cloned().fold(0.0, f64::max);
    if !(peak > 0.0) {
        return Err(AeError::param("beam_map", "beam map has no positive value"));
    }
    let floor = epsilon * peak;
    let mut values = image.values.clone();
    ndarray::Zip::from(&mut values)
        .and(&beam.values)
        .for_each(|v, &b| *v /= b.max(floor));
    recompute_envelope(image.with_values(values), image.envelope.is_some())
}
