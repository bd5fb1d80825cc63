//! Forward model for acoustoelectric channel data.
//!
//! Each transmit event fires a set of elements with per-element delays. A source
//! cell at `x` with value `s` contributes `-K_I P0 s b_i(x) a(t - tau_i(x)) dA`
//! for every active element `i`, with `tau_i(x) = delay_i + |x - x_i| / c`.
//! The received voltage is the superposition over cells and elements.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::acquisition::{
    add_thermal_noise_in_place, common_mode_trace, differential_subtract, matched_filter,
    AcquisitionSpec,
};
use crate::domain::{ArrayGeometry, Medium, Point, PulseSpec, SFieldGrid};
use crate::error::{AeError, Result};

/// One transmission: which elements fire and when.
#[derive(Debug, Clone, PartialEq)]
pub struct TransmitEvent {
    /// Per-element transmit delay [s]; `None` marks an inactive element.
    pub delays: Vec<Option<f64>>,
    pub label: String,
}

impl TransmitEvent {
    pub fn validate(&self) -> Result<()> {
        let mut any = false;
        for d in self.delays.iter().flatten() {
            any = true;
            if !(*d >= 0.0) || !d.is_finite() {
                return Err(AeError::param(
                    "delays",
                    "active delays must be finite and >= 0",
                ));
            }
        }
        if !any {
            return Err(AeError::InvalidEvent);
        }
        Ok(())
    }

    pub fn active_mask(&self) -> Vec<bool> {
        self.delays.iter().map(Option::is_some).collect()
    }

    pub fn active(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.delays
            .iter()
            .enumerate()
            .filter_map(|(i, d)| d.map(|d| (i, d)))
    }

    pub fn num_active(&self) -> usize {
        self.delays.iter().filter(|d| d.is_some()).count()
    }

    /// The element index if exactly one element fires.
    pub fn single_element(&self) -> Option<usize> {
        let mut it = self.active();
        match (it.next(), it.next()) {
            (Some((i, _)), None) => Some(i),
            _ => None,
        }
    }

    pub fn max_delay(&self) -> f64 {
        self.active().map(|(_, d)| d).fold(0.0, f64::max)
    }

    /// Lateral line centre of a focused event: the vertex of a parabola through the
    /// largest delay and its neighbours (shifted inward at the array edges). Delays
    /// peak at the element nearest the focus, so this recovers line centres that fall
    /// between elements.
    pub fn line_center(&self, geometry: &ArrayGeometry) -> Option<f64> {
        let (imax, _) = self
            .active()
            .fold(None, |best: Option<(usize, f64)>, (i, d)| match best {
                Some((_, b)) if b >= d => best,
                _ => Some((i, d)),
            })?;
        let snapped = Some(geometry.element_x(imax));
        if self.delays.len() < 3 {
            return snapped;
        }
        let mid = imax.clamp(1, self.delays.len() - 2);
        let (Some(left), Some(centre), Some(right)) =
            (self.delays[mid - 1], self.delays[mid], self.delays[mid + 1])
        else {
            return snapped;
        };
        let curvature = left - 2.0 * centre + right;
        if !(curvature < 0.0) {
            return snapped;
        }
        let offset = (0.5 * (left - right) / curvature).clamp(-1.5, 1.5);
        Some(geometry.element_x(mid) + offset * geometry.pitch)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decay {
    None,
    /// Cylindrical spreading, `(r_min / r)^(1/2)`.
    InverseSqrt,
    /// Spherical spreading, `r_min / r`.
    Inverse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Directivity {
    Omni,
    Cosine,
}

/// Single-element beam amplitude model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PressureModel {
    pub decay: Decay,
    /// Distance below which the decay is clamped [m].
    pub r_min: f64,
    pub directivity: Directivity,
}

impl Default for PressureModel {
    fn default() -> Self {
        PressureModel {
            decay: Decay::None,
            r_min: 1e-3,
            directivity: Directivity::Omni,
        }
    }
}

impl PressureModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.r_min > 0.0) || !self.r_min.is_finite() {
            return Err(AeError::param("r_min", "must be positive"));
        }
        Ok(())
    }

    /// Amplitude at range `r` and lateral offset `dx` from an element (depth `z = r cos(theta)`).
    pub fn amplitude(&self, dx: f64, z: f64) -> f64 {
        let r = dx.hypot(z);
        let clamped = r.max(self.r_min);
        let decay = match self.decay {
            Decay::None => 1.0,
            Decay::InverseSqrt => (self.r_min / clamped).sqrt(),
            Decay::Inverse => self.r_min / clamped,
        };
        let dir = match self.directivity {
            Directivity::Omni => 1.0,
            Directivity::Cosine => {
                if r > 0.0 {
                    z / r
                } else {
                    1.0
                }
            }
        };
        decay * dir
    }
}

/// Travel time between two points.
pub fn time_of_flight(source: Point, target: Point, sos: f64) -> f64 {
    source.distance(&target) / sos
}

/// Beam amplitude `b_i(x)` of element `element_index` at `point`.
pub fn element_beam_amplitude(
    geometry: &ArrayGeometry,
    element_index: usize,
    point: Point,
    model: &PressureModel,
) -> f64 {
    model.amplitude(point.x - geometry.element_x(element_index), point.z)
}

/// Adds `amplitude * a(t - tau)` into `out`, where `frac_pos = (tau - t0) * fs` is the
/// pulse centre in (fractional) output samples. The waveform is linearly interpolated.
pub fn render_pulse(
    out: &mut [f64],
    waveform: &[f64],
    center: usize,
    frac_pos: f64,
    amplitude: f64,
) {
    if amplitude == 0.0 || waveform.is_empty() {
        return;
    }
    let len = waveform.len() as isize;
    let first = (frac_pos - center as f64).floor() as isize;
    let last = first + len;
    for n in first.max(0)..=last.min(out.len() as isize - 1) {
        // fractional index into the waveform
        let p = n as f64 - frac_pos + center as f64;
        let j = p.floor();
        let fr = p - j;
        let j = j as isize;
        let at = |k: isize| {
            if k >= 0 && k < len {
                waveform[k as usize]
            } else {
                0.0
            }
        };
        let v = at(j) * (1.0 - fr) + at(j + 1) * fr;
        out[n as usize] += amplitude * v;
    }
}

/// Record length for a dataset imaging down to `max_depth`:
/// `ceil((max_depth / c + max_delay) * fs) + pulse_length`.
pub fn record_length(
    max_depth: f64,
    medium: &Medium,
    pulse: &PulseSpec,
    events: &[TransmitEvent],
) -> usize {
    let max_delay = events
        .iter()
        .map(TransmitEvent::max_delay)
        .fold(0.0, f64::max);
    ((max_depth / medium.sos + max_delay) * pulse.sample_rate).ceil() as usize
        + pulse.length_samples()
}

/// Noiseless AE voltage trace of `num_samples` samples starting at `t0` for one event.
#[allow(clippy::too_many_arguments)]
pub fn simulate_channel(
    s_field: &SFieldGrid,
    event: &TransmitEvent,
    geometry: &ArrayGeometry,
    medium: &Medium,
    pulse: &PulseSpec,
    model: &PressureModel,
    num_samples: usize,
    t0: f64,
) -> Result<Vec<f64>> {
    event.validate()?;
    if event.delays.len() != geometry.num_elements {
        return Err(AeError::DimensionMismatch(format!(
            "event has {} delays for {} elements",
            event.delays.len(),
            geometry.num_elements
        )));
    }
    let waveform = pulse.waveform();
    let center = pulse.center_index();
    let fs = pulse.sample_rate;
    let gain = medium.ae_gain() * s_field.cell_area();
    let mut out = vec![0.0; num_samples];
    for (pos, s) in s_field.nonzero_cells() {
        for (i, delay) in event.active() {
            let elem = geometry.element_position(i);
            let b = element_beam_amplitude(geometry, i, pos, model);
            let tau = delay + time_of_flight(elem, pos, medium.sos);
            render_pulse(&mut out, &waveform, center, (tau - t0) * fs, gain * s * b);
        }
    }
    Ok(out)
}

/// One event per element, each firing only that element with zero delay.
pub fn single_element_sequence(geometry: &ArrayGeometry) -> Vec<TransmitEvent> {
    (0..geometry.num_elements)
        .map(|i| {
            let mut delays = vec![None; geometry.num_elements];
            delays[i] = Some(0.0);
            TransmitEvent {
                delays,
                label: format!("SA element {i}"),
            }
        })
        .collect()
}

/// Full-aperture focused transmits, one per line centre, focused at `focal_depth`.
///
/// `delay_i = (max_j d_j - d_i) / c` with `d_i` the element-to-focus distance, so
/// all wavefronts reach the focus together and the smallest delay is zero.
pub fn focused_sequence(
    geometry: &ArrayGeometry,
    medium: &Medium,
    focal_depth: f64,
    line_centers: &[f64],
) -> Result<Vec<TransmitEvent>> {
    if !(focal_depth > 0.0) {
        return Err(AeError::param("focal_depth", "must be positive"));
    }
    Ok(line_centers
        .iter()
        .enumerate()
        .map(|(j, &x_line)| {
            let focus = Point::new(x_line, focal_depth);
            let dist: Vec<f64> = (0..geometry.num_elements)
                .map(|i| geometry.element_position(i).distance(&focus))
                .collect();
            let dmax = dist.iter().cloned().fold(f64::MIN, f64::max);
            TransmitEvent {
                delays: dist.iter().map(|d| Some((dmax - d) / medium.sos)).collect(),
                label: format!("FUS line {j} x={x_line:.6e} f={focal_depth:.6e}"),
            }
        })
        .collect())
}

/// Simulated, conditioned channel data: one row per transmit event.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelDataSet {
    /// `events x samples`.
    pub channels: Array2<f32>,
    pub sample_rate: f64,
    /// Time of the first sample [s].
    pub t0: f64,
    pub events: Vec<TransmitEvent>,
    pub geometry: ArrayGeometry,
    pub medium: Medium,
    pub pulse: PulseSpec,
}

impl ChannelDataSet {
    pub fn num_events(&self) -> usize {
        self.channels.nrows()
    }

    pub fn num_samples(&self) -> usize {
        self.channels.ncols()
    }

    pub fn channel(&self, index: usize) -> ndarray::ArrayView1<'_, f32> {
        self.channels.row(index)
    }

    /// True when every event fires exactly one element.
    pub fn is_single_element(&self) -> bool {
        self.events.iter().all(|e| e.single_element().is_some())
    }

    /// True when every event fires more than one element.
    pub fn is_focused(&self) -> bool {
        self.events.iter().all(|e| e.num_active() > 1)
    }

    /// Sample `channel` at time `t` by linear interpolation; `None` outside the record.
    pub fn sample_at(&self, channel: usize, t: f64) -> Option<f64> {
        let row = self.channels.row(channel);
        interpolate(row.as_slice()?, (t - self.t0) * self.sample_rate)
    }
}

/// Linear interpolation of `trace` at fractional index `pos`; `None` outside `[0, len-1]`.
pub(crate) fn interpolate(trace: &[f32], pos: f64) -> Option<f64> {
    let last = trace.len().checked_sub(1)? as f64;
    if !(pos >= 0.0 && pos <= last) {
        return None;
    }
    let i = pos.floor() as usize;
    let fr = pos - i as f64;
    let a = trace[i] as f64;
    if fr == 0.0 {
        return Some(a);
    }
    let b = trace[i + 1] as f64;
    Some(a + (b - a) * fr)
}

/// Everything [`simulate_dataset`] needs besides the source field.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationSetup {
    pub geometry: ArrayGeometry,
    pub medium: Medium,
    pub pulse: PulseSpec,
    pub model: PressureModel,
    pub acquisition: AcquisitionSpec,
    /// Deepest point the record must cover [m].
    pub max_depth: f64,
}

/// Simulates every event and runs the acquisition chain: (+) and (-) polarity
/// acquisitions with common mode and averaged noise, differential subtraction and
/// matched filtering.
///
/// Each channel draws its noise from its own stream keyed by `(seed, event index)`,
/// so the result does not depend on scheduling or thread count.
pub fn simulate_dataset(
    s_field: &SFieldGrid,
    events: &[TransmitEvent],
    setup: &SimulationSetup,
    seed: u64,
) -> Result<ChannelDataSet> {
    let SimulationSetup {
        geometry,
        medium,
        pulse,
        model,
        acquisition,
        max_depth,
    } = setup;
    geometry.validate()?;
    medium.validate()?;
    pulse.validate()?;
    model.validate()?;
    acquisition.validate()?;
    s_field.validate()?;
    if events.is_empty() {
        return Err(AeError::param(
            "events",
            "at least one transmit event required",
        ));
    }
    if !(*max_depth > 0.0) {
        return Err(AeError::param("max_depth", "must be positive"));
    }

    let num_samples = record_length(*max_depth, medium, pulse, events);
    let template = pulse.waveform();
    let common = common_mode_trace(
        num_samples,
        acquisition.common_mode_amplitude,
        pulse.sample_rate,
    );

    let rows: Vec<Vec<f64>> = events
        .par_iter()
        .enumerate()
        .map(|(index, event)| -> Result<Vec<f64>> {
            let clean = simulate_channel(
                s_field,
                event,
                geometry,
                medium,
                pulse,
                model,
                num_samples,
                0.0,
            )?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(index as u64);
            // the (-) acquisition sees the negated source field
            let mut plus: Vec<f64> = clean
                .iter()
                .zip(&common)
                .map(|(s, c)| acquisition.rf_gain * s + c)
                .collect();
            let mut minus: Vec<f64> = clean
                .iter()
                .zip(&common)
                .map(|(s, c)| acquisition.rf_gain * -s + c)
                .collect();
            add_thermal_noise_in_place(&mut plus, acquisition.noise_power, acquisition.k, &mut rng);
            add_thermal_noise_in_place(
                &mut minus,
                acquisition.noise_power,
                acquisition.k,
                &mut rng,
            );
            let diff = differential_subtract(&plus, &minus)?;
            matched_filter(&diff, &template)
        })
        .collect::<Result<_>>()?;

    let mut channels = Array2::<f32>::zeros((events.len(), num_samples));
    for (mut dst, src) in channels.rows_mut().into_iter().zip(&rows) {
        for (d, s) in dst.iter_mut().zip(src) {
            *d = *s as f32;
        }
    }
    Ok(ChannelDataSet {
        channels,
        sample_rate: pulse.sample_rate,
        t0: 0.0,
        events: events.to_vec(),
        geometry: geometry.clone(),
        medium: medium.clone(),
        pulse: pulse.clone(),
    })
}
