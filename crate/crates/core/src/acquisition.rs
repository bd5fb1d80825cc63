//! Receive-side signal conditioning: averaged thermal noise, common-mode
//! injection, differential subtraction and amplitude-preserving matched filtering.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use std::f64::consts::PI;

use crate::error::{AeError, Result};

/// How each channel is acquired.
#[derive(Debug, Clone, PartialEq)]
pub struct AcquisitionSpec {
    /// Number of repeated transmissions averaged per channel.
    pub k: u32,
    /// Per-sample noise variance of a single (unaveraged) acquisition [V^2].
    pub noise_power: f64,
    /// Amplitude of the deterministic interferer present in both polarities [V].
    pub common_mode_amplitude: f64,
    /// Lumped analog gain.
    pub rf_gain: f64,
}

impl Default for AcquisitionSpec {
    fn default() -> Self {
        AcquisitionSpec {
            k: 1,
            noise_power: 0.0,
            common_mode_amplitude: 0.0,
            rf_gain: 1.0,
        }
    }
}

impl AcquisitionSpec {
    pub fn noiseless() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(AeError::param("k", "must be at least 1"));
        }
        if !(self.noise_power >= 0.0) || !self.noise_power.is_finite() {
            return Err(AeError::param("noise_power", "must be non-negative"));
        }
        if !self.common_mode_amplitude.is_finite() || !self.rf_gain.is_finite() {
            return Err(AeError::param(
                "common_mode_amplitude/rf_gain",
                "must be finite",
            ));
        }
        Ok(())
    }

    /// Noise variance left after averaging `k` repetitions.
    pub fn averaged_noise_power(&self) -> f64 {
        self.noise_power / self.k as f64
    }
}

/// Adds zero-mean Gaussian noise of variance `noise_power / k` to every sample.
///
/// This is the closed form of averaging `k` independent noisy repetitions of a
/// deterministic trace; one draw per sample instead of `k`.
pub fn add_thermal_noise<R: Rng + ?Sized>(
    trace: &[f64],
    noise_power: f64,
    k: u32,
    rng: &mut R,
) -> Vec<f64> {
    let mut out = trace.to_vec();
    add_thermal_noise_in_place(&mut out, noise_power, k, rng);
    out
}

pub fn add_thermal_noise_in_place<R: Rng + ?Sized>(
    trace: &mut [f64],
    noise_power: f64,
    k: u32,
    rng: &mut R,
) {
    if noise_power <= 0.0 {
        return;
    }
    let sigma = (noise_power / k.max(1) as f64).sqrt();
    let normal = Normal::new(0.0, sigma).expect("finite sigma");
    for v in trace.iter_mut() {
        *v += normal.sample(rng);
    }
}

/// Deterministic interferer identical in both polarities: a 100 kHz sinusoid plus
/// an offset, sampled at `sample_rate`.
pub fn common_mode_trace(len: usize, amplitude: f64, sample_rate: f64) -> Vec<f64> {
    if amplitude == 0.0 {
        return vec![0.0; len];
    }
    (0..len)
        .map(|n| {
            let t = n as f64 / sample_rate;
            amplitude * (0.5 + (2.0 * PI * 100e3 * t).sin())
        })
        .collect()
}

/// `v_plus - v_minus`.
pub fn differential_subtract(v_plus: &[f64], v_minus: &[f64]) -> Result<Vec<f64>> {
    if v_plus.len() != v_minus.len() {
        return Err(AeError::DimensionMismatch(format!(
            "differential inputs have lengths {} and {}",
            v_plus.len(),
            v_minus.len()
        )));
    }
    Ok(v_plus.iter().zip(v_minus).map(|(a, b)| a - b).collect())
}

/// Zero-phase cross-correlation with `template`, rescaled so a trace equal to the
/// template comes out with the template's own peak amplitude.
///
/// Output sample `n` is `scale * sum_j trace[n + j - c] * template[j]` where `c` is
/// the template centre, so a pulse centred at sample `n0` stays centred at `n0`.
pub fn matched_filter(trace: &[f64], template: &[f64]) -> Result<Vec<f64>> {
    let energy: f64 = template.iter().map(|v| v * v).sum();
    let peak = template.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if energy == 0.0 || !energy.is_finite() {
        return Err(AeError::ZeroTemplate);
    }
    let scale = peak / energy;
    let c = (template.len() / 2) as isize;
    let n = trace.len() as isize;
    let out = (0..n)
        .map(|i| {
            let mut acc = 0.0;
            for (j, h) in template.iter().enumerate() {
                let m = i + j as isize - c;
                if m >= 0 && m < n {
                    acc += trace[m as usize] * h;
                }
            }
            acc * scale
        })
        .collect();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn variance(v: &[f64]) -> f64 {
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n
    }

    #[test]
    fn zero_noise_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = vec![1.0, -2.5, 3.25];
        assert_eq!(add_thermal_noise(&x, 0.0, 4, &mut rng), x);
    }

    #[test]
    fn noise_variance_unit_and_averaged() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let zeros = vec![0.0; 1_000_000];
        let v = variance(&add_thermal_noise(&zeros, 1.0, 1, &mut rng));
        assert!((v - 1.0).abs() < 0.01, "variance {v}");
        let v = variance(&add_thermal_noise(&zeros, 1.0, 16, &mut rng));
        assert!((v - 0.0625).abs() < 0.002, "variance {v}");
    }

    /// The analytic 1/k draw against explicitly averaging k independent draws.
    #[test]
    fn analytic_averaging_matches_explicit_averaging() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 100_000;
        for k in [1u32, 4, 16] {
            let zeros = vec![0.0; n];
            let mut acc = vec![0.0; n];
            for _ in 0..k {
                let draw = add_thermal_noise(&zeros, 2.0, 1, &mut rng);
                for (a, d) in acc.iter_mut().zip(draw) {
                    *a += d / k as f64;
                }
            }
            let explicit = variance(&acc);
            let analytic = variance(&add_thermal_noise(&zeros, 2.0, k, &mut rng));
            let expected = 2.0 / k as f64;
            assert!(
                (explicit / expected - 1.0).abs() < 0.03,
                "k={k} explicit {explicit}"
            );
            assert!(
                (analytic / expected - 1.0).abs() < 0.03,
                "k={k} analytic {analytic}"
            );
        }
    }

    #[test]
    fn differential_cancels_common_mode() {
        // dyadic values: every addition is exact, so cancellation is bitwise
        let s = [0.5, -0.25, 0.125, 0.0];
        let cm = [1.0, 2.0, -4.0, 0.75];
        let plus: Vec<f64> = s.iter().zip(&cm).map(|(a, c)| a + c).collect();
        let minus: Vec<f64> = s.iter().zip(&cm).map(|(a, c)| -a + c).collect();
        let d = differential_subtract(&plus, &minus).unwrap();
        assert_eq!(d, vec![1.0, -0.5, 0.25, 0.0]);

        let same = [0.3, 0.7, -1.1];
        assert_eq!(differential_subtract(&same, &same).unwrap(), vec![0.0; 3]);
        assert!(differential_subtract(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn differential_matches_elementwise_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = add_thermal_noise(&[0.0; 64], 1.0, 1, &mut rng);
        let b = add_thermal_noise(&[0.0; 64], 1.0, 1, &mut rng);
        let d = differential_subtract(&a, &b).unwrap();
        for i in 0..64 {
            assert_eq!(d[i], a[i] - b[i]);
        }
    }

    #[test]
    fn common_mode_cancellation_general_values() {
        let cm = common_mode_trace(200, 3.7, 20e6);
        let s: Vec<f64> = (0..200).map(|i| (i as f64 * 0.37).sin() * 1e-3).collect();
        let plus: Vec<f64> = s.iter().zip(&cm).map(|(a, c)| a + c).collect();
        let minus: Vec<f64> = s.iter().zip(&cm).map(|(a, c)| -a + c).collect();
        let d = differential_subtract(&plus, &minus).unwrap();
        for i in 0..200 {
            assert!((d[i] - 2.0 * s[i]).abs() <= 4.0 * f64::EPSILON * 3.7 * 1.5);
        }
    }

    #[test]
    fn matched_filter_preserves_peak_and_alignment() {
        // even template so the peak sample and the centre sample coincide
        let template = [0.1, 0.5, 1.0, 0.5, 0.1];
        let out = matched_filter(&template, &template).unwrap();
        let (imax, vmax) = argmax(&out);
        assert_eq!(imax, 2);
        assert_relative_eq!(vmax, 1.0, epsilon = 1e-12);

        let mut delayed = vec![0.0; 20];
        delayed[7..12].copy_from_slice(&template);
        let out = matched_filter(&delayed, &template).unwrap();
        let (imax, vmax) = argmax(&out);
        assert_eq!(imax, 9);
        assert_relative_eq!(vmax, 1.0, epsilon = 1e-12);

        assert_eq!(matched_filter(&[0.0; 8], &template).unwrap(), vec![0.0; 8]);
        assert_eq!(
            matched_filter(&[1.0; 8], &[0.0; 3]),
            Err(AeError::ZeroTemplate)
        );
    }

    #[test]
    fn matched_filter_odd_template_peaks_at_centre() {
        let pulse = crate::domain::PulseSpec::tone(2e6, 1.0, 40e6).unwrap();
        let w = pulse.waveform();
        let mut trace = vec![0.0; 100];
        trace[30..30 + w.len()].copy_from_slice(&w);
        let out = matched_filter(&trace, &w).unwrap();
        let (imax, vmax) = argmax(&out);
        let peak = w.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert_eq!(imax, 30 + pulse.center_index());
        assert_relative_eq!(vmax, peak, max_relative = 1e-12);
    }

    #[test]
    fn matched_filter_matches_convolution_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = add_thermal_noise(&[0.0; 50], 1.0, 1, &mut rng);
        let h = add_thermal_noise(&[0.0; 7], 1.0, 1, &mut rng);
        let out = matched_filter(&x, &h).unwrap();
        // correlation = convolution with the reversed template
        let scale =
            h.iter().fold(0.0f64, |m, v| m.max(v.abs())) / h.iter().map(|v| v * v).sum::<f64>();
        let rev: Vec<f64> = h.iter().rev().cloned().collect();
        let full: Vec<f64> = (0..x.len() + rev.len() - 1)
            .map(|n| {
                (0..rev.len())
                    .filter(|&j| n >= j && n - j < x.len())
                    .map(|j| x[n - j] * rev[j])
                    .sum::<f64>()
            })
            .collect();
        for i in 0..x.len() {
            assert_relative_eq!(out[i], full[i + 3] * scale, epsilon = 1e-12);
        }
    }

    #[test]
    fn matched_filter_linear_and_shift_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let h = [0.2, -0.7, 1.0, -0.3, 0.1];
        let a = add_thermal_noise(&[0.0; 64], 1.0, 1, &mut rng);
        let b = add_thermal_noise(&[0.0; 64], 1.0, 1, &mut rng);
        let combo: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 2.0 * x - 0.5 * y).collect();
        let (fa, fb, fc) = (
            matched_filter(&a, &h).unwrap(),
            matched_filter(&b, &h).unwrap(),
            matched_filter(&combo, &h).unwrap(),
        );
        for i in 0..64 {
            assert_relative_eq!(fc[i], 2.0 * fa[i] - 0.5 * fb[i], epsilon = 1e-12);
        }
        let mut shifted = vec![0.0; 64];
        shifted[5..].copy_from_slice(&a[..59]);
        let fs = matched_filter(&shifted, &h).unwrap();
        for i in 10..60 {
            assert_relative_eq!(fs[i], fa[i - 5], epsilon = 1e-12);
        }
    }

    fn argmax(v: &[f64]) -> (usize, f64) {
        v.iter()
            .cloned()
            .enumerate()
            .fold((0, f64::MIN), |b, (i, x)| if x > b.1 { (i, x) } else { b })
    }
}
