use ae_core::coherence::coherence_factor;
use ae_core::domain::wavelength;
use ae_core::forward::{simulate_dataset, single_element_sequence};
use ae_core::io::{decode, encode};
use ae_core::metrics::peak_pixel;
use ae_core::reconstruct::{das_sa, envelope};
use ae_core::{
    AcquisitionSpec, ApertureSamples, ArrayGeometry, Medium, PixelGrid, Point, PressureModel,
    PulseSpec, Roi, SFieldGrid, SimulationSetup,
};
use ndarray::Array2;
use proptest::prelude::*;

const MM: f64 = 1e-3;

fn setup(num_elements: usize, max_depth: f64, acquisition: AcquisitionSpec) -> SimulationSetup {
    SimulationSetup {
        geometry: ArrayGeometry::new(num_elements, 0.315e-3).unwrap(),
        medium: Medium::water(),
        pulse: PulseSpec::tone(2e6, 1.0, 20e6).unwrap(),
        model: PressureModel::default(),
        acquisition,
        max_depth,
    }
}

fn field(points: &[(f64, f64, f64)]) -> SFieldGrid {
    let (dx, dz) = (0.1 * MM, 0.1 * MM);
    let origin = Point::new(-8.0 * MM, 5.0 * MM);
    let mut values = Array2::zeros((161, 301));
    for &(x, z, a) in points {
        let ix = ((x - origin.x) / dx).round() as usize;
        let iz = ((z - origin.z) / dz).round() as usize;
        values[[ix, iz]] += a;
    }
    SFieldGrid::new(origin, dx, dz, values).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn noiseless_forward_model_is_linear(
        x1 in -4.0f64..4.0, z1 in 8.0f64..24.0,
        x2 in -4.0f64..4.0, z2 in 8.0f64..24.0,
        a in -3.0f64..3.0, b in -3.0f64..3.0,
    ) {
        let s = setup(8, 30.0 * MM, AcquisitionSpec::noiseless());
        let events = single_element_sequence(&s.geometry);
        let one = simulate_dataset(&field(&[(x1 * MM, z1 * MM, 1.0)]), &events, &s, 0).unwrap();
        let two = simulate_dataset(&field(&[(x2 * MM, z2 * MM, 1.0)]), &events, &s, 0).unwrap();
        let both = simulate_dataset(&field(&[(x1 * MM, z1 * MM, a), (x2 * MM, z2 * MM, b)]), &events, &s, 0).unwrap();
        let scale = one.channels.iter().chain(two.channels.iter()).fold(0.0f32, |m, v| m.max(v.abs())) as f64;
        for ((p, q), r) in one.channels.iter().zip(two.channels.iter()).zip(both.channels.iter()) {
            let expected = a * *p as f64 + b * *q as f64;
            prop_assert!((expected - *r as f64).abs() <= 1e-5 * scale.max(1e-30) * (a.abs() + b.abs() + 1.0));
        }
    }

    #[test]
    fn sa_localises_a_point_within_half_a_wavelength(x in -6.0f64..6.0, z in 8.0f64..28.0) {
        let s = setup(64, 32.0 * MM, AcquisitionSpec::noiseless());
        let events = single_element_sequence(&s.geometry);
        let ds = simulate_dataset(&field(&[(x * MM, z * MM, 1.0)]), &events, &s, 0).unwrap();
        let lambda = wavelength(&s.medium, &s.pulse);
        let grid = PixelGrid::new(Point::new(-8.0 * MM, 6.0 * MM), 0.1 * MM, 0.1 * MM, 161, 241).unwrap();
        let (img, _) = das_sa(&ds, &grid, 1.5, None).unwrap();
        let env = envelope(&img).unwrap();
        let all = Roi { x_min: -1.0, x_max: 1.0, z_min: -1.0, z_max: 1.0 };
        let peak = peak_pixel(env.envelope.as_ref().unwrap(), &grid, &all).unwrap();
        // the source itself sits on the 0.1 mm s-field lattice
        let sx = (x * 10.0).round() / 10.0 * MM;
        let sz = (z * 10.0).round() / 10.0 * MM;
        prop_assert!((peak.x - sx).hypot(peak.z - sz) <= lambda / 2.0, "peak ({}, {})", peak.x, peak.z);
    }

    #[test]
    fn channel_files_round_trip(seed in any::<u64>(), k in 1u32..64, np in 0.0f64..5.0) {
        let s = setup(4, 12.0 * MM, AcquisitionSpec { k, noise_power: np, ..Default::default() });
        let events = single_element_sequence(&s.geometry);
        let ds = simulate_dataset(&field(&[(0.0, 10.0 * MM, 1.0)]), &events, &s, seed).unwrap();
        let back = decode(&encode(&ds).unwrap()).unwrap();
        prop_assert_eq!(back, ds);
    }

    #[test]
    fn coherence_is_scale_and_order_invariant(
        v in prop::collection::vec(-1.0f64..1.0, 2..48),
        scale in 0.01f64..100.0,
        rot in 0usize..48,
    ) {
        prop_assume!(v.iter().any(|x| *x != 0.0));
        let mut rotated = v.clone();
        rotated.rotate_left(rot % v.len());
        let scaled: Vec<f64> = v.iter().map(|x| x * scale).collect();
        let cf = |vectors: &[&Vec<f64>]| {
            let grid = PixelGrid::new(Point::new(0.0, MM), 1e-4, 1e-4, 1, vectors.len()).unwrap();
            let mut offsets = vec![0];
            let mut samples = Vec::new();
            for v in vectors {
                samples.extend_from_slice(v);
                offsets.push(samples.len());
            }
            let valid = vectors.iter().map(|v| v.len() as u16).collect();
            coherence_factor(&ApertureSamples { grid, offsets, samples, valid, window_len: 0, windows: vec![] })
                .values
                .iter()
                .copied()
                .collect::<Vec<_>>()
        };
        let c = cf(&[&v, &rotated, &scaled]);
        prop_assert!((c[0] - c[1]).abs() < 1e-12);
        prop_assert!((c[0] - c[2]).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&c[0]));
    }
}

#[test]
fn differential_acquisition_cancels_common_mode_and_keeps_polarity() {
    let quiet = setup(4, 20.0 * MM, AcquisitionSpec::noiseless());
    let hum = setup(
        4,
        20.0 * MM,
        AcquisitionSpec {
            common_mode_amplitude: 0.25,
            ..Default::default()
        },
    );
    let events = single_element_sequence(&quiet.geometry);
    let pos = simulate_dataset(&field(&[(0.0, 15.0 * MM, 1.0)]), &events, &quiet, 0).unwrap();
    let neg = simulate_dataset(&field(&[(0.0, 15.0 * MM, -1.0)]), &events, &quiet, 0).unwrap();
    let with_hum = simulate_dataset(&field(&[(0.0, 15.0 * MM, 1.0)]), &events, &hum, 0).unwrap();
    assert_eq!(pos.channels, neg.channels.mapv(|v| -v));
    // the interferer's samples are not dyadic, so cancellation holds to rounding only
    let peak = pos.channels.iter().fold(0.0f32, |m, v| m.max(v.abs()));
    assert!(peak > 0.0);
    for (a, b) in pos.channels.iter().zip(with_hum.channels.iter()) {
        assert!((a - b).abs() <= 1e-6 * peak, "{a} vs {b}");
    }
}
