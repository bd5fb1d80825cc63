//! Text and image exports for beamformed images and coherence maps.

use ndarray::Array2;
use std::fmt::Write as _;

/// Values as CSV, one row per depth sample, columns in lateral order.
pub fn to_csv(values: &Array2<f64>) -> String {
    let (nx, nz) = values.dim();
    let mut out = String::with_capacity(nx * nz * 12);
    for iz in 0..nz {
        for ix in 0..nx {
            if ix > 0 {
                out.push(',');
            }
            let _ = write!(out, "{:e}", values[[ix, iz]]);
        }
        out.push('\n');
    }
    out
}

fn pgm(nx: usize, nz: usize, pixel: impl Fn(usize, usize) -> u8) -> Vec<u8> {
    let mut out = format!("P5\n{nx} {nz}\n255\n").into_bytes();
    out.reserve(nx * nz);
    for iz in 0..nz {
        for ix in 0..nx {
            out.push(pixel(ix, iz));
        }
    }
    out
}

/// 8-bit binary PGM of an envelope, normalised to its peak and log-compressed:
/// `255 * (1 + dB / dynamic_range)` clamped to `[0, 255]`.
pub fn envelope_pgm(envelope: &Array2<f64>, dynamic_range_db: f64) -> Vec<u8> {
    let (nx, nz) = envelope.dim();
    let peak = envelope.iter().cloned().fold(0.0, f64::max);
    pgm(nx, nz, |ix, iz| {
        let v = envelope[[ix, iz]];
        if !(peak > 0.0) || !(v > 0.0) {
            return 0;
        }
        let db = 20.0 * (v / peak).log10();
        (255.0 * (1.0 + db / dynamic_range_db))
            .clamp(0.0, 255.0)
            .round() as u8
    })
}

/// 8-bit binary PGM on a linear `[0, 1]` scale.
pub fn linear_pgm(map: &Array2<f64>) -> Vec<u8> {
    let (nx, nz) = map.dim();
    pgm(nx, nz, |ix, iz| {
        (255.0 * map[[ix, iz]]).clamp(0.0, 255.0).round() as u8
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_rows_are_depths() {
        let v = Array2::from_shape_fn((3, 2), |(ix, iz)| (ix * 10 + iz) as f64);
        assert_eq!(to_csv(&v), "0e0,1e1,2e1\n1e0,1.1e1,2.1e1\n");
    }

    #[test]
    fn pgm_log_compression() {
        let mut env = Array2::zeros((4, 1));
        env[[0, 0]] = 1.0;
        env[[1, 0]] = 0.1; // -20 dB
        env[[2, 0]] = 1e-3; // -60 dB, clipped
        let img = envelope_pgm(&env, 40.0);
        let header = b"P5\n4 1\n255\n";
        assert_eq!(&img[..header.len()], header);
        assert_eq!(&img[header.len()..], &[255, 128, 0, 0]);
    }

    #[test]
    fn pgm_linear() {
        let map = Array2::from_shape_vec((3, 1), vec![0.0, 0.5, 1.2]).unwrap();
        assert_eq!(&linear_pgm(&map)[11..], &[0, 128, 255]);
    }
}
