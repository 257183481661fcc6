use std::f64::consts::PI;

use depgraph::encoders::{grid_frequency, spectral_encode_series};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Direct O(S²) DFT amplitudes `|X_k|/S` for `k = 0..=S/2`.
pub fn naive_amplitudes(x: &[f64]) -> Vec<f64> {
    let s = x.len();
    (0..=s / 2)
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for (n, v) in x.iter().enumerate() {
                let angle = -2.0 * PI * (k * n) as f64 / s as f64;
                re += v * angle.cos();
                im += v * angle.sin();
            }
            (re * re + im * im).sqrt() / s as f64
        })
        .collect()
}

/// Grid bin `b` at frequency `0.5·b/(B−1)`: DC for `b = 0`, otherwise the
/// piecewise-linear curve through the AC points `(k/S, amp_k)`, flat beyond
/// its first and last point.
pub fn oracle(x: &[f64], bins: usize, top_k: usize) -> Vec<f64> {
    let s = x.len() as f64;
    let amp = naive_amplitudes(x);
    let mut out = vec![amp[0]];
    for b in 1..top_k {
        let f = 0.5 * b as f64 / (bins - 1) as f64;
        let last = amp.len() - 1;
        let v = if f <= 1.0 / s {
            amp[1]
        } else if f >= last as f64 / s {
            amp[last]
        } else {
            let mut k = 1;
            while (k + 1) as f64 / s < f {
                k += 1;
            }
            let (f0, f1) = (k as f64 / s, (k + 1) as f64 / s);
            amp[k] + (f - f0) / (f1 - f0) * (amp[k + 1] - amp[k])
        };
        out.push(v);
    }
    out
}

pub fn matches_the_naive_oracle_for_every_length_up_to_128() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for s in 2..=128 {
        for (bins, top_k) in [(128, 24), (128, 128), (16, 7)] {
            let x: Vec<f64> = (0..s).map(|_| rng.random_range(-2.0..2.0)).collect();
            let got = spectral_encode_series(&x, bins, top_k).unwrap();
            let want = oracle(&x, bins, top_k);
            assert_eq!(got.len(), top_k);
            for (b, (g, w)) in got.iter().zip(&want).enumerate() {
                assert!((g - w).abs() < 1e-9, "S={s} B={bins} bin {b}: {g} vs {w}");
            }
        }
    }
}

pub fn matches_the_oracle_on_long_series() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for s in [200, 270, 333, 512] {
        let x: Vec<f64> = (0..s).map(|_| rng.random_range(-1.0..1.0)).collect();
        let got = spectral_encode_series(&x, 128, 128).unwrap();
        for (g, w) in got.iter().zip(oracle(&x, 128, 128)) {
            assert!((g - w).abs() < 1e-9);
        }
    }
}

pub fn constant_series_is_dc_only() {
    for s in [2, 3, 31, 270] {
        let got = spectral_encode_series(&vec![2.5; s], 128, 24).unwrap();
        assert_eq!(got[0], 2.5);
        assert!(got[1..].iter().all(|v| v.abs() < 1e-12), "S={s}: {got:?}");
    }
}

/// A sinusoid on an exact DFT bin `k0` gives a triangle around `k0/S`
/// after interpolation, so the peak grid bin is the one nearest `k0/S`.
pub fn sinusoid_peaks_at_its_frequency() {
    let bins = 128;
    for (s, k0) in [(31usize, 5usize), (270, 20), (270, 71)] {
        let f0 = k0 as f64 / s as f64;
        let x: Vec<f64> = (0..s).map(|n| (2.0 * PI * f0 * n as f64 + 0.3).sin()).collect();
        let enc = spectral_encode_series(&x, bins, bins).unwrap();
        let peak = (1..bins).max_by(|&a, &b| enc[a].total_cmp(&enc[b])).unwrap();
        let nearest = (1..bins)
            .min_by(|&a, &b| (grid_frequency(a, bins) - f0).abs().total_cmp(&(grid_frequency(b, bins) - f0).abs()))
            .unwrap();
        assert_eq!(peak, nearest, "S={s} k0={k0}");
        assert!(enc[0].abs() < 1e-9);
    }
    // Off-bin frequencies still peak within one DFT spacing.
    for s in [31usize, 270] {
        let f0 = 0.137;
        let x: Vec<f64> = (0..s).map(|n| (2.0 * PI * f0 * n as f64).cos()).collect();
        let enc = spectral_encode_series(&x, bins, bins).unwrap();
        let peak = (1..bins).max_by(|&a, &b| enc[a].total_cmp(&enc[b])).unwrap();
        assert!((grid_frequency(peak, bins) - f0).abs() <= 1.0 / s as f64, "S={s}");
    }
}

pub fn invalid_inputs_are_refused() {
    assert_eq!(spectral_encode_series(&[1.0], 128, 24).unwrap_err().exit_code(), 3);
    assert_eq!(spectral_encode_series(&[1.0, 2.0], 128, 200).unwrap_err().exit_code(), 2);
}
