//! Radix-2 FFT and small DSP helpers shared by synthesis and introspection.

use std::f64::consts::PI;

use num_complex::Complex64;

/// In-place iterative radix-2 decimation-in-time FFT.
///
/// Forward transform uses `exp(-j 2 pi k n / N)`; no scaling in either
/// direction except `1/N` on the inverse.
///
/// # Panics
/// If the length is not a power of two.
pub fn fft_in_place(x: &mut [Complex64], inverse: bool) {
    let n = x.len();
    assert!(n.is_power_of_two(), "fft length {n} is not a power of two");
    if n <= 1 {
        return;
    }
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if i < j {
            x.swap(i, j);
        }
    }
    let sign = if inverse { 1.0 } else { -1.0 };
    let mut size = 2;
    while size <= n {
        let half = size / 2;
        let step = sign * 2.0 * PI / size as f64;
        for start in (0..n).step_by(size) {
            for k in 0..half {
                let tw = Complex64::from_polar(1.0, step * k as f64);
                let a = x[start + k];
                let b = x[start + k + half] * tw;
                x[start + k] = a + b;
                x[start + k + half] = a - b;
            }
        }
        size *= 2;
    }
    if inverse {
        let scale = 1.0 / n as f64;
        for v in x.iter_mut() {
            *v *= scale;
        }
    }
}

pub fn fft(x: &[Complex64]) -> Vec<Complex64> {
    let mut out = x.to_vec();
    fft_in_place(&mut out, false);
    out
}

pub fn ifft(x: &[Complex64]) -> Vec<Complex64> {
    let mut out = x.to_vec();
    fft_in_place(&mut out, true);
    out
}

pub fn mean_power(x: &[Complex64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.iter().map(|c| c.norm_sqr()).sum::<f64>() / x.len() as f64
}

/// Scales `x` to unit mean power. All-zero input is left untouched.
pub fn normalize_power(x: &mut [Complex64]) {
    let p = mean_power(x);
    if p > 0.0 {
        let s = 1.0 / p.sqrt();
        for v in x.iter_mut() {
            *v *= s;
        }
    }
}

/// Full linear convolution of a complex signal with real taps, truncated to
/// the signal length (causal alignment).
pub fn filter_real(x: &[Complex64], taps: &[f64]) -> Vec<Complex64> {
    (0..x.len())
        .map(|n| {
            taps.iter()
                .enumerate()
                .take(n + 1)
                .map(|(k, &h)| x[n - k] * h)
                .sum()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_dft(x: &[Complex64]) -> Vec<Complex64> {
        let n = x.len();
        (0..n)
            .map(|k| {
                x.iter()
                    .enumerate()
                    .map(|(t, &v)| v * Complex64::from_polar(1.0, -2.0 * PI * (k * t) as f64 / n as f64))
                    .sum()
            })
            .collect()
    }

    #[test]
    fn matches_naive_dft_for_several_sizes() {
        for n in [1, 2, 4, 8, 32, 256] {
            let x: Vec<Complex64> = (0..n)
                .map(|i| Complex64::new((i as f64 * 0.37).sin(), (i as f64 * 1.3).cos() - 0.2))
                .collect();
            let fast = fft(&x);
            let slow = naive_dft(&x);
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).norm() < 1e-9, "n={n}");
            }
            let back = ifft(&fast);
            for (a, b) in back.iter().zip(&x) {
                assert!((a - b).norm() < 1e-12);
            }
        }
    }

    #[test]
    #[should_panic]
    fn rejects_non_power_of_two() {
        fft(&[Complex64::new(1.0, 0.0); 6]);
    }
}
