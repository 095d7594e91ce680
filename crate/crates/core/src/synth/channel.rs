//! Channel impairments applied to a unit-power baseband burst.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::SynthError;
use crate::dsp::{mean_power, normalize_power};

/// One power-delay-profile tap.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PdpTap {
    pub delay: usize,
    pub power_db: f64,
}

/// Power delay profile; the first tap sits at delay 0 and powers are ≤ 0 dB.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Pdp(pub Vec<PdpTap>);

impl Default for Pdp {
    fn default() -> Self {
        Pdp(vec![
            PdpTap { delay: 0, power_db: 0.0 },
            PdpTap { delay: 1, power_db: -2.0 },
            PdpTap { delay: 3, power_db: -10.0 },
        ])
    }
}

impl Pdp {
    pub fn flat() -> Self {
        Pdp(vec![PdpTap { delay: 0, power_db: 0.0 }])
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let taps = &self.0;
        let Some(first) = taps.first() else {
            return Err(SynthError::Config("pdp has no taps".into()));
        };
        if first.delay != 0 {
            return Err(SynthError::Config("first pdp tap must be at delay 0".into()));
        }
        for w in taps.windows(2) {
            if w[1].delay <= w[0].delay {
                return Err(SynthError::Config("pdp delays must be strictly increasing".into()));
            }
        }
        if let Some(t) = taps.iter().find(|t| !(t.power_db <= 0.0)) {
            return Err(SynthError::Config(format!(
                "pdp tap at delay {} has power {} dB > 0",
                t.delay, t.power_db
            )));
        }
        Ok(())
    }

    pub fn max_delay(&self) -> usize {
        self.0.last().map_or(0, |t| t.delay)
    }
}

fn complex_normal<R: Rng + ?Sized>(rng: &mut R, variance: f64) -> Complex64 {
    let s = (variance / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re * s, im * s)
}

/// Draws the random FIR for one fading realization.
pub fn fading_taps<R: Rng + ?Sized>(pdp: &Pdp, rng: &mut R) -> Result<Vec<Complex64>, SynthError> {
    pdp.validate()?;
    let mut h = vec![Complex64::new(0.0, 0.0); pdp.max_delay() + 1];
    for t in &pdp.0 {
        h[t.delay] = complex_normal(rng, 10f64.powf(t.power_db / 10.0));
    }
    Ok(h)
}

/// Convolves with a random FIR drawn from `pdp`, then renormalizes to unit
/// average power. Output has the input's length (causal alignment).
pub fn apply_fading<R: Rng + ?Sized>(
    signal: &[Complex64],
    pdp: &Pdp,
    rng: &mut R,
) -> Result<Vec<Complex64>, SynthError> {
    let h = fading_taps(pdp, rng)?;
    let mut out: Vec<Complex64> = (0..signal.len())
        .map(|n| {
            h.iter()
                .enumerate()
                .take(n + 1)
                .map(|(k, &hk)| signal[n - k] * hk)
                .sum()
        })
        .collect();
    normalize_power(&mut out);
    Ok(out)
}

/// Multiplies sample `n` by `exp(j 2 pi f_off n)`.
pub fn apply_cfo(signal: &[Complex64], f_off: f64) -> Vec<Complex64> {
    signal
        .iter()
        .enumerate()
        .map(|(n, &x)| x * Complex64::from_polar(1.0, 2.0 * PI * f_off * n as f64))
        .collect()
}

/// Half-width of the windowed-sinc interpolator, in input samples.
pub const SINC_HALF_WIDTH: usize = 16;

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

fn blackman(x: f64, half: f64) -> f64 {
    // x in [-half, half]
    let u = (x + half) / (2.0 * half);
    0.42 - 0.5 * (2.0 * PI * u).cos() + 0.08 * (4.0 * PI * u).cos()
}

/// Band-limited value of `x` at fractional position `t`; zero outside.
pub fn interpolate(x: &[Complex64], t: f64) -> Complex64 {
    let base = t.floor();
    let frac = t - base;
    let base = base as i64;
    if frac == 0.0 {
        return if base >= 0 && (base as usize) < x.len() {
            x[base as usize]
        } else {
            Complex64::new(0.0, 0.0)
        };
    }
    let half = SINC_HALF_WIDTH as i64;
    let mut acc = Complex64::new(0.0, 0.0);
    for k in (base - half + 1)..=(base + half) {
        if k < 0 || k as usize >= x.len() {
            continue;
        }
        let d = t - k as f64;
        acc += x[k as usize] * (sinc(d) * blackman(d, SINC_HALF_WIDTH as f64));
    }
    acc
}

/// Resamples by factor `1 + ppm·1e-6`: output sample `n` is the input at
/// position `n·(1 + ppm·1e-6)`. Output keeps the input length; positions past
/// the end read as zero.
pub fn apply_sro(signal: &[Complex64], ppm: f64) -> Vec<Complex64> {
    if ppm == 0.0 {
        return signal.to_vec();
    }
    let ratio = 1.0 + ppm * 1e-6;
    (0..signal.len())
        .map(|n| interpolate(signal, n as f64 * ratio))
        .collect()
}

/// Complex white Gaussian noise with per-sample variance `10^(-snr_db/10)`.
pub fn awgn<R: Rng + ?Sized>(len: usize, snr_db: f64, rng: &mut R) -> Vec<Complex64> {
    let var = 10f64.powf(-snr_db / 10.0);
    (0..len).map(|_| complex_normal(rng, var)).collect()
}

/// Adds [`awgn`] to a unit-power signal.
pub fn add_awgn<R: Rng + ?Sized>(signal: &[Complex64], snr_db: f64, rng: &mut R) -> Vec<Complex64> {
    let noise = awgn(signal.len(), snr_db, rng);
    signal.iter().zip(&noise).map(|(s, n)| s + n).collect()
}

/// `10·log10(P_signal / P_noise)` with the noise taken as `post - pre`.
/// Returns `+inf` when the two are identical.
pub fn measure_snr(pre: &[Complex64], post: &[Complex64]) -> f64 {
    let noise: Vec<Complex64> = pre.iter().zip(post).map(|(a, b)| b - a).collect();
    let pn = mean_power(&noise);
    if pn == 0.0 {
        return f64::INFINITY;
    }
    10.0 * (mean_power(pre) / pn).log10()
}
