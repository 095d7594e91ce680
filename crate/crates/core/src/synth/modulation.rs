//! Baseband modulators for the eleven-class catalog.

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::SynthError;
use crate::dsp::{self, filter_real, normalize_power};

/// Roll-off of the root-raised-cosine shaping filter.
pub const RRC_ROLLOFF: f64 = 0.35;
/// Half-length of the RRC filter in symbols.
pub const RRC_SPAN: usize = 4;
pub const GFSK_BT: f64 = 0.35;
pub const GFSK_INDEX: f64 = 1.0;
pub const CPFSK_INDEX: f64 = 0.5;
/// Peak frequency deviation of WBFM in cycles/sample.
pub const WBFM_DEVIATION: f64 = 0.05;
pub const AM_DSB_INDEX: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Modulation {
    #[serde(rename = "BPSK")]
    Bpsk,
    #[serde(rename = "QPSK")]
    Qpsk,
    #[serde(rename = "8PSK")]
    Psk8,
    #[serde(rename = "PAM4")]
    Pam4,
    #[serde(rename = "QAM16")]
    Qam16,
    #[serde(rename = "QAM64")]
    Qam64,
    #[serde(rename = "GFSK")]
    Gfsk,
    #[serde(rename = "CPFSK")]
    Cpfsk,
    #[serde(rename = "WBFM")]
    Wbfm,
    #[serde(rename = "AM-DSB")]
    AmDsb,
    #[serde(rename = "AM-SSB")]
    AmSsb,
}

impl Modulation {
    pub const ALL: [Modulation; 11] = [
        Modulation::Bpsk,
        Modulation::Qpsk,
        Modulation::Psk8,
        Modulation::Pam4,
        Modulation::Qam16,
        Modulation::Qam64,
        Modulation::Gfsk,
        Modulation::Cpfsk,
        Modulation::Wbfm,
        Modulation::AmDsb,
        Modulation::AmSsb,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Modulation::Bpsk => "BPSK",
            Modulation::Qpsk => "QPSK",
            Modulation::Psk8 => "8PSK",
            Modulation::Pam4 => "PAM4",
            Modulation::Qam16 => "QAM16",
            Modulation::Qam64 => "QAM64",
            Modulation::Gfsk => "GFSK",
            Modulation::Cpfsk => "CPFSK",
            Modulation::Wbfm => "WBFM",
            Modulation::AmDsb => "AM-DSB",
            Modulation::AmSsb => "AM-SSB",
        }
    }

    /// Position in [`Modulation::ALL`].
    pub fn catalog_index(self) -> usize {
        Self::ALL.iter().position(|&m| m == self).expect("in catalog")
    }

    pub fn is_analog(self) -> bool {
        matches!(self, Modulation::Wbfm | Modulation::AmDsb | Modulation::AmSsb)
    }

    /// Unit-energy constellation for the linearly modulated classes.
    pub fn constellation(self) -> Option<Vec<Complex64>> {
        let points = match self {
            Modulation::Bpsk => vec![Complex64::new(1.0, 0.0), Complex64::new(-1.0, 0.0)],
            Modulation::Qpsk => (0..4).map(qpsk_gray).collect(),
            Modulation::Psk8 => (0..8)
                .map(|m| Complex64::from_polar(1.0, 2.0 * PI * m as f64 / 8.0))
                .collect(),
            Modulation::Pam4 => [-3.0, -1.0, 1.0, 3.0]
                .iter()
                .map(|&a| Complex64::new(a, 0.0))
                .collect(),
            Modulation::Qam16 => square_qam(4),
            Modulation::Qam64 => square_qam(8),
            _ => return None,
        };
        let energy = points.iter().map(|p| p.norm_sqr()).sum::<f64>() / points.len() as f64;
        let s = 1.0 / energy.sqrt();
        Some(points.into_iter().map(|p| p * s).collect())
    }
}

impl fmt::Display for Modulation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Modulation {
    type Err = SynthError;

    /// Case-insensitive; `-` and `_` are ignored (`am-dsb`, `AMDSB`, `am_dsb`).
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s
            .chars()
            .filter(|c| *c != '-' && *c != '_')
            .flat_map(char::to_uppercase)
            .collect();
        Modulation::ALL
            .iter()
            .copied()
            .find(|m| m.name().replace('-', "") == key)
            .ok_or_else(|| SynthError::Catalog(s.to_string()))
    }
}

/// BPSK mapping: bit 0 -> +1, bit 1 -> -1.
pub fn bpsk_symbols(bits: &[u8]) -> Vec<f64> {
    bits.iter().map(|&b| if b == 0 { 1.0 } else { -1.0 }).collect()
}

/// Gray-coded QPSK point for a 2-bit index `b0 b1` (b0 is the MSB).
pub fn qpsk_gray(index: usize) -> Complex64 {
    let b0 = (index >> 1) & 1;
    let b1 = index & 1;
    Complex64::new(1.0 - 2.0 * b0 as f64, 1.0 - 2.0 * b1 as f64) * FRAC_1_SQRT_2
}

fn square_qam(side: usize) -> Vec<Complex64> {
    let level = |k: usize| 2.0 * k as f64 - (side as f64 - 1.0);
    let mut pts = Vec::with_capacity(side * side);
    for i in 0..side {
        for q in 0..side {
            pts.push(Complex64::new(level(i), level(q)));
        }
    }
    pts
}

/// Root-raised-cosine taps, `2 * span * sps + 1` long, unit energy.
pub fn rrc_taps(alpha: f64, sps: usize, span: usize) -> Vec<f64> {
    let n = 2 * span * sps + 1;
    let mid = (span * sps) as f64;
    let mut taps: Vec<f64> = (0..n)
        .map(|i| {
            let t = (i as f64 - mid) / sps as f64;
            if t.abs() < 1e-12 {
                1.0 - alpha + 4.0 * alpha / PI
            } else if (t.abs() - 1.0 / (4.0 * alpha)).abs() < 1e-9 {
                alpha / 2f64.sqrt()
                    * ((1.0 + 2.0 / PI) * (PI / (4.0 * alpha)).sin()
                        + (1.0 - 2.0 / PI) * (PI / (4.0 * alpha)).cos())
            } else {
                let num = (PI * t * (1.0 - alpha)).sin()
                    + 4.0 * alpha * t * (PI * t * (1.0 + alpha)).cos();
                let den = PI * t * (1.0 - (4.0 * alpha * t).powi(2));
                num / den
            }
        })
        .collect();
    let e = taps.iter().map(|v| v * v).sum::<f64>().sqrt();
    for v in &mut taps {
        *v /= e;
    }
    taps
}

/// Gaussian frequency-pulse smoothing taps for GFSK, unit DC gain.
pub fn gaussian_taps(bt: f64, sps: usize, span: usize) -> Vec<f64> {
    let n = span * sps + 1;
    let mid = (n - 1) as f64 / 2.0;
    let ln2 = 2f64.ln();
    let mut taps: Vec<f64> = (0..n)
        .map(|i| {
            let t = (i as f64 - mid) / sps as f64;
            (-2.0 * PI * PI * bt * bt * t * t / ln2).exp()
        })
        .collect();
    let s: f64 = taps.iter().sum();
    for v in &mut taps {
        *v /= s;
    }
    taps
}

fn linear<R: Rng + ?Sized>(points: &[Complex64], rng: &mut R, n: usize, sps: usize) -> Vec<Complex64> {
    let taps = rrc_taps(RRC_ROLLOFF, sps, RRC_SPAN);
    let delay = taps.len() - 1;
    let offset = rng.random_range(0..sps);
    let total = n + delay + offset;
    let n_sym = total.div_ceil(sps);
    let mut up = vec![Complex64::new(0.0, 0.0); n_sym * sps];
    for s in 0..n_sym {
        up[s * sps] = points[rng.random_range(0..points.len())];
    }
    let shaped = filter_real(&up, &taps);
    shaped[delay + offset..delay + offset + n].to_vec()
}

fn fsk<R: Rng + ?Sized>(
    rng: &mut R,
    n: usize,
    sps: usize,
    index: f64,
    smoothing: Option<&[f64]>,
) -> Vec<Complex64> {
    let lead = smoothing.map_or(0, |t| t.len());
    let offset = rng.random_range(0..sps);
    let total = n + lead + offset;
    let n_sym = total.div_ceil(sps);
    let mut freq: Vec<f64> = Vec::with_capacity(n_sym * sps);
    for _ in 0..n_sym {
        let a = if rng.random::<bool>() { 1.0 } else { -1.0 };
        freq.extend(std::iter::repeat_n(a, sps));
    }
    if let Some(taps) = smoothing {
        let c: Vec<Complex64> = freq.iter().map(|&f| Complex64::new(f, 0.0)).collect();
        freq = filter_real(&c, taps).iter().map(|c| c.re).collect();
    }
    let mut phase = rng.random_range(0.0..2.0 * PI);
    let step = PI * index / sps as f64;
    freq[lead + offset..lead + offset + n]
        .iter()
        .map(|&f| {
            phase += step * f;
            Complex64::from_polar(1.0, phase)
        })
        .collect()
}

/// Band-limited audio-like message in [-1, 1]: a few low tones plus
/// low-passed noise.
pub fn program_source<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    let tones: Vec<(f64, f64, f64)> = (0..3)
        .map(|_| {
            (
                rng.random_range(0.3..1.0),
                rng.random_range(0.002..0.02),
                rng.random_range(0.0..2.0 * PI),
            )
        })
        .collect();
    // one-pole low-pass over white noise
    let mut lp = 0.0;
    let mut m: Vec<f64> = (0..n)
        .map(|i| {
            let w: f64 = rng.sample(StandardNormal);
            lp = 0.95 * lp + 0.05 * w;
            let t: f64 = tones
                .iter()
                .map(|&(a, f, p)| a * (2.0 * PI * f * i as f64 + p).sin())
                .sum();
            t + 1.5 * lp
        })
        .collect();
    let peak = m.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if peak > 0.0 {
        for v in &mut m {
            *v /= peak;
        }
    }
    m
}

fn analytic_signal(m: &[f64]) -> Vec<Complex64> {
    let n = m.len().next_power_of_two();
    let mut buf: Vec<Complex64> = m.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    buf.resize(n, Complex64::new(0.0, 0.0));
    dsp::fft_in_place(&mut buf, false);
    for (k, v) in buf.iter_mut().enumerate() {
        if k == 0 || (n > 1 && k == n / 2) {
            continue;
        } else if k < n / 2 {
            *v *= 2.0;
        } else {
            *v = Complex64::new(0.0, 0.0);
        }
    }
    dsp::fft_in_place(&mut buf, true);
    buf.truncate(m.len());
    buf
}

/// Generates `n` unit-power baseband samples of `class`.
///
/// Digital classes draw i.i.d. symbols at `sps` samples per symbol with a
/// random timing phase; analog classes modulate [`program_source`].
pub fn modulate<R: Rng + ?Sized>(
    class: Modulation,
    rng: &mut R,
    n: usize,
    sps: usize,
) -> Result<Vec<Complex64>, SynthError> {
    if n == 0 {
        return Err(SynthError::Config("sample count must be positive".into()));
    }
    if !class.is_analog() && sps < 2 {
        return Err(SynthError::Config(format!(
            "{class} needs at least 2 samples per symbol, got {sps}"
        )));
    }
    let mut out = match class {
        Modulation::Gfsk => {
            let g = gaussian_taps(GFSK_BT, sps, 4);
            fsk(rng, n, sps, GFSK_INDEX, Some(&g))
        }
        Modulation::Cpfsk => fsk(rng, n, sps, CPFSK_INDEX, None),
        Modulation::Wbfm => {
            let m = program_source(rng, n);
            let mut phase = rng.random_range(0.0..2.0 * PI);
            m.iter()
                .map(|&v| {
                    phase += 2.0 * PI * WBFM_DEVIATION * v;
                    Complex64::from_polar(1.0, phase)
                })
                .collect()
        }
        Modulation::AmDsb => program_source(rng, n)
            .into_iter()
            .map(|v| Complex64::new(1.0 + AM_DSB_INDEX * v, 0.0))
            .collect(),
        Modulation::AmSsb => analytic_signal(&program_source(rng, n)),
        linear_class => {
            let points = linear_class.constellation().expect("linear class");
            linear(&points, rng, n, sps)
        }
    };
    normalize_power(&mut out);
    Ok(out)
}
