use num_complex::Complex64;
use serde::{Deserialize, Serialize};

/// Complex samples per frame.
pub const FRAME_LEN: usize = 128;

/// One labeled example: 128 complex samples stored as an I row and a Q row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IQFrame {
    i: Vec<f32>,
    q: Vec<f32>,
}

impl IQFrame {
    pub fn new(i: Vec<f32>, q: Vec<f32>) -> Option<Self> {
        if i.len() != FRAME_LEN || q.len() != FRAME_LEN {
            return None;
        }
        if !i.iter().chain(&q).all(|v| v.is_finite()) {
            return None;
        }
        Some(IQFrame { i, q })
    }

    pub fn from_complex(samples: &[Complex64]) -> Option<Self> {
        Self::new(
            samples.iter().map(|c| c.re as f32).collect(),
            samples.iter().map(|c| c.im as f32).collect(),
        )
    }

    pub fn zeros() -> Self {
        IQFrame {
            i: vec![0.0; FRAME_LEN],
            q: vec![0.0; FRAME_LEN],
        }
    }

    pub fn i(&self) -> &[f32] {
        &self.i
    }

    pub fn q(&self) -> &[f32] {
        &self.q
    }

    pub fn to_complex(&self) -> Vec<Complex64> {
        self.i
            .iter()
            .zip(&self.q)
            .map(|(&re, &im)| Complex64::new(re as f64, im as f64))
            .collect()
    }

    /// Row-major `[I; Q]`, 256 values.
    pub fn to_channels(&self) -> Vec<f32> {
        let mut out = Vec::with_capacity(2 * FRAME_LEN);
        out.extend_from_slice(&self.i);
        out.extend_from_slice(&self.q);
        out
    }

    pub fn avg_power(&self) -> f64 {
        self.i
            .iter()
            .zip(&self.q)
            .map(|(&a, &b)| (a as f64).powi(2) + (b as f64).powi(2))
            .sum::<f64>()
            / FRAME_LEN as f64
    }
}
