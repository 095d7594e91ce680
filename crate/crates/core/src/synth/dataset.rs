//! Labeled dataset generation over a (class × SNR) grid.

use std::collections::BTreeMap;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::channel::{add_awgn, apply_cfo, apply_fading, apply_sro, Pdp};
use super::frame::{IQFrame, FRAME_LEN};
use super::modulation::{modulate, Modulation};
use super::SynthError;
use crate::dsp::normalize_power;
use crate::rng;

pub const DEFAULT_SPS: usize = 8;
pub const DEFAULT_MAX_CFO: f64 = 0.01;
pub const DEFAULT_MAX_SRO_PPM: f64 = 50.0;
/// Samples synthesized per frame before slicing; the window is drawn away
/// from both ends so filter and resampler transients never reach it.
pub const BURST_LEN: usize = 256;
const GUARD: usize = 32;

/// Channel for a single frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelConfig {
    pub snr_db: f64,
    #[serde(default)]
    pub pdp: Pdp,
    #[serde(default = "default_max_cfo")]
    pub max_cfo: f64,
    #[serde(default = "default_max_sro")]
    pub max_sro: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_max_cfo() -> f64 {
    DEFAULT_MAX_CFO
}
fn default_max_sro() -> f64 {
    DEFAULT_MAX_SRO_PPM
}
fn default_sps() -> usize {
    DEFAULT_SPS
}

impl ChannelConfig {
    pub fn new(snr_db: f64, seed: u64) -> Self {
        ChannelConfig {
            snr_db,
            pdp: Pdp::default(),
            max_cfo: DEFAULT_MAX_CFO,
            max_sro: DEFAULT_MAX_SRO_PPM,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        self.pdp.validate()?;
        check_impairments(self.max_cfo, self.max_sro)?;
        if !self.snr_db.is_finite() {
            return Err(SynthError::Config("snr_db must be finite".into()));
        }
        Ok(())
    }
}

fn check_impairments(max_cfo: f64, max_sro: f64) -> Result<(), SynthError> {
    if !(0.0..0.5).contains(&max_cfo) {
        return Err(SynthError::Config(format!("max_cfo {max_cfo} outside [0, 0.5)")));
    }
    if !(max_sro >= 0.0 && max_sro < 1e6) {
        return Err(SynthError::Config(format!("max_sro {max_sro} ppm outside [0, 1e6)")));
    }
    Ok(())
}

/// Impairment draws shared by every cell of a dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Impairments {
    pub pdp: Pdp,
    pub max_cfo: f64,
    pub max_sro: f64,
}

impl Default for Impairments {
    fn default() -> Self {
        Impairments {
            pdp: Pdp::default(),
            max_cfo: DEFAULT_MAX_CFO,
            max_sro: DEFAULT_MAX_SRO_PPM,
        }
    }
}

impl Impairments {
    /// Flat single-tap channel, no offsets. The tap still applies a random
    /// phase rotation.
    pub fn none() -> Self {
        Impairments {
            pdp: Pdp::flat(),
            max_cfo: 0.0,
            max_sro: 0.0,
        }
    }

    pub fn channel(&self, snr_db: f64, seed: u64) -> ChannelConfig {
        ChannelConfig {
            snr_db,
            pdp: self.pdp.clone(),
            max_cfo: self.max_cfo,
            max_sro: self.max_sro,
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    #[serde(default = "all_classes")]
    pub classes: Vec<Modulation>,
    #[serde(default = "default_snr_grid")]
    pub snr_grid: Vec<i32>,
    pub frames_per_cell: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_sps")]
    pub sps: usize,
    #[serde(default)]
    pub impairments: Impairments,
}

fn all_classes() -> Vec<Modulation> {
    Modulation::ALL.to_vec()
}

/// −20..+18 dB in 2 dB steps.
pub fn default_snr_grid() -> Vec<i32> {
    (-20..=18).step_by(2).collect()
}

/// −20..+16 dB in 4 dB steps.
pub fn desk_snr_grid() -> Vec<i32> {
    (-20..=18).step_by(4).collect()
}

impl DatasetConfig {
    /// 11 classes × 20 SNRs × 1000 frames.
    pub fn full(seed: u64) -> Self {
        DatasetConfig {
            classes: all_classes(),
            snr_grid: default_snr_grid(),
            frames_per_cell: 1000,
            seed,
            sps: DEFAULT_SPS,
            impairments: Impairments::default(),
        }
    }

    /// 11 classes × 10 SNRs × 200 frames.
    pub fn desk(seed: u64) -> Self {
        DatasetConfig {
            snr_grid: desk_snr_grid(),
            frames_per_cell: 200,
            ..Self::full(seed)
        }
    }

    pub fn total_frames(&self) -> usize {
        self.classes.len() * self.snr_grid.len() * self.frames_per_cell
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if self.classes.is_empty() {
            return Err(SynthError::Config("class list is empty".into()));
        }
        if self.snr_grid.is_empty() {
            return Err(SynthError::Config("SNR grid is empty".into()));
        }
        if self.frames_per_cell == 0 {
            return Err(SynthError::Config("frames_per_cell must be positive".into()));
        }
        let mut seen = self.classes.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.classes.len() {
            return Err(SynthError::Config("duplicate class in class list".into()));
        }
        let mut grid = self.snr_grid.clone();
        grid.sort();
        grid.dedup();
        if grid.len() != self.snr_grid.len() {
            return Err(SynthError::Config("duplicate value in SNR grid".into()));
        }
        if self.sps < 2 && self.classes.iter().any(|c| !c.is_analog()) {
            return Err(SynthError::Config(format!(
                "sps must be at least 2 for digital classes, got {}",
                self.sps
            )));
        }
        self.impairments.pdp.validate()?;
        check_impairments(self.impairments.max_cfo, self.impairments.max_sro)
    }
}

/// Synthesizes one frame; returns the unit-power pre-noise frame and the
/// noisy frame.
///
/// Order: modulate, fade, CFO, SRO, slice a 128-sample window, normalize the
/// window, add noise.
pub fn synth_frame<R: Rng + ?Sized>(
    class: Modulation,
    channel: &ChannelConfig,
    sps: usize,
    rng: &mut R,
) -> Result<(IQFrame, IQFrame), SynthError> {
    let burst = modulate(class, rng, BURST_LEN, sps)?;
    let faded = apply_fading(&burst, &channel.pdp, rng)?;
    let f_off = if channel.max_cfo > 0.0 {
        rng.random_range(-channel.max_cfo..=channel.max_cfo)
    } else {
        0.0
    };
    let ppm = if channel.max_sro > 0.0 {
        rng.random_range(-channel.max_sro..=channel.max_sro)
    } else {
        0.0
    };
    let shifted = apply_sro(&apply_cfo(&faded, f_off), ppm);
    let start = rng.random_range(GUARD..=BURST_LEN - FRAME_LEN - GUARD);
    let mut window: Vec<Complex64> = shifted[start..start + FRAME_LEN].to_vec();
    normalize_power(&mut window);
    let noisy = add_awgn(&window, channel.snr_db, rng);
    let pre = IQFrame::from_complex(&window).ok_or(SynthError::NonFinite)?;
    let post = IQFrame::from_complex(&noisy).ok_or(SynthError::NonFinite)?;
    Ok((pre, post))
}

/// RNG for one (class, snr) cell; depends only on the root seed and the
/// cell's catalog coordinates.
pub fn cell_rng(seed: u64, class: Modulation, snr_db: i32) -> rng::StreamRng {
    rng::stream(seed, "dataset", &[class.catalog_index() as u64, snr_db as i64 as u64])
}

/// Pre- and post-noise frames for one cell.
pub fn synth_cell(
    config: &DatasetConfig,
    class: Modulation,
    snr_db: i32,
) -> Result<Vec<(IQFrame, IQFrame)>, SynthError> {
    let mut rng = cell_rng(config.seed, class, snr_db);
    let channel = config.impairments.channel(snr_db as f64, config.seed);
    (0..config.frames_per_cell)
        .map(|_| synth_frame(class, &channel, config.sps, &mut rng))
        .collect()
}

/// Frames ordered class-major, then SNR, then frame index.
pub fn synth_dataset(config: &DatasetConfig) -> Result<DatasetBundle, SynthError> {
    config.validate()?;
    let total = config.total_frames();
    let mut frames = Vec::with_capacity(total);
    let mut mod_labels = Vec::with_capacity(total);
    let mut snr_labels = Vec::with_capacity(total);
    for (ci, &class) in config.classes.iter().enumerate() {
        for &snr in &config.snr_grid {
            for (_, post) in synth_cell(config, class, snr)? {
                frames.push(post);
                mod_labels.push(ci);
                snr_labels.push(snr);
            }
        }
    }
    Ok(DatasetBundle {
        frames,
        mod_labels,
        snr_labels,
        class_names: config.classes.iter().map(|c| c.name().to_string()).collect(),
        config: config.clone(),
    })
}

/// Frames with parallel modulation and SNR labels.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetBundle {
    pub frames: Vec<IQFrame>,
    /// Indices into `class_names`.
    pub mod_labels: Vec<usize>,
    pub snr_labels: Vec<i32>,
    pub class_names: Vec<String>,
    pub config: DatasetConfig,
}

impl DatasetBundle {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    /// Frame count per (class index, snr) cell.
    pub fn cell_counts(&self) -> BTreeMap<(usize, i32), usize> {
        let mut counts = BTreeMap::new();
        for (&c, &s) in self.mod_labels.iter().zip(&self.snr_labels) {
            *counts.entry((c, s)).or_insert(0) += 1;
        }
        counts
    }

    /// Checks the parallel-array and label-grid invariants.
    pub fn validate(&self) -> Result<(), SynthError> {
        let n = self.frames.len();
        if self.mod_labels.len() != n || self.snr_labels.len() != n {
            return Err(SynthError::Format(format!(
                "array lengths differ: {} frames, {} class labels, {} snr labels",
                n,
                self.mod_labels.len(),
                self.snr_labels.len()
            )));
        }
        if self.class_names.len() != self.config.classes.len() {
            return Err(SynthError::Format("class table does not match config".into()));
        }
        if let Some(&c) = self.mod_labels.iter().find(|&&c| c >= self.class_names.len()) {
            return Err(SynthError::Format(format!("class label {c} out of range")));
        }
        if let Some(&s) = self.snr_labels.iter().find(|s| !self.config.snr_grid.contains(s)) {
            return Err(SynthError::Format(format!("snr label {s} not in grid")));
        }
        Ok(())
    }

    /// New bundle holding the frames at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> DatasetBundle {
        DatasetBundle {
            frames: indices.iter().map(|&i| self.frames[i].clone()).collect(),
            mod_labels: indices.iter().map(|&i| self.mod_labels[i]).collect(),
            snr_labels: indices.iter().map(|&i| self.snr_labels[i]).collect(),
            class_names: self.class_names.clone(),
            config: self.config.clone(),
        }
    }
}
