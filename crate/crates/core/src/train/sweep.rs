//! Hyperparameter sweeps and the head-to-head architecture comparison.

use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::fit::{train_on, TrainHistory};
use super::metrics::{evaluate, MetricsReport};
use super::split::{split_dataset, Splits};
use super::{TrainConfig, TrainError};
use crate::nn::{build_baseline_cnn, build_deep_cnn, ArchOptions, Architecture, ModelSpec, DEFAULT_FILTERS, DEFAULT_TAPS};
use crate::synth::DatasetBundle;

/// Taps used by the filter-count sweep.
pub const FILTER_SWEEP_TAPS: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepKind {
    Filters,
    Taps,
    Depth,
    Compare,
}

impl SweepKind {
    pub fn name(self) -> &'static str {
        match self {
            SweepKind::Filters => "filters",
            SweepKind::Taps => "taps",
            SweepKind::Depth => "depth",
            SweepKind::Compare => "compare",
        }
    }

    /// Default values of the swept parameter; unused by `Compare`.
    pub fn default_domain(self) -> Vec<usize> {
        match self {
            SweepKind::Filters => (20..=90).step_by(10).collect(),
            SweepKind::Taps => (3..=12).collect(),
            SweepKind::Depth => (2..=9).collect(),
            SweepKind::Compare => Vec::new(),
        }
    }

    pub fn csv_name(self) -> String {
        format!("sweep_{}.csv", self.name())
    }
}

impl FromStr for SweepKind {
    type Err = TrainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "filters" => Ok(SweepKind::Filters),
            "taps" => Ok(SweepKind::Taps),
            "depth" => Ok(SweepKind::Depth),
            "compare" => Ok(SweepKind::Compare),
            other => Err(TrainError::Config(format!("unknown sweep `{other}`"))),
        }
    }
}

/// What to sweep and the fixed settings of the other knobs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepOptions {
    pub kind: SweepKind,
    /// Overrides [`SweepKind::default_domain`].
    #[serde(default)]
    pub domain: Option<Vec<usize>>,
    #[serde(default)]
    pub arch: ArchOptions,
}

impl SweepOptions {
    pub fn new(kind: SweepKind) -> Self {
        SweepOptions {
            kind,
            domain: None,
            arch: ArchOptions::default(),
        }
    }

    /// Row labels and model specs, in sweep order.
    pub fn jobs(&self) -> Result<Vec<(String, ModelSpec)>, TrainError> {
        let opts = &self.arch;
        if self.kind == SweepKind::Compare {
            return Architecture::comparison_set()
                .into_iter()
                .map(|(name, arch)| Ok((name, arch.build(opts)?)))
                .collect();
        }
        let domain = self.domain.clone().unwrap_or_else(|| self.kind.default_domain());
        if domain.is_empty() {
            return Err(TrainError::Config("sweep domain is empty".into()));
        }
        domain
            .into_iter()
            .map(|v| {
                let spec = match self.kind {
                    SweepKind::Filters => build_baseline_cnn(v, FILTER_SWEEP_TAPS, opts)?,
                    SweepKind::Taps => build_baseline_cnn(DEFAULT_FILTERS, v, opts)?,
                    SweepKind::Depth => build_deep_cnn(v, DEFAULT_FILTERS, DEFAULT_TAPS, opts)?,
                    SweepKind::Compare => unreachable!(),
                };
                Ok((v.to_string(), spec))
            })
            .collect()
    }
}

/// One finished sweep row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub label: String,
    pub accuracy: f64,
    pub ci95: f64,
    pub n_test: usize,
    pub epochs: usize,
    pub best_epoch: usize,
    pub seconds: f64,
    pub per_snr: Vec<(i32, f64)>,
}

/// A trained row with its full report and history.
#[derive(Clone, Debug)]
pub struct SweepOutcome {
    pub row: SweepRow,
    pub spec: ModelSpec,
    pub report: MetricsReport,
    pub history: TrainHistory,
}

/// Trains one spec on the shared splits and scores it on the test part.
pub fn run_job(label: &str, spec: &ModelSpec, splits: &Splits, config: &TrainConfig) -> Result<SweepOutcome, TrainError> {
    if splits.test.is_empty() {
        return Err(TrainError::Config("test split is empty".into()));
    }
    let started = Instant::now();
    let (state, history) = train_on(spec, &splits.train, &splits.val, config)?;
    let report = evaluate(&state, spec, &splits.test)?;
    let row = SweepRow {
        label: label.to_string(),
        accuracy: report.accuracy,
        ci95: report.ci95(),
        n_test: report.total,
        epochs: history.epochs(),
        best_epoch: history.best_epoch,
        seconds: started.elapsed().as_secs_f64(),
        per_snr: report.per_snr.iter().map(|s| (s.snr_db, s.accuracy)).collect(),
    };
    Ok(SweepOutcome {
        row,
        spec: spec.clone(),
        report,
        history,
    })
}

/// Runs every job whose label is not in `done`, calling `on_row` after each.
///
/// All rows share one split and one seed, so any row can be reproduced alone.
pub fn run_sweep(
    bundle: &DatasetBundle,
    config: &TrainConfig,
    options: &SweepOptions,
    done: &[String],
    mut on_row: impl FnMut(&SweepOutcome) -> Result<(), TrainError>,
) -> Result<Vec<SweepOutcome>, TrainError> {
    config.validate()?;
    let jobs = options.jobs()?;
    let splits = split_dataset(bundle, config.splits, config.seed)?;
    let mut out = Vec::new();
    for (label, spec) in jobs {
        if done.contains(&label) {
            continue;
        }
        let o = run_job(&label, &spec, &splits, config)?;
        on_row(&o)?;
        out.push(o);
    }
    Ok(out)
}

fn rows(bundle: &DatasetBundle, config: &TrainConfig, kind: SweepKind) -> Result<Vec<SweepRow>, TrainError> {
    Ok(run_sweep(bundle, config, &SweepOptions::new(kind), &[], |_| Ok(()))?
        .into_iter()
        .map(|o| o.row)
        .collect())
}

/// Baseline CNN with 3-tap filters for 20, 30, ..., 90 filters.
pub fn sweep_filters(bundle: &DatasetBundle, config: &TrainConfig) -> Result<Vec<SweepRow>, TrainError> {
    rows(bundle, config, SweepKind::Filters)
}

/// Baseline CNN with 50 filters for 3..=12 taps.
pub fn sweep_taps(bundle: &DatasetBundle, config: &TrainConfig) -> Result<Vec<SweepRow>, TrainError> {
    rows(bundle, config, SweepKind::Taps)
}

/// Plain CNN stacks of depth 2..=9.
pub fn sweep_depth(bundle: &DatasetBundle, config: &TrainConfig) -> Result<Vec<SweepRow>, TrainError> {
    rows(bundle, config, SweepKind::Depth)
}

/// Baseline, resnet9, inception2, CLDNN and conv-matched-filter trained
/// under one config and scored on one shared test split.
pub fn compare_architectures(bundle: &DatasetBundle, config: &TrainConfig) -> Result<Vec<SweepOutcome>, TrainError> {
    run_sweep(bundle, config, &SweepOptions::new(SweepKind::Compare), &[], |_| Ok(()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn job_grids() {
        let n = |k| SweepOptions::new(k).jobs().unwrap().len();
        assert_eq!(n(SweepKind::Filters), 8);
        assert_eq!(n(SweepKind::Taps), 10);
        assert_eq!(n(SweepKind::Depth), 8);
        assert_eq!(n(SweepKind::Compare), 5);
        let labels: Vec<String> = SweepOptions::new(SweepKind::Compare)
            .jobs()
            .unwrap()
            .into_iter()
            .map(|j| j.0)
            .collect();
        assert_eq!(labels, ["baseline", "resnet9", "inception2", "cldnn", "conv_matched_filter"]);
    }

    #[test]
    fn filter_sweep_uses_three_taps() {
        let jobs = SweepOptions::new(SweepKind::Filters).jobs().unwrap();
        assert_eq!(jobs[0].0, "20");
        assert_eq!(jobs[0].1, build_baseline_cnn(20, 3, &ArchOptions::default()).unwrap());
    }

    #[test]
    fn kinds_parse() {
        assert_eq!("Taps".parse::<SweepKind>().unwrap(), SweepKind::Taps);
        assert!("width".parse::<SweepKind>().is_err());
    }
}
