//! Run configuration: one JSON or TOML file, then command-line overrides.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use modnet_core::introspect::DreamOptions;
use modnet_core::nn::{ArchOptions, Architecture, DEFAULT_DROPOUT, DEFAULT_HIDDEN};
use modnet_core::synth::{DatasetConfig, Impairments, Modulation};
use modnet_core::train::{SweepKind, TrainConfig};

use crate::CliError;

pub const SEED_ENV: &str = "MODNET_SEED";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    #[default]
    Desk,
    Full,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    pub path: Option<PathBuf>,
    pub preset: Option<Preset>,
    pub classes: Option<Vec<String>>,
    pub snr_grid: Option<Vec<i32>>,
    pub frames_per_cell: Option<usize>,
    pub sps: Option<usize>,
    pub impairments: Option<Impairments>,
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    /// Output file stem; defaults to the architecture name.
    pub name: Option<String>,
    pub hidden_units: Option<usize>,
    pub dropout: Option<f64>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub batch_size: Option<usize>,
    pub max_epochs: Option<usize>,
    pub patience: Option<usize>,
    pub splits: Option<[f64; 3]>,
    pub lr: Option<f64>,
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub kind: Option<SweepKind>,
    pub domain: Option<Vec<usize>>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    pub checkpoint: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VisualizeSection {
    pub checkpoint: Option<PathBuf>,
    pub layer: Option<usize>,
    /// Filter indices; absent means every filter.
    pub filters: Option<Vec<usize>>,
    pub steps: Option<usize>,
    pub step_size: Option<f64>,
    pub dream: Option<bool>,
    pub seed: Option<u64>,
}

/// The whole configuration file.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub dataset: DatasetSection,
    /// Architecture table, tagged by `arch`.
    pub arch: Option<Architecture>,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub visualize: VisualizeSection,
}

impl RunConfig {
    /// Parses JSON when the file ends in `.json`, TOML otherwise.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        if is_json {
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
        } else {
            toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
        }
    }

    /// Explicit seed, else `MODNET_SEED`, else 0.
    pub fn root_seed(&self) -> Result<u64, CliError> {
        if let Some(s) = self.seed {
            return Ok(s);
        }
        match std::env::var(SEED_ENV) {
            Ok(v) => v
                .trim()
                .parse()
                .map_err(|_| CliError::Config(format!("{SEED_ENV}=`{v}` is not an unsigned integer"))),
            Err(_) => Ok(0),
        }
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out_dir.clone().unwrap_or_else(|| PathBuf::from("."))
    }

    pub fn dataset_path(&self) -> Option<PathBuf> {
        self.dataset.path.clone()
    }

    pub fn dataset_config(&self) -> Result<DatasetConfig, CliError> {
        let d = &self.dataset;
        let root = self.root_seed()?;
        let mut c = match d.preset.unwrap_or_default() {
            Preset::Desk => DatasetConfig::desk(root),
            Preset::Full => DatasetConfig::full(root),
        };
        if let Some(names) = &d.classes {
            c.classes = names
                .iter()
                .map(|n| n.parse::<Modulation>().map_err(|e| CliError::Config(e.to_string())))
                .collect::<Result<_, _>>()?;
        }
        if let Some(g) = &d.snr_grid {
            c.snr_grid = g.clone();
        }
        if let Some(n) = d.frames_per_cell {
            c.frames_per_cell = n;
        }
        if let Some(s) = d.sps {
            c.sps = s;
        }
        if let Some(i) = &d.impairments {
            c.impairments = i.clone();
        }
        if let Some(s) = d.seed {
            c.seed = s;
        }
        c.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(c)
    }

    pub fn train_config(&self) -> Result<TrainConfig, CliError> {
        let t = &self.train;
        let d = TrainConfig::default();
        let c = TrainConfig {
            batch_size: t.batch_size.unwrap_or(d.batch_size),
            max_epochs: t.max_epochs.unwrap_or(d.max_epochs),
            patience: t.patience.unwrap_or(d.patience),
            splits: t.splits.unwrap_or(d.splits),
            lr: t.lr.unwrap_or(d.lr),
            seed: match t.seed {
                Some(s) => s,
                None => self.root_seed()?,
            },
        };
        c.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(c)
    }

    pub fn architecture(&self) -> Architecture {
        self.arch.clone().unwrap_or_else(Architecture::baseline)
    }

    pub fn arch_options(&self, classes: usize) -> ArchOptions {
        ArchOptions {
            classes,
            hidden_units: self.model.hidden_units.unwrap_or(DEFAULT_HIDDEN),
            dropout: self.model.dropout.unwrap_or(DEFAULT_DROPOUT),
        }
    }

    pub fn model_name(&self) -> String {
        self.model
            .name
            .clone()
            .unwrap_or_else(|| self.architecture().name().to_string())
    }

    pub fn checkpoint_path(&self, explicit: Option<&PathBuf>) -> PathBuf {
        explicit
            .cloned()
            .unwrap_or_else(|| self.out_dir().join(format!("{}.mdnt", self.model_name())))
    }

    pub fn dream_options(&self) -> Result<Option<DreamOptions>, CliError> {
        let v = &self.visualize;
        if v.dream == Some(false) {
            return Ok(None);
        }
        let d = DreamOptions::default();
        Ok(Some(DreamOptions {
            steps: v.steps.unwrap_or(d.steps),
            step_size: v.step_size.unwrap_or(d.step_size),
            seed: match v.seed {
                Some(s) => s,
                None => self.root_seed()?,
            },
        }))
    }
}

/// Parses a `--arch` flag into the default configuration of that family.
pub fn parse_arch(name: &str) -> Result<Architecture, CliError> {
    let table = format!("arch = \"{}\"", name.trim().to_ascii_lowercase().replace('-', "_"));
    match name.trim().to_ascii_lowercase().as_str() {
        "deep_cnn" | "deep-cnn" => Err(CliError::Config(
            "deep_cnn needs a depth; set it in the [arch] table".into(),
        )),
        _ => toml::from_str::<Architecture>(&table).map_err(|_| {
            CliError::Config(format!(
                "unknown architecture `{name}` (expected baseline, resnet, inception, cldnn or conv_matched_filter)"
            ))
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_and_json_agree() {
        let dir = tempfile::tempdir().unwrap();
        let t = dir.path().join("c.toml");
        std::fs::write(
            &t,
            "seed = 4\n[dataset]\nclasses = [\"bpsk\", \"am-dsb\"]\nframes_per_cell = 3\n[arch]\narch = \"cldnn\"\nlstm_units = 20\n[train]\nlr = 0.01\n",
        )
        .unwrap();
        let j = dir.path().join("c.json");
        std::fs::write(
            &j,
            r#"{"seed":4,"dataset":{"classes":["bpsk","am-dsb"],"frames_per_cell":3},"arch":{"arch":"cldnn","lstm_units":20},"train":{"lr":0.01}}"#,
        )
        .unwrap();
        let a = RunConfig::load(&t).unwrap();
        let b = RunConfig::load(&j).unwrap();
        assert_eq!(a.dataset_config().unwrap(), b.dataset_config().unwrap());
        assert_eq!(a.architecture(), b.architecture());
        assert_eq!(a.train_config().unwrap(), b.train_config().unwrap());
        let d = a.dataset_config().unwrap();
        assert_eq!(d.classes, vec![Modulation::Bpsk, Modulation::AmDsb]);
        assert_eq!(d.seed, 4);
        assert_eq!(a.train_config().unwrap().seed, 4);
    }

    #[test]
    fn unknown_keys_rejected() {
        let dir = tempfile::tempdir().unwrap();
        for body in ["bogus = 1\n", "[train]\nepochs = 3\n", "[arch]\narch = \"baseline\"\nwidth = 3\n"] {
            let p = dir.path().join("c.toml");
            std::fs::write(&p, body).unwrap();
            assert!(matches!(RunConfig::load(&p), Err(CliError::Config(_))), "{body}");
        }
    }

    #[test]
    fn arch_flag() {
        assert_eq!(parse_arch("cldnn").unwrap(), Architecture::cldnn());
        assert_eq!(parse_arch("baseline").unwrap(), Architecture::baseline());
        assert!(parse_arch("vgg").is_err());
    }
}
