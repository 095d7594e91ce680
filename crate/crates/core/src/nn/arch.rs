//! Builders for the evaluated architecture families.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::spec::{ActShape, LayerKind, LayerSpec, ModelSpec, Source, SpecError, DEFAULT_CLASSES};

pub const DEFAULT_FILTERS: usize = 50;
pub const DEFAULT_TAPS: usize = 8;
pub const DEFAULT_HIDDEN: usize = 128;
pub const DEFAULT_LSTM_UNITS: usize = 50;
pub const DEFAULT_DROPOUT: f64 = 0.5;

/// Settings shared by every builder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchOptions {
    pub classes: usize,
    /// Width of the hidden dense layer in front of the classifier.
    pub hidden_units: usize,
    pub dropout: f64,
}

impl Default for ArchOptions {
    fn default() -> Self {
        ArchOptions {
            classes: DEFAULT_CLASSES,
            hidden_units: DEFAULT_HIDDEN,
            dropout: DEFAULT_DROPOUT,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ArchError {
    #[error("{arch}: {detail}")]
    Precondition { arch: &'static str, detail: String },
    #[error(transparent)]
    Spec(#[from] SpecError),
}

/// What the CLDNN concatenates with the last convolution before the LSTM.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bypass {
    /// Output of the first convolution.
    #[default]
    FirstConv,
    /// The raw I/Q samples.
    RawInput,
    /// No bypass: plain conv stack into the LSTM.
    None,
}

struct Graph {
    layers: Vec<LayerSpec>,
}

impl Graph {
    fn new() -> Self {
        Graph { layers: Vec::new() }
    }

    fn push(&mut self, name: impl Into<String>, kind: LayerKind, inputs: Vec<Source>) -> Source {
        self.layers.push(LayerSpec {
            name: name.into(),
            kind,
            inputs,
        });
        Source::Layer(self.layers.len() - 1)
    }

    fn conv_relu(&mut self, name: &str, src: Source, filters: usize, taps: usize) -> Source {
        let c = self.push(name, LayerKind::Conv1d { filters, taps }, vec![src]);
        self.push(format!("{name}_relu"), LayerKind::Relu, vec![c])
    }

    fn dropout(&mut self, name: &str, src: Source, rate: f64) -> Source {
        if rate > 0.0 {
            self.push(format!("{name}_drop"), LayerKind::Dropout { rate }, vec![src])
        } else {
            src
        }
    }

    /// Hidden dense + ReLU + dropout, then the softmax classifier.
    fn head(mut self, src: Source, opts: &ArchOptions) -> Result<ModelSpec, ArchError> {
        let d = self.push(
            "dense",
            LayerKind::Dense {
                units: opts.hidden_units,
            },
            vec![src],
        );
        let r = self.push("dense_relu", LayerKind::Relu, vec![d]);
        let r = self.dropout("dense", r, opts.dropout);
        self.push(
            "softmax",
            LayerKind::SoftmaxHead {
                classes: opts.classes,
            },
            vec![r],
        );
        let spec = ModelSpec::new(self.layers);
        spec.check()?;
        Ok(spec)
    }
}

fn require(ok: bool, arch: &'static str, detail: impl FnOnce() -> String) -> Result<(), ArchError> {
    if ok {
        Ok(())
    } else {
        Err(ArchError::Precondition {
            arch,
            detail: detail(),
        })
    }
}

/// Two conv+ReLU+dropout layers, one hidden dense layer, softmax.
pub fn build_baseline_cnn(n_filt: usize, n_taps: usize, opts: &ArchOptions) -> Result<ModelSpec, ArchError> {
    build_deep_cnn(2, n_filt, n_taps, opts)
}

/// `depth` conv+ReLU+dropout layers, one hidden dense layer, softmax.
pub fn build_deep_cnn(
    depth: usize,
    n_filt: usize,
    n_taps: usize,
    opts: &ArchOptions,
) -> Result<ModelSpec, ArchError> {
    require(depth >= 2, "deep_cnn", || format!("depth must be >= 2, got {depth}"))?;
    let mut g = Graph::new();
    let mut src = Source::Input;
    for i in 1..=depth {
        let name = format!("conv{i}");
        src = g.conv_relu(&name, src, n_filt, n_taps);
        src = g.dropout(&name, src, opts.dropout);
    }
    g.head(src, opts)
}

/// Residual network with `n_layers` convolutions.
///
/// Convolutions are grouped in pairs; each pair's input is added to the
/// pair's output (through a 1x1 projection when channel counts differ). An
/// odd trailing convolution is left without a shortcut.
pub fn build_resnet(
    n_layers: usize,
    n_filt: usize,
    n_taps: usize,
    opts: &ArchOptions,
) -> Result<ModelSpec, ArchError> {
    require((5..=9).contains(&n_layers), "resnet", || {
        format!("n_layers must be in 5..=9, got {n_layers}")
    })?;
    let mut g = Graph::new();
    let mut src = Source::Input;
    let mut channels = super::spec::INPUT_CHANNELS;
    for block in 1..=n_layers / 2 {
        let a = g.conv_relu(&format!("res{block}_conv_a"), src, n_filt, n_taps);
        let b = g.push(
            format!("res{block}_conv_b"),
            LayerKind::Conv1d {
                filters: n_filt,
                taps: n_taps,
            },
            vec![a],
        );
        let skip = if channels == n_filt {
            src
        } else {
            g.push(
                format!("res{block}_proj"),
                LayerKind::Conv1d {
                    filters: n_filt,
                    taps: 1,
                },
                vec![src],
            )
        };
        let sum = g.push(format!("res{block}_add"), LayerKind::ResidualAdd, vec![b, skip]);
        let r = g.push(format!("res{block}_relu"), LayerKind::Relu, vec![sum]);
        src = g.dropout(&format!("res{block}"), r, opts.dropout);
        channels = n_filt;
    }
    if n_layers % 2 == 1 {
        src = g.conv_relu("conv_tail", src, n_filt, n_taps);
        src = g.dropout("conv_tail", src, opts.dropout);
    }
    g.head(src, opts)
}

/// Inception stack. Each module has three branches, all `n_filt` wide:
/// 1x1; 1x1 then 1x`branch_taps[0]`; 1x1 then 1x`branch_taps[1]`,
/// concatenated on the channel axis.
pub fn build_inception(
    n_modules: usize,
    n_filt: usize,
    branch_taps: [usize; 2],
    opts: &ArchOptions,
) -> Result<ModelSpec, ArchError> {
    require((1..=4).contains(&n_modules), "inception", || {
        format!("n_modules must be in 1..=4, got {n_modules}")
    })?;
    let mut g = Graph::new();
    let mut src = Source::Input;
    for m in 1..=n_modules {
        let b1 = g.conv_relu(&format!("inc{m}_1x1"), src, n_filt, 1);
        let mut branches = vec![b1];
        for &taps in &branch_taps {
            let reduce = g.conv_relu(&format!("inc{m}_{taps}_reduce"), src, n_filt, 1);
            branches.push(g.conv_relu(&format!("inc{m}_1x{taps}"), reduce, n_filt, taps));
        }
        let cat = g.push(format!("inc{m}_concat"), LayerKind::Concat, branches);
        src = g.dropout(&format!("inc{m}"), cat, opts.dropout);
    }
    g.head(src, opts)
}

/// Four 1x`n_taps` convolutions, a bypass concatenation, an LSTM, then the
/// dense head.
pub fn build_cldnn(
    n_filt: usize,
    n_taps: usize,
    lstm_units: usize,
    bypass: Bypass,
    opts: &ArchOptions,
) -> Result<ModelSpec, ArchError> {
    let mut g = Graph::new();
    let conv1 = g.conv_relu("conv1", Source::Input, n_filt, n_taps);
    let mut src = conv1;
    for i in 2..=4 {
        src = g.conv_relu(&format!("conv{i}"), src, n_filt, n_taps);
    }
    let joined = match bypass {
        Bypass::FirstConv => g.push("bypass_concat", LayerKind::Concat, vec![conv1, src]),
        Bypass::RawInput => g.push("bypass_concat", LayerKind::Concat, vec![Source::Input, src]),
        Bypass::None => src,
    };
    let lstm = g.push("lstm", LayerKind::Lstm { units: lstm_units }, vec![joined]);
    g.head(lstm, opts)
}

/// Conv+ReLU, max-pooling with stride equal to the window, LSTM, dense head.
pub fn build_conv_matched_filter(
    n_filt: usize,
    n_taps: usize,
    pool_width: usize,
    lstm_units: usize,
    opts: &ArchOptions,
) -> Result<ModelSpec, ArchError> {
    require(pool_width >= 1, "conv_matched_filter", || "pool width must be >= 1".into())?;
    let mut g = Graph::new();
    let c = g.conv_relu("conv1", Source::Input, n_filt, n_taps);
    let pooled = if pool_width > 1 {
        g.push(
            "pool",
            LayerKind::Maxpool {
                width: pool_width,
                stride: pool_width,
            },
            vec![c],
        )
    } else {
        c
    };
    let lstm = g.push("lstm", LayerKind::Lstm { units: lstm_units }, vec![pooled]);
    g.head(lstm, opts)
}

/// Architecture selector used by configs, sweeps and the CLI.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "arch", rename_all = "snake_case", deny_unknown_fields)]
pub enum Architecture {
    Baseline {
        #[serde(default = "default_filters")]
        n_filt: usize,
        #[serde(default = "default_taps")]
        n_taps: usize,
    },
    DeepCnn {
        depth: usize,
        #[serde(default = "default_filters")]
        n_filt: usize,
        #[serde(default = "default_taps")]
        n_taps: usize,
    },
    Resnet {
        #[serde(default = "default_res_layers")]
        n_layers: usize,
        #[serde(default = "default_filters")]
        n_filt: usize,
        #[serde(default = "default_taps")]
        n_taps: usize,
    },
    Inception {
        #[serde(default = "default_modules")]
        n_modules: usize,
        #[serde(default = "default_filters")]
        n_filt: usize,
        #[serde(default = "default_branch_taps")]
        branch_taps: [usize; 2],
    },
    Cldnn {
        #[serde(default = "default_filters")]
        n_filt: usize,
        #[serde(default = "default_taps")]
        n_taps: usize,
        #[serde(default = "default_lstm")]
        lstm_units: usize,
        #[serde(default)]
        bypass: Bypass,
    },
    ConvMatchedFilter {
        #[serde(default = "default_filters")]
        n_filt: usize,
        #[serde(default = "default_taps")]
        n_taps: usize,
        #[serde(default = "default_pool")]
        pool_width: usize,
        #[serde(default = "default_lstm")]
        lstm_units: usize,
    },
}

fn default_filters() -> usize {
    DEFAULT_FILTERS
}
fn default_taps() -> usize {
    DEFAULT_TAPS
}
fn default_res_layers() -> usize {
    9
}
fn default_modules() -> usize {
    2
}
fn default_branch_taps() -> [usize; 2] {
    [3, 8]
}
fn default_lstm() -> usize {
    DEFAULT_LSTM_UNITS
}
fn default_pool() -> usize {
    2
}

impl Architecture {
    /// The five models compared head to head.
    pub fn comparison_set() -> Vec<(String, Architecture)> {
        vec![
            ("baseline".into(), Architecture::baseline()),
            ("resnet9".into(), Architecture::resnet(9)),
            ("inception2".into(), Architecture::inception(2)),
            ("cldnn".into(), Architecture::cldnn()),
            ("conv_matched_filter".into(), Architecture::conv_matched_filter()),
        ]
    }

    pub fn baseline() -> Self {
        Architecture::Baseline {
            n_filt: DEFAULT_FILTERS,
            n_taps: DEFAULT_TAPS,
        }
    }

    pub fn resnet(n_layers: usize) -> Self {
        Architecture::Resnet {
            n_layers,
            n_filt: DEFAULT_FILTERS,
            n_taps: DEFAULT_TAPS,
        }
    }

    pub fn inception(n_modules: usize) -> Self {
        Architecture::Inception {
            n_modules,
            n_filt: DEFAULT_FILTERS,
            branch_taps: default_branch_taps(),
        }
    }

    pub fn cldnn() -> Self {
        Architecture::Cldnn {
            n_filt: DEFAULT_FILTERS,
            n_taps: DEFAULT_TAPS,
            lstm_units: DEFAULT_LSTM_UNITS,
            bypass: Bypass::FirstConv,
        }
    }

    pub fn conv_matched_filter() -> Self {
        Architecture::ConvMatchedFilter {
            n_filt: DEFAULT_FILTERS,
            n_taps: DEFAULT_TAPS,
            pool_width: default_pool(),
            lstm_units: DEFAULT_LSTM_UNITS,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Architecture::Baseline { .. } => "baseline",
            Architecture::DeepCnn { .. } => "deep_cnn",
            Architecture::Resnet { .. } => "resnet",
            Architecture::Inception { .. } => "inception",
            Architecture::Cldnn { .. } => "cldnn",
            Architecture::ConvMatchedFilter { .. } => "conv_matched_filter",
        }
    }

    pub fn build(&self, opts: &ArchOptions) -> Result<ModelSpec, ArchError> {
        match *self {
            Architecture::Baseline { n_filt, n_taps } => build_baseline_cnn(n_filt, n_taps, opts),
            Architecture::DeepCnn {
                depth,
                n_filt,
                n_taps,
            } => build_deep_cnn(depth, n_filt, n_taps, opts),
            Architecture::Resnet {
                n_layers,
                n_filt,
                n_taps,
            } => build_resnet(n_layers, n_filt, n_taps, opts),
            Architecture::Inception {
                n_modules,
                n_filt,
                branch_taps,
            } => build_inception(n_modules, n_filt, branch_taps, opts),
            Architecture::Cldnn {
                n_filt,
                n_taps,
                lstm_units,
                bypass,
            } => build_cldnn(n_filt, n_taps, lstm_units, bypass, opts),
            Architecture::ConvMatchedFilter {
                n_filt,
                n_taps,
                pool_width,
                lstm_units,
            } => build_conv_matched_filter(n_filt, n_taps, pool_width, lstm_units, opts),
        }
    }
}

/// Index and output shape of the layer called `name`.
pub fn find_layer(spec: &ModelSpec, name: &str) -> Option<(usize, ActShape)> {
    let shapes = spec.check().ok()?;
    spec.layers
        .iter()
        .position(|l| l.name == name)
        .map(|i| (i, shapes[i]))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn opts() -> ArchOptions {
        ArchOptions::default()
    }

    fn count(spec: &ModelSpec, pred: impl Fn(&LayerKind) -> bool) -> usize {
        spec.layers.iter().filter(|l| pred(&l.kind)).count()
    }

    #[test]
    fn baseline_weight_shapes() {
        let spec = build_baseline_cnn(50, 8, &opts()).unwrap();
        let shapes = spec.param_shapes().unwrap();
        let convs: Vec<_> = spec
            .layers
            .iter()
            .zip(&shapes)
            .filter(|(l, _)| matches!(l.kind, LayerKind::Conv1d { .. }))
            .map(|(_, s)| s[0].clone())
            .collect();
        assert_eq!(convs, vec![vec![50, 2, 8], vec![50, 50, 8]]);
        assert_eq!(spec.classes(), 11);
    }

    #[test]
    fn baseline_filter_sweep_domain_and_monotone_params() {
        let counts: Vec<usize> = (20..=90)
            .step_by(10)
            .map(|n| build_baseline_cnn(n, 3, &opts()).unwrap().param_count().unwrap())
            .collect();
        assert_eq!(counts.len(), 8);
        assert!(counts.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn deep_cnn_consistency() {
        assert_eq!(
            build_deep_cnn(2, 50, 8, &opts()).unwrap(),
            build_baseline_cnn(50, 8, &opts()).unwrap()
        );
        assert!(matches!(
            build_deep_cnn(1, 50, 8, &opts()),
            Err(ArchError::Precondition { .. })
        ));
        let deep = build_deep_cnn(9, 50, 8, &opts()).unwrap();
        let shapes = deep.check().unwrap();
        for (l, s) in deep.layers.iter().zip(&shapes) {
            if matches!(l.kind, LayerKind::Conv1d { .. }) {
                assert_eq!(*s, ActShape::Seq { channels: 50, len: 128 });
            }
        }
        assert_eq!(count(&deep, |k| matches!(k, LayerKind::Conv1d { .. })), 9);
    }

    #[test]
    fn resnet_topology() {
        let spec = build_resnet(9, 50, 8, &opts()).unwrap();
        assert_eq!(count(&spec, |k| *k == LayerKind::ResidualAdd), 4);
        // 9 main convs + one projection for the 2-channel input
        assert_eq!(count(&spec, |k| matches!(k, LayerKind::Conv1d { .. })), 10);
        let five = build_resnet(5, 50, 8, &opts()).unwrap();
        assert_eq!(count(&five, |k| *k == LayerKind::ResidualAdd), 2);
        assert!(build_resnet(4, 50, 8, &opts()).is_err());
        assert!(build_resnet(10, 50, 8, &opts()).is_err());
    }

    #[test]
    fn inception_channels() {
        let spec = build_inception(4, 50, [3, 8], &opts()).unwrap();
        let shapes = spec.check().unwrap();
        for (l, s) in spec.layers.iter().zip(&shapes) {
            if l.kind == LayerKind::Concat {
                assert_eq!(*s, ActShape::Seq { channels: 150, len: 128 });
            }
        }
        assert!(build_inception(0, 50, [3, 8], &opts()).is_err());
        assert!(build_inception(5, 50, [3, 8], &opts()).is_err());
    }

    #[test]
    fn cldnn_bypass_variants() {
        let spec = build_cldnn(50, 8, 50, Bypass::FirstConv, &opts()).unwrap();
        let (_, shape) = find_layer(&spec, "bypass_concat").unwrap();
        assert_eq!(shape, ActShape::Seq { channels: 100, len: 128 });
        let raw = build_cldnn(50, 8, 50, Bypass::RawInput, &opts()).unwrap();
        assert_eq!(
            find_layer(&raw, "bypass_concat").unwrap().1,
            ActShape::Seq { channels: 52, len: 128 }
        );
        let plain = build_cldnn(50, 8, 50, Bypass::None, &opts()).unwrap();
        assert!(find_layer(&plain, "bypass_concat").is_none());
        assert_eq!(count(&plain, |k| matches!(k, LayerKind::Lstm { .. })), 1);
    }

    #[test]
    fn matched_filter_pooling() {
        let spec = build_conv_matched_filter(50, 8, 2, 50, &opts()).unwrap();
        assert_eq!(
            find_layer(&spec, "pool").unwrap().1,
            ActShape::Seq { channels: 50, len: 64 }
        );
        let no_pool = build_conv_matched_filter(50, 8, 1, 50, &opts()).unwrap();
        assert!(find_layer(&no_pool, "pool").is_none());
        for taps in 3..=12 {
            build_conv_matched_filter(50, taps, 2, 50, &opts()).unwrap();
        }
    }

    #[test]
    fn architecture_json_defaults() {
        let a: Architecture = serde_json::from_str(r#"{"arch":"baseline"}"#).unwrap();
        assert_eq!(a, Architecture::baseline());
        let c: Architecture = serde_json::from_str(r#"{"arch":"cldnn","bypass":"raw_input"}"#).unwrap();
        assert!(matches!(c, Architecture::Cldnn { bypass: Bypass::RawInput, .. }));
        assert!(serde_json::from_str::<Architecture>(r#"{"arch":"baseline","bogus":1}"#).is_err());
    }
}
