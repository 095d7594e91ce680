//! Declarative layer graphs and their static shape inference.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::synth::FRAME_LEN;

/// I and Q.
pub const INPUT_CHANNELS: usize = 2;
pub const DEFAULT_CLASSES: usize = 11;

/// Where a layer reads its operand from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Input,
    Layer(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerKind {
    Conv1d { filters: usize, taps: usize },
    Dense { units: usize },
    Relu,
    Dropout { rate: f64 },
    Maxpool { width: usize, stride: usize },
    Lstm { units: usize },
    ResidualAdd,
    Concat,
    SoftmaxHead { classes: usize },
}

impl LayerKind {
    pub fn label(&self) -> &'static str {
        match self {
            LayerKind::Conv1d { .. } => "conv1d",
            LayerKind::Dense { .. } => "dense",
            LayerKind::Relu => "relu",
            LayerKind::Dropout { .. } => "dropout",
            LayerKind::Maxpool { .. } => "maxpool",
            LayerKind::Lstm { .. } => "lstm",
            LayerKind::ResidualAdd => "residual_add",
            LayerKind::Concat => "concat",
            LayerKind::SoftmaxHead { .. } => "softmax_head",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: LayerKind,
    pub inputs: Vec<Source>,
}

/// Activation shape of one example (batch axis omitted).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ActShape {
    Seq { channels: usize, len: usize },
    Flat(usize),
}

impl ActShape {
    pub fn size(self) -> usize {
        match self {
            ActShape::Seq { channels, len } => channels * len,
            ActShape::Flat(n) => n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SpecError {
    #[error("model has no layers")]
    Empty,
    #[error("layer {index} ({name}): {detail}")]
    Layer {
        index: usize,
        name: String,
        detail: String,
    },
    #[error("expected exactly one softmax_head as the last layer, found {0}")]
    Head(String),
}

/// A model: a DAG of layers over a fixed `2 x 128` input, listed in
/// evaluation order. Layers may only read the input or earlier layers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub input_channels: usize,
    pub input_len: usize,
    pub layers: Vec<LayerSpec>,
}

impl ModelSpec {
    pub fn new(layers: Vec<LayerSpec>) -> Self {
        ModelSpec {
            input_channels: INPUT_CHANNELS,
            input_len: FRAME_LEN,
            layers,
        }
    }

    pub fn input_shape(&self) -> ActShape {
        ActShape::Seq {
            channels: self.input_channels,
            len: self.input_len,
        }
    }

    pub fn classes(&self) -> usize {
        match self.layers.last().map(|l| &l.kind) {
            Some(LayerKind::SoftmaxHead { classes }) => *classes,
            _ => 0,
        }
    }

    /// Canonical JSON used in checkpoints and for spec equality on disk.
    pub fn to_canonical_json(&self) -> String {
        serde_json::to_string(self).expect("model spec serializes")
    }

    /// Infers every layer's output shape, rejecting malformed graphs.
    pub fn check(&self) -> Result<Vec<ActShape>, SpecError> {
        if self.layers.is_empty() {
            return Err(SpecError::Empty);
        }
        let heads: Vec<usize> = self
            .layers
            .iter()
            .enumerate()
            .filter(|(_, l)| matches!(l.kind, LayerKind::SoftmaxHead { .. }))
            .map(|(i, _)| i)
            .collect();
        if heads != [self.layers.len() - 1] {
            return Err(SpecError::Head(format!("{} at {heads:?}", heads.len())));
        }
        if self.input_channels == 0 || self.input_len == 0 {
            return Err(SpecError::Layer {
                index: 0,
                name: "input".into(),
                detail: "input extents must be positive".into(),
            });
        }

        let mut shapes: Vec<ActShape> = Vec::with_capacity(self.layers.len());
        for (index, layer) in self.layers.iter().enumerate() {
            let fail = |detail: String| SpecError::Layer {
                index,
                name: layer.name.clone(),
                detail,
            };
            let mut ins = Vec::with_capacity(layer.inputs.len());
            for src in &layer.inputs {
                match *src {
                    Source::Input => ins.push(self.input_shape()),
                    Source::Layer(j) if j < index => ins.push(shapes[j]),
                    Source::Layer(j) => {
                        return Err(fail(format!("reads layer {j}, which is not earlier")))
                    }
                }
            }
            let arity_ok = match layer.kind {
                LayerKind::ResidualAdd => ins.len() == 2,
                LayerKind::Concat => ins.len() >= 2,
                _ => ins.len() == 1,
            };
            if !arity_ok {
                return Err(fail(format!(
                    "{} cannot take {} inputs",
                    layer.kind.label(),
                    ins.len()
                )));
            }
            let seq = |s: ActShape| match s {
                ActShape::Seq { channels, len } => Ok((channels, len)),
                ActShape::Flat(_) => Err(fail(format!(
                    "{} needs a [channels x time] input",
                    layer.kind.label()
                ))),
            };
            let out = match layer.kind {
                LayerKind::Conv1d { filters, taps } => {
                    if filters == 0 || taps == 0 {
                        return Err(fail("filters and taps must be >= 1".into()));
                    }
                    let (_, len) = seq(ins[0])?;
                    ActShape::Seq {
                        channels: filters,
                        len,
                    }
                }
                LayerKind::Dense { units } => {
                    if units == 0 {
                        return Err(fail("units must be >= 1".into()));
                    }
                    ActShape::Flat(units)
                }
                LayerKind::Relu => ins[0],
                LayerKind::Dropout { rate } => {
                    if !(0.0..1.0).contains(&rate) {
                        return Err(fail(format!("dropout rate {rate} outside [0, 1)")));
                    }
                    ins[0]
                }
                LayerKind::Maxpool { width, stride } => {
                    let (channels, len) = seq(ins[0])?;
                    if width == 0 || stride == 0 || width > len {
                        return Err(fail(format!(
                            "pool width {width} / stride {stride} invalid for length {len}"
                        )));
                    }
                    ActShape::Seq {
                        channels,
                        len: (len - width) / stride + 1,
                    }
                }
                LayerKind::Lstm { units } => {
                    if units == 0 {
                        return Err(fail("units must be >= 1".into()));
                    }
                    seq(ins[0])?;
                    ActShape::Flat(units)
                }
                LayerKind::ResidualAdd => {
                    if ins[0] != ins[1] {
                        return Err(fail(format!(
                            "operand shapes differ: {:?} vs {:?}",
                            ins[0], ins[1]
                        )));
                    }
                    ins[0]
                }
                LayerKind::Concat => {
                    let mut total = 0;
                    let (_, len0) = seq(ins[0])?;
                    for &s in &ins {
                        let (c, len) = seq(s)?;
                        if len != len0 {
                            return Err(fail(format!("time extents differ: {len} vs {len0}")));
                        }
                        total += c;
                    }
                    ActShape::Seq {
                        channels: total,
                        len: len0,
                    }
                }
                LayerKind::SoftmaxHead { classes } => {
                    if classes < 2 {
                        return Err(fail("softmax head needs at least 2 classes".into()));
                    }
                    ActShape::Flat(classes)
                }
            };
            shapes.push(out);
        }
        Ok(shapes)
    }

    /// Parameter tensor shapes per layer, in evaluation order.
    pub fn param_shapes(&self) -> Result<Vec<Vec<Vec<usize>>>, SpecError> {
        let shapes = self.check()?;
        let input_of = |l: &LayerSpec| match l.inputs[0] {
            Source::Input => self.input_shape(),
            Source::Layer(j) => shapes[j],
        };
        Ok(self
            .layers
            .iter()
            .map(|layer| match layer.kind {
                LayerKind::Conv1d { filters, taps } => {
                    let ActShape::Seq { channels, .. } = input_of(layer) else {
                        unreachable!("checked")
                    };
                    vec![vec![filters, channels, taps], vec![filters]]
                }
                LayerKind::Dense { units } => {
                    vec![vec![units, input_of(layer).size()], vec![units]]
                }
                LayerKind::SoftmaxHead { classes } => {
                    vec![vec![classes, input_of(layer).size()], vec![classes]]
                }
                LayerKind::Lstm { units } => {
                    let ActShape::Seq { channels, .. } = input_of(layer) else {
                        unreachable!("checked")
                    };
                    vec![
                        vec![4 * units, channels],
                        vec![4 * units, units],
                        vec![4 * units],
                    ]
                }
                _ => Vec::new(),
            })
            .collect())
    }

    pub fn param_count(&self) -> Result<usize, SpecError> {
        Ok(self
            .param_shapes()?
            .iter()
            .flatten()
            .map(|s| s.iter().product::<usize>())
            .sum())
    }

    /// Output shape of layer `index`.
    pub fn output_shape(&self, index: usize) -> Result<ActShape, SpecError> {
        let shapes = self.check()?;
        shapes.get(index).copied().ok_or_else(|| SpecError::Layer {
            index,
            name: String::new(),
            detail: format!("no such layer (model has {})", shapes.len()),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layer(name: &str, kind: LayerKind, inputs: Vec<Source>) -> LayerSpec {
        LayerSpec {
            name: name.into(),
            kind,
            inputs,
        }
    }

    #[test]
    fn rejects_forward_reference() {
        let spec = ModelSpec::new(vec![
            layer("a", LayerKind::Relu, vec![Source::Layer(1)]),
            layer("h", LayerKind::SoftmaxHead { classes: 11 }, vec![Source::Layer(0)]),
        ]);
        assert!(matches!(spec.check(), Err(SpecError::Layer { index: 0, .. })));
    }

    #[test]
    fn requires_single_terminal_head() {
        let spec = ModelSpec::new(vec![
            layer("h1", LayerKind::SoftmaxHead { classes: 11 }, vec![Source::Input]),
            layer("h2", LayerKind::SoftmaxHead { classes: 11 }, vec![Source::Layer(0)]),
        ]);
        assert!(matches!(spec.check(), Err(SpecError::Head(_))));
        let none = ModelSpec::new(vec![layer("r", LayerKind::Relu, vec![Source::Input])]);
        assert!(matches!(none.check(), Err(SpecError::Head(_))));
    }

    #[test]
    fn residual_operands_must_match() {
        let spec = ModelSpec::new(vec![
            layer("c", LayerKind::Conv1d { filters: 4, taps: 3 }, vec![Source::Input]),
            layer("add", LayerKind::ResidualAdd, vec![Source::Input, Source::Layer(0)]),
            layer("h", LayerKind::SoftmaxHead { classes: 11 }, vec![Source::Layer(1)]),
        ]);
        assert!(spec.check().is_err());
    }

    #[test]
    fn concat_requires_equal_time() {
        let spec = ModelSpec::new(vec![
            layer("p", LayerKind::Maxpool { width: 2, stride: 2 }, vec![Source::Input]),
            layer("cat", LayerKind::Concat, vec![Source::Input, Source::Layer(0)]),
            layer("h", LayerKind::SoftmaxHead { classes: 11 }, vec![Source::Layer(1)]),
        ]);
        assert!(spec.check().is_err());
    }

    #[test]
    fn invalid_layer_parameters() {
        for kind in [
            LayerKind::Conv1d { filters: 0, taps: 3 },
            LayerKind::Conv1d { filters: 3, taps: 0 },
            LayerKind::Dropout { rate: 1.0 },
            LayerKind::Maxpool { width: 129, stride: 1 },
        ] {
            let spec = ModelSpec::new(vec![
                layer("x", kind, vec![Source::Input]),
                layer("h", LayerKind::SoftmaxHead { classes: 11 }, vec![Source::Layer(0)]),
            ]);
            assert!(spec.check().is_err());
        }
    }

    #[test]
    fn json_round_trip() {
        let spec = ModelSpec::new(vec![
            layer("c", LayerKind::Conv1d { filters: 4, taps: 3 }, vec![Source::Input]),
            layer("h", LayerKind::SoftmaxHead { classes: 11 }, vec![Source::Layer(0)]),
        ]);
        let json = spec.to_canonical_json();
        assert!(json.contains(r#""kind":"conv1d""#), "{json}");
        let back: ModelSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back, spec);
    }
}
