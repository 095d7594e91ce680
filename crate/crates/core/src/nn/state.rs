use rand::Rng;
use rand_distr::Uniform;
use serde::{Deserialize, Serialize};

use super::spec::{LayerKind, ModelSpec, SpecError};
use crate::engine::{Real, Tensor};
use crate::rng;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Train,
    #[default]
    Infer,
}

/// Learned parameters of a [`ModelSpec`], flattened in layer order.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelState<T: Real = f32> {
    pub params: Vec<Tensor<T>>,
    /// Root of the dropout streams.
    pub seed: u64,
    pub mode: Mode,
}

impl<T: Real> ModelState<T> {
    /// Fan-in scaled uniform init for conv/dense/head weights, zero biases;
    /// LSTM weights uniform in `±1/sqrt(H)` with forget-gate bias 1.
    pub fn init(spec: &ModelSpec, seed: u64) -> Result<Self, SpecError> {
        let shapes = spec.param_shapes()?;
        let mut params = Vec::new();
        for (index, (layer, layer_shapes)) in spec.layers.iter().zip(&shapes).enumerate() {
            let mut r = rng::stream(seed, "init", &[index as u64]);
            match layer.kind {
                LayerKind::Conv1d { .. } | LayerKind::Dense { .. } | LayerKind::SoftmaxHead { .. } => {
                    let w = &layer_shapes[0];
                    let fan_in: usize = w[1..].iter().product();
                    let bound = (3.0 / fan_in as f64).sqrt();
                    params.push(uniform(w, bound, &mut r));
                    params.push(Tensor::zeros(layer_shapes[1].clone()));
                }
                LayerKind::Lstm { units } => {
                    let bound = 1.0 / (units as f64).sqrt();
                    params.push(uniform(&layer_shapes[0], bound, &mut r));
                    params.push(uniform(&layer_shapes[1], bound, &mut r));
                    let mut b = vec![T::zero(); 4 * units];
                    b[units..2 * units].fill(T::one());
                    params.push(Tensor::new([4 * units], b).expect("bias shape"));
                }
                _ => {}
            }
        }
        Ok(ModelState {
            params,
            seed,
            mode: Mode::Infer,
        })
    }

    /// Checks the tensor count and every shape against `spec`.
    pub fn matches(&self, spec: &ModelSpec) -> bool {
        let Ok(shapes) = spec.param_shapes() else {
            return false;
        };
        let flat: Vec<&Vec<usize>> = shapes.iter().flatten().collect();
        flat.len() == self.params.len()
            && flat.iter().zip(&self.params).all(|(s, p)| s.as_slice() == p.shape())
    }

    /// Index of the first tensor owned by each layer.
    pub fn layer_offsets(spec: &ModelSpec) -> Result<Vec<usize>, SpecError> {
        let shapes = spec.param_shapes()?;
        let mut off = 0;
        Ok(shapes
            .iter()
            .map(|s| {
                let here = off;
                off += s.len();
                here
            })
            .collect())
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.len()).sum()
    }

    pub fn cast<U: Real>(&self) -> ModelState<U> {
        ModelState {
            params: self.params.iter().map(|p| p.cast()).collect(),
            seed: self.seed,
            mode: self.mode,
        }
    }
}

fn uniform<T: Real, R: Rng>(shape: &[usize], bound: f64, rng: &mut R) -> Tensor<T> {
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| T::from_f64(rng.sample(dist))).collect())
        .expect("init shape")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::arch::{build_cldnn, build_resnet, ArchOptions, Bypass};

    #[test]
    fn shapes_follow_spec() {
        let spec = build_resnet(5, 8, 3, &ArchOptions::default()).unwrap();
        let state = ModelState::<f32>::init(&spec, 1).unwrap();
        assert!(state.matches(&spec));
        assert_eq!(state.param_count(), spec.param_count().unwrap());
    }

    #[test]
    fn init_is_seeded() {
        let spec = build_cldnn(4, 3, 5, Bypass::FirstConv, &ArchOptions::default()).unwrap();
        let a = ModelState::<f32>::init(&spec, 7).unwrap();
        let b = ModelState::<f32>::init(&spec, 7).unwrap();
        let c = ModelState::<f32>::init(&spec, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        // forget-gate bias block starts at 1
        let offsets = ModelState::<f32>::layer_offsets(&spec).unwrap();
        let lstm = spec.layers.iter().position(|l| l.name == "lstm").unwrap();
        let bias = &a.params[offsets[lstm] + 2];
        assert_eq!(&bias.data()[5..10], &[1.0; 5]);
        assert_eq!(&bias.data()[0..5], &[0.0; 5]);
    }
}
