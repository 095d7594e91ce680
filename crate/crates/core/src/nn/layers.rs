//! Single-example layer functions on unbatched tensors.
//!
//! These wrap the tape kernels for direct use and testing; models are
//! recorded through [`record_forward`](super::record_forward) instead.

use rand::Rng;

use super::state::Mode;
use crate::engine::{Real, Result, Tape, Tensor};

fn unbatch<T: Real>(t: &Tensor<T>) -> Tensor<T> {
    t.clone().reshape(t.shape()[1..].to_vec()).expect("drop batch axis")
}

fn batch<T: Real>(t: &Tensor<T>) -> Tensor<T> {
    let mut shape = vec![1];
    shape.extend_from_slice(t.shape());
    t.clone().reshape(shape).expect("add batch axis")
}

/// `[C_in, L]` input, `[F, C_in, K]` weights, `[F]` bias, same padding.
pub fn conv1d<T: Real>(input: &Tensor<T>, weights: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let x = tape.leaf(batch(input))?;
    let w = tape.leaf(weights.clone())?;
    let b = tape.leaf(bias.clone())?;
    let y = tape.conv1d(x, w, b)?;
    Ok(unbatch(tape.value(y)))
}

/// `[N]` input, `[M, N]` weights, `[M]` bias.
pub fn dense<T: Real>(input: &Tensor<T>, weights: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let x = tape.leaf(batch(input))?;
    let w = tape.leaf(weights.clone())?;
    let b = tape.leaf(bias.clone())?;
    let y = tape.dense(x, w, b)?;
    Ok(unbatch(tape.value(y)))
}

/// ReLU followed by inverted dropout (train mode only).
pub fn relu_dropout<T: Real, R: Rng + ?Sized>(
    input: &Tensor<T>,
    rate: f64,
    mode: Mode,
    rng: &mut R,
) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let x = tape.leaf(input.clone())?;
    let r = tape.relu(x)?;
    let y = match mode {
        Mode::Train => tape.dropout(r, rate, rng)?,
        Mode::Infer => {
            if !(0.0..1.0).contains(&rate) {
                return Err(crate::engine::EngineError::Argument {
                    op: "dropout",
                    detail: format!("rate {rate} outside [0, 1)"),
                });
            }
            r
        }
    };
    Ok(tape.value(y).clone())
}

/// `[C, L]` input, windowed maximum per channel.
pub fn maxpool<T: Real>(input: &Tensor<T>, width: usize, stride: usize) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let x = tape.leaf(batch(input))?;
    let y = tape.maxpool(x, width, stride)?;
    Ok(unbatch(tape.value(y)))
}

/// LSTM weights: `wx: [4H, C]`, `wh: [4H, H]`, `b: [4H]`, gates i, f, g, o.
#[derive(Clone, Debug)]
pub struct LstmWeights<T: Real> {
    pub wx: Tensor<T>,
    pub wh: Tensor<T>,
    pub b: Tensor<T>,
}

/// Runs an LSTM from a zero state over `[L, C]` inputs, returning `[L, H]`.
pub fn lstm_sequence<T: Real>(inputs: &Tensor<T>, weights: &LstmWeights<T>) -> Result<Tensor<T>> {
    if inputs.rank() != 2 {
        return Err(crate::engine::EngineError::Shape {
            op: "lstm_sequence",
            detail: format!("expected [L, C], got {:?}", inputs.shape()),
        });
    }
    let (len, ch) = (inputs.shape()[0], inputs.shape()[1]);
    let mut cl = vec![T::zero(); len * ch];
    for t in 0..len {
        for c in 0..ch {
            cl[c * len + t] = inputs.data()[t * ch + c];
        }
    }
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::new([1, ch, len], cl)?)?;
    let wx = tape.leaf(weights.wx.clone())?;
    let wh = tape.leaf(weights.wh.clone())?;
    let b = tape.leaf(weights.b.clone())?;
    let y = tape.lstm(x, wx, wh, b, true)?;
    let out = tape.value(y);
    let hidden = out.shape()[1];
    let mut lh = vec![T::zero(); len * hidden];
    for j in 0..hidden {
        for t in 0..len {
            lh[t * hidden + j] = out.data()[j * len + t];
        }
    }
    Tensor::new([len, hidden], lh)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn randn(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.sample(StandardNormal)).collect()).unwrap()
    }

    /// Nested-loop same-padded cross-correlation, written independently of the im2col kernel.
    fn conv_oracle(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>) -> Tensor<f64> {
        let (cin, len) = (x.shape()[0], x.shape()[1]);
        let (f, k) = (w.shape()[0], w.shape()[2]);
        let left = k / 2;
        let mut out = vec![0.0; f * len];
        for fi in 0..f {
            for t in 0..len {
                let mut acc = b.data()[fi];
                for c in 0..cin {
                    for kk in 0..k {
                        let pos = t as isize + kk as isize - left as isize;
                        if pos >= 0 && (pos as usize) < len {
                            acc += w.data()[(fi * cin + c) * k + kk] * x.data()[c * len + pos as usize];
                        }
                    }
                }
                out[fi * len + t] = acc;
            }
        }
        Tensor::new([f, len], out).unwrap()
    }

    #[test]
    fn conv_identity_and_known_values() {
        let x = Tensor::from_f64([1, 5], &[1.0, -2.0, 3.0, 0.5, 4.0]).unwrap();
        let w = Tensor::from_f64([1, 1, 1], &[1.0]).unwrap();
        let b = Tensor::zeros([1]);
        assert_eq!(conv1d(&x, &w, &b).unwrap(), x);

        let x = Tensor::from_f64([1, 3], &[1.0, 2.0, 3.0]).unwrap();
        let w = Tensor::from_f64([1, 1, 2], &[1.0, 1.0]).unwrap();
        let y = conv1d(&x, &w, &b).unwrap();
        assert_eq!(y.data(), &[1.0, 3.0, 5.0]);
        assert_eq!(y, conv_oracle(&x, &w, &b));
    }

    #[test]
    fn conv_matches_oracle_and_is_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for taps in [1, 2, 3, 7, 8, 12] {
            let x = randn(&[2, 20], &mut rng);
            let z = randn(&[2, 20], &mut rng);
            let w = randn(&[4, 2, taps], &mut rng);
            let b = randn(&[4], &mut rng);
            let y = conv1d(&x, &w, &b).unwrap();
            assert!(y.max_abs_diff(&conv_oracle(&x, &w, &b)) < 1e-12);
            assert_eq!(y.shape(), &[4, 20]);

            let zero = Tensor::zeros([4]);
            let combo = x.zip_with(&z, |a, c| 2.0 * a - 0.5 * c).unwrap();
            let lhs = conv1d(&combo, &w, &zero).unwrap();
            let rhs = conv1d(&x, &w, &zero)
                .unwrap()
                .zip_with(&conv1d(&z, &w, &zero).unwrap(), |a, c| 2.0 * a - 0.5 * c)
                .unwrap();
            assert!(lhs.max_abs_diff(&rhs) < 1e-12);
        }
    }

    #[test]
    fn dense_examples() {
        let x = Tensor::from_f64([2], &[3.0, 4.0]).unwrap();
        let w = Tensor::from_f64([2, 2], &[1.0, 1.0, 1.0, -1.0]).unwrap();
        let b = Tensor::zeros([2]);
        assert_eq!(dense(&x, &w, &b).unwrap().data(), &[7.0, -1.0]);
        let eye = Tensor::from_f64([2, 2], &[1.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(dense(&x, &eye, &b).unwrap(), x);
        let bad = Tensor::<f64>::zeros([2, 3]);
        assert!(dense(&x, &bad, &b).is_err());
    }

    #[test]
    fn relu_dropout_modes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = Tensor::<f64>::from_f64([3], &[-1.0, 0.0, 2.0]).unwrap();
        let y = relu_dropout(&x, 0.5, Mode::Infer, &mut rng).unwrap();
        assert_eq!(y.data(), &[0.0, 0.0, 2.0]);
        for mode in [Mode::Train, Mode::Infer] {
            assert_eq!(relu_dropout(&x, 0.0, mode, &mut rng).unwrap().data(), &[0.0, 0.0, 2.0]);
        }
    }

    #[test]
    fn inverted_dropout_preserves_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let x = Tensor::<f64>::ones([100_000]);
        let y = relu_dropout(&x, 0.5, Mode::Train, &mut rng).unwrap();
        let mean = y.sum() / 1e5;
        assert!((mean - 1.0).abs() < 0.01, "mean {mean}");
        assert!(y.data().iter().all(|&v| v == 0.0 || v == 2.0));
    }

    #[test]
    fn maxpool_examples() {
        let x = Tensor::<f64>::from_f64([1, 4], &[1.0, 3.0, 2.0, 5.0]).unwrap();
        assert_eq!(maxpool(&x, 2, 2).unwrap().data(), &[3.0, 5.0]);
        assert_eq!(maxpool(&x, 1, 1).unwrap(), x);
        assert!(maxpool(&x, 5, 1).is_err());
        let odd = Tensor::<f64>::from_f64([1, 5], &[1.0, 3.0, 2.0, 5.0, 9.0]).unwrap();
        assert_eq!(maxpool(&odd, 2, 2).unwrap().shape(), &[1, 2]);
    }

    fn sigmoid(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    /// Step-by-step reference recurrence on plain vectors.
    fn lstm_oracle(x: &Tensor<f64>, w: &LstmWeights<f64>) -> Vec<Vec<f64>> {
        let (len, ch) = (x.shape()[0], x.shape()[1]);
        let h_n = w.wh.shape()[1];
        let mut h = vec![0.0; h_n];
        let mut c = vec![0.0; h_n];
        let mut out = Vec::new();
        for t in 0..len {
            let mut z = vec![0.0; 4 * h_n];
            for (g, zg) in z.iter_mut().enumerate() {
                *zg = w.b.data()[g];
                for k in 0..ch {
                    *zg += w.wx.data()[g * ch + k] * x.data()[t * ch + k];
                }
                for k in 0..h_n {
                    *zg += w.wh.data()[g * h_n + k] * h[k];
                }
            }
            for j in 0..h_n {
                let i = sigmoid(z[j]);
                let f = sigmoid(z[h_n + j]);
                let g = z[2 * h_n + j].tanh();
                let o = sigmoid(z[3 * h_n + j]);
                c[j] = f * c[j] + i * g;
                h[j] = o * c[j].tanh();
            }
            out.push(h.clone());
        }
        out
    }

    #[test]
    fn lstm_zero_weights_give_zero() {
        let w = LstmWeights {
            wx: Tensor::<f64>::zeros([12, 2]),
            wh: Tensor::zeros([12, 3]),
            b: Tensor::zeros([12]),
        };
        let x = Tensor::from_f64([4, 2], &[1.0, -1.0, 2.0, 0.5, 3.0, 3.0, -2.0, 1.0]).unwrap();
        let y = lstm_sequence(&x, &w).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn lstm_is_stateful() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let w = LstmWeights {
            wx: randn(&[8, 2], &mut rng),
            wh: randn(&[8, 2], &mut rng),
            b: randn(&[8], &mut rng),
        };
        let x = Tensor::from_f64([2, 2], &[0.7, -0.3, 0.7, -0.3]).unwrap();
        let y = lstm_sequence(&x, &w).unwrap();
        assert!((y.data()[0] - y.data()[2]).abs() > 1e-6);
    }

    #[test]
    fn lstm_matches_stepwise_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let w = LstmWeights {
            wx: randn(&[20, 3], &mut rng),
            wh: randn(&[20, 5], &mut rng),
            b: randn(&[20], &mut rng),
        };
        let x = randn(&[4, 3], &mut rng);
        let y = lstm_sequence(&x, &w).unwrap();
        let want = lstm_oracle(&x, &w);
        for (t, row) in want.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                assert!((y.data()[t * 5 + j] - v).abs() < 1e-6);
            }
        }
    }
}
