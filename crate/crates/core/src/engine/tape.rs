//! Reverse-mode differentiation over a linear record of operations.
//!
//! Every op pushes a node holding its output value plus whatever the backward
//! pass needs. Nodes are appended in evaluation order, so the record is a
//! topological order by construction and `backward` walks it in reverse.
//!
//! Layout conventions: sequence activations are `[batch, channels, time]`,
//! flat activations are `[batch, features]`.

use rand::Rng;

use super::error::{EngineError, Result};
use super::real::Real;
use super::tensor::Tensor;

/// Lower clamp applied to probabilities before taking the log.
pub const PROB_FLOOR: f64 = 1e-12;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

struct LstmCache<T> {
    batch: usize,
    channels: usize,
    len: usize,
    hidden: usize,
    /// Activated gates `[len][batch][4H]` in i, f, g, o order.
    gates: Vec<T>,
    /// Cell states `[len + 1][batch][H]`, slot 0 is the initial state.
    cells: Vec<T>,
    /// Hidden states `[len + 1][batch][H]`, slot 0 is the initial state.
    hiddens: Vec<T>,
    /// `tanh(c_t)` for t = 1..=len, `[len][batch][H]`.
    tanh_cells: Vec<T>,
}

enum Op<T> {
    Leaf,
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Sum(Var),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Dropout {
        x: Var,
        mask: Vec<T>,
    },
    Reshape(Var),
    Conv1d {
        x: Var,
        w: Var,
        b: Var,
        cols: Vec<T>,
        taps: usize,
        pad_left: usize,
    },
    Dense {
        x: Var,
        w: Var,
        b: Var,
    },
    MaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
    Concat {
        xs: Vec<Var>,
    },
    Lstm {
        x: Var,
        wx: Var,
        wh: Var,
        b: Var,
        cache: LstmCache<T>,
        sequences: bool,
    },
    SoftmaxXent {
        logits: Var,
        probs: Vec<T>,
        labels: Vec<usize>,
    },
    ChannelMean {
        x: Var,
        channel: usize,
    },
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Sum(_) => "sum",
            Op::Relu(_) => "relu",
            Op::Tanh(_) => "tanh",
            Op::Sigmoid(_) => "sigmoid",
            Op::Dropout { .. } => "dropout",
            Op::Reshape(_) => "reshape",
            Op::Conv1d { .. } => "conv1d",
            Op::Dense { .. } => "dense",
            Op::MaxPool { .. } => "maxpool",
            Op::Concat { .. } => "concat",
            Op::Lstm { .. } => "lstm",
            Op::SoftmaxXent { .. } => "softmax_cross_entropy",
            Op::ChannelMean { .. } => "channel_mean",
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

/// Single-owner record of a forward pass.
pub struct Tape<T: Real = f32> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Tensor<T>>>,
    backward_done: bool,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

fn expect_rank<T: Real>(op: &'static str, t: &Tensor<T>, rank: usize) -> Result<()> {
    if t.rank() != rank {
        return Err(EngineError::shape(
            op,
            format!("expected rank {rank}, got shape {:?}", t.shape()),
        ));
    }
    Ok(())
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            grads: Vec::new(),
            backward_done: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Result<Var> {
        if self.backward_done {
            return Err(EngineError::State("tape already differentiated"));
        }
        if !value.is_finite() {
            return Err(EngineError::NonFinite { op: op.name() });
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    fn val(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Records an input or parameter. All leaves receive gradients.
    pub fn leaf(&mut self, value: Tensor<T>) -> Result<Var> {
        if !value.is_finite() {
            return Err(EngineError::NumericInput { op: "leaf" });
        }
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        self.val(v)
    }

    /// Gradient of the last `backward` loss with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.val(a).zip_with(self.val(b), |x, y| x + y)?;
        self.push(out, Op::Add(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.val(a).zip_with(self.val(b), |x, y| x * y)?;
        self.push(out, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, k: T) -> Result<Var> {
        let out = self.val(a).map(|x| x * k);
        self.push(out, Op::Scale(a, k))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let out = Tensor::scalar(self.val(a).sum());
        self.push(out, Op::Sum(a))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let out = self.val(a).map(|x| if x > T::zero() { x } else { T::zero() });
        self.push(out, Op::Relu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let out = self.val(a).map(|x| x.tanh());
        self.push(out, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let out = self.val(a).map(sigmoid);
        self.push(out, Op::Sigmoid(a))
    }

    /// Inverted dropout. `rate == 0` records a pass-through.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, rate: f64, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(EngineError::Argument {
                op: "dropout",
                detail: format!("rate {rate} outside [0, 1)"),
            });
        }
        let keep = T::from_f64(1.0 / (1.0 - rate));
        let mask: Vec<T> = (0..self.val(x).len())
            .map(|_| {
                if rate > 0.0 && rng.random::<f64>() < rate {
                    T::zero()
                } else {
                    keep
                }
            })
            .collect();
        let input = self.val(x);
        let data = input
            .data()
            .iter()
            .zip(&mask)
            .map(|(&v, &m)| v * m)
            .collect();
        let out = Tensor::new(input.shape().to_vec(), data)?;
        self.push(out, Op::Dropout { x, mask })
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.val(x).clone().reshape(shape.to_vec())?;
        self.push(out, Op::Reshape(x))
    }

    /// `[B, C, L] -> [B, C * L]`.
    pub fn flatten(&mut self, x: Var) -> Result<Var> {
        let shape = self.val(x).shape().to_vec();
        let batch = shape[0];
        let rest: usize = shape[1..].iter().product();
        self.reshape(x, &[batch, rest])
    }

    /// Same-padded 1-D cross-correlation.
    ///
    /// `x: [B, C, L]`, `w: [F, C, K]`, `b: [F]` gives `[B, F, L]`. The
    /// `K - 1` padding zeros are split with the extra one on the left.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        const OP: &str = "conv1d";
        let (xv, wv, bv) = (self.val(x), self.val(w), self.val(b));
        expect_rank(OP, xv, 3)?;
        expect_rank(OP, wv, 3)?;
        let (batch, cin, len) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
        let (filters, wcin, taps) = (wv.shape()[0], wv.shape()[1], wv.shape()[2]);
        if wcin != cin {
            return Err(EngineError::shape(
                OP,
                format!("input has {cin} channels, weights expect {wcin}"),
            ));
        }
        if bv.shape() != [filters] {
            return Err(EngineError::shape(
                OP,
                format!("bias shape {:?}, expected [{filters}]", bv.shape()),
            ));
        }
        let pad_left = taps / 2;
        let ck = cin * taps;
        let mut cols = vec![T::zero(); batch * ck * len];
        let xd = xv.data();
        for bi in 0..batch {
            for c in 0..cin {
                let src = &xd[(bi * cin + c) * len..(bi * cin + c + 1) * len];
                for k in 0..taps {
                    let row = &mut cols[(bi * ck + c * taps + k) * len..][..len];
                    // row[t] = src[t + k - pad_left]
                    let lo = pad_left.saturating_sub(k);
                    let hi = (len + pad_left).saturating_sub(k).min(len);
                    if lo < hi {
                        let s0 = lo + k - pad_left;
                        row[lo..hi].copy_from_slice(&src[s0..s0 + (hi - lo)]);
                    }
                }
            }
        }
        let mut out = vec![T::zero(); batch * filters * len];
        let bd = bv.data();
        for bi in 0..batch {
            let y = &mut out[bi * filters * len..(bi + 1) * filters * len];
            for (f, row) in y.chunks_exact_mut(len).enumerate() {
                row.fill(bd[f]);
            }
            T::gemm(
                filters,
                ck,
                len,
                T::one(),
                wv.data(),
                ck as isize,
                1,
                &cols[bi * ck * len..],
                len as isize,
                1,
                T::one(),
                y,
                len as isize,
                1,
            );
        }
        let out = Tensor::new([batch, filters, len], out)?;
        self.push(
            out,
            Op::Conv1d {
                x,
                w,
                b,
                cols,
                taps,
                pad_left,
            },
        )
    }

    /// `x: [B, N]`, `w: [M, N]`, `b: [M]` gives `[B, M]`.
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        const OP: &str = "dense";
        let (xv, wv, bv) = (self.val(x), self.val(w), self.val(b));
        expect_rank(OP, xv, 2)?;
        expect_rank(OP, wv, 2)?;
        let (batch, n) = (xv.shape()[0], xv.shape()[1]);
        let (m, wn) = (wv.shape()[0], wv.shape()[1]);
        if wn != n {
            return Err(EngineError::shape(
                OP,
                format!("input has {n} features, weights expect {wn}"),
            ));
        }
        if bv.shape() != [m] {
            return Err(EngineError::shape(
                OP,
                format!("bias shape {:?}, expected [{m}]", bv.shape()),
            ));
        }
        let mut out = Vec::with_capacity(batch * m);
        for _ in 0..batch {
            out.extend_from_slice(bv.data());
        }
        T::gemm(
            batch,
            n,
            m,
            T::one(),
            xv.data(),
            n as isize,
            1,
            wv.data(),
            1,
            n as isize,
            T::one(),
            &mut out,
            m as isize,
            1,
        );
        let out = Tensor::new([batch, m], out)?;
        self.push(out, Op::Dense { x, w, b })
    }

    /// Windowed maximum over time, `[B, C, L] -> [B, C, (L - width) / stride + 1]`.
    pub fn maxpool(&mut self, x: Var, width: usize, stride: usize) -> Result<Var> {
        const OP: &str = "maxpool";
        let xv = self.val(x);
        expect_rank(OP, xv, 3)?;
        let (batch, ch, len) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
        if width == 0 || stride == 0 {
            return Err(EngineError::Argument {
                op: OP,
                detail: "width and stride must be positive".into(),
            });
        }
        if width > len {
            return Err(EngineError::shape(
                OP,
                format!("window {width} longer than input {len}"),
            ));
        }
        let out_len = (len - width) / stride + 1;
        let mut out = Vec::with_capacity(batch * ch * out_len);
        let mut argmax = Vec::with_capacity(batch * ch * out_len);
        for (r, row) in xv.data().chunks_exact(len).enumerate() {
            for o in 0..out_len {
                let start = o * stride;
                let mut best = start;
                for i in start + 1..start + width {
                    if row[i] > row[best] {
                        best = i;
                    }
                }
                out.push(row[best]);
                argmax.push(r * len + best);
            }
        }
        let out = Tensor::new([batch, ch, out_len], out)?;
        self.push(out, Op::MaxPool { x, argmax })
    }

    /// Concatenates `[B, C_i, L]` inputs along the channel axis.
    pub fn concat(&mut self, xs: &[Var]) -> Result<Var> {
        const OP: &str = "concat";
        if xs.is_empty() {
            return Err(EngineError::Argument {
                op: OP,
                detail: "no inputs".into(),
            });
        }
        let first = self.val(xs[0]);
        expect_rank(OP, first, 3)?;
        let (batch, len) = (first.shape()[0], first.shape()[2]);
        let mut total = 0;
        for &v in xs {
            let t = self.val(v);
            expect_rank(OP, t, 3)?;
            if t.shape()[0] != batch || t.shape()[2] != len {
                return Err(EngineError::shape(
                    OP,
                    format!("operand {:?} vs batch {batch}, time {len}", t.shape()),
                ));
            }
            total += t.shape()[1];
        }
        let mut out = Vec::with_capacity(batch * total * len);
        for bi in 0..batch {
            for &v in xs {
                let t = self.val(v);
                let c = t.shape()[1];
                out.extend_from_slice(&t.data()[bi * c * len..(bi + 1) * c * len]);
            }
        }
        let out = Tensor::new([batch, total, len], out)?;
        self.push(out, Op::Concat { xs: xs.to_vec() })
    }

    /// LSTM over the time axis of `x: [B, C, L]` from a zero initial state.
    ///
    /// Weights are `wx: [4H, C]`, `wh: [4H, H]`, `b: [4H]` with gate blocks
    /// ordered input, forget, candidate, output. Returns the final hidden
    /// state `[B, H]`, or every hidden state `[B, H, L]` when `sequences`.
    pub fn lstm(&mut self, x: Var, wx: Var, wh: Var, b: Var, sequences: bool) -> Result<Var> {
        const OP: &str = "lstm";
        let (xv, wxv, whv, bv) = (self.val(x), self.val(wx), self.val(wh), self.val(b));
        expect_rank(OP, xv, 3)?;
        expect_rank(OP, wxv, 2)?;
        expect_rank(OP, whv, 2)?;
        let (batch, channels, len) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
        let g4 = wxv.shape()[0];
        if g4 % 4 != 0 || g4 == 0 {
            return Err(EngineError::shape(OP, format!("gate rows {g4} not a multiple of 4")));
        }
        let hidden = g4 / 4;
        if wxv.shape()[1] != channels {
            return Err(EngineError::shape(
                OP,
                format!("input has {channels} channels, wx expects {}", wxv.shape()[1]),
            ));
        }
        if whv.shape() != [g4, hidden] || bv.shape() != [g4] {
            return Err(EngineError::shape(
                OP,
                format!("wh {:?} / b {:?} inconsistent with H={hidden}", whv.shape(), bv.shape()),
            ));
        }

        let bh = batch * hidden;
        let mut gates = vec![T::zero(); len * batch * g4];
        let mut cells = vec![T::zero(); (len + 1) * bh];
        let mut hiddens = vec![T::zero(); (len + 1) * bh];
        let mut tanh_cells = vec![T::zero(); len * bh];
        let xd = xv.data();
        let step_in = channels * len;

        for t in 0..len {
            let z = &mut gates[t * batch * g4..(t + 1) * batch * g4];
            for row in z.chunks_exact_mut(g4) {
                row.copy_from_slice(bv.data());
            }
            T::gemm(
                batch,
                channels,
                g4,
                T::one(),
                &xd[t..],
                step_in as isize,
                len as isize,
                wxv.data(),
                1,
                channels as isize,
                T::one(),
                z,
                g4 as isize,
                1,
            );
            let (h_prev, h_rest) = hiddens.split_at_mut((t + 1) * bh);
            let h_prev = &h_prev[t * bh..];
            T::gemm(
                batch,
                hidden,
                g4,
                T::one(),
                h_prev,
                hidden as isize,
                1,
                whv.data(),
                1,
                hidden as isize,
                T::one(),
                z,
                g4 as isize,
                1,
            );
            let h_next = &mut h_rest[..bh];
            let (c_prev, c_rest) = cells.split_at_mut((t + 1) * bh);
            let c_prev = &c_prev[t * bh..];
            let c_next = &mut c_rest[..bh];
            let tc = &mut tanh_cells[t * bh..(t + 1) * bh];
            for bi in 0..batch {
                let zr = &mut z[bi * g4..(bi + 1) * g4];
                for j in 0..hidden {
                    let i_g = sigmoid(zr[j]);
                    let f_g = sigmoid(zr[hidden + j]);
                    let g_g = zr[2 * hidden + j].tanh();
                    let o_g = sigmoid(zr[3 * hidden + j]);
                    zr[j] = i_g;
                    zr[hidden + j] = f_g;
                    zr[2 * hidden + j] = g_g;
                    zr[3 * hidden + j] = o_g;
                    let idx = bi * hidden + j;
                    let c = f_g * c_prev[idx] + i_g * g_g;
                    c_next[idx] = c;
                    let th = c.tanh();
                    tc[idx] = th;
                    h_next[idx] = o_g * th;
                }
            }
        }

        let out = if sequences {
            let mut out = vec![T::zero(); batch * hidden * len];
            for t in 0..len {
                let h = &hiddens[(t + 1) * bh..(t + 2) * bh];
                for bi in 0..batch {
                    for j in 0..hidden {
                        out[(bi * hidden + j) * len + t] = h[bi * hidden + j];
                    }
                }
            }
            Tensor::new([batch, hidden, len], out)?
        } else {
            Tensor::new([batch, hidden], hiddens[len * bh..].to_vec())?
        };
        let cache = LstmCache {
            batch,
            channels,
            len,
            hidden,
            gates,
            cells,
            hiddens,
            tanh_cells,
        };
        self.push(
            out,
            Op::Lstm {
                x,
                wx,
                wh,
                b,
                cache,
                sequences,
            },
        )
    }

    /// Mean categorical cross-entropy of `softmax(logits)` against one-hot labels.
    ///
    /// `logits: [B, K]`, one label per row. Returns a scalar node.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        const OP: &str = "softmax_cross_entropy";
        let lv = self.val(logits);
        expect_rank(OP, lv, 2)?;
        let (batch, k) = (lv.shape()[0], lv.shape()[1]);
        if labels.len() != batch {
            return Err(EngineError::shape(
                OP,
                format!("{} labels for batch of {batch}", labels.len()),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
            return Err(EngineError::Index { index: bad, len: k });
        }
        let mut probs = Vec::with_capacity(batch * k);
        let floor = T::from_f64(PROB_FLOOR);
        let mut loss = T::zero();
        for (row, &y) in lv.data().chunks_exact(k).zip(labels) {
            let p = super::loss::softmax_slice(row);
            loss -= p[y].max(floor).ln();
            probs.extend(p);
        }
        loss = loss / T::from_usize(batch);
        let out = Tensor::scalar(loss);
        self.push(
            out,
            Op::SoftmaxXent {
                logits,
                probs,
                labels: labels.to_vec(),
            },
        )
    }

    /// Mean over batch and time of one channel of a `[B, C, L]` node.
    pub fn channel_mean(&mut self, x: Var, channel: usize) -> Result<Var> {
        const OP: &str = "channel_mean";
        let xv = self.val(x);
        expect_rank(OP, xv, 3)?;
        let (batch, ch, len) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
        if channel >= ch {
            return Err(EngineError::Index {
                index: channel,
                len: ch,
            });
        }
        let mut acc = T::zero();
        for bi in 0..batch {
            acc += xv.data()[(bi * ch + channel) * len..][..len].iter().copied().sum();
        }
        let out = Tensor::scalar(acc / T::from_usize(batch * len));
        self.push(out, Op::ChannelMean { x, channel })
    }

    /// Runs the backward pass from a scalar `loss`, populating gradients for
    /// every node that the loss depends on.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes.is_empty() || loss.0 >= self.nodes.len() {
            return Err(EngineError::State("backward called before a forward pass"));
        }
        if self.backward_done {
            return Err(EngineError::State(
                "backward already ran on this tape; record a new forward pass",
            ));
        }
        if self.val(loss).len() != 1 {
            return Err(EngineError::shape(
                "backward",
                format!("loss must be scalar, got {:?}", self.val(loss).shape()),
            ));
        }
        self.backward_done = true;
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::ones(self.val(loss).shape().to_vec()));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    fn backprop_node(
        &self,
        i: usize,
        g: &Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
    ) -> Result<()> {
        let node = &self.nodes[i];
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                accumulate(grads, *a, g.clone())?;
                accumulate(grads, *b, g.clone())?;
            }
            Op::Mul(a, b) => {
                let ga = g.zip_with(self.val(*b), |x, y| x * y)?;
                let gb = g.zip_with(self.val(*a), |x, y| x * y)?;
                accumulate(grads, *a, ga)?;
                accumulate(grads, *b, gb)?;
            }
            Op::Scale(a, k) => {
                let k = *k;
                accumulate(grads, *a, g.map(|x| x * k))?;
            }
            Op::Sum(a) => {
                let shape = self.val(*a).shape().to_vec();
                accumulate(grads, *a, Tensor::full(shape, gd[0]))?;
            }
            Op::Relu(a) => {
                let ga = g.zip_with(self.val(*a), |gx, x| if x > T::zero() { gx } else { T::zero() })?;
                accumulate(grads, *a, ga)?;
            }
            Op::Tanh(a) => {
                let ga = g.zip_with(&node.value, |gx, y| gx * (T::one() - y * y))?;
                accumulate(grads, *a, ga)?;
            }
            Op::Sigmoid(a) => {
                let ga = g.zip_with(&node.value, |gx, y| gx * y * (T::one() - y))?;
                accumulate(grads, *a, ga)?;
            }
            Op::Dropout { x, mask } => {
                let data = gd.iter().zip(mask).map(|(&gx, &m)| gx * m).collect();
                accumulate(grads, *x, Tensor::new(g.shape().to_vec(), data)?)?;
            }
            Op::Reshape(x) => {
                let ga = g.clone().reshape(self.val(*x).shape().to_vec())?;
                accumulate(grads, *x, ga)?;
            }
            Op::Conv1d {
                x,
                w,
                b,
                cols,
                taps,
                pad_left,
            } => {
                let (xv, wv) = (self.val(*x), self.val(*w));
                let (batch, cin, len) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
                let filters = wv.shape()[0];
                let (taps, pad_left) = (*taps, *pad_left);
                let ck = cin * taps;

                let mut gw = vec![T::zero(); filters * ck];
                let mut gb = vec![T::zero(); filters];
                let mut gx = vec![T::zero(); batch * cin * len];
                let mut dcols = vec![T::zero(); ck * len];
                for bi in 0..batch {
                    let dy = &gd[bi * filters * len..(bi + 1) * filters * len];
                    for (f, row) in dy.chunks_exact(len).enumerate() {
                        gb[f] += row.iter().copied().sum();
                    }
                    T::gemm(
                        filters,
                        len,
                        ck,
                        T::one(),
                        dy,
                        len as isize,
                        1,
                        &cols[bi * ck * len..],
                        1,
                        len as isize,
                        T::one(),
                        &mut gw,
                        ck as isize,
                        1,
                    );
                    T::gemm(
                        ck,
                        filters,
                        len,
                        T::one(),
                        wv.data(),
                        1,
                        ck as isize,
                        dy,
                        len as isize,
                        1,
                        T::zero(),
                        &mut dcols,
                        len as isize,
                        1,
                    );
                    for c in 0..cin {
                        let dst = &mut gx[(bi * cin + c) * len..(bi * cin + c + 1) * len];
                        for k in 0..taps {
                            let row = &dcols[(c * taps + k) * len..][..len];
                            let lo = pad_left.saturating_sub(k);
                            let hi = (len + pad_left).saturating_sub(k).min(len);
                            if lo < hi {
                                let s0 = lo + k - pad_left;
                                for (d, &r) in dst[s0..s0 + (hi - lo)].iter_mut().zip(&row[lo..hi]) {
                                    *d += r;
                                }
                            }
                        }
                    }
                }
                accumulate(grads, *x, Tensor::new(xv.shape().to_vec(), gx)?)?;
                accumulate(grads, *w, Tensor::new(wv.shape().to_vec(), gw)?)?;
                accumulate(grads, *b, Tensor::new([filters], gb)?)?;
            }
            Op::Dense { x, w, b } => {
                let (xv, wv) = (self.val(*x), self.val(*w));
                let (batch, n) = (xv.shape()[0], xv.shape()[1]);
                let m = wv.shape()[0];
                let mut gx = vec![T::zero(); batch * n];
                T::gemm(
                    batch,
                    m,
                    n,
                    T::one(),
                    gd,
                    m as isize,
                    1,
                    wv.data(),
                    n as isize,
                    1,
                    T::zero(),
                    &mut gx,
                    n as isize,
                    1,
                );
                let mut gw = vec![T::zero(); m * n];
                T::gemm(
                    m,
                    batch,
                    n,
                    T::one(),
                    gd,
                    1,
                    m as isize,
                    xv.data(),
                    n as isize,
                    1,
                    T::zero(),
                    &mut gw,
                    n as isize,
                    1,
                );
                let mut gb = vec![T::zero(); m];
                for row in gd.chunks_exact(m) {
                    for (acc, &v) in gb.iter_mut().zip(row) {
                        *acc += v;
                    }
                }
                accumulate(grads, *x, Tensor::new([batch, n], gx)?)?;
                accumulate(grads, *w, Tensor::new([m, n], gw)?)?;
                accumulate(grads, *b, Tensor::new([m], gb)?)?;
            }
            Op::MaxPool { x, argmax } => {
                let xv = self.val(*x);
                let mut gx = vec![T::zero(); xv.len()];
                for (&src, &gv) in argmax.iter().zip(gd) {
                    gx[src] += gv;
                }
                accumulate(grads, *x, Tensor::new(xv.shape().to_vec(), gx)?)?;
            }
            Op::Concat { xs } => {
                let (batch, total, len) = (g.shape()[0], g.shape()[1], g.shape()[2]);
                let mut offset = 0;
                for &v in xs {
                    let c = self.val(v).shape()[1];
                    let mut part = Vec::with_capacity(batch * c * len);
                    for bi in 0..batch {
                        let start = (bi * total + offset) * len;
                        part.extend_from_slice(&gd[start..start + c * len]);
                    }
                    accumulate(grads, v, Tensor::new([batch, c, len], part)?)?;
                    offset += c;
                }
            }
            Op::Lstm {
                x,
                wx,
                wh,
                b,
                cache,
                sequences,
            } => {
                let (gx, gwx, gwh, gb) = self.lstm_backward(
                    cache,
                    self.val(*x),
                    self.val(*wx),
                    self.val(*wh),
                    gd,
                    *sequences,
                )?;
                accumulate(grads, *x, gx)?;
                accumulate(grads, *wx, gwx)?;
                accumulate(grads, *wh, gwh)?;
                accumulate(grads, *b, gb)?;
            }
            Op::SoftmaxXent {
                logits,
                probs,
                labels,
            } => {
                let shape = self.val(*logits).shape().to_vec();
                let k = shape[1];
                let scale = gd[0] / T::from_usize(labels.len());
                let mut gl = probs.clone();
                for (row, &y) in gl.chunks_exact_mut(k).zip(labels) {
                    row[y] -= T::one();
                    for v in row.iter_mut() {
                        *v *= scale;
                    }
                }
                accumulate(grads, *logits, Tensor::new(shape, gl)?)?;
            }
            Op::ChannelMean { x, channel } => {
                let xv = self.val(*x);
                let (batch, ch, len) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
                let v = gd[0] / T::from_usize(batch * len);
                let mut gx = vec![T::zero(); xv.len()];
                for bi in 0..batch {
                    gx[(bi * ch + channel) * len..][..len].fill(v);
                }
                accumulate(grads, *x, Tensor::new(xv.shape().to_vec(), gx)?)?;
            }
        }
        Ok(())
    }

    #[allow(clippy::type_complexity)]
    fn lstm_backward(
        &self,
        cache: &LstmCache<T>,
        xv: &Tensor<T>,
        wxv: &Tensor<T>,
        whv: &Tensor<T>,
        gd: &[T],
        sequences: bool,
    ) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>, Tensor<T>)> {
        let LstmCache {
            batch,
            channels,
            len,
            hidden,
            ..
        } = *cache;
        let g4 = 4 * hidden;
        let bh = batch * hidden;
        let one = T::one();

        let mut dz = vec![T::zero(); len * batch * g4];
        let mut dh_next = vec![T::zero(); bh];
        let mut dc_next = vec![T::zero(); bh];
        if !sequences {
            dh_next.copy_from_slice(gd);
        }
        for t in (0..len).rev() {
            if sequences {
                for bi in 0..batch {
                    for j in 0..hidden {
                        dh_next[bi * hidden + j] += gd[(bi * hidden + j) * len + t];
                    }
                }
            }
            let gates = &cache.gates[t * batch * g4..(t + 1) * batch * g4];
            let c_prev = &cache.cells[t * bh..(t + 1) * bh];
            let tc = &cache.tanh_cells[t * bh..(t + 1) * bh];
            let dzt = &mut dz[t * batch * g4..(t + 1) * batch * g4];
            for bi in 0..batch {
                let gr = &gates[bi * g4..(bi + 1) * g4];
                let dr = &mut dzt[bi * g4..(bi + 1) * g4];
                for j in 0..hidden {
                    let idx = bi * hidden + j;
                    let (i_g, f_g, g_g, o_g) =
                        (gr[j], gr[hidden + j], gr[2 * hidden + j], gr[3 * hidden + j]);
                    let dh = dh_next[idx];
                    let th = tc[idx];
                    let d_o = dh * th;
                    let dc = dc_next[idx] + dh * o_g * (one - th * th);
                    let d_i = dc * g_g;
                    let d_g = dc * i_g;
                    let d_f = dc * c_prev[idx];
                    dc_next[idx] = dc * f_g;
                    dr[j] = d_i * i_g * (one - i_g);
                    dr[hidden + j] = d_f * f_g * (one - f_g);
                    dr[2 * hidden + j] = d_g * (one - g_g * g_g);
                    dr[3 * hidden + j] = d_o * o_g * (one - o_g);
                }
            }
            T::gemm(
                batch,
                g4,
                hidden,
                one,
                dzt,
                g4 as isize,
                1,
                whv.data(),
                hidden as isize,
                1,
                T::zero(),
                &mut dh_next,
                hidden as isize,
                1,
            );
        }

        let mut gwh = vec![T::zero(); g4 * hidden];
        T::gemm(
            g4,
            len * batch,
            hidden,
            one,
            &dz,
            1,
            g4 as isize,
            &cache.hiddens[..len * bh],
            hidden as isize,
            1,
            T::zero(),
            &mut gwh,
            hidden as isize,
            1,
        );
        let mut gwx = vec![T::zero(); g4 * channels];
        let mut gx = vec![T::zero(); batch * channels * len];
        let xd = xv.data();
        let step_in = channels * len;
        for t in 0..len {
            let dzt = &dz[t * batch * g4..(t + 1) * batch * g4];
            T::gemm(
                g4,
                batch,
                channels,
                one,
                dzt,
                1,
                g4 as isize,
                &xd[t..],
                step_in as isize,
                len as isize,
                one,
                &mut gwx,
                channels as isize,
                1,
            );
            T::gemm(
                batch,
                g4,
                channels,
                one,
                dzt,
                g4 as isize,
                1,
                wxv.data(),
                channels as isize,
                1,
                T::zero(),
                &mut gx[t..],
                step_in as isize,
                len as isize,
            );
        }
        let mut gb = vec![T::zero(); g4];
        for row in dz.chunks_exact(g4) {
            for (acc, &v) in gb.iter_mut().zip(row) {
                *acc += v;
            }
        }
        Ok((
            Tensor::new(xv.shape().to_vec(), gx)?,
            Tensor::new([g4, channels], gwx)?,
            Tensor::new([g4, hidden], gwh)?,
            Tensor::new([g4], gb)?,
        ))
    }
}

fn accumulate<T: Real>(grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) -> Result<()> {
    match &mut grads[v.0] {
        Some(acc) => acc.add_assign(&g),
        slot @ None => {
            *slot = Some(g);
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape.to_vec(), data).unwrap()
    }

    #[test]
    fn grad_of_sum_is_ones() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(t(&[2, 3], &[1.0, -2.0, 3.0, 0.5, 0.0, 9.0])).unwrap();
        let s = tape.sum(x).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &Tensor::ones([2, 3]));
    }

    #[test]
    fn grad_of_half_square_is_identity() {
        let data = [0.3, -1.2, 4.0, 2.5];
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(t(&[4], &data)).unwrap();
        let sq = tape.mul(x, x).unwrap();
        let s = tape.sum(sq).unwrap();
        let loss = tape.scale(s, 0.5).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &data);
    }

    #[test]
    fn backward_is_rejected_twice_and_before_forward() {
        let mut empty = Tape::<f32>::new();
        assert!(matches!(
            empty.backward(Var(0)),
            Err(EngineError::State(_))
        ));
        let mut tape = Tape::<f32>::new();
        let x = tape.leaf(Tensor::ones([3])).unwrap();
        let s = tape.sum(x).unwrap();
        tape.backward(s).unwrap();
        assert!(matches!(tape.backward(s), Err(EngineError::State(_))));
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape = Tape::<f32>::new();
        let x = tape.leaf(Tensor::ones([3])).unwrap();
        assert!(matches!(tape.backward(x), Err(EngineError::Shape { .. })));
    }

    #[test]
    fn non_finite_leaf_rejected() {
        let mut tape = Tape::<f32>::new();
        let bad = Tensor::new([2], vec![1.0, f32::NAN]).unwrap();
        assert!(matches!(tape.leaf(bad), Err(EngineError::NumericInput { .. })));
    }

    #[test]
    fn overflow_reports_op() {
        let mut tape = Tape::<f32>::new();
        let x = tape.leaf(Tensor::full([2], 3e38f32)).unwrap();
        let err = tape.add(x, x).unwrap_err();
        assert_eq!(err, EngineError::NonFinite { op: "add" });
    }

    #[test]
    fn conv_example_pads_left() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(t(&[1, 1, 3], &[1.0, 2.0, 3.0])).unwrap();
        let w = tape.leaf(t(&[1, 1, 2], &[1.0, 1.0])).unwrap();
        let b = tape.leaf(t(&[1], &[0.0])).unwrap();
        let y = tape.conv1d(x, w, b).unwrap();
        assert_eq!(tape.value(y).data(), &[1.0, 3.0, 5.0]);
    }

    #[test]
    fn conv_channel_mismatch() {
        let mut tape = Tape::<f32>::new();
        let x = tape.leaf(Tensor::ones([1, 2, 8])).unwrap();
        let w = tape.leaf(Tensor::ones([4, 3, 3])).unwrap();
        let b = tape.leaf(Tensor::zeros([4])).unwrap();
        assert!(matches!(tape.conv1d(x, w, b), Err(EngineError::Shape { .. })));
    }

    #[test]
    fn maxpool_constant_routes_to_first() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::full([1, 1, 4], 2.0)).unwrap();
        let y = tape.maxpool(x, 2, 2).unwrap();
        assert_eq!(tape.value(y).data(), &[2.0, 2.0]);
        let s = tape.sum(y).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[1.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn maxpool_rejects_wide_window() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::ones([1, 1, 3])).unwrap();
        assert!(matches!(tape.maxpool(x, 4, 1), Err(EngineError::Shape { .. })));
    }

    #[test]
    fn dropout_zero_rate_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut tape = Tape::<f32>::new();
        let x = tape.leaf(Tensor::from_vec(vec![1.0, -2.0, 3.0])).unwrap();
        let y = tape.dropout(x, 0.0, &mut rng).unwrap();
        assert_eq!(tape.value(y), tape.value(x));
        assert!(tape.dropout(x, 1.0, &mut rng).is_err());
    }

    #[test]
    fn cross_entropy_label_out_of_range() {
        let mut tape = Tape::<f32>::new();
        let x = tape.leaf(Tensor::zeros([1, 3])).unwrap();
        assert_eq!(
            tape.softmax_cross_entropy(x, &[3]).unwrap_err(),
            EngineError::Index { index: 3, len: 3 }
        );
    }
}
