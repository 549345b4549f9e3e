//! Neural building blocks: dense projections, embedding lookup, and an
//! LSTM encoder.
//!
//! Each layer comes in two flavours that share the same parameters:
//!
//! * an eager path (`forward`, `step`, `encode`) evaluating straight on
//!   [`Tensor`]s, used for inference and as an oracle, and
//! * a graph path (`bind` → `*Vars`) that records the computation on a
//!   [`Graph`] so gradients flow during training.
//!
//! Weight matrices use Glorot-uniform initialisation
//! (`U(-a, a)` with `a = sqrt(6 / (fan_in + fan_out))`); biases start at
//! zero except the LSTM forget-gate bias, which starts at 1 so early
//! training does not erase cell state.

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Elementwise nonlinearity applied after an affine map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
    Sigmoid,
    Tanh,
}

impl Activation {
    fn apply(self, t: &Tensor) -> Tensor {
        match self {
            Activation::Identity => t.clone(),
            Activation::Relu => t.relu(),
            Activation::Sigmoid => t.sigmoid(),
            Activation::Tanh => t.tanh(),
        }
    }

    fn apply_graph(self, g: &mut Graph, v: Var) -> Var {
        match self {
            Activation::Identity => v,
            Activation::Relu => g.relu(v),
            Activation::Sigmoid => g.sigmoid(v),
            Activation::Tanh => g.tanh(v),
        }
    }
}

/// Glorot-uniform matrix of shape `[rows, cols]` where `rows` is the output
/// dimension (fan-out) and `cols` the input dimension (fan-in).
pub fn glorot_uniform(rows: usize, cols: usize, rng: &mut Rng) -> Tensor {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    Tensor::rand_uniform(vec![rows, cols], -a, a, rng)
}

/// Fully connected layer `activation(W x + b)` with `W: [out, in]`.
#[derive(Debug, Clone)]
pub struct DenseLayer {
    pub w: Tensor,
    pub b: Tensor,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn new(in_dim: usize, out_dim: usize, activation: Activation, rng: &mut Rng) -> Self {
        DenseLayer {
            w: glorot_uniform(out_dim, in_dim, rng),
            b: Tensor::zeros(vec![out_dim]),
            activation,
        }
    }

    pub fn from_parts(w: Tensor, b: Tensor, activation: Activation) -> Result<Self> {
        if w.rank() != 2 {
            return Err(Error::BadShape {
                op: "dense",
                expected: "rank-2 weight".into(),
                got: w.shape().to_vec(),
            });
        }
        if b.shape() != [w.shape()[0]] {
            return Err(Error::ShapeMismatch {
                op: "dense",
                lhs: w.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
        Ok(DenseLayer { w, b, activation })
    }

    pub fn in_dim(&self) -> usize {
        self.w.shape()[1]
    }

    pub fn out_dim(&self) -> usize {
        self.w.shape()[0]
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let z = self.w.matvec(x)?;
        let data: Vec<f64> = z.data().iter().zip(self.b.data()).map(|(a, b)| a + b).collect();
        Ok(self.activation.apply(&Tensor::vector(data)))
    }

    pub fn bind(&self, g: &mut Graph) -> DenseVars {
        DenseVars {
            w: g.leaf(&self.w),
            b: g.leaf(&self.b),
            activation: self.activation,
        }
    }
}

/// A [`DenseLayer`] bound onto a graph.
#[derive(Debug, Clone, Copy)]
pub struct DenseVars {
    pub w: Var,
    pub b: Var,
    pub activation: Activation,
}

impl DenseVars {
    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let z = g.matvec(self.w, x)?;
        let zb = g.add(z, self.b)?;
        Ok(self.activation.apply_graph(g, zb))
    }
}

/// Token-index to dense-vector lookup table, one row per vocabulary entry.
#[derive(Debug, Clone)]
pub struct EmbeddingLayer {
    /// `[vocab_size, dim]`
    pub table: Tensor,
}

impl EmbeddingLayer {
    pub fn new(vocab_size: usize, dim: usize, rng: &mut Rng) -> Self {
        EmbeddingLayer {
            table: Tensor::rand_uniform(vec![vocab_size, dim], -0.05, 0.05, rng),
        }
    }

    pub fn from_table(table: Tensor) -> Result<Self> {
        if table.rank() != 2 {
            return Err(Error::BadShape {
                op: "embedding",
                expected: "rank-2 table".into(),
                got: table.shape().to_vec(),
            });
        }
        Ok(EmbeddingLayer { table })
    }

    pub fn vocab_size(&self) -> usize {
        self.table.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.table.shape()[1]
    }

    pub fn lookup(&self, index: usize) -> Result<Tensor> {
        if index >= self.vocab_size() {
            return Err(Error::IndexOutOfRange {
                what: "embedding lookup",
                index,
                len: self.vocab_size(),
            });
        }
        let d = self.dim();
        Ok(Tensor::vector(
            self.table.data()[index * d..(index + 1) * d].to_vec(),
        ))
    }

    pub fn embed_sequence(&self, indices: &[usize]) -> Result<Vec<Tensor>> {
        indices.iter().map(|&i| self.lookup(i)).collect()
    }
}

/// LSTM parameters for one layer: per gate an input matrix `[h, d]`, a
/// recurrent matrix `[h, h]` and a bias `[h]`, for gates
/// input (`i`), forget (`f`), output (`o`) and candidate (`c`).
#[derive(Debug, Clone)]
pub struct LstmParams {
    pub w_ix: Tensor,
    pub w_ih: Tensor,
    pub b_i: Tensor,
    pub w_fx: Tensor,
    pub w_fh: Tensor,
    pub b_f: Tensor,
    pub w_ox: Tensor,
    pub w_oh: Tensor,
    pub b_o: Tensor,
    pub w_cx: Tensor,
    pub w_ch: Tensor,
    pub b_c: Tensor,
}

/// Recurrent state carried between LSTM steps.
#[derive(Debug, Clone)]
pub struct LstmState {
    pub h: Tensor,
    pub c: Tensor,
}

impl LstmState {
    pub fn zeros(hidden_dim: usize) -> Self {
        LstmState {
            h: Tensor::zeros(vec![hidden_dim]),
            c: Tensor::zeros(vec![hidden_dim]),
        }
    }
}

impl LstmParams {
    pub fn new(input_dim: usize, hidden_dim: usize, rng: &mut Rng) -> Self {
        let mut p = Self::zeros(input_dim, hidden_dim);
        for (name, t) in p.tensors_mut() {
            if name.starts_with("w_") {
                let (rows, cols) = (t.shape()[0], t.shape()[1]);
                *t = glorot_uniform(rows, cols, rng);
            }
        }
        p.b_f = Tensor::full(vec![hidden_dim], 1.0);
        p
    }

    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        let wx = || Tensor::zeros(vec![hidden_dim, input_dim]);
        let wh = || Tensor::zeros(vec![hidden_dim, hidden_dim]);
        let b = || Tensor::zeros(vec![hidden_dim]);
        LstmParams {
            w_ix: wx(),
            w_ih: wh(),
            b_i: b(),
            w_fx: wx(),
            w_fh: wh(),
            b_f: b(),
            w_ox: wx(),
            w_oh: wh(),
            b_o: b(),
            w_cx: wx(),
            w_ch: wh(),
            b_c: b(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w_ix.shape()[1]
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_ix.shape()[0]
    }

    /// Stable (name, tensor) listing in declaration order; the checkpoint
    /// and optimiser both rely on this ordering.
    pub fn tensors(&self) -> Vec<(&'static str, &Tensor)> {
        vec![
            ("w_ix", &self.w_ix),
            ("w_ih", &self.w_ih),
            ("b_i", &self.b_i),
            ("w_fx", &self.w_fx),
            ("w_fh", &self.w_fh),
            ("b_f", &self.b_f),
            ("w_ox", &self.w_ox),
            ("w_oh", &self.w_oh),
            ("b_o", &self.b_o),
            ("w_cx", &self.w_cx),
            ("w_ch", &self.w_ch),
            ("b_c", &self.b_c),
        ]
    }

    pub fn tensors_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        vec![
            ("w_ix", &mut self.w_ix),
            ("w_ih", &mut self.w_ih),
            ("b_i", &mut self.b_i),
            ("w_fx", &mut self.w_fx),
            ("w_fh", &mut self.w_fh),
            ("b_f", &mut self.b_f),
            ("w_ox", &mut self.w_ox),
            ("w_oh", &mut self.w_oh),
            ("b_o", &mut self.b_o),
            ("w_cx", &mut self.w_cx),
            ("w_ch", &mut self.w_ch),
            ("b_c", &mut self.b_c),
        ]
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.numel()).sum()
    }

    fn check_step_shapes(&self, x: &Tensor, state: &LstmState) -> Result<()> {
        if x.shape() != [self.input_dim()] {
            return Err(Error::BadShape {
                op: "lstm step",
                expected: format!("input of shape [{}]", self.input_dim()),
                got: x.shape().to_vec(),
            });
        }
        let h = self.hidden_dim();
        if state.h.shape() != [h] || state.c.shape() != [h] {
            return Err(Error::BadShape {
                op: "lstm step",
                expected: format!("state of shape [{h}]"),
                got: state.h.shape().to_vec(),
            });
        }
        Ok(())
    }

    /// One recurrence step:
    /// `i = σ(Wix x + Wih h + bi)`, `f`, `o` likewise, `g = φ(Wcx x + Wch h + bc)`,
    /// `c' = f ⊙ c + i ⊙ g`, `h' = o ⊙ φ(c')`.
    pub fn step(&self, x: &Tensor, state: &LstmState) -> Result<LstmState> {
        self.check_step_shapes(x, state)?;
        let gate = |wx: &Tensor, wh: &Tensor, b: &Tensor| -> Result<Vec<f64>> {
            let zx = wx.matvec(x)?;
            let zh = wh.matvec(&state.h)?;
            Ok(zx
                .data()
                .iter()
                .zip(zh.data())
                .zip(b.data())
                .map(|((a, b2), c)| a + b2 + c)
                .collect())
        };
        let i = Tensor::vector(gate(&self.w_ix, &self.w_ih, &self.b_i)?).sigmoid();
        let f = Tensor::vector(gate(&self.w_fx, &self.w_fh, &self.b_f)?).sigmoid();
        let o = Tensor::vector(gate(&self.w_ox, &self.w_oh, &self.b_o)?).sigmoid();
        let g = Tensor::vector(gate(&self.w_cx, &self.w_ch, &self.b_c)?).tanh();

        let c_new: Vec<f64> = f
            .data()
            .iter()
            .zip(state.c.data())
            .zip(i.data().iter().zip(g.data()))
            .map(|((f, c), (i, g))| f * c + i * g)
            .collect();
        let c_new = Tensor::vector(c_new);
        let h_new: Vec<f64> = o
            .data()
            .iter()
            .zip(c_new.tanh().data())
            .map(|(o, tc)| o * tc)
            .collect();
        Ok(LstmState {
            h: Tensor::vector(h_new),
            c: c_new,
        })
    }

    /// Run the recurrence over a sequence from a zero state and return the
    /// final hidden vector `h_T`.
    pub fn encode(&self, xs: &[Tensor]) -> Result<Tensor> {
        if xs.is_empty() {
            return Err(Error::EmptyInput { what: "lstm encode" });
        }
        let mut state = LstmState::zeros(self.hidden_dim());
        for x in xs {
            state = self.step(x, &state)?;
        }
        Ok(state.h)
    }

    pub fn bind(&self, g: &mut Graph) -> LstmVars {
        let vars: Vec<Var> = self.tensors().iter().map(|(_, t)| g.leaf(t)).collect();
        LstmVars {
            vars: [
                vars[0], vars[1], vars[2], vars[3], vars[4], vars[5], vars[6], vars[7], vars[8],
                vars[9], vars[10], vars[11],
            ],
            hidden_dim: self.hidden_dim(),
        }
    }
}

/// [`LstmParams`] bound onto a graph; `vars` follows the
/// [`LstmParams::tensors`] ordering.
#[derive(Debug, Clone, Copy)]
pub struct LstmVars {
    pub vars: [Var; 12],
    hidden_dim: usize,
}

impl LstmVars {
    pub fn step(&self, g: &mut Graph, x: Var, h: Var, c: Var) -> Result<(Var, Var)> {
        let [w_ix, w_ih, b_i, w_fx, w_fh, b_f, w_ox, w_oh, b_o, w_cx, w_ch, b_c] = self.vars;
        let gate = |g: &mut Graph, wx: Var, wh: Var, b: Var| -> Result<Var> {
            let zx = g.matvec(wx, x)?;
            let zh = g.matvec(wh, h)?;
            let z = g.add(zx, zh)?;
            g.add(z, b)
        };
        let zi = gate(g, w_ix, w_ih, b_i)?;
        let zf = gate(g, w_fx, w_fh, b_f)?;
        let zo = gate(g, w_ox, w_oh, b_o)?;
        let zg = gate(g, w_cx, w_ch, b_c)?;
        let i = g.sigmoid(zi);
        let f = g.sigmoid(zf);
        let o = g.sigmoid(zo);
        let cand = g.tanh(zg);

        let fc = g.mul(f, c)?;
        let ig = g.mul(i, cand)?;
        let c_new = g.add(fc, ig)?;
        let tc = g.tanh(c_new);
        let h_new = g.mul(o, tc)?;
        Ok((h_new, c_new))
    }

    pub fn encode(&self, g: &mut Graph, xs: &[Var]) -> Result<Var> {
        if xs.is_empty() {
            return Err(Error::EmptyInput { what: "lstm encode" });
        }
        let zero = Tensor::zeros(vec![self.hidden_dim]);
        let mut h = g.leaf(&zero);
        let mut c = g.leaf(&zero);
        for &x in xs {
            let (nh, nc) = self.step(g, x, h, c)?;
            h = nh;
            c = nc;
        }
        Ok(h)
    }
}
