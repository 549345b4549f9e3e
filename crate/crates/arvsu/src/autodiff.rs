//! Reverse-mode gradient computation on a per-pass tape.
//!
//! A [`Graph`] is rebuilt for every forward pass (define-by-run), which lets
//! variable-length utterances unroll naturally. Builder methods record each
//! operation and return lightweight [`Var`] handles; [`Graph::backward`]
//! walks the tape in reverse and accumulates `d(loss)/d(node)` into per-node
//! gradient buffers, summing over every use of a node.
//!
//! [`finite_diff`] is the independent central-difference oracle used by the
//! gradient-check tests.

use crate::error::{Error, Result};
use crate::tensor::{matmul_kernel, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatVec(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    MulScalar(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Softmax(Var),
    Concat(Var, Var),
    Row(Var, usize),
    Pick(Var, usize),
    Sum(Var),
    Log(Var),
    ClampMin(Var, f64),
}

struct Node {
    op: Op,
    value: Tensor,
    grad: Option<Vec<f64>>,
}

/// Define-by-run computation tape.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        self.nodes.push(Node {
            op,
            value,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Introduce a tensor as a leaf. Gradients accumulate here.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        let mut copy = t.clone();
        copy.clear_grad();
        self.push(Op::Leaf, copy)
    }

    pub fn scalar(&mut self, v: f64) -> Var {
        self.push(Op::Leaf, Tensor::scalar(v))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Gradient of the last `backward` target with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(Op::MatMul(a, b), out))
    }

    pub fn matvec(&mut self, m: Var, v: Var) -> Result<Var> {
        let out = self.value(m).matvec(self.value(v))?;
        Ok(self.push(Op::MatVec(m, v), out))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::ShapeMismatch {
                op: "add",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y);
        let out = Tensor::new(ta.shape().to_vec(), data.collect())?;
        Ok(self.push(Op::Add(a, b), out))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::ShapeMismatch {
                op: "mul",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y);
        let out = Tensor::new(ta.shape().to_vec(), data.collect())?;
        Ok(self.push(Op::Mul(a, b), out))
    }

    pub fn mul_scalar(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|x| x * c);
        self.push(Op::MulScalar(a, c), out)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).sigmoid();
        self.push(Op::Sigmoid(x), out)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.value(x).tanh();
        self.push(Op::Tanh(x), out)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).relu();
        self.push(Op::Relu(x), out)
    }

    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).softmax()?;
        Ok(self.push(Op::Softmax(x), out))
    }

    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).concat(self.value(b))?;
        Ok(self.push(Op::Concat(a, b), out))
    }

    /// Row `index` of a rank-2 tensor, as a rank-1 view copy.
    pub fn row(&mut self, m: Var, index: usize) -> Result<Var> {
        let t = self.value(m);
        if t.rank() != 2 {
            return Err(Error::BadShape {
                op: "row",
                expected: "rank-2 tensor".into(),
                got: t.shape().to_vec(),
            });
        }
        let rows = t.shape()[0];
        if index >= rows {
            return Err(Error::IndexOutOfRange {
                what: "row",
                index,
                len: rows,
            });
        }
        let cols = t.shape()[1];
        let out = Tensor::vector(t.data()[index * cols..(index + 1) * cols].to_vec());
        Ok(self.push(Op::Row(m, index), out))
    }

    /// Element `index` of a rank-1 tensor, as a scalar.
    pub fn pick(&mut self, v: Var, index: usize) -> Result<Var> {
        let t = self.value(v);
        if t.rank() != 1 {
            return Err(Error::BadShape {
                op: "pick",
                expected: "rank-1 tensor".into(),
                got: t.shape().to_vec(),
            });
        }
        if index >= t.numel() {
            return Err(Error::IndexOutOfRange {
                what: "pick",
                index,
                len: t.numel(),
            });
        }
        let out = Tensor::scalar(t.data()[index]);
        Ok(self.push(Op::Pick(v, index), out))
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).data().iter().sum());
        self.push(Op::Sum(x), out)
    }

    /// Natural log, elementwise. Caller guarantees positive inputs
    /// (the loss path clamps first).
    pub fn log(&mut self, x: Var) -> Var {
        let out = self.value(x).map(f64::ln);
        self.push(Op::Log(x), out)
    }

    pub fn clamp_min(&mut self, x: Var, lo: f64) -> Var {
        let out = self.value(x).map(|v| v.max(lo));
        self.push(Op::ClampMin(x, lo), out)
    }

    /// Convenience: `a - b`.
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let nb = self.mul_scalar(b, -1.0);
        self.add(a, nb)
    }

    /// Populate gradient buffers for every node that influences `loss`.
    /// `loss` must be a scalar.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.value(loss).is_scalar() {
            return Err(Error::BadShape {
                op: "backward",
                expected: "scalar loss".into(),
                got: self.value(loss).shape().to_vec(),
            });
        }
        for node in &mut self.nodes {
            node.grad = None;
        }
        self.nodes[loss.0].grad = Some(vec![1.0]);

        for i in (0..self.nodes.len()).rev() {
            let Some(dy) = self.nodes[i].grad.take() else {
                continue;
            };
            let op = self.nodes[i].op.clone();
            match op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let (m, k) = {
                        let s = self.nodes[a.0].value.shape();
                        (s[0], s[1])
                    };
                    let n = self.nodes[b.0].value.shape()[1];
                    // dA = dC B^T ; dB = A^T dC
                    let bt = transpose(self.nodes[b.0].value.data(), k, n);
                    let da = matmul_kernel(&dy, &bt, m, n, k);
                    let at = transpose(self.nodes[a.0].value.data(), m, k);
                    let db = matmul_kernel(&at, &dy, k, m, n);
                    self.add_grad(a, &da);
                    self.add_grad(b, &db);
                }
                Op::MatVec(mv, vv) => {
                    let (m, k) = {
                        let s = self.nodes[mv.0].value.shape();
                        (s[0], s[1])
                    };
                    let mut dm = vec![0.0; m * k];
                    let v = self.nodes[vv.0].value.data();
                    for i in 0..m {
                        for j in 0..k {
                            dm[i * k + j] = dy[i] * v[j];
                        }
                    }
                    let a = self.nodes[mv.0].value.data();
                    let mut dv = vec![0.0; k];
                    for i in 0..m {
                        for j in 0..k {
                            dv[j] += a[i * k + j] * dy[i];
                        }
                    }
                    self.add_grad(mv, &dm);
                    self.add_grad(vv, &dv);
                }
                Op::Add(a, b) => {
                    self.add_grad(a, &dy);
                    self.add_grad(b, &dy);
                }
                Op::Mul(a, b) => {
                    let da: Vec<f64> = self.nodes[b.0]
                        .value
                        .data()
                        .iter()
                        .zip(&dy)
                        .map(|(x, d)| x * d)
                        .collect();
                    let db: Vec<f64> = self.nodes[a.0]
                        .value
                        .data()
                        .iter()
                        .zip(&dy)
                        .map(|(x, d)| x * d)
                        .collect();
                    self.add_grad(a, &da);
                    self.add_grad(b, &db);
                }
                Op::MulScalar(a, c) => {
                    let da: Vec<f64> = dy.iter().map(|d| c * d).collect();
                    self.add_grad(a, &da);
                }
                Op::Sigmoid(x) => {
                    let y = self.nodes[i].value.data();
                    let dx: Vec<f64> = y.iter().zip(&dy).map(|(s, d)| d * s * (1.0 - s)).collect();
                    self.add_grad(x, &dx);
                }
                Op::Tanh(x) => {
                    let y = self.nodes[i].value.data();
                    let dx: Vec<f64> = y.iter().zip(&dy).map(|(t, d)| d * (1.0 - t * t)).collect();
                    self.add_grad(x, &dx);
                }
                Op::Relu(x) => {
                    let input = self.nodes[x.0].value.data();
                    let dx: Vec<f64> = input
                        .iter()
                        .zip(&dy)
                        .map(|(&v, d)| if v > 0.0 { *d } else { 0.0 })
                        .collect();
                    self.add_grad(x, &dx);
                }
                Op::Softmax(x) => {
                    let y = self.nodes[i].value.data();
                    let dot: f64 = y.iter().zip(&dy).map(|(a, b)| a * b).sum();
                    let dx: Vec<f64> = y.iter().zip(&dy).map(|(yi, di)| yi * (di - dot)).collect();
                    self.add_grad(x, &dx);
                }
                Op::Concat(a, b) => {
                    let sa = self.nodes[a.0].value.shape().to_vec();
                    let sb = self.nodes[b.0].value.shape().to_vec();
                    if sa.len() == 1 {
                        let na = sa[0];
                        self.add_grad(a, &dy[..na]);
                        self.add_grad(b, &dy[na..]);
                    } else {
                        let (rows, ca, cb) = (sa[0], sa[1], sb[1]);
                        let mut da = vec![0.0; rows * ca];
                        let mut db = vec![0.0; rows * cb];
                        for r in 0..rows {
                            let row = &dy[r * (ca + cb)..(r + 1) * (ca + cb)];
                            da[r * ca..(r + 1) * ca].copy_from_slice(&row[..ca]);
                            db[r * cb..(r + 1) * cb].copy_from_slice(&row[ca..]);
                        }
                        self.add_grad(a, &da);
                        self.add_grad(b, &db);
                    }
                }
                Op::Row(m, index) => {
                    let cols = self.nodes[m.0].value.shape()[1];
                    let rows = self.nodes[m.0].value.shape()[0];
                    let mut dm = vec![0.0; rows * cols];
                    dm[index * cols..(index + 1) * cols].copy_from_slice(&dy);
                    self.add_grad(m, &dm);
                }
                Op::Pick(v, index) => {
                    let n = self.nodes[v.0].value.numel();
                    let mut dv = vec![0.0; n];
                    dv[index] = dy[0];
                    self.add_grad(v, &dv);
                }
                Op::Sum(x) => {
                    let n = self.nodes[x.0].value.numel();
                    let dx = vec![dy[0]; n];
                    self.add_grad(x, &dx);
                }
                Op::Log(x) => {
                    let input = self.nodes[x.0].value.data();
                    let dx: Vec<f64> = input.iter().zip(&dy).map(|(v, d)| d / v).collect();
                    self.add_grad(x, &dx);
                }
                Op::ClampMin(x, lo) => {
                    let input = self.nodes[x.0].value.data();
                    let dx: Vec<f64> = input
                        .iter()
                        .zip(&dy)
                        .map(|(&v, d)| if v > lo { *d } else { 0.0 })
                        .collect();
                    self.add_grad(x, &dx);
                }
            }
            // Restore this node's own gradient for callers to inspect.
            self.nodes[i].grad = Some(dy);
        }
        Ok(())
    }

    fn add_grad(&mut self, v: Var, delta: &[f64]) {
        let node = &mut self.nodes[v.0];
        let g = node
            .grad
            .get_or_insert_with(|| vec![0.0; node.value.numel()]);
        for (gi, di) in g.iter_mut().zip(delta) {
            *gi += di;
        }
    }
}

fn transpose(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = a[i * cols + j];
        }
    }
    out
}

/// Central-difference derivative estimate of a scalar function of a tensor:
/// `(f(x + eps e_i) - f(x - eps e_i)) / (2 eps)` per coordinate.
///
/// `f` must be deterministic and `eps > 0`.
pub fn finite_diff<F>(f: F, x: &Tensor, eps: f64) -> Tensor
where
    F: Fn(&Tensor) -> f64,
{
    assert!(eps > 0.0, "finite_diff eps must be positive");
    let mut out = Tensor::zeros(x.shape().to_vec());
    let mut probe = x.clone();
    for i in 0..x.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let plus = f(&probe);
        probe.data_mut()[i] = orig - eps;
        let minus = f(&probe);
        probe.data_mut()[i] = orig;
        out.data_mut()[i] = (plus - minus) / (2.0 * eps);
    }
    out
}

/// Per-coordinate relative error between an analytic and a numeric gradient,
/// with a small floor so near-zero coordinates compare on absolute terms.
pub fn max_rel_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn backward_sum_gives_ones() {
        let mut g = Graph::new();
        let w = g.leaf(&Tensor::vector(vec![1.0, -2.0, 3.0]));
        let loss = g.sum(w);
        g.backward(loss).unwrap();
        assert_eq!(g.grad(w).unwrap(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn backward_sum_of_squares_gives_2w() {
        let mut g = Graph::new();
        let w = g.leaf(&Tensor::vector(vec![1.0, -2.0, 3.0]));
        let sq = g.mul(w, w).unwrap();
        let loss = g.sum(sq);
        g.backward(loss).unwrap();
        assert_eq!(g.grad(w).unwrap(), &[2.0, -4.0, 6.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut g = Graph::new();
        let w = g.leaf(&Tensor::vector(vec![1.0, 2.0]));
        assert!(g.backward(w).is_err());
    }

    #[test]
    fn gradient_accumulates_across_uses() {
        // loss = sum(w) + sum(w) => grad 2 per coordinate
        let mut g = Graph::new();
        let w = g.leaf(&Tensor::vector(vec![5.0, 6.0]));
        let s1 = g.sum(w);
        let s2 = g.sum(w);
        let loss = g.add(s1, s2).unwrap();
        g.backward(loss).unwrap();
        assert_eq!(g.grad(w).unwrap(), &[2.0, 2.0]);
    }

    #[test]
    fn finite_diff_sum_of_squares() {
        let f = |t: &Tensor| t.data().iter().map(|x| x * x).sum();
        let got = finite_diff(f, &Tensor::vector(vec![1.0, 2.0]), 1e-5);
        assert!((got.data()[0] - 2.0).abs() < 1e-6);
        assert!((got.data()[1] - 4.0).abs() < 1e-6);
    }

    #[test]
    fn finite_diff_constant_is_zero() {
        let got = finite_diff(|_| 3.5, &Tensor::vector(vec![1.0, 2.0, 3.0]), 1e-5);
        assert_eq!(got.data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn finite_diff_linear_recovers_coefficients() {
        let a = [2.0, -3.0, 0.5];
        let f = move |t: &Tensor| t.data().iter().zip(&a).map(|(x, c)| x * c).sum();
        let got = finite_diff(f, &Tensor::vector(vec![0.3, 0.7, -0.2]), 1e-5);
        for (g, c) in got.data().iter().zip(&a) {
            assert!((g - c).abs() < 1e-8);
        }
    }

    // Composite network built from every op; checked against finite differences.
    fn composite_loss(g: &mut Graph, w: Var, m: Var) -> Var {
        let h = g.matvec(m, w).unwrap();
        let s = g.sigmoid(h);
        let t = g.tanh(h);
        let p = g.mul(s, t).unwrap();
        let r = g.relu(p);
        let c = g.concat(r, s).unwrap();
        let sm = g.softmax(c).unwrap();
        let picked = g.pick(sm, 1).unwrap();
        let cl = g.clamp_min(picked, 1e-12);
        let lg = g.log(cl);
        let neg = g.mul_scalar(lg, -1.0);
        let row = g.row(m, 0).unwrap();
        let rs = g.sum(row);
        let total = g.add(neg, rs).unwrap();
        g.mul_scalar(total, 0.5)
    }

    #[test]
    fn composite_matches_finite_differences() {
        let mut rng = Rng::new(17);
        let w0 = Tensor::rand_uniform(vec![4], -0.8, 0.8, &mut rng);
        let m0 = Tensor::rand_uniform(vec![3, 4], -0.8, 0.8, &mut rng);

        let mut g = Graph::new();
        let w = g.leaf(&w0);
        let m = g.leaf(&m0);
        let loss = composite_loss(&mut g, w, m);
        g.backward(loss).unwrap();

        let eval_w = |t: &Tensor| {
            let mut g = Graph::new();
            let w = g.leaf(t);
            let m = g.leaf(&m0);
            let loss = composite_loss(&mut g, w, m);
            g.value(loss).item()
        };
        let fd_w = finite_diff(eval_w, &w0, 1e-5);
        assert!(max_rel_error(g.grad(w).unwrap(), fd_w.data(), 1e-6) <= 1e-4);

        let eval_m = |t: &Tensor| {
            let mut g = Graph::new();
            let w = g.leaf(&w0);
            let m = g.leaf(t);
            let loss = composite_loss(&mut g, w, m);
            g.value(loss).item()
        };
        let fd_m = finite_diff(eval_m, &m0, 1e-5);
        assert!(max_rel_error(g.grad(m).unwrap(), fd_m.data(), 1e-6) <= 1e-4);
    }

    #[test]
    fn matmul_gradients_match_finite_differences() {
        let mut rng = Rng::new(23);
        let a0 = Tensor::rand_uniform(vec![2, 3], -1.0, 1.0, &mut rng);
        let b0 = Tensor::rand_uniform(vec![3, 2], -1.0, 1.0, &mut rng);

        let mut g = Graph::new();
        let a = g.leaf(&a0);
        let b = g.leaf(&b0);
        let c = g.matmul(a, b).unwrap();
        let sq = g.mul(c, c).unwrap();
        let loss = g.sum(sq);
        g.backward(loss).unwrap();

        let fd_a = finite_diff(
            |t| {
                let mut g = Graph::new();
                let a = g.leaf(t);
                let b = g.leaf(&b0);
                let c = g.matmul(a, b).unwrap();
                let sq = g.mul(c, c).unwrap();
                let loss = g.sum(sq);
                g.value(loss).item()
            },
            &a0,
            1e-5,
        );
        assert!(max_rel_error(g.grad(a).unwrap(), fd_a.data(), 1e-6) <= 1e-4);
    }
}
