//! Minimal reverse-mode differentiation over dense matrices.
//!
//! A [`Tape`] records every operation with its value; [`Tape::backward`]
//! walks the record in reverse and accumulates adjoints. Only the handful of
//! operations the adapter network needs are provided.

use crate::linalg::Mat;
use crate::scalar::Scalar;

/// Handle to a value on a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, T),
    Tanh(Var),
    AddRow(Var, Var),
    Reshape(Var),
    Row(Var, usize),
    Concat(Vec<Var>),
    Mse(Var, Var),
}

struct Node<T> {
    value: Mat<T>,
    op: Op<T>,
}

#[derive(Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

/// Adjoints of every node, indexed by [`Var`].
pub struct Grads<T> {
    grads: Vec<Option<Mat<T>>>,
    shapes: Vec<(usize, usize)>,
}

impl<T: Scalar> Grads<T> {
    /// Adjoint of `v`; zeros if nothing flowed into it.
    pub fn wrt(&self, v: Var) -> Mat<T> {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => Mat::zeros(self.shapes[v.0].0, self.shapes[v.0].1),
        }
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Mat<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Mat<T> {
        &self.nodes[v.0].value
    }

    /// Input or parameter.
    pub fn leaf(&mut self, value: Mat<T>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).add(self.value(b));
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).sub(self.value(b));
        self.push(v, Op::Sub(a, b))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let v = self.value(a).scale(s);
        self.push(v, Op::Scale(a, s))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.tanh());
        self.push(v, Op::Tanh(a))
    }

    /// Adds the `1 × n` row `b` to every row of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(bv.rows(), 1, "add_row expects a row vector");
        assert_eq!(av.cols(), bv.cols(), "add_row width mismatch");
        let v = Mat::from_fn(av.rows(), av.cols(), |i, j| av[(i, j)] + bv[(0, j)]);
        self.push(v, Op::AddRow(a, b))
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let v = self
            .value(a)
            .clone()
            .reshape(rows, cols)
            .expect("reshape preserves the element count");
        self.push(v, Op::Reshape(a))
    }

    /// Row `i` of `a` as a `1 × n` matrix.
    pub fn row(&mut self, a: Var, i: usize) -> Var {
        let av = self.value(a);
        let v = Mat::from_vec(1, av.cols(), av.row(i).to_vec()).expect("row shape");
        self.push(v, Op::Row(a, i))
    }

    /// Horizontal concatenation of matrices with equal row counts.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut v = Mat::zeros(rows, cols);
        let mut off = 0;
        for &p in parts {
            let pv = self.value(p);
            assert_eq!(pv.rows(), rows, "concat_cols row mismatch");
            for i in 0..rows {
                for j in 0..pv.cols() {
                    v[(i, off + j)] = pv[(i, j)];
                }
            }
            off += pv.cols();
        }
        self.push(v, Op::Concat(parts.to_vec()))
    }

    /// Mean of squared differences over all elements, as a `1 × 1` value.
    pub fn mse(&mut self, pred: Var, target: Var) -> Var {
        let (p, t) = (self.value(pred), self.value(target));
        assert_eq!(p.shape(), t.shape(), "mse shape mismatch");
        let n = T::of_usize(p.len().max(1));
        let s: T = p
            .as_slice()
            .iter()
            .zip(t.as_slice())
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum();
        self.push(Mat::from_vec(1, 1, vec![s / n]).expect("scalar"), Op::Mse(pred, target))
    }

    /// Scalar value of a `1 × 1` node.
    pub fn scalar(&self, v: Var) -> T {
        self.value(v)[(0, 0)]
    }

    /// Adjoints of every node with respect to the scalar `out`.
    pub fn backward(&self, out: Var) -> Grads<T> {
        let n = self.nodes.len();
        let mut grads: Vec<Option<Mat<T>>> = vec![None; n];
        grads[out.0] = Some(Mat::from_fn(
            self.value(out).rows(),
            self.value(out).cols(),
            |_, _| T::one(),
        ));
        fn acc<T: Scalar>(grads: &mut [Option<Mat<T>>], v: Var, g: Mat<T>) {
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&g),
                slot => *slot = Some(g),
            }
        }
        for k in (0..=out.0).rev() {
            let Some(g) = grads[k].take() else {
                continue;
            };
            match &self.nodes[k].op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    acc(&mut grads, *a, g.matmul_t(self.value(*b)));
                    acc(&mut grads, *b, self.value(*a).t_matmul(&g));
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g.clone());
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g.scale(-T::one()));
                }
                Op::Scale(a, s) => acc(&mut grads, *a, g.scale(*s)),
                Op::Tanh(a) => {
                    let y = &self.nodes[k].value;
                    acc(&mut grads, *a, g.zip_map(y, |gi, yi| gi * (T::one() - yi * yi)));
                }
                Op::AddRow(a, b) => {
                    let bg = Mat::from_fn(1, g.cols(), |_, j| (0..g.rows()).map(|i| g[(i, j)]).sum());
                    acc(&mut grads, *b, bg);
                    acc(&mut grads, *a, g.clone());
                }
                Op::Reshape(a) => {
                    let (r, c) = self.value(*a).shape();
                    acc(&mut grads, *a, g.clone().reshape(r, c).expect("same size"));
                }
                Op::Row(a, i) => {
                    let (r, c) = self.value(*a).shape();
                    let mut full = Mat::zeros(r, c);
                    for j in 0..c {
                        full[(*i, j)] = g[(0, j)];
                    }
                    acc(&mut grads, *a, full);
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let (r, c) = self.value(p).shape();
                        acc(&mut grads, p, Mat::from_fn(r, c, |i, j| g[(i, off + j)]));
                        off += c;
                    }
                }
                Op::Mse(p, t) => {
                    let (pv, tv) = (self.value(*p), self.value(*t));
                    let s = g[(0, 0)] * T::of(2.0) / T::of_usize(pv.len().max(1));
                    let d = pv.zip_map(tv, |a, b| (a - b) * s);
                    acc(&mut grads, *t, d.scale(-T::one()));
                    acc(&mut grads, *p, d);
                }
            }
            grads[k] = Some(g);
        }
        Grads {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape()).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_mat(r: usize, c: usize, seed: u64) -> Mat<f64> {
        Mat::randn(r, c, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    /// Builds a graph touching every op and returns (loss, leaf vars).
    fn graph(tape: &mut Tape<f64>, leaves: &[Mat<f64>]) -> (Var, Vec<Var>) {
        let vars: Vec<Var> = leaves.iter().map(|m| tape.leaf(m.clone())).collect();
        let (x, w, b, t, e) = (vars[0], vars[1], vars[2], vars[3], vars[4]);
        let h = tape.matmul(x, w); // 3x4
        let h = tape.add_row(h, b);
        let h = tape.tanh(h);
        let r0 = tape.row(e, 1); // 1x2
        let r1 = tape.row(e, 0);
        let cat = tape.concat_cols(&[r0, r1]); // 1x4
        let sq = tape.reshape(cat, 2, 2);
        let h2 = tape.reshape(h, 6, 2);
        let h2 = tape.matmul(h2, sq); // 6x2
        let h2 = tape.scale(h2, 0.7);
        let h3 = tape.reshape(h2, 3, 4);
        let s = tape.sub(h3, h);
        let s = tape.add(s, h);
        let loss = tape.mse(s, t);
        (loss, vars)
    }

    #[test]
    fn gradients_match_finite_differences() {
        let leaves = vec![
            rand_mat(3, 5, 1),
            rand_mat(5, 4, 2),
            rand_mat(1, 4, 3),
            rand_mat(3, 4, 4),
            rand_mat(2, 2, 5),
        ];
        let mut tape = Tape::new();
        let (loss, vars) = graph(&mut tape, &leaves);
        let grads = tape.backward(loss);
        let h = 1e-6;
        for (li, v) in vars.iter().enumerate() {
            let g = grads.wrt(*v);
            for idx in 0..leaves[li].len() {
                let eval = |delta: f64| {
                    let mut ls = leaves.clone();
                    ls[li].as_mut_slice()[idx] += delta;
                    let mut t = Tape::new();
                    let (l, _) = graph(&mut t, &ls);
                    t.scalar(l)
                };
                let fd = (eval(h) - eval(-h)) / (2.0 * h);
                let an = g.as_slice()[idx];
                assert!((fd - an).abs() <= 1e-6 * (1.0 + fd.abs()), "leaf {li}[{idx}]: {an} vs {fd}");
            }
        }
    }

    #[test]
    fn unused_leaf_has_zero_gradient() {
        let mut tape = Tape::<f64>::new();
        let a = tape.leaf(rand_mat(2, 2, 1));
        let unused = tape.leaf(rand_mat(3, 3, 2));
        let t = tape.leaf(Mat::zeros(2, 2));
        let l = tape.mse(a, t);
        let g = tape.backward(l);
        assert_eq!(g.wrt(unused).max_abs(), 0.0);
        assert!((g.wrt(a).sub(&tape.value(a).scale(0.5)).max_abs()) < 1e-15);
    }
}
