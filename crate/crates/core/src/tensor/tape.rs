//! Reverse-mode tape over a closed set of primitive ops.
//!
//! Nodes are appended in evaluation order, so the tape is acyclic by
//! construction and `backward` walks it in exact reverse.

use super::{
    cross_entropy, matmul, matmul_nt, matmul_tn, softmax_rows, softmax_rows_backward, Matrix,
    Scalar,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var),
    SoftmaxRows(Var),
    Scale(Var, T),
    RowSum(Var),
    SliceRows(Var, usize),
    ConcatCols(Vec<Var>),
    /// Output row `i` is column `cols[i]` of the source (zeros for `None`).
    Gather(Var, Vec<Option<usize>>),
    CrossEntropy { logits: Var, grad: Vec<T> },
}

#[derive(Debug, Clone)]
struct Node<T> {
    op: Op<T>,
    value: Matrix<T>,
    needs_grad: bool,
}

#[derive(Debug, Clone, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op<T>, value: Matrix<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node { op, value, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Trainable input.
    pub fn param(&mut self, m: Matrix<T>) -> Var {
        self.push(Op::Leaf, m, true)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, m: Matrix<T>) -> Var {
        self.push(Op::Leaf, m, false)
    }

    pub fn value(&self, v: Var) -> &Matrix<T> {
        &self.nodes[v.0].value
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = matmul(self.value(a), self.value(b));
        let ng = self.needs(a) || self.needs(b);
        self.push(Op::MatMul(a, b), value, ng)
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let value = matmul_nt(self.value(a), self.value(b));
        let ng = self.needs(a) || self.needs(b);
        self.push(Op::MatMulNt(a, b), value, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).add(self.value(b));
        let ng = self.needs(a) || self.needs(b);
        self.push(Op::Add(a, b), value, ng)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let value = softmax_rows(self.value(a));
        let ng = self.needs(a);
        self.push(Op::SoftmaxRows(a), value, ng)
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let value = self.value(a).scale(c);
        let ng = self.needs(a);
        self.push(Op::Scale(a, c), value, ng)
    }

    /// Column vector of row sums.
    pub fn row_sum(&mut self, a: Var) -> Var {
        let sums = self.value(a).row_sums();
        let value = Matrix::from_vec(sums.len(), 1, sums);
        let ng = self.needs(a);
        self.push(Op::RowSum(a), value, ng)
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let src = self.value(a);
        assert!(start + len <= src.rows(), "slice_rows: {start}+{len} of {} rows", src.rows());
        let cols = src.cols();
        let value = Matrix::from_vec(len, cols, src.data()[start * cols..(start + len) * cols].to_vec());
        let ng = self.needs(a);
        self.push(Op::SliceRows(a, start), value, ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_cols: no inputs");
        if parts.len() == 1 {
            return parts[0];
        }
        let rows = self.value(parts[0]).rows();
        let total: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut value = Matrix::zeros(rows, total);
        let mut offset = 0;
        for p in parts {
            let m = self.value(*p);
            assert_eq!(m.rows(), rows, "concat_cols: row mismatch");
            for i in 0..rows {
                value.row_mut(i)[offset..offset + m.cols()].copy_from_slice(m.row(i));
            }
            offset += m.cols();
        }
        let ng = parts.iter().any(|p| self.needs(*p));
        self.push(Op::ConcatCols(parts.to_vec()), value, ng)
    }

    /// Rows of the output are (transposed) columns of `src`.
    pub fn gather(&mut self, src: Var, cols: Vec<Option<usize>>) -> Var {
        let s = self.value(src);
        let mut value = Matrix::zeros(cols.len(), s.rows());
        for (i, c) in cols.iter().enumerate() {
            if let Some(c) = *c {
                assert!(c < s.cols(), "gather: column {c} of {}", s.cols());
                for d in 0..s.rows() {
                    value[(i, d)] = s[(d, c)];
                }
            }
        }
        let ng = self.needs(src);
        self.push(Op::Gather(src, cols), value, ng)
    }

    /// Scalar (1x1) loss from a column or row vector of logits.
    pub fn cross_entropy(&mut self, logits: Var, target: usize) -> Var {
        let (loss, grad) = cross_entropy(self.value(logits).data(), target);
        let ng = self.needs(logits);
        self.push(Op::CrossEntropy { logits, grad }, Matrix::from_vec(1, 1, vec![loss]), ng)
    }

    /// Gradients of the scalar `loss` node with respect to every node that needs one.
    pub fn backward(&self, loss: Var) -> Grads<T> {
        assert_eq!(self.value(loss).shape(), (1, 1), "backward: loss must be 1x1");
        self.backward_with(loss, Matrix::filled(1, 1, T::one()))
    }

    /// Backward pass seeded with an arbitrary upstream gradient for `out`.
    pub fn backward_with(&self, out: Var, seed: Matrix<T>) -> Grads<T> {
        let mut grads: Vec<Option<Matrix<T>>> = vec![None; self.nodes.len()];
        grads[out.0] = Some(seed);
        for idx in (0..=out.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    if self.needs(*a) {
                        accumulate(&mut grads, *a, matmul_nt(&g, self.value(*b)));
                    }
                    if self.needs(*b) {
                        accumulate(&mut grads, *b, matmul_tn(self.value(*a), &g));
                    }
                }
                Op::MatMulNt(a, b) => {
                    // C = A Bᵀ: dA = dC B, dB = dCᵀ A
                    if self.needs(*a) {
                        accumulate(&mut grads, *a, matmul(&g, self.value(*b)));
                    }
                    if self.needs(*b) {
                        accumulate(&mut grads, *b, matmul_tn(&g, self.value(*a)));
                    }
                }
                Op::Add(a, b) => {
                    if self.needs(*a) {
                        accumulate(&mut grads, *a, g.clone());
                    }
                    if self.needs(*b) {
                        accumulate(&mut grads, *b, g);
                    }
                }
                Op::SoftmaxRows(a) => {
                    accumulate(&mut grads, *a, softmax_rows_backward(&node.value, &g));
                }
                Op::Scale(a, c) => accumulate(&mut grads, *a, g.scale(*c)),
                Op::RowSum(a) => {
                    let src = self.value(*a);
                    let mut d = Matrix::zeros(src.rows(), src.cols());
                    for i in 0..src.rows() {
                        let gi = g[(i, 0)];
                        d.row_mut(i).iter_mut().for_each(|v| *v = gi);
                    }
                    accumulate(&mut grads, *a, d);
                }
                Op::SliceRows(a, start) => {
                    let src = self.value(*a);
                    let mut d = Matrix::zeros(src.rows(), src.cols());
                    let cols = src.cols();
                    d.data_mut()[start * cols..start * cols + g.data().len()]
                        .copy_from_slice(g.data());
                    accumulate(&mut grads, *a, d);
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let (rows, cols) = self.value(*p).shape();
                        if self.needs(*p) {
                            let mut d = Matrix::zeros(rows, cols);
                            for i in 0..rows {
                                d.row_mut(i).copy_from_slice(&g.row(i)[offset..offset + cols]);
                            }
                            accumulate(&mut grads, *p, d);
                        }
                        offset += cols;
                    }
                }
                Op::Gather(src, cols) => {
                    let s = self.value(*src);
                    let mut d = Matrix::zeros(s.rows(), s.cols());
                    for (i, c) in cols.iter().enumerate() {
                        if let Some(c) = *c {
                            for r in 0..s.rows() {
                                d[(r, c)] = d[(r, c)] + g[(i, r)];
                            }
                        }
                    }
                    accumulate(&mut grads, *src, d);
                }
                Op::CrossEntropy { logits, grad, .. } => {
                    let shape = self.value(*logits).shape();
                    let scale = g[(0, 0)];
                    let d = Matrix::from_vec(shape.0, shape.1, grad.iter().map(|v| *v * scale).collect());
                    accumulate(&mut grads, *logits, d);
                }
            }
        }
        Grads { grads }
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Matrix<T>>], v: Var, g: Matrix<T>) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

#[derive(Debug, Clone)]
pub struct Grads<T> {
    grads: Vec<Option<Matrix<T>>>,
}

impl<T: Scalar> Grads<T> {
    /// Gradient of a leaf; `None` when the loss does not depend on it.
    pub fn get(&self, v: Var) -> Option<&Matrix<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Matrix<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Small attention block: loss = CE(rowsum(softmax(X Wqᵀ (X Wkᵀ)ᵀ) X Woᵀ)[1..], t).
    fn attention_loss(tape: &mut Tape<f64>, x: &Matrix<f64>, wq: &Matrix<f64>, wk: &Matrix<f64>, wo: &Matrix<f64>) -> (Var, [Var; 3]) {
        let xv = tape.constant(x.clone());
        let q_w = tape.param(wq.clone());
        let k_w = tape.param(wk.clone());
        let o_w = tape.param(wo.clone());
        let q = tape.matmul_nt(xv, q_w);
        let k = tape.matmul_nt(xv, k_w);
        let s = tape.matmul_nt(q, k);
        let s = tape.scale(s, 0.7);
        let a = tape.softmax_rows(s);
        let h = tape.matmul(a, xv);
        let h2 = tape.concat_cols(&[h, q]);
        let o = tape.matmul_nt(h2, o_w);
        let r = tape.add(o, xv);
        let l = tape.row_sum(r);
        let l = tape.slice_rows(l, 1, 3);
        (tape.cross_entropy(l, 2), [q_w, k_w, o_w])
    }

    #[test]
    fn composite_graph_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = Matrix::<f64>::random_normal(4, 3, 1.0, &mut rng);
        let mut params = [
            Matrix::<f64>::random_normal(2, 3, 0.5, &mut rng),
            Matrix::<f64>::random_normal(2, 3, 0.5, &mut rng),
            Matrix::<f64>::random_normal(3, 5, 0.5, &mut rng),
        ];
        let mut tape = Tape::new();
        let (loss, vars) = attention_loss(&mut tape, &x, &params[0], &params[1], &params[2]);
        let grads = tape.backward(loss);
        let h = 1e-5;
        for p in 0..3 {
            let analytic = grads.get(vars[p]).unwrap().clone();
            for idx in 0..params[p].data().len() {
                let orig = params[p].data()[idx];
                let eval = |v: f64, params: &mut [Matrix<f64>; 3]| {
                    params[p].data_mut()[idx] = v;
                    let mut t = Tape::new();
                    let (l, _) = attention_loss(&mut t, &x, &params[0], &params[1], &params[2]);
                    t.value(l)[(0, 0)]
                };
                let fd = (eval(orig + h, &mut params) - eval(orig - h, &mut params)) / (2.0 * h);
                params[p].data_mut()[idx] = orig;
                let a = analytic.data()[idx];
                assert!((fd - a).abs() / fd.abs().max(a.abs()).max(1e-7) < 1e-6, "param {p} idx {idx}");
            }
        }
    }

    #[test]
    fn gather_scatters_gradient() {
        let mut tape = Tape::<f64>::new();
        let src = tape.param(Matrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]));
        let g = tape.gather(src, vec![Some(1), None, Some(1)]);
        assert_eq!(tape.value(g), &Matrix::from_rows(&[&[2.0, 4.0], &[0.0, 0.0], &[2.0, 4.0]]));
        let seed = Matrix::from_rows(&[&[1.0, 10.0], &[5.0, 5.0], &[2.0, 20.0]]);
        let grads = tape.backward_with(g, seed);
        assert_eq!(grads.get(src).unwrap(), &Matrix::from_rows(&[&[0.0, 3.0], &[0.0, 30.0]]));
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut tape = Tape::<f64>::new();
        let c = tape.constant(Matrix::identity(2));
        let p = tape.param(Matrix::identity(2));
        let m = tape.matmul(c, p);
        let s = tape.row_sum(m);
        let l = tape.cross_entropy(s, 0);
        let grads = tape.backward(l);
        assert!(grads.get(c).is_none());
        assert!(grads.get(p).is_some());
    }
}
