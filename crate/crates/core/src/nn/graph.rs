//! Tape-based reverse-mode differentiation over 2-D arrays.
//!
//! A [`Graph`] records every operation as a node holding its value.
//! Parameters enter as borrowed leaves tagged with their index in a
//! [`ParamStore`](super::ParamStore); [`Graph::backward`] adds the loss
//! gradient of each such leaf into a caller-owned buffer.

use ndarray::{s, Array1, Array2, ArrayView2, Axis, CowArray, Ix2};

use super::Float;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op<F> {
    Const,
    Param(usize),
    MatMul(Var, Var),
    /// `a · bᵀ`
    MatMulT(Var, Var),
    Add(Var, Var),
    /// `a + r` with `r` a single row broadcast over `a`'s rows.
    AddRow(Var, Var),
    /// `a ⊙ r` with `r` a single row broadcast over `a`'s rows.
    MulRow(Var, Var),
    Relu(Var),
    Scale(Var, F),
    SoftmaxRows(Var),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    /// Row-wise standardization; stores each row's `1/σ`.
    NormalizeRows(Var, Array1<F>),
    Mse(Var, Array2<F>),
    BceWithLogits(Var, Array2<F>),
    Sum(Vec<Var>),
}

struct Node<'p, F> {
    value: CowArray<'p, F, Ix2>,
    op: Op<F>,
}

pub struct Graph<'p, F> {
    nodes: Vec<Node<'p, F>>,
}

impl<F: Float> Default for Graph<'_, F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p, F: Float> Graph<'p, F> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    fn push(&mut self, value: CowArray<'p, F, Ix2>, op: Op<F>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn owned(&mut self, value: Array2<F>, op: Op<F>) -> Var {
        self.push(CowArray::from(value), op)
    }

    pub fn value(&self, v: Var) -> ArrayView2<'_, F> {
        self.nodes[v.0].value.view()
    }

    /// Scalar value of a 1×1 node.
    pub fn scalar(&self, v: Var) -> F {
        self.nodes[v.0].value[[0, 0]]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn constant(&mut self, value: Array2<F>) -> Var {
        self.owned(value, Op::Const)
    }

    pub fn param(&mut self, id: usize, value: ArrayView2<'p, F>) -> Var {
        self.push(CowArray::from(value), Op::Param(id))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(&self.value(b));
        self.owned(v, Op::MatMul(a, b))
    }

    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(&self.value(b).t());
        self.owned(v, Op::MatMulT(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = &self.value(a) + &self.value(b);
        self.owned(v, Op::Add(a, b))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        debug_assert_eq!(self.value(row).nrows(), 1);
        let v = &self.value(a) + &self.value(row);
        self.owned(v, Op::AddRow(a, row))
    }

    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        debug_assert_eq!(self.value(row).nrows(), 1);
        let v = &self.value(a) * &self.value(row);
        self.owned(v, Op::MulRow(a, row))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x.max(F::zero()));
        self.owned(v, Op::Relu(a))
    }

    pub fn scale(&mut self, a: Var, c: F) -> Var {
        let v = self.value(a).mapv(|x| x * c);
        self.owned(v, Op::Scale(a, c))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut v = self.value(a).to_owned();
        for mut row in v.rows_mut() {
            let m = row.fold(F::neg_infinity(), |m, &x| m.max(x));
            row.mapv_inplace(|x| (x - m).exp());
            let z = row.sum();
            row.mapv_inplace(|x| x / z);
        }
        self.owned(v, Op::SoftmaxRows(a))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, width: usize) -> Var {
        let v = self.value(a).slice(s![.., start..start + width]).to_owned();
        self.owned(v, Op::SliceCols(a, start))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<ArrayView2<F>> = parts.iter().map(|&p| self.value(p)).collect();
        let v = ndarray::concatenate(Axis(1), &views).expect("equal row counts");
        self.owned(v, Op::ConcatCols(parts.to_vec()))
    }

    /// `(x - mean) / sqrt(var + eps)` per row.
    pub fn normalize_rows(&mut self, a: Var, eps: F) -> Var {
        let x = self.value(a);
        let n = F::from_usize(x.ncols()).expect("width");
        let mut out = x.to_owned();
        let mut inv = Array1::zeros(x.nrows());
        for (i, mut row) in out.rows_mut().into_iter().enumerate() {
            let mean = row.sum() / n;
            row.mapv_inplace(|v| v - mean);
            let var = row.fold(F::zero(), |acc, &v| acc + v * v) / n;
            let s = F::one() / (var + eps).sqrt();
            row.mapv_inplace(|v| v * s);
            inv[i] = s;
        }
        self.owned(out, Op::NormalizeRows(a, inv))
    }

    /// Mean squared error against a constant target (1×1).
    pub fn mse(&mut self, pred: Var, target: Array2<F>) -> Var {
        let p = self.value(pred);
        assert_eq!(p.shape(), target.shape(), "mse shape");
        let n = F::from_usize(p.len()).expect("len");
        let l = p
            .iter()
            .zip(target.iter())
            .fold(F::zero(), |acc, (&a, &b)| acc + (a - b) * (a - b))
            / n;
        self.owned(Array2::from_elem((1, 1), l), Op::Mse(pred, target))
    }

    /// Mean binary cross-entropy of logits against 0/1 labels (1×1).
    pub fn bce_with_logits(&mut self, logits: Var, labels: Array2<F>) -> Var {
        let z = self.value(logits);
        assert_eq!(z.shape(), labels.shape(), "bce shape");
        let n = F::from_usize(z.len()).expect("len");
        let l = z.iter().zip(labels.iter()).fold(F::zero(), |acc, (&z, &y)| {
            acc + z.max(F::zero()) - z * y + (-z.abs()).exp().ln_1p()
        }) / n;
        self.owned(Array2::from_elem((1, 1), l), Op::BceWithLogits(logits, labels))
    }

    pub fn sum(&mut self, parts: &[Var]) -> Var {
        let mut v = self.value(parts[0]).to_owned();
        for &p in &parts[1..] {
            v += &self.value(p);
        }
        self.owned(v, Op::Sum(parts.to_vec()))
    }

    /// Backpropagate from the 1×1 node `loss` and add parameter gradients
    /// into `grads` (indexed like the parameter store).
    pub fn backward(&self, loss: Var, grads: &mut [Array2<F>]) {
        let mut adj: Vec<Option<Array2<F>>> = (0..=loss.0).map(|_| None).collect();
        adj[loss.0] = Some(Array2::from_elem(self.nodes[loss.0].value.raw_dim(), F::one()));
        fn acc<F: Float>(adj: &mut [Option<Array2<F>>], v: Var, g: Array2<F>) {
            match &mut adj[v.0] {
                Some(a) => *a += &g,
                slot => *slot = Some(g),
            }
        }
        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Const => {}
                Op::Param(id) => grads[*id] += &g,
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.value(*b).t());
                    let gb = self.value(*a).t().dot(&g);
                    acc(&mut adj, *a, ga);
                    acc(&mut adj, *b, gb);
                }
                Op::MatMulT(a, b) => {
                    let ga = g.dot(&self.value(*b));
                    let gb = g.t().dot(&self.value(*a));
                    acc(&mut adj, *a, ga);
                    acc(&mut adj, *b, gb);
                }
                Op::Add(a, b) => {
                    acc(&mut adj, *b, g.clone());
                    acc(&mut adj, *a, g);
                }
                Op::AddRow(a, r) => {
                    acc(&mut adj, *r, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    acc(&mut adj, *a, g);
                }
                Op::MulRow(a, r) => {
                    let gr = (&g * &self.value(*a)).sum_axis(Axis(0)).insert_axis(Axis(0));
                    let ga = &g * &self.value(*r);
                    acc(&mut adj, *r, gr);
                    acc(&mut adj, *a, ga);
                }
                Op::Relu(a) => {
                    let mut ga = g;
                    ga.zip_mut_with(&node.value, |d, &y| {
                        if y <= F::zero() {
                            *d = F::zero();
                        }
                    });
                    acc(&mut adj, *a, ga);
                }
                Op::Scale(a, c) => acc(&mut adj, *a, g.mapv(|x| x * *c)),
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let mut ga = &g * y;
                    for (mut row, yrow) in ga.rows_mut().into_iter().zip(y.rows()) {
                        let dot = row.sum();
                        row.zip_mut_with(&yrow, |d, &yv| *d = *d - yv * dot);
                    }
                    acc(&mut adj, *a, ga);
                }
                Op::SliceCols(a, start) => {
                    let mut ga = Array2::zeros(self.nodes[a.0].value.raw_dim());
                    ga.slice_mut(s![.., *start..*start + g.ncols()]).assign(&g);
                    acc(&mut adj, *a, ga);
                }
                Op::ConcatCols(parts) => {
                    let mut c = 0;
                    for p in parts {
                        let w = self.nodes[p.0].value.ncols();
                        acc(&mut adj, *p, g.slice(s![.., c..c + w]).to_owned());
                        c += w;
                    }
                }
                Op::NormalizeRows(a, inv) => {
                    let y = &node.value;
                    let n = F::from_usize(y.ncols()).expect("width");
                    let mut ga = g.clone();
                    for ((mut row, yrow), &s) in ga.rows_mut().into_iter().zip(y.rows()).zip(inv.iter()) {
                        let mean_g = row.sum() / n;
                        let mean_gy = row
                            .iter()
                            .zip(yrow.iter())
                            .fold(F::zero(), |acc, (&d, &yv)| acc + d * yv)
                            / n;
                        row.zip_mut_with(&yrow, |d, &yv| *d = s * (*d - mean_g - yv * mean_gy));
                    }
                    acc(&mut adj, *a, ga);
                }
                Op::Mse(p, target) => {
                    let pv = self.value(*p);
                    let n = F::from_usize(pv.len()).expect("len");
                    let c = g[[0, 0]] * F::from_f64(2.0).expect("2") / n;
                    acc(&mut adj, *p, (&pv - target).mapv(|d| d * c));
                }
                Op::BceWithLogits(z, labels) => {
                    let zv = self.value(*z);
                    let n = F::from_usize(zv.len()).expect("len");
                    let c = g[[0, 0]] / n;
                    let mut gz = zv.mapv(|x| F::one() / (F::one() + (-x).exp()));
                    gz.zip_mut_with(labels, |d, &y| *d = (*d - y) * c);
                    acc(&mut adj, *z, gz);
                }
                Op::Sum(parts) => {
                    for p in parts {
                        acc(&mut adj, *p, g.clone());
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn numeric_grad(f: impl Fn(&Array2<f64>) -> f64, x: &Array2<f64>) -> Array2<f64> {
        let h = 1e-6;
        let mut g = Array2::zeros(x.raw_dim());
        for idx in 0..x.len() {
            let (i, j) = (idx / x.ncols(), idx % x.ncols());
            let (mut p, mut m) = (x.clone(), x.clone());
            p[[i, j]] += h;
            m[[i, j]] -= h;
            g[[i, j]] = (f(&p) - f(&m)) / (2.0 * h);
        }
        g
    }

    fn check(build: impl Fn(&mut Graph<f64>, Var) -> Var, x: Array2<f64>) {
        let f = |x: &Array2<f64>| {
            let mut g = Graph::new();
            let v = g.param(0, x.view());
            let out = build(&mut g, v);
            g.scalar(out)
        };
        let mut g = Graph::new();
        let v = g.param(0, x.view());
        let out = build(&mut g, v);
        let mut grads = vec![Array2::zeros(x.raw_dim())];
        g.backward(out, &mut grads);
        let num = numeric_grad(f, &x);
        for (a, n) in grads[0].iter().zip(num.iter()) {
            assert!((a - n).abs() < 1e-6 * (1.0 + n.abs()), "analytic {a} numeric {n}");
        }
    }

    fn x() -> Array2<f64> {
        array![[0.3, -1.2, 0.7], [1.1, 0.4, -0.5]]
    }

    #[test]
    fn op_gradients() {
        let w = array![[0.2, -0.3], [0.5, 0.1], [-0.4, 0.9]];
        let t = array![[0.1, 0.2], [0.3, -0.4]];
        check(
            |g, v| {
                let w = g.constant(w.clone());
                let y = g.matmul(v, w);
                g.mse(y, t.clone())
            },
            x(),
        );
        check(
            |g, v| {
                let y = g.matmul_t(v, v);
                let y = g.softmax_rows(y);
                g.mse(y, array![[0.2, 0.8], [0.5, 0.5]])
            },
            x(),
        );
        check(
            |g, v| {
                let a = g.slice_cols(v, 1, 2);
                let b = g.slice_cols(v, 0, 1);
                let c = g.concat_cols(&[a, b]);
                let d = g.relu(c);
                let e = g.scale(d, 1.7);
                let s = g.add(e, v);
                g.mse(s, Array2::zeros((2, 3)))
            },
            x(),
        );
        check(
            |g, v| {
                let r = g.constant(array![[0.5, -1.0, 2.0]]);
                let a = g.mul_row(v, r);
                let b = g.add_row(a, r);
                let n = g.normalize_rows(b, 1e-5);
                g.mse(n, array![[0.1, 0.2, 0.3], [0.0, -1.0, 1.0]])
            },
            x(),
        );
        check(
            |g, v| {
                let z = g.slice_cols(v, 0, 1);
                let l1 = g.bce_with_logits(z, array![[1.0], [0.0]]);
                let l2 = g.mse(v, Array2::zeros((2, 3)));
                g.sum(&[l1, l2])
            },
            x(),
        );
        // gradients through a broadcast row parameter
        check(
            |g, r| {
                let a = g.constant(x());
                let b = g.mul_row(a, r);
                let c = g.add_row(b, r);
                g.mse(c, Array2::zeros((2, 3)))
            },
            array![[0.5, -1.0, 2.0]],
        );
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut g = Graph::<f32>::new();
        let v = g.constant(array![[1000.0, 1000.0], [-5.0, 3.0]]);
        let s = g.softmax_rows(v);
        for row in g.value(s).rows() {
            assert!((row.sum() - 1.0).abs() < 1e-6);
        }
    }
}
