//! Small neural-network toolkit: autodiff graph, parameters, Adam, and the
//! two evaluator models.
//!
//! Models are generic over [`Float`] so the same forward code trains in
//! `f32` and is checked against finite differences in `f64`.

mod graph;
mod mlp;
mod set_encoder;

use std::path::Path;

use ndarray::Array2;
use rand::distributions::{Distribution, Uniform};
use rand::seq::index;
use serde::{Deserialize, Serialize};

pub use graph::{Graph, Var};
pub use mlp::{Mlp, MLP_HIDDEN};
pub use set_encoder::{SetEncoder, SetEncoderConfig};

use crate::{rng, Error, Result};

pub trait Float:
    num_traits::Float
    + num_traits::FromPrimitive
    + ndarray::LinalgScalar
    + ndarray::ScalarOperand
    + std::ops::AddAssign
    + std::fmt::Debug
    + Send
    + Sync
    + 'static
{
}

impl Float for f32 {}
impl Float for f64 {}

/// Named 2-D parameter tensors, addressed by insertion index.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<F = f32> {
    names: Vec<String>,
    values: Vec<Array2<F>>,
}

impl<F: Float> Default for ParamStore<F> {
    fn default() -> Self {
        Self {
            names: Vec::new(),
            values: Vec::new(),
        }
    }
}

impl<F: Float> ParamStore<F> {
    pub fn add(&mut self, name: impl Into<String>, value: Array2<F>) -> usize {
        self.names.push(name.into());
        self.values.push(value);
        self.values.len() - 1
    }

    pub fn get(&self, id: usize) -> &Array2<F> {
        &self.values[id]
    }

    pub fn get_mut(&mut self, id: usize) -> &mut Array2<F> {
        &mut self.values[id]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Array2::len).sum()
    }

    pub fn zeros_like(&self) -> Vec<Array2<F>> {
        self.values.iter().map(|v| Array2::zeros(v.raw_dim())).collect()
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.iter().all(|x| x.is_finite()))
    }

    pub fn cast<G: Float>(&self) -> ParamStore<G> {
        ParamStore {
            names: self.names.clone(),
            values: self
                .values
                .iter()
                .map(|v| v.mapv(|x| G::from(x).expect("representable")))
                .collect(),
        }
    }

    /// Leaf for parameter `id` in `g`.
    pub fn leaf<'p>(&'p self, g: &mut Graph<'p, F>, id: usize) -> Var {
        g.param(id, self.values[id].view())
    }
}

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialization.
pub fn fan_in_uniform(rows: usize, cols: usize, fan_in: usize, r: &mut rng::Rng) -> Array2<f32> {
    let bound = 1.0 / (fan_in.max(1) as f32).sqrt();
    let u = Uniform::new_inclusive(-bound, bound);
    Array2::from_shape_simple_fn((rows, cols), || u.sample(r))
}

/// Affine map `x · W + b`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Linear {
    pub w: usize,
    pub b: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore<f32>, name: &str, inputs: usize, outputs: usize, r: &mut rng::Rng) -> Self {
        let w = store.add(format!("{name}.w"), fan_in_uniform(inputs, outputs, inputs, r));
        let b = store.add(format!("{name}.b"), fan_in_uniform(1, outputs, inputs, r));
        Self { w, b }
    }

    pub fn forward<'p, F: Float>(&self, g: &mut Graph<'p, F>, store: &'p ParamStore<F>, x: Var) -> Var {
        let w = store.leaf(g, self.w);
        let b = store.leaf(g, self.b);
        let y = g.matmul(x, w);
        g.add_row(y, b)
    }
}

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
    m: Vec<Array2<f32>>,
    v: Vec<Array2<f32>>,
}

impl Adam {
    pub fn new(store: &ParamStore<f32>, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: store.zeros_like(),
            v: store.zeros_like(),
        }
    }

    pub fn step(&mut self, store: &mut ParamStore<f32>, grads: &[Array2<f32>]) {
        self.t += 1;
        let (b1, b2) = (self.beta1 as f32, self.beta2 as f32);
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        let step = (self.lr * c2.sqrt() / c1) as f32;
        let eps = (self.eps * c2.sqrt()) as f32;
        for (i, g) in grads.iter().enumerate() {
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            m.zip_mut_with(g, |m, &g| *m = b1 * *m + (1.0 - b1) * g);
            v.zip_mut_with(g, |v, &g| *v = b2 * *v + (1.0 - b2) * g * g);
            let p = store.get_mut(i);
            ndarray::Zip::from(p).and(&*m).and(&*v).for_each(|p, &m, &v| {
                *p -= step * m / (v.sqrt() + eps);
            });
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub shape: [usize; 2],
    pub data: Vec<f32>,
}

/// Self-describing model file: kind, configuration and named tensors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub kind: String,
    pub config: serde_json::Value,
    pub tensors: Vec<TensorRecord>,
}

impl Checkpoint {
    pub fn new(kind: &str, config: serde_json::Value, store: &ParamStore<f32>) -> Self {
        let tensors = store
            .names
            .iter()
            .zip(&store.values)
            .map(|(name, v)| TensorRecord {
                name: name.clone(),
                shape: [v.nrows(), v.ncols()],
                data: v.iter().copied().collect(),
            })
            .collect();
        Self {
            kind: kind.to_string(),
            config,
            tensors,
        }
    }

    /// Copy tensors into `store`, which must have the same names and shapes.
    pub fn restore_into(&self, store: &mut ParamStore<f32>) -> Result<()> {
        if self.tensors.len() != store.len() {
            return Err(Error::Config(format!(
                "checkpoint has {} tensors, model expects {}",
                self.tensors.len(),
                store.len()
            )));
        }
        for (i, t) in self.tensors.iter().enumerate() {
            let want = store.get(i).raw_dim();
            if t.name != store.names[i] || [want[0], want[1]] != t.shape {
                return Err(Error::Config(format!(
                    "checkpoint tensor {} does not match the model",
                    t.name
                )));
            }
            let arr = Array2::from_shape_vec((t.shape[0], t.shape[1]), t.data.clone())
                .map_err(|e| Error::Config(e.to_string()))?;
            *store.get_mut(i) = arr;
        }
        if !store.all_finite() {
            return Err(Error::Config("checkpoint holds non-finite values".into()));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).expect("checkpoint serializes");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::parse(path.display().to_string(), e.line(), e.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub coordinates: usize,
    pub max_abs_grad: f64,
}

/// Compare analytic gradients with central differences (step 1e-4, in
/// `f64`) on up to `coords` randomly chosen parameter coordinates.
/// Relative error is `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn gradient_check<B>(params: &ParamStore<f32>, build: B, coords: usize, seed: u64) -> GradCheck
where
    B: for<'p> Fn(&mut Graph<'p, f64>, &'p ParamStore<f64>) -> Var,
{
    let store: ParamStore<f64> = params.cast();
    let loss_at = |s: &ParamStore<f64>| {
        let mut g = Graph::new();
        let v = build(&mut g, s);
        g.scalar(v)
    };
    let mut grads = store.zeros_like();
    {
        let mut g = Graph::new();
        let loss = build(&mut g, &store);
        g.backward(loss, &mut grads);
    }

    let total = store.num_scalars();
    let mut r = rng::seeded(seed);
    let picks = index::sample(&mut r, total, coords.min(total));
    let offsets: Vec<usize> = store
        .values
        .iter()
        .scan(0, |acc, v| {
            let o = *acc;
            *acc += v.len();
            Some(o)
        })
        .collect();
    let h = 1e-4;
    let mut out = GradCheck {
        max_rel_error: 0.0,
        coordinates: picks.len(),
        max_abs_grad: 0.0,
    };
    let mut probe = store.clone();
    for flat in picks.iter() {
        let p = offsets.partition_point(|&o| o <= flat) - 1;
        let local = flat - offsets[p];
        let orig = store.values[p].as_slice().expect("standard layout")[local];
        probe.values[p].as_slice_mut().expect("standard layout")[local] = orig + h;
        let up = loss_at(&probe);
        probe.values[p].as_slice_mut().expect("standard layout")[local] = orig - h;
        let down = loss_at(&probe);
        probe.values[p].as_slice_mut().expect("standard layout")[local] = orig;
        let numeric = (up - down) / (2.0 * h);
        let analytic = grads[p].as_slice().expect("standard layout")[local];
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
        out.max_rel_error = out.max_rel_error.max(rel);
        out.max_abs_grad = out.max_abs_grad.max(analytic.abs());
    }
    out
}

fn probe_matrix(rows: usize, cols: usize, r: &mut rng::Rng) -> Array2<f64> {
    let u = Uniform::new(-1.0, 1.0);
    Array2::from_shape_simple_fn((rows, cols), || u.sample(r))
}

/// Random pair batch for gradient checks: `n × 2·dim` inputs, alternating labels.
pub fn probe_pairs(dim: usize, n: usize, seed: u64) -> (Array2<f64>, Array2<f64>) {
    let mut r = rng::seeded(rng::derive(seed, "probe-pairs"));
    let x = probe_matrix(n, 2 * dim, &mut r);
    let y = Array2::from_shape_fn((n, 1), |(i, _)| (i % 2) as f64);
    (x, y)
}

/// Random `n × dim` input set and `1 × dim` target for gradient checks.
pub fn probe_set(dim: usize, n: usize, seed: u64) -> (Array2<f64>, Array2<f64>) {
    let mut r = rng::seeded(rng::derive(seed, "probe-set"));
    (probe_matrix(n, dim, &mut r), probe_matrix(1, dim, &mut r))
}
