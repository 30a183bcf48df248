//! Set Transformer encoder: input projection, ISAB blocks, PMA with one
//! seed vector, output projection back to the embedding dimension.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{fan_in_uniform, Checkpoint, Float, Graph, Linear, ParamStore, Var};
use crate::{rng, Error, Result};

pub const SET_ENCODER_KIND: &str = "set-transformer";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SetEncoderConfig {
    pub hidden: usize,
    pub inducing_points: usize,
    pub heads: usize,
    pub blocks: usize,
    /// Feed-forward width inside each attention block; `None` means `hidden`.
    pub ff_width: Option<usize>,
    pub layer_norm: bool,
    pub max_epochs: usize,
    pub patience: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for SetEncoderConfig {
    fn default() -> Self {
        Self {
            hidden: 512,
            inducing_points: 32,
            heads: 4,
            blocks: 2,
            ff_width: None,
            layer_norm: false,
            max_epochs: 200,
            patience: 40,
            lr: 1e-3,
            batch_size: 64,
            seed: 0,
        }
    }
}

impl SetEncoderConfig {
    /// The hyperparameter grid searched per task.
    pub fn grid() -> Vec<Self> {
        let mut out = Vec::new();
        for hidden in [512, 768] {
            for inducing_points in [32, 64, 128] {
                for heads in [4, 8] {
                    out.push(Self {
                        hidden,
                        inducing_points,
                        heads,
                        ..Self::default()
                    });
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.heads == 0 || self.hidden % self.heads != 0 {
            return Err(Error::Config(format!(
                "hidden width {} must be a positive multiple of heads {}",
                self.hidden, self.heads
            )));
        }
        if self.inducing_points == 0 || self.blocks == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "inducing points, blocks and batch size must be positive".into(),
            ));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.lr)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Norm {
    gamma: usize,
    beta: usize,
}

impl Norm {
    fn new(store: &mut ParamStore<f32>, name: &str, width: usize) -> Self {
        Self {
            gamma: store.add(format!("{name}.gamma"), Array2::ones((1, width))),
            beta: store.add(format!("{name}.beta"), Array2::zeros((1, width))),
        }
    }

    fn forward<'p, F: Float>(&self, g: &mut Graph<'p, F>, store: &'p ParamStore<F>, x: Var) -> Var {
        let n = g.normalize_rows(x, F::from_f64(1e-5).expect("eps"));
        let gamma = store.leaf(g, self.gamma);
        let beta = store.leaf(g, self.beta);
        let y = g.mul_row(n, gamma);
        g.add_row(y, beta)
    }
}

/// Multihead attention block `MAB(X, Y)`.
#[derive(Clone, Debug, PartialEq)]
struct Mab {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    ff1: Linear,
    ff2: Linear,
    norms: Option<(Norm, Norm)>,
    heads: usize,
    hidden: usize,
}

impl Mab {
    fn new(store: &mut ParamStore<f32>, name: &str, cfg: &SetEncoderConfig, r: &mut rng::Rng) -> Self {
        let h = cfg.hidden;
        let ff = cfg.ff_width.unwrap_or(h);
        Self {
            q: Linear::new(store, &format!("{name}.q"), h, h, r),
            k: Linear::new(store, &format!("{name}.k"), h, h, r),
            v: Linear::new(store, &format!("{name}.v"), h, h, r),
            o: Linear::new(store, &format!("{name}.o"), h, h, r),
            ff1: Linear::new(store, &format!("{name}.ff1"), h, ff, r),
            ff2: Linear::new(store, &format!("{name}.ff2"), ff, h, r),
            norms: cfg.layer_norm.then(|| {
                (
                    Norm::new(store, &format!("{name}.ln0"), h),
                    Norm::new(store, &format!("{name}.ln1"), h),
                )
            }),
            heads: cfg.heads,
            hidden: h,
        }
    }

    fn forward<'p, F: Float>(&self, g: &mut Graph<'p, F>, store: &'p ParamStore<F>, x: Var, y: Var) -> Var {
        let q = self.q.forward(g, store, x);
        let k = self.k.forward(g, store, y);
        let v = self.v.forward(g, store, y);
        let dh = self.hidden / self.heads;
        let scale = F::from_f64(1.0 / (dh as f64).sqrt()).expect("scale");
        let heads: Vec<Var> = (0..self.heads)
            .map(|i| {
                let qi = g.slice_cols(q, i * dh, dh);
                let ki = g.slice_cols(k, i * dh, dh);
                let vi = g.slice_cols(v, i * dh, dh);
                let s = g.matmul_t(qi, ki);
                let s = g.scale(s, scale);
                let a = g.softmax_rows(s);
                g.matmul(a, vi)
            })
            .collect();
        let attn = g.concat_cols(&heads);
        let attn = self.o.forward(g, store, attn);
        let mut h = g.add(q, attn);
        if let Some((n0, _)) = &self.norms {
            h = n0.forward(g, store, h);
        }
        let f = self.ff1.forward(g, store, h);
        let f = g.relu(f);
        let f = self.ff2.forward(g, store, f);
        let mut out = g.add(h, f);
        if let Some((_, n1)) = &self.norms {
            out = n1.forward(g, store, out);
        }
        out
    }
}

/// Induced set attention block.
#[derive(Clone, Debug, PartialEq)]
struct Isab {
    inducing: usize,
    to_inducing: Mab,
    from_inducing: Mab,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SetEncoder {
    dim: usize,
    cfg: SetEncoderConfig,
    pub params: ParamStore<f32>,
    input: Linear,
    blocks: Vec<Isab>,
    seed_vector: usize,
    pma: Mab,
    output: Linear,
}

impl SetEncoder {
    /// `dim` is the embedding dimension of inputs and output.
    pub fn new(dim: usize, cfg: SetEncoderConfig) -> Result<Self> {
        cfg.validate()?;
        let mut r = rng::seeded(rng::derive(cfg.seed, "set-encoder-init"));
        let mut params = ParamStore::default();
        let h = cfg.hidden;
        let input = Linear::new(&mut params, "input", dim, h, &mut r);
        let blocks = (0..cfg.blocks)
            .map(|b| Isab {
                inducing: params.add(
                    format!("isab{b}.inducing"),
                    fan_in_uniform(cfg.inducing_points, h, h, &mut r),
                ),
                to_inducing: Mab::new(&mut params, &format!("isab{b}.mab0"), &cfg, &mut r),
                from_inducing: Mab::new(&mut params, &format!("isab{b}.mab1"), &cfg, &mut r),
            })
            .collect();
        let seed_vector = params.add("pma.seed", fan_in_uniform(1, h, h, &mut r));
        let pma = Mab::new(&mut params, "pma.mab", &cfg, &mut r);
        let output = Linear::new(&mut params, "output", h, dim, &mut r);
        Ok(Self {
            dim,
            cfg,
            params,
            input,
            blocks,
            seed_vector,
            pma,
            output,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn config(&self) -> &SetEncoderConfig {
        &self.cfg
    }

    /// Encode an `n × dim` set into a `1 × dim` prediction.
    pub fn forward<'p, F: Float>(&self, g: &mut Graph<'p, F>, store: &'p ParamStore<F>, set: Array2<F>) -> Var {
        let x = g.constant(set);
        let mut h = self.input.forward(g, store, x);
        for b in &self.blocks {
            let i = store.leaf(g, b.inducing);
            let summary = b.to_inducing.forward(g, store, i, h);
            h = b.from_inducing.forward(g, store, h, summary);
        }
        let s = store.leaf(g, self.seed_vector);
        let pooled = self.pma.forward(g, store, s, h);
        self.output.forward(g, store, pooled)
    }

    pub fn loss<'p, F: Float>(
        &self,
        g: &mut Graph<'p, F>,
        store: &'p ParamStore<F>,
        set: Array2<F>,
        target: Array2<F>,
    ) -> Var {
        let pred = self.forward(g, store, set);
        g.mse(pred, target)
    }

    pub fn set_matrix(&self, inputs: &[&[f32]]) -> Result<Array2<f32>> {
        if inputs.is_empty() {
            return Err(Error::EmptySet);
        }
        let mut x = Array2::zeros((inputs.len(), self.dim));
        for (mut row, v) in x.rows_mut().into_iter().zip(inputs) {
            if v.len() != self.dim {
                return Err(Error::DimMismatch {
                    expected: self.dim,
                    found: v.len(),
                });
            }
            row.assign(&ndarray::ArrayView1::from(*v));
        }
        Ok(x)
    }

    pub fn encode(&self, inputs: &[&[f32]]) -> Result<Vec<f32>> {
        let x = self.set_matrix(inputs)?;
        let mut g = Graph::new();
        let out = self.forward(&mut g, &self.params, x);
        Ok(g.value(out).iter().copied().collect())
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let cfg = serde_json::to_value(&self.cfg).expect("config serializes");
        Checkpoint::new(
            SET_ENCODER_KIND,
            serde_json::json!({ "dim": self.dim, "model": cfg }),
            &self.params,
        )
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.kind != SET_ENCODER_KIND {
            return Err(Error::Config(format!(
                "expected a {SET_ENCODER_KIND} checkpoint, found {}",
                ck.kind
            )));
        }
        let dim = ck.config["dim"]
            .as_u64()
            .ok_or_else(|| Error::Config("checkpoint config lacks dim".into()))? as usize;
        let cfg: SetEncoderConfig =
            serde_json::from_value(ck.config["model"].clone()).map_err(|e| Error::Config(e.to_string()))?;
        let mut m = Self::new(dim, cfg)?;
        ck.restore_into(&mut m.params)?;
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradient_check;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;

    fn small(layer_norm: bool) -> SetEncoderConfig {
        SetEncoderConfig {
            hidden: 8,
            inducing_points: 3,
            heads: 2,
            blocks: 2,
            layer_norm,
            ..SetEncoderConfig::default()
        }
    }

    fn random_set(n: usize, dim: usize, seed: u64) -> Array2<f32> {
        use rand::Rng;
        let mut r = rng::seeded(seed);
        Array2::from_shape_simple_fn((n, dim), || r.gen_range(-1.0..1.0))
    }

    #[test]
    fn grid_has_twelve_configs() {
        let g = SetEncoderConfig::grid();
        assert_eq!(g.len(), 12);
        assert!(g.iter().all(|c| c.validate().is_ok()));
    }

    #[test]
    fn rejects_bad_head_split() {
        let cfg = SetEncoderConfig {
            hidden: 10,
            heads: 4,
            ..SetEncoderConfig::default()
        };
        assert!(SetEncoder::new(4, cfg).is_err());
    }

    #[test]
    fn empty_set_is_an_error() {
        let m = SetEncoder::new(4, small(false)).unwrap();
        assert!(matches!(m.encode(&[]), Err(Error::EmptySet)));
        assert!(matches!(m.encode(&[&[1.0, 2.0]]), Err(Error::DimMismatch { .. })));
    }

    #[test]
    fn gradients_match_finite_differences() {
        for ln in [false, true] {
            let m = SetEncoder::new(4, small(ln)).unwrap();
            let x = random_set(5, 4, 1).mapv(f64::from);
            let t = random_set(1, 4, 2).mapv(f64::from);
            let res = gradient_check(&m.params, |g, s| m.loss(g, s, x.clone(), t.clone()), 32, 3);
            assert!(res.max_rel_error < 1e-4, "layer_norm={ln}: {res:?}");
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = SetEncoder::new(4, small(true)).unwrap();
        let back = SetEncoder::from_checkpoint(&m.checkpoint()).unwrap();
        assert_eq!(back, m);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn output_ignores_input_order(n in 1usize..12, seed in 0u64..1000) {
            let m = SetEncoder::new(4, small(false)).unwrap();
            let x = random_set(n, 4, seed);
            let rows: Vec<Vec<f32>> = x.rows().into_iter().map(|r| r.to_vec()).collect();
            let mut perm: Vec<&[f32]> = rows.iter().map(Vec::as_slice).collect();
            let base = m.encode(&perm).unwrap();
            perm.shuffle(&mut rng::seeded(seed + 1));
            let shuffled = m.encode(&perm).unwrap();
            for (a, b) in base.iter().zip(&shuffled) {
                prop_assert!((a - b).abs() < 1e-5);
            }
        }
    }
}
