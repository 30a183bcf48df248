//! Pair classifier: `[e(a); e(b)]` → 100 ReLU → 1 logit.

use ndarray::Array2;

use super::{Checkpoint, Float, Graph, Linear, ParamStore, Var};
use crate::{rng, Error, Result};

pub const MLP_HIDDEN: usize = 100;
pub const MLP_KIND: &str = "two-parts-mlp";

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    dim: usize,
    pub params: ParamStore<f32>,
    hidden: Linear,
    out: Linear,
}

impl Mlp {
    /// `dim` is the embedding dimension; the input layer sees `2 * dim`.
    pub fn new(dim: usize, seed: u64) -> Self {
        let mut r = rng::seeded(rng::derive(seed, "mlp-init"));
        let mut params = ParamStore::default();
        let hidden = Linear::new(&mut params, "hidden", 2 * dim, MLP_HIDDEN, &mut r);
        let out = Linear::new(&mut params, "out", MLP_HIDDEN, 1, &mut r);
        Self {
            dim,
            params,
            hidden,
            out,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn logits<'p, F: Float>(&self, g: &mut Graph<'p, F>, store: &'p ParamStore<F>, x: Var) -> Var {
        let h = self.hidden.forward(g, store, x);
        let h = g.relu(h);
        self.out.forward(g, store, h)
    }

    /// Mean binary cross-entropy of a batch; `x` is `n × 2·dim`, `y` is `n × 1`.
    pub fn loss<'p, F: Float>(
        &self,
        g: &mut Graph<'p, F>,
        store: &'p ParamStore<F>,
        x: Array2<F>,
        y: Array2<F>,
    ) -> Var {
        let xv = g.constant(x);
        let z = self.logits(g, store, xv);
        g.bce_with_logits(z, y)
    }

    pub fn predict_proba(&self, x: Array2<f32>) -> Vec<f64> {
        let mut g = Graph::new();
        let xv = g.constant(x);
        let z = self.logits(&mut g, &self.params, xv);
        g.value(z)
            .iter()
            .map(|&z| 1.0 / (1.0 + (-f64::from(z)).exp()))
            .collect()
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::new(
            MLP_KIND,
            serde_json::json!({ "dim": self.dim, "hidden": MLP_HIDDEN }),
            &self.params,
        )
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.kind != MLP_KIND {
            return Err(Error::Config(format!(
                "expected a {MLP_KIND} checkpoint, found {}",
                ck.kind
            )));
        }
        let dim = ck.config["dim"]
            .as_u64()
            .ok_or_else(|| Error::Config("checkpoint config lacks dim".into()))? as usize;
        let mut m = Self::new(dim, 0);
        ck.restore_into(&mut m.params)?;
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradient_check;
    use ndarray::array;

    #[test]
    fn mlp_gradients_match_finite_differences() {
        let m = Mlp::new(3, 1);
        let x = array![[0.1, 0.5, -0.2, 0.3, 0.0, 1.0], [-1.0, 0.2, 0.2, 0.7, -0.4, 0.1]];
        let y = array![[1.0], [0.0]];
        let res = gradient_check(&m.params, |g, s| m.loss(g, s, x.clone(), y.clone()), 32, 5);
        assert_eq!(res.coordinates, 32);
        assert!(res.max_rel_error < 1e-4, "{res:?}");
    }

    #[test]
    fn probabilities_are_in_range() {
        let m = Mlp::new(2, 0);
        let p = m.predict_proba(array![[1.0, 2.0, 3.0, 4.0], [0.0, 0.0, 0.0, 0.0]]);
        assert_eq!(p.len(), 2);
        assert!(p.iter().all(|p| (0.0..=1.0).contains(p)));
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = Mlp::new(4, 9);
        let back = Mlp::from_checkpoint(&m.checkpoint()).unwrap();
        assert_eq!(back, m);
    }
}
