//! Training loops, ranking metrics and multi-trial reports.
//!
//! Embedding tables are only ever borrowed immutably here; models read
//! frozen vectors and never write back into a table.

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, DefaultPatterns, DocumentRecord, Split};
use crate::embedding::EmbeddingTable;
use crate::nn::{Adam, Checkpoint, Graph, Mlp, SetEncoder, SetEncoderConfig};
use crate::tasks::{self, PairConfig, PairSample, RankingBatch, RankingTask, SetInstance};
use crate::{rng, Error, Exec, Result};

/// Instances per gradient chunk. Chunks are summed in a fixed order, so the
/// result does not depend on the number of worker threads.
const GRAD_CHUNK: usize = 8;

fn embedding<'t>(table: &'t EmbeddingTable, s: &str) -> Result<&'t [f32]> {
    table.get(s).ok_or_else(|| Error::MissingEmbedding(s.to_string()))
}

/// Cosine similarity accumulated in `f64`; zero-norm inputs give −∞.
pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (f64::from(x), f64::from(y));
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        f64::NEG_INFINITY
    } else {
        dot / (na.sqrt() * nb.sqrt())
    }
}

/// Index of the candidate most cosine-similar to `predicted`; the first one
/// wins ties. The predicted vector's norm is a common positive factor and is
/// left out of the score, so the argmax does not depend on it.
pub fn cosine_rank(predicted: &[f32], candidates: &[&[f32]]) -> Result<usize> {
    if candidates.is_empty() {
        return Err(Error::NoCandidates);
    }
    let mut best = (0, f64::NEG_INFINITY);
    for (i, c) in candidates.iter().enumerate() {
        if c.len() != predicted.len() {
            return Err(Error::DimMismatch {
                expected: predicted.len(),
                found: c.len(),
            });
        }
        let (mut dot, mut nc) = (0.0f64, 0.0f64);
        for (&p, &x) in predicted.iter().zip(c.iter()) {
            dot += f64::from(p) * f64::from(x);
            nc += f64::from(x) * f64::from(x);
        }
        let score = if nc == 0.0 { f64::NEG_INFINITY } else { dot / nc.sqrt() };
        if score > best.1 {
            best = (i, score);
        }
    }
    Ok(best.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    /// Pair MLP defaults.
    fn default() -> Self {
        Self {
            lr: 1e-3,
            batch_size: 64,
            max_epochs: 100,
            patience: 10,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<M> {
    pub model: M,
    pub best_epoch: usize,
    pub best_validation_loss: f64,
    pub train_losses: Vec<f64>,
    pub validation_losses: Vec<f64>,
}

impl<M> TrainOutcome<M> {
    pub fn epochs_run(&self) -> usize {
        self.train_losses.len()
    }
}

fn pair_data(pairs: &[PairSample], table: &EmbeddingTable) -> Result<(Array2<f32>, Array2<f32>)> {
    let dim = table.dim();
    let mut x = Array2::zeros((pairs.len(), 2 * dim));
    let mut y = Array2::zeros((pairs.len(), 1));
    for (i, p) in pairs.iter().enumerate() {
        let a = embedding(table, &p.part_a)?;
        let b = embedding(table, &p.part_b)?;
        x.row_mut(i)
            .iter_mut()
            .zip(a.iter().chain(b))
            .for_each(|(d, s)| *d = *s);
        y[[i, 0]] = if p.positive { 1.0 } else { 0.0 };
    }
    Ok((x, y))
}

fn mlp_loss(model: &Mlp, x: Array2<f32>, y: Array2<f32>) -> f64 {
    let mut g = Graph::new();
    let l = model.loss(&mut g, &model.params, x, y);
    f64::from(g.scalar(l))
}

/// Train the pair classifier with Adam on shuffled mini-batches; the
/// parameters with the lowest validation BCE are returned.
pub fn mlp_train(
    train: &[PairSample],
    validation: &[PairSample],
    table: &EmbeddingTable,
    cfg: &TrainConfig,
) -> Result<TrainOutcome<Mlp>> {
    if train.is_empty() || validation.is_empty() {
        return Err(Error::NoEligiblePairs);
    }
    let (x, y) = pair_data(train, table)?;
    let (vx, vy) = pair_data(validation, table)?;
    let mut model = Mlp::new(table.dim(), cfg.seed);
    let mut opt = Adam::new(&model.params, cfg.lr);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut r = rng::seeded(rng::derive(cfg.seed, "mlp-shuffle"));
    let mut out = TrainOutcome {
        model: model.clone(),
        best_epoch: 0,
        best_validation_loss: f64::INFINITY,
        train_losses: Vec::new(),
        validation_losses: Vec::new(),
    };
    for epoch in 0..cfg.max_epochs {
        order.shuffle(&mut r);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let bx = x.select(ndarray::Axis(0), chunk);
            let by = y.select(ndarray::Axis(0), chunk);
            let mut grads = model.params.zeros_like();
            let loss = {
                let mut g = Graph::new();
                let l = model.loss(&mut g, &model.params, bx, by);
                g.backward(l, &mut grads);
                f64::from(g.scalar(l))
            };
            if !loss.is_finite() {
                return Err(Error::NonFinite {
                    what: "training loss",
                    epoch,
                });
            }
            total += loss * chunk.len() as f64;
            opt.step(&mut model.params, &grads);
        }
        let val = mlp_loss(&model, vx.clone(), vy.clone());
        if !val.is_finite() {
            return Err(Error::NonFinite {
                what: "validation loss",
                epoch,
            });
        }
        out.train_losses.push(total / train.len() as f64);
        out.validation_losses.push(val);
        if val < out.best_validation_loss {
            out.best_validation_loss = val;
            out.best_epoch = epoch;
            out.model = model.clone();
        } else if epoch - out.best_epoch >= cfg.patience {
            break;
        }
    }
    log::debug!(
        "mlp: {} epochs, best validation BCE {:.4} at epoch {}",
        out.epochs_run(),
        out.best_validation_loss,
        out.best_epoch
    );
    Ok(out)
}

/// Fraction of pairs whose predicted probability falls on the correct side of 0.5.
pub fn mlp_accuracy(model: &Mlp, pairs: &[PairSample], table: &EmbeddingTable) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::NoEligiblePairs);
    }
    let (x, _) = pair_data(pairs, table)?;
    let p = model.predict_proba(x);
    let hits = p.iter().zip(pairs).filter(|(p, s)| (**p >= 0.5) == s.positive).count();
    Ok(hits as f64 / pairs.len() as f64)
}

struct Prepared {
    set: Array2<f32>,
    target: Array2<f32>,
}

fn prepare(instances: &[SetInstance], table: &EmbeddingTable) -> Result<Vec<Prepared>> {
    let dim = table.dim();
    instances
        .iter()
        .map(|inst| {
            if inst.inputs.is_empty() {
                return Err(Error::EmptySet);
            }
            let mut set = Array2::zeros((inst.inputs.len(), dim));
            for (mut row, s) in set.rows_mut().into_iter().zip(&inst.inputs) {
                row.assign(&ndarray::ArrayView1::from(embedding(table, s)?));
            }
            let target =
                Array2::from_shape_vec((1, dim), embedding(table, &inst.target)?.to_vec()).expect("target shape");
            Ok(Prepared { set, target })
        })
        .collect()
}

fn set_loss(model: &SetEncoder, p: &Prepared) -> f64 {
    let mut g = Graph::new();
    let l = model.loss(&mut g, &model.params, p.set.clone(), p.target.clone());
    f64::from(g.scalar(l))
}

fn mean_set_loss(model: &SetEncoder, data: &[Prepared], exec: Exec) -> f64 {
    let losses = exec.map(data, |p| set_loss(model, p));
    losses.iter().sum::<f64>() / data.len().max(1) as f64
}

/// Train a set encoder to regress the embedding of each instance's target.
///
/// `train(epoch)` supplies that epoch's instances (Missing Part redraws its
/// held-out part every epoch). Early stopping watches the mean validation
/// MSE with `cfg.patience`; the best parameters are returned.
pub fn set_encoder_train(
    train: &dyn Fn(usize) -> Vec<SetInstance>,
    validation: &[SetInstance],
    table: &EmbeddingTable,
    cfg: &SetEncoderConfig,
    exec: Exec,
) -> Result<TrainOutcome<SetEncoder>> {
    let mut model = SetEncoder::new(table.dim(), cfg.clone())?;
    let val = prepare(validation, table)?;
    if val.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut opt = Adam::new(&model.params, cfg.lr);
    let mut r = rng::seeded(rng::derive(cfg.seed, "set-shuffle"));
    let mut out = TrainOutcome {
        model: model.clone(),
        best_epoch: 0,
        best_validation_loss: f64::INFINITY,
        train_losses: Vec::new(),
        validation_losses: Vec::new(),
    };
    for epoch in 0..cfg.max_epochs {
        let mut data = prepare(&train(epoch), table)?;
        if data.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        data.shuffle(&mut r);
        let mut total = 0.0;
        for batch in data.chunks(cfg.batch_size) {
            let chunks: Vec<&[Prepared]> = batch.chunks(GRAD_CHUNK).collect();
            let parts = exec.map(&chunks, |chunk| {
                let mut grads = model.params.zeros_like();
                let mut loss = 0.0;
                for p in chunk.iter() {
                    let mut g = Graph::new();
                    let l = model.loss(&mut g, &model.params, p.set.clone(), p.target.clone());
                    g.backward(l, &mut grads);
                    loss += f64::from(g.scalar(l));
                }
                (loss, grads)
            });
            let mut parts = parts.into_iter();
            let (mut loss, mut grads) = parts.next().expect("non-empty batch");
            for (l, g) in parts {
                loss += l;
                grads.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
            }
            if !loss.is_finite() {
                return Err(Error::NonFinite {
                    what: "training loss",
                    epoch,
                });
            }
            let scale = 1.0 / batch.len() as f32;
            grads.iter_mut().for_each(|g| *g *= scale);
            opt.step(&mut model.params, &grads);
            total += loss;
        }
        let v = mean_set_loss(&model, &val, exec);
        if !v.is_finite() {
            return Err(Error::NonFinite {
                what: "validation loss",
                epoch,
            });
        }
        out.train_losses.push(total / data.len() as f64);
        out.validation_losses.push(v);
        log::debug!(
            "set encoder epoch {epoch}: train {:.5} validation {v:.5}",
            total / data.len() as f64
        );
        if v < out.best_validation_loss {
            out.best_validation_loss = v;
            out.best_epoch = epoch;
            out.model = model.clone();
        } else if epoch - out.best_epoch >= cfg.patience {
            break;
        }
    }
    Ok(out)
}

/// One ranked instance, kept for qualitative listings.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub doc_id: String,
    pub inputs: Vec<String>,
    pub target: String,
    pub predicted: String,
    pub correct: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankingResult {
    pub accuracy: f64,
    pub instances: usize,
    pub predictions: Vec<Prediction>,
}

/// Rank every instance of every batch with `predict`, in parallel.
pub fn rank_batches<P>(
    batches: &[RankingBatch],
    table: &EmbeddingTable,
    exec: Exec,
    predict: P,
) -> Result<RankingResult>
where
    P: Fn(usize, usize, &[&[f32]]) -> Result<Vec<f32>> + Sync + Send,
{
    let cands: Vec<Vec<&[f32]>> = batches
        .iter()
        .map(|b| b.candidates.iter().map(|c| embedding(table, c)).collect::<Result<_>>())
        .collect::<Result<_>>()?;
    let index: Vec<(usize, usize)> = batches
        .iter()
        .enumerate()
        .flat_map(|(b, batch)| (0..batch.instances.len()).map(move |i| (b, i)))
        .collect();
    let preds = exec.map(&index, |&(b, i)| -> Result<Prediction> {
        let batch = &batches[b];
        let inst = &batch.instances[i];
        let inputs: Vec<&[f32]> = inst.inputs.iter().map(|s| embedding(table, s)).collect::<Result<_>>()?;
        let v = predict(b, i, &inputs)?;
        let k = cosine_rank(&v, &cands[b])?;
        Ok(Prediction {
            doc_id: inst.doc_id.clone(),
            inputs: inst.inputs.clone(),
            target: batch.target(inst).to_string(),
            predicted: batch.candidates[k].clone(),
            correct: k == inst.target_index,
        })
    });
    let predictions: Vec<Prediction> = preds.into_iter().collect::<Result<_>>()?;
    let hits = predictions.iter().filter(|p| p.correct).count();
    Ok(RankingResult {
        accuracy: hits as f64 / predictions.len().max(1) as f64,
        instances: predictions.len(),
        predictions,
    })
}

pub fn ranking_accuracy(
    model: &SetEncoder,
    batches: &[RankingBatch],
    table: &EmbeddingTable,
    exec: Exec,
) -> Result<RankingResult> {
    rank_batches(batches, table, exec, |_, _, inputs| model.encode(inputs))
}

/// Random baseline: each instance's prediction is a fresh standard normal
/// vector, so every candidate is equally likely to be closest.
pub fn random_ranking(
    batches: &[RankingBatch],
    table: &EmbeddingTable,
    seed: u64,
    exec: Exec,
) -> Result<RankingResult> {
    let dim = table.dim();
    rank_batches(batches, table, exec, |b, i, _| {
        let mut r = rng::seeded(rng::derive(seed, &format!("random-rank/{b}/{i}")));
        Ok((0..dim).map(|_| StandardNormal.sample(&mut r)).collect())
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialReport {
    pub task: String,
    pub model: String,
    pub accuracies: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation (n − 1 denominator); 0 for one trial.
    pub std: f64,
    pub n_trials: usize,
    pub seeds: Vec<u64>,
}

impl TrialReport {
    pub fn new(task: &str, model: &str, seeds: Vec<u64>, accuracies: Vec<f64>) -> Self {
        let (mean, std) = mean_std(&accuracies);
        Self {
            task: task.to_string(),
            model: model.to_string(),
            n_trials: accuracies.len(),
            accuracies,
            mean,
            std,
            seeds,
        }
    }

    pub fn is_consistent(&self) -> bool {
        let (mean, std) = mean_std(&self.accuracies);
        self.n_trials == self.accuracies.len()
            && self.seeds.len() == self.n_trials
            && mean.to_bits() == self.mean.to_bits()
            && std.to_bits() == self.std.to_bits()
    }
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Seed of trial `i` under `base`.
pub fn trial_seed(base: u64, i: usize) -> u64 {
    rng::derive(base, &format!("trial/{i}"))
}

#[derive(Clone, Debug)]
pub struct TrialOutput {
    pub report: TrialReport,
    /// Test predictions of the first trial, for qualitative listings.
    pub predictions: Vec<Prediction>,
    /// Trained model of the first trial (none for the Random model).
    pub checkpoint: Option<Checkpoint>,
}

fn pair_predictions(pairs: &[PairSample], predicted: &[bool]) -> Vec<Prediction> {
    pairs
        .iter()
        .zip(predicted)
        .map(|(p, &guess)| Prediction {
            doc_id: p.doc_id_a.clone(),
            inputs: vec![p.part_a.clone(), p.part_b.clone()],
            target: if p.positive { "same" } else { "different" }.into(),
            predicted: if guess { "same" } else { "different" }.into(),
            correct: guess == p.positive,
        })
        .collect()
}

/// Two Parts over `trials` seeds. Each trial samples its own pair sub-splits
/// and initialization; `table = None` is the Random model (coin flips).
pub fn run_two_parts(
    corpus: &Corpus,
    table: Option<&EmbeddingTable>,
    model_name: &str,
    trials: usize,
    base_seed: u64,
    pair_cfg: &PairConfig,
    train_cfg: &TrainConfig,
) -> Result<TrialOutput> {
    let mut seeds = Vec::new();
    let mut accs = Vec::new();
    let mut predictions = Vec::new();
    let mut checkpoint = None;
    for t in 0..trials {
        let seed = trial_seed(base_seed, t);
        let data = tasks::two_parts_subsplits(corpus, seed, pair_cfg)?;
        let guesses: Vec<bool> = match table {
            Some(table) => {
                let cfg = TrainConfig {
                    seed,
                    ..train_cfg.clone()
                };
                let fit = mlp_train(&data.train, &data.validation, table, &cfg)?;
                if t == 0 {
                    checkpoint = Some(fit.model.checkpoint());
                }
                let (x, _) = pair_data(&data.test, table)?;
                fit.model.predict_proba(x).into_iter().map(|p| p >= 0.5).collect()
            }
            None => {
                let mut r = rng::seeded(rng::derive(seed, "random-two-parts"));
                data.test.iter().map(|_| r.gen::<bool>()).collect()
            }
        };
        let preds = pair_predictions(&data.test, &guesses);
        let acc = preds.iter().filter(|p| p.correct).count() as f64 / preds.len().max(1) as f64;
        log::info!("two_parts {model_name} trial {t}: {:.2}%", 100.0 * acc);
        if t == 0 {
            predictions = preds;
        }
        seeds.push(seed);
        accs.push(acc);
    }
    Ok(TrialOutput {
        report: TrialReport::new("two_parts", model_name, seeds, accs),
        predictions,
        checkpoint,
    })
}

/// Missing Part or Document Name over `trials` seeds. Validation and test
/// batches are frozen per trial seed, so every table sees the same
/// candidates; `table`'s own vectors serve as candidates and targets.
/// `encoder = None` ranks random predictions (the Random model).
#[allow(clippy::too_many_arguments)]
pub fn run_ranking(
    task: RankingTask,
    corpus: &Corpus,
    table: &EmbeddingTable,
    encoder: Option<&SetEncoderConfig>,
    model_name: &str,
    trials: usize,
    base_seed: u64,
    batch_size: usize,
    patterns: &DefaultPatterns,
    exec: Exec,
) -> Result<TrialOutput> {
    let train_docs: Vec<&DocumentRecord> = corpus.docs_in(Split::Train).collect();
    let mut seeds = Vec::new();
    let mut accs = Vec::new();
    let mut predictions = Vec::new();
    let mut checkpoint = None;
    for t in 0..trials {
        let seed = trial_seed(base_seed, t);
        let test = tasks::build_batches(task, corpus, Split::Test, seed, batch_size, patterns)?;
        let result = match encoder {
            Some(cfg) => {
                let val = tasks::build_batches(task, corpus, Split::Validation, seed, batch_size, patterns)?;
                let val = tasks::batch_instances(&val);
                let cfg = SetEncoderConfig { seed, ..cfg.clone() };
                let train = |epoch: usize| {
                    tasks::set_instances(
                        task,
                        &train_docs,
                        rng::derive(seed, &format!("epoch/{epoch}")),
                        patterns,
                    )
                };
                let fit = set_encoder_train(&train, &val, table, &cfg, exec)?;
                log::info!(
                    "{} {model_name} trial {t}: best validation MSE {:.5} at epoch {}",
                    task.as_str(),
                    fit.best_validation_loss,
                    fit.best_epoch
                );
                if t == 0 {
                    checkpoint = Some(fit.model.checkpoint());
                }
                ranking_accuracy(&fit.model, &test, table, exec)?
            }
            None => random_ranking(&test, table, seed, exec)?,
        };
        log::info!(
            "{} {model_name} trial {t}: {:.2}% over {} instances",
            task.as_str(),
            100.0 * result.accuracy,
            result.instances
        );
        if t == 0 {
            predictions = result.predictions;
        }
        seeds.push(seed);
        accs.push(result.accuracy);
    }
    Ok(TrialOutput {
        report: TrialReport::new(task.as_str(), model_name, seeds, accs),
        predictions,
        checkpoint,
    })
}

/// Instances `a` got right and `b` got wrong, matched by position.
pub fn contrast<'a>(a: &'a [Prediction], b: &[Prediction]) -> Vec<(&'a Prediction, String)> {
    a.iter()
        .zip(b)
        .filter(|(x, y)| x.correct && !y.correct && x.target == y.target)
        .map(|(x, y)| (x, y.predicted.clone()))
        .collect()
}

/// Markdown table of `model × task` mean ± std, tasks as columns.
pub fn render_table(reports: &[TrialReport]) -> String {
    let mut tasks: Vec<&str> = Vec::new();
    let mut rows: BTreeMap<&str, BTreeMap<&str, &TrialReport>> = BTreeMap::new();
    let mut order: Vec<&str> = Vec::new();
    for r in reports {
        if !tasks.contains(&r.task.as_str()) {
            tasks.push(&r.task);
        }
        if !order.contains(&r.model.as_str()) {
            order.push(&r.model);
        }
        rows.entry(&r.model).or_default().insert(&r.task, r);
    }
    let mut out = String::from("| Model |");
    for t in &tasks {
        out.push_str(&format!(" {t} |"));
    }
    out.push_str("\n|---|");
    out.push_str(&"---|".repeat(tasks.len()));
    out.push('\n');
    for m in order {
        out.push_str(&format!("| {m} |"));
        for t in &tasks {
            match rows[m].get(t) {
                Some(r) => out.push_str(&format!(" {:.1} ± {:.1} |", 100.0 * r.mean, 100.0 * r.std)),
                None => out.push_str(" - |"),
            }
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::DocumentRecord;
    use proptest::prelude::*;

    #[test]
    fn rank_exact_match() {
        let vs: Vec<Vec<f32>> = (0..10).map(|i| vec![i as f32, 1.0, (i * i) as f32 * 0.1]).collect();
        let c: Vec<&[f32]> = vs.iter().map(Vec::as_slice).collect();
        assert_eq!(cosine_rank(&vs[7], &c).unwrap(), 7);
    }

    #[test]
    fn rank_orthogonal_and_zero() {
        let c: Vec<&[f32]> = vec![&[0.0, 0.0, 0.0], &[0.0, 1.0, 0.0], &[0.0, 0.0, 2.0], &[3.0, 0.0, 0.0]];
        assert_eq!(cosine_rank(&[1.0, 0.0, 0.0], &c).unwrap(), 3);
        // A zero candidate never wins, even against negative similarity.
        let c: Vec<&[f32]> = vec![&[0.0, 0.0], &[-1.0, 0.0]];
        assert_eq!(cosine_rank(&[1.0, 0.0], &c).unwrap(), 1);
    }

    #[test]
    fn rank_ties_and_errors() {
        let c: Vec<&[f32]> = vec![&[1.0, 0.0], &[2.0, 0.0], &[0.5, 0.0]];
        assert_eq!(cosine_rank(&[1.0, 0.0], &c).unwrap(), 0);
        assert!(matches!(cosine_rank(&[1.0], &[]), Err(Error::NoCandidates)));
        assert!(matches!(
            cosine_rank(&[1.0, 0.0], &[&[1.0, 0.0, 0.0]]),
            Err(Error::DimMismatch { .. })
        ));
    }

    proptest! {
        #[test]
        fn rank_ignores_scaling(
            p in prop::collection::vec(-1.0f32..1.0, 4),
            cands in prop::collection::vec(prop::collection::vec(-1.0f32..1.0, 4), 1..20),
            k in -8i32..8,
        ) {
            let c: Vec<&[f32]> = cands.iter().map(Vec::as_slice).collect();
            let s = 2f32.powi(k);
            let scaled: Vec<f32> = p.iter().map(|x| x * s).collect();
            prop_assert_eq!(cosine_rank(&p, &c).unwrap(), cosine_rank(&scaled, &c).unwrap());
        }

        #[test]
        fn rank_matches_cosine_oracle(
            p in prop::collection::vec(-1.0f32..1.0, 3),
            cands in prop::collection::vec(prop::collection::vec(-1.0f32..1.0, 3), 1..20),
        ) {
            let c: Vec<&[f32]> = cands.iter().map(Vec::as_slice).collect();
            let k = cosine_rank(&p, &c).unwrap();
            let best = c.iter().map(|x| cosine(&p, x)).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(cosine(&p, c[k]) >= best - 1e-12);
        }

        #[test]
        fn report_statistics_recompute(xs in prop::collection::vec(0.0f64..1.0, 1..12)) {
            let seeds = (0..xs.len() as u64).collect();
            let r = TrialReport::new("t", "m", seeds, xs.clone());
            prop_assert!(r.is_consistent());
            let json = serde_json::to_string(&r).unwrap();
            let back: TrialReport = serde_json::from_str(&json).unwrap();
            prop_assert!(back.is_consistent());
            prop_assert_eq!(back, r);
        }
    }

    #[test]
    fn sample_std() {
        let (m, s) = mean_std(&[0.6, 0.7, 0.8]);
        assert!((m - 0.7).abs() < 1e-12);
        assert!((s - 0.1).abs() < 1e-12);
        assert_eq!(mean_std(&[0.5]), (0.5, 0.0));
    }

    fn pair(a: &str, b: &str, positive: bool) -> PairSample {
        PairSample {
            part_a: a.into(),
            part_b: b.into(),
            positive,
            doc_id_a: "d".into(),
            doc_id_b: "e".into(),
        }
    }

    /// Positives live in one Gaussian cluster, negatives 4σ away.
    fn separable(n: usize, seed: u64, table: &mut EmbeddingTable) -> Vec<PairSample> {
        let mut r = rng::seeded(seed);
        (0..n)
            .map(|i| {
                let positive = i % 2 == 0;
                let centre = if positive { 2.0 } else { -2.0 };
                let (a, b) = (format!("a{seed}-{i}"), format!("b{seed}-{i}"));
                for k in [&a, &b] {
                    let v: Vec<f32> = (0..4)
                        .map(|_| centre + Distribution::<f32>::sample(&StandardNormal, &mut r) * 0.5)
                        .collect();
                    table.insert(k.clone(), &v).unwrap();
                }
                pair(&a, &b, positive)
            })
            .collect()
    }

    #[test]
    fn mlp_learns_separable_pairs() {
        let mut table = EmbeddingTable::new(4, crate::embedding::Provenance::External);
        let train = separable(400, 1, &mut table);
        let val = separable(100, 2, &mut table);
        let test = separable(200, 3, &mut table);
        // Oracle: threshold the mean component at zero.
        let oracle = test
            .iter()
            .filter(|p| (table.get(&p.part_a).unwrap().iter().sum::<f32>() > 0.0) == p.positive)
            .count();
        assert_eq!(oracle, test.len());
        let checksum = table.checksum();
        let fit = mlp_train(&train, &val, &table, &TrainConfig::default()).unwrap();
        assert!(mlp_accuracy(&fit.model, &test, &table).unwrap() > 0.95);
        assert_eq!(table.checksum(), checksum);
        assert!(fit.epochs_run() <= 100);
    }

    #[test]
    fn mlp_reports_missing_embeddings() {
        let table = EmbeddingTable::new(2, crate::embedding::Provenance::External);
        let err = mlp_train(
            &[pair("x", "y", true)],
            &[pair("x", "y", true)],
            &table,
            &TrainConfig::default(),
        );
        assert!(matches!(err, Err(Error::MissingEmbedding(_))));
    }

    fn tiny_cfg(max_epochs: usize) -> SetEncoderConfig {
        SetEncoderConfig {
            hidden: 16,
            inducing_points: 4,
            heads: 2,
            blocks: 1,
            max_epochs,
            patience: max_epochs,
            lr: 3e-3,
            batch_size: 4,
            ..SetEncoderConfig::default()
        }
    }

    #[test]
    fn set_encoder_memorizes_four_documents() {
        let table = EmbeddingTable::random((0..16).map(|i| format!("s{i}")), 4, 3);
        let instances: Vec<SetInstance> = (0..4)
            .map(|d| SetInstance {
                inputs: (0..3).map(|j| format!("s{}", 4 * d + j)).collect(),
                target: format!("s{}", 4 * d + 3),
            })
            .collect();
        let fit = set_encoder_train(
            &|_| instances.clone(),
            &instances,
            &table,
            &tiny_cfg(400),
            Exec::Sequential,
        )
        .unwrap();
        assert!(fit.best_validation_loss < 1e-3, "{}", fit.best_validation_loss);
    }

    #[test]
    fn training_respects_epoch_cap_and_is_thread_independent() {
        let table = EmbeddingTable::random((0..12).map(|i| format!("s{i}")), 4, 5);
        let instances: Vec<SetInstance> = (0..12)
            .map(|d| SetInstance {
                inputs: vec![format!("s{d}"), format!("s{}", (d + 1) % 12)],
                target: format!("s{}", (d + 2) % 12),
            })
            .collect();
        let cfg = SetEncoderConfig {
            batch_size: 12,
            ..tiny_cfg(3)
        };
        let a = set_encoder_train(&|_| instances.clone(), &instances, &table, &cfg, Exec::Sequential).unwrap();
        let b = set_encoder_train(&|_| instances.clone(), &instances, &table, &cfg, Exec::Parallel).unwrap();
        assert_eq!(a.epochs_run(), 3);
        assert_eq!(a.model, b.model);
    }

    fn doc(i: usize, parts: &[&str]) -> DocumentRecord {
        DocumentRecord {
            doc_id: format!("d{i:03}"),
            doc_name: format!("name{i}"),
            parts: parts.iter().map(|p| (p.to_string(), 1)).collect(),
            features: Default::default(),
        }
    }

    #[test]
    fn random_ranking_hits_about_one_in_candidates() {
        let docs: Vec<DocumentRecord> = (0..600)
            .map(|i| doc(i, &[&format!("a{i}"), &format!("b{i}")]))
            .collect();
        let refs: Vec<&DocumentRecord> = docs.iter().collect();
        let batches = tasks::build_missing_part_batches(&refs, 1, 8).unwrap();
        let strings = docs.iter().flat_map(|d| d.parts.keys().cloned());
        let table = EmbeddingTable::random(strings, 8, 2);
        let res = random_ranking(&batches, &table, 3, Exec::Parallel).unwrap();
        assert_eq!(res.instances, 600);
        // 600 draws of p = 1/8: mean 0.125, sd 0.0135.
        assert!((res.accuracy - 0.125).abs() < 0.06, "{}", res.accuracy);
        let again = random_ranking(&batches, &table, 3, Exec::Sequential).unwrap();
        assert_eq!(again, res);
    }

    #[test]
    fn table_renders_rows() {
        let reports = vec![
            TrialReport::new("two_parts", "Random", vec![1, 2], vec![0.5, 0.5]),
            TrialReport::new("two_parts", "fasttext", vec![1, 2], vec![0.6, 0.7]),
        ];
        let t = render_table(&reports);
        assert!(t.contains("| Random | 50.0 ± 0.0 |"), "{t}");
        assert!(t.contains("| fasttext | 65.0 ± 7.1 |"), "{t}");
    }
}
