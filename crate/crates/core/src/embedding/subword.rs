use std::collections::HashMap;
use std::sync::atomic::{AtomicU32, AtomicU64, Ordering};

use num_traits::Float;
use rand::distributions::{Distribution, Uniform, WeightedIndex};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{mean_pool, tokenize_wordpunct, Embedded, Embedder};
use crate::{rng, Error, Exec, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SkipGramMode {
    Skipgram,
    Cbow,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SkipGramConfig {
    pub dim: usize,
    pub window: usize,
    pub mode: SkipGramMode,
    pub negatives: usize,
    pub ngram_min: usize,
    pub ngram_max: usize,
    pub bucket_count: u32,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Tokens seen fewer times are dropped from the vocabulary.
    pub min_count: u32,
    /// Frequent-token subsampling threshold; 0 disables it.
    pub subsample: f64,
    pub seed: u64,
}

impl Default for SkipGramConfig {
    fn default() -> Self {
        Self {
            dim: 128,
            window: 6,
            mode: SkipGramMode::Skipgram,
            negatives: 5,
            ngram_min: 3,
            ngram_max: 6,
            bucket_count: 2_000_000,
            epochs: 5,
            learning_rate: 0.025,
            min_count: 5,
            subsample: 1e-3,
            seed: 0,
        }
    }
}

impl SkipGramConfig {
    pub const DIMS: [usize; 4] = [128, 256, 512, 768];
    pub const WINDOWS: [usize; 3] = [6, 8, 10];

    /// The dim × window × mode search grid around `self`.
    pub fn grid(&self) -> Vec<SkipGramConfig> {
        let mut out = Vec::new();
        for dim in Self::DIMS {
            for window in Self::WINDOWS {
                for mode in [SkipGramMode::Skipgram, SkipGramMode::Cbow] {
                    out.push(SkipGramConfig {
                        dim,
                        window,
                        mode,
                        ..self.clone()
                    });
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.dim == 0 || self.window == 0 || self.epochs == 0 || self.bucket_count == 0 {
            return bad("dim, window, epochs and bucket_count must be positive");
        }
        if self.ngram_min == 0 || self.ngram_min > self.ngram_max {
            return bad("need 0 < ngram_min <= ngram_max");
        }
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 || self.subsample < 0.0 {
            return bad("learning_rate must be positive and subsample non-negative");
        }
        Ok(())
    }
}

/// 32-bit FNV-1a over UTF-8 bytes.
pub fn fnv1a(s: &str) -> u32 {
    let mut h: u32 = 2_166_136_261;
    for b in s.bytes() {
        h ^= u32::from(b);
        h = h.wrapping_mul(16_777_619);
    }
    h
}

/// Character n-grams of `<word>` with lengths in `min..=max`.
pub fn subword_ngrams(word: &str, min: usize, max: usize) -> Vec<String> {
    let chars: Vec<char> = format!("<{word}>").chars().collect();
    let mut out = Vec::new();
    for i in 0..chars.len() {
        for n in min..=max {
            if i + n > chars.len() {
                break;
            }
            out.push(chars[i..i + n].iter().collect());
        }
    }
    out
}

/// Logistic loss of one positive and several negative output vectors
/// against `hidden`. Gradients of the loss are added to `grad_hidden` and
/// `grad_outputs`.
pub fn sgns_loss_grad<F: Float>(
    hidden: &[F],
    outputs: &[&[F]],
    labels: &[bool],
    grad_hidden: &mut [F],
    grad_outputs: &mut [Vec<F>],
) -> F {
    let mut loss = F::zero();
    for ((out, &label), g_out) in outputs.iter().zip(labels).zip(grad_outputs.iter_mut()) {
        let score = hidden
            .iter()
            .zip(out.iter())
            .fold(F::zero(), |acc, (&h, &o)| acc + h * o);
        let y = if label { F::one() } else { F::zero() };
        // loss = softplus(-score) for positives, softplus(score) for negatives
        let z = if label { -score } else { score };
        loss = loss + z.max(F::zero()) + (-z.abs()).exp().ln_1p();
        let sig = F::one() / (F::one() + (-score).exp());
        let d = sig - y;
        for ((gh, go), (&h, &o)) in grad_hidden
            .iter_mut()
            .zip(g_out.iter_mut())
            .zip(hidden.iter().zip(out.iter()))
        {
            *gh = *gh + d * o;
            *go = *go + d * h;
        }
    }
    loss
}

/// Per-epoch mean training loss.
#[derive(Clone, Debug, Default, Serialize)]
pub struct TrainStats {
    pub epoch_losses: Vec<f64>,
    pub vocab_size: usize,
    pub tokens: usize,
}

/// Trained subword skip-gram (or CBOW) model.
///
/// A token's vector is the average of its word vector (when in the
/// vocabulary) and the vectors of its hashed character n-grams, so unseen
/// tokens are composed from their n-grams.
#[derive(Clone, Debug)]
pub struct SubwordModel {
    cfg: SkipGramConfig,
    words: Vec<String>,
    word_index: HashMap<String, u32>,
    bucket_rows: HashMap<u32, u32>,
    input: Vec<f32>,
    output: Vec<f32>,
}

fn init_row(seed: u64, label: &str, key: u64, dim: usize) -> Vec<f32> {
    let mut r = rng::seeded(rng::derive(seed, label) ^ key);
    let bound = 1.0 / dim as f32;
    let u = Uniform::new_inclusive(-bound, bound);
    (0..dim).map(|_| u.sample(&mut r)).collect()
}

struct Rows {
    data: Vec<AtomicU32>,
    dim: usize,
}

impl Rows {
    fn new(data: Vec<f32>, dim: usize) -> Self {
        Self {
            data: data.into_iter().map(|x| AtomicU32::new(x.to_bits())).collect(),
            dim,
        }
    }

    fn read(&self, row: usize, buf: &mut [f32]) {
        let src = &self.data[row * self.dim..(row + 1) * self.dim];
        for (b, a) in buf.iter_mut().zip(src) {
            *b = f32::from_bits(a.load(Ordering::Relaxed));
        }
    }

    // Racy read-modify-write: concurrent workers may lose updates (hogwild).
    fn add_scaled(&self, row: usize, delta: &[f32], scale: f32) {
        let dst = &self.data[row * self.dim..(row + 1) * self.dim];
        for (a, &d) in dst.iter().zip(delta) {
            let v = f32::from_bits(a.load(Ordering::Relaxed)) + scale * d;
            a.store(v.to_bits(), Ordering::Relaxed);
        }
    }

    fn into_vec(self) -> Vec<f32> {
        self.data.into_iter().map(|a| f32::from_bits(a.into_inner())).collect()
    }
}

struct Trainer<'a> {
    cfg: &'a SkipGramConfig,
    subwords: &'a [Vec<u32>],
    lines: &'a [Vec<u32>],
    keep_prob: &'a [f64],
    negatives: &'a WeightedIndex<f64>,
    input: &'a Rows,
    output: &'a Rows,
    processed: &'a AtomicU64,
    total: u64,
}

impl Trainer<'_> {
    fn lr(&self) -> f32 {
        let p = self.processed.load(Ordering::Relaxed) as f64 / self.total as f64;
        (self.cfg.learning_rate * (1.0 - p).max(1e-4)) as f32
    }

    /// One negative-sampling update; returns the loss.
    fn update(&self, rows: &[u32], target: u32, lr: f32, r: &mut rng::Rng, scratch: &mut Scratch) -> f64 {
        let dim = self.cfg.dim;
        scratch.hidden.iter_mut().for_each(|x| *x = 0.0);
        for &row in rows {
            self.input.read(row as usize, &mut scratch.row);
            for (h, x) in scratch.hidden.iter_mut().zip(&scratch.row) {
                *h += x;
            }
        }
        let inv = 1.0 / rows.len() as f32;
        scratch.hidden.iter_mut().for_each(|h| *h *= inv);

        scratch.targets.clear();
        scratch.targets.push(target);
        if self.subwords.len() > 1 {
            while scratch.targets.len() <= self.cfg.negatives {
                let n = self.negatives.sample(r) as u32;
                if n != target {
                    scratch.targets.push(n);
                }
            }
        }
        let k = scratch.targets.len();
        scratch.outputs.resize(k, vec![0.0; dim]);
        scratch.grad_out.resize(k, vec![0.0; dim]);
        for (j, &t) in scratch.targets.iter().enumerate() {
            self.output.read(t as usize, &mut scratch.outputs[j]);
            scratch.grad_out[j].iter_mut().for_each(|g| *g = 0.0);
        }
        scratch.grad_hidden.iter_mut().for_each(|g| *g = 0.0);
        scratch.labels.clear();
        scratch.labels.extend((0..k).map(|j| j == 0));
        let outs: Vec<&[f32]> = scratch.outputs[..k].iter().map(Vec::as_slice).collect();
        let loss = sgns_loss_grad(
            &scratch.hidden,
            &outs,
            &scratch.labels,
            &mut scratch.grad_hidden,
            &mut scratch.grad_out[..k],
        );
        for (j, &t) in scratch.targets.iter().enumerate() {
            self.output.add_scaled(t as usize, &scratch.grad_out[j], -lr);
        }
        // As in the reference subword trainer, every input row receives the
        // full hidden-layer gradient rather than a 1/n share.
        for &row in rows {
            self.input.add_scaled(row as usize, &scratch.grad_hidden, -lr);
        }
        f64::from(loss)
    }

    fn run(&self, line_range: std::ops::Range<usize>, seed: u64) -> (f64, u64) {
        let mut r = rng::seeded(seed);
        let mut scratch = Scratch::new(self.cfg.dim);
        let (mut loss, mut n) = (0.0, 0u64);
        let mut kept = Vec::new();
        let mut bag = Vec::new();
        for line in &self.lines[line_range] {
            kept.clear();
            kept.extend(
                line.iter()
                    .copied()
                    .filter(|&w| r.gen::<f64>() < self.keep_prob[w as usize]),
            );
            let lr = self.lr();
            for i in 0..kept.len() {
                let b = r.gen_range(1..=self.cfg.window);
                let lo = i.saturating_sub(b);
                let hi = (i + b).min(kept.len() - 1);
                match self.cfg.mode {
                    SkipGramMode::Skipgram => {
                        let rows = &self.subwords[kept[i] as usize];
                        for c in lo..=hi {
                            if c != i {
                                loss += self.update(rows, kept[c], lr, &mut r, &mut scratch);
                                n += 1;
                            }
                        }
                    }
                    SkipGramMode::Cbow => {
                        bag.clear();
                        for c in lo..=hi {
                            if c != i {
                                bag.extend_from_slice(&self.subwords[kept[c] as usize]);
                            }
                        }
                        if !bag.is_empty() {
                            loss += self.update(&bag, kept[i], lr, &mut r, &mut scratch);
                            n += 1;
                        }
                    }
                }
            }
            self.processed.fetch_add(line.len() as u64, Ordering::Relaxed);
        }
        (loss, n)
    }
}

struct Scratch {
    hidden: Vec<f32>,
    row: Vec<f32>,
    grad_hidden: Vec<f32>,
    targets: Vec<u32>,
    labels: Vec<bool>,
    outputs: Vec<Vec<f32>>,
    grad_out: Vec<Vec<f32>>,
}

impl Scratch {
    fn new(dim: usize) -> Self {
        Self {
            hidden: vec![0.0; dim],
            row: vec![0.0; dim],
            grad_hidden: vec![0.0; dim],
            targets: Vec::new(),
            labels: Vec::new(),
            outputs: Vec::new(),
            grad_out: Vec::new(),
        }
    }
}

/// Train on word-punct tokenized lines (each line is its own context).
///
/// With `Exec::Sequential` training is single-threaded and reproducible
/// for a given seed. `Exec::Parallel` splits the lines across the rayon
/// pool and updates shared rows without locks, trading bitwise
/// reproducibility for throughput.
pub fn train_subword_skipgram<S: AsRef<str>>(
    lines: &[S],
    cfg: &SkipGramConfig,
    exec: Exec,
) -> Result<(SubwordModel, TrainStats)> {
    cfg.validate()?;
    let mut counts: HashMap<&str, u64> = HashMap::new();
    for line in lines {
        for t in tokenize_wordpunct(line.as_ref()) {
            *counts.entry(t).or_insert(0) += 1;
        }
    }
    let mut words: Vec<(&str, u64)> = counts
        .into_iter()
        .filter(|&(_, c)| c >= u64::from(cfg.min_count))
        .collect();
    words.sort_unstable_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    if words.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let word_index: HashMap<String, u32> = words
        .iter()
        .enumerate()
        .map(|(i, (w, _))| (w.to_string(), i as u32))
        .collect();
    let encoded: Vec<Vec<u32>> = lines
        .iter()
        .map(|l| {
            tokenize_wordpunct(l.as_ref())
                .into_iter()
                .filter_map(|t| word_index.get(t).copied())
                .collect()
        })
        .collect();
    let total: u64 = encoded.iter().map(|l| l.len() as u64).sum();
    if total < cfg.window as u64 {
        return Err(Error::CorpusTooSmall {
            tokens: total as usize,
            window: cfg.window,
        });
    }

    let nwords = words.len();
    let mut bucket_rows: HashMap<u32, u32> = HashMap::new();
    let mut bucket_order: Vec<u32> = Vec::new();
    let subwords: Vec<Vec<u32>> = words
        .iter()
        .enumerate()
        .map(|(i, (w, _))| {
            let mut rows = vec![i as u32];
            for g in subword_ngrams(w, cfg.ngram_min, cfg.ngram_max) {
                let b = fnv1a(&g) % cfg.bucket_count;
                let row = *bucket_rows.entry(b).or_insert_with(|| {
                    bucket_order.push(b);
                    (nwords + bucket_order.len() - 1) as u32
                });
                rows.push(row);
            }
            rows
        })
        .collect();

    let mut input = Vec::with_capacity((nwords + bucket_order.len()) * cfg.dim);
    for i in 0..nwords {
        input.extend(init_row(cfg.seed, "word", i as u64, cfg.dim));
    }
    for &b in &bucket_order {
        input.extend(init_row(cfg.seed, "bucket", u64::from(b), cfg.dim));
    }
    let input = Rows::new(input, cfg.dim);
    let output = Rows::new(vec![0.0; nwords * cfg.dim], cfg.dim);

    let freq_total = total as f64;
    let keep_prob: Vec<f64> = words
        .iter()
        .map(|&(_, c)| {
            if cfg.subsample <= 0.0 {
                return 1.0;
            }
            let f = c as f64 / freq_total;
            (cfg.subsample / f).sqrt() + cfg.subsample / f
        })
        .collect();
    let negatives = WeightedIndex::new(words.iter().map(|&(_, c)| (c as f64).powf(0.75))).expect("positive counts");
    let processed = AtomicU64::new(0);
    let trainer = Trainer {
        cfg,
        subwords: &subwords,
        lines: &encoded,
        keep_prob: &keep_prob,
        negatives: &negatives,
        input: &input,
        output: &output,
        processed: &processed,
        total: total * cfg.epochs as u64,
    };

    let workers = if exec.is_parallel() {
        worker_count().min(encoded.len()).max(1)
    } else {
        1
    };
    let chunk = encoded.len().div_ceil(workers);
    let mut stats = TrainStats {
        vocab_size: nwords,
        tokens: total as usize,
        ..Default::default()
    };
    for epoch in 0..cfg.epochs {
        let parts = exec.map_range(workers, |w| {
            let range = (w * chunk).min(encoded.len())..((w + 1) * chunk).min(encoded.len());
            let seed = rng::derive(cfg.seed, &format!("skipgram/{epoch}/{w}"));
            trainer.run(range, seed)
        });
        let (loss, n) = parts.into_iter().fold((0.0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
        let mean = if n > 0 { loss / n as f64 } else { 0.0 };
        if !mean.is_finite() {
            return Err(Error::NonFinite {
                what: "skip-gram loss",
                epoch,
            });
        }
        log::debug!("skip-gram epoch {epoch}: loss {mean:.5}");
        stats.epoch_losses.push(mean);
    }

    let model = SubwordModel {
        cfg: cfg.clone(),
        words: words.iter().map(|(w, _)| w.to_string()).collect(),
        word_index,
        bucket_rows,
        input: input.into_vec(),
        output: output.into_vec(),
    };
    Ok((model, stats))
}

fn worker_count() -> usize {
    #[cfg(feature = "parallel")]
    {
        rayon::current_num_threads()
    }
    #[cfg(not(feature = "parallel"))]
    {
        1
    }
}

impl SubwordModel {
    pub fn config(&self) -> &SkipGramConfig {
        &self.cfg
    }

    pub fn vocab(&self) -> &[String] {
        &self.words
    }

    fn input_row(&self, row: u32) -> &[f32] {
        let d = self.cfg.dim;
        &self.input[row as usize * d..(row as usize + 1) * d]
    }

    /// Output (context) vector of an in-vocabulary token.
    pub fn output_vector(&self, token: &str) -> Option<&[f32]> {
        let d = self.cfg.dim;
        self.word_index
            .get(token)
            .map(|&i| &self.output[i as usize * d..(i as usize + 1) * d])
    }

    /// Average of the word vector (if known) and all n-gram vectors.
    /// Buckets never touched in training keep their deterministic initial value.
    pub fn token_vector(&self, token: &str) -> Vec<f32> {
        let d = self.cfg.dim;
        let mut sum = vec![0f32; d];
        let mut n = 0usize;
        let mut add = |v: &[f32]| {
            for (s, x) in sum.iter_mut().zip(v) {
                *s += x;
            }
            n += 1;
        };
        if let Some(&i) = self.word_index.get(token) {
            add(self.input_row(i));
        }
        for g in subword_ngrams(token, self.cfg.ngram_min, self.cfg.ngram_max) {
            let b = fnv1a(&g) % self.cfg.bucket_count;
            match self.bucket_rows.get(&b) {
                Some(&row) => add(self.input_row(row)),
                None => add(&init_row(self.cfg.seed, "bucket", u64::from(b), d)),
            }
        }
        if n > 0 {
            sum.iter_mut().for_each(|s| *s /= n as f32);
        }
        sum
    }

    pub fn is_known(&self, token: &str) -> bool {
        self.word_index.contains_key(token)
    }
}

impl Embedder for SubwordModel {
    fn dim(&self) -> usize {
        self.cfg.dim
    }

    fn embed(&self, s: &str) -> Embedded {
        let mut toks = tokenize_wordpunct(s);
        let has_ngrams = |t: &str| t.chars().count() + 2 >= self.cfg.ngram_min || self.is_known(t);
        mean_pool(self.cfg.dim, &mut toks, |t| has_ngrams(t).then(|| self.token_vector(t)))
    }
}
