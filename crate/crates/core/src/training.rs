//! Signature model training.
//!
//! Each positive pair competes against pairs formed with sampled negative
//! tuples under a softmax over cosine scores. Signatures are learned one
//! at a time; attributes a finished signature uses are removed from the
//! usable set, so the learned supports are disjoint.

use std::collections::{BTreeMap, HashMap};

use log::{info, warn};
use ndarray::{Array1, Array2, ArrayView1};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, LabelSet, Tuple};
use crate::embedding::{EmbeddingTable, TokenKey};
use crate::encoder::{AttentionalEncoder, EncoderConfig, EncoderForward, EncoderParams};
use crate::error::{Error, Result};
use crate::hashing::derive_seed;
use crate::model::{ModelMeta, SignatureModel};
use crate::signatures::{prune_row, SignatureWeights, DEFAULT_SUPPORT_THRESHOLD};

/// Tuples per work unit in the backward pass. Fixed so the gradient
/// summation order does not depend on the worker count.
const CHUNK: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    /// Optimizer steps per signature.
    pub max_iterations: usize,
    /// Upper bound on learned signatures; `None` means one per attribute.
    pub max_signatures: Option<usize>,
    pub negatives_per_pair: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_betas: [f64; 2],
    pub adam_epsilon: f64,
    pub seed: u64,
    pub temperature: f64,
    pub support_threshold: f64,
    /// Emit a progress line every this many steps (0 disables).
    pub log_every: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            max_iterations: 2000,
            max_signatures: None,
            negatives_per_pair: 10,
            batch_size: 64,
            learning_rate: 1e-3,
            adam_betas: [0.9, 0.999],
            adam_epsilon: 1e-8,
            seed: 42,
            temperature: 1.0,
            support_threshold: DEFAULT_SUPPORT_THRESHOLD,
            log_every: 100,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("max_iterations", self.max_iterations),
            ("negatives_per_pair", self.negatives_per_pair),
            ("batch_size", self.batch_size),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("training.{name} must be positive")));
            }
        }
        if self.max_signatures == Some(0) {
            return Err(Error::Config("training.max_signatures must be positive".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("training.learning_rate must be positive".into()));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::Config("training.temperature must be positive".into()));
        }
        if self.adam_betas.iter().any(|b| !(0.0..1.0).contains(b)) {
            return Err(Error::Config("training.adam_betas must lie in [0, 1)".into()));
        }
        if !(self.adam_epsilon > 0.0) {
            return Err(Error::Config("training.adam_epsilon must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.support_threshold) {
            return Err(Error::Config("training.support_threshold must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

fn log_sum_exp(x: &[f64]) -> f64 {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + x.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Softmax of `scores / tau`: the probability that each scored pair is the
/// single positive one.
pub fn assignment_probabilities(scores: &[f64], tau: f64) -> Vec<f64> {
    let scaled: Vec<f64> = scores.iter().map(|s| s / tau).collect();
    let lse = log_sum_exp(&scaled);
    scaled.iter().map(|s| (s - lse).exp()).collect()
}

/// Probability that the positive pair (cosine `positive`) is picked over
/// the pairs formed with the negatives. `negatives` holds both cosines per
/// negative tuple, i.e. `2|U|` values.
pub fn selection_probability(positive: f64, negatives: &[f64], tau: f64) -> f64 {
    log_selection_probability(positive, negatives, tau).exp()
}

pub fn log_selection_probability(positive: f64, negatives: &[f64], tau: f64) -> f64 {
    let mut scaled = Vec::with_capacity(negatives.len() + 1);
    scaled.push(positive / tau);
    scaled.extend(negatives.iter().map(|s| s / tau));
    scaled[0] - log_sum_exp(&scaled)
}

/// Negative mean log-probability.
pub fn minibatch_loss(probabilities: &[f64]) -> Result<f64> {
    if probabilities.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    Ok(-probabilities.iter().map(|p| p.ln()).sum::<f64>() / probabilities.len() as f64)
}

/// Zeroes weights outside `usable`, clamps negatives, and normalizes to
/// unit length. Falls back to uniform weights over `usable` when nothing
/// positive remains.
pub fn project_weights(w: ArrayView1<'_, f64>, usable: &[bool]) -> Result<Array1<f64>> {
    if w.len() != usable.len() {
        return Err(Error::InvalidArgument(format!(
            "{} weights but {} usable flags",
            w.len(),
            usable.len()
        )));
    }
    if !usable.contains(&true) {
        return Err(Error::InvalidArgument("no usable attributes left".into()));
    }
    let mut out: Array1<f64> = w
        .iter()
        .zip(usable)
        .map(|(&x, &u)| if u && x > 0.0 { x } else { 0.0 })
        .collect();
    let mut norm = out.dot(&out).sqrt();
    if !(norm > 0.0) || !norm.is_finite() {
        out = usable.iter().map(|&u| if u { 1.0 } else { 0.0 }).collect();
        norm = out.dot(&out).sqrt();
    }
    Ok(out / norm)
}

/// `k` distinct indices from `0..n`, uniformly without replacement,
/// excluding `i` and `j`.
pub fn sample_negatives<R: Rng + ?Sized>(n: usize, i: usize, j: usize, k: usize, rng: &mut R) -> Result<Vec<usize>> {
    if i == j || i >= n || j >= n {
        return Err(Error::InvalidArgument(format!("bad pair ({i}, {j}) for {n} tuples")));
    }
    if n < k + 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least {} tuples to draw {k} negatives, have {n}",
            k + 2
        )));
    }
    let (lo, hi) = (i.min(j), i.max(j));
    Ok(rand::seq::index::sample(rng, n - 2, k)
        .into_iter()
        .map(|mut x| {
            if x >= lo {
                x += 1;
            }
            if x >= hi {
                x += 1;
            }
            x
        })
        .collect())
}

/// Token keys for every tuple and attribute, truncated to each encoder's
/// length cap. `None` marks a missing value.
#[derive(Debug, Clone)]
pub struct EncodedCorpus {
    keys: Vec<Vec<Option<Vec<TokenKey>>>>,
}

impl EncodedCorpus {
    pub fn new(tuples: &[Tuple], table: &EmbeddingTable, encoders: &[AttentionalEncoder]) -> Self {
        let keys = tuples
            .par_iter()
            .map(|t| {
                t.attributes
                    .iter()
                    .zip(encoders)
                    .map(|(value, enc)| {
                        (!value.is_missing()).then(|| {
                            value.tokens()[..value.len().min(enc.max_len)]
                                .iter()
                                .map(|tok| table.token_key(tok))
                                .collect()
                        })
                    })
                    .collect()
            })
            .collect();
        Self { keys }
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn keys(&self, tuple: usize, attribute: usize) -> Option<&[TokenKey]> {
        self.keys[tuple][attribute].as_deref()
    }

    fn token_matrix(&self, table: &EmbeddingTable, tuple: usize, attribute: usize) -> Option<Array2<f64>> {
        let keys = self.keys(tuple, attribute)?;
        let mut m = Array2::zeros((keys.len(), table.dim()));
        for (mut row, key) in m.rows_mut().into_iter().zip(keys) {
            row.assign(&table.vector_for_key(key));
        }
        Some(m)
    }
}

/// One positive pair with its sampled negatives (tuple indices).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchItem {
    pub anchor: usize,
    pub partner: usize,
    pub negatives: Vec<usize>,
}

/// Gradients of the batch loss. Encoder entries are `None` when the
/// attribute received no gradient; embedding rows are sparse.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub weights: Array1<f64>,
    pub encoders: Vec<Option<EncoderParams>>,
    pub embedding: BTreeMap<u32, Array1<f64>>,
}

#[derive(Debug, Clone)]
pub struct BatchOutcome {
    pub loss: f64,
    /// Positive pairs left after dropping those with a missing signature.
    pub pairs_used: usize,
    pub gradients: Gradients,
}

/// Forward record for one tuple: token matrix and encoder pass per usable
/// present attribute, plus the resulting signature vector.
struct TupleTape {
    attributes: Vec<Option<(Array2<f64>, EncoderForward)>>,
    signature: Option<Array1<f64>>,
}

fn forward_tuple(
    table: &EmbeddingTable,
    encoders: &[AttentionalEncoder],
    corpus: &EncodedCorpus,
    tuple: usize,
    w: ArrayView1<'_, f64>,
    usable: &[bool],
) -> TupleTape {
    let mut attributes = Vec::with_capacity(encoders.len());
    let mut signature: Option<Array1<f64>> = None;
    for (j, enc) in encoders.iter().enumerate() {
        let v = if usable[j] {
            corpus.token_matrix(table, tuple, j)
        } else {
            None
        };
        let Some(v) = v else {
            attributes.push(None);
            continue;
        };
        let fw = enc.forward(v.view());
        if w[j] != 0.0 {
            match &mut signature {
                Some(f) => f.scaled_add(w[j], &fw.output),
                None => signature = Some(&fw.output * w[j]),
            }
        }
        attributes.push(Some((v, fw)));
    }
    TupleTape { attributes, signature }
}

/// Adds the gradient of `cos(a, b)` scaled by `dc` into `da` and `db`.
fn cosine_backward(a: &Array1<f64>, b: &Array1<f64>, dc: f64, da: &mut Array1<f64>, db: &mut Array1<f64>) {
    let (na, nb) = (a.dot(a).sqrt(), b.dot(b).sqrt());
    if na == 0.0 || nb == 0.0 {
        return;
    }
    let c = a.dot(b) / (na * nb);
    let inv = dc / (na * nb);
    da.scaled_add(inv, b);
    da.scaled_add(-dc * c / (na * na), a);
    db.scaled_add(inv, a);
    db.scaled_add(-dc * c / (nb * nb), b);
}

fn raw_cosine(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
    let (na, nb) = (a.dot(a).sqrt(), b.dot(b).sqrt());
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        a.dot(b) / (na * nb)
    }
}

/// Loss and full gradients for one minibatch under signature weights `w`
/// restricted to `usable` attributes. Returns `None` when every positive
/// pair is dropped for a missing signature.
pub fn batch_objective(
    table: &EmbeddingTable,
    encoders: &[AttentionalEncoder],
    corpus: &EncodedCorpus,
    batch: &[BatchItem],
    w: ArrayView1<'_, f64>,
    usable: &[bool],
    tau: f64,
) -> Option<BatchOutcome> {
    let m = encoders.len();
    let mut slot_of: BTreeMap<usize, usize> = BTreeMap::new();
    for item in batch {
        for &t in [item.anchor, item.partner].iter().chain(&item.negatives) {
            slot_of.insert(t, 0);
        }
    }
    let ids: Vec<usize> = slot_of.keys().copied().collect();
    for (slot, id) in ids.iter().enumerate() {
        slot_of.insert(*id, slot);
    }
    let tapes: Vec<TupleTape> = ids
        .par_iter()
        .map(|&t| forward_tuple(table, encoders, corpus, t, w, usable))
        .collect();

    // Scores per usable item: (slot pairs, probabilities).
    let mut scored: Vec<(Vec<(usize, usize)>, Vec<f64>)> = Vec::new();
    let mut loss = 0.0;
    for item in batch {
        let (a, b) = (slot_of[&item.anchor], slot_of[&item.partner]);
        let (Some(fa), Some(fb)) = (&tapes[a].signature, &tapes[b].signature) else {
            continue;
        };
        let mut pairs = vec![(a, b)];
        let mut scores = vec![raw_cosine(fa, fb)];
        for n in &item.negatives {
            let k = slot_of[n];
            let Some(fk) = &tapes[k].signature else { continue };
            pairs.push((a, k));
            scores.push(raw_cosine(fa, fk));
            pairs.push((b, k));
            scores.push(raw_cosine(fb, fk));
        }
        let probs = assignment_probabilities(&scores, tau);
        loss -= log_selection_probability(scores[0], &scores[1..], tau);
        scored.push((pairs, probs));
    }
    if scored.is_empty() {
        return None;
    }
    let used = scored.len() as f64;
    loss /= used;

    let dim = table.dim();
    let mut d_sig: Vec<Option<Array1<f64>>> = tapes
        .iter()
        .map(|t| t.signature.as_ref().map(|_| Array1::zeros(dim)))
        .collect();
    for (pairs, probs) in &scored {
        for (k, (&(x, y), &p)) in pairs.iter().zip(probs).enumerate() {
            let target = if k == 0 { 1.0 } else { 0.0 };
            let dc = (p - target) / tau / used;
            let (fx, fy) = (
                tapes[x].signature.as_ref().expect("scored"),
                tapes[y].signature.as_ref().expect("scored"),
            );
            let mut dx = d_sig[x].take().expect("scored");
            let mut dy = d_sig[y].take().expect("scored");
            cosine_backward(fx, fy, dc, &mut dx, &mut dy);
            d_sig[x] = Some(dx);
            d_sig[y] = Some(dy);
        }
    }

    let slots: Vec<usize> = (0..ids.len()).collect();
    let partials: Vec<Gradients> = slots
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut g = Gradients {
                weights: Array1::zeros(m),
                encoders: vec![None; m],
                embedding: BTreeMap::new(),
            };
            let mut rows: HashMap<u32, Array1<f64>> = HashMap::new();
            for &slot in chunk {
                let Some(df) = &d_sig[slot] else { continue };
                for (j, entry) in tapes[slot].attributes.iter().enumerate() {
                    let Some((v, fw)) = entry else { continue };
                    g.weights[j] += fw.output.dot(df);
                    if w[j] == 0.0 {
                        continue;
                    }
                    let dg = df * w[j];
                    let enc = &encoders[j];
                    let dv = if enc.uses_sequence_encoder() {
                        let acc = g.encoders[j].get_or_insert_with(|| EncoderParams::zeros(dim, enc.hidden()));
                        enc.backward(v.view(), fw, dg.view(), acc)
                    } else {
                        let mut dv = Array2::zeros(v.raw_dim());
                        for (mut row, &b) in dv.rows_mut().into_iter().zip(&fw.beta) {
                            row.scaled_add(b, &dg);
                        }
                        dv
                    };
                    if !table.trainable() {
                        continue;
                    }
                    let keys = corpus.keys(ids[slot], j).expect("present attribute");
                    for (key, d) in keys.iter().zip(dv.rows()) {
                        if let TokenKey::Buckets(buckets) = key {
                            for &bucket in buckets {
                                rows.entry(bucket)
                                    .or_insert_with(|| Array1::zeros(dim))
                                    .scaled_add(1.0, &d);
                            }
                        }
                    }
                }
            }
            g.embedding = rows.into_iter().collect();
            g
        })
        .collect();

    let mut total = Gradients {
        weights: Array1::zeros(m),
        encoders: vec![None; m],
        embedding: BTreeMap::new(),
    };
    for part in partials {
        total.weights += &part.weights;
        for (acc, p) in total.encoders.iter_mut().zip(part.encoders) {
            match (acc.as_mut(), p) {
                (Some(a), Some(p)) => a.add_assign(&p),
                (None, Some(p)) => *acc = Some(p),
                _ => {}
            }
        }
        for (bucket, d) in part.embedding {
            match total.embedding.get_mut(&bucket) {
                Some(acc) => *acc += &d,
                None => {
                    total.embedding.insert(bucket, d);
                }
            }
        }
    }
    Some(BatchOutcome {
        loss,
        pairs_used: scored.len(),
        gradients: total,
    })
}

struct AdamSlot {
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamSlot {
    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }
}

/// Adam with lazily allocated state. Embedding rows only update their
/// moments on steps where they receive a gradient.
struct Adam {
    lr: f64,
    b1: f64,
    b2: f64,
    eps: f64,
    t: i32,
    weights: AdamSlot,
    encoders: Vec<Option<Vec<AdamSlot>>>,
    rows: HashMap<u32, AdamSlot>,
}

impl Adam {
    fn new(config: &TrainingConfig, m: usize) -> Self {
        Self {
            lr: config.learning_rate,
            b1: config.adam_betas[0],
            b2: config.adam_betas[1],
            eps: config.adam_epsilon,
            t: 0,
            weights: AdamSlot::new(m),
            encoders: (0..m).map(|_| None).collect(),
            rows: HashMap::new(),
        }
    }

    fn update(&self, p: &mut [f64], g: &[f64], state: &mut AdamSlot) {
        let c1 = 1.0 - self.b1.powi(self.t);
        let c2 = 1.0 - self.b2.powi(self.t);
        for (((x, &gi), m), v) in p.iter_mut().zip(g).zip(&mut state.m).zip(&mut state.v) {
            *m = self.b1 * *m + (1.0 - self.b1) * gi;
            *v = self.b2 * *v + (1.0 - self.b2) * gi * gi;
            *x -= self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
        }
    }

    fn step(
        &mut self,
        grads: &Gradients,
        usable: &[bool],
        w: &mut Array1<f64>,
        encoders: &mut [AttentionalEncoder],
        table: &mut EmbeddingTable,
    ) {
        self.t += 1;
        let mut weights = std::mem::replace(&mut self.weights, AdamSlot::new(0));
        let g: Vec<f64> = grads
            .weights
            .iter()
            .zip(usable)
            .map(|(&g, &u)| if u { g } else { 0.0 })
            .collect();
        self.update(w.as_slice_mut().expect("standard layout"), &g, &mut weights);
        self.weights = weights;

        for (j, grad) in grads.encoders.iter().enumerate() {
            let Some(grad) = grad else { continue };
            if !usable[j] {
                continue;
            }
            let mut states = self.encoders[j]
                .take()
                .unwrap_or_else(|| grad.slices().iter().map(|s| AdamSlot::new(s.len())).collect());
            for ((p, g), st) in encoders[j]
                .params
                .slices_mut()
                .into_iter()
                .zip(grad.slices())
                .zip(&mut states)
            {
                self.update(p, g, st);
            }
            self.encoders[j] = Some(states);
        }

        if table.trainable() {
            let dim = table.dim();
            for (&bucket, g) in &grads.embedding {
                let mut st = self.rows.remove(&bucket).unwrap_or_else(|| AdamSlot::new(dim));
                let mut row = table.row_mut(bucket);
                self.update(
                    row.as_slice_mut().expect("row-major table"),
                    g.as_slice().expect("contiguous"),
                    &mut st,
                );
                self.rows.insert(bucket, st);
            }
        }
    }
}

/// Fresh encoders for `schema`, one per attribute, seeded from `seed`.
pub fn initial_encoders(
    schema: &[String],
    input_dim: usize,
    config: &EncoderConfig,
    seed: u64,
) -> Result<Vec<AttentionalEncoder>> {
    config.validate()?;
    let rho = config.rho_for(schema)?;
    Ok(rho
        .into_iter()
        .enumerate()
        .map(|(j, r)| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x100 + j as u64));
            AttentionalEncoder::new(
                EncoderParams::random(input_dim, config.hidden_size, &mut rng),
                r,
                config.max_len,
            )
        })
        .collect())
}

/// One progress record.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub signature: usize,
    pub step: usize,
    pub loss: f64,
    pub pairs_used: usize,
    /// Attributes still usable while training this signature.
    pub usable: usize,
}

/// Epoch-wise shuffled pass over the label pairs.
struct PairSampler {
    pairs: Vec<(usize, usize)>,
    order: Vec<usize>,
    cursor: usize,
}

impl PairSampler {
    fn next<R: Rng>(&mut self, rng: &mut R) -> (usize, usize) {
        if self.cursor == self.order.len() {
            self.order.shuffle(rng);
            self.cursor = 0;
        }
        self.cursor += 1;
        self.pairs[self.order[self.cursor - 1]]
    }
}

/// Trains a signature model. `embedding` supplies the initial token table
/// (random or pretrained).
pub fn train(
    dataset: &Dataset,
    labels: &LabelSet,
    embedding: EmbeddingTable,
    encoder_config: &EncoderConfig,
    config: &TrainingConfig,
) -> Result<SignatureModel> {
    let every = config.log_every;
    train_with_observer(dataset, labels, embedding, encoder_config, config, |r| {
        if every > 0 && (r.step == 1 || r.step % every == 0) {
            info!(
                "step {} signature {} loss {:.6} pairs {} usable {}",
                r.step, r.signature, r.loss, r.pairs_used, r.usable
            )
        }
    })
}

/// Like [`train`], calling `observe` with every step's record. The log
/// interval in `config` applies only to [`train`]'s own logging.
pub fn train_with_observer(
    dataset: &Dataset,
    labels: &LabelSet,
    mut embedding: EmbeddingTable,
    encoder_config: &EncoderConfig,
    config: &TrainingConfig,
    mut observe: impl FnMut(&StepRecord),
) -> Result<SignatureModel> {
    config.validate()?;
    if embedding.dim() == 0 {
        return Err(Error::InvalidArgument("embedding dimension must be positive".into()));
    }
    let schema = dataset.schema().to_vec();
    let m = schema.len();
    if m == 0 {
        return Err(Error::InvalidArgument("dataset has no attributes".into()));
    }
    let pairs = labels.index_pairs(dataset);
    if pairs.len() < config.batch_size {
        return Err(Error::InvalidArgument(format!(
            "{} labeled pairs is fewer than batch_size {}",
            pairs.len(),
            config.batch_size
        )));
    }
    let n = dataset.n();
    if n < config.negatives_per_pair + 2 {
        return Err(Error::InvalidArgument(format!(
            "{n} tuples cannot supply {} negatives per pair",
            config.negatives_per_pair
        )));
    }
    let mut encoders = initial_encoders(&schema, embedding.dim(), encoder_config, config.seed)?;
    let corpus = EncodedCorpus::new(dataset.tuples(), &embedding, &encoders);
    let max_signatures = config.max_signatures.unwrap_or(m);
    let mut usable = vec![true; m];
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut sampler = PairSampler {
        order: (0..pairs.len()).collect(),
        cursor: pairs.len(),
        pairs,
    };

    for s in 0..max_signatures {
        let usable_count = usable.iter().filter(|&&u| u).count();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 0x1000 + s as u64));
        let mut w = project_weights(Array1::<f64>::ones(m).view(), &usable)?;
        let mut adam = Adam::new(config, m);
        for step in 1..=config.max_iterations {
            let batch: Vec<BatchItem> = (0..config.batch_size)
                .map(|_| {
                    let (a, b) = sampler.next(&mut rng);
                    let negatives = sample_negatives(n, a, b, config.negatives_per_pair, &mut rng)?;
                    Ok(BatchItem {
                        anchor: a,
                        partner: b,
                        negatives,
                    })
                })
                .collect::<Result<_>>()?;
            let Some(out) = batch_objective(
                &embedding,
                &encoders,
                &corpus,
                &batch,
                w.view(),
                &usable,
                config.temperature,
            ) else {
                warn!("signature {s} step {step}: every pair in the batch lacks a signature, skipping");
                continue;
            };
            adam.step(&out.gradients, &usable, &mut w, &mut encoders, &mut embedding);
            w = project_weights(w.view(), &usable)?;
            let record = StepRecord {
                signature: s,
                step,
                loss: out.loss,
                pairs_used: out.pairs_used,
                usable: usable_count,
            };
            observe(&record);
        }
        let row = prune_row(w.as_slice().expect("contiguous"), config.support_threshold)
            .expect("a unit vector keeps at least one entry above the threshold");
        for (u, &x) in usable.iter_mut().zip(&row) {
            if x > 0.0 {
                *u = false;
            }
        }
        info!(
            "signature {s} support [{}]",
            row.iter()
                .zip(&schema)
                .filter(|(x, _)| **x > 0.0)
                .map(|(x, a)| format!("{a}:{x:.4}"))
                .collect::<Vec<_>>()
                .join(", ")
        );
        rows.push(row);
        if !usable.contains(&true) {
            break;
        }
    }

    let meta = ModelMeta {
        cell: "gru".into(),
        encoder: encoder_config.clone(),
        training: config.clone(),
        embedding: embedding.config().clone(),
    };
    let mut model = SignatureModel {
        schema,
        embedding,
        encoders,
        weights: SignatureWeights::from_rows(&rows, m)?,
        meta,
    };
    model.round_to_file_precision();
    Ok(model)
}
