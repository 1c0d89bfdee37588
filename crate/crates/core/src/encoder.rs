//! Attention-based attribute encoder.
//!
//! A bidirectional GRU produces one hidden state per token; a learned
//! vector scores the states, the softmax of the scores is smoothed toward
//! the uniform distribution by `rho`, and the attribute embedding is the
//! resulting weighted average of the raw token vectors.
//!
//! Forward passes keep the per-step gate activations so [`AttentionalEncoder::backward`]
//! can run reverse-mode differentiation by hand.

use std::collections::BTreeMap;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::AttributeValue;
use crate::embedding::EmbeddingTable;
use crate::error::{Error, Result};

/// Per-attribute encoder settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    /// Hidden units per direction.
    pub hidden_size: usize,
    pub max_len: usize,
    /// Attribute that gets full attention (`rho = 1`); every other
    /// attribute averages uniformly (`rho = 0`). Defaults to the first
    /// schema attribute.
    pub primary_attribute: Option<String>,
    /// Explicit per-attribute `rho`, overriding the primary rule.
    pub rho: BTreeMap<String, f64>,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            hidden_size: 64,
            max_len: 64,
            primary_attribute: None,
            rho: BTreeMap::new(),
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_size == 0 {
            return Err(Error::Config("encoder.hidden_size must be positive".into()));
        }
        if self.max_len == 0 {
            return Err(Error::Config("encoder.max_len must be positive".into()));
        }
        for (name, &rho) in &self.rho {
            if !(0.0..=1.0).contains(&rho) {
                return Err(Error::Config(format!("encoder.rho.{name} = {rho} is outside [0, 1]")));
            }
        }
        Ok(())
    }

    /// Resolved smoothing value for each schema attribute.
    pub fn rho_for(&self, schema: &[String]) -> Result<Vec<f64>> {
        let primary = self.primary_attribute.clone().or_else(|| schema.first().cloned());
        if let Some(p) = &self.primary_attribute {
            if !schema.contains(p) {
                return Err(Error::Config(format!(
                    "encoder.primary_attribute `{p}` is not in the schema"
                )));
            }
        }
        for name in self.rho.keys() {
            if !schema.contains(name) {
                return Err(Error::Config(format!("encoder.rho names unknown attribute `{name}`")));
            }
        }
        Ok(schema
            .iter()
            .map(|a| match self.rho.get(a) {
                Some(&r) => r,
                None if Some(a) == primary.as_ref() => 1.0,
                None => 0.0,
            })
            .collect())
    }
}

/// Gate layout along the `3h` axis: update `z`, reset `r`, candidate `n`.
#[derive(Debug, Clone, PartialEq)]
pub struct GruParams {
    pub w: Array2<f64>,
    pub u: Array2<f64>,
    pub b_x: Array1<f64>,
    pub b_h: Array1<f64>,
}

#[derive(Debug, Clone)]
struct GruStep {
    h_prev: Array1<f64>,
    z: Array1<f64>,
    r: Array1<f64>,
    n: Array1<f64>,
    c_n: Array1<f64>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn add_outer(mut m: ndarray::ArrayViewMut2<'_, f64>, a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) {
    for (mut row, &ai) in m.rows_mut().into_iter().zip(a.iter()) {
        if ai != 0.0 {
            row.scaled_add(ai, &b);
        }
    }
}

impl GruParams {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            w: Array2::zeros((3 * hidden, input)),
            u: Array2::zeros((3 * hidden, hidden)),
            b_x: Array1::zeros(3 * hidden),
            b_h: Array1::zeros(3 * hidden),
        }
    }

    /// Uniform in `±1/sqrt(hidden)`.
    pub fn random<R: Rng>(input: usize, hidden: usize, rng: &mut R) -> Self {
        let k = 1.0 / (hidden as f64).sqrt();
        let mut draw = || rng.random_range(-k..=k);
        Self {
            w: Array2::from_shape_simple_fn((3 * hidden, input), &mut draw),
            u: Array2::from_shape_simple_fn((3 * hidden, hidden), &mut draw),
            b_x: Array1::from_shape_simple_fn(3 * hidden, &mut draw),
            b_h: Array1::from_shape_simple_fn(3 * hidden, &mut draw),
        }
    }

    pub fn hidden(&self) -> usize {
        self.u.ncols()
    }

    pub fn input(&self) -> usize {
        self.w.ncols()
    }

    fn step(&self, x: ArrayView1<'_, f64>, h_prev: &Array1<f64>) -> (Array1<f64>, GruStep) {
        let h = self.hidden();
        let a = self.w.dot(&x) + &self.b_x;
        let c = self.u.dot(h_prev) + &self.b_h;
        let mut z = Array1::zeros(h);
        let mut r = Array1::zeros(h);
        let mut n = Array1::zeros(h);
        let mut out = Array1::zeros(h);
        for i in 0..h {
            z[i] = sigmoid(a[i] + c[i]);
            r[i] = sigmoid(a[h + i] + c[h + i]);
            n[i] = (a[2 * h + i] + r[i] * c[2 * h + i]).tanh();
            out[i] = (1.0 - z[i]) * n[i] + z[i] * h_prev[i];
        }
        let c_n = c.slice(s![2 * h..]).to_owned();
        (
            out,
            GruStep {
                h_prev: h_prev.clone(),
                z,
                r,
                n,
                c_n,
            },
        )
    }

    /// Runs over `v` (one row per token), right-to-left when `reverse`.
    /// Outputs are indexed by token position; steps are in processing order.
    fn run(&self, v: ArrayView2<'_, f64>, reverse: bool) -> (Array2<f64>, Vec<GruStep>) {
        let l = v.nrows();
        let mut out = Array2::zeros((l, self.hidden()));
        let mut steps = Vec::with_capacity(l);
        let mut h = Array1::zeros(self.hidden());
        for t in 0..l {
            let pos = if reverse { l - 1 - t } else { t };
            let (next, step) = self.step(v.row(pos), &h);
            out.row_mut(pos).assign(&next);
            steps.push(step);
            h = next;
        }
        (out, steps)
    }

    fn backward(
        &self,
        v: ArrayView2<'_, f64>,
        steps: &[GruStep],
        d_out: ArrayView2<'_, f64>,
        reverse: bool,
        grad: &mut GruParams,
        dv: &mut Array2<f64>,
    ) {
        let l = v.nrows();
        let h = self.hidden();
        let mut carry = Array1::<f64>::zeros(h);
        let mut da = Array1::<f64>::zeros(3 * h);
        let mut dc = Array1::<f64>::zeros(3 * h);
        for t in (0..l).rev() {
            let pos = if reverse { l - 1 - t } else { t };
            let st = &steps[t];
            let dh = &d_out.row(pos) + &carry;
            let mut dh_prev = Array1::zeros(h);
            for i in 0..h {
                let (z, r, n) = (st.z[i], st.r[i], st.n[i]);
                let dn = dh[i] * (1.0 - z);
                let dz = dh[i] * (st.h_prev[i] - n);
                dh_prev[i] = dh[i] * z;
                let dan = dn * (1.0 - n * n);
                let dr = dan * st.c_n[i];
                let daz = dz * z * (1.0 - z);
                let dar = dr * r * (1.0 - r);
                da[i] = daz;
                da[h + i] = dar;
                da[2 * h + i] = dan;
                dc[i] = daz;
                dc[h + i] = dar;
                dc[2 * h + i] = dan * r;
            }
            let x = v.row(pos);
            add_outer(grad.w.view_mut(), da.view(), x);
            grad.b_x += &da;
            dv.row_mut(pos).scaled_add(1.0, &self.w.t().dot(&da));
            add_outer(grad.u.view_mut(), dc.view(), st.h_prev.view());
            grad.b_h += &dc;
            dh_prev += &self.u.t().dot(&dc);
            carry = dh_prev;
        }
    }

    fn slices(&self) -> [&[f64]; 4] {
        [
            self.w.as_slice().expect("standard layout"),
            self.u.as_slice().expect("standard layout"),
            self.b_x.as_slice().expect("standard layout"),
            self.b_h.as_slice().expect("standard layout"),
        ]
    }

    fn slices_mut(&mut self) -> [&mut [f64]; 4] {
        [
            self.w.as_slice_mut().expect("standard layout"),
            self.u.as_slice_mut().expect("standard layout"),
            self.b_x.as_slice_mut().expect("standard layout"),
            self.b_h.as_slice_mut().expect("standard layout"),
        ]
    }
}

/// Trainable parameters of one attribute encoder. Also used as the
/// gradient accumulator with identical shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub forward: GruParams,
    pub backward: GruParams,
    /// Scoring vector over the `2h` concatenated hidden state.
    pub attention: Array1<f64>,
}

impl EncoderParams {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            forward: GruParams::zeros(input, hidden),
            backward: GruParams::zeros(input, hidden),
            attention: Array1::zeros(2 * hidden),
        }
    }

    pub fn random<R: Rng>(input: usize, hidden: usize, rng: &mut R) -> Self {
        let forward = GruParams::random(input, hidden, rng);
        let backward = GruParams::random(input, hidden, rng);
        let k = 1.0 / ((2 * hidden) as f64).sqrt();
        let attention = Array1::from_shape_simple_fn(2 * hidden, || rng.random_range(-k..=k));
        Self {
            forward,
            backward,
            attention,
        }
    }

    pub fn hidden(&self) -> usize {
        self.forward.hidden()
    }

    /// Flat views in a fixed order, for optimizers and serialization.
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut v: Vec<&[f64]> = Vec::with_capacity(9);
        v.extend(self.forward.slices());
        v.extend(self.backward.slices());
        v.push(self.attention.as_slice().expect("standard layout"));
        v
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v: Vec<&mut [f64]> = Vec::with_capacity(9);
        v.extend(self.forward.slices_mut());
        v.extend(self.backward.slices_mut());
        v.push(self.attention.as_slice_mut().expect("standard layout"));
        v
    }

    pub fn add_assign(&mut self, other: &EncoderParams) {
        for (a, b) in self.slices_mut().into_iter().zip(other.slices()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, k: f64) {
        for a in self.slices_mut() {
            a.iter_mut().for_each(|x| *x *= k);
        }
    }
}

/// Softmax of `scores`, then `beta = rho * alpha + (1 - rho) / l`.
pub fn smooth_attention(scores: ArrayView1<'_, f64>, rho: f64) -> (Array1<f64>, Array1<f64>) {
    let l = scores.len();
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut alpha = scores.mapv(|x| (x - max).exp());
    let total = alpha.sum();
    alpha /= total;
    let uniform = 1.0 / l as f64;
    let beta = alpha.mapv(|a| rho * a + (1.0 - rho) * uniform);
    (alpha, beta)
}

#[derive(Debug, Clone)]
struct SeqCache {
    hidden: Array2<f64>,
    forward_steps: Vec<GruStep>,
    backward_steps: Vec<GruStep>,
}

/// Result of one encoder forward pass, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct EncoderForward {
    pub alpha: Array1<f64>,
    pub beta: Array1<f64>,
    pub output: Array1<f64>,
    cache: Option<SeqCache>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionalEncoder {
    pub params: EncoderParams,
    /// Attention smoothing in `[0, 1]`; `0` reduces to plain averaging.
    pub rho: f64,
    /// Longer token sequences are truncated at the tail.
    pub max_len: usize,
}

impl AttentionalEncoder {
    pub fn new(params: EncoderParams, rho: f64, max_len: usize) -> Self {
        assert!((0.0..=1.0).contains(&rho), "rho must lie in [0, 1], got {rho}");
        Self { params, rho, max_len }
    }

    pub fn hidden(&self) -> usize {
        self.params.hidden()
    }

    /// Whether the recurrent part influences the output at all.
    pub fn uses_sequence_encoder(&self) -> bool {
        self.rho > 0.0
    }

    /// One `2h` state per position: forward pass state then backward pass state.
    pub fn seq_encode(&self, v: ArrayView2<'_, f64>) -> Array2<f64> {
        self.seq_encode_cached(v).hidden
    }

    fn seq_encode_cached(&self, v: ArrayView2<'_, f64>) -> SeqCache {
        let h = self.hidden();
        let (fw, forward_steps) = self.params.forward.run(v, false);
        let (bw, backward_steps) = self.params.backward.run(v, true);
        let mut hidden = Array2::zeros((v.nrows(), 2 * h));
        hidden.slice_mut(s![.., ..h]).assign(&fw);
        hidden.slice_mut(s![.., h..]).assign(&bw);
        SeqCache {
            hidden,
            forward_steps,
            backward_steps,
        }
    }

    /// Smoothed attention weights for the given hidden states.
    pub fn attention_weights(&self, hidden: ArrayView2<'_, f64>) -> Array1<f64> {
        let scores = hidden.dot(&self.params.attention);
        smooth_attention(scores.view(), self.rho).1
    }

    /// Forward pass over a non-empty token matrix (one row per token).
    pub fn forward(&self, v: ArrayView2<'_, f64>) -> EncoderForward {
        let l = v.nrows();
        assert!(l >= 1, "encoder input must have at least one token");
        let (alpha, beta, cache) = if self.uses_sequence_encoder() {
            let cache = self.seq_encode_cached(v);
            let scores = cache.hidden.dot(&self.params.attention);
            let (alpha, beta) = smooth_attention(scores.view(), self.rho);
            (alpha, beta, Some(cache))
        } else {
            let u = Array1::from_elem(l, 1.0 / l as f64);
            (u.clone(), u, None)
        };
        let output = beta.dot(&v);
        EncoderForward {
            alpha,
            beta,
            output,
            cache,
        }
    }

    /// Accumulates parameter gradients into `grad` and returns the gradient
    /// with respect to the token matrix.
    pub fn backward(
        &self,
        v: ArrayView2<'_, f64>,
        fw: &EncoderForward,
        d_output: ArrayView1<'_, f64>,
        grad: &mut EncoderParams,
    ) -> Array2<f64> {
        let l = v.nrows();
        let mut dv = Array2::zeros(v.raw_dim());
        for k in 0..l {
            dv.row_mut(k).scaled_add(fw.beta[k], &d_output);
        }
        let Some(cache) = &fw.cache else {
            return dv;
        };
        let d_beta = v.dot(&d_output);
        let d_alpha = d_beta * self.rho;
        let mean = fw.alpha.dot(&d_alpha);
        let d_scores = Array1::from_shape_fn(l, |k| fw.alpha[k] * (d_alpha[k] - mean));
        grad.attention += &cache.hidden.t().dot(&d_scores);
        let h = self.hidden();
        let mut d_hidden = Array2::zeros((l, 2 * h));
        for k in 0..l {
            d_hidden.row_mut(k).scaled_add(d_scores[k], &self.params.attention);
        }
        self.params.forward.backward(
            v,
            &cache.forward_steps,
            d_hidden.slice(s![.., ..h]),
            false,
            &mut grad.forward,
            &mut dv,
        );
        self.params.backward.backward(
            v,
            &cache.backward_steps,
            d_hidden.slice(s![.., h..]),
            true,
            &mut grad.backward,
            &mut dv,
        );
        dv
    }

    /// Token matrix for `value`, truncated to `max_len` rows.
    pub fn token_matrix(&self, table: &EmbeddingTable, value: &AttributeValue) -> Array2<f64> {
        let tokens = &value.tokens()[..value.len().min(self.max_len)];
        let mut m = Array2::zeros((tokens.len(), table.dim()));
        for (mut row, t) in m.rows_mut().into_iter().zip(tokens) {
            row.assign(&table.embed_token(t));
        }
        m
    }

    /// Attribute embedding, or `None` for a missing value.
    pub fn encode_attribute(&self, table: &EmbeddingTable, value: &AttributeValue) -> Option<Array1<f64>> {
        if value.is_missing() {
            return None;
        }
        let v = self.token_matrix(table, value);
        Some(self.forward(v.view()).output)
    }

    /// Per-token weights for an attribute value (empty when missing).
    pub fn token_weights(&self, table: &EmbeddingTable, value: &AttributeValue) -> Vec<(String, f64)> {
        if value.is_missing() {
            return Vec::new();
        }
        let v = self.token_matrix(table, value);
        let fw = self.forward(v.view());
        value
            .tokens()
            .iter()
            .zip(fw.beta.iter())
            .map(|(t, &b)| (t.clone(), b))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Array2<f64> {
        Array2::from_shape_simple_fn((r, c), || rng.random_range(-1.0..1.0))
    }

    fn encoder(rho: f64, seed: u64) -> AttentionalEncoder {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        AttentionalEncoder::new(EncoderParams::random(6, 4, &mut rng), rho, 64)
    }

    #[test]
    fn single_position() {
        let enc = encoder(0.7, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let v = rand_matrix(&mut rng, 1, 6);
        assert_eq!(enc.seq_encode(v.view()).nrows(), 1);
        let fw = enc.forward(v.view());
        assert!((fw.beta[0] - 1.0).abs() < 1e-15);
        assert!((&fw.output - &v.row(0)).iter().all(|d| d.abs() < 1e-15));
    }

    #[test]
    fn reversal_swaps_halves_when_weights_tied() {
        let mut enc = encoder(1.0, 3);
        enc.params.backward = enc.params.forward.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let v = rand_matrix(&mut rng, 5, 6);
        let mut rev = v.clone();
        for k in 0..5 {
            rev.row_mut(k).assign(&v.row(4 - k));
        }
        let h = enc.seq_encode(v.view());
        let hr = enc.seq_encode(rev.view());
        for k in 0..5 {
            let a = hr.slice(s![k, ..4]);
            let b = h.slice(s![4 - k, 4..]);
            assert!((&a - &b).iter().all(|d| d.abs() < 1e-12));
            let a = hr.slice(s![k, 4..]);
            let b = h.slice(s![4 - k, ..4]);
            assert!((&a - &b).iter().all(|d| d.abs() < 1e-12));
        }
    }

    #[test]
    fn zero_inputs_zero_biases_give_zero_states() {
        let mut enc = encoder(1.0, 5);
        for g in [&mut enc.params.forward, &mut enc.params.backward] {
            g.b_x.fill(0.0);
            g.b_h.fill(0.0);
        }
        let h = enc.seq_encode(Array2::zeros((3, 6)).view());
        assert!(h.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn rho_zero_is_uniform() {
        let (_, beta) = smooth_attention(Array1::from(vec![3.0, -1.0, 0.5, 9.0]).view(), 0.0);
        assert_eq!(beta.to_vec(), vec![0.25; 4]);
    }

    #[test]
    fn rho_one_hand_softmax() {
        let (_, beta) = smooth_attention(Array1::from(vec![0.0, 3f64.ln()]).view(), 1.0);
        assert!((beta[0] - 0.25).abs() < 1e-12);
        assert!((beta[1] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn rho_zero_matches_plain_average_bitwise() {
        let enc = encoder(0.0, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let v = rand_matrix(&mut rng, 4, 6);
        let out = enc.forward(v.view()).output;
        let uniform = Array1::from_elem(4, 0.25);
        assert_eq!(out, uniform.dot(&v));
    }

    fn fd_check(rho: f64, l: usize, seed: u64) {
        let enc = encoder(rho, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        let v = rand_matrix(&mut rng, l, 6);
        let probe = Array1::from_shape_simple_fn(6, || rng.random_range(-1.0..1.0));
        let objective = |e: &AttentionalEncoder, v: &Array2<f64>| e.forward(v.view()).output.dot(&probe);

        let fw = enc.forward(v.view());
        let mut grad = EncoderParams::zeros(6, 4);
        let dv = enc.backward(v.view(), &fw, probe.view(), &mut grad);

        let eps = 1e-6;
        let rel = |a: f64, n: f64| (a - n).abs() / (a.abs().max(n.abs()).max(1e-8));
        let mut worst: f64 = 0.0;
        let n_slices = enc.params.slices().len();
        for si in 0..n_slices {
            let len = enc.params.slices()[si].len();
            for i in 0..len {
                let mut plus = enc.clone();
                plus.params.slices_mut()[si][i] += eps;
                let mut minus = enc.clone();
                minus.params.slices_mut()[si][i] -= eps;
                let num = (objective(&plus, &v) - objective(&minus, &v)) / (2.0 * eps);
                let ana = grad.slices()[si][i];
                if ana.abs() > 1e-7 || num.abs() > 1e-7 {
                    worst = worst.max(rel(ana, num));
                }
            }
        }
        for k in 0..l {
            for c in 0..6 {
                let mut vp = v.clone();
                vp[[k, c]] += eps;
                let mut vm = v.clone();
                vm[[k, c]] -= eps;
                let num = (objective(&enc, &vp) - objective(&enc, &vm)) / (2.0 * eps);
                worst = worst.max(rel(dv[[k, c]], num));
            }
        }
        assert!(worst < 1e-4, "worst relative error {worst}");
    }

    #[test]
    fn gradients_match_finite_differences() {
        for (i, l) in [1usize, 2, 3, 5].into_iter().enumerate() {
            fd_check(0.6, l, 10 + i as u64);
            fd_check(1.0, l, 20 + i as u64);
            fd_check(0.0, l, 30 + i as u64);
        }
    }
}
