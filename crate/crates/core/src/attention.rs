//! Attention scores under the chunked encoding, a toy softmax attention
//! forward pass, its hand-written backward pass, and a finite-difference
//! gradient check.
//!
//! Score orientation: with `q~ = e^{i*a_q} q` and `k~ = e^{i*a_k} k` pair-wise,
//! `Re <q~, k~> = Re[e^{i(phi_i - phi_j)} * sum_l e^{-i(m-n)theta_l} conj(q_l) k_l]`.
//! The query side carries the conjugation so the chunk factor reads
//! `e^{i(phi_i - phi_j)}`. When `i == j` the chunk factor is exactly `1`
//! and the score is the RoPE score.

use num_complex::Complex64;
use rand::Rng;
use serde::Serialize;

use crate::angles::{AngleSchedule, ChunkAngles};
use crate::chunking::ChunkLayout;
use crate::encoding::{encode_3d_phase, encode_3d_transpose, EncodedVector, HeadVector};
use crate::error::{Error, Result};

fn check_pair(q: &HeadVector, k: &HeadVector, schedule: &AngleSchedule) -> Result<()> {
    if q.d() != k.d() {
        return Err(Error::Mismatch {
            left: q.d(),
            right: k.d(),
        });
    }
    if q.d() != schedule.d() {
        return Err(Error::Mismatch {
            left: q.d(),
            right: schedule.d(),
        });
    }
    Ok(())
}

/// `sum_l e^{-i*rel*theta_l} conj(q_l) k_l` over the paired-complex view.
fn token_sum(q: &HeadVector, k: &HeadVector, rel: f64, thetas: &[f64]) -> Complex64 {
    thetas
        .iter()
        .enumerate()
        .map(|(l, theta)| Complex64::cis(-rel * theta) * (q.pair(l).conj() * k.pair(l)))
        .sum()
}

/// RoPE score of a query at `m` and a key at `n`; depends on `m - n` only.
pub fn score_rope(
    q: &HeadVector,
    k: &HeadVector,
    m: usize,
    n: usize,
    schedule: &AngleSchedule,
) -> Result<f64> {
    check_pair(q, k, schedule)?;
    Ok(token_sum(q, k, m as f64 - n as f64, schedule.thetas()).re)
}

/// Raw inputs of a chunked score: query at `(i, m)`, key at `(j, n)`.
#[derive(Debug, Clone, Copy)]
pub struct ScoreInputs<'a> {
    pub q: &'a HeadVector,
    pub k: &'a HeadVector,
    pub i: usize,
    pub j: usize,
    pub m: usize,
    pub n: usize,
    pub schedule: &'a AngleSchedule,
    pub phis: &'a ChunkAngles,
}

/// Closed-form chunked score.
pub fn score_3d(inputs: &ScoreInputs<'_>) -> Result<f64> {
    check_pair(inputs.q, inputs.k, inputs.schedule)?;
    let chunk = Complex64::cis(inputs.phis.phi(inputs.i)? - inputs.phis.phi(inputs.j)?);
    let tokens = token_sum(
        inputs.q,
        inputs.k,
        inputs.m as f64 - inputs.n as f64,
        inputs.schedule.thetas(),
    );
    Ok((chunk * tokens).re)
}

/// Real part of the paired-complex inner product of two encoded vectors.
pub fn score_from_encoded(q: &EncodedVector, k: &EncodedVector) -> Result<f64> {
    if q.d() != k.d() {
        return Err(Error::Mismatch {
            left: q.d(),
            right: k.d(),
        });
    }
    Ok((0..q.d() / 2)
        .map(|l| q.vector.pair(l) * k.vector.pair(l).conj())
        .sum::<Complex64>()
        .re)
}

/// Sequences of queries, keys and values for a toy multi-head attention.
///
/// Each vector is the concatenation of `num_heads` head slices of width
/// `head_dim`; every head is encoded and attended independently.
#[derive(Debug, Clone)]
pub struct AttentionBatch {
    q: Vec<HeadVector>,
    k: Vec<HeadVector>,
    v: Vec<HeadVector>,
    layout: ChunkLayout,
    num_heads: usize,
    causal: bool,
}

impl AttentionBatch {
    pub fn new(
        q: Vec<HeadVector>,
        k: Vec<HeadVector>,
        v: Vec<HeadVector>,
        layout: ChunkLayout,
        num_heads: usize,
    ) -> Result<Self> {
        if q.is_empty() {
            return Err(Error::Empty("attention batch has no positions".into()));
        }
        for seq in [&q, &k, &v] {
            if seq.len() != layout.seq_len() {
                return Err(Error::Mismatch {
                    left: seq.len(),
                    right: layout.seq_len(),
                });
            }
        }
        let width = q[0].d();
        if let Some(bad) = q.iter().chain(&k).chain(&v).find(|h| h.d() != width) {
            return Err(Error::Mismatch {
                left: bad.d(),
                right: width,
            });
        }
        if num_heads == 0
            || !width.is_multiple_of(num_heads)
            || !(width / num_heads).is_multiple_of(2)
        {
            return Err(Error::Dimension(format!(
                "width {width} does not split into {num_heads} even-width heads"
            )));
        }
        Ok(Self {
            q,
            k,
            v,
            layout,
            num_heads,
            causal: false,
        })
    }

    /// Uniform entries in `[-1, 1)`.
    pub fn random<R: Rng>(
        layout: ChunkLayout,
        num_heads: usize,
        head_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let width = num_heads * head_dim;
        let draw = |rng: &mut R| -> Result<Vec<HeadVector>> {
            (0..layout.seq_len())
                .map(|_| HeadVector::new((0..width).map(|_| rng.gen_range(-1.0..1.0)).collect()))
                .collect()
        };
        let q = draw(rng)?;
        let k = draw(rng)?;
        let v = draw(rng)?;
        Self::new(q, k, v, layout, num_heads)
    }

    pub fn with_causal(mut self, causal: bool) -> Self {
        self.causal = causal;
        self
    }

    pub fn queries(&self) -> &[HeadVector] {
        &self.q
    }

    pub fn keys(&self) -> &[HeadVector] {
        &self.k
    }

    pub fn values(&self) -> &[HeadVector] {
        &self.v
    }

    pub fn layout(&self) -> &ChunkLayout {
        &self.layout
    }

    pub fn num_heads(&self) -> usize {
        self.num_heads
    }

    pub fn head_dim(&self) -> usize {
        self.q[0].d() / self.num_heads
    }

    pub fn causal(&self) -> bool {
        self.causal
    }

    fn tensor(&self, which: Tensor) -> &[HeadVector] {
        match which {
            Tensor::Query => &self.q,
            Tensor::Key => &self.k,
            Tensor::Value => &self.v,
        }
    }

    fn perturbed(&self, which: Tensor, pos: usize, idx: usize, delta: f64) -> Self {
        let mut out = self.clone();
        let seq = match which {
            Tensor::Query => &mut out.q,
            Tensor::Key => &mut out.k,
            Tensor::Value => &mut out.v,
        };
        let mut values = seq[pos].values().to_vec();
        values[idx] += delta;
        seq[pos] = HeadVector::new(values).expect("perturbation keeps shape");
        out
    }
}

fn head_slice(h: &HeadVector, head: usize, head_dim: usize) -> HeadVector {
    HeadVector::new(h.values()[head * head_dim..(head + 1) * head_dim].to_vec())
        .expect("head slice of a valid vector")
}

/// Per-head intermediate state of the forward pass.
#[derive(Debug, Clone)]
pub struct HeadState {
    pub encoded_q: Vec<EncodedVector>,
    pub encoded_k: Vec<EncodedVector>,
    /// Unscaled scores, `scores[p][p']`.
    pub scores: Vec<Vec<f64>>,
    /// Softmax weights over keys; masked entries are 0.
    pub weights: Vec<Vec<f64>>,
}

fn check_schedules(
    batch: &AttentionBatch,
    schedule: &AngleSchedule,
    phis: &ChunkAngles,
) -> Result<()> {
    if schedule.d() != batch.head_dim() {
        return Err(Error::Mismatch {
            left: schedule.d(),
            right: batch.head_dim(),
        });
    }
    if phis.num_chunks() < batch.layout.num_chunks() {
        return Err(Error::ChunkIndex {
            index: batch.layout.num_chunks() - 1,
            num_chunks: phis.num_chunks(),
        });
    }
    Ok(())
}

/// Row-wise softmax of `scores * scale` with max subtraction; `allowed(p')` masks keys.
fn softmax_row(row: &[f64], scale: f64, allowed: impl Fn(usize) -> bool) -> Vec<f64> {
    let max = row
        .iter()
        .enumerate()
        .filter(|(t, _)| allowed(*t))
        .map(|(_, s)| s * scale)
        .fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row
        .iter()
        .enumerate()
        .map(|(t, s)| {
            if allowed(t) {
                (s * scale - max).exp()
            } else {
                0.0
            }
        })
        .collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Encodes every position of one head and computes its scores and weights.
pub fn head_forward(
    batch: &AttentionBatch,
    head: usize,
    schedule: &AngleSchedule,
    phis: &ChunkAngles,
) -> Result<HeadState> {
    check_schedules(batch, schedule, phis)?;
    let hd = batch.head_dim();
    let encode = |seq: &[HeadVector]| -> Result<Vec<EncodedVector>> {
        seq.iter()
            .enumerate()
            .map(|(p, h)| {
                let (j, m) = batch.layout.decompose(p)?;
                encode_3d_phase(&head_slice(h, head, hd), j, m, schedule, phis)
            })
            .collect()
    };
    let encoded_q = encode(&batch.q)?;
    let encoded_k = encode(&batch.k)?;
    let scale = 1.0 / (hd as f64).sqrt();
    let mut scores = Vec::with_capacity(encoded_q.len());
    let mut weights = Vec::with_capacity(encoded_q.len());
    for (p, eq) in encoded_q.iter().enumerate() {
        let row = encoded_k
            .iter()
            .map(|ek| score_from_encoded(eq, ek))
            .collect::<Result<Vec<_>>>()?;
        weights.push(softmax_row(&row, scale, |t| !batch.causal || t <= p));
        scores.push(row);
    }
    Ok(HeadState {
        encoded_q,
        encoded_k,
        scores,
        weights,
    })
}

/// Softmax attention with chunked positional encoding on queries and keys.
///
/// `output[p] = sum_p' softmax(scores[p] / sqrt(head_dim))[p'] * V[p']`, per head.
pub fn attention_forward(
    batch: &AttentionBatch,
    schedule: &AngleSchedule,
    phis: &ChunkAngles,
) -> Result<Vec<HeadVector>> {
    let len = batch.layout.seq_len();
    let hd = batch.head_dim();
    let mut out = vec![vec![0.0; batch.num_heads * hd]; len];
    for head in 0..batch.num_heads {
        let state = head_forward(batch, head, schedule, phis)?;
        for (p, row) in state.weights.iter().enumerate() {
            let dst = &mut out[p][head * hd..(head + 1) * hd];
            for (w, v) in row.iter().zip(&batch.v) {
                if *w == 0.0 {
                    continue;
                }
                for (o, x) in dst.iter_mut().zip(&v.values()[head * hd..(head + 1) * hd]) {
                    *o += w * x;
                }
            }
        }
    }
    out.into_iter().map(HeadVector::new).collect()
}

/// `sum_p <upstream[p], output[p]>`.
pub fn weighted_loss(
    batch: &AttentionBatch,
    schedule: &AngleSchedule,
    phis: &ChunkAngles,
    upstream: &[Vec<f64>],
) -> Result<f64> {
    let out = attention_forward(batch, schedule, phis)?;
    check_upstream(batch, upstream)?;
    Ok(out
        .iter()
        .zip(upstream)
        .map(|(o, g)| o.values().iter().zip(g).map(|(a, b)| a * b).sum::<f64>())
        .sum())
}

fn check_upstream(batch: &AttentionBatch, upstream: &[Vec<f64>]) -> Result<()> {
    if upstream.len() != batch.layout.seq_len() {
        return Err(Error::Mismatch {
            left: upstream.len(),
            right: batch.layout.seq_len(),
        });
    }
    let width = batch.q[0].d();
    if let Some(g) = upstream.iter().find(|g| g.len() != width) {
        return Err(Error::Mismatch {
            left: g.len(),
            right: width,
        });
    }
    Ok(())
}

/// Gradients of [`weighted_loss`] with respect to the raw inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionGrads {
    pub dq: Vec<Vec<f64>>,
    pub dk: Vec<Vec<f64>>,
    pub dv: Vec<Vec<f64>>,
}

impl AttentionGrads {
    fn tensor(&self, which: Tensor) -> &[Vec<f64>] {
        match which {
            Tensor::Query => &self.dq,
            Tensor::Key => &self.dk,
            Tensor::Value => &self.dv,
        }
    }
}

/// Analytic backward pass of [`weighted_loss`].
pub fn attention_backward(
    batch: &AttentionBatch,
    schedule: &AngleSchedule,
    phis: &ChunkAngles,
    upstream: &[Vec<f64>],
) -> Result<AttentionGrads> {
    check_upstream(batch, upstream)?;
    let len = batch.layout.seq_len();
    let hd = batch.head_dim();
    let width = batch.num_heads * hd;
    let scale = 1.0 / (hd as f64).sqrt();
    let mut grads = AttentionGrads {
        dq: vec![vec![0.0; width]; len],
        dk: vec![vec![0.0; width]; len],
        dv: vec![vec![0.0; width]; len],
    };
    for head in 0..batch.num_heads {
        let range = head * hd..(head + 1) * hd;
        let state = head_forward(batch, head, schedule, phis)?;
        let mut dq_enc = vec![vec![0.0; hd]; len];
        let mut dk_enc = vec![vec![0.0; hd]; len];
        for p in 0..len {
            let d_out = &upstream[p][range.clone()];
            let weights = &state.weights[p];
            let d_weights: Vec<f64> = batch
                .v
                .iter()
                .map(|v| {
                    v.values()[range.clone()]
                        .iter()
                        .zip(d_out)
                        .map(|(a, b)| a * b)
                        .sum()
                })
                .collect();
            for (t, w) in weights.iter().enumerate() {
                for (dv, g) in grads.dv[t][range.clone()].iter_mut().zip(d_out) {
                    *dv += w * g;
                }
            }
            let mean: f64 = weights.iter().zip(&d_weights).map(|(w, g)| w * g).sum();
            for t in 0..len {
                let d_score = weights[t] * (d_weights[t] - mean) * scale;
                if d_score == 0.0 {
                    continue;
                }
                let (eq, ek) = (state.encoded_q[p].values(), state.encoded_k[t].values());
                for x in 0..hd {
                    dq_enc[p][x] += d_score * ek[x];
                    dk_enc[t][x] += d_score * eq[x];
                }
            }
        }
        for p in 0..len {
            let (j, m) = batch.layout.decompose(p)?;
            let dq = encode_3d_transpose(&dq_enc[p], j, m, schedule, phis)?;
            let dk = encode_3d_transpose(&dk_enc[p], j, m, schedule, phis)?;
            grads.dq[p][range.clone()].copy_from_slice(&dq);
            grads.dk[p][range.clone()].copy_from_slice(&dk);
        }
    }
    if grads
        .dq
        .iter()
        .chain(&grads.dk)
        .chain(&grads.dv)
        .flatten()
        .any(|g| !g.is_finite())
    {
        return Err(Error::NonFinite("analytic gradient".into()));
    }
    Ok(grads)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Tensor {
    Query,
    Key,
    Value,
}

/// Coordinate where the largest gradient discrepancy was found.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GradLocation {
    pub tensor: Tensor,
    pub position: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub coordinates: usize,
    pub worst: Option<GradLocation>,
}

impl GradCheckReport {
    fn empty() -> Self {
        Self {
            max_relative_error: 0.0,
            coordinates: 0,
            worst: None,
        }
    }

    fn record(&mut self, loc: GradLocation) -> Result<()> {
        if !loc.numeric.is_finite() || !loc.analytic.is_finite() {
            return Err(Error::NonFinite(format!("gradient at {loc:?}")));
        }
        let err = (loc.analytic - loc.numeric).abs() / loc.analytic.abs().max(1.0);
        self.coordinates += 1;
        if self.worst.is_none() || err > self.max_relative_error {
            self.max_relative_error = err;
            self.worst = Some(loc);
        }
        Ok(())
    }
}

fn check_eps(eps: f64) -> Result<()> {
    if !(1e-6..=1e-3).contains(&eps) {
        return Err(Error::Parameter(format!(
            "eps must lie in [1e-6, 1e-3], got {eps}"
        )));
    }
    Ok(())
}

/// Compares [`attention_backward`] against central differences of
/// [`weighted_loss`] at every input coordinate.
///
/// The error per coordinate is `|analytic - numeric| / max(1, |analytic|)`.
pub fn grad_check(
    batch: &AttentionBatch,
    schedule: &AngleSchedule,
    phis: &ChunkAngles,
    upstream: &[Vec<f64>],
    eps: f64,
) -> Result<GradCheckReport> {
    check_eps(eps)?;
    let grads = attention_backward(batch, schedule, phis, upstream)?;
    let mut report = GradCheckReport::empty();
    for which in [Tensor::Query, Tensor::Key, Tensor::Value] {
        for (pos, h) in batch.tensor(which).iter().enumerate() {
            for index in 0..h.d() {
                let plus = weighted_loss(
                    &batch.perturbed(which, pos, index, eps),
                    schedule,
                    phis,
                    upstream,
                )?;
                let minus = weighted_loss(
                    &batch.perturbed(which, pos, index, -eps),
                    schedule,
                    phis,
                    upstream,
                )?;
                report.record(GradLocation {
                    tensor: which,
                    position: pos,
                    index,
                    analytic: grads.tensor(which)[pos][index],
                    numeric: (plus - minus) / (2.0 * eps),
                })?;
            }
        }
    }
    Ok(report)
}

/// Gradient check of the linear loss `<weights, encode_3d(h, j, m)>`.
pub fn grad_check_encoding(
    h: &HeadVector,
    j: usize,
    m: usize,
    schedule: &AngleSchedule,
    phis: &ChunkAngles,
    weights: &[f64],
    eps: f64,
) -> Result<GradCheckReport> {
    check_eps(eps)?;
    let loss = |x: &HeadVector| -> Result<f64> {
        let e = crate::encoding::encode_3d(x, j, m, schedule, phis)?;
        Ok(e.values().iter().zip(weights).map(|(a, b)| a * b).sum())
    };
    let analytic = encode_3d_transpose(weights, j, m, schedule, phis)?;
    let mut report = GradCheckReport::empty();
    for index in 0..h.d() {
        let shifted = |delta: f64| {
            let mut v = h.values().to_vec();
            v[index] += delta;
            HeadVector::new(v)
        };
        let numeric = (loss(&shifted(eps)?)? - loss(&shifted(-eps)?)?) / (2.0 * eps);
        report.record(GradLocation {
            tensor: Tensor::Query,
            position: 0,
            index,
            analytic: analytic[index],
            numeric,
        })?;
    }
    Ok(report)
}
