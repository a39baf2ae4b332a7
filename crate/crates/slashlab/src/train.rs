//! Monte Carlo loss, closed-form gradients of both trainable blocks, a
//! finite-difference oracle, and the two-stage gradient-descent loop.
//!
//! Stage I trains the layer-1 query block with the layer-2 block frozen
//! at the identity until attention concentrates on the immediately
//! preceding token; Stage II freezes layer 1 and trains the layer-2
//! block until the per-feature attention aggregates concentrate on the
//! question feature. Population expectations are approximated by fresh
//! per-step Monte Carlo batches with derived seeds.
//!
//! Batch terms are evaluated independently per prompt and combined by a
//! fixed-order pairwise tree, so results do not depend on the worker
//! thread count.

use std::sync::atomic::{AtomicUsize, Ordering};

use ndarray::{Array1, Array2};
use rand_chacha::ChaCha8Rng;

use crate::data::{derive_rng, sample_batch, sample_one, sample_prompt_with_question, sample_task, embed, DataConfig, Sample};
use crate::error::{Error, Result};
use crate::model::{causal_softmax, key_cone_vector, layer1_toeplitz, question_rotations, ReducedParams};
use crate::rope::{apply_rope, pulse_check, FrequencySequence};
use crate::slash::average_slash_score;

static WORKER_THREADS: AtomicUsize = AtomicUsize::new(1);

/// Set the number of worker threads used for batch evaluation. Results
/// are identical for any value.
pub fn set_threads(n: usize) {
    WORKER_THREADS.store(n.max(1), Ordering::Relaxed);
}

/// Number of probe prompts per question feature used for snapshots.
const PROBES_PER_FEATURE: usize = 64;

/// Hyperparameters of the two-stage loop.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    pub eta1: f64,
    pub eta2: f64,
    /// Stage caps; each stage may stop earlier on its threshold.
    pub tau1: usize,
    pub tau2: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub snapshot_every: usize,
    /// Stage-I target: stop once `min_i S1[i, i-1] >= 1 - eps1`.
    pub eps1: f64,
    /// Stage-II target: stop once `(1 - S_k)^2 <= eps2` for every feature.
    pub eps2: f64,
}

impl TrainConfig {
    /// Defaults for a prompt of length `n`, with thresholds set from the
    /// concentration targets `eps1 ~ N^(-1/2)`, `eps2 ~ N^(-1/4)`.
    pub fn for_length(n: usize) -> Self {
        let nf = n as f64;
        Self {
            eta1: 1.0,
            eta2: 1.0,
            tau1: 2000,
            tau2: 2000,
            batch_size: 256,
            seed: 0,
            snapshot_every: 10,
            eps1: (nf.powf(-0.5)).max(0.1),
            eps2: (nf.powf(-0.25)).max(0.3),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta1 >= 0.0 && self.eta1.is_finite()) {
            return Err(Error::invalid("train.eta1 must be finite and >= 0"));
        }
        if !(self.eta2 >= 0.0 && self.eta2.is_finite()) {
            return Err(Error::invalid("train.eta2 must be finite and >= 0"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("train.batch_size must be positive"));
        }
        if self.snapshot_every == 0 {
            return Err(Error::invalid("train.snapshot_every must be positive"));
        }
        if !(self.eps1 > 0.0 && self.eps1 < 1.0) {
            return Err(Error::invalid("train.eps1 must lie in (0, 1)"));
        }
        if !(self.eps2 > 0.0 && self.eps2 < 1.0) {
            return Err(Error::invalid("train.eps2 must lie in (0, 1)"));
        }
        if self.eps1 > self.eps2 {
            return Err(Error::invalid("train.eps1 must not exceed train.eps2"));
        }
        Ok(())
    }
}

/// One tracked point of the training trajectory.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct DynamicsSnapshot {
    pub t: usize,
    pub stage: u8,
    /// `min_i S1[i, i-1]`, the worst previous-token score.
    pub min_prev_score: f64,
    /// `min_i (A[i, i-1] - max_{j <= i, j != i-1} A[i, j])`.
    pub logit_gap: f64,
    /// Average slash score of the layer-1 head at lag 1.
    pub slash_score_d1: f64,
    pub loss_estimate: f64,
    /// Mean layer-2 logit at label positions, grouped by the feature of
    /// the paired input; probes fix the question to feature 0.
    pub feature_logit_means: Vec<f64>,
    /// Mean per-feature attention aggregate over probes whose question is
    /// that feature.
    pub feature_scores: Vec<f64>,
}

/// Final state of a two-stage run.
#[derive(Debug, Clone)]
pub struct TrainResult {
    pub params: ReducedParams,
    pub snapshots: Vec<DynamicsSnapshot>,
    /// Global step at which Stage I stopped.
    pub stage1_end: usize,
    pub warnings: Vec<String>,
}

// ---------------------------------------------------------------------------
// Batch evaluation plumbing
// ---------------------------------------------------------------------------

fn par_map<T, F>(items: &[Sample], f: F) -> Vec<T>
where
    T: Send,
    F: Fn(&Sample) -> T + Sync,
{
    let threads = WORKER_THREADS
        .load(Ordering::Relaxed)
        .clamp(1, items.len().max(1));
    if threads <= 1 {
        return items.iter().map(f).collect();
    }
    let chunk = items.len().div_ceil(threads);
    let mut out: Vec<Option<T>> = (0..items.len()).map(|_| None).collect();
    let f = &f;
    std::thread::scope(|scope| {
        for (slots, part) in out.chunks_mut(chunk).zip(items.chunks(chunk)) {
            scope.spawn(move || {
                for (slot, item) in slots.iter_mut().zip(part) {
                    *slot = Some(f(item));
                }
            });
        }
    });
    out.into_iter().map(|o| o.expect("slot filled")).collect()
}

/// Fixed-shape pairwise reduction: round k combines neighbors 2i, 2i+1,
/// independent of how the inputs were produced.
fn tree_reduce<T>(mut items: Vec<T>, mut add: impl FnMut(T, T) -> T) -> Option<T> {
    if items.is_empty() {
        return None;
    }
    while items.len() > 1 {
        let mut next = Vec::with_capacity(items.len().div_ceil(2));
        let mut it = items.into_iter();
        while let Some(a) = it.next() {
            match it.next() {
                Some(b) => next.push(add(a, b)),
                None => next.push(a),
            }
        }
        items = next;
    }
    items.into_iter().next()
}

struct PromptEval {
    u: Array1<f64>,
    s2: Array1<f64>,
    residual: f64,
    /// dL/du_i of the half squared error, i.e. residual * s2_i * (E^y_i - y_hat).
    gamma: Array1<f64>,
    m: Array2<f64>,
}

fn eval_prompt(
    params: &ReducedParams,
    s1: &Array2<f64>,
    sample: &Sample,
    config: &DataConfig,
    freqs: &FrequencySequence,
) -> PromptEval {
    let e = &sample.embedding;
    let n = e.n();
    let m = s1.dot(&e.xy());
    let rotq = question_rotations(params, e, freqs).expect("validated dims");
    let u = Array1::from_iter((0..n).map(|i| rotq.row(i).dot(&m.row(i))));
    let max = u.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s2 = u.mapv(|v| (v - max).exp());
    let total = s2.sum();
    s2.mapv_inplace(|v| v / total);
    let y_hat = s2.dot(&e.y_col());
    let target = sample.task.target(config.feature(sample.prompt.question));
    let residual = y_hat - target;
    let y_col = e.y_col();
    let gamma = Array1::from_iter(
        (0..n).map(|i| residual * s2[i] * (y_col[i] - y_hat)),
    );
    PromptEval { u, s2, residual, gamma, m }
}

fn s1_for(params: &ReducedParams, config: &DataConfig, freqs: &FrequencySequence) -> Result<Array2<f64>> {
    let t = layer1_toeplitz(params, config, freqs)?;
    let n = config.n();
    let a = Array2::from_shape_fn((n, n), |(i, j)| if j <= i { t[i - j] } else { 0.0 });
    Ok(causal_softmax(a.view()))
}

// ---------------------------------------------------------------------------
// Loss and gradients
// ---------------------------------------------------------------------------

/// Mean half squared error over a fixed batch.
pub fn loss_on_batch(
    params: &ReducedParams,
    batch: &[Sample],
    config: &DataConfig,
    freqs: &FrequencySequence,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::invalid("batch must be nonempty"));
    }
    let s1 = s1_for(params, config, freqs)?;
    let terms = par_map(batch, |sample| {
        let ev = eval_prompt(params, &s1, sample, config, freqs);
        0.5 * ev.residual * ev.residual
    });
    Ok(tree_reduce(terms, |a, b| a + b).unwrap() / batch.len() as f64)
}

/// Monte Carlo estimate of the population loss with `b` fresh draws.
pub fn mc_loss(
    params: &ReducedParams,
    rng: &mut ChaCha8Rng,
    b: usize,
    config: &DataConfig,
    freqs: &FrequencySequence,
) -> Result<f64> {
    if b == 0 {
        return Err(Error::invalid("b must be >= 1"));
    }
    let batch: Vec<Sample> = (0..b).map(|_| sample_one(rng, config)).collect();
    loss_on_batch(params, &batch, config, freqs)
}

/// Analytic gradient of the batch loss with respect to the layer-1
/// query block.
///
/// Every pair `(i, j)` contributes its softmax-chain coefficient times
/// the rank-one matrix `c (R(j - i) c~)^T`; coefficients are accumulated
/// per offset first, so the result assembles from one rotation per
/// diagonal.
pub fn grad_w1(
    params: &ReducedParams,
    batch: &[Sample],
    config: &DataConfig,
    freqs: &FrequencySequence,
) -> Result<Array2<f64>> {
    if batch.is_empty() {
        return Err(Error::invalid("batch must be nonempty"));
    }
    let n = config.n();
    let s1 = s1_for(params, config, freqs)?;
    let per_prompt = par_map(batch, |sample| {
        let e = &sample.embedding;
        let ev = eval_prompt(params, &s1, sample, config, freqs);
        // I(i)_j = <rotated question at i, semantic row j>; its softmax
        // average over row i is exactly u_i.
        let rotq = question_rotations(params, e, freqs).expect("validated dims");
        let i_table = rotq.dot(&e.xy().t());
        let mut w = vec![0.0; n];
        for i in 0..n {
            let gi = ev.gamma[i];
            if gi == 0.0 {
                continue;
            }
            for j in 0..=i {
                w[i - j] += gi * s1[(i, j)] * (i_table[(i, j)] - ev.u[i]);
            }
        }
        w
    });
    let summed = tree_reduce(per_prompt, |mut a, b| {
        for (x, y) in a.iter_mut().zip(&b) {
            *x += y;
        }
        a
    })
    .unwrap();

    let cone = freqs.cone_band();
    let key = key_cone_vector(config.d_b);
    let mut v = Array1::<f64>::zeros(config.d_b);
    let scale = 1.0 / batch.len() as f64;
    for (delta, &w) in summed.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        let r = apply_rope(key.as_slice().unwrap(), -(delta as i64), &cone)?;
        for (vi, ri) in v.iter_mut().zip(&r) {
            *vi += w * scale * ri;
        }
    }
    let c = &config.cone_axis;
    Ok(Array2::from_shape_fn((config.d_b, config.d_b), |(i, j)| c[i] * v[j]))
}

/// Analytic gradient of the batch loss with respect to the layer-2
/// query block: the question row times the gamma-weighted sum of rotated
/// layer-1 aggregates.
pub fn grad_w2(
    params: &ReducedParams,
    batch: &[Sample],
    config: &DataConfig,
    freqs: &FrequencySequence,
) -> Result<Array2<f64>> {
    if batch.is_empty() {
        return Err(Error::invalid("batch must be nonempty"));
    }
    let n = config.n();
    let width = config.d_x + 2;
    let s1 = s1_for(params, config, freqs)?;
    let sem = freqs.semantic_band();
    let per_prompt = par_map(batch, |sample| {
        let e = &sample.embedding;
        let ev = eval_prompt(params, &s1, sample, config, freqs);
        let mut acc = Array1::<f64>::zeros(width);
        for i in 0..n {
            let gi = ev.gamma[i];
            if gi == 0.0 {
                continue;
            }
            // du_i/dW2 = outer(e_q, R(i - N) m_i)
            let offset = (i as i64 + 1) - n as i64;
            let rotated = apply_rope(ev.m.row(i).as_slice().unwrap(), offset, &sem)
                .expect("validated dims");
            for (a, r) in acc.iter_mut().zip(&rotated) {
                *a += gi * r;
            }
        }
        let e_q = e.xy().row(n - 1).to_owned();
        Array2::from_shape_fn((width, width), |(a, b)| e_q[a] * acc[b])
    });
    let summed = tree_reduce(per_prompt, |a, b| a + b).unwrap();
    Ok(summed / batch.len() as f64)
}

/// Which trainable block a derivative refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamBlock {
    Layer1,
    Layer2,
}

/// Central finite differences of an arbitrary scalar function of the
/// parameters, entry by entry.
pub fn finite_diff_grad(
    loss: impl Fn(&ReducedParams) -> f64,
    params: &ReducedParams,
    block: ParamBlock,
    h: f64,
) -> Array2<f64> {
    let dims = match block {
        ParamBlock::Layer1 => params.w1.dim(),
        ParamBlock::Layer2 => params.w2.dim(),
    };
    let mut work = params.clone();
    let mut out = Array2::zeros(dims);
    for i in 0..dims.0 {
        for j in 0..dims.1 {
            let original = match block {
                ParamBlock::Layer1 => work.w1[(i, j)],
                ParamBlock::Layer2 => work.w2[(i, j)],
            };
            let set = |w: &mut ReducedParams, v: f64| match block {
                ParamBlock::Layer1 => w.w1[(i, j)] = v,
                ParamBlock::Layer2 => w.w2[(i, j)] = v,
            };
            set(&mut work, original + h);
            let plus = loss(&work);
            set(&mut work, original - h);
            let minus = loss(&work);
            set(&mut work, original);
            out[(i, j)] = (plus - minus) / (2.0 * h);
        }
    }
    out
}

/// Max-abs deviation between two gradients, normalized by the larger
/// max-abs entry.
pub fn max_relative_error(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let dev = (a - b).iter().map(|v| v.abs()).fold(0.0f64, f64::max);
    let scale = a
        .iter()
        .chain(b.iter())
        .map(|v| v.abs())
        .fold(0.0f64, f64::max)
        .max(1e-12);
    dev / scale
}

// ---------------------------------------------------------------------------
// Trajectory statistics
// ---------------------------------------------------------------------------

/// Prompt-free layer-1 statistics of the current parameters:
/// `(min_prev_score, logit_gap, slash_score_d1)`.
pub fn stage1_stats(
    params: &ReducedParams,
    config: &DataConfig,
    freqs: &FrequencySequence,
) -> Result<(f64, f64, f64)> {
    let t = layer1_toeplitz(params, config, freqs)?;
    let n = config.n();
    let a = Array2::from_shape_fn((n, n), |(i, j)| if j <= i { t[i - j] } else { 0.0 });
    let s1 = causal_softmax(a.view());
    let mut min_prev = f64::INFINITY;
    let mut gap = f64::INFINITY;
    for i in 1..n {
        min_prev = min_prev.min(s1[(i, i - 1)]);
        let best_other = (0..=i)
            .filter(|&j| j != i - 1)
            .map(|j| t[i - j])
            .fold(f64::NEG_INFINITY, f64::max);
        gap = gap.min(t[1] - best_other);
    }
    let slash = average_slash_score(s1.view(), 1, 0)?;
    Ok((min_prev, gap, slash))
}

fn probe_stats(
    params: &ReducedParams,
    s1: &Array2<f64>,
    config: &DataConfig,
    freqs: &FrequencySequence,
    seed: u64,
    t: usize,
) -> (Vec<f64>, Vec<f64>) {
    let mut feature_scores = vec![0.0; config.k];
    let mut logit_sums = vec![0.0; config.k];
    let mut logit_counts = vec![0usize; config.k];
    for k in 0..config.k {
        for p in 0..PROBES_PER_FEATURE {
            let idx = ((t as u64) << 32) | ((k as u64) << 16) | p as u64;
            let mut rng = derive_rng(seed, "probe", idx);
            let task = sample_task(&mut rng, config);
            let prompt = sample_prompt_with_question(&mut rng, &task, config, k);
            let embedding = embed(&prompt, config);
            let sample = Sample { task, prompt, embedding };
            let ev = eval_prompt(params, s1, &sample, config, freqs);
            let mut by_feature = vec![0.0; config.k];
            for i in 0..config.n_in {
                by_feature[sample.prompt.inputs[i]] += ev.s2[2 * i + 1];
            }
            feature_scores[k] += by_feature[k];
            if k == 0 {
                for i in 0..config.n_in {
                    logit_sums[sample.prompt.inputs[i]] += ev.u[2 * i + 1];
                    logit_counts[sample.prompt.inputs[i]] += 1;
                }
            }
        }
    }
    for s in feature_scores.iter_mut() {
        *s /= PROBES_PER_FEATURE as f64;
    }
    let feature_logit_means = logit_sums
        .iter()
        .zip(&logit_counts)
        .map(|(&s, &c)| if c > 0 { s / c as f64 } else { 0.0 })
        .collect();
    (feature_logit_means, feature_scores)
}

fn take_snapshot(
    t: usize,
    stage: u8,
    params: &ReducedParams,
    config: &DataConfig,
    freqs: &FrequencySequence,
    train: &TrainConfig,
) -> Result<DynamicsSnapshot> {
    let (min_prev_score, logit_gap, slash_score_d1) = stage1_stats(params, config, freqs)?;
    let s1 = s1_for(params, config, freqs)?;
    let (feature_logit_means, feature_scores) =
        probe_stats(params, &s1, config, freqs, train.seed, t);
    let batch = sample_batch(
        train.seed,
        "probe-loss",
        (t as u64) << 32,
        train.batch_size,
        config,
    );
    let loss_estimate = loss_on_batch(params, &batch, config, freqs)?;
    Ok(DynamicsSnapshot {
        t,
        stage,
        min_prev_score,
        logit_gap,
        slash_score_d1,
        loss_estimate,
        feature_logit_means,
        feature_scores,
    })
}

// ---------------------------------------------------------------------------
// The two-stage loop
// ---------------------------------------------------------------------------

fn check_finite(m: &Array2<f64>, step: usize, what: &str) -> Result<()> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Diverged { step, what: format!("{what} has non-finite entries") });
    }
    Ok(())
}

/// Run the two-stage training loop and return the final parameters with
/// the tracked trajectory.
pub fn two_stage_gd(
    train: &TrainConfig,
    config: &DataConfig,
    freqs: &FrequencySequence,
) -> Result<TrainResult> {
    train.validate()?;
    config.validate()?;
    let n = config.n();

    let mut warnings = Vec::new();
    let pulse = pulse_check(freqs, n, 1.0)?;
    if pulse.eps_fn > pulse.c1.abs().max(1.0) / n as f64 {
        warnings.push(format!(
            "cone band violates the pulse condition: eps_fn = {:.3e} with C1 = {:.3}",
            pulse.eps_fn, pulse.c1
        ));
    }

    let mut params = ReducedParams::init(config);
    let mut snapshots = Vec::new();
    snapshots.push(take_snapshot(0, 1, &params, config, freqs, train)?);

    // Stage I: train W1, W2 frozen at the identity.
    let mut step = 0usize;
    for t in 1..=train.tau1 {
        step = t;
        let batch = sample_batch(train.seed, "train", (t as u64) << 32, train.batch_size, config);
        let g = grad_w1(&params, &batch, config, freqs)?;
        check_finite(&g, t, "layer-1 gradient")?;
        params.w1 = &params.w1 - &(g * train.eta1);
        check_finite(&params.w1, t, "layer-1 block")?;

        let (min_prev, _, _) = stage1_stats(&params, config, freqs)?;
        let stop = min_prev >= 1.0 - train.eps1;
        if t % train.snapshot_every == 0 || stop || t == train.tau1 {
            snapshots.push(take_snapshot(t, 1, &params, config, freqs, train)?);
        }
        if stop {
            break;
        }
    }
    let stage1_end = step;

    // Stage II: train W2, W1 frozen.
    for s in 1..=train.tau2 {
        let t = stage1_end + s;
        let batch = sample_batch(train.seed, "train", (t as u64) << 32, train.batch_size, config);
        let g = grad_w2(&params, &batch, config, freqs)?;
        check_finite(&g, t, "layer-2 gradient")?;
        params.w2 = &params.w2 - &(g * train.eta2);
        check_finite(&params.w2, t, "layer-2 block")?;

        if s % train.snapshot_every == 0 || s == train.tau2 {
            let snap = take_snapshot(t, 2, &params, config, freqs, train)?;
            let done = snap
                .feature_scores
                .iter()
                .all(|&sk| (1.0 - sk) * (1.0 - sk) <= train.eps2);
            snapshots.push(snap);
            if done {
                break;
            }
        }
    }

    Ok(TrainResult { params, snapshots, stage1_end, warnings })
}
