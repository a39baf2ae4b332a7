//! Spectral power and subspace-alignment metrics.
//!
//! Low-rankness of a matrix is summarized by the per-direction power
//! ratios `r_l = sigma_l^2 / sum_i sigma_i^2` and the effective rank
//! `R_tau`, the smallest number of directions capturing a fraction `tau`
//! of the total squared-singular-value power. Alignment of a vector with
//! the leading subspaces of a weight matrix is measured analogously
//! through the scores `(sigma_i * <v_i, x>)^2`. The module also carries
//! RMS normalization, dominant-direction and relative-variation probes,
//! and the power-threshold low-rank truncation used for weight
//! compression.

use nalgebra::DMatrix;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};

/// Default epsilon used by [`rmsn`] callers throughout the crate.
pub const RMSN_EPS: f64 = 1e-6;

/// Comparisons against the power threshold allow this much slack so that
/// exact-boundary cases (for example 19/20 >= 0.95) are not lost to
/// floating-point accumulation.
const TAU_SLACK: f64 = 1e-12;

/// Singular value decomposition `X = left * diag(sigma) * right_t`,
/// singular values sorted in descending order.
#[derive(Debug, Clone)]
pub struct Svd {
    pub left: Array2<f64>,
    pub sigma: Array1<f64>,
    pub right_t: Array2<f64>,
}

/// Compute the SVD of a matrix, deterministically ordered.
pub fn svd(x: ArrayView2<'_, f64>) -> Result<Svd> {
    let (n, m) = x.dim();
    if n == 0 || m == 0 {
        return Err(Error::invalid("svd input must be nonempty"));
    }
    let mat = DMatrix::from_row_iterator(n, m, x.iter().copied());
    let decomp = mat.svd(true, true);
    let u = decomp.u.expect("left singular vectors requested");
    let vt = decomp.v_t.expect("right singular vectors requested");
    let s = decomp.singular_values;
    let r = s.len();

    let mut order: Vec<usize> = (0..r).collect();
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]).then(a.cmp(&b)));

    let left = Array2::from_shape_fn((n, r), |(i, j)| u[(i, order[j])]);
    let sigma = Array1::from_iter(order.iter().map(|&j| s[j]));
    let right_t = Array2::from_shape_fn((r, m), |(i, j)| vt[(order[i], j)]);
    Ok(Svd { left, sigma, right_t })
}

/// Power ratios and effective rank of a matrix spectrum.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct SpectralReport {
    /// Singular values, descending.
    pub singular_values: Vec<f64>,
    /// `r_l = sigma_l^2 / sum sigma_i^2`, descending.
    pub power_ratios: Vec<f64>,
    /// Smallest `l` (1-based) with cumulative ratio >= tau.
    pub effective_rank: usize,
    pub tau: f64,
}

fn prefix_rank(ratios: &[f64], tau: f64) -> usize {
    let mut acc = 0.0;
    for (i, &r) in ratios.iter().enumerate() {
        acc += r;
        if acc >= tau - TAU_SLACK {
            return i + 1;
        }
    }
    ratios.len()
}

fn check_tau(tau: f64) -> Result<()> {
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(Error::invalid(format!("tau = {tau} must lie in (0, 1]")));
    }
    Ok(())
}

/// Spectral power report of a matrix at threshold `tau`.
pub fn spectral_report(x: ArrayView2<'_, f64>, tau: f64) -> Result<SpectralReport> {
    check_tau(tau)?;
    let decomp = svd(x)?;
    let total: f64 = decomp.sigma.iter().map(|s| s * s).sum();
    if total == 0.0 {
        return Err(Error::DegenerateSpectrum);
    }
    let power_ratios: Vec<f64> = decomp.sigma.iter().map(|s| s * s / total).collect();
    let effective_rank = prefix_rank(&power_ratios, tau);
    Ok(SpectralReport {
        singular_values: decomp.sigma.to_vec(),
        power_ratios,
        effective_rank,
        tau,
    })
}

/// Alignment of a vector (or of a set of row vectors) with the singular
/// directions of a weight matrix.
///
/// `selection[k]` names the direction holding the `k`-th ratio: with a
/// bias, 0 is the bias slot and `i + 1` the `i`-th (0-based, by
/// descending singular value) weight direction; without a bias the
/// indices are plain 0-based weight directions. A supplied bias is
/// always pinned to position 0, so `aligned_ratios` is guaranteed
/// descending only from position 1 onward in that case.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct AlignmentReport {
    pub aligned_ratios: Vec<f64>,
    pub aligned_rank: usize,
    pub selection: Vec<usize>,
    pub has_bias: bool,
    pub tau: f64,
}

fn alignment_from_scores(weight_scores: Vec<f64>, bias_score: Option<f64>, tau: f64) -> Result<AlignmentReport> {
    let has_bias = bias_score.is_some();
    let offset = has_bias as usize;
    let total: f64 = weight_scores.iter().sum::<f64>() + bias_score.unwrap_or(0.0);
    if total == 0.0 {
        return Err(Error::DegenerateSpectrum);
    }

    let mut order: Vec<usize> = (0..weight_scores.len()).collect();
    order.sort_by(|&a, &b| weight_scores[b].total_cmp(&weight_scores[a]).then(a.cmp(&b)));

    let mut selection = Vec::with_capacity(weight_scores.len() + offset);
    let mut aligned_ratios = Vec::with_capacity(weight_scores.len() + offset);
    if let Some(b) = bias_score {
        selection.push(0);
        aligned_ratios.push(b / total);
    }
    for &i in &order {
        selection.push(i + offset);
        aligned_ratios.push(weight_scores[i] / total);
    }
    let aligned_rank = prefix_rank(&aligned_ratios, tau);
    Ok(AlignmentReport { aligned_ratios, aligned_rank, selection, has_bias, tau })
}

fn weight_scores_for(
    svd_w: &Svd,
    project: impl Fn(ArrayView1<'_, f64>) -> f64,
) -> Vec<f64> {
    (0..svd_w.sigma.len())
        .map(|l| {
            let p = project(svd_w.left.column(l));
            let s = svd_w.sigma[l] * svd_w.sigma[l];
            s * p
        })
        .collect()
}

/// Alignment report of a single vector `x` against the directions of `w`
/// (plus an optional bias direction with unit singular value).
pub fn aligned_report(
    x: ArrayView1<'_, f64>,
    w: ArrayView2<'_, f64>,
    bias: Option<ArrayView1<'_, f64>>,
    tau: f64,
) -> Result<AlignmentReport> {
    check_tau(tau)?;
    if x.len() != w.nrows() {
        return Err(Error::invalid(format!(
            "x has dim {}, weight matrix has {} rows",
            x.len(),
            w.nrows()
        )));
    }
    if let Some(b) = bias {
        if b.len() != x.len() {
            return Err(Error::invalid("bias dimension does not match x"));
        }
    }
    let decomp = svd(w)?;
    let scores = weight_scores_for(&decomp, |v| {
        let d = v.dot(&x);
        d * d
    });
    let bias_score = bias.map(|b| {
        let d = b.dot(&x);
        d * d
    });
    alignment_from_scores(scores, bias_score, tau)
}

/// Alignment report with scores accumulated over the rows of `h`, the
/// extension used for whole-prompt hidden states: each direction's score
/// is `sum_rows (sigma_l * <v_l, h_row>)^2`.
pub fn aligned_report_rows(
    h: ArrayView2<'_, f64>,
    w: ArrayView2<'_, f64>,
    bias: Option<ArrayView1<'_, f64>>,
    tau: f64,
) -> Result<AlignmentReport> {
    check_tau(tau)?;
    if h.ncols() != w.nrows() {
        return Err(Error::invalid(format!(
            "hidden-state dim {} does not match weight rows {}",
            h.ncols(),
            w.nrows()
        )));
    }
    let decomp = svd(w)?;
    let scores = weight_scores_for(&decomp, |v| {
        h.rows().into_iter().map(|row| {
            let d = v.dot(&row);
            d * d
        }).sum()
    });
    let bias_score = bias.map(|b| {
        h.rows().into_iter().map(|row| {
            let d = b.dot(&row);
            d * d
        }).sum()
    });
    alignment_from_scores(scores, bias_score, tau)
}

/// Root-mean-square normalization without a learned gain:
/// `x / sqrt(mean(x^2) + eps)`.
pub fn rmsn(x: ArrayView1<'_, f64>, eps: f64) -> Array1<f64> {
    let n = x.len().max(1);
    let ms = x.iter().map(|v| v * v).sum::<f64>() / n as f64;
    let denom = (ms + eps).sqrt();
    x.mapv(|v| v / denom)
}

/// Index and direction of the singular vector of `w` that captures the
/// most accumulated power over the RMS-normalized token set (rows of
/// `tokens`). Ties go to the smaller index.
pub fn dominant_direction(
    w: ArrayView2<'_, f64>,
    tokens: ArrayView2<'_, f64>,
) -> Result<(Array1<f64>, usize)> {
    if tokens.nrows() == 0 {
        return Err(Error::invalid("token set must be nonempty"));
    }
    if tokens.ncols() != w.nrows() {
        return Err(Error::invalid("token dim does not match weight rows"));
    }
    let decomp = svd(w)?;
    if decomp.sigma.iter().all(|&s| s == 0.0) {
        return Err(Error::DegenerateSpectrum);
    }
    let normalized: Vec<Array1<f64>> = tokens
        .rows()
        .into_iter()
        .map(|t| rmsn(t, RMSN_EPS))
        .collect();
    let mut best = 0usize;
    let mut best_power = f64::NEG_INFINITY;
    for l in 0..decomp.sigma.len() {
        let v = decomp.left.column(l);
        let power: f64 = normalized
            .iter()
            .map(|t| {
                let p = decomp.sigma[l] * v.dot(t);
                p * p
            })
            .sum();
        if power > best_power {
            best_power = power;
            best = l;
        }
    }
    Ok((decomp.left.column(best).to_owned(), best))
}

fn rv_from_projections(projections: &[f64]) -> Result<f64> {
    let n = projections.len() as f64;
    let mean = projections.iter().sum::<f64>() / n;
    if mean.abs() < 1e-12 {
        return Err(Error::DegenerateMean(mean.abs()));
    }
    let var = projections.iter().map(|p| (p - mean) * (p - mean)).sum::<f64>() / n;
    Ok(var.sqrt() / mean.abs())
}

/// Relative variation of token projections onto `direction`:
/// population standard deviation over absolute mean of
/// `<direction, rmsn(token)>`. Small values mean the tokens lie on a
/// cone about the direction.
pub fn relative_variation(
    direction: ArrayView1<'_, f64>,
    tokens: ArrayView2<'_, f64>,
) -> Result<f64> {
    if tokens.nrows() == 0 {
        return Err(Error::invalid("token set must be nonempty"));
    }
    if tokens.ncols() != direction.len() {
        return Err(Error::invalid("token dim does not match direction"));
    }
    let projections: Vec<f64> = tokens
        .rows()
        .into_iter()
        .map(|t| direction.dot(&rmsn(t, RMSN_EPS)))
        .collect();
    rv_from_projections(&projections)
}

/// Low-rank truncation by averaged power.
///
/// Directions of `w` (SVD order, descending singular value) are ranked by
/// `avg_power`; the minimal prefix whose cumulative power reaches `thre`
/// is kept and `w` is rebuilt from the kept directions. When
/// `pinned_bias_slot` is set, `avg_power[0]` belongs to a bias direction
/// that is always kept first and never participates in the
/// reconstruction; `avg_power[l + 1]` then scores weight direction `l`.
/// If more than `rank_thre` weight directions would be kept — or the kept
/// set is the full spectrum — `w` is returned unchanged.
pub fn low_rank_truncate(
    w: ArrayView2<'_, f64>,
    avg_power: &[f64],
    thre: f64,
    rank_thre: usize,
    pinned_bias_slot: bool,
) -> Result<Array2<f64>> {
    if !(thre > 0.0 && thre <= 1.0) {
        return Err(Error::invalid(format!("thre = {thre} must lie in (0, 1]")));
    }
    if rank_thre == 0 {
        return Err(Error::invalid("rank_thre must be >= 1"));
    }
    let total: f64 = avg_power.iter().sum();
    if (total - 1.0).abs() > 1e-6 {
        return Err(Error::invalid(format!(
            "avg_power sums to {total}, expected 1 within 1e-6"
        )));
    }
    let decomp = svd(w)?;
    let r = decomp.sigma.len();
    let offset = pinned_bias_slot as usize;
    if avg_power.len() != r + offset {
        return Err(Error::invalid(format!(
            "avg_power has {} entries, expected {} ({} directions{})",
            avg_power.len(),
            r + offset,
            r,
            if pinned_bias_slot { " + bias slot" } else { "" }
        )));
    }

    // Rank slots by averaged power, bias (slot 0) pinned first.
    let mut order: Vec<usize> = (offset..avg_power.len()).collect();
    order.sort_by(|&a, &b| avg_power[b].total_cmp(&avg_power[a]).then(a.cmp(&b)));
    let ranked: Vec<usize> = (0..offset).chain(order).collect();

    let mut acc = 0.0;
    let mut kept_weights: Vec<usize> = Vec::new();
    let mut reached = false;
    for &slot in &ranked {
        acc += avg_power[slot];
        if slot >= offset {
            kept_weights.push(slot - offset);
        }
        if acc >= thre - TAU_SLACK {
            reached = true;
            break;
        }
    }
    if !reached {
        kept_weights = (0..r).collect();
    }

    if kept_weights.len() > rank_thre || kept_weights.len() == r {
        // Truncating nothing (or refusing to truncate) leaves w untouched.
        return Ok(w.to_owned());
    }

    let (n, m) = w.dim();
    let mut out = Array2::<f64>::zeros((n, m));
    for &l in &kept_weights {
        let s = decomp.sigma[l];
        let u = decomp.left.column(l);
        let vt = decomp.right_t.row(l);
        for i in 0..n {
            for j in 0..m {
                out[(i, j)] += s * u[i] * vt[j];
            }
        }
    }
    Ok(out)
}
