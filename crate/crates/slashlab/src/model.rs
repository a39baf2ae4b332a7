//! The reduced two-layer disentangled transformer with RoPE, plus the
//! literal full-architecture forward pass used as an independent oracle.
//!
//! The reduced model keeps only the two trainable query blocks. Layer 1
//! sees the cone axis alone, so its logits form a causal Toeplitz matrix
//! that is identical across prompts of equal length; layer 2 matches the
//! question against the layer-1 aggregates on the semantic subspace and
//! reads the prediction off the label column.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2};

use crate::data::{DataConfig, EmbeddingMatrix};
use crate::error::{Error, Result};
use crate::rope::{apply_rope, FrequencySequence};

/// Trainable blocks of the reduced model: the layer-1 query block acting
/// on the cone subspace and the layer-2 query block acting on the
/// semantic subspace.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedParams {
    /// `d_b x d_b`.
    pub w1: Array2<f64>,
    /// `(d_x + 2) x (d_x + 2)`.
    pub w2: Array2<f64>,
}

impl ReducedParams {
    /// Training initialization: zero layer-1 block, identity layer-2 block.
    pub fn init(config: &DataConfig) -> Self {
        Self {
            w1: Array2::zeros((config.d_b, config.d_b)),
            w2: Array2::eye(config.d_x + 2),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.w1.iter().chain(self.w2.iter()).all(|v| v.is_finite())
    }
}

/// The fixed layer-1 key image of the cone axis, `(1, 0, 1, 0, ...)`.
pub fn key_cone_vector(d_b: usize) -> Array1<f64> {
    Array1::from_shape_fn(d_b, |i| if i % 2 == 0 { 1.0 } else { 0.0 })
}

fn check_cone_band(config: &DataConfig, freqs: &FrequencySequence) -> Result<()> {
    if 2 * freqs.cone_band_len() != config.d_b {
        return Err(Error::invalid(format!(
            "cone band has {} frequencies, expected d_b/2 = {}",
            freqs.cone_band_len(),
            config.d_b / 2
        )));
    }
    Ok(())
}

fn check_semantic_band(config: &DataConfig, freqs: &FrequencySequence) -> Result<()> {
    let sem = freqs.len() - freqs.cone_band_len();
    if 2 * sem != config.d_x + 2 {
        return Err(Error::invalid(format!(
            "semantic band has {sem} frequencies, expected (d_x+2)/2 = {}",
            (config.d_x + 2) / 2
        )));
    }
    Ok(())
}

/// Layer-1 logits on the causal diagonals: entry `delta` is the logit at
/// offset `i - j = delta`. Layer-1 attention is content-free, so these
/// values fully determine it for any prompt of length `n`.
pub fn layer1_toeplitz(
    params: &ReducedParams,
    config: &DataConfig,
    freqs: &FrequencySequence,
) -> Result<Vec<f64>> {
    check_cone_band(config, freqs)?;
    let n = config.n();
    let cone = freqs.cone_band();
    let key = key_cone_vector(config.d_b);
    // t_delta = c^T W1 R(-delta) key
    let query: Array1<f64> = params.w1.t().dot(&config.cone_axis);
    let q = query.as_slice().expect("contiguous");
    (0..n as i64)
        .map(|delta| {
            let rk = apply_rope(key.as_slice().unwrap(), -delta, &cone)?;
            Ok(q.iter().zip(&rk).map(|(a, b)| a * b).sum())
        })
        .collect()
}

/// Full `N x N` layer-1 logit matrix. Entries above the diagonal are
/// masked: they are stored as zero and never read downstream.
pub fn layer1_logits(
    params: &ReducedParams,
    config: &DataConfig,
    freqs: &FrequencySequence,
) -> Result<Array2<f64>> {
    let t = layer1_toeplitz(params, config, freqs)?;
    let n = config.n();
    Ok(Array2::from_shape_fn((n, n), |(i, j)| {
        if j <= i {
            t[i - j]
        } else {
            0.0
        }
    }))
}

/// Row-wise causal softmax: row `i` is a distribution over columns
/// `0..=i`, computed with the row max subtracted before exponentiation.
pub fn causal_softmax(a: ArrayView2<'_, f64>) -> Array2<f64> {
    let n = a.nrows();
    let mut s = Array2::zeros((n, n));
    for i in 0..n {
        let row = a.row(i);
        let max = row.iter().take(i + 1).copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for j in 0..=i {
            let e = (row[j] - max).exp();
            s[(i, j)] = e;
            total += e;
        }
        for j in 0..=i {
            s[(i, j)] /= total;
        }
    }
    s
}

/// Rotated question rows: the layer-2 logit is
/// `u_i = q2^T R(i - N) m_i` with `q2 = E_q^{x,y} W2`, which is evaluated
/// as the plain inner product of `R(N - i) q2` (row `i` here, positions
/// 1-based) with the layer-1 aggregate `m_i`.
pub(crate) fn question_rotations(
    params: &ReducedParams,
    e: &EmbeddingMatrix,
    freqs: &FrequencySequence,
) -> Result<Array2<f64>> {
    let n = e.n();
    let xy = e.xy();
    let q2: Array1<f64> = xy.row(n - 1).dot(&params.w2);
    let sem = freqs.semantic_band();
    let width = q2.len();
    let mut out = Array2::zeros((n, width));
    for i in 0..n {
        let offset = n as i64 - (i as i64 + 1);
        let rotated = apply_rope(q2.as_slice().unwrap(), offset, &sem)?;
        out.row_mut(i).assign(&Array1::from(rotated));
    }
    Ok(out)
}

/// Layer-2 logits of the question row: `u_i` scores how well the rotated
/// question matches the layer-1 output at position `i`.
pub fn layer2_logits(
    params: &ReducedParams,
    s1: ArrayView2<'_, f64>,
    e: &EmbeddingMatrix,
    freqs: &FrequencySequence,
) -> Result<Array1<f64>> {
    let config_dx2 = e.xy().ncols();
    let sem = freqs.len() - freqs.cone_band_len();
    if 2 * sem != config_dx2 {
        return Err(Error::invalid(format!(
            "semantic band has {sem} frequencies, expected {}",
            config_dx2 / 2
        )));
    }
    if s1.nrows() != e.n() || s1.ncols() != e.n() {
        return Err(Error::invalid("score matrix does not match prompt length"));
    }
    let m = s1.dot(&e.xy());
    let rotq = question_rotations(params, e, freqs)?;
    Ok(Array1::from_iter(
        (0..e.n()).map(|i| rotq.row(i).dot(&m.row(i))),
    ))
}

/// Stable softmax of a full logit vector.
fn softmax(u: ArrayView1<'_, f64>) -> Array1<f64> {
    let max = u.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out = u.mapv(|v| (v - max).exp());
    let total = out.sum();
    out.mapv_inplace(|v| v / total);
    out
}

/// Turn layer-2 logits into attention scores, per-feature aggregates, and
/// the prediction read off the label column.
pub fn predict(
    u: ArrayView1<'_, f64>,
    e: &EmbeddingMatrix,
    n_features: usize,
) -> (Array1<f64>, Vec<f64>, f64) {
    let s2 = softmax(u);
    let y_hat = s2.dot(&e.y_col());
    let mut by_feature = vec![0.0; n_features];
    let n_in = (e.n() - 1) / 2;
    for i in 0..n_in {
        by_feature[e.feature_of(i)] += s2[2 * i + 1];
    }
    (s2, by_feature, y_hat)
}

/// Full attention state of one reduced-model forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// Layer-1 logits (causal part meaningful, upper triangle masked).
    pub a: Array2<f64>,
    /// Layer-1 scores, row-stochastic over the causal part.
    pub s1: Array2<f64>,
    /// Layer-2 logits of the question row.
    pub u: Array1<f64>,
    /// Layer-2 scores.
    pub s2: Array1<f64>,
    /// Per-feature sums of `s2` over label positions.
    pub s2_by_feature: Vec<f64>,
    /// Predicted response for the question.
    pub y_hat: f64,
}

/// Run the reduced model end to end on one embedded prompt.
pub fn forward(
    params: &ReducedParams,
    e: &EmbeddingMatrix,
    config: &DataConfig,
    freqs: &FrequencySequence,
) -> Result<ForwardTrace> {
    check_semantic_band(config, freqs)?;
    let a = layer1_logits(params, config, freqs)?;
    let s1 = causal_softmax(a.view());
    let u = layer2_logits(params, s1.view(), e, freqs)?;
    let (s2, s2_by_feature, y_hat) = predict(u.view(), e, config.k);
    Ok(ForwardTrace { a, s1, u, s2, s2_by_feature, y_hat })
}

/// Layer-1 query/key rows of the reduced head embedded in the full
/// `d`-dimensional space, for analyses that work on raw Q/K matrices.
pub fn layer1_qk(
    params: &ReducedParams,
    config: &DataConfig,
) -> (Array2<f64>, Array2<f64>) {
    let n = config.n();
    let d = config.dim();
    let query: Array1<f64> = params.w1.t().dot(&config.cone_axis);
    let key = key_cone_vector(config.d_b);
    let mut q = Array2::zeros((n, d));
    let mut k = Array2::zeros((n, d));
    for i in 0..n {
        q.slice_mut(s![i, ..config.d_b]).assign(&query);
        k.slice_mut(s![i, ..config.d_b]).assign(&key);
    }
    (q, k)
}

/// Attention state of the literal disentangled-transformer forward pass.
#[derive(Debug, Clone)]
pub struct FullTrace {
    pub s1: Array2<f64>,
    /// Layer-2 score row of the question position.
    pub s2_question: Array1<f64>,
    /// Final `N x d` output of the network.
    pub output: Array2<f64>,
    pub y_hat: f64,
}

fn rope_rows(m: &Array2<f64>, freqs: &FrequencySequence) -> Result<Array2<f64>> {
    let mut out = Array2::zeros(m.dim());
    for (i, row) in m.rows().into_iter().enumerate() {
        let rotated = apply_rope(row.as_slice().expect("contiguous"), i as i64 + 1, freqs)?;
        out.row_mut(i).assign(&Array1::from(rotated));
    }
    Ok(out)
}

fn masked_softmax(logits: &Array2<f64>) -> Array2<f64> {
    causal_softmax(logits.view())
}

/// Literal two-layer disentangled transformer: parameters are embedded
/// into the sparse full matrices, layers concatenate the residual with
/// the attention output, and the frequency sequence doubles per layer.
/// Serves as the oracle for the reduced path.
pub fn full_disentangled_forward(
    e: &EmbeddingMatrix,
    freqs: &FrequencySequence,
    params: &ReducedParams,
    config: &DataConfig,
) -> Result<FullTrace> {
    check_cone_band(config, freqs)?;
    check_semantic_band(config, freqs)?;
    let n = e.n();
    let d = config.dim();
    let d_b = config.d_b;

    // Layer 1 weights: only the cone query block and the fixed key map
    // are nonzero; values are the identity.
    let mut w_q1 = Array2::<f64>::zeros((d, d));
    w_q1.slice_mut(s![..d_b, ..d_b]).assign(&params.w1);
    let mut w_k1 = Array2::<f64>::zeros((d, d));
    let key = key_cone_vector(d_b);
    for i in 0..d_b {
        for j in 0..d_b {
            w_k1[(i, j)] = config.cone_axis[i] * key[j];
        }
    }

    let e_full = e.full().to_owned();
    let q1 = rope_rows(&e_full.dot(&w_q1), freqs)?;
    let k1 = rope_rows(&e_full.dot(&w_k1), freqs)?;
    let s1 = masked_softmax(&q1.dot(&k1.t()));
    let csa1 = s1.dot(&e_full);

    // H1 = [E, CSA(E)], layer-2 frequencies are the doubled sequence.
    let mut h1 = Array2::<f64>::zeros((n, 2 * d));
    h1.slice_mut(s![.., ..d]).assign(&e_full);
    h1.slice_mut(s![.., d..]).assign(&csa1);
    let doubled: Vec<f64> = freqs
        .values()
        .iter()
        .chain(freqs.values().iter())
        .copied()
        .collect();
    let freqs2 = FrequencySequence::new(doubled, freqs.cone_band_len())?;

    let mut w_q2 = Array2::<f64>::zeros((2 * d, 2 * d));
    w_q2.slice_mut(s![d_b..d, d_b..d]).assign(&params.w2);
    let mut w_k2 = Array2::<f64>::zeros((2 * d, 2 * d));
    for i in 0..d {
        w_k2[(d + i, i)] = 1.0;
    }

    let q2 = rope_rows(&h1.dot(&w_q2), &freqs2)?;
    let k2 = rope_rows(&h1.dot(&w_k2), &freqs2)?;
    let s2 = masked_softmax(&q2.dot(&k2.t()));
    let csa2 = s2.dot(&h1);

    // W_O picks the first d columns of CSA(H1), so the output is S2 * E.
    let output = csa2.slice(s![.., ..d]).to_owned();
    let y_hat = output[(n - 1, d - 1)];
    Ok(FullTrace {
        s1,
        s2_question: s2.row(n - 1).to_owned(),
        output,
        y_hat,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{derive_rng, embed, sample_prompt, sample_task, Prompt};
    use crate::rope::pulse_frequencies;
    use rand::Rng;

    fn small_setup(seed: u64) -> (DataConfig, FrequencySequence) {
        let config = DataConfig::new(2, 4, 4, 8).unwrap();
        // cone band: pulse with m = d_b/2 = 4, horizon n = 9 needs 2m+1 > 2N;
        // use explicit small frequencies instead to stay clear of aliasing.
        let mut values: Vec<f64> = (1..=4).map(|s| 2.0 * std::f64::consts::PI * s as f64 / 19.0).collect();
        values.reverse();
        let semantic = vec![3e-4, 2e-4, 1e-4];
        let freqs = FrequencySequence::new(values, 4)
            .unwrap()
            .extend_semantic(&semantic)
            .unwrap();
        let _ = seed;
        (config, freqs)
    }

    fn random_params(config: &DataConfig, seed: u64) -> ReducedParams {
        let mut rng = derive_rng(seed, "params", 0);
        ReducedParams {
            w1: Array2::from_shape_fn((config.d_b, config.d_b), |_| rng.random::<f64>() - 0.5),
            w2: Array2::from_shape_fn((config.d_x + 2, config.d_x + 2), |_| {
                rng.random::<f64>() - 0.5
            }),
        }
    }

    #[test]
    fn zero_w1_means_zero_logits() {
        let (config, freqs) = small_setup(0);
        let params = ReducedParams::init(&config);
        let t = layer1_toeplitz(&params, &config, &freqs).unwrap();
        assert!(t.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn logits_are_toeplitz() {
        let (config, freqs) = small_setup(1);
        let params = random_params(&config, 1);
        let a = layer1_logits(&params, &config, &freqs).unwrap();
        let n = config.n();
        for i in 0..n - 1 {
            for j in 0..=i {
                assert!(
                    (a[(i, j)] - a[(i + 1, j + 1)]).abs() < 1e-12,
                    "toeplitz violated at ({i},{j})"
                );
            }
        }
    }

    #[test]
    fn band_length_mismatch_is_rejected() {
        let (config, _) = small_setup(2);
        let params = ReducedParams::init(&config);
        let wrong = pulse_frequencies(3, 2).unwrap();
        assert!(layer1_toeplitz(&params, &config, &wrong).is_err());
    }

    #[test]
    fn causal_softmax_uniform_rows() {
        let a = Array2::<f64>::zeros((5, 5));
        let s = causal_softmax(a.view());
        for i in 0..5 {
            for j in 0..=i {
                assert!((s[(i, j)] - 1.0 / (i + 1) as f64).abs() < 1e-14);
            }
            for j in i + 1..5 {
                assert_eq!(s[(i, j)], 0.0);
            }
        }
    }

    #[test]
    fn causal_softmax_saturates() {
        let mut a = Array2::<f64>::zeros((2, 2));
        a[(1, 0)] = 50.0;
        let s = causal_softmax(a.view());
        assert!(s[(1, 0)] >= 1.0 - 2e-22);
    }

    #[test]
    fn causal_softmax_shift_invariant() {
        let mut a = Array2::<f64>::zeros((3, 3));
        a[(2, 0)] = 0.3;
        a[(2, 1)] = -1.2;
        a[(2, 2)] = 2.0;
        let s_before = causal_softmax(a.view());
        for j in 0..3 {
            a[(2, j)] += 123.456;
        }
        let s_after = causal_softmax(a.view());
        for j in 0..3 {
            assert!((s_before[(2, j)] - s_after[(2, j)]).abs() < 1e-14);
        }
    }

    #[test]
    fn causal_softmax_handles_extreme_logits() {
        let mut a = Array2::<f64>::zeros((3, 3));
        a[(2, 0)] = 700.0;
        a[(2, 1)] = -700.0;
        a[(2, 2)] = 0.0;
        let s = causal_softmax(a.view());
        let sum: f64 = (0..3).map(|j| s[(2, j)]).sum();
        assert!((sum - 1.0).abs() < 1e-10);
        assert!(s.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn zero_w2_means_zero_layer2_logits() {
        let (config, freqs) = small_setup(3);
        let mut params = random_params(&config, 3);
        params.w2.fill(0.0);
        let mut rng = derive_rng(3, "data", 0);
        let task = sample_task(&mut rng, &config);
        let prompt = sample_prompt(&mut rng, &task, &config);
        let e = embed(&prompt, &config);
        let s1 = causal_softmax(layer1_logits(&params, &config, &freqs).unwrap().view());
        let u = layer2_logits(&params, s1.view(), &e, &freqs).unwrap();
        assert!(u.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn one_hot_s1_marks_matching_features() {
        // K = 1, identity W2, zero semantic frequencies, hard one-hot S1.
        let config = DataConfig::new(1, 4, 2, 4).unwrap();
        let mut values: Vec<f64> = (1..=2).map(|s| 2.0 * std::f64::consts::PI * s as f64 / 19.0).collect();
        values.reverse();
        let freqs = FrequencySequence::new(values, 2)
            .unwrap()
            .extend_semantic(&[0.0, 0.0])
            .unwrap();
        let params = ReducedParams::init(&config);
        let mut rng = derive_rng(5, "data", 1);
        let task = sample_task(&mut rng, &config);
        let prompt = sample_prompt(&mut rng, &task, &config);
        let e = embed(&prompt, &config);
        let n = config.n();
        let mut s1 = Array2::<f64>::zeros((n, n));
        s1[(0, 0)] = 1.0;
        for i in 1..n {
            s1[(i, i - 1)] = 1.0;
        }
        let u = layer2_logits(&params, s1.view(), &e, &freqs).unwrap();
        for i in 1..=config.n_in {
            assert!((u[2 * i - 1] - 1.0).abs() < 1e-12, "label row {i}");
        }
        for i in 1..config.n_in {
            assert!(u[2 * i].abs() < 1e-12, "input row after label {i}");
        }
        // row 1 attends to itself and sees the question feature exactly
        assert!((u[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn predict_reads_label_column() {
        let (config, freqs) = small_setup(7);
        let params = random_params(&config, 7);
        let mut rng = derive_rng(7, "data", 2);
        let task = sample_task(&mut rng, &config);
        let prompt = sample_prompt(&mut rng, &task, &config);
        let e = embed(&prompt, &config);
        let trace = forward(&params, &e, &config, &freqs).unwrap();

        // one-hot scores at a label position recover that label
        let n = config.n();
        let mut u = Array1::from_elem(n, -1e3);
        u[3] = 1e3; // label row of input 2 (0-based index 1)
        let (_, _, y) = predict(u.view(), &e, config.k);
        assert!((y - prompt.labels[1]).abs() < 1e-12);

        // uniform scores average the label column
        let u = Array1::zeros(n);
        let (s2, by_feature, y) = predict(u.view(), &e, config.k);
        let mean = prompt.labels.iter().sum::<f64>() / n as f64;
        assert!((y - mean).abs() < 1e-12);
        assert!((s2.sum() - 1.0).abs() < 1e-12);
        let total: f64 = by_feature.iter().sum();
        assert!(total <= 1.0 + 1e-12);

        // by-feature sums match the index sets
        let sets = prompt.feature_sets(config.k);
        for (k, set) in sets.iter().enumerate() {
            let expect: f64 = set.iter().map(|&i| trace.s2[2 * i + 1]).sum();
            assert!((trace.s2_by_feature[k] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn layer1_logits_match_raw_rotated_product() {
        // independent route: embed the block into full-width Q/K rows and
        // evaluate the rotated inner products pair by pair
        let (config, freqs) = small_setup(10);
        let params = random_params(&config, 10);
        let a = layer1_logits(&params, &config, &freqs).unwrap();
        let (q, k) = layer1_qk(&params, &config);
        let n = config.n();
        for i in 0..n {
            for j in 0..=i {
                let direct = crate::rope::relative_logit(
                    q.row(i).as_slice().unwrap(),
                    k.row(j).as_slice().unwrap(),
                    i as i64 + 1,
                    j as i64 + 1,
                    &freqs,
                )
                .unwrap();
                assert!(
                    (a[(i, j)] - direct).abs() < 1e-12,
                    "logit ({i},{j}): {} vs {direct}",
                    a[(i, j)]
                );
            }
        }
    }

    #[test]
    fn prediction_matches_two_sided_rotation_transcription() {
        // literal composition: rotate the question row at position N and
        // every aggregate row at its own position, then softmax * labels
        let (config, freqs) = small_setup(19);
        let params = random_params(&config, 19);
        let mut rng = derive_rng(19, "data", 9);
        let task = sample_task(&mut rng, &config);
        let prompt = sample_prompt(&mut rng, &task, &config);
        let e = embed(&prompt, &config);
        let trace = forward(&params, &e, &config, &freqs).unwrap();

        let n = e.n();
        let sem = freqs.semantic_band();
        let q2: Array1<f64> = e.xy().row(n - 1).dot(&params.w2);
        let q_rot = apply_rope(q2.as_slice().unwrap(), n as i64, &sem).unwrap();
        let m = trace.s1.dot(&e.xy());
        let mut u = Array1::zeros(n);
        for i in 0..n {
            let m_rot = apply_rope(m.row(i).as_slice().unwrap(), i as i64 + 1, &sem).unwrap();
            u[i] = q_rot.iter().zip(&m_rot).map(|(a, b)| a * b).sum();
        }
        let max = u.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps = u.mapv(|v| (v - max).exp());
        let y_hat = exps.dot(&e.y_col()) / exps.sum();
        assert!(
            (trace.y_hat - y_hat).abs() < 1e-12,
            "{} vs {y_hat}",
            trace.y_hat
        );
        for i in 0..n {
            assert!((trace.u[i] - u[i]).abs() < 1e-12, "logit {i}");
        }
    }

    #[test]
    fn reduced_matches_full_oracle_at_init() {
        let (config, freqs) = small_setup(11);
        let params = ReducedParams::init(&config);
        let mut rng = derive_rng(11, "data", 3);
        let task = sample_task(&mut rng, &config);
        let prompt = sample_prompt(&mut rng, &task, &config);
        let e = embed(&prompt, &config);
        let reduced = forward(&params, &e, &config, &freqs).unwrap();
        let full = full_disentangled_forward(&e, &freqs, &params, &config).unwrap();
        assert!((reduced.y_hat - full.y_hat).abs() < 1e-10);
        let max_dev = (&reduced.s1 - &full.s1)
            .iter()
            .map(|v| v.abs())
            .fold(0.0f64, f64::max);
        assert!(max_dev < 1e-10);
    }

    #[test]
    fn reduced_matches_full_oracle_random_instances() {
        for trial in 0..20u64 {
            let n_in = 2 + (trial % 7) as usize; // up to 8
            let config = DataConfig::new(2, n_in, 4, 8).unwrap();
            let mut values: Vec<f64> =
                (1..=4).map(|s| 2.0 * std::f64::consts::PI * s as f64 / 41.0).collect();
            values.reverse();
            let freqs = FrequencySequence::new(values, 4)
                .unwrap()
                .extend_semantic(&[3e-4, 2e-4, 1e-4])
                .unwrap();
            let params = random_params(&config, 100 + trial);
            let mut rng = derive_rng(200 + trial, "data", trial);
            let task = sample_task(&mut rng, &config);
            let prompt = sample_prompt(&mut rng, &task, &config);
            let e = embed(&prompt, &config);
            let reduced = forward(&params, &e, &config, &freqs).unwrap();
            let full = full_disentangled_forward(&e, &freqs, &params, &config).unwrap();
            assert!(
                (reduced.y_hat - full.y_hat).abs() < 1e-10,
                "trial {trial}: {} vs {}",
                reduced.y_hat,
                full.y_hat
            );
            let s1_dev = (&reduced.s1 - &full.s1)
                .iter()
                .map(|v| v.abs())
                .fold(0.0f64, f64::max);
            assert!(s1_dev < 1e-10, "trial {trial}: s1 deviation {s1_dev}");
            let s2_dev = (&reduced.s2 - &full.s2_question)
                .iter()
                .map(|v| v.abs())
                .fold(0.0f64, f64::max);
            assert!(s2_dev < 1e-10, "trial {trial}: s2 deviation {s2_dev}");
        }
    }

    #[test]
    fn s1_is_content_free() {
        let (config, freqs) = small_setup(13);
        let params = random_params(&config, 13);
        let mut rng = derive_rng(13, "data", 4);
        let task = sample_task(&mut rng, &config);
        let p1 = sample_prompt(&mut rng, &task, &config);
        let p2 = sample_prompt(&mut rng, &task, &config);
        let t1 = forward(&params, &embed(&p1, &config), &config, &freqs).unwrap();
        let t2 = forward(&params, &embed(&p2, &config), &config, &freqs).unwrap();
        assert_eq!(t1.s1, t2.s1);
    }

    #[test]
    fn feature_relabeling_leaves_prediction_unchanged() {
        let (config, freqs) = small_setup(17);
        let params = random_params(&config, 17);
        let mut rng = derive_rng(17, "data", 5);
        let task = sample_task(&mut rng, &config);
        let prompt = sample_prompt(&mut rng, &task, &config);

        // relabel: store the same feature vectors under swapped names
        let mut relabeled_config = config.clone();
        for j in 0..config.d_x {
            relabeled_config.features.swap((0, j), (1, j));
        }
        let relabeled_prompt = Prompt {
            inputs: prompt.inputs.iter().map(|&k| 1 - k).collect(),
            labels: prompt.labels.clone(),
            question: 1 - prompt.question,
        };

        let t1 = forward(&params, &embed(&prompt, &config), &config, &freqs).unwrap();
        let t2 = forward(
            &params,
            &embed(&relabeled_prompt, &relabeled_config),
            &relabeled_config,
            &freqs,
        )
        .unwrap();
        assert_eq!(t1.y_hat.to_bits(), t2.y_hat.to_bits());
        let mut swapped_scores = t2.s2_by_feature.clone();
        swapped_scores.swap(0, 1);
        for (a, b) in t1.s2_by_feature.iter().zip(&swapped_scores) {
            assert!((a - b).abs() < 1e-14);
        }
    }
}
