//! Rotary position embeddings: frequency construction, rotation, the
//! pulse condition on the cone band, and the per-frequency decomposition
//! of attention logits.
//!
//! A frequency sequence holds `d/2` angular frequencies. Applying the
//! embedding at position `p` rotates the `l`-th 2-dimensional sub-vector
//! (components `2l-1`, `2l`, 1-based) of a `d`-dimensional vector by the
//! angle `p * theta_l`. Logits built from rotated queries and keys then
//! depend on positions only through their difference.

use crate::error::{Error, Result};

/// Ordered RoPE angular frequencies (radians per unit position).
///
/// The first `cone_band_len` entries act on the cone-axis subspace; the
/// remainder act on the semantic subspace.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencySequence {
    values: Vec<f64>,
    cone_band_len: usize,
}

impl FrequencySequence {
    /// Build a sequence from explicit values.
    pub fn new(values: Vec<f64>, cone_band_len: usize) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("frequency sequence must be nonempty"));
        }
        if cone_band_len > values.len() {
            return Err(Error::invalid(format!(
                "cone_band_len {} exceeds sequence length {}",
                cone_band_len,
                values.len()
            )));
        }
        for (i, &v) in values.iter().enumerate() {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::invalid(format!(
                    "frequency {i} is {v}, must be finite and >= 0"
                )));
            }
        }
        Ok(Self { values, cone_band_len })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Number of frequencies (`d/2`).
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Vector dimension these frequencies rotate (`d`).
    pub fn dim(&self) -> usize {
        2 * self.values.len()
    }

    pub fn cone_band_len(&self) -> usize {
        self.cone_band_len
    }

    /// The first `cone_band_len` frequencies as a standalone sequence.
    pub fn cone_band(&self) -> FrequencySequence {
        FrequencySequence {
            values: self.values[..self.cone_band_len].to_vec(),
            cone_band_len: self.cone_band_len,
        }
    }

    /// The frequencies after the cone band as a standalone sequence.
    pub fn semantic_band(&self) -> FrequencySequence {
        FrequencySequence {
            values: self.values[self.cone_band_len..].to_vec(),
            cone_band_len: 0,
        }
    }

    /// Append semantic-band frequencies after the cone band.
    pub fn extend_semantic(mut self, semantic: &[f64]) -> Result<Self> {
        self.values.extend_from_slice(semantic);
        FrequencySequence::new(self.values, self.cone_band_len)
    }

    /// Sum of cosines over the cone band at integer offset `x`.
    pub fn cone_cosine_sum(&self, x: i64) -> f64 {
        self.values[..self.cone_band_len]
            .iter()
            .map(|&theta| (theta * x as f64).cos())
            .sum()
    }
}

/// The classic exponentially decreasing frequency family
/// `theta_l = base^(-2l/d)` for `l = 1..d/2`.
pub fn classic_frequencies(d: usize, base: f64) -> Result<FrequencySequence> {
    if d < 2 || d % 2 != 0 {
        return Err(Error::invalid(format!("d = {d} must be even and >= 2")));
    }
    if !(base > 1.0) {
        return Err(Error::invalid(format!("base = {base} must be > 1")));
    }
    let half = d / 2;
    let values = (1..=half)
        .map(|l| base.powf(-2.0 * l as f64 / d as f64))
        .collect();
    // All frequencies act on the cone subspace unless the caller narrows it.
    FrequencySequence::new(values, half)
}

/// Dirichlet-kernel frequency family `theta_s = 2*pi*s/(2m+1)` for
/// `s = 1..m`, stored in descending order.
///
/// For integer offsets the cosine sum equals `m` at multiples of `2m+1`
/// and `-1/2` elsewhere, so the cone band realizes an exact pulse
/// (`C1 = m + 1/2`, `C2 = -1/2`) as long as the period `2m+1` exceeds
/// twice the horizon.
pub fn pulse_frequencies(m: usize, horizon: usize) -> Result<FrequencySequence> {
    if m == 0 || horizon == 0 {
        return Err(Error::invalid("m and horizon must be positive"));
    }
    let period = 2 * m + 1;
    if period <= 2 * horizon {
        return Err(Error::Aliasing { m, horizon, period, two_n: 2 * horizon });
    }
    let values = (1..=m)
        .rev()
        .map(|s| 2.0 * std::f64::consts::PI * s as f64 / period as f64)
        .collect();
    FrequencySequence::new(values, m)
}

/// Rotate each 2-dimensional block of `v` in place by the given angle.
pub(crate) fn rotate_blocks(v: &mut [f64], angles: &[f64]) {
    debug_assert_eq!(v.len(), 2 * angles.len());
    for (block, &angle) in v.chunks_exact_mut(2).zip(angles) {
        let (sin, cos) = angle.sin_cos();
        let (a, b) = (block[0], block[1]);
        block[0] = cos * a - sin * b;
        block[1] = sin * a + cos * b;
    }
}

fn check_dim(v: &[f64], freqs: &FrequencySequence) -> Result<()> {
    if v.len() != freqs.dim() {
        return Err(Error::invalid(format!(
            "vector dim {} does not match 2 * {} frequencies",
            v.len(),
            freqs.len()
        )));
    }
    Ok(())
}

/// Apply the rotary embedding at position `pos` to `v`.
///
/// Preserves the Euclidean norm; `pos = 0` is the identity.
pub fn apply_rope(v: &[f64], pos: i64, freqs: &FrequencySequence) -> Result<Vec<f64>> {
    check_dim(v, freqs)?;
    let mut out = v.to_vec();
    if pos != 0 {
        let angles: Vec<f64> = freqs.values().iter().map(|&t| pos as f64 * t).collect();
        rotate_blocks(&mut out, &angles);
    }
    Ok(out)
}

/// Attention logit between query at position `i` and key at position `j`:
/// the inner product of the rotated vectors, a function of `i - j` only.
pub fn relative_logit(
    q: &[f64],
    k: &[f64],
    i: i64,
    j: i64,
    freqs: &FrequencySequence,
) -> Result<f64> {
    check_dim(q, freqs)?;
    check_dim(k, freqs)?;
    // <R(i)q, R(j)k> = <q, R(j-i)k>: rotate only the key by the offset.
    let rotated_k = apply_rope(k, j - i, freqs)?;
    Ok(q.iter().zip(&rotated_k).map(|(a, b)| a * b).sum())
}

/// Result of fitting the pulse condition to a cone band.
///
/// The fit puts `c2` at the median of the cosine sum over nonzero offsets
/// and `c1` at `f(0) - c2`; `eps_fn` is the worst absolute deviation of
/// `f(x)` from `c1 * delta_0(x) + c2` over `|x| <= horizon`.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct PulseCheckResult {
    pub c1: f64,
    pub c2: f64,
    pub eps_fn: f64,
    pub horizon: usize,
    pub tolerance: f64,
    pub passed: bool,
}

/// Check how well the cone band of `freqs` approximates a pulse over the
/// integer horizon `|x| <= n`.
pub fn pulse_check(freqs: &FrequencySequence, n: usize, tolerance: f64) -> Result<PulseCheckResult> {
    if n == 0 {
        return Err(Error::invalid("pulse-check horizon must be >= 1"));
    }
    if freqs.cone_band_len() == 0 {
        return Err(Error::invalid("pulse check needs a nonempty cone band"));
    }
    // f is even in x, so offsets 1..=n carry the full picture.
    let f0 = freqs.cone_cosine_sum(0);
    let mut tail: Vec<f64> = (1..=n as i64).map(|x| freqs.cone_cosine_sum(x)).collect();
    tail.sort_by(|a, b| a.total_cmp(b));
    let c2 = if n % 2 == 1 {
        tail[n / 2]
    } else {
        0.5 * (tail[n / 2 - 1] + tail[n / 2])
    };
    let c1 = f0 - c2;
    let eps_fn = tail
        .iter()
        .map(|&f| (f - c2).abs())
        .fold(0.0_f64, f64::max);
    Ok(PulseCheckResult {
        c1,
        c2,
        eps_fn,
        horizon: n,
        tolerance,
        passed: eps_fn <= tolerance,
    })
}

/// Per-frequency split of one attention logit.
///
/// `contributions[l]` is the rotated inner product of block `l`; it equals
/// `amplitudes[l] * cos(theta_l * (i - j) + phases[l])` and the
/// contributions sum to the full logit.
#[derive(Debug, Clone, PartialEq)]
pub struct InpDecomposition {
    pub contributions: Vec<f64>,
    pub total: f64,
    pub amplitudes: Vec<f64>,
    pub phases: Vec<f64>,
}

/// Decompose the `(i, j)` attention logit of `q`, `k` into per-frequency
/// sinusoidal contributions.
pub fn inp_decompose(
    q: &[f64],
    k: &[f64],
    i: i64,
    j: i64,
    freqs: &FrequencySequence,
) -> Result<InpDecomposition> {
    check_dim(q, freqs)?;
    check_dim(k, freqs)?;
    let delta = (i - j) as f64;
    let half = freqs.len();
    let mut contributions = Vec::with_capacity(half);
    let mut amplitudes = Vec::with_capacity(half);
    let mut phases = Vec::with_capacity(half);
    for (l, &theta) in freqs.values().iter().enumerate() {
        let (q1, q2) = (q[2 * l], q[2 * l + 1]);
        let (k1, k2) = (k[2 * l], k[2 * l + 1]);
        let dot = q1 * k1 + q2 * k2;
        let cross = q2 * k1 - q1 * k2;
        // <R(i*t)q_b, R(j*t)k_b> = dot*cos(t*(i-j)) - cross*sin(t*(i-j))
        //                        = A * cos(t*(i-j) + phi).
        let angle = theta * delta;
        contributions.push(dot * angle.cos() - cross * angle.sin());
        amplitudes.push(dot.hypot(cross));
        let mut phi = cross.atan2(dot);
        if phi == -std::f64::consts::PI {
            phi = std::f64::consts::PI;
        }
        phases.push(phi);
    }
    let total = contributions.iter().sum();
    Ok(InpDecomposition { contributions, total, amplitudes, phases })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn norm(v: &[f64]) -> f64 {
        v.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    #[test]
    fn classic_matches_closed_form() {
        let f = classic_frequencies(4, 10000.0).unwrap();
        assert_eq!(f.values().len(), 2);
        assert!((f.values()[0] - 0.01).abs() < 1e-15);
        assert!((f.values()[1] - 0.0001).abs() < 1e-18);

        let f = classic_frequencies(2, 10000.0).unwrap();
        assert_eq!(f.values(), &[1e-4]);

        let f = classic_frequencies(128, 10000.0).unwrap();
        let ratio = f.values()[0] / f.values()[1];
        let expected = 10000f64.powf(2.0 / 128.0);
        assert!((ratio - expected).abs() < 1e-12);
        assert!(f.values().windows(2).all(|w| w[0] > w[1]), "strictly decreasing");
    }

    #[test]
    fn classic_rejects_bad_arguments() {
        assert!(matches!(classic_frequencies(3, 10.0), Err(Error::InvalidArgument(_))));
        assert!(matches!(classic_frequencies(0, 10.0), Err(Error::InvalidArgument(_))));
        assert!(matches!(classic_frequencies(4, 1.0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn pulse_sum_closed_form() {
        let f = pulse_frequencies(2, 1).unwrap();
        // cos(2pi/5) + cos(4pi/5) = -1/2 at x = 1, m at x = 0.
        assert!((f.cone_cosine_sum(1) + 0.5).abs() < 1e-12);
        assert!((f.cone_cosine_sum(0) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn pulse_rejects_aliasing() {
        // period 2m+1 = 5 does not exceed 2N = 6
        assert!(matches!(pulse_frequencies(2, 3), Err(Error::Aliasing { .. })));
        assert!(pulse_frequencies(2, 2).is_ok());
    }

    #[test]
    fn pulse_sweep_is_exact() {
        let f = pulse_frequencies(130, 129).unwrap();
        let mut worst = 0.0f64;
        for x in -129i64..=129 {
            let target = if x == 0 { 130.0 } else { -0.5 };
            worst = worst.max((f.cone_cosine_sum(x) - target).abs());
        }
        assert!(worst <= 1e-9, "max deviation {worst}");
    }

    #[test]
    fn rope_identity_at_origin() {
        let f = classic_frequencies(8, 10000.0).unwrap();
        let v = [1.0, -2.0, 3.0, 0.5, -0.25, 4.0, 0.0, 1.5];
        assert_eq!(apply_rope(&v, 0, &f).unwrap(), v.to_vec());
    }

    #[test]
    fn rope_quarter_turn() {
        let f = FrequencySequence::new(vec![std::f64::consts::FRAC_PI_2], 1).unwrap();
        let out = apply_rope(&[1.0, 0.0], 1, &f).unwrap();
        assert!((out[0]).abs() < 1e-15);
        assert!((out[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn rope_inverse_round_trip() {
        let f = classic_frequencies(16, 10000.0).unwrap();
        let v: Vec<f64> = (0..16).map(|i| (i as f64 * 0.7).sin()).collect();
        let fwd = apply_rope(&v, 7, &f).unwrap();
        let back = apply_rope(&fwd, -7, &f).unwrap();
        for (a, b) in v.iter().zip(&back) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn rope_dimension_mismatch() {
        let f = classic_frequencies(4, 10000.0).unwrap();
        assert!(matches!(apply_rope(&[1.0, 2.0], 1, &f), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn relative_logit_same_position_is_inner_product() {
        let f = classic_frequencies(6, 10000.0).unwrap();
        let q = [1.0, 2.0, -1.0, 0.5, 0.25, -2.0];
        let k = [0.5, -1.0, 2.0, 1.0, -0.5, 0.75];
        let plain: f64 = q.iter().zip(&k).map(|(a, b)| a * b).sum();
        let got = relative_logit(&q, &k, 42, 42, &f).unwrap();
        assert!((got - plain).abs() < 1e-12);
    }

    #[test]
    fn relative_logit_single_block_cosine() {
        let theta = 0.3;
        let f = FrequencySequence::new(vec![theta], 1).unwrap();
        let e1 = [1.0, 0.0];
        for delta in [-5i64, -1, 0, 3, 11] {
            let got = relative_logit(&e1, &e1, delta, 0, &f).unwrap();
            assert!((got - (theta * delta as f64).cos()).abs() < 1e-13);
        }
    }

    #[test]
    fn relative_logit_depends_on_offset_only() {
        let f = classic_frequencies(10, 10000.0).unwrap();
        let q: Vec<f64> = (0..10).map(|i| ((i * i) as f64 * 0.13).cos()).collect();
        let k: Vec<f64> = (0..10).map(|i| (i as f64 * 0.41).sin()).collect();
        let a = relative_logit(&q, &k, 10, 3, &f).unwrap();
        let b = relative_logit(&q, &k, 107, 100, &f).unwrap();
        assert!((a - b).abs() < 1e-12 * a.abs().max(1.0));
    }

    #[test]
    fn pulse_check_dirichlet() {
        let f = pulse_frequencies(130, 129).unwrap();
        let r = pulse_check(&f, 129, 1e-9).unwrap();
        assert!(r.passed);
        assert!(r.eps_fn <= 1e-9);
        assert!((r.c1 - 130.5).abs() < 1e-9);
        assert!((r.c2 + 0.5).abs() < 1e-9);
    }

    #[test]
    fn pulse_check_degenerate_constant() {
        let f = FrequencySequence::new(vec![0.0], 1).unwrap();
        let r = pulse_check(&f, 10, 1e-12).unwrap();
        assert_eq!(r.c1, 0.0);
        assert_eq!(r.eps_fn, 0.0);
        assert!(r.passed);
    }

    #[test]
    fn pulse_check_rejects_classic_band() {
        let f = classic_frequencies(32, 10000.0).unwrap();
        let r = pulse_check(&f, 100, 0.0).unwrap();
        assert!(r.eps_fn > 0.1, "classic band eps {}", r.eps_fn);
        // fails even at the generous tolerance L*C1/N with L = 1
        let loose = pulse_check(&f, 100, r.c1.abs() / 100.0).unwrap();
        assert!(!loose.passed);
    }

    #[test]
    fn pulse_check_rejects_empty_band() {
        let f = FrequencySequence::new(vec![0.1, 0.2], 0).unwrap();
        assert!(matches!(pulse_check(&f, 5, 1e-9), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn inp_unrotated_blocks() {
        let f = classic_frequencies(6, 10000.0).unwrap();
        let q = [1.0, 2.0, -1.0, 0.5, 0.25, -2.0];
        let k = [0.5, -1.0, 2.0, 1.0, -0.5, 0.75];
        let d = inp_decompose(&q, &k, 5, 5, &f).unwrap();
        for l in 0..3 {
            let expect = q[2 * l] * k[2 * l] + q[2 * l + 1] * k[2 * l + 1];
            assert!((d.contributions[l] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn inp_zero_key() {
        let f = classic_frequencies(4, 10000.0).unwrap();
        let d = inp_decompose(&[1.0, 2.0, 3.0, 4.0], &[0.0; 4], 9, 2, &f).unwrap();
        assert!(d.contributions.iter().all(|&c| c == 0.0));
        assert!(d.amplitudes.iter().all(|&a| a == 0.0));
        assert_eq!(d.total, 0.0);
    }

    #[test]
    fn inp_total_matches_relative_logit() {
        let f = classic_frequencies(12, 10000.0).unwrap();
        let q: Vec<f64> = (0..12).map(|i| (i as f64 * 1.3).sin() + 0.2).collect();
        let k: Vec<f64> = (0..12).map(|i| (i as f64 * 0.7).cos() - 0.1).collect();
        let d = inp_decompose(&q, &k, 100, 37, &f).unwrap();
        let logit = relative_logit(&q, &k, 100, 37, &f).unwrap();
        assert!((d.total - logit).abs() < 1e-10);
    }

    #[test]
    fn inp_sinusoidal_form_holds() {
        let f = classic_frequencies(8, 1000.0).unwrap();
        let q = [0.3, -1.2, 0.8, 0.4, 1.1, -0.6, 0.2, 0.9];
        let k = [1.0, 0.5, -0.7, 1.3, 0.1, 0.6, -1.4, 0.2];
        let (i, j) = (57, 12);
        let d = inp_decompose(&q, &k, i, j, &f).unwrap();
        for l in 0..4 {
            let re = d.amplitudes[l] * (f.values()[l] * (i - j) as f64 + d.phases[l]).cos();
            assert!((d.contributions[l] - re).abs() < 1e-12);
            assert!(d.contributions[l].abs() <= d.amplitudes[l] + 1e-15);
            assert!(d.phases[l] > -std::f64::consts::PI && d.phases[l] <= std::f64::consts::PI);
        }
    }
}
