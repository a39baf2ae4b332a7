//! In-context regression data model: task sampling, prompt construction,
//! and token embeddings on a cone.
//!
//! A prompt interleaves feature inputs and their labels,
//! `(x_1, y_1, ..., x_{N_in}, y_{N_in}, x_q)`, so the embedded sequence
//! has `N = 2*N_in + 1` rows. Inputs are drawn from a finite orthonormal
//! feature set; labels are exact inner products with the task vector.
//! Every embedding row shares the unit cone axis in its leading
//! coordinates, which is what makes layer-1 attention content-free.
//!
//! All sampling goes through explicit ChaCha8 generators keyed by
//! `(seed, tag, index)`, so batches are reproducible across platforms and
//! independent of thread scheduling.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Deterministic per-purpose generator: ChaCha8 keyed by the 64-bit seed,
/// a short ASCII tag, and an index.
pub fn derive_rng(seed: u64, tag: &str, index: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&index.to_le_bytes());
    let tag_bytes = tag.as_bytes();
    debug_assert!(tag_bytes.len() <= 16, "rng tag must fit in 16 bytes");
    let n = tag_bytes.len().min(16);
    key[16..16 + n].copy_from_slice(&tag_bytes[..n]);
    ChaCha8Rng::from_seed(key)
}

/// Static description of the data model.
#[derive(Debug, Clone)]
pub struct DataConfig {
    /// Number of orthonormal features.
    pub k: usize,
    /// Demonstration examples per prompt; the prompt has `2*n_in + 1` tokens.
    pub n_in: usize,
    /// Feature dimension (even, >= k).
    pub d_x: usize,
    /// Cone-axis dimension (even).
    pub d_b: usize,
    /// Sampling probabilities over features, a simplex.
    pub feature_probs: Vec<f64>,
    /// Unit cone axis in the leading `d_b` coordinates.
    pub cone_axis: Array1<f64>,
    /// Feature vectors as rows, orthonormal in `d_x` dimensions.
    pub features: Array2<f64>,
}

impl DataConfig {
    /// Balanced config with basis-vector features and `e_1` as cone axis.
    pub fn new(k: usize, n_in: usize, d_x: usize, d_b: usize) -> Result<Self> {
        let mut cone_axis = Array1::zeros(d_b.max(1));
        if d_b > 0 {
            cone_axis[0] = 1.0;
        }
        let features = Array2::from_shape_fn((k, d_x.max(1)), |(i, j)| {
            if i == j { 1.0 } else { 0.0 }
        });
        let cfg = Self {
            k,
            n_in,
            d_x,
            d_b,
            feature_probs: vec![1.0 / k.max(1) as f64; k],
            cone_axis,
            features,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.n_in == 0 {
            return Err(Error::invalid("k and n_in must be positive"));
        }
        if self.d_x < self.k {
            return Err(Error::invalid(format!(
                "d_x = {} must be >= k = {}",
                self.d_x, self.k
            )));
        }
        if self.d_x % 2 != 0 {
            return Err(Error::invalid("d_x must be even so the semantic block has even dimension"));
        }
        if self.d_b < 2 || self.d_b % 2 != 0 {
            return Err(Error::invalid("d_b must be even and >= 2"));
        }
        if self.feature_probs.len() != self.k {
            return Err(Error::invalid("feature_probs length must equal k"));
        }
        let total: f64 = self.feature_probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 || self.feature_probs.iter().any(|&p| p <= 0.0) {
            return Err(Error::invalid("feature_probs must be positive and sum to 1"));
        }
        if (self.cone_axis.dot(&self.cone_axis).sqrt() - 1.0).abs() > 1e-12 {
            return Err(Error::invalid("cone axis must be a unit vector"));
        }
        if self.features.dim() != (self.k, self.d_x) {
            return Err(Error::invalid("features must be a k x d_x matrix"));
        }
        for a in 0..self.k {
            for b in 0..self.k {
                let expect = if a == b { 1.0 } else { 0.0 };
                if (self.features.row(a).dot(&self.features.row(b)) - expect).abs() > 1e-12 {
                    return Err(Error::invalid("features must be orthonormal"));
                }
            }
        }
        Ok(())
    }

    /// Prompt length `N = 2*n_in + 1`.
    pub fn n(&self) -> usize {
        2 * self.n_in + 1
    }

    /// Embedding dimension `d = d_b + d_x + 2`.
    pub fn dim(&self) -> usize {
        self.d_b + self.d_x + 2
    }

    pub fn feature(&self, k: usize) -> ArrayView1<'_, f64> {
        self.features.row(k)
    }
}

/// A regression task, i.e. the weight vector of the linear target.
#[derive(Debug, Clone)]
pub struct Task {
    pub weights: Array1<f64>,
    /// Out-of-distribution tasks deliberately violate the norm bound and
    /// are exempt from it.
    pub ood: bool,
}

impl Task {
    pub fn target(&self, x: ArrayView1<'_, f64>) -> f64 {
        self.weights.dot(&x)
    }
}

/// Draw a task uniformly from the sphere of radius `sqrt(d_x)`, which has
/// zero mean, identity covariance, and the norm bound all at once.
pub fn sample_task(rng: &mut ChaCha8Rng, config: &DataConfig) -> Task {
    let weights = random_sphere(rng, config.d_x, (config.d_x as f64).sqrt());
    Task { weights, ood: false }
}

/// Draw a task from the sphere of radius `scale * sqrt(d_x)`, outside the
/// training family's support for `scale > 1`.
pub fn ood_task(rng: &mut ChaCha8Rng, config: &DataConfig, scale: f64) -> Result<Task> {
    if !(scale > 1.0) {
        return Err(Error::invalid(format!("ood scale = {scale} must be > 1")));
    }
    let weights = random_sphere(rng, config.d_x, scale * (config.d_x as f64).sqrt());
    Ok(Task { weights, ood: true })
}

fn random_sphere(rng: &mut ChaCha8Rng, dim: usize, radius: f64) -> Array1<f64> {
    loop {
        let v: Array1<f64> = Array1::from_iter((0..dim).map(|_| StandardNormal.sample(rng)));
        let norm = v.dot(&v).sqrt();
        if norm > 1e-8 {
            return v * (radius / norm);
        }
    }
}

/// One in-context prompt: feature indices of the inputs, their labels,
/// and the question's feature index.
#[derive(Debug, Clone, PartialEq)]
pub struct Prompt {
    pub inputs: Vec<usize>,
    pub labels: Vec<f64>,
    pub question: usize,
}

impl Prompt {
    pub fn n_in(&self) -> usize {
        self.inputs.len()
    }

    /// Index sets `V_k`: positions `i` (0-based) with `x_i = v_k`.
    pub fn feature_sets(&self, k: usize) -> Vec<Vec<usize>> {
        let mut sets = vec![Vec::new(); k];
        for (i, &f) in self.inputs.iter().enumerate() {
            sets[f].push(i);
        }
        sets
    }
}

fn sample_feature(rng: &mut ChaCha8Rng, config: &DataConfig) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, &p) in config.feature_probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    config.k - 1
}

/// Sample a prompt for `task`: inputs i.i.d. categorical over the
/// features, labels exact inner products, question from the same law.
pub fn sample_prompt(rng: &mut ChaCha8Rng, task: &Task, config: &DataConfig) -> Prompt {
    let question = sample_feature(rng, config);
    sample_prompt_with_question(rng, task, config, question)
}

/// Sample a prompt whose question feature is forced, used by probe sets.
pub fn sample_prompt_with_question(
    rng: &mut ChaCha8Rng,
    task: &Task,
    config: &DataConfig,
    question: usize,
) -> Prompt {
    let inputs: Vec<usize> = (0..config.n_in).map(|_| sample_feature(rng, config)).collect();
    let labels = inputs
        .iter()
        .map(|&k| task.target(config.feature(k)))
        .collect();
    Prompt { inputs, labels, question }
}

/// Token embeddings of a prompt.
///
/// Row `2i-1` (1-based) is `[c; x_i; 0; 0]`, row `2i` is `[c; 0; 1; y_i]`,
/// and the final row is `[c; x_q; 0; 0]`.
#[derive(Debug, Clone)]
pub struct EmbeddingMatrix {
    rows: Array2<f64>,
    d_b: usize,
    feature_indices: Vec<usize>,
    question_feature: usize,
}

impl EmbeddingMatrix {
    /// Sequence length `N`.
    pub fn n(&self) -> usize {
        self.rows.nrows()
    }

    pub fn dim(&self) -> usize {
        self.rows.ncols()
    }

    pub fn full(&self) -> ArrayView2<'_, f64> {
        self.rows.view()
    }

    /// Semantic block: the last `d_x + 2` columns.
    pub fn xy(&self) -> ArrayView2<'_, f64> {
        self.rows.slice(s![.., self.d_b..])
    }

    /// Label column (last column); zero at odd rows and the final row.
    pub fn y_col(&self) -> ArrayView1<'_, f64> {
        self.rows.column(self.rows.ncols() - 1)
    }

    /// Feature index of input `i` (0-based).
    pub fn feature_of(&self, i: usize) -> usize {
        self.feature_indices[i]
    }

    pub fn question_feature(&self) -> usize {
        self.question_feature
    }
}

/// Embed a prompt into the `N x d` token-embedding matrix.
pub fn embed(prompt: &Prompt, config: &DataConfig) -> EmbeddingMatrix {
    let n = 2 * prompt.n_in() + 1;
    let d = config.dim();
    let mut rows = Array2::zeros((n, d));
    for (i, (&feat, &label)) in prompt.inputs.iter().zip(&prompt.labels).enumerate() {
        let x_row = 2 * i; // position 2i-1, 1-based
        let y_row = 2 * i + 1; // position 2i
        rows.slice_mut(s![x_row, ..config.d_b]).assign(&config.cone_axis);
        rows.slice_mut(s![x_row, config.d_b..config.d_b + config.d_x])
            .assign(&config.feature(feat));
        rows.slice_mut(s![y_row, ..config.d_b]).assign(&config.cone_axis);
        rows[(y_row, d - 2)] = 1.0;
        rows[(y_row, d - 1)] = label;
    }
    rows.slice_mut(s![n - 1, ..config.d_b]).assign(&config.cone_axis);
    rows.slice_mut(s![n - 1, config.d_b..config.d_b + config.d_x])
        .assign(&config.feature(prompt.question));
    EmbeddingMatrix {
        rows,
        d_b: config.d_b,
        feature_indices: prompt.inputs.clone(),
        question_feature: prompt.question,
    }
}

/// A fully materialized training or probe example.
#[derive(Debug, Clone)]
pub struct Sample {
    pub task: Task,
    pub prompt: Prompt,
    pub embedding: EmbeddingMatrix,
}

/// Draw one example from a dedicated generator.
pub fn sample_one(rng: &mut ChaCha8Rng, config: &DataConfig) -> Sample {
    let task = sample_task(rng, config);
    let prompt = sample_prompt(rng, &task, config);
    let embedding = embed(&prompt, config);
    Sample { task, prompt, embedding }
}

/// Draw `count` independent examples with per-example derived seeds, so
/// batch content does not depend on evaluation order.
pub fn sample_batch(
    seed: u64,
    tag: &str,
    index_base: u64,
    count: usize,
    config: &DataConfig,
) -> Vec<Sample> {
    (0..count)
        .map(|i| {
            let mut rng = derive_rng(seed, tag, index_base + i as u64);
            sample_one(&mut rng, config)
        })
        .collect()
}
