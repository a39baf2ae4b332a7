//! Detect slash-dominant heads: score a trained layer-1 head at small
//! lags and contrast it with uniform attention at long context.
//!
//! ```bash
//! cargo run --example slash_detection
//! ```

use ndarray::Array2;
use slashlab::data::DataConfig;
use slashlab::rope::pulse_frequencies;
use slashlab::slash::{detect_sdh, layer1_attention_via_qk, SlashConfig};
use slashlab::train::{two_stage_gd, TrainConfig};

fn main() -> slashlab::Result<()> {
    let config = DataConfig::new(2, 16, 4, 68)?;
    let n = config.n();
    let semantic: Vec<f64> = (0..3).map(|i| (n as f64).powi(-2) / (1 << i) as f64).collect();
    let freqs = pulse_frequencies(34, n)?.extend_semantic(&semantic)?;
    let mut train = TrainConfig::for_length(n);
    train.batch_size = 128;
    train.seed = 5;
    let result = two_stage_gd(&train, &config, &freqs)?;

    let slash_config = SlashConfig::default();
    let s = layer1_attention_via_qk(&result.params, &config, &freqs, &slash_config)?;
    let report = detect_sdh(std::slice::from_ref(&s), &slash_config)?;
    println!("trained layer-1 head (kappa = {}):", report.kappa);
    for ((lag, score), detected) in report.lags.iter().zip(&report.scores).zip(&report.detected) {
        println!("  lag {lag}: score = {score:.4}  slash-dominant: {detected}");
    }

    // a uniform head never clears the threshold at long context
    let big = 2000;
    let uniform = Array2::from_shape_fn((big, big), |(i, j)| {
        if j <= i {
            1.0 / (i + 1) as f64
        } else {
            0.0
        }
    });
    let report = detect_sdh(std::slice::from_ref(&uniform), &slash_config)?;
    println!("uniform head, N = {big}:");
    for ((lag, score), detected) in report.lags.iter().zip(&report.scores).zip(&report.detected) {
        println!("  lag {lag}: score = {score:.5}  slash-dominant: {detected}");
    }
    Ok(())
}
