//! Train the reduced two-layer model with two-stage gradient descent and
//! watch the induction-head circuit emerge: stage I concentrates layer-1
//! attention on the previous token, stage II concentrates layer-2
//! attention on the question's feature.
//!
//! ```bash
//! cargo run --example train_induction_head
//! ```

use slashlab::data::DataConfig;
use slashlab::rope::pulse_frequencies;
use slashlab::train::{two_stage_gd, TrainConfig};

fn main() -> slashlab::Result<()> {
    let config = DataConfig::new(4, 16, 4, 68)?; // K = 4 features, N = 33 tokens
    let n = config.n();
    let semantic: Vec<f64> = (0..3).map(|i| (n as f64).powi(-2) / (1 << i) as f64).collect();
    let freqs = pulse_frequencies(34, n)?.extend_semantic(&semantic)?;

    let mut train = TrainConfig::for_length(n);
    train.batch_size = 128;
    train.seed = 12;
    train.snapshot_every = 2;

    let result = two_stage_gd(&train, &config, &freqs)?;
    println!(
        "{:>5} {:>5} {:>10} {:>10} {:>10} {:>10}",
        "t", "stage", "min_prev", "gap", "slash@1", "loss"
    );
    for s in &result.snapshots {
        println!(
            "{:>5} {:>5} {:>10.4} {:>10.3} {:>10.4} {:>10.4}",
            s.t, s.stage, s.min_prev_score, s.logit_gap, s.slash_score_d1, s.loss_estimate
        );
    }
    let last = result.snapshots.last().unwrap();
    println!("\nstage I ended at step {}", result.stage1_end);
    println!("per-feature attention aggregates: {:?}", last.feature_scores);
    println!(
        "layer-2 logit means with question feature 0 (matching first): {:?}",
        last.feature_logit_means
    );
    Ok(())
}
