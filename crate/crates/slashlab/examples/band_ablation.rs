//! Remove frequency bands from a trained head and measure how the slash
//! score at each lag reacts: the cone (high-frequency) band carries the
//! pattern, the semantic (low-frequency) band barely matters.
//!
//! ```bash
//! cargo run --example band_ablation
//! ```

use slashlab::data::DataConfig;
use slashlab::model::layer1_qk;
use slashlab::rope::pulse_frequencies;
use slashlab::slash::{band_ablation, SlashConfig};
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

    let (q, k) = layer1_qk(&result.params, &config);
    let slash = SlashConfig::default();
    let bands: [(&str, Vec<usize>); 3] = [
        ("cone band", (0..freqs.cone_band_len()).collect()),
        ("semantic band", (freqs.cone_band_len()..freqs.len()).collect()),
        ("nothing", Vec::new()),
    ];
    for (name, removed) in bands {
        let report = band_ablation(q.view(), k.view(), &freqs, &removed, &slash)?;
        println!("removing {name} ({} frequencies):", removed.len());
        for ((lag, ratio), baseline) in
            report.lags.iter().zip(&report.ratios).zip(&report.baseline)
        {
            match ratio {
                Some(r) => println!(
                    "  lag {lag}: baseline = {baseline:.4}, ratio after removal = {r:.4}"
                ),
                None => println!("  lag {lag}: baseline = 0, ratio undefined"),
            }
        }
    }
    Ok(())
}
