//! Write query/key tensors to the SDHA container, read them back, and
//! run the offline analysis pipeline on the file.
//!
//! ```bash
//! cargo run --example tensor_dump
//! ```

use ndarray::Array2;
use slashlab::data::derive_rng;
use slashlab::ingest::{analyze_dump, read_dump, write_dump, Manifest, Tensor, TensorDump};
use slashlab::slash::SlashConfig;

fn main() -> slashlab::Result<()> {
    let mut rng = derive_rng(3, "example", 0);
    use rand::Rng;

    // a nearly rank-one head: shared direction plus noise
    let n = 64;
    let d = 8;
    let direction: Vec<f64> = (0..d).map(|_| rng.random::<f64>() - 0.5).collect();
    let noisy = |rng: &mut rand_chacha::ChaCha8Rng| -> Vec<f64> {
        (0..n)
            .flat_map(|_| {
                direction
                    .iter()
                    .map(|&v| v + 0.02 * (rng.random::<f64>() - 0.5))
                    .collect::<Vec<_>>()
            })
            .collect()
    };
    let q = noisy(&mut rng);
    let k = noisy(&mut rng);

    let dump = TensorDump::new(
        vec![
            Tensor::f64("Q", vec![n as u64, d as u64], q)?,
            Tensor::f64("K", vec![n as u64, d as u64], k)?,
        ],
        Manifest {
            model: "synthetic-rank-one".into(),
            layer: 0,
            head: 0,
            context_len: n as u64,
            rope_applied: false,
            logit_scale_hint: 1.0,
            freq_base: 10000.0,
        },
    )?;

    let dir = std::env::temp_dir().join("slashlab-example");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("head.sdha");
    write_dump(&dump, &path)?;
    println!("wrote {} ({} bytes)", path.display(), std::fs::metadata(&path)?.len());

    let back = read_dump(&path)?;
    assert_eq!(back, dump, "round trip is bit-identical");
    println!("round trip: bit-identical");

    let analysis = analyze_dump(&back, &SlashConfig { excluded_prefix: 4, ..Default::default() }, 0.95)?;
    for (name, report) in &analysis.spectral {
        println!(
            "{name}: r_1 = {:.4}, R_0.95 = {}",
            report.power_ratios[0], report.effective_rank
        );
    }
    if let Some(slash) = &analysis.slash {
        for (lag, score) in slash.lags.iter().zip(&slash.scores) {
            println!("lag {lag}: average slash score = {score:.4}");
        }
    }

    // a corrupted file is rejected with a descriptive error
    let mut bytes = std::fs::read(&path)?;
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0xFF;
    let broken = dir.join("broken.sdha");
    std::fs::write(&broken, &bytes)?;
    std::fs::copy(
        slashlab::ingest::manifest_path(&path),
        slashlab::ingest::manifest_path(&broken),
    )?;
    match read_dump(&broken) {
        Err(e) => println!("corrupted copy rejected: {e}"),
        Ok(_) => println!("unexpected: corrupted copy accepted"),
    }

    let m: Array2<f64> = back.get("Q").unwrap().matrix()?;
    println!("Q parsed as {}x{} matrix", m.nrows(), m.ncols());
    Ok(())
}
