//! Split one attention logit into its per-frequency sinusoidal
//! contributions and show how the split varies with the offset.
//!
//! ```bash
//! cargo run --example logit_decomposition
//! ```

use slashlab::data::derive_rng;
use slashlab::rope::{classic_frequencies, inp_decompose, relative_logit};

fn main() -> slashlab::Result<()> {
    let freqs = classic_frequencies(16, 10000.0)?;
    let mut rng = derive_rng(1, "example", 0);
    use rand::Rng;
    let q: Vec<f64> = (0..16).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
    let k: Vec<f64> = (0..16).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();

    let (i, j) = (100, 37);
    let d = inp_decompose(&q, &k, i, j, &freqs)?;
    println!("logit({i}, {j}) = {:.6}", relative_logit(&q, &k, i, j, &freqs)?);
    println!("{:>4} {:>12} {:>12} {:>12} {:>10}", "l", "theta", "InP", "amplitude", "phase");
    for l in 0..freqs.len() {
        println!(
            "{:>4} {:>12.6} {:>12.6} {:>12.6} {:>10.4}",
            l,
            freqs.values()[l],
            d.contributions[l],
            d.amplitudes[l],
            d.phases[l]
        );
    }
    println!("sum of contributions = {:.6}", d.total);

    // high frequencies vary fast with the offset, low ones barely move
    println!("\ncontribution of the highest and lowest frequency by offset:");
    for delta in [0i64, 1, 2, 5, 20, 100] {
        let d = inp_decompose(&q, &k, j + delta, j, &freqs)?;
        println!(
            "  offset {delta:>4}: top = {:>9.5}, bottom = {:>9.5}",
            d.contributions[0],
            d.contributions[freqs.len() - 1]
        );
    }
    Ok(())
}
