//! Spectral power, effective rank, subspace alignment, and low-rank
//! truncation on synthetic matrices with known structure.
//!
//! ```bash
//! cargo run --example rank_metrics
//! ```

use ndarray::{Array1, Array2};
use slashlab::data::derive_rng;
use slashlab::rank::{
    aligned_report, dominant_direction, low_rank_truncate, relative_variation, spectral_report,
};

fn main() -> slashlab::Result<()> {
    let mut rng = derive_rng(2, "example", 0);
    use rand::Rng;

    // near-rank-one matrix: a dominant direction plus small noise
    let u = Array1::from_shape_fn(64, |_| rng.random::<f64>() - 0.5);
    let v = Array1::from_shape_fn(32, |_| rng.random::<f64>() - 0.5);
    let x = Array2::from_shape_fn((64, 32), |(i, j)| {
        u[i] * v[j] + 0.01 * (rng.random::<f64>() - 0.5)
    });
    let report = spectral_report(x.view(), 0.95)?;
    println!("near-rank-one 64x32 matrix:");
    println!("  r_1 = {:.6}, R_0.95 = {}", report.power_ratios[0], report.effective_rank);

    // tokens on a cone: unit axis plus small orthogonal jitter
    let axis = Array1::from_shape_fn(16, |i| if i == 0 { 1.0 } else { 0.0 });
    let tokens = Array2::from_shape_fn((40, 16), |(_, j)| {
        axis[j] + 0.05 * (rng.random::<f64>() - 0.5)
    });
    let w = Array2::from_shape_fn((16, 8), |_| rng.random::<f64>() - 0.5);
    let (direction, index) = dominant_direction(w.view(), tokens.view())?;
    let rv = relative_variation(direction.view(), tokens.view())?;
    println!("cone-shaped token set against a random 16x8 weight:");
    println!("  dominant direction index = {index}, relative variation = {rv:.4}");
    let gauss = Array1::from_shape_fn(16, |_| rng.random::<f64>() - 0.5);
    match relative_variation(gauss.view(), tokens.view()) {
        Ok(rv_rand) => println!("  random direction baseline RV = {rv_rand:.4}"),
        Err(e) => println!("  random direction baseline: {e}"),
    }

    // alignment of a single embedding with the weight spectrum
    let probe = tokens.row(0).to_owned();
    let alignment = aligned_report(probe.view(), w.view(), None, 0.95)?;
    println!(
        "  aligned r~_1 = {:.4}, R~_0.95 = {}",
        alignment.aligned_ratios[0], alignment.aligned_rank
    );

    // compress the near-rank-one matrix by averaged power
    let truncated = low_rank_truncate(x.view(), &report.power_ratios, 0.95, 4, false)?;
    let err: f64 = (&x - &truncated).iter().map(|v| v * v).sum::<f64>().sqrt();
    let norm: f64 = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    println!("  truncation at thre = 0.95, rank cap 4: relative error = {:.4}", err / norm);
    Ok(())
}
