//! Compare the closed-form gradients of both trainable blocks against
//! central finite differences on a fixed batch.
//!
//! ```bash
//! cargo run --example gradient_check
//! ```

use ndarray::Array2;
use slashlab::data::{derive_rng, sample_batch, DataConfig};
use slashlab::model::ReducedParams;
use slashlab::rope::pulse_frequencies;
use slashlab::train::{
    finite_diff_grad, grad_w1, grad_w2, loss_on_batch, max_relative_error, ParamBlock,
};

fn main() -> slashlab::Result<()> {
    let config = DataConfig::new(2, 4, 4, 20)?;
    let n = config.n();
    let semantic: Vec<f64> = (0..3).map(|i| (n as f64).powi(-2) / (1 << i) as f64).collect();
    let freqs = pulse_frequencies(10, n)?.extend_semantic(&semantic)?;
    let batch = sample_batch(0, "gradcheck", 0, 8, &config);

    println!("{:>6} {:>14} {:>14}", "point", "w1 rel error", "w2 rel error");
    for point in 0..10u64 {
        let mut rng = derive_rng(0, "gc-point", point);
        use rand::Rng;
        let params = ReducedParams {
            w1: Array2::from_shape_fn((config.d_b, config.d_b), |_| {
                0.4 * (rng.random::<f64>() - 0.5)
            }),
            w2: Array2::from_shape_fn((config.d_x + 2, config.d_x + 2), |_| {
                0.8 * (rng.random::<f64>() - 0.5)
            }),
        };
        let loss = |p: &ReducedParams| loss_on_batch(p, &batch, &config, &freqs).unwrap();

        let analytic = grad_w1(&params, &batch, &config, &freqs)?;
        let numeric = finite_diff_grad(&loss, &params, ParamBlock::Layer1, 1e-5);
        let e1 = max_relative_error(&analytic, &numeric);

        let analytic = grad_w2(&params, &batch, &config, &freqs)?;
        let numeric = finite_diff_grad(&loss, &params, ParamBlock::Layer2, 1e-5);
        let e2 = max_relative_error(&analytic, &numeric);

        println!("{point:>6} {e1:>14.3e} {e2:>14.3e}");
    }
    Ok(())
}
