//! Check the pulse condition for two frequency families: the
//! Dirichlet-kernel family satisfies it exactly, the classic
//! exponentially decaying family does not.
//!
//! ```bash
//! cargo run --example pulse_condition
//! ```

use slashlab::rope::{classic_frequencies, pulse_check, pulse_frequencies};

fn main() -> slashlab::Result<()> {
    let horizon = 129;

    let pulse = pulse_frequencies(130, horizon)?;
    let result = pulse_check(&pulse, horizon, 1e-9)?;
    println!("dirichlet family, m = 130, horizon {horizon}:");
    println!("  C1 = {:.6}, C2 = {:.6}", result.c1, result.c2);
    println!("  eps_fn = {:.3e}  -> passed: {}", result.eps_fn, result.passed);

    let classic = classic_frequencies(32, 10000.0)?;
    let result = pulse_check(&classic, 100, 0.1)?;
    println!("classic family, d = 32, base 10000, horizon 100:");
    println!("  C1 = {:.6}, C2 = {:.6}", result.c1, result.c2);
    println!("  eps_fn = {:.3e}  -> passed: {}", result.eps_fn, result.passed);

    // the cosine sum itself, near the origin
    println!("dirichlet cosine sum near x = 0:");
    for x in -3i64..=3 {
        println!("  f({x:>2}) = {:>9.4}", pulse.cone_cosine_sum(x));
    }
    Ok(())
}
