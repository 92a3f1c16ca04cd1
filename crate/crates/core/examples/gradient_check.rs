//! Finite-difference checks of every differentiable op, the DAS layer and
//! the full pre-network → DAS → post-network → cross-entropy chain.
//!
//! cargo run --release --example gradient_check

use std::time::Instant;

use dasnet::verify::{gradcheck_suite, GRADCHECK_TOL};

fn main() -> dasnet::Result<()> {
    let start = Instant::now();
    let results = gradcheck_suite(1)?;
    for r in &results {
        let mark = if r.passed() { "ok " } else { "BAD" };
        println!("{mark} {:<36} {:>4} coords  rel {:.2e}", r.name, r.coordinates, r.rel_error);
    }
    let worst = results.iter().map(|r| r.rel_error).fold(0.0, f64::max);
    println!(
        "{} checks, worst {worst:.2e} (bound {GRADCHECK_TOL:e}), {:.1} s",
        results.len(),
        start.elapsed().as_secs_f64()
    );
    Ok(())
}
