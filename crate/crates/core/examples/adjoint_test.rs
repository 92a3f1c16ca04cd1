//! Dot-product test of the DAS adjoint: `<B f, u>` against `<f, B^T u>`
//! for random data and images.
//!
//! cargo run --example adjoint_test -- [trials]

use dasnet::io::RunConfig;
use dasnet::pipeline::dataset::build_table;
use dasnet::verify::{adjoint_test, dot_test, DOT_TEST_TOL};
use dasnet::{FmcData, Image};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> dasnet::Result<()> {
    let trials = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(20);
    let r = adjoint_test(trials, 0)?;
    for (k, e) in r.rel_errors.iter().enumerate() {
        println!("trial {k:>3}: relative error {e:.3e}");
    }
    println!("small instances: max {:.3e}, bound {DOT_TEST_TOL:e}", r.max_rel_error);

    // one desk-scale instance
    let dc = RunConfig::desk().dataset_config()?;
    let table = build_table(&dc)?;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let n = dc.geometry.n_elements();
    let f = FmcData::from_samples(
        dc.n_t,
        n,
        dc.sampling_frequency_hz,
        (0..n).collect(),
        (0..dc.n_t * n * n).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )?;
    let u = Image::from_vec(dc.grid, (0..dc.grid.n_pixels()).map(|_| rng.random_range(-1.0..1.0)).collect())?;
    let d = dot_test(&table, &f, &u)?;
    println!(
        "desk scale: <Bf,u> = {:.12e}, <f,B^T u> = {:.12e}, relative error {:.3e}",
        d.image_side, d.data_side, d.rel_error
    );
    Ok(())
}
