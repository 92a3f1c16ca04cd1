//! Generates the desk-scale collection and runs the three training
//! strategies in sequence, each starting from the previous one's parameters.
//!
//! cargo run --release --example train_strategies -- [epochs_pre] [epochs_post] [epochs_joint]

use std::time::Instant;

use dasnet::io::RunConfig;
use dasnet::nets::init_params;
use dasnet::pipeline::{generate_dataset, run_all_strategies};

fn main() -> dasnet::Result<()> {
    let args: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut cfg = RunConfig::desk();
    if let [pre, post, joint] = args[..] {
        cfg.training.epochs_pre = pre;
        cfg.training.epochs_post = post;
        cfg.training.epochs_joint = joint;
    }
    let tc = cfg.train_config();
    let start = Instant::now();
    let ds = generate_dataset(&cfg.dataset_config()?)?;
    println!("{} train / {} test samples", ds.train.len(), ds.test.len());

    let init = init_params(tc.seed, &tc.net)?;
    let cmp = run_all_strategies(&init, &ds.train, &ds.test, &ds.table, &tc)?;
    for r in &cmp.reports {
        println!("strategy {} ({:.0} s)", r.strategy, r.wall_clock_s);
        for st in &r.stages {
            println!(
                "  {:<28} loss {:.4e} -> {:.4e} over {} epochs",
                st.name,
                st.initial_loss,
                st.final_loss,
                st.epoch_losses.len()
            );
        }
        println!("  test cross entropy {:.4e} -> {:.4e}", r.initial_test_ce, r.final_test_ce);
    }
    println!("total {:.0} s", start.elapsed().as_secs_f64());
    Ok(())
}
