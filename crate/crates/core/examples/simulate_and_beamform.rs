//! One training sample end to end: phantom, simulated clean data, noise,
//! source undersampling, and the DAS images of clean and corrupted data.
//!
//! cargo run --example simulate_and_beamform -- [out_dir]

use std::path::PathBuf;

use dasnet::io::{export_image, export_segmentation, RunConfig};
use dasnet::pipeline::dataset::build_table;
use dasnet::pipeline::generate_sample;
use dasnet::sim::measured_snr_db;
use dasnet::das_forward;

fn main() -> dasnet::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "out/sample".into()));
    std::fs::create_dir_all(&out)?;
    let dc = RunConfig::desk().dataset_config()?;
    let table = build_table(&dc)?;
    let s = generate_sample(&dc, &table, 42)?;
    s.verify(&table)?;

    let [n_t, n_s, n_r] = s.f.dims();
    println!("data volume {n_t} x {n_s} x {n_r}, {} of {n_s} sources kept", s.f_eps.n_active_sources());
    let kept: Vec<usize> = (0..n_s).filter(|&m| s.f_eps.active_sources()[m]).collect();
    let clean = s.f.clone();
    let mut masked = clean.clone();
    for t in 0..n_t {
        for m in (0..n_s).filter(|m| !kept.contains(m)) {
            for l in 0..n_r {
                let off = masked.offset(t, m, l);
                masked.samples_mut()[off] = 0.0;
            }
        }
    }
    println!("SNR on kept traces {:.2} dB (target {} dB)", measured_snr_db(&masked, &s.f_eps), dc.snr_db);

    let u_eps = das_forward(&s.f_eps, &table)?;
    export_segmentation(&s.c, &out.join("truth"))?;
    export_image(&s.u, &out.join("das-clean"))?;
    export_image(&u_eps, &out.join("das-corrupted"))?;
    println!("wrote truth, das-clean and das-corrupted to {}", out.display());
    Ok(())
}
