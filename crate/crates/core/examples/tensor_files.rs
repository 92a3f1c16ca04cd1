//! The binary formats: single tensors (`.dast`), named archives (`.dasc`),
//! checkpoints and data volumes. Writing the same content twice gives the
//! same bytes.
//!
//! cargo run --example tensor_files -- [out_dir]

use std::path::PathBuf;

use dasnet::io::{load_checkpoint, load_fmc, save_checkpoint, save_fmc, Archive, TensorFile};
use dasnet::nets::{init_params, NetOptions};
use dasnet::sim::undersample_sources;
use dasnet::FmcData;

fn main() -> dasnet::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "out/files".into()));
    std::fs::create_dir_all(&out)?;

    let t = TensorFile::f64(&[2, 3], vec![0.5, -1.0, 2.0, 1e-300, f64::MAX, 0.0])?;
    let path = out.join("small.dast");
    t.write(&path)?;
    let bytes = std::fs::read(&path)?;
    println!("small.dast: {} bytes, header {:02x?}", bytes.len(), &bytes[..8]);
    assert_eq!(TensorFile::read(&path)?, t);

    let mut a = Archive::new();
    a.insert("weights", t.clone());
    a.insert("mask", TensorFile::u8(&[4], vec![1, 0, 1, 0])?);
    a.write(&out.join("pair.dasc"))?;
    println!("pair.dasc entries: {:?}", Archive::read(&out.join("pair.dasc"))?.entries.keys().collect::<Vec<_>>());

    let params = init_params(0, &NetOptions::default())?;
    let ckpt = out.join("init.dasc");
    save_checkpoint(&ckpt, &params, None)?;
    let (back, _) = load_checkpoint(&ckpt)?;
    println!("checkpoint: {} tensors, {} values, round trip exact: {}", back.len(), back.n_values(), back == params);

    let f = FmcData::from_samples(4, 4, 25e6, (0..4).collect(), (0..64).map(f64::from).collect())?;
    let f = undersample_sources(&f, 2)?;
    save_fmc(&out.join("volume.dasc"), &f)?;
    let g = load_fmc(&out.join("volume.dasc"))?;
    println!("volume: active sources {:?}, round trip exact: {}", g.active_sources(), g == f);
    Ok(())
}
