//! Draws a few random phantoms (pipe wall band plus defects) and writes
//! them as PGM pictures with CSV sidecars.
//!
//! cargo run --example phantom_gallery -- [out_dir] [count]

use std::path::PathBuf;

use dasnet::io::export_segmentation;
use dasnet::io::RunConfig;
use dasnet::phantom::{generate_phantom, phantom_to_scatterers};

fn main() -> dasnet::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "out/gallery".into()));
    let count: u64 = args.next().and_then(|a| a.parse().ok()).unwrap_or(4);
    std::fs::create_dir_all(&out)?;

    let dc = RunConfig::desk().dataset_config()?;
    for seed in 0..count {
        let ph = generate_phantom(&dc.grid, seed, &dc.phantom)?;
        let map = &ph.class_map;
        println!("seed {seed}: {} defect(s), {} boundary scatterers", ph.defects.len(), phantom_to_scatterers(&ph).len());
        for iz in (0..map.n_z()).step_by(2) {
            let row: String = (0..map.n_x()).map(|ix| if map.get(ix, iz) == 1 { '#' } else { '.' }).collect();
            println!("  {row}");
        }
        let (pgm, _) = export_segmentation(map, &out.join(format!("phantom-{seed:03}")))?;
        println!("  -> {}", pgm.display());
    }
    Ok(())
}
