//! Beamforms the echo of a single point scatterer and prints the image as
//! a character map. The brightest pixel lands on the scatterer.
//!
//! cargo run --example das_impulse

use dasnet::io::RunConfig;
use dasnet::phantom::{Scatterer, ScattererSet};
use dasnet::sim::simulate_fmc;
use dasnet::{build_index_table, das_forward, InterpMode, Point2};

fn main() -> dasnet::Result<()> {
    let dc = RunConfig::desk().dataset_config()?;
    let grid = dc.grid;
    let table = build_index_table(&dc.geometry, &grid, &dc.medium, dc.sampling_frequency_hz, dc.n_t, InterpMode::Nearest)?;

    let target = grid.pixel_center(7, 22);
    let sc = ScattererSet { scatterers: vec![Scatterer { position: Point2::new(target.x, target.z), reflectivity: 1.0 }] };
    let sim = simulate_fmc(&sc, &dc.geometry, &dc.medium, &dc.pulse, dc.sampling_frequency_hz, dc.n_t, 0)?;
    let u = das_forward(&sim.data, &table)?;

    let peak = u.pixels().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let ramp = [' ', '.', ':', '-', '=', '+', '*', '#', '%', '@'];
    for iz in 0..grid.n_z {
        let row: String = (0..grid.n_x)
            .map(|ix| ramp[((u.get(ix, iz).max(0.0) / peak) * 9.0).round() as usize])
            .collect();
        println!("|{row}|");
    }
    println!("scatterer at pixel (7, 22), image maximum at {:?}", u.argmax());
    Ok(())
}
