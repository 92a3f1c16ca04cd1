//! Two-way travel times and the sample indices the DAS index table stores
//! for one pixel of the desk-scale setup.
//!
//! cargo run --example travel_times

use dasnet::io::RunConfig;
use dasnet::{build_index_table, time_to_index, travel_time, InterpMode};

fn main() -> dasnet::Result<()> {
    let dc = RunConfig::desk().dataset_config()?;
    let (geom, grid) = (&dc.geometry, &dc.grid);
    let table = build_index_table(geom, grid, &dc.medium, dc.sampling_frequency_hz, dc.n_t, InterpMode::Nearest)?;

    let (ix, iz) = (grid.n_x / 2, grid.n_z / 2);
    let p = grid.pixel_center(ix, iz);
    println!("pixel ({ix}, {iz}) at x = {:.2} mm, z = {:.2} mm", p.x * 1e3, p.z * 1e3);
    println!("source  receiver  travel time (us)  index");
    for m in [0, geom.n_elements() / 2, geom.n_elements() - 1] {
        for l in [0, geom.n_elements() - 1] {
            let t = travel_time(p, geom.position(m), geom.position(l), dc.medium.speed())?;
            let k = time_to_index(t, dc.sampling_frequency_hz, dc.n_t);
            assert_eq!(k, table.index(grid.flat(ix, iz), m, l));
            println!("{m:>6}  {l:>8}  {:>16.4}  {k:?}", t * 1e6);
        }
    }
    println!("table: {} entries, fingerprint {}", table.indices().len(), &table.fingerprint_hex()[..16]);
    Ok(())
}
