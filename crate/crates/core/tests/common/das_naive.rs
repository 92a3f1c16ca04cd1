//! Naive DAS reference: every travel time is recomputed from scratch
//! instead of read from the index table.

use dasnet::das::IndexTable;
use dasnet::geometry::{time_to_index, travel_time, ArrayGeometry, FmcData, ImageGrid, MediumModel, Point2};
use dasnet::{build_index_table, InterpMode};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub struct Instance {
    pub geom: ArrayGeometry,
    pub grid: ImageGrid,
    pub speed: f64,
    pub fs: f64,
    pub n_t: usize,
    pub table: IndexTable,
}

pub fn instance(rng: &mut ChaCha8Rng) -> Instance {
    let n_e = rng.random_range(2..6);
    let n_t = rng.random_range(6..40);
    let geom = ArrayGeometry::uniform(n_e, rng.random_range(0.3e-3..2e-3), 0.0).unwrap();
    let grid = ImageGrid::new(
        rng.random_range(1..7),
        rng.random_range(1..7),
        Point2::new(rng.random_range(-3e-3..0.0), rng.random_range(0.5e-3..3e-3)),
        rng.random_range(0.2e-3..1e-3),
        rng.random_range(0.2e-3..1e-3),
    )
    .unwrap();
    let speed = rng.random_range(1000.0..6000.0);
    let fs = rng.random_range(2e6..40e6);
    let medium = MediumModel::new(speed).unwrap();
    let table = build_index_table(&geom, &grid, &medium, fs, n_t, InterpMode::Nearest).unwrap();
    Instance { geom, grid, speed, fs, n_t, table }
}

pub fn random_data(rng: &mut ChaCha8Rng, inst: &Instance) -> FmcData {
    let n = inst.geom.n_elements();
    let v = (0..inst.n_t * n * n).map(|_| rng.random_range(-1.0..1.0)).collect();
    FmcData::from_samples(inst.n_t, n, inst.fs, (0..n).collect(), v).unwrap()
}

pub fn sample_index(inst: &Instance, ix: usize, iz: usize, m: usize, l: usize) -> Option<usize> {
    let p = inst.grid.pixel_center(ix, iz);
    let t = travel_time(p, inst.geom.position(m), inst.geom.position(l), inst.speed).unwrap();
    time_to_index(t, inst.fs, inst.n_t)
}

/// `u_i = sum_m sum_l f(idx, m, l)` over the sources for which `keep` holds.
pub fn naive_forward(inst: &Instance, f: &FmcData, keep: impl Fn(usize) -> bool) -> Vec<f64> {
    let n = inst.geom.n_elements();
    let mut u = vec![0.0; inst.grid.n_pixels()];
    for ix in 0..inst.grid.n_x {
        for iz in 0..inst.grid.n_z {
            let mut acc = 0.0;
            for m in (0..n).filter(|&m| keep(m)) {
                for l in 0..n {
                    if let Some(k) = sample_index(inst, ix, iz, m, l) {
                        acc += f.get(k, m, l);
                    }
                }
            }
            u[inst.grid.flat(ix, iz)] = acc;
        }
    }
    u
}

pub fn naive_adjoint(inst: &Instance, u: &[f64]) -> Vec<f64> {
    let n = inst.geom.n_elements();
    let mut g = vec![0.0; inst.n_t * n * n];
    for ix in 0..inst.grid.n_x {
        for iz in 0..inst.grid.n_z {
            let ui = u[inst.grid.flat(ix, iz)];
            for m in 0..n {
                for l in 0..n {
                    if let Some(k) = sample_index(inst, ix, iz, m, l) {
                        g[(k * n + m) * n + l] += ui;
                    }
                }
            }
        }
    }
    g
}

pub fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

pub fn ulp(x: f64) -> f64 {
    let a = x.abs().max(f64::MIN_POSITIVE);
    f64::from_bits(a.to_bits() + 1) - a
}
