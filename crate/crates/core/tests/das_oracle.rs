//! DAS forward and adjoint against the naive reference loops.

mod common;

use common::das_naive::{bits, instance, naive_adjoint, naive_forward, random_data, ulp};
use dasnet::das::{das_adjoint, das_adjoint_par, das_forward, das_forward_par};
use dasnet::geometry::{Image, MediumModel};
use dasnet::sim::undersample_sources;
use dasnet::{build_index_table, InterpMode};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn forward_and_adjoint_match_naive_loops_bit_for_bit() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..50 {
        let inst = instance(&mut rng);
        let f = random_data(&mut rng, &inst);
        let u = das_forward(&f, &inst.table).unwrap();
        assert_eq!(bits(u.pixels()), bits(&naive_forward(&inst, &f, |_| true)));
        assert_eq!(bits(das_forward_par(&f, &inst.table).unwrap().pixels()), bits(u.pixels()));

        let img: Vec<f64> = (0..inst.grid.n_pixels()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let img = Image::from_vec(inst.grid, img).unwrap();
        let g = das_adjoint(&img, &inst.table).unwrap();
        assert_eq!(bits(g.samples()), bits(&naive_adjoint(&inst, img.pixels())));
        assert_eq!(bits(das_adjoint_par(&img, &inst.table).unwrap().samples()), bits(g.samples()));
    }
}

#[test]
fn zero_filled_undersampling_equals_restricted_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..50 {
        let inst = instance(&mut rng);
        let f = random_data(&mut rng, &inst);
        let fu = undersample_sources(&f, 2).unwrap();
        let u = das_forward(&fu, &inst.table).unwrap();
        let want = naive_forward(&inst, &f, |m| m % 2 == 0);
        // adding +0.0 leaves every partial sum unchanged
        assert_eq!(u.pixels(), &want[..]);
    }
}

#[test]
fn dot_test_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..50 {
        let inst = instance(&mut rng);
        let f = random_data(&mut rng, &inst);
        let u: Vec<f64> = (0..inst.grid.n_pixels()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let bf = das_forward(&f, &inst.table).unwrap();
        let btu = das_adjoint(&Image::from_vec(inst.grid, u.clone()).unwrap(), &inst.table).unwrap();
        let lhs: f64 = bf.pixels().iter().zip(&u).map(|(a, b)| a * b).sum();
        let rhs: f64 = f.samples().iter().zip(btu.samples()).map(|(a, b)| a * b).sum();
        let scale = bf.pixels().iter().map(|v| v * v).sum::<f64>().sqrt()
            * u.iter().map(|v| v * v).sum::<f64>().sqrt();
        if scale > 0.0 {
            assert!((lhs - rhs).abs() / scale <= 1e-10);
        } else {
            assert_eq!(lhs, rhs);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn das_is_linear(seed in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inst = instance(&mut rng);
        let f = random_data(&mut rng, &inst);
        let g = random_data(&mut rng, &inst);
        let mix: Vec<f64> = f.samples().iter().zip(g.samples()).map(|(x, y)| a * x + b * y).collect();
        let lhs = das_forward(&f.with_samples(mix).unwrap(), &inst.table).unwrap();
        let bf = das_forward(&f, &inst.table).unwrap();
        let bg = das_forward(&g, &inst.table).unwrap();
        let rhs: Vec<f64> = bf.pixels().iter().zip(bg.pixels()).map(|(x, y)| a * x + b * y).collect();
        let mag = rhs.iter().chain(lhs.pixels()).fold(0.0f64, |m, v| m.max(v.abs()));
        let bound = 10.0 * ulp(mag);
        let err = lhs.pixels().iter().zip(&rhs).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
        prop_assert!(err <= bound, "err {err:e} bound {bound:e}");
    }

    #[test]
    fn table_is_deterministic(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inst = instance(&mut rng);
        let again = build_index_table(
            &inst.geom,
            &inst.grid,
            &MediumModel::new(inst.speed).unwrap(),
            inst.fs,
            inst.n_t,
            InterpMode::Nearest,
        )
        .unwrap();
        prop_assert_eq!(again.indices(), inst.table.indices());
        prop_assert_eq!(again.fingerprint(), inst.table.fingerprint());
    }
}
