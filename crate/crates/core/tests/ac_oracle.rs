mod common;

use approx::assert_relative_eq;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ota4_core::engine::{ac_response, assemble_descriptor, FrequencyGrid};
use ota4_core::macromodel::reference_model;
use ota4_core::{Execution, LoadCondition};

#[test]
fn sweep_matches_nodal_solve() {
    let m = reference_model();
    let load = LoadCondition::new(10e-12).unwrap();
    let sys = assemble_descriptor(m, load, false);
    let grid = FrequencyGrid::new(1e-1, 1e9, 20).unwrap();
    let resp = ac_response(&sys, &grid.points(), Execution::Parallel).unwrap();
    for (f, h) in grid.points().iter().zip(&resp.h) {
        let want = common::nodal_gain(m, load.cl, *f);
        assert!((h - want).norm() <= 1e-9 * want.norm(), "f = {f}");
    }
}

#[test]
fn parallel_and_sequential_sweeps_are_identical() {
    let sys = assemble_descriptor(reference_model(), LoadCondition::new(1e-9).unwrap(), false);
    let grid = FrequencyGrid::default();
    let a = ac_response(&sys, &grid.points(), Execution::Parallel).unwrap();
    let b = ac_response(&sys, &grid.points(), Execution::Sequential).unwrap();
    assert_eq!(a, b);
}

#[test]
fn dc_gain_matches_stage_product() {
    let m = reference_model();
    let sys = assemble_descriptor(m, LoadCondition::new(1e-9).unwrap(), false);
    let s = m.stages();
    let gain = |i: usize| s[i].gm * s[i].ro;
    let a0 = gain(0) * (gain(1) * gain(2) * gain(3) + m.gmf() * s[3].ro);
    assert_relative_eq!(sys.dc_gain().unwrap().abs(), a0, max_relative = 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn random_models_agree(seed in any::<u64>(), log_f in -2.0f64..9.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (m, load) = common::draw_family_member(&mut rng);
        let f = 10f64.powf(log_f);
        let got = assemble_descriptor(&m, load, false).response_at(f).unwrap();
        let want = common::nodal_gain(&m, load.cl, f);
        prop_assert!((got - want).norm() <= 1e-9 * want.norm());
    }

    #[test]
    fn closed_loop_dc_is_near_unity(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (m, load) = common::draw_family_member(&mut rng);
        let a0 = assemble_descriptor(&m, load, false).dc_gain().unwrap().abs();
        let cl = assemble_descriptor(&m, load, true).dc_gain().unwrap();
        prop_assert!((cl.abs() - a0 / (1.0 + a0)).abs() <= 1e-9);
    }
}
