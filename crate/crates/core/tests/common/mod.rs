#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ota4_core::{build_model, check_validity, CompensationParams, LoadCondition, OtaMacromodel, StageParams};

/// Open-loop `vout/vin` from KCL written node by node and solved with a
/// dense complex LU, without the crate's descriptor stamps.
pub fn nodal_gain(m: &OtaMacromodel, cl: f64, f: f64) -> Complex64 {
    let w = Complex64::new(0.0, 2.0 * std::f64::consts::PI * f);
    let s = m.stages();
    let c = m.comp();
    let g = |r: f64| Complex64::new(1.0 / r, 0.0);
    let re = |x: f64| Complex64::new(x, 0.0);
    let z = Complex64::new(0.0, 0.0);
    // Rows: currents leaving v1, v2, v3, va, vout. Columns: the same nodes.
    #[rustfmt::skip]
    let y = DMatrix::from_row_slice(5, 5, &[
        g(s[0].ro) + w * (s[0].co + c.cm), z, z, z, -w * c.cm,
        re(s[1].gm), g(s[1].ro) + w * s[1].co, z, z, z,
        z, re(s[2].gm), g(s[2].ro) + w * s[2].co + g(c.ra), -g(c.ra), z,
        z, z, -g(c.ra), g(c.ra) + w * c.ca, z,
        re(m.gmf()) - w * c.cm, z, re(s[3].gm), z, g(s[3].ro) + w * (s[3].co + cl + c.cm),
    ]);
    let mut rhs = DVector::from_element(5, z);
    rhs[0] = re(-s[0].gm);
    let x = y.lu().solve(&rhs).expect("nodal matrix is regular");
    x[4]
}

fn log_uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    (rng.random_range(lo.ln()..hi.ln())).exp()
}

/// Draws one model and load from the cross-validation family.
pub fn draw_family_member(rng: &mut ChaCha8Rng) -> (OtaMacromodel, LoadCondition) {
    loop {
        let mut stages = [StageParams::new(0.0, 0.0, 0.0); 4];
        for st in &mut stages {
            *st = StageParams::new(
                log_uniform(rng, 1e-6, 1e-4),
                log_uniform(rng, 1e6, 1e8),
                log_uniform(rng, 1e-16, 1e-13),
            );
        }
        let comp = CompensationParams::new(
            log_uniform(rng, 1e-12, 20e-12),
            log_uniform(rng, 1e4, 1e6),
            log_uniform(rng, 0.5e-12, 1e-11),
        );
        let gmf = stages[3].gm * rng.random_range(0.0..2.0);
        let cl = log_uniform(rng, 1e-11, 1e-8);
        if let (Ok(m), Ok(l)) = (build_model(stages, comp, gmf), LoadCondition::new(cl)) {
            return (m, l);
        }
    }
}

/// `n` members that pass every validity check at margin 10, plus the number
/// of draws it took.
pub fn valid_family(seed: u64, n: usize) -> (Vec<(OtaMacromodel, LoadCondition)>, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    let mut draws = 0;
    while out.len() < n {
        draws += 1;
        let (m, l) = draw_family_member(&mut rng);
        if check_validity(&m, l, 10.0).passes() {
            out.push((m, l));
        }
    }
    (out, draws)
}
