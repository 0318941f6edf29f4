//! Closed-form stability expressions, exact stability metrics, load-range
//! solvers and exact-versus-approximate cross-validation.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::engine::{self, assemble_descriptor, poles_zeros, DescriptorSystem, FrequencyGrid, PoleZeroSet};
use crate::error::{invalid, OtaError, Result};
use crate::exec::{self, Execution};
use crate::macromodel::{check_validity, LoadCondition, OtaMacromodel, ValidityReport};

/// Smallest and largest load searched by the load-range solvers.
pub const CL_BRACKET: (f64, f64) = (1e-15, 1e-3);
const BISECTION_LIMIT: usize = 120;

/// Coefficients of the reduced open-loop transfer function
/// `A0 / (1 + s/ωD) · (1 + a1 s) / ((1 + b1 s)(1 + b2 s + b3 s²)(1 + b4 s))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApproxCoeffs {
    pub w_d: f64,
    pub a0: f64,
    pub a1: f64,
    pub b1: f64,
    pub b2: f64,
    pub b3: f64,
    pub b4: f64,
    pub w_gbw: f64,
}

pub fn approx_coeffs(model: &OtaMacromodel, load: LoadCondition) -> ApproxCoeffs {
    let s = model.stages();
    let c = model.comp();
    let g234 = s[1].gm * s[2].gm * s[3].gm;
    let ro = s[0].ro * s[1].ro * s[2].ro * s[3].ro;
    let w_d = 1.0 / (g234 * ro * c.cm);
    let a0 = s[0].gm * g234 * ro;
    ApproxCoeffs {
        w_d,
        a0,
        a1: c.ra * c.ca,
        b1: c.ra * c.ca,
        b2: load.cl / (g234 * c.ra * s[1].ro),
        b3: load.cl * s[1].co / (g234 * c.ra),
        b4: s[2].co * c.ra,
        w_gbw: s[0].gm / c.cm,
    }
}

/// Natural frequency and damping of the non-dominant pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SecondOrderParams {
    pub w0: f64,
    pub xi: f64,
}

pub fn second_order_params(c: &ApproxCoeffs) -> SecondOrderParams {
    let r = c.b3.sqrt();
    SecondOrderParams {
        w0: 1.0 / r,
        xi: c.b2 / (2.0 * r),
    }
}

/// Closed-form phase margin, degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseMarginApprox {
    /// `180° − atan(ωGBW/ωD) − atan2(b2·ωGBW, 1 − b3·ωGBW²)`.
    pub full: f64,
    /// Same with the dominant-pole term taken as 90°.
    pub simplified: f64,
}

pub fn phase_margin_from(c: &ApproxCoeffs) -> PhaseMarginApprox {
    let w = c.w_gbw;
    let pair = (c.b2 * w).atan2(1.0 - c.b3 * w * w).to_degrees();
    PhaseMarginApprox {
        full: 180.0 - (w / c.w_d).atan().to_degrees() - pair,
        simplified: 90.0 - pair,
    }
}

pub fn phase_margin_approx(model: &OtaMacromodel, load: LoadCondition) -> PhaseMarginApprox {
    phase_margin_from(&approx_coeffs(model, load))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Exact,
    Approx,
}

/// Loop-gain figures of merit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub a0_db: f64,
    pub gbw_hz: f64,
    pub pm_deg: f64,
    /// `None` when the phase never reaches −180° on the grid.
    pub gm_db: Option<f64>,
    /// Closed-loop (unity feedback) maximum over its DC value.
    pub peaking_db: f64,
    pub source: Method,
}

fn wrap_pm(pm: f64) -> f64 {
    let mut p = pm % 360.0;
    if p <= -180.0 {
        p += 360.0;
    } else if p > 180.0 {
        p -= 360.0;
    }
    p
}

struct LoopFigures {
    gbw_hz: f64,
    pm_deg: f64,
    gm_db: Option<f64>,
    peaking_db: f64,
}

/// Crossover figures from a loop-gain evaluator. `rel_tol` bounds the
/// bisection width of the crossover frequency.
fn loop_figures<F>(h_of: F, dc: f64, freq: &[f64], h: &[Complex64], rel_tol: f64) -> Result<LoopFigures>
where
    F: Fn(f64) -> Result<Complex64>,
{
    let first = h.iter().position(|v| v.norm() < 1.0).ok_or(OtaError::NoCrossover)?;
    if first == 0 {
        return Err(OtaError::NoCrossover);
    }
    let phase = engine::unwrap_phase(&h[..first]);
    let (mut lo, mut hi) = (freq[first - 1], freq[first]);
    for _ in 0..200 {
        if hi / lo - 1.0 <= rel_tol {
            break;
        }
        let mid = (lo * hi).sqrt();
        if mid <= lo || mid >= hi {
            break;
        }
        if h_of(mid)?.norm() >= 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let gbw = (lo * hi).sqrt();
    let hg = h_of(gbw)?;
    let ph_gbw = phase[first - 1] + (hg / h[first - 1]).arg().to_degrees();
    let pm = wrap_pm(180.0 + ph_gbw);

    let full_phase = engine::unwrap_phase(h);
    let gm_db = full_phase
        .iter()
        .position(|&p| p <= -180.0)
        .filter(|&j| j > 0)
        .map(|j| -> Result<f64> {
            let (mut lo, mut hi) = (freq[j - 1], freq[j]);
            let base = h[j - 1];
            let base_phase = full_phase[j - 1];
            for _ in 0..60 {
                let mid = (lo * hi).sqrt();
                let p = base_phase + (h_of(mid)? / base).arg().to_degrees();
                if p > -180.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            Ok(-20.0 * h_of((lo * hi).sqrt())?.norm().log10())
        })
        .transpose()?;

    let t0 = (dc / (1.0 + dc)).abs();
    let peak = h
        .iter()
        .map(|v| (v / (Complex64::new(1.0, 0.0) + v)).norm())
        .fold(t0, f64::max);
    Ok(LoopFigures {
        gbw_hz: gbw,
        pm_deg: pm,
        gm_db,
        peaking_db: 20.0 * (peak / t0).log10(),
    })
}

/// Exact metrics of an open-loop system on the default grid.
pub fn stability_metrics_exact(sys: &DescriptorSystem) -> Result<StabilityReport> {
    stability_metrics_exact_on(sys, &FrequencyGrid::default(), Execution::Sequential)
}

/// Exact metrics on a given grid. The crossover is refined by bisection on
/// log-frequency well beyond 1e-4 relative.
pub fn stability_metrics_exact_on(
    sys: &DescriptorSystem,
    grid: &FrequencyGrid,
    exec: Execution,
) -> Result<StabilityReport> {
    if sys.loop_closed {
        return Err(OtaError::NoSolution("stability metrics need the open-loop system".into()));
    }
    let freq = grid.points();
    let resp = engine::ac_response(sys, &freq, exec)?;
    let dc = sys.dc_gain()?;
    let fig = loop_figures(|f| sys.response_at(f), dc, &freq, &resp.h, 1e-12)?;
    Ok(StabilityReport {
        a0_db: 20.0 * dc.abs().log10(),
        gbw_hz: fig.gbw_hz,
        pm_deg: fig.pm_deg,
        gm_db: fig.gm_db,
        peaking_db: fig.peaking_db,
        source: Method::Exact,
    })
}

/// Unity-gain frequency (Hz) of an open-loop system, refined to machine
/// precision. Scans the default grid upward and stops at the first crossing.
pub fn gbw_exact(sys: &DescriptorSystem) -> Result<f64> {
    let freq = FrequencyGrid::default().points();
    let mut prev = None;
    for &f in &freq {
        let mag = sys.response_at(f)?.norm();
        if mag < 1.0 {
            let Some(lo): Option<f64> = prev else {
                return Err(OtaError::NoCrossover);
            };
            let (mut lo, mut hi) = (lo, f);
            for _ in 0..200 {
                let mid = (lo * hi).sqrt();
                if mid <= lo || mid >= hi {
                    break;
                }
                if sys.response_at(mid)?.norm() >= 1.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            return Ok(lo);
        }
        prev = Some(f);
    }
    Err(OtaError::NoCrossover)
}

/// Metrics of the reduced transfer function `A0/(1+s/ωD)/(1+b2 s+b3 s²)`.
///
/// GBW and phase margin are the closed forms `a0·ωD` and the full phase-margin
/// expression; gain margin and peaking come from sampling the reduced model.
pub fn stability_metrics_approx(model: &OtaMacromodel, load: LoadCondition) -> Result<StabilityReport> {
    let c = approx_coeffs(model, load);
    let h_of = |f: f64| -> Result<Complex64> {
        let s = Complex64::new(0.0, 2.0 * PI * f);
        let one = Complex64::new(1.0, 0.0);
        Ok(c.a0 / ((one + s / c.w_d) * (one + s * c.b2 + s * s * c.b3)))
    };
    let freq = FrequencyGrid::default().points();
    let h = freq.iter().map(|&f| h_of(f)).collect::<Result<Vec<_>>>()?;
    let fig = loop_figures(h_of, c.a0, &freq, &h, 1e-6)?;
    Ok(StabilityReport {
        a0_db: 20.0 * c.a0.log10(),
        gbw_hz: c.w_gbw / (2.0 * PI),
        pm_deg: phase_margin_from(&c).full,
        gm_db: fig.gm_db,
        peaking_db: fig.peaking_db,
        source: Method::Approx,
    })
}

/// Load at which the closed-form damping equals `xi_target`:
/// `CL = (2·ξ·Ro2)²·gm2·gm3·gm4·Ra·Co2`.
pub fn cl_min_approx(model: &OtaMacromodel, xi_target: f64) -> f64 {
    let s = model.stages();
    let t = 2.0 * xi_target * s[1].ro;
    t * t * s[1].gm * s[2].gm * s[3].gm * model.comp().ra * s[1].co
}

fn log_bisect<F>(mut lo: f64, mut hi: f64, rel_tol: f64, mut below: F) -> Result<f64>
where
    F: FnMut(f64) -> Result<bool>,
{
    // `below(lo)` holds and `below(hi)` does not.
    for _ in 0..BISECTION_LIMIT {
        if hi / lo - 1.0 <= rel_tol {
            break;
        }
        let mid = (lo * hi).sqrt();
        if below(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok((lo * hi).sqrt())
}

/// Load at which the closed-form phase margin falls to `pm_target_deg`.
///
/// The non-dominant term grows monotonically with `CL` (both `b2` and `b3`
/// scale with it), so the margin decreases over the whole bracket and plain
/// bisection on log `CL` applies.
pub fn cl_max_approx(model: &OtaMacromodel, pm_target_deg: f64) -> Result<f64> {
    if !(pm_target_deg > 0.0 && pm_target_deg < 90.0) {
        return Err(invalid("pm_target", pm_target_deg));
    }
    let pm = |cl: f64| phase_margin_approx(model, LoadCondition { cl }).full;
    let (lo, hi) = CL_BRACKET;
    if pm(hi) > pm_target_deg {
        return Err(OtaError::NoSolution(format!(
            "phase margin stays above {pm_target_deg} deg up to {hi:e} F"
        )));
    }
    if pm(lo) < pm_target_deg {
        return Err(OtaError::NoSolution(format!(
            "phase margin below {pm_target_deg} deg already at {lo:e} F"
        )));
    }
    log_bisect(lo, hi, 1e-12, |cl| Ok(pm(cl) >= pm_target_deg))
}

/// Criteria that bound the load range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RangeCriteria {
    pub xi_target: f64,
    pub pm_target_deg: f64,
}

impl Default for RangeCriteria {
    fn default() -> Self {
        Self {
            xi_target: 0.5,
            pm_target_deg: 45.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoadRangeResult {
    pub cl_min: f64,
    pub cl_max: f64,
    pub criteria: RangeCriteria,
    pub method: Method,
}

impl LoadRangeResult {
    pub fn ratio(&self) -> f64 {
        self.cl_max / self.cl_min
    }
}

/// Closed-form load range.
pub fn load_range_approx(model: &OtaMacromodel, criteria: RangeCriteria) -> Result<LoadRangeResult> {
    let cl_min = cl_min_approx(model, criteria.xi_target);
    let cl_max = cl_max_approx(model, criteria.pm_target_deg)?;
    if !(cl_min < cl_max) {
        return Err(OtaError::NoValidRange { cl_min, cl_max });
    }
    Ok(LoadRangeResult {
        cl_min,
        cl_max,
        criteria,
        method: Method::Approx,
    })
}

/// Natural frequency and damping of an exact pole pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExactPair {
    pub w0: f64,
    pub xi: f64,
    /// True for a complex pair, false for the real-pole fallback.
    pub underdamped: bool,
}

/// The underdamped pair with the lowest natural frequency, if any.
pub fn lowest_underdamped_pair(poles: &[Complex64]) -> Option<ExactPair> {
    poles
        .iter()
        .filter(|p| p.im > 0.0)
        .min_by(|a, b| a.norm().total_cmp(&b.norm()))
        .map(|p| ExactPair {
            w0: p.norm(),
            xi: -p.re / p.norm(),
            underdamped: true,
        })
}

/// Exact counterpart of the reduced pair.
///
/// Prefers the lowest underdamped pair. Without one, the dominant pole and
/// the pole nearest `−1/(Ra·Ca)` are set aside and the two slowest remaining
/// poles define `ω0 = √(p1·p2)` and `ξ = −(p1 + p2)/(2·ω0)`.
pub fn exact_pair(model: &OtaMacromodel, pz: &PoleZeroSet) -> Option<ExactPair> {
    if let Some(pair) = lowest_underdamped_pair(&pz.poles) {
        return Some(pair);
    }
    let mut rest: Vec<Complex64> = pz.poles.clone();
    rest.sort_by(|a, b| a.norm().total_cmp(&b.norm()));
    if rest.is_empty() {
        return None;
    }
    rest.remove(0);
    let c = model.comp();
    let doublet = Complex64::new(-1.0 / (c.ra * c.ca), 0.0);
    if let Some(k) = (0..rest.len()).min_by(|&i, &j| {
        (rest[i] - doublet).norm().total_cmp(&(rest[j] - doublet).norm())
    }) {
        rest.remove(k);
    }
    if rest.len() < 2 {
        return None;
    }
    let (p1, p2) = (rest[0].re, rest[1].re);
    let w0 = (p1 * p2).abs().sqrt();
    Some(ExactPair {
        w0,
        xi: -(p1 + p2) / (2.0 * w0),
        underdamped: false,
    })
}

/// Exact damping used by the light-load criterion; `None` when every pole is
/// real.
pub fn exact_damping(model: &OtaMacromodel, load: LoadCondition) -> Result<Option<f64>> {
    let sys = assemble_descriptor(model, load, false);
    let pz = poles_zeros(&sys)?;
    Ok(lowest_underdamped_pair(&pz.poles).map(|p| p.xi))
}

fn exact_pm(model: &OtaMacromodel, cl: f64) -> Result<f64> {
    let sys = assemble_descriptor(model, LoadCondition { cl }, false);
    Ok(stability_metrics_exact(&sys)?.pm_deg)
}

/// Load range from the exact network.
///
/// `cl_min` is the first load, scanning upward from 1 fF, at which the
/// lowest underdamped pair has damping of at least `xi_target` (a load with
/// only real poles counts as damped). `cl_max` is the first load above
/// `cl_min` at which the exact phase margin drops below `pm_target_deg`.
/// Both are bracketed on a 10-per-decade grid and refined by bisection.
pub fn load_range_exact(
    model: &OtaMacromodel,
    criteria: RangeCriteria,
    exec: Execution,
) -> Result<LoadRangeResult> {
    if !(criteria.xi_target > 0.0) {
        return Err(invalid("xi_target", criteria.xi_target));
    }
    if !(criteria.pm_target_deg > 0.0 && criteria.pm_target_deg < 180.0) {
        return Err(invalid("pm_target", criteria.pm_target_deg));
    }
    const PER_DECADE: usize = 10;
    const REL_TOL: f64 = 1e-4;
    let (lo, hi) = CL_BRACKET;
    let n = ((hi / lo).log10() * PER_DECADE as f64).round() as usize;
    let grid: Vec<f64> = (0..=n)
        .map(|i| lo * 10f64.powf(i as f64 / PER_DECADE as f64))
        .collect();

    let damped = |cl: f64| -> Result<bool> {
        Ok(exact_damping(model, LoadCondition { cl })?.is_none_or(|x| x >= criteria.xi_target))
    };
    let damping_ok = exec::map(exec, &grid, |&cl| damped(cl))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let k = damping_ok.iter().position(|&ok| ok).ok_or(OtaError::NoValidRange {
        cl_min: f64::INFINITY,
        cl_max: hi,
    })?;
    let cl_min = if k == 0 {
        grid[0]
    } else {
        log_bisect(grid[k - 1], grid[k], REL_TOL, |cl| Ok(!damped(cl)?))?
    };

    let pm_ok = |cl: f64| -> bool {
        exact_pm(model, cl).is_ok_and(|pm| pm >= criteria.pm_target_deg)
    };
    if !pm_ok(cl_min) {
        return Err(OtaError::NoValidRange {
            cl_min,
            cl_max: cl_min,
        });
    }
    let upper: Vec<f64> = grid.iter().copied().filter(|&cl| cl > cl_min).collect();
    let pm_flags = exec::map(exec, &upper, |&cl| pm_ok(cl));
    let cl_max = match pm_flags.iter().position(|&ok| !ok) {
        None => hi,
        Some(j) => {
            let start = if j == 0 { cl_min } else { upper[j - 1] };
            log_bisect(start, upper[j], REL_TOL, |cl| Ok(pm_ok(cl)))?
        }
    };
    if !(cl_min < cl_max) {
        return Err(OtaError::NoValidRange { cl_min, cl_max });
    }
    Ok(LoadRangeResult {
        cl_min,
        cl_max,
        criteria,
        method: Method::Exact,
    })
}

/// Exact and closed-form values of the compared quantities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompareValues {
    pub a0: f64,
    pub w_d: f64,
    pub w0: f64,
    pub xi: f64,
    pub pm_deg: f64,
    pub gbw_hz: f64,
}

/// Relative deviations `|exact/approx − 1|`, phase margin in absolute degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Deviations {
    pub a0: f64,
    pub w_d: f64,
    pub w0: f64,
    pub xi: f64,
    pub pm_deg: f64,
    pub gbw: f64,
}

/// Tolerances for [`Deviations`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gates {
    pub a0: f64,
    pub w_d: f64,
    pub w0: f64,
    pub xi: f64,
    pub pm_deg: f64,
}

impl Default for Gates {
    fn default() -> Self {
        Self {
            a0: 0.01,
            w_d: 0.10,
            w0: 0.15,
            xi: 0.20,
            pm_deg: 5.0,
        }
    }
}

impl Deviations {
    pub fn within(&self, g: &Gates) -> bool {
        self.a0 <= g.a0 && self.w_d <= g.w_d && self.w0 <= g.w0 && self.xi <= g.xi && self.pm_deg <= g.pm_deg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossValidation {
    pub cl: f64,
    pub validity: ValidityReport,
    pub exact: CompareValues,
    pub approx: CompareValues,
    pub exact_pair_underdamped: bool,
    pub deviations: Deviations,
}

fn rel(exact: f64, approx: f64) -> f64 {
    (exact / approx - 1.0).abs()
}

/// Compares the exact network with the closed forms at one load.
///
/// Requires the large-gain and component-ordering assumptions at margin 10;
/// the separation and coefficient checks are reported in `validity` but do
/// not block the comparison.
pub fn cross_validate(model: &OtaMacromodel, load: LoadCondition) -> Result<CrossValidation> {
    let validity = check_validity(model, load, 10.0);
    if !validity.assumptions_pass() {
        let failed: Vec<String> = validity
            .failures()
            .map(|c| format!("{} = {:.3}", c.name, c.ratio))
            .collect();
        return Err(OtaError::ValidityViolated(failed.join(", ")));
    }
    let c = approx_coeffs(model, load);
    let so = second_order_params(&c);
    let approx = CompareValues {
        a0: c.a0,
        w_d: c.w_d,
        w0: so.w0,
        xi: so.xi,
        pm_deg: phase_margin_from(&c).full,
        gbw_hz: c.w_gbw / (2.0 * PI),
    };
    let sys = assemble_descriptor(model, load, false);
    let pz = poles_zeros(&sys)?;
    let w_d = pz
        .poles
        .iter()
        .map(|p| p.norm())
        .fold(f64::INFINITY, f64::min);
    let pair = exact_pair(model, &pz)
        .ok_or_else(|| OtaError::NoSolution("no non-dominant pole pair".into()))?;
    let report = stability_metrics_exact(&sys)?;
    let exact = CompareValues {
        a0: sys.dc_gain()?,
        w_d,
        w0: pair.w0,
        xi: pair.xi,
        pm_deg: report.pm_deg,
        gbw_hz: report.gbw_hz,
    };
    let deviations = Deviations {
        a0: rel(exact.a0, approx.a0),
        w_d: rel(exact.w_d, approx.w_d),
        w0: rel(exact.w0, approx.w0),
        xi: rel(exact.xi, approx.xi),
        pm_deg: (exact.pm_deg - approx.pm_deg).abs(),
        gbw: rel(exact.gbw_hz, approx.gbw_hz),
    };
    Ok(CrossValidation {
        cl: load.cl,
        validity,
        exact,
        approx,
        exact_pair_underdamped: pair.underdamped,
        deviations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::macromodel::{build_model, CompensationParams, StageParams};

    fn w1(gmf: f64) -> OtaMacromodel {
        build_model(
            [StageParams::new(10e-6, 10e6, 10e-15); 4],
            CompensationParams::new(10e-12, 200e3, 1.2e-12),
            gmf,
        )
        .unwrap()
    }

    fn load(cl: f64) -> LoadCondition {
        LoadCondition::new(cl).unwrap()
    }

    #[test]
    fn coefficients_by_hand() {
        let c = approx_coeffs(&w1(10e-6), load(1e-9));
        assert!((c.b2 - 5e-7).abs() / 5e-7 < 1e-12);
        assert!((c.b3 - 5e-14).abs() / 5e-14 < 1e-12);
        assert!((c.w_d - 1e-2).abs() / 1e-2 < 1e-12);
        assert!((c.a0 - 1e8).abs() / 1e8 < 1e-12);
        assert!((c.w_gbw - 1e6).abs() / 1e6 < 1e-12);
        assert_eq!(c.a1, c.b1);
        assert!((c.b1 - 2.4e-7).abs() < 1e-20);
        assert!((c.a0 * c.w_d - c.w_gbw).abs() / c.w_gbw < 1e-12);
    }

    #[test]
    fn second_order_by_hand() {
        let c = approx_coeffs(&w1(10e-6), load(1e-9));
        let p = second_order_params(&c);
        assert!((p.w0 - 4.472136e6).abs() / 4.472136e6 < 1e-6);
        assert!((p.xi - 1.118034).abs() < 1e-6);
        let crit = ApproxCoeffs { b2: 2.0 * c.b3.sqrt(), ..c };
        assert!((second_order_params(&crit).xi - 1.0).abs() < 1e-15);
        let q = second_order_params(&ApproxCoeffs { b3: 4.0 * c.b3, ..c });
        assert!((q.w0 - p.w0 / 2.0).abs() / p.w0 < 1e-15);
        assert!((q.xi - p.xi / 2.0).abs() / p.xi < 1e-15);
    }

    #[test]
    fn phase_margin_by_hand() {
        let pm = phase_margin_approx(&w1(10e-6), load(1e-9));
        let expect = 90.0 - (0.5f64 / 0.95).atan().to_degrees();
        assert!((pm.simplified - expect).abs() < 1e-9);
        assert!((pm.full - expect).abs() < 1e-4);
        assert!((expect - 62.24).abs() < 0.01);

        let c = approx_coeffs(&w1(10e-6), load(1e-9));
        let at_w0 = ApproxCoeffs { b3: 1.0 / (c.w_gbw * c.w_gbw), b2: 1e-30, ..c };
        assert!(phase_margin_from(&at_w0).simplified.abs() < 1e-6);
        let none = ApproxCoeffs { b2: 0.0, b3: 0.0, ..c };
        assert!((phase_margin_from(&none).simplified - 90.0).abs() < 1e-12);
    }

    #[test]
    fn cl_min_by_hand() {
        let m = w1(10e-6);
        assert!((cl_min_approx(&m, 0.5) - 2e-10).abs() / 2e-10 < 1e-12);
        assert!((cl_min_approx(&m, 1.0) / cl_min_approx(&m, 0.5) - 4.0).abs() < 1e-12);
        let cl = cl_min_approx(&m, 0.37);
        let xi = second_order_params(&approx_coeffs(&m, load(cl))).xi;
        assert!((xi - 0.37).abs() / 0.37 < 1e-9);
    }

    #[test]
    fn cl_max_by_hand() {
        let m = w1(10e-6);
        let cl = cl_max_approx(&m, 45.0).unwrap();
        assert!((cl - 1.0 / 5.5e8).abs() / (1.0 / 5.5e8) < 1e-5, "{cl}");
        let pm = phase_margin_approx(&m, load(1e-9)).full;
        let back = cl_max_approx(&m, pm).unwrap();
        assert!((back - 1e-9).abs() / 1e-9 < 1e-6);
        assert!(cl_max_approx(&m, 89.9999).unwrap() < 1e-14);
        assert!(cl_max_approx(&m, 95.0).is_err());
    }

    #[test]
    fn approx_pm_decreases_with_load() {
        let m = w1(10e-6);
        let mut prev = f64::INFINITY;
        for k in 0..60 {
            let cl = 1e-13 * 10f64.powf(k as f64 / 10.0);
            let pm = phase_margin_approx(&m, load(cl)).full;
            assert!(pm < prev);
            prev = pm;
        }
    }

    #[test]
    fn xi_and_w0_scale_with_load() {
        let m = w1(10e-6);
        let a = second_order_params(&approx_coeffs(&m, load(1e-9)));
        let b = second_order_params(&approx_coeffs(&m, load(9e-9)));
        assert!((b.xi / a.xi - 3.0).abs() < 1e-12);
        assert!((a.w0 / b.w0 - 3.0).abs() < 1e-12);
    }

    #[test]
    fn single_pole_margin_is_ninety() {
        // Only the Miller pole sits below the crossover.
        let m = build_model(
            [StageParams::new(10e-6, 10e6, 0.0); 4],
            CompensationParams::new(10e-12, 1.0, 1e-18),
            0.0,
        )
        .unwrap();
        let sys = assemble_descriptor(&m, load(1e-12), false);
        let r = stability_metrics_exact(&sys).unwrap();
        assert!((r.pm_deg - 90.0).abs() < 0.1, "{}", r.pm_deg);
    }

    #[test]
    fn two_pole_margin_matches_analytic() {
        // Loop gain w_n^2 / (s (s + 2 xi w_n)) realised as a descriptor system.
        let xi: f64 = 0.5;
        let wn = 1e4;
        let e = nalgebra::DMatrix::identity(2, 2);
        let a = nalgebra::DMatrix::from_row_slice(2, 2, &[-1e-9, 0.0, 1.0, -2.0 * xi * wn]);
        let b = nalgebra::DVector::from_vec(vec![wn * wn, 0.0]);
        let c = nalgebra::DVector::from_vec(vec![0.0, 1.0]);
        let sys = DescriptorSystem {
            e,
            a,
            b,
            c,
            labels: vec!["x1", "x2"],
            loop_closed: false,
        };
        let r = stability_metrics_exact(&sys).unwrap();
        let x4 = xi.powi(4);
        let analytic = (2.0 * xi / ((1.0 + 4.0 * x4).sqrt() - 2.0 * xi * xi).sqrt())
            .atan()
            .to_degrees();
        assert!((r.pm_deg - analytic).abs() < 0.5, "{} vs {analytic}", r.pm_deg);
    }

    #[test]
    fn no_crossover_is_reported() {
        let m = w1(10e-6);
        let mut sys = assemble_descriptor(&m, load(1e-9), false);
        sys.b *= 1e-12;
        assert_eq!(stability_metrics_exact(&sys), Err(OtaError::NoCrossover));
    }

    #[test]
    fn feedforward_free_dc_gain_is_exact() {
        let m = w1(0.0);
        let cl = 1e-9;
        let sys = assemble_descriptor(&m, load(cl), false);
        let a0 = sys.dc_gain().unwrap();
        let c = approx_coeffs(&m, load(cl));
        assert!((a0 / c.a0 - 1.0).abs() <= 1e-9);
    }
}
