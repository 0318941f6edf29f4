//! Closed-loop unity-gain step responses and slew-rate prediction.
//!
//! Both simulators share one adaptive SDIRK2 integrator (L-stable, stiffly
//! accurate), which copes with the singular capacitance matrix of
//! parasitic-free models. The slew-limited simulator saturates each stage's
//! controlled-source current and solves the resulting piecewise-linear stage
//! equations by Newton iteration.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::engine::{passive_stamps, transconductors, DescriptorSystem, V1, VOUT};
use crate::error::{invalid, OtaError, Result};
use crate::macromodel::{LoadCondition, OtaMacromodel};

/// Maximum (dis)charge currents at the four stage outputs, in amperes.
///
/// `i4` is the stage-4 sourcing limit; `i4_sink` the sinking limit, which
/// may exceed it to represent the class-AB feed-forward branch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageCurrents {
    pub i1: f64,
    pub i2: f64,
    pub i3: f64,
    pub i4: f64,
    pub i4_sink: f64,
}

/// Slew targets used to size [`StageCurrents::calibrated`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlewTargets {
    /// Slew rate (V/s) at `heavy_cl`, set by the stage-4 sourcing current.
    pub heavy_sr: f64,
    pub heavy_cl: f64,
    /// Slew rate (V/s) at light load, set by stage 1.
    pub light_sr: f64,
    /// Stage 2 and 3 terms sit at least this factor above `light_sr`.
    pub internal_headroom: f64,
    /// Stage 2 and 3 currents are at least `gm·internal_vov` (V), the bias
    /// current of a weakly inverted stage with that transconductance.
    pub internal_vov: f64,
    /// Stage 2 and 3 can drive the next stage this many times past its clamp.
    pub drive_margin: f64,
    /// `i4_sink / i4`.
    pub sink_ratio: f64,
}

impl Default for SlewTargets {
    fn default() -> Self {
        Self {
            heavy_sr: 118.5e3,
            heavy_cl: 1e-9,
            light_sr: 128e3,
            internal_headroom: 10.0,
            internal_vov: 0.039,
            drive_margin: 10.0,
            sink_ratio: 2.0,
        }
    }
}

fn check_current(name: &'static str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(invalid(name, v))
    }
}

impl StageCurrents {
    /// Symmetric limits on every stage.
    pub fn new(i1: f64, i2: f64, i3: f64, i4: f64) -> Result<Self> {
        Self::with_sink(i1, i2, i3, i4, i4)
    }

    pub fn with_sink(i1: f64, i2: f64, i3: f64, i4: f64, i4_sink: f64) -> Result<Self> {
        check_current("i1", i1)?;
        check_current("i2", i2)?;
        check_current("i3", i3)?;
        check_current("i4", i4)?;
        check_current("i4_sink", i4_sink)?;
        Ok(Self { i1, i2, i3, i4, i4_sink })
    }

    pub fn scaled(&self, k: f64) -> Result<Self> {
        Self::with_sink(self.i1 * k, self.i2 * k, self.i3 * k, self.i4 * k, self.i4_sink * k)
    }

    /// Currents that reproduce `targets` through the full slew expression.
    ///
    /// `i1` and `i4` set the light- and heavy-load slew rates. `i2` and `i3`
    /// are the largest of the headroom term, the bias term `gm·internal_vov`,
    /// and `drive_margin` times the current that lets the stage drive the
    /// next one into its clamp through its output resistance. Without that
    /// margin the internal nodes wind up while stage 4 slews and heavy loads
    /// settle into a limit cycle.
    pub fn calibrated(model: &OtaMacromodel, targets: &SlewTargets) -> Result<Self> {
        let s = model.stages();
        let i4 = targets.heavy_sr * targets.heavy_cl;
        let i4_sink = i4 * targets.sink_ratio;
        let i1 = targets.light_sr * (model.comp().cm + s[0].co);
        let internal = targets.light_sr * targets.internal_headroom;
        let i3 = (internal * third_stage_cap(model))
            .max(s[2].gm * targets.internal_vov)
            .max(targets.drive_margin * i4.max(i4_sink) / (s[3].gm * s[2].ro));
        let i2 = (internal * s[1].co)
            .max(s[1].gm * targets.internal_vov)
            .max(targets.drive_margin * i3 / (s[2].gm * s[1].ro));
        Self::with_sink(i1, i2, i3, i4, i4_sink)
    }
}

/// Effective capacitance seen by the third-stage current through the
/// `Ra`–`Ca` branch: `Ca·(Ro3·Co3)/(Ra·Ca + Ro3·Co3)`.
fn third_stage_cap(model: &OtaMacromodel) -> f64 {
    let s3 = model.stage(2);
    let c = model.comp();
    let t3 = s3.ro * s3.co;
    c.ca * t3 / (c.ra * c.ca + t3)
}

fn ratio(i: f64, c: f64) -> f64 {
    if c > 0.0 {
        i / c
    } else {
        f64::INFINITY
    }
}

/// Per-stage slew limits and their minimum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlewPrediction {
    /// V/s.
    pub sr: f64,
    /// 1-based stage that sets `sr`.
    pub limiting_stage: usize,
    pub terms: [f64; 4],
}

impl SlewPrediction {
    fn from_terms(terms: [f64; 4]) -> Self {
        let (k, sr) = terms
            .iter()
            .copied()
            .enumerate()
            .fold((0, f64::INFINITY), |acc, (i, v)| if v < acc.1 { (i, v) } else { acc });
        Self {
            sr,
            limiting_stage: k + 1,
            terms,
        }
    }
}

/// Full slew expression. The stage-4 term uses the smaller of the sourcing
/// and sinking limits.
pub fn slew_rate_full(model: &OtaMacromodel, currents: &StageCurrents, load: LoadCondition) -> SlewPrediction {
    let s = model.stages();
    SlewPrediction::from_terms([
        ratio(currents.i1, model.comp().cm + s[0].co),
        ratio(currents.i2, s[1].co),
        ratio(currents.i3, third_stage_cap(model)),
        ratio(currents.i4.min(currents.i4_sink), load.cl),
    ])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimplifiedSlew {
    /// Third term `I3/((Ro3/Ra)·Co3)`, the limit of the full expression.
    pub prediction: SlewPrediction,
    /// Third term `I3/((Ro3/Ra)·Ca)` as commonly printed.
    pub ca_variant: SlewPrediction,
    pub warnings: Vec<String>,
}

/// Simplified slew expression, valid for `Ra·Ca ≫ Ro3·Co3` and `Cm ≫ Co1`.
/// Violations at a factor of 10 are reported as warnings.
pub fn slew_rate_simplified(model: &OtaMacromodel, currents: &StageCurrents, load: LoadCondition) -> SimplifiedSlew {
    let s = model.stages();
    let c = model.comp();
    let i4 = currents.i4.min(currents.i4_sink);
    let r = s[2].ro / c.ra;
    let t1 = ratio(currents.i1, c.cm);
    let t2 = ratio(currents.i2, s[1].co);
    let t4 = ratio(i4, load.cl);
    let mut warnings = Vec::new();
    let (raca, t3) = (c.ra * c.ca, s[2].ro * s[2].co);
    if raca < 10.0 * t3 {
        warnings.push(format!("Ra*Ca/(Ro3*Co3) = {:.3} < 10", raca / t3));
    }
    if c.cm < 10.0 * s[0].co {
        warnings.push(format!("Cm/Co1 = {:.3} < 10", c.cm / s[0].co));
    }
    SimplifiedSlew {
        prediction: SlewPrediction::from_terms([t1, t2, ratio(currents.i3, r * s[2].co), t4]),
        ca_variant: SlewPrediction::from_terms([t1, t2, ratio(currents.i3, r * c.ca), t4]),
        warnings,
    }
}

/// Figures extracted from a step response. All are recomputable from the
/// samples with [`step_metrics`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    /// Last sample.
    pub final_value: f64,
    /// Time of the last exit from the ±1% band around `final_value`.
    pub settling_time_1pct: f64,
    /// Peak excursion beyond `final_value`, relative to `|final_value|`.
    pub overshoot_fraction: f64,
    /// Mid-ramp slope (V/s) of a rising step, from the 20% and 50% crossings
    /// of `final_value`.
    pub sr_rising: Option<f64>,
    /// Same for a falling step, as a magnitude.
    pub sr_falling: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepResponse {
    pub t: Vec<f64>,
    pub v: Vec<f64>,
    pub metrics: StepMetrics,
}

fn first_crossing(t: &[f64], v: &[f64], level: f64) -> Option<f64> {
    let s = level.signum();
    let k = v.iter().position(|&x| x * s >= level * s)?;
    if k == 0 {
        return Some(t[0]);
    }
    let (a, b) = (v[k - 1], v[k]);
    Some(t[k - 1] + (level - a) / (b - a) * (t[k] - t[k - 1]))
}

/// Metrics from samples of a step that starts at `t[0]`.
pub fn step_metrics(t: &[f64], v: &[f64]) -> StepMetrics {
    let fin = *v.last().unwrap_or(&0.0);
    let band = 0.01 * fin.abs();
    let dev = |k: usize| (v[k] - fin).abs() - band;
    let settling = match (0..v.len()).rev().find(|&k| dev(k) > 0.0) {
        None => t.first().copied().unwrap_or(0.0),
        Some(k) => {
            let (a, b) = (dev(k), dev(k + 1));
            t[k] + a / (a - b) * (t[k + 1] - t[k])
        }
    };
    let overshoot = if fin == 0.0 {
        0.0
    } else {
        v.iter()
            .map(|&x| (x - fin) * fin.signum() / fin.abs())
            .fold(0.0, f64::max)
    };
    let slope = match (first_crossing(t, v, 0.2 * fin), first_crossing(t, v, 0.5 * fin)) {
        (Some(a), Some(b)) if b > a => Some(0.3 * fin.abs() / (b - a)),
        _ => None,
    };
    StepMetrics {
        final_value: fin,
        settling_time_1pct: settling,
        overshoot_fraction: overshoot,
        sr_rising: if fin > 0.0 { slope } else { None },
        sr_falling: if fin < 0.0 { slope } else { None },
    }
}

impl StepResponse {
    pub fn from_samples(t: Vec<f64>, v: Vec<f64>) -> Result<Self> {
        if t.len() != v.len() || t.len() < 2 {
            return Err(OtaError::Parse("step samples need matching t and v of length >= 2".into()));
        }
        if t.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(OtaError::Parse("step time grid is not strictly increasing".into()));
        }
        let metrics = step_metrics(&t, &v);
        Ok(Self { t, v, metrics })
    }

    /// CSV with header `t_s,v_out_v` and LF line endings.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t_s,v_out_v\n");
        for (t, v) in self.t.iter().zip(&self.v) {
            out.push_str(&format!("{t:e},{v:e}\n"));
        }
        out
    }
}

/// Tolerances of the adaptive integrator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegratorOptions {
    pub rtol: f64,
    /// Absolute tolerance as a fraction of the step amplitude.
    pub atol: f64,
    /// Largest step as a fraction of `t_end`.
    pub max_step: f64,
}

impl Default for IntegratorOptions {
    fn default() -> Self {
        Self {
            rtol: 1e-5,
            atol: 1e-6,
            max_step: 1e-3,
        }
    }
}

/// Right-hand side `f(x)` of `E·dx/dt = f(x)` and its Jacobian.
trait Rhs {
    fn eval(&self, x: &DVector<f64>, f: &mut DVector<f64>, jac: &mut DMatrix<f64>);
}

struct LinearRhs<'a> {
    a: &'a DMatrix<f64>,
    bu: DVector<f64>,
}

impl Rhs for LinearRhs<'_> {
    fn eval(&self, x: &DVector<f64>, f: &mut DVector<f64>, jac: &mut DMatrix<f64>) {
        *f = self.a * x + &self.bu;
        jac.copy_from(self.a);
    }
}

/// Saturating current source: `i = clamp(−(offset + Σ gm·x[ctrl]), −sink, source)`
/// injected into `node`.
struct Clamp {
    node: usize,
    terms: Vec<(usize, f64)>,
    offset: f64,
    sink: f64,
    source: f64,
}

struct ClampedRhs {
    a: DMatrix<f64>,
    clamps: Vec<Clamp>,
}

impl Rhs for ClampedRhs {
    fn eval(&self, x: &DVector<f64>, f: &mut DVector<f64>, jac: &mut DMatrix<f64>) {
        *f = &self.a * x;
        jac.copy_from(&self.a);
        for c in &self.clamps {
            let w = c.offset + c.terms.iter().map(|&(k, gm)| gm * x[k]).sum::<f64>();
            let i = -w;
            if i > c.source {
                f[c.node] += c.source;
            } else if i < -c.sink {
                f[c.node] -= c.sink;
            } else {
                f[c.node] += i;
                for &(k, gm) in &c.terms {
                    jac[(c.node, k)] -= gm;
                }
            }
        }
    }
}

fn weighted_max(v: &DVector<f64>, x: &DVector<f64>, y: &DVector<f64>, rtol: f64, atol: f64) -> f64 {
    (0..v.len())
        .map(|i| v[i].abs() / (atol + rtol * x[i].abs().max(y[i].abs())))
        .fold(0.0, f64::max)
}

struct Stage {
    x: DVector<f64>,
    f: DVector<f64>,
    jac: DMatrix<f64>,
}

/// Solves `E·X − hγ·f(X) = rhs` by Newton iteration from `guess`.
fn solve_stage<R: Rhs>(
    e: &DMatrix<f64>,
    rhs_fn: &R,
    hg: f64,
    rhs: &DVector<f64>,
    guess: &DVector<f64>,
    rtol: f64,
    atol: f64,
) -> Option<Stage> {
    let n = guess.len();
    let mut x = guess.clone();
    let mut f = DVector::zeros(n);
    let mut jac = DMatrix::zeros(n, n);
    for _ in 0..50 {
        rhs_fn.eval(&x, &mut f, &mut jac);
        let g = e * &x - &f * hg - rhs;
        let m = e - &jac * hg;
        let dx = m.lu().solve(&(-g))?;
        let small = weighted_max(&dx, &x, &x, rtol, atol) <= 1e-6;
        x += &dx;
        if small {
            rhs_fn.eval(&x, &mut f, &mut jac);
            return Some(Stage { x, f, jac });
        }
    }
    None
}

fn integrate<R: Rhs>(
    e: &DMatrix<f64>,
    rhs_fn: &R,
    out: usize,
    t_end: f64,
    scale: f64,
    opts: &IntegratorOptions,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = e.nrows();
    let gamma = 1.0 - std::f64::consts::FRAC_1_SQRT_2;
    let atol = opts.atol * scale;
    let rtol = opts.rtol;
    let h_max = t_end * opts.max_step;
    let h_min = t_end * 1e-15;
    let mut t = 0.0;
    let mut x = DVector::zeros(n);
    let mut h = t_end * 1e-7;
    let mut ts = vec![0.0];
    let mut vs = vec![0.0];
    while t < t_end {
        h = h.min(h_max).min(t_end - t);
        if h < h_min && t_end - t > h_min {
            return Err(OtaError::IntegratorStall { t, h });
        }
        let hg = h * gamma;
        let ex = e * &x;
        let Some(s1) = solve_stage(e, rhs_fn, hg, &ex, &x, rtol, atol) else {
            h *= 0.25;
            continue;
        };
        let rhs2 = &ex + &s1.f * (h * (1.0 - gamma));
        let Some(s2) = solve_stage(e, rhs_fn, hg, &rhs2, &s1.x, rtol, atol) else {
            h *= 0.25;
            continue;
        };
        let m = e - &s2.jac * hg;
        let est = (&s2.f - &s1.f) * hg;
        let err = match m.lu().solve(&est) {
            Some(v) => weighted_max(&v, &x, &s2.x, rtol, atol),
            None => f64::INFINITY,
        };
        let factor = if err > 0.0 { 0.9 * err.powf(-0.5) } else { 5.0 };
        if err <= 1.0 {
            t = if t_end - t - h <= h_min { t_end } else { t + h };
            x = s2.x;
            ts.push(t);
            vs.push(x[out]);
            h *= factor.clamp(0.2, 5.0);
        } else {
            h *= factor.clamp(0.1, 0.9);
        }
    }
    Ok((ts, vs))
}

fn check_step(amplitude: f64, t_end: f64) -> Result<()> {
    if amplitude == 0.0 || !amplitude.is_finite() {
        return Err(invalid("amplitude", amplitude));
    }
    if !(t_end > 0.0 && t_end.is_finite()) {
        return Err(invalid("t_end", t_end));
    }
    Ok(())
}

/// Step of height `amplitude` applied at `t = 0` to a closed-loop system
/// starting from rest. The output is `C·x`.
pub fn linear_step(sys: &DescriptorSystem, amplitude: f64, t_end: f64) -> Result<StepResponse> {
    linear_step_with(sys, amplitude, t_end, &IntegratorOptions::default())
}

pub fn linear_step_with(
    sys: &DescriptorSystem,
    amplitude: f64,
    t_end: f64,
    opts: &IntegratorOptions,
) -> Result<StepResponse> {
    check_step(amplitude, t_end)?;
    if !sys.loop_closed {
        return Err(OtaError::NoSolution("step response needs the closed-loop system".into()));
    }
    let out = sys
        .c
        .iter()
        .position(|&c| c != 0.0)
        .ok_or_else(|| OtaError::NoSolution("output vector is zero".into()))?;
    if sys.c.iter().enumerate().any(|(i, &c)| i != out && c != 0.0) || sys.c[out] != 1.0 {
        return Err(OtaError::NoSolution("output must select a single state".into()));
    }
    let rhs = LinearRhs {
        a: &sys.a,
        bu: &sys.b * amplitude,
    };
    let (t, v) = integrate(&sys.e, &rhs, out, t_end, amplitude.abs(), opts)?;
    StepResponse::from_samples(t, v)
}

/// Unity-gain follower step with every stage current saturated at its
/// limit. Stage 4 and the feed-forward path share one clamp because they
/// drive the same output device.
pub fn slew_limited_step(
    model: &OtaMacromodel,
    currents: &StageCurrents,
    load: LoadCondition,
    amplitude: f64,
    t_end: f64,
) -> Result<StepResponse> {
    check_step(amplitude, t_end)?;
    let (e, a) = passive_stamps(model, load.cl);
    let gm1 = model.stage(0).gm;
    let mut clamps = vec![Clamp {
        node: V1,
        terms: vec![(VOUT, -gm1)],
        offset: gm1 * amplitude,
        sink: currents.i1,
        source: currents.i1,
    }];
    let limits = [
        (currents.i2, currents.i2),
        (currents.i3, currents.i3),
        (currents.i4_sink, currents.i4),
    ];
    for t in transconductors(model) {
        if t.gm == 0.0 {
            continue;
        }
        match clamps.iter_mut().find(|c| c.node == t.node && c.node != V1) {
            Some(c) => c.terms.push((t.ctrl, t.gm)),
            None => {
                let (sink, source) = limits[t.stage - 1];
                clamps.push(Clamp {
                    node: t.node,
                    terms: vec![(t.ctrl, t.gm)],
                    offset: 0.0,
                    sink,
                    source,
                });
            }
        }
    }
    let rhs = ClampedRhs { a, clamps };
    let (t, v) = integrate(&e, &rhs, VOUT, t_end, amplitude.abs(), &IntegratorOptions::default())?;
    StepResponse::from_samples(t, v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::assemble_descriptor;
    use crate::macromodel::{build_model, CompensationParams, StageParams};

    fn first_order(w: f64) -> DescriptorSystem {
        DescriptorSystem {
            e: DMatrix::identity(1, 1),
            a: DMatrix::from_element(1, 1, -w),
            b: DVector::from_element(1, w),
            c: DVector::from_element(1, 1.0),
            labels: vec!["x"],
            loop_closed: true,
        }
    }

    fn second_order(w: f64, xi: f64) -> DescriptorSystem {
        DescriptorSystem {
            e: DMatrix::identity(2, 2),
            a: DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -w * w, -2.0 * xi * w]),
            b: DVector::from_vec(vec![0.0, w * w]),
            c: DVector::from_vec(vec![1.0, 0.0]),
            labels: vec!["x", "dx"],
            loop_closed: true,
        }
    }

    fn spec_model() -> OtaMacromodel {
        build_model(
            [
                StageParams::new(10e-6, 10e6, 1e-15),
                StageParams::new(10e-6, 10e6, 10e-15),
                StageParams::new(10e-6, 10e6, 10e-15),
                StageParams::new(10e-6, 10e6, 10e-15),
            ],
            CompensationParams::new(10e-12, 200e3, 1.2e-12),
            10e-6,
        )
        .unwrap()
    }

    #[test]
    fn first_order_settling() {
        let w = 1e5;
        let r = linear_step(&first_order(w), 1.0, 20.0 / w).unwrap();
        let expect = 100f64.ln() / w;
        assert!((r.metrics.settling_time_1pct / expect - 1.0).abs() < 1e-3);
        assert!(r.metrics.overshoot_fraction < 1e-9);
    }

    #[test]
    fn second_order_overshoot() {
        let xi: f64 = 0.5;
        let r = linear_step(&second_order(1e6, xi), 0.025, 30e-6).unwrap();
        let expect = (-std::f64::consts::PI * xi / (1.0 - xi * xi).sqrt()).exp();
        assert!((r.metrics.overshoot_fraction - expect).abs() < 1e-4);
    }

    #[test]
    fn final_value_and_negative_steps() {
        let r = linear_step(&first_order(1e3), -2.0, 0.05).unwrap();
        assert!((r.metrics.final_value + 2.0).abs() < 2e-6);
        assert!(r.metrics.sr_rising.is_none());
        // 20%..50% of a first-order response: 0.3·A / (ln(0.8/0.5)/w).
        let expect = 0.3 * 2.0 * 1e3 / (0.8f64 / 0.5).ln();
        assert!((r.metrics.sr_falling.unwrap() - expect).abs() / expect < 1e-3);
        assert_eq!(r.t[0], 0.0);
        assert!(r.t.windows(2).all(|w| w[1] > w[0]));
        assert_eq!(*r.t.last().unwrap(), 0.05);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(linear_step(&first_order(1.0), 0.0, 1.0).is_err());
        assert!(linear_step(&first_order(1.0), 1.0, -1.0).is_err());
        let mut open = first_order(1.0);
        open.loop_closed = false;
        assert!(linear_step(&open, 1.0, 1.0).is_err());
        assert!(StageCurrents::new(1.0, 0.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn metrics_recompute() {
        let r = linear_step(&second_order(1e6, 0.3), 1.0, 40e-6).unwrap();
        assert_eq!(step_metrics(&r.t, &r.v), r.metrics);
    }

    #[test]
    fn slew_terms_by_hand() {
        let m = spec_model();
        let cur = StageCurrents::new(1e-6, 1e-6, 1e-6, 1e-6).unwrap();
        let p = slew_rate_full(&m, &cur, LoadCondition::new(1e-9).unwrap());
        assert!((p.sr - 1e3).abs() < 1e-9);
        assert_eq!(p.limiting_stage, 4);
        assert!((p.terms[0] - 1e-6 / 10.001e-12).abs() / p.terms[0] < 1e-12);
        assert!((p.terms[1] - 1e8).abs() / 1e8 < 1e-12);
        let den3 = 1.2e-12 * 1e-7 / (2.4e-7 + 1e-7);
        assert!((p.terms[2] - 1e-6 / den3).abs() / p.terms[2] < 1e-12);
        for t in p.terms {
            assert!(p.sr <= t);
        }
    }

    #[test]
    fn slew_limits_and_linearity() {
        let m = spec_model();
        let load = LoadCondition::new(1e-9).unwrap();
        let big = StageCurrents::new(1e-6, 1e-6, 1e-6, 1e3).unwrap();
        assert_eq!(slew_rate_full(&m, &big, load).limiting_stage, 1);
        let cur = StageCurrents::with_sink(3e-6, 5e-6, 7e-6, 11e-6, 13e-6).unwrap();
        let half = cur.scaled(0.5).unwrap();
        assert_eq!(slew_rate_full(&m, &half, load).sr, 0.5 * slew_rate_full(&m, &cur, load).sr);
        let huge_cl = LoadCondition::new(1.0).unwrap();
        let eq = StageCurrents::new(1e-6, 1e-6, 1e-6, 1e-6).unwrap();
        assert_eq!(slew_rate_simplified(&m, &eq, huge_cl).prediction.sr, 1e-6);
    }

    #[test]
    fn simplified_agrees_in_its_limit() {
        let m = build_model(
            [StageParams::new(10e-6, 10e6, 0.0), StageParams::new(10e-6, 10e6, 10e-15),
             StageParams::new(10e-6, 1e6, 1e-16), StageParams::new(10e-6, 10e6, 10e-15)],
            CompensationParams::new(10e-12, 200e3, 10e-12),
            0.0,
        )
        .unwrap();
        let cur = StageCurrents::new(1e-6, 1e-9, 1e-12, 1e-3).unwrap();
        let load = LoadCondition::new(1e-12).unwrap();
        let full = slew_rate_full(&m, &cur, load);
        let simp = slew_rate_simplified(&m, &cur, load);
        let neglected = 1e6 * 1e-16 / (200e3 * 10e-12);
        assert!(simp.warnings.is_empty());
        for (a, b) in full.terms.iter().zip(simp.prediction.terms) {
            assert!((a / b - 1.0).abs() <= neglected * 1.01);
        }
    }

    #[test]
    fn simplified_warns_outside_its_limit() {
        let cur = StageCurrents::new(1e-6, 1e-6, 1e-6, 1e-6).unwrap();
        let m = build_model(
            [StageParams::new(10e-6, 10e6, 5e-12); 4],
            CompensationParams::new(10e-12, 200e3, 1.2e-12),
            0.0,
        )
        .unwrap();
        let s = slew_rate_simplified(&m, &cur, LoadCondition::new(1e-9).unwrap());
        assert_eq!(s.warnings.len(), 2);
        assert_ne!(s.prediction.terms[2], s.ca_variant.terms[2]);
    }

    #[test]
    fn clamps_idle_for_tiny_steps() {
        let m = spec_model();
        let load = LoadCondition::new(1e-9).unwrap();
        let cur = StageCurrents::new(1.0, 1.0, 1.0, 1.0).unwrap();
        let t_end = 40e-6;
        let lin = linear_step(&assemble_descriptor(&m, load, true), 1e-3, t_end).unwrap();
        let sat = slew_limited_step(&m, &cur, load, 1e-3, t_end).unwrap();
        assert_eq!(lin.t.len(), sat.t.len());
        for (a, b) in lin.v.iter().zip(&sat.v) {
            assert!((a - b).abs() <= 1e-6 * 1e-3);
        }
    }

    #[test]
    fn csv_format() {
        let r = StepResponse::from_samples(vec![0.0, 1e-6], vec![0.0, 0.025]).unwrap();
        assert_eq!(r.to_csv(), "t_s,v_out_v\n0e0,0e0\n1e-6,2.5e-2\n");
        assert!(StepResponse::from_samples(vec![0.0, 0.0], vec![0.0, 1.0]).is_err());
    }
}
