//! Stage-level small-signal model of the OTA, its validity checks, reference
//! calibration and the JSON model-file format.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::analysis;
use crate::engine;
use crate::error::{invalid, OtaError, Result};
use crate::units::parse_eng;

/// One gain stage: transconductance, output resistance and output capacitance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageParams {
    pub gm: f64,
    pub ro: f64,
    pub co: f64,
}

impl StageParams {
    pub fn new(gm: f64, ro: f64, co: f64) -> Self {
        Self { gm, ro, co }
    }

    /// Intrinsic voltage gain `gm·Ro`.
    pub fn gain(&self) -> f64 {
        self.gm * self.ro
    }
}

/// Miller capacitor and the series `Ra`–`Ca` shunt at the third-stage output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompensationParams {
    pub cm: f64,
    pub ra: f64,
    pub ca: f64,
}

impl CompensationParams {
    pub fn new(cm: f64, ra: f64, ca: f64) -> Self {
        Self { cm, ra, ca }
    }
}

/// Sign convention of the controlled sources.
///
/// Every stage sinks current proportional to its input voltage (inverting
/// transconductor). With four inversions the open-loop gain from the
/// differential input to the output is positive, and the feed-forward source
/// driven by the first-stage output pushes current into the output node with
/// the same sign as the cascade of stages 2–4.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Polarity {
    pub inverting: [bool; 4],
    pub feedforward_aids_cascade: bool,
}

impl Polarity {
    pub const STANDARD: Polarity = Polarity {
        inverting: [true; 4],
        feedforward_aids_cascade: true,
    };
}

impl Default for Polarity {
    fn default() -> Self {
        Self::STANDARD
    }
}

/// Validated OTA macromodel. Construct through [`build_model`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OtaMacromodel {
    stages: [StageParams; 4],
    comp: CompensationParams,
    gmf: f64,
    polarity: Polarity,
}

impl OtaMacromodel {
    pub fn stages(&self) -> &[StageParams; 4] {
        &self.stages
    }

    /// Stage `i` counted from zero (stage 1 of the amplifier is `stage(0)`).
    pub fn stage(&self, i: usize) -> StageParams {
        self.stages[i]
    }

    pub fn comp(&self) -> CompensationParams {
        self.comp
    }

    pub fn gmf(&self) -> f64 {
        self.gmf
    }

    pub fn polarity(&self) -> Polarity {
        self.polarity
    }

    pub fn with_stage(&self, i: usize, stage: StageParams) -> Result<Self> {
        let mut stages = self.stages;
        stages[i] = stage;
        build_model(stages, self.comp, self.gmf)
    }

    pub fn with_comp(&self, comp: CompensationParams) -> Result<Self> {
        build_model(self.stages, comp, self.gmf)
    }

    pub fn with_gmf(&self, gmf: f64) -> Result<Self> {
        build_model(self.stages, self.comp, gmf)
    }
}

/// Capacitive load at the output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoadCondition {
    pub cl: f64,
}

impl LoadCondition {
    pub fn new(cl: f64) -> Result<Self> {
        if !(cl.is_finite() && cl > 0.0) {
            return Err(invalid("CL", cl));
        }
        Ok(Self { cl })
    }
}

fn require(name: &str, value: f64, allow_zero: bool) -> Result<()> {
    let ok = value.is_finite() && (value > 0.0 || (allow_zero && value == 0.0));
    if ok {
        Ok(())
    } else {
        Err(invalid(name, value))
    }
}

/// Builds a model, rejecting non-finite or non-positive values.
///
/// `Co` of each stage and `gmf` may be zero.
pub fn build_model(
    stages: [StageParams; 4],
    comp: CompensationParams,
    gmf: f64,
) -> Result<OtaMacromodel> {
    for (i, s) in stages.iter().enumerate() {
        require(&format!("gm{}", i + 1), s.gm, false)?;
        require(&format!("Ro{}", i + 1), s.ro, false)?;
        require(&format!("Co{}", i + 1), s.co, true)?;
    }
    require("Cm", comp.cm, false)?;
    require("Ra", comp.ra, false)?;
    require("Ca", comp.ca, false)?;
    require("gmf", gmf, true)?;
    Ok(OtaMacromodel {
        stages,
        comp,
        gmf,
        polarity: Polarity::STANDARD,
    })
}

/// Which family a validity check belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckKind {
    /// Large-gain and component-ordering assumptions behind the closed forms.
    Assumption,
    /// High-frequency time constants kept above the unity-gain frequency.
    Separation,
    /// Orderings among the closed-form coefficients themselves.
    Coefficient,
}

/// One assumption with its numeric ratio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidityCheck {
    pub name: String,
    pub kind: CheckKind,
    pub ratio: f64,
    pub pass: bool,
}

/// Outcome of [`check_validity`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidityReport {
    pub margin: f64,
    pub checks: Vec<ValidityCheck>,
}

impl ValidityReport {
    /// True when every check holds.
    pub fn passes(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    /// True when the checks of kind [`CheckKind::Assumption`] hold.
    pub fn assumptions_pass(&self) -> bool {
        self.checks
            .iter()
            .filter(|c| c.kind == CheckKind::Assumption)
            .all(|c| c.pass)
    }

    pub fn failures(&self) -> impl Iterator<Item = &ValidityCheck> {
        self.checks.iter().filter(|c| !c.pass)
    }

    pub fn get(&self, name: &str) -> Option<&ValidityCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        f64::INFINITY
    } else {
        num / den
    }
}

/// Evaluates every small-signal assumption as a ratio against `margin`.
///
/// Margins below 1 are raised to 1.
pub fn check_validity(model: &OtaMacromodel, load: LoadCondition, margin: f64) -> ValidityReport {
    let margin = if margin.is_nan() { 1.0 } else { margin.max(1.0) };
    let s = model.stages;
    let c = model.comp;
    let coeffs = analysis::approx_coeffs(model, load);
    let mut checks = Vec::with_capacity(21);
    let mut push = |name: String, kind: CheckKind, r: f64| {
        checks.push(ValidityCheck {
            name,
            kind,
            ratio: r,
            pass: r >= margin,
        })
    };
    for (i, st) in s.iter().enumerate() {
        push(format!("gm{0}*Ro{0}", i + 1), CheckKind::Assumption, st.gain());
    }
    push("CL/Cm".into(), CheckKind::Assumption, load.cl / c.cm);
    for (i, st) in s.iter().enumerate() {
        push(format!("Ro{}/Ra", i + 1), CheckKind::Assumption, st.ro / c.ra);
    }
    for (i, st) in s.iter().enumerate() {
        push(format!("Ca/Co{}", i + 1), CheckKind::Assumption, ratio(c.ca, st.co));
    }
    let w = coeffs.w_gbw;
    push("1/(b4*w_gbw)".into(), CheckKind::Separation, ratio(1.0, coeffs.b4 * w));
    push("1/(Ra*Ca*w_gbw)".into(), CheckKind::Separation, ratio(1.0, coeffs.b1 * w));
    push("b1/b2".into(), CheckKind::Coefficient, ratio(coeffs.b1, coeffs.b2));
    push(
        "Ra*Ca/(Ro2*Co2)".into(),
        CheckKind::Coefficient,
        ratio(coeffs.b1, s[1].ro * s[1].co),
    );
    push(
        "CL/(gmf*Ro2*Co2)".into(),
        CheckKind::Coefficient,
        ratio(load.cl, model.gmf * s[1].ro * s[1].co),
    );
    push("b2/b4".into(), CheckKind::Coefficient, ratio(coeffs.b2, coeffs.b4));
    push(
        "sqrt(b3)/b4".into(),
        CheckKind::Coefficient,
        if coeffs.b3 == 0.0 && coeffs.b4 == 0.0 {
            f64::INFINITY
        } else {
            ratio(coeffs.b3.sqrt(), coeffs.b4)
        },
    );
    ValidityReport { margin, checks }
}

/// Measured figures the reference model is calibrated to.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationTargets {
    /// Unity-gain frequency at [`CalibrationDefaults::cl_gbw`], in Hz.
    pub gbw_target: f64,
    /// Open-loop DC gain in dB.
    pub a0_target: f64,
    pub cm: f64,
    pub ra: f64,
    pub ca: f64,
    /// Quiescent power in W.
    pub power_dq: f64,
    pub vdd: f64,
}

impl Default for CalibrationTargets {
    fn default() -> Self {
        Self {
            gbw_target: 192e3,
            a0_target: 119.3,
            cm: 10.5e-12,
            ra: 200e3,
            ca: 1.2e-12,
            power_dq: 1.65e-6,
            vdd: 0.6,
        }
    }
}

/// Free parameters that the targets do not pin down.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationDefaults {
    /// Output resistance of stages 2–4.
    pub ro: f64,
    /// Output capacitances of stages 1–4.
    pub co: [f64; 4],
    /// `gmf / gm4`.
    pub gmf_ratio: f64,
    /// Load at which the GBW target applies.
    pub cl_gbw: f64,
    pub margin: f64,
}

impl Default for CalibrationDefaults {
    fn default() -> Self {
        Self {
            ro: 2.4e6,
            co: [10e-15, 2e-15, 0.5e-15, 50e-15],
            gmf_ratio: 1.0,
            cl_gbw: 1e-9,
            margin: 10.0,
        }
    }
}

/// Per-stage gain `G` with `G^4 + r·G^2 = a0`, i.e. equal stage gains and
/// `gmf = r·gm4`.
pub fn equal_stage_gain(a0: f64, gmf_ratio: f64) -> f64 {
    let r = gmf_ratio;
    let g2 = 0.5 * (-r + (r * r + 4.0 * a0).sqrt());
    g2.sqrt()
}

fn reference_with_gm1(
    targets: &CalibrationTargets,
    defaults: &CalibrationDefaults,
    gain: f64,
    gm1: f64,
) -> Result<OtaMacromodel> {
    let gm = gain / defaults.ro;
    let stages = [
        StageParams::new(gm1, gain / gm1, defaults.co[0]),
        StageParams::new(gm, defaults.ro, defaults.co[1]),
        StageParams::new(gm, defaults.ro, defaults.co[2]),
        StageParams::new(gm, defaults.ro, defaults.co[3]),
    ];
    let comp = CompensationParams::new(targets.cm, targets.ra, targets.ca);
    build_model(stages, comp, defaults.gmf_ratio * gm)
}

/// Calibrates with [`CalibrationDefaults::default`].
pub fn calibrate_reference(targets: &CalibrationTargets) -> Result<OtaMacromodel> {
    calibrate_with(targets, &CalibrationDefaults::default())
}

/// Builds the reference model.
///
/// All four stages get the same intrinsic gain, chosen so the exact DC gain
/// (including the feed-forward path) equals `a0_target`. `gm1` starts from
/// `2π·gbw·Cm` and is then adjusted until the exact unity-gain frequency at
/// `cl_gbw` equals `gbw_target`. `Ro1 = G/gm1`.
pub fn calibrate_with(
    targets: &CalibrationTargets,
    defaults: &CalibrationDefaults,
) -> Result<OtaMacromodel> {
    for (name, v) in [
        ("gbw_target", targets.gbw_target),
        ("cm", targets.cm),
        ("ra", targets.ra),
        ("ca", targets.ca),
        ("power_dq", targets.power_dq),
        ("vdd", targets.vdd),
        ("ro", defaults.ro),
        ("cl_gbw", defaults.cl_gbw),
    ] {
        require(name, v, false)?;
    }
    require("a0_target", targets.a0_target, true)?;
    require("gmf_ratio", defaults.gmf_ratio, true)?;
    for (i, co) in defaults.co.iter().enumerate() {
        require(&format!("Co{}", i + 1), *co, true)?;
    }

    let a0 = 10f64.powf(targets.a0_target / 20.0);
    let gain = equal_stage_gain(a0, defaults.gmf_ratio);
    let load = LoadCondition::new(defaults.cl_gbw)?;
    let seed = 2.0 * std::f64::consts::PI * targets.gbw_target * targets.cm;

    let gate = |m: &OtaMacromodel| -> Result<()> {
        let report = check_validity(m, load, defaults.margin);
        if report.assumptions_pass() {
            return Ok(());
        }
        let names: Vec<String> = report
            .failures()
            .filter(|c| c.kind == CheckKind::Assumption)
            .map(|c| format!("{} = {:.3}", c.name, c.ratio))
            .collect();
        Err(OtaError::CalibrationInfeasible(format!(
            "assumptions fail at margin {}: {}",
            defaults.margin,
            names.join(", ")
        )))
    };
    gate(&reference_with_gm1(targets, defaults, gain, seed)?)?;

    let gbw_of = |gm1: f64| -> Result<f64> {
        let m = reference_with_gm1(targets, defaults, gain, gm1)?;
        let sys = engine::assemble_descriptor(&m, load, false);
        analysis::gbw_exact(&sys)
    };
    let infeasible = |e: OtaError| OtaError::CalibrationInfeasible(format!("GBW solve: {e}"));

    let target = targets.gbw_target;
    let mut lo = (seed / 16.0).ln();
    let mut hi = (seed * 16.0).ln();
    if gbw_of(lo.exp()).map_err(infeasible)? >= target || gbw_of(hi.exp()).map_err(infeasible)? <= target {
        return Err(OtaError::CalibrationInfeasible(
            "GBW target not bracketed within 16x of gm1 = 2*pi*gbw*Cm".into(),
        ));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if gbw_of(mid.exp()).map_err(infeasible)? < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let model = reference_with_gm1(targets, defaults, gain, (0.5 * (lo + hi)).exp())?;
    gate(&model)?;
    Ok(model)
}

/// The model calibrated to the default targets, computed once.
pub fn reference_model() -> &'static OtaMacromodel {
    static REFERENCE: OnceLock<OtaMacromodel> = OnceLock::new();
    REFERENCE.get_or_init(|| {
        calibrate_reference(&CalibrationTargets::default())
            .expect("default calibration targets are feasible")
    })
}

/// A model file: the macromodel plus optional supply data.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub model: OtaMacromodel,
    pub power_dq: Option<f64>,
    pub vdd: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum Quantity {
    Number(f64),
    Text(String),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawStage {
    gm: Quantity,
    ro: Quantity,
    co: Quantity,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawComp {
    cm: Quantity,
    ra: Quantity,
    ca: Quantity,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModelFile {
    stages: Vec<RawStage>,
    comp: RawComp,
    gmf: Quantity,
    #[serde(default)]
    power_dq: Option<Quantity>,
    #[serde(default)]
    vdd: Option<Quantity>,
}

fn quantity(q: &Quantity, key: &str) -> Result<f64> {
    match q {
        Quantity::Number(v) => Ok(*v),
        Quantity::Text(t) => {
            parse_eng(t).map_err(|e| OtaError::Parse(format!("key {key}: {e}")))
        }
    }
}

#[derive(Serialize)]
struct OutStage {
    gm: f64,
    ro: f64,
    co: f64,
}

#[derive(Serialize)]
struct OutModelFile<'a> {
    stages: Vec<OutStage>,
    comp: &'a CompensationParams,
    gmf: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    power_dq: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    vdd: Option<f64>,
}

impl ModelFile {
    /// Parses the JSON model format. Unknown keys are rejected; values may be
    /// SI numbers or strings with engineering suffixes.
    pub fn parse(text: &str) -> Result<Self> {
        let raw: RawModelFile = serde_json::from_str(text).map_err(|e| {
            OtaError::Parse(format!("{e}"))
        })?;
        if raw.stages.len() != 4 {
            return Err(OtaError::Parse(format!(
                "key stages: exactly 4 stages required, found {}",
                raw.stages.len()
            )));
        }
        let mut stages = [StageParams::new(0.0, 0.0, 0.0); 4];
        for (i, (dst, src)) in stages.iter_mut().zip(&raw.stages).enumerate() {
            *dst = StageParams::new(
                quantity(&src.gm, &format!("stages[{i}].gm"))?,
                quantity(&src.ro, &format!("stages[{i}].ro"))?,
                quantity(&src.co, &format!("stages[{i}].co"))?,
            );
        }
        let comp = CompensationParams::new(
            quantity(&raw.comp.cm, "comp.cm")?,
            quantity(&raw.comp.ra, "comp.ra")?,
            quantity(&raw.comp.ca, "comp.ca")?,
        );
        let gmf = quantity(&raw.gmf, "gmf")?;
        let power_dq = raw.power_dq.as_ref().map(|q| quantity(q, "power_dq")).transpose()?;
        let vdd = raw.vdd.as_ref().map(|q| quantity(q, "vdd")).transpose()?;
        let model = build_model(stages, comp, gmf).map_err(|e| OtaError::Parse(e.to_string()))?;
        for (key, v) in [("power_dq", power_dq), ("vdd", vdd)] {
            if let Some(v) = v {
                require(key, v, false).map_err(|e| OtaError::Parse(e.to_string()))?;
            }
        }
        Ok(Self {
            model,
            power_dq,
            vdd,
        })
    }

    /// Serialises with SI numbers; parsing the output restores the model exactly.
    pub fn to_json(&self) -> String {
        let out = OutModelFile {
            stages: self
                .model
                .stages
                .iter()
                .map(|s| OutStage {
                    gm: s.gm,
                    ro: s.ro,
                    co: s.co,
                })
                .collect(),
            comp: &self.model.comp,
            gmf: self.model.gmf,
            power_dq: self.power_dq,
            vdd: self.vdd,
        };
        let mut text = serde_json::to_string_pretty(&out).expect("plain data serialises");
        text.push('\n');
        text
    }
}
