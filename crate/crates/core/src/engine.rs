//! Exact linear analysis of the OTA network: descriptor assembly, AC sweeps,
//! poles and zeros, and pole–zero doublet detection.
//!
//! Unknowns are the node voltages `[v1, v2, v3, va, vout]`, where `va` is the
//! internal node of the `Ra`–`Ca` branch. The network obeys
//! `E·dx/dt = A·x + B·u`, `y = C·x`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, OtaError, Result};
use crate::exec::{self, Execution};
use crate::linalg::{generalized_eigenvalues, pencil_at, ComplexLu};
use crate::macromodel::{LoadCondition, OtaMacromodel};

pub const NODE_LABELS: [&str; 5] = ["v1", "v2", "v3", "va", "vout"];
pub const V1: usize = 0;
pub const V2: usize = 1;
pub const V3: usize = 2;
pub const VA: usize = 3;
pub const VOUT: usize = 4;

/// Generalized eigenvalues above this modulus (rad/s) are treated as infinite.
pub const INFINITE_MODE: f64 = 1e15;

/// Implicit state-space form of the network.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorSystem {
    pub e: DMatrix<f64>,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub c: DVector<f64>,
    pub labels: Vec<&'static str>,
    pub loop_closed: bool,
}

/// A voltage-controlled current source `i = -gm·v[ctrl]` injected into `node`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Transconductor {
    /// Index of the amplifier stage the source belongs to (0-based).
    pub stage: usize,
    pub ctrl: usize,
    pub node: usize,
    pub gm: f64,
}

/// Capacitance matrix and the conductance part of `A` (passive elements only).
pub(crate) fn passive_stamps(model: &OtaMacromodel, cl: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = NODE_LABELS.len();
    let mut e = DMatrix::zeros(n, n);
    let mut a = DMatrix::zeros(n, n);
    let comp = model.comp();
    for (stage, node) in model.stages().iter().zip([V1, V2, V3, VOUT]) {
        a[(node, node)] -= 1.0 / stage.ro;
        e[(node, node)] += stage.co;
    }
    e[(VOUT, VOUT)] += cl;
    e[(V1, V1)] += comp.cm;
    e[(VOUT, VOUT)] += comp.cm;
    e[(V1, VOUT)] -= comp.cm;
    e[(VOUT, V1)] -= comp.cm;
    let ga = 1.0 / comp.ra;
    a[(V3, V3)] -= ga;
    a[(V3, VA)] += ga;
    a[(VA, V3)] += ga;
    a[(VA, VA)] -= ga;
    e[(VA, VA)] += comp.ca;
    (e, a)
}

/// Controlled sources of stages 2–4 and the feed-forward path.
pub(crate) fn transconductors(model: &OtaMacromodel) -> [Transconductor; 4] {
    let s = model.stages();
    [
        Transconductor { stage: 1, ctrl: V1, node: V2, gm: s[1].gm },
        Transconductor { stage: 2, ctrl: V2, node: V3, gm: s[2].gm },
        Transconductor { stage: 3, ctrl: V3, node: VOUT, gm: s[3].gm },
        Transconductor { stage: 3, ctrl: V1, node: VOUT, gm: model.gmf() },
    ]
}

/// Stamps the network. With `loop_closed` the inverting input is tied to the
/// output (unity-gain follower) and `u` drives the non-inverting input.
pub fn assemble_descriptor(
    model: &OtaMacromodel,
    load: LoadCondition,
    loop_closed: bool,
) -> DescriptorSystem {
    let (e, mut a) = passive_stamps(model, load.cl);
    for t in transconductors(model) {
        a[(t.node, t.ctrl)] -= t.gm;
    }
    let gm1 = model.stage(0).gm;
    let mut b = DVector::zeros(NODE_LABELS.len());
    b[V1] = -gm1;
    if loop_closed {
        a[(V1, VOUT)] += gm1;
    }
    let mut c = DVector::zeros(NODE_LABELS.len());
    c[VOUT] = 1.0;
    DescriptorSystem {
        e,
        a,
        b,
        c,
        labels: NODE_LABELS.to_vec(),
        loop_closed,
    }
}

impl DescriptorSystem {
    pub fn order(&self) -> usize {
        self.a.nrows()
    }

    /// `C·(sE − A)⁻¹·B`, or `None` if the pencil is singular at `s`.
    pub fn transfer(&self, s: Complex64) -> Option<Complex64> {
        let lu = ComplexLu::new(&pencil_at(&self.e, &self.a, s))?;
        let rhs: Vec<Complex64> = self.b.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        let x = lu.solve(&rhs);
        Some(x.iter().zip(self.c.iter()).map(|(xi, ci)| xi * *ci).sum())
    }

    /// Response at `f` Hz.
    pub fn response_at(&self, f: f64) -> Result<Complex64> {
        let s = Complex64::new(0.0, 2.0 * std::f64::consts::PI * f);
        self.transfer(s).ok_or(OtaError::SingularAtFrequency(f))
    }

    /// Gain at DC.
    pub fn dc_gain(&self) -> Result<f64> {
        Ok(self.response_at(0.0)?.re)
    }
}

/// Logarithmic frequency grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrequencyGrid {
    pub fmin: f64,
    pub fmax: f64,
    pub points_per_decade: usize,
}

impl Default for FrequencyGrid {
    fn default() -> Self {
        Self {
            fmin: 1e-2,
            fmax: 1e8,
            points_per_decade: 200,
        }
    }
}

impl FrequencyGrid {
    pub fn new(fmin: f64, fmax: f64, points_per_decade: usize) -> Result<Self> {
        if !(fmin.is_finite() && fmin > 0.0) {
            return Err(invalid("fmin", fmin));
        }
        if !(fmax.is_finite() && fmax > fmin) {
            return Err(invalid("fmax", fmax));
        }
        if points_per_decade == 0 {
            return Err(invalid("points_per_decade", 0.0));
        }
        Ok(Self {
            fmin,
            fmax,
            points_per_decade,
        })
    }

    /// Grid points, both ends included.
    pub fn points(&self) -> Vec<f64> {
        let decades = (self.fmax / self.fmin).log10();
        let n = ((decades * self.points_per_decade as f64).round() as usize).max(1);
        let (l0, l1) = (self.fmin.log10(), self.fmax.log10());
        (0..=n)
            .map(|i| match i {
                0 => self.fmin,
                _ if i == n => self.fmax,
                _ => 10f64.powf(l0 + (l1 - l0) * i as f64 / n as f64),
            })
            .collect()
    }
}

/// Sampled complex frequency response.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyResponse {
    pub freq: Vec<f64>,
    pub h: Vec<Complex64>,
}

impl FrequencyResponse {
    pub fn mag_db(&self) -> Vec<f64> {
        self.h.iter().map(|h| 20.0 * h.norm().log10()).collect()
    }

    /// Phase in degrees, unwrapped along the grid from the principal value at
    /// the first point.
    pub fn phase_deg(&self) -> Vec<f64> {
        unwrap_phase(&self.h)
    }

    /// Bode table: `freq_hz,mag_db,phase_deg` with LF line endings.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("freq_hz,mag_db,phase_deg\n");
        for ((f, m), p) in self.freq.iter().zip(self.mag_db()).zip(self.phase_deg()) {
            out.push_str(&format!("{f:e},{m:.9},{p:.9}\n"));
        }
        out
    }
}

pub(crate) fn unwrap_phase(h: &[Complex64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(h.len());
    let mut prev: Option<(f64, Complex64)> = None;
    for &v in h {
        let deg = match prev {
            None => v.arg().to_degrees(),
            Some((p, pv)) => p + (v / pv).arg().to_degrees(),
        };
        out.push(deg);
        prev = Some((deg, v));
    }
    out
}

/// Evaluates the transfer function on `freq` (Hz).
///
/// Points are independent; with [`Execution::Parallel`] they are computed
/// concurrently and written back in grid order.
pub fn ac_response(
    sys: &DescriptorSystem,
    freq: &[f64],
    exec: Execution,
) -> Result<FrequencyResponse> {
    for (i, &f) in freq.iter().enumerate() {
        if !(f.is_finite() && f > 0.0) || (i > 0 && f <= freq[i - 1]) {
            return Err(invalid("grid", f));
        }
    }
    let h = exec::map(exec, freq, |&f| sys.response_at(f))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(FrequencyResponse {
        freq: freq.to_vec(),
        h,
    })
}

/// A pole paired with a nearby zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Doublet {
    pub pole: usize,
    pub zero: usize,
    /// `|p − z| / |p|`.
    pub distance: f64,
}

/// Poles and zeros in rad/s.
#[derive(Debug, Clone, PartialEq)]
pub struct PoleZeroSet {
    pub poles: Vec<Complex64>,
    pub zeros: Vec<Complex64>,
    pub doublets: Vec<Doublet>,
}

/// Finite poles and transmission zeros of the system.
pub fn poles_zeros(sys: &DescriptorSystem) -> Result<PoleZeroSet> {
    let poles = generalized_eigenvalues(&sys.a, &sys.e, INFINITE_MODE)?;
    let n = sys.order();
    let mut m = DMatrix::zeros(n + 1, n + 1);
    let mut k = DMatrix::zeros(n + 1, n + 1);
    m.view_mut((0, 0), (n, n)).copy_from(&sys.a);
    k.view_mut((0, 0), (n, n)).copy_from(&sys.e);
    for i in 0..n {
        m[(i, n)] = sys.b[i];
        m[(n, i)] = sys.c[i];
    }
    let zeros = generalized_eigenvalues(&m, &k, INFINITE_MODE)?;
    Ok(PoleZeroSet {
        poles,
        zeros,
        doublets: Vec::new(),
    })
}

/// Pairs zeros with their nearest unused pole when `|p − z|/|p| < rel_tol`.
///
/// Candidates are taken in order of increasing relative distance, ties broken
/// by absolute distance, so each pole and zero is used at most once.
pub fn detect_doublets(pz: &PoleZeroSet, rel_tol: f64) -> PoleZeroSet {
    let mut candidates = Vec::new();
    for (zi, z) in pz.zeros.iter().enumerate() {
        for (pi, p) in pz.poles.iter().enumerate() {
            let abs = (p - z).norm();
            let rel = if p.norm() > 0.0 { abs / p.norm() } else { f64::INFINITY };
            if rel < rel_tol {
                candidates.push((rel, abs, pi, zi));
            }
        }
    }
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let mut pole_used = vec![false; pz.poles.len()];
    let mut zero_used = vec![false; pz.zeros.len()];
    let mut doublets = Vec::new();
    for (rel, _, pi, zi) in candidates {
        if !pole_used[pi] && !zero_used[zi] {
            pole_used[pi] = true;
            zero_used[zi] = true;
            doublets.push(Doublet {
                pole: pi,
                zero: zi,
                distance: rel,
            });
        }
    }
    doublets.sort_by_key(|d| d.pole);
    PoleZeroSet {
        poles: pz.poles.clone(),
        zeros: pz.zeros.clone(),
        doublets,
    }
}

#[derive(Serialize)]
struct JsonComplex {
    re: f64,
    im: f64,
}

fn json_list(values: &[Complex64]) -> Vec<JsonComplex> {
    values
        .iter()
        .map(|c| JsonComplex { re: c.re, im: c.im })
        .collect()
}

impl PoleZeroSet {
    /// `{"poles": [{re, im}], "zeros": [...], "doublets": [...]}` in rad/s.
    pub fn to_json_value(&self) -> serde_json::Value {
        serde_json::json!({
            "poles": json_list(&self.poles),
            "zeros": json_list(&self.zeros),
            "doublets": self.doublets,
        })
    }
}
