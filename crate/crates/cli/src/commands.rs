//! One function per subcommand. Each returns a [`Report`]; nothing here
//! writes to the terminal.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use serde_json::{json, Value};

use ota4_core::analysis::{
    approx_coeffs, cross_validate, load_range_approx, load_range_exact, phase_margin_from,
    second_order_params, stability_metrics_approx, stability_metrics_exact, stability_metrics_exact_on,
    RangeCriteria,
};
use ota4_core::engine::{ac_response, assemble_descriptor, detect_doublets, poles_zeros, FrequencyGrid};
use ota4_core::fom::{benchmark_report, fom_large, fom_small, BenchEntry, Dataset, FomInputs};
use ota4_core::macromodel::{check_validity, CheckKind, ModelFile};
use ota4_core::transient::{
    linear_step, slew_limited_step, slew_rate_full, slew_rate_simplified, SlewTargets, StageCurrents,
};
use ota4_core::units::format_eng;
use ota4_core::variability::{mc_statistics, sample_models, SigmaSpec};
use ota4_core::{Execution, LoadCondition, OtaError};

use crate::args::Criteria;
use crate::error::CliError;
use crate::output::{num, opt_num, Csv, Report};

/// The calibrated reference model as shipped.
pub const REFERENCE_JSON: &str = include_str!("../data/reference.json");

pub const DEFAULT_CL: [f64; 1] = [1e-9];
pub const POLES_CL: [f64; 2] = [10e-12, 1e-9];

pub struct Loaded {
    pub file: ModelFile,
    pub source: String,
}

pub fn load_model(path: Option<&Path>) -> Result<Loaded, CliError> {
    match path {
        None => Ok(Loaded {
            file: ModelFile::parse(REFERENCE_JSON).expect("shipped reference parses"),
            source: "builtin:reference".into(),
        }),
        Some(p) => {
            let shown = p.display().to_string();
            let text = std::fs::read_to_string(p).map_err(|e| CliError::Parse {
                path: shown.clone(),
                source: OtaError::Parse(format!("cannot read file: {e}")),
            })?;
            let file = ModelFile::parse(&text).map_err(|source| CliError::Parse {
                path: shown.clone(),
                source,
            })?;
            Ok(Loaded { file, source: shown })
        }
    }
}

fn load(cl: f64) -> Result<LoadCondition, CliError> {
    LoadCondition::new(cl).map_err(|e| CliError::Usage(e.to_string()))
}

fn inputs(model: &Loaded, cls: &[f64], extra: Value) -> Value {
    let mut v = json!({ "model": model.source, "cl_f": cls });
    if let (Value::Object(m), Value::Object(e)) = (&mut v, extra) {
        m.extend(e);
    }
    v
}

fn hz(w: f64) -> f64 {
    w / (2.0 * PI)
}

pub fn ac(model: &Loaded, cls: &[f64], grid: FrequencyGrid) -> Result<Report, CliError> {
    let m = &model.file.model;
    let freq = grid.points();
    let mut csv = Csv::new(&["cl_f", "freq_hz", "mag_db", "phase_deg"]);
    let mut results = Vec::new();
    for &cl in cls {
        let sys = assemble_descriptor(m, load(cl)?, false);
        let resp = ac_response(&sys, &freq, Execution::Parallel)?;
        let (mag, phase) = (resp.mag_db(), resp.phase_deg());
        for i in 0..freq.len() {
            csv.row(&[num(cl), num(freq[i]), num(mag[i]), num(phase[i])]);
        }
        let metrics = stability_metrics_exact_on(&sys, &grid, Execution::Parallel).ok();
        results.push(json!({
            "cl_f": cl,
            "metrics": metrics,
            "freq_hz": freq,
            "mag_db": mag,
            "phase_deg": phase,
        }));
    }
    Ok(Report {
        inputs: inputs(model, cls, json!({ "grid": grid })),
        results: Value::Array(results),
        csv: csv.finish(),
        text: None,
        warnings: vec![],
    })
}

pub fn poles(model: &Loaded, cls: &[f64], tol: f64) -> Result<Report, CliError> {
    let m = &model.file.model;
    let mut csv = Csv::new(&["cl_f", "kind", "index", "re_rad_s", "im_rad_s", "freq_hz", "doublet_with", "doublet_distance"]);
    let mut text = String::new();
    let mut results = Vec::new();
    for &cl in cls {
        let pz = detect_doublets(&poles_zeros(&assemble_descriptor(m, load(cl)?, false))?, tol);
        let _ = writeln!(text, "CL = {} F", num(cl));
        for (kind, set) in [("pole", &pz.poles), ("zero", &pz.zeros)] {
            for (i, p) in set.iter().enumerate() {
                let d = pz.doublets.iter().find(|d| if kind == "pole" { d.pole == i } else { d.zero == i });
                let partner = d.map(|d| if kind == "pole" { d.zero } else { d.pole });
                csv.row(&[
                    num(cl),
                    kind.into(),
                    i.to_string(),
                    num(p.re),
                    num(p.im),
                    num(hz(p.norm())),
                    partner.map_or_else(|| "N/A".into(), |k| k.to_string()),
                    opt_num(d.map(|d| d.distance)),
                ]);
                let _ = writeln!(
                    text,
                    "  {kind} {i}: {:>13.5e} {:+.5e}j rad/s  |f| = {:>11.4e} Hz{}",
                    p.re,
                    p.im,
                    hz(p.norm()),
                    d.map_or(String::new(), |d| format!("  doublet ({:.1}%)", 100.0 * d.distance))
                );
            }
        }
        let doublets: Vec<Value> = pz
            .doublets
            .iter()
            .map(|d| {
                json!({
                    "pole": d.pole,
                    "zero": d.zero,
                    "distance": d.distance,
                    "pole_hz": hz(pz.poles[d.pole].norm()),
                    "zero_hz": hz(pz.zeros[d.zero].norm()),
                })
            })
            .collect();
        let mut v = pz.to_json_value();
        v["doublets"] = Value::Array(doublets);
        v["cl_f"] = json!(cl);
        results.push(v);
    }
    Ok(Report {
        inputs: inputs(model, cls, json!({ "doublet_tol": tol })),
        results: Value::Array(results),
        csv: csv.finish(),
        text: Some(text),
        warnings: vec![],
    })
}

pub fn approx(model: &Loaded, cls: &[f64]) -> Result<Report, CliError> {
    let m = &model.file.model;
    let mut csv = Csv::new(&["cl_f", "quantity", "value"]);
    let mut results = Vec::new();
    let mut warnings = Vec::new();
    for &cl in cls {
        let l = load(cl)?;
        let c = approx_coeffs(m, l);
        let so = second_order_params(&c);
        let pm = phase_margin_from(&c);
        let validity = check_validity(m, l, 10.0);
        for f in validity.failures() {
            warnings.push(format!("CL {}: {} = {:.3} below margin 10", num(cl), f.name, f.ratio));
        }
        for (k, v) in [
            ("a0", c.a0),
            ("w_d_rad_s", c.w_d),
            ("w_gbw_rad_s", c.w_gbw),
            ("gbw_hz", hz(c.w_gbw)),
            ("a1", c.a1),
            ("b1", c.b1),
            ("b2", c.b2),
            ("b3", c.b3),
            ("b4", c.b4),
            ("w0_rad_s", so.w0),
            ("xi", so.xi),
            ("pm_deg", pm.full),
            ("pm_simplified_deg", pm.simplified),
        ] {
            csv.row(&[num(cl), k.into(), num(v)]);
        }
        results.push(json!({
            "cl_f": cl,
            "coefficients": c,
            "second_order": so,
            "phase_margin": pm,
            "validity": validity,
        }));
    }
    Ok(Report {
        inputs: inputs(model, cls, json!({})),
        results: Value::Array(results),
        csv: csv.finish(),
        text: None,
        warnings,
    })
}

pub fn xvalidate(model: &Loaded, cls: &[f64]) -> Result<Report, CliError> {
    let m = &model.file.model;
    let mut csv = Csv::new(&["cl_f", "quantity", "exact", "approx", "deviation"]);
    let mut results = Vec::new();
    let mut warnings = Vec::new();
    for &cl in cls {
        let cv = cross_validate(m, load(cl)?)?;
        for f in cv.validity.failures() {
            warnings.push(format!("CL {}: {} = {:.3} below margin 10", num(cl), f.name, f.ratio));
        }
        let (e, a, d) = (cv.exact, cv.approx, cv.deviations);
        for (k, x, y, dv) in [
            ("a0", e.a0, a.a0, d.a0),
            ("w_d_rad_s", e.w_d, a.w_d, d.w_d),
            ("w0_rad_s", e.w0, a.w0, d.w0),
            ("xi", e.xi, a.xi, d.xi),
            ("pm_deg", e.pm_deg, a.pm_deg, d.pm_deg),
            ("gbw_hz", e.gbw_hz, a.gbw_hz, d.gbw),
        ] {
            csv.row(&[num(cl), k.into(), num(x), num(y), num(dv)]);
        }
        results.push(serde_json::to_value(&cv).expect("report serialises"));
    }
    Ok(Report {
        inputs: inputs(model, cls, json!({})),
        results: Value::Array(results),
        csv: csv.finish(),
        text: None,
        warnings,
    })
}

fn criteria(c: &Criteria) -> RangeCriteria {
    RangeCriteria {
        xi_target: c.xi,
        pm_target_deg: c.pm,
    }
}

pub fn loadrange(model: &Loaded, c: &Criteria) -> Result<Report, CliError> {
    let m = &model.file.model;
    let crit = criteria(c);
    let exact = load_range_exact(m, crit, Execution::Parallel)?;
    let approx = load_range_approx(m, crit);
    let mut csv = Csv::new(&["method", "cl_min_f", "cl_max_f", "ratio"]);
    csv.row(&["exact".into(), num(exact.cl_min), num(exact.cl_max), num(exact.ratio())]);
    let mut warnings = Vec::new();
    let approx_json = match &approx {
        Ok(r) => {
            csv.row(&["approx".into(), num(r.cl_min), num(r.cl_max), num(r.ratio())]);
            json!({ "cl_min_f": r.cl_min, "cl_max_f": r.cl_max, "ratio": r.ratio() })
        }
        Err(e) => {
            warnings.push(format!("closed-form range: {e}"));
            json!({ "error": e.to_string() })
        }
    };
    Ok(Report {
        inputs: json!({ "model": model.source, "xi": c.xi, "pm_deg": c.pm }),
        results: json!({
            "exact": { "cl_min_f": exact.cl_min, "cl_max_f": exact.cl_max, "ratio": exact.ratio() },
            "approx": approx_json,
        }),
        csv: csv.finish(),
        text: None,
        warnings,
    })
}

pub fn step(model: &Loaded, cls: &[f64], amplitude: f64, tend: f64) -> Result<Report, CliError> {
    let m = &model.file.model;
    let mut csv = Csv::new(&["cl_f", "t_s", "v_out_v"]);
    let mut results = Vec::new();
    for &cl in cls {
        let r = linear_step(&assemble_descriptor(m, load(cl)?, true), amplitude, tend)?;
        for (t, v) in r.t.iter().zip(&r.v) {
            csv.row(&[num(cl), num(*t), num(*v)]);
        }
        results.push(json!({ "cl_f": cl, "metrics": r.metrics, "t_s": r.t, "v_out_v": r.v }));
    }
    Ok(Report {
        inputs: inputs(model, cls, json!({ "amplitude_v": amplitude, "t_end_s": tend })),
        results: Value::Array(results),
        csv: csv.finish(),
        text: None,
        warnings: vec![],
    })
}

pub fn slew(model: &Loaded, cls: &[f64], amplitude: f64, tend: f64) -> Result<Report, CliError> {
    let m = &model.file.model;
    let currents = StageCurrents::calibrated(m, &SlewTargets::default())?;
    let mut csv = Csv::new(&["cl_f", "quantity", "value"]);
    let mut results = Vec::new();
    let mut warnings = Vec::new();
    for &cl in cls {
        let l = load(cl)?;
        let full = slew_rate_full(m, &currents, l);
        let simple = slew_rate_simplified(m, &currents, l);
        warnings.extend(simple.warnings.iter().map(|w| format!("CL {}: {w}", num(cl))));
        let up = slew_limited_step(m, &currents, l, amplitude.abs(), tend)?.metrics;
        let down = slew_limited_step(m, &currents, l, -amplitude.abs(), tend)?.metrics;
        let mut rows = vec![
            ("sr_predicted_v_s", Some(full.sr)),
            ("limiting_stage", Some(full.limiting_stage as f64)),
            ("sr_simplified_v_s", Some(simple.prediction.sr)),
            ("sr_simplified_ca_v_s", Some(simple.ca_variant.sr)),
            ("sr_rising_sim_v_s", up.sr_rising),
            ("sr_falling_sim_v_s", down.sr_falling),
            ("settling_rising_s", Some(up.settling_time_1pct)),
            ("settling_falling_s", Some(down.settling_time_1pct)),
            ("overshoot_rising", Some(up.overshoot_fraction)),
            ("overshoot_falling", Some(down.overshoot_fraction)),
        ];
        for (i, t) in full.terms.iter().enumerate() {
            rows.push((["term1_v_s", "term2_v_s", "term3_v_s", "term4_v_s"][i], Some(*t)));
        }
        for (k, v) in rows {
            csv.row(&[num(cl), k.into(), opt_num(v)]);
        }
        results.push(json!({
            "cl_f": cl,
            "prediction": full,
            "simplified": simple,
            "rising": up,
            "falling": down,
        }));
    }
    Ok(Report {
        inputs: inputs(
            model,
            cls,
            json!({ "amplitude_v": amplitude.abs(), "t_end_s": tend, "currents_a": currents }),
        ),
        results: Value::Array(results),
        csv: csv.finish(),
        text: None,
        warnings,
    })
}

pub fn mc(model: &Loaded, cls: &[f64], seed: u64, n: usize, sigma: f64) -> Result<Report, CliError> {
    let spec = SigmaSpec::uniform(sigma).map_err(|e| CliError::Usage(e.to_string()))?;
    let models = sample_models(&model.file.model, &spec, n, seed, Execution::Parallel)?;
    let mut csv = Csv::new(&["cl_f", "metric", "mean", "sigma_over_mu", "min", "max", "n", "failures"]);
    let mut results = Vec::new();
    for &cl in cls {
        let l = load(cl)?;
        let exact = |mm: &ota4_core::OtaMacromodel| stability_metrics_exact(&assemble_descriptor(mm, l, false));
        let stats = [
            mc_statistics("a0_db", |mm| Ok(exact(mm)?.a0_db), &models, Execution::Parallel)?,
            mc_statistics("gbw_hz", |mm| Ok(exact(mm)?.gbw_hz), &models, Execution::Parallel)?,
            mc_statistics("pm_deg", |mm| Ok(exact(mm)?.pm_deg), &models, Execution::Parallel)?,
        ];
        for s in &stats {
            csv.row(&[
                num(cl),
                s.name.clone(),
                num(s.mean),
                num(s.sigma_over_mu),
                num(s.min),
                num(s.max),
                s.n.to_string(),
                s.failures.len().to_string(),
            ]);
        }
        results.push(json!({ "cl_f": cl, "metrics": stats }));
    }
    Ok(Report {
        inputs: inputs(model, cls, json!({ "seed": seed, "n": n, "sigma": spec })),
        results: Value::Array(results),
        csv: csv.finish(),
        text: None,
        warnings: vec![],
    })
}

pub struct FomArgs {
    pub inputs: FomInputs,
    pub stages: u32,
    pub vdd: f64,
    pub dataset: Option<std::path::PathBuf>,
}

pub fn fom(a: &FomArgs) -> Result<Report, CliError> {
    let dataset = match &a.dataset {
        None => Dataset::shipped(),
        Some(p) => {
            let shown = p.display().to_string();
            let text = std::fs::read_to_string(p).map_err(|e| CliError::Parse {
                path: shown.clone(),
                source: OtaError::Parse(format!("cannot read file: {e}")),
            })?;
            Dataset::from_json(&text).map_err(|source| CliError::Parse { path: shown, source })?
        }
    };
    let candidate = BenchEntry::candidate("candidate", a.stages, a.vdd, a.inputs)?;
    let report = benchmark_report(&dataset.entries, &candidate)?;
    let (s, l) = (fom_small(&a.inputs), fom_large(&a.inputs));
    let mut text = format!("FOM_S {s:.1}\nFOM_L {}\n\n", l.map_or_else(|| "N/A".into(), |v| format!("{v:.1}")));
    text.push_str(&report.to_text());
    Ok(Report {
        inputs: json!({ "fom_inputs": a.inputs, "n_stages": a.stages, "vdd_v": a.vdd }),
        results: json!({ "fom_s": s, "fom_l": l, "benchmark": report }),
        csv: report.to_csv(),
        text: Some(text),
        warnings: vec![],
    })
}

pub fn report(model: &Loaded, cls: &[f64], c: &Criteria) -> Result<Report, CliError> {
    let m = &model.file.model;
    let currents = StageCurrents::calibrated(m, &SlewTargets::default())?;
    let range = load_range_exact(m, criteria(c), Execution::Parallel);
    let mut csv = Csv::new(&["cl_f", "quantity", "value"]);
    let mut text = format!("model {}\n", model.source);
    let mut per_load = Vec::new();
    let mut warnings = Vec::new();
    for &cl in cls {
        let l = load(cl)?;
        let exact = stability_metrics_exact(&assemble_descriptor(m, l, false))?;
        let closed = stability_metrics_approx(m, l)?;
        let sr = slew_rate_full(m, &currents, l);
        let rows = [
            ("a0_db", Some(exact.a0_db)),
            ("gbw_hz", Some(exact.gbw_hz)),
            ("pm_deg", Some(exact.pm_deg)),
            ("gm_db", exact.gm_db),
            ("peaking_db", Some(exact.peaking_db)),
            ("gbw_closed_form_hz", Some(closed.gbw_hz)),
            ("pm_closed_form_deg", Some(closed.pm_deg)),
            ("sr_predicted_v_s", Some(sr.sr)),
        ];
        let _ = writeln!(text, "CL = {}F", format_eng(cl));
        for (k, v) in rows {
            csv.row(&[num(cl), k.into(), opt_num(v)]);
            let _ = writeln!(text, "  {k:<20} {}", v.map_or_else(|| "N/A".into(), format_eng));
        }
        per_load.push(json!({ "cl_f": cl, "exact": exact, "closed_form": closed, "slew": sr }));
    }
    let range_json = match &range {
        Ok(r) => {
            for (k, v) in [("cl_min_f", r.cl_min), ("cl_max_f", r.cl_max), ("load_ratio", r.ratio())] {
                csv.row(&["N/A".into(), k.into(), num(v)]);
                let _ = writeln!(text, "{k:<22} {}", format_eng(v));
            }
            json!({ "cl_min_f": r.cl_min, "cl_max_f": r.cl_max, "ratio": r.ratio() })
        }
        Err(e) => {
            warnings.push(format!("load range: {e}"));
            json!({ "error": e.to_string() })
        }
    };
    let mut fom_json = Value::Null;
    if let (Some(p), Ok(r)) = (model.file.power_dq, &range) {
        // Figures of merit at the upper edge of the load range.
        let l = load(r.cl_max)?;
        let gbw = stability_metrics_exact(&assemble_descriptor(m, l, false))?.gbw_hz;
        let sr = slew_rate_full(m, &currents, l).sr;
        let fi = FomInputs::new(gbw / 1e6, Some(sr / 1e6), r.cl_max * 1e12, p * 1e6)?;
        let (s, lg) = (fom_small(&fi), fom_large(&fi).unwrap_or(f64::NAN));
        for (k, v) in [("fom_s", s), ("fom_l", lg)] {
            csv.row(&[num(r.cl_max), k.into(), num(v)]);
            let _ = writeln!(text, "{k:<22} {v:.1}");
        }
        fom_json = json!({ "inputs": fi, "fom_s": s, "fom_l": lg });
    }
    Ok(Report {
        inputs: inputs(
            model,
            cls,
            json!({ "xi": c.xi, "pm_deg": c.pm, "power_dq_w": model.file.power_dq, "vdd_v": model.file.vdd }),
        ),
        results: json!({ "loads": per_load, "load_range": range_json, "fom": fom_json, "currents_a": currents }),
        csv: csv.finish(),
        text: Some(text),
        warnings,
    })
}

/// Exit status 1 when any large-gain or ordering assumption fails.
pub fn check(model: &Loaded, cls: &[f64], margin: f64) -> Result<(Report, bool), CliError> {
    let m = &model.file.model;
    let mut csv = Csv::new(&["cl_f", "check", "kind", "ratio", "pass"]);
    let mut results = Vec::new();
    let mut ok = true;
    let a0 = assemble_descriptor(m, load(cls[0])?, false).dc_gain()?.abs();
    for &cl in cls {
        let v = check_validity(m, load(cl)?, margin);
        ok &= v.assumptions_pass();
        for c in &v.checks {
            let kind = match c.kind {
                CheckKind::Assumption => "assumption",
                CheckKind::Separation => "separation",
                CheckKind::Coefficient => "coefficient",
            };
            csv.row(&[num(cl), c.name.clone(), kind.into(), num(c.ratio), c.pass.to_string()]);
        }
        results.push(json!({ "cl_f": cl, "validity": v }));
    }
    let report = Report {
        inputs: inputs(model, cls, json!({ "margin": margin })),
        results: json!({
            "dc_gain_db": 20.0 * a0.log10(),
            "assumptions_pass": ok,
            "loads": results,
            "model": serde_json::from_str::<Value>(&model.file.to_json()).expect("model JSON"),
        }),
        csv: csv.finish(),
        text: None,
        warnings: vec![],
    };
    Ok((report, ok))
}
