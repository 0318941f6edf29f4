//! Power-efficiency figures of merit and ranking against a comparison table.
//!
//! Units follow the usual table conventions: GBW in MHz, slew rate in V/µs,
//! load in pF and quiescent power in µW. `FOM_S = GBW·CL,max/P` and
//! `FOM_L = SR·CL,max/P`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, OtaError, Result};

/// Inputs of the two figures of merit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FomInputs {
    pub gbw_mhz: f64,
    /// Absent when the source does not report a slew rate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sr_v_per_us: Option<f64>,
    pub cl_max_pf: f64,
    pub power_uw: f64,
}

impl FomInputs {
    pub fn new(gbw_mhz: f64, sr_v_per_us: Option<f64>, cl_max_pf: f64, power_uw: f64) -> Result<Self> {
        Self {
            gbw_mhz,
            sr_v_per_us,
            cl_max_pf,
            power_uw,
        }
        .validated()
    }

    pub fn validated(self) -> Result<Self> {
        let pos = |name, v: f64| if v > 0.0 && v.is_finite() { Ok(()) } else { Err(invalid(name, v)) };
        pos("gbw", self.gbw_mhz)?;
        pos("clmax", self.cl_max_pf)?;
        pos("power", self.power_uw)?;
        if let Some(sr) = self.sr_v_per_us {
            pos("sr", sr)?;
        }
        Ok(self)
    }
}

/// `GBW·CL,max/P` in MHz·pF/µW.
pub fn fom_small(i: &FomInputs) -> f64 {
    i.gbw_mhz * i.cl_max_pf / i.power_uw
}

/// `SR·CL,max/P` in (V/µs)·pF/µW.
pub fn fom_large(i: &FomInputs) -> Option<f64> {
    i.sr_v_per_us.map(|sr| sr * i.cl_max_pf / i.power_uw)
}

/// A figure exactly as printed, e.g. `"0.57"`. Keeping the text preserves
/// its precision for the rounding check.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Printed(pub String);

impl Printed {
    pub fn value(&self) -> Result<f64> {
        self.0
            .trim()
            .parse()
            .map_err(|_| OtaError::Parse(format!("printed figure {:?} is not a number", self.0)))
    }

    /// Half a unit in the last printed digit.
    pub fn half_unit(&self) -> f64 {
        let decimals = self.0.trim().split_once('.').map_or(0, |(_, d)| d.len());
        0.5 * 10f64.powi(-(decimals as i32))
    }

    /// True if `recomputed` rounds to this figure or lies within `rel` of it.
    pub fn consistent_with(&self, recomputed: f64, rel: f64) -> Result<bool> {
        let p = self.value()?;
        let diff = (recomputed - p).abs();
        Ok(diff <= rel * p.abs() || diff <= self.half_unit() * (1.0 + 1e-9))
    }
}

/// One row of the comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchEntry {
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub venue: Option<String>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub this_work: bool,
    pub technology_nm: f64,
    pub n_stages: u32,
    pub vdd_v: f64,
    pub inputs: FomInputs,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fom_s: Option<Printed>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fom_l: Option<Printed>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub load_ratio: Option<f64>,
    /// Known inconsistency in the printed figures; suppresses the check.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub erratum: Option<String>,
    /// Columns carried without interpretation.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metadata: BTreeMap<String, String>,
}

impl BenchEntry {
    /// A candidate row with no printed figures.
    pub fn candidate(label: &str, n_stages: u32, vdd_v: f64, inputs: FomInputs) -> Result<Self> {
        Ok(Self {
            label: label.to_string(),
            venue: None,
            this_work: true,
            technology_nm: 0.0,
            n_stages,
            vdd_v,
            inputs: inputs.validated()?,
            fom_s: None,
            fom_l: None,
            load_ratio: None,
            erratum: None,
            metadata: BTreeMap::new(),
        })
    }

    /// FOM_L used for ranking: the printed value for rows with an erratum.
    fn ranking_fom_l(&self) -> Result<Option<f64>> {
        match (&self.erratum, &self.fom_l) {
            (Some(_), Some(p)) => Ok(Some(p.value()?)),
            _ => Ok(fom_large(&self.inputs)),
        }
    }

    /// Checks printed figures against recomputation at relative tolerance `rel`.
    pub fn check(&self, rel: f64) -> Result<()> {
        if self.erratum.is_some() {
            return Ok(());
        }
        let pairs = [
            (&self.fom_s, Some(fom_small(&self.inputs))),
            (&self.fom_l, fom_large(&self.inputs)),
        ];
        for (printed, recomputed) in pairs {
            if let (Some(p), Some(r)) = (printed, recomputed) {
                if !p.consistent_with(r, rel)? {
                    return Err(OtaError::InconsistentEntry {
                        label: self.label.clone(),
                        stored: p.value()?,
                        recomputed: r,
                    });
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dataset {
    pub entries: Vec<BenchEntry>,
}

const SHIPPED: &str = include_str!("../data/comparison.json");

impl Dataset {
    pub fn from_json(text: &str) -> Result<Self> {
        let d: Self = serde_json::from_str(text).map_err(|e| OtaError::Parse(format!("dataset: {e}")))?;
        for e in &d.entries {
            e.inputs.validated()?;
        }
        Ok(d)
    }

    /// The comparison table bundled with the crate.
    pub fn shipped() -> Self {
        Self::from_json(SHIPPED).expect("bundled dataset parses")
    }

    pub fn this_work(&self) -> Option<&BenchEntry> {
        self.entries.iter().find(|e| e.this_work)
    }

    pub fn prior_art(&self) -> Vec<BenchEntry> {
        self.entries.iter().filter(|e| !e.this_work).cloned().collect()
    }
}

/// Relative tolerance between printed and recomputed figures.
pub const CONSISTENCY_TOL: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedRow {
    pub label: String,
    pub candidate: bool,
    pub n_stages: u32,
    pub vdd_v: f64,
    pub fom_s: f64,
    pub fom_l: Option<f64>,
    pub fom_s_printed: Option<f64>,
    pub fom_l_printed: Option<f64>,
    pub rank_s: usize,
    pub rank_l: Option<usize>,
    pub best_s: bool,
    pub best_l: bool,
    pub erratum: Option<String>,
}

/// Candidate figure over the best and worst figure of a row group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Improvement {
    pub versus_best: f64,
    pub best_label: String,
    pub versus_worst: f64,
    pub worst_label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Improvements {
    pub fom_s: Option<Improvement>,
    pub fom_l: Option<Improvement>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub rows: Vec<RankedRow>,
    pub vs_four_stage: Improvements,
    /// Rows with a supply below 1 V.
    pub vs_sub_1v: Improvements,
}

fn improvement(candidate: Option<f64>, group: &[(&str, Option<f64>)]) -> Option<Improvement> {
    let c = candidate?;
    let vals: Vec<(&str, f64)> = group.iter().filter_map(|&(l, v)| v.map(|v| (l, v))).collect();
    let best = vals.iter().copied().max_by(|a, b| a.1.total_cmp(&b.1))?;
    let worst = vals.iter().copied().min_by(|a, b| a.1.total_cmp(&b.1))?;
    Some(Improvement {
        versus_best: c / best.1,
        best_label: best.0.to_string(),
        versus_worst: c / worst.1,
        worst_label: worst.0.to_string(),
    })
}

fn ranks(values: &[Option<f64>]) -> Vec<Option<usize>> {
    let mut order: Vec<usize> = (0..values.len()).filter(|&i| values[i].is_some()).collect();
    order.sort_by(|&a, &b| values[b].unwrap().total_cmp(&values[a].unwrap()));
    let mut out = vec![None; values.len()];
    for (r, i) in order.into_iter().enumerate() {
        out[i] = Some(r + 1);
    }
    out
}

/// Ranks `candidate` against `dataset` by recomputed figures and reports its
/// improvement over 4-stage rows and sub-1 V rows of prior art (rows not
/// marked `this_work`).
///
/// Dataset rows carrying the candidate's label are skipped. Printed figures
/// off by more than [`CONSISTENCY_TOL`] (and more than their rounding) raise
/// [`OtaError::InconsistentEntry`] unless the row has an erratum.
pub fn benchmark_report(dataset: &[BenchEntry], candidate: &BenchEntry) -> Result<BenchmarkReport> {
    candidate.inputs.validated()?;
    let others: Vec<&BenchEntry> = dataset.iter().filter(|e| e.label != candidate.label).collect();
    for e in &others {
        e.inputs.validated()?;
        e.check(CONSISTENCY_TOL)?;
    }
    candidate.check(CONSISTENCY_TOL)?;

    let mut all: Vec<&BenchEntry> = vec![candidate];
    all.extend(others.iter().copied());
    let fs: Vec<Option<f64>> = all.iter().map(|e| Some(fom_small(&e.inputs))).collect();
    let fl: Vec<Option<f64>> = all.iter().map(|e| e.ranking_fom_l()).collect::<Result<_>>()?;
    let rs = ranks(&fs);
    let rl = ranks(&fl);
    let mut rows = Vec::with_capacity(all.len());
    for (i, e) in all.iter().enumerate() {
        rows.push(RankedRow {
            label: e.label.clone(),
            candidate: i == 0,
            n_stages: e.n_stages,
            vdd_v: e.vdd_v,
            fom_s: fs[i].unwrap(),
            fom_l: fom_large(&e.inputs),
            fom_s_printed: e.fom_s.as_ref().map(Printed::value).transpose()?,
            fom_l_printed: e.fom_l.as_ref().map(Printed::value).transpose()?,
            rank_s: rs[i].unwrap(),
            rank_l: rl[i],
            best_s: rs[i] == Some(1),
            best_l: rl[i] == Some(1),
            erratum: e.erratum.clone(),
        });
    }
    rows.sort_by_key(|r| r.rank_s);

    let group = |keep: &dyn Fn(&BenchEntry) -> bool| -> Improvements {
        let idx: Vec<usize> = (1..all.len()).filter(|&i| !all[i].this_work && keep(all[i])).collect();
        let s: Vec<(&str, Option<f64>)> = idx.iter().map(|&i| (all[i].label.as_str(), fs[i])).collect();
        let l: Vec<(&str, Option<f64>)> = idx.iter().map(|&i| (all[i].label.as_str(), fl[i])).collect();
        Improvements {
            fom_s: improvement(fs[0], &s),
            fom_l: improvement(fl[0], &l),
        }
    };
    Ok(BenchmarkReport {
        vs_four_stage: group(&|e| e.n_stages == 4),
        vs_sub_1v: group(&|e| e.vdd_v < 1.0),
        rows,
    })
}

fn opt(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "N/A".to_string(), |x| format!("{x:.digits$}"))
}

impl BenchmarkReport {
    /// CSV with LF line endings.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "label,candidate,n_stages,vdd_v,fom_s,fom_l,fom_s_printed,fom_l_printed,rank_s,rank_l,erratum\n",
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{:.6},{},{},{},{},{},{}\n",
                r.label,
                r.candidate,
                r.n_stages,
                r.vdd_v,
                r.fom_s,
                opt(r.fom_l, 6),
                opt(r.fom_s_printed, 6),
                opt(r.fom_l_printed, 6),
                r.rank_s,
                r.rank_l.map_or_else(|| "N/A".to_string(), |v| v.to_string()),
                r.erratum.is_some(),
            ));
        }
        out
    }

    /// Aligned plain-text table; `*` marks the best value of a column.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "{:<10} {:>6} {:>6} {:>10} {:>10} {:>7} {:>7}\n",
            "label", "stages", "vdd", "FOM_S", "FOM_L", "rank_S", "rank_L"
        );
        for r in &self.rows {
            let mark = |b: bool| if b { "*" } else { " " };
            out.push_str(&format!(
                "{:<10} {:>6} {:>6.2} {:>9.2}{} {:>9}{} {:>7} {:>7}{}\n",
                r.label,
                r.n_stages,
                r.vdd_v,
                r.fom_s,
                mark(r.best_s),
                opt(r.fom_l, 2),
                mark(r.best_l),
                r.rank_s,
                r.rank_l.map_or_else(|| "-".to_string(), |v| v.to_string()),
                if r.erratum.is_some() { "  (erratum)" } else { "" },
            ));
        }
        let line = |name: &str, imp: &Improvements| {
            let fmt = |i: &Option<Improvement>| match i {
                Some(i) => format!(
                    "{:.2}x vs {} .. {:.1}x vs {}",
                    i.versus_best, i.best_label, i.versus_worst, i.worst_label
                ),
                None => "N/A".to_string(),
            };
            format!("{name}: FOM_S {}; FOM_L {}\n", fmt(&imp.fom_s), fmt(&imp.fom_l))
        };
        out.push_str(&line("vs 4-stage", &self.vs_four_stage));
        out.push_str(&line("vs sub-1V", &self.vs_sub_1v));
        out
    }
}
