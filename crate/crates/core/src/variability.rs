//! Seeded Monte-Carlo variability of macromodel parameters.
//!
//! Sample `i` draws from ChaCha20 stream `i` of the seed, so every sample
//! depends only on `(seed, i)` and results do not depend on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, OtaError, Result};
use crate::exec::{self, Execution};
use crate::macromodel::{build_model, CompensationParams, OtaMacromodel, StageParams};

/// Relative standard deviation per parameter class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SigmaSpec {
    /// Applies to gm1..gm4 and gmf.
    pub gm: f64,
    pub ro: f64,
    pub co: f64,
    pub cm: f64,
    pub ra: f64,
    pub ca: f64,
}

impl SigmaSpec {
    pub fn uniform(sigma: f64) -> Result<Self> {
        Self {
            gm: sigma,
            ro: sigma,
            co: sigma,
            cm: sigma,
            ra: sigma,
            ca: sigma,
        }
        .validated()
    }

    pub fn zero() -> Self {
        Self {
            gm: 0.0,
            ro: 0.0,
            co: 0.0,
            cm: 0.0,
            ra: 0.0,
            ca: 0.0,
        }
    }

    pub fn validated(self) -> Result<Self> {
        for (name, v) in [
            ("sigma.gm", self.gm),
            ("sigma.ro", self.ro),
            ("sigma.co", self.co),
            ("sigma.cm", self.cm),
            ("sigma.ra", self.ra),
            ("sigma.ca", self.ca),
        ] {
            if !(0.0..0.5).contains(&v) {
                return Err(invalid(name, v));
            }
        }
        Ok(self)
    }
}

impl Default for SigmaSpec {
    fn default() -> Self {
        Self::uniform(0.02).expect("2% is in range")
    }
}

fn draw(rng: &mut ChaCha20Rng, base: f64, sigma: f64) -> f64 {
    if sigma == 0.0 {
        return base;
    }
    loop {
        let z: f64 = StandardNormal.sample(rng);
        let k = 1.0 + sigma * z;
        if k > 0.0 {
            return base * k;
        }
    }
}

/// Sample `i` of the family. Parameters are drawn in the fixed order
/// stage 1..4 (gm, Ro, Co), then Cm, Ra, Ca, gmf.
pub fn sample_model(base: &OtaMacromodel, sigma: &SigmaSpec, seed: u64, i: u64) -> Result<OtaMacromodel> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(i);
    let mut stages = [StageParams::new(0.0, 0.0, 0.0); 4];
    for (out, s) in stages.iter_mut().zip(base.stages()) {
        let gm = draw(&mut rng, s.gm, sigma.gm);
        let ro = draw(&mut rng, s.ro, sigma.ro);
        let co = draw(&mut rng, s.co, sigma.co);
        *out = StageParams::new(gm, ro, co);
    }
    let c = base.comp();
    let comp = CompensationParams::new(
        draw(&mut rng, c.cm, sigma.cm),
        draw(&mut rng, c.ra, sigma.ra),
        draw(&mut rng, c.ca, sigma.ca),
    );
    let gmf = draw(&mut rng, base.gmf(), sigma.gm);
    build_model(stages, comp, gmf)
}

pub fn sample_models(
    base: &OtaMacromodel,
    sigma: &SigmaSpec,
    n: usize,
    seed: u64,
    exec: Execution,
) -> Result<Vec<OtaMacromodel>> {
    if n < 1 {
        return Err(invalid("n", n as f64));
    }
    let sigma = sigma.validated()?;
    exec::map_range(exec, n, |i| sample_model(base, &sigma, seed, i as u64))
        .into_iter()
        .collect()
}

/// Summary of one metric over a sample set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricStats {
    pub name: String,
    pub mean: f64,
    /// Sample standard deviation over `|mean|`.
    pub sigma_over_mu: f64,
    pub min: f64,
    pub max: f64,
    /// Samples that produced a value.
    pub n: usize,
    /// Indices of samples whose metric failed.
    pub failures: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McReport {
    pub seed: u64,
    pub samples: usize,
    pub sigma: SigmaSpec,
    pub metrics: Vec<MetricStats>,
}

/// Sum of values in ascending order, so the result does not depend on the
/// order of the input.
fn ordered_sum(sorted: &[f64]) -> f64 {
    sorted.iter().sum()
}

/// Statistics of `values`, which need not be sorted. Needs at least two.
/// Identical values give exactly zero spread.
pub fn stats_of(name: &str, values: &[f64], failures: Vec<usize>) -> Result<MetricStats> {
    if values.len() < 2 {
        return Err(OtaError::NoSolution(format!(
            "metric {name}: {} usable samples, need at least 2",
            values.len()
        )));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let lo = v[0];
    let shifted: Vec<f64> = v.iter().map(|x| x - lo).collect();
    let mean = lo + ordered_sum(&shifted) / n;
    let mut sq: Vec<f64> = v.iter().map(|x| (x - mean) * (x - mean)).collect();
    sq.sort_by(f64::total_cmp);
    let var = ordered_sum(&sq) / (n - 1.0);
    Ok(MetricStats {
        name: name.to_string(),
        mean,
        sigma_over_mu: if mean == 0.0 { 0.0 } else { var.sqrt() / mean.abs() },
        min: v[0],
        max: v[v.len() - 1],
        n: v.len(),
        failures,
    })
}

/// Applies `metric` to every model and summarises the results. Samples
/// whose metric fails are excluded and listed in `failures`.
pub fn mc_statistics<F>(name: &str, metric: F, models: &[OtaMacromodel], exec: Execution) -> Result<MetricStats>
where
    F: Fn(&OtaMacromodel) -> Result<f64> + Sync + Send,
{
    if models.len() < 2 {
        return Err(invalid("models", models.len() as f64));
    }
    let results = exec::map(exec, models, |m| metric(m));
    let mut values = Vec::with_capacity(results.len());
    let mut failures = Vec::new();
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(v) if v.is_finite() => values.push(v),
            _ => failures.push(i),
        }
    }
    stats_of(name, &values, failures)
}
