//! Model fitting, the convergence gate and posterior summaries.

use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::data::StrataDataset;
use crate::design::ParameterVector;
use crate::error::{MpepError, Result};
use crate::likelihood::{sigmoid, Model};
use crate::sampler::{ess_bulk, quantile_mut, rhat, run_chains, stable_mean, PosteriorDraws, SamplerConfig};
use crate::table::Table;

pub const RHAT_THRESHOLD: f64 = 1.05;
pub const ESS_THRESHOLD: f64 = 400.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateResult {
    pub passed: bool,
    pub max_rhat: f64,
    pub worst_rhat_param: String,
    pub min_ess: f64,
    pub worst_ess_param: String,
}

/// R̂ below 1.05 and bulk ESS of at least 400 for every parameter.
pub fn convergence_gate(draws: &PosteriorDraws) -> GateResult {
    let mut g = GateResult {
        passed: false,
        max_rhat: f64::NEG_INFINITY,
        worst_rhat_param: String::new(),
        min_ess: f64::INFINITY,
        worst_ess_param: String::new(),
    };
    for (j, name) in draws.names().iter().enumerate() {
        let chains = draws.param(j);
        let r = rhat(&chains);
        let e = ess_bulk(&chains);
        if r > g.max_rhat || r.is_nan() {
            g.max_rhat = r;
            g.worst_rhat_param = name.clone();
        }
        if e < g.min_ess {
            g.min_ess = e;
            g.worst_ess_param = name.clone();
        }
    }
    g.passed = g.max_rhat < RHAT_THRESHOLD && g.min_ess >= ESS_THRESHOLD;
    g
}

/// Posterior summary of one scalar quantity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub name: String,
    pub mean: f64,
    pub median: f64,
    pub lower: f64,
    pub upper: f64,
    pub rhat: f64,
    pub ess: f64,
}

impl SummaryRow {
    /// Summarises per-chain series with an equal-tailed 95% interval.
    pub fn from_chains(name: impl Into<String>, chains: &[Vec<f64>]) -> Self {
        let mut pooled: Vec<f64> = chains.iter().flatten().copied().collect();
        let mean = stable_mean(&pooled);
        let median = quantile_mut(&mut pooled, 0.5);
        SummaryRow {
            name: name.into(),
            mean,
            median,
            lower: crate::sampler::quantile_sorted(&pooled, 0.025),
            upper: crate::sampler::quantile_sorted(&pooled, 0.975),
            rhat: rhat(chains),
            ess: ess_bulk(chains),
        }
    }

    pub fn covers(&self, value: f64) -> bool {
        self.lower <= value && value <= self.upper
    }
}

fn rows_table(rows: &[SummaryRow], scale: f64, digits: usize) -> Table {
    let mut t = Table::new(&["quantity", "mean", "median", "2.5%", "97.5%", "rhat", "ess"]);
    for r in rows {
        t.row(vec![
            r.name.clone(),
            format!("{:.*}", digits, r.mean * scale),
            format!("{:.*}", digits, r.median * scale),
            format!("{:.*}", digits, r.lower * scale),
            format!("{:.*}", digits, r.upper * scale),
            format!("{:.3}", r.rhat),
            format!("{:.0}", r.ess),
        ]);
    }
    t
}

/// Draw-wise derived quantities, `[quantity][chain][iter]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivedDraws {
    pub stratum_labels: Vec<String>,
    pub year_labels: Vec<String>,
    pub prev: Vec<Vec<Vec<f64>>>,
    pub prev_e: Vec<Vec<Vec<f64>>>,
    pub total: Vec<Vec<Vec<f64>>>,
    /// Sum of `N` over the strata of each year.
    pub year_total: Vec<Vec<Vec<f64>>>,
    /// Yearly `N` over the yearly general population.
    pub year_prev: Vec<Vec<Vec<f64>>>,
}

impl DerivedDraws {
    pub fn new(model: &Model, draws: &PosteriorDraws) -> Result<Self> {
        let levels = &model.design().levels;
        let keys: Vec<_> = levels.keys().collect();
        let n_s = keys.len();
        let n_y = levels.year.len();
        let mut year_pop = vec![0.0; n_y];
        for (s, k) in keys.iter().enumerate() {
            year_pop[k.year] += model.population(s);
        }
        let empty = |n: usize| vec![vec![Vec::with_capacity(draws.n_iter()); draws.n_chains()]; n];
        let mut out = DerivedDraws {
            stratum_labels: keys.iter().map(|k| levels.label(k)).collect(),
            year_labels: levels.year.clone(),
            prev: empty(n_s),
            prev_e: empty(n_s),
            total: empty(n_s),
            year_total: empty(n_y),
            year_prev: empty(n_y),
        };
        for c in 0..draws.n_chains() {
            for i in 0..draws.n_iter() {
                let lat = model.latent(&ParameterVector::new(draws.draw(c, i).to_vec()))?;
                let mut year = vec![0.0; n_y];
                for (s, k) in keys.iter().enumerate() {
                    out.prev[s][c].push(lat.prev_c[s] + lat.prev_e[s]);
                    out.prev_e[s][c].push(lat.prev_e[s]);
                    out.total[s][c].push(lat.total[s]);
                    year[k.year] += lat.total[s];
                }
                for y in 0..n_y {
                    out.year_total[y][c].push(year[y]);
                    out.year_prev[y][c].push(year[y] / year_pop[y]);
                }
            }
        }
        Ok(out)
    }
}

/// Posterior summary of parameters and derived prevalence quantities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    /// Unconstrained parameters followed by their constrained
    /// transforms (theta, pi, RE scales, match probability).
    pub parameters: Vec<SummaryRow>,
    pub stratum_prev: Vec<SummaryRow>,
    pub stratum_prev_e: Vec<SummaryRow>,
    pub stratum_total: Vec<SummaryRow>,
    pub year_total: Vec<SummaryRow>,
    pub year_prev: Vec<SummaryRow>,
}

fn constrained_name(name: &str) -> Option<(String, fn(f64) -> f64)> {
    if let Some(base) = name.strip_suffix(".log_theta") {
        return Some((format!("{base}.theta"), f64::exp));
    }
    if let Some(base) = name.strip_suffix(".logit_pi") {
        return Some((format!("{base}.pi"), sigmoid));
    }
    if let Some(base) = name.strip_suffix(".log_sigma") {
        return Some((format!("{base}.sigma"), f64::exp));
    }
    if name == "logit_pmatch" {
        return Some(("pmatch".into(), sigmoid));
    }
    None
}

/// Summarises every parameter and the derived quantities. Yearly totals
/// are summed draw by draw before quantiles are taken.
pub fn summarize(model: &Model, draws: &PosteriorDraws) -> Result<Summary> {
    if draws.n_iter() == 0 || draws.n_chains() == 0 {
        return Err(MpepError::InvalidInput("no draws to summarise".into()));
    }
    let mut parameters = Vec::with_capacity(draws.dim());
    let mut constrained = Vec::new();
    for (j, name) in draws.names().iter().enumerate() {
        let chains = draws.param(j);
        parameters.push(SummaryRow::from_chains(name.clone(), &chains));
        if let Some((cname, f)) = constrained_name(name) {
            let mapped: Vec<Vec<f64>> = chains.iter().map(|c| c.iter().map(|&v| f(v)).collect()).collect();
            constrained.push(SummaryRow::from_chains(cname, &mapped));
        }
    }
    parameters.extend(constrained);
    let d = DerivedDraws::new(model, draws)?;
    let rows = |labels: &[String], series: &[Vec<Vec<f64>>]| -> Vec<SummaryRow> {
        labels
            .iter()
            .zip(series)
            .map(|(l, s)| SummaryRow::from_chains(l.clone(), s))
            .collect()
    };
    Ok(Summary {
        parameters,
        stratum_prev: rows(&d.stratum_labels, &d.prev),
        stratum_prev_e: rows(&d.stratum_labels, &d.prev_e),
        stratum_total: rows(&d.stratum_labels, &d.total),
        year_total: rows(&d.year_labels, &d.year_total),
        year_prev: rows(&d.year_labels, &d.year_prev),
    })
}

impl Summary {
    pub fn parameter(&self, name: &str) -> Option<&SummaryRow> {
        self.parameters.iter().find(|r| r.name == name)
    }

    pub fn parameters_table(&self) -> Table {
        rows_table(&self.parameters, 1.0, 4)
    }

    /// Prevalence in percent.
    pub fn stratum_table(&self) -> Table {
        rows_table(&self.stratum_prev, 100.0, 3)
    }

    /// Yearly prevalence in percent.
    pub fn year_table(&self) -> Table {
        rows_table(&self.year_prev, 100.0, 3)
    }
}

/// Post-hoc counts of extra populations smaller than `t_d` and prevalence sums reaching one,
/// over all stored draws and strata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunWarnings {
    pub divergences: usize,
    pub divergence_rate: f64,
    pub divergence_flag: bool,
    pub n_e_below_t_d: usize,
    pub prevalence_sum_ge_one: usize,
    pub messages: Vec<String>,
}

pub fn run_warnings(model: &Model, draws: &PosteriorDraws) -> Result<RunWarnings> {
    let mut n_e_below_t_d = 0;
    let mut prevalence_sum_ge_one = 0;
    for q in draws.iter_draws() {
        let ev = model.evaluate(&ParameterVector::new(q.to_vec()))?;
        n_e_below_t_d += ev.counters.n_e_below_t_d;
        prevalence_sum_ge_one += ev.counters.prevalence_sum_ge_one;
    }
    let mut messages = Vec::new();
    if draws.divergence_flag() {
        messages.push(format!(
            "{} post-warmup divergences ({:.2}% of draws)",
            draws.divergences(),
            100.0 * draws.divergence_rate()
        ));
    }
    if n_e_below_t_d > 0 {
        messages.push(format!("extra population below t_d in {n_e_below_t_d} draw-strata"));
    }
    if prevalence_sum_ge_one > 0 {
        messages.push(format!("prevalence sum reached one in {prevalence_sum_ge_one} draw-strata"));
    }
    if model.design().event_types.len() < 2 {
        messages.push("a single event type does not allow for internal consistency checks".into());
    }
    Ok(RunWarnings {
        divergences: draws.divergences(),
        divergence_rate: draws.divergence_rate(),
        divergence_flag: draws.divergence_flag(),
        n_e_below_t_d,
        prevalence_sum_ge_one,
        messages,
    })
}

/// A fitted model with its draws and convergence verdict.
#[derive(Debug, Clone)]
pub struct Fit {
    pub model: Model,
    pub draws: PosteriorDraws,
    pub gate: GateResult,
}

impl Fit {
    pub fn summary(&self) -> Result<Summary> {
        summarize(&self.model, &self.draws)
    }

    pub fn warnings(&self) -> Result<RunWarnings> {
        run_warnings(&self.model, &self.draws)
    }
}

pub fn fit(config: &ModelConfig, dataset: &StrataDataset, sampler: &SamplerConfig) -> Result<Fit> {
    let model = Model::new(config, dataset)?;
    fit_model(model, sampler)
}

pub fn fit_model(model: Model, sampler: &SamplerConfig) -> Result<Fit> {
    let draws = run_chains(&model, sampler)?;
    let gate = convergence_gate(&draws);
    Ok(Fit { model, draws, gate })
}
