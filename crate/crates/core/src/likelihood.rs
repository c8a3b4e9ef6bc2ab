//! Joint log-posterior and its exact gradient.
//!
//! Each stratum contributes a binomial term for the cohort size, Poisson-type
//! terms for cohort events on and off treatment, an other-cause exit term and
//! one extra-event term per event type. Extra events occur at the
//! off-treatment cohort rate over the latent extra person-time
//!
//! ```text
//! t_e = t_d + max(n_e - t_d, 0) * rmst(lambda_o),    n_e = Prev^e * P
//! ```
//!
//! The gradient is assembled by hand in a single reverse sweep: adjoints of
//! the expected counts flow to the linear predictors, then to the sparse
//! design rows.

use serde::{Deserialize, Serialize};
use statrs::function::factorial::{ln_binomial, ln_factorial};
use statrs::function::gamma::{digamma, ln_gamma};

use crate::config::{Family, ModelConfig, Priors, RegressionId};
use crate::data::StrataDataset;
use crate::design::{build_design, row_eta, Design, ParamKind, ParameterVector, Status};
use crate::error::{MpepError, Result};

/// Below this rate the restricted mean survival time uses its series.
pub const RMST_SERIES_SWITCH: f64 = 1e-6;
const RMST_DERIV_SERIES_SWITCH: f64 = 1e-3;
/// Counts below this use exact finite sums for the NB gamma ratios.
const NB_SUM_LIMIT: u64 = 64;

/// Mean fraction of one year survived at constant exit hazard `lambda`.
pub fn rmst(lambda: f64) -> Result<f64> {
    if !(lambda >= 0.0) {
        return Err(MpepError::InvalidInput(format!(
            "rmst: negative rate {lambda}"
        )));
    }
    Ok(rmst_unchecked(lambda))
}

#[inline]
pub(crate) fn rmst_unchecked(lambda: f64) -> f64 {
    if lambda < RMST_SERIES_SWITCH {
        1.0 - lambda / 2.0 + lambda * lambda / 6.0
    } else {
        -(-lambda).exp_m1() / lambda
    }
}

#[inline]
fn rmst_derivative(lambda: f64) -> f64 {
    if lambda < RMST_DERIV_SERIES_SWITCH {
        -0.5 + lambda / 3.0 - lambda * lambda / 8.0 + lambda * lambda * lambda / 30.0
    } else {
        (lambda * (-lambda).exp() + (-lambda).exp_m1()) / (lambda * lambda)
    }
}

/// Person-years at risk in the extra population. No floor is applied when
/// `n_e < t_d`; the value stays positive while `n_e > 0`.
pub fn extra_time_at_risk(n_e: f64, t_d: f64, lambda_o: f64) -> f64 {
    t_d + (n_e - t_d) * rmst_unchecked(lambda_o.max(0.0))
}

/// A count distribution with its constrained parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum CountFamily {
    Poisson,
    Nb { theta: f64 },
    Zip { pi: f64 },
    Zinb { theta: f64, pi: f64 },
}

impl CountFamily {
    pub fn family(&self) -> Family {
        match self {
            CountFamily::Poisson => Family::Poisson,
            CountFamily::Nb { .. } => Family::Nb,
            CountFamily::Zip { .. } => Family::Zip,
            CountFamily::Zinb { .. } => Family::Zinb,
        }
    }

    pub fn theta(&self) -> Option<f64> {
        match self {
            CountFamily::Nb { theta } | CountFamily::Zinb { theta, .. } => Some(*theta),
            _ => None,
        }
    }

    pub fn pi(&self) -> Option<f64> {
        match self {
            CountFamily::Zip { pi } | CountFamily::Zinb { pi, .. } => Some(*pi),
            _ => None,
        }
    }

    fn params(&self) -> FamilyParams {
        let theta = self.theta().unwrap_or(f64::INFINITY);
        let pi = self.pi().unwrap_or(0.0);
        FamilyParams {
            family: self.family(),
            theta,
            pi,
            log_pi: pi.ln(),
            log1m_pi: (-pi).ln_1p(),
        }
    }
}

/// Exact log-probability of `x` under the family with mean `mu`
/// (mean of the non-inflated component for zero-inflated families).
pub fn log_lik_count(x: u64, mu: f64, family: CountFamily) -> Result<f64> {
    if !(mu > 0.0 && mu.is_finite()) {
        return Err(MpepError::InvalidInput(format!(
            "expected count must be positive, got {mu}"
        )));
    }
    if let Some(theta) = family.theta() {
        if !(theta > 0.0) {
            return Err(MpepError::InvalidInput(format!(
                "dispersion must be positive, got {theta}"
            )));
        }
    }
    if let Some(pi) = family.pi() {
        if !(0.0..1.0).contains(&pi) {
            return Err(MpepError::InvalidInput(format!(
                "inflation must be in [0, 1), got {pi}"
            )));
        }
    }
    let t = count_term(x, mu, &family.params());
    Ok(t.kernel - ln_factorial(x))
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct FamilyParams {
    pub family: Family,
    pub theta: f64,
    pub pi: f64,
    pub log_pi: f64,
    pub log1m_pi: f64,
}

impl FamilyParams {
    fn from_unconstrained(family: Family, log_theta: Option<f64>, logit_pi: Option<f64>) -> Self {
        let theta = log_theta.map_or(f64::INFINITY, f64::exp);
        let (pi, log_pi, log1m_pi) = match logit_pi {
            Some(r) => (sigmoid(r), -softplus(-r), -softplus(r)),
            None => (0.0, f64::NEG_INFINITY, 0.0),
        };
        FamilyParams {
            family,
            theta,
            pi,
            log_pi,
            log1m_pi,
        }
    }

    pub(crate) fn count_family(&self) -> CountFamily {
        match self.family {
            Family::Poisson => CountFamily::Poisson,
            Family::Nb => CountFamily::Nb { theta: self.theta },
            Family::Zip => CountFamily::Zip { pi: self.pi },
            Family::Zinb => CountFamily::Zinb {
                theta: self.theta,
                pi: self.pi,
            },
        }
    }
}

/// Log-likelihood of one count without its `-ln x!` constant, with
/// derivatives with respect to the mean, log theta and logit pi.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct CountTerm {
    pub kernel: f64,
    pub d_mu: f64,
    pub d_log_theta: f64,
    pub d_logit_pi: f64,
}

fn base_term(x: u64, mu: f64, theta: f64, nb: bool) -> CountTerm {
    let xf = x as f64;
    if !nb {
        let kernel = if x == 0 { -mu } else { xf * mu.ln() - mu };
        return CountTerm {
            kernel,
            d_mu: xf / mu - 1.0,
            ..Default::default()
        };
    }
    let tm = theta + mu;
    let log1p_ratio = (mu / theta).ln_1p();
    let (gamma_part, psi_diff) = if x < NB_SUM_LIMIT {
        let mut s = 0.0;
        let mut d = 0.0;
        for k in 0..x {
            let kf = k as f64;
            s += ((kf - mu) / tm).ln_1p();
            d += 1.0 / (theta + kf);
        }
        (s, d)
    } else {
        (
            ln_gamma(xf + theta) - ln_gamma(theta) - xf * tm.ln(),
            digamma(xf + theta) - digamma(theta),
        )
    };
    let x_log_mu = if x == 0 { 0.0 } else { xf * mu.ln() };
    let kernel = gamma_part + x_log_mu - theta * log1p_ratio;
    let d_mu = xf / mu - (theta + xf) / tm;
    let d_theta = psi_diff - log1p_ratio + (mu - xf) / tm;
    CountTerm {
        kernel,
        d_mu,
        d_log_theta: theta * d_theta,
        d_logit_pi: 0.0,
    }
}

pub(crate) fn count_term(x: u64, mu: f64, fp: &FamilyParams) -> CountTerm {
    let nb = fp.family.has_dispersion();
    let base = base_term(x, mu, fp.theta, nb);
    if !fp.family.has_inflation() {
        return base;
    }
    if x > 0 {
        return CountTerm {
            kernel: fp.log1m_pi + base.kernel,
            d_logit_pi: -fp.pi,
            ..base
        };
    }
    // log(pi + (1 - pi) f0), f0 = exp(base.kernel) since ln 0! = 0
    let a = fp.log_pi;
    let b = fp.log1m_pi + base.kernel;
    let m = a.max(b);
    let l = m + ((a - m).exp() + (b - m).exp()).ln();
    let w = (b - l).exp();
    CountTerm {
        kernel: l,
        d_mu: w * base.d_mu,
        d_log_theta: w * base.d_log_theta,
        d_logit_pi: 1.0 - w - fp.pi,
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// The observation a log-likelihood term belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SubModel {
    CohortOn(usize),
    CohortOff(usize),
    Exit,
    Extra(usize),
    /// Binomial cohort-size term.
    CohortSize,
}

/// One data point's contribution at a parameter value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointLik {
    pub submodel: SubModel,
    pub stratum: usize,
    pub x: u64,
    /// Expected count (for the cohort-size term, the cohort probability).
    pub mu: f64,
    /// Parameter-dependent part of the log-likelihood.
    pub kernel: f64,
    /// Full log-likelihood (kernel plus data-only normalizing constant).
    pub loglik: f64,
}

/// Soft-handling events seen during one evaluation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalCounters {
    /// Strata with `n_e < t_d`.
    pub n_e_below_t_d: usize,
    /// Strata with `Prev^c + Prev^e >= 1`.
    pub prevalence_sum_ge_one: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub log_posterior: f64,
    pub log_likelihood: f64,
    pub log_prior: f64,
    pub points: Vec<PointLik>,
    /// Per-parameter log-prior terms (including Jacobians).
    pub prior_terms: Vec<f64>,
    pub counters: EvalCounters,
}

/// Per-stratum latent quantities at one parameter value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentQuantities {
    pub prev_c: Vec<f64>,
    pub prev_e: Vec<f64>,
    /// `(Prev^c + Prev^e) * P`.
    pub total: Vec<f64>,
    pub n_e: Vec<f64>,
    pub t_e: Vec<f64>,
    /// `rate_c[event][stratum * 2 + status]`.
    pub rate_c: Vec<Vec<f64>>,
    pub rate_o: Vec<f64>,
}

#[derive(Debug, Clone)]
struct StratumData {
    population: f64,
    n_c: u64,
    t_on: f64,
    t_off: f64,
    t_o: f64,
    t_d: f64,
    x_o: u64,
    x_c_on: Vec<u64>,
    x_c_off: Vec<u64>,
    x_e: Vec<u64>,
}

/// A model bound to its data: design, priors and per-stratum inputs.
#[derive(Debug, Clone)]
pub struct Model {
    design: Design,
    config: ModelConfig,
    strata: Vec<StratumData>,
}

impl Model {
    pub fn new(config: &ModelConfig, dataset: &StrataDataset) -> Result<Self> {
        let design = build_design(config, dataset)?;
        let event_idx: Vec<usize> = design
            .event_types
            .iter()
            .map(|n| dataset.event_index(n).expect("checked by build_design"))
            .collect();
        let strata = dataset
            .rows()
            .iter()
            .map(|r| StratumData {
                population: r.population as f64,
                n_c: r.n_c,
                t_on: r.t_on,
                t_off: r.t_off,
                t_o: r.t_o,
                t_d: r.t_d,
                x_o: r.x_o,
                x_c_on: event_idx.iter().map(|&i| r.x_c_on[i]).collect(),
                x_c_off: event_idx.iter().map(|&i| r.x_c_off[i]).collect(),
                x_e: event_idx.iter().map(|&i| r.x_e[i]).collect(),
            })
            .collect();
        Ok(Model {
            design,
            config: config.clone(),
            strata,
        })
    }

    pub fn design(&self) -> &Design {
        &self.design
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn dim(&self) -> usize {
        self.design.layout.len()
    }

    pub fn n_strata(&self) -> usize {
        self.strata.len()
    }

    pub fn population(&self, stratum: usize) -> f64 {
        self.strata[stratum].population
    }

    fn check_len(&self, params: &[f64]) -> Result<()> {
        if params.len() != self.dim() {
            return Err(MpepError::InvalidParameters(format!(
                "expected {} parameters, got {}",
                self.dim(),
                params.len()
            )));
        }
        Ok(())
    }

    /// Family parameters of a count sub-model at `params`.
    pub(crate) fn family_params(&self, id: RegressionId, params: &[f64]) -> FamilyParams {
        let reg = self.design.regression(id);
        FamilyParams::from_unconstrained(
            reg.family.unwrap_or_default(),
            reg.log_theta.map(|i| params[i]),
            reg.logit_pi.map(|i| params[i]),
        )
    }

    /// Constrained family of a count sub-model at `params`.
    pub fn count_family(&self, id: RegressionId, params: &[f64]) -> CountFamily {
        self.family_params(id, params).count_family()
    }

    /// Full evaluation: total, per-point log-likelihood and prior terms.
    pub fn evaluate(&self, params: &ParameterVector) -> Result<Evaluation> {
        let p = params.values();
        self.check_len(p)?;
        let mut points = Vec::new();
        let (_, counters) = self.sweep(p, None, Some(&mut points))?;
        let log_lik: f64 = points.iter().map(|pt| pt.loglik).sum();
        let prior_terms = self.prior_terms(p, None);
        let log_prior: f64 = prior_terms.iter().sum();
        let log_posterior = log_lik + log_prior;
        if !log_posterior.is_finite() {
            let bad = prior_terms
                .iter()
                .position(|v| !v.is_finite())
                .map(|i| format!("prior of {}", self.design.layout.names()[i]))
                .unwrap_or_else(|| "log posterior".into());
            return Err(MpepError::NonFinite { term: bad });
        }
        Ok(Evaluation {
            log_posterior,
            log_likelihood: log_lik,
            log_prior,
            points,
            prior_terms,
            counters,
        })
    }

    /// Log posterior up to data-only constants, with its gradient. Returns
    /// `-inf` (and leaves `grad` unspecified) outside the support.
    pub fn log_density_and_grad(&self, params: &[f64], grad: &mut [f64]) -> f64 {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let lik = match self.sweep(params, Some(grad), None) {
            Ok((v, _)) => v,
            Err(_) => return f64::NEG_INFINITY,
        };
        let prior: f64 = self.prior_terms(params, Some(grad)).iter().sum();
        let total = lik + prior;
        if total.is_finite() && grad.iter().all(|g| g.is_finite()) {
            total
        } else {
            f64::NEG_INFINITY
        }
    }

    /// Latent quantities (prevalences, population sizes, rates) at `params`.
    pub fn latent(&self, params: &ParameterVector) -> Result<LatentQuantities> {
        let p = params.values();
        self.check_len(p)?;
        let d = &self.design;
        let eta_o: Vec<f64> = d
            .regression(RegressionId::Exit)
            .rows
            .iter()
            .map(|r| row_eta(r, p))
            .collect();
        let eta_p: Vec<f64> = d
            .regression(RegressionId::Prevalence)
            .rows
            .iter()
            .map(|r| row_eta(r, p))
            .collect();
        let rate_c = (0..d.n_events())
            .map(|e| {
                d.regression(RegressionId::Event(e))
                    .rows
                    .iter()
                    .map(|r| row_eta(r, p).exp())
                    .collect()
            })
            .collect();
        let mut out = LatentQuantities {
            prev_c: Vec::with_capacity(self.n_strata()),
            prev_e: Vec::with_capacity(self.n_strata()),
            total: Vec::with_capacity(self.n_strata()),
            n_e: Vec::with_capacity(self.n_strata()),
            t_e: Vec::with_capacity(self.n_strata()),
            rate_c,
            rate_o: eta_o.iter().map(|e| e.exp()).collect(),
        };
        for (s, st) in self.strata.iter().enumerate() {
            let prev_c = sigmoid(p[d.logit_prev_c.start + s]);
            let prev_e = sigmoid(eta_p[s]);
            let n_e = prev_e * st.population;
            out.prev_c.push(prev_c);
            out.prev_e.push(prev_e);
            out.total.push((prev_c + prev_e) * st.population);
            out.n_e.push(n_e);
            out.t_e.push(extra_time_at_risk(n_e, st.t_d, out.rate_o[s]));
        }
        Ok(out)
    }

    /// Log-likelihood sweep. Adds the likelihood gradient into `grad` when
    /// given and records each point when `points` is given.
    fn sweep(
        &self,
        p: &[f64],
        mut grad: Option<&mut [f64]>,
        mut points: Option<&mut Vec<PointLik>>,
    ) -> Result<(f64, EvalCounters)> {
        let d = &self.design;
        let n_events = d.n_events();
        let want_grad = grad.is_some();
        let with_const = points.is_some();

        let etas: Vec<Vec<f64>> = d
            .regressions
            .iter()
            .map(|reg| reg.rows.iter().map(|r| row_eta(r, p)).collect())
            .collect();
        let mut adj: Vec<Vec<f64>> = if want_grad {
            etas.iter().map(|e| vec![0.0; e.len()]).collect()
        } else {
            Vec::new()
        };
        let exit_ix = n_events;
        let prev_ix = n_events + 1;

        let fam: Vec<FamilyParams> = (0..n_events)
            .map(RegressionId::Event)
            .chain([RegressionId::Exit])
            .map(|id| self.family_params(id, p))
            .collect();
        let mut fam_adj = vec![(0.0f64, 0.0f64); n_events + 1];

        let (pm, pm_enabled) = match d.logit_pmatch {
            Some(i) => (sigmoid(p[i]), true),
            None => (1.0, false),
        };
        let mut pm_adj = 0.0;

        let mut total = 0.0;
        let mut counters = EvalCounters::default();

        let record = |points: &mut Option<&mut Vec<PointLik>>,
                      submodel: SubModel,
                      stratum: usize,
                      x: u64,
                      mu: f64,
                      kernel: f64,
                      constant: f64| {
            if let Some(pts) = points.as_deref_mut() {
                pts.push(PointLik {
                    submodel,
                    stratum,
                    x,
                    mu,
                    kernel,
                    loglik: kernel + constant,
                });
            }
        };
        let nonfinite = |what: String| MpepError::NonFinite { term: what };

        for (s, st) in self.strata.iter().enumerate() {
            // cohort size
            let rho_c = p[d.logit_prev_c.start + s];
            let n_c = st.n_c as f64;
            let kernel = -n_c * softplus(-rho_c) - (st.population - n_c) * softplus(rho_c);
            let prev_c = sigmoid(rho_c);
            if !kernel.is_finite() {
                return Err(nonfinite(format!(
                    "cohort size, stratum {}",
                    d.levels.label(&d.levels.key_at(s))
                )));
            }
            total += kernel;
            if let Some(g) = grad.as_deref_mut() {
                g[d.logit_prev_c.start + s] += n_c - st.population * prev_c;
            }
            if with_const {
                record(
                    &mut points,
                    SubModel::CohortSize,
                    s,
                    st.n_c,
                    prev_c,
                    kernel,
                    ln_binomial(st.population as u64, st.n_c),
                );
            }

            // extra population
            let eta_p = etas[prev_ix][s];
            let prev_e = sigmoid(eta_p);
            if prev_c + prev_e >= 1.0 {
                counters.prevalence_sum_ge_one += 1;
            }
            let n_e = prev_e * st.population;
            let lambda_o = etas[exit_ix][s].exp();
            let surv = rmst_unchecked(lambda_o);
            let at_risk = n_e - st.t_d;
            if at_risk < 0.0 {
                counters.n_e_below_t_d += 1;
            }
            let t_e = st.t_d + at_risk * surv;
            let mut t_e_adj = 0.0;

            // other-cause exit
            if st.t_o > 0.0 {
                let mu = lambda_o * st.t_o;
                let t = count_term(st.x_o, mu, &fam[n_events]);
                if !t.kernel.is_finite() {
                    return Err(nonfinite(format!("exit, stratum {s}")));
                }
                total += t.kernel;
                if want_grad {
                    adj[exit_ix][s] += t.d_mu * mu;
                    fam_adj[n_events].0 += t.d_log_theta;
                    fam_adj[n_events].1 += t.d_logit_pi;
                }
                if with_const {
                    record(
                        &mut points,
                        SubModel::Exit,
                        s,
                        st.x_o,
                        mu,
                        t.kernel,
                        -ln_factorial(st.x_o),
                    );
                }
            }

            for e in 0..n_events {
                let reg = &d.regressions[e];
                let r_off = reg.row_index(s, Status::Off);
                let r_on = reg.row_index(s, Status::On);
                let lam_off = etas[e][r_off].exp();
                let lam_on = etas[e][r_on].exp();

                for (status, time, x, row, sub) in [
                    (
                        Status::On,
                        st.t_on,
                        st.x_c_on[e],
                        r_on,
                        SubModel::CohortOn(e),
                    ),
                    (
                        Status::Off,
                        st.t_off,
                        st.x_c_off[e],
                        r_off,
                        SubModel::CohortOff(e),
                    ),
                ] {
                    if time <= 0.0 {
                        continue;
                    }
                    let lam = if status == Status::On {
                        lam_on
                    } else {
                        lam_off
                    };
                    let mu = pm * lam * time;
                    let t = count_term(x, mu, &fam[e]);
                    if !t.kernel.is_finite() {
                        return Err(nonfinite(format!("{sub:?}, stratum {s}")));
                    }
                    total += t.kernel;
                    if want_grad {
                        adj[e][row] += t.d_mu * mu;
                        fam_adj[e].0 += t.d_log_theta;
                        fam_adj[e].1 += t.d_logit_pi;
                        pm_adj += t.d_mu * mu * (1.0 - pm);
                    }
                    if with_const {
                        record(&mut points, sub, s, x, mu, t.kernel, -ln_factorial(x));
                    }
                }

                // extra events
                let bias_ix = d.bias[e][s];
                let eb = bias_ix.map_or(1.0, |i| p[i].exp());
                let a = lam_off * t_e * eb;
                let (mu, linked_c) = if pm_enabled {
                    let c = lam_off * st.t_off + lam_on * st.t_on;
                    (pm * a + (1.0 - pm) * c, c)
                } else {
                    (a, 0.0)
                };
                let x = st.x_e[e];
                if mu <= 0.0 {
                    if x == 0 {
                        if with_const {
                            record(&mut points, SubModel::Extra(e), s, 0, 0.0, 0.0, 0.0);
                        }
                        continue;
                    }
                    return Err(nonfinite(format!(
                        "extra {}, stratum {s}: zero expectation",
                        d.event_types[e]
                    )));
                }
                let t = count_term(x, mu, &fam[e]);
                if !t.kernel.is_finite() {
                    return Err(nonfinite(format!(
                        "extra {}, stratum {s}",
                        d.event_types[e]
                    )));
                }
                total += t.kernel;
                if want_grad {
                    let dm = t.d_mu;
                    fam_adj[e].0 += t.d_log_theta;
                    fam_adj[e].1 += t.d_logit_pi;
                    adj[e][r_off] += dm * (pm * a + (1.0 - pm) * lam_off * st.t_off);
                    if pm_enabled {
                        adj[e][r_on] += dm * (1.0 - pm) * lam_on * st.t_on;
                        pm_adj += dm * pm * (1.0 - pm) * (a - linked_c);
                    }
                    if let (Some(i), Some(g)) = (bias_ix, grad.as_deref_mut()) {
                        g[i] += dm * pm * a;
                    }
                    t_e_adj += dm * pm * lam_off * eb;
                }
                if with_const {
                    record(
                        &mut points,
                        SubModel::Extra(e),
                        s,
                        x,
                        mu,
                        t.kernel,
                        -ln_factorial(x),
                    );
                }
            }

            if want_grad {
                adj[exit_ix][s] += t_e_adj * at_risk * rmst_derivative(lambda_o) * lambda_o;
                adj[prev_ix][s] += t_e_adj * surv * st.population * prev_e * (1.0 - prev_e);
            }
        }

        if let Some(g) = grad {
            for (reg, a) in d.regressions.iter().zip(&adj) {
                for (row, &da) in reg.rows.iter().zip(a) {
                    if da == 0.0 {
                        continue;
                    }
                    for &c in &row.fixed {
                        g[c] += da;
                    }
                    for re in &row.re {
                        let scale = p[re.log_scale].exp();
                        g[re.raw] += da * scale;
                        g[re.log_scale] += da * scale * p[re.raw];
                    }
                }
            }
            for (e, reg) in d.regressions.iter().take(n_events + 1).enumerate() {
                if let Some(i) = reg.log_theta {
                    g[i] += fam_adj[e].0;
                }
                if let Some(i) = reg.logit_pi {
                    g[i] += fam_adj[e].1;
                }
            }
            if let Some(i) = d.logit_pmatch {
                g[i] += pm_adj;
            }
        }
        Ok((total, counters))
    }

    /// Log-prior of each parameter (with log-Jacobians for the scales);
    /// adds prior gradients into `grad` when given.
    fn prior_terms(&self, p: &[f64], mut grad: Option<&mut [f64]>) -> Vec<f64> {
        let pr: &Priors = &self.config.priors;
        let pm = self.config.pmatch.as_ref();
        let half_log_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
        let normal = |v: f64, m: f64, sd: f64| -> (f64, f64) {
            let z = (v - m) / sd;
            (-0.5 * z * z - sd.ln() - half_log_2pi, -z / sd)
        };
        self.design
            .layout
            .kinds()
            .iter()
            .enumerate()
            .map(|(i, kind)| {
                let v = p[i];
                let (lp, g) = match kind {
                    ParamKind::Fixed { .. } => normal(v, 0.0, pr.fixed_sd),
                    ParamKind::ReRaw { .. } => normal(v, 0.0, 1.0),
                    ParamKind::ReLogScale { .. } => {
                        let sd = pr.re_scale_sd;
                        let sigma = v.exp();
                        let z = sigma / sd;
                        (
                            std::f64::consts::LN_2 - sd.ln() - half_log_2pi - 0.5 * z * z + v,
                            1.0 - z * z,
                        )
                    }
                    ParamKind::LogTheta { .. } => normal(v, pr.log_theta_mean, pr.log_theta_sd),
                    ParamKind::LogitPi { .. } => normal(v, pr.logit_pi_mean, pr.logit_pi_sd),
                    ParamKind::LogitPrevC { .. } => {
                        normal(v, pr.logit_prev_c_mean, pr.logit_prev_c_sd)
                    }
                    ParamKind::Bias { .. } => normal(v, 0.0, pr.bias_sd),
                    ParamKind::LogitPmatch => {
                        let pm = pm.expect("pmatch parameter implies prior");
                        normal(v, pm.logit_mean, pm.logit_sd)
                    }
                };
                if let Some(gr) = grad.as_deref_mut() {
                    gr[i] += g;
                }
                lp
            })
            .collect()
    }
}

/// Joint log posterior with the per-point log-likelihood vector.
pub fn joint_log_posterior(params: &ParameterVector, model: &Model) -> Result<Evaluation> {
    model.evaluate(params)
}

/// Exact gradient of [`joint_log_posterior`] on the unconstrained scale.
pub fn grad_log_posterior(params: &ParameterVector, model: &Model) -> Result<Vec<f64>> {
    let p = params.values();
    model.check_len(p)?;
    let mut g = vec![0.0; p.len()];
    let v = model.log_density_and_grad(p, &mut g);
    if !v.is_finite() {
        // surface the offending term
        model.evaluate(params)?;
        return Err(MpepError::NonFinite {
            term: "gradient".into(),
        });
    }
    Ok(g)
}
