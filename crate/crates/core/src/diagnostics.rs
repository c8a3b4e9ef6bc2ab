//! Residual deviance, pD / DIC and the node-split consistency p-value.

use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::RegressionId;
use crate::design::ParameterVector;
use crate::error::{MpepError, Result};
use crate::likelihood::{CountFamily, Model, SubModel};
use crate::sampler::{stable_mean, PosteriorDraws};
use crate::table::Table;

/// Residual deviance of one count against its saturated fit (`mu = x`,
/// saturated zero log-likelihood at `x = 0`).
pub fn resdev_contribution(x: u64, mu: f64, family: CountFamily) -> f64 {
    let xf = x as f64;
    let poisson = |mu: f64| {
        if x == 0 {
            2.0 * mu
        } else {
            2.0 * (xf * (xf / mu).ln() + mu - xf)
        }
    };
    let nb = |mu: f64, theta: f64| {
        if x == 0 {
            2.0 * theta * (mu / theta).ln_1p()
        } else {
            2.0 * (xf * (xf / mu).ln() + (theta + xf) * ((theta + mu) / (theta + xf)).ln())
        }
    };
    match family {
        CountFamily::Poisson => poisson(mu),
        CountFamily::Nb { theta } => nb(mu, theta),
        CountFamily::Zip { pi } => {
            if x == 0 {
                -2.0 * (pi + (1.0 - pi) * (-mu).exp()).ln()
            } else {
                poisson(mu)
            }
        }
        CountFamily::Zinb { theta, pi } => {
            if x == 0 {
                let f0 = (-theta * (mu / theta).ln_1p()).exp();
                -2.0 * (pi + (1.0 - pi) * f0).ln()
            } else {
                nb(mu, theta)
            }
        }
    }
}

/// Count sub-models in report order for `n_events` event types.
pub fn report_submodels(n_events: usize) -> Vec<SubModel> {
    let mut v = Vec::new();
    for e in 0..n_events {
        v.push(SubModel::CohortOn(e));
    }
    for e in 0..n_events {
        v.push(SubModel::CohortOff(e));
    }
    v.push(SubModel::Exit);
    for e in 0..n_events {
        v.push(SubModel::Extra(e));
    }
    v
}

pub fn submodel_label(sub: SubModel, events: &[String]) -> String {
    match sub {
        SubModel::CohortOn(e) => format!("on {}", events[e]),
        SubModel::CohortOff(e) => format!("off {}", events[e]),
        SubModel::Exit => "exit".into(),
        SubModel::Extra(e) => format!("extra {}", events[e]),
        SubModel::CohortSize => "cohort size".into(),
    }
}

fn regression_of(sub: SubModel) -> Option<RegressionId> {
    match sub {
        SubModel::CohortOn(e) | SubModel::CohortOff(e) | SubModel::Extra(e) => {
            Some(RegressionId::Event(e))
        }
        SubModel::Exit => Some(RegressionId::Exit),
        SubModel::CohortSize => None,
    }
}

/// Effective number of parameters and DIC from draw-wise log-likelihoods
/// and the log-likelihood at the posterior mean: `pD = 2 (l(mean) - mean l)`.
pub fn pd_dic(log_lik_draws: &[f64], log_lik_at_mean: f64) -> (f64, f64) {
    let pd = 2.0 * (log_lik_at_mean - stable_mean(log_lik_draws));
    (pd, -2.0 * log_lik_at_mean + 2.0 * pd)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointDeviance {
    pub submodel: SubModel,
    pub stratum: usize,
    pub x: u64,
    /// Posterior mean contribution.
    pub resdev: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubModelDeviance {
    pub label: String,
    pub submodel: SubModel,
    pub n_points: usize,
    pub resdev: f64,
    pub pd: f64,
    pub dic: f64,
    pub mean_log_lik: f64,
    pub log_lik_at_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DevianceTotals {
    pub n_points: usize,
    pub resdev: f64,
    pub pd: f64,
    pub dic: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DevianceReport {
    pub rows: Vec<SubModelDeviance>,
    pub total: DevianceTotals,
    pub points: Vec<PointDeviance>,
}

impl DevianceReport {
    pub fn row(&self, submodel: SubModel) -> Option<&SubModelDeviance> {
        self.rows.iter().find(|r| r.submodel == submodel)
    }

    pub fn table(&self) -> Table {
        let mut t = Table::new(&["sub-model", "points", "ResDev", "pD", "DIC"]);
        for r in &self.rows {
            t.row(vec![
                r.label.clone(),
                r.n_points.to_string(),
                format!("{:.1}", r.resdev),
                format!("{:.1}", r.pd),
                format!("{:.1}", r.dic),
            ]);
        }
        t.row(vec![
            "total".into(),
            self.total.n_points.to_string(),
            format!("{:.1}", self.total.resdev),
            format!("{:.1}", self.total.pd),
            format!("{:.1}", self.total.dic),
        ]);
        t
    }
}

impl fmt::Display for DevianceReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.table().fmt(f)
    }
}

/// Posterior mean residual deviance, pD and DIC per count sub-model. The
/// cohort-size binomial term is not part of the report.
pub fn deviance_report(model: &Model, draws: &PosteriorDraws) -> Result<DevianceReport> {
    if draws.dim() != model.dim() {
        return Err(MpepError::InvalidInput(format!(
            "draws have {} parameters, model has {}",
            draws.dim(),
            model.dim()
        )));
    }
    let events = &model.design().event_types;
    let subs = report_submodels(events.len());
    let slot = |s: SubModel| subs.iter().position(|&x| x == s);

    let mut point_sum: Vec<f64> = Vec::new();
    let mut point_meta: Vec<(SubModel, usize, u64)> = Vec::new();
    let mut draw_lik: Vec<Vec<f64>> = vec![Vec::new(); subs.len()];
    let mut n_draws = 0usize;
    for q in draws.iter_draws() {
        let pv = ParameterVector::new(q.to_vec());
        let ev = model.evaluate(&pv)?;
        let fams: Vec<Option<CountFamily>> = subs
            .iter()
            .map(|&s| regression_of(s).map(|id| model.count_family(id, q)))
            .collect();
        let mut lik = vec![0.0; subs.len()];
        let mut k = 0;
        for pt in &ev.points {
            let Some(i) = slot(pt.submodel) else { continue };
            lik[i] += pt.loglik;
            let dev = if pt.mu > 0.0 {
                resdev_contribution(pt.x, pt.mu, fams[i].expect("count sub-model"))
            } else {
                0.0
            };
            if n_draws == 0 {
                point_sum.push(0.0);
                point_meta.push((pt.submodel, pt.stratum, pt.x));
            }
            point_sum[k] += dev;
            k += 1;
        }
        for (d, l) in draw_lik.iter_mut().zip(lik) {
            d.push(l);
        }
        n_draws += 1;
    }
    if n_draws == 0 {
        return Err(MpepError::InvalidInput("no draws".into()));
    }

    let mean = ParameterVector::new(draws.mean());
    let at_mean = model.evaluate(&mean)?;
    let mut lik_at_mean = vec![0.0; subs.len()];
    for pt in &at_mean.points {
        if let Some(i) = slot(pt.submodel) {
            lik_at_mean[i] += pt.loglik;
        }
    }

    let points: Vec<PointDeviance> = point_meta
        .iter()
        .zip(&point_sum)
        .map(|(&(submodel, stratum, x), s)| PointDeviance {
            submodel,
            stratum,
            x,
            resdev: s / n_draws as f64,
        })
        .collect();

    let rows: Vec<SubModelDeviance> = subs
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            let pts: Vec<&PointDeviance> = points.iter().filter(|p| p.submodel == s).collect();
            let (pd, dic) = pd_dic(&draw_lik[i], lik_at_mean[i]);
            SubModelDeviance {
                label: submodel_label(s, events),
                submodel: s,
                n_points: pts.len(),
                resdev: pts.iter().map(|p| p.resdev).sum(),
                pd,
                dic,
                mean_log_lik: stable_mean(&draw_lik[i]),
                log_lik_at_mean: lik_at_mean[i],
            }
        })
        .collect();
    let total = DevianceTotals {
        n_points: rows.iter().map(|r| r.n_points).sum(),
        resdev: rows.iter().map(|r| r.resdev).sum(),
        pd: rows.iter().map(|r| r.pd).sum(),
        dic: rows.iter().map(|r| r.dic).sum(),
    };
    Ok(DevianceReport {
        rows,
        total,
        points,
    })
}

/// Residual deviance part of [`deviance_report`].
pub fn residual_deviance(model: &Model, draws: &PosteriorDraws) -> Result<DevianceReport> {
    deviance_report(model, draws)
}

/// Total `(pD, DIC)` over all count sub-models.
pub fn pd_and_dic(model: &Model, draws: &PosteriorDraws) -> Result<(f64, f64)> {
    let r = deviance_report(model, draws)?;
    if !r.total.dic.is_finite() {
        return Err(MpepError::NonFinite {
            term: "log-likelihood at posterior mean".into(),
        });
    }
    Ok((r.total.pd, r.total.dic))
}

/// Units over which population totals are compared.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    #[default]
    Year,
    Stratum,
    Period,
}

impl std::str::FromStr for Aggregation {
    type Err = MpepError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "year" => Ok(Aggregation::Year),
            "stratum" => Ok(Aggregation::Stratum),
            "period" => Ok(Aggregation::Period),
            _ => Err(MpepError::InvalidInput(format!(
                "unknown aggregation '{s}' (expected year, stratum or period)"
            ))),
        }
    }
}

/// Draw-wise population totals `N = (Prev^c + Prev^e) P` summed within
/// each aggregation unit, with the matching general-population sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitTotals {
    pub labels: Vec<String>,
    pub population: Vec<f64>,
    /// `draws[unit][draw]`.
    pub draws: Vec<Vec<f64>>,
}

impl UnitTotals {
    pub fn from_draws(model: &Model, draws: &PosteriorDraws, unit: Aggregation) -> Result<Self> {
        let levels = &model.design().levels;
        let keys: Vec<_> = levels.keys().collect();
        let (labels, unit_of): (Vec<String>, Vec<usize>) = match unit {
            Aggregation::Year => (levels.year.clone(), keys.iter().map(|k| k.year).collect()),
            Aggregation::Stratum => (
                keys.iter().map(|k| levels.label(k)).collect(),
                (0..keys.len()).collect(),
            ),
            Aggregation::Period => (vec!["all".into()], vec![0; keys.len()]),
        };
        let mut population = vec![0.0; labels.len()];
        for (s, &u) in unit_of.iter().enumerate() {
            population[u] += model.population(s);
        }
        let mut out = vec![Vec::with_capacity(draws.n_chains() * draws.n_iter()); labels.len()];
        for q in draws.iter_draws() {
            let lat = model.latent(&ParameterVector::new(q.to_vec()))?;
            let mut sums = vec![0.0; labels.len()];
            for (s, &u) in unit_of.iter().enumerate() {
                sums[u] += lat.total[s];
            }
            for (o, v) in out.iter_mut().zip(sums) {
                o.push(v);
            }
        }
        Ok(UnitTotals {
            labels,
            population,
            draws: out,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyUnit {
    pub label: String,
    pub delta_mean: f64,
    pub prob_positive: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyResult {
    pub units: Vec<ConsistencyUnit>,
    /// `delta[unit][pair]`.
    pub delta: Vec<Vec<f64>>,
}

impl ConsistencyResult {
    pub fn table(&self) -> Table {
        let mut t = Table::new(&["unit", "mean delta", "Pr(delta>0)", "p-value"]);
        for u in &self.units {
            t.row(vec![
                u.label.clone(),
                format!("{:.1}", u.delta_mean),
                format!("{:.3}", u.prob_positive),
                format!("{:.3}", u.p_value),
            ]);
        }
        t
    }
}

/// `2 min{Pr(delta > 0), 1 - Pr(delta > 0)}`.
pub fn two_sided_p(delta: &[f64]) -> (f64, f64) {
    let n = delta.len();
    let k = delta.iter().filter(|&&d| d > 0.0).count();
    let pos = k as f64 / n as f64;
    let p = 2.0 * (k.min(n - k) as f64) / n as f64;
    (pos, p)
}

fn order_key(t: &UnitTotals) -> (f64, Vec<f64>) {
    let sum = t.draws.iter().flatten().sum();
    (sum, t.draws.first().cloned().unwrap_or_default())
}

/// Node-split consistency of two separately fitted sources. Draws of each
/// fit are shuffled independently and paired by index. The shuffles are
/// assigned by a canonical ordering of the two inputs, so swapping `a` and
/// `b` only flips the sign of every delta.
pub fn consistency_pvalue(a: &UnitTotals, b: &UnitTotals, seed: u64) -> Result<ConsistencyResult> {
    if a.labels != b.labels {
        return Err(MpepError::InvalidInput(
            "aggregation units of the two fits differ".into(),
        ));
    }
    let n = a
        .draws
        .first()
        .map_or(0, Vec::len)
        .min(b.draws.first().map_or(0, Vec::len));
    if n == 0 {
        return Err(MpepError::InvalidInput("no draws to compare".into()));
    }
    let (ka, kb) = (order_key(a), order_key(b));
    let a_first = match ka.0.total_cmp(&kb.0) {
        std::cmp::Ordering::Equal => {
            ka.1.iter()
                .zip(&kb.1)
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                != Some(std::cmp::Ordering::Greater)
        }
        o => o.is_lt(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut perm_first: Vec<usize> = (0..n).collect();
    let mut perm_second: Vec<usize> = (0..n).collect();
    perm_first.shuffle(&mut rng);
    perm_second.shuffle(&mut rng);
    let (pa, pb) = if a_first {
        (perm_first, perm_second)
    } else {
        (perm_second, perm_first)
    };

    let mut units = Vec::with_capacity(a.labels.len());
    let mut deltas = Vec::with_capacity(a.labels.len());
    for (u, label) in a.labels.iter().enumerate() {
        let delta: Vec<f64> = (0..n)
            .map(|j| a.draws[u][pa[j]] - b.draws[u][pb[j]])
            .collect();
        let (pos, p) = two_sided_p(&delta);
        units.push(ConsistencyUnit {
            label: label.clone(),
            delta_mean: stable_mean(&delta),
            prob_positive: pos,
            p_value: p,
        });
        deltas.push(delta);
    }
    Ok(ConsistencyResult {
        units,
        delta: deltas,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::likelihood::log_lik_count;
    use rand_distr::{Distribution, Gamma, Poisson};

    #[test]
    fn poisson_examples() {
        assert_eq!(resdev_contribution(0, 2.0, CountFamily::Poisson), 4.0);
        for x in 0..40u64 {
            let d = resdev_contribution(x, x.max(1) as f64, CountFamily::Poisson);
            if x > 0 {
                assert_eq!(d, 0.0);
            }
            for &mu in &[0.01, 0.7, 3.0, 25.0] {
                assert!(resdev_contribution(x, mu, CountFamily::Poisson) >= 0.0);
            }
        }
    }

    #[test]
    fn zip_certain_zero() {
        assert_eq!(
            resdev_contribution(0, 0.0, CountFamily::Zip { pi: 0.5 }),
            0.0
        );
    }

    /// ResDev equals twice the log-likelihood gap to the saturated point.
    #[test]
    fn deviance_is_twice_saturated_gap() {
        for x in 1..30u64 {
            for &mu in &[0.5, 4.0, 12.0] {
                for fam in [CountFamily::Poisson, CountFamily::Nb { theta: 3.0 }] {
                    let sat = log_lik_count(x, x as f64, fam).unwrap();
                    let fit = log_lik_count(x, mu, fam).unwrap();
                    let d = resdev_contribution(x, mu, fam);
                    assert!((d - 2.0 * (sat - fit)).abs() < 1e-9, "{fam:?} {x} {mu}");
                }
            }
        }
        for fam in [
            CountFamily::Nb { theta: 3.0 },
            CountFamily::Zip { pi: 0.3 },
            CountFamily::Zinb {
                theta: 3.0,
                pi: 0.3,
            },
        ] {
            let d = resdev_contribution(0, 2.5, fam);
            assert!((d + 2.0 * log_lik_count(0, 2.5, fam).unwrap()).abs() < 1e-12);
            assert!(d >= 0.0);
        }
    }

    #[test]
    fn zinb_zero_branch_non_negative() {
        for &theta in &[0.1, 1.0, 50.0] {
            for &pi in &[0.0, 0.2, 0.9] {
                for &mu in &[1e-6, 0.5, 30.0] {
                    assert!(resdev_contribution(0, mu, CountFamily::Zinb { theta, pi }) >= 0.0);
                }
            }
        }
    }

    #[test]
    fn point_mass_pd_is_zero() {
        let (pd, dic) = pd_dic(&[-12.5; 100], -12.5);
        assert_eq!(pd, 0.0);
        assert_eq!(dic, 25.0);
    }

    /// One-parameter Poisson model: draws from the conjugate posterior of
    /// log lambda give pD close to 1.
    #[test]
    fn one_parameter_pd_near_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ys: Vec<u64> = (0..50)
            .map(|_| Poisson::new(4.0).unwrap().sample(&mut rng) as u64)
            .collect();
        let sum: u64 = ys.iter().sum();
        let post = Gamma::new(sum as f64 + 0.001, 1.0 / (ys.len() as f64 + 0.001)).unwrap();
        let ll = |lam: f64| {
            ys.iter()
                .map(|&y| log_lik_count(y, lam, CountFamily::Poisson).unwrap())
                .sum::<f64>()
        };
        let lams: Vec<f64> = (0..20_000).map(|_| post.sample(&mut rng)).collect();
        let lls: Vec<f64> = lams.iter().map(|&l| ll(l)).collect();
        // posterior mean on the unconstrained (log) scale
        let mean_log = stable_mean(&lams.iter().map(|l| l.ln()).collect::<Vec<_>>());
        let (pd, _) = pd_dic(&lls, ll(mean_log.exp()));
        assert!((pd - 1.0).abs() < 0.2, "{pd}");
    }

    fn totals(draws: Vec<Vec<f64>>) -> UnitTotals {
        UnitTotals {
            labels: (0..draws.len()).map(|i| format!("Y{i}")).collect(),
            population: vec![1.0; draws.len()],
            draws,
        }
    }

    #[test]
    fn p_value_formula() {
        assert_eq!(two_sided_p(&[1.0, 2.0, 3.0]).1, 0.0);
        assert_eq!(two_sided_p(&[-1.0, 1.0, -2.0, 2.0]).1, 1.0);
        let d: Vec<f64> = (0..1000)
            .map(|i| if i < 975 { 1.0 } else { -1.0 })
            .collect();
        assert!((two_sided_p(&d).1 - 0.05).abs() < 1e-12);
    }

    #[test]
    fn consistency_trivial_cases() {
        let a = totals(vec![vec![10.0; 50]]);
        let b = totals(vec![vec![5.0; 50]]);
        let r = consistency_pvalue(&a, &b, 0).unwrap();
        assert_eq!(r.units[0].p_value, 0.0);
        // symmetric deltas: a draws mirror b around the same centre
        let a = totals(vec![vec![1.0, 3.0, 1.0, 3.0]]);
        let b = totals(vec![vec![2.0, 2.0, 2.0, 2.0]]);
        let r = consistency_pvalue(&a, &b, 0).unwrap();
        assert_eq!(r.units[0].p_value, 1.0);
        let c = UnitTotals {
            labels: vec!["other".into()],
            ..a.clone()
        };
        assert!(consistency_pvalue(&a, &c, 0).is_err());
    }

    #[test]
    fn consistency_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let g = Gamma::new(50.0, 1.0).unwrap();
        for seed in 0..20 {
            let a = totals(
                (0..3)
                    .map(|_| (0..400).map(|_| g.sample(&mut rng)).collect())
                    .collect(),
            );
            let b = totals(
                (0..3)
                    .map(|_| (0..400).map(|_| g.sample(&mut rng) + 1.0).collect())
                    .collect(),
            );
            let ab = consistency_pvalue(&a, &b, seed).unwrap();
            let ba = consistency_pvalue(&b, &a, seed).unwrap();
            for (x, y) in ab.units.iter().zip(&ba.units) {
                assert_eq!(x.p_value, y.p_value);
            }
        }
    }
}
