//! Synthetic stratified datasets drawn from a model at known parameters.

use std::path::Path;

use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Gamma, Poisson};
use serde::{Deserialize, Serialize};

use crate::config::{ModelConfig, RegressionId};
use crate::data::{DatasetHeader, Levels, StrataDataset, StratumCounts};
use crate::design::{ParameterVector, Status};
use crate::error::{MpepError, Result};
use crate::likelihood::{extra_time_at_risk, rmst, CountFamily, Model};

/// Stratum grid and exposure assumptions for a synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticShape {
    pub n_sex: usize,
    pub n_age: usize,
    pub n_year: usize,
    pub n_region: usize,
    /// General population size of every stratum.
    pub population: u64,
    /// Cohort person-years on treatment per cohort member.
    #[serde(default = "default_on")]
    pub on_fraction: f64,
    /// Cohort person-years off treatment per cohort member.
    #[serde(default = "default_off")]
    pub off_fraction: f64,
    /// Person-years contributed by each extra death in its year.
    #[serde(default = "default_death_time")]
    pub death_time_fraction: f64,
}

fn default_on() -> f64 {
    0.55
}

fn default_off() -> f64 {
    0.35
}

fn default_death_time() -> f64 {
    0.5
}

impl SyntheticShape {
    pub fn new(
        n_sex: usize,
        n_age: usize,
        n_year: usize,
        n_region: usize,
        population: u64,
    ) -> Self {
        SyntheticShape {
            n_sex,
            n_age,
            n_year,
            n_region,
            population,
            on_fraction: default_on(),
            off_fraction: default_off(),
            death_time_fraction: default_death_time(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(MpepError::InvalidInput(m));
        if [self.n_sex, self.n_age, self.n_year, self.n_region].contains(&0) {
            return bad("every factor needs at least one level".into());
        }
        if self.population == 0 {
            return bad("population must be positive".into());
        }
        if !(self.on_fraction >= 0.0
            && self.off_fraction >= 0.0
            && self.on_fraction + self.off_fraction <= 1.0)
        {
            return bad(format!(
                "on/off fractions must be non-negative and sum to at most 1 (got {} + {})",
                self.on_fraction, self.off_fraction
            ));
        }
        if !(0.0..=1.0).contains(&self.death_time_fraction) {
            return bad(format!(
                "death time fraction {} outside [0, 1]",
                self.death_time_fraction
            ));
        }
        Ok(())
    }

    /// A dataset with this shape and no observations, for building the
    /// parameter layout of a synthetic truth.
    pub fn skeleton(&self, config: &ModelConfig) -> Result<StrataDataset> {
        self.validate()?;
        let levels = Levels::synthetic(self.n_sex, self.n_age, self.n_year, self.n_region);
        let event_types = config.event_names();
        let n_events = event_types.len();
        let header = DatasetHeader {
            deaths: config
                .deaths_event()
                .and_then(|d| event_types.iter().position(|e| e == d)),
            levels,
            event_types,
        };
        let row = StratumCounts {
            n_c: 0,
            population: self.population,
            t_on: 0.0,
            t_off: 0.0,
            t_o: 0.0,
            t_d: 0.0,
            x_o: 0,
            x_c_on: vec![0; n_events],
            x_c_off: vec![0; n_events],
            x_e: vec![0; n_events],
        };
        let n = header.levels.n_strata();
        StrataDataset::new(header, vec![row; n])
    }
}

/// Shape plus named true parameter values, as stored in truth JSON files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticTruth {
    pub shape: SyntheticShape,
    pub params: IndexMap<String, f64>,
}

impl SyntheticTruth {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| MpepError::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| MpepError::io(path, e))
    }

    /// The parameter vector in the layout `config` implies for this shape.
    pub fn vector(&self, config: &ModelConfig) -> Result<ParameterVector> {
        let model = Model::new(config, &self.shape.skeleton(config)?)?;
        let named = self.params.iter().map(|(k, v)| (k.clone(), *v)).collect();
        model.design().layout.from_named(&named)
    }

    pub fn generate(&self, config: &ModelConfig, seed: u64) -> Result<StrataDataset> {
        generate_synthetic(&self.vector(config)?, config, &self.shape, seed)
    }
}

/// Draws one count. Every family consumes one uniform for the inflation
/// step first, so families that coincide share their draw path.
fn draw_count(rng: &mut ChaCha8Rng, mu: f64, family: CountFamily) -> u64 {
    let u: f64 = rng.random();
    if family.pi().is_some_and(|pi| u < pi) {
        return 0;
    }
    let mean = match family.theta() {
        Some(theta) => {
            let g = Gamma::new(theta, mu / theta).expect("positive shape and scale");
            g.sample(rng)
        }
        None => mu,
    };
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean)
        .expect("positive finite mean")
        .sample(rng) as u64
}

/// Draws a dataset from the model at `truth`.
pub fn generate_synthetic(
    truth: &ParameterVector,
    config: &ModelConfig,
    shape: &SyntheticShape,
    seed: u64,
) -> Result<StrataDataset> {
    let skeleton = shape.skeleton(config)?;
    let model = Model::new(config, &skeleton)?;
    let latent = model.latent(truth)?;
    let design = model.design();
    let p = truth.values();

    let check_rate = |v: f64, what: &str| {
        if v > 0.0 && v.is_finite() {
            Ok(())
        } else {
            Err(MpepError::InvalidParameters(format!("true {what} is {v}")))
        }
    };
    let check_prob = |v: f64, what: &str| {
        if v > 0.0 && v < 1.0 {
            Ok(())
        } else {
            Err(MpepError::InvalidParameters(format!(
                "true {what} {v} is outside (0, 1)"
            )))
        }
    };
    for s in 0..skeleton.len() {
        check_prob(latent.prev_c[s], "cohort prevalence")?;
        check_prob(latent.prev_e[s], "extra prevalence")?;
        check_rate(latent.rate_o[s], "exit rate")?;
        for rates in &latent.rate_c {
            check_rate(rates[2 * s], "event rate")?;
            check_rate(rates[2 * s + 1], "event rate")?;
        }
    }

    let n_events = design.n_events();
    let deaths = skeleton.header().deaths;
    let families: Vec<CountFamily> = (0..n_events)
        .map(|e| model.count_family(RegressionId::Event(e), p))
        .collect();
    let exit_family = model.count_family(RegressionId::Exit, p);
    let pm = design
        .logit_pmatch
        .map_or(1.0, |i| crate::likelihood::sigmoid(p[i]));
    let f = shape.death_time_fraction;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let header = skeleton.header().clone();
    let mut rows = Vec::with_capacity(skeleton.len());
    for s in 0..skeleton.len() {
        let population = shape.population;
        let n_c = Binomial::new(population, latent.prev_c[s])
            .map_err(|e| MpepError::InvalidParameters(e.to_string()))?
            .sample(&mut rng);
        let t_on = shape.on_fraction * n_c as f64;
        let t_off = shape.off_fraction * n_c as f64;
        let t_o = t_off;
        let n_e = latent.n_e[s];
        let lambda_o = latent.rate_o[s];
        let surv = rmst(lambda_o)?;

        let bias = |e: usize| design.bias[e][s].map_or(1.0, |i| p[i].exp());
        let linked = |e: usize| {
            let r = &latent.rate_c[e];
            r[2 * s] * t_off + r[2 * s + 1] * t_on
        };
        // expected t_d solves t_d = f * E[x_e deaths | t_e(t_d)]
        let expected_t_d = match deaths {
            Some(d) if f > 0.0 => {
                let k = pm * latent.rate_c[d][2 * s] * bias(d);
                let c = (1.0 - pm) * linked(d);
                let above = f * (k * n_e * surv + c) / (1.0 - f * k * (1.0 - surv));
                if above <= n_e {
                    above
                } else {
                    f * c / (1.0 - f * k)
                }
            }
            _ => 0.0,
        };
        if !(expected_t_d.is_finite() && expected_t_d >= 0.0) {
            return Err(MpepError::InvalidParameters(format!(
                "extra death rate too large for stratum {s}"
            )));
        }
        let t_e = extra_time_at_risk(n_e, expected_t_d, lambda_o);

        let x_o = draw_count(&mut rng, lambda_o * t_o, exit_family);
        let mut x_c_on = vec![0; n_events];
        let mut x_c_off = vec![0; n_events];
        let mut x_e = vec![0; n_events];
        for e in 0..n_events {
            let reg = design.regression(RegressionId::Event(e));
            let lam_on = latent.rate_c[e][reg.row_index(s, Status::On)];
            let lam_off = latent.rate_c[e][reg.row_index(s, Status::Off)];
            x_c_on[e] = draw_count(&mut rng, pm * lam_on * t_on, families[e]);
            x_c_off[e] = draw_count(&mut rng, pm * lam_off * t_off, families[e]);
            let mu_e = pm * lam_off * t_e * bias(e) + (1.0 - pm) * linked(e);
            x_e[e] = draw_count(&mut rng, mu_e, families[e]);
        }
        let t_d = match deaths {
            Some(d) => expected_t_d.min(f * x_e[d] as f64),
            None => 0.0,
        };
        rows.push(StratumCounts {
            n_c,
            population,
            t_on,
            t_off,
            t_o,
            t_d,
            x_o,
            x_c_on,
            x_c_off,
            x_e,
        });
    }
    StrataDataset::new(header, rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Family;
    use crate::data::write_dataset;

    fn config(family: Family) -> ModelConfig {
        let mut cfg = ModelConfig::main_effects(&["deaths", "hosp"], family);
        cfg.events[0].deaths = true;
        cfg
    }

    fn truth(cfg: &ModelConfig, shape: &SyntheticShape, intercepts: [f64; 5]) -> ParameterVector {
        let model = Model::new(cfg, &shape.skeleton(cfg).unwrap()).unwrap();
        let layout = &model.design().layout;
        let mut p = layout.zeros();
        let mut set = |name: &str, v: f64| {
            let i = layout.index(name).unwrap_or_else(|| panic!("{name}"));
            p.values_mut()[i] = v;
        };
        set("deaths.beta.intercept", intercepts[0]);
        set("hosp.beta.intercept", intercepts[1]);
        set("exit.beta.intercept", intercepts[2]);
        set("prevalence.beta.intercept", intercepts[3]);
        for s in 0..shape.n_sex * shape.n_age * shape.n_year * shape.n_region {
            let name = layout.names()[model.design().logit_prev_c.start + s].clone();
            set(&name, intercepts[4]);
        }
        for name in ["deaths.log_theta", "hosp.log_theta", "exit.log_theta"] {
            if layout.index(name).is_some() {
                set(name, 3.0);
            }
        }
        p
    }

    fn csv_bytes(ds: &StrataDataset) -> Vec<u8> {
        let mut buf = Vec::new();
        write_dataset(ds, &mut buf).unwrap();
        buf
    }

    #[test]
    fn fixed_seed_is_byte_identical() {
        let cfg = config(Family::Nb);
        let shape = SyntheticShape::new(2, 3, 3, 2, 200_000);
        let t = truth(&cfg, &shape, [-3.9, -2.8, -3.5, -5.3, -4.8]);
        let a = generate_synthetic(&t, &cfg, &shape, 42).unwrap();
        let b = generate_synthetic(&t, &cfg, &shape, 42).unwrap();
        assert_eq!(csv_bytes(&a), csv_bytes(&b));
        let c = generate_synthetic(&t, &cfg, &shape, 43).unwrap();
        assert_ne!(csv_bytes(&a), csv_bytes(&c));
    }

    #[test]
    fn zero_extra_population_gives_no_extra_events() {
        let cfg = config(Family::Poisson);
        let shape = SyntheticShape::new(2, 3, 3, 2, 200_000);
        let t = truth(
            &cfg,
            &shape,
            [0.01f64.ln(), 0.01f64.ln(), 0.01f64.ln(), -60.0, -4.8],
        );
        let ds = generate_synthetic(&t, &cfg, &shape, 1).unwrap();
        assert!(ds.rows().iter().all(|r| r.x_e.iter().all(|&x| x == 0)));
        assert!(ds.rows().iter().all(|r| r.t_d == 0.0));
    }

    #[test]
    fn mean_cohort_deaths_match_rate() {
        // 0.02 deaths per person-year off treatment over 1000 person-years
        let cfg = config(Family::Poisson);
        let mut shape = SyntheticShape::new(1, 1, 1, 1, 1_000_000);
        shape.on_fraction = 0.0;
        shape.off_fraction = 1.0;
        let model = Model::new(&cfg, &shape.skeleton(&cfg).unwrap()).unwrap();
        let layout = &model.design().layout;
        let mut p = layout.zeros();
        p.values_mut()[layout.index("deaths.beta.intercept").unwrap()] = 0.02f64.ln();
        p.values_mut()[layout.index("hosp.beta.intercept").unwrap()] = 0.02f64.ln();
        p.values_mut()[layout.index("exit.beta.intercept").unwrap()] = 0.02f64.ln();
        p.values_mut()[layout.index("prevalence.beta.intercept").unwrap()] = -8.0;
        // logit(1/1000): cohort of about 1000 people, off treatment all year
        p.values_mut()[model.design().logit_prev_c.start] = (0.001f64 / 0.999).ln();
        let mut total = 0.0;
        let mut exposure = 0.0;
        for seed in 0..200 {
            let ds = generate_synthetic(&p, &cfg, &shape, seed).unwrap();
            let r = &ds.rows()[0];
            total += r.x_c_off[0] as f64;
            exposure += r.t_off;
        }
        // rescale to exactly 1000 person-years per replicate
        let mean = total / exposure * 1000.0;
        assert!(
            (mean - 20.0).abs() < 3.0 * (20.0f64 / 200.0).sqrt(),
            "{mean}"
        );
    }

    #[test]
    fn zip_without_inflation_matches_poisson_draws() {
        let shape = SyntheticShape::new(2, 3, 2, 2, 200_000);
        let pois = config(Family::Poisson);
        let t = truth(&pois, &shape, [-3.9, -2.8, -3.5, -5.3, -4.8]);
        let zip = config(Family::Zip);
        let zmodel = Model::new(&zip, &shape.skeleton(&zip).unwrap()).unwrap();
        let zl = &zmodel.design().layout;
        let pl_names = Model::new(&pois, &shape.skeleton(&pois).unwrap())
            .unwrap()
            .design()
            .layout
            .to_named(&t);
        let mut zt = zl.zeros();
        for (i, name) in zl.names().iter().enumerate() {
            zt.values_mut()[i] = match pl_names.get(name) {
                Some(v) => *v,
                None => f64::NEG_INFINITY, // logit pi = -inf, pi = 0
            };
        }
        let a = generate_synthetic(&t, &pois, &shape, 9).unwrap();
        let b = generate_synthetic(&zt, &zip, &shape, 9).unwrap();
        assert_eq!(csv_bytes(&a), csv_bytes(&b));
    }

    #[test]
    fn t_d_never_exceeds_extra_deaths() {
        let cfg = config(Family::Poisson);
        let shape = SyntheticShape::new(2, 3, 3, 2, 20_000);
        let t = truth(&cfg, &shape, [-3.9, -2.8, -3.5, -5.3, -4.8]);
        for seed in 0..20 {
            let ds = generate_synthetic(&t, &cfg, &shape, seed).unwrap();
            for r in ds.rows() {
                assert!(r.t_d <= 0.5 * r.x_e[0] as f64 + 1e-12);
            }
        }
    }

    #[test]
    fn rejects_degenerate_truth() {
        let cfg = config(Family::Poisson);
        let shape = SyntheticShape::new(1, 1, 1, 1, 1000);
        let mut t = truth(&cfg, &shape, [-3.9, -2.8, -3.5, -5.3, -4.8]);
        t.values_mut()[0] = -1e4; // rate underflows to 0
        assert!(generate_synthetic(&t, &cfg, &shape, 0).is_err());
    }

    #[test]
    fn truth_json_roundtrip() {
        let cfg = config(Family::Poisson);
        let shape = SyntheticShape::new(1, 2, 1, 1, 1000);
        let model = Model::new(&cfg, &shape.skeleton(&cfg).unwrap()).unwrap();
        let layout = &model.design().layout;
        let truth = SyntheticTruth {
            shape: shape.clone(),
            params: layout.to_named(&layout.zeros()),
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("truth.json");
        truth.save(&path).unwrap();
        let back = SyntheticTruth::load(&path).unwrap();
        assert_eq!(back, truth);
        assert_eq!(back.vector(&cfg).unwrap(), layout.zeros());
        let mut partial = truth.clone();
        partial.params.shift_remove("exit.beta.intercept");
        assert!(partial.vector(&cfg).is_err());
    }
}
