mod common;

use common::{desk_config, desk_shape, desk_truth};
use mpep_core::config::BiasSpec;
use mpep_core::data::{read_dataset, write_dataset, LoadOptions};
use mpep_core::diagnostics::resdev_contribution;
use mpep_core::likelihood::CountFamily;
use mpep_core::{
    consistency_pvalue, generate_synthetic, Family, Levels, Model, ModelConfig, ParameterVector,
    RegressionId, StrataDataset, StratumKey, UnitTotals,
};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn dataset(cfg: &ModelConfig, seed: u64) -> StrataDataset {
    let truth = desk_truth(cfg, &desk_shape());
    generate_synthetic(&truth, cfg, &desk_shape(), seed).unwrap()
}

fn csv_text(ds: &StrataDataset) -> String {
    let mut buf = Vec::new();
    write_dataset(ds, &mut buf).unwrap();
    String::from_utf8(buf).unwrap()
}

fn reread(text: &str, levels: Option<Levels>) -> StrataDataset {
    let opts = LoadOptions {
        levels,
        ..LoadOptions::default()
    };
    read_dataset(text.as_bytes(), &opts).unwrap()
}

fn jitter(p: &ParameterVector, noise: &[f64]) -> ParameterVector {
    ParameterVector::new(p.values().iter().zip(noise.iter().cycle()).map(|(v, e)| v + e).collect())
}

/// Position in `to` of the stratum of `from` with the same labels.
fn same_stratum(from: &Levels, to: &Levels, key: StratumKey) -> usize {
    let find = |labels: &[String], l: &String| labels.iter().position(|x| x == l).unwrap();
    to.index_of(&StratumKey {
        sex: find(&to.sex, &from.sex[key.sex]),
        age: find(&to.age, &from.age[key.age]),
        year: find(&to.year, &from.year[key.year]),
        region: find(&to.region, &from.region[key.region]),
    })
}

/// Dense fixed-effect matrix of a regression, rows in `order`.
fn fixed_matrix(model: &Model, id: RegressionId, order: &[usize]) -> DMatrix<f64> {
    let reg = model.design().regression(id);
    let mut x = DMatrix::zeros(order.len(), reg.fixed.len());
    for (i, &r) in order.iter().enumerate() {
        for &c in &reg.rows[r].fixed {
            x[(i, c - reg.fixed.start)] = 1.0;
        }
    }
    x
}

fn interaction_config() -> ModelConfig {
    let mut cfg = desk_config(Family::Poisson);
    cfg.events[0].fixed.push("treatment:year".parse().unwrap());
    cfg.prevalence.fixed.push("sex:age".parse().unwrap());
    cfg.validate().unwrap();
    cfg
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// Reordering factor levels changes the coefficients but not the fitted
    /// rates or prevalences of any stratum.
    #[test]
    fn level_order_does_not_change_predictions(noise in prop::collection::vec(-0.5f64..0.5, 16)) {
        let cfg = interaction_config();
        let a_data = dataset(&cfg, 11);
        let la = a_data.levels().clone();
        let mut lb = la.clone();
        lb.age.rotate_left(1);
        lb.year.reverse();
        lb.region.reverse();
        let b_data = reread(&csv_text(&a_data), Some(lb.clone()));
        let a = Model::new(&cfg, &a_data).unwrap();
        let b = Model::new(&cfg, &b_data).unwrap();
        let pa = jitter(&desk_truth(&cfg, &desk_shape()), &noise);

        let strata: Vec<usize> = la.keys().map(|k| same_stratum(&la, &lb, k)).collect();
        let mut pb = b.design().layout.zeros();
        for reg in &a.design().regressions {
            let rows_per = if matches!(reg.id, RegressionId::Event(_)) { 2 } else { 1 };
            let a_order: Vec<usize> = (0..reg.rows.len()).collect();
            let b_order: Vec<usize> = (0..reg.rows.len())
                .map(|r| strata[r / rows_per] * rows_per + r % rows_per)
                .collect();
            let xa = fixed_matrix(&a, reg.id, &a_order);
            let xb = fixed_matrix(&b, reg.id, &b_order);
            let eta = &xa * DVector::from_column_slice(&pa.values()[reg.fixed.clone()]);
            let beta_b = xb.clone().svd(true, true).solve(&eta, 1e-12).unwrap();
            let resid = (&xb * &beta_b - &eta).amax();
            prop_assert!(resid < 1e-9, "{} not reproducible: residual {resid}", reg.name);
            let start = b.design().regression(reg.id).fixed.start;
            pb.values_mut()[start..start + beta_b.len()].copy_from_slice(beta_b.as_slice());
        }
        let (ca, cb) = (&a.design().logit_prev_c, &b.design().logit_prev_c);
        for (s, &t) in strata.iter().enumerate() {
            pb.values_mut()[cb.start + t] = pa.values()[ca.start + s];
        }

        let qa = a.latent(&pa).unwrap();
        let qb = b.latent(&pb).unwrap();
        let close = |x: f64, y: f64| (x - y).abs() <= 1e-9 * x.abs().max(1e-300);
        for (s, &t) in strata.iter().enumerate() {
            prop_assert!(close(qa.prev_e[s], qb.prev_e[t]));
            prop_assert!(close(qa.total[s], qb.total[t]));
            prop_assert!(close(qa.rate_o[s], qb.rate_o[t]));
            for e in 0..qa.rate_c.len() {
                for status in 0..2 {
                    prop_assert!(close(qa.rate_c[e][2 * s + status], qb.rate_c[e][2 * t + status]));
                }
            }
        }
        let la_ev = a.evaluate(&pa).unwrap().log_likelihood;
        let lb_ev = b.evaluate(&pb).unwrap().log_likelihood;
        prop_assert!((la_ev - lb_ev).abs() < 1e-8 * la_ev.abs());
    }

    /// The order of rows in the input file has no effect on the posterior.
    #[test]
    fn row_order_does_not_change_posterior(seed in 0u64..1000, noise in prop::collection::vec(-0.3f64..0.3, 8)) {
        let cfg = desk_config(Family::Zinb);
        let ds = dataset(&cfg, seed);
        let text = csv_text(&ds);
        let mut lines: Vec<&str> = text.lines().collect();
        let header = lines.remove(0);
        let n = lines.len();
        lines.rotate_left((seed as usize) % n);
        lines.reverse();
        let shuffled = std::iter::once(header).chain(lines).collect::<Vec<_>>().join("\n");
        let a = Model::new(&cfg, &ds).unwrap();
        let b = Model::new(&cfg, &reread(&shuffled, None)).unwrap();
        let p = jitter(&desk_truth(&cfg, &desk_shape()), &noise);
        let ea = a.evaluate(&p).unwrap();
        let eb = b.evaluate(&p).unwrap();
        prop_assert_eq!(ea.log_posterior, eb.log_posterior);
        let mut ga = vec![0.0; p.len()];
        let mut gb = vec![0.0; p.len()];
        a.log_density_and_grad(p.values(), &mut ga);
        b.log_density_and_grad(p.values(), &mut gb);
        prop_assert_eq!(ga, gb);
    }

    /// Bias terms fixed at zero leave the posterior unchanged apart from
    /// their own prior.
    #[test]
    fn zero_bias_is_no_bias(noise in prop::collection::vec(-0.5f64..0.5, 8)) {
        let plain_cfg = desk_config(Family::Nb);
        let ds = dataset(&plain_cfg, 3);
        let mut biased_cfg = plain_cfg.clone();
        biased_cfg.bias.push(BiasSpec { event: "hosp".into(), ..BiasSpec::default() });
        let plain = Model::new(&plain_cfg, &ds).unwrap();
        let biased = Model::new(&biased_cfg, &ds).unwrap();
        let p = jitter(&desk_truth(&plain_cfg, &desk_shape()), &noise);
        let named = plain.design().layout.to_named(&p);
        let mut q = biased.design().layout.zeros();
        let mut bias_idx = Vec::new();
        for (i, name) in biased.design().layout.names().iter().enumerate() {
            match named.get(name) {
                Some(v) => q.values_mut()[i] = *v,
                None => bias_idx.push(i),
            }
        }
        prop_assert!(!bias_idx.is_empty());
        let ea = plain.evaluate(&p).unwrap();
        let eb = biased.evaluate(&q).unwrap();
        prop_assert_eq!(ea.log_likelihood, eb.log_likelihood);
        let rest: f64 = eb.prior_terms.iter().enumerate().filter(|(i, _)| !bias_idx.contains(i)).map(|(_, v)| v).sum();
        prop_assert_eq!(ea.log_prior, rest);
    }

    #[test]
    fn dataset_save_load_roundtrip(seed in 0u64..10_000) {
        let cfg = desk_config(Family::Zip);
        let ds = dataset(&cfg, seed);
        let back = reread(&csv_text(&ds), None);
        prop_assert_eq!(back, ds);
    }

    #[test]
    fn poisson_resdev_is_non_negative(x in 0u64..5000, mu in 1e-8f64..5000.0) {
        let d = resdev_contribution(x, mu, CountFamily::Poisson);
        prop_assert!(d >= 0.0, "x={x} mu={mu} d={d}");
    }

    #[test]
    fn nb_resdev_is_non_negative(x in 0u64..2000, mu in 1e-6f64..2000.0, log_theta in -3f64..10.0) {
        let d = resdev_contribution(x, mu, CountFamily::Nb { theta: log_theta.exp() });
        prop_assert!(d >= -1e-9, "x={x} mu={mu} d={d}");
    }

    /// Swapping the two sources flips every difference and leaves the
    /// p-values unchanged.
    #[test]
    fn consistency_pvalue_is_symmetric(
        shift in -3f64..3.0,
        seed in 0u64..1000,
        a in prop::collection::vec(-5f64..5.0, 120),
        b in prop::collection::vec(-5f64..5.0, 120),
    ) {
        let units = |v: &[f64], s: f64| UnitTotals {
            labels: vec!["Y0".into(), "Y1".into(), "Y2".into()],
            population: vec![1.0; 3],
            draws: v.chunks(40).map(|c| c.iter().map(|x| x + s).collect()).collect(),
        };
        let (ua, ub) = (units(&a, shift), units(&b, 0.0));
        let ab = consistency_pvalue(&ua, &ub, seed).unwrap();
        let ba = consistency_pvalue(&ub, &ua, seed).unwrap();
        for (x, y) in ab.units.iter().zip(&ba.units) {
            prop_assert!((0.0..=1.0).contains(&x.p_value));
            prop_assert_eq!(x.p_value, y.p_value);
        }
    }
}

/// Residual deviance of a report equals the sum over its sub-models, and
/// the per-point table does not depend on input row order.
#[test]
fn resdev_is_additive_and_row_order_free() {
    use mpep_core::deviance_report;
    use mpep_core::sampler::{run_chains, SamplerConfig};

    let cfg = desk_config(Family::Poisson);
    let ds = dataset(&cfg, 21);
    let text = csv_text(&ds);
    let mut lines: Vec<&str> = text.lines().collect();
    let header = lines.remove(0);
    lines.reverse();
    let reversed = reread(&(std::iter::once(header).chain(lines).collect::<Vec<_>>().join("\n")), None);
    let sampler = SamplerConfig {
        chains: 2,
        warmup: 200,
        samples: 100,
        ..SamplerConfig::default()
    };
    let a = Model::new(&cfg, &ds).unwrap();
    let draws = run_chains(&a, &sampler).unwrap();
    let ra = deviance_report(&a, &draws).unwrap();
    let rb = deviance_report(&Model::new(&cfg, &reversed).unwrap(), &draws).unwrap();
    assert_eq!(ra, rb);
    let sum: f64 = ra.rows.iter().map(|r| r.resdev).sum();
    assert!((sum - ra.total.resdev).abs() < 1e-9 * sum);
    let points: f64 = ra.points.iter().map(|p| p.resdev).sum();
    assert!((points - ra.total.resdev).abs() < 1e-9 * sum);
}
