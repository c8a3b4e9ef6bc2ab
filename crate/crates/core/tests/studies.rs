//! Seeded Monte Carlo studies of model comparison, selection and the
//! sampler's output domains on desk-scale synthetic data.

mod common;

use common::{desk_config, desk_shape, desk_truth};
use mpep_core::config::PmatchPrior;
use mpep_core::diagnostics::pd_dic;
use mpep_core::sampler::{run_chains, SamplerConfig, Target};
use mpep_core::select::score_fit;
use mpep_core::{fit, generate_synthetic, select_terms, Candidate, Family, FitScore, ModelConfig, StrataDataset};

fn poisson_data(seed: u64) -> StrataDataset {
    let cfg = desk_config(Family::Poisson);
    generate_synthetic(&desk_truth(&cfg, &desk_shape()), &cfg, &desk_shape(), seed).unwrap()
}

fn score(cfg: &ModelConfig, data: &StrataDataset, seed: u64) -> (FitScore, mpep_core::Fit) {
    let f = fit(cfg, data, &SamplerConfig { seed, ..SamplerConfig::default() }).unwrap();
    (score_fit(&f).unwrap(), f)
}

#[test]
fn families_on_poisson_data() {
    let data = poisson_data(31);
    let mut dic = Vec::new();
    let mut nb_theta = Vec::new();
    for family in [Family::Poisson, Family::Zip, Family::Nb, Family::Zinb] {
        let (s, f) = score(&desk_config(family), &data, 2);
        assert!(s.converged, "{family:?} did not converge");
        if family == Family::Nb {
            let summary = f.summary().unwrap();
            for name in ["deaths.theta", "hosp.theta", "exit.theta"] {
                nb_theta.push(summary.parameter(name).unwrap().mean);
            }
        }
        dic.push(s.dic);
    }
    let best = dic.iter().cloned().fold(f64::INFINITY, f64::min);
    println!("DIC poisson/zip/nb/zinb {dic:?}; NB theta means {nb_theta:?}");
    assert!(dic[0] - best <= 5.0, "Poisson not among the lowest DIC: {dic:?}");
    assert!(nb_theta.iter().all(|&t| t > 50.0), "theta means {nb_theta:?}");
}

/// ZIP minus Poisson DIC on pure Poisson data, per seed.
fn zip_dic_gaps() -> Vec<f64> {
    [41, 42, 43]
        .into_iter()
        .map(|seed| {
            let data = poisson_data(seed);
            let (p, _) = score(&desk_config(Family::Poisson), &data, seed);
            let (z, _) = score(&desk_config(Family::Zip), &data, seed);
            println!("seed {seed}: DIC poisson {:.2} zip {:.2}", p.dic, z.dic);
            z.dic - p.dic
        })
        .collect()
}

#[test]
fn zip_does_not_win_on_poisson_data() {
    let gaps = zip_dic_gaps();
    assert!(gaps.iter().all(|&g| g >= -5.0), "ZIP - Poisson DIC {gaps:?}");
}

/// The inflation parameters cannot reach zero under their prior, so the
/// plug-in fit pays about 2 deviance units and pD grows by about 2: ZIP
/// lands 5 to 7 points above Poisson on these seeds.
#[test]
#[ignore = "ZIP sits 5-7 DIC points above Poisson on pure Poisson data"]
fn zip_and_poisson_dic_within_five() {
    let gaps = zip_dic_gaps();
    assert!(gaps.iter().all(|g| g.abs() <= 5.0), "ZIP - Poisson DIC {gaps:?}");
}

#[test]
fn selection_finds_strong_year_by_treatment_interaction() {
    let base = desk_config(Family::Poisson);
    let mut generating = base.clone();
    generating.events[0].fixed.push("treatment:year".parse().unwrap());
    generating.validate().unwrap();
    let mut truth = desk_truth(&generating, &desk_shape());
    let model = mpep_core::Model::new(&generating, &desk_shape().skeleton(&generating).unwrap()).unwrap();
    let names = model.design().layout.names();
    let interaction: Vec<usize> = (0..names.len())
        .filter(|&i| names[i].starts_with("deaths.beta.") && names[i].contains(':'))
        .collect();
    assert_eq!(interaction.len(), 2);
    for (k, &i) in interaction.iter().enumerate() {
        truth.values_mut()[i] = [0.9, -0.9][k];
    }
    let candidate = Candidate {
        regression: "deaths".into(),
        term: "treatment:year".parse().unwrap(),
        random: false,
    };
    let mut retained = 0;
    for seed in 0..20u64 {
        let data = generate_synthetic(&truth, &generating, &desk_shape(), 600 + seed).unwrap();
        let sampler = SamplerConfig {
            seed,
            ..SamplerConfig::default()
        };
        let (selected, trace) = select_terms(&base, std::slice::from_ref(&candidate), &data, &sampler).unwrap();
        let kept = trace.steps[0].retained;
        assert_eq!(kept, selected != base);
        println!("seed {seed}: change {:?}, retained {kept}", trace.steps[0].change);
        retained += kept as usize;
    }
    assert!(retained >= 18, "retained in {retained}/20");
}

/// Poisson counts with rate `exp(a)`, optionally with a second coefficient
/// multiplying an all-zero covariate.
struct PoissonRate<'a> {
    counts: &'a [u64],
    vacuous: bool,
}

impl PoissonRate<'_> {
    fn log_lik(&self, a: f64) -> f64 {
        let mu = a.exp();
        self.counts
            .iter()
            .map(|&x| x as f64 * a - mu - statrs::function::gamma::ln_gamma(x as f64 + 1.0))
            .sum()
    }
}

impl Target for PoissonRate<'_> {
    fn dim(&self) -> usize {
        1 + self.vacuous as usize
    }

    fn log_density_and_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let n = self.counts.len() as f64;
        let s: f64 = self.counts.iter().sum::<u64>() as f64;
        let mut lp = self.log_lik(x[0]) - x[0] * x[0] / 200.0;
        grad[0] = s - n * x[0].exp() - x[0] / 100.0;
        if self.vacuous {
            // the covariate is zero, so only the prior sees this coefficient
            lp -= x[1] * x[1] / 200.0;
            grad[1] = -x[1] / 100.0;
        }
        lp
    }
}

#[test]
fn vacuous_parameter_leaves_dic_unchanged() {
    let counts: Vec<u64> = vec![3, 5, 2, 4, 6, 3, 4, 5, 2, 3, 4, 4];
    let sampler = SamplerConfig::default();
    let mut dics = Vec::new();
    for vacuous in [false, true] {
        let target = PoissonRate {
            counts: &counts,
            vacuous,
        };
        let draws = run_chains(&target, &sampler).unwrap();
        let mut lls = Vec::new();
        for c in 0..draws.n_chains() {
            for i in 0..draws.n_iter() {
                lls.push(target.log_lik(draws.draw(c, i)[0]));
            }
        }
        let (pd, dic) = pd_dic(&lls, target.log_lik(draws.mean()[0]));
        println!("vacuous {vacuous}: pD {pd:.3}, DIC {dic:.3}");
        dics.push(dic);
    }
    assert!((dics[0] - dics[1]).abs() < 0.5, "DIC {dics:?}");
}

#[test]
fn constrained_draws_stay_in_their_domains() {
    let mut cfg = desk_config(Family::Zinb);
    cfg.events[0].re.push("treatment:year".parse().unwrap());
    cfg.pmatch = Some(PmatchPrior {
        logit_mean: 2.0,
        logit_sd: 0.5,
    });
    cfg.validate().unwrap();
    let data = poisson_data(51);
    let f = fit(&cfg, &data, &SamplerConfig { chains: 2, warmup: 300, samples: 300, ..SamplerConfig::default() }).unwrap();
    let names = f.draws.names();
    let mut checked = 0;
    for c in 0..f.draws.n_chains() {
        for i in 0..f.draws.n_iter() {
            for (j, &v) in f.draws.draw(c, i).iter().enumerate() {
                assert!(v.is_finite(), "{} = {v}", names[j]);
                let n = &names[j];
                if n.ends_with("log_theta") || n.ends_with("log_sigma") {
                    let x = v.exp();
                    assert!(x > 0.0 && x.is_finite(), "{n}: {x}");
                    checked += 1;
                } else if n.ends_with("logit_pi") || n == "logit_pmatch" {
                    let x = 1.0 / (1.0 + (-v).exp());
                    assert!(x > 0.0 && x < 1.0, "{n}: {x}");
                    checked += 1;
                }
            }
        }
    }
    assert!(checked > 0);
}
