use mpep_core::sampler::{ess_bulk, rhat, run_chains, SamplerConfig, Target};
use statrs::distribution::{ContinuousCDF, Normal};

struct StdNormal(usize);

impl Target for StdNormal {
    fn dim(&self) -> usize {
        self.0
    }

    fn log_density_and_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        for (g, v) in grad.iter_mut().zip(x) {
            *g = -v;
        }
        -0.5 * x.iter().map(|v| v * v).sum::<f64>()
    }
}

/// Bivariate normal with unit variances and correlation `rho`.
struct Correlated(f64);

impl Target for Correlated {
    fn dim(&self) -> usize {
        2
    }

    fn log_density_and_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let r = self.0;
        let k = 1.0 / (1.0 - r * r);
        grad[0] = -k * (x[0] - r * x[1]);
        grad[1] = -k * (x[1] - r * x[0]);
        -0.5 * k * (x[0] * x[0] - 2.0 * r * x[0] * x[1] + x[1] * x[1])
    }
}

/// Eight schools, non-centred: theta_j = mu + tau * z_j, log tau sampled.
struct EightSchools;

const Y: [f64; 8] = [28.0, 8.0, -3.0, 7.0, -1.0, 1.0, 18.0, 12.0];
const SIGMA: [f64; 8] = [15.0, 10.0, 16.0, 11.0, 9.0, 11.0, 10.0, 18.0];

impl Target for EightSchools {
    fn dim(&self) -> usize {
        10
    }

    fn log_density_and_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let mu = x[0];
        let log_tau = x[1];
        let tau = log_tau.exp();
        // mu ~ N(0, 5), tau ~ half-Cauchy(0, 5) with log Jacobian
        let mut lp = -0.5 * (mu / 5.0).powi(2) - (1.0 + (tau / 5.0).powi(2)).ln() + log_tau;
        grad[0] = -mu / 25.0;
        grad[1] = -2.0 * tau * tau / 25.0 / (1.0 + (tau / 5.0).powi(2)) + 1.0;
        for j in 0..8 {
            let z = x[2 + j];
            let theta = mu + tau * z;
            let r = (Y[j] - theta) / SIGMA[j];
            lp += -0.5 * z * z - 0.5 * r * r;
            let d_theta = r / SIGMA[j];
            grad[0] += d_theta;
            grad[1] += d_theta * tau * z;
            grad[2 + j] = -z + d_theta * tau;
        }
        lp
    }
}

fn cfg(seed: u64) -> SamplerConfig {
    SamplerConfig {
        seed,
        ..Default::default()
    }
}

fn pooled(chains: &[Vec<f64>]) -> Vec<f64> {
    chains.iter().flatten().copied().collect()
}

fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (
        m,
        v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0),
    )
}

#[test]
fn standard_normal_moments() {
    let d = run_chains(&StdNormal(2), &cfg(11)).unwrap();
    for j in 0..2 {
        let chains = d.param(j);
        let e = ess_bulk(&chains);
        let (m, v) = mean_var(&pooled(&chains));
        assert!(m.abs() < 3.0 / e.sqrt(), "mean {m}, ess {e}");
        assert!((v - 1.0).abs() < 0.1, "var {v}");
        assert!(rhat(&chains) < 1.01);
    }
    assert_eq!(d.divergences(), 0);
}

#[test]
fn correlated_normal_covariance() {
    let d = run_chains(&Correlated(0.9), &cfg(12)).unwrap();
    let a = pooled(&d.param(0));
    let b = pooled(&d.param(1));
    let (ma, va) = mean_var(&a);
    let (mb, vb) = mean_var(&b);
    let cov = a
        .iter()
        .zip(&b)
        .map(|(x, y)| (x - ma) * (y - mb))
        .sum::<f64>()
        / (a.len() as f64 - 1.0);
    assert!(
        (va - 1.0).abs() < 0.1 && (vb - 1.0).abs() < 0.1,
        "{va} {vb}"
    );
    assert!((cov - 0.9).abs() < 0.09, "{cov}");
}

#[test]
fn non_centred_funnel_rarely_diverges() {
    let d = run_chains(&EightSchools, &cfg(13)).unwrap();
    assert!(d.divergence_rate() < 0.005, "{}", d.divergence_rate());
    for j in 0..10 {
        assert!(rhat(&d.param(j)) < 1.05);
    }
}

/// Kolmogorov-Smirnov against N(0, 1) on thinned draws (thinned to keep
/// draws close to independent). Critical value at alpha = 0.01.
#[test]
fn one_dimensional_ks_smoke() {
    let std = Normal::new(0.0, 1.0).unwrap();
    let mut passes = 0;
    for seed in 0..20 {
        let c = SamplerConfig {
            chains: 2,
            warmup: 300,
            samples: 2000,
            seed: 100 + seed,
            ..Default::default()
        };
        let d = run_chains(&StdNormal(1), &c).unwrap();
        let mut x: Vec<f64> = pooled(&d.param(0)).into_iter().step_by(5).collect();
        x.sort_by(f64::total_cmp);
        let n = x.len() as f64;
        let stat = x
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let f = std.cdf(v);
                (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
            })
            .fold(0.0, f64::max);
        if stat < 1.628 / n.sqrt() {
            passes += 1;
        }
    }
    assert!(passes >= 19, "{passes}/20");
}
