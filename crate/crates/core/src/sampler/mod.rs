//! Multi-chain adaptive NUTS.

mod adapt;
mod convergence;
mod nuts;

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{MpepError, Result};
use crate::likelihood::Model;
use adapt::{DualAveraging, WindowedVariance};
pub use convergence::{ess, ess_bulk, quantile_mut, quantile_sorted, rhat, stable_mean};
use nuts::{Nuts, PhasePoint};

/// A differentiable log density on an unconstrained space.
pub trait Target: Sync {
    fn dim(&self) -> usize;

    /// Log density (up to a constant) with its gradient written to `grad`.
    /// Returns `-inf` outside the support.
    fn log_density_and_grad(&self, x: &[f64], grad: &mut [f64]) -> f64;

    fn param_names(&self) -> Vec<String> {
        (0..self.dim()).map(|i| format!("x[{i}]")).collect()
    }
}

impl Target for Model {
    fn dim(&self) -> usize {
        Model::dim(self)
    }

    fn log_density_and_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        Model::log_density_and_grad(self, x, grad)
    }

    fn param_names(&self) -> Vec<String> {
        self.design().layout.names().to_vec()
    }
}

pub const MAX_INIT_ATTEMPTS: usize = 100;
/// Post-warmup divergence fraction above which a run is flagged.
pub const DIVERGENCE_FLAG_RATE: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub chains: usize,
    pub warmup: usize,
    pub samples: usize,
    pub target_accept: f64,
    pub max_depth: usize,
    pub seed: u64,
    pub init_buffer: usize,
    pub term_buffer: usize,
    pub base_window: usize,
    /// Initial values are drawn uniformly from `[-init_radius, init_radius]`.
    pub init_radius: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            chains: 4,
            warmup: 1000,
            samples: 1000,
            target_accept: 0.8,
            max_depth: 10,
            seed: 1,
            init_buffer: 75,
            term_buffer: 50,
            base_window: 25,
            init_radius: 2.0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(MpepError::InvalidConfig(m));
        if self.chains < 2 {
            return bad(format!("at least 2 chains are needed, got {}", self.chains));
        }
        if self.warmup < 150 {
            return bad(format!(
                "warmup must be at least 150 iterations, got {}",
                self.warmup
            ));
        }
        if self.samples == 0 {
            return bad("samples must be positive".into());
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return bad(format!(
                "target acceptance {} outside (0, 1)",
                self.target_accept
            ));
        }
        if !(1..=30).contains(&self.max_depth) {
            return bad(format!("max tree depth {} outside 1..=30", self.max_depth));
        }
        if self.base_window == 0
            || self.init_buffer + self.base_window + self.term_buffer > self.warmup
        {
            return bad("adaptation windows do not fit in warmup".into());
        }
        if !(self.init_radius > 0.0 && self.init_radius.is_finite()) {
            return bad(format!(
                "init radius must be positive, got {}",
                self.init_radius
            ));
        }
        Ok(())
    }
}

/// Per-chain adaptation results and sampling statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainInfo {
    pub step_size: f64,
    pub inv_metric: Vec<f64>,
    pub divergences: usize,
    pub warmup_divergences: usize,
    pub max_depth_hits: usize,
    pub mean_accept_stat: f64,
    pub init_attempts: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorDraws {
    names: Vec<String>,
    n_iter: usize,
    /// `values[chain][iter * dim + param]`.
    values: Vec<Vec<f64>>,
    info: Vec<ChainInfo>,
}

impl PosteriorDraws {
    pub fn new(names: Vec<String>, values: Vec<Vec<f64>>, info: Vec<ChainInfo>) -> Result<Self> {
        let dim = names.len();
        let n_iter = values
            .first()
            .map_or(0, |v| if dim == 0 { 0 } else { v.len() / dim });
        if values.iter().any(|v| v.len() != n_iter * dim) || info.len() != values.len() {
            return Err(MpepError::InvalidInput(
                "inconsistent draw dimensions".into(),
            ));
        }
        Ok(PosteriorDraws {
            names,
            n_iter,
            values,
            info,
        })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn dim(&self) -> usize {
        self.names.len()
    }

    pub fn n_chains(&self) -> usize {
        self.values.len()
    }

    pub fn n_iter(&self) -> usize {
        self.n_iter
    }

    pub fn info(&self) -> &[ChainInfo] {
        &self.info
    }

    pub fn draw(&self, chain: usize, iter: usize) -> &[f64] {
        let d = self.dim();
        &self.values[chain][iter * d..(iter + 1) * d]
    }

    pub fn iter_draws(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.values.iter().flat_map(move |c| c.chunks(self.dim()))
    }

    /// One series per chain for parameter `j`.
    pub fn param(&self, j: usize) -> Vec<Vec<f64>> {
        let d = self.dim();
        self.values
            .iter()
            .map(|c| c.iter().skip(j).step_by(d).copied().collect())
            .collect()
    }

    /// Posterior mean of every parameter.
    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim()];
        let mut n = 0.0;
        for d in self.iter_draws() {
            n += 1.0;
            for (a, v) in m.iter_mut().zip(d) {
                *a += (v - *a) / n;
            }
        }
        m
    }

    pub fn divergences(&self) -> usize {
        self.info.iter().map(|i| i.divergences).sum()
    }

    pub fn divergence_rate(&self) -> f64 {
        self.divergences() as f64 / (self.n_chains() * self.n_iter).max(1) as f64
    }

    /// True when more than 1% of post-warmup transitions diverged.
    pub fn divergence_flag(&self) -> bool {
        self.divergence_rate() > DIVERGENCE_FLAG_RATE
    }

    /// Columnar CSV with `chain,iter` prefix columns.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["chain".to_string(), "iter".to_string()];
        header.extend(self.names.iter().cloned());
        w.write_record(&header)?;
        for c in 0..self.n_chains() {
            for i in 0..self.n_iter {
                let mut rec = vec![c.to_string(), i.to_string()];
                rec.extend(self.draw(c, i).iter().map(|v| format!("{v:e}")));
                w.write_record(&rec)?;
            }
        }
        w.flush().map_err(|e| MpepError::io("<draws>", e))?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = std::fs::File::create(path).map_err(|e| MpepError::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(f))
    }
}

/// Runs one chain: initialization, warmup adaptation, then sampling with
/// step size and metric frozen.
fn run_chain<T: Target + ?Sized>(
    target: &T,
    cfg: &SamplerConfig,
    chain: usize,
) -> Result<(Vec<f64>, ChainInfo)> {
    let dim = target.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(chain as u64);

    let mut attempts = 0;
    let mut z = loop {
        attempts += 1;
        let q: Vec<f64> = (0..dim)
            .map(|_| rng.random_range(-cfg.init_radius..cfg.init_radius))
            .collect();
        let z = PhasePoint::at(target, q);
        if z.logp.is_finite() && z.grad.iter().all(|g| g.is_finite()) {
            break z;
        }
        if attempts >= MAX_INIT_ATTEMPTS {
            return Err(MpepError::Sampler(format!(
                "chain {chain}: non-finite log posterior at {MAX_INIT_ATTEMPTS} initial points"
            )));
        }
    };

    let mut nuts = Nuts::new(target, cfg.max_depth);
    nuts.init_step_size(&z, &mut rng);
    let mut step = DualAveraging::new(cfg.target_accept);
    step.restart(nuts.step_size);
    let mut metric = WindowedVariance::new(
        dim,
        cfg.warmup,
        cfg.init_buffer,
        cfg.term_buffer,
        cfg.base_window,
    );

    let mut warmup_divergences = 0;
    for _ in 0..cfg.warmup {
        let (next, stats) = nuts.transition(&z, &mut rng);
        z = next;
        warmup_divergences += stats.divergent as usize;
        nuts.step_size = step.learn(stats.accept_stat);
        if let Some(var) = metric.learn(&z.q) {
            nuts.inv_metric = var;
            nuts.init_step_size(&z, &mut rng);
            step.restart(nuts.step_size);
        }
    }
    nuts.step_size = step.final_step_size();

    let mut values = Vec::with_capacity(cfg.samples * dim);
    let mut divergences = 0;
    let mut max_depth_hits = 0;
    let mut accept_sum = 0.0;
    for _ in 0..cfg.samples {
        let (next, stats) = nuts.transition(&z, &mut rng);
        z = next;
        divergences += stats.divergent as usize;
        max_depth_hits += (stats.depth >= cfg.max_depth) as usize;
        accept_sum += stats.accept_stat;
        values.extend_from_slice(&z.q);
    }
    Ok((
        values,
        ChainInfo {
            step_size: nuts.step_size,
            inv_metric: nuts.inv_metric.clone(),
            divergences,
            warmup_divergences,
            max_depth_hits,
            mean_accept_stat: accept_sum / cfg.samples as f64,
            init_attempts: attempts,
        },
    ))
}

/// Runs `cfg.chains` independent chains in parallel. Each chain owns the
/// RNG stream `chain` of `cfg.seed`, so results do not depend on
/// scheduling.
pub fn run_chains<T: Target + ?Sized>(target: &T, cfg: &SamplerConfig) -> Result<PosteriorDraws> {
    cfg.validate()?;
    if target.dim() == 0 {
        return Err(MpepError::InvalidInput("target has no parameters".into()));
    }
    let results: Vec<Result<(Vec<f64>, ChainInfo)>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..cfg.chains)
            .map(|c| s.spawn(move || run_chain(target, cfg, c)))
            .collect();
        handles
            .into_iter()
            .map(|h| {
                h.join()
                    .unwrap_or_else(|_| Err(MpepError::Sampler("chain panicked".into())))
            })
            .collect()
    });
    let mut values = Vec::with_capacity(cfg.chains);
    let mut info = Vec::with_capacity(cfg.chains);
    for r in results {
        let (v, i) = r?;
        values.push(v);
        info.push(i);
    }
    PosteriorDraws::new(target.param_names(), values, info)
}
