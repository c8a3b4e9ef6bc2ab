//! Rank-normalized split-R̂, effective sample size and quantiles.

use statrs::distribution::{ContinuousCDF, Normal};

/// Halves every chain (dropping the middle draw of odd-length chains).
fn split(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = chains.iter().map(Vec::len).min().unwrap_or(0);
    let half = n / 2;
    chains
        .iter()
        .flat_map(|c| [c[..half].to_vec(), c[n - half..n].to_vec()])
        .collect()
}

/// Replaces draws by normal scores of their pooled average ranks.
fn rank_normalize(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut all: Vec<(f64, usize, usize)> = chains
        .iter()
        .enumerate()
        .flat_map(|(c, v)| v.iter().enumerate().map(move |(i, &x)| (x, c, i)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let s = all.len() as f64;
    let std = Normal::new(0.0, 1.0).expect("standard normal");
    let mut out: Vec<Vec<f64>> = chains.iter().map(|c| vec![0.0; c.len()]).collect();
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        // average 1-based rank of the tie group
        let r = (i + j) as f64 / 2.0 + 1.0;
        let z = std.inverse_cdf((r - 0.375) / (s + 0.25));
        for &(_, c, k) in &all[i..=j] {
            out[c][k] = z;
        }
        i = j + 1;
    }
    out
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn sample_var(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() as f64 - 1.0)
}

fn is_constant(v: &[f64]) -> bool {
    v.iter().all(|&x| x == v[0])
}

/// Classic R̂ of (already split) chains.
fn basic_rhat(chains: &[Vec<f64>]) -> f64 {
    let n = chains[0].len() as f64;
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let b = n * sample_var(&means);
    let w = mean(&chains.iter().map(|c| sample_var(c)).collect::<Vec<_>>());
    let var_plus = (n - 1.0) / n * w + b / n;
    (var_plus / w).sqrt()
}

/// Rank-normalized split-R̂: the larger of the bulk and folded-tail
/// values. Any constant chain gives `+inf`.
pub fn rhat(chains: &[Vec<f64>]) -> f64 {
    if chains.len() < 2 || chains.iter().any(|c| c.len() < 4 || is_constant(c)) {
        return f64::INFINITY;
    }
    let sp = split(chains);
    if sp.iter().any(|c| is_constant(c)) {
        return f64::INFINITY;
    }
    let bulk = basic_rhat(&rank_normalize(&sp));
    let mut pooled: Vec<f64> = sp.iter().flatten().copied().collect();
    let med = quantile_mut(&mut pooled, 0.5);
    let folded: Vec<Vec<f64>> = sp
        .iter()
        .map(|c| c.iter().map(|x| (x - med).abs()).collect())
        .collect();
    let tail = basic_rhat(&rank_normalize(&folded));
    bulk.max(tail)
}

/// Autocovariance at `lag` (divisor `n`).
fn autocov(x: &[f64], m: f64, lag: usize) -> f64 {
    let n = x.len();
    x[..n - lag]
        .iter()
        .zip(&x[lag..])
        .map(|(a, b)| (a - m) * (b - m))
        .sum::<f64>()
        / n as f64
}

/// Multi-chain ESS with Geyer's initial positive, monotone sequence.
/// Constant input gives 0.
pub fn ess(chains: &[Vec<f64>]) -> f64 {
    let m = chains.len();
    let n = chains.iter().map(Vec::len).min().unwrap_or(0);
    if m == 0 || n < 4 {
        return 0.0;
    }
    let chains: Vec<&[f64]> = chains.iter().map(|c| &c[..n]).collect();
    if chains.iter().all(|c| is_constant(c)) && chains.iter().all(|c| c[0] == chains[0][0]) {
        return 0.0;
    }
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let nf = n as f64;
    let acov = |lag: usize| {
        chains
            .iter()
            .zip(&means)
            .map(|(c, &mu)| autocov(c, mu, lag))
            .sum::<f64>()
            / m as f64
    };
    let acov0 = acov(0);
    let mean_var = acov0 * nf / (nf - 1.0);
    let mut var_plus = mean_var * (nf - 1.0) / nf;
    if m > 1 {
        var_plus += sample_var(&means);
    }
    if !(var_plus > 0.0) {
        return 0.0;
    }
    let rho_at = |lag: usize| 1.0 - (mean_var - acov(lag)) / var_plus;

    let mut rho = vec![0.0; n];
    rho[0] = 1.0;
    let mut rho_even = 1.0;
    let mut rho_odd = rho_at(1);
    rho[1] = rho_odd;
    let mut t = 1;
    while t + 2 < n.saturating_sub(3) && rho_even + rho_odd > 0.0 {
        rho_even = rho_at(t + 1);
        rho_odd = rho_at(t + 2);
        if rho_even + rho_odd >= 0.0 {
            rho[t + 1] = rho_even;
            rho[t + 2] = rho_odd;
        }
        t += 2;
    }
    let max_t = t;
    if rho_even > 0.0 && max_t + 1 < n {
        rho[max_t + 1] = rho_even;
    }
    // initial monotone sequence
    let mut t = 1;
    while t + 2 <= max_t {
        if rho[t + 1] + rho[t + 2] > rho[t - 1] + rho[t] {
            let avg = (rho[t - 1] + rho[t]) / 2.0;
            rho[t + 1] = avg;
            rho[t + 2] = avg;
        }
        t += 2;
    }
    let total = (m * n) as f64;
    let tail = if max_t + 1 < n { rho[max_t + 1] } else { 0.0 };
    let tau = (-1.0 + 2.0 * rho[..max_t].iter().sum::<f64>() + tail).max(1.0 / total.log10());
    total / tau
}

/// Bulk ESS: ESS of the rank-normalized split chains.
pub fn ess_bulk(chains: &[Vec<f64>]) -> f64 {
    let sp = split(chains);
    if sp.is_empty() || sp[0].len() < 4 {
        return 0.0;
    }
    let pooled: Vec<f64> = sp.iter().flatten().copied().collect();
    if is_constant(&pooled) {
        return 0.0;
    }
    ess(&rank_normalize(&sp))
}

/// Linear-interpolation quantile (type 7); reorders `v`.
pub fn quantile_mut(v: &mut [f64], p: f64) -> f64 {
    v.sort_by(f64::total_cmp);
    quantile_sorted(v, p)
}

pub fn quantile_sorted(v: &[f64], p: f64) -> f64 {
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    if lo == hi {
        return v[lo];
    }
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

/// Mean computed relative to the first value, so constant input is
/// returned exactly.
pub fn stable_mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    let x0 = v[0];
    x0 + v.iter().map(|x| x - x0).sum::<f64>() / v.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn normals(seed: u64, n: usize, shift: f64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                shift + z
            })
            .collect()
    }

    fn ar1(seed: u64, n: usize, phi: f64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = 0.0;
        let scale = (1.0 - phi * phi).sqrt();
        (0..n)
            .map(|_| {
                let e: f64 = StandardNormal.sample(&mut rng);
                x = phi * x + scale * e;
                x
            })
            .collect()
    }

    #[test]
    fn identical_iid_chains_have_rhat_one() {
        let c = normals(1, 1000, 0.0);
        let r = rhat(&[c.clone(), c]);
        assert!((0.99..=1.01).contains(&r), "{r}");
    }

    #[test]
    fn separated_chains_have_large_rhat() {
        let r = rhat(&[normals(1, 1000, 0.0), normals(2, 1000, 5.0)]);
        assert!(r > 1.5, "{r}");
    }

    #[test]
    fn split_of_stationary_chain_is_near_one() {
        let c = normals(3, 2000, 0.0);
        let r = rhat(&[c[..1000].to_vec(), c[1000..].to_vec()]);
        assert!((r - 1.0).abs() < 0.01, "{r}");
    }

    #[test]
    fn constant_chain_is_flagged() {
        assert_eq!(rhat(&[vec![1.0; 100], normals(1, 100, 0.0)]), f64::INFINITY);
        assert_eq!(ess(&[vec![2.0; 100], vec![2.0; 100]]), 0.0);
        assert_eq!(ess_bulk(&[vec![2.0; 100], vec![2.0; 100]]), 0.0);
    }

    #[test]
    fn iid_ess_near_total() {
        let chains: Vec<Vec<f64>> = (0..4).map(|s| normals(10 + s, 1000, 0.0)).collect();
        for e in [ess(&chains), ess_bulk(&chains)] {
            assert!((3200.0..=4800.0).contains(&e), "{e}");
        }
    }

    #[test]
    fn ar1_ess_matches_theory() {
        let phi = 0.9;
        let chains: Vec<Vec<f64>> = (0..4).map(|s| ar1(20 + s, 5000, phi)).collect();
        let expected = 20_000.0 * (1.0 - phi) / (1.0 + phi);
        let e = ess(&chains);
        assert!((e / expected - 1.0).abs() < 0.25, "{e} vs {expected}");
    }

    #[test]
    fn quantiles() {
        let mut v = vec![4.0, 1.0, 3.0, 2.0];
        assert_eq!(quantile_mut(&mut v, 0.5), 2.5);
        assert_eq!(quantile_sorted(&v, 0.0), 1.0);
        assert_eq!(quantile_sorted(&v, 1.0), 4.0);
        let c = vec![0.1; 4000];
        assert_eq!(stable_mean(&c), 0.1);
    }
}
