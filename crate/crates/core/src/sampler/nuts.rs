//! No-U-turn transitions with multinomial sampling of the trajectory and
//! the generalized U-turn criterion, on a diagonal Euclidean metric.

use rand::Rng;
use rand_distr::StandardNormal;

use super::Target;

#[derive(Debug, Clone)]
pub(crate) struct PhasePoint {
    pub q: Vec<f64>,
    pub p: Vec<f64>,
    pub grad: Vec<f64>,
    pub logp: f64,
}

impl PhasePoint {
    pub fn at<T: Target + ?Sized>(target: &T, q: Vec<f64>) -> Self {
        let n = q.len();
        let mut grad = vec![0.0; n];
        let logp = target.log_density_and_grad(&q, &mut grad);
        PhasePoint {
            q,
            p: vec![0.0; n],
            grad,
            logp,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct TransitionStats {
    pub accept_stat: f64,
    pub depth: usize,
    pub divergent: bool,
}

pub(crate) struct Nuts<'a, T: Target + ?Sized> {
    target: &'a T,
    pub inv_metric: Vec<f64>,
    pub step_size: f64,
    pub max_depth: usize,
    max_delta_h: f64,
    divergent: bool,
    n_leapfrog: usize,
}

fn log_sum_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    a.max(b) + (-(a - b).abs()).exp().ln_1p()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn add_assign(a: &mut [f64], b: &[f64]) {
    a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
}

fn criterion(p_sharp_minus: &[f64], p_sharp_plus: &[f64], rho: &[f64]) -> bool {
    dot(p_sharp_plus, rho) > 0.0 && dot(p_sharp_minus, rho) > 0.0
}

/// Per-subtree bookkeeping shared by both recursion levels.
struct Tree {
    p_sharp_beg: Vec<f64>,
    p_sharp_end: Vec<f64>,
    p_beg: Vec<f64>,
    p_end: Vec<f64>,
    rho: Vec<f64>,
    log_sum_weight: f64,
}

impl Tree {
    fn empty(n: usize) -> Self {
        Tree {
            p_sharp_beg: vec![0.0; n],
            p_sharp_end: vec![0.0; n],
            p_beg: vec![0.0; n],
            p_end: vec![0.0; n],
            rho: vec![0.0; n],
            log_sum_weight: f64::NEG_INFINITY,
        }
    }
}

impl<'a, T: Target + ?Sized> Nuts<'a, T> {
    pub fn new(target: &'a T, max_depth: usize) -> Self {
        Nuts {
            target,
            inv_metric: vec![1.0; target.dim()],
            step_size: 1.0,
            max_depth,
            max_delta_h: 1000.0,
            divergent: false,
            n_leapfrog: 0,
        }
    }

    fn hamiltonian(&self, z: &PhasePoint) -> f64 {
        let kinetic: f64 =
            z.p.iter()
                .zip(&self.inv_metric)
                .map(|(p, m)| p * p * m)
                .sum::<f64>()
                * 0.5;
        let h = -z.logp + kinetic;
        if h.is_nan() {
            f64::INFINITY
        } else {
            h
        }
    }

    fn p_sharp(&self, z: &PhasePoint) -> Vec<f64> {
        z.p.iter()
            .zip(&self.inv_metric)
            .map(|(p, m)| p * m)
            .collect()
    }

    fn sample_momentum<R: Rng>(&self, z: &mut PhasePoint, rng: &mut R) {
        for (p, m) in z.p.iter_mut().zip(&self.inv_metric) {
            let n: f64 = rng.sample(StandardNormal);
            *p = n / m.sqrt();
        }
    }

    fn leapfrog(&self, z: &mut PhasePoint, eps: f64) {
        for (p, g) in z.p.iter_mut().zip(&z.grad) {
            *p += 0.5 * eps * g;
        }
        for ((q, p), m) in z.q.iter_mut().zip(&z.p).zip(&self.inv_metric) {
            *q += eps * m * p;
        }
        z.logp = self.target.log_density_and_grad(&z.q, &mut z.grad);
        if !z.logp.is_finite() {
            z.logp = f64::NEG_INFINITY;
            return;
        }
        for (p, g) in z.p.iter_mut().zip(&z.grad) {
            *p += 0.5 * eps * g;
        }
    }

    fn energy_change<R: Rng>(&self, z: &PhasePoint, eps: f64, rng: &mut R) -> f64 {
        let mut w = z.clone();
        self.sample_momentum(&mut w, rng);
        let h0 = self.hamiltonian(&w);
        self.leapfrog(&mut w, eps);
        h0 - self.hamiltonian(&w)
    }

    /// Doubles or halves the step size until one leapfrog step crosses an
    /// acceptance probability of 0.8.
    pub fn init_step_size<R: Rng>(&mut self, z: &PhasePoint, rng: &mut R) {
        let target = 0.8f64.ln();
        let delta = self.energy_change(z, self.step_size, rng);
        let up = delta > target;
        for _ in 0..100 {
            let delta = self.energy_change(z, self.step_size, rng);
            if (up && !(delta > target)) || (!up && !(delta < target)) {
                break;
            }
            self.step_size *= if up { 2.0 } else { 0.5 };
            if self.step_size > 1e7 || self.step_size < 1e-300 {
                break;
            }
        }
        self.step_size = self.step_size.clamp(1e-12, 1e7);
    }

    pub fn transition<R: Rng>(
        &mut self,
        z0: &PhasePoint,
        rng: &mut R,
    ) -> (PhasePoint, TransitionStats) {
        let n = z0.q.len();
        let mut z = z0.clone();
        self.sample_momentum(&mut z, rng);
        self.divergent = false;
        self.n_leapfrog = 0;

        let mut z_fwd = z.clone();
        let mut z_bck = z.clone();
        let mut z_sample = z.clone();

        let ps = self.p_sharp(&z);
        let mut p_sharp_fwd_bck = ps.clone();
        let mut p_sharp_fwd_fwd = ps.clone();
        let mut p_sharp_bck_fwd = ps.clone();
        let mut p_sharp_bck_bck = ps;
        let mut p_fwd_bck = z.p.clone();
        let mut p_bck_fwd = z.p.clone();
        let mut rho = z.p.clone();
        let mut log_sum_weight = 0.0;
        let h0 = self.hamiltonian(&z);
        let mut sum_metro_prob = 0.0;
        let mut depth = 0;

        while depth < self.max_depth {
            let rho_fwd;
            let rho_bck;
            let log_sum_weight_subtree;
            let mut z_propose = z.clone();
            let valid = if rng.random::<f64>() > 0.5 {
                z = z_fwd.clone();
                rho_bck = rho.clone();
                p_bck_fwd.clone_from(&p_fwd_bck);
                p_sharp_bck_fwd.clone_from(&p_sharp_fwd_bck);
                let mut tree = Tree::empty(n);
                let ok = self.build_tree(
                    depth,
                    &mut z,
                    &mut z_propose,
                    &mut tree,
                    h0,
                    1.0,
                    &mut sum_metro_prob,
                    rng,
                );
                p_sharp_fwd_bck = tree.p_sharp_beg;
                p_sharp_fwd_fwd = tree.p_sharp_end;
                p_fwd_bck = tree.p_beg;
                rho_fwd = tree.rho;
                log_sum_weight_subtree = tree.log_sum_weight;
                z_fwd = z.clone();
                ok
            } else {
                z = z_bck.clone();
                rho_fwd = rho.clone();
                p_fwd_bck.clone_from(&p_bck_fwd);
                p_sharp_fwd_bck.clone_from(&p_sharp_bck_fwd);
                let mut tree = Tree::empty(n);
                let ok = self.build_tree(
                    depth,
                    &mut z,
                    &mut z_propose,
                    &mut tree,
                    h0,
                    -1.0,
                    &mut sum_metro_prob,
                    rng,
                );
                p_sharp_bck_fwd = tree.p_sharp_beg;
                p_sharp_bck_bck = tree.p_sharp_end;
                p_bck_fwd = tree.p_beg;
                rho_bck = tree.rho;
                log_sum_weight_subtree = tree.log_sum_weight;
                z_bck = z.clone();
                ok
            };
            if !valid {
                break;
            }
            depth += 1;

            if log_sum_weight_subtree > log_sum_weight {
                z_sample = z_propose;
            } else {
                let accept = (log_sum_weight_subtree - log_sum_weight).exp();
                if rng.random::<f64>() < accept {
                    z_sample = z_propose;
                }
            }
            log_sum_weight = log_sum_exp(log_sum_weight, log_sum_weight_subtree);

            rho = add(&rho_bck, &rho_fwd);
            let mut persist = criterion(&p_sharp_bck_bck, &p_sharp_fwd_fwd, &rho);
            let rho_ext = add(&rho_bck, &p_fwd_bck);
            persist &= criterion(&p_sharp_bck_bck, &p_sharp_fwd_bck, &rho_ext);
            let rho_ext = add(&rho_fwd, &p_bck_fwd);
            persist &= criterion(&p_sharp_bck_fwd, &p_sharp_fwd_fwd, &rho_ext);
            if !persist {
                break;
            }
        }

        let accept_stat = if self.n_leapfrog > 0 {
            sum_metro_prob / self.n_leapfrog as f64
        } else {
            0.0
        };
        (
            z_sample,
            TransitionStats {
                accept_stat,
                depth,
                divergent: self.divergent,
            },
        )
    }

    #[allow(clippy::too_many_arguments)]
    fn build_tree<R: Rng>(
        &mut self,
        depth: usize,
        z: &mut PhasePoint,
        z_propose: &mut PhasePoint,
        tree: &mut Tree,
        h0: f64,
        sign: f64,
        sum_metro_prob: &mut f64,
        rng: &mut R,
    ) -> bool {
        let n = z.q.len();
        if depth == 0 {
            self.leapfrog(z, sign * self.step_size);
            self.n_leapfrog += 1;
            let h = self.hamiltonian(z);
            if h - h0 > self.max_delta_h {
                self.divergent = true;
            }
            tree.log_sum_weight = log_sum_exp(tree.log_sum_weight, h0 - h);
            *sum_metro_prob += if h0 - h > 0.0 { 1.0 } else { (h0 - h).exp() };
            z_propose.clone_from(z);
            tree.p_sharp_beg = self.p_sharp(z);
            tree.p_sharp_end.clone_from(&tree.p_sharp_beg);
            add_assign(&mut tree.rho, &z.p);
            tree.p_beg.clone_from(&z.p);
            tree.p_end.clone_from(&z.p);
            return !self.divergent;
        }

        let mut init = Tree::empty(n);
        init.p_sharp_beg = std::mem::take(&mut tree.p_sharp_beg);
        init.p_beg = std::mem::take(&mut tree.p_beg);
        if !self.build_tree(
            depth - 1,
            z,
            z_propose,
            &mut init,
            h0,
            sign,
            sum_metro_prob,
            rng,
        ) {
            return false;
        }

        let mut z_propose_final = z.clone();
        let mut fin = Tree::empty(n);
        if !self.build_tree(
            depth - 1,
            z,
            &mut z_propose_final,
            &mut fin,
            h0,
            sign,
            sum_metro_prob,
            rng,
        ) {
            return false;
        }

        let log_sum_weight_subtree = log_sum_exp(init.log_sum_weight, fin.log_sum_weight);
        tree.log_sum_weight = log_sum_exp(tree.log_sum_weight, log_sum_weight_subtree);
        if fin.log_sum_weight > log_sum_weight_subtree {
            *z_propose = z_propose_final;
        } else {
            let accept = (fin.log_sum_weight - log_sum_weight_subtree).exp();
            if rng.random::<f64>() < accept {
                *z_propose = z_propose_final;
            }
        }

        let rho_subtree = add(&init.rho, &fin.rho);
        add_assign(&mut tree.rho, &rho_subtree);

        let mut persist = criterion(&init.p_sharp_beg, &fin.p_sharp_end, &rho_subtree);
        let rho_ext = add(&init.rho, &fin.p_beg);
        persist &= criterion(&init.p_sharp_beg, &fin.p_sharp_beg, &rho_ext);
        let rho_ext = add(&fin.rho, &init.p_end);
        persist &= criterion(&init.p_sharp_end, &fin.p_sharp_end, &rho_ext);

        tree.p_sharp_beg = init.p_sharp_beg;
        tree.p_beg = init.p_beg;
        tree.p_sharp_end = fin.p_sharp_end;
        tree.p_end = fin.p_end;
        persist
    }
}
