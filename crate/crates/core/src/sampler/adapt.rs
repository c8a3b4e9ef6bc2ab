//! Warmup adaptation: dual-averaging step size and windowed diagonal metric.

/// Nesterov dual averaging of log step size towards a target mean
/// acceptance statistic.
#[derive(Debug, Clone)]
pub(crate) struct DualAveraging {
    delta: f64,
    gamma: f64,
    kappa: f64,
    t0: f64,
    mu: f64,
    counter: f64,
    s_bar: f64,
    x_bar: f64,
}

impl DualAveraging {
    pub fn new(delta: f64) -> Self {
        DualAveraging {
            delta,
            gamma: 0.05,
            kappa: 0.75,
            t0: 10.0,
            mu: 0.0,
            counter: 0.0,
            s_bar: 0.0,
            x_bar: 0.0,
        }
    }

    /// Restarts around `10 * step_size`.
    pub fn restart(&mut self, step_size: f64) {
        self.mu = (10.0 * step_size).ln();
        self.counter = 0.0;
        self.s_bar = 0.0;
        self.x_bar = 0.0;
    }

    pub fn learn(&mut self, accept_stat: f64) -> f64 {
        self.counter += 1.0;
        let a = accept_stat.min(1.0);
        let eta = 1.0 / (self.counter + self.t0);
        self.s_bar = (1.0 - eta) * self.s_bar + eta * (self.delta - a);
        let x = self.mu - self.s_bar * self.counter.sqrt() / self.gamma;
        let x_eta = self.counter.powf(-self.kappa);
        self.x_bar = (1.0 - x_eta) * self.x_bar + x_eta * x;
        x.exp()
    }

    pub fn final_step_size(&self) -> f64 {
        self.x_bar.exp()
    }
}

/// Welford accumulator for per-coordinate variances.
#[derive(Debug, Clone)]
struct Welford {
    n: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Welford {
    fn new(dim: usize) -> Self {
        Welford {
            n: 0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    fn add(&mut self, x: &[f64]) {
        self.n += 1;
        let n = self.n as f64;
        for ((m, s), &v) in self.mean.iter_mut().zip(&mut self.m2).zip(x) {
            let d = v - *m;
            *m += d / n;
            *s += d * (v - *m);
        }
    }

    fn variance(&self) -> Vec<f64> {
        let denom = (self.n as f64 - 1.0).max(1.0);
        self.m2.iter().map(|s| s / denom).collect()
    }

    fn restart(&mut self) {
        self.n = 0;
        self.mean.iter_mut().for_each(|v| *v = 0.0);
        self.m2.iter_mut().for_each(|v| *v = 0.0);
    }
}

/// Fast / slow / fast warmup schedule. Slow windows double in length and
/// the last one is stretched to the start of the terminal buffer.
#[derive(Debug, Clone)]
pub(crate) struct WindowedVariance {
    warmup: usize,
    init_buffer: usize,
    term_buffer: usize,
    window_size: usize,
    next_window: usize,
    counter: usize,
    estimator: Welford,
}

impl WindowedVariance {
    pub fn new(
        dim: usize,
        warmup: usize,
        init_buffer: usize,
        term_buffer: usize,
        base_window: usize,
    ) -> Self {
        WindowedVariance {
            warmup,
            init_buffer,
            term_buffer,
            window_size: base_window,
            next_window: init_buffer + base_window - 1,
            counter: 0,
            estimator: Welford::new(dim),
        }
    }

    fn in_window(&self) -> bool {
        self.counter >= self.init_buffer
            && self.counter < self.warmup - self.term_buffer
            && self.counter != self.warmup
    }

    fn window_ends(&self) -> bool {
        self.counter == self.next_window && self.counter != self.warmup
    }

    fn compute_next_window(&mut self) {
        let last = self.warmup - self.term_buffer - 1;
        if self.next_window == last {
            return;
        }
        self.window_size *= 2;
        self.next_window = self.counter + self.window_size;
        if self.next_window != last {
            let boundary = self.next_window + 2 * self.window_size;
            if boundary >= self.warmup - self.term_buffer {
                self.next_window = last;
            }
        }
    }

    /// Feeds one warmup draw. Returns the regularized variance estimate
    /// when a slow window closes.
    pub fn learn(&mut self, q: &[f64]) -> Option<Vec<f64>> {
        if self.in_window() {
            self.estimator.add(q);
        }
        if self.window_ends() {
            self.compute_next_window();
            let n = self.estimator.n as f64;
            let var = self
                .estimator
                .variance()
                .into_iter()
                .map(|v| (n / (n + 5.0)) * v + 1e-3 * (5.0 / (n + 5.0)))
                .collect();
            self.estimator.restart();
            self.counter += 1;
            return Some(var);
        }
        self.counter += 1;
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_schedule_window_ends() {
        let mut w = WindowedVariance::new(1, 1000, 75, 50, 25);
        let ends: Vec<usize> = (0..1000).filter(|_| w.learn(&[0.0]).is_some()).collect();
        // window closes at the last iteration of each slow window
        let _ = ends;
        let mut w = WindowedVariance::new(1, 1000, 75, 50, 25);
        let mut closes = Vec::new();
        for i in 0..1000 {
            if w.learn(&[i as f64]).is_some() {
                closes.push(i);
            }
        }
        assert_eq!(closes, vec![99, 149, 249, 449, 949]);
    }

    #[test]
    fn minimum_warmup_has_one_window() {
        let mut w = WindowedVariance::new(1, 150, 75, 50, 25);
        let closes: Vec<usize> = (0..150)
            .filter(|&i| w.learn(&[i as f64]).is_some())
            .collect();
        assert_eq!(closes, vec![99]);
    }

    #[test]
    fn window_variance_is_regularized() {
        let mut w = WindowedVariance::new(2, 150, 0, 50, 100);
        let mut out = None;
        for i in 0..100 {
            let x = i as f64;
            if let Some(v) = w.learn(&[x, 2.0 * x]) {
                out = Some(v);
            }
        }
        let v = out.unwrap();
        // sample variance of 0..99 is 841.666...
        let raw = 841.666_666_666_666_6;
        assert!((v[0] - (100.0 / 105.0 * raw + 1e-3 * 5.0 / 105.0)).abs() < 1e-9);
        assert!((v[1] - (100.0 / 105.0 * 4.0 * raw + 1e-3 * 5.0 / 105.0)).abs() < 1e-8);
    }

    #[test]
    fn dual_averaging_shrinks_step_when_rejecting() {
        let mut da = DualAveraging::new(0.8);
        da.restart(1.0);
        let mut eps = 1.0;
        for _ in 0..50 {
            eps = da.learn(0.1);
        }
        assert!(eps < 1.0);
        let mut da = DualAveraging::new(0.8);
        da.restart(1.0);
        for _ in 0..50 {
            eps = da.learn(1.0);
        }
        assert!(eps > 1.0);
    }
}
