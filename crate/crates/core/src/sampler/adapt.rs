//! Warmup adaptation: dual-averaging step sizes and windowed diagonal
//! mass-matrix estimation.

/// Nesterov dual averaging of log step size towards a target acceptance
/// statistic.
pub(super) struct DualAveraging {
    mu: f64,
    target: f64,
    log_step: f64,
    log_step_avg: f64,
    h_bar: f64,
    m: f64,
}

const GAMMA: f64 = 0.05;
const T0: f64 = 10.0;
const KAPPA: f64 = 0.75;

impl DualAveraging {
    pub fn new(initial_step: f64, target: f64) -> Self {
        let initial_step = initial_step.max(1e-12);
        Self {
            mu: (10.0 * initial_step).ln(),
            target,
            log_step: initial_step.ln(),
            log_step_avg: initial_step.ln(),
            h_bar: 0.0,
            m: 0.0,
        }
    }

    pub fn update(&mut self, accept_stat: f64) {
        self.m += 1.0;
        let eta = 1.0 / (self.m + T0);
        self.h_bar = (1.0 - eta) * self.h_bar + eta * (self.target - accept_stat);
        self.log_step = self.mu - self.m.sqrt() / GAMMA * self.h_bar;
        let weight = self.m.powf(-KAPPA);
        self.log_step_avg = weight * self.log_step + (1.0 - weight) * self.log_step_avg;
    }

    /// Step size to use while still adapting.
    pub fn current(&self) -> f64 {
        self.log_step.exp()
    }

    /// Averaged step size for the sampling phase.
    pub fn adapted(&self) -> f64 {
        self.log_step_avg.exp()
    }
}

/// Streaming mean/variance over warmup positions.
pub(super) struct WelfordVariance {
    n: f64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl WelfordVariance {
    pub fn new(dim: usize) -> Self {
        Self { n: 0.0, mean: vec![0.0; dim], m2: vec![0.0; dim] }
    }

    pub fn push(&mut self, x: &[f64]) {
        self.n += 1.0;
        for k in 0..x.len() {
            let delta = x[k] - self.mean[k];
            self.mean[k] += delta / self.n;
            self.m2[k] += delta * (x[k] - self.mean[k]);
        }
    }

    /// Variance estimate shrunk towards a small identity, matching the
    /// usual windowed-adaptation regularization.
    pub fn regularized(&self) -> Vec<f64> {
        if self.n < 3.0 {
            return vec![1.0; self.mean.len()];
        }
        let w = self.n / (self.n + 5.0);
        self.m2
            .iter()
            .map(|m2| {
                let var = m2 / (self.n - 1.0);
                (w * var + (1.0 - w) * 1e-3).max(1e-10)
            })
            .collect()
    }
}

/// Stan-style warmup staging: a fast start tuning only the step size, a
/// sequence of doubling slow windows that estimate the metric, and a fast
/// tail re-tuning the step size. Defaults 75 / 25-doubling / 50, scaled
/// down proportionally for short warmups.
pub(super) struct WarmupSchedule {
    init_buffer: usize,
    term_start: usize,
    window_ends: Vec<usize>,
}

impl WarmupSchedule {
    pub fn new(n_warmup: usize) -> Self {
        let (init_buffer, base_window, term_buffer) = if n_warmup >= 150 {
            (75, 25, 50)
        } else {
            let init = (n_warmup as f64 * 0.15).max(1.0) as usize;
            let term = (n_warmup as f64 * 0.10).max(1.0) as usize;
            let base = ((n_warmup - init - term) / 4).max(1);
            (init, base, term)
        };
        let term_start = n_warmup.saturating_sub(term_buffer);

        let mut window_ends = Vec::new();
        let mut size = base_window;
        let mut start = init_buffer;
        while start < term_start {
            let mut end = start + size;
            // Absorb a too-small trailing window into this one.
            if end + 2 * size > term_start {
                end = term_start;
            }
            window_ends.push(end.min(term_start));
            start = end;
            size *= 2;
        }
        Self { init_buffer, term_start, window_ends }
    }

    /// Whether iteration `i` (0-based) contributes to metric estimation.
    pub fn in_slow_window(&self, i: usize) -> bool {
        i >= self.init_buffer && i < self.term_start
    }

    /// Whether the slow window closes after iteration `i`.
    pub fn ends_slow_window(&self, i: usize) -> bool {
        self.window_ends.contains(&(i + 1))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dual_averaging_moves_towards_target() {
        // Feeding constantly low acceptance shrinks the step; constantly
        // high acceptance grows it.
        let mut low = DualAveraging::new(1.0, 0.8);
        let mut high = DualAveraging::new(1.0, 0.8);
        for _ in 0..200 {
            low.update(0.1);
            high.update(1.0);
        }
        assert!(low.adapted() < 0.1);
        assert!(high.adapted() > 1.0);
    }

    #[test]
    fn welford_matches_two_pass_variance() {
        let xs: Vec<f64> = (0..50).map(|i| (i as f64 * 0.7).sin() * 3.0 + 1.0).collect();
        let mut w = WelfordVariance::new(1);
        for &x in &xs {
            w.push(&[x]);
        }
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
        let shrunk = xs.len() as f64 / (xs.len() as f64 + 5.0) * var
            + 5.0 / (xs.len() as f64 + 5.0) * 1e-3;
        assert!((w.regularized()[0] - shrunk).abs() < 1e-12);
    }

    #[test]
    fn schedule_covers_warmup_without_overlap() {
        for n in [60, 150, 1000, 3000] {
            let s = WarmupSchedule::new(n);
            // Windows close in strictly increasing order inside the slow span.
            let mut prev = s.init_buffer;
            for &end in &s.window_ends {
                assert!(end > prev, "n={n}");
                assert!(end <= s.term_start, "n={n}");
                prev = end;
            }
            if let Some(&last) = s.window_ends.last() {
                assert_eq!(last, s.term_start, "slow phase must close, n={n}");
            }
        }
    }
}
