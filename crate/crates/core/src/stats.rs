//! Small statistics and execution helpers shared by the Monte Carlo modules.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Seeded random stream; distinct `index` values give independent sub-streams
/// of the same seed.
pub fn substream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Worker-count context handed down from the CLI. `workers == 1` is the
/// fully deterministic baseline; any fixed count is reproducible.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Exec {
    pub workers: usize,
}

impl Default for Exec {
    fn default() -> Self {
        Exec { workers: 1 }
    }
}

impl Exec {
    pub fn new(workers: usize) -> Self {
        Exec {
            workers: workers.max(1),
        }
    }

    /// Runs `job(i)` for `i in 0..n` on up to `workers` threads and returns the
    /// results ordered by `i`.
    pub fn map<T, F>(&self, n: usize, job: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync,
    {
        if self.workers <= 1 || n <= 1 {
            return (0..n).map(job).collect();
        }
        let mut slots: Vec<Option<T>> = (0..n).map(|_| None).collect();
        let chunk = n.div_ceil(self.workers);
        std::thread::scope(|scope| {
            for (c, part) in slots.chunks_mut(chunk).enumerate() {
                let job = &job;
                scope.spawn(move || {
                    for (j, slot) in part.iter_mut().enumerate() {
                        *slot = Some(job(c * chunk + j));
                    }
                });
            }
        });
        slots.into_iter().map(|s| s.expect("worker result")).collect()
    }
}

/// Running mean / variance (Welford).
#[derive(Clone, Copy, Debug, Default)]
pub struct Accumulator {
    n: u64,
    mean: f64,
    m2: f64,
}

impl Accumulator {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    /// Standard error of the mean; infinite with fewer than two samples.
    pub fn std_error(&self) -> f64 {
        if self.n < 2 {
            f64::INFINITY
        } else {
            (self.variance() / self.n as f64).sqrt()
        }
    }

    /// Merges another accumulator (Chan et al. parallel update).
    pub fn merge(&mut self, other: &Accumulator) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *other;
            return;
        }
        let n = self.n + other.n;
        let delta = other.mean - self.mean;
        let mean = self.mean + delta * other.n as f64 / n as f64;
        let m2 = self.m2 + other.m2 + delta * delta * (self.n as f64 * other.n as f64) / n as f64;
        self.n = n;
        self.mean = mean;
        self.m2 = m2;
    }
}

/// Mean and batch-means standard error of a correlated series.
pub fn batch_means(series: &[f64], batches: usize) -> (f64, f64) {
    let n = series.len();
    if n == 0 {
        return (f64::NAN, f64::INFINITY);
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let batches = batches.clamp(2, n.max(2));
    let size = n / batches;
    if size == 0 {
        return (mean, f64::INFINITY);
    }
    let mut acc = Accumulator::default();
    for b in 0..batches {
        let chunk = &series[b * size..(b + 1) * size];
        acc.push(chunk.iter().sum::<f64>() / size as f64);
    }
    (mean, acc.std_error())
}

/// Ordinary least squares fit `y = intercept + slope * x`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinearFit {
    pub intercept: f64,
    pub slope: f64,
    /// Root-mean-square residual.
    pub rms_residual: f64,
    pub r_squared: f64,
}

pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Option<LinearFit> {
    let n = xs.len();
    if n < 2 || ys.len() != n {
        return None;
    }
    let nf = n as f64;
    let mx = xs.iter().sum::<f64>() / nf;
    let my = ys.iter().sum::<f64>() / nf;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx <= 0.0 {
        return None;
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    let r_squared = if syy > 0.0 { 1.0 - sse / syy } else { 1.0 };
    Some(LinearFit {
        intercept,
        slope,
        rms_residual: (sse / nf).sqrt(),
        r_squared,
    })
}
