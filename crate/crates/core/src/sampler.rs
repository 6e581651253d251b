//! Monte Carlo validation samplers: single-particle Metropolis in the
//! canonical ensemble with reflecting walls, and exact enumeration plus
//! merge/split Metropolis chains for the two random-partition models.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand::Rng;
use serde::Serialize;
use serde_json::value::RawValue;

use crate::clustering::{size_counts, CellList, ClusterSizeDistribution};
use crate::error::{Error, Result};
use crate::groundstate::GroundStateTable;
use crate::io::{json_f64, write_text};
use crate::partfun::ClusterFreeEnergyTable;
use crate::potential::{distance, energy_of_coords, Configuration, PairPotential};
use crate::stats::{batch_means, substream, Accumulator, Exec};

const SEED_ATTEMPTS: usize = 1000;
const TARGET_ACCEPTANCE: f64 = 0.4;
const BATCHES: usize = 32;
const CELL_LIST_MIN_N: usize = 64;

/// Parameters of a canonical Metropolis run in `[0, L]^d`.
#[derive(Clone, Debug, PartialEq)]
pub struct CanonicalRun {
    pub n: usize,
    pub box_side: f64,
    pub dim: usize,
    pub beta: f64,
    pub radius: f64,
    /// Single-particle move attempts after burn-in.
    pub steps: u64,
    pub burn_in: u64,
    /// Move attempts between cluster decompositions; `0` means one sweep (`N`).
    pub thinning: u64,
    pub seed: u64,
}

impl CanonicalRun {
    /// Run at density `rho`, with `L = (N / rho)^{1/d}`.
    pub fn at_density(n: usize, rho: f64, dim: usize, beta: f64, radius: f64, sweeps: u64, seed: u64) -> Result<Self> {
        if !(rho > 0.0) {
            return Err(Error::Domain(format!("density must be positive, got {rho}")));
        }
        let box_side = (n as f64 / rho).powf(1.0 / dim as f64);
        Ok(CanonicalRun {
            n,
            box_side,
            dim,
            beta,
            radius,
            steps: sweeps * n as u64,
            burn_in: (sweeps * n as u64 / 10).max(1),
            thinning: 0,
            seed,
        })
    }

    pub fn volume(&self) -> f64 {
        self.box_side.powi(self.dim as i32)
    }

    pub fn density(&self) -> f64 {
        self.n as f64 / self.volume()
    }

    fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Invalid("N must be at least 1".into()));
        }
        if !(1..=3).contains(&self.dim) {
            return Err(Error::Invalid(format!("dimension must be 1, 2 or 3, got {}", self.dim)));
        }
        if !(self.box_side > 0.0) || !(self.radius > 0.0) || !(self.beta > 0.0) {
            return Err(Error::Invalid("box side, radius and beta must be positive".into()));
        }
        if self.burn_in >= self.steps {
            return Err(Error::Invalid(format!(
                "burn-in ({}) must be shorter than the run ({} steps)",
                self.burn_in, self.steps
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CanonicalDiagnostics {
    /// Acceptance rate after burn-in.
    pub acceptance: f64,
    pub steps: u64,
    pub seed: u64,
    pub energy_mean: f64,
    pub energy_var: f64,
    /// Frozen displacement half-width.
    pub step_size: f64,
    pub samples: usize,
    /// Incrementally tracked energy of the final configuration.
    pub final_energy: f64,
}

impl CanonicalDiagnostics {
    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Doc {
            acceptance: Box<RawValue>,
            steps: u64,
            seed: u64,
            energy_mean: Box<RawValue>,
            energy_var: Box<RawValue>,
        }
        let doc = Doc {
            acceptance: json_f64(self.acceptance),
            steps: self.steps,
            seed: self.seed,
            energy_mean: json_f64(self.energy_mean),
            energy_var: json_f64(self.energy_var),
        };
        let mut s = serde_json::to_string_pretty(&doc).expect("serializable");
        s.push('\n');
        s
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        write_text(path, &self.to_json())
    }
}

#[derive(Clone, Debug)]
pub struct CanonicalResult {
    /// Time-averaged `rho_{k,Lambda} = N_k / |Lambda|`.
    pub distribution: ClusterSizeDistribution,
    /// Time-averaged cluster counts `N_k` with batch-means standard errors.
    pub mean_counts: BTreeMap<usize, (f64, f64)>,
    pub diagnostics: CanonicalDiagnostics,
    pub final_config: Configuration,
}

/// Reflects `x` into `[0, l]`.
fn reflect(x: f64, l: f64) -> f64 {
    let y = x.rem_euclid(2.0 * l);
    if y > l {
        2.0 * l - y
    } else {
        y
    }
}

struct Particles<'a> {
    pot: &'a PairPotential,
    dim: usize,
    coords: Vec<f64>,
    cells: Option<CellList>,
}

impl Particles<'_> {
    fn local_energy(&self, i: usize, p: &[f64]) -> f64 {
        let d = self.dim;
        let mut u = 0.0;
        let visit = |j: usize| {
            if j != i {
                u += self.pot.value(distance(p, &self.coords[j * d..(j + 1) * d]));
            }
        };
        match &self.cells {
            Some(cells) => cells.for_each_neighbor(p, visit),
            None => (0..self.coords.len() / d).for_each(visit),
        }
        u
    }

    fn move_to(&mut self, i: usize, p: &[f64]) {
        let d = self.dim;
        if let Some(cells) = &mut self.cells {
            let from = cells.cell_of(&self.coords[i * d..(i + 1) * d]);
            let to = cells.cell_of(p);
            if from != to {
                cells.remove(from, i);
                cells.insert(to, i);
            }
        }
        self.coords[i * d..(i + 1) * d].copy_from_slice(p);
    }
}

fn seed_configuration(pot: &PairPotential, run: &CanonicalRun, rng: &mut impl Rng) -> Result<Vec<f64>> {
    let d = run.dim;
    let mut coords: Vec<f64> = Vec::with_capacity(run.n * d);
    let mut p = vec![0.0; d];
    for i in 0..run.n {
        let mut placed = false;
        for _ in 0..SEED_ATTEMPTS {
            p.iter_mut().for_each(|x| *x = rng.random::<f64>() * run.box_side);
            let blocked = (0..i).any(|j| pot.value(distance(&p, &coords[j * d..(j + 1) * d])).is_infinite());
            if !blocked {
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::Numerical(format!(
                "seeding failure: could not place particle {} of {} without hard-core overlap after {SEED_ATTEMPTS} attempts",
                i + 1,
                run.n
            )));
        }
        coords.extend_from_slice(&p);
    }
    Ok(coords)
}

/// Single-particle Metropolis in the canonical ensemble; returns the
/// time-averaged cluster size distribution at radius `run.radius`.
pub fn canonical_mcmc(pot: &PairPotential, run: &CanonicalRun) -> Result<CanonicalResult> {
    run.validate()?;
    let mut rng = substream(run.seed, 0);
    let d = run.dim;
    let l = run.box_side;
    let interacting = pot.support() > 0.0 || pot.hard_core() > 0.0;
    let coords = seed_configuration(pot, run, &mut rng)?;
    let cells = (interacting && run.n > CELL_LIST_MIN_N).then(|| CellList::build(d, &coords, l, pot.support()));
    let mut sys = Particles { pot, dim: d, coords, cells };
    let mut energy = if interacting { energy_of_coords(pot, d, &sys.coords) } else { 0.0 };

    let thinning = if run.thinning == 0 { run.n as u64 } else { run.thinning };
    let mut delta = (0.1 * l).min(0.5 * l);
    let mut window_acc = 0u64;
    let mut window_tries = 0u64;
    let mut accepted = 0u64;
    let mut energies = Accumulator::default();
    let mut series: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    let mut samples = 0usize;
    let mut proposal = vec![0.0; d];

    let total = run.burn_in + run.steps;
    for step in 0..total {
        let production = step >= run.burn_in;
        let i = rng.random_range(0..run.n);
        for a in 0..d {
            let x = sys.coords[i * d + a] + rng.random_range(-delta..=delta);
            proposal[a] = reflect(x, l);
        }
        let accept = if interacting {
            let old = sys.local_energy(i, &sys.coords[i * d..(i + 1) * d]);
            let new = sys.local_energy(i, &proposal);
            let du = new - old;
            let ok = new.is_finite() && (du <= 0.0 || rng.random::<f64>() < (-run.beta * du).exp());
            if ok {
                energy += du;
            }
            ok
        } else {
            true
        };
        if accept {
            sys.move_to(i, &proposal);
        }
        if production {
            accepted += accept as u64;
        } else {
            window_acc += accept as u64;
            window_tries += 1;
            if window_tries == 200 {
                let rate = window_acc as f64 / window_tries as f64;
                let factor = (rate / TARGET_ACCEPTANCE).clamp(0.5, 2.0);
                delta = (delta * factor).min(0.5 * l);
                window_acc = 0;
                window_tries = 0;
            }
            if step + 1 == run.burn_in && interacting {
                // drop accumulated round-off before production
                energy = energy_of_coords(pot, d, &sys.coords);
            }
        }
        if production && (step - run.burn_in + 1).is_multiple_of(thinning) {
            let counts = size_counts(d, &sys.coords, Some(l), run.radius);
            for (k, v) in series.iter_mut() {
                v.push(counts.get(k).copied().unwrap_or(0) as f64);
            }
            for (&k, &c) in &counts {
                series.entry(k).or_insert_with(|| {
                    // sizes first seen now had zero count in earlier samples
                    let mut v = vec![0.0; samples];
                    v.push(c as f64);
                    v
                });
            }
            energies.push(energy);
            samples += 1;
        }
    }
    if samples == 0 {
        return Err(Error::Invalid(format!(
            "no cluster samples: run of {} steps is shorter than the thinning interval {thinning}",
            run.steps
        )));
    }
    let volume = run.volume();
    let mean_counts: BTreeMap<usize, (f64, f64)> =
        series.iter().map(|(&k, v)| (k, batch_means(v, BATCHES))).collect();
    let rho_k: BTreeMap<usize, f64> = mean_counts.iter().map(|(&k, &(m, _))| (k, m / volume)).collect();
    let mut distribution = ClusterSizeDistribution::new(rho_k, run.density())?;
    distribution.volume = Some(volume);
    distribution.radius = Some(run.radius);
    let final_config = Configuration::new(d, sys.coords)?.in_box(l)?;
    Ok(CanonicalResult {
        distribution,
        mean_counts,
        diagnostics: CanonicalDiagnostics {
            acceptance: accepted as f64 / run.steps as f64,
            steps: run.steps,
            seed: run.seed,
            energy_mean: energies.mean(),
            energy_var: energies.variance(),
            step_size: delta,
            samples,
            final_energy: energy,
        },
        final_config,
    })
}

/// Runs `chains` independent chains (seeds `seed + c`) and averages them.
pub fn canonical_chains(pot: &PairPotential, run: &CanonicalRun, chains: usize, exec: &Exec) -> Result<CanonicalResult> {
    if chains == 0 {
        return Err(Error::Invalid("at least one chain is required".into()));
    }
    let results: Vec<Result<CanonicalResult>> = exec.map(chains, |c| {
        let mut r = run.clone();
        r.seed = run.seed.wrapping_add(c as u64);
        canonical_mcmc(pot, &r)
    });
    let results: Vec<CanonicalResult> = results.into_iter().collect::<Result<_>>()?;
    if chains == 1 {
        return Ok(results.into_iter().next().expect("one chain"));
    }
    let c = chains as f64;
    let mut mean_counts: BTreeMap<usize, (f64, f64)> = BTreeMap::new();
    for r in &results {
        for (&k, &(m, se)) in &r.mean_counts {
            let e = mean_counts.entry(k).or_insert((0.0, 0.0));
            e.0 += m / c;
            e.1 += se * se / (c * c);
        }
    }
    mean_counts.values_mut().for_each(|e| e.1 = e.1.sqrt());
    let volume = run.volume();
    let rho_k = mean_counts.iter().map(|(&k, &(m, _))| (k, m / volume)).collect();
    let mut distribution = ClusterSizeDistribution::new(rho_k, run.density())?;
    distribution.volume = Some(volume);
    distribution.radius = Some(run.radius);
    let mut energies = Accumulator::default();
    for r in &results {
        energies.push(r.diagnostics.energy_mean);
    }
    let first = &results[0];
    Ok(CanonicalResult {
        distribution,
        mean_counts,
        diagnostics: CanonicalDiagnostics {
            acceptance: results.iter().map(|r| r.diagnostics.acceptance).sum::<f64>() / c,
            steps: run.steps * chains as u64,
            seed: run.seed,
            energy_mean: energies.mean(),
            energy_var: results.iter().map(|r| r.diagnostics.energy_var).sum::<f64>() / c,
            step_size: first.diagnostics.step_size,
            samples: results.iter().map(|r| r.diagnostics.samples).sum(),
            final_energy: first.diagnostics.final_energy,
        },
        final_config: first.final_config.clone(),
    })
}

/// Weights of the two random-partition models over `(N_1, ..., N_N)`.
#[derive(Clone, Debug, PartialEq)]
pub enum PartitionModel {
    /// `Π λ_k^{N_k} / N_k!`; `log_lambda[k - 1] = log λ_k` (`-inf` for `λ_k = 0`).
    Ideal { log_lambda: Vec<f64> },
    /// `|Λ|^M / M! · Π e^{-β E_k N_k}`.
    Ckms { beta: f64, energies: Vec<f64>, volume: f64 },
}

impl PartitionModel {
    pub fn ideal(lambda: &[f64]) -> Result<Self> {
        if lambda.iter().any(|&l| !(l >= 0.0) || !l.is_finite()) {
            return Err(Error::Invalid("lambda_k must be finite and non-negative".into()));
        }
        Ok(PartitionModel::Ideal {
            log_lambda: lambda.iter().map(|l| l.ln()).collect(),
        })
    }

    /// `λ_k = |Λ| Z_k = |Λ| e^{-β k f_k}` for `k <= n`, using the tail model past
    /// the table; sizes without a value get `λ_k = 0`.
    pub fn ideal_from_table(table: &ClusterFreeEnergyTable, volume: f64, n: usize) -> Result<Self> {
        if !(volume > 0.0) {
            return Err(Error::Invalid(format!("volume must be positive, got {volume}")));
        }
        let log_lambda = (1..=n)
            .map(|k| match table.f_extended(k) {
                Some(f) => volume.ln() - table.beta * k as f64 * f,
                None => f64::NEG_INFINITY,
            })
            .collect();
        Ok(PartitionModel::Ideal { log_lambda })
    }

    pub fn ckms(beta: f64, energies: &[f64], volume: f64) -> Result<Self> {
        if !(beta > 0.0) || !(volume > 0.0) {
            return Err(Error::Invalid("beta and volume must be positive".into()));
        }
        Ok(PartitionModel::Ckms {
            beta,
            energies: energies.to_vec(),
            volume,
        })
    }

    pub fn ckms_from_groundstates(beta: f64, gs: &GroundStateTable, volume: f64) -> Result<Self> {
        let energies: Vec<f64> = (1..=gs.k_max()).map(|k| gs.energy(k).expect("tabulated")).collect();
        Self::ckms(beta, &energies, volume)
    }

    /// Largest cluster size with positive weight.
    fn max_size(&self) -> usize {
        match self {
            PartitionModel::Ideal { log_lambda } => log_lambda.len(),
            PartitionModel::Ckms { energies, .. } => energies.len(),
        }
    }

    fn log_size_weight(&self, k: usize) -> f64 {
        match self {
            PartitionModel::Ideal { log_lambda } => log_lambda.get(k - 1).copied().unwrap_or(f64::NEG_INFINITY),
            PartitionModel::Ckms { beta, energies, .. } => energies
                .get(k - 1)
                .map_or(f64::NEG_INFINITY, |e| -beta * e),
        }
    }

    /// Unnormalised log weight of `counts` (`counts[k]` is `N_k`; index 0 unused).
    pub fn log_weight(&self, counts: &[usize]) -> f64 {
        let mut w = 0.0;
        let mut m = 0usize;
        for (k, &c) in counts.iter().enumerate().skip(1) {
            if c == 0 {
                continue;
            }
            let lw = self.log_size_weight(k);
            if lw == f64::NEG_INFINITY {
                return f64::NEG_INFINITY;
            }
            w += c as f64 * lw;
            m += c;
            if let PartitionModel::Ideal { .. } = self {
                w -= ln_factorial(c);
            }
        }
        if let PartitionModel::Ckms { volume, .. } = self {
            w += m as f64 * volume.ln() - ln_factorial(m);
        }
        w
    }

    fn validate_n(&self, n: usize) -> Result<()> {
        if self.max_size() < n && self.log_size_weight(1) == f64::NEG_INFINITY {
            return Err(Error::Invalid("the model gives every partition zero weight".into()));
        }
        if self.log_size_weight(1) == f64::NEG_INFINITY {
            return Err(Error::Invalid("monomer weight must be positive".into()));
        }
        Ok(())
    }
}

fn ln_factorial(n: usize) -> f64 {
    (2..=n).map(|i| (i as f64).ln()).sum()
}

/// All integer partitions of `n` as count vectors (`c[k] = N_k`).
pub fn integer_partitions(n: usize) -> Vec<Vec<usize>> {
    fn rec(rest: usize, max_part: usize, counts: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if rest == 0 {
            out.push(counts.clone());
            return;
        }
        for part in (1..=max_part.min(rest)).rev() {
            counts[part] += 1;
            rec(rest - part, part, counts, out);
            counts[part] -= 1;
        }
    }
    let mut out = Vec::new();
    let mut counts = vec![0; n + 1];
    rec(n, n, &mut counts, &mut out);
    out
}

/// Normalised distribution over the partitions of `n`.
#[derive(Clone, Debug, PartialEq)]
pub struct PartitionDistribution {
    pub n: usize,
    /// `(counts, probability)`; `counts[k] = N_k`.
    pub states: Vec<(Vec<usize>, f64)>,
}

impl PartitionDistribution {
    /// `E[N_k]` for `k = 1..=n` (index 0 unused).
    pub fn mean_counts(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.n + 1];
        for (c, p) in &self.states {
            for k in 1..=self.n {
                m[k] += p * c[k] as f64;
            }
        }
        m
    }

    pub fn probability(&self, counts: &[usize]) -> f64 {
        self.states
            .iter()
            .find(|(c, _)| c.as_slice() == counts)
            .map_or(0.0, |s| s.1)
    }
}

pub const MAX_EXACT_N: usize = 14;

/// Exact enumeration of the model over all partitions of `n <= 14`.
pub fn partition_exact(model: &PartitionModel, n: usize) -> Result<PartitionDistribution> {
    if n == 0 || n > MAX_EXACT_N {
        return Err(Error::Invalid(format!("exact enumeration needs 1 <= N <= {MAX_EXACT_N}, got {n}")));
    }
    model.validate_n(n)?;
    let parts = integer_partitions(n);
    let logs: Vec<f64> = parts.iter().map(|c| model.log_weight(c)).collect();
    let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let ws: Vec<f64> = logs.iter().map(|l| (l - top).exp()).collect();
    let z: f64 = ws.iter().sum();
    Ok(PartitionDistribution {
        n,
        states: parts.into_iter().zip(ws).map(|(c, w)| (c, w / z)).collect(),
    })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PartitionMcmcOptions {
    pub steps: u64,
    pub burn_in: u64,
    pub seed: u64,
    /// Count accepted transitions `s -> s'` between distinct states.
    pub record_flows: bool,
}

#[derive(Clone, Debug)]
pub struct PartitionMcmcResult {
    pub n: usize,
    /// `E[N_k]` for `k = 1..=n` (index 0 unused).
    pub mean_counts: Vec<f64>,
    /// Batch-means standard errors of `mean_counts`.
    pub std_errors: Vec<f64>,
    pub acceptance: f64,
    pub flows: HashMap<(Vec<usize>, Vec<usize>), u64>,
}

/// State of the merge/split chain: sizes of the current clusters and `N_k`.
struct PartitionChain {
    counts: Vec<usize>,
    clusters: usize,
    multi: usize,
}

impl PartitionChain {
    fn new(n: usize) -> Self {
        let mut counts = vec![0; n + 1];
        counts[1] = n;
        PartitionChain {
            counts,
            clusters: n,
            multi: 0,
        }
    }

    /// Size of the `idx`-th cluster in a fixed ordering (by size, ascending).
    fn cluster_at(&self, mut idx: usize, min_size: usize) -> usize {
        for (k, &c) in self.counts.iter().enumerate().skip(min_size) {
            if idx < c {
                return k;
            }
            idx -= c;
        }
        unreachable!("cluster index out of range")
    }

    fn pair_count(&self, j: usize, l: usize) -> f64 {
        if j == l {
            let c = self.counts[j] as f64;
            c * (c - 1.0) / 2.0
        } else {
            (self.counts[j] * self.counts[l]) as f64
        }
    }

    fn apply(&mut self, remove: &[usize], add: &[usize]) {
        for &k in remove {
            self.counts[k] -= 1;
            self.clusters -= 1;
            self.multi -= (k >= 2) as usize;
        }
        for &k in add {
            self.counts[k] += 1;
            self.clusters += 1;
            self.multi += (k >= 2) as usize;
        }
    }

    /// `log q(merge {j, l})` from the current state.
    fn log_q_merge(&self, j: usize, l: usize) -> f64 {
        let m = self.clusters as f64;
        (0.5 * self.pair_count(j, l) / (m * (m - 1.0) / 2.0)).ln()
    }

    /// `log q(split size s into {j, s - j})` from the current state.
    fn log_q_split(&self, s: usize, j: usize) -> f64 {
        let cuts = if 2 * j == s { 1.0 } else { 2.0 };
        (0.5 * self.counts[s] as f64 / self.multi as f64 * cuts / (s - 1) as f64).ln()
    }
}

/// Metropolis chain over partitions of `n` with merge and split moves.
pub fn partition_mcmc(model: &PartitionModel, n: usize, opts: &PartitionMcmcOptions) -> Result<PartitionMcmcResult> {
    if n < 2 {
        return Err(Error::Invalid(format!("partition MCMC needs N >= 2, got {n}")));
    }
    if opts.steps == 0 {
        return Err(Error::Invalid("steps must be at least 1".into()));
    }
    model.validate_n(n)?;
    let mut rng = substream(opts.seed, 0);
    let mut chain = PartitionChain::new(n);
    let mut log_w = model.log_weight(&chain.counts);
    let mut series: Vec<Vec<f64>> = vec![Vec::with_capacity(opts.steps as usize); n + 1];
    let mut accepted = 0u64;
    let mut flows = HashMap::new();

    for step in 0..opts.burn_in + opts.steps {
        let before = opts.record_flows.then(|| chain.counts.clone());
        let mut moved = false;
        if rng.random::<bool>() {
            // merge two distinct clusters
            if chain.clusters >= 2 {
                let m = chain.clusters;
                let a = rng.random_range(0..m);
                let mut b = rng.random_range(0..m - 1);
                if b >= a {
                    b += 1;
                }
                let (j, l) = (chain.cluster_at(a, 1), chain.cluster_at(b, 1));
                let fwd = chain.log_q_merge(j, l);
                chain.apply(&[j, l], &[j + l]);
                let new_w = model.log_weight(&chain.counts);
                let rev = chain.log_q_split(j + l, j.min(l));
                let log_a = new_w - log_w + rev - fwd;
                if new_w > f64::NEG_INFINITY && (log_a >= 0.0 || rng.random::<f64>().ln() < log_a) {
                    log_w = new_w;
                    moved = true;
                } else {
                    chain.apply(&[j + l], &[j, l]);
                }
            }
        } else if chain.multi >= 1 {
            // split a cluster of size >= 2 at a uniform cut
            let s = chain.cluster_at(rng.random_range(0..chain.multi), 2);
            let cut = rng.random_range(1..s);
            let (j, l) = (cut, s - cut);
            let fwd = chain.log_q_split(s, j.min(l));
            chain.apply(&[s], &[j, l]);
            let new_w = model.log_weight(&chain.counts);
            let rev = chain.log_q_merge(j, l);
            let log_a = new_w - log_w + rev - fwd;
            if new_w > f64::NEG_INFINITY && (log_a >= 0.0 || rng.random::<f64>().ln() < log_a) {
                log_w = new_w;
                moved = true;
            } else {
                chain.apply(&[j, l], &[s]);
            }
        }
        debug_assert_eq!(
            chain.counts.iter().enumerate().map(|(k, c)| k * c).sum::<usize>(),
            n,
            "partition moves must preserve the particle number"
        );
        if step >= opts.burn_in {
            accepted += moved as u64;
            for k in 1..=n {
                series[k].push(chain.counts[k] as f64);
            }
            if let (true, Some(before)) = (moved, before) {
                *flows.entry((before, chain.counts.clone())).or_insert(0) += 1;
            }
        }
    }
    let mut mean_counts = vec![0.0; n + 1];
    let mut std_errors = vec![0.0; n + 1];
    for k in 1..=n {
        let (m, se) = batch_means(&series[k], BATCHES);
        mean_counts[k] = m;
        std_errors[k] = se;
    }
    Ok(PartitionMcmcResult {
        n,
        mean_counts,
        std_errors,
        acceptance: accepted as f64 / opts.steps as f64,
        flows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn reflection_stays_inside() {
        assert_eq!(reflect(-0.5, 10.0), 0.5);
        assert_eq!(reflect(10.5, 10.0), 9.5);
        assert_eq!(reflect(3.0, 10.0), 3.0);
        assert_eq!(reflect(25.0, 10.0), 5.0);
    }

    #[test]
    fn partition_counts() {
        assert_eq!(integer_partitions(1).len(), 1);
        assert_eq!(integer_partitions(6).len(), 11);
        assert_eq!(integer_partitions(14).len(), 135);
        for c in integer_partitions(9) {
            assert_eq!(c.iter().enumerate().map(|(k, n)| k * n).sum::<usize>(), 9);
        }
    }

    #[test]
    fn exact_examples() {
        let model = PartitionModel::ideal(&[10.0, 16.9726406]).unwrap();
        let d = partition_exact(&model, 2).unwrap();
        let p = d.probability(&[0, 0, 1]);
        assert!((p - 16.9726406 / 66.9726406).abs() < 1e-15);
        assert!((p - 0.2534265).abs() < 1e-7);

        let one = partition_exact(&model, 1).unwrap();
        assert_eq!(one.states, vec![(vec![0, 1], 1.0)]);

        let ckms = PartitionModel::ckms(1.0, &[0.0, -1.0, -2.0], 10.0).unwrap();
        let d = partition_exact(&ckms, 3).unwrap();
        let w = [1000.0 / 6.0, 50.0 * 1f64.exp(), 10.0 * 2f64.exp()];
        let z: f64 = w.iter().sum();
        assert!((w[1] - 135.914).abs() < 1e-3 && (w[2] - 73.891).abs() < 1e-3);
        assert!((d.probability(&[0, 3, 0, 0]) - w[0] / z).abs() < 1e-14);
        assert!((d.probability(&[0, 1, 1, 0]) - w[1] / z).abs() < 1e-14);
        assert!((d.probability(&[0, 0, 0, 1]) - w[2] / z).abs() < 1e-14);
    }

    fn opts(steps: u64, seed: u64) -> PartitionMcmcOptions {
        PartitionMcmcOptions {
            steps,
            burn_in: 1000,
            seed,
            record_flows: false,
        }
    }

    #[test]
    fn frozen_when_only_monomers_have_weight() {
        let model = PartitionModel::ideal(&[3.0, 0.0, 0.0, 0.0]).unwrap();
        let r = partition_mcmc(&model, 4, &opts(2000, 1)).unwrap();
        assert_eq!(r.mean_counts[1], 4.0);
        assert_eq!(r.acceptance, 0.0);
    }

    #[test]
    fn chain_matches_enumeration_for_small_n() {
        let model = PartitionModel::ckms(1.0, &[0.0, -1.0, -2.0, -3.2, -4.1], 4.0).unwrap();
        let exact = partition_exact(&model, 5).unwrap().mean_counts();
        let r = partition_mcmc(&model, 5, &opts(200_000, 3)).unwrap();
        for k in 1..=5 {
            assert!((r.mean_counts[k] - exact[k]).abs() <= 4.0 * r.std_errors[k] + 1e-12, "k={k}");
        }
    }

    #[test]
    fn detailed_balance_flows() {
        let model = PartitionModel::ideal(&[2.0, 3.0, 1.5, 0.7]).unwrap();
        let mut o = opts(400_000, 11);
        o.record_flows = true;
        let r = partition_mcmc(&model, 4, &o).unwrap();
        for ((a, b), &fwd) in &r.flows {
            let rev = r.flows.get(&(b.clone(), a.clone())).copied().unwrap_or(0) as f64;
            let fwd = fwd as f64;
            // counts are roughly Poisson
            assert!((fwd - rev).abs() <= 5.0 * (fwd + rev).sqrt() + 5.0, "{a:?} <-> {b:?}: {fwd} vs {rev}");
        }
    }

    #[test]
    fn single_particle_is_deterministic() {
        let run = CanonicalRun {
            n: 1,
            box_side: 5.0,
            dim: 2,
            beta: 1.0,
            radius: 1.0,
            steps: 500,
            burn_in: 10,
            thinning: 1,
            seed: 4,
        };
        let r = canonical_mcmc(&PairPotential::standard_hat_well(), &run).unwrap();
        assert_eq!(r.mean_counts[&1], (1.0, 0.0));
        assert!((r.distribution.get(1) - 1.0 / 25.0).abs() < 1e-15);
    }

    #[test]
    fn seeding_fails_when_the_box_is_overfull() {
        let pot = PairPotential::hard_core_only(1.0).unwrap();
        let run = CanonicalRun {
            n: 30,
            box_side: 5.0,
            dim: 1,
            beta: 1.0,
            radius: 1.5,
            steps: 100,
            burn_in: 10,
            thinning: 0,
            seed: 1,
        };
        assert!(matches!(canonical_mcmc(&pot, &run), Err(Error::Numerical(_))));
    }

    #[test]
    fn hard_cores_are_respected_and_energy_tracks() {
        let pot = PairPotential::standard_hat_well();
        let run = CanonicalRun::at_density(40, 0.2, 2, 2.0, 1.1, 200, 9).unwrap();
        assert!((run.density() - 0.2).abs() < 1e-12);
        let r = canonical_mcmc(&pot, &run).unwrap();
        let (min, _) = r.final_config.distance_extremes().unwrap();
        assert!(min > pot.hard_core());
        assert!((0.0..=1.0).contains(&r.diagnostics.acceptance));
        assert!(r.diagnostics.energy_mean <= 0.0);
        assert!((r.distribution.total_mass() - 0.2).abs() < 1e-9);
    }

    #[test]
    fn local_energies_track_the_total() {
        // N > 64 uses cell lists for the local energies
        let pot = PairPotential::standard_hat_well();
        for n in [30, 100] {
            let run = CanonicalRun::at_density(n, 0.3, 2, 1.0, 1.1, 50, 5).unwrap();
            let r = canonical_mcmc(&pot, &run).unwrap();
            let exact = energy_of_coords(&pot, 2, r.final_config.coords());
            assert!((r.diagnostics.final_energy - exact).abs() < 1e-8 * (1.0 + exact.abs()), "n={n}");
        }
    }

    #[test]
    fn diagnostics_json_keys() {
        let d = CanonicalDiagnostics {
            acceptance: 0.4,
            steps: 10,
            seed: 3,
            energy_mean: -1.0,
            energy_var: 0.5,
            step_size: 0.1,
            samples: 2,
            final_energy: 0.0,
        };
        let v: serde_json::Value = serde_json::from_str(&d.to_json()).unwrap();
        for key in ["acceptance", "steps", "seed", "energy_mean", "energy_var"] {
            assert!(v.get(key).is_some());
        }
    }

    proptest! {
        #[test]
        fn moves_preserve_particle_number(n in 2usize..12, seed in 0u64..1000) {
            let lambda: Vec<f64> = (1..=n).map(|k| 1.0 + (k as f64 * 0.37 + seed as f64).sin().abs()).collect();
            let model = PartitionModel::ideal(&lambda).unwrap();
            let r = partition_mcmc(&model, n, &opts(2000, seed)).unwrap();
            let mass: f64 = (1..=n).map(|k| k as f64 * r.mean_counts[k]).sum();
            prop_assert!((mass - n as f64).abs() < 1e-9);
        }
    }
}
