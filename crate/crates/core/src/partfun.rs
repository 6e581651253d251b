//! Cluster partition functions `Z_k^cl(beta)` and their box-constrained
//! variants, cluster free-energy tables with a `k -> inf` extrapolation, and
//! low-temperature / compact-shape diagnostics.

use std::f64::consts::PI;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::clustering::components;
use crate::error::{Error, Result};
use crate::groundstate::GroundStateTable;
use crate::io::{fmt_f64, parse_f64, write_text, CsvDoc, CsvWriter};
use crate::potential::{energy_of_coords, PairPotential};
use crate::stats::{linear_fit, substream, Accumulator, Exec};

/// Surface area of the unit sphere in `R^d` (`S_1 = 2`).
pub fn unit_sphere_area(d: usize) -> f64 {
    match d {
        1 => 2.0,
        2 => 2.0 * PI,
        3 => 4.0 * PI,
        _ => panic!("dimension {d} not supported"),
    }
}

/// Volume of the radius-`r` ball in `R^d`.
pub fn ball_volume(d: usize, r: f64) -> f64 {
    unit_sphere_area(d) * r.powi(d as i32) / d as f64
}

fn check_dim(d: usize) -> Result<()> {
    if (1..=3).contains(&d) {
        Ok(())
    } else {
        Err(Error::Invalid(format!("dimension must be 1, 2 or 3, got {d}")))
    }
}

/// Adaptive Simpson on `[a, b]` with absolute tolerance `tol` (relaxed to
/// `1e-13` relative for very large integrals).
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> Result<f64> {
    if b <= a {
        return Ok(0.0);
    }
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    if !whole.is_finite() {
        return Err(Error::Numerical(format!("non-integrable integrand on [{a}, {b}]")));
    }
    let tol = tol.max(1e-13 * whole.abs());
    let v = simpson_rec(f, a, b, fa, fm, fb, whole, tol, 60);
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Numerical(format!("quadrature diverged on [{a}, {b}]")))
    }
}

#[allow(clippy::too_many_arguments)]
fn simpson_rec<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson_rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + simpson_rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

/// Integrates `g(r)` over `(0, R]` with breakpoints at the hard core and the support.
fn radial_integral<G: Fn(f64) -> f64>(potential: &PairPotential, radius: f64, g: G) -> Result<f64> {
    let mut cuts = vec![potential.hard_core(), potential.support(), radius];
    cuts.retain(|&c| c > 0.0 && c <= radius);
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let mut total = 0.0;
    let mut lo = potential.hard_core();
    for &hi in &cuts {
        if hi > lo {
            total += adaptive_simpson(&g, lo, hi, 1e-10)?;
            lo = hi;
        }
    }
    Ok(total)
}

fn check_beta_radius(potential: &PairPotential, beta: f64, radius: f64) -> Result<()> {
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(Error::Domain(format!("beta must be positive, got {beta}")));
    }
    if !(radius > potential.support()) || !radius.is_finite() {
        return Err(Error::Domain(format!(
            "connectivity radius {radius} must exceed the interaction range {}",
            potential.support()
        )));
    }
    Ok(())
}

/// `Z_2^cl = (1/2) S_d ∫_0^R e^{-beta v(r)} r^{d-1} dr`.
pub fn z2_quadrature(potential: &PairPotential, beta: f64, radius: f64, d: usize) -> Result<f64> {
    check_dim(d)?;
    check_beta_radius(potential, beta, radius)?;
    let integral = radial_integral(potential, radius, |r| {
        (-beta * potential.value(r)).exp() * r.powi(d as i32 - 1)
    })?;
    Ok(0.5 * unit_sphere_area(d) * integral)
}

/// Angular-averaged overlap measure of two points at distance `r` in `[0, a]^d`,
/// valid for `r <= a`.
fn box_pair_measure(d: usize, a: f64, r: f64) -> f64 {
    match d {
        1 => 2.0 * (a - r),
        2 => 2.0 * PI * a * a - 8.0 * a * r + 2.0 * r * r,
        _ => 4.0 * PI * a.powi(3) - 6.0 * PI * a * a * r + 8.0 * a * r * r - r.powi(3),
    }
}

/// `Z_2^{cl,a}` by radial quadrature; requires `R <= a`.
pub fn z2_box_quadrature(potential: &PairPotential, beta: f64, a: f64, radius: f64, d: usize) -> Result<f64> {
    check_dim(d)?;
    check_beta_radius(potential, beta, radius)?;
    if !(a >= radius) {
        return Err(Error::Domain(format!("box side {a} must be at least R = {radius} for quadrature")));
    }
    let integral = radial_integral(potential, radius, |r| {
        (-beta * potential.value(r)).exp() * r.powi(d as i32 - 1) * box_pair_measure(d, a, r)
    })?;
    Ok(integral / (2.0 * a.powi(d as i32)))
}

/// `sup_{|x| <= 2/3} |log(1 - x) / x| = (3/2) log 3`, the constant in the
/// box-size correction `f^{cl,A}_k <= f^cl_k + C d R / (beta A)`.
pub fn box_correction_constant() -> f64 {
    1.5 * 3f64.ln()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MCEstimate {
    pub value: f64,
    pub std_error: f64,
    pub samples: u64,
    pub seed: u64,
    pub method: String,
    /// Every sample had zero weight; the relative error is infinite.
    pub no_effective_samples: bool,
}

impl MCEstimate {
    fn exact(value: f64, method: &str) -> Self {
        MCEstimate {
            value,
            std_error: 0.0,
            samples: 1,
            seed: 0,
            method: method.into(),
            no_effective_samples: false,
        }
    }

    pub fn relative_error(&self) -> f64 {
        if self.value > 0.0 {
            self.std_error / self.value
        } else {
            f64::INFINITY
        }
    }
}

/// Number of independent sub-streams a Monte Carlo run is split into; fixed so
/// results do not depend on the worker count.
const MC_CHUNKS: usize = 16;

fn ln_factorial(k: usize) -> f64 {
    (2..=k).map(|i| (i as f64).ln()).sum()
}

fn uniform_in_ball<R: Rng>(rng: &mut R, d: usize, radius: f64, out: &mut [f64]) {
    loop {
        let mut s = 0.0;
        for o in out.iter_mut().take(d) {
            *o = (2.0 * rng.random::<f64>() - 1.0) * radius;
            s += *o * *o;
        }
        if s <= radius * radius {
            return;
        }
    }
}

/// Parent of each vertex in a uniformly random labelled tree on `k` vertices
/// rooted at 0, plus a BFS order from the root.
fn random_tree<R: Rng>(rng: &mut R, k: usize) -> (Vec<usize>, Vec<usize>) {
    let mut adj = vec![Vec::new(); k];
    if k == 2 {
        adj[0].push(1);
        adj[1].push(0);
    } else if k > 2 {
        let prufer: Vec<usize> = (0..k - 2).map(|_| rng.random_range(0..k)).collect();
        let mut degree = vec![1usize; k];
        for &p in &prufer {
            degree[p] += 1;
        }
        for &p in &prufer {
            let leaf = (0..k).find(|&i| degree[i] == 1).unwrap();
            adj[leaf].push(p);
            adj[p].push(leaf);
            degree[leaf] -= 1;
            degree[p] -= 1;
        }
        let rest: Vec<usize> = (0..k).filter(|&i| degree[i] == 1).collect();
        adj[rest[0]].push(rest[1]);
        adj[rest[1]].push(rest[0]);
    }
    let mut parent = vec![usize::MAX; k];
    let mut order = vec![0];
    parent[0] = 0;
    let mut head = 0;
    while head < order.len() {
        let u = order[head];
        head += 1;
        for &w in &adj[u] {
            if parent[w] == usize::MAX {
                parent[w] = u;
                order.push(w);
            }
        }
    }
    (parent, order)
}

/// Weighted spanning-tree sum `sum_T prod_{ij in T} w(|x_i - x_j|^2)` of the
/// proximity graph `|x_i - x_j| <= R` (matrix-tree theorem).
fn tree_sum<W: Fn(f64) -> f64>(d: usize, coords: &[f64], radius: f64, weight: W) -> f64 {
    let k = coords.len() / d;
    if k <= 1 {
        return 1.0;
    }
    let n = k - 1;
    let mut lap = vec![0.0f64; n * n];
    let r2 = radius * radius;
    let mut scale = 0.0f64;
    for i in 0..k {
        for j in i + 1..k {
            let s: f64 = (0..d).map(|a| (coords[i * d + a] - coords[j * d + a]).powi(2)).sum();
            if s > r2 {
                continue;
            }
            let w = weight(s);
            if w <= 0.0 {
                continue;
            }
            scale = scale.max(w);
            if i > 0 {
                lap[(i - 1) * n + i - 1] += w;
            }
            if j > 0 {
                lap[(j - 1) * n + j - 1] += w;
            }
            if i > 0 && j > 0 {
                lap[(i - 1) * n + j - 1] -= w;
                lap[(j - 1) * n + i - 1] -= w;
            }
        }
    }
    let mut det = 1.0f64;
    for c in 0..n {
        let p = (c..n).max_by(|&a, &b| lap[a * n + c].abs().total_cmp(&lap[b * n + c].abs())).unwrap();
        if lap[p * n + c].abs() < 1e-12 * scale {
            return 0.0;
        }
        if p != c {
            for j in 0..n {
                lap.swap(p * n + j, c * n + j);
            }
            det = -det;
        }
        let piv = lap[c * n + c];
        det *= piv;
        for r in c + 1..n {
            let factor = lap[r * n + c] / piv;
            if factor != 0.0 {
                for j in c..n {
                    lap[r * n + j] -= factor * lap[c * n + j];
                }
            }
        }
    }
    det
}

/// Number of spanning trees of the proximity graph `|x_i - x_j| <= R`.
fn spanning_tree_count(d: usize, coords: &[f64], radius: f64) -> f64 {
    tree_sum(d, coords, radius, |_| 1.0).round()
}

/// Bond-vector law for the tree proposal: piecewise constant on thin radial
/// shells of the R-ball, with shell masses roughly following `e^{-beta v}`.
/// Every shell outside the hard core keeps a small floor so the law covers
/// the support of the integrand.
struct BondLaw {
    d: usize,
    radius: f64,
    /// Cumulative shell probabilities.
    cum: Vec<f64>,
    /// Density per unit volume, relative to the uniform density `1/V_R`.
    rel_density: Vec<f64>,
}

impl BondLaw {
    const SHELLS: usize = 1024;

    fn uniform(d: usize, radius: f64) -> Self {
        let n = Self::SHELLS;
        let cum = (1..=n).map(|i| ((i as f64) / n as f64).powi(d as i32)).collect();
        BondLaw { d, radius, cum, rel_density: vec![1.0; n] }
    }

    fn boltzmann(potential: &PairPotential, beta: f64, d: usize, radius: f64) -> Self {
        let n = Self::SHELLS;
        let h = radius / n as f64;
        let vol_total = ball_volume(d, radius);
        let mut raw = Vec::with_capacity(n);
        let mut vols = Vec::with_capacity(n);
        for i in 0..n {
            let (ra, rb) = (i as f64 * h, (i + 1) as f64 * h);
            let vol = ball_volume(d, rb) - ball_volume(d, ra);
            let probe = [ra + 1e-9 * h, 0.5 * (ra + rb), rb];
            let boltz = probe
                .iter()
                .map(|&r| (-beta * potential.value(r)).exp())
                .filter(|w| w.is_finite())
                .fold(0.0f64, f64::max);
            let open = potential.value(rb).is_finite();
            raw.push((boltz, open));
            vols.push(vol);
        }
        let peak = raw.iter().map(|r| r.0).fold(0.0f64, f64::max);
        let floor = 1e-4 * peak.max(1e-300);
        let mass: Vec<f64> = raw
            .iter()
            .zip(&vols)
            .map(|(&(b, open), &v)| if open { b.max(floor) * v } else { 0.0 })
            .collect();
        let total: f64 = mass.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return Self::uniform(d, radius);
        }
        let mut acc = 0.0;
        let cum = mass
            .iter()
            .map(|m| {
                acc += m / total;
                acc
            })
            .collect();
        let rel_density = mass.iter().zip(&vols).map(|(m, v)| m / total / v * vol_total).collect();
        BondLaw { d, radius, cum, rel_density }
    }

    fn sample<R: Rng>(&self, rng: &mut R, out: &mut [f64]) {
        let n = self.cum.len();
        let u: f64 = rng.random();
        let i = self.cum.partition_point(|&c| c < u).min(n - 1);
        let h = self.radius / n as f64;
        let (ra, rb) = (i as f64 * h, (i + 1) as f64 * h);
        let di = self.d as i32;
        let t: f64 = rng.random();
        let r = (ra.powi(di) + t * (rb.powi(di) - ra.powi(di))).powf(1.0 / self.d as f64);
        loop {
            let mut s = 0.0;
            for o in out.iter_mut().take(self.d) {
                *o = rng.sample::<f64, _>(StandardNormal);
                s += *o * *o;
            }
            if s > 1e-24 {
                let f = r / s.sqrt();
                for o in out.iter_mut().take(self.d) {
                    *o *= f;
                }
                return;
            }
        }
    }

    /// Density at a bond of squared length `r2`, relative to `1/V_R`.
    fn rel_density(&self, r2: f64) -> f64 {
        let n = self.rel_density.len();
        let i = ((r2.sqrt() / self.radius * n as f64) as usize).min(n - 1);
        self.rel_density[i]
    }
}

/// Places particles 1.. along a random tree rooted at particle 0 (whose
/// coordinates must already be set), each edge uniform in the R-ball.
fn grow_tree<R: Rng>(rng: &mut R, k: usize, d: usize, radius: f64, coords: &mut [f64]) {
    let (parent, order) = random_tree(rng, k);
    let mut step = [0.0; 3];
    for &v in order.iter().skip(1) {
        uniform_in_ball(rng, d, radius, &mut step);
        let p = parent[v];
        for a in 0..d {
            coords[v * d + a] = coords[p * d + a] + step[a];
        }
    }
}

/// As [`grow_tree`], with edges drawn from `law`.
fn grow_tree_with<R: Rng>(rng: &mut R, k: usize, law: &BondLaw, coords: &mut [f64]) {
    let d = law.d;
    let (parent, order) = random_tree(rng, k);
    let mut step = [0.0; 3];
    for &v in order.iter().skip(1) {
        law.sample(rng, &mut step);
        let p = parent[v];
        for a in 0..d {
            coords[v * d + a] = coords[p * d + a] + step[a];
        }
    }
}

fn is_connected(d: usize, coords: &[f64], radius: f64) -> bool {
    let mut uf = components(d, coords, None, radius);
    uf.set_size(0) == uf.len()
}

fn run_chunks<F>(samples: u64, seed: u64, exec: &Exec, draw: F) -> (Accumulator, u64)
where
    F: Fn(&mut rand_chacha::ChaCha8Rng) -> f64 + Sync,
{
    let per = samples / MC_CHUNKS as u64;
    let extra = samples % MC_CHUNKS as u64;
    let parts = exec.map(MC_CHUNKS, |c| {
        let n = per + u64::from((c as u64) < extra);
        let mut rng = substream(seed, c as u64);
        let mut acc = Accumulator::default();
        let mut nonzero = 0u64;
        for _ in 0..n {
            let w = draw(&mut rng);
            if w > 0.0 {
                nonzero += 1;
            }
            acc.push(w);
        }
        (acc, nonzero)
    });
    let mut acc = Accumulator::default();
    let mut nonzero = 0;
    for (a, nz) in &parts {
        acc.merge(a);
        nonzero += nz;
    }
    (acc, nonzero)
}

fn check_mc_args(k: usize, samples: u64) -> Result<()> {
    if k == 0 {
        return Err(Error::Invalid("cluster size must be >= 1".into()));
    }
    if samples == 0 {
        return Err(Error::Invalid("sample count must be >= 1".into()));
    }
    Ok(())
}

fn finish(acc: Accumulator, nonzero: u64, samples: u64, seed: u64, method: &str) -> MCEstimate {
    MCEstimate {
        value: acc.mean(),
        std_error: acc.std_error(),
        samples,
        seed,
        method: method.into(),
        no_effective_samples: nonzero == 0,
    }
}

/// Importance-sampling estimate of `Z_k^cl(beta)`: a uniformly random labelled
/// tree with bond lengths drawn roughly from the pair Boltzmann factor. The
/// weight divides by the bond-weighted spanning-tree sum, so the estimator is
/// unbiased whatever the shape of the bond law.
#[allow(clippy::too_many_arguments)]
pub fn estimate_zk(
    potential: &PairPotential,
    k: usize,
    beta: f64,
    radius: f64,
    d: usize,
    samples: u64,
    seed: u64,
    exec: &Exec,
) -> Result<MCEstimate> {
    check_mc_args(k, samples)?;
    check_dim(d)?;
    check_beta_radius(potential, beta, radius)?;
    if k == 1 {
        return Ok(MCEstimate::exact(1.0, "exact"));
    }
    // k^{k-2} V_R^{k-1} / k!
    let log_norm = (k as f64 - 2.0) * (k as f64).ln() + (k as f64 - 1.0) * ball_volume(d, radius).ln() - ln_factorial(k);
    let norm = log_norm.exp();
    let law = BondLaw::boltzmann(potential, beta, d, radius);
    let (acc, nonzero) = run_chunks(samples, seed, exec, |rng| {
        let mut coords = vec![0.0; k * d];
        grow_tree_with(rng, k, &law, &mut coords);
        let u = energy_of_coords(potential, d, &coords);
        if u == f64::INFINITY {
            return 0.0;
        }
        debug_assert!(is_connected(d, &coords, radius));
        let tau = tree_sum(d, &coords, radius, |r2| law.rel_density(r2));
        norm * (-beta * u).exp() / tau
    });
    Ok(finish(acc, nonzero, samples, seed, "tree_proposal"))
}

/// Sampling scheme for [`estimate_zk_box`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoxProposal {
    /// All particles uniform in the box.
    Uniform,
    /// First particle uniform in the box, the rest along a random tree;
    /// configurations leaving the box get weight zero.
    TreeRooted,
}

/// Monte Carlo estimate of `Z_k^{cl,a} = (1/(k! a^d)) ∫_{[0,a]^{dk}} e^{-beta U} 1{connected}`.
#[allow(clippy::too_many_arguments)]
pub fn estimate_zk_box(
    potential: &PairPotential,
    k: usize,
    beta: f64,
    a: f64,
    radius: f64,
    d: usize,
    samples: u64,
    seed: u64,
    proposal: BoxProposal,
    exec: &Exec,
) -> Result<MCEstimate> {
    check_mc_args(k, samples)?;
    check_dim(d)?;
    check_beta_radius(potential, beta, radius)?;
    if !(a > 0.0) {
        return Err(Error::Domain(format!("box side must be positive, got {a}")));
    }
    if k == 1 {
        return Ok(MCEstimate::exact(1.0, "exact"));
    }
    let (acc, nonzero) = match proposal {
        BoxProposal::Uniform => {
            let norm = ((k as f64 - 1.0) * d as f64 * a.ln() - ln_factorial(k)).exp();
            run_chunks(samples, seed, exec, |rng| {
                let coords: Vec<f64> = (0..k * d).map(|_| rng.random::<f64>() * a).collect();
                if !is_connected(d, &coords, radius) {
                    return 0.0;
                }
                let u = energy_of_coords(potential, d, &coords);
                if u == f64::INFINITY {
                    0.0
                } else {
                    norm * (-beta * u).exp()
                }
            })
        }
        BoxProposal::TreeRooted => {
            let log_norm =
                (k as f64 - 2.0) * (k as f64).ln() + (k as f64 - 1.0) * ball_volume(d, radius).ln() - ln_factorial(k);
            let norm = log_norm.exp();
            run_chunks(samples, seed, exec, |rng| {
                let mut coords = vec![0.0; k * d];
                for c in coords.iter_mut().take(d) {
                    *c = rng.random::<f64>() * a;
                }
                grow_tree(rng, k, d, radius, &mut coords);
                if coords.iter().any(|&c| !(0.0..=a).contains(&c)) {
                    return 0.0;
                }
                let u = energy_of_coords(potential, d, &coords);
                if u == f64::INFINITY {
                    return 0.0;
                }
                norm * (-beta * u).exp() / spanning_tree_count(d, &coords, radius)
            })
        }
    };
    let method = match proposal {
        BoxProposal::Uniform => "box_uniform",
        BoxProposal::TreeRooted => "box_tree_rooted",
    };
    Ok(finish(acc, nonzero, samples, seed, method))
}

/// Behaviour of `f_k` beyond the tabulated sizes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum TailModel {
    /// No information beyond `K`.
    None,
    /// `k (f_k - f_inf) = c k^exponent` for `k > K`.
    SurfaceLaw { c: f64, exponent: f64 },
}

impl TailModel {
    pub fn label(&self) -> String {
        match self {
            TailModel::None => "none".into(),
            TailModel::SurfaceLaw { c, exponent } => {
                format!("surface_law(C={},exponent={})", fmt_f64(*c), fmt_f64(*exponent))
            }
        }
    }

    pub fn parse(text: &str) -> Option<Self> {
        if text == "none" {
            return Some(TailModel::None);
        }
        let inner = text.strip_prefix("surface_law(")?.strip_suffix(')')?;
        let mut c = None;
        let mut exponent = None;
        for part in inner.split(',') {
            let (k, v) = part.split_once('=')?;
            match k.trim() {
                "C" => c = parse_f64(v),
                "exponent" => exponent = parse_f64(v),
                _ => return None,
            }
        }
        Some(TailModel::SurfaceLaw {
            c: c?,
            exponent: exponent?,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Quadrature,
    MonteCarlo,
    Synthetic,
}

impl Provenance {
    fn label(self) -> &'static str {
        match self {
            Provenance::Quadrature => "quadrature",
            Provenance::MonteCarlo => "mc",
            Provenance::Synthetic => "synthetic",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "quadrature" => Some(Provenance::Quadrature),
            "mc" => Some(Provenance::MonteCarlo),
            "synthetic" => Some(Provenance::Synthetic),
            _ => None,
        }
    }
}

/// Per-size cluster free energies `f_k^cl(beta)`, `k = 1..=K`, with `f_inf`
/// and a tail model.
#[derive(Clone, Debug, PartialEq)]
pub struct ClusterFreeEnergyTable {
    pub beta: f64,
    /// Connectivity radius; `NaN` for hand-written tables.
    pub radius: f64,
    f: Vec<f64>,
    stderr: Vec<f64>,
    pub f_inf: f64,
    pub f_inf_residual: f64,
    pub tail: TailModel,
    pub provenance: Provenance,
}

impl ClusterFreeEnergyTable {
    /// Table from `f_1 = 0, f_2, ..., f_K` (exact values).
    pub fn new(beta: f64, f: Vec<f64>, f_inf: f64, tail: TailModel) -> Result<Self> {
        let n = f.len();
        Self::with_errors(beta, f, vec![0.0; n], f_inf, tail)
    }

    pub fn with_errors(beta: f64, f: Vec<f64>, stderr: Vec<f64>, f_inf: f64, tail: TailModel) -> Result<Self> {
        if !(beta > 0.0) || !beta.is_finite() {
            return Err(Error::Domain(format!("beta must be positive, got {beta}")));
        }
        if f.is_empty() {
            return Err(Error::Invalid("free-energy table needs at least f_1".into()));
        }
        if f[0] != 0.0 {
            return Err(Error::Invalid(format!("f_1 must be exactly 0, got {}", f[0])));
        }
        if stderr.len() != f.len() {
            return Err(Error::Invalid("one standard error per size is required".into()));
        }
        if f.iter().any(|x| !x.is_finite()) || !f_inf.is_finite() {
            return Err(Error::Invalid("free energies must be finite".into()));
        }
        if stderr.iter().any(|s| !(*s >= 0.0)) {
            return Err(Error::Invalid("standard errors must be >= 0".into()));
        }
        if let TailModel::SurfaceLaw { c, exponent } = tail {
            if !(c > 0.0) || !exponent.is_finite() || exponent > 1.0 {
                return Err(Error::Invalid(format!(
                    "surface-law tail needs C > 0 and exponent <= 1 (got C={c}, exponent={exponent})"
                )));
            }
        }
        Ok(ClusterFreeEnergyTable {
            beta,
            radius: f64::NAN,
            f,
            stderr,
            f_inf,
            f_inf_residual: 0.0,
            tail,
            provenance: Provenance::Synthetic,
        })
    }

    /// `f_k = -log Z_k / (beta k)` from exact `log Z_k`, `k = 1..`.
    pub fn from_log_z(beta: f64, log_z: &[f64], d: usize) -> Result<Self> {
        let f: Vec<f64> = log_z
            .iter()
            .enumerate()
            .map(|(i, lz)| if i == 0 { 0.0 } else { -lz / (beta * (i + 1) as f64) })
            .collect();
        let table = Self::new(beta, f, 0.0, TailModel::None)?;
        table.refit_tail(d, None)
    }

    pub fn k_max(&self) -> usize {
        self.f.len()
    }

    /// `f_k` for tabulated `k`, otherwise `None`.
    pub fn f(&self, k: usize) -> Option<f64> {
        self.f.get(k.checked_sub(1)?).copied()
    }

    pub fn stderr(&self, k: usize) -> Option<f64> {
        self.stderr.get(k.checked_sub(1)?).copied()
    }

    pub fn values(&self) -> &[f64] {
        &self.f
    }

    pub fn errors(&self) -> &[f64] {
        &self.stderr
    }

    /// `f_k` including the tail model beyond `K`.
    pub fn f_extended(&self, k: usize) -> Option<f64> {
        self.f(k).or(match self.tail {
            TailModel::None => None,
            TailModel::SurfaceLaw { c, exponent } => Some(self.f_inf + c * (k as f64).powf(exponent) / k as f64),
        })
    }

    /// Same table with `f_k` shifted by `delta[k-1]` (for uncertainty envelopes).
    pub fn shifted(&self, delta: &[f64], f_inf_delta: f64) -> Result<Self> {
        let mut t = self.clone();
        for (i, (f, d)) in t.f.iter_mut().zip(delta).enumerate() {
            if i > 0 {
                *f += d;
            }
        }
        t.f_inf += f_inf_delta;
        Ok(t)
    }

    /// Least-squares `f_k = f_inf + C k^{-1/d}` over the largest sizes
    /// (top half by default); sets a surface-law tail when `C > 0`.
    pub fn refit_tail(mut self, d: usize, window: Option<usize>) -> Result<Self> {
        check_dim(d)?;
        let kmax = self.k_max();
        if kmax < 2 {
            return Err(Error::Invalid("tail fit needs at least two sizes".into()));
        }
        let window = window.unwrap_or(kmax.div_ceil(2)).clamp(2, kmax);
        let ks: Vec<usize> = (kmax - window + 1..=kmax).collect();
        let xs: Vec<f64> = ks.iter().map(|&k| (k as f64).powf(-1.0 / d as f64)).collect();
        let ys: Vec<f64> = ks.iter().map(|&k| self.f[k - 1]).collect();
        let fit = linear_fit(&xs, &ys).ok_or_else(|| Error::Numerical("degenerate f_inf fit".into()))?;
        self.f_inf = fit.intercept;
        self.f_inf_residual = fit.rms_residual;
        self.tail = if fit.slope > 1e-12 * (1.0 + fit.intercept.abs()) {
            TailModel::SurfaceLaw {
                c: fit.slope,
                exponent: 1.0 - 1.0 / d as f64,
            }
        } else {
            TailModel::None
        };
        Ok(self)
    }

    pub fn to_csv(&self) -> String {
        let mut w = CsvWriter::new(&["k", "f_k", "stderr_k"]);
        for (i, (f, s)) in self.f.iter().zip(&self.stderr).enumerate() {
            w.row(&[(i + 1).to_string(), fmt_f64(*f), fmt_f64(*s)]);
        }
        w.comment(&format!(
            "f_inf={} f_inf_residual={} beta={} R={} tail={}",
            fmt_f64(self.f_inf),
            fmt_f64(self.f_inf_residual),
            fmt_f64(self.beta),
            fmt_f64(self.radius),
            self.tail.label()
        ));
        w.comment(&format!("provenance={}", self.provenance.label()));
        w.finish()
    }

    pub fn from_csv(text: &str, origin: &str) -> Result<Self> {
        let doc = CsvDoc::parse(text, origin)?;
        doc.expect_header(&["k", "f_k", "stderr_k"], origin)?;
        let fields = doc.comment_fields();
        let num = |key: &str| -> Result<f64> {
            fields
                .get(key)
                .and_then(|s| parse_f64(s))
                .ok_or_else(|| Error::parse(origin, format!("missing or invalid '{key}=' footer")))
        };
        let mut f = Vec::new();
        let mut se = Vec::new();
        for row in 0..doc.rows.len() {
            let k = doc.uint(row, 0, origin)?;
            if k != row + 1 {
                return Err(Error::parse(origin, format!("sizes must be 1, 2, ... in order; found k = {k}")));
            }
            f.push(doc.float(row, 1, origin)?);
            se.push(doc.float(row, 2, origin)?);
        }
        let tail = match fields.get("tail") {
            Some(t) => TailModel::parse(t).ok_or_else(|| Error::parse(origin, format!("unknown tail model {t:?}")))?,
            None => TailModel::None,
        };
        let mut table = Self::with_errors(num("beta")?, f, se, num("f_inf")?, tail)?;
        table.f_inf_residual = num("f_inf_residual").unwrap_or(0.0);
        table.radius = num("R").unwrap_or(f64::NAN);
        if let Some(p) = fields.get("provenance") {
            table.provenance =
                Provenance::parse(p).ok_or_else(|| Error::parse(origin, format!("unknown provenance {p:?}")))?;
        }
        Ok(table)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_text(path, &self.to_csv())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::from_csv(&text, &path.display().to_string())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplingPlan {
    pub samples: u64,
    pub seed: u64,
}

/// Builds `f_k^cl` for `k = 1..=K`: exact at `k = 1`, quadrature at `k = 2`,
/// tree-proposal Monte Carlo beyond; then fits `f_inf`.
#[allow(clippy::too_many_arguments)]
pub fn build_table(
    potential: &PairPotential,
    beta: f64,
    radius: f64,
    k_max: usize,
    d: usize,
    plan: &SamplingPlan,
    exec: &Exec,
) -> Result<ClusterFreeEnergyTable> {
    if k_max < 2 {
        return Err(Error::Invalid(format!("table needs K >= 2, got {k_max}")));
    }
    let mut f = vec![0.0];
    let mut se = vec![0.0];
    let mut provenance = Provenance::Quadrature;
    for k in 2..=k_max {
        let (z, sz) = if k == 2 {
            (z2_quadrature(potential, beta, radius, d)?, 0.0)
        } else {
            provenance = Provenance::MonteCarlo;
            let est = estimate_zk(potential, k, beta, radius, d, plan.samples, plan.seed.wrapping_add(k as u64), exec)?;
            (est.value, est.std_error)
        };
        if !(z > 3.0 * sz) || z <= 0.0 {
            return Err(Error::Numerical(format!(
                "Z_{k} = {z} ± {sz} is not positive at 3 standard errors"
            )));
        }
        f.push(-z.ln() / (beta * k as f64));
        se.push(sz / (beta * k as f64 * z));
    }
    let mut table = ClusterFreeEnergyTable::with_errors(beta, f, se, 0.0, TailModel::None)?.refit_tail(d, None)?;
    table.radius = radius;
    table.provenance = provenance;
    Ok(table)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LowTempReport {
    pub beta: f64,
    /// Per `k`: `(k, f_k, E_k / k)`.
    pub rows: Vec<(usize, f64, f64)>,
    /// Smallest `C` with `f_k >= E_k/k - C/beta` for all `k`.
    pub c_lower: f64,
    /// Smallest `C` with `f_k <= E_k/k + C log(beta)/beta` for all `k`
    /// (`inf` when `beta <= 1` and the upper bound is violated).
    pub c_upper: f64,
    pub c: f64,
}

/// Smallest constant making `E_k/k - C/beta <= f_k <= E_k/k + (C/beta) log beta` hold.
pub fn lowtemp_check(table: &ClusterFreeEnergyTable, gs: &GroundStateTable, beta: f64) -> Result<LowTempReport> {
    let kmax = table.k_max().min(gs.k_max());
    let mut rows = Vec::new();
    let mut c_lower: f64 = 0.0;
    let mut c_upper: f64 = 0.0;
    let lb = beta.ln();
    for k in 1..=kmax {
        let fk = table.f(k).unwrap();
        let ek = gs.energy(k).unwrap() / k as f64;
        rows.push((k, fk, ek));
        c_lower = c_lower.max(beta * (ek - fk));
        let excess = fk - ek;
        if excess > 0.0 {
            c_upper = c_upper.max(if lb > 0.0 { beta * excess / lb } else { f64::INFINITY });
        }
    }
    Ok(LowTempReport {
        beta,
        rows,
        c_lower,
        c_upper,
        c: c_lower.max(c_upper),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollapseRow {
    pub k: usize,
    /// Box side `A = c k^{1/d}`.
    pub box_side: f64,
    pub log_z_box: f64,
    pub log_z: f64,
    /// `log Z^{cl,A} / log Z^cl`; `None` when both vanish.
    pub ratio: Option<f64>,
    /// `f_k^{cl,A} - f_k^cl`.
    pub difference: f64,
    pub difference_stderr: f64,
    /// `C d R / (beta A)` when `A > 3 k R`.
    pub bound: Option<f64>,
}

/// Compares `Z_k^cl` with its box-constrained version at `A = c k^{1/d}`.
#[allow(clippy::too_many_arguments)]
pub fn collapse_diagnostic(
    potential: &PairPotential,
    ks: &[usize],
    beta: f64,
    c: f64,
    radius: f64,
    d: usize,
    plan: &SamplingPlan,
    exec: &Exec,
) -> Result<Vec<CollapseRow>> {
    if !(c > 0.0) {
        return Err(Error::Domain(format!("shape constant must be positive, got {c}")));
    }
    let mut rows = Vec::new();
    for &k in ks {
        let a = c * (k as f64).powf(1.0 / d as f64);
        let kf = k as f64;
        let bound = (a > 3.0 * kf * radius).then(|| box_correction_constant() * d as f64 * radius / (beta * a));
        if k == 1 {
            rows.push(CollapseRow {
                k,
                box_side: a,
                log_z_box: 0.0,
                log_z: 0.0,
                ratio: None,
                difference: 0.0,
                difference_stderr: 0.0,
                bound,
            });
            continue;
        }
        let ((zb, sb), (z, sz)) = if k == 2 && a >= radius {
            (
                (z2_box_quadrature(potential, beta, a, radius, d)?, 0.0),
                (z2_quadrature(potential, beta, radius, d)?, 0.0),
            )
        } else {
            let seed = plan.seed.wrapping_add(1000 * k as u64);
            let eb = estimate_zk_box(potential, k, beta, a, radius, d, plan.samples, seed, BoxProposal::TreeRooted, exec)?;
            let e = estimate_zk(potential, k, beta, radius, d, plan.samples, seed + 1, exec)?;
            ((eb.value, eb.std_error), (e.value, e.std_error))
        };
        let (lzb, lz) = (zb.ln(), z.ln());
        let scale = beta * kf;
        let difference = (lz - lzb) / scale;
        let rel = |v: f64, s: f64| if v > 0.0 { s / v } else { f64::INFINITY };
        let difference_stderr = (rel(zb, sb).powi(2) + rel(z, sz).powi(2)).sqrt() / scale;
        rows.push(CollapseRow {
            k,
            box_side: a,
            log_z_box: lzb,
            log_z: lz,
            ratio: (lz != 0.0).then(|| lzb / lz),
            difference,
            difference_stderr,
            bound,
        });
    }
    Ok(rows)
}
