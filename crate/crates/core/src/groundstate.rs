//! Ground-state energies `E_k`, the per-particle limit `e_inf`, the critical
//! value `nu*`, the piecewise-affine `mu(nu)` with its minimising size and
//! gap, and the linear functional `g_nu`.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{fmt_f64, write_text, CsvDoc, CsvWriter};
use crate::potential::{distance, energy_of_coords, Configuration, PairPotential};
use crate::stats::{linear_fit, substream, Exec};

/// Effort spent per size by [`minimize_energy`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerBudget {
    pub restarts: usize,
    /// Basin-hopping steps per restart.
    pub hops: usize,
    /// Quasi-Newton iterations per local descent.
    pub max_iter: usize,
    /// Gradient-norm tolerance of the local descent.
    pub tolerance: f64,
}

impl Default for OptimizerBudget {
    fn default() -> Self {
        OptimizerBudget {
            restarts: 8,
            hops: 60,
            max_iter: 500,
            tolerance: 1e-9,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroundState {
    pub energy: f64,
    pub witness: Configuration,
    /// Best energy of each restart, in restart order (`inf` for failed ones).
    pub restart_energies: Vec<f64>,
}

const PENALTY_STIFFNESS: f64 = 1e8;
const PENALTY_MARGIN: f64 = 1e-6;

/// Smooth surrogate of the pair energy: inside `r_hc + margin` the hard core is
/// replaced by a stiff quadratic wall.
fn surrogate_pair(potential: &PairPotential, r: f64) -> (f64, f64) {
    let r_hc = potential.hard_core();
    if r_hc > 0.0 && r <= r_hc + PENALTY_MARGIN {
        let rc = r_hc + PENALTY_MARGIN;
        let gap = rc - r;
        (
            potential.value(rc) + PENALTY_STIFFNESS * gap * gap,
            potential.derivative(rc) - 2.0 * PENALTY_STIFFNESS * gap,
        )
    } else if r <= 1e-12 {
        (1e30, 0.0)
    } else {
        (potential.value(r), potential.derivative(r))
    }
}

fn surrogate_energy(potential: &PairPotential, dim: usize, x: &[f64], grad: &mut [f64]) -> f64 {
    grad.iter_mut().for_each(|g| *g = 0.0);
    let n = x.len() / dim;
    let b = potential.support();
    let mut e = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let r = distance(&x[i * dim..(i + 1) * dim], &x[j * dim..(j + 1) * dim]);
            if r > b {
                continue;
            }
            let (v, dv) = surrogate_pair(potential, r);
            e += v;
            if dv != 0.0 && r > 0.0 {
                for a in 0..dim {
                    let g = dv * (x[i * dim + a] - x[j * dim + a]) / r;
                    grad[i * dim + a] += g;
                    grad[j * dim + a] -= g;
                }
            }
        }
    }
    e
}

/// Limited-memory BFGS with Armijo backtracking. Returns the final point and value.
pub fn lbfgs<F>(mut f: F, x0: &[f64], max_iter: usize, gtol: f64) -> (Vec<f64>, f64)
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x0.len();
    let m = 8;
    let mut x = x0.to_vec();
    let mut g = vec![0.0; n];
    let mut fx = f(&x, &mut g);
    let mut s_hist: Vec<Vec<f64>> = Vec::new();
    let mut y_hist: Vec<Vec<f64>> = Vec::new();
    let mut x_new = vec![0.0; n];
    let mut g_new = vec![0.0; n];
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>();
    for _ in 0..max_iter {
        let gnorm = dot(&g, &g).sqrt();
        if gnorm <= gtol || !fx.is_finite() {
            break;
        }
        // two-loop recursion
        let mut d: Vec<f64> = g.iter().map(|v| -v).collect();
        let mut alphas = Vec::with_capacity(s_hist.len());
        for (s, y) in s_hist.iter().zip(&y_hist).rev() {
            let rho = 1.0 / dot(y, s);
            let a = rho * dot(s, &d);
            d.iter_mut().zip(y).for_each(|(di, yi)| *di -= a * yi);
            alphas.push((a, rho));
        }
        if let (Some(s), Some(y)) = (s_hist.last(), y_hist.last()) {
            let gamma = dot(s, y) / dot(y, y);
            d.iter_mut().for_each(|di| *di *= gamma);
        } else {
            let scale = 0.1 / gnorm.max(1e-300);
            d.iter_mut().for_each(|di| *di *= scale.min(1.0));
        }
        for ((s, y), (a, rho)) in s_hist.iter().zip(&y_hist).zip(alphas.into_iter().rev()) {
            let bcoef = rho * dot(y, &d);
            d.iter_mut().zip(s).for_each(|(di, si)| *di += (a - bcoef) * si);
        }
        let mut slope = dot(&g, &d);
        if slope >= 0.0 {
            d = g.iter().map(|v| -v).collect();
            slope = -dot(&g, &g);
            s_hist.clear();
            y_hist.clear();
        }
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            x_new.iter_mut().zip(&x).zip(&d).for_each(|((xn, xi), di)| *xn = xi + step * di);
            let f_new = f(&x_new, &mut g_new);
            if f_new.is_finite() && f_new <= fx + 1e-4 * step * slope {
                let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
                let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
                if dot(&s, &y) > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
                    s_hist.push(s);
                    y_hist.push(y);
                    if s_hist.len() > m {
                        s_hist.remove(0);
                        y_hist.remove(0);
                    }
                }
                let progress = fx - f_new;
                x.copy_from_slice(&x_new);
                g.copy_from_slice(&g_new);
                fx = f_new;
                accepted = true;
                if progress <= 1e-15 * (1.0 + fx.abs()) && step < 1e-10 {
                    return (x, fx);
                }
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    (x, fx)
}

fn random_start<R: Rng>(potential: &PairPotential, k: usize, dim: usize, spacing: f64, rng: &mut R) -> Vec<f64> {
    let min_sep = (potential.hard_core() + 0.02 * spacing).max(0.8 * spacing);
    let mut side = spacing * (k as f64).powf(1.0 / dim as f64) * 1.2;
    let mut coords: Vec<f64> = Vec::with_capacity(k * dim);
    while coords.len() < k * dim {
        let mut placed = false;
        for _ in 0..1000 {
            let p: Vec<f64> = (0..dim).map(|_| rng.random::<f64>() * side).collect();
            if coords.chunks(dim).all(|q| distance(q, &p) >= min_sep) {
                coords.extend(p);
                placed = true;
                break;
            }
        }
        if !placed {
            side *= 1.5;
        }
    }
    coords
}

fn descend(potential: &PairPotential, dim: usize, x: &[f64], budget: &OptimizerBudget) -> (Vec<f64>, f64) {
    let (x, _) = lbfgs(
        |p, g| surrogate_energy(potential, dim, p, g),
        x,
        budget.max_iter,
        budget.tolerance,
    );
    let exact = energy_of_coords(potential, dim, &x);
    (x, exact)
}

fn one_restart(
    potential: &PairPotential,
    k: usize,
    dim: usize,
    budget: &OptimizerBudget,
    seed: u64,
    index: u64,
) -> (f64, Vec<f64>) {
    let mut rng = substream(seed, index);
    let (r_star, v_min) = potential.pair_minimum();
    let spacing = if r_star > 0.0 { r_star } else { 1.0 };
    let scale = 0.3 * spacing;
    let temperature = 0.3 * v_min.abs().max(1e-3);
    let start = random_start(potential, k, dim, spacing, &mut rng);
    let (mut cur, mut cur_e) = descend(potential, dim, &start, budget);
    let (mut best, mut best_e) = (cur.clone(), cur_e);
    for _ in 0..budget.hops {
        let trial: Vec<f64> = cur
            .iter()
            .map(|c| {
                let z: f64 = StandardNormal.sample(&mut rng);
                c + scale * z
            })
            .collect();
        let (x, e) = descend(potential, dim, &trial, budget);
        let u: f64 = rng.random();
        if e.is_finite() && (e <= cur_e || !cur_e.is_finite() || u < (-(e - cur_e) / temperature).exp()) {
            cur = x;
            cur_e = e;
            if e < best_e {
                best = cur.clone();
                best_e = e;
            }
        }
    }
    (best_e, best)
}

/// Basin-hopping search for `E_k = inf U_k`. The returned energy is an upper
/// bound; restarts are reduced by the smallest `(energy, restart index)`.
pub fn minimize_energy(
    potential: &PairPotential,
    k: usize,
    dim: usize,
    budget: &OptimizerBudget,
    seed: u64,
    exec: &Exec,
) -> Result<GroundState> {
    if k == 0 {
        return Err(Error::Invalid("cluster size must be >= 1".into()));
    }
    if budget.restarts == 0 {
        return Err(Error::Invalid("optimizer budget needs at least one restart".into()));
    }
    if k == 1 {
        return Ok(GroundState {
            energy: 0.0,
            witness: Configuration::new(dim, vec![0.0; dim])?,
            restart_energies: vec![0.0; budget.restarts],
        });
    }
    let salt = (k as u64) << 32;
    let runs = exec.map(budget.restarts, |r| one_restart(potential, k, dim, budget, seed, salt + r as u64));
    let restart_energies: Vec<f64> = runs.iter().map(|(e, _)| *e).collect();
    let best = runs
        .iter()
        .enumerate()
        .filter(|(_, (e, _))| e.is_finite())
        .min_by(|(i, (a, _)), (j, (b, _))| a.total_cmp(b).then(i.cmp(j)));
    match best {
        Some((_, (e, x))) => {
            let witness = Configuration::new(dim, x.clone())?;
            Ok(GroundState {
                energy: *e,
                witness,
                restart_energies,
            })
        }
        None => Err(Error::Numerical(format!(
            "all {} restarts for k = {k} ended at infinite energy",
            budget.restarts
        ))),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroundStateEntry {
    pub k: usize,
    pub energy: f64,
    pub witness: Option<Configuration>,
}

/// Fitted `E_k / k = e_inf + a k^{-1/d}` over the largest sizes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EInfEstimate {
    pub e_inf: f64,
    /// Surface coefficient `a`.
    pub surface_coeff: f64,
    pub residual: f64,
    pub method: String,
    pub window: Vec<usize>,
    /// Residual above the configured threshold.
    pub flagged: bool,
    /// `nu* = min_k (E_k - k e_inf)` over tabulated sizes.
    pub nu_star: f64,
    /// Sizes attaining `nu*` within tolerance.
    pub nu_star_at: Vec<usize>,
    /// `nu*` is not strictly positive.
    pub nu_star_boundary: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TailFitSpec {
    /// Number of largest sizes used; `None` means the top half.
    pub window: Option<usize>,
    pub residual_threshold: f64,
}

impl Default for TailFitSpec {
    fn default() -> Self {
        TailFitSpec {
            window: None,
            residual_threshold: 1e-3,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroundStateTable {
    pub dim: usize,
    entries: Vec<GroundStateEntry>,
    pub fit: Option<EInfEstimate>,
    pub budget: Option<OptimizerBudget>,
    pub seed: Option<u64>,
}

impl GroundStateTable {
    /// Table from energies `E_1, E_2, ...` without witnesses.
    pub fn from_energies(dim: usize, energies: &[f64]) -> Result<Self> {
        if energies.is_empty() {
            return Err(Error::Invalid("ground-state table needs at least E_1".into()));
        }
        if energies[0] != 0.0 {
            return Err(Error::Invalid(format!("E_1 must be 0, got {}", energies[0])));
        }
        if let Some(e) = energies.iter().find(|e| !e.is_finite()) {
            return Err(Error::Invalid(format!("ground-state energies must be finite, got {e}")));
        }
        Ok(GroundStateTable {
            dim,
            entries: energies
                .iter()
                .enumerate()
                .map(|(i, &e)| GroundStateEntry {
                    k: i + 1,
                    energy: e,
                    witness: None,
                })
                .collect(),
            fit: None,
            budget: None,
            seed: None,
        })
    }

    pub fn k_max(&self) -> usize {
        self.entries.len()
    }

    pub fn energy(&self, k: usize) -> Option<f64> {
        self.entries.get(k.checked_sub(1)?).map(|e| e.energy)
    }

    pub fn entries(&self) -> &[GroundStateEntry] {
        &self.entries
    }

    pub fn e_inf(&self) -> Option<f64> {
        self.fit.as_ref().map(|f| f.e_inf)
    }

    /// Fits `e_inf` and `nu*` and stores the result.
    pub fn fitted(mut self, spec: &TailFitSpec) -> Result<Self> {
        self.fit = Some(einf_and_nustar(&self, spec)?);
        Ok(self)
    }

    /// Sets `e_inf` directly (e.g. from a known closed form) and derives `nu*`.
    pub fn with_e_inf(mut self, e_inf: f64, surface_coeff: f64) -> Self {
        let (nu_star, at) = nu_star_of(&self, e_inf);
        self.fit = Some(EInfEstimate {
            e_inf,
            surface_coeff,
            residual: 0.0,
            method: "given".into(),
            window: Vec::new(),
            flagged: false,
            nu_star,
            nu_star_at: at,
            nu_star_boundary: nu_star <= 1e-9 * (1.0 + e_inf.abs()),
        });
        self
    }

    /// Checks `E_k >= -B k` and `E_k - k e_inf >= -tol`.
    pub fn validate(&self, stability_constant: f64, tol: f64) -> Vec<String> {
        let mut issues = Vec::new();
        for e in &self.entries {
            if e.energy < -stability_constant * e.k as f64 - tol {
                issues.push(format!("E_{} = {} below -B k with B = {stability_constant}", e.k, e.energy));
            }
            if let Some(einf) = self.e_inf() {
                if e.energy - e.k as f64 * einf < -tol {
                    issues.push(format!("E_{} - k e_inf = {} is negative", e.k, e.energy - e.k as f64 * einf));
                }
            }
        }
        issues
    }

    pub fn to_csv(&self) -> String {
        let mut w = CsvWriter::new(&["k", "E_k", "min_dist", "max_dist"]);
        if let Some(f) = &self.fit {
            w.comment(&format!(
                "d={} e_inf={} nu_star={} surface_coeff={} fit_residual={} method={}",
                self.dim,
                fmt_f64(f.e_inf),
                fmt_f64(f.nu_star),
                fmt_f64(f.surface_coeff),
                fmt_f64(f.residual),
                f.method
            ));
        } else {
            w.comment(&format!("d={}", self.dim));
        }
        for e in &self.entries {
            let (lo, hi) = e
                .witness
                .as_ref()
                .and_then(|c| c.distance_extremes())
                .unwrap_or((f64::NAN, f64::NAN));
            w.row(&[e.k.to_string(), fmt_f64(e.energy), fmt_f64(lo), fmt_f64(hi)]);
        }
        w.finish()
    }

    /// Reads energies (witnesses are stored separately) and any fit recorded
    /// in the comment line.
    pub fn from_csv(text: &str, origin: &str) -> Result<Self> {
        let doc = CsvDoc::parse(text, origin)?;
        doc.expect_header(&["k", "E_k", "min_dist", "max_dist"], origin)?;
        let fields = doc.comment_fields();
        let dim: usize = fields
            .get("d")
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::parse(origin, "missing '# d=<dimension>' comment"))?;
        let mut energies = Vec::new();
        for row in 0..doc.rows.len() {
            let k = doc.uint(row, 0, origin)?;
            if k != row + 1 {
                return Err(Error::parse(origin, format!("sizes must be 1, 2, ... in order; found k = {k}")));
            }
            energies.push(doc.float(row, 1, origin)?);
        }
        let table = Self::from_energies(dim, &energies)?;
        let get = |key: &str| fields.get(key).and_then(|s| crate::io::parse_f64(s));
        Ok(match (get("e_inf"), get("surface_coeff")) {
            (Some(e), Some(a)) => {
                let mut t = table.with_e_inf(e, a);
                if let Some(f) = t.fit.as_mut() {
                    f.residual = get("fit_residual").unwrap_or(0.0);
                    f.method = fields.get("method").cloned().unwrap_or_else(|| "given".into());
                }
                t
            }
            _ => table,
        })
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_text(path, &self.to_csv())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::from_csv(&text, &path.display().to_string())
    }

    /// Writes `gs_k<k>.xyz` for every entry with a witness.
    pub fn write_witnesses(&self, dir: &Path) -> Result<()> {
        for e in &self.entries {
            if let Some(w) = &e.witness {
                write_text(&dir.join(format!("gs_k{}.xyz", e.k)), &witness_to_xyz(w))?;
            }
        }
        Ok(())
    }

    /// Attaches witnesses from `gs_k<k>.xyz` files found in `dir`.
    pub fn read_witnesses(&mut self, dir: &Path) -> Result<()> {
        for e in &mut self.entries {
            let path = dir.join(format!("gs_k{}.xyz", e.k));
            if path.exists() {
                let text = std::fs::read_to_string(&path).map_err(|err| Error::io(path.display().to_string(), err))?;
                e.witness = Some(witness_from_xyz(&text, self.dim, &path.display().to_string())?);
            }
        }
        Ok(())
    }
}

pub fn witness_to_xyz(config: &Configuration) -> String {
    let mut out = String::new();
    for i in 0..config.len() {
        let line: Vec<String> = config.point(i).iter().map(|&x| fmt_f64(x)).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

pub fn witness_from_xyz(text: &str, dim: usize, origin: &str) -> Result<Configuration> {
    let mut coords = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(crate::io::parse_f64)
            .collect::<Option<_>>()
            .ok_or_else(|| Error::parse(format!("{origin}:{}", lineno + 1), "bad coordinate"))?;
        if vals.len() != dim {
            return Err(Error::parse(format!("{origin}:{}", lineno + 1), format!("expected {dim} coordinates")));
        }
        coords.extend(vals);
    }
    Configuration::new(dim, coords)
}

/// Runs [`minimize_energy`] for `k = 1..=k_max`.
pub fn build_groundstate_table(
    potential: &PairPotential,
    k_max: usize,
    dim: usize,
    budget: &OptimizerBudget,
    seed: u64,
    exec: &Exec,
) -> Result<GroundStateTable> {
    let mut entries = Vec::with_capacity(k_max);
    for k in 1..=k_max {
        let gs = minimize_energy(potential, k, dim, budget, seed, exec)?;
        entries.push(GroundStateEntry {
            k,
            energy: gs.energy,
            witness: Some(gs.witness),
        });
    }
    Ok(GroundStateTable {
        dim,
        entries,
        fit: None,
        budget: Some(*budget),
        seed: Some(seed),
    })
}

fn nu_star_of(table: &GroundStateTable, e_inf: f64) -> (f64, Vec<usize>) {
    let excess: Vec<(usize, f64)> = table.entries.iter().map(|e| (e.k, e.energy - e.k as f64 * e_inf)).collect();
    let nu_star = excess.iter().map(|&(_, x)| x).fold(f64::INFINITY, f64::min);
    let tol = 1e-9 * (1.0 + nu_star.abs());
    let at = excess.iter().filter(|&&(_, x)| x - nu_star <= tol).map(|&(k, _)| k).collect();
    (nu_star, at)
}

/// Least-squares `E_k / k = e_inf + a k^{-1/d}` over the largest tabulated
/// sizes, and `nu* = min_k (E_k - k e_inf)`.
pub fn einf_and_nustar(table: &GroundStateTable, spec: &TailFitSpec) -> Result<EInfEstimate> {
    let kmax = table.k_max();
    if kmax < 4 {
        return Err(Error::Invalid(format!("e_inf fit needs K_max >= 4, table has {kmax}")));
    }
    let window = spec.window.unwrap_or(kmax.div_ceil(2)).clamp(2, kmax);
    let ks: Vec<usize> = (kmax - window + 1..=kmax).collect();
    let xs: Vec<f64> = ks.iter().map(|&k| (k as f64).powf(-1.0 / table.dim as f64)).collect();
    let ys: Vec<f64> = ks.iter().map(|&k| table.energy(k).unwrap() / k as f64).collect();
    let fit = linear_fit(&xs, &ys).ok_or_else(|| Error::Numerical("degenerate e_inf fit".into()))?;
    let e_inf = fit.intercept;
    let (nu_star, at) = nu_star_of(table, e_inf);
    let flagged = fit.rms_residual > spec.residual_threshold * (1.0 + e_inf.abs());
    if flagged {
        log::warn!("e_inf fit residual {} exceeds threshold", fit.rms_residual);
    }
    Ok(EInfEstimate {
        e_inf,
        surface_coeff: fit.slope,
        residual: fit.rms_residual,
        method: format!("surface_fit_k^-1/{}", table.dim),
        window: ks,
        flagged,
        nu_star,
        nu_star_at: at,
        nu_star_boundary: nu_star <= 1e-9 * (1.0 + e_inf.abs()),
    })
}

/// A minimising size, or the `k -> inf` branch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ClusterSize {
    Finite(usize),
    Infinite,
}

impl std::fmt::Display for ClusterSize {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ClusterSize::Finite(k) => write!(f, "{k}"),
            ClusterSize::Infinite => write!(f, "inf"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MuOfNu {
    pub nu: f64,
    pub mu: f64,
    pub k_nu: ClusterSize,
    /// `Delta(nu)` for a unique finite minimiser.
    pub delta: Option<f64>,
    /// On the infinite branch: distance from the best finite size to `e_inf`.
    pub gap_to_finite: Option<f64>,
    pub kink: bool,
    /// All sizes tying for the minimum when `kink` is set.
    pub tied: Vec<ClusterSize>,
    /// Lower bound of `(E_k - nu)/k - mu` over untabulated `k`.
    pub tail_gap: f64,
    /// The tail bound could not exclude larger sizes.
    pub table_too_short: bool,
}

/// `mu(nu) = inf_k (E_k - nu)/k` with the minimising size and gap.
pub fn mu_of_nu(table: &GroundStateTable, nu: f64) -> Result<MuOfNu> {
    if !(nu > 0.0) {
        return Err(Error::Domain(format!("nu must be positive, got {nu}")));
    }
    let fit = table
        .fit
        .as_ref()
        .ok_or_else(|| Error::Invalid("ground-state table has no e_inf".into()))?;
    let e_inf = fit.e_inf;
    let values: Vec<(usize, f64)> = table.entries.iter().map(|e| (e.k, (e.energy - nu) / e.k as f64)).collect();
    let finite_min = values.iter().map(|&(_, v)| v).fold(f64::INFINITY, f64::min);
    let mu = finite_min.min(e_inf);
    let tol = 1e-9 * (1.0 + mu.abs());

    // sizes beyond the table: E_k - k e_inf >= nu_hat
    let kmax = table.k_max();
    let expo = 1.0 - 1.0 / table.dim as f64;
    let surface = fit.surface_coeff * ((kmax + 1) as f64).powf(expo);
    let nu_hat = fit.nu_star.min(surface);
    let tail_floor = e_inf - ((nu - nu_hat) / (kmax + 1) as f64).max(0.0);
    let tail_gap = tail_floor - mu;

    let mut tied: Vec<ClusterSize> = values
        .iter()
        .filter(|&&(_, v)| v - mu <= tol)
        .map(|&(k, _)| ClusterSize::Finite(k))
        .collect();
    if e_inf - mu <= tol {
        tied.push(ClusterSize::Infinite);
    }
    let kink = tied.len() > 1;

    if finite_min > e_inf + tol {
        return Ok(MuOfNu {
            nu,
            mu: e_inf,
            k_nu: ClusterSize::Infinite,
            delta: None,
            gap_to_finite: Some(finite_min - e_inf),
            kink,
            tied: if kink { tied } else { Vec::new() },
            tail_gap,
            table_too_short: false,
        });
    }
    let k_nu = tied[0];
    let delta = if kink {
        None
    } else {
        let others = values
            .iter()
            .filter(|&&(k, _)| ClusterSize::Finite(k) != k_nu)
            .map(|&(_, v)| v - mu)
            .fold(f64::INFINITY, f64::min);
        Some(others.min(tail_gap))
    };
    let table_too_short = !kink && tail_gap <= 0.0;
    if table_too_short {
        log::warn!("mu({nu}): sizes beyond K = {kmax} cannot be excluded");
    }
    Ok(MuOfNu {
        nu,
        mu,
        k_nu,
        delta,
        gap_to_finite: None,
        kink,
        tied: if kink { tied } else { Vec::new() },
        tail_gap,
        table_too_short,
    })
}

/// `mu(nu)` on a grid, with the grid intervals where `k_nu` changes.
#[derive(Clone, Debug, PartialEq)]
pub struct SahaGeometry {
    pub points: Vec<MuOfNu>,
    /// Grid intervals `(nu_a, nu_b)` containing a slope change.
    pub kinks: Vec<(f64, f64)>,
    pub resolution: f64,
}

pub fn saha_geometry(table: &GroundStateTable, nu_grid: &[f64]) -> Result<SahaGeometry> {
    let points: Vec<MuOfNu> = nu_grid.iter().map(|&nu| mu_of_nu(table, nu)).collect::<Result<_>>()?;
    let mut kinks = Vec::new();
    for w in points.windows(2) {
        if w[0].k_nu != w[1].k_nu || w[1].kink {
            kinks.push((w[0].nu, w[1].nu));
        }
    }
    let resolution = nu_grid.windows(2).map(|w| (w[1] - w[0]).abs()).fold(0.0, f64::max);
    Ok(SahaGeometry {
        points,
        kinks,
        resolution,
    })
}

/// `g_nu(q) = (1 - Σ q_k) e_inf + Σ q_k (E_k - nu)/k`.
pub fn g_nu(table: &GroundStateTable, q: &BTreeMap<usize, f64>, nu: f64) -> Result<f64> {
    let e_inf = table
        .e_inf()
        .ok_or_else(|| Error::Invalid("ground-state table has no e_inf".into()))?;
    let total: f64 = q.values().sum();
    if total > 1.0 + 1e-12 {
        return Err(Error::Domain(format!("Σ q_k = {total} exceeds 1")));
    }
    let mut value = (1.0 - total) * e_inf;
    for (&k, &qk) in q {
        if qk < 0.0 {
            return Err(Error::Domain(format!("q_{k} = {qk} is negative")));
        }
        if qk == 0.0 {
            continue;
        }
        let ek = table
            .energy(k)
            .ok_or_else(|| Error::Domain(format!("q_{k} > 0 but E_{k} is not tabulated")))?;
        value += qk * (ek - nu) / k as f64;
    }
    Ok(value)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HypothesisReport {
    pub k: usize,
    pub min_dist: Option<f64>,
    pub max_dist: Option<f64>,
    /// Minimal distance at least `r_min`.
    pub holder_domain_pass: bool,
    /// Diameter at most `c k^{1/d}`.
    pub compact_shape_pass: bool,
    pub shape_bound: f64,
}

/// Checks a ground-state witness against the minimal-distance and
/// compact-shape requirements.
pub fn hypothesis_diagnostics(witness: &Configuration, k: usize, c: f64, r_min: f64) -> HypothesisReport {
    let shape_bound = c * (k as f64).powf(1.0 / witness.dim() as f64);
    match witness.distance_extremes() {
        None => HypothesisReport {
            k,
            min_dist: None,
            max_dist: None,
            holder_domain_pass: true,
            compact_shape_pass: true,
            shape_bound,
        },
        Some((lo, hi)) => HypothesisReport {
            k,
            min_dist: Some(lo),
            max_dist: Some(hi),
            holder_domain_pass: lo >= r_min,
            compact_shape_pass: hi <= shape_bound,
            shape_bound,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toy(kmax: usize) -> GroundStateTable {
        let e: Vec<f64> = (1..=kmax).map(|k| -(k as f64 - 1.0)).collect();
        GroundStateTable::from_energies(1, &e).unwrap().fitted(&TailFitSpec::default()).unwrap()
    }

    #[test]
    fn lbfgs_minimises_a_quadratic() {
        let (x, f) = lbfgs(
            |p, g| {
                g[0] = 2.0 * (p[0] - 3.0);
                g[1] = 20.0 * (p[1] + 1.0);
                (p[0] - 3.0).powi(2) + 10.0 * (p[1] + 1.0).powi(2)
            },
            &[0.0, 0.0],
            200,
            1e-12,
        );
        assert!((x[0] - 3.0).abs() < 1e-8 && (x[1] + 1.0).abs() < 1e-8);
        assert!(f < 1e-15);
    }

    #[test]
    fn trivial_and_pair_ground_states() {
        let lj = PairPotential::standard_lj();
        let exec = Exec::default();
        let budget = OptimizerBudget {
            restarts: 2,
            hops: 5,
            ..Default::default()
        };
        let g1 = minimize_energy(&lj, 1, 2, &budget, 1, &exec).unwrap();
        assert_eq!(g1.energy, 0.0);
        for d in 1..=3 {
            let g2 = minimize_energy(&lj, 2, d, &budget, 3, &exec).unwrap();
            assert!((g2.energy + 0.9836831).abs() < 1e-7, "d={d}: {}", g2.energy);
            let r = g2.witness.distance(0, 1);
            assert!((r - 2f64.powf(1.0 / 6.0)).abs() < 1e-5);
        }
    }

    #[test]
    fn lj_triangle() {
        let lj = PairPotential::standard_lj();
        let g3 = minimize_energy(&lj, 3, 2, &OptimizerBudget::default(), 11, &Exec::default()).unwrap();
        assert!((g3.energy + 2.9510493).abs() < 1e-6, "{}", g3.energy);
        // local descent from a perturbed triangle
        let s = 2f64.powf(1.0 / 6.0);
        let tri = [0.0, 0.0, s + 0.05, 0.02, 0.5 * s, 0.5 * 3f64.sqrt() * s - 0.04];
        let (_, e) = descend(&lj, 2, &tri, &OptimizerBudget::default());
        assert!((e + 2.9510493).abs() < 1e-7);
    }

    #[test]
    fn hat_well_pair_sits_at_the_core() {
        let hw = PairPotential::standard_hat_well();
        let g = minimize_energy(&hw, 2, 1, &OptimizerBudget::default(), 5, &Exec::default()).unwrap();
        assert!(g.energy.is_finite());
        assert!((g.energy + 2.0).abs() < 1e-5, "{}", g.energy);
        assert!(g.witness.distance(0, 1) > 0.5);
    }

    #[test]
    fn more_restarts_never_hurt() {
        let lj = PairPotential::standard_lj();
        let exec = Exec::new(2);
        let mut prev = f64::INFINITY;
        for restarts in [1, 2, 4] {
            let budget = OptimizerBudget {
                restarts,
                hops: 4,
                ..Default::default()
            };
            let e = minimize_energy(&lj, 5, 2, &budget, 9, &exec).unwrap().energy;
            assert!(e <= prev + 1e-12);
            prev = e;
        }
    }

    #[test]
    fn worker_count_does_not_change_result() {
        let lj = PairPotential::standard_lj();
        let budget = OptimizerBudget {
            restarts: 4,
            hops: 5,
            ..Default::default()
        };
        let a = minimize_energy(&lj, 4, 2, &budget, 2, &Exec::new(1)).unwrap();
        let b = minimize_energy(&lj, 4, 2, &budget, 2, &Exec::new(3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn toy_fit() {
        let t = toy(8);
        let f = t.fit.as_ref().unwrap();
        assert!((f.e_inf + 1.0).abs() < 1e-12);
        assert!((f.nu_star - 1.0).abs() < 1e-12);
        assert_eq!(f.nu_star_at, (1..=8).collect::<Vec<_>>());
        assert!(!f.nu_star_boundary);

        // E_k = -k for k >= 2 (E_1 is pinned to 0): nu* = 0
        let mut flat: Vec<f64> = (1..=6).map(|k| -(k as f64)).collect();
        flat[0] = 0.0;
        let t = GroundStateTable::from_energies(1, &flat).unwrap().with_e_inf(-1.0, 0.0);
        assert!(t.fit.as_ref().unwrap().nu_star_boundary);
        assert!(GroundStateTable::from_energies(1, &[0.0, -1.0, -2.0]).unwrap().fitted(&TailFitSpec::default()).is_err());
    }

    #[test]
    fn mu_of_nu_toy_examples() {
        let t = toy(8);
        let m = mu_of_nu(&t, 2.0).unwrap();
        assert!((m.mu + 2.0).abs() < 1e-12);
        assert_eq!(m.k_nu, ClusterSize::Finite(1));
        assert!((m.delta.unwrap() - 0.5).abs() < 1e-12);
        assert!(!m.kink && !m.table_too_short);

        let m = mu_of_nu(&t, 0.5).unwrap();
        assert!((m.mu + 1.0).abs() < 1e-12);
        assert_eq!(m.k_nu, ClusterSize::Infinite);

        let m = mu_of_nu(&t, 1.0).unwrap();
        assert!(m.kink);
        assert!(m.tied.contains(&ClusterSize::Infinite));
        assert!(mu_of_nu(&t, 0.0).is_err());
    }

    #[test]
    fn g_nu_examples() {
        let t = toy(8);
        assert!((g_nu(&t, &BTreeMap::new(), 2.0).unwrap() + 1.0).abs() < 1e-12);
        assert!((g_nu(&t, &BTreeMap::from([(1, 1.0)]), 2.0).unwrap() + 2.0).abs() < 1e-12);
        let q = BTreeMap::from([(1, 0.5), (2, 0.5)]);
        assert!((g_nu(&t, &q, 2.0).unwrap() + 1.75).abs() < 1e-12);
        let err = g_nu(&t, &BTreeMap::from([(9, 0.1)]), 2.0).unwrap_err();
        assert!(err.to_string().contains("E_9"));
    }

    #[test]
    fn hypothesis_checks() {
        let s = 2f64.powf(1.0 / 6.0);
        let pair = Configuration::new(2, vec![0.0, 0.0, s, 0.0]).unwrap();
        let rep = hypothesis_diagnostics(&pair, 2, 2.0, 1.0);
        assert!(rep.holder_domain_pass && rep.compact_shape_pass);
        assert!((rep.min_dist.unwrap() - s).abs() < 1e-15);
        let single = Configuration::new(2, vec![0.0, 0.0]).unwrap();
        let rep = hypothesis_diagnostics(&single, 1, 2.0, 1.0);
        assert!(rep.holder_domain_pass && rep.compact_shape_pass && rep.min_dist.is_none());
    }

    #[test]
    fn csv_and_xyz_round_trip() {
        let t = toy(5);
        let back = GroundStateTable::from_csv(&t.to_csv(), "mem").unwrap();
        assert_eq!(back.k_max(), 5);
        assert_eq!(back.energy(3), Some(-2.0));
        assert!((back.e_inf().unwrap() + 1.0).abs() < 1e-15);
        let cfg = Configuration::new(3, vec![0.1, 0.2, 0.3, 1.0 / 3.0, 2.0, -1.5]).unwrap();
        assert_eq!(witness_from_xyz(&witness_to_xyz(&cfg), 3, "mem").unwrap(), cfg);
    }

    proptest! {
        #[test]
        fn mu_is_nonincreasing_concave_and_flat_below_nu_star(
            incr in proptest::collection::vec(0.2f64..2.0, 5..9),
        ) {
            // E_k built from concave-ish random increments
            let mut e = vec![0.0];
            for (i, d) in incr.iter().enumerate() {
                e.push(e[i] - d);
            }
            let t = GroundStateTable::from_energies(2, &e).unwrap().fitted(&TailFitSpec::default()).unwrap();
            let nu_star = t.fit.as_ref().unwrap().nu_star;
            let grid: Vec<f64> = (1..200).map(|i| 0.05 * i as f64).collect();
            let mus: Vec<f64> = grid.iter().map(|&nu| mu_of_nu(&t, nu).unwrap().mu).collect();
            for w in mus.windows(2) {
                prop_assert!(w[1] <= w[0] + 1e-12);
            }
            for w in mus.windows(3) {
                prop_assert!(w[1] >= 0.5 * (w[0] + w[2]) - 1e-12);
            }
            for (nu, mu) in grid.iter().zip(&mus) {
                if *nu <= nu_star {
                    prop_assert!((mu - t.e_inf().unwrap()).abs() < 1e-12);
                }
            }
        }

        #[test]
        fn g_nu_minimum_over_vertices_is_mu(
            incr in proptest::collection::vec(0.2f64..2.0, 5..9),
            nu in 0.05f64..6.0,
        ) {
            let mut e = vec![0.0];
            for (i, d) in incr.iter().enumerate() {
                e.push(e[i] - d);
            }
            let t = GroundStateTable::from_energies(2, &e).unwrap().fitted(&TailFitSpec::default()).unwrap();
            let mut best = g_nu(&t, &BTreeMap::new(), nu).unwrap();
            for k in 1..=t.k_max() {
                best = best.min(g_nu(&t, &BTreeMap::from([(k, 1.0)]), nu).unwrap());
            }
            prop_assert!((best - mu_of_nu(&t, nu).unwrap().mu).abs() < 1e-12);
            for entry in t.entries() {
                let excess = entry.energy - entry.k as f64 * t.e_inf().unwrap();
                prop_assert!(excess >= t.fit.as_ref().unwrap().nu_star - 1e-12);
            }
        }
    }
}
