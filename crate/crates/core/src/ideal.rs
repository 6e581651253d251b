//! The ideal mixture of clusters: saturation density, chemical potential,
//! minimising cluster size distribution and free energy, the error functional
//! `eps_K`, and comparison metrics between cluster size distributions.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;
use serde_json::value::RawValue;

use crate::clustering::ClusterSizeDistribution;
use crate::error::{Error, Result};
use crate::io::{json_f64, json_to_f64, write_text};
use crate::partfun::{ClusterFreeEnergyTable, TailModel};

/// A finite measure on cluster sizes.
pub type Measure = BTreeMap<usize, f64>;

const MAX_EXPLICIT_TERMS: usize = 10_000_000;
const LISTING_EXTENSION: usize = 1000;

/// `Σ_{k > from} k^p z^k e^{-a k^s}` as an interval `(lower, upper)`; `p` is 0
/// or 1, `a >= 0`, `0 <= s <= 1`. Divergent sums give `(inf, inf)`.
pub fn tail_sum(p: u32, z: f64, a: f64, s: f64, from: usize) -> (f64, f64) {
    if z <= 0.0 {
        return (0.0, 0.0);
    }
    let k0 = (from + 1) as f64;
    let kf = from as f64;
    let geometric = |q: f64| -> f64 {
        if q >= 1.0 {
            f64::INFINITY
        } else if p == 0 {
            q.powf(k0) / (1.0 - q)
        } else {
            q.powf(k0) * (k0 - kf * q) / ((1.0 - q) * (1.0 - q))
        }
    };
    if a == 0.0 {
        let v = geometric(z);
        return (v, v);
    }
    if s <= 0.0 {
        let v = (-a).exp() * geometric(z);
        return (v, v);
    }
    if s >= 1.0 {
        let v = geometric(z * (-a).exp());
        return (v, v);
    }
    if z > 1.0 {
        return (f64::INFINITY, f64::INFINITY);
    }
    // stretched exponential: explicit terms plus a remainder bound
    let ln_z = z.ln();
    let pf = p as f64;
    let x_star = if p == 0 { 0.0 } else { (pf / (a * s)).powf(1.0 / s) };
    let integral_tail = |k: f64| -> f64 {
        if k < x_star {
            return f64::INFINITY;
        }
        let shape = (pf + 1.0) / s;
        match statrs::function::gamma::checked_gamma_ui(shape, a * k.powf(s)) {
            Ok(g) => g / (s * a.powf(shape)),
            Err(_) => f64::INFINITY,
        }
    };
    let mut sum = 0.0;
    let mut k = from;
    let mut remainder = f64::INFINITY;
    while k - from < MAX_EXPLICIT_TERMS {
        k += 1;
        let kf = k as f64;
        let term = kf.powi(p as i32) * (kf * ln_z - a * kf.powf(s)).exp();
        sum += term;
        if (k - from).is_multiple_of(16) || term == 0.0 {
            let ratio = z * ((kf + 1.0) / kf).powi(p as i32);
            let geo = if ratio < 1.0 && term > 0.0 {
                term * ratio / (1.0 - ratio)
            } else if term == 0.0 && ratio < 1.0 {
                0.0
            } else {
                f64::INFINITY
            };
            remainder = geo.min(integral_tail(kf));
            if remainder <= 1e-16 * sum || (sum == 0.0 && remainder < 1e-300) {
                break;
            }
        }
    }
    (sum, sum + remainder)
}

/// How `f_k` behaves beyond the table for the sums of the solver.
#[derive(Clone, Copy, Debug, PartialEq)]
enum EffectiveTail {
    /// Species stop at `K`.
    Truncated,
    /// `beta k (mu - f_k) = beta k (mu - f_inf) - a k^s`.
    Law { a: f64, s: f64 },
}

fn effective_tail(table: &ClusterFreeEnergyTable) -> EffectiveTail {
    match table.tail {
        TailModel::SurfaceLaw { c, exponent } => EffectiveTail::Law {
            a: table.beta * c,
            s: exponent,
        },
        TailModel::None => {
            let k = table.k_max();
            if k >= 2 {
                let t = |k: usize| k as f64 * (table.beta * k as f64 * (table.f_inf - table.f(k).unwrap())).exp();
                if t(k) >= t(k - 1) {
                    // non-decaying terms: continue flat at f_inf
                    return EffectiveTail::Law { a: 0.0, s: 1.0 };
                }
            }
            EffectiveTail::Truncated
        }
    }
}

fn tabulated_sum(table: &ClusterFreeEnergyTable, mu: f64, p: i32) -> f64 {
    let beta = table.beta;
    table
        .values()
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let k = (i + 1) as f64;
            k.powi(p) * (beta * k * (mu - f)).exp()
        })
        .sum()
}

/// `(Σ_k k^p e^{beta k (mu - f_k)})` over all sizes as an interval.
fn full_sum(table: &ClusterFreeEnergyTable, tail: EffectiveTail, mu: f64, p: u32) -> (f64, f64) {
    let head = tabulated_sum(table, mu, p as i32);
    match tail {
        EffectiveTail::Truncated => (head, head),
        EffectiveTail::Law { a, s } => {
            let z = (table.beta * (mu - table.f_inf)).exp();
            let (lo, hi) = tail_sum(p, z, a, s, table.k_max());
            (head + lo, head + hi)
        }
    }
}

/// Saturation density with its uncertainty interval.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SaturationDensity {
    /// Point value; `inf` when the series diverges.
    pub value: f64,
    pub lo: f64,
    pub hi: f64,
}

impl SaturationDensity {
    pub fn is_infinite(&self) -> bool {
        self.value == f64::INFINITY
    }
}

fn rho_sat_point(table: &ClusterFreeEnergyTable) -> (f64, f64) {
    let tail = effective_tail(table);
    if tail == (EffectiveTail::Law { a: 0.0, s: 1.0 }) {
        return (f64::INFINITY, f64::INFINITY);
    }
    full_sum(table, tail, table.f_inf, 1)
}

/// `rho_sat = Σ_k k e^{beta k (f_inf - f_k)}`, including the tail model and
/// the standard errors of the table.
pub fn saturation_density(table: &ClusterFreeEnergyTable) -> SaturationDensity {
    let (lo_t, hi_t) = rho_sat_point(table);
    let value = if hi_t.is_finite() { 0.5 * (lo_t + hi_t) } else { hi_t };
    let se = table.errors();
    if se.iter().all(|&s| s == 0.0) {
        return SaturationDensity { value, lo: lo_t, hi: hi_t };
    }
    // larger f_k -> smaller terms
    let plus = table.shifted(se, 0.0).expect("shift");
    let minus_delta: Vec<f64> = se.iter().map(|s| -s).collect();
    let minus = table.shifted(&minus_delta, 0.0).expect("shift");
    SaturationDensity {
        value,
        lo: rho_sat_point(&plus).0.min(lo_t),
        hi: rho_sat_point(&minus).1.max(hi_t),
    }
}

/// Solution of the ideal-mixture minimisation at `(beta, rho)`.
#[derive(Clone, Debug, PartialEq)]
pub struct IdealSolution {
    pub beta: f64,
    pub rho: f64,
    pub mu_ideal: f64,
    pub saturated: bool,
    pub rho_sat: f64,
    pub rho_sat_interval: (f64, f64),
    /// `(k, rho_k)` for the tabulated sizes and the significant tail sizes.
    pub minimiser: Vec<(usize, f64)>,
    /// `m = Σ_k rho_k`, tail included.
    pub m_ideal: f64,
    /// `rho mu - m / beta`.
    pub f_ideal: f64,
    /// Mass-balance residual `|Σ k rho_k - target|`.
    pub residual: f64,
    /// Upper bound on `Σ k rho_k` over sizes beyond the listing.
    pub tail_bound: f64,
    /// Upper bound on `Σ rho_k` over sizes beyond the listing.
    pub tail_clusters: f64,
    pub f_inf: f64,
    pub table_k_max: usize,
}

impl IdealSolution {
    pub fn rho_k(&self, k: usize) -> f64 {
        self.minimiser
            .binary_search_by_key(&k, |&(j, _)| j)
            .map(|i| self.minimiser[i].1)
            .unwrap_or(0.0)
    }

    pub fn measure(&self) -> Measure {
        self.minimiser.iter().copied().collect()
    }

    /// The listed minimiser as a cluster size distribution at density `rho`.
    pub fn distribution(&self) -> Result<ClusterSizeDistribution> {
        ClusterSizeDistribution::new(self.measure(), self.rho)
    }

    /// `Σ k rho_k` over the listed sizes.
    pub fn listed_mass(&self) -> f64 {
        self.minimiser.iter().map(|&(k, r)| k as f64 * r).sum()
    }

    /// Pressure in the form `beta p = m`.
    pub fn beta_pressure(&self) -> f64 {
        self.m_ideal
    }

    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Entry {
            k: usize,
            rho_k: Box<RawValue>,
        }
        #[derive(Serialize)]
        struct Doc {
            beta: Box<RawValue>,
            rho: Box<RawValue>,
            mu_ideal: Box<RawValue>,
            saturated: bool,
            rho_sat: Box<RawValue>,
            m_ideal: Box<RawValue>,
            f_ideal: Box<RawValue>,
            residual: Box<RawValue>,
            minimiser: Vec<Entry>,
            tail_bound: Box<RawValue>,
        }
        let doc = Doc {
            beta: json_f64(self.beta),
            rho: json_f64(self.rho),
            mu_ideal: json_f64(self.mu_ideal),
            saturated: self.saturated,
            rho_sat: json_f64(self.rho_sat),
            m_ideal: json_f64(self.m_ideal),
            f_ideal: json_f64(self.f_ideal),
            residual: json_f64(self.residual),
            minimiser: self
                .minimiser
                .iter()
                .map(|&(k, r)| Entry { k, rho_k: json_f64(r) })
                .collect(),
            tail_bound: json_f64(self.tail_bound),
        };
        let mut s = serde_json::to_string_pretty(&doc).expect("serializable");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str, origin: &str) -> Result<Self> {
        let v: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::parse(origin, e.to_string()))?;
        let num = |key: &str| -> Result<f64> {
            v.get(key)
                .and_then(json_to_f64)
                .ok_or_else(|| Error::parse(origin, format!("missing or invalid number '{key}'")))
        };
        let saturated = v
            .get("saturated")
            .and_then(|b| b.as_bool())
            .ok_or_else(|| Error::parse(origin, "missing 'saturated'"))?;
        let list = v
            .get("minimiser")
            .and_then(|m| m.as_array())
            .ok_or_else(|| Error::parse(origin, "missing 'minimiser' array"))?;
        let mut minimiser = Vec::with_capacity(list.len());
        for item in list {
            let k = item.get("k").and_then(|k| k.as_u64()).ok_or_else(|| Error::parse(origin, "minimiser entry without k"))?;
            let r = item
                .get("rho_k")
                .and_then(json_to_f64)
                .ok_or_else(|| Error::parse(origin, "minimiser entry without rho_k"))?;
            minimiser.push((k as usize, r));
        }
        let rho_sat = num("rho_sat")?;
        let mu = num("mu_ideal")?;
        Ok(IdealSolution {
            beta: num("beta")?,
            rho: num("rho")?,
            mu_ideal: mu,
            saturated,
            rho_sat,
            rho_sat_interval: (rho_sat, rho_sat),
            table_k_max: minimiser.last().map_or(0, |e| e.0),
            minimiser,
            m_ideal: num("m_ideal")?,
            f_ideal: num("f_ideal")?,
            residual: num("residual")?,
            tail_bound: num("tail_bound")?,
            tail_clusters: 0.0,
            f_inf: if saturated { mu } else { f64::NAN },
        })
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        write_text(path, &self.to_json())
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::from_json(&text, &path.display().to_string())
    }
}

/// Builds the solution record at a given chemical potential.
fn assemble(
    table: &ClusterFreeEnergyTable,
    rho: f64,
    mu: f64,
    saturated: bool,
    sat: SaturationDensity,
) -> IdealSolution {
    let beta = table.beta;
    let tail = effective_tail(table);
    let kmax = table.k_max();
    let mut minimiser: Vec<(usize, f64)> = table
        .values()
        .iter()
        .enumerate()
        .map(|(i, f)| (i + 1, (beta * (i + 1) as f64 * (mu - f)).exp()))
        .collect();
    let mut last = kmax;
    if let EffectiveTail::Law { a, s } = tail {
        let lz = beta * (mu - table.f_inf);
        let mut mass: f64 = minimiser.iter().map(|&(k, r)| k as f64 * r).sum();
        for k in kmax + 1..=kmax + LISTING_EXTENSION {
            let kf = k as f64;
            let r = (kf * lz - a * kf.powf(s)).exp();
            if !(r.is_finite()) || kf * r <= 1e-18 * mass.max(1e-300) {
                break;
            }
            mass += kf * r;
            minimiser.push((k, r));
            last = k;
        }
    }
    let (tail_bound, tail_clusters) = match tail {
        EffectiveTail::Truncated => (0.0, 0.0),
        EffectiveTail::Law { a, s } => {
            let z = (beta * (mu - table.f_inf)).exp();
            (tail_sum(1, z, a, s, last).1, tail_sum(0, z, a, s, last).1)
        }
    };
    let listed_mass: f64 = minimiser.iter().map(|&(k, r)| k as f64 * r).sum();
    let listed_clusters: f64 = minimiser.iter().map(|&(_, r)| r).sum();
    let total_mass = listed_mass + 0.5 * tail_bound;
    let m_ideal = listed_clusters + 0.5 * tail_clusters;
    let target = if saturated { sat.value } else { rho };
    IdealSolution {
        beta,
        rho,
        mu_ideal: mu,
        saturated,
        rho_sat: sat.value,
        rho_sat_interval: (sat.lo, sat.hi),
        minimiser,
        m_ideal,
        f_ideal: rho * mu - m_ideal / beta,
        residual: (total_mass - target).abs(),
        tail_bound,
        tail_clusters,
        f_inf: table.f_inf,
        table_k_max: kmax,
    }
}

fn solve_unsaturated(table: &ClusterFreeEnergyTable, rho: f64, sat: SaturationDensity) -> Result<IdealSolution> {
    let beta = table.beta;
    let tail = effective_tail(table);
    let mass = |mu: f64| -> f64 {
        let (lo, hi) = full_sum(table, tail, mu, 1);
        if hi.is_finite() {
            0.5 * (lo + hi)
        } else {
            hi
        }
    };
    let mut hi = table.f_inf.next_down();
    let mut lo = table.f_inf + rho.ln() / beta - 10.0;
    let mut widen = 10.0;
    while mass(lo) > rho {
        lo -= widen;
        widen *= 2.0;
        if !lo.is_finite() {
            return Err(Error::Numerical("could not bracket the chemical potential".into()));
        }
    }
    let mut mu = 0.5 * (lo + hi);
    for _ in 0..200 {
        mu = 0.5 * (lo + hi);
        let s = mass(mu);
        if (s - rho).abs() <= 1e-12 * rho {
            break;
        }
        if s > rho {
            hi = mu;
        } else {
            lo = mu;
        }
        if hi <= lo {
            break;
        }
    }
    Ok(assemble(table, rho, mu, false, sat))
}

/// Minimises the ideal functional at density `rho` (beta taken from the table).
pub fn solve(table: &ClusterFreeEnergyTable, rho: f64) -> Result<IdealSolution> {
    if !(rho > 0.0) || !rho.is_finite() {
        return Err(Error::Domain(format!("density must be positive, got {rho}")));
    }
    let sat = saturation_density(table);
    let tol = 1e-12;
    let straddles = sat.hi > sat.lo * (1.0 + tol) && rho >= sat.lo * (1.0 - tol) && rho < sat.hi;
    if straddles {
        let unsaturated = if rho < sat.value {
            solve_unsaturated(table, rho, sat).ok().map(Box::new)
        } else {
            None
        };
        let saturated = sat
            .value
            .is_finite()
            .then(|| Box::new(assemble(table, rho, table.f_inf, true, sat)));
        return Err(Error::AmbiguousPhase {
            rho,
            lo: sat.lo,
            hi: sat.hi,
            unsaturated,
            saturated,
        });
    }
    if sat.value.is_finite() && rho >= sat.value * (1.0 - tol) {
        Ok(assemble(table, rho, table.f_inf, true, sat))
    } else {
        solve_unsaturated(table, rho, sat)
    }
}

/// Min/max of `mu_ideal` and `f_ideal` over the table's uncertainty corners.
#[derive(Clone, Debug, PartialEq)]
pub struct Envelope {
    pub mu_min: f64,
    pub mu_max: f64,
    pub f_min: f64,
    pub f_max: f64,
    pub corners: Vec<IdealSolution>,
}

/// Re-solves with every `f_k` (and `f_inf`) shifted down and up by its
/// uncertainty. Both `mu_ideal` and `f_ideal` are monotone in the table, so
/// the two extreme corners bound every other one.
pub fn resample_envelope(table: &ClusterFreeEnergyTable, rho: f64) -> Result<Envelope> {
    let mut corners = Vec::new();
    for sign in [-1.0, 1.0] {
        let delta: Vec<f64> = table.errors().iter().map(|s| sign * s).collect();
        let mut t = table.shifted(&delta, sign * table.f_inf_residual)?;
        t = ClusterFreeEnergyTable::new(t.beta, t.values().to_vec(), t.f_inf, t.tail)?;
        corners.push(solve(&t, rho)?);
    }
    let mus: Vec<f64> = corners.iter().map(|c| c.mu_ideal).collect();
    let fs: Vec<f64> = corners.iter().map(|c| c.f_ideal).collect();
    Ok(Envelope {
        mu_min: mus.iter().copied().fold(f64::INFINITY, f64::min),
        mu_max: mus.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        f_min: fs.iter().copied().fold(f64::INFINITY, f64::min),
        f_max: fs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        corners,
    })
}

fn xlogx_minus(x: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * (x.ln() - 1.0)
    }
}

/// `Σ k rho_k f_k + (rho - Σ k rho_k) f_inf + beta^{-1} Σ rho_k (log rho_k - 1)`.
pub fn ideal_functional(table: &ClusterFreeEnergyTable, rho: f64, rhovec: &ClusterSizeDistribution) -> Result<f64> {
    let mass = rhovec.total_mass();
    if mass > rho * (1.0 + 1e-9) {
        return Err(Error::Domain(format!("cluster mass {mass} exceeds rho = {rho}")));
    }
    let mut value = (rho - mass) * table.f_inf;
    for (&k, &r) in rhovec.entries() {
        if r == 0.0 {
            continue;
        }
        let fk = table
            .f_extended(k)
            .ok_or_else(|| Error::Domain(format!("rho_{k} > 0 but f_{k} is not tabulated and there is no tail model")))?;
        value += k as f64 * r * fk + xlogx_minus(r) / table.beta;
    }
    Ok(value)
}

/// `K < (rho/3)^{-1/(d+1)}`.
pub fn epsilon_window_ok(rho: f64, cutoff: usize, d: usize) -> bool {
    (cutoff as f64) < (rho / 3.0).powf(-1.0 / (d as f64 + 1.0))
}

/// `rho_{<=K}^{(d+2)/(d+1)} + (rho - rho_{<=K}) log beta - m_{>K} log m_{>K}`;
/// with `collapse` the middle term uses `Σ_{k>K} k rho_k` instead.
pub fn epsilon_k(beta: f64, rho: f64, rhovec: &ClusterSizeDistribution, cutoff: usize, d: usize, collapse: bool) -> Result<f64> {
    if cutoff == 0 {
        return Err(Error::Invalid("cutoff K must be >= 1".into()));
    }
    if !epsilon_window_ok(rho, cutoff, d) {
        log::warn!("K = {cutoff} is outside the window K < (rho/3)^(-1/(d+1)) at rho = {rho}");
    }
    let upto = rhovec.mass_upto(cutoff);
    let m_above = rhovec.clusters_above(cutoff);
    let middle = if collapse { rhovec.mass_above(cutoff) } else { rho - upto };
    let entropy = if m_above > 0.0 { m_above * m_above.ln() } else { 0.0 };
    let dd = d as f64;
    Ok(upto.powf((dd + 2.0) / (dd + 1.0)) + middle * beta.ln() - entropy)
}

/// `H(a; b) = Σ (b_k - a_k + a_k log(a_k / b_k))`; `inf` when `a` is not
/// absolutely continuous with respect to `b`.
pub fn relative_entropy(a: &Measure, b: &Measure) -> f64 {
    let mut h = 0.0;
    for (k, &bk) in b {
        let ak = a.get(k).copied().unwrap_or(0.0);
        h += bk - ak;
        if ak > 0.0 {
            h += ak * (ak / bk).ln();
        }
    }
    for (k, &ak) in a {
        if ak > 0.0 && b.get(k).copied().unwrap_or(0.0) <= 0.0 {
            return f64::INFINITY;
        }
    }
    h
}

/// `||p - q||_var = (1/2) Σ |p_k - q_k|`.
pub fn total_variation(p: &Measure, q: &Measure) -> f64 {
    let mut keys: Vec<usize> = p.keys().chain(q.keys()).copied().collect();
    keys.sort_unstable();
    keys.dedup();
    0.5 * keys
        .iter()
        .map(|k| (p.get(k).copied().unwrap_or(0.0) - q.get(k).copied().unwrap_or(0.0)).abs())
        .sum::<f64>()
}

/// `g(x) = 1 - x + x log x`.
pub fn g_entropy(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        1.0 - x + x * x.ln()
    }
}

fn total(m: &Measure) -> f64 {
    m.values().sum()
}

fn normalized(m: &Measure) -> Measure {
    let t = total(m);
    m.iter().map(|(&k, &v)| (k, v / t)).collect()
}

/// Splits `H(rho; rho^ideal)` into `m^ideal g(m/m^ideal)` and `m H(p; p^ideal)`,
/// where `m^ideal` is the mass of the listed minimiser.
pub fn entropy_decomposition(rhovec: &ClusterSizeDistribution, ideal: &IdealSolution) -> Result<(f64, f64)> {
    let b = ideal.measure();
    let a: Measure = rhovec.entries().clone();
    let m_ideal = total(&b);
    let m = total(&a);
    if m == 0.0 {
        return Ok((m_ideal, 0.0));
    }
    let h = relative_entropy(&a, &b);
    if h.is_infinite() {
        return Err(Error::Domain("distribution is not absolutely continuous w.r.t. the minimiser".into()));
    }
    let term_g = m_ideal * g_entropy(m / m_ideal);
    let term_h = m * relative_entropy(&normalized(&a), &normalized(&b));
    let scale = h.abs().max(term_g.abs() + term_h.abs()).max(1e-300);
    if (term_g + term_h - h).abs() > 1e-12 * scale {
        return Err(Error::Numerical(format!(
            "entropy decomposition mismatch: {term_g} + {term_h} vs {h}"
        )));
    }
    Ok((term_g, term_h))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ComparisonMetrics {
    /// `|m / m^ideal - 1|`.
    pub mass_ratio_deviation: f64,
    /// `(1/2) H(p; p^ideal)`; `inf` outside the ideal support.
    pub half_entropy: f64,
    pub total_variation: f64,
    /// `(1/2) H - TV^2`.
    pub pinsker_slack: f64,
    pub absolutely_continuous: bool,
}

pub fn comparison_report(empirical: &ClusterSizeDistribution, ideal: &IdealSolution) -> ComparisonMetrics {
    let a: Measure = empirical.entries().clone();
    let b = ideal.measure();
    let m = total(&a);
    let m_ideal = total(&b);
    let p = if m > 0.0 { normalized(&a) } else { Measure::new() };
    let q = normalized(&b);
    let h = if m > 0.0 { relative_entropy(&p, &q) } else { 0.0 };
    let tv = if m > 0.0 { total_variation(&p, &q) } else { 1.0 };
    ComparisonMetrics {
        mass_ratio_deviation: (m / m_ideal - 1.0).abs(),
        half_entropy: 0.5 * h,
        total_variation: tv,
        pinsker_slack: 0.5 * h - tv * tv,
        absolutely_continuous: h.is_finite(),
    }
}

/// A ratio with lower and upper bounds from the truncated tail.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Bounded {
    pub value: f64,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TailReport {
    pub cutoff: usize,
    /// `m_{>K} / m^ideal`.
    pub cluster_fraction: Bounded,
    /// `Σ_{k>K} k rho_k / m^ideal`.
    pub mass_fraction: Bounded,
    /// `Σ k rho_k / m^ideal`.
    pub mean_size: Bounded,
}

pub fn tail_report(ideal: &IdealSolution, cutoff: usize) -> TailReport {
    let listed_m: f64 = ideal.minimiser.iter().map(|&(_, r)| r).sum();
    let listed_mass = ideal.listed_mass();
    let above_m: f64 = ideal.minimiser.iter().filter(|e| e.0 > cutoff).map(|e| e.1).sum();
    let above_mass: f64 = ideal.minimiser.iter().filter(|e| e.0 > cutoff).map(|e| e.0 as f64 * e.1).sum();
    let (tm, tk) = (ideal.tail_clusters, ideal.tail_bound);
    let bounded = |num: f64, den: f64, extra_num: f64, extra_den: f64| {
        let lo = num / (den + extra_den);
        let hi = (num + extra_num) / den;
        Bounded {
            value: (num + 0.5 * extra_num) / (den + 0.5 * extra_den),
            lo: lo.min(hi),
            hi: hi.max(lo),
        }
    };
    TailReport {
        cutoff,
        cluster_fraction: bounded(above_m, listed_m, tm, tm),
        mass_fraction: bounded(above_mass, listed_m, tk, tm),
        mean_size: bounded(listed_mass, listed_m, tk, tm),
    }
}
