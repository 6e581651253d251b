//! Radial pair potentials with hard core, compact support and an attractive
//! tail, and total configuration energies.
//!
//! Energies are extended reals: `f64::INFINITY` is the hard-core value and is
//! never replaced by a large finite number, so Boltzmann factors inside the
//! core are exactly zero.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::substream;

/// Optional Hölder-continuity metadata: `|v(r) - v(s)| <= constant * |r - s|^exponent`
/// for `r, s >= r_min`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HolderInfo {
    pub exponent: f64,
    pub constant: f64,
    pub r_min: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum PotentialKind {
    /// `slope * (r - range)` on `(hard_core, range]`, zero beyond.
    HatWell { slope: f64 },
    /// `4 eps ((sigma/r)^12 - (sigma/r)^6) + shift` on `(0, cutoff]`, zero beyond.
    TruncatedShiftedLj { sigma: f64, epsilon: f64, shift: f64 },
    /// `-depth` on `(hard_core, range]`, zero beyond.
    SquareWell { depth: f64 },
    /// Zero outside the hard core.
    HardCoreOnly,
    /// Linear interpolation of `(r, v)` samples; flat below the first sample,
    /// zero beyond the support.
    Tabulated { r: Vec<f64>, v: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairPotential {
    name: String,
    kind: PotentialKind,
    hard_core: f64,
    support: f64,
    tail_delta: Option<f64>,
    holder: Option<HolderInfo>,
}

impl PairPotential {
    fn build(name: &str, kind: PotentialKind, hard_core: f64, support: f64) -> Result<Self> {
        if !(hard_core >= 0.0) || !hard_core.is_finite() {
            return Err(Error::Invalid(format!("hard-core radius must be >= 0, got {hard_core}")));
        }
        if !(support >= hard_core) || !support.is_finite() {
            return Err(Error::Invalid(format!(
                "support {support} must be finite and >= hard-core radius {hard_core}"
            )));
        }
        let mut pot = PairPotential {
            name: name.to_string(),
            kind,
            hard_core,
            support,
            tail_delta: None,
            holder: None,
        };
        pot.tail_delta = pot.scan_attractive_tail(1e-4);
        Ok(pot)
    }

    /// Piecewise-linear well `slope (r - range)` between the hard core and `range`.
    pub fn hat_well(hard_core: f64, range: f64, slope: f64) -> Result<Self> {
        if !(range > hard_core) || !(slope > 0.0) {
            return Err(Error::Invalid(format!(
                "hat well needs range > hard core and slope > 0 (got r_hc={hard_core}, b={range}, slope={slope})"
            )));
        }
        Self::build("hat_well", PotentialKind::HatWell { slope }, hard_core, range)
    }

    /// The test workhorse: `r_hc = 0.5`, `b = 1`, `v(r) = 4 (r - 1)`.
    pub fn standard_hat_well() -> Self {
        Self::hat_well(0.5, 1.0, 4.0).expect("valid hat well")
    }

    /// Lennard-Jones truncated at `cutoff` and shifted to vanish there.
    pub fn truncated_shifted_lj(sigma: f64, epsilon: f64, cutoff: f64) -> Result<Self> {
        if !(sigma > 0.0 && epsilon > 0.0 && cutoff > sigma) {
            return Err(Error::Invalid(format!(
                "LJ needs sigma > 0, epsilon > 0, cutoff > sigma (got {sigma}, {epsilon}, {cutoff})"
            )));
        }
        let sr6 = (sigma / cutoff).powi(6);
        let shift = -4.0 * epsilon * (sr6 * sr6 - sr6);
        let mut pot = Self::build(
            "ts_lennard_jones",
            PotentialKind::TruncatedShiftedLj {
                sigma,
                epsilon,
                shift,
            },
            0.0,
            cutoff,
        )?;
        pot.holder = Some(HolderInfo {
            exponent: 1.0,
            constant: 24.0 * epsilon / sigma * (2.0 * (sigma / (0.9 * sigma)).powi(13)),
            r_min: 0.9 * sigma,
        });
        Ok(pot)
    }

    /// `sigma = epsilon = 1`, cutoff 2.5.
    pub fn standard_lj() -> Self {
        Self::truncated_shifted_lj(1.0, 1.0, 2.5).expect("valid LJ")
    }

    pub fn square_well(hard_core: f64, range: f64, depth: f64) -> Result<Self> {
        if !(range > hard_core) {
            return Err(Error::Invalid("square well needs range > hard core".into()));
        }
        Self::build("square_well", PotentialKind::SquareWell { depth }, hard_core, range)
    }

    pub fn hard_core_only(hard_core: f64) -> Result<Self> {
        Self::build("hard_core", PotentialKind::HardCoreOnly, hard_core, hard_core)
    }

    /// `v ≡ 0`. Violates the attractive-tail requirement; sampler tests only.
    pub fn ideal_gas() -> Self {
        Self::build("ideal_gas", PotentialKind::HardCoreOnly, 0.0, 0.0).expect("valid")
    }

    /// Tabulated potential from ascending `(r, v)` samples. The support ends at
    /// the start of the trailing run of zero values (or the last sample).
    pub fn tabulated(hard_core: f64, samples: Vec<(f64, f64)>) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::Invalid("tabulated potential needs at least two samples".into()));
        }
        for w in samples.windows(2) {
            if !(w[1].0 > w[0].0) {
                return Err(Error::Invalid(format!(
                    "tabulated r values must be strictly ascending (at r = {})",
                    w[1].0
                )));
            }
        }
        if samples.iter().any(|(r, v)| !r.is_finite() || !v.is_finite() || *r <= 0.0) {
            return Err(Error::Invalid("tabulated samples must be finite with r > 0".into()));
        }
        let (r, v): (Vec<f64>, Vec<f64>) = samples.into_iter().unzip();
        let mut end = r.len() - 1;
        while end > 0 && v[end] == 0.0 && v[end - 1] == 0.0 {
            end -= 1;
        }
        let support = if v[end] == 0.0 { r[end] } else { r[r.len() - 1] };
        Self::build(
            "tabulated",
            PotentialKind::Tabulated { r, v },
            hard_core,
            support.max(hard_core),
        )
    }

    /// Reads a two-column whitespace-separated `r v` file (`#` comments allowed).
    pub fn tabulated_from_file(hard_core: f64, path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut samples = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line.split_whitespace().collect();
            let loc = || format!("{}:{}", path.display(), lineno + 1);
            if cols.len() != 2 {
                return Err(Error::parse(loc(), "expected two columns"));
            }
            let r: f64 = cols[0].parse().map_err(|_| Error::parse(loc(), "bad r"))?;
            let v: f64 = cols[1].parse().map_err(|_| Error::parse(loc(), "bad v"))?;
            samples.push((r, v));
        }
        Self::tabulated(hard_core, samples)
    }

    pub fn with_holder(mut self, holder: HolderInfo) -> Self {
        self.holder = Some(holder);
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn kind(&self) -> &PotentialKind {
        &self.kind
    }

    pub fn hard_core(&self) -> f64 {
        self.hard_core
    }

    /// `b = sup supp v`.
    pub fn support(&self) -> f64 {
        self.support
    }

    /// Width of the attractive tail below `b`, if one was found.
    pub fn tail_delta(&self) -> Option<f64> {
        self.tail_delta
    }

    pub fn holder(&self) -> Option<HolderInfo> {
        self.holder
    }

    /// `v(r)` for `r > 0`.
    pub fn evaluate(&self, r: f64) -> Result<f64> {
        if !(r > 0.0) {
            return Err(Error::Domain(format!("pair distance must be positive, got {r}")));
        }
        Ok(self.value(r))
    }

    /// Unchecked evaluation; `r <= r_hc` (including `r = 0`) gives `+inf`.
    #[inline]
    pub fn value(&self, r: f64) -> f64 {
        if r <= self.hard_core {
            return f64::INFINITY;
        }
        if r > self.support {
            return 0.0;
        }
        match &self.kind {
            PotentialKind::HatWell { slope } => slope * (r - self.support),
            PotentialKind::TruncatedShiftedLj {
                sigma,
                epsilon,
                shift,
            } => {
                let sr6 = (sigma / r).powi(6);
                4.0 * epsilon * (sr6 * sr6 - sr6) + shift
            }
            PotentialKind::SquareWell { depth } => -depth,
            PotentialKind::HardCoreOnly => 0.0,
            PotentialKind::Tabulated { r: rs, v: vs } => interpolate(rs, vs, r),
        }
    }

    /// `dv/dr` on `(r_hc, inf)`; one-sided slope at kinks.
    pub fn derivative(&self, r: f64) -> f64 {
        if r <= self.hard_core || r > self.support {
            return 0.0;
        }
        match &self.kind {
            PotentialKind::HatWell { slope } => *slope,
            PotentialKind::TruncatedShiftedLj { sigma, epsilon, .. } => {
                let sr6 = (sigma / r).powi(6);
                4.0 * epsilon * (-12.0 * sr6 * sr6 + 6.0 * sr6) / r
            }
            PotentialKind::SquareWell { .. } | PotentialKind::HardCoreOnly => 0.0,
            PotentialKind::Tabulated { r: rs, v: vs } => {
                if r <= rs[0] {
                    return 0.0;
                }
                let i = rs.partition_point(|&x| x < r).min(rs.len() - 1);
                (vs[i] - vs[i - 1]) / (rs[i] - rs[i - 1])
            }
        }
    }

    /// Location and value of the deepest point of the well on `(r_hc, b]`.
    /// For wells whose infimum sits at the hard core the returned distance is
    /// just outside it.
    pub fn pair_minimum(&self) -> (f64, f64) {
        let lo = self.hard_core;
        let hi = self.support.max(lo + 1e-9);
        let n = 20_000;
        let h = (hi - lo) / n as f64;
        let mut best = (hi, self.value(hi));
        for i in 1..=n {
            let r = lo + i as f64 * h;
            let v = self.value(r);
            if v < best.1 {
                best = (r, v);
            }
        }
        // golden-section refinement around the grid minimum
        let (mut a, mut b) = ((best.0 - h).max(lo + 1e-12), (best.0 + h).min(hi));
        let g = 0.5 * (5f64.sqrt() - 1.0);
        for _ in 0..100 {
            let c = b - g * (b - a);
            let d = a + g * (b - a);
            if self.value(c) < self.value(d) {
                b = d;
            } else {
                a = c;
            }
        }
        let r = 0.5 * (a + b);
        let v = self.value(r);
        if v < best.1 {
            (r, v)
        } else {
            best
        }
    }

    fn scan_attractive_tail(&self, resolution: f64) -> Option<f64> {
        let b = self.support;
        if !(b > self.hard_core) {
            return None;
        }
        let mut delta = 0.0;
        let mut r = b - resolution;
        while r > self.hard_core {
            if self.value(r) < 0.0 {
                delta = b - r;
                r -= resolution;
            } else {
                break;
            }
        }
        // the check starts just below b; a tail that is negative on the whole
        // grid up to the hard core is reported as reaching it
        if delta > 0.0 {
            Some(delta)
        } else {
            None
        }
    }
}

fn interpolate(rs: &[f64], vs: &[f64], r: f64) -> f64 {
    if r <= rs[0] {
        return vs[0];
    }
    let last = rs.len() - 1;
    if r >= rs[last] {
        return if r > rs[last] { 0.0 } else { vs[last] };
    }
    let i = rs.partition_point(|&x| x < r);
    let t = (r - rs[i - 1]) / (rs[i] - rs[i - 1]);
    vs[i - 1] + t * (vs[i] - vs[i - 1])
}

/// Particle positions in `R^d`, stored flat (`coords[i*d..(i+1)*d]`).
#[derive(Clone, Debug, PartialEq)]
pub struct Configuration {
    dim: usize,
    coords: Vec<f64>,
    box_side: Option<f64>,
}

impl Configuration {
    pub fn new(dim: usize, coords: Vec<f64>) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return Err(Error::Invalid(format!("dimension must be 1, 2 or 3, got {dim}")));
        }
        if !coords.len().is_multiple_of(dim) {
            return Err(Error::Invalid(format!(
                "{} coordinates do not split into {dim}-dimensional points",
                coords.len()
            )));
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::Invalid("coordinates must be finite".into()));
        }
        Ok(Configuration {
            dim,
            coords,
            box_side: None,
        })
    }

    pub fn from_points(dim: usize, points: &[Vec<f64>]) -> Result<Self> {
        if points.iter().any(|p| p.len() != dim) {
            return Err(Error::Invalid(format!("all points must have {dim} coordinates")));
        }
        Self::new(dim, points.concat())
    }

    pub fn empty(dim: usize) -> Self {
        Configuration {
            dim,
            coords: Vec::new(),
            box_side: None,
        }
    }

    /// Attaches the box `[0, side]^d`; every coordinate must lie inside.
    pub fn in_box(mut self, side: f64) -> Result<Self> {
        if !(side > 0.0) {
            return Err(Error::Invalid(format!("box side must be positive, got {side}")));
        }
        if self.coords.iter().any(|&c| !(0.0..=side).contains(&c)) {
            return Err(Error::Invalid(format!("coordinates outside the box [0, {side}]")));
        }
        self.box_side = Some(side);
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn box_side(&self) -> Option<f64> {
        self.box_side
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        distance(self.point(i), self.point(j))
    }

    /// All pairwise distances `(min, max)`; `None` for fewer than two points.
    pub fn distance_extremes(&self) -> Option<(f64, f64)> {
        let n = self.len();
        if n < 2 {
            return None;
        }
        let mut lo = f64::INFINITY;
        let mut hi: f64 = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                let r = self.distance(i, j);
                lo = lo.min(r);
                hi = hi.max(r);
            }
        }
        Some((lo, hi))
    }
}

#[inline]
pub fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// `U_N(x) = Σ_{i<j} v(|x_i - x_j|)`; `+inf` as soon as any pair overlaps.
pub fn total_energy(potential: &PairPotential, config: &Configuration) -> f64 {
    let n = config.len();
    let mut u = 0.0;
    for i in 0..n {
        let xi = config.point(i);
        for j in i + 1..n {
            let v = potential.value(distance(xi, config.point(j)));
            if v == f64::INFINITY {
                return f64::INFINITY;
            }
            u += v;
        }
    }
    u
}

/// Energy of a flat coordinate slice; same convention as [`total_energy`].
pub(crate) fn energy_of_coords(potential: &PairPotential, dim: usize, coords: &[f64]) -> f64 {
    let n = coords.len() / dim;
    let mut u = 0.0;
    for i in 0..n {
        let xi = &coords[i * dim..(i + 1) * dim];
        for j in i + 1..n {
            let v = potential.value(distance(xi, &coords[j * dim..(j + 1) * dim]));
            if v == f64::INFINITY {
                return f64::INFINITY;
            }
            u += v;
        }
    }
    u
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ItemCheck {
    pub verdict: Verdict,
    pub detail: String,
}

impl ItemCheck {
    fn new(verdict: Verdict, detail: impl Into<String>) -> Self {
        ItemCheck {
            verdict,
            detail: detail.into(),
        }
    }
}

/// Sampling specification for [`verify_assumption_v`].
#[derive(Clone, Debug, PartialEq)]
pub struct GridSpec {
    pub resolution: f64,
    /// Scan `(0, r_max_factor * b]` for the support check.
    pub r_max_factor: f64,
    pub probe_dim: usize,
    pub probe_sizes: Vec<usize>,
    pub probes_per_scale: usize,
    pub seed: u64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            resolution: 1e-4,
            r_max_factor: 3.0,
            probe_dim: 2,
            probe_sizes: vec![5, 10, 20],
            probes_per_scale: 8,
            seed: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub potential: String,
    pub hard_core: ItemCheck,
    pub stability: ItemCheck,
    pub compact_support: ItemCheck,
    pub attractive_tail: ItemCheck,
    pub continuity: ItemCheck,
    /// Witness width of the attractive tail.
    pub tail_delta: Option<f64>,
    /// Largest jump remaining after refining each grid interval.
    pub max_jump: f64,
    /// `max_k (-min probe U_k / k)`, a lower estimate of the stability constant.
    pub stability_constant: f64,
    pub probe_energy_per_particle: Vec<(usize, f64)>,
}

impl AssumptionReport {
    pub fn all_pass(&self) -> bool {
        [
            &self.hard_core,
            &self.stability,
            &self.compact_support,
            &self.attractive_tail,
            &self.continuity,
        ]
        .iter()
        .all(|c| c.verdict == Verdict::Pass)
    }
}

/// Grid diagnostics for the five requirements on the pair potential.
/// Stability is only probed through the necessary condition `U_k >= -B k`
/// on random clumped configurations.
pub fn verify_assumption_v(potential: &PairPotential, grid: &GridSpec) -> Result<AssumptionReport> {
    if !(grid.resolution > 0.0) {
        return Err(Error::Invalid("grid resolution must be positive".into()));
    }
    let h = grid.resolution;
    let r_hc = potential.hard_core();
    let b = potential.support();

    // (1) infinite exactly on (0, r_hc]
    let mut hc_ok = true;
    let mut r = h;
    while r <= r_hc {
        if potential.value(r) != f64::INFINITY {
            hc_ok = false;
            break;
        }
        r += h;
    }
    let r_top = (grid.r_max_factor * b.max(r_hc)).max(r_hc + 10.0 * h);
    let mut r = r_hc + h;
    while hc_ok && r <= r_top {
        if !potential.value(r).is_finite() {
            hc_ok = false;
        }
        r += h;
    }
    let hard_core = if hc_ok {
        ItemCheck::new(Verdict::Pass, format!("infinite on (0, {r_hc}], finite beyond"))
    } else {
        ItemCheck::new(Verdict::Fail, format!("hard-core structure violated near r = {r}"))
    };

    // (3) compact support
    let mut support_ok = true;
    let mut r = b + h;
    while r <= r_top {
        if potential.value(r) != 0.0 {
            support_ok = false;
            break;
        }
        r += h;
    }
    let compact_support = if support_ok {
        ItemCheck::new(Verdict::Pass, format!("v = 0 on ({b}, {r_top}]"))
    } else {
        ItemCheck::new(Verdict::Fail, format!("non-zero value at r = {r} beyond b = {b}"))
    };

    // (4) attractive tail
    let tail_delta = potential.scan_attractive_tail(h);
    let attractive_tail = match tail_delta {
        Some(d) => ItemCheck::new(Verdict::Pass, format!("v < 0 on ({}, {b})", b - d)),
        None => ItemCheck::new(Verdict::Fail, "no negative values just below b"),
    };

    // (5) continuity on the open interval (r_hc, inf)
    let mut max_jump: f64 = 0.0;
    let mut worst_at = f64::NAN;
    let mut r = r_hc + h;
    while r < r_top {
        let (a, c) = (r, r + h);
        let jump = (potential.value(c) - potential.value(a)).abs();
        if jump > 1e-12 {
            let refined = refine_jump(potential, a, c);
            if refined > max_jump {
                max_jump = refined;
                worst_at = 0.5 * (a + c);
            }
        }
        r += h;
    }
    let continuity = if max_jump <= 1e-6 {
        ItemCheck::new(Verdict::Pass, format!("continuous on ({r_hc}, inf); refined jumps <= {max_jump:e}"))
    } else {
        ItemCheck::new(
            Verdict::Fail,
            format!("jump of {max_jump} persists under refinement near r = {worst_at}"),
        )
    };

    // (2) stability probe
    let (stability, b_est, per_particle) = stability_probe(potential, grid);

    Ok(AssumptionReport {
        potential: potential.name().to_string(),
        hard_core,
        stability,
        compact_support,
        attractive_tail,
        continuity,
        tail_delta,
        max_jump,
        stability_constant: b_est,
        probe_energy_per_particle: per_particle,
    })
}

/// Bisects toward the steepest part of `[a, c]`; a genuine discontinuity keeps
/// its jump while a continuous function's jump shrinks to zero.
fn refine_jump(potential: &PairPotential, mut a: f64, mut c: f64) -> f64 {
    let mut va = potential.value(a);
    let mut vc = potential.value(c);
    for _ in 0..50 {
        let m = 0.5 * (a + c);
        if !(m > a && m < c) {
            break;
        }
        let vm = potential.value(m);
        if (vm - va).abs() >= (vc - vm).abs() {
            c = m;
            vc = vm;
        } else {
            a = m;
            va = vm;
        }
    }
    let scale = 1.0f64.max(va.abs()).max(vc.abs());
    (vc - va).abs() / scale
}

fn stability_probe(potential: &PairPotential, grid: &GridSpec) -> (ItemCheck, f64, Vec<(usize, f64)>) {
    let dim = grid.probe_dim.clamp(1, 3);
    let mut rng = substream(grid.seed, 0xB0B);
    let reach = potential.support().max(potential.hard_core()).max(1e-3);
    let mut per_particle = Vec::new();
    for &k in &grid.probe_sizes {
        let mut best = f64::INFINITY;
        for j in 0..=20 {
            let scale = reach * 10f64.powf(-3.0 + 0.2 * j as f64);
            for _ in 0..grid.probes_per_scale {
                let coords: Vec<f64> = (0..k * dim).map(|_| rng.random::<f64>() * scale).collect();
                let u = energy_of_coords(potential, dim, &coords);
                best = best.min(u / k as f64);
            }
        }
        per_particle.push((k, best));
    }
    let b_est = per_particle
        .iter()
        .map(|&(_, e)| if e.is_finite() { -e } else { f64::NEG_INFINITY })
        .fold(0.0f64, f64::max);
    let v_min = potential.pair_minimum().1.min(0.0).abs();
    // catastrophic clumping: per-particle energy keeps growing ~linearly in k
    // and is a sizeable fraction of the fully clumped value -(k-1)/2 |v_min|
    let verdict = if per_particle.len() >= 2 && v_min > 0.0 {
        let growth_ok = per_particle.windows(2).all(|w| {
            let (k0, e0) = w[0];
            let (k1, e1) = w[1];
            let ratio = (k1 as f64 - 1.0) / (k0 as f64 - 1.0);
            e1 < 0.0 && e0 < 0.0 && (-e1) >= 0.75 * ratio * (-e0)
        });
        let (k_last, e_last) = *per_particle.last().unwrap();
        let clumped = -e_last >= 0.5 * 0.5 * (k_last as f64 - 1.0) * v_min;
        if growth_ok && clumped {
            Verdict::Fail
        } else {
            Verdict::Pass
        }
    } else {
        Verdict::Pass
    };
    let detail = match verdict {
        Verdict::Fail => format!(
            "probe energies per particle {per_particle:?} grow linearly in k (U_k ~ -k^2)"
        ),
        _ => format!("probe energies per particle {per_particle:?}; B >= {b_est}"),
    };
    (ItemCheck::new(verdict, detail), b_est, per_particle)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hat_well_values() {
        let hw = PairPotential::standard_hat_well();
        assert!((hw.evaluate(0.99).unwrap() + 0.04).abs() < 1e-12);
        assert_eq!(hw.evaluate(0.4).unwrap(), f64::INFINITY);
        assert_eq!(hw.evaluate(0.5).unwrap(), f64::INFINITY);
        assert_eq!(hw.evaluate(1.2).unwrap(), 0.0);
        assert!(hw.evaluate(0.0).is_err());
        assert!(hw.evaluate(-1.0).is_err());
    }

    #[test]
    fn lj_minimum_value() {
        let lj = PairPotential::standard_lj();
        let r = 2f64.powf(1.0 / 6.0);
        assert!((lj.evaluate(r).unwrap() + 0.9836831).abs() < 1e-7);
        let PotentialKind::TruncatedShiftedLj { shift, .. } = lj.kind() else {
            panic!()
        };
        assert!((shift - 0.0163169).abs() < 1e-7);
        assert_eq!(lj.value(2.5 + 1e-12), 0.0);
        let (rmin, vmin) = lj.pair_minimum();
        assert!((rmin - r).abs() < 1e-6);
        assert!((vmin + 0.9836831).abs() < 1e-7);
    }

    #[test]
    fn lj_derivative_matches_finite_difference() {
        let lj = PairPotential::standard_lj();
        for &r in &[0.95, 1.1, 1.5, 2.2] {
            let h = 1e-6;
            let fd = (lj.value(r + h) - lj.value(r - h)) / (2.0 * h);
            assert!((lj.derivative(r) - fd).abs() < 1e-5 * (1.0 + fd.abs()));
        }
    }

    #[test]
    fn hat_well_assumptions() {
        let rep = verify_assumption_v(&PairPotential::standard_hat_well(), &GridSpec::default()).unwrap();
        assert_eq!(rep.hard_core.verdict, Verdict::Pass);
        assert_eq!(rep.stability.verdict, Verdict::Pass);
        assert_eq!(rep.compact_support.verdict, Verdict::Pass);
        assert_eq!(rep.attractive_tail.verdict, Verdict::Pass);
        assert_eq!(rep.continuity.verdict, Verdict::Pass, "{:?}", rep.continuity);
        assert!(rep.tail_delta.unwrap() > 0.4);
    }

    #[test]
    fn lj_assumptions() {
        let rep = verify_assumption_v(&PairPotential::standard_lj(), &GridSpec::default()).unwrap();
        assert!(rep.all_pass(), "{rep:?}");
    }

    #[test]
    fn square_well_without_core_is_unstable() {
        let sw = PairPotential::square_well(0.0, 1.0, 1.0).unwrap();
        let rep = verify_assumption_v(&sw, &GridSpec::default()).unwrap();
        assert_eq!(rep.stability.verdict, Verdict::Fail, "{rep:?}");
        // 20 near-coincident points: U_20 = -190
        let (_, e20) = rep.probe_energy_per_particle.iter().find(|(k, _)| *k == 20).unwrap();
        assert!((e20 * 20.0 + 190.0).abs() < 1e-9);
        // the jump at r = 1 is a genuine discontinuity
        assert_eq!(rep.continuity.verdict, Verdict::Fail);
    }

    #[test]
    fn tabulated_interpolates_and_finds_support() {
        let tab = PairPotential::tabulated(0.5, vec![(0.6, -2.0), (0.8, -1.0), (1.0, 0.0), (1.5, 0.0)]).unwrap();
        assert_eq!(tab.support(), 1.0);
        assert!((tab.value(0.7) + 1.5).abs() < 1e-12);
        assert_eq!(tab.value(0.55), -2.0);
        assert_eq!(tab.value(0.5), f64::INFINITY);
        assert_eq!(tab.value(1.2), 0.0);
        assert!((tab.derivative(0.9) - 5.0).abs() < 1e-12);
        assert!(PairPotential::tabulated(0.0, vec![(1.0, 0.0), (0.5, 1.0)]).is_err());
    }

    #[test]
    fn energies_of_small_configurations() {
        let lj = PairPotential::standard_lj();
        let s = 2f64.powf(1.0 / 6.0);
        let single = Configuration::new(2, vec![0.3, 0.4]).unwrap();
        assert_eq!(total_energy(&lj, &single), 0.0);
        let pair = Configuration::new(1, vec![0.0, s]).unwrap();
        assert!((total_energy(&lj, &pair) + 0.9836831).abs() < 1e-7);
        let tri = Configuration::new(2, vec![0.0, 0.0, s, 0.0, 0.5 * s, 0.5 * 3f64.sqrt() * s]).unwrap();
        assert!((total_energy(&lj, &tri) + 2.9510493).abs() < 1e-7);
        let hw = PairPotential::standard_hat_well();
        let overlap = Configuration::new(1, vec![0.0, 0.3, 5.0]).unwrap();
        assert_eq!(total_energy(&hw, &overlap), f64::INFINITY);
    }

    #[test]
    fn config_validation() {
        assert!(Configuration::new(4, vec![0.0; 4]).is_err());
        assert!(Configuration::new(2, vec![0.0; 3]).is_err());
        assert!(Configuration::new(1, vec![f64::NAN]).is_err());
        assert!(Configuration::new(1, vec![0.5, 2.0]).unwrap().in_box(1.0).is_err());
    }

    #[test]
    fn zero_beyond_support_on_dense_grid() {
        for pot in [PairPotential::standard_hat_well(), PairPotential::standard_lj()] {
            let b = pot.support();
            for i in 1..10_000 {
                assert_eq!(pot.value(b + i as f64 * 1e-4), 0.0);
            }
        }
    }

    fn rotate2(c: &[f64], theta: f64) -> Vec<f64> {
        let (s, co) = theta.sin_cos();
        c.chunks(2).flat_map(|p| [co * p[0] - s * p[1], s * p[0] + co * p[1]]).collect()
    }

    proptest! {
        #[test]
        fn energy_symmetries(
            pts in proptest::collection::vec(-3.0f64..3.0, 2..16),
            shift in (-5.0f64..5.0, -5.0f64..5.0),
            theta in 0.0f64..6.3,
        ) {
            let lj = PairPotential::standard_lj();
            let mut coords = pts.clone();
            if coords.len() % 2 == 1 { coords.pop(); }
            let base = energy_of_coords(&lj, 2, &coords);
            prop_assume!(base.is_finite());
            let tol = 1e-12 * (1.0 + base.abs()) * 1e3;
            let mut rev: Vec<f64> = coords.chunks(2).rev().flatten().copied().collect();
            prop_assert!((energy_of_coords(&lj, 2, &rev) - base).abs() <= tol);
            for p in rev.chunks_mut(2) { p[0] += shift.0; p[1] += shift.1; }
            prop_assert!((energy_of_coords(&lj, 2, &rev) - base).abs() <= tol);
            let rot = rotate2(&coords, theta);
            prop_assert!((energy_of_coords(&lj, 2, &rot) - base).abs() <= tol);
        }

        #[test]
        fn far_particle_adds_nothing(
            pts in proptest::collection::vec(-2.0f64..2.0, 3..12),
        ) {
            let hw = PairPotential::standard_hat_well();
            let mut coords = pts.clone();
            let base = energy_of_coords(&hw, 1, &coords);
            let far = coords.iter().cloned().fold(f64::MIN, f64::max) + hw.support() + 0.01;
            coords.push(far);
            let extended = energy_of_coords(&hw, 1, &coords);
            prop_assert!(base == extended || (base - extended).abs() < 1e-12);
        }
    }
}
