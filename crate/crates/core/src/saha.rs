//! Low-temperature sweeps along `rho = e^{-beta nu}`: the ideal-mixture
//! solution against the zero-temperature predictions for the chemical
//! potential, the dominant cluster size and the saturation density, with
//! exponential decay-rate fits.

use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::groundstate::{mu_of_nu, ClusterSize, GroundStateTable};
use crate::ideal::{saturation_density, solve, IdealSolution};
use crate::io::{fmt_f64, write_text, CsvDoc, CsvWriter};
use crate::partfun::{ClusterFreeEnergyTable, TailModel};
use crate::stats::{linear_fit, Exec};

/// Supplies a cluster free-energy table at each inverse temperature.
pub trait TableProvider: Sync {
    /// `None` when the provider has nothing at this `beta`.
    fn table(&self, beta: f64) -> Option<ClusterFreeEnergyTable>;
    fn label(&self) -> String;
}

/// `f_k = E_k / k`, `f_inf = e_inf` at every `beta`, with the surface-law tail
/// `k (f_k - f_inf) = a k^{1 - 1/d}` from the ground-state fit.
#[derive(Clone, Debug)]
pub struct ZeroTemperature {
    energies: Vec<f64>,
    e_inf: f64,
    tail: TailModel,
}

impl ZeroTemperature {
    pub fn new(gs: &GroundStateTable) -> Result<Self> {
        let fit = gs
            .fit
            .as_ref()
            .ok_or_else(|| Error::Invalid("ground-state table has no e_inf fit".into()))?;
        Ok(ZeroTemperature {
            energies: (1..=gs.k_max()).map(|k| gs.energy(k).expect("tabulated") / k as f64).collect(),
            e_inf: fit.e_inf,
            tail: TailModel::SurfaceLaw {
                c: fit.surface_coeff,
                exponent: 1.0 - 1.0 / gs.dim as f64,
            },
        })
    }
}

impl TableProvider for ZeroTemperature {
    fn table(&self, beta: f64) -> Option<ClusterFreeEnergyTable> {
        ClusterFreeEnergyTable::new(beta, self.energies.clone(), self.e_inf, self.tail).ok()
    }

    fn label(&self) -> String {
        "zero_temperature".into()
    }
}

/// The same `f_k` at every `beta`.
#[derive(Clone, Debug)]
pub struct FixedTable(pub ClusterFreeEnergyTable);

impl TableProvider for FixedTable {
    fn table(&self, beta: f64) -> Option<ClusterFreeEnergyTable> {
        let t = &self.0;
        ClusterFreeEnergyTable::with_errors(beta, t.values().to_vec(), t.errors().to_vec(), t.f_inf, t.tail).ok()
    }

    fn label(&self) -> String {
        "fixed".into()
    }
}

/// Separately built tables (e.g. Monte Carlo) looked up by their `beta`.
#[derive(Clone, Debug, Default)]
pub struct TableSet {
    tables: Vec<ClusterFreeEnergyTable>,
}

impl TableSet {
    pub fn new(tables: Vec<ClusterFreeEnergyTable>) -> Self {
        TableSet { tables }
    }
}

impl TableProvider for TableSet {
    fn table(&self, beta: f64) -> Option<ClusterFreeEnergyTable> {
        self.tables
            .iter()
            .find(|t| (t.beta - beta).abs() <= 1e-12 * beta.abs())
            .cloned()
    }

    fn label(&self) -> String {
        format!("table_set({})", self.tables.len())
    }
}

/// One point `(nu, beta)` of a sweep.
#[derive(Clone, Debug)]
pub struct SahaPoint {
    pub nu: f64,
    pub beta: f64,
    /// `e^{-beta nu}`.
    pub rho: f64,
    pub solution: IdealSolution,
    pub k_nu: ClusterSize,
    pub mu_pred: f64,
    /// `mu_ideal - mu_pred`.
    pub dev_mu: f64,
    /// `k_nu rho_{k_nu} / rho` for finite `k_nu`; on the infinite branch the
    /// mass fraction carried by finite clusters, `Σ k rho_k / rho`.
    pub mass_fraction: f64,
    /// `|m_ideal k_nu / rho - 1|` for finite `k_nu`.
    pub pressure_deviation: Option<f64>,
}

impl SahaPoint {
    /// Deviation expected to vanish as `beta` grows: `|k_nu rho_{k_nu}/rho - 1|`
    /// for finite `k_nu`, the finite-cluster mass fraction otherwise.
    pub fn decay_deviation(&self) -> f64 {
        match self.k_nu {
            ClusterSize::Finite(_) => (self.mass_fraction - 1.0).abs(),
            ClusterSize::Infinite => self.mass_fraction,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct SahaSweep {
    pub points: Vec<SahaPoint>,
    pub notes: Vec<String>,
}

pub const SWEEP_HEADER: [&str; 9] = [
    "nu",
    "beta",
    "rho",
    "mu_ideal",
    "mu_pred",
    "dev_mu",
    "m_ideal",
    "mass_frac_knu",
    "sat_flag",
];

impl SahaSweep {
    pub fn deviations(&self) -> Vec<(f64, f64)> {
        self.points.iter().map(|p| (p.beta, p.decay_deviation())).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut w = CsvWriter::new(&SWEEP_HEADER);
        for p in &self.points {
            w.row(&[
                fmt_f64(p.nu),
                fmt_f64(p.beta),
                fmt_f64(p.rho),
                fmt_f64(p.solution.mu_ideal),
                fmt_f64(p.mu_pred),
                fmt_f64(p.dev_mu),
                fmt_f64(p.solution.m_ideal),
                fmt_f64(p.mass_fraction),
                (p.solution.saturated as u8).to_string(),
            ]);
        }
        for n in &self.notes {
            w.comment(n);
        }
        w.finish()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_text(path, &self.to_csv())
    }
}

/// A row of the sweep CSV.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SahaRow {
    pub nu: f64,
    pub beta: f64,
    pub rho: f64,
    pub mu_ideal: f64,
    pub mu_pred: f64,
    pub dev_mu: f64,
    pub m_ideal: f64,
    pub mass_frac_knu: f64,
    pub saturated: bool,
}

pub fn read_sweep_csv(text: &str, origin: &str) -> Result<Vec<SahaRow>> {
    let doc = CsvDoc::parse(text, origin)?;
    doc.expect_header(&SWEEP_HEADER, origin)?;
    (0..doc.rows.len())
        .map(|r| {
            let f = |c| doc.float(r, c, origin);
            Ok(SahaRow {
                nu: f(0)?,
                beta: f(1)?,
                rho: f(2)?,
                mu_ideal: f(3)?,
                mu_pred: f(4)?,
                dev_mu: f(5)?,
                m_ideal: f(6)?,
                mass_frac_knu: f(7)?,
                saturated: match doc.rows[r][8].as_str() {
                    "0" => false,
                    "1" => true,
                    other => return Err(Error::parse(format!("{origin}: row {}", r + 1), format!("sat_flag must be 0 or 1, got {other}"))),
                },
            })
        })
        .collect()
}

fn predicted_mu(table: &ClusterFreeEnergyTable, k_nu: ClusterSize, nu: f64) -> Result<f64> {
    match k_nu {
        ClusterSize::Infinite => Ok(table.f_inf),
        ClusterSize::Finite(k) => {
            let f = table
                .f(k)
                .ok_or_else(|| Error::Invalid(format!("table at beta = {} lacks f_{k}", table.beta)))?;
            let kf = k as f64;
            Ok(f - nu / kf - kf.ln() / table.beta)
        }
    }
}

fn sweep_point(provider: &dyn TableProvider, nu: f64, beta: f64, k_nu: ClusterSize) -> Result<std::result::Result<SahaPoint, String>> {
    let Some(table) = provider.table(beta) else {
        return Ok(Err(format!("provider {} has no table at beta = {beta}; point skipped", provider.label())));
    };
    let rho = (-beta * nu).exp();
    let (solution, note) = match solve(&table, rho) {
        Ok(s) => (s, None),
        Err(Error::AmbiguousPhase { saturated, unsaturated, .. }) => {
            let s = saturated.or(unsaturated).ok_or_else(|| Error::Numerical("no phase branch available".into()))?;
            (*s, Some(format!("beta = {beta}: rho inside the saturation interval; saturated branch used")))
        }
        Err(e) => return Err(e),
    };
    let mu_pred = predicted_mu(&table, k_nu, nu)?;
    let (mass_fraction, pressure_deviation) = match k_nu {
        ClusterSize::Finite(k) => (
            k as f64 * solution.rho_k(k) / rho,
            Some((solution.m_ideal * k as f64 / rho - 1.0).abs()),
        ),
        ClusterSize::Infinite => {
            let finite = if solution.saturated { solution.rho_sat } else { rho };
            (finite / rho, None)
        }
    };
    if let Some(n) = note {
        log::warn!("{n}");
    }
    Ok(Ok(SahaPoint {
        nu,
        beta,
        rho,
        dev_mu: solution.mu_ideal - mu_pred,
        solution,
        k_nu,
        mu_pred,
        mass_fraction,
        pressure_deviation,
    }))
}

/// Solves the ideal mixture at `rho = e^{-beta nu}` for each `beta`.
/// `nu` must not be a kink of `mu(nu)`; points the provider lacks are skipped.
pub fn sweep(provider: &dyn TableProvider, gs: &GroundStateTable, nu: f64, betas: &[f64], exec: &Exec) -> Result<SahaSweep> {
    let m = mu_of_nu(gs, nu)?;
    if m.kink {
        let tied: Vec<String> = m.tied.iter().map(|k| k.to_string()).collect();
        return Err(Error::Domain(format!(
            "nu = {nu} is a kink of mu(nu) (sizes {} tie); choose nu off the kink set",
            tied.join(", ")
        )));
    }
    if betas.iter().any(|&b| !(b > 0.0)) {
        return Err(Error::Invalid("all beta values must be positive".into()));
    }
    let mut order: Vec<f64> = betas.to_vec();
    order.sort_by(f64::total_cmp);
    let results = exec.map(order.len(), |i| sweep_point(provider, nu, order[i], m.k_nu));
    let mut out = SahaSweep::default();
    for r in results {
        match r? {
            Ok(p) => out.points.push(p),
            Err(note) => {
                log::warn!("{note}");
                out.notes.push(note);
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RateFit {
    /// Fitted decay rate: `log|dev| ≈ intercept - rate * beta`.
    pub rate: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub points_used: usize,
    pub notes: Vec<String>,
}

/// Least-squares fit of `log|deviation|` against `beta`. Zero deviations are
/// dropped with a note.
pub fn rate_fit(series: &[(f64, f64)]) -> Result<RateFit> {
    let mut notes = Vec::new();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for &(beta, dev) in series {
        if dev == 0.0 {
            notes.push(format!("deviation at beta = {beta} is zero (converged); point dropped"));
            continue;
        }
        if !dev.is_finite() {
            return Err(Error::Invalid(format!("deviation at beta = {beta} is not finite")));
        }
        xs.push(beta);
        ys.push(dev.abs().ln());
    }
    if xs.len() < 3 {
        notes.push(format!("only {} usable points; fit is exact or underdetermined", xs.len()));
    }
    let fit = linear_fit(&xs, &ys).ok_or_else(|| {
        Error::Invalid(format!("rate fit needs at least two distinct beta values with nonzero deviation, got {}", xs.len()))
    })?;
    for n in &notes {
        log::info!("{n}");
    }
    Ok(RateFit {
        rate: -fit.slope,
        intercept: fit.intercept,
        r_squared: fit.r_squared,
        points_used: xs.len(),
        notes,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SatSahaRow {
    pub beta: f64,
    pub rho_sat: f64,
    /// `-(1/beta) log rho_sat`.
    pub estimate: f64,
}

/// `beta * estimate = nu_star * beta + a log beta + b`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Envelope {
    pub nu_star: f64,
    pub a: f64,
    pub b: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SatSahaReport {
    pub rows: Vec<SatSahaRow>,
    /// `(beta, reason)` for excluded points.
    pub excluded: Vec<(f64, String)>,
    /// Three-parameter envelope fit; needs three points.
    pub envelope: Option<Envelope>,
    /// Dimension-one sources are outside the theorem's hypotheses.
    pub out_of_theorem: bool,
}

impl SatSahaReport {
    /// `|estimate - nu_star|` at each retained `beta`.
    pub fn deviations(&self, nu_star: f64) -> Vec<(f64, f64)> {
        self.rows.iter().map(|r| (r.beta, (r.estimate - nu_star).abs())).collect()
    }
}

fn solve3(m: [[f64; 3]; 3], v: [f64; 3]) -> Option<[f64; 3]> {
    let det = |m: &[[f64; 3]; 3]| {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let d = det(&m);
    if d.abs() < 1e-300 {
        return None;
    }
    let mut out = [0.0; 3];
    for (c, o) in out.iter_mut().enumerate() {
        let mut mc = m;
        for r in 0..3 {
            mc[r][c] = v[r];
        }
        *o = det(&mc) / d;
    }
    Some(out)
}

/// `-(1/beta) log rho_sat(beta)` on a beta grid with an `a log beta + b`
/// envelope fit.
pub fn satsaha_check(provider: &dyn TableProvider, betas: &[f64], dim: usize) -> Result<SatSahaReport> {
    let mut rows = Vec::new();
    let mut excluded = Vec::new();
    let mut order = betas.to_vec();
    order.sort_by(f64::total_cmp);
    for &beta in &order {
        let Some(table) = provider.table(beta) else {
            excluded.push((beta, format!("provider {} has no table", provider.label())));
            continue;
        };
        if table.tail == TailModel::None {
            log::warn!("beta = {beta}: no tail model; saturation density uses the table only");
        }
        let rho_sat = saturation_density(&table).value;
        if !rho_sat.is_finite() {
            excluded.push((beta, "rho_sat is infinite".into()));
            continue;
        }
        rows.push(SatSahaRow {
            beta,
            rho_sat,
            estimate: -rho_sat.ln() / beta,
        });
    }
    let envelope = (rows.len() >= 3)
        .then(|| {
            // normal equations for y = nu* beta + a log beta + b
            let mut m = [[0.0; 3]; 3];
            let mut v = [0.0; 3];
            for r in &rows {
                let basis = [r.beta, r.beta.ln(), 1.0];
                let y = r.beta * r.estimate;
                for i in 0..3 {
                    v[i] += basis[i] * y;
                    for j in 0..3 {
                        m[i][j] += basis[i] * basis[j];
                    }
                }
            }
            solve3(m, v).map(|s| Envelope { nu_star: s[0], a: s[1], b: s[2] })
        })
        .flatten();
    Ok(SatSahaReport {
        rows,
        excluded,
        envelope,
        out_of_theorem: dim < 2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// `E_k = -(k - 1)` in one dimension: `e_inf = -1`, `nu* = 1`.
    fn linear_toy(kmax: usize) -> GroundStateTable {
        let e: Vec<f64> = (1..=kmax).map(|k| -((k - 1) as f64)).collect();
        GroundStateTable::from_energies(1, &e).unwrap().with_e_inf(-1.0, 1.0)
    }

    /// `f_k = 0`, `f_inf = -1`: `rho_sat = e^{-beta} / (1 - e^{-beta})^2`.
    fn geometric_toy() -> (FixedTable, GroundStateTable) {
        let t = ClusterFreeEnergyTable::new(1.0, vec![0.0; 8], -1.0, TailModel::SurfaceLaw { c: 1.0, exponent: 1.0 }).unwrap();
        let gs = GroundStateTable::from_energies(1, &[0.0; 8]).unwrap().with_e_inf(-1.0, 1.0);
        (FixedTable(t), gs)
    }

    #[test]
    fn rate_fit_examples() {
        let s: Vec<(f64, f64)> = [4.0, 8.0, 16.0].iter().map(|&b: &f64| (b, (-0.25 * b).exp())).collect();
        let f = rate_fit(&s).unwrap();
        assert!((f.rate - 0.25).abs() < 1e-12);
        assert!((f.r_squared - 1.0).abs() < 1e-12);

        let noisy = vec![(2.0, 0.3), (4.0, 0.0), (6.0, 0.02), (8.0, 0.004), (10.0, 0.0009)];
        let f = rate_fit(&noisy).unwrap();
        assert_eq!(f.points_used, 4);
        assert!(f.notes.iter().any(|n| n.contains("zero")));
        assert!(f.rate > 0.5);
        assert!(rate_fit(&[(1.0, 0.1)]).is_err());
    }

    #[test]
    fn linear_toy_above_threshold() {
        let gs = linear_toy(30);
        let provider = ZeroTemperature::new(&gs).unwrap();
        let sw = sweep(&provider, &gs, 2.0, &[4.0, 8.0, 16.0], &Exec::default()).unwrap();
        assert_eq!(sw.points.len(), 3);
        let devs: Vec<f64> = sw.points.iter().map(|p| p.decay_deviation()).collect();
        assert!(devs[0] > devs[1] && devs[1] > devs[2]);
        for p in &sw.points {
            assert_eq!(p.k_nu, ClusterSize::Finite(1));
            assert!(!p.solution.saturated);
            assert!(p.solution.mu_ideal < -1.0);
            assert!(p.mass_fraction > 0.0 && p.mass_fraction <= 1.0);
            assert_eq!(p.rho, (-2.0 * p.beta).exp());
        }
        let fit = rate_fit(&sw.deviations()).unwrap();
        assert!(fit.rate >= 0.2, "rate {}", fit.rate);
        let dmu: Vec<f64> = sw.points.iter().map(|p| p.dev_mu.abs()).collect();
        assert!(dmu[0] > dmu[1] && dmu[1] > dmu[2]);
    }

    #[test]
    fn geometric_toy_below_threshold() {
        let (provider, gs) = geometric_toy();
        let sw = sweep(&provider, &gs, 0.5, &[4.0, 8.0, 16.0], &Exec::default()).unwrap();
        for p in &sw.points {
            assert_eq!(p.k_nu, ClusterSize::Infinite);
            assert!(p.solution.saturated);
            assert_eq!(p.solution.mu_ideal, -1.0);
            let q = (-p.beta).exp();
            assert!((p.mass_fraction - q / (1.0 - q).powi(2) / p.rho).abs() < 1e-12);
        }
        let devs: Vec<f64> = sw.points.iter().map(|p| p.decay_deviation()).collect();
        assert!(devs[0] > devs[1] && devs[1] > devs[2]);
        assert!(rate_fit(&sw.deviations()).unwrap().rate >= 0.45);
    }

    #[test]
    fn satsaha_recovers_threshold() {
        let (provider, _) = geometric_toy();
        let r = satsaha_check(&provider, &[4.0, 8.0, 16.0], 1).unwrap();
        assert!(r.out_of_theorem);
        let last = r.rows.last().unwrap();
        assert!((last.estimate - 1.0).abs() <= 2.0 * 16f64.ln() / 16.0);
        assert!((r.envelope.unwrap().nu_star - 1.0).abs() < 2e-2);

        // lowering f_inf by s moves the threshold to 1 + s
        let s = 0.3;
        let shifted = FixedTable(ClusterFreeEnergyTable::new(1.0, vec![0.0; 8], -1.0 - s, TailModel::SurfaceLaw { c: 1.0 + s, exponent: 1.0 }).unwrap());
        let r = satsaha_check(&shifted, &[4.0, 8.0, 16.0, 32.0], 2).unwrap();
        assert!((r.envelope.unwrap().nu_star - (1.0 + s)).abs() < 2e-2);

        let single = satsaha_check(&provider, &[5.0], 1).unwrap();
        assert_eq!(single.rows.len(), 1);
        assert!(single.envelope.is_none());

        let gs = linear_toy(10);
        let infinite = satsaha_check(&ZeroTemperature::new(&gs).unwrap(), &[4.0], 1).unwrap();
        assert!(infinite.rows.is_empty() && infinite.excluded.len() == 1);
    }

    #[test]
    fn single_beta_and_missing_tables() {
        let gs = linear_toy(10);
        let provider = ZeroTemperature::new(&gs).unwrap();
        let sw = sweep(&provider, &gs, 2.0, &[5.0], &Exec::default()).unwrap();
        assert_eq!(sw.points.len(), 1);
        assert!(rate_fit(&sw.deviations()).is_err());

        let set = TableSet::new(vec![provider.table(4.0).unwrap()]);
        let sw = sweep(&set, &gs, 2.0, &[4.0, 8.0], &Exec::default()).unwrap();
        assert_eq!(sw.points.len(), 1);
        assert_eq!(sw.notes.len(), 1);
    }

    #[test]
    fn kinks_are_rejected() {
        let gs = linear_toy(10);
        let provider = ZeroTemperature::new(&gs).unwrap();
        // nu = 1: every size ties with the infinite branch
        assert!(matches!(sweep(&provider, &gs, 1.0, &[4.0], &Exec::default()), Err(Error::Domain(_))));
    }

    #[test]
    fn csv_round_trip_and_worker_independence() {
        let gs = linear_toy(20);
        let provider = ZeroTemperature::new(&gs).unwrap();
        let a = sweep(&provider, &gs, 2.0, &[16.0, 4.0, 8.0], &Exec::new(1)).unwrap().to_csv();
        let b = sweep(&provider, &gs, 2.0, &[4.0, 8.0, 16.0], &Exec::new(3)).unwrap().to_csv();
        assert_eq!(a, b);
        let rows = read_sweep_csv(&a, "mem").unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[0].beta, 4.0);
        assert!(!rows[2].saturated);
    }
}
