//! One function per subcommand. Each reads what it needs from the config,
//! calls into the library and writes its artifacts into the output directory.

use std::path::{Path, PathBuf};

use cluster_gas::clustering::{check_radius, ClusterSizeDistribution};
use cluster_gas::groundstate::{build_groundstate_table, einf_and_nustar, GroundStateTable, OptimizerBudget, TailFitSpec};
use cluster_gas::ideal::{comparison_report, solve, IdealSolution};
use cluster_gas::io::{fmt_f64, to_json_pretty, write_text, CsvWriter};
use cluster_gas::partfun::{build_table, lowtemp_check, ClusterFreeEnergyTable, SamplingPlan};
use cluster_gas::potential::{verify_assumption_v, GridSpec, PairPotential};
use cluster_gas::saha::{rate_fit, satsaha_check, sweep, TableProvider, TableSet, ZeroTemperature};
use cluster_gas::sampler::{
    canonical_chains, partition_exact, partition_mcmc, CanonicalRun, PartitionMcmcOptions, PartitionModel, MAX_EXACT_N,
};
use cluster_gas::stats::Exec;
use cluster_gas::{Error, Result};
use serde::Serialize;

use crate::config::Config;

pub const COMMANDS: [&str; 8] = [
    "potential-check",
    "groundstate",
    "partfun",
    "ideal-solve",
    "ideal-sweep-saha",
    "sim-canonical",
    "sim-partition",
    "compare",
];

/// Shared state of one command invocation.
pub struct Run<'a> {
    pub cfg: &'a Config,
    pub exec: Exec,
    pub out_dir: PathBuf,
    /// Output file names, relative to `out_dir`, in write order.
    pub outputs: Vec<String>,
    /// Seed actually used, for the manifest.
    pub seed: Option<u64>,
}

impl<'a> Run<'a> {
    pub fn new(cfg: &'a Config, exec: Exec) -> Result<Self> {
        let out_dir = cfg.resolve(cfg.str_or("output_dir", "out")?);
        Ok(Run {
            cfg,
            exec,
            out_dir,
            outputs: Vec::new(),
            seed: None,
        })
    }

    fn target(&mut self, name: &str) -> Result<PathBuf> {
        std::fs::create_dir_all(&self.out_dir).map_err(|e| Error::Io {
            path: self.out_dir.display().to_string(),
            source: e,
        })?;
        self.outputs.push(name.to_string());
        Ok(self.out_dir.join(name))
    }

    fn write(&mut self, name: &str, text: &str) -> Result<()> {
        let path = self.target(name)?;
        write_text(&path, text)
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let text = to_json_pretty(value)?;
        self.write(name, &text)
    }

    fn seed(&mut self) -> Result<u64> {
        let s = self
            .cfg
            .u64_opt("seed")?
            .ok_or_else(|| Error::Invalid("config key 'seed' is required for sampling commands".into()))?;
        self.seed = Some(s);
        Ok(s)
    }

    pub fn dispatch(&mut self, command: &str) -> Result<()> {
        check_density_choice(self.cfg)?;
        match command {
            "potential-check" => potential_check(self),
            "groundstate" => groundstate(self),
            "partfun" => partfun(self),
            "ideal-solve" => ideal_solve(self),
            "ideal-sweep-saha" => ideal_sweep_saha(self),
            "sim-canonical" => sim_canonical(self),
            "sim-partition" => sim_partition(self),
            "compare" => compare(self),
            other => Err(Error::Invalid(format!("unknown command '{other}'"))),
        }
    }
}

/// At most one of `rho` and `nu` may be given.
fn check_density_choice(cfg: &Config) -> Result<()> {
    if cfg.has("rho") && cfg.has("nu") {
        return Err(Error::Invalid("give exactly one of 'rho' and 'nu', not both".into()));
    }
    Ok(())
}

fn dim(cfg: &Config) -> Result<usize> {
    let d = cfg.u64("dim")? as usize;
    if !(1..=3).contains(&d) {
        return Err(Error::Invalid(format!("config key 'dim' must be 1, 2 or 3, got {d}")));
    }
    Ok(d)
}

fn positive(cfg: &Config, key: &str) -> Result<f64> {
    let x = cfg.f64(key)?;
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::Invalid(format!("config key '{key}' must be positive, got {x}")));
    }
    Ok(x)
}

pub fn potential(cfg: &Config) -> Result<PairPotential> {
    let kind = cfg.str_or("potential.kind", "hat_well")?;
    let params = cfg.numeric_table("potential.params")?;
    let allowed: &[&str] = match kind {
        "hat_well" => &["hard_core", "range", "slope"],
        "ts_lennard_jones" => &["sigma", "epsilon", "cutoff"],
        "tabulated" => &["hard_core"],
        other => {
            return Err(Error::Invalid(format!(
                "potential.kind must be hat_well, ts_lennard_jones or tabulated, got '{other}'"
            )))
        }
    };
    if let Some((k, _)) = params.iter().find(|(k, _)| !allowed.contains(&k.as_str())) {
        return Err(Error::Invalid(format!(
            "unknown parameter potential.params.{k} for {kind} (expected one of {})",
            allowed.join(", ")
        )));
    }
    let get = |name: &str, default: f64| params.iter().find(|(k, _)| k == name).map_or(default, |p| p.1);
    match kind {
        "hat_well" => PairPotential::hat_well(get("hard_core", 0.5), get("range", 1.0), get("slope", 4.0)),
        "ts_lennard_jones" => {
            PairPotential::truncated_shifted_lj(get("sigma", 1.0), get("epsilon", 1.0), get("cutoff", 2.5))
        }
        _ => PairPotential::tabulated_from_file(get("hard_core", 0.0), &cfg.path("potential.table_path")?),
    }
}

/// Connectivity radius, which must exceed the interaction range.
fn radius(cfg: &Config, pot: &PairPotential) -> Result<f64> {
    let r = positive(cfg, "radius")?;
    if !check_radius(pot, r) {
        return Err(Error::Invalid(format!(
            "connectivity radius R = {r} must exceed the interaction range b = {}",
            pot.support()
        )));
    }
    Ok(r)
}

fn potential_check(run: &mut Run) -> Result<()> {
    let cfg = run.cfg;
    let pot = potential(cfg)?;
    let defaults = GridSpec::default();
    let grid = GridSpec {
        resolution: cfg.f64_or("check.resolution", defaults.resolution)?,
        r_max_factor: cfg.f64_or("check.r_max_factor", defaults.r_max_factor)?,
        probe_dim: match cfg.u64_opt("check.probe_dim")? {
            Some(d) => d as usize,
            None if cfg.has("dim") => dim(cfg)?,
            None => defaults.probe_dim,
        },
        probe_sizes: cfg.usize_list_opt("check.probe_sizes")?.unwrap_or(defaults.probe_sizes),
        probes_per_scale: cfg.count_or("check.probes_per_scale", defaults.probes_per_scale as u64)? as usize,
        seed: run.seed()?,
    };
    let report = verify_assumption_v(&pot, &grid)?;
    run.write_json("assumption_report.json", &report)?;
    if !report.all_pass() {
        return Err(Error::Invalid(format!(
            "potential '{}' fails the interaction assumptions; see assumption_report.json",
            pot.name()
        )));
    }
    Ok(())
}

fn tail_fit_spec(cfg: &Config, prefix: &str) -> Result<TailFitSpec> {
    let defaults = TailFitSpec::default();
    Ok(TailFitSpec {
        window: cfg.u64_opt(&format!("{prefix}.fit_window"))?.map(|w| w as usize),
        residual_threshold: cfg.f64_or(&format!("{prefix}.residual_threshold"), defaults.residual_threshold)?,
    })
}

fn groundstate(run: &mut Run) -> Result<()> {
    let cfg = run.cfg;
    let pot = potential(cfg)?;
    let d = dim(cfg)?;
    let k_max = cfg.count_or("groundstate.k_max", 8)? as usize;
    let defaults = OptimizerBudget::default();
    let budget = OptimizerBudget {
        restarts: cfg.count_or("groundstate.restarts", defaults.restarts as u64)? as usize,
        hops: cfg.u64_or("groundstate.hops", defaults.hops as u64)? as usize,
        max_iter: cfg.count_or("groundstate.max_iter", defaults.max_iter as u64)? as usize,
        tolerance: cfg.f64_or("groundstate.tolerance", defaults.tolerance)?,
    };
    let seed = run.seed()?;
    let mut table = build_groundstate_table(&pot, k_max, d, &budget, seed, &run.exec)?;
    if k_max >= 4 {
        let spec = tail_fit_spec(cfg, "groundstate")?;
        let est = einf_and_nustar(&table, &spec)?;
        table = table.fitted(&spec)?;
        run.write_json("einf.json", &est)?;
    } else {
        log::warn!("k_max = {k_max} < 4: no e_inf fit");
    }
    run.write("groundstate.csv", &table.to_csv())?;
    std::fs::create_dir_all(&run.out_dir).map_err(|e| Error::Io {
        path: run.out_dir.display().to_string(),
        source: e,
    })?;
    table.write_witnesses(&run.out_dir)?;
    for e in table.entries() {
        if e.witness.is_some() {
            run.outputs.push(format!("gs_k{}.xyz", e.k));
        }
    }
    Ok(())
}

/// Ground-state table from `<prefix>.groundstate_path` or from inline
/// `<prefix>.energies` (with optional `e_inf` / `surface_coeff`).
fn groundstate_input(cfg: &Config, prefix: &str) -> Result<GroundStateTable> {
    let path_key = format!("{prefix}.groundstate_path");
    if cfg.has(&path_key) {
        return GroundStateTable::read_csv(&cfg.path(&path_key)?);
    }
    let energies = cfg
        .f64_list_opt(&format!("{prefix}.energies"))?
        .ok_or_else(|| Error::Invalid(format!("give '{prefix}.groundstate_path' or '{prefix}.energies'")))?;
    let table = GroundStateTable::from_energies(dim(cfg)?, &energies)?;
    match cfg.f64_opt(&format!("{prefix}.e_inf"))? {
        Some(e_inf) => {
            let a = cfg.f64_or(&format!("{prefix}.surface_coeff"), 0.0)?;
            Ok(table.with_e_inf(e_inf, a))
        }
        None if table.k_max() >= 4 => table.fitted(&tail_fit_spec(cfg, prefix)?),
        None => Ok(table),
    }
}

fn partfun(run: &mut Run) -> Result<()> {
    let cfg = run.cfg;
    let pot = potential(cfg)?;
    let d = dim(cfg)?;
    let beta = positive(cfg, "beta")?;
    let r = radius(cfg, &pot)?;
    let k_max = cfg.count_or("partfun.k_max", 6)? as usize;
    if k_max > 8 {
        log::warn!("k_max = {k_max}: direct Monte Carlo beyond k = 8 is slow and noisy");
    }
    let plan = SamplingPlan {
        samples: cfg.count_or("partfun.samples", 100_000)?,
        seed: run.seed()?,
    };
    let table = build_table(&pot, beta, r, k_max, d, &plan, &run.exec)?;
    run.write("partfun.csv", &table.to_csv())?;
    if cfg.has("partfun.groundstate_path") || cfg.has("partfun.energies") {
        let gs = groundstate_input(cfg, "partfun")?;
        let report = lowtemp_check(&table, &gs, beta)?;
        run.write_json("lowtemp.json", &report)?;
    }
    Ok(())
}

fn read_table(cfg: &Config, key: &str) -> Result<ClusterFreeEnergyTable> {
    ClusterFreeEnergyTable::read_csv(&cfg.path(key)?)
}

fn ideal_solve(run: &mut Run) -> Result<()> {
    let cfg = run.cfg;
    let table = read_table(cfg, "ideal.table_path")?;
    if let Some(beta) = cfg.f64_opt("beta")? {
        if beta != table.beta {
            return Err(Error::Invalid(format!(
                "config beta = {beta} disagrees with the table's beta = {}",
                table.beta
            )));
        }
    }
    let rho = positive(cfg, "rho")?;
    match solve(&table, rho) {
        Ok(sol) => run.write("ideal.json", &sol.to_json()),
        Err(Error::AmbiguousPhase {
            rho,
            lo,
            hi,
            unsaturated,
            saturated,
        }) => {
            if let Some(s) = &unsaturated {
                run.write("ideal_unsaturated.json", &s.to_json())?;
            }
            if let Some(s) = &saturated {
                run.write("ideal_saturated.json", &s.to_json())?;
            }
            Err(Error::AmbiguousPhase {
                rho,
                lo,
                hi,
                unsaturated,
                saturated,
            })
        }
        Err(e) => Err(e),
    }
}

fn ideal_sweep_saha(run: &mut Run) -> Result<()> {
    let cfg = run.cfg;
    let nu = cfg.f64("nu")?;
    let betas = cfg.f64_list_opt("saha.betas")?.unwrap_or_else(|| vec![4.0, 8.0, 16.0]);
    if betas.is_empty() {
        return Err(Error::Invalid("config key 'saha.betas' must not be empty".into()));
    }
    let gs = groundstate_input(cfg, "saha")?;
    let provider: Box<dyn TableProvider> = match cfg.str_or("saha.source", "synthetic_exact")? {
        "synthetic_exact" => Box::new(ZeroTemperature::new(&gs)?),
        "tables" => {
            let paths = cfg
                .str_list_opt("saha.table_paths")?
                .ok_or_else(|| Error::Invalid("saha.source = \"tables\" needs 'saha.table_paths'".into()))?;
            let tables = paths
                .iter()
                .map(|p| ClusterFreeEnergyTable::read_csv(&cfg.resolve(p)))
                .collect::<Result<Vec<_>>>()?;
            Box::new(TableSet::new(tables))
        }
        other => {
            return Err(Error::Invalid(format!(
                "saha.source must be synthetic_exact or tables, got '{other}'"
            )))
        }
    };
    let result = sweep(provider.as_ref(), &gs, nu, &betas, &run.exec)?;
    run.write("saha_sweep.csv", &result.to_csv())?;
    match rate_fit(&result.deviations()) {
        Ok(fit) => run.write_json("rate_fit.json", &fit)?,
        Err(e) => log::warn!("no rate fit: {e}"),
    }
    if cfg.bool_or("saha.saturation_check", false)? {
        let report = satsaha_check(provider.as_ref(), &betas, gs.dim)?;
        run.write_json("saturation_check.json", &report)?;
    }
    Ok(())
}

fn sim_canonical(run: &mut Run) -> Result<()> {
    let cfg = run.cfg;
    let pot = potential(cfg)?;
    let d = dim(cfg)?;
    let beta = positive(cfg, "beta")?;
    let r = radius(cfg, &pot)?;
    let rho = positive(cfg, "rho")?;
    let n = cfg.count("canonical.n")? as usize;
    let sweeps = cfg.count_or("canonical.sweeps", 1000)?;
    let chains = cfg.count_or("canonical.chains", 1)? as usize;
    let seed = run.seed()?;
    let mut spec = CanonicalRun::at_density(n, rho, d, beta, r, sweeps, seed)?;
    if let Some(b) = cfg.u64_opt("canonical.burn_in_sweeps")? {
        spec.burn_in = b * n as u64;
    }
    if let Some(t) = cfg.u64_opt("canonical.thinning")? {
        spec.thinning = t;
    }
    let result = canonical_chains(&pot, &spec, chains, &run.exec)?;
    run.write("empirical.csv", &result.distribution.to_csv())?;
    run.write("diagnostics.json", &result.diagnostics.to_json())?;
    let mut w = CsvWriter::new(&["k", "mean_count", "std_error"]);
    for (&k, &(m, se)) in &result.mean_counts {
        w.row(&[k.to_string(), fmt_f64(m), fmt_f64(se)]);
    }
    run.write("canonical_counts.csv", &w.finish())
}

fn sim_partition(run: &mut Run) -> Result<()> {
    let cfg = run.cfg;
    let n = cfg.count("partition.n")? as usize;
    let volume = match (cfg.f64_opt("partition.volume")?, cfg.f64_opt("rho")?) {
        (Some(v), None) => v,
        (None, Some(rho)) => n as f64 / rho,
        (Some(_), Some(_)) => {
            return Err(Error::Invalid("give 'partition.volume' or 'rho', not both".into()));
        }
        (None, None) => return Err(Error::Invalid("give 'partition.volume' or 'rho'".into())),
    };
    if !(volume > 0.0) || !volume.is_finite() {
        return Err(Error::Invalid(format!("volume must be positive, got {volume}")));
    }
    let model_kind = cfg.str_or("partition.model", "ideal")?;
    let model = match model_kind {
        "ideal" => PartitionModel::ideal_from_table(&read_table(cfg, "partition.table_path")?, volume, n)?,
        "ckms" => {
            let gs = groundstate_input(cfg, "partition")?;
            PartitionModel::ckms_from_groundstates(positive(cfg, "beta")?, &gs, volume)?
        }
        other => {
            return Err(Error::Invalid(format!("partition.model must be ideal or ckms, got '{other}'")));
        }
    };
    let steps = cfg.count_or("partition.steps", 100_000)?;
    let opts = PartitionMcmcOptions {
        steps,
        burn_in: cfg.u64_or("partition.burn_in", steps / 10)?,
        seed: run.seed()?,
        record_flows: false,
    };
    let result = partition_mcmc(&model, n, &opts)?;
    let exact = if n <= MAX_EXACT_N {
        Some(partition_exact(&model, n)?.mean_counts())
    } else {
        None
    };

    let mut w = CsvWriter::new(&["k", "mean_count", "std_error", "exact_mean"]);
    for k in 1..=n {
        let ex = exact.as_ref().map_or(f64::NAN, |m| m[k]);
        w.row(&[k.to_string(), fmt_f64(result.mean_counts[k]), fmt_f64(result.std_errors[k]), fmt_f64(ex)]);
    }
    run.write("partition_counts.csv", &w.finish())?;

    let rho_k = (1..=n)
        .filter(|&k| result.mean_counts[k] > 0.0)
        .map(|k| (k, result.mean_counts[k] / volume))
        .collect();
    let mut dist = ClusterSizeDistribution::new(rho_k, n as f64 / volume)?;
    dist.volume = Some(volume);
    dist.radius = cfg.f64_opt("radius")?;
    run.write("empirical.csv", &dist.to_csv())?;

    #[derive(Serialize)]
    struct Diagnostics<'a> {
        model: &'a str,
        n: usize,
        volume: f64,
        steps: u64,
        burn_in: u64,
        seed: u64,
        acceptance: f64,
    }
    run.write_json(
        "partition_diagnostics.json",
        &Diagnostics {
            model: model_kind,
            n,
            volume,
            steps: opts.steps,
            burn_in: opts.burn_in,
            seed: opts.seed,
            acceptance: result.acceptance,
        },
    )
}

/// An empirical distribution from its CSV, or the minimiser of an ideal
/// solution JSON (so an ideal result can be compared with itself or another).
fn read_distribution(path: &Path) -> Result<ClusterSizeDistribution> {
    if path.extension().is_some_and(|e| e == "json") {
        IdealSolution::read_json(path)?.distribution()
    } else {
        ClusterSizeDistribution::read_csv(path)
    }
}

fn compare(run: &mut Run) -> Result<()> {
    let cfg = run.cfg;
    let empirical = read_distribution(&cfg.path("compare.empirical_path")?)?;
    let ideal = IdealSolution::read_json(&cfg.path("compare.ideal_path")?)?;
    let metrics = comparison_report(&empirical, &ideal);
    run.write_json("comparison.json", &metrics)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(text: &str) -> Config {
        Config::parse(text, "test", PathBuf::from(".")).unwrap()
    }

    #[test]
    fn potential_kinds_and_parameters() {
        let hat = potential(&cfg("")).unwrap();
        assert_eq!(hat.name(), "hat_well");
        assert_eq!(hat.support(), 1.0);
        let lj = potential(&cfg("[potential]\nkind = \"ts_lennard_jones\"\nparams = { cutoff = 3.0 }\n")).unwrap();
        assert_eq!(lj.support(), 3.0);
        assert!(potential(&cfg("[potential]\nkind = \"morse\"\n")).is_err());
        assert!(potential(&cfg("[potential]\nparams = { sigma = 1.0 }\n")).is_err());
    }

    #[test]
    fn radius_must_exceed_range() {
        let pot = PairPotential::standard_hat_well();
        assert!(radius(&cfg("radius = 1.1"), &pot).is_ok());
        assert!(radius(&cfg("radius = 0.9"), &pot).is_err());
    }

    #[test]
    fn rho_and_nu_are_exclusive() {
        assert!(check_density_choice(&cfg("rho = 0.1\nnu = 2.0\n")).is_err());
        assert!(check_density_choice(&cfg("rho = 0.1\n")).is_ok());
    }

    #[test]
    fn inline_groundstates_with_given_tail() {
        let gs = groundstate_input(&cfg("dim = 1\n[saha]\nenergies = [0, -1, -2]\ne_inf = -1.0\nsurface_coeff = 1.0\n"), "saha")
            .unwrap();
        assert_eq!(gs.k_max(), 3);
        assert_eq!(gs.e_inf(), Some(-1.0));
    }
}
