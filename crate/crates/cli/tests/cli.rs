//! End-to-end runs of the `cluster-gas` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cluster_gas::clustering::ClusterSizeDistribution;
use cluster_gas::groundstate::GroundStateTable;
use cluster_gas::ideal::IdealSolution;
use cluster_gas::partfun::ClusterFreeEnergyTable;
use cluster_gas::saha::read_sweep_csv;
use serde_json::Value;
use tempfile::TempDir;

const TOY_TABLE: &str = "k,f_k,stderr_k\n1,0,0\n2,-0.5,0\n# f_inf=-2 f_inf_residual=0 beta=1 R=nan tail=none\n";

struct Workspace {
    dir: TempDir,
}

impl Workspace {
    fn new() -> Self {
        let ws = Workspace {
            dir: tempfile::tempdir().expect("temp dir"),
        };
        ws.file("toy.csv", TOY_TABLE);
        ws
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn file(&self, name: &str, text: &str) -> PathBuf {
        let p = self.path(name);
        fs::write(&p, text).expect("write file");
        p
    }

    fn run(&self, command: &str, config: &str, extra: &[&str]) -> Output {
        self.run_env(command, config, extra, None)
    }

    fn run_env(&self, command: &str, config: &str, extra: &[&str], workers_env: Option<&str>) -> Output {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_cluster-gas"));
        cmd.arg(command).arg(self.path(config)).args(extra);
        cmd.env_remove("CLUSTER_GAS_WORKERS");
        if let Some(w) = workers_env {
            cmd.env("CLUSTER_GAS_WORKERS", w);
        }
        cmd.output().expect("run binary")
    }

    fn read(&self, rel: &str) -> String {
        fs::read_to_string(self.path(rel)).unwrap_or_else(|e| panic!("{rel}: {e}"))
    }

    fn json(&self, rel: &str) -> Value {
        serde_json::from_str(&self.read(rel)).expect("valid JSON")
    }
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn assert_ok(out: &Output) {
    assert_eq!(code(out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

fn toy_root() -> f64 {
    // rho = z + 2 e z^2 at rho = 0.1.
    let e = 1f64.exp();
    ((-1.0 + (1.0 + 0.8 * e).sqrt()) / (4.0 * e)).ln()
}

#[test]
fn ideal_solve_reproduces_the_toy_root() {
    let ws = Workspace::new();
    ws.file("c.toml", "rho = 0.1\noutput_dir = \"out\"\n[ideal]\ntable_path = \"toy.csv\"\n");
    assert_ok(&ws.run("ideal-solve", "c.toml", &[]));
    let sol = IdealSolution::read_json(&ws.path("out/ideal.json")).unwrap();
    assert!((sol.mu_ideal - toy_root()).abs() <= 1e-9, "mu = {}", sol.mu_ideal);
    assert!((sol.mu_ideal + 2.6325173718).abs() <= 1e-9);
    assert!(!sol.saturated);

    let v = ws.json("out/ideal.json");
    for key in ["beta", "rho", "mu_ideal", "saturated", "rho_sat", "m_ideal", "f_ideal", "residual", "minimiser", "tail_bound"] {
        assert!(v.get(key).is_some(), "missing key {key}");
    }
    let m = ws.json("out/manifest.json");
    assert_eq!(m["command"], "ideal-solve");
    assert_eq!(m["status"], "ok");
    assert_eq!(m["config_hash"].as_str().unwrap().len(), 64);
    assert_eq!(m["outputs"][0], "ideal.json");
    assert!(m["versions"]["cluster_gas"].is_string());
}

#[test]
fn compare_of_identical_inputs_is_zero() {
    let ws = Workspace::new();
    ws.file("solve.toml", "rho = 0.1\noutput_dir = \"out\"\n[ideal]\ntable_path = \"toy.csv\"\n");
    assert_ok(&ws.run("ideal-solve", "solve.toml", &[]));
    ws.file(
        "cmp.toml",
        "output_dir = \"cmp\"\n[compare]\nempirical_path = \"out/ideal.json\"\nideal_path = \"out/ideal.json\"\n",
    );
    assert_ok(&ws.run("compare", "cmp.toml", &[]));
    let v = ws.json("cmp/comparison.json");
    for key in ["mass_ratio_deviation", "half_entropy", "total_variation", "pinsker_slack"] {
        assert_eq!(v[key].as_f64(), Some(0.0), "{key} = {}", v[key]);
    }
    assert_eq!(v["absolutely_continuous"], true);

    // The same minimiser written as an empirical CSV.
    let sol = IdealSolution::read_json(&ws.path("out/ideal.json")).unwrap();
    sol.distribution().unwrap().write_csv(&ws.path("emp.csv")).unwrap();
    ws.file(
        "cmp2.toml",
        "output_dir = \"cmp2\"\n[compare]\nempirical_path = \"emp.csv\"\nideal_path = \"out/ideal.json\"\n",
    );
    assert_ok(&ws.run("compare", "cmp2.toml", &[]));
    assert_eq!(ws.read("cmp/comparison.json"), ws.read("cmp2/comparison.json"));
}

const SAHA: &str = "dim = 1\nnu = 2.0\noutput_dir = \"out\"\n[saha]\nsource = \"synthetic_exact\"\nbetas = [4.0, 8.0, 16.0]\n\
energies = [0, -1, -2, -3, -4, -5, -6, -7]\ne_inf = -1.0\nsurface_coeff = 1.0\n";

#[test]
fn saha_sweep_has_a_monotone_deviation_column() {
    let ws = Workspace::new();
    ws.file("s.toml", SAHA);
    assert_ok(&ws.run("ideal-sweep-saha", "s.toml", &[]));
    let text = ws.read("out/saha_sweep.csv");
    assert!(text.starts_with("nu,beta,rho,mu_ideal,mu_pred,dev_mu,m_ideal,mass_frac_knu,sat_flag\n"));
    let rows = read_sweep_csv(&text, "saha_sweep.csv").unwrap();
    assert_eq!(rows.len(), 3);
    let devs: Vec<f64> = rows.iter().map(|r| r.dev_mu.abs()).collect();
    assert!(devs.windows(2).all(|w| w[1] < w[0]), "{devs:?}");
    let fit = ws.json("out/rate_fit.json");
    assert!(fit["rate"].as_f64().unwrap() > 0.2);
}

const PARTITION: &str =
    "seed = 5\noutput_dir = \"out\"\n[partition]\nmodel = \"ideal\"\nn = 10\nvolume = 100.0\ntable_path = \"toy.csv\"\nsteps = 20000\n";

const CANONICAL: &str = "dim = 2\nbeta = 1.0\nradius = 1.1\nrho = 0.05\nseed = 3\noutput_dir = \"out\"\n\
[potential]\nkind = \"hat_well\"\n[canonical]\nn = 20\nsweeps = 200\nchains = 3\n";

const PARTFUN: &str = "dim = 2\nbeta = 1.0\nradius = 1.1\nseed = 11\noutput_dir = \"out\"\n\
[potential]\nkind = \"hat_well\"\n[partfun]\nk_max = 4\nsamples = 4000\n";

fn outputs_of(ws: &Workspace, dir: &str) -> Vec<(String, String)> {
    let m: Value = serde_json::from_str(&ws.read(&format!("{dir}/manifest.json"))).unwrap();
    let mut files: Vec<(String, String)> = m["outputs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|f| {
            let name = f.as_str().unwrap().to_string();
            let body = ws.read(&format!("{dir}/{name}"));
            (name, body)
        })
        .collect();
    files.push(("manifest.json".into(), ws.read(&format!("{dir}/manifest.json"))));
    files
}

#[test]
fn runs_are_byte_identical_across_repeats_and_worker_counts() {
    for (command, config) in [("sim-partition", PARTITION), ("sim-canonical", CANONICAL), ("partfun", PARTFUN)] {
        let ws = Workspace::new();
        ws.file("c.toml", config);
        assert_ok(&ws.run(command, "c.toml", &["--set", "output_dir=\"a\""]));
        assert_ok(&ws.run(command, "c.toml", &["--set", "output_dir=\"b\""]));
        assert_ok(&ws.run(command, "c.toml", &["--set", "output_dir=\"c\"", "--workers", "4"]));
        assert_ok(&ws.run_env(command, "c.toml", &["--set", "output_dir=\"d\""], Some("3")));
        let strip = |files: Vec<(String, String)>| -> Vec<(String, String)> {
            // The output directory is part of the effective configuration.
            files.into_iter().filter(|(n, _)| n != "manifest.json").collect()
        };
        let a = strip(outputs_of(&ws, "a"));
        assert!(!a.is_empty());
        assert_eq!(a, strip(outputs_of(&ws, "b")), "{command}: repeat differs");
        assert_eq!(a, strip(outputs_of(&ws, "c")), "{command}: --workers 4 differs");
        assert_eq!(a, strip(outputs_of(&ws, "d")), "{command}: CLUSTER_GAS_WORKERS=3 differs");
    }
}

#[test]
fn manifests_of_identical_runs_match() {
    let ws = Workspace::new();
    ws.file("c.toml", PARTITION);
    assert_ok(&ws.run("sim-partition", "c.toml", &[]));
    let first = ws.read("out/manifest.json");
    assert_ok(&ws.run("sim-partition", "c.toml", &["--workers", "2"]));
    assert_eq!(first, ws.read("out/manifest.json"));
    let m = ws.json("out/manifest.json");
    assert_eq!(m["seed"], 5);
}

#[test]
fn outputs_round_trip_through_the_library_loaders() {
    let ws = Workspace::new();

    ws.file("p.toml", PARTITION);
    assert_ok(&ws.run("sim-partition", "p.toml", &["--set", "output_dir=\"part\""]));
    let emp = ClusterSizeDistribution::read_csv(&ws.path("part/empirical.csv")).unwrap();
    assert!((emp.rho() - 0.1).abs() < 1e-15);
    assert!((emp.total_mass() - 0.1).abs() < 1e-12);
    assert_eq!(emp.volume, Some(100.0));
    assert_eq!(emp.to_csv(), ws.read("part/empirical.csv"));

    ws.file("c.toml", CANONICAL);
    assert_ok(&ws.run("sim-canonical", "c.toml", &["--set", "output_dir=\"canon\""]));
    let emp = ClusterSizeDistribution::read_csv(&ws.path("canon/empirical.csv")).unwrap();
    assert_eq!(emp.to_csv(), ws.read("canon/empirical.csv"));
    let diag = ws.json("canon/diagnostics.json");
    let keys: Vec<&String> = diag.as_object().unwrap().keys().collect();
    assert_eq!(keys.len(), 5);
    for key in ["acceptance", "steps", "seed", "energy_mean", "energy_var"] {
        assert!(diag.get(key).is_some(), "missing {key}");
    }

    ws.file("f.toml", PARTFUN);
    assert_ok(&ws.run("partfun", "f.toml", &["--set", "output_dir=\"pf\""]));
    let table = ClusterFreeEnergyTable::read_csv(&ws.path("pf/partfun.csv")).unwrap();
    assert_eq!(table.k_max(), 4);
    assert_eq!(table.to_csv(), ws.read("pf/partfun.csv"));

    // The table feeds straight back into the solver and the partition sampler.
    ws.file("s.toml", "rho = 0.02\noutput_dir = \"solve\"\n[ideal]\ntable_path = \"pf/partfun.csv\"\n");
    assert_ok(&ws.run("ideal-solve", "s.toml", &[]));
    let sol = IdealSolution::read_json(&ws.path("solve/ideal.json")).unwrap();
    assert_eq!(sol.to_json(), ws.read("solve/ideal.json"));

    ws.file("s2.toml", SAHA);
    assert_ok(&ws.run("ideal-sweep-saha", "s2.toml", &["--set", "output_dir=\"saha\""]));
    let text = ws.read("saha/saha_sweep.csv");
    assert_eq!(read_sweep_csv(&text, "sweep").unwrap().len(), 3);
}

#[test]
fn groundstate_table_and_witnesses_round_trip() {
    let ws = Workspace::new();
    ws.file(
        "g.toml",
        "dim = 2\nseed = 7\noutput_dir = \"gs\"\n[potential]\nkind = \"ts_lennard_jones\"\n\
         [groundstate]\nk_max = 4\nrestarts = 2\nhops = 10\n",
    );
    assert_ok(&ws.run("groundstate", "g.toml", &[]));
    let mut table = GroundStateTable::read_csv(&ws.path("gs/groundstate.csv")).unwrap();
    assert_eq!(table.k_max(), 4);
    assert!(table.e_inf().is_some());
    table.read_witnesses(&ws.path("gs")).unwrap();
    assert!(table.entries().iter().all(|e| e.witness.is_some()));
    // Three particles at the pair minimum form an equilateral triangle.
    assert!((table.energy(3).unwrap() + 2.9510493).abs() < 1e-6, "E_3 = {}", table.energy(3).unwrap());
    let einf = ws.json("gs/einf.json");
    assert!(einf["nu_star"].as_f64().is_some());
    for k in 1..=4 {
        assert!(ws.path(&format!("gs/gs_k{k}.xyz")).exists());
    }
}

#[test]
fn potential_check_passes_for_built_in_potentials() {
    let ws = Workspace::new();
    ws.file("h.toml", "dim = 2\nseed = 1\noutput_dir = \"hat\"\n[check]\nresolution = 1e-3\n");
    assert_ok(&ws.run("potential-check", "h.toml", &[]));
    let v = ws.json("hat/assumption_report.json");
    assert_eq!(v["potential"], "hat_well");

    ws.file("t.txt", "0.5 1.0\n0.75 -1.0\n1.0 0.0\n");
    ws.file(
        "tab.toml",
        "dim = 2\nseed = 1\noutput_dir = \"tab\"\n[potential]\nkind = \"tabulated\"\ntable_path = \"t.txt\"\nparams = { hard_core = 0.5 }\n[check]\nresolution = 1e-3\n",
    );
    assert_ok(&ws.run("potential-check", "tab.toml", &[]));
}

#[test]
fn overrides_change_the_run() {
    let ws = Workspace::new();
    ws.file("c.toml", "rho = 0.1\noutput_dir = \"out\"\n[ideal]\ntable_path = \"toy.csv\"\n");
    assert_ok(&ws.run("ideal-solve", "c.toml", &["--set", "rho=0.05", "--set", "output_dir=\"low\""]));
    let sol = IdealSolution::read_json(&ws.path("low/ideal.json")).unwrap();
    assert_eq!(sol.rho, 0.05);
    let m = ws.json("low/manifest.json");
    assert!(m["config"].as_str().unwrap().contains("rho = 0.05"));
}

#[test]
fn exit_codes() {
    let ws = Workspace::new();
    ws.file("solve.toml", "rho = 0.1\noutput_dir = \"out\"\n[ideal]\ntable_path = \"toy.csv\"\n");

    let out = ws.run("frobnicate", "solve.toml", &[]);
    assert_eq!(code(&out), 64);
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));

    let out = Command::new(env!("CARGO_BIN_EXE_cluster-gas")).output().unwrap();
    assert_eq!(code(&out), 64);

    assert_eq!(code(&ws.run("ideal-solve", "missing.toml", &[])), 2);
    assert_eq!(code(&ws.run("ideal-solve", "solve.toml", &["--set", "nu=2.0"])), 2);
    assert_eq!(code(&ws.run("ideal-solve", "solve.toml", &["--set", "beta=2.0"])), 2);
    assert_eq!(code(&ws.run("ideal-solve", "solve.toml", &["--set", "rho=-1"])), 2);
    assert_eq!(code(&ws.run_env("ideal-solve", "solve.toml", &[], Some("many"))), 64);

    ws.file("bad.toml", "rho = [unclosed\n");
    assert_eq!(code(&ws.run("ideal-solve", "bad.toml", &[])), 2);

    ws.file("pf.toml", PARTFUN);
    assert_eq!(code(&ws.run("partfun", "pf.toml", &["--set", "radius=0.9"])), 2);
    assert_eq!(code(&ws.run("partfun", "pf.toml", &["--set", "partfun.samples=0"])), 2);
    // A single sample cannot resolve Z_3 at three standard errors.
    let out = ws.run("partfun", "pf.toml", &["--set", "partfun.samples=1", "--set", "output_dir=\"fail\""]);
    assert_eq!(code(&out), 3, "stderr: {}", String::from_utf8_lossy(&out.stderr));

    ws.file("c.toml", "dim = 2\nbeta = 1.0\nradius = 1.1\nrho = 0.05\noutput_dir = \"o\"\n[canonical]\nn = 5\n");
    assert_eq!(code(&ws.run("sim-canonical", "c.toml", &[])), 2, "missing seed");
}

#[test]
fn ambiguous_phase_writes_both_branches_and_fails_numerically() {
    let ws = Workspace::new();
    // Tail with an uncertain f_inf so rho lands inside the saturation interval.
    ws.file(
        "noisy.csv",
        "k,f_k,stderr_k\n1,0,0\n2,-0.5,0.05\n# f_inf=-3 f_inf_residual=0 beta=1 R=nan tail=none\n",
    );
    let table = ClusterFreeEnergyTable::read_csv(&ws.path("noisy.csv")).unwrap();
    let sat = cluster_gas::ideal::saturation_density(&table);
    assert!(sat.lo < sat.hi);
    ws.file(
        "c.toml",
        &format!("rho = {}\noutput_dir = \"out\"\n[ideal]\ntable_path = \"noisy.csv\"\n", sat.value),
    );
    let out = ws.run("ideal-solve", "c.toml", &[]);
    assert_eq!(code(&out), 3, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let m = ws.json("out/manifest.json");
    assert_eq!(m["exit_code"], 3);
    assert!(!m["outputs"].as_array().unwrap().is_empty());
    for f in m["outputs"].as_array().unwrap() {
        assert!(ws.path(&format!("out/{}", f.as_str().unwrap())).exists());
    }
}

#[test]
fn help_exits_successfully() {
    let out = Command::new(env!("CARGO_BIN_EXE_cluster-gas")).arg("--help").output().unwrap();
    assert_eq!(code(&out), 0);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("ideal-sweep-saha"));
    assert!(Path::new(env!("CARGO_BIN_EXE_cluster-gas")).exists());
}
