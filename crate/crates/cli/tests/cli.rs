use std::path::Path;
use std::process::{Command, Output};

use snls_cli::manifest::{sha256_hex, RunManifest};

const SIMULATE: &str = r#"
name = "conserve"
seed = 3

[model]
lambda = 0.0
sigma = 1.0
epsilon = 0.0
u0 = { kind = "smooth", amplitude = 1.0, decay = 2.0 }

[grid]
n_modes = 16
t_end = 1.0
n_steps = 100

[noise]
gamma = 2.0
trace = 1.0
family = "additive"
amplitude = 1.0

[experiment]
kind = "simulate"
"#;

const EXIT_EXAMPLE: &str = r#"
kind = "exit_study"
r = 4.0
t0 = 1.0
n_steps = 50
epsilon_list = [0.01]
n_paths = 100
delta = 0.1
k1_override = 1.0
c_override = 1.0
"#;

fn snls(args: &[&str], env_root: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_snls"));
    cmd.args(args);
    match env_root {
        Some(p) => cmd.env("SNLS_OUTPUT_ROOT", p),
        None => cmd.env_remove("SNLS_OUTPUT_ROOT"),
    };
    cmd.output().expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

fn exit_config() -> String {
    SIMULATE.replace("kind = \"simulate\"", EXIT_EXAMPLE).replace(
        "{ kind = \"smooth\", amplitude = 1.0, decay = 2.0 }",
        "{ kind = \"mode\", k = 1, value = [1.0, 0.0] }",
    )
}

#[test]
fn validate_reports_findings() {
    let dir = tempfile::tempdir().unwrap();
    let ok = write(dir.path(), "ok.toml", SIMULATE);
    let out = snls(&["validate", &ok], None);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "ok");

    let hot = exit_config().replace("epsilon_list = [0.01]", "epsilon_list = [2.0]");
    let out = snls(&["validate", &write(dir.path(), "hot.toml", &hot)], None);
    assert_eq!(out.status.code(), Some(1));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("epsilon < 1/(K1 T0)"), "{text}");
    assert!(String::from_utf8_lossy(&out.stderr).contains("measured"));

    let typo = SIMULATE.replace("n_steps = 100", "n_steps = 100\nn_step = 3");
    let out = snls(&["validate", &write(dir.path(), "typo.toml", &typo)], None);
    assert_eq!(out.status.code(), Some(1));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("grid") && text.contains("n_step"), "{text}");
}

#[test]
fn conservative_simulation_keeps_mass() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "sim.toml", SIMULATE);
    let run_dir = dir.path().join("out");
    let out = snls(&["run", &cfg, "--output-dir", run_dir.to_str().unwrap()], None);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let diag = std::fs::read_to_string(run_dir.join("diagnostics.csv")).unwrap();
    let mass: Vec<f64> = diag
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(2).unwrap().parse().unwrap())
        .collect();
    assert_eq!(mass.len(), 101);
    for m in &mass {
        assert!((m - mass[0]).abs() <= 1e-12 * mass[0]);
    }

    let manifest = RunManifest::load(&run_dir.join("manifest.json")).unwrap();
    assert_eq!(manifest.config.grid.n_phys, Some(32));
    assert!((manifest.constants.k1_measured.unwrap() - 1.0).abs() < 1e-12);
    for o in &manifest.outputs {
        assert_eq!(sha256_hex(&std::fs::read(run_dir.join(&o.file)).unwrap()), o.sha256);
    }

    let rep = snls(&["report", run_dir.join("manifest.json").to_str().unwrap()], None);
    assert_eq!(rep.status.code(), Some(0));
    let text = String::from_utf8_lossy(&rep.stdout);
    assert!(text.contains("K1 declared") && text.contains("checksum ok"), "{text}");
}

#[test]
fn exit_example_row_and_rerun() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "exit.toml", &exit_config());
    let a = dir.path().join("a");
    let out = snls(&["run", &cfg, "-o", a.to_str().unwrap(), "-w", "2"], None);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(a.join("exit.csv")).unwrap();
    assert!(csv.starts_with("epsilon,p_hat,ci,lower_bound,upper_bound,C_hat,n_exited,n_censored,n_aborted\n"));
    let upper: f64 = csv.lines().nth(1).unwrap().split(',').nth(4).unwrap().parse().unwrap();
    assert!((upper - 0.2 / 2.95).abs() < 1e-12);

    let b = dir.path().join("b");
    let manifest = a.join("manifest.json");
    let out = snls(
        &["run", manifest.to_str().unwrap(), "-o", b.to_str().unwrap(), "-w", "1"],
        None,
    );
    assert_eq!(out.status.code(), Some(0));
    for f in ["exit.csv", "sandwich.csv", "h_exit.csv"] {
        assert_eq!(
            std::fs::read(a.join(f)).unwrap(),
            std::fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn output_root_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let json = r#"{
        "name": "from-env", "seed": 1,
        "model": {"lambda": 1.0, "sigma": 1.0, "u0": {"kind": "zero"}},
        "grid": {"n_modes": 4, "t_end": 0.5, "n_steps": 10},
        "noise": {"gamma": 2.0, "trace": 1.0, "family": "diagonal_multiplicative", "amplitude": 0.5},
        "experiment": {"kind": "skeleton", "control": {"kind": "constant", "coords": [[0.3, 0.0]]}}
    }"#;
    let cfg = write(dir.path(), "skel.json", json);
    let out = snls(&["run", &cfg], Some(dir.path()));
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let run_dir = dir.path().join("from-env");
    assert!(run_dir.join("skeleton.csv").exists());
    assert!(run_dir.join("control.csv").exists());
}

#[test]
fn declared_constant_below_measured_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let text = SIMULATE.replace("amplitude = 1.0\n", "amplitude = 1.0\nk1 = 0.5\n");
    let cfg = write(dir.path(), "low.toml", &text);
    let out = snls(&["run", &cfg, "-o", dir.path().join("x").to_str().unwrap()], None);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("k1"));
}

#[test]
fn verify_and_path_norms_write_tables() {
    let dir = tempfile::tempdir().unwrap();
    let verify = SIMULATE.replace(
        "kind = \"simulate\"",
        "kind = \"verify\"\nn_trials = 50\nmoment_orders = [2, 4]\nmoment_paths = 50",
    );
    let cfg = write(
        dir.path(),
        "verify.toml",
        &verify.replace("epsilon = 0.0", "epsilon = 0.1"),
    );
    let v = dir.path().join("v");
    let out = snls(&["run", &cfg, "-o", v.to_str().unwrap()], None);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let props = std::fs::read_to_string(v.join("properties.csv")).unwrap();
    assert!(props.contains("f_monotonicity,50,0,"), "{props}");
    assert_eq!(
        std::fs::read_to_string(v.join("moments.csv")).unwrap().lines().count(),
        3
    );

    let norms = SIMULATE
        .replace(
            "kind = \"simulate\"",
            "kind = \"path_norms\"\nn_paths = 3\nalpha_list = [0.1, 0.4]\np = 2.0",
        )
        .replace("epsilon = 0.0", "epsilon = 0.2");
    let cfg = write(dir.path(), "norms.toml", &norms);
    let n = dir.path().join("n");
    let out = snls(&["run", &cfg, "-o", n.to_str().unwrap()], None);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = std::fs::read_to_string(n.join("path_norms.csv")).unwrap();
    assert_eq!(rows.lines().count(), 1 + 3 * 3);
}

#[test]
fn documented_examples_validate() {
    let docs = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs/examples");
    let mut n = 0;
    for entry in std::fs::read_dir(&docs).unwrap() {
        let path = entry.unwrap().path();
        let out = snls(&["validate", path.to_str().unwrap()], None);
        assert_eq!(
            out.status.code(),
            Some(0),
            "{}: {}",
            path.display(),
            String::from_utf8_lossy(&out.stdout)
        );
        n += 1;
    }
    assert!(n >= 5);
}
