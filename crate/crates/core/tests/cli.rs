use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use cpfopt::acceptance::{max_relative_increase, MONOTONE_SLACK};

const SCALAR_QUADRATIC: &str = r#"
schema_version = 1

[config]
beta = 1.0
dt = 0.01
t_final = 5.0
n_particles = 500
seed = 3
gain_method = "affine"

[objective]
name = "quadratic"
hessian = [[1.0]]
minimizer = [0.0]

[init]
kind = "gaussian"
mean = [1.0]
cov = [[1.0]]

[outputs]
trajectory = "traj.csv"
snapshots = "snap.csv"
"#;

const DOUBLE_WELL: &str = r#"
schema_version = 1

[config]
beta = 1.0
dt = 0.001
t_final = 0.5
n_particles = 300
seed = 5
gain_method = "kernel"

[objective]
name = "double_well"

[init]
kind = "gaussian_mixture"
components = [{ weight = 0.5, mean = [-2.0], var = 0.36 }, { weight = 0.5, mean = [2.0], var = 0.36 }]
"#;

const QUAD_2D: &str = r#"
schema_version = 1

[config]
beta = 1.0
dt = 0.01
t_final = 1.0
n_particles = 200
seed = 9
gain_method = "affine"

[objective]
name = "isotropic_quadratic"
dim = 2
scale = 2.0
center = 0.5

[init]
kind = "isotropic_gaussian"
mean = 1.0
var = 1.0
"#;

fn cpfopt(sub: &str, manifest: &str, dir: &Path, extra: &[&str]) -> Output {
    let path = dir.join("manifest.toml");
    fs::write(&path, manifest).unwrap();
    Command::new(env!("CARGO_BIN_EXE_cpfopt"))
        .arg(sub)
        .arg("--manifest")
        .arg(&path)
        .arg("--out-dir")
        .arg(dir)
        .arg("--quiet")
        .args(extra)
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Header and data rows, skipping the provenance comment.
fn table(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    let rows = lines.map(|l| l.split(',').map(String::from).collect()).collect();
    (header, rows)
}

#[test]
fn run_writes_trajectory_snapshots_and_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let with_snaps = SCALAR_QUADRATIC.replace("gain_method = \"affine\"", "gain_method = \"affine\"\n[config.method_params]\nsnapshot_every = 100");
    let out = cpfopt("run", &with_snaps, dir.path(), &[]);
    assert!(out.status.success(), "{}", stderr(&out));

    let (header, rows) = table(&dir.path().join("traj.csv"));
    assert_eq!(header, ["t", "hhat", "mean_1", "cov_trace"]);
    assert_eq!(rows.len(), 501);
    assert_eq!(rows[500][0].parse::<f64>().unwrap(), 5.0);
    let m_final: f64 = rows[500][2].parse().unwrap();
    // Exact posterior mean m_T = m_0 / (1 + T Σ_0) = 1/6.
    assert!((m_final - 1.0 / 6.0).abs() < 0.15, "final mean {m_final}");

    let (header, rows) = table(&dir.path().join("snap.csv"));
    assert_eq!(header, ["t", "particle_id", "x_1"]);
    assert_eq!(rows.len() % 500, 0);
    assert!(!rows.is_empty());

    let text = fs::read_to_string(dir.path().join("traj.csv")).unwrap();
    assert!(text.starts_with("# seed=3 manifest={"));
    let side: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("run.json")).unwrap()).unwrap();
    assert_eq!(side["seed"], 3);
    assert_eq!(side["manifest"]["config"]["dt"], 0.01);
    assert_eq!(side["manifest"]["config"]["method_params"]["epsilon"], 0.5);
}

#[test]
fn run_is_byte_reproducible_and_seed_overrides() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let c = tempfile::tempdir().unwrap();
    assert!(cpfopt("run", SCALAR_QUADRATIC, a.path(), &[]).status.success());
    assert!(cpfopt("run", SCALAR_QUADRATIC, b.path(), &[]).status.success());
    assert!(cpfopt("run", SCALAR_QUADRATIC, c.path(), &["--seed", "4"]).status.success());
    let read = |d: &Path, f: &str| fs::read(d.join(f)).unwrap();
    assert_eq!(read(a.path(), "traj.csv"), read(b.path(), "traj.csv"));
    assert_eq!(read(a.path(), "run.json"), read(b.path(), "run.json"));
    assert_ne!(read(a.path(), "traj.csv"), read(c.path(), "traj.csv"));
    assert!(String::from_utf8(read(c.path(), "traj.csv")).unwrap().starts_with("# seed=4 "));
}

#[test]
fn numbers_carry_17_significant_digits() {
    let dir = tempfile::tempdir().unwrap();
    assert!(cpfopt("run", SCALAR_QUADRATIC, dir.path(), &[]).status.success());
    let (_, rows) = table(&dir.path().join("traj.csv"));
    for cell in &rows[1] {
        let mantissa = cell.split('e').next().unwrap().trim_start_matches('-');
        assert_eq!(mantissa.chars().filter(|c| c.is_ascii_digit()).count(), 17, "{cell}");
    }
}

#[test]
fn validation_failures_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = cpfopt("run", &SCALAR_QUADRATIC.replace("dt = 0.01\n", ""), dir.path(), &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("dt"), "{}", stderr(&out));

    let out = cpfopt("run", &SCALAR_QUADRATIC.replace("dt = 0.01", "dt = -0.01"), dir.path(), &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("dt"));

    let out = cpfopt("run", &SCALAR_QUADRATIC.replace("\"affine\"", "\"unknown\""), dir.path(), &[]);
    assert_eq!(out.status.code(), Some(2));

    let mc = format!("{SCALAR_QUADRATIC}\n[mc]\ngrid_kind = \"n\"\nvalues = [100]\nreplicates = 1\n");
    let out = cpfopt("mc-variance", &mc, dir.path(), &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("replicates"));

    let out = cpfopt("mc-variance", SCALAR_QUADRATIC, dir.path(), &[]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_manifest_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_cpfopt"))
        .args(["run", "--manifest"])
        .arg(dir.path().join("absent.toml"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn numerical_failure_exits_3_naming_step_and_backend() {
    let dir = tempfile::tempdir().unwrap();
    let collapsed = SCALAR_QUADRATIC
        .replace("cov = [[1.0]]", "cov = [[0.0]]")
        .replace("gain_method = \"affine\"", "gain_method = \"affine\"\n[config.method_params]\ntrace_stop = 0.0");
    let out = cpfopt("run", &collapsed, dir.path(), &[]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
    let msg = stderr(&out);
    assert!(msg.contains("affine") && msg.contains("step 0"), "{msg}");
}

#[test]
fn mc_variance_over_particle_counts() {
    let dir = tempfile::tempdir().unwrap();
    let mc = format!(
        "{}\n[mc]\ngrid_kind = \"n\"\nvalues = [100, 200]\nreplicates = 20\n",
        SCALAR_QUADRATIC.replace("t_final = 5.0", "t_final = 1.0")
    );
    let out = cpfopt("mc-variance", &mc, dir.path(), &[]);
    assert!(out.status.success(), "{}", stderr(&out));
    let (header, rows) = table(&dir.path().join("mc_variance.csv"));
    assert_eq!(header, ["N_or_d", "mc_var", "J"]);
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0][0], "100");
    assert_eq!(rows[1][2], "20");
    for r in &rows {
        assert!(r[1].parse::<f64>().unwrap() > 0.0);
    }
}

#[test]
fn mc_variance_over_dimensions() {
    let dir = tempfile::tempdir().unwrap();
    let mc = format!("{QUAD_2D}\n[mc]\ngrid_kind = \"d\"\nvalues = [1, 2, 3]\nreplicates = 10\n");
    let out = cpfopt("mc-variance", &mc, dir.path(), &[]);
    assert!(out.status.success(), "{}", stderr(&out));
    let (_, rows) = table(&dir.path().join("mc_variance.csv"));
    let ds: Vec<&str> = rows.iter().map(|r| r[0].as_str()).collect();
    assert_eq!(ds, ["1", "2", "3"]);
}

#[test]
fn compare_quadratic_reports_moment_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = cpfopt("compare", QUAD_2D, dir.path(), &[]);
    assert!(out.status.success(), "{}", stderr(&out));
    let (header, rows) = table(&dir.path().join("compare.csv"));
    assert_eq!(header, ["t", "mean_err", "cov_err"]);
    assert_eq!(rows.len(), 101);
    let first: f64 = rows[0][1].parse().unwrap();
    assert!(first < 0.3, "initial mean error {first}");
    let (header, rows) = table(&dir.path().join("hhat_backends.csv"));
    assert_eq!(header, ["t", "hhat_affine", "hhat_galerkin", "hhat_kernel"]);
    assert_eq!(rows.len(), 101);
}

#[test]
fn compare_double_well_backends() {
    let dir = tempfile::tempdir().unwrap();
    let out = cpfopt("compare", DOUBLE_WELL, dir.path(), &[]);
    assert!(out.status.success(), "{}", stderr(&out));
    let (header, rows) = table(&dir.path().join("compare.csv"));
    assert_eq!(header, ["t", "ks"]);
    assert!(!rows.is_empty());
    let (header, rows) = table(&dir.path().join("hhat_backends.csv"));
    assert_eq!(header, ["t", "hhat_affine", "hhat_galerkin", "hhat_kernel"]);
    assert_eq!(rows.len(), 501);
    let kernel: Vec<f64> = rows.iter().map(|r| r[3].parse().unwrap()).collect();
    assert!(max_relative_increase(&kernel) <= MONOTONE_SLACK);
}

#[test]
fn compare_without_reference_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let mixture_2d = QUAD_2D.replace(
        "kind = \"isotropic_gaussian\"\nmean = 1.0\nvar = 1.0",
        "kind = \"gaussian_mixture\"\ncomponents = [{ weight = 0.5, mean = [-1.0, 0.0], var = 0.5 }, { weight = 0.5, mean = [1.0, 0.0], var = 0.5 }]",
    );
    let out = cpfopt("compare", &mixture_2d, dir.path(), &[]);
    assert_eq!(out.status.code(), Some(4), "{}", stderr(&out));
}
