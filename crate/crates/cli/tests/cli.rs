use std::path::PathBuf;
use std::process::{Command, Output};

fn sddelab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sddelab"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn bundled() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("configs/scalar.toml")
}

fn data_rows(stdout: &[u8]) -> Vec<Vec<String>> {
    String::from_utf8(stdout.to_vec())
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn check_passes_on_the_bundled_problem() {
    let out = sddelab(&["check", "--quiet"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    for key in ["# seed=42", "# stream=", "# dt=0.01", "# N=100", "# git_describe="] {
        assert!(text.contains(key), "missing {key}");
    }
    assert!(data_rows(text.as_bytes()).iter().all(|r| r[3] == "true"));
}

#[test]
fn check_output_is_bit_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let codes: Vec<Option<i32>> = [&a, &b]
        .iter()
        .map(|d| sddelab(&["check", "--quiet", "--seed", "7", "--out-dir", d.to_str().unwrap()]).status.code())
        .collect();
    assert_eq!(codes[0], codes[1]);
    let fa = std::fs::read(a.join("checks.csv")).unwrap();
    let fb = std::fs::read(b.join("checks.csv")).unwrap();
    assert!(!fa.is_empty());
    assert_eq!(fa, fb);
}

#[test]
fn mismatched_grid_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(bundled()).unwrap().replace("dt = 0.01", "dt = 0.02");
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, text).unwrap();
    let out = sddelab(&["compare", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("dt ≠ 1/N"));
    assert!(out.stdout.is_empty());
}

#[test]
fn malformed_config_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("broken.toml");
    std::fs::write(&path, "[problem]\ndim_state = ").unwrap();
    assert_eq!(sddelab(&["simulate", path.to_str().unwrap()]).status.code(), Some(2));
    assert_eq!(sddelab(&["simulate", "/nonexistent.toml"]).status.code(), Some(2));
}

#[test]
fn converge_gives_three_decreasing_rows() {
    let out = sddelab(&["converge", "--quiet", "--grid", "50,100,200", "--paths", "100"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = data_rows(&out.stdout);
    assert_eq!(rows.len(), 3);
    let dts: Vec<f64> = rows.iter().map(|r| r[1].parse().unwrap()).collect();
    assert_eq!(dts, [0.02, 0.01, 0.005]);
    let errs: Vec<f64> = rows.iter().map(|r| r[3].parse().unwrap()).collect();
    assert!(errs[0] > errs[1] && errs[1] > errs[2], "{errs:?}");
}

#[test]
fn other_subcommands_write_their_tables() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().to_str().unwrap();
    for args in [
        vec!["simulate", "--solver", "mild", "--paths", "4"],
        vec!["compare"],
        vec!["picard"],
    ] {
        let mut full = args.clone();
        full.extend(["--quiet", "--out-dir", out_dir]);
        let out = sddelab(&full);
        assert_eq!(out.status.code(), Some(0), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
    for name in ["trajectory.csv", "terminal.csv", "compare.csv", "picard.csv"] {
        assert!(dir.path().join(name).exists(), "{name}");
    }
    let terminal = std::fs::read_to_string(dir.path().join("terminal.csv")).unwrap();
    assert_eq!(data_rows(terminal.as_bytes()).len(), 4);
}

#[test]
fn stationary_requires_additive_noise() {
    assert_eq!(sddelab(&["stationary", "--quiet"]).status.code(), Some(2));

    let dir = tempfile::tempdir().unwrap();
    let text = r#"
[problem]
dim_state = 1
dim_noise = 1
drift = [-1.0]
x0 = [0.0]
f0 = [0.0]
horizon = 20.0

[noise]
kind = "additive"
base = [0.7]

[solver]
n_cells = 20
dt = 0.05
seed = 3
mc_paths = 2000
"#;
    let path = dir.path().join("ou.toml");
    std::fs::write(&path, text).unwrap();
    let out = sddelab(&["stationary", path.to_str().unwrap(), "--quiet", "--out-dir", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let q = std::fs::read_to_string(dir.path().join("stationary_q.csv")).unwrap();
    let value: f64 = data_rows(q.as_bytes())[0][0].parse().unwrap();
    // Euler stationary variance σ² dt / (1 - (1 - dt)²)
    let exact = 0.49 * 0.05 / (1.0 - 0.95f64.powi(2));
    assert!((value - exact).abs() <= 1e-12 * exact, "{value} vs {exact}");
}
