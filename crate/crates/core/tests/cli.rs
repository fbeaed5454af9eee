//! End-to-end behaviour of the `lfish` binary and its exit-code contract.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use landau_fisher::cli::{selftest, SelftestOptions, Status};
use landau_fisher::kernel::EtaBlend;
use landau_fisher::snapshot::Snapshot;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_lfish"));
    c.env_remove("LF_TOL_SCALE").env_remove("LF_THREADS");
    c
}

fn bundled(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs").join(name)
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("process exited normally")
}

fn text(o: &Output) -> String {
    format!("{}{}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr))
}

fn simulate(cfg: &Path, out: &Path, extra: &[&str]) -> Output {
    bin().arg("simulate").arg("--config").arg(cfg).arg("--out").arg(out).args(extra).output().unwrap()
}

fn column(csv: &str, name: &str) -> Vec<f64> {
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let idx = header.iter().position(|h| *h == name).unwrap();
    lines.map(|l| l.split(',').nth(idx).unwrap().parse().unwrap()).collect()
}

const SMALL: &str = r#"
[grid]
n = 8
extent = 4.0

[kernel]
gamma = -3.0

[initial]
kind = "perturbed_maxwellian"
temperature = 1.0
amplitude = 0.5
noise = 0.05

[time]
t_end = 0.05
snapshot_times = [0.0, 0.05]
"#;

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p
}

#[test]
fn maxwellian_config_keeps_every_column_constant() {
    let dir = tempfile::tempdir().unwrap();
    let o = simulate(&bundled("maxwellian.cfg"), dir.path(), &[]);
    assert_eq!(code(&o), 0, "{}", text(&o));
    let csv = std::fs::read_to_string(dir.path().join("series.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "t,mass,px,py,pz,energy,entropy,llogl,fisher,linf");
    for name in ["mass", "energy", "entropy", "llogl", "fisher", "linf"] {
        let c = column(&csv, name);
        let spread = c.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b)) - c.iter().fold(f64::INFINITY, |a, &b| a.min(b));
        assert!(spread <= 1e-9 * c[0].abs(), "{name} varies by {spread}");
    }
    for name in ["px", "py", "pz"] {
        assert!(column(&csv, name).iter().all(|p| p.abs() < 1e-14));
    }
    let summary: toml::Table = std::fs::read_to_string(dir.path().join("summary.toml")).unwrap().parse().unwrap();
    assert_eq!(summary["verdict"]["pass"].as_bool(), Some(true));
}

#[test]
fn perturbed_config_passes_with_decreasing_fisher() {
    let dir = tempfile::tempdir().unwrap();
    let o = simulate(&bundled("perturbed.cfg"), dir.path(), &[]);
    assert_eq!(code(&o), 0, "{}", text(&o));
    let csv = std::fs::read_to_string(dir.path().join("series.csv")).unwrap();
    let fisher = column(&csv, "fisher");
    assert!(fisher.windows(2).all(|w| w[1] <= w[0]), "{fisher:?}");
    assert!(fisher.last().unwrap() < &fisher[0]);
    let header = csv.lines().next().unwrap();
    assert!(header.ends_with("fisher_dissipation_total"));
    for k in 0..3 {
        let snap = Snapshot::load(&dir.path().join(format!("snapshot_{k:03}.lfsh"))).unwrap();
        assert_eq!(snap.density.grid().n(), 16);
    }
    // no temporary files survive the atomic writes
    assert!(std::fs::read_dir(dir.path()).unwrap().all(|e| !e.unwrap().file_name().to_string_lossy().starts_with('.')));
}

#[test]
fn config_errors_exit_with_input_code_and_line() {
    let dir = tempfile::tempdir().unwrap();
    let body = std::fs::read_to_string(bundled("perturbed.cfg")).unwrap().replace("gamma = -3.0", "gamma = -1.0");
    let cfg = write_config(dir.path(), "bad.cfg", &body);
    let o = simulate(&cfg, &dir.path().join("o"), &[]);
    assert_eq!(code(&o), 3);
    let line = body.lines().position(|l| l.starts_with("gamma")).unwrap() + 1;
    assert!(text(&o).contains(&format!("line {line}")), "{}", text(&o));
    assert!(text(&o).contains("gamma"));

    let cfg = write_config(dir.path(), "syntax.cfg", "[grid]\nn = = 3\n");
    let o = simulate(&cfg, &dir.path().join("o"), &[]);
    assert_eq!(code(&o), 3);
    assert!(text(&o).contains("line 2"), "{}", text(&o));

    let o = simulate(&dir.path().join("missing.cfg"), &dir.path().join("o"), &[]);
    assert_eq!(code(&o), 3);
    let o = simulate(&bundled("perturbed.cfg"), &dir.path().join("o"), &["--gamma", "-1.5"]);
    assert_eq!(code(&o), 3);
    let o = bin().args(["simulate", "--nonsense"]).output().unwrap();
    assert_eq!(code(&o), 3);
}

#[test]
fn failing_check_is_named_and_tolerance_scale_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "strict.cfg", &format!("{SMALL}\n[checks]\nenergy_tolerance = 1e-12\n"));
    let o = simulate(&cfg, &dir.path().join("a"), &[]);
    assert_eq!(code(&o), 2, "{}", text(&o));
    assert!(text(&o).contains("overall: FAIL (energy_conservation)"), "{}", text(&o));

    let o = bin().env("LF_TOL_SCALE", "1e12").args(["simulate", "--config"]).arg(&cfg).arg("--out").arg(dir.path().join("b")).output().unwrap();
    assert_eq!(code(&o), 0, "{}", text(&o));
    let summary: toml::Table = std::fs::read_to_string(dir.path().join("b/summary.toml")).unwrap().parse().unwrap();
    assert_eq!(summary["verdict"]["pass"].as_bool(), Some(false));
    assert_eq!(summary["verdict"]["pass_scaled"].as_bool(), Some(true));

    let o = bin().env("LF_TOL_SCALE", "zero").args(["simulate", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(code(&o), 3);
    let o = bin().env("LF_THREADS", "0").arg("selftest").output().unwrap();
    assert_eq!(code(&o), 3);
}

#[test]
fn oversized_step_aborts_numerically() {
    let dir = tempfile::tempdir().unwrap();
    let body = SMALL.replace("t_end = 0.05", "t_end = 5.0\ndt = 5.0");
    let cfg = write_config(dir.path(), "cfl.cfg", &body);
    let o = simulate(&cfg, &dir.path().join("o"), &[]);
    assert_eq!(code(&o), 4, "{}", text(&o));
    assert!(text(&o).contains("CFL"), "{}", text(&o));
}

#[test]
fn identical_seeds_give_identical_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "small.cfg", SMALL);
    let read = |sub: &str, file: &str| std::fs::read(dir.path().join(sub).join(file)).unwrap();
    for (sub, seed) in [("a", "5"), ("b", "5"), ("c", "6")] {
        let o = simulate(&cfg, &dir.path().join(sub), &["--seed", seed]);
        assert_eq!(code(&o), 0, "{}", text(&o));
    }
    for file in ["series.csv", "summary.toml", "snapshot_000.lfsh", "snapshot_001.lfsh"] {
        assert_eq!(read("a", file), read("b", file), "{file}");
    }
    assert_ne!(read("a", "series.csv"), read("c", "series.csv"));
}

#[test]
fn analyze_reports_and_guards_the_format() {
    let dir = tempfile::tempdir().unwrap();
    let o = simulate(&bundled("maxwellian.cfg"), dir.path(), &[]);
    assert_eq!(code(&o), 0);
    let snap = dir.path().join("snapshot_000.lfsh");
    let o = bin().args(["analyze", "--pairs", "--snapshot"]).arg(&snap).output().unwrap();
    assert_eq!(code(&o), 0, "{}", text(&o));
    let doc: toml::Table = String::from_utf8(o.stdout).unwrap().parse().unwrap();
    let d = &doc["dissipation"];
    let scale = d["second_order_scale"].as_float().unwrap();
    assert!(d["entropy_dissipation"].as_float().unwrap().abs() <= 1e-8 * d["first_order_scale"].as_float().unwrap());
    for term in ["d_par", "d_rad", "d_sph"] {
        assert!(d["raw"][term].as_float().unwrap().abs() <= 1e-8 * scale, "{term}");
    }
    assert!((doc["state"]["mass"].as_float().unwrap() - 1.0).abs() < 1e-6);

    let mut bytes = std::fs::read(&snap).unwrap();
    bytes[5] = b'B';
    let flipped = dir.path().join("flipped.lfsh");
    std::fs::write(&flipped, &bytes).unwrap();
    let o = bin().args(["analyze", "--snapshot"]).arg(&flipped).output().unwrap();
    assert_eq!(code(&o), 3);
    assert!(text(&o).contains("endianness"), "{}", text(&o));
    bytes[5] = b'L';
    bytes.truncate(bytes.len() - 1);
    std::fs::write(&flipped, &bytes).unwrap();
    let o = bin().args(["analyze", "--snapshot"]).arg(&flipped).output().unwrap();
    assert_eq!(code(&o), 3);
    assert!(text(&o).contains("size mismatch"));
}

#[test]
fn brute_force_flag_matches_the_fast_path() {
    let dir = tempfile::tempdir().unwrap();
    let body = SMALL.replace("n = 8", "n = 6").replace("extent = 4.0", "extent = 3.0").replace("gamma = -3.0", "gamma = -2.5");
    let cfg = write_config(dir.path(), "n6.cfg", &body);
    assert_eq!(code(&simulate(&cfg, dir.path(), &[])), 0);
    let o = bin().args(["analyze", "--brute-force", "--coercivity", "--snapshot"]).arg(dir.path().join("snapshot_001.lfsh")).output().unwrap();
    assert_eq!(code(&o), 0, "{}", text(&o));
    assert!(text(&o).contains("brute_force_agreement: PASS"));
    assert!(text(&o).contains("infimum"));
}

#[test]
fn gamma2_is_deterministic_for_a_fixed_seed() {
    let run = || bin().args(["gamma2", "--seed", "11", "--seeds", "2", "--degree", "2", "--steps", "4", "--n-theta", "16", "--n-phi", "32"]).output().unwrap();
    let (a, b) = (run(), run());
    assert_eq!(code(&a), 0, "{}", text(&a));
    assert_eq!(a.stdout, b.stdout);
    let s = text(&a);
    assert!(s.contains("linearised_l2_symmetric: PASS") && s.contains("linearised_l1: PASS"), "{s}");
    let o = bin().args(["gamma2", "--degree", "3"]).output().unwrap();
    assert_eq!(code(&o), 3);
}

#[test]
fn selftest_passes_and_reports_the_kernel_measurement() {
    let start = std::time::Instant::now();
    let o = bin().arg("selftest").output().unwrap();
    assert!(start.elapsed().as_secs() < 60);
    assert_eq!(code(&o), 0, "{}", text(&o));
    let s = text(&o);
    let line = s.lines().find(|l| l.starts_with("measured sup eta'' = ")).unwrap();
    let value: f64 = line.rsplit(' ').next().unwrap().parse().unwrap();
    assert!(value > 0.0 && value.is_finite());
}

#[test]
fn corrupted_eta_table_fails_the_selftest_by_name() {
    let mut eta = EtaBlend::default();
    eta.ends[1] *= 1.5;
    let mut out = Vec::new();
    let status = selftest(&SelftestOptions { eta, ..SelftestOptions::default() }, &mut out);
    assert_eq!(status, Status::CheckFailure);
    let s = String::from_utf8(out).unwrap();
    assert!(s.contains("eta_kernel: FAIL"), "{s}");
    assert!(s.contains("overall: FAIL (eta_kernel)"), "{s}");
}
