//! Command implementations behind the `lfish` binary.
//!
//! Every command writes human-readable structured text to `out`, diagnostics to
//! `err`, and returns a [`Status`] whose numeric value is the process exit code.

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use toml::{Table, Value};

use crate::config::{ConfigError, RunConfig};
use crate::evolution::{dissipation_consistency, fisher_decay_check, initial_coercivity, run_from, theorem_margins, TrajectoryRecord};
use crate::functionals::{bracket_moment, fisher, hydrodynamics, weighted_hessian_functional};
use crate::gamma2::{gamma2_ratio, probe_minimum_with, ProbeConfig};
use crate::kernel::{a_matrix, b_field, EtaBlend, KernelSpec};
use crate::linalg::{norm2, Vec3};
use crate::numeric::gauss_legendre;
use crate::pair::{brute_force_report, coercivity_scan, decomposition_identity_check, fisher_dissipation_terms, DissipationReport, PairContext};
use crate::snapshot::{write_atomic, Snapshot};
use crate::sphere::{harmonic_count, real_harmonics, SphereField, SphereGrid};
use crate::Error;

/// Process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Status {
    Pass = 0,
    CheckFailure = 2,
    InputError = 3,
    NumericalAbort = 4,
}

impl Status {
    pub fn code(self) -> u8 {
        self as u8
    }
}

/// Errors that abort the numerics rather than reject the input.
pub fn is_numerical(e: &Error) -> bool {
    matches!(e, Error::Cfl { .. } | Error::NonFinite { .. } | Error::NegativeDensity { .. } | Error::SolverDiverged { .. } | Error::ZeroMass)
}

/// Read `LF_TOL_SCALE`; absent means 1.
pub fn tol_scale_from_env() -> Result<f64, String> {
    match std::env::var("LF_TOL_SCALE") {
        Err(_) => Ok(1.0),
        Ok(s) => match s.trim().parse::<f64>() {
            Ok(v) if v > 0.0 && v.is_finite() => Ok(v),
            _ => Err(format!("LF_TOL_SCALE must be a positive number, got {s:?}")),
        },
    }
}

/// Read `LF_THREADS`; absent means the available parallelism.
pub fn threads_from_env() -> Result<Option<usize>, String> {
    match std::env::var("LF_THREADS") {
        Err(_) => Ok(None),
        Ok(s) => match s.trim().parse::<usize>() {
            Ok(v) if v > 0 => Ok(Some(v)),
            _ => Err(format!("LF_THREADS must be a positive integer, got {s:?}")),
        },
    }
}

/// A named check of the form `excess <= tolerance`.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub excess: f64,
    pub tolerance: f64,
    pub note: Option<String>,
}

impl Check {
    pub fn new(name: &str, excess: f64, tolerance: f64) -> Self {
        Self { name: name.into(), excess, tolerance, note: None }
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.note = Some(note.into());
        self
    }

    pub fn pass_with(&self, scale: f64) -> bool {
        self.excess <= self.tolerance * scale
    }

    fn line(&self, scale: f64) -> String {
        let verdict = |p: bool| if p { "PASS" } else { "FAIL" };
        let mut s = format!(
            "{}: {} (excess {:e}, tolerance {:e}; scaled x{}: {})",
            self.name,
            verdict(self.pass_with(1.0)),
            self.excess,
            self.tolerance,
            scale,
            verdict(self.pass_with(scale))
        );
        if let Some(n) = &self.note {
            let _ = write!(s, " [{n}]");
        }
        s
    }

    fn to_table(&self, scale: f64) -> Table {
        let mut t = Table::new();
        t.insert("excess".into(), Value::Float(self.excess));
        t.insert("tolerance".into(), Value::Float(self.tolerance));
        t.insert("scaled_tolerance".into(), Value::Float(self.tolerance * scale));
        t.insert("pass".into(), Value::Boolean(self.pass_with(1.0)));
        t.insert("pass_scaled".into(), Value::Boolean(self.pass_with(scale)));
        if let Some(n) = &self.note {
            t.insert("note".into(), Value::String(n.clone()));
        }
        t
    }
}

/// Print check lines, add them to `summary`, and return the scaled verdict.
fn report_checks(checks: &[Check], scale: f64, summary: &mut Table, out: &mut dyn Write) -> Status {
    let mut table = Table::new();
    for c in checks {
        let _ = writeln!(out, "{}", c.line(scale));
        table.insert(c.name.clone(), Value::Table(c.to_table(scale)));
    }
    let failing: Vec<Value> = checks.iter().filter(|c| !c.pass_with(scale)).map(|c| Value::String(c.name.clone())).collect();
    let failing_raw = checks.iter().filter(|c| !c.pass_with(1.0)).count();
    let mut verdict = Table::new();
    verdict.insert("tol_scale".into(), Value::Float(scale));
    verdict.insert("pass".into(), Value::Boolean(failing_raw == 0));
    verdict.insert("pass_scaled".into(), Value::Boolean(failing.is_empty()));
    verdict.insert("failing".into(), Value::Array(failing.clone()));
    summary.insert("checks".into(), Value::Table(table));
    summary.insert("verdict".into(), Value::Table(verdict));
    if failing.is_empty() {
        let _ = writeln!(out, "overall: PASS");
        Status::Pass
    } else {
        let names: Vec<String> = failing.iter().filter_map(|v| v.as_str().map(String::from)).collect();
        let _ = writeln!(out, "overall: FAIL ({})", names.join(", "));
        Status::CheckFailure
    }
}

fn float_table(entries: &[(&str, f64)]) -> Table {
    entries.iter().map(|(k, v)| (k.to_string(), Value::Float(*v))).collect()
}

fn vec3_value(v: &Vec3) -> Value {
    Value::Array(v.iter().map(|x| Value::Float(*x)).collect())
}

fn dissipation_table(r: &DissipationReport) -> Table {
    let terms = |t: &crate::pair::DissipationTerms| {
        float_table(&[
            ("d_par", t.d_par),
            ("d_rad", t.d_rad),
            ("d_sph", t.d_sph),
            ("r_sph", t.r_sph),
            ("correction", t.correction),
            ("total", t.total()),
        ])
    };
    let mut t = float_table(&[
        ("entropy_dissipation", r.entropy_dissipation),
        ("j1", r.j1),
        ("j2", r.j2),
        ("fisher_dissipation_total", r.fisher_dissipation_total),
        ("mass", r.mass),
        ("fisher", r.fisher),
        ("first_order_scale", r.first_order_scale),
        ("second_order_scale", r.second_order_scale),
    ]);
    t.insert("raw".into(), Value::Table(terms(&r.raw)));
    t.insert("cutoff".into(), Value::Table(terms(&r.cutoff)));
    t.insert(
        "margins".into(),
        Value::Table(float_table(&[
            ("sph_over_rsph", r.margins.sph_over_rsph),
            ("sph_over_rsph_cutoff", r.margins.sph_over_rsph_cutoff),
            ("lemma", r.margins.lemma),
            ("j2_bound", r.margins.j2_bound),
        ])),
    );
    t
}

fn state_table(f: &crate::grid::Density, gamma: f64) -> crate::Result<Table> {
    let s = hydrodynamics(f);
    let fr = fisher(f);
    let mut t = float_table(&[
        ("mass", s.mass),
        ("energy", s.energy),
        ("entropy", s.entropy),
        ("l_log_l", s.l_log_l),
        ("fisher", fr.chosen),
        ("fisher_grad_form", fr.grad_form),
        ("fisher_ratio_form", fr.ratio_form),
        ("fisher_sqrt_form", fr.sqrt_form),
        ("floored_mass_fraction", fr.floored_mass_fraction),
        ("linf", f.max_value()),
        ("bracket_moment", bracket_moment(f, 2.0 - gamma)),
        ("weighted_hessian", weighted_hessian_functional(f, gamma)?),
    ]);
    t.insert("momentum".into(), vec3_value(&s.momentum));
    Ok(t)
}

fn print_table(out: &mut dyn Write, t: &Table) {
    let _ = write!(out, "{}", toml::to_string(t).expect("tables serialise"));
}

/// Options of `simulate`; `None` keeps the configured value.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulateOptions {
    pub config: PathBuf,
    pub seed: Option<u64>,
    pub gamma: Option<f64>,
    pub out_dir: Option<PathBuf>,
    pub tol_scale: f64,
}

pub const SERIES_COLUMNS: [&str; 10] = ["t", "mass", "px", "py", "pz", "energy", "entropy", "llogl", "fisher", "linf"];
pub const DISSIPATION_COLUMNS: [&str; 9] =
    ["entropy_dissipation", "d_par", "d_rad", "d_sph", "r_sph", "correction", "j1", "j2", "fisher_dissipation_total"];

/// Series as CSV; dissipation columns are present when the run records them
/// and empty on rows without a pairwise report.
pub fn series_csv(traj: &TrajectoryRecord, with_dissipation: bool) -> String {
    let mut s = SERIES_COLUMNS.join(",");
    if with_dissipation {
        s.push(',');
        s.push_str(&DISSIPATION_COLUMNS.join(","));
    }
    s.push('\n');
    for x in &traj.samples {
        let st = &x.state;
        let cols = [x.t, st.mass, st.momentum[0], st.momentum[1], st.momentum[2], st.energy, st.entropy, st.l_log_l, x.fisher, x.sup];
        s.push_str(&cols.map(|v| format!("{v:e}")).join(","));
        if with_dissipation {
            match &x.dissipation {
                Some(r) => {
                    let d = [
                        r.entropy_dissipation,
                        r.raw.d_par,
                        r.raw.d_rad,
                        r.raw.d_sph,
                        r.raw.r_sph,
                        r.raw.correction,
                        r.j1,
                        r.j2,
                        r.fisher_dissipation_total,
                    ];
                    s.push(',');
                    s.push_str(&d.map(|v| format!("{v:e}")).join(","));
                }
                None => s.push_str(&",".repeat(DISSIPATION_COLUMNS.len())),
            }
        }
        s.push('\n');
    }
    s
}

/// Largest upward step relative to the current magnitude.
pub fn monotone_excess(series: &[f64]) -> f64 {
    series.windows(2).map(|w| (w[1] - w[0]) / w[0].abs().max(f64::MIN_POSITIVE)).fold(f64::NEG_INFINITY, f64::max)
}

fn worst(values: impl Iterator<Item = f64>) -> f64 {
    values.fold(f64::NEG_INFINITY, |a, b| if b.is_nan() || a.is_nan() { f64::NAN } else { a.max(b) })
}

/// Evaluate the checks enabled in `cfg` on a finished run.
pub fn run_checks(cfg: &RunConfig, traj: &TrajectoryRecord, coercivity: Option<f64>) -> Vec<Check> {
    let c = &cfg.checks;
    let mut checks = Vec::new();
    if c.conservation {
        checks.push(Check::new("mass_conservation", traj.mass_drift(), c.mass_tolerance));
        let e0 = traj.samples[0].state.energy;
        let de = worst(traj.samples.iter().map(|s| (s.state.energy - e0).abs() / e0));
        checks.push(Check::new("energy_conservation", de, c.energy_tolerance));
    }
    if c.entropy_monotone {
        checks.push(Check::new("entropy_monotone", monotone_excess(&traj.entropy_series()), c.monotone_tolerance));
    }
    if c.fisher_monotone {
        checks.push(Check::new("fisher_monotone", monotone_excess(&traj.fisher_series()), c.monotone_tolerance));
    }
    if c.fisher_decay {
        checks.push(match fisher_decay_check(traj) {
            Ok(d) => Check::new("fisher_decay", d.late_scaled_max / d.early_scaled_max - 1.0, c.decay_tolerance)
                .with_note(format!("early max of t i/(1+t) = {}, fitted C0 = {}", d.early_scaled_max, d.c0_fit)),
            Err(e) => Check::new("fisher_decay", f64::INFINITY, c.decay_tolerance).with_note(e.to_string()),
        });
    }
    if c.dissipation_consistency {
        let rows = dissipation_consistency(traj);
        checks.push(if rows.is_empty() {
            Check::new("dissipation_consistency", f64::INFINITY, c.consistency_tolerance).with_note("no interior sample carries a pairwise report")
        } else {
            Check::new("dissipation_consistency", worst(rows.iter().map(|r| r.relative_error)), c.consistency_tolerance)
        });
    }
    if c.inequalities {
        let reports: Vec<&DissipationReport> = traj.samples.iter().filter_map(|s| s.dissipation.as_ref()).collect();
        let rel = |m: f64, scale: f64| -m / scale.abs().max(f64::MIN_POSITIVE);
        checks.push(Check::new(
            "sph_over_rsph",
            worst(reports.iter().map(|r| rel(r.margins.sph_over_rsph, r.raw.d_sph))),
            c.inequality_tolerance,
        ));
        checks.push(Check::new(
            "lemma",
            worst(reports.iter().map(|r| rel(r.margins.lemma, r.raw.d_par.abs() + r.raw.d_sph.abs() + r.j1.abs() + r.j2.abs()))),
            c.inequality_tolerance,
        ));
        checks.push(Check::new(
            "j2_bound",
            worst(reports.iter().map(|r| rel(r.margins.j2_bound, r.margins.j2_bound + r.j2.abs()))),
            c.inequality_tolerance,
        ));
        if let Some(c0) = coercivity {
            let rows = theorem_margins(traj, c0);
            let excess = worst(rows.iter().map(|(_, m)| {
                let flow = m.flow_margin.unwrap_or(f64::INFINITY);
                -(m.margin.min(flow)) / m.dominant.max(f64::MIN_POSITIVE)
            }));
            checks.push(Check::new("theorem_margin", excess, c.theorem_tolerance).with_note(format!("coercivity infimum {c0}")));
        }
    }
    checks
}

pub fn simulate(opts: &SimulateOptions, out: &mut dyn Write, err: &mut dyn Write) -> Status {
    let text = match std::fs::read_to_string(&opts.config) {
        Ok(t) => t,
        Err(e) => {
            let _ = writeln!(err, "cannot read config {}: {e}", opts.config.display());
            return Status::InputError;
        }
    };
    let mut cfg = match RunConfig::parse(&text) {
        Ok(c) => c,
        Err(e) => {
            let _ = writeln!(err, "{}: {e}", opts.config.display());
            return Status::InputError;
        }
    };
    if let Some(s) = opts.seed {
        cfg.seed = s;
    }
    if let Some(g) = opts.gamma {
        cfg.kernel.gamma = g;
    }
    if let Some(d) = &opts.out_dir {
        cfg.out = d.display().to_string();
    }
    if let Err((section, key, message)) = cfg.validate() {
        let e = ConfigError { line: crate::config::key_line(&text, section, key), message };
        let _ = writeln!(err, "{}: {e}", opts.config.display());
        return Status::InputError;
    }
    simulate_config(&cfg, opts.tol_scale, out, err)
}

/// Run a parsed configuration and write series, snapshots and summary.
pub fn simulate_config(cfg: &RunConfig, tol_scale: f64, out: &mut dyn Write, err: &mut dyn Write) -> Status {
    let input = |e: Error, err: &mut dyn Write| {
        let _ = writeln!(err, "input error: {e}");
        Status::InputError
    };
    let spec = match cfg.kernel_spec() {
        Ok(s) => s,
        Err(e) => return input(e, err),
    };
    let (f0, initial) = match cfg.initial_density() {
        Ok(x) => x,
        Err(e) => return input(e, err),
    };
    let coercivity = if cfg.checks.inequalities {
        match initial_coercivity(&f0, &spec) {
            Ok(c) => Some(c),
            Err(e) => return input(e, err),
        }
    } else {
        None
    };
    let traj = match run_from(f0, initial, &spec, cfg.time.t_end, &cfg.controls()) {
        Ok(t) => t,
        Err(e) if is_numerical(&e) => {
            let _ = writeln!(err, "numerical abort: {e}");
            return Status::NumericalAbort;
        }
        Err(e) => return input(e, err),
    };
    let dir = Path::new(&cfg.out);
    if let Err(e) = std::fs::create_dir_all(dir) {
        let _ = writeln!(err, "cannot create output directory {}: {e}", dir.display());
        return Status::InputError;
    }
    let io_fail = |e: crate::snapshot::SnapshotError, err: &mut dyn Write| {
        let _ = writeln!(err, "{e}");
        Status::InputError
    };
    if let Err(e) = write_atomic(&dir.join("series.csv"), series_csv(&traj, cfg.time.dissipation_stride > 0).as_bytes()) {
        return io_fail(e, err);
    }
    let mut snapshot_files = Vec::new();
    for (k, (t, f)) in traj.snapshots.iter().enumerate() {
        let name = format!("snapshot_{k:03}.lfsh");
        let snap = Snapshot { density: f.clone(), gamma: spec.gamma(), t: *t };
        if let Err(e) = snap.save(&dir.join(&name)) {
            return io_fail(e, err);
        }
        snapshot_files.push(Value::String(name));
    }

    let mut summary = Table::new();
    let mut run = Table::new();
    run.insert("seed".into(), Value::Integer(i64::try_from(cfg.seed).unwrap_or(i64::MAX)));
    run.insert("n".into(), Value::Integer(cfg.grid.n as i64));
    run.insert("extent".into(), Value::Float(cfg.grid.extent));
    run.insert("gamma".into(), Value::Float(spec.gamma()));
    run.insert("epsilon".into(), Value::Float(spec.epsilon()));
    run.insert("t_end".into(), Value::Float(cfg.time.t_end));
    run.insert("steps".into(), Value::Integer(traj.samples.len() as i64 - 1));
    run.insert("snapshots".into(), Value::Array(snapshot_files));
    summary.insert("run".into(), Value::Table(run));
    summary.insert(
        "initial".into(),
        Value::Table(float_table(&[
            ("mass", traj.initial.mass),
            ("energy", traj.initial.energy),
            ("entropy", traj.initial.entropy),
            ("abs_moment", traj.initial.moment),
        ])),
    );
    let last = traj.samples.last().expect("a run has samples");
    let mut fin = match state_table(&traj.final_density, spec.gamma()) {
        Ok(t) => t,
        Err(e) => return input(e, err),
    };
    fin.insert("t".into(), Value::Float(last.t));
    fin.insert("clipped_mass_total".into(), Value::Float(traj.samples.iter().map(|s| s.clipped_mass).sum()));
    if let Some(r) = &last.dissipation {
        fin.insert("dissipation".into(), Value::Table(dissipation_table(r)));
    }
    summary.insert("final".into(), Value::Table(fin));

    let checks = run_checks(cfg, &traj, coercivity);
    let mut lines = Vec::new();
    let status = report_checks(&checks, tol_scale, &mut summary, &mut lines);
    let summary_text = toml::to_string(&summary).expect("summary serialises");
    if let Err(e) = write_atomic(&dir.join("summary.toml"), summary_text.as_bytes()) {
        return io_fail(e, err);
    }
    let _ = out.write_all(summary_text.as_bytes());
    let _ = out.write_all(&lines);
    status
}

/// Options of `analyze`.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalyzeOptions {
    pub snapshot: PathBuf,
    pub gamma: Option<f64>,
    pub pairs: bool,
    pub coercivity: bool,
    pub brute_force: bool,
    pub tol_scale: f64,
}

/// Relative agreement required between the fast and definitional pair sums.
pub const BRUTE_FORCE_TOLERANCE: f64 = 1e-12;

/// Largest relative difference over every pairwise functional, each measured
/// against the larger of the two values and the natural size of its integrand.
pub fn report_difference(a: &DissipationReport, b: &DissipationReport) -> f64 {
    let first = a.first_order_scale.max(b.first_order_scale);
    let second = a.second_order_scale.max(b.second_order_scale);
    let mut pairs = vec![(a.entropy_dissipation, b.entropy_dissipation, first), (a.j1, b.j1, second), (a.j2, b.j2, second)];
    for (x, y) in [(&a.raw, &b.raw), (&a.cutoff, &b.cutoff)] {
        pairs.extend([
            (x.d_par, y.d_par, second),
            (x.d_rad, y.d_rad, second),
            (x.d_sph, y.d_sph, second),
            (x.r_sph, y.r_sph, second),
            (x.correction, y.correction, second),
        ]);
    }
    worst(pairs.into_iter().map(|(x, y, s)| {
        let scale = x.abs().max(y.abs()).max(s);
        if scale > 0.0 {
            (x - y).abs() / scale
        } else {
            0.0
        }
    }))
}

pub fn analyze(opts: &AnalyzeOptions, out: &mut dyn Write, err: &mut dyn Write) -> Status {
    let snap = match Snapshot::load(&opts.snapshot) {
        Ok(s) => s,
        Err(e) => {
            let _ = writeln!(err, "{}: {e}", opts.snapshot.display());
            return Status::InputError;
        }
    };
    let gamma = opts.gamma.unwrap_or(snap.gamma);
    let spec = match KernelSpec::new(gamma) {
        Ok(s) => s,
        Err(e) => {
            let _ = writeln!(err, "input error: {e}");
            return Status::InputError;
        }
    };
    let grid = *snap.density.grid();
    let mut doc = Table::new();
    let mut head = Table::new();
    head.insert("n".into(), Value::Integer(grid.n() as i64));
    head.insert("extent".into(), Value::Float(grid.extent()));
    head.insert("gamma".into(), Value::Float(gamma));
    head.insert("t".into(), Value::Float(snap.t));
    doc.insert("snapshot".into(), Value::Table(head));
    match state_table(&snap.density, gamma) {
        Ok(t) => doc.insert("state".into(), Value::Table(t)),
        Err(e) => {
            let _ = writeln!(err, "input error: {e}");
            return Status::InputError;
        }
    };
    let mut checks = Vec::new();
    if opts.pairs || opts.brute_force || opts.coercivity {
        let ctx = match PairContext::new(snap.density.clone(), spec) {
            Ok(c) => c,
            Err(e) => {
                let _ = writeln!(err, "input error: {e}");
                return Status::InputError;
            }
        };
        if opts.pairs || opts.brute_force {
            let fast = fisher_dissipation_terms(&ctx);
            doc.insert("dissipation".into(), Value::Table(dissipation_table(&fast)));
            if opts.brute_force {
                let brute = brute_force_report(&ctx);
                doc.insert("brute_force".into(), Value::Table(dissipation_table(&brute)));
                checks.push(Check::new("brute_force_agreement", report_difference(&fast, &brute), BRUTE_FORCE_TOLERANCE));
            }
        }
        if opts.coercivity {
            let scan = coercivity_scan(&ctx);
            let mut t = Table::new();
            t.insert("infimum".into(), Value::Float(scan.infimum));
            t.insert("argmin_velocity".into(), vec3_value(&grid.center(scan.argmin_cell)));
            doc.insert("coercivity".into(), Value::Table(t));
        }
    }
    print_table(out, &doc);
    if checks.is_empty() {
        return Status::Pass;
    }
    let mut summary = Table::new();
    report_checks(&checks, opts.tol_scale, &mut summary, out)
}

/// Options of `gamma2`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gamma2Options {
    pub probe: ProbeConfig,
    pub tol_scale: f64,
}

/// Lower bound the descent minimum must respect.
pub const GAMMA2_THRESHOLD: f64 = 5.4;
/// Allowed deviation of the linearised ratios from the eigenvalues 6 and 2.
pub const LINEARISED_TOLERANCE: f64 = 0.05;

pub fn gamma2(opts: &Gamma2Options, out: &mut dyn Write, err: &mut dyn Write) -> Status {
    let cfg = &opts.probe;
    let grid = match SphereGrid::new(cfg.n_theta, cfg.n_phi) {
        Ok(g) => g,
        Err(e) => {
            let _ = writeln!(err, "input error: {e}");
            return Status::InputError;
        }
    };
    let ratio_of = |symmetric: bool, l: usize| -> crate::Result<f64> {
        let mut y = vec![0.0; harmonic_count(l)];
        let field = SphereField::from_fn(grid.clone(), symmetric, |x| {
            real_harmonics(l, x, &mut y);
            1.0 + 1e-3 * y[crate::sphere::harmonic_index(l, 0)]
        })?;
        Ok(gamma2_ratio(&field)?.ratio)
    };
    let (r2, r1) = match (ratio_of(true, 2), ratio_of(false, 1)) {
        (Ok(a), Ok(b)) => (a, b),
        (Err(e), _) | (_, Err(e)) => {
            let _ = writeln!(err, "input error: {e}");
            return Status::InputError;
        }
    };
    let probe = match probe_minimum_with(cfg) {
        Ok(p) => p,
        Err(e) => {
            let _ = writeln!(err, "input error: {e}");
            return Status::InputError;
        }
    };
    let mut doc = Table::new();
    let mut t = Table::new();
    t.insert("seeds".into(), Value::Integer(cfg.seed_count as i64));
    t.insert("max_degree".into(), Value::Integer(cfg.max_degree as i64));
    t.insert("steps".into(), Value::Integer(cfg.steps as i64));
    t.insert("base_seed".into(), Value::Integer(i64::try_from(cfg.base_seed).unwrap_or(i64::MAX)));
    t.insert("n_theta".into(), Value::Integer(cfg.n_theta as i64));
    t.insert("n_phi".into(), Value::Integer(cfg.n_phi as i64));
    t.insert("linearised_l2_symmetric".into(), Value::Float(r2));
    t.insert("linearised_l1".into(), Value::Float(r1));
    t.insert("min_ratio".into(), Value::Float(probe.min_ratio));
    t.insert("argmin".into(), Value::String(probe.describe()));
    t.insert("per_seed".into(), Value::Array(probe.per_seed.iter().map(|x| Value::Float(*x)).collect()));
    doc.insert("gamma2".into(), Value::Table(t));
    print_table(out, &doc);
    let checks = vec![
        Check::new("linearised_l2_symmetric", (r2 - 6.0).abs(), LINEARISED_TOLERANCE),
        Check::new("linearised_l1", (r1 - 2.0).abs(), LINEARISED_TOLERANCE),
        Check::new("probe_minimum", GAMMA2_THRESHOLD - probe.min_ratio, 0.0),
    ];
    let mut summary = Table::new();
    report_checks(&checks, opts.tol_scale, &mut summary, out)
}

/// Inputs of the self-test; the kernel blend is injectable for fault testing.
#[derive(Debug, Clone, PartialEq)]
pub struct SelftestOptions {
    pub eta: EtaBlend,
    pub samples: usize,
    pub seed: u64,
}

impl Default for SelftestOptions {
    fn default() -> Self {
        Self { eta: EtaBlend::default(), samples: 10_000, seed: 12345 }
    }
}

fn random_vec(rng: &mut ChaCha8Rng, r: f64) -> Vec3 {
    [rng.random_range(-r..r), rng.random_range(-r..r), rng.random_range(-r..r)]
}

pub fn selftest(opts: &SelftestOptions, out: &mut dyn Write) -> Status {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut checks = Vec::new();

    let mut worst_identity = 0.0f64;
    for _ in 0..opts.samples {
        let (v, w) = (random_vec(&mut rng, 3.0), random_vec(&mut rng, 3.0));
        let g: [f64; 6] = std::array::from_fn(|_| rng.random_range(-5.0..5.0));
        let g2: f64 = g.iter().map(|x| x * x).sum();
        match decomposition_identity_check(&g, &v, &w) {
            Ok(r) => worst_identity = worst_identity.max(r.abs() / g2),
            Err(_) => continue,
        }
    }
    checks.push(Check::new("decomposition_identity", worst_identity, 1e-12));

    let (mut worst_bb, mut worst_trace) = (0.0f64, 0.0f64);
    for _ in 0..opts.samples {
        let z = random_vec(&mut rng, 4.0);
        let r2 = norm2(&z);
        let a = a_matrix(&z);
        let b: Vec<Vec3> = (0..3).map(|k| b_field(k, &z).expect("k < 3")).collect();
        for i in 0..3 {
            for j in 0..3 {
                let s: f64 = b.iter().map(|bk| bk[i] * bk[j]).sum();
                worst_bb = worst_bb.max((a.get(i, j) - s).abs() / r2);
            }
        }
        worst_trace = worst_trace.max((a.trace() - 2.0 * r2).abs() / r2);
    }
    checks.push(Check::new("a_equals_sum_b_bt", worst_bb, 1e-14));
    checks.push(Check::new("trace_a_equals_2_z2", worst_trace, 1e-14));

    let mut worst_gl = 0.0f64;
    for n in [4usize, 8, 16, 32] {
        let (x, w) = gauss_legendre(n);
        for p in 0..2 * n {
            let got: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(p as i32)).sum();
            let exact = if p % 2 == 0 { 2.0 / (p as f64 + 1.0) } else { 0.0 };
            worst_gl = worst_gl.max((got - exact).abs());
        }
    }
    let sg = SphereGrid::new(12, 24).expect("valid sphere grid");
    let lmax = sg.max_degree() / 2;
    let nb = harmonic_count(lmax);
    let mut table = vec![vec![0.0; nb]; sg.len()];
    for (p, x) in sg.nodes().iter().enumerate() {
        real_harmonics(lmax, x, &mut table[p]);
    }
    for a in 0..nb {
        for b in 0..nb {
            let s: f64 = (0..sg.len()).map(|p| sg.weights()[p] * table[p][a] * table[p][b]).sum();
            worst_gl = worst_gl.max((s - if a == b { 1.0 } else { 0.0 }).abs());
        }
    }
    checks.push(Check::new("quadrature_exactness", worst_gl, 1e-12));

    let roundtrip = crate::grid::make_grid(6, 3.0)
        .and_then(|g| crate::grid::Density::from_fn(g, |v| (-norm2(&v) / 3.0).exp() * (1.0 + 0.1 * v[0].sin())))
        .map(|density| {
            let snap = Snapshot { density, gamma: -3.0, t: 0.1 };
            match Snapshot::from_bytes(&snap.to_bytes()) {
                Ok(back) if back.density.values().iter().zip(snap.density.values()).all(|(a, b)| a.to_bits() == b.to_bits()) => 0.0,
                _ => 1.0,
            }
        })
        .unwrap_or(1.0);
    checks.push(Check::new("snapshot_round_trip", roundtrip, 0.0));

    let eta = opts.eta.self_test();
    let _ = writeln!(out, "measured sup eta'' = {}", eta.sup_second_derivative);
    let eta_check = Check::new("eta_kernel", eta.failures.len() as f64, 0.0);
    checks.push(if eta.passed() { eta_check } else { eta_check.with_note(eta.failures.join("; ")) });

    let mut summary = Table::new();
    report_checks(&checks, 1.0, &mut summary, out)
}
