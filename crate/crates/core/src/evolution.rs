//! Time integration, the initial-data library, trajectory records and the
//! trajectory-level checks.

use crate::error::{Error, Result};
use crate::functionals::{
    bracket_moment, cauchy_schwarz_chain, fisher, hydrodynamics, weighted_hessian_functional, CauchySchwarzChain,
    HydrodynamicState,
};
use crate::grid::{integrate, japanese_bracket, Density, Domain, VelocityGrid, WeightedNorm, weighted_lp_norm};
use crate::kernel::KernelSpec;
use crate::linalg::{norm2, Vec3};
use crate::numeric::pairwise_sum;
use crate::operator::{frozen_divergence_q, max_diffusivity, CoefficientFields, FluxForm, KernelBank};
use crate::pair::{coercivity_scan, dissipation_inequality_check, fisher_dissipation_terms, DissipationReport, PairContext};

/// One Maxwellian population.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Population {
    pub mass: f64,
    pub mean: Vec3,
    pub temperature: f64,
}

/// Closed-form initial densities.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialShape {
    Maxwellian(Population),
    /// Sum of Maxwellian populations.
    BiMaxwellian(Vec<Population>),
    /// `A [exp(1 - 1 / (1 - |v - c|^2 / R^2)) + beta exp(-2 |v - c|^2 / R^2)]`,
    /// the first term taken as zero outside the ball.
    Bump { amplitude: f64, center: Vec3, radius: f64, background: f64 },
    /// `M_T (1 + a (v1^2 - (v2^2 + v3^2)/2) / T exp(-|v|^2 / (4T)))`; positive for
    /// `a < e/4` and with the moments of `M_T` up to second order.
    PerturbedMaxwellian { mass: f64, temperature: f64, amplitude: f64 },
}

/// Initial datum with optional mass normalisation and moment bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialData {
    pub shape: InitialShape,
    /// Rescale the sampled density to exactly this discrete mass.
    pub target_mass: Option<f64>,
    /// Upper bound expected for `int f |v|^(2 - gamma)`, checked when set.
    pub moment_bound: Option<f64>,
    /// Exponent `gamma` used for the recorded moment `W0`.
    pub gamma: f64,
}

impl InitialData {
    pub fn new(shape: InitialShape) -> Self {
        Self { shape, target_mass: None, moment_bound: None, gamma: -3.0 }
    }

    pub fn maxwellian(mass: f64, temperature: f64) -> Self {
        Self::new(InitialShape::Maxwellian(Population { mass, mean: [0.0; 3], temperature }))
    }

    pub fn perturbed_maxwellian(mass: f64, temperature: f64, amplitude: f64) -> Self {
        Self::new(InitialShape::PerturbedMaxwellian { mass, temperature, amplitude })
    }
}

/// `M0, E0, H0, W0` of a sampled initial datum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitialReport {
    pub mass: f64,
    pub energy: f64,
    pub entropy: f64,
    /// `int f |v|^(2 - gamma)`.
    pub moment: f64,
}

fn maxwellian_value(p: &Population, v: &Vec3) -> f64 {
    let d = [v[0] - p.mean[0], v[1] - p.mean[1], v[2] - p.mean[2]];
    p.mass * (2.0 * std::f64::consts::PI * p.temperature).powf(-1.5) * (-norm2(&d) / (2.0 * p.temperature)).exp()
}

fn check_population(p: &Population) -> Result<()> {
    if !(p.temperature > 0.0 && p.temperature.is_finite()) {
        return Err(Error::OutOfRange(format!("temperature must be positive, got {}", p.temperature)));
    }
    if !(p.mass > 0.0 && p.mass.is_finite()) {
        return Err(Error::OutOfRange(format!("population mass must be positive, got {}", p.mass)));
    }
    Ok(())
}

/// Sample the datum at cell centres.
pub fn make_initial(data: &InitialData, grid: VelocityGrid) -> Result<(Density, InitialReport)> {
    let sampler: Box<dyn Fn(&Vec3) -> f64> = match &data.shape {
        InitialShape::Maxwellian(p) => {
            check_population(p)?;
            let p = *p;
            Box::new(move |v| maxwellian_value(&p, v))
        }
        InitialShape::BiMaxwellian(pops) => {
            if pops.is_empty() {
                return Err(Error::OutOfRange("at least one population is required".into()));
            }
            for p in pops {
                check_population(p)?;
            }
            let pops = pops.clone();
            Box::new(move |v| pops.iter().map(|p| maxwellian_value(p, v)).sum())
        }
        InitialShape::Bump { amplitude, center, radius, background } => {
            if !(*amplitude > 0.0 && *radius > 0.0) {
                return Err(Error::OutOfRange("bump amplitude and radius must be positive".into()));
            }
            if !(*background >= 0.0 && background.is_finite()) {
                return Err(Error::OutOfRange(format!("bump background must be nonnegative, got {background}")));
            }
            let (a, c, r, beta) = (*amplitude, *center, *radius, *background);
            Box::new(move |v| {
                let s = norm2(&[v[0] - c[0], v[1] - c[1], v[2] - c[2]]) / (r * r);
                let core = if s < 1.0 { (1.0 - 1.0 / (1.0 - s)).exp() } else { 0.0 };
                a * (core + beta * (-2.0 * s).exp())
            })
        }
        InitialShape::PerturbedMaxwellian { mass, temperature, amplitude } => {
            let base = Population { mass: *mass, mean: [0.0; 3], temperature: *temperature };
            check_population(&base)?;
            if !(*amplitude >= 0.0 && *amplitude < std::f64::consts::E / 4.0) {
                return Err(Error::OutOfRange(format!("perturbation amplitude must lie in [0, e/4), got {amplitude}")));
            }
            let (a, t) = (*amplitude, *temperature);
            Box::new(move |v| {
                let shape = (v[0] * v[0] - 0.5 * (v[1] * v[1] + v[2] * v[2])) / t * (-norm2(v) / (4.0 * t)).exp();
                maxwellian_value(&base, v) * (1.0 + a * shape)
            })
        }
    };
    let mut f = Density::from_fn(grid, |v| sampler(&v))?;
    if let Some(m) = data.target_mass {
        if !(m > 0.0) {
            return Err(Error::OutOfRange(format!("target mass must be positive, got {m}")));
        }
        f = f.scaled(m / f.require_mass()?)?;
    }
    f.require_mass()?;
    let state = hydrodynamics(&f);
    let p = 2.0 - data.gamma;
    let w: Vec<f64> = f.values().iter().enumerate().map(|(c, x)| x * norm2(&grid.center(c)).powf(p / 2.0)).collect();
    let moment = integrate(&grid, &w)?;
    if let Some(bound) = data.moment_bound {
        if moment > bound {
            return Err(Error::OutOfRange(format!("initial moment {moment} exceeds the requested bound {bound}")));
        }
    }
    Ok((f, InitialReport { mass: state.mass, energy: state.energy, entropy: state.entropy, moment }))
}

/// Time discretisation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Scheme {
    /// Forward Euler on the conservative flux form.
    #[default]
    Explicit,
    /// Backward Euler with coefficients frozen at the start of the step.
    SemiImplicit,
}

/// Result of one step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub density: Density,
    /// Mass removed by clipping negative values.
    pub clipped_mass: f64,
    /// Largest explicit step allowed at the start of the step.
    pub admissible_dt: f64,
}

/// Stepper with kernel spectra reused across steps.
#[derive(Debug)]
pub struct Stepper {
    bank: KernelBank,
    spec: KernelSpec,
    pub form: FluxForm,
    pub scheme: Scheme,
    pub cfl_safety: f64,
    pub solver_tolerance: f64,
    pub solver_max_iterations: usize,
}

/// `h^2 / (6 lambda_max(A))`.
pub fn cfl_bound(grid: &VelocityGrid, coeffs: &CoefficientFields) -> f64 {
    let h = grid.spacing();
    h * h / (6.0 * max_diffusivity(coeffs))
}

impl Stepper {
    pub fn new(grid: VelocityGrid, spec: KernelSpec) -> Self {
        Self {
            bank: KernelBank::new(grid, &spec),
            spec,
            form: FluxForm::default(),
            scheme: Scheme::default(),
            cfl_safety: 0.5,
            solver_tolerance: 1e-12,
            solver_max_iterations: 500,
        }
    }

    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    pub fn grid(&self) -> &VelocityGrid {
        self.bank.grid()
    }

    /// `cfl_safety * h^2 / (6 lambda_max(A[f]))`.
    pub fn admissible_dt(&self, f: &Density) -> Result<f64> {
        Ok(self.cfl_safety * cfl_bound(f.grid(), &self.bank.coefficients(f)?))
    }

    pub fn step(&self, f: &Density, dt: f64) -> Result<StepOutcome> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::OutOfRange(format!("time step must be positive, got {dt}")));
        }
        let grid = *f.grid();
        let (q, coeffs) = self.bank.collision(f, self.form)?;
        let admissible = self.cfl_safety * cfl_bound(&grid, &coeffs);
        let raw: Vec<f64> = match self.scheme {
            Scheme::Explicit => {
                if dt > admissible {
                    return Err(Error::Cfl { dt, admissible });
                }
                f.values().iter().zip(&q).map(|(x, d)| x + dt * d).collect()
            }
            Scheme::SemiImplicit => self.implicit_solve(&grid, &coeffs, f.values(), dt)?,
        };
        let negative: Vec<f64> = raw.iter().map(|x| x.min(0.0)).collect();
        let clipped_mass = -grid.cell_volume() * pairwise_sum(&negative);
        let values = raw.into_iter().map(|x| x.max(0.0)).collect();
        Ok(StepOutcome { density: Density::new(grid, values)?, clipped_mass, admissible_dt: admissible })
    }

    /// Solve `(I - dt L) u = f` by BiCGSTAB, `L` the frozen divergence operator.
    fn implicit_solve(&self, grid: &VelocityGrid, coeffs: &CoefficientFields, f: &[f64], dt: f64) -> Result<Vec<f64>> {
        let apply = |u: &[f64]| -> Vec<f64> {
            let lu = frozen_divergence_q(grid, coeffs, u);
            u.iter().zip(&lu).map(|(a, b)| a - dt * b).collect()
        };
        let dotp = |a: &[f64], b: &[f64]| pairwise_sum(&a.iter().zip(b).map(|(x, y)| x * y).collect::<Vec<_>>());
        let norm_f = dotp(f, f).sqrt();
        let mut x = f.to_vec();
        let ax = apply(&x);
        let mut r: Vec<f64> = f.iter().zip(&ax).map(|(a, b)| a - b).collect();
        let r0 = r.clone();
        let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
        let mut v = vec![0.0; f.len()];
        let mut p = vec![0.0; f.len()];
        let mut residual = dotp(&r, &r).sqrt() / norm_f;
        for _ in 0..self.solver_max_iterations {
            if residual <= self.solver_tolerance {
                return Ok(x);
            }
            let rho_new = dotp(&r0, &r);
            let beta = (rho_new / rho) * (alpha / omega);
            rho = rho_new;
            for i in 0..p.len() {
                p[i] = r[i] + beta * (p[i] - omega * v[i]);
            }
            v = apply(&p);
            alpha = rho / dotp(&r0, &v);
            let s: Vec<f64> = r.iter().zip(&v).map(|(a, b)| a - alpha * b).collect();
            let t = apply(&s);
            let tt = dotp(&t, &t);
            omega = if tt > 0.0 { dotp(&t, &s) / tt } else { 0.0 };
            for i in 0..x.len() {
                x[i] += alpha * p[i] + omega * s[i];
                r[i] = s[i] - omega * t[i];
            }
            residual = dotp(&r, &r).sqrt() / norm_f;
            if !residual.is_finite() || omega == 0.0 {
                break;
            }
        }
        if residual <= self.solver_tolerance {
            Ok(x)
        } else {
            Err(Error::SolverDiverged { iterations: self.solver_max_iterations, residual })
        }
    }
}

/// One explicit step with a freshly built kernel bank.
pub fn step(f: &Density, spec: &KernelSpec, dt: f64) -> Result<Density> {
    Ok(Stepper::new(*f.grid(), *spec).step(f, dt)?.density)
}

/// Compactly supported `C^2` test function
/// `psi(v) = A prod_k phi((v_k - c_k) / rho)`, `phi(s) = (1 - s^2)^3` on `|s| < 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TestFunction {
    pub amplitude: f64,
    pub center: Vec3,
    pub width: f64,
}

impl TestFunction {
    pub fn eval(&self, v: &Vec3) -> f64 {
        let mut p = self.amplitude;
        for k in 0..3 {
            let s = (v[k] - self.center[k]) / self.width;
            if s.abs() >= 1.0 {
                return 0.0;
            }
            p *= (1.0 - s * s).powi(3);
        }
        p
    }

    /// `sup_v max_ij |d_i d_j psi|`, attained on the diagonal: `|phi''(0)| = 6`, `|phi| <= 1`
    /// and `sup |phi'|^2 = 36 * 16 / (25 sqrt(5))^2 * 5 < 6`.
    pub fn hessian_sup(&self) -> f64 {
        6.0 * self.amplitude.abs() / (self.width * self.width)
    }

    pub fn integrate(&self, f: &Density) -> Result<f64> {
        let grid = f.grid();
        let w: Vec<f64> = f.values().iter().enumerate().map(|(c, x)| x * self.eval(&grid.center(c))).collect();
        integrate(grid, &w)
    }
}

/// Run settings.
#[derive(Debug, Clone, PartialEq)]
pub struct RunControls {
    /// Fixed step; `None` uses `cfl_safety` times the initial CFL bound.
    pub dt: Option<f64>,
    pub cfl_safety: f64,
    pub scheme: Scheme,
    pub form: FluxForm,
    /// Pairwise report every `k` steps (and at the last step); 0 disables it.
    pub dissipation_stride: usize,
    pub norms: Vec<WeightedNorm>,
    pub test_functions: Vec<TestFunction>,
    /// Allowed upward step of a monotone series, relative to its current value.
    pub monotone_tolerance: f64,
    /// Keep the density at the first step reaching each of these times.
    pub snapshot_times: Vec<f64>,
}

impl Default for RunControls {
    fn default() -> Self {
        Self {
            dt: None,
            cfl_safety: 0.5,
            scheme: Scheme::Explicit,
            form: FluxForm::default(),
            dissipation_stride: 10,
            norms: vec![WeightedNorm::new(1.0, 2.0).expect("valid norm"), WeightedNorm::sup(0.0)],
            test_functions: Vec::new(),
            monotone_tolerance: 1e-3,
            snapshot_times: Vec::new(),
        }
    }
}

/// Monitored quantities at one time.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub step: usize,
    pub t: f64,
    pub state: HydrodynamicState,
    pub fisher: f64,
    /// Values of `RunControls::norms`.
    pub norms: Vec<f64>,
    pub sup: f64,
    /// `int f <v>^(2 - gamma)`.
    pub moment: f64,
    /// Step size that produced this sample (0 at `t = 0`).
    pub dt: f64,
    pub clipped_mass: f64,
    pub floored_mass_fraction: f64,
    /// `int f psi` for each test function.
    pub test_integrals: Vec<f64>,
    pub dissipation: Option<DissipationReport>,
    pub chain: Option<CauchySchwarzChain>,
    pub weighted_hessian: Option<f64>,
}

/// Append-only record of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub spec: KernelSpec,
    pub grid: VelocityGrid,
    pub initial: InitialReport,
    pub samples: Vec<Sample>,
    pub test_functions: Vec<TestFunction>,
    pub entropy_monotone: bool,
    pub fisher_monotone: bool,
    pub monotone_tolerance: f64,
    /// Density at the final time.
    pub final_density: Density,
    /// `(t, f)` for each requested snapshot time, in request order.
    pub snapshots: Vec<(f64, Density)>,
}

impl TrajectoryRecord {
    pub fn times(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.t).collect()
    }

    pub fn fisher_series(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.fisher).collect()
    }

    pub fn entropy_series(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.state.entropy).collect()
    }

    /// Largest relative mass drift from `t = 0`.
    pub fn mass_drift(&self) -> f64 {
        let m0 = self.samples[0].state.mass;
        self.samples.iter().map(|s| (s.state.mass - m0).abs() / m0).fold(0.0, f64::max)
    }

    /// `(|P(T) - P(0)|, |E(T) - E(0)| / E(0))` at the final sample.
    pub fn conservation_drift(&self) -> (f64, f64) {
        let (a, b) = (&self.samples[0].state, &self.samples[self.samples.len() - 1].state);
        let dp = norm2(&[b.momentum[0] - a.momentum[0], b.momentum[1] - a.momentum[1], b.momentum[2] - a.momentum[2]]).sqrt();
        (dp / a.mass, (b.energy - a.energy).abs() / a.energy)
    }
}

/// Each upward step at most `tol` times the current magnitude.
pub fn is_monotone_nonincreasing(series: &[f64], tol: f64) -> bool {
    series.windows(2).all(|w| w[1] - w[0] <= tol * w[0].abs())
}

fn sample(
    f: &Density,
    spec: &KernelSpec,
    controls: &RunControls,
    step: usize,
    t: f64,
    dt: f64,
    clipped_mass: f64,
    with_pairs: bool,
) -> Result<Sample> {
    let fr = fisher(f);
    let norms = controls.norms.iter().map(|n| weighted_lp_norm(f, *n)).collect();
    let test_integrals = controls.test_functions.iter().map(|psi| psi.integrate(f)).collect::<Result<Vec<_>>>()?;
    let (dissipation, chain, weighted_hessian) = if with_pairs {
        let ctx = PairContext::new(f.clone(), *spec)?;
        (
            Some(fisher_dissipation_terms(&ctx)),
            Some(cauchy_schwarz_chain(f, spec.gamma(), Domain::Full)?),
            Some(weighted_hessian_functional(f, spec.gamma())?),
        )
    } else {
        (None, None, None)
    };
    Ok(Sample {
        step,
        t,
        state: hydrodynamics(f),
        fisher: fr.chosen,
        norms,
        sup: f.max_value(),
        moment: bracket_moment(f, 2.0 - spec.gamma()),
        dt,
        clipped_mass,
        floored_mass_fraction: fr.floored_mass_fraction,
        test_integrals,
        dissipation,
        chain,
        weighted_hessian,
    })
}

/// Fraction of the initial admissible step used when no step is prescribed.
pub const DT_HEADROOM: f64 = 0.9;

/// Integrate from the datum up to `t_end`.
pub fn run(data: &InitialData, grid: VelocityGrid, spec: &KernelSpec, t_end: f64, controls: &RunControls) -> Result<TrajectoryRecord> {
    let (f0, initial) = make_initial(data, grid)?;
    run_from(f0, initial, spec, t_end, controls)
}

/// Integrate an already sampled density.
pub fn run_from(
    f0: Density,
    initial: InitialReport,
    spec: &KernelSpec,
    t_end: f64,
    controls: &RunControls,
) -> Result<TrajectoryRecord> {
    if !(t_end > 0.0 && t_end.is_finite()) {
        return Err(Error::OutOfRange(format!("final time must be positive, got {t_end}")));
    }
    let grid = *f0.grid();
    let mut stepper = Stepper::new(grid, *spec);
    stepper.form = controls.form;
    stepper.scheme = controls.scheme;
    stepper.cfl_safety = controls.cfl_safety;
    let stride = controls.dissipation_stride;
    let wants_pairs = |s: usize, last: bool| stride > 0 && (s.is_multiple_of(stride) || last);
    let mut samples = vec![sample(&f0, spec, controls, 0, 0.0, 0.0, 0.0, wants_pairs(0, false))?];
    let mut pending: Vec<Option<f64>> = controls.snapshot_times.iter().map(|&t| Some(t)).collect();
    let mut snapshots: Vec<Option<(f64, Density)>> = vec![None; pending.len()];
    let mut capture = |t: f64, f: &Density| {
        for (slot, want) in snapshots.iter_mut().zip(pending.iter_mut()) {
            if want.is_some_and(|w| t >= w) {
                *slot = Some((t, f.clone()));
                *want = None;
            }
        }
    };
    capture(0.0, &f0);
    let mut f = f0;
    let mut t = 0.0;
    let mut s = 0;
    match controls.dt {
        Some(dt_target) => {
            // uniform steps landing exactly on t_end
            let steps = (t_end / dt_target).ceil().max(1.0) as usize;
            let dt = t_end / steps as f64;
            for k in 1..=steps {
                let out = stepper.step(&f, dt)?;
                f = out.density;
                let t = if k == steps { t_end } else { k as f64 * dt };
                capture(t, &f);
                samples.push(sample(&f, spec, controls, k, t, dt, out.clipped_mass, wants_pairs(k, k == steps))?);
            }
        }
        None => {
            // headroom for the bound to move during the step
            while t < t_end {
                let admissible = DT_HEADROOM * stepper.admissible_dt(&f)?;
                let remaining = t_end - t;
                let dt = remaining / (remaining / admissible).ceil().max(1.0);
                let out = stepper.step(&f, dt)?;
                f = out.density;
                s += 1;
                let last = dt >= remaining;
                t = if last { t_end } else { t + dt };
                capture(t, &f);
                samples.push(sample(&f, spec, controls, s, t, dt, out.clipped_mass, wants_pairs(s, last))?);
            }
        }
    }
    let entropy: Vec<f64> = samples.iter().map(|s| s.state.entropy).collect();
    let fisher_series: Vec<f64> = samples.iter().map(|s| s.fisher).collect();
    Ok(TrajectoryRecord {
        spec: *spec,
        grid,
        initial,
        entropy_monotone: is_monotone_nonincreasing(&entropy, controls.monotone_tolerance),
        fisher_monotone: is_monotone_nonincreasing(&fisher_series, controls.monotone_tolerance),
        monotone_tolerance: controls.monotone_tolerance,
        samples,
        test_functions: controls.test_functions.clone(),
        final_density: f,
        snapshots: snapshots.into_iter().flatten().collect(),
    })
}

/// Outcome of the Fisher decay check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FisherDecay {
    /// `max_t i(t) / (1 + 1/t)`.
    pub c0_fit: f64,
    /// `max i(t)` over the early window: a constant `C0` the early data certify.
    pub c0_early: f64,
    /// `max t i(t) / (1 + t)` over the early window.
    pub early_scaled_max: f64,
    /// `max t i(t) / (1 + t)` after the early window.
    pub late_scaled_max: f64,
    /// `i(t) <= 1.05 c0_early (1 + 1/t)` for every later sample.
    pub bound_pass: bool,
    /// `t i(t) / (1 + t) <= 1.05 early_scaled_max` for every later sample.
    pub shape_pass: bool,
    /// The shape condition, with a finite fitted constant.
    pub pass: bool,
}

/// Fraction of the run treated as the early window.
pub const EARLY_FRACTION: f64 = 0.25;
/// Allowed growth of the scaled series past its early maximum.
pub const DECAY_SLACK: f64 = 1.05;

/// Check `i(t) <= C0 (1 + 1/t)` on samples `(t, i)` with `t > 0`.
pub fn fisher_decay_check_series(t: &[f64], i: &[f64]) -> Result<FisherDecay> {
    let pts: Vec<(f64, f64)> = t.iter().zip(i).filter(|(t, _)| **t > 0.0).map(|(a, b)| (*a, *b)).collect();
    if pts.len() < 10 {
        return Err(Error::OutOfRange(format!("decay check needs at least 10 samples with t > 0, got {}", pts.len())));
    }
    let t_end = pts[pts.len() - 1].0;
    let early_end = pts.iter().position(|p| p.0 > EARLY_FRACTION * t_end).unwrap_or(pts.len()).max(1);
    let (early, late) = pts.split_at(early_end);
    let scaled = |p: &(f64, f64)| p.0 * p.1 / (1.0 + p.0);
    let c0_fit = pts.iter().map(scaled).fold(f64::NEG_INFINITY, f64::max);
    let c0_early = early.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    let early_scaled_max = early.iter().map(scaled).fold(f64::NEG_INFINITY, f64::max);
    let bound_pass = c0_fit.is_finite() && late.iter().all(|p| p.1 <= DECAY_SLACK * c0_early * (1.0 + 1.0 / p.0));
    let late_scaled_max = late.iter().map(scaled).fold(f64::NEG_INFINITY, f64::max);
    let shape_pass = late.iter().all(|p| scaled(p) <= DECAY_SLACK * early_scaled_max);
    Ok(FisherDecay { c0_fit, c0_early, early_scaled_max, late_scaled_max, bound_pass, shape_pass, pass: shape_pass && c0_fit.is_finite() })
}

pub fn fisher_decay_check(traj: &TrajectoryRecord) -> Result<FisherDecay> {
    fisher_decay_check_series(&traj.times(), &traj.fisher_series())
}

/// Margins of the differential inequality for the Fisher information.
#[derive(Debug, Clone, PartialEq)]
pub struct OdeCheck {
    pub c1: f64,
    pub c2_hat: f64,
    pub big_c1: f64,
    pub big_c2: f64,
    /// `(t, -di/dt - [c2 i^2 - C1 M i - C2 M^2], dominant term)` per interior sample.
    pub margins: Vec<(f64, f64, f64)>,
    /// Relative first Cauchy-Schwarz margins at the sampled reports.
    pub chain_margins: Vec<f64>,
    /// Fitted linear growth rate of `int f <v>^(2 - gamma)`.
    pub kappa: f64,
    /// `max_t W(t) / (W(0) + kappa t) - 1`.
    pub moment_excess: f64,
}

impl OdeCheck {
    pub fn worst_relative_margin(&self) -> f64 {
        self.margins.iter().map(|m| m.1 / m.2.max(f64::MIN_POSITIVE)).fold(f64::INFINITY, f64::min)
    }

    pub fn passes(&self, tol_fraction: f64, rho: f64) -> bool {
        self.margins.iter().all(|m| m.1 >= -tol_fraction * m.2) && self.moment_excess <= rho
    }
}

/// Centred differences of `i` against the quadratic lower bound, using the
/// coercivity infimum of `f(0)` for `c1`.
pub fn ode_inequality_check(traj: &TrajectoryRecord, coercivity: f64) -> OdeCheck {
    let spec = &traj.spec;
    let factor = spec.coercivity_factor();
    let gamma = spec.gamma();
    let pref = 2f64.powf(3.0 - gamma);
    let c1 = factor * coercivity;
    let big_c1 = factor * pref;
    let big_c2 = factor * spec.eta().laplacian_bound_constant(gamma) * pref;
    let w_sup = traj.samples.iter().map(|s| s.moment).fold(0.0, f64::max);
    let c2_hat = c1 / (3.0 * w_sup);
    let m0 = traj.initial.mass;
    let s = &traj.samples;
    let mut margins = Vec::new();
    for k in 1..s.len().saturating_sub(1) {
        let didt = -(s[k + 1].fisher - s[k - 1].fisher) / (s[k + 1].t - s[k - 1].t);
        let i = s[k].fisher;
        let rhs = c2_hat * i * i - big_c1 * m0 * i - big_c2 * m0 * m0;
        let dominant = [didt, c2_hat * i * i, big_c1 * m0 * i, big_c2 * m0 * m0].iter().fold(0.0f64, |a, x| a.max(x.abs()));
        margins.push((s[k].t, didt - rhs, dominant));
    }
    let chain_margins = s.iter().filter_map(|x| x.chain.map(|c| c.first_margin())).collect();
    // least-squares slope through the initial value
    let w0 = s[0].moment;
    let (num, den) = s.iter().fold((0.0, 0.0), |(n, d), x| (n + x.t * (x.moment - w0), d + x.t * x.t));
    let kappa = if den > 0.0 { (num / den).max(0.0) } else { 0.0 };
    let moment_excess = s.iter().map(|x| x.moment / (w0 + kappa * x.t) - 1.0).fold(f64::NEG_INFINITY, f64::max);
    OdeCheck { c1, c2_hat, big_c1, big_c2, margins, chain_margins, kappa, moment_excess }
}

/// Coercivity infimum of the initial density of a trajectory-ready datum.
pub fn initial_coercivity(f: &Density, spec: &KernelSpec) -> Result<f64> {
    Ok(coercivity_scan(&PairContext::new(f.clone(), *spec)?).infimum)
}

/// `sup_tau |int f(tau) psi - int f0 psi| / (tau^(1/2) |grad^2 psi|^(1/2))`.
pub fn holder_sup_ratio(traj: &TrajectoryRecord, which: usize) -> Result<f64> {
    let psi = traj
        .test_functions
        .get(which)
        .ok_or_else(|| Error::OutOfRange(format!("no test function {which} in the trajectory")))?;
    let base = traj.samples[0].test_integrals[which];
    let denom = psi.hessian_sup().sqrt();
    Ok(traj
        .samples
        .iter()
        .filter(|s| s.t > 0.0)
        .map(|s| (s.test_integrals[which] - base).abs() / (s.t.sqrt() * denom))
        .fold(0.0, f64::max))
}

/// Holder ratio on a trajectory and on its dt-halved refinement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HolderCheck {
    pub sup_ratio: f64,
    pub refined_sup_ratio: f64,
    pub pass: bool,
}

pub fn holder_initial_check(coarse: &TrajectoryRecord, refined: &TrajectoryRecord, which: usize) -> Result<HolderCheck> {
    let a = holder_sup_ratio(coarse, which)?;
    let b = holder_sup_ratio(refined, which)?;
    let stable = if a.max(b) > 0.0 { (a - b).abs() <= 0.2 * a.max(b) } else { true };
    Ok(HolderCheck { sup_ratio: a, refined_sup_ratio: b, pass: a.is_finite() && b.is_finite() && stable })
}

/// Per-sample comparison of `-di/dt` (centred difference) with the pairwise total.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DissipationConsistency {
    pub t: f64,
    pub finite_difference: f64,
    pub predicted: f64,
    pub relative_error: f64,
}

pub fn dissipation_consistency(traj: &TrajectoryRecord) -> Vec<DissipationConsistency> {
    let s = &traj.samples;
    (1..s.len().saturating_sub(1))
        .filter_map(|k| {
            let rep = s[k].dissipation.as_ref()?;
            let fd = -(s[k + 1].fisher - s[k - 1].fisher) / (s[k + 1].t - s[k - 1].t);
            let predicted = rep.fisher_dissipation_total;
            let scale = predicted.abs().max(fd.abs());
            let relative_error = if scale > 0.0 { (fd - predicted).abs() / scale } else { 0.0 };
            Some(DissipationConsistency { t: s[k].t, finite_difference: fd, predicted, relative_error })
        })
        .collect()
}

/// Theorem margins at every sample that carries a pairwise report.
pub fn theorem_margins(traj: &TrajectoryRecord, coercivity: f64) -> Vec<(f64, crate::pair::TheoremMargins)> {
    let s = &traj.samples;
    (0..s.len())
        .filter_map(|k| {
            let rep = s[k].dissipation.as_ref()?;
            let whf = s[k].weighted_hessian?;
            let flow = if k > 0 && k + 1 < s.len() {
                Some(-(s[k + 1].fisher - s[k - 1].fisher) / (s[k + 1].t - s[k - 1].t))
            } else {
                None
            };
            Some((s[k].t, dissipation_inequality_check(&traj.spec, rep, coercivity, whf, flow)))
        })
        .collect()
}

/// `<v>`-weighted moment used by the run records, exposed for reuse.
pub fn bracket_weight(v: &Vec3, power: f64) -> f64 {
    japanese_bracket(v).powf(power)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_grid;

    #[test]
    fn bimaxwellian_moments() {
        let pops = vec![
            Population { mass: 0.5, mean: [2.0, 0.0, 0.0], temperature: 0.5 },
            Population { mass: 0.5, mean: [-2.0, 0.0, 0.0], temperature: 0.5 },
        ];
        let (f, rep) = make_initial(&InitialData::new(InitialShape::BiMaxwellian(pops)), make_grid(32, 6.0).unwrap()).unwrap();
        let s = hydrodynamics(&f);
        assert!(s.momentum.iter().all(|p| p.abs() < 1e-10));
        assert!((rep.energy - 5.5).abs() < 1e-4, "{}", rep.energy);
        assert!((rep.mass - 1.0).abs() < 1e-6);
    }

    #[test]
    fn bump_has_empty_boundary_ring() {
        let grid = make_grid(16, 4.0).unwrap();
        let data = InitialData::new(InitialShape::Bump { amplitude: 1.0, center: [0.0; 3], radius: 2.5, background: 0.0 });
        let (f, _) = make_initial(&data, grid).unwrap();
        for c in 0..grid.len() {
            if !grid.is_interior(c, 2) {
                assert_eq!(f.values()[c], 0.0);
            }
        }
    }

    #[test]
    fn invalid_parameters() {
        let grid = make_grid(8, 4.0).unwrap();
        assert!(make_initial(&InitialData::maxwellian(1.0, -1.0), grid).is_err());
        assert!(make_initial(&InitialData::perturbed_maxwellian(1.0, 1.0, 2.0), grid).is_err());
        let bump = InitialData::new(InitialShape::Bump { amplitude: 0.0, center: [0.0; 3], radius: 1.0, background: 0.0 });
        assert!(make_initial(&bump, grid).is_err());
    }

    #[test]
    fn perturbation_keeps_low_moments() {
        let grid = make_grid(32, 8.0).unwrap();
        let (f, rep) = make_initial(&InitialData::perturbed_maxwellian(1.0, 1.0, 0.5), grid).unwrap();
        assert!((rep.mass - 1.0).abs() < 1e-6);
        assert!((rep.energy - 3.0).abs() < 1e-4);
        assert!(f.values().iter().all(|x| *x > 0.0));
    }

    #[test]
    fn target_mass_rescales_exactly() {
        let grid = make_grid(12, 4.0).unwrap();
        let data = InitialData { target_mass: Some(2.0), ..InitialData::maxwellian(1.0, 1.0) };
        let (f, _) = make_initial(&data, grid).unwrap();
        assert!((f.mass() - 2.0).abs() < 1e-14);
    }

    #[test]
    fn maxwellian_is_stationary_and_mass_is_conserved() {
        let grid = make_grid(12, 5.0).unwrap();
        let (f0, _) = make_initial(&InitialData::maxwellian(1.0, 1.0), grid).unwrap();
        let stepper = Stepper::new(grid, KernelSpec::new(-3.0).unwrap());
        let dt = 0.9 * stepper.admissible_dt(&f0).unwrap();
        let mut f = f0.clone();
        for _ in 0..100 {
            let m = f.mass();
            f = stepper.step(&f, dt).unwrap().density;
            assert!((f.mass() - m).abs() <= 1e-12 * m);
        }
        let diff: f64 = f.values().iter().zip(f0.values()).map(|(a, b)| (a - b).abs()).sum();
        let base: f64 = f0.values().iter().sum();
        assert!(diff / base <= 1e-3, "{}", diff / base);
    }

    #[test]
    fn cfl_violation_is_reported() {
        let grid = make_grid(10, 4.0).unwrap();
        let (f, _) = make_initial(&InitialData::maxwellian(1.0, 1.0), grid).unwrap();
        let stepper = Stepper::new(grid, KernelSpec::new(-3.0).unwrap());
        let dt = 10.0 * stepper.admissible_dt(&f).unwrap();
        match stepper.step(&f, dt) {
            Err(Error::Cfl { admissible, .. }) => assert!(admissible < dt),
            other => panic!("expected a CFL error, got {other:?}"),
        }
    }

    #[test]
    fn semi_implicit_step_conserves_mass_beyond_cfl() {
        let grid = make_grid(10, 4.0).unwrap();
        let (f, _) = make_initial(&InitialData::perturbed_maxwellian(1.0, 1.0, 0.5), grid).unwrap();
        let mut stepper = Stepper::new(grid, KernelSpec::new(-3.0).unwrap());
        stepper.scheme = Scheme::SemiImplicit;
        let dt = 4.0 * stepper.admissible_dt(&f).unwrap();
        let out = stepper.step(&f, dt).unwrap();
        let m = out.density.mass() - out.clipped_mass;
        assert!((m - f.mass()).abs() <= 1e-10 * f.mass(), "{} {} {}", m, f.mass(), out.clipped_mass);
    }

    #[test]
    fn decay_checker_examples() {
        // the scaled series of an equilibrium approaches i only for t >> 1
        let t: Vec<f64> = (0..=80).map(|k| k as f64).collect();
        let flat = vec![3.0; t.len()];
        let r = fisher_decay_check_series(&t, &flat).unwrap();
        assert!(r.pass);
        assert!(r.c0_fit < 3.0);
        let decaying: Vec<f64> = t.iter().map(|t| 0.2 + 5.0 / (t + 0.01)).collect();
        let r = fisher_decay_check_series(&t, &decaying).unwrap();
        assert!(r.pass && r.shape_pass);
        let rising: Vec<f64> = t.iter().map(|t| 1.0 + t).collect();
        let r = fisher_decay_check_series(&t, &rising).unwrap();
        assert!(!r.pass && !r.shape_pass);
        assert!(fisher_decay_check_series(&t[..5], &flat[..5]).is_err());
    }

    #[test]
    fn test_function_scaling() {
        let psi = TestFunction { amplitude: 1.0, center: [0.2, 0.0, -0.1], width: 1.5 };
        let psi4 = TestFunction { amplitude: 4.0, ..psi };
        assert_eq!(psi4.hessian_sup(), 4.0 * psi.hessian_sup());
        // the analytic sup dominates a finite-difference scan
        let h = 1e-4;
        let mut worst = 0.0f64;
        for a in -20..=20 {
            let x = 0.2 + a as f64 * 0.07;
            let v = [x, 0.0, -0.1];
            let d2 = (psi.eval(&[x + h, 0.0, -0.1]) - 2.0 * psi.eval(&v) + psi.eval(&[x - h, 0.0, -0.1])) / (h * h);
            worst = worst.max(d2.abs());
        }
        assert!(worst <= psi.hessian_sup() * (1.0 + 1e-6));
        assert!((worst - psi.hessian_sup()).abs() < 1e-3 * psi.hessian_sup());
    }
}
