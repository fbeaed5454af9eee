//! The ratio `int f Gamma_2(log f, log f) / int f |grad_sigma log f|^2` on `S^2`
//! and a descent search for small values of it over even densities.
//!
//! `log f` is extended zero-homogeneously off the sphere and differentiated
//! along the rotation fields `b_k(x) = e_k x x` by central differences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{add, cross, dot, norm2, scale, unit, Vec3};
use crate::numeric::pairwise_sum;
use crate::sphere::{harmonic_count, harmonic_index, real_harmonics, SphereField, SphereGrid};

/// Default step of the ambient central differences.
pub const DEFAULT_SHELL_STEP: f64 = 1e-3;

/// Denominators below this fraction of `int f` are treated as zero.
pub const DEGENERATE_THRESHOLD: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gamma2Ratio {
    pub ratio: f64,
    pub numerator: f64,
    pub denominator: f64,
}

/// Stencil points per node: 6 for first derivatives, 36 for the nested ones.
const RING: usize = 42;

fn b_field(k: usize, x: &Vec3) -> Vec3 {
    cross(&unit(k), x)
}

/// Stencil points around `x` in the order consumed by [`b_form_terms`].
fn b_stencil(x: &Vec3, h: f64, out: &mut Vec<Vec3>) {
    for k in 0..3 {
        let b = b_field(k, x);
        out.push(add(x, &scale(&b, h)));
        out.push(add(x, &scale(&b, -h)));
    }
    for i in 0..3 {
        let bi = b_field(i, x);
        for sign in [1.0, -1.0] {
            let y = add(x, &scale(&bi, sign * h));
            for j in 0..3 {
                let bj = b_field(j, &y);
                out.push(add(&y, &scale(&bj, h)));
                out.push(add(&y, &scale(&bj, -h)));
            }
        }
    }
}

/// `(sum_ij (b_i . grad (b_j . grad g))^2, sum_k (b_k . grad g)^2)` from stencil values.
fn b_form_terms(g: &[f64], h: f64) -> (f64, f64) {
    let mut den = 0.0;
    for k in 0..3 {
        let d = (g[2 * k] - g[2 * k + 1]) / (2.0 * h);
        den += d * d;
    }
    let mut num = 0.0;
    for i in 0..3 {
        let plus = &g[6 + 12 * i..6 + 12 * i + 6];
        let minus = &g[6 + 12 * i + 6..6 + 12 * i + 12];
        for j in 0..3 {
            let phi_p = (plus[2 * j] - plus[2 * j + 1]) / (2.0 * h);
            let phi_m = (minus[2 * j] - minus[2 * j + 1]) / (2.0 * h);
            let t = (phi_p - phi_m) / (2.0 * h);
            num += t * t;
        }
    }
    (num, den)
}

fn assemble(weights: &[f64], f: &[f64], terms: &[(f64, f64)]) -> Result<Gamma2Ratio> {
    let mass = pairwise_sum(&weights.iter().zip(f).map(|(w, v)| w * v).collect::<Vec<_>>());
    let numerator = pairwise_sum(&terms.iter().zip(weights.iter().zip(f)).map(|(t, (w, v))| w * v * t.0).collect::<Vec<_>>());
    let denominator = pairwise_sum(&terms.iter().zip(weights.iter().zip(f)).map(|(t, (w, v))| w * v * t.1).collect::<Vec<_>>());
    if !(denominator >= DEGENERATE_THRESHOLD * mass) {
        return Err(Error::Degenerate(format!(
            "int f |grad log f|^2 = {denominator:e} is below {DEGENERATE_THRESHOLD:e} int f"
        )));
    }
    Ok(Gamma2Ratio { ratio: numerator / denominator, numerator, denominator })
}

/// Ratio with `log f` resolved up to the grid's exact degree and the default shell step.
pub fn gamma2_ratio(f: &SphereField) -> Result<Gamma2Ratio> {
    gamma2_ratio_with(f, f.grid().max_degree(), DEFAULT_SHELL_STEP)
}

pub fn gamma2_ratio_with(f: &SphereField, lmax: usize, shell_step: f64) -> Result<Gamma2Ratio> {
    check_step(shell_step)?;
    let coeffs = f.log_coefficients(lmax);
    let grid = f.grid();
    let terms: Vec<(f64, f64)> = grid
        .nodes()
        .par_iter()
        .map(|x| {
            let mut pts = Vec::with_capacity(RING);
            b_stencil(x, shell_step, &mut pts);
            let mut y = vec![0.0; harmonic_count(lmax)];
            let g: Vec<f64> = pts.iter().map(|p| crate::sphere::synthesize(lmax, &coeffs, p, &mut y)).collect();
            b_form_terms(&g, shell_step)
        })
        .collect();
    assemble(grid.weights(), f.values(), &terms)
}

fn check_step(h: f64) -> Result<()> {
    if !(h > 0.0 && h < 0.1) {
        return Err(Error::OutOfRange(format!("shell step must lie in (0, 0.1), got {h}")));
    }
    Ok(())
}

/// The same ratio from `|P D^2 G P|_F^2 + |P grad G|^2`, with Cartesian
/// central differences of the extension `G`. For a zero-homogeneous `G` this
/// projected ambient Hessian is the covariant Hessian on the sphere.
pub fn gamma2_intrinsic(f: &SphereField) -> Result<Gamma2Ratio> {
    let lmax = f.grid().max_degree();
    let h = DEFAULT_SHELL_STEP;
    let coeffs = f.log_coefficients(lmax);
    let grid = f.grid();
    let terms: Vec<(f64, f64)> = grid
        .nodes()
        .par_iter()
        .map(|x| {
            let mut y = vec![0.0; harmonic_count(lmax)];
            let mut g = |p: Vec3| crate::sphere::synthesize(lmax, &coeffs, &p, &mut y);
            let g0 = g(*x);
            let mut grad = [0.0; 3];
            let mut hess = [[0.0; 3]; 3];
            for k in 0..3 {
                let e = scale(&unit(k), h);
                let (gp, gm) = (g(add(x, &e)), g(add(x, &scale(&e, -1.0))));
                grad[k] = (gp - gm) / (2.0 * h);
                hess[k][k] = (gp - 2.0 * g0 + gm) / (h * h);
                for l in k + 1..3 {
                    let d = scale(&unit(l), h);
                    let pp = g(add(&add(x, &e), &d));
                    let pm = g(add(&add(x, &e), &scale(&d, -1.0)));
                    let mp = g(add(&add(x, &scale(&e, -1.0)), &d));
                    let mm = g(add(&add(x, &scale(&e, -1.0)), &scale(&d, -1.0)));
                    hess[k][l] = (pp - pm - mp + mm) / (4.0 * h * h);
                    hess[l][k] = hess[k][l];
                }
            }
            let proj = |i: usize, j: usize| f64::from(u8::from(i == j)) - x[i] * x[j];
            let mut phess = [[0.0; 3]; 3];
            for i in 0..3 {
                for j in 0..3 {
                    let mut s = 0.0;
                    for a in 0..3 {
                        for b in 0..3 {
                            s += proj(i, a) * hess[a][b] * proj(b, j);
                        }
                    }
                    phess[i][j] = s;
                }
            }
            let pg: Vec3 = std::array::from_fn(|i| (0..3).map(|a| proj(i, a) * grad[a]).sum());
            let frob: f64 = phess.iter().flatten().map(|v| v * v).sum();
            (frob + norm2(&pg), norm2(&pg))
        })
        .collect();
    assemble(grid.weights(), f.values(), &terms)
}

/// Settings of the descent search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeConfig {
    pub seed_count: usize,
    /// Largest (even) harmonic degree of `log f`.
    pub max_degree: usize,
    pub steps: usize,
    pub base_seed: u64,
    pub n_theta: usize,
    pub n_phi: usize,
    /// Radius of the coefficient ball the iterates are projected onto.
    pub max_amplitude: f64,
    pub shell_step: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            seed_count: 20,
            max_degree: 6,
            steps: 60,
            base_seed: 2024,
            n_theta: 20,
            n_phi: 40,
            max_amplitude: 3.0,
            shell_step: DEFAULT_SHELL_STEP,
        }
    }
}

/// Outcome of the descent search.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeResult {
    pub min_ratio: f64,
    /// `(l, m, c)` for every coefficient of the minimiser's `log f`.
    pub coefficients: Vec<(usize, isize, f64)>,
    pub argmin_seed: u64,
    /// Best ratio reached from each seed.
    pub per_seed: Vec<f64>,
}

impl ProbeResult {
    pub fn describe(&self) -> String {
        let norm = self.coefficients.iter().map(|c| c.2 * c.2).sum::<f64>().sqrt();
        let lead = self
            .coefficients
            .iter()
            .max_by(|a, b| a.2.abs().total_cmp(&b.2.abs()))
            .map(|c| format!("largest coefficient Y_{}^{} = {:.4}", c.0, c.1, c.2))
            .unwrap_or_default();
        format!("seed {}, |c| = {:.4}, {}", self.argmin_seed, norm, lead)
    }
}

/// Ratio as a function of the even-degree coefficients of `log f`, with the
/// harmonics tabulated once at every node and stencil point.
struct EvenHarmonicObjective {
    labels: Vec<(usize, isize)>,
    weights: Vec<f64>,
    /// Row-major: for each node, the node itself then its stencil ring.
    table: Vec<f64>,
    h: f64,
}

impl EvenHarmonicObjective {
    fn new(grid: &SphereGrid, max_degree: usize, h: f64) -> Self {
        let labels: Vec<(usize, isize)> = (2..=max_degree)
            .step_by(2)
            .flat_map(|l| (-(l as isize)..=l as isize).map(move |m| (l, m)))
            .collect();
        let k = labels.len();
        let full = harmonic_count(max_degree);
        let rows: Vec<Vec<f64>> = grid
            .nodes()
            .par_iter()
            .map(|x| {
                let mut pts = vec![*x];
                b_stencil(x, h, &mut pts);
                let mut y = vec![0.0; full];
                let mut out = Vec::with_capacity(pts.len() * k);
                for p in &pts {
                    real_harmonics(max_degree, p, &mut y);
                    out.extend(labels.iter().map(|&(l, m)| y[harmonic_index(l, m)]));
                }
                out
            })
            .collect();
        Self { labels, weights: grid.weights().to_vec(), table: rows.concat(), h }
    }

    fn eval(&self, c: &[f64]) -> Result<f64> {
        let k = self.labels.len();
        let per_node = (RING + 1) * k;
        let mut f = Vec::with_capacity(self.weights.len());
        let mut terms = Vec::with_capacity(self.weights.len());
        let mut g = [0.0; RING + 1];
        for node in self.table.chunks(per_node) {
            for (gp, row) in g.iter_mut().zip(node.chunks(k)) {
                *gp = row.iter().zip(c).map(|(y, a)| y * a).sum();
            }
            f.push(g[0].exp());
            terms.push(b_form_terms(&g[1..], self.h));
        }
        Ok(assemble(&self.weights, &f, &terms)?.ratio)
    }
}

fn project_ball(c: &mut [f64], radius: f64) {
    let n = c.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > radius {
        c.iter_mut().for_each(|x| *x *= radius / n);
    }
}

/// Descent with the default settings.
pub fn probe_minimum(seed_count: usize, max_harmonic_degree: usize, steps: usize) -> Result<ProbeResult> {
    probe_minimum_with(&ProbeConfig { seed_count, max_degree: max_harmonic_degree, steps, ..ProbeConfig::default() })
}

/// Projected gradient descent on the ratio from `seed_count` random starts,
/// finite-difference gradients, backtracking steps. Deterministic per seed.
pub fn probe_minimum_with(cfg: &ProbeConfig) -> Result<ProbeResult> {
    if !cfg.max_degree.is_multiple_of(2) {
        return Err(Error::OutOfRange(format!("max harmonic degree must be even, got {}", cfg.max_degree)));
    }
    if cfg.seed_count == 0 {
        return Err(Error::OutOfRange("at least one seed is required".into()));
    }
    check_step(cfg.shell_step)?;
    let grid = SphereGrid::new(cfg.n_theta, cfg.n_phi)?;
    let obj = EvenHarmonicObjective::new(&grid, cfg.max_degree, cfg.shell_step);
    if obj.labels.is_empty() {
        return Err(Error::Degenerate("only constant densities are representable".into()));
    }
    let runs: Vec<Result<(f64, Vec<f64>)>> = (0..cfg.seed_count as u64)
        .into_par_iter()
        .map(|s| descend(&obj, cfg, cfg.base_seed.wrapping_add(s)))
        .collect();
    let mut per_seed = Vec::with_capacity(runs.len());
    let mut best: Option<(f64, Vec<f64>, u64)> = None;
    for (s, run) in runs.into_iter().enumerate() {
        let (r, c) = run?;
        per_seed.push(r);
        if best.as_ref().is_none_or(|b| r < b.0) {
            best = Some((r, c, cfg.base_seed.wrapping_add(s as u64)));
        }
    }
    let (min_ratio, c, argmin_seed) = best.expect("at least one seed");
    let coefficients = obj.labels.iter().zip(&c).map(|(&(l, m), &v)| (l, m, v)).collect();
    Ok(ProbeResult { min_ratio, coefficients, argmin_seed, per_seed })
}

fn descend(obj: &EvenHarmonicObjective, cfg: &ProbeConfig, seed: u64) -> Result<(f64, Vec<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = obj.labels.len();
    let mut c: Vec<f64> = (0..k).map(|_| rng.random_range(-1.0..1.0)).collect();
    let norm = c.iter().map(|x| x * x).sum::<f64>().sqrt();
    let start = rng.random_range(0.05..1.0) * cfg.max_amplitude;
    c.iter_mut().for_each(|x| *x *= start / norm);
    let mut val = obj.eval(&c)?;
    let mut step = 0.1;
    let fd = 1e-5;
    for _ in 0..cfg.steps {
        let mut grad = vec![0.0; k];
        for i in 0..k {
            let mut cp = c.clone();
            let mut cm = c.clone();
            cp[i] += fd;
            cm[i] -= fd;
            grad[i] = (obj.eval(&cp)? - obj.eval(&cm)?) / (2.0 * fd);
        }
        let gnorm = grad.iter().map(|x| x * x).sum::<f64>().sqrt();
        if gnorm < 1e-10 {
            break;
        }
        let mut accepted = false;
        let mut t = step;
        for _ in 0..30 {
            let mut trial: Vec<f64> = c.iter().zip(&grad).map(|(a, g)| a - t * g / gnorm).collect();
            project_ball(&mut trial, cfg.max_amplitude);
            let tv = obj.eval(&trial)?;
            if tv < val {
                c = trial;
                val = tv;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
        step = (2.0 * t).min(1.0);
    }
    Ok((val, c))
}

/// Rotation matrix from a unit axis and angle.
pub fn rotation(axis: &Vec3, angle: f64) -> [[f64; 3]; 3] {
    let n = norm2(axis).sqrt();
    let u = axis.map(|x| x / n);
    let (s, c) = angle.sin_cos();
    let mut r = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let cross_term = match (i, j) {
                (0, 1) => -u[2],
                (0, 2) => u[1],
                (1, 0) => u[2],
                (1, 2) => -u[0],
                (2, 0) => -u[1],
                (2, 1) => u[0],
                _ => 0.0,
            };
            r[i][j] = c * f64::from(u8::from(i == j)) + (1.0 - c) * u[i] * u[j] + s * cross_term;
        }
    }
    r
}

pub fn rotate(r: &[[f64; 3]; 3], x: &Vec3) -> Vec3 {
    [dot(&r[0], x), dot(&r[1], x), dot(&r[2], x)]
}
