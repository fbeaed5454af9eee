//! Coefficient fields `A[f]`, `b[f]`, the collision operator in divergence
//! form and the convolution sup-norm probe.

use rayon::prelude::*;

use crate::convolution::{direct_convolve, ConvolutionPlan, KernelSpectrum, OffsetKernel};
use crate::error::{Error, Result};
use crate::grid::{integrate, japanese_bracket, weighted_lp_norm, Density, VelocityGrid, WeightedNorm};
use crate::kernel::{cell_power_average, KernelSpec};
use crate::linalg::{norm2, Sym3, Vec3};

/// Per-cell `A[f]` and `b[f]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientFields {
    pub a: Vec<Sym3>,
    pub b: Vec<Vec3>,
}

/// How the flux `A[f] grad f - b[f] f` is assembled on faces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FluxForm {
    /// `A grad f - b f` with arithmetic-mean face coefficients.
    Divergence,
    /// `f_face sum_w K(v_face - w) f(w) (g_face - g(w))` with `g = grad log f`
    /// and `K = |z|^gamma a(z)` evaluated at the face centre. This is the same
    /// flux after integrating the drift by parts; since `a(z) z = 0` it
    /// vanishes identically on a grid Maxwellian.
    #[default]
    LogGradient,
}

/// Which component of the matrix kernel `|z|^gamma a(z)`, in `Sym3` order.
const SYM_PAIRS: [(usize, usize); 6] = [(0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2)];

/// Matrix kernel component `(|z|^gamma a(z))_{ij}` with the cell-averaged
/// centre value `(2/3) <|w|^(gamma+2)> delta_ij`.
#[derive(Debug, Clone, Copy)]
pub struct MatrixKernel {
    pub gamma: f64,
    pub i: usize,
    pub j: usize,
    pub centre: f64,
}

impl OffsetKernel for MatrixKernel {
    fn eval(&self, d: [isize; 3], z: &Vec3) -> f64 {
        if d == [0, 0, 0] {
            return if self.i == self.j { self.centre } else { 0.0 };
        }
        let r2 = norm2(z);
        let delta = if self.i == self.j { r2 } else { 0.0 };
        r2.powf(0.5 * self.gamma) * (delta - z[self.i] * z[self.j])
    }
}

/// Drift kernel component `-2 |z|^gamma z_i`; zero on the centre cell by symmetry.
#[derive(Debug, Clone, Copy)]
pub struct DriftKernel {
    pub gamma: f64,
    pub i: usize,
}

impl OffsetKernel for DriftKernel {
    fn eval(&self, d: [isize; 3], z: &Vec3) -> f64 {
        if d == [0, 0, 0] {
            return 0.0;
        }
        -2.0 * norm2(z).powf(0.5 * self.gamma) * z[self.i]
    }
}

/// Radial power `|z|^p` with the exact cell average at the centre.
#[derive(Debug, Clone, Copy)]
pub struct PowerKernel {
    pub p: f64,
    pub centre: f64,
}

impl PowerKernel {
    pub fn new(p: f64, h: f64) -> Self {
        Self { p, centre: cell_power_average(p, h) }
    }
}

impl OffsetKernel for PowerKernel {
    fn eval(&self, d: [isize; 3], z: &Vec3) -> f64 {
        if d == [0, 0, 0] {
            self.centre
        } else {
            norm2(z).powf(0.5 * self.p)
        }
    }
}

fn matrix_kernels(grid: &VelocityGrid, gamma: f64) -> [MatrixKernel; 6] {
    let centre = 2.0 / 3.0 * cell_power_average(gamma + 2.0, grid.spacing());
    SYM_PAIRS.map(|(i, j)| MatrixKernel { gamma, i, j, centre })
}

/// Matrix kernel component `(i, j)` at `y = z + (h/2) e_axis`, the displacement
/// from a source cell centre to the upper face of a cell. `y` never vanishes.
#[derive(Debug, Clone, Copy)]
pub struct FaceKernel {
    pub gamma: f64,
    pub i: usize,
    pub j: usize,
    pub axis: usize,
    pub half_step: f64,
}

impl OffsetKernel for FaceKernel {
    fn eval(&self, _d: [isize; 3], z: &Vec3) -> f64 {
        let mut y = *z;
        y[self.axis] += self.half_step;
        let r2 = norm2(&y);
        let delta = if self.i == self.j { r2 } else { 0.0 };
        r2.powf(0.5 * self.gamma) * (delta - y[self.i] * y[self.j])
    }
}

fn drift_kernels(gamma: f64) -> [DriftKernel; 3] {
    [0, 1, 2].map(|i| DriftKernel { gamma, i })
}

/// Precomputed kernel spectra for repeated coefficient evaluation on one grid.
#[derive(Debug)]
pub struct KernelBank {
    plan: ConvolutionPlan,
    gamma: f64,
    matrix: Vec<KernelSpectrum>,
    drift: Vec<KernelSpectrum>,
    /// `faces[axis][j]`: component `(axis, j)` of the face-shifted matrix kernel.
    faces: Vec<Vec<KernelSpectrum>>,
}

impl KernelBank {
    pub fn new(grid: VelocityGrid, spec: &KernelSpec) -> Self {
        let plan = ConvolutionPlan::new(grid);
        let gamma = spec.gamma();
        let matrix = matrix_kernels(&grid, gamma).iter().map(|k| plan.kernel_spectrum(k)).collect();
        let drift = drift_kernels(gamma).iter().map(|k| plan.kernel_spectrum(k)).collect();
        let half_step = 0.5 * grid.spacing();
        let faces = (0..3)
            .map(|axis| {
                (0..3)
                    .map(|j| plan.kernel_spectrum(&FaceKernel { gamma, i: axis, j, axis, half_step }))
                    .collect()
            })
            .collect();
        Self { plan, gamma, matrix, drift, faces }
    }

    pub fn grid(&self) -> &VelocityGrid {
        self.plan.grid()
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    fn check(&self, f: &Density) -> Result<()> {
        if !f.grid().same_shape(self.grid()) {
            return Err(Error::GridMismatch("density grid differs from the kernel bank grid".into()));
        }
        Ok(())
    }

    /// `A[f]` and `b[f]` by zero-padded FFT.
    pub fn coefficients(&self, f: &Density) -> Result<CoefficientFields> {
        self.check(f)?;
        let signal = self.plan.signal_spectrum(f.values());
        let comps: Vec<Vec<f64>> = self.matrix.par_iter().map(|k| self.plan.apply(&signal, k)).collect();
        let drift: Vec<Vec<f64>> = self.drift.par_iter().map(|k| self.plan.apply(&signal, k)).collect();
        Ok(assemble(comps, drift))
    }

    /// Face-centred flux assembly; see [`FluxForm::LogGradient`].
    fn log_gradient_q(&self, f: &Density) -> Result<Vec<f64>> {
        let grid = *f.grid();
        let values = f.values();
        let logs = f.log_derivatives();
        let weighted: Vec<Vec<f64>> =
            (0..3).map(|j| values.iter().zip(&logs.grad).map(|(x, g)| x * g[j]).collect()).collect();
        let f_hat = self.plan.signal_spectrum(values);
        let fg_hat: Vec<_> = weighted.par_iter().map(|w| self.plan.signal_spectrum(w)).collect();
        // per axis: the face row of A[f] and the face drift sum_j K_aj * (f g_j)
        let per_axis: Vec<(Vec<Vec<f64>>, Vec<f64>)> = (0..3)
            .into_par_iter()
            .map(|axis| {
                let row: Vec<Vec<f64>> = self.faces[axis].iter().map(|k| self.plan.apply(&f_hat, k)).collect();
                let mut acc = vec![rustfft::num_complex::Complex::new(0.0, 0.0); f_hat.len()];
                for (s, k) in fg_hat.iter().zip(&self.faces[axis]) {
                    for ((a, x), y) in acc.iter_mut().zip(s).zip(k.values()) {
                        *a += x * y;
                    }
                }
                (row, self.plan.apply_spectrum(acc))
            })
            .collect();
        let h = grid.spacing();
        Ok(flux_divergence(&grid, |c, axis| {
            let s = grid.stride(axis);
            let (row, drift) = &per_axis[axis];
            let mut flux = -drift[c];
            for (j, row_j) in row.iter().enumerate() {
                let g = if j == axis {
                    (logs.log[c + s] - logs.log[c]) / h
                } else {
                    0.5 * (logs.grad[c][j] + logs.grad[c + s][j])
                };
                flux += row_j[c] * g;
            }
            logarithmic_mean(values[c], values[c + s], logs.log[c], logs.log[c + s]) * flux
        }))
    }

    /// Collision operator `q(f)` with coefficients refreshed from `f`.
    pub fn collision(&self, f: &Density, form: FluxForm) -> Result<(Vec<f64>, CoefficientFields)> {
        let coeffs = self.coefficients(f)?;
        let q = match form {
            FluxForm::Divergence => divergence_flux_q(f, &coeffs),
            FluxForm::LogGradient => self.log_gradient_q(f)?,
        };
        Ok((q, coeffs))
    }
}

/// `(x - y) / (log x - log y)` from floored logarithms; the arithmetic mean
/// when the logarithms coincide.
fn logarithmic_mean(x: f64, y: f64, lx: f64, ly: f64) -> f64 {
    let dl = ly - lx;
    if dl.abs() < 1e-8 {
        0.5 * (x + y)
    } else {
        ((y - x) / dl).max(0.0)
    }
}

fn assemble(comps: Vec<Vec<f64>>, drift: Vec<Vec<f64>>) -> CoefficientFields {
    let len = comps[0].len();
    let a = (0..len).map(|c| Sym3([0, 1, 2, 3, 4, 5].map(|s| comps[s][c]))).collect();
    let b = (0..len).map(|c| [drift[0][c], drift[1][c], drift[2][c]]).collect();
    CoefficientFields { a, b }
}

/// Which summation backs a convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ConvolutionMethod {
    #[default]
    Fft,
    Direct,
}

/// `A[f] = f * (|w|^gamma a(w))` and `b[f] = -2 f * (|w|^gamma w)`.
pub fn coefficient_fields(f: &Density, spec: &KernelSpec) -> Result<CoefficientFields> {
    coefficient_fields_with(f, spec, ConvolutionMethod::Fft)
}

pub fn coefficient_fields_with(f: &Density, spec: &KernelSpec, method: ConvolutionMethod) -> Result<CoefficientFields> {
    let grid = *f.grid();
    match method {
        ConvolutionMethod::Fft => KernelBank::new(grid, spec).coefficients(f),
        ConvolutionMethod::Direct => {
            let comps = matrix_kernels(&grid, spec.gamma())
                .iter()
                .map(|k| direct_convolve(&grid, f.values(), k))
                .collect();
            let drift = drift_kernels(spec.gamma()).iter().map(|k| direct_convolve(&grid, f.values(), k)).collect();
            Ok(assemble(comps, drift))
        }
    }
}

/// Result of the positivity and trace checks on `A[f]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoefficientCheck {
    /// `min over cells of lambda_min(A) / tr A` (should be `>= -1e-10`).
    pub worst_relative_eigenvalue: f64,
    /// `max |tr A - 2 f * |.|^(gamma+2)| / |2 f * |.|^(gamma+2)|`.
    pub trace_relative_error: f64,
}

/// Positive semidefiniteness of `A[f]` and `tr A = 2 f * |.|^(gamma+2)`.
pub fn check_coefficients(f: &Density, spec: &KernelSpec, coeffs: &CoefficientFields) -> CoefficientCheck {
    let grid = f.grid();
    let power = PowerKernel::new(spec.gamma() + 2.0, grid.spacing());
    let conv = ConvolutionPlan::new(*grid).convolve(f.values(), &power);
    let mut worst = f64::INFINITY;
    let mut trace_err = 0.0f64;
    for (c, a) in coeffs.a.iter().enumerate() {
        let tr = a.trace();
        if tr > 0.0 {
            worst = worst.min(a.min_eigenvalue() / tr);
        }
        let reference = 2.0 * conv[c];
        if reference.abs() > 0.0 {
            trace_err = trace_err.max((tr - reference).abs() / reference.abs());
        }
    }
    CoefficientCheck { worst_relative_eigenvalue: worst, trace_relative_error: trace_err }
}

/// Smallest `lambda_min(A[f](v)) / <v>^gamma` over cells: the fitted constant of
/// the lower diffusion bound.
pub fn lower_diffusion_constant(grid: &VelocityGrid, spec: &KernelSpec, coeffs: &CoefficientFields) -> f64 {
    coeffs
        .a
        .iter()
        .enumerate()
        .map(|(c, a)| a.min_eigenvalue() / japanese_bracket(&grid.center(c)).powf(spec.gamma()))
        .fold(f64::INFINITY, f64::min)
}

/// Largest eigenvalue of `A[f]` over the grid.
pub fn max_diffusivity(coeffs: &CoefficientFields) -> f64 {
    coeffs.a.iter().map(|a| a.max_eigenvalue()).fold(0.0, f64::max)
}

/// `q(f) = div(A[f] grad f - b[f] f)` with the default flux form.
pub fn collision_q(f: &Density, spec: &KernelSpec) -> Result<Vec<f64>> {
    Ok(KernelBank::new(*f.grid(), spec).collision(f, FluxForm::default())?.0)
}

/// Central second-order derivative of `values` along `axis` at cell `c`,
/// one-sided at faces. Used for the tangential gradient on cell faces.
fn tangential(grid: &VelocityGrid, values: &[f64], c: usize, axis: usize) -> f64 {
    let n = grid.n();
    let s = grid.stride(axis);
    let h = grid.spacing();
    let i = grid.coords(c)[axis];
    if i == 0 {
        (-1.5 * values[c] + 2.0 * values[c + s] - 0.5 * values[c + 2 * s]) / h
    } else if i == n - 1 {
        (1.5 * values[c] - 2.0 * values[c - s] + 0.5 * values[c - 2 * s]) / h
    } else {
        (values[c + s] - values[c - s]) / (2.0 * h)
    }
}

/// Flux differencing: `q_c = sum_axis (F_{c+1/2} - F_{c-1/2}) / h` with zero
/// flux through the outer faces. `face_flux(c, axis)` is the flux through
/// the face between `c` and its upper neighbour.
fn flux_divergence(grid: &VelocityGrid, face_flux: impl Fn(usize, usize) -> f64 + Sync) -> Vec<f64> {
    let n = grid.n();
    let h = grid.spacing();
    (0..grid.len())
        .into_par_iter()
        .map(|c| {
            let coords = grid.coords(c);
            let mut q = 0.0;
            for axis in 0..3 {
                let s = grid.stride(axis);
                let upper = if coords[axis] + 1 < n { face_flux(c, axis) } else { 0.0 };
                let lower = if coords[axis] > 0 { face_flux(c - s, axis) } else { 0.0 };
                q += (upper - lower) / h;
            }
            q
        })
        .collect()
}

/// Face gradient: compact normal difference and averaged tangential differences.
fn face_gradient(grid: &VelocityGrid, values: &[f64], c: usize, axis: usize) -> Vec3 {
    let s = grid.stride(axis);
    let h = grid.spacing();
    let mut g = [0.0; 3];
    for (t, gt) in g.iter_mut().enumerate() {
        *gt = if t == axis {
            (values[c + s] - values[c]) / h
        } else {
            0.5 * (tangential(grid, values, c, t) + tangential(grid, values, c + s, t))
        };
    }
    g
}

fn divergence_flux_q(f: &Density, coeffs: &CoefficientFields) -> Vec<f64> {
    frozen_divergence_q(f.grid(), coeffs, f.values())
}

/// `div(A grad u - b u)` with frozen coefficients, linear in `u` (which may
/// take any sign). Same flux stencil as [`FluxForm::Divergence`].
pub fn frozen_divergence_q(grid: &VelocityGrid, coeffs: &CoefficientFields, v: &[f64]) -> Vec<f64> {
    flux_divergence(grid, |c, axis| {
        let s = grid.stride(axis);
        let g = face_gradient(grid, v, c, axis);
        let a_face = coeffs.a[c].add(&coeffs.a[c + s]).scale(0.5);
        let b_face = 0.5 * (coeffs.b[c][axis] + coeffs.b[c + s][axis]);
        let f_face = 0.5 * (v[c] + v[c + s]);
        a_face.mul_vec(&g)[axis] - b_face * f_face
    })
}

/// Output of [`convolution_bound_probe`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvolutionBound {
    /// `sup_v <v>^(-mu) (f * |.|^mu)(v)`.
    pub sup_ratio: f64,
    /// `||f||_{L^p_k}`.
    pub norm: f64,
    /// `sup_ratio / ||f||_{L^p_k}`.
    pub weighted_constant: f64,
    /// `sup_v (f * |.|^mu)(v) / (||f||_1^(1 + mu/3) ||f||_inf^(-mu/3))`.
    pub interpolation_constant: f64,
}

/// Sup-norm probe for `f * |.|^mu` with `mu in (-3, 0)`.
pub fn convolution_bound_probe(f: &Density, mu: f64, p: f64, k: f64) -> Result<ConvolutionBound> {
    if !(mu > -3.0 && mu < 0.0) {
        return Err(Error::OutOfRange(format!("mu must lie in (-3, 0), got {mu}")));
    }
    let norm_spec = WeightedNorm::new(p, k)?;
    let grid = f.grid();
    let conv = ConvolutionPlan::new(*grid).convolve(f.values(), &PowerKernel::new(mu, grid.spacing()));
    let sup_ratio = conv
        .iter()
        .enumerate()
        .map(|(c, x)| x * japanese_bracket(&grid.center(c)).powf(-mu))
        .fold(0.0, f64::max);
    let sup_plain = conv.iter().cloned().fold(0.0, f64::max);
    let norm = weighted_lp_norm(f, norm_spec);
    let l1 = integrate(grid, f.values())?;
    let linf = f.max_value();
    let interp = l1.powf(1.0 + mu / 3.0) * linf.powf(-mu / 3.0);
    Ok(ConvolutionBound {
        sup_ratio,
        norm,
        weighted_constant: sup_ratio / norm,
        interpolation_constant: sup_plain / interp,
    })
}
