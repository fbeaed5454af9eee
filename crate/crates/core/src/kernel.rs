//! Interaction kernels: the projection matrix `a(z)`, the rotation fields
//! `b_k(z) = e_k x z`, the potential `alpha(r) = r^gamma` (origin-regularised)
//! and its smooth cutoff `eta(r) r^gamma`.

use crate::error::{Error, Result};
use crate::linalg::{cross, projection_matrix, unit, Sym3, Vec3};
use crate::numeric::{gauss_legendre, pairwise_sum};

/// `a(z) = |z|^2 I - z z^T`.
pub fn a_matrix(z: &Vec3) -> Sym3 {
    projection_matrix(z)
}

/// `b_k(z) = e_k x z` for a 0-based axis `k`.
pub fn b_field(k: usize, z: &Vec3) -> Result<Vec3> {
    if k > 2 {
        return Err(Error::OutOfRange(format!("axis index {k} not in 0..3")));
    }
    Ok(cross(&unit(k), z))
}

/// Which potential a functional uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CutoffMode {
    /// `alpha(r) = (r^2 + eps^2)^(gamma/2)`.
    #[default]
    Raw,
    /// `alpha~(r) = eta(r) r^gamma`.
    Cutoff,
}

/// Quintic blend `eta` between `r^5` on `[0, 1/2]` and `1` on `[1, inf)`.
///
/// The middle piece is the quintic Hermite interpolant matching value, first
/// and second derivative at both ends. The six end data are kept as a table so
/// the self-test can be pointed at a corrupted copy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EtaBlend {
    /// `(eta, eta', eta'')` at `r = 1/2` followed by the same at `r = 1`.
    pub ends: [f64; 6],
}

impl Default for EtaBlend {
    fn default() -> Self {
        // r^5 and its derivatives at 1/2; the constant 1 at r = 1
        Self { ends: [1.0 / 32.0, 5.0 / 16.0, 5.0 / 2.0, 1.0, 0.0, 0.0] }
    }
}

impl EtaBlend {
    /// `(eta, eta', eta'')` at `r`.
    pub fn eval(&self, r: f64) -> (f64, f64, f64) {
        if r <= 0.5 {
            let r2 = r * r;
            (r2 * r2 * r, 5.0 * r2 * r2, 20.0 * r2 * r)
        } else if r >= 1.0 {
            (1.0, 0.0, 0.0)
        } else {
            // t = 2r - 1 in [0, 1]; d/dr = 2 d/dt
            let t = 2.0 * r - 1.0;
            let e = &self.ends;
            let p = [e[0], e[1] * 0.5, e[2] * 0.25, e[3], e[4] * 0.5, e[5] * 0.25];
            let (t2, t3, t4, t5) = (t * t, t * t * t, t * t * t * t, t * t * t * t * t);
            let basis = [
                [1.0 - 10.0 * t3 + 15.0 * t4 - 6.0 * t5, -30.0 * t2 + 60.0 * t3 - 30.0 * t4, -60.0 * t + 180.0 * t2 - 120.0 * t3],
                [t - 6.0 * t3 + 8.0 * t4 - 3.0 * t5, 1.0 - 18.0 * t2 + 32.0 * t3 - 15.0 * t4, -36.0 * t + 96.0 * t2 - 60.0 * t3],
                [
                    0.5 * (t2 - 3.0 * t3 + 3.0 * t4 - t5),
                    0.5 * (2.0 * t - 9.0 * t2 + 12.0 * t3 - 5.0 * t4),
                    0.5 * (2.0 - 18.0 * t + 36.0 * t2 - 20.0 * t3),
                ],
                [10.0 * t3 - 15.0 * t4 + 6.0 * t5, 30.0 * t2 - 60.0 * t3 + 30.0 * t4, 60.0 * t - 180.0 * t2 + 120.0 * t3],
                [-4.0 * t3 + 7.0 * t4 - 3.0 * t5, -12.0 * t2 + 28.0 * t3 - 15.0 * t4, -24.0 * t + 84.0 * t2 - 60.0 * t3],
                [
                    0.5 * (t3 - 2.0 * t4 + t5),
                    0.5 * (3.0 * t2 - 8.0 * t3 + 5.0 * t4),
                    0.5 * (6.0 * t - 24.0 * t2 + 20.0 * t3),
                ],
            ];
            let mut v = [0.0; 3];
            for (c, b) in p.iter().zip(&basis) {
                for d in 0..3 {
                    v[d] += c * b[d];
                }
            }
            (v[0], 2.0 * v[1], 4.0 * v[2])
        }
    }

    pub fn value(&self, r: f64) -> f64 {
        self.eval(r).0
    }

    /// Measured `sup eta''` on a fine sampling of `[0, 1]`.
    pub fn sup_second_derivative(&self) -> f64 {
        sample_grid(ETA_SAMPLES).map(|r| self.eval(r).2).fold(f64::NEG_INFINITY, f64::max)
    }

    /// Measured replacement for the constant bounding
    /// `6 eta r^(gamma-2) + eta'' r^gamma <= C 2^(-gamma)`.
    pub fn laplacian_bound_constant(&self, gamma: f64) -> f64 {
        // r <= 1/2 gives 26 r^(gamma+3), maximal at r = 1/2; r >= 1 gives at most 6
        let inner = 26.0 * 0.5f64.powf(gamma + 3.0);
        let outer = 6.0;
        let blend = sample_grid(ETA_SAMPLES)
            .map(|r| 0.5 + 0.5 * r)
            .map(|r| {
                let (e, _, e2) = self.eval(r);
                6.0 * e * r.powf(gamma - 2.0) + e2 * r.powf(gamma)
            })
            .fold(f64::NEG_INFINITY, f64::max);
        inner.max(outer).max(blend) * 2f64.powf(gamma)
    }

    /// Continuity, monotonicity and anchor values. Returns the list of failed checks.
    pub fn self_test(&self) -> EtaSelfTest {
        let mut failures = Vec::new();
        let tol = 1e-12;
        if (self.value(0.5) - 1.0 / 32.0).abs() > tol {
            failures.push(format!("eta(1/2) = {} != 1/32", self.value(0.5)));
        }
        if (self.value(1.0) - 1.0).abs() > tol {
            failures.push(format!("eta(1) = {} != 1", self.value(1.0)));
        }
        // one-sided limits at the junctions, value and first two derivatives
        for &r in &[0.5, 1.0] {
            let below = self.eval(r - 1e-9);
            let above = self.eval(r + 1e-9);
            let jumps = [below.0 - above.0, below.1 - above.1, below.2 - above.2];
            let limits = [1e-7, 1e-6, 1e-5];
            for (d, (j, lim)) in jumps.iter().zip(limits).enumerate() {
                if j.abs() > lim {
                    failures.push(format!("eta derivative {d} jumps by {j:e} at r = {r}"));
                }
            }
        }
        let mut prev = f64::NEG_INFINITY;
        for r in sample_grid(ETA_SAMPLES).map(|s| 1.2 * s) {
            let (e, d1, _) = self.eval(r);
            if e < prev - 1e-15 || d1 < -1e-9 {
                failures.push(format!("eta not increasing at r = {r}"));
                break;
            }
            prev = e;
        }
        EtaSelfTest { sup_second_derivative: self.sup_second_derivative(), failures }
    }
}

const ETA_SAMPLES: usize = 20_000;

fn sample_grid(count: usize) -> impl Iterator<Item = f64> {
    (0..=count).map(move |i| i as f64 / count as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EtaSelfTest {
    pub sup_second_derivative: f64,
    pub failures: Vec<String>,
}

impl EtaSelfTest {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Potential exponent, origin regularisation and cutoff mode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSpec {
    gamma: f64,
    epsilon: f64,
    mode: CutoffMode,
    eta: EtaBlend,
    eta_sup_dd: f64,
}

impl KernelSpec {
    /// Very soft potential `r^gamma`, `gamma in [-3, -2)`, no regularisation.
    pub fn new(gamma: f64) -> Result<Self> {
        if !(-3.0..-2.0).contains(&gamma) {
            return Err(Error::OutOfRange(format!("gamma must lie in [-3, -2), got {gamma}")));
        }
        let eta = EtaBlend::default();
        Ok(Self { gamma, epsilon: 0.0, mode: CutoffMode::Raw, eta, eta_sup_dd: eta.sup_second_derivative() })
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Result<Self> {
        if !(epsilon >= 0.0 && epsilon.is_finite()) {
            return Err(Error::OutOfRange(format!("epsilon must be >= 0, got {epsilon}")));
        }
        self.epsilon = epsilon;
        Ok(self)
    }

    pub fn with_mode(mut self, mode: CutoffMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_eta(mut self, eta: EtaBlend) -> Self {
        self.eta = eta;
        self.eta_sup_dd = eta.sup_second_derivative();
        self
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn mode(&self) -> CutoffMode {
        self.mode
    }

    pub fn eta(&self) -> &EtaBlend {
        &self.eta
    }

    /// Measured `sup eta''`.
    pub fn eta_sup_dd(&self) -> f64 {
        self.eta_sup_dd
    }

    /// `(r^2 + eps^2)^(gamma/2)`.
    pub fn alpha(&self, r: f64) -> f64 {
        (r * r + self.epsilon * self.epsilon).powf(0.5 * self.gamma)
    }

    /// `eta(r) r^gamma`; zero at the origin.
    pub fn alpha_tilde(&self, r: f64) -> f64 {
        if r == 0.0 {
            return 0.0;
        }
        self.eta.value(r) * r.powf(self.gamma)
    }

    /// The potential of the active mode together with its radial derivative.
    pub fn alpha_with_derivative(&self, r: f64) -> (f64, f64) {
        self.alpha_with_derivative_in(self.mode, r)
    }

    pub fn alpha_with_derivative_in(&self, mode: CutoffMode, r: f64) -> (f64, f64) {
        let g = self.gamma;
        match mode {
            CutoffMode::Raw => {
                let s = r * r + self.epsilon * self.epsilon;
                let a = s.powf(0.5 * g);
                (a, g * r * a / s)
            }
            CutoffMode::Cutoff => {
                if r == 0.0 {
                    return (0.0, 0.0);
                }
                let (e, e1, _) = self.eta.eval(r);
                let rg = r.powf(g);
                (e * rg, e1 * rg + g * e * rg / r)
            }
        }
    }

    pub fn alpha_in(&self, mode: CutoffMode, r: f64) -> f64 {
        match mode {
            CutoffMode::Raw => self.alpha(r),
            CutoffMode::Cutoff => self.alpha_tilde(r),
        }
    }

    /// `1 - gamma^2 / (4 Lambda_3)` with `Lambda_3 = 5.5`.
    pub fn coercivity_factor(&self) -> f64 {
        1.0 - self.gamma * self.gamma / (4.0 * LAMBDA_3)
    }
}

/// Lower bound on the Bakry-Emery constant for symmetric densities on the sphere.
pub const LAMBDA_3: f64 = 5.5;

/// Average of `|x|^p` over the unit cube `[-1/2, 1/2]^3`, valid for `p > -3`.
///
/// The cube splits into six pyramids with apex at the origin; in each the
/// radial integral is elementary and what remains is a smooth integral of
/// `(1 + a^2 + b^2)^(p/2)` over `[-1, 1]^2`, done with Gauss-Legendre.
pub fn unit_cube_power_average(p: f64) -> f64 {
    assert!(p > -3.0, "cube average of |x|^p diverges for p <= -3");
    let (x, w) = gauss_legendre(48);
    // integrate over [0,1]^2 and multiply by 4
    let mut terms = Vec::with_capacity(x.len() * x.len());
    for (xa, wa) in x.iter().zip(&w) {
        let a = 0.5 * (xa + 1.0);
        for (xb, wb) in x.iter().zip(&w) {
            let b = 0.5 * (xb + 1.0);
            terms.push(0.25 * wa * wb * (1.0 + a * a + b * b).powf(0.5 * p));
        }
    }
    let face = 4.0 * pairwise_sum(&terms);
    6.0 * 0.5f64.powf(3.0 + p) / (3.0 + p) * face
}

/// Average of `|w|^p` over the cube of side `h` centred at the origin.
pub fn cell_power_average(p: f64, h: f64) -> f64 {
    h.powf(p) * unit_cube_power_average(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{dot, norm2};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_vec(rng: &mut ChaCha8Rng) -> Vec3 {
        [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)]
    }

    #[test]
    fn a_matrix_examples() {
        let a = a_matrix(&[1.0, 0.0, 0.0]);
        assert_eq!(a, Sym3([0.0, 1.0, 1.0, 0.0, 0.0, 0.0]));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let z = random_vec(&mut rng);
            let az = a_matrix(&z).mul_vec(&z);
            assert!(norm2(&az).sqrt() < 1e-12 * norm2(&z).powf(1.5).max(1.0));
        }
    }

    #[test]
    fn b_field_examples() {
        assert_eq!(b_field(0, &[0.0, 1.0, 0.0]).unwrap(), [0.0, 0.0, 1.0]);
        assert_eq!(b_field(1, &[0.0, 1.0, 0.0]).unwrap(), [0.0, 0.0, 0.0]);
        assert!(b_field(3, &[0.0; 3]).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..1000 {
            let z = random_vec(&mut rng);
            for k in 0..3 {
                assert!(dot(&b_field(k, &z).unwrap(), &z).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn a_is_sum_of_b_outer_products() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10_000 {
            let z = random_vec(&mut rng);
            let a = a_matrix(&z);
            let bs: Vec<Vec3> = (0..3).map(|k| b_field(k, &z).unwrap()).collect();
            let sum = Sym3::from_fn(|i, j| bs.iter().map(|b| b[i] * b[j]).sum());
            assert!(a.sub(&sum).frob2().sqrt() <= 4.0 * f64::EPSILON * norm2(&z));
            assert!((a.trace() - 2.0 * norm2(&z)).abs() <= 4.0 * f64::EPSILON * norm2(&z));
        }
    }

    #[test]
    fn cutoff_values() {
        let spec = KernelSpec::new(-3.0).unwrap();
        for r in [1.0, 1.5, 4.0] {
            assert!((spec.alpha_tilde(r) - r.powf(-3.0)).abs() < 1e-15);
        }
        assert!((spec.alpha_tilde(0.25) - 1.0 / 16.0).abs() < 1e-15);
        for gamma in [-3.0, -2.5, -2.01] {
            let spec = KernelSpec::new(gamma).unwrap();
            let bound = 2f64.powf(-gamma);
            for i in 0..=4000 {
                let r = i as f64 * 1e-3;
                assert!(spec.alpha_tilde(r) <= bound * (1.0 + 1e-12), "{gamma} {r}");
            }
        }
        assert_eq!(spec.alpha_tilde(0.0), 0.0);
    }

    #[test]
    fn gamma_range_is_enforced() {
        assert!(KernelSpec::new(-1.0).is_err());
        assert!(KernelSpec::new(-2.0).is_err());
        assert!(KernelSpec::new(-3.5).is_err());
        assert!(KernelSpec::new(-3.0).is_ok());
    }

    #[test]
    fn eta_self_test_passes_and_detects_corruption() {
        let eta = EtaBlend::default();
        let report = eta.self_test();
        assert!(report.passed(), "{:?}", report.failures);
        assert!(report.sup_second_derivative > 2.0);
        let mut bad = eta;
        bad.ends[3] = 0.9;
        assert!(!bad.self_test().passed());
    }

    #[test]
    fn eta_derivatives_match_finite_differences() {
        let eta = EtaBlend::default();
        let h = 1e-5;
        for i in 1..50 {
            let r = 0.5 + i as f64 / 100.0;
            let (_, d1, d2) = eta.eval(r);
            let fd1 = (eta.value(r + h) - eta.value(r - h)) / (2.0 * h);
            let fd2 = (eta.value(r + h) - 2.0 * eta.value(r) + eta.value(r - h)) / (h * h);
            assert!((d1 - fd1).abs() < 1e-7, "{r}");
            assert!((d2 - fd2).abs() < 1e-3, "{r}");
        }
    }

    #[test]
    fn alpha_derivative_matches_finite_differences() {
        let spec = KernelSpec::new(-2.5).unwrap().with_epsilon(0.1).unwrap();
        let h = 1e-6;
        for mode in [CutoffMode::Raw, CutoffMode::Cutoff] {
            for r in [0.3, 0.7, 1.3] {
                let (_, d) = spec.alpha_with_derivative_in(mode, r);
                let fd = (spec.alpha_in(mode, r + h) - spec.alpha_in(mode, r - h)) / (2.0 * h);
                assert!((d - fd).abs() < 1e-6 * d.abs().max(1.0), "{mode:?} {r}");
            }
        }
    }

    #[test]
    fn cube_average_against_spherical_quadrature() {
        // Independent route: |x|^p averaged over the cube equals the
        // direction average of R(s)^(p+3) / (p+3) * 4 pi, with
        // R(s) = 1 / (2 max|s_i|) the distance to the cube face along s.
        for p in [-1.0, -0.5, -2.0, 0.0, 2.0] {
            let (ct, wt) = gauss_legendre(400);
            let nphi = 800;
            let mut acc = 0.0;
            for (c, w) in ct.iter().zip(&wt) {
                let s = (1.0 - c * c).sqrt();
                for j in 0..nphi {
                    let phi = 2.0 * std::f64::consts::PI * (j as f64 + 0.5) / nphi as f64;
                    let dir = [s * phi.cos(), s * phi.sin(), *c];
                    let m = dir.iter().fold(0.0f64, |a, x| a.max(x.abs()));
                    let r = 0.5 / m;
                    acc += w * (2.0 * std::f64::consts::PI / nphi as f64) * r.powf(p + 3.0) / (p + 3.0);
                }
            }
            let got = unit_cube_power_average(p);
            assert!((got - acc).abs() < 1e-4 * acc.abs(), "p={p}: {got} vs {acc}");
        }
        // p = 2 has the closed form 3 * (1/12)
        assert!((unit_cube_power_average(2.0) - 0.25).abs() < 1e-13);
        assert!((unit_cube_power_average(0.0) - 1.0).abs() < 1e-13);
    }
}
