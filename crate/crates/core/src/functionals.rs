//! Scalar functionals of a density: conserved quantities, entropy, `L log L`,
//! Fisher information and the weighted second-order functional.

use crate::error::{Error, Result};
use crate::grid::{diff1, integrate_over, japanese_bracket, Density, Domain};
use crate::linalg::{norm2, Vec3};
use crate::numeric::gl_integrate;

/// Mass, momentum, energy, entropy and `int f |log f|`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HydrodynamicState {
    pub mass: f64,
    pub momentum: Vec3,
    /// `int f |v|^2`.
    pub energy: f64,
    /// `int f log f`, with the logarithm floored.
    pub entropy: f64,
    pub l_log_l: f64,
}

fn weighted_integral(f: &Density, domain: Domain, w: impl Fn(usize, f64) -> f64) -> f64 {
    let field: Vec<f64> = f.values().iter().enumerate().map(|(c, &x)| w(c, x)).collect();
    integrate_over(f.grid(), &field, domain).expect("functional integrand is finite")
}

pub fn hydrodynamics(f: &Density) -> HydrodynamicState {
    hydrodynamics_over(f, Domain::Full)
}

pub fn hydrodynamics_over(f: &Density, domain: Domain) -> HydrodynamicState {
    let grid = f.grid();
    let mass = weighted_integral(f, domain, |_, x| x);
    let momentum = [0, 1, 2].map(|a| weighted_integral(f, domain, |c, x| x * grid.center(c)[a]));
    let energy = weighted_integral(f, domain, |c, x| x * norm2(&grid.center(c)));
    let entropy = weighted_integral(f, domain, |c, x| x * f.floored_log(c));
    let l_log_l = weighted_integral(f, domain, |c, x| x * f.floored_log(c).abs());
    HydrodynamicState { mass, momentum, energy, entropy, l_log_l }
}

/// `int f <v>^m`.
pub fn bracket_moment(f: &Density, m: f64) -> f64 {
    let grid = f.grid();
    weighted_integral(f, Domain::Full, |c, x| x * japanese_bracket(&grid.center(c)).powf(m))
}

/// `2 int exp(-1 - |v|^2) (1 + |v|^2) dv`, by radial Gauss-Legendre quadrature.
pub fn gaussian_l_log_l_constant() -> f64 {
    let radial = gl_integrate(0.0, 12.0, 96, |r| r * r * (1.0 + r * r) * (-r * r).exp());
    2.0 * 4.0 * std::f64::consts::PI * (-1.0f64).exp() * radial
}

/// `(C + 2 M + 2 E + H) - int f |log f|`; nonnegative for every density.
pub fn l_log_l_bound_check(state: &HydrodynamicState) -> f64 {
    gaussian_l_log_l_constant() + 2.0 * state.mass + 2.0 * state.energy + state.entropy - state.l_log_l
}

/// The three expressions of the Fisher information.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FisherReport {
    /// `int f |grad log f|^2`.
    pub grad_form: f64,
    /// `int |grad f|^2 / f`.
    pub ratio_form: f64,
    /// `4 int |grad sqrt f|^2`.
    pub sqrt_form: f64,
    /// The value used downstream (the square-root form).
    pub chosen: f64,
    pub floored_mass_fraction: f64,
}

impl FisherReport {
    /// Largest pairwise relative difference between the three forms.
    pub fn spread(&self) -> f64 {
        let v = [self.grad_form, self.ratio_form, self.sqrt_form];
        let mut worst = 0.0f64;
        for i in 0..3 {
            for j in i + 1..3 {
                let scale = v[i].abs().max(v[j].abs());
                if scale > 0.0 {
                    worst = worst.max((v[i] - v[j]).abs() / scale);
                }
            }
        }
        worst
    }
}

pub fn fisher(f: &Density) -> FisherReport {
    fisher_over(f, Domain::Full)
}

pub fn fisher_over(f: &Density, domain: Domain) -> FisherReport {
    let grid = f.grid();
    let values = f.values();
    let logs = f.log_derivatives();
    let grad_form = weighted_integral(f, domain, |c, x| x * norm2(&logs.grad[c]));
    let grad_f = f.gradient();
    let ratio_form = weighted_integral(f, domain, |c, x| {
        if x > 0.0 {
            norm2(&grad_f[c]) / x.max(f.floor())
        } else {
            0.0
        }
    });
    let root: Vec<f64> = values.iter().map(|x| x.sqrt()).collect();
    let d: Vec<Vec<f64>> = (0..3).map(|a| diff1(grid, &root, a)).collect();
    let sqrt_form = 4.0 * weighted_integral(f, domain, |c, _| d[0][c] * d[0][c] + d[1][c] * d[1][c] + d[2][c] * d[2][c]);
    FisherReport { grad_form, ratio_form, sqrt_form, chosen: sqrt_form, floored_mass_fraction: logs.floored_mass_fraction }
}

fn check_gamma(gamma: f64) -> Result<()> {
    if !(-3.0..-2.0).contains(&gamma) {
        return Err(Error::OutOfRange(format!("gamma must lie in [-3, -2), got {gamma}")));
    }
    Ok(())
}

/// `int <v>^(gamma-2) f |grad^2 log f|_F^2`.
pub fn weighted_hessian_functional(f: &Density, gamma: f64) -> Result<f64> {
    weighted_hessian_functional_over(f, gamma, Domain::Full)
}

pub fn weighted_hessian_functional_over(f: &Density, gamma: f64, domain: Domain) -> Result<f64> {
    check_gamma(gamma)?;
    let grid = f.grid();
    let logs = f.log_derivatives();
    Ok(weighted_integral(f, domain, |c, x| {
        japanese_bracket(&grid.center(c)).powf(gamma - 2.0) * x * logs.hess[c].frob2()
    }))
}

/// Terms of the two Cauchy-Schwarz steps linking the Fisher information to the
/// weighted Hessian functional.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CauchySchwarzChain {
    pub fisher: f64,
    /// `int <v>^(gamma-2) f (Delta log f)^2`.
    pub weighted_laplacian: f64,
    /// `int f <v>^(2-gamma)`.
    pub moment: f64,
    /// `int <v>^(gamma-2) f |grad^2 log f|^2`.
    pub weighted_hessian: f64,
}

impl CauchySchwarzChain {
    /// `weighted_laplacian * moment - fisher^2`, relative to `fisher^2`.
    pub fn first_margin(&self) -> f64 {
        let sq = self.fisher * self.fisher;
        if sq == 0.0 {
            return self.weighted_laplacian * self.moment;
        }
        (self.weighted_laplacian * self.moment - sq) / sq
    }

    /// `weighted_hessian - weighted_laplacian / 3`; exact at quadrature level.
    pub fn second_margin(&self) -> f64 {
        self.weighted_hessian - self.weighted_laplacian / 3.0
    }
}

pub fn cauchy_schwarz_chain(f: &Density, gamma: f64, domain: Domain) -> Result<CauchySchwarzChain> {
    check_gamma(gamma)?;
    let grid = f.grid();
    let logs = f.log_derivatives();
    let weight = |c: usize| japanese_bracket(&grid.center(c)).powf(gamma - 2.0);
    let weighted_laplacian = weighted_integral(f, domain, |c, x| {
        let t = logs.hess[c].trace();
        weight(c) * x * t * t
    });
    let weighted_hessian = weighted_integral(f, domain, |c, x| weight(c) * x * logs.hess[c].frob2());
    let moment = weighted_integral(f, domain, |c, x| x * japanese_bracket(&grid.center(c)).powf(2.0 - gamma));
    Ok(CauchySchwarzChain { fisher: fisher_over(f, domain).chosen, weighted_laplacian, moment, weighted_hessian })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_grid;

    fn maxwellian(n: usize, l: f64, mass: f64, temp: f64) -> Density {
        let grid = make_grid(n, l).unwrap();
        let c = mass * (2.0 * std::f64::consts::PI * temp).powf(-1.5);
        Density::from_fn(grid, |v| c * (-norm2(&v) / (2.0 * temp)).exp()).unwrap()
    }

    #[test]
    fn maxwellian_moments() {
        let f = maxwellian(32, 8.0, 1.0, 1.0);
        let s = hydrodynamics(&f);
        assert!((s.mass - 1.0).abs() < 1e-6);
        assert!(s.momentum.iter().all(|p| p.abs() < 1e-8));
        assert!((s.energy - 3.0).abs() < 1e-4);
        let exact = -1.5 * (1.0 + (2.0 * std::f64::consts::PI).ln());
        assert!((s.entropy - exact).abs() < 5e-3, "{}", s.entropy);
        assert!(s.l_log_l >= s.entropy);
    }

    #[test]
    fn entropy_scaling_identity() {
        let f = maxwellian(16, 6.0, 1.0, 1.0);
        let g = f.scaled(2.0).unwrap();
        let (a, b) = (hydrodynamics(&f), hydrodynamics(&g));
        let expect = 2.0 * a.entropy + 2.0 * 2f64.ln() * a.mass;
        assert!((b.entropy - expect).abs() <= 1e-10 * expect.abs());
        assert!((b.mass - 2.0 * a.mass).abs() < 1e-12);
    }

    #[test]
    fn gaussian_constant_matches_closed_form() {
        let closed = 5.0 * std::f64::consts::PI.powf(1.5) / std::f64::consts::E;
        assert!((gaussian_l_log_l_constant() - closed).abs() < 1e-12);
    }

    #[test]
    fn l_log_l_margin_for_maxwellian() {
        let f = maxwellian(32, 8.0, 1.0, 1.0);
        let m = l_log_l_bound_check(&hydrodynamics(&f));
        assert!((m - 9.73).abs() < 0.01, "{m}");
    }

    #[test]
    fn fisher_of_maxwellians() {
        let f = maxwellian(32, 8.0, 1.0, 1.0);
        let r = fisher(&f);
        assert!((r.chosen - 3.0).abs() < 1e-2, "{r:?}");
        assert!(r.spread() < 0.01, "{r:?}");
        let g = maxwellian(32, 12.0, 1.0, 4.0);
        assert!((fisher(&g).chosen - 0.75).abs() < 5e-3);
    }

    #[test]
    fn fisher_is_homogeneous() {
        let f = maxwellian(16, 6.0, 1.0, 1.0);
        let (a, b) = (fisher(&f), fisher(&f.scaled(3.0).unwrap()));
        for (x, y) in [(a.grad_form, b.grad_form), (a.ratio_form, b.ratio_form), (a.sqrt_form, b.sqrt_form)] {
            assert!((y - 3.0 * x).abs() <= 1e-12 * y.abs());
        }
    }

    #[test]
    fn weighted_hessian_of_maxwellian() {
        let f = maxwellian(32, 8.0, 1.0, 1.0);
        let got = weighted_hessian_functional(&f, -3.0).unwrap();
        // independent radial quadrature of 3 int <v>^-5 M
        let radial = gl_integrate(0.0, 12.0, 128, |r| {
            r * r * (1.0 + r * r).powf(-2.5) * (-r * r / 2.0).exp()
        });
        let expect = 3.0 * 4.0 * std::f64::consts::PI * (2.0 * std::f64::consts::PI).powf(-1.5) * radial;
        assert!((got - expect).abs() < 1e-3 * expect, "{got} vs {expect}");
        assert!(weighted_hessian_functional(&f, -1.0).is_err());
    }

    #[test]
    fn cauchy_schwarz_chain_holds() {
        let f = maxwellian(24, 7.0, 1.0, 1.0);
        let chain = cauchy_schwarz_chain(&f, -3.0, Domain::Full).unwrap();
        assert!(chain.first_margin() > -1e-2, "{chain:?}");
        assert!(chain.second_margin() >= 0.0);
    }
}
