//! Latitude-longitude quadrature on `S^2` and real spherical harmonics.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::linalg::{norm2, Vec3};
use crate::numeric::{gauss_legendre, pairwise_sum};

/// Gauss-Legendre colatitudes times equispaced longitudes. Antipodal nodes
/// `(theta, phi)` and `(pi - theta, phi + pi)` are both on the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SphereGrid {
    n_theta: usize,
    n_phi: usize,
    nodes: Vec<Vec3>,
    weights: Vec<f64>,
}

impl SphereGrid {
    pub fn new(n_theta: usize, n_phi: usize) -> Result<Self> {
        if n_theta < 2 || n_phi < 4 || !n_phi.is_multiple_of(2) {
            return Err(Error::InvalidGrid(format!(
                "sphere grid needs n_theta >= 2 and even n_phi >= 4, got {n_theta} x {n_phi}"
            )));
        }
        let (x, w) = gauss_legendre(n_theta);
        let dphi = 2.0 * PI / n_phi as f64;
        let mut nodes = Vec::with_capacity(n_theta * n_phi);
        let mut weights = Vec::with_capacity(n_theta * n_phi);
        for i in 0..n_theta {
            let s = (1.0 - x[i] * x[i]).sqrt();
            for j in 0..n_phi {
                // half the longitudes are negated copies of the other half
                let (sp, cp) = if j < n_phi / 2 {
                    (j as f64 * dphi).sin_cos()
                } else {
                    let (a, b) = ((j - n_phi / 2) as f64 * dphi).sin_cos();
                    (-a, -b)
                };
                nodes.push([s * cp, s * sp, x[i]]);
                weights.push(w[i] * dphi);
            }
        }
        Ok(Self { n_theta, n_phi, nodes, weights })
    }

    pub fn n_theta(&self) -> usize {
        self.n_theta
    }

    pub fn n_phi(&self) -> usize {
        self.n_phi
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[Vec3] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Index of the node at `-sigma`.
    pub fn antipode(&self, idx: usize) -> usize {
        let (i, j) = (idx / self.n_phi, idx % self.n_phi);
        (self.n_theta - 1 - i) * self.n_phi + (j + self.n_phi / 2) % self.n_phi
    }

    /// Highest degree whose products are integrated exactly.
    pub fn max_degree(&self) -> usize {
        (self.n_theta - 1).min(self.n_phi / 2 - 1)
    }

    pub fn integrate(&self, field: &[f64]) -> f64 {
        let terms: Vec<f64> = field.iter().zip(&self.weights).map(|(f, w)| f * w).collect();
        pairwise_sum(&terms)
    }
}

/// Number of real harmonics of degree at most `lmax`.
pub fn harmonic_count(lmax: usize) -> usize {
    (lmax + 1) * (lmax + 1)
}

/// Position of `Y_lm`, `-l <= m <= l`, in the output of [`real_harmonics`].
pub fn harmonic_index(l: usize, m: isize) -> usize {
    ((l * l + l) as isize + m) as usize
}

/// All orthonormal real spherical harmonics of degree `<= lmax` at the
/// direction of `x` (which need not be unit length).
pub fn real_harmonics(lmax: usize, x: &Vec3, out: &mut [f64]) {
    let r = norm2(x).sqrt();
    let (cx, cy, ct) = (x[0] / r, x[1] / r, x[2] / r);
    let st = (cx * cx + cy * cy).sqrt();
    let (cphi, sphi) = if st > 0.0 { (cx / st, cy / st) } else { (1.0, 0.0) };
    // normalised associated Legendre functions, filled column by column in m
    let mut pmm = (1.0 / (4.0 * PI)).sqrt();
    let (mut cm, mut sm) = (1.0, 0.0);
    for m in 0..=lmax {
        if m > 0 {
            pmm *= ((2 * m + 1) as f64 / (2 * m) as f64).sqrt() * st;
            let c = cm * cphi - sm * sphi;
            sm = sm * cphi + cm * sphi;
            cm = c;
        }
        let mut p_lm2 = 0.0;
        let mut p_lm1 = pmm;
        for l in m..=lmax {
            let p = if l == m {
                pmm
            } else if l == m + 1 {
                (2.0 * m as f64 + 3.0).sqrt() * ct * pmm
            } else {
                let (lf, mf) = (l as f64, m as f64);
                let a = ((4.0 * lf * lf - 1.0) / (lf * lf - mf * mf)).sqrt();
                let b = (((lf - 1.0) * (lf - 1.0) - mf * mf) / (4.0 * (lf - 1.0) * (lf - 1.0) - 1.0)).sqrt();
                a * (ct * p_lm1 - b * p_lm2)
            };
            if l > m {
                p_lm2 = p_lm1;
                p_lm1 = p;
            }
            if m == 0 {
                out[harmonic_index(l, 0)] = p;
            } else {
                let s2 = std::f64::consts::SQRT_2 * p;
                out[harmonic_index(l, m as isize)] = s2 * cm;
                out[harmonic_index(l, -(m as isize))] = s2 * sm;
            }
        }
    }
}

/// Evaluate `sum c_k Y_k` at the direction of `x`.
pub fn synthesize(lmax: usize, coeffs: &[f64], x: &Vec3, scratch: &mut [f64]) -> f64 {
    real_harmonics(lmax, x, scratch);
    coeffs.iter().zip(scratch.iter()).map(|(c, y)| c * y).sum()
}

/// Positive field on a sphere grid, optionally constrained to be even.
#[derive(Debug, Clone, PartialEq)]
pub struct SphereField {
    grid: SphereGrid,
    values: Vec<f64>,
    symmetric: bool,
}

const SYMMETRY_TOL: f64 = 1e-14;

impl SphereField {
    pub fn new(grid: SphereGrid, values: Vec<f64>, symmetric: bool) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch(format!("{} values for {} nodes", values.len(), grid.len())));
        }
        for (idx, &v) in values.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite { index: idx, value: v });
            }
            if v <= 0.0 {
                return Err(Error::NegativeDensity { index: idx, value: v });
            }
        }
        if symmetric {
            for idx in 0..grid.len() {
                let (a, b) = (values[idx], values[grid.antipode(idx)]);
                if (a - b).abs() > SYMMETRY_TOL * a.max(b) {
                    return Err(Error::OutOfRange(format!("field is not antipodally symmetric at node {idx}")));
                }
            }
        }
        Ok(Self { grid, values, symmetric })
    }

    pub fn from_fn(grid: SphereGrid, symmetric: bool, mut f: impl FnMut(&Vec3) -> f64) -> Result<Self> {
        let values = grid.nodes().iter().map(&mut f).collect();
        Self::new(grid, values, symmetric)
    }

    pub fn grid(&self) -> &SphereGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    pub fn mass(&self) -> f64 {
        self.grid.integrate(&self.values)
    }

    /// Coefficients of `log f` in real harmonics up to `lmax`, by quadrature.
    pub fn log_coefficients(&self, lmax: usize) -> Vec<f64> {
        let mut coeffs = vec![0.0; harmonic_count(lmax)];
        let mut y = vec![0.0; harmonic_count(lmax)];
        let mut rows: Vec<Vec<f64>> = vec![Vec::with_capacity(self.grid.len()); coeffs.len()];
        for (p, x) in self.grid.nodes().iter().enumerate() {
            real_harmonics(lmax, x, &mut y);
            let g = self.values[p].ln() * self.grid.weights()[p];
            for (k, row) in rows.iter_mut().enumerate() {
                row.push(g * y[k]);
            }
        }
        for (c, row) in coeffs.iter_mut().zip(&rows) {
            *c = pairwise_sum(row);
        }
        coeffs
    }
}

/// `(f(sigma) + f(-sigma)) / 2`, flagged symmetric.
pub fn symmetrize(f: &SphereField) -> SphereField {
    let grid = f.grid.clone();
    let values = (0..grid.len()).map(|i| 0.5 * (f.values[i] + f.values[grid.antipode(i)])).collect();
    SphereField { grid, values, symmetric: true }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_sum_to_sphere_area() {
        let g = SphereGrid::new(24, 48).unwrap();
        assert!((g.integrate(&vec![1.0; g.len()]) - 4.0 * PI).abs() < 1e-12);
        for idx in 0..g.len() {
            let (a, b) = (g.nodes()[idx], g.nodes()[g.antipode(idx)]);
            assert!((0..3).all(|k| a[k] == -b[k]));
        }
        assert!(SphereGrid::new(8, 15).is_err());
    }

    #[test]
    fn harmonics_are_orthonormal() {
        let g = SphereGrid::new(12, 24).unwrap();
        let lmax = 8;
        let nb = harmonic_count(lmax);
        let mut table = vec![vec![0.0; nb]; g.len()];
        for (p, x) in g.nodes().iter().enumerate() {
            real_harmonics(lmax, x, &mut table[p]);
        }
        for a in 0..nb {
            for b in 0..nb {
                let s: f64 = (0..g.len()).map(|p| g.weights()[p] * table[p][a] * table[p][b]).sum();
                let expect = if a == b { 1.0 } else { 0.0 };
                assert!((s - expect).abs() < 1e-12, "({a},{b}) -> {s}");
            }
        }
    }

    #[test]
    fn known_harmonics() {
        let x = [0.3, -0.5, 0.7];
        let r = norm2(&x).sqrt();
        let ct = x[2] / r;
        let mut y = vec![0.0; harmonic_count(2)];
        real_harmonics(2, &x, &mut y);
        assert!((y[harmonic_index(2, 0)] - (5.0 / (16.0 * PI)).sqrt() * (3.0 * ct * ct - 1.0)).abs() < 1e-14);
        assert!((y[harmonic_index(1, 0)] - (3.0 / (4.0 * PI)).sqrt() * ct).abs() < 1e-14);
        assert!((y[harmonic_index(1, 1)].abs() - (3.0 / (4.0 * PI)).sqrt() * (x[0] / r).abs()).abs() < 1e-14);
    }

    #[test]
    fn symmetrize_properties() {
        let g = SphereGrid::new(10, 20).unwrap();
        let odd = SphereField::from_fn(g.clone(), false, |x| 1.0 + 0.3 * x[2] + 0.1 * x[0] * x[1]).unwrap();
        let s = symmetrize(&odd);
        assert!((s.mass() - odd.mass()).abs() < 1e-13);
        assert_eq!(symmetrize(&s), s);
        let ylin = SphereField::from_fn(g, false, |x| 1.0 + 0.5 * x[2]).unwrap();
        assert!(symmetrize(&ylin).values().iter().all(|v| (v - 1.0).abs() < 1e-15));
    }

    #[test]
    fn validation() {
        let g = SphereGrid::new(4, 8).unwrap();
        assert!(SphereField::new(g.clone(), vec![1.0; 3], false).is_err());
        assert!(SphereField::new(g.clone(), vec![0.0; g.len()], false).is_err());
        assert!(SphereField::from_fn(g, true, |x| 2.0 + x[2]).is_err());
    }
}
