//! Cell-centred Cartesian velocity grid on `[-L, L]^3`, midpoint quadrature,
//! finite-difference calculus and weighted norms.
//!
//! Arrays are stored row-major in `(i, j, k)` order with `k` fastest; axis 0
//! corresponds to the first velocity component.

use crate::error::{Error, Result};
use crate::linalg::{norm2, Sym3, Vec3};
use crate::numeric::pairwise_sum;

/// Uniform cell-centred grid with `n` cells per axis covering `[-L, L]^3`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VelocityGrid {
    n: usize,
    extent: f64,
    spacing: f64,
}

/// Build a grid with `n` cells per axis on `[-extent, extent]^3`.
pub fn make_grid(n: usize, extent: f64) -> Result<VelocityGrid> {
    VelocityGrid::new(n, extent)
}

impl VelocityGrid {
    pub fn new(n: usize, extent: f64) -> Result<Self> {
        if n < 4 {
            return Err(Error::InvalidGrid(format!("need at least 4 cells per axis, got {n}")));
        }
        if !extent.is_finite() || extent <= 0.0 {
            return Err(Error::InvalidGrid(format!("extent must be finite and positive, got {extent}")));
        }
        Ok(Self { n, extent, spacing: 2.0 * extent / n as f64 })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn extent(&self) -> f64 {
        self.extent
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing.powi(3)
    }

    /// Total number of cells, `n^3`.
    pub fn len(&self) -> usize {
        self.n * self.n * self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.n + j) * self.n + k
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let n = self.n;
        [idx / (n * n), (idx / n) % n, idx % n]
    }

    /// Coordinate of the centre of cell `i` along any axis.
    #[inline]
    pub fn axis_center(&self, i: usize) -> f64 {
        -self.extent + (i as f64 + 0.5) * self.spacing
    }

    #[inline]
    pub fn center(&self, idx: usize) -> Vec3 {
        let [i, j, k] = self.coords(idx);
        [self.axis_center(i), self.axis_center(j), self.axis_center(k)]
    }

    /// Stride of the flat index along `axis`.
    #[inline]
    pub fn stride(&self, axis: usize) -> usize {
        match axis {
            0 => self.n * self.n,
            1 => self.n,
            2 => 1,
            _ => panic!("axis {axis} out of range"),
        }
    }

    /// Sample a closed-form function at every cell centre.
    pub fn sample(&self, mut f: impl FnMut(Vec3) -> f64) -> Vec<f64> {
        (0..self.len()).map(|idx| f(self.center(idx))).collect()
    }

    /// Whether a cell lies at least `margin` cells away from every face.
    pub fn is_interior(&self, idx: usize, margin: usize) -> bool {
        self.coords(idx).iter().all(|&c| c >= margin && c + margin < self.n)
    }

    pub fn same_shape(&self, other: &VelocityGrid) -> bool {
        self.n == other.n && self.extent.to_bits() == other.extent.to_bits()
    }
}

/// Japanese bracket `<v> = sqrt(1 + |v|^2)`.
#[inline]
pub fn japanese_bracket(v: &Vec3) -> f64 {
    (1.0 + norm2(v)).sqrt()
}

/// Which cells an analysis functional sums over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Domain {
    #[default]
    Full,
    /// Exclude cells closer than `margin` cells to the boundary.
    Interior { margin: usize },
}

impl Domain {
    #[inline]
    pub fn contains(&self, grid: &VelocityGrid, idx: usize) -> bool {
        match *self {
            Domain::Full => true,
            Domain::Interior { margin } => grid.is_interior(idx, margin),
        }
    }
}

fn check_finite(field: &[f64]) -> Result<()> {
    match field.iter().position(|x| !x.is_finite()) {
        Some(index) => Err(Error::NonFinite { index, value: field[index] }),
        None => Ok(()),
    }
}

fn check_len(grid: &VelocityGrid, len: usize) -> Result<()> {
    if len != grid.len() {
        return Err(Error::GridMismatch(format!("field has {len} cells, grid has {}", grid.len())));
    }
    Ok(())
}

/// Midpoint quadrature `h^3 * sum(field)` with pairwise summation.
pub fn integrate(grid: &VelocityGrid, field: &[f64]) -> Result<f64> {
    check_len(grid, field.len())?;
    check_finite(field)?;
    Ok(grid.cell_volume() * pairwise_sum(field))
}

/// Quadrature restricted to a [`Domain`]; cells outside contribute zero.
pub fn integrate_over(grid: &VelocityGrid, field: &[f64], domain: Domain) -> Result<f64> {
    match domain {
        Domain::Full => integrate(grid, field),
        _ => {
            check_len(grid, field.len())?;
            check_finite(field)?;
            let masked: Vec<f64> = field
                .iter()
                .enumerate()
                .map(|(idx, &x)| if domain.contains(grid, idx) { x } else { 0.0 })
                .collect();
            Ok(grid.cell_volume() * pairwise_sum(&masked))
        }
    }
}

// Centred first- and second-derivative stencils of increasing width. The
// widest one that fits is used; the two outermost cells fall back to
// second-order stencils (one-sided at the faces).
const D1_C2: [f64; 3] = [-0.5, 0.0, 0.5];
const D1_C4: [f64; 5] = [1.0 / 12.0, -8.0 / 12.0, 0.0, 8.0 / 12.0, -1.0 / 12.0];
const D1_C6: [f64; 7] = [
    -1.0 / 60.0,
    9.0 / 60.0,
    -45.0 / 60.0,
    0.0,
    45.0 / 60.0,
    -9.0 / 60.0,
    1.0 / 60.0,
];
const D2_C2: [f64; 3] = [1.0, -2.0, 1.0];
const D2_C4: [f64; 5] = [-1.0 / 12.0, 16.0 / 12.0, -30.0 / 12.0, 16.0 / 12.0, -1.0 / 12.0];
const D2_C6: [f64; 7] = [
    2.0 / 180.0,
    -27.0 / 180.0,
    270.0 / 180.0,
    -490.0 / 180.0,
    270.0 / 180.0,
    -27.0 / 180.0,
    2.0 / 180.0,
];

#[inline]
fn apply_centered(line: impl Fn(isize) -> f64, coeffs: &[f64]) -> f64 {
    let half = (coeffs.len() / 2) as isize;
    let mut acc = 0.0;
    for (m, c) in coeffs.iter().enumerate() {
        if *c != 0.0 {
            acc += c * line(m as isize - half);
        }
    }
    acc
}

/// First derivative along `axis` at every cell.
pub fn diff1(grid: &VelocityGrid, values: &[f64], axis: usize) -> Vec<f64> {
    let n = grid.n();
    let h = grid.spacing();
    let stride = grid.stride(axis) as isize;
    (0..grid.len())
        .map(|idx| {
            let p = grid.coords(idx)[axis];
            let at = |off: isize| values[(idx as isize + off * stride) as usize];
            let d = if p >= 3 && p + 3 < n {
                apply_centered(at, &D1_C6)
            } else if p >= 2 && p + 2 < n {
                apply_centered(at, &D1_C4)
            } else if p >= 1 && p + 1 < n {
                apply_centered(at, &D1_C2)
            } else if p == 0 {
                -1.5 * at(0) + 2.0 * at(1) - 0.5 * at(2)
            } else {
                1.5 * at(0) - 2.0 * at(-1) + 0.5 * at(-2)
            };
            d / h
        })
        .collect()
}

/// Second derivative along `axis` at every cell.
pub fn diff2(grid: &VelocityGrid, values: &[f64], axis: usize) -> Vec<f64> {
    let n = grid.n();
    let h2 = grid.spacing() * grid.spacing();
    let stride = grid.stride(axis) as isize;
    (0..grid.len())
        .map(|idx| {
            let p = grid.coords(idx)[axis];
            let at = |off: isize| values[(idx as isize + off * stride) as usize];
            let d = if p >= 3 && p + 3 < n {
                apply_centered(at, &D2_C6)
            } else if p >= 2 && p + 2 < n {
                apply_centered(at, &D2_C4)
            } else if p >= 1 && p + 1 < n {
                apply_centered(at, &D2_C2)
            } else if p == 0 {
                2.0 * at(0) - 5.0 * at(1) + 4.0 * at(2) - at(3)
            } else {
                2.0 * at(0) - 5.0 * at(-1) + 4.0 * at(-2) - at(-3)
            };
            d / h2
        })
        .collect()
}

/// Gradient of a raw cell array.
pub fn gradient(grid: &VelocityGrid, values: &[f64]) -> Result<Vec<Vec3>> {
    check_len(grid, values.len())?;
    check_finite(values)?;
    let dx = diff1(grid, values, 0);
    let dy = diff1(grid, values, 1);
    let dz = diff1(grid, values, 2);
    Ok((0..grid.len()).map(|i| [dx[i], dy[i], dz[i]]).collect())
}

/// Hessian of a raw cell array. Mixed entries average the two orderings of
/// the first-derivative operators so the result is symmetric by construction.
pub fn hessian(grid: &VelocityGrid, values: &[f64]) -> Result<Vec<Sym3>> {
    check_len(grid, values.len())?;
    check_finite(values)?;
    let d = [diff1(grid, values, 0), diff1(grid, values, 1), diff1(grid, values, 2)];
    let mixed = |a: usize, b: usize| -> Vec<f64> {
        let ab = diff1(grid, &d[b], a);
        let ba = diff1(grid, &d[a], b);
        ab.iter().zip(&ba).map(|(x, y)| 0.5 * (x + y)).collect()
    };
    let xx = diff2(grid, values, 0);
    let yy = diff2(grid, values, 1);
    let zz = diff2(grid, values, 2);
    let xy = mixed(0, 1);
    let xz = mixed(0, 2);
    let yz = mixed(1, 2);
    Ok((0..grid.len()).map(|i| Sym3([xx[i], yy[i], zz[i], xy[i], xz[i], yz[i]])).collect())
}

/// Relative default for the analysis floor used inside logarithms.
pub const DEFAULT_RELATIVE_FLOOR: f64 = 1e-14;
/// Absolute lower limit for the floor.
pub const MIN_FLOOR: f64 = 1e-300;

/// Nonnegative phase-space density on a [`VelocityGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct Density {
    grid: VelocityGrid,
    values: Vec<f64>,
    floor: f64,
}

impl Density {
    /// Wrap cell values. The logarithm floor defaults to
    /// `max(1e-300, 1e-14 * max f)`.
    pub fn new(grid: VelocityGrid, values: Vec<f64>) -> Result<Self> {
        check_len(&grid, values.len())?;
        check_finite(&values)?;
        if let Some(index) = values.iter().position(|&x| x < 0.0) {
            return Err(Error::NegativeDensity { index, value: values[index] });
        }
        let max = values.iter().cloned().fold(0.0, f64::max);
        let floor = (DEFAULT_RELATIVE_FLOOR * max).max(MIN_FLOOR);
        Ok(Self { grid, values, floor })
    }

    pub fn from_fn(grid: VelocityGrid, f: impl FnMut(Vec3) -> f64) -> Result<Self> {
        let values = grid.sample(f);
        Self::new(grid, values)
    }

    /// Override the logarithm floor.
    pub fn with_floor(mut self, floor: f64) -> Result<Self> {
        if !(floor > 0.0 && floor.is_finite()) {
            return Err(Error::OutOfRange(format!("floor must be positive, got {floor}")));
        }
        self.floor = floor;
        Ok(self)
    }

    pub fn grid(&self) -> &VelocityGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn floor(&self) -> f64 {
        self.floor
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().cloned().fold(0.0, f64::max)
    }

    pub fn mass(&self) -> f64 {
        self.grid.cell_volume() * pairwise_sum(&self.values)
    }

    /// Error unless the density has strictly positive mass.
    pub fn require_mass(&self) -> Result<f64> {
        let m = self.mass();
        if m > 0.0 {
            Ok(m)
        } else {
            Err(Error::ZeroMass)
        }
    }

    /// `c * f` with the floor scaled along with the values.
    pub fn scaled(&self, c: f64) -> Result<Density> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::OutOfRange(format!("scale factor must be positive, got {c}")));
        }
        Ok(Density {
            grid: self.grid,
            values: self.values.iter().map(|x| c * x).collect(),
            floor: (self.floor * c).max(MIN_FLOOR),
        })
    }

    #[inline]
    pub fn floored_log(&self, idx: usize) -> f64 {
        self.values[idx].max(self.floor).ln()
    }

    pub fn gradient(&self) -> Vec<Vec3> {
        gradient(&self.grid, &self.values).expect("density values are finite")
    }

    pub fn hessian(&self) -> Vec<Sym3> {
        hessian(&self.grid, &self.values).expect("density values are finite")
    }

    /// `log f`, its gradient and Hessian, computed from `max(f, floor)`.
    pub fn log_derivatives(&self) -> LogDerivatives {
        let log: Vec<f64> = (0..self.values.len()).map(|i| self.floored_log(i)).collect();
        let grad = gradient(&self.grid, &log).expect("floored log is finite");
        let hess = hessian(&self.grid, &log).expect("floored log is finite");
        let floored: Vec<usize> =
            (0..self.values.len()).filter(|&i| self.values[i] < self.floor).collect();
        let total = pairwise_sum(&self.values);
        let floored_vals: Vec<f64> = floored.iter().map(|&i| self.values[i]).collect();
        let floored_mass_fraction = if total > 0.0 {
            pairwise_sum(&floored_vals) / total
        } else {
            0.0
        };
        // cells sitting exactly at zero carry no mass but are still floored
        let floored_cell_fraction = floored.len() as f64 / self.values.len() as f64;
        LogDerivatives { log, grad, hess, floored, floored_mass_fraction, floored_cell_fraction }
    }
}

/// Cached log-derivatives of a [`Density`].
#[derive(Debug, Clone, PartialEq)]
pub struct LogDerivatives {
    pub log: Vec<f64>,
    pub grad: Vec<Vec3>,
    pub hess: Vec<Sym3>,
    /// Cells whose value was below the floor.
    pub floored: Vec<usize>,
    pub floored_mass_fraction: f64,
    pub floored_cell_fraction: f64,
}

/// `L^p_m` norm: the `L^p` norm of `<v>^m f`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightedNorm {
    p: f64,
    m: f64,
}

impl WeightedNorm {
    pub fn new(p: f64, m: f64) -> Result<Self> {
        if p.is_nan() || p < 1.0 {
            return Err(Error::OutOfRange(format!("norm exponent must be >= 1, got {p}")));
        }
        if !m.is_finite() {
            return Err(Error::OutOfRange(format!("weight power must be finite, got {m}")));
        }
        Ok(Self { p, m })
    }

    pub fn sup(m: f64) -> Self {
        Self { p: f64::INFINITY, m }
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn m(&self) -> f64 {
        self.m
    }
}

/// Quadrature of `(<v>^m |f|)^p`, then the `p`-th root; sup over cells for `p = inf`.
pub fn weighted_lp_norm(f: &Density, norm: WeightedNorm) -> f64 {
    let grid = f.grid();
    let weighted: Vec<f64> = f
        .values()
        .iter()
        .enumerate()
        .map(|(idx, &x)| japanese_bracket(&grid.center(idx)).powf(norm.m) * x.abs())
        .collect();
    if norm.p.is_infinite() {
        weighted.iter().cloned().fold(0.0, f64::max)
    } else {
        let powered: Vec<f64> = weighted.iter().map(|x| x.powf(norm.p)).collect();
        (grid.cell_volume() * pairwise_sum(&powered)).powf(1.0 / norm.p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn maxwellian(mass: f64, temp: f64) -> impl Fn(Vec3) -> f64 {
        move |v| mass * (2.0 * std::f64::consts::PI * temp).powf(-1.5) * (-norm2(&v) / (2.0 * temp)).exp()
    }

    #[test]
    fn grid_construction() {
        let g = make_grid(4, 2.0).unwrap();
        assert_eq!(g.spacing(), 1.0);
        assert_eq!(g.center(0), [-1.5, -1.5, -1.5]);
        let g = make_grid(16, 8.0).unwrap();
        assert_eq!(g.spacing(), 1.0);
        assert_eq!(g.n() * g.n(), 256);
        assert_eq!(g.len(), 4096);
        assert!(make_grid(3, 1.0).is_err());
        assert!(make_grid(8, f64::NAN).is_err());
        assert!(make_grid(8, -1.0).is_err());
    }

    #[test]
    fn spacing_times_cells_is_twice_extent() {
        for &(n, l) in &[(4usize, 2.0), (12, 6.3), (32, 8.0), (24, 0.7), (10, 1e3)] {
            let g = make_grid(n, l).unwrap();
            let err = (g.spacing() * n as f64 - 2.0 * l).abs();
            assert!(err <= 4.0 * f64::EPSILON * 2.0 * l, "{n} {l} {err}");
        }
    }

    #[test]
    fn even_grids_avoid_origin() {
        let g = make_grid(8, 3.0).unwrap();
        assert!((0..g.len()).all(|i| norm2(&g.center(i)) > 0.0));
    }

    #[test]
    fn integrate_constant_and_maxwellian() {
        let g = make_grid(8, 2.0).unwrap();
        assert!((integrate(&g, &vec![1.0; g.len()]).unwrap() - 64.0).abs() < 1e-12);
        let g = make_grid(32, 8.0).unwrap();
        let m = g.sample(maxwellian(1.0, 1.0));
        assert!((integrate(&g, &m).unwrap() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn integrate_reports_bad_cell() {
        let g = make_grid(4, 1.0).unwrap();
        let mut field = vec![0.0; g.len()];
        field[17] = f64::NAN;
        match integrate(&g, &field) {
            Err(Error::NonFinite { index, .. }) => assert_eq!(index, 17),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn odd_fields_integrate_to_zero() {
        let g = make_grid(16, 4.0).unwrap();
        let field = g.sample(|v| v[0] * (-norm2(&v)).exp());
        let abs: f64 = field.iter().map(|x| x.abs()).sum::<f64>() * g.cell_volume();
        assert!(integrate(&g, &field).unwrap().abs() <= 1e-12 * abs);
    }

    #[test]
    fn stencils_exact_on_affine_and_quadratic() {
        let g = make_grid(10, 3.0).unwrap();
        let lin = g.sample(|v| 2.5 * v[0] - 0.5);
        let grad = gradient(&g, &lin).unwrap();
        for gr in &grad {
            assert!((gr[0] - 2.5).abs() < 1e-12 && gr[1].abs() < 1e-12 && gr[2].abs() < 1e-12);
        }
        let quad = g.sample(|v| 0.5 * norm2(&v));
        let hess = hessian(&g, &quad).unwrap();
        for h in &hess {
            assert!(h.sub(&Sym3::IDENTITY).frob2().sqrt() <= 1e-10, "{h:?}");
        }
    }

    #[test]
    fn hessian_is_symmetric_for_mixed_fields() {
        let g = make_grid(8, 2.0).unwrap();
        let field = g.sample(|v| (v[0] * v[1]).sin() + v[2] * v[0] * v[0]);
        let hess = hessian(&g, &field).unwrap();
        let xy = g.sample(|v| v[0] * v[1]);
        let h2 = hessian(&g, &xy).unwrap();
        for h in &h2 {
            assert!((h.get(0, 1) - 1.0).abs() < 1e-12);
        }
        assert!(hess.iter().all(|h| h.get(0, 1) == h.get(1, 0)));
    }

    #[test]
    fn log_derivatives_of_constant_vanish() {
        let g = make_grid(6, 2.0).unwrap();
        let d = Density::new(g, vec![0.3; g.len()]).unwrap();
        let ld = d.log_derivatives();
        assert!(ld.grad.iter().all(|x| norm2(x) < 1e-24));
        assert!(ld.hess.iter().all(|h| h.frob2() < 1e-20));
        assert!(ld.floored.is_empty());
    }

    #[test]
    fn log_derivatives_of_maxwellian() {
        let g = make_grid(16, 6.0).unwrap();
        let d = Density::from_fn(g, maxwellian(1.0, 1.0)).unwrap().with_floor(1e-300).unwrap();
        let ld = d.log_derivatives();
        for idx in 0..g.len() {
            let v = g.center(idx);
            let gr = ld.grad[idx];
            for a in 0..3 {
                assert!((gr[a] + v[a]).abs() < 1e-9);
            }
            assert!(ld.hess[idx].add(&Sym3::IDENTITY).frob2().sqrt() < 1e-8);
        }
    }

    #[test]
    fn zero_cell_is_floored() {
        let g = make_grid(4, 1.0).unwrap();
        let mut vals = vec![1.0; g.len()];
        vals[5] = 0.0;
        vals[6] = 1e-20;
        let ld = Density::new(g, vals).unwrap().log_derivatives();
        assert_eq!(ld.floored, vec![5, 6]);
        assert!(ld.floored_mass_fraction > 0.0);
        assert!(ld.floored_cell_fraction > 0.0);
    }

    #[test]
    fn weighted_norms() {
        let g = make_grid(8, 2.0).unwrap();
        let one = Density::new(g, vec![1.0; g.len()]).unwrap();
        let n1 = weighted_lp_norm(&one, WeightedNorm::new(1.0, 0.0).unwrap());
        assert!((n1 - 64.0).abs() < 1e-12);
        let g = make_grid(32, 8.0).unwrap();
        let m = Density::from_fn(g, maxwellian(1.0, 1.0)).unwrap();
        let n12 = weighted_lp_norm(&m, WeightedNorm::new(1.0, 2.0).unwrap());
        assert!((n12 - 4.0).abs() < 1e-4, "{n12}");
        let sup = weighted_lp_norm(&m, WeightedNorm::sup(0.0));
        let peak = (2.0 * std::f64::consts::PI).powf(-1.5);
        // nearest cell centre sits at |v|^2 = 3 h^2 / 4
        assert!((sup - peak).abs() < 0.2 * peak);
        assert!(WeightedNorm::new(0.5, 0.0).is_err());
    }
}
