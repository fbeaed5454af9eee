//! Pairwise functionals of the product state `F(v, w) = f(v) f(w)` on `R^6`.
//!
//! `F` is never stored. Every derivative of `log F` reduces to `g = grad log f`
//! and `H = grad^2 log f` at the two cells. With `z = v - w`, `xi = g(v) - g(w)`
//! and `s = z x xi`, the lifted fields satisfy `b~_k . grad log F = s_k`.

use rayon::prelude::*;

use crate::convolution::ConvolutionPlan;
use crate::error::{Error, Result};
use crate::functionals::fisher;
use crate::grid::{japanese_bracket, Density, LogDerivatives};
use crate::kernel::{a_matrix, CutoffMode, KernelSpec};
use crate::linalg::{cross, dot, norm2, sub, Sym3, Vec3};
use crate::numeric::pairwise_sum_rows;

/// Product state `f (x) f` with cached log-derivatives and kernel tables.
#[derive(Debug, Clone)]
pub struct PairContext {
    f: Density,
    spec: KernelSpec,
    logs: LogDerivatives,
    mass: f64,
    fisher: f64,
}

impl PairContext {
    pub fn new(f: Density, spec: KernelSpec) -> Result<Self> {
        let mass = f.require_mass()?;
        let logs = f.log_derivatives();
        let fisher = fisher(&f).chosen;
        Ok(Self { f, spec, logs, mass, fisher })
    }

    pub fn density(&self) -> &Density {
        &self.f
    }

    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    pub fn logs(&self) -> &LogDerivatives {
        &self.logs
    }

    pub fn mass(&self) -> f64 {
        self.mass
    }

    /// Canonical Fisher information of `f`.
    pub fn fisher(&self) -> f64 {
        self.fisher
    }
}

/// Residual of the gradient decomposition on `R^6` at `(v, w)`:
/// `|g|^2 - [ 1/2 sum_i |g_vi + g_wi|^2 + |n . g|^2 + 1/(2|v-w|^2) sum_k |b~_k . g|^2 ]`.
pub fn decomposition_identity_check(g: &[f64; 6], v: &Vec3, w: &Vec3) -> Result<f64> {
    let z = sub(v, w);
    let r2 = norm2(&z);
    if r2 == 0.0 {
        return Err(Error::Degenerate("decomposition needs v != w".into()));
    }
    let gv = [g[0], g[1], g[2]];
    let gw = [g[3], g[4], g[5]];
    let total = norm2(&gv) + norm2(&gw);
    let par = 0.5 * norm2(&[gv[0] + gw[0], gv[1] + gw[1], gv[2] + gw[2]]);
    let n0 = z.map(|x| x / r2.sqrt());
    let normal = (dot(&n0, &gv) - dot(&n0, &gw)) / std::f64::consts::SQRT_2;
    let mut sph = 0.0;
    for k in 0..3 {
        let b = cross(&crate::linalg::unit(k), &z);
        let t = dot(&b, &gv) - dot(&b, &gw);
        sph += t * t;
    }
    Ok(total - (par + normal * normal + sph / (2.0 * r2)))
}

/// The dissipation terms for one potential.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DissipationTerms {
    pub d_par: f64,
    pub d_rad: f64,
    pub d_sph: f64,
    pub r_sph: f64,
    /// `sum_k int (alpha')^2 / (2 alpha) F |b~_k . grad log F|^2`.
    pub correction: f64,
}

impl DissipationTerms {
    /// `D_par + D_rad + D_sph - correction`, equal to `-d i / dt`.
    pub fn total(&self) -> f64 {
        self.d_par + self.d_rad + self.d_sph - self.correction
    }
}

/// Named inequality slacks; each is nonnegative when the inequality holds.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Margins {
    /// `D_sph - 11 R_sph` with the raw potential.
    pub sph_over_rsph: f64,
    /// The same with the cutoff potential.
    pub sph_over_rsph_cutoff: f64,
    /// `D_par + D_sph - (J1 - J2)` with raw `D` terms.
    pub lemma: f64,
    /// `2^(3-gamma) (M i + C M^2) - |J2|` with the measured constant `C`.
    pub j2_bound: f64,
}

/// All pairwise functionals of one snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct DissipationReport {
    pub entropy_dissipation: f64,
    /// Terms with the raw potential `alpha`.
    pub raw: DissipationTerms,
    /// Terms with the cutoff potential `alpha~`.
    pub cutoff: DissipationTerms,
    pub j1: f64,
    pub j2: f64,
    /// `-d i/dt` predicted from the raw terms.
    pub fisher_dissipation_total: f64,
    pub mass: f64,
    pub fisher: f64,
    /// Size of the first-order integrands with the `xi`-cancellation removed.
    pub first_order_scale: f64,
    /// Size of the second-order integrands with the cancellation removed.
    pub second_order_scale: f64,
    pub margins: Margins,
}

/// Whether pairs are visited once (exploiting exchange symmetry) or in both orders.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LoopMode {
    #[default]
    Symmetrized,
    Ordered,
}

#[derive(Debug, Clone, Copy)]
struct CellData {
    f: f64,
    g: Vec3,
    h: Sym3,
}

/// Potential values that depend only on the offset between two cells.
#[derive(Debug, Clone, Copy, Default)]
struct OffsetEntry {
    inv_r2: f64,
    inv_r: f64,
    alpha: f64,
    dsqrt: f64,
    corr: f64,
    alpha_c: f64,
    dsqrt_c: f64,
    corr_c: f64,
}

fn potential_entry(spec: &KernelSpec, mode: CutoffMode, r: f64) -> (f64, f64, f64) {
    let (a, da) = spec.alpha_with_derivative_in(mode, r);
    if a <= 0.0 {
        return (0.0, 0.0, 0.0);
    }
    (a, da / (2.0 * a.sqrt()), da * da / (2.0 * a))
}

struct OffsetTable {
    side: usize,
    entries: Vec<OffsetEntry>,
}

impl OffsetTable {
    fn new(n: usize, h: f64, spec: &KernelSpec) -> Self {
        let side = 2 * n - 1;
        let entries = (0..side * side * side)
            .into_par_iter()
            .map(|idx| {
                let d = [idx / (side * side), (idx / side) % side, idx % side]
                    .map(|x| (x as isize - (n as isize - 1)) as f64 * h);
                let r2 = norm2(&d);
                if r2 == 0.0 {
                    return OffsetEntry::default();
                }
                let r = r2.sqrt();
                let (alpha, dsqrt, corr) = potential_entry(spec, CutoffMode::Raw, r);
                let (alpha_c, dsqrt_c, corr_c) = potential_entry(spec, CutoffMode::Cutoff, r);
                OffsetEntry { inv_r2: 1.0 / r2, inv_r: 1.0 / r, alpha, dsqrt, corr, alpha_c, dsqrt_c, corr_c }
            })
            .collect();
        Self { side, entries }
    }
}

/// Slots of the per-pair accumulator.
const ED: usize = 0;
const DPAR: usize = 1;
const DSPH: usize = 2;
const RSPH: usize = 3;
const DRAD: usize = 4;
const CORR: usize = 5;
const DPAR_C: usize = 6;
const DSPH_C: usize = 7;
const RSPH_C: usize = 8;
const DRAD_C: usize = 9;
const CORR_C: usize = 10;
const J1V: usize = 11;
const J1W: usize = 12;
const J2: usize = 13;
const SCALE1: usize = 14;
const SCALE2: usize = 15;
const SLOTS: usize = 16;

type Mat3 = [[f64; 3]; 3];

#[inline]
fn sym_to_mat(s: &Sym3) -> Mat3 {
    let m = &s.0;
    [[m[0], m[3], m[4]], [m[3], m[1], m[5]], [m[4], m[5], m[2]]]
}

#[inline]
fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut c = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            c[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
        }
    }
    c
}

/// `tr(M M)` for a general 3x3 `M`.
#[inline]
fn trace_square(m: &Mat3) -> f64 {
    let mut t = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            t += m[i][j] * m[j][i];
        }
    }
    t
}

/// Ordered-pair integrands at `(v, w)`, already multiplied by `F` and the
/// potential. `J1V` uses `H(v)`; `J1W` is the same expression with `H(w)`.
#[inline]
fn pair_integrands(z: &Vec3, e: &OffsetEntry, cv: &CellData, cw: &CellData, out: &mut [f64; SLOTS]) {
    let ff = cv.f * cw.f;
    if ff == 0.0 {
        return;
    }
    let r2 = 1.0 / e.inv_r2;
    let xi = sub(&cv.g, &cw.g);
    let s = cross(z, &xi);
    let s2 = norm2(&s);
    let zx = dot(z, &xi);
    let xi2 = norm2(&xi);
    let a = sym_to_mat(&a_matrix(z));

    // D_par: tr(dH a dH)
    let dh = sym_to_mat(&cv.h.sub(&cw.h));
    let dh2 = mat_mul(&dh, &dh);
    let p = r2 * (dh2[0][0] + dh2[1][1] + dh2[2][2])
        - (0..3).map(|i| z[i] * dot(&dh2[i], z)).sum::<f64>();

    // D_sph: |T|_F^2 with T = 2 (z xi^T - (z.xi) I) + [z]x S [z]x^T
    let s_mat = sym_to_mat(&cv.h.add(&cw.h));
    let zx_mat: Mat3 = [[0.0, -z[2], z[1]], [z[2], 0.0, -z[0]], [-z[1], z[0], 0.0]];
    let zx_t: Mat3 = [[0.0, z[2], -z[1]], [-z[2], 0.0, z[0]], [z[1], -z[0], 0.0]];
    let nmat = mat_mul(&mat_mul(&zx_mat, &s_mat), &zx_t);
    let mut q = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            let diag = if i == j { zx } else { 0.0 };
            let t = 2.0 * (z[i] * xi[j] - diag) + nmat[i][j];
            q += t * t;
        }
    }

    // D_rad: sqrt(2) (sqrt a)' s_i + sqrt(a) / (sqrt(2) r) (2 s_i + (z x S z)_i)
    let sz = [dot(&s_mat[0], z), dot(&s_mat[1], z), dot(&s_mat[2], z)];
    let zsz = cross(z, &sz);
    let rad = |alpha: f64, dsqrt: f64| -> f64 {
        let c1 = std::f64::consts::SQRT_2 * dsqrt;
        let c2 = alpha.sqrt() * e.inv_r / std::f64::consts::SQRT_2;
        (0..3).map(|i| {
            let t = c1 * s[i] + c2 * (2.0 * s[i] + zsz[i]);
            t * t
        }).sum::<f64>()
    };

    // J1: tr(H a H a)
    let hv = sym_to_mat(&cv.h);
    let hw = sym_to_mat(&cw.h);
    let j1v = trace_square(&mat_mul(&hv, &a));
    let j1w = trace_square(&mat_mul(&hw, &a));

    let (al, alc) = (e.alpha, e.alpha_c);
    out[ED] += 0.5 * ff * al * s2;
    out[DPAR] += 0.5 * ff * al * p;
    out[DSPH] += 0.5 * ff * al * e.inv_r2 * q;
    out[RSPH] += ff * al * e.inv_r2 * s2;
    out[DRAD] += ff * rad(al, e.dsqrt);
    out[CORR] += ff * e.corr * s2;
    out[DPAR_C] += 0.5 * ff * alc * p;
    out[DSPH_C] += 0.5 * ff * alc * e.inv_r2 * q;
    out[RSPH_C] += ff * alc * e.inv_r2 * s2;
    out[DRAD_C] += ff * rad(alc, e.dsqrt_c);
    out[CORR_C] += ff * e.corr_c * s2;
    out[J1V] += ff * alc * e.inv_r2 * j1v;
    out[J1W] += ff * alc * e.inv_r2 * j1w;
    out[J2] += 2.0 * ff * alc * e.inv_r2 * (r2 * xi2 + zx * zx);
    let gg = norm2(&cv.g) + norm2(&cw.g);
    out[SCALE1] += ff * al * r2 * gg;
    out[SCALE2] += ff * al * (r2 * (cv.h.frob2() + cw.h.frob2()) + gg);
}

fn cell_data(ctx: &PairContext) -> Vec<CellData> {
    let v = ctx.f.values();
    (0..v.len()).map(|c| CellData { f: v[c], g: ctx.logs.grad[c], h: ctx.logs.hess[c] }).collect()
}

/// Raw sums over pairs (ordered-pair convention), without the `h^6` factor.
fn pair_sums(ctx: &PairContext, mode: LoopMode) -> [f64; SLOTS] {
    let grid = *ctx.f.grid();
    let n = grid.n();
    let h = grid.spacing();
    let table = OffsetTable::new(n, h, &ctx.spec);
    let cells = cell_data(ctx);
    let side = table.side;
    let rows: Vec<[f64; SLOTS]> = (0..grid.len())
        .into_par_iter()
        .map(|v| {
            let mut acc = [0.0; SLOTS];
            let cv = &cells[v];
            if cv.f == 0.0 {
                return acc;
            }
            let [i0, j0, k0] = grid.coords(v);
            let start = match mode {
                LoopMode::Symmetrized => v + 1,
                LoopMode::Ordered => 0,
            };
            let [is, js, ks] = grid.coords(start.min(grid.len() - 1));
            if start >= grid.len() {
                return acc;
            }
            for i in is..n {
                let di = i0 + n - 1 - i;
                let jstart = if i == is { js } else { 0 };
                for j in jstart..n {
                    let dj = j0 + n - 1 - j;
                    let kstart = if i == is && j == jstart && jstart == js { ks } else { 0 };
                    let base = (di * side + dj) * side;
                    let zi = (i0 as f64 - i as f64) * h;
                    let zj = (j0 as f64 - j as f64) * h;
                    let row = (i * n + j) * n;
                    for k in kstart..n {
                        let w = row + k;
                        if w == v {
                            continue;
                        }
                        let e = &table.entries[base + k0 + n - 1 - k];
                        let z = [zi, zj, (k0 as f64 - k as f64) * h];
                        pair_integrands(&z, e, cv, &cells[w], &mut acc);
                    }
                }
            }
            acc
        })
        .collect();
    let mut sums = pairwise_sum_rows(&rows);
    if mode == LoopMode::Symmetrized {
        // each unordered pair stands for both orders
        let (j1v, j1w) = (sums[J1V], sums[J1W]);
        for s in sums.iter_mut() {
            *s *= 2.0;
        }
        sums[J1V] = j1v + j1w;
        sums[J1W] = j1v + j1w;
    }
    sums
}

fn build_report(ctx: &PairContext, sums: [f64; SLOTS]) -> DissipationReport {
    let h6 = ctx.f.grid().cell_volume().powi(2);
    let s = sums.map(|x| x * h6);
    let raw = DissipationTerms { d_par: s[DPAR], d_rad: s[DRAD], d_sph: s[DSPH], r_sph: s[RSPH], correction: s[CORR] };
    let cutoff = DissipationTerms {
        d_par: s[DPAR_C],
        d_rad: s[DRAD_C],
        d_sph: s[DSPH_C],
        r_sph: s[RSPH_C],
        correction: s[CORR_C],
    };
    let (j1, j2) = (s[J1V], s[J2]);
    let gamma = ctx.spec.gamma();
    let c_eta = ctx.spec.eta().laplacian_bound_constant(gamma);
    let pref = 2f64.powf(3.0 - gamma);
    let margins = Margins {
        sph_over_rsph: raw.d_sph - 2.0 * crate::kernel::LAMBDA_3 * raw.r_sph,
        sph_over_rsph_cutoff: cutoff.d_sph - 2.0 * crate::kernel::LAMBDA_3 * cutoff.r_sph,
        lemma: raw.d_par + raw.d_sph - (j1 - j2),
        j2_bound: pref * (ctx.mass * ctx.fisher + c_eta * ctx.mass * ctx.mass) - j2.abs(),
    };
    DissipationReport {
        entropy_dissipation: s[ED],
        raw,
        cutoff,
        j1,
        j2,
        fisher_dissipation_total: raw.total(),
        mass: ctx.mass,
        fisher: ctx.fisher,
        first_order_scale: s[SCALE1],
        second_order_scale: s[SCALE2],
        margins,
    }
}

/// Every pairwise functional in one sweep.
pub fn fisher_dissipation_terms(ctx: &PairContext) -> DissipationReport {
    fisher_dissipation_terms_with(ctx, LoopMode::Symmetrized)
}

pub fn fisher_dissipation_terms_with(ctx: &PairContext, mode: LoopMode) -> DissipationReport {
    build_report(ctx, pair_sums(ctx, mode))
}

/// `1/2 h^6 sum_{v != w} f(v) f(w) alpha(|v-w|) xi^T a(v-w) xi` with the raw potential.
pub fn entropy_dissipation(ctx: &PairContext) -> f64 {
    fisher_dissipation_terms(ctx).entropy_dissipation
}

/// `(J1, J2)` with the cutoff potential.
pub fn j_terms(ctx: &PairContext) -> (f64, f64) {
    let r = fisher_dissipation_terms(ctx);
    (r.j1, r.j2)
}

/// Reference evaluation of every pairwise functional from the six-dimensional
/// definitions: each `b~_j . grad log F` is differentiated with the Jacobian
/// of the lifted field and the block Hessian of `log F`, visiting all ordered
/// pairs. Quadratic cost with large constants; meant for small grids.
pub fn brute_force_report(ctx: &PairContext) -> DissipationReport {
    let grid = *ctx.f.grid();
    let cells = cell_data(ctx);
    let spec = ctx.spec;
    let rows: Vec<[f64; SLOTS]> = (0..grid.len())
        .into_par_iter()
        .map(|v| {
            let mut acc = [0.0; SLOTS];
            for w in 0..grid.len() {
                if w == v {
                    continue;
                }
                let z = sub(&grid.center(v), &grid.center(w));
                brute_pair(&z, &spec, &cells[v], &cells[w], &mut acc);
            }
            acc
        })
        .collect();
    build_report(ctx, pairwise_sum_rows(&rows))
}

fn brute_pair(z: &Vec3, spec: &KernelSpec, cv: &CellData, cw: &CellData, acc: &mut [f64; SLOTS]) {
    let ff = cv.f * cw.f;
    let r = norm2(z).sqrt();
    let grad_g: [f64; 6] = [cv.g[0], cv.g[1], cv.g[2], cw.g[0], cw.g[1], cw.g[2]];
    let mut hess = [[0.0; 6]; 6];
    for i in 0..3 {
        for j in 0..3 {
            hess[i][j] = cv.h.get(i, j);
            hess[3 + i][3 + j] = cw.h.get(i, j);
        }
    }
    // lifted fields and their Jacobians: b~_j = (e_j x z, -e_j x z), z = v - w
    let mut bt = [[0.0; 6]; 3];
    let mut jac = [[[0.0; 6]; 6]; 3];
    for j in 0..3 {
        let b = cross(&crate::linalg::unit(j), z);
        for c in 0..3 {
            bt[j][c] = b[c];
            bt[j][3 + c] = -b[c];
        }
        for k in 0..3 {
            // d(e_j x z)/dz_k = e_j x e_k
            let col = cross(&crate::linalg::unit(j), &crate::linalg::unit(k));
            for c in 0..3 {
                jac[j][c][k] = col[c];
                jac[j][c][3 + k] = -col[c];
                jac[j][3 + c][k] = -col[c];
                jac[j][3 + c][3 + k] = col[c];
            }
        }
    }
    let dot6 = |a: &[f64; 6], b: &[f64; 6]| (0..6).map(|i| a[i] * b[i]).sum::<f64>();
    let phi: [f64; 3] = [0, 1, 2].map(|j| dot6(&bt[j], &grad_g));
    // grad phi_j = Jac(b~_j)^T grad log F + Hess(log F) b~_j
    let grad_phi: [[f64; 6]; 3] = [0, 1, 2].map(|j| {
        let mut out = [0.0; 6];
        for m in 0..6 {
            let mut t = 0.0;
            for c in 0..6 {
                t += jac[j][c][m] * grad_g[c] + hess[m][c] * bt[j][c];
            }
            out[m] = t;
        }
        out
    });
    let n6: [f64; 6] = {
        let s = std::f64::consts::SQRT_2 * r;
        [z[0] / s, z[1] / s, z[2] / s, -z[0] / s, -z[1] / s, -z[2] / s]
    };
    let phi2: f64 = phi.iter().map(|x| x * x).sum();
    let mut par = 0.0;
    let mut sph = 0.0;
    for j in 0..3 {
        for i in 0..3 {
            let t = grad_phi[j][i] + grad_phi[j][3 + i];
            par += t * t;
            let u = dot6(&bt[i], &grad_phi[j]);
            sph += u * u;
        }
    }
    let normal: [f64; 3] = [0, 1, 2].map(|j| dot6(&n6, &grad_phi[j]));
    for (mode, slots) in [(CutoffMode::Raw, [DPAR, DSPH, RSPH, DRAD, CORR]), (CutoffMode::Cutoff, [DPAR_C, DSPH_C, RSPH_C, DRAD_C, CORR_C])] {
        let (al, dal) = spec.alpha_with_derivative_in(mode, r);
        let sq = al.sqrt();
        let dsq = if al > 0.0 { dal / (2.0 * sq) } else { 0.0 };
        // n . grad sqrt(alpha(|v - w|)) = sqrt(2) (sqrt alpha)'
        let nsq = std::f64::consts::SQRT_2 * dsq;
        acc[slots[0]] += 0.5 * al * ff * par;
        acc[slots[1]] += al / (2.0 * r * r) * ff * sph;
        acc[slots[2]] += al / (r * r) * ff * phi2;
        acc[slots[3]] += ff * (0..3).map(|j| (nsq * phi[j] + sq * normal[j]).powi(2)).sum::<f64>();
        acc[slots[4]] += if al > 0.0 { dal * dal / (2.0 * al) * ff * phi2 } else { 0.0 };
        if mode == CutoffMode::Raw {
            acc[ED] += 0.5 * ff * al * phi2;
        } else {
            // b_i . grad_v (b_j . xi) = b_i . H_v b_j + (b_i . grad_v b_j) xi
            let xi = sub(&cv.g, &cw.g);
            let mut j1 = 0.0;
            let mut j2 = 0.0;
            for i in 0..3 {
                let bi = cross(&crate::linalg::unit(i), z);
                for j in 0..3 {
                    let bj = cross(&crate::linalg::unit(j), z);
                    let x = dot(&bi, &cv.h.mul_vec(&bj));
                    let mut y = 0.0;
                    for k in 0..3 {
                        let dbj = cross(&crate::linalg::unit(j), &crate::linalg::unit(k));
                        y += bi[k] * dot(&dbj, &xi);
                    }
                    j1 += x * x;
                    j2 += y * y;
                }
            }
            acc[J1V] += al / (r * r) * ff * j1;
            acc[J2] += 2.0 * al / (r * r) * ff * j2;
        }
    }
    let gg = norm2(&cv.g) + norm2(&cw.g);
    let al = spec.alpha(r);
    acc[SCALE1] += ff * al * r * r * gg;
    acc[SCALE2] += ff * al * (r * r * (cv.h.frob2() + cw.h.frob2()) + gg);
}

/// Orthonormal basis of symmetric 3x3 matrices in the Frobenius inner product.
pub fn symmetric_basis() -> [Sym3; 6] {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    [
        Sym3([1.0, 0.0, 0.0, 0.0, 0.0, 0.0]),
        Sym3([0.0, 1.0, 0.0, 0.0, 0.0, 0.0]),
        Sym3([0.0, 0.0, 1.0, 0.0, 0.0, 0.0]),
        Sym3([0.0, 0.0, 0.0, s, 0.0, 0.0]),
        Sym3([0.0, 0.0, 0.0, 0.0, s, 0.0]),
        Sym3([0.0, 0.0, 0.0, 0.0, 0.0, s]),
    ]
}

/// `tr(a X a Y)` for symmetric `X`, `Y`.
fn trace_axay(a: &Mat3, x: &Sym3, y: &Sym3) -> f64 {
    let ax = mat_mul(a, &sym_to_mat(x));
    let ay = mat_mul(a, &sym_to_mat(y));
    let mut t = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            t += ax[i][j] * ay[j][i];
        }
    }
    t
}

/// `[ h^3 sum_{w != v} alpha~/|v-w|^2 f(w) tr(a H a H) ] / <v>^(gamma-2)` for `|H|_F = 1`.
pub fn coercivity_probe(ctx: &PairContext, v_cell: usize, hmat: &Sym3) -> Result<f64> {
    let grid = ctx.f.grid();
    if v_cell >= grid.len() {
        return Err(Error::OutOfRange(format!("cell {v_cell} outside the grid")));
    }
    if (hmat.frob2() - 1.0).abs() > 1e-12 {
        return Err(Error::OutOfRange("H must have unit Frobenius norm".into()));
    }
    let v = grid.center(v_cell);
    let terms: Vec<f64> = (0..grid.len())
        .map(|w| {
            let fw = ctx.f.values()[w];
            if w == v_cell || fw == 0.0 {
                return 0.0;
            }
            let z = sub(&v, &grid.center(w));
            let r2 = norm2(&z);
            let a = sym_to_mat(&a_matrix(&z));
            ctx.spec.alpha_tilde(r2.sqrt()) / r2 * fw * trace_axay(&a, hmat, hmat)
        })
        .collect();
    let integral = grid.cell_volume() * crate::numeric::pairwise_sum(&terms);
    Ok(integral / japanese_bracket(&v).powf(ctx.spec.gamma() - 2.0))
}

/// Infimum of the coercivity ratio over all cells and all unit symmetric `H`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoercivityScan {
    pub infimum: f64,
    pub argmin_cell: usize,
    /// Minimising direction, unit Frobenius norm.
    pub argmin_matrix: Sym3,
    /// Per-cell minimum ratio.
    pub per_cell: Vec<f64>,
}

/// Quadratic form `M_kl(v) = h^3 sum_w alpha~/r^2 f(w) tr(a E_k a E_l)` assembled
/// by 21 FFT convolutions; its smallest eigenvalue is the exact minimum over `H`.
pub fn coercivity_scan(ctx: &PairContext) -> CoercivityScan {
    let grid = *ctx.f.grid();
    let plan = ConvolutionPlan::new(grid);
    let basis = symmetric_basis();
    let spec = ctx.spec;
    let signal = plan.signal_spectrum(ctx.f.values());
    let pairs: Vec<(usize, usize)> = (0..6).flat_map(|k| (k..6).map(move |l| (k, l))).collect();
    let fields: Vec<Vec<f64>> = pairs
        .par_iter()
        .map(|&(k, l)| {
            let (ek, el) = (basis[k], basis[l]);
            let kernel = move |d: [isize; 3], z: &Vec3| -> f64 {
                if d == [0, 0, 0] {
                    return 0.0;
                }
                let r2 = norm2(z);
                let a = sym_to_mat(&a_matrix(z));
                spec.alpha_tilde(r2.sqrt()) / r2 * trace_axay(&a, &ek, &el)
            };
            plan.apply(&signal, &plan.kernel_spectrum(&kernel))
        })
        .collect();
    let results: Vec<(f64, Sym3)> = (0..grid.len())
        .into_par_iter()
        .map(|c| {
            let mut m = nalgebra::Matrix6::<f64>::zeros();
            for (p, &(k, l)) in pairs.iter().enumerate() {
                m[(k, l)] = fields[p][c];
                m[(l, k)] = fields[p][c];
            }
            let eig = m.symmetric_eigen();
            let (imin, lmin) = eig
                .eigenvalues
                .iter()
                .enumerate()
                .fold((0, f64::INFINITY), |acc, (i, &x)| if x < acc.1 { (i, x) } else { acc });
            let vec = eig.eigenvectors.column(imin);
            let mut hm = Sym3::ZERO;
            for (k, e) in basis.iter().enumerate() {
                hm = hm.add(&e.scale(vec[k]));
            }
            let weight = japanese_bracket(&grid.center(c)).powf(spec.gamma() - 2.0);
            (lmin / weight, hm)
        })
        .collect();
    let (argmin_cell, _) = results
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, r)| if r.0 < acc.1 { (i, r.0) } else { acc });
    CoercivityScan {
        infimum: results[argmin_cell].0,
        argmin_cell,
        argmin_matrix: results[argmin_cell].1,
        per_cell: results.iter().map(|r| r.0).collect(),
    }
}

/// Slacks of the Fisher-dissipation lower bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TheoremMargins {
    /// `1 - gamma^2 / (4 Lambda_3)`.
    pub factor: f64,
    pub c1: f64,
    pub big_c1: f64,
    pub big_c2: f64,
    /// `factor (D_par + D_sph)`.
    pub lhs: f64,
    /// `c1 whf - C1 M i - C2 M^2`.
    pub rhs: f64,
    /// `lhs - rhs`.
    pub margin: f64,
    /// Largest magnitude among the terms entering the margin.
    pub dominant: f64,
    /// `-d i/dt - lhs` when a flow derivative is supplied.
    pub flow_margin: Option<f64>,
}

impl TheoremMargins {
    /// Both margins at least `-tol_fraction` of the dominant term.
    pub fn passes(&self, tol_fraction: f64) -> bool {
        let tol = tol_fraction * self.dominant;
        self.margin >= -tol && self.flow_margin.is_none_or(|m| m >= -tol)
    }
}

/// Evaluate the chain `-di/dt >= factor (D_par + D_sph) >= c1 whf - C1 M i - C2 M^2`
/// with the measured coercivity infimum and the measured cutoff constant.
pub fn dissipation_inequality_check(
    spec: &KernelSpec,
    report: &DissipationReport,
    coercivity: f64,
    whf: f64,
    minus_didt: Option<f64>,
) -> TheoremMargins {
    let gamma = spec.gamma();
    let factor = spec.coercivity_factor();
    let pref = 2f64.powf(3.0 - gamma);
    let c1 = factor * coercivity;
    let big_c1 = factor * pref;
    let big_c2 = factor * spec.eta().laplacian_bound_constant(gamma) * pref;
    let m = report.mass;
    let i = report.fisher;
    let lhs = factor * (report.raw.d_par + report.raw.d_sph);
    let rhs = c1 * whf - big_c1 * m * i - big_c2 * m * m;
    let flow_margin = minus_didt.map(|d| d - lhs);
    let mut dominant = [lhs, c1 * whf, big_c1 * m * i, big_c2 * m * m].iter().fold(0.0f64, |a, x| a.max(x.abs()));
    if let Some(d) = minus_didt {
        dominant = dominant.max(d.abs());
    }
    TheoremMargins { factor, c1, big_c1, big_c2, lhs, rhs, margin: lhs - rhs, dominant, flow_margin }
}
