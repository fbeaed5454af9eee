//! Naive six-fold loop over grid indices evaluating closed-form pair integrands
//! with its own kernel formulas.

use landau_fisher::grid::{make_grid, Density};
use landau_fisher::kernel::EtaBlend;
use landau_fisher::linalg::{norm2, Vec3};
use landau_fisher::pair::DissipationReport;

type M3 = [[f64; 3]; 3];

fn mat(f: impl Fn(usize, usize) -> f64) -> M3 {
    std::array::from_fn(|i| std::array::from_fn(|j| f(i, j)))
}

fn mul(a: &M3, b: &M3) -> M3 {
    mat(|i, j| (0..3).map(|k| a[i][k] * b[k][j]).sum())
}

fn cross_matrix(z: &Vec3) -> M3 {
    [[0.0, -z[2], z[1]], [z[2], 0.0, -z[0]], [-z[1], z[0], 0.0]]
}

fn cross(a: &Vec3, b: &Vec3) -> Vec3 {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn dot(a: &Vec3, b: &Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// `(alpha, alpha')` for `r^gamma` and for `eta(r) r^gamma`.
fn potentials(gamma: f64, r: f64) -> [(f64, f64); 2] {
    let raw = (r.powf(gamma), gamma * r.powf(gamma - 1.0));
    let (e, de, _) = EtaBlend::default().eval(r);
    let cut = (e * r.powf(gamma), de * r.powf(gamma) + e * gamma * r.powf(gamma - 1.0));
    [raw, cut]
}

#[derive(Default, Debug)]
pub struct Sums {
    ed: f64,
    terms: [[f64; 5]; 2],
    j1: f64,
    j2: f64,
}

pub fn oracle(f: &Density, gamma: f64) -> Sums {
    let grid = *f.grid();
    let n = grid.n();
    let logs = f.log_derivatives();
    let hm = |c: usize| mat(|i, j| logs.hess[c].get(i, j));
    let mut s = Sums::default();
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                for i2 in 0..n {
                    for j2 in 0..n {
                        for k2 in 0..n {
                            let (v, w) = (grid.index(i, j, k), grid.index(i2, j2, k2));
                            if v == w {
                                continue;
                            }
                            let (cv, cw) = (grid.center(v), grid.center(w));
                            let z = [cv[0] - cw[0], cv[1] - cw[1], cv[2] - cw[2]];
                            let r2 = norm2(&z);
                            let r = r2.sqrt();
                            let ff = f.values()[v] * f.values()[w];
                            let (gv, gw) = (logs.grad[v], logs.grad[w]);
                            let xi = [gv[0] - gw[0], gv[1] - gw[1], gv[2] - gw[2]];
                            let sv = cross(&z, &xi);
                            let s2 = norm2(&sv);
                            let (hv, hw) = (hm(v), hm(w));
                            let dh = mat(|a, b| hv[a][b] - hw[a][b]);
                            let sum = mat(|a, b| hv[a][b] + hw[a][b]);
                            let am = mat(|a, b| if a == b { r2 } else { 0.0 } - z[a] * z[b]);
                            let tr = |m: &M3| m[0][0] + m[1][1] + m[2][2];
                            let par = tr(&mul(&mul(&dh, &am), &dh));
                            let zx = cross_matrix(&z);
                            let zxt = mat(|a, b| zx[b][a]);
                            let zs = mul(&mul(&zx, &sum), &zxt);
                            let zxi = dot(&z, &xi);
                            let t = mat(|a, b| 2.0 * (z[a] * xi[b] - if a == b { zxi } else { 0.0 }) + zs[a][b]);
                            let t2: f64 = t.iter().flatten().map(|x| x * x).sum();
                            let ssz = {
                                let m = [0, 1, 2].map(|a| dot(&sum[a], &z));
                                cross(&z, &m)
                            };
                            for (mode, (al, dal)) in potentials(gamma, r).into_iter().enumerate() {
                                let sq = al.sqrt();
                                let dsq = dal / (2.0 * sq);
                                let rad: f64 = (0..3)
                                    .map(|a| {
                                        let x = std::f64::consts::SQRT_2 * dsq * sv[a]
                                            + sq / (std::f64::consts::SQRT_2 * r) * (2.0 * sv[a] + ssz[a]);
                                        x * x
                                    })
                                    .sum();
                                let e = &mut s.terms[mode];
                                e[0] += 0.5 * al * ff * par;
                                e[1] += ff * rad;
                                e[2] += al / (2.0 * r2) * ff * t2;
                                e[3] += al / r2 * ff * s2;
                                e[4] += dal * dal / (2.0 * al) * ff * s2;
                                if mode == 0 {
                                    s.ed += 0.5 * ff * al * s2;
                                } else {
                                    s.j1 += al / r2 * ff * tr(&mul(&mul(&mul(&hv, &am), &hv), &am));
                                    s.j2 += 2.0 * al / r2 * ff * (r2 * norm2(&xi) + zxi * zxi);
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    let h6 = grid.cell_volume().powi(2);
    s.ed *= h6;
    s.j1 *= h6;
    s.j2 *= h6;
    for t in s.terms.iter_mut().flatten() {
        *t *= h6;
    }
    s
}

pub fn fields(r: &DissipationReport) -> Vec<(&'static str, f64)> {
    let mut out = vec![("entropy_dissipation", r.entropy_dissipation), ("j1", r.j1), ("j2", r.j2)];
    for (tag, t) in [("raw", &r.raw), ("cutoff", &r.cutoff)] {
        let names: [&'static str; 5] = match tag {
            "raw" => ["raw.d_par", "raw.d_rad", "raw.d_sph", "raw.r_sph", "raw.correction"],
            _ => ["cutoff.d_par", "cutoff.d_rad", "cutoff.d_sph", "cutoff.r_sph", "cutoff.correction"],
        };
        out.extend(names.into_iter().zip([t.d_par, t.d_rad, t.d_sph, t.r_sph, t.correction]));
    }
    out
}

pub fn oracle_fields(s: &Sums) -> Vec<f64> {
    let mut out = vec![s.ed, s.j1, s.j2];
    for t in &s.terms {
        out.extend_from_slice(t);
    }
    out
}

pub fn fixture(seed: u64) -> Density {
    let grid = make_grid(6, 3.0).unwrap();
    let c = [0.3, -0.2, 0.25, 0.15, -0.1].map(|x| x * (1.0 + 0.1 * seed as f64));
    Density::from_fn(grid, |v| {
        (-norm2(&v) / 2.0).exp()
            * (1.0 + c[0] * v[0] * v[1] + c[1] * v[2] + c[2] * (v[1] - v[2]).sin()).max(0.05)
            * (1.0 + c[3] * v[0] + c[4] * v[1] * v[2]).abs().max(0.1)
    })
    .unwrap()
}
