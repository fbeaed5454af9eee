//! Discrete convolutions `(K * f)(v_i) = h^3 sum_j K(v_i - v_j) f_j` on a
//! velocity grid, by zero-padded FFT or by direct summation.

use std::sync::Arc;

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::grid::VelocityGrid;
use crate::linalg::Vec3;

/// Kernel evaluated at an integer cell offset `d = i - j` and the matching
/// displacement `z = d h`.
pub trait OffsetKernel: Sync {
    fn eval(&self, d: [isize; 3], z: &Vec3) -> f64;
}

impl<F: Fn([isize; 3], &Vec3) -> f64 + Sync> OffsetKernel for F {
    fn eval(&self, d: [isize; 3], z: &Vec3) -> f64 {
        self(d, z)
    }
}

/// 3D FFT of side `2n` used for aperiodic convolutions on an `n^3` grid.
pub struct ConvolutionPlan {
    grid: VelocityGrid,
    side: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for ConvolutionPlan {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ConvolutionPlan").field("grid", &self.grid).field("side", &self.side).finish()
    }
}

/// Spectrum of a kernel, ready to be applied to any signal on the same plan.
#[derive(Debug, Clone)]
pub struct KernelSpectrum(Vec<Complex<f64>>);

impl KernelSpectrum {
    pub fn values(&self) -> &[Complex<f64>] {
        &self.0
    }
}

impl ConvolutionPlan {
    pub fn new(grid: VelocityGrid) -> Self {
        let side = 2 * grid.n();
        let mut planner = FftPlanner::new();
        Self { grid, side, forward: planner.plan_fft_forward(side), inverse: planner.plan_fft_inverse(side) }
    }

    pub fn grid(&self) -> &VelocityGrid {
        &self.grid
    }

    fn padded_len(&self) -> usize {
        self.side * self.side * self.side
    }

    fn transform(&self, data: &mut [Complex<f64>], fft: &Arc<dyn Fft<f64>>) {
        let p = self.side;
        // axis 2 rows are contiguous
        data.par_chunks_mut(p).for_each(|row| fft.process(row));
        // axis 1: for each i-plane, gather columns
        data.par_chunks_mut(p * p).for_each(|plane| {
            let mut line = vec![Complex::new(0.0, 0.0); p];
            for k in 0..p {
                for j in 0..p {
                    line[j] = plane[j * p + k];
                }
                fft.process(&mut line);
                for j in 0..p {
                    plane[j * p + k] = line[j];
                }
            }
        });
        // axis 0: strided by p^2; transpose through a scratch buffer per (j, k) block
        let pp = p * p;
        let mut columns: Vec<Complex<f64>> = vec![Complex::new(0.0, 0.0); data.len()];
        columns.par_chunks_mut(p).enumerate().for_each(|(jk, col)| {
            for i in 0..p {
                col[i] = data[i * pp + jk];
            }
            fft.process(col);
        });
        for (jk, col) in columns.chunks(p).enumerate() {
            for i in 0..p {
                data[i * pp + jk] = col[i];
            }
        }
    }

    /// Spectrum of a kernel sampled at all offsets `d in [-(n-1), n-1]^3`.
    pub fn kernel_spectrum(&self, kernel: &dyn OffsetKernel) -> KernelSpectrum {
        let n = self.grid.n() as isize;
        let p = self.side;
        let h = self.grid.spacing();
        let mut data = vec![Complex::new(0.0, 0.0); self.padded_len()];
        data.par_chunks_mut(p * p).enumerate().for_each(|(a, plane)| {
            let da = wrap(a, p);
            if da.abs() >= n {
                return;
            }
            for b in 0..p {
                let db = wrap(b, p);
                if db.abs() >= n {
                    continue;
                }
                for c in 0..p {
                    let dc = wrap(c, p);
                    if dc.abs() >= n {
                        continue;
                    }
                    let d = [da, db, dc];
                    let z = [da as f64 * h, db as f64 * h, dc as f64 * h];
                    plane[b * p + c] = Complex::new(kernel.eval(d, &z), 0.0);
                }
            }
        });
        self.transform(&mut data, &self.forward);
        KernelSpectrum(data)
    }

    /// Spectrum of a grid signal placed in the lower corner of the padded box.
    pub fn signal_spectrum(&self, field: &[f64]) -> Vec<Complex<f64>> {
        let n = self.grid.n();
        let p = self.side;
        assert_eq!(field.len(), self.grid.len(), "signal length does not match the grid");
        let mut data = vec![Complex::new(0.0, 0.0); self.padded_len()];
        for i in 0..n {
            for j in 0..n {
                let src = &field[(i * n + j) * n..(i * n + j + 1) * n];
                let dst = &mut data[(i * p + j) * p..(i * p + j) * p + n];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d = Complex::new(*s, 0.0);
                }
            }
        }
        self.transform(&mut data, &self.forward);
        data
    }

    /// `h^3 sum_j K(v_i - v_j) f_j` for every cell `i`.
    pub fn apply(&self, signal: &[Complex<f64>], kernel: &KernelSpectrum) -> Vec<f64> {
        self.apply_spectrum(signal.iter().zip(&kernel.0).map(|(a, b)| a * b).collect())
    }

    /// Inverse transform of a product spectrum, restricted to the grid and scaled by `h^3`.
    pub fn apply_spectrum(&self, mut data: Vec<Complex<f64>>) -> Vec<f64> {
        let n = self.grid.n();
        let p = self.side;
        self.transform(&mut data, &self.inverse);
        let norm = self.grid.cell_volume() / self.padded_len() as f64;
        let mut out = vec![0.0; self.grid.len()];
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    out[(i * n + j) * n + k] = data[(i * p + j) * p + k].re * norm;
                }
            }
        }
        out
    }

    /// One-shot convolution of `field` with `kernel`.
    pub fn convolve(&self, field: &[f64], kernel: &dyn OffsetKernel) -> Vec<f64> {
        let spec = self.kernel_spectrum(kernel);
        self.apply(&self.signal_spectrum(field), &spec)
    }
}

#[inline]
fn wrap(a: usize, p: usize) -> isize {
    if a < p / 2 {
        a as isize
    } else {
        a as isize - p as isize
    }
}

/// Reference convolution by direct summation, `O(N^2)`.
pub fn direct_convolve(grid: &VelocityGrid, field: &[f64], kernel: &dyn OffsetKernel) -> Vec<f64> {
    let n = grid.n();
    let h = grid.spacing();
    let vol = grid.cell_volume();
    (0..grid.len())
        .into_par_iter()
        .map(|out| {
            let ci = grid.coords(out);
            let mut terms = Vec::with_capacity(grid.len());
            for (src, &fv) in field.iter().enumerate() {
                let cj = grid.coords(src);
                let d = [ci[0] as isize - cj[0] as isize, ci[1] as isize - cj[1] as isize, ci[2] as isize - cj[2] as isize];
                let z = [d[0] as f64 * h, d[1] as f64 * h, d[2] as f64 * h];
                terms.push(kernel.eval(d, &z) * fv);
            }
            debug_assert_eq!(terms.len(), n * n * n);
            vol * crate::numeric::pairwise_sum(&terms)
        })
        .collect()
}
