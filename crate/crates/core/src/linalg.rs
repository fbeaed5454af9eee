//! Small fixed-size vector and symmetric-matrix helpers used in the hot loops.

pub type Vec3 = [f64; 3];

#[inline]
pub fn dot(a: &Vec3, b: &Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn cross(a: &Vec3, b: &Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
pub fn sub(a: &Vec3, b: &Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn add(a: &Vec3, b: &Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn scale(a: &Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

#[inline]
pub fn norm2(a: &Vec3) -> f64 {
    dot(a, a)
}

/// Unit vector along axis `k` (0-based).
#[inline]
pub fn unit(k: usize) -> Vec3 {
    let mut e = [0.0; 3];
    e[k] = 1.0;
    e
}

/// Symmetric 3x3 matrix stored as (xx, yy, zz, xy, xz, yz).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Sym3(pub [f64; 6]);

impl Sym3 {
    pub const ZERO: Sym3 = Sym3([0.0; 6]);
    pub const IDENTITY: Sym3 = Sym3([1.0, 1.0, 1.0, 0.0, 0.0, 0.0]);

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let s = &self.0;
        match (i, j) {
            (0, 0) => s[0],
            (1, 1) => s[1],
            (2, 2) => s[2],
            (0, 1) | (1, 0) => s[3],
            (0, 2) | (2, 0) => s[4],
            (1, 2) | (2, 1) => s[5],
            _ => panic!("Sym3 index out of range: ({i}, {j})"),
        }
    }

    pub fn from_fn(mut f: impl FnMut(usize, usize) -> f64) -> Sym3 {
        Sym3([f(0, 0), f(1, 1), f(2, 2), f(0, 1), f(0, 2), f(1, 2)])
    }

    #[inline]
    pub fn mul_vec(&self, x: &Vec3) -> Vec3 {
        let s = &self.0;
        [
            s[0] * x[0] + s[3] * x[1] + s[4] * x[2],
            s[3] * x[0] + s[1] * x[1] + s[5] * x[2],
            s[4] * x[0] + s[5] * x[1] + s[2] * x[2],
        ]
    }

    #[inline]
    pub fn trace(&self) -> f64 {
        self.0[0] + self.0[1] + self.0[2]
    }

    /// Squared Frobenius norm.
    #[inline]
    pub fn frob2(&self) -> f64 {
        let s = &self.0;
        s[0] * s[0] + s[1] * s[1] + s[2] * s[2] + 2.0 * (s[3] * s[3] + s[4] * s[4] + s[5] * s[5])
    }

    #[inline]
    pub fn add(&self, o: &Sym3) -> Sym3 {
        let mut r = [0.0; 6];
        for (k, r) in r.iter_mut().enumerate() {
            *r = self.0[k] + o.0[k];
        }
        Sym3(r)
    }

    #[inline]
    pub fn sub(&self, o: &Sym3) -> Sym3 {
        let mut r = [0.0; 6];
        for (k, r) in r.iter_mut().enumerate() {
            *r = self.0[k] - o.0[k];
        }
        Sym3(r)
    }

    pub fn scale(&self, c: f64) -> Sym3 {
        Sym3(self.0.map(|x| x * c))
    }

    pub fn to_matrix(&self) -> nalgebra::Matrix3<f64> {
        nalgebra::Matrix3::from_fn(|i, j| self.get(i, j))
    }

    /// Smallest eigenvalue.
    pub fn min_eigenvalue(&self) -> f64 {
        self.to_matrix().symmetric_eigenvalues().min()
    }

    pub fn max_eigenvalue(&self) -> f64 {
        self.to_matrix().symmetric_eigenvalues().max()
    }
}

/// `a(z) = |z|^2 I - z z^T`.
#[inline]
pub fn projection_matrix(z: &Vec3) -> Sym3 {
    let r2 = norm2(z);
    Sym3([
        r2 - z[0] * z[0],
        r2 - z[1] * z[1],
        r2 - z[2] * z[2],
        -z[0] * z[1],
        -z[0] * z[2],
        -z[1] * z[2],
    ])
}
