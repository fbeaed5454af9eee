//! Deterministic reductions and quadrature nodes.

const PAIRWISE_BLOCK: usize = 32;

/// Pairwise (tree) summation. The tree shape depends only on the slice length,
/// so repeated calls on identical input are bit-identical.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= PAIRWISE_BLOCK {
        let mut s = 0.0;
        for &x in xs {
            s += x;
        }
        s
    } else {
        let mid = xs.len() / 2;
        pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
    }
}

/// Component-wise pairwise sum of fixed-width rows.
pub fn pairwise_sum_rows<const K: usize>(rows: &[[f64; K]]) -> [f64; K] {
    if rows.len() <= PAIRWISE_BLOCK {
        let mut s = [0.0; K];
        for r in rows {
            for k in 0..K {
                s[k] += r[k];
            }
        }
        s
    } else {
        let mid = rows.len() / 2;
        let a = pairwise_sum_rows(&rows[..mid]);
        let b = pairwise_sum_rows(&rows[mid..]);
        let mut s = [0.0; K];
        for k in 0..K {
            s[k] = a[k] + b[k];
        }
        s
    }
}

/// Gauss-Legendre nodes and weights on [-1, 1], ascending nodes.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n > 0, "gauss_legendre needs at least one node");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Chebyshev-like initial guess, refined by Newton on P_n.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Integrate a smooth function on [a, b] with an n-point Gauss-Legendre rule.
pub fn gl_integrate(a: f64, b: f64, n: usize, mut f: impl FnMut(f64) -> f64) -> f64 {
    let (x, w) = gauss_legendre(n);
    let half = 0.5 * (b - a);
    let mid = 0.5 * (b + a);
    let terms: Vec<f64> = x.iter().zip(&w).map(|(&xi, &wi)| wi * f(mid + half * xi)).collect();
    half * pairwise_sum(&terms)
}
