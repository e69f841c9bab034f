//! Gauss-Legendre quadrature used by the consistency checks that integrate
//! densities and bridge factors over the rate axis.

use std::sync::Mutex;
use std::{collections::HashMap, sync::OnceLock};

/// Nodes and weights of the n-point Gauss-Legendre rule on [-1, 1],
/// by Newton iteration on the Legendre recurrence. Results are cached.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "quadrature order must be at least 1");
    static CACHE: OnceLock<Mutex<HashMap<usize, (Vec<f64>, Vec<f64>)>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(hit) = cache.lock().unwrap().get(&n) {
        return hit.clone();
    }

    let mut nodes = vec![0.0f64; n];
    let mut weights = vec![0.0f64; n];
    for i in 0..n.div_ceil(2) {
        // Chebyshev-based initial guess.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            let step = p / d;
            x -= step;
            if step.abs() < 1e-15 {
                break;
            }
        }
        let (_, dp) = legendre_with_derivative(n, x);
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }

    cache
        .lock()
        .unwrap()
        .insert(n, (nodes.clone(), weights.clone()));
    (nodes, weights)
}

/// (P_n(x), P_n'(x)) via the three-term recurrence.
fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0f64;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Integrate `f` over [a, b] with a composite Gauss-Legendre rule:
/// `panels` equal subintervals, `order` points each.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, panels: usize, order: usize) -> f64 {
    let (nodes, weights) = gauss_legendre(order);
    let h = (b - a) / panels as f64;
    let mut total = 0.0;
    for p in 0..panels {
        let lo = a + p as f64 * h;
        let mid = lo + h / 2.0;
        let half = h / 2.0;
        let mut panel = 0.0;
        for (x, w) in nodes.iter().zip(&weights) {
            panel += w * f(mid + half * x);
        }
        total += panel * half;
    }
    total
}

/// Matrix-valued counterpart of `integrate`.
pub fn integrate_matrix<F: Fn(f64) -> nalgebra::DMatrix<f64>>(
    f: F,
    a: f64,
    b: f64,
    panels: usize,
    order: usize,
) -> nalgebra::DMatrix<f64> {
    let (nodes, weights) = gauss_legendre(order);
    let h = (b - a) / panels as f64;
    let probe = f(a + h / 2.0);
    let mut total = nalgebra::DMatrix::zeros(probe.nrows(), probe.ncols());
    for p in 0..panels {
        let lo = a + p as f64 * h;
        let mid = lo + h / 2.0;
        let half = h / 2.0;
        for (x, w) in nodes.iter().zip(&weights) {
            total += f(mid + half * x) * (w * half);
        }
    }
    total
}
