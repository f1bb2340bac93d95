//! Dense vector helpers over `[f64]`.
//!
//! Every routine walks coordinates in ascending order so that results are
//! reproducible bit-for-bit across runs and platforms.

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `y += alpha * x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn scale(alpha: f64, x: &mut [f64]) {
    for xi in x.iter_mut() {
        *xi *= alpha;
    }
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// `(1 - gamma) * a + gamma * b`, the interpolation used by every
/// accelerated update in this crate.
pub fn interpolate(a: &[f64], b: &[f64], gamma: f64) -> Vec<f64> {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (1.0 - gamma) * x + gamma * y)
        .collect()
}

/// Arithmetic mean of equally sized vectors, summed in the given order.
///
/// The running sum starts from the first vector (not from zero) so that a
/// single vector is returned unchanged.
pub fn mean(vectors: &[Vec<f64>]) -> Vec<f64> {
    let n = vectors.len();
    assert!(n > 0, "mean of an empty list");
    let mut acc = vectors[0].clone();
    for v in &vectors[1..] {
        for (a, x) in acc.iter_mut().zip(v) {
            *a += x;
        }
    }
    if n > 1 {
        let n = n as f64;
        for a in acc.iter_mut() {
            *a /= n;
        }
    }
    acc
}

pub fn is_finite(a: &[f64]) -> bool {
    a.iter().all(|x| x.is_finite())
}
