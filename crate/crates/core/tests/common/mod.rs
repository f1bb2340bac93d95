#![allow(dead_code)]

use std::path::PathBuf;

use fedmls_core::experiment::{ProblemSource, ProblemSpec};

/// The toy SVM shared by the integration tests: two unit-variance blobs in
/// the plane, one centre apart, 50 points each, one blob per client.
pub fn toy_svm(batch_fraction: f64) -> ProblemSpec {
    let mut spec = ProblemSpec::synthetic(2, 50, 1.0, 2);
    spec.batch_fraction = batch_fraction;
    if let ProblemSource::Synthetic { data_seed, .. } = &mut spec.source {
        *data_seed = 0;
    }
    spec
}

pub fn wisconsin_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/breast-cancer-wisconsin.csv")
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(points: &[(f64, f64)]) -> f64 {
    let pts: Vec<(f64, f64)> = points.iter().map(|&(x, y)| (x.ln(), y.ln())).collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}
