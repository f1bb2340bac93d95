//! Ground-truth optima: a restarted averaged subgradient solver and, for
//! problems of dimension at most three, a brute-force grid search used as a
//! cross-check.

use crate::error::{ensure_dim, Error, Result};
use crate::linalg;
use crate::mopes::project_ball_in_place;
use crate::problem::Objective;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceConfig {
    pub target_accuracy: f64,
    /// Upper bound on subgradient steps per restart.
    pub max_steps_per_restart: usize,
    pub max_restarts: usize,
    /// Radius of the first search ball around `x0`; the default scales with
    /// `||x0||`.
    pub initial_radius: Option<f64>,
}

impl Default for ReferenceConfig {
    fn default() -> Self {
        Self {
            target_accuracy: 1e-6,
            max_steps_per_restart: 2_000,
            max_restarts: 80,
            initial_radius: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSolution {
    pub x_star: Vec<f64>,
    pub f_star: f64,
    /// Estimated accuracy: the last improvement between restarts plus the
    /// `r G / sqrt(T)` term of the final restart.
    pub certificate: f64,
    /// False when the budget ran out before the certificate reached the target.
    pub met_target: bool,
    pub restarts: usize,
}

struct Restart {
    best: Vec<f64>,
    f_best: f64,
    steps: usize,
}

/// One run of averaged projected subgradient descent with normalized steps
/// `r / (||g_t|| sqrt t)` on the ball of radius `r` around `center`. Returns
/// the best of all iterates and their running average.
fn restart(
    objective: &dyn Objective,
    center: &[f64],
    f_center: f64,
    radius: f64,
    steps: usize,
) -> Result<Restart> {
    let mut best = center.to_vec();
    let mut f_best = f_center;
    let mut x = center.to_vec();
    let mut avg = center.to_vec();
    let mut taken = 0;
    for t in 1..=steps {
        taken = t;
        let sub = objective.full_subgradient(&x)?;
        let norm = linalg::norm(&sub);
        if norm == 0.0 {
            // x is optimal
            break;
        }
        linalg::axpy(-radius / (norm * (t as f64).sqrt()), &sub, &mut x);
        let mut offset = linalg::sub(&x, center);
        project_ball_in_place(&mut offset, radius);
        for j in 0..x.len() {
            x[j] = center[j] + offset[j];
        }
        let w = 1.0 / (t as f64 + 1.0);
        for j in 0..x.len() {
            avg[j] += w * (x[j] - avg[j]);
        }
        let fx = objective.value(&x)?;
        if fx < f_best {
            f_best = fx;
            best.clone_from(&x);
        }
    }
    let fa = objective.value(&avg)?;
    if fa < f_best {
        f_best = fa;
        best = avg;
    }
    if !f_best.is_finite() {
        return Err(Error::NonFinite("reference objective value".into()));
    }
    Ok(Restart {
        best,
        f_best,
        steps: taken.max(1),
    })
}

/// Restarted averaged subgradient descent. Each restart searches a ball
/// around the best point so far; the ball is halved when the best point
/// stays well inside it and doubled when it reaches the boundary.
///
/// Once the certificate meets the target, the point is re-examined on balls
/// ten, a hundred, .. times larger up to the initial radius; any improvement
/// beyond the target resumes the restarts from there.
pub fn reference_solve(
    objective: &dyn Objective,
    x0: &[f64],
    config: &ReferenceConfig,
) -> Result<ReferenceSolution> {
    ensure_dim(objective.dim(), x0.len())?;
    if !(config.target_accuracy > 0.0) || config.max_steps_per_restart == 0 {
        return Err(Error::invalid(
            "target accuracy and step budget must be positive",
        ));
    }
    let g = objective.lipschitz().max(f64::MIN_POSITIVE);
    let initial = config
        .initial_radius
        .unwrap_or_else(|| 10.0 * (1.0 + linalg::norm(x0)));
    let mut radius = initial;
    let mut best = x0.to_vec();
    let mut f_best = objective.value(&best)?;
    let mut certificate = f64::INFINITY;
    let mut restarts = 0;

    'search: while restarts < config.max_restarts {
        restarts += 1;
        let wanted = ((radius * g / config.target_accuracy).powi(2)).ceil();
        let steps = if wanted.is_finite() {
            (wanted as usize).clamp(1, config.max_steps_per_restart)
        } else {
            config.max_steps_per_restart
        };
        let r = restart(objective, &best, f_best, radius, steps)?;
        let moved = linalg::dist_sq(&r.best, &best).sqrt();
        certificate = (f_best - r.f_best) + radius * g / (r.steps as f64).sqrt();
        best = r.best;
        f_best = r.f_best;
        if certificate > config.target_accuracy {
            if moved >= 0.9 * radius {
                radius *= 2.0;
            } else if moved < 0.5 * radius {
                radius *= 0.5;
            }
            continue;
        }

        let mut check = radius * 10.0;
        while check <= initial && restarts < config.max_restarts {
            restarts += 1;
            let r = restart(
                objective,
                &best,
                f_best,
                check,
                config.max_steps_per_restart,
            )?;
            if f_best - r.f_best > config.target_accuracy {
                best = r.best;
                f_best = r.f_best;
                radius = check;
                continue 'search;
            }
            check *= 10.0;
        }
        break;
    }
    Ok(ReferenceSolution {
        x_star: best,
        f_star: f_best,
        certificate,
        met_target: certificate <= config.target_accuracy,
        restarts,
    })
}

/// Most grid points an exhaustive search will evaluate.
pub const MAX_GRID_POINTS: u64 = 200_000_000;

fn axis_points(lo: f64, hi: f64, resolution: f64) -> usize {
    ((hi - lo) / resolution).round() as usize + 1
}

fn scan(
    objective: &dyn Objective,
    lower: &[f64],
    upper: &[f64],
    counts: &[usize],
) -> Result<(Vec<f64>, f64)> {
    let d = lower.len();
    let total: usize = counts.iter().product();
    let mut best = lower.to_vec();
    let mut f_best = f64::INFINITY;
    let mut idx = vec![0usize; d];
    let mut x = lower.to_vec();
    for _ in 0..total {
        for j in 0..d {
            x[j] = if counts[j] == 1 {
                lower[j]
            } else {
                lower[j] + (upper[j] - lower[j]) * idx[j] as f64 / (counts[j] - 1) as f64
            };
        }
        let f = objective.value(&x)?;
        if f < f_best {
            f_best = f;
            best.clone_from(&x);
        }
        for j in 0..d {
            idx[j] += 1;
            if idx[j] < counts[j] {
                break;
            }
            idx[j] = 0;
        }
    }
    Ok((best, f_best))
}

fn check_box(
    objective: &dyn Objective,
    lower: &[f64],
    upper: &[f64],
    resolution: f64,
) -> Result<()> {
    ensure_dim(objective.dim(), lower.len())?;
    ensure_dim(objective.dim(), upper.len())?;
    if lower.is_empty() || lower.len() > 3 {
        return Err(Error::invalid("grid search supports dimensions 1 to 3"));
    }
    if !(resolution > 0.0) || lower.iter().zip(upper).any(|(l, u)| !(u >= l)) {
        return Err(Error::invalid(
            "grid box must be non-empty with positive resolution",
        ));
    }
    Ok(())
}

/// Exhaustive search over the box at the given spacing.
pub fn grid_search(
    objective: &dyn Objective,
    lower: &[f64],
    upper: &[f64],
    resolution: f64,
) -> Result<(Vec<f64>, f64)> {
    check_box(objective, lower, upper, resolution)?;
    let counts: Vec<usize> = lower
        .iter()
        .zip(upper)
        .map(|(&l, &u)| axis_points(l, u, resolution))
        .collect();
    let total = counts.iter().map(|&c| c as u64).product::<u64>();
    if total > MAX_GRID_POINTS {
        return Err(Error::invalid(format!(
            "{total} grid points exceed the limit of {MAX_GRID_POINTS}"
        )));
    }
    scan(objective, lower, upper, &counts)
}

/// Coarse-to-fine search for when the exhaustive grid is too large: scan a
/// window with `per_axis` points per axis, recenter it when the best point
/// lies on its edge (clamped to the box), otherwise shrink it around the best
/// point, until the spacing reaches `resolution`.
pub fn grid_search_refined(
    objective: &dyn Objective,
    lower: &[f64],
    upper: &[f64],
    resolution: f64,
    per_axis: usize,
) -> Result<(Vec<f64>, f64)> {
    check_box(objective, lower, upper, resolution)?;
    if per_axis < 5 {
        return Err(Error::invalid(
            "refined grid needs at least 5 points per axis",
        ));
    }
    let d = lower.len();
    let mut lo = lower.to_vec();
    let mut hi = upper.to_vec();
    let counts = vec![per_axis; d];
    let mut overall = (lo.clone(), f64::INFINITY);
    for _ in 0..10_000 {
        let (x, f) = scan(objective, &lo, &hi, &counts)?;
        if f < overall.1 {
            overall = (x.clone(), f);
        }
        let spacing: Vec<f64> = (0..d)
            .map(|j| (hi[j] - lo[j]) / (per_axis - 1) as f64)
            .collect();
        let on_edge = (0..d).any(|j| {
            let at_lo = (x[j] - lo[j]).abs() < 0.5 * spacing[j] && lo[j] > lower[j];
            let at_hi = (hi[j] - x[j]).abs() < 0.5 * spacing[j] && hi[j] < upper[j];
            at_lo || at_hi
        });
        if !on_edge && spacing.iter().all(|&s| s <= resolution) {
            break;
        }
        for j in 0..d {
            let half = if on_edge {
                (hi[j] - lo[j]) / 2.0
            } else {
                (2.0 * spacing[j]).max(resolution * (per_axis - 1) as f64 / 2.0)
            };
            let half = half.min((upper[j] - lower[j]) / 2.0);
            let c = x[j].clamp(lower[j] + half, upper[j] - half);
            lo[j] = c - half;
            hi[j] = c + half;
        }
    }
    Ok(overall)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{AbsObjective, QuadraticObjective};

    #[test]
    fn abs_reference() {
        let sol =
            reference_solve(&AbsObjective::scalar(), &[3.0], &ReferenceConfig::default()).unwrap();
        assert!(sol.f_star.abs() < 1e-6);
        assert!(sol.x_star[0].abs() < 1e-6);
        assert!(sol.met_target);
        let f = AbsObjective::scalar().value(&sol.x_star).unwrap();
        assert_eq!(f, sol.f_star);
    }

    #[test]
    fn far_optimum_is_reached_by_growing_the_ball() {
        let obj = AbsObjective::new(vec![300.0, -40.0], 1.0);
        let sol = reference_solve(&obj, &[0.0, 0.0], &ReferenceConfig::default()).unwrap();
        assert!(sol.f_star < 1e-5, "{sol:?}");
    }

    #[test]
    fn grid_finds_shifted_minimum() {
        let obj = AbsObjective::new(vec![0.25, -1.5], 2.0);
        let (x, f) = grid_search(&obj, &[-2.0, -2.0], &[2.0, 2.0], 0.05).unwrap();
        assert!(f < 1e-9);
        assert!((x[0] - 0.25).abs() < 1e-9);
        let (_, fr) = grid_search_refined(&obj, &[-5.0, -5.0], &[5.0, 5.0], 1e-4, 21).unwrap();
        assert!(fr < 1e-3);
    }

    #[test]
    fn refined_grid_in_three_dimensions() {
        let obj = QuadraticObjective::new(vec![1.1, -2.3, 0.7], 10.0);
        let (x, _) = grid_search_refined(&obj, &[-5.0; 3], &[5.0; 3], 1e-4, 11).unwrap();
        for (a, b) in x.iter().zip([1.1, -2.3, 0.7]) {
            assert!((a - b).abs() < 1e-3);
        }
    }

    #[test]
    fn grid_rejects_bad_boxes() {
        let obj = AbsObjective::scalar();
        assert!(grid_search(&obj, &[1.0], &[0.0], 0.1).is_err());
        assert!(grid_search(&obj, &[0.0], &[1.0], 0.0).is_err());
        let big = AbsObjective::new(vec![0.0; 3], 1.0);
        assert!(grid_search(&big, &[-5.0; 3], &[5.0; 3], 1e-3).is_err());
    }
}
