//! WebAssembly bindings for the browser demo. Each export takes plain
//! numbers and returns a JSON string; errors come back as `{"error": ..}`.

use fedmls_core::experiment::{prepare, run_single, ProblemSpec, RunConfig};
use fedmls_core::fedmls::corollary1_params;
use fedmls_core::metrics::Algorithm;
use fedmls_core::mopes::approx_prox;
use fedmls_core::problem::AbsObjective;
use fedmls_core::rng::substream;
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Debug, Serialize, PartialEq)]
pub struct Curve {
    pub algorithm: String,
    pub rounds: Vec<usize>,
    pub local_steps: Vec<u64>,
    pub subopt: Vec<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Serialize, PartialEq)]
pub struct Comparison {
    pub f_star: f64,
    pub initial_subopt: f64,
    pub curves: Vec<Curve>,
}

/// All four algorithms on a 2-D two-cluster SVM split by blob.
pub fn comparison(
    separation: f64,
    clients: usize,
    batch_fraction: f64,
    rounds: usize,
    seed: u64,
    lambda0: f64,
    eta0: f64,
) -> Result<Comparison, String> {
    let mut spec = ProblemSpec::synthetic(2, 50, separation, clients);
    spec.batch_fraction = batch_fraction;
    let mut cfg = RunConfig::new(spec);
    cfg.seeds = vec![seed];
    cfg.rounds = rounds;
    cfg.fedmls.lambda0 = lambda0;
    cfg.baseline.eta0 = eta0;
    cfg.validate().map_err(|e| e.to_string())?;
    let problem = cfg.problem.build().map_err(|e| e.to_string())?;
    let prepared = prepare(&cfg, problem.objectives).map_err(|e| e.to_string())?;
    let x0 = vec![0.0; prepared.dim()];
    let f0: f64 = prepared
        .objectives
        .iter()
        .map(|o| o.value(&x0))
        .sum::<Result<f64, _>>()
        .map_err(|e| e.to_string())?
        / prepared.objectives.len() as f64;

    let curves = Algorithm::FEDERATED
        .iter()
        .map(|&alg| {
            let (records, error) = match run_single(&cfg, &prepared, alg, seed) {
                Ok(out) => (out.metrics, None),
                Err(e) => (e.partial.clone(), Some(e.to_string())),
            };
            Curve {
                algorithm: alg.as_str().to_string(),
                rounds: records.iter().map(|r| r.round).collect(),
                local_steps: records.iter().map(|r| r.cum_local_steps).collect(),
                subopt: records
                    .iter()
                    .map(|r| r.suboptimality.unwrap_or(f64::NAN))
                    .collect(),
                error,
            }
        })
        .collect();
    Ok(Comparison {
        f_star: prepared.f_star,
        initial_subopt: f0 - prepared.f_star,
        curves,
    })
}

#[derive(Debug, Serialize, PartialEq)]
pub struct ProxPoint {
    pub steps: usize,
    pub last_error: f64,
    pub average_error: f64,
}

#[derive(Debug, Serialize, PartialEq)]
pub struct ProxTrace {
    pub exact: f64,
    pub points: Vec<ProxPoint>,
}

/// Inner-solver error against the soft-threshold prox of `c|u|`, for
/// `T = 10, 10^2, .., 10^max_power`.
pub fn prox_trace(c: f64, v: f64, beta: f64, max_power: u32) -> Result<ProxTrace, String> {
    if c.is_nan() || c <= 0.0 || !v.is_finite() || max_power == 0 || max_power > 6 {
        return Err("need c > 0, finite v and 1 <= max_power <= 6".into());
    }
    let f = AbsObjective::new(vec![0.0], c);
    let shrink = c / beta;
    let exact = v.signum() * (v.abs() - shrink).max(0.0);
    let radius = 2.0 * v.abs() + 1.0;
    let points = (1..=max_power)
        .map(|p| {
            let steps = 10usize.pow(p);
            let r = approx_prox(&[v], &[v], beta, steps, &f, radius, &mut substream(0, 1))
                .map_err(|e| e.to_string())?;
            Ok(ProxPoint {
                steps,
                last_error: (r.last_iterate[0] - exact).abs(),
                average_error: (r.averaged_iterate[0] - exact).abs(),
            })
        })
        .collect::<Result<Vec<_>, String>>()?;
    Ok(ProxTrace { exact, points })
}

#[derive(Debug, Serialize, PartialEq)]
pub struct SchedulePlan {
    pub lambda: f64,
    pub rounds: usize,
    pub inner_steps: usize,
    pub local_steps_per_client: u64,
    /// Rounds a plain subgradient method would need, `(G dist0 / eps)^2`.
    pub subgradient_rounds: f64,
}

/// Accuracy-driven parameters for `G, sigma^2, n, ||x0 - x*||, eps`.
pub fn schedule_plan(
    lipschitz: f64,
    variance: f64,
    clients: usize,
    dist0: f64,
    epsilon: f64,
) -> Result<SchedulePlan, String> {
    let p = corollary1_params(lipschitz, variance, clients, dist0, epsilon)
        .map_err(|e| e.to_string())?;
    Ok(SchedulePlan {
        lambda: p.lambda,
        rounds: p.rounds,
        inner_steps: p.inner_steps,
        local_steps_per_client: p.rounds as u64 * p.inner_steps as u64,
        subgradient_rounds: (lipschitz * dist0 / epsilon).powi(2),
    })
}

fn to_json<T: Serialize>(r: Result<T, String>) -> String {
    match r {
        Ok(v) => serde_json::to_string(&v).unwrap_or_else(|e| error_json(&e.to_string())),
        Err(e) => error_json(&e),
    }
}

fn error_json(msg: &str) -> String {
    serde_json::json!({ "error": msg }).to_string()
}

#[wasm_bindgen]
pub fn compare_algorithms(
    separation: f64,
    clients: usize,
    batch_fraction: f64,
    rounds: usize,
    seed: u32,
    lambda0: f64,
    eta0: f64,
) -> String {
    to_json(comparison(
        separation,
        clients,
        batch_fraction,
        rounds,
        u64::from(seed),
        lambda0,
        eta0,
    ))
}

#[wasm_bindgen]
pub fn prox_convergence(c: f64, v: f64, beta: f64, max_power: u32) -> String {
    to_json(prox_trace(c, v, beta, max_power))
}

#[wasm_bindgen]
pub fn accuracy_schedule(
    lipschitz: f64,
    variance: f64,
    clients: usize,
    dist0: f64,
    epsilon: f64,
) -> String {
    to_json(schedule_plan(lipschitz, variance, clients, dist0, epsilon))
}
