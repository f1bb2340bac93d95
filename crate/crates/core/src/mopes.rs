//! Moreau-envelope projection-efficient subgradient method.
//!
//! The solver minimizes `F` over a set `X` that is only reached through a
//! projection, while subgradient work happens on a surrogate variable kept in
//! a compact ball `X'`. Each outer iteration performs one projection onto
//! `X` and `T_k` oracle calls inside [`approx_prox`].

use crate::clock::Instant;

use crate::error::{ensure_dim, Error, Result};
use crate::linalg;
use crate::metrics::{Algorithm, MetricsRecord};
use crate::problem::Objective;
use crate::rng::Stream;

/// `4 / (lambda k)`.
pub fn beta_k(lambda: f64, k: usize) -> Result<f64> {
    if !(lambda > 0.0) || k == 0 {
        return Err(Error::invalid(format!(
            "beta_k needs lambda > 0 and k >= 1 (got lambda={lambda}, k={k})"
        )));
    }
    Ok(4.0 / (lambda * k as f64))
}

/// `2 / (k + 1)`; equals 1 at `k = 1`.
pub fn gamma_k(k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::invalid("gamma_k needs k >= 1"));
    }
    Ok(2.0 / (k as f64 + 1.0))
}

/// Averaging weight `2(t+1) / (t(t+3))` of the prox sub-solver.
pub fn theta_t(t: usize) -> Result<f64> {
    if t == 0 {
        return Err(Error::invalid("theta_t needs t >= 1"));
    }
    let t = t as f64;
    Ok(2.0 * (t + 1.0) / (t * (t + 3.0)))
}

/// Slack allowed on the ball boundary so that projecting twice is a no-op
/// bit-for-bit despite rounding in the radial rescale.
const BALL_SLACK: f64 = 4.0 * f64::EPSILON;

/// Euclidean projection onto the centered ball of radius `radius`.
pub fn project_ball(u: &[f64], radius: f64) -> Vec<f64> {
    let mut out = u.to_vec();
    project_ball_in_place(&mut out, radius);
    out
}

pub fn project_ball_in_place(u: &mut [f64], radius: f64) {
    debug_assert!(radius > 0.0);
    let nrm = linalg::norm(u);
    if nrm > radius * (1.0 + BALL_SLACK) {
        linalg::scale(radius / nrm, u);
    }
}

/// The compact set `X'`: a product of centered balls of equal radius, one
/// per consecutive block of `block` coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BallSet {
    pub radius: f64,
    pub block: Option<usize>,
}

impl BallSet {
    pub fn whole(radius: f64) -> Self {
        Self {
            radius,
            block: None,
        }
    }

    pub fn blocks(radius: f64, block: usize) -> Self {
        Self {
            radius,
            block: Some(block),
        }
    }

    pub fn project_in_place(&self, u: &mut [f64]) {
        match self.block {
            None => project_ball_in_place(u, self.radius),
            Some(b) => {
                for chunk in u.chunks_mut(b) {
                    project_ball_in_place(chunk, self.radius);
                }
            }
        }
    }

    pub fn contains(&self, u: &[f64]) -> bool {
        let within = |c: &[f64]| linalg::norm(c) <= self.radius * (1.0 + BALL_SLACK);
        match self.block {
            None => within(u),
            Some(b) => u.chunks(b).all(within),
        }
    }
}

/// Projection onto the constraint set `X`.
pub trait Projection {
    fn project(&self, x: &[f64]) -> Vec<f64>;
}

/// `X = R^d`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Identity;

impl Projection for Identity {
    fn project(&self, x: &[f64]) -> Vec<f64> {
        x.to_vec()
    }
}

/// The consensus set `{[x^1 .. x^n] : x^1 = .. = x^n}` stored column-major
/// in a flat vector of length `n * d`; the projection replicates the column
/// mean.
#[derive(Debug, Clone, Copy)]
pub struct ConsensusProjection {
    pub clients: usize,
    pub dim: usize,
}

impl Projection for ConsensusProjection {
    fn project(&self, x: &[f64]) -> Vec<f64> {
        let columns: Vec<Vec<f64>> = x.chunks(self.dim).map(<[f64]>::to_vec).collect();
        let mean = linalg::mean(&columns);
        let mut out = Vec::with_capacity(x.len());
        for _ in 0..self.clients {
            out.extend_from_slice(&mean);
        }
        out
    }
}

impl<F> Projection for F
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    fn project(&self, x: &[f64]) -> Vec<f64> {
        self(x)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProxResult {
    pub last_iterate: Vec<f64>,
    pub averaged_iterate: Vec<f64>,
}

/// Approximately solves `argmin_{u in X'} f(u) + beta/2 ||u - v||^2` with
/// `steps` projected stochastic subgradient steps started at `z_init`.
pub fn approx_prox(
    v: &[f64],
    z_init: &[f64],
    beta: f64,
    steps: usize,
    oracle: &dyn Objective,
    radius: f64,
    rng: &mut Stream,
) -> Result<ProxResult> {
    if !(beta > 0.0) {
        return Err(Error::invalid(format!(
            "approx_prox needs beta > 0, got {beta}"
        )));
    }
    prox_subsolver(
        v,
        z_init,
        1.0 / beta,
        steps,
        |u, rng| oracle.stochastic_subgradient(u, rng),
        &BallSet::whole(radius),
        rng,
    )
}

/// Shared recursion behind [`approx_prox`] and the federated local phase:
///
/// ```text
/// u_hat = u - (g_scale * g(u) + u - v) / (1 + t/2)
/// u     = proj_ball(u_hat)
/// u_avg = (1 - theta_t) u_avg + theta_t u
/// ```
pub(crate) fn prox_subsolver<G>(
    v: &[f64],
    z_init: &[f64],
    grad_scale: f64,
    steps: usize,
    mut grad: G,
    ball: &BallSet,
    rng: &mut Stream,
) -> Result<ProxResult>
where
    G: FnMut(&[f64], &mut Stream) -> Result<Vec<f64>>,
{
    if steps == 0 {
        return Err(Error::invalid("prox sub-solver needs at least one step"));
    }
    ensure_dim(v.len(), z_init.len())?;
    let mut u = z_init.to_vec();
    let mut avg = z_init.to_vec();
    for t in 1..=steps {
        let g = grad(&u, rng)?;
        ensure_dim(u.len(), g.len())?;
        let step = 1.0 / (1.0 + t as f64 / 2.0);
        for j in 0..u.len() {
            u[j] -= step * (grad_scale * g[j] + u[j] - v[j]);
        }
        ball.project_in_place(&mut u);
        let theta = theta_t(t)?;
        for (a, x) in avg.iter_mut().zip(&u) {
            *a = (1.0 - theta) * *a + theta * x;
        }
    }
    Ok(ProxResult {
        last_iterate: u,
        averaged_iterate: avg,
    })
}

/// Lower bound on `T_k` from the convergence theorem:
/// `ceil((4G^2 + sigma^2) lambda^2 K k^2 / (2D))`, at least 1.
pub fn min_inner_steps(
    lipschitz: f64,
    variance: f64,
    lambda: f64,
    iterations: usize,
    k: usize,
    d_param: f64,
) -> Result<usize> {
    if !(lipschitz > 0.0) || !(variance >= 0.0) || !(lambda > 0.0) || !(d_param > 0.0) {
        return Err(Error::invalid(
            "min_inner_steps needs G, lambda, D > 0 and sigma^2 >= 0",
        ));
    }
    if iterations == 0 || k == 0 {
        return Err(Error::invalid("min_inner_steps needs K >= 1 and k >= 1"));
    }
    let raw = (4.0 * lipschitz * lipschitz + variance)
        * lambda
        * lambda
        * iterations as f64
        * (k * k) as f64
        / (2.0 * d_param);
    Ok((raw.ceil() as usize).max(1))
}

/// `(10 ||X_0 - X*||^2 + 8D) / (lambda K (K+1)) + G^2 lambda / 2`.
pub fn theorem1_bound(
    dist0_sq: f64,
    d_param: f64,
    lambda: f64,
    iterations: usize,
    lipschitz: f64,
) -> Result<f64> {
    if !(dist0_sq >= 0.0) || !(d_param > 0.0) || !(lambda > 0.0) || !(lipschitz > 0.0) {
        return Err(Error::invalid(
            "theorem1_bound needs D, lambda, G > 0 and a nonnegative distance",
        ));
    }
    if iterations == 0 {
        return Err(Error::invalid("theorem1_bound needs K >= 1"));
    }
    let k = iterations as f64;
    Ok((10.0 * dist0_sq + 8.0 * d_param) / (lambda * k * (k + 1.0))
        + lipschitz * lipschitz * lambda / 2.0)
}

/// Number of prox sub-solver steps per outer iteration.
#[derive(Debug, Clone, PartialEq)]
pub enum InnerSteps {
    Constant(usize),
    /// `max(1, ceil(t0 * k))`.
    Linear {
        t0: f64,
    },
    /// Use [`min_inner_steps`] with the config's constants.
    Theorem1,
    /// `steps[k - 1]`.
    Explicit(Vec<usize>),
}

impl InnerSteps {
    pub fn linear_steps(t0: f64, k: usize) -> usize {
        ((t0 * k as f64).ceil() as usize).max(1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MopesConfig {
    pub lambda: f64,
    pub iterations: usize,
    pub inner_steps: InnerSteps,
    pub radius: f64,
    /// Block size of `X'` when it is a product of balls; `None` is a single ball.
    pub block_dim: Option<usize>,
    pub d_param: f64,
    pub lipschitz: f64,
    pub variance: f64,
}

impl MopesConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) || !(self.radius > 0.0) || !(self.d_param > 0.0) {
            return Err(Error::invalid("MOPES needs lambda, R and D positive"));
        }
        if self.iterations == 0 {
            return Err(Error::invalid("MOPES needs K >= 1"));
        }
        match &self.inner_steps {
            InnerSteps::Constant(0) => Err(Error::invalid("inner steps must be >= 1")),
            InnerSteps::Linear { t0 } if !(*t0 > 0.0) => {
                Err(Error::invalid("linear inner-step factor must be positive"))
            }
            InnerSteps::Explicit(v) if v.len() < self.iterations || v.contains(&0) => Err(
                Error::invalid("explicit inner steps must cover every iteration with T_k >= 1"),
            ),
            _ => Ok(()),
        }
    }

    pub fn steps_at(&self, k: usize) -> Result<usize> {
        match &self.inner_steps {
            InnerSteps::Constant(t) => Ok(*t),
            InnerSteps::Linear { t0 } => Ok(InnerSteps::linear_steps(*t0, k)),
            InnerSteps::Theorem1 => min_inner_steps(
                self.lipschitz,
                self.variance,
                self.lambda,
                self.iterations,
                k,
                self.d_param,
            ),
            InnerSteps::Explicit(v) => Ok(v[k - 1]),
        }
    }

    fn ball(&self) -> BallSet {
        BallSet {
            radius: self.radius,
            block: self.block_dim,
        }
    }
}

/// Iterates after `k` outer steps.
#[derive(Debug, Clone, PartialEq)]
pub struct MopesState {
    pub x: Vec<f64>,
    pub z: Vec<f64>,
    pub x_prox: Vec<f64>,
    pub z_prox: Vec<f64>,
    pub k: usize,
}

impl MopesState {
    pub fn new(x0: &[f64]) -> Self {
        Self {
            x: x0.to_vec(),
            z: x0.to_vec(),
            x_prox: x0.to_vec(),
            z_prox: x0.to_vec(),
            k: 0,
        }
    }
}

/// Step-wise driver; [`mopes_run`] is the batch form.
pub struct MopesSolver<'a> {
    config: MopesConfig,
    oracle: &'a dyn Objective,
    projection: &'a dyn Projection,
    state: MopesState,
    rng: Stream,
    inner_total: u64,
}

impl<'a> MopesSolver<'a> {
    pub fn new(
        config: MopesConfig,
        oracle: &'a dyn Objective,
        projection: &'a dyn Projection,
        x0: &[f64],
        rng: Stream,
    ) -> Result<Self> {
        config.validate()?;
        ensure_dim(oracle.dim(), x0.len())?;
        if !config.ball().contains(x0) {
            return Err(Error::invalid("x0 must lie inside the radius-R ball"));
        }
        Ok(Self {
            config,
            oracle,
            projection,
            state: MopesState::new(x0),
            rng,
            inner_total: 0,
        })
    }

    pub fn state(&self) -> &MopesState {
        &self.state
    }

    pub fn config(&self) -> &MopesConfig {
        &self.config
    }

    pub fn inner_steps_taken(&self) -> u64 {
        self.inner_total
    }

    pub fn is_done(&self) -> bool {
        self.state.k >= self.config.iterations
    }

    /// Runs one outer iteration and returns the new `X_k`.
    pub fn step(&mut self) -> Result<&MopesState> {
        let k = self.state.k + 1;
        let lambda = self.config.lambda;
        let beta = beta_k(lambda, k)?;
        let gamma = gamma_k(k)?;
        let coupling = 1.0 / (beta * lambda);
        let s = &self.state;

        let y = linalg::interpolate(&s.x, &s.z, gamma);
        let y_prox = linalg::interpolate(&s.x_prox, &s.z_prox, gamma);

        let z_step: Vec<f64> =
            s.z.iter()
                .zip(y.iter().zip(&y_prox))
                .map(|(z, (a, b))| z - coupling * (a - b))
                .collect();
        let z = self.projection.project(&z_step);

        let v: Vec<f64> = s
            .z_prox
            .iter()
            .zip(y_prox.iter().zip(&y))
            .map(|(z, (a, b))| z - coupling * (a - b))
            .collect();
        let steps = self.config.steps_at(k)?;
        let oracle = self.oracle;
        let prox = prox_subsolver(
            &v,
            &s.z_prox,
            1.0 / beta,
            steps,
            |u, rng| oracle.stochastic_subgradient(u, rng),
            &self.config.ball(),
            &mut self.rng,
        )?;

        let x = linalg::interpolate(&s.x, &z, gamma);
        let x_prox = linalg::interpolate(&s.x_prox, &prox.averaged_iterate, gamma);
        self.inner_total += steps as u64;
        self.state = MopesState {
            x,
            z,
            x_prox,
            z_prox: prox.last_iterate,
            k,
        };
        Ok(&self.state)
    }
}

#[derive(Debug, Clone)]
pub struct MopesOutput {
    pub x_final: Vec<f64>,
    pub history: Vec<MetricsRecord>,
}

/// Runs `config.iterations` outer iterations from `x0`, recording `F(X_k)`
/// after each. Standalone runs are not seed-indexed; records carry seed 0.
pub fn mopes_run(
    config: MopesConfig,
    oracle: &dyn Objective,
    projection: &dyn Projection,
    x0: &[f64],
    rng: Stream,
) -> Result<MopesOutput> {
    let started = Instant::now();
    let mut solver = MopesSolver::new(config, oracle, projection, x0, rng)?;
    let mut history = Vec::with_capacity(solver.config.iterations);
    while !solver.is_done() {
        let k = solver.step()?.k;
        let objective = oracle.value(&solver.state.x)?;
        history.push(MetricsRecord {
            algorithm: Algorithm::Mopes,
            seed: 0,
            round: k,
            cum_local_steps: solver.inner_total,
            objective,
            suboptimality: None,
            consensus_gap: 0.0,
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
        });
    }
    Ok(MopesOutput {
        x_final: solver.state.x,
        history,
    })
}
