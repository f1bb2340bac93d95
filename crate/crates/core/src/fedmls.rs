//! Federated learning with multiple local steps.
//!
//! MOPES applied to the consensus reformulation `min (1/n) sum_i f_i(x^i)`
//! subject to `x^1 = .. = x^n`. Projection onto the consensus set is the
//! server-side average, and the prox sub-problem separates into one local
//! training phase per client. The loop is reordered so that each round
//! starts with local training and ends with aggregation; under the common
//! initialization the skipped first projection is a no-op.

use crate::clock::Instant;
use std::sync::Arc;

use crate::error::{ensure_dim, Error, Result};
use crate::federation::{
    consensus_gap, consensus_project, first_client_error, for_each_client, Channel, RunError,
    RunOutput, RunResult,
};
use crate::linalg;
use crate::metrics::{Algorithm, MetricsRecord};
use crate::mopes::{beta_k, gamma_k, prox_subsolver, BallSet, InnerSteps};
use crate::problem::{FederatedObjective, Objective, SharedObjective};
use crate::rng::{client_stream, Stream};

/// How `lambda_k` and `T_k` evolve over rounds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScheduleMode {
    /// Constant `lambda` and `T` (the target-accuracy parameterization).
    Fixed { lambda: f64, inner_steps: usize },
    /// `lambda_k = lambda0 / k`, `T_k = ceil(t0 * k)`.
    Decaying { lambda0: f64, t0: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FedmlsSchedule {
    pub mode: ScheduleMode,
    pub rounds: usize,
    pub radius: f64,
}

impl FedmlsSchedule {
    pub fn fixed(lambda: f64, inner_steps: usize, rounds: usize, radius: f64) -> Self {
        Self {
            mode: ScheduleMode::Fixed {
                lambda,
                inner_steps,
            },
            rounds,
            radius,
        }
    }

    pub fn decaying(lambda0: f64, t0: f64, rounds: usize, radius: f64) -> Self {
        Self {
            mode: ScheduleMode::Decaying { lambda0, t0 },
            rounds,
            radius,
        }
    }

    pub fn from_corollary1(params: Corollary1Params, radius: f64) -> Self {
        Self::fixed(params.lambda, params.inner_steps, params.rounds, radius)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::invalid("schedule needs at least one round"));
        }
        if !(self.radius > 0.0) {
            return Err(Error::invalid("radius must be positive"));
        }
        match self.mode {
            ScheduleMode::Fixed {
                lambda,
                inner_steps,
            } if lambda > 0.0 && inner_steps > 0 => Ok(()),
            ScheduleMode::Decaying { lambda0, t0 } if lambda0 > 0.0 && t0 > 0.0 => Ok(()),
            _ => Err(Error::invalid("schedule parameters must be positive")),
        }
    }

    pub fn lambda_at(&self, k: usize) -> f64 {
        match self.mode {
            ScheduleMode::Fixed { lambda, .. } => lambda,
            ScheduleMode::Decaying { lambda0, .. } => lambda0 / k as f64,
        }
    }

    pub fn steps_at(&self, k: usize) -> usize {
        match self.mode {
            ScheduleMode::Fixed { inner_steps, .. } => inner_steps,
            ScheduleMode::Decaying { t0, .. } => InnerSteps::linear_steps(t0, k),
        }
    }

    /// `beta_k = 4 / (lambda_k k)` with the round's own `lambda_k`.
    pub fn beta_at(&self, k: usize) -> Result<f64> {
        beta_k(self.lambda_at(k), k)
    }

    /// `1 / (beta_k lambda_k)`, the weight of the coupling correction.
    pub fn coupling_at(&self, k: usize) -> Result<f64> {
        Ok(1.0 / (self.beta_at(k)? * self.lambda_at(k)))
    }

    /// `sum_{k <= rounds} T_k`.
    pub fn total_local_steps(&self) -> u64 {
        (1..=self.rounds).map(|k| self.steps_at(k) as u64).sum()
    }
}

/// Parameters that guarantee `E f(x_K) - f* <= epsilon`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Corollary1Params {
    pub lambda: f64,
    pub inner_steps: usize,
    pub rounds: usize,
}

/// Ceiling that absorbs the rounding error of an expression whose exact
/// value is an integer (for example `12 / 0.1`).
fn ceil_exact(raw: f64) -> usize {
    let nearest = raw.round();
    if (raw - nearest).abs() <= 1e-9 * nearest.abs().max(1.0) {
        nearest as usize
    } else {
        raw.ceil() as usize
    }
}

/// `lambda = eps / G^2`,
/// `T = ceil(36 sqrt(3n) ||x0 - x*|| (4G^2 + sigma^2) / (G eps))`,
/// `K = ceil(6 sqrt(n) ||x0 - x*|| G / eps)`.
pub fn corollary1_params(
    lipschitz: f64,
    variance: f64,
    clients: usize,
    dist0: f64,
    epsilon: f64,
) -> Result<Corollary1Params> {
    if !(lipschitz > 0.0) || !(variance >= 0.0) || !(dist0 > 0.0) || !(epsilon > 0.0) {
        return Err(Error::invalid(
            "corollary parameters need G, dist0, epsilon > 0 and sigma^2 >= 0",
        ));
    }
    if clients == 0 {
        return Err(Error::invalid("corollary parameters need n >= 1"));
    }
    let n = clients as f64;
    let g = lipschitz;
    let lambda = epsilon / (g * g);
    let inner = 36.0 * (3.0 * n).sqrt() * dist0 * (4.0 * g * g + variance) / (g * epsilon);
    let rounds = 6.0 * n.sqrt() * dist0 * g / epsilon;
    Ok(Corollary1Params {
        lambda,
        inner_steps: ceil_exact(inner).max(1),
        rounds: ceil_exact(rounds).max(1),
    })
}

/// Server iterates. Between rounds `z` already holds `z_{k+1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ServerState {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
    pub k: usize,
}

impl ServerState {
    pub fn new(y0: &[f64]) -> Self {
        Self {
            x: y0.to_vec(),
            y: y0.to_vec(),
            z: y0.to_vec(),
            k: 0,
        }
    }
}

/// Iterates each client persists across rounds, plus its random stream.
#[derive(Debug, Clone)]
pub struct ClientState {
    /// One-based client id.
    pub id: usize,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
    pub rng: Stream,
}

impl ClientState {
    pub fn new(id: usize, y0: &[f64], rng: Stream) -> Self {
        Self {
            id,
            x: y0.to_vec(),
            y: y0.to_vec(),
            z: y0.to_vec(),
            rng,
        }
    }
}

/// Local phase of round `k` for one client: builds `v`, runs `T_k`
/// projected subgradient steps on `f_i / n`, and returns the uplink
/// `y^i_{k+1}` together with the updated state.
pub fn client_local_training(
    state: &ClientState,
    y_k: &[f64],
    k: usize,
    schedule: &FedmlsSchedule,
    oracle: &dyn Objective,
    clients: usize,
) -> Result<(Vec<f64>, ClientState)> {
    let mut next = state.clone();
    let uplink = local_training_in_place(&mut next, y_k, k, schedule, oracle, clients)?;
    Ok((uplink, next))
}

fn local_training_in_place(
    state: &mut ClientState,
    y_k: &[f64],
    k: usize,
    schedule: &FedmlsSchedule,
    oracle: &dyn Objective,
    clients: usize,
) -> Result<Vec<f64>> {
    let wrap = |e: Error| match e {
        e @ Error::ClientFailure { .. } => e,
        e => Error::ClientFailure {
            client: state.id,
            source: Box::new(e),
        },
    };
    ensure_dim(state.z.len(), y_k.len())?;
    let beta = schedule.beta_at(k)?;
    let coupling = schedule.coupling_at(k)?;
    let gamma = gamma_k(k)?;
    let gamma_next = gamma_k(k + 1)?;

    let v: Vec<f64> = state
        .z
        .iter()
        .zip(state.y.iter().zip(y_k))
        .map(|(z, (yi, y))| z - coupling * (yi - y))
        .collect();
    let grad_scale = 1.0 / (clients as f64 * beta);
    let prox = prox_subsolver(
        &v,
        &state.z,
        grad_scale,
        schedule.steps_at(k),
        |u, rng| oracle.stochastic_subgradient(u, rng),
        &BallSet::whole(schedule.radius),
        &mut state.rng,
    )
    .map_err(|e| Error::ClientFailure {
        client: state.id,
        source: Box::new(e),
    })?;

    state.z = prox.last_iterate;
    state.x = linalg::interpolate(&state.x, &prox.averaged_iterate, gamma);
    state.y = linalg::interpolate(&state.x, &state.z, gamma_next);
    if !linalg::is_finite(&state.y) {
        return Err(wrap(Error::NonFinite(format!("uplink of round {k}"))));
    }
    Ok(state.y.clone())
}

/// Aggregation closing round `k`: `x_k`, then `y_{k+1}`, then `z_{k+1}`.
pub fn server_aggregate(
    state: &ServerState,
    uplinks: &[Vec<f64>],
    k: usize,
    schedule: &FedmlsSchedule,
    clients: usize,
) -> Result<ServerState> {
    if uplinks.len() != clients {
        return Err(Error::Protocol(format!(
            "round {k}: expected {clients} uplinks, got {}",
            uplinks.len()
        )));
    }
    let gamma = gamma_k(k)?;
    let gamma_next = gamma_k(k + 1)?;
    let coupling_next = schedule.coupling_at(k + 1)?;
    let x = linalg::interpolate(&state.x, &state.z, gamma);
    let y = linalg::interpolate(&x, &state.z, gamma_next);
    let y_bar = consensus_project(uplinks)?;
    let z: Vec<f64> = state
        .z
        .iter()
        .zip(y.iter().zip(&y_bar))
        .map(|(z, (a, b))| z - coupling_next * (a - b))
        .collect();
    Ok(ServerState { x, y, z, k })
}

/// A FedMLS simulation advanced one communication round at a time.
pub struct FedmlsRun {
    schedule: FedmlsSchedule,
    objectives: Vec<SharedObjective>,
    global: FederatedObjective,
    server: ServerState,
    clients: Vec<ClientState>,
    channel: Channel,
    local_steps: Vec<u64>,
    seed: u64,
    f_star: Option<f64>,
    started: Instant,
}

impl FedmlsRun {
    pub fn new(
        objectives: Vec<SharedObjective>,
        schedule: FedmlsSchedule,
        x0: &[f64],
        seed: u64,
    ) -> Result<Self> {
        schedule.validate()?;
        let global = FederatedObjective::new(objectives.clone())?;
        ensure_dim(global.dim(), x0.len())?;
        let n = objectives.len();
        let clients = (0..n)
            .map(|i| ClientState::new(i + 1, x0, client_stream(seed, i)))
            .collect();
        Ok(Self {
            schedule,
            objectives,
            global,
            server: ServerState::new(x0),
            clients,
            channel: Channel::new(n, x0.len()),
            local_steps: vec![0; n],
            seed,
            f_star: None,
            started: Instant::now(),
        })
    }

    pub fn with_reference(mut self, f_star: f64) -> Self {
        self.f_star = Some(f_star);
        self
    }

    pub fn server(&self) -> &ServerState {
        &self.server
    }

    pub fn clients(&self) -> &[ClientState] {
        &self.clients
    }

    pub fn channel(&self) -> &Channel {
        &self.channel
    }

    pub fn is_done(&self) -> bool {
        self.server.k >= self.schedule.rounds
    }

    /// Downlink, parallel local training, uplink, aggregation.
    pub fn round(&mut self) -> Result<MetricsRecord> {
        let k = self.server.k + 1;
        let n = self.clients.len();
        let y_k = self.channel.broadcast(&self.server.y)?;

        let schedule = self.schedule;
        let objectives = &self.objectives;
        let results = for_each_client(&mut self.clients, |i, c| {
            local_training_in_place(c, &y_k, k, &schedule, objectives[i].as_ref(), n)
        });
        let uplinks = first_client_error(results)?;
        let steps = schedule.steps_at(k) as u64;
        for s in &mut self.local_steps {
            *s += steps;
        }

        let msg = self.channel.collect(uplinks)?;
        self.server = server_aggregate(&self.server, &msg.uplinks, k, &schedule, n)?;

        let mean = consensus_project(&msg.uplinks)?;
        let objective = self.global.value(&self.server.x)?;
        if !objective.is_finite() || !linalg::is_finite(&self.server.x) {
            return Err(Error::NonFinite(format!("server model after round {k}")));
        }
        Ok(MetricsRecord {
            algorithm: Algorithm::Fedmls,
            seed: self.seed,
            round: k,
            cum_local_steps: self.local_steps[0],
            objective,
            suboptimality: self.f_star.map(|f| objective - f),
            consensus_gap: consensus_gap(&msg.uplinks, &mean),
            wall_ms: self.started.elapsed().as_secs_f64() * 1e3,
        })
    }

    pub fn finish(mut self) -> RunResult {
        let mut metrics = Vec::with_capacity(self.schedule.rounds);
        while !self.is_done() {
            match self.round() {
                Ok(m) => metrics.push(m),
                Err(source) => {
                    return Err(RunError {
                        source,
                        partial: metrics,
                    })
                }
            }
        }
        Ok(RunOutput {
            x_final: self.server.x,
            metrics,
            comm: self.channel.stats(),
            local_steps: self.local_steps,
        })
    }
}

/// Runs every round of the schedule from `x0`.
pub fn run_fedmls(
    objectives: Vec<SharedObjective>,
    schedule: FedmlsSchedule,
    x0: &[f64],
    seed: u64,
    f_star: Option<f64>,
) -> RunResult {
    let mut run = FedmlsRun::new(objectives, schedule, x0, seed)?;
    run.f_star = f_star;
    run.finish()
}

/// The product-space objective `F(X) = (1/n) sum_i f_i(x^i)` over a
/// column-major flat vector, for running the generic solver on the
/// consensus reformulation.
pub struct ProductObjective {
    clients: Vec<SharedObjective>,
    dim: usize,
}

impl ProductObjective {
    pub fn new(clients: Vec<SharedObjective>) -> Result<Self> {
        let global = FederatedObjective::new(clients.clone())?;
        Ok(Self {
            dim: global.dim(),
            clients,
        })
    }

    pub fn replicate(&self, x: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(x.len() * self.clients.len());
        for _ in &self.clients {
            out.extend_from_slice(x);
        }
        out
    }

    fn columnwise<F>(&self, x: &[f64], mut f: F) -> Result<Vec<f64>>
    where
        F: FnMut(&dyn Objective, &[f64]) -> Result<Vec<f64>>,
    {
        ensure_dim(self.dim * self.clients.len(), x.len())?;
        let inv_n = 1.0 / self.clients.len() as f64;
        let mut out = Vec::with_capacity(x.len());
        for (c, col) in self.clients.iter().zip(x.chunks(self.dim)) {
            let g = f(c.as_ref(), col)?;
            out.extend(g.into_iter().map(|v| v * inv_n));
        }
        Ok(out)
    }
}

impl Objective for ProductObjective {
    fn dim(&self) -> usize {
        self.dim * self.clients.len()
    }

    fn value(&self, x: &[f64]) -> Result<f64> {
        ensure_dim(self.dim(), x.len())?;
        let mut total = 0.0;
        for (c, col) in self.clients.iter().zip(x.chunks(self.dim)) {
            total += c.value(col)?;
        }
        Ok(total / self.clients.len() as f64)
    }

    fn full_subgradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.columnwise(x, |c, col| c.full_subgradient(col))
    }

    fn stochastic_subgradient(&self, x: &[f64], rng: &mut Stream) -> Result<Vec<f64>> {
        self.columnwise(x, |c, col| c.stochastic_subgradient(col, rng))
    }

    fn lipschitz(&self) -> f64 {
        let n = self.clients.len() as f64;
        self.clients
            .iter()
            .map(|c| c.lipschitz().powi(2))
            .sum::<f64>()
            .sqrt()
            / n
    }

    fn variance_bound(&self) -> f64 {
        let n = self.clients.len() as f64;
        self.clients.iter().map(|c| c.variance_bound()).sum::<f64>() / (n * n)
    }
}

/// Convenience: wrap concrete objectives as shared trait objects.
pub fn share<O: Objective + 'static>(objectives: Vec<O>) -> Vec<SharedObjective> {
    objectives
        .into_iter()
        .map(|o| Arc::new(o) as SharedObjective)
        .collect()
}
