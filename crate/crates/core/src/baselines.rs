//! FedAvg, Scaffold and Scaffnew with decreasing step sizes for non-smooth
//! objectives. They share the channel, metrics and seeding discipline of the
//! FedMLS runner so that budgets and trajectories are directly comparable.

use crate::clock::Instant;

use rand::Rng;

use crate::error::{ensure_dim, Error, Result};
use crate::federation::{
    consensus_gap, consensus_project, first_client_error, for_each_client, Channel, RunError,
    RunOutput, RunResult,
};
use crate::linalg;
use crate::metrics::{Algorithm, MetricsRecord};
use crate::mopes::InnerSteps;
use crate::problem::{FederatedObjective, Objective, SharedObjective};
use crate::rng::{client_stream, harness_stream, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineKind {
    Fedavg,
    Scaffold,
    Scaffnew,
}

impl BaselineKind {
    pub fn algorithm(self) -> Algorithm {
        match self {
            BaselineKind::Fedavg => Algorithm::Fedavg,
            BaselineKind::Scaffold => Algorithm::Scaffold,
            BaselineKind::Scaffnew => Algorithm::Scaffnew,
        }
    }
}

/// Local steps per round for FedAvg and Scaffold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LocalSteps {
    Constant(usize),
    /// `T_k = max(1, ceil(t0 * k))`; `t0 = 1` gives `T_k = k`.
    Linear {
        t0: f64,
    },
}

impl LocalSteps {
    pub fn at(self, k: usize) -> usize {
        match self {
            LocalSteps::Constant(t) => t,
            LocalSteps::Linear { t0 } => InnerSteps::linear_steps(t0, k),
        }
    }
}

/// Scaffnew communication probability at iteration `t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ProbRule {
    /// `p_t = 1 / sqrt(t)`.
    InverseSqrt,
    Constant(f64),
}

impl ProbRule {
    pub fn at(self, t: u64) -> f64 {
        match self {
            ProbRule::InverseSqrt => 1.0 / (t as f64).sqrt(),
            ProbRule::Constant(p) => p,
        }
    }
}

/// Which `t` enters Scaffold's local step `eta0 / (eta_g t)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StepCounter {
    /// Total local steps taken by the client since the start of the run.
    #[default]
    Cumulative,
    /// Local step index within the current round.
    PerRound,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaselineConfig {
    pub kind: BaselineKind,
    pub eta0: f64,
    /// Communication rounds. For Scaffnew the run stops after this many
    /// successful coin flips.
    pub rounds: usize,
    pub local_steps: LocalSteps,
    pub prob_rule: ProbRule,
    pub step_counter: StepCounter,
    /// Scaffnew only: hard cap on local iterations.
    pub max_iterations: Option<u64>,
}

impl BaselineConfig {
    pub fn new(kind: BaselineKind, eta0: f64, rounds: usize) -> Self {
        Self {
            kind,
            eta0,
            rounds,
            local_steps: LocalSteps::Linear { t0: 1.0 },
            prob_rule: ProbRule::InverseSqrt,
            step_counter: StepCounter::Cumulative,
            max_iterations: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta0 > 0.0) {
            return Err(Error::invalid("eta0 must be positive"));
        }
        if self.rounds == 0 {
            return Err(Error::invalid("at least one round is required"));
        }
        match self.kind {
            BaselineKind::Scaffnew => match self.prob_rule {
                ProbRule::Constant(p) if !(p > 0.0 && p <= 1.0) => Err(Error::invalid(
                    "communication probability must lie in (0, 1]",
                )),
                _ => Ok(()),
            },
            _ => match self.local_steps {
                LocalSteps::Constant(0) => Err(Error::invalid("local steps must be >= 1")),
                LocalSteps::Linear { t0 } if !(t0 > 0.0) => {
                    Err(Error::invalid("local-step factor must be positive"))
                }
                _ => Ok(()),
            },
        }
    }
}

struct Client {
    model: Vec<f64>,
    control: Vec<f64>,
    rng: Stream,
    counter: u64,
}

fn init_clients(n: usize, x0: &[f64], seed: u64) -> Vec<Client> {
    (0..n)
        .map(|i| Client {
            model: x0.to_vec(),
            control: vec![0.0; x0.len()],
            rng: client_stream(seed, i),
            counter: 0,
        })
        .collect()
}

struct Recorder {
    algorithm: Algorithm,
    seed: u64,
    f_star: Option<f64>,
    global: FederatedObjective,
    started: Instant,
    metrics: Vec<MetricsRecord>,
}

impl Recorder {
    fn new(
        kind: BaselineKind,
        objectives: &[SharedObjective],
        seed: u64,
        f_star: Option<f64>,
    ) -> Result<Self> {
        Ok(Self {
            algorithm: kind.algorithm(),
            seed,
            f_star,
            global: FederatedObjective::new(objectives.to_vec())?,
            started: Instant::now(),
            metrics: Vec::new(),
        })
    }

    fn record(&mut self, round: usize, steps: u64, x: &[f64], gap: f64) -> Result<()> {
        let objective = self.global.value(x)?;
        if !objective.is_finite() || !linalg::is_finite(x) {
            return Err(Error::NonFinite(format!(
                "server model after round {round}"
            )));
        }
        self.metrics.push(MetricsRecord {
            algorithm: self.algorithm,
            seed: self.seed,
            round,
            cum_local_steps: steps,
            objective,
            suboptimality: self.f_star.map(|f| objective - f),
            consensus_gap: gap,
            wall_ms: self.started.elapsed().as_secs_f64() * 1e3,
        });
        Ok(())
    }

    fn fail(self, source: Error) -> RunError {
        RunError {
            source,
            partial: self.metrics,
        }
    }
}

fn check_setup(
    config: &BaselineConfig,
    expected: BaselineKind,
    objectives: &[SharedObjective],
    x0: &[f64],
) -> Result<()> {
    if config.kind != expected {
        return Err(Error::invalid(format!(
            "config is for {:?}, not {expected:?}",
            config.kind
        )));
    }
    config.validate()?;
    let first = objectives
        .first()
        .ok_or_else(|| Error::invalid("at least one client is required"))?;
    ensure_dim(first.dim(), x0.len())
}

/// FedAvg: `T_k` local stochastic subgradient steps with `eta_k = eta0/sqrt(k)`
/// from the broadcast model, then plain averaging.
pub fn run_fedavg(
    objectives: Vec<SharedObjective>,
    config: BaselineConfig,
    x0: &[f64],
    seed: u64,
    f_star: Option<f64>,
) -> RunResult {
    check_setup(&config, BaselineKind::Fedavg, &objectives, x0)?;
    let n = objectives.len();
    let mut rec = Recorder::new(config.kind, &objectives, seed, f_star)?;
    let mut clients = init_clients(n, x0, seed);
    let mut channel = Channel::new(n, x0.len());
    let mut x = x0.to_vec();
    let mut steps_total = 0u64;

    for k in 1..=config.rounds {
        let round = (|| -> Result<(Vec<f64>, f64)> {
            let start = channel.broadcast(&x)?;
            let eta = config.eta0 / (k as f64).sqrt();
            let steps = config.local_steps.at(k);
            let results = for_each_client(&mut clients, |i, c| -> Result<Vec<f64>> {
                let mut w = start.clone();
                for _ in 0..steps {
                    let g = objectives[i].stochastic_subgradient(&w, &mut c.rng)?;
                    linalg::axpy(-eta, &g, &mut w);
                }
                c.counter += steps as u64;
                Ok(w)
            });
            let msg = channel.collect(first_client_error(results)?)?;
            let mean = consensus_project(&msg.uplinks)?;
            steps_total += steps as u64;
            let gap = consensus_gap(&msg.uplinks, &mean);
            Ok((mean, gap))
        })();
        match round.and_then(|(mean, gap)| {
            x = mean;
            rec.record(k, steps_total, &x, gap)
        }) {
            Ok(()) => {}
            Err(e) => return Err(rec.fail(e)),
        }
    }
    Ok(RunOutput {
        x_final: x,
        metrics: rec.metrics,
        comm: channel.stats(),
        local_steps: clients.iter().map(|c| c.counter).collect(),
    })
}

/// Scaffold with Option-II control variates, global step `sqrt(n)` and
/// local step `eta0 / (sqrt(n) t)`.
///
/// The downlink carries `(x, c)`; each uplink carries `(y_i - x, c_i^+)`.
/// With every client participating, the server sets `c` to the mean of the
/// uploaded `c_i^+`, so `c = mean(c_i)` holds exactly after each round.
pub fn run_scaffold(
    objectives: Vec<SharedObjective>,
    config: BaselineConfig,
    x0: &[f64],
    seed: u64,
    f_star: Option<f64>,
) -> RunResult {
    check_setup(&config, BaselineKind::Scaffold, &objectives, x0)?;
    let n = objectives.len();
    let d = x0.len();
    let eta_g = (n as f64).sqrt();
    let mut rec = Recorder::new(config.kind, &objectives, seed, f_star)?;
    let mut clients = init_clients(n, x0, seed);
    let mut channel = Channel::new(n, 2 * d);
    let mut x = x0.to_vec();
    let mut c = vec![0.0; d];
    let mut steps_total = 0u64;

    for k in 1..=config.rounds {
        let round = (|| -> Result<f64> {
            let mut payload = x.clone();
            payload.extend_from_slice(&c);
            let down = channel.broadcast(&payload)?;
            let (x_recv, c_recv) = down.split_at(d);
            let steps = config.local_steps.at(k);
            let results = for_each_client(&mut clients, |i, cl| -> Result<Vec<f64>> {
                let correction = linalg::sub(c_recv, &cl.control);
                let mut y = x_recv.to_vec();
                let mut eta_sum = 0.0;
                for s in 1..=steps as u64 {
                    let t = match config.step_counter {
                        StepCounter::Cumulative => cl.counter + s,
                        StepCounter::PerRound => s,
                    };
                    let eta = config.eta0 / (eta_g * t as f64);
                    let g = objectives[i].stochastic_subgradient(&y, &mut cl.rng)?;
                    for j in 0..d {
                        y[j] -= eta * (g[j] + correction[j]);
                    }
                    eta_sum += eta;
                }
                cl.counter += steps as u64;
                // c_i^+ = c_i - c + (x - y) / sum_t eta_t
                let control: Vec<f64> = (0..d)
                    .map(|j| cl.control[j] - c_recv[j] + (x_recv[j] - y[j]) / eta_sum)
                    .collect();
                cl.control = control.clone();
                let mut up = linalg::sub(&y, x_recv);
                up.extend(control);
                Ok(up)
            });
            let msg = channel.collect(first_client_error(results)?)?;
            steps_total += steps as u64;

            let deltas: Vec<Vec<f64>> = msg.uplinks.iter().map(|u| u[..d].to_vec()).collect();
            let controls: Vec<Vec<f64>> = msg.uplinks.iter().map(|u| u[d..].to_vec()).collect();
            let mean_delta = consensus_project(&deltas)?;
            linalg::axpy(eta_g, &mean_delta, &mut x);
            c = consensus_project(&controls)?;

            let stored: Vec<Vec<f64>> = clients.iter().map(|cl| cl.control.clone()).collect();
            if consensus_project(&stored)? != c {
                return Err(Error::Protocol(format!(
                    "round {k}: server control variate drifted from the client mean"
                )));
            }
            let ends: Vec<Vec<f64>> = deltas
                .iter()
                .map(|dy| {
                    let mut y = x_recv.to_vec();
                    linalg::axpy(1.0, dy, &mut y);
                    y
                })
                .collect();
            let centre = consensus_project(&ends)?;
            Ok(consensus_gap(&ends, &centre))
        })();
        match round.and_then(|gap| rec.record(k, steps_total, &x, gap)) {
            Ok(()) => {}
            Err(e) => return Err(rec.fail(e)),
        }
    }
    Ok(RunOutput {
        x_final: x,
        metrics: rec.metrics,
        comm: channel.stats(),
        local_steps: clients.iter().map(|c| c.counter).collect(),
    })
}

/// Scaffnew (ProxSkip in consensus form): one corrected local step per
/// iteration with `eta_t = eta0 / sqrt(t)`; with probability `p_t` (one coin
/// per iteration, drawn from the harness stream) clients upload, the server
/// averages, and `h_i += (p_t / eta_t) (mean - x_hat_i)`.
///
/// One metrics row is written per communication. The reported consensus gap
/// is the spread of the uploaded models before averaging.
pub fn run_scaffnew(
    objectives: Vec<SharedObjective>,
    config: BaselineConfig,
    x0: &[f64],
    seed: u64,
    f_star: Option<f64>,
) -> RunResult {
    let mut run = ScaffnewRun::new(objectives, config, x0, seed, f_star)?;
    while !run.is_done() {
        if let Err(e) = run.iteration() {
            return Err(run.rec.fail(e));
        }
    }
    Ok(run.finish())
}

/// Iteration-level Scaffnew driver.
pub struct ScaffnewRun {
    objectives: Vec<SharedObjective>,
    config: BaselineConfig,
    clients: Vec<Client>,
    channel: Channel,
    coin: Stream,
    x_bar: Vec<f64>,
    t: u64,
    comms: usize,
    rec: Recorder,
}

impl ScaffnewRun {
    pub fn new(
        objectives: Vec<SharedObjective>,
        config: BaselineConfig,
        x0: &[f64],
        seed: u64,
        f_star: Option<f64>,
    ) -> Result<Self> {
        check_setup(&config, BaselineKind::Scaffnew, &objectives, x0)?;
        let n = objectives.len();
        let rec = Recorder::new(config.kind, &objectives, seed, f_star)?;
        Ok(Self {
            clients: init_clients(n, x0, seed),
            channel: Channel::new(n, x0.len()),
            coin: harness_stream(seed),
            x_bar: x0.to_vec(),
            t: 0,
            comms: 0,
            objectives,
            config,
            rec,
        })
    }

    pub fn is_done(&self) -> bool {
        self.comms >= self.config.rounds
            || self.config.max_iterations.is_some_and(|cap| self.t >= cap)
    }

    pub fn iterations(&self) -> u64 {
        self.t
    }

    pub fn communications(&self) -> usize {
        self.comms
    }

    /// Current client models.
    pub fn client_models(&self) -> Vec<Vec<f64>> {
        self.clients.iter().map(|c| c.model.clone()).collect()
    }

    /// Runs one local iteration; returns whether it ended in a communication.
    pub fn iteration(&mut self) -> Result<bool> {
        self.t += 1;
        let t = self.t;
        let eta = self.config.eta0 / (t as f64).sqrt();
        let p = self.config.prob_rule.at(t).min(1.0);
        let objectives = &self.objectives;
        let results = for_each_client(&mut self.clients, |i, c| -> Result<()> {
            let g = objectives[i].stochastic_subgradient(&c.model, &mut c.rng)?;
            for ((m, g), h) in c.model.iter_mut().zip(&g).zip(&c.control) {
                *m -= eta * (g - h);
            }
            c.counter += 1;
            Ok(())
        });
        first_client_error(results)?;

        if !self.coin.random_bool(p) {
            return Ok(false);
        }
        let uplinks: Vec<Vec<f64>> = self.clients.iter().map(|c| c.model.clone()).collect();
        let msg = self
            .channel
            .gather_then_broadcast(uplinks, consensus_project)?;
        let mean = msg.downlink;
        let gap = consensus_gap(&msg.uplinks, &mean);
        let weight = p / eta;
        for c in &mut self.clients {
            for ((h, m), x) in c.control.iter_mut().zip(&mean).zip(&c.model) {
                *h += weight * (m - x);
            }
            c.model.clone_from(&mean);
        }
        self.comms += 1;
        self.x_bar = mean;
        self.rec.record(self.comms, t, &self.x_bar, gap)?;
        Ok(true)
    }

    pub fn finish(self) -> RunOutput {
        RunOutput {
            x_final: self.x_bar,
            metrics: self.rec.metrics,
            comm: self.channel.stats(),
            local_steps: self.clients.iter().map(|c| c.counter).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fedmls::share;
    use crate::problem::{AbsObjective, ZeroObjective};

    fn abs_clients() -> Vec<SharedObjective> {
        share(vec![
            AbsObjective::new(vec![1.0, -0.5], 1.0),
            AbsObjective::new(vec![-1.0, 0.5], 1.0),
        ])
    }

    #[test]
    fn zero_gradients_do_not_move() {
        let zero = share(vec![ZeroObjective::new(2), ZeroObjective::new(2)]);
        let x0 = [0.3, -0.7];
        for kind in [
            BaselineKind::Fedavg,
            BaselineKind::Scaffold,
            BaselineKind::Scaffnew,
        ] {
            let cfg = BaselineConfig::new(kind, 0.1, 5);
            let out = match kind {
                BaselineKind::Fedavg => run_fedavg(zero.clone(), cfg, &x0, 0, None),
                BaselineKind::Scaffold => run_scaffold(zero.clone(), cfg, &x0, 0, None),
                BaselineKind::Scaffnew => run_scaffnew(zero.clone(), cfg, &x0, 0, None),
            }
            .unwrap();
            assert_eq!(out.x_final, x0.to_vec(), "{kind:?}");
        }
    }

    #[test]
    fn fedavg_single_client_is_subgradient_descent() {
        let f = AbsObjective::new(vec![2.0, -1.0], 1.0);
        let objs = share(vec![f.clone()]);
        let mut cfg = BaselineConfig::new(BaselineKind::Fedavg, 0.5, 40);
        cfg.local_steps = LocalSteps::Constant(1);
        let out = run_fedavg(objs, cfg, &[0.0, 0.0], 0, None).unwrap();
        let mut x = vec![0.0, 0.0];
        for k in 1..=40 {
            let g = f.full_subgradient(&x).unwrap();
            linalg::axpy(-0.5 / (k as f64).sqrt(), &g, &mut x);
        }
        assert_eq!(out.x_final, x);
    }

    #[test]
    fn scaffold_single_client_reduces_to_sgd() {
        let f = AbsObjective::new(vec![2.0, -1.0], 1.0);
        let objs = share(vec![f.clone()]);
        let mut cfg = BaselineConfig::new(BaselineKind::Scaffold, 0.5, 10);
        cfg.local_steps = LocalSteps::Linear { t0: 1.0 };
        let out = run_scaffold(objs, cfg, &[0.0, 0.0], 0, None).unwrap();
        // eta_g = 1, correction c - c_1 = 0, server x <- x + (y - x)
        let mut x: Vec<f64> = vec![0.0, 0.0];
        let mut t = 0u64;
        for k in 1..=10 {
            for _ in 0..k {
                t += 1;
                let g = f.full_subgradient(&x).unwrap();
                linalg::axpy(-0.5 / t as f64, &g, &mut x);
            }
        }
        for (a, b) in out.x_final.iter().zip(&x) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn scaffold_budgets_and_counter_modes() {
        let mut cfg = BaselineConfig::new(BaselineKind::Scaffold, 0.1, 6);
        let x0 = [0.2, 0.9];
        let out = run_scaffold(abs_clients(), cfg, &x0, 1, None).unwrap();
        assert_eq!(out.comm.downlinks, 6);
        assert_eq!(out.comm.uplinks, 12);
        assert_eq!(out.local_steps, vec![21, 21]);
        cfg.step_counter = StepCounter::PerRound;
        let per_round = run_scaffold(abs_clients(), cfg, &x0, 1, None).unwrap();
        assert_ne!(per_round.x_final, out.x_final);
    }

    #[test]
    fn scaffnew_always_communicating_keeps_clients_in_sync() {
        let mut cfg = BaselineConfig::new(BaselineKind::Scaffnew, 0.2, 25);
        cfg.prob_rule = ProbRule::Constant(1.0);
        let mut run = ScaffnewRun::new(abs_clients(), cfg, &[0.0, 0.0], 4, None).unwrap();
        while !run.is_done() {
            assert!(run.iteration().unwrap());
            let models = run.client_models();
            let mean = consensus_project(&models).unwrap();
            assert_eq!(consensus_gap(&models, &mean), 0.0);
        }
        let out = run.finish();
        assert_eq!(out.comm.downlinks, 25);
        assert_eq!(out.local_steps, vec![25, 25]);
    }

    #[test]
    fn scaffnew_iteration_cap() {
        let mut cfg = BaselineConfig::new(BaselineKind::Scaffnew, 0.2, usize::MAX);
        cfg.max_iterations = Some(100);
        let out = run_scaffnew(abs_clients(), cfg, &[0.0, 0.0], 2, None).unwrap();
        assert_eq!(out.local_steps, vec![100, 100]);
        assert_eq!(out.comm.downlinks as usize, out.metrics.len());
        assert_eq!(out.comm.uplinks, 2 * out.comm.downlinks);
    }

    #[test]
    fn runs_are_reproducible() {
        for kind in [
            BaselineKind::Fedavg,
            BaselineKind::Scaffold,
            BaselineKind::Scaffnew,
        ] {
            let cfg = BaselineConfig::new(kind, 0.1, 8);
            let go = || {
                match kind {
                    BaselineKind::Fedavg => run_fedavg(abs_clients(), cfg, &[0.0, 0.0], 5, None),
                    BaselineKind::Scaffold => {
                        run_scaffold(abs_clients(), cfg, &[0.0, 0.0], 5, None)
                    }
                    BaselineKind::Scaffnew => {
                        run_scaffnew(abs_clients(), cfg, &[0.0, 0.0], 5, None)
                    }
                }
                .unwrap()
            };
            let (a, b) = (go(), go());
            assert_eq!(a.x_final, b.x_final);
            assert!(a
                .metrics
                .iter()
                .zip(&b.metrics)
                .all(|(r, s)| r.same_trajectory(s)));
        }
    }

    #[test]
    fn mismatched_kind_is_rejected() {
        let cfg = BaselineConfig::new(BaselineKind::Scaffnew, 0.1, 3);
        assert!(run_fedavg(abs_clients(), cfg, &[0.0, 0.0], 0, None).is_err());
        let bad = BaselineConfig::new(BaselineKind::Fedavg, -1.0, 3);
        assert!(run_fedavg(abs_clients(), bad, &[0.0, 0.0], 0, None).is_err());
    }
}
