//! Simulated server/client plumbing shared by every federated algorithm:
//! the in-process channel, run outputs and the per-round client fan-out.

use std::fmt;

use crate::error::{Error, Result};
use crate::linalg;
use crate::metrics::MetricsRecord;

/// Messages exchanged in one communication round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundMessage {
    pub downlink: Vec<f64>,
    pub uplinks: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CommStats {
    pub downlinks: u64,
    pub uplinks: u64,
}

/// In-process mailbox with a per-round barrier. Every exchange goes through
/// here, so the counters are the ground truth for communication budgets.
#[derive(Debug, Clone)]
pub struct Channel {
    clients: usize,
    dim: usize,
    stats: CommStats,
    pending: Option<Vec<f64>>,
}

impl Channel {
    pub fn new(clients: usize, dim: usize) -> Self {
        Self {
            clients,
            dim,
            stats: CommStats::default(),
            pending: None,
        }
    }

    /// Server to all clients. Returns the payload every client receives.
    pub fn broadcast(&mut self, payload: &[f64]) -> Result<Vec<f64>> {
        if self.pending.is_some() {
            return Err(Error::Protocol(
                "broadcast before the previous round was collected".into(),
            ));
        }
        if payload.len() != self.dim {
            return Err(Error::Protocol(format!(
                "downlink has dimension {}, expected {}",
                payload.len(),
                self.dim
            )));
        }
        self.stats.downlinks += 1;
        self.pending = Some(payload.to_vec());
        Ok(payload.to_vec())
    }

    /// All clients to the server; closes the round.
    pub fn collect(&mut self, uplinks: Vec<Vec<f64>>) -> Result<RoundMessage> {
        if self.pending.is_none() {
            return Err(Error::Protocol("uplinks without a downlink".into()));
        }
        if uplinks.len() != self.clients {
            return Err(Error::Protocol(format!(
                "expected {} uplinks, got {}",
                self.clients,
                uplinks.len()
            )));
        }
        if let Some(bad) = uplinks.iter().find(|u| u.len() != self.dim) {
            return Err(Error::Protocol(format!(
                "uplink has dimension {}, expected {}",
                bad.len(),
                self.dim
            )));
        }
        self.stats.uplinks += uplinks.len() as u64;
        let downlink = self.pending.take().unwrap_or_default();
        Ok(RoundMessage { downlink, uplinks })
    }

    /// Reverse-order round: clients upload first and the server answers with
    /// `reduce(uplinks)`. Counted like a regular round.
    pub fn gather_then_broadcast<F>(
        &mut self,
        uplinks: Vec<Vec<f64>>,
        reduce: F,
    ) -> Result<RoundMessage>
    where
        F: FnOnce(&[Vec<f64>]) -> Result<Vec<f64>>,
    {
        if self.pending.is_some() {
            return Err(Error::Protocol("round already open".into()));
        }
        let reply = reduce(&uplinks)?;
        self.broadcast(&reply)?;
        self.collect(uplinks)
    }

    pub fn stats(&self) -> CommStats {
        self.stats
    }
}

/// Column mean: the projection onto the consensus set, reported as the
/// single shared column. Summed in ascending client order.
pub fn consensus_project(columns: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = columns
        .first()
        .ok_or_else(|| Error::invalid("consensus projection of an empty list"))?;
    if let Some(bad) = columns.iter().find(|c| c.len() != first.len()) {
        return Err(Error::DimensionMismatch {
            expected: first.len(),
            found: bad.len(),
        });
    }
    Ok(linalg::mean(columns))
}

/// `max_i ||c_i - center||`.
pub fn consensus_gap(columns: &[Vec<f64>], center: &[f64]) -> f64 {
    columns
        .iter()
        .map(|c| linalg::dist_sq(c, center).sqrt())
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub x_final: Vec<f64>,
    pub metrics: Vec<MetricsRecord>,
    pub comm: CommStats,
    /// Oracle calls made by each client, in client order.
    pub local_steps: Vec<u64>,
}

/// A run that stopped early. Metrics up to the failing round are kept.
#[derive(Debug)]
pub struct RunError {
    pub source: Error,
    pub partial: Vec<MetricsRecord>,
}

impl fmt::Display for RunError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "run aborted after {} rounds: {}",
            self.partial.len(),
            self.source
        )
    }
}

impl std::error::Error for RunError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.source)
    }
}

impl From<Error> for RunError {
    fn from(source: Error) -> Self {
        RunError {
            source,
            partial: Vec::new(),
        }
    }
}

pub type RunResult = std::result::Result<RunOutput, RunError>;

/// Applies `f` to every client, in parallel when the `parallel` feature is
/// on. Results come back in client order regardless of scheduling.
pub(crate) fn for_each_client<C, T, F>(clients: &mut [C], f: F) -> Vec<T>
where
    C: Send,
    T: Send,
    F: Fn(usize, &mut C) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        if clients.len() > 1 {
            return clients
                .par_iter_mut()
                .enumerate()
                .map(|(i, c)| f(i, c))
                .collect();
        }
    }
    clients
        .iter_mut()
        .enumerate()
        .map(|(i, c)| f(i, c))
        .collect()
}

/// First error among client results, tagged with its zero-based client index.
pub(crate) fn first_client_error<T>(results: Vec<Result<T>>) -> Result<Vec<T>> {
    let mut out = Vec::with_capacity(results.len());
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(v) => out.push(v),
            Err(e @ Error::ClientFailure { .. }) => return Err(e),
            Err(e) => {
                return Err(Error::ClientFailure {
                    client: i + 1,
                    source: Box::new(e),
                })
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn consensus_projection_examples() {
        assert_eq!(
            consensus_project(&[vec![1.0, 3.0], vec![3.0, 5.0]]).unwrap(),
            vec![2.0, 4.0]
        );
        assert_eq!(
            consensus_project(&[vec![7.0, 7.0]]).unwrap(),
            vec![7.0, 7.0]
        );
        assert!(consensus_project(&[]).is_err());
        assert!(consensus_project(&[vec![1.0], vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn projection_minimizes_squared_distance() {
        use rand::Rng;
        let mut rng = crate::rng::substream(4, 0);
        let cols: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..3).map(|_| rng.random_range(-5.0..5.0)).collect())
            .collect();
        let c = consensus_project(&cols).unwrap();
        // the gradient of sum_i ||x_i - c||^2 vanishes at the minimizer
        for j in 0..3 {
            let grad: f64 = cols.iter().map(|x| c[j] - x[j]).sum();
            assert!(grad.abs() < 1e-12);
        }
        let cost = |p: &[f64]| cols.iter().map(|x| linalg::dist_sq(x, p)).sum::<f64>();
        for j in 0..3 {
            let mut p = c.clone();
            p[j] += 1e-3;
            assert!(cost(&p) > cost(&c));
        }
    }

    #[test]
    fn channel_counts_and_enforces_barrier() {
        let mut ch = Channel::new(2, 1);
        assert!(ch.collect(vec![vec![0.0], vec![0.0]]).is_err());
        ch.broadcast(&[1.0]).unwrap();
        assert!(ch.broadcast(&[1.0]).is_err());
        assert!(ch.collect(vec![vec![0.0]]).is_err());
        let msg = ch.collect(vec![vec![0.0], vec![2.0]]).unwrap();
        assert_eq!(msg.downlink, vec![1.0]);
        assert_eq!(
            ch.stats(),
            CommStats {
                downlinks: 1,
                uplinks: 2
            }
        );
    }
}
