//! Convex Lipschitz objectives and their subgradient oracles.
//!
//! The main objective is the unnormalized hinge loss of a linear SVM over a
//! single client's data. Models are augmented vectors `(w; theta)` so every
//! solver and projection in the crate works on one flat vector.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, Error, Result};
use crate::linalg;
use crate::rng::Stream;

/// A subgradient oracle for a convex, Lipschitz function on `R^dim`.
pub trait Objective: Send + Sync {
    fn dim(&self) -> usize;

    fn value(&self, x: &[f64]) -> Result<f64>;

    fn full_subgradient(&self, x: &[f64]) -> Result<Vec<f64>>;

    /// Unbiased estimate of [`Objective::full_subgradient`]. Deterministic
    /// oracles return the full subgradient and leave `rng` untouched.
    fn stochastic_subgradient(&self, x: &[f64], rng: &mut Stream) -> Result<Vec<f64>> {
        let _ = rng;
        self.full_subgradient(x)
    }

    /// Upper bound on the norm of any returned subgradient.
    fn lipschitz(&self) -> f64;

    /// Upper bound on the variance of the stochastic oracle.
    fn variance_bound(&self) -> f64 {
        0.0
    }
}

pub type SharedObjective = Arc<dyn Objective>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Label {
    Negative,
    Positive,
}

impl Label {
    pub fn from_sign(sign: i64) -> Result<Self> {
        match sign {
            1 => Ok(Label::Positive),
            -1 => Ok(Label::Negative),
            other => Err(Error::invalid(format!(
                "label must be -1 or +1, got {other}"
            ))),
        }
    }

    pub fn sign(self) -> f64 {
        match self {
            Label::Positive => 1.0,
            Label::Negative => -1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledPoint {
    features: Vec<f64>,
    label: Label,
}

impl LabeledPoint {
    pub fn new(features: Vec<f64>, label: Label) -> Result<Self> {
        if !linalg::is_finite(&features) {
            return Err(Error::NonFinite("feature vector".into()));
        }
        Ok(Self { features, label })
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn label(&self) -> Label {
        self.label
    }

    pub fn dim(&self) -> usize {
        self.features.len()
    }

    /// Norm of the augmented feature vector `(a; 1)`.
    pub fn augmented_norm(&self) -> f64 {
        (linalg::dot(&self.features, &self.features) + 1.0).sqrt()
    }

    /// `1 - b (w . a + theta)` for an augmented parameter vector.
    fn slack(&self, params: &[f64]) -> f64 {
        let d = self.features.len();
        let margin = linalg::dot(&params[..d], &self.features) + params[d];
        1.0 - self.label.sign() * margin
    }

    /// Adds `weight * g` to `acc`, where `g` is the chosen subgradient of
    /// this point's hinge term. The kink resolves to the zero subgradient.
    fn accumulate_subgradient(&self, params: &[f64], weight: f64, acc: &mut [f64]) {
        if self.slack(params) > 0.0 {
            let coef = -self.label.sign() * weight;
            let d = self.features.len();
            linalg::axpy(coef, &self.features, &mut acc[..d]);
            acc[d] += coef;
        }
    }
}

/// One client's labeled data. `client_id` is one-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientDataset {
    client_id: usize,
    points: Vec<LabeledPoint>,
}

impl ClientDataset {
    pub fn new(client_id: usize, points: Vec<LabeledPoint>) -> Result<Self> {
        let first = points
            .first()
            .ok_or_else(|| Error::invalid(format!("client {client_id} has no data points")))?;
        let d = first.dim();
        for p in &points {
            ensure_dim(d, p.dim())?;
        }
        Ok(Self { client_id, points })
    }

    pub fn client_id(&self) -> usize {
        self.client_id
    }

    pub fn points(&self) -> &[LabeledPoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Feature dimension `d` (the model has `d + 1` parameters).
    pub fn dim(&self) -> usize {
        self.points[0].dim()
    }

    /// Default Lipschitz constant of the client's summed hinge loss:
    /// `sum_j ||(a_j; 1)||`.
    pub fn lipschitz_bound(&self) -> f64 {
        self.points.iter().map(LabeledPoint::augmented_norm).sum()
    }
}

/// Linear SVM parameters stored as `(weights; intercept)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    params: Vec<f64>,
}

impl SvmModel {
    pub fn new(weights: Vec<f64>, intercept: f64) -> Self {
        let mut params = weights;
        params.push(intercept);
        Self { params }
    }

    pub fn zeros(feature_dim: usize) -> Self {
        Self {
            params: vec![0.0; feature_dim + 1],
        }
    }

    pub fn from_augmented(params: Vec<f64>) -> Result<Self> {
        if params.is_empty() {
            return Err(Error::invalid(
                "augmented model needs at least the intercept",
            ));
        }
        Ok(Self { params })
    }

    pub fn weights(&self) -> &[f64] {
        &self.params[..self.params.len() - 1]
    }

    pub fn intercept(&self) -> f64 {
        self.params[self.params.len() - 1]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.params
    }

    pub fn into_augmented(self) -> Vec<f64> {
        self.params
    }

    pub fn feature_dim(&self) -> usize {
        self.params.len() - 1
    }
}

fn hinge_value_raw(params: &[f64], data: &ClientDataset) -> Result<f64> {
    ensure_dim(data.dim() + 1, params.len())?;
    Ok(data.points.iter().map(|p| p.slack(params).max(0.0)).sum())
}

fn hinge_full_raw(params: &[f64], data: &ClientDataset) -> Result<Vec<f64>> {
    ensure_dim(data.dim() + 1, params.len())?;
    let mut g = vec![0.0; params.len()];
    for p in &data.points {
        p.accumulate_subgradient(params, 1.0, &mut g);
    }
    Ok(g)
}

fn batch_size(m: usize, batch_fraction: f64) -> Result<usize> {
    if !(batch_fraction > 0.0 && batch_fraction <= 1.0) {
        return Err(Error::invalid(format!(
            "batch fraction must lie in (0, 1], got {batch_fraction}"
        )));
    }
    Ok(((batch_fraction * m as f64).ceil() as usize).clamp(1, m))
}

fn hinge_stochastic_raw(
    params: &[f64],
    data: &ClientDataset,
    batch_fraction: f64,
    rng: &mut Stream,
) -> Result<Vec<f64>> {
    let m = data.len();
    let b = batch_size(m, batch_fraction)?;
    if b == m {
        return hinge_full_raw(params, data);
    }
    ensure_dim(data.dim() + 1, params.len())?;
    let weight = m as f64 / b as f64;
    let mut g = vec![0.0; params.len()];
    for j in index::sample(rng, m, b).iter() {
        data.points[j].accumulate_subgradient(params, weight, &mut g);
    }
    Ok(g)
}

/// `sum_j max(0, 1 - b_j (w . a_j + theta))` over the client's points.
pub fn hinge_loss_value(model: &SvmModel, data: &ClientDataset) -> Result<f64> {
    hinge_value_raw(model.as_slice(), data)
}

/// Subgradient of a single hinge term with respect to `(w; theta)`.
pub fn hinge_subgradient_point(model: &SvmModel, point: &LabeledPoint) -> Result<Vec<f64>> {
    ensure_dim(point.dim() + 1, model.as_slice().len())?;
    let mut g = vec![0.0; model.as_slice().len()];
    point.accumulate_subgradient(model.as_slice(), 1.0, &mut g);
    Ok(g)
}

pub fn client_full_subgradient(model: &SvmModel, data: &ClientDataset) -> Result<Vec<f64>> {
    hinge_full_raw(model.as_slice(), data)
}

/// Mini-batch estimate: `ceil(fraction * m)` points drawn without
/// replacement, scaled by `m / batch` so the estimate is unbiased. A full
/// batch returns [`client_full_subgradient`] without consuming randomness.
pub fn client_stochastic_subgradient(
    model: &SvmModel,
    data: &ClientDataset,
    batch_fraction: f64,
    rng: &mut Stream,
) -> Result<Vec<f64>> {
    hinge_stochastic_raw(model.as_slice(), data, batch_fraction, rng)
}

/// Hinge-loss SVM objective of one client, exposed as an [`Objective`].
#[derive(Debug, Clone)]
pub struct HingeObjective {
    data: ClientDataset,
    batch_fraction: f64,
    lipschitz: f64,
}

impl HingeObjective {
    pub fn new(data: ClientDataset, batch_fraction: f64) -> Result<Self> {
        batch_size(data.len(), batch_fraction)?;
        let lipschitz = data.lipschitz_bound();
        Ok(Self {
            data,
            batch_fraction,
            lipschitz,
        })
    }

    pub fn deterministic(data: ClientDataset) -> Self {
        Self::new(data, 1.0).expect("full batch is always valid")
    }

    pub fn with_lipschitz(mut self, g: f64) -> Self {
        self.lipschitz = g;
        self
    }

    pub fn data(&self) -> &ClientDataset {
        &self.data
    }

    pub fn batch_fraction(&self) -> f64 {
        self.batch_fraction
    }
}

impl Objective for HingeObjective {
    fn dim(&self) -> usize {
        self.data.dim() + 1
    }

    fn value(&self, x: &[f64]) -> Result<f64> {
        hinge_value_raw(x, &self.data)
    }

    fn full_subgradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        hinge_full_raw(x, &self.data)
    }

    fn stochastic_subgradient(&self, x: &[f64], rng: &mut Stream) -> Result<Vec<f64>> {
        hinge_stochastic_raw(x, &self.data, self.batch_fraction, rng)
    }

    fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    fn variance_bound(&self) -> f64 {
        if self.batch_fraction >= 1.0 {
            return 0.0;
        }
        let max_norm = self
            .data
            .points
            .iter()
            .map(LabeledPoint::augmented_norm)
            .fold(0.0, f64::max);
        (self.data.len() as f64 * max_norm).powi(2)
    }
}

/// `scale * sum_j |x_j - center_j|`.
#[derive(Debug, Clone)]
pub struct AbsObjective {
    center: Vec<f64>,
    scale: f64,
}

impl AbsObjective {
    pub fn new(center: Vec<f64>, scale: f64) -> Self {
        Self { center, scale }
    }

    /// `|x|` on the real line.
    pub fn scalar() -> Self {
        Self::new(vec![0.0], 1.0)
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }
}

impl Objective for AbsObjective {
    fn dim(&self) -> usize {
        self.center.len()
    }

    fn value(&self, x: &[f64]) -> Result<f64> {
        ensure_dim(self.center.len(), x.len())?;
        Ok(self.scale
            * x.iter()
                .zip(&self.center)
                .map(|(a, c)| (a - c).abs())
                .sum::<f64>())
    }

    fn full_subgradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        ensure_dim(self.center.len(), x.len())?;
        Ok(x.iter()
            .zip(&self.center)
            .map(|(a, c)| {
                let r = a - c;
                if r > 0.0 {
                    self.scale
                } else if r < 0.0 {
                    -self.scale
                } else {
                    0.0
                }
            })
            .collect())
    }

    fn lipschitz(&self) -> f64 {
        self.scale.abs() * (self.center.len() as f64).sqrt()
    }
}

/// `0.5 * ||x - center||^2`, Lipschitz on the ball of radius `radius`.
#[derive(Debug, Clone)]
pub struct QuadraticObjective {
    center: Vec<f64>,
    radius: f64,
}

impl QuadraticObjective {
    pub fn new(center: Vec<f64>, radius: f64) -> Self {
        Self { center, radius }
    }
}

impl Objective for QuadraticObjective {
    fn dim(&self) -> usize {
        self.center.len()
    }

    fn value(&self, x: &[f64]) -> Result<f64> {
        ensure_dim(self.center.len(), x.len())?;
        Ok(0.5 * linalg::dist_sq(x, &self.center))
    }

    fn full_subgradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        ensure_dim(self.center.len(), x.len())?;
        Ok(linalg::sub(x, &self.center))
    }

    fn lipschitz(&self) -> f64 {
        self.radius + linalg::norm(&self.center)
    }
}

/// The constant zero function.
#[derive(Debug, Clone, Copy)]
pub struct ZeroObjective {
    dim: usize,
}

impl ZeroObjective {
    pub fn new(dim: usize) -> Self {
        Self { dim }
    }
}

impl Objective for ZeroObjective {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, x: &[f64]) -> Result<f64> {
        ensure_dim(self.dim, x.len())?;
        Ok(0.0)
    }

    fn full_subgradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        ensure_dim(self.dim, x.len())?;
        Ok(vec![0.0; self.dim])
    }

    fn lipschitz(&self) -> f64 {
        0.0
    }
}

/// Decorator counting oracle calls, used to audit local-step budgets.
pub struct CountingObjective {
    inner: SharedObjective,
    subgradient_calls: AtomicU64,
}

impl CountingObjective {
    pub fn new(inner: SharedObjective) -> Self {
        Self {
            inner,
            subgradient_calls: AtomicU64::new(0),
        }
    }

    /// Number of subgradient evaluations (full or stochastic) so far.
    pub fn subgradient_calls(&self) -> u64 {
        self.subgradient_calls.load(Ordering::Relaxed)
    }
}

impl Objective for CountingObjective {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn value(&self, x: &[f64]) -> Result<f64> {
        self.inner.value(x)
    }

    fn full_subgradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.subgradient_calls.fetch_add(1, Ordering::Relaxed);
        self.inner.full_subgradient(x)
    }

    fn stochastic_subgradient(&self, x: &[f64], rng: &mut Stream) -> Result<Vec<f64>> {
        self.subgradient_calls.fetch_add(1, Ordering::Relaxed);
        self.inner.stochastic_subgradient(x, rng)
    }

    fn lipschitz(&self) -> f64 {
        self.inner.lipschitz()
    }

    fn variance_bound(&self) -> f64 {
        self.inner.variance_bound()
    }
}

/// The federated objective `f(x) = (1/n) sum_i f_i(x)`.
#[derive(Clone)]
pub struct FederatedObjective {
    clients: Vec<SharedObjective>,
}

impl FederatedObjective {
    pub fn new(clients: Vec<SharedObjective>) -> Result<Self> {
        let first = clients
            .first()
            .ok_or_else(|| Error::invalid("federation needs at least one client"))?;
        let d = first.dim();
        for c in &clients {
            ensure_dim(d, c.dim())?;
        }
        Ok(Self { clients })
    }

    pub fn clients(&self) -> &[SharedObjective] {
        &self.clients
    }

    /// Largest per-client Lipschitz constant.
    pub fn max_client_lipschitz(&self) -> f64 {
        self.clients
            .iter()
            .map(|c| c.lipschitz())
            .fold(0.0, f64::max)
    }
}

impl Objective for FederatedObjective {
    fn dim(&self) -> usize {
        self.clients[0].dim()
    }

    fn value(&self, x: &[f64]) -> Result<f64> {
        let mut total = 0.0;
        for c in &self.clients {
            total += c.value(x)?;
        }
        Ok(total / self.clients.len() as f64)
    }

    fn full_subgradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        let grads = self
            .clients
            .iter()
            .map(|c| c.full_subgradient(x))
            .collect::<Result<Vec<_>>>()?;
        Ok(linalg::mean(&grads))
    }

    fn stochastic_subgradient(&self, x: &[f64], rng: &mut Stream) -> Result<Vec<f64>> {
        let grads = self
            .clients
            .iter()
            .map(|c| c.stochastic_subgradient(x, rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(linalg::mean(&grads))
    }

    /// Global constant `(1/n) sum_i G_i`.
    fn lipschitz(&self) -> f64 {
        self.clients.iter().map(|c| c.lipschitz()).sum::<f64>() / self.clients.len() as f64
    }

    fn variance_bound(&self) -> f64 {
        let n = self.clients.len() as f64;
        self.clients.iter().map(|c| c.variance_bound()).sum::<f64>() / (n * n)
    }
}
