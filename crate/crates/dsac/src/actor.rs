//! Tanh-squashed Gaussian policy and the entropy-regularized policy loss.
//!
//! The policy is reparameterized: a state-conditioned Gaussian produces a
//! pre-squash draw `xi = mu(s) + sigma(s) * eps`, and the emitted action is
//! `tanh(xi)`, so every action lies strictly inside `(-1, 1)^d` and the
//! gradient of any action-dependent objective flows back into the network
//! through the draw itself. The policy loss is the expected entropy-
//! regularized value `alpha * log pi - Q`, where `Q` collapses the twin
//! critics' quantile readout under a configurable risk objective.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::critic::QuantileSource;
use crate::error::{Error, Result};
use crate::fractions::FractionSet;
use crate::neuro::tape::softplus;
use crate::neuro::{NodeId, ParamVec, Tape, Tensor};
use crate::risk::{distortion_dg, RiskSpec};

/// Clamp band for the log standard deviation head.
const LOG_STD_MIN: f64 = -20.0;
const LOG_STD_MAX: f64 = 2.0;

/// One reparameterized draw: the squashed action, its log-density, and the
/// noise that produced it.
#[derive(Debug, Clone)]
pub struct ActionSample {
    pub action: Vec<f64>,
    pub log_prob: f64,
    pub noise: Vec<f64>,
}

/// Node handles for a policy forward pass with a fixed noise matrix.
pub struct ReparamGraph {
    pub param_nodes: Vec<NodeId>,
    pub states: NodeId,
    /// `[batch, d]` squashed actions.
    pub action: NodeId,
    /// `[batch, 1]` log-densities of the drawn actions.
    pub log_prob: NodeId,
    /// `[batch, d]` pre-squash means.
    pub mean: NodeId,
    /// `[batch, d]` clamped log standard deviations.
    pub log_std: NodeId,
}

/// State-conditioned Gaussian with a tanh squash.
#[derive(Debug, Clone)]
pub struct GaussianPolicy {
    pub params: ParamVec,
    obs_dim: usize,
    act_dim: usize,
    hidden: usize,
}

impl GaussianPolicy {
    pub fn new(obs_dim: usize, act_dim: usize, hidden: usize, rng: &mut impl Rng) -> Result<Self> {
        for (dim, what) in [
            (obs_dim, "observation dimension"),
            (act_dim, "action dimension"),
            (hidden, "hidden width"),
        ] {
            if dim == 0 {
                return Err(Error::Config(format!("policy {what} must be positive")));
            }
        }
        let mut params = ParamVec::new();
        params.add("actor.w1", Tensor::fan_in_init(obs_dim, hidden, obs_dim, rng));
        params.add("actor.b1", Tensor::fan_in_init(1, hidden, obs_dim, rng));
        params.add("actor.w2", Tensor::fan_in_init(hidden, hidden, hidden, rng));
        params.add("actor.b2", Tensor::fan_in_init(1, hidden, hidden, rng));
        params.add("actor.mean_w", Tensor::fan_in_init(hidden, act_dim, hidden, rng));
        params.add("actor.mean_b", Tensor::fan_in_init(1, act_dim, hidden, rng));
        params.add("actor.lstd_w", Tensor::fan_in_init(hidden, act_dim, hidden, rng));
        params.add("actor.lstd_b", Tensor::fan_in_init(1, act_dim, hidden, rng));
        Ok(GaussianPolicy { params, obs_dim, act_dim, hidden })
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn act_dim(&self) -> usize {
        self.act_dim
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    /// Build the reparameterized forward pass for a batch of states and a
    /// fixed `[batch, d]` noise matrix. The log-density is assembled from the
    /// pre-squash draw directly (`log(1 - tanh^2 xi)` in softplus form), so
    /// it stays finite even for saturated actions.
    pub fn attach_sample(
        &self,
        tape: &mut Tape,
        states: &Tensor,
        noise: &Tensor,
        trainable: bool,
    ) -> Result<ReparamGraph> {
        if states.cols() != self.obs_dim {
            return Err(Error::Shape(format!(
                "policy expects {} state columns, got {}",
                self.obs_dim,
                states.cols()
            )));
        }
        if noise.shape() != (states.rows(), self.act_dim) {
            return Err(Error::Shape(format!(
                "noise is {}x{}, expected {}x{}",
                noise.rows(),
                noise.cols(),
                states.rows(),
                self.act_dim
            )));
        }
        if !states.all_finite() || !noise.all_finite() {
            return Err(Error::NonFinite("policy input contains a non-finite value".into()));
        }
        for p in self.params.iter() {
            if !p.value.all_finite() {
                return Err(Error::NonFinite(format!(
                    "policy parameter '{}' is not finite",
                    p.name
                )));
            }
        }
        let p = if trainable { self.params.bind(tape) } else { self.params.bind_frozen(tape) };
        let s = tape.leaf(states.clone());
        let h = tape.dense(s, p[0], p[1])?;
        let h = tape.relu(h)?;
        let h = tape.dense(h, p[2], p[3])?;
        let h = tape.relu(h)?;
        let mean = tape.dense(h, p[4], p[5])?;
        let log_std = tape.dense(h, p[6], p[7])?;
        let log_std = tape.clamp(log_std, LOG_STD_MIN, LOG_STD_MAX)?;
        let sigma = tape.exp(log_std)?;
        let eps = tape.leaf(noise.clone());
        let spread = tape.mul(sigma, eps)?;
        let xi = tape.add(mean, spread)?;
        let action = tape.tanh(xi)?;
        // per dimension: -eps^2/2 - log sigma - ln(2 pi)/2 - 2(ln 2 - xi - softplus(-2 xi))
        let half_ln_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
        let base = Tensor::from_fn(noise.rows(), noise.cols(), |i, j| {
            -0.5 * noise.get(i, j) * noise.get(i, j) - half_ln_2pi - 2.0 * std::f64::consts::LN_2
        });
        let base = tape.leaf(base);
        let t = tape.sub(base, log_std)?;
        let two_xi = tape.scale(xi, 2.0)?;
        let t = tape.add(t, two_xi)?;
        let neg_two_xi = tape.scale(xi, -2.0)?;
        let sp = tape.softplus(neg_two_xi)?;
        let two_sp = tape.scale(sp, 2.0)?;
        let t = tape.add(t, two_sp)?;
        let log_prob = tape.row_sum(t)?;
        Ok(ReparamGraph { param_nodes: p, states: s, action, log_prob, mean, log_std })
    }

    /// Mean and log-std heads for one state.
    fn heads(&self, s: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut tape = Tape::new();
        let zero = Tensor::zeros(1, self.act_dim);
        let g = self.attach_sample(&mut tape, &Tensor::row(s), &zero, false)?;
        Ok((
            tape.value(g.mean).row_slice(0).to_vec(),
            tape.value(g.log_std).row_slice(0).to_vec(),
        ))
    }

    /// Draw one reparameterized action.
    pub fn sample(&self, s: &[f64], rng: &mut impl Rng) -> Result<ActionSample> {
        let (mean, log_std) = self.heads(s)?;
        let noise: Vec<f64> = (0..self.act_dim).map(|_| rng.sample(StandardNormal)).collect();
        let mut action = Vec::with_capacity(self.act_dim);
        let mut log_prob = 0.0;
        let half_ln_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
        for k in 0..self.act_dim {
            let xi = mean[k] + log_std[k].exp() * noise[k];
            action.push(xi.tanh());
            log_prob += -0.5 * noise[k] * noise[k] - log_std[k] - half_ln_2pi
                - 2.0 * (std::f64::consts::LN_2 - xi - softplus(-2.0 * xi));
        }
        Ok(ActionSample { action, log_prob, noise })
    }

    /// The deterministic evaluation action `tanh(mu(s))`.
    pub fn mean_action(&self, s: &[f64]) -> Result<Vec<f64>> {
        let (mean, _) = self.heads(s)?;
        Ok(mean.iter().map(|m| m.tanh()).collect())
    }

    /// Log-density of an action strictly inside `(-1, 1)^d`.
    pub fn log_prob(&self, s: &[f64], a: &[f64]) -> Result<f64> {
        if a.len() != self.act_dim {
            return Err(Error::Shape(format!(
                "action has {} dimensions, expected {}",
                a.len(),
                self.act_dim
            )));
        }
        for &ai in a {
            if !(ai.abs() < 1.0) {
                return Err(Error::Domain(format!(
                    "action component {ai} lies outside the open interval (-1, 1)"
                )));
            }
        }
        let (mean, log_std) = self.heads(s)?;
        let half_ln_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
        let mut total = 0.0;
        for k in 0..self.act_dim {
            let xi = a[k].atanh();
            let z = (xi - mean[k]) / log_std[k].exp();
            total += -0.5 * z * z - log_std[k] - half_ln_2pi - (1.0 - a[k] * a[k]).ln();
        }
        Ok(total)
    }
}

/// Online policy with a Polyak-averaged target copy.
#[derive(Debug, Clone)]
pub struct PolicyPair {
    pub online: GaussianPolicy,
    pub target: GaussianPolicy,
    iota: f64,
}

impl PolicyPair {
    pub fn new(
        obs_dim: usize,
        act_dim: usize,
        hidden: usize,
        iota: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if !(iota > 0.0 && iota <= 1.0) {
            return Err(Error::Config(format!("soft-update rate must lie in (0, 1], got {iota}")));
        }
        let online = GaussianPolicy::new(obs_dim, act_dim, hidden, rng)?;
        let target = online.clone();
        Ok(PolicyPair { online, target, iota })
    }

    pub fn iota(&self) -> f64 {
        self.iota
    }

    /// Polyak blend the target toward the online policy.
    pub fn soft_update(&mut self) -> Result<()> {
        self.target.params.blend_from(&self.online.params, self.iota)
    }
}

/// Entropy-regularized policy loss `E[alpha * log pi - Q_r]` over a batch of
/// states with fixed reparameterization noise.
///
/// Both critics are evaluated frozen on the concatenated `(s, a)` input so
/// the gradient reaches the policy only through the sampled actions; their
/// elementwise quantile minimum is collapsed to `Q_r` per the risk objective
/// (expectation, distorted expectation, percentile, or mean minus scaled
/// standard deviation).
#[allow(clippy::too_many_arguments)]
pub fn policy_objective(
    tape: &mut Tape,
    policy: &GaussianPolicy,
    critics: [&dyn QuantileSource; 2],
    risk: &RiskSpec,
    fractions: &FractionSet,
    states: &Tensor,
    alpha: f64,
    noise: &Tensor,
) -> Result<(ReparamGraph, NodeId)> {
    let batch = states.rows();
    let n = fractions.count();
    let mids = Tensor::from_fn(batch, n, |_, i| fractions.midpoints()[i]);
    let weights = Tensor::from_fn(batch, n, |_, i| fractions.weights()[i]);
    policy_objective_rows(tape, policy, critics, risk, &mids, &weights, states, alpha, noise)
}

/// [`policy_objective`] with a separate fraction set per batch row, given as
/// `[batch, n]` midpoint and cell-width matrices (the proposal-network
/// scheme conditions fractions on the input).
#[allow(clippy::too_many_arguments)]
pub fn policy_objective_rows(
    tape: &mut Tape,
    policy: &GaussianPolicy,
    critics: [&dyn QuantileSource; 2],
    risk: &RiskSpec,
    mids: &Tensor,
    weights: &Tensor,
    states: &Tensor,
    alpha: f64,
    noise: &Tensor,
) -> Result<(ReparamGraph, NodeId)> {
    if !(alpha >= 0.0) {
        return Err(Error::Config(format!("entropy weight must be nonnegative, got {alpha}")));
    }
    risk.validate()?;
    let batch = states.rows();
    let n = mids.cols();
    if mids.rows() != batch || weights.shape() != mids.shape() {
        return Err(Error::Shape(format!(
            "fraction grids are {}x{} and {}x{}, expected {batch} rows each",
            mids.rows(),
            mids.cols(),
            weights.rows(),
            weights.cols()
        )));
    }
    let graph = policy.attach_sample(tape, states, noise, true)?;
    let input = tape.concat_cols(graph.states, graph.action)?;
    let q_r = match *risk {
        RiskSpec::Var { beta } => {
            // percentile readout: the continuous quantile curve at beta
            let taus = Tensor::filled(batch, 1, beta);
            let z1 = critics[0].attach_frozen(tape, input, &taus)?;
            let z2 = critics[1].attach_frozen(tape, input, &taus)?;
            tape.min(z1, z2)?
        }
        RiskSpec::MeanVariance { beta } => {
            let z1 = critics[0].attach_frozen(tape, input, mids)?;
            let z2 = critics[1].attach_frozen(tape, input, mids)?;
            let z = tape.min(z1, z2)?;
            let w = tape.leaf(weights.clone());
            let weighted = tape.mul(z, w)?;
            let mean = tape.row_sum(weighted)?;
            let spread_mean = tape.broadcast_col(mean, n)?;
            let dev = tape.sub(z, spread_mean)?;
            let dev_sq = tape.mul(dev, dev)?;
            let weighted_sq = tape.mul(dev_sq, w)?;
            let var = tape.row_sum(weighted_sq)?;
            // epsilon keeps the square root differentiable at zero spread
            let var = tape.add_scalar(var, 1e-12)?;
            let std = tape.sqrt(var)?;
            let penalty = tape.scale(std, -beta)?;
            tape.add(mean, penalty)?
        }
        RiskSpec::Neutral | RiskSpec::Distorted { .. } => {
            let w = match *risk {
                RiskSpec::Distorted { family, beta } => {
                    let mut distorted = weights.clone();
                    for b in 0..batch {
                        for i in 0..n {
                            let dg = distortion_dg(family, beta, mids.get(b, i))?;
                            distorted.set(b, i, dg * weights.get(b, i));
                        }
                    }
                    distorted
                }
                _ => weights.clone(),
            };
            let z1 = critics[0].attach_frozen(tape, input, mids)?;
            let z2 = critics[1].attach_frozen(tape, input, mids)?;
            let z = tape.min(z1, z2)?;
            let w = tape.leaf(w);
            let weighted = tape.mul(z, w)?;
            tape.row_sum(weighted)?
        }
    };
    let entropy_term = tape.scale(graph.log_prob, alpha)?;
    let gap = tape.sub(entropy_term, q_r)?;
    let loss = tape.mean_all(gap)?;
    Ok((graph, loss))
}

/// [`policy_objective`] with noise drawn here, for callers that do not need
/// to control the reparameterization draws.
#[allow(clippy::too_many_arguments)]
pub fn policy_objective_sampled(
    tape: &mut Tape,
    policy: &GaussianPolicy,
    critics: [&dyn QuantileSource; 2],
    risk: &RiskSpec,
    fractions: &FractionSet,
    states: &Tensor,
    alpha: f64,
    rng: &mut impl Rng,
) -> Result<(ReparamGraph, NodeId)> {
    let noise =
        Tensor::from_fn(states.rows(), policy.act_dim(), |_, _| rng.sample(StandardNormal));
    policy_objective(tape, policy, critics, risk, fractions, states, alpha, &noise)
}
