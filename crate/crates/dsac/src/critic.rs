//! Fraction-conditioned quantile critics and their regression objective.
//!
//! A [`QuantileCritic`] maps a state-action pair and a fraction `tau` to the
//! `tau` quantile of the soft return distribution. The architecture is the
//! implicit-quantile one: a dense trunk over `(s, a)`, a cosine embedding of
//! `tau` passed through a sigmoid dense layer, a Hadamard merge, and a
//! layer-normalized hidden layer before the scalar head. Twin critics with
//! Polyak-averaged target copies ([`CriticPair`]) provide the conservative
//! double-learning TD target; the loss is the fraction-weighted Huber
//! quantile regression over all (target fraction, online fraction) pairs.

use rand::Rng;

use crate::error::{Error, Result};
use crate::fractions::FractionSet;
use crate::neuro::tape::{huber_quantile, huber_quantile_deriv};
use crate::neuro::{AdamState, NodeId, ParamVec, Tape, Tensor};
use crate::risk::QuantileEstimate;

/// Shape of a quantile critic network.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CriticConfig {
    pub obs_dim: usize,
    pub act_dim: usize,
    /// Width of the trunk, merge, and hidden layers.
    pub hidden: usize,
    /// Number of cosine features embedding the fraction.
    pub embed: usize,
}

impl CriticConfig {
    pub fn validate(&self) -> Result<()> {
        for (dim, what) in [
            (self.obs_dim, "observation dimension"),
            (self.act_dim, "action dimension"),
            (self.hidden, "hidden width"),
            (self.embed, "embedding size"),
        ] {
            if dim == 0 {
                return Err(Error::Config(format!("critic {what} must be positive")));
            }
        }
        Ok(())
    }

    /// Width of the concatenated `(s, a)` input.
    pub fn input_dim(&self) -> usize {
        self.obs_dim + self.act_dim
    }
}

/// Node handles for one critic forward pass on a caller-owned tape.
pub struct CriticGraph {
    pub param_nodes: Vec<NodeId>,
    /// `[batch, n]` quantile values, one column per requested fraction.
    pub z: NodeId,
}

/// Quantile value network `Z_tau(s, a)`.
#[derive(Debug, Clone)]
pub struct QuantileCritic {
    pub params: ParamVec,
    cfg: CriticConfig,
}

impl QuantileCritic {
    pub fn new(cfg: CriticConfig, prefix: &str, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        let (input, h, e) = (cfg.input_dim(), cfg.hidden, cfg.embed);
        let mut params = ParamVec::new();
        params.add(format!("{prefix}.psi_w"), Tensor::fan_in_init(input, h, input, rng));
        params.add(format!("{prefix}.psi_b"), Tensor::fan_in_init(1, h, input, rng));
        params.add(format!("{prefix}.phi_w"), Tensor::fan_in_init(e, h, e, rng));
        params.add(format!("{prefix}.phi_b"), Tensor::fan_in_init(1, h, e, rng));
        params.add(format!("{prefix}.merge_w"), Tensor::fan_in_init(h, h, h, rng));
        params.add(format!("{prefix}.merge_b"), Tensor::fan_in_init(1, h, h, rng));
        params.add(format!("{prefix}.ln_gain"), Tensor::filled(1, h, 1.0));
        params.add(format!("{prefix}.ln_bias"), Tensor::zeros(1, h));
        params.add(format!("{prefix}.head_w"), Tensor::fan_in_init(h, 1, h, rng));
        params.add(format!("{prefix}.head_b"), Tensor::fan_in_init(1, 1, h, rng));
        Ok(QuantileCritic { params, cfg })
    }

    pub fn config(&self) -> &CriticConfig {
        &self.cfg
    }

    /// Cosine features `cos(k * pi * tau)`, `k = 1..=embed`, one row per
    /// (sample, fraction) pair in sample-major order.
    fn cosine_features(&self, taus: &Tensor) -> Result<Tensor> {
        for &t in taus.data() {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::Domain(format!("fraction {t} lies outside [0, 1]")));
            }
        }
        let (rows, n) = taus.shape();
        let e = self.cfg.embed;
        Ok(Tensor::from_fn(rows * n, e, |rn, k| {
            let tau = taus.get(rn / n, rn % n);
            ((k + 1) as f64 * std::f64::consts::PI * tau).cos()
        }))
    }

    /// Build the forward graph for a `[batch, obs+act]` input node already on
    /// the tape, evaluated at per-row fractions `taus` (`[batch, n]`). With
    /// `trainable` the parameters are bound as differentiable leaves;
    /// gradients also flow into `input` either way, so an actor can
    /// backpropagate through its sampled actions while the critic is frozen.
    pub fn attach(
        &self,
        tape: &mut Tape,
        input: NodeId,
        taus: &Tensor,
        trainable: bool,
    ) -> Result<CriticGraph> {
        let (batch, cols) = tape.value(input).shape();
        if cols != self.cfg.input_dim() {
            return Err(Error::Shape(format!(
                "critic expects {} input columns, got {cols}",
                self.cfg.input_dim()
            )));
        }
        if taus.rows() != batch || taus.cols() == 0 {
            return Err(Error::Shape(format!(
                "fraction matrix is {}x{}, expected {batch} rows and at least one column",
                taus.rows(),
                taus.cols()
            )));
        }
        // rectification maps NaN to 0, so poisoned values must be caught here
        for p in self.params.iter() {
            if !p.value.all_finite() {
                return Err(Error::NonFinite(format!(
                    "critic parameter '{}' is not finite",
                    p.name
                )));
            }
        }
        if !tape.value(input).all_finite() {
            return Err(Error::NonFinite("critic input contains a non-finite value".into()));
        }
        let n = taus.cols();
        let p = if trainable { self.params.bind(tape) } else { self.params.bind_frozen(tape) };
        let trunk = tape.dense(input, p[0], p[1])?;
        let trunk = tape.relu(trunk)?;
        let trunk = tape.repeat_rows(trunk, n)?;
        let feats = tape.leaf(self.cosine_features(taus)?);
        let embed = tape.dense(feats, p[2], p[3])?;
        let embed = tape.sigmoid(embed)?;
        let merged = tape.mul(trunk, embed)?;
        let hidden = tape.dense(merged, p[4], p[5])?;
        let hidden = tape.layer_norm(hidden, p[6], p[7], 1e-5)?;
        let hidden = tape.relu(hidden)?;
        let out = tape.dense(hidden, p[8], p[9])?;
        let z = tape.reshape(out, batch, n)?;
        if !tape.value(z).all_finite() {
            return Err(Error::NonFinite(
                "quantile critic emitted a non-finite value (inspect inputs and parameters)"
                    .into(),
            ));
        }
        Ok(CriticGraph { param_nodes: p, z })
    }

    /// Quantile values for one state-action pair at several fractions.
    pub fn quantile_values(&self, s: &[f64], a: &[f64], taus: &[f64]) -> Result<Vec<f64>> {
        if s.len() != self.cfg.obs_dim || a.len() != self.cfg.act_dim {
            return Err(Error::Shape(format!(
                "critic expects {}+{} inputs, got {}+{}",
                self.cfg.obs_dim,
                self.cfg.act_dim,
                s.len(),
                a.len()
            )));
        }
        let mut joined = Vec::with_capacity(s.len() + a.len());
        joined.extend_from_slice(s);
        joined.extend_from_slice(a);
        let mut tape = Tape::new();
        let input = tape.leaf(Tensor::row(&joined));
        let graph = self.attach(&mut tape, input, &Tensor::row(taus), false)?;
        Ok(tape.value(graph.z).row_slice(0).to_vec())
    }

    /// Single-fraction convenience readout.
    pub fn quantile_value(&self, s: &[f64], a: &[f64], tau: f64) -> Result<f64> {
        Ok(self.quantile_values(s, a, &[tau])?[0])
    }

    /// The critic's return distribution at the midpoints of a fraction set.
    pub fn estimate(&self, s: &[f64], a: &[f64], fractions: &FractionSet) -> Result<QuantileEstimate> {
        let values = self.quantile_values(s, a, fractions.midpoints())?;
        QuantileEstimate::new(fractions.clone(), values)
    }
}

/// A differentiable batch of quantile values from frozen parameters; lets
/// scripted value functions stand in for trained critics in policy tests.
pub trait QuantileSource {
    /// `[batch, n]` quantile values at per-row fractions for an input node
    /// already on the tape; must not register trainable leaves.
    fn attach_frozen(&self, tape: &mut Tape, input: NodeId, taus: &Tensor) -> Result<NodeId>;
}

impl QuantileSource for QuantileCritic {
    fn attach_frozen(&self, tape: &mut Tape, input: NodeId, taus: &Tensor) -> Result<NodeId> {
        Ok(self.attach(tape, input, taus, false)?.z)
    }
}

/// Twin online critics with Polyak-averaged target copies.
#[derive(Debug, Clone)]
pub struct CriticPair {
    pub online: [QuantileCritic; 2],
    pub target: [QuantileCritic; 2],
    iota: f64,
}

impl CriticPair {
    /// Fresh twins; targets start as exact copies of the online networks.
    pub fn new(cfg: CriticConfig, iota: f64, rng: &mut impl Rng) -> Result<Self> {
        if !(iota > 0.0 && iota <= 1.0) {
            return Err(Error::Config(format!("soft-update rate must lie in (0, 1], got {iota}")));
        }
        let c1 = QuantileCritic::new(cfg, "critic1", rng)?;
        let c2 = QuantileCritic::new(cfg, "critic2", rng)?;
        let target = [c1.clone(), c2.clone()];
        Ok(CriticPair { online: [c1, c2], target, iota })
    }

    pub fn iota(&self) -> f64 {
        self.iota
    }

    /// Polyak blend both targets toward their online twins.
    pub fn soft_update(&mut self) -> Result<()> {
        for k in 0..2 {
            self.target[k].params.blend_from(&self.online[k].params, self.iota)?;
        }
        Ok(())
    }
}

/// Pairwise TD errors for one critic: entry `(i, j)` is the error between
/// target fraction `i` and online fraction `j`.
#[derive(Debug, Clone)]
pub struct TDMatrix {
    pub delta: Tensor,
    pub kappa: f64,
}

impl TDMatrix {
    pub fn new(delta: Tensor, kappa: f64) -> Result<Self> {
        if !(kappa > 0.0) || !kappa.is_finite() {
            return Err(Error::Config(format!("Huber threshold must be positive, got {kappa}")));
        }
        if !delta.all_finite() {
            return Err(Error::NonFinite("TD matrix contains a non-finite error".into()));
        }
        Ok(TDMatrix { delta, kappa })
    }
}

/// Pairwise soft TD errors for one transition under both online critics.
///
/// The bootstrap is the elementwise minimum of the two target critics at
/// `(s', a')` plus the entropy bonus `-alpha * log pi(a'|s')`; the caller
/// draws `a'` from the target policy. Terminal transitions drop the
/// bootstrap entirely, leaving `delta = r - Z`.
#[allow(clippy::too_many_arguments)]
pub fn pairwise_td(
    pair: &CriticPair,
    fractions: &FractionSet,
    s: &[f64],
    a: &[f64],
    r: f64,
    s_next: &[f64],
    done: bool,
    next_action: &[f64],
    next_log_prob: f64,
    alpha: f64,
    gamma: f64,
    kappa: f64,
) -> Result<[TDMatrix; 2]> {
    if !(alpha >= 0.0) {
        return Err(Error::Config(format!("entropy weight must be nonnegative, got {alpha}")));
    }
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::Config(format!("discount must lie in [0, 1), got {gamma}")));
    }
    let mids = fractions.midpoints();
    let n = fractions.count();
    let targets: Vec<f64> = if done {
        vec![r; n]
    } else {
        let z1 = pair.target[0].quantile_values(s_next, next_action, mids)?;
        let z2 = pair.target[1].quantile_values(s_next, next_action, mids)?;
        z1.iter()
            .zip(&z2)
            .map(|(&y1, &y2)| r + gamma * (y1.min(y2) - alpha * next_log_prob))
            .collect()
    };
    let mut out = Vec::with_capacity(2);
    for critic in &pair.online {
        let z = critic.quantile_values(s, a, mids)?;
        let delta = Tensor::from_fn(n, n, |i, j| targets[i] - z[j]);
        out.push(TDMatrix::new(delta, kappa)?);
    }
    Ok([out.remove(0), out.remove(0)])
}

/// Asymmetric Huber term `rho^kappa_tau(delta)`: the quantile check weight
/// `|tau - 1[delta < 0]|` applied to the Huber cost `L_kappa(delta) / kappa`.
pub fn huber_quantile_loss(delta: f64, tau: f64, kappa: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::Config(format!("fraction must lie in [0, 1], got {tau}")));
    }
    if !(kappa > 0.0) {
        return Err(Error::Config(format!("Huber threshold must be positive, got {kappa}")));
    }
    Ok(huber_quantile(delta, tau, kappa))
}

/// Scalar regression objective for one TD matrix: target-fraction cell
/// widths weight the rows, the Huber check at the online midpoints scores
/// the columns, and the total is averaged over the online axis.
pub fn critic_objective(tdm: &TDMatrix, fractions: &FractionSet) -> Result<f64> {
    let n = fractions.count();
    if tdm.delta.shape() != (n, n) {
        return Err(Error::Shape(format!(
            "TD matrix is {}x{} but the fraction set has {n} cells",
            tdm.delta.rows(),
            tdm.delta.cols()
        )));
    }
    let weights = fractions.weights();
    let mids = fractions.midpoints();
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            total += weights[i] * huber_quantile(tdm.delta.get(i, j), mids[j], tdm.kappa);
        }
    }
    Ok(total / n as f64)
}

/// Differentiable batch form of the critic objective. `targets` holds the
/// per-sample bootstrap values `r + gamma * (y_i - alpha * log pi)` (already
/// masked on terminal transitions) as constants; the loss equals the batch
/// mean of [`critic_objective`] over the per-sample TD matrices, and its
/// gradient reaches only the online critic parameters.
pub fn critic_objective_graph(
    tape: &mut Tape,
    critic: &QuantileCritic,
    inputs: &Tensor,
    fractions: &FractionSet,
    targets: &Tensor,
    kappa: f64,
) -> Result<(CriticGraph, NodeId)> {
    let n = fractions.count();
    let batch = inputs.rows();
    let mids = Tensor::from_fn(batch, n, |_, i| fractions.midpoints()[i]);
    let weights = Tensor::from_fn(batch, n, |_, i| fractions.weights()[i]);
    critic_objective_graph_rows(tape, critic, inputs, &mids, &weights, targets, kappa)
}

/// [`critic_objective_graph`] with a separate fraction set per batch row:
/// `mids` and `weights` give each row its own quantile midpoints and cell
/// widths (the proposal-network scheme conditions fractions on the input).
pub fn critic_objective_graph_rows(
    tape: &mut Tape,
    critic: &QuantileCritic,
    inputs: &Tensor,
    mids: &Tensor,
    weights: &Tensor,
    targets: &Tensor,
    kappa: f64,
) -> Result<(CriticGraph, NodeId)> {
    let batch = inputs.rows();
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
    if targets.shape() != (batch, n) {
        return Err(Error::Shape(format!(
            "targets are {}x{}, expected {batch}x{n}",
            targets.rows(),
            targets.cols()
        )));
    }
    let input_node = tape.leaf(inputs.clone());
    let graph = critic.attach(tape, input_node, mids, true)?;
    let y = tape.leaf(targets.clone());
    let delta = tape.pairwise_diff(y, graph.z)?;
    let check_taus = Tensor::from_fn(batch, n * n, |b, c| mids.get(b, c % n));
    let rho = tape.quantile_huber(delta, check_taus, kappa)?;
    let cell_weights =
        tape.leaf(Tensor::from_fn(batch, n * n, |b, c| weights.get(b, c / n) / n as f64));
    let weighted = tape.mul(rho, cell_weights)?;
    let per_sample = tape.row_sum(weighted)?;
    let loss = tape.mean_all(per_sample)?;
    Ok((graph, loss))
}

/// Fit a state-free quantile table to samples of a one-dimensional law by
/// stochastic Huber quantile regression; returns the fitted quantiles at the
/// fraction midpoints.
pub fn fit_known_distribution(
    samples: &[f64],
    fractions: &FractionSet,
    kappa: f64,
    rng: &mut impl Rng,
) -> Result<QuantileEstimate> {
    if samples.len() < 10_000 {
        return Err(Error::Config(format!(
            "quantile fitting needs at least 10000 samples, got {}",
            samples.len()
        )));
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("sample set contains a non-finite value".into()));
    }
    if !(kappa > 0.0) {
        return Err(Error::Config(format!("Huber threshold must be positive, got {kappa}")));
    }
    let n = fractions.count();
    let mids = fractions.midpoints().to_vec();
    let mean = samples.iter().sum::<f64>() / samples.len() as f64;
    let mut params = ParamVec::new();
    params.add("fit.quantiles", Tensor::filled(1, n, mean));
    let mut opt = AdamState::new(5e-2);
    const STEPS: usize = 4000;
    const BATCH: usize = 512;
    for step in 0..STEPS {
        // anneal toward a fine step so the table settles at the minimizer
        if step == STEPS / 2 {
            opt.lr = 5e-3;
        } else if step == STEPS * 3 / 4 {
            opt.lr = 5e-4;
        }
        let q = params.get(0).value.data().to_vec();
        let mut grad = vec![0.0; n];
        let mut loss = 0.0;
        for _ in 0..BATCH {
            let x = samples[rng.gen_range(0..samples.len())];
            for j in 0..n {
                let delta = x - q[j];
                loss += huber_quantile(delta, mids[j], kappa);
                grad[j] -= huber_quantile_deriv(delta, mids[j], kappa);
            }
        }
        let scale = 1.0 / (BATCH * n) as f64;
        if !(loss * scale).is_finite() {
            return Err(Error::NonFinite(format!("quantile fit diverged at step {step}")));
        }
        for (g, acc) in params.get_mut(0).grad.data_mut().iter_mut().zip(&grad) {
            *g = acc * scale;
        }
        opt.step(&mut params)?;
    }
    QuantileEstimate::new(fractions.clone(), params.get(0).value.data().to_vec())
}
