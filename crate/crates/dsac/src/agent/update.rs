//! The interleaved twin-critic / policy update.
//!
//! Per update: one fresh set of fraction grids feeds both the target (i) and
//! online (j) axes of the quantile regression; the target is the twin
//! minimum of the frozen target critics at the target policy's next action,
//! entropy-corrected and masked on terminal transitions; each online critic
//! takes one optimizer step against that shared target; both critic targets
//! soft-update; the policy takes one reparameterized step against the online
//! critics under the configured risk objective; the policy target
//! soft-updates. With the proposal-network scheme, the fraction network
//! additionally takes a small step along the 1-Wasserstein fraction
//! gradient.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{derive_seed, AgentConfig, Transition};
use crate::actor::{policy_objective_rows, GaussianPolicy, PolicyPair};
use crate::critic::{critic_objective_graph_rows, CriticConfig, CriticPair, QuantileSource};
use crate::error::{Error, Result};
use crate::fractions::{
    fix_fractions, fqf_fraction_grads, random_fractions, FractionProposalNet, FractionScheme,
};
use crate::neuro::{AdamState, Tape, Tensor};

/// Fraction-proposal learning rate (fixed; much smaller than the main rate).
const PROPOSAL_LR: f64 = 1e-5;

/// Scalars measured during one update, before the optimizer steps applied.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateMetrics {
    pub critic_loss: [f64; 2],
    pub actor_loss: f64,
    /// Monte-Carlo estimate of the policy entropy on the update batch.
    pub entropy_estimate: f64,
}

/// All learnable state of one agent.
pub struct DsacAgent {
    pub cfg: AgentConfig,
    pub obs_dim: usize,
    pub act_dim: usize,
    pub critics: CriticPair,
    pub policy: PolicyPair,
    pub proposal: Option<FractionProposalNet>,
    critic_opt: [AdamState; 2],
    actor_opt: AdamState,
    proposal_opt: AdamState,
    rng: ChaCha8Rng,
    updates_done: u64,
}

impl DsacAgent {
    pub fn new(obs_dim: usize, act_dim: usize, cfg: AgentConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        if obs_dim == 0 || act_dim == 0 {
            return Err(Error::Config("agent dimensions must be positive".into()));
        }
        let critic_cfg =
            CriticConfig { obs_dim, act_dim, hidden: cfg.critic_hidden, embed: cfg.embed };
        let mut init_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "critic-init"));
        let critics = CriticPair::new(critic_cfg, cfg.iota, &mut init_rng)?;
        let mut init_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "actor-init"));
        let policy = PolicyPair::new(obs_dim, act_dim, cfg.actor_hidden, cfg.iota, &mut init_rng)?;
        let proposal = if cfg.scheme == FractionScheme::Net {
            let mut init_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "proposal-init"));
            Some(FractionProposalNet::new(obs_dim + act_dim, cfg.n_fractions, &mut init_rng)?)
        } else {
            None
        };
        Ok(DsacAgent {
            critic_opt: [AdamState::new(cfg.lr), AdamState::new(cfg.lr)],
            actor_opt: AdamState::new(cfg.lr),
            proposal_opt: AdamState::new(PROPOSAL_LR),
            rng: ChaCha8Rng::seed_from_u64(derive_seed(seed, "update-draws")),
            cfg,
            obs_dim,
            act_dim,
            critics,
            policy,
            proposal,
            updates_done: 0,
        })
    }

    pub fn updates_done(&self) -> u64 {
        self.updates_done
    }

    /// Midpoint and cell-width grids for one batch, per the configured
    /// scheme: one shared grid broadcast across rows, or per-row grids from
    /// the proposal network on the batched `(s, a)` inputs.
    fn fraction_grids(&mut self, inputs: &Tensor) -> Result<(Tensor, Tensor)> {
        let batch = inputs.rows();
        let n = self.cfg.n_fractions;
        let shared = match self.cfg.scheme {
            FractionScheme::Fix => Some(fix_fractions(n)?),
            FractionScheme::Random => Some(random_fractions(n, &mut self.rng)?),
            FractionScheme::Net => None,
        };
        if let Some(f) = shared {
            let mids = Tensor::from_fn(batch, n, |_, i| f.midpoints()[i]);
            let weights = Tensor::from_fn(batch, n, |_, i| f.weights()[i]);
            return Ok((mids, weights));
        }
        let net = self.proposal.as_ref().expect("net scheme constructs a proposal network");
        let mut mids = Tensor::zeros(batch, n);
        let mut weights = Tensor::zeros(batch, n);
        for b in 0..batch {
            let f = net.fractions(inputs.row_slice(b))?;
            for i in 0..n {
                mids.set(b, i, f.midpoints()[i]);
                weights.set(b, i, f.weights()[i]);
            }
        }
        Ok((mids, weights))
    }

    /// One full learning update on a sampled batch.
    pub fn update(&mut self, batch: &[&Transition]) -> Result<UpdateMetrics> {
        if batch.is_empty() {
            return Err(Error::Config("update batch is empty".into()));
        }
        for t in batch {
            t.validate()?;
            if t.s.len() != self.obs_dim || t.a.len() != self.act_dim {
                return Err(Error::Shape(format!(
                    "transition dimensions {}x{} do not match the agent's {}x{}",
                    t.s.len(),
                    t.a.len(),
                    self.obs_dim,
                    self.act_dim
                )));
            }
        }
        let b = batch.len();
        let states = Tensor::from_fn(b, self.obs_dim, |i, j| batch[i].s[j]);
        let rewards: Vec<f64> = batch.iter().map(|t| t.r).collect();
        let next_states = Tensor::from_fn(b, self.obs_dim, |i, j| batch[i].s_next[j]);
        let done: Vec<bool> = batch.iter().map(|t| t.done).collect();
        let inputs = Tensor::from_fn(b, self.obs_dim + self.act_dim, |i, j| {
            if j < self.obs_dim {
                batch[i].s[j]
            } else {
                batch[i].a[j - self.obs_dim]
            }
        });
        let (mids, weights) = self.fraction_grids(&inputs)?;

        let next_noise =
            Tensor::from_fn(b, self.act_dim, |_, _| self.rng.sample(StandardNormal));
        let targets = td_targets(
            &self.critics,
            &self.policy.target,
            &mids,
            &next_states,
            &rewards,
            &done,
            self.cfg.alpha,
            self.cfg.gamma,
            &next_noise,
        )?;

        let mut critic_loss = [0.0; 2];
        for k in 0..2 {
            let mut tape = Tape::new();
            let (graph, loss) = critic_objective_graph_rows(
                &mut tape,
                &self.critics.online[k],
                &inputs,
                &mids,
                &weights,
                &targets,
                self.cfg.kappa,
            )?;
            critic_loss[k] = tape.value(loss).item()?;
            if !critic_loss[k].is_finite() {
                return Err(Error::NonFinite(format!(
                    "critic {} loss became non-finite at update {} \
                     (inspect replay rewards and the learning rate)",
                    k + 1,
                    self.updates_done
                )));
            }
            tape.backward(loss)?;
            self.critics.online[k].params.zero_grads();
            self.critics.online[k].params.absorb_grads(&tape, &graph.param_nodes);
            self.critic_opt[k].step(&mut self.critics.online[k].params)?;
        }
        self.critics.soft_update()?;

        let actor_noise =
            Tensor::from_fn(b, self.act_dim, |_, _| self.rng.sample(StandardNormal));
        let mut tape = Tape::new();
        let (graph, loss) = policy_objective_rows(
            &mut tape,
            &self.policy.online,
            [
                &self.critics.online[0] as &dyn QuantileSource,
                &self.critics.online[1] as &dyn QuantileSource,
            ],
            &self.cfg.risk,
            &mids,
            &weights,
            &states,
            self.cfg.alpha,
            &actor_noise,
        )?;
        let actor_loss = tape.value(loss).item()?;
        if !actor_loss.is_finite() {
            return Err(Error::NonFinite(format!(
                "policy loss became non-finite at update {} \
                 (inspect critic outputs and the learning rate)",
                self.updates_done
            )));
        }
        let lp = tape.value(graph.log_prob);
        let entropy_estimate = -lp.data().iter().sum::<f64>() / b as f64;
        tape.backward(loss)?;
        self.policy.online.params.zero_grads();
        self.policy.online.params.absorb_grads(&tape, &graph.param_nodes);
        self.actor_opt.step(&mut self.policy.online.params)?;
        self.policy.soft_update()?;

        if self.cfg.scheme == FractionScheme::Net {
            self.update_proposal(&inputs)?;
        }
        self.updates_done += 1;
        Ok(UpdateMetrics { critic_loss, actor_loss, entropy_estimate })
    }

    /// One 1-Wasserstein step of the fraction proposal network: evaluate the
    /// twin-min online critic at the current interior fractions and cell
    /// midpoints, form the per-fraction gradient, and push it through the
    /// cumulative softmax with a surrogate dot product.
    fn update_proposal(&mut self, inputs: &Tensor) -> Result<()> {
        let net = self.proposal.as_ref().expect("called only under the net scheme");
        let batch = inputs.rows();
        let n = self.cfg.n_fractions;
        if n < 2 {
            return Ok(()); // a single cell has no interior fraction to move
        }
        let mut sets = Vec::with_capacity(batch);
        for bi in 0..batch {
            sets.push(net.fractions(inputs.row_slice(bi))?);
        }
        let interior = Tensor::from_fn(batch, n - 1, |bi, k| sets[bi].taus()[k + 1]);
        let mids = Tensor::from_fn(batch, n, |bi, k| sets[bi].midpoints()[k]);
        let mut tape = Tape::new();
        let input_node = tape.leaf(inputs.clone());
        let zi1 = self.critics.online[0].attach(&mut tape, input_node, &interior, false)?.z;
        let zi2 = self.critics.online[1].attach(&mut tape, input_node, &interior, false)?.z;
        let z_interior = tape.min(zi1, zi2)?;
        let zm1 = self.critics.online[0].attach(&mut tape, input_node, &mids, false)?.z;
        let zm2 = self.critics.online[1].attach(&mut tape, input_node, &mids, false)?.z;
        let z_mid = tape.min(zm1, zm2)?;
        let z_interior = tape.value(z_interior).clone();
        let z_mid = tape.value(z_mid).clone();
        // gradient with respect to each produced fraction; the last column
        // of the cumulative softmax is pinned at 1 and carries none
        let mut grad = Tensor::zeros(batch, n);
        for bi in 0..batch {
            let g = fqf_fraction_grads(z_interior.row_slice(bi), z_mid.row_slice(bi))?;
            for (k, gk) in g.into_iter().enumerate() {
                grad.set(bi, k, gk / batch as f64);
            }
        }
        let mut tape = Tape::new();
        let pg = net.build(&mut tape, inputs)?;
        let g_leaf = tape.leaf(grad);
        let dot = tape.mul(pg.cumsum, g_leaf)?;
        let surrogate = tape.sum_all(dot)?;
        tape.backward(surrogate)?;
        let net = self.proposal.as_mut().expect("checked above");
        net.params.zero_grads();
        net.params.absorb_grads(&tape, &pg.param_nodes);
        self.proposal_opt.step(&mut net.params)?;
        Ok(())
    }
}

/// The per-fraction regression targets `r + gamma * (twin-min target critic
/// at the next action - alpha * target-policy log-density)`, with the
/// bootstrap dropped on terminal transitions.
#[allow(clippy::too_many_arguments)]
pub fn td_targets(
    critics: &CriticPair,
    target_policy: &GaussianPolicy,
    mids: &Tensor,
    next_states: &Tensor,
    rewards: &[f64],
    done: &[bool],
    alpha: f64,
    gamma: f64,
    noise: &Tensor,
) -> Result<Tensor> {
    let b = next_states.rows();
    if rewards.len() != b || done.len() != b || mids.rows() != b {
        return Err(Error::Shape(format!(
            "target batch disagrees: {} states, {} rewards, {} done flags, {} grids",
            b,
            rewards.len(),
            done.len(),
            mids.rows()
        )));
    }
    if !(alpha >= 0.0) {
        return Err(Error::Config(format!("entropy weight must be nonnegative, got {alpha}")));
    }
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::Config(format!("discount must be in [0, 1), got {gamma}")));
    }
    let n = mids.cols();
    let mut tape = Tape::new();
    let g = target_policy.attach_sample(&mut tape, next_states, noise, false)?;
    let next_actions = tape.value(g.action).clone();
    let log_prob = tape.value(g.log_prob).clone();
    let next_inputs = Tensor::from_fn(b, next_states.cols() + next_actions.cols(), |i, j| {
        if j < next_states.cols() {
            next_states.get(i, j)
        } else {
            next_actions.get(i, j - next_states.cols())
        }
    });
    let input_node = tape.leaf(next_inputs);
    let z1 = critics.target[0].attach(&mut tape, input_node, mids, false)?.z;
    let z2 = critics.target[1].attach(&mut tape, input_node, mids, false)?.z;
    let zmin = tape.min(z1, z2)?;
    let zmin = tape.value(zmin);
    Ok(Tensor::from_fn(b, n, |i, j| {
        if done[i] {
            rewards[i]
        } else {
            rewards[i] + gamma * (zmin.get(i, j) - alpha * log_prob.get(i, 0))
        }
    }))
}
