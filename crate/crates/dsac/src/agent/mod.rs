//! The learning agent: replay, the interleaved twin-critic/policy update,
//! the training loop, evaluation rollouts, and checkpointing.
//!
//! One update executes, in order: draw fraction grids, form the twin-min
//! distributional target from the target networks, take one gradient step on
//! each critic, soft-update both critic targets, take one gradient step on
//! the policy against the online critics under the configured risk
//! objective, and soft-update the policy target — two critic steps, one
//! actor step, three soft updates, every time. All randomness flows from
//! role-derived seeds, so a run is reproducible bit for bit.

pub mod checkpoint;
pub mod replay;
pub mod train;
pub mod update;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use replay::{ReplayBuffer, Transition};
pub use train::{evaluate, train, EvalSummary, TrainReport};
pub use update::{td_targets, DsacAgent, UpdateMetrics};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fractions::FractionScheme;
use crate::risk::RiskSpec;

/// Hyper-parameters of one training run.
#[derive(Debug, Clone)]
pub struct AgentConfig {
    pub gamma: f64,
    /// Entropy temperature.
    pub alpha: f64,
    /// Soft target update rate.
    pub iota: f64,
    pub batch: usize,
    /// Environment steps collected before the first gradient step.
    pub warmup: usize,
    pub lr: f64,
    /// Number of quantile fractions per grid.
    pub n_fractions: usize,
    /// Huber threshold of the quantile regression loss.
    pub kappa: f64,
    pub critic_hidden: usize,
    pub actor_hidden: usize,
    /// Width of the critic's cosine fraction embedding.
    pub embed: usize,
    pub buffer_capacity: usize,
    pub risk: RiskSpec,
    pub scheme: FractionScheme,
    pub eval_every: usize,
    pub eval_episodes: usize,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            gamma: 0.99,
            alpha: 0.2,
            iota: 0.005,
            batch: 256,
            warmup: 10_000,
            lr: 3e-4,
            n_fractions: 32,
            kappa: 1.0,
            critic_hidden: 256,
            actor_hidden: 256,
            embed: 64,
            buffer_capacity: 1_000_000,
            risk: RiskSpec::Neutral,
            scheme: FractionScheme::Random,
            eval_every: 1000,
            eval_episodes: 10,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::Config(format!("discount must be in (0, 1), got {}", self.gamma)));
        }
        if !(self.alpha >= 0.0) {
            return Err(Error::Config(format!(
                "entropy weight must be nonnegative, got {}",
                self.alpha
            )));
        }
        if !(self.iota > 0.0 && self.iota <= 1.0) {
            return Err(Error::Config(format!(
                "soft-update rate must lie in (0, 1], got {}",
                self.iota
            )));
        }
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(Error::Config(format!(
                "learning rate must be finite and nonnegative, got {}",
                self.lr
            )));
        }
        if !(self.kappa > 0.0) {
            return Err(Error::Config(format!(
                "Huber threshold must be positive, got {}",
                self.kappa
            )));
        }
        for (v, what) in [
            (self.batch, "batch size"),
            (self.n_fractions, "fraction count"),
            (self.critic_hidden, "critic width"),
            (self.actor_hidden, "actor width"),
            (self.embed, "embedding width"),
            (self.buffer_capacity, "replay capacity"),
            (self.eval_every, "evaluation cadence"),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{what} must be at least 1")));
            }
        }
        if self.buffer_capacity < self.batch {
            return Err(Error::Config(format!(
                "replay capacity {} cannot hold one batch of {}",
                self.buffer_capacity, self.batch
            )));
        }
        self.risk.validate()
    }
}

/// Derive an independent stream seed for a named role from a master seed.
pub fn derive_seed(master: u64, role: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(master.to_le_bytes());
    hasher.update(role.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest is long enough"))
}
