//! A bimodal task where the optimal policy depends on risk attitude.
//!
//! Each step the agent picks a scalar action in `[-1, 1]`. Nonpositive
//! actions take a safe branch paying a tight Gaussian reward; positive
//! actions commit (proportionally to the action) to a risky branch whose
//! reward has a higher mean but a wide spread, and which can drop the agent
//! into an absorbing failure state with a large penalty. The expected return
//! favors full commitment, while lower-tail objectives favor the safe
//! branch, so risk-neutral and risk-averse optima genuinely differ. Because
//! the reward depends only on the action, the return distribution of any
//! constant action is computable by exact convolution, giving an
//! enumeration oracle for both optima.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{Env, EnvSpec, StepResult};
use crate::error::{Error, Result};
use crate::oracle::EmpiricalDist;
use crate::risk::std_normal_quantile;

#[derive(Debug, Clone)]
pub struct RiskyPathParams {
    pub safe_mean: f64,
    pub safe_std: f64,
    /// Reward mean of the risky branch at full commitment (action +1).
    pub risky_mean: f64,
    pub risky_std: f64,
    /// Failure probability per step at full commitment; scales linearly
    /// with the action.
    pub failure_prob: f64,
    pub failure_reward: f64,
    pub horizon: usize,
}

impl Default for RiskyPathParams {
    fn default() -> Self {
        RiskyPathParams {
            safe_mean: 0.5,
            safe_std: 0.05,
            risky_mean: 1.2,
            risky_std: 1.0,
            failure_prob: 0.05,
            failure_reward: -2.0,
            horizon: 16,
        }
    }
}

impl RiskyPathParams {
    pub fn validate(&self) -> Result<()> {
        for (v, what) in [
            (self.safe_mean, "safe mean"),
            (self.risky_mean, "risky mean"),
            (self.failure_reward, "failure reward"),
        ] {
            if !v.is_finite() {
                return Err(Error::Config(format!("{what} must be finite, got {v}")));
            }
        }
        for (v, what) in [(self.safe_std, "safe std"), (self.risky_std, "risky std")] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{what} must be positive, got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&self.failure_prob) {
            return Err(Error::Config(format!(
                "failure probability must lie in [0, 1], got {}",
                self.failure_prob
            )));
        }
        if self.horizon == 0 {
            return Err(Error::Config("horizon must be at least 1".into()));
        }
        Ok(())
    }

    /// Parameter combinations that are legal but defeat the point of the
    /// task.
    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.risky_mean <= self.safe_mean {
            out.push(format!(
                "risky branch mean {} does not exceed the safe mean {}; \
                 the risk trade-off degenerates",
                self.risky_mean, self.safe_mean
            ));
        }
        out
    }
}

pub struct RiskyPathEnv {
    params: RiskyPathParams,
    spec: EnvSpec,
    warnings: Vec<String>,
    t: usize,
    live: bool,
    rng: ChaCha8Rng,
}

impl RiskyPathEnv {
    pub fn new(params: RiskyPathParams) -> Result<Self> {
        params.validate()?;
        let warnings = params.warnings();
        let spec = EnvSpec::new(
            1,
            1,
            vec![-1.0],
            vec![1.0],
            params.horizon,
            "safe branch pays a tight Gaussian; the risky branch pays more \
             on average but can end the episode with a penalty",
            Some("entering the absorbing failure state".into()),
        )?;
        Ok(RiskyPathEnv { params, spec, warnings, t: 0, live: false, rng: ChaCha8Rng::seed_from_u64(0) })
    }

    pub fn params(&self) -> &RiskyPathParams {
        &self.params
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    fn observe(&self) -> Vec<f64> {
        vec![self.t as f64 / self.params.horizon as f64]
    }
}

impl Env for RiskyPathEnv {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.t = 0;
        self.live = true;
        self.observe()
    }

    fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        if !self.live {
            return Err(Error::State("episode is over or was never started; reset first".into()));
        }
        if action.len() != 1 {
            return Err(Error::Shape(format!("task takes 1 action, got {}", action.len())));
        }
        if !action[0].is_finite() {
            return Err(Error::NonFinite("action is not finite".into()));
        }
        let clipped = action[0].abs() > 1.0;
        let a = action[0].clamp(-1.0, 1.0);
        let p = &self.params;
        let (reward, failed) = if a <= 0.0 {
            let eps: f64 = self.rng.sample(StandardNormal);
            (p.safe_mean + p.safe_std * eps, false)
        } else if self.rng.gen_range(0.0..1.0) < a * p.failure_prob {
            (p.failure_reward, true)
        } else {
            let eps: f64 = self.rng.sample(StandardNormal);
            (a * p.risky_mean + p.risky_std * eps, false)
        };
        self.t += 1;
        let truncated = !failed && self.t >= p.horizon;
        if failed || truncated {
            self.live = false;
        }
        Ok(StepResult {
            obs: self.observe(),
            reward,
            terminal: failed,
            truncated,
            failed,
            clipped,
        })
    }
}

/// Equal-weight quantization of a Gaussian at inverse-CDF midpoints.
fn quantized_normal(mean: f64, std: f64, atoms: usize) -> Result<EmpiricalDist> {
    let vals: Vec<f64> = (0..atoms)
        .map(|i| mean + std * std_normal_quantile((i as f64 + 0.5) / atoms as f64))
        .collect();
    EmpiricalDist::new(vals, vec![1.0 / atoms as f64; atoms])
}

/// Distribution of the sum of two independent draws.
fn convolve(u: &EmpiricalDist, v: &EmpiricalDist, cap: usize) -> Result<EmpiricalDist> {
    let mut atoms = Vec::with_capacity(u.len() * v.len());
    let mut weights = Vec::with_capacity(u.len() * v.len());
    for (&ua, &uw) in u.atoms().iter().zip(u.weights()) {
        for (&va, &vw) in v.atoms().iter().zip(v.weights()) {
            atoms.push(ua + va);
            weights.push(uw * vw);
        }
    }
    Ok(EmpiricalDist::new(atoms, weights)?.condense(cap))
}

/// Exact (up to reward quantization) undiscounted return distribution of
/// playing one constant action for the whole episode.
pub fn constant_action_return_dist(
    params: &RiskyPathParams,
    action: f64,
    reward_atoms: usize,
    cap: usize,
) -> Result<EmpiricalDist> {
    params.validate()?;
    if !(-1.0..=1.0).contains(&action) {
        return Err(Error::Domain(format!("action {action} is outside [-1, 1]")));
    }
    if reward_atoms == 0 || cap == 0 {
        return Err(Error::Config("quantization sizes must be positive".into()));
    }
    let a = action;
    let mut dist = EmpiricalDist::point(0.0);
    for _ in 0..params.horizon {
        dist = if a <= 0.0 {
            let reward = quantized_normal(params.safe_mean, params.safe_std, reward_atoms)?;
            convolve(&reward, &dist, cap)?
        } else {
            let reward = quantized_normal(a * params.risky_mean, params.risky_std, reward_atoms)?;
            let survive = convolve(&reward, &dist, cap)?;
            let p_fail = a * params.failure_prob;
            if p_fail > 0.0 {
                let fail = EmpiricalDist::point(params.failure_reward);
                EmpiricalDist::mixture(&[(p_fail, &fail), (1.0 - p_fail, &survive)])?
            } else {
                survive
            }
        };
    }
    Ok(dist)
}

/// Return distributions of every constant action on a grid.
pub struct PolicySweep {
    pub grid: Vec<f64>,
    pub dists: Vec<EmpiricalDist>,
}

impl PolicySweep {
    /// Grid action with the highest expected return.
    pub fn best_by_mean(&self) -> (f64, f64) {
        self.rank(|d| d.mean())
    }

    /// Grid action with the highest lower-tail mean at level `beta`.
    pub fn best_by_cvar(&self, beta: f64) -> Result<(f64, f64)> {
        let values: Result<Vec<f64>> = self.dists.iter().map(|d| d.cvar(beta)).collect();
        let values = values?;
        let (mut best, mut best_v) = (self.grid[0], values[0]);
        for (&a, &v) in self.grid.iter().zip(&values).skip(1) {
            if v > best_v {
                best = a;
                best_v = v;
            }
        }
        Ok((best, best_v))
    }

    fn rank(&self, score: impl Fn(&EmpiricalDist) -> f64) -> (f64, f64) {
        let (mut best, mut best_v) = (self.grid[0], score(&self.dists[0]));
        for (a, d) in self.grid.iter().zip(&self.dists).skip(1) {
            let v = score(d);
            if v > best_v {
                best = *a;
                best_v = v;
            }
        }
        (best, best_v)
    }
}

/// Enumerate constant actions on a grid and compute each return
/// distribution exactly.
pub fn sweep_constant_actions(
    params: &RiskyPathParams,
    grid: &[f64],
    reward_atoms: usize,
    cap: usize,
) -> Result<PolicySweep> {
    if grid.is_empty() {
        return Err(Error::Config("action grid is empty".into()));
    }
    let dists: Result<Vec<EmpiricalDist>> = grid
        .iter()
        .map(|&a| constant_action_return_dist(params, a, reward_atoms, cap))
        .collect();
    Ok(PolicySweep { grid: grid.to_vec(), dists: dists? })
}
