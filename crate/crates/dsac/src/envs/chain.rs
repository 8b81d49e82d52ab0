//! A tabular chain exposed through the continuous stepping interface.
//!
//! The bundled chain has five states in a line: one action inches forward
//! toward an absorbing goal paying 1 per advance, the other stays put for a
//! trickle of 0.1. Everything about it is exactly solvable, which makes it
//! the fixture for the verification command and a smoke-test task for the
//! training loop. The wrapper accepts any tabular model: observations are
//! the normalized state index and the continuous action selects a discrete
//! action by rounding.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Env, EnvSpec, StepResult};
use crate::error::{Error, Result};
use crate::oracle::TabularMDP;

/// The exactly-solvable fixture: five states, stay (0.1) or advance (1.0),
/// absorbing goal at the end, discount 0.9.
pub fn bundled_chain_mdp() -> TabularMDP {
    let n = 5;
    let mut transitions = Vec::with_capacity(n);
    for s in 0..n {
        if s == n - 1 {
            transitions.push(vec![vec![], vec![]]);
        } else {
            transitions.push(vec![vec![(1.0, s, 0.1)], vec![(1.0, s + 1, 1.0)]]);
        }
    }
    let mut terminal = vec![false; n];
    terminal[n - 1] = true;
    TabularMDP::new(0.9, terminal, transitions).expect("static fixture is valid")
}

pub struct ChainEnv {
    mdp: TabularMDP,
    spec: EnvSpec,
    horizon: usize,
    state: usize,
    steps: usize,
    live: bool,
    rng: ChaCha8Rng,
}

impl ChainEnv {
    pub fn new(mdp: TabularMDP, horizon: usize) -> Result<Self> {
        if mdp.terminal[0] {
            return Err(Error::Config("start state 0 must not be terminal".into()));
        }
        let spec = EnvSpec::new(
            1,
            1,
            vec![-1.0],
            vec![1.0],
            horizon,
            "tabular rewards; the continuous action rounds to a discrete one",
            None,
        )?;
        Ok(ChainEnv {
            mdp,
            spec,
            horizon,
            state: 0,
            steps: 0,
            live: false,
            rng: ChaCha8Rng::seed_from_u64(0),
        })
    }

    pub fn bundled() -> Result<Self> {
        Self::new(bundled_chain_mdp(), 50)
    }

    pub fn mdp(&self) -> &TabularMDP {
        &self.mdp
    }

    pub fn state_index(&self) -> usize {
        self.state
    }

    fn observe(&self) -> Vec<f64> {
        let denom = (self.mdp.n_states() - 1).max(1) as f64;
        vec![self.state as f64 / denom]
    }

    /// Round a continuous action in `[-1, 1]` to a discrete index.
    pub fn discretize(&self, a: f64) -> usize {
        let m = self.mdp.n_actions();
        let scaled = 0.5 * (a.clamp(-1.0, 1.0) + 1.0) * (m - 1) as f64;
        (scaled.round() as usize).min(m - 1)
    }
}

impl Env for ChainEnv {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.state = 0;
        self.steps = 0;
        self.live = true;
        self.observe()
    }

    fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        if !self.live {
            return Err(Error::State("episode is over or was never started; reset first".into()));
        }
        if action.len() != 1 {
            return Err(Error::Shape(format!("chain takes 1 action, got {}", action.len())));
        }
        if !action[0].is_finite() {
            return Err(Error::NonFinite("action is not finite".into()));
        }
        let clipped = action[0].abs() > 1.0;
        let a = self.discretize(action[0]);
        let branches = &self.mdp.transitions[self.state][a];
        let draw = self.rng.gen_range(0.0..1.0);
        let mut acc = 0.0;
        let mut chosen = branches.last().ok_or_else(|| {
            Error::State(format!("state {} action {a} has no outgoing branches", self.state))
        })?;
        for branch in branches {
            acc += branch.0;
            if draw < acc {
                chosen = branch;
                break;
            }
        }
        let (_, next, reward) = *chosen;
        self.state = next;
        self.steps += 1;
        let terminal = self.mdp.terminal[next];
        let truncated = !terminal && self.steps >= self.horizon;
        if terminal || truncated {
            self.live = false;
        }
        Ok(StepResult { obs: self.observe(), reward, terminal, truncated, failed: false, clipped })
    }
}
