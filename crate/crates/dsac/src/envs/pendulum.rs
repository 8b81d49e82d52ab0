//! Torque-limited pendulum swing-up.
//!
//! A frictionless rod pivoted at one end must be swung upright and balanced
//! with a torque too weak to lift it directly, so the controller has to pump
//! energy across several swings. Observations are `(cos θ, sin θ, θ̇)` with
//! `θ = 0` upright; each step costs `θ² + 0.1 θ̇² + 0.001 u²`, so returns are
//! never positive and an episode balanced from the start stays near zero.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Env, EnvSpec, StepResult};
use crate::error::{Error, Result};

const GRAVITY: f64 = 10.0;
const MASS: f64 = 1.0;
const LENGTH: f64 = 1.0;
const DT: f64 = 0.05;
const MAX_SPEED: f64 = 8.0;
const MAX_TORQUE: f64 = 2.0;
const HORIZON: usize = 200;

/// Wrap an angle into `(-π, π]`.
fn wrap_angle(theta: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut a = (theta + std::f64::consts::PI).rem_euclid(two_pi) - std::f64::consts::PI;
    if a <= -std::f64::consts::PI {
        a += two_pi;
    }
    a
}

pub struct PendulumEnv {
    spec: EnvSpec,
    theta: f64,
    theta_dot: f64,
    steps: usize,
    live: bool,
    rng: ChaCha8Rng,
}

impl Default for PendulumEnv {
    fn default() -> Self {
        Self::new()
    }
}

impl PendulumEnv {
    pub fn new() -> Self {
        let spec = EnvSpec::new(
            3,
            1,
            vec![-MAX_TORQUE],
            vec![MAX_TORQUE],
            HORIZON,
            "negative quadratic cost on angle from upright, speed, and torque",
            None,
        )
        .expect("static spec is valid");
        PendulumEnv { spec, theta: 0.0, theta_dot: 0.0, steps: 0, live: false, rng: ChaCha8Rng::seed_from_u64(0) }
    }

    /// Place the pendulum at an exact state (diagnostic hook).
    pub fn set_state(&mut self, theta: f64, theta_dot: f64) {
        self.theta = theta;
        self.theta_dot = theta_dot.clamp(-MAX_SPEED, MAX_SPEED);
        self.live = true;
    }

    pub fn state(&self) -> (f64, f64) {
        (self.theta, self.theta_dot)
    }

    fn observe(&self) -> Vec<f64> {
        vec![self.theta.cos(), self.theta.sin(), self.theta_dot]
    }
}

impl Env for PendulumEnv {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.theta = self.rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
        self.theta_dot = self.rng.gen_range(-1.0..1.0);
        self.steps = 0;
        self.live = true;
        self.observe()
    }

    fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        if !self.live {
            return Err(Error::State("episode is over or was never started; reset first".into()));
        }
        if action.len() != 1 {
            return Err(Error::Shape(format!("pendulum takes 1 torque, got {}", action.len())));
        }
        if !action[0].is_finite() {
            return Err(Error::NonFinite("torque is not finite".into()));
        }
        let clipped = action[0].abs() > MAX_TORQUE;
        let u = action[0].clamp(-MAX_TORQUE, MAX_TORQUE);
        let angle = wrap_angle(self.theta);
        let reward = -(angle * angle + 0.1 * self.theta_dot * self.theta_dot + 0.001 * u * u);
        let accel = 3.0 * GRAVITY / (2.0 * LENGTH) * self.theta.sin()
            + 3.0 / (MASS * LENGTH * LENGTH) * u;
        self.theta_dot = (self.theta_dot + accel * DT).clamp(-MAX_SPEED, MAX_SPEED);
        self.theta += self.theta_dot * DT;
        self.steps += 1;
        let truncated = self.steps >= HORIZON;
        if truncated {
            self.live = false;
        }
        Ok(StepResult {
            obs: self.observe(),
            reward,
            terminal: false,
            truncated,
            failed: false,
            clipped,
        })
    }
}

/// Hand-coded swing-up: pump energy toward the upright level while hanging,
/// then catch and hold with a saturated PD law near the top.
pub fn swing_up_torque(obs: &[f64]) -> f64 {
    let (cos_t, sin_t, theta_dot) = (obs[0], obs[1], obs[2]);
    let angle = sin_t.atan2(cos_t);
    // rotational inertia m l^2 / 3 and center-of-mass height l/2 give the
    // energy theta_dot^2 / 6 + 5 cos(theta), which is 5 at the upright rest
    let energy = theta_dot * theta_dot / 6.0 + 5.0 * cos_t;
    let upright = 5.0;
    if angle.abs() < 0.45 && theta_dot.abs() < 3.0 {
        (-12.0 * angle - 2.5 * theta_dot).clamp(-MAX_TORQUE, MAX_TORQUE)
    } else {
        // torque along the velocity raises the energy (dE/dt = u * theta_dot)
        let direction = if theta_dot == 0.0 { 1.0 } else { theta_dot.signum() };
        (2.0 * (upright - energy) * direction).clamp(-MAX_TORQUE, MAX_TORQUE)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::run_episode;

    #[test]
    fn the_upright_rest_state_with_no_torque_costs_nothing() {
        let mut env = PendulumEnv::new();
        env.reset(0);
        env.set_state(0.0, 0.0);
        let step = env.step(&[0.0]).unwrap();
        assert_eq!(step.reward, 0.0);
        // slightly off upright the cost is small and negative
        env.set_state(0.05, 0.0);
        let step = env.step(&[0.0]).unwrap();
        assert!(step.reward < 0.0 && step.reward > -0.01, "reward {}", step.reward);
    }

    #[test]
    fn one_step_matches_the_hand_computed_dynamics() {
        let mut env = PendulumEnv::new();
        env.reset(0);
        env.set_state(1.0, 0.5);
        let step = env.step(&[1.5]).unwrap();
        let accel = 15.0 * 1.0f64.sin() + 3.0 * 1.5;
        let want_dot = 0.5 + accel * 0.05;
        let want_theta = 1.0 + want_dot * 0.05;
        assert!((env.state().1 - want_dot).abs() < 1e-12);
        assert!((env.state().0 - want_theta).abs() < 1e-12);
        let want_reward = -(1.0 + 0.1 * 0.25 + 0.001 * 2.25);
        assert!((step.reward - want_reward).abs() < 1e-12);
        assert!(!step.clipped && !step.terminal && !step.failed);
    }

    #[test]
    fn oversized_torques_are_clipped_and_flagged() {
        let mut env = PendulumEnv::new();
        env.reset(0);
        env.set_state(1.0, 0.5);
        let step = env.step(&[50.0]).unwrap();
        assert!(step.clipped);
        // reward charged at the clipped torque
        assert!((step.reward - -(1.0 + 0.1 * 0.25 + 0.001 * 4.0)).abs() < 1e-12);
        let mut twin = PendulumEnv::new();
        twin.reset(0);
        twin.set_state(1.0, 0.5);
        twin.step(&[MAX_TORQUE]).unwrap();
        assert_eq!(env.state(), twin.state());
        assert!(env.step(&[f64::NAN]).is_err());
    }

    #[test]
    fn speed_saturates_at_the_documented_bound() {
        let mut env = PendulumEnv::new();
        env.reset(0);
        env.set_state(std::f64::consts::FRAC_PI_2, 7.9);
        env.step(&[MAX_TORQUE]).unwrap();
        assert_eq!(env.state().1, MAX_SPEED);
    }

    #[test]
    fn observations_lie_on_the_unit_circle_with_wrapped_angles() {
        let mut env = PendulumEnv::new();
        let mut obs = env.reset(9);
        for k in 0..250 {
            let r = (obs[0] * obs[0] + obs[1] * obs[1]).sqrt();
            assert!((r - 1.0).abs() < 1e-12);
            assert!(obs[2].abs() <= MAX_SPEED);
            let step = env.step(&[if k % 2 == 0 { 2.0 } else { -2.0 }]).unwrap();
            if step.done() {
                assert!(step.truncated && !step.terminal);
                assert_eq!(k + 1, HORIZON);
                break;
            }
            obs = step.obs;
        }
    }

    #[test]
    fn angle_wrapping_is_periodic_and_centered() {
        assert!((wrap_angle(0.0)).abs() < 1e-15);
        assert!((wrap_angle(3.0 * std::f64::consts::PI) - std::f64::consts::PI).abs() < 1e-12);
        assert!((wrap_angle(-0.1) - -0.1).abs() < 1e-15);
        for k in -7..=7 {
            let base = 0.3;
            let wrapped = wrap_angle(base + 2.0 * std::f64::consts::PI * k as f64);
            assert!((wrapped - base).abs() < 1e-9, "k={k}: {wrapped}");
        }
    }

    #[test]
    fn the_hand_coded_controller_swings_up_and_balances() {
        let mut env = PendulumEnv::new();
        let mut returns = Vec::new();
        for seed in 0..20 {
            let (total, steps, _) =
                run_episode(&mut env, seed, |obs| vec![swing_up_torque(obs)]).unwrap();
            assert_eq!(steps, HORIZON);
            returns.push(total);
        }
        let mean = returns.iter().sum::<f64>() / returns.len() as f64;
        // a competent swing-up lands well above -400; random torques score
        // around -1200 on this cost
        assert!(mean > -400.0, "controller mean return {mean}");
        // once upright it stays upright: the last fifty steps are cheap
        let mut obs = env.reset(3);
        let mut tail_cost = 0.0;
        for k in 0..HORIZON {
            let step = env.step(&[swing_up_torque(&obs)]).unwrap();
            obs = step.obs;
            if k >= 150 {
                tail_cost += step.reward;
            }
        }
        assert!(tail_cost > -5.0, "tail cost {tail_cost}");
    }

    #[test]
    fn the_controller_beats_random_torques_by_a_wide_margin() {
        let mut env = PendulumEnv::new();
        let mut controller = 0.0;
        let mut random = 0.0;
        for seed in 0..10 {
            controller +=
                run_episode(&mut env, seed, |obs| vec![swing_up_torque(obs)]).unwrap().0;
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 1000);
            random += run_episode(&mut env, seed, |_| {
                vec![rng.gen_range(-MAX_TORQUE..MAX_TORQUE)]
            })
            .unwrap()
            .0;
        }
        assert!(
            controller / 10.0 > random / 10.0 + 300.0,
            "controller {controller} vs random {random}"
        );
    }
}
