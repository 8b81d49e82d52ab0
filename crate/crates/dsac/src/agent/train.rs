//! The training loop and deterministic evaluation rollouts.
//!
//! Training alternates one environment step with one gradient update (after
//! warmup) and periodically rolls deterministic mean-action episodes on a
//! separate evaluation instance of the task. Metrics go to a CSV whose
//! content is a pure function of the configuration and master seed, so
//! identical runs produce byte-identical files.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::update::{DsacAgent, UpdateMetrics};
use super::{derive_seed, save_checkpoint, AgentConfig, ReplayBuffer, Transition};
use crate::actor::GaussianPolicy;
use crate::envs::{scale_action, Env};
use crate::error::{Error, Result};
use crate::risk::{risk_value, RiskSpec};

/// Quantile levels reported for evaluation returns.
const EVAL_QUANTILES: [f64; 5] = [0.1, 0.25, 0.5, 0.75, 0.9];

/// Column header of the metrics CSV.
pub const METRICS_HEADER: &str = "step,critic_loss_1,critic_loss_2,actor_loss,\
                                  eval_return_mean,eval_return_std,failure_rate,entropy_estimate";

/// Statistics of a batch of deterministic evaluation episodes.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSummary {
    pub episodes: usize,
    /// True when zero episodes were requested; every statistic is then 0.
    pub empty: bool,
    pub mean: f64,
    /// Population standard deviation of episode returns.
    pub std: f64,
    /// `(level, empirical quantile)` pairs of the episode returns.
    pub quantiles: Vec<(f64, f64)>,
    /// Fraction of episodes in which the task's failure predicate fired.
    pub failure_rate: f64,
    /// The configured risk functional applied to the return sample.
    pub risk_value: f64,
}

impl EvalSummary {
    fn empty() -> Self {
        EvalSummary {
            episodes: 0,
            empty: true,
            mean: 0.0,
            std: 0.0,
            quantiles: Vec::new(),
            failure_rate: 0.0,
            risk_value: 0.0,
        }
    }
}

/// Roll `episodes` deterministic (mean-action) episodes and summarize the
/// returns. Episode seeds derive from `seed`, so the summary is a pure
/// function of policy, task, episode count, seed, and risk objective.
pub fn evaluate(
    policy: &GaussianPolicy,
    env: &mut dyn Env,
    episodes: usize,
    seed: u64,
    risk: &RiskSpec,
) -> Result<EvalSummary> {
    risk.validate()?;
    let spec = env.spec().clone();
    if policy.obs_dim() != spec.obs_dim || policy.act_dim() != spec.act_dim {
        return Err(Error::Config(format!(
            "policy with {} observation / {} action dimensions does not fit \
             a task with {} / {}",
            policy.obs_dim(),
            policy.act_dim(),
            spec.obs_dim,
            spec.act_dim
        )));
    }
    if episodes == 0 {
        return Ok(EvalSummary::empty());
    }
    let mut returns = Vec::with_capacity(episodes);
    let mut failures = 0usize;
    for i in 0..episodes {
        let mut obs = env.reset(derive_seed(seed, &format!("eval-{i}")));
        let mut total = 0.0;
        let mut failed = false;
        loop {
            let action = policy.mean_action(&obs)?;
            let step = env.step(&scale_action(&spec, &action)?)?;
            total += step.reward;
            failed |= step.failed;
            if step.done() {
                break;
            }
            obs = step.obs;
        }
        returns.push(total);
        failures += failed as usize;
    }
    let n = returns.len() as f64;
    let mean = returns.iter().sum::<f64>() / n;
    let var = returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    let mut sorted = returns.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("returns are finite"));
    let quantiles = EVAL_QUANTILES
        .iter()
        .map(|&q| {
            let pos = q * (sorted.len() - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            (q, sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo]))
        })
        .collect();
    Ok(EvalSummary {
        episodes,
        empty: false,
        mean,
        std: var.sqrt(),
        quantiles,
        failure_rate: failures as f64 / n,
        risk_value: risk_value(risk, &returns)?,
    })
}

/// Artifacts and headline numbers of one training run.
#[derive(Debug)]
pub struct TrainReport {
    pub steps: u64,
    pub metrics_rows: usize,
    pub metrics_path: PathBuf,
    pub checkpoints: Vec<PathBuf>,
    pub final_eval: EvalSummary,
    pub warnings: Vec<String>,
}

/// Run one training job: collect experience, update, evaluate on a cadence,
/// and write `metrics.csv` plus initial and final checkpoints to `out_dir`.
pub fn train(
    build_env: &dyn Fn() -> Result<Box<dyn Env>>,
    cfg: &AgentConfig,
    steps: u64,
    seed: u64,
    out_dir: &Path,
    config_hash: &str,
) -> Result<TrainReport> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let mut env = build_env()?;
    let mut eval_env = build_env()?;
    let spec = env.spec().clone();
    let mut agent =
        DsacAgent::new(spec.obs_dim, spec.act_dim, cfg.clone(), derive_seed(seed, "agent"))?;
    let mut replay = ReplayBuffer::new(cfg.buffer_capacity)?;
    let mut explore_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "explore"));
    let mut sample_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "samples"));
    let eval_seed = derive_seed(seed, "eval");

    let mut csv = String::new();
    writeln!(csv, "# config {config_hash}").expect("string writes cannot fail");
    writeln!(csv, "{METRICS_HEADER}").expect("string writes cannot fail");

    let mut checkpoints = Vec::new();
    let first = out_dir.join("checkpoint_0");
    save_checkpoint(&first, config_hash, 0, &agent.checkpoint_tensors())?;
    checkpoints.push(first);

    let mut episode = 0u64;
    let mut obs = env.reset(derive_seed(seed, "episode-0"));
    let mut since_row: Vec<UpdateMetrics> = Vec::new();
    let mut rows = 0usize;
    let mut updates_total = 0u64;
    let mut last_eval = None;

    for step in 1..=steps {
        let action: Vec<f64> = if step as usize <= cfg.warmup {
            (0..spec.act_dim).map(|_| explore_rng.gen_range(-1.0..1.0)).collect()
        } else {
            agent.policy.online.sample(&obs, &mut explore_rng)?.action
        };
        let result = env.step(&scale_action(&spec, &action)?).map_err(|e| {
            Error::State(format!(
                "environment fault at step {step} (episode {episode}, \
                 observation {obs:?}, action {action:?}): {e}"
            ))
        })?;
        replay.store(Transition {
            s: obs.clone(),
            a: action,
            r: result.reward,
            s_next: result.obs.clone(),
            done: result.terminal,
        })?;
        obs = result.obs;
        if result.terminal || result.truncated {
            episode += 1;
            obs = env.reset(derive_seed(seed, &format!("episode-{episode}")));
        }

        if step as usize > cfg.warmup && replay.len() >= cfg.batch {
            let batch = replay.sample(cfg.batch, &mut sample_rng)?;
            since_row.push(agent.update(&batch)?);
            updates_total += 1;
        }

        if step % cfg.eval_every as u64 == 0 || step == steps {
            let summary =
                evaluate(&agent.policy.online, eval_env.as_mut(), cfg.eval_episodes, eval_seed, &cfg.risk)?;
            let k = since_row.len() as f64;
            let avg = |f: &dyn Fn(&UpdateMetrics) -> f64| -> String {
                if since_row.is_empty() {
                    String::new()
                } else {
                    format!("{}", since_row.iter().map(|m| f(m)).sum::<f64>() / k)
                }
            };
            let eval_cols = if summary.empty {
                [String::new(), String::new(), String::new()]
            } else {
                [
                    format!("{}", summary.mean),
                    format!("{}", summary.std),
                    format!("{}", summary.failure_rate),
                ]
            };
            writeln!(
                csv,
                "{step},{},{},{},{},{},{},{}",
                avg(&|m| m.critic_loss[0]),
                avg(&|m| m.critic_loss[1]),
                avg(&|m| m.actor_loss),
                eval_cols[0],
                eval_cols[1],
                eval_cols[2],
                avg(&|m| m.entropy_estimate),
            )
            .expect("string writes cannot fail");
            rows += 1;
            since_row.clear();
            last_eval = Some(summary);
        }
    }

    let metrics_path = out_dir.join("metrics.csv");
    std::fs::write(&metrics_path, csv)?;
    if steps > 0 {
        let last = out_dir.join(format!("checkpoint_{steps}"));
        save_checkpoint(&last, config_hash, steps, &agent.checkpoint_tensors())?;
        checkpoints.push(last);
    }
    let final_eval = match last_eval {
        Some(s) => s,
        None => {
            evaluate(&agent.policy.online, eval_env.as_mut(), cfg.eval_episodes, eval_seed, &cfg.risk)?
        }
    };
    let mut warnings = Vec::new();
    if updates_total == 0 && steps > 0 {
        warnings.push(format!(
            "no gradient steps were taken in {steps} environment steps \
             (warmup {} and batch {} gate learning)",
            cfg.warmup, cfg.batch
        ));
    }
    Ok(TrainReport { steps, metrics_rows: rows, metrics_path, checkpoints, final_eval, warnings })
}
