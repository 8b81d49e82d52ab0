//! Command-line surface: training runs, checkpoint evaluation, exact
//! tabular verification, and learning-curve aggregation.
//!
//! Configuration is a flat `section.key = value` text file plus flag
//! overrides; the resolved configuration has a canonical serialization
//! whose hash is embedded in every artifact, so a checkpoint can refuse to
//! load under a different configuration.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::agent::{
    derive_seed, evaluate, load_checkpoint, train, AgentConfig, DsacAgent, EvalSummary,
    TrainReport,
};
use crate::envs::make_env;
use crate::error::{Error, Result};
use crate::fractions::FractionScheme;
use crate::oracle::{
    check_contraction, check_improvement, evaluate_policy_dist, random_dist_table, soft_q_solve,
    uniform_policy,
};
use crate::risk::{Distortion, RiskSpec};

/// One fully resolved run: task, step budget, seeds, output root, and the
/// complete agent configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub env_name: String,
    pub steps: u64,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    pub agent: AgentConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            env_name: "pendulum".into(),
            steps: 50_000,
            seeds: vec![0],
            out_dir: PathBuf::from("runs"),
            agent: AgentConfig::default(),
        }
    }
}

fn risk_parts(spec: &RiskSpec) -> (&'static str, Option<f64>) {
    match *spec {
        RiskSpec::Neutral => ("neutral", None),
        RiskSpec::Var { beta } => ("var", Some(beta)),
        RiskSpec::MeanVariance { beta } => ("mean_variance", Some(beta)),
        RiskSpec::Distorted { family: Distortion::Cpw, beta } => ("cpw", Some(beta)),
        RiskSpec::Distorted { family: Distortion::Wang, beta } => ("wang", Some(beta)),
        RiskSpec::Distorted { family: Distortion::Cvar, beta } => ("cvar", Some(beta)),
    }
}

impl RunConfig {
    /// Apply one `key = value` assignment; `loc` names the source for error
    /// messages. Risk keys are collected by the caller because kind and
    /// parameter resolve jointly.
    fn apply(&mut self, key: &str, value: &str, loc: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, value: &str, loc: &str) -> Result<T> {
            value.trim().parse().map_err(|_| {
                Error::Config(format!("invalid value {value:?} for '{key}' at {loc}"))
            })
        }
        match key {
            "env.name" => self.env_name = value.into(),
            "run.steps" => self.steps = num(key, value, loc)?,
            "run.out" => self.out_dir = PathBuf::from(value),
            "run.seeds" => {
                let seeds: std::result::Result<Vec<u64>, _> =
                    value.split(',').map(|s| s.trim().parse()).collect();
                self.seeds = seeds.map_err(|_| {
                    Error::Config(format!(
                        "invalid value {value:?} for 'run.seeds' at {loc} \
                         (expected comma-separated integers)"
                    ))
                })?;
                if self.seeds.is_empty() {
                    return Err(Error::Config(format!("'run.seeds' is empty at {loc}")));
                }
            }
            "agent.gamma" => self.agent.gamma = num(key, value, loc)?,
            "agent.alpha" => self.agent.alpha = num(key, value, loc)?,
            "agent.tau_soft" => self.agent.iota = num(key, value, loc)?,
            "agent.batch" => self.agent.batch = num(key, value, loc)?,
            "agent.warmup" => self.agent.warmup = num(key, value, loc)?,
            "agent.lr" => self.agent.lr = num(key, value, loc)?,
            "agent.buffer_capacity" => self.agent.buffer_capacity = num(key, value, loc)?,
            "agent.eval_every" => self.agent.eval_every = num(key, value, loc)?,
            "agent.eval_episodes" => self.agent.eval_episodes = num(key, value, loc)?,
            "fractions.scheme" => self.agent.scheme = FractionScheme::parse(value.trim())?,
            "fractions.count" => self.agent.n_fractions = num(key, value, loc)?,
            "critic.hidden" => self.agent.critic_hidden = num(key, value, loc)?,
            "critic.embedding" => self.agent.embed = num(key, value, loc)?,
            "critic.kappa" => self.agent.kappa = num(key, value, loc)?,
            "actor.hidden" => self.agent.actor_hidden = num(key, value, loc)?,
            other => {
                return Err(Error::Config(format!("unknown configuration key '{other}' at {loc}")))
            }
        }
        Ok(())
    }

    /// Validate everything a run needs before any work starts.
    pub fn validate(&self) -> Result<()> {
        make_env(&self.env_name)?;
        if self.seeds.is_empty() {
            return Err(Error::Config("a run needs at least one seed".into()));
        }
        self.agent.validate()
    }

    /// Canonical text form: sorted keys, one `key = value` per line.
    /// Parsing this text reproduces the configuration exactly.
    pub fn serialize(&self) -> String {
        let (kind, beta) = risk_parts(&self.agent.risk);
        let mut out = String::new();
        let mut line = |k: &str, v: String| {
            writeln!(out, "{k} = {v}").expect("string writes cannot fail");
        };
        line("actor.hidden", self.agent.actor_hidden.to_string());
        line("agent.alpha", self.agent.alpha.to_string());
        line("agent.batch", self.agent.batch.to_string());
        line("agent.buffer_capacity", self.agent.buffer_capacity.to_string());
        line("agent.eval_episodes", self.agent.eval_episodes.to_string());
        line("agent.eval_every", self.agent.eval_every.to_string());
        line("agent.gamma", self.agent.gamma.to_string());
        line("agent.lr", self.agent.lr.to_string());
        line("agent.tau_soft", self.agent.iota.to_string());
        line("agent.warmup", self.agent.warmup.to_string());
        line("critic.embedding", self.agent.embed.to_string());
        line("critic.hidden", self.agent.critic_hidden.to_string());
        line("critic.kappa", self.agent.kappa.to_string());
        line("env.name", self.env_name.clone());
        line("fractions.count", self.agent.n_fractions.to_string());
        line("fractions.scheme", self.agent.scheme.name().to_string());
        if let Some(b) = beta {
            line("risk.beta", b.to_string());
        }
        line("risk.kind", kind.to_string());
        line("run.out", self.out_dir.display().to_string());
        line(
            "run.seeds",
            self.seeds.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(","),
        );
        line("run.steps", self.steps.to_string());
        out
    }

    /// Hash of the canonical form minus the output location: two runs that
    /// differ only in where they write are the same experiment.
    pub fn hash(&self) -> String {
        let filtered: String = self
            .serialize()
            .lines()
            .filter(|l| !l.starts_with("run.out "))
            .fold(String::new(), |mut acc, l| {
                acc.push_str(l);
                acc.push('\n');
                acc
            });
        let digest = Sha256::digest(filtered.as_bytes());
        digest[..8].iter().fold(String::new(), |mut acc, b| {
            write!(acc, "{b:02x}").expect("string writes cannot fail");
            acc
        })
    }
}

/// Parse configuration text. Unknown keys and malformed lines are rejected
/// with their location; risk kind and parameter resolve jointly at the end.
pub fn parse_config(text: &str, source: &str) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    let mut risk_kind: Option<String> = None;
    let mut risk_beta: Option<f64> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let loc = format!("{source}:{}", idx + 1);
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!("expected 'key = value' at {loc}, got {line:?}"))
        })?;
        let (key, value) = (key.trim(), value.trim());
        match key {
            "risk.kind" => risk_kind = Some(value.to_string()),
            "risk.beta" => {
                risk_beta = Some(value.parse().map_err(|_| {
                    Error::Config(format!("invalid value {value:?} for 'risk.beta' at {loc}"))
                })?)
            }
            _ => cfg.apply(key, value, &loc)?,
        }
    }
    if risk_kind.is_some() || risk_beta.is_some() {
        let kind = risk_kind.unwrap_or_else(|| "neutral".into());
        cfg.agent.risk = RiskSpec::parse(&kind, risk_beta)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Read and parse a configuration file; a missing `--config` means all
/// defaults.
pub fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        None => Ok(RunConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| {
                Error::Config(format!("cannot read config {}: {e}", p.display()))
            })?;
            parse_config(&text, &p.display().to_string())
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "dsac", about = "Distributional soft actor-critic runner", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one agent per seed and write metrics plus checkpoints.
    Train(TrainArgs),
    /// Roll deterministic evaluation episodes from a checkpoint.
    Evaluate(EvalArgs),
    /// Run the exact tabular checks and write a pass/fail report.
    Verify(VerifyArgs),
    /// Aggregate per-seed metrics into mean and half-variance band curves.
    PlotData(PlotArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Configuration file (flat `key = value`); defaults apply when absent.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Replace the configured seed list with this single seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override the training step budget.
    #[arg(long)]
    pub steps: Option<u64>,
    /// Override the task (chain, pendulum, or risky_path).
    #[arg(long)]
    pub env: Option<String>,
    /// Override the risk objective (neutral, var, mean_variance, cpw, wang, cvar).
    #[arg(long)]
    pub risk: Option<String>,
    /// Risk parameter for the chosen objective.
    #[arg(long, allow_negative_numbers = true)]
    pub beta: Option<f64>,
    /// Output root; per-seed artifacts land in `<out>/seed-<n>/`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Checkpoint file written by `train`.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// The configuration the checkpoint was trained under.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Number of deterministic evaluation episodes.
    #[arg(long, default_value_t = 10)]
    pub episodes: usize,
    /// Master seed for evaluation episode starts.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Readout risk objective; defaults to the configured one.
    #[arg(long)]
    pub risk: Option<String>,
    /// Risk parameter for the readout objective.
    #[arg(long, allow_negative_numbers = true)]
    pub beta: Option<f64>,
    /// Directory for `summary.csv`; defaults to the checkpoint's directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Directory for `verify_report.txt` and `verify_report.csv`.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// Random pairs per contraction probe.
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    /// Run root holding `seed-<n>/metrics.csv` subdirectories.
    #[arg(long)]
    pub out: PathBuf,
}

/// Outcome of `train`: one report per seed, plus shared artifacts.
#[derive(Debug)]
pub struct TrainOutcome {
    pub config_path: PathBuf,
    pub config_hash: String,
    pub reports: Vec<(u64, TrainReport)>,
}

pub fn cmd_train(args: &TrainArgs) -> Result<TrainOutcome> {
    let mut cfg = load_config(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        cfg.seeds = vec![seed];
    }
    if let Some(steps) = args.steps {
        cfg.steps = steps;
    }
    if let Some(env) = &args.env {
        cfg.env_name = env.clone();
    }
    if args.risk.is_some() || args.beta.is_some() {
        let (kind, _) = risk_parts(&cfg.agent.risk);
        let kind = args.risk.clone().unwrap_or_else(|| kind.to_string());
        cfg.agent.risk = RiskSpec::parse(&kind, args.beta)?;
    }
    if let Some(out) = &args.out {
        cfg.out_dir = out.clone();
    }
    cfg.validate()?;
    let hash = cfg.hash();
    std::fs::create_dir_all(&cfg.out_dir)?;
    let config_path = cfg.out_dir.join("config.txt");
    std::fs::write(&config_path, format!("# config {hash}\n{}", cfg.serialize()))?;
    let mut reports = Vec::new();
    for &seed in &cfg.seeds {
        let seed_dir = cfg.out_dir.join(format!("seed-{seed}"));
        let env_name = cfg.env_name.clone();
        let report = train(
            &move || make_env(&env_name),
            &cfg.agent,
            cfg.steps,
            seed,
            &seed_dir,
            &hash,
        )?;
        reports.push((seed, report));
    }
    Ok(TrainOutcome { config_path, config_hash: hash, reports })
}

/// Outcome of `evaluate`: the summary and where it was written.
#[derive(Debug)]
pub struct EvalOutcome {
    pub summary: EvalSummary,
    pub summary_path: PathBuf,
    pub warnings: Vec<String>,
}

pub fn cmd_evaluate(args: &EvalArgs) -> Result<EvalOutcome> {
    let cfg = load_config(args.config.as_deref())?;
    let hash = cfg.hash();
    let ck = load_checkpoint(&args.checkpoint)?;
    if ck.config_hash != hash {
        return Err(Error::Config(format!(
            "checkpoint {} was written under configuration {}, but the current \
             configuration hashes to {hash}; pass the original --config",
            args.checkpoint.display(),
            ck.config_hash
        )));
    }
    let mut env = make_env(&cfg.env_name)?;
    let spec = env.spec().clone();
    let mut agent = DsacAgent::new(spec.obs_dim, spec.act_dim, cfg.agent.clone(), 0)?;
    agent.restore_from(&ck)?;
    let risk = match &args.risk {
        None => cfg.agent.risk,
        Some(kind) => RiskSpec::parse(kind, args.beta)?,
    };
    let summary =
        evaluate(&agent.policy.online, env.as_mut(), args.episodes, args.seed, &risk)?;
    let out_dir = match &args.out {
        Some(d) => d.clone(),
        None => args
            .checkpoint
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from(".")),
    };
    std::fs::create_dir_all(&out_dir)?;
    let summary_path = out_dir.join("summary.csv");
    let mut csv = String::new();
    writeln!(csv, "# config {hash}").expect("string writes cannot fail");
    writeln!(csv, "episodes,mean,std,failure_rate,risk_value,q10,q25,q50,q75,q90")
        .expect("string writes cannot fail");
    let mut warnings = Vec::new();
    if summary.empty {
        warnings.push("0 evaluation episodes requested; the summary is empty".to_string());
    } else {
        let quantiles: Vec<String> =
            summary.quantiles.iter().map(|(_, q)| q.to_string()).collect();
        writeln!(
            csv,
            "{},{},{},{},{},{}",
            summary.episodes,
            summary.mean,
            summary.std,
            summary.failure_rate,
            summary.risk_value,
            quantiles.join(","),
        )
        .expect("string writes cannot fail");
    }
    std::fs::write(&summary_path, csv)?;
    Ok(EvalOutcome { summary, summary_path, warnings })
}

/// One named verification check with its measured value and threshold.
#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: &'static str,
    pub measured: f64,
    pub threshold: f64,
    /// True when `measured` must stay at or below `threshold`, false when it
    /// must stay at or above.
    pub upper_bound: bool,
    pub pass: bool,
}

/// Outcome of `verify`: all checks plus the written report paths.
#[derive(Debug)]
pub struct VerifyOutcome {
    pub checks: Vec<CheckResult>,
    pub report_path: PathBuf,
    pub csv_path: PathBuf,
    pub all_passed: bool,
}

pub fn cmd_verify(args: &VerifyArgs) -> Result<VerifyOutcome> {
    if args.trials == 0 {
        return Err(Error::Config("verification needs at least one trial".into()));
    }
    let mdp = crate::envs::bundled_chain_mdp();
    let policy = uniform_policy(&mdp);
    let alpha = 0.2;
    let mut checks = Vec::new();
    let mut push = |name, measured: f64, threshold: f64, upper_bound: bool| {
        let pass = if upper_bound { measured <= threshold } else { measured >= threshold };
        checks.push(CheckResult { name, measured, threshold, upper_bound, pass });
    };

    // one-step backup contracts distances by at least the discount
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(2024, "verify-contraction"));
    let report = check_contraction(&mdp, &policy, alpha, 1.0, args.trials, &mut rng)?;
    push("contraction_ratio", report.max_ratio, mdp.gamma + 1e-9, true);

    // iterating the backup shrinks successive gaps geometrically until the
    // atom-merging noise floor; ratios are only meaningful above it
    let (table, gaps) = evaluate_policy_dist(&mdp, &policy, alpha, 30, 4_000)?;
    let floor = gaps.first().copied().unwrap_or(0.0) * 1e-3;
    let mut worst_decay = 0.0f64;
    for pair in gaps.windows(2) {
        if pair[0] > floor && pair[1] > floor {
            worst_decay = worst_decay.max(pair[1] / pair[0]);
        }
    }
    push("evaluation_decay_ratio", worst_decay, mdp.gamma + 0.02, true);

    // ... to a fixed point whose expectation is the exact soft Q table
    let q = soft_q_solve(&mdp, &policy, alpha)?;
    let means = table.means();
    let mut worst_gap = 0.0f64;
    for (s, row) in q.iter().enumerate() {
        if mdp.terminal[s] {
            continue;
        }
        for (a, &exact) in row.iter().enumerate() {
            worst_gap = worst_gap.max((means[s][a] - exact).abs());
        }
    }
    push("fixed_point_mean_gap", worst_gap, 1e-6, true);

    // the backup conserves probability mass
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(2024, "verify-mass"));
    let probe = random_dist_table(&mdp, 3, &mut rng);
    let pushed = crate::oracle::apply_dsb(&mdp, &policy, alpha, &probe, None)?;
    let mut worst_mass = 0.0f64;
    for row in &pushed.0 {
        for dist in row {
            worst_mass = worst_mass.max((dist.weights().iter().sum::<f64>() - 1.0).abs());
        }
    }
    push("mass_conservation_gap", worst_mass, 1e-12, true);

    // alternating evaluation and closed-form improvement never decreases Q
    let report = check_improvement(&mdp, alpha, 20)?;
    push("improvement_min_slack", report.min_slack, -1e-8, false);
    push("improvement_final_value_gap", report.final_value_gap, 1e-6, true);

    let cfg_hash = RunConfig::default().hash();
    std::fs::create_dir_all(&args.out)?;
    let mut text = String::new();
    let mut csv = String::new();
    writeln!(text, "# config {cfg_hash}").expect("string writes cannot fail");
    writeln!(text, "exact tabular checks on the bundled chain task (alpha {alpha}, gamma {})", mdp.gamma)
        .expect("string writes cannot fail");
    writeln!(csv, "# config {cfg_hash}").expect("string writes cannot fail");
    writeln!(csv, "check,measured,bound,direction,pass").expect("string writes cannot fail");
    for c in &checks {
        let dir = if c.upper_bound { "<=" } else { ">=" };
        writeln!(
            text,
            "{} {}: measured {:.3e} {dir} bound {:.3e}",
            if c.pass { "PASS" } else { "FAIL" },
            c.name,
            c.measured,
            c.threshold
        )
        .expect("string writes cannot fail");
        writeln!(csv, "{},{},{},{dir},{}", c.name, c.measured, c.threshold, c.pass)
            .expect("string writes cannot fail");
    }
    let all_passed = checks.iter().all(|c| c.pass);
    writeln!(text, "{}", if all_passed { "all checks passed" } else { "SOME CHECKS FAILED" })
        .expect("string writes cannot fail");
    let report_path = args.out.join("verify_report.txt");
    let csv_path = args.out.join("verify_report.csv");
    std::fs::write(&report_path, text)?;
    std::fs::write(&csv_path, csv)?;
    Ok(VerifyOutcome { checks, report_path, csv_path, all_passed })
}

/// Outcome of `plot-data`: the aggregated curve file.
#[derive(Debug)]
pub struct PlotOutcome {
    pub data_path: PathBuf,
    pub seeds: usize,
    pub rows: usize,
}

/// Aggregate `seed-*/metrics.csv` under a run root: per step and metric,
/// the across-seed mean and half the across-seed variance (the band charted
/// around learning curves).
pub fn cmd_plot_data(args: &PlotArgs) -> Result<PlotOutcome> {
    let mut seed_files = Vec::new();
    for entry in std::fs::read_dir(&args.out).map_err(|e| {
        Error::Config(format!("cannot read run root {}: {e}", args.out.display()))
    })? {
        let path = entry?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if path.is_dir() && name.starts_with("seed-") {
            let metrics = path.join("metrics.csv");
            if metrics.is_file() {
                seed_files.push(metrics);
            }
        }
    }
    seed_files.sort();
    if seed_files.is_empty() {
        return Err(Error::Config(format!(
            "no seed-<n>/metrics.csv files under {}",
            args.out.display()
        )));
    }

    let mut hash = String::new();
    let mut header: Vec<String> = Vec::new();
    // step -> per-metric sample lists across seeds
    let mut table: Vec<(u64, Vec<Vec<f64>>)> = Vec::new();
    for file in &seed_files {
        let text = std::fs::read_to_string(file)?;
        let mut lines = text.lines();
        let first = lines.next().unwrap_or("");
        let file_hash = first.strip_prefix("# config ").unwrap_or("");
        if hash.is_empty() {
            hash = file_hash.to_string();
        } else if hash != file_hash {
            return Err(Error::Config(format!(
                "{} was produced under configuration {file_hash}, others under {hash}; \
                 refusing to aggregate across experiments",
                file.display()
            )));
        }
        let head = lines.next().unwrap_or("");
        let cols: Vec<String> = head.split(',').map(str::to_string).collect();
        if cols.len() < 2 || cols[0] != "step" {
            return Err(Error::Config(format!("{} lacks a metrics header", file.display())));
        }
        if header.is_empty() {
            header = cols;
        } else if header != cols {
            return Err(Error::Config(format!("{} has mismatched columns", file.display())));
        }
        for row in lines {
            let cells: Vec<&str> = row.split(',').collect();
            if cells.len() != header.len() {
                return Err(Error::Config(format!("malformed row in {}", file.display())));
            }
            let step: u64 = cells[0].parse().map_err(|_| {
                Error::Config(format!("bad step value {:?} in {}", cells[0], file.display()))
            })?;
            let slot = match table.iter_mut().find(|(s, _)| *s == step) {
                Some((_, slot)) => slot,
                None => {
                    table.push((step, vec![Vec::new(); header.len() - 1]));
                    &mut table.last_mut().expect("just pushed").1
                }
            };
            for (k, cell) in cells[1..].iter().enumerate() {
                if !cell.is_empty() {
                    slot[k].push(cell.parse().map_err(|_| {
                        Error::Config(format!("bad value {cell:?} in {}", file.display()))
                    })?);
                }
            }
        }
    }
    table.sort_by_key(|(s, _)| *s);

    let mut csv = String::new();
    writeln!(csv, "# config {hash}").expect("string writes cannot fail");
    let bands: Vec<String> = header[1..]
        .iter()
        .flat_map(|m| [format!("{m}_mean"), format!("{m}_band")])
        .collect();
    writeln!(csv, "step,{}", bands.join(",")).expect("string writes cannot fail");
    for (step, slots) in &table {
        let mut row = step.to_string();
        for samples in slots {
            if samples.is_empty() {
                row.push_str(",,");
                continue;
            }
            let n = samples.len() as f64;
            let mean = samples.iter().sum::<f64>() / n;
            let var = samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            row.push_str(&format!(",{mean},{}", var / 2.0));
        }
        writeln!(csv, "{row}").expect("string writes cannot fail");
    }
    let data_path = args.out.join("plot_data.csv");
    std::fs::write(&data_path, csv)?;
    Ok(PlotOutcome { data_path, seeds: seed_files.len(), rows: table.len() })
}
