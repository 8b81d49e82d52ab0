//! Behavioral gates for the whole crate, from the tabular operator theory
//! through the quantile and risk machinery up to end-to-end learning runs.
//! Each test prints one `PASS`/`FAIL` line with the measured quantity and
//! its bound (run with `--nocapture` to see the lines as they come).
//!
//! The learning gates train real agents and dominate the runtime; expect
//! the full suite to take on the order of an hour on one core.

use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use dsac::actor::{policy_objective, GaussianPolicy};
use dsac::agent::{
    evaluate, load_checkpoint, train, AgentConfig, DsacAgent, EvalSummary,
};
use dsac::critic::{critic_objective_graph, fit_known_distribution, CriticConfig, QuantileCritic};
use dsac::envs::{make_env, run_episode, swing_up_torque, PendulumEnv};
use dsac::fractions::{
    fix_fractions, fqf_fraction_grads, piecewise_w1, random_fractions, FractionScheme,
    FractionSet,
};
use dsac::neuro::{Tape, Tensor};
use dsac::oracle::{
    check_contraction, check_improvement, evaluate_policy_dist, random_mdp, random_policy,
    soft_q_solve, uniform_policy, TabularMDP,
};
use dsac::risk::{
    distortion_g, std_normal_cdf, std_normal_pdf, std_normal_quantile,
    variance_estimate, Distortion, QuantileEstimate, RiskSpec,
};

fn verdict(index: usize, name: &str, pass: bool, detail: &str) {
    println!("[{index:2}] {} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
}

// ---------------------------------------------------------------------------
// 1. the backup is a contraction at the discount rate
// ---------------------------------------------------------------------------

#[test]
fn backup_contracts_random_table_pairs_at_the_discount_rate() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(901);
    let gammas = [0.5, 0.9, 0.99];
    let alphas = [0.0, 0.2];
    let mut worst_excess = f64::NEG_INFINITY;
    for case in 0..50 {
        let gamma = gammas[case % 3];
        let alpha = alphas[case % 2];
        let states = rng.gen_range(2..=5);
        let actions = rng.gen_range(1..=3);
        let mdp = random_mdp(states, actions, gamma, &mut rng).unwrap();
        let policy = random_policy(&mdp, &mut rng);
        let report = check_contraction(&mdp, &policy, alpha, 1.0, 100, &mut rng).unwrap();
        assert_eq!(report.pairs_measured, 100, "case {case} skipped pairs");
        worst_excess = worst_excess.max(report.max_ratio - gamma);
        assert!(
            report.max_ratio <= gamma + 1e-9,
            "case {case} (gamma {gamma}, alpha {alpha}): ratio {} exceeds the discount",
            report.max_ratio
        );
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        1,
        "distributional backup contraction",
        true,
        &format!(
            "5000 pairs on 50 tasks, worst ratio excess over gamma {worst_excess:.3e} \
             (bound 1e-9), {secs:.1}s (target 60s)"
        ),
    );
    assert!(secs < 60.0, "contraction sweep took {secs:.1}s");
}

// ---------------------------------------------------------------------------
// 2. iterated evaluation converges geometrically to the soft fixed point
// ---------------------------------------------------------------------------

#[test]
fn policy_evaluation_decays_geometrically_onto_the_linear_solve() {
    let mut rng = ChaCha8Rng::seed_from_u64(902);
    let mut cases: Vec<(TabularMDP, f64)> =
        vec![(dsac::envs::bundled_chain_mdp(), 0.2)];
    for &gamma in &[0.5, 0.9, 0.99] {
        for &alpha in &[0.0, 0.2] {
            let mut mdp =
                random_mdp(rng.gen_range(2..=5), rng.gen_range(1..=3), gamma, &mut rng).unwrap();
            // keep every state recurrent so the gap sequence stays observable
            // for the whole window instead of hitting zero after a few steps
            mdp.terminal = vec![false; mdp.n_states()];
            cases.push((mdp, alpha));
        }
    }
    let mut worst_ratio_excess = f64::NEG_INFINITY;
    let mut worst_mean_gap = 0.0f64;
    for (case, (mdp, alpha)) in cases.iter().enumerate() {
        let policy = uniform_policy(mdp);
        let (_, gaps) = evaluate_policy_dist(mdp, &policy, *alpha, 30, 2000).unwrap();
        // atom merging at the cap leaves a small metric floor; ratios are
        // meaningful only while both gaps sit above it
        let floor = gaps[0] * 1e-3;
        let mut checked = 0;
        for w in gaps.windows(2) {
            if w[0] > floor && w[1] > floor {
                let ratio = w[1] / w[0];
                worst_ratio_excess = worst_ratio_excess.max(ratio - mdp.gamma);
                assert!(
                    ratio <= mdp.gamma + 0.02,
                    "case {case}: gap ratio {ratio} above gamma {} + 0.02",
                    mdp.gamma
                );
                checked += 1;
            }
        }
        assert!(checked >= 3, "case {case}: only {checked} informative gap ratios");
        // condensing preserves means, so the fixed-point expectation can be
        // pushed to solver precision with a small cap and many iterations
        let iters = if mdp.gamma > 0.95 {
            3200
        } else if mdp.gamma > 0.8 {
            400
        } else {
            80
        };
        let (table, _) = evaluate_policy_dist(mdp, &policy, *alpha, iters, 64).unwrap();
        let solve = soft_q_solve(mdp, &policy, *alpha).unwrap();
        let means = table.means();
        for s in 0..mdp.n_states() {
            for a in 0..mdp.n_actions() {
                let gap = (means[s][a] - solve[s][a]).abs();
                worst_mean_gap = worst_mean_gap.max(gap);
                assert!(
                    gap <= 1e-6,
                    "case {case}: fixed-point mean at ({s},{a}) off by {gap:.3e}"
                );
            }
        }
    }
    verdict(
        2,
        "evaluation convergence",
        true,
        &format!(
            "{} tasks, worst 30-iteration gap ratio excess {worst_ratio_excess:.3e} \
             (bound 0.02), worst fixed-point expectation gap {worst_mean_gap:.3e} (bound 1e-6)",
            cases.len()
        ),
    );
}

// ---------------------------------------------------------------------------
// 3. alternating evaluation and softmax improvement is monotone and optimal
// ---------------------------------------------------------------------------

#[test]
fn soft_policy_iteration_is_monotone_and_reaches_the_optimum() {
    let mut rng = ChaCha8Rng::seed_from_u64(903);
    let gammas = [0.5, 0.8, 0.9];
    let mut worst_slack = f64::INFINITY;
    let mut worst_gap = 0.0f64;
    for case in 0..20 {
        let gamma = gammas[case % 3];
        let mdp =
            random_mdp(rng.gen_range(2..=5), rng.gen_range(2..=3), gamma, &mut rng).unwrap();
        let report = check_improvement(&mdp, 0.2, 20).unwrap();
        worst_slack = worst_slack.min(report.min_slack);
        worst_gap = worst_gap.max(report.final_value_gap);
        assert!(
            report.min_slack >= -1e-8,
            "case {case}: improvement slack {} below -1e-8",
            report.min_slack
        );
        assert!(
            report.final_value_gap <= 1e-6,
            "case {case}: final value gap {} above 1e-6",
            report.final_value_gap
        );
    }
    verdict(
        3,
        "soft policy improvement",
        true,
        &format!(
            "20 tasks x 20 rounds, worst slack {worst_slack:.3e} (bound -1e-8), \
             worst final value gap {worst_gap:.3e} (bound 1e-6)"
        ),
    );
}

// ---------------------------------------------------------------------------
// 4. quantile regression recovery of known laws
// ---------------------------------------------------------------------------

/// Expected clipped pull above `q` under the standard normal:
/// `E[min(max(X - q, 0), kappa)]`.
fn clipped_pull_above(q: f64, kappa: f64) -> f64 {
    (std_normal_pdf(q) - std_normal_pdf(q + kappa)) - q * (std_normal_cdf(q + kappa) - std_normal_cdf(q))
        + kappa * (1.0 - std_normal_cdf(q + kappa))
}

/// Expected clipped pull below `q` under the standard normal:
/// `E[min(max(q - X, 0), kappa)]`.
fn clipped_pull_below(q: f64, kappa: f64) -> f64 {
    q * (std_normal_cdf(q) - std_normal_cdf(q - kappa))
        + (std_normal_pdf(q) - std_normal_pdf(q - kappa))
        + kappa * std_normal_cdf(q - kappa)
}

/// Population minimizer of the Huber quantile loss at level `tau` for the
/// standard normal, found by bisecting the stationarity condition.
fn normal_huber_minimizer(tau: f64, kappa: f64) -> f64 {
    let balance = |q: f64| tau * clipped_pull_above(q, kappa) - (1.0 - tau) * clipped_pull_below(q, kappa);
    let (mut lo, mut hi) = (-8.0, 8.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if balance(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[test]
fn quantile_regression_recovers_normal_and_uniform_quantiles() {
    let start = Instant::now();
    let fractions = fix_fractions(32).unwrap();
    let kappa = 1.0;
    let mut rng = ChaCha8Rng::seed_from_u64(904);
    let normal_samples: Vec<f64> = (0..100_000).map(|_| rng.sample(StandardNormal)).collect();
    let uniform_samples: Vec<f64> = (0..100_000).map(|_| rng.gen_range(0.0..1.0)).collect();
    let est_normal =
        fit_known_distribution(&normal_samples, &fractions, kappa, &mut rng).unwrap();
    let est_uniform =
        fit_known_distribution(&uniform_samples, &fractions, kappa, &mut rng).unwrap();

    let mids = fractions.midpoints();
    let mut worst = (0.0f64, 0.0f64, "");
    for (i, &m) in mids.iter().enumerate() {
        let normal_err = (est_normal.values()[i] - std_normal_quantile(m)).abs();
        let uniform_err = (est_uniform.values()[i] - m).abs();
        if normal_err > worst.0 {
            worst = (normal_err, m, "normal");
        }
        if uniform_err > worst.0 {
            worst = (uniform_err, m, "uniform");
        }
    }
    let secs = start.elapsed().as_secs_f64();
    assert!(secs < 120.0, "quantile fits took {secs:.1}s");

    // The fits land on the population minimizers of the smoothed loss, not on
    // the raw quantiles: with a Huber window this wide the stationary point at
    // an extreme level sits far inside the distribution (an expectile-ward
    // pull), so the recovery error at the outer fractions is a property of
    // the loss itself rather than of sampling or optimization.
    let level = worst.1;
    let smoothed = normal_huber_minimizer(level, kappa);
    let analytic = std_normal_quantile(level);
    // uniform[0,1] support fits inside one window, so its minimizers are
    // exactly the asymmetric-least-squares points sqrt(t)/(sqrt(t)+sqrt(1-t))
    let uniform_smoothed = level.sqrt() / (level.sqrt() + (1.0 - level).sqrt());
    let pass = worst.0 < 0.05;
    verdict(
        4,
        "quantile regression recovery",
        pass,
        &format!(
            "worst quantile error {:.4} at level {level:.4} ({}) against bound 0.05, {secs:.1}s; \
             the smoothed loss itself puts the normal level-{level:.4} stationary point at \
             {smoothed:.3} vs analytic {analytic:.3} and the uniform one at \
             {uniform_smoothed:.3} vs {level:.4}, so the bound is out of reach at this window \
             width regardless of sample count",
            worst.0, worst.2
        ),
    );
    assert!(
        pass,
        "worst recovered-quantile error {:.4} at level {:.4} of the {} law exceeds 0.05; the \
         population stationary point of the width-{kappa} Huber quantile loss already sits \
         {:.3} away from the analytic quantile at that level, so no sample budget closes the gap",
        worst.0,
        worst.1,
        worst.2,
        (smoothed - analytic).abs()
    );
}

// ---------------------------------------------------------------------------
// 5. autodiff gradients match central finite differences
// ---------------------------------------------------------------------------

#[test]
fn objective_gradients_match_central_finite_differences() {
    let risks = [
        RiskSpec::Neutral,
        RiskSpec::Distorted { family: Distortion::Cvar, beta: 0.25 },
        RiskSpec::Distorted { family: Distortion::Wang, beta: -0.75 },
        RiskSpec::MeanVariance { beta: 0.5 },
        RiskSpec::Var { beta: 0.25 },
    ];
    let h = 1e-6;
    let mut worst_critic = 0.0f64;
    let mut worst_policy = 0.0f64;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(7000 + seed);
        let cfg = CriticConfig { obs_dim: 2, act_dim: 1, hidden: 6, embed: 4 };
        let fractions = fix_fractions(4).unwrap();

        let mut critic = QuantileCritic::new(cfg, "critic", &mut rng).unwrap();
        let inputs = Tensor::from_fn(3, 3, |_, _| rng.gen_range(-1.0..1.0));
        let targets = Tensor::from_fn(3, 4, |_, _| rng.gen_range(-1.5..1.5));
        let critic_loss = |c: &QuantileCritic| -> f64 {
            let mut tape = Tape::new();
            let (_, loss) =
                critic_objective_graph(&mut tape, c, &inputs, &fractions, &targets, 1.0).unwrap();
            tape.value(loss).item().unwrap()
        };
        let mut tape = Tape::new();
        let (graph, loss) =
            critic_objective_graph(&mut tape, &critic, &inputs, &fractions, &targets, 1.0)
                .unwrap();
        tape.backward(loss).unwrap();
        critic.params.zero_grads();
        critic.params.absorb_grads(&tape, &graph.param_nodes);
        for id in 0..critic.params.len() {
            for idx in 0..critic.params.get(id).value.len() {
                let base = critic.params.get(id).value.data()[idx];
                critic.params.get_mut(id).value.data_mut()[idx] = base + h;
                let plus = critic_loss(&critic);
                critic.params.get_mut(id).value.data_mut()[idx] = base - h;
                let minus = critic_loss(&critic);
                critic.params.get_mut(id).value.data_mut()[idx] = base;
                let fd = (plus - minus) / (2.0 * h);
                let ad = critic.params.get(id).grad.data()[idx];
                worst_critic = worst_critic.max((ad - fd).abs() / ad.abs().max(fd.abs()).max(1e-3));
            }
        }

        let c1 = QuantileCritic::new(cfg, "left", &mut rng).unwrap();
        let c2 = QuantileCritic::new(cfg, "right", &mut rng).unwrap();
        let mut policy = GaussianPolicy::new(2, 1, 5, &mut rng).unwrap();
        let states = Tensor::from_fn(3, 2, |_, _| rng.gen_range(-1.0..1.0));
        // the reparameterization noise is held fixed across perturbations
        let noise = Tensor::from_fn(3, 1, |_, _| rng.sample(StandardNormal));
        let risk = &risks[(seed % 5) as usize];
        let policy_loss = |p: &GaussianPolicy| -> f64 {
            let mut tape = Tape::new();
            let (_, loss) =
                policy_objective(&mut tape, p, [&c1, &c2], risk, &fractions, &states, 0.2, &noise)
                    .unwrap();
            tape.value(loss).item().unwrap()
        };
        let mut tape = Tape::new();
        let (graph, loss) =
            policy_objective(&mut tape, &policy, [&c1, &c2], risk, &fractions, &states, 0.2, &noise)
                .unwrap();
        tape.backward(loss).unwrap();
        policy.params.zero_grads();
        policy.params.absorb_grads(&tape, &graph.param_nodes);
        for id in 0..policy.params.len() {
            for idx in 0..policy.params.get(id).value.len() {
                let base = policy.params.get(id).value.data()[idx];
                policy.params.get_mut(id).value.data_mut()[idx] = base + h;
                let plus = policy_loss(&policy);
                policy.params.get_mut(id).value.data_mut()[idx] = base - h;
                let minus = policy_loss(&policy);
                policy.params.get_mut(id).value.data_mut()[idx] = base;
                let fd = (plus - minus) / (2.0 * h);
                let ad = policy.params.get(id).grad.data()[idx];
                worst_policy = worst_policy.max((ad - fd).abs() / ad.abs().max(fd.abs()).max(1e-3));
            }
        }
    }
    let pass = worst_critic < 1e-3 && worst_policy < 1e-3;
    verdict(
        5,
        "gradient integrity",
        pass,
        &format!(
            "20 seeds, worst relative error {worst_critic:.3e} (critic) / \
             {worst_policy:.3e} (policy) against bound 1e-3"
        ),
    );
    assert!(pass, "critic {worst_critic:.3e} / policy {worst_policy:.3e} vs 1e-3");
}

// ---------------------------------------------------------------------------
// 6. risk readouts against a million-point quadrature
// ---------------------------------------------------------------------------

fn random_estimate(fractions: &FractionSet, rng: &mut ChaCha8Rng) -> QuantileEstimate {
    let scale = rng.gen_range(0.5..3.0);
    let shift = rng.gen_range(5.0..10.0);
    let mut values: Vec<f64> =
        (0..fractions.count()).map(|_| shift + scale * rng.sample::<f64, _>(StandardNormal)).collect();
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    QuantileEstimate::new(fractions.clone(), values).unwrap()
}

#[test]
fn distorted_expectations_match_a_million_point_quadrature() {
    const SLICES: usize = 1_000_000;
    let mut rng = ChaCha8Rng::seed_from_u64(906);
    // the count divides the slice count so every slice lies inside one cell,
    // and both cvar kinks land exactly on cell boundaries
    let fractions = fix_fractions(25_000).unwrap();
    let estimates: Vec<QuantileEstimate> =
        (0..100).map(|_| random_estimate(&fractions, &mut rng)).collect();
    let specs = [
        (Distortion::Cpw, 0.71),
        (Distortion::Wang, 0.75),
        (Distortion::Wang, -0.75),
        (Distortion::Cvar, 0.1),
        (Distortion::Cvar, 0.25),
    ];
    let mut worst_rel = 0.0f64;
    for &(family, beta) in &specs {
        // one million Stieltjes slices of g, reused for every estimate; a
        // slice at position k falls inside fraction cell k * n / SLICES
        let g: Vec<f64> = (0..=SLICES)
            .map(|k| distortion_g(family, beta, k as f64 / SLICES as f64).unwrap())
            .collect();
        let n = fractions.count();
        for (case, est) in estimates.iter().enumerate() {
            let mut oracle = 0.0;
            for k in 0..SLICES {
                let cell = k * n / SLICES;
                oracle += est.values()[cell] * (g[k + 1] - g[k]);
            }
            let got = est.value(&RiskSpec::Distorted { family, beta }).unwrap();
            let rel = (got - oracle).abs() / oracle.abs().max(1e-9);
            worst_rel = worst_rel.max(rel);
            assert!(
                rel < 1e-3,
                "case {case} {family:?}({beta}): {got} vs quadrature {oracle} (rel {rel:.2e})"
            );
        }
    }

    // the lower-tail readout can never exceed the plain expectation
    let mut worst_cvar_excess = f64::NEG_INFINITY;
    for est in &estimates {
        let neutral = est.expectation();
        for beta in [0.1, 0.25] {
            let cvar = est.value(&RiskSpec::Distorted { family: Distortion::Cvar, beta }).unwrap();
            worst_cvar_excess = worst_cvar_excess.max(cvar - neutral);
            assert!(cvar <= neutral + 1e-12, "cvar({beta}) {cvar} above neutral {neutral}");
        }
    }

    // variance agrees with direct enumeration of the weighted atoms
    let mut worst_var_gap = 0.0f64;
    for k in 0..100u64 {
        let mut vrng = ChaCha8Rng::seed_from_u64(9600 + k);
        let f = random_fractions(32, &mut vrng).unwrap();
        let est = random_estimate(&f, &mut vrng);
        let weights = f.weights();
        let mean: f64 = weights.iter().zip(est.values()).map(|(w, z)| w * z).sum();
        let second: f64 = weights.iter().zip(est.values()).map(|(w, z)| w * z * z).sum();
        let enumerated = second - mean * mean;
        let got = variance_estimate(est.values(), &f).unwrap();
        let gap = (got - enumerated).abs();
        worst_var_gap = worst_var_gap.max(gap);
        assert!(gap <= 1e-12, "variance {got} vs enumeration {enumerated}");
    }
    verdict(
        6,
        "risk readout correctness",
        true,
        &format!(
            "500 distorted cases worst relative error {worst_rel:.3e} (bound 1e-3), \
             worst cvar excess over neutral {worst_cvar_excess:.3e} (bound 0), \
             worst variance enumeration gap {worst_var_gap:.3e} (bound 1e-12)"
        ),
    );
}

// ---------------------------------------------------------------------------
// 7. fraction gradients against finite differences of the W1 error
// ---------------------------------------------------------------------------

#[test]
fn fraction_gradients_match_finite_differences_of_the_w1_error() {
    let quantile_funcs: [(&str, fn(f64) -> f64, fn(f64) -> f64); 3] = [
        ("affine", |t| 2.0 * t - 1.0, |t| t * t - t),
        ("cubic", |t| t * t * t, |t| 0.25 * t * t * t * t),
        ("exponential", |t| t.exp(), |t| t.exp()),
    ];
    let h = 1e-5;
    let mut worst = 0.0f64;
    for (name, q, anti) in quantile_funcs {
        for seed in 0..7u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(9070 + seed);
            let fractions = random_fractions(8, &mut rng).unwrap();
            let taus = fractions.taus();
            let mids = fractions.midpoints();
            let z_interior: Vec<f64> = taus[1..taus.len() - 1].iter().map(|&t| q(t)).collect();
            let z_mid: Vec<f64> = mids.iter().map(|&m| q(m)).collect();
            let grads = fqf_fraction_grads(&z_interior, &z_mid).unwrap();
            for i in 1..fractions.count() {
                let mut up = taus.to_vec();
                up[i] += h;
                let mut down = taus.to_vec();
                down[i] -= h;
                let w_up = piecewise_w1(&FractionSet::new(up).unwrap(), q, anti);
                let w_down = piecewise_w1(&FractionSet::new(down).unwrap(), q, anti);
                let fd = (w_up - w_down) / (2.0 * h);
                let ad = grads[i - 1];
                let err = (ad - fd).abs() / ad.abs().max(fd.abs()).max(1e-3);
                worst = worst.max(err);
                assert!(
                    err < 1e-3,
                    "{name} seed {seed} fraction {i}: analytic {ad} vs finite difference {fd}"
                );
            }
        }
    }
    verdict(
        7,
        "fraction gradient",
        true,
        &format!("3 quantile curves x 7 grids, worst relative error {worst:.3e} (bound 1e-3)"),
    );
}

// ---------------------------------------------------------------------------
// 8. the full agent learns pendulum swing-up
// ---------------------------------------------------------------------------

/// Defaults scaled down to the pendulum: quarter-width network and batch,
/// quarter fraction count, shortened warmup, same rates.
fn pendulum_config() -> AgentConfig {
    AgentConfig {
        batch: 64,
        warmup: 1000,
        buffer_capacity: 50_000,
        n_fractions: 8,
        critic_hidden: 64,
        actor_hidden: 64,
        embed: 32,
        scheme: FractionScheme::Random,
        risk: RiskSpec::Neutral,
        eval_every: 10_000,
        eval_episodes: 10,
        ..AgentConfig::default()
    }
}

#[test]
fn the_agent_learns_pendulum_swing_up_from_scratch() {
    let mut env = PendulumEnv::new();
    let episodes = 20;
    let mut controller_mean = 0.0;
    let mut random_mean = 0.0;
    for seed in 0..episodes {
        controller_mean +=
            run_episode(&mut env, seed, |obs| vec![swing_up_torque(obs)]).unwrap().0;
        let mut rng = ChaCha8Rng::seed_from_u64(800 + seed);
        random_mean += run_episode(&mut env, seed, |_| vec![rng.gen_range(-2.0..2.0)]).unwrap().0;
    }
    controller_mean /= episodes as f64;
    random_mean /= episodes as f64;

    let dir = tempfile::tempdir().unwrap();
    let mut learned = Vec::new();
    let mut slowest = 0.0f64;
    for seed in [101u64, 202, 303] {
        let t0 = Instant::now();
        let report = train(
            &|| make_env("pendulum"),
            &pendulum_config(),
            50_000,
            seed,
            &dir.path().join(format!("pendulum-{seed}")),
            "acceptance",
        )
        .unwrap();
        let secs = t0.elapsed().as_secs_f64();
        slowest = slowest.max(secs);
        println!(
            "    pendulum seed {seed}: final eval mean {:.1} after 50k steps in {secs:.0}s",
            report.final_eval.mean
        );
        learned.push(report.final_eval.mean);
    }
    let learned_mean = learned.iter().sum::<f64>() / learned.len() as f64;
    let bar = random_mean + 0.5 * (controller_mean - random_mean);
    let pass = learned_mean >= bar && slowest < 1800.0;
    verdict(
        8,
        "pendulum learning",
        pass,
        &format!(
            "3-seed mean eval return {learned_mean:.1} against bar {bar:.1} \
             (random {random_mean:.1}, controller {controller_mean:.1}), \
             slowest seed {slowest:.0}s (target 1800s)"
        ),
    );
    assert!(
        learned_mean >= bar,
        "learned {learned_mean:.1} below halfway bar {bar:.1} \
         (random {random_mean:.1}, controller {controller_mean:.1})"
    );
    assert!(slowest < 1800.0, "slowest seed took {slowest:.0}s");
}

// ---------------------------------------------------------------------------
// 9. risk attitudes split on the risky path
// ---------------------------------------------------------------------------

/// Defaults scaled to the risky path: lookahead matched to the 16-step
/// horizon and a temperature matched to the unit reward scale, so the
/// entropy bonus and the truncation bootstrap do not drown the branch gap.
fn risky_path_config(risk: RiskSpec) -> AgentConfig {
    AgentConfig {
        gamma: 0.9,
        alpha: 0.05,
        batch: 64,
        warmup: 1000,
        buffer_capacity: 20_000,
        n_fractions: 16,
        critic_hidden: 32,
        actor_hidden: 32,
        embed: 16,
        scheme: FractionScheme::Random,
        risk,
        eval_every: 6_000,
        eval_episodes: 20,
        ..AgentConfig::default()
    }
}

/// Train one risky-path agent and evaluate its final policy on a fixed
/// 600-episode stream shared by every agent.
fn risky_path_run(risk: RiskSpec, seed: u64, dir: &Path) -> EvalSummary {
    const STEPS: u64 = 12_000;
    let cfg = risky_path_config(risk);
    train(&|| make_env("risky_path"), &cfg, STEPS, seed, dir, "acceptance").unwrap();
    let ck = load_checkpoint(&dir.join(format!("checkpoint_{STEPS}"))).unwrap();
    let mut agent = DsacAgent::new(1, 1, cfg, 0).unwrap();
    agent.restore_from(&ck).unwrap();
    let mut env = make_env("risky_path").unwrap();
    evaluate(&agent.policy.online, env.as_mut(), 600, 55_000, &RiskSpec::Neutral).unwrap()
}

#[test]
fn risk_attitudes_split_commitment_on_the_risky_path() {
    let dir = tempfile::tempdir().unwrap();
    let seeds = [11u64, 12, 13, 14, 15];
    let mut neutral = Vec::new();
    let mut averse = Vec::new();
    let mut seeking = Vec::new();
    for &seed in &seeds {
        let tag = |name: &str| dir.path().join(format!("{name}-{seed}"));
        neutral.push(risky_path_run(RiskSpec::Neutral, seed, &tag("neutral")));
        averse.push(risky_path_run(
            RiskSpec::Distorted { family: Distortion::Cvar, beta: 0.25 },
            seed,
            &tag("averse"),
        ));
        seeking.push(risky_path_run(
            RiskSpec::Distorted { family: Distortion::Wang, beta: -0.75 },
            seed,
            &tag("seeking"),
        ));
        println!(
            "    risky-path seed {seed}: neutral mean {:.2} fail {:.3} | cvar mean {:.2} \
             fail {:.3} | wang mean {:.2} fail {:.3}",
            neutral.last().unwrap().mean,
            neutral.last().unwrap().failure_rate,
            averse.last().unwrap().mean,
            averse.last().unwrap().failure_rate,
            seeking.last().unwrap().mean,
            seeking.last().unwrap().failure_rate,
        );
    }
    // all five paired seeds strictly lower is a one-sided sign test at
    // p = 2^-5 ~ 0.031 < 0.05
    let strict_wins = seeds
        .iter()
        .enumerate()
        .filter(|&(i, _)| averse[i].failure_rate < neutral[i].failure_rate)
        .count();
    let best = |runs: &[EvalSummary]| runs.iter().map(|r| r.mean).fold(f64::NEG_INFINITY, f64::max);
    let best_neutral = best(&neutral);
    let best_seeking = best(&seeking);
    let pass = strict_wins == seeds.len() && best_seeking >= best_neutral;
    verdict(
        9,
        "risk attitude behavior",
        pass,
        &format!(
            "lower-tail agent failure rate strictly below neutral on {strict_wins}/5 paired \
             seeds (sign test p=0.031), best seeking mean {best_seeking:.2} vs best neutral \
             {best_neutral:.2}"
        ),
    );
    assert_eq!(strict_wins, seeds.len(), "paired failure-rate comparison not uniform");
    assert!(
        best_seeking >= best_neutral,
        "best seeking mean {best_seeking:.2} below best neutral {best_neutral:.2}"
    );
}

// ---------------------------------------------------------------------------
// 10. bit-exact reproducibility
// ---------------------------------------------------------------------------

#[test]
fn identical_seeds_reproduce_training_byte_for_byte() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = pendulum_config();
    cfg.eval_every = 1000;
    let run = |name: &str| {
        let out = dir.path().join(name);
        train(&|| make_env("pendulum"), &cfg, 5_000, 424_242, &out, "acceptance").unwrap();
        (
            std::fs::read(out.join("metrics.csv")).unwrap(),
            std::fs::read(out.join("checkpoint_5000")).unwrap(),
        )
    };
    let (metrics_a, ck_a) = run("first");
    let (metrics_b, ck_b) = run("second");
    let pass = metrics_a == metrics_b && ck_a == ck_b;
    verdict(
        10,
        "determinism",
        pass,
        &format!(
            "two 5k-step runs at one seed: metrics.csv identical over {} bytes, \
             final checkpoints identical over {} bytes",
            metrics_a.len(),
            ck_a.len()
        ),
    );
    assert!(pass, "identical seeds diverged");
}
