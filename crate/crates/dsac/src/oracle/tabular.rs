//! Tabular MDPs with exact soft (maximum-entropy) solutions.
//!
//! Everything here is small enough to solve in closed form: scalar soft
//! Q-values come from a linear solve, optimal soft values from value
//! iteration, and full return *distributions* from repeated application of
//! the distributional soft Bellman backup on [`EmpiricalDist`] tables. These
//! exact objects are the reference points the learned components are tested
//! against.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::oracle::dist::EmpiricalDist;

/// Finite MDP: `transitions[s][a]` lists `(probability, next_state, reward)`
/// triples. Terminal states absorb with zero further reward.
#[derive(Debug, Clone)]
pub struct TabularMDP {
    pub gamma: f64,
    pub terminal: Vec<bool>,
    pub transitions: Vec<Vec<Vec<(f64, usize, f64)>>>,
}

/// `policy[s][a]` is the probability of action `a` in state `s`.
pub type Policy = Vec<Vec<f64>>;

impl TabularMDP {
    pub fn new(
        gamma: f64,
        terminal: Vec<bool>,
        transitions: Vec<Vec<Vec<(f64, usize, f64)>>>,
    ) -> Result<Self> {
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::Config(format!("discount must be in [0, 1), got {gamma}")));
        }
        let n_states = transitions.len();
        if n_states == 0 || terminal.len() != n_states {
            return Err(Error::Config("transition table and terminal flags disagree".into()));
        }
        let n_actions = transitions[0].len();
        for (s, row) in transitions.iter().enumerate() {
            if row.len() != n_actions {
                return Err(Error::Config(format!("state {s} has a ragged action set")));
            }
            if terminal[s] {
                continue;
            }
            for (a, branches) in row.iter().enumerate() {
                let total: f64 = branches.iter().map(|&(p, _, _)| p).sum();
                if (total - 1.0).abs() > 1e-9 {
                    return Err(Error::Config(format!(
                        "transition probabilities for ({s}, {a}) sum to {total}"
                    )));
                }
                for &(p, next, r) in branches {
                    if !(p >= 0.0) || next >= n_states || !r.is_finite() {
                        return Err(Error::Config(format!("bad branch ({p}, {next}, {r})")));
                    }
                }
            }
        }
        Ok(TabularMDP { gamma, terminal, transitions })
    }

    pub fn n_states(&self) -> usize {
        self.transitions.len()
    }

    pub fn n_actions(&self) -> usize {
        self.transitions[0].len()
    }
}

/// Uniform policy over actions.
pub fn uniform_policy(mdp: &TabularMDP) -> Policy {
    vec![vec![1.0 / mdp.n_actions() as f64; mdp.n_actions()]; mdp.n_states()]
}

/// Random strictly-positive policy (entropy terms need `log pi` finite).
pub fn random_policy(mdp: &TabularMDP, rng: &mut impl Rng) -> Policy {
    (0..mdp.n_states())
        .map(|_| {
            let raw: Vec<f64> = (0..mdp.n_actions()).map(|_| rng.gen::<f64>() + 0.05).collect();
            let total: f64 = raw.iter().sum();
            raw.into_iter().map(|x| x / total).collect()
        })
        .collect()
}

/// Random MDP with two successor states per action, rewards in [-1, 1], and
/// a sprinkling of terminal states (state 0 always stays live).
pub fn random_mdp(
    n_states: usize,
    n_actions: usize,
    gamma: f64,
    rng: &mut impl Rng,
) -> Result<TabularMDP> {
    if n_states < 2 {
        return Err(Error::Config("need at least two states".into()));
    }
    let terminal: Vec<bool> = (0..n_states).map(|s| s != 0 && rng.gen::<f64>() < 0.3).collect();
    let transitions = (0..n_states)
        .map(|_| {
            (0..n_actions)
                .map(|_| {
                    let a = rng.gen_range(0..n_states);
                    let mut b = rng.gen_range(0..n_states);
                    if b == a {
                        b = (b + 1) % n_states;
                    }
                    let p = rng.gen_range(0.2..0.8);
                    let r1 = rng.gen_range(-1.0..1.0);
                    let r2 = rng.gen_range(-1.0..1.0);
                    vec![(p, a, r1), (1.0 - p, b, r2)]
                })
                .collect()
        })
        .collect();
    TabularMDP::new(gamma, terminal, transitions)
}

fn check_policy(mdp: &TabularMDP, policy: &Policy) -> Result<()> {
    if policy.len() != mdp.n_states() || policy.iter().any(|row| row.len() != mdp.n_actions()) {
        return Err(Error::Shape("policy table does not match the MDP".into()));
    }
    for row in policy {
        let total: f64 = row.iter().sum();
        if (total - 1.0).abs() > 1e-9 || row.iter().any(|&p| p < 0.0) {
            return Err(Error::Domain("policy rows must be probability vectors".into()));
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// scalar soft policy evaluation and optimality
// ---------------------------------------------------------------------------

/// Exact soft Q-values of a fixed policy via a linear solve:
/// `Q(s,a) = E[r] + gamma * E[ Q(s',a') - alpha * log pi(a'|s') ]`.
pub fn soft_q_solve(mdp: &TabularMDP, policy: &Policy, alpha: f64) -> Result<Vec<Vec<f64>>> {
    check_policy(mdp, policy)?;
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let dim = ns * na;
    let idx = |s: usize, a: usize| s * na + a;
    let mut mat = DMatrix::<f64>::identity(dim, dim);
    let mut rhs = DVector::<f64>::zeros(dim);
    for s in 0..ns {
        for a in 0..na {
            if mdp.terminal[s] {
                continue; // identity row keeps Q(s, a) = 0
            }
            let mut b = 0.0;
            for &(p, next, r) in &mdp.transitions[s][a] {
                b += p * r;
                if mdp.terminal[next] {
                    continue;
                }
                let mut entropy = 0.0;
                for (a2, &pi) in policy[next].iter().enumerate() {
                    if pi > 0.0 {
                        entropy -= pi * pi.ln();
                        mat[(idx(s, a), idx(next, a2))] -= mdp.gamma * p * pi;
                    }
                }
                b += mdp.gamma * p * alpha * entropy;
            }
            rhs[idx(s, a)] = b;
        }
    }
    let solution = mat
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Domain("soft evaluation system is singular".into()))?;
    Ok((0..ns).map(|s| (0..na).map(|a| solution[idx(s, a)]).collect()).collect())
}

/// Optimal soft Q-values by value iteration with the log-sum-exp backup.
pub fn soft_value_iteration(mdp: &TabularMDP, alpha: f64, iters: usize) -> Vec<Vec<f64>> {
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let mut q = vec![vec![0.0; na]; ns];
    for _ in 0..iters {
        let v: Vec<f64> = (0..ns)
            .map(|s| if mdp.terminal[s] { 0.0 } else { soft_value(&q[s], alpha) })
            .collect();
        for s in 0..ns {
            if mdp.terminal[s] {
                continue;
            }
            for a in 0..na {
                q[s][a] = mdp.transitions[s][a]
                    .iter()
                    .map(|&(p, next, r)| p * (r + mdp.gamma * v[next]))
                    .sum();
            }
        }
    }
    q
}

/// Soft state value `alpha * log sum_a exp(q_a / alpha)`, computed stably.
pub fn soft_value(q_row: &[f64], alpha: f64) -> f64 {
    let m = q_row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = q_row.iter().map(|q| ((q - m) / alpha).exp()).sum();
    m + alpha * sum.ln()
}

/// Closed-form KL policy improvement: the new policy is proportional to
/// `exp(Q / alpha)` in every state.
pub fn softmax_policy(q: &[Vec<f64>], alpha: f64) -> Policy {
    q.iter()
        .map(|row| {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = row.iter().map(|q| ((q - m) / alpha).exp()).collect();
            let total: f64 = exps.iter().sum();
            exps.into_iter().map(|e| e / total).collect()
        })
        .collect()
}

// ---------------------------------------------------------------------------
// distributional soft Bellman backup
// ---------------------------------------------------------------------------

/// Per-(state, action) return distributions.
#[derive(Debug, Clone)]
pub struct DistTable(pub Vec<Vec<EmpiricalDist>>);

impl DistTable {
    /// Point mass at zero everywhere.
    pub fn zeros(mdp: &TabularMDP) -> Self {
        DistTable(vec![vec![EmpiricalDist::point(0.0); mdp.n_actions()]; mdp.n_states()])
    }

    pub fn means(&self) -> Vec<Vec<f64>> {
        self.0.iter().map(|row| row.iter().map(|d| d.mean()).collect()).collect()
    }
}

/// Largest exact mixture support `apply_dsb` will build before demanding a
/// cap; beyond this the uncapped backup would exhaust memory.
pub const ATOM_HARD_LIMIT: usize = 1_000_000;

/// One application of the distributional soft Bellman backup:
/// `Z(s,a) <- r + gamma * (Z(s',a') - alpha * log pi(a'|s'))` mixed over
/// transitions and next actions, exactly. `cap` bounds the support size via
/// mean-preserving condensation; `None` keeps the mixture exact.
pub fn apply_dsb(
    mdp: &TabularMDP,
    policy: &Policy,
    alpha: f64,
    table: &DistTable,
    cap: Option<usize>,
) -> Result<DistTable> {
    check_policy(mdp, policy)?;
    let mut out = Vec::with_capacity(mdp.n_states());
    for s in 0..mdp.n_states() {
        let mut row = Vec::with_capacity(mdp.n_actions());
        for a in 0..mdp.n_actions() {
            if mdp.terminal[s] {
                row.push(EmpiricalDist::point(0.0));
                continue;
            }
            if cap.is_none() {
                let mut incoming = 0usize;
                for &(p, next, _) in &mdp.transitions[s][a] {
                    if p == 0.0 {
                        continue;
                    }
                    incoming += if mdp.terminal[next] {
                        1
                    } else {
                        policy[next]
                            .iter()
                            .enumerate()
                            .filter(|&(_, &pi)| pi > 0.0)
                            .map(|(a2, _)| table.0[next][a2].len())
                            .sum()
                    };
                }
                if incoming > ATOM_HARD_LIMIT {
                    return Err(Error::Resource(format!(
                        "uncapped backup of ({s}, {a}) needs {incoming} atoms \
                         (limit {ATOM_HARD_LIMIT}); pass an atom cap"
                    )));
                }
            }
            let mut shifted: Vec<(f64, EmpiricalDist)> = Vec::new();
            for &(p, next, r) in &mdp.transitions[s][a] {
                if p == 0.0 {
                    continue;
                }
                if mdp.terminal[next] {
                    shifted.push((p, EmpiricalDist::point(r)));
                    continue;
                }
                for (a2, &pi) in policy[next].iter().enumerate() {
                    if pi == 0.0 {
                        continue;
                    }
                    let bonus = -alpha * pi.ln();
                    let part = table.0[next][a2].affine(mdp.gamma, r + mdp.gamma * bonus);
                    shifted.push((p * pi, part));
                }
            }
            let parts: Vec<(f64, &EmpiricalDist)> =
                shifted.iter().map(|(w, d)| (*w, d)).collect();
            let mixed = EmpiricalDist::mixture(&parts)?;
            row.push(match cap {
                Some(c) => mixed.condense(c),
                None => mixed,
            });
        }
        out.push(row);
    }
    Ok(DistTable(out))
}

/// Largest p-Wasserstein distance over all (state, action) cells.
pub fn sup_wasserstein(a: &DistTable, b: &DistTable, p: f64) -> Result<f64> {
    if a.0.len() != b.0.len() || a.0.iter().zip(&b.0).any(|(x, y)| x.len() != y.len()) {
        return Err(Error::Shape("distribution tables index different (s, a) sets".into()));
    }
    let mut worst = 0.0f64;
    for (ra, rb) in a.0.iter().zip(&b.0) {
        for (da, db) in ra.iter().zip(rb) {
            worst = worst.max(da.wasserstein(db, p)?);
        }
    }
    Ok(worst)
}

/// Iterate the distributional backup from the zero table, returning the final
/// table and the 1-Wasserstein gap after each application.
pub fn evaluate_policy_dist(
    mdp: &TabularMDP,
    policy: &Policy,
    alpha: f64,
    iters: usize,
    cap: usize,
) -> Result<(DistTable, Vec<f64>)> {
    let mut table = DistTable::zeros(mdp);
    let mut gaps = Vec::with_capacity(iters);
    for _ in 0..iters {
        let next = apply_dsb(mdp, policy, alpha, &table, Some(cap))?;
        gaps.push(sup_wasserstein(&table, &next, 1.0)?);
        table = next;
    }
    Ok((table, gaps))
}

/// Random table of small finitely-supported distributions, for contraction
/// probes.
pub fn random_dist_table(mdp: &TabularMDP, atoms: usize, rng: &mut impl Rng) -> DistTable {
    DistTable(
        (0..mdp.n_states())
            .map(|_| {
                (0..mdp.n_actions())
                    .map(|_| {
                        let support: Vec<f64> =
                            (0..atoms.max(1)).map(|_| rng.gen_range(-5.0..5.0)).collect();
                        EmpiricalDist::from_samples(&support).expect("finite support")
                    })
                    .collect()
            })
            .collect(),
    )
}

/// Measured contraction behavior of the distributional backup.
#[derive(Debug, Clone)]
pub struct ContractionReport {
    /// Largest observed `d(T Z1, T Z2) / d(Z1, Z2)`.
    pub max_ratio: f64,
    pub pairs_measured: usize,
    /// Degenerate pairs (zero initial distance) excluded from the ratio.
    pub pairs_skipped: usize,
}

/// Apply the backup to random table pairs and report the worst distance
/// ratio; the theory says it never exceeds the discount.
pub fn check_contraction(
    mdp: &TabularMDP,
    policy: &Policy,
    alpha: f64,
    p: f64,
    trials: usize,
    rng: &mut impl Rng,
) -> Result<ContractionReport> {
    if trials == 0 {
        return Err(Error::Config("contraction check needs at least one trial".into()));
    }
    let mut max_ratio = f64::NEG_INFINITY;
    let mut measured = 0;
    let mut skipped = 0;
    for _ in 0..trials {
        let z1 = random_dist_table(mdp, 3, rng);
        let z2 = random_dist_table(mdp, 3, rng);
        let before = sup_wasserstein(&z1, &z2, p)?;
        if before < 1e-12 {
            skipped += 1;
            continue;
        }
        let t1 = apply_dsb(mdp, policy, alpha, &z1, None)?;
        let t2 = apply_dsb(mdp, policy, alpha, &z2, None)?;
        let after = sup_wasserstein(&t1, &t2, p)?;
        max_ratio = max_ratio.max(after / before);
        measured += 1;
    }
    Ok(ContractionReport { max_ratio, pairs_measured: measured, pairs_skipped: skipped })
}

/// Outcome of alternating exact evaluation and closed-form KL improvement.
#[derive(Debug, Clone)]
pub struct ImprovementReport {
    pub rounds: usize,
    /// Smallest observed `Q_new(s,a) - Q_old(s,a)`; nonnegative up to solver
    /// noise when improvement is monotone.
    pub min_slack: f64,
    /// Largest gap between the final policy's soft value and the optimal
    /// soft value from exhaustive value iteration.
    pub final_value_gap: f64,
}

/// Run `rounds` of soft policy iteration from the uniform policy: exact
/// evaluation (linear solve), then the closed-form KL projection
/// `pi(a|s) proportional to exp(Q(s,a) / alpha)`.
pub fn check_improvement(mdp: &TabularMDP, alpha: f64, rounds: usize) -> Result<ImprovementReport> {
    if !(alpha > 0.0) {
        return Err(Error::Domain(
            "closed-form KL improvement needs alpha > 0; use greedy (hard-max) improvement \
             for the entropy-free case"
                .into(),
        ));
    }
    if rounds == 0 {
        return Err(Error::Config("improvement check needs at least one round".into()));
    }
    let mut policy = uniform_policy(mdp);
    let mut q = soft_q_solve(mdp, &policy, alpha)?;
    let mut min_slack = f64::INFINITY;
    for _ in 0..rounds {
        policy = softmax_policy(&q, alpha);
        let q_next = soft_q_solve(mdp, &policy, alpha)?;
        for s in 0..mdp.n_states() {
            if mdp.terminal[s] {
                continue;
            }
            for a in 0..mdp.n_actions() {
                min_slack = min_slack.min(q_next[s][a] - q[s][a]);
            }
        }
        q = q_next;
    }
    let q_star = soft_value_iteration(mdp, alpha, 20_000);
    let mut final_value_gap = 0.0f64;
    for s in 0..mdp.n_states() {
        if mdp.terminal[s] {
            continue;
        }
        let v_pi: f64 = policy[s]
            .iter()
            .zip(&q[s])
            .map(|(&pi, &qa)| if pi > 0.0 { pi * (qa - alpha * pi.ln()) } else { 0.0 })
            .sum();
        final_value_gap = final_value_gap.max((v_pi - soft_value(&q_star[s], alpha)).abs());
    }
    Ok(ImprovementReport { rounds, min_slack, final_value_gap })
}

/// One Monte-Carlo rollout of the soft return from `(s, a)`: rewards plus the
/// entropy bonus `-alpha log pi` for every action after the first.
pub fn mc_soft_return(
    mdp: &TabularMDP,
    policy: &Policy,
    alpha: f64,
    s0: usize,
    a0: usize,
    horizon: usize,
    rng: &mut impl Rng,
) -> f64 {
    let (mut s, mut a) = (s0, a0);
    let mut ret = 0.0;
    let mut discount = 1.0;
    for _ in 0..horizon {
        if mdp.terminal[s] {
            break;
        }
        let branches = &mdp.transitions[s][a];
        let mut u = rng.gen::<f64>();
        let mut chosen = branches[branches.len() - 1];
        for &(p, next, r) in branches {
            if u < p {
                chosen = (p, next, r);
                break;
            }
            u -= p;
        }
        let (_, next, r) = chosen;
        ret += discount * r;
        discount *= mdp.gamma;
        if mdp.terminal[next] {
            break;
        }
        let mut ua = rng.gen::<f64>();
        let mut a2 = policy[next].len() - 1;
        for (k, &pi) in policy[next].iter().enumerate() {
            if ua < pi {
                a2 = k;
                break;
            }
            ua -= pi;
        }
        ret += discount * -alpha * policy[next][a2].ln();
        s = next;
        a = a2;
    }
    ret
}
