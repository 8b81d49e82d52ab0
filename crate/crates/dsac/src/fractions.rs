//! Quantile fraction generation.
//!
//! A [`FractionSet`] is an ascending grid `0 = tau_0 < tau_1 < ... < tau_N = 1`
//! together with the cell midpoints `tauhat_i = (tau_i + tau_{i+1}) / 2` at
//! which quantile values are read. Three generation schemes are supported:
//!
//! - `fix`: the uniform grid `tau_i = i / N`;
//! - `random`: cumulative sums of uniform draws, normalized so the grid ends
//!   at exactly 1 (ascending by construction);
//! - `net`: a proposal network with a softmax head whose cumulative sums are
//!   the fractions, trained by the 1-Wasserstein gradient
//!   [`fqf_fraction_grad`].

use rand::Rng;

use crate::error::{Error, Result};
use crate::neuro::{NodeId, ParamVec, Tape, Tensor};

/// Which generation scheme produces the fraction grids during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FractionScheme {
    /// The uniform grid, fixed for the whole run.
    Fix,
    /// A fresh random grid each update (the default).
    Random,
    /// Input-conditioned grids from a trained proposal network.
    Net,
}

impl FractionScheme {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "fix" => Ok(FractionScheme::Fix),
            "random" => Ok(FractionScheme::Random),
            "net" => Ok(FractionScheme::Net),
            other => Err(Error::Config(format!(
                "unknown fraction scheme '{other}' (expected fix, random, or net)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            FractionScheme::Fix => "fix",
            FractionScheme::Random => "random",
            FractionScheme::Net => "net",
        }
    }
}

/// Ascending fraction grid with midpoints. `count()` is `N`, the number of
/// cells (one quantile readout per cell).
#[derive(Debug, Clone, PartialEq)]
pub struct FractionSet {
    taus: Vec<f64>,
    midpoints: Vec<f64>,
}

impl FractionSet {
    /// Validate and wrap a fraction vector of length `N + 1`.
    pub fn new(taus: Vec<f64>) -> Result<Self> {
        if taus.len() < 2 {
            return Err(Error::Config(format!(
                "a fraction set needs at least [0, 1], got {} entries",
                taus.len()
            )));
        }
        if taus[0] != 0.0 || *taus.last().expect("nonempty") != 1.0 {
            return Err(Error::Config(format!(
                "fractions must start at 0 and end at 1, got [{}, {}]",
                taus[0],
                taus.last().expect("nonempty")
            )));
        }
        for w in taus.windows(2) {
            if !(w[1] > w[0]) {
                return Err(Error::Config(format!(
                    "fractions must ascend strictly, got {} then {}",
                    w[0], w[1]
                )));
            }
        }
        if taus.iter().any(|t| !t.is_finite()) {
            return Err(Error::NonFinite("fraction grid contains a non-finite entry".into()));
        }
        let midpoints = taus.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
        Ok(FractionSet { taus, midpoints })
    }

    /// Number of cells `N`.
    pub fn count(&self) -> usize {
        self.midpoints.len()
    }

    /// The full ascending grid, length `N + 1`.
    pub fn taus(&self) -> &[f64] {
        &self.taus
    }

    /// Cell midpoints, length `N`, each strictly inside `(0, 1)`.
    pub fn midpoints(&self) -> &[f64] {
        &self.midpoints
    }

    /// Cell widths `tau_{i+1} - tau_i`, the weights of the expectation
    /// readout. They sum to 1.
    pub fn weights(&self) -> Vec<f64> {
        self.taus.windows(2).map(|w| w[1] - w[0]).collect()
    }
}

/// Uniform grid `tau_i = i / N`.
pub fn fix_fractions(n: usize) -> Result<FractionSet> {
    if n == 0 {
        return Err(Error::Config("fraction count must be at least 1".into()));
    }
    let taus = (0..=n).map(|i| i as f64 / n as f64).collect();
    FractionSet::new(taus)
}

/// Build the grid from positive increments: `tau_i` is the cumulative sum of
/// the first `i` entries divided by the total.
pub(crate) fn fractions_from_increments(eps: &[f64]) -> Result<FractionSet> {
    if eps.is_empty() {
        return Err(Error::Config("fraction count must be at least 1".into()));
    }
    if eps.iter().any(|&e| !(e > 0.0) || !e.is_finite()) {
        return Err(Error::Config("fraction increments must be positive and finite".into()));
    }
    let total: f64 = eps.iter().sum();
    let mut taus = Vec::with_capacity(eps.len() + 1);
    taus.push(0.0);
    let mut acc = 0.0;
    for &e in eps {
        acc += e;
        taus.push(acc / total);
    }
    *taus.last_mut().expect("nonempty") = 1.0;
    FractionSet::new(taus)
}

/// Random grid: N uniform draws, cumulated and normalized. Degenerate zero
/// draws (measure zero) are resampled so the grid stays strictly ascending.
pub fn random_fractions(n: usize, rng: &mut impl Rng) -> Result<FractionSet> {
    if n == 0 {
        return Err(Error::Config("fraction count must be at least 1".into()));
    }
    let mut eps = vec![0.0f64; n];
    for e in &mut eps {
        loop {
            let draw: f64 = rng.gen();
            if draw > 0.0 {
                *e = draw;
                break;
            }
        }
    }
    fractions_from_increments(&eps)
}

// ---------------------------------------------------------------------------
// learned proposal network
// ---------------------------------------------------------------------------

/// State-action conditioned fraction proposal: one 128-unit hidden layer, a
/// softmax head of width `N`, and cumulative sums as the fractions.
#[derive(Debug, Clone)]
pub struct FractionProposalNet {
    pub params: ParamVec,
    input_dim: usize,
    n: usize,
}

/// Node handles for a proposal forward pass built on a caller-owned tape.
pub struct ProposalGraph {
    pub param_nodes: Vec<NodeId>,
    /// `[rows, N]` cumulative softmax outputs: column `i` holds `tau_{i+1}`.
    pub cumsum: NodeId,
}

impl FractionProposalNet {
    pub const HIDDEN: usize = 128;

    pub fn new(input_dim: usize, n: usize, rng: &mut impl Rng) -> Result<Self> {
        if n == 0 {
            return Err(Error::Config("fraction count must be at least 1".into()));
        }
        if input_dim == 0 {
            return Err(Error::Config("proposal network needs a nonempty input".into()));
        }
        let hidden = Self::HIDDEN;
        let mut params = ParamVec::new();
        params.add("proposal.w1", Tensor::fan_in_init(input_dim, hidden, input_dim, rng));
        params.add("proposal.b1", Tensor::fan_in_init(1, hidden, input_dim, rng));
        params.add("proposal.w2", Tensor::fan_in_init(hidden, n, hidden, rng));
        params.add("proposal.b2", Tensor::fan_in_init(1, n, hidden, rng));
        Ok(FractionProposalNet { params, input_dim, n })
    }

    pub fn fraction_count(&self) -> usize {
        self.n
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    /// Build the forward graph for a batch of inputs; parameters are bound as
    /// differentiable leaves so the caller can train them.
    pub fn build(&self, tape: &mut Tape, inputs: &Tensor) -> Result<ProposalGraph> {
        if inputs.cols() != self.input_dim {
            return Err(Error::Shape(format!(
                "proposal network expects {} input columns, got {}",
                self.input_dim,
                inputs.cols()
            )));
        }
        let param_nodes = self.params.bind(tape);
        let x = tape.leaf(inputs.clone());
        let h = tape.dense(x, param_nodes[0], param_nodes[1])?;
        let h = tape.relu(h)?;
        let logits = tape.dense(h, param_nodes[2], param_nodes[3])?;
        let probs = tape.row_softmax(logits)?;
        let cumsum = tape.row_cumsum(probs)?;
        Ok(ProposalGraph { param_nodes, cumsum })
    }

    /// Fractions for a single state-action input.
    pub fn fractions(&self, input: &[f64]) -> Result<FractionSet> {
        let mut tape = Tape::new();
        let graph = self.build(&mut tape, &Tensor::row(input))?;
        let row = tape.value(graph.cumsum).row_slice(0).to_vec();
        self.fractions_from_cumsum(&row)
    }

    /// Convert one cumulative-softmax row into a validated fraction set.
    pub fn fractions_from_cumsum(&self, row: &[f64]) -> Result<FractionSet> {
        if row.iter().any(|t| !t.is_finite()) {
            return Err(Error::NonFinite(
                "proposal network produced a non-finite fraction (softmax/cumsum head)".into(),
            ));
        }
        let mut taus = Vec::with_capacity(row.len() + 1);
        taus.push(0.0);
        taus.extend_from_slice(row);
        *taus.last_mut().expect("nonempty") = 1.0;
        FractionSet::new(taus)
    }
}

// ---------------------------------------------------------------------------
// 1-Wasserstein fraction gradient
// ---------------------------------------------------------------------------

/// Gradient of the 1-Wasserstein error of a piecewise-constant quantile
/// approximation with respect to the interior fraction `tau_i`:
/// `2 Z(tau_i) - Z(tauhat_i) - Z(tauhat_{i-1})`.
///
/// Only interior fractions move; `i` must satisfy `0 < i < n`.
pub fn fqf_fraction_grad(
    i: usize,
    n: usize,
    z_at_tau: f64,
    z_at_mid: f64,
    z_at_prev_mid: f64,
) -> Result<f64> {
    if i == 0 || i >= n {
        return Err(Error::Domain(format!(
            "fraction {i} of {n} is a pinned endpoint and carries no gradient"
        )));
    }
    Ok(2.0 * z_at_tau - z_at_mid - z_at_prev_mid)
}

/// [`fqf_fraction_grad`] for every interior fraction at once.
///
/// `z_interior[k]` holds the quantile value at `tau_{k+1}` (k = 0..N-2) and
/// `z_mid[i]` the value at midpoint `tauhat_i` (i = 0..N-1).
pub fn fqf_fraction_grads(z_interior: &[f64], z_mid: &[f64]) -> Result<Vec<f64>> {
    if z_mid.len() != z_interior.len() + 1 {
        return Err(Error::Shape(format!(
            "fraction gradient needs N midpoint values and N-1 interior values, got {} and {}",
            z_mid.len(),
            z_interior.len()
        )));
    }
    let n = z_mid.len();
    z_interior
        .iter()
        .enumerate()
        .map(|(k, &z)| fqf_fraction_grad(k + 1, n, z, z_mid[k + 1], z_mid[k]))
        .collect()
}

/// Exact 1-Wasserstein distance between a nondecreasing quantile function and
/// its piecewise-constant approximation on `fractions` (value `q(tauhat_i)`
/// on cell i). `antideriv` must be an antiderivative of `quantile`.
pub fn piecewise_w1(
    fractions: &FractionSet,
    quantile: impl Fn(f64) -> f64,
    antideriv: impl Fn(f64) -> f64,
) -> f64 {
    let taus = fractions.taus();
    let mids = fractions.midpoints();
    let mut total = 0.0;
    for i in 0..fractions.count() {
        let (lo, hi, m) = (taus[i], taus[i + 1], mids[i]);
        let q = quantile(m);
        // below the midpoint the approximation over-estimates, above it
        // under-estimates; both pieces are nonnegative for monotone quantiles
        let below = q * (m - lo) - (antideriv(m) - antideriv(lo));
        let above = (antideriv(hi) - antideriv(m)) - q * (hi - m);
        total += below + above;
    }
    total
}
