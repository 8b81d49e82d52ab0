//! Exact finitely-supported distributions.
//!
//! These back the tabular verification tools: return distributions are kept
//! as sorted weighted atoms, so Wasserstein distances, tail means, and
//! Bellman backups can be computed exactly instead of through sampling.

use crate::error::{Error, Result};

/// A probability distribution on finitely many points, stored as ascending
/// atoms with normalized positive weights.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalDist {
    atoms: Vec<f64>,
    weights: Vec<f64>,
}

impl EmpiricalDist {
    /// Sort, coalesce duplicate atoms, and normalize the weights.
    pub fn new(atoms: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::Domain("a distribution needs at least one atom".into()));
        }
        if atoms.len() != weights.len() {
            return Err(Error::Shape(format!(
                "{} atoms but {} weights",
                atoms.len(),
                weights.len()
            )));
        }
        if atoms.iter().any(|a| !a.is_finite()) || weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::NonFinite("distribution atoms/weights must be finite".into()));
        }
        if weights.iter().any(|&w| w < 0.0) {
            return Err(Error::Domain("distribution weights must be nonnegative".into()));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::Domain("distribution weights sum to zero".into()));
        }
        let mut pairs: Vec<(f64, f64)> =
            atoms.into_iter().zip(weights).filter(|&(_, w)| w > 0.0).collect();
        pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite atoms"));
        let mut out_atoms: Vec<f64> = Vec::with_capacity(pairs.len());
        let mut out_weights: Vec<f64> = Vec::with_capacity(pairs.len());
        for (a, w) in pairs {
            match out_atoms.last() {
                Some(&last) if last == a => *out_weights.last_mut().expect("paired") += w / total,
                _ => {
                    out_atoms.push(a);
                    out_weights.push(w / total);
                }
            }
        }
        Ok(EmpiricalDist { atoms: out_atoms, weights: out_weights })
    }

    /// Point mass at `x`.
    pub fn point(x: f64) -> Self {
        EmpiricalDist { atoms: vec![x], weights: vec![1.0] }
    }

    /// Equal-weight distribution over observed samples.
    pub fn from_samples(samples: &[f64]) -> Result<Self> {
        Self::new(samples.to_vec(), vec![1.0; samples.len()])
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn atoms(&self) -> &[f64] {
        &self.atoms
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn mean(&self) -> f64 {
        self.atoms.iter().zip(&self.weights).map(|(a, w)| a * w).sum()
    }

    pub fn variance(&self) -> f64 {
        let mean = self.mean();
        self.atoms.iter().zip(&self.weights).map(|(a, w)| w * (a - mean) * (a - mean)).sum()
    }

    /// Smallest atom whose cumulative weight reaches `u`.
    pub fn quantile(&self, u: f64) -> f64 {
        let u = u.clamp(0.0, 1.0);
        let mut cum = 0.0;
        for (a, w) in self.atoms.iter().zip(&self.weights) {
            cum += w;
            if cum >= u {
                return *a;
            }
        }
        *self.atoms.last().expect("nonempty")
    }

    /// Mean of the worst `beta` fraction of outcomes, exact with fractional
    /// weight on the boundary atom.
    pub fn cvar(&self, beta: f64) -> Result<f64> {
        if !(beta > 0.0 && beta <= 1.0) {
            return Err(Error::Domain(format!("tail fraction must be in (0, 1], got {beta}")));
        }
        let mut remaining = beta;
        let mut acc = 0.0;
        for (a, w) in self.atoms.iter().zip(&self.weights) {
            let take = w.min(remaining);
            acc += take * a;
            remaining -= take;
            if remaining <= 0.0 {
                break;
            }
        }
        Ok(acc / beta)
    }

    /// The distribution of `scale * X + shift`.
    pub fn affine(&self, scale: f64, shift: f64) -> Self {
        let atoms: Vec<f64> = self.atoms.iter().map(|a| scale * a + shift).collect();
        EmpiricalDist::new(atoms, self.weights.clone()).expect("affine image of a valid dist")
    }

    /// Mixture of weighted components; the component weights are normalized.
    pub fn mixture(parts: &[(f64, &EmpiricalDist)]) -> Result<Self> {
        if parts.is_empty() {
            return Err(Error::Domain("mixture of zero components".into()));
        }
        let mut atoms = Vec::new();
        let mut weights = Vec::new();
        for (p, dist) in parts {
            if !(*p >= 0.0) {
                return Err(Error::Domain(format!("mixture weight {p} is negative")));
            }
            for (a, w) in dist.atoms.iter().zip(&dist.weights) {
                atoms.push(*a);
                weights.push(p * w);
            }
        }
        EmpiricalDist::new(atoms, weights)
    }

    /// Reduce to at most `cap` atoms by splitting the weight range into
    /// equal-mass strata and replacing each stratum by its barycenter. The
    /// mean is preserved exactly; the 1-Wasserstein error is at most the
    /// value range divided by `cap`.
    pub fn condense(&self, cap: usize) -> Self {
        let cap = cap.max(1);
        if self.atoms.len() <= cap {
            return self.clone();
        }
        let target = 1.0 / cap as f64;
        let mut out_atoms = Vec::with_capacity(cap);
        let mut out_weights = Vec::with_capacity(cap);
        let (mut acc_w, mut acc_wx, mut consumed) = (0.0f64, 0.0f64, 0.0f64);
        let mut boundary_idx = 1usize;
        for (&x, &w0) in self.atoms.iter().zip(&self.weights) {
            let mut w = w0;
            while w > 0.0 {
                let boundary = if boundary_idx >= cap {
                    f64::INFINITY
                } else {
                    target * boundary_idx as f64
                };
                let take = w.min(boundary - consumed);
                if take > 0.0 {
                    acc_w += take;
                    acc_wx += take * x;
                    consumed += take;
                    w -= take;
                }
                if boundary.is_finite() && consumed >= boundary - 1e-15 {
                    if acc_w > 0.0 {
                        out_atoms.push(acc_wx / acc_w);
                        out_weights.push(acc_w);
                    }
                    acc_w = 0.0;
                    acc_wx = 0.0;
                    boundary_idx += 1;
                } else if take <= 0.0 {
                    // numeric drift left no room before the boundary
                    boundary_idx += 1;
                }
            }
        }
        if acc_w > 0.0 {
            out_atoms.push(acc_wx / acc_w);
            out_weights.push(acc_w);
        }
        EmpiricalDist::new(out_atoms, out_weights).expect("condensed distribution is valid")
    }

    /// Exact p-Wasserstein distance via the shared quantile grid: both
    /// quantile functions are step functions, so the defining integral is a
    /// finite sum over the merged cumulative breakpoints.
    pub fn wasserstein(&self, other: &EmpiricalDist, p: f64) -> Result<f64> {
        if !(p >= 1.0) {
            return Err(Error::Domain(format!("wasserstein order must be >= 1, got {p}")));
        }
        let cum = |weights: &[f64]| {
            let mut c = Vec::with_capacity(weights.len());
            let mut acc = 0.0;
            for w in weights {
                acc += w;
                c.push(acc);
            }
            *c.last_mut().expect("nonempty") = 1.0;
            c
        };
        let ca = cum(&self.weights);
        let cb = cum(&other.weights);
        let (mut i, mut j) = (0usize, 0usize);
        let mut level = 0.0;
        let mut cost = 0.0;
        while level < 1.0 {
            let next = ca[i].min(cb[j]);
            cost += (next - level).max(0.0) * (self.atoms[i] - other.atoms[j]).abs().powf(p);
            level = next;
            if ca[i] <= next && i + 1 < ca.len() && ca[i] <= cb[j] {
                i += 1;
            } else if cb[j] <= next && j + 1 < cb.len() {
                j += 1;
            } else if i + 1 < ca.len() {
                i += 1;
            } else {
                break;
            }
        }
        Ok(cost.powf(1.0 / p))
    }
}
