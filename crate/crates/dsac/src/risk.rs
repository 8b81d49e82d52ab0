//! Risk-sensitive readouts of quantile-represented return distributions.
//!
//! Every readout consumes the same data: quantile values `z[i]` at the
//! midpoints of a [`FractionSet`]. The neutral readout is the expectation
//! `sum_i (tau_{i+1} - tau_i) z[i]`; the risk-aware ones either pick a
//! percentile (VaR), penalize spread (mean minus a multiple of the standard
//! deviation), or reweight the quantiles with the derivative of a distortion
//! function evaluated at the cell midpoints (CPW, Wang, CVaR).

use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::fractions::FractionSet;

/// Distortion families for the reweighting readout.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Distortion {
    /// Cumulative probability weighting, `g(t) = t^b / (t^b + (1-t)^b)^(1/b)`.
    /// `b = 0.71` matches human weighting experiments; `b = 1` is identity.
    Cpw,
    /// Wang transform, `g(t) = Phi(Phi^-1(t) + b)`; positive `b` shifts
    /// weight onto low quantiles (risk-averse), negative onto high ones
    /// (risk-seeking).
    Wang,
    /// Conditional value at risk, `g(t) = min(t / b, 1)`: the mean of the
    /// worst `b` fraction of outcomes.
    Cvar,
}

/// A risk objective: how to collapse a return distribution into a scalar.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RiskSpec {
    /// Plain expectation.
    Neutral,
    /// Value at risk: the `beta` quantile of the return.
    Var { beta: f64 },
    /// Mean minus `beta` standard deviations.
    MeanVariance { beta: f64 },
    /// Distorted expectation under the given family.
    Distorted { family: Distortion, beta: f64 },
}

impl RiskSpec {
    /// Validate the parameter range for the chosen objective.
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            RiskSpec::Neutral => true,
            RiskSpec::Var { beta } => (0.0..=1.0).contains(&beta),
            RiskSpec::MeanVariance { beta } => beta >= 0.0 && beta.is_finite(),
            RiskSpec::Distorted { family, beta } => beta_valid(family, beta),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("risk parameter out of range: {self:?}")))
        }
    }

    /// Parse a CLI-style name plus parameter. `beta` may be omitted only for
    /// `neutral`; `cpw` without a parameter uses the canonical 0.71.
    pub fn parse(name: &str, beta: Option<f64>) -> Result<Self> {
        let spec = match name {
            "neutral" => RiskSpec::Neutral,
            "var" => RiskSpec::Var { beta: require(name, beta)? },
            "mean_variance" => RiskSpec::MeanVariance { beta: require(name, beta)? },
            "cpw" => RiskSpec::Distorted { family: Distortion::Cpw, beta: beta.unwrap_or(0.71) },
            "wang" => RiskSpec::Distorted { family: Distortion::Wang, beta: require(name, beta)? },
            "cvar" => RiskSpec::Distorted { family: Distortion::Cvar, beta: require(name, beta)? },
            other => {
                return Err(Error::Config(format!(
                    "unknown risk objective '{other}' (expected neutral, var, mean_variance, cpw, wang, or cvar)"
                )))
            }
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Collapse quantile values at the fraction midpoints into the scalar
    /// objective value. The percentile objective interpolates the midpoint
    /// values; when the continuous quantile curve itself is available,
    /// prefer [`RiskSpec::value_with_critic`].
    pub fn value(&self, quantiles: &[f64], fractions: &FractionSet) -> Result<f64> {
        check_lengths(quantiles, fractions)?;
        self.validate()?;
        match *self {
            RiskSpec::Neutral => expectation(quantiles, fractions),
            RiskSpec::Var { beta } => {
                Ok(var_weights(fractions, beta).iter().zip(quantiles).map(|(w, z)| w * z).sum())
            }
            RiskSpec::MeanVariance { beta } => {
                let mean = expectation(quantiles, fractions)?;
                let var = variance_estimate(quantiles, fractions)?;
                Ok(mean - beta * var.max(0.0).sqrt())
            }
            RiskSpec::Distorted { family, beta } => {
                distorted_expectation(quantiles, fractions, family, beta)
            }
        }
    }

    /// Like [`RiskSpec::value`], but reads the percentile objective from the
    /// continuous quantile curve `critic_at` (defined for every fraction in
    /// `[0, 1]`) instead of interpolating the midpoint estimates.
    pub fn value_with_critic(
        &self,
        quantiles: &[f64],
        fractions: &FractionSet,
        critic_at: impl Fn(f64) -> f64,
    ) -> Result<f64> {
        match *self {
            RiskSpec::Var { beta } => var_value(critic_at, beta),
            _ => self.value(quantiles, fractions),
        }
    }

    /// Linear readout weights `w` such that the objective is `sum_i w[i] z[i]`,
    /// when the objective is linear in the quantile values (everything except
    /// the mean-variance penalty, which is quadratic).
    pub fn linear_weights(&self, fractions: &FractionSet) -> Result<Option<Vec<f64>>> {
        self.validate()?;
        Ok(match *self {
            RiskSpec::Neutral => Some(fractions.weights()),
            RiskSpec::Var { beta } => Some(var_weights(fractions, beta)),
            RiskSpec::MeanVariance { .. } => None,
            RiskSpec::Distorted { family, beta } => {
                Some(distortion_weights(fractions, family, beta)?)
            }
        })
    }
}

fn require(name: &str, beta: Option<f64>) -> Result<f64> {
    beta.ok_or_else(|| Error::Config(format!("risk objective '{name}' needs a beta parameter")))
}

fn beta_valid(family: Distortion, beta: f64) -> bool {
    match family {
        Distortion::Cpw => beta > 0.0 && beta.is_finite(),
        Distortion::Wang => beta.is_finite(),
        Distortion::Cvar => beta > 0.0 && beta < 1.0,
    }
}

fn check_beta(family: Distortion, beta: f64) -> Result<()> {
    if beta_valid(family, beta) {
        Ok(())
    } else {
        Err(Error::Config(format!("{family:?} parameter {beta} out of range")))
    }
}

fn check_lengths(quantiles: &[f64], fractions: &FractionSet) -> Result<()> {
    if quantiles.len() != fractions.count() {
        return Err(Error::Shape(format!(
            "{} quantile values for {} fraction cells",
            quantiles.len(),
            fractions.count()
        )));
    }
    Ok(())
}

/// A return distribution summarized by its quantile values at the midpoints
/// of a fraction set.
#[derive(Debug, Clone)]
pub struct QuantileEstimate {
    fractions: FractionSet,
    values: Vec<f64>,
}

impl QuantileEstimate {
    pub fn new(fractions: FractionSet, values: Vec<f64>) -> Result<Self> {
        if values.len() != fractions.count() {
            return Err(Error::Shape(format!(
                "{} quantile values for {} fraction midpoints",
                values.len(),
                fractions.count()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("quantile estimate holds a non-finite value".into()));
        }
        Ok(QuantileEstimate { fractions, values })
    }

    pub fn fractions(&self) -> &FractionSet {
        &self.fractions
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn expectation(&self) -> f64 {
        expectation(&self.values, &self.fractions).expect("validated at construction")
    }

    pub fn variance(&self) -> f64 {
        variance_estimate(&self.values, &self.fractions).expect("validated at construction")
    }

    /// Collapse to a scalar under the given risk objective.
    pub fn value(&self, spec: &RiskSpec) -> Result<f64> {
        spec.value(&self.values, &self.fractions)
    }
}

/// Expectation readout: cell widths as weights.
pub fn expectation(quantiles: &[f64], fractions: &FractionSet) -> Result<f64> {
    check_lengths(quantiles, fractions)?;
    Ok(fractions.weights().iter().zip(quantiles).map(|(w, z)| w * z).sum())
}

/// Second-moment-based variance of the quantile representation.
pub fn variance_estimate(quantiles: &[f64], fractions: &FractionSet) -> Result<f64> {
    check_lengths(quantiles, fractions)?;
    let weights = fractions.weights();
    let mean: f64 = weights.iter().zip(quantiles).map(|(w, z)| w * z).sum();
    Ok(weights.iter().zip(quantiles).map(|(w, z)| w * (z - mean) * (z - mean)).sum())
}

/// Percentile readout from the continuous quantile curve: the curve
/// evaluated at fraction `beta`.
pub fn var_value(critic_at: impl Fn(f64) -> f64, beta: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::Config(format!("percentile level must be in [0, 1], got {beta}")));
    }
    Ok(critic_at(beta))
}

/// Interpolation weights for the `beta` percentile over midpoint estimates:
/// piecewise linear between neighboring midpoints, clamped to the end cells.
fn var_weights(fractions: &FractionSet, beta: f64) -> Vec<f64> {
    let mids = fractions.midpoints();
    let n = mids.len();
    let mut weights = vec![0.0; n];
    if beta <= mids[0] {
        weights[0] = 1.0;
    } else if beta >= mids[n - 1] {
        weights[n - 1] = 1.0;
    } else {
        let k = mids.partition_point(|&m| m < beta) - 1;
        let lambda = (beta - mids[k]) / (mids[k + 1] - mids[k]);
        weights[k] = 1.0 - lambda;
        weights[k + 1] = lambda;
    }
    weights
}

/// Distortion function `g` on `[0, 1]`: non-decreasing with `g(0) = 0` and
/// `g(1) = 1` (Wang endpoints by limit).
pub fn distortion_g(family: Distortion, beta: f64, tau: f64) -> Result<f64> {
    check_beta(family, beta)?;
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::Domain(format!("distortion input {tau} outside [0, 1]")));
    }
    Ok(match family {
        Distortion::Cpw => {
            if tau == 0.0 || tau == 1.0 {
                tau
            } else {
                let a = tau.powf(beta);
                let b = (1.0 - tau).powf(beta);
                a / (a + b).powf(1.0 / beta)
            }
        }
        Distortion::Wang => {
            if tau == 0.0 || tau == 1.0 {
                tau
            } else {
                let normal = Normal::standard();
                normal.cdf(normal.inverse_cdf(tau) + beta)
            }
        }
        Distortion::Cvar => (tau / beta).min(1.0),
    })
}

/// Analytic derivative `g'` of the distortion function, for `tau` strictly
/// inside `(0, 1)` (the midpoints always are).
pub fn distortion_dg(family: Distortion, beta: f64, tau: f64) -> Result<f64> {
    check_beta(family, beta)?;
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::Domain(format!("distortion slope needs tau in (0, 1), got {tau}")));
    }
    Ok(match family {
        Distortion::Cpw => {
            // g = A * S^(-1/b) with A = t^b, B = (1-t)^b, S = A + B
            let a = tau.powf(beta);
            let b = (1.0 - tau).powf(beta);
            let s = a + b;
            let da = beta * tau.powf(beta - 1.0);
            let ds_over_beta = tau.powf(beta - 1.0) - (1.0 - tau).powf(beta - 1.0);
            s.powf(-1.0 / beta) * (da - a / s * ds_over_beta)
        }
        Distortion::Wang => {
            // phi(u + b) / phi(u) at u = Phi^-1(tau)
            let u = Normal::standard().inverse_cdf(tau);
            (-beta * u - 0.5 * beta * beta).exp()
        }
        Distortion::Cvar => {
            if tau < beta {
                1.0 / beta
            } else {
                0.0
            }
        }
    })
}

/// Per-cell weights `g'(tauhat_i) * (tau_{i+1} - tau_i)` for the distorted
/// expectation. Evaluating `g'` at midpoints keeps clear of the endpoint
/// singularities of the CPW and Wang slopes.
pub fn distortion_weights(
    fractions: &FractionSet,
    family: Distortion,
    beta: f64,
) -> Result<Vec<f64>> {
    fractions
        .midpoints()
        .iter()
        .zip(fractions.weights())
        .map(|(&m, w)| Ok(distortion_dg(family, beta, m)? * w))
        .collect()
}

/// Distorted expectation: quantiles reweighted by the distortion derivative
/// at the cell midpoints.
pub fn distorted_expectation(
    quantiles: &[f64],
    fractions: &FractionSet,
    family: Distortion,
    beta: f64,
) -> Result<f64> {
    check_lengths(quantiles, fractions)?;
    Ok(distortion_weights(fractions, family, beta)?
        .iter()
        .zip(quantiles)
        .map(|(w, z)| w * z)
        .sum())
}

/// Risk readout of an empirical sample: sorts the values and treats them as
/// quantiles on the uniform grid.
pub fn risk_value(spec: &RiskSpec, samples: &[f64]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Domain("risk readout of an empty sample".into()));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("risk readout over non-finite samples".into()));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite samples"));
    let fractions = crate::fractions::fix_fractions(sorted.len())?;
    spec.value(&sorted, &fractions)
}

/// Standard normal density.
pub fn std_normal_pdf(x: f64) -> f64 {
    Normal::standard().pdf(x)
}

/// Standard normal cumulative distribution function.
pub fn std_normal_cdf(x: f64) -> f64 {
    Normal::standard().cdf(x)
}

/// Standard normal quantile function.
pub fn std_normal_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}
