//! Per-loop control cost functions and runtime quadratic-cost accumulation.
//!
//! Each loop carries a cost J_i(f) of its sampling frequency. The standard
//! form is the reciprocal approximation J_i(f) = alpha_i + gamma_i / f;
//! arbitrary convex decreasing costs are supported as long as the caller
//! supplies the first derivative alongside the value.

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum CostError {
    #[error("cost is undefined for non-positive frequency {0}")]
    NonPositiveFrequency(f64),
    #[error("negative time step {0}")]
    NegativeDt(f64),
    #[error("accumulator/weight length mismatch: {accumulators} vs {weights}")]
    LengthMismatch { accumulators: usize, weights: usize },
}

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Functional form of a loop's cost, as a function of sampling frequency.
#[derive(Clone)]
pub enum CostForm {
    /// alpha + gamma / f; strictly decreasing and convex for gamma > 0.
    Reciprocal { alpha: f64, gamma: f64 },
    /// Arbitrary convex decreasing cost with an explicit first derivative.
    /// No numerical differentiation happens inside the solvers.
    CustomConvex { value: ScalarFn, derivative: ScalarFn },
}

impl fmt::Debug for CostForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CostForm::Reciprocal { alpha, gamma } => f
                .debug_struct("Reciprocal")
                .field("alpha", alpha)
                .field("gamma", gamma)
                .finish(),
            CostForm::CustomConvex { .. } => f.write_str("CustomConvex"),
        }
    }
}

/// A weighted per-loop cost function.
#[derive(Debug, Clone)]
pub struct CostFunction {
    pub form: CostForm,
    /// Relative importance of the loop; must be positive.
    pub weight: f64,
}

impl CostFunction {
    /// The reciprocal form with the offset defaulted to zero: the offset only
    /// shifts the objective by a constant and never moves the argmin.
    pub fn reciprocal(gamma: f64, weight: f64) -> Self {
        Self {
            form: CostForm::Reciprocal { alpha: 0.0, gamma },
            weight,
        }
    }

    pub fn reciprocal_with_offset(alpha: f64, gamma: f64, weight: f64) -> Self {
        Self {
            form: CostForm::Reciprocal { alpha, gamma },
            weight,
        }
    }

    pub fn custom<V, D>(value: V, derivative: D, weight: f64) -> Self
    where
        V: Fn(f64) -> f64 + Send + Sync + 'static,
        D: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        Self {
            form: CostForm::CustomConvex {
                value: Arc::new(value),
                derivative: Arc::new(derivative),
            },
            weight,
        }
    }

    /// Unweighted cost J(f).
    pub fn cost_at(&self, f: f64) -> Result<f64, CostError> {
        if !(f > 0.0) {
            return Err(CostError::NonPositiveFrequency(f));
        }
        Ok(match &self.form {
            CostForm::Reciprocal { alpha, gamma } => alpha + gamma / f,
            CostForm::CustomConvex { value, .. } => value(f),
        })
    }

    /// Unweighted derivative dJ/df.
    pub fn derivative_at(&self, f: f64) -> Result<f64, CostError> {
        if !(f > 0.0) {
            return Err(CostError::NonPositiveFrequency(f));
        }
        Ok(match &self.form {
            CostForm::Reciprocal { gamma, .. } => -gamma / (f * f),
            CostForm::CustomConvex { derivative, .. } => derivative(f),
        })
    }
}

/// Running integral of (y^2 + u^2) dt for one control loop.
///
/// The continuous-time integral is discretized with the left-rectangle rule
/// at the plant micro-step, consistent with the zero-order hold on u.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CostAccumulator {
    pub total: f64,
    pub last_time: f64,
}

impl CostAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    /// Add (y^2 + u^2) * dt and advance the clock.
    pub fn accumulate(&mut self, y: f64, u: f64, dt: f64) -> Result<(), CostError> {
        if dt < 0.0 {
            return Err(CostError::NegativeDt(dt));
        }
        self.total += (y * y + u * u) * dt;
        self.last_time += dt;
        Ok(())
    }
}

/// Weighted total J_SUM = sum(w_i * total_i).
pub fn total_cost(accumulators: &[CostAccumulator], weights: &[f64]) -> Result<f64, CostError> {
    if accumulators.len() != weights.len() {
        return Err(CostError::LengthMismatch {
            accumulators: accumulators.len(),
            weights: weights.len(),
        });
    }
    Ok(accumulators
        .iter()
        .zip(weights)
        .map(|(a, w)| w * a.total)
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn reciprocal_cost_matches_direct_division() {
        // gamma values from the three pendulum loops; checked against
        // an independent evaluation of gamma / f.
        let c = CostFunction::reciprocal(43.0, 1.0);
        assert!((c.cost_at(58.8).unwrap() - 0.7313).abs() < 1e-4);
        let c = CostFunction::reciprocal(95.0, 1.0);
        assert!((c.cost_at(83.3).unwrap() - 1.1405).abs() < 1e-4);
    }

    #[test]
    fn constant_cost_when_gamma_zero() {
        let c = CostFunction::reciprocal_with_offset(1.0, 0.0, 1.0);
        for f in [0.1, 1.0, 50.0, 500.0] {
            assert_relative_eq!(c.cost_at(f).unwrap(), 1.0);
        }
    }

    #[test]
    fn non_positive_frequency_is_domain_error() {
        let c = CostFunction::reciprocal(43.0, 1.0);
        assert_eq!(
            c.cost_at(0.0).unwrap_err(),
            CostError::NonPositiveFrequency(0.0)
        );
        assert!(c.cost_at(-3.0).is_err());
        assert!(c.derivative_at(0.0).is_err());
    }

    #[test]
    fn reciprocal_is_strictly_decreasing_and_convex() {
        let c = CostFunction::reciprocal(67.0, 1.0);
        let fs: Vec<f64> = (1..200).map(|k| k as f64 * 0.75).collect();
        let vals: Vec<f64> = fs.iter().map(|&f| c.cost_at(f).unwrap()).collect();
        for w in vals.windows(2) {
            assert!(w[1] < w[0], "cost must strictly decrease");
        }
        // second differences non-negative on the uniform grid
        for w in vals.windows(3) {
            assert!(w[2] - 2.0 * w[1] + w[0] >= 0.0, "cost must be convex");
        }
    }

    #[test]
    fn accumulate_zero_integrand_leaves_total_unchanged() {
        let mut acc = CostAccumulator::new();
        acc.accumulate(0.0, 0.0, 0.01).unwrap();
        assert_eq!(acc.total, 0.0);
        assert_relative_eq!(acc.last_time, 0.01);
    }

    #[test]
    fn accumulate_unit_output_over_one_second() {
        let mut acc = CostAccumulator::new();
        for _ in 0..100 {
            acc.accumulate(1.0, 0.0, 0.01).unwrap();
        }
        assert_relative_eq!(acc.total, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn accumulate_splits_constant_interval_exactly() {
        let mut twice = CostAccumulator::new();
        twice.accumulate(0.3, -0.7, 0.01).unwrap();
        twice.accumulate(0.3, -0.7, 0.01).unwrap();
        let mut once = CostAccumulator::new();
        once.accumulate(0.3, -0.7, 0.02).unwrap();
        assert_relative_eq!(twice.total, once.total, epsilon = 1e-15);
    }

    #[test]
    fn negative_dt_rejected() {
        let mut acc = CostAccumulator::new();
        assert_eq!(
            acc.accumulate(1.0, 1.0, -0.01).unwrap_err(),
            CostError::NegativeDt(-0.01)
        );
    }

    #[test]
    fn total_cost_weights_and_sums() {
        let accs: Vec<CostAccumulator> = [1.0, 2.0, 3.0]
            .iter()
            .map(|&t| CostAccumulator {
                total: t,
                last_time: 0.0,
            })
            .collect();
        assert_relative_eq!(total_cost(&accs, &[1.0, 1.0, 1.0]).unwrap(), 6.0);
        assert_relative_eq!(total_cost(&accs[..2], &[2.0, 0.0]).unwrap(), 2.0);
    }

    #[test]
    fn total_cost_length_mismatch_is_error() {
        let accs = vec![CostAccumulator::new()];
        assert_eq!(
            total_cost(&accs, &[1.0, 1.0]).unwrap_err(),
            CostError::LengthMismatch {
                accumulators: 1,
                weights: 2
            }
        );
    }
}
