//! Training data: exact optimizer solutions tabulated over a grid of
//! problem instances, plus the min-max scaling fitted to them.

use nalgebra::{DMatrix, DVector};

use super::NeuralError;
use crate::cost::CostFunction;
use crate::optimizer::{solve_closed_form, OptimizationProblem};

/// A supervised set of (execution times + budget) -> optimal periods.
///
/// Feature columns are the per-loop execution times in seconds followed by
/// the available utilization; target columns are the optimal sampling
/// periods in seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: DMatrix<f64>,
    pub targets: DMatrix<f64>,
}

impl Dataset {
    pub fn rows(&self) -> usize {
        self.features.nrows()
    }

    pub fn n_in(&self) -> usize {
        self.features.ncols()
    }

    pub fn n_out(&self) -> usize {
        self.targets.ncols()
    }

    /// Assemble a dataset from row-major feature and target rows, as
    /// read back from a dataset file.
    pub fn from_rows(
        features: Vec<Vec<f64>>,
        targets: Vec<Vec<f64>>,
    ) -> Result<Self, NeuralError> {
        if features.is_empty() || features[0].is_empty() || targets.first().is_none_or(Vec::is_empty) {
            return Err(NeuralError::EmptyDataset);
        }
        if targets.len() != features.len() {
            return Err(NeuralError::DimensionMismatch {
                what: "target rows",
                expected: features.len(),
                got: targets.len(),
            });
        }
        let n_in = features[0].len();
        let n_out = targets[0].len();
        for row in &features {
            if row.len() != n_in {
                return Err(NeuralError::DimensionMismatch {
                    what: "feature row width",
                    expected: n_in,
                    got: row.len(),
                });
            }
        }
        for row in &targets {
            if row.len() != n_out {
                return Err(NeuralError::DimensionMismatch {
                    what: "target row width",
                    expected: n_out,
                    got: row.len(),
                });
            }
        }
        let rows = features.len();
        Ok(Self {
            features: DMatrix::from_fn(rows, n_in, |r, c| features[r][c]),
            targets: DMatrix::from_fn(rows, n_out, |r, c| targets[r][c]),
        })
    }

    /// The standard three-pendulum training grid: execution times swept
    /// over 2..9 ms, 2..7 ms, and 1..7 ms in 1 ms steps, and the budget
    /// left for control over 0.45..0.70 in 0.05 steps; 8 x 6 x 7 x 6 =
    /// 2016 instances solved exactly.
    pub fn default_grid() -> Result<Self, NeuralError> {
        let ms = 1e-3;
        let grids = vec![
            (2..=9).map(|k| k as f64 * ms).collect::<Vec<_>>(),
            (2..=7).map(|k| k as f64 * ms).collect::<Vec<_>>(),
            (1..=7).map(|k| k as f64 * ms).collect::<Vec<_>>(),
        ];
        let u_values: Vec<f64> = (0..6).map(|k| 0.45 + 0.05 * k as f64).collect();
        let costs = vec![
            CostFunction::reciprocal(43.0, 1.0),
            CostFunction::reciprocal(67.0, 1.0),
            CostFunction::reciprocal(95.0, 1.0),
        ];
        gen_dataset(
            &costs,
            &grids,
            &u_values,
            OptimizationProblem::DEFAULT_F_BOUNDS,
        )
    }
}

/// Tabulate the exact optimizer over the cartesian product of the
/// per-loop execution-time grids and the budget values.
pub fn gen_dataset(
    costs: &[CostFunction],
    exec_grids: &[Vec<f64>],
    u_values: &[f64],
    f_bounds: (f64, f64),
) -> Result<Dataset, NeuralError> {
    let n = costs.len();
    if exec_grids.len() != n {
        return Err(NeuralError::DimensionMismatch {
            what: "execution-time grids",
            expected: n,
            got: exec_grids.len(),
        });
    }
    let rows: usize = exec_grids
        .iter()
        .map(|g| g.len())
        .product::<usize>()
        .saturating_mul(u_values.len());
    if rows == 0 {
        return Err(NeuralError::EmptyDataset);
    }

    let mut features = DMatrix::zeros(rows, n + 1);
    let mut targets = DMatrix::zeros(rows, n);
    let mut idx = vec![0usize; n];
    let mut row = 0;
    'outer: loop {
        let exec: Vec<f64> = idx.iter().enumerate().map(|(d, &k)| exec_grids[d][k]).collect();
        for &u in u_values {
            let problem = OptimizationProblem::with_bounds(
                costs.to_vec(),
                exec.clone(),
                u,
                f_bounds,
            );
            let solution = solve_closed_form(&problem)?;
            for d in 0..n {
                features[(row, d)] = exec[d];
                targets[(row, d)] = solution.periods[d];
            }
            features[(row, n)] = u;
            row += 1;
        }
        // odometer over the execution-time grids
        let mut d = n;
        loop {
            if d == 0 {
                break 'outer;
            }
            d -= 1;
            idx[d] += 1;
            if idx[d] < exec_grids[d].len() {
                break;
            }
            idx[d] = 0;
        }
    }
    debug_assert_eq!(row, rows);
    Ok(Dataset { features, targets })
}

/// Column-wise min-max scaling of features and targets onto [0, 1].
///
/// A constant column keeps span 1 so it maps to 0 instead of dividing by
/// zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalizer {
    pub in_lo: DVector<f64>,
    pub in_span: DVector<f64>,
    pub out_lo: DVector<f64>,
    pub out_span: DVector<f64>,
}

impl Normalizer {
    pub fn fit(dataset: &Dataset) -> Result<Self, NeuralError> {
        if dataset.rows() == 0 {
            return Err(NeuralError::EmptyDataset);
        }
        let column_range = |m: &DMatrix<f64>| {
            let lo = DVector::from_fn(m.ncols(), |c, _| m.column(c).min());
            let span = DVector::from_fn(m.ncols(), |c, _| {
                let s = m.column(c).max() - m.column(c).min();
                if s > 0.0 {
                    s
                } else {
                    1.0
                }
            });
            (lo, span)
        };
        let (in_lo, in_span) = column_range(&dataset.features);
        let (out_lo, out_span) = column_range(&dataset.targets);
        Ok(Self {
            in_lo,
            in_span,
            out_lo,
            out_span,
        })
    }

    pub fn normalize_input(&self, raw: &[f64]) -> DVector<f64> {
        DVector::from_fn(raw.len(), |i, _| (raw[i] - self.in_lo[i]) / self.in_span[i])
    }

    pub fn denormalize_output(&self, y: &DVector<f64>) -> Vec<f64> {
        (0..y.len())
            .map(|i| self.out_lo[i] + y[i] * self.out_span[i])
            .collect()
    }

    pub fn normalize_target(&self, raw: &[f64]) -> DVector<f64> {
        DVector::from_fn(raw.len(), |i, _| {
            (raw[i] - self.out_lo[i]) / self.out_span[i]
        })
    }
}
