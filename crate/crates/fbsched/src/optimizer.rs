//! Optimal sampling-frequency assignment under a CPU utilization budget.
//!
//! The problem: given N control loops with convex decreasing costs J_i(f_i),
//! weights w_i, and per-job execution times c_i, choose frequencies
//!
//!   minimize   sum_i w_i J_i(f_i)
//!   subject to sum_i c_i f_i <= U_R,   f_lo <= f_i <= f_hi
//!
//! Three solvers are provided and cross-checked against each other:
//! an exact water-filling solution for reciprocal costs, a Lagrangian dual
//! bisection for arbitrary convex decreasing costs, and a grid-search oracle
//! used by the test suite.

use thiserror::Error;

use crate::cost::{CostError, CostForm, CostFunction};

/// Hard cap on the number of grid points the oracle may enumerate.
pub const MAX_ORACLE_POINTS: u128 = 100_000_000;

#[derive(Debug, Error, PartialEq)]
pub enum OptimizerError {
    #[error("problem has no loops")]
    Empty,
    #[error("costs/exec_times length mismatch: {costs} vs {exec_times}")]
    LengthMismatch { costs: usize, exec_times: usize },
    #[error("non-positive execution time {0}")]
    NonPositiveExecTime(f64),
    #[error("non-positive weight {0}")]
    NonPositiveWeight(f64),
    #[error("negative gamma {0} makes the cost increasing")]
    NegativeGamma(f64),
    #[error("non-positive utilization budget {0}")]
    NonPositiveBudget(f64),
    #[error("invalid frequency bounds [{0}, {1}]")]
    InvalidBounds(f64, f64),
    #[error("infeasible: minimum load {min_load} exceeds budget {budget}")]
    Infeasible { min_load: f64, budget: f64 },
    #[error("closed-form solver requires reciprocal costs")]
    NotReciprocal,
    #[error("grid would enumerate {points} points, above the cap of {limit}")]
    ResourceLimit { points: u128, limit: u128 },
    #[error("non-positive grid step {0}")]
    NonPositiveStep(f64),
    #[error("dual bisection stalled with budget gap {gap}")]
    DualConvergence { gap: f64 },
    #[error(transparent)]
    Cost(#[from] CostError),
}

/// One instance of the frequency-assignment problem.
#[derive(Debug, Clone)]
pub struct OptimizationProblem {
    pub costs: Vec<CostFunction>,
    /// Per-job execution time of each loop's control task, in seconds.
    pub exec_times: Vec<f64>,
    /// CPU utilization available to the control loops (0, 1].
    pub u_budget: f64,
    /// Shared frequency box [f_lo, f_hi] in Hz.
    pub f_bounds: (f64, f64),
}

impl OptimizationProblem {
    /// 5 Hz keeps every loop alive; 200 Hz is the actuation-rate ceiling.
    pub const DEFAULT_F_BOUNDS: (f64, f64) = (5.0, 200.0);

    pub fn new(costs: Vec<CostFunction>, exec_times: Vec<f64>, u_budget: f64) -> Self {
        Self::with_bounds(costs, exec_times, u_budget, Self::DEFAULT_F_BOUNDS)
    }

    pub fn with_bounds(
        costs: Vec<CostFunction>,
        exec_times: Vec<f64>,
        u_budget: f64,
        f_bounds: (f64, f64),
    ) -> Self {
        Self {
            costs,
            exec_times,
            u_budget,
            f_bounds,
        }
    }

    pub fn n(&self) -> usize {
        self.costs.len()
    }

    fn validate(&self) -> Result<(), OptimizerError> {
        if self.costs.is_empty() {
            return Err(OptimizerError::Empty);
        }
        if self.costs.len() != self.exec_times.len() {
            return Err(OptimizerError::LengthMismatch {
                costs: self.costs.len(),
                exec_times: self.exec_times.len(),
            });
        }
        for &c in &self.exec_times {
            if !(c > 0.0) {
                return Err(OptimizerError::NonPositiveExecTime(c));
            }
        }
        for cost in &self.costs {
            if !(cost.weight > 0.0) {
                return Err(OptimizerError::NonPositiveWeight(cost.weight));
            }
            if let CostForm::Reciprocal { gamma, .. } = cost.form {
                if gamma < 0.0 {
                    return Err(OptimizerError::NegativeGamma(gamma));
                }
            }
        }
        if !(self.u_budget > 0.0) {
            return Err(OptimizerError::NonPositiveBudget(self.u_budget));
        }
        let (lo, hi) = self.f_bounds;
        if !(lo > 0.0 && hi > lo) {
            return Err(OptimizerError::InvalidBounds(lo, hi));
        }
        let min_load: f64 = self.exec_times.iter().map(|c| c * lo).sum();
        if min_load > self.u_budget {
            return Err(OptimizerError::Infeasible {
                min_load,
                budget: self.u_budget,
            });
        }
        Ok(())
    }

    fn weighted_objective(&self, fs: &[f64]) -> Result<f64, OptimizerError> {
        let mut total = 0.0;
        for (cost, &f) in self.costs.iter().zip(fs) {
            total += cost.weight * cost.cost_at(f)?;
        }
        Ok(total)
    }
}

/// Solver output: the assigned frequencies with their dual certificate.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimalAssignment {
    pub frequencies: Vec<f64>,
    /// Sampling periods 1/f_i, in seconds.
    pub periods: Vec<f64>,
    /// Weighted objective value at the assignment.
    pub objective: f64,
    /// Lagrange multiplier of the utilization constraint.
    pub multiplier: f64,
    /// Solver-specific effort count (segments scanned / bisection steps).
    pub iterations: usize,
}

fn finish(
    problem: &OptimizationProblem,
    frequencies: Vec<f64>,
    multiplier: f64,
    iterations: usize,
) -> Result<OptimalAssignment, OptimizerError> {
    let objective = problem.weighted_objective(&frequencies)?;
    let periods = frequencies.iter().map(|f| 1.0 / f).collect();
    Ok(OptimalAssignment {
        frequencies,
        periods,
        objective,
        multiplier,
        iterations,
    })
}

/// Exact water-filling solution for reciprocal costs.
///
/// With the budget active, stationarity gives f_i = sqrt(w_i g_i / (lambda
/// c_i)); the multiplier that spends the budget over the loops still inside
/// the box is lambda = (sum_i sqrt(w_i g_i c_i) / U_free)^2. Loops leave the
/// box as lambda crosses w g / (c f_hi^2) (upper bound) and w g / (c f_lo^2)
/// (lower bound), so the breakpoints are scanned in ascending order, clipped
/// loops are pinned to their bound, and the remaining budget is
/// redistributed over the rest until the multiplier falls inside its
/// segment.
pub fn solve_closed_form(
    problem: &OptimizationProblem,
) -> Result<OptimalAssignment, OptimizerError> {
    problem.validate()?;
    let n = problem.n();
    let (lo, hi) = problem.f_bounds;

    // w_i * gamma_i per loop; reject custom costs.
    let mut wg = Vec::with_capacity(n);
    for cost in &problem.costs {
        match cost.form {
            CostForm::Reciprocal { gamma, .. } => wg.push(cost.weight * gamma),
            CostForm::CustomConvex { .. } => return Err(OptimizerError::NotReciprocal),
        }
    }

    // Loops with a flat cost take the minimum frequency: raising them buys
    // nothing and starves the rest of the budget.
    let flat: Vec<bool> = wg.iter().map(|&v| v == 0.0).collect();
    let flat_load: f64 = problem
        .exec_times
        .iter()
        .zip(&flat)
        .filter(|(_, &is_flat)| is_flat)
        .map(|(c, _)| c * lo)
        .sum();
    let u_eff = problem.u_budget - flat_load;
    let active: Vec<usize> = (0..n).filter(|&i| !flat[i]).collect();

    // Budget slack even with everyone at the ceiling: the constraint is
    // inactive and the multiplier is zero.
    let max_load: f64 = active.iter().map(|&i| problem.exec_times[i] * hi).sum();
    if max_load <= u_eff || active.is_empty() {
        let fs: Vec<f64> = (0..n).map(|i| if flat[i] { lo } else { hi }).collect();
        return finish(problem, fs, 0.0, 0);
    }

    // Ascending multiplier breakpoints where some loop hits a bound.
    let mut breaks: Vec<f64> = active
        .iter()
        .flat_map(|&i| {
            let c = problem.exec_times[i];
            [wg[i] / (c * hi * hi), wg[i] / (c * lo * lo)]
        })
        .collect();
    breaks.sort_by(|a, b| a.partial_cmp(b).unwrap());
    breaks.dedup();

    let load_at = |lambda: f64| -> f64 {
        active
            .iter()
            .map(|&i| {
                let c = problem.exec_times[i];
                c * (wg[i] / (lambda * c)).sqrt().clamp(lo, hi)
            })
            .sum()
    };

    let mut prev = 0.0;
    let mut segments = 0;
    for &b in &breaks {
        segments += 1;
        if load_at(b) <= u_eff {
            // The active-set pattern is constant inside (prev, b); classify
            // each loop at the segment midpoint and solve for the exact
            // multiplier there.
            let mid = 0.5 * (prev + b);
            let mut pinned_load = 0.0;
            let mut denom = 0.0;
            for &i in &active {
                let c = problem.exec_times[i];
                if mid <= wg[i] / (c * hi * hi) {
                    pinned_load += c * hi;
                } else if mid >= wg[i] / (c * lo * lo) {
                    pinned_load += c * lo;
                } else {
                    denom += (wg[i] * c).sqrt();
                }
            }
            let lambda = if denom > 0.0 {
                let root = denom / (u_eff - pinned_load);
                (root * root).clamp(prev, b)
            } else {
                // Degenerate segment: every loop pinned and the load exactly
                // meets the budget; any multiplier in the segment certifies.
                mid
            };
            let fs: Vec<f64> = (0..n)
                .map(|i| {
                    if flat[i] {
                        lo
                    } else {
                        let c = problem.exec_times[i];
                        (wg[i] / (lambda * c)).sqrt().clamp(lo, hi)
                    }
                })
                .collect();
            return finish(problem, fs, lambda, segments);
        }
        prev = b;
    }

    // Unreachable when feasible: at the last breakpoint every loop sits at
    // f_lo and validate() already guaranteed that load fits the budget.
    Err(OptimizerError::Infeasible {
        min_load: load_at(f64::MAX),
        budget: problem.u_budget,
    })
}

/// Minimize w J(f) + lambda c f over [lo, hi] for one loop.
///
/// The inner derivative phi(f) = w J'(f) + lambda c is increasing for convex
/// J, so the minimizer is lo when phi(lo) >= 0, hi when phi(hi) <= 0, and
/// the unique root of phi in between otherwise (found by bisection).
fn coordinate_min(
    cost: &CostFunction,
    c: f64,
    lambda: f64,
    lo: f64,
    hi: f64,
) -> Result<f64, OptimizerError> {
    let phi = |f: f64| -> Result<f64, CostError> {
        Ok(cost.weight * cost.derivative_at(f)? + lambda * c)
    };
    if phi(lo)? >= 0.0 {
        return Ok(lo);
    }
    if phi(hi)? <= 0.0 {
        return Ok(hi);
    }
    let (mut a, mut b) = (lo, hi);
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if phi(m)? >= 0.0 {
            b = m;
        } else {
            a = m;
        }
        if b - a <= 1e-14 * b.max(1.0) {
            break;
        }
    }
    Ok(0.5 * (a + b))
}

/// Lagrangian dual bisection for arbitrary convex decreasing costs.
///
/// The dual load g(lambda) = sum_i c_i f_i(lambda) is continuous and
/// non-increasing, so the multiplier is bracketed by doubling and then
/// bisected until the assignment is feasible, the budget gap is below 1e-9,
/// and complementary slackness lambda * gap is below 1e-9.
pub fn solve_dual_bisection(
    problem: &OptimizationProblem,
) -> Result<OptimalAssignment, OptimizerError> {
    problem.validate()?;
    let (lo, hi) = problem.f_bounds;

    let eval = |lambda: f64| -> Result<(Vec<f64>, f64), OptimizerError> {
        let mut fs = Vec::with_capacity(problem.n());
        let mut load = 0.0;
        for (cost, &c) in problem.costs.iter().zip(&problem.exec_times) {
            let f = coordinate_min(cost, c, lambda, lo, hi)?;
            load += c * f;
            fs.push(f);
        }
        Ok((fs, load))
    };

    // Inactive constraint: the unconstrained minimizers already fit.
    let (fs0, load0) = eval(0.0)?;
    if load0 <= problem.u_budget {
        return finish(problem, fs0, 0.0, 0);
    }

    // Bracket the multiplier by doubling until the load drops under budget.
    let mut lam_lo = 0.0;
    let mut lam_hi = 1.0;
    let mut last_gap;
    loop {
        let (_, load) = eval(lam_hi)?;
        last_gap = load - problem.u_budget;
        if last_gap <= 0.0 {
            break;
        }
        lam_lo = lam_hi;
        lam_hi *= 2.0;
        if lam_hi > 1e15 {
            return Err(OptimizerError::DualConvergence { gap: last_gap });
        }
    }

    for iter in 1..=200 {
        let lambda = 0.5 * (lam_lo + lam_hi);
        let (fs, load) = eval(lambda)?;
        let gap = load - problem.u_budget;
        if gap > 0.0 {
            lam_lo = lambda;
        } else {
            lam_hi = lambda;
            // Feasible side: accept once both the budget gap and the
            // complementary-slackness product are tight.
            if -gap <= 1e-9 && lambda * -gap <= 1e-9 {
                return finish(problem, fs, lambda, iter);
            }
        }
        last_gap = gap;
    }
    Err(OptimizerError::DualConvergence { gap: last_gap })
}

/// Worst KKT residual of an assignment; small means certified optimal.
///
/// Checks interior stationarity w J' + lambda c = 0, the sign of the same
/// expression at the frequency bounds, primal feasibility, dual
/// feasibility, and complementary slackness, and returns the largest
/// violation among them.
pub fn check_kkt(
    problem: &OptimizationProblem,
    assignment: &OptimalAssignment,
) -> Result<f64, OptimizerError> {
    problem.validate()?;
    if assignment.frequencies.len() != problem.n() {
        return Err(OptimizerError::LengthMismatch {
            costs: problem.n(),
            exec_times: assignment.frequencies.len(),
        });
    }
    let (lo, hi) = problem.f_bounds;
    let at_bound = 1e-9 * (hi - lo);
    let lambda = assignment.multiplier;

    let mut worst: f64 = 0.0;
    let mut load = 0.0;
    for ((cost, &c), &f) in problem
        .costs
        .iter()
        .zip(&problem.exec_times)
        .zip(&assignment.frequencies)
    {
        load += c * f;
        let s = cost.weight * cost.derivative_at(f)? + lambda * c;
        let violation = if f - lo <= at_bound {
            (-s).max(0.0) // at the floor the gradient must push down
        } else if hi - f <= at_bound {
            s.max(0.0) // at the ceiling it must push up
        } else {
            s.abs()
        };
        worst = worst.max(violation);
    }
    worst = worst.max(load - problem.u_budget); // primal feasibility
    worst = worst.max(-lambda); // dual feasibility
    worst = worst.max((lambda * (problem.u_budget - load)).abs());
    Ok(worst)
}

/// Grid-search result; no dual certificate, just the best point found.
#[derive(Debug, Clone, PartialEq)]
pub struct BruteForceResult {
    pub frequencies: Vec<f64>,
    pub objective: f64,
    /// Candidate points whose objective was evaluated.
    pub points_evaluated: u64,
}

/// Exhaustive grid search over frequencies lo, lo+step, lo+2*step, ... hi.
///
/// When the last loop's cost is non-increasing, its coordinate is not
/// enumerated: for any fixed choice of the others, the best grid value is
/// the largest feasible one, which cuts the grid from m^N to m^(N-1)
/// points. Enumeration beyond [`MAX_ORACLE_POINTS`] is refused.
pub fn brute_force_oracle(
    problem: &OptimizationProblem,
    step: f64,
) -> Result<BruteForceResult, OptimizerError> {
    problem.validate()?;
    if !(step > 0.0) {
        return Err(OptimizerError::NonPositiveStep(step));
    }
    let n = problem.n();
    let (lo, hi) = problem.f_bounds;
    let m = ((hi - lo) / step + 1e-9).floor() as u64 + 1;
    let grid = |k: u64| lo + k as f64 * step;

    // The reduction needs the last cost to be non-increasing: reciprocal
    // forms are by construction, custom forms are probed on a sample grid.
    let last = &problem.costs[n - 1];
    let reducible = match last.form {
        CostForm::Reciprocal { .. } => true,
        CostForm::CustomConvex { .. } => {
            let probes = 65;
            let mut decreasing = true;
            let mut prev = last.cost_at(lo)?;
            for k in 1..probes {
                let f = lo + (hi - lo) * k as f64 / (probes - 1) as f64;
                let v = last.cost_at(f)?;
                if v > prev + 1e-12 {
                    decreasing = false;
                    break;
                }
                prev = v;
            }
            decreasing
        }
    };

    let free_dims = if reducible { n - 1 } else { n };
    let points = (m as u128).pow(free_dims as u32);
    if points > MAX_ORACLE_POINTS {
        return Err(OptimizerError::ResourceLimit {
            points,
            limit: MAX_ORACLE_POINTS,
        });
    }

    let mut best_obj = f64::INFINITY;
    let mut best: Option<Vec<f64>> = None;
    let mut evaluated = 0u64;
    let mut idx = vec![0u64; free_dims];
    let mut fs = vec![lo; n];

    'outer: loop {
        for (d, &k) in idx.iter().enumerate() {
            fs[d] = grid(k);
        }
        let candidate_ok = if reducible {
            // Pin the last coordinate to the largest feasible grid value.
            let used: f64 = problem
                .exec_times
                .iter()
                .zip(fs.iter())
                .take(n - 1)
                .map(|(c, f)| c * f)
                .sum();
            let c_last = problem.exec_times[n - 1];
            let f_cap = ((problem.u_budget - used) / c_last).min(hi);
            if f_cap >= lo {
                let mut k_last = ((f_cap - lo) / step + 1e-9).floor() as u64;
                k_last = k_last.min(m - 1);
                // Guard against rounding pushing the point over budget.
                while k_last > 0 && used + c_last * grid(k_last) > problem.u_budget + 1e-12 {
                    k_last -= 1;
                }
                fs[n - 1] = grid(k_last);
                used + c_last * fs[n - 1] <= problem.u_budget + 1e-12
            } else {
                false
            }
        } else {
            let load: f64 = problem
                .exec_times
                .iter()
                .zip(fs.iter())
                .map(|(c, f)| c * f)
                .sum();
            load <= problem.u_budget + 1e-12
        };

        if candidate_ok {
            evaluated += 1;
            let obj = problem.weighted_objective(&fs)?;
            if obj < best_obj {
                best_obj = obj;
                best = Some(fs.clone());
            }
        }

        // Odometer increment over the free dimensions.
        let mut d = free_dims;
        loop {
            if d == 0 {
                break 'outer;
            }
            d -= 1;
            idx[d] += 1;
            if idx[d] < m {
                break;
            }
            idx[d] = 0;
        }
    }

    match best {
        Some(frequencies) => Ok(BruteForceResult {
            frequencies,
            objective: best_obj,
            points_evaluated: evaluated,
        }),
        None => Err(OptimizerError::Infeasible {
            min_load: problem.exec_times.iter().map(|c| c * lo).sum(),
            budget: problem.u_budget,
        }),
    }
}
