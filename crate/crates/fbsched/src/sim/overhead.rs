//! Wall-clock cost of one scheduling decision.
//!
//! The exact solver and the trained network answer the same question —
//! which periods fit the budget — at very different prices. This module
//! draws load instances from the value sets of an execution-time trace
//! and times only the decision computation itself: the iterative solver
//! for the exact path, the forward pass plus budget projection for the
//! neural path. No I/O or logging sits inside the timed window. The
//! numbers are machine-relative; only their ratios travel.

use std::hint::black_box;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::kernel::project_to_budget;
use super::trace::ExecTrace;
use super::{SchedMode, SimError};
use crate::cost::CostFunction;
use crate::neural::PeriodNet;
use crate::optimizer::{solve_dual_bisection, OptimizationProblem};

/// One load the scheduler could face: execution times per loop and the
/// budget left once the disturbance task has taken its share.
#[derive(Debug, Clone, PartialEq)]
pub struct OverheadInstance {
    pub exec_times: Vec<f64>,
    pub u_budget: f64,
}

/// Draw `n_runs` instances from the per-task value sets of `trace`.
///
/// Each task's execution time is drawn uniformly from the distinct
/// values that task takes over the trace, independently per run; the
/// last column is the disturbance task, whose draw sets the budget. The
/// sequence depends only on the seed.
pub fn overhead_instances(
    trace: &ExecTrace,
    u_setpoint: f64,
    dist_period: f64,
    n_runs: usize,
    seed: u64,
) -> Vec<OverheadInstance> {
    let n = trace.n_tasks() - 1;
    let value_sets: Vec<Vec<f64>> = (0..trace.n_tasks()).map(|c| trace.distinct_values(c)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_runs)
        .map(|_| {
            let exec_times: Vec<f64> = (0..n)
                .map(|c| value_sets[c][rng.gen_range(0..value_sets[c].len())])
                .collect();
            let c_dist = value_sets[n][rng.gen_range(0..value_sets[n].len())];
            OverheadInstance {
                exec_times,
                u_budget: u_setpoint - c_dist / dist_period,
            }
        })
        .collect()
}

/// Five-number summary plus the mean of a timing sample, in seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OverheadReport {
    pub count: usize,
    pub mean: f64,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

impl OverheadReport {
    /// Summarize a non-empty sample. Quartiles are Tukey hinges: the
    /// medians of the lower and upper halves, each half including the
    /// middle sample when the count is odd.
    pub fn from_samples(samples: &[f64]) -> Result<Self, SimError> {
        if samples.is_empty() {
            return Err(SimError::BadConfig("no timing samples to summarize".into()));
        }
        let mut sorted = samples.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite timings"));
        let n = sorted.len();
        let half = n.div_ceil(2);
        Ok(Self {
            count: n,
            mean: sorted.iter().sum::<f64>() / n as f64,
            min: sorted[0],
            q1: median_of(&sorted[..half]),
            median: median_of(&sorted),
            q3: median_of(&sorted[n - half..]),
            max: sorted[n - 1],
        })
    }
}

fn median_of(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Timing samples for one mode, in invocation order, with their summary.
#[derive(Debug, Clone, PartialEq)]
pub struct OverheadRun {
    pub mode: SchedMode,
    pub samples: Vec<f64>,
    pub report: OverheadReport,
}

/// Both decision paths timed on the same instances.
#[derive(Debug, Clone, PartialEq)]
pub struct OverheadPair {
    pub ofs: OverheadRun,
    pub nfs: OverheadRun,
}

/// Time one decision path over the given instances.
///
/// The exact path runs the iterative dual solver; the neural path runs
/// the forward pass and the budget projection. Every instance must be
/// feasible — the sampler built from a valid trace guarantees that.
pub fn measure_overhead(
    mode: SchedMode,
    instances: &[OverheadInstance],
    gammas: &[f64],
    weights: &[f64],
    f_bounds: (f64, f64),
    net: Option<&PeriodNet>,
) -> Result<OverheadRun, SimError> {
    if instances.is_empty() {
        return Err(SimError::BadConfig("no instances to benchmark".into()));
    }
    let mut samples = Vec::with_capacity(instances.len());
    match mode {
        SchedMode::Ofs => {
            for inst in instances {
                let costs: Vec<CostFunction> = gammas
                    .iter()
                    .zip(weights)
                    .map(|(&g, &w)| CostFunction::reciprocal(g, w))
                    .collect();
                let problem = OptimizationProblem::with_bounds(
                    costs,
                    inst.exec_times.clone(),
                    inst.u_budget,
                    f_bounds,
                );
                let started = Instant::now();
                let assignment = solve_dual_bisection(black_box(&problem))?;
                let elapsed = started.elapsed().as_secs_f64();
                black_box(&assignment);
                samples.push(elapsed);
            }
        }
        SchedMode::Nfs => {
            let net = net.ok_or(SimError::MissingModel)?;
            for inst in instances {
                let started = Instant::now();
                let predicted = net.predict(black_box(&inst.exec_times), black_box(inst.u_budget))?;
                let periods =
                    project_to_budget(&inst.exec_times, &predicted, inst.u_budget, f_bounds)?;
                let elapsed = started.elapsed().as_secs_f64();
                black_box(&periods);
                samples.push(elapsed);
            }
        }
        SchedMode::Ols => {
            return Err(SimError::BadConfig(
                "open-loop scheduling makes no decisions to time".into(),
            ));
        }
    }
    let report = OverheadReport::from_samples(&samples)?;
    Ok(OverheadRun {
        mode,
        samples,
        report,
    })
}

/// Run both decision paths over the same instances.
pub fn compare_overhead(
    instances: &[OverheadInstance],
    gammas: &[f64],
    weights: &[f64],
    f_bounds: (f64, f64),
    net: &PeriodNet,
) -> Result<OverheadPair, SimError> {
    let ofs = measure_overhead(SchedMode::Ofs, instances, gammas, weights, f_bounds, None)?;
    let nfs = measure_overhead(
        SchedMode::Nfs,
        instances,
        gammas,
        weights,
        f_bounds,
        Some(net),
    )?;
    Ok(OverheadPair { ofs, nfs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::{train_lm, Dataset, LmConfig};

    #[test]
    fn sampling_is_deterministic_and_stays_in_the_value_sets() {
        let trace = ExecTrace::default_profile();
        let a = overhead_instances(&trace, 0.75, 0.01, 200, 5);
        let b = overhead_instances(&trace, 0.75, 0.01, 200, 5);
        assert_eq!(a, b);
        let c = overhead_instances(&trace, 0.75, 0.01, 200, 6);
        assert_ne!(a, c);
        let sets: Vec<Vec<f64>> = (0..trace.n_tasks()).map(|i| trace.distinct_values(i)).collect();
        for inst in &a {
            for (i, c_i) in inst.exec_times.iter().enumerate() {
                assert!(sets[i].contains(c_i));
            }
            // the budget decodes back to one of the disturbance values
            let c_dist = (0.75 - inst.u_budget) * 0.01;
            assert!(sets[3].iter().any(|v| (v - c_dist).abs() < 1e-12));
        }
    }

    #[test]
    fn a_single_sample_is_its_own_summary() {
        let report = OverheadReport::from_samples(&[3.5e-5]).unwrap();
        assert_eq!(report.count, 1);
        for v in [report.mean, report.min, report.q1, report.median, report.q3, report.max] {
            assert_eq!(v, 3.5e-5);
        }
    }

    #[test]
    fn hinges_of_a_known_sample() {
        // Odd count: halves share the middle element.
        let report = OverheadReport::from_samples(&[5.0, 1.0, 3.0, 2.0, 4.0]).unwrap();
        assert_eq!(report.min, 1.0);
        assert_eq!(report.q1, 2.0);
        assert_eq!(report.median, 3.0);
        assert_eq!(report.q3, 4.0);
        assert_eq!(report.max, 5.0);
        assert_eq!(report.mean, 3.0);
        // Even count: hinges are midpoints of the two middle pairs.
        let report = OverheadReport::from_samples(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(report.q1, 1.5);
        assert_eq!(report.median, 2.5);
        assert_eq!(report.q3, 3.5);
    }

    #[test]
    fn exact_solver_timings_summarize_in_order() {
        let trace = ExecTrace::default_profile();
        let instances = overhead_instances(&trace, 0.75, 0.01, 50, 11);
        let run = measure_overhead(
            SchedMode::Ofs,
            &instances,
            &[43.0, 67.0, 95.0],
            &[1.0, 1.0, 1.0],
            (5.0, 200.0),
            None,
        )
        .unwrap();
        assert_eq!(run.samples.len(), 50);
        let r = run.report;
        assert!(r.min > 0.0);
        assert!(r.min <= r.q1 && r.q1 <= r.median && r.median <= r.q3 && r.q3 <= r.max);
    }

    #[test]
    fn the_network_answers_well_under_the_solver_time() {
        let dataset = Dataset::default_grid().unwrap();
        let (net, _) = train_lm(&dataset, &LmConfig::default(), 9).unwrap();
        let trace = ExecTrace::default_profile();
        let instances = overhead_instances(&trace, 0.75, 0.01, 500, 11);
        let pair = compare_overhead(
            &instances,
            &[43.0, 67.0, 95.0],
            &[1.0, 1.0, 1.0],
            (5.0, 200.0),
            &net,
        )
        .unwrap();
        assert!(
            pair.nfs.report.median <= 0.5 * pair.ofs.report.median,
            "neural median {} vs solver median {}",
            pair.nfs.report.median,
            pair.ofs.report.median
        );
    }

    #[test]
    fn open_loop_mode_cannot_be_benchmarked() {
        let trace = ExecTrace::default_profile();
        let instances = overhead_instances(&trace, 0.75, 0.01, 3, 1);
        let err = measure_overhead(
            SchedMode::Ols,
            &instances,
            &[43.0, 67.0, 95.0],
            &[1.0, 1.0, 1.0],
            (5.0, 200.0),
            None,
        )
        .unwrap_err();
        assert!(matches!(err, SimError::BadConfig(_)));
    }
}
