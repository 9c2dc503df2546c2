//! Co-simulation of the CPU and the control loops it serves.
//!
//! One simulated processor runs the control tasks, a disturbance task,
//! and (in the feedback-scheduling modes) the scheduler task itself under
//! preemptive fixed-priority scheduling, while the pendulums evolve in
//! continuous time between the sampling and actuation instants the kernel
//! produces. The submodules hold the execution-time trace, the kernel,
//! and the scheduling-overhead benchmark.

mod kernel;
mod overhead;
mod trace;

pub use kernel::{
    fbs_invoke, project_to_budget, run_simulation, DropEvent, FbsEvent, FbsOutcome,
    InstabilityEvent, LogRow, SimLog, TaskStats,
};
pub use overhead::{
    compare_overhead, measure_overhead, overhead_instances, OverheadInstance, OverheadPair,
    OverheadReport, OverheadRun,
};
pub use trace::ExecTrace;

use thiserror::Error;

use crate::cost::CostError;
use crate::neural::NeuralError;
use crate::optimizer::OptimizerError;
use crate::plant::PlantError;
use crate::task::TaskError;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error(transparent)]
    Plant(#[from] PlantError),
    #[error(transparent)]
    Optimizer(#[from] OptimizerError),
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error("trace must start at t = 0 and be strictly increasing; {0}")]
    BadTrace(String),
    #[error("configuration error: {0}")]
    BadConfig(String),
    #[error("the neural mode needs a trained model")]
    MissingModel,
}

/// How the sampling periods are managed while the system runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SchedMode {
    /// Open-loop scheduling: the initial periods are never revised.
    Ols,
    /// Optimal feedback scheduling: a scheduler task re-solves the period
    /// assignment whenever it runs.
    Ofs,
    /// Neural feedback scheduling: the scheduler task predicts periods
    /// with the trained network and projects them onto the budget.
    Nfs,
}

impl SchedMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            SchedMode::Ols => "ols",
            SchedMode::Ofs => "ofs",
            SchedMode::Nfs => "nfs",
        }
    }
}

impl std::str::FromStr for SchedMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "ols" => Ok(SchedMode::Ols),
            "ofs" => Ok(SchedMode::Ofs),
            "nfs" => Ok(SchedMode::Nfs),
            other => Err(format!("unknown scheduling mode '{other}'")),
        }
    }
}

/// Everything a simulation run depends on.
#[derive(Debug, Clone)]
pub struct SimConfig {
    pub mode: SchedMode,
    /// Simulated wall-clock length, seconds.
    pub duration: f64,
    /// Plant integration chunk, seconds; sampling and actuation bind to
    /// this grid.
    pub micro_step: f64,
    /// Spacing of the logged rows; must be a multiple of `micro_step`.
    pub log_step: f64,
    pub seed: u64,
    /// Utilization setpoint shared by the control loops and the
    /// disturbance task.
    pub u_setpoint: f64,
    /// Scheduler task period.
    pub fbs_period: f64,
    /// Scheduler task execution time per invocation. Zero by default —
    /// the scheduler's own overhead is studied separately by the
    /// benchmark — but it can be charged here to see its effect.
    pub fbs_exec: f64,
    /// Natural frequency of each pendulum, rad/s.
    pub omega0: Vec<f64>,
    /// Cost slope of each loop.
    pub gammas: Vec<f64>,
    /// Objective weight of each loop.
    pub weights: Vec<f64>,
    /// Starting sampling periods; these also freeze the rate-monotonic
    /// priority order for the whole run.
    pub initial_periods: Vec<f64>,
    pub dist_period: f64,
    pub f_bounds: (f64, f64),
    /// A loop whose pendulum angle exceeds this magnitude is marked
    /// unstable and its state saturates here, so costs keep growing
    /// visibly without overflowing.
    pub state_clamp: f64,
    /// Execution times over time: one column per loop, then the
    /// disturbance task.
    pub trace: ExecTrace,
}

impl SimConfig {
    /// The three-pendulum comparison experiment: pendulums at 10, 13.3,
    /// and 16.6 rad/s sampled at 58.8, 71.4, and 83.3 Hz to start, a
    /// 10 ms disturbance task, a 0.75 utilization setpoint, and the
    /// standard load trace stepping up every 2 s until it would
    /// oversubscribe the CPU.
    pub fn default_experiment(mode: SchedMode, seed: u64) -> Self {
        Self {
            mode,
            duration: 12.0,
            micro_step: 0.0005,
            log_step: 0.01,
            seed,
            u_setpoint: 0.75,
            fbs_period: 0.4,
            fbs_exec: 0.0,
            omega0: vec![10.0, 13.3, 16.6],
            gammas: vec![43.0, 67.0, 95.0],
            weights: vec![1.0, 1.0, 1.0],
            initial_periods: vec![1.0 / 58.8, 1.0 / 71.4, 1.0 / 83.3],
            dist_period: 0.010,
            f_bounds: crate::optimizer::OptimizationProblem::DEFAULT_F_BOUNDS,
            state_clamp: 0.5,
            trace: ExecTrace::default_profile(),
        }
    }

    pub fn n_loops(&self) -> usize {
        self.omega0.len()
    }

    pub(crate) fn validate(&self) -> Result<(), SimError> {
        let n = self.n_loops();
        if n == 0 {
            return Err(SimError::BadConfig("no control loops".into()));
        }
        for (name, len) in [
            ("gammas", self.gammas.len()),
            ("weights", self.weights.len()),
            ("initial_periods", self.initial_periods.len()),
        ] {
            if len != n {
                return Err(SimError::BadConfig(format!(
                    "{name} has {len} entries for {n} loops"
                )));
            }
        }
        if self.trace.n_tasks() != n + 1 {
            return Err(SimError::BadConfig(format!(
                "trace has {} columns; need one per loop plus the disturbance task ({})",
                self.trace.n_tasks(),
                n + 1
            )));
        }
        if !(self.duration >= 0.0) {
            return Err(SimError::BadConfig("negative duration".into()));
        }
        if !(self.micro_step > 0.0) {
            return Err(SimError::BadConfig("non-positive micro step".into()));
        }
        let ratio = self.log_step / self.micro_step;
        if !(self.log_step > 0.0) || (ratio - ratio.round()).abs() > 1e-9 {
            return Err(SimError::BadConfig(
                "log step must be a positive multiple of the micro step".into(),
            ));
        }
        for &h in self.initial_periods.iter().chain([&self.dist_period]) {
            if !(h > 0.0) {
                return Err(SimError::BadConfig("non-positive task period".into()));
            }
        }
        if !(self.fbs_period > 0.0) || self.fbs_exec < 0.0 {
            return Err(SimError::BadConfig("bad scheduler task parameters".into()));
        }
        if !(self.u_setpoint > 0.0) {
            return Err(SimError::BadConfig("non-positive setpoint".into()));
        }
        Ok(())
    }
}
