//! Scenario files: one TOML document pins an entire experiment — the
//! plants, the task set, the load trace, the training grid, and the
//! seed — so every artifact a run produces can be traced back to a
//! single input.
//!
//! All quantities are in SI units. Fields carrying a unit say so in
//! their name (`duration_s`, `f_min_hz`); bare ratios (`u_setpoint`,
//! `gamma`, `weight`) are dimensionless.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use fbsched::cost::CostFunction;
use fbsched::neural::LmConfig;
use fbsched::sim::{ExecTrace, SchedMode, SimConfig};

/// Top-level scenario document.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    /// Master seed. Every random draw in every subcommand descends from
    /// it, so a scenario file fully determines its outputs.
    pub seed: u64,
    /// Where artifacts land unless `--out` overrides it. Relative paths
    /// are resolved against the scenario file's directory.
    pub out_dir: PathBuf,
    pub simulation: Simulation,
    /// One entry per control loop, in task order.
    pub loops: Vec<LoopSpec>,
    pub disturbance: Disturbance,
    /// Piecewise-constant execution times; segments must start at 0 and
    /// be listed in increasing order.
    pub trace: Vec<TraceSegment>,
    pub dataset: DatasetRanges,
    #[serde(default)]
    pub training: Training,
    #[serde(default)]
    pub bench: Bench,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Simulation {
    /// `ols`, `ofs`, or `nfs`; `--mode` overrides it.
    pub mode: String,
    pub duration_s: f64,
    /// Plant integration chunk; sampling and actuation bind to this grid.
    pub micro_step_s: f64,
    /// Spacing of logged rows; must be a multiple of the micro step.
    pub log_step_s: f64,
    /// Utilization setpoint shared by the loops and the disturbance task.
    pub u_setpoint: f64,
    /// Scheduler task period.
    pub fbs_period_s: f64,
    /// Execution time charged to the scheduler task itself.
    #[serde(default)]
    pub fbs_exec_s: f64,
    /// Pendulum angle magnitude treated as a fall; the state saturates
    /// there so costs keep growing without overflowing.
    #[serde(default = "default_state_clamp")]
    pub state_clamp: f64,
    /// Sampling-frequency box handed to the optimizer, hertz.
    pub f_min_hz: f64,
    pub f_max_hz: f64,
    /// Trained period predictor; required by the neural mode, written by
    /// `train`. Relative paths resolve against the scenario's directory.
    pub model: Option<PathBuf>,
}

fn default_state_clamp() -> f64 {
    0.5
}

/// One pendulum loop: its plant and its share of the objective.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoopSpec {
    /// Natural frequency of the pendulum, rad/s.
    pub omega0: f64,
    /// Initial sampling frequency, hertz. The initial periods also
    /// freeze the rate-monotonic priority order for the whole run.
    pub f0_hz: f64,
    /// Cost-curve slope: the loop's cost falls as gamma / frequency.
    pub gamma: f64,
    /// Weight of this loop in the summed objective.
    pub weight: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Disturbance {
    pub period_s: f64,
}

/// Execution times in force from `start_s` until the next segment: one
/// value per loop, then the disturbance task.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceSegment {
    pub start_s: f64,
    pub exec_s: Vec<f64>,
}

/// Grid the training table is solved over.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetRanges {
    /// Candidate execution times per loop, seconds.
    pub exec_grids_s: Vec<Vec<f64>>,
    /// Candidate utilization budgets left for the loops.
    pub u_budgets: Vec<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Training {
    /// Hidden-layer width; `sweep-hidden` varies it.
    pub m_hidden: usize,
    pub max_epochs: usize,
    /// Stop once the training MSE (normalized domain) drops this low.
    pub target_mse: f64,
    /// Fraction of rows withheld for generalization metrics.
    pub holdout_frac: f64,
}

impl Default for Training {
    fn default() -> Self {
        let lm = LmConfig::default();
        Self {
            m_hidden: lm.m_hidden,
            max_epochs: lm.max_epochs,
            target_mse: lm.target_mse,
            holdout_frac: lm.holdout_frac,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Bench {
    /// Random instances timed per decision path; `--runs` overrides it.
    pub runs: usize,
}

impl Default for Bench {
    fn default() -> Self {
        Self { runs: 500 }
    }
}

impl Scenario {
    /// Parse a scenario file and resolve its relative paths.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read scenario '{}'", path.display()))?;
        let mut scenario: Scenario = toml::from_str(&text)
            .with_context(|| format!("scenario '{}' does not parse", path.display()))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        scenario.out_dir = resolve(base, &scenario.out_dir);
        if let Some(model) = scenario.simulation.model.take() {
            scenario.simulation.model = Some(resolve(base, &model));
        }
        scenario.validate()?;
        Ok(scenario)
    }

    fn validate(&self) -> Result<()> {
        let n = self.loops.len();
        if n == 0 {
            bail!("scenario defines no control loops");
        }
        for (i, l) in self.loops.iter().enumerate() {
            if !(l.omega0 > 0.0 && l.f0_hz > 0.0 && l.gamma > 0.0 && l.weight > 0.0) {
                bail!("loop {} needs positive omega0, f0_hz, gamma, and weight", i + 1);
            }
        }
        if !(self.disturbance.period_s > 0.0) {
            bail!("disturbance period must be positive");
        }
        for seg in &self.trace {
            if seg.exec_s.len() != n + 1 {
                bail!(
                    "trace segment at {} s lists {} execution times; expected {} (loops + disturbance)",
                    seg.start_s,
                    seg.exec_s.len(),
                    n + 1
                );
            }
        }
        if self.dataset.exec_grids_s.len() != n {
            bail!(
                "dataset gives {} execution-time grids for {} loops",
                self.dataset.exec_grids_s.len(),
                n
            );
        }
        let s = &self.simulation;
        if !(s.f_min_hz > 0.0 && s.f_max_hz > s.f_min_hz) {
            bail!("need 0 < f_min_hz < f_max_hz");
        }
        Ok(())
    }

    pub fn n_loops(&self) -> usize {
        self.loops.len()
    }

    /// The scheduling mode in force: the flag wins over the file.
    pub fn mode(&self, flag: Option<SchedMode>) -> Result<SchedMode> {
        match flag {
            Some(m) => Ok(m),
            None => self
                .simulation
                .mode
                .parse()
                .map_err(|e: String| anyhow::anyhow!("{e} in scenario [simulation] mode")),
        }
    }

    /// Where the trained model lives: the file's path, or
    /// `<out_dir>/model.toml` when the file names none.
    pub fn model_path(&self, out_dir: &Path) -> PathBuf {
        self.simulation
            .model
            .clone()
            .unwrap_or_else(|| out_dir.join("model.toml"))
    }

    pub fn f_bounds(&self) -> (f64, f64) {
        (self.simulation.f_min_hz, self.simulation.f_max_hz)
    }

    /// Per-loop cost curves, in task order.
    pub fn costs(&self) -> Vec<CostFunction> {
        self.loops
            .iter()
            .map(|l| CostFunction::reciprocal(l.gamma, l.weight))
            .collect()
    }

    pub fn exec_trace(&self) -> Result<ExecTrace> {
        let segments = self
            .trace
            .iter()
            .map(|seg| (seg.start_s, seg.exec_s.clone()))
            .collect();
        ExecTrace::new(segments).map_err(|e| anyhow::anyhow!("trace: {e}"))
    }

    /// Assemble the kernel configuration for one run.
    pub fn sim_config(&self, mode: SchedMode, seed: u64) -> Result<SimConfig> {
        let s = &self.simulation;
        Ok(SimConfig {
            mode,
            duration: s.duration_s,
            micro_step: s.micro_step_s,
            log_step: s.log_step_s,
            seed,
            u_setpoint: s.u_setpoint,
            fbs_period: s.fbs_period_s,
            fbs_exec: s.fbs_exec_s,
            omega0: self.loops.iter().map(|l| l.omega0).collect(),
            gammas: self.loops.iter().map(|l| l.gamma).collect(),
            weights: self.loops.iter().map(|l| l.weight).collect(),
            initial_periods: self.loops.iter().map(|l| 1.0 / l.f0_hz).collect(),
            dist_period: self.disturbance.period_s,
            f_bounds: self.f_bounds(),
            state_clamp: s.state_clamp,
            trace: self.exec_trace()?,
        })
    }

    pub fn lm_config(&self, m_hidden: usize) -> LmConfig {
        LmConfig {
            m_hidden,
            max_epochs: self.training.max_epochs,
            target_mse: self.training.target_mse,
            holdout_frac: self.training.holdout_frac,
            ..LmConfig::default()
        }
    }
}

fn resolve(base: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        base.join(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn minimal() -> String {
        r#"
            seed = 7
            out_dir = "out"

            [simulation]
            mode = "ofs"
            duration_s = 1.0
            micro_step_s = 0.0005
            log_step_s = 0.01
            u_setpoint = 0.75
            fbs_period_s = 0.4
            f_min_hz = 5.0
            f_max_hz = 200.0

            [[loops]]
            omega0 = 10.0
            f0_hz = 58.8
            gamma = 43.0
            weight = 1.0

            [disturbance]
            period_s = 0.01

            [[trace]]
            start_s = 0.0
            exec_s = [0.002, 0.0005]

            [dataset]
            exec_grids_s = [[0.002, 0.003]]
            u_budgets = [0.5, 0.6]
        "#
        .to_string()
    }

    fn load_str(text: &str) -> Result<Scenario> {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.toml");
        let mut f = std::fs::File::create(&path).unwrap();
        f.write_all(text.as_bytes()).unwrap();
        Scenario::load(&path)
    }

    #[test]
    fn minimal_scenario_loads_with_defaults() {
        let s = load_str(&minimal()).unwrap();
        assert_eq!(s.seed, 7);
        assert_eq!(s.n_loops(), 1);
        assert_eq!(s.simulation.fbs_exec_s, 0.0);
        assert_eq!(s.simulation.state_clamp, 0.5);
        assert_eq!(s.training.m_hidden, 8);
        assert_eq!(s.bench.runs, 500);
        assert_eq!(s.mode(None).unwrap(), SchedMode::Ofs);
        assert_eq!(s.mode(Some(SchedMode::Ols)).unwrap(), SchedMode::Ols);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = minimal().replace("seed = 7", "seed = 7\nextra_knob = 1");
        let err = load_str(&text).unwrap_err();
        assert!(format!("{err:#}").contains("does not parse"));
    }

    #[test]
    fn missing_seed_is_rejected() {
        let text = minimal().replace("seed = 7", "");
        assert!(load_str(&text).is_err());
    }

    #[test]
    fn trace_width_must_cover_all_tasks() {
        let text = minimal().replace("exec_s = [0.002, 0.0005]", "exec_s = [0.002]");
        let err = load_str(&text).unwrap_err();
        assert!(format!("{err}").contains("expected 2"));
    }

    #[test]
    fn paths_resolve_against_the_scenario_directory() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.toml");
        std::fs::write(&path, minimal()).unwrap();
        let s = Scenario::load(&path).unwrap();
        assert_eq!(s.out_dir, dir.path().join("out"));
        assert_eq!(s.model_path(&s.out_dir), dir.path().join("out/model.toml"));
    }

    #[test]
    fn sim_config_round_trips_the_loop_table() {
        let s = load_str(&minimal()).unwrap();
        let cfg = s.sim_config(SchedMode::Ofs, 7).unwrap();
        assert_eq!(cfg.omega0, vec![10.0]);
        assert!((cfg.initial_periods[0] - 1.0 / 58.8).abs() < 1e-15);
        assert_eq!(cfg.trace.values_at(0.0), &[0.002, 0.0005]);
    }
}
