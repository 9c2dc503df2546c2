//! Piecewise-constant execution-time traces.

use super::SimError;

/// Execution times of the traced tasks as a step function of time.
///
/// Column order is fixed by the simulation: one column per control loop,
/// then the disturbance task. A segment starting at `t` applies on
/// `[t, next_start)`, so a lookup exactly at a change instant already
/// sees the new values.
#[derive(Debug, Clone, PartialEq)]
pub struct ExecTrace {
    starts: Vec<f64>,
    values: Vec<Vec<f64>>,
}

impl ExecTrace {
    pub fn new(segments: Vec<(f64, Vec<f64>)>) -> Result<Self, SimError> {
        if segments.is_empty() {
            return Err(SimError::BadTrace("no segments".into()));
        }
        if segments[0].0 != 0.0 {
            return Err(SimError::BadTrace(format!(
                "first segment starts at {}",
                segments[0].0
            )));
        }
        let width = segments[0].1.len();
        if width == 0 {
            return Err(SimError::BadTrace("segments carry no tasks".into()));
        }
        let mut prev = f64::NEG_INFINITY;
        for (start, vals) in &segments {
            if *start <= prev {
                return Err(SimError::BadTrace(format!(
                    "segment starts {prev} and {start} are out of order"
                )));
            }
            prev = *start;
            if vals.len() != width {
                return Err(SimError::BadTrace(format!(
                    "segment at {start} has {} values, expected {width}",
                    vals.len()
                )));
            }
            for &v in vals {
                if !(v > 0.0) || !v.is_finite() {
                    return Err(SimError::BadTrace(format!(
                        "non-positive execution time {v} at {start}"
                    )));
                }
            }
        }
        let (starts, values) = segments.into_iter().unzip();
        Ok(Self { starts, values })
    }

    /// The standard load profile: every 2 s the tasks get heavier, and
    /// from 6 s on the demand at the initial periods would exceed the
    /// whole CPU (about 1.24). Columns: three loops, then the
    /// disturbance task; times in seconds.
    pub fn default_profile() -> Self {
        let ms = 1e-3;
        Self::new(vec![
            (0.0, vec![2.0 * ms, 2.0 * ms, 2.0 * ms, 0.5 * ms]),
            (2.0, vec![3.0 * ms, 3.5 * ms, 3.0 * ms, 1.0 * ms]),
            (4.0, vec![3.0 * ms, 4.0 * ms, 4.0 * ms, 1.5 * ms]),
            (6.0, vec![4.0 * ms, 4.6 * ms, 5.7 * ms, 2.0 * ms]),
        ])
        .expect("the built-in profile is well formed")
    }

    pub fn n_tasks(&self) -> usize {
        self.values[0].len()
    }

    /// Execution times in effect at time `t` (clamped to the first
    /// segment for t < 0).
    pub fn values_at(&self, t: f64) -> &[f64] {
        let idx = match self.starts.partition_point(|&s| s <= t) {
            0 => 0,
            n => n - 1,
        };
        &self.values[idx]
    }

    pub fn value_at(&self, t: f64, task: usize) -> f64 {
        self.values_at(t)[task]
    }

    /// Instants where the execution times change (excluding t = 0).
    pub fn change_times(&self) -> &[f64] {
        &self.starts[1..]
    }

    /// Sorted distinct values taken by one column across all segments.
    pub fn distinct_values(&self, task: usize) -> Vec<f64> {
        let mut vals: Vec<f64> = self.values.iter().map(|row| row[task]).collect();
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        vals.dedup();
        vals
    }
}
