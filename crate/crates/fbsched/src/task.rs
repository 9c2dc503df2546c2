//! Task set representation, rate-monotonic priority assignment, and
//! utilization-based schedulability bounds.
//!
//! A task set consists of control tasks (one per plant loop), disturbance
//! tasks (CPU load only), and exactly one feedback-scheduler task. The
//! feedback scheduler always runs at the highest priority; the remaining
//! tasks are ranked rate-monotonically (shorter period first).

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TaskError {
    #[error("duplicate task id {0}")]
    DuplicateId(u32),
    #[error("task {id} has non-positive period {period}")]
    NonPositivePeriod { id: u32, period: f64 },
    #[error("task {id} has negative execution time {execution_time}")]
    NegativeExecutionTime { id: u32, execution_time: f64 },
    #[error("task set must contain exactly one feedback-scheduler task, found {0}")]
    FbsTaskCount(usize),
    #[error("Liu-Layland bound is undefined for zero tasks")]
    ZeroTaskCount,
}

/// What a task does when it gets the CPU.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    /// Samples its plant, computes a control signal, actuates on completion.
    Control,
    /// Consumes CPU time only.
    Disturbance,
    /// The feedback scheduler: recomputes sampling periods.
    Fbs,
}

/// One task of the simulated system. Periods and execution times are in
/// seconds; a lower priority number means higher priority.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskSpec {
    pub id: u32,
    pub kind: TaskKind,
    pub period: f64,
    pub execution_time: f64,
    pub priority: u32,
    /// Index into the control-loop list for `Control` tasks.
    pub loop_index: Option<usize>,
}

impl TaskSpec {
    pub fn new(id: u32, kind: TaskKind, period: f64, execution_time: f64) -> Self {
        Self {
            id,
            kind,
            period,
            execution_time,
            priority: u32::MAX,
            loop_index: None,
        }
    }

    pub fn with_loop_index(mut self, idx: usize) -> Self {
        self.loop_index = Some(idx);
        self
    }

    pub fn utilization(&self) -> f64 {
        self.execution_time / self.period
    }
}

/// An ordered collection of tasks sharing one CPU.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TaskSet {
    pub tasks: Vec<TaskSpec>,
}

impl TaskSet {
    pub fn new(tasks: Vec<TaskSpec>) -> Self {
        Self { tasks }
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    fn validate(&self) -> Result<(), TaskError> {
        let mut ids: Vec<u32> = self.tasks.iter().map(|t| t.id).collect();
        ids.sort_unstable();
        for pair in ids.windows(2) {
            if pair[0] == pair[1] {
                return Err(TaskError::DuplicateId(pair[0]));
            }
        }
        for t in &self.tasks {
            if !(t.period > 0.0) {
                return Err(TaskError::NonPositivePeriod {
                    id: t.id,
                    period: t.period,
                });
            }
            if t.execution_time < 0.0 {
                return Err(TaskError::NegativeExecutionTime {
                    id: t.id,
                    execution_time: t.execution_time,
                });
            }
        }
        Ok(())
    }
}

/// Assign fixed priorities: the feedback-scheduler task gets priority 0,
/// the remaining tasks are ranked by ascending period (rate monotonic),
/// ties broken by ascending id.
///
/// The input must contain exactly one `Fbs` task and no duplicate ids.
pub fn assign_rm_priorities(tasks: &TaskSet) -> Result<TaskSet, TaskError> {
    tasks.validate()?;
    let fbs_count = tasks
        .tasks
        .iter()
        .filter(|t| t.kind == TaskKind::Fbs)
        .count();
    if fbs_count != 1 {
        return Err(TaskError::FbsTaskCount(fbs_count));
    }

    let mut out = tasks.clone();
    let mut order: Vec<usize> = (0..out.tasks.len())
        .filter(|&i| out.tasks[i].kind != TaskKind::Fbs)
        .collect();
    order.sort_by(|&a, &b| {
        let ta = &out.tasks[a];
        let tb = &out.tasks[b];
        ta.period
            .partial_cmp(&tb.period)
            .expect("periods validated finite")
            .then(ta.id.cmp(&tb.id))
    });

    for t in &mut out.tasks {
        if t.kind == TaskKind::Fbs {
            t.priority = 0;
        }
    }
    for (rank, &i) in order.iter().enumerate() {
        out.tasks[i].priority = rank as u32 + 1;
    }
    Ok(out)
}

/// Total requested CPU utilization sum(c_i / h_i) over all tasks.
///
/// Deliberately unclamped: values above 1 indicate overload.
pub fn requested_utilization(tasks: &TaskSet) -> f64 {
    tasks.tasks.iter().map(TaskSpec::utilization).sum()
}

/// Liu-Layland rate-monotonic schedulability bound n * (2^(1/n) - 1).
///
/// Strictly decreasing in `n`, approaching ln 2 from above.
pub fn ll_bound(n: usize) -> Result<f64, TaskError> {
    if n == 0 {
        return Err(TaskError::ZeroTaskCount);
    }
    let nf = n as f64;
    Ok(nf * (2.0_f64.powf(1.0 / nf) - 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn full_load_task_set() -> TaskSet {
        // Control periods 17, 14, 12 ms; disturbance 10 ms; one fbs task.
        TaskSet::new(vec![
            TaskSpec::new(1, TaskKind::Control, 0.017, 0.004).with_loop_index(0),
            TaskSpec::new(2, TaskKind::Control, 0.014, 0.0046).with_loop_index(1),
            TaskSpec::new(3, TaskKind::Control, 0.012, 0.0057).with_loop_index(2),
            TaskSpec::new(4, TaskKind::Disturbance, 0.010, 0.002),
            TaskSpec::new(5, TaskKind::Fbs, 0.4, 0.0),
        ])
    }

    #[test]
    fn rm_priorities_follow_ascending_period() {
        let assigned = assign_rm_priorities(&full_load_task_set()).unwrap();
        let prio_of = |id: u32| assigned.tasks.iter().find(|t| t.id == id).unwrap().priority;
        // fbs first, then 10, 12, 14, 17 ms
        assert_eq!(prio_of(5), 0);
        assert_eq!(prio_of(4), 1);
        assert_eq!(prio_of(3), 2);
        assert_eq!(prio_of(2), 3);
        assert_eq!(prio_of(1), 4);
    }

    #[test]
    fn rm_assignment_is_a_permutation_of_priorities() {
        let assigned = assign_rm_priorities(&full_load_task_set()).unwrap();
        let mut prios: Vec<u32> = assigned.tasks.iter().map(|t| t.priority).collect();
        prios.sort_unstable();
        assert_eq!(prios, vec![0, 1, 2, 3, 4]);
        // tasks themselves unchanged apart from priorities
        for (a, b) in assigned.tasks.iter().zip(full_load_task_set().tasks.iter()) {
            assert_eq!(a.id, b.id);
            assert_eq!(a.period, b.period);
            assert_eq!(a.execution_time, b.execution_time);
        }
    }

    #[test]
    fn single_fbs_task_gets_priority_zero() {
        let set = TaskSet::new(vec![TaskSpec::new(0, TaskKind::Fbs, 0.4, 0.0)]);
        let assigned = assign_rm_priorities(&set).unwrap();
        assert_eq!(assigned.tasks[0].priority, 0);
    }

    #[test]
    fn equal_periods_tie_break_by_ascending_id() {
        let set = TaskSet::new(vec![
            TaskSpec::new(5, TaskKind::Control, 0.010, 0.001),
            TaskSpec::new(2, TaskKind::Control, 0.010, 0.001),
            TaskSpec::new(9, TaskKind::Fbs, 0.4, 0.0),
        ]);
        let assigned = assign_rm_priorities(&set).unwrap();
        let prio_of = |id: u32| assigned.tasks.iter().find(|t| t.id == id).unwrap().priority;
        assert!(prio_of(2) < prio_of(5));
    }

    #[test]
    fn duplicate_ids_rejected() {
        let set = TaskSet::new(vec![
            TaskSpec::new(1, TaskKind::Control, 0.010, 0.001),
            TaskSpec::new(1, TaskKind::Control, 0.020, 0.001),
            TaskSpec::new(2, TaskKind::Fbs, 0.4, 0.0),
        ]);
        assert_eq!(
            assign_rm_priorities(&set).unwrap_err(),
            TaskError::DuplicateId(1)
        );
    }

    #[test]
    fn paper_utilization_is_1_24() {
        let u = requested_utilization(&TaskSet::new(vec![
            TaskSpec::new(1, TaskKind::Control, 0.017, 0.004),
            TaskSpec::new(2, TaskKind::Control, 0.014, 0.0046),
            TaskSpec::new(3, TaskKind::Control, 0.012, 0.0057),
            TaskSpec::new(4, TaskKind::Disturbance, 0.010, 0.002),
        ]));
        assert!((u - 1.24).abs() < 0.005, "expected 1.24, got {u}");
    }

    #[test]
    fn empty_set_has_zero_utilization() {
        assert_eq!(requested_utilization(&TaskSet::default()), 0.0);
    }

    #[test]
    fn single_task_utilization_is_direct_ratio() {
        let u = requested_utilization(&TaskSet::new(vec![TaskSpec::new(
            1,
            TaskKind::Control,
            0.010,
            0.005,
        )]));
        assert_relative_eq!(u, 0.5, epsilon = 1e-15);
    }

    #[test]
    fn utilization_is_additive_over_disjoint_sets() {
        let a = TaskSet::new(vec![TaskSpec::new(1, TaskKind::Control, 0.017, 0.004)]);
        let b = TaskSet::new(vec![
            TaskSpec::new(2, TaskKind::Control, 0.014, 0.0046),
            TaskSpec::new(3, TaskKind::Disturbance, 0.010, 0.002),
        ]);
        let mut joined = a.clone();
        joined.tasks.extend(b.tasks.clone());
        assert_relative_eq!(
            requested_utilization(&joined),
            requested_utilization(&a) + requested_utilization(&b),
            epsilon = 1e-15
        );
    }

    #[test]
    fn ll_bound_matches_paper_value_for_four_tasks() {
        let b = ll_bound(4).unwrap();
        assert!((b - 0.75683).abs() < 1e-4, "got {b}");
    }

    #[test]
    fn ll_bound_is_one_for_single_task() {
        assert_relative_eq!(ll_bound(1).unwrap(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn ll_bound_approaches_ln_two() {
        let b = ll_bound(1000).unwrap();
        assert!((b - 0.6934).abs() < 1e-3, "got {b}");
        assert!(b > std::f64::consts::LN_2);
    }

    #[test]
    fn ll_bound_rejects_zero() {
        assert_eq!(ll_bound(0).unwrap_err(), TaskError::ZeroTaskCount);
    }

    #[test]
    fn ll_bound_strictly_decreasing_and_above_ln2() {
        let mut prev = ll_bound(1).unwrap();
        for n in 2..=64 {
            let b = ll_bound(n).unwrap();
            assert!(b < prev, "bound must decrease at n={n}");
            assert!(b > std::f64::consts::LN_2);
            prev = b;
        }
    }
}
