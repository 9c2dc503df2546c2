//! The simulated processor and its coupling to the pendulums.
//!
//! One CPU runs every task under preemptive fixed-priority scheduling
//! with rate-monotonic priorities frozen at start time. Time advances in
//! micro-step chunks: within a chunk the schedule is exact — releases,
//! preemptions, and completions happen at their true instants in event
//! order — while each plant integrates once per chunk. A control job
//! reads the pendulum state as of the chunk it starts in and its output
//! takes hold at the end of the chunk it completes in, so
//! sampling-to-actuation latency degrades control exactly as the
//! schedule dictates, quantized no coarser than the integration grid.
//!
//! Overruns follow a drop policy: a job that exceeds its period keeps
//! the processor, and releases arriving while it is still pending are
//! discarded rather than queued, which bounds the backlog in overload.

use nalgebra::Vector2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{SchedMode, SimConfig, SimError};
use crate::cost::{total_cost, CostAccumulator, CostFunction};
use crate::neural::PeriodNet;
use crate::optimizer::{solve_closed_form, OptimizationProblem};
use crate::plant::{Controller, LqgCache, PendulumModel, MEASUREMENT_NOISE_VAR};
use crate::task::{assign_rm_priorities, TaskKind, TaskSet, TaskSpec};

/// What one scheduler invocation decided.
#[derive(Debug, Clone, PartialEq)]
pub struct FbsOutcome {
    /// New sampling period per loop, seconds.
    pub periods: Vec<f64>,
    /// True when the budget could not cover even the minimum frequencies
    /// and the floor assignment was applied instead.
    pub overload: bool,
}

/// One scheduler invocation: gather the current execution times, compute
/// the control budget left after the disturbance task, and produce the
/// new sampling periods for the mode in force.
///
/// Open-loop scheduling returns the current periods untouched. Optimal
/// feedback scheduling re-solves the period assignment. Neural feedback
/// scheduling runs the trained network, then projects the prediction
/// onto the budget. A budget at or below the floor load (every loop at
/// minimum frequency) is flagged and answered with the floor assignment
/// rather than an error, since overload is a regime the simulation is
/// meant to explore.
pub fn fbs_invoke(
    mode: SchedMode,
    exec_times: &[f64],
    current_periods: &[f64],
    u_budget: f64,
    gammas: &[f64],
    weights: &[f64],
    f_bounds: (f64, f64),
    net: Option<&PeriodNet>,
) -> Result<FbsOutcome, SimError> {
    let n = exec_times.len();
    if current_periods.len() != n || gammas.len() != n || weights.len() != n {
        return Err(SimError::BadConfig(
            "scheduler inputs disagree on the number of loops".into(),
        ));
    }
    if mode == SchedMode::Ols {
        return Ok(FbsOutcome {
            periods: current_periods.to_vec(),
            overload: false,
        });
    }
    let (f_lo, f_hi) = f_bounds;
    let floor_load: f64 = exec_times.iter().map(|c| c * f_lo).sum();
    if u_budget <= floor_load {
        return Ok(FbsOutcome {
            periods: vec![1.0 / f_lo; n],
            overload: true,
        });
    }
    let periods = match mode {
        SchedMode::Ofs => {
            let costs: Vec<CostFunction> = gammas
                .iter()
                .zip(weights)
                .map(|(&g, &w)| CostFunction::reciprocal(g, w))
                .collect();
            let problem = OptimizationProblem::with_bounds(
                costs,
                exec_times.to_vec(),
                u_budget,
                (f_lo, f_hi),
            );
            solve_closed_form(&problem)?.periods
        }
        SchedMode::Nfs => {
            let net = net.ok_or(SimError::MissingModel)?;
            let predicted = net.predict(exec_times, u_budget)?;
            project_to_budget(exec_times, &predicted, u_budget, f_bounds)?
        }
        SchedMode::Ols => unreachable!(),
    };
    Ok(FbsOutcome {
        periods,
        overload: false,
    })
}

/// Force a period assignment to respect the utilization budget.
///
/// Frequencies are clamped into their box, then scaled down uniformly —
/// holding any that would drop below the floor at the floor — until the
/// load fits. The network's raw predictions carry a small approximation
/// error, so without this step a prediction could oversubscribe the CPU
/// it was asked to protect. The budget must admit the all-floor
/// assignment.
pub fn project_to_budget(
    exec_times: &[f64],
    periods: &[f64],
    u_budget: f64,
    f_bounds: (f64, f64),
) -> Result<Vec<f64>, SimError> {
    if exec_times.len() != periods.len() {
        return Err(SimError::BadConfig(
            "one execution time per period is required".into(),
        ));
    }
    let (f_lo, f_hi) = f_bounds;
    let mut freqs: Vec<f64> = periods
        .iter()
        .map(|&h| {
            if h > 0.0 && h.is_finite() {
                (1.0 / h).clamp(f_lo, f_hi)
            } else {
                f_lo
            }
        })
        .collect();
    let floor_load: f64 = exec_times.iter().map(|c| c * f_lo).sum();
    if u_budget < floor_load {
        return Err(SimError::BadConfig(format!(
            "budget {u_budget} cannot cover the floor load {floor_load}"
        )));
    }
    // Each pass either fits the budget exactly or pins at least one more
    // frequency at the floor, so n + 1 passes always suffice.
    for _ in 0..=exec_times.len() {
        let load: f64 = exec_times.iter().zip(&freqs).map(|(c, f)| c * f).sum();
        if load <= u_budget {
            break;
        }
        let pinned: f64 = exec_times
            .iter()
            .zip(&freqs)
            .filter(|(_, &f)| f <= f_lo)
            .map(|(c, f)| c * f)
            .sum();
        let free = load - pinned;
        let scale = (u_budget - pinned) / free;
        for f in freqs.iter_mut().filter(|f| **f > f_lo) {
            *f = (*f * scale).max(f_lo);
        }
    }
    Ok(freqs.iter().map(|f| 1.0 / f).collect())
}

/// A completed scheduler invocation, as logged.
#[derive(Debug, Clone, PartialEq)]
pub struct FbsEvent {
    pub t_release: f64,
    pub t_complete: f64,
    /// Scheduling latency: completion minus release.
    pub latency: f64,
    /// Execution times read at invocation, one per loop plus the
    /// disturbance task.
    pub exec_snapshot: Vec<f64>,
    /// Budget handed to the period assignment.
    pub u_budget: f64,
    /// Periods decided, one per loop.
    pub periods: Vec<f64>,
    pub overload: bool,
}

/// A release discarded because the previous job of the task was still
/// pending — the observable form of a deadline miss under the drop
/// policy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DropEvent {
    pub t: f64,
    pub task_id: u32,
}

/// First time a loop's pendulum angle hit the saturation bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InstabilityEvent {
    pub t: f64,
    pub loop_idx: usize,
}

/// One sampled row of the run.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub t: f64,
    /// Accumulated (y² + u²) integral per loop.
    pub j_loops: Vec<f64>,
    /// Weighted sum of the per-loop integrals.
    pub j_sum: f64,
    /// Sampling period in force per loop, seconds.
    pub periods: Vec<f64>,
    /// Requested utilization of the whole task set, uncapped so overload
    /// reads as a value above one.
    pub u_req: f64,
    /// True pendulum angles.
    pub y: Vec<f64>,
    /// Control signals currently held at the plants.
    pub u: Vec<f64>,
}

/// Scheduling totals for one task over the run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaskStats {
    pub id: u32,
    pub kind: TaskKind,
    pub priority: u32,
    pub loop_idx: Option<usize>,
    pub releases: u64,
    pub drops: u64,
    pub completions: u64,
    /// Processor time consumed, seconds.
    pub busy: f64,
}

/// Everything a run produces.
#[derive(Debug, Clone, PartialEq)]
pub struct SimLog {
    pub mode: SchedMode,
    pub seed: u64,
    pub rows: Vec<LogRow>,
    pub fbs_events: Vec<FbsEvent>,
    pub drop_events: Vec<DropEvent>,
    pub instability: Vec<InstabilityEvent>,
    pub task_stats: Vec<TaskStats>,
    /// Final accumulated (y² + u²) integral per loop.
    pub loop_costs: Vec<f64>,
    /// Final weighted total.
    pub j_sum: f64,
}

impl SimLog {
    /// When the given loop first saturated, if it ever did.
    pub fn first_instability(&self, loop_idx: usize) -> Option<f64> {
        self.instability
            .iter()
            .find(|e| e.loop_idx == loop_idx)
            .map(|e| e.t)
    }

    /// Largest requested utilization among rows at or after `t_from`.
    pub fn max_u_req_from(&self, t_from: f64) -> f64 {
        self.rows
            .iter()
            .filter(|r| r.t >= t_from)
            .map(|r| r.u_req)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// A job that has been released and not yet completed.
struct Job {
    remaining: f64,
    started: bool,
    release_t: f64,
    /// Control output computed at start, actuated at completion.
    u_out: f64,
    /// Scheduler result computed at start, applied at completion.
    fbs: Option<FbsComputation>,
}

struct FbsComputation {
    exec_snapshot: Vec<f64>,
    u_budget: f64,
    periods: Vec<f64>,
    overload: bool,
}

/// Scheduler-side state of one task.
struct KTask {
    id: u32,
    kind: TaskKind,
    priority: u32,
    loop_idx: Option<usize>,
    /// Column of the execution-time trace this task draws from; the
    /// scheduler task has a fixed execution time instead.
    trace_col: Option<usize>,
    period: f64,
    /// Set by a scheduler decision, honored at the next release.
    pending_period: Option<f64>,
    /// Releases fall at `era_start + k * period`: anchoring on the last
    /// period change instead of adding periods one by one keeps release
    /// instants exactly on the trace-change and chunk grids instead of
    /// drifting off them one rounding error per release.
    era_start: f64,
    era_index: u64,
    next_release: f64,
    job: Option<Job>,
    releases: u64,
    drops: u64,
    completions: u64,
    busy: f64,
}

/// Plant-side state of one control loop.
struct LoopState {
    model: PendulumModel,
    controller: Controller,
    x: Vector2<f64>,
    held_u: f64,
    acc: CostAccumulator,
    proc_rng: ChaCha8Rng,
    meas_rng: ChaCha8Rng,
    unstable: bool,
}

struct EventLog {
    fbs: Vec<FbsEvent>,
    drops: Vec<DropEvent>,
    instability: Vec<InstabilityEvent>,
}

/// Run one co-simulation to completion.
///
/// The neural mode needs its trained network; the other modes ignore
/// `net`. Two calls with the same configuration produce identical logs:
/// every loop draws process and measurement noise from its own pair of
/// seeded streams, so the plants see the same disturbances whatever the
/// scheduling mode does.
pub fn run_simulation(config: &SimConfig, net: Option<&PeriodNet>) -> Result<SimLog, SimError> {
    config.validate()?;
    if config.mode == SchedMode::Nfs && net.is_none() {
        return Err(SimError::MissingModel);
    }
    let n = config.n_loops();
    let dt = config.micro_step;

    // Priorities are rate monotonic over the starting periods and stay
    // fixed; the scheduler task outranks everything.
    let mut specs = vec![TaskSpec::new(
        0,
        TaskKind::Fbs,
        config.fbs_period,
        config.fbs_exec,
    )];
    for i in 0..n {
        specs.push(
            TaskSpec::new(
                i as u32 + 1,
                TaskKind::Control,
                config.initial_periods[i],
                config.trace.value_at(0.0, i),
            )
            .with_loop_index(i),
        );
    }
    specs.push(TaskSpec::new(
        n as u32 + 1,
        TaskKind::Disturbance,
        config.dist_period,
        config.trace.value_at(0.0, n),
    ));
    let mut ranked = assign_rm_priorities(&TaskSet::new(specs))?.tasks;
    ranked.sort_by_key(|s| s.priority);

    let mut tasks: Vec<KTask> = ranked
        .iter()
        .map(|s| KTask {
            id: s.id,
            kind: s.kind,
            priority: s.priority,
            loop_idx: s.loop_index,
            trace_col: match s.kind {
                TaskKind::Control => s.loop_index,
                TaskKind::Disturbance => Some(n),
                TaskKind::Fbs => None,
            },
            period: s.period,
            pending_period: None,
            era_start: 0.0,
            era_index: 0,
            next_release: 0.0,
            job: None,
            releases: 0,
            drops: 0,
            completions: 0,
            busy: 0.0,
        })
        .collect();
    let loop_task: Vec<usize> = (0..n)
        .map(|i| {
            tasks
                .iter()
                .position(|k| k.loop_idx == Some(i))
                .expect("every loop has a task")
        })
        .collect();

    let mut cache = LqgCache::new();
    let mut loops = Vec::with_capacity(n);
    for i in 0..n {
        let model = PendulumModel::new(config.omega0[i]);
        let design = cache.design(&model, config.initial_periods[i])?;
        let mut proc_rng = ChaCha8Rng::seed_from_u64(config.seed);
        proc_rng.set_stream(2 * i as u64);
        let mut meas_rng = ChaCha8Rng::seed_from_u64(config.seed);
        meas_rng.set_stream(2 * i as u64 + 1);
        loops.push(LoopState {
            model,
            controller: Controller::new(design),
            x: Vector2::zeros(),
            held_u: 0.0,
            acc: CostAccumulator::new(),
            proc_rng,
            meas_rng,
            unstable: false,
        });
    }

    let mut events = EventLog {
        fbs: Vec::new(),
        drops: Vec::new(),
        instability: Vec::new(),
    };
    let mut rows = Vec::new();
    let mut pending_actuations: Vec<(usize, f64)> = Vec::new();

    let chunks = (config.duration / dt).round() as u64;
    let log_every = (config.log_step / dt).round() as u64;
    if chunks > 0 {
        rows.push(make_row(0.0, config, &tasks, &loops, &loop_task)?);
    }

    for k in 0..chunks {
        let t0 = k as f64 * dt;
        let t1 = (k + 1) as f64 * dt;
        advance_cpu(
            t0, t1, config, net, &mut tasks, &mut loops, &mut cache, &loop_task, &mut events,
            &mut pending_actuations,
        )?;

        for (i, lp) in loops.iter_mut().enumerate() {
            lp.acc.accumulate(lp.x[0], lp.held_u, dt)?;
            let xi: f64 = StandardNormal.sample(&mut lp.proc_rng);
            lp.x = lp.model.step_with_noise(&lp.x, lp.held_u, dt, xi)?;
            let bound = config.state_clamp;
            if lp.x[0].abs() > bound {
                if !lp.unstable {
                    lp.unstable = true;
                    events.instability.push(InstabilityEvent { t: t1, loop_idx: i });
                }
                lp.x[0] = lp.x[0].clamp(-bound, bound);
                lp.x[1] = lp.x[1].clamp(-bound, bound);
            }
        }
        for (loop_idx, u) in pending_actuations.drain(..) {
            loops[loop_idx].held_u = u;
        }

        if (k + 1) % log_every == 0 {
            rows.push(make_row(t1, config, &tasks, &loops, &loop_task)?);
        }
    }

    let accs: Vec<CostAccumulator> = loops.iter().map(|lp| lp.acc).collect();
    let j_sum = total_cost(&accs, &config.weights)?;
    Ok(SimLog {
        mode: config.mode,
        seed: config.seed,
        rows,
        fbs_events: events.fbs,
        drop_events: events.drops,
        instability: events.instability,
        task_stats: tasks
            .iter()
            .map(|k| TaskStats {
                id: k.id,
                kind: k.kind,
                priority: k.priority,
                loop_idx: k.loop_idx,
                releases: k.releases,
                drops: k.drops,
                completions: k.completions,
                busy: k.busy,
            })
            .collect(),
        loop_costs: accs.iter().map(|a| a.total).collect(),
        j_sum,
    })
}

/// Play the schedule forward over one chunk `[t0, t1)`.
///
/// Same-instant events resolve in a fixed order — completions, then
/// releases, then job starts — and ties between tasks go to the higher
/// priority. A completion landing exactly on the chunk boundary still
/// belongs to this chunk, so its actuation takes hold at `t1`.
#[allow(clippy::too_many_arguments)]
fn advance_cpu(
    t0: f64,
    t1: f64,
    config: &SimConfig,
    net: Option<&PeriodNet>,
    tasks: &mut [KTask],
    loops: &mut [LoopState],
    cache: &mut LqgCache,
    loop_task: &[usize],
    events: &mut EventLog,
    pending_actuations: &mut Vec<(usize, f64)>,
) -> Result<(), SimError> {
    let mut t = t0;
    let mut guard = 0u64;
    loop {
        guard += 1;
        if guard > 10_000_000 {
            return Err(SimError::BadConfig(
                "scheduler event loop failed to make progress".into(),
            ));
        }

        // Completions first: a started job with no demand left retires now.
        if let Some(ti) = tasks
            .iter()
            .position(|k| k.job.as_ref().is_some_and(|j| j.started && j.remaining <= 0.0))
        {
            complete_job(ti, t, tasks, loop_task, events, pending_actuations);
            continue;
        }

        // Releases due now, highest priority first.
        for ti in 0..tasks.len() {
            while tasks[ti].next_release <= t {
                release_task(ti, tasks, loops, cache, config, events)?;
            }
        }

        // Dispatch: the highest-priority pending job owns the processor;
        // give a fresh one its inputs before it runs.
        let running = tasks
            .iter()
            .enumerate()
            .filter(|(_, k)| k.job.is_some())
            .min_by_key(|(_, k)| k.priority)
            .map(|(ti, _)| ti);
        if let Some(ti) = running {
            if !tasks[ti].job.as_ref().expect("running job").started {
                start_job(ti, t, config, net, tasks, loops, loop_task)?;
                continue;
            }
        }

        // Advance to the next event: the running job's completion, the
        // earliest release, or the chunk boundary.
        let next_release = tasks
            .iter()
            .map(|k| k.next_release)
            .fold(f64::INFINITY, f64::min);
        match running {
            Some(ti) => {
                let remaining = tasks[ti].job.as_ref().expect("running job").remaining;
                let completion = t + remaining;
                if completion <= next_release && completion <= t1 {
                    tasks[ti].busy += completion - t;
                    tasks[ti].job.as_mut().expect("running job").remaining = 0.0;
                    t = completion;
                } else if next_release < t1 {
                    tasks[ti].busy += next_release - t;
                    tasks[ti].job.as_mut().expect("running job").remaining -= next_release - t;
                    t = next_release;
                } else {
                    tasks[ti].busy += t1 - t;
                    tasks[ti].job.as_mut().expect("running job").remaining -= t1 - t;
                    return Ok(());
                }
            }
            None => {
                if next_release < t1 {
                    t = next_release;
                } else {
                    return Ok(());
                }
            }
        }
    }
}

/// Honor one release instant of `tasks[ti]`.
fn release_task(
    ti: usize,
    tasks: &mut [KTask],
    loops: &mut [LoopState],
    cache: &mut LqgCache,
    config: &SimConfig,
    events: &mut EventLog,
) -> Result<(), SimError> {
    let released_at = tasks[ti].next_release;
    if let Some(p) = tasks[ti].pending_period.take() {
        if p != tasks[ti].period {
            tasks[ti].period = p;
            tasks[ti].era_start = released_at;
            tasks[ti].era_index = 0;
            if let Some(li) = tasks[ti].loop_idx {
                let design = cache.design(&loops[li].model, p)?;
                loops[li].controller.retarget(design);
            }
        }
    }
    tasks[ti].releases += 1;
    if tasks[ti].job.is_some() {
        tasks[ti].drops += 1;
        events.drops.push(DropEvent {
            t: released_at,
            task_id: tasks[ti].id,
        });
    } else {
        let demand = match tasks[ti].trace_col {
            Some(col) => config.trace.value_at(released_at, col),
            None => config.fbs_exec,
        };
        tasks[ti].job = Some(Job {
            remaining: demand,
            started: false,
            release_t: released_at,
            u_out: 0.0,
            fbs: None,
        });
    }
    tasks[ti].era_index += 1;
    tasks[ti].next_release = tasks[ti].era_start + tasks[ti].era_index as f64 * tasks[ti].period;
    Ok(())
}

/// Give a job its inputs the first time it gets the processor: a control
/// job samples its pendulum and computes the control move, the scheduler
/// job reads the load and decides the new periods.
fn start_job(
    ti: usize,
    t: f64,
    config: &SimConfig,
    net: Option<&PeriodNet>,
    tasks: &mut [KTask],
    loops: &mut [LoopState],
    loop_task: &[usize],
) -> Result<(), SimError> {
    match tasks[ti].kind {
        TaskKind::Control => {
            let li = tasks[ti].loop_idx.expect("control task has a loop");
            let lp = &mut loops[li];
            let xi: f64 = StandardNormal.sample(&mut lp.meas_rng);
            let y = lp.x[0] + MEASUREMENT_NOISE_VAR.sqrt() * xi;
            let u = lp.controller.step(y);
            let job = tasks[ti].job.as_mut().expect("job being started");
            job.u_out = u;
            job.started = true;
        }
        TaskKind::Fbs => {
            let n = config.n_loops();
            let snapshot = config.trace.values_at(t).to_vec();
            let u_budget = config.u_setpoint - snapshot[n] / config.dist_period;
            let current: Vec<f64> = loop_task.iter().map(|&j| tasks[j].period).collect();
            let outcome = fbs_invoke(
                config.mode,
                &snapshot[..n],
                &current,
                u_budget,
                &config.gammas,
                &config.weights,
                config.f_bounds,
                net,
            )?;
            let job = tasks[ti].job.as_mut().expect("job being started");
            job.fbs = Some(FbsComputation {
                exec_snapshot: snapshot,
                u_budget,
                periods: outcome.periods,
                overload: outcome.overload,
            });
            job.started = true;
        }
        TaskKind::Disturbance => {
            tasks[ti].job.as_mut().expect("job being started").started = true;
        }
    }
    Ok(())
}

/// Retire the job of `tasks[ti]` at instant `t`.
fn complete_job(
    ti: usize,
    t: f64,
    tasks: &mut [KTask],
    loop_task: &[usize],
    events: &mut EventLog,
    pending_actuations: &mut Vec<(usize, f64)>,
) {
    let job = tasks[ti].job.take().expect("job being completed");
    tasks[ti].completions += 1;
    match tasks[ti].kind {
        TaskKind::Control => {
            let li = tasks[ti].loop_idx.expect("control task has a loop");
            pending_actuations.push((li, job.u_out));
        }
        TaskKind::Fbs => {
            let decision = job.fbs.expect("scheduler job carries its decision");
            for (i, &p) in decision.periods.iter().enumerate() {
                tasks[loop_task[i]].pending_period = Some(p);
            }
            events.fbs.push(FbsEvent {
                t_release: job.release_t,
                t_complete: t,
                latency: t - job.release_t,
                exec_snapshot: decision.exec_snapshot,
                u_budget: decision.u_budget,
                periods: decision.periods,
                overload: decision.overload,
            });
        }
        TaskKind::Disturbance => {}
    }
}

fn make_row(
    t: f64,
    config: &SimConfig,
    tasks: &[KTask],
    loops: &[LoopState],
    loop_task: &[usize],
) -> Result<LogRow, SimError> {
    let j_loops: Vec<f64> = loops.iter().map(|lp| lp.acc.total).collect();
    let j_sum = j_loops
        .iter()
        .zip(&config.weights)
        .map(|(j, w)| j * w)
        .sum();
    let periods: Vec<f64> = loop_task.iter().map(|&ti| tasks[ti].period).collect();
    let u_req = tasks
        .iter()
        .map(|k| match k.trace_col {
            Some(col) => config.trace.value_at(t, col) / k.period,
            None => config.fbs_exec / k.period,
        })
        .sum();
    Ok(LogRow {
        t,
        j_loops,
        j_sum,
        periods,
        u_req,
        y: loops.iter().map(|lp| lp.x[0]).collect(),
        u: loops.iter().map(|lp| lp.held_u).collect(),
    })
}
