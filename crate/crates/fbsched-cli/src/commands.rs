//! The six subcommands. Each one reads a scenario, produces its
//! artifacts under the output directory, and prints a one-line summary;
//! anything unexpected surfaces as an error that the caller turns into
//! a nonzero exit.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use fbsched::neural::{
    flop_count, gen_dataset, load_model, save_model, train_lm, Dataset, PeriodNet,
};
use fbsched::sim::{
    compare_overhead, overhead_instances, run_simulation, OverheadRun, SchedMode, SimLog,
};

use crate::output::{csv_bytes, fmt, write_atomic};
use crate::scenario::Scenario;

/// Everything a subcommand needs: the parsed scenario plus the
/// flag-resolved output directory and seed.
pub struct Ctx {
    pub scenario: Scenario,
    pub out_dir: PathBuf,
    pub seed: u64,
}

impl Ctx {
    pub fn new(scenario_path: &Path, out: Option<PathBuf>, seed: Option<u64>) -> Result<Self> {
        let scenario = Scenario::load(scenario_path)?;
        let out_dir = out.unwrap_or_else(|| scenario.out_dir.clone());
        let seed = seed.unwrap_or(scenario.seed);
        Ok(Self {
            scenario,
            out_dir,
            seed,
        })
    }

    fn dataset_path(&self) -> PathBuf {
        self.out_dir.join("dataset.csv")
    }

    fn model_path(&self) -> PathBuf {
        self.scenario.model_path(&self.out_dir)
    }

    /// Load the trained predictor, insisting that it exists.
    fn load_net(&self, needed_by: &str) -> Result<PeriodNet> {
        let path = self.model_path();
        if !path.exists() {
            bail!(
                "{needed_by} needs a trained model at '{}'; run `train` first",
                path.display()
            );
        }
        load_model(&path).with_context(|| format!("cannot load model '{}'", path.display()))
    }
}

/// `gen-data`: solve the exact optimizer over the scenario's grid and
/// write the supervised table.
pub fn gen_data(ctx: &Ctx) -> Result<()> {
    let s = &ctx.scenario;
    let dataset = gen_dataset(
        &s.costs(),
        &s.dataset.exec_grids_s,
        &s.dataset.u_budgets,
        s.f_bounds(),
    )?;
    let n = s.n_loops();
    let mut header: Vec<String> = (1..=n).map(|i| format!("c_{i}")).collect();
    header.push("u_budget".into());
    header.extend((1..=n).map(|i| format!("h_{i}")));
    let rows: Vec<Vec<String>> = (0..dataset.rows())
        .map(|r| {
            let mut row = Vec::with_capacity(2 * n + 1);
            row.extend((0..dataset.n_in()).map(|c| fmt(dataset.features[(r, c)])));
            row.extend((0..dataset.n_out()).map(|c| fmt(dataset.targets[(r, c)])));
            row
        })
        .collect();
    let path = ctx.dataset_path();
    write_atomic(&path, &csv_bytes(&header, &rows)?)?;
    println!(
        "{} rows solved exactly over {} loops -> {}",
        dataset.rows(),
        n,
        path.display()
    );
    Ok(())
}

/// Read a dataset written by `gen-data` back into matrices.
fn read_dataset(path: &Path, n_loops: usize) -> Result<Dataset> {
    let mut rdr = csv::Reader::from_path(path)
        .with_context(|| format!("cannot read dataset '{}'; run `gen-data` first", path.display()))?;
    let width = rdr.headers().context("dataset header")?.len();
    if width != 2 * n_loops + 1 {
        bail!(
            "dataset '{}' has {} columns; expected {} for {} loops",
            path.display(),
            width,
            2 * n_loops + 1,
            n_loops
        );
    }
    let mut features = Vec::new();
    let mut targets = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record.with_context(|| format!("dataset row {}", i + 1))?;
        let mut values = Vec::with_capacity(width);
        for field in record.iter() {
            let v: f64 = field
                .parse()
                .with_context(|| format!("bad number '{}' in dataset row {}", field, i + 1))?;
            values.push(v);
        }
        targets.push(values.split_off(n_loops + 1));
        features.push(values);
    }
    Ok(Dataset::from_rows(features, targets)?)
}

/// `train`: fit the period predictor to the generated dataset, save the
/// model, and log the per-epoch error history.
pub fn train(ctx: &Ctx) -> Result<()> {
    let s = &ctx.scenario;
    let dataset = read_dataset(&ctx.dataset_path(), s.n_loops())?;
    let config = s.lm_config(s.training.m_hidden);
    let (net, report) = train_lm(&dataset, &config, ctx.seed)?;
    let model_path = ctx.model_path();
    if let Some(dir) = model_path.parent() {
        std::fs::create_dir_all(dir)
            .with_context(|| format!("cannot create directory '{}'", dir.display()))?;
    }
    save_model(&net, &model_path)?;

    let header: Vec<String> = ["epoch", "train_mse", "holdout_mse"]
        .map(String::from)
        .to_vec();
    let rows: Vec<Vec<String>> = report
        .history
        .iter()
        .map(|e| vec![e.epoch.to_string(), fmt(e.train_mse), fmt(e.holdout_mse)])
        .collect();
    write_atomic(
        &ctx.out_dir.join("training_report.csv"),
        &csv_bytes(&header, &rows)?,
    )?;

    println!(
        "trained m={} on {} rows ({} held out) in {} epochs; holdout period error mean {:.2}%, max {:.2}% -> {}",
        config.m_hidden,
        report.train_rows,
        report.holdout_rows,
        report.epochs,
        100.0 * report.holdout_mean_rel_err,
        100.0 * report.holdout_max_rel_err,
        model_path.display()
    );
    Ok(())
}

/// `simulate`: run one experiment and write its log.
pub fn simulate(ctx: &Ctx, mode_flag: Option<SchedMode>) -> Result<()> {
    let s = &ctx.scenario;
    let mode = s.mode(mode_flag)?;
    let config = s.sim_config(mode, ctx.seed)?;
    let net = if mode == SchedMode::Nfs {
        Some(ctx.load_net("the neural mode")?)
    } else {
        None
    };
    let log = run_simulation(&config, net.as_ref())?;
    let path = ctx.out_dir.join(format!("log_{}.csv", mode.as_str()));
    write_atomic(&path, &render_log(&log, s.n_loops())?)?;
    println!(
        "{} over {} s: J_SUM = {:.4}, peak U_req = {:.4}, {} drops, {} falls -> {}",
        mode.as_str(),
        fmt(config.duration),
        log.j_sum,
        log.max_u_req_from(0.0),
        log.drop_events.len(),
        log.instability.len(),
        path.display()
    );
    Ok(())
}

/// Render a run as CSV: one row per log instant, with the scheduling
/// events that happened since the previous instant tagged in the last
/// column.
fn render_log(log: &SimLog, n: usize) -> Result<Vec<u8>> {
    let mut header: Vec<String> = vec!["time_s".into(), "mode".into(), "J_sum".into()];
    header.extend((1..=n).map(|i| format!("J_{i}")));
    header.extend((1..=n).map(|i| format!("h_{i}")));
    header.push("U_req".into());
    header.push("events".into());

    // Merge the event streams into one time-ordered tag list; ties
    // break on kind then text so reruns order them identically.
    let mut events: Vec<(f64, u8, String)> = Vec::new();
    for e in &log.fbs_events {
        let tag = if e.overload { "fbs_overload" } else { "fbs" };
        events.push((e.t_complete, 0, tag.into()));
    }
    for d in &log.drop_events {
        events.push((d.t, 1, format!("drop:{}", d.task_id)));
    }
    for i in &log.instability {
        events.push((i.t, 2, format!("unstable:{}", i.loop_idx + 1)));
    }
    events.sort_by(|a, b| {
        a.0.partial_cmp(&b.0)
            .expect("event times are finite")
            .then(a.1.cmp(&b.1))
            .then(a.2.cmp(&b.2))
    });

    let mut rows = Vec::with_capacity(log.rows.len());
    let mut next_event = 0;
    for (ri, row) in log.rows.iter().enumerate() {
        let last = ri + 1 == log.rows.len();
        let mut tags: Vec<&str> = Vec::new();
        while next_event < events.len() && (last || events[next_event].0 <= row.t) {
            tags.push(&events[next_event].2);
            next_event += 1;
        }
        let mut rec = vec![fmt(row.t), log.mode.as_str().to_string(), fmt(row.j_sum)];
        rec.extend(row.j_loops.iter().map(|v| fmt(*v)));
        rec.extend(row.periods.iter().map(|v| fmt(*v)));
        rec.push(fmt(row.u_req));
        rec.push(tags.join(";"));
        rows.push(rec);
    }
    csv_bytes(&header, &rows)
}

/// `bench-overhead`: time both decision paths on seeded random loads
/// and write the raw samples plus their summaries.
pub fn bench_overhead(ctx: &Ctx, runs_flag: Option<usize>) -> Result<()> {
    let s = &ctx.scenario;
    let runs = runs_flag.unwrap_or(s.bench.runs);
    if runs == 0 {
        bail!("need at least one benchmark run");
    }
    let net = ctx.load_net("the neural path")?;
    let instances = overhead_instances(
        &s.exec_trace()?,
        s.simulation.u_setpoint,
        s.disturbance.period_s,
        runs,
        ctx.seed,
    );
    let gammas: Vec<f64> = s.loops.iter().map(|l| l.gamma).collect();
    let weights: Vec<f64> = s.loops.iter().map(|l| l.weight).collect();
    let pair = compare_overhead(&instances, &gammas, &weights, s.f_bounds(), &net)?;

    let run_header: Vec<String> = ["run_index", "mode", "seconds"].map(String::from).to_vec();
    let mut run_rows = Vec::with_capacity(2 * runs);
    for run in [&pair.ofs, &pair.nfs] {
        for (i, sec) in run.samples.iter().enumerate() {
            run_rows.push(vec![i.to_string(), run.mode.as_str().into(), fmt(*sec)]);
        }
    }
    write_atomic(
        &ctx.out_dir.join("overhead_runs.csv"),
        &csv_bytes(&run_header, &run_rows)?,
    )?;

    let sum_header: Vec<String> = [
        "mode", "count", "mean_s", "min_s", "q1_s", "median_s", "q3_s", "max_s",
    ]
    .map(String::from)
    .to_vec();
    let summary_row = |run: &OverheadRun| {
        let r = &run.report;
        vec![
            run.mode.as_str().into(),
            r.count.to_string(),
            fmt(r.mean),
            fmt(r.min),
            fmt(r.q1),
            fmt(r.median),
            fmt(r.q3),
            fmt(r.max),
        ]
    };
    let sum_rows = vec![summary_row(&pair.ofs), summary_row(&pair.nfs)];
    let summary_path = ctx.out_dir.join("overhead_summary.csv");
    write_atomic(&summary_path, &csv_bytes(&sum_header, &sum_rows)?)?;

    println!(
        "exact median {:.2} us, neural median {:.2} us over {} runs (ratio {:.1}x) -> {}",
        1e6 * pair.ofs.report.median,
        1e6 * pair.nfs.report.median,
        runs,
        pair.ofs.report.median / pair.nfs.report.median,
        summary_path.display()
    );
    Ok(())
}

/// One mode's worth of numbers pulled back out of a log file.
struct LogSummary {
    mode: String,
    j_sum: f64,
    u_min: f64,
    u_max: f64,
}

fn read_log_summary(path: &Path, n_loops: usize) -> Result<LogSummary> {
    let mut rdr = csv::Reader::from_path(path)
        .with_context(|| format!("cannot read log '{}'", path.display()))?;
    let headers = rdr.headers().context("log header")?;
    let expected = 5 + 2 * n_loops;
    if headers.len() != expected {
        bail!(
            "log '{}' has {} columns; expected {} for {} loops",
            path.display(),
            headers.len(),
            expected,
            n_loops
        );
    }
    let u_col = 3 + 2 * n_loops;
    let mut mode = String::new();
    let mut j_sum = 0.0;
    let mut u_min = f64::INFINITY;
    let mut u_max = f64::NEG_INFINITY;
    let mut rows = 0;
    for (i, record) in rdr.records().enumerate() {
        let record = record.with_context(|| format!("log row {}", i + 1))?;
        mode = record[1].to_string();
        j_sum = record[2]
            .parse()
            .with_context(|| format!("bad J_sum in log row {}", i + 1))?;
        let u: f64 = record[u_col]
            .parse()
            .with_context(|| format!("bad U_req in log row {}", i + 1))?;
        u_min = u_min.min(u);
        u_max = u_max.max(u);
        rows += 1;
    }
    if rows == 0 {
        bail!("log '{}' has no rows", path.display());
    }
    Ok(LogSummary {
        mode,
        j_sum,
        u_min,
        u_max,
    })
}

/// `report`: summarize whatever logs and benchmark results the output
/// directory already holds.
pub fn report(ctx: &Ctx) -> Result<()> {
    let n = ctx.scenario.n_loops();
    let logs: Vec<LogSummary> = [SchedMode::Ols, SchedMode::Ofs, SchedMode::Nfs]
        .iter()
        .filter_map(|m| {
            let path = ctx.out_dir.join(format!("log_{}.csv", m.as_str()));
            path.exists().then(|| read_log_summary(&path, n))
        })
        .collect::<Result<_>>()?;
    let summary_path = ctx.out_dir.join("overhead_summary.csv");
    let have_bench = summary_path.exists();
    if logs.is_empty() && !have_bench {
        bail!(
            "nothing to report in '{}'; run `simulate` or `bench-overhead` first",
            ctx.out_dir.display()
        );
    }

    if !logs.is_empty() {
        println!("final accumulated cost");
        println!("  {:<6} {:>12}", "mode", "J_SUM");
        for l in &logs {
            println!("  {:<6} {:>12.4}", l.mode, l.j_sum);
        }
        println!();
        println!("requested utilization over the run");
        println!("  {:<6} {:>8} {:>8}", "mode", "min", "max");
        for l in &logs {
            println!("  {:<6} {:>8.4} {:>8.4}", l.mode, l.u_min, l.u_max);
        }
    }

    if have_bench {
        let mut rdr = csv::Reader::from_path(&summary_path)
            .with_context(|| format!("cannot read '{}'", summary_path.display()))?;
        let mut medians: Vec<(String, f64, f64, f64)> = Vec::new();
        for record in rdr.records() {
            let record = record.context("overhead summary row")?;
            medians.push((
                record[0].to_string(),
                record[4].parse().context("q1_s")?,
                record[5].parse().context("median_s")?,
                record[6].parse().context("q3_s")?,
            ));
        }
        if !logs.is_empty() {
            println!();
        }
        println!("scheduling overhead per decision, microseconds");
        println!("  {:<6} {:>10} {:>10} {:>10}", "mode", "q1", "median", "q3");
        for (mode, q1, median, q3) in &medians {
            println!(
                "  {:<6} {:>10.3} {:>10.3} {:>10.3}",
                mode,
                1e6 * q1,
                1e6 * median,
                1e6 * q3
            );
        }
        if let (Some(ofs), Some(nfs)) = (
            medians.iter().find(|m| m.0 == "ofs"),
            medians.iter().find(|m| m.0 == "nfs"),
        ) {
            println!("  median ratio exact/neural: {:.1}x", ofs.2 / nfs.2);
        }
    }
    Ok(())
}

/// `sweep-hidden`: retrain at several hidden-layer widths and tabulate
/// accuracy against evaluation cost.
pub fn sweep_hidden(ctx: &Ctx, hidden_flag: Option<Vec<usize>>) -> Result<()> {
    let s = &ctx.scenario;
    let sizes = hidden_flag.unwrap_or_else(|| vec![2, 4, 6, 8, 10, 12]);
    if sizes.is_empty() {
        bail!("need at least one hidden-layer width");
    }
    let dataset = read_dataset(&ctx.dataset_path(), s.n_loops())?;
    let header: Vec<String> = [
        "m_hidden",
        "holdout_mean_rel_err",
        "holdout_max_rel_err",
        "flop_count",
    ]
    .map(String::from)
    .to_vec();
    let mut rows = Vec::with_capacity(sizes.len());
    println!(
        "{:>8} {:>14} {:>14} {:>6}",
        "m_hidden", "holdout mean", "holdout max", "flops"
    );
    for &m in &sizes {
        let (_, report) = train_lm(&dataset, &s.lm_config(m), ctx.seed)?;
        let flops = flop_count(s.n_loops(), m);
        println!(
            "{:>8} {:>13.3}% {:>13.3}% {:>6}",
            m,
            100.0 * report.holdout_mean_rel_err,
            100.0 * report.holdout_max_rel_err,
            flops
        );
        rows.push(vec![
            m.to_string(),
            fmt(report.holdout_mean_rel_err),
            fmt(report.holdout_max_rel_err),
            flops.to_string(),
        ]);
    }
    let path = ctx.out_dir.join("hidden_sweep.csv");
    write_atomic(&path, &csv_bytes(&header, &rows)?)?;
    println!("-> {}", path.display());
    Ok(())
}
