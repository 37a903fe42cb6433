//! Command-line front end. [`cli_main`] returns the process exit code:
//! `0` on success, `1` on any usage, config or I/O error, `2` when a
//! `--check` assertion fails.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use replay_qlab::bounds::theorem1_t;
use replay_qlab::diagnostics::sup_distance;
use replay_qlab::env::parse_grid;
use replay_qlab::harness::checks::{comparison_direction, covering_bound, rare_checks, sweep_monotonicity};
use replay_qlab::harness::plot::{render_svg, PlotKind, PlotSpec, Table};
use replay_qlab::harness::results::{aggregate_to_csv_string, rows_to_csv_string, AggregateRow, NA};
use replay_qlab::harness::{
    load_environment, run_experiment, run_rare_experiment, run_schedule_comparison, EnvironmentRef,
    ExperimentConfig,
};
use replay_qlab::{
    covering_constant, run, validate_mdp, BoundParams, LearnerConfig, ReplaySchedule, TabularMdp,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_CHECK: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "replay-qlab",
    version,
    about = "Tabular Q-learning with experience replay"
)]
struct Cli {
    /// Seed for `train`, or base seed overriding the config for experiments.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file; standard output when omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    /// Evaluate the directional acceptance checks and exit 2 on failure.
    #[arg(long, global = true)]
    check: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check a grid layout or an MDP JSON document.
    Validate { path: PathBuf },
    /// Compute Q* by value iteration.
    Solve {
        #[command(flatten)]
        env: EnvArgs,
        #[arg(long, default_value_t = 1e-10)]
        tol: f64,
    },
    /// One training run; emits its trace.
    Train(TrainArgs),
    /// Replay-ratio sweep from a config file.
    Sweep(ExperimentArgs),
    /// Constant versus increasing replay at equal budgets.
    Schedules(ExperimentArgs),
    /// Rare-bridge experiment.
    Rare(ExperimentArgs),
    /// Evaluate the sample-complexity bounds.
    Bounds(BoundArgs),
    /// Render a results CSV as an SVG chart.
    Plot(PlotArgs),
}

#[derive(Debug, Args)]
struct EnvArgs {
    /// `grid:<layout|path>`, `mdp:<path>`, `rare[:<eps>]` or
    /// `random:<S>x<A>[:<seed>]`.
    #[arg(long)]
    env: String,
    /// Discount for grid and random environments.
    #[arg(long, default_value_t = 0.95)]
    gamma: f64,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    env: EnvArgs,
    /// Replay updates per event; 0 disables replay.
    #[arg(long, default_value_t = 0)]
    m: usize,
    /// Online steps between replay events.
    #[arg(long, default_value_t = 1)]
    k: usize,
    #[arg(long, default_value_t = 1_000_000)]
    horizon: u64,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    q_init: f64,
    #[arg(long, default_value_t = 0.1)]
    explore: f64,
    /// Synchronous updates of every pair per round.
    #[arg(long)]
    sync: bool,
    /// Log the distance to Q* every this many iterations (0 = never).
    #[arg(long, default_value_t = 0)]
    log_stride: u64,
    /// Sample the noise accumulator every this many iterations.
    #[arg(long)]
    noise_stride: Option<u64>,
}

#[derive(Debug, Args)]
struct ExperimentArgs {
    config: PathBuf,
    /// Override the repetition count.
    #[arg(long)]
    reps: Option<usize>,
    /// Where to write the aggregate CSV. Defaults to the config's
    /// `output.aggregate`, else `<out>` with an `_aggregate` suffix.
    #[arg(long)]
    aggregate: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct BoundArgs {
    #[arg(long)]
    gamma: f64,
    #[arg(long)]
    rmax: f64,
    #[arg(long)]
    eps1: f64,
    #[arg(long)]
    delta: f64,
    #[arg(long)]
    c: f64,
    #[arg(long)]
    states: u64,
    #[arg(long)]
    actions: u64,
    #[arg(long)]
    m: u64,
    #[arg(long)]
    k: u64,
    /// `||Q_0||_inf`.
    #[arg(long, default_value_t = 0.0)]
    q0: f64,
}

#[derive(Debug, Args)]
struct PlotArgs {
    csv: PathBuf,
    #[arg(long)]
    x: String,
    #[arg(long)]
    y: String,
    #[arg(long)]
    err: Option<String>,
    #[arg(long)]
    group: Option<String>,
    /// Keep rows where `column=value`.
    #[arg(long)]
    filter: Option<String>,
    #[arg(long, value_enum, default_value_t = Kind::Line)]
    kind: Kind,
    #[arg(long, default_value = "")]
    title: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Kind {
    Line,
    Bar,
}

/// Parses `args` (including the program name) and runs the command.
pub fn cli_main<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(&cli) {
        Ok(true) => EXIT_OK,
        Ok(false) => EXIT_CHECK,
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_CONFIG
        }
    }
}

/// `Ok(false)` means a `--check` assertion failed.
fn dispatch(cli: &Cli) -> Result<bool> {
    let out = Output {
        path: cli.out.clone(),
    };
    match &cli.command {
        Command::Validate { path } => validate(path),
        Command::Solve { env, tol } => solve(env, *tol, cli.format.unwrap_or(Format::Csv), &out),
        Command::Train(args) => train(
            args,
            cli.seed.unwrap_or(0),
            cli.format.unwrap_or(Format::Csv),
            &out,
        ),
        Command::Sweep(args) => sweep(args, cli),
        Command::Schedules(args) => schedules(args, cli),
        Command::Rare(args) => rare(args, cli),
        Command::Bounds(args) => bounds(args, cli.format.unwrap_or(Format::Json), &out),
        Command::Plot(args) => plot(args, &out),
    }
}

struct Output {
    path: Option<PathBuf>,
}

impl Output {
    fn write(&self, text: &str) -> Result<()> {
        match &self.path {
            Some(path) => write_file(path, text),
            None => {
                std::io::stdout().write_all(text.as_bytes())?;
                Ok(())
            }
        }
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn validate(path: &Path) -> Result<bool> {
    let text = read_file(path)?;
    if text.trim_start().starts_with('{') {
        let mdp = TabularMdp::from_json(&text).with_context(|| format!("{}", path.display()))?;
        let report = validate_mdp(&mdp);
        eprintln!(
            "{}: MDP with {} states, {} actions, gamma {}",
            path.display(),
            mdp.n_states(),
            mdp.n_actions(),
            mdp.gamma()
        );
        if !report.is_ok() {
            bail!("{}: {report}", path.display());
        }
        return Ok(true);
    }
    let grid = parse_grid(&text).with_context(|| format!("{}", path.display()))?;
    eprintln!(
        "{}: {}x{} grid, {} free cells, shortest path {}",
        path.display(),
        grid.height(),
        grid.width(),
        grid.n_free(),
        grid.shortest_path().map_or(NA.to_string(), |d| d.to_string())
    );
    Ok(true)
}

fn environment(args: &EnvArgs) -> Result<replay_qlab::harness::LoadedEnv> {
    let env = EnvironmentRef::parse_compact(&args.env, args.gamma)?;
    Ok(load_environment(&env, Path::new("."))?)
}

fn solve(args: &EnvArgs, tol: f64, format: Format, out: &Output) -> Result<bool> {
    if !(tol > 0.0) {
        bail!("--tol must be positive");
    }
    let loaded = environment(args)?;
    let q = replay_qlab::optimal_q(&loaded.mdp, tol);
    let text = match format {
        Format::Json => {
            let values: Vec<&[f64]> = (0..q.n_states()).map(|s| q.state_values(s)).collect();
            let greedy: Vec<usize> = (0..q.n_states()).map(|s| q.greedy_action(s)).collect();
            let doc = json!({
                "n_states": q.n_states(),
                "n_actions": q.n_actions(),
                "gamma": loaded.mdp.gamma(),
                "q_star": values,
                "greedy": greedy,
            });
            serde_json::to_string_pretty(&doc)? + "\n"
        }
        Format::Csv => {
            let mut w = csv_writer();
            w.write_record(["state", "action", "q_star", "greedy"])?;
            for s in 0..q.n_states() {
                let best = q.greedy_action(s);
                for a in 0..q.n_actions() {
                    w.write_record([
                        s.to_string(),
                        a.to_string(),
                        q.get(s, a).to_string(),
                        u8::from(a == best).to_string(),
                    ])?;
                }
            }
            finish(w)?
        }
    };
    out.write(&text)?;
    Ok(true)
}

fn csv_writer() -> csv::Writer<Vec<u8>> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new())
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| anyhow::anyhow!("{}", e.error()))?;
    Ok(String::from_utf8(bytes)?)
}

fn train(args: &TrainArgs, seed: u64, format: Format, out: &Output) -> Result<bool> {
    let loaded = environment(&args.env)?;
    let mdp = &loaded.mdp;
    let mut config = LearnerConfig::for_mdp(mdp, args.horizon, seed);
    config.q_init = args.q_init;
    config.explore_rate = args.explore;
    config.sync = args.sync;
    config.log_stride = args.log_stride;
    config.noise_stride = args.noise_stride;
    config.bridge = loaded.bridge;
    config.schedule = if args.m == 0 {
        ReplaySchedule::None
    } else {
        ReplaySchedule::Constant { m: args.m, k: args.k }
    };
    let q_star = (args.log_stride > 0).then_some(&loaded.q_star);
    let trace = run(mdp, &config, q_star)?;
    let final_distance = sup_distance(trace.q.values(), loaded.q_star.values())?;
    let c_hat = covering_constant(&trace.visits, mdp.n_states(), mdp.n_actions()).ok();
    eprintln!(
        "{} online + {} replay steps, {} episodes, final distance {final_distance:.6}",
        trace.online_steps,
        trace.replay_steps,
        trace.episodes.len()
    );

    let text = match format {
        Format::Json => {
            let doc = json!({
                "seed": seed,
                "schedule": config.schedule.tag(),
                "online_steps": trace.online_steps,
                "replay_steps": trace.replay_steps,
                "skipped_replay_events": trace.skipped_replay_events,
                "bridge_crossings": trace.bridge_crossings,
                "peak_q_norm": trace.peak_q_norm,
                "final_distance": final_distance,
                "c_hat": c_hat,
                "episodes": trace.episodes,
                "distances": trace.distances,
                "noise_samples": trace.noise.as_ref().map(|n| &n.samples),
                "q": trace.q.values(),
            });
            serde_json::to_string_pretty(&doc)? + "\n"
        }
        Format::Csv => {
            // Long format: one row per episode, distance snapshot or noise
            // sample.
            let mut w = csv_writer();
            w.write_record(["series", "index", "online_steps", "total_steps", "value"])?;
            for (i, e) in trace.episodes.iter().enumerate() {
                w.write_record([
                    "score".to_string(),
                    i.to_string(),
                    e.online_steps.to_string(),
                    e.total_steps.to_string(),
                    e.score.to_string(),
                ])?;
            }
            for (i, d) in trace.distances.iter().enumerate() {
                for (series, value) in [("distance", d.distance), ("change", d.change)] {
                    w.write_record([
                        series.to_string(),
                        i.to_string(),
                        NA.to_string(),
                        d.iteration.to_string(),
                        value.to_string(),
                    ])?;
                }
            }
            if let Some(noise) = &trace.noise {
                for (i, (iteration, w_max)) in noise.samples.iter().enumerate() {
                    w.write_record([
                        "noise_max".to_string(),
                        i.to_string(),
                        NA.to_string(),
                        iteration.to_string(),
                        w_max.to_string(),
                    ])?;
                }
            }
            finish(w)?
        }
    };
    out.write(&text)?;
    Ok(true)
}

fn load_config(args: &ExperimentArgs, seed: Option<u64>) -> Result<(ExperimentConfig, PathBuf)> {
    let mut config = ExperimentConfig::load(&args.config)?;
    if let Some(seed) = seed {
        config.base_seed = seed;
    }
    if let Some(reps) = args.reps {
        config.repetitions = reps;
    }
    config.validate()?;
    let base_dir = args
        .config
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    Ok((config, base_dir))
}

/// Writes the primary artefact to `--out` (or the config's path, or
/// standard output) and the aggregate next to it.
fn emit_results(
    args: &ExperimentArgs,
    cli: &Cli,
    config: &ExperimentConfig,
    primary: Result<String>,
    aggregate: &[AggregateRow],
) -> Result<()> {
    let format = cli.format.unwrap_or(Format::Csv);
    let configured = match format {
        Format::Csv => config.output.rows.clone(),
        Format::Json => config.output.report.clone(),
    };
    let target = cli.out.clone().or(configured);
    Output { path: target.clone() }.write(&primary?)?;

    let aggregate_path = args
        .aggregate
        .clone()
        .or_else(|| config.output.aggregate.clone())
        .or_else(|| {
            let target = target.filter(|_| format == Format::Csv)?;
            let stem = target.file_stem()?.to_string_lossy().into_owned();
            Some(target.with_file_name(format!("{stem}_aggregate.csv")))
        });
    if let Some(path) = aggregate_path {
        write_file(&path, &aggregate_to_csv_string(aggregate)?)?;
    }
    Ok(())
}

fn report_check(label: &str, pass: bool, detail: String) -> bool {
    eprintln!("check {label}: {} {detail}", if pass { "PASS" } else { "FAIL" });
    pass
}

fn sweep(args: &ExperimentArgs, cli: &Cli) -> Result<bool> {
    let (config, base_dir) = load_config(args, cli.seed)?;
    let report = run_experiment(&config, &base_dir)?;
    for row in report
        .aggregate
        .iter()
        .filter(|r| r.metric == "total_steps_to_score")
    {
        eprintln!(
            "{:<24} runs {:>4} censored {:>4} mean total steps {}",
            row.schedule,
            row.runs,
            row.censored,
            row.mean.map_or(NA.to_string(), |m| format!("{m:.0}"))
        );
    }
    let primary = match cli.format.unwrap_or(Format::Csv) {
        Format::Csv => rows_to_csv_string(&report.rows).map_err(Into::into),
        Format::Json => serde_json::to_string_pretty(&report)
            .map(|s| s + "\n")
            .map_err(Into::into),
    };
    emit_results(args, cli, &config, primary, &report.aggregate)?;

    if !cli.check {
        return Ok(true);
    }
    let mut pass = true;
    if config.convergence.score_threshold.is_some() {
        let mut ks = config.sweep.k.clone();
        ks.sort_unstable();
        ks.dedup();
        for k in ks {
            let mono = sweep_monotonicity(&report, k, 1);
            pass &= report_check(
                &format!("monotonicity K={k}"),
                mono.pass,
                format!(
                    "online violations {}, total violations {}",
                    mono.online_violations, mono.total_violations
                ),
            );
        }
    }
    let covering = covering_bound(&report.rows, 0.05);
    pass &= report_check(
        "covering",
        covering.pass,
        format!(
            "{} checked, {} violations, {} unmeasured",
            covering.checked, covering.violations, covering.unmeasured
        ),
    );
    Ok(pass)
}

fn schedules(args: &ExperimentArgs, cli: &Cli) -> Result<bool> {
    let (config, base_dir) = load_config(args, cli.seed)?;
    let report = run_schedule_comparison(&config, &base_dir)?;
    for arm in &report.arms {
        eprintln!(
            "{:<48} goal reached {:>4}/{:<4} fraction {:.3} sem {}",
            arm.schedule,
            arm.successes,
            arm.runs,
            arm.fraction,
            arm.sem.map_or(NA.to_string(), |s| format!("{s:.3}"))
        );
    }
    let primary = match cli.format.unwrap_or(Format::Csv) {
        Format::Csv => rows_to_csv_string(&report.rows).map_err(Into::into),
        Format::Json => serde_json::to_string_pretty(&report)
            .map(|s| s + "\n")
            .map_err(Into::into),
    };
    emit_results(args, cli, &config, primary, &report.aggregate)?;

    if !cli.check {
        return Ok(true);
    }
    match comparison_direction(&report, 0.02) {
        Some(check) => Ok(report_check(
            "schedule direction",
            check.pass,
            format!(
                "increasing {:.3} vs constant {:.3}",
                check.increasing_fraction, check.constant_fraction
            ),
        )),
        None => Ok(report_check(
            "schedule direction",
            false,
            "needs a constant and an increasing arm".into(),
        )),
    }
}

fn rare(args: &ExperimentArgs, cli: &Cli) -> Result<bool> {
    let (config, base_dir) = load_config(args, cli.seed)?;
    let report = run_rare_experiment(&config, &base_dir)?;
    let fmt = |v: Option<f64>| v.map_or(NA.to_string(), |v| format!("{v:.3}"));
    eprintln!(
        "T' {} eps {:.3e} p_hat {}: P(N=0,1,2) analytic {:.4}/{:.4}/{:.4} empirical {:.4}/{:.4}/{:.4}",
        report.setup.t_prime,
        report.setup.eps_rare,
        report.setup.p_hat,
        report.analytic.p_n0,
        report.analytic.p_n1,
        report.analytic.p_n2,
        report.empirical.p_n0,
        report.empirical.p_n1,
        report.empirical.p_n2
    );
    eprintln!(
        "far fraction (N <= 2) {}, within psi after replay {}",
        fmt(report.far_fraction_n_le2),
        fmt(report.within_psi_fraction)
    );
    let primary = match cli.format.unwrap_or(Format::Csv) {
        Format::Csv => rows_to_csv_string(&report.rows).map_err(Into::into),
        Format::Json => serde_json::to_string_pretty(&report)
            .map(|s| s + "\n")
            .map_err(Into::into),
    };
    emit_results(args, cli, &config, primary, &[])?;

    if !cli.check {
        return Ok(true);
    }
    let check = rare_checks(&report, 0.04, 0.9);
    let mut pass = report_check(
        "bridge probabilities",
        check.probabilities_pass,
        format!("max gap {:.3}", check.max_probability_gap),
    );
    pass &= report_check("separation", check.separation_pass, fmt(check.far_fraction_n_le2));
    pass &= report_check(
        "post-hoc replay",
        check.replay_pass,
        fmt(check.within_psi_fraction),
    );
    Ok(pass)
}

fn bounds(args: &BoundArgs, format: Format, out: &Output) -> Result<bool> {
    let params = BoundParams {
        n_states: args.states,
        n_actions: args.actions,
        gamma: args.gamma,
        r_max: args.rmax,
        q0_norm: args.q0,
        eps1: args.eps1,
        delta: args.delta,
        c: args.c,
        m: args.m,
        k: args.k,
    };
    let report = theorem1_t(&params)?;
    let entries: Vec<(&str, String)> = vec![
        ("v_max", report.v_max.to_string()),
        ("d0", report.d0.to_string()),
        ("epsilon", report.epsilon.to_string()),
        ("n_epochs", report.n_epochs.to_string()),
        ("t0_sync", format!("{:e}", report.t0_sync)),
        ("t_sync", format!("{:e}", report.t_sync)),
        ("log10_t_sync", report.log10_t_sync.to_string()),
        ("t0_async", format!("{:e}", report.t0_async)),
        ("t_async", format!("{:e}", report.t_async)),
        ("log10_t_async", report.log10_t_async.to_string()),
        ("relaxed_b", format!("{:e}", report.relaxed.b)),
        ("relaxed_c", format!("{:e}", report.relaxed.c)),
        ("relaxed_t", format!("{:e}", report.relaxed.t)),
    ];
    for (name, value) in &entries {
        eprintln!("{name:<14} {value}");
    }
    if let Some(note) = &report.note {
        eprintln!("note: {note}");
    }
    let text = match format {
        // Overflowed horizons serialise as null; the log10 fields stay finite.
        Format::Json => serde_json::to_string_pretty(&report)? + "\n",
        Format::Csv => {
            let mut w = csv_writer();
            w.write_record(["quantity", "value"])?;
            for (name, value) in &entries {
                w.write_record([name, value.as_str()])?;
            }
            finish(w)?
        }
    };
    out.write(&text)?;
    Ok(true)
}

fn plot(args: &PlotArgs, out: &Output) -> Result<bool> {
    let table = Table::parse(&read_file(&args.csv)?)?;
    let filter = match &args.filter {
        Some(text) => {
            let (column, value) = text
                .split_once('=')
                .with_context(|| format!("--filter expects column=value, got {text:?}"))?;
            Some((column.to_string(), value.to_string()))
        }
        None => None,
    };
    let spec = PlotSpec {
        x: args.x.clone(),
        y: args.y.clone(),
        err: args.err.clone(),
        group: args.group.clone(),
        filter,
        kind: match args.kind {
            Kind::Line => PlotKind::Line,
            Kind::Bar => PlotKind::Bar,
        },
        title: args.title.clone(),
    };
    out.write(&render_svg(&table, &spec)?)?;
    Ok(true)
}
