//! Command-line front end.
//!
//! Exit codes: 0 success, 1 solver failure or validation failure, 2 input
//! error. Flags override the corresponding instance-file settings.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::basis::{BasisKind, ControlPointBasis};
use crate::objective::CostBreakdown;
use crate::problem::Problem;
use crate::problem_io::{
    canonical_string, generate_random_corridor, initial_time_allocation, instance_waypoints, load_instance,
    load_solution, save_instance, validate_solution, CorridorParams, InstanceFile, SolutionFile, ValidationReport,
};
use crate::solver_ipddp::{pipeline_fixed_time, pipeline_three_stage, PipelineConfig, SolveResult, StageReport};
use crate::solver_lqt::{kkt_residual, linear_stages, lqt_backward, lqt_costates, lqt_solve, KktResidual};

/// Environment variable holding the path of the MINVO table file.
pub const MINVO_TABLE_ENV: &str = "POLYTRAJ_MINVO_TABLE";

const EXIT_SOLVER: u8 = 1;
const EXIT_INPUT: u8 = 2;

/// Speed and acceleration limits assumed when an instance has no bounds.
const DEFAULT_LIMIT: f64 = 2.0;

#[derive(Debug, Parser)]
#[command(name = "polytraj", version, about = "Piecewise-polynomial trajectory generation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve one instance; writes result, trace, solution and validator report.
    Generate(GenerateArgs),
    /// Closed-form unconstrained solve with the instance's fixed durations.
    Lqt(LqtArgs),
    /// Run seeded random corridor instances and append a results table.
    Benchmark(BenchmarkArgs),
    /// Check a solution file against an instance.
    Validate(ValidateArgs),
    /// Write a seeded random corridor instance.
    MakeInstance(MakeInstanceArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Feasibility search, joint energy-time solve, fixed-time polish.
    Joint,
    /// Durations held at the instance times.
    FixedTime,
    /// Unconstrained closed-form solve; corridor and bounds are dropped.
    Lqt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BasisArg {
    Bernstein,
    Minvo,
}

#[derive(Debug, Clone, Default, Args)]
pub struct SolverArgs {
    /// Initial barrier weight.
    #[arg(long)]
    pub mu_init: Option<f64>,
    /// Optimality tolerance.
    #[arg(long)]
    pub tol: Option<f64>,
    /// Iteration limit per stage.
    #[arg(long)]
    pub max_iter: Option<usize>,
    /// Minimum segment duration in seconds.
    #[arg(long)]
    pub t_min: Option<f64>,
    /// Time weight of the joint stage.
    #[arg(long)]
    pub time_weight: Option<f64>,
    /// Terminal weight scale of the joint stage.
    #[arg(long)]
    pub terminal_weight: Option<f64>,
    /// Control-point basis; defaults to the instance setting.
    #[arg(long, value_enum)]
    pub basis: Option<BasisArg>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    pub instance: PathBuf,
    #[arg(long, value_enum, default_value_t = Mode::Joint)]
    pub mode: Mode,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
    /// Validator samples per segment.
    #[arg(long, default_value_t = 1000)]
    pub samples: usize,
    #[command(flatten)]
    pub solver: SolverArgs,
}

#[derive(Debug, Args)]
pub struct LqtArgs {
    pub instance: PathBuf,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchmarkArgs {
    #[arg(long, value_enum, default_value_t = Mode::Joint)]
    pub mode: Mode,
    /// Seed of the first instance; instance `i` uses `seed + i`.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Instances per segment count.
    #[arg(long, default_value_t = 10)]
    pub seeds: usize,
    #[arg(long, value_delimiter = ',', default_value = "2,4,8,16,32,64")]
    pub n_list: Vec<usize>,
    #[arg(long, default_value_t = 3)]
    pub dim: usize,
    /// Timed repetitions per instance; the minimum wall time is reported.
    #[arg(long, default_value_t = 1)]
    pub repetitions: usize,
    /// Worker threads; each solve stays single-threaded.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long, default_value_t = 100)]
    pub samples: usize,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
    #[command(flatten)]
    pub solver: SolverArgs,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    pub solution: PathBuf,
    pub instance: PathBuf,
    #[arg(long, default_value_t = 1000)]
    pub samples: usize,
    #[arg(long, value_enum)]
    pub basis: Option<BasisArg>,
    /// Also write the report to this path.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MakeInstanceArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 10)]
    pub segments: usize,
    #[arg(long, default_value_t = 3)]
    pub dim: usize,
    /// Drop the corridor and bounds, leaving an unconstrained instance.
    #[arg(long)]
    pub unconstrained: bool,
    #[arg(long)]
    pub out: PathBuf,
}

/// Input-side failure; maps to exit code 2.
#[derive(Debug)]
pub struct InputError(pub String);

impl<E: std::fmt::Display> From<E> for InputError {
    fn from(e: E) -> Self {
        InputError(e.to_string())
    }
}

type CliResult<T> = std::result::Result<T, InputError>;

pub fn run(cli: Cli) -> ExitCode {
    let outcome = match cli.command {
        Command::Generate(a) => cmd_generate(&a),
        Command::Lqt(a) => cmd_lqt(&a),
        Command::Benchmark(a) => cmd_benchmark(&a),
        Command::Validate(a) => cmd_validate(&a),
        Command::MakeInstance(a) => cmd_make_instance(&a),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(InputError(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_INPUT)
        }
    }
}

fn resolve_basis(arg: Option<BasisArg>, instance: BasisKind) -> CliResult<ControlPointBasis> {
    let kind = match arg {
        Some(BasisArg::Bernstein) => BasisKind::Bernstein,
        Some(BasisArg::Minvo) => BasisKind::Minvo,
        None => instance,
    };
    match kind {
        BasisKind::Bernstein => Ok(ControlPointBasis::bernstein()),
        BasisKind::Minvo => {
            let path = std::env::var_os(MINVO_TABLE_ENV)
                .ok_or_else(|| InputError(format!("the MINVO basis needs a table file; set {MINVO_TABLE_ENV}")))?;
            Ok(ControlPointBasis::load_minvo(Path::new(&path))?)
        }
    }
}

/// Problem built from `instance` after applying flag overrides.
pub fn build_problem(instance: &InstanceFile, solver: &SolverArgs) -> CliResult<Problem> {
    let mut instance = instance.clone();
    if let Some(t) = solver.t_min {
        instance.t_min = t;
    }
    let basis = resolve_basis(solver.basis, instance.basis)?;
    let problem = instance.to_problem_with_basis(basis)?;
    for (k, poly) in problem.corridor.iter().enumerate() {
        if poly.is_degenerate() {
            eprintln!("warning: corridor polyhedron {k} has an empty interior");
        }
    }
    Ok(problem)
}

pub fn pipeline_config(solver: &SolverArgs) -> PipelineConfig {
    let mut cfg = PipelineConfig::default();
    if let Some(mu) = solver.mu_init {
        cfg.solver.mu_init = Some(mu);
    }
    if let Some(tol) = solver.tol {
        cfg.solver.opt_tol = tol;
    }
    if let Some(it) = solver.max_iter {
        cfg.solver.max_iterations = it;
    }
    if let Some(w) = solver.time_weight {
        cfg.joint_time_weight = w;
    }
    if let Some(s) = solver.terminal_weight {
        cfg.joint_terminal_scale = s;
    }
    cfg
}

/// Instance times, or a rest-to-rest allocation along the goal waypoints
/// using the instance's first- and second-order bounds.
pub fn initial_times(instance: &InstanceFile) -> CliResult<Vec<f64>> {
    if let Some(t) = &instance.times {
        return Ok(t.clone());
    }
    let limit = |order: usize| {
        instance
            .bounds
            .iter()
            .find(|b| b.order == order)
            .map(|b| b.upper.min(-b.lower))
            .filter(|v| *v > 0.0 && v.is_finite())
            .unwrap_or(DEFAULT_LIMIT)
    };
    Ok(initial_time_allocation(
        &instance_waypoints(instance),
        limit(1),
        limit(2),
        instance.t_min,
    )?)
}

/// Outcome of one solve in any mode.
pub struct RunOutput {
    pub stages: Vec<StageReport>,
    pub result: SolveResult,
    pub converged: bool,
    pub wall_ms: f64,
}

/// Solves `problem` in `mode` from `times`.
pub fn run_mode(problem: &Problem, times: &[f64], mode: Mode, config: &PipelineConfig) -> CliResult<RunOutput> {
    let start = Instant::now();
    let (stages, result, converged) = match mode {
        Mode::Joint => {
            let r = pipeline_three_stage(problem, times, config)?;
            let ok = r.converged();
            (r.stages, r.result, ok)
        }
        Mode::FixedTime => {
            let r = pipeline_fixed_time(problem, times, config)?;
            let ok = r.converged();
            (r.stages, r.result, ok)
        }
        Mode::Lqt => {
            let r = lqt_solve(&unconstrained(problem), times)?;
            (vec![StageReport::new("lqt", &r)], r, true)
        }
    };
    Ok(RunOutput {
        stages,
        result,
        converged,
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

fn unconstrained(problem: &Problem) -> Problem {
    let mut p = problem.clone();
    p.corridor.clear();
    p.bounds = crate::constraints::DerivBounds::none();
    p
}

#[derive(Serialize)]
struct StageSummary {
    name: &'static str,
    status: String,
    iterations: usize,
    total_time: f64,
    mu_final: f64,
    cost: CostBreakdown,
}

#[derive(Serialize)]
struct RunSummary {
    mode: Mode,
    status: String,
    converged: bool,
    validator_clean: Option<bool>,
    failed_stage: Option<&'static str>,
    stages: Vec<StageSummary>,
    initial_times: Vec<f64>,
    durations: Vec<f64>,
    reduction_rate: f64,
    cost: CostBreakdown,
    wall_ms: f64,
}

/// `(Σ t_ini - Σ t*) / Σ t_ini`.
pub fn reduction_rate(initial: &[f64], optimized: &[f64]) -> f64 {
    let ti: f64 = initial.iter().sum();
    let to: f64 = optimized.iter().sum();
    (ti - to) / ti
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| InputError(format!("cannot write {}: {e}", path.display())))
}

fn write_trace(path: &Path, stages: &[StageReport]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "stage",
        "iteration",
        "cost",
        "stationarity",
        "max_violation",
        "min_slack",
        "mu",
        "step",
        "regularization",
    ])?;
    for s in stages {
        for r in &s.trace.records {
            w.write_record(&[
                s.name.to_string(),
                r.iteration.to_string(),
                r.cost.to_string(),
                r.stationarity.to_string(),
                r.max_violation.to_string(),
                r.min_slack.to_string(),
                r.mu.to_string(),
                r.step.to_string(),
                r.regularization.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn cmd_generate(args: &GenerateArgs) -> CliResult<u8> {
    let instance = load_instance(&args.instance)?;
    let problem = build_problem(&instance, &args.solver)?;
    let times = match args.mode {
        Mode::Lqt | Mode::FixedTime => instance
            .times
            .clone()
            .ok_or_else(|| InputError("fixed-duration modes need `times` in the instance".into()))?,
        Mode::Joint => initial_times(&instance)?,
    };
    let config = pipeline_config(&args.solver);
    let out = run_mode(&problem, &times, args.mode, &config)?;
    fs::create_dir_all(&args.out_dir)?;

    let solution_path = args.out_dir.join("solution.json");
    let report_path = args.out_dir.join("validation.json");
    let validation = if out.converged {
        let checked = if args.mode == Mode::Lqt {
            unconstrained(&problem)
        } else {
            problem.clone()
        };
        let report = validate_solution(&out.result.trajectory, &checked, args.samples)?;
        let status = out.result.status.to_string();
        let solution = SolutionFile::from_trajectory(&out.result.trajectory, &status, out.result.cost);
        write_text(&solution_path, &canonical_string(&solution)?)?;
        write_text(&report_path, &canonical_string(&report)?)?;
        Some(report)
    } else {
        for stale in [&solution_path, &report_path] {
            if stale.exists() {
                fs::remove_file(stale)?;
            }
        }
        None
    };

    let failed_stage = (!out.converged).then(|| out.stages.last().map(|s| s.name)).flatten();
    let summary = RunSummary {
        mode: args.mode,
        status: out.result.status.to_string(),
        converged: out.converged,
        validator_clean: validation.as_ref().map(|r| r.clean),
        failed_stage,
        stages: out
            .stages
            .iter()
            .map(|s| StageSummary {
                name: s.name,
                status: s.status.to_string(),
                iterations: s.iterations,
                total_time: s.total_time,
                mu_final: s.mu_final,
                cost: s.cost,
            })
            .collect(),
        durations: out.result.durations(),
        reduction_rate: reduction_rate(&times, &out.result.durations()),
        initial_times: times,
        cost: out.result.cost,
        wall_ms: out.wall_ms,
    };
    write_text(&args.out_dir.join("result.json"), &canonical_string(&summary)?)?;
    write_trace(&args.out_dir.join("trace.csv"), &out.stages)?;

    let clean = validation.as_ref().is_some_and(|r| r.clean);
    println!(
        "{}: status {}, validator {}, total time {:.4} s, cost {:.6e}",
        args.instance.display(),
        summary.status,
        if clean { "clean" } else { "not clean" },
        summary.durations.iter().sum::<f64>(),
        summary.cost.total()
    );
    Ok(if out.converged && clean { 0 } else { EXIT_SOLVER })
}

#[derive(Serialize)]
struct LqtReport {
    segments: usize,
    constraints_ignored: bool,
    kkt: KktResidual,
    relative_residual: f64,
    cost: CostBreakdown,
}

fn cmd_lqt(args: &LqtArgs) -> CliResult<u8> {
    let instance = load_instance(&args.instance)?;
    let times = instance
        .times
        .clone()
        .ok_or_else(|| InputError("the LQT mode needs `times` in the instance".into()))?;
    let constrained = instance.to_problem_with_basis(ControlPointBasis::bernstein())?;
    let problem = unconstrained(&constrained);
    let start = Instant::now();
    let result = lqt_solve(&problem, &times)?;
    let wall = start.elapsed().as_secs_f64();
    let stages = linear_stages(&times, &problem.weights, &problem.shape)?;
    let v: Vec<_> = result.inputs.iter().map(|u| u.v.clone()).collect();
    let costates = lqt_costates(&lqt_backward(&problem.weights, &stages)?, &result.states)?;
    let kkt = kkt_residual(&problem.weights, &stages, &v, &result.states, &costates)?;
    let report = LqtReport {
        segments: problem.shape.segments(),
        constraints_ignored: !constrained.is_unconstrained(crate::objective::TimeMode::Fixed),
        relative_residual: kkt.relative(),
        kkt,
        cost: result.cost,
    };
    fs::create_dir_all(&args.out_dir)?;
    let solution = SolutionFile::from_trajectory(&result.trajectory, &result.status.to_string(), result.cost);
    write_text(&args.out_dir.join("solution.json"), &canonical_string(&solution)?)?;
    write_text(&args.out_dir.join("kkt.json"), &canonical_string(&report)?)?;
    write_trace(&args.out_dir.join("trace.csv"), &[StageReport::new("lqt", &result)])?;
    println!(
        "{}: {} segments in {:.3} ms ({:.3} us per segment), relative KKT residual {:.3e}",
        args.instance.display(),
        report.segments,
        wall * 1e3,
        wall * 1e6 / report.segments as f64,
        report.relative_residual
    );
    Ok(0)
}

/// One line of the benchmark table; aggregate rows use `seed = "all"`.
#[derive(Debug, Clone, Serialize)]
pub struct BenchmarkRow {
    pub n: usize,
    pub seed: String,
    pub status: String,
    pub wall_ms: Option<f64>,
    pub initial_time: Option<f64>,
    pub optimized_time: Option<f64>,
    pub reduction_rate: Option<f64>,
    pub control_effort: Option<f64>,
    pub iterations: Option<f64>,
}

pub const SUCCESS: &str = "success";

fn benchmark_one(args: &BenchmarkArgs, n: usize, seed: u64, config: &PipelineConfig) -> BenchmarkRow {
    let failed = |status: String| BenchmarkRow {
        n,
        seed: seed.to_string(),
        status,
        wall_ms: None,
        initial_time: None,
        optimized_time: None,
        reduction_rate: None,
        control_effort: None,
        iterations: None,
    };
    let attempt = || -> CliResult<BenchmarkRow> {
        let instance = generate_random_corridor(seed, n, args.dim, &CorridorParams::default())?;
        let problem = build_problem(&instance, &args.solver)?;
        let times = initial_times(&instance)?;
        let mut best: Option<RunOutput> = None;
        for _ in 0..args.repetitions.max(1) {
            let out = run_mode(&problem, &times, args.mode, config)?;
            if best.as_ref().is_none_or(|b| out.wall_ms < b.wall_ms) {
                best = Some(out);
            }
        }
        let out = best.expect("at least one repetition");
        let checked = if args.mode == Mode::Lqt {
            unconstrained(&problem)
        } else {
            problem
        };
        let clean = out.converged && validate_solution(&out.result.trajectory, &checked, args.samples)?.clean;
        let status = if clean {
            SUCCESS.to_string()
        } else if out.converged {
            "validator-fail".to_string()
        } else {
            out.result.status.to_string()
        };
        let durations = out.result.durations();
        Ok(BenchmarkRow {
            n,
            seed: seed.to_string(),
            status,
            wall_ms: Some(out.wall_ms),
            initial_time: Some(times.iter().sum()),
            optimized_time: Some(durations.iter().sum()),
            reduction_rate: Some(reduction_rate(&times, &durations)),
            control_effort: Some(out.result.cost.energy),
            iterations: Some(out.stages.iter().map(|s| s.iterations).sum::<usize>() as f64),
        })
    };
    attempt().unwrap_or_else(|InputError(msg)| failed(format!("error: {msg}")))
}

/// Mean of each numeric column over successful rows of one segment count.
pub fn aggregate_row(n: usize, rows: &[BenchmarkRow]) -> BenchmarkRow {
    let ok: Vec<&BenchmarkRow> = rows.iter().filter(|r| r.n == n && r.status == SUCCESS).collect();
    let total = rows.iter().filter(|r| r.n == n).count();
    let mean = |f: fn(&BenchmarkRow) -> Option<f64>| {
        let vals: Vec<f64> = ok.iter().filter_map(|r| f(r)).collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    };
    BenchmarkRow {
        n,
        seed: "all".into(),
        status: format!("{SUCCESS} {}/{}", ok.len(), total),
        wall_ms: mean(|r| r.wall_ms),
        initial_time: mean(|r| r.initial_time),
        optimized_time: mean(|r| r.optimized_time),
        reduction_rate: mean(|r| r.reduction_rate),
        control_effort: mean(|r| r.control_effort),
        iterations: mean(|r| r.iterations),
    }
}

/// Runs every `(N, seed)` task, passing rows to `sink` in completion order.
pub fn run_benchmark(
    args: &BenchmarkArgs,
    mut sink: impl FnMut(&BenchmarkRow) -> CliResult<()>,
) -> CliResult<Vec<BenchmarkRow>> {
    if args.jobs == 0 {
        return Err(InputError("--jobs must be at least 1".into()));
    }
    if args.n_list.contains(&0) {
        return Err(InputError("--n-list entries must be positive".into()));
    }
    let config = pipeline_config(&args.solver);
    let tasks: Vec<(usize, u64)> = args
        .n_list
        .iter()
        .flat_map(|&n| (0..args.seeds as u64).map(move |i| (n, args.seed + i)))
        .collect();
    let mut rows = Vec::with_capacity(tasks.len());
    if args.jobs == 1 {
        for &(n, seed) in &tasks {
            let row = benchmark_one(args, n, seed, &config);
            sink(&row)?;
            rows.push(row);
        }
    } else {
        let next = AtomicUsize::new(0);
        let (tx, rx) = mpsc::channel();
        std::thread::scope(|scope| -> CliResult<()> {
            for _ in 0..args.jobs.min(tasks.len().max(1)) {
                let tx = tx.clone();
                let (next, tasks, config) = (&next, &tasks, &config);
                scope.spawn(move || loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    let Some(&(n, seed)) = tasks.get(i) else { break };
                    if tx.send(benchmark_one(args, n, seed, config)).is_err() {
                        break;
                    }
                });
            }
            drop(tx);
            for row in rx {
                sink(&row)?;
                rows.push(row);
            }
            Ok(())
        })?;
    }
    Ok(rows)
}

fn cmd_benchmark(args: &BenchmarkArgs) -> CliResult<u8> {
    fs::create_dir_all(&args.out_dir)?;
    let path = args.out_dir.join("benchmark.csv");
    let fresh = fs::metadata(&path).map(|m| m.len() == 0).unwrap_or(true);
    let file = OpenOptions::new().create(true).append(true).open(&path)?;
    let mut w = csv::WriterBuilder::new().has_headers(fresh).from_writer(file);
    let rows = run_benchmark(args, |row| {
        w.serialize(row)?;
        w.flush()?;
        Ok(())
    })?;
    for &n in &args.n_list {
        let agg = aggregate_row(n, &rows);
        println!("N = {n}: {}", agg.status);
        w.serialize(&agg)?;
    }
    w.flush()?;
    let mut out = std::io::stdout();
    writeln!(out, "wrote {}", path.display())?;
    Ok(0)
}

fn cmd_validate(args: &ValidateArgs) -> CliResult<u8> {
    let instance = load_instance(&args.instance)?;
    let basis = resolve_basis(args.basis, instance.basis)?;
    let problem = instance.to_problem_with_basis(basis)?;
    let traj = load_solution(&args.solution)?.to_trajectory()?;
    let report: ValidationReport = validate_solution(&traj, &problem, args.samples)?;
    let text = canonical_string(&report)?;
    if let Some(path) = &args.out {
        write_text(path, &text)?;
    }
    println!("{text}");
    if !report.continuity_ok {
        if let Some(j) = report.worst_junction {
            eprintln!("continuity violated at the junction after segment {j}");
        }
    }
    Ok(if report.clean { 0 } else { EXIT_SOLVER })
}

fn cmd_make_instance(args: &MakeInstanceArgs) -> CliResult<u8> {
    let mut instance = generate_random_corridor(args.seed, args.segments, args.dim, &CorridorParams::default())?;
    if args.unconstrained {
        instance.corridor.clear();
        instance.bounds.clear();
    }
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    save_instance(&instance, &args.out)?;
    Ok(0)
}
