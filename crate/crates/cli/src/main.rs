//! `coagdiff` — config-driven experiments on truncated coagulation-diffusion
//! systems with machine-readable outputs.
//!
//! Exit codes: 0 all checks pass, 1 a numeric check failed, 2 usage or
//! config error, 3 solver abort.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use coagdiff_core::config;
use coagdiff_core::duality::{
    check_closeness, estimate_k, solve_dual_contraction, CoefficientPattern, ContractionOptions,
    DualProblem, InitialIterate, IntervalField, KSamplerConfig, TimeMesh,
};
use coagdiff_core::error::Error;
use coagdiff_core::experiments::{
    run_experiment, weakform_sweep, ExperimentId, ExperimentOutput, WeakformSweepParams,
};
use coagdiff_core::grid::Grid1D;
use coagdiff_core::report::{CheckOutcome, Manifest, Summary};
use coagdiff_core::simulator::{run, RunOutput};
use coagdiff_core::Real;

#[derive(Parser)]
#[command(
    name = "coagdiff",
    version,
    about = "Numerical laboratory for truncated coagulation-diffusion systems"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a simulation from a config file.
    Simulate(SimArgs),
    /// Run a space-homogeneous simulation (forces [grid] N = 1).
    Homogeneous(SimArgs),
    /// Run a simulation and report the requested moment diagnostics.
    Moments(MomentsArgs),
    /// Mass-vs-truncation scan probing for gelation.
    GelationScan(GelationArgs),
    /// Estimate the parabolic duality constant K_{m,q} from below.
    DualityK(DualityKArgs),
    /// Evaluate the closeness condition ((b-a)/(b+a)) K_{(a+b)/2,p'} < 1.
    Closeness(ClosenessArgs),
    /// Solve the non-divergence dual problem by contraction.
    DualSolve(DualSolveArgs),
    /// Verify the weak-form identity and mass nullity on random data.
    WeakformTest(WeakformArgs),
    /// Run a built-in experiment (E1..E6).
    Experiment(ExperimentArgs),
}

#[derive(Args)]
struct SimArgs {
    /// Path to the TOML config.
    #[arg(long)]
    config: PathBuf,
    /// Override one config key (`--set kernel.gamma=0.7`); repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct MomentsArgs {
    #[command(flatten)]
    sim: SimArgs,
    /// Moment orders to record (overrides [output] moments).
    #[arg(long, value_delimiter = ',')]
    k: Vec<Real>,
    /// Space-time L^p exponents (overrides [output] lp).
    #[arg(long, value_delimiter = ',')]
    p: Vec<Real>,
}

#[derive(Args)]
struct GelationArgs {
    /// Truncation sizes to scan.
    #[arg(long = "n-list", value_delimiter = ',', default_value = "250,500,1000,2000")]
    n_list: Vec<usize>,
    #[arg(long, default_value_t = 5.0)]
    t_end: Real,
    #[arg(long, default_value_t = 1e-3)]
    dt: Real,
    #[arg(long, default_value_t = 0.6)]
    alpha: Real,
    #[arg(long, default_value_t = 0.6)]
    beta: Real,
    /// Reaction scheme: rk4 | semi_implicit_loss.
    #[arg(long, default_value = "rk4")]
    scheme: String,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct DualityKArgs {
    #[arg(long)]
    m: Real,
    #[arg(long)]
    q: Real,
    #[arg(long, default_value_t = 32)]
    nx: usize,
    #[arg(long, default_value_t = 64)]
    nt: usize,
    #[arg(long, default_value_t = 1.0)]
    t_end: Real,
    /// Total random forcings (split 3:2 between smooth and rough).
    #[arg(long, default_value_t = 100)]
    samples: usize,
    #[arg(long, default_value_t = 30)]
    power_iterations: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Output directory; omit to print the report to stdout only.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ClosenessArgs {
    #[arg(long)]
    a: Real,
    #[arg(long)]
    b: Real,
    /// Integrability exponent p; the estimate runs at its conjugate.
    #[arg(long)]
    p: Real,
    #[arg(long, default_value_t = 32)]
    nx: usize,
    #[arg(long, default_value_t = 64)]
    nt: usize,
    #[arg(long, default_value_t = 1.0)]
    t_end: Real,
    #[arg(long, default_value_t = 100)]
    samples: usize,
    #[arg(long, default_value_t = 30)]
    power_iterations: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DualSolveArgs {
    /// TOML config with a [dual] section.
    #[arg(long)]
    config: PathBuf,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct WeakformArgs {
    /// Truncation sizes.
    #[arg(long = "n", value_delimiter = ',', default_value = "8,64,256")]
    n_list: Vec<usize>,
    /// Random (c, phi) pairs per family and size.
    #[arg(long, default_value_t = 100)]
    trials: u64,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Identity tolerance relative to the summand scale.
    #[arg(long, default_value_t = 1e-10)]
    tol: Real,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExperimentArgs {
    /// Experiment id: E1..E6.
    id: String,
    /// Override experiment parameters (`--set t_end=1.0`); repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Output directory (a subdirectory named after the experiment is used).
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap prints help/version on stdout with success; keep that.
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(passed) => {
            if passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}

fn dispatch(cli: Cli) -> Result<bool, Error> {
    match cli.command {
        Command::Simulate(args) => simulate(args, &[], "simulate"),
        Command::Homogeneous(args) => {
            simulate(args, &["grid.N=1".to_string()], "homogeneous")
        }
        Command::Moments(args) => {
            let mut extra = Vec::new();
            if !args.k.is_empty() {
                extra.push(format!(
                    "output.moments=[{}]",
                    args.k.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(",")
                ));
            }
            if !args.p.is_empty() {
                extra.push(format!(
                    "output.lp=[{}]",
                    args.p.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(",")
                ));
            }
            simulate(args.sim, &extra, "moments")
        }
        Command::GelationScan(args) => gelation_scan(args),
        Command::DualityK(args) => duality_k(args),
        Command::Closeness(args) => closeness(args),
        Command::DualSolve(args) => dual_solve(args),
        Command::WeakformTest(args) => weakform(args),
        Command::Experiment(args) => experiment(args),
    }
}

// --- output helpers ----------------------------------------------------------

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<(), Error> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(name), contents)?;
    Ok(())
}

fn emit_summary(dir: Option<&Path>, summary: &Summary) -> Result<(), Error> {
    let json = summary.to_json();
    if let Some(dir) = dir {
        write_file(dir, "summary.json", &json)?;
        println!("wrote {}", dir.join("summary.json").display());
    } else {
        print!("{json}");
    }
    for check in &summary.checks {
        println!("{}", check.line());
    }
    Ok(())
}

// --- simulate / homogeneous / moments -----------------------------------------

fn simulate(args: SimArgs, extra_sets: &[String], command: &str) -> Result<bool, Error> {
    let start = Instant::now();
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| Error::Config(format!("reading {}: {e}", args.config.display())))?;
    let mut sets = extra_sets.to_vec();
    sets.extend(args.sets.iter().cloned());
    let (file_cfg, snapshot) = config::resolve_config(&text, &sets)?;
    let cfg = file_cfg.to_sim_config()?;

    let out: RunOutput<Real> = run(&cfg)?;
    let rec = &out.record;

    let mut summary = Summary::new(command).with_config_snapshot(&snapshot);
    let m0 = rec.mass.first().copied().unwrap_or(0.0);
    let drift = if m0 > 0.0 {
        rec.mass.iter().fold(0.0f64, |a, &m| a.max((m - m0).abs())) / m0
    } else {
        0.0
    };
    summary.metric("mass_initial", m0);
    summary.metric("mass_final", rec.mass.last().copied().unwrap_or(0.0));
    summary.metric("mass_drift_rel", drift);
    summary.metric("tail_mass_final", rec.tail_mass.last().copied().unwrap_or(0.0));
    for norm in &rec.norms {
        summary.metric(format!("rho{}_l{}_spacetime", norm.order, norm.p), norm.value);
    }
    summary.counter("steps", rec.steps as u64);
    summary.counter("step_halvings", rec.halvings);
    summary.counter("frames", rec.output_times.len() as u64);
    summary.wall_ms = start.elapsed().as_millis() as u64;

    let dir = &args.out;
    let mut mass_csv = String::from("t,mass,tail_mass\n");
    for ((t, m), tm) in rec.step_times.iter().zip(&rec.mass).zip(&rec.tail_mass) {
        mass_csv.push_str(&format!("{t},{m},{tm}\n"));
    }
    write_file(dir, "mass.csv", &mass_csv)?;
    for ms in &rec.moments {
        write_file(dir, &format!("moment_{}.csv", ms.order), &ms.series.to_csv())?;
    }
    for ms in &rec.tail_moments {
        write_file(
            dir,
            &format!("tail_moment_{}_I{}.csv", ms.order, rec.tail_index),
            &ms.series.to_csv(),
        )?;
    }
    if let Some(series) = &rec.averaged_diffusivity {
        write_file(dir, &format!("m_field_I{}.csv", rec.tail_index), &series.to_csv())?;
    }
    // Final state in the initial-table format so runs can be chained.
    let mut state_csv = String::from("i,j,c\n");
    for i in 1..=rec.final_state.n() {
        for (j, v) in rec.final_state.species(i).iter().enumerate() {
            state_csv.push_str(&format!("{i},{j},{v}\n"));
        }
    }
    write_file(dir, "final_state.csv", &state_csv)?;
    emit_summary(Some(dir), &summary)?;

    if let Some(abort) = out.abort {
        eprintln!("solver aborted after {} steps: {abort}", rec.steps);
        return Err(abort);
    }
    Ok(true)
}

// --- gelation scan --------------------------------------------------------------

fn gelation_scan(args: GelationArgs) -> Result<bool, Error> {
    let start = Instant::now();
    let patch = toml::Value::Table({
        let mut t = toml::Table::new();
        t.insert(
            "truncations".into(),
            toml::Value::Array(
                args.n_list.iter().map(|&n| toml::Value::Integer(n as i64)).collect(),
            ),
        );
        t.insert("t_end".into(), toml::Value::Float(args.t_end));
        t.insert("dt".into(), toml::Value::Float(args.dt));
        t.insert("alpha".into(), toml::Value::Float(args.alpha));
        t.insert("beta".into(), toml::Value::Float(args.beta));
        t.insert("scheme".into(), toml::Value::String(args.scheme.clone()));
        t
    });
    let out = run_experiment(ExperimentId::E3, Some(&patch))?;
    write_experiment_output(&args.out.join("gelation-scan"), "gelation-scan", out, start)
}

// --- duality subcommands ---------------------------------------------------------

fn sampler_config(
    nx: usize,
    nt: usize,
    t_end: Real,
    samples: usize,
    power_iterations: usize,
    seed: u64,
) -> KSamplerConfig<Real> {
    let smooth = samples * 3 / 5;
    KSamplerConfig {
        nx,
        nt,
        t_end,
        smooth_samples: smooth,
        rough_samples: samples - smooth,
        power_iterations,
        seed,
    }
}

fn duality_k(args: DualityKArgs) -> Result<bool, Error> {
    let start = Instant::now();
    let cfg = sampler_config(args.nx, args.nt, args.t_end, args.samples, args.power_iterations, args.seed);
    let est = estimate_k(args.m, args.q, &cfg)?;

    let mut summary = Summary::new("duality-k");
    summary.seed = Some(args.seed);
    summary.metric("k_estimate", est.estimate);
    summary.metric("m", est.m);
    summary.metric("q", est.q);
    summary.counter("samples", est.ratios.len() as u64);
    summary.counter("nx", est.nx as u64);
    summary.counter("nt", est.nt as u64);
    if args.q == 2.0 {
        summary.push_check(CheckOutcome::ge("k_estimate", est.estimate, 1.0 - 1e-6));
        summary.push_check(CheckOutcome::le("k_estimate", est.estimate, 1.0 + 1e-12));
    }
    summary.wall_ms = start.elapsed().as_millis() as u64;

    if let Some(dir) = &args.out {
        let mut csv = String::from("sample,ratio\n");
        for (i, r) in est.ratios.iter().enumerate() {
            csv.push_str(&format!("{i},{r}\n"));
        }
        write_file(dir, "k_ratios.csv", &csv)?;
    }
    emit_summary(args.out.as_deref(), &summary)?;
    Ok(summary.passed)
}

fn closeness(args: ClosenessArgs) -> Result<bool, Error> {
    let start = Instant::now();
    let cfg = sampler_config(args.nx, args.nt, args.t_end, args.samples, args.power_iterations, args.seed);
    let rep = check_closeness(args.a, args.b, args.p, &cfg)?;

    let mut summary = Summary::new("closeness");
    summary.seed = Some(args.seed);
    summary.metric("lhs", rep.lhs);
    summary.metric("k_estimate", rep.k_estimate.estimate);
    summary.metric("p_conjugate", rep.p_conjugate);
    summary.metric("satisfied", if rep.satisfied { 1.0 } else { 0.0 });
    summary.metric("rigorous", if rep.rigorous { 1.0 } else { 0.0 });
    summary.push_check(CheckOutcome::le("closeness_lhs", rep.lhs, 1.0));
    summary.wall_ms = start.elapsed().as_millis() as u64;
    if !rep.rigorous {
        eprintln!(
            "note: p' = {} != 2, the constant estimate is a lower bound; \
             the verdict is heuristic",
            rep.p_conjugate
        );
    }
    emit_summary(args.out.as_deref(), &summary)?;
    Ok(summary.passed)
}

/// [dual] section of a dual-solve config.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct DualSection {
    pattern: String,
    a: Real,
    b: Real,
    #[serde(default = "default_q")]
    q: Real,
    #[serde(default = "default_nx")]
    nx: usize,
    #[serde(default = "default_nt")]
    nt: usize,
    #[serde(rename = "T", default = "default_t")]
    t_end: Real,
    #[serde(default = "default_forcing")]
    forcing: String,
    #[serde(default)]
    seed: u64,
    #[serde(default = "default_iters")]
    max_iters: usize,
    #[serde(default = "default_rtol")]
    residual_tol: Real,
    #[serde(default = "default_init")]
    init: String,
}

fn default_q() -> Real {
    2.0
}
fn default_nx() -> usize {
    32
}
fn default_nt() -> usize {
    64
}
fn default_t() -> Real {
    1.0
}
fn default_forcing() -> String {
    "cosine".into()
}
fn default_iters() -> usize {
    200
}
fn default_rtol() -> Real {
    1e-12
}
fn default_init() -> String {
    "zero".into()
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct DualFile {
    dual: DualSection,
}

fn dual_solve(args: DualSolveArgs) -> Result<bool, Error> {
    let start = Instant::now();
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| Error::Config(format!("reading {}: {e}", args.config.display())))?;
    if text.trim().is_empty() {
        return Err(Error::Config("empty config".into()));
    }
    let mut tree: toml::Value = text
        .parse::<toml::Table>()
        .map_err(|e| Error::Config(e.to_string()))?
        .into();
    for spec in &args.sets {
        let (path, value) = config::parse_override(spec)?;
        config::apply_override(&mut tree, &path, value)?;
    }
    let file: DualFile = tree.clone().try_into().map_err(|e: toml::de::Error| {
        Error::Config(e.to_string())
    })?;
    let d = file.dual;

    let grid = if d.nx == 1 { Grid1D::single_cell() } else { Grid1D::new(d.nx)? };
    let mesh = TimeMesh::new(d.nt, d.t_end)?;
    let pattern = match d.pattern.as_str() {
        "constant" => CoefficientPattern::Constant { value: (d.a + d.b) / 2.0 },
        "checkerboard" => CoefficientPattern::Checkerboard { low: d.a, high: d.b },
        "random_two_valued" => {
            CoefficientPattern::RandomTwoValued { low: d.a, high: d.b, seed: d.seed }
        }
        other => return Err(Error::Config(format!("[dual] unknown pattern `{other}`"))),
    };
    let coeff = pattern.build(&grid, mesh);
    let forcing = match d.forcing.as_str() {
        "cosine" => IntervalField::from_fn(grid.clone(), mesh, |_, _, x| {
            (std::f64::consts::PI * x).cos()
        }),
        "uniform" => IntervalField::from_fn(grid.clone(), mesh, |_, _, _| 1.0),
        other => return Err(Error::Config(format!("[dual] unknown forcing `{other}`"))),
    };
    let initial = match d.init.as_str() {
        "zero" => InitialIterate::Zero,
        "forcing_scaled" => InitialIterate::ForcingScaled,
        "random" => InitialIterate::Random { seed: d.seed },
        other => return Err(Error::Config(format!("[dual] unknown init `{other}`"))),
    };
    let prob = DualProblem::new(coeff, forcing, d.q, d.a, d.b)?;
    let sol = solve_dual_contraction(
        &prob,
        &ContractionOptions { max_iters: d.max_iters, residual_tol: d.residual_tol, initial },
    )?;

    let mut summary = Summary::new("dual-solve").with_config_snapshot(&tree);
    summary.seed = Some(d.seed);
    summary.metric("iterations", sol.iterations as f64);
    summary.metric("residual_rel", sol.residual_rel);
    summary.metric("max_update_ratio", sol.max_update_ratio().unwrap_or(0.0));
    summary.counter("iterations", sol.iterations as u64);
    summary.push_check(CheckOutcome::le("residual_rel", sol.residual_rel, 1e-8));
    summary.wall_ms = start.elapsed().as_millis() as u64;

    let dir = &args.out;
    let mut csv = String::from("iteration,update_norm\n");
    for (i, z) in sol.update_norms.iter().enumerate() {
        csv.push_str(&format!("{i},{z}\n"));
    }
    write_file(dir, "contraction_updates.csv", &csv)?;
    let mut ucsv = String::from("t,x,value\n");
    let dt = mesh.dt();
    for (k, frame) in sol.u.iter().enumerate() {
        for (j, v) in frame.iter().enumerate() {
            ucsv.push_str(&format!("{},{},{v}\n", k as f64 * dt, grid.cell_center(j)));
        }
    }
    write_file(dir, "dual_solution.csv", &ucsv)?;
    emit_summary(Some(dir), &summary)?;
    Ok(summary.passed)
}

// --- weak-form test ---------------------------------------------------------------

fn weakform(args: WeakformArgs) -> Result<bool, Error> {
    let start = Instant::now();
    let p = WeakformSweepParams {
        truncations: args.n_list.clone(),
        trials: args.trials as usize,
        seed: args.seed,
        tol: args.tol,
        include_table: true,
    };
    let out = weakform_sweep(&p)?;
    let mut summary = Summary::new("weakform-test");
    summary.seed = Some(args.seed);
    for (k, v) in &out.metrics {
        summary.metric(k.clone(), *v);
    }
    for (k, v) in &out.counters {
        summary.counter(k.clone(), *v);
    }
    for check in out.checks {
        summary.push_check(check);
    }
    summary.wall_ms = start.elapsed().as_millis() as u64;
    emit_summary(args.out.as_deref(), &summary)?;
    Ok(summary.passed)
}

// --- experiments --------------------------------------------------------------------

fn experiment(args: ExperimentArgs) -> Result<bool, Error> {
    let start = Instant::now();
    let id: ExperimentId = args.id.parse()?;
    let mut patch = toml::Value::Table(toml::Table::new());
    for spec in &args.sets {
        let (path, value) = config::parse_override(spec)?;
        config::apply_override(&mut patch, &path, value)?;
    }
    let overrides = if args.sets.is_empty() { None } else { Some(&patch) };
    println!("running {} — {}", id.name(), id.describe());
    let out = run_experiment(id, overrides)?;
    let dir = args.out.join(id.name());
    write_experiment_output(&dir, id.name(), out, start)
}

fn write_experiment_output(
    dir: &Path,
    name: &str,
    out: ExperimentOutput,
    start: Instant,
) -> Result<bool, Error> {
    let config_tree: toml::Value = out
        .params_toml
        .parse::<toml::Table>()
        .map(Into::into)
        .unwrap_or(toml::Value::String(out.params_toml.clone()));
    let mut summary = Summary::new("experiment").with_config_snapshot(&config_tree);
    summary.experiment = Some(out.id.clone());
    for (k, v) in &out.metrics {
        summary.metric(k.clone(), *v);
    }
    for (k, v) in &out.counters {
        summary.counter(k.clone(), *v);
    }
    for check in out.checks {
        summary.push_check(check);
    }
    summary.wall_ms = start.elapsed().as_millis() as u64;

    let mut manifest = Manifest::new(name);
    manifest.config_toml = out.params_toml.clone();
    manifest.artifacts = out
        .csv
        .iter()
        .map(|(f, _)| f.clone())
        .chain(["summary.json".to_string(), "manifest.json".to_string()])
        .collect();

    for (file, contents) in &out.csv {
        write_file(dir, file, contents)?;
    }
    write_file(dir, "manifest.json", &manifest.to_json())?;
    emit_summary(Some(dir), &summary)?;
    Ok(summary.passed)
}
