//! Command-line front end for the region-coupled epidemic lockdown game.
//!
//! The binary wraps the library end to end: scenario ingestion and parameter
//! calibration, equilibrium training, Monte Carlo simulation and evaluation
//! of trained or fixed policies, and the self-contained verification suites.
//!
//! Every command that touches a scenario resolves it first (calibration,
//! transmission matrix, solver settings) and then writes its outputs under
//! one directory per scenario:
//!
//! ```text
//! <output root>/<scenario name>/
//!     resolved.json            calibrate: fully resolved parameters
//!     diagnostics.csv          solve: per-stage, per-player training rows
//!     profile.ckpt.json        solve: final networks + optimizer state
//!     stage_*.ckpt.json        solve: periodic checkpoints (--checkpoint-every)
//!     paths.csv                simulate: per-path trajectories
//!     summary.csv              simulate/evaluate: banded trajectory summary
//!     costs.csv                evaluate: per-player cost estimates
//!     classification.json      evaluate: controlled / out_of_control record
//!     probe.csv                evaluate --probe: unilateral-deviation table
//!     <command>-manifest.json  provenance: digest, seed, versions, outputs
//! ```
//!
//! The output root is `--out` when given, else the `EPIGAME_OUTPUT_ROOT`
//! environment variable, else `./runs`. Output CSVs embed the scenario's
//! configuration digest as a `# config_digest:` comment line, and re-running
//! a command with identical inputs and seed reproduces them byte for byte.
//!
//! Exit codes: 0 success, 2 configuration error, 3 artifact mismatch,
//! 4 solver abort, 5 verification failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{ArgGroup, Parser, Subcommand};

use epigame_core::error::{Error, Result};
use epigame_core::eval::{
    classify, default_deviations, estimate_cost, exploitability_probe, summarize,
    DEFAULT_CONTROL_THRESHOLD,
};
use epigame_core::neural::checkpoint::{Checkpoint, CHECKPOINT_VERSION};
use epigame_core::rng::{StreamKey, StreamPurpose};
use epigame_core::sim::{export_csv, simulate, FixedPolicy};
use epigame_core::solver::{PolicyProfile, Solver, Termination};
use epigame_core::verify::{self, SuiteReport};
use epigame_core::{PolicyMap, ResolvedScenario, Scenario, TimeGrid};

#[derive(Parser)]
#[command(
    name = "epigame",
    version,
    about = "Markovian lockdown games on networks of regions: calibrate, train, simulate, evaluate, verify"
)]
struct Cli {
    /// Output root directory (default: $EPIGAME_OUTPUT_ROOT, else ./runs).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker threads for stage training (0 = one per player).
    /// Results are identical for any worker count; 1 forces fully serial
    /// training.
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Resolve a scenario file: derive per-day rates, expand the
    /// transmission matrix, and write the complete parameter set.
    Calibrate {
        /// Scenario TOML file.
        scenario: PathBuf,
    },

    /// Train an equilibrium policy profile on a scenario.
    Solve {
        /// Scenario TOML file (must provide `[initial]`).
        scenario: PathBuf,
        /// Override the configured stage count (total target, including
        /// stages already completed by a resumed run).
        #[arg(long)]
        stages: Option<usize>,
        /// Override the configured sample paths per optimizer step.
        #[arg(long)]
        batch: Option<usize>,
        /// Override the configured seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Write a checkpoint every this many stages.
        #[arg(long)]
        checkpoint_every: Option<usize>,
        /// Continue training from a checkpoint written by a previous run.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Zero out every cost channel and start from all-zero networks —
        /// the exactly solvable configuration whose value functions vanish.
        #[arg(long)]
        degenerate_zero_cost: bool,
        /// Skip the checkpoint/scenario digest check when resuming.
        #[arg(long)]
        force: bool,
    },

    /// Simulate the full epidemic dynamics under a trained profile or a
    /// constant policy and export per-path trajectories.
    #[command(group(ArgGroup::new("policy").required(true).args(["profile", "fixed_policy"])))]
    Simulate {
        /// Scenario TOML file (must provide `[initial]`).
        scenario: PathBuf,
        /// Trained profile checkpoint (profile.ckpt.json from `solve`).
        #[arg(long)]
        profile: Option<PathBuf>,
        /// Constant lockdown level in [0, 1] for every region instead of a
        /// trained profile.
        #[arg(long)]
        fixed_policy: Option<f64>,
        /// Sample paths.
        #[arg(long, default_value_t = 256)]
        paths: usize,
        /// Simulation seed (default: the scenario's solver seed).
        #[arg(long)]
        seed: Option<u64>,
        /// Skip the checkpoint/scenario digest check.
        #[arg(long)]
        force: bool,
    },

    /// Estimate per-player costs, classify the outcome, and optionally
    /// probe for profitable unilateral deviations.
    #[command(group(ArgGroup::new("policy").required(true).args(["profile", "fixed_policy"])))]
    Evaluate {
        /// Scenario TOML file (must provide `[initial]`).
        scenario: PathBuf,
        /// Trained profile checkpoint (profile.ckpt.json from `solve`).
        #[arg(long)]
        profile: Option<PathBuf>,
        /// Constant lockdown level in [0, 1] for every region instead of a
        /// trained profile.
        #[arg(long)]
        fixed_policy: Option<f64>,
        /// Sample paths.
        #[arg(long, default_value_t = 256)]
        paths: usize,
        /// Evaluation seed (default: the scenario's solver seed).
        #[arg(long)]
        seed: Option<u64>,
        /// Controlled/out-of-control threshold on the terminal susceptible
        /// fraction relative to its initial value.
        #[arg(long, default_value_t = DEFAULT_CONTROL_THRESHOLD)]
        threshold: f64,
        /// Probe every player for profitable constant-lockdown deviations
        /// (common random numbers) and write the deviation table.
        #[arg(long)]
        probe: bool,
        /// Skip the checkpoint/scenario digest check.
        #[arg(long)]
        force: bool,
    },

    /// Run the self-contained verification suites.
    Verify {
        /// Suite name (default: all suites).
        suite: Option<String>,
        /// List available suites without running anything.
        #[arg(long)]
        list: bool,
        /// Print the report as JSON instead of text.
        #[arg(long)]
        json: bool,
    },

    /// Print tool, format, and default-configuration information.
    Info,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.workers > 0 {
        // The pool is process-global; a failure here means it was already
        // built, which only happens on repeated initialization in tests.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.workers)
            .build_global();
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}

/// Exit-code contract: configuration and input problems are 2, artifact
/// (checkpoint/digest) mismatches 3, solver aborts 4, verification
/// failures 5.
fn exit_code(err: &Error) -> u8 {
    match err {
        Error::InvalidInput(_)
        | Error::DimensionMismatch(_)
        | Error::Config(_)
        | Error::Serde(_)
        | Error::Io(_) => 2,
        Error::ArtifactMismatch(_) => 3,
        Error::SolverAbort(_) => 4,
        Error::VerificationFailed(_) => 5,
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Calibrate { ref scenario } => cmd_calibrate(&cli, scenario.clone()),
        Command::Solve {
            ref scenario,
            stages,
            batch,
            seed,
            checkpoint_every,
            ref resume,
            degenerate_zero_cost,
            force,
        } => cmd_solve(
            &cli,
            scenario.clone(),
            SolveFlags {
                stages,
                batch,
                seed,
                checkpoint_every,
                resume: resume.clone(),
                degenerate_zero_cost,
                force,
            },
        ),
        Command::Simulate {
            ref scenario,
            ref profile,
            fixed_policy,
            paths,
            seed,
            force,
        } => cmd_simulate(&cli, scenario.clone(), profile.clone(), fixed_policy, paths, seed, force),
        Command::Evaluate {
            ref scenario,
            ref profile,
            fixed_policy,
            paths,
            seed,
            threshold,
            probe,
            force,
        } => cmd_evaluate(
            &cli,
            scenario.clone(),
            profile.clone(),
            fixed_policy,
            EvalFlags { paths, seed, threshold, probe, force },
        ),
        Command::Verify { ref suite, list, json } => cmd_verify(suite.clone(), list, json),
        Command::Info => cmd_info(),
    }
}

// ---- output plumbing ----

/// `--out`, else `EPIGAME_OUTPUT_ROOT`, else `./runs`; one directory per
/// scenario under the root.
fn scenario_dir(cli: &Cli, scenario_name: &str) -> Result<PathBuf> {
    let root = cli
        .out
        .clone()
        .or_else(|| std::env::var_os("EPIGAME_OUTPUT_ROOT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs"));
    let safe: String = scenario_name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-') { c } else { '-' })
        .collect();
    let dir = root.join(safe);
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Provenance record written next to every command's outputs. The embedded
/// digest is the scenario's canonical-form digest, so it is stable under key
/// reordering of the configuration file.
fn write_manifest(
    dir: &Path,
    command: &str,
    resolved: &ResolvedScenario,
    seed: u64,
    outputs: &[&str],
    extra: serde_json::Value,
) -> Result<PathBuf> {
    let mut map = serde_json::Map::new();
    map.insert("command".into(), command.into());
    map.insert("scenario".into(), resolved.name.clone().into());
    map.insert("config_digest".into(), resolved.digest.clone().into());
    map.insert("seed".into(), seed.into());
    map.insert("artifact_version".into(), CHECKPOINT_VERSION.into());
    map.insert("tool_version".into(), env!("CARGO_PKG_VERSION").into());
    map.insert("created_unix_s".into(), unix_now().into());
    map.insert(
        "outputs".into(),
        serde_json::Value::Array(outputs.iter().map(|o| (*o).into()).collect()),
    );
    if let serde_json::Value::Object(extra_map) = extra {
        map.extend(extra_map);
    }
    let path = dir.join(format!("{command}-manifest.json"));
    std::fs::write(&path, serde_json::to_string_pretty(&serde_json::Value::Object(map))? + "\n")?;
    Ok(path)
}

fn load_scenario(path: &Path) -> Result<ResolvedScenario> {
    Scenario::load(path)?.resolve()
}

/// Either a trained profile checkpoint or a constant lockdown level.
fn load_policy(
    resolved: &ResolvedScenario,
    profile: Option<PathBuf>,
    fixed_policy: Option<f64>,
    seed: u64,
    force: bool,
) -> Result<Box<dyn PolicyMap>> {
    match (profile, fixed_policy) {
        (Some(path), None) => {
            let expected = if force { None } else { Some(resolved.digest.as_str()) };
            let ckpt = Checkpoint::load(&path, expected)?;
            let nets = ckpt
                .players
                .iter()
                .map(|p| p.policy_net.to_params())
                .collect::<Result<Vec<_>>>()?;
            let profile = PolicyProfile::new(
                nets,
                resolved.params.cost.horizon,
                ckpt.stage,
                ckpt.config_digest.clone(),
                seed,
            )?;
            Ok(Box::new(profile))
        }
        (None, Some(level)) => {
            let n = resolved.params.n_regions();
            Ok(Box::new(FixedPolicy::new(vec![level; n], vec![0.0; n])?))
        }
        // clap's argument group enforces exactly one source.
        _ => unreachable!("clap enforces exactly one policy source"),
    }
}

// ---- calibrate ----

fn cmd_calibrate(cli: &Cli, scenario_path: PathBuf) -> Result<()> {
    let resolved = load_scenario(&scenario_path)?;
    let dir = scenario_dir(cli, &resolved.name)?;

    println!("scenario {} (digest {})", resolved.name, &resolved.digest[..12]);
    println!(
        "rates per day: beta {:.10} gamma {:.10} lambda {:.10} kappa {:.10}",
        resolved.rates.beta, resolved.rates.gamma, resolved.rates.lambda, resolved.rates.kappa
    );
    let n = resolved.params.n_regions();
    println!("transmission matrix ({n} regions):");
    for (j, name) in resolved.params.regions.names().iter().enumerate() {
        let row: Vec<String> = (0..n)
            .map(|k| format!("{:.10}", resolved.params.epi.beta_matrix[[j, k]]))
            .collect();
        println!("  {name}: [{}]", row.join(", "));
    }
    match &resolved.initial {
        Some(x0) => println!("initial state: {x0:?}"),
        None => println!("initial state: not set (required for solve/simulate/evaluate)"),
    }

    let resolved_path = dir.join("resolved.json");
    std::fs::write(&resolved_path, serde_json::to_string_pretty(&resolved)? + "\n")?;
    let manifest = write_manifest(
        &dir,
        "calibrate",
        &resolved,
        resolved.solver.seed,
        &["resolved.json"],
        serde_json::json!({}),
    )?;
    println!("wrote {}", resolved_path.display());
    println!("wrote {}", manifest.display());
    Ok(())
}

// ---- solve ----

struct SolveFlags {
    stages: Option<usize>,
    batch: Option<usize>,
    seed: Option<u64>,
    checkpoint_every: Option<usize>,
    resume: Option<PathBuf>,
    degenerate_zero_cost: bool,
    force: bool,
}

fn cmd_solve(cli: &Cli, scenario_path: PathBuf, flags: SolveFlags) -> Result<()> {
    let resolved = load_scenario(&scenario_path)?;
    let dir = scenario_dir(cli, &resolved.name)?;

    let mut params = resolved.params.clone();
    if flags.degenerate_zero_cost {
        // All running-cost channels vanish; the exact value functions are
        // identically zero and all-zero networks are a training fixed point.
        params.cost.productivity = 0.0;
        params.cost.attention = 0.0;
        params.cost.health_weight = 0.0;
    }

    let mut config = resolved.solver.clone();
    if let Some(stages) = flags.stages {
        config.stages = stages;
    }
    if let Some(batch) = flags.batch {
        config.batch_size = batch;
    }
    if let Some(seed) = flags.seed {
        config.seed = seed;
    }
    if flags.checkpoint_every.is_some() {
        config.checkpoint_every = flags.checkpoint_every;
        config.checkpoint_dir = Some(dir.clone());
    }
    if cli.workers == 1 {
        config.parallel_players = false;
    }

    let x0 = resolved.initial_state()?.to_vec();
    let solver = Solver::new(params, x0.clone(), config.clone())?;

    let start_state = match &flags.resume {
        Some(ckpt_path) => {
            let expected = if flags.force { None } else { Some(resolved.digest.as_str()) };
            let ckpt = Checkpoint::load(ckpt_path, expected)?;
            println!("resuming from {} at stage {}", ckpt_path.display(), ckpt.stage);
            solver.from_checkpoint(&ckpt)?
        }
        None if flags.degenerate_zero_cost => solver.zero_state()?,
        None => solver.initial_state()?,
    };
    let first_stage = start_state.stage;

    println!(
        "scenario {} (digest {}): training stages {}..{} (batch {}, seed {})",
        resolved.name,
        &resolved.digest[..12],
        first_stage,
        config.stages,
        config.batch_size,
        config.seed
    );
    let outcome = solver.run_from(start_state)?;

    let diagnostics_path = dir.join("diagnostics.csv");
    let mut sink = Vec::new();
    outcome.diagnostics.write_csv(&resolved.digest, &mut sink)?;
    std::fs::write(&diagnostics_path, sink)?;

    let profile_path = dir.join("profile.ckpt.json");
    solver.to_checkpoint(&outcome.state).save(&profile_path)?;

    let n = solver.cost_scales().len();
    let mut origin_values = Vec::with_capacity(n);
    for player in 0..n {
        let scaled = solver.value_at(&outcome.state, player, 0.0, &x0)?;
        origin_values.push(scaled * solver.cost_scales()[player]);
    }

    let termination = match outcome.termination {
        Termination::Completed => "completed".to_string(),
        Termination::EarlyStopped { stage } => format!("early_stopped at stage {stage}"),
        Termination::Aborted { stage, player } => {
            format!("aborted at stage {stage} (player {player})")
        }
    };
    println!(
        "trained stages {}..{} ({termination})",
        first_stage, outcome.state.stage
    );
    for (player, value) in origin_values.iter().enumerate() {
        println!("player {player}: value at start {value:.6e}");
    }

    let manifest = write_manifest(
        &dir,
        "solve",
        &resolved,
        config.seed,
        &["diagnostics.csv", "profile.ckpt.json"],
        serde_json::json!({
            "stages_completed": outcome.state.stage,
            "first_stage": first_stage,
            "termination": termination,
            "value_at_origin": origin_values,
            "solver": config,
        }),
    )?;
    println!("wrote {}", diagnostics_path.display());
    println!("wrote {}", profile_path.display());
    println!("wrote {}", manifest.display());

    if let Termination::Aborted { stage, player } = outcome.termination {
        return Err(Error::SolverAbort(format!(
            "player {player} stayed divergent through stage {stage}; diagnostics and checkpoint retained"
        )));
    }
    Ok(())
}

// ---- simulate ----

fn cmd_simulate(
    cli: &Cli,
    scenario_path: PathBuf,
    profile: Option<PathBuf>,
    fixed_policy: Option<f64>,
    paths: usize,
    seed: Option<u64>,
    force: bool,
) -> Result<()> {
    let resolved = load_scenario(&scenario_path)?;
    let dir = scenario_dir(cli, &resolved.name)?;
    let seed = seed.unwrap_or(resolved.solver.seed);
    let policy = load_policy(&resolved, profile, fixed_policy, seed, force)?;
    let x0 = resolved.initial_state()?.to_vec();
    let grid = TimeGrid::new(resolved.params.cost.horizon, resolved.solver.time_steps)?;

    let batch = simulate(
        &resolved.params,
        policy.as_ref(),
        &x0,
        grid,
        paths,
        seed,
        StreamKey::new(StreamPurpose::Evaluation, 0, 0),
    )?;

    let paths_path = dir.join("paths.csv");
    let mut sink = Vec::new();
    export_csv(&batch, Some(&resolved.digest), &mut sink)?;
    std::fs::write(&paths_path, sink)?;
    println!(
        "simulated {paths} paths x {} nodes x {} regions (seed {seed}, {} failed)",
        grid.steps() + 1,
        resolved.params.n_regions(),
        batch.batch_size() - batch.surviving_paths().len()
    );
    println!("wrote {}", paths_path.display());

    let mut outputs = vec!["paths.csv"];
    match summarize(&batch) {
        Ok(summary) => {
            let summary_path = dir.join("summary.csv");
            let mut sink = Vec::new();
            summary.write_csv(&resolved.digest, &mut sink)?;
            std::fs::write(&summary_path, sink)?;
            println!("wrote {}", summary_path.display());
            outputs.push("summary.csv");
        }
        Err(err) => println!("summary skipped: {err}"),
    }

    let manifest = write_manifest(
        &dir,
        "simulate",
        &resolved,
        seed,
        &outputs,
        serde_json::json!({ "paths": paths }),
    )?;
    println!("wrote {}", manifest.display());
    Ok(())
}

// ---- evaluate ----

struct EvalFlags {
    paths: usize,
    seed: Option<u64>,
    threshold: f64,
    probe: bool,
    force: bool,
}

fn cmd_evaluate(
    cli: &Cli,
    scenario_path: PathBuf,
    profile: Option<PathBuf>,
    fixed_policy: Option<f64>,
    flags: EvalFlags,
) -> Result<()> {
    let resolved = load_scenario(&scenario_path)?;
    let dir = scenario_dir(cli, &resolved.name)?;
    let seed = flags.seed.unwrap_or(resolved.solver.seed);
    let policy = load_policy(&resolved, profile, fixed_policy, seed, flags.force)?;
    let x0 = resolved.initial_state()?.to_vec();
    let grid = TimeGrid::new(resolved.params.cost.horizon, resolved.solver.time_steps)?;

    let report = estimate_cost(policy.as_ref(), &resolved.params, &x0, grid, flags.paths, seed)?;
    let costs_path = dir.join("costs.csv");
    let mut sink = Vec::new();
    report.write_csv(&resolved.digest, &mut sink)?;
    std::fs::write(&costs_path, sink)?;
    for (player, (mean, se)) in report.mean.iter().zip(&report.stderr).enumerate() {
        println!("player {player}: mean cost {mean:.6e} (stderr {se:.2e})");
    }

    let batch = simulate(
        &resolved.params,
        policy.as_ref(),
        &x0,
        grid,
        flags.paths,
        seed,
        StreamKey::new(StreamPurpose::Evaluation, 0, 0),
    )?;
    let label = classify(&batch, flags.threshold)?;
    println!("classification: {}", label.label);

    let classification_path = dir.join("classification.json");
    let mut record = match serde_json::to_value(&label)? {
        serde_json::Value::Object(map) => map,
        _ => unreachable!("classification record serializes as an object"),
    };
    record.insert("config_digest".into(), resolved.digest.clone().into());
    record.insert("paths".into(), flags.paths.into());
    record.insert("seed".into(), seed.into());
    std::fs::write(
        &classification_path,
        serde_json::to_string_pretty(&serde_json::Value::Object(record))? + "\n",
    )?;

    let mut outputs = vec!["costs.csv", "classification.json"];
    match summarize(&batch) {
        Ok(summary) => {
            let summary_path = dir.join("summary.csv");
            let mut sink = Vec::new();
            summary.write_csv(&resolved.digest, &mut sink)?;
            std::fs::write(&summary_path, sink)?;
            outputs.push("summary.csv");
        }
        Err(err) => println!("summary skipped: {err}"),
    }

    let mut probe_extra = serde_json::json!({});
    if flags.probe {
        let deviations = default_deviations();
        let mut sink = String::new();
        sink.push_str(&format!("# config_digest: {}\n", resolved.digest));
        sink.push_str("player,deviation,mean_cost,reduction,reduction_stderr\n");
        let mut verdicts = Vec::new();
        for player in 0..resolved.params.n_regions() {
            let probe = exploitability_probe(
                policy.as_ref(),
                player,
                &deviations,
                &resolved.params,
                &x0,
                grid,
                flags.paths,
                seed,
            )?;
            for outcome in &probe.outcomes {
                sink.push_str(&format!(
                    "{player},{},{},{},{}\n",
                    outcome.deviation, outcome.mean_cost, outcome.reduction, outcome.reduction_stderr
                ));
            }
            let tolerance = probe.default_tolerance();
            let best = probe.best_outcome();
            let passes = probe.passes(tolerance);
            println!(
                "player {player}: best deviation {} reduces cost by {:.4e} (tolerance {:.4e} + 2se {:.4e}) -> {}",
                best.deviation,
                best.reduction,
                tolerance,
                2.0 * best.reduction_stderr,
                if passes { "no profitable deviation" } else { "profitable deviation found" }
            );
            verdicts.push(serde_json::json!({
                "player": player,
                "baseline_mean": probe.baseline_mean,
                "best_deviation": best.deviation,
                "best_reduction": best.reduction,
                "tolerance": tolerance,
                "within_tolerance": passes,
            }));
        }
        let probe_path = dir.join("probe.csv");
        std::fs::write(&probe_path, sink)?;
        println!("wrote {}", probe_path.display());
        outputs.push("probe.csv");
        probe_extra = serde_json::json!({ "probe": verdicts });
    }

    let mut extra = serde_json::json!({
        "threshold": flags.threshold,
        "paths": flags.paths,
        "label": label.label,
    });
    if let (serde_json::Value::Object(map), serde_json::Value::Object(probe_map)) =
        (&mut extra, probe_extra)
    {
        map.extend(probe_map);
    }
    let manifest = write_manifest(&dir, "evaluate", &resolved, seed, &outputs, extra)?;
    println!("wrote {}", costs_path.display());
    println!("wrote {}", classification_path.display());
    println!("wrote {}", manifest.display());
    Ok(())
}

// ---- verify ----

fn cmd_verify(suite: Option<String>, list: bool, json: bool) -> Result<()> {
    if list {
        for name in verify::SUITES {
            println!("{name}");
        }
        return Ok(());
    }
    let reports: Vec<SuiteReport> = match suite {
        Some(name) => vec![verify::run_suite(&name)?],
        None => verify::run_all()?,
    };
    if json {
        println!("{}", serde_json::to_string_pretty(&reports)?);
    } else {
        for report in &reports {
            for check in &report.checks {
                println!(
                    "[{}] {}/{}: measured {:.3e} vs tolerance {:.3e}{}",
                    if check.passed { "PASS" } else { "FAIL" },
                    report.suite,
                    check.name,
                    check.measured,
                    check.tolerance,
                    if check.detail.is_empty() {
                        String::new()
                    } else {
                        format!(" ({})", check.detail)
                    }
                );
            }
            println!(
                "suite {}: {} ({:.1}s)",
                report.suite,
                if report.passed() { "ok" } else { "FAILED" },
                report.wall_time_s
            );
        }
    }
    let failing: Vec<String> = reports
        .iter()
        .flat_map(|r| {
            r.failures()
                .into_iter()
                .map(move |name| format!("{}/{name}", r.suite))
        })
        .collect();
    if !failing.is_empty() {
        return Err(Error::VerificationFailed(failing.join(", ")));
    }
    Ok(())
}

// ---- info ----

fn cmd_info() -> Result<()> {
    println!("epigame {}", env!("CARGO_PKG_VERSION"));
    println!("checkpoint format version: {CHECKPOINT_VERSION}");
    println!("output root: --out, else $EPIGAME_OUTPUT_ROOT, else ./runs");
    println!("verification suites:");
    for name in verify::SUITES {
        println!("  {name}");
    }
    let defaults = epigame_core::SolverConfig::case_study_defaults();
    println!("default solver configuration:");
    println!("  stages {}", defaults.stages);
    println!("  sgd_steps_per_stage {}", defaults.sgd_steps_per_stage);
    println!("  batch_size {}", defaults.batch_size);
    println!("  time_steps {}", defaults.time_steps);
    println!("  learning_rate {}", defaults.learning_rate);
    println!("  policy_weight {:.6e}", defaults.policy_weight);
    println!("  hidden_widths {:?}", defaults.hidden_widths);
    println!("scenario sections: [regions] [travel] [calibration]|[rates] [noise] [policy] [cost] [initial] [solver]");
    Ok(())
}
