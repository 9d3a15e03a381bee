//! Scratch harness for tuning the reduced case-study run. Reads knobs from
//! environment variables so experiments don't need recompilation:
//! TUNE_LR, TUNE_STEPS, TUNE_WIDTHS (comma list), TUNE_SEED, TUNE_A5 (0/1),
//! TUNE_VAL (validation paths).

use std::path::PathBuf;
use std::time::Instant;

use epigame_core::eval::{classify, default_deviations, exploitability_probe, DEFAULT_CONTROL_THRESHOLD};
use epigame_core::rng::{StreamKey, StreamPurpose};
use epigame_core::sim::{simulate, FixedPolicy};
use epigame_core::solver::{SolveOutcome, Solver};
use epigame_core::Scenario;

fn envf(name: &str, default: f64) -> f64 {
    std::env::var(name).ok().and_then(|v| v.parse().ok()).unwrap_or(default)
}

fn envu(name: &str, default: u64) -> u64 {
    std::env::var(name).ok().and_then(|v| v.parse().ok()).unwrap_or(default)
}

fn train(attention: f64, lr: f64, steps: usize, widths: &[usize], seed: u64, val: usize) -> (SolveOutcome, Solver, epigame_core::model::ModelParams, Vec<f64>) {
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/ny-nj-pa-outbreak.toml");
    let scenario = Scenario::load(&root).unwrap();
    let mut resolved = scenario.resolve().unwrap();
    resolved.params.cost.attention = attention;
    let x0 = resolved.initial_state().unwrap().to_vec();

    let mut config = resolved.solver.clone();
    config.stages = 50;
    config.sgd_steps_per_stage = steps;
    config.batch_size = 64;
    config.time_steps = 40;
    config.learning_rate = lr;
    config.hidden_widths = widths.to_vec();
    config.validation_paths = val;
    config.probe_points = 256;
    config.seed = seed;
    config.convergence_threshold = 0.0;
    config.config_digest = format!("tune-a{attention}-lr{lr}-s{steps}");

    let solver = Solver::new(resolved.params.clone(), x0.clone(), config).unwrap();
    let t0 = Instant::now();
    let outcome = solver.run().unwrap();
    println!(
        "a={attention} lr={lr} steps={steps} widths={widths:?} seed={seed}: {} stages in {:.0}s, term {:?}",
        outcome.state.stage,
        t0.elapsed().as_secs_f64(),
        outcome.termination
    );
    (outcome, solver, resolved.params, x0)
}

fn val_at(outcome: &SolveOutcome, stage: usize, player: usize) -> f64 {
    outcome
        .diagnostics
        .rows
        .iter()
        .find(|r| r.stage == stage && r.player == player)
        .map(|r| r.validation_loss)
        .unwrap_or(f64::NAN)
}

fn main() {
    let lr = envf("TUNE_LR", 2e-3);
    let steps = envu("TUNE_STEPS", 100) as usize;
    let seed = envu("TUNE_SEED", 2);
    let val = envu("TUNE_VAL", 128) as usize;
    let widths: Vec<usize> = std::env::var("TUNE_WIDTHS")
        .unwrap_or_else(|_| "40,40,40".into())
        .split(',')
        .map(|w| w.parse().unwrap())
        .collect();
    let run_a5 = envu("TUNE_A5", 0) == 1;

    let (outcome, _solver, params, x0) = train(100.0, lr, steps, &widths, seed, val);
    for player in 0..3 {
        let early = val_at(&outcome, 4, player);
        let late = val_at(&outcome, 49, player);
        println!(
            "  player {player}: val@idx4 {early:.4e}  val@idx49 {late:.4e}  decreased: {}  ratio {:.2}",
            late < early,
            late / early
        );
    }

    let grid = epigame_core::TimeGrid::new(params.cost.horizon, 40).unwrap();
    let paths = simulate(
        &params,
        &outcome.profile,
        &x0,
        grid,
        256,
        99,
        StreamKey::new(StreamPurpose::Evaluation, 0, 7),
    )
    .unwrap();
    let label = classify(&paths, DEFAULT_CONTROL_THRESHOLD).unwrap();
    println!("  label: {:?} (terminal S {:?})", label.label, label.terminal_susceptible);
    let mean_ell = paths.lockdown.iter().sum::<f64>() / paths.lockdown.len() as f64;
    println!("  mean lockdown a=100: {mean_ell:.4}");
    let mut profile_line = String::from("  ell(t) nodes 0,5,..,40:");
    for k in (0..=40).step_by(5) {
        let node_mean = paths.lockdown.index_axis(ndarray::Axis(1), k).mean().unwrap();
        profile_line.push_str(&format!(" {node_mean:.2}"));
    }
    println!("{profile_line}");

    let zero = FixedPolicy::new(vec![0.0; 3], vec![0.0; 3]).unwrap();
    let zpaths = simulate(
        &params,
        &zero,
        &x0,
        grid,
        256,
        99,
        StreamKey::new(StreamPurpose::Evaluation, 0, 7),
    )
    .unwrap();
    let zlabel = classify(&zpaths, DEFAULT_CONTROL_THRESHOLD).unwrap();
    println!("  inaction label: {:?}", zlabel.label);

    let t0 = Instant::now();
    let mut all_pass = true;
    for player in 0..3 {
        let report = exploitability_probe(
            &outcome.profile,
            player,
            &default_deviations(),
            &params,
            &x0,
            grid,
            256,
            99,
        )
        .unwrap();
        let tol = report.default_tolerance();
        let best = report.best_outcome();
        let pass = report.passes(tol);
        all_pass &= pass;
        println!(
            "  player {player}: baseline {:.4e}, best dev {} reduction {:.4e} (2se {:.1e}, tol {:.1e}), passes: {pass}",
            report.baseline_mean,
            best.deviation,
            best.reduction,
            2.0 * best.reduction_stderr,
            tol
        );
    }
    println!("  probe wall: {:.0}s  ALL PASS: {all_pass}", t0.elapsed().as_secs_f64());

    if run_a5 {
        let (out5, _s5, p5, x05) = train(5.0, lr, steps, &widths, seed, val);
        let paths5 = simulate(
            &p5,
            &out5.profile,
            &x05,
            grid,
            256,
            99,
            StreamKey::new(StreamPurpose::Evaluation, 0, 7),
        )
        .unwrap();
        let mean5 = paths5.lockdown.iter().sum::<f64>() / paths5.lockdown.len() as f64;
        println!("  mean lockdown a=5: {mean5:.4}  (a=100 higher: {})", mean_ell > mean5);
        let mut line5 = String::from("  a=5 ell(t) nodes 0,5,..,40:");
        for k in (0..=40).step_by(5) {
            let node_mean = paths5.lockdown.index_axis(ndarray::Axis(1), k).mean().unwrap();
            line5.push_str(&format!(" {node_mean:.2}"));
        }
        println!("{line5}");
    }
}
