//! Scratch experiment: exploitability landscape of constant-lockdown
//! profiles, without any training. For a given initial state, scans
//! symmetric flat profiles, and optionally iterates per-player best
//! responses within the constant family to locate the constant-game
//! equilibrium and its residual exploitability.
//!
//! Environment knobs:
//!   PROBE_X0      "s,e,i" per-region fractions (default 0.994,0.004,0.002)
//!   PROBE_LEVELS  comma list of symmetric flat levels to scan
//!   PROBE_BR      number of best-response sweeps after the scan (default 0)
//!   PROBE_PATHS   Monte Carlo batch (default 256)

use epigame_core::eval::{estimate_cost, exploitability_probe, classify, Deviation, DEFAULT_CONTROL_THRESHOLD};
use epigame_core::rng::{StreamKey, StreamPurpose};
use epigame_core::sim::{simulate, FixedPolicy};
use epigame_core::{Scenario, TimeGrid};
use std::path::PathBuf;

fn envf(key: &str, default: &str) -> String {
    std::env::var(key).unwrap_or_else(|_| default.to_string())
}

fn main() {
    let x0_parts: Vec<f64> = envf("PROBE_X0", "0.994,0.004,0.002")
        .split(',')
        .map(|v| v.trim().parse().unwrap())
        .collect();
    let levels: Vec<f64> = envf("PROBE_LEVELS", "0.4,0.5,0.6,0.7,0.8,0.9,0.95,1.0")
        .split(',')
        .map(|v| v.trim().parse().unwrap())
        .collect();
    let br_rounds: usize = envf("PROBE_BR", "0").parse().unwrap();
    let paths: usize = envf("PROBE_PATHS", "256").parse().unwrap();

    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/ny-nj-pa-outbreak.toml");
    let resolved = Scenario::load(&path).unwrap().resolve().unwrap();
    let params = resolved.params;
    let n = params.n_regions();
    let (s0, e0, i0) = (x0_parts[0], x0_parts[1], x0_parts[2]);
    let mut x0 = vec![0.0; 3 * n];
    for j in 0..n {
        x0[j] = s0;
        x0[n + j] = e0;
        x0[2 * n + j] = i0;
    }
    let grid = TimeGrid::new(params.cost.horizon, 40).unwrap();
    println!("x0 per region: s={s0} e={e0} i={i0}  paths={paths}");

    // Classification extremes.
    for (label, level) in [("inaction", 0.0), ("full lockdown", 1.0)] {
        let policy = FixedPolicy::new(vec![level; n], vec![0.0; n]).unwrap();
        let batch = simulate(&params, &policy, &x0, grid, paths, 7, StreamKey::new(StreamPurpose::Evaluation, 0, 3)).unwrap();
        let verdict = classify(&batch, DEFAULT_CONTROL_THRESHOLD).unwrap();
        println!("{label}: {:?} terminal S {:?}", verdict.label, verdict.terminal_susceptible);
    }

    let fine: Vec<Deviation> = (0..=20).map(|k| Deviation::Constant(k as f64 / 20.0)).collect();

    println!("--- symmetric flat scan ---");
    for &level in &levels {
        let profile = FixedPolicy::new(vec![level; n], vec![0.0; n]).unwrap();
        let report = estimate_cost(&profile, &params, &x0, grid, paths, 11).unwrap();
        let mut line = format!("flat {level:.2}: costs");
        for c in &report.mean {
            line.push_str(&format!(" {c:.3e}"));
        }
        let mut worst = 0.0f64;
        let mut worst_desc = String::new();
        for player in 0..n {
            let probe = exploitability_probe(&profile, player, &fine, &params, &x0, grid, paths, 11).unwrap();
            let frac = probe.best_reduction() / probe.baseline_mean.abs().max(1.0);
            if frac > worst {
                worst = frac;
                worst_desc = format!("p{player} -> {}", probe.best_outcome().deviation);
            }
        }
        println!("{line}  worst gain {:.2}% ({worst_desc})", worst * 100.0);
    }

    if br_rounds > 0 {
        println!("--- best-response iteration in the constant family ---");
        let mut vec_levels = vec![levels[levels.len() / 2]; n];
        for round in 0..br_rounds {
            for player in 0..n {
                let profile = FixedPolicy::new(vec_levels.clone(), vec![0.0; n]).unwrap();
                let probe = exploitability_probe(&profile, player, &fine, &params, &x0, grid, paths, 11).unwrap();
                if let Deviation::Constant(best) = fine[probe.best] {
                    if probe.best_reduction() > 0.0 {
                        vec_levels[player] = best;
                    }
                }
            }
            println!("round {round}: levels {vec_levels:?}");
        }
        let profile = FixedPolicy::new(vec_levels.clone(), vec![0.0; n]).unwrap();
        for player in 0..n {
            let probe = exploitability_probe(&profile, player, &fine, &params, &x0, grid, paths, 11).unwrap();
            let tol = probe.default_tolerance();
            println!(
                "player {player}: baseline {:.4e} best {} gain {:.3e} ({:.2}%) tol(1%) {:.3e} 2se {:.3e} passes {}",
                probe.baseline_mean,
                probe.best_outcome().deviation,
                probe.best_reduction(),
                100.0 * probe.best_reduction() / probe.baseline_mean.abs().max(1.0),
                tol,
                2.0 * probe.best_outcome().reduction_stderr,
                probe.passes(tol)
            );
        }
    }
}
