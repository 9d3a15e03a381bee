//! Monte Carlo assessment of lockdown policy profiles.
//!
//! Everything here consumes forward simulations of the *full* dynamics (all
//! lockdown factors active, vaccination allowed) under a joint policy:
//!
//! * [`estimate_cost`] — per-player mean discounted cost
//!   `Jⁿ = E[∫₀ᵀ e^{−rt} fⁿ dt]` by left-endpoint quadrature along simulated
//!   paths, with standard errors;
//! * [`exploitability_probe`] — how many dollars player `n` could save by
//!   unilaterally deviating to an alternative policy, estimated with common
//!   random numbers so identical policies compare to exactly zero;
//! * [`summarize`] — per-region time series of mean and empirical
//!   2.5%/97.5% quantile bands for S, E, I, R and the lockdown level;
//! * [`classify`] — the controlled / out-of-control label from terminal
//!   susceptible fractions.
//!
//! Quantile convention: bands are *empirical quantiles* of the path ensemble
//! (linear interpolation between order statistics), not mean ± 1.96σ; with
//! zero diffusion all paths coincide and the bands collapse onto the mean
//! exactly. Paths that went non-finite during simulation are excluded from
//! every statistic and their count is reported.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::rng::{StreamKey, StreamPurpose};
use crate::sim::{simulate, PathBatch, PolicyMap, TimeGrid};

/// Minimum surviving paths for quantile bands to mean anything.
const MIN_SUMMARY_PATHS: usize = 40;

/// Controlled/out-of-control threshold on terminal vs. initial susceptibles.
pub const DEFAULT_CONTROL_THRESHOLD: f64 = 0.5;

/// Per-player Monte Carlo cost estimate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CostReport {
    /// Mean discounted cost per player ($).
    pub mean: Vec<f64>,
    /// Standard error of the mean per player ($).
    pub stderr: Vec<f64>,
    /// Requested path count.
    pub paths: usize,
    /// Paths excluded because the scheme went non-finite.
    pub failed_paths: usize,
    pub seed: u64,
}

impl CostReport {
    /// CSV rows `player,mean_cost,stderr,paths,seed`, with the config digest
    /// as a comment line when provided.
    pub fn write_csv<W: std::io::Write>(&self, digest: &str, mut sink: W) -> Result<()> {
        if !digest.is_empty() {
            writeln!(sink, "# config_digest: {digest}")?;
        }
        writeln!(sink, "player,mean_cost,stderr,paths,seed")?;
        for (player, (m, s)) in self.mean.iter().zip(&self.stderr).enumerate() {
            writeln!(sink, "{player},{m},{s},{},{}", self.paths, self.seed)?;
        }
        Ok(())
    }
}

/// Joint cost of a profile: simulate the full dynamics under `policy` and
/// average the accumulated per-player path costs. The quadrature is
/// left-endpoint: each step contributes `f(t_k, X_k, ℓ(t_k, X_k)) Δt`.
pub fn estimate_cost(
    policy: &dyn PolicyMap,
    params: &ModelParams,
    x0: &[f64],
    grid: TimeGrid,
    batch: usize,
    seed: u64,
) -> Result<CostReport> {
    if batch < 2 {
        return Err(Error::invalid("cost estimation needs at least 2 paths"));
    }
    let paths = simulate(
        params,
        policy,
        x0,
        grid,
        batch,
        seed,
        StreamKey::new(StreamPurpose::Evaluation, 0, 0),
    )?;
    cost_report_from_batch(&paths)
}

fn cost_report_from_batch(paths: &PathBatch) -> Result<CostReport> {
    let survivors = paths.surviving_paths();
    if survivors.len() < 2 {
        return Err(Error::invalid(format!(
            "only {} of {} paths stayed finite; cannot form a cost estimate",
            survivors.len(),
            paths.batch_size()
        )));
    }
    let n = paths.n_regions;
    let m = survivors.len() as f64;
    let mut mean = vec![0.0; n];
    let mut stderr = vec![0.0; n];
    for player in 0..n {
        let samples: Vec<f64> = survivors.iter().map(|&b| paths.costs[[b, player]]).collect();
        let mu = samples.iter().sum::<f64>() / m;
        let var = samples.iter().map(|c| (c - mu) * (c - mu)).sum::<f64>() / (m - 1.0);
        mean[player] = mu;
        stderr[player] = (var / m).sqrt();
    }
    Ok(CostReport {
        mean,
        stderr,
        paths: paths.batch_size(),
        failed_paths: paths.batch_size() - survivors.len(),
        seed: paths.seed.seed,
    })
}

/// A unilateral deviation for one player.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Deviation {
    /// Replace the player's lockdown with a constant level in `[0, 1]`.
    Constant(f64),
    /// Keep the profile's own policy — a control that must probe to exactly
    /// zero under common random numbers.
    Learned,
}

impl fmt::Display for Deviation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Deviation::Constant(level) => write!(f, "constant {level:.2}"),
            Deviation::Learned => write!(f, "learned"),
        }
    }
}

/// The default deviation set: constant lockdowns `0.0, 0.1, …, 1.0` plus the
/// learned policy itself.
pub fn default_deviations() -> Vec<Deviation> {
    let mut alts: Vec<Deviation> = (0..=10).map(|k| Deviation::Constant(k as f64 / 10.0)).collect();
    alts.push(Deviation::Learned);
    alts
}

/// Wraps a base profile, overriding one player's lockdown column.
struct DeviatedPolicy<'a> {
    base: &'a dyn PolicyMap,
    player: usize,
    deviation: Deviation,
}

impl PolicyMap for DeviatedPolicy<'_> {
    fn lockdown_batch(
        &self,
        t: f64,
        states: ndarray::ArrayView2<f64>,
        mut out: ndarray::ArrayViewMut2<f64>,
    ) {
        self.base.lockdown_batch(t, states, out.view_mut());
        if let Deviation::Constant(level) = self.deviation {
            out.column_mut(self.player).fill(level);
        }
    }

    fn health_batch(
        &self,
        t: f64,
        states: ndarray::ArrayView2<f64>,
        out: ndarray::ArrayViewMut2<f64>,
    ) {
        self.base.health_batch(t, states, out);
    }
}

/// One alternative's outcome in a probe.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DeviationOutcome {
    /// Human-readable deviation label.
    pub deviation: String,
    /// Player `n`'s mean cost when deviating ($).
    pub mean_cost: f64,
    /// Baseline minus deviated cost ($); positive means the deviation helps.
    pub reduction: f64,
    /// Standard error of the paired per-path difference ($). Zero when the
    /// deviation reproduces the baseline policy exactly.
    pub reduction_stderr: f64,
}

/// Exploitability probe result for one player.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExploitabilityReport {
    pub player: usize,
    /// Player's mean cost under the unmodified profile ($).
    pub baseline_mean: f64,
    pub outcomes: Vec<DeviationOutcome>,
    /// Index of the most profitable deviation.
    pub best: usize,
    pub paths: usize,
    pub seed: u64,
}

impl ExploitabilityReport {
    /// Largest cost reduction any alternative achieved ($).
    pub fn best_reduction(&self) -> f64 {
        self.outcomes[self.best].reduction
    }

    pub fn best_outcome(&self) -> &DeviationOutcome {
        &self.outcomes[self.best]
    }

    /// The probe's pass rule: no deviation helps by more than the tolerance
    /// plus twice the (paired) standard error of the best difference.
    pub fn passes(&self, tolerance: f64) -> bool {
        self.best_reduction() <= tolerance + 2.0 * self.best_outcome().reduction_stderr
    }

    /// Default Nash tolerance: 1% of the baseline cost magnitude.
    pub fn default_tolerance(&self) -> f64 {
        0.01 * self.baseline_mean.abs()
    }
}

/// How much player `player` could gain by unilaterally deviating from
/// `profile`. Every alternative is simulated with the *same* increment
/// stream as the baseline (common random numbers), so the per-path cost
/// differences are paired and a probe of the profile against itself is
/// exactly zero.
#[allow(clippy::too_many_arguments)]
pub fn exploitability_probe(
    profile: &dyn PolicyMap,
    player: usize,
    alternatives: &[Deviation],
    params: &ModelParams,
    x0: &[f64],
    grid: TimeGrid,
    batch: usize,
    seed: u64,
) -> Result<ExploitabilityReport> {
    if player >= params.n_regions() {
        return Err(Error::invalid(format!(
            "player {player} out of range for {} regions",
            params.n_regions()
        )));
    }
    if alternatives.is_empty() {
        return Err(Error::invalid("the deviation set must be non-empty"));
    }
    if batch < 2 {
        return Err(Error::invalid("exploitability probes need at least 2 paths"));
    }
    for alt in alternatives {
        if let Deviation::Constant(level) = alt {
            if !(0.0..=1.0).contains(level) || !level.is_finite() {
                return Err(Error::invalid(format!(
                    "constant deviation level {level} must lie in [0, 1]"
                )));
            }
        }
    }
    let key = StreamKey::new(StreamPurpose::Evaluation, player, 1);
    let baseline = simulate(params, profile, x0, grid, batch, seed, key)?;
    let base_survivors = baseline.surviving_paths();

    let mut outcomes = Vec::with_capacity(alternatives.len());
    let mut best = 0usize;
    for (idx, alt) in alternatives.iter().enumerate() {
        let deviated = DeviatedPolicy { base: profile, player, deviation: *alt };
        let run = simulate(params, &deviated, x0, grid, batch, seed, key)?;
        let run_survivors = run.surviving_paths();
        let common: Vec<usize> = base_survivors
            .iter()
            .copied()
            .filter(|b| run_survivors.contains(b))
            .collect();
        if common.len() < 2 {
            return Err(Error::invalid(format!(
                "deviation {alt} left fewer than 2 jointly finite paths"
            )));
        }
        let m = common.len() as f64;
        let diffs: Vec<f64> = common
            .iter()
            .map(|&b| baseline.costs[[b, player]] - run.costs[[b, player]])
            .collect();
        let mean_diff = diffs.iter().sum::<f64>() / m;
        let var = diffs.iter().map(|d| (d - mean_diff) * (d - mean_diff)).sum::<f64>() / (m - 1.0);
        let mean_cost: f64 = common.iter().map(|&b| run.costs[[b, player]]).sum::<f64>() / m;
        outcomes.push(DeviationOutcome {
            deviation: alt.to_string(),
            mean_cost,
            reduction: mean_diff,
            reduction_stderr: (var / m).sqrt(),
        });
        if outcomes[idx].reduction > outcomes[best].reduction {
            best = idx;
        }
    }

    let m = base_survivors.len() as f64;
    let baseline_mean = base_survivors
        .iter()
        .map(|&b| baseline.costs[[b, player]])
        .sum::<f64>()
        / m;
    Ok(ExploitabilityReport {
        player,
        baseline_mean,
        outcomes,
        best,
        paths: batch,
        seed,
    })
}

/// Mean and quantile band of one variable over time (arrays of length
/// `N_T + 1`).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeriesBand {
    pub mean: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

/// One region's banded trajectories.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegionSummary {
    pub susceptible: SeriesBand,
    pub exposed: SeriesBand,
    pub infectious: SeriesBand,
    pub recovered: SeriesBand,
    pub lockdown: SeriesBand,
}

/// Banded trajectory summary of a simulated batch.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectorySummary {
    /// Time-grid nodes (days).
    pub nodes: Vec<f64>,
    pub regions: Vec<RegionSummary>,
    /// Paths the statistics are computed over (failed ones excluded).
    pub paths_used: usize,
    /// Band levels, lower and upper (defaults 0.025 and 0.975).
    pub band: (f64, f64),
}

/// Empirical quantile by linear interpolation between order statistics:
/// rank `h = (m−1)p`, value `v[⌊h⌋] + (h−⌊h⌋)(v[⌊h⌋+1] − v[⌊h⌋])`. The
/// interpolated quantile is non-decreasing in `p`, so narrower bands nest
/// inside wider ones pointwise.
pub(crate) fn empirical_quantile(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of an empty sample");
    assert!((0.0..=1.0).contains(&p), "quantile level out of range");
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    if lo + 1 < sorted.len() {
        sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
    } else {
        sorted[lo]
    }
}

/// Per-region mean and 2.5%/97.5% bands of S, E, I, R and the lockdown
/// level at every grid node, over the batch's surviving paths.
pub fn summarize(paths: &PathBatch) -> Result<TrajectorySummary> {
    summarize_with_band(paths, 0.025, 0.975)
}

/// [`summarize`] with explicit quantile levels.
pub fn summarize_with_band(paths: &PathBatch, lower: f64, upper: f64) -> Result<TrajectorySummary> {
    if !(0.0..=1.0).contains(&lower) || !(0.0..=1.0).contains(&upper) || lower >= upper {
        return Err(Error::invalid(format!(
            "band levels ({lower}, {upper}) must satisfy 0 ≤ lower < upper ≤ 1"
        )));
    }
    let survivors = paths.surviving_paths();
    if survivors.len() < MIN_SUMMARY_PATHS {
        return Err(Error::invalid(format!(
            "{} surviving paths are too few for stable quantile bands (need ≥ {MIN_SUMMARY_PATHS})",
            survivors.len()
        )));
    }
    let n = paths.n_regions;
    let nodes_count = paths.grid.steps() + 1;
    let mut regions = Vec::with_capacity(n);
    for j in 0..n {
        let series = |extract: &dyn Fn(usize, usize) -> f64| -> SeriesBand {
            let mut band = SeriesBand {
                mean: Vec::with_capacity(nodes_count),
                lower: Vec::with_capacity(nodes_count),
                upper: Vec::with_capacity(nodes_count),
            };
            let mut sample = Vec::with_capacity(survivors.len());
            for k in 0..nodes_count {
                sample.clear();
                sample.extend(survivors.iter().map(|&b| extract(b, k)));
                let mu = sample.iter().sum::<f64>() / sample.len() as f64;
                sample.sort_by(|a, b| a.partial_cmp(b).expect("finite surviving paths"));
                band.mean.push(mu);
                band.lower.push(empirical_quantile(&sample, lower));
                band.upper.push(empirical_quantile(&sample, upper));
            }
            band
        };
        let s_idx = crate::model::layout::s(n, j);
        let e_idx = crate::model::layout::e(n, j);
        let i_idx = crate::model::layout::i(n, j);
        regions.push(RegionSummary {
            susceptible: series(&|b, k| paths.states[[b, k, s_idx]]),
            exposed: series(&|b, k| paths.states[[b, k, e_idx]]),
            infectious: series(&|b, k| paths.states[[b, k, i_idx]]),
            recovered: series(&|b, k| paths.recovered[[b, k, j]]),
            lockdown: series(&|b, k| paths.lockdown[[b, k, j]]),
        });
    }
    Ok(TrajectorySummary {
        nodes: paths.grid.nodes(),
        regions,
        paths_used: survivors.len(),
        band: (lower, upper),
    })
}

impl TrajectorySummary {
    /// CSV with the same identifying columns as the per-path export
    /// (`t,region,S,E,I,R,ell` carrying the means) plus per-variable
    /// quantile columns.
    pub fn write_csv<W: std::io::Write>(&self, digest: &str, mut sink: W) -> Result<()> {
        if !digest.is_empty() {
            writeln!(sink, "# config_digest: {digest}")?;
        }
        writeln!(
            sink,
            "t,region,S,E,I,R,ell,S_lo,S_hi,E_lo,E_hi,I_lo,I_hi,R_lo,R_hi,ell_lo,ell_hi"
        )?;
        for (j, region) in self.regions.iter().enumerate() {
            for (k, t) in self.nodes.iter().enumerate() {
                writeln!(
                    sink,
                    "{t},{j},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                    region.susceptible.mean[k],
                    region.exposed.mean[k],
                    region.infectious.mean[k],
                    region.recovered.mean[k],
                    region.lockdown.mean[k],
                    region.susceptible.lower[k],
                    region.susceptible.upper[k],
                    region.exposed.lower[k],
                    region.exposed.upper[k],
                    region.infectious.lower[k],
                    region.infectious.upper[k],
                    region.recovered.lower[k],
                    region.recovered.upper[k],
                    region.lockdown.lower[k],
                    region.lockdown.upper[k],
                )?;
            }
        }
        Ok(())
    }
}

/// Outcome classes of a simulated profile.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeLabel {
    Controlled,
    OutOfControl,
}

impl fmt::Display for OutcomeLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OutcomeLabel::Controlled => write!(f, "controlled"),
            OutcomeLabel::OutOfControl => write!(f, "out_of_control"),
        }
    }
}

/// Classification record: the label plus the evidence it was derived from.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EquilibriumLabel {
    pub label: OutcomeLabel,
    /// Mean terminal susceptible fraction per region.
    pub terminal_susceptible: Vec<f64>,
    /// Mean initial susceptible fraction per region.
    pub initial_susceptible: Vec<f64>,
    pub threshold: f64,
}

/// Controlled iff the mean terminal susceptible fraction stays at or above
/// `threshold ×` its initial value in *every* region; one collapsed region
/// marks the whole outcome out of control.
pub fn classify(paths: &PathBatch, threshold: f64) -> Result<EquilibriumLabel> {
    if !(0.0..=1.0).contains(&threshold) || !threshold.is_finite() {
        return Err(Error::invalid(format!(
            "classification threshold {threshold} must lie in [0, 1]"
        )));
    }
    let survivors = paths.surviving_paths();
    if survivors.is_empty() {
        return Err(Error::invalid("no surviving paths to classify"));
    }
    let n = paths.n_regions;
    let last = paths.grid.steps();
    let m = survivors.len() as f64;
    let mut terminal = vec![0.0; n];
    let mut initial = vec![0.0; n];
    for j in 0..n {
        let s_idx = crate::model::layout::s(n, j);
        terminal[j] = survivors.iter().map(|&b| paths.states[[b, last, s_idx]]).sum::<f64>() / m;
        initial[j] = survivors.iter().map(|&b| paths.states[[b, 0, s_idx]]).sum::<f64>() / m;
    }
    let controlled = (0..n).all(|j| terminal[j] >= threshold * initial[j]);
    Ok(EquilibriumLabel {
        label: if controlled { OutcomeLabel::Controlled } else { OutcomeLabel::OutOfControl },
        terminal_susceptible: terminal,
        initial_susceptible: initial,
        threshold,
    })
}
