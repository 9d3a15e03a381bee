//! Stagewise fictitious-play training of the coupled value/policy networks.
//!
//! Each stage freezes every player's policy network and solves, per player
//! `n`, the decoupled backward problem along reduced forward paths:
//!
//! ```text
//! X_{k+1} = X_k + μⁿ(t_k, X_k, ℓ⁻ⁿ(t_k, X_k)) Δt + Σ(X_k) ΔW_k,
//! Y_{k+1} = Y_k − gⁿ(t_k, X_k, Z_k) Δt + Z_kᵀ ΔW_k,   Y₀ = ψⁿ(0, x₀),
//! Z_k     = Σ(X_k)ᵀ ∇ₓψⁿ(t_k, X_k),
//! ```
//!
//! minimizing `E[|Y_{N_T}|² + τ Σ_k (α_k − α̃_k)² Δt]` over the value net ψⁿ
//! and policy net ξⁿ, where `α_k` is the closed-form lockdown minimizer at
//! `Z_k` and `α̃_k = ξⁿ(t_k, X_k)` distills it into a standalone network.
//! Stage `m+1` then replaces the frozen snapshot with the freshly trained
//! policies. Only the latest networks are retained — `2N` in total at any
//! stage count — and each player's sub-problem is independent within a
//! stage, so players train in parallel.
//!
//! Costs are measured in dollars and would dwarf any O(1) network output;
//! training therefore runs on per-player rescaled cost parameters (the best
//! response is invariant under common scaling of the gradient and the cost),
//! and the scale is recorded so checkpoints and reports can undo it.
//!
//! Two implementations of the stage objective exist on purpose: a
//! reverse-mode tape (training; exact second-order parameter gradients
//! through `Z`) and a plain numeric rollout built on the closed-form driver
//! (validation). They must agree to rounding, which the test suite enforces.

use std::path::PathBuf;
use std::time::Instant;

use ndarray::{Array1, Array2, Array3, ArrayView1, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hamiltonian::{self, GradientView, EPS_DEGENERATE};
use crate::model::{layout, ModelParams};
use crate::neural::checkpoint::{Checkpoint, NetRecord, OptRecord, PlayerRecord, CHECKPOINT_VERSION};
use crate::neural::{BoundNet, Head, MlpGradients, MlpParams, OptimizerState, Tape, Var};
use crate::rng::{stream_rng, StreamKey, StreamPurpose};
use crate::sim::{self, PathBatch, PolicyMap, TimeGrid};

/// Loss-explosion factor: a step loss above `10³ × stage-initial` triggers
/// the learning-rate guard.
const DIVERGENCE_FACTOR: f64 = 1e3;
/// Floor for the stage-initial loss in the guard threshold, so near-zero
/// initial losses don't turn rounding noise into spurious triggers.
const DIVERGENCE_FLOOR: f64 = 1e-9;
/// Consecutive divergent stages per player before the run aborts.
const MAX_DIVERGENT_STAGES: usize = 3;
/// Denominator floor in the relative-change convergence metric.
const METRIC_FLOOR: f64 = 1e-8;

/// Hyperparameters and bookkeeping knobs for a training run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Fictitious-play stages (M).
    pub stages: usize,
    /// Optimizer steps per stage per player.
    pub sgd_steps_per_stage: usize,
    /// Sample paths per optimizer step.
    pub batch_size: usize,
    /// Euler steps of the time grid.
    pub time_steps: usize,
    pub learning_rate: f64,
    /// Policy-matching weight τ (per day).
    pub policy_weight: f64,
    /// Early-stop threshold ε on the stage-to-stage relative change of the
    /// networks; `0` disables early stopping.
    pub convergence_threshold: f64,
    pub seed: u64,
    /// Held-out paths per player for the per-stage validation loss.
    pub validation_paths: usize,
    /// Probe points for the convergence metric.
    pub probe_points: usize,
    /// Hidden-layer widths of every network.
    pub hidden_widths: Vec<usize>,
    /// Per-player cost normalization override; `None` derives it from the
    /// cost parameters.
    pub cost_scale: Option<Vec<f64>>,
    /// Write a checkpoint every this many stages.
    pub checkpoint_every: Option<usize>,
    pub checkpoint_dir: Option<PathBuf>,
    /// Train the players of a stage on parallel workers. Per-player
    /// arithmetic is unaffected, so results are identical either way.
    pub parallel_players: bool,
    /// Digest of the resolved scenario configuration, embedded in
    /// checkpoints and diagnostics.
    pub config_digest: String,
}

impl SolverConfig {
    /// Case-study hyperparameters: lr 5·10⁻⁴, M = 250, 100 optimizer steps
    /// per stage, batch 256, N_T = 40, τ = 10⁻³/180 per day.
    pub fn case_study_defaults() -> Self {
        SolverConfig {
            stages: 250,
            sgd_steps_per_stage: 100,
            batch_size: 256,
            time_steps: 40,
            learning_rate: 5e-4,
            policy_weight: 1e-3 / 180.0,
            convergence_threshold: 0.0,
            seed: 0,
            validation_paths: 256,
            probe_points: 512,
            hidden_widths: vec![40, 40, 40],
            cost_scale: None,
            checkpoint_every: None,
            checkpoint_dir: None,
            parallel_players: true,
            config_digest: String::new(),
        }
    }

    pub fn validate(&self, n_players: usize) -> Result<()> {
        if self.stages == 0
            || self.sgd_steps_per_stage == 0
            || self.batch_size == 0
            || self.time_steps == 0
            || self.validation_paths == 0
            || self.probe_points == 0
        {
            return Err(Error::Config("all solver counts must be positive".into()));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!(
                "learning rate must be positive and finite, got {}",
                self.learning_rate
            )));
        }
        if !(self.policy_weight >= 0.0) || !self.policy_weight.is_finite() {
            return Err(Error::Config(format!(
                "policy-matching weight must be non-negative, got {}",
                self.policy_weight
            )));
        }
        if !(self.convergence_threshold >= 0.0) {
            return Err(Error::Config("convergence threshold must be non-negative".into()));
        }
        if self.hidden_widths.is_empty() || self.hidden_widths.iter().any(|w| *w == 0) {
            return Err(Error::Config("hidden widths must be positive".into()));
        }
        if let Some(scales) = &self.cost_scale {
            if scales.len() != n_players {
                return Err(Error::Config(format!(
                    "cost_scale has {} entries for {n_players} players",
                    scales.len()
                )));
            }
            if scales.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
                return Err(Error::Config("cost_scale entries must be positive and finite".into()));
            }
        }
        // Training stream ids pack (stage, sgd step) into one lane; keep the
        // product inside it.
        let epochs = (self.stages as u64 + 1) * (self.sgd_steps_per_stage as u64 + 1);
        if epochs >= (1 << 24) {
            return Err(Error::Config(
                "stages × sgd_steps_per_stage exceeds the RNG stream epoch lane".into(),
            ));
        }
        Ok(())
    }
}

/// One player's trainable state.
#[derive(Debug, Clone)]
pub struct PlayerState {
    pub value_net: MlpParams,
    pub policy_net: MlpParams,
    pub value_opt: OptimizerState,
    pub policy_opt: OptimizerState,
}

/// Mutable training state across stages: the per-player networks (exactly
/// two per player, never an archive), per-stage loss histories, and the
/// convergence-metric history.
#[derive(Debug, Clone)]
pub struct StageState {
    /// Stages completed so far.
    pub stage: usize,
    pub players: Vec<PlayerState>,
    /// `loss_history[s][n]` holds player `n`'s per-step training losses in
    /// the s-th completed stage of this run.
    pub loss_history: Vec<Vec<Vec<f64>>>,
    /// Stage-level convergence metric after each completed stage.
    pub convergence_history: Vec<f64>,
}

impl StageState {
    /// Total retained networks — the O(1)-memory contract says this is `2N`
    /// no matter how many stages have run.
    pub fn network_count(&self) -> usize {
        self.players.len() * 2
    }
}

/// The trained joint lockdown policy: one logistic-head network per player,
/// evaluated as `ℓⁿ(t, x) = ξⁿ(t/T, x)`, plus run provenance.
#[derive(Debug, Clone)]
pub struct PolicyProfile {
    nets: Vec<MlpParams>,
    horizon: f64,
    pub stage: usize,
    pub config_digest: String,
    pub seed: u64,
}

impl PolicyProfile {
    pub fn new(
        nets: Vec<MlpParams>,
        horizon: f64,
        stage: usize,
        config_digest: String,
        seed: u64,
    ) -> Result<Self> {
        if nets.is_empty() {
            return Err(Error::invalid("a policy profile needs at least one network"));
        }
        let input_dim = nets[0].input_dim();
        for (n, net) in nets.iter().enumerate() {
            if net.head() != Head::Logistic {
                return Err(Error::invalid(format!(
                    "policy network {n} must have a logistic head"
                )));
            }
            if net.input_dim() != input_dim || net.output_dim() != 1 {
                return Err(Error::DimensionMismatch(format!(
                    "policy network {n} has dims {:?}, expected input {input_dim} and scalar output",
                    net.dims()
                )));
            }
            net.validate()?;
        }
        if !(horizon > 0.0) {
            return Err(Error::invalid("policy profile horizon must be positive"));
        }
        Ok(PolicyProfile { nets, horizon, stage, config_digest, seed })
    }

    pub fn n_players(&self) -> usize {
        self.nets.len()
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn nets(&self) -> &[MlpParams] {
        &self.nets
    }

    /// Scalar convenience: all players' lockdown levels at one state.
    pub fn lockdown_at(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        let mut input = Vec::with_capacity(1 + x.len());
        input.push(t / self.horizon);
        input.extend_from_slice(x);
        self.nets.iter().map(|net| net.forward(&input)).collect()
    }
}

impl PolicyMap for PolicyProfile {
    fn lockdown_batch(
        &self,
        t: f64,
        states: ndarray::ArrayView2<f64>,
        mut out: ndarray::ArrayViewMut2<f64>,
    ) {
        let b = states.nrows();
        let mut input = Array2::zeros((b, 1 + states.ncols()));
        input.column_mut(0).fill(t / self.horizon);
        input.slice_mut(ndarray::s![.., 1..]).assign(&states);
        for (n, net) in self.nets.iter().enumerate() {
            let levels = net.forward_batch(input.view());
            out.column_mut(n).assign(&levels.column(0));
        }
    }
}

/// Numeric rollout of one player's backward recursion along precomputed
/// forward paths.
#[derive(Debug, Clone)]
pub struct RolloutPaths {
    /// `B × (N_T + 1)` value-process path.
    pub y: Array2<f64>,
    /// `B × N_T × 2N` diffusion-weighted gradients.
    pub z: Array3<f64>,
    /// Closed-form minimizer at each step, `B × N_T`, values in `[0, 1]`.
    pub alpha: Array2<f64>,
    /// Policy-network output at each step, `B × N_T`, values in `(0, 1)`.
    pub alpha_tilde: Array2<f64>,
    /// False when any `Y` or `Z` entry became non-finite.
    pub all_finite: bool,
}

impl RolloutPaths {
    pub fn terminal(&self) -> ArrayView1<'_, f64> {
        self.y.column(self.y.ncols() - 1)
    }
}

/// Backward recursion for player `n` along `batch`'s forward paths, with
/// `Z` from the value net's input gradient and the driver from the
/// closed-form best response. The batch must come from the reduced forward
/// dynamics with the frozen policies recorded in `batch.lockdown`.
pub fn rollout(
    n: usize,
    value_net: &MlpParams,
    policy_net: &MlpParams,
    batch: &PathBatch,
    params: &ModelParams,
) -> Result<RolloutPaths> {
    let regions = params.n_regions();
    let b = batch.batch_size();
    let steps = batch.grid.steps();
    let dt = batch.grid.dt();
    let horizon = batch.grid.horizon();
    if value_net.input_dim() != 1 + 3 * regions || policy_net.input_dim() != 1 + 3 * regions {
        return Err(Error::DimensionMismatch(format!(
            "networks expect input width {}, model needs {}",
            value_net.input_dim(),
            1 + 3 * regions
        )));
    }

    let mut y = Array2::zeros((b, steps + 1));
    let mut z = Array3::zeros((b, steps, 2 * regions));
    let mut alpha = Array2::zeros((b, steps));
    let mut alpha_tilde = Array2::zeros((b, steps));
    let mut all_finite = true;

    let mut input = Array2::zeros((b, 1 + 3 * regions));
    for k in 0..=steps {
        let t_k = batch.grid.node(k);
        input.column_mut(0).fill(t_k / horizon);
        input
            .slice_mut(ndarray::s![.., 1..])
            .assign(&batch.states.index_axis(Axis(1), k));
        if k == 0 {
            let y0 = value_net.forward_batch(input.view());
            y.column_mut(0).assign(&y0.column(0));
        }
        if k == steps {
            break;
        }
        let grads = value_net.input_gradient_batch(input.view());
        let tilde = policy_net.forward_batch(input.view());
        for path in 0..b {
            let x_row = batch.states.index_axis(Axis(1), k);
            let x = x_row.row(path);
            let x = x.as_slice().expect("standard layout");
            let grad_row = grads.row(path);
            let view = GradientView::from_full(grad_row.as_slice().expect("layout"), x, params);
            let ell_row = batch.lockdown.index_axis(Axis(1), k);
            let others = ell_row.row(path);
            let others = others.as_slice().expect("layout");
            let zz = view.z();
            for d in 0..2 * regions {
                z[[path, k, d]] = zz[d];
            }
            let a = hamiltonian::best_response(n, t_k, x, &view, others, params);
            alpha[[path, k]] = a;
            alpha_tilde[[path, k]] = tilde[[path, 0]];
            let g = hamiltonian::bsde_driver(n, t_k, x, zz, others, params)?;
            let mut zdw = 0.0;
            for d in 0..2 * regions {
                zdw += zz[d] * batch.increments[[path, k, d]];
            }
            let next = y[[path, k]] - g * dt + zdw;
            y[[path, k + 1]] = next;
            all_finite &= next.is_finite() && zz.iter().all(|v| v.is_finite());
        }
    }
    Ok(RolloutPaths { y, z, alpha, alpha_tilde, all_finite })
}

/// The stage objective on a rollout: mean squared terminal value plus the
/// τ-weighted policy-matching quadrature,
/// `mean_b |Y_{N_T}|² + τ Δt mean_b Σ_k (α_k − α̃_k)²`.
/// With `τ = 0` this is exactly the plain terminal loss.
pub fn stage_loss(paths: &RolloutPaths, policy_weight: f64, dt: f64) -> f64 {
    let b = paths.y.nrows() as f64;
    let terminal: f64 = paths.terminal().iter().map(|v| v * v).sum::<f64>() / b;
    if policy_weight == 0.0 {
        return terminal;
    }
    let mismatch: f64 = paths
        .alpha
        .iter()
        .zip(paths.alpha_tilde.iter())
        .map(|(a, t)| (a - t) * (a - t))
        .sum::<f64>()
        / b;
    terminal + policy_weight * dt * mismatch
}

/// Relative L² change of per-player network outputs over a probe set:
/// `max_n max(‖ψ_new − ψ_prev‖ / max(‖ψ_prev‖, 10⁻⁸), same for ξ)`.
/// The denominator is always the *previous* stage's outputs, floored at
/// 10⁻⁸ so untrained all-zero nets cannot divide by zero.
pub fn convergence_metric(
    prev: &[(Array1<f64>, Array1<f64>)],
    new: &[(Array1<f64>, Array1<f64>)],
) -> f64 {
    assert_eq!(prev.len(), new.len(), "player counts must match");
    let mut worst = 0.0f64;
    for ((pv, pp), (nv, np)) in prev.iter().zip(new) {
        worst = worst.max(relative_l2_change(pv, nv));
        worst = worst.max(relative_l2_change(pp, np));
    }
    worst
}

fn relative_l2_change(prev: &Array1<f64>, new: &Array1<f64>) -> f64 {
    let diff = (new - prev).mapv(|v| v * v).sum().sqrt();
    let base = prev.mapv(|v| v * v).sum().sqrt();
    diff / base.max(METRIC_FLOOR)
}

/// Incidents worth surfacing from a run, in occurrence order.
#[derive(Debug, Clone, PartialEq)]
pub enum SolverEvent {
    LearningRateHalved { stage: usize, player: usize, step: usize, loss: f64 },
    NonFiniteLoss { stage: usize, player: usize, step: usize },
    PathFailures { stage: usize, player: usize, step: usize, count: usize },
    DivergentStage { stage: usize, player: usize, initial_loss: f64, final_loss: f64 },
    EarlyStop { stage: usize, metric: f64 },
    Abort { stage: usize, player: usize },
}

impl std::fmt::Display for SolverEvent {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SolverEvent::LearningRateHalved { stage, player, step, loss } => write!(
                f,
                "stage {stage} player {player} step {step}: loss {loss:.3e} exceeded the divergence guard; learning rate halved"
            ),
            SolverEvent::NonFiniteLoss { stage, player, step } => write!(
                f,
                "stage {stage} player {player} step {step}: non-finite loss, optimizer step skipped"
            ),
            SolverEvent::PathFailures { stage, player, step, count } => write!(
                f,
                "stage {stage} player {player} step {step}: {count} forward paths went non-finite, optimizer step skipped"
            ),
            SolverEvent::DivergentStage { stage, player, initial_loss, final_loss } => write!(
                f,
                "stage {stage} player {player}: ended divergent (loss {initial_loss:.3e} → {final_loss:.3e})"
            ),
            SolverEvent::EarlyStop { stage, metric } => {
                write!(f, "stage {stage}: converged (relative change {metric:.3e})")
            }
            SolverEvent::Abort { stage, player } => write!(
                f,
                "stage {stage}: aborting — player {player} diverged for {MAX_DIVERGENT_STAGES} consecutive stages"
            ),
        }
    }
}

/// One diagnostics row per stage and player.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageRow {
    pub stage: usize,
    pub player: usize,
    pub train_loss_mean: f64,
    pub validation_loss: f64,
    /// This player's relative network change over the probe set; the stage
    /// metric is the max across players.
    pub convergence_metric: f64,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, Default)]
pub struct Diagnostics {
    pub rows: Vec<StageRow>,
    pub events: Vec<SolverEvent>,
}

impl Diagnostics {
    /// CSV with one row per (stage, player); the digest comment line ties
    /// the file to its configuration. Wall-clock timings stay out of the
    /// file so that two runs with the same seed produce byte-identical
    /// diagnostics; callers that need timings read `rows` directly.
    pub fn write_csv<W: std::io::Write>(&self, digest: &str, mut sink: W) -> Result<()> {
        if !digest.is_empty() {
            writeln!(sink, "# config_digest: {digest}")?;
        }
        writeln!(
            sink,
            "stage,player,train_loss_mean,validation_loss,convergence_metric"
        )?;
        for r in &self.rows {
            writeln!(
                sink,
                "{},{},{},{},{}",
                r.stage, r.player, r.train_loss_mean, r.validation_loss, r.convergence_metric
            )?;
        }
        Ok(())
    }
}

/// How a run ended.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Termination {
    /// All configured stages ran.
    Completed,
    /// The convergence metric dropped below the threshold.
    EarlyStopped { stage: usize },
    /// A player stayed divergent for too many consecutive stages.
    Aborted { stage: usize, player: usize },
}

pub struct SolveOutcome {
    pub profile: PolicyProfile,
    pub state: StageState,
    pub diagnostics: Diagnostics,
    pub termination: Termination,
}

/// The training driver; see the module docs.
pub struct Solver {
    params: ModelParams,
    config: SolverConfig,
    x0: Vec<f64>,
    /// Per-player cost parameters divided by `scales[n]`.
    scaled: Vec<ModelParams>,
    scales: Vec<f64>,
    grid: TimeGrid,
}

impl Solver {
    pub fn new(params: ModelParams, x0: Vec<f64>, config: SolverConfig) -> Result<Self> {
        params.validate()?;
        let n = params.n_regions();
        config.validate(n)?;
        if x0.len() != 3 * n {
            return Err(Error::DimensionMismatch(format!(
                "initial state has {} components, expected {}",
                x0.len(),
                3 * n
            )));
        }
        if x0.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("initial state must be finite"));
        }
        if params.epi.sigma_s.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::invalid(
                "training requires σ_s > 0 in every region (Z determines the gradient only through σ_s s)",
            ));
        }
        if params.epi.vaccination != 0.0 {
            return Err(Error::invalid(
                "the stage dynamics are derived for zero vaccination; set it to 0 to train (full-dynamics simulation supports it)",
            ));
        }
        let scales = match &config.cost_scale {
            Some(s) => s.clone(),
            None => (0..n).map(|p| default_cost_scale(&params, p)).collect(),
        };
        let scaled = scales
            .iter()
            .map(|scale| {
                let mut sp = params.clone();
                sp.cost.productivity /= scale;
                sp.cost.life_value /= scale;
                sp.cost.inpatient_cost /= scale;
                sp.cost.health_weight /= scale;
                sp
            })
            .collect();
        let grid = TimeGrid::new(params.cost.horizon, config.time_steps)?;
        Ok(Solver { params, config, x0, scaled, scales, grid })
    }

    pub fn config(&self) -> &SolverConfig {
        &self.config
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    /// The per-player cost normalization in effect.
    pub fn cost_scales(&self) -> &[f64] {
        &self.scales
    }

    /// Fresh networks: Glorot value nets and policy nets from per-player
    /// initialization streams.
    pub fn initial_state(&self) -> Result<StageState> {
        let n = self.params.n_regions();
        let mut dims = vec![1 + 3 * n];
        dims.extend_from_slice(&self.config.hidden_widths);
        dims.push(1);
        let mut players = Vec::with_capacity(n);
        for player in 0..n {
            let mut value_rng = stream_rng(
                self.config.seed,
                StreamKey::new(StreamPurpose::ParamInit, player, 0),
            );
            let mut policy_rng = stream_rng(
                self.config.seed,
                StreamKey::new(StreamPurpose::ParamInit, player, 1),
            );
            let value_net = MlpParams::glorot(&dims, Head::Identity, &mut value_rng)?;
            let policy_net = MlpParams::glorot(&dims, Head::Logistic, &mut policy_rng)?;
            let value_opt = OptimizerState::new(&value_net, self.config.learning_rate);
            let policy_opt = OptimizerState::new(&policy_net, self.config.learning_rate);
            players.push(PlayerState { value_net, policy_net, value_opt, policy_opt });
        }
        Ok(StageState { stage: 0, players, loss_history: Vec::new(), convergence_history: Vec::new() })
    }

    /// All-zero networks: the value nets then output exactly 0 and the
    /// policy nets exactly ½. On a zero-cost model `V ≡ 0` solves the
    /// problem and the zero value net is a bitwise fixed point of training,
    /// which makes this the right start for degenerate oracle runs.
    pub fn zero_state(&self) -> Result<StageState> {
        let n = self.params.n_regions();
        let mut dims = vec![1 + 3 * n];
        dims.extend_from_slice(&self.config.hidden_widths);
        dims.push(1);
        let mut players = Vec::with_capacity(n);
        for _ in 0..n {
            let value_net = MlpParams::new_zero(&dims, Head::Identity)?;
            let policy_net = MlpParams::new_zero(&dims, Head::Logistic)?;
            let value_opt = OptimizerState::new(&value_net, self.config.learning_rate);
            let policy_opt = OptimizerState::new(&policy_net, self.config.learning_rate);
            players.push(PlayerState { value_net, policy_net, value_opt, policy_opt });
        }
        Ok(StageState { stage: 0, players, loss_history: Vec::new(), convergence_history: Vec::new() })
    }

    /// Train from fresh networks.
    pub fn run(&self) -> Result<SolveOutcome> {
        let state = self.initial_state()?;
        self.run_from(state)
    }

    /// Continue training from a previous state (resume support). Stage
    /// numbering continues from `state.stage`; the configured stage count
    /// is the total target, so a state at stage ≥ `config.stages` returns
    /// immediately.
    pub fn run_from(&self, mut state: StageState) -> Result<SolveOutcome> {
        let n = self.params.n_regions();
        if state.players.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "resume state has {} players, model has {n}",
                state.players.len()
            )));
        }
        let mut diagnostics = Diagnostics::default();
        let probe = self.probe_inputs();
        let mut prev_outputs = self.probe_outputs(&state, &probe);
        let mut divergence_streak = vec![0usize; n];
        let mut termination = Termination::Completed;

        while state.stage < self.config.stages {
            let stage = state.stage;
            let snapshot = PolicyProfile::new(
                state.players.iter().map(|p| p.policy_net.clone()).collect(),
                self.grid.horizon(),
                stage,
                self.config.config_digest.clone(),
                self.config.seed,
            )?;

            let train_one = |(player, ps): (usize, &PlayerState)| -> Result<TrainedPlayer> {
                self.train_stage_player(player, stage, ps.clone(), &snapshot)
            };
            let results: Vec<TrainedPlayer> = if self.config.parallel_players {
                let collected: Result<Vec<_>> = state
                    .players
                    .par_iter()
                    .enumerate()
                    .map(train_one)
                    .collect();
                collected?
            } else {
                let collected: Result<Vec<_>> =
                    state.players.iter().enumerate().map(train_one).collect();
                collected?
            };

            let mut stage_losses = Vec::with_capacity(n);
            let mut stage_divergent = vec![false; n];
            for (player, trained) in results.into_iter().enumerate() {
                stage_losses.push(trained.step_losses.clone());
                stage_divergent[player] = trained.divergent;
                diagnostics.events.extend(trained.events);
                diagnostics.rows.push(StageRow {
                    stage,
                    player,
                    train_loss_mean: mean(&trained.step_losses),
                    validation_loss: trained.validation_loss,
                    convergence_metric: f64::NAN, // filled below
                    wall_time_s: trained.wall_time_s,
                });
                state.players[player] = trained.state;
            }
            state.loss_history.push(stage_losses);

            let new_outputs = self.probe_outputs(&state, &probe);
            let mut stage_metric = 0.0f64;
            for player in 0..n {
                let change = convergence_metric(
                    std::slice::from_ref(&prev_outputs[player]),
                    std::slice::from_ref(&new_outputs[player]),
                );
                stage_metric = stage_metric.max(change);
                let row = diagnostics
                    .rows
                    .iter_mut()
                    .rev()
                    .find(|r| r.stage == stage && r.player == player)
                    .expect("row just pushed");
                row.convergence_metric = change;
            }
            prev_outputs = new_outputs;
            state.convergence_history.push(stage_metric);
            state.stage += 1;

            for player in 0..n {
                if stage_divergent[player] {
                    divergence_streak[player] += 1;
                } else {
                    divergence_streak[player] = 0;
                }
            }

            if let (Some(every), Some(dir)) = (self.config.checkpoint_every, &self.config.checkpoint_dir) {
                if every > 0 && state.stage % every == 0 {
                    let path = dir.join(format!("stage_{:05}.ckpt.json", state.stage));
                    self.to_checkpoint(&state).save(&path)?;
                }
            }

            if let Some(player) = divergence_streak.iter().position(|s| *s >= MAX_DIVERGENT_STAGES) {
                diagnostics.events.push(SolverEvent::Abort { stage, player });
                termination = Termination::Aborted { stage, player };
                break;
            }
            if self.config.convergence_threshold > 0.0
                && stage_metric < self.config.convergence_threshold
            {
                diagnostics.events.push(SolverEvent::EarlyStop { stage, metric: stage_metric });
                termination = Termination::EarlyStopped { stage };
                break;
            }
        }

        let profile = PolicyProfile::new(
            state.players.iter().map(|p| p.policy_net.clone()).collect(),
            self.grid.horizon(),
            state.stage,
            self.config.config_digest.clone(),
            self.config.seed,
        )?;
        Ok(SolveOutcome { profile, state, diagnostics, termination })
    }

    /// Serialize training state in the checkpoint format.
    pub fn to_checkpoint(&self, state: &StageState) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            config_digest: self.config.config_digest.clone(),
            stage: state.stage,
            cost_scale: self.scales.clone(),
            players: state
                .players
                .iter()
                .map(|p| PlayerRecord {
                    value_net: NetRecord::from_params(&p.value_net),
                    policy_net: NetRecord::from_params(&p.policy_net),
                    value_opt: OptRecord::from_state(&p.value_opt),
                    policy_opt: OptRecord::from_state(&p.policy_opt),
                })
                .collect(),
        }
    }

    /// Rebuild training state from a checkpoint (inverse of
    /// [`Solver::to_checkpoint`], modulo loss histories, which restart).
    pub fn from_checkpoint(&self, ckpt: &Checkpoint) -> Result<StageState> {
        if ckpt.players.len() != self.params.n_regions() {
            return Err(Error::ArtifactMismatch(format!(
                "checkpoint has {} players, model has {}",
                ckpt.players.len(),
                self.params.n_regions()
            )));
        }
        if ckpt.cost_scale != self.scales {
            return Err(Error::ArtifactMismatch(
                "checkpoint cost normalization differs from the current configuration".into(),
            ));
        }
        let players = ckpt
            .players
            .iter()
            .map(|rec| {
                let value_net = rec.value_net.to_params()?;
                let policy_net = rec.policy_net.to_params()?;
                let value_opt = rec.value_opt.to_state(&value_net)?;
                let policy_opt = rec.policy_opt.to_state(&policy_net)?;
                Ok(PlayerState { value_net, policy_net, value_opt, policy_opt })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(StageState {
            stage: ckpt.stage,
            players,
            loss_history: Vec::new(),
            convergence_history: Vec::new(),
        })
    }

    /// Evaluate the scaled value of player `n`'s value net at `(t, x)` —
    /// multiply by `cost_scales()[n]` for dollars.
    pub fn value_at(&self, state: &StageState, n: usize, t: f64, x: &[f64]) -> Result<f64> {
        let mut input = Vec::with_capacity(1 + x.len());
        input.push(t / self.grid.horizon());
        input.extend_from_slice(x);
        state.players[n].value_net.forward(&input)
    }

    // ---- internals ----

    fn probe_inputs(&self) -> Array2<f64> {
        let n = self.params.n_regions();
        let mut rng = stream_rng(self.config.seed, StreamKey::new(StreamPurpose::Probe, 0, 0));
        let mut probe = Array2::zeros((self.config.probe_points, 1 + 3 * n));
        for mut row in probe.rows_mut() {
            row[0] = rand::Rng::gen_range(&mut rng, 0.0..1.0);
            for j in 0..n {
                // Uniform on the per-region simplex slice s+e+i ≤ 1 by
                // rejection from the unit cube.
                loop {
                    let s: f64 = rand::Rng::gen_range(&mut rng, 0.0..1.0);
                    let e: f64 = rand::Rng::gen_range(&mut rng, 0.0..1.0);
                    let i: f64 = rand::Rng::gen_range(&mut rng, 0.0..1.0);
                    if s + e + i <= 1.0 {
                        row[1 + layout::s(n, j)] = s;
                        row[1 + layout::e(n, j)] = e;
                        row[1 + layout::i(n, j)] = i;
                        break;
                    }
                }
            }
        }
        probe
    }

    fn probe_outputs(&self, state: &StageState, probe: &Array2<f64>) -> Vec<(Array1<f64>, Array1<f64>)> {
        state
            .players
            .iter()
            .map(|p| {
                let v = p.value_net.forward_batch(probe.view()).column(0).to_owned();
                let a = p.policy_net.forward_batch(probe.view()).column(0).to_owned();
                (v, a)
            })
            .collect()
    }

    fn train_stage_player(
        &self,
        player: usize,
        stage: usize,
        mut ps: PlayerState,
        snapshot: &PolicyProfile,
    ) -> Result<TrainedPlayer> {
        let start = Instant::now();
        let sp = &self.scaled[player];
        let mut events = Vec::new();
        let mut step_losses = Vec::with_capacity(self.config.sgd_steps_per_stage);
        // The guard resets each stage: a halved rate applies to the
        // remainder of the stage only.
        ps.value_opt.set_learning_rate(self.config.learning_rate);
        ps.policy_opt.set_learning_rate(self.config.learning_rate);
        let mut initial_loss = None;
        let mut guard_active = false;

        for step in 0..self.config.sgd_steps_per_stage {
            let key = StreamKey::new(
                StreamPurpose::Training,
                player,
                self.training_epoch(stage, step),
            );
            let batch = sim::simulate_reduced(
                player,
                sp,
                snapshot,
                self.grid,
                self.config.batch_size,
                self.config.seed,
                key,
                &self.x0,
            )?;
            if !batch.failures.is_empty() {
                events.push(SolverEvent::PathFailures {
                    stage,
                    player,
                    step,
                    count: batch.failures.len(),
                });
                step_losses.push(f64::NAN);
                continue;
            }
            let (loss, value_grads, policy_grads) =
                self.tape_stage_loss(player, &ps.value_net, &ps.policy_net, &batch, sp);
            step_losses.push(loss);
            let threshold = DIVERGENCE_FACTOR * initial_loss.unwrap_or(loss).max(DIVERGENCE_FLOOR);
            if initial_loss.is_none() {
                initial_loss = Some(loss);
            }
            if !loss.is_finite() || !value_grads.is_finite() || !policy_grads.is_finite() {
                events.push(SolverEvent::NonFiniteLoss { stage, player, step });
                if !guard_active {
                    guard_active = true;
                    halve_rates(&mut ps);
                    events.push(SolverEvent::LearningRateHalved { stage, player, step, loss });
                }
                continue;
            }
            if loss > threshold && !guard_active {
                guard_active = true;
                halve_rates(&mut ps);
                events.push(SolverEvent::LearningRateHalved { stage, player, step, loss });
            }
            ps.value_opt.step(&mut ps.value_net, &value_grads);
            ps.policy_opt.step(&mut ps.policy_net, &policy_grads);
        }

        // Validation on held-out draws via the numeric rollout route.
        let val_key = StreamKey::new(StreamPurpose::Validation, player, stage);
        let val_batch = sim::simulate_reduced(
            player,
            sp,
            snapshot,
            self.grid,
            self.config.validation_paths,
            self.config.seed,
            val_key,
            &self.x0,
        )?;
        let val_paths = rollout(player, &ps.value_net, &ps.policy_net, &val_batch, sp)?;
        let validation_loss = stage_loss(&val_paths, self.config.policy_weight, self.grid.dt());

        // A stage counts as divergent when it *ends* above the guard
        // threshold (or never produced a finite loss).
        let initial = initial_loss.unwrap_or(f64::NAN);
        let last_finite = step_losses.iter().rev().find(|l| l.is_finite()).copied();
        let divergent = match last_finite {
            Some(last) => {
                initial.is_finite() && last > DIVERGENCE_FACTOR * initial.max(DIVERGENCE_FLOOR)
            }
            None => true,
        };
        if divergent {
            events.push(SolverEvent::DivergentStage {
                stage,
                player,
                initial_loss: initial,
                final_loss: last_finite.unwrap_or(f64::NAN),
            });
        }

        Ok(TrainedPlayer {
            state: ps,
            step_losses,
            validation_loss,
            events,
            divergent,
            wall_time_s: start.elapsed().as_secs_f64(),
        })
    }

    /// Training streams pack (stage, optimizer step) into the stream id's
    /// epoch lane so every step draws fresh, reproducible increments.
    fn training_epoch(&self, stage: usize, step: usize) -> usize {
        stage * (self.config.sgd_steps_per_stage + 1) + step
    }

    /// Build the stage objective as a differentiation graph and return
    /// `(loss, ∂loss/∂value-net, ∂loss/∂policy-net)`; see the module docs
    /// for the recursion. Exact up to rounding — the numeric twin
    /// ([`rollout`] + [`stage_loss`]) must reproduce the same loss.
    fn tape_stage_loss(
        &self,
        n: usize,
        value_net: &MlpParams,
        policy_net: &MlpParams,
        batch: &PathBatch,
        sp: &ModelParams,
    ) -> (f64, MlpGradients, MlpGradients) {
        let regions = sp.n_regions();
        let b = batch.batch_size();
        let steps = batch.grid.steps();
        let dt = batch.grid.dt();
        let horizon = batch.grid.horizon();
        let theta = sp.epi.theta;
        let beta = &sp.epi.beta_matrix;

        let mut tape = Tape::new();
        let value = BoundNet::bind(&mut tape, value_net);
        let policy = BoundNet::bind(&mut tape, policy_net);

        let mut y: Option<Var> = None;
        let mut policy_mismatch: Option<Var> = None;

        for k in 0..steps {
            let t_k = batch.grid.node(k);
            let x_k = batch.states.index_axis(Axis(1), k);
            let mut input = Array2::zeros((b, 1 + 3 * regions));
            input.column_mut(0).fill(t_k / horizon);
            input.slice_mut(ndarray::s![.., 1..]).assign(&x_k);
            let input = tape.constant(input);

            let trace = value.forward(&mut tape, input);
            if k == 0 {
                y = Some(trace.output);
            }
            let full_grad = value.input_gradient(&mut tape, &trace);
            let gx = tape.slice_cols(full_grad, 1, 1 + 3 * regions);
            let g_s = tape.slice_cols(gx, 0, regions);
            let g_e = tape.slice_cols(gx, regions, 2 * regions);
            let g_i = tape.slice_cols(gx, 2 * regions, 3 * regions);

            // z = Σ(x)ᵀ∇ₓψ assembled from constant state columns.
            let mut sus_w = Array2::zeros((b, regions));
            let mut exp_w = Array2::zeros((b, regions));
            for j in 0..regions {
                for path in 0..b {
                    sus_w[[path, j]] = sp.epi.sigma_s[j] * x_k[[path, layout::s(regions, j)]];
                    exp_w[[path, j]] = sp.epi.sigma_e[j] * x_k[[path, layout::e(regions, j)]];
                }
            }
            let sus_w = tape.constant(sus_w);
            let exp_w = tape.constant(exp_w);
            let d_se = tape.sub(g_e, g_s);
            let d_ei = tape.sub(g_i, g_e);
            let z_s = tape.mul(sus_w, d_se);
            let z_e = tape.mul(exp_w, d_ei);
            let z = tape.concat(z_s, z_e);

            // Susceptible-channel products s_j·D_j = z_s[:, j] / σ_{s_j}.
            let mut sd = Vec::with_capacity(regions);
            for j in 0..regions {
                let col = tape.slice_cols(z_s, j, j + 1);
                sd.push(tape.affine(col, 1.0 / sp.epi.sigma_s[j], 0.0));
            }

            // a = βⁿⁿ iₙ (sD)ₙ and the frozen-opponent cross term.
            let i_col = |j: usize| -> Array2<f64> {
                let mut c = Array2::zeros((b, 1));
                for path in 0..b {
                    c[[path, 0]] = x_k[[path, layout::i(regions, j)]];
                }
                c
            };
            let i_n = i_col(n);
            let coeff_a = tape.constant(i_n.mapv(|v| beta[[n, n]] * v));
            let a_var = tape.mul(coeff_a, sd[n]);
            let mut cross: Option<Var> = None;
            for j in 0..regions {
                if j == n {
                    continue;
                }
                let mut own_coeff = Array2::zeros((b, 1));
                let mut peer_coeff = Array2::zeros((b, 1));
                for path in 0..b {
                    let factor = 1.0 - theta * batch.lockdown[[path, k, j]];
                    own_coeff[[path, 0]] = factor * beta[[j, n]] * x_k[[path, layout::i(regions, n)]];
                    peer_coeff[[path, 0]] =
                        factor * beta[[n, j]] * x_k[[path, layout::i(regions, j)]];
                }
                let own_coeff = tape.constant(own_coeff);
                let peer_coeff = tape.constant(peer_coeff);
                let t1 = tape.mul(own_coeff, sd[j]);
                let t2 = tape.mul(peer_coeff, sd[n]);
                let sum = tape.add(t1, t2);
                cross = Some(match cross {
                    Some(acc) => tape.add(acc, sum),
                    None => sum,
                });
            }

            // Wage and attention costs are state-only constants here.
            let discount = (-sp.cost.discount * t_k).exp();
            let pop = sp.regions.population(n);
            let mut wage = Array2::zeros((b, 1));
            let mut attention = Array2::zeros((b, 1));
            for path in 0..b {
                let alive = x_k[[path, layout::s(regions, n)]]
                    + x_k[[path, layout::e(regions, n)]]
                    + x_k[[path, layout::i(regions, n)]];
                wage[[path, 0]] = discount * pop * alive * sp.cost.productivity;
                let infected = x_k[[path, layout::i(regions, n)]];
                attention[[path, 0]] = discount
                    * pop
                    * sp.cost.attention
                    * (sp.epi.kappa * infected * sp.cost.life_value
                        + sp.cost.hospitalization_rate * infected * sp.cost.inpatient_cost);
            }
            let wage = tape.constant(wage);
            let attention = tape.constant(attention);

            // Quadratic coefficients of the Hamiltonian in ℓⁿ.
            let quad = tape.affine(a_var, theta * theta, 0.0);
            let two_a = tape.affine(a_var, 2.0, 0.0);
            let pressure = match cross {
                Some(c) => tape.add(two_a, c),
                None => two_a,
            };
            let scaled_pressure = tape.affine(pressure, theta, 0.0);
            let lin = tape.sub(wage, scaled_pressure);

            // Degenerate entries (2θAₙ ≤ ε or θ = 0) take the endpoint
            // branch; the mask and endpoint derive from eager values and the
            // endpoint is locally constant, so treating them as constants is
            // the exact gradient almost everywhere.
            let a_vals = tape.value(a_var).to_owned();
            let quad_vals = tape.value(quad).to_owned();
            let lin_vals = tape.value(lin).to_owned();
            let mut mask = Array2::zeros((b, 1));
            let mut endpoint = Array2::zeros((b, 1));
            for path in 0..b {
                let degenerate = theta <= 0.0 || 2.0 * theta * a_vals[[path, 0]] <= EPS_DEGENERATE;
                if degenerate {
                    mask[[path, 0]] = 1.0;
                    endpoint[[path, 0]] =
                        if quad_vals[[path, 0]] + lin_vals[[path, 0]] < 0.0 { 1.0 } else { 0.0 };
                }
            }
            let endpoint = tape.constant(endpoint);
            let ones = tape.constant(Array2::ones((b, 1)));
            let den = tape.affine(quad, 2.0, 0.0);
            let safe_den = tape.select(mask.clone(), ones, den);
            let neg_lin = tape.affine(lin, -1.0, 0.0);
            let ratio = tape.div(neg_lin, safe_den);
            let interior = tape.clamp01(ratio);
            let alpha = tape.select(mask, endpoint, interior);

            // Driver g = quad·α² + lin·α + attention, all in scaled units.
            let alpha_sq = tape.square(alpha);
            let qa = tape.mul(quad, alpha_sq);
            let la = tape.mul(lin, alpha);
            let ql = tape.add(qa, la);
            let g = tape.add(ql, attention);

            // Y_{k+1} = Y_k − g Δt + z·ΔW.
            let dw = batch.increments.index_axis(Axis(1), k).to_owned();
            let dw = tape.constant(dw);
            let zdw_prod = tape.mul(z, dw);
            let zdw = tape.sum_rows(zdw_prod);
            let g_dt = tape.affine(g, dt, 0.0);
            let y_prev = y.expect("set at k = 0");
            let y_mid = tape.sub(y_prev, g_dt);
            y = Some(tape.add(y_mid, zdw));

            // Policy distillation: accumulate (α − α̃)² over steps.
            let policy_trace = policy.forward(&mut tape, input);
            let diff = tape.sub(alpha, policy_trace.output);
            let diff_sq = tape.square(diff);
            policy_mismatch = Some(match policy_mismatch {
                Some(acc) => tape.add(acc, diff_sq),
                None => diff_sq,
            });
        }

        let y_terminal = y.expect("at least one step");
        let y_sq = tape.square(y_terminal);
        let terminal_loss = tape.mean_all(y_sq);
        let mismatch = policy_mismatch.expect("at least one step");
        let mismatch_mean = tape.mean_all(mismatch);
        let policy_loss = tape.affine(mismatch_mean, self.config.policy_weight * dt, 0.0);
        let loss = tape.add(terminal_loss, policy_loss);
        let loss_value = tape.value(loss)[[0, 0]];
        tape.backward(loss);
        let value_grads = value.extract_grads(&tape);
        let policy_grads = policy.extract_grads(&tape);
        (loss_value, value_grads, policy_grads)
    }
}

struct TrainedPlayer {
    state: PlayerState,
    step_losses: Vec<f64>,
    validation_loss: f64,
    events: Vec<SolverEvent>,
    divergent: bool,
    wall_time_s: f64,
}

fn halve_rates(ps: &mut PlayerState) {
    let lr = ps.value_opt.learning_rate();
    ps.value_opt.set_learning_rate(lr / 2.0);
    let lr = ps.policy_opt.learning_rate();
    ps.policy_opt.set_learning_rate(lr / 2.0);
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

/// Default per-player cost normalization: the scale of one day of fully
/// locked-down wage plus full-population attention cost,
/// `Pⁿ (w + a(κχ + p c))`, floored at 1 so zero-cost models stay unscaled.
pub fn default_cost_scale(params: &ModelParams, player: usize) -> f64 {
    let c = &params.cost;
    let rate = c.productivity
        + c.attention * (params.epi.kappa * c.life_value + c.hospitalization_rate * c.inpatient_cost);
    (params.regions.population(player) * rate).max(1.0)
}
