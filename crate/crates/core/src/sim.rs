//! Seeded Euler–Maruyama batch simulation of the joint epidemic dynamics and
//! of the per-player reduced forward process.
//!
//! Paths follow the explicit scheme
//!
//! ```text
//! X_{k+1} = X_k + b(t_k, X_k, ℓ(t_k, X_k)) Δt + Σ(X_k) ΔW_k,
//! ```
//!
//! on a uniform grid, with the policy evaluated at the left endpoint of each
//! step and `ΔW_k ~ N(0, Δt·I)` drawn from per-path counter-based streams so
//! that a `(seed, stream)` pair reproduces bitwise-identical batches at any
//! worker count. Running costs accrue by left-endpoint quadrature, and the
//! removed compartment is reconstructed alongside the paths as
//! `R_{k+1} = R_k + (λ iₖ + v sₖ) Δt`, which together with the scheme's
//! exactly cancelling flux arithmetic keeps `s + e + i + R = 1` to within
//! accumulated rounding at every node.
//!
//! A path that produces a non-finite state or step cost is aborted: it is
//! frozen at its last finite state, accrues no further cost, and is flagged
//! in the batch's failure report. Batches export to CSV (one row per path,
//! node, and region) and to a versioned binary cache.

use std::io::{self, Read, Write};
use std::path::Path;

use ndarray::{Array2, Array3, ArrayView2, ArrayViewMut2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hamiltonian;
use crate::model::{self, layout, ModelParams};
use crate::rng::{stream_rng, StreamKey};

/// Uniform time grid over `[0, horizon]` with `steps` Euler steps, i.e.
/// `steps + 1` nodes `t_k = k·horizon/steps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::invalid(format!(
                "time grid horizon must be positive and finite, got {horizon}"
            )));
        }
        if steps == 0 {
            return Err(Error::invalid("time grid needs at least one step"));
        }
        Ok(TimeGrid { horizon, steps })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    /// Node `t_k = k·T/N_T`, valid for `k ∈ [0, steps]`.
    pub fn node(&self, k: usize) -> f64 {
        debug_assert!(k <= self.steps);
        k as f64 * self.horizon / self.steps as f64
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..=self.steps).map(|k| self.node(k)).collect()
    }
}

/// A joint lockdown/health policy evaluated on whole batches of states.
///
/// `states` has one row per path (shape `B × 3N`); implementations fill `out`
/// (shape `B × N`) with values in `[0, 1]` for lockdown and `≥ 0` for health
/// effort. Batched evaluation keeps neural policies on their vectorized
/// forward path; the simulator calls once per grid node.
pub trait PolicyMap: Sync {
    fn lockdown_batch(&self, t: f64, states: ArrayView2<f64>, out: ArrayViewMut2<f64>);

    /// Health-effort channel; defaults to zero (the lockdown-only game).
    fn health_batch(&self, _t: f64, _states: ArrayView2<f64>, mut out: ArrayViewMut2<f64>) {
        out.fill(0.0);
    }
}

/// State- and time-independent policy: every region holds a constant
/// lockdown level and health effort.
#[derive(Debug, Clone)]
pub struct FixedPolicy {
    lockdown: Vec<f64>,
    health: Vec<f64>,
}

impl FixedPolicy {
    pub fn new(lockdown: Vec<f64>, health: Vec<f64>) -> Result<Self> {
        if lockdown.len() != health.len() {
            return Err(Error::DimensionMismatch(format!(
                "fixed policy: {} lockdown levels vs {} health levels",
                lockdown.len(),
                health.len()
            )));
        }
        if let Some(bad) = lockdown.iter().find(|l| !(0.0..=1.0).contains(*l)) {
            return Err(Error::invalid(format!(
                "fixed policy: lockdown level {bad} outside [0, 1]"
            )));
        }
        if let Some(bad) = health.iter().find(|h| !(**h >= 0.0) || !h.is_finite()) {
            return Err(Error::invalid(format!(
                "fixed policy: health effort {bad} must be finite and non-negative"
            )));
        }
        Ok(FixedPolicy { lockdown, health })
    }

    /// Constant lockdown level in every region, zero health effort.
    pub fn uniform(n_regions: usize, level: f64) -> Result<Self> {
        FixedPolicy::new(vec![level; n_regions], vec![0.0; n_regions])
    }

    /// The do-nothing profile.
    pub fn zero(n_regions: usize) -> Self {
        FixedPolicy {
            lockdown: vec![0.0; n_regions],
            health: vec![0.0; n_regions],
        }
    }

    pub fn lockdown(&self) -> &[f64] {
        &self.lockdown
    }
}

impl PolicyMap for FixedPolicy {
    fn lockdown_batch(&self, _t: f64, _states: ArrayView2<f64>, mut out: ArrayViewMut2<f64>) {
        for mut row in out.rows_mut() {
            for (slot, level) in row.iter_mut().zip(&self.lockdown) {
                *slot = *level;
            }
        }
    }

    fn health_batch(&self, _t: f64, _states: ArrayView2<f64>, mut out: ArrayViewMut2<f64>) {
        for mut row in out.rows_mut() {
            for (slot, level) in row.iter_mut().zip(&self.health) {
                *slot = *level;
            }
        }
    }
}

/// Provenance of a batch's randomness: the base seed plus the encoded stream
/// identifier the increments were drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub seed: u64,
    pub stream: u64,
}

/// A path that hit a non-finite state or cost: frozen from `step` onward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathFailure {
    pub path: usize,
    pub step: usize,
}

/// A batch of simulated paths with everything downstream consumers need:
/// states, the Brownian increments that produced them, the policy values
/// applied at each node, per-step and total per-player costs, and the
/// reconstructed removed compartment.
#[derive(Debug, Clone)]
pub struct PathBatch {
    pub grid: TimeGrid,
    pub n_regions: usize,
    /// Shape `B × (N_T+1) × 3N`.
    pub states: Array3<f64>,
    /// Shape `B × N_T × 2N`; entry `~ N(0, Δt)`.
    pub increments: Array3<f64>,
    /// Policy lockdown at each node, shape `B × (N_T+1) × N`.
    pub lockdown: Array3<f64>,
    /// Left-endpoint running cost times `Δt` per step, shape `B × N_T × N`.
    pub stepwise_cost: Array3<f64>,
    /// Total accumulated cost per path and player, shape `B × N`.
    pub costs: Array2<f64>,
    /// Removed compartment, shape `B × (N_T+1) × N`: starts at `1 − s − e − i`
    /// and accumulates `(λ i + v s) Δt` per step.
    pub recovered: Array3<f64>,
    pub seed: SeedRecord,
    pub failures: Vec<PathFailure>,
}

impl PathBatch {
    pub fn batch_size(&self) -> usize {
        self.states.shape()[0]
    }

    /// Paths not flagged as failed, in index order.
    pub fn surviving_paths(&self) -> Vec<usize> {
        let failed: std::collections::HashSet<usize> =
            self.failures.iter().map(|f| f.path).collect();
        (0..self.batch_size()).filter(|b| !failed.contains(b)).collect()
    }
}

/// Maximum batch size: path indices must fit the RNG stream id's path lane.
pub const MAX_BATCH: usize = 1 << 24;

/// Draw `batch × steps × dim` Brownian increments with entries
/// `N(0, grid.dt())`. Path `b` draws from the stream `key.with_path(b)`, so
/// the output is bitwise-reproducible for a given `(seed, key)` regardless
/// of call order or worker count.
pub fn brownian_increments(
    seed: u64,
    key: StreamKey,
    batch: usize,
    grid: TimeGrid,
    dim: usize,
) -> Array3<f64> {
    assert!(batch <= MAX_BATCH, "batch {batch} exceeds the stream path lane");
    let sqrt_dt = grid.dt().sqrt();
    let mut increments = Array3::zeros((batch, grid.steps(), dim));
    let per_path = grid.steps() * dim;
    increments
        .as_slice_mut()
        .expect("freshly allocated array is contiguous")
        .par_chunks_mut(per_path)
        .enumerate()
        .for_each(|(b, chunk)| {
            let mut rng = stream_rng(seed, key.with_path(b));
            for slot in chunk.iter_mut() {
                let normal: f64 = rand::Rng::sample(&mut rng, rand_distr::StandardNormal);
                *slot = normal * sqrt_dt;
            }
        });
    increments
}

fn check_initial_state(x0: &[f64], n_regions: usize) -> Result<()> {
    if x0.len() != 3 * n_regions {
        return Err(Error::DimensionMismatch(format!(
            "initial state has {} components, expected {}",
            x0.len(),
            3 * n_regions
        )));
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("initial state has non-finite components"));
    }
    Ok(())
}

/// Euler–Maruyama batch of the full joint dynamics under `policy`, with
/// per-player costs accrued by left-endpoint quadrature.
pub fn simulate(
    params: &ModelParams,
    policy: &dyn PolicyMap,
    x0: &[f64],
    grid: TimeGrid,
    batch: usize,
    seed: u64,
    key: StreamKey,
) -> Result<PathBatch> {
    run_scheme(params, policy, x0, grid, batch, seed, key, Driver::Full)
}

/// Euler–Maruyama batch of player `n`'s reduced forward process: the drift
/// terms carrying player `n`'s own lockdown factor are stripped (they belong
/// to the stage's backward equation), while the other players' lockdowns are
/// evaluated from `others_policy` at each node. No costs accrue; the
/// `stepwise_cost` and `costs` arrays stay zero. The recorded lockdown is the
/// raw policy output — component `n` is ignored by the reduced dynamics.
pub fn simulate_reduced(
    n: usize,
    params: &ModelParams,
    others_policy: &dyn PolicyMap,
    grid: TimeGrid,
    batch: usize,
    seed: u64,
    key: StreamKey,
    x0: &[f64],
) -> Result<PathBatch> {
    if n >= params.n_regions() {
        return Err(Error::invalid(format!(
            "player index {n} out of range for {} regions",
            params.n_regions()
        )));
    }
    run_scheme(params, others_policy, x0, grid, batch, seed, key, Driver::Reduced(n))
}

enum Driver {
    Full,
    Reduced(usize),
}

#[allow(clippy::too_many_arguments)]
fn run_scheme(
    params: &ModelParams,
    policy: &dyn PolicyMap,
    x0: &[f64],
    grid: TimeGrid,
    batch: usize,
    seed: u64,
    key: StreamKey,
    driver: Driver,
) -> Result<PathBatch> {
    let n_regions = params.n_regions();
    check_initial_state(x0, n_regions)?;
    params.validate()?;
    if batch == 0 {
        return Err(Error::invalid("batch size must be positive"));
    }

    let steps = grid.steps();
    let dim = 3 * n_regions;
    let dt = grid.dt();
    let increments = brownian_increments(seed, key, batch, grid, 2 * n_regions);

    let mut states = Array3::zeros((batch, steps + 1, dim));
    let mut lockdown = Array3::zeros((batch, steps + 1, n_regions));
    let mut stepwise_cost = Array3::zeros((batch, steps, n_regions));
    let mut recovered = Array3::zeros((batch, steps + 1, n_regions));
    let mut costs = Array2::zeros((batch, n_regions));
    let mut failures = Vec::new();
    let mut failed = vec![false; batch];

    for b in 0..batch {
        for (j, v) in x0.iter().enumerate() {
            states[[b, 0, j]] = *v;
        }
        for j in 0..n_regions {
            recovered[[b, 0, j]] = model::recovered_fraction(
                x0[layout::s(n_regions, j)],
                x0[layout::e(n_regions, j)],
                x0[layout::i(n_regions, j)],
            );
        }
    }

    // Scratch rows reused across the node loop.
    let mut drift = vec![0.0; dim];
    let mut noise = vec![0.0; dim];
    let mut health = Array2::zeros((batch, n_regions));

    for k in 0..=steps {
        let t_k = grid.node(k);
        let node_states = states.index_axis(Axis(1), k).into_owned();
        {
            let view = node_states.view();
            let mut node_lockdown = lockdown.index_axis_mut(Axis(1), k);
            policy.lockdown_batch(t_k, view, node_lockdown.view_mut());
            if k < steps {
                policy.health_batch(t_k, view, health.view_mut());
            }
        }
        if k == steps {
            break;
        }
        for b in 0..batch {
            if failed[b] {
                for j in 0..dim {
                    states[[b, k + 1, j]] = states[[b, k, j]];
                }
                for j in 0..n_regions {
                    recovered[[b, k + 1, j]] = recovered[[b, k, j]];
                }
                continue;
            }
            let x = node_states.row(b);
            let x = x.as_slice().expect("row of standard-layout array");
            let ell_row = lockdown.index_axis(Axis(1), k);
            let ell = ell_row.row(b);
            let ell = ell.as_slice().expect("row of standard-layout array");
            match driver {
                Driver::Full => model::drift_into(x, ell, params, &mut drift),
                Driver::Reduced(n) => {
                    hamiltonian::reduced_drift_into(n, x, ell, params, &mut drift)
                }
            }
            let dw_row = increments.index_axis(Axis(1), k);
            let dw = dw_row.row(b);
            model::diffusion_apply_into(
                x,
                dw.as_slice().expect("row of standard-layout array"),
                params,
                &mut noise,
            );

            let mut finite = true;
            for j in 0..dim {
                let next = x[j] + drift[j] * dt + noise[j];
                states[[b, k + 1, j]] = next;
                finite &= next.is_finite();
            }
            let mut step_costs_finite = true;
            if let Driver::Full = driver {
                for n in 0..n_regions {
                    let f = model::running_cost_slice(n, t_k, x, ell[n], health[[b, n]], params);
                    let step_cost = f * dt;
                    stepwise_cost[[b, k, n]] = step_cost;
                    step_costs_finite &= step_cost.is_finite();
                }
            }
            for j in 0..n_regions {
                let flux = (params.epi.lambda * x[layout::i(n_regions, j)]
                    + params.epi.vaccination * x[layout::s(n_regions, j)])
                    * dt;
                recovered[[b, k + 1, j]] = recovered[[b, k, j]] + flux;
            }

            if !finite || !step_costs_finite {
                failed[b] = true;
                failures.push(PathFailure { path: b, step: k });
                // Freeze at the last finite state; drop the offending step's
                // cost so totals stay meaningful.
                for j in 0..dim {
                    states[[b, k + 1, j]] = x[j];
                }
                for j in 0..n_regions {
                    stepwise_cost[[b, k, j]] = 0.0;
                    recovered[[b, k + 1, j]] = recovered[[b, k, j]];
                }
            }
        }
    }

    for b in 0..batch {
        for n in 0..n_regions {
            let mut total = 0.0;
            for k in 0..steps {
                total += stepwise_cost[[b, k, n]];
            }
            costs[[b, n]] = total;
        }
    }

    Ok(PathBatch {
        grid,
        n_regions,
        states,
        increments,
        lockdown,
        stepwise_cost,
        costs,
        recovered,
        seed: SeedRecord { seed, stream: key.encode() },
        failures,
    })
}

/// Write a batch as CSV with columns
/// `path_id,t,region,S,E,I,R,ell,stepwise_cost` (region = 0-based index;
/// `stepwise_cost` is the cost accrued over the step starting at `t`, zero
/// on the final node). An optional digest is recorded first as a
/// `# config_digest: …` comment line.
pub fn export_csv<W: io::Write>(
    batch: &PathBatch,
    digest: Option<&str>,
    mut sink: W,
) -> Result<()> {
    if let Some(d) = digest {
        writeln!(sink, "# config_digest: {d}")?;
    }
    let mut w = csv::Writer::from_writer(sink);
    w.write_record([
        "path_id",
        "t",
        "region",
        "S",
        "E",
        "I",
        "R",
        "ell",
        "stepwise_cost",
    ])
    .map_err(|e| Error::invalid(format!("csv write failed: {e}")))?;
    let n = batch.n_regions;
    for b in 0..batch.batch_size() {
        for k in 0..=batch.grid.steps() {
            let t = batch.grid.node(k);
            for j in 0..n {
                let step_cost = if k < batch.grid.steps() {
                    batch.stepwise_cost[[b, k, j]]
                } else {
                    0.0
                };
                w.write_record([
                    b.to_string(),
                    t.to_string(),
                    j.to_string(),
                    batch.states[[b, k, layout::s(n, j)]].to_string(),
                    batch.states[[b, k, layout::e(n, j)]].to_string(),
                    batch.states[[b, k, layout::i(n, j)]].to_string(),
                    batch.recovered[[b, k, j]].to_string(),
                    batch.lockdown[[b, k, j]].to_string(),
                    step_cost.to_string(),
                ])
                .map_err(|e| Error::invalid(format!("csv write failed: {e}")))?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Binary cache format identifier and version. The layout after the 4-byte
/// magic and little-endian `u32` version is, all little-endian:
/// `batch u64, steps u64, n_regions u64, horizon f64, seed u64, stream u64`,
/// then the `f64` arrays in order `states, increments, lockdown,
/// stepwise_cost, costs, recovered` (C-order), then `n_failures u64`
/// followed by `(path u64, step u64)` pairs.
pub const CACHE_MAGIC: [u8; 4] = *b"EPGB";
pub const CACHE_VERSION: u32 = 1;

impl PathBatch {
    pub fn write_cache<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&CACHE_MAGIC)?;
        w.write_all(&CACHE_VERSION.to_le_bytes())?;
        let b = self.batch_size() as u64;
        w.write_all(&b.to_le_bytes())?;
        w.write_all(&(self.grid.steps() as u64).to_le_bytes())?;
        w.write_all(&(self.n_regions as u64).to_le_bytes())?;
        w.write_all(&self.grid.horizon().to_le_bytes())?;
        w.write_all(&self.seed.seed.to_le_bytes())?;
        w.write_all(&self.seed.stream.to_le_bytes())?;
        for array in [
            self.states.as_slice().expect("standard layout"),
            self.increments.as_slice().expect("standard layout"),
            self.lockdown.as_slice().expect("standard layout"),
            self.stepwise_cost.as_slice().expect("standard layout"),
            self.costs.as_slice().expect("standard layout"),
            self.recovered.as_slice().expect("standard layout"),
        ] {
            for v in array {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.write_all(&(self.failures.len() as u64).to_le_bytes())?;
        for f in &self.failures {
            w.write_all(&(f.path as u64).to_le_bytes())?;
            w.write_all(&(f.step as u64).to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_cache<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if magic != CACHE_MAGIC {
            return Err(Error::ArtifactMismatch(
                "path cache: unrecognized magic bytes".into(),
            ));
        }
        let version = read_u32(&mut r)?;
        if version != CACHE_VERSION {
            return Err(Error::ArtifactMismatch(format!(
                "path cache: version {version} unsupported (expected {CACHE_VERSION})"
            )));
        }
        let batch = read_u64(&mut r)? as usize;
        let steps = read_u64(&mut r)? as usize;
        let n_regions = read_u64(&mut r)? as usize;
        let horizon = read_f64(&mut r)?;
        let seed = read_u64(&mut r)?;
        let stream = read_u64(&mut r)?;
        let grid = TimeGrid::new(horizon, steps)?;

        let states = read_array3(&mut r, batch, steps + 1, 3 * n_regions)?;
        let increments = read_array3(&mut r, batch, steps, 2 * n_regions)?;
        let lockdown = read_array3(&mut r, batch, steps + 1, n_regions)?;
        let stepwise_cost = read_array3(&mut r, batch, steps, n_regions)?;
        let costs_len = batch
            .checked_mul(n_regions)
            .ok_or_else(|| Error::ArtifactMismatch("path cache: dimension overflow".into()))?;
        let mut flat = vec![0.0; costs_len];
        read_f64_slice(&mut r, &mut flat)?;
        let costs = Array2::from_shape_vec((batch, n_regions), flat)
            .map_err(|e| Error::ArtifactMismatch(format!("path cache: {e}")))?;
        let recovered = read_array3(&mut r, batch, steps + 1, n_regions)?;

        let n_failures = read_u64(&mut r)? as usize;
        let mut failures = Vec::with_capacity(n_failures.min(batch));
        for _ in 0..n_failures {
            let path = read_u64(&mut r)? as usize;
            let step = read_u64(&mut r)? as usize;
            failures.push(PathFailure { path, step });
        }
        Ok(PathBatch {
            grid,
            n_regions,
            states,
            increments,
            lockdown,
            stepwise_cost,
            costs,
            recovered,
            seed: SeedRecord { seed, stream },
            failures,
        })
    }

    pub fn save_cache(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_cache(io::BufWriter::new(file))
    }

    pub fn load_cache(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_cache(io::BufReader::new(file))
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(f64::from_le_bytes(buf))
}

fn read_f64_slice<R: Read>(r: &mut R, out: &mut [f64]) -> Result<()> {
    let mut buf = [0u8; 8];
    for slot in out {
        r.read_exact(&mut buf)?;
        *slot = f64::from_le_bytes(buf);
    }
    Ok(())
}

fn read_array3<R: Read>(r: &mut R, a: usize, b: usize, c: usize) -> Result<Array3<f64>> {
    let len = a
        .checked_mul(b)
        .and_then(|ab| ab.checked_mul(c))
        .ok_or_else(|| Error::ArtifactMismatch("path cache: dimension overflow".into()))?;
    let mut flat = vec![0.0; len];
    read_f64_slice(r, &mut flat)?;
    Array3::from_shape_vec((a, b, c), flat)
        .map_err(|e| Error::ArtifactMismatch(format!("path cache: {e}")))
}
