//! Epidemic model primitives: regions, parameters, dynamics, and costs.
//!
//! The joint state of an `N`-region epidemic is the `3N`-vector
//!
//! ```text
//! x = (s₁, …, s_N, e₁, …, e_N, i₁, …, i_N)
//! ```
//!
//! of susceptible/exposed/infectious fractions per region; the removed
//! fraction is redundant through the conservation law `s + e + i + R = 1`.
//! Under lockdown fractions `ℓ ∈ [0,1]^N` with effectiveness `θ`, the drift of
//! the system is
//!
//! ```text
//! ṡ_j = −Σ_k βʲᵏ s_j i_k (1−θℓʲ)(1−θℓᵏ) − v s_j
//! ė_j = +Σ_k βʲᵏ s_j i_k (1−θℓʲ)(1−θℓᵏ) − γ e_j
//! i̇_j = γ e_j − λ i_j
//! ```
//!
//! and the noise enters through paired ± multiplicative entries (see
//! [`diffusion_apply`]) so that every Brownian column cancels in the
//! compartment sum. Region `n`'s running cost per day is
//!
//! ```text
//! fⁿ = e^{−rt} Pⁿ [ (sₙ+eₙ+iₙ) ℓⁿ w + a (κ iₙ χ + p iₙ c) ] + e^{−rt} η (hⁿ)²
//! ```
//!
//! — lost wages while locked down plus attention-weighted death and
//! hospitalization costs, with an optional quadratic health-effort term.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Index helpers for the `(s, e, i)` block layout of the joint state.
///
/// All code that touches raw state slices goes through these so the layout
/// has a single source of truth.
pub mod layout {
    /// Index of `s_j` in a `3N` state slice.
    #[inline]
    pub fn s(_n: usize, j: usize) -> usize {
        j
    }
    /// Index of `e_j`.
    #[inline]
    pub fn e(n: usize, j: usize) -> usize {
        n + j
    }
    /// Index of `i_j`.
    #[inline]
    pub fn i(n: usize, j: usize) -> usize {
        2 * n + j
    }
}

/// Named regions and their populations (persons).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionSet {
    names: Vec<String>,
    populations: Vec<f64>,
}

impl RegionSet {
    pub fn new(names: Vec<String>, populations: Vec<f64>) -> Result<Self> {
        if names.is_empty() {
            return Err(Error::invalid("regions: at least one region required"));
        }
        if names.len() != populations.len() {
            return Err(Error::DimensionMismatch(format!(
                "regions: {} names but {} populations",
                names.len(),
                populations.len()
            )));
        }
        for (k, p) in populations.iter().enumerate() {
            if !(p.is_finite() && *p > 0.0) {
                return Err(Error::invalid(format!(
                    "regions.populations[{k}]: must be positive and finite, got {p}"
                )));
            }
        }
        Ok(RegionSet { names, populations })
    }

    pub fn count(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn populations(&self) -> &[f64] {
        &self.populations
    }

    /// Population of region `j`.
    pub fn population(&self, j: usize) -> f64 {
        self.populations[j]
    }
}

/// Resident travel fractions `fⁿᵏ`: the share of region `n`'s population
/// present in region `k` at any moment.
///
/// Rows must sum to 1 (closed system). With `allow_open_system`, row sums may
/// fall below 1, the residual being population that is outside every modeled
/// region and cannot be infected. Diagonal dominance (`fⁿⁿ > fⁿᵏ`) is the
/// physically expected regime but is only warned about, not rejected; see
/// [`TravelMatrix::dominance_violations`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TravelMatrix {
    f: Array2<f64>,
}

/// Absolute slack allowed on travel-row sums (float-entry configs).
const ROW_SUM_TOL: f64 = 1e-9;

impl TravelMatrix {
    pub fn new(f: Array2<f64>, allow_open_system: bool) -> Result<Self> {
        let (rows, cols) = f.dim();
        if rows != cols || rows == 0 {
            return Err(Error::DimensionMismatch(format!(
                "travel: matrix must be square and non-empty, got {rows}×{cols}"
            )));
        }
        for ((n, k), v) in f.indexed_iter() {
            if !(v.is_finite() && (0.0..=1.0).contains(v)) {
                return Err(Error::invalid(format!(
                    "travel.rows[{n}][{k}]: fraction must lie in [0,1], got {v}"
                )));
            }
        }
        for (n, row) in f.rows().into_iter().enumerate() {
            let sum: f64 = row.sum();
            let bad = if allow_open_system {
                sum > 1.0 + ROW_SUM_TOL
            } else {
                (sum - 1.0).abs() > ROW_SUM_TOL
            };
            if bad {
                return Err(Error::invalid(format!(
                    "travel.rows[{n}]: row sums to {sum}, expected {}",
                    if allow_open_system { "≤ 1" } else { "1" }
                )));
            }
        }
        Ok(TravelMatrix { f })
    }

    pub fn count(&self) -> usize {
        self.f.nrows()
    }

    /// `fⁿᵏ`.
    pub fn fraction(&self, n: usize, k: usize) -> f64 {
        self.f[[n, k]]
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.f
    }

    /// Pairs `(n, k)` with `fⁿᵏ ≥ fⁿⁿ` for `k ≠ n` — suspicious but legal
    /// inputs the caller should surface to the operator.
    pub fn dominance_violations(&self) -> Vec<(usize, usize)> {
        let n = self.count();
        let mut out = Vec::new();
        for row in 0..n {
            for col in 0..n {
                if col != row && self.f[[row, col]] >= self.f[[row, row]] {
                    out.push((row, col));
                }
            }
        }
        out
    }
}

/// Epidemiological rates and noise levels.
///
/// All rates are per day; `sigma_s`/`sigma_e` are the multiplicative noise
/// volatilities on the susceptible→exposed and exposed→infectious channels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpiParams {
    /// Cross-region transmission matrix `βⁿᵏ` (from [`build_transmission_matrix`]).
    pub beta_matrix: Array2<f64>,
    /// Latent-to-infectious rate `γ` (inverse latent period).
    pub gamma: f64,
    /// Removal rate `λ` (inverse infectious period).
    pub lambda: f64,
    /// Death rate among the infectious, `κ`.
    pub kappa: f64,
    /// Lockdown effectiveness `θ ∈ [0,1]`.
    pub theta: f64,
    /// Susceptible-channel volatility per region.
    pub sigma_s: Vec<f64>,
    /// Exposed-channel volatility per region.
    pub sigma_e: Vec<f64>,
    /// Vaccination rate `v` (0 until a vaccine exists).
    pub vaccination: f64,
}

impl EpiParams {
    fn validate(&self, n: usize) -> Result<()> {
        if self.beta_matrix.dim() != (n, n) {
            return Err(Error::DimensionMismatch(format!(
                "epi.beta_matrix: expected {n}×{n}, got {:?}",
                self.beta_matrix.dim()
            )));
        }
        if self.beta_matrix.iter().any(|b| !b.is_finite() || *b < 0.0) {
            return Err(Error::invalid("epi.beta_matrix: entries must be ≥ 0"));
        }
        for (name, v) in [
            ("epi.gamma", self.gamma),
            ("epi.lambda", self.lambda),
            ("epi.kappa", self.kappa),
            ("epi.vaccination", self.vaccination),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid(format!("{name}: must be ≥ 0, got {v}")));
            }
        }
        if !(self.theta.is_finite() && (0.0..=1.0).contains(&self.theta)) {
            return Err(Error::invalid(format!(
                "epi.theta: must lie in [0,1], got {}",
                self.theta
            )));
        }
        for (name, v) in [("epi.sigma_s", &self.sigma_s), ("epi.sigma_e", &self.sigma_e)] {
            if v.len() != n {
                return Err(Error::DimensionMismatch(format!(
                    "{name}: expected {n} entries, got {}",
                    v.len()
                )));
            }
            if v.iter().any(|s| !s.is_finite() || *s < 0.0) {
                return Err(Error::invalid(format!("{name}: entries must be ≥ 0")));
            }
        }
        Ok(())
    }
}

/// Economic constants of the planners' objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostParams {
    /// Lost productivity `w` ($ per person per day of lockdown).
    pub productivity: f64,
    /// Value of statistical life `χ` ($ per person).
    pub life_value: f64,
    /// Hospitalization rate `p` among the infectious (dimensionless).
    pub hospitalization_rate: f64,
    /// Inpatient cost `c` ($ per person per day).
    pub inpatient_cost: f64,
    /// Attention weight `a` on health outcomes (dimensionless).
    pub attention: f64,
    /// Discount rate `r` (1/day).
    pub discount: f64,
    /// Health-effort weight `η` ($); 0 disables the `h` channel's cost.
    pub health_weight: f64,
    /// Planning horizon `T` (days).
    pub horizon: f64,
}

impl CostParams {
    fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("cost.productivity", self.productivity),
            ("cost.life_value", self.life_value),
            ("cost.hospitalization_rate", self.hospitalization_rate),
            ("cost.inpatient_cost", self.inpatient_cost),
            ("cost.attention", self.attention),
            ("cost.discount", self.discount),
            ("cost.health_weight", self.health_weight),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid(format!("{name}: must be ≥ 0, got {v}")));
            }
        }
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(Error::invalid(format!(
                "cost.horizon: must be > 0, got {}",
                self.horizon
            )));
        }
        Ok(())
    }
}

/// Complete model: regions, epidemiology, and costs.
///
/// Units are fixed by convention: time in days, money in dollars, compartments
/// as fractions of each region's population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub regions: RegionSet,
    pub epi: EpiParams,
    pub cost: CostParams,
}

impl ModelParams {
    pub fn new(regions: RegionSet, epi: EpiParams, cost: CostParams) -> Result<Self> {
        epi.validate(regions.count())?;
        cost.validate()?;
        Ok(ModelParams { regions, epi, cost })
    }

    pub fn n_regions(&self) -> usize {
        self.regions.count()
    }

    /// Re-check internal consistency (used after deserialization).
    pub fn validate(&self) -> Result<()> {
        self.epi.validate(self.regions.count())?;
        self.cost.validate()
    }
}

/// Default tolerance for state-validity reporting.
///
/// Euler steps under multiplicative noise can transiently push a compartment
/// slightly outside `[0,1]`; violations beyond `δ` are *reported*, never
/// silently clamped, so that scheme errors stay visible.
pub const STATE_TOL: f64 = 1e-6;

/// A component of a state vector that escaped its physical range.
#[derive(Debug, Clone, PartialEq)]
pub struct StateViolation {
    /// Human-readable component label, e.g. `"e[2]"` or `"s+e+i[0]"`.
    pub component: String,
    pub value: f64,
}

impl std::fmt::Display for StateViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} = {:e} outside tolerance", self.component, self.value)
    }
}

/// Joint compartment state `x = (s₁..s_N, e₁..e_N, i₁..i_N)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateVector {
    x: Vec<f64>,
    n: usize,
}

impl StateVector {
    /// Wrap a raw `3N` slice (block layout `s | e | i`).
    pub fn new(x: Vec<f64>) -> Result<Self> {
        if x.is_empty() || x.len() % 3 != 0 {
            return Err(Error::DimensionMismatch(format!(
                "state: length must be a positive multiple of 3, got {}",
                x.len()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("state: components must be finite"));
        }
        let n = x.len() / 3;
        Ok(StateVector { x, n })
    }

    /// Build from per-region compartment slices.
    pub fn from_compartments(s: &[f64], e: &[f64], i: &[f64]) -> Result<Self> {
        if s.len() != e.len() || s.len() != i.len() {
            return Err(Error::DimensionMismatch(format!(
                "state: compartment slices disagree ({}, {}, {})",
                s.len(),
                e.len(),
                i.len()
            )));
        }
        let mut x = Vec::with_capacity(3 * s.len());
        x.extend_from_slice(s);
        x.extend_from_slice(e);
        x.extend_from_slice(i);
        StateVector::new(x)
    }

    pub fn n_regions(&self) -> usize {
        self.n
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.x
    }

    pub fn s(&self, j: usize) -> f64 {
        self.x[layout::s(self.n, j)]
    }

    pub fn e(&self, j: usize) -> f64 {
        self.x[layout::e(self.n, j)]
    }

    pub fn i(&self, j: usize) -> f64 {
        self.x[layout::i(self.n, j)]
    }

    /// Report every component outside `[−δ, 1+δ]` and every region whose
    /// `s+e+i` exceeds `1+δ`. An empty report means the state is physical
    /// within tolerance.
    pub fn validity_report(&self, delta: f64) -> Vec<StateViolation> {
        let mut out = Vec::new();
        let blocks = [("s", 0), ("e", self.n), ("i", 2 * self.n)];
        for (label, offset) in blocks {
            for j in 0..self.n {
                let v = self.x[offset + j];
                if !((-delta..=1.0 + delta).contains(&v)) {
                    out.push(StateViolation {
                        component: format!("{label}[{j}]"),
                        value: v,
                    });
                }
            }
        }
        for j in 0..self.n {
            let sum = self.s(j) + self.e(j) + self.i(j);
            if sum > 1.0 + delta {
                out.push(StateViolation {
                    component: format!("s+e+i[{j}]"),
                    value: sum,
                });
            }
        }
        out
    }
}

/// Joint controls: lockdown fractions `ℓ` and health efforts `h`.
///
/// `h` participates in forward simulation (vaccination/cost channels) but is
/// never optimized; the planners' decision variable is `ℓ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyVector {
    pub lockdown: Vec<f64>,
    pub health: Vec<f64>,
}

impl PolicyVector {
    pub fn new(lockdown: Vec<f64>, health: Vec<f64>) -> Result<Self> {
        if lockdown.len() != health.len() {
            return Err(Error::DimensionMismatch(format!(
                "policy: {} lockdown entries but {} health entries",
                lockdown.len(),
                health.len()
            )));
        }
        for (name, v) in [("policy.lockdown", &lockdown), ("policy.health", &health)] {
            if let Some((j, bad)) = v
                .iter()
                .enumerate()
                .find(|(_, x)| !x.is_finite() || !(0.0..=1.0).contains(*x))
            {
                return Err(Error::invalid(format!(
                    "{name}[{j}]: must lie in [0,1], got {bad}"
                )));
            }
        }
        Ok(PolicyVector { lockdown, health })
    }

    /// Constant lockdown `ℓ ≡ c`, zero health effort.
    pub fn constant(n: usize, ell: f64) -> Result<Self> {
        PolicyVector::new(vec![ell; n], vec![0.0; n])
    }

    pub fn zero(n: usize) -> Self {
        PolicyVector {
            lockdown: vec![0.0; n],
            health: vec![0.0; n],
        }
    }
}

/// Assemble the cross-region transmission matrix from a base rate and travel
/// fractions:
///
/// ```text
/// βⁿⁿ = β (fⁿⁿ)²,
/// βⁿᵏ = β (fⁿᵏ fᵏᵏ + fᵏⁿ fⁿⁿ) Pᵏ / Pⁿ   (k ≠ n).
/// ```
///
/// Off-diagonal transmission accounts for residents of `n` getting infected
/// while visiting `k` and for visitors from `k` infecting residents at home,
/// scaled to region `n`'s population.
pub fn build_transmission_matrix(
    beta: f64,
    travel: &TravelMatrix,
    regions: &RegionSet,
) -> Result<Array2<f64>> {
    if !(beta.is_finite() && beta >= 0.0) {
        return Err(Error::invalid(format!("beta: must be ≥ 0, got {beta}")));
    }
    let n = regions.count();
    if travel.count() != n {
        return Err(Error::DimensionMismatch(format!(
            "travel matrix is {}×{} but there are {} regions",
            travel.count(),
            travel.count(),
            n
        )));
    }
    let mut out = Array2::zeros((n, n));
    for row in 0..n {
        for col in 0..n {
            out[[row, col]] = if row == col {
                beta * travel.fraction(row, row) * travel.fraction(row, row)
            } else {
                beta * (travel.fraction(row, col) * travel.fraction(col, col)
                    + travel.fraction(col, row) * travel.fraction(row, row))
                    * regions.population(col)
                    / regions.population(row)
            };
        }
    }
    Ok(out)
}

/// Rates derived from headline epidemiological inputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibratedRates {
    pub beta: f64,
    pub lambda: f64,
    pub kappa: f64,
    pub gamma: f64,
}

/// Derive `(β, λ, κ, γ)` from reproduction number, infectious period, fatality
/// rate, and latent period:
///
/// ```text
/// β = R₀ / infectious_days,   λ = 1 / infectious_days,
/// κ = ifr / infectious_days,  γ = 1 / latent_days.
/// ```
pub fn calibrate(
    r0: f64,
    infectious_days: f64,
    ifr: f64,
    latent_days: f64,
) -> Result<CalibratedRates> {
    for (name, v) in [
        ("r0", r0),
        ("infectious_days", infectious_days),
        ("latent_days", latent_days),
    ] {
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::invalid(format!(
                "calibration.{name}: must be > 0, got {v}"
            )));
        }
    }
    if !(ifr.is_finite() && (0.0..=1.0).contains(&ifr)) {
        return Err(Error::invalid(format!(
            "calibration.ifr: must lie in [0,1], got {ifr}"
        )));
    }
    Ok(CalibratedRates {
        beta: r0 / infectious_days,
        lambda: 1.0 / infectious_days,
        kappa: ifr / infectious_days,
        gamma: 1.0 / latent_days,
    })
}

/// Drift of the joint state under the given lockdown levels, written into
/// `out` (length `3N`). Slice-level worker behind [`drift`]; simulation and
/// Hamiltonian-evaluation loops call this to avoid per-step allocation.
/// The health channel does not enter the drift (vaccination is a constant).
pub fn drift_into(x: &[f64], lockdown: &[f64], params: &ModelParams, out: &mut [f64]) {
    let n = params.n_regions();
    debug_assert_eq!(x.len(), 3 * n);
    debug_assert_eq!(out.len(), 3 * n);
    let beta = &params.epi.beta_matrix;
    let theta = params.epi.theta;
    let v = params.epi.vaccination;
    for j in 0..n {
        let s_j = x[layout::s(n, j)];
        let e_j = x[layout::e(n, j)];
        let i_j = x[layout::i(n, j)];
        let own = 1.0 - theta * lockdown[j];
        let mut infection = 0.0;
        for k in 0..n {
            infection +=
                beta[[j, k]] * s_j * x[layout::i(n, k)] * own * (1.0 - theta * lockdown[k]);
        }
        // Each flux is computed once and applied with ± so the three block
        // entries cancel exactly in floating point.
        let latent = params.epi.gamma * e_j;
        let removal = params.epi.lambda * i_j;
        let vaccination = v * s_j;
        out[layout::s(n, j)] = -infection - vaccination;
        out[layout::e(n, j)] = infection - latent;
        out[layout::i(n, j)] = latent - removal;
    }
}

/// Drift `b(t, x, ℓ, h)` of the joint dynamics (time enters only through the
/// policies, which are already evaluated here).
pub fn drift(x: &StateVector, policy: &PolicyVector, params: &ModelParams) -> Result<Vec<f64>> {
    let n = params.n_regions();
    if x.n_regions() != n || policy.lockdown.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "drift: state has {} regions, policy {}, params {}",
            x.n_regions(),
            policy.lockdown.len(),
            n
        )));
    }
    let mut out = vec![0.0; 3 * n];
    drift_into(x.as_slice(), &policy.lockdown, params, &mut out);
    Ok(out)
}

/// Apply the diffusion matrix to a `2N` Brownian increment, written into
/// `out`. The non-zero entries of `Σ(x)` are
///
/// ```text
/// Σ[s_j, j]   = −σ_{s_j} s_j      Σ[e_j, j]   = +σ_{s_j} s_j
/// Σ[e_j, j+N] = −σ_{e_j} e_j      Σ[i_j, j+N] = +σ_{e_j} e_j
/// ```
///
/// so each Brownian column moves mass between two compartments: the matrix
/// column sums vanish identically, and the applied `3N`-vector sums to zero
/// up to one floating-point rounding of each ± pair (exactly zero whenever
/// one channel's noise is zero).
pub fn diffusion_apply_into(x: &[f64], dw: &[f64], params: &ModelParams, out: &mut [f64]) {
    let n = params.n_regions();
    debug_assert_eq!(x.len(), 3 * n);
    debug_assert_eq!(dw.len(), 2 * n);
    debug_assert_eq!(out.len(), 3 * n);
    for j in 0..n {
        let susceptible_noise = params.epi.sigma_s[j] * x[layout::s(n, j)] * dw[j];
        let exposed_noise = params.epi.sigma_e[j] * x[layout::e(n, j)] * dw[n + j];
        out[layout::s(n, j)] = -susceptible_noise;
        out[layout::e(n, j)] = susceptible_noise - exposed_noise;
        out[layout::i(n, j)] = exposed_noise;
    }
}

/// `Σ(x) · dW` for a single state and increment.
pub fn diffusion_apply(x: &StateVector, dw: &[f64], params: &ModelParams) -> Result<Vec<f64>> {
    let n = params.n_regions();
    if x.n_regions() != n || dw.len() != 2 * n {
        return Err(Error::DimensionMismatch(format!(
            "diffusion: state has {} regions, dW length {}, expected {}",
            x.n_regions(),
            dw.len(),
            2 * n
        )));
    }
    let mut out = vec![0.0; 3 * n];
    diffusion_apply_into(x.as_slice(), dw, params, &mut out);
    Ok(out)
}

/// Region `n`'s running cost rate ($/day) at time `t`:
///
/// ```text
/// e^{−rt} Pⁿ [ (sₙ+eₙ+iₙ) ℓⁿ w + a (κ iₙ χ + p iₙ c) ] + e^{−rt} η (hⁿ)²
/// ```
pub fn running_cost(
    n: usize,
    t: f64,
    x: &StateVector,
    ell_n: f64,
    h_n: f64,
    params: &ModelParams,
) -> f64 {
    running_cost_slice(n, t, x.as_slice(), ell_n, h_n, params)
}

/// Slice-level worker behind [`running_cost`].
pub fn running_cost_slice(
    region: usize,
    t: f64,
    x: &[f64],
    ell_n: f64,
    h_n: f64,
    params: &ModelParams,
) -> f64 {
    let n = params.n_regions();
    let discount = (-params.cost.discount * t).exp();
    let alive = x[layout::s(n, region)] + x[layout::e(n, region)] + x[layout::i(n, region)];
    let i_n = x[layout::i(n, region)];
    let pop = params.regions.population(region);
    let wage = alive * ell_n * params.cost.productivity;
    let health = params.cost.attention
        * (params.epi.kappa * i_n * params.cost.life_value
            + params.cost.hospitalization_rate * i_n * params.cost.inpatient_cost);
    discount * pop * (wage + health) + discount * params.cost.health_weight * h_n * h_n
}

/// Removed fraction implied by conservation: `R = 1 − s − e − i`.
#[inline]
pub fn recovered_fraction(s: f64, e: f64, i: f64) -> f64 {
    1.0 - s - e - i
}

/// Reconstruct region `j`'s removed-fraction series along a path of joint
/// states (`rows = grid nodes, cols = 3N state`).
pub fn recovered_series(states: ndarray::ArrayView2<'_, f64>, j: usize) -> Vec<f64> {
    let n = states.ncols() / 3;
    states
        .rows()
        .into_iter()
        .map(|row| {
            recovered_fraction(row[layout::s(n, j)], row[layout::e(n, j)], row[layout::i(n, j)])
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::array;
    use proptest::prelude::*;

    fn regions3() -> RegionSet {
        RegionSet::new(
            vec!["NY".into(), "NJ".into(), "PA".into()],
            vec![19.54e6, 8.91e6, 12.81e6],
        )
        .unwrap()
    }

    fn travel3() -> TravelMatrix {
        TravelMatrix::new(
            array![[0.9, 0.05, 0.05], [0.05, 0.9, 0.05], [0.05, 0.05, 0.9]],
            false,
        )
        .unwrap()
    }

    /// Single-region parameter set with every knob explicit.
    fn params1(beta: f64, theta: f64, sigma_s: f64, sigma_e: f64) -> ModelParams {
        ModelParams::new(
            RegionSet::new(vec!["X".into()], vec![1.0e6]).unwrap(),
            EpiParams {
                beta_matrix: array![[beta]],
                gamma: 0.2,
                lambda: 1.0 / 13.0,
                kappa: 5e-4,
                theta,
                sigma_s: vec![sigma_s],
                sigma_e: vec![sigma_e],
                vaccination: 0.0,
            },
            CostParams {
                productivity: 172.6,
                life_value: 1.95e6,
                hospitalization_rate: 2.287e-3,
                inpatient_cost: 73300.0 / 13.0,
                attention: 100.0,
                discount: 0.0,
                health_weight: 0.0,
                horizon: 180.0,
            },
        )
        .unwrap()
    }

    #[test]
    fn transmission_matrix_matches_direct_arithmetic() {
        let beta = 2.2 / 13.0;
        let m = build_transmission_matrix(beta, &travel3(), &regions3()).unwrap();
        // Independent arithmetic of the defining formula, frozen values.
        assert_relative_eq!(m[[0, 0]], 0.1370769230769231, max_relative = 1e-12);
        assert_relative_eq!(m[[0, 1]], 0.006945043697346668, max_relative = 1e-12);
        assert_relative_eq!(m[[1, 0]], 0.03340170940170941, max_relative = 1e-12);
        // Population re-weighting: NJ→PA vs PA→NJ entries.
        let expected_23 = beta * (0.05 * 0.9 + 0.05 * 0.9) * (12.81 / 8.91);
        assert_relative_eq!(m[[1, 2]], expected_23, max_relative = 1e-12);
        for row in 0..3 {
            assert_relative_eq!(m[[row, row]], beta * 0.81, max_relative = 1e-12);
        }
    }

    #[test]
    fn transmission_identity_travel_is_diagonal() {
        let travel = TravelMatrix::new(Array2::eye(3), false).unwrap();
        let m = build_transmission_matrix(0.3, &travel, &regions3()).unwrap();
        for row in 0..3 {
            for col in 0..3 {
                let expected = if row == col { 0.3 } else { 0.0 };
                assert_eq!(m[[row, col]], expected, "entry ({row},{col})");
            }
        }
    }

    #[test]
    fn transmission_two_equal_regions() {
        let regions = RegionSet::new(vec!["A".into(), "B".into()], vec![5e6, 5e6]).unwrap();
        let travel = TravelMatrix::new(array![[0.9, 0.1], [0.1, 0.9]], false).unwrap();
        let m = build_transmission_matrix(1.0, &travel, &regions).unwrap();
        // f¹²f²² + f²¹f¹¹ = 0.1·0.9 + 0.1·0.9 = 0.18, populations cancel.
        assert_relative_eq!(m[[0, 1]], 0.18, max_relative = 1e-12);
        assert_relative_eq!(m[[1, 0]], 0.18, max_relative = 1e-12);
    }

    #[test]
    fn transmission_rejects_dimension_mismatch() {
        let travel = TravelMatrix::new(array![[0.9, 0.1], [0.1, 0.9]], false).unwrap();
        let err = build_transmission_matrix(0.2, &travel, &regions3()).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch(_)), "got {err:?}");
    }

    #[test]
    fn travel_rows_must_sum_to_one_when_closed() {
        let err = TravelMatrix::new(array![[0.9, 0.3], [0.1, 0.9]], false).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("rows[0]"), "message should name the row: {msg}");
        // The same matrix is also too heavy for an open system (sums > 1).
        assert!(TravelMatrix::new(array![[0.9, 0.3], [0.1, 0.9]], true).is_err());
        // Sub-stochastic rows pass only with the open-system option.
        let sub = array![[0.8, 0.1], [0.1, 0.8]];
        assert!(TravelMatrix::new(sub.clone(), false).is_err());
        assert!(TravelMatrix::new(sub, true).is_ok());
    }

    #[test]
    fn travel_dominance_is_warned_not_rejected() {
        let odd = TravelMatrix::new(array![[0.4, 0.6], [0.1, 0.9]], false).unwrap();
        assert_eq!(odd.dominance_violations(), vec![(0, 1)]);
        assert!(travel3().dominance_violations().is_empty());
    }

    #[test]
    fn calibrate_reproduces_case_study_rates() {
        let rates = calibrate(2.2, 13.0, 0.0065, 5.0).unwrap();
        assert_relative_eq!(rates.beta, 2.2 / 13.0, max_relative = 1e-15);
        assert_relative_eq!(rates.lambda, 1.0 / 13.0, max_relative = 1e-15);
        assert_eq!(rates.kappa, 5e-4, "0.0065/13 rounds exactly to 5e-4 in f64");
        assert_eq!(rates.gamma, 0.2);
    }

    #[test]
    fn calibrate_unit_rates_pass_through() {
        let rates = calibrate(1.0, 1.0, 0.0, 1.0).unwrap();
        assert_eq!(
            (rates.beta, rates.lambda, rates.kappa, rates.gamma),
            (1.0, 1.0, 0.0, 1.0)
        );
    }

    #[test]
    fn calibrate_alternative_ifr_point() {
        let rates = calibrate(2.2, 13.0, 0.0068, 5.0).unwrap();
        assert_relative_eq!(rates.kappa, 5.230769230769231e-4, max_relative = 1e-12);
    }

    #[test]
    fn calibrate_rejects_nonpositive_inputs() {
        assert!(calibrate(0.0, 13.0, 0.0065, 5.0).is_err());
        assert!(calibrate(2.2, 0.0, 0.0065, 5.0).is_err());
        assert!(calibrate(2.2, 13.0, -0.1, 5.0).is_err());
        assert!(calibrate(2.2, 13.0, 1.5, 5.0).is_err());
        assert!(calibrate(2.2, 13.0, 0.0065, 0.0).is_err());
    }

    #[test]
    fn drift_single_region_hand_case() {
        let params = params1(0.17, 0.9, 0.0, 0.0);
        let x = StateVector::from_compartments(&[0.99], &[0.0], &[0.01]).unwrap();
        let b = drift(&x, &PolicyVector::zero(1), &params).unwrap();
        let infection = 0.17 * 0.99 * 0.01;
        assert_relative_eq!(b[0], -infection, max_relative = 1e-12);
        assert_relative_eq!(b[1], infection, max_relative = 1e-12);
        assert_relative_eq!(b[2], -0.01 / 13.0, max_relative = 1e-12);
    }

    #[test]
    fn drift_vanishes_without_infection_or_latency() {
        let params = params1(0.17, 0.9, 0.0, 0.0);
        let x = StateVector::from_compartments(&[0.7], &[0.0], &[0.0]).unwrap();
        let b = drift(&x, &PolicyVector::zero(1), &params).unwrap();
        assert_eq!(b, vec![0.0; 3]);
    }

    #[test]
    fn drift_full_lockdown_kills_infection_terms() {
        let mut params = params1(0.17, 1.0, 0.0, 0.0);
        params.epi.vaccination = 0.01;
        let x = StateVector::from_compartments(&[0.9], &[0.05], &[0.05]).unwrap();
        let policy = PolicyVector::constant(1, 1.0).unwrap();
        let b = drift(&x, &policy, &params).unwrap();
        assert_relative_eq!(b[0], -0.01 * 0.9, max_relative = 1e-12);
        assert_relative_eq!(b[1], -0.2 * 0.05, max_relative = 1e-12);
    }

    #[test]
    fn diffusion_hand_case() {
        let params = params1(0.17, 0.9, 2e-4, 2e-4);
        let x = StateVector::from_compartments(&[0.5], &[0.2], &[0.1]).unwrap();
        let out = diffusion_apply(&x, &[1.0, 1.0], &params).unwrap();
        assert_relative_eq!(out[0], -1e-4, max_relative = 1e-12);
        assert_relative_eq!(out[1], 1e-4 - 4e-5, max_relative = 1e-12);
        assert_relative_eq!(out[2], 4e-5, max_relative = 1e-12);
    }

    #[test]
    fn diffusion_zero_state_is_zero() {
        let params = params1(0.17, 0.9, 2e-4, 2e-4);
        let x = StateVector::new(vec![0.0; 3]).unwrap();
        assert_eq!(diffusion_apply(&x, &[3.0, -2.0], &params).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn running_cost_case_study_value() {
        let params = params1(0.17, 0.9, 0.0, 0.0);
        let x = StateVector::from_compartments(&[0.99], &[0.0], &[0.01]).unwrap();
        // Pⁿ of the test fixture is 1e6; rescale to the NY population by
        // building a dedicated parameter set.
        let mut params = params;
        params.regions = RegionSet::new(vec!["NY".into()], vec![19.54e6]).unwrap();
        let got = running_cost(0, 0.0, &x, 0.5, 0.0, &params);
        let expected = 19.54e6
            * (1.0 * 0.5 * 172.6
                + 100.0 * (5e-4 * 0.01 * 1.95e6 + 2.287e-3 * 0.01 * (73300.0 / 13.0)));
        assert_relative_eq!(got, expected, max_relative = 1e-12);
        // Magnitude pinned independently: ≈ 2.0990×10¹⁰ $/day.
        assert_relative_eq!(got, 2.0990e10, max_relative = 1e-3);
    }

    #[test]
    fn running_cost_zero_when_idle_and_healthy() {
        let params = params1(0.17, 0.9, 0.0, 0.0);
        let x = StateVector::from_compartments(&[0.99], &[0.01], &[0.0]).unwrap();
        assert_eq!(running_cost(0, 3.0, &x, 0.0, 0.0, &params), 0.0);
    }

    #[test]
    fn running_cost_linear_in_attention() {
        let mut params = params1(0.17, 0.9, 0.0, 0.0);
        let x = StateVector::from_compartments(&[0.9], &[0.05], &[0.03]).unwrap();
        let base = running_cost(0, 2.0, &x, 0.0, 0.0, &params);
        params.cost.attention *= 2.0;
        let doubled = running_cost(0, 2.0, &x, 0.0, 0.0, &params);
        assert_relative_eq!(doubled, 2.0 * base, max_relative = 1e-12);
    }

    #[test]
    fn running_cost_discount_applies() {
        let mut params = params1(0.17, 0.9, 0.0, 0.0);
        params.cost.discount = 0.01;
        let x = StateVector::from_compartments(&[0.9], &[0.05], &[0.03]).unwrap();
        let at0 = running_cost(0, 0.0, &x, 0.4, 0.0, &params);
        let at10 = running_cost(0, 10.0, &x, 0.4, 0.0, &params);
        assert_relative_eq!(at10, at0 * (-0.1f64).exp(), max_relative = 1e-12);
    }

    #[test]
    fn recovered_series_reconstructs_conservation() {
        assert_relative_eq!(recovered_fraction(0.9, 0.05, 0.03), 0.02, max_relative = 1e-12);
        let states = array![[0.9, 0.05, 0.03], [0.8, 0.1, 0.05]];
        let r = recovered_series(states.view(), 0);
        assert_relative_eq!(r[0], 0.02, max_relative = 1e-12);
        assert_relative_eq!(r[1], 0.05, max_relative = 1e-12);
        // A state with R=0 built from exactly-representable fractions
        // reconstructs exactly 0.
        let clean = array![[0.5, 0.25, 0.25]];
        assert_eq!(recovered_series(clean.view(), 0)[0], 0.0);
    }

    #[test]
    fn state_validity_reports_instead_of_clamping() {
        let x = StateVector::new(vec![1.2, -0.5, 0.4]).unwrap();
        let report = x.validity_report(STATE_TOL);
        let labels: Vec<_> = report.iter().map(|v| v.component.as_str()).collect();
        assert!(labels.contains(&"s[0]"), "got {labels:?}");
        assert!(labels.contains(&"e[0]"), "got {labels:?}");
        assert!(labels.contains(&"s+e+i[0]"), "got {labels:?}");
        // The state itself is untouched.
        assert_eq!(x.as_slice(), &[1.2, -0.5, 0.4]);
        // A physical state yields an empty report.
        let ok = StateVector::from_compartments(&[0.9], &[0.05], &[0.03]).unwrap();
        assert!(ok.validity_report(STATE_TOL).is_empty());
    }

    #[test]
    fn policy_vector_validates_box() {
        assert!(PolicyVector::new(vec![0.5], vec![1.1]).is_err());
        assert!(PolicyVector::new(vec![-0.1], vec![0.0]).is_err());
        assert!(PolicyVector::constant(3, 0.7).is_ok());
    }

    // --- property tests ---------------------------------------------------

    /// Strategy: a physically plausible joint state for `n` regions.
    fn state_strategy(n: usize) -> impl Strategy<Value = StateVector> {
        proptest::collection::vec((0.0..1.0f64, 0.0..1.0f64, 0.0..1.0f64), n).prop_map(|triples| {
            let (mut s, mut e, mut i) = (vec![], vec![], vec![]);
            for (a, b, c) in triples {
                // Normalize into the simplex so s+e+i ≤ 1.
                let scale = 1.0 + a + b + c;
                s.push(a / scale);
                e.push(b / scale);
                i.push(c / scale);
            }
            StateVector::from_compartments(&s, &e, &i).unwrap()
        })
    }

    fn params3_strategy() -> impl Strategy<Value = (ModelParams, PolicyVector)> {
        (
            0.0..0.5f64,
            0.0..1.0f64,
            proptest::collection::vec(0.0..1.0f64, 3),
            0.0..0.05f64,
        )
            .prop_map(|(beta, theta, ell, vaccination)| {
                let mut params = ModelParams::new(
                    regions3(),
                    EpiParams {
                        beta_matrix: build_transmission_matrix(beta, &travel3(), &regions3())
                            .unwrap(),
                        gamma: 0.2,
                        lambda: 1.0 / 13.0,
                        kappa: 5e-4,
                        theta,
                        sigma_s: vec![2e-4; 3],
                        sigma_e: vec![2e-4; 3],
                        vaccination: 0.0,
                    },
                    CostParams {
                        productivity: 172.6,
                        life_value: 1.95e6,
                        hospitalization_rate: 2.287e-3,
                        inpatient_cost: 73300.0 / 13.0,
                        attention: 100.0,
                        discount: 0.0,
                        health_weight: 0.0,
                        horizon: 180.0,
                    },
                )
                .unwrap();
                params.epi.vaccination = vaccination;
                let policy = PolicyVector::new(ell, vec![0.0; 3]).unwrap();
                (params, policy)
            })
    }

    proptest! {
        #[test]
        fn drift_conserves_total_mass((params, policy) in params3_strategy(), x in state_strategy(3)) {
            let b = drift(&x, &policy, &params).unwrap();
            let total: f64 = b.iter().sum();
            let expected: f64 = -(0..3)
                .map(|j| params.epi.lambda * x.i(j) + params.epi.vaccination * x.s(j))
                .sum::<f64>();
            prop_assert!((total - expected).abs() <= 1e-15 * (1.0 + expected.abs()),
                "drift sum {total} vs −Σ(λi+vs) {expected}");
        }

        #[test]
        fn diffusion_components_sum_to_zero(
            (params, _) in params3_strategy(),
            x in state_strategy(3),
            dw in proptest::collection::vec(-3.0..3.0f64, 6),
        ) {
            let out = diffusion_apply(&x, &dw, &params).unwrap();
            // Each ± pair cancels up to a single rounding of the combined
            // exposed-block entry.
            for j in 0..3 {
                let region_sum = out[j] + out[3 + j] + out[6 + j];
                let scale = out[j].abs() + out[6 + j].abs();
                prop_assert!(region_sum.abs() <= 2.0 * f64::EPSILON * (scale + 1e-300),
                    "region {j} sum {region_sum:e} vs noise scale {scale:e}");
            }
            // With one channel silent the cancellation is bitwise.
            let mut quiet = params.clone();
            quiet.epi.sigma_e = vec![0.0; 3];
            let out = diffusion_apply(&x, &dw, &quiet).unwrap();
            for j in 0..3 {
                prop_assert_eq!(out[j] + out[3 + j] + out[6 + j], 0.0);
            }
        }

        #[test]
        fn transmission_homogeneous_in_beta(beta in 0.0..2.0f64, scale in 0.1..10.0f64) {
            let base = build_transmission_matrix(beta, &travel3(), &regions3()).unwrap();
            let scaled = build_transmission_matrix(scale * beta, &travel3(), &regions3()).unwrap();
            for (a, b) in base.iter().zip(scaled.iter()) {
                prop_assert!((scale * a - b).abs() <= 1e-12 * (1.0 + b.abs()));
            }
        }

        #[test]
        fn transmission_population_weighted_symmetry(
            f01 in 0.0..0.3f64,
            f10 in 0.0..0.3f64,
            p0 in 1e5..1e8f64,
            p1 in 1e5..1e8f64,
        ) {
            let travel = TravelMatrix::new(
                array![[1.0 - f01, f01], [f10, 1.0 - f10]],
                false,
            ).unwrap();
            let regions = RegionSet::new(vec!["A".into(), "B".into()], vec![p0, p1]).unwrap();
            let m = build_transmission_matrix(0.2, &travel, &regions).unwrap();
            // The population-squared weighting is symmetric for any travel
            // matrix; the plain population weighting is symmetric only for
            // equal populations (covered by the next property).
            prop_assert!(
                (m[[0, 1]] * p0 * p0 - m[[1, 0]] * p1 * p1).abs()
                    <= 1e-9 * (1.0 + (m[[0, 1]] * p0 * p0).abs())
            );
        }

        #[test]
        fn transmission_equal_population_symmetry(
            frac in 0.0..1.0f64,
            diag in 0.5..1.0f64,
            p in 1e5..1e8f64,
        ) {
            // Pairwise-symmetric travel (f⁰¹=f¹⁰, f⁰⁰=f¹¹) with equal
            // populations makes the matrix itself symmetric.
            let f01 = frac * (1.0 - diag);
            let rest = 1.0 - diag - f01;
            let travel = TravelMatrix::new(
                array![[diag, f01, rest], [f01, diag, rest], [0.05, 0.05, 0.9]],
                true,
            ).unwrap();
            let regions = RegionSet::new(
                vec!["A".into(), "B".into(), "C".into()],
                vec![p, p, 2.0 * p],
            ).unwrap();
            let m = build_transmission_matrix(0.2, &travel, &regions).unwrap();
            prop_assert!((m[[0, 1]] * p - m[[1, 0]] * p).abs() <= 1e-12 * (1.0 + m[[0, 1]].abs()));
        }

        #[test]
        fn running_cost_monotone(
            (params, _) in params3_strategy(),
            x in state_strategy(3),
            ell in 0.0..1.0f64,
            bump in 0.0..0.5f64,
        ) {
            let base = running_cost(1, 0.0, &x, ell, 0.0, &params);
            // Non-decreasing in ℓ.
            let more_lockdown = running_cost(1, 0.0, &x, (ell + bump).min(1.0), 0.0, &params);
            prop_assert!(more_lockdown >= base - 1e-12 * base.abs());
            // Non-decreasing in a.
            let mut heavier = params.clone();
            heavier.cost.attention += 10.0;
            prop_assert!(running_cost(1, 0.0, &x, ell, 0.0, &heavier) >= base - 1e-12 * base.abs());
            // Non-decreasing in iₙ (built from a fresh state with larger i).
            let mut raw = x.as_slice().to_vec();
            raw[7] = (raw[7] + bump).min(1.0);
            let sicker = StateVector::new(raw).unwrap();
            prop_assert!(running_cost(1, 0.0, &sicker, ell, 0.0, &params) >= base - 1e-12 * base.abs());
        }
    }
}
