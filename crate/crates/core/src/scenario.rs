//! Scenario files: the TOML schema that configures a run, and its resolution
//! into model parameters, an initial state, and solver settings.
//!
//! A scenario file contains the following sections (`[initial]` and
//! `[solver]` are optional; exactly one of `[calibration]` / `[rates]` is
//! required):
//!
//! ```text
//! name = "three-state"                 # optional label for outputs
//!
//! [regions]        names, populations
//! [travel]         matrix (row-stochastic), allow_open_system
//! [calibration]    r0, infectious_days, infection_fatality_rate, latent_days
//! [rates]          beta, gamma, lambda, kappa        # alternative to above
//! [noise]          sigma_s, sigma_e                  # scalar or per-region
//! [policy]         theta, vaccination (default 0)
//! [cost]           productivity, life_value, hospitalization_rate,
//!                  inpatient_cost, attention, horizon,
//!                  discount (default 0), health_weight (default 0)
//! [initial]        s, e, i                           # per-region fractions
//! [solver]         overrides of the built-in training defaults
//! ```
//!
//! Resolution turns headline inputs into per-day rates,
//!
//! ```text
//! β = r0 / infectious_days         λ = 1 / infectious_days
//! κ = ifr / infectious_days        γ = 1 / latent_days
//! ```
//!
//! expands β and the travel matrix into the full cross-region transmission
//! matrix, and validates every field. Unknown keys are rejected so that a
//! typo cannot silently fall back to a default.
//!
//! Every parsed scenario carries a **digest**: the SHA-256 of a canonical
//! JSON rendering of the parsed TOML value, with object keys sorted. The
//! digest is therefore invariant under key reordering, whitespace, and
//! comments, but changes whenever any configured value changes. Artifacts
//! (checkpoints, CSV outputs, manifests) embed this digest so that results
//! can always be traced back to the exact configuration that produced them.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{
    build_transmission_matrix, calibrate, CalibratedRates, CostParams, EpiParams, ModelParams,
    RegionSet, TravelMatrix,
};
use crate::solver::SolverConfig;

/// Slack on `s + e + i ≤ 1` for configured initial states.
const INITIAL_SUM_TOL: f64 = 1e-9;

/// A scalar that broadcasts across regions, or an explicit per-region list.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum PerRegion {
    Scalar(f64),
    Each(Vec<f64>),
}

impl PerRegion {
    fn resolve(&self, field: &str, n: usize) -> Result<Vec<f64>> {
        match self {
            PerRegion::Scalar(v) => Ok(vec![*v; n]),
            PerRegion::Each(vs) => {
                if vs.len() != n {
                    return Err(Error::Config(format!(
                        "{field}: expected {n} entries (one per region), got {}",
                        vs.len()
                    )));
                }
                Ok(vs.clone())
            }
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RegionsSection {
    names: Vec<String>,
    populations: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct TravelSection {
    matrix: Vec<Vec<f64>>,
    #[serde(default)]
    allow_open_system: bool,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
struct CalibrationSection {
    r0: f64,
    infectious_days: f64,
    infection_fatality_rate: f64,
    latent_days: f64,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
struct RatesSection {
    beta: f64,
    gamma: f64,
    lambda: f64,
    kappa: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct NoiseSection {
    sigma_s: PerRegion,
    sigma_e: PerRegion,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
struct PolicySection {
    theta: f64,
    #[serde(default)]
    vaccination: f64,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
struct CostSection {
    productivity: f64,
    life_value: f64,
    hospitalization_rate: f64,
    inpatient_cost: f64,
    attention: f64,
    #[serde(default)]
    discount: f64,
    #[serde(default)]
    health_weight: f64,
    horizon: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct InitialSection {
    s: Vec<f64>,
    e: Vec<f64>,
    i: Vec<f64>,
}

/// Optional overrides of [`SolverConfig::case_study_defaults`]. Fields left
/// out keep the built-in defaults; `config_digest` and checkpointing paths
/// are controlled by the caller, not the scenario file.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SolverSection {
    stages: Option<usize>,
    sgd_steps_per_stage: Option<usize>,
    batch_size: Option<usize>,
    time_steps: Option<usize>,
    learning_rate: Option<f64>,
    policy_weight: Option<f64>,
    convergence_threshold: Option<f64>,
    seed: Option<u64>,
    validation_paths: Option<usize>,
    probe_points: Option<usize>,
    hidden_widths: Option<Vec<usize>>,
    cost_scale: Option<Vec<f64>>,
    checkpoint_every: Option<usize>,
    parallel_players: Option<bool>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    name: Option<String>,
    regions: RegionsSection,
    travel: TravelSection,
    calibration: Option<CalibrationSection>,
    rates: Option<RatesSection>,
    noise: NoiseSection,
    policy: PolicySection,
    cost: CostSection,
    initial: Option<InitialSection>,
    solver: Option<SolverSection>,
}

/// A parsed (but not yet validated) scenario plus its configuration digest.
#[derive(Debug, Clone)]
pub struct Scenario {
    file: ScenarioFile,
    digest: String,
}

/// A fully validated scenario: model parameters, derived rates, the optional
/// initial state, solver settings (digest already embedded), and the digest
/// itself.
#[derive(Debug, Clone, Serialize)]
pub struct ResolvedScenario {
    /// Label for output naming; `"scenario"` when the file has no `name`.
    pub name: String,
    /// SHA-256 of the canonical JSON form of the configuration.
    pub digest: String,
    /// Complete model: regions, epidemiology, costs.
    pub params: ModelParams,
    /// Per-day rates, either derived from `[calibration]` or passed through
    /// from `[rates]`.
    pub rates: CalibratedRates,
    /// Initial joint state `(s | e | i)`, when the file provides `[initial]`.
    pub initial: Option<Vec<f64>>,
    /// Training settings with `config_digest` set to [`Self::digest`].
    pub solver: SolverConfig,
}

impl Scenario {
    /// Parse scenario TOML. The digest is computed here, from the parsed
    /// value, so key order, comments, and formatting do not affect it.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let value: toml::Value = toml::from_str(text)
            .map_err(|e| Error::Config(format!("scenario: {}", compact(&e.to_string()))))?;
        let digest = canonical_digest(&value)?;
        let file: ScenarioFile = toml::from_str(text)
            .map_err(|e| Error::Config(format!("scenario: {}", compact(&e.to_string()))))?;
        Ok(Scenario { file, digest })
    }

    /// Read and parse a scenario file from disk.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Scenario::from_toml_str(&text)
    }

    /// SHA-256 digest of the canonical configuration (hex, 64 chars).
    pub fn digest(&self) -> &str {
        &self.digest
    }

    /// Validate every section and assemble the resolved scenario.
    pub fn resolve(&self) -> Result<ResolvedScenario> {
        let f = &self.file;
        let regions = RegionSet::new(f.regions.names.clone(), f.regions.populations.clone())?;
        let n = regions.count();

        let travel = build_travel(&f.travel, n)?;
        let rates = match (&f.calibration, &f.rates) {
            (Some(c), None) => calibrate(
                c.r0,
                c.infectious_days,
                c.infection_fatality_rate,
                c.latent_days,
            )?,
            (None, Some(r)) => {
                for (name, v) in [
                    ("rates.beta", r.beta),
                    ("rates.gamma", r.gamma),
                    ("rates.lambda", r.lambda),
                    ("rates.kappa", r.kappa),
                ] {
                    if !(v.is_finite() && v >= 0.0) {
                        return Err(Error::Config(format!("{name}: must be ≥ 0, got {v}")));
                    }
                }
                CalibratedRates {
                    beta: r.beta,
                    lambda: r.lambda,
                    kappa: r.kappa,
                    gamma: r.gamma,
                }
            }
            (Some(_), Some(_)) => {
                return Err(Error::Config(
                    "scenario: provide exactly one of [calibration] or [rates], found both"
                        .into(),
                ))
            }
            (None, None) => {
                return Err(Error::Config(
                    "scenario: provide exactly one of [calibration] or [rates], found neither"
                        .into(),
                ))
            }
        };

        let beta_matrix = build_transmission_matrix(rates.beta, &travel, &regions)?;
        let epi = EpiParams {
            beta_matrix,
            gamma: rates.gamma,
            lambda: rates.lambda,
            kappa: rates.kappa,
            theta: f.policy.theta,
            sigma_s: f.noise.sigma_s.resolve("noise.sigma_s", n)?,
            sigma_e: f.noise.sigma_e.resolve("noise.sigma_e", n)?,
            vaccination: f.policy.vaccination,
        };
        let cost = CostParams {
            productivity: f.cost.productivity,
            life_value: f.cost.life_value,
            hospitalization_rate: f.cost.hospitalization_rate,
            inpatient_cost: f.cost.inpatient_cost,
            attention: f.cost.attention,
            discount: f.cost.discount,
            health_weight: f.cost.health_weight,
            horizon: f.cost.horizon,
        };
        let params = ModelParams::new(regions, epi, cost)?;

        let initial = match &f.initial {
            Some(init) => Some(resolve_initial(init, n)?),
            None => None,
        };

        let mut solver = SolverConfig::case_study_defaults();
        if let Some(s) = &f.solver {
            apply_solver_overrides(&mut solver, s);
        }
        solver.config_digest = self.digest.clone();
        solver.validate(n)?;

        Ok(ResolvedScenario {
            name: f.name.clone().unwrap_or_else(|| "scenario".into()),
            digest: self.digest.clone(),
            params,
            rates,
            initial,
            solver,
        })
    }
}

impl ResolvedScenario {
    /// The configured initial state, or a `Config` error naming the missing
    /// section when the file omitted `[initial]`.
    pub fn initial_state(&self) -> Result<&[f64]> {
        self.initial.as_deref().ok_or_else(|| {
            Error::Config(
                "initial: this command needs a starting state; add an [initial] section \
                 with per-region `s`, `e`, `i` fractions"
                    .into(),
            )
        })
    }
}

fn build_travel(section: &TravelSection, n: usize) -> Result<TravelMatrix> {
    if section.matrix.len() != n {
        return Err(Error::Config(format!(
            "travel.matrix: expected {n} rows (one per region), got {}",
            section.matrix.len()
        )));
    }
    let mut flat = Vec::with_capacity(n * n);
    for (row_idx, row) in section.matrix.iter().enumerate() {
        if row.len() != n {
            return Err(Error::Config(format!(
                "travel.matrix: row {row_idx} has {} entries, expected {n}",
                row.len()
            )));
        }
        flat.extend_from_slice(row);
    }
    let array = ndarray::Array2::from_shape_vec((n, n), flat)
        .expect("matrix dimensions were just checked");
    TravelMatrix::new(array, section.allow_open_system)
}

fn resolve_initial(init: &InitialSection, n: usize) -> Result<Vec<f64>> {
    for (field, values) in [("initial.s", &init.s), ("initial.e", &init.e), ("initial.i", &init.i)]
    {
        if values.len() != n {
            return Err(Error::Config(format!(
                "{field}: expected {n} entries (one per region), got {}",
                values.len()
            )));
        }
        for (j, v) in values.iter().enumerate() {
            if !(v.is_finite() && (0.0..=1.0).contains(v)) {
                return Err(Error::Config(format!(
                    "{field}[{j}]: fraction must lie in [0,1], got {v}"
                )));
            }
        }
    }
    for j in 0..n {
        let sum = init.s[j] + init.e[j] + init.i[j];
        if sum > 1.0 + INITIAL_SUM_TOL {
            return Err(Error::Config(format!(
                "initial: region {j} has s+e+i = {sum} > 1"
            )));
        }
    }
    let mut x0 = Vec::with_capacity(3 * n);
    x0.extend_from_slice(&init.s);
    x0.extend_from_slice(&init.e);
    x0.extend_from_slice(&init.i);
    Ok(x0)
}

fn apply_solver_overrides(config: &mut SolverConfig, s: &SolverSection) {
    if let Some(v) = s.stages {
        config.stages = v;
    }
    if let Some(v) = s.sgd_steps_per_stage {
        config.sgd_steps_per_stage = v;
    }
    if let Some(v) = s.batch_size {
        config.batch_size = v;
    }
    if let Some(v) = s.time_steps {
        config.time_steps = v;
    }
    if let Some(v) = s.learning_rate {
        config.learning_rate = v;
    }
    if let Some(v) = s.policy_weight {
        config.policy_weight = v;
    }
    if let Some(v) = s.convergence_threshold {
        config.convergence_threshold = v;
    }
    if let Some(v) = s.seed {
        config.seed = v;
    }
    if let Some(v) = s.validation_paths {
        config.validation_paths = v;
    }
    if let Some(v) = s.probe_points {
        config.probe_points = v;
    }
    if let Some(v) = &s.hidden_widths {
        config.hidden_widths = v.clone();
    }
    if let Some(v) = &s.cost_scale {
        config.cost_scale = Some(v.clone());
    }
    if let Some(v) = s.checkpoint_every {
        config.checkpoint_every = Some(v);
    }
    if let Some(v) = s.parallel_players {
        config.parallel_players = v;
    }
}

/// SHA-256 of the canonical JSON rendering of a TOML value. JSON objects are
/// serialized with sorted keys (the map type is ordered), so two files that
/// differ only in key order, comments, or whitespace hash identically.
fn canonical_digest(value: &toml::Value) -> Result<String> {
    let json = serde_json::to_value(value)?;
    let text = serde_json::to_string(&json)?;
    let mut hasher = Sha256::new();
    hasher.update(text.as_bytes());
    Ok(format!("{:x}", hasher.finalize()))
}

/// TOML errors are multi-line (they carry a caret diagram); collapse them to
/// one line so they compose with the process exit-code reporting.
fn compact(msg: &str) -> String {
    msg.split_whitespace().collect::<Vec<_>>().join(" ")
}
