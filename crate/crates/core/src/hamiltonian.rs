//! Per-player stage analytics: Hamiltonian, best response, reduced drift,
//! and the BSDE driver.
//!
//! At every fictitious-play stage, player `n` faces the scalar minimization
//!
//! ```text
//! min_{ℓⁿ ∈ [0,1]}  Hⁿ(t, x, (ℓⁿ, ℓ⁻ⁿ), ∇ₓVⁿ)
//!                 = b(t, x, ℓ) · ∇ₓVⁿ + fⁿ(t, x, ℓⁿ)
//! ```
//!
//! with the opponents' lockdown levels `ℓ⁻ⁿ` frozen. Because the drift is
//! bilinear in `(1−θℓⁿ)` and the wage cost is linear in `ℓⁿ`, `Hⁿ` is a
//! quadratic polynomial in `ℓⁿ` whose coefficients involve the gradient only
//! through the weighted differences
//!
//! ```text
//! sⱼDⱼ = σ_{s_j}⁻¹ zⱼ,      Dⱼ = ∂_{e_j}V − ∂_{s_j}V,
//! ```
//!
//! i.e. through the susceptible block of `z = Σ(x)ᵀ∇ₓV`. This module fixes
//! that algebra once: the closed-form clipped minimizer ([`best_response`]),
//! the control-independent drift remainder ([`reduced_drift`]), and the
//! driver `g` ([`bsde_driver`]) that absorbs every `ℓⁿ`-dependent term, so
//! that the splitting identity
//!
//! ```text
//! min_{ℓⁿ} Hⁿ = μⁿ · ∇ₓVⁿ + gⁿ(t, x, z)
//! ```
//!
//! holds pointwise. A brute-force grid oracle ([`grid_argmin_oracle`])
//! arbitrates correctness in the test suites.

use crate::error::{Error, Result};
use crate::model::{self, layout, ModelParams};

/// Degeneracy threshold on the quadratic's denominator `2θAₙ`.
///
/// At or below this value the Hamiltonian is treated as affine in `ℓⁿ` (the
/// quadratic coefficient is numerically zero or negative, i.e. the parabola
/// is flat or concave), and the minimizer is resolved by comparing the two
/// endpoints `{0, 1}`, the smaller `ℓ` winning ties.
pub const EPS_DEGENERATE: f64 = 1e-12;

/// A value-function gradient in one or both of its two usable forms: the full
/// spatial gradient `∇ₓV ∈ ℝ³ᴺ` and/or the diffusion-weighted form
/// `z = Σ(x)ᵀ∇ₓV ∈ ℝ²ᴺ` that the BSDE parametrizes directly.
///
/// All Hamiltonian formulas consume the products `sⱼDⱼ`; those are recovered
/// from `z` as `zⱼ/σ_{s_j}` without ever dividing by `sⱼ`, so states with
/// empty susceptible pools need no special-casing (the terms carry `sⱼ` and
/// vanish with it).
#[derive(Debug, Clone)]
pub struct GradientView {
    z: Vec<f64>,
    full: Option<Vec<f64>>,
}

impl GradientView {
    /// Build from a full spatial gradient; `z` is derived as `Σ(x)ᵀ∇ₓV`.
    pub fn from_full(grad: &[f64], x: &[f64], params: &ModelParams) -> Self {
        let n = params.n_regions();
        debug_assert_eq!(grad.len(), 3 * n);
        let mut z = vec![0.0; 2 * n];
        for j in 0..n {
            z[j] = params.epi.sigma_s[j]
                * x[layout::s(n, j)]
                * (grad[layout::e(n, j)] - grad[layout::s(n, j)]);
            z[n + j] = params.epi.sigma_e[j]
                * x[layout::e(n, j)]
                * (grad[layout::i(n, j)] - grad[layout::e(n, j)]);
        }
        GradientView {
            z,
            full: Some(grad.to_vec()),
        }
    }

    /// Build from the diffusion-weighted gradient alone (the solver's case:
    /// the networks emit `z` directly).
    pub fn from_z(z: Vec<f64>) -> Self {
        GradientView { z, full: None }
    }

    pub fn z(&self) -> &[f64] {
        &self.z
    }

    pub fn full(&self) -> Option<&[f64]> {
        self.full.as_deref()
    }

    /// The product `sⱼ·Dⱼ` for the susceptible channel of region `j`.
    ///
    /// Uses the full gradient when available (valid even at `σ_{s_j} = 0`),
    /// otherwise recovers from `z`, which requires `σ_{s_j} > 0`.
    pub fn susceptible_gap(&self, j: usize, x: &[f64], params: &ModelParams) -> f64 {
        let n = params.n_regions();
        match &self.full {
            Some(grad) => {
                x[layout::s(n, j)] * (grad[layout::e(n, j)] - grad[layout::s(n, j)])
            }
            None => {
                debug_assert!(
                    params.epi.sigma_s[j] > 0.0,
                    "z-only gradient recovery needs σ_s > 0"
                );
                self.z[j] / params.epi.sigma_s[j]
            }
        }
    }
}

/// The quadratic-in-`ℓⁿ` reduction of player `n`'s Hamiltonian:
/// `Hⁿ(ℓ) = quad·ℓ² + lin·ℓ + (ℓ-independent part)`.
struct LockdownQuadratic {
    quad: f64,
    lin: f64,
    /// The attention-cost part of `fⁿ` (enters `g`, not the minimizer).
    attention: f64,
}

fn lockdown_quadratic(
    n: usize,
    t: f64,
    x: &[f64],
    grad: &GradientView,
    others_ell: &[f64],
    params: &ModelParams,
) -> LockdownQuadratic {
    let regions = params.n_regions();
    let beta = &params.epi.beta_matrix;
    let theta = params.epi.theta;
    let discount = (-params.cost.discount * t).exp();
    let i_n = x[layout::i(regions, n)];
    let alive =
        x[layout::s(regions, n)] + x[layout::e(regions, n)] + x[layout::i(regions, n)];

    let gap_n = grad.susceptible_gap(n, x, params);
    // Aₙ = βⁿⁿ sₙ iₙ Dₙ, via the sₙDₙ product.
    let a_n = beta[[n, n]] * i_n * gap_n;
    // Σ_{j≠n} (1−θℓʲ)(Cⱼ + C'ⱼ) with Cⱼ = βʲⁿ sⱼ iₙ Dⱼ, C'ⱼ = βⁿʲ sₙ iⱼ Dₙ.
    let mut cross = 0.0;
    for j in 0..regions {
        if j == n {
            continue;
        }
        let gap_j = grad.susceptible_gap(j, x, params);
        cross += (1.0 - theta * others_ell[j])
            * (beta[[j, n]] * i_n * gap_j + beta[[n, j]] * x[layout::i(regions, j)] * gap_n);
    }
    let wage = discount * params.regions.population(n) * alive * params.cost.productivity;
    let attention = discount
        * params.regions.population(n)
        * params.cost.attention
        * (params.epi.kappa * i_n * params.cost.life_value
            + params.cost.hospitalization_rate * i_n * params.cost.inpatient_cost);
    LockdownQuadratic {
        quad: theta * theta * a_n,
        lin: wage - theta * (2.0 * a_n + cross),
        attention,
    }
}

/// Evaluate player `n`'s Hamiltonian `b(t,x,ℓ)·∇ₓV + fⁿ(t,x,ℓⁿ)` at a full
/// lockdown profile `ℓ_all` (health effort 0; its cost channel never enters
/// the minimization).
pub fn hamiltonian_value(
    n: usize,
    t: f64,
    x: &[f64],
    ell_all: &[f64],
    grad_full: &[f64],
    params: &ModelParams,
) -> f64 {
    let mut drift = vec![0.0; x.len()];
    hamiltonian_value_with(n, t, x, ell_all, grad_full, params, &mut drift)
}

/// Allocation-free worker behind [`hamiltonian_value`]; `scratch` must have
/// length `3N`.
pub(crate) fn hamiltonian_value_with(
    n: usize,
    t: f64,
    x: &[f64],
    ell_all: &[f64],
    grad_full: &[f64],
    params: &ModelParams,
    scratch: &mut [f64],
) -> f64 {
    model::drift_into(x, ell_all, params, scratch);
    let dot: f64 = scratch.iter().zip(grad_full).map(|(b, g)| b * g).sum();
    dot + model::running_cost_slice(n, t, x, ell_all[n], 0.0, params)
}

/// Closed-form minimizer of the Hamiltonian over `ℓⁿ ∈ [0,1]`.
///
/// For a strictly convex quadratic (denominator `2θAₙ > ε`) the critical
/// point
///
/// ```text
/// ℓ* = [2Aₙ + Σ_{j≠n}(1−θℓʲ)(Cⱼ + C'ⱼ) − e^{−rt}Pⁿ(sₙ+eₙ+iₙ)w/θ] / (2θAₙ)
/// ```
///
/// is clipped to `[0,1]`. Degenerate cases (flat or concave in `ℓⁿ`,
/// including `θ = 0` and `iₙ = 0`) compare the endpoint values and return
/// the smaller-`ℓ` winner on ties.
///
/// `others_ell` must have length `N`; entry `n` is ignored.
pub fn best_response(
    n: usize,
    t: f64,
    x: &[f64],
    grad: &GradientView,
    others_ell: &[f64],
    params: &ModelParams,
) -> f64 {
    let q = lockdown_quadratic(n, t, x, grad, others_ell, params);
    let denominator = 2.0 * q.quad; // = 2θ·(θAₙ) = 2θAₙ·θ; see note below.
    // The design threshold is on 2θAₙ; quad = θ²Aₙ, so compare against
    // ε·θ/… — both expressions are ~1e-12-scale cutoffs for an affine
    // Hamiltonian. We test `2θAₙ = 2·quad/θ` when θ > 0, else degenerate.
    let theta = params.epi.theta;
    let degenerate = if theta > 0.0 {
        2.0 * q.quad / theta <= EPS_DEGENERATE
    } else {
        true
    };
    if degenerate {
        // Affine (or concave) in ℓⁿ: endpoint comparison, ties to 0.
        // H(1) − H(0) = quad + lin.
        if q.quad + q.lin < 0.0 {
            1.0
        } else {
            0.0
        }
    } else {
        (-q.lin / denominator).clamp(0.0, 1.0)
    }
}

/// Brute-force argmin of [`hamiltonian_value`] over the uniform grid
/// `{0, 1/m, …, 1}` with `m = round(1/resolution)` — the verification oracle
/// for [`best_response`]. Ties resolve to the smallest `ℓ`.
pub fn grid_argmin_oracle(
    n: usize,
    t: f64,
    x: &[f64],
    grad_full: &[f64],
    others_ell: &[f64],
    params: &ModelParams,
    resolution: f64,
) -> f64 {
    assert!(resolution > 0.0 && resolution <= 1.0, "resolution must lie in (0,1]");
    let m = (1.0 / resolution).round().max(1.0) as usize;
    let mut ell_all = others_ell.to_vec();
    let mut scratch = vec![0.0; x.len()];
    let mut best = (f64::INFINITY, 0.0);
    for idx in 0..=m {
        let ell = idx as f64 / m as f64;
        ell_all[n] = ell;
        let value = hamiltonian_value_with(n, t, x, &ell_all, grad_full, params, &mut scratch);
        if value < best.0 {
            best = (value, ell);
        }
    }
    best.1
}

/// Control-independent part `μⁿ` of player `n`'s reduced forward drift:
/// every factor `(1−θℓⁿ)` of the full drift is stripped (those terms move
/// into the driver `g`), while opponents' factors stay frozen at
/// `others_ell`. Vaccination does not appear (the reduced dynamics are
/// defined for the `v = 0` game).
pub fn reduced_drift_into(
    n: usize,
    x: &[f64],
    others_ell: &[f64],
    params: &ModelParams,
    out: &mut [f64],
) {
    let regions = params.n_regions();
    debug_assert_eq!(x.len(), 3 * regions);
    debug_assert_eq!(out.len(), 3 * regions);
    let beta = &params.epi.beta_matrix;
    let theta = params.epi.theta;
    for j in 0..regions {
        let s_j = x[layout::s(regions, j)];
        let e_j = x[layout::e(regions, j)];
        let i_j = x[layout::i(regions, j)];
        let own = if j == n {
            1.0
        } else {
            1.0 - theta * others_ell[j]
        };
        let mut infection = 0.0;
        for k in 0..regions {
            let peer = if k == n {
                1.0
            } else {
                1.0 - theta * others_ell[k]
            };
            infection += beta[[j, k]] * s_j * x[layout::i(regions, k)] * own * peer;
        }
        let latent = params.epi.gamma * e_j;
        let removal = params.epi.lambda * i_j;
        out[layout::s(regions, j)] = -infection;
        out[layout::e(regions, j)] = infection - latent;
        out[layout::i(regions, j)] = latent - removal;
    }
}

/// Allocating wrapper over [`reduced_drift_into`].
pub fn reduced_drift(
    n: usize,
    x: &[f64],
    others_ell: &[f64],
    params: &ModelParams,
) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    reduced_drift_into(n, x, others_ell, params, &mut out);
    out
}

/// BSDE driver `gⁿ(t, x, z; ℓ⁻ⁿ)`: the `ℓⁿ`-dependent part of the minimized
/// Hamiltonian, evaluated at `ℓⁿ* = best_response`, plus the attention cost:
///
/// ```text
/// g = θ²Aₙ(ℓ*)² + [e^{−rt}Pⁿ(sₙ+eₙ+iₙ)w − θ(2Aₙ + Σ_{j≠n}(1−θℓʲ)(Cⱼ+C'ⱼ))]ℓ*
///   + e^{−rt}Pⁿa(κiₙχ + p iₙ c),
/// ```
///
/// with every `AₙCⱼC'ⱼ` recovered from `z`'s susceptible block. Requires
/// `σ_{s_j} > 0` (the solver rejects configurations violating this).
pub fn bsde_driver(
    n: usize,
    t: f64,
    x: &[f64],
    z: &[f64],
    others_ell: &[f64],
    params: &ModelParams,
) -> Result<f64> {
    let regions = params.n_regions();
    if z.len() != 2 * regions {
        return Err(Error::DimensionMismatch(format!(
            "bsde driver: z has length {}, expected {}",
            z.len(),
            2 * regions
        )));
    }
    if params.epi.sigma_s.iter().any(|s| *s <= 0.0) {
        return Err(Error::invalid(
            "bsde driver: σ_s must be positive componentwise to recover the gradient from z",
        ));
    }
    let grad = GradientView::from_z(z.to_vec());
    let ell_star = best_response(n, t, x, &grad, others_ell, params);
    let q = lockdown_quadratic(n, t, x, &grad, others_ell, params);
    Ok(q.quad * ell_star * ell_star + q.lin * ell_star + q.attention)
}
