//! Lyapunov functions for both closed loops and their closed-form derivatives
//! along the incremental dynamics.
//!
//! Unconstrained case: the quadratic
//! `V = ½‖x̃‖² + ½‖x̃_p‖² + ½‖x̃_e‖²` with
//! `V̇ = −γ_c‖Bᵀx̃‖² − γ_l‖B_cᵀx̃_p‖²`.
//!
//! Saturated case: `V = ½‖x̃‖² + Σᵢ S^p_i + Σᵢ S^e_i` where each `S` is a
//! running integral of a scalar saturation, evaluated in closed form as a
//! piecewise quadratic. `S^e` integrates up to `−χᵢ` with
//! `χ = γ_e x̃_e + γ_c Bᵀx̃` and carries a `1/γ_e²` prefactor;
//! `V̇ = −γ_c‖B·sat_e‖² − γ_l‖B_cᵀ·sat_p‖²`. These formulas require the
//! shifted-bound sign pattern (`x^− < 0 < x^+`) for positive definiteness,
//! and the derivative identity is exact for `γ_e = 1` (see the crate tests;
//! for `γ_e ≠ 1` the mixed partial derivatives of the printed function do not
//! commute and the identity acquires a cross term).

use crate::error::Error;
use crate::gains::Gains;
use crate::optimum::CostModel;
use crate::steady_state::ShiftedSatBounds;
use crate::Result;
use nalgebra::{DMatrix, DVector};

/// Incremental coordinates `x̃ = x − x̄ − x̂`, `x̃_p = x_p − x̄_p − x̂_p`,
/// `x̃_e = x_e − x̄_e − x̂_e` (hats zero in the unconstrained case).
#[derive(Debug, Clone, PartialEq)]
pub struct IncrementalCoords {
    pub x: DVector<f64>,
    pub x_p: DVector<f64>,
    pub x_e: DVector<f64>,
}

/// Quadratic Lyapunov value `½(‖x̃‖² + ‖x̃_p‖² + ‖x̃_e‖²)`.
pub fn v_unconstrained(inc: &IncrementalCoords) -> f64 {
    0.5 * (inc.x.norm_squared() + inc.x_p.norm_squared() + inc.x_e.norm_squared())
}

/// Closed-form derivative `V̇ = −γ_c‖Bᵀx̃‖² − γ_l‖B_cᵀx̃_p‖²`
/// (the second term is evaluated as `x̃_pᵀ L_c x̃_p`).
pub fn vdot_unconstrained_formula(
    inc: &IncrementalCoords,
    b: &DMatrix<f64>,
    lc: &DMatrix<f64>,
    gains: &Gains,
) -> f64 {
    let bt_x = b.transpose() * &inc.x;
    let quad = inc.x_p.dot(&(lc * &inc.x_p));
    -gains.gamma_c * bt_x.norm_squared() - gains.gamma_l * quad
}

/// `∫₀^z sat(y; a, b) dy` in closed form (piecewise quadratic).
///
/// Valid for any `a ≤ b`, including infinite bounds; positive semidefinite
/// in `z` exactly when `a < 0 < b`.
pub fn sat_integral(z: f64, a: f64, b: f64) -> f64 {
    debug_assert!(a <= b);
    if z < a {
        // a finite here since z ≥ −∞ strictly exceeds a = −∞ never holds
        a * z - 0.5 * a * a
    } else if z > b {
        b * z - 0.5 * b * b
    } else {
        0.5 * z * z
    }
}

/// `sat_e(x̃, x̃_e) = sat(−γ_c Bᵀx̃ − γ_e x̃_e; x_e^−, x_e^+)`.
pub fn sat_e(
    inc: &IncrementalCoords,
    b: &DMatrix<f64>,
    gains: &Gains,
    shifted: &ShiftedSatBounds,
) -> DVector<f64> {
    let drive = -(b.transpose() * &inc.x) * gains.gamma_c - &inc.x_e * gains.gamma_e;
    DVector::from_fn(drive.len(), |j, _| {
        crate::controllers::sat_scalar(drive[j], shifted.xe_min[j], shifted.xe_max[j])
    })
}

/// `sat_p(x̃_p) = sat(x̃_p; x_p^−, x_p^+)`.
pub fn sat_p(inc: &IncrementalCoords, shifted: &ShiftedSatBounds) -> DVector<f64> {
    DVector::from_fn(inc.x_p.len(), |i, _| {
        crate::controllers::sat_scalar(inc.x_p[i], shifted.xp_min[i], shifted.xp_max[i])
    })
}

/// Saturated-integral Lyapunov value (unchecked): finite for any shifted
/// bounds, positive definite only under the sign pattern `x^− < 0 < x^+`.
pub fn v_saturated_value(
    inc: &IncrementalCoords,
    shifted: &ShiftedSatBounds,
    b: &DMatrix<f64>,
    gains: &Gains,
) -> f64 {
    let mut v = 0.5 * inc.x.norm_squared();
    for i in 0..inc.x_p.len() {
        v += sat_integral(inc.x_p[i], shifted.xp_min[i], shifted.xp_max[i]);
    }
    let chi = &inc.x_e * gains.gamma_e + (b.transpose() * &inc.x) * gains.gamma_c;
    let pref = 1.0 / (gains.gamma_e * gains.gamma_e);
    for j in 0..chi.len() {
        v += pref * sat_integral(-chi[j], shifted.xe_min[j], shifted.xe_max[j]);
    }
    v
}

/// Saturated-integral Lyapunov value, rejecting shifted bounds that violate
/// the sign pattern (the function is not positive definite there).
pub fn v_saturated(
    inc: &IncrementalCoords,
    shifted: &ShiftedSatBounds,
    b: &DMatrix<f64>,
    gains: &Gains,
) -> Result<f64> {
    if !shifted.signs_hold() {
        return Err(Error::Validation(
            "shifted saturation bounds must satisfy x^- < 0 < x^+ for a positive definite V".into(),
        ));
    }
    Ok(v_saturated_value(inc, shifted, b, gains))
}

/// Closed-form derivative `V̇ = −γ_c‖B·sat_e‖² − γ_l‖B_cᵀ·sat_p‖²`.
pub fn vdot_saturated_formula(
    inc: &IncrementalCoords,
    b: &DMatrix<f64>,
    lc: &DMatrix<f64>,
    gains: &Gains,
    shifted: &ShiftedSatBounds,
) -> f64 {
    let se = sat_e(inc, b, gains, shifted);
    let sp = sat_p(inc, shifted);
    let quad = sp.dot(&(lc * &sp));
    -gains.gamma_c * (b * se).norm_squared() - gains.gamma_l * quad
}

/// Incremental closed-loop derivatives, unconstrained case:
///
/// ```text
/// ẋ̃   = −γ_c B Bᵀ x̃ − γ_e B x̃_e + γ_p Q⁻¹ x̃_p
/// ẋ̃_p = −γ_l L_c x̃_p − γ_p Q⁻¹ x̃
/// ẋ̃_e = γ_e Bᵀ x̃
/// ```
pub fn incremental_rhs_unconstrained(
    inc: &IncrementalCoords,
    b: &DMatrix<f64>,
    lc: &DMatrix<f64>,
    cost: &CostModel,
    gains: &Gains,
) -> IncrementalCoords {
    let bt_x = b.transpose() * &inc.x;
    IncrementalCoords {
        x: -(b * &bt_x) * gains.gamma_c - (b * &inc.x_e) * gains.gamma_e
            + inc.x_p.component_div(&cost.q) * gains.gamma_p,
        x_p: -(lc * &inc.x_p) * gains.gamma_l - inc.x.component_div(&cost.q) * gains.gamma_p,
        x_e: bt_x * gains.gamma_e,
    }
}

/// Incremental closed-loop derivatives, saturated case:
///
/// ```text
/// ẋ̃   = B·sat_e + γ_p Q⁻¹·sat_p
/// ẋ̃_p = −γ_l L_c·sat_p + γ_p γ_c Q⁻¹ B·sat_e − γ_p Q⁻¹ x̃
/// ẋ̃_e = γ_e Bᵀ x̃
/// ```
pub fn incremental_rhs_saturated(
    inc: &IncrementalCoords,
    b: &DMatrix<f64>,
    lc: &DMatrix<f64>,
    cost: &CostModel,
    gains: &Gains,
    shifted: &ShiftedSatBounds,
) -> IncrementalCoords {
    let se = sat_e(inc, b, gains, shifted);
    let sp = sat_p(inc, shifted);
    let b_se = b * &se;
    IncrementalCoords {
        x: &b_se + sp.component_div(&cost.q) * gains.gamma_p,
        x_p: -(lc * &sp) * gains.gamma_l
            + b_se.component_div(&cost.q) * (gains.gamma_p * gains.gamma_c)
            - inc.x.component_div(&cost.q) * gains.gamma_p,
        x_e: (b.transpose() * &inc.x) * gains.gamma_e,
    }
}

/// One RK4 step of either incremental dynamics (used by the verification
/// tests to follow trajectories in incremental coordinates).
pub fn incremental_rk4_step<F>(inc: &IncrementalCoords, dt: f64, rhs: F) -> IncrementalCoords
where
    F: Fn(&IncrementalCoords) -> IncrementalCoords,
{
    let add = |a: &IncrementalCoords, b: &IncrementalCoords, s: f64| IncrementalCoords {
        x: &a.x + &b.x * s,
        x_p: &a.x_p + &b.x_p * s,
        x_e: &a.x_e + &b.x_e * s,
    };
    let k1 = rhs(inc);
    let k2 = rhs(&add(inc, &k1, dt / 2.0));
    let k3 = rhs(&add(inc, &k2, dt / 2.0));
    let k4 = rhs(&add(inc, &k3, dt));
    IncrementalCoords {
        x: &inc.x + (&k1.x + &k2.x * 2.0 + &k3.x * 2.0 + &k4.x) * (dt / 6.0),
        x_p: &inc.x_p + (&k1.x_p + &k2.x_p * 2.0 + &k3.x_p * 2.0 + &k4.x_p) * (dt / 6.0),
        x_e: &inc.x_e + (&k1.x_e + &k2.x_e * 2.0 + &k3.x_e * 2.0 + &k4.x_e) * (dt / 6.0),
    }
}
