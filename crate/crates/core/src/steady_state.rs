//! Steady states of the closed loop and their gain-dependent offsets.
//!
//! For a disturbance `d`, storage rate `x̄_s` and cost model `(Q, r)`, the
//! ideal steady state is described by `x̄_p` (node integrator), `x̄_e`
//! (edge integrator, least-norm selection) and the steady-state inputs
//! `ū_p`, `ū_e`. Saturating the controllers shifts the reachable steady state
//! by the hat quantities `x̂`, `x̂_p`, `x̂_e`, which shrink with the effective
//! gain `γ = γ_p²γ_c/γ_l`. The shifted saturation bounds `x_e^±`, `x_p^±`
//! locate the saturation boxes in incremental coordinates.

use crate::controllers::SatBounds;
use crate::error::Error;
use crate::gains::Gains;
use crate::graph::NetworkSpec;
use crate::linalg::{least_norm_solve, pseudoinverse, DEFAULT_RESIDUAL_TOL, DEFAULT_SV_CUTOFF};
use crate::optimum::CostModel;
use crate::Result;
use nalgebra::{DMatrix, DVector};

/// Ideal (saturation-free) steady state and the matrices derived with it.
#[derive(Debug, Clone)]
pub struct SteadyState {
    /// Node integrator steady state, `x̄_p = −(1/γ_p)·(11ᵀ/1ᵀQ⁻¹1)·d̃`.
    pub xbar_p: DVector<f64>,
    /// Least-norm edge integrator steady state solving `γ_e B x̄_e = −Q̄Qd̃`.
    pub xbar_e: DVector<f64>,
    /// Optimal steady-state node input `ū_p = γ_p Q⁻¹ x̄_p − Q⁻¹ r`.
    pub ubar_p: DVector<f64>,
    /// Steady-state edge flow `ū_e = −γ_e x̄_e`.
    pub ubar_e: DVector<f64>,
    /// `d̃ = d − x̄_s − Q⁻¹r`.
    pub dtilde: DVector<f64>,
    /// `Q̄ = Q⁻¹11ᵀQ⁻¹/(1ᵀQ⁻¹1) − Q⁻¹`.
    pub qbar: DMatrix<f64>,
    /// `Φ = −L_c Q + (1/n)·11ᵀ`.
    pub phi: DMatrix<f64>,
    /// `γ = γ_p²γ_c/γ_l` for the gains used at construction.
    pub gamma_eff: f64,
    /// Componentwise `1/qᵢ`.
    pub q_inv: DVector<f64>,
    /// `1ᵀQ⁻¹1`.
    pub sum_q_inv: f64,
    gamma_e: f64,
}

impl SteadyState {
    /// `Q̄Qd̃ = Q⁻¹1·(1ᵀd̃)/(1ᵀQ⁻¹1) − d̃`, the flow divergence the edges must
    /// absorb at steady state.
    pub fn qbar_q_dtilde(&self) -> DVector<f64> {
        let share = self.dtilde.sum() / self.sum_q_inv;
        self.q_inv.map(|qi| qi * share) - &self.dtilde
    }

    /// Shift the edge reference by a vector in `ker(B)`.
    ///
    /// The edge integrator dynamics conserve the kernel component of `x_e`,
    /// so the steady state actually reached inherits it from the initial
    /// condition; this re-centers all incremental quantities on that steady
    /// state. `kappa` must satisfy `B·kappa = 0`.
    pub fn with_edge_kernel_offset(&self, kappa: &DVector<f64>) -> SteadyState {
        let mut out = self.clone();
        out.xbar_e += kappa;
        out.ubar_e = -out.xbar_e.clone() * self.gamma_e;
        out
    }
}

/// Gain-dependent steady-state offsets of the saturated closed loop.
#[derive(Debug, Clone)]
pub struct HatState {
    /// Offset of the plant state, `x̂ ∈ span(1)`.
    pub x: DVector<f64>,
    /// Offset of the node integrator, `1ᵀQ⁻¹x̂_p = 0`.
    pub x_p: DVector<f64>,
    /// Offset of the edge integrator, orthogonal to `ker(B)`.
    pub x_e: DVector<f64>,
    /// Steady-state node input error `û_p = γ_p Q⁻¹ x̂_p`.
    pub u_p: DVector<f64>,
    /// Steady-state edge input error `û_e = −γ_e x̂_e`.
    pub u_e: DVector<f64>,
}

/// Saturation box corners in incremental coordinates.
#[derive(Debug, Clone)]
pub struct ShiftedSatBounds {
    /// `x_e^− = γ_e(x̄_e + x̂_e)`.
    pub xe_min: DVector<f64>,
    /// `x_e^+ = x_e^− + u_e^+`.
    pub xe_max: DVector<f64>,
    /// `x_p^− = (Q u_p^− + r)/γ_p − (x̄_p + x̂_p)`.
    pub xp_min: DVector<f64>,
    /// `x_p^+ = (Q u_p^+ + r)/γ_p − (x̄_p + x̂_p)`.
    pub xp_max: DVector<f64>,
}

impl ShiftedSatBounds {
    /// The sign pattern `x_e^− < 0 < x_e^+`, `x_p^− < 0 < x_p^+` required for
    /// the saturated Lyapunov function to be positive definite.
    pub fn signs_hold(&self) -> bool {
        self.xe_min.iter().all(|&v| v < 0.0)
            && self.xe_max.iter().all(|&v| v > 0.0)
            && self.xp_min.iter().all(|&v| v < 0.0)
            && self.xp_max.iter().all(|&v| v > 0.0)
    }
}

fn validate_inputs(
    spec: &NetworkSpec,
    cost: &CostModel,
    d: &DVector<f64>,
    xbar_s: &DVector<f64>,
    gains: &Gains,
) -> Result<()> {
    spec.validate()?;
    cost.validate()?;
    gains.validate()?;
    if cost.n() != spec.n || d.len() != spec.n || xbar_s.len() != spec.n {
        return Err(Error::Dimension(format!(
            "network has {} nodes; cost covers {}, d has {}, x̄_s has {}",
            spec.n,
            cost.n(),
            d.len(),
            xbar_s.len()
        )));
    }
    if !spec.is_connected() {
        return Err(Error::Validation("physical graph must be connected".into()));
    }
    if !spec.comm_connected() {
        return Err(Error::Validation(
            "communication graph must be connected".into(),
        ));
    }
    Ok(())
}

/// Build every steady-state quantity for one operating point `(d, x̄_s)`.
pub fn compute_core(
    spec: &NetworkSpec,
    cost: &CostModel,
    d: &DVector<f64>,
    xbar_s: &DVector<f64>,
    gains: &Gains,
) -> Result<SteadyState> {
    validate_inputs(spec, cost, d, xbar_s, gains)?;
    let n = spec.n;
    let one = DVector::from_element(n, 1.0);
    let q_inv = cost.q_inv();
    let sum_q_inv = cost.sum_q_inv();
    let dtilde = d - xbar_s - cost.q_inv_r();

    // Q̄ = Q⁻¹11ᵀQ⁻¹/(1ᵀQ⁻¹1) − Q⁻¹
    let qbar = &q_inv * q_inv.transpose() / sum_q_inv - DMatrix::from_diagonal(&q_inv);
    // Φ = −L_c Q + (1/n)11ᵀ
    let lc = spec.comm_laplacian();
    let q_diag = DMatrix::from_diagonal(&cost.q);
    let phi = -&lc * &q_diag + &one * one.transpose() / n as f64;

    let share = dtilde.sum() / sum_q_inv;
    let xbar_p = DVector::from_element(n, -share / gains.gamma_p);

    // γ_e B x̄_e = (I − Q⁻¹11ᵀ/(1ᵀQ⁻¹1)) d̃  (= −Q̄Qd̃), least-norm selection.
    let rhs = &dtilde - q_inv.map(|qi| qi * share);
    let b = spec.incidence();
    let xbar_e = least_norm_solve(&(b * gains.gamma_e), &rhs, DEFAULT_RESIDUAL_TOL).map_err(
        |e| match e {
            Error::Inconsistent { residual, tol } => Error::Inconsistent { residual, tol },
            other => other,
        },
    )?;

    let ubar_p = q_inv.component_mul(&xbar_p) * gains.gamma_p - cost.q_inv_r();
    let ubar_e = -xbar_e.clone() * gains.gamma_e;

    Ok(SteadyState {
        xbar_p,
        xbar_e,
        ubar_p,
        ubar_e,
        dtilde,
        qbar,
        phi,
        gamma_eff: gains.gamma_eff(),
        q_inv,
        sum_q_inv,
        gamma_e: gains.gamma_e,
    })
}

/// Solve for the steady-state offsets:
///
/// ```text
/// x̂_p = (γ/γ_p)·Q·(γQ̄+Φ)⁻¹·Q̄²Qd̃
/// x̂_e = (γ/γ_e)·B†·(γQ̄+Φ)⁻¹·Q̄²Qd̃
/// x̂   = γ_c·(11ᵀQ⁻¹/1ᵀQ⁻¹1)·(I − γ(γQ̄+Φ)⁻¹Q̄)·Q̄Qd̃
/// ```
pub fn compute_hats(
    spec: &NetworkSpec,
    cost: &CostModel,
    ss: &SteadyState,
    gains: &Gains,
) -> Result<HatState> {
    let gamma = gains.gamma_eff();
    let qbar_q_dtilde = ss.qbar_q_dtilde();
    let rhs = &ss.qbar * &qbar_q_dtilde;
    let m = &ss.qbar * gamma + &ss.phi;
    let v = m
        .clone()
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Singular(
            "gamma*Qbar + Phi is singular; full rank requires q_i > 0 and a connected communication graph".into(),
        ))?;
    let solve_residual = (&m * &v - &rhs).norm();
    if solve_residual > 1e-8 * rhs.norm().max(1.0) {
        return Err(Error::Singular(format!(
            "gamma*Qbar + Phi solve residual {solve_residual:.3e}; matrix is numerically singular"
        )));
    }

    let x_p = cost.q.component_mul(&v) * (gamma / gains.gamma_p);
    let b_pinv = pseudoinverse(&spec.incidence(), DEFAULT_SV_CUTOFF)?;
    let x_e = &b_pinv * &v * (gamma / gains.gamma_e);
    let scalar = ss.q_inv.dot(&(&qbar_q_dtilde - &v * gamma)) / ss.sum_q_inv;
    let x = DVector::from_element(spec.n, gains.gamma_c * scalar);
    let u_p = ss.q_inv.component_mul(&x_p) * gains.gamma_p;
    let u_e = -x_e.clone() * gains.gamma_e;
    Ok(HatState {
        x,
        x_p,
        x_e,
        u_p,
        u_e,
    })
}

/// Shifted saturation bounds in incremental coordinates.
pub fn shifted_bounds(
    ss: &SteadyState,
    hats: &HatState,
    bounds: &SatBounds,
    gains: &Gains,
    cost: &CostModel,
) -> ShiftedSatBounds {
    let xe_ref = (&ss.xbar_e + &hats.x_e) * gains.gamma_e;
    let xe_min = xe_ref.clone();
    let xe_max = DVector::from_fn(xe_ref.len(), |j, _| xe_ref[j] + bounds.u_e_max[j]);
    let xp_ref = &ss.xbar_p + &hats.x_p;
    let xp_min = DVector::from_fn(xp_ref.len(), |i, _| {
        (cost.q[i] * bounds.u_p_min[i] + cost.r[i]) / gains.gamma_p - xp_ref[i]
    });
    let xp_max = DVector::from_fn(xp_ref.len(), |i, _| {
        (cost.q[i] * bounds.u_p_max[i] + cost.r[i]) / gains.gamma_p - xp_ref[i]
    });
    ShiftedSatBounds {
        xe_min,
        xe_max,
        xp_min,
        xp_max,
    }
}

/// Strict interiority of the steady-state inputs, as required before
/// initializing a saturated simulation at the steady state.
pub fn check_feasible_for_init(ss: &SteadyState, bounds: &SatBounds) -> Result<()> {
    let mut binding = Vec::new();
    for i in 0..ss.ubar_p.len() {
        if !(ss.ubar_p[i] > bounds.u_p_min[i] && ss.ubar_p[i] < bounds.u_p_max[i]) {
            binding.push(format!(
                "ū_p[{i}] = {:.6} outside ({}, {})",
                ss.ubar_p[i], bounds.u_p_min[i], bounds.u_p_max[i]
            ));
        }
    }
    for j in 0..ss.ubar_e.len() {
        if !(ss.ubar_e[j] > 0.0 && ss.ubar_e[j] < bounds.u_e_max[j]) {
            binding.push(format!(
                "ū_e[{j}] = {:.6} outside (0, {})",
                ss.ubar_e[j], bounds.u_e_max[j]
            ));
        }
    }
    if binding.is_empty() {
        Ok(())
    } else {
        Err(Error::Infeasible(binding.join("; ")))
    }
}

/// Residuals of the three defining equations of the hat system; all must
/// vanish for a valid solution.
pub fn hat_residuals(
    spec: &NetworkSpec,
    ss: &SteadyState,
    hats: &HatState,
    gains: &Gains,
) -> [f64; 3] {
    let b = spec.incidence();
    let lc = spec.comm_laplacian();
    let r1 = (b.transpose() * &hats.x).norm();
    let r2 = (-(&b * &hats.x_e) * gains.gamma_e
        + ss.q_inv.component_mul(&hats.x_p) * gains.gamma_p)
        .norm();
    let coupled = &b * (&hats.x_e + &ss.xbar_e);
    let r3 = (-ss.q_inv.component_mul(&hats.x) * gains.gamma_p
        - &lc * &hats.x_p * gains.gamma_l
        - ss.q_inv.component_mul(&coupled) * (gains.gamma_p * gains.gamma_c * gains.gamma_e))
        .norm();
    [r1, r2, r3]
}
