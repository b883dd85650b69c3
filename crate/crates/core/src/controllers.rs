//! The distributed control laws as pure (state, measurement) → (derivative,
//! output) maps. The simulator owns integration.
//!
//! Edge controller (PI on the incident node errors):
//!
//! ```text
//! ẋ_e = γ_e Bᵀy            u_e = −γ_c Bᵀy − γ_e x_e          (unconstrained)
//!                          u_e = sat(−γ_c Bᵀy − γ_e x_e; 0, u_e⁺)  (saturated)
//! ```
//!
//! Node controller (consensus plus local error feedback):
//!
//! ```text
//! ẋ_p = −γ_l L_c x_p − γ_p Q⁻¹ y                u_p = Q⁻¹(γ_p x_p − r)
//! ẋ_p = −γ_l L_c sat(x_p; (Qu_p⁻+r)/γ_p, (Qu_p⁺+r)/γ_p)
//!       − γ_p Q⁻¹ (y − γ_c B u_e)               u_p = sat(Q⁻¹(γ_p x_p − r); u_p⁻, u_p⁺)
//! ```
//!
//! The saturated node law takes the realized (already clamped) edge flows, so
//! per step the edge output is evaluated first. The integrator dynamics of
//! the edge controller are identical in both modes.

use crate::error::Error;
use crate::gains::Gains;
use crate::optimum::CostModel;
use crate::Result;
use nalgebra::{DMatrix, DVector};

/// Integrator states of both controllers.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerState {
    /// Node controller integrators (length n).
    pub x_p: DVector<f64>,
    /// Edge controller integrators (length m).
    pub x_e: DVector<f64>,
}

/// Saturation box: node inputs in `[u_p⁻, u_p⁺]`, edge flows in `[0, u_e⁺]`.
/// Infinite entries disable the respective bound exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct SatBounds {
    pub u_p_min: DVector<f64>,
    pub u_p_max: DVector<f64>,
    pub u_e_max: DVector<f64>,
}

impl SatBounds {
    pub fn new(
        u_p_min: DVector<f64>,
        u_p_max: DVector<f64>,
        u_e_max: DVector<f64>,
    ) -> Result<Self> {
        let b = Self {
            u_p_min,
            u_p_max,
            u_e_max,
        };
        b.validate()?;
        Ok(b)
    }

    /// Fully unconstrained sentinel box.
    pub fn unbounded(n: usize, m: usize) -> Self {
        Self {
            u_p_min: DVector::from_element(n, f64::NEG_INFINITY),
            u_p_max: DVector::from_element(n, f64::INFINITY),
            u_e_max: DVector::from_element(m, f64::INFINITY),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.u_p_min.len() != self.u_p_max.len() {
            return Err(Error::Dimension("u_p bounds have different lengths".into()));
        }
        for i in 0..self.u_p_min.len() {
            let ordered = self.u_p_min[i] < self.u_p_max[i];
            if !ordered {
                return Err(Error::Validation(format!(
                    "u_p bounds must satisfy min < max at node {i}: [{}, {}]",
                    self.u_p_min[i], self.u_p_max[i]
                )));
            }
        }
        for j in 0..self.u_e_max.len() {
            let positive = self.u_e_max[j] > 0.0;
            if !positive {
                return Err(Error::Validation(format!(
                    "u_e_max must be positive at edge {j}: {}",
                    self.u_e_max[j]
                )));
            }
        }
        if self.u_p_min.iter().any(|x| x.is_nan())
            || self.u_p_max.iter().any(|x| x.is_nan())
            || self.u_e_max.iter().any(|x| x.is_nan())
        {
            return Err(Error::NonFinite("saturation bounds".into()));
        }
        Ok(())
    }
}

/// Componentwise clamp of `x` to `[lo, hi]`.
pub fn sat(x: &DVector<f64>, lo: &DVector<f64>, hi: &DVector<f64>) -> Result<DVector<f64>> {
    if x.len() != lo.len() || x.len() != hi.len() {
        return Err(Error::Dimension(
            "sat arguments must have equal lengths".into(),
        ));
    }
    for i in 0..lo.len() {
        let ordered = lo[i] <= hi[i];
        if !ordered {
            return Err(Error::Validation(format!(
                "sat bounds inverted at index {i}: [{}, {}]",
                lo[i], hi[i]
            )));
        }
    }
    Ok(DVector::from_fn(x.len(), |i, _| {
        sat_scalar(x[i], lo[i], hi[i])
    }))
}

/// Scalar clamp; exact at infinite bounds.
#[inline]
pub fn sat_scalar(x: f64, lo: f64, hi: f64) -> f64 {
    if x <= lo {
        lo
    } else if x >= hi {
        hi
    } else {
        x
    }
}

/// `u_e = −γ_c Bᵀy − γ_e x_e`.
pub fn edge_output_unconstrained(
    y: &DVector<f64>,
    x_e: &DVector<f64>,
    b: &DMatrix<f64>,
    gains: &Gains,
) -> DVector<f64> {
    -(b.transpose() * y) * gains.gamma_c - x_e * gains.gamma_e
}

/// `ẋ_e = γ_e Bᵀy` (same in both modes; no anti-windup on the integrator).
pub fn edge_deriv(y: &DVector<f64>, b: &DMatrix<f64>, gains: &Gains) -> DVector<f64> {
    (b.transpose() * y) * gains.gamma_e
}

/// `u_p = Q⁻¹(γ_p x_p − r)`.
pub fn node_output_unconstrained(
    x_p: &DVector<f64>,
    cost: &CostModel,
    gains: &Gains,
) -> DVector<f64> {
    (x_p * gains.gamma_p - &cost.r).component_div(&cost.q)
}

/// `ẋ_p = −γ_l L_c x_p − γ_p Q⁻¹ y`.
pub fn node_deriv_unconstrained(
    y: &DVector<f64>,
    x_p: &DVector<f64>,
    lc: &DMatrix<f64>,
    cost: &CostModel,
    gains: &Gains,
) -> DVector<f64> {
    -(lc * x_p) * gains.gamma_l - y.component_div(&cost.q) * gains.gamma_p
}

/// `u_e = sat(−γ_c Bᵀy − γ_e x_e; 0, u_e⁺)`.
pub fn edge_output_saturated(
    y: &DVector<f64>,
    x_e: &DVector<f64>,
    b: &DMatrix<f64>,
    gains: &Gains,
    bounds: &SatBounds,
) -> DVector<f64> {
    let drive = edge_output_unconstrained(y, x_e, b, gains);
    DVector::from_fn(drive.len(), |j, _| {
        sat_scalar(drive[j], 0.0, bounds.u_e_max[j])
    })
}

/// `u_p = sat(Q⁻¹(γ_p x_p − r); u_p⁻, u_p⁺)`.
pub fn node_output_saturated(
    x_p: &DVector<f64>,
    cost: &CostModel,
    gains: &Gains,
    bounds: &SatBounds,
) -> DVector<f64> {
    let drive = node_output_unconstrained(x_p, cost, gains);
    DVector::from_fn(drive.len(), |i, _| {
        sat_scalar(drive[i], bounds.u_p_min[i], bounds.u_p_max[i])
    })
}

/// `ẋ_p = −γ_l L_c sat(x_p; (Qu_p⁻+r)/γ_p, (Qu_p⁺+r)/γ_p) − γ_p Q⁻¹(y − γ_c B u_e)`.
///
/// `u_e` must be the realized, already saturated edge output at the same
/// instant.
#[allow(clippy::too_many_arguments)]
pub fn node_deriv_saturated(
    y: &DVector<f64>,
    x_p: &DVector<f64>,
    u_e: &DVector<f64>,
    b: &DMatrix<f64>,
    lc: &DMatrix<f64>,
    cost: &CostModel,
    gains: &Gains,
    bounds: &SatBounds,
) -> DVector<f64> {
    let clamped = DVector::from_fn(x_p.len(), |i, _| {
        let lo = (cost.q[i] * bounds.u_p_min[i] + cost.r[i]) / gains.gamma_p;
        let hi = (cost.q[i] * bounds.u_p_max[i] + cost.r[i]) / gains.gamma_p;
        sat_scalar(x_p[i], lo, hi)
    });
    let coupling = y - (b * u_e) * gains.gamma_c;
    -(lc * clamped) * gains.gamma_l - coupling.component_div(&cost.q) * gains.gamma_p
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn gains(gamma_e: f64, gamma_c: f64, gamma_p: f64, gamma_l: f64) -> Gains {
        Gains::new(gamma_e, gamma_c, gamma_p, gamma_l, 0.5).unwrap()
    }

    #[test]
    fn sat_clamps_componentwise() {
        let x = DVector::from_vec(vec![-2.0, 0.0, 3.0]);
        let lo = DVector::from_element(3, -1.0);
        let hi = DVector::from_element(3, 1.0);
        let s = sat(&x, &lo, &hi).unwrap();
        assert_eq!(s.as_slice(), &[-1.0, 0.0, 1.0]);
    }

    #[test]
    fn sat_is_identity_inside() {
        let x = DVector::from_vec(vec![0.25, -0.5]);
        let lo = DVector::from_element(2, -1.0);
        let hi = DVector::from_element(2, 1.0);
        assert_eq!(sat(&x, &lo, &hi).unwrap(), x);
    }

    #[test]
    fn sat_rejects_inverted_bounds() {
        let x = DVector::zeros(1);
        let lo = DVector::from_element(1, 1.0);
        let hi = DVector::from_element(1, -1.0);
        assert!(sat(&x, &lo, &hi).is_err());
    }

    #[test]
    fn edge_law_at_origin_is_zero() {
        let b = DMatrix::from_column_slice(2, 1, &[-1.0, 1.0]);
        let g = gains(1.0, 1.0, 1.0, 1.0);
        let y = DVector::zeros(2);
        let x_e = DVector::zeros(1);
        assert!(edge_output_unconstrained(&y, &x_e, &b, &g).norm() == 0.0);
        assert!(edge_deriv(&y, &b, &g).norm() == 0.0);
    }

    #[test]
    fn uniform_error_lies_in_incidence_kernel() {
        let b = DMatrix::from_column_slice(2, 1, &[-1.0, 1.0]);
        let g = gains(0.7, 2.0, 1.0, 1.0);
        let y = DVector::from_element(2, 3.5);
        let x_e = DVector::from_vec(vec![1.5]);
        let u = edge_output_unconstrained(&y, &x_e, &b, &g);
        assert_relative_eq!(u[0], -0.7 * 1.5, epsilon = 1e-14);
        assert!(edge_deriv(&y, &b, &g).norm() == 0.0);
    }

    #[test]
    fn edge_law_drives_flow_toward_deficit() {
        let b = DMatrix::from_column_slice(2, 1, &[-1.0, 1.0]);
        let g = gains(1.0, 1.0, 1.0, 1.0);
        let y = DVector::from_vec(vec![1.0, -1.0]);
        let u = edge_output_unconstrained(&y, &DVector::zeros(1), &b, &g);
        assert_relative_eq!(u[0], 2.0, epsilon = 1e-14);
    }

    #[test]
    fn node_output_zero_state() {
        let cost = CostModel::uniform(2);
        let g = gains(1.0, 1.0, 1.0, 1.0);
        assert!(node_output_unconstrained(&DVector::zeros(2), &cost, &g).norm() == 0.0);
    }

    #[test]
    fn consensus_is_a_fixed_point() {
        let cost = CostModel::uniform(2);
        let lc = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]);
        let g = gains(1.0, 1.0, 1.0, 1.0);
        let x_p = DVector::from_element(2, 4.2);
        let d = node_deriv_unconstrained(&DVector::zeros(2), &x_p, &lc, &cost, &g);
        assert!(d.norm() < 1e-14);
    }

    #[test]
    fn node_output_componentwise_arithmetic() {
        let cost = CostModel::new(vec![1.0, 2.0], vec![1.0, 0.0], vec![0.0, 0.0]).unwrap();
        let g = gains(1.0, 1.0, 2.0, 1.0);
        let u = node_output_unconstrained(&DVector::from_element(2, 1.0), &cost, &g);
        assert_relative_eq!(u[0], 1.0, epsilon = 1e-14);
        assert_relative_eq!(u[1], 1.0, epsilon = 1e-14);
    }

    #[test]
    fn saturated_laws_match_unconstrained_inside_the_box() {
        let b = DMatrix::from_column_slice(2, 1, &[-1.0, 1.0]);
        let cost = CostModel::uniform(2);
        let g = gains(0.5, 0.8, 0.3, 1.0);
        let bounds = SatBounds::new(
            DVector::from_element(2, -10.0),
            DVector::from_element(2, 10.0),
            DVector::from_element(1, 10.0),
        )
        .unwrap();
        let y = DVector::from_vec(vec![0.2, -0.1]);
        let x_e = DVector::from_vec(vec![-0.4]);
        let x_p = DVector::from_vec(vec![0.3, 0.6]);
        let ue_sat = edge_output_saturated(&y, &x_e, &b, &g, &bounds);
        let ue_unc = edge_output_unconstrained(&y, &x_e, &b, &g);
        assert_relative_eq!(ue_sat, ue_unc, epsilon = 1e-14);
        let up_sat = node_output_saturated(&x_p, &cost, &g, &bounds);
        let up_unc = node_output_unconstrained(&x_p, &cost, &g);
        assert_relative_eq!(up_sat, up_unc, epsilon = 1e-14);
    }

    #[test]
    fn no_reverse_flow_under_negative_drive() {
        let b = DMatrix::from_column_slice(2, 1, &[-1.0, 1.0]);
        let g = gains(1.0, 1.0, 1.0, 1.0);
        let bounds = SatBounds::new(
            DVector::from_element(2, -1.0),
            DVector::from_element(2, 1.0),
            DVector::from_element(1, 0.1),
        )
        .unwrap();
        let y = DVector::from_vec(vec![-5.0, 5.0]);
        let u = edge_output_saturated(&y, &DVector::zeros(1), &b, &g, &bounds);
        assert_eq!(u[0], 0.0);
    }

    #[test]
    fn gamma_c_zero_removes_the_flow_feedback_term() {
        let b = DMatrix::from_column_slice(2, 1, &[-1.0, 1.0]);
        let lc = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]);
        let cost = CostModel::uniform(2);
        let mut g = gains(1.0, 1e-300, 1.0, 1.0);
        g.gamma_c = 0.0; // direct zero: the coupling term must vanish exactly
        let bounds = SatBounds::unbounded(2, 1);
        let y = DVector::from_vec(vec![0.4, -0.2]);
        let x_p = DVector::from_vec(vec![0.1, -0.3]);
        let u_e = DVector::from_vec(vec![7.0]);
        let d_sat = node_deriv_saturated(&y, &x_p, &u_e, &b, &lc, &cost, &g, &bounds);
        let d_unc = node_deriv_unconstrained(&y, &x_p, &lc, &cost, &g);
        assert_relative_eq!(d_sat, d_unc, epsilon = 1e-14);
    }

    #[test]
    fn saturated_equals_unconstrained_plus_flow_term_with_sentinels() {
        // The edge box is [0, u_e⁺] by construction, so the laws coincide on
        // states whose unconstrained flow is non-negative; the node laws
        // coincide (up to the flow feedback term) everywhere.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let b = DMatrix::from_row_slice(3, 2, &[-1.0, 0.0, 1.0, -1.0, 0.0, 1.0]);
        let lc = crate::graph::laplacian(&b);
        let cost = CostModel::new(vec![1.0, 2.0, 0.5], vec![0.1, -0.2, 0.0], vec![0.0; 3]).unwrap();
        let g = gains(0.4, 0.9, 0.2, 1.3);
        let bounds = SatBounds::unbounded(3, 2);
        let mut interior_edge_cases = 0;
        for _ in 0..200 {
            let y = DVector::from_fn(3, |_, _| rng.gen_range(-2.0..2.0));
            let x_p = DVector::from_fn(3, |_, _| rng.gen_range(-2.0..2.0));
            let x_e = DVector::from_fn(2, |_, _| rng.gen_range(-2.0..2.0));
            let u_e = edge_output_saturated(&y, &x_e, &b, &g, &bounds);
            let unconstrained = edge_output_unconstrained(&y, &x_e, &b, &g);
            if unconstrained.iter().all(|&f| f >= 0.0) {
                interior_edge_cases += 1;
                assert_relative_eq!(u_e, unconstrained, epsilon = 1e-12);
            }
            let d_sat = node_deriv_saturated(&y, &x_p, &u_e, &b, &lc, &cost, &g, &bounds);
            let extra = (&b * &u_e).component_div(&cost.q) * (g.gamma_p * g.gamma_c);
            let d_unc = node_deriv_unconstrained(&y, &x_p, &lc, &cost, &g) + extra;
            assert_relative_eq!(d_sat, d_unc, epsilon = 1e-12);
        }
        assert!(interior_edge_cases > 20);
    }

    #[test]
    fn node_output_respects_the_box_on_random_states() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let cost = CostModel::new(vec![1.0, 0.7, 0.3, 0.1], vec![0.0; 4], vec![0.0; 4]).unwrap();
        let g = gains(0.01, 0.11, 0.01, 0.53);
        let bounds = SatBounds::new(
            DVector::from_element(4, 0.0),
            DVector::from_element(4, 0.14),
            DVector::from_element(4, 0.1),
        )
        .unwrap();
        for _ in 0..10_000 {
            let x_p = DVector::from_fn(4, |_, _| rng.gen_range(-1e3..1e3));
            let u = node_output_saturated(&x_p, &cost, &g, &bounds);
            for i in 0..4 {
                assert!(u[i] >= bounds.u_p_min[i] && u[i] <= bounds.u_p_max[i]);
            }
        }
    }

    #[test]
    fn node_derivative_is_structurally_distributed() {
        // circle: node 0 communicates with 1 and 3 only; edges 0 and 3 are incident.
        let spec = crate::graph::NetworkSpec::new(4, vec![(0, 1), (1, 2), (2, 3), (3, 0)]);
        let b = spec.incidence();
        let lc = spec.comm_laplacian();
        let cost = CostModel::new(vec![1.0, 0.7, 0.3, 0.1], vec![0.0; 4], vec![0.0; 4]).unwrap();
        let g = gains(0.01, 0.11, 0.01, 0.53);
        let bounds = SatBounds::new(
            DVector::from_element(4, 0.0),
            DVector::from_element(4, 0.14),
            DVector::from_element(4, 0.1),
        )
        .unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let y = DVector::from_fn(4, |_, _| rng.gen_range(-1.0..1.0));
        let x_p = DVector::from_fn(4, |_, _| rng.gen_range(-1.0..1.0));
        let u_e = DVector::from_fn(4, |_, _| rng.gen_range(0.0..0.1));
        let base = node_deriv_saturated(&y, &x_p, &u_e, &b, &lc, &cost, &g, &bounds)[0];
        // zero everything node 0 cannot see: y at nodes 1..3, x_p at node 2, flows on edges 1, 2
        let mut y2 = y.clone();
        y2[1] = 0.0;
        y2[2] = 0.0;
        y2[3] = 0.0;
        let mut xp2 = x_p.clone();
        xp2[2] = 0.0;
        let mut ue2 = u_e.clone();
        ue2[1] = 0.0;
        ue2[2] = 0.0;
        let changed = node_deriv_saturated(&y2, &xp2, &ue2, &b, &lc, &cost, &g, &bounds)[0];
        assert_relative_eq!(base, changed, epsilon = 1e-14);
    }

    proptest! {
        #[test]
        fn sat_is_idempotent(seed in 0u64..500) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let n = rng.gen_range(1..8);
            let x = DVector::from_fn(n, |_, _| rng.gen_range(-10.0..10.0));
            let lo = DVector::from_fn(n, |_, _| rng.gen_range(-5.0..0.0));
            let hi = DVector::from_fn(n, |_, _| rng.gen_range(0.0..5.0));
            let once = sat(&x, &lo, &hi).unwrap();
            let twice = sat(&once, &lo, &hi).unwrap();
            prop_assert_eq!(once, twice);
        }
    }
}
