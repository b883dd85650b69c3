//! Economic dispatch: quadratic node costs, the closed-form optimal
//! steady-state input and an independent KKT oracle.
//!
//! The dispatch problem is
//!
//! ```text
//! minimize   C(u_p) = Σᵢ sᵢ + rᵢ (u_p)ᵢ + ½ qᵢ (u_p)ᵢ²
//! subject to 1ᵀ(u_p + d − x̄_s) = 0,
//! ```
//!
//! i.e. total production balances the disturbance plus the prescribed
//! storage rate. Consumption is encoded as negative `d`.

use crate::error::Error;
use crate::Result;
use nalgebra::{DMatrix, DVector};

/// Quadratic cost coefficients per node: `Cᵢ(u) = sᵢ + rᵢ u + ½ qᵢ u²`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostModel {
    /// Strictly positive quadratic coefficients (diagonal of `Q`).
    pub q: DVector<f64>,
    /// Linear coefficients.
    pub r: DVector<f64>,
    /// Constant offsets.
    pub s: DVector<f64>,
}

impl CostModel {
    /// Cost model with validation of strict convexity and equal lengths.
    pub fn new(q: Vec<f64>, r: Vec<f64>, s: Vec<f64>) -> Result<Self> {
        let model = Self {
            q: DVector::from_vec(q),
            r: DVector::from_vec(r),
            s: DVector::from_vec(s),
        };
        model.validate()?;
        Ok(model)
    }

    /// Uniform-quadratic model `Q = I`, `r = s = 0`.
    pub fn uniform(n: usize) -> Self {
        Self {
            q: DVector::from_element(n, 1.0),
            r: DVector::zeros(n),
            s: DVector::zeros(n),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.q.len() != self.r.len() || self.q.len() != self.s.len() {
            return Err(Error::Dimension(format!(
                "cost vectors have lengths q={}, r={}, s={}",
                self.q.len(),
                self.r.len(),
                self.s.len()
            )));
        }
        if self
            .q
            .iter()
            .any(|&q| q.is_nan() || q <= 0.0 || q.is_infinite())
        {
            return Err(Error::Validation(
                "all quadratic coefficients must be > 0".into(),
            ));
        }
        if self.r.iter().chain(self.s.iter()).any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("cost model coefficients".into()));
        }
        Ok(())
    }

    /// Number of nodes covered by this model.
    pub fn n(&self) -> usize {
        self.q.len()
    }

    /// Componentwise inverse of the diagonal `Q`.
    pub fn q_inv(&self) -> DVector<f64> {
        self.q.map(|q| 1.0 / q)
    }

    /// `1ᵀQ⁻¹1 = Σᵢ 1/qᵢ`.
    pub fn sum_q_inv(&self) -> f64 {
        self.q.iter().map(|q| 1.0 / q).sum()
    }

    /// `Q⁻¹r` componentwise.
    pub fn q_inv_r(&self) -> DVector<f64> {
        self.r.component_div(&self.q)
    }
}

/// Optimal dispatch together with the common marginal cost and total cost.
#[derive(Debug, Clone)]
pub struct DispatchResult {
    /// Optimal node inputs.
    pub u_p: DVector<f64>,
    /// Common marginal cost `λ = qᵢ (u_p)ᵢ + rᵢ` at the optimum.
    pub lambda: f64,
    /// Total cost at the optimum.
    pub cost: f64,
}

/// Total cost `Σ sᵢ + rᵀu_p + ½ u_pᵀ Q u_p`.
pub fn total_cost(cost: &CostModel, u_p: &DVector<f64>) -> Result<f64> {
    if u_p.len() != cost.n() {
        return Err(Error::Dimension(format!(
            "u_p has length {}, cost model covers {} nodes",
            u_p.len(),
            cost.n()
        )));
    }
    let quad = 0.5 * u_p.component_mul(&cost.q).dot(u_p);
    Ok(cost.s.sum() + cost.r.dot(u_p) + quad)
}

fn check_inputs(cost: &CostModel, d: &DVector<f64>, xbar_s: &DVector<f64>) -> Result<()> {
    cost.validate()?;
    if d.len() != cost.n() || xbar_s.len() != cost.n() {
        return Err(Error::Dimension(format!(
            "d has length {}, x̄_s has length {}, cost model covers {} nodes",
            d.len(),
            xbar_s.len(),
            cost.n()
        )));
    }
    if d.iter().chain(xbar_s.iter()).any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("dispatch inputs".into()));
    }
    Ok(())
}

/// Closed-form optimal input
/// `ū_p = −Q⁻¹( (11ᵀ/1ᵀQ⁻¹1)(d − x̄_s − Q⁻¹r) + r )`.
pub fn optimal_input(
    cost: &CostModel,
    d: &DVector<f64>,
    xbar_s: &DVector<f64>,
) -> Result<DispatchResult> {
    check_inputs(cost, d, xbar_s)?;
    let dtilde = d - xbar_s - cost.q_inv_r();
    let share = dtilde.sum() / cost.sum_q_inv();
    let q_inv = cost.q_inv();
    let u_p = -(q_inv.map(|qi| qi * share) + cost.q_inv_r());
    let lambda = cost.q[0] * u_p[0] + cost.r[0];
    let cost_value = total_cost(cost, &u_p)?;
    Ok(DispatchResult {
        u_p,
        lambda,
        cost: cost_value,
    })
}

/// Independent verification oracle: solves the KKT system
///
/// ```text
/// [ Q  1 ] [u]   [ −r          ]
/// [ 1ᵀ 0 ] [μ] = [ 1ᵀ(x̄_s − d) ]
/// ```
///
/// by a generic dense LU solve, never using the closed form.
pub fn kkt_oracle(
    cost: &CostModel,
    d: &DVector<f64>,
    xbar_s: &DVector<f64>,
) -> Result<DispatchResult> {
    check_inputs(cost, d, xbar_s)?;
    let n = cost.n();
    let mut kkt = DMatrix::zeros(n + 1, n + 1);
    for i in 0..n {
        kkt[(i, i)] = cost.q[i];
        kkt[(i, n)] = 1.0;
        kkt[(n, i)] = 1.0;
    }
    let mut rhs = DVector::zeros(n + 1);
    for i in 0..n {
        rhs[i] = -cost.r[i];
    }
    rhs[n] = (xbar_s - d).sum();
    let sol = kkt
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Singular("KKT system (requires q_i > 0)".into()))?;
    let u_p = DVector::from_iterator(n, sol.iter().take(n).copied());
    // The stationarity rows read qᵢuᵢ + rᵢ = −μ; report the marginal cost.
    let lambda = -sol[n];
    let cost_value = total_cost(cost, &u_p)?;
    Ok(DispatchResult {
        u_p,
        lambda,
        cost: cost_value,
    })
}
