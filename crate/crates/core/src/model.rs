//! Model parameters, the information-acquisition cost, and the closed-form
//! coefficients of the quadratic ansatz.
//!
//! The full-information value function has the form
//! `W(x, m, γ) = a1 x² + a2 m² + a3 x m + b1 x + b2 m + a2 γ + (C1 + a2 σ2²)/δ + v(γ)`,
//! where everything except `v` is available in closed form from the seven
//! scalar model parameters. The reduced problem for `v` only sees the cost
//! slope `ā = a3² / (2ρ)`.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Upper cap applied to `h_max` when `(c')⁻¹(M0)` overflows.
pub const H_MAX_CAP: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelParams {
    pub lambda: f64,
    pub mu_bar: f64,
    pub sigma1: f64,
    pub sigma2: f64,
    pub delta: f64,
    pub kappa: f64,
    pub rho: f64,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self::canonical()
    }
}

impl ModelParams {
    pub fn new(lambda: f64, mu_bar: f64, sigma1: f64, sigma2: f64, delta: f64, kappa: f64, rho: f64) -> Result<Self> {
        let p = ModelParams {
            lambda,
            mu_bar,
            sigma1,
            sigma2,
            delta,
            kappa,
            rho,
        };
        p.validate()?;
        Ok(p)
    }

    /// All parameters equal to one except `μ̄ = 0`.
    pub fn canonical() -> Self {
        ModelParams {
            lambda: 1.0,
            mu_bar: 0.0,
            sigma1: 1.0,
            sigma2: 1.0,
            delta: 1.0,
            kappa: 1.0,
            rho: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        fn bad(field: &'static str, reason: &str) -> Error {
            Error::InvalidParams {
                field,
                reason: reason.to_string(),
            }
        }
        let fields = [
            ("lambda", self.lambda),
            ("mu_bar", self.mu_bar),
            ("sigma1", self.sigma1),
            ("sigma2", self.sigma2),
            ("delta", self.delta),
            ("kappa", self.kappa),
            ("rho", self.rho),
        ];
        for (name, value) in fields {
            if !value.is_finite() {
                return Err(bad(name, "must be finite"));
            }
        }
        if self.sigma1 <= 0.0 {
            return Err(bad("sigma1", "must be > 0"));
        }
        if self.delta <= 0.0 {
            return Err(bad("delta", "must be > 0"));
        }
        if self.kappa <= 0.0 {
            return Err(bad("kappa", "must be > 0"));
        }
        if self.rho <= 0.0 {
            return Err(bad("rho", "must be > 0"));
        }
        if self.lambda < 0.0 {
            return Err(bad("lambda", "must be >= 0"));
        }
        if self.sigma2 < 0.0 {
            return Err(bad("sigma2", "must be >= 0"));
        }
        Ok(())
    }

    /// σ̄1² = 1/σ1², the signal-to-noise weight of the state observation.
    pub fn sigma1_bar_sq(&self) -> f64 {
        1.0 / (self.sigma1 * self.sigma1)
    }
}

/// Uncontrolled stationary variance `−λσ1² + √(λ²σ1⁴ + σ1²σ2²)`.
pub fn gamma_inf_uncontrolled(params: &ModelParams) -> f64 {
    let s1 = params.sigma1 * params.sigma1;
    let q = s1 * params.sigma2 * params.sigma2;
    if q == 0.0 {
        return 0.0;
    }
    let ls = params.lambda * s1;
    // Rationalised to avoid cancellation when λσ1² dominates.
    q / (ls + (ls * ls + q).sqrt())
}

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// User-supplied cost given as the triple `(c, c', c'')`.
#[derive(Clone)]
pub struct CustomCost {
    pub c: ScalarFn,
    pub dc: ScalarFn,
    pub d2c: ScalarFn,
}

impl CustomCost {
    pub fn new(
        c: impl Fn(f64) -> f64 + Send + Sync + 'static,
        dc: impl Fn(f64) -> f64 + Send + Sync + 'static,
        d2c: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        CustomCost {
            c: Arc::new(c),
            dc: Arc::new(dc),
            d2c: Arc::new(d2c),
        }
    }
}

impl fmt::Debug for CustomCost {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("CustomCost(..)")
    }
}

#[derive(Debug, Clone)]
pub enum CostKind {
    /// `ζ h^(1+ε)`
    Power {
        zeta: f64,
        epsilon: f64,
    },
    /// `ζ h²`
    Quadratic {
        zeta: f64,
    },
    /// `ζ h² + linear·h`
    AffineQuadratic {
        zeta: f64,
        linear: f64,
    },
    Custom(CustomCost),
}

/// Information-acquisition cost `c(h)` on `[0, ∞)`, optionally scaled by a
/// positive factor `α` (the sensitivity parameter of the equilibrium module).
#[derive(Debug, Clone)]
pub struct CostSpec {
    kind: CostKind,
    scale: f64,
}

impl CostSpec {
    pub fn new(kind: CostKind) -> Result<Self> {
        let cost = CostSpec { kind, scale: 1.0 };
        cost.validate()?;
        Ok(cost)
    }

    pub fn quadratic(zeta: f64) -> Result<Self> {
        Self::new(CostKind::Quadratic { zeta })
    }

    pub fn power(zeta: f64, epsilon: f64) -> Result<Self> {
        Self::new(CostKind::Power { zeta, epsilon })
    }

    pub fn affine_quadratic(zeta: f64, linear: f64) -> Result<Self> {
        Self::new(CostKind::AffineQuadratic { zeta, linear })
    }

    pub fn custom(custom: CustomCost) -> Result<Self> {
        Self::new(CostKind::Custom(custom))
    }

    pub fn kind(&self) -> &CostKind {
        &self.kind
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// The cost `α·c`.
    pub fn scaled(&self, alpha: f64) -> Result<Self> {
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(Error::InvalidCost(format!("scale must be > 0, got {alpha}")));
        }
        Ok(CostSpec {
            kind: self.kind.clone(),
            scale: self.scale * alpha,
        })
    }

    /// `ζ` of a quadratic cost, including the scale.
    pub fn quadratic_zeta(&self) -> Option<f64> {
        match self.kind {
            CostKind::Quadratic { zeta } => Some(zeta * self.scale),
            CostKind::Power { zeta, epsilon: 1.0 } => Some(zeta * self.scale),
            _ => None,
        }
    }

    fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::InvalidCost(format!("{name} must be > 0, got {v}")))
            }
        };
        match self.kind {
            CostKind::Power { zeta, epsilon } => {
                positive("zeta", zeta)?;
                positive("epsilon", epsilon)?;
            }
            CostKind::Quadratic { zeta } => positive("zeta", zeta)?,
            CostKind::AffineQuadratic { zeta, linear } => {
                positive("zeta", zeta)?;
                if !(linear.is_finite() && linear >= 0.0) {
                    return Err(Error::InvalidCost(format!("linear must be >= 0, got {linear}")));
                }
            }
            CostKind::Custom(_) => {}
        }
        let c0 = self.c(0.0);
        if !(c0.is_finite() && c0 >= 0.0) {
            return Err(Error::InvalidCost(format!("c(0) = {c0} must be finite and >= 0")));
        }
        for k in 0..=48 {
            let h = 10f64.powf(-6.0 + 0.25 * k as f64);
            let (c, dc, d2c) = (self.c(h), self.dc(h), self.d2c(h));
            if !(c >= 0.0) {
                return Err(Error::InvalidCost(format!("c({h}) = {c} < 0")));
            }
            if !(dc > 0.0) {
                return Err(Error::InvalidCost(format!("c'({h}) = {dc} is not > 0")));
            }
            if !(d2c > 0.0) {
                return Err(Error::InvalidCost(format!("c''({h}) = {d2c} is not > 0")));
            }
        }
        Ok(())
    }

    pub fn c(&self, h: f64) -> f64 {
        let raw = match &self.kind {
            CostKind::Power { zeta, epsilon } => zeta * h.powf(1.0 + epsilon),
            CostKind::Quadratic { zeta } => zeta * h * h,
            CostKind::AffineQuadratic { zeta, linear } => zeta * h * h + linear * h,
            CostKind::Custom(f) => (f.c)(h),
        };
        self.scale * raw
    }

    pub fn dc(&self, h: f64) -> f64 {
        let raw = match &self.kind {
            CostKind::Power { zeta, epsilon } => zeta * (1.0 + epsilon) * h.powf(*epsilon),
            CostKind::Quadratic { zeta } => 2.0 * zeta * h,
            CostKind::AffineQuadratic { zeta, linear } => 2.0 * zeta * h + linear,
            CostKind::Custom(f) => (f.dc)(h),
        };
        self.scale * raw
    }

    pub fn d2c(&self, h: f64) -> f64 {
        let raw = match &self.kind {
            CostKind::Power { zeta, epsilon } => zeta * (1.0 + epsilon) * epsilon * h.powf(epsilon - 1.0),
            CostKind::Quadratic { zeta } => 2.0 * zeta,
            CostKind::AffineQuadratic { zeta, .. } => 2.0 * zeta,
            CostKind::Custom(f) => (f.d2c)(h),
        };
        self.scale * raw
    }

    /// `c'(0)`, the activation price of information.
    pub fn marginal_at_zero(&self) -> f64 {
        self.dc(0.0)
    }

    /// Solves `c'(h) = x` for `h ≥ 0`; `None` if `c'` never reaches `x`.
    /// Returns 0 for `x ≤ c'(0)`.
    pub fn inverse_marginal(&self, x: f64) -> Option<f64> {
        if !x.is_finite() {
            return None;
        }
        let d0 = self.marginal_at_zero();
        if x <= d0 {
            return Some(0.0);
        }
        let y = x / self.scale;
        match &self.kind {
            CostKind::Power { zeta, epsilon } => Some((y / (zeta * (1.0 + epsilon))).powf(1.0 / epsilon)),
            CostKind::Quadratic { zeta } => Some(y / (2.0 * zeta)),
            CostKind::AffineQuadratic { zeta, linear } => Some((y - linear) / (2.0 * zeta)),
            CostKind::Custom(_) => {
                let mut hi = 1.0;
                while self.dc(hi) < x {
                    hi *= 2.0;
                    if hi > 1e300 {
                        return None;
                    }
                }
                Some(self.bisect_marginal(x, 0.0, hi))
            }
        }
    }

    fn bisect_marginal(&self, x: f64, mut lo: f64, mut hi: f64) -> f64 {
        for _ in 0..2000 {
            if hi - lo <= 1e-12 * hi.max(1.0) {
                break;
            }
            let mid = 0.5 * (lo + hi);
            if self.dc(mid) < x {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    /// Optimal rate `ĥ(x) = argmax_h {h x − c(h)}` without any cap.
    pub fn h_hat_unbounded(&self, x: f64) -> f64 {
        self.inverse_marginal(x).unwrap_or(f64::INFINITY)
    }

    /// Derivative `ĥ'(x) = 1 / c''((c')⁻¹(x))` for `x > c'(0)`, zero below.
    pub fn h_hat_prime(&self, x: f64) -> f64 {
        if x < self.marginal_at_zero() {
            return 0.0;
        }
        let h = self.h_hat_unbounded(x);
        1.0 / self.d2c(h)
    }

    fn check_domain(&self, x: f64, h_max: f64) -> Result<()> {
        let upper = if h_max >= H_MAX_CAP {
            f64::INFINITY
        } else {
            self.dc(h_max).max(self.marginal_at_zero())
        };
        if !x.is_finite() || x < -1e-12 || x > upper * (1.0 + 1e-9) + 1e-15 {
            return Err(Error::Domain { x, upper });
        }
        Ok(())
    }

    /// `ĥ(x)` on the marginal-value domain `[0, M0]`; result in `[0, h_max]`.
    pub fn h_hat(&self, x: f64, h_max: f64) -> Result<f64> {
        self.check_domain(x, h_max)?;
        let x = x.max(0.0);
        if x <= self.marginal_at_zero() {
            return Ok(0.0);
        }
        let h = match self.kind {
            CostKind::Custom(_) => self.bisect_marginal(x, 0.0, h_max * (1.0 + 1e-6)),
            _ => self.h_hat_unbounded(x),
        };
        Ok(h.clamp(0.0, h_max))
    }

    /// Convex conjugate `c*(x) = max_h {h x − c(h)}` on `[0, M0]`.
    pub fn c_star(&self, x: f64, h_max: f64) -> Result<f64> {
        let h = self.h_hat(x, h_max)?;
        if h == 0.0 {
            return Ok(-self.c(0.0));
        }
        Ok(h * x - self.c(h))
    }
}

/// How the variance cap `γ_max` is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GammaMax {
    /// Multiple of `γ⁰_∞`.
    Factor(f64),
    Absolute(f64),
}

impl Default for GammaMax {
    fn default() -> Self {
        GammaMax::Factor(2.5)
    }
}

impl GammaMax {
    pub fn resolve(&self, params: &ModelParams) -> f64 {
        match *self {
            GammaMax::Factor(f) => f * gamma_inf_uncontrolled(params),
            GammaMax::Absolute(g) => g,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Coefficients {
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
    pub b1: f64,
    pub b2: f64,
    pub a_bar: f64,
    #[serde(rename = "C1")]
    pub c1: f64,
    pub gamma_inf0: f64,
    pub gamma_max: f64,
    #[serde(rename = "L_v")]
    pub l_v: f64,
    #[serde(rename = "M0")]
    pub m0: f64,
    pub h_max: f64,
    /// True when `h_max` overflowed and was capped at [`H_MAX_CAP`].
    pub h_max_capped: bool,
}

impl Coefficients {
    /// `4 a1 a2 − a3²`, positive when the (x, m)-Hessian of W is definite.
    pub fn hessian_det(&self) -> f64 {
        4.0 * self.a1 * self.a2 - self.a3 * self.a3
    }

    /// `ā` through the alternative identity `a3 − a2(2λ + δ)`.
    pub fn a_bar_alt(&self, params: &ModelParams) -> f64 {
        self.a3 - self.a2 * (2.0 * params.lambda + params.delta)
    }

    /// The five algebraic equations the ansatz coefficients solve.
    pub fn residuals(&self, params: &ModelParams) -> [f64; 5] {
        let ModelParams {
            lambda: l,
            mu_bar: mu,
            delta: d,
            kappa: k,
            rho: r,
            ..
        } = *params;
        let (a1, a2, a3, b1, b2) = (self.a1, self.a2, self.a3, self.b1, self.b2);
        [
            -2.0 * a1 * a1 / r + k / 2.0 - d * a1,
            a3 - a3 * a3 / (2.0 * r) - 2.0 * l * a2 - d * a2,
            2.0 * a1 - 2.0 * a1 * a3 / r - l * a3 - d * a3,
            l * mu * a3 - 2.0 * a1 * b1 / r - d * b1,
            b1 - a3 * b1 / r + 2.0 * l * mu * a2 - l * b2 - d * b2,
        ]
    }

    /// Constant `(C1 + a2 σ2²)/δ` of the ansatz.
    pub fn constant_term(&self, params: &ModelParams) -> f64 {
        (self.c1 + self.a2 * params.sigma2 * params.sigma2) / params.delta
    }

    /// Quadratic-linear part `a1 x² + a2 m² + a3 x m + b1 x + b2 m`.
    pub fn quadratic_part(&self, x: f64, m: f64) -> f64 {
        self.a1 * x * x + self.a2 * m * m + self.a3 * x * m + self.b1 * x + self.b2 * m
    }
}

/// `a1` through `a_bar` as functions of the parameters only.
pub(crate) fn ansatz(params: &ModelParams) -> (f64, f64, f64, f64, f64, f64, f64) {
    let ModelParams {
        lambda: l,
        mu_bar: mu,
        sigma1: s1,
        delta: d,
        kappa: k,
        rho: r,
        ..
    } = *params;
    // (−δρ + √(δ²ρ² + 4κρ))/4 without cancellation.
    let a1 = k * r / (d * r + (d * d * r * r + 4.0 * k * r).sqrt());
    let a3 = 2.0 * a1 * r / (d * r + l * r + 2.0 * a1);
    let a2 = a3 * (2.0 * r - a3) / (2.0 * r * (2.0 * l + d));
    let b1 = l * mu * a3 * r / (d * r + 2.0 * a1);
    let b2 = (2.0 * l * mu * a2 * r - b1 * a3 + b1 * r) / (r * (l + d));
    let a_bar = a3 * a3 / (2.0 * r);
    let c1 = s1 * s1 * a1 + l * mu * b2 - b1 * b1 / (2.0 * r);
    (a1, a2, a3, b1, b2, a_bar, c1)
}

/// Derivative of `ā` with respect to `κ`.
pub fn d_a_bar_d_kappa(params: &ModelParams) -> f64 {
    let ModelParams {
        lambda: l,
        delta: d,
        kappa: k,
        rho: r,
        ..
    } = *params;
    let (a1, _, a3, ..) = ansatz(params);
    let root = (d * d * r * r + 4.0 * k * r).sqrt();
    let da1 = r / (2.0 * root);
    let den = d * r + l * r + 2.0 * a1;
    let da3 = 2.0 * r * (d * r + l * r) / (den * den) * da1;
    a3 / r * da3
}

pub fn derive_coefficients(params: &ModelParams, cost: &CostSpec, gamma_max: f64) -> Result<Coefficients> {
    params.validate()?;
    let gamma_inf0 = gamma_inf_uncontrolled(params);
    if !(gamma_max.is_finite() && gamma_max > gamma_inf0) {
        return Err(Error::InvalidParams {
            field: "gamma_max",
            reason: format!("must exceed gamma_inf0 = {gamma_inf0}, got {gamma_max}"),
        });
    }
    let (a1, a2, a3, b1, b2, a_bar, c1) = ansatz(params);
    let l_v = a_bar / params.delta;
    let m0 = gamma_max * gamma_max * l_v;
    let raw = cost.inverse_marginal(m0).ok_or(Error::CostRange { m0 })?;
    let (h_max, h_max_capped) = if raw.is_finite() && raw <= H_MAX_CAP {
        (raw, false)
    } else {
        log::warn!("h_max = (c')^-1({m0}) overflows; capping at {H_MAX_CAP:e}");
        (H_MAX_CAP, true)
    };
    Ok(Coefficients {
        a1,
        a2,
        a3,
        b1,
        b2,
        a_bar,
        c1,
        gamma_inf0,
        gamma_max,
        l_v,
        m0,
        h_max,
        h_max_capped,
    })
}

/// Parameters, cost and derived coefficients bundled together.
#[derive(Debug, Clone)]
pub struct Model {
    pub params: ModelParams,
    pub cost: CostSpec,
    pub coeffs: Coefficients,
}

impl Model {
    pub fn new(params: ModelParams, cost: CostSpec, gamma_max: GammaMax) -> Result<Self> {
        let coeffs = derive_coefficients(&params, &cost, gamma_max.resolve(&params))?;
        Ok(Model { params, cost, coeffs })
    }

    /// The unit-parameter model with `c(h) = 0.001 h²` and `γ_max = 1`.
    pub fn canonical() -> Self {
        Model::new(
            ModelParams::canonical(),
            CostSpec::quadratic(1e-3).expect("valid cost"),
            GammaMax::Absolute(1.0),
        )
        .expect("canonical model is valid")
    }

    /// Running cost `k(γ, h) = ā γ + c(h)` of the reduced problem.
    pub fn running_cost(&self, gamma: f64, h: f64) -> f64 {
        self.coeffs.a_bar * gamma + self.cost.c(h)
    }

    /// `ĥ(x)` with this model's `h_max`.
    pub fn h_hat(&self, x: f64) -> Result<f64> {
        self.cost.h_hat(x, self.coeffs.h_max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn canonical_coefficients() {
        let m = Model::canonical();
        let c = m.coeffs;
        let s5 = 5f64.sqrt();
        assert!(close(c.a1, (s5 - 1.0) / 4.0, 1e-15));
        assert!(close(c.a3, s5 - 2.0, 1e-15));
        assert!(close(c.a_bar, (9.0 - 4.0 * s5) / 2.0, 1e-15));
        assert!(close(c.h_max, c.a_bar / (2.0 * 1e-3), 1e-10));
        assert!(close(c.h_max, 13.9320, 1e-4));
        assert!(close(c.hessian_det(), 0.0300566479, 1e-9));
        assert_eq!(c.b1, 0.0);
        assert_eq!(c.b2, 0.0);
        for r in c.residuals(&m.params) {
            assert!(r.abs() < 1e-14);
        }
    }

    #[test]
    fn gamma_inf_cases() {
        let mut p = ModelParams::canonical();
        assert!(close(gamma_inf_uncontrolled(&p), 2f64.sqrt() - 1.0, 1e-15));
        p.sigma2 = 0.0;
        assert_eq!(gamma_inf_uncontrolled(&p), 0.0);
        let p = ModelParams {
            lambda: 0.0,
            sigma1: 2.0,
            sigma2: 0.7,
            ..ModelParams::canonical()
        };
        assert!(close(gamma_inf_uncontrolled(&p), 1.4, 1e-15));
    }

    #[test]
    fn rejects_invalid_params() {
        let p = ModelParams {
            sigma1: 0.0,
            ..ModelParams::canonical()
        };
        assert!(matches!(
            p.validate(),
            Err(Error::InvalidParams { field: "sigma1", .. })
        ));
        let p = ModelParams {
            lambda: -1.0,
            ..ModelParams::canonical()
        };
        assert!(matches!(
            p.validate(),
            Err(Error::InvalidParams { field: "lambda", .. })
        ));
        let c = derive_coefficients(&ModelParams::canonical(), &CostSpec::quadratic(1.0).unwrap(), 0.3);
        assert!(matches!(c, Err(Error::InvalidParams { field: "gamma_max", .. })));
    }

    #[test]
    fn conjugate_examples() {
        let q = CostSpec::quadratic(1e-3).unwrap();
        assert!(close(q.c_star(0.02, 13.932).unwrap(), 0.1, 1e-14));
        assert!(close(q.h_hat(0.02, 13.932).unwrap(), 10.0, 1e-12));
        let a = CostSpec::affine_quadratic(1.0, 1.0).unwrap();
        assert_eq!(a.c_star(0.5, 10.0).unwrap(), 0.0);
        assert_eq!(a.h_hat(0.5, 10.0).unwrap(), 0.0);
        assert!(matches!(q.h_hat(-1.0, 10.0), Err(Error::Domain { .. })));
        assert!(matches!(q.h_hat(1.0, 10.0), Err(Error::Domain { .. })));
    }

    #[test]
    fn custom_cost_inverts_by_bisection() {
        let cosh = CostSpec::custom(CustomCost::new(
            |h: f64| h.cosh() - 1.0 + h,
            |h: f64| h.sinh() + 1.0,
            |h: f64| h.cosh(),
        ))
        .unwrap();
        let x = 3.0;
        let h = cosh.h_hat(x, 5.0).unwrap();
        assert!(close(cosh.dc(h), x, 1e-10));
        assert_eq!(cosh.h_hat(0.7, 5.0).unwrap(), 0.0);
    }

    #[test]
    fn custom_cost_that_never_reaches_m0_is_rejected() {
        let bounded = CostSpec::custom(CustomCost::new(
            |h: f64| h - 0.5 * h.ln_1p(),
            |h: f64| 1.0 - 0.5 / (1.0 + h),
            |h: f64| 0.5 / ((1.0 + h) * (1.0 + h)),
        ))
        .unwrap();
        let p = ModelParams {
            kappa: 1e6,
            ..ModelParams::canonical()
        };
        let r = derive_coefficients(&p, &bounded, 100.0);
        assert!(matches!(r, Err(Error::CostRange { .. })));
    }

    #[test]
    fn tiny_power_exponent_caps_h_max() {
        let cost = CostSpec::power(1e-3, 1e-3).unwrap();
        let c = derive_coefficients(&ModelParams::canonical(), &cost, 1.0).unwrap();
        assert!(c.h_max_capped);
        assert_eq!(c.h_max, H_MAX_CAP);
    }

    #[test]
    fn expensive_cost_gives_zero_h_max() {
        let cost = CostSpec::affine_quadratic(1e-3, 1.0).unwrap();
        let c = derive_coefficients(&ModelParams::canonical(), &cost, 1.0).unwrap();
        assert_eq!(c.h_max, 0.0);
    }

    #[test]
    fn rejects_nonconvex_custom_cost() {
        let r = CostSpec::custom(CustomCost::new(
            |h: f64| h.sqrt(),
            |h: f64| 0.5 / h.sqrt(),
            |h: f64| -0.25 * h.powf(-1.5),
        ));
        assert!(matches!(r, Err(Error::InvalidCost(_))));
    }

    #[test]
    fn d_a_bar_matches_finite_difference() {
        let p = ModelParams {
            kappa: 2.3,
            lambda: 0.4,
            rho: 1.7,
            delta: 0.6,
            ..ModelParams::canonical()
        };
        let e = 1e-6;
        let up = ansatz(&ModelParams {
            kappa: p.kappa + e,
            ..p
        })
        .5;
        let dn = ansatz(&ModelParams {
            kappa: p.kappa - e,
            ..p
        })
        .5;
        let fd = (up - dn) / (2.0 * e);
        assert!((d_a_bar_d_kappa(&p) - fd).abs() < 1e-8 * fd.abs().max(1.0));
    }
}
