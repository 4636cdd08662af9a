//! Stationary point of the optimally controlled variance flow and its
//! parameter sensitivities.
//!
//! At the equilibrium the state `γ` and the adjoint `p = v'(γ)` solve
//! `Φ(γ, p) = 0` with
//!
//! ```text
//! Φ1 = −(σ̄1² + ψ) γ² − 2λγ + σ2²
//! Φ2 = (2(σ̄1² + ψ) γ + 2λ + δ) p − ā,      ψ = ĥ(γ² p / α)
//! ```
//!
//! where `α` scales the acquisition cost. Derivatives with respect to a
//! parameter `θ` follow from the implicit function theorem,
//! `(γ, p)' = −(D_(γ,p) Φ)⁻¹ D_θ Φ`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{d_a_bar_d_kappa, GammaMax, Model, ModelParams};
use crate::riccati;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EquilibriumPoint {
    pub gamma_eq: f64,
    pub p_eq: f64,
    pub h_eq: f64,
    pub v_eq: f64,
    /// `max |Φ|` at the solution.
    pub residual: f64,
    pub alpha: f64,
}

fn psi(gamma: f64, p: f64, model: &Model, alpha: f64) -> f64 {
    model.cost.h_hat_unbounded((gamma * gamma * p / alpha).max(0.0))
}

/// `(Φ1, Φ2)` at `(γ, p)`.
pub fn phi(gamma: f64, p: f64, model: &Model, alpha: f64) -> [f64; 2] {
    let pr = &model.params;
    let b = pr.sigma1_bar_sq() + psi(gamma, p, model, alpha);
    [
        -b * gamma * gamma - 2.0 * pr.lambda * gamma + pr.sigma2 * pr.sigma2,
        (2.0 * b * gamma + 2.0 * pr.lambda + pr.delta) * p - model.coeffs.a_bar,
    ]
}

fn jacobian_unchecked(gamma: f64, p: f64, model: &Model, alpha: f64) -> [[f64; 2]; 2] {
    let pr = &model.params;
    let x = gamma * gamma * p / alpha;
    let ps = model.cost.h_hat_unbounded(x.max(0.0));
    let dpsi = model.cost.h_hat_prime(x) / alpha;
    let psi_g = dpsi * 2.0 * gamma * p;
    let psi_p = dpsi * gamma * gamma;
    let f_g = -2.0 * (pr.sigma1_bar_sq() + ps) * gamma - 2.0 * pr.lambda;
    let f_h = -gamma * gamma;
    let f_gg = -2.0 * (pr.sigma1_bar_sq() + ps);
    let f_gh = -2.0 * gamma;
    [
        [f_g + f_h * psi_g, f_h * psi_p],
        [(-f_gg - f_gh * psi_g) * p, pr.delta - f_g - f_gh * psi_p * p],
    ]
}

/// Analytic Jacobian `D_(γ,p) Φ`.
pub fn jacobian_phi(gamma: f64, p: f64, model: &Model, alpha: f64) -> Result<[[f64; 2]; 2]> {
    let kink = model.cost.marginal_at_zero();
    let x = gamma * gamma * p / alpha;
    if kink > 0.0 && (x - kink).abs() < 1e-12 {
        return Err(Error::NonSmoothPoint { x });
    }
    Ok(jacobian_unchecked(gamma, p, model, alpha))
}

fn det(j: &[[f64; 2]; 2]) -> f64 {
    j[0][0] * j[1][1] - j[0][1] * j[1][0]
}

fn solve2(j: &[[f64; 2]; 2], rhs: [f64; 2]) -> Option<[f64; 2]> {
    let d = det(j);
    if d == 0.0 || !d.is_finite() {
        return None;
    }
    Some([
        (rhs[0] * j[1][1] - j[0][1] * rhs[1]) / d,
        (j[0][0] * rhs[1] - j[1][0] * rhs[0]) / d,
    ])
}

fn norm(r: [f64; 2]) -> f64 {
    r[0].abs().max(r[1].abs())
}

const PHI_TOL: f64 = 1e-12;

fn newton(model: &Model, alpha: f64, start: [f64; 2]) -> ([f64; 2], f64) {
    let c = &model.coeffs;
    let p_cap = c.l_v * (1.0 + 1e-6);
    let project = |x: [f64; 2]| [x[0].clamp(0.0, c.gamma_max), x[1].clamp(0.0, p_cap)];
    let mut x = project(start);
    let mut r = norm(phi(x[0], x[1], model, alpha));
    for _ in 0..100 {
        if r < PHI_TOL {
            break;
        }
        let f = phi(x[0], x[1], model, alpha);
        let j = jacobian_unchecked(x[0], x[1], model, alpha);
        let Some(step) = solve2(&j, f) else { break };
        let mut t = 1.0;
        let mut improved = false;
        for _ in 0..40 {
            let cand = project([x[0] - t * step[0], x[1] - t * step[1]]);
            let rc = norm(phi(cand[0], cand[1], model, alpha));
            if rc < r {
                x = cand;
                r = rc;
                improved = true;
                break;
            }
            t *= 0.5;
        }
        if !improved {
            break;
        }
    }
    (x, r)
}

/// Root of `p ↦ Φ2(γ, p)`, which is increasing in `p`.
fn adjoint_for(gamma: f64, model: &Model, alpha: f64) -> f64 {
    let pr = &model.params;
    let (mut lo, mut hi) = (0.0, model.coeffs.a_bar / (2.0 * pr.lambda + pr.delta));
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if phi(gamma, mid, model, alpha)[1] < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn nested_bisection(model: &Model, alpha: f64) -> [f64; 2] {
    let (mut lo, mut hi) = (0.0, model.coeffs.gamma_inf0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let p = adjoint_for(mid, model, alpha);
        if phi(mid, p, model, alpha)[0] > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let g = 0.5 * (lo + hi);
    [g, adjoint_for(g, model, alpha)]
}

/// Solves `Φ = 0` by damped Newton, falling back to nested bisection.
pub fn solve_equilibrium(model: &Model, alpha: f64) -> Result<EquilibriumPoint> {
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(Error::InvalidParams {
            field: "alpha",
            reason: format!("must be > 0, got {alpha}"),
        });
    }
    let pr = &model.params;
    let c = &model.coeffs;
    let g0 = c.gamma_inf0;
    let start = [
        g0,
        c.a_bar / (2.0 * pr.sigma1_bar_sq() * g0 + 2.0 * pr.lambda + pr.delta),
    ];
    let (mut x, mut r) = newton(model, alpha, start);
    if r >= PHI_TOL {
        log::debug!("Newton stalled at |phi| = {r:e}; using nested bisection");
        let (xb, rb) = newton(model, alpha, nested_bisection(model, alpha));
        if rb < r {
            x = xb;
            r = rb;
        }
    }
    if !(r < PHI_TOL) {
        return Err(Error::NoConvergence {
            iterations: 100,
            last_change: r,
            context: format!("equilibrium: best iterate gamma = {}, p = {}", x[0], x[1]),
        });
    }
    let (gamma_eq, p_eq) = (x[0], x[1]);
    let h_eq = psi(gamma_eq, p_eq, model, alpha);
    Ok(EquilibriumPoint {
        gamma_eq,
        p_eq,
        h_eq,
        v_eq: (c.a_bar * gamma_eq + alpha * model.cost.c(h_eq)) / pr.delta,
        residual: r,
        alpha,
    })
}

/// Rate that keeps `γ` stationary, `−(2λγ − σ2²)/γ² − σ̄1²`.
pub fn stationary_rate(gamma: f64, params: &ModelParams) -> f64 {
    -(2.0 * params.lambda * gamma - params.sigma2 * params.sigma2) / (gamma * gamma) - params.sigma1_bar_sq()
}

/// Closed-form `v'(γ_eq)`: the inactive formula `ā/(2σ̄1²γ + 2λ + δ)` for
/// `γ_eq ≤ γ_D`, otherwise `α c'(h_eq)/γ_eq²` with the stationary rate.
/// `width` is the ambiguity band around `γ_D` (typically `2Δγ`).
pub fn equilibrium_slope(eq: &EquilibriumPoint, model: &Model, gamma_d: f64, width: f64) -> Result<f64> {
    let pr = &model.params;
    let g = eq.gamma_eq;
    let inactive = model.coeffs.a_bar / (2.0 * pr.sigma1_bar_sq() * g + 2.0 * pr.lambda + pr.delta);
    if g == 0.0 {
        return Ok(inactive);
    }
    let active = eq.alpha * model.cost.dc(stationary_rate(g, pr).max(0.0)) / (g * g);
    if (g - gamma_d).abs() < width {
        return Err(Error::CaseMismatch {
            gamma_eq: g,
            gamma_d,
            width,
            inactive,
            active,
        });
    }
    Ok(if g <= gamma_d { inactive } else { active })
}

/// `v''(γ_eq)` from the stable eigenvector of `D_(γ,p) Φ`.
pub(crate) fn stable_curvature(eq: &EquilibriumPoint, model: &Model, alpha: f64) -> Result<f64> {
    let j = jacobian_unchecked(eq.gamma_eq, eq.p_eq, model, alpha);
    let tr = j[0][0] + j[1][1];
    let d = det(&j);
    let disc = tr * tr - 4.0 * d;
    if !(d < 0.0) || disc < 0.0 {
        return Err(Error::SingularJacobian { det: d });
    }
    let mu = 0.5 * (tr - disc.sqrt());
    // Rows of (J − μI) e = 0; take the better conditioned one.
    let (eg, ep) = if j[0][1].abs() + (j[0][0] - mu).abs() >= j[1][0].abs() + (j[1][1] - mu).abs() {
        (j[0][1], mu - j[0][0])
    } else {
        (mu - j[1][1], j[1][0])
    };
    Ok(ep / eg)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SensitivityParameter {
    Sigma1,
    Sigma2Sq,
    Kappa,
    Alpha,
}

impl SensitivityParameter {
    pub const ALL: [SensitivityParameter; 4] = [
        SensitivityParameter::Sigma1,
        SensitivityParameter::Sigma2Sq,
        SensitivityParameter::Kappa,
        SensitivityParameter::Alpha,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SensitivityParameter::Sigma1 => "sigma1",
            SensitivityParameter::Sigma2Sq => "sigma2_sq",
            SensitivityParameter::Kappa => "kappa",
            SensitivityParameter::Alpha => "alpha",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.name() == s)
    }

    /// Signs of `(dγ_eq, dh_eq, dv_eq)` established for interior equilibria;
    /// `None` where no sign is known.
    pub fn expected_signs(self) -> [Option<f64>; 3] {
        match self {
            SensitivityParameter::Sigma1 => [Some(1.0), Some(1.0), Some(1.0)],
            SensitivityParameter::Sigma2Sq => [Some(1.0), Some(1.0), Some(1.0)],
            SensitivityParameter::Kappa => [Some(-1.0), Some(1.0), None],
            SensitivityParameter::Alpha => [Some(1.0), Some(-1.0), Some(1.0)],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SignVerdict {
    pub quantity: &'static str,
    pub expected: Option<&'static str>,
    pub observed: &'static str,
    pub verdict: &'static str,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SensitivityReport {
    pub parameter: SensitivityParameter,
    pub d_gamma_eq: f64,
    pub d_p_eq: f64,
    pub d_h_eq: f64,
    pub d_v_eq: f64,
    pub fd_gamma_eq: f64,
    pub fd_p_eq: f64,
    pub fd_h_eq: f64,
    pub fd_v_eq: f64,
    /// Largest relative gap between analytic and finite-difference values.
    pub fd_max_rel_error: f64,
    pub jacobian_det: f64,
    pub signs: Vec<SignVerdict>,
}

impl SensitivityReport {
    pub fn all_signs_pass(&self) -> bool {
        self.signs.iter().all(|s| s.verdict != "FAIL")
    }
}

fn sign_label(x: f64) -> &'static str {
    if x > 0.0 {
        "+"
    } else if x < 0.0 {
        "-"
    } else {
        "0"
    }
}

/// Model and cost scale with the parameter moved to `value`.
fn perturbed(model: &Model, alpha: f64, param: SensitivityParameter, value: f64) -> Result<(Model, f64)> {
    let mut params = model.params;
    match param {
        SensitivityParameter::Sigma1 => params.sigma1 = value,
        SensitivityParameter::Sigma2Sq => params.sigma2 = value.max(0.0).sqrt(),
        SensitivityParameter::Kappa => params.kappa = value,
        SensitivityParameter::Alpha => return Ok((model.clone(), value)),
    }
    let m = Model::new(params, model.cost.clone(), GammaMax::Absolute(model.coeffs.gamma_max))?;
    Ok((m, alpha))
}

fn parameter_value(model: &Model, alpha: f64, param: SensitivityParameter) -> f64 {
    match param {
        SensitivityParameter::Sigma1 => model.params.sigma1,
        SensitivityParameter::Sigma2Sq => model.params.sigma2 * model.params.sigma2,
        SensitivityParameter::Kappa => model.params.kappa,
        SensitivityParameter::Alpha => alpha,
    }
}

/// Analytic sensitivities with finite-difference cross-checks; signs are
/// reported but not enforced.
pub fn compute_sensitivity(
    eq: &EquilibriumPoint,
    param: SensitivityParameter,
    model: &Model,
) -> Result<SensitivityReport> {
    let alpha = eq.alpha;
    let pr = &model.params;
    let (g, p) = (eq.gamma_eq, eq.p_eq);
    let j = jacobian_phi(g, p, model, alpha)?;
    let jd = det(&j);
    let x = g * g * p / alpha;
    let dpsi_dx = model.cost.h_hat_prime(x) / alpha;
    let psi_g = dpsi_dx * 2.0 * g * p;
    let psi_p = dpsi_dx * g * g;
    // ∂ψ/∂α at fixed (γ, p).
    let psi_alpha = -dpsi_dx * x;
    let s3 = pr.sigma1.powi(3);
    let d_theta = match param {
        SensitivityParameter::Sigma2Sq => [1.0, 0.0],
        SensitivityParameter::Sigma1 => [2.0 * g * g / s3, -4.0 * g * p / s3],
        SensitivityParameter::Kappa => [0.0, -d_a_bar_d_kappa(pr)],
        SensitivityParameter::Alpha => [-g * g * psi_alpha, 2.0 * g * p * psi_alpha],
    };
    let sol = solve2(&j, d_theta).ok_or(Error::SingularJacobian { det: jd })?;
    let (dg, dp) = (-sol[0], -sol[1]);
    let direct_h = if param == SensitivityParameter::Alpha {
        psi_alpha
    } else {
        0.0
    };
    let dh = psi_g * dg + psi_p * dp + direct_h;
    let d_abar = if param == SensitivityParameter::Kappa {
        d_a_bar_d_kappa(pr)
    } else {
        0.0
    };
    let direct_v = if param == SensitivityParameter::Alpha {
        model.cost.c(eq.h_eq)
    } else {
        0.0
    };
    let dv = (model.coeffs.a_bar * dg + d_abar * g + alpha * model.cost.dc(eq.h_eq) * dh + direct_v) / pr.delta;

    let theta = parameter_value(model, alpha, param);
    let e = 1e-5;
    let solve_at = |value: f64| -> Result<EquilibriumPoint> {
        let (m, a) = perturbed(model, alpha, param, value)?;
        solve_equilibrium(&m, a)
    };
    let up = solve_at(theta * (1.0 + e))?;
    let dn = solve_at(theta * (1.0 - e))?;
    let span = 2.0 * e * theta;
    let fd = [
        (up.gamma_eq - dn.gamma_eq) / span,
        (up.p_eq - dn.p_eq) / span,
        (up.h_eq - dn.h_eq) / span,
        (up.v_eq - dn.v_eq) / span,
    ];
    let analytic = [dg, dp, dh, dv];
    let fd_max_rel_error = analytic
        .iter()
        .zip(fd)
        .map(|(a, f)| (a - f).abs() / f.abs().max(a.abs()).max(1e-300))
        .fold(0.0, f64::max);

    let names = ["gamma_eq", "h_eq", "v_eq"];
    let observed = [dg, dh, dv];
    let signs = param
        .expected_signs()
        .iter()
        .zip(names.iter().zip(observed))
        .map(|(exp, (&quantity, obs))| {
            let observed = sign_label(obs);
            match exp {
                None => SignVerdict {
                    quantity,
                    expected: None,
                    observed,
                    verdict: "unasserted",
                },
                Some(s) => {
                    let expected = sign_label(*s);
                    SignVerdict {
                        quantity,
                        expected: Some(expected),
                        observed,
                        verdict: if expected == observed { "PASS" } else { "FAIL" },
                    }
                }
            }
        })
        .collect();

    Ok(SensitivityReport {
        parameter: param,
        d_gamma_eq: dg,
        d_p_eq: dp,
        d_h_eq: dh,
        d_v_eq: dv,
        fd_gamma_eq: fd[0],
        fd_p_eq: fd[1],
        fd_h_eq: fd[2],
        fd_v_eq: fd[3],
        fd_max_rel_error,
        jacobian_det: jd,
        signs,
    })
}

/// As [`compute_sensitivity`], failing with `SignMismatch` when an
/// established sign is not reproduced.
pub fn sensitivity(eq: &EquilibriumPoint, param: SensitivityParameter, model: &Model) -> Result<SensitivityReport> {
    if !(eq.residual < 1e-10) {
        return Err(Error::NoConvergence {
            iterations: 0,
            last_change: eq.residual,
            context: "sensitivity needs a converged equilibrium".into(),
        });
    }
    let report = compute_sensitivity(eq, param, model)?;
    if let Some(bad) = report.signs.iter().find(|s| s.verdict == "FAIL") {
        return Err(Error::SignMismatch {
            parameter: param.name().into(),
            detail: format!(
                "d{}/d{} has sign {} but {} is expected",
                bad.quantity,
                param.name(),
                bad.observed,
                bad.expected.unwrap_or("?")
            ),
        });
    }
    Ok(report)
}

/// `f(γ, H(γ))` along the equilibrium functional with `p` solving `Φ2 = 0`.
pub fn equilibrium_functional(gamma: f64, model: &Model, alpha: f64) -> f64 {
    let p = adjoint_for(gamma, model, alpha);
    riccati::variance_drift(gamma, psi(gamma, p, model, alpha), &model.params)
}
