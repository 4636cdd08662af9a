//! Conditional variance dynamics `γ' = f(γ, h)`.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::model::{Model, ModelParams};

/// `f(γ, h) = −(σ̄1² + h) γ² − 2λγ + σ2²`.
pub fn variance_drift(gamma: f64, h: f64, params: &ModelParams) -> f64 {
    -(params.sigma1_bar_sq() + h) * gamma * gamma - 2.0 * params.lambda * gamma + params.sigma2 * params.sigma2
}

/// `∂f/∂γ`.
pub fn variance_drift_dgamma(gamma: f64, h: f64, params: &ModelParams) -> f64 {
    -2.0 * (params.sigma1_bar_sq() + h) * gamma - 2.0 * params.lambda
}

/// Drift of the precision `γ̌ = 1/γ`: `σ̄1² + h + 2λγ̌ − σ2² γ̌²`.
pub fn precision_drift(gamma_check: f64, h: f64, params: &ModelParams) -> f64 {
    params.sigma1_bar_sq() + h + 2.0 * params.lambda * gamma_check
        - params.sigma2 * params.sigma2 * gamma_check * gamma_check
}

/// Stable stationary point `γ₊(h)` of the constant-rate flow.
pub fn stationary_variance(h: f64, params: &ModelParams) -> f64 {
    let b = params.sigma1_bar_sq() + h;
    let s2 = params.sigma2 * params.sigma2;
    if s2 == 0.0 {
        return 0.0;
    }
    let delta = (params.lambda * params.lambda + b * s2).sqrt();
    s2 / (params.lambda + delta)
}

/// Closed-form solution of `γ' = f(γ, h)` with constant `h`.
pub fn solve_constant_rate(gamma0: f64, h: f64, t: f64, params: &ModelParams) -> Result<f64> {
    if !(gamma0 >= 0.0 && h >= 0.0 && t >= 0.0) {
        return Err(Error::InvalidParams {
            field: "gamma0/h/t",
            reason: format!("require gamma0, h, t >= 0; got {gamma0}, {h}, {t}"),
        });
    }
    let lambda = params.lambda;
    let s2 = params.sigma2 * params.sigma2;
    let b = params.sigma1_bar_sq() + h;
    if b == 0.0 {
        // Only reachable with an infinite σ1.
        if lambda == 0.0 {
            if s2 > 0.0 {
                return Err(Error::DegenerateDynamics(format!(
                    "linear growth gamma0 + sigma2^2 t = {}",
                    gamma0 + s2 * t
                )));
            }
            return Ok(gamma0);
        }
        let g_inf = s2 / (2.0 * lambda);
        return Ok(g_inf + (gamma0 - g_inf) * (-2.0 * lambda * t).exp());
    }
    let delta = (lambda * lambda + b * s2).sqrt();
    let g_plus = if s2 == 0.0 { 0.0 } else { s2 / (lambda + delta) };
    // (1 − e^{−2Δt}) / (2Δ), with its Δt → 0 limit.
    let x = 2.0 * delta * t;
    let tau = if x < 2e-8 {
        t * (1.0 - 0.5 * x + x * x / 6.0)
    } else {
        -(-x).exp_m1() / (2.0 * delta)
    };
    let e = (-x).exp();
    let d = gamma0 - g_plus;
    Ok(g_plus + d * e / (1.0 + d * b * tau))
}

/// Uniform time grid `t_k = k·dt`, `k = 0..=steps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    pub dt: f64,
    pub steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, dt: f64) -> Result<Self> {
        if !(dt > 0.0 && horizon >= 0.0 && dt.is_finite() && horizon.is_finite()) {
            return Err(Error::InvalidParams {
                field: "dt",
                reason: format!("need dt > 0 and horizon >= 0, got {dt}, {horizon}"),
            });
        }
        let steps = (horizon / dt).round() as usize;
        Ok(TimeGrid { dt, steps })
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }

    pub fn horizon(&self) -> f64 {
        self.time(self.steps)
    }
}

type RateFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Acquisition rate as a function of time or of the current variance.
#[derive(Clone)]
pub enum RateSchedule {
    Constant(f64),
    /// `rates[i]` applies on `[starts[i], starts[i+1])`; the last rate holds forever.
    Piecewise {
        starts: Vec<f64>,
        rates: Vec<f64>,
    },
    /// One rate per grid step.
    PerStep(Vec<f64>),
    /// Open-loop `t ↦ h(t)`.
    OfTime(RateFn),
    /// Closed-loop `γ ↦ H(γ)`.
    Feedback(RateFn),
}

impl std::fmt::Debug for RateSchedule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RateSchedule::Constant(h) => write!(f, "Constant({h})"),
            RateSchedule::Piecewise { starts, rates } => {
                write!(f, "Piecewise {{ starts: {starts:?}, rates: {rates:?} }}")
            }
            RateSchedule::PerStep(r) => write!(f, "PerStep(len {})", r.len()),
            RateSchedule::OfTime(_) => f.write_str("OfTime(..)"),
            RateSchedule::Feedback(_) => f.write_str("Feedback(..)"),
        }
    }
}

impl RateSchedule {
    pub fn feedback(map: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        RateSchedule::Feedback(Arc::new(map))
    }

    pub fn of_time(map: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        RateSchedule::OfTime(Arc::new(map))
    }

    fn piecewise_at(starts: &[f64], rates: &[f64], t: f64) -> f64 {
        let i = starts.partition_point(|&s| s <= t);
        rates[i.saturating_sub(1)]
    }

    /// Rates for the three RK4 stages of step `k` (start, midpoint, end).
    /// `gamma_stage` is only consulted by feedback schedules.
    fn stage_rate(&self, k: usize, grid: &TimeGrid, stage: Stage, gamma_stage: f64) -> f64 {
        let t0 = grid.time(k);
        match self {
            RateSchedule::Constant(h) => *h,
            RateSchedule::Piecewise { starts, rates } => Self::piecewise_at(starts, rates, t0 + 0.5 * grid.dt),
            RateSchedule::PerStep(r) => r[k.min(r.len() - 1)],
            RateSchedule::OfTime(f) => f(t0 + stage.offset() * grid.dt),
            RateSchedule::Feedback(f) => f(gamma_stage),
        }
    }

    /// Rate reported at node `k`.
    fn node_rate(&self, k: usize, grid: &TimeGrid, gamma: f64) -> f64 {
        match self {
            RateSchedule::Constant(h) => *h,
            RateSchedule::Piecewise { starts, rates } => Self::piecewise_at(starts, rates, grid.time(k)),
            RateSchedule::PerStep(r) => r[k.min(r.len() - 1)],
            RateSchedule::OfTime(f) => f(grid.time(k)),
            RateSchedule::Feedback(f) => f(gamma),
        }
    }

    fn validate(&self, grid: &TimeGrid, h_max: f64) -> Result<()> {
        let bad = |h: f64| Error::InvalidParams {
            field: "rate",
            reason: format!("rate {h} outside [0, {h_max}]"),
        };
        let ok = |h: f64| (0.0..=h_max * (1.0 + 1e-12)).contains(&h);
        match self {
            RateSchedule::Constant(h) if !ok(*h) => Err(bad(*h)),
            RateSchedule::Piecewise { starts, rates } => {
                if starts.is_empty() || starts.len() != rates.len() || starts[0] != 0.0 {
                    return Err(Error::InvalidParams {
                        field: "rate",
                        reason: "piecewise schedule needs matching starts/rates beginning at t = 0".into(),
                    });
                }
                match rates.iter().find(|&&h| !ok(h)) {
                    Some(&h) => Err(bad(h)),
                    None => Ok(()),
                }
            }
            RateSchedule::PerStep(r) => {
                if r.len() < grid.steps.max(1) {
                    return Err(Error::InvalidParams {
                        field: "rate",
                        reason: format!("{} per-step rates for {} steps", r.len(), grid.steps),
                    });
                }
                match r.iter().find(|&&h| !ok(h)) {
                    Some(&h) => Err(bad(h)),
                    None => Ok(()),
                }
            }
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Copy)]
enum Stage {
    Start,
    Mid,
    End,
}

impl Stage {
    fn offset(self) -> f64 {
        match self {
            Stage::Start => 0.0,
            Stage::Mid => 0.5,
            Stage::End => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VariancePath {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub rate_used: Vec<f64>,
}

impl VariancePath {
    pub fn last(&self) -> f64 {
        *self.values.last().expect("path has at least one node")
    }
}

fn check_inputs(gamma0: f64, schedule: &RateSchedule, grid: &TimeGrid, model: &Model) -> Result<()> {
    let c = &model.coeffs;
    if !(0.0..=c.gamma_max).contains(&gamma0) {
        return Err(Error::GammaOutOfRange {
            gamma: gamma0,
            gamma_max: c.gamma_max,
        });
    }
    let bound = 0.1 / (model.params.sigma1_bar_sq() + c.h_max);
    if grid.dt > bound {
        return Err(Error::StepSize { dt: grid.dt, bound });
    }
    schedule.validate(grid, c.h_max)
}

/// One RK4 step of the pair `(γ, β)`; `β` is skipped when `None`.
fn rk4_step(
    k: usize,
    gamma: f64,
    beta: Option<f64>,
    schedule: &RateSchedule,
    grid: &TimeGrid,
    model: &Model,
) -> (f64, Option<f64>) {
    let p = &model.params;
    let h_max = model.coeffs.h_max;
    let dt = grid.dt;
    let rate = |stage: Stage, g: f64| schedule.stage_rate(k, grid, stage, g).clamp(0.0, h_max);
    let fb = |g: f64, b: f64, h: f64| -2.0 * ((p.sigma1_bar_sq() + h) * g + p.lambda) * b;

    let b0 = beta.unwrap_or(0.0);
    let h1 = rate(Stage::Start, gamma);
    let k1 = variance_drift(gamma, h1, p);
    let l1 = fb(gamma, b0, h1);
    let g2 = gamma + 0.5 * dt * k1;
    let h2 = rate(Stage::Mid, g2);
    let k2 = variance_drift(g2, h2, p);
    let l2 = fb(g2, b0 + 0.5 * dt * l1, h2);
    let g3 = gamma + 0.5 * dt * k2;
    let h3 = rate(Stage::Mid, g3);
    let k3 = variance_drift(g3, h3, p);
    let l3 = fb(g3, b0 + 0.5 * dt * l2, h3);
    let g4 = gamma + dt * k3;
    let h4 = rate(Stage::End, g4);
    let k4 = variance_drift(g4, h4, p);
    let l4 = fb(g4, b0 + dt * l3, h4);

    let next = gamma + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    let next = next.clamp(0.0, model.coeffs.gamma_max + 1e-12);
    let beta = beta.map(|b| b + dt / 6.0 * (l1 + 2.0 * l2 + 2.0 * l3 + l4));
    (next, beta)
}

/// One RK4 step of `γ' = f(γ, h)` with `h` held fixed, clamped like
/// [`integrate_variance`].
pub fn rk4_fixed_rate_step(gamma: f64, h: f64, dt: f64, model: &Model) -> f64 {
    let grid = TimeGrid { dt, steps: 1 };
    rk4_step(0, gamma, None, &RateSchedule::Constant(h), &grid, model).0
}

/// Fixed-step RK4 integration of `γ' = f(γ, h)`.
pub fn integrate_variance(
    gamma0: f64,
    schedule: &RateSchedule,
    grid: &TimeGrid,
    model: &Model,
) -> Result<VariancePath> {
    check_inputs(gamma0, schedule, grid, model)?;
    let n = grid.steps + 1;
    let mut times = Vec::with_capacity(n);
    let mut values = Vec::with_capacity(n);
    let mut rate_used = Vec::with_capacity(n);
    let h_max = model.coeffs.h_max;
    let mut gamma = gamma0;
    for k in 0..n {
        times.push(grid.time(k));
        values.push(gamma);
        rate_used.push(schedule.node_rate(k, grid, gamma).clamp(0.0, h_max));
        if k < grid.steps {
            gamma = rk4_step(k, gamma, None, schedule, grid, model).0;
        }
    }
    Ok(VariancePath {
        times,
        values,
        rate_used,
    })
}

/// Sensitivity `β_t = ∂γ_t/∂γ0` along the path, with the rate held at its
/// scheduled value: `β' = −2((σ̄1² + h)γ + λ)β`, `β0 = 1`.
pub fn initial_state_sensitivity(
    gamma0: f64,
    schedule: &RateSchedule,
    grid: &TimeGrid,
    model: &Model,
) -> Result<Vec<f64>> {
    check_inputs(gamma0, schedule, grid, model)?;
    let mut out = Vec::with_capacity(grid.steps + 1);
    let (mut gamma, mut beta) = (gamma0, 1.0);
    out.push(beta);
    for k in 0..grid.steps {
        let (g, b) = rk4_step(k, gamma, Some(beta), schedule, grid, model);
        gamma = g;
        beta = b.expect("beta is tracked");
        out.push(beta);
    }
    Ok(out)
}
