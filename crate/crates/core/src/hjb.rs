//! Reduced deterministic HJB for the variance value function `v(γ)`:
//! `−δv + inf_h { f(γ,h) v' + āγ + c(h) } = 0` on `[0, γ_max]`.
//!
//! The main solver is a semi-Lagrangian discretisation of the dynamic
//! programming principle. Its fixed point is reached by policy iteration,
//! where each policy is evaluated exactly by upwind sweeps ordered away from
//! the stationary point of the discrete flow, and is then certified by plain
//! Jacobi sweeps of the Bellman operator.
//!
//! For quadratic costs, [`quadratic_ode_oracle`] provides an independent
//! solution by integrating the explicit first-order ODE for `v` outward from
//! the equilibrium.

use rayon::prelude::*;

use crate::equilibrium::EquilibriumPoint;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::riccati::{self, RateSchedule, TimeGrid};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

impl Grid {
    pub fn new(lo: f64, hi: f64, n: usize) -> Result<Self> {
        if n < 2 || !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::InvalidGrid(format!(
                "need lo < hi and n >= 2, got [{lo}, {hi}], n = {n}"
            )));
        }
        Ok(Grid { lo, hi, n })
    }

    /// Grid on `[0, γ_max]` of the given model.
    pub fn for_model(model: &Model, n: usize) -> Result<Self> {
        Self::new(0.0, model.coeffs.gamma_max, n)
    }

    pub fn spacing(&self) -> f64 {
        (self.hi - self.lo) / (self.n - 1) as f64
    }

    pub fn node(&self, i: usize) -> f64 {
        if i + 1 == self.n {
            self.hi
        } else {
            self.lo + (self.hi - self.lo) * (i as f64 / (self.n - 1) as f64)
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.node(i)).collect()
    }

    /// Cell index `j` and weight `w` with `x = (1−w)·node(j) + w·node(j+1)`.
    pub fn locate(&self, x: f64) -> (usize, f64) {
        let s = (x - self.lo) / self.spacing();
        let j = (s.floor().max(0.0) as usize).min(self.n - 2);
        let w = (s - j as f64).clamp(0.0, 1.0);
        (j, w)
    }

    pub fn interpolate(&self, values: &[f64], x: f64) -> f64 {
        let (j, w) = self.locate(x);
        (1.0 - w) * values[j] + w * values[j + 1]
    }
}

/// Monotone `γ ↦ H*(γ)` built from a value table.
#[derive(Debug, Clone)]
pub struct FeedbackMap {
    grid: Grid,
    /// Nondecreasing projection of `γ² v'(γ)` at the nodes.
    marginal: Vec<f64>,
    gamma_d: f64,
    h_max: f64,
    model: Model,
}

impl FeedbackMap {
    pub fn rate(&self, gamma: f64) -> f64 {
        if gamma <= self.gamma_d {
            return 0.0;
        }
        let x = self
            .grid
            .interpolate(&self.marginal, gamma.clamp(self.grid.lo, self.grid.hi));
        self.model.cost.h_hat_unbounded(x.max(0.0)).clamp(0.0, self.h_max)
    }

    pub fn gamma_d(&self) -> f64 {
        self.gamma_d
    }

    pub fn schedule(&self) -> RateSchedule {
        let map = self.clone();
        RateSchedule::feedback(move |g| map.rate(g))
    }
}

#[derive(Debug, Clone)]
pub struct ValueTable {
    pub grid: Grid,
    pub v: Vec<f64>,
    pub v_slope: Vec<f64>,
    pub h_star: Vec<f64>,
    pub gamma_d: f64,
    pub iterations: usize,
    pub residual: f64,
    /// Tolerance the table was solved to; scales the slope projection check.
    pub tol: f64,
    pub model: Model,
    feedback: FeedbackMap,
}

impl ValueTable {
    /// Builds a table from given node values: slopes by [`slope_table`], the
    /// threshold by [`feedback_threshold`], and `H*` on the nodes.
    pub fn from_values(grid: Grid, v: Vec<f64>, model: &Model, tol: f64) -> Result<Self> {
        if v.len() != grid.n {
            return Err(Error::InvalidGrid(format!("{} values for {} nodes", v.len(), grid.n)));
        }
        let slopes = projected_slopes(&grid, &v, tol)?;
        Ok(Self::assemble(grid, v, slopes, model, tol, 0, f64::NAN))
    }

    fn assemble(
        grid: Grid,
        v: Vec<f64>,
        v_slope: Vec<f64>,
        model: &Model,
        tol: f64,
        iterations: usize,
        residual: f64,
    ) -> Self {
        let raw: Vec<f64> = (0..grid.n).map(|i| grid.node(i).powi(2) * v_slope[i]).collect();
        let marginal = isotonic_nondecreasing(&raw);
        let gamma_d = threshold_from_marginal(&grid, &marginal, model.cost.marginal_at_zero());
        let feedback = FeedbackMap {
            grid,
            marginal,
            gamma_d,
            h_max: model.coeffs.h_max,
            model: model.clone(),
        };
        let h_star = grid.nodes().iter().map(|&g| feedback.rate(g)).collect();
        ValueTable {
            grid,
            v,
            v_slope,
            h_star,
            gamma_d,
            iterations,
            residual,
            tol,
            model: model.clone(),
            feedback,
        }
    }

    pub fn value_at(&self, gamma: f64) -> f64 {
        self.grid.interpolate(&self.v, gamma)
    }

    pub fn slope_at(&self, gamma: f64) -> f64 {
        self.grid.interpolate(&self.v_slope, gamma)
    }

    pub fn feedback(&self) -> &FeedbackMap {
        &self.feedback
    }

    /// CSV rows `gamma,v,v_prime,h_star`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("gamma,v,v_prime,h_star\n");
        for i in 0..self.grid.n {
            out.push_str(&crate::io::csv_row(&[
                self.grid.node(i),
                self.v[i],
                self.v_slope[i],
                self.h_star[i],
            ]));
        }
        out
    }
}

/// `inf_h {f(γ,h) p + āγ + c(h)}` and its minimiser `ĥ(γ²p)`.
pub fn hamiltonian(gamma: f64, p: f64, model: &Model) -> Result<(f64, f64)> {
    let c = &model.coeffs;
    let upper = if gamma > 0.0 {
        c.m0 / (gamma * gamma)
    } else {
        f64::INFINITY
    };
    if !(p >= -1e-9 && p <= upper + 1e-9) {
        return Err(Error::SlopeOutOfRange { gamma, p, upper });
    }
    let p = p.clamp(0.0, upper);
    let x = (gamma * gamma * p).min(c.m0);
    let h = model.h_hat(x)?;
    let f0 = riccati::variance_drift(gamma, 0.0, &model.params);
    let value = f0 * p + c.a_bar * gamma + model.cost.c(h) - h * gamma * gamma * p;
    Ok((value, h))
}

/// Largest step allowed by the value-iteration precondition.
pub fn stability_dt(model: &Model) -> f64 {
    let c = &model.coeffs;
    0.5 / (2.0 * (model.params.sigma1_bar_sq() + c.h_max) * c.gamma_max + 2.0 * model.params.lambda)
}

/// Default value-iteration step: `min(1e-3, stability bound)`, further capped
/// so that no foot point moves more than one cell.
pub fn default_dt(grid: &Grid, model: &Model) -> f64 {
    let p = &model.params;
    let c = &model.coeffs;
    let max_speed = (0..grid.n)
        .map(|i| {
            let g = grid.node(i);
            riccati::variance_drift(g, 0.0, p)
                .abs()
                .max(riccati::variance_drift(g, c.h_max, p).abs())
        })
        .fold(0.0, f64::max);
    let cfl = if max_speed > 0.0 {
        grid.spacing() / max_speed
    } else {
        f64::INFINITY
    };
    1e-3f64.min(stability_dt(model)).min(cfl)
}

#[derive(Debug, Clone, Copy)]
pub struct IterationOptions {
    pub dt: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl IterationOptions {
    pub fn defaults(grid: &Grid, model: &Model) -> Self {
        IterationOptions {
            dt: default_dt(grid, model),
            tol: 1e-10,
            max_iter: 1_000_000,
        }
    }
}

/// Per-node transition of a fixed policy: `v_i = r_i + β[(1−w_i) v_j + w_i v_{j+1}]`.
#[derive(Clone, Copy)]
struct Transition {
    reward: f64,
    cell: usize,
    weight: f64,
}

struct Scheme<'a> {
    grid: Grid,
    model: &'a Model,
    dt: f64,
    beta: f64,
    nodes: Vec<f64>,
    /// Node 0 is absorbing with a fixed value (σ2 = 0).
    pinned_origin: Option<f64>,
}

impl<'a> Scheme<'a> {
    fn transition(&self, i: usize, h: f64) -> Result<Transition> {
        let g = self.nodes[i];
        let foot = g + self.dt * riccati::variance_drift(g, h, &self.model.params);
        let tol = 1e-12 * self.grid.hi.max(1.0);
        if foot < self.grid.lo - tol || foot > self.grid.hi + tol {
            return Err(Error::FootPointEscape { gamma: g, foot });
        }
        let (cell, weight) = self.grid.locate(foot);
        Ok(Transition {
            reward: self.dt * self.model.running_cost(g, h),
            cell,
            weight,
        })
    }

    fn apply(&self, t: &Transition, v: &[f64]) -> f64 {
        t.reward + self.beta * ((1.0 - t.weight) * v[t.cell] + t.weight * v[t.cell + 1])
    }

    /// Raw slope estimate used for the closed-form candidate.
    fn raw_slopes(&self, v: &[f64]) -> Vec<f64> {
        finite_difference_slopes(&self.grid, v)
    }

    /// Candidate rates for node `i` given the slope estimate `s`.
    fn candidates(&self, i: usize, s: f64) -> [f64; 3] {
        let c = &self.model.coeffs;
        let g = self.nodes[i];
        let x = (g * g * s.max(0.0)).min(c.m0);
        let h = self.model.cost.h_hat_unbounded(x).clamp(0.0, c.h_max);
        [h, 0.0, c.h_max]
    }

    /// Best candidate at node `i` against `v`: (value, rate).
    fn improve(&self, i: usize, s: f64, v: &[f64]) -> Result<(f64, f64)> {
        if let (0, Some(v0)) = (i, self.pinned_origin) {
            return Ok((v0, 0.0));
        }
        let mut best = (f64::INFINITY, 0.0);
        for h in self.candidates(i, s) {
            let t = self.transition(i, h)?;
            let val = self.apply(&t, v);
            if val < best.0 {
                best = (val, h);
            }
        }
        Ok(best)
    }

    /// One Jacobi sweep of the Bellman operator; returns new values and rates.
    fn bellman(&self, v: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let slopes = self.raw_slopes(v);
        let out: Result<Vec<(f64, f64)>> = (0..self.grid.n)
            .into_par_iter()
            .map(|i| self.improve(i, slopes[i], v))
            .collect();
        Ok(out?.into_iter().unzip())
    }

    /// Solves `v = r + βPv` for a fixed policy.
    fn evaluate(&self, policy: &[f64], v: &mut [f64]) -> Result<()> {
        let n = self.grid.n;
        let trans: Vec<Transition> = (0..n).map(|i| self.transition(i, policy[i])).collect::<Result<_>>()?;
        if let Some(v0) = self.pinned_origin {
            v[0] = v0;
        }
        let pinned = |i: usize| i == 0 && self.pinned_origin.is_some();
        let local = |i: usize, v: &[f64]| -> f64 {
            let t = &trans[i];
            let (j, w) = (t.cell, t.weight);
            let mut diag = 0.0;
            let mut rest = t.reward;
            if j == i {
                diag += self.beta * (1.0 - w);
            } else {
                rest += self.beta * (1.0 - w) * v[j];
            }
            if j + 1 == i {
                diag += self.beta * w;
            } else {
                rest += self.beta * w * v[j + 1];
            }
            rest / (1.0 - diag)
        };
        // Pair of adjacent nodes whose transitions point into each other's cell.
        let pair = (0..n - 1).find(|&a| {
            !pinned(a)
                && trans[a].cell == a
                && trans[a + 1].cell == a
                && trans[a].weight > 0.0
                && trans[a + 1].weight < 1.0
        });
        let scale = 1e-15;
        for _round in 0..100_000 {
            let mut change: f64 = 0.0;
            let mut vmax: f64 = 0.0;
            if let Some(a) = pair {
                let (ta, tb) = (&trans[a], &trans[a + 1]);
                let m11 = 1.0 - self.beta * (1.0 - ta.weight);
                let m12 = -self.beta * ta.weight;
                let m21 = -self.beta * (1.0 - tb.weight);
                let m22 = 1.0 - self.beta * tb.weight;
                let det = m11 * m22 - m12 * m21;
                let va = (ta.reward * m22 - m12 * tb.reward) / det;
                let vb = (m11 * tb.reward - m21 * ta.reward) / det;
                change = change.max((va - v[a]).abs()).max((vb - v[a + 1]).abs());
                v[a] = va;
                v[a + 1] = vb;
            }
            for i in (0..n).chain((0..n).rev()) {
                if pinned(i) || pair.is_some_and(|a| i == a || i == a + 1) {
                    continue;
                }
                let new = local(i, v);
                change = change.max((new - v[i]).abs());
                vmax = vmax.max(new.abs());
                v[i] = new;
            }
            if change <= scale * vmax.max(1e-300) {
                return Ok(());
            }
        }
        Err(Error::NoConvergence {
            iterations: 100_000,
            last_change: f64::NAN,
            context: "policy evaluation sweeps".into(),
        })
    }
}

/// Semi-Lagrangian value iteration on `grid` (which must span `[0, γ_max]`).
pub fn value_iteration(grid: &Grid, model: &Model, dt: f64, tol: f64) -> Result<ValueTable> {
    value_iteration_with(
        grid,
        model,
        IterationOptions {
            dt,
            tol,
            max_iter: 1_000_000,
        },
    )
}

pub fn value_iteration_with(grid: &Grid, model: &Model, opts: IterationOptions) -> Result<ValueTable> {
    let c = &model.coeffs;
    if grid.lo != 0.0 || (grid.hi - c.gamma_max).abs() > 1e-12 * c.gamma_max {
        return Err(Error::InvalidGrid(format!(
            "value iteration needs the grid [0, {}], got [{}, {}]",
            c.gamma_max, grid.lo, grid.hi
        )));
    }
    if grid.n < 201 {
        return Err(Error::InvalidGrid(format!("need at least 201 nodes, got {}", grid.n)));
    }
    let bound = stability_dt(model);
    if !(opts.dt > 0.0) || opts.dt > bound {
        return Err(Error::StepSize { dt: opts.dt, bound });
    }
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidGrid(format!("tolerance must be > 0, got {}", opts.tol)));
    }
    let delta = model.params.delta;
    let beta = (-delta * opts.dt).exp();
    let scheme = Scheme {
        grid: *grid,
        model,
        dt: opts.dt,
        beta,
        nodes: grid.nodes(),
        pinned_origin: (model.params.sigma2 == 0.0).then(|| model.cost.c(0.0) / delta),
    };
    let stop = opts.tol * (1.0 - beta);
    let mut sweeps = 0usize;

    // Policy iteration from the no-acquisition policy.
    let mut policy = vec![0.0; grid.n];
    let mut v: Vec<f64> = scheme
        .nodes
        .iter()
        .map(|&g| model.running_cost(g, 0.0) / delta)
        .collect();
    let mut prev = v.clone();
    for _ in 0..200 {
        scheme.evaluate(&policy, &mut v)?;
        sweeps += 1;
        let change = sup_diff(&v, &prev);
        if change < stop {
            break;
        }
        prev.copy_from_slice(&v);
        let slopes = scheme.raw_slopes(&v);
        for (i, h) in policy.iter_mut().enumerate() {
            *h = scheme.improve(i, slopes[i], &v)?.1;
        }
    }

    // Certify with Jacobi sweeps of the Bellman operator itself.
    let mut last_change = f64::INFINITY;
    while sweeps < opts.max_iter {
        let (next, _) = scheme.bellman(&v)?;
        sweeps += 1;
        last_change = sup_diff(&next, &v);
        v = next;
        if last_change < stop {
            let residual = hjb_residual(grid, &v, model)?;
            let slopes = projected_slopes(grid, &v, opts.tol)?;
            return Ok(ValueTable::assemble(
                *grid, v, slopes, model, opts.tol, sweeps, residual,
            ));
        }
    }
    Err(Error::NoConvergence {
        iterations: sweeps,
        last_change,
        context: "value iteration".into(),
    })
}

fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Centered differences inside, second-order one-sided at the ends.
pub fn finite_difference_slopes(grid: &Grid, v: &[f64]) -> Vec<f64> {
    let n = grid.n;
    let d = grid.spacing();
    let mut s = vec![0.0; n];
    for i in 1..n - 1 {
        s[i] = (v[i + 1] - v[i - 1]) / (2.0 * d);
    }
    if n >= 3 {
        s[0] = (-3.0 * v[0] + 4.0 * v[1] - v[2]) / (2.0 * d);
        s[n - 1] = (3.0 * v[n - 1] - 4.0 * v[n - 2] + v[n - 3]) / (2.0 * d);
    } else {
        s[0] = (v[1] - v[0]) / d;
        s[1] = s[0];
    }
    s
}

/// Sup over interior nodes of `|−δv + inf_h{f v' + āγ + c(h)}|` with centered `v'`.
pub fn hjb_residual(grid: &Grid, v: &[f64], model: &Model) -> Result<f64> {
    let d = grid.spacing();
    let c = &model.coeffs;
    let mut worst: f64 = 0.0;
    for i in 1..grid.n - 1 {
        let g = grid.node(i);
        let p = ((v[i + 1] - v[i - 1]) / (2.0 * d)).clamp(0.0, c.m0 / (g * g));
        let (ham, _) = hamiltonian(g, p, model)?;
        worst = worst.max((ham - model.params.delta * v[i]).abs());
    }
    Ok(worst)
}

/// Pool-adjacent-violators projection onto nondecreasing sequences.
pub fn isotonic_nondecreasing(y: &[f64]) -> Vec<f64> {
    let mut blocks: Vec<(f64, usize)> = Vec::with_capacity(y.len());
    for &v in y {
        blocks.push((v, 1));
        while blocks.len() > 1 {
            let (m2, c2) = blocks[blocks.len() - 1];
            let (m1, c1) = blocks[blocks.len() - 2];
            if m1 <= m2 {
                break;
            }
            blocks.pop();
            let total = c1 + c2;
            *blocks.last_mut().expect("two blocks") = ((m1 * c1 as f64 + m2 * c2 as f64) / total as f64, total);
        }
    }
    blocks
        .into_iter()
        .flat_map(|(m, c)| std::iter::repeat_n(m, c))
        .collect()
}

fn isotonic_nonincreasing(y: &[f64]) -> Vec<f64> {
    let neg: Vec<f64> = y.iter().map(|v| -v).collect();
    isotonic_nondecreasing(&neg).into_iter().map(|v| -v).collect()
}

fn projected_slopes(grid: &Grid, v: &[f64], tol: f64) -> Result<Vec<f64>> {
    let raw = finite_difference_slopes(grid, v);
    let projected = isotonic_nonincreasing(&raw);
    let shift = sup_diff(&raw, &projected);
    let limit = 100.0 * tol;
    if shift > limit {
        return Err(Error::ConcavityViolation { shift, limit });
    }
    Ok(projected)
}

/// Slopes of a converged table: finite differences projected onto
/// nonincreasing sequences.
pub fn slope_table(table: &ValueTable) -> Result<Vec<f64>> {
    projected_slopes(&table.grid, &table.v, table.tol)
}

fn threshold_from_marginal(grid: &Grid, marginal: &[f64], price: f64) -> f64 {
    if price <= 0.0 {
        return grid.lo;
    }
    let Some(i) = marginal.iter().position(|&x| x >= price) else {
        return grid.hi;
    };
    if i == 0 {
        return grid.lo;
    }
    let (a, b) = (grid.node(i - 1), grid.node(i));
    let (ya, yb) = (marginal[i - 1], marginal[i]);
    let interp = |g: f64| ya + (yb - ya) * (g - a) / (b - a);
    let (mut lo, mut hi) = (a, b);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if interp(mid) >= price {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

/// Activation threshold `γ_D`: where `γ² v'(γ)` first reaches `c'(0)`.
pub fn feedback_threshold(table: &ValueTable) -> f64 {
    table.gamma_d
}

/// `H*(γ) = ĥ(γ² v'(γ))` from the table.
pub fn feedback_map(table: &ValueTable, gamma: f64) -> f64 {
    table.feedback.rate(gamma)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyCost {
    pub value: f64,
    /// Bound on the neglected tail `∫_T^∞ e^{−δt} k dt`.
    pub tail_bound: f64,
}

/// Discounted cost `∫ e^{−δt} k(γ_t, h_t) dt` of a rate schedule, by composite
/// Simpson on `[0, T]` plus the tail of the constant continuation.
pub fn evaluate_policy_cost(
    gamma0: f64,
    schedule: &RateSchedule,
    model: &Model,
    horizon: f64,
    step: f64,
) -> Result<PolicyCost> {
    if !(horizon > 0.0 && step > 0.0) {
        return Err(Error::InvalidParams {
            field: "horizon",
            reason: format!("need horizon > 0 and step > 0, got {horizon}, {step}"),
        });
    }
    let intervals = 2 * ((horizon / (2.0 * step)).ceil() as usize).max(1);
    let grid = TimeGrid {
        dt: horizon / intervals as f64,
        steps: intervals,
    };
    let (gammas, rates) = match schedule {
        RateSchedule::Constant(h) => {
            if !(0.0..=model.coeffs.gamma_max).contains(&gamma0) {
                return Err(Error::GammaOutOfRange {
                    gamma: gamma0,
                    gamma_max: model.coeffs.gamma_max,
                });
            }
            let g: Vec<f64> = (0..=intervals)
                .map(|k| riccati::solve_constant_rate(gamma0, *h, grid.time(k), &model.params))
                .collect::<Result<_>>()?;
            (g, vec![*h; intervals + 1])
        }
        _ => {
            let path = riccati::integrate_variance(gamma0, schedule, &grid, model)?;
            (path.values, path.rate_used)
        }
    };
    let delta = model.params.delta;
    let integrand = |k: usize| (-delta * grid.time(k)).exp() * model.running_cost(gammas[k], rates[k]);
    let mut sum = integrand(0) + integrand(intervals);
    for k in 1..intervals {
        sum += if k % 2 == 1 { 4.0 } else { 2.0 } * integrand(k);
    }
    let quad = sum * grid.dt / 3.0;
    let decay = (-delta * horizon).exp();
    let tail = decay * model.running_cost(gammas[intervals], rates[intervals]) / delta;
    let c = &model.coeffs;
    let tail_bound = decay * (c.a_bar * c.gamma_max + model.cost.c(c.h_max)) / delta;
    Ok(PolicyCost {
        value: quad + tail,
        tail_bound,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoAcquisitionValue {
    /// `v^no(γ0)`.
    pub v_no: f64,
    /// `v^no(γ0) + a2 γ0 + (C1 + a2 σ2²)/δ`.
    pub w_bar: f64,
    pub tail_bound: f64,
}

/// Value of never acquiring information, `∫ e^{−δt}(āγ⁰_t + c(0)) dt`.
pub fn no_acquisition_value(gamma0: f64, model: &Model) -> Result<NoAcquisitionValue> {
    let p = &model.params;
    let c = &model.coeffs;
    let delta = p.delta;
    let scale = (c.a_bar * c.gamma_max + model.cost.c(0.0)) / delta;
    let horizon = ((scale.max(1e-300) / 1e-16).ln().max(1.0)) / delta;
    let rate = (p.lambda * p.lambda + p.sigma1_bar_sq() * p.sigma2 * p.sigma2).sqrt();
    let step = 0.01 / delta.max(2.0 * rate).max(1.0 / (1.0 + gamma0 * p.sigma1_bar_sq()));
    let cost = evaluate_policy_cost(gamma0, &RateSchedule::Constant(0.0), model, horizon, step)?;
    Ok(NoAcquisitionValue {
        v_no: cost.value,
        w_bar: cost.value + c.a2 * gamma0 + c.constant_term(p),
        tail_bound: cost.tail_bound,
    })
}

/// `v^no` on all nodes of `grid`, by integrating the linear transport equation
/// `−δw + f(γ,0) w' + āγ + c(0) = 0` in `γ` outward from `γ⁰_∞`.
pub fn no_acquisition_transport(grid: &Grid, model: &Model) -> Vec<f64> {
    let p = model.params;
    let c = model.coeffs;
    let c0 = model.cost.c(0.0);
    let g_inf = c.gamma_inf0;
    let delta = p.delta;
    let w_inf = (c.a_bar * g_inf + c0) / delta;
    let slope_inf = c.a_bar / (delta - riccati::variance_drift_dgamma(g_inf, 0.0, &p));
    let rhs = move |g: f64, w: f64| (delta * w - c.a_bar * g - c0) / riccati::variance_drift(g, 0.0, &p);
    let seed = 1e-9 * g_inf.max(grid.spacing());
    let base_step = grid.spacing().min(1e-3);
    integrate_outward(
        grid,
        g_inf,
        seed,
        w_inf,
        slope_inf,
        0.0,
        &|g, w| Ok(rhs(g, w)),
        &|g: f64, _| base_step.min(0.05 * (g - g_inf).abs()),
    )
    .expect("transport right-hand side is infallible")
}

/// Integrates `v' = rhs(γ, v)` from a seed at `center` to every grid node.
/// `step_at(γ)` bounds the RK4 step; the seed uses a second-order Taylor
/// expansion with the given first and second derivatives.
#[allow(clippy::too_many_arguments)]
fn integrate_outward(
    grid: &Grid,
    center: f64,
    seed: f64,
    v_center: f64,
    d1: f64,
    d2: f64,
    rhs: &dyn Fn(f64, f64) -> Result<f64>,
    step_at: &dyn Fn(f64, f64) -> f64,
) -> Result<Vec<f64>> {
    let mut out = vec![f64::NAN; grid.n];
    let nodes = grid.nodes();
    for dir in [1.0f64, -1.0] {
        let targets: Vec<usize> = if dir > 0.0 {
            (0..grid.n).filter(|&i| nodes[i] >= center).collect()
        } else {
            (0..grid.n).rev().filter(|&i| nodes[i] < center).collect()
        };
        if targets.is_empty() {
            continue;
        }
        let start = center + dir * seed;
        let mut g = start;
        let mut v = v_center + d1 * (g - center) + 0.5 * d2 * (g - center).powi(2);
        for i in targets {
            let target = nodes[i];
            if dir * (target - g) <= 0.0 {
                // Node inside the seed interval.
                let x = target - center;
                out[i] = v_center + d1 * x + 0.5 * d2 * x * x;
                continue;
            }
            while dir * (target - g) > 0.0 {
                let h = step_at(g, v).max(1e-15).min(dir * (target - g));
                let hs = dir * h;
                let k1 = rhs(g, v)?;
                let k2 = rhs(g + 0.5 * hs, v + 0.5 * hs * k1)?;
                let k3 = rhs(g + 0.5 * hs, v + 0.5 * hs * k2)?;
                let k4 = rhs(g + hs, v + hs * k3)?;
                v += hs / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
                g = if h == dir * (target - g) { target } else { g + hs };
            }
            out[i] = v;
        }
    }
    Ok(out)
}

/// Slope `v'(γ)` from the quadratic-cost HJB solved for `v'`. `upper` selects
/// the root valid for `γ ≥ γ_eq`, the other root is valid below `γ_eq`.
fn quadratic_slope(gamma: f64, v: f64, zeta: f64, model: &Model, upper: bool) -> Result<f64> {
    let a = riccati::variance_drift(gamma, 0.0, &model.params);
    let b = model.coeffs.a_bar * gamma - model.params.delta * v;
    let g4 = gamma.powi(4);
    let mut rad = zeta * zeta * a * a + zeta * b * g4;
    if rad < 0.0 {
        let scale = zeta * zeta * a * a + (zeta * b * g4).abs();
        if rad < -1e-10 * scale.max(f64::MIN_POSITIVE) {
            return Err(Error::NegativeRadicand { gamma, value: rad });
        }
        rad = 0.0;
    }
    let root = rad.sqrt();
    Ok(if upper {
        if a > 0.0 {
            (2.0 * zeta * a + 2.0 * root) / g4
        } else {
            2.0 * zeta * b / (root - zeta * a)
        }
    } else {
        -2.0 * zeta * b / (zeta * a + root)
    })
}

/// Independent solution for the quadratic cost `c(h) = ζh²`: the HJB is
/// solved for `v'` in closed form and integrated outward from the
/// equilibrium, where `v`, `v'` and `v''` are known.
pub fn quadratic_ode_oracle(
    model: &Model,
    gamma_lo: f64,
    gamma_hi: f64,
    n: usize,
    eq: &EquilibriumPoint,
) -> Result<ValueTable> {
    let zeta = model
        .cost
        .quadratic_zeta()
        .ok_or_else(|| Error::InvalidCost("the quadratic oracle needs a quadratic cost".into()))?;
    let grid = Grid::new(gamma_lo, gamma_hi, n)?;
    if !(gamma_lo < eq.gamma_eq && eq.gamma_eq < gamma_hi) && !(eq.gamma_eq == 0.0 && gamma_lo == 0.0) {
        return Err(Error::InvalidGrid(format!(
            "oracle interval [{gamma_lo}, {gamma_hi}] must contain gamma_eq = {}",
            eq.gamma_eq
        )));
    }
    let delta = model.params.delta;
    let curvature = crate::equilibrium::stable_curvature(eq, model, 1.0)?;
    let g_eq = eq.gamma_eq;
    let stiffness = |g: f64, v: f64| -> f64 {
        let a = riccati::variance_drift(g, 0.0, &model.params);
        let b = model.coeffs.a_bar * g - delta * v;
        let rad = (zeta * zeta * a * a + zeta * b * g.powi(4)).max(0.0);
        zeta * delta / rad.sqrt().max(1e-300)
    };
    let base = grid.spacing().min(1e-3 * g_eq.max(1e-3));
    let seed = 1e-5 * g_eq.max(grid.spacing());
    let rhs = |g: f64, v: f64| quadratic_slope(g, v, zeta, model, g >= g_eq);
    // The linearised stiffness ζδ/√R̃ grows like 1/|γ − γ_eq|.
    let step_at = |g: f64, v: f64| base.min(0.5 / stiffness(g, v)).min(0.1 * (g - g_eq).abs());
    let v = integrate_outward(&grid, g_eq, seed, eq.v_eq, eq.p_eq, curvature, &rhs, &step_at)?;
    let mut slopes = Vec::with_capacity(n);
    let mut residual: f64 = 0.0;
    for (i, &vi) in v.iter().enumerate() {
        let g = grid.node(i);
        let s = if (g - g_eq).abs() < seed {
            eq.p_eq + curvature * (g - g_eq)
        } else {
            rhs(g, vi)?
        };
        slopes.push(s);
        if g > 0.0 && i > 0 && i + 1 < n {
            let (ham, _) = hamiltonian(g, s, model)?;
            residual = residual.max((ham - delta * vi).abs());
        }
    }
    let steps = n;
    Ok(ValueTable::assemble(grid, v, slopes, model, 0.0, steps, residual))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CostSpec, GammaMax, ModelParams};

    #[test]
    fn grid_locate_and_interpolate() {
        let g = Grid::new(0.0, 1.0, 11).unwrap();
        assert_eq!(g.node(10), 1.0);
        assert_eq!(g.locate(0.35).0, 3);
        assert!((g.locate(0.35).1 - 0.5).abs() < 1e-12);
        assert_eq!(g.locate(1.0), (9, 1.0));
        let vals: Vec<f64> = g.nodes().iter().map(|x| 2.0 * x + 1.0).collect();
        assert!((g.interpolate(&vals, 0.123) - 1.246).abs() < 1e-14);
    }

    #[test]
    fn hamiltonian_examples() {
        let m = Model::canonical();
        let (v, h) = hamiltonian(0.4, 0.0, &m).unwrap();
        assert_eq!(h, 0.0);
        assert!((v - m.coeffs.a_bar * 0.4).abs() < 1e-15);
        let (v, h) = hamiltonian(0.0, 0.01, &m).unwrap();
        assert_eq!(h, 0.0);
        assert!((v - 0.01).abs() < 1e-15);
        let (_, h) = hamiltonian(0.4, m.coeffs.l_v, &m).unwrap();
        assert!((h - 0.16 * m.coeffs.a_bar / 0.002).abs() < 1e-12);
        assert!(matches!(
            hamiltonian(0.4, -1e-3, &m),
            Err(Error::SlopeOutOfRange { .. })
        ));
    }

    #[test]
    fn hamiltonian_matches_brute_force() {
        let m = Model::canonical();
        for &(g, p) in &[(0.4, 0.02), (0.9, 0.01), (0.2, 0.027)] {
            let (val, _) = hamiltonian(g, p, &m).unwrap();
            let brute = (0..=10_000)
                .map(|k| {
                    let h = m.coeffs.h_max * k as f64 / 10_000.0;
                    riccati::variance_drift(g, h, &m.params) * p + m.running_cost(g, h)
                })
                .fold(f64::INFINITY, f64::min);
            assert!(val <= brute + 1e-15 && brute - val < 1e-6);
        }
    }

    #[test]
    fn isotonic_projection() {
        assert_eq!(isotonic_nondecreasing(&[1.0, 3.0, 2.0, 4.0]), vec![1.0, 2.5, 2.5, 4.0]);
        assert_eq!(isotonic_nonincreasing(&[3.0, 1.0, 2.0]), vec![3.0, 1.5, 1.5]);
    }

    #[test]
    fn slopes_of_synthetic_tables() {
        let m = Model::canonical();
        let grid = Grid::new(0.0, 1.0, 401).unwrap();
        let lin: Vec<f64> = grid.nodes().iter().map(|g| m.coeffs.l_v * g).collect();
        let t = ValueTable::from_values(grid, lin, &m, 1e-10).unwrap();
        assert!(t.v_slope.iter().all(|s| (s - m.coeffs.l_v).abs() < 1e-13));
        let sq: Vec<f64> = grid.nodes().iter().map(|g| (g + 1.0).sqrt()).collect();
        let s = finite_difference_slopes(&grid, &sq);
        let d = grid.spacing();
        for (i, si) in s.iter().enumerate().take(grid.n - 1).skip(1) {
            let exact = 0.5 / (grid.node(i) + 1.0).sqrt();
            assert!((si - exact).abs() < 0.1 * d * d);
        }
        let bumpy: Vec<f64> = grid.nodes().iter().map(|g| g * g).collect();
        assert!(matches!(
            ValueTable::from_values(grid, bumpy, &m, 1e-10),
            Err(Error::ConcavityViolation { .. })
        ));
    }

    #[test]
    fn rejects_bad_grids_and_steps() {
        let m = Model::canonical();
        let small = Grid::new(0.0, 1.0, 101).unwrap();
        assert!(matches!(
            value_iteration(&small, &m, 1e-4, 1e-10),
            Err(Error::InvalidGrid(_))
        ));
        let grid = Grid::new(0.0, 1.0, 201).unwrap();
        assert!(matches!(
            value_iteration(&grid, &m, 0.1, 1e-10),
            Err(Error::StepSize { .. })
        ));
    }

    #[test]
    fn sigma2_zero_pins_origin() {
        let p = ModelParams {
            sigma2: 0.0,
            ..ModelParams::canonical()
        };
        let cost = CostSpec::affine_quadratic(1e-3, 0.01).unwrap();
        let m = Model::new(p, cost, GammaMax::Absolute(1.0)).unwrap();
        let grid = Grid::for_model(&m, 401).unwrap();
        let t = value_iteration(&grid, &m, default_dt(&grid, &m), 1e-10).unwrap();
        assert_eq!(t.v[0], m.cost.c(0.0) / m.params.delta);
    }

    #[test]
    fn threshold_extremes() {
        let m = Model::canonical();
        let grid = Grid::for_model(&m, 401).unwrap();
        let t = value_iteration(&grid, &m, default_dt(&grid, &m), 1e-10).unwrap();
        assert_eq!(feedback_threshold(&t), 0.0);
        assert_eq!(feedback_map(&t, 0.0), 0.0);
        let top = feedback_map(&t, 1.0);
        assert!(top > 0.0 && top <= m.coeffs.h_max);

        let pricey = Model::new(
            ModelParams::canonical(),
            CostSpec::affine_quadratic(1e-3, 1.0).unwrap(),
            GammaMax::Absolute(1.0),
        )
        .unwrap();
        let t = value_iteration(&grid, &pricey, default_dt(&grid, &pricey), 1e-10).unwrap();
        assert_eq!(t.gamma_d, 1.0);
        assert!(t.h_star.iter().all(|&h| h == 0.0));
    }

    #[test]
    fn transport_matches_quadrature() {
        let m = Model::canonical();
        let grid = Grid::new(0.0, 1.0, 11).unwrap();
        let w = no_acquisition_transport(&grid, &m);
        for (i, wi) in w.iter().enumerate() {
            let q = no_acquisition_value(grid.node(i), &m).unwrap().v_no;
            assert!((wi - q).abs() < 1e-9 * q.abs().max(1e-3), "node {i}: {wi} vs {q}");
        }
    }

    #[test]
    fn policy_cost_trivial_cases() {
        let m = Model::canonical();
        let g = m.coeffs.gamma_inf0;
        let c = evaluate_policy_cost(g, &RateSchedule::Constant(0.0), &m, 40.0, 0.01).unwrap();
        assert!((c.value - m.coeffs.a_bar * g).abs() < 1e-12);
        let p = ModelParams {
            sigma2: 0.0,
            ..ModelParams::canonical()
        };
        let affine = Model::new(
            p,
            CostSpec::affine_quadratic(1.0, 0.0).unwrap(),
            GammaMax::Absolute(1.0),
        )
        .unwrap();
        let c = evaluate_policy_cost(0.0, &RateSchedule::Constant(0.0), &affine, 10.0, 0.01).unwrap();
        assert_eq!(c.value, 0.0);
    }
}
