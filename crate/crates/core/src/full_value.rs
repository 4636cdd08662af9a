//! Full-information value function `W`, the certainty-equivalent state
//! feedback `U*`, and the two benchmark values `V^full ≤ W ≤ V^no`.

use crate::error::{Error, Result};
use crate::hjb::{self, ValueTable};
use crate::model::{Coefficients, Model};
use crate::riccati;

/// `U*(x, m) = −(2 a1 x + a3 m + b1)/ρ`, shared by all three problems.
pub fn feedback_u(coeffs: &Coefficients, rho: f64, x: f64, m: f64) -> f64 {
    -(2.0 * coeffs.a1 * x + coeffs.a3 * m + coeffs.b1) / rho
}

/// `c^full = (σ1² a1 + σ2² a2 + b2 λ μ̄ − b1²/(2ρ) + c(0))/δ`.
pub fn c_full(model: &Model) -> f64 {
    let p = &model.params;
    let c = &model.coeffs;
    (p.sigma1 * p.sigma1 * c.a1 + p.sigma2 * p.sigma2 * c.a2 + c.b2 * p.lambda * p.mu_bar - c.b1 * c.b1 / (2.0 * p.rho)
        + model.cost.c(0.0))
        / p.delta
}

/// Value when the drift `μ` is observed directly.
pub fn value_full_observation(model: &Model, x: f64, mu: f64) -> f64 {
    model.coeffs.quadratic_part(x, mu) + c_full(model)
}

#[derive(Debug, Clone)]
pub struct FullValueModel {
    pub model: Model,
    pub table: ValueTable,
    /// `(C1 + a2 σ2²)/δ`.
    pub constant_term: f64,
}

impl FullValueModel {
    pub fn new(table: ValueTable) -> Self {
        let model = table.model.clone();
        let constant_term = model.coeffs.constant_term(&model.params);
        FullValueModel {
            model,
            table,
            constant_term,
        }
    }

    fn check_gamma(&self, gamma: f64) -> Result<()> {
        let g = &self.table.grid;
        let tol = 1e-12 * g.hi.max(1.0);
        if gamma < g.lo - tol || gamma > g.hi + tol || gamma.is_nan() {
            return Err(Error::GammaOutOfRange { gamma, gamma_max: g.hi });
        }
        Ok(())
    }

    fn separable(&self, x: f64, m: f64, gamma: f64) -> f64 {
        self.model.coeffs.quadratic_part(x, m) + self.model.coeffs.a2 * gamma + self.constant_term
    }

    /// `W(x, m, γ)` with `v` interpolated from the table.
    pub fn assemble_w(&self, x: f64, m: f64, gamma: f64) -> Result<f64> {
        self.check_gamma(gamma)?;
        Ok(self.separable(x, m, gamma) + self.table.value_at(gamma))
    }

    pub fn feedback_u(&self, x: f64, m: f64) -> f64 {
        feedback_u(&self.model.coeffs, self.model.params.rho, x, m)
    }

    pub fn value_full_observation(&self, x: f64, mu: f64) -> f64 {
        value_full_observation(&self.model, x, mu)
    }

    /// `v^no(γ)` by quadrature along the uncontrolled variance path.
    pub fn v_no(&self, gamma: f64) -> Result<f64> {
        self.check_gamma(gamma)?;
        Ok(hjb::no_acquisition_value(gamma.clamp(0.0, self.model.coeffs.gamma_max), &self.model)?.v_no)
    }

    /// `V^no(x, m, γ)`: same separable part as `W` with `v^no` in place of `v`.
    pub fn value_no_acquisition(&self, x: f64, m: f64, gamma: f64) -> Result<f64> {
        Ok(self.separable(x, m, gamma) + self.v_no(gamma)?)
    }

    /// `v^no(γ) − v(γ)`.
    pub fn value_of_information(&self, gamma: f64) -> Result<f64> {
        Ok(self.v_no(gamma)? - self.table.value_at(gamma))
    }

    /// Residual of the full HJB at `(x, m, γ)`, using the closed-form
    /// derivatives of the quadratic part and the table slope for `v'`.
    pub fn hjb_residual(&self, x: f64, m: f64, gamma: f64) -> Result<f64> {
        self.check_gamma(gamma)?;
        let p = &self.model.params;
        let c = &self.model.coeffs;
        let w = self.assemble_w(x, m, gamma)?;
        let w_x = 2.0 * c.a1 * x + c.a3 * m + c.b1;
        let w_m = 2.0 * c.a2 * m + c.a3 * x + c.b2;
        let v_prime = self.table.slope_at(gamma).clamp(0.0, c.l_v);
        let (ham, _) = hjb::hamiltonian(gamma, v_prime, &self.model)?;
        let f0 = riccati::variance_drift(gamma, 0.0, p);
        let inf_h = f0 * c.a2 + ham - c.a_bar * gamma;
        let inf_u = -w_x * w_x / (2.0 * p.rho);
        let rest = m * w_x
            + p.lambda * (p.mu_bar - m) * w_m
            + p.sigma1 * p.sigma1 * c.a1
            + p.sigma1_bar_sq() * gamma * gamma * c.a2
            + gamma * c.a3
            + 0.5 * p.kappa * x * x;
        Ok((-p.delta * w + inf_u + inf_h + rest).abs())
    }

    /// CSV `x,m,v_full,v,v_no` on a lattice at fixed `γ` (`v` is `W`).
    pub fn surface_csv(&self, xs: &[f64], ms: &[f64], gamma: f64) -> Result<String> {
        let v_no = self.v_no(gamma)?;
        let mut out = String::from("x,m,v_full,v,v_no\n");
        for &x in xs {
            for &m in ms {
                let w = self.assemble_w(x, m, gamma)?;
                let vn = self.separable(x, m, gamma) + v_no;
                out.push_str(&crate::io::csv_row(&[x, m, self.value_full_observation(x, m), w, vn]));
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hjb::{default_dt, value_iteration, Grid};
    use crate::model::{CostSpec, GammaMax, ModelParams};

    fn solved(model: &Model, n: usize) -> FullValueModel {
        let grid = Grid::for_model(model, n).unwrap();
        FullValueModel::new(value_iteration(&grid, model, default_dt(&grid, model), 1e-10).unwrap())
    }

    #[test]
    fn feedback_examples() {
        let m = Model::canonical();
        assert_eq!(feedback_u(&m.coeffs, 1.0, 0.0, 0.0), 0.0);
        let u = feedback_u(&m.coeffs, 1.0, 1.0, 0.0);
        assert!((u + (5f64.sqrt() - 1.0) / 2.0).abs() < 1e-15);
        let (x, y) = (0.7, -1.3);
        let lhs = feedback_u(&m.coeffs, 1.0, 2.0 * x, 2.0 * y);
        assert!((lhs - 2.0 * feedback_u(&m.coeffs, 1.0, x, y)).abs() < 1e-15);
    }

    #[test]
    fn c_full_canonical() {
        let m = Model::canonical();
        assert!((c_full(&m) - 0.3784183).abs() < 1e-7);
        assert_eq!(value_full_observation(&m, 0.0, 0.0), c_full(&m));
    }

    #[test]
    fn origin_value_without_noise() {
        let p = ModelParams {
            sigma2: 0.0,
            ..ModelParams::canonical()
        };
        let model = Model::new(
            p,
            CostSpec::affine_quadratic(1e-3, 0.02).unwrap(),
            GammaMax::Absolute(1.0),
        )
        .unwrap();
        let fv = solved(&model, 401);
        let w = fv.assemble_w(0.0, 0.0, 0.0).unwrap();
        let expected = (model.coeffs.c1 + model.cost.c(0.0)) / p.delta;
        assert!((w - expected).abs() < 1e-15);
        assert!((model.coeffs.c1 - model.coeffs.a1).abs() < 1e-15);
    }

    #[test]
    fn gamma_shift_is_separable() {
        let fv = solved(&Model::canonical(), 401);
        let d1 = fv.assemble_w(1.5, -0.4, 0.2).unwrap() - fv.assemble_w(0.0, 0.0, 0.2).unwrap();
        let d2 = fv.assemble_w(1.5, -0.4, 0.9).unwrap() - fv.assemble_w(0.0, 0.0, 0.9).unwrap();
        assert!((d1 - d2).abs() < 1e-14);
        assert!(matches!(
            fv.assemble_w(0.0, 0.0, 1.5),
            Err(Error::GammaOutOfRange { .. })
        ));
    }
}
