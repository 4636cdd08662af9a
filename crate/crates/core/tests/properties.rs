use infolqg::equilibrium::{jacobian_phi, phi};
use infolqg::hjb::{hamiltonian, isotonic_nondecreasing};
use infolqg::model::gamma_inf_uncontrolled;
use infolqg::riccati::{integrate_variance, solve_constant_rate, RateSchedule, TimeGrid};
use infolqg::simulator::pairwise_sum;
use infolqg::{CostSpec, GammaMax, Model, ModelParams};
use proptest::prelude::*;

fn params() -> impl Strategy<Value = ModelParams> {
    (0.1..4.0, -2.0..2.0, 0.2..4.0, 0.1..3.0, 0.1..4.0, 0.1..4.0, 0.1..4.0).prop_map(
        |(lambda, mu_bar, sigma1, sigma2, delta, kappa, rho)| ModelParams {
            lambda,
            mu_bar,
            sigma1,
            sigma2,
            delta,
            kappa,
            rho,
        },
    )
}

fn cost() -> impl Strategy<Value = CostSpec> {
    prop_oneof![
        (1e-4..1.0).prop_map(|z| CostSpec::quadratic(z).unwrap()),
        (1e-4..1.0, 0.1..2.0).prop_map(|(z, e)| CostSpec::power(z, e).unwrap()),
        (1e-4..1.0, 0.0..0.01).prop_map(|(z, l)| CostSpec::affine_quadratic(z, l).unwrap()),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn coefficient_residuals_vanish(p in params()) {
        let m = Model::new(p, CostSpec::quadratic(1e-3).unwrap(), GammaMax::default()).unwrap();
        let c = &m.coeffs;
        let scale = 1.0 + p.kappa + p.rho + p.lambda + p.delta;
        for r in c.residuals(&p) {
            prop_assert!(r.abs() < 1e-12 * scale * scale, "residual {r}");
        }
        prop_assert!(c.a1 > 0.0 && c.hessian_det() > 0.0);
        prop_assert!((c.a_bar - c.a_bar_alt(&p)).abs() < 1e-12);
        prop_assert!(c.l_v > 0.0 && c.h_max > 0.0);
    }

    #[test]
    fn controlled_variance_stays_below_uncontrolled(
        p in params(),
        frac in 0.0..1.0f64,
        hfrac in 0.0..1.0f64,
    ) {
        let m = Model::new(p, CostSpec::quadratic(1e-2).unwrap(), GammaMax::default()).unwrap();
        let g0 = frac * m.coeffs.gamma_max;
        let h = hfrac * m.coeffs.h_max;
        let bound = 0.1 / (p.sigma1_bar_sq() + m.coeffs.h_max);
        let grid = TimeGrid::new(3.0, bound.min(1e-2)).unwrap();
        let ctl = integrate_variance(g0, &RateSchedule::Constant(h), &grid, &m).unwrap();
        let free = integrate_variance(g0, &RateSchedule::Constant(0.0), &grid, &m).unwrap();
        let cap = gamma_inf_uncontrolled(&p).max(g0);
        for (a, b) in ctl.values.iter().zip(&free.values) {
            prop_assert!(*a >= 0.0 && *a <= b + 1e-12 && *b <= cap + 1e-12);
        }
        let exact = solve_constant_rate(g0, h, grid.horizon(), &p).unwrap();
        prop_assert!((ctl.last() - exact).abs() < 1e-7 * (1.0 + exact));
    }

    #[test]
    fn conjugate_satisfies_fenchel_young(c in cost(), x in 0.0..0.05f64, h in 0.0..20.0f64) {
        let h_max = 1e6;
        let star = c.c_star(x, h_max).unwrap();
        prop_assert!(star >= x * h - c.c(h) - 1e-12);
        let hh = c.h_hat(x, h_max).unwrap();
        prop_assert!((star - (x * hh - c.c(hh))).abs() < 1e-12 * (1.0 + star.abs()));
        let hh2 = c.h_hat(x * 1.5 + 1e-6, h_max).unwrap();
        prop_assert!(hh2 >= hh);
    }

    #[test]
    fn hamiltonian_is_concave_in_slope(g in 0.01..1.0f64, p1 in 0.0..0.0278f64, p2 in 0.0..0.0278f64) {
        let m = Model::canonical();
        let (a, _) = hamiltonian(g, p1, &m).unwrap();
        let (b, _) = hamiltonian(g, p2, &m).unwrap();
        let (mid, _) = hamiltonian(g, 0.5 * (p1 + p2), &m).unwrap();
        prop_assert!(mid >= 0.5 * (a + b) - 1e-14);
    }

    #[test]
    fn jacobian_matches_finite_differences(g in 0.05..0.95f64, p in 0.0005..0.02f64) {
        let m = Model::canonical();
        let j = jacobian_phi(g, p, &m, 1.0).unwrap();
        let (eg, ep) = (1e-6 * g, 1e-6 * p);
        let fd = |dg: f64, dp: f64, row: usize| {
            (phi(g + dg, p + dp, &m, 1.0)[row] - phi(g - dg, p - dp, &m, 1.0)[row]) / (2.0 * (dg + dp))
        };
        for (row, jr) in j.iter().enumerate() {
            let dg = fd(eg, 0.0, row);
            let dp = fd(0.0, ep, row);
            prop_assert!((dg - jr[0]).abs() <= 1e-6 * (1.0 + jr[0].abs()), "row {row} dγ {dg} vs {}", jr[0]);
            prop_assert!((dp - jr[1]).abs() <= 1e-6 * (1.0 + jr[1].abs()), "row {row} dp {dp} vs {}", jr[1]);
        }
    }

    #[test]
    fn isotonic_projection_is_monotone_and_idempotent(y in prop::collection::vec(-10.0..10.0f64, 1..200)) {
        let z = isotonic_nondecreasing(&y);
        prop_assert!(z.windows(2).all(|w| w[0] <= w[1]));
        prop_assert_eq!(isotonic_nondecreasing(&z), z.clone());
        let (sy, sz): (f64, f64) = (y.iter().sum(), z.iter().sum());
        prop_assert!((sy - sz).abs() < 1e-9 * (1.0 + sy.abs()));
    }

    #[test]
    fn pairwise_sum_is_accurate(xs in prop::collection::vec(-1e3..1e3f64, 0..2000)) {
        let naive: f64 = xs.iter().sum();
        let scale: f64 = xs.iter().map(|x| x.abs()).sum::<f64>() + 1.0;
        prop_assert!((pairwise_sum(&xs) - naive).abs() < 1e-12 * scale);
    }
}
