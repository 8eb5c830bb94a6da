//! Behaviour of the two half-steps and of the time loop on small, fully specified cases.

use thermovisco::diagnostics::{step_ledger, weak_residuals};
use thermovisco::error::Error;
use thermovisco::grid::Face;
use thermovisco::heat_step::{solve_heat, HeatIncrement};
use thermovisco::material::MaterialModel;
use thermovisco::mech_step::{incremental_functional, solve_mech, MechIncrement};
use thermovisco::model::Model;
use thermovisco::scheme::{
    cap, heat_increment, initial_snapshot, mech_increment, run, Profile, Scenario, Trajectory,
};
use thermovisco::tensor::Tensor2;

fn no_loads(m: &Model) -> (Vec<[f64; 3]>, Vec<[f64; 3]>) {
    (
        vec![[0.0; 3]; m.grid.n_qp()],
        vec![[0.0; 3]; m.grid.n_bqp()],
    )
}

fn traction_on(m: &Model, face: Face, t: [f64; 3]) -> Vec<[f64; 3]> {
    m.grid
        .bqp_info()
        .iter()
        .map(|(f, _, _)| if *f == face { t } else { [0.0; 3] })
        .collect()
}

#[test]
fn load_free_mechanical_step_keeps_the_identity() {
    let sc = Scenario::steady(6);
    let m = sc.model().unwrap();
    let id = m.grid.identity_deformation();
    let (b, t) = no_loads(&m);
    let inc = MechIncrement::new(&m, &id, &m.grid.constant_scalar(1.0), 0.1, 0.01, b, t);
    let res = solve_mech(&m, &inc).unwrap();
    let diff = res.y.max_abs_diff(&id);
    assert!(diff <= 1e-10, "moved by {diff:e}");
}

#[test]
fn loaded_mechanical_step_converges_and_descends() {
    let sc = Scenario::steady(6);
    let m = sc.model().unwrap();
    let id = m.grid.identity_deformation();
    let bulk = vec![[0.0, -0.2, 0.0]; m.grid.n_qp()];
    let tr = traction_on(&m, Face::new(0, true), [0.1, 0.3, 0.0]);
    let inc = MechIncrement::new(&m, &id, &m.grid.constant_scalar(1.0), 0.1, 0.01, bulk, tr);
    let res = solve_mech(&m, &inc).unwrap();
    assert!(res.residual <= m.solver.tol_mech * res.initial_residual);
    assert!(res.functional < res.initial_functional);
    assert!(
        (incremental_functional(&m, &inc, &res.y) - res.functional).abs()
            <= 1e-14 * res.functional.abs()
    );
    assert!(m.grid.satisfies_dirichlet(&res.y, 0.0));
}

#[test]
fn crushing_load_never_returns_an_inverted_state() {
    let sc = Scenario::steady(4);
    let m = sc.model().unwrap();
    let id = m.grid.identity_deformation();
    for push in [5.0, 50.0, 500.0] {
        let tr = traction_on(&m, Face::new(0, true), [-push, 0.0, 0.0]);
        let inc = MechIncrement::new(
            &m,
            &id,
            &m.grid.constant_scalar(1.0),
            1.0,
            0.0,
            vec![[0.0; 3]; m.grid.n_qp()],
            tr,
        );
        match solve_mech(&m, &inc) {
            Ok(r) => {
                assert!(r.min_det > 0.0);
                assert!(m.grid.kinematics(&r.y).f.iter().all(|f| f.det() > 0.0));
            }
            Err(Error::StepRejected(_)) => {}
            Err(e) => panic!("unexpected error {e}"),
        }
    }
}

fn frozen_heat_increment(
    m: &Model,
    stretch: f64,
    theta_prev: f64,
    theta_b: f64,
    tau: f64,
    eps: f64,
) -> HeatIncrement {
    let d = m.grid.d;
    let n = m.grid.n_qp();
    let f0 = vec![Tensor2::identity(d); n];
    let f1 = vec![Tensor2::identity(d).scale(1.0 + stretch); n];
    let w_prev = vec![m.material.enthalpy(&f0[0], theta_prev); n];
    HeatIncrement::new(
        m,
        &m.grid.constant_scalar(theta_prev),
        f0,
        f1,
        w_prev,
        tau,
        eps,
        vec![theta_b; m.grid.n_bqp()],
    )
    .unwrap()
}

#[test]
fn boundary_temperature_is_kept_without_sources() {
    let m = Scenario::steady(5).model().unwrap();
    let inc = frozen_heat_increment(&m, 0.0, 0.8, 0.8, 0.1, 0.01);
    let res = solve_heat(&m, &inc).unwrap();
    assert!(res.theta.values.iter().all(|t| (t - 0.8).abs() <= 1e-10));
}

/// Uniform stretch rate, boundary held at the scalar solution: the discrete solution is
/// uniform and solves `w(F, th) - d_F varphi(F, th) : dF = w_prev + tau xi_reg`.
#[test]
fn uniform_data_reduce_to_a_scalar_equation() {
    let m = Scenario::steady(4).model().unwrap();
    let mat = &m.material;
    let (a, th0, tau, eps) = (0.05, 0.7, 0.1, 0.01);
    let f0 = Tensor2::identity(2);
    let f1 = f0.scale(1.0 + a);
    let df = f1.sub(&f0);
    let xi_reg = MaterialModel::regularized_dissipation(
        mat.dissipation_rate(&f0, &df.scale(1.0 / tau)),
        eps,
    );
    let rhs = mat.enthalpy(&f0, th0) + tau * xi_reg;
    let g = |th: f64| mat.enthalpy(&f1, th) - mat.coupling_stress(&f1, th).ddot(&df) - rhs;
    let (mut lo, mut hi) = (0.0, 10.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let th_star = 0.5 * (lo + hi);
    let inc = frozen_heat_increment(&m, a, th0, th_star, tau, eps);
    let res = solve_heat(&m, &inc).unwrap();
    let err = res
        .theta
        .values
        .iter()
        .map(|t| (t - th_star).abs())
        .fold(0.0, f64::max);
    assert!(err <= 1e-9, "max deviation {err:e} from {th_star}");
}

/// Testing the heat equation with `v = 1`: without coupling the thermal energy grows
/// by the dissipated heat minus the Robin outflow.
#[test]
fn pure_heating_balance() {
    let mut sc = Scenario::steady(4);
    sc.material.bump.amplitude = 0.0;
    let m = sc.model().unwrap();
    let (tau, eps) = (0.1, 0.01);
    let inc = frozen_heat_increment(&m, 0.08, 0.5, 0.9, tau, eps);
    let res = solve_heat(&m, &inc).unwrap();
    let g = &m.grid;
    let dw = g.assemble_scalar(&res.w) - g.assemble_scalar(&inc.w_prev);
    let heat = tau * g.assemble_scalar(&inc.xi_reg);
    let tb = g.scalar_at_bqp(&res.theta);
    let out: f64 = tau
        * g.boundary_integral(
            &tb.iter()
                .map(|t| m.material.kappa * (t - 0.9))
                .collect::<Vec<_>>(),
        );
    let gap = dw - (heat - out);
    assert!(heat > 0.0);
    assert!(
        gap.abs() <= 1e-9 * dw.abs().max(heat),
        "balance gap {gap:e}"
    );
}

#[test]
fn coupled_run_keeps_temperature_non_negative() {
    let mut sc = Scenario::shear_pulse(6);
    sc.theta0 = 0.0;
    sc.loads.theta_b = 0.0;
    let m = sc.model().unwrap();
    let tr = run(&m, &sc, 50, sc.eps).unwrap();
    for r in &tr.steps {
        assert!(r.min_theta >= -1e-10, "min theta {}", r.min_theta);
    }
    assert!(tr.snapshots.iter().all(|s| s.theta.min() >= 0.0));
}

#[test]
fn steady_scenario_is_stationary() {
    let sc = Scenario::steady(6);
    let m = sc.model().unwrap();
    let tr = run(&m, &sc, 20, sc.eps).unwrap();
    let s0 = &tr.snapshots[0];
    for s in &tr.snapshots {
        assert!(s.y.max_abs_diff(&s0.y) <= 1e-12);
        assert!(s.theta.max_abs_diff(&s0.theta) <= 1e-12);
    }
}

#[test]
fn isothermal_mode_skips_the_heat_step() {
    let sc = Scenario::isothermal_creep(6);
    let m = sc.model().unwrap();
    let coarse = run(&m, &sc, 10, sc.eps).unwrap();
    let fine = run(&m, &sc, 20, sc.eps).unwrap();
    for tr in [&coarse, &fine] {
        assert!(tr.steps.iter().all(|r| r.heat_iterations == 0));
        assert!(tr
            .snapshots
            .iter()
            .all(|s| s.theta == tr.snapshots[0].theta));
    }
    let (a, b) = (
        weak_residuals(&m, &coarse).unwrap(),
        weak_residuals(&m, &fine).unwrap(),
    );
    assert!(b.mech_norm < a.mech_norm);
    assert_eq!(a.heat_norm, 0.0);
}

#[test]
fn nearly_insulated_pulse_heats_the_body() {
    let sc = Scenario::insulated_pulse(6);
    let m = sc.model().unwrap();
    let tr = run(&m, &sc, 20, sc.eps).unwrap();
    let mean = |k: usize| {
        m.grid
            .assemble_scalar(&m.grid.scalar_at_qp(&tr.snapshots[k].theta))
    };
    let mut dissipated = 0.0;
    for k in 1..tr.snapshots.len() {
        let l = step_ledger(&m, &tr, k).unwrap();
        dissipated += l.xi_step;
        if tr.snapshots[k].t <= 0.4 + 1e-12 {
            assert!(mean(k) > mean(k - 1), "mean temperature fell at step {k}");
        }
    }
    assert!(dissipated > 0.0);
}

#[test]
fn staggering_uses_previous_temperature_then_new_deformation() {
    let sc = Scenario::shear_pulse(5);
    let m = sc.model().unwrap();
    let tr = run(&m, &sc, 6, sc.eps).unwrap();
    for k in 1..tr.snapshots.len() {
        let (prev, new, rec) = (&tr.snapshots[k - 1], &tr.snapshots[k], &tr.steps[k - 1]);
        let y = solve_mech(&m, &mech_increment(&m, prev, rec, tr.eps))
            .unwrap()
            .y;
        assert_eq!(y, new.y);
        let theta = solve_heat(&m, &heat_increment(&m, prev, new, rec, tr.eps).unwrap())
            .unwrap()
            .theta;
        assert_eq!(theta, new.theta);
    }
}

#[test]
fn runs_are_bit_reproducible() {
    let sc = Scenario::shear_pulse(5);
    let m = sc.model().unwrap();
    let a = run(&m, &sc, 8, sc.eps).unwrap();
    let b = run(&m, &sc, 8, sc.eps).unwrap();
    assert_eq!(a.snapshots, b.snapshots);
}

#[test]
fn interpolants_at_nodes_midpoints_and_outside() {
    let sc = Scenario::shear_pulse(4);
    let m = sc.model().unwrap();
    let tr = run(&m, &sc, 5, sc.eps).unwrap();
    let it = tr.interpolants(0.4).unwrap();
    assert_eq!(it.upper, it.lower);
    assert_eq!(it.affine, it.upper);
    let mid = tr.interpolants(0.5).unwrap();
    let (a, b) = (&tr.snapshots[2], &tr.snapshots[3]);
    assert_eq!(mid.lower, *a);
    assert_eq!(mid.upper, *b);
    for (i, v) in mid.affine.y.values.iter().enumerate() {
        assert!((v - 0.5 * (a.y.values[i] + b.y.values[i])).abs() <= 1e-15);
    }
    assert!(tr.interpolants(-0.1).is_err());
    assert!(tr.interpolants(1.1).is_err());
}

fn max_grad_increment(m: &Model, tr: &Trajectory) -> f64 {
    let g = &m.grid;
    tr.snapshots
        .windows(2)
        .map(|w| {
            let (f0, f1) = (g.kinematics(&w[0].y).f, g.kinematics(&w[1].y).f);
            g.assemble_scalar(
                &f0.iter()
                    .zip(&f1)
                    .map(|(a, b)| b.sub(a).norm_sq())
                    .collect::<Vec<_>>(),
            )
            .sqrt()
        })
        .fold(0.0, f64::max)
}

/// `sup_t |grad y_affine - grad y_lower|` is the largest increment; it shrinks at least
/// like `tau^{1/2}`.
#[test]
fn interpolant_gap_shrinks_with_the_time_step() {
    let sc = Scenario::shear_pulse(5);
    let m = sc.model().unwrap();
    let gaps: Vec<f64> = [10, 20, 40]
        .iter()
        .map(|n| max_grad_increment(&m, &run(&m, &sc, *n, sc.eps).unwrap()))
        .collect();
    for w in gaps.windows(2) {
        assert!(w[1] <= w[0] / 2f64.sqrt(), "gaps {gaps:?}");
    }
}

#[test]
fn zero_regularization_with_full_viscosity_runs() {
    let mut sc = Scenario::shear_pulse(5);
    sc.eps = 0.0;
    let m = sc.model().unwrap();
    let tr = run(&m, &sc, 10, 0.0).unwrap();
    for k in 1..tr.snapshots.len() {
        let l = step_ledger(&m, &tr, k).unwrap();
        assert_eq!(l.eps_term, 0.0);
        assert!(l.energy_gap_total.abs() <= 1e-8 * l.scale);
    }
}

#[test]
fn regularization_caps() {
    for eps in [1e-3, 1e-1, 1.0] {
        for x in [0.0, 0.5, 10.0, 1e6] {
            assert!(cap(x, eps) <= 1.0 / eps);
            assert!(cap(x, eps) <= x);
            assert!(MaterialModel::regularized_dissipation(x, eps) <= 1.0 / eps);
        }
    }
    let sc = Scenario::shear_pulse(4);
    let m = sc.model().unwrap();
    let tr = run(&m, &sc, 5, sc.eps).unwrap();
    assert!(initial_snapshot(&m, 1e6, sc.eps)
        .theta
        .values
        .iter()
        .all(|t| *t <= 1.0 / sc.eps));
    for k in 1..tr.snapshots.len() {
        let inc = heat_increment(
            &m,
            &tr.snapshots[k - 1],
            &tr.snapshots[k],
            &tr.steps[k - 1],
            tr.eps,
        )
        .unwrap();
        assert!(inc.xi.iter().zip(&inc.xi_reg).all(|(a, b)| b <= a));
        assert!(inc.theta_b.iter().all(|t| *t <= 1.0 / tr.eps));
    }
}

/// Step-sized intervals, including ones straddling the pulse and table kinks.
#[test]
fn load_averages_match_fine_quadrature() {
    let profiles = [
        Profile::Constant,
        Profile::Pulse {
            t_on: 0.1,
            t_ramp: 0.3,
            t_off: Some(0.6),
        },
        Profile::Sine { period: 0.7 },
        Profile::Table {
            points: vec![[0.0, 0.0], [0.25, 1.0], [0.5, 0.2], [1.0, 0.4]],
        },
    ];
    for p in &profiles {
        for (t0, t1) in [
            (0.0, 0.05),
            (0.2, 0.3),
            (0.22, 0.27),
            (0.35, 0.45),
            (0.58, 0.63),
        ] {
            let n = 20000;
            let h = (t1 - t0) / n as f64;
            let fine = (0..n)
                .map(|i| p.value(t0 + (i as f64 + 0.5) * h))
                .sum::<f64>()
                / n as f64;
            let avg = p.average(t0, t1);
            // a jump in the second derivative inside the interval costs O(h^3)
            let kinked = matches!(p, Profile::Pulse { .. })
                && [0.1, 0.4, 0.6, 0.9].iter().any(|k| t0 < *k && *k < t1);
            let tol = if kinked { 1e-4 } else { 1e-9 };
            assert!(
                (avg - fine).abs() <= tol,
                "{p:?} on [{t0}, {t1}]: {avg} vs {fine}"
            );
        }
    }
}

#[test]
fn failing_steps_are_halved() {
    let mut sc = Scenario::shear_pulse(4);
    sc.solver.max_newton = 3;
    sc.loads.tractions[0].value = [0.0, 2.0, 0.0];
    let m = sc.model().unwrap();
    match run(&m, &sc, 2, sc.eps) {
        Ok(tr) => {
            assert!(tr.steps.iter().any(|r| r.halvings > 0));
            assert_eq!(tr.snapshots.len(), tr.steps.len() + 1);
            for (w, r) in tr.snapshots.windows(2).zip(&tr.steps) {
                assert_eq!(w[0].t, r.t0);
                assert_eq!(w[1].t, r.t1);
            }
            assert_eq!(tr.snapshots.last().unwrap().t, 1.0);
        }
        Err(e) => panic!("halving did not rescue the run: {e}"),
    }
}
