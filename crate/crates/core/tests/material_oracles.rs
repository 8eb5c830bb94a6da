//! Constitutive functions checked against independent numerical oracles:
//! central finite differences, composite quadrature, and rotated inputs.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thermovisco::material::MaterialModel;
use thermovisco::tensor::{Tensor2, Tensor3};

fn random_f(rng: &mut ChaCha8Rng, d: usize, amp: f64) -> Tensor2 {
    loop {
        let f = Tensor2::identity(d).add(&Tensor2::from_fn(d, |_, _| rng.gen_range(-amp..amp)));
        if f.det() > 0.2 {
            return f;
        }
    }
}

fn random_g(rng: &mut ChaCha8Rng, d: usize) -> Tensor3 {
    Tensor3::from_fn(d, |_, _, _| rng.gen_range(-1.0..1.0))
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Central-difference gradient of a scalar function of a matrix.
fn fd_grad(f: &Tensor2, h: f64, e: impl Fn(&Tensor2) -> f64) -> Tensor2 {
    let d = f.d;
    Tensor2::from_fn(d, |i, j| {
        let u = Tensor2::unit(d, i, j);
        (e(&f.axpy(h, &u)) - e(&f.axpy(-h, &u))) / (2.0 * h)
    })
}

fn check_matrix(a: &Tensor2, b: &Tensor2, tol: f64, what: &str) {
    let scale = a.norm().max(b.norm()).max(1e-8);
    let err = a.sub(b).norm() / scale;
    assert!(err <= tol, "{what}: relative error {err:e}");
}

fn models() -> Vec<MaterialModel> {
    let mut v = vec![
        MaterialModel::default_for_dim(2),
        MaterialModel::default_for_dim(3),
    ];
    let mut odd = MaterialModel::default_for_dim(2);
    odd.alpha = 0.6;
    odd.s = 3.0;
    odd.p = 5.0;
    odd.q = 4.0;
    odd.bump.amplitude = 0.4;
    odd.bump.radius = 0.8;
    v.push(odd);
    v
}

#[test]
fn elastic_stress_and_tangent_match_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for m in models() {
        for _ in 0..120 {
            let f = random_f(&mut rng, m.d, 0.4);
            let p = m.elastic_stress(&f).unwrap();
            check_matrix(
                &p,
                &fd_grad(&f, 1e-6, |g| m.elastic_energy(g)),
                1e-6,
                "elastic stress",
            );
            let c = m.elastic_tangent(&f).unwrap();
            let h = Tensor2::from_fn(m.d, |_, _| rng.gen_range(-1.0..1.0));
            let eps = 1e-6;
            let fd = m
                .elastic_stress(&f.axpy(eps, &h))
                .unwrap()
                .sub(&m.elastic_stress(&f.axpy(-eps, &h)).unwrap())
                .scale(0.5 / eps);
            check_matrix(&c.apply(&h), &fd, 1e-6, "elastic tangent");
        }
    }
}

#[test]
fn hyperstress_matches_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for m in models() {
        for _ in 0..120 {
            let g = random_g(&mut rng, m.d);
            let hs = m.hyperstress(&g);
            let eps = 1e-6;
            let mut max_err: f64 = 0.0;
            for i in 0..m.d {
                for j in 0..m.d {
                    for k in 0..m.d {
                        let u = Tensor3::unit(m.d, i, j, k);
                        let fd = (m.hyperstress_energy(&g.axpy(eps, &u))
                            - m.hyperstress_energy(&g.axpy(-eps, &u)))
                            / (2.0 * eps);
                        max_err = max_err.max((fd - hs.t[i][j][k]).abs() / hs.norm().max(1e-8));
                    }
                }
            }
            assert!(max_err < 1e-6, "hyperstress {max_err:e}");
            let hh = m.hyperstress_hessian(&g);
            let a = random_g(&mut rng, m.d);
            let b = random_g(&mut rng, m.d);
            let fd = (m.hyperstress(&g.axpy(eps, &b)).ddot(&a)
                - m.hyperstress(&g.axpy(-eps, &b)).ddot(&a))
                / (2.0 * eps);
            assert!(rel_err(hh.bilinear(&a, &b), fd) < 1e-6);
        }
    }
}

#[test]
fn viscous_stress_is_rate_derivative() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for m in models() {
        for _ in 0..120 {
            let f = random_f(&mut rng, m.d, 0.5);
            let fd_rate = Tensor2::from_fn(m.d, |_, _| rng.gen_range(-1.0..1.0));
            let s = m.viscous_stress(&f, &fd_rate);
            check_matrix(
                &s,
                &fd_grad(&fd_rate, 1e-6, |r| m.viscous_potential(&f, r)),
                1e-7,
                "viscous",
            );
            assert!(rel_err(m.dissipation_rate(&f, &fd_rate), s.ddot(&fd_rate)) < 1e-13);
            assert!(
                rel_err(
                    m.dissipation_rate(&f, &fd_rate),
                    2.0 * m.viscous_potential(&f, &fd_rate)
                ) < 1e-13
            );
            let t = m.viscous_tangent(&f);
            let h = Tensor2::from_fn(m.d, |_, _| rng.gen_range(-1.0..1.0));
            // quadratic potential: tangent applied to the rate is the stress itself
            check_matrix(
                &t.apply(&h),
                &m.viscous_stress(&f, &h),
                1e-13,
                "viscous tangent",
            );
        }
    }
}

#[test]
fn coupling_derivatives_match_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for m in models() {
        for _ in 0..150 {
            let f = random_f(&mut rng, m.d, 0.3);
            let th = rng.gen_range(0.01..5.0);
            let s = m.coupling_stress(&f, th);
            check_matrix(
                &s,
                &fd_grad(&f, 1e-6, |g| m.coupling_energy(g, th)),
                1e-5,
                "coupling stress",
            );
            let g1 = m.phi1_grad(&f);
            check_matrix(&g1, &fd_grad(&f, 1e-6, |g| m.phi1(g)), 1e-6, "phi1 grad");
            let h = Tensor2::from_fn(m.d, |_, _| rng.gen_range(-1.0..1.0));
            let eps = 1e-6;
            let fd = m
                .phi1_grad(&f.axpy(eps, &h))
                .sub(&m.phi1_grad(&f.axpy(-eps, &h)))
                .scale(0.5 / eps);
            check_matrix(&m.phi1_hessian(&f).apply(&h), &fd, 1e-5, "phi1 hessian");
            check_matrix(
                &m.coupling_tangent(&f, th).apply(&h),
                &m.coupling_stress(&f.axpy(eps, &h), th)
                    .sub(&m.coupling_stress(&f.axpy(-eps, &h), th))
                    .scale(0.5 / eps),
                1e-5,
                "coupling tangent",
            );
        }
    }
}

#[test]
fn thermal_identities_hold() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for m in models() {
        for _ in 0..150 {
            let f = random_f(&mut rng, m.d, 0.3);
            let th = rng.gen_range(0.05..5.0);
            let e = 1e-6;
            let dphi = (m.coupling_energy(&f, th + e) - m.coupling_energy(&f, th - e)) / (2.0 * e);
            // enthalpy w = varphi - theta d(varphi)/d(theta)
            assert!(rel_err(m.enthalpy(&f, th), m.coupling_energy(&f, th) - th * dphi) < 1e-6);
            // c_v = dw/dtheta
            let dw = (m.enthalpy(&f, th + e) - m.enthalpy(&f, th - e)) / (2.0 * e);
            assert!(rel_err(m.heat_capacity_at(&f, th), dw) < 1e-6);
            // entropy = -d(psi)/d(theta)
            assert!(rel_err(m.entropy(&f, th), -dphi) < 1e-6);
            // dW/dtheta = w and d^2W/dtheta^2 = c_v
            let d_pot =
                (m.thermal_potential(&f, th + e) - m.thermal_potential(&f, th - e)) / (2.0 * e);
            assert!(rel_err(m.thermal_potential_dtheta(&f, th), d_pot) < 1e-6);
            assert!(rel_err(m.enthalpy(&f, th), d_pot) < 1e-6);
            let dd_pot = (m.thermal_potential_dtheta(&f, th + e)
                - m.thermal_potential_dtheta(&f, th - e))
                / (2.0 * e);
            assert!(rel_err(m.thermal_potential_dtheta2(&f, th), dd_pot) < 1e-6);
            // d(varphi_C)/dF by differences, and its temperature derivative
            // the F-independent part of varphi_C dominates its value, so small steps lose
            // digits; Richardson-extrapolated differences allow a large step instead
            let d1 = fd_grad(&f, 2e-3, |g| m.phi_c(g, th));
            let d2 = fd_grad(&f, 1e-3, |g| m.phi_c(g, th));
            let rich = d2.scale(4.0 / 3.0).axpy(-1.0 / 3.0, &d1);
            // the bump is only C^2 at the edge of its support; stay well inside it
            if m.phi1(&f) > 1e-3 * m.bump.amplitude {
                check_matrix(&m.phi_c_stress(&f, th), &rich, 1e-5, "phi_c stress");
            }
            let dt = m
                .phi_c_stress(&f, th + e)
                .sub(&m.phi_c_stress(&f, th - e))
                .scale(0.5 / e);
            check_matrix(
                &m.phi_c_stress_dtheta(&f, th),
                &dt,
                1e-5,
                "phi_c stress dtheta",
            );
            check_matrix(
                &m.phi_c_stress_dtheta(&f, th),
                &m.coupling_stress(&f, th),
                1e-12,
                "mixed derivative",
            );
            let dt2 = m
                .phi_c_stress_dtheta(&f, th + e)
                .sub(&m.phi_c_stress_dtheta(&f, th - e))
                .scale(0.5 / e);
            check_matrix(
                &m.phi_c_stress_dtheta2(&f, th),
                &dt2,
                1e-5,
                "phi_c stress dtheta2",
            );
        }
    }
}

/// `varphi_C` against composite Gauss-Legendre quadrature of `varphi` (graded near 0).
#[test]
fn phi_c_is_temperature_primitive() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let gx = [
        -0.906_179_845_938_664,
        -0.538_469_310_105_683,
        0.0,
        0.538_469_310_105_683,
        0.906_179_845_938_664,
    ];
    let gw = [
        0.236_926_885_056_189,
        0.478_628_670_499_366,
        0.568_888_888_888_889,
        0.478_628_670_499_366,
        0.236_926_885_056_189,
    ];
    for m in models() {
        for _ in 0..40 {
            let f = random_f(&mut rng, m.d, 0.3);
            let th: f64 = rng.gen_range(0.1..4.0);
            let n = 400;
            let mut s = 0.0;
            for k in 0..n {
                // graded mesh t = th (k/n)^3 resolves the log singularity at zero
                let (a, b) = (
                    th * (k as f64 / n as f64).powi(3),
                    th * ((k + 1) as f64 / n as f64).powi(3),
                );
                for (x, w) in gx.iter().zip(&gw) {
                    let t = 0.5 * (a + b) + 0.5 * (b - a) * x;
                    s += 0.5 * (b - a) * w * m.coupling_energy(&f, t);
                }
            }
            assert!(
                rel_err(m.phi_c(&f, th), s) < 1e-9,
                "phi_c {} vs {}",
                m.phi_c(&f, th),
                s
            );
        }
    }
}

#[test]
fn negative_temperature_continuation_is_c1() {
    let m = MaterialModel::default_for_dim(2);
    let f = Tensor2::from_rows(&[&[1.1, 0.1], &[-0.05, 0.95]]);
    for t in [1e-7, 1e-9] {
        assert!((m.thermal_potential(&f, -t) - m.thermal_potential(&f, t)).abs() < 1e-12);
        assert!(
            (m.thermal_potential_dtheta(&f, -t) - m.thermal_potential_dtheta(&f, t)).abs() < 1e-6
        );
        assert!(
            m.phi_c_stress_dtheta(&f, -t)
                .sub(&m.phi_c_stress_dtheta(&f, t))
                .norm()
                < 1e-6
        );
    }
}

#[test]
fn enthalpy_two_sided_bounds_on_sample() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for m in models() {
        // c_v = c + theta a''(theta) phi1 with 0 <= phi1 <= amplitude
        let a = m.alpha;
        let peak = (0..20000)
            .map(|k| {
                let t = k as f64 * 1e-3;
                t * a * (a + 1.0) * (1.0 + t).powf(-a - 2.0)
            })
            .fold(0.0, f64::max);
        let (lo, hi) = (
            m.heat_capacity,
            m.heat_capacity + 1.001 * peak * m.bump.amplitude,
        );
        for _ in 0..10_000 {
            let f = random_f(&mut rng, m.d, 0.6);
            let t1 = rng.gen_range(0.0..10.0);
            let t2 = rng.gen_range(0.0..10.0);
            let w1 = m.enthalpy(&f, t1);
            assert!(w1 >= lo * t1 - 1e-14 && w1 <= hi * t1 + 1e-14);
            let dw = (m.enthalpy(&f, t1) - m.enthalpy(&f, t2)).abs();
            let dt = (t1 - t2).abs();
            assert!(dw >= lo * dt * (1.0 - 1e-12) - 1e-14 && dw <= hi * dt + 1e-14);
            assert_eq!(m.enthalpy(&f, 0.0), 0.0);
            let back = m.enthalpy_inverse(&f, w1);
            assert!((m.enthalpy(&f, back) - w1).abs() <= 1e-10 * w1.max(1.0));
        }
    }
}

#[test]
fn conductivity_reference_and_inverse_scaling() {
    let m = MaterialModel::default_for_dim(2);
    let k = m
        .pulled_back_conductivity(&Tensor2::identity(2), 1.0)
        .unwrap();
    assert!(k.max_abs_diff(&Tensor2::identity(2)) < 1e-15);
    let f = Tensor2::diag(&[2.0, 1.0]);
    let k = m.pulled_back_conductivity(&f, 1.0).unwrap();
    assert!(k.max_abs_diff(&Tensor2::diag(&[0.5, 2.0])) < 1e-15);
    assert!(m
        .pulled_back_conductivity(&Tensor2::diag(&[1.0, -1.0]), 1.0)
        .is_err());
}

#[test]
fn regularized_dissipation_is_bounded_and_monotone() {
    let eps = 0.1;
    let mut prev = 0.0;
    for k in 0..200 {
        let xi = k as f64 * 0.5;
        let r = MaterialModel::regularized_dissipation(xi, eps);
        assert!(r <= 1.0 / eps && r <= xi && r >= prev);
        prev = r;
    }
}

fn arb_rotation_angle() -> impl Strategy<Value = f64> {
    -std::f64::consts::PI..std::f64::consts::PI
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn frame_indifference_2d(angle in arb_rotation_angle(),
                             e in proptest::array::uniform4(-0.3f64..0.3),
                             gv in proptest::array::uniform8(-1.0f64..1.0),
                             rate in proptest::array::uniform4(-1.0f64..1.0),
                             th in 0.0f64..5.0) {
        let m = MaterialModel::default_for_dim(2);
        let f = Tensor2::from_rows(&[&[1.0 + e[0], e[1]], &[e[2], 1.0 + e[3]]]);
        prop_assume!(f.det() > 0.1);
        let r = Tensor2::rotation(2, angle);
        let rf = r.matmul(&f);
        let g = Tensor3::from_fn(2, |i, j, k| gv[4 * i + 2 * j + k]);
        let fd = Tensor2::from_rows(&[&[rate[0], rate[1]], &[rate[2], rate[3]]]);
        let tol = 1e-12;
        prop_assert!(rel_err(m.elastic_energy(&rf), m.elastic_energy(&f)) < tol);
        prop_assert!(rel_err(m.hyperstress_energy(&g.left_mul(&r)), m.hyperstress_energy(&g)) < tol);
        prop_assert!((m.coupling_energy(&rf, th) - m.coupling_energy(&f, th)).abs() < tol);
        prop_assert!((m.viscous_potential(&rf, &r.matmul(&fd)) - m.viscous_potential(&f, &fd)).abs()
            < tol * (1.0 + m.viscous_potential(&f, &fd)));
        prop_assert!((m.enthalpy(&rf, th) - m.enthalpy(&f, th)).abs() < tol);
    }

    #[test]
    fn frame_indifference_3d(angle in arb_rotation_angle(),
                             axis in proptest::array::uniform3(-1.0f64..1.0),
                             e in proptest::array::uniform9(-0.25f64..0.25),
                             th in 0.0f64..5.0) {
        prop_assume!(axis.iter().map(|a| a * a).sum::<f64>() > 0.01);
        let m = MaterialModel::default_for_dim(3);
        let f = Tensor2::identity(3).add(&Tensor2::from_fn(3, |i, j| e[3 * i + j]));
        prop_assume!(f.det() > 0.1);
        let r = Tensor2::rotation_axis(axis, angle);
        let rf = r.matmul(&f);
        prop_assert!(rel_err(m.elastic_energy(&rf), m.elastic_energy(&f)) < 1e-12);
        prop_assert!((m.coupling_energy(&rf, th) - m.coupling_energy(&f, th)).abs() < 1e-12);
        // stresses rotate covariantly
        let s = m.elastic_stress(&f).unwrap();
        prop_assert!(m.elastic_stress(&rf).unwrap().max_abs_diff(&r.matmul(&s)) < 1e-10 * (1.0 + s.norm()));
    }

    #[test]
    fn conductivity_is_spd_and_covariant(e in proptest::array::uniform4(-0.4f64..0.4), angle in arb_rotation_angle()) {
        let m = MaterialModel::default_for_dim(2);
        let f = Tensor2::from_rows(&[&[1.0 + e[0], e[1]], &[e[2], 1.0 + e[3]]]);
        prop_assume!(f.det() > 0.1);
        let k = m.pulled_back_conductivity(&f, 1.0).unwrap();
        prop_assert!(k.max_abs_diff(&k.transpose()) < 1e-12);
        prop_assert!(k.m[0][0] > 0.0 && k.det() > 0.0);
        // isotropic spatial conductivity: pull-back is unchanged by a left rotation
        let kr = m.pulled_back_conductivity(&Tensor2::rotation(2, angle).matmul(&f), 1.0).unwrap();
        prop_assert!(kr.max_abs_diff(&k) < 1e-12 * (1.0 + k.norm()));
    }

    #[test]
    fn dissipation_non_negative(e in proptest::array::uniform4(-0.4f64..0.4), rate in proptest::array::uniform4(-2.0f64..2.0), eps in 0.0f64..1.0) {
        let m = MaterialModel::default_for_dim(2);
        let f = Tensor2::from_rows(&[&[1.0 + e[0], e[1]], &[e[2], 1.0 + e[3]]]);
        let fd = Tensor2::from_rows(&[&[rate[0], rate[1]], &[rate[2], rate[3]]]);
        let xi = m.dissipation_rate(&f, &fd);
        prop_assert!(xi >= 0.0);
        let r = MaterialModel::regularized_dissipation(xi, eps);
        prop_assert!(r >= 0.0 && r <= xi + 1e-15);
    }
}
