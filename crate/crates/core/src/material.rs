//! Constitutive laws.
//!
//! The free energy splits into a mechanical part and a thermal coupling part,
//!
//! ```text
//! psi(F, theta) = phi(F) + varphi(F, theta)
//! phi(F)        = c1 |F|^s + c2 / det(F)^q
//! varphi(F, th) = (a(0) - a(th)) phi1(F) + c th (1 - log th),   a(th) = (1 + th)^(-alpha)
//! ```
//!
//! with a hyperstress energy `H(G) = h |G|^p` acting on the second gradient and a
//! Kelvin-Voigt dissipation potential `zeta = nu/2 |dC/dt|^2`, `C = F^T F`.
//!
//! `phi1` is a compactly supported bump in the Green-Lagrange strain,
//! `phi1(F) = A (1 - |C - I|^2 / R^2)^3` inside the support and zero outside. It is
//! frame indifferent, `C^2`, and stationary at the identity.
//!
//! The heat step needs two primitives of `varphi` in temperature:
//! `varphi_C(F, th) = int_0^th varphi(F, s) ds` and `W = 2 varphi_C - th varphi`,
//! which satisfy `dW/dth = w` (enthalpy) and `d^2W/dth^2 = c_v` (heat capacity).
//! For negative temperatures both are continued by their second-order Taylor
//! polynomial at zero, which keeps the heat functional smooth and convex.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Tensor2, Tensor3, Tensor4};

/// Temperatures below this are treated as zero in `theta log theta`.
const THETA_TINY: f64 = 1e-300;

/// Smooth compactly supported bump in `|C - I|`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bump {
    pub amplitude: f64,
    pub radius: f64,
}

impl Default for Bump {
    fn default() -> Self {
        Self {
            amplitude: 0.1,
            radius: 1.0,
        }
    }
}

/// All material parameters of the model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaterialModel {
    pub d: usize,
    pub c1: f64,
    pub c2: f64,
    pub s: f64,
    pub q: f64,
    pub p: f64,
    pub h_coef: f64,
    pub nu: f64,
    pub heat_capacity: f64,
    pub alpha: f64,
    pub bump: Bump,
    /// Referential conductivity before pull-back; constant and SPD.
    pub conductivity: Tensor2,
    /// Robin heat-transfer coefficient on the boundary.
    pub kappa: f64,
}

/// Heat-related quantities at one material point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ThermalState {
    pub enthalpy: f64,
    pub heat_capacity: f64,
    pub entropy: f64,
}

/// Second derivative of the hyperstress energy, stored in factored form:
/// `D^2 H(G)[A, B] = a A:B + b (G:A)(G:B)`.
#[derive(Clone, Copy, Debug)]
pub struct HyperHessian {
    pub a: f64,
    pub b: f64,
    pub g: Tensor3,
}

impl HyperHessian {
    pub fn bilinear(&self, x: &Tensor3, y: &Tensor3) -> f64 {
        self.a * x.ddot(y) + self.b * self.g.ddot(x) * self.g.ddot(y)
    }
}

impl MaterialModel {
    /// Default parameters in dimension `d`.
    ///
    /// `q` is the smallest integer strictly above `pd/(p-d)` (5 in 2D, 13 in 3D), which
    /// keeps the exponent condition of the determinant bound strict; `c2` is then
    /// chosen so that the identity stays stress free.
    pub fn default_for_dim(d: usize) -> Self {
        let (c1, s, p) = (1.0, 4.0, 4.0);
        let df = d as f64;
        let q = (p * df / (p - df)).floor() + 1.0;
        let c2 = stress_free_c2(d, c1, s, q);
        Self {
            d,
            c1,
            c2,
            s,
            q,
            p,
            h_coef: 1e-2,
            nu: 1.0,
            heat_capacity: 1.0,
            alpha: 1.0,
            bump: Bump::default(),
            conductivity: Tensor2::identity(d),
            kappa: 1.0,
        }
    }

    /// Checks every structural assumption and reports all violations at once.
    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidMaterial(v))
        }
    }

    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        let d = self.d as f64;
        if !(2..=3).contains(&self.d) {
            v.push(format!("dimension d = {} must be 2 or 3", self.d));
        }
        let positive = [
            ("c1", self.c1),
            ("c2", self.c2),
            ("s", self.s),
            ("h_coef", self.h_coef),
            ("nu", self.nu),
            ("heat_capacity", self.heat_capacity),
            ("alpha", self.alpha),
            ("kappa", self.kappa),
            ("bump.radius", self.bump.radius),
        ];
        for (name, x) in positive {
            if !(x > 0.0 && x.is_finite()) {
                v.push(format!("{name} must be positive (got {x})"));
            }
        }
        if !(self.bump.amplitude >= 0.0 && self.bump.amplitude.is_finite()) {
            v.push(format!(
                "bump.amplitude must be non-negative (got {})",
                self.bump.amplitude
            ));
        }
        if !(self.p > d) {
            v.push(format!("p > d violated (p = {}, d = {})", self.p, self.d));
        }
        if !(self.p > 2.0) {
            v.push(format!("p > 2 violated (p = {})", self.p));
        }
        if self.p > d {
            let qmin = self.p * d / (self.p - d);
            if !(self.q >= qmin) {
                v.push(format!(
                    "q ≥ pd/(p−d) violated (needs q ≥ {})",
                    fmt_num(qmin)
                ));
            }
        } else if !(self.q > 0.0) {
            v.push(format!("q must be positive (got {})", self.q));
        }
        if self.conductivity.d != self.d {
            v.push("conductivity dimension differs from d".into());
        } else if !is_spd(&self.conductivity) {
            v.push("conductivity must be symmetric positive definite".into());
        }
        v
    }

    // ---- mechanical energy -------------------------------------------------

    /// `phi(F)`; `+inf` when `det F <= 0`.
    pub fn elastic_energy(&self, f: &Tensor2) -> f64 {
        let j = f.det();
        if j <= 0.0 {
            return f64::INFINITY;
        }
        self.c1 * f.norm().powf(self.s) + self.c2 * j.powf(-self.q)
    }

    pub fn elastic_stress(&self, f: &Tensor2) -> Result<Tensor2> {
        let j = f.det();
        if j <= 0.0 {
            return Err(Error::Inverted { det: j });
        }
        let nf = f.norm();
        let a = f.cofactor().scale(1.0 / j);
        let t1 = if nf > 0.0 {
            self.c1 * self.s * nf.powf(self.s - 2.0)
        } else {
            0.0
        };
        Ok(f.scale(t1).axpy(-self.c2 * self.q * j.powf(-self.q), &a))
    }

    pub fn elastic_tangent(&self, f: &Tensor2) -> Result<Tensor4> {
        let d = f.d;
        let j = f.det();
        if j <= 0.0 {
            return Err(Error::Inverted { det: j });
        }
        let mut c = Tensor4::zeros(d);
        let nf = f.norm();
        if nf > 0.0 {
            let s = self.s;
            c.add_identity(self.c1 * s * nf.powf(s - 2.0));
            c.add_outer(self.c1 * s * (s - 2.0) * nf.powf(s - 4.0), f, f);
        }
        let a = f.cofactor().scale(1.0 / j);
        let k = self.c2 * self.q * j.powf(-self.q);
        for i in 0..d {
            for jj in 0..d {
                for kk in 0..d {
                    for l in 0..d {
                        c.c[i][jj][kk][l] +=
                            k * (self.q * a.m[i][jj] * a.m[kk][l] + a.m[i][l] * a.m[kk][jj]);
                    }
                }
            }
        }
        Ok(c)
    }

    pub fn hyperstress_energy(&self, g: &Tensor3) -> f64 {
        self.h_coef * g.norm().powf(self.p)
    }

    pub fn hyperstress(&self, g: &Tensor3) -> Tensor3 {
        let n = g.norm();
        if n == 0.0 {
            return Tensor3::zeros(g.d);
        }
        g.scale(self.p * self.h_coef * n.powf(self.p - 2.0))
    }

    pub fn hyperstress_hessian(&self, g: &Tensor3) -> HyperHessian {
        let n = g.norm();
        let p = self.p;
        if n == 0.0 {
            let a = if p == 2.0 { 2.0 * self.h_coef } else { 0.0 };
            return HyperHessian { a, b: 0.0, g: *g };
        }
        HyperHessian {
            a: p * self.h_coef * n.powf(p - 2.0),
            b: p * (p - 2.0) * self.h_coef * n.powf(p - 4.0),
            g: *g,
        }
    }

    // ---- dissipation -------------------------------------------------------

    /// Rate of the right Cauchy-Green tensor, `F_dot^T F + F^T F_dot`.
    pub fn c_rate(f: &Tensor2, fdot: &Tensor2) -> Tensor2 {
        let x = f.transpose().matmul(fdot);
        x.add(&x.transpose())
    }

    /// `zeta(F, F_dot) = nu/2 |C_dot|^2`
    pub fn viscous_potential(&self, f: &Tensor2, fdot: &Tensor2) -> f64 {
        0.5 * self.nu * Self::c_rate(f, fdot).norm_sq()
    }

    /// `d zeta / d F_dot = 2 nu F C_dot`
    pub fn viscous_stress(&self, f: &Tensor2, fdot: &Tensor2) -> Tensor2 {
        f.matmul(&Self::c_rate(f, fdot)).scale(2.0 * self.nu)
    }

    /// Second derivative of `zeta` in the rate as a fourth-order tensor.
    pub fn viscous_tangent(&self, f: &Tensor2) -> Tensor4 {
        let d = f.d;
        let mut c = Tensor4::zeros(d);
        let basis: Vec<Tensor2> = (0..d * d)
            .map(|r| Self::c_rate(f, &Tensor2::unit(d, r / d, r % d)))
            .collect();
        for r in 0..d * d {
            for s in 0..d * d {
                c.c[r / d][r % d][s / d][s % d] = self.nu * basis[r].ddot(&basis[s]);
            }
        }
        c
    }

    /// Dissipation rate `xi = sigma_vi : F_dot = nu |C_dot|^2 = 2 zeta`.
    pub fn dissipation_rate(&self, f: &Tensor2, fdot: &Tensor2) -> f64 {
        self.nu * Self::c_rate(f, fdot).norm_sq()
    }

    pub fn regularized_dissipation(xi: f64, eps: f64) -> f64 {
        xi / (1.0 + eps * xi)
    }

    // ---- coupling ----------------------------------------------------------

    pub fn a(&self, theta: f64) -> f64 {
        (1.0 + theta).powf(-self.alpha)
    }

    pub fn a_prime(&self, theta: f64) -> f64 {
        -self.alpha * (1.0 + theta).powf(-self.alpha - 1.0)
    }

    pub fn a_second(&self, theta: f64) -> f64 {
        self.alpha * (self.alpha + 1.0) * (1.0 + theta).powf(-self.alpha - 2.0)
    }

    /// `int_0^theta a(s) ds`
    fn a_integral(&self, theta: f64) -> f64 {
        if (self.alpha - 1.0).abs() < 1e-14 {
            theta.ln_1p()
        } else {
            let e = 1.0 - self.alpha;
            ((theta.ln_1p() * e).exp_m1()) / e
        }
    }

    /// `a(0) - a(theta)` evaluated without cancellation.
    fn a_drop(&self, theta: f64) -> f64 {
        -(-self.alpha * theta.ln_1p()).exp_m1()
    }

    /// Bump coefficient of `W`: `a(0) th - 2 A(th) + th a(th)` with `A` the primitive of `a`.
    fn w_bump_factor(&self, theta: f64) -> f64 {
        theta - 2.0 * self.a_integral(theta) + theta * self.a(theta)
    }

    pub fn phi1(&self, f: &Tensor2) -> f64 {
        let (u, _) = green_sq(f);
        let r2 = self.bump.radius * self.bump.radius;
        if u >= r2 {
            return 0.0;
        }
        self.bump.amplitude * (1.0 - u / r2).powi(3)
    }

    pub fn phi1_grad(&self, f: &Tensor2) -> Tensor2 {
        let (u, e) = green_sq(f);
        let r2 = self.bump.radius * self.bump.radius;
        if u >= r2 {
            return Tensor2::zeros(f.d);
        }
        let gp = -3.0 * self.bump.amplitude / r2 * (1.0 - u / r2).powi(2);
        f.matmul(&e).scale(4.0 * gp)
    }

    pub fn phi1_hessian(&self, f: &Tensor2) -> Tensor4 {
        let d = f.d;
        let (u, e) = green_sq(f);
        let r2 = self.bump.radius * self.bump.radius;
        let mut c = Tensor4::zeros(d);
        if u >= r2 {
            return c;
        }
        let gp = -3.0 * self.bump.amplitude / r2 * (1.0 - u / r2).powi(2);
        let gpp = 6.0 * self.bump.amplitude / (r2 * r2) * (1.0 - u / r2);
        let du = f.matmul(&e).scale(4.0);
        c.add_outer(gpp, &du, &du);
        let fft = f.matmul(&f.transpose());
        for i in 0..d {
            for j in 0..d {
                for k in 0..d {
                    for l in 0..d {
                        let mut h = f.m[i][l] * f.m[k][j];
                        if i == k {
                            h += e.m[l][j];
                        }
                        if j == l {
                            h += fft.m[i][k];
                        }
                        c.c[i][j][k][l] += 4.0 * gp * h;
                    }
                }
            }
        }
        c
    }

    /// `varphi(F, theta)` for `theta >= 0`.
    pub fn coupling_energy(&self, f: &Tensor2, theta: f64) -> f64 {
        let th = theta.max(0.0);
        self.a_drop(th) * self.phi1(f) + self.heat_capacity * theta_one_minus_log(th)
    }

    /// `d varphi / d F = (a(0) - a(theta)) phi1'(F)`
    pub fn coupling_stress(&self, f: &Tensor2, theta: f64) -> Tensor2 {
        self.phi1_grad(f).scale(self.a_drop(theta.max(0.0)))
    }

    pub fn coupling_tangent(&self, f: &Tensor2, theta: f64) -> Tensor4 {
        let mut c = Tensor4::zeros(f.d);
        let s = self.a_drop(theta.max(0.0));
        if s != 0.0 {
            c.add_scaled(s, &self.phi1_hessian(f));
        }
        c
    }

    // ---- heat --------------------------------------------------------------

    /// Enthalpy `w = varphi - theta d(varphi)/d(theta)`.
    pub fn enthalpy(&self, f: &Tensor2, theta: f64) -> f64 {
        let th = theta.max(0.0);
        (self.a_drop(th) + th * self.a_prime(th)) * self.phi1(f) + self.heat_capacity * th
    }

    /// `c_v = d w / d theta = c + theta a''(theta) phi1(F)`
    pub fn heat_capacity_at(&self, f: &Tensor2, theta: f64) -> f64 {
        let th = theta.max(0.0);
        self.heat_capacity + th * self.a_second(th) * self.phi1(f)
    }

    /// Entropy `-d psi / d theta`; `-inf` at zero temperature.
    pub fn entropy(&self, f: &Tensor2, theta: f64) -> f64 {
        self.a_prime(theta) * self.phi1(f) + self.heat_capacity * theta.ln()
    }

    pub fn thermal_state(&self, f: &Tensor2, theta: f64) -> ThermalState {
        ThermalState {
            enthalpy: self.enthalpy(f, theta),
            heat_capacity: self.heat_capacity_at(f, theta),
            entropy: self.entropy(f, theta),
        }
    }

    /// Temperature with `w(F, theta) = w`; zero for non-positive enthalpy.
    pub fn enthalpy_inverse(&self, f: &Tensor2, w: f64) -> f64 {
        if w <= 0.0 {
            return 0.0;
        }
        // c_v >= c, so theta lies in [0, w / c].
        let (mut lo, mut hi) = (0.0, w / self.heat_capacity);
        let mut th = hi;
        for _ in 0..200 {
            let r = self.enthalpy(f, th) - w;
            if r.abs() <= 1e-15 * w.max(1e-300) {
                break;
            }
            if r > 0.0 {
                hi = th;
            } else {
                lo = th;
            }
            let newton = th - r / self.heat_capacity_at(f, th);
            th = if newton > lo && newton < hi {
                newton
            } else {
                0.5 * (lo + hi)
            };
            if hi - lo <= 1e-16 * hi {
                break;
            }
        }
        th
    }

    /// `varphi_C(F, theta) = int_0^theta varphi(F, s) ds`, Taylor-continued below zero.
    pub fn phi_c(&self, f: &Tensor2, theta: f64) -> f64 {
        if theta < 0.0 {
            // varphi_C(0) = 0 and d/dth varphi_C(0) = varphi(F, 0) = 0; the curvature
            // diverges through the log term, so only the bump part is continued.
            return 0.5 * self.alpha * theta * theta * self.phi1(f);
        }
        let bump = (theta - self.a_integral(theta)) * self.phi1(f);
        let c = self.heat_capacity;
        let log_part = if theta < THETA_TINY {
            0.0
        } else {
            theta * theta * theta.ln()
        };
        bump + c * (0.75 * theta * theta - 0.5 * log_part)
    }

    /// `d varphi_C / d F`, Taylor-continued below zero.
    pub fn phi_c_stress(&self, f: &Tensor2, theta: f64) -> Tensor2 {
        let factor = if theta < 0.0 {
            0.5 * self.alpha * theta * theta
        } else {
            theta - self.a_integral(theta)
        };
        self.phi1_grad(f).scale(factor)
    }

    /// `d^2 varphi_C / dF dtheta = d varphi / dF`, Taylor-continued below zero.
    pub fn phi_c_stress_dtheta(&self, f: &Tensor2, theta: f64) -> Tensor2 {
        let factor = if theta < 0.0 {
            self.alpha * theta
        } else {
            self.a_drop(theta)
        };
        self.phi1_grad(f).scale(factor)
    }

    /// `d^3 varphi_C / dF dtheta^2`, Taylor-continued below zero.
    pub fn phi_c_stress_dtheta2(&self, f: &Tensor2, theta: f64) -> Tensor2 {
        let factor = if theta < 0.0 {
            self.alpha
        } else {
            -self.a_prime(theta)
        };
        self.phi1_grad(f).scale(factor)
    }

    /// `W(F, theta) = 2 varphi_C - theta varphi`, Taylor-continued below zero.
    pub fn thermal_potential(&self, f: &Tensor2, theta: f64) -> f64 {
        let c = self.heat_capacity;
        if theta < 0.0 {
            return 0.5 * c * theta * theta;
        }
        self.w_bump_factor(theta) * self.phi1(f) + 0.5 * c * theta * theta
    }

    /// `dW/dtheta`, equal to the enthalpy for `theta >= 0`.
    pub fn thermal_potential_dtheta(&self, f: &Tensor2, theta: f64) -> f64 {
        if theta < 0.0 {
            return self.heat_capacity * theta;
        }
        self.enthalpy(f, theta)
    }

    /// `d^2W/dtheta^2`, equal to the heat capacity for `theta >= 0`.
    pub fn thermal_potential_dtheta2(&self, f: &Tensor2, theta: f64) -> f64 {
        if theta < 0.0 {
            return self.heat_capacity;
        }
        self.heat_capacity_at(f, theta)
    }

    /// Referential conductivity `det(F) F^{-1} K F^{-T}`.
    pub fn pulled_back_conductivity(&self, f: &Tensor2, _theta: f64) -> Result<Tensor2> {
        let j = f.det();
        if j <= 0.0 {
            return Err(Error::Inverted { det: j });
        }
        let inv = f.inverse().ok_or(Error::Inverted { det: j })?;
        Ok(inv
            .matmul(&self.conductivity)
            .matmul(&inv.transpose())
            .scale(j))
    }
}

/// `c2` making the identity stress free for the given `c1`, `s`, `q`.
pub fn stress_free_c2(d: usize, c1: f64, s: f64, q: f64) -> f64 {
    c1 * s * (d as f64).powf(0.5 * (s - 2.0)) / q
}

/// `theta (1 - log theta)` with its limit zero at the origin.
fn theta_one_minus_log(theta: f64) -> f64 {
    if theta < THETA_TINY {
        0.0
    } else {
        theta * (1.0 - theta.ln())
    }
}

/// `(|C - I|^2, C - I)`
fn green_sq(f: &Tensor2) -> (f64, Tensor2) {
    let e = f.gram().sub(&Tensor2::identity(f.d));
    (e.norm_sq(), e)
}

fn is_spd(k: &Tensor2) -> bool {
    let d = k.d;
    if k.max_abs_diff(&k.transpose()) > 1e-12 * k.norm().max(1.0) {
        return false;
    }
    // leading principal minors
    (1..=d).all(|n| Tensor2::from_fn(n, |i, j| k.m[i][j]).det() > 0.0)
}

fn fmt_num(x: f64) -> String {
    if (x - x.round()).abs() < 1e-12 {
        format!("{}", x.round() as i64)
    } else {
        format!("{x:.4}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec_model() -> MaterialModel {
        MaterialModel {
            c2: 2.0,
            q: 4.0,
            ..MaterialModel::default_for_dim(2)
        }
    }

    #[test]
    fn identity_energy_and_stress() {
        let m = spec_model();
        let i = Tensor2::identity(2);
        assert!((m.elastic_energy(&i) - 6.0).abs() < 1e-14);
        assert!(m.elastic_stress(&i).unwrap().norm() < 1e-14);
    }

    #[test]
    fn default_identity_is_stress_free() {
        for d in [2, 3] {
            let m = MaterialModel::default_for_dim(d);
            assert!(m.elastic_stress(&Tensor2::identity(d)).unwrap().norm() < 1e-12);
        }
    }

    #[test]
    fn inverted_gradient_is_rejected() {
        let m = spec_model();
        let f = Tensor2::diag(&[1.0, -1.0]);
        assert!(matches!(m.elastic_stress(&f), Err(Error::Inverted { .. })));
        assert_eq!(m.elastic_energy(&f), f64::INFINITY);
    }

    #[test]
    fn viscous_reference_values() {
        let m = spec_model();
        let i = Tensor2::identity(2);
        let fd = Tensor2::diag(&[1.0, 0.0]);
        assert!((m.viscous_potential(&i, &fd) - 2.0).abs() < 1e-15);
        assert!(
            m.viscous_stress(&i, &fd)
                .max_abs_diff(&Tensor2::diag(&[4.0, 0.0]))
                < 1e-15
        );
        assert!((m.dissipation_rate(&i, &fd) - 4.0).abs() < 1e-15);
    }

    #[test]
    fn coupling_vanishes_at_zero_temperature() {
        let m = spec_model();
        let f = Tensor2::from_rows(&[&[1.1, 0.2], &[-0.1, 0.95]]);
        assert_eq!(m.coupling_energy(&f, 0.0), 0.0);
        assert_eq!(m.enthalpy(&f, 0.0), 0.0);
        assert_eq!(m.coupling_stress(&f, 0.0).norm(), 0.0);
    }

    #[test]
    fn q_violation_message() {
        let m = MaterialModel {
            q: 3.0,
            ..spec_model()
        };
        let err = m.validate().unwrap_err().to_string();
        assert!(err.contains("q ≥ pd/(p−d) violated (needs q ≥ 4)"), "{err}");
    }

    #[test]
    fn all_violations_are_reported() {
        let m = MaterialModel {
            c1: -1.0,
            nu: 0.0,
            p: 1.5,
            ..spec_model()
        };
        let v = m.violations();
        assert!(v.len() >= 4, "{v:?}");
    }

    #[test]
    fn enthalpy_inverse_round_trip() {
        let m = spec_model();
        let f = Tensor2::from_rows(&[&[1.05, 0.1], &[0.0, 0.97]]);
        for &th in &[1e-6, 0.3, 1.0, 7.5] {
            let w = m.enthalpy(&f, th);
            assert!((m.enthalpy_inverse(&f, w) - th).abs() < 1e-12 * th.max(1.0));
        }
    }
}
