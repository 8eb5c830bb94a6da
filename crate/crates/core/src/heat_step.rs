//! Thermal half-step.
//!
//! Given `y^{k-1}`, `y^k` and `theta^{k-1}`, the new temperature minimizes
//!
//! ```text
//! int (W(F^k, th) - w_prev th) / tau + 1/2 grad th . K grad th - xi_reg th
//!     - d_F varphi_C(F^k, th) : (F^k - F^{k-1}) / tau
//! + int_Gamma kappa/2 (th - th_b)^2
//! ```
//!
//! with the conductivity `K` and the regularized dissipation `xi_reg` frozen at the
//! previous state. Its Euler-Lagrange equation is the discrete heat balance in
//! enthalpy form. Temperature is Q1, so the nodal minimum bounds it everywhere.

use log::{debug, warn};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::NodalField;
use crate::linalg::{dot, norm};
use crate::material::MaterialModel;
use crate::model::Model;
use crate::tensor::Tensor2;

#[derive(Clone, Debug)]
pub struct HeatIncrement {
    pub theta_prev: NodalField,
    /// `F^{k-1}` and `F^k` at the volume quadrature points.
    pub f_prev: Vec<Tensor2>,
    pub f_new: Vec<Tensor2>,
    /// `w^{k-1}` at the volume quadrature points.
    pub w_prev: Vec<f64>,
    pub tau: f64,
    pub eps: f64,
    /// Regularized, time-averaged boundary temperature at the boundary quadrature points.
    pub theta_b: Vec<f64>,
    /// Pulled-back conductivity at `(F^{k-1}, theta^{k-1})`.
    pub conductivity: Vec<Tensor2>,
    /// `xi` and its regularization at `(F^{k-1}, (F^k - F^{k-1}) / tau)`.
    pub xi: Vec<f64>,
    pub xi_reg: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct HeatResult {
    pub theta: NodalField,
    pub w: Vec<f64>,
    /// Nodal minimum before clamping.
    pub min_theta: f64,
    /// Largest magnitude removed by clamping to zero.
    pub clamped: f64,
    pub functional: f64,
    pub iterations: usize,
    pub residual: f64,
    pub initial_residual: f64,
}

impl HeatIncrement {
    pub fn new(
        model: &Model,
        theta_prev: &NodalField,
        f_prev: Vec<Tensor2>,
        f_new: Vec<Tensor2>,
        w_prev: Vec<f64>,
        tau: f64,
        eps: f64,
        theta_b: Vec<f64>,
    ) -> Result<Self> {
        let m = &model.material;
        let th_qp = model.grid.scalar_at_qp(theta_prev);
        let conductivity = f_prev
            .par_iter()
            .zip(&th_qp)
            .map(|(f, t)| m.pulled_back_conductivity(f, *t))
            .collect::<Result<Vec<_>>>()?;
        let xi: Vec<f64> = f_prev
            .iter()
            .zip(&f_new)
            .map(|(a, b)| m.dissipation_rate(a, &b.sub(a).scale(1.0 / tau)))
            .collect();
        let xi_reg = xi
            .iter()
            .map(|x| MaterialModel::regularized_dissipation(*x, eps))
            .collect();
        Ok(Self {
            theta_prev: theta_prev.clone(),
            f_prev,
            f_new,
            w_prev,
            tau,
            eps,
            theta_b,
            conductivity,
            xi,
            xi_reg,
        })
    }

    fn delta(&self, q: usize) -> Tensor2 {
        self.f_new[q].sub(&self.f_prev[q])
    }
}

/// The heat functional at nodal temperatures `theta`.
pub fn heat_functional(model: &Model, inc: &HeatIncrement, theta: &NodalField) -> f64 {
    let g = &model.grid;
    let m = &model.material;
    let th = g.scalar_at_qp(theta);
    let gr = g.scalar_grad_at_qp(theta);
    let dens: Vec<f64> = (0..th.len())
        .into_par_iter()
        .map(|q| {
            let t = th[q];
            let f = &inc.f_new[q];
            let kg = inc.conductivity[q].matvec(&gr[q]);
            let cond: f64 = (0..g.d).map(|a| kg[a] * gr[q][a]).sum();
            (m.thermal_potential(f, t) - inc.w_prev[q] * t) / inc.tau + 0.5 * cond
                - inc.xi_reg[q] * t
                - m.phi_c_stress(f, t).ddot(&inc.delta(q)) / inc.tau
        })
        .collect();
    let (robin, _) = g.boundary_assemble(theta, &inc.theta_b, m.kappa);
    g.assemble_scalar(&dens) + robin
}

/// Nodal gradient of [`heat_functional`].
pub fn heat_gradient(model: &Model, inc: &HeatIncrement, theta: &NodalField) -> Vec<f64> {
    let g = &model.grid;
    let m = &model.material;
    let th = g.scalar_at_qp(theta);
    let gr = g.scalar_grad_at_qp(theta);
    let (a, b): (Vec<f64>, Vec<[f64; 3]>) = (0..th.len())
        .into_par_iter()
        .map(|q| {
            let t = th[q];
            let f = &inc.f_new[q];
            let a = (m.thermal_potential_dtheta(f, t) - inc.w_prev[q]) / inc.tau
                - inc.xi_reg[q]
                - m.phi_c_stress_dtheta(f, t).ddot(&inc.delta(q)) / inc.tau;
            (a, inc.conductivity[q].matvec(&gr[q]))
        })
        .unzip();
    let tb = g.scalar_at_bqp(theta);
    let flux: Vec<f64> = tb
        .iter()
        .zip(&inc.theta_b)
        .map(|(t, b)| m.kappa * (t - b))
        .collect();
    g.assemble_q1_vector(&a, Some(&b), Some(&flux))
}

/// Hessian of [`heat_functional`].
pub fn heat_hessian(
    model: &Model,
    inc: &HeatIncrement,
    theta: &NodalField,
) -> crate::linalg::SymMatrix {
    let g = &model.grid;
    let m = &model.material;
    let th = g.scalar_at_qp(theta);
    let mass: Vec<f64> = (0..th.len())
        .into_par_iter()
        .map(|q| {
            let f = &inc.f_new[q];
            (m.thermal_potential_dtheta2(f, th[q])
                - m.phi_c_stress_dtheta2(f, th[q]).ddot(&inc.delta(q)))
                / inc.tau
        })
        .collect();
    let robin = vec![m.kappa; g.n_bqp()];
    g.assemble_q1_matrix(&mass, Some(&inc.conductivity), Some(&robin))
}

/// Newton's method from `theta^{k-1}` with a backtracking safeguard.
pub fn solve_heat(model: &Model, inc: &HeatIncrement) -> Result<HeatResult> {
    let s = &model.solver;
    let mut theta = inc.theta_prev.clone();
    let mut j = heat_functional(model, inc, &theta);
    let mut grad = heat_gradient(model, inc, &theta);
    let r0 = norm(&grad);
    let mut r = r0;
    let mut floor = 0.0;
    let mut iterations = 0;
    while r > s.tol_heat * r0 && r > floor {
        if iterations == s.max_newton {
            return Err(Error::StepRejected(format!(
                "heat Newton did not converge in {} iterations (residual {r:e}, initial {r0:e})",
                s.max_newton
            )));
        }
        iterations += 1;
        let hess = heat_hessian(model, inc, &theta);
        if iterations == 1 {
            floor = crate::mech_step::roundoff_floor(&hess, &theta.values);
        }
        let (factor, _) = model.t_chol.factor_shifted(&hess, 20)?;
        let mut dir: Vec<f64> = factor.solve(&grad).into_iter().map(|x| -x).collect();
        let mut slope = dot(&grad, &dir);
        if !(slope < 0.0) {
            dir = grad.iter().map(|x| -x).collect();
            slope = -r * r;
        }
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..=s.max_backtracks {
            let trial = theta.axpy(
                alpha,
                &NodalField {
                    per_node: 1,
                    values: dir.clone(),
                },
            );
            let jt = heat_functional(model, inc, &trial);
            if jt <= j + 1e-4 * alpha * slope + 1e-14 * j.abs() {
                theta = trial;
                j = jt;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            return Err(Error::StepRejected(format!(
                "heat line search failed (residual {r:e})"
            )));
        }
        grad = heat_gradient(model, inc, &theta);
        r = norm(&grad);
    }
    let min_theta = theta.min();
    let mut clamped: f64 = 0.0;
    if min_theta < 0.0 {
        if min_theta >= -s.tol_pos {
            for v in theta.values.iter_mut().filter(|v| **v < 0.0) {
                clamped = clamped.max(-*v);
                *v = 0.0;
            }
            debug!("clamped temperatures of magnitude up to {clamped:e} to zero");
        } else {
            warn!(
                "heat step produced min temperature {min_theta:e} below -{:e}",
                s.tol_pos
            );
        }
    }
    let th = model.grid.scalar_at_qp(&theta);
    let w = inc
        .f_new
        .iter()
        .zip(&th)
        .map(|(f, t)| model.material.enthalpy(f, *t))
        .collect();
    Ok(HeatResult {
        theta,
        w,
        min_theta,
        clamped,
        functional: j,
        iterations,
        residual: r,
        initial_residual: r0,
    })
}
