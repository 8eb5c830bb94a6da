//! Mechanical half-step: minimize the incremental functional at frozen temperature.
//!
//! ```text
//! J(y) = 1/tau R(y_prev, y - y_prev) + eps/(2 tau) |grad y - grad y_prev|^2
//!        + M(y) + Phi_cpl(y, theta_prev) - <l, y>
//! ```
//!
//! The dissipation is evaluated with the previous deformation gradient, so the rate
//! part is quadratic in `y`. Orientation reversal makes `J` infinite.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{Kinematics, NodalField};
use crate::linalg::{dot, norm};
use crate::material::HyperHessian;
use crate::model::Model;
use crate::tensor::{Tensor2, Tensor3, Tensor4};

/// Data fixed during one mechanical solve.
#[derive(Clone, Debug)]
pub struct MechIncrement {
    pub y_prev: NodalField,
    pub f_prev: Vec<Tensor2>,
    /// Previous temperature at the volume quadrature points.
    pub theta_prev: Vec<f64>,
    pub tau: f64,
    pub eps: f64,
    /// Time-averaged bulk force at the volume quadrature points.
    pub bulk: Vec<[f64; 3]>,
    /// Time-averaged traction at the boundary quadrature points (zero off the loaded faces).
    pub traction: Vec<[f64; 3]>,
    pub min_det_prev: f64,
}

#[derive(Clone, Debug)]
pub struct MechResult {
    pub y: NodalField,
    pub kin: Kinematics,
    pub iterations: usize,
    pub backtracks: usize,
    pub residual: f64,
    pub initial_residual: f64,
    pub functional: f64,
    pub initial_functional: f64,
    pub min_det: f64,
    /// Smallest `det F` over all accepted iterates, the final one included.
    pub min_det_iterates: f64,
    /// Newton iterations whose Hessian needed a diagonal shift.
    pub shifted_iterations: usize,
}

impl MechIncrement {
    pub fn new(
        model: &Model,
        y_prev: &NodalField,
        theta_prev: &NodalField,
        tau: f64,
        eps: f64,
        bulk: Vec<[f64; 3]>,
        traction: Vec<[f64; 3]>,
    ) -> Self {
        let kin = model.grid.kinematics(y_prev);
        let min_det_prev = kin.f.iter().map(|f| f.det()).fold(f64::INFINITY, f64::min);
        Self {
            y_prev: y_prev.clone(),
            f_prev: kin.f,
            theta_prev: model.grid.scalar_at_qp(theta_prev),
            tau,
            eps,
            bulk,
            traction,
            min_det_prev,
        }
    }
}

fn min_det(kin: &Kinematics) -> f64 {
    kin.f.iter().map(|f| f.det()).fold(f64::INFINITY, f64::min)
}

/// `<l, y>` for the increment's loads.
pub fn load_work(model: &Model, inc: &MechIncrement, y: &NodalField) -> f64 {
    let g = &model.grid;
    let d = g.d;
    let vol: Vec<f64> = g
        .deformation_at_qp(y)
        .iter()
        .zip(&inc.bulk)
        .map(|(v, b)| (0..d).map(|i| v[i] * b[i]).sum())
        .collect();
    let bd: Vec<f64> = g
        .deformation_at_bqp(y)
        .iter()
        .zip(&inc.traction)
        .map(|(v, t)| (0..d).map(|i| v[i] * t[i]).sum())
        .collect();
    g.assemble_scalar(&vol) + g.boundary_integral(&bd)
}

fn point_energy(model: &Model, inc: &MechIncrement, q: usize, f: &Tensor2, g: &Tensor3) -> f64 {
    let m = &model.material;
    let mut e = m.elastic_energy(f) + m.hyperstress_energy(g);
    if !model.isothermal {
        e += m.coupling_energy(f, inc.theta_prev[q]);
    }
    let delta = f.sub(&inc.f_prev[q]);
    e += m.viscous_potential(&inc.f_prev[q], &delta) / inc.tau;
    e += 0.5 * inc.eps / inc.tau * delta.norm_sq();
    e
}

fn point_stress(
    model: &Model,
    inc: &MechIncrement,
    q: usize,
    f: &Tensor2,
    g: &Tensor3,
) -> Result<(Tensor2, Tensor3)> {
    let m = &model.material;
    let mut p = m.elastic_stress(f)?;
    if !model.isothermal {
        p = p.add(&m.coupling_stress(f, inc.theta_prev[q]));
    }
    let delta = f.sub(&inc.f_prev[q]);
    p = p.axpy(1.0 / inc.tau, &m.viscous_stress(&inc.f_prev[q], &delta));
    p = p.axpy(inc.eps / inc.tau, &delta);
    Ok((p, m.hyperstress(g)))
}

fn point_tangent(
    model: &Model,
    inc: &MechIncrement,
    q: usize,
    f: &Tensor2,
    g: &Tensor3,
) -> Result<(Tensor4, HyperHessian)> {
    let m = &model.material;
    let mut c = m.elastic_tangent(f)?;
    if !model.isothermal {
        c.add_scaled(1.0, &m.coupling_tangent(f, inc.theta_prev[q]));
    }
    c.add_scaled(1.0 / inc.tau, &m.viscous_tangent(&inc.f_prev[q]));
    c.add_identity(inc.eps / inc.tau);
    Ok((c, m.hyperstress_hessian(g)))
}

/// The incremental functional; `+inf` for non-orientation-preserving states.
pub fn incremental_functional(model: &Model, inc: &MechIncrement, y: &NodalField) -> f64 {
    let kin = model.grid.kinematics(y);
    functional_from_kin(model, inc, y, &kin)
}

fn functional_from_kin(
    model: &Model,
    inc: &MechIncrement,
    y: &NodalField,
    kin: &Kinematics,
) -> f64 {
    if min_det(kin) <= 0.0 {
        return f64::INFINITY;
    }
    let dens: Vec<f64> = (0..kin.f.len())
        .into_par_iter()
        .map(|q| point_energy(model, inc, q, &kin.f[q], &kin.g[q]))
        .collect();
    model.grid.assemble_scalar(&dens) - load_work(model, inc, y)
}

/// Gradient of the incremental functional in all coefficients (constrained ones zero).
pub fn functional_gradient(model: &Model, inc: &MechIncrement, y: &NodalField) -> Result<Vec<f64>> {
    let kin = model.grid.kinematics(y);
    gradient_from_kin(model, inc, &kin)
}

fn gradient_from_kin(model: &Model, inc: &MechIncrement, kin: &Kinematics) -> Result<Vec<f64>> {
    let pts: Vec<(Tensor2, Tensor3)> = (0..kin.f.len())
        .into_par_iter()
        .map(|q| point_stress(model, inc, q, &kin.f[q], &kin.g[q]))
        .collect::<Result<_>>()?;
    let (p, h): (Vec<Tensor2>, Vec<Tensor3>) = pts.into_iter().unzip();
    Ok(model
        .grid
        .assemble_gradient(&p, Some(&h), Some(&inc.bulk), Some(&inc.traction)))
}

/// Hessian of the incremental functional in all coefficients.
pub fn functional_hessian(
    model: &Model,
    inc: &MechIncrement,
    y: &NodalField,
) -> Result<crate::linalg::SymMatrix> {
    hessian_from_kin(model, inc, &model.grid.kinematics(y))
}

fn hessian_from_kin(
    model: &Model,
    inc: &MechIncrement,
    kin: &Kinematics,
) -> Result<crate::linalg::SymMatrix> {
    let pts: Vec<(Tensor4, HyperHessian)> = (0..kin.f.len())
        .into_par_iter()
        .map(|q| point_tangent(model, inc, q, &kin.f[q], &kin.g[q]))
        .collect::<Result<_>>()?;
    let (c, h): (Vec<Tensor4>, Vec<HyperHessian>) = pts.into_iter().unzip();
    Ok(model.grid.assemble_hessian(&c, Some(&h), None))
}

/// Damped Newton with an Armijo line search that also keeps `det F` away from zero.
pub fn solve_mech(model: &Model, inc: &MechIncrement) -> Result<MechResult> {
    let s = &model.solver;
    let grid = &model.grid;
    let mut y = inc.y_prev.clone();
    let mut kin = grid.kinematics(&y);
    let mut j = functional_from_kin(model, inc, &y, &kin);
    let j0 = j;
    let mut grad = grid.restrict_free(&gradient_from_kin(model, inc, &kin)?);
    let r0 = norm(&grad);
    let mut r = r0;
    let gate = s.det_gate * inc.min_det_prev;
    let (mut iterations, mut backtracks, mut shifted) = (0, 0, 0);
    let mut min_det_iterates = inc.min_det_prev;
    // roundoff level of the residual, fixed at the first Hessian
    let mut floor = 0.0;
    while r > s.tol_mech * r0 && r > floor {
        if iterations == s.max_newton {
            return Err(Error::StepRejected(format!(
                "mechanical Newton did not converge in {} iterations (residual {r:e}, initial {r0:e})",
                s.max_newton
            )));
        }
        iterations += 1;
        let hess = hessian_from_kin(model, inc, &kin)?;
        if iterations == 1 {
            floor = roundoff_floor(&hess, &grid.restrict_free(&y.values));
        }
        let (factor, mu) = model.y_chol.factor_shifted(&hess, 20)?;
        if mu > 0.0 {
            shifted += 1;
        }
        let mut dir: Vec<f64> = factor.solve(&grad).into_iter().map(|x| -x).collect();
        let mut slope = dot(&grad, &dir);
        if !(slope < 0.0) {
            dir = grad.iter().map(|x| -x).collect();
            slope = -r * r;
        }
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..=s.max_backtracks {
            let trial = grid.add_free(&y, alpha, &dir);
            let tkin = grid.kinematics(&trial);
            if min_det(&tkin) > gate {
                let jt = functional_from_kin(model, inc, &trial, &tkin);
                if jt <= j + 1e-4 * alpha * slope + 1e-14 * j.abs() {
                    min_det_iterates = min_det_iterates.min(min_det(&tkin));
                    y = trial;
                    kin = tkin;
                    j = jt;
                    accepted = true;
                    break;
                }
            }
            alpha *= 0.5;
            backtracks += 1;
        }
        if !accepted {
            return Err(Error::StepRejected(format!(
                "line search failed after {} backtracks (residual {r:e})",
                s.max_backtracks
            )));
        }
        grad = grid.restrict_free(&gradient_from_kin(model, inc, &kin)?);
        r = norm(&grad);
    }
    Ok(MechResult {
        min_det: min_det(&kin),
        min_det_iterates,
        y,
        kin,
        iterations,
        backtracks,
        residual: r,
        initial_residual: r0,
        functional: j,
        initial_functional: j0,
        shifted_iterations: shifted,
    })
}

/// `1e-14 |diag(H) y|`: below this the residual is dominated by cancellation.
pub(crate) fn roundoff_floor(hess: &crate::linalg::SymMatrix, x: &[f64]) -> f64 {
    let v: Vec<f64> = hess
        .diagonal()
        .iter()
        .zip(x)
        .map(|(h, x)| h * x.abs().max(1.0))
        .collect();
    1e-14 * norm(&v)
}

/// `M(y) = int phi(grad y) + H(grad^2 y)`, returned as the two parts.
pub fn mechanical_energy(model: &Model, kin: &Kinematics) -> (f64, f64) {
    let m = &model.material;
    let phi: Vec<f64> = kin.f.iter().map(|f| m.elastic_energy(f)).collect();
    let h: Vec<f64> = kin.g.iter().map(|g| m.hyperstress_energy(g)).collect();
    (
        model.grid.assemble_scalar(&phi),
        model.grid.assemble_scalar(&h),
    )
}

/// `DM(y)` in all coefficients (constrained ones zero).
pub fn mechanical_energy_gradient(model: &Model, kin: &Kinematics) -> Result<Vec<f64>> {
    let m = &model.material;
    let p: Vec<Tensor2> = kin
        .f
        .iter()
        .map(|f| m.elastic_stress(f))
        .collect::<Result<_>>()?;
    let h: Vec<Tensor3> = kin.g.iter().map(|g| m.hyperstress(g)).collect();
    Ok(model.grid.assemble_gradient(&p, Some(&h), None, None))
}

/// `Phi_cpl(y, theta) = int varphi(grad y, theta)` with temperatures at the quadrature points.
pub fn coupling_energy(model: &Model, kin: &Kinematics, theta_qp: &[f64]) -> f64 {
    let m = &model.material;
    let e: Vec<f64> = kin
        .f
        .iter()
        .zip(theta_qp)
        .map(|(f, t)| m.coupling_energy(f, *t))
        .collect();
    model.grid.assemble_scalar(&e)
}

/// Smallest `Lambda >= 0` with `M(y2) >= M(y1) + DM(y1)[y2 - y1] - Lambda |grad(y2 - y1)|^2`.
pub fn estimate_lambda(model: &Model, y1: &NodalField, y2: &NodalField) -> Result<f64> {
    let g = &model.grid;
    let k1 = g.kinematics(y1);
    let k2 = g.kinematics(y2);
    let gap = convexity_gap(model, &k1, &k2, y1, y2)?;
    let diff: Vec<f64> =
        k1.f.iter()
            .zip(&k2.f)
            .map(|(a, b)| b.sub(a).norm_sq())
            .collect();
    let den = g.assemble_scalar(&diff);
    if den == 0.0 {
        return Ok(0.0);
    }
    Ok((-gap / den).max(0.0))
}

/// `M(y2) - M(y1) - DM(y1)[y2 - y1]`
pub fn convexity_gap(
    model: &Model,
    k1: &Kinematics,
    k2: &Kinematics,
    y1: &NodalField,
    y2: &NodalField,
) -> Result<f64> {
    let (a1, b1) = mechanical_energy(model, k1);
    let (a2, b2) = mechanical_energy(model, k2);
    let dm = mechanical_energy_gradient(model, k1)?;
    let step: Vec<f64> = y2
        .values
        .iter()
        .zip(&y1.values)
        .map(|(a, b)| a - b)
        .collect();
    Ok((a2 + b2) - (a1 + b1) - dot(&dm, &step))
}
