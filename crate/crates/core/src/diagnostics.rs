//! Run-time certificates for a computed trajectory.
//!
//! Every step is audited against the discrete balances it must satisfy:
//!
//! * the total-energy ledger, itemized so that every defect of the scheme is
//!   visible on its own line and the remainder is pure roundoff;
//! * the mechanical energy inequality with its semiconvexity slack;
//! * entropy production and the total entropy;
//! * a lower bound for `det grad y` that follows from the energy alone, and the
//!   constant of the generalized Korn inequality;
//! * weak-form residuals on a fixed bank of smooth test functions.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Face, NodalField};
use crate::heat_step::heat_gradient;
use crate::linalg::{dot, SymMatrix};
use crate::material::MaterialModel;
use crate::mech_step::{convexity_gap, functional_gradient, load_work, mechanical_energy};
use crate::model::Model;
use crate::scheme::{heat_increment, mech_increment, Trajectory};
use crate::tensor::{Tensor2, Tensor4};

/// Temperatures at or below this are left out of entropy quotients.
pub const THETA_FLOOR: f64 = 1e-12;

/// Energies of one state.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Energies {
    /// Mechanical energy including the hyperstress part.
    pub m: f64,
    pub h: f64,
    pub phi_cpl: f64,
    /// Thermal energy `int w`.
    pub w: f64,
    /// `M + W`
    pub e: f64,
    pub entropy: f64,
    pub min_det: f64,
    pub min_theta: f64,
}

pub fn energies(model: &Model, y: &NodalField, theta: &NodalField, w: &[f64]) -> Energies {
    let g = &model.grid;
    let m = &model.material;
    let kin = g.kinematics(y);
    let th = g.scalar_at_qp(theta);
    let (phi, h) = mechanical_energy(model, &kin);
    let cpl: Vec<f64> = kin
        .f
        .iter()
        .zip(&th)
        .map(|(f, t)| m.coupling_energy(f, *t))
        .collect();
    let s: Vec<f64> = kin
        .f
        .iter()
        .zip(&th)
        .map(|(f, t)| {
            if *t > THETA_FLOOR {
                m.entropy(f, *t)
            } else {
                0.0
            }
        })
        .collect();
    let wsum = g.assemble_scalar(w);
    Energies {
        m: phi + h,
        h,
        phi_cpl: g.assemble_scalar(&cpl),
        w: wsum,
        e: phi + h + wsum,
        entropy: g.assemble_scalar(&s),
        min_det: kin.f.iter().map(|f| f.det()).fold(f64::INFINITY, f64::min),
        min_theta: theta.min(),
    }
}

/// Itemized balances of one step.
///
/// The total-energy identity reads
/// `dE = ext_power - boundary_heat - xi_gap - eps_term + coupling_mismatch
///       - convexity_gap + mech_residual + heat_residual + energy_gap_total`,
/// where the last item is what is left after all others are accounted for.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Ledger {
    pub d_e: f64,
    pub d_m: f64,
    pub d_w: f64,
    /// `<l, y^k - y^{k-1}>` with step-averaged loads.
    pub ext_power: f64,
    /// `tau int_Gamma kappa (theta^k - theta_b)`
    pub boundary_heat: f64,
    /// `tau int xi`
    pub xi_step: f64,
    /// `tau int xi_reg`
    pub xi_reg_step: f64,
    /// `tau int (xi - xi_reg) >= 0`
    pub xi_gap: f64,
    /// `eps / tau |grad y^k - grad y^{k-1}|^2`
    pub eps_term: f64,
    /// `int (d_F varphi(F^k, theta^k) - d_F varphi(F^k, theta^{k-1})) : (F^k - F^{k-1})`
    pub coupling_mismatch: f64,
    /// `int d_F varphi(F^k, theta^{k-1}) : (F^k - F^{k-1})`
    pub coupling_work: f64,
    /// `M(y^{k-1}) - M(y^k) - DM(y^k)[y^{k-1} - y^k]`
    pub convexity_gap: f64,
    /// Mechanical Euler-Lagrange residual tested with `y^k - y^{k-1}`.
    pub mech_residual: f64,
    /// Heat Euler-Lagrange residual tested with `v = 1`, times `tau`.
    pub heat_residual: f64,
    pub energy_gap_total: f64,
    /// Mechanical energy inequality: `dM + tau int xi + eps_term - ext + coupling_work`.
    pub mech_check: f64,
    /// `Lambda |grad(y^k - y^{k-1})|^2` for the semiconvexity constant of this pair.
    pub lambda_slack: f64,
    /// `|grad(y^k - y^{k-1})|^2_{L2}`
    pub grad_step_sq: f64,
    /// Mechanical-only identity residual (isothermal form).
    pub mech_gap_total: f64,
    /// `tau int (xi_reg / theta + K grad theta . grad theta / theta^2)`
    pub entropy_prod: f64,
    /// `tau int_Gamma kappa (theta_b - theta) / theta`
    pub entropy_flux: f64,
    /// Quadrature points left out of entropy quotients.
    pub entropy_excluded: usize,
    /// `J(y^{k-1}) - J(y^k)` for the incremental functional.
    pub descent: f64,
    /// Scale used for relative ledger checks.
    pub scale: f64,
}

/// Itemized ledger for step `k >= 1`.
pub fn step_ledger(model: &Model, traj: &Trajectory, k: usize) -> Result<Ledger> {
    let g = &model.grid;
    let m = &model.material;
    let rec = &traj.steps[k - 1];
    let (prev, new) = (&traj.snapshots[k - 1], &traj.snapshots[k]);
    let tau = rec.tau();
    let eps = traj.eps;
    let e0 = energies(model, &prev.y, &prev.theta, &prev.w);
    let e1 = energies(model, &new.y, &new.theta, &new.w);
    let minc = mech_increment(model, prev, rec, eps);
    let k0 = g.kinematics(&prev.y);
    let k1 = g.kinematics(&new.y);
    let dy = new.y.sub(&prev.y);
    let ext = load_work(model, &minc, &new.y) - load_work(model, &minc, &prev.y);
    let th0 = g.scalar_at_qp(&prev.theta);
    let th1 = g.scalar_at_qp(&new.theta);
    let n = g.n_qp();
    let mut xi = vec![0.0; n];
    let mut xr = vec![0.0; n];
    let mut dd = vec![0.0; n];
    let mut mism = vec![0.0; n];
    let mut cw = vec![0.0; n];
    for q in 0..n {
        let df = k1.f[q].sub(&k0.f[q]);
        xi[q] = m.dissipation_rate(&k0.f[q], &df.scale(1.0 / tau));
        xr[q] = MaterialModel::regularized_dissipation(xi[q], eps);
        dd[q] = df.norm_sq();
        if !model.isothermal {
            let s_old = m.coupling_stress(&k1.f[q], th0[q]);
            cw[q] = s_old.ddot(&df);
            mism[q] = m.coupling_stress(&k1.f[q], th1[q]).sub(&s_old).ddot(&df);
        }
    }
    let xi_step = tau * g.assemble_scalar(&xi);
    let xi_reg_step = tau * g.assemble_scalar(&xr);
    let xi_gap =
        tau * g.assemble_scalar(&xi.iter().zip(&xr).map(|(a, b)| a - b).collect::<Vec<_>>());
    let grad_step_sq = g.assemble_scalar(&dd);
    let eps_term = eps / tau * grad_step_sq;
    let coupling_work = g.assemble_scalar(&cw);
    let coupling_mismatch = g.assemble_scalar(&mism);
    let cgap = convexity_gap(model, &k1, &k0, &new.y, &prev.y)?;
    let mech_residual = dot(&functional_gradient(model, &minc, &new.y)?, &dy.values);
    let d_m = e1.m - e0.m;
    let mech_check = d_m + xi_step + eps_term - ext + coupling_work;
    let lambda_slack = (-cgap).max(0.0);
    let mech_gap_total = d_m - (ext - xi_step - eps_term - coupling_work - cgap + mech_residual);

    let (mut boundary_heat, mut heat_residual, mut entropy_prod, mut entropy_flux, mut excluded) =
        (0.0, 0.0, 0.0, 0.0, 0);
    let d_w = e1.w - e0.w;
    let mut d_e = e1.e - e0.e;
    if model.isothermal {
        // temperature is a parameter here; only the mechanical identity applies
        d_e = d_m;
    } else {
        let hinc = heat_increment(model, prev, new, rec, eps)?;
        heat_residual = tau * heat_gradient(model, &hinc, &new.theta).iter().sum::<f64>();
        let tb = g.scalar_at_bqp(&new.theta);
        let bw = g.bqp_weights();
        for i in 0..tb.len() {
            boundary_heat += tau * bw[i] * m.kappa * (tb[i] - hinc.theta_b[i]);
            if tb[i] > THETA_FLOOR {
                entropy_flux += tau * bw[i] * m.kappa * (hinc.theta_b[i] - tb[i]) / tb[i];
            }
        }
        let gr = g.scalar_grad_at_qp(&new.theta);
        let dens: Vec<f64> = (0..n)
            .map(|q| {
                let t = th1[q];
                if t <= THETA_FLOOR {
                    return f64::NAN;
                }
                let kg = hinc.conductivity[q].matvec(&gr[q]);
                let c: f64 = (0..g.d).map(|a| kg[a] * gr[q][a]).sum();
                hinc.xi_reg[q] / t + c / (t * t)
            })
            .collect();
        excluded = dens.iter().filter(|x| x.is_nan()).count();
        let dens: Vec<f64> = dens
            .into_iter()
            .map(|x| if x.is_nan() { 0.0 } else { x })
            .collect();
        entropy_prod = tau * g.assemble_scalar(&dens);
    }
    let energy_gap_total = if model.isothermal {
        mech_gap_total
    } else {
        d_e - (ext - boundary_heat - xi_gap - eps_term + coupling_mismatch - cgap
            + mech_residual
            + heat_residual)
    };
    let scale =
        e1.e.abs()
            .max(e0.e.abs())
            .max(ext.abs())
            .max(xi_step)
            .max(boundary_heat.abs());
    Ok(Ledger {
        d_e,
        d_m,
        d_w,
        ext_power: ext,
        boundary_heat,
        xi_step,
        xi_reg_step,
        xi_gap,
        eps_term,
        coupling_mismatch,
        coupling_work,
        convexity_gap: cgap,
        mech_residual,
        heat_residual,
        energy_gap_total,
        mech_check,
        lambda_slack,
        grad_step_sq,
        mech_gap_total,
        entropy_prod,
        entropy_flux,
        entropy_excluded: excluded,
        descent: rec.functional_prev - rec.functional_new,
        scale,
    })
}

// ---- determinant bound ---------------------------------------------------------

/// Quantities entering the explicit determinant lower bound.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HkCertificate {
    /// `|grad y|_{L^s} + |1/det grad y|_{L^q} + |grad^2 y|_{L^p}`
    pub c1: f64,
    /// Estimated Hoelder constant of `det grad y` with exponent `lambda`.
    pub c2: f64,
    pub c3: f64,
    pub lambda: f64,
    pub bound: f64,
    pub min_det: f64,
}

/// Explicit lower bound for `det grad y` from the energy norms.
///
/// Uses cones of opening `|S^{d-1}| / 2^d` and radius `min(L) / 2`, which fit at
/// every point of a box. The Hoelder constant is the largest difference quotient
/// over quadrature points at most two cells apart, so it is an estimate.
pub fn healey_kroemer(model: &Model, y: &NodalField) -> Result<HkCertificate> {
    let g = &model.grid;
    let m = &model.material;
    let d = g.d as f64;
    let lambda = 1.0 - d / m.p;
    if lambda * m.q <= d {
        return Err(Error::Config(vec![format!(
            "determinant bound needs lambda q > d with lambda = 1 - d/p; got {} <= {d}",
            lambda * m.q
        )]));
    }
    let kin = g.kinematics(y);
    let det: Vec<f64> = kin.f.iter().map(|f| f.det()).collect();
    let min_det = det.iter().copied().fold(f64::INFINITY, f64::min);
    if min_det <= 0.0 {
        return Err(Error::Inverted { det: min_det });
    }
    let ls = g
        .assemble_scalar(&kin.f.iter().map(|f| f.norm().powf(m.s)).collect::<Vec<_>>())
        .powf(1.0 / m.s);
    let lq = g
        .assemble_scalar(&det.iter().map(|j| j.powf(-m.q)).collect::<Vec<_>>())
        .powf(1.0 / m.q);
    let lp = g
        .assemble_scalar(&kin.g.iter().map(|t| t.norm().powf(m.p)).collect::<Vec<_>>())
        .powf(1.0 / m.p);
    let c1 = ls + lq + lp;
    let c2 = holder_constant(model, &det, lambda);
    let sphere = match g.d {
        2 => 2.0 * std::f64::consts::PI,
        _ => 4.0 * std::f64::consts::PI,
    };
    let alpha_star = sphere / 2f64.powi(g.d as i32);
    let r_star = 0.5 * g.spec.lengths.iter().copied().fold(f64::INFINITY, f64::min);
    let radial = if c2 > 0.0 {
        r_star.powf(d).min(c2.powf(-d / lambda))
    } else {
        r_star.powf(d)
    };
    let c3 = alpha_star / (2f64.powf(m.q) * d) * radial;
    let bound =
        (c3.powf(1.0 / m.q) / c1).min((c3 / c1.powf(m.q)).powf(lambda / (lambda * m.q - d)));
    Ok(HkCertificate {
        c1,
        c2,
        c3,
        lambda,
        bound,
        min_det,
    })
}

fn holder_constant(model: &Model, det: &[f64], lambda: f64) -> f64 {
    let g = &model.grid;
    let pos = g.qp_positions();
    let nq = g.n_qp_cell;
    let cells: Vec<[usize; 3]> = (0..g.n_cells)
        .map(|c| {
            let mut m = [0; 3];
            let mut r = c;
            for a in 0..g.d {
                m[a] = r % g.n[a];
                r /= g.n[a];
            }
            m
        })
        .collect();
    (0..g.n_cells)
        .into_par_iter()
        .map(|c| {
            let mc = cells[c];
            let mut best: f64 = 0.0;
            for c2 in 0..g.n_cells {
                let near = (0..g.d).all(|a| mc[a].abs_diff(cells[c2][a]) <= 2);
                if !near || c2 < c {
                    continue;
                }
                for i in c * nq..(c + 1) * nq {
                    for j in c2 * nq..(c2 + 1) * nq {
                        if j <= i {
                            continue;
                        }
                        let r: f64 = (0..g.d)
                            .map(|a| (pos[i][a] - pos[j][a]).powi(2))
                            .sum::<f64>()
                            .sqrt();
                        best = best.max((det[i] - det[j]).abs() / r.powf(lambda));
                    }
                }
            }
            best
        })
        .reduce(|| 0.0, f64::max)
}

// ---- Korn constant -------------------------------------------------------------

/// Smallest `c` with `int |F^T grad v + grad v^T F|^2 >= c (|grad v|^2 + mass |v|^2)`
/// over discrete `v` vanishing on the Dirichlet faces.
pub fn korn_constant_with(model: &Model, f: &[Tensor2], mass: f64) -> Result<f64> {
    let g = &model.grid;
    let d = g.d;
    let unit = MaterialModel {
        nu: 1.0,
        ..model.material.clone()
    };
    let a_tan: Vec<Tensor4> = f.par_iter().map(|ff| unit.viscous_tangent(ff)).collect();
    let a = g.assemble_hessian(&a_tan, None, None);
    let mut id = Tensor4::zeros(d);
    id.add_identity(1.0);
    let b = g.assemble_hessian(&vec![id; g.n_qp()], None, Some(&vec![mass; g.n_qp()]));
    smallest_generalized_eigenvalue(model, &a, &b)
}

/// Korn constant with the full `H^1` norm.
pub fn korn_constant(model: &Model, f: &[Tensor2]) -> Result<f64> {
    korn_constant_with(model, f, 1.0)
}

/// Block inverse iteration with Rayleigh-Ritz for the smallest eigenvalue of `A x = l B x`.
fn smallest_generalized_eigenvalue(model: &Model, a: &SymMatrix, b: &SymMatrix) -> Result<f64> {
    let n = a.n();
    let factor = model.y_chol.factor(a)?;
    let p = 6.min(n);
    let mut x: Vec<Vec<f64>> = (0..p)
        .map(|j| {
            (0..n)
                .map(|i| ((i * (j + 1)) as f64 * 0.618_033_988_749_895 + j as f64).sin() + 0.1)
                .collect()
        })
        .collect();
    let mut last = f64::INFINITY;
    for _ in 0..200 {
        let y: Vec<Vec<f64>> = x.par_iter().map(|xi| factor.solve(&b.matvec(xi))).collect();
        let ay: Vec<Vec<f64>> = y.iter().map(|v| a.matvec(v)).collect();
        let by: Vec<Vec<f64>> = y.iter().map(|v| b.matvec(v)).collect();
        let at = DMatrix::from_fn(p, p, |i, j| dot(&y[i], &ay[j]));
        let bt = DMatrix::from_fn(p, p, |i, j| dot(&y[i], &by[j]));
        let at = 0.5 * (&at + at.transpose());
        let bt = 0.5 * (&bt + bt.transpose());
        let l = bt
            .clone()
            .cholesky()
            .ok_or(Error::NotPositiveDefinite {
                what: "Ritz mass matrix",
            })?
            .l();
        let linv = l.clone().try_inverse().ok_or(Error::NotPositiveDefinite {
            what: "Ritz mass matrix",
        })?;
        let red = &linv * at * linv.transpose();
        let eig = SymmetricEigen::new(0.5 * (&red + red.transpose()));
        let mut order: Vec<usize> = (0..p).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
        let coef = linv.transpose() * &eig.eigenvectors;
        x = order
            .iter()
            .map(|&c| {
                let mut v = vec![0.0; n];
                for (k, yk) in y.iter().enumerate() {
                    let s = coef[(k, c)];
                    v.iter_mut().zip(yk).for_each(|(vi, yi)| *vi += s * yi);
                }
                v
            })
            .collect();
        let lam = eig.eigenvalues[order[0]];
        if (lam - last).abs() <= 1e-14 * lam.abs() {
            return Ok(lam);
        }
        last = lam;
    }
    Ok(last)
}

// ---- a-priori monitors ------------------------------------------------------------

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MonitorRow {
    pub step: usize,
    pub t: f64,
    /// `|grad y|_{L^s}`
    pub grad_y_ls: f64,
    /// `|grad^2 y|_{L^p}`
    pub hess_y_lp: f64,
    /// `|grad y_dot|_{L2}` on the step ending here.
    pub rate_l2: f64,
    pub min_det: f64,
    pub theta_l2: f64,
    pub theta_h1: f64,
    /// `|w_dot|` in the dual norm of `H^1` over the temperature space.
    pub wdot_dual: f64,
}

pub fn apriori_monitor(model: &Model, traj: &Trajectory) -> Result<Vec<MonitorRow>> {
    let g = &model.grid;
    let m = &model.material;
    let ones = vec![1.0; g.n_qp()];
    let h1 = g.assemble_q1_matrix(&ones, Some(&vec![Tensor2::identity(g.d); g.n_qp()]), None);
    let h1f = model.t_chol.factor(&h1)?;
    let kins: Vec<_> = traj
        .snapshots
        .par_iter()
        .map(|s| g.kinematics(&s.y))
        .collect();
    let rows = (0..traj.snapshots.len())
        .map(|k| {
            let s = &traj.snapshots[k];
            let kin = &kins[k];
            let th = g.scalar_at_qp(&s.theta);
            let gr = g.scalar_grad_at_qp(&s.theta);
            let norm_p = |v: Vec<f64>, p: f64| g.assemble_scalar(&v).powf(1.0 / p);
            let mut row = MonitorRow {
                step: k,
                t: s.t,
                grad_y_ls: norm_p(kin.f.iter().map(|f| f.norm().powf(m.s)).collect(), m.s),
                hess_y_lp: norm_p(kin.g.iter().map(|t| t.norm().powf(m.p)).collect(), m.p),
                min_det: kin.f.iter().map(|f| f.det()).fold(f64::INFINITY, f64::min),
                theta_l2: norm_p(th.iter().map(|t| t * t).collect(), 2.0),
                theta_h1: norm_p(
                    th.iter()
                        .zip(&gr)
                        .map(|(t, v)| t * t + v.iter().map(|x| x * x).sum::<f64>())
                        .collect(),
                    2.0,
                ),
                ..MonitorRow::default()
            };
            if k > 0 {
                let tau = traj.steps[k - 1].tau();
                let prev = &kins[k - 1];
                row.rate_l2 = norm_p(
                    kin.f
                        .iter()
                        .zip(&prev.f)
                        .map(|(a, b)| a.sub(b).norm_sq() / (tau * tau))
                        .collect(),
                    2.0,
                );
                let wdot: Vec<f64> =
                    s.w.iter()
                        .zip(&traj.snapshots[k - 1].w)
                        .map(|(a, b)| (a - b) / tau)
                        .collect();
                let r = g.assemble_q1_vector(&wdot, None, None);
                row.wdot_dual = dot(&r, &h1f.solve(&r)).max(0.0).sqrt();
            }
            row
        })
        .collect();
    Ok(rows)
}

// ---- weak residuals -----------------------------------------------------------------

/// A separable smooth test field `rho(t) prod_a phi_a(x_a)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestField {
    /// Wave numbers per axis.
    pub k: [f64; 3],
    pub phase: [f64; 3],
    /// Component carrying the field (mechanical tests only).
    pub comp: usize,
    /// Temporal frequency.
    pub omega: f64,
}

/// The deterministic bank: ten mechanical and ten thermal test fields.
pub fn test_bank(d: usize) -> (Vec<TestField>, Vec<TestField>) {
    let mech = (0..10)
        .map(|i| TestField {
            k: [
                0.5 + (i % 3) as f64,
                0.5 + (i / 3 % 3) as f64,
                0.5 + (i % 2) as f64,
            ],
            phase: [0.1 * i as f64, 0.3 + 0.05 * i as f64, 0.2],
            comp: i % d,
            omega: (i % 4) as f64,
        })
        .collect();
    let heat = (0..10)
        .map(|i| TestField {
            k: [(i % 3) as f64, (i / 3 % 3) as f64, (i % 2) as f64],
            phase: [0.2 * i as f64, 0.1, 0.4],
            comp: 0,
            omega: (i % 3) as f64,
        })
        .collect();
    (mech, heat)
}

/// [`test_bank`] with phases shifted by a seeded generator; seed 0 is the plain bank.
pub fn seeded_test_bank(d: usize, seed: u64) -> (Vec<TestField>, Vec<TestField>) {
    let (mut mech, mut heat) = test_bank(d);
    if seed != 0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for t in mech.iter_mut().chain(heat.iter_mut()) {
            for p in &mut t.phase {
                *p += rng.gen_range(0.0..std::f64::consts::PI);
            }
        }
    }
    (mech, heat)
}

impl TestField {
    /// `(phi(s), phi'(s))` on axis `a` with the cut-off that vanishes on `dirichlet` faces.
    fn axis(&self, a: usize, s: f64, len: f64, dirichlet: &[Face]) -> (f64, f64) {
        let lo = dirichlet.contains(&Face::new(a, false));
        let hi = dirichlet.contains(&Face::new(a, true));
        let (b, db) = match (lo, hi) {
            (true, true) => (s * (len - s), len - 2.0 * s),
            (true, false) => (s, 1.0),
            (false, true) => (len - s, -1.0),
            (false, false) => (1.0, 0.0),
        };
        let w = std::f64::consts::PI * self.k[a] / len;
        let (c, dc) = (
            (w * s + self.phase[a]).cos(),
            -w * (w * s + self.phase[a]).sin(),
        );
        (b * c, db * c + b * dc)
    }

    /// Spatial part as a Hermite deformation field.
    fn hermite(&self, model: &Model, dirichlet: &[Face]) -> NodalField {
        let g = &model.grid;
        let d = g.d;
        g.interpolate_deformation(|x, m| {
            let mut v = 1.0;
            for a in 0..d {
                let (p, dp) = self.axis(a, x[a], g.spec.lengths[a], dirichlet);
                v *= if m >> a & 1 == 1 { dp } else { p };
            }
            let mut out = [0.0; 3];
            out[self.comp] = v;
            out
        })
    }

    /// Spatial part as a Q1 temperature field.
    fn nodal(&self, model: &Model) -> NodalField {
        let g = &model.grid;
        g.interpolate_scalar(|x| {
            (0..g.d)
                .map(|a| self.axis(a, x[a], g.spec.lengths[a], &[]).0)
                .product()
        })
    }

    fn rho(&self, t: f64, tf: f64) -> f64 {
        (self.omega * std::f64::consts::PI * t / tf).cos()
    }

    /// Temporal factor vanishing at the final time, and its derivative.
    fn rho_heat(&self, t: f64, tf: f64) -> (f64, f64) {
        let c = self.rho(t, tf);
        let dc = -self.omega * std::f64::consts::PI / tf
            * (self.omega * std::f64::consts::PI * t / tf).sin();
        let u = (tf - t) / tf;
        (u * c, -c / tf + u * dc)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeakResiduals {
    pub mech: Vec<f64>,
    pub heat: Vec<f64>,
    /// Euclidean norms over the bank.
    pub mech_norm: f64,
    pub heat_norm: f64,
}

const GL5_X: [f64; 5] = [
    -0.906_179_845_938_664,
    -0.538_469_310_105_683_1,
    0.0,
    0.538_469_310_105_683_1,
    0.906_179_845_938_664,
];
const GL5_W: [f64; 5] = [
    0.236_926_885_056_189_1,
    0.478_628_670_499_366_5,
    0.568_888_888_888_888_9,
    0.478_628_670_499_366_5,
    0.236_926_885_056_189_1,
];

/// Residuals of the regularized weak formulation on the affine interpolants.
///
/// Mechanical tests are Hermite interpolants vanishing on the Dirichlet faces and
/// thermal tests are Q1 interpolants vanishing at the final time, so both belong
/// to the discrete spaces and the residuals measure the time discretization only.
pub fn weak_residuals(model: &Model, traj: &Trajectory) -> Result<WeakResiduals> {
    weak_residuals_with(model, traj, &test_bank(model.grid.d))
}

/// Weak residuals against an explicit `(mechanical, thermal)` test bank.
pub fn weak_residuals_with(
    model: &Model,
    traj: &Trajectory,
    bank: &(Vec<TestField>, Vec<TestField>),
) -> Result<WeakResiduals> {
    let g = &model.grid;
    let m = &model.material;
    let sc = &traj.scenario;
    let tf = traj.t_final();
    let eps = traj.eps;
    let (mb, hb) = bank;
    let zs: Vec<NodalField> = mb
        .iter()
        .map(|z| z.hermite(model, &sc.grid.dirichlet))
        .collect();
    let vs: Vec<NodalField> = hb.iter().map(|v| v.nodal(model)).collect();
    let kins: Vec<_> = traj
        .snapshots
        .par_iter()
        .map(|s| g.kinematics(&s.y))
        .collect();
    let ths: Vec<Vec<f64>> = traj
        .snapshots
        .iter()
        .map(|s| g.scalar_at_qp(&s.theta))
        .collect();
    let thb: Vec<Vec<f64>> = traj
        .snapshots
        .iter()
        .map(|s| g.scalar_at_bqp(&s.theta))
        .collect();
    let grs: Vec<Vec<[f64; 3]>> = traj
        .snapshots
        .iter()
        .map(|s| g.scalar_grad_at_qp(&s.theta))
        .collect();
    let bqp = g.bqp_info();
    // 5-point Gauss in time keeps the quadrature error of the oscillating tests below the audit level
    let gauss: [(f64, f64); 5] = std::array::from_fn(|i| (0.5 * (1.0 + GL5_X[i]), 0.5 * GL5_W[i]));
    let per_step: Vec<(Vec<f64>, Vec<f64>)> = (1..traj.snapshots.len())
        .into_par_iter()
        .map(|k| -> Result<(Vec<f64>, Vec<f64>)> {
            let (t0, t1) = (traj.snapshots[k - 1].t, traj.snapshots[k].t);
            let tau = t1 - t0;
            let (fa, fb) = (&kins[k - 1], &kins[k]);
            let mut rm = vec![0.0; zs.len()];
            let mut rh = vec![0.0; vs.len()];
            for &(s, wt) in &gauss {
                let t = t0 + s * tau;
                let n = g.n_qp();
                let mut stress = Vec::with_capacity(n);
                let mut hyper = Vec::with_capacity(n);
                let mut a_heat = Vec::with_capacity(n);
                let mut b_heat = Vec::with_capacity(n);
                for q in 0..n {
                    let f = fa.f[q].scale(1.0 - s).axpy(s, &fb.f[q]);
                    let gg = fa.g[q].scale(1.0 - s).axpy(s, &fb.g[q]);
                    let fdot = fb.f[q].sub(&fa.f[q]).scale(1.0 / tau);
                    let th = (1.0 - s) * ths[k - 1][q] + s * ths[k][q];
                    let mut p = m.elastic_stress(&f)?;
                    p = p.add(&m.viscous_stress(&f, &fdot)).axpy(eps, &fdot);
                    if !model.isothermal {
                        p = p.add(&m.coupling_stress(&f, th));
                        let gr: [f64; 3] = std::array::from_fn(|a| {
                            (1.0 - s) * grs[k - 1][q][a] + s * grs[k][q][a]
                        });
                        let kg = m.pulled_back_conductivity(&f, th)?.matvec(&gr);
                        let xi = MaterialModel::regularized_dissipation(
                            m.dissipation_rate(&f, &fdot),
                            eps,
                        );
                        let w = (1.0 - s) * traj.snapshots[k - 1].w[q] + s * traj.snapshots[k].w[q];
                        a_heat.push((xi + m.coupling_stress(&f, th).ddot(&fdot), w));
                        b_heat.push(kg);
                    }
                    stress.push(p);
                    hyper.push(m.hyperstress(&gg));
                }
                let bulk = vec![sc.loads.bulk_at(t); n];
                let trac: Vec<[f64; 3]> = bqp
                    .iter()
                    .map(|(face, _, _)| sc.loads.traction_at(*face, t))
                    .collect();
                let r = g.assemble_gradient(&stress, Some(&hyper), Some(&bulk), Some(&trac));
                for (i, (z, zf)) in zs.iter().zip(mb).enumerate() {
                    rm[i] += tau * wt * zf.rho(t, tf) * dot(&r, &z.values);
                }
                if !model.isothermal {
                    let tbv = sc.loads.theta_b_at(t, eps);
                    let robin: Vec<f64> = (0..bqp.len())
                        .map(|b| m.kappa * ((1.0 - s) * thb[k - 1][b] + s * thb[k][b] - tbv))
                        .collect();
                    for (j, (v, vf)) in vs.iter().zip(hb).enumerate() {
                        let (rho, drho) = vf.rho_heat(t, tf);
                        let a: Vec<f64> = a_heat
                            .iter()
                            .map(|(src, w)| -rho * src - drho * w)
                            .collect();
                        let bb: Vec<[f64; 3]> =
                            b_heat.iter().map(|kg| kg.map(|x| rho * x)).collect();
                        let rob: Vec<f64> = robin.iter().map(|x| rho * x).collect();
                        let rv = g.assemble_q1_vector(&a, Some(&bb), Some(&rob));
                        rh[j] += tau * wt * dot(&rv, &v.values);
                    }
                }
            }
            Ok((rm, rh))
        })
        .collect::<Result<_>>()?;
    let mut mech = vec![0.0; zs.len()];
    let mut heat = vec![0.0; vs.len()];
    for (rm, rh) in &per_step {
        mech.iter_mut().zip(rm).for_each(|(a, b)| *a += b);
        heat.iter_mut().zip(rh).for_each(|(a, b)| *a += b);
    }
    if !model.isothermal {
        // initial enthalpy term
        let w0 = &traj.snapshots[0].w;
        for (j, (v, vf)) in vs.iter().zip(hb).enumerate() {
            let (rho0, _) = vf.rho_heat(0.0, tf);
            let a: Vec<f64> = w0.iter().map(|w| rho0 * w).collect();
            heat[j] -= dot(&g.assemble_q1_vector(&a, None, None), &v.values);
        }
    }
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    Ok(WeakResiduals {
        mech_norm: norm(&mech),
        heat_norm: norm(&heat),
        mech,
        heat,
    })
}

// ---- per-step rows --------------------------------------------------------------------

/// One row of the time series.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    pub step: usize,
    pub t: f64,
    pub energies: Energies,
    pub ledger: Ledger,
    pub hk: Option<HkCertificate>,
    pub korn: Option<f64>,
    /// Relative solver residuals of the step.
    pub mech_residual: f64,
    pub heat_residual: f64,
    /// Largest `|w - w(grad y, theta)|` over quadrature points.
    pub w_consistency: f64,
    /// Largest amount removed by the temperature clamp.
    pub clamped: f64,
}

/// Which expensive certificates to compute.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagOptions {
    pub hk: bool,
    /// Korn constant on every `korn_every`-th snapshot; zero disables it.
    pub korn_every: usize,
}

impl Default for DiagOptions {
    fn default() -> Self {
        Self {
            hk: true,
            korn_every: 10,
        }
    }
}

pub fn step_diagnostics(
    model: &Model,
    traj: &Trajectory,
    k: usize,
    opts: &DiagOptions,
) -> Result<StepDiagnostics> {
    let g = &model.grid;
    let s = &traj.snapshots[k];
    let energies = energies(model, &s.y, &s.theta, &s.w);
    let ledger = if k > 0 {
        step_ledger(model, traj, k)?
    } else {
        Ledger::default()
    };
    let hk = if opts.hk {
        Some(healey_kroemer(model, &s.y)?)
    } else {
        None
    };
    let korn = if opts.korn_every > 0 && k % opts.korn_every == 0 {
        Some(korn_constant(model, &g.kinematics(&s.y).f)?)
    } else {
        None
    };
    let wc = crate::scheme::enthalpy_field(model, &s.y, &s.theta);
    let w_consistency = wc
        .iter()
        .zip(&s.w)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let (mech_residual, heat_residual, clamped) = if k > 0 {
        let r = &traj.steps[k - 1];
        let rel = |a: f64, b: f64| if b > 0.0 { a / b } else { a };
        (
            rel(r.mech_residual, r.mech_initial_residual),
            rel(r.heat_residual, r.heat_initial_residual),
            r.clamped,
        )
    } else {
        (0.0, 0.0, 0.0)
    };
    Ok(StepDiagnostics {
        step: k,
        t: s.t,
        energies,
        ledger,
        hk,
        korn,
        mech_residual,
        heat_residual,
        w_consistency,
        clamped,
    })
}

pub fn run_diagnostics(
    model: &Model,
    traj: &Trajectory,
    opts: &DiagOptions,
) -> Result<Vec<StepDiagnostics>> {
    (0..traj.snapshots.len())
        .into_par_iter()
        .map(|k| step_diagnostics(model, traj, k, opts))
        .collect()
}

/// Tolerances of the run-level certificates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertTolerances {
    pub ledger_rel: f64,
    pub theta_neg: f64,
    pub entropy_step: f64,
    pub w_consistency: f64,
}

impl Default for CertTolerances {
    fn default() -> Self {
        Self {
            ledger_rel: 1e-8,
            theta_neg: 1e-10,
            entropy_step: 1e-9,
            w_consistency: 1e-12,
        }
    }
}

/// Outcome of one run-level certificate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub name: String,
    pub passed: bool,
    /// Worst value observed.
    pub worst: f64,
    pub detail: String,
}

/// Checks every enabled certificate over the time series.
pub fn certificates(rows: &[StepDiagnostics], tol: &CertTolerances) -> Vec<Certificate> {
    let steps = || rows.iter().filter(|r| r.step > 0);
    let mut out = Vec::new();
    let mut push = |name: &str, passed: bool, worst: f64, detail: String| {
        out.push(Certificate {
            name: name.into(),
            passed,
            worst,
            detail,
        })
    };
    let worst_descent = steps()
        .map(|r| r.ledger.descent)
        .fold(f64::INFINITY, f64::min);
    push(
        "descent",
        steps().all(|r| r.ledger.descent >= 0.0),
        worst_descent,
        "J(y^{k-1}) - J(y^k) >= 0".into(),
    );
    let ledger = steps()
        .map(|r| r.ledger.energy_gap_total.abs() / r.ledger.scale.max(f64::MIN_POSITIVE))
        .fold(0.0, f64::max);
    push(
        "energy_ledger",
        ledger <= tol.ledger_rel,
        ledger,
        format!("relative remainder <= {:e}", tol.ledger_rel),
    );
    let xi_gap = steps()
        .map(|r| r.ledger.xi_gap)
        .fold(f64::INFINITY, f64::min);
    push(
        "xi_cap",
        steps().all(|r| r.ledger.xi_gap >= 0.0),
        xi_gap,
        "tau int (xi - xi_reg) >= 0".into(),
    );
    let min_theta = rows
        .iter()
        .map(|r| r.energies.min_theta)
        .fold(f64::INFINITY, f64::min);
    push(
        "positivity",
        min_theta >= -tol.theta_neg,
        min_theta,
        format!("min theta >= -{:e}", tol.theta_neg),
    );
    let min_det = rows
        .iter()
        .map(|r| r.energies.min_det)
        .fold(f64::INFINITY, f64::min);
    push(
        "invertibility",
        min_det > 0.0,
        min_det,
        "min det grad y > 0".into(),
    );
    if rows.iter().any(|r| r.hk.is_some()) {
        let ratio = rows
            .iter()
            .filter_map(|r| r.hk.map(|h| h.bound / h.min_det))
            .fold(0.0, f64::max);
        push(
            "hk_bound",
            ratio <= 1.0,
            ratio,
            "bound / min det <= 1".into(),
        );
    }
    let ent = steps()
        .map(|r| r.ledger.entropy_prod)
        .fold(f64::INFINITY, f64::min);
    push(
        "entropy_production",
        steps().all(|r| r.ledger.entropy_prod >= 0.0),
        ent,
        "production >= 0".into(),
    );
    let wc = rows.iter().map(|r| r.w_consistency).fold(0.0, f64::max);
    push(
        "enthalpy_consistency",
        wc <= tol.w_consistency,
        wc,
        format!("|w - w(F, theta)| <= {:e}", tol.w_consistency),
    );
    if rows.iter().any(|r| r.korn.is_some()) {
        let k = rows
            .iter()
            .filter_map(|r| r.korn)
            .fold(f64::INFINITY, f64::min);
        push("korn", k > 0.0, k, "Korn constant > 0".into());
    }
    out
}

/// Total-entropy increments between consecutive snapshots.
pub fn entropy_increments(rows: &[StepDiagnostics]) -> Vec<f64> {
    rows.windows(2)
        .map(|w| w[1].energies.entropy - w[0].energies.entropy)
        .collect()
}
