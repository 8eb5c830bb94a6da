//! The staggered time loop.
//!
//! Each step first solves the mechanical problem with the previous temperature
//! frozen, then the heat problem with the new deformation. Loads are averaged over
//! the step; the boundary and initial temperatures are capped as `x / (1 + eps x)`.

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Face, GridSpec, NodalField};
use crate::heat_step::{solve_heat, HeatIncrement};
use crate::material::MaterialModel;
use crate::mech_step::{solve_mech, MechIncrement};
use crate::model::{Model, SolverSettings};
use crate::tensor::Tensor2;

const GL4_X: [f64; 4] = [
    -0.861_136_311_594_052_6,
    -0.339_981_043_584_856_3,
    0.339_981_043_584_856_3,
    0.861_136_311_594_052_6,
];
const GL4_W: [f64; 4] = [
    0.347_854_845_137_453_9,
    0.652_145_154_862_546_1,
    0.652_145_154_862_546_1,
    0.347_854_845_137_453_9,
];

fn smoothstep(u: f64) -> f64 {
    let u = u.clamp(0.0, 1.0);
    u * u * (3.0 - 2.0 * u)
}

/// Scalar time modulation of a load.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Profile {
    Constant,
    /// `C^1` ramp from 0 to 1 on `[t_on, t_on + t_ramp]`, held, then ramped back
    /// down from `t_off` if given.
    Pulse {
        t_on: f64,
        t_ramp: f64,
        t_off: Option<f64>,
    },
    Sine {
        period: f64,
    },
    /// Piecewise linear through `(t, value)` pairs, constant outside.
    Table {
        points: Vec<[f64; 2]>,
    },
}

impl Profile {
    pub fn value(&self, t: f64) -> f64 {
        match self {
            Profile::Constant => 1.0,
            Profile::Pulse {
                t_on,
                t_ramp,
                t_off,
            } => {
                let up = smoothstep((t - t_on) / t_ramp);
                let down = t_off.map_or(0.0, |off| smoothstep((t - off) / t_ramp));
                up - down
            }
            Profile::Sine { period } => (2.0 * std::f64::consts::PI * t / period).sin(),
            Profile::Table { points } => {
                let n = points.len();
                if n == 0 {
                    return 0.0;
                }
                if t <= points[0][0] {
                    return points[0][1];
                }
                if t >= points[n - 1][0] {
                    return points[n - 1][1];
                }
                let k = points.partition_point(|p| p[0] <= t);
                let (a, b) = (points[k - 1], points[k]);
                a[1] + (b[1] - a[1]) * (t - a[0]) / (b[0] - a[0])
            }
        }
    }

    /// Mean value over `[t0, t1]`: trapezoid-exact for tables, 4-point Gauss otherwise.
    pub fn average(&self, t0: f64, t1: f64) -> f64 {
        self.average_of(t0, t1, |v| v)
    }

    /// Mean of `g(value(t))` over `[t0, t1]`.
    pub fn average_of(&self, t0: f64, t1: f64, g: impl Fn(f64) -> f64) -> f64 {
        match self {
            Profile::Table { points } => {
                // the table breakpoints inside the interval split it into linear pieces
                let mut ts = vec![t0];
                ts.extend(points.iter().map(|p| p[0]).filter(|&s| s > t0 && s < t1));
                ts.push(t1);
                let mut acc = 0.0;
                for w in ts.windows(2) {
                    acc += gauss_mean(w[0], w[1], |t| g(self.value(t))) * (w[1] - w[0]);
                }
                acc / (t1 - t0)
            }
            _ => gauss_mean(t0, t1, |t| g(self.value(t))),
        }
    }
}

fn gauss_mean(t0: f64, t1: f64, f: impl Fn(f64) -> f64) -> f64 {
    let (m, h) = (0.5 * (t0 + t1), 0.5 * (t1 - t0));
    0.5 * GL4_X
        .iter()
        .zip(&GL4_W)
        .map(|(x, w)| w * f(m + h * x))
        .sum::<f64>()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Traction {
    pub face: Face,
    pub value: [f64; 3],
    pub profile: Profile,
}

/// Spatially uniform loads with time profiles.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Loads {
    pub bulk: [f64; 3],
    pub bulk_profile: Profile,
    pub tractions: Vec<Traction>,
    pub theta_b: f64,
    pub theta_b_profile: Profile,
}

impl Default for Loads {
    fn default() -> Self {
        Self {
            bulk: [0.0; 3],
            bulk_profile: Profile::Constant,
            tractions: Vec::new(),
            theta_b: 0.0,
            theta_b_profile: Profile::Constant,
        }
    }
}

fn scaled(v: &[f64; 3], s: f64) -> [f64; 3] {
    [v[0] * s, v[1] * s, v[2] * s]
}

/// `x / (1 + eps x)`
pub fn cap(x: f64, eps: f64) -> f64 {
    x / (1.0 + eps * x)
}

impl Loads {
    pub fn bulk_at(&self, t: f64) -> [f64; 3] {
        scaled(&self.bulk, self.bulk_profile.value(t))
    }

    pub fn traction_at(&self, face: Face, t: f64) -> [f64; 3] {
        let mut out = [0.0; 3];
        for tr in self.tractions.iter().filter(|tr| tr.face == face) {
            let v = scaled(&tr.value, tr.profile.value(t));
            (0..3).for_each(|i| out[i] += v[i]);
        }
        out
    }

    pub fn theta_b_at(&self, t: f64, eps: f64) -> f64 {
        cap(self.theta_b * self.theta_b_profile.value(t), eps)
    }

    /// Loads averaged over one step.
    pub fn averaged(&self, t0: f64, t1: f64, eps: f64) -> StepLoads {
        let tractions = self
            .tractions
            .iter()
            .map(|tr| (tr.face, scaled(&tr.value, tr.profile.average(t0, t1))))
            .collect();
        let tb = self.theta_b;
        StepLoads {
            bulk: scaled(&self.bulk, self.bulk_profile.average(t0, t1)),
            tractions,
            theta_b: self
                .theta_b_profile
                .average_of(t0, t1, |v| cap(tb * v, eps)),
        }
    }
}

/// Step-averaged loads.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLoads {
    pub bulk: [f64; 3],
    pub tractions: Vec<(Face, [f64; 3])>,
    /// Regularized boundary temperature.
    pub theta_b: f64,
}

impl StepLoads {
    pub fn bulk_qp(&self, model: &Model) -> Vec<[f64; 3]> {
        vec![self.bulk; model.grid.n_qp()]
    }

    pub fn traction_bqp(&self, model: &Model) -> Vec<[f64; 3]> {
        model
            .grid
            .bqp_info()
            .iter()
            .map(|(face, _, _)| {
                let mut v = [0.0; 3];
                for (_, t) in self.tractions.iter().filter(|(f, _)| f == face) {
                    (0..3).for_each(|i| v[i] += t[i]);
                }
                v
            })
            .collect()
    }

    pub fn theta_b_bqp(&self, model: &Model) -> Vec<f64> {
        vec![self.theta_b; model.grid.n_bqp()]
    }
}

/// Everything needed to run the scheme.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub grid: GridSpec,
    pub material: MaterialModel,
    pub solver: SolverSettings,
    pub t_final: f64,
    pub steps: usize,
    pub eps: f64,
    /// Uniform initial temperature; the initial deformation is the identity.
    pub theta0: f64,
    pub loads: Loads,
    pub isothermal: bool,
}

impl Scenario {
    pub fn tau(&self) -> f64 {
        self.t_final / self.steps as f64
    }

    pub fn model(&self) -> Result<Model> {
        let v = self.violations();
        if !v.is_empty() {
            return Err(Error::Config(v));
        }
        Model::new(
            self.grid.clone(),
            self.material.clone(),
            self.solver.clone(),
            self.isothermal,
        )
    }

    pub fn violations(&self) -> Vec<String> {
        let mut v = self.grid.violations();
        v.extend(self.material.violations());
        if self.grid.d != self.material.d {
            v.push(format!(
                "grid has d = {} but material has d = {}",
                self.grid.d, self.material.d
            ));
        }
        if !(self.t_final > 0.0) {
            v.push("final time must be positive".into());
        }
        if self.steps == 0 {
            v.push("the number of steps must be positive".into());
        }
        if !(self.eps >= 0.0) {
            v.push("eps must be non-negative".into());
        }
        if !(self.theta0 >= 0.0) {
            v.push("initial temperature must be non-negative".into());
        }
        if !(self.loads.theta_b >= 0.0) {
            v.push("boundary temperature must be non-negative".into());
        }
        if let Profile::Table { points } = &self.loads.theta_b_profile {
            if points.iter().any(|p| p[1] < 0.0) {
                v.push("boundary temperature profile must be non-negative".into());
            }
        }
        if matches!(self.loads.theta_b_profile, Profile::Sine { .. }) {
            v.push("a sine profile makes the boundary temperature negative".into());
        }
        for tr in &self.loads.tractions {
            if self.grid.dirichlet.contains(&tr.face) {
                v.push(format!("traction on Dirichlet face {}", tr.face.name()));
            }
            if tr.face.axis >= self.grid.d {
                v.push(format!(
                    "traction face {} outside the grid dimension",
                    tr.face.name()
                ));
            }
        }
        v
    }

    /// Load-free equilibrium: identity deformation at uniform temperature.
    pub fn steady(n: usize) -> Self {
        let material = MaterialModel::default_for_dim(2);
        Self {
            name: "steady".into(),
            grid: GridSpec::square(n),
            material,
            solver: SolverSettings::default(),
            t_final: 1.0,
            steps: 100,
            eps: 1e-2,
            theta0: 1.0,
            loads: Loads {
                theta_b: 1.0,
                ..Loads::default()
            },
            isothermal: false,
        }
    }

    /// Vertical traction on the free end, ramped up and held.
    pub fn shear_pulse(n: usize) -> Self {
        let mut s = Self::steady(n);
        s.name = "shear_pulse".into();
        s.steps = 50;
        s.loads.tractions = vec![Traction {
            face: Face::new(0, true),
            value: [0.0, 0.5, 0.0],
            profile: Profile::Pulse {
                t_on: 0.0,
                t_ramp: 0.4,
                t_off: None,
            },
        }];
        s
    }

    /// The shear pulse with an almost insulating boundary.
    pub fn insulated_pulse(n: usize) -> Self {
        let mut s = Self::shear_pulse(n);
        s.name = "insulated_pulse".into();
        s.material.kappa = 1e-8;
        s
    }

    /// Constant tension without thermal coupling and without the eps-viscosity.
    pub fn isothermal_creep(n: usize) -> Self {
        let mut s = Self::steady(n);
        s.name = "isothermal_creep".into();
        s.steps = 50;
        s.eps = 0.0;
        s.isothermal = true;
        s.loads.tractions = vec![Traction {
            face: Face::new(0, true),
            value: [0.5, 0.0, 0.0],
            profile: Profile::Pulse {
                t_on: 0.0,
                t_ramp: 0.1,
                t_off: None,
            },
        }];
        s
    }

    /// Base scenario for time-step refinement.
    pub fn refine_tau(n: usize) -> Self {
        let mut s = Self::shear_pulse(n);
        s.name = "refine_tau".into();
        s.steps = 10;
        s
    }

    /// Base scenario for eps refinement: a tension pulse, which is mostly stretch.
    pub fn refine_eps(n: usize) -> Self {
        let mut s = Self::steady(n);
        s.name = "refine_eps".into();
        s.steps = 20;
        s.loads.tractions = vec![Traction {
            face: Face::new(0, true),
            value: [1.0, 0.0, 0.0],
            profile: Profile::Pulse {
                t_on: 0.0,
                t_ramp: 0.5,
                t_off: Some(0.5),
            },
        }];
        s
    }

    pub fn preset(name: &str, n: usize) -> Option<Self> {
        Some(match name {
            "steady" => Self::steady(n),
            "shear_pulse" => Self::shear_pulse(n),
            "insulated_pulse" => Self::insulated_pulse(n),
            "isothermal_creep" => Self::isothermal_creep(n),
            "refine_tau" => Self::refine_tau(n),
            "refine_eps" => Self::refine_eps(n),
            _ => return None,
        })
    }

    pub const PRESETS: [&'static str; 6] = [
        "steady",
        "shear_pulse",
        "insulated_pulse",
        "isothermal_creep",
        "refine_tau",
        "refine_eps",
    ];
}

/// State at one discrete time.
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub t: f64,
    pub y: NodalField,
    pub theta: NodalField,
    /// Enthalpy at the volume quadrature points.
    pub w: Vec<f64>,
}

/// Solver statistics and data of one accepted step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t0: f64,
    pub t1: f64,
    pub loads: StepLoads,
    pub mech_iterations: usize,
    pub mech_residual: f64,
    pub mech_initial_residual: f64,
    pub functional_prev: f64,
    pub functional_new: f64,
    pub shifted_iterations: usize,
    /// Smallest `det F` over the accepted Newton iterates of the mechanical step.
    pub min_det_iterates: f64,
    pub heat_iterations: usize,
    pub heat_residual: f64,
    pub heat_initial_residual: f64,
    /// Nodal minimum of the temperature before clamping.
    pub min_theta: f64,
    pub clamped: f64,
    /// How often the original step was split to reach this one.
    pub halvings: usize,
}

impl StepRecord {
    pub fn tau(&self) -> f64 {
        self.t1 - self.t0
    }
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub scenario: Scenario,
    pub eps: f64,
    pub snapshots: Vec<Snapshot>,
    /// `steps[k - 1]` leads from `snapshots[k - 1]` to `snapshots[k]`.
    pub steps: Vec<StepRecord>,
}

/// The three interpolants at a time `t`.
#[derive(Clone, Debug)]
pub struct Interpolants {
    /// Value of the right end of the step containing `t`.
    pub upper: Snapshot,
    /// Value of the left end of the step containing `t`.
    pub lower: Snapshot,
    pub affine: Snapshot,
}

impl Trajectory {
    pub fn t_final(&self) -> f64 {
        self.snapshots.last().map_or(0.0, |s| s.t)
    }

    pub fn interpolants(&self, t: f64) -> Result<Interpolants> {
        let tf = self.t_final();
        let tol = 1e-12 * tf.max(1.0);
        if !(t >= -tol && t <= tf + tol) {
            return Err(Error::Config(vec![format!("time {t} outside [0, {tf}]")]));
        }
        if let Some(s) = self.snapshots.iter().find(|s| (s.t - t).abs() <= tol) {
            return Ok(Interpolants {
                upper: s.clone(),
                lower: s.clone(),
                affine: s.clone(),
            });
        }
        let k = self.snapshots.partition_point(|s| s.t < t);
        let (a, b) = (&self.snapshots[k - 1], &self.snapshots[k]);
        let lam = (t - a.t) / (b.t - a.t);
        Ok(Interpolants {
            upper: b.clone(),
            lower: a.clone(),
            affine: lerp(a, b, lam, t),
        })
    }
}

fn lerp(a: &Snapshot, b: &Snapshot, lam: f64, t: f64) -> Snapshot {
    let mix = |x: &[f64], y: &[f64]| -> Vec<f64> {
        x.iter()
            .zip(y)
            .map(|(p, q)| (1.0 - lam) * p + lam * q)
            .collect()
    };
    Snapshot {
        t,
        y: NodalField {
            per_node: a.y.per_node,
            values: mix(&a.y.values, &b.y.values),
        },
        theta: NodalField {
            per_node: 1,
            values: mix(&a.theta.values, &b.theta.values),
        },
        w: mix(&a.w, &b.w),
    }
}

/// Initial state with the capped initial temperature.
pub fn initial_snapshot(model: &Model, theta0: f64, eps: f64) -> Snapshot {
    let g = &model.grid;
    let y = g.identity_deformation();
    let theta = g.constant_scalar(cap(theta0, eps));
    let w = enthalpy_field(model, &y, &theta);
    Snapshot {
        t: 0.0,
        y,
        theta,
        w,
    }
}

/// `w(grad y, theta)` at the volume quadrature points.
pub fn enthalpy_field(model: &Model, y: &NodalField, theta: &NodalField) -> Vec<f64> {
    let kin = model.grid.kinematics(y);
    let th = model.grid.scalar_at_qp(theta);
    kin.f
        .iter()
        .zip(&th)
        .map(|(f, t)| model.material.enthalpy(f, *t))
        .collect()
}

/// Mechanical increment of a recorded step.
pub fn mech_increment(model: &Model, prev: &Snapshot, rec: &StepRecord, eps: f64) -> MechIncrement {
    MechIncrement::new(
        model,
        &prev.y,
        &prev.theta,
        rec.tau(),
        eps,
        rec.loads.bulk_qp(model),
        rec.loads.traction_bqp(model),
    )
}

/// Heat increment of a recorded step.
pub fn heat_increment(
    model: &Model,
    prev: &Snapshot,
    new: &Snapshot,
    rec: &StepRecord,
    eps: f64,
) -> Result<HeatIncrement> {
    let f_prev = model.grid.kinematics(&prev.y).f;
    let f_new = model.grid.kinematics(&new.y).f;
    HeatIncrement::new(
        model,
        &prev.theta,
        f_prev,
        f_new,
        prev.w.clone(),
        rec.tau(),
        eps,
        rec.loads.theta_b_bqp(model),
    )
}

fn try_step(
    model: &Model,
    sc: &Scenario,
    prev: &Snapshot,
    t0: f64,
    t1: f64,
    eps: f64,
) -> Result<(Snapshot, StepRecord)> {
    let tau = t1 - t0;
    let loads = sc.loads.averaged(t0, t1, eps);
    let minc = MechIncrement::new(
        model,
        &prev.y,
        &prev.theta,
        tau,
        eps,
        loads.bulk_qp(model),
        loads.traction_bqp(model),
    );
    let mres = solve_mech(model, &minc)?;
    let mut rec = StepRecord {
        t0,
        t1,
        loads,
        mech_iterations: mres.iterations,
        mech_residual: mres.residual,
        mech_initial_residual: mres.initial_residual,
        functional_prev: mres.initial_functional,
        functional_new: mres.functional,
        shifted_iterations: mres.shifted_iterations,
        min_det_iterates: mres.min_det_iterates,
        heat_iterations: 0,
        heat_residual: 0.0,
        heat_initial_residual: 0.0,
        min_theta: prev.theta.min(),
        clamped: 0.0,
        halvings: 0,
    };
    if model.isothermal {
        let theta = prev.theta.clone();
        let w = enthalpy_field(model, &mres.y, &theta);
        return Ok((
            Snapshot {
                t: t1,
                y: mres.y,
                theta,
                w,
            },
            rec,
        ));
    }
    let hinc = HeatIncrement::new(
        model,
        &prev.theta,
        minc.f_prev,
        mres.kin.f,
        prev.w.clone(),
        tau,
        eps,
        rec.loads.theta_b_bqp(model),
    )?;
    let hres = solve_heat(model, &hinc)?;
    rec.heat_iterations = hres.iterations;
    rec.heat_residual = hres.residual;
    rec.heat_initial_residual = hres.initial_residual;
    rec.min_theta = hres.min_theta;
    rec.clamped = hres.clamped;
    Ok((
        Snapshot {
            t: t1,
            y: mres.y,
            theta: hres.theta,
            w: hres.w,
        },
        rec,
    ))
}

fn advance(
    model: &Model,
    sc: &Scenario,
    prev: &Snapshot,
    t0: f64,
    t1: f64,
    eps: f64,
    depth: usize,
    out: &mut Vec<(Snapshot, StepRecord)>,
) -> Result<()> {
    match try_step(model, sc, prev, t0, t1, eps) {
        Ok((s, mut r)) => {
            r.halvings = depth;
            out.push((s, r));
            Ok(())
        }
        Err(Error::StepRejected(msg)) if depth < model.solver.max_halvings => {
            warn!("step [{t0}, {t1}] rejected ({msg}); halving");
            let tm = 0.5 * (t0 + t1);
            advance(model, sc, prev, t0, tm, eps, depth + 1, out)?;
            let mid = out.last().expect("half step recorded").0.clone();
            advance(model, sc, &mid, tm, t1, eps, depth + 1, out)
        }
        Err(Error::StepRejected(msg)) => Err(Error::StepRejected(format!(
            "step [{t0}, {t1}] failed after {depth} halvings: {msg}"
        ))),
        Err(e) => Err(e),
    }
}

/// Runs `steps` uniform steps on `[0, t_final]`.
pub fn run(model: &Model, sc: &Scenario, steps: usize, eps: f64) -> Result<Trajectory> {
    let traj = Trajectory {
        scenario: sc.clone(),
        eps,
        snapshots: vec![initial_snapshot(model, sc.theta0, eps)],
        steps: Vec::new(),
    };
    resume(model, traj, steps)
}

/// Continues a trajectory on the uniform partition with `steps` steps.
pub fn resume(model: &Model, mut traj: Trajectory, steps: usize) -> Result<Trajectory> {
    let sc = traj.scenario.clone();
    let tau = sc.t_final / steps as f64;
    let start = traj.snapshots.last().map_or(0.0, |s| s.t);
    let k0 = (start / tau).round() as usize;
    if ((k0 as f64) * tau - start).abs() > 1e-9 * tau {
        return Err(Error::Checkpoint(format!(
            "checkpoint time {start} is not on the partition with tau = {tau}"
        )));
    }
    for k in k0 + 1..=steps {
        let prev = traj
            .snapshots
            .last()
            .expect("trajectory starts with a snapshot")
            .clone();
        let (t0, t1) = (prev.t, k as f64 * tau);
        let mut out = Vec::new();
        advance(model, &sc, &prev, t0, t1, traj.eps, 0, &mut out)?;
        for (s, r) in out {
            traj.snapshots.push(s);
            traj.steps.push(r);
        }
        if k % 10 == 0 || k == steps {
            info!("{}: step {k}/{steps} at t = {t1:.4}", sc.name);
        }
    }
    Ok(traj)
}

/// One cell of a refinement study.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RefinementCell {
    pub tau: f64,
    pub eps: f64,
    pub steps: usize,
    /// `int_Q xi`
    pub dissipation: f64,
    /// `int_Q xi_reg`
    pub reg_dissipation: f64,
    /// `eps |grad y_dot|^2_{L2(Q)}`
    pub eps_rate: f64,
    /// `|xi - xi_reg|_{L1(Q)}`
    pub xi_gap: f64,
}

/// `L2(Q)` distances between the affine interpolants of consecutive cells.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CauchyDiff {
    pub grad_y: f64,
    pub theta: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RefinementReport {
    pub tau_cells: Vec<RefinementCell>,
    pub tau_cauchy: Vec<CauchyDiff>,
    pub eps_cells: Vec<RefinementCell>,
    pub eps_cauchy: Vec<CauchyDiff>,
}

/// Per-snapshot `F` and `theta` at the quadrature points.
struct QpHistory {
    t: Vec<f64>,
    f: Vec<Vec<Tensor2>>,
    theta: Vec<Vec<f64>>,
}

impl QpHistory {
    fn new(model: &Model, traj: &Trajectory) -> Self {
        let g = &model.grid;
        let (f, theta) = traj
            .snapshots
            .par_iter()
            .map(|s| (g.kinematics(&s.y).f, g.scalar_at_qp(&s.theta)))
            .unzip();
        Self {
            t: traj.snapshots.iter().map(|s| s.t).collect(),
            f,
            theta,
        }
    }

    /// Interval index and weight of the affine interpolant at `t`.
    fn locate(&self, t: f64) -> (usize, f64) {
        let k = self
            .t
            .partition_point(|s| *s < t)
            .clamp(1, self.t.len() - 1);
        (k, (t - self.t[k - 1]) / (self.t[k] - self.t[k - 1]))
    }
}

/// Integral measures of one trajectory used in refinement studies.
pub fn cell_measures(model: &Model, traj: &Trajectory) -> RefinementCell {
    let g = &model.grid;
    let m = &model.material;
    let h = QpHistory::new(model, traj);
    let (mut dis, mut reg, mut rate, mut gap) = (0.0, 0.0, 0.0, 0.0);
    for (k, rec) in traj.steps.iter().enumerate() {
        let tau = rec.tau();
        let (xi, dd): (Vec<f64>, Vec<f64>) = h.f[k]
            .iter()
            .zip(&h.f[k + 1])
            .map(|(a, b)| {
                let fdot = b.sub(a).scale(1.0 / tau);
                (m.dissipation_rate(a, &fdot), fdot.norm_sq())
            })
            .unzip();
        let xr: Vec<f64> = xi
            .iter()
            .map(|x| MaterialModel::regularized_dissipation(*x, traj.eps))
            .collect();
        let diff: Vec<f64> = xi.iter().zip(&xr).map(|(a, b)| a - b).collect();
        dis += tau * g.assemble_scalar(&xi);
        reg += tau * g.assemble_scalar(&xr);
        rate += tau * traj.eps * g.assemble_scalar(&dd);
        gap += tau * g.assemble_scalar(&diff);
    }
    RefinementCell {
        tau: traj.scenario.t_final / traj.steps.len().max(1) as f64,
        eps: traj.eps,
        steps: traj.steps.len(),
        dissipation: dis,
        reg_dissipation: reg,
        eps_rate: rate,
        xi_gap: gap,
    }
}

/// `L2(Q)` distance of the affine interpolants of `grad y` and `theta`.
pub fn cauchy_difference(model: &Model, a: &Trajectory, b: &Trajectory) -> CauchyDiff {
    let g = &model.grid;
    let ha = QpHistory::new(model, a);
    let hb = QpHistory::new(model, b);
    let tol = 1e-12 * a.t_final().max(1.0);
    let mut ts: Vec<f64> = ha.t.iter().chain(&hb.t).copied().collect();
    ts.sort_by(f64::total_cmp);
    ts.dedup_by(|x, y| (*x - *y).abs() <= tol);
    let gauss = [0.5 - 0.5 / 3f64.sqrt(), 0.5 + 0.5 / 3f64.sqrt()];
    let (mut ey, mut et) = (0.0, 0.0);
    for w in ts.windows(2) {
        let len = w[1] - w[0];
        for s in gauss {
            let t = w[0] + s * len;
            let (ka, la) = ha.locate(t);
            let (kb, lb) = hb.locate(t);
            let dy: Vec<f64> = (0..g.n_qp())
                .map(|q| {
                    let fa = ha.f[ka - 1][q].scale(1.0 - la).axpy(la, &ha.f[ka][q]);
                    let fb = hb.f[kb - 1][q].scale(1.0 - lb).axpy(lb, &hb.f[kb][q]);
                    fa.sub(&fb).norm_sq()
                })
                .collect();
            let dt: Vec<f64> = (0..g.n_qp())
                .map(|q| {
                    let ta = (1.0 - la) * ha.theta[ka - 1][q] + la * ha.theta[ka][q];
                    let tb = (1.0 - lb) * hb.theta[kb - 1][q] + lb * hb.theta[kb][q];
                    (ta - tb).powi(2)
                })
                .collect();
            ey += 0.5 * len * g.assemble_scalar(&dy);
            et += 0.5 * len * g.assemble_scalar(&dt);
        }
    }
    CauchyDiff {
        grad_y: ey.sqrt(),
        theta: et.sqrt(),
    }
}

/// Runs the scenario for every step count in `steps_list` at the scenario's `eps`,
/// and for every `eps` in `eps_list` at the finest step count. Cells run in parallel.
pub fn refinement_study(
    sc: &Scenario,
    steps_list: &[usize],
    eps_list: &[f64],
) -> Result<(RefinementReport, Vec<Trajectory>, Vec<Trajectory>)> {
    let model = sc.model()?;
    let finest = *steps_list.iter().max().unwrap_or(&sc.steps);
    let tau_runs: Vec<Trajectory> = steps_list
        .par_iter()
        .map(|&n| sc.model().and_then(|m| run(&m, sc, n, sc.eps)))
        .collect::<Result<_>>()?;
    let eps_runs: Vec<Trajectory> = eps_list
        .par_iter()
        .map(|&e| sc.model().and_then(|m| run(&m, sc, finest, e)))
        .collect::<Result<_>>()?;
    let cells = |runs: &[Trajectory]| {
        runs.iter()
            .map(|t| cell_measures(&model, t))
            .collect::<Vec<_>>()
    };
    let cauchy = |runs: &[Trajectory]| {
        runs.windows(2)
            .map(|w| cauchy_difference(&model, &w[0], &w[1]))
            .collect::<Vec<_>>()
    };
    let report = RefinementReport {
        tau_cells: cells(&tau_runs),
        tau_cauchy: cauchy(&tau_runs),
        eps_cells: cells(&eps_runs),
        eps_cauchy: cauchy(&eps_runs),
    };
    Ok((report, tau_runs, eps_runs))
}
