//! Configuration files, run orchestration and on-disk outputs.
//!
//! A configuration is a TOML document with the sections `[grid]`, `[material]`,
//! `[loads]`, `[time]`, `[solver]` and `[output]`, plus two optional top-level keys:
//! `scenario` names the preset every section overrides (default `steady`) and `name`
//! labels the run. Every key is optional. An empty document is the `steady` preset
//! on a 16 x 16 grid.
//!
//! ```toml
//! scenario = "shear_pulse"
//!
//! [grid]
//! cells = [24, 24]
//!
//! [material]
//! q = 6.0            # c2 follows to keep the identity stress free unless given
//!
//! [[loads.traction]]
//! face = "x+"
//! value = [0.0, 0.5]
//! profile = { kind = "pulse", t_on = 0.0, t_ramp = 0.4 }
//!
//! [time]
//! steps = 100
//! tau_list = [0.1, 0.05, 0.025]
//!
//! [output]
//! dir = "out/shear"
//! diagnostics = "full"
//! ```
//!
//! Outputs of a run directory:
//!
//! * `timeseries.csv`: one row per snapshot, columns [`TIMESERIES_COLUMNS`], preceded
//!   by the comment line `# thermovisco timeseries v1`. Floats carry 17 significant
//!   digits; certificates that were not evaluated on a row are written as `nan`.
//! * `fields/snap_NNNNN.bin`: field dumps, see [`write_field_dump`].
//! * `report.json`: certificates, weak residuals and solver statistics.
//! * `checkpoint.json`: all snapshots plus the configuration hash, see [`Checkpoint`].
//! * `config.toml`: the fully expanded configuration.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use toml::{Table, Value};

use crate::diagnostics::{
    certificates, run_diagnostics, seeded_test_bank, weak_residuals_with, CertTolerances,
    Certificate, DiagOptions, StepDiagnostics, WeakResiduals,
};
use crate::error::{Error, Result};
use crate::grid::{Face, NodalField};
use crate::material::{stress_free_c2, MaterialModel};
use crate::model::Model;
use crate::scheme::{
    refinement_study, resume, run, Profile, RefinementReport, Scenario, Snapshot, StepRecord,
    Traction, Trajectory,
};
use crate::tensor::Tensor2;

/// Grid resolution used when a configuration does not give `[grid] cells`.
pub const DEFAULT_CELLS: usize = 16;

pub const TIMESERIES_VERSION: u32 = 1;

pub const TIMESERIES_COLUMNS: [&str; 19] = [
    "step",
    "t",
    "M",
    "H",
    "Phi_cpl",
    "W",
    "E",
    "xi_step",
    "xi_reg_step",
    "ext_power",
    "boundary_heat",
    "entropy_prod",
    "min_detF",
    "hk_bound",
    "korn_const",
    "mech_residual",
    "heat_residual",
    "energy_gap_total",
    "min_theta",
];

pub const FIELD_MAGIC: &str = "THERMOVISCO-FIELDS";
pub const FIELD_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiagnosticsLevel {
    /// Ledger, positivity, entropy and enthalpy checks only.
    Basic,
    /// Adds the determinant bound, the Korn constant and the weak residuals.
    Full,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldDumps {
    All,
    Final,
    None,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub diagnostics: DiagnosticsLevel,
    pub korn_every: usize,
    pub fields: FieldDumps,
    /// Seed of the weak-residual test bank; 0 is the unperturbed bank.
    pub seed: u64,
    pub checkpoint: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            diagnostics: DiagnosticsLevel::Full,
            korn_every: 10,
            fields: FieldDumps::Final,
            seed: 0,
            checkpoint: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    /// Preset the document was applied to.
    pub base: String,
    pub scenario: Scenario,
    pub output: OutputConfig,
    /// Step counts of a refinement study (from `tau_list`).
    pub steps_list: Vec<usize>,
    pub eps_list: Vec<f64>,
}

impl RunConfig {
    pub fn diag_options(&self) -> DiagOptions {
        match self.output.diagnostics {
            DiagnosticsLevel::Basic => DiagOptions {
                hk: false,
                korn_every: 0,
            },
            DiagnosticsLevel::Full => DiagOptions {
                hk: true,
                korn_every: self.output.korn_every,
            },
        }
    }

    /// Sets the time step, which must divide the final time.
    pub fn set_tau(&mut self, tau: f64) -> Result<()> {
        self.scenario.steps = steps_for_tau(self.scenario.t_final, tau)?;
        Ok(())
    }

    pub fn set_tau_list(&mut self, taus: &[f64]) -> Result<()> {
        self.steps_list = taus
            .iter()
            .map(|t| steps_for_tau(self.scenario.t_final, *t))
            .collect::<Result<_>>()?;
        Ok(())
    }

    /// Hex SHA-256 of the canonical TOML form.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(to_toml(self).as_bytes());
        digest.iter().fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }
}

fn steps_for_tau(t_final: f64, tau: f64) -> Result<usize> {
    if !(tau > 0.0 && tau <= t_final) {
        return Err(Error::Config(vec![format!(
            "tau = {tau} must lie in (0, {t_final}]"
        )]));
    }
    let n = (t_final / tau).round();
    if ((n * tau - t_final) / t_final).abs() > 1e-9 {
        return Err(Error::Config(vec![format!(
            "tau = {tau} does not divide the final time {t_final}"
        )]));
    }
    Ok(n as usize)
}

// ---- parsing ------------------------------------------------------------------------

const TOP_KEYS: [&str; 8] = [
    "scenario", "name", "grid", "material", "loads", "time", "solver", "output",
];
const GRID_KEYS: [&str; 4] = ["d", "cells", "lengths", "dirichlet"];
const MATERIAL_KEYS: [&str; 13] = [
    "c1",
    "c2",
    "s",
    "q",
    "p",
    "h_coef",
    "nu",
    "heat_capacity",
    "alpha",
    "bump_amplitude",
    "bump_radius",
    "conductivity",
    "kappa",
];
const LOADS_KEYS: [&str; 5] = [
    "bulk",
    "bulk_profile",
    "theta_b",
    "theta_b_profile",
    "traction",
];
const TRACTION_KEYS: [&str; 3] = ["face", "value", "profile"];
const TIME_KEYS: [&str; 8] = [
    "t_final",
    "steps",
    "tau",
    "eps",
    "theta0",
    "isothermal",
    "tau_list",
    "eps_list",
];
const SOLVER_KEYS: [&str; 7] = [
    "tol_mech",
    "max_newton",
    "max_backtracks",
    "det_gate",
    "tol_heat",
    "tol_pos",
    "max_halvings",
];
const OUTPUT_KEYS: [&str; 6] = [
    "dir",
    "diagnostics",
    "korn_every",
    "fields",
    "seed",
    "checkpoint",
];

/// Collects every problem found in a document.
struct Reader {
    errors: Vec<String>,
}

fn nearest<'a>(key: &str, known: &[&'a str]) -> Option<&'a str> {
    known
        .iter()
        .map(|k| (strsim::jaro_winkler(key, k), *k))
        .filter(|(s, _)| *s > 0.6)
        .max_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, k)| k)
}

impl Reader {
    fn err(&mut self, msg: String) {
        self.errors.push(msg);
    }

    fn check_keys(&mut self, section: &str, t: &Table, known: &[&str]) {
        for k in t.keys() {
            if !known.contains(&k.as_str()) {
                let at = if section.is_empty() {
                    k.clone()
                } else {
                    format!("{section}.{k}")
                };
                match nearest(k, known) {
                    Some(n) => self.err(format!("unknown key `{at}` (did you mean `{n}`?)")),
                    None => self.err(format!(
                        "unknown key `{at}` (valid keys: {})",
                        known.join(", ")
                    )),
                }
            }
        }
    }

    fn table<'a>(&mut self, path: &str, v: &'a Value) -> Option<&'a Table> {
        v.as_table().or_else(|| {
            self.err(format!("`{path}` must be a table"));
            None
        })
    }

    fn f64(&mut self, path: &str, v: &Value) -> Option<f64> {
        match v {
            Value::Float(x) => Some(*x),
            Value::Integer(i) => Some(*i as f64),
            _ => {
                self.err(format!("`{path}` must be a number"));
                None
            }
        }
    }

    fn usize(&mut self, path: &str, v: &Value) -> Option<usize> {
        match v {
            Value::Integer(i) if *i >= 0 => Some(*i as usize),
            _ => {
                self.err(format!("`{path}` must be a non-negative integer"));
                None
            }
        }
    }

    fn bool(&mut self, path: &str, v: &Value) -> Option<bool> {
        v.as_bool().or_else(|| {
            self.err(format!("`{path}` must be true or false"));
            None
        })
    }

    fn str<'a>(&mut self, path: &str, v: &'a Value) -> Option<&'a str> {
        v.as_str().or_else(|| {
            self.err(format!("`{path}` must be a string"));
            None
        })
    }

    fn array<'a>(&mut self, path: &str, v: &'a Value) -> Option<&'a Vec<Value>> {
        v.as_array().or_else(|| {
            self.err(format!("`{path}` must be an array"));
            None
        })
    }

    fn f64_list(&mut self, path: &str, v: &Value) -> Option<Vec<f64>> {
        let a = self.array(path, v)?;
        let before = self.errors.len();
        let out: Vec<f64> = a
            .iter()
            .enumerate()
            .filter_map(|(i, x)| self.f64(&format!("{path}[{i}]"), x))
            .collect();
        (self.errors.len() == before).then_some(out)
    }

    fn usize_list(&mut self, path: &str, v: &Value) -> Option<Vec<usize>> {
        let a = self.array(path, v)?;
        let before = self.errors.len();
        let out: Vec<usize> = a
            .iter()
            .enumerate()
            .filter_map(|(i, x)| self.usize(&format!("{path}[{i}]"), x))
            .collect();
        (self.errors.len() == before).then_some(out)
    }

    /// A length-`d` vector padded to three components.
    fn vector(&mut self, path: &str, v: &Value, d: usize) -> Option<[f64; 3]> {
        let x = self.f64_list(path, v)?;
        if x.len() != d {
            self.err(format!("`{path}` needs {d} components (got {})", x.len()));
            return None;
        }
        let mut out = [0.0; 3];
        out[..d].copy_from_slice(&x);
        Some(out)
    }

    fn face(&mut self, path: &str, v: &Value) -> Option<Face> {
        let s = self.str(path, v)?;
        Face::parse(s).or_else(|| {
            self.err(format!(
                "`{path}` = \"{s}\" is not a face (use one of {})",
                Face::NAMES.join(", ")
            ));
            None
        })
    }

    fn profile(&mut self, path: &str, v: &Value) -> Option<Profile> {
        let t = self.table(path, v)?;
        let kind = match t.get("kind") {
            Some(k) => self.str(&format!("{path}.kind"), k)?,
            None => {
                self.err(format!("`{path}` needs a `kind`"));
                return None;
            }
        };
        let known: &[&str] = match kind {
            "constant" => &["kind"],
            "pulse" => &["kind", "t_on", "t_ramp", "t_off"],
            "sine" => &["kind", "period"],
            "table" => &["kind", "points"],
            other => {
                self.err(format!(
                    "`{path}.kind` = \"{other}\" is not one of constant, pulse, sine, table"
                ));
                return None;
            }
        };
        self.check_keys(path, t, known);
        let num = |r: &mut Self, key: &str, default: Option<f64>| -> Option<f64> {
            match t.get(key) {
                Some(x) => r.f64(&format!("{path}.{key}"), x),
                None if default.is_some() => default,
                None => {
                    r.err(format!("`{path}` of kind {kind} needs `{key}`"));
                    None
                }
            }
        };
        match kind {
            "constant" => Some(Profile::Constant),
            "pulse" => {
                let t_on = num(self, "t_on", Some(0.0));
                let t_ramp = num(self, "t_ramp", None);
                let t_off = match t.get("t_off") {
                    Some(x) => Some(self.f64(&format!("{path}.t_off"), x)?),
                    None => None,
                };
                Some(Profile::Pulse {
                    t_on: t_on?,
                    t_ramp: t_ramp?,
                    t_off,
                })
            }
            "sine" => Some(Profile::Sine {
                period: num(self, "period", None)?,
            }),
            _ => {
                let pts = match t.get("points") {
                    Some(p) => self.array(&format!("{path}.points"), p)?,
                    None => {
                        self.err(format!("`{path}` of kind table needs `points`"));
                        return None;
                    }
                };
                let mut points = Vec::new();
                for (i, p) in pts.iter().enumerate() {
                    let at = format!("{path}.points[{i}]");
                    let xy = self.f64_list(&at, p)?;
                    if xy.len() != 2 {
                        self.err(format!("`{at}` must be a [t, value] pair"));
                        return None;
                    }
                    points.push([xy[0], xy[1]]);
                }
                Some(Profile::Table { points })
            }
        }
    }
}

/// Parses and validates a configuration document; reports every violation found.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let doc: Table = text
        .parse()
        .map_err(|e: toml::de::Error| Error::Config(vec![e.to_string()]))?;
    let mut r = Reader { errors: Vec::new() };
    r.check_keys("", &doc, &TOP_KEYS);
    let empty = Table::new();
    let section = |r: &mut Reader, name: &str| -> Table {
        match doc.get(name) {
            Some(v) => r.table(name, v).cloned().unwrap_or_default(),
            None => empty.clone(),
        }
    };

    let base = match doc.get("scenario") {
        Some(v) => r.str("scenario", v).unwrap_or("steady").to_string(),
        None => "steady".to_string(),
    };
    let mut sc = match Scenario::preset(&base, DEFAULT_CELLS) {
        Some(s) => s,
        None => {
            let hint = nearest(&base, &Scenario::PRESETS)
                .map(|n| format!(" (did you mean `{n}`?)"))
                .unwrap_or_default();
            r.err(format!(
                "unknown scenario `{base}`{hint}; presets: {}",
                Scenario::PRESETS.join(", ")
            ));
            Scenario::steady(DEFAULT_CELLS)
        }
    };
    if let Some(v) = doc.get("name") {
        if let Some(s) = r.str("name", v) {
            sc.name = s.to_string();
        }
    }

    // [grid]
    let g = section(&mut r, "grid");
    r.check_keys("grid", &g, &GRID_KEYS);
    if let Some(d) = g.get("d").and_then(|v| r.usize("grid.d", v)) {
        if d != sc.grid.d {
            if !(2..=3).contains(&d) {
                r.err(format!("`grid.d` = {d} must be 2 or 3"));
            } else {
                sc.grid.d = d;
                sc.grid.cells = vec![DEFAULT_CELLS; d];
                sc.grid.lengths = vec![1.0; d];
                sc.material = MaterialModel::default_for_dim(d);
                for tr in &mut sc.loads.tractions {
                    tr.value = [tr.value[0], tr.value[1], 0.0];
                }
            }
        }
    }
    let d = sc.grid.d;
    if let Some(c) = g.get("cells").and_then(|v| r.usize_list("grid.cells", v)) {
        sc.grid.cells = c;
    }
    if let Some(l) = g.get("lengths").and_then(|v| r.f64_list("grid.lengths", v)) {
        sc.grid.lengths = l;
    }
    if let Some(a) = g
        .get("dirichlet")
        .and_then(|v| r.array("grid.dirichlet", v))
    {
        sc.grid.dirichlet = a
            .iter()
            .enumerate()
            .filter_map(|(i, f)| r.face(&format!("grid.dirichlet[{i}]"), f))
            .collect();
    }

    // [material]
    let m = section(&mut r, "material");
    r.check_keys("material", &m, &MATERIAL_KEYS);
    {
        let mat = &mut sc.material;
        let set = |r: &mut Reader, key: &str, target: &mut f64| {
            if let Some(x) = m
                .get(key)
                .and_then(|v| r.f64(&format!("material.{key}"), v))
            {
                *target = x;
            }
        };
        set(&mut r, "c1", &mut mat.c1);
        set(&mut r, "s", &mut mat.s);
        set(&mut r, "q", &mut mat.q);
        set(&mut r, "p", &mut mat.p);
        set(&mut r, "h_coef", &mut mat.h_coef);
        set(&mut r, "nu", &mut mat.nu);
        set(&mut r, "heat_capacity", &mut mat.heat_capacity);
        set(&mut r, "alpha", &mut mat.alpha);
        set(&mut r, "bump_amplitude", &mut mat.bump.amplitude);
        set(&mut r, "bump_radius", &mut mat.bump.radius);
        set(&mut r, "kappa", &mut mat.kappa);
        if m.contains_key("c2") {
            set(&mut r, "c2", &mut mat.c2);
        } else if ["c1", "s", "q"].iter().any(|k| m.contains_key(*k)) {
            mat.c2 = stress_free_c2(d, mat.c1, mat.s, mat.q);
        }
        match m.get("conductivity") {
            None => {}
            Some(v @ (Value::Float(_) | Value::Integer(_))) => {
                if let Some(x) = r.f64("material.conductivity", v) {
                    mat.conductivity = Tensor2::identity(d).scale(x);
                }
            }
            Some(v) => {
                if let Some(rows) = r.array("material.conductivity", v) {
                    let parsed: Vec<Option<Vec<f64>>> = rows
                        .iter()
                        .enumerate()
                        .map(|(i, row)| r.f64_list(&format!("material.conductivity[{i}]"), row))
                        .collect();
                    if parsed
                        .iter()
                        .all(|p| p.as_ref().is_some_and(|p| p.len() == d))
                        && parsed.len() == d
                    {
                        let rows: Vec<Vec<f64>> = parsed.into_iter().flatten().collect();
                        let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
                        mat.conductivity = Tensor2::from_rows(&refs);
                    } else {
                        r.err(format!(
                            "`material.conductivity` must be a number or a {d} x {d} array"
                        ));
                    }
                }
            }
        }
    }

    // [loads]
    let l = section(&mut r, "loads");
    r.check_keys("loads", &l, &LOADS_KEYS);
    if let Some(b) = l.get("bulk").and_then(|v| r.vector("loads.bulk", v, d)) {
        sc.loads.bulk = b;
    }
    if let Some(p) = l
        .get("bulk_profile")
        .and_then(|v| r.profile("loads.bulk_profile", v))
    {
        sc.loads.bulk_profile = p;
    }
    if let Some(x) = l.get("theta_b").and_then(|v| r.f64("loads.theta_b", v)) {
        sc.loads.theta_b = x;
    }
    if let Some(p) = l
        .get("theta_b_profile")
        .and_then(|v| r.profile("loads.theta_b_profile", v))
    {
        sc.loads.theta_b_profile = p;
    }
    if let Some(a) = l.get("traction").and_then(|v| r.array("loads.traction", v)) {
        let mut tractions = Vec::new();
        for (i, item) in a.iter().enumerate() {
            let at = format!("loads.traction[{i}]");
            let Some(t) = r.table(&at, item) else {
                continue;
            };
            r.check_keys(&at, t, &TRACTION_KEYS);
            let face = match t.get("face") {
                Some(f) => r.face(&format!("{at}.face"), f),
                None => {
                    r.err(format!("`{at}` needs a `face`"));
                    None
                }
            };
            let value = match t.get("value") {
                Some(v) => r.vector(&format!("{at}.value"), v, d),
                None => {
                    r.err(format!("`{at}` needs a `value`"));
                    None
                }
            };
            let profile = match t.get("profile") {
                Some(p) => r.profile(&format!("{at}.profile"), p),
                None => Some(Profile::Constant),
            };
            if let (Some(face), Some(value), Some(profile)) = (face, value, profile) {
                tractions.push(Traction {
                    face,
                    value,
                    profile,
                });
            }
        }
        sc.loads.tractions = tractions;
    }

    // [time]
    let t = section(&mut r, "time");
    r.check_keys("time", &t, &TIME_KEYS);
    if let Some(x) = t.get("t_final").and_then(|v| r.f64("time.t_final", v)) {
        sc.t_final = x;
    }
    if let Some(n) = t.get("steps").and_then(|v| r.usize("time.steps", v)) {
        sc.steps = n;
    }
    if let Some(x) = t.get("eps").and_then(|v| r.f64("time.eps", v)) {
        sc.eps = x;
    }
    if let Some(x) = t.get("theta0").and_then(|v| r.f64("time.theta0", v)) {
        sc.theta0 = x;
    }
    if let Some(b) = t
        .get("isothermal")
        .and_then(|v| r.bool("time.isothermal", v))
    {
        sc.isothermal = b;
    }
    let mut steps_list = Vec::new();
    let mut eps_list = Vec::new();
    if sc.t_final > 0.0 {
        if let Some(tau) = t.get("tau").and_then(|v| r.f64("time.tau", v)) {
            if t.contains_key("steps") {
                r.err("give either `time.steps` or `time.tau`, not both".into());
            }
            match steps_for_tau(sc.t_final, tau) {
                Ok(n) => sc.steps = n,
                Err(Error::Config(e)) => r.errors.extend(e),
                Err(e) => r.err(e.to_string()),
            }
        }
        if let Some(list) = t
            .get("tau_list")
            .and_then(|v| r.f64_list("time.tau_list", v))
        {
            for tau in list {
                match steps_for_tau(sc.t_final, tau) {
                    Ok(n) => steps_list.push(n),
                    Err(Error::Config(e)) => r.errors.extend(e),
                    Err(e) => r.err(e.to_string()),
                }
            }
        }
    }
    if let Some(list) = t
        .get("eps_list")
        .and_then(|v| r.f64_list("time.eps_list", v))
    {
        if list.iter().any(|e| !(*e >= 0.0)) {
            r.err("`time.eps_list` entries must be non-negative".into());
        }
        eps_list = list;
    }

    // [solver]
    let s = section(&mut r, "solver");
    r.check_keys("solver", &s, &SOLVER_KEYS);
    {
        let sv = &mut sc.solver;
        for (key, target) in [
            ("tol_mech", &mut sv.tol_mech),
            ("det_gate", &mut sv.det_gate),
            ("tol_heat", &mut sv.tol_heat),
            ("tol_pos", &mut sv.tol_pos),
        ] {
            if let Some(x) = s.get(key).and_then(|v| r.f64(&format!("solver.{key}"), v)) {
                *target = x;
            }
        }
        for (key, target) in [
            ("max_newton", &mut sv.max_newton),
            ("max_backtracks", &mut sv.max_backtracks),
            ("max_halvings", &mut sv.max_halvings),
        ] {
            if let Some(x) = s
                .get(key)
                .and_then(|v| r.usize(&format!("solver.{key}"), v))
            {
                *target = x;
            }
        }
        if !(sv.tol_mech > 0.0 && sv.tol_heat > 0.0) {
            r.err("solver tolerances must be positive".into());
        }
        if !(sv.det_gate > 0.0 && sv.det_gate < 1.0) {
            r.err(format!(
                "`solver.det_gate` = {} must lie in (0, 1)",
                sv.det_gate
            ));
        }
        if !(sv.tol_pos >= 0.0) {
            r.err("`solver.tol_pos` must be non-negative".into());
        }
        if sv.max_newton == 0 {
            r.err("`solver.max_newton` must be positive".into());
        }
    }

    // [output]
    let o = section(&mut r, "output");
    r.check_keys("output", &o, &OUTPUT_KEYS);
    let mut output = OutputConfig::default();
    if let Some(s) = o.get("dir").and_then(|v| r.str("output.dir", v)) {
        output.dir = PathBuf::from(s);
    }
    if let Some(s) = o
        .get("diagnostics")
        .and_then(|v| r.str("output.diagnostics", v))
    {
        match s {
            "basic" => output.diagnostics = DiagnosticsLevel::Basic,
            "full" => output.diagnostics = DiagnosticsLevel::Full,
            other => r.err(format!(
                "`output.diagnostics` = \"{other}\" must be \"basic\" or \"full\""
            )),
        }
    }
    if let Some(n) = o
        .get("korn_every")
        .and_then(|v| r.usize("output.korn_every", v))
    {
        output.korn_every = n;
    }
    if let Some(s) = o.get("fields").and_then(|v| r.str("output.fields", v)) {
        match s {
            "all" => output.fields = FieldDumps::All,
            "final" => output.fields = FieldDumps::Final,
            "none" => output.fields = FieldDumps::None,
            other => r.err(format!(
                "`output.fields` = \"{other}\" must be \"all\", \"final\" or \"none\""
            )),
        }
    }
    if let Some(n) = o.get("seed").and_then(|v| r.usize("output.seed", v)) {
        output.seed = n as u64;
    }
    if let Some(b) = o
        .get("checkpoint")
        .and_then(|v| r.bool("output.checkpoint", v))
    {
        output.checkpoint = b;
    }

    let mut errors = r.errors;
    if errors.is_empty() || sc.grid.cells.len() == sc.grid.d {
        errors.extend(sc.violations());
    }
    if errors.is_empty() {
        Ok(RunConfig {
            base,
            scenario: sc,
            output,
            steps_list,
            eps_list,
        })
    } else {
        Err(Error::Config(errors))
    }
}

pub fn read_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path).map_err(|e| io_context(e, path))?;
    parse_config(&text)
}

// ---- serialization ------------------------------------------------------------------

fn float_array(x: &[f64]) -> Value {
    Value::Array(x.iter().map(|v| Value::Float(*v)).collect())
}

fn profile_value(p: &Profile) -> Value {
    let mut t = Table::new();
    match p {
        Profile::Constant => {
            t.insert("kind".into(), "constant".into());
        }
        Profile::Pulse {
            t_on,
            t_ramp,
            t_off,
        } => {
            t.insert("kind".into(), "pulse".into());
            t.insert("t_on".into(), Value::Float(*t_on));
            t.insert("t_ramp".into(), Value::Float(*t_ramp));
            if let Some(off) = t_off {
                t.insert("t_off".into(), Value::Float(*off));
            }
        }
        Profile::Sine { period } => {
            t.insert("kind".into(), "sine".into());
            t.insert("period".into(), Value::Float(*period));
        }
        Profile::Table { points } => {
            t.insert("kind".into(), "table".into());
            t.insert(
                "points".into(),
                Value::Array(points.iter().map(|p| float_array(p)).collect()),
            );
        }
    }
    Value::Table(t)
}

/// Canonical TOML form with every key written out; [`parse_config`] reads it back unchanged.
pub fn to_toml(cfg: &RunConfig) -> String {
    let sc = &cfg.scenario;
    let d = sc.grid.d;
    let mut doc = Table::new();
    doc.insert("scenario".into(), cfg.base.clone().into());
    doc.insert("name".into(), sc.name.clone().into());

    let mut g = Table::new();
    g.insert("d".into(), Value::Integer(d as i64));
    g.insert(
        "cells".into(),
        Value::Array(
            sc.grid
                .cells
                .iter()
                .map(|c| Value::Integer(*c as i64))
                .collect(),
        ),
    );
    g.insert("lengths".into(), float_array(&sc.grid.lengths));
    g.insert(
        "dirichlet".into(),
        Value::Array(sc.grid.dirichlet.iter().map(|f| f.name().into()).collect()),
    );
    doc.insert("grid".into(), Value::Table(g));

    let m = &sc.material;
    let mut mt = Table::new();
    for (k, v) in [
        ("c1", m.c1),
        ("c2", m.c2),
        ("s", m.s),
        ("q", m.q),
        ("p", m.p),
        ("h_coef", m.h_coef),
        ("nu", m.nu),
        ("heat_capacity", m.heat_capacity),
        ("alpha", m.alpha),
        ("bump_amplitude", m.bump.amplitude),
        ("bump_radius", m.bump.radius),
        ("kappa", m.kappa),
    ] {
        mt.insert(k.into(), Value::Float(v));
    }
    let rows: Vec<Value> = (0..d)
        .map(|i| float_array(&m.conductivity.m[i][..d]))
        .collect();
    mt.insert("conductivity".into(), Value::Array(rows));
    doc.insert("material".into(), Value::Table(mt));

    let mut lt = Table::new();
    lt.insert("bulk".into(), float_array(&sc.loads.bulk[..d]));
    lt.insert("bulk_profile".into(), profile_value(&sc.loads.bulk_profile));
    lt.insert("theta_b".into(), Value::Float(sc.loads.theta_b));
    lt.insert(
        "theta_b_profile".into(),
        profile_value(&sc.loads.theta_b_profile),
    );
    let tr: Vec<Value> = sc
        .loads
        .tractions
        .iter()
        .map(|t| {
            let mut tt = Table::new();
            tt.insert("face".into(), t.face.name().into());
            tt.insert("value".into(), float_array(&t.value[..d]));
            tt.insert("profile".into(), profile_value(&t.profile));
            Value::Table(tt)
        })
        .collect();
    lt.insert("traction".into(), Value::Array(tr));
    doc.insert("loads".into(), Value::Table(lt));

    let mut tt = Table::new();
    tt.insert("t_final".into(), Value::Float(sc.t_final));
    tt.insert("steps".into(), Value::Integer(sc.steps as i64));
    tt.insert("eps".into(), Value::Float(sc.eps));
    tt.insert("theta0".into(), Value::Float(sc.theta0));
    tt.insert("isothermal".into(), Value::Boolean(sc.isothermal));
    let taus: Vec<f64> = cfg
        .steps_list
        .iter()
        .map(|n| sc.t_final / *n as f64)
        .collect();
    tt.insert("tau_list".into(), float_array(&taus));
    tt.insert("eps_list".into(), float_array(&cfg.eps_list));
    doc.insert("time".into(), Value::Table(tt));

    let sv = &sc.solver;
    let mut st = Table::new();
    st.insert("tol_mech".into(), Value::Float(sv.tol_mech));
    st.insert("max_newton".into(), Value::Integer(sv.max_newton as i64));
    st.insert(
        "max_backtracks".into(),
        Value::Integer(sv.max_backtracks as i64),
    );
    st.insert("det_gate".into(), Value::Float(sv.det_gate));
    st.insert("tol_heat".into(), Value::Float(sv.tol_heat));
    st.insert("tol_pos".into(), Value::Float(sv.tol_pos));
    st.insert(
        "max_halvings".into(),
        Value::Integer(sv.max_halvings as i64),
    );
    doc.insert("solver".into(), Value::Table(st));

    let o = &cfg.output;
    let mut ot = Table::new();
    ot.insert("dir".into(), o.dir.to_string_lossy().into_owned().into());
    let diag = match o.diagnostics {
        DiagnosticsLevel::Basic => "basic",
        DiagnosticsLevel::Full => "full",
    };
    ot.insert("diagnostics".into(), diag.into());
    ot.insert("korn_every".into(), Value::Integer(o.korn_every as i64));
    let fields = match o.fields {
        FieldDumps::All => "all",
        FieldDumps::Final => "final",
        FieldDumps::None => "none",
    };
    ot.insert("fields".into(), fields.into());
    ot.insert("seed".into(), Value::Integer(o.seed as i64));
    ot.insert("checkpoint".into(), Value::Boolean(o.checkpoint));
    doc.insert("output".into(), Value::Table(ot));

    toml::to_string(&doc).expect("a TOML table always serializes")
}

// ---- outputs --------------------------------------------------------------------------

fn io_context(e: std::io::Error, path: &Path) -> Error {
    Error::Io(std::io::Error::new(
        e.kind(),
        format!("{}: {e}", path.display()),
    ))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| io_context(e, path))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| io_context(e, path))
}

/// Shortest text that parses back to the same binary64, padded to 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        format!("{x}").to_lowercase()
    }
}

/// The timeseries table as text, including the version comment and header.
pub fn timeseries_csv(rows: &[StepDiagnostics]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(TIMESERIES_COLUMNS)?;
    for r in rows {
        let e = &r.energies;
        let l = &r.ledger;
        let nan = f64::NAN;
        let vals = [
            r.t,
            e.m,
            e.h,
            e.phi_cpl,
            e.w,
            e.e,
            l.xi_step,
            l.xi_reg_step,
            l.ext_power,
            l.boundary_heat,
            l.entropy_prod,
            e.min_det,
            r.hk.map_or(nan, |h| h.bound),
            r.korn.unwrap_or(nan),
            r.mech_residual,
            r.heat_residual,
            l.energy_gap_total,
            e.min_theta,
        ];
        let mut rec = vec![r.step.to_string()];
        rec.extend(vals.iter().map(|v| fmt_f64(*v)));
        w.write_record(&rec)?;
    }
    let body = String::from_utf8(w.into_inner().map_err(|e| Error::Io(e.into_error()))?)
        .expect("csv output is UTF-8");
    Ok(format!(
        "# thermovisco timeseries v{TIMESERIES_VERSION}\n{body}"
    ))
}

/// Contents of one field dump.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldDump {
    pub version: u32,
    pub d: usize,
    pub cells: Vec<usize>,
    pub step: usize,
    pub t: f64,
    /// Named arrays in file order: `y`, `theta`, `w`, `det_f`.
    pub arrays: Vec<(String, Vec<f64>)>,
}

impl FieldDump {
    pub fn array(&self, name: &str) -> Option<&[f64]> {
        self.arrays
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, a)| a.as_slice())
    }
}

/// Serializes one snapshot.
///
/// The file starts with ASCII header lines and ends with raw little-endian `f64`s:
///
/// ```text
/// THERMOVISCO-FIELDS
/// version 1
/// dtype f64
/// byte_order little
/// d 2
/// cells 16 16
/// step 50
/// t 1.0000000000000000e0
/// array y 2312 8       name, length, values per node
/// array theta 289 1
/// array w 4096 1       one value per quadrature point
/// array det_f 4096 1
/// end
/// <payload: the arrays back to back>
/// ```
///
/// `y` holds the Hermite coefficients node by node, ordered `(derivative kind,
/// component)`; kind bit `a` set means the derivative along axis `a`. Nodes are
/// numbered with the first axis fastest. Quadrature points are numbered cell by
/// cell (first axis fastest), then point by point within a cell.
pub fn field_dump_bytes(model: &Model, snapshot: &Snapshot, step: usize) -> Vec<u8> {
    let g = &model.grid;
    let det: Vec<f64> = g
        .kinematics(&snapshot.y)
        .f
        .iter()
        .map(|f| f.det())
        .collect();
    let arrays: [(&str, &[f64], usize); 4] = [
        ("y", &snapshot.y.values, snapshot.y.per_node),
        ("theta", &snapshot.theta.values, 1),
        ("w", &snapshot.w, 1),
        ("det_f", &det, 1),
    ];
    let mut head = String::new();
    let _ = writeln!(head, "{FIELD_MAGIC}");
    let _ = writeln!(head, "version {FIELD_VERSION}");
    let _ = writeln!(head, "dtype f64");
    let _ = writeln!(head, "byte_order little");
    let _ = writeln!(head, "d {}", g.d);
    let cells: Vec<String> = g.spec.cells.iter().map(|c| c.to_string()).collect();
    let _ = writeln!(head, "cells {}", cells.join(" "));
    let _ = writeln!(head, "step {step}");
    let _ = writeln!(head, "t {}", fmt_f64(snapshot.t));
    for (name, a, per) in &arrays {
        let _ = writeln!(head, "array {name} {} {per}", a.len());
    }
    let _ = writeln!(head, "end");
    let mut out = head.into_bytes();
    for (_, a, _) in &arrays {
        for v in a.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn write_field_dump(
    path: &Path,
    model: &Model,
    snapshot: &Snapshot,
    step: usize,
) -> Result<()> {
    write_file(path, &field_dump_bytes(model, snapshot, step))
}

fn bad_dump(msg: impl Into<String>) -> Error {
    Error::Io(std::io::Error::new(
        std::io::ErrorKind::InvalidData,
        msg.into(),
    ))
}

pub fn parse_field_dump(bytes: &[u8]) -> Result<FieldDump> {
    let mut pos = 0;
    let mut lines = Vec::new();
    loop {
        let end = bytes[pos..]
            .iter()
            .position(|b| *b == b'\n')
            .ok_or_else(|| bad_dump("unterminated header"))?;
        let line = std::str::from_utf8(&bytes[pos..pos + end])
            .map_err(|_| bad_dump("header is not UTF-8"))?;
        pos += end + 1;
        if line == "end" {
            break;
        }
        lines.push(line.to_string());
    }
    if lines.first().map(String::as_str) != Some(FIELD_MAGIC) {
        return Err(bad_dump("missing magic line"));
    }
    let mut dump = FieldDump {
        version: 0,
        d: 0,
        cells: Vec::new(),
        step: 0,
        t: 0.0,
        arrays: Vec::new(),
    };
    let mut specs = Vec::new();
    for line in &lines[1..] {
        let mut it = line.split_whitespace();
        let key = it.next().unwrap_or("");
        let rest: Vec<&str> = it.collect();
        let num = |s: Option<&&str>| -> Result<usize> {
            s.and_then(|s| s.parse().ok())
                .ok_or_else(|| bad_dump(format!("bad header line `{line}`")))
        };
        match key {
            "version" => dump.version = num(rest.first())? as u32,
            "dtype" if rest.first() != Some(&"f64") => {
                return Err(bad_dump("only f64 payloads are supported"))
            }
            "byte_order" if rest.first() != Some(&"little") => {
                return Err(bad_dump("only little-endian payloads are supported"))
            }
            "dtype" | "byte_order" => {}
            "d" => dump.d = num(rest.first())?,
            "cells" => dump.cells = rest.iter().map(|s| num(Some(s))).collect::<Result<_>>()?,
            "step" => dump.step = num(rest.first())?,
            "t" => {
                dump.t = rest
                    .first()
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| bad_dump("bad time"))?
            }
            "array" => specs.push((rest.first().unwrap_or(&"").to_string(), num(rest.get(1))?)),
            _ => return Err(bad_dump(format!("unknown header line `{line}`"))),
        }
    }
    if dump.version != FIELD_VERSION {
        return Err(bad_dump(format!(
            "unsupported field dump version {}",
            dump.version
        )));
    }
    for (name, len) in specs {
        let n = len * 8;
        let chunk = bytes
            .get(pos..pos + n)
            .ok_or_else(|| bad_dump("payload is truncated"))?;
        let vals = chunk
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        dump.arrays.push((name, vals));
        pos += n;
    }
    if pos != bytes.len() {
        return Err(bad_dump("trailing bytes after payload"));
    }
    Ok(dump)
}

pub fn read_field_dump(path: &Path) -> Result<FieldDump> {
    parse_field_dump(&fs::read(path).map_err(|e| io_context(e, path))?)
}

/// Structured summary of one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub format_version: u32,
    pub name: String,
    pub config_hash: String,
    pub steps: usize,
    pub tau: f64,
    pub eps: f64,
    pub isothermal: bool,
    pub certificates: Vec<Certificate>,
    pub weak_residuals: Option<WeakResiduals>,
    /// The Holder constant inside the determinant bound is a grid estimate.
    pub hk_note: Option<String>,
    pub newton_iterations: usize,
    pub heat_iterations: usize,
    pub halvings: usize,
    pub shifted_iterations: usize,
    pub passed: bool,
}

impl Report {
    pub fn new(
        cfg: &RunConfig,
        traj: &Trajectory,
        certs: Vec<Certificate>,
        weak: Option<WeakResiduals>,
    ) -> Self {
        let sum = |f: fn(&StepRecord) -> usize| traj.steps.iter().map(f).sum();
        let hk_note = certs
            .iter()
            .any(|c| c.name == "hk_bound")
            .then(|| "estimated Hölder constant".to_string());
        Self {
            format_version: 1,
            name: traj.scenario.name.clone(),
            config_hash: cfg.hash(),
            steps: traj.steps.len(),
            tau: traj.scenario.tau(),
            eps: traj.eps,
            isothermal: traj.scenario.isothermal,
            passed: certs.iter().all(|c| c.passed),
            certificates: certs,
            weak_residuals: weak,
            hk_note,
            newton_iterations: sum(|r| r.mech_iterations),
            heat_iterations: sum(|r| r.heat_iterations),
            halvings: sum(|r| r.halvings),
            shifted_iterations: sum(|r| r.shifted_iterations),
        }
    }
}

/// All snapshots of a trajectory together with the hash of the configuration that produced them.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config_hash: String,
    pub eps: f64,
    pub snapshots: Vec<CheckpointSnapshot>,
    pub steps: Vec<StepRecord>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckpointSnapshot {
    pub t: f64,
    pub y_per_node: usize,
    pub y: Vec<f64>,
    pub theta: Vec<f64>,
    pub w: Vec<f64>,
}

impl Checkpoint {
    pub const FORMAT: &'static str = "thermovisco-checkpoint";

    pub fn new(cfg: &RunConfig, traj: &Trajectory) -> Self {
        Self {
            format: Self::FORMAT.into(),
            version: 1,
            config_hash: cfg.hash(),
            eps: traj.eps,
            snapshots: traj
                .snapshots
                .iter()
                .map(|s| CheckpointSnapshot {
                    t: s.t,
                    y_per_node: s.y.per_node,
                    y: s.y.values.clone(),
                    theta: s.theta.values.clone(),
                    w: s.w.clone(),
                })
                .collect(),
            steps: traj.steps.clone(),
        }
    }

    /// Rebuilds the trajectory; the configuration must hash to the stored value.
    pub fn into_trajectory(self, cfg: &RunConfig) -> Result<Trajectory> {
        if self.format != Self::FORMAT || self.version != 1 {
            return Err(Error::Checkpoint(format!(
                "unsupported format {} v{}",
                self.format, self.version
            )));
        }
        let hash = cfg.hash();
        if self.config_hash != hash {
            return Err(Error::Checkpoint(format!(
                "hash {} != {hash}",
                self.config_hash
            )));
        }
        if self.snapshots.is_empty() {
            return Err(Error::Checkpoint("no snapshots".into()));
        }
        Ok(Trajectory {
            scenario: cfg.scenario.clone(),
            eps: self.eps,
            snapshots: self
                .snapshots
                .into_iter()
                .map(|s| Snapshot {
                    t: s.t,
                    y: NodalField {
                        per_node: s.y_per_node,
                        values: s.y,
                    },
                    theta: NodalField {
                        per_node: 1,
                        values: s.theta,
                    },
                    w: s.w,
                })
                .collect(),
            steps: self.steps,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, serde_json::to_string(self)?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| io_context(e, path))?;
        Ok(serde_json::from_str(&text)?)
    }
}

// ---- orchestration --------------------------------------------------------------------

/// Everything a run produces in memory.
pub struct RunOutcome {
    pub model: Model,
    pub trajectory: Trajectory,
    pub rows: Vec<StepDiagnostics>,
    pub report: Report,
}

/// Evaluates diagnostics and certificates of a finished trajectory.
pub fn assess(cfg: &RunConfig, model: Model, trajectory: Trajectory) -> Result<RunOutcome> {
    let rows = run_diagnostics(&model, &trajectory, &cfg.diag_options())?;
    let certs = certificates(&rows, &CertTolerances::default());
    let weak = match cfg.output.diagnostics {
        DiagnosticsLevel::Full => Some(weak_residuals_with(
            &model,
            &trajectory,
            &seeded_test_bank(model.grid.d, cfg.output.seed),
        )?),
        DiagnosticsLevel::Basic => None,
    };
    let report = Report::new(cfg, &trajectory, certs, weak);
    Ok(RunOutcome {
        model,
        trajectory,
        rows,
        report,
    })
}

/// Runs the configured scenario and its certificates without touching the disk.
pub fn simulate(cfg: &RunConfig) -> Result<RunOutcome> {
    let model = cfg.scenario.model()?;
    let traj = run(&model, &cfg.scenario, cfg.scenario.steps, cfg.scenario.eps)?;
    assess(cfg, model, traj)
}

/// Continues from a checkpoint written by the same configuration.
pub fn simulate_from(cfg: &RunConfig, checkpoint: Checkpoint) -> Result<RunOutcome> {
    let model = cfg.scenario.model()?;
    let traj = resume(&model, checkpoint.into_trajectory(cfg)?, cfg.scenario.steps)?;
    assess(cfg, model, traj)
}

/// Writes the timeseries, field dumps, report, checkpoint and expanded configuration.
pub fn emit_outputs(cfg: &RunConfig, outcome: &RunOutcome, dir: &Path) -> Result<()> {
    create_dir(dir)?;
    write_file(&dir.join("config.toml"), to_toml(cfg).as_bytes())?;
    write_file(
        &dir.join("timeseries.csv"),
        timeseries_csv(&outcome.rows)?.as_bytes(),
    )?;
    let snaps = &outcome.trajectory.snapshots;
    let picked: Vec<usize> = match cfg.output.fields {
        FieldDumps::All => (0..snaps.len()).collect(),
        FieldDumps::Final => vec![snaps.len() - 1],
        FieldDumps::None => Vec::new(),
    };
    if !picked.is_empty() {
        let fdir = dir.join("fields");
        create_dir(&fdir)?;
        for k in picked {
            write_field_dump(
                &fdir.join(format!("snap_{k:05}.bin")),
                &outcome.model,
                &snaps[k],
                k,
            )?;
        }
    }
    let mut json = serde_json::to_string_pretty(&outcome.report)?;
    json.push('\n');
    write_file(&dir.join("report.json"), json.as_bytes())?;
    if cfg.output.checkpoint {
        Checkpoint::new(cfg, &outcome.trajectory).save(&dir.join("checkpoint.json"))?;
    }
    Ok(())
}

/// Runs the refinement study of the configuration and writes its tables.
///
/// `refinement.json` holds the full report; `refinement_cells.csv` has one row per
/// `(tau, eps)` cell and `refinement_cauchy.csv` the differences between consecutive
/// cells of each sweep.
pub fn refine(cfg: &RunConfig, dir: Option<&Path>) -> Result<RefinementReport> {
    let steps = if cfg.steps_list.is_empty() {
        vec![cfg.scenario.steps]
    } else {
        cfg.steps_list.clone()
    };
    let eps = if cfg.eps_list.is_empty() {
        vec![cfg.scenario.eps]
    } else {
        cfg.eps_list.clone()
    };
    let (report, _, _) = refinement_study(&cfg.scenario, &steps, &eps)?;
    if let Some(dir) = dir {
        create_dir(dir)?;
        let mut json = serde_json::to_string_pretty(&report)?;
        json.push('\n');
        write_file(&dir.join("refinement.json"), json.as_bytes())?;
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "sweep",
            "tau",
            "eps",
            "steps",
            "dissipation",
            "reg_dissipation",
            "eps_rate",
            "xi_gap",
        ])?;
        for (sweep, cells) in [("tau", &report.tau_cells), ("eps", &report.eps_cells)] {
            for c in cells {
                let mut rec = vec![
                    sweep.to_string(),
                    fmt_f64(c.tau),
                    fmt_f64(c.eps),
                    c.steps.to_string(),
                ];
                rec.extend(
                    [c.dissipation, c.reg_dissipation, c.eps_rate, c.xi_gap]
                        .iter()
                        .map(|v| fmt_f64(*v)),
                );
                w.write_record(&rec)?;
            }
        }
        write_file(
            &dir.join("refinement_cells.csv"),
            &w.into_inner().map_err(|e| Error::Io(e.into_error()))?,
        )?;
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["sweep", "pair", "grad_y", "theta"])?;
        for (sweep, diffs) in [("tau", &report.tau_cauchy), ("eps", &report.eps_cauchy)] {
            for (i, c) in diffs.iter().enumerate() {
                w.write_record([
                    sweep.to_string(),
                    i.to_string(),
                    fmt_f64(c.grad_y),
                    fmt_f64(c.theta),
                ])?;
            }
        }
        write_file(
            &dir.join("refinement_cauchy.csv"),
            &w.into_inner().map_err(|e| Error::Io(e.into_error()))?,
        )?;
    }
    Ok(report)
}

/// One line per certificate, for terminals.
pub fn certificate_lines(certs: &[Certificate]) -> String {
    let mut s = String::new();
    for c in certs {
        let _ = writeln!(
            s,
            "{:<22} {}  worst {:>12.4e}  ({})",
            c.name,
            if c.passed { "PASS" } else { "FAIL" },
            c.worst,
            c.detail
        );
    }
    s
}

/// Writes `text` to stdout without panicking on a closed pipe.
pub fn print(text: &str) {
    let _ = std::io::stdout().write_all(text.as_bytes());
}

/// Trend checks of a refinement study: Cauchy differences of the time-step sweep and
/// the `xi` gap and `eps` rate of the `eps` sweep must decrease along the sweep.
pub fn refinement_checks(report: &RefinementReport) -> Vec<Certificate> {
    fn decreasing(x: &[f64]) -> (bool, f64) {
        let worst = x.windows(2).map(|w| w[1] / w[0]).fold(0.0, f64::max);
        (x.windows(2).all(|w| w[1] < w[0]), worst)
    }
    let mut out = Vec::new();
    let mut push = |name: &str, x: Vec<f64>, detail: &str| {
        if x.len() >= 2 {
            let (passed, worst) = decreasing(&x);
            out.push(Certificate {
                name: name.into(),
                passed,
                worst,
                detail: detail.into(),
            });
        }
    };
    push(
        "tau_cauchy_grad_y",
        report.tau_cauchy.iter().map(|c| c.grad_y).collect(),
        "ratio of consecutive differences < 1",
    );
    push(
        "tau_cauchy_theta",
        report.tau_cauchy.iter().map(|c| c.theta).collect(),
        "ratio of consecutive differences < 1",
    );
    push(
        "eps_xi_gap",
        report.eps_cells.iter().map(|c| c.xi_gap).collect(),
        "ratio of consecutive gaps < 1",
    );
    push(
        "eps_rate",
        report.eps_cells.iter().map(|c| c.eps_rate).collect(),
        "ratio of consecutive eps rates < 1",
    );
    out
}
