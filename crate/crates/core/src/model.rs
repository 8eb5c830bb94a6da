//! A discretized body: grid, material, solver settings and cached factorizations.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::grid::{GridSpec, StructuredGrid};
use crate::linalg::CholeskySolver;
use crate::material::MaterialModel;

/// Tolerances and iteration limits of the two sub-solvers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverSettings {
    /// Newton stops once the free residual drops below this fraction of its initial value.
    pub tol_mech: f64,
    pub max_newton: usize,
    pub max_backtracks: usize,
    /// A trial state must keep `min det F` above this fraction of the previous minimum.
    pub det_gate: f64,
    pub tol_heat: f64,
    /// Nodal temperatures down to `-tol_pos` are accepted and clamped to zero.
    pub tol_pos: f64,
    /// Number of times a failing step may be split in half.
    pub max_halvings: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            tol_mech: 1e-8,
            max_newton: 50,
            max_backtracks: 40,
            det_gate: 0.1,
            tol_heat: 1e-9,
            tol_pos: 1e-10,
            max_halvings: 4,
        }
    }
}

pub struct Model {
    pub grid: StructuredGrid,
    pub material: MaterialModel,
    pub solver: SolverSettings,
    /// Drop the thermal coupling from the mechanical problem and skip the heat step.
    pub isothermal: bool,
    pub(crate) y_chol: CholeskySolver,
    pub(crate) t_chol: CholeskySolver,
}

impl Model {
    pub fn new(
        spec: GridSpec,
        material: MaterialModel,
        solver: SolverSettings,
        isothermal: bool,
    ) -> Result<Self> {
        material.validate()?;
        let grid = StructuredGrid::new(spec)?;
        if grid.d != material.d {
            return Err(crate::error::Error::Dimension(format!(
                "grid has d = {} but material has d = {}",
                grid.d, material.d
            )));
        }
        let y_chol = CholeskySolver::new(grid.y_pattern());
        let t_chol = CholeskySolver::new(grid.t_pattern());
        Ok(Self {
            grid,
            material,
            solver,
            isothermal,
            y_chol,
            t_chol,
        })
    }
}
