//! Large-strain Kelvin-Voigt thermoviscoelasticity on structured grids.
//!
//! The deformation is a `C^1` cubic Hermite field, so the second gradient entering
//! the hyperstress is a genuine function; the temperature is continuous multilinear.
//! Each time step first minimizes an incremental mechanical functional at frozen
//! temperature and then solves a convex heat problem for the new temperature.
//!
//! * [`material`]: constitutive functions and their derivatives.
//! * [`grid`]: Hermite and multilinear spaces, quadrature and assembly.
//! * [`mech_step`], [`heat_step`]: the two half-steps.
//! * [`scheme`]: scenarios, loads, the time loop and refinement studies.
//! * [`diagnostics`]: energy and entropy ledgers, certificates, weak residuals.
//! * [`cli_io`]: configuration files and outputs.

pub mod cli_io;
pub mod diagnostics;
pub mod error;
pub mod grid;
pub mod heat_step;
pub mod linalg;
pub mod material;
pub mod mech_step;
pub mod model;
pub mod scheme;
pub mod tensor;

pub use error::{Error, Result};
pub use model::{Model, SolverSettings};
pub use scheme::Scenario;
