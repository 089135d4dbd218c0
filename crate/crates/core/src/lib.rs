//! Conductivity imaging from the magnitude of a single interior current
//! density, in the presence of perfectly conducting and insulating
//! inclusions.
//!
//! The crate covers the whole numerical pipeline on a planar grid:
//!
//! * [`field`]: grids, masks, staggered fields, discrete gradient/divergence.
//! * [`forward`]: finite-contrast and limit conductivity solvers.
//! * [`synthesis`]: interior data `a = |J|`, admissibility checks, the
//!   disc/square phantom with a closed-form potential.
//! * [`least_gradient`]: the inverse solver minimising `∫ a |∇v|` with
//!   Dirichlet data, zero-set decomposition, inclusion labels and
//!   conductivity recovery.
//! * [`verify`]: level sets, co-area, level-set minimality and
//!   reconstruction from the full current field on a sub-region.
//! * [`io`], [`presets`], [`evaluate`], [`cli`]: file formats, named test
//!   configurations, error metrics and the command-line driver.

pub mod cli;
pub mod error;
pub mod evaluate;
pub mod field;
pub mod forward;
pub mod io;
pub mod least_gradient;
pub mod linalg;
pub mod presets;
pub mod synthesis;
pub mod verify;

pub use error::{CdiiError, Result};
