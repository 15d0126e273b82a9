//! Thermodynamic formalism for interval maps: cylinder partitions, Hofbauer
//! towers, first-return inducing schemes, induced pressure, Gibbs and
//! equilibrium states for `phi_t = -t log|Df|`, and stability experiments
//! across perturbed map families.

pub mod cylinders;
pub mod density;
pub mod dump;
pub mod error;
pub mod graph;
pub mod inducing;
pub mod maps;
pub mod plot;
pub mod roots;
pub mod stability;
pub mod thermo;
pub mod tower;

pub use error::{Error, Result};
