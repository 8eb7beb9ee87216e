//! Fisher market equilibria and their generalizations: earning caps, utility
//! caps, quasi-linear and spending-constraint utilities. Includes
//! verification, exact rational extraction and the Nash social welfare
//! rounding pipeline.

pub mod conjugate;
pub mod model;
pub mod solver;
pub mod verify;
pub mod random;
pub mod rational;
pub mod nsw;
