//! Lattice points in dilated Cygan-Koranyi balls on the Heisenberg groups H_q (q >= 3):
//! exact counts, the almost periodic expansion of the normalized error term, its
//! moments and its limiting value distribution.

pub mod arithmetic;
pub mod distribution;
pub mod empirical;
pub mod error;
pub mod lattice;
pub mod moments;
pub mod numeric;
pub mod phi;
pub mod verify;
pub mod voronoi;

pub use error::{Error, Result};
