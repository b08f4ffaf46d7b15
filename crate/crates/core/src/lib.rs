//! Cubic stochastic matrices, Maksimov products and quadratic stochastic
//! processes, with numerical Kolmogorov-Chapman verification.

// `!(a < b)` is deliberate: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cubic;
pub mod error;
pub mod evolution;
pub mod families;
pub mod fmt;
pub mod markov_square;
pub mod square;
pub mod timefn;
pub mod twins;
pub mod verify;

pub use cubic::{BinaryOpTable, CubicMatrix, StochCheck, StochKind, StructConstants};
pub use error::{Error, Result};
pub use evolution::{Distribution, Trajectory, TrajectoryMode};
pub use families::{CubicProcessFamily, MatrixFlow, Product, TimeDependence};
pub use markov_square::{Descriptor, SquareProcessFamily};
pub use square::SquareMatrix;
pub use timefn::{Expr, FunctionClaim, Property, ScalarTimeFunction};
pub use twins::{TwinMode, TwinModelParams, TwinReport};
pub use verify::{TimeGrid, Validation, VerificationReport};
