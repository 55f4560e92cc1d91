//! Numeric substrate: dense matrices, seeded randomness, symmetric solvers,
//! the ReLU MLP with manual backpropagation, Adam, and a gradient checker.

pub mod adam;
pub mod gradcheck;
pub mod linalg;
pub mod matrix;
pub mod mlp;
pub mod orthogonal;
pub mod rng;

pub use adam::Adam;
pub use gradcheck::grad_check;
pub use linalg::{determinant, solve_spd, symmetric_eigen, Cholesky, SymmetricEigen};
pub use matrix::{column_stats, dot, squared_distance, standardize_columns, ColumnStats, Matrix};
pub use mlp::{ForwardCache, MlpNet};
pub use orthogonal::{orthogonality_error, random_orthogonal, OrthogonalMatrix};
pub use rng::{mix_seed, SeededRng};
