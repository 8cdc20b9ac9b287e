//! Exponential time differencing (ETD2RK/3RK/4RK) for stiff semilinear
//! systems `u' = L u + f(u, t)`, with coefficient matrices built numerically
//! from auxiliary linear problems instead of matrix exponentials.

pub mod bench;
pub mod cache;
pub mod coeffs;
pub mod error;
pub mod matrix;
pub mod problems;
pub mod schemes;
pub mod sparse;
pub mod system;

pub use coeffs::{
    apply_linear_to_matrix, build_coefficients, build_m, build_q, residuals, snap_aux_stepsize, BuildOptions, CoefficientResiduals,
    EtdCoefficients,
};
pub use error::{EtdError, Result};
pub use matrix::{DenseMatrix, MatVec};
pub use problems::{build_problem, initial_condition, GridSpec, ModelProblem, ProblemKind};
pub use schemes::{etd2rk_step, etd3rk_step, etd4rk_step, etd_integrate, EtdStepper, Integration, NnzReport, SchemeId};
pub use sparse::{sparsify, Operator, SparseMatrix, SparsityStats};
pub use system::{pc_integrate, pc_step, SemiLinearSystem, State};
