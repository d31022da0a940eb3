//! Dynamic matrix, weighting construction, the unconstrained two-term and
//! three-term control laws, and the receding-horizon controller.

mod controller;
mod law;
mod matrix;
mod spec;
mod state;

pub use controller::{DmcController, QpStats, StepOutcome};
pub use law::{
    factor_normal_matrix, first_move, increment_hessian, move_selector, solve_three_term, solve_two_term,
    three_term_gradient, three_term_hessian, three_term_loss, three_term_rhs, two_term_hessian, two_term_rhs,
    Regularization, UnconstrainedLaw,
};
pub use matrix::{build_dynamic_matrix, DynamicMatrix, WeightingSet};
pub use spec::{Bounds, ControllerSpec};
pub use state::PredictionState;
