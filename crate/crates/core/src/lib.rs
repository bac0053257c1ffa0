//! Symbolic discovery of ODE right-hand sides with the finite expression method.
//!
//! Each state component is searched independently: a controller proposes
//! operator sequences for a small fixed tree, each sequence's parameters are
//! fitted against a one-step Euler residual, and the best expressions are
//! stacked into a vector field that can be rolled forward in time.

pub mod config;
pub mod controller;
pub mod dataset;
pub mod epi;
pub mod expr;
pub mod forecast;
pub mod io;
pub mod loss;
pub mod optim;
pub mod pipeline;
pub mod search;

pub use dataset::{Trajectory, TrajectoryDataset};
pub use expr::{
    BinaryOp, CompiledExpression, ExpressionParams, Operator, OperatorSequence, OperatorSet,
    TemplateKind, TreeTemplate, UnaryOp,
};
pub use search::{ScoreRecord, SearchConfig, SystemModel};
