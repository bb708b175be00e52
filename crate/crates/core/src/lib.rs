//! Exact lifted inference for relational continuous models: products of
//! pairwise Gaussian potentials over exchangeable families of variables.
//!
//! The math is generic over [`Scalar`] (`f32` or `f64`); the aliases below fix
//! it to `f64`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dsl;
pub mod engine;
pub mod form;
pub mod linalg;
pub mod marginal;
pub mod model;
pub mod oracle;
pub mod scalar;
pub mod shatter;
pub mod synth;
pub mod validate;

pub use dsl::{parse_model, serialize_model, Diagnostic};
pub use engine::{
    fove_continuous, fove_continuous_with, split, EliminationStep, EngineError, EngineErrorKind, EngineOptions,
    Inference, Method, Mode,
};
pub use form::{integrate_scalar, FormAtom, FormError, PairwiseTerm};
pub use model::{Model, ModelBuilder, ModelError, RnPotential, TermSpec};
pub use oracle::{ground_cap, ground_marginal, ground_model, oracle_marginal, OracleError};
pub use scalar::Scalar;
pub use validate::{validate, ValidationReport};

pub type Form = form::LiftedQuadraticForm<f64>;
pub type Pairwise = form::PairwiseDecomposition<f64>;
pub type Marginal = marginal::QueryMarginal<f64>;
pub type Precision = oracle::PrecisionModel<f64>;
pub type Split = engine::SplitModel<f64>;
