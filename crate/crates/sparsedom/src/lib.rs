//! A desk-scale laboratory for multi-scale sparse domination.
//!
//! The crate implements, exercises and empirically verifies the machinery of
//! bilinear-form sparse domination for multi-scale operator families: dyadic
//! lattices with Whitney and Calderón–Zygmund decompositions, sparse families
//! with verifiable certificates, a constructive domination engine, an
//! operator-norm estimation toolkit, maximal/variation operators and Fourier
//! multiplier functionals, plus a zoo of concrete convolution operators.
//!
//! Everything acts on functions sampled on a uniform grid over `[-L, L]^d`
//! (`d = 1, 2`); measures are cell counts, so all set identities are exact.

pub mod dominator;
pub mod mask;
pub mod dyadic;
pub mod fft;
pub mod grid;
pub mod maxvar;
pub mod multiplier;
pub mod normlab;
pub mod operators;
pub mod seq;
pub mod sparse;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty cube: no grid cells of the working extent lie in the cube")]
    EmptyCube,
    #[error("wraparound: supports too large for periodic convolution on this grid")]
    Wraparound,
    #[error("grid mismatch between operands")]
    GridMismatch,
    #[error("offset is not grid-aligned")]
    NotGridAligned,
    #[error("no complement: the open set covers the working extent")]
    NoComplement,
    #[error("root not found: support not contained in an admissible lattice cube")]
    RootNotFound,
    #[error("scale range too long: {0} scales (limit {1})")]
    RangeTooLong(usize, usize),
    #[error("not a triple family: {0}")]
    NotTripleFamily(String),
    #[error("unknown symbol `{0}`")]
    UnknownSymbol(String),
    #[error("ascent diverged: {0}")]
    AscentDiverged(String),
    #[error("invalid parameter: {0}")]
    BadParameter(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
