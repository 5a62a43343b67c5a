use thiserror::Error;

use super::Shape;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("data length {len} does not match shape {shape}")]
    DataLength { shape: Shape, len: usize },

    #[error("{op}: shape mismatch between {lhs} and {rhs}")]
    ShapeMismatch { op: &'static str, lhs: Shape, rhs: Shape },

    #[error("cannot reshape {from} into {to}")]
    Reshape { from: Shape, to: Shape },

    #[error("{op}: domain error: {detail}")]
    Domain { op: &'static str, detail: String },

    #[error("conv2d: kernel {kh}x{kw} larger than padded input {h}x{w}")]
    KernelTooLarge { kh: usize, kw: usize, h: usize, w: usize },

    #[error("{op}: invalid argument: {detail}")]
    InvalidArgument { op: &'static str, detail: String },

    #[error("down2x requires even height and width, got {h}x{w}")]
    OddDimension { h: usize, w: usize },

    #[error("patch size {p} does not divide {h}x{w}; pad the input first")]
    NotDivisible { h: usize, w: usize, p: usize },

    #[error("attention needs at least one key")]
    EmptyKeys,

    #[error("{0}: empty input")]
    Empty(&'static str),

    #[error("backward requires a scalar loss, got shape {0}")]
    NonScalarLoss(Shape),
}
