//! Segmental language models for unsupervised word segmentation.

pub mod cli;
pub mod corpus;
pub mod encoder;
pub mod eval;
pub mod lattice;
pub mod model;
pub mod numerics;
pub mod training;
