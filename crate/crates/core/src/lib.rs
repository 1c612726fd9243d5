//! Sequence/graph co-modeling of peptides.
//!
//! A transformer encodes the amino-acid sequence, a neighborhood-mean graph
//! network encodes a coarse-grained bead graph of the same peptide, and the
//! two representations are either fused for a shared predictor or tied
//! together with an in-batch contrastive loss while each route keeps its own
//! predictor. Integrated-gradients attribution and rank/distribution metrics
//! compare what the routes attend to.

pub mod attribution;
pub mod autodiff;
pub mod cli;
pub mod data;
pub mod encoders;
pub mod fusion;
pub mod metrics;
pub mod params;
pub mod training;
