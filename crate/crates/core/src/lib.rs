//! Score-based Bayesian network structure learning compiled to QUBO.
//!
//! The pipeline: discretize a dataset ([`dataset`]), select parent set
//! candidates per variable with repeated CART training ([`cart`],
//! [`pscs`]), encode the candidate-restricted search as a QUBO with order
//! bits for acyclicity ([`encoder`]), minimize it ([`solver`]), then decode
//! and audit the result against brute-force oracles ([`verify`]).

pub mod cart;
pub mod dataset;
pub mod encoder;
pub mod graph;
pub mod metrics;
pub mod pipeline;
pub mod pscs;
pub mod qubo;
pub mod solver;
pub mod split;
pub mod varset;
pub mod verify;

pub use varset::VarSet;
