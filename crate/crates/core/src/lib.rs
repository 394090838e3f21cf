//! Adaptive state observers for linear time-varying descriptor systems,
//! built by turning state observation into on-line estimation of constant
//! unknowns (parameters and the initial error of a dynamic extension).

pub mod benchmark;
pub mod canonical;
pub mod descriptor;
pub mod estimation;
pub mod gpebo;
pub mod harness;
pub mod numerics;
