//! Dynamic optimal energy flow for integrated electricity, gas and heat
//! systems using frequency-domain energy circuits.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod circuit;
pub mod network;
pub mod qp;
pub mod scenario;
pub mod spectral;
pub mod cases;
pub mod compaction;
pub mod flowcalc;
pub mod model;
pub mod fdm;
pub mod plot;
pub mod report;
