//! Distributed EDMD: agents holding column blocks of the snapshot data agree
//! on one Koopman operator through a proportional-integral consensus iteration.

pub mod consensus;
pub mod edmd;
pub mod graph;
pub mod linalg;
pub mod scenario;
