//! Closed-loop CGRA hardware/software co-design.
//!
//! The pipeline proposes joint fabric + compiler parameter candidates, maps
//! the target kernel onto each one (repairing failures), narrows the survivors
//! with a coarse judge, picks one per iteration with an adaptive-confidence
//! switch between tool evaluation and a learned judge, and feeds the results
//! back into the next round of proposals.

pub mod agents;
pub mod arch;
pub mod cli;
pub mod kernel;
pub mod costs;
pub mod mapper;
pub mod orchestrate;
pub mod select;
