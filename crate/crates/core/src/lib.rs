//! Zero-shot human-object interaction detection building blocks: box
//! geometry, optimal assignment, two-stage pair matching, teacher soft
//! targets, training losses and triplet evaluation.

pub mod assignment;
pub mod distillation;
pub mod evaluation;
pub mod geometry;
pub mod harness;
pub mod losses;
pub mod matching;
