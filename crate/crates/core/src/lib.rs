//! Non-saturating recurrent units and gated baselines, trained on long-memory
//! benchmarks with a small reverse-mode autodiff engine.
//!
//! Modules build on each other in order: [`autodiff`] tapes, [`cells`]
//! step functions, [`tasks`] batches, the [`training`] loop and the
//! [`diagnostics`] built on top of it.

pub mod autodiff;
pub mod cells;
pub mod tasks;
pub mod training;
pub mod diagnostics;
