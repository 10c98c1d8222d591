//! Measure how stable a vision-language model's answers are under visual and
//! textual perturbations, and use that stability to predict correctness.
//!
//! The crate is organised by stage: [`vperturb`] and [`tperturb`] build
//! perturbed inputs, [`modelio`] queries chat endpoints, [`stability`] turns
//! answer logs into per-sample profiles, [`stats`] and [`predictor`] analyse
//! them, and [`pipeline`] wires everything to on-disk artifacts.

pub mod corpus;
pub mod fixture;
pub mod modelio;
pub mod pipeline;
pub mod predictor;
pub mod stability;
pub mod stats;
pub mod tperturb;
pub mod vperturb;
