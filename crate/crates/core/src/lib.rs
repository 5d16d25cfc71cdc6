//! Multimodal clinical rationale distillation.
//!
//! The pipeline turns EHR records (a free-text note plus a multivariate lab
//! series) into training data for a small encoder-decoder model: lab
//! anomalies are captioned, a teacher writes note- and lab-based
//! rationales, and the student is trained in three phases (note only, lab
//! encoder against a frozen student, then both jointly).

pub mod caption;
pub mod corpus;
mod error;
pub mod evaluation;
pub mod io;
pub mod knowledge;
pub mod model;
pub mod teacher;
pub mod training;

pub use error::{Error, Result, TeacherError};
