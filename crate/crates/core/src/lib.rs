//! Conservative solutions of the Camassa-Holm equation through a change to
//! characteristic variables in which wave breaking is a regular event.
//!
//! The pipeline runs `scenarios` → `grid` → (`nonlocal`, `dynamics`) →
//! `stepper` → `reconstruct` → `characteristics` → `report`.

pub mod characteristics;
pub mod dynamics;
pub mod error;
pub mod grid;
pub mod nonlocal;
pub mod reconstruct;
pub mod report;
pub mod scenarios;
pub mod stepper;

pub use error::{Error, Result};
