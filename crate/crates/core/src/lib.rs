//! Core library for making scripted computational experiments reproducible
//! and publishable.
//!
//! The crate follows the three steps of the workflow:
//!
//! 1. **Package**: [`scan`] extracts dependencies and functions from R and
//!    Python scripts, [`envspec`] turns them into a declarative environment
//!    specification, and [`bundle`] writes a deterministic archive.
//! 2. **Re-execute**: [`capture`] runs the experiment as a black box,
//!    snapshots the file tree before and after, and records the trial in the
//!    relational [`store`].
//! 3. **Publish**: [`publish`] assembles the bundle, environment spec and
//!    provenance export with a FAIR metadata manifest and deposits it.
//!
//! [`verify`] compares trials and classifies the reproducibility levels
//! reached, using the entity model in [`model`].

pub mod bundle;
pub mod canonical;
pub mod capture;
pub mod config;
pub mod digest;
pub mod envspec;
pub mod model;
pub mod publish;
pub mod relpath;
pub mod scan;
pub mod store;
pub mod timestamp;
pub mod verify;
