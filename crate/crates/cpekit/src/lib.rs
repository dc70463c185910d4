//! Toolkit for excitation analysis of multiple short signals: collective
//! persistency-of-excitation checks (mosaic / cumulative / hybrid
//! compositions), minimal-length experiment design, data-driven
//! identification and control built on those excitation guarantees, and a
//! small complexity benchmark.

pub mod bench;
pub mod control;
pub mod design;
pub mod error;
pub mod hankel;
pub mod ident;
pub mod informativity;
pub mod linalg;
pub mod traj;

pub use error::{Error, Result};
