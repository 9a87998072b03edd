//! Numerical laboratory for retrospective second-order mean field games on
//! rectangular prisms.

pub mod carleman;
pub mod error;
pub mod expr;
pub mod family;
pub mod forward;
pub mod grid;
pub mod io;
pub mod ops;
pub mod retro;

pub use error::{Error, Result};
