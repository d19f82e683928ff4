//! Ray, amplitude and interface-symbol numerics for piecewise-smooth acoustic
//! media with self-gravitation, together with the recovery procedures built on them.

pub mod amplitudes;
pub mod error;
pub mod gravity;
pub mod grid;
pub mod interface;
pub mod inversion;
pub mod math;
pub mod media;
pub mod ode;
pub mod rays;
pub mod ucp;
pub mod verify;

pub use error::{Error, Result};
pub use math::{Mat3, Poly3, Vec3};
