//! Spacetime Markov length toolkit for noisy syndrome-extraction circuits.

pub mod codes;
pub mod decoder;
pub mod entropy;
pub mod foliation;
pub mod gf2;
pub mod hash;
pub mod markov;
pub mod pauli;
pub mod rng;
pub mod sampler;
pub mod spacetime;
pub mod tableau;
pub mod verify;

pub use codes::{repetition_code, toric_code, CodeFamily, CssCode};
pub use gf2::{BitMatrix, BitVec};
pub use spacetime::{build_detector_model, CircuitEvent, DetectorModel, NoiseModel, Sector};
