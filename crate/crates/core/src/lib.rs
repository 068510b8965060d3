//! Simulation and verification toolkit for majority-bit dissemination with
//! sources under noisy PULL(h) communication.

pub mod engine;
pub mod experiment;
pub mod noise;
pub mod oracle;
pub mod protocol;
pub mod rng;
pub mod sf;
pub mod ssf;
