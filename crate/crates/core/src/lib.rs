//! Finite-key secret key rates for fully passive decoy-state BB84.
//!
//! The crate models a transmitter whose polarization and intensity are both
//! set passively, computes the photon-number structure of the post-selected
//! signals, propagates finite-statistics fluctuations through concentration
//! bounds and decoy-state linear programs, and finally evaluates the
//! extractable secret key length for a given observation record. A channel
//! model and a random-search optimizer turn this into end-to-end key-rate
//! versus distance curves; the `passive-bb84` binary exposes the sweep as a
//! CLI.

pub mod channel;
pub mod concentration;
pub mod decoy;
pub mod error;
pub mod fock;
pub mod keyrate;
pub mod optimizer;
mod simplex;
mod quad;
pub mod source;
pub mod sweep;

pub use error::{Error, Result};

/// Binary entropy in bits; `h(0) = h(1) = 0`.
pub fn binary_entropy(x: f64) -> f64 {
    assert!((0.0..=1.0).contains(&x), "binary_entropy argument {x} outside [0, 1]");
    if x == 0.0 || x == 1.0 {
        return 0.0;
    }
    -x * x.log2() - (1.0 - x) * (1.0 - x).log2()
}
