//! Predictability analysis for Top-N recommendation data.
//!
//! Given per-user behavior sequences, this crate estimates the theoretical
//! ceiling on Top-N prediction accuracy — the best hit rate *any* algorithm
//! could reach on the data — by combining three ingredients:
//!
//! * a Lempel-Ziv entropy-rate estimate of each user's sequence ([`entropy`]),
//! * population-level probability ratios between the most popular items,
//!   obtained from the rank-frequency profile ([`popularity`]),
//! * a scaled-entropy equation whose root is the Top-1 ceiling, which the
//!   coupling ratios then extend to Top-2..Top-N ([`fano`]).
//!
//! Because the ceiling inherits bias from the entropy estimator, the crate
//! also ships Markov sequence generators with known ground truth ([`synth`])
//! and a calibration sweep that measures and corrects the bias ([`calibration`]).

pub mod calibration;
pub mod entropy;
pub mod events;
pub mod fano;
pub mod popularity;
pub mod synth;

pub use events::{EventLog, EventRecord, SymbolSequence};
