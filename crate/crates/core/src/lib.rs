//! Simulation laboratory for distributed optimization with compression in
//! both directions: workers compress gradient information sent to the
//! server, and the server compresses the model it broadcasts back using
//! primal error feedback (EF21-P).
//!
//! The crate is organised bottom-up:
//!
//! * [`vector`] and [`rng`] hold the sparse message type and the keyed,
//!   replayable random streams.
//! * [`compressors`] implements TopK, RandK and friends together with their
//!   contractive / unbiased class parameters.
//! * [`dataio`] and [`problems`] provide LIBSVM parsing, worker partitions and
//!   the per-worker objectives with their smoothness constants.
//! * [`algorithms`] contains the round-exact methods (GD, EF21-P, DCGD, DIANA
//!   and their bidirectional combinations).
//! * [`theory`] evaluates the closed-form stepsizes, horizons and Lyapunov
//!   functions that the convergence guarantees are stated in.
//! * [`engine`] drives whole runs: configuration, metrics, sweeps and
//!   multi-seed averaging.

pub mod algorithms;
pub mod compressors;
pub mod dataio;
pub mod engine;
pub mod error;
pub mod problems;
pub mod rng;
pub mod theory;
pub mod vector;

pub use error::{Error, Result};
