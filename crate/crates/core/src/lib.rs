//! Execution-time delay compensation for multi-agent control.
//!
//! Each agent keeps, per neighbor, a Gaussian belief over the neighbor's
//! communicated state. Beliefs are propagated by a learned residual GRU and
//! corrected by Kalman updates whenever timestamped packets arrive, then rolled
//! forward to the current control step so a fixed policy always acts on
//! synchronized estimates.
//!
//! * [`gru`]: the residual transition model, its training and file format.
//! * [`filter`]: beliefs, Kalman predict/update, checkpointed per-neighbor estimators.
//! * [`channel`]: delayed, lossy, per-pair FIFO packet delivery.
//! * [`env`]: small multi-agent environments and scripted controllers.
//! * [`harness`]: data collection, training, sweeps, latency benchmarks and trace replay.

pub mod channel;
pub mod env;
mod error;
pub mod filter;
pub mod gru;
pub mod harness;

pub use error::{Error, Result};

// The guide's listings run as doc-tests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/quickstart.md")]
    mod quickstart {}
    #[doc = include_str!("../../../book/src/model.md")]
    mod model {}
    #[doc = include_str!("../../../book/src/estimator.md")]
    mod estimator {}
    #[doc = include_str!("../../../book/src/channel.md")]
    mod channel {}
    #[doc = include_str!("../../../book/src/harness.md")]
    mod harness {}
    #[doc = include_str!("../../../book/src/formats.md")]
    mod formats {}
}
