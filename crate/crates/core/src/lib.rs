//! Target-speaker extraction with speaker-conditioned time-frequency masks.
//!
//! The pipeline: [`mixsim`] builds two-speaker mixtures with enrollment
//! utterances, [`stft`] moves signals into the time-frequency domain, [`net`]
//! estimates a mask for the enrolled speaker, [`masks`] applies it with the
//! mixture phase, and [`evalkit`] scores the result. [`trainer`] fits the
//! networks with one of the objectives in [`losses`].

pub mod audio_io;
pub mod error;
pub mod evalkit;
pub mod exec;
pub mod features;
pub mod losses;
pub mod masks;
pub mod mixsim;
pub mod net;
pub mod selftest;
pub mod stft;
pub mod synth;
pub mod temporal;
pub mod trainer;

pub use error::{Error, Result};
pub use exec::Execution;
