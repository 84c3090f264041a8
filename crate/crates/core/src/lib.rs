//! Speaker-attributed minimum Bayes risk training for a joint
//! speaker-counting, multi-talker ASR and speaker-identification model.

pub mod autodiff;
pub mod cli;
pub mod decode;
pub mod domain;
pub mod error;
pub mod experiment;
pub mod gradcheck;
pub mod jsonl;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod risk;
pub mod synthdata;
pub mod train;

pub use error::{Error, Result};
