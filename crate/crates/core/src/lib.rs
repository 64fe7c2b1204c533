//! A desk-scale lab for stage-wise preference optimization against
//! hallucination: a synthetic grounded-VQA world with an exact oracle, a tiny
//! autoregressive model with analytic gradients, SFT/DPO/GRPO objectives,
//! preference-data construction, and oracle-judged evaluation.

pub mod dataforge;
pub mod error;
pub mod evalhall;
pub mod microworld;
pub mod model;
pub mod objectives;
pub mod pipeline;
pub mod seeds;

pub use error::{Error, Result};

#[cfg(test)]
mod gradcheck;
