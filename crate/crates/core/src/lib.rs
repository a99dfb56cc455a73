//! Phoneme-duration modelling for non-attentive text-to-speech.
//!
//! Three duration models share one data model and evaluation suite:
//!
//! * [`baselines::DurModel`]: L2 regression on z-scored durations.
//! * [`baselines::DurPModel`]: the same regressor conditioned on per-word
//!   pause decisions from a [`baselines::PhrasingClassifier`].
//! * [`flow::CauliflowModel`]: a conditional normalising flow over
//!   per-token durations, sampled with a temperature on the prior and
//!   steerable through speech-rate and pause-rate controls.
//!
//! [`synthdata`] produces corpora whose conditional duration distribution is
//! known in closed form, which makes every model comparison testable.

pub mod autodiff;
pub mod baselines;
pub mod conditioning;
pub mod corpus;
pub mod flow;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod selftest;
pub mod sweep;
pub mod synthdata;
pub mod train;

pub use autodiff::{Graph, ParamStore, Tensor, Var};
pub use corpus::{Corpus, Token, TokenKind, Utterance};

