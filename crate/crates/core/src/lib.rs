//! Reward-conditional switching between group-relative policy optimization
//! and supervised fine-tuning, on a synthetic toy-captioning corpus.
//!
//! * [`corpus`]: annotated samples, the synthetic generator and JSONL I/O.
//! * [`metrics`]: toy recognition score, precision and rank correlation.
//! * [`reward`]: the toy-naming reward and group advantage normalization.
//! * [`policy`]: a softmax sequence policy with closed-form gradients.
//! * [`training`]: warm-up, pure group-relative training and the switching loop.
//! * [`experiment`]: end-to-end runs, reports, telemetry and checkpoints.
//! * [`validation`]: the planted-quality ranking study for the reward.

pub mod corpus;
pub mod metrics;
pub mod reward;
pub mod policy;
pub mod training;
pub mod experiment;
pub mod validation;
