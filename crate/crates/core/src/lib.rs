//! Synthetic cross-document question-answering data for pre-training
//! multi-document models.

pub mod assembler;
pub mod corpus;
pub mod emitter;
pub mod metrics;
pub mod pipeline;
pub mod qagen;
pub mod salience;
pub mod textproc;
