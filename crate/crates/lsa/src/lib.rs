//! Letter-string analogy lab: task generation, a small encoder-decoder
//! transformer trained from scratch, behavioral evaluation, and a
//! mechanistic interpretability toolkit with a symbolic restricted-attention
//! oracle.

pub mod alphabet;
pub mod dataset;
pub mod eval;
pub mod figures;
pub mod interp;
pub mod llmprobe;
pub mod model;
pub mod rasp;
pub mod taskgen;
pub mod train;
pub mod tokenizer;
pub mod transform;
