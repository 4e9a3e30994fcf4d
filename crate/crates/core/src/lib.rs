//! Grounded referring-expression laboratory: task generation, a small
//! attention-only transformer with hand-written gradients, and tools for
//! reading its query-key circuit.

pub mod datagen;
pub mod domain;
pub mod interpret;
pub mod model;
pub mod tensor;
