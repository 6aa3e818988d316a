//! The baseline LSTM and the four output-memory language models.

mod checkpoint;
mod config;
mod count;
mod forward;
mod memory;
mod params;
mod steps;

pub use checkpoint::{
    checkpoint_bytes, fnv1a64, load_checkpoint, parse_checkpoint, save_checkpoint, Checkpoint,
    CHECKPOINT_VERSION,
};
pub use config::{ModelConfig, Variant};
pub use count::{count_params, hidden_step, match_hidden_size, HiddenSizeMatch, ParamCount};
pub use forward::{row_order_targets, AttentionTrace, CarriedState, Model, WindowGraph, WindowOutput};
pub use memory::{MemoryEntry, SlidingMemory};
pub use params::{layout, AttentionIndex, ParamIndex, ParamSpec, Params, INIT_RANGE};
pub use steps::{
    attention_step, key_value_predict_step, key_value_step, memory_entry_parts, ngram_step,
    predict_distribution, AttentionParams, NgramParams, OutputParams, StepOutput,
};
