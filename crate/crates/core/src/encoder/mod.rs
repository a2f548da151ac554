//! Encoder `f_θ`, momentum encoder `f_θ′`, classifier `g`, input features
//! and the moving-average update.

pub mod checkpoint;
mod embedding;
mod model;
mod sample;

pub use model::{
    classifier_graph, encoder_graph, predicted_label, prob_positive, Branch, ModelConfig,
    ModelState, OnlineVars, ParamGroup, INV_TEMPERATURE_INIT, INV_TEMPERATURE_MAX,
    INV_TEMPERATURE_MIN, POSITIONAL_DIM,
};
pub use embedding::EmbeddingMatrix;
pub use sample::{positional_encoding, BoundingBox, Domain, SampleRecord, Split};
