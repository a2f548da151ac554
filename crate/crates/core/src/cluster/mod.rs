//! Per-epoch k-means over momentum embeddings, prototypes and their
//! concentration factors.

mod bank;
mod kmeans;

pub use bank::{
    concentration, nearest_prototype, BankParams, ClusteringRound, DomainPrototypes,
    PrototypeBank, CONCENTRATION_FLOOR,
};
pub use kmeans::{kmeans, KMeans, MAX_ITERATIONS};
