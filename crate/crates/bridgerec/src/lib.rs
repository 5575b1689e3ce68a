//! Multi-dataset recommender toolkit.
//!
//! The pipeline turns raw rating/content files from several datasets into
//! ranked recommendations, sharing knowledge across datasets through their
//! common users and items:
//!
//! 1. [`corpus`] — ingest ratings, content documents, and cross-dataset
//!    alignment files into an immutable interned corpus.
//! 2. [`textembed`] — train content embeddings per entity (a minimal PV-DBOW
//!    trainer) and compute normalized similarities.
//! 3. [`hetgraph`] — build one weighted heterogeneous graph per dataset:
//!    rating-weighted user-item edges plus similarity-sampled user-user and
//!    item-item edges.
//! 4. [`graphembed`] — biased second-order random walks plus skip-gram with
//!    negative sampling over each graph, yielding base user/item embeddings.
//! 5. [`fusion`] — element-wise attention combination of common-entity
//!    embeddings across datasets (or the average-pooling ablation).
//! 6. [`scorer`] — per-dataset MLP towers and cosine interaction prediction.
//! 7. [`train`] — sampled soft-label cross-entropy objectives (preliminary
//!    and personalized) optimized with Adam over a reverse-mode tape.
//! 8. [`eval`] — leave-one-out ranking evaluation (HR@N / NDCG@N).
//! 9. [`synth`] — planted-structure synthetic corpora for verification.
//!
//! The [`cli`] module wires the stages into subcommands over a TOML config.

pub mod checkpoint;
pub mod cli;
pub mod corpus;
pub mod eval;
pub mod fusion;
pub mod graphembed;
pub mod hetgraph;
pub mod numerics;
pub mod scorer;
pub mod seeds;
pub mod synth;
pub mod textembed;
pub mod train;
