//! Bidirectional propagation for generalized graph convolutions.
//!
//! Computes P = Σ_{ℓ=0}^{L} w_ℓ (D^{r−1} A D^{−r})^ℓ X for an undirected,
//! self-looped graph with adjacency A, degree matrix D, node features X,
//! convolution exponent r ∈ [0,1] and level weights w. Instead of dense
//! iteration, the estimate P̂ is assembled from two sparse halves that meet in
//! the middle:
//!
//! * **reverse push** ([`push`]) — deterministic residue propagation from the
//!   feature columns, thresholded at r_max, yielding reserves Q and residues R;
//! * **random walks** ([`walks`]) — Monte-Carlo transition-row estimates from
//!   each target node, n_r walks per node;
//! * **combination** ([`estimator`]) — P̂ = weighted reserves + walk-weighted
//!   residues, unbiased for P with variance controlled by (r_max, n_r).
//!
//! [`oracle`] holds dense reference implementations used for verification, and
//! [`classifier`] a small logistic-regression head for node classification on
//! the resulting embeddings.
//!
//! Start with the runnable examples (`cargo run --release --example …`):
//!
//! * `end_to_end` — full pipeline on a synthetic graph, checked against the
//!   dense oracle;
//! * `walk_convergence` — Monte-Carlo error shrinking as n_r grows;
//! * `push_counters` — push cost tracking against its theoretical cap;
//! * `plan_parameters` — deriving (r_max, n_r) from an error budget ε;
//! * `sbm_classify` — propagation + classifier on a stochastic block model;
//! * `formats` — binary graph/embedding round trips;
//! * `oracle_check` — the invariant the two phases preserve, step by step.

pub mod classifier;
pub mod cli;
pub mod error;
pub mod estimator;
pub mod features;
pub mod graph;
pub mod oracle;
pub mod push;
pub mod synth;
pub mod walks;

pub use error::{Error, Result};
pub use estimator::{
    combine, make_weights, plan_parameters, read_embedding, write_embedding,
    write_embedding_tsv, EmbeddingMatrix, EmbeddingMeta, PlannedParameters,
    PropagationConfig, WeightKind, WeightScheme,
};
pub use features::{normalize, FeatureMatrix, NormalizedResidueSeed};
pub use graph::{Graph, NodeId, NodeSet};
pub use push::{push, push_count_bound, push_with_budget, PushState};
pub use walks::{sample_walks, WalkFrequencies};
