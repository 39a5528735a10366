//! Offline and online triplet mining with extreme distances.
//!
//! The crate covers the full pipeline: pairwise distances and the Z-score
//! outlier test ([`distance`]), offline mining of one triplet per anchor
//! ([`mining`]), the online mini-batch losses ([`losses`]), a small
//! feed-forward embedding model with its training loops ([`model`],
//! [`optim`], [`train`]), retrieval metrics ([`eval`]), and dataset
//! generation, splitting and file formats ([`data`], [`io`]).

pub mod data;
pub mod distance;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod io;
pub mod losses;
pub mod metric;
pub mod mining;
pub mod model;
pub mod optim;
pub mod rng;
pub mod sampler;
pub mod train;
pub mod types;

pub use distance::{outlier_mask, pairwise, DistanceMatrix, OutlierMask, DEFAULT_Z_THRESHOLD};
pub use error::{Error, Result};
pub use losses::{loss_and_grad, Batch, LossContext, LossKind, LossResult, LossSpec, ProxyState};
pub use metric::{distance, Metric, MetricKind};
pub use mining::{mine_offline, negative_frequency, NegativeFrequencyMatrix, TripletSet};
pub use rng::Rng;
pub use types::{BatchSpec, EmbeddingSet, ExtremePolicy, Triplet};
