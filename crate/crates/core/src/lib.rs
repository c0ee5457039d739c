//! Session-based next-item recommendation laboratory.
//!
//! - [`dataset`]: ingestion, cleaning, popularity, train/validation partitioning
//! - [`nn`]: embedding + LSTM + softmax model trained with cross entropy or a
//!   sampled ranking loss
//! - [`markov`]: Markov-chain random-walk baseline
//! - [`metrics`]: top-K accuracy, catalog coverage, novelty
//! - [`similarity`]: embedding-centroid market similarity
//! - [`synth`]: synthetic multi-market generator
//! - [`experiment`] and [`report`]: data-size ablation, transfer and
//!   similarity studies with JSON/CSV/SVG output

pub mod dataset;
pub mod error;
pub mod experiment;
pub mod markov;
pub mod metrics;
pub mod nn;
pub mod report;
pub mod similarity;
pub mod synth;

pub use dataset::{DataPartition, ItemId, MarketDataset, Session};
pub use error::{Error, Result};
pub use metrics::{MetricsReport, Recommender};
