//! Auditing toolkit for social-bias patterns in generated-image corpora.
//!
//! The crate covers prompt-set construction and corpus ingestion, the
//! inference gateway, pixel features, bag-of-visual-words vectors, a graph
//! k-NN index, identity clustering, the bias metrics and the batch audit.

pub mod ann;
pub mod audit;
pub mod binio;
pub mod clusters;
pub mod corpus;
pub mod embedding;
pub mod gateway;
pub mod metrics;
pub mod pixel;
pub mod synth;
pub mod visual_words;
pub mod vocab;
