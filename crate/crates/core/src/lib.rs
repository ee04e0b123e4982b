//! Turn raw subtitle files into an emotion and intent labeled dialogue corpus.

pub mod analytics;
pub mod annotation;
pub mod corpus;
pub mod dialogue;
pub mod embedding;
pub mod labeling;
pub mod pipeline;
pub mod readability;
pub mod remote;
pub mod segment;
pub mod semisup;
pub mod text;
