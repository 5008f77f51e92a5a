//! Ingestion, synthesis and serialization.

pub mod dataset_file;
pub mod features;
pub mod manifest;
pub mod mrc;
pub mod synthetic;
