//! Fundamental matrix estimation from silhouette video via motion barcodes.

pub mod barcode;
pub mod bench;
pub mod chart;
pub mod cli;
pub mod estimator;
pub mod geometry;
pub mod lm;
pub mod matcher;
pub mod pipeline;
pub mod refine;
pub mod silhouette;
pub mod synth;
