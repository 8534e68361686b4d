//! Notation assembly for multi-stage optical music recognition.
//!
//! The crate covers the stages between a music symbol detector and a
//! notation graph: ingesting MuNG annotations and detector output, matching
//! detected symbols to ground truth, building pairwise training examples,
//! training the edge classifier, and scoring the whole pipeline with
//! Match+AUC and VOC-style detection mAP.

pub mod detector_sim;
pub mod error;
pub mod evaluation;
pub mod features;
pub mod geometry;
pub mod matching;
pub mod mlp_model;
pub mod mung_io;
pub mod seeding;
pub mod synth;
pub mod training;

pub use error::{OmrError, Result};
pub use mung_io::{BBox, ClassVocab, DetectedNode, DetectionSet, GroundTruthNode, NotationGraph};
