//! Post-network pipeline for vertebra segmentation of lateral spinal X-rays.
//!
//! Two candidate segmentations (a class-blind semantic provider and an
//! instance provider that also tags the reference vertebra) are merged by a
//! rule-based ensembler, labeled by zipping along the spine from the
//! reference vertebra, and scored with per-class Dice and panoptic quality.
//! A seeded synthetic spine generator drives the test suites.

pub mod cli;
pub mod ensemble;
pub mod error;
pub mod geometry;
pub mod labeling;
pub mod metrics;
pub mod synthgen;

pub use error::{Error, Result};
pub use geometry::{Contour, ContourSet, ImageFrame, MaskGrid, Point, Source};
pub use labeling::VertebraLabel;
