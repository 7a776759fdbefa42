//! Volumetric perfusion analytics toolkit.
//!
//! Segments 3D cerebral blood flow (CBF) maps into supervoxels with a 3D SLIC
//! clustering pass, extracts regional and peri-regional perfusion features,
//! runs per-cluster group statistics, trains a small 1D convolutional network
//! for sex classification, and computes age/sex-normative vascular risk
//! scores per participant.
//!
//! The crate is organized around the pipeline stages:
//!
//! - [`volume`] / [`nifti`] / [`manifest`] — volume I/O, masking, intensity
//!   normalization, cohort manifests
//! - [`synth`] — deterministic synthetic phantoms and cohorts used as test
//!   substrate
//! - [`slic`] — 3D SLIC supervoxel segmentation with connectivity enforcement
//! - [`features`] — per-supervoxel means and concentric shell means
//! - [`stats`] — one-way ANOVA, t-tests, Bonferroni correction and the
//!   special functions backing them
//! - [`atlas`] — majority-vote anatomical labeling of supervoxels
//! - [`classify`] — 1D conv net + logistic baseline with stratified k-fold CV
//! - [`vrs`] — normative tables and vascular risk scores
//! - [`pipeline`] — end-to-end orchestration shared by the CLI

pub mod atlas;
pub mod classify;
pub mod error;
pub mod features;
pub mod manifest;
pub mod nifti;
pub mod pipeline;
pub mod plot;
pub mod rng;
pub mod slic;
pub mod stats;
pub mod synth;
pub mod volume;
pub mod vrs;

pub use error::{Error, Result};
