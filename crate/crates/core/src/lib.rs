//! Breast-lesion classification toolkit.
//!
//! The pipeline runs in five stages, each in its own module:
//!
//! 1. [`imagecore`] crops a contour-annotated view to an enlarged lesion box,
//!    min-max normalizes it and resizes it to 224×224.
//! 2. [`shallow_cnn`] is a small patch regressor (15×15 in, 3×3 out) trained
//!    with mini-batch SGD to map low-energy patches onto recombined patches.
//! 3. [`synthesizer`] samples training pairs and slides the trained regressor
//!    over a view to render a "virtual" recombined image.
//! 4. [`deep_features`] runs a 50-layer bottleneck residual network and
//!    global-average-pools the output of each of its four stages (3840 values
//!    per view).
//! 5. [`gbt`] and [`evaluation`] fit gradient-boosted trees under
//!    cross-validation and report metrics, ROC curves and per-source
//!    feature contributions.
//!
//! Data-parallel loops go through [`par`], which uses rayon when the
//! `parallel` feature is enabled (the default) and plain iterators otherwise.
//! Every parallel loop produces results identical to its sequential form.

pub mod deep_features;
pub mod error;
pub mod evaluation;
pub mod gbt;
pub mod imagecore;
pub mod io;
pub mod linalg;
pub mod par;
pub mod rng;
pub mod shallow_cnn;
pub mod synthesizer;

pub use error::{Error, Result};
