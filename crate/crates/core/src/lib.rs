//! Keyword spotting toolkit.
//!
//! The pipeline runs from a handful of user recordings to a deployable model:
//!
//! 1. [`augment`] expands recordings with seeded pitch, speed, gain, timing and
//!    ambiance transforms.
//! 2. [`dataset`] catalogs an eight-subclass corpus (four keyword families,
//!    four background families) and a validation split built from material
//!    the training split never saw.
//! 3. [`features`] turns one-second windows into MFCC matrices.
//! 4. [`nn`] trains a small 1D convolutional classifier; [`selection`] scores
//!    candidates by keyword F1 after collapsing subclasses into their parent
//!    class and runs a constrained random search.
//! 5. [`stream`] assembles 250 ms packets into sliding one-second windows and
//!    fires when the summed keyword probability crosses a threshold.
//! 6. [`export`] writes the selected model into a compact checksummed blob.

pub mod audio;
pub mod augment;
pub mod config;
pub mod dataset;
pub mod export;
pub mod features;
pub mod nn;
pub mod pipeline;
pub mod seed;
pub mod selection;
pub mod stream;
pub mod synth;

pub use audio::{AudioClip, AudioError};
pub use dataset::{ParentClass, SubClass};
pub use features::{FeatureMatrix, MfccConfig};
pub use pipeline::TrainedModel;

/// Sample rate every ingest path converts to.
pub const CANONICAL_SAMPLE_RATE: u32 = 16_000;

/// Length of one classification window.
pub const WINDOW_SECONDS: f64 = 1.0;

/// Maps `f` over `items`, in parallel when the `parallel` feature is on.
/// Output order always matches input order.
#[cfg(feature = "parallel")]
pub(crate) fn par_map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync + Send) -> Vec<R> {
    use rayon::prelude::*;
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn par_map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync + Send) -> Vec<R> {
    items.iter().map(f).collect()
}
