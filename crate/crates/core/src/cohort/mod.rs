//! Everything between raw event streams and model-ready tensors.

pub mod frames;
pub mod io;
pub mod normalize;
pub mod prepare;
pub mod record;
pub mod sampler;
pub mod split;
pub mod synth;

pub use frames::{bin_timeframes, clean, CleanReport, TimeframeTensor};
pub use io::{
    load_cohort, load_ground_truth, load_schema, load_tensors, save_cohort, save_ground_truth, save_schema, save_tensors, GroundTruth,
};
pub use normalize::{apply_normalization, fit_normalization, NormalizationStats};
pub use record::{CohortRecord, Event, EventKind, FeatureSchema, NumericalFeature, StudyDesign};
pub use sampler::{sampler_weights, WeightedSampler};
pub use split::{split_by_year, split_random, AdmissionYear, SplitMode, Splits};
pub use synth::{synth_generate, SynthCohort, SynthConfig};
pub use prepare::{prepare, split_and_normalize, tensorize, Binning, PreparedCohort, QualityReport};
