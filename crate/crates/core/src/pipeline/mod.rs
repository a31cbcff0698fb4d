//! End-to-end runs: synthetic data, dataset files, configuration, training
//! and the run directory.

mod config;
mod io;
mod report;
mod run;
mod synth;

pub use config::{RunConfig, Variant};
pub use io::{
    load_dataset, read_features, read_labels, write_dataset, write_features, write_labels, Dataset,
    DatasetManifest, FeatureFormat, ManifestEntry,
};
pub use report::{
    read_bundle, read_segments, segments_csv, timeline, timelines, write_bundle, write_run, BUNDLE_FILE,
    SEGMENTS_FILE,
};
pub use run::{
    initial_lambdas, run_pipeline, stage_one, ActivityModel, ActivityRouter, ActivityRun, FeatureArtifact,
    ModelBundle, RunOutput, StageOne,
};
pub use synth::{synth_generate, SynthConfig, SynthDataset};
