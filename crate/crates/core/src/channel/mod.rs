//! Geometric channel model, uplink pilot observation (full-array and hybrid
//! analog-digital), and the dataset file format.

mod config;
mod dataset;
mod observe;
mod sample;

pub use config::SystemConfig;
pub use dataset::{Dataset, DatasetManifest, DATASET_FORMAT_VERSION};
pub use observe::{
    generate_pilots, observe_full, observe_had, ObsMode, Observation, ObservationPayload,
};
pub use sample::{sample_channel, ChannelModel, ChannelSample};
