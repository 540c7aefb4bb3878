pub mod audio;
pub mod classifiers;
pub mod experiment;
pub mod features;
pub mod metrics;
pub mod protocol;
pub mod synthgen;
