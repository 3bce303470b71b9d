//! Spike recordings, stimulus movies, per-frame binning and PSTHs.

mod binning;
mod encoding;
mod movie;
mod psth;
mod region;
mod spikes;

pub use binning::{aggregate_sessions, bin_spikes, filter_by_region, ResponseMatrix, DEFAULT_LATENCY_S};
pub use encoding::{coarse_features, default_region_information, frame_features, synth_spikes, EncodingModelConfig};
pub use movie::{read_movie_dir, synth_movie, write_movie_dir, MovieSpec, StimulusMovie};
pub use psth::{psth, psth_csv_string, write_psth_csv, Psth};
pub use region::RegionLabel;
pub use spikes::{load_spike_file, parse_spike_csv, spike_csv_string, write_spike_file, SessionRecording, UnitRecord};
