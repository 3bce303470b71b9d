use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{RegionLabel, SessionRecording};
use crate::error::{Error, Result};
use crate::matfile;

/// Peristimulus time histogram for one region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Psth {
    pub region: RegionLabel,
    /// Bin edges in seconds relative to stimulus onset; one more than counts.
    pub bin_edges: Vec<f64>,
    /// Mean spike count per bin, averaged over trials and units.
    pub mean_counts: Vec<f64>,
}

/// Trial- and unit-averaged spike counts in half-open bins of width
/// `bin_width` covering `window` relative to each trial onset.
pub fn psth(
    rec: &SessionRecording,
    region: RegionLabel,
    trial_onsets: &[f64],
    window: (f64, f64),
    bin_width: f64,
) -> Result<Psth> {
    let (lo, hi) = window;
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::Validation(format!("window [{lo}, {hi}] is empty")));
    }
    if !(bin_width > 0.0) {
        return Err(Error::Validation("bin_width must be positive".into()));
    }
    let n_bins = ((hi - lo) / bin_width).round() as usize;
    if n_bins == 0 || ((n_bins as f64) * bin_width - (hi - lo)).abs() > 1e-9 {
        return Err(Error::Validation(format!("bin width {bin_width} does not divide the window [{lo}, {hi}]")));
    }
    if trial_onsets.is_empty() {
        return Err(Error::Validation("at least one trial onset is required".into()));
    }
    let units: Vec<_> = rec.units.iter().filter(|u| u.region == region).collect();
    if units.is_empty() {
        return Err(Error::EmptySelection(format!("no units in region {region}")));
    }

    let mut sums = vec![0.0; n_bins];
    for &onset in trial_onsets {
        let start = onset + lo;
        let edges: Vec<f64> = (0..=n_bins).map(|k| start + k as f64 * bin_width).collect();
        for u in &units {
            let t = &u.spike_times;
            let mut a = t.partition_point(|&s| s < edges[0]);
            for (k, sum) in sums.iter_mut().enumerate() {
                let b = a + t[a..].partition_point(|&s| s < edges[k + 1]);
                *sum += (b - a) as f64;
                a = b;
            }
        }
    }
    let norm = (trial_onsets.len() * units.len()) as f64;
    Ok(Psth {
        region,
        bin_edges: (0..=n_bins).map(|k| lo + k as f64 * bin_width).collect(),
        mean_counts: sums.into_iter().map(|s| s / norm).collect(),
    })
}

pub fn psth_csv_string(p: &Psth) -> String {
    let mut out = String::from("bin_lo_s,bin_hi_s,mean_count\n");
    for (k, c) in p.mean_counts.iter().enumerate() {
        writeln!(out, "{:.6},{:.6},{:.9}", p.bin_edges[k], p.bin_edges[k + 1], c).expect("string write");
    }
    out
}

pub fn write_psth_csv(p: &Psth, path: &Path) -> Result<()> {
    matfile::write_new(path, psth_csv_string(p).as_bytes())
}
