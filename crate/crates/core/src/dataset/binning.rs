use std::collections::BTreeSet;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use super::{RegionLabel, SessionRecording, StimulusMovie};
use crate::error::{Error, Result};

/// Typical visual response latency used to shift counting windows.
pub const DEFAULT_LATENCY_S: f64 = 0.03;

/// Frames × units response matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseMatrix {
    pub values: Array2<f64>,
    pub unit_ids: Vec<String>,
    pub regions: Vec<RegionLabel>,
}

impl ResponseMatrix {
    pub fn new(values: Array2<f64>, unit_ids: Vec<String>, regions: Vec<RegionLabel>) -> Result<Self> {
        if values.ncols() != unit_ids.len() || values.ncols() != regions.len() {
            return Err(Error::Shape(format!(
                "{} columns, {} unit ids, {} regions",
                values.ncols(),
                unit_ids.len(),
                regions.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Validation("responses must be finite and non-negative".into()));
        }
        Ok(ResponseMatrix { values, unit_ids, regions })
    }

    pub fn frame_count(&self) -> usize {
        self.values.nrows()
    }

    pub fn unit_count(&self) -> usize {
        self.values.ncols()
    }

    pub fn select_columns(&self, cols: &[usize]) -> ResponseMatrix {
        ResponseMatrix {
            values: self.values.select(Axis(1), cols),
            unit_ids: cols.iter().map(|&c| self.unit_ids[c].clone()).collect(),
            regions: cols.iter().map(|&c| self.regions[c]).collect(),
        }
    }

    pub fn select_rows(&self, rows: &[usize]) -> ResponseMatrix {
        ResponseMatrix {
            values: self.values.select(Axis(0), rows),
            unit_ids: self.unit_ids.clone(),
            regions: self.regions.clone(),
        }
    }

    fn silent_columns(&self) -> Vec<bool> {
        self.values.axis_iter(Axis(1)).map(|c| c.iter().all(|&v| v == 0.0)).collect()
    }
}

/// Counts spikes of every unit in per-frame windows
/// `[onset_f + latency, onset_{f+1} + latency)`. The last frame closes at
/// `onset_F + median inter-frame interval` (unbounded for a one-frame movie).
/// Silent units are kept as all-zero columns. Unit ids are prefixed with the
/// session id so matrices from different sessions can be concatenated.
pub fn bin_spikes(rec: &SessionRecording, movie: &StimulusMovie, latency_offset: f64) -> Result<ResponseMatrix> {
    if !(latency_offset >= 0.0) || !latency_offset.is_finite() {
        return Err(Error::Validation(format!("latency_offset must be >= 0, got {latency_offset}")));
    }
    if movie.is_empty() {
        return Err(Error::Validation("movie has no frames".into()));
    }
    let f = movie.len();
    let mut edges: Vec<f64> = movie.frame_onsets.iter().map(|t| t + latency_offset).collect();
    edges.push(match movie.median_interval() {
        Some(d) => movie.frame_onsets[f - 1] + d + latency_offset,
        None => f64::INFINITY,
    });

    let mut values = Array2::<f64>::zeros((f, rec.units.len()));
    for (u, unit) in rec.units.iter().enumerate() {
        let times = &unit.spike_times;
        let mut lo = times.partition_point(|&t| t < edges[0]);
        for fr in 0..f {
            let hi = lo + times[lo..].partition_point(|&t| t < edges[fr + 1]);
            values[[fr, u]] = (hi - lo) as f64;
            lo = hi;
        }
    }
    let unit_ids = rec.units.iter().map(|u| format!("{}/{}", rec.session_id, u.unit_id)).collect();
    let regions = rec.units.iter().map(|u| u.region).collect();
    ResponseMatrix::new(values, unit_ids, regions)
}

/// Drops silent units per session and concatenates the survivors column-wise.
pub fn aggregate_sessions(mats: &[ResponseMatrix]) -> Result<ResponseMatrix> {
    let first = mats.first().ok_or_else(|| Error::Validation("no sessions to aggregate".into()))?;
    let f = first.frame_count();
    if let Some(m) = mats.iter().find(|m| m.frame_count() != f) {
        return Err(Error::Shape(format!("sessions disagree on frame count: {f} vs {}", m.frame_count())));
    }
    let kept: Vec<ResponseMatrix> = mats
        .iter()
        .map(|m| {
            let cols: Vec<usize> = m
                .silent_columns()
                .into_iter()
                .enumerate()
                .filter_map(|(i, silent)| (!silent).then_some(i))
                .collect();
            m.select_columns(&cols)
        })
        .collect();
    let views: Vec<_> = kept.iter().map(|m| m.values.view()).collect();
    let values = ndarray::concatenate(Axis(1), &views).expect("row counts checked");
    let unit_ids = kept.iter().flat_map(|m| m.unit_ids.iter().cloned()).collect();
    let regions = kept.iter().flat_map(|m| m.regions.iter().copied()).collect();
    ResponseMatrix::new(values, unit_ids, regions)
}

/// Keeps the columns whose region is in `keep`, preserving column order.
pub fn filter_by_region(mat: &ResponseMatrix, keep: &BTreeSet<RegionLabel>) -> Result<ResponseMatrix> {
    if keep.is_empty() {
        return Err(Error::Validation("region selection is empty".into()));
    }
    let cols: Vec<usize> = (0..mat.unit_count()).filter(|&c| keep.contains(&mat.regions[c])).collect();
    if cols.is_empty() {
        let names: Vec<_> = keep.iter().map(|r| r.code()).collect();
        return Err(Error::EmptySelection(format!("no units in regions {}", names.join(","))));
    }
    Ok(mat.select_columns(&cols))
}
