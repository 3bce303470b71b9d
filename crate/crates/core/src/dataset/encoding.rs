//! Linear-nonlinear-Poisson generator for synthetic recordings with known
//! per-region stimulus information.

use std::collections::BTreeMap;

use rand::Rng as _;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use super::{RegionLabel, SessionRecording, StimulusMovie, UnitRecord};
use crate::error::{Error, Result};
use crate::nn::softplus;
use crate::rng;

/// Side length of the pooled luminance grid the unit filters read.
pub const FEATURE_GRID: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodingModelConfig {
    /// Stimulus-independent firing rate, Hz.
    pub base_rate_hz: f64,
    /// Peak stimulus-driven gain, Hz, scaled per region by `region_information`.
    pub gain_hz: f64,
    /// Informativeness of each region in [0, 1]; missing regions get 0.
    pub region_information: BTreeMap<RegionLabel, f64>,
    /// Standard deviation of filter weights times sqrt(feature count).
    pub filter_scale: f64,
    /// Scale of the centred one-hot category channels appended to the
    /// luminance grid; 0 leaves units blind to scene category.
    pub category_weight: f64,
    /// Delay between frame onset and the unit's response window.
    pub latency_s: f64,
    /// Extra units per session that never fire.
    pub silent_units: usize,
    pub seed: u64,
}

impl Default for EncodingModelConfig {
    fn default() -> Self {
        EncodingModelConfig {
            base_rate_hz: 5.0,
            gain_hz: 60.0,
            region_information: default_region_information(),
            filter_scale: 3.0,
            category_weight: 1.0,
            latency_s: super::DEFAULT_LATENCY_S,
            silent_units: 2,
            seed: 0,
        }
    }
}

/// VISl carries the most stimulus information and VISam none.
pub fn default_region_information() -> BTreeMap<RegionLabel, f64> {
    use RegionLabel::*;
    [(VisL, 1.0), (VisP, 0.5), (VisAl, 0.35), (VisRl, 0.25), (VisPm, 0.15), (VisAm, 0.0)].into()
}

impl EncodingModelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.base_rate_hz >= 0.0) || !self.base_rate_hz.is_finite() {
            return Err(Error::Validation("base_rate_hz must be finite and >= 0".into()));
        }
        if !(self.gain_hz >= 0.0) || !self.gain_hz.is_finite() {
            return Err(Error::Validation("gain_hz must be finite and >= 0".into()));
        }
        if let Some((r, g)) = self.region_information.iter().find(|(_, g)| !(0.0..=1.0).contains(*g)) {
            return Err(Error::Validation(format!("region information for {r} is {g}, outside [0,1]")));
        }
        if !(self.latency_s >= 0.0) || !(self.filter_scale >= 0.0) || !(self.category_weight >= 0.0) {
            return Err(Error::Validation("latency_s, filter_scale and category_weight must be >= 0".into()));
        }
        Ok(())
    }

    pub fn information(&self, r: RegionLabel) -> f64 {
        self.region_information.get(&r).copied().unwrap_or(0.0)
    }
}

/// Pooled, channel-averaged luminance on a coarse grid, centred on the movie
/// mean so filters see zero-mean inputs.
pub fn coarse_features(movie: &StimulusMovie) -> Vec<Vec<f64>> {
    let (h, w, c) = movie.image_shape();
    let (gh, gw) = (FEATURE_GRID.min(h), FEATURE_GRID.min(w));
    let mut feats: Vec<Vec<f64>> = movie
        .frames
        .iter()
        .map(|img| {
            let mut f = vec![0.0; gh * gw];
            let mut n = vec![0usize; gh * gw];
            for y in 0..h {
                for x in 0..w {
                    let cell = (y * gh / h) * gw + x * gw / w;
                    for ch in 0..c {
                        f[cell] += img.get(y, x, ch);
                    }
                    n[cell] += c;
                }
            }
            f.iter().zip(&n).map(|(s, &k)| s / k as f64).collect()
        })
        .collect();
    let dim = gh * gw;
    let mean: Vec<f64> = (0..dim)
        .map(|d| feats.iter().map(|f| f[d]).sum::<f64>() / feats.len() as f64)
        .collect();
    for f in feats.iter_mut() {
        for (v, m) in f.iter_mut().zip(&mean) {
            *v -= m;
        }
    }
    feats
}

/// Coarse luminance features followed, when the movie is labelled and
/// `category_weight > 0`, by centred one-hot category channels.
pub fn frame_features(movie: &StimulusMovie, category_weight: f64) -> Vec<Vec<f64>> {
    let mut feats = coarse_features(movie);
    let Some(labels) = movie.frame_labels.as_ref().filter(|_| category_weight > 0.0) else {
        return feats;
    };
    let n = labels.iter().max().map_or(0, |m| m + 1);
    for (f, &label) in feats.iter_mut().zip(labels) {
        f.extend((0..n).map(|k| category_weight * (((k == label) as u8 as f64) - 1.0 / n as f64)));
    }
    feats
}

/// Simulates one session: `n_units_per_region` units in each of the six
/// regions plus `cfg.silent_units` silent units. Unit `u` in region `r` fires
/// during frame `f` at `base + gain·info(r)·softplus(filter_u · features_f)`
/// over [`frame_features`], with spikes uniformly placed in `[onset_f + latency, onset_f + latency + duration)`.
pub fn synth_spikes(
    movie: &StimulusMovie,
    cfg: &EncodingModelConfig,
    n_units_per_region: usize,
    duration_per_frame: f64,
) -> Result<SessionRecording> {
    cfg.validate()?;
    if n_units_per_region == 0 {
        return Err(Error::Validation("n_units_per_region must be at least 1".into()));
    }
    if !(duration_per_frame > 0.0) {
        return Err(Error::Validation("duration_per_frame must be positive".into()));
    }
    let feats = frame_features(movie, cfg.category_weight);
    let dim = feats[0].len();
    let mut filters_rng = rng::stream(cfg.seed, 0xF117);
    let mut spikes_rng = rng::stream(cfg.seed, 0x5917);
    let w_scale = cfg.filter_scale / (dim as f64).sqrt();

    let mut units = Vec::new();
    for region in RegionLabel::ALL {
        let gain = cfg.gain_hz * cfg.information(region);
        for k in 0..n_units_per_region {
            let filter: Vec<f64> = (0..dim).map(|_| rng::gaussian(&mut filters_rng) * w_scale).collect();
            let mut times = Vec::new();
            for (f, feat) in feats.iter().enumerate() {
                let drive: f64 = filter.iter().zip(feat).map(|(a, b)| a * b).sum();
                let rate = cfg.base_rate_hz + gain * softplus(drive);
                let mean = rate * duration_per_frame;
                let count = if mean > 0.0 {
                    Poisson::new(mean)
                        .map_err(|e| Error::Numeric(format!("poisson rate {mean}: {e}")))?
                        .sample(&mut spikes_rng) as usize
                } else {
                    0
                };
                let start = movie.frame_onsets[f] + cfg.latency_s;
                let first = times.len();
                for _ in 0..count {
                    times.push(start + spikes_rng.random::<f64>() * duration_per_frame);
                }
                times[first..].sort_by(f64::total_cmp);
            }
            units.push(UnitRecord { unit_id: format!("{}_{k:03}", region.code()), region, spike_times: times });
        }
    }
    for k in 0..cfg.silent_units {
        units.push(UnitRecord {
            unit_id: format!("silent_{k:03}"),
            region: RegionLabel::ALL[k % RegionLabel::ALL.len()],
            spike_times: Vec::new(),
        });
    }
    Ok(SessionRecording { session_id: format!("synth{}", cfg.seed), units })
}
