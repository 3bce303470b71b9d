//! Run configuration: one TOML document with a section per stage.
//!
//! Every field has a default, unknown keys are rejected, and every numeric
//! field is range-checked by [`RunConfig::validate`]. Dotted overrides such as
//! `diffusion.strength=0.5` are applied to the TOML tree before
//! deserialization, so they go through the same checks.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{default_region_information, EncodingModelConfig, MovieSpec, RegionLabel, DEFAULT_LATENCY_S};
use crate::diffusion::{DenoiserConfig, LatentAeConfig, NoiseSchedule, DEFAULT_STEPS, DEFAULT_STRENGTH, DEFAULT_W_TEXT, DEFAULT_W_VISION};
use crate::error::{Error, Result};
use crate::hvae::HvaeConfig;
use crate::nn::SgdConfig;
use crate::pipeline::SemanticConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub n_classes: usize,
    pub frame_duration_s: f64,
    pub units_per_region: usize,
    pub sessions: usize,
    pub train_fraction: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            frames: 600,
            height: 32,
            width: 32,
            channels: 1,
            n_classes: 4,
            frame_duration_s: 1.0 / 30.0,
            units_per_region: 12,
            sessions: 2,
            train_fraction: 0.8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncodingSection {
    pub base_rate_hz: f64,
    pub gain_hz: f64,
    pub filter_scale: f64,
    pub category_weight: f64,
    pub latency_s: f64,
    pub silent_units: usize,
    pub region_information: BTreeMap<RegionLabel, f64>,
}

impl Default for EncodingSection {
    fn default() -> Self {
        let e = EncodingModelConfig::default();
        EncodingSection {
            base_rate_hz: e.base_rate_hz,
            gain_hz: e.gain_hz,
            filter_scale: e.filter_scale,
            category_weight: e.category_weight,
            latency_s: DEFAULT_LATENCY_S,
            silent_units: e.silent_units,
            region_information: default_region_information(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HvaeSection {
    pub widths: Vec<usize>,
    pub enc_hidden: usize,
    pub dec_hidden: usize,
    pub k: usize,
    pub lr: f64,
    pub steps: usize,
    pub batch: usize,
}

impl Default for HvaeSection {
    fn default() -> Self {
        let h = HvaeConfig::default();
        HvaeSection {
            widths: h.widths,
            enc_hidden: h.enc_hidden,
            dec_hidden: h.dec_hidden,
            k: 3,
            lr: 0.005,
            steps: 6000,
            batch: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AutoencoderSection {
    pub hidden: usize,
    pub latent_channels: usize,
    pub lr: f64,
    pub steps: usize,
    pub batch: usize,
}

impl Default for AutoencoderSection {
    fn default() -> Self {
        AutoencoderSection { hidden: 256, latent_channels: 1, lr: 0.01, steps: 4000, batch: 32 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiffusionSection {
    pub steps: usize,
    pub beta_lo: f64,
    pub beta_hi: f64,
    pub hidden: usize,
    pub time_dim: usize,
    pub lr: f64,
    pub train_steps: usize,
    pub batch: usize,
    pub strength: f64,
    pub w_vision: f64,
    pub w_text: f64,
}

impl Default for DiffusionSection {
    fn default() -> Self {
        DiffusionSection {
            steps: DEFAULT_STEPS,
            beta_lo: 1e-4,
            beta_hi: 0.05,
            hidden: 128,
            time_dim: 16,
            lr: 0.01,
            train_steps: 6000,
            batch: 32,
            strength: DEFAULT_STRENGTH,
            w_vision: DEFAULT_W_VISION,
            w_text: DEFAULT_W_TEXT,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RidgeSection {
    pub lambda_grid: Vec<f64>,
    pub folds: usize,
}

impl Default for RidgeSection {
    fn default() -> Self {
        RidgeSection { lambda_grid: vec![1e-3, 1e-2, 0.1, 1.0, 10.0, 100.0], folds: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PsthSection {
    pub bin_width_s: f64,
    pub window_lo_s: f64,
    pub window_hi_s: f64,
    /// Every `trial_stride`-th frame onset starts a trial.
    pub trial_stride: usize,
}

impl Default for PsthSection {
    fn default() -> Self {
        PsthSection { bin_width_s: 0.005, window_lo_s: -0.02, window_hi_s: 0.1, trial_stride: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub permutations: usize,
    /// Region subsets for `ablate`; an empty list means every region.
    pub subsets: Vec<Vec<RegionLabel>>,
}

impl Default for EvalSection {
    fn default() -> Self {
        let mut subsets: Vec<Vec<RegionLabel>> = RegionLabel::ALL.iter().map(|&r| vec![r]).collect();
        subsets.push(vec![]);
        EvalSection { permutations: 1000, subsets }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub encoding: EncodingSection,
    pub hvae: HvaeSection,
    pub autoencoder: AutoencoderSection,
    pub semantic: SemanticConfig,
    pub diffusion: DiffusionSection,
    pub ridge: RidgeSection,
    pub psth: PsthSection,
    pub eval: EvalSection,
}

fn check(ok: bool, what: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::Validation(format!("config: {what}")))
    }
}

fn unit_open(v: f64) -> bool {
    v > 0.0 && v < 1.0
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        Self::from_toml_with_overrides(text, &[])
    }

    pub fn from_toml_with_overrides(text: &str, overrides: &[String]) -> Result<Self> {
        let mut tree: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Validation(format!("config: {}", e.message())))?;
        for o in overrides {
            apply_override(&mut tree, o)?;
        }
        let cfg: RunConfig = toml::Value::Table(tree)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Validation(format!("config: {}", e.message())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::from_toml_with_overrides(&text, overrides)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.data;
        check(d.frames >= 20 && d.frames <= 1_000_000, "data.frames must be in [20, 1e6]")?;
        check((1..=512).contains(&d.height) && (1..=512).contains(&d.width), "data.height/width must be in [1, 512]")?;
        check(d.height.is_multiple_of(4) && d.width.is_multiple_of(4), "data.height/width must be multiples of 4")?;
        check(d.channels == 1 || d.channels == 3, "data.channels must be 1 or 3")?;
        check((2..=64).contains(&d.n_classes), "data.n_classes must be in [2, 64]")?;
        check(d.frame_duration_s > 0.0 && d.frame_duration_s <= 10.0, "data.frame_duration_s must be in (0, 10]")?;
        check((1..=10_000).contains(&d.units_per_region), "data.units_per_region must be in [1, 10000]")?;
        check((1..=100).contains(&d.sessions), "data.sessions must be in [1, 100]")?;
        check(unit_open(d.train_fraction), "data.train_fraction must be in (0, 1)")?;

        self.encoding_config(0).validate()?;
        check(self.encoding.latency_s < d.frame_duration_s, "encoding.latency_s must be shorter than a frame")?;

        let h = &self.hvae;
        check(!h.widths.is_empty() && h.widths.iter().all(|&w| (1..=4096).contains(&w)), "hvae.widths must be non-empty, each in [1, 4096]")?;
        check((1..=h.widths.len()).contains(&h.k), "hvae.k must be in [1, number of layers]")?;
        self.hvae_config().validate()?;
        self.check_sgd("hvae", h.lr, h.steps, h.batch)?;

        let a = &self.autoencoder;
        check((1..=16).contains(&a.latent_channels), "autoencoder.latent_channels must be in [1, 16]")?;
        check((1..=8192).contains(&a.hidden), "autoencoder.hidden must be in [1, 8192]")?;
        self.check_sgd("autoencoder", a.lr, a.steps, a.batch)?;

        let s = &self.semantic;
        check((1..=8192).contains(&s.hidden) && (1..=1024).contains(&s.feature_len), "semantic widths out of range")?;
        self.check_sgd("semantic", s.lr, s.steps, s.batch)?;

        let f = &self.diffusion;
        check((1..=10_000).contains(&f.steps), "diffusion.steps must be in [1, 10000]")?;
        check(f.beta_lo >= 0.0 && f.beta_lo <= f.beta_hi && f.beta_hi < 1.0, "diffusion betas need 0 <= beta_lo <= beta_hi < 1")?;
        check(f.strength > 0.0 && f.strength <= 1.0, "diffusion.strength must be in (0, 1]")?;
        check(f.w_vision >= 0.0 && f.w_text >= 0.0 && (f.w_vision + f.w_text - 1.0).abs() <= 1e-9, "diffusion weights must be non-negative and sum to 1")?;
        check((1..=8192).contains(&f.hidden), "diffusion.hidden must be in [1, 8192]")?;
        check(f.time_dim.is_multiple_of(2) && (2..=256).contains(&f.time_dim), "diffusion.time_dim must be even, in [2, 256]")?;
        self.check_sgd("diffusion", f.lr, f.train_steps, f.batch)?;

        let r = &self.ridge;
        check(!r.lambda_grid.is_empty() && r.lambda_grid.iter().all(|&l| l.is_finite() && l >= 0.0), "ridge.lambda_grid must be non-empty, finite, >= 0")?;
        check((2..=50).contains(&r.folds), "ridge.folds must be in [2, 50]")?;
        check((self.split_point() / r.folds) >= 2, "too few training frames for ridge.folds")?;

        let p = &self.psth;
        check(p.bin_width_s > 0.0 && p.bin_width_s <= 1.0, "psth.bin_width_s must be in (0, 1]")?;
        check(p.window_lo_s.is_finite() && p.window_lo_s < p.window_hi_s && p.window_hi_s <= 10.0, "psth window must satisfy lo < hi <= 10")?;
        let bins = (p.window_hi_s - p.window_lo_s) / p.bin_width_s;
        check((bins - bins.round()).abs() < 1e-6 && bins.round() <= 100_000.0, "psth.bin_width_s must divide the window")?;
        check(p.trial_stride >= 1, "psth.trial_stride must be at least 1")?;

        let e = &self.eval;
        check((1..=1_000_000).contains(&e.permutations), "eval.permutations must be in [1, 1e6]")?;
        Ok(())
    }

    fn check_sgd(&self, section: &str, lr: f64, steps: usize, batch: usize) -> Result<()> {
        check(lr.is_finite() && (0.0..=10.0).contains(&lr), &format!("{section}.lr must be in [0, 10]"))?;
        check(steps <= 10_000_000, &format!("{section}.steps must be at most 1e7"))?;
        check((1..=100_000).contains(&batch), &format!("{section}.batch must be in [1, 1e5]"))
    }

    /// Index of the first held-out frame.
    pub fn split_point(&self) -> usize {
        (self.data.frames as f64 * self.data.train_fraction).floor() as usize
    }

    pub fn movie_spec(&self) -> MovieSpec {
        let d = &self.data;
        MovieSpec {
            frames: d.frames,
            height: d.height,
            width: d.width,
            channels: d.channels,
            n_classes: d.n_classes,
            frame_duration_s: d.frame_duration_s,
        }
    }

    pub fn encoding_config(&self, seed: u64) -> EncodingModelConfig {
        let e = &self.encoding;
        EncodingModelConfig {
            base_rate_hz: e.base_rate_hz,
            gain_hz: e.gain_hz,
            region_information: e.region_information.clone(),
            filter_scale: e.filter_scale,
            category_weight: e.category_weight,
            latency_s: e.latency_s,
            silent_units: e.silent_units,
            seed,
        }
    }

    pub fn hvae_config(&self) -> HvaeConfig {
        HvaeConfig {
            height: self.data.height,
            width: self.data.width,
            channels: self.data.channels,
            widths: self.hvae.widths.clone(),
            enc_hidden: self.hvae.enc_hidden,
            dec_hidden: self.hvae.dec_hidden,
        }
    }

    pub fn hvae_sgd(&self, seed: u64) -> SgdConfig {
        SgdConfig::new(self.hvae.lr, self.hvae.steps, self.hvae.batch, seed)
    }

    pub fn ae_config(&self) -> LatentAeConfig {
        LatentAeConfig {
            height: self.data.height,
            width: self.data.width,
            channels: self.data.channels,
            latent_channels: self.autoencoder.latent_channels,
            hidden: self.autoencoder.hidden,
        }
    }

    pub fn ae_sgd(&self, seed: u64) -> SgdConfig {
        let a = &self.autoencoder;
        SgdConfig::new(a.lr, a.steps, a.batch, seed)
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        crate::diffusion::make_schedule(self.diffusion.steps, self.diffusion.beta_lo, self.diffusion.beta_hi)
    }

    pub fn denoiser_config(&self) -> DenoiserConfig {
        DenoiserConfig {
            latent_len: self.ae_config().latent_len(),
            cond_len: 2 * self.semantic.feature_len,
            time_dim: self.diffusion.time_dim,
            hidden: self.diffusion.hidden,
        }
    }

    pub fn denoiser_sgd(&self, seed: u64) -> SgdConfig {
        let f = &self.diffusion;
        SgdConfig::new(f.lr, f.train_steps, f.batch, seed)
    }

    /// Ablation subsets with empty entries expanded to every region.
    pub fn ablation_subsets(&self) -> Vec<Vec<RegionLabel>> {
        self.eval
            .subsets
            .iter()
            .map(|s| if s.is_empty() { RegionLabel::ALL.to_vec() } else { s.clone() })
            .collect()
    }
}

/// Applies `section.key=value` (or top-level `key=value`) to a TOML tree.
/// The value is parsed as a TOML value, falling back to a bare string.
pub fn apply_override(tree: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Validation(format!("override `{assignment}` is not KEY=VALUE")))?;
    let key = key.trim();
    let raw = raw.trim();
    let value: toml::Value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Validation(format!("override key `{key}` is malformed")));
    }
    let mut table = tree;
    for p in &parts[..parts.len() - 1] {
        let entry = table.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| Error::Validation(format!("override key `{key}`: `{p}` is not a section")))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_roundtrip() {
        let c = RunConfig::default();
        c.validate().unwrap();
        let back = RunConfig::from_toml_str(&c.to_toml_string()).unwrap();
        assert_eq!(back, c);
        assert_eq!(c.split_point(), 480);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::from_toml_str("[data]\nframez = 3\n").is_err());
        assert!(RunConfig::from_toml_str("bogus = 1\n").is_err());
    }

    #[test]
    fn overrides_apply_and_validate() {
        let c = RunConfig::from_toml_with_overrides("", &["diffusion.strength=0.5".into(), "seed=9".into()]).unwrap();
        assert_eq!(c.diffusion.strength, 0.5);
        assert_eq!(c.seed, 9);
        assert!(RunConfig::from_toml_with_overrides("", &["diffusion.strength=1.5".into()]).is_err());
        assert!(RunConfig::from_toml_with_overrides("", &["diffusion.w_vision=0.7".into()]).is_err());
        assert!(RunConfig::from_toml_with_overrides("", &["nokey".into()]).is_err());
    }
}
