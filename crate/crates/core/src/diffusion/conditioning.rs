use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_W_VISION: f64 = 0.6;
pub const DEFAULT_W_TEXT: f64 = 0.4;

/// Vision- and text-analog features with their mixing weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditioningFeatures {
    pub vision_feat: Vec<f64>,
    pub text_feat: Vec<f64>,
    pub w_vision: f64,
    pub w_text: f64,
}

impl ConditioningFeatures {
    pub fn new(vision_feat: Vec<f64>, text_feat: Vec<f64>) -> Self {
        ConditioningFeatures { vision_feat, text_feat, w_vision: DEFAULT_W_VISION, w_text: DEFAULT_W_TEXT }
    }

    pub fn mixed(&self) -> Result<Vec<f64>> {
        mix_conditioning(&self.vision_feat, &self.text_feat, self.w_vision, self.w_text)
    }
}

/// `[w_vision · vision ‖ w_text · text]`.
pub fn mix_conditioning(vision: &[f64], text: &[f64], w_vision: f64, w_text: f64) -> Result<Vec<f64>> {
    check_weights(w_vision, w_text)?;
    Ok(vision.iter().map(|v| w_vision * v).chain(text.iter().map(|t| w_text * t)).collect())
}

pub fn check_weights(w_vision: f64, w_text: f64) -> Result<()> {
    if !(w_vision >= 0.0 && w_text >= 0.0) || (w_vision + w_text - 1.0).abs() > 1e-9 {
        return Err(Error::Validation(format!(
            "conditioning weights must be non-negative and sum to 1, got {w_vision} + {w_text}"
        )));
    }
    Ok(())
}
