use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Visual cortical area of a recorded unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RegionLabel {
    #[serde(rename = "VISp")]
    VisP,
    #[serde(rename = "VISl", alias = "VISI")]
    VisL,
    #[serde(rename = "VISpm")]
    VisPm,
    #[serde(rename = "VISam")]
    VisAm,
    #[serde(rename = "VISal")]
    VisAl,
    #[serde(rename = "VISrl")]
    VisRl,
}

impl RegionLabel {
    pub const ALL: [RegionLabel; 6] = [
        RegionLabel::VisP,
        RegionLabel::VisL,
        RegionLabel::VisPm,
        RegionLabel::VisAm,
        RegionLabel::VisAl,
        RegionLabel::VisRl,
    ];

    pub fn code(self) -> &'static str {
        match self {
            RegionLabel::VisP => "VISp",
            RegionLabel::VisL => "VISl",
            RegionLabel::VisPm => "VISpm",
            RegionLabel::VisAm => "VISam",
            RegionLabel::VisAl => "VISal",
            RegionLabel::VisRl => "VISrl",
        }
    }
}

impl fmt::Display for RegionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for RegionLabel {
    type Err = Error;

    /// Exact codes only. `VISI` (capital i) is accepted as an alias of `VISl`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "VISI" => Ok(RegionLabel::VisL),
            _ => RegionLabel::ALL
                .into_iter()
                .find(|r| r.code() == s)
                .ok_or_else(|| Error::Validation(format!("unknown region code {s:?}"))),
        }
    }
}
