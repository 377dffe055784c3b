use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Sensor band of an image.
///
/// Serialized with the upper-case names (`RGB`, `LWIR`, `RGB_LWIR`); on disk
/// each band lives in a lower-case directory (`rgb`, `lwir`, `fused`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Band {
    #[serde(rename = "RGB", alias = "rgb")]
    Rgb,
    #[serde(rename = "LWIR", alias = "lwir")]
    Lwir,
    #[serde(rename = "RGB_LWIR", alias = "fused", alias = "rgb_lwir")]
    RgbLwir,
}

impl Band {
    pub const ALL: [Band; 3] = [Band::Rgb, Band::Lwir, Band::RgbLwir];

    pub fn dir_name(self) -> &'static str {
        match self {
            Band::Rgb => "rgb",
            Band::Lwir => "lwir",
            Band::RgbLwir => "fused",
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Band::Rgb => "RGB",
            Band::Lwir => "LWIR",
            Band::RgbLwir => "RGB_LWIR",
        }
    }
}

impl fmt::Display for Band {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Band {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "rgb" => Ok(Band::Rgb),
            "lwir" => Ok(Band::Lwir),
            "fused" | "rgb_lwir" | "rgb-lwir" => Ok(Band::RgbLwir),
            other => Err(format!("unknown band `{other}`")),
        }
    }
}
