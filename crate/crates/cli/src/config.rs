//! Optional TOML defaults, one table per subcommand.
//!
//! ```toml
//! [eval]
//! iou_threshold = 0.75
//! iou_kind = "mask"
//!
//! [synth]
//! seed = 7
//! lanes = "1-4"
//! ```

use std::path::Path;

use serde::Deserialize;

use crate::args::{FieldKind, IouKindArg, MaskFormat};
use crate::CliError;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(default)]
    pub preprocess: PreprocessDefaults,
    #[serde(default)]
    pub rasterize: RasterizeDefaults,
    #[serde(default)]
    pub eval: EvalDefaults,
    #[serde(default)]
    pub synth: SynthDefaults,
    #[serde(default)]
    pub anchors: AnchorDefaults,
    #[serde(default)]
    pub roi_demo: RoiDemoDefaults,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreprocessDefaults {
    pub default_dims: Option<String>,
    pub keep_empty: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RasterizeDefaults {
    pub default_dims: Option<String>,
    pub format: Option<MaskFormat>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalDefaults {
    pub default_dims: Option<String>,
    pub iou_threshold: Option<f64>,
    pub iou_kind: Option<IouKindArg>,
    pub threads: Option<usize>,
    pub strict_orphans: Option<bool>,
    pub stamp: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthDefaults {
    pub seed: Option<u64>,
    pub n_images: Option<usize>,
    pub image_size: Option<String>,
    pub lanes: Option<String>,
    pub jitter: Option<f64>,
    pub drop_rate: Option<f64>,
    pub fp_rate: Option<f64>,
    pub score_noise: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnchorDefaults {
    pub grid: Option<String>,
    pub base_size: Option<f64>,
    pub scales: Option<Vec<f64>>,
    pub ratios: Option<Vec<f64>>,
    pub stride: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoiDemoDefaults {
    pub grid: Option<String>,
    pub field: Option<FieldKind>,
    pub value: Option<f64>,
    pub roi: Option<Vec<f64>>,
    pub scale: Option<f64>,
    pub bins: Option<String>,
    pub sampling_points: Option<usize>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::BadInput(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| CliError::BadInput(format!("config {}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sections_are_optional() {
        let cfg = FileConfig::parse("[eval]\niou_threshold = 0.75\niou_kind = \"mask\"\n").unwrap();
        assert_eq!(cfg.eval.iou_threshold, Some(0.75));
        assert_eq!(cfg.eval.iou_kind, Some(IouKindArg::Mask));
        assert!(cfg.synth.seed.is_none());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(FileConfig::parse("[eval]\niou_treshold = 0.75\n").is_err());
        assert!(FileConfig::parse("[evaluate]\n").is_err());
    }
}
