//! Benign visual perturbations and the per-image variant suite.
//!
//! Every operation is a pure function of its inputs, so suites for
//! different samples can be generated in parallel and reproduce bit-exactly.

mod ops;
mod overlay;

use std::fmt;
use std::str::FromStr;

use image::RgbImage;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use ops::{
    pad_or_crop, rotate_expand, rotated_canvas, scale_image, scale_with_pad, shift_cyclic,
    Background,
};
pub use overlay::{glyph_size, overlay_text, text_band, OVERLAY_COLOR, OVERLAY_PHRASES};

#[derive(Debug, Error, PartialEq)]
pub enum PerturbError {
    #[error("{op}: image {width}x{height} too small for parameter {param}")]
    TooSmall {
        op: &'static str,
        width: u32,
        height: u32,
        param: i32,
    },
    #[error("invalid parameter: {0}")]
    BadParameter(String),
    #[error("unrecognised variant id {0:?}")]
    UnknownId(String),
}

/// Perturbation family, as written in variant manifests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Identity,
    Shift,
    PadCrop,
    Scale,
    ScalePad,
    TextOverlay,
    Rotation,
}

impl Family {
    pub fn as_str(self) -> &'static str {
        match self {
            Family::Identity => "identity",
            Family::Shift => "shift",
            Family::PadCrop => "pad_crop",
            Family::Scale => "scale",
            Family::ScalePad => "scale_pad",
            Family::TextOverlay => "text_overlay",
            Family::Rotation => "rotation",
        }
    }
}

/// One declarative perturbation. The id is a pure function of family and
/// parameter, e.g. `shift:-12`, `scale_pad:90:white`, `sweep:150`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PerturbationSpec {
    Identity,
    Shift(i32),
    PadCrop(i32),
    /// Scale factor in percent.
    Scale(u32),
    ScalePad(u32, Background),
    TextOverlay(usize),
    Rotation(i32),
    /// Rotation used only for the full-circle sweep, kept apart from the suite.
    SweepRotation(i32),
}

impl PerturbationSpec {
    pub fn family(&self) -> Family {
        match self {
            PerturbationSpec::Identity => Family::Identity,
            PerturbationSpec::Shift(_) => Family::Shift,
            PerturbationSpec::PadCrop(_) => Family::PadCrop,
            PerturbationSpec::Scale(_) => Family::Scale,
            PerturbationSpec::ScalePad(..) => Family::ScalePad,
            PerturbationSpec::TextOverlay(_) => Family::TextOverlay,
            PerturbationSpec::Rotation(_) | PerturbationSpec::SweepRotation(_) => Family::Rotation,
        }
    }

    pub fn param(&self) -> String {
        match self {
            PerturbationSpec::Identity => String::new(),
            PerturbationSpec::Shift(n) | PerturbationSpec::PadCrop(n) => n.to_string(),
            PerturbationSpec::Scale(p) => p.to_string(),
            PerturbationSpec::ScalePad(p, bg) => format!("{p}:{}", bg.as_str()),
            PerturbationSpec::TextOverlay(i) => i.to_string(),
            PerturbationSpec::Rotation(a) | PerturbationSpec::SweepRotation(a) => a.to_string(),
        }
    }

    pub fn id(&self) -> String {
        match self {
            PerturbationSpec::Identity => "identity".to_string(),
            PerturbationSpec::SweepRotation(a) => format!("sweep:{a}"),
            other => format!("{}:{}", other.family().as_str(), other.param()),
        }
    }

    pub fn is_sweep(&self) -> bool {
        matches!(self, PerturbationSpec::SweepRotation(_))
    }

    pub fn apply(&self, image: &RgbImage) -> Result<RgbImage, PerturbError> {
        match *self {
            PerturbationSpec::Identity => Ok(image.clone()),
            PerturbationSpec::Shift(n) => shift_cyclic(image, n),
            PerturbationSpec::PadCrop(n) => pad_or_crop(image, n),
            PerturbationSpec::Scale(p) => scale_image(image, p as f64 / 100.0),
            PerturbationSpec::ScalePad(p, bg) => scale_with_pad(image, p as f64 / 100.0, bg),
            PerturbationSpec::TextOverlay(i) => overlay_text(image, i),
            PerturbationSpec::Rotation(a) | PerturbationSpec::SweepRotation(a) => {
                rotate_expand(image, a as f64)
            }
        }
    }
}

impl fmt::Display for PerturbationSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.id())
    }
}

impl FromStr for PerturbationSpec {
    type Err = PerturbError;

    fn from_str(id: &str) -> Result<Self, Self::Err> {
        let unknown = || PerturbError::UnknownId(id.to_string());
        if id == "identity" {
            return Ok(PerturbationSpec::Identity);
        }
        let (family, param) = id.split_once(':').ok_or_else(unknown)?;
        let int = |s: &str| s.parse::<i32>().map_err(|_| unknown());
        Ok(match family {
            "shift" => PerturbationSpec::Shift(int(param)?),
            "pad_crop" => PerturbationSpec::PadCrop(int(param)?),
            "scale" => PerturbationSpec::Scale(param.parse().map_err(|_| unknown())?),
            "scale_pad" => {
                let (p, bg) = param.split_once(':').ok_or_else(unknown)?;
                PerturbationSpec::ScalePad(
                    p.parse().map_err(|_| unknown())?,
                    Background::parse(bg).ok_or_else(unknown)?,
                )
            }
            "text_overlay" => PerturbationSpec::TextOverlay(param.parse().map_err(|_| unknown())?),
            "rotation" => PerturbationSpec::Rotation(int(param)?),
            "sweep" => PerturbationSpec::SweepRotation(int(param)?),
            _ => return Err(unknown()),
        })
    }
}

/// One generated variant.
#[derive(Debug, Clone, PartialEq)]
pub struct Variant {
    pub spec: PerturbationSpec,
    pub image: RgbImage,
}

/// The family of image variants for one sample, identity first.
#[derive(Debug, Clone, PartialEq)]
pub struct VariantSet {
    pub sample_id: String,
    pub variants: Vec<Variant>,
}

impl VariantSet {
    pub fn ids(&self) -> Vec<String> {
        self.variants.iter().map(|v| v.spec.id()).collect()
    }

    pub fn count_by_family(&self) -> std::collections::BTreeMap<Family, usize> {
        let mut m = std::collections::BTreeMap::new();
        for v in &self.variants {
            *m.entry(v.spec.family()).or_insert(0) += 1;
        }
        m
    }
}

/// Parameter grids and family toggles for the visual suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SuiteConfig {
    pub shift: bool,
    pub shift_offsets: Vec<i32>,
    pub pad_crop: bool,
    pub pad_crop_offsets: Vec<i32>,
    pub scale: bool,
    pub scale_percent: u32,
    pub scale_pad: bool,
    pub scale_pad_backgrounds: Vec<String>,
    pub text_overlay: bool,
    pub overlay_phrases: Vec<usize>,
    pub rotation: bool,
    pub rotation_angles: Vec<i32>,
    /// Emit the 30-degree full-circle sweep next to the suite.
    pub rotation_sweep: bool,
}

/// The default offset grid: -16..=16 in steps of 4, skipping 0.
pub const STANDARD_OFFSETS: [i32; 8] = [-16, -12, -8, -4, 4, 8, 12, 16];

/// Sweep angles after the implicit 0 degrees.
pub const SWEEP_ANGLES: [i32; 11] = [30, 60, 90, 120, 150, 180, 210, 240, 270, 300, 330];

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            shift: true,
            shift_offsets: STANDARD_OFFSETS.to_vec(),
            pad_crop: true,
            pad_crop_offsets: STANDARD_OFFSETS.to_vec(),
            scale: true,
            scale_percent: 90,
            scale_pad: true,
            scale_pad_backgrounds: vec!["black".into(), "white".into()],
            text_overlay: true,
            overlay_phrases: (0..OVERLAY_PHRASES.len()).collect(),
            rotation: true,
            rotation_angles: vec![-30, 30],
            rotation_sweep: false,
        }
    }
}

impl SuiteConfig {
    /// The ordered perturbations of the suite, identity first.
    pub fn specs(&self) -> Result<Vec<PerturbationSpec>, PerturbError> {
        let mut out = vec![PerturbationSpec::Identity];
        if self.shift {
            out.extend(self.shift_offsets.iter().map(|&n| PerturbationSpec::Shift(n)));
        }
        if self.pad_crop {
            out.extend(self.pad_crop_offsets.iter().map(|&n| PerturbationSpec::PadCrop(n)));
        }
        if self.scale {
            out.push(PerturbationSpec::Scale(self.scale_percent));
        }
        if self.scale_pad {
            for bg in &self.scale_pad_backgrounds {
                let bg = Background::parse(bg)
                    .ok_or_else(|| PerturbError::BadParameter(format!("background {bg:?}")))?;
                out.push(PerturbationSpec::ScalePad(self.scale_percent, bg));
            }
        }
        if self.text_overlay {
            out.extend(self.overlay_phrases.iter().map(|&i| PerturbationSpec::TextOverlay(i)));
        }
        if self.rotation {
            out.extend(self.rotation_angles.iter().map(|&a| PerturbationSpec::Rotation(a)));
        }
        if self.rotation_sweep {
            out.extend(SWEEP_ANGLES.iter().map(|&a| PerturbationSpec::SweepRotation(a)));
        }
        let mut ids: Vec<String> = out.iter().map(|s| s.id()).collect();
        ids.sort();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(PerturbError::BadParameter("duplicate variant ids in suite".into()));
        }
        Ok(out)
    }
}

/// Apply every perturbation of `config` to `image`.
pub fn generate_variants(
    sample_id: &str,
    image: &RgbImage,
    config: &SuiteConfig,
) -> Result<VariantSet, PerturbError> {
    let variants = config
        .specs()?
        .into_iter()
        .map(|spec| spec.apply(image).map(|image| Variant { spec, image }))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(VariantSet {
        sample_id: sample_id.to_string(),
        variants,
    })
}

/// The standard 28-entry suite: identity plus 27 perturbations.
pub fn generate_suite(sample_id: &str, image: &RgbImage) -> Result<VariantSet, PerturbError> {
    generate_variants(sample_id, image, &SuiteConfig::default())
}

/// One line of the visual variant manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VisualManifestEntry {
    pub sample_id: String,
    pub variant_id: String,
    pub family: Family,
    pub param: String,
    pub image_path: String,
}
