use std::fmt;
use std::path::{Path, PathBuf};

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BoundingBox;

/// Sea State level on the 1..=4 scale used by the filters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SeaState {
    Ss1,
    Ss2,
    Ss3,
    Ss4,
}

impl SeaState {
    pub const ALL: [SeaState; 4] = [SeaState::Ss1, SeaState::Ss2, SeaState::Ss3, SeaState::Ss4];

    pub fn level(self) -> u8 {
        self.index() as u8 + 1
    }

    /// Position in the fixed class order SS1..SS4.
    pub fn index(self) -> usize {
        match self {
            SeaState::Ss1 => 0,
            SeaState::Ss2 => 1,
            SeaState::Ss3 => 2,
            SeaState::Ss4 => 3,
        }
    }

    pub fn from_level(level: u8) -> Option<Self> {
        match level {
            1 => Some(SeaState::Ss1),
            2 => Some(SeaState::Ss2),
            3 => Some(SeaState::Ss3),
            4 => Some(SeaState::Ss4),
            _ => None,
        }
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    /// ABS sea-state definition.
    pub fn description(self) -> &'static str {
        match self {
            SeaState::Ss1 => "The water exhibits a gentle ripple, devoid of breaking waves, featuring a low swell of short to average length occasionally.",
            SeaState::Ss2 => "Slight waves breaking, with smooth waves on the water surface",
            SeaState::Ss3 => "Mildly increased waves, leading to some rock buoys and causing minor disturbances for small craft",
            SeaState::Ss4 => "The sea takes on a furrowed appearance, characterized by moderate waves",
        }
    }

    /// Directory name used in output layouts (`SS1`..`SS4`).
    pub fn dir_name(self) -> String {
        format!("SS{}", self.level())
    }
}

impl fmt::Display for SeaState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SS{}", self.level())
    }
}

impl Serialize for SeaState {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_u8(self.level())
    }
}

impl<'de> Deserialize<'de> for SeaState {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let level = u8::deserialize(d)?;
        SeaState::from_level(level)
            .ok_or_else(|| serde::de::Error::custom(format!("sea state {level} outside 1..=4")))
    }
}

/// A real annotated image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceImage {
    pub id: String,
    pub path: PathBuf,
    pub width: u32,
    pub height: u32,
    pub boxes: Vec<BoundingBox>,
}

impl SourceImage {
    pub fn boat_boxes(&self) -> impl Iterator<Item = (usize, &BoundingBox)> {
        self.boxes.iter().enumerate().filter(|(_, b)| b.is_boat())
    }

    pub fn has_boats(&self) -> bool {
        self.boxes.iter().any(BoundingBox::is_boat)
    }

    pub fn load_pixels(&self) -> Result<RgbImage> {
        load_rgb(&self.path)
    }
}

pub fn load_rgb(path: &Path) -> Result<RgbImage> {
    image::open(path)
        .map(|img| img.to_rgb8())
        .map_err(|e| Error::unreadable(path.display(), e))
}

pub fn save_png(img: &RgbImage, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::io(path, std::io::Error::other(e)))
}

/// A generated image together with its provenance.
#[derive(Debug, Clone)]
pub struct EditedImage {
    pub id: String,
    pub source_id: String,
    pub path: Option<PathBuf>,
    pub sea_state: Option<SeaState>,
    pub backend_name: String,
    pub prompt: String,
    pub seed: u64,
    pub pixels: RgbImage,
}

impl EditedImage {
    pub fn width(&self) -> u32 {
        self.pixels.width()
    }

    pub fn height(&self) -> u32 {
        self.pixels.height()
    }

    pub fn dims(&self) -> (u32, u32) {
        self.pixels.dimensions()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CropKind {
    Positive,
    QuarterNegative,
    BackgroundNegative,
}

impl CropKind {
    pub fn as_str(self) -> &'static str {
        match self {
            CropKind::Positive => "positive",
            CropKind::QuarterNegative => "quarter_negative",
            CropKind::BackgroundNegative => "background_negative",
        }
    }
}

/// A rectangular sub-image cut for preservation checking or training.
#[derive(Debug, Clone)]
pub struct Crop {
    pub source_box: BoundingBox,
    /// The rectangle actually extracted; always inside the parent image.
    pub region: BoundingBox,
    pub pixels: RgbImage,
    pub kind: CropKind,
}

impl Crop {
    /// Cuts `region` out of `img`. The region must already be in-image.
    pub fn cut(img: &RgbImage, source_box: BoundingBox, region: BoundingBox, kind: CropKind) -> Self {
        debug_assert!(region.in_image(img.width(), img.height()));
        let pixels = image::imageops::crop_imm(
            img,
            region.x as u32,
            region.y as u32,
            region.w as u32,
            region.h as u32,
        )
        .to_image();
        Self {
            source_box,
            region,
            pixels,
            kind,
        }
    }
}
