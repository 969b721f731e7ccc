//! Edit masks derived from ground-truth boxes.

use std::path::{Path, PathBuf};

use image::{GrayImage, Luma};

use crate::error::{Error, Result};
use crate::model::SourceImage;

/// Pixel value for regions that must be preserved (black on disk).
pub const OBJECT: u8 = 0;
/// Pixel value for regions the backend may repaint.
pub const EDITABLE: u8 = 255;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EditMask {
    pixels: GrayImage,
}

impl EditMask {
    pub fn width(&self) -> u32 {
        self.pixels.width()
    }

    pub fn height(&self) -> u32 {
        self.pixels.height()
    }

    pub fn is_object(&self, x: u32, y: u32) -> bool {
        self.pixels.get_pixel(x, y)[0] == OBJECT
    }

    pub fn object_count(&self) -> usize {
        self.pixels.pixels().filter(|p| p[0] == OBJECT).count()
    }

    pub fn as_gray(&self) -> &GrayImage {
        &self.pixels
    }

    /// Same mask with OBJECT and EDITABLE swapped, for backends that expect
    /// white-for-keep.
    pub fn inverted(&self) -> GrayImage {
        let mut out = self.pixels.clone();
        for p in out.pixels_mut() {
            p[0] = if p[0] == OBJECT { EDITABLE } else { OBJECT };
        }
        out
    }

    pub fn from_gray(pixels: GrayImage) -> Result<Self> {
        if pixels.pixels().any(|p| p[0] != OBJECT && p[0] != EDITABLE) {
            return Err(Error::Validation("mask has values other than 0 and 255".into()));
        }
        Ok(Self { pixels })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        self.pixels
            .save_with_format(path, image::ImageFormat::Png)
            .map_err(|e| Error::io(path, std::io::Error::other(e)))
    }
}

/// OBJECT inside every (dilated, clamped) box, EDITABLE elsewhere.
///
/// All boxes are masked, whatever their class.
pub fn build_mask(src: &SourceImage, dilation: u32) -> EditMask {
    let mut pixels = GrayImage::from_pixel(src.width, src.height, Luma([EDITABLE]));
    for b in &src.boxes {
        let Some(r) = b.dilate(dilation as i64).clamp_to(src.width, src.height) else {
            continue;
        };
        for y in r.y..r.bottom() {
            for x in r.x..r.right() {
                pixels.put_pixel(x as u32, y as u32, Luma([OBJECT]));
            }
        }
    }
    EditMask { pixels }
}

/// `<dir>/<source_id>.mask.png`
pub fn mask_path(dir: &Path, source_id: &str) -> PathBuf {
    dir.join(format!("{source_id}.mask.png"))
}
