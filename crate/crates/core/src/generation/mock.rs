use image::RgbImage;
use serde::{Deserialize, Serialize};

use super::{edited_id, GenerationBackend, GenerationRequest};
use crate::error::{Error, Result};
use crate::mask::EDITABLE;
use crate::model::EditedImage;
use crate::texture::{roughness_from_seed, sea_texture};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MockOptions {
    /// Overwrite OBJECT pixels too, destroying every object.
    pub corrupt_objects: bool,
    /// Corrupt only outputs whose seed satisfies `seed % n == n - 1`.
    pub corrupt_every: Option<u64>,
    /// Fail requests whose first seed satisfies `seed % n == 0`.
    pub fail_every: Option<u64>,
    /// Fixed roughness instead of the seed-derived one.
    pub roughness: Option<f64>,
    /// Output resolution; defaults to the source resolution.
    pub native_width: Option<u32>,
    pub native_height: Option<u32>,
}

/// Deterministic procedural backend.
///
/// EDITABLE pixels become a sea texture whose roughness comes from the seed;
/// OBJECT pixels are copied from the source unless corruption applies.
#[derive(Debug, Clone, Default)]
pub struct MockBackend {
    pub options: MockOptions,
}

impl MockBackend {
    pub fn new(options: MockOptions) -> Self {
        Self { options }
    }

    pub fn corrupts(&self, seed: u64) -> bool {
        self.options.corrupt_objects
            || self
                .options
                .corrupt_every
                .is_some_and(|n| n > 0 && seed % n == n - 1)
    }

    pub fn roughness(&self, seed: u64) -> f64 {
        self.options.roughness.unwrap_or_else(|| roughness_from_seed(seed))
    }

    fn render(&self, req: &GenerationRequest<'_>, seed: u64) -> RgbImage {
        let (w, h) = req.image.dimensions();
        let mut out = sea_texture(w, h, self.roughness(seed), seed);
        if !self.corrupts(seed) {
            for (x, y, p) in out.enumerate_pixels_mut() {
                if req.mask.as_gray().get_pixel(x, y)[0] != EDITABLE {
                    *p = *req.image.get_pixel(x, y);
                }
            }
        }
        match (self.options.native_width, self.options.native_height) {
            (None, None) => out,
            (nw, nh) => image::imageops::resize(
                &out,
                nw.unwrap_or(w),
                nh.unwrap_or(h),
                image::imageops::FilterType::Triangle,
            ),
        }
    }
}

impl GenerationBackend for MockBackend {
    fn name(&self) -> &str {
        "mock"
    }

    fn generate(&self, req: &GenerationRequest<'_>) -> Result<Vec<EditedImage>> {
        req.validate()?;
        if let Some(n) = self.options.fail_every.filter(|&n| n > 0) {
            if req.seed.is_multiple_of(n) {
                return Err(Error::GenerationFailed {
                    request_id: edited_id(&req.source.id, req.seed),
                    message: "injected mock failure".into(),
                });
            }
        }
        Ok((0..req.batch_size)
            .map(|i| {
                let seed = req.seed_at(i);
                EditedImage {
                    id: edited_id(&req.source.id, seed),
                    source_id: req.source.id.clone(),
                    path: None,
                    sea_state: None,
                    backend_name: self.name().to_string(),
                    prompt: req.prompt.clone(),
                    seed,
                    pixels: self.render(req, seed),
                }
            })
            .collect())
    }
}
