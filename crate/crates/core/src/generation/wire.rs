//! JSON wire format for out-of-process generation services.
//!
//! `POST {endpoint}/generate` with a [`WireRequest`] body. Images travel as
//! base64 PNG. The mask uses black-for-object unless `mask_polarity` says
//! otherwise. Success returns `200` with a [`WireResponse`]; failure returns a
//! non-2xx status with a [`WireError`] body.

use std::io::Cursor;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use image::{GrayImage, RgbImage};
use serde::{Deserialize, Serialize};

use super::{GenerationBackend, GenerationRequest};
use crate::error::{Error, Result};
use crate::mask::EditMask;
use crate::model::SourceImage;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskPolarity {
    ObjectBlack,
    ObjectWhite,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WireRequest {
    pub request_id: String,
    pub source_id: String,
    pub image_png: String,
    pub mask_png: String,
    pub mask_polarity: MaskPolarity,
    pub prompt: String,
    pub seed: u64,
    pub batch_size: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<serde_json::Value>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WireImage {
    pub seed: u64,
    pub png: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WireResponse {
    pub request_id: String,
    pub images: Vec<WireImage>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WireError {
    pub error: WireErrorBody,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WireErrorBody {
    pub request_id: String,
    pub message: String,
}

pub fn encode_png<P, C>(img: &image::ImageBuffer<P, C>) -> Result<String>
where
    P: image::PixelWithColorType,
    [P::Subpixel]: image::EncodableLayout,
    C: std::ops::Deref<Target = [P::Subpixel]>,
{
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, image::ImageFormat::Png)
        .map_err(|e| Error::unreadable("<encode>", e))?;
    Ok(STANDARD.encode(buf.into_inner()))
}

fn decode(b64: &str) -> Result<image::DynamicImage> {
    let bytes = STANDARD
        .decode(b64)
        .map_err(|e| Error::unreadable("<base64>", e))?;
    image::load_from_memory_with_format(&bytes, image::ImageFormat::Png)
        .map_err(|e| Error::unreadable("<png>", e))
}

pub fn decode_rgb(b64: &str) -> Result<RgbImage> {
    decode(b64).map(|i| i.to_rgb8())
}

pub fn decode_gray(b64: &str) -> Result<GrayImage> {
    decode(b64).map(|i| i.to_luma8())
}

/// Serves one wire request with an in-process backend. Used by the mock
/// generation endpoint so the HTTP adapter can be exercised end to end.
pub fn handle(backend: &dyn GenerationBackend, req: WireRequest) -> Result<WireResponse> {
    let image = decode_rgb(&req.image_png)?;
    let mut gray = decode_gray(&req.mask_png)?;
    if req.mask_polarity == MaskPolarity::ObjectWhite {
        image::imageops::invert(&mut gray);
    }
    let mask = EditMask::from_gray(gray)?;
    let source = SourceImage {
        id: req.source_id.clone(),
        path: Default::default(),
        width: image.width(),
        height: image.height(),
        boxes: Vec::new(),
    };
    let out = backend.generate(&GenerationRequest {
        source: &source,
        image: &image,
        mask: &mask,
        prompt: req.prompt,
        seed: req.seed,
        batch_size: req.batch_size,
    })?;
    Ok(WireResponse {
        request_id: req.request_id,
        images: out
            .iter()
            .map(|e| {
                Ok(WireImage {
                    seed: e.seed,
                    png: encode_png(&e.pixels)?,
                })
            })
            .collect::<Result<_>>()?,
    })
}
