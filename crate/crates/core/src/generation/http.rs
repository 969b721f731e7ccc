use std::time::Duration;

use super::wire::{self, MaskPolarity, WireError, WireRequest, WireResponse};
use super::{edited_id, GenerationBackend, GenerationRequest};
use crate::error::{Error, Result};
use crate::model::EditedImage;

/// Adapter for a generation service speaking the [`wire`] protocol.
pub struct HttpBackend {
    name: String,
    endpoint: String,
    timeout: Duration,
    invert_mask: bool,
    params: Option<serde_json::Value>,
    client: reqwest::blocking::Client,
}

impl HttpBackend {
    pub fn new(
        name: impl Into<String>,
        endpoint: impl Into<String>,
        timeout: Duration,
        invert_mask: bool,
        params: Option<serde_json::Value>,
    ) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .connect_timeout(timeout)
            .build()
            .map_err(|e| Error::BackendUnavailable(e.to_string()))?;
        Ok(Self {
            name: name.into(),
            endpoint: endpoint.into().trim_end_matches('/').to_string(),
            timeout,
            invert_mask,
            params,
            client,
        })
    }

    fn map_transport(&self, e: reqwest::Error) -> Error {
        if e.is_timeout() {
            Error::Timeout(self.timeout.as_secs_f64())
        } else {
            Error::BackendUnavailable(format!("{}: {e}", self.endpoint))
        }
    }
}

impl GenerationBackend for HttpBackend {
    fn name(&self) -> &str {
        &self.name
    }

    fn generate(&self, req: &GenerationRequest<'_>) -> Result<Vec<EditedImage>> {
        req.validate()?;
        let request_id = edited_id(&req.source.id, req.seed);
        let (mask_png, mask_polarity) = if self.invert_mask {
            (wire::encode_png(&req.mask.inverted())?, MaskPolarity::ObjectWhite)
        } else {
            (wire::encode_png(req.mask.as_gray())?, MaskPolarity::ObjectBlack)
        };
        let body = WireRequest {
            request_id: request_id.clone(),
            source_id: req.source.id.clone(),
            image_png: wire::encode_png(req.image)?,
            mask_png,
            mask_polarity,
            prompt: req.prompt.clone(),
            seed: req.seed,
            batch_size: req.batch_size,
            params: self.params.clone(),
        };
        let resp = self
            .client
            .post(format!("{}/generate", self.endpoint))
            .json(&body)
            .send()
            .map_err(|e| self.map_transport(e))?;
        let status = resp.status();
        let bytes = resp.bytes().map_err(|e| self.map_transport(e))?;
        if !status.is_success() {
            let message = serde_json::from_slice::<WireError>(&bytes)
                .map(|e| e.error.message)
                .unwrap_or_else(|_| format!("HTTP {status}"));
            return Err(Error::GenerationFailed {
                request_id,
                message,
            });
        }
        let parsed: WireResponse =
            serde_json::from_slice(&bytes).map_err(|e| Error::GenerationFailed {
                request_id: request_id.clone(),
                message: format!("bad response body: {e}"),
            })?;
        if parsed.images.len() != req.batch_size as usize {
            return Err(Error::GenerationFailed {
                request_id,
                message: format!(
                    "expected {} images, got {}",
                    req.batch_size,
                    parsed.images.len()
                ),
            });
        }
        parsed
            .images
            .into_iter()
            .map(|img| {
                Ok(EditedImage {
                    id: edited_id(&req.source.id, img.seed),
                    source_id: req.source.id.clone(),
                    path: None,
                    sea_state: None,
                    backend_name: self.name.clone(),
                    prompt: req.prompt.clone(),
                    seed: img.seed,
                    pixels: wire::decode_rgb(&img.png)?,
                })
            })
            .collect()
    }
}
