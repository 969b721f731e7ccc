//! Image-editing backends.
//!
//! A backend repaints the EDITABLE part of a source image according to a text
//! prompt. Real diffusion models run out of process behind [`HttpBackend`];
//! [`MockBackend`] is a deterministic in-process stand-in.

mod http;
mod mock;
pub mod wire;

use std::time::Duration;

use image::RgbImage;
use serde::{Deserialize, Serialize};

pub use self::http::HttpBackend;
pub use self::mock::{MockBackend, MockOptions};
use crate::error::{Error, Result};
use crate::mask::EditMask;
use crate::model::{EditedImage, SeaState, SourceImage};

pub struct GenerationRequest<'a> {
    pub source: &'a SourceImage,
    pub image: &'a RgbImage,
    pub mask: &'a EditMask,
    pub prompt: String,
    pub seed: u64,
    pub batch_size: u32,
}

impl GenerationRequest<'_> {
    pub fn validate(&self) -> Result<()> {
        let src = (self.source.width, self.source.height);
        if self.image.dimensions() != src {
            return Err(Error::DimensionMismatch {
                expected: src,
                actual: self.image.dimensions(),
            });
        }
        if (self.mask.width(), self.mask.height()) != src {
            return Err(Error::DimensionMismatch {
                expected: src,
                actual: (self.mask.width(), self.mask.height()),
            });
        }
        if self.batch_size == 0 {
            return Err(Error::Validation("batch_size must be at least 1".into()));
        }
        Ok(())
    }

    /// Seed of batch element `i`.
    pub fn seed_at(&self, i: u32) -> u64 {
        self.seed.wrapping_add(i as u64)
    }
}

/// Id of the image generated from `source_id` with `seed`.
pub fn edited_id(source_id: &str, seed: u64) -> String {
    format!("{source_id}-{seed}")
}

pub trait GenerationBackend: Send + Sync {
    fn name(&self) -> &str;

    /// Returns `batch_size` images; element `i` was generated with `seed + i`.
    fn generate(&self, request: &GenerationRequest<'_>) -> Result<Vec<EditedImage>>;
}

/// Which prompts a run feeds the backend.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Profile {
    /// Blended editing with the single generic prompt.
    #[default]
    #[serde(alias = "bld")]
    BldStyle,
    /// Inpainting cycling through the four per-state prompts.
    #[serde(alias = "inpaint")]
    InpaintStyle,
}

const CAMERA_SUFFIX: &str = "Canon EOS R3, Nikon d850 400mm, Canon DSLR, lens 300mm, 4K, HD.";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBank {
    pub generic: String,
    pub per_state: [String; 4],
}

impl Default for PromptBank {
    fn default() -> Self {
        let state = |body: &str| format!("Aerial image of the sea's surface. {body} {CAMERA_SUFFIX}");
        Self {
            generic: format!("Aerial image of sea's surface. {}", CAMERA_SUFFIX.trim_end_matches('.')),
            per_state: [
                state("The water is gently rippled with no waves breaking."),
                state("There are slight waves breaking with smooth wave on surface."),
                state("Mild Waves are slight causing rock buoys and small craft."),
                state("The water has furrowed appearance with moderate waves."),
            ],
        }
    }
}

impl PromptBank {
    pub fn for_state(&self, state: SeaState) -> &str {
        &self.per_state[state.index()]
    }

    /// Prompt for the `generation_index`-th image of a source.
    pub fn prompt_for(&self, profile: Profile, generation_index: u64) -> &str {
        match profile {
            Profile::BldStyle => &self.generic,
            Profile::InpaintStyle => &self.per_state[(generation_index % 4) as usize],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendConfig {
    /// `mock` or `http`.
    pub name: String,
    pub profile: Profile,
    pub endpoint: Option<String>,
    pub timeout_s: f64,
    pub batch_size: u32,
    /// Send white-for-object masks instead of black-for-object.
    pub invert_mask: bool,
    /// Opaque parameters forwarded to the generation service.
    pub params: Option<serde_json::Value>,
    pub mock: MockOptions,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            name: "mock".into(),
            profile: Profile::default(),
            endpoint: None,
            timeout_s: 120.0,
            batch_size: 10,
            invert_mask: false,
            params: None,
            mock: MockOptions::default(),
        }
    }
}

impl BackendConfig {
    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_s.max(0.001))
    }
}

pub fn build_backend(cfg: &BackendConfig) -> Result<Box<dyn GenerationBackend>> {
    match cfg.name.as_str() {
        "mock" => Ok(Box::new(MockBackend::new(cfg.mock.clone()))),
        "http" => {
            let endpoint = cfg
                .endpoint
                .clone()
                .ok_or_else(|| Error::Config("backend.endpoint is required for http".into()))?;
            Ok(Box::new(HttpBackend::new(
                "http",
                endpoint,
                cfg.timeout(),
                cfg.invert_mask,
                cfg.params.clone(),
            )?))
        }
        other => Err(Error::Config(format!("unknown backend {other}"))),
    }
}
