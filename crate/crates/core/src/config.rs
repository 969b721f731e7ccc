//! TOML configuration file.
//!
//! ```toml
//! [backend]
//! name = "mock"
//! timeout_s = 120
//! [backend.mock]
//! corrupt_every = 3
//!
//! [pipeline]
//! images_per_source = 4
//! output_root = "out"
//!
//! [data]
//! annotations = "data/annotations.json"
//! image_root = "data/images"
//! ```
//!
//! Every key is optional. Command-line flags override the file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generation::{BackendConfig, PromptBank};
use crate::pipeline::PipelineConfig;
use crate::preservation::CheckerConfig;
use crate::sea_state::ClassifierConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineSection {
    pub images_per_source: u64,
    pub seed: u64,
    pub output_root: PathBuf,
    pub keep_discarded: bool,
    pub workers: usize,
    pub mask_dilation: u32,
}

impl Default for PipelineSection {
    fn default() -> Self {
        let p = PipelineConfig::default();
        Self {
            images_per_source: p.images_per_source,
            seed: p.seed,
            output_root: p.output_root,
            keep_discarded: p.keep_discarded,
            workers: p.workers,
            mask_dilation: p.mask_dilation,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataSection {
    pub annotations: Option<PathBuf>,
    pub image_root: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AppConfig {
    pub backend: BackendConfig,
    pub classifier: ClassifierConfig,
    pub checker: CheckerConfig,
    pub prompts: Option<PromptBank>,
    pub pipeline: PipelineSection,
    pub data: DataSection,
}

impl AppConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a config file. Relative data and output paths are resolved
    /// against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut cfg.pipeline.output_root);
        cfg.data.annotations.as_mut().map(fix);
        cfg.data.image_root.as_mut().map(fix);
        cfg.classifier.model_path.as_mut().map(fix);
        cfg.checker.model_path.as_mut().map(fix);
        Ok(cfg)
    }

    pub fn pipeline_config(&self) -> PipelineConfig {
        PipelineConfig {
            backend: self.backend.clone(),
            classifier: self.classifier.clone(),
            checker: self.checker.clone(),
            prompts: self.prompts.clone().unwrap_or_default(),
            images_per_source: self.pipeline.images_per_source,
            seed: self.pipeline.seed,
            output_root: self.pipeline.output_root.clone(),
            keep_discarded: self.pipeline.keep_discarded,
            workers: self.pipeline.workers,
            mask_dilation: self.pipeline.mask_dilation,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = AppConfig::from_toml("").unwrap();
        assert_eq!(cfg, AppConfig::default());
        assert_eq!(cfg.backend.batch_size, 10);
        assert_eq!(cfg.pipeline_config().images_per_source, 1);
    }

    #[test]
    fn sections_parse() {
        let cfg = AppConfig::from_toml(
            r#"
            [backend]
            name = "http"
            endpoint = "http://localhost:9000"
            timeout_s = 5.0
            batch_size = 2
            [backend.mock]
            corrupt_every = 3
            [checker]
            threshold = 0.7
            audit = true
            [pipeline]
            images_per_source = 4
            seed = 7
            workers = 3
            "#,
        )
        .unwrap();
        assert_eq!(cfg.backend.endpoint.as_deref(), Some("http://localhost:9000"));
        assert_eq!(cfg.backend.mock.corrupt_every, Some(3));
        let p = cfg.pipeline_config();
        assert_eq!((p.images_per_source, p.seed, p.workers), (4, 7, 3));
        assert!(p.checker.audit && (p.checker.threshold - 0.7).abs() < 1e-12);
    }

    #[test]
    fn unknown_types_are_config_errors() {
        assert!(matches!(
            AppConfig::from_toml("[pipeline]\nseed = \"x\""),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn relative_paths_follow_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "[pipeline]\noutput_root = \"o\"\n[data]\nannotations = \"a.json\"\n").unwrap();
        let cfg = AppConfig::load(&path).unwrap();
        assert_eq!(cfg.pipeline.output_root, dir.path().join("o"));
        assert_eq!(cfg.data.annotations, Some(dir.path().join("a.json")));
    }
}
