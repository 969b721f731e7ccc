//! Individual pipeline stages run on their own, for inspection and scripting.
//!
//! `generate_images` writes `<id>.png` files plus a `generated.jsonl` index.
//! `load_generated` reads either that layout or a full pipeline output
//! directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tracing::warn;

use crate::error::{Error, Result};
use crate::generation::{build_backend, GenerationRequest};
use crate::ledger::{read_jsonl, JsonlAppender};
use crate::manifest::load_manifest;
use crate::mask::{build_mask, mask_path};
use crate::model::{load_rgb, save_png, EditedImage, SeaState, SourceImage};
use crate::pipeline::{
    batches, check_preservation, filter_decision, resize_to_source, stored_image_path, ItemFailure,
    PipelineConfig, MANIFEST_FILE,
};
use crate::preservation::{CheckerConfig, CheckerVerdict, PreservationChecker};
use crate::sea_state::{SeaStateClassifier, SeaStateScores};

pub const GENERATED_FILE: &str = "generated.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedEntry {
    pub edited_id: String,
    pub source_id: String,
    pub backend_name: String,
    pub prompt: String,
    pub seed: u64,
    /// File name relative to the index.
    pub file: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GenerateReport {
    pub entries: Vec<GeneratedEntry>,
    pub failures: Vec<ItemFailure>,
}

/// Writes `<id>.mask.png` for every source into `dir`.
pub fn write_masks(sources: &[SourceImage], dilation: u32, dir: &Path) -> Result<Vec<PathBuf>> {
    sources
        .iter()
        .map(|src| {
            let path = mask_path(dir, &src.id);
            build_mask(src, dilation).save(&path)?;
            Ok(path)
        })
        .collect()
}

/// Generation only, with the same seed assignment as the full pipeline.
pub fn generate_images(sources: &[SourceImage], cfg: &PipelineConfig, dir: &Path) -> Result<GenerateReport> {
    let backend = build_backend(&cfg.backend)?;
    let mut index = JsonlAppender::<GeneratedEntry>::open(&dir.join(GENERATED_FILE))?;
    let mut ordered: Vec<&SourceImage> = sources.iter().collect();
    ordered.sort_by(|a, b| a.id.cmp(&b.id));
    let mut report = GenerateReport::default();
    for (i, src) in ordered.into_iter().enumerate() {
        if !src.has_boats() {
            warn!(source = %src.id, "skipping source without boat boxes");
            continue;
        }
        let base = cfg.seed.wrapping_add(i as u64 * cfg.images_per_source);
        let pixels = src.load_pixels()?;
        let mask = build_mask(src, cfg.mask_dilation);
        let all: Vec<u64> = (0..cfg.images_per_source).collect();
        for (first, len) in batches(&all, cfg.backend.batch_size.max(1) as u64) {
            let seed = base.wrapping_add(first);
            let req = GenerationRequest {
                source: src,
                image: &pixels,
                mask: &mask,
                prompt: cfg.prompts.prompt_for(cfg.backend.profile, first).to_string(),
                seed,
                batch_size: len as u32,
            };
            match backend.generate(&req) {
                Ok(images) => {
                    for img in images {
                        let file = format!("{}.png", img.id);
                        save_png(&img.pixels, &dir.join(&file))?;
                        let entry = GeneratedEntry {
                            edited_id: img.id,
                            source_id: img.source_id,
                            backend_name: img.backend_name,
                            prompt: img.prompt,
                            seed: img.seed,
                            file,
                        };
                        index.append(&entry)?;
                        report.entries.push(entry);
                    }
                }
                Err(e) => report.failures.extend((0..len).map(|k| ItemFailure {
                    source_id: src.id.clone(),
                    seed: seed.wrapping_add(k),
                    error: e.to_string(),
                })),
            }
        }
    }
    Ok(report)
}

/// Loads edited images from a `generate` directory or a pipeline output
/// root. Records whose image was not stored are skipped.
pub fn load_generated(dir: &Path) -> Result<Vec<EditedImage>> {
    let index = dir.join(GENERATED_FILE);
    let manifest = dir.join(MANIFEST_FILE);
    let mut out = Vec::new();
    if index.is_file() {
        for e in read_jsonl::<GeneratedEntry>(&index)?.records {
            out.push(EditedImage {
                pixels: load_rgb(&dir.join(&e.file))?,
                path: Some(dir.join(&e.file)),
                id: e.edited_id,
                source_id: e.source_id,
                sea_state: None,
                backend_name: e.backend_name,
                prompt: e.prompt,
                seed: e.seed,
            });
        }
    } else if manifest.is_file() {
        for r in load_manifest(&manifest)?.records {
            let Some(path) = stored_image_path(dir, &r) else {
                continue;
            };
            out.push(EditedImage {
                pixels: load_rgb(&path)?,
                path: Some(path),
                id: r.edited_id,
                source_id: r.source_id,
                sea_state: Some(r.sea_state),
                backend_name: r.backend_name,
                prompt: r.prompt,
                seed: r.seed,
            });
        }
    } else {
        return Err(Error::Validation(format!(
            "{} has neither {GENERATED_FILE} nor {MANIFEST_FILE}",
            dir.display()
        )));
    }
    out.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(out)
}

/// PNG files named directly or found (non-recursively) in directories.
pub fn expand_image_paths(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = std::fs::read_dir(p)
                .map_err(|e| Error::io(p, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
                .collect();
            found.sort();
            out.extend(found);
        } else if p.is_file() {
            out.push(p.clone());
        } else {
            return Err(Error::MissingImage(p.clone()));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classified {
    pub path: PathBuf,
    pub sea_state: SeaState,
    pub scores: SeaStateScores,
}

pub fn classify_files(paths: &[PathBuf], classifier: &SeaStateClassifier) -> Result<Vec<Classified>> {
    paths
        .iter()
        .map(|p| {
            let (sea_state, scores) = classifier.classify(&load_rgb(p)?);
            Ok(Classified {
                path: p.clone(),
                sea_state,
                scores,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub edited_id: String,
    pub source_id: String,
    pub verdicts: Vec<CheckerVerdict>,
    pub kept: bool,
}

/// Runs the preservation filter over edited images.
pub fn check_generated(edited: Vec<EditedImage>, sources: &[SourceImage], cfg: &CheckerConfig) -> Result<Vec<CheckOutcome>> {
    let checker = PreservationChecker::from_config(cfg)?;
    let mut cached: Option<(String, image::RgbImage)> = None;
    let mut out = Vec::with_capacity(edited.len());
    for e in edited {
        let src = sources
            .iter()
            .find(|s| s.id == e.source_id)
            .ok_or_else(|| Error::Validation(format!("{}: unknown source {}", e.id, e.source_id)))?;
        if cached.as_ref().is_none_or(|(id, _)| *id != src.id) {
            cached = Some((src.id.clone(), src.load_pixels()?));
        }
        let pixels = &cached.as_ref().unwrap().1;
        let e = resize_to_source(e, src);
        let verdicts = check_preservation(&checker, cfg.audit, &e, src, pixels)?;
        out.push(CheckOutcome {
            kept: filter_decision(&verdicts),
            edited_id: e.id,
            source_id: src.id.clone(),
            verdicts,
        });
    }
    Ok(out)
}
