//! End-to-end orchestration: generate, classify the sea state, resize, crop,
//! check preservation, keep or discard, record.

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use chrono::{DateTime, Utc};
use image::imageops::FilterType;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tracing::{info, warn};

use crate::error::{Error, Result};
use crate::generation::{
    build_backend, edited_id, BackendConfig, GenerationBackend, GenerationRequest, PromptBank,
};
use crate::manifest::{
    compute_stats, load_manifest, CropVerdictEntry, DatasetStats, ManifestRecord, ManifestWriter,
    Verdict,
};
use crate::mask::build_mask;
use crate::model::{save_png, EditedImage, SourceImage};
use crate::preservation::{
    crop_boxes, extract_positive_crops, CheckerConfig, CheckerVerdict, PreservationChecker,
};
use crate::sea_state::{classify_sea_state, ClassifierConfig, SeaStateClassifier};

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const SUMMARY_FILE: &str = "run_summary.json";
pub const DISCARDED_DIR: &str = "discarded";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub backend: BackendConfig,
    pub classifier: ClassifierConfig,
    pub checker: CheckerConfig,
    pub prompts: PromptBank,
    pub images_per_source: u64,
    pub seed: u64,
    pub output_root: PathBuf,
    pub keep_discarded: bool,
    pub workers: usize,
    pub mask_dilation: u32,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            backend: BackendConfig::default(),
            classifier: ClassifierConfig::default(),
            checker: CheckerConfig::default(),
            prompts: PromptBank::default(),
            images_per_source: 1,
            seed: 0,
            output_root: PathBuf::from("out"),
            keep_discarded: false,
            workers: 1,
            mask_dilation: 0,
        }
    }
}

/// Bilinear resize to the source resolution; identity when already there.
pub fn resize_to_source(edited: EditedImage, src: &SourceImage) -> EditedImage {
    if edited.dims() == (src.width, src.height) {
        return edited;
    }
    let pixels = image::imageops::resize(&edited.pixels, src.width, src.height, FilterType::Triangle);
    EditedImage { pixels, ..edited }
}

/// Keep iff at least one object was judged a boat. No verdicts means discard.
pub fn filter_decision(verdicts: &[CheckerVerdict]) -> bool {
    verdicts.iter().any(|v| v.verdict == Verdict::Boat)
}

/// Percentage of generated images that passed the filters.
pub fn passing_rate(stats: &DatasetStats) -> Result<f64> {
    let generated = stats.total_generated();
    if generated == 0 {
        return Err(Error::EmptyManifest);
    }
    Ok(100.0 * stats.total_filtered() as f64 / generated as f64)
}

/// Per-state counts with totals and the overall passing rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub per_state: Vec<StateRow>,
    pub total_generated: u64,
    pub total_filtered: u64,
    pub passing_rate: f64,
}

impl StatsReport {
    pub fn new(stats: &DatasetStats) -> Result<Self> {
        Ok(Self {
            per_state: state_rows(stats),
            total_generated: stats.total_generated(),
            total_filtered: stats.total_filtered(),
            passing_rate: passing_rate(stats)?,
        })
    }

    pub fn table(&self) -> String {
        let mut out = format!("{:<6}{:>12}{:>12}  description\n", "state", "generated", "filtered");
        for (row, state) in self.per_state.iter().zip(crate::model::SeaState::ALL) {
            out += &format!(
                "{:<6}{:>12}{:>12}  {}\n",
                row.sea_state,
                row.generated,
                row.filtered,
                state.description()
            );
        }
        out += &format!("{:<6}{:>12}{:>12}\n", "total", self.total_generated, self.total_filtered);
        out += &format!("passing rate: {:.2}%\n", self.passing_rate);
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ItemFailure {
    pub source_id: String,
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateRow {
    pub sea_state: String,
    pub generated: u64,
    pub filtered: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub manifest: PathBuf,
    pub sources_total: usize,
    pub sources_without_boats: usize,
    /// Records already present before this run started. This and
    /// `records_written` describe one invocation and are not persisted, so
    /// the stored summary depends only on the dataset.
    #[serde(skip)]
    pub records_resumed: usize,
    #[serde(skip)]
    pub records_written: usize,
    pub records_total: u64,
    pub kept_total: u64,
    pub failed_items: usize,
    pub failures: Vec<ItemFailure>,
    pub per_state: Vec<StateRow>,
    pub passing_rate: Option<f64>,
    pub started_at: DateTime<Utc>,
    pub finished_at: DateTime<Utc>,
}

impl RunSummary {
    /// Copy with timestamps zeroed, for determinism checks.
    pub fn without_timestamps(&self) -> Self {
        Self {
            started_at: DateTime::<Utc>::UNIX_EPOCH,
            finished_at: DateTime::<Utc>::UNIX_EPOCH,
            ..self.clone()
        }
    }
}

pub fn state_rows(stats: &DatasetStats) -> Vec<StateRow> {
    crate::model::SeaState::ALL
        .iter()
        .map(|s| StateRow {
            sea_state: s.to_string(),
            generated: stats.generated_per_state[s.index()],
            filtered: stats.filtered_per_state[s.index()],
        })
        .collect()
}

struct Components {
    backend: Box<dyn GenerationBackend>,
    classifier: SeaStateClassifier,
    checker: PreservationChecker,
}

/// Outcome of processing one generated image.
struct Processed {
    record: ManifestRecord,
    image: EditedImage,
}

/// Runs the classify -> resize -> crop -> check chain on one generated image.
fn process_one(
    c: &Components,
    cfg: &PipelineConfig,
    src: &SourceImage,
    source_pixels: &image::RgbImage,
    mut edited: EditedImage,
) -> Result<Processed> {
    let (state, _) = classify_sea_state(&mut edited, &c.classifier);
    let edited = resize_to_source(edited, src);
    let verdicts = check_preservation(&c.checker, cfg.checker.audit, &edited, src, source_pixels)?;
    let kept = filter_decision(&verdicts);
    let record = ManifestRecord {
        edited_id: edited.id.clone(),
        source_id: src.id.clone(),
        backend_name: edited.backend_name.clone(),
        prompt: edited.prompt.clone(),
        seed: edited.seed,
        sea_state: state,
        crop_verdicts: verdicts
            .iter()
            .map(|v| CropVerdictEntry {
                box_index: v.box_index,
                verdict: v.verdict,
            })
            .collect(),
        kept,
        created_at: Utc::now(),
    };
    Ok(Processed {
        record,
        image: edited,
    })
}

/// Checks the boat crops of an edited image, already at source resolution.
/// Stops at the first boat verdict unless `audit` is set.
pub fn check_preservation(
    checker: &PreservationChecker,
    audit: bool,
    edited: &EditedImage,
    src: &SourceImage,
    source_pixels: &image::RgbImage,
) -> Result<Vec<CheckerVerdict>> {
    let crops = extract_positive_crops(edited, src)?;
    let pristine = crop_boxes(source_pixels, &src.boxes, true);
    let mut verdicts = Vec::with_capacity(crops.len());
    for ((k, crop), (_, reference)) in crops.iter().zip(&pristine) {
        let v = checker.check_crop(*k, crop, Some(&reference.pixels))?;
        let boat = v.verdict == Verdict::Boat;
        verdicts.push(v);
        if boat && !audit {
            break;
        }
    }
    Ok(verdicts)
}

fn image_destination(cfg: &PipelineConfig, rec: &ManifestRecord) -> Option<PathBuf> {
    let file = format!("{}.png", rec.edited_id);
    if rec.kept {
        Some(cfg.output_root.join(rec.sea_state.dir_name()).join(file))
    } else if cfg.keep_discarded {
        Some(cfg.output_root.join(DISCARDED_DIR).join(file))
    } else {
        None
    }
}

/// Locates the stored image of a manifest record under `output_root`.
pub fn stored_image_path(output_root: &Path, rec: &ManifestRecord) -> Option<PathBuf> {
    let file = format!("{}.png", rec.edited_id);
    [
        output_root.join(rec.sea_state.dir_name()).join(&file),
        output_root.join(DISCARDED_DIR).join(&file),
    ]
    .into_iter()
    .find(|p| p.is_file())
}

/// Contiguous runs of `indices`, each split into chunks of at most `max`.
pub(crate) fn batches(indices: &[u64], max: u64) -> Vec<(u64, u64)> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < indices.len() {
        let start = indices[i];
        let mut len = 1;
        while i + (len as usize) < indices.len()
            && indices[i + len as usize] == start + len
            && len < max
        {
            len += 1;
        }
        out.push((start, len));
        i += len as usize;
    }
    out
}

/// Processes every source, appending one manifest record per generated image.
///
/// Generation index `g` of the `i`-th source (sorted by id) uses seed
/// `seed + i * images_per_source + g`. Images already recorded in the
/// manifest are skipped, so an interrupted run can simply be restarted.
pub fn run_pipeline(sources: &[SourceImage], cfg: &PipelineConfig) -> Result<RunSummary> {
    let backend = build_backend(&cfg.backend)?;
    run_pipeline_with(sources, cfg, backend)
}

/// As [`run_pipeline`], with an explicit backend.
pub fn run_pipeline_with(
    sources: &[SourceImage],
    cfg: &PipelineConfig,
    backend: Box<dyn GenerationBackend>,
) -> Result<RunSummary> {
    if cfg.images_per_source == 0 {
        return Err(Error::Config("images_per_source must be at least 1".into()));
    }
    let started_at = Utc::now();
    let components = Components {
        backend,
        classifier: SeaStateClassifier::from_config(&cfg.classifier)?,
        checker: PreservationChecker::from_config(&cfg.checker)?,
    };
    std::fs::create_dir_all(&cfg.output_root).map_err(|e| Error::io(&cfg.output_root, e))?;
    let manifest_path = cfg.output_root.join(MANIFEST_FILE);
    let done: HashSet<String> = load_manifest(&manifest_path)?
        .records
        .into_iter()
        .map(|r| r.edited_id)
        .collect();
    let records_resumed = done.len();
    let writer = Mutex::new(ManifestWriter::open(&manifest_path)?);
    let failures = Mutex::new(Vec::<ItemFailure>::new());
    let written = std::sync::atomic::AtomicUsize::new(0);

    let mut ordered: Vec<&SourceImage> = sources.iter().collect();
    ordered.sort_by(|a, b| a.id.cmp(&b.id));
    let without_boats = ordered.iter().filter(|s| !s.has_boats()).count();

    let work = |(index, src): (usize, &&SourceImage)| -> Result<()> {
        if !src.has_boats() {
            warn!(source = %src.id, "skipping source without boat boxes");
            return Ok(());
        }
        let base = cfg
            .seed
            .wrapping_add(index as u64 * cfg.images_per_source);
        let todo: Vec<u64> = (0..cfg.images_per_source)
            .filter(|g| !done.contains(&edited_id(&src.id, base.wrapping_add(*g))))
            .collect();
        if todo.is_empty() {
            return Ok(());
        }
        let fail = |seed: u64, e: &Error| {
            warn!(source = %src.id, seed, error = %e, "item failed");
            failures.lock().unwrap().push(ItemFailure {
                source_id: src.id.clone(),
                seed,
                error: e.to_string(),
            });
        };
        let pixels = match src.load_pixels() {
            Ok(p) if p.dimensions() == (src.width, src.height) => p,
            Ok(p) => {
                let e = Error::DimensionMismatch {
                    expected: (src.width, src.height),
                    actual: p.dimensions(),
                };
                todo.iter().for_each(|g| fail(base.wrapping_add(*g), &e));
                return Ok(());
            }
            Err(e) => {
                todo.iter().for_each(|g| fail(base.wrapping_add(*g), &e));
                return Ok(());
            }
        };
        let mask = build_mask(src, cfg.mask_dilation);
        for (first, len) in batches(&todo, cfg.backend.batch_size.max(1) as u64) {
            let seed = base.wrapping_add(first);
            let request = GenerationRequest {
                source: src,
                image: &pixels,
                mask: &mask,
                prompt: cfg.prompts.prompt_for(cfg.backend.profile, first).to_string(),
                seed,
                batch_size: len as u32,
            };
            let outputs = match components.backend.generate(&request) {
                Ok(o) => o,
                Err(e) => {
                    (0..len).for_each(|i| fail(seed.wrapping_add(i), &e));
                    continue;
                }
            };
            for edited in outputs {
                let item_seed = edited.seed;
                let processed = match process_one(&components, cfg, src, &pixels, edited) {
                    Ok(p) => p,
                    Err(e) => {
                        fail(item_seed, &e);
                        continue;
                    }
                };
                if let Some(dest) = image_destination(cfg, &processed.record) {
                    if let Err(e) = save_png(&processed.image.pixels, &dest) {
                        fail(item_seed, &e);
                        continue;
                    }
                }
                writer.lock().unwrap().append(&processed.record)?;
                written.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
            }
        }
        Ok(())
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers.max(1))
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    pool.install(|| ordered.par_iter().enumerate().try_for_each(work))?;

    let stats = compute_stats(&manifest_path)?;
    let mut failures = failures.into_inner().unwrap();
    failures.sort();
    let summary = RunSummary {
        manifest: manifest_path,
        sources_total: sources.len(),
        sources_without_boats: without_boats,
        records_resumed,
        records_written: written.into_inner(),
        records_total: stats.total_generated(),
        kept_total: stats.total_filtered(),
        failed_items: failures.len(),
        failures,
        per_state: state_rows(&stats),
        passing_rate: passing_rate(&stats).ok(),
        started_at,
        finished_at: Utc::now(),
    };
    let summary_path = cfg.output_root.join(SUMMARY_FILE);
    let json = serde_json::to_string_pretty(&summary).map_err(|e| Error::io(&summary_path, e.into()))?;
    std::fs::write(&summary_path, json).map_err(|e| Error::io(&summary_path, e))?;
    info!(
        records = summary.records_total,
        kept = summary.kept_total,
        failed = summary.failed_items,
        "run finished"
    );
    Ok(summary)
}
