//! Object-preservation checking.
//!
//! Crops every ground-truth boat out of an edited image and asks a binary
//! boat / not-boat classifier whether the object survived. Also builds the
//! negative training crops: random background regions that avoid every box,
//! and "quarter" crops that overlap a box by a quarter of its area.

use std::path::{Path, PathBuf};

use image::RgbImage;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{intersect_area, BoundingBox};
use crate::ledger::JsonlAppender;
use crate::manifest::Verdict;
use crate::model::{save_png, Crop, CropKind, EditedImage, SourceImage};
use crate::nn::{to_tensor, Network};
use crate::train::{self, ModelSidecar, TrainConfig, TrainReport};

/// Class order of the learned checker; `boat` first.
pub const CLASS_ORDER: [&str; 2] = ["boat", "not_boat"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckerVerdict {
    pub box_index: usize,
    pub verdict: Verdict,
    /// Boat-class score.
    pub confidence: f64,
}

/// Cuts `boxes` (clamped to the image) out of `img`, keeping box indices.
pub fn crop_boxes(img: &RgbImage, boxes: &[BoundingBox], boats_only: bool) -> Vec<(usize, Crop)> {
    boxes
        .iter()
        .enumerate()
        .filter(|(_, b)| !boats_only || b.is_boat())
        .filter_map(|(i, b)| {
            let region = b.clamp_to(img.width(), img.height())?;
            Some((i, Crop::cut(img, b.clone(), region, CropKind::Positive)))
        })
        .collect()
}

/// One positive crop per boat box. The image must already have the source's
/// dimensions.
pub fn extract_positive_crops(image: &EditedImage, source: &SourceImage) -> Result<Vec<(usize, Crop)>> {
    let expected = (source.width, source.height);
    if image.dims() != expected {
        return Err(Error::DimensionMismatch {
            expected,
            actual: image.dims(),
        });
    }
    Ok(crop_boxes(&image.pixels, &source.boxes, true))
}

/// The corner-shifted placements of `b` that stay inside a `width x height`
/// image. Each is shifted by `(+-ceil(w/2), +-ceil(h/2))`, so its overlap
/// with `b` is `floor(w/2) * floor(h/2)`.
pub fn quarter_placements(b: &BoundingBox, width: u32, height: u32) -> Vec<BoundingBox> {
    let dx = (b.w + 1) / 2;
    let dy = (b.h + 1) / 2;
    [(dx, dy), (-dx, dy), (dx, -dy), (-dx, -dy)]
        .into_iter()
        .map(|(sx, sy)| b.translate(sx, sy))
        .filter(|r| r.in_image(width, height))
        .collect()
}

pub fn synthesize_quarter_negative(img: &RgbImage, b: &BoundingBox, rng_seed: u64) -> Result<Crop> {
    let options = quarter_placements(b, img.width(), img.height());
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let region = options.choose(&mut rng).cloned().ok_or(Error::NoValidPlacement {
        w: b.w as u32,
        h: b.h as u32,
    })?;
    Ok(Crop::cut(img, b.clone(), region, CropKind::QuarterNegative))
}

const BACKGROUND_ATTEMPTS: usize = 256;

/// A `w x h` region at a random position that touches none of `boxes`.
pub fn background_negative(
    img: &RgbImage,
    boxes: &[BoundingBox],
    w: u32,
    h: u32,
    rng: &mut impl Rng,
) -> Result<Crop> {
    let no_room = Error::NoValidPlacement { w, h };
    if w == 0 || h == 0 || w > img.width() || h > img.height() {
        return Err(no_room);
    }
    for _ in 0..BACKGROUND_ATTEMPTS {
        let x = rng.random_range(0..=img.width() - w) as i64;
        let y = rng.random_range(0..=img.height() - h) as i64;
        let region = BoundingBox::new(x, y, w as i64, h as i64, "background").unwrap();
        if boxes.iter().all(|b| intersect_area(&region, b) == 0) {
            return Ok(Crop::cut(img, region.clone(), region, CropKind::BackgroundNegative));
        }
    }
    Err(no_room)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckerMode {
    Learned,
    #[default]
    SyntheticFeature,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CheckerConfig {
    pub mode: CheckerMode,
    pub model_path: Option<PathBuf>,
    /// Boat verdict iff confidence >= threshold.
    pub threshold: f64,
    /// Mean absolute difference (0..255) from the pristine crop at which the
    /// synthetic-feature confidence falls to 0.5.
    pub half_confidence_mad: f64,
    /// Check and record every crop instead of stopping at the first boat.
    pub audit: bool,
}

impl Default for CheckerConfig {
    fn default() -> Self {
        Self {
            mode: CheckerMode::default(),
            model_path: None,
            threshold: 0.5,
            half_confidence_mad: 10.0,
            audit: false,
        }
    }
}

pub enum PreservationChecker {
    SyntheticFeature { threshold: f64, half_mad: f64 },
    Learned { net: Network, resolution: u32, threshold: f64 },
}

fn mean_abs_diff(a: &RgbImage, b: &RgbImage) -> f64 {
    let sum: u64 = a
        .as_raw()
        .iter()
        .zip(b.as_raw())
        .map(|(x, y)| x.abs_diff(*y) as u64)
        .sum();
    sum as f64 / a.as_raw().len() as f64
}

impl PreservationChecker {
    pub fn from_config(cfg: &CheckerConfig) -> Result<Self> {
        if !(0.0..=1.0).contains(&cfg.threshold) {
            return Err(Error::Config("checker.threshold must be in [0, 1]".into()));
        }
        match cfg.mode {
            CheckerMode::SyntheticFeature => Ok(Self::SyntheticFeature {
                threshold: cfg.threshold,
                half_mad: cfg.half_confidence_mad,
            }),
            CheckerMode::Learned => {
                let path = cfg
                    .model_path
                    .as_deref()
                    .ok_or_else(|| Error::ModelMissing(PathBuf::from("<checker.model_path unset>")))?;
                let (net, sidecar) = train::load_artifact(path)?;
                if sidecar.class_order != CLASS_ORDER {
                    return Err(Error::Config(format!(
                        "{}: class order {:?} is not boat,not_boat",
                        path.display(),
                        sidecar.class_order
                    )));
                }
                Ok(Self::Learned {
                    net,
                    resolution: sidecar.input_resolution,
                    threshold: cfg.threshold,
                })
            }
        }
    }

    /// `pristine` is the same region cut from the source image; the
    /// synthetic-feature mode requires it, the learned mode ignores it.
    pub fn check_crop(
        &self,
        box_index: usize,
        crop: &Crop,
        pristine: Option<&RgbImage>,
    ) -> Result<CheckerVerdict> {
        if crop.pixels.width() == 0 || crop.pixels.height() == 0 {
            return Err(Error::EmptyCrop);
        }
        let (confidence, threshold) = match self {
            Self::SyntheticFeature {
                threshold,
                half_mad,
            } => {
                let reference = pristine.ok_or(Error::MissingReference)?;
                if reference.dimensions() != crop.pixels.dimensions() {
                    return Err(Error::DimensionMismatch {
                        expected: reference.dimensions(),
                        actual: crop.pixels.dimensions(),
                    });
                }
                let mad = mean_abs_diff(&crop.pixels, reference);
                ((-mad * std::f64::consts::LN_2 / half_mad).exp(), *threshold)
            }
            Self::Learned {
                net,
                resolution,
                threshold,
            } => (net.predict(&to_tensor(&crop.pixels, *resolution))[0], *threshold),
        };
        Ok(CheckerVerdict {
            box_index,
            verdict: if confidence >= threshold {
                Verdict::Boat
            } else {
                Verdict::NotBoat
            },
            confidence,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CheckerTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub test_fraction: f64,
    pub resolution: u32,
    /// Also blur positives at random during training.
    pub blur_augment: bool,
}

impl Default for CheckerTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 32,
            learning_rate: 1e-5,
            seed: 0,
            test_fraction: 0.2,
            resolution: 32,
            blur_augment: false,
        }
    }
}

/// Trains the boat / not-boat model with Adam (no decay) and horizontal-flip
/// augmentation on positives only.
pub fn train_checker(
    positives: &Path,
    negatives: &Path,
    cfg: &CheckerTrainConfig,
    out_dir: &Path,
) -> Result<TrainReport> {
    let samples = train::load_class_dirs(&[
        (CLASS_ORDER[0], positives.to_path_buf()),
        (CLASS_ORDER[1], negatives.to_path_buf()),
    ])?;
    let (train_set, test_set) = train::split(samples, 2, cfg.test_fraction, cfg.seed);
    let tc = TrainConfig {
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        learning_rate: cfg.learning_rate,
        seed: cfg.seed,
        test_fraction: cfg.test_fraction,
        resolution: cfg.resolution,
        hflip_classes: vec![0],
        blur_classes: if cfg.blur_augment { vec![0] } else { Vec::new() },
    };
    let (net, report) = train::train(&train_set, &test_set, &CLASS_ORDER, &tc)?;
    train::save_artifact(
        out_dir,
        &net,
        &ModelSidecar {
            task: "preservation_checker".into(),
            mode: "learned".into(),
            arch: net.arch,
            input_resolution: cfg.resolution,
            class_order: CLASS_ORDER.iter().map(|s| s.to_string()).collect(),
            seed: cfg.seed,
            test_accuracy: report.test_accuracy,
            weights_file: train::WEIGHTS_FILE.into(),
        },
    )?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NegativeSetConfig {
    pub backgrounds_per_image: usize,
    /// Fixed background crop size; otherwise the size of a random box of the
    /// image's source, or 32x32 when it has none.
    pub background_size: Option<(u32, u32)>,
    pub quarter_negatives: bool,
    /// Also write ground-truth boat crops from the sources into `boat/`.
    pub positives: bool,
}

impl Default for NegativeSetConfig {
    fn default() -> Self {
        Self {
            backgrounds_per_image: 2,
            background_size: None,
            quarter_negatives: true,
            positives: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CropEntry {
    pub file: String,
    pub kind: CropKind,
    pub image_id: String,
    pub source_id: String,
    pub box_index: Option<usize>,
    pub region: BoundingBox,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NegativeSetReport {
    pub entries: Vec<CropEntry>,
    /// Items dropped because no valid placement existed.
    pub skipped: usize,
}

impl NegativeSetReport {
    pub fn count(&self, kind: CropKind) -> usize {
        self.entries.iter().filter(|e| e.kind == kind).count()
    }
}

/// Writes `boat/` and `not_boat/` crop directories plus `provenance.jsonl`.
pub fn build_negative_set(
    sources: &[SourceImage],
    edited: &[EditedImage],
    cfg: &NegativeSetConfig,
    rng_seed: u64,
    out_dir: &Path,
) -> Result<NegativeSetReport> {
    if sources.is_empty() || edited.is_empty() {
        return Err(Error::Validation("negative-set inputs must be non-empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut report = NegativeSetReport::default();
    let mut provenance = JsonlAppender::<CropEntry>::open(&out_dir.join("provenance.jsonl"))?;
    let mut emit = |report: &mut NegativeSetReport, entry: CropEntry, crop: &Crop| -> Result<()> {
        let sub = if entry.kind == CropKind::Positive { "boat" } else { "not_boat" };
        save_png(&crop.pixels, &out_dir.join(sub).join(&entry.file))?;
        provenance.append(&entry)?;
        report.entries.push(entry);
        Ok(())
    };

    let mut sorted_sources: Vec<&SourceImage> = sources.iter().collect();
    sorted_sources.sort_by(|a, b| a.id.cmp(&b.id));
    if cfg.positives {
        for src in &sorted_sources {
            let img = src.load_pixels()?;
            for (k, crop) in crop_boxes(&img, &src.boxes, true) {
                let entry = CropEntry {
                    file: format!("{}.obj{k}.{}.png", src.id, CropKind::Positive.as_str()),
                    kind: CropKind::Positive,
                    image_id: src.id.clone(),
                    source_id: src.id.clone(),
                    box_index: Some(k),
                    region: crop.region.clone(),
                };
                emit(&mut report, entry, &crop)?;
            }
        }
    }

    let mut sorted_edited: Vec<&EditedImage> = edited.iter().collect();
    sorted_edited.sort_by(|a, b| a.id.cmp(&b.id));
    for e in sorted_edited {
        let Some(src) = sources.iter().find(|s| s.id == e.source_id) else {
            report.skipped += 1;
            continue;
        };
        if e.dims() != (src.width, src.height) {
            report.skipped += 1;
            continue;
        }
        for j in 0..cfg.backgrounds_per_image {
            let (w, h) = cfg.background_size.unwrap_or_else(|| {
                src.boxes
                    .choose(&mut rng)
                    .map(|b| (b.w as u32, b.h as u32))
                    .unwrap_or((32, 32))
            });
            match background_negative(&e.pixels, &src.boxes, w, h, &mut rng) {
                Ok(crop) => {
                    let entry = CropEntry {
                        file: format!("{}.bg{j}.{}.png", e.id, CropKind::BackgroundNegative.as_str()),
                        kind: CropKind::BackgroundNegative,
                        image_id: e.id.clone(),
                        source_id: src.id.clone(),
                        box_index: None,
                        region: crop.region.clone(),
                    };
                    emit(&mut report, entry, &crop)?;
                }
                Err(Error::NoValidPlacement { .. }) => report.skipped += 1,
                Err(other) => return Err(other),
            }
        }
        if cfg.quarter_negatives {
            for (k, b) in src.boat_boxes() {
                match synthesize_quarter_negative(&e.pixels, b, rng.random()) {
                    Ok(crop) => {
                        let entry = CropEntry {
                            file: format!("{}.obj{k}.{}.png", e.id, CropKind::QuarterNegative.as_str()),
                            kind: CropKind::QuarterNegative,
                            image_id: e.id.clone(),
                            source_id: src.id.clone(),
                            box_index: Some(k),
                            region: crop.region.clone(),
                        };
                        emit(&mut report, entry, &crop)?;
                    }
                    Err(Error::NoValidPlacement { .. }) => report.skipped += 1,
                    Err(other) => return Err(other),
                }
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::texture::{boat_template, sea_texture};

    #[test]
    fn positive_crops_follow_boxes() {
        let img = sea_texture(64, 48, 0.3, 1);
        let boxes = vec![
            BoundingBox::boat(2, 3, 10, 6),
            BoundingBox::new(20, 20, 3, 3, "swimmer").unwrap(),
            BoundingBox::boat(30, 10, 8, 8),
        ];
        let crops = crop_boxes(&img, &boxes, true);
        assert_eq!(crops.len(), 2);
        assert_eq!(crops[0].1.region, boxes[0]);
        assert_eq!(crops[1].0, 2);
        assert_eq!(crops[1].1.pixels.dimensions(), (8, 8));
    }

    #[test]
    fn overhanging_box_is_clamped() {
        let img = sea_texture(64, 48, 0.3, 1);
        let b = BoundingBox::boat(57, 5, 10, 6);
        let crops = crop_boxes(&img, std::slice::from_ref(&b), true);
        // 57 + 10 = 67 overhangs a 64-wide image by 3.
        assert_eq!(crops[0].1.region.w, b.w - 3);
        assert!(crops[0].1.region.in_image(64, 48));
    }

    #[test]
    fn unresized_image_is_rejected() {
        let src = SourceImage {
            id: "s".into(),
            path: "s.png".into(),
            width: 64,
            height: 48,
            boxes: vec![BoundingBox::boat(1, 1, 4, 4)],
        };
        let e = EditedImage {
            id: "e".into(),
            source_id: "s".into(),
            path: None,
            sea_state: None,
            backend_name: "mock".into(),
            prompt: String::new(),
            seed: 0,
            pixels: RgbImage::new(32, 32),
        };
        assert!(matches!(
            extract_positive_crops(&e, &src),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn quarter_negative_examples() {
        let img = RgbImage::new(400, 400);
        let b = BoundingBox::boat(100, 100, 40, 20);
        let options = quarter_placements(&b, 400, 400);
        assert_eq!(options.len(), 4);
        assert!(options.contains(&BoundingBox::boat(120, 110, 40, 20)));
        for r in &options {
            assert_eq!(intersect_area(r, &b), 200);
        }
        let crop = synthesize_quarter_negative(&img, &b, 7).unwrap();
        assert_eq!(crop.kind, CropKind::QuarterNegative);
        assert_eq!(intersect_area(&crop.region, &b) * 4, b.area());

        let odd = BoundingBox::boat(100, 100, 9, 9);
        for r in quarter_placements(&odd, 400, 400) {
            assert_eq!(intersect_area(&r, &odd), 16);
        }
    }

    #[test]
    fn corner_box_has_single_placement() {
        let b = BoundingBox::boat(0, 0, 10, 10);
        assert_eq!(quarter_placements(&b, 15, 15), vec![BoundingBox::boat(5, 5, 10, 10)]);
        // A 12x12 image cannot hold any shifted 10x10 crop.
        let err = synthesize_quarter_negative(&RgbImage::new(12, 12), &b, 0).unwrap_err();
        assert!(matches!(err, Error::NoValidPlacement { w: 10, h: 10 }));
    }

    #[test]
    fn background_negatives_avoid_boxes() {
        let img = RgbImage::new(64, 64);
        let boxes = vec![BoundingBox::boat(10, 10, 20, 20), BoundingBox::boat(40, 0, 10, 64)];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let c = background_negative(&img, &boxes, 8, 8, &mut rng).unwrap();
            assert!(boxes.iter().all(|b| intersect_area(&c.region, b) == 0));
        }
        let full = vec![BoundingBox::boat(0, 0, 64, 64)];
        assert!(background_negative(&img, &full, 8, 8, &mut rng).is_err());
    }

    fn crop_of(img: &RgbImage) -> Crop {
        let r = BoundingBox::boat(0, 0, img.width() as i64, img.height() as i64);
        Crop::cut(img, r.clone(), r, CropKind::Positive)
    }

    #[test]
    fn synthetic_checker_verdicts() {
        let checker = PreservationChecker::from_config(&CheckerConfig::default()).unwrap();
        let boat = boat_template(16, 10);
        let v = checker.check_crop(0, &crop_of(&boat), Some(&boat)).unwrap();
        assert_eq!((v.verdict, v.confidence), (Verdict::Boat, 1.0));
        let sea = sea_texture(16, 10, 0.5, 4);
        let v = checker.check_crop(3, &crop_of(&sea), Some(&boat)).unwrap();
        assert_eq!((v.box_index, v.verdict), (3, Verdict::NotBoat));
        assert!(matches!(
            checker.check_crop(0, &crop_of(&boat), None),
            Err(Error::MissingReference)
        ));
        let empty = Crop {
            source_box: BoundingBox::boat(0, 0, 1, 1),
            region: BoundingBox::boat(0, 0, 1, 1),
            pixels: RgbImage::new(0, 0),
            kind: CropKind::Positive,
        };
        assert!(matches!(checker.check_crop(0, &empty, None), Err(Error::EmptyCrop)));
    }

    #[test]
    fn verdict_is_monotone_in_confidence() {
        let boat = boat_template(16, 10);
        let checker = PreservationChecker::from_config(&CheckerConfig::default()).unwrap();
        let mut last = f64::INFINITY;
        let mut flipped = false;
        for shift in 0..=60u8 {
            let mut noisy = boat.clone();
            for p in noisy.pixels_mut() {
                p[0] = p[0].saturating_sub(shift * 3);
            }
            let v = checker.check_crop(0, &crop_of(&noisy), Some(&boat)).unwrap();
            assert!(v.confidence <= last);
            last = v.confidence;
            if v.verdict == Verdict::NotBoat {
                flipped = true;
            } else {
                assert!(!flipped, "verdict flipped back to boat");
            }
        }
        assert!(flipped);
    }
}
