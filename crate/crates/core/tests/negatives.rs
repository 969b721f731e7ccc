mod common;

use std::path::Path;

use seasynth_core::generation::MockOptions;
use seasynth_core::model::CropKind;
use seasynth_core::pipeline::{run_pipeline, PipelineConfig};
use seasynth_core::preservation::{build_negative_set, CropEntry, NegativeSetConfig, NegativeSetReport};
use seasynth_core::stages::load_generated;
use seasynth_core::texture::write_fixture_sources;
use seasynth_core::{EditedImage, SourceImage};

fn dataset(dir: &Path) -> (Vec<SourceImage>, Vec<EditedImage>) {
    let sources = write_fixture_sources(&dir.join("src"), 5, 96, 72, 21).unwrap();
    let mut cfg = PipelineConfig {
        images_per_source: 2,
        seed: 40,
        output_root: dir.join("run"),
        keep_discarded: true,
        ..PipelineConfig::default()
    };
    cfg.backend.mock = MockOptions { corrupt_every: Some(3), ..Default::default() };
    run_pipeline(&sources, &cfg).unwrap();
    let edited = load_generated(&cfg.output_root).unwrap();
    (sources, edited)
}

fn build(dir: &Path, sources: &[SourceImage], edited: &[EditedImage], cfg: &NegativeSetConfig) -> NegativeSetReport {
    build_negative_set(sources, edited, cfg, 17, dir).unwrap()
}

#[test]
fn crops_satisfy_their_geometric_contracts() {
    let tmp = tempfile::tempdir().unwrap();
    let (sources, edited) = dataset(tmp.path());
    assert_eq!(edited.len(), 10);
    let out = tmp.path().join("neg");
    let report = build(&out, &sources, &edited, &NegativeSetConfig::default());

    let n_boats: usize = sources.iter().map(|s| s.boat_boxes().count()).sum();
    assert_eq!(report.count(CropKind::Positive), n_boats);

    for e in &report.entries {
        let src = sources.iter().find(|s| s.id == e.source_id).unwrap();
        assert!(e.region.in_image(src.width, src.height), "{e:?}");
        match e.kind {
            CropKind::Positive => {
                assert_eq!(e.region, src.boxes[e.box_index.unwrap()]);
            }
            CropKind::BackgroundNegative => {
                for b in &src.boxes {
                    assert_eq!(common::pixel_overlap(&e.region, b), 0, "{e:?} touches {b:?}");
                }
            }
            CropKind::QuarterNegative => {
                let b = &src.boxes[e.box_index.unwrap()];
                assert_eq!((e.region.w, e.region.h), (b.w, b.h));
                assert_eq!(common::pixel_overlap(&e.region, b), (b.w / 2) * (b.h / 2), "{e:?}");
            }
        }
        let sub = if e.kind == CropKind::Positive { "boat" } else { "not_boat" };
        let img = image::open(out.join(sub).join(&e.file)).unwrap();
        assert_eq!((img.width() as i64, img.height() as i64), (e.region.w, e.region.h));
    }

    // Two backgrounds per image plus one quarter negative per boat.
    let quarter_targets: usize = edited
        .iter()
        .map(|e| sources.iter().find(|s| s.id == e.source_id).unwrap().boat_boxes().count())
        .sum();
    let attempted = 2 * edited.len() + quarter_targets;
    let negatives = report.count(CropKind::BackgroundNegative) + report.count(CropKind::QuarterNegative);
    assert_eq!(negatives + report.skipped, attempted);

    let provenance = std::fs::read_to_string(out.join("provenance.jsonl")).unwrap();
    let logged: Vec<CropEntry> = provenance.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(logged, report.entries);
}

#[test]
fn same_seed_same_set() {
    let tmp = tempfile::tempdir().unwrap();
    let (sources, edited) = dataset(tmp.path());
    let cfg = NegativeSetConfig::default();
    let a = build(&tmp.path().join("a"), &sources, &edited, &cfg);
    let b = build(&tmp.path().join("b"), &sources, &edited, &cfg);
    assert_eq!(a, b);
}

#[test]
fn options_select_crop_kinds() {
    let tmp = tempfile::tempdir().unwrap();
    let (sources, edited) = dataset(tmp.path());
    let cfg = NegativeSetConfig {
        backgrounds_per_image: 3,
        background_size: Some((8, 8)),
        quarter_negatives: false,
        positives: false,
    };
    let report = build(&tmp.path().join("neg"), &sources, &edited, &cfg);
    assert_eq!(report.count(CropKind::Positive), 0);
    assert_eq!(report.count(CropKind::QuarterNegative), 0);
    assert_eq!(report.count(CropKind::BackgroundNegative) + report.skipped, 3 * edited.len());
    assert!(report.entries.iter().all(|e| (e.region.w, e.region.h) == (8, 8)));
}

#[test]
fn mismatched_resolution_is_skipped() {
    let tmp = tempfile::tempdir().unwrap();
    let (sources, mut edited) = dataset(tmp.path());
    edited.truncate(1);
    edited[0].pixels = image::RgbImage::new(10, 10);
    let cfg = NegativeSetConfig { positives: false, ..Default::default() };
    let report = build(&tmp.path().join("neg"), &sources, &edited, &cfg);
    assert!(report.entries.is_empty());
    assert_eq!(report.skipped, 1);
}
