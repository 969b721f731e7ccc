mod common;

use std::fmt::Write as _;
use std::path::Path;

use seasynth_core::eval::{evaluate, load_detections};
use seasynth_core::manifest::load_manifest;
use seasynth_core::pipeline::{run_pipeline, PipelineConfig};
use seasynth_core::texture::write_fixture_sources;
use seasynth_core::{Error, SeaState};

fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn detections_file_against_a_generated_dataset() {
    let tmp = tempfile::tempdir().unwrap();
    let sources = write_fixture_sources(&tmp.path().join("src"), 6, 80, 60, 3).unwrap();
    let mut cfg = PipelineConfig {
        images_per_source: 2,
        output_root: tmp.path().join("run"),
        ..PipelineConfig::default()
    };
    cfg.backend.mock.corrupt_every = Some(4);
    let summary = run_pipeline(&sources, &cfg).unwrap();
    let records = load_manifest(&summary.manifest).unwrap().records;

    // Exact boxes for every boat of every image, plus one clutter box per
    // image on a discarded record to exercise the ignore path.
    let mut csv = String::from("image_id,x,y,w,h,score,class_label\n");
    let mut on_discarded = 0;
    for r in &records {
        let src = sources.iter().find(|s| s.id == r.source_id).unwrap();
        for (_, b) in src.boat_boxes() {
            writeln!(csv, "{},{}.4,{},{},{},0.8,boat", r.edited_id, b.x, b.y, b.w, b.h).unwrap();
            on_discarded += !r.kept as usize;
        }
    }
    let dets = load_detections(&write(tmp.path(), "dets.csv", &csv)).unwrap();
    let report = evaluate(&records, &sources, &dets).unwrap();
    assert_eq!(report.ignored_detections, on_discarded);
    let (oracle, ignored) = common::brute_force_map(&records, &sources, &dets);
    assert_eq!(ignored, on_discarded);
    for state in SeaState::ALL {
        let s = report.state(state);
        assert_eq!((s.map50, s.map50_95), (oracle[&state].0, oracle[&state].1));
        if s.n_gt > 0 {
            assert_eq!(s.map50, Some(1.0));
        }
    }
    let table = report.chart_table();
    assert!(table.starts_with("metric\tSS1\tSS2\tSS3\tSS4\n"));
    assert_eq!(table.lines().count(), 3);
}

#[test]
fn unknown_image_is_an_error() {
    let tmp = tempfile::tempdir().unwrap();
    let records = vec![common::record("a", "s", SeaState::Ss1, &[seasynth_core::manifest::Verdict::Boat])];
    let sources = vec![common::source("s", 20, 20, vec![seasynth_core::BoundingBox::boat(1, 1, 4, 4)])];
    let dets = load_detections(&write(tmp.path(), "d.csv", "nope,1,1,4,4,0.9\n")).unwrap();
    match evaluate(&records, &sources, &dets) {
        Err(Error::UnknownImageId(id)) => assert_eq!(id, "nope"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn malformed_line_names_its_number() {
    let tmp = tempfile::tempdir().unwrap();
    let p = write(tmp.path(), "d.csv", "a,1,1,4,4,0.9\na,1,x,4,4,0.9\n");
    match load_detections(&p) {
        Err(Error::MalformedDetection { line, .. }) => assert_eq!(line, 2),
        other => panic!("{other:?}"),
    }
}

#[test]
fn states_without_ground_truth_are_undefined() {
    let records = vec![common::record("a", "s", SeaState::Ss3, &[seasynth_core::manifest::Verdict::Boat])];
    let sources = vec![common::source("s", 20, 20, vec![seasynth_core::BoundingBox::boat(1, 1, 4, 4)])];
    let report = evaluate(&records, &sources, &[]).unwrap();
    for state in SeaState::ALL {
        let s = report.state(state);
        if state == SeaState::Ss3 {
            assert_eq!((s.map50, s.map50_95), (Some(0.0), Some(0.0)));
        } else {
            assert_eq!((s.map50, s.map50_95), (None, None));
        }
    }
    assert!(report.chart_table().contains("n/a"));
}
