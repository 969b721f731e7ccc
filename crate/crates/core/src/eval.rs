//! Per-sea-state detection quality of an external detector.
//!
//! Matching is greedy per image (highest score first, each detection takes
//! the highest-IoU unmatched ground truth at or above the threshold). AP uses
//! a dataset-pooled precision/recall curve with COCO 101-point
//! interpolation; mAP@0.5:0.95 averages the thresholds 0.50, 0.55, ..., 0.95.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use tracing::warn;

use crate::error::{Error, Result};
use crate::geometry::{iou, BoundingBox, BOAT_LABEL};
use crate::manifest::ManifestRecord;
use crate::model::{SeaState, SourceImage};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub image_id: String,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub score: f64,
    pub class_label: String,
}

/// `(index into dets, matched gt index)` in descending-score order. Ties keep
/// input order.
pub fn match_detections(dets: &[Detection], gts: &[BoundingBox], iou_thresh: f64) -> Vec<(usize, Option<usize>)> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score));
    let mut taken = vec![false; gts.len()];
    order
        .into_iter()
        .map(|d| {
            let mut best: Option<(usize, f64)> = None;
            for (g, gt) in gts.iter().enumerate() {
                if taken[g] {
                    continue;
                }
                let v = iou(&dets[d].bbox, gt);
                if v >= iou_thresh && best.is_none_or(|(_, b)| v > b) {
                    best = Some((g, v));
                }
            }
            if let Some((g, _)) = best {
                taken[g] = true;
            }
            (d, best.map(|(g, _)| g))
        })
        .collect()
}

/// 101-point interpolated AP. `ranked` holds the true-positive flag of each
/// detection in descending-score order. `None` when there is no ground truth.
pub fn average_precision(ranked: &[bool], n_gt: usize) -> Option<f64> {
    if n_gt == 0 {
        return None;
    }
    let mut precision = Vec::with_capacity(ranked.len());
    let mut recall = Vec::with_capacity(ranked.len());
    let mut tp = 0usize;
    for (i, hit) in ranked.iter().enumerate() {
        tp += *hit as usize;
        precision.push(tp as f64 / (i + 1) as f64);
        recall.push(tp as f64 / n_gt as f64);
    }
    // Precision envelope: best precision at this recall or beyond.
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let total: f64 = (0..=100)
        .map(|k| {
            let r = k as f64 / 100.0;
            let idx = recall.partition_point(|&x| x < r);
            precision.get(idx).copied().unwrap_or(0.0)
        })
        .sum();
    Some(total / 101.0)
}

pub fn iou_ladder() -> [f64; 10] {
    std::array::from_fn(|k| (50 + 5 * k) as f64 / 100.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateEval {
    pub sea_state: SeaState,
    /// `None` when the state has no ground-truth objects.
    pub map50: Option<f64>,
    pub map50_95: Option<f64>,
    pub n_images: usize,
    pub n_gt: usize,
    pub n_detections: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_state: Vec<StateEval>,
    /// Detections on discarded images, left out of the evaluation.
    pub ignored_detections: usize,
}

impl EvalReport {
    pub fn state(&self, s: SeaState) -> &StateEval {
        &self.per_state[s.index()]
    }

    /// Bar-chart table: one row per metric, one column per state.
    pub fn chart_table(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.4}"));
        let mut out = String::from("metric\tSS1\tSS2\tSS3\tSS4\n");
        for (name, get) in [
            ("mAP@0.5", (|s: &StateEval| s.map50) as fn(&StateEval) -> Option<f64>),
            ("mAP@0.5:0.95", |s: &StateEval| s.map50_95),
        ] {
            out.push_str(name);
            for s in &self.per_state {
                out.push('\t');
                out.push_str(&fmt(get(s)));
            }
            out.push('\n');
        }
        out
    }
}

/// Pools every image of one state and returns AP at `thresh`.
fn pooled_ap(images: &[(&[BoundingBox], Vec<&Detection>)], thresh: f64) -> Option<f64> {
    let n_gt: usize = images.iter().map(|(g, _)| g.len()).sum();
    let mut scored: Vec<(f64, usize, bool)> = Vec::new();
    for (gts, dets) in images {
        let owned: Vec<Detection> = dets.iter().map(|d| (*d).clone()).collect();
        for (d, m) in match_detections(&owned, gts, thresh) {
            scored.push((owned[d].score, scored.len(), m.is_some()));
        }
    }
    // Descending score; ties by pooling order.
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let ranked: Vec<bool> = scored.into_iter().map(|(_, _, tp)| tp).collect();
    average_precision(&ranked, n_gt)
}

/// Ground truth of a kept image is the boat boxes of its source.
pub fn evaluate(records: &[ManifestRecord], sources: &[SourceImage], detections: &[Detection]) -> Result<EvalReport> {
    let by_source: HashMap<&str, &SourceImage> = sources.iter().map(|s| (s.id.as_str(), s)).collect();
    let by_id: HashMap<&str, &ManifestRecord> =
        records.iter().map(|r| (r.edited_id.as_str(), r)).collect();
    let mut dets_by_image: HashMap<&str, Vec<&Detection>> = HashMap::new();
    let mut ignored = 0;
    for d in detections {
        match by_id.get(d.image_id.as_str()) {
            None => return Err(Error::UnknownImageId(d.image_id.clone())),
            Some(r) if !r.kept => ignored += 1,
            Some(_) if d.class_label != BOAT_LABEL => ignored += 1,
            Some(_) => dets_by_image.entry(d.image_id.as_str()).or_default().push(d),
        }
    }
    if ignored > 0 {
        warn!(ignored, "detections on discarded images or non-boat classes ignored");
    }

    let mut gts: HashMap<&str, Vec<BoundingBox>> = HashMap::new();
    let mut per_state: Vec<Vec<&str>> = vec![Vec::new(); 4];
    let mut kept: Vec<&ManifestRecord> = records.iter().filter(|r| r.kept).collect();
    kept.sort_by(|a, b| a.edited_id.cmp(&b.edited_id));
    for r in kept {
        let src = by_source.get(r.source_id.as_str()).ok_or_else(|| {
            Error::Validation(format!("manifest source {} missing from annotations", r.source_id))
        })?;
        gts.insert(&r.edited_id, src.boxes.iter().filter(|b| b.is_boat()).cloned().collect());
        per_state[r.sea_state.index()].push(&r.edited_id);
    }

    let per_state = SeaState::ALL
        .iter()
        .map(|&state| {
            let ids = &per_state[state.index()];
            let images: Vec<(&[BoundingBox], Vec<&Detection>)> = ids
                .iter()
                .map(|id| {
                    (
                        gts[id].as_slice(),
                        dets_by_image.get(id).cloned().unwrap_or_default(),
                    )
                })
                .collect();
            let map50 = pooled_ap(&images, 0.5);
            let map50_95 = map50.and_then(|_| {
                let aps: Option<Vec<f64>> = iou_ladder().iter().map(|&t| pooled_ap(&images, t)).collect();
                aps.map(|a| a.iter().sum::<f64>() / a.len() as f64)
            });
            StateEval {
                sea_state: state,
                map50,
                map50_95,
                n_images: ids.len(),
                n_gt: images.iter().map(|(g, _)| g.len()).sum(),
                n_detections: images.iter().map(|(_, d)| d.len()).sum(),
            }
        })
        .collect();
    Ok(EvalReport {
        per_state,
        ignored_detections: ignored,
    })
}

/// Reads `image_id,x,y,w,h,score[,class_label]` lines. A header line starting
/// with `image_id` is allowed. Fractional coordinates are floored.
pub fn load_detections(path: &Path) -> Result<Vec<Detection>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| Error::io(path, std::io::Error::other(e)))?;
    let mut out = Vec::new();
    for (n, row) in reader.records().enumerate() {
        let line = n + 1;
        let row = row.map_err(|e| Error::MalformedDetection {
            line,
            message: e.to_string(),
        })?;
        if row.get(0) == Some("image_id") {
            continue;
        }
        if row.len() < 6 {
            return Err(Error::MalformedDetection {
                line,
                message: format!("expected at least 6 fields, got {}", row.len()),
            });
        }
        let num = |i: usize| -> Result<f64> {
            row[i].parse::<f64>().map_err(|e| Error::MalformedDetection {
                line,
                message: format!("field {}: {e}", i + 1),
            })
        };
        let label = row.get(6).filter(|s| !s.is_empty()).unwrap_or(BOAT_LABEL);
        let bbox = BoundingBox::from_f64(num(1)?, num(2)?, num(3)?, num(4)?, label).ok_or(
            Error::MalformedDetection {
                line,
                message: "box must have positive size".into(),
            },
        )?;
        let score = num(5)?;
        if !(0.0..=1.0).contains(&score) {
            return Err(Error::MalformedDetection {
                line,
                message: format!("score {score} outside [0, 1]"),
            });
        }
        out.push(Detection {
            image_id: row[0].to_string(),
            bbox,
            score,
            class_label: label.to_string(),
        });
    }
    Ok(out)
}
