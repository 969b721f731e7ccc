//! Reference implementations used as oracles by the integration tests.
//!
//! Everything here is written from the definitions, with exact integer
//! arithmetic where possible, and shares no code with the library beyond
//! its data types.
#![allow(dead_code)]

use std::collections::{BTreeMap, HashMap, HashSet};

use chrono::{DateTime, Utc};
use seasynth_core::eval::Detection;
use seasynth_core::manifest::{CropVerdictEntry, ManifestRecord, Verdict};
use seasynth_core::{BoundingBox, SeaState, SourceImage};

/// Every pixel `(x, y)` covered by `b`.
pub fn pixels(b: &BoundingBox) -> HashSet<(i64, i64)> {
    let mut out = HashSet::new();
    for y in b.y..b.y + b.h {
        for x in b.x..b.x + b.w {
            out.insert((x, y));
        }
    }
    out
}

pub fn pixel_overlap(a: &BoundingBox, b: &BoundingBox) -> i64 {
    let pb = pixels(b);
    pixels(a).iter().filter(|p| pb.contains(p)).count() as i64
}

/// Pixel count of the union of `boxes`, each grown by `dilation` and cut to
/// the `width x height` grid.
pub fn union_count(boxes: &[BoundingBox], dilation: i64, width: i64, height: i64) -> usize {
    let mut grid = vec![false; (width * height) as usize];
    for b in boxes {
        for y in b.y - dilation..b.y + b.h + dilation {
            for x in b.x - dilation..b.x + b.w + dilation {
                if (0..width).contains(&x) && (0..height).contains(&y) {
                    grid[(y * width + x) as usize] = true;
                }
            }
        }
    }
    grid.iter().filter(|&&c| c).count()
}

/// Exact overlap as the rational `inter / union`.
struct Ratio {
    num: i64,
    den: i64,
}

impl Ratio {
    fn of(a: &BoundingBox, b: &BoundingBox) -> Self {
        let inter = pixel_overlap(a, b);
        Ratio {
            num: inter,
            den: a.area() + b.area() - inter,
        }
    }

    fn at_least_percent(&self, pct: i64) -> bool {
        self.num * 100 >= pct * self.den
    }

    fn greater(&self, other: &Ratio) -> bool {
        self.num * other.den > other.num * self.den
    }
}

/// Per-state `(map50, map50_95, n_gt, n_dets)` plus the ignored count.
pub type OracleReport = (BTreeMap<SeaState, (Option<f64>, Option<f64>, usize, usize)>, usize);

/// Brute-force mAP: greedy matching with exact rational IoU, selection-order
/// ranking, and interpolated precision read straight off its definition (the
/// best precision among all cut-offs whose recall reaches `k / 100`).
pub fn brute_force_map(records: &[ManifestRecord], sources: &[SourceImage], dets: &[Detection]) -> OracleReport {
    let known: HashMap<&str, &ManifestRecord> = records.iter().map(|r| (r.edited_id.as_str(), r)).collect();
    let mut ignored = 0;
    let mut usable: Vec<&Detection> = Vec::new();
    for d in dets {
        let r = known[d.image_id.as_str()];
        if !r.kept || d.class_label != "boat" {
            ignored += 1;
        } else {
            usable.push(d);
        }
    }

    let mut out = BTreeMap::new();
    for state in SeaState::ALL {
        let mut ids: Vec<&str> = records
            .iter()
            .filter(|r| r.kept && r.sea_state == state)
            .map(|r| r.edited_id.as_str())
            .collect();
        ids.sort();
        let gts_of = |id: &str| -> Vec<BoundingBox> {
            let src = &known[id].source_id;
            let s = sources.iter().find(|s| &s.id == src).unwrap();
            s.boxes.iter().filter(|b| b.class_label == "boat").cloned().collect()
        };
        let n_gt: usize = ids.iter().map(|id| gts_of(id).len()).sum();
        let n_dets = usable.iter().filter(|d| ids.contains(&d.image_id.as_str())).count();

        let ap_at = |pct: i64| -> Option<f64> {
            if n_gt == 0 {
                return None;
            }
            // (score, image rank, order within image, true positive)
            let mut ranked: Vec<(f64, usize, usize, bool)> = Vec::new();
            for (rank, id) in ids.iter().enumerate() {
                let gts = gts_of(id);
                let mine: Vec<&Detection> = usable.iter().copied().filter(|d| d.image_id == *id).collect();
                let mut pending: Vec<usize> = (0..mine.len()).collect();
                let mut taken = vec![false; gts.len()];
                let mut order = 0;
                while !pending.is_empty() {
                    // Highest score; the earliest input wins a tie.
                    let mut pick = 0;
                    for k in 1..pending.len() {
                        if mine[pending[k]].score > mine[pending[pick]].score {
                            pick = k;
                        }
                    }
                    let d = pending.remove(pick);
                    let mut best: Option<(usize, Ratio)> = None;
                    for (g, gt) in gts.iter().enumerate() {
                        let r = Ratio::of(&mine[d].bbox, gt);
                        if taken[g] || !r.at_least_percent(pct) {
                            continue;
                        }
                        if best.as_ref().is_none_or(|(_, b)| r.greater(b)) {
                            best = Some((g, r));
                        }
                    }
                    let hit = best.is_some();
                    if let Some((g, _)) = best {
                        taken[g] = true;
                    }
                    ranked.push((mine[d].score, rank, order, hit));
                    order += 1;
                }
            }
            ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
            let mut cutoffs: Vec<(usize, usize)> = Vec::new(); // (tp, n)
            let mut tp = 0;
            for (i, r) in ranked.iter().enumerate() {
                tp += r.3 as usize;
                cutoffs.push((tp, i + 1));
            }
            let mut sum = 0.0;
            for k in 0..=100usize {
                let best = cutoffs
                    .iter()
                    .filter(|(tp, _)| 100 * tp >= k * n_gt)
                    .map(|&(tp, n)| tp as f64 / n as f64)
                    .fold(0.0, f64::max);
                sum += best;
            }
            Some(sum / 101.0)
        };
        let map50 = ap_at(50);
        let map50_95 = map50.map(|_| (0..10).map(|k| ap_at(50 + 5 * k).unwrap()).sum::<f64>() / 10.0);
        out.insert(state, (map50, map50_95, n_gt, n_dets));
    }
    (out, ignored)
}

pub fn record(id: &str, source: &str, state: SeaState, verdicts: &[Verdict]) -> ManifestRecord {
    ManifestRecord {
        edited_id: id.into(),
        source_id: source.into(),
        backend_name: "mock".into(),
        prompt: "p".into(),
        seed: 0,
        sea_state: state,
        crop_verdicts: verdicts
            .iter()
            .enumerate()
            .map(|(box_index, &verdict)| CropVerdictEntry { box_index, verdict })
            .collect(),
        kept: verdicts.contains(&Verdict::Boat),
        created_at: DateTime::<Utc>::UNIX_EPOCH,
    }
}

pub fn source(id: &str, width: u32, height: u32, boxes: Vec<BoundingBox>) -> SourceImage {
    SourceImage {
        id: id.into(),
        path: format!("{id}.png").into(),
        width,
        height,
        boxes,
    }
}

/// Records with exactly the given per-state generated / kept counts.
pub fn table_manifest(generated: [u64; 4], kept: [u64; 4]) -> Vec<ManifestRecord> {
    let mut out = Vec::new();
    for state in SeaState::ALL {
        let i = state.index();
        for n in 0..generated[i] {
            let v = if n < kept[i] { Verdict::Boat } else { Verdict::NotBoat };
            let mut r = record(&format!("{}-{n}", state.dir_name()), "src", state, &[v]);
            r.seed = n;
            out.push(r);
        }
    }
    out
}
