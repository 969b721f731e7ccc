//! The pipeline manifest: one line per generated image.

use std::path::Path;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ledger::{self, JsonlAppender, Loaded};
use crate::model::SeaState;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Boat,
    NotBoat,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropVerdictEntry {
    pub box_index: usize,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub edited_id: String,
    pub source_id: String,
    pub backend_name: String,
    pub prompt: String,
    pub seed: u64,
    pub sea_state: SeaState,
    pub crop_verdicts: Vec<CropVerdictEntry>,
    pub kept: bool,
    pub created_at: DateTime<Utc>,
}

impl ManifestRecord {
    pub fn validate(&self) -> Result<()> {
        let any_boat = self.crop_verdicts.iter().any(|v| v.verdict == Verdict::Boat);
        if self.kept != any_boat {
            return Err(Error::Validation(format!(
                "record {}: kept={} but {} boat verdicts",
                self.edited_id,
                self.kept,
                if any_boat { "has" } else { "no" }
            )));
        }
        Ok(())
    }

    /// Copy with `created_at` zeroed, for comparisons that ignore timestamps.
    pub fn without_timestamp(&self) -> Self {
        Self {
            created_at: DateTime::<Utc>::UNIX_EPOCH,
            ..self.clone()
        }
    }
}

pub struct ManifestWriter {
    inner: JsonlAppender<ManifestRecord>,
}

impl ManifestWriter {
    pub fn open(path: &Path) -> Result<Self> {
        Ok(Self {
            inner: JsonlAppender::open(path)?,
        })
    }

    pub fn append(&mut self, record: &ManifestRecord) -> Result<()> {
        record.validate()?;
        self.inner.append(record)
    }

    pub fn path(&self) -> &Path {
        self.inner.path()
    }
}

/// Opens, appends and closes. Use [`ManifestWriter`] for many records.
pub fn append_record(manifest: &Path, record: &ManifestRecord) -> Result<()> {
    ManifestWriter::open(manifest)?.append(record)
}

pub fn load_manifest(manifest: &Path) -> Result<Loaded<ManifestRecord>> {
    ledger::read_jsonl(manifest)
}

/// Per-state counts before and after the preservation filter, in SS1..SS4 order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub generated_per_state: [u64; 4],
    pub filtered_per_state: [u64; 4],
}

impl DatasetStats {
    pub fn record(&mut self, state: SeaState, kept: bool) {
        self.generated_per_state[state.index()] += 1;
        if kept {
            self.filtered_per_state[state.index()] += 1;
        }
    }

    pub fn total_generated(&self) -> u64 {
        self.generated_per_state.iter().sum()
    }

    pub fn total_filtered(&self) -> u64 {
        self.filtered_per_state.iter().sum()
    }

    pub fn from_records<'a>(records: impl IntoIterator<Item = &'a ManifestRecord>) -> Self {
        let mut stats = Self::default();
        for r in records {
            stats.record(r.sea_state, r.kept);
        }
        stats
    }
}

/// Streams the manifest and tallies generated and kept records per state.
pub fn compute_stats(manifest: &Path) -> Result<DatasetStats> {
    #[derive(Deserialize)]
    struct Slim {
        sea_state: SeaState,
        kept: bool,
    }
    let mut stats = DatasetStats::default();
    let mut skipped = 0;
    ledger::for_each_jsonl(manifest, |r: Slim| stats.record(r.sea_state, r.kept), &mut skipped)?;
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Write;

    pub(crate) fn record(id: &str, state: SeaState, verdicts: &[Verdict]) -> ManifestRecord {
        ManifestRecord {
            edited_id: id.into(),
            source_id: "src".into(),
            backend_name: "mock".into(),
            prompt: "p".into(),
            seed: 3,
            sea_state: state,
            crop_verdicts: verdicts
                .iter()
                .enumerate()
                .map(|(i, v)| CropVerdictEntry {
                    box_index: i,
                    verdict: *v,
                })
                .collect(),
            kept: verdicts.contains(&Verdict::Boat),
            created_at: Utc::now(),
        }
    }

    #[test]
    fn append_and_reload_preserves_order() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.jsonl");
        let recs: Vec<_> = (0..3)
            .map(|i| record(&format!("e{i}"), SeaState::Ss2, &[Verdict::Boat]))
            .collect();
        for r in &recs {
            append_record(&path, r).unwrap();
        }
        let loaded = load_manifest(&path).unwrap();
        assert_eq!(loaded.records, recs);
        assert_eq!(loaded.skipped_lines, 0);
    }

    #[test]
    fn torn_last_line_is_skipped_and_next_append_is_clean() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.jsonl");
        for i in 0..3 {
            append_record(&path, &record(&format!("e{i}"), SeaState::Ss1, &[Verdict::Boat])).unwrap();
        }
        let full = std::fs::read(&path).unwrap();
        let cut = full.len() - 20;
        std::fs::write(&path, &full[..cut]).unwrap();
        let loaded = load_manifest(&path).unwrap();
        assert_eq!(loaded.records.len(), 2);
        assert_eq!(loaded.skipped_lines, 1);

        append_record(&path, &record("e9", SeaState::Ss1, &[Verdict::Boat])).unwrap();
        let loaded = load_manifest(&path).unwrap();
        assert_eq!(loaded.records.len(), 3);
        assert_eq!(loaded.records[2].edited_id, "e9");
    }

    #[test]
    fn kept_without_boat_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut r = record("e", SeaState::Ss1, &[Verdict::NotBoat, Verdict::NotBoat]);
        r.kept = true;
        let err = append_record(&dir.path().join("m.jsonl"), &r).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn stats_counts() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        assert_eq!(compute_stats(&path).unwrap(), DatasetStats::default());
        std::fs::File::create(&path).unwrap().flush().unwrap();
        assert_eq!(compute_stats(&path).unwrap(), DatasetStats::default());

        let mut w = ManifestWriter::open(&path).unwrap();
        for i in 0..10 {
            let v = if i < 4 { Verdict::Boat } else { Verdict::NotBoat };
            w.append(&record(&format!("e{i}"), SeaState::Ss2, &[v])).unwrap();
        }
        let stats = compute_stats(&path).unwrap();
        assert_eq!(stats.generated_per_state, [0, 10, 0, 0]);
        assert_eq!(stats.filtered_per_state, [0, 4, 0, 0]);
    }

    fn arb_record() -> impl Strategy<Value = ManifestRecord> {
        (
            "[a-z0-9_-]{1,12}",
            "[a-z0-9]{1,8}",
            ".{0,40}",
            any::<u64>(),
            1u8..=4,
            prop::collection::vec(any::<bool>(), 0..6),
            0i64..4_000_000_000,
        )
            .prop_map(|(id, src, prompt, seed, level, boats, secs)| {
                let crop_verdicts: Vec<_> = boats
                    .iter()
                    .enumerate()
                    .map(|(i, b)| CropVerdictEntry {
                        box_index: i,
                        verdict: if *b { Verdict::Boat } else { Verdict::NotBoat },
                    })
                    .collect();
                ManifestRecord {
                    edited_id: id,
                    source_id: src,
                    backend_name: "mock".into(),
                    prompt,
                    seed,
                    sea_state: SeaState::from_level(level).unwrap(),
                    kept: boats.contains(&true),
                    crop_verdicts,
                    created_at: DateTime::from_timestamp(secs, 0).unwrap(),
                }
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn append_load_round_trip(recs in prop::collection::vec(arb_record(), 0..8)) {
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("m.jsonl");
            let mut w = ManifestWriter::open(&path).unwrap();
            for r in &recs {
                w.append(r).unwrap();
            }
            prop_assert_eq!(load_manifest(&path).unwrap().records, recs);
        }
    }
}
