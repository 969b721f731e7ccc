//! Human quality review.
//!
//! A session is a fixed, seeded sample of manifest images. Reviewers answer
//! three rule questions per image; the image is good only when all three
//! hold. Sessions and verdicts are stored in append-only line files, and all
//! statistics are recomputed from those files.

use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BoundingBox;
use crate::ledger::{read_jsonl, JsonlAppender};
use crate::manifest::ManifestRecord;
use crate::model::SeaState;

pub const SESSIONS_FILE: &str = "sessions.jsonl";
pub const VERDICTS_FILE: &str = "verdicts.jsonl";
pub const DEFAULT_SAMPLE_SIZE: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleFlags {
    /// Background shows only island, ocean or cloud.
    pub background_valid: bool,
    pub background_realistic: bool,
    /// At least one boat is preserved.
    pub boat_preserved: bool,
}

impl RuleFlags {
    pub fn good(&self) -> bool {
        self.background_valid && self.background_realistic && self.boat_preserved
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewVerdict {
    pub edited_id: String,
    pub session_id: String,
    pub reviewer: String,
    pub good: bool,
    pub rule_flags: RuleFlags,
    pub timestamp: DateTime<Utc>,
}

/// What a client submits; `good` is derived server-side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictSubmission {
    pub edited_id: String,
    #[serde(default)]
    pub reviewer: String,
    pub rule_flags: RuleFlags,
}

/// Restricts which manifest records a session may sample.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ManifestFilter {
    pub kept_only: bool,
    pub sea_state: Option<SeaState>,
    pub backend_name: Option<String>,
    pub prompt_contains: Option<String>,
}

impl ManifestFilter {
    pub fn accepts(&self, r: &ManifestRecord) -> bool {
        (!self.kept_only || r.kept)
            && self.sea_state.is_none_or(|s| s == r.sea_state)
            && self.backend_name.as_ref().is_none_or(|b| *b == r.backend_name)
            && self.prompt_contains.as_ref().is_none_or(|p| r.prompt.contains(p.as_str()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreateSession {
    #[serde(default)]
    pub session_id: Option<String>,
    /// Free-form label, e.g. the generation method under review.
    #[serde(default)]
    pub method: Option<String>,
    #[serde(default = "default_sample_size")]
    pub sample_size: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub filter: ManifestFilter,
}

fn default_sample_size() -> usize {
    DEFAULT_SAMPLE_SIZE
}

impl Default for CreateSession {
    fn default() -> Self {
        Self {
            session_id: None,
            method: None,
            sample_size: DEFAULT_SAMPLE_SIZE,
            seed: 0,
            filter: ManifestFilter::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewItem {
    pub edited_id: String,
    pub source_id: String,
    pub sea_state: SeaState,
    pub kept: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub session_id: String,
    pub method: Option<String>,
    pub seed: u64,
    pub sample_size: usize,
    pub filter: ManifestFilter,
    pub items: Vec<ReviewItem>,
    pub created_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum NextItem {
    Item {
        index: usize,
        total: usize,
        item: ReviewItem,
    },
    Done {
        total: usize,
    },
}

/// A queue entry as served to review clients, with links to the edited and
/// source images and the source's boat boxes for overlays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemView {
    #[serde(flatten)]
    pub next: NextItem,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_url: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_url: Option<String>,
    #[serde(default)]
    pub source_boxes: Vec<BoundingBox>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionStats {
    pub session_id: String,
    pub total: usize,
    pub n_reviewed: usize,
    pub n_good: usize,
    /// `100 * n_good / n_reviewed`; `None` before the first verdict.
    pub good_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoodImageRate {
    pub mean: f64,
    /// Sample standard deviation across sessions; `None` for one session.
    pub sample_std: Option<f64>,
    pub sessions: Vec<SessionStats>,
}

/// Mean and (n - 1)-denominator standard deviation of per-session rates.
pub fn mean_and_sample_std(rates: &[f64]) -> Result<(f64, Option<f64>)> {
    if rates.is_empty() {
        return Err(Error::NoSessions);
    }
    let n = rates.len() as f64;
    let mean = rates.iter().sum::<f64>() / n;
    let std = (rates.len() >= 2)
        .then(|| (rates.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
    Ok((mean, std))
}

/// Seeded sample of manifest records; independent of manifest line order.
pub fn sample_items(records: &[ManifestRecord], filter: &ManifestFilter, size: usize, seed: u64) -> Vec<ReviewItem> {
    let mut pool: Vec<&ManifestRecord> = records.iter().filter(|r| filter.accepts(r)).collect();
    pool.sort_by(|a, b| a.edited_id.cmp(&b.edited_id));
    pool.dedup_by(|a, b| a.edited_id == b.edited_id);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pool.shuffle(&mut rng);
    pool.truncate(size);
    pool.into_iter()
        .map(|r| ReviewItem {
            edited_id: r.edited_id.clone(),
            source_id: r.source_id.clone(),
            sea_state: r.sea_state,
            kept: r.kept,
        })
        .collect()
}

pub struct ReviewStore {
    dir: PathBuf,
    records: Vec<ManifestRecord>,
    sessions: Vec<Session>,
    index: HashMap<String, usize>,
    verdicts: HashMap<String, HashMap<String, ReviewVerdict>>,
    session_log: JsonlAppender<Session>,
    verdict_log: JsonlAppender<ReviewVerdict>,
}

impl ReviewStore {
    /// Opens (or creates) a store in `dir`, replaying its ledgers.
    pub fn open(dir: &Path, records: Vec<ManifestRecord>) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let sessions = read_jsonl::<Session>(&dir.join(SESSIONS_FILE))?.records;
        let mut store = Self {
            dir: dir.to_path_buf(),
            records,
            index: sessions
                .iter()
                .enumerate()
                .map(|(i, s)| (s.session_id.clone(), i))
                .collect(),
            sessions,
            verdicts: HashMap::new(),
            session_log: JsonlAppender::open(&dir.join(SESSIONS_FILE))?,
            verdict_log: JsonlAppender::open(&dir.join(VERDICTS_FILE))?,
        };
        for v in read_jsonl::<ReviewVerdict>(&dir.join(VERDICTS_FILE))?.records {
            store
                .verdicts
                .entry(v.session_id.clone())
                .or_default()
                .entry(v.edited_id.clone())
                .or_insert(v);
        }
        Ok(store)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn records(&self) -> &[ManifestRecord] {
        &self.records
    }

    pub fn record(&self, edited_id: &str) -> Option<&ManifestRecord> {
        self.records.iter().find(|r| r.edited_id == edited_id)
    }

    pub fn sessions(&self) -> &[Session] {
        &self.sessions
    }

    pub fn session(&self, id: &str) -> Result<&Session> {
        self.index
            .get(id)
            .map(|&i| &self.sessions[i])
            .ok_or_else(|| Error::UnknownSession(id.to_string()))
    }

    pub fn create_session(&mut self, req: CreateSession) -> Result<Session> {
        let session_id = req
            .session_id
            .clone()
            .unwrap_or_else(|| format!("session-{:04}", self.sessions.len() + 1));
        if self.index.contains_key(&session_id) {
            return Err(Error::DuplicateSession(session_id));
        }
        let session = Session {
            items: sample_items(&self.records, &req.filter, req.sample_size, req.seed),
            session_id,
            method: req.method,
            seed: req.seed,
            sample_size: req.sample_size,
            filter: req.filter,
            created_at: Utc::now(),
        };
        self.session_log.append(&session)?;
        self.index.insert(session.session_id.clone(), self.sessions.len());
        self.sessions.push(session.clone());
        Ok(session)
    }

    /// First unreviewed item in the session's fixed order.
    pub fn next_item(&self, session_id: &str) -> Result<NextItem> {
        let session = self.session(session_id)?;
        let reviewed = self.verdicts.get(session_id);
        let total = session.items.len();
        Ok(session
            .items
            .iter()
            .enumerate()
            .find(|(_, it)| reviewed.is_none_or(|v| !v.contains_key(&it.edited_id)))
            .map(|(index, item)| NextItem::Item {
                index,
                total,
                item: item.clone(),
            })
            .unwrap_or(NextItem::Done { total }))
    }

    pub fn submit_verdict(&mut self, session_id: &str, sub: VerdictSubmission) -> Result<ReviewVerdict> {
        let session = self.session(session_id)?;
        if !session.items.iter().any(|i| i.edited_id == sub.edited_id) {
            return Err(Error::UnknownItem {
                session_id: session_id.to_string(),
                edited_id: sub.edited_id,
            });
        }
        if self
            .verdicts
            .get(session_id)
            .is_some_and(|v| v.contains_key(&sub.edited_id))
        {
            return Err(Error::DuplicateVerdict {
                session_id: session_id.to_string(),
                edited_id: sub.edited_id,
            });
        }
        let verdict = ReviewVerdict {
            good: sub.rule_flags.good(),
            edited_id: sub.edited_id,
            session_id: session_id.to_string(),
            reviewer: sub.reviewer,
            rule_flags: sub.rule_flags,
            timestamp: Utc::now(),
        };
        self.verdict_log.append(&verdict)?;
        self.verdicts
            .entry(session_id.to_string())
            .or_default()
            .insert(verdict.edited_id.clone(), verdict.clone());
        Ok(verdict)
    }

    pub fn session_stats(&self, session_id: &str) -> Result<SessionStats> {
        let session = self.session(session_id)?;
        let empty = HashMap::new();
        let v = self.verdicts.get(session_id).unwrap_or(&empty);
        let n_reviewed = v.len();
        let n_good = v.values().filter(|v| v.good).count();
        Ok(SessionStats {
            session_id: session_id.to_string(),
            total: session.items.len(),
            n_reviewed,
            n_good,
            good_rate: (n_reviewed > 0).then(|| 100.0 * n_good as f64 / n_reviewed as f64),
        })
    }

    /// Mean and sample std of good rates over the given sessions (all
    /// sessions when empty). Sessions without verdicts are left out.
    pub fn good_image_rate(&self, session_ids: &[String]) -> Result<GoodImageRate> {
        let ids: Vec<String> = if session_ids.is_empty() {
            self.sessions.iter().map(|s| s.session_id.clone()).collect()
        } else {
            let mut seen = HashSet::new();
            session_ids
                .iter()
                .filter(|s| seen.insert(s.as_str()))
                .cloned()
                .collect()
        };
        let stats: Vec<SessionStats> = ids
            .iter()
            .map(|id| self.session_stats(id))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .filter(|s| s.n_reviewed > 0)
            .collect();
        let rates: Vec<f64> = stats.iter().filter_map(|s| s.good_rate).collect();
        let (mean, sample_std) = mean_and_sample_std(&rates)?;
        Ok(GoodImageRate {
            mean,
            sample_std,
            sessions: stats,
        })
    }
}
