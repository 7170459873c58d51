//! Good/bad triage of per-sequence masks, the dataset partition that
//! follows from it, and sampling of the two hand-labelled test sets.
//!
//! Verdicts are append-only; the latest verdict for a sequence wins, so an
//! undo is simply another verdict.

mod server;

use std::collections::{BTreeMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::maskgen::{BinaryMask, MaskKind};
use crate::sequence_io::{DatasetManifest, SeedRecord, Split, TRUTH_MASK_FILE};

pub use server::{serve, ServerHandle};

pub const VERDICT_LOG_FILE: &str = "verdicts.log";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Good,
    Bad,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub sequence_id: String,
    pub decision: Decision,
    /// UTC milliseconds since the epoch.
    pub timestamp: u64,
    pub elapsed_ms: u64,
    pub reviewer: String,
}

pub fn now_millis() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

/// Sequences that take part in triage: everything except the
/// representative test set, which is drawn before sorting.
fn under_review(manifest: &DatasetManifest) -> Vec<String> {
    manifest
        .entries
        .iter()
        .filter(|e| e.split != Split::RepresentativeTest)
        .map(|e| e.sequence_id.clone())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReviewQueue {
    all: Vec<String>,
    pending: Vec<String>,
    done: BTreeMap<String, Verdict>,
    /// Log records whose id is not under review.
    pub skipped: Vec<String>,
}

/// Replays `verdicts` in order over the manifest entries under review.
pub fn build_queue(manifest: &DatasetManifest, verdicts: &[Verdict]) -> ReviewQueue {
    let all = under_review(manifest);
    let known: HashSet<&str> = all.iter().map(String::as_str).collect();
    let mut done = BTreeMap::new();
    let mut skipped = Vec::new();
    for v in verdicts {
        if known.contains(v.sequence_id.as_str()) {
            done.insert(v.sequence_id.clone(), v.clone());
        } else {
            log::warn!("verdict log names unknown sequence `{}`; skipped", v.sequence_id);
            skipped.push(v.sequence_id.clone());
        }
    }
    let pending = all.iter().filter(|id| !done.contains_key(*id)).cloned().collect();
    ReviewQueue {
        all,
        pending,
        done,
        skipped,
    }
}

impl ReviewQueue {
    pub fn pending(&self) -> &[String] {
        &self.pending
    }

    pub fn done(&self) -> &BTreeMap<String, Verdict> {
        &self.done
    }

    pub fn total(&self) -> usize {
        self.all.len()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.all.iter().any(|a| a == id)
    }

    pub fn decision(&self, id: &str) -> Option<Decision> {
        self.done.get(id).map(|v| v.decision)
    }

    pub fn count(&self, d: Decision) -> usize {
        self.done.values().filter(|v| v.decision == d).count()
    }

    pub fn is_resolved(&self) -> bool {
        self.pending.is_empty()
    }

    fn apply(&mut self, v: Verdict) -> Result<()> {
        if !self.contains(&v.sequence_id) {
            return Err(Error::UnknownId(v.sequence_id));
        }
        self.pending.retain(|p| *p != v.sequence_id);
        self.done.insert(v.sequence_id.clone(), v);
        Ok(())
    }
}

/// Append-only verdict log, one JSON record per line.
#[derive(Debug)]
pub struct VerdictLog {
    path: PathBuf,
    lines: usize,
    last_timestamp: u64,
}

impl VerdictLog {
    /// Opens (or prepares) the log at `path` and returns its records.
    pub fn open(path: &Path) -> Result<(Self, Vec<Verdict>)> {
        let verdicts = read_verdict_log(path)?;
        let log = VerdictLog {
            path: path.to_path_buf(),
            lines: verdicts.len(),
            last_timestamp: verdicts.iter().map(|v| v.timestamp).max().unwrap_or(0),
        };
        Ok((log, verdicts))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn len(&self) -> usize {
        self.lines
    }

    pub fn is_empty(&self) -> bool {
        self.lines == 0
    }

    /// Writes and syncs one record. The timestamp is clamped so the log
    /// stays nondecreasing even if the clock steps back.
    pub fn append(&mut self, v: &mut Verdict) -> Result<()> {
        v.timestamp = v.timestamp.max(self.last_timestamp);
        let mut line = serde_json::to_string(v).map_err(|e| Error::malformed(&self.path, e))?;
        line.push('\n');
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .map_err(|e| Error::io(&self.path, e))?;
        f.write_all(line.as_bytes()).map_err(|e| Error::io(&self.path, e))?;
        f.sync_data().map_err(|e| Error::io(&self.path, e))?;
        self.lines += 1;
        self.last_timestamp = v.timestamp;
        Ok(())
    }
}

/// A missing file reads as an empty log.
pub fn read_verdict_log(path: &Path) -> Result<Vec<Verdict>> {
    let f = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(Error::io(path, e)),
    };
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let v: Verdict =
            serde_json::from_str(&line).map_err(|e| Error::malformed(path, format!("line {}: {e}", i + 1)))?;
        out.push(v);
    }
    Ok(out)
}

/// Durable append first, then the in-memory move pending → done. An
/// unknown id is rejected before anything is written.
pub fn record_verdict(queue: &mut ReviewQueue, log: &mut VerdictLog, mut verdict: Verdict) -> Result<Verdict> {
    if !queue.contains(&verdict.sequence_id) {
        return Err(Error::UnknownId(verdict.sequence_id));
    }
    log.append(&mut verdict)?;
    queue.apply(verdict.clone())?;
    Ok(verdict)
}

/// Dataset root, manifest, queue and log bundled for the review service.
#[derive(Debug)]
pub struct ReviewStore {
    pub root: PathBuf,
    pub manifest: DatasetManifest,
    pub mask_kind: MaskKind,
    pub queue: ReviewQueue,
    pub log: VerdictLog,
}

impl ReviewStore {
    pub fn open(root: &Path, manifest: DatasetManifest, mask_kind: MaskKind) -> Result<Self> {
        let (log, verdicts) = VerdictLog::open(&root.join(VERDICT_LOG_FILE))?;
        let queue = build_queue(&manifest, &verdicts);
        Ok(ReviewStore {
            root: root.to_path_buf(),
            manifest,
            mask_kind,
            queue,
            log,
        })
    }

    pub fn record(&mut self, verdict: Verdict) -> Result<Verdict> {
        record_verdict(&mut self.queue, &mut self.log, verdict)
    }

    pub fn sequence_dir(&self, id: &str) -> Result<PathBuf> {
        let e = self.manifest.entry(id).ok_or_else(|| Error::UnknownId(id.to_string()))?;
        Ok(self.root.join(&e.path))
    }

    pub fn progress(&self) -> Progress {
        Progress {
            total: self.queue.total(),
            done: self.queue.done().len(),
            good: self.queue.count(Decision::Good),
            bad: self.queue.count(Decision::Bad),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub total: usize,
    pub done: usize,
    pub good: usize,
    pub bad: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionReport {
    pub train_good: Vec<String>,
    pub rejected: Vec<String>,
    pub unresolved: usize,
    pub good_fraction: f64,
}

/// Writes `train_good` / `rejected` splits from the queue into the
/// manifest. Test-set members keep their split. Without `allow_partial` a
/// queue with pending items is an error; with it, pending items stay
/// unsorted.
pub fn partition(manifest: &mut DatasetManifest, queue: &ReviewQueue, allow_partial: bool) -> Result<PartitionReport> {
    if !queue.is_resolved() && !allow_partial {
        return Err(Error::Unresolved(queue.pending().len()));
    }
    let mut train_good = Vec::new();
    let mut rejected = Vec::new();
    for e in &mut manifest.entries {
        if matches!(e.split, Split::RepresentativeTest | Split::BadMaskTest) {
            continue;
        }
        match queue.decision(&e.sequence_id) {
            Some(Decision::Good) => {
                e.split = Split::TrainGood;
                train_good.push(e.sequence_id.clone());
            }
            Some(Decision::Bad) => {
                e.split = Split::Rejected;
                rejected.push(e.sequence_id.clone());
            }
            None => e.split = Split::Unsorted,
        }
    }
    let reviewed = train_good.len() + rejected.len();
    let good_fraction = if reviewed == 0 {
        0.0
    } else {
        train_good.len() as f64 / reviewed as f64
    };
    Ok(PartitionReport {
        unresolved: queue.pending().len(),
        train_good,
        rejected,
        good_fraction,
    })
}

fn sample_ids(mut pool: Vec<String>, n: usize, seed: u64, name: &str) -> Result<Vec<String>> {
    if pool.len() < n {
        return Err(Error::PoolTooSmall {
            pool: name.to_string(),
            available: pool.len(),
            requested: n,
        });
    }
    pool.sort();
    pool.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    pool.truncate(n);
    pool.sort();
    Ok(pool)
}

fn assign(manifest: &mut DatasetManifest, ids: &[String], split: Split) {
    for id in ids {
        if let Some(e) = manifest.entry_mut(id) {
            e.split = split;
        }
    }
}

/// Draws `n` representative test sequences from every sequence not already
/// in a test set. Meant to run before triage; afterwards it also removes
/// the chosen ids from `train_good`.
pub fn sample_representative(manifest: &mut DatasetManifest, n: usize, seed: u64) -> Result<Vec<String>> {
    let pool = manifest
        .entries
        .iter()
        .filter(|e| !matches!(e.split, Split::RepresentativeTest | Split::BadMaskTest))
        .map(|e| e.sequence_id.clone())
        .collect();
    let ids = sample_ids(pool, n, seed, "all sequences")?;
    assign(manifest, &ids, Split::RepresentativeTest);
    manifest.seed_log.push(SeedRecord {
        purpose: "representative_test".into(),
        seed,
    });
    check_test_sets(manifest)?;
    Ok(ids)
}

/// Draws `n` bad-mask test sequences from the rejected pool.
pub fn sample_bad_mask(manifest: &mut DatasetManifest, n: usize, seed: u64) -> Result<Vec<String>> {
    let ids = sample_ids(manifest.ids_in(Split::Rejected), n, seed, "rejected")?;
    assign(manifest, &ids, Split::BadMaskTest);
    manifest.seed_log.push(SeedRecord {
        purpose: "bad_mask_test".into(),
        seed,
    });
    check_test_sets(manifest)?;
    Ok(ids)
}

/// Both test sets of size `n`; the bad-mask draw uses `seed + 1`.
pub fn sample_testsets(manifest: &mut DatasetManifest, n: usize, seed: u64) -> Result<(Vec<String>, Vec<String>)> {
    let mut m = manifest.clone();
    let rep = sample_representative(&mut m, n, seed)?;
    let bad = sample_bad_mask(&mut m, n, seed.wrapping_add(1))?;
    *manifest = m;
    Ok((rep, bad))
}

/// Test sets must be disjoint from each other and from training data.
/// Each entry carries exactly one split, so this reduces to unique ids.
pub fn check_test_sets(manifest: &DatasetManifest) -> Result<()> {
    let mut seen = HashSet::new();
    for e in &manifest.entries {
        if !seen.insert(e.sequence_id.as_str()) {
            return Err(Error::DuplicateId(e.sequence_id.clone()));
        }
    }
    Ok(())
}

/// Stand-in for the human reviewer when ground truth is available: a mask
/// is good when it covers most of the cone without spilling far outside.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulatedReviewer {
    /// Minimum fraction of truth pixels the mask must cover.
    pub min_coverage: f64,
    /// Maximum false-positive pixels, as a fraction of the truth area.
    pub max_spill: f64,
    pub elapsed_ms: u64,
}

impl Default for SimulatedReviewer {
    fn default() -> Self {
        SimulatedReviewer {
            min_coverage: 0.8,
            max_spill: 0.1,
            elapsed_ms: 400,
        }
    }
}

impl SimulatedReviewer {
    pub fn judge(&self, mask: &BinaryMask, truth: &BinaryMask) -> Result<Decision> {
        if mask.dims() != truth.dims() {
            return Err(Error::dims(mask.dims(), truth.dims()));
        }
        let area = truth.count();
        if area == 0 {
            return Ok(Decision::Bad);
        }
        let hit = mask.intersection(truth)?.count();
        let spill = mask.count() - hit;
        let good = hit as f64 / area as f64 >= self.min_coverage && spill as f64 / area as f64 <= self.max_spill;
        Ok(if good { Decision::Good } else { Decision::Bad })
    }

    /// Reviews every pending item of `store` using the stored mask and
    /// `truth_mask.png` of each sequence.
    pub fn review_all(&self, store: &mut ReviewStore) -> Result<usize> {
        let pending = store.queue.pending().to_vec();
        for id in &pending {
            let dir = store.sequence_dir(id)?;
            let mask = BinaryMask::read_png(&dir.join(store.mask_kind.mask_file_name()))?;
            let truth_path = dir.join(TRUTH_MASK_FILE);
            if !truth_path.exists() {
                return Err(Error::MissingTruth(id.clone()));
            }
            let truth = BinaryMask::read_png(&truth_path)?;
            let decision = self.judge(&mask, &truth)?;
            store.record(Verdict {
                sequence_id: id.clone(),
                decision,
                timestamp: now_millis(),
                elapsed_ms: self.elapsed_ms,
                reviewer: "simulated".into(),
            })?;
        }
        Ok(pending.len())
    }
}
