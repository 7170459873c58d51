//! The full method: CV masks → base models on triaged sequences →
//! k-fold refinement on the representative set, repeated over seeded
//! replicates and evaluated on both test sets.

mod desk;
mod report;
mod results;

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::maskgen::{BinaryMask, MaskKind};
use crate::metrics::{deid_passes, pixel_accuracy_at_truth};
use crate::segnet::net::{ModelWeights, NetConfig};
use crate::segnet::train::{predict_tensor, train, EvalSample, LearningCurve, TrainConfig, TrainingPair};
use crate::sequence_io::{load_manifest, load_sequence, DatasetManifest, Frame, Split, MANIFEST_FILE, TRUTH_MASK_FILE};
use crate::synthcone::{EKG_MASK_FILE, TEXT_MASK_FILE};

pub use desk::{generate_dataset_masks, prepare_dataset, DeskSetup, PrepareReport};
pub use report::{algorithm_gaps, render_report, GapSummary};
pub use results::{load_results, parse_results, results_to_csv, stage_values, write_results, write_timings, Metric, RESULTS_HEADER};

/// Where a result comes from in the method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Stage {
    CvOnly,
    Base,
    /// 1-based fold number.
    Fold(usize),
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Stage::CvOnly => f.write_str("cv_only"),
            Stage::Base => f.write_str("base"),
            Stage::Fold(k) => write!(f, "fold_{k}"),
        }
    }
}

impl std::str::FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cv_only" => Ok(Stage::CvOnly),
            "base" => Ok(Stage::Base),
            _ => s
                .strip_prefix("fold_")
                .and_then(|k| k.parse().ok())
                .filter(|&k| k >= 1)
                .map(Stage::Fold)
                .ok_or_else(|| Error::invalid(format!("unknown stage `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeidCounts {
    pub passed: usize,
    pub frames: usize,
    /// Frames with burned-in text and no EKG clutter.
    pub static_passed: usize,
    pub static_frames: usize,
}

impl DeidCounts {
    pub fn static_rate(&self) -> Option<f64> {
        (self.static_frames > 0).then(|| self.static_passed as f64 / self.static_frames as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub algorithm: MaskKind,
    pub stage: Stage,
    pub replicate: usize,
    pub seed: u64,
    pub curve: LearningCurve,
    /// Representative set (held-out fold for refinement stages).
    pub test_accuracy: f64,
    pub full_set_accuracy: Option<f64>,
    pub bad_accuracy: Option<f64>,
    pub deid: DeidCounts,
}

/// Wall time is kept out of [`RunResult`] so result files stay
/// reproducible byte for byte.
#[derive(Debug, Clone, PartialEq)]
pub struct Timing {
    pub algorithm: MaskKind,
    pub stage: Stage,
    pub replicate: usize,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentPlan {
    /// Relative paths are resolved against the plan file's directory.
    pub dataset_root: PathBuf,
    pub output_dir: PathBuf,
    pub mask_algorithms: Vec<MaskKind>,
    pub replicates: usize,
    /// One per replicate; drives frame sampling and weight init.
    pub seeds: Vec<u64>,
    /// Frame draw for both test sets (shared by all replicates).
    pub eval_seed: u64,
    pub fold_seed: u64,
    pub frames_per_sequence: usize,
    pub eval_frames_per_sequence: usize,
    pub folds: usize,
    pub net: NetConfig,
    pub base_train: TrainConfig,
    pub refine_train: TrainConfig,
    pub workers: usize,
    /// Also score refined models on the whole representative set.
    pub log_full_set_accuracy: bool,
    pub alpha: f64,
}

impl Default for ExperimentPlan {
    fn default() -> Self {
        ExperimentPlan {
            dataset_root: PathBuf::from("data"),
            output_dir: PathBuf::from("runs"),
            mask_algorithms: MaskKind::ALL.to_vec(),
            replicates: 6,
            seeds: (1..=6).collect(),
            eval_seed: 1000,
            fold_seed: 2000,
            frames_per_sequence: 10,
            eval_frames_per_sequence: 10,
            folds: 3,
            net: NetConfig::default(),
            base_train: TrainConfig::default(),
            refine_train: TrainConfig::default(),
            workers: 1,
            log_full_set_accuracy: false,
            alpha: 0.05,
        }
    }
}

impl ExperimentPlan {
    pub fn validate(&self) -> Result<()> {
        if self.replicates < 2 {
            return Err(Error::invalid("replicates must be >= 2"));
        }
        if self.folds < 2 {
            return Err(Error::invalid("folds must be >= 2"));
        }
        if self.seeds.len() != self.replicates {
            return Err(Error::invalid(format!(
                "{} seeds given for {} replicates",
                self.seeds.len(),
                self.replicates
            )));
        }
        let distinct: HashSet<u64> = self.seeds.iter().copied().collect();
        if distinct.len() != self.seeds.len() {
            return Err(Error::invalid("replicate seeds must be distinct"));
        }
        if self.mask_algorithms.is_empty() {
            return Err(Error::invalid("no mask algorithms selected"));
        }
        if self.frames_per_sequence == 0 || self.eval_frames_per_sequence == 0 {
            return Err(Error::invalid("frames per sequence must be >= 1"));
        }
        if self.workers == 0 {
            return Err(Error::invalid("workers must be >= 1"));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::invalid("alpha must lie in (0, 1]"));
        }
        self.net.validate()?;
        self.base_train.validate()?;
        self.refine_train.validate()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut plan: ExperimentPlan = serde_json::from_str(&text).map_err(|e| Error::malformed(path, e))?;
        let base = path.parent().unwrap_or(Path::new(""));
        if plan.dataset_root.is_relative() {
            plan.dataset_root = base.join(&plan.dataset_root);
        }
        if plan.output_dir.is_relative() {
            plan.output_dir = base.join(&plan.output_dir);
        }
        Ok(plan)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serializes")
    }
}

/// Seed for one (sequence, seed) draw: SHA-256 of both, so draws do not
/// depend on iteration order.
fn sequence_rng(id: &str, seed: u64) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(id.as_bytes());
    ChaCha8Rng::from_seed(h.finalize().into())
}

/// Sorted frame indices: `k` drawn uniformly without replacement, or all
/// of them when the sequence is shorter than `k`.
pub fn select_frames(sequence_id: &str, len: usize, k: usize, seed: u64) -> Result<Vec<usize>> {
    if len == 0 {
        return Err(Error::invalid(format!("sequence `{sequence_id}` has no frames")));
    }
    if k == 0 {
        return Err(Error::invalid("k must be >= 1"));
    }
    if len <= k {
        if len < k {
            log::warn!("sequence `{sequence_id}` has {len} frames, fewer than {k}; using all");
        }
        return Ok((0..len).collect());
    }
    let mut idx = rand::seq::index::sample(&mut sequence_rng(sequence_id, seed), len, k).into_vec();
    idx.sort_unstable();
    Ok(idx)
}

/// Splits `n` items into `folds` groups (sizes differ by at most one) after
/// a seeded shuffle. Each group lists item indices in ascending order.
pub fn fold_partition(n: usize, folds: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if folds < 2 || n < folds {
        return Err(Error::PoolTooSmall {
            pool: "representative test set".into(),
            available: n,
            requested: folds,
        });
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut groups = vec![Vec::new(); folds];
    for (i, v) in idx.into_iter().enumerate() {
        groups[i % folds].push(v);
    }
    for g in &mut groups {
        g.sort_unstable();
    }
    Ok(groups)
}

/// Everything loaded for one sequence.
#[derive(Debug, Clone)]
pub struct SequenceData {
    pub id: String,
    pub frames: Vec<Frame>,
    pub cv_masks: BTreeMap<MaskKind, BinaryMask>,
    pub truth: Option<BinaryMask>,
    /// Burned-in text: the pixels de-identification must remove.
    pub sensitive: Option<BinaryMask>,
    pub has_ekg: bool,
}

impl SequenceData {
    pub fn load(dir: &Path, id: &str, kinds: &[MaskKind]) -> Result<Self> {
        let seq = load_sequence(dir)?;
        let mut cv_masks = BTreeMap::new();
        for &k in kinds {
            cv_masks.insert(k, BinaryMask::read_png(&dir.join(k.mask_file_name()))?);
        }
        let optional = |name: &str| -> Result<Option<BinaryMask>> {
            let p = dir.join(name);
            if p.exists() {
                BinaryMask::read_png(&p).map(Some)
            } else {
                Ok(None)
            }
        };
        let ekg = optional(EKG_MASK_FILE)?;
        Ok(SequenceData {
            id: id.to_string(),
            frames: seq.frames().to_vec(),
            cv_masks,
            truth: optional(TRUTH_MASK_FILE)?,
            sensitive: optional(TEXT_MASK_FILE)?,
            has_ekg: ekg.is_some_and(|m| !m.is_empty()),
        })
    }

    fn truth(&self) -> Result<&BinaryMask> {
        self.truth.as_ref().ok_or_else(|| Error::MissingTruth(self.id.clone()))
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentData {
    pub train_good: Vec<SequenceData>,
    pub representative: Vec<SequenceData>,
    pub bad: Vec<SequenceData>,
}

impl ExperimentData {
    pub fn load(root: &Path, manifest: &DatasetManifest, kinds: &[MaskKind]) -> Result<Self> {
        let load = |split: Split| -> Result<Vec<SequenceData>> {
            manifest
                .entries
                .iter()
                .filter(|e| e.split == split)
                .map(|e| SequenceData::load(&root.join(&e.path), &e.sequence_id, kinds))
                .collect()
        };
        let data = ExperimentData {
            train_good: load(Split::TrainGood)?,
            representative: load(Split::RepresentativeTest)?,
            bad: load(Split::BadMaskTest)?,
        };
        if data.train_good.is_empty() {
            return Err(Error::invalid("no train_good sequences in the manifest"));
        }
        for s in data.representative.iter().chain(&data.bad) {
            s.truth()?;
        }
        Ok(data)
    }
}

/// One evaluation frame with everything needed to score it.
#[derive(Debug, Clone)]
pub struct EvalFrame {
    pub sequence: usize,
    pub frame_index: usize,
    pub sample: EvalSample,
    pub sensitive: Option<BinaryMask>,
    pub static_text: bool,
}

pub fn eval_frames(seqs: &[SequenceData], k: usize, seed: u64, size: usize) -> Result<Vec<EvalFrame>> {
    let mut out = Vec::new();
    for (si, s) in seqs.iter().enumerate() {
        let truth = s.truth()?;
        let has_text = s.sensitive.as_ref().is_some_and(|m| !m.is_empty());
        for fi in select_frames(&s.id, s.frames.len(), k, seed)? {
            out.push(EvalFrame {
                sequence: si,
                frame_index: fi,
                sample: EvalSample::new(&s.frames[fi], truth, size)?,
                sensitive: s.sensitive.clone(),
                static_text: has_text && !s.has_ekg,
            });
        }
    }
    Ok(out)
}

/// Scores native-resolution predictions: mean pixel accuracy plus
/// de-identification counts (a frame passes when no sensitive pixel is
/// kept).
pub fn score_frames<F>(frames: &[EvalFrame], predict: F) -> Result<(f64, DeidCounts)>
where
    F: Fn(&EvalFrame) -> Result<BinaryMask> + Sync,
{
    if frames.is_empty() {
        return Err(Error::invalid("no evaluation frames"));
    }
    let per: Vec<(f64, Option<bool>, bool)> = frames
        .par_iter()
        .map(|f| {
            let truth = &f.sample.truth;
            let pred = predict(f)?.resize_nearest(truth.width(), truth.height());
            let acc = pixel_accuracy_at_truth(&pred, truth);
            let pass = match &f.sensitive {
                Some(s) => Some(deid_passes(&pred, s)?),
                None => None,
            };
            Ok((acc, pass, f.static_text))
        })
        .collect::<Result<_>>()?;
    let mut deid = DeidCounts::default();
    let mut sum = 0.0;
    for (acc, pass, static_text) in per {
        sum += acc;
        if let Some(p) = pass {
            deid.frames += 1;
            deid.passed += p as usize;
            if static_text {
                deid.static_frames += 1;
                deid.static_passed += p as usize;
            }
        }
    }
    Ok((sum / frames.len() as f64, deid))
}

fn model_scores(w: &ModelWeights, frames: &[EvalFrame]) -> Result<(f64, DeidCounts)> {
    score_frames(frames, |f| predict_tensor(w, &f.sample.input))
}

/// Prepared inputs shared by every job of a run.
pub struct ExperimentContext<'a> {
    pub plan: &'a ExperimentPlan,
    pub data: &'a ExperimentData,
    pub representative_frames: Vec<EvalFrame>,
    pub bad_frames: Vec<EvalFrame>,
    /// Indices into `data.representative`.
    pub fold_groups: Vec<Vec<usize>>,
}

impl<'a> ExperimentContext<'a> {
    pub fn new(plan: &'a ExperimentPlan, data: &'a ExperimentData) -> Result<Self> {
        plan.validate()?;
        let size = plan.net.input_size;
        let fold_groups = fold_partition(data.representative.len(), plan.folds, plan.fold_seed)?;
        let ctx = ExperimentContext {
            representative_frames: eval_frames(&data.representative, plan.eval_frames_per_sequence, plan.eval_seed, size)?,
            bad_frames: eval_frames(&data.bad, plan.eval_frames_per_sequence, plan.eval_seed, size)?,
            fold_groups,
            plan,
            data,
        };
        ctx.check_no_leakage()?;
        Ok(ctx)
    }

    /// Test sequences never reach base training, and no fold evaluates on
    /// a sequence it was refined on.
    fn check_no_leakage(&self) -> Result<()> {
        let good: HashSet<&str> = self.data.train_good.iter().map(|s| s.id.as_str()).collect();
        for s in self.data.representative.iter().chain(&self.data.bad) {
            if good.contains(s.id.as_str()) {
                return Err(Error::invalid(format!("test sequence `{}` is also in train_good", s.id)));
            }
        }
        for fold in 0..self.fold_groups.len() {
            let refine: HashSet<usize> = self.refine_indices(fold).into_iter().collect();
            if self.fold_groups[fold].iter().any(|i| refine.contains(i)) {
                return Err(Error::invalid(format!("fold {} evaluates on refinement data", fold + 1)));
            }
        }
        let covered: usize = self.fold_groups.iter().map(Vec::len).sum();
        if covered != self.data.representative.len() {
            return Err(Error::invalid("fold groups do not cover the representative set"));
        }
        Ok(())
    }

    fn refine_indices(&self, fold: usize) -> Vec<usize> {
        let mut v: Vec<usize> = self
            .fold_groups
            .iter()
            .enumerate()
            .filter(|(g, _)| *g != fold)
            .flat_map(|(_, ids)| ids.iter().copied())
            .collect();
        v.sort_unstable();
        v
    }

    fn fold_eval_frames(&self, fold: usize) -> Vec<EvalFrame> {
        let members: HashSet<usize> = self.fold_groups[fold].iter().copied().collect();
        self.representative_frames
            .iter()
            .filter(|f| members.contains(&f.sequence))
            .cloned()
            .collect()
    }

    fn samples(frames: &[EvalFrame]) -> Vec<EvalSample> {
        frames.iter().map(|f| f.sample.clone()).collect()
    }
}

fn training_pairs<'s>(
    seqs: impl Iterator<Item = &'s SequenceData>,
    k: usize,
    seed: u64,
    size: usize,
    mask: impl Fn(&SequenceData) -> Result<&BinaryMask>,
) -> Result<Vec<TrainingPair>> {
    let mut out = Vec::new();
    for s in seqs {
        let m = mask(s)?;
        for fi in select_frames(&s.id, s.frames.len(), k, seed)? {
            out.push(TrainingPair::new(&s.frames[fi], m, size)?);
        }
    }
    Ok(out)
}

/// CV masks scored directly, one record per algorithm.
pub fn run_cv_baseline(ctx: &ExperimentContext) -> Result<Vec<RunResult>> {
    let mut out = Vec::new();
    for &kind in &ctx.plan.mask_algorithms {
        let cv = |seqs: &[SequenceData], frames: &[EvalFrame]| {
            score_frames(frames, |f| {
                seqs[f.sequence]
                    .cv_masks
                    .get(&kind)
                    .cloned()
                    .ok_or_else(|| Error::invalid(format!("no {kind} mask for `{}`", seqs[f.sequence].id)))
            })
        };
        let (acc, _) = cv(&ctx.data.representative, &ctx.representative_frames)?;
        let (bad_acc, deid) = if ctx.bad_frames.is_empty() {
            (None, DeidCounts::default())
        } else {
            let (a, d) = cv(&ctx.data.bad, &ctx.bad_frames)?;
            (Some(a), d)
        };
        out.push(RunResult {
            algorithm: kind,
            stage: Stage::CvOnly,
            replicate: 0,
            seed: 0,
            curve: LearningCurve::default(),
            test_accuracy: acc,
            full_set_accuracy: Some(acc),
            bad_accuracy: bad_acc,
            deid,
        });
    }
    Ok(out)
}

fn bad_scores(ctx: &ExperimentContext, w: &ModelWeights) -> Result<(Option<f64>, DeidCounts)> {
    if ctx.bad_frames.is_empty() {
        return Ok((None, DeidCounts::default()));
    }
    let (a, d) = model_scores(w, &ctx.bad_frames)?;
    Ok((Some(a), d))
}

/// Trains a base model from scratch on the CV masks of `train_good`.
pub fn run_base(ctx: &ExperimentContext, kind: MaskKind, replicate: usize) -> Result<(RunResult, ModelWeights)> {
    let plan = ctx.plan;
    let seed = plan.seeds[replicate];
    let pairs = training_pairs(
        ctx.data.train_good.iter(),
        plan.frames_per_sequence,
        seed,
        plan.net.input_size,
        |s| {
            s.cv_masks
                .get(&kind)
                .ok_or_else(|| Error::invalid(format!("no {kind} mask for `{}`", s.id)))
        },
    )?;
    let config = TrainConfig {
        seed,
        ..plan.base_train.clone()
    };
    let test = ExperimentContext::samples(&ctx.representative_frames);
    let (weights, curve) = train(&pairs, &test, &plan.net, &config, None)?;
    let (acc, _) = model_scores(&weights, &ctx.representative_frames)?;
    let (bad_accuracy, deid) = bad_scores(ctx, &weights)?;
    Ok((
        RunResult {
            algorithm: kind,
            stage: Stage::Base,
            replicate,
            seed,
            curve,
            test_accuracy: acc,
            full_set_accuracy: Some(acc),
            bad_accuracy,
            deid,
        },
        weights,
    ))
}

/// Seed for fold `fold` (0-based) of a replicate.
fn refine_seed(seed: u64, fold: usize) -> u64 {
    seed ^ (fold as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Refines `base` on the truth masks of every fold except `fold`
/// (0-based) and scores it on that fold.
pub fn refine_fold(
    ctx: &ExperimentContext,
    kind: MaskKind,
    replicate: usize,
    base: &ModelWeights,
    fold: usize,
) -> Result<(RunResult, Timing, ModelWeights)> {
    let plan = ctx.plan;
    let seed = plan.seeds[replicate];
    if fold >= ctx.fold_groups.len() {
        return Err(Error::invalid(format!("fold {} out of range 1..={}", fold + 1, ctx.fold_groups.len())));
    }
    let started = Instant::now();
    let refine = ctx.refine_indices(fold);
    let pairs = training_pairs(
        refine.iter().map(|&i| &ctx.data.representative[i]),
        plan.frames_per_sequence,
        seed,
        plan.net.input_size,
        |s| s.truth(),
    )?;
    let eval = ctx.fold_eval_frames(fold);
    let config = TrainConfig {
        seed: refine_seed(seed, fold),
        ..plan.refine_train.clone()
    };
    let (weights, curve) = train(&pairs, &ExperimentContext::samples(&eval), &plan.net, &config, Some(base))?;
    let (acc, _) = model_scores(&weights, &eval)?;
    let full = if plan.log_full_set_accuracy {
        Some(model_scores(&weights, &ctx.representative_frames)?.0)
    } else {
        None
    };
    let (bad_accuracy, deid) = bad_scores(ctx, &weights)?;
    let stage = Stage::Fold(fold + 1);
    Ok((
        RunResult {
            algorithm: kind,
            stage,
            replicate,
            seed,
            curve,
            test_accuracy: acc,
            full_set_accuracy: full,
            bad_accuracy,
            deid,
        },
        Timing {
            algorithm: kind,
            stage,
            replicate,
            seconds: started.elapsed().as_secs_f64(),
        },
        weights,
    ))
}

/// Refines `base` once per fold.
pub fn run_refinement_folds(
    ctx: &ExperimentContext,
    kind: MaskKind,
    replicate: usize,
    base: &ModelWeights,
) -> Result<Vec<(RunResult, Timing)>> {
    (0..ctx.fold_groups.len())
        .map(|fold| refine_fold(ctx, kind, replicate, base, fold).map(|(r, t, _)| (r, t)))
        .collect()
}

/// Base model plus its refinements for one (algorithm, replicate).
fn run_job(ctx: &ExperimentContext, kind: MaskKind, replicate: usize) -> Result<(Vec<RunResult>, Vec<Timing>)> {
    let started = Instant::now();
    let (base, weights) = run_base(ctx, kind, replicate)?;
    log::info!(
        "{kind} replicate {replicate}: base accuracy {:.4} ({:.1}s)",
        base.test_accuracy,
        started.elapsed().as_secs_f64()
    );
    let mut timings = vec![Timing {
        algorithm: kind,
        stage: Stage::Base,
        replicate,
        seconds: started.elapsed().as_secs_f64(),
    }];
    let mut results = vec![base];
    for (r, t) in run_refinement_folds(ctx, kind, replicate, &weights)? {
        log::info!("{kind} replicate {replicate}: {} accuracy {:.4}", r.stage, r.test_accuracy);
        results.push(r);
        timings.push(t);
    }
    Ok((results, timings))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutcome {
    /// Sorted by (algorithm, stage, replicate).
    pub results: Vec<RunResult>,
    pub timings: Vec<Timing>,
}

/// Runs every (algorithm, replicate) job on a pool of `plan.workers`
/// threads. Output order does not depend on scheduling.
pub fn run_experiment(plan: &ExperimentPlan) -> Result<ExperimentOutcome> {
    plan.validate()?;
    let manifest = load_manifest(&plan.dataset_root.join(MANIFEST_FILE))?;
    let data = ExperimentData::load(&plan.dataset_root, &manifest, &plan.mask_algorithms)?;
    run_with_data(plan, &data)
}

pub fn run_with_data(plan: &ExperimentPlan, data: &ExperimentData) -> Result<ExperimentOutcome> {
    let ctx = ExperimentContext::new(plan, data)?;
    let mut results = run_cv_baseline(&ctx)?;
    let jobs: Vec<(MaskKind, usize)> = plan
        .mask_algorithms
        .iter()
        .flat_map(|&k| (0..plan.replicates).map(move |r| (k, r)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(plan.workers)
        .build()
        .map_err(|e| Error::invalid(format!("worker pool: {e}")))?;
    let outputs: Vec<(Vec<RunResult>, Vec<Timing>)> =
        pool.install(|| jobs.par_iter().map(|&(k, r)| run_job(&ctx, k, r)).collect::<Result<_>>())?;
    let mut timings = Vec::new();
    for (r, t) in outputs {
        results.extend(r);
        timings.extend(t);
    }
    results.sort_by_key(|r| (r.algorithm, r.stage, r.replicate));
    timings.sort_by_key(|t| (t.algorithm, t.stage, t.replicate));
    Ok(ExperimentOutcome { results, timings })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn select_frames_cases() {
        let a = select_frames("seq_001", 12, 10, 5).unwrap();
        assert_eq!(a.len(), 10);
        assert!(a.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(select_frames("seq_001", 10, 10, 5).unwrap(), (0..10).collect::<Vec<_>>());
        assert_eq!(select_frames("seq_001", 7, 10, 5).unwrap().len(), 7);
        assert_eq!(a, select_frames("seq_001", 12, 10, 5).unwrap());
        assert!(select_frames("x", 0, 3, 1).is_err());
        // Different ids draw independently.
        let b: Vec<_> = (0..20).map(|i| select_frames(&format!("s{i}"), 40, 3, 5).unwrap()).collect();
        assert!(b.iter().any(|v| *v != b[0]));
    }

    #[test]
    fn folds_cover_once() {
        let g = fold_partition(33, 3, 9).unwrap();
        assert_eq!(g.iter().map(Vec::len).collect::<Vec<_>>(), vec![11, 11, 11]);
        let g = fold_partition(12, 3, 9).unwrap();
        assert_eq!(g.iter().map(Vec::len).collect::<Vec<_>>(), vec![4, 4, 4]);
        let mut all: Vec<usize> = g.concat();
        all.sort_unstable();
        assert_eq!(all, (0..12).collect::<Vec<_>>());
        assert!(fold_partition(2, 3, 0).is_err());
    }

    #[test]
    fn clinical_scale_fold_counts() {
        // 33 sequences, 10 frames each: 22 refine sequences → 220 cases,
        // 11 held out → 110 cases.
        let g = fold_partition(33, 3, 1).unwrap();
        for f in 0..3 {
            let refine: usize = (0..3).filter(|&o| o != f).map(|o| g[o].len()).sum();
            assert_eq!((refine * 10, g[f].len() * 10), (220, 110));
        }
    }

    #[test]
    fn stage_names_round_trip() {
        for s in [Stage::CvOnly, Stage::Base, Stage::Fold(1), Stage::Fold(3)] {
            assert_eq!(s.to_string().parse::<Stage>().unwrap(), s);
        }
        assert!("fold_0".parse::<Stage>().is_err());
        assert!(Stage::Base < Stage::Fold(1) && Stage::CvOnly < Stage::Base);
    }

    #[test]
    fn plan_validation() {
        let mut p = ExperimentPlan::default();
        p.validate().unwrap();
        p.seeds[1] = p.seeds[0];
        assert!(p.validate().is_err());
        let p = ExperimentPlan {
            replicates: 1,
            seeds: vec![1],
            ..ExperimentPlan::default()
        };
        assert!(p.validate().is_err());
        let p = ExperimentPlan {
            folds: 1,
            ..ExperimentPlan::default()
        };
        assert!(p.validate().is_err());
    }
}
