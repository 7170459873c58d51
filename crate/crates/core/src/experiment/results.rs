//! Results CSV: one `curve` row per learning-curve point and one `final`
//! row per run. Reals are written with 17 significant digits so a load
//! reproduces them exactly.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use super::{DeidCounts, RunResult, Stage, Timing};
use crate::error::{Error, Result};
use crate::maskgen::MaskKind;
use crate::segnet::train::{CurvePoint, LearningCurve};

pub const RESULTS_HEADER: &str = "algorithm,stage,replicate,seed,row,epoch,train_loss,val_loss,test_accuracy,\
full_set_accuracy,bad_accuracy,deid_passed,deid_frames,deid_static_passed,deid_static_frames";

fn real(v: f64) -> String {
    format!("{v:.16e}")
}

fn opt(v: Option<f64>) -> String {
    v.map(real).unwrap_or_default()
}

pub fn results_to_csv(results: &[RunResult]) -> String {
    let mut s = String::from(RESULTS_HEADER);
    s.push('\n');
    for r in results {
        let key = format!("{},{},{},{}", r.algorithm.short_name(), r.stage, r.replicate, r.seed);
        for p in &r.curve.points {
            s.push_str(&format!(
                "{key},curve,{},{},{},{},,,,,,\n",
                p.epoch,
                real(p.train_loss),
                opt(p.val_loss),
                opt(p.test_accuracy)
            ));
        }
        let epoch = r.curve.points.last().map_or(0, |p| p.epoch);
        s.push_str(&format!(
            "{key},final,{epoch},,,{},{},{},{},{},{},{}\n",
            real(r.test_accuracy),
            opt(r.full_set_accuracy),
            opt(r.bad_accuracy),
            r.deid.passed,
            r.deid.frames,
            r.deid.static_passed,
            r.deid.static_frames
        ));
    }
    s
}

pub fn write_results(results: &[RunResult], path: &Path) -> Result<()> {
    write_atomic(path, results_to_csv(results).as_bytes())
}

/// Wall-clock seconds per run, kept apart from the reproducible results.
pub fn write_timings(timings: &[Timing], path: &Path) -> Result<()> {
    let mut s = String::from("algorithm,stage,replicate,seconds\n");
    for t in timings {
        s.push_str(&format!("{},{},{},{:.3}\n", t.algorithm.short_name(), t.stage, t.replicate, t.seconds));
    }
    write_atomic(path, s.as_bytes())
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

#[derive(Default)]
struct Partial {
    seed: u64,
    points: Vec<CurvePoint>,
    fin: Option<(f64, Option<f64>, Option<f64>, DeidCounts)>,
}

pub fn load_results(path: &Path) -> Result<Vec<RunResult>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_results(&text, path)
}

pub fn parse_results(text: &str, path: &Path) -> Result<Vec<RunResult>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| Error::malformed(path, e))?.clone();
    if header.iter().collect::<Vec<_>>().join(",") != RESULTS_HEADER {
        return Err(Error::malformed(path, "unexpected results header"));
    }
    let mut runs: BTreeMap<(MaskKind, Stage, usize), Partial> = BTreeMap::new();
    for (line, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::malformed(path, e))?;
        let bad = |what: &str| Error::malformed(path, format!("row {}: bad {what}", line + 2));
        let field = |i: usize| rec.get(i).unwrap_or("");
        let num = |i: usize, what: &str| field(i).parse::<f64>().map_err(|_| bad(what));
        let opt_num = |i: usize, what: &str| -> Result<Option<f64>> {
            if field(i).is_empty() {
                Ok(None)
            } else {
                num(i, what).map(Some)
            }
        };
        let int = |i: usize, what: &str| field(i).parse::<usize>().map_err(|_| bad(what));
        let algorithm: MaskKind = field(0).parse().map_err(|_| bad("algorithm"))?;
        let stage: Stage = field(1).parse().map_err(|_| bad("stage"))?;
        let replicate = int(2, "replicate")?;
        let seed = field(3).parse::<u64>().map_err(|_| bad("seed"))?;
        let entry = runs.entry((algorithm, stage, replicate)).or_default();
        entry.seed = seed;
        match field(4) {
            "curve" => entry.points.push(CurvePoint {
                epoch: int(5, "epoch")?,
                train_loss: num(6, "train_loss")?,
                val_loss: opt_num(7, "val_loss")?,
                test_accuracy: opt_num(8, "test_accuracy")?,
            }),
            "final" => {
                if entry.fin.is_some() {
                    return Err(bad("duplicate final row"));
                }
                entry.fin = Some((
                    num(8, "test_accuracy")?,
                    opt_num(9, "full_set_accuracy")?,
                    opt_num(10, "bad_accuracy")?,
                    DeidCounts {
                        passed: int(11, "deid_passed")?,
                        frames: int(12, "deid_frames")?,
                        static_passed: int(13, "deid_static_passed")?,
                        static_frames: int(14, "deid_static_frames")?,
                    },
                ));
            }
            _ => return Err(bad("row kind")),
        }
    }
    runs.into_iter()
        .map(|((algorithm, stage, replicate), p)| {
            let (test_accuracy, full_set_accuracy, bad_accuracy, deid) = p.fin.ok_or_else(|| {
                Error::malformed(path, format!("{algorithm} {stage} replicate {replicate} has no final row"))
            })?;
            if p.points.windows(2).any(|w| w[0].epoch >= w[1].epoch) {
                return Err(Error::malformed(path, "curve epochs not increasing"));
            }
            Ok(RunResult {
                algorithm,
                stage,
                replicate,
                seed: p.seed,
                curve: LearningCurve { points: p.points },
                test_accuracy,
                full_set_accuracy,
                bad_accuracy,
                deid,
            })
        })
        .collect()
}

/// Which number of a run to pull out.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Representative,
    BadSet,
    StaticDeidRate,
}

/// Values of `metric` for one (algorithm, stage), ordered by replicate.
pub fn stage_values(results: &[RunResult], algorithm: MaskKind, stage: Stage, metric: Metric) -> Vec<f64> {
    let mut rs: Vec<&RunResult> = results
        .iter()
        .filter(|r| r.algorithm == algorithm && r.stage == stage)
        .collect();
    rs.sort_by_key(|r| r.replicate);
    rs.iter()
        .filter_map(|r| match metric {
            Metric::Representative => Some(r.test_accuracy),
            Metric::BadSet => r.bad_accuracy,
            Metric::StaticDeidRate => r.deid.static_rate(),
        })
        .collect()
}
