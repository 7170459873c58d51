//! Markdown report: per algorithm, accuracy tables with 95% CIs and
//! pairwise t-test tables (one Holm-Bonferroni family each) for the
//! representative and the bad-mask test sets.

use std::fmt::Write;

use super::results::{stage_values, Metric};
use super::{RunResult, Stage};
use crate::error::Result;
use crate::maskgen::MaskKind;
use crate::stats::{all_pairs, compare_pairs, confidence_interval_95, mean_var, SampleSet};

fn ordinal(k: usize) -> String {
    let suffix = match (k % 10, k % 100) {
        (1, x) if x != 11 => "st",
        (2, x) if x != 12 => "nd",
        (3, x) if x != 13 => "rd",
        _ => "th",
    };
    format!("{k}{suffix}")
}

fn stage_label(s: Stage) -> String {
    match s {
        Stage::CvOnly => "CV mask".into(),
        Stage::Base => "Base".into(),
        Stage::Fold(k) => format!("{} ref.", ordinal(k)),
    }
}

fn model_stages(results: &[RunResult], kind: MaskKind) -> Vec<Stage> {
    let mut v: Vec<Stage> = results
        .iter()
        .filter(|r| r.algorithm == kind && r.stage != Stage::CvOnly)
        .map(|r| r.stage)
        .collect();
    v.sort();
    v.dedup();
    v
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// |mean(a) − mean(b)| per stage for two algorithms.
#[derive(Debug, Clone, PartialEq)]
pub struct GapSummary {
    pub base_gap: f64,
    /// One per refinement fold, in fold order.
    pub fold_gaps: Vec<f64>,
}

impl GapSummary {
    pub fn mean_fold_gap(&self) -> Option<f64> {
        mean(&self.fold_gaps)
    }
}

pub fn algorithm_gaps(results: &[RunResult], a: MaskKind, b: MaskKind, metric: Metric) -> Option<GapSummary> {
    let gap = |s: Stage| -> Option<f64> {
        Some((mean(&stage_values(results, a, s, metric))? - mean(&stage_values(results, b, s, metric))?).abs())
    };
    let base_gap = gap(Stage::Base)?;
    let fold_gaps = model_stages(results, a)
        .into_iter()
        .filter(|s| matches!(s, Stage::Fold(_)))
        .map(gap)
        .collect::<Option<Vec<f64>>>()?;
    Some(GapSummary { base_gap, fold_gaps })
}

fn pct(v: f64) -> String {
    format!("{:.2}", 100.0 * v)
}

fn accuracy_table(out: &mut String, title: &str, samples: &[SampleSet]) -> Result<()> {
    writeln!(out, "{title}\n").unwrap();
    writeln!(out, "| Model | n | Mean (%) | 95% CI (%) |").unwrap();
    writeln!(out, "|---|---|---|---|").unwrap();
    for s in samples {
        let (m, _) = mean_var(s)?;
        let (lo, hi) = confidence_interval_95(s)?;
        writeln!(out, "| {} | {} | {} | ({}, {}) |", s.label, s.len(), pct(m), pct(lo), pct(hi)).unwrap();
    }
    writeln!(out).unwrap();
    Ok(())
}

fn pvalue_table(out: &mut String, title: &str, samples: &[SampleSet], alpha: f64) -> Result<()> {
    let pairs = all_pairs(samples.len());
    writeln!(out, "{title}\n").unwrap();
    if pairs.is_empty() {
        writeln!(out, "_Fewer than two models; no comparisons._\n").unwrap();
        return Ok(());
    }
    let report = compare_pairs(samples, &pairs, alpha)?;
    // Threshold that applies to each pair: the one at its rank among the
    // sorted p-values.
    let mut order: Vec<usize> = (0..report.pairs.len()).collect();
    order.sort_by(|&i, &j| report.pairs[i].p_value.total_cmp(&report.pairs[j].p_value));
    let mut threshold = vec![0.0; order.len()];
    for (rank, &i) in order.iter().enumerate() {
        threshold[i] = report.holm_thresholds[rank];
    }
    writeln!(out, "| Comparison | t | df | p-value (two-sided) | α Holm-Bonferroni |").unwrap();
    writeln!(out, "|---|---|---|---|---|").unwrap();
    for (i, c) in report.pairs.iter().enumerate() {
        let star = if report.significant[i] { "*" } else { "" };
        writeln!(
            out,
            "| {} vs. {} | {:.3} | {} | {:.2e}{star} | {:.2e} |",
            c.label_a, c.label_b, c.t_statistic, c.degrees_of_freedom, c.p_value, threshold[i]
        )
        .unwrap();
    }
    writeln!(out, "\nSignificant comparisons (family-wise α = {alpha}) are marked with an asterisk.\n").unwrap();
    Ok(())
}

fn sample_sets(results: &[RunResult], kind: MaskKind, metric: Metric) -> Result<Vec<SampleSet>> {
    model_stages(results, kind)
        .into_iter()
        .filter_map(|s| {
            let v = stage_values(results, kind, s, metric);
            (v.len() >= 2).then(|| SampleSet::new(stage_label(s), v))
        })
        .collect()
}

fn algorithms(results: &[RunResult]) -> Vec<MaskKind> {
    let mut v: Vec<MaskKind> = results.iter().map(|r| r.algorithm).collect();
    v.sort();
    v.dedup();
    v
}

pub fn render_report(results: &[RunResult], alpha: f64) -> Result<String> {
    let mut out = String::from("# Label bootstrapping experiment report\n\n");
    let kinds = algorithms(results);

    let cv: Vec<&RunResult> = results.iter().filter(|r| r.stage == Stage::CvOnly).collect();
    if !cv.is_empty() {
        writeln!(out, "## Computer-vision masks\n").unwrap();
        writeln!(out, "| Algorithm | Representative (%) | Bad-mask set (%) | De-id passes |").unwrap();
        writeln!(out, "|---|---|---|---|").unwrap();
        for r in cv {
            writeln!(
                out,
                "| {} | {} | {} | {}/{} |",
                r.algorithm.display_name(),
                pct(r.test_accuracy),
                r.bad_accuracy.map(pct).unwrap_or_else(|| "n/a".into()),
                r.deid.passed,
                r.deid.frames
            )
            .unwrap();
        }
        writeln!(out).unwrap();
    }

    for &kind in &kinds {
        let name = kind.display_name();
        let rep = sample_sets(results, kind, Metric::Representative)?;
        if rep.is_empty() {
            continue;
        }
        writeln!(out, "## {name} masks\n").unwrap();
        accuracy_table(
            &mut out,
            &format!("**Table 1 ({name}).** Representative testset accuracy; refinements are scored on their held-out fold."),
            &rep,
        )?;
        pvalue_table(
            &mut out,
            &format!("**Table 2 ({name}).** Pairwise Student t-tests on the representative testset."),
            &rep,
            alpha,
        )?;
        let bad = sample_sets(results, kind, Metric::BadSet)?;
        if !bad.is_empty() {
            accuracy_table(&mut out, &format!("**Table 3 ({name}).** Bad-mask testset accuracy."), &bad)?;
            pvalue_table(
                &mut out,
                &format!("**Table 4 ({name}).** Pairwise Student t-tests on the bad-mask testset."),
                &bad,
                alpha,
            )?;
        }
        writeln!(out, "De-identification on the bad-mask testset (frames with no text pixel kept):\n").unwrap();
        writeln!(out, "| Model | Passed / frames (all replicates) | Static-text pass rate (%) |").unwrap();
        writeln!(out, "|---|---|---|").unwrap();
        for s in model_stages(results, kind) {
            let rs: Vec<&RunResult> = results.iter().filter(|r| r.algorithm == kind && r.stage == s).collect();
            let passed: usize = rs.iter().map(|r| r.deid.passed).sum();
            let frames: usize = rs.iter().map(|r| r.deid.frames).sum();
            let sp: usize = rs.iter().map(|r| r.deid.static_passed).sum();
            let sf: usize = rs.iter().map(|r| r.deid.static_frames).sum();
            let rate = if sf > 0 { pct(sp as f64 / sf as f64) } else { "n/a".into() };
            writeln!(out, "| {} | {passed}/{frames} | {rate} |", stage_label(s)).unwrap();
        }
        writeln!(out).unwrap();
    }

    if kinds.contains(&MaskKind::Threshold) && kinds.contains(&MaskKind::Hull) {
        writeln!(out, "## Threshold vs. Hull gap\n").unwrap();
        for (metric, label) in [(Metric::Representative, "Representative"), (Metric::BadSet, "Bad-mask")] {
            if let Some(g) = algorithm_gaps(results, MaskKind::Threshold, MaskKind::Hull, metric) {
                let folds: Vec<String> = g.fold_gaps.iter().map(|v| pct(*v)).collect();
                writeln!(
                    out,
                    "- {label} testset: base gap {} pp; refined gaps [{}] pp (mean {} pp).",
                    pct(g.base_gap),
                    folds.join(", "),
                    g.mean_fold_gap().map(pct).unwrap_or_else(|| "n/a".into())
                )
                .unwrap();
            }
        }
        writeln!(out).unwrap();
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::DeidCounts;
    use crate::segnet::train::LearningCurve;

    fn run(kind: MaskKind, stage: Stage, replicate: usize, acc: f64) -> RunResult {
        RunResult {
            algorithm: kind,
            stage,
            replicate,
            seed: replicate as u64,
            curve: LearningCurve::default(),
            test_accuracy: acc,
            full_set_accuracy: None,
            bad_accuracy: Some(acc - 0.05),
            deid: DeidCounts {
                passed: 9,
                frames: 10,
                static_passed: 9,
                static_frames: 9,
            },
        }
    }

    fn sample() -> Vec<RunResult> {
        let mut rs = Vec::new();
        for kind in [MaskKind::Threshold, MaskKind::Hull] {
            let off = if kind == MaskKind::Hull { 0.04 } else { 0.0 };
            rs.push(run(kind, Stage::CvOnly, 0, 0.9 + off));
            for r in 0..6 {
                let j = r as f64 * 1e-3;
                rs.push(run(kind, Stage::Base, r, 0.92 + off + j));
                for f in 1..=3 {
                    rs.push(run(kind, Stage::Fold(f), r, 0.97 + off / 4.0 + j + f as f64 * 1e-4));
                }
            }
        }
        rs
    }

    #[test]
    fn four_tables_per_algorithm() {
        let md = render_report(&sample(), 0.05).unwrap();
        for name in ["Threshold", "Hull"] {
            for t in 1..=4 {
                assert!(md.contains(&format!("**Table {t} ({name}).**")), "missing table {t} for {name}");
            }
        }
        assert!(md.contains("Base vs. 1st ref."));
        assert!(md.contains('*'));
        assert!(md.contains("8.33e-3"));
    }

    #[test]
    fn gaps() {
        let g = algorithm_gaps(&sample(), MaskKind::Threshold, MaskKind::Hull, Metric::Representative).unwrap();
        assert!((g.base_gap - 0.04).abs() < 1e-9);
        assert_eq!(g.fold_gaps.len(), 3);
        assert!((g.mean_fold_gap().unwrap() - 0.01).abs() < 1e-9);
    }

    #[test]
    fn ordinals() {
        assert_eq!(
            [1, 2, 3, 4, 11, 12, 13, 21].map(ordinal),
            ["1st", "2nd", "3rd", "4th", "11th", "12th", "13th", "21st"]
        );
    }
}
