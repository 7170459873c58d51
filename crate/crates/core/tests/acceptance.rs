//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.
//!
//! The desk-scale replication trains 2 × 3 algorithms × 6 replicates of the
//! small U-Net and takes roughly twenty minutes on one core.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use coneboot::experiment::{
    algorithm_gaps, prepare_dataset, results_to_csv, run_experiment, stage_values, write_results, DeskSetup,
    ExperimentOutcome, ExperimentPlan, Metric, RunResult, Stage,
};
use coneboot::maskgen::{adaptive_threshold, convex_hull_fill, fill_holes};
use coneboot::segnet::layers::Tensor;
use coneboot::segnet::net::{loss_and_gradient, ModelWeights, NetConfig};
use coneboot::sequence_io::{load_manifest, Frame, PixelScale, MANIFEST_FILE};
use coneboot::stats::{all_pairs, compare_pairs, holm_bonferroni, students_t_test, t_cdf, t_quantile, SampleSet};
use coneboot::{BinaryMask, MaskKind};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

struct Runner {
    failed: Vec<&'static str>,
}

impl Runner {
    fn check(&mut self, name: &'static str, f: impl FnOnce() -> Outcome) {
        let start = Instant::now();
        let o = std::panic::catch_unwind(std::panic::AssertUnwindSafe(f))
            .unwrap_or_else(|_| outcome(false, "panicked"));
        let tag = if o.pass { "PASS" } else { "FAIL" };
        let mut out = std::io::stdout().lock();
        writeln!(out, "[{tag}] {name}: {} ({:.1}s)", o.detail, start.elapsed().as_secs_f64()).unwrap();
        out.flush().unwrap();
        if !o.pass {
            self.failed.push(name);
        }
    }
}

// ---------------------------------------------------------------- stats

fn holm_six() -> Outcome {
    let th = holm_bonferroni(&[0.5; 6], 0.05).unwrap().thresholds;
    let shown: Vec<String> = th.iter().map(|t| format!("{t:.2e}")).collect();
    let want = ["8.33e-3", "1.00e-2", "1.25e-2", "1.67e-2", "2.50e-2", "5.00e-2"];
    outcome(shown == want, format!("[{}]", shown.join(", ")))
}

/// Composite Simpson integral of the t density over [0, |x|].
fn t_cdf_by_integration(x: f64, df: f64) -> f64 {
    use statrs::function::gamma::ln_gamma;
    let c = (ln_gamma((df + 1.0) / 2.0) - ln_gamma(df / 2.0)).exp() / (df * std::f64::consts::PI).sqrt();
    let density = |t: f64| c * (1.0 + t * t / df).powf(-(df + 1.0) / 2.0);
    let (a, n) = (x.abs(), 20_000usize);
    let h = a / n as f64;
    let mut s = density(0.0) + density(a);
    for i in 1..n {
        s += density(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    0.5 + x.signum() * s * h / 3.0
}

fn t_cdf_oracle() -> Outcome {
    let xs = [-7.5, -3.0, -2.0, -1.0, -0.4, 0.0, 0.3, 0.9, 1.5, 2.571, 4.0, 9.0];
    let mut worst = (0.0f64, 0.0, 0.0);
    for df in 1..=30 {
        for &x in &xs {
            let err = (t_cdf(x, df as f64) - t_cdf_by_integration(x, df as f64)).abs();
            if err > worst.0 {
                worst = (err, x, df as f64);
            }
        }
    }
    let q = t_quantile(0.975, 5.0).unwrap();
    outcome(
        worst.0 < 1e-8 && (q - 2.571).abs() <= 1e-3,
        format!("max |err| {:.1e} at (x {}, df {}); t(0.975, 5) = {q:.4}", worst.0, worst.1, worst.2),
    )
}

fn t_test_properties() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut bad = Vec::new();
    for case in 0..1000 {
        let (na, nb) = (rng.gen_range(2..12), rng.gen_range(2..12));
        let a: Vec<f64> = (0..na).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let b: Vec<f64> = (0..nb).map(|_| rng.gen_range(-4.0..6.0)).collect();
        let set = |v: &[f64]| SampleSet::new("s", v.to_vec()).unwrap();
        let ab = students_t_test(&set(&a), &set(&b)).unwrap();
        let ba = students_t_test(&set(&b), &set(&a)).unwrap();
        if ab.t != -ba.t || (ab.p - ba.p).abs() > 1e-15 {
            bad.push(format!("case {case}: asymmetric"));
        }
        let c = rng.gen_range(0.1..10.0) * if rng.gen_bool(0.5) { -1.0 } else { 1.0 };
        let d = rng.gen_range(-100.0..100.0);
        let tr = |v: &[f64]| v.iter().map(|x| c * x + d).collect::<Vec<_>>();
        let scaled = students_t_test(&set(&tr(&a)), &set(&tr(&b))).unwrap();
        if (scaled.p - ab.p).abs() > 1e-10 {
            bad.push(format!("case {case}: p {} vs {}", ab.p, scaled.p));
        }
        let same = students_t_test(&set(&a), &set(&a)).unwrap();
        if same.p != 1.0 || same.t != 0.0 {
            bad.push(format!("case {case}: identical samples give p {}", same.p));
        }
    }
    outcome(bad.is_empty(), if bad.is_empty() { "1000 cases".to_string() } else { bad[..bad.len().min(3)].join("; ") })
}

// ---------------------------------------------------------------- maskgen

fn brute_threshold(img: &Frame, block: usize, offset: f64) -> BinaryMask {
    let (w, h) = img.dims();
    let r = (block / 2) as i64;
    BinaryMask::from_fn(w, h, |x, y| {
        let mut sum = 0.0;
        for dy in -r..=r {
            for dx in -r..=r {
                let sx = (x as i64 + dx).clamp(0, w as i64 - 1) as usize;
                let sy = (y as i64 + dy).clamp(0, h as i64 - 1) as usize;
                sum += img.get(sx, sy);
            }
        }
        img.get(x, y) > sum / (block * block) as f64 + offset
    })
}

/// Background reachable from the border, by repeated relaxation.
fn brute_fill(m: &BinaryMask) -> BinaryMask {
    let (w, h) = m.dims();
    let mut outside = BinaryMask::from_fn(w, h, |x, y| !m.get(x, y) && (x == 0 || y == 0 || x == w - 1 || y == h - 1));
    loop {
        let mut changed = false;
        for y in 0..h {
            for x in 0..w {
                if m.get(x, y) || outside.get(x, y) {
                    continue;
                }
                let near = (x > 0 && outside.get(x - 1, y))
                    || (x + 1 < w && outside.get(x + 1, y))
                    || (y > 0 && outside.get(x, y - 1))
                    || (y + 1 < h && outside.get(x, y + 1));
                if near {
                    outside.set(x, y, true);
                    changed = true;
                }
            }
        }
        if !changed {
            return outside.complement();
        }
    }
}

/// A pixel lies outside the closed hull of `pts` exactly when all vectors
/// from it to the points fit in an angular sector narrower than a half
/// turn, i.e. some point's ray has every other point strictly to its left
/// (or on the same ray).
fn brute_hull(m: &BinaryMask) -> BinaryMask {
    let (w, h) = m.dims();
    let pts: Vec<(i64, i64)> = (0..h)
        .flat_map(|y| (0..w).map(move |x| (x, y)))
        .filter(|&(x, y)| m.get(x, y))
        .map(|(x, y)| (x as i64, y as i64))
        .collect();
    BinaryMask::from_fn(w, h, |x, y| {
        let p = (x as i64, y as i64);
        if pts.is_empty() {
            return false;
        }
        if pts.contains(&p) {
            return true;
        }
        let outside = pts.iter().any(|&s| {
            let d = (s.0 - p.0, s.1 - p.1);
            pts.iter().all(|&q| {
                let v = (q.0 - p.0, q.1 - p.1);
                let cr = d.0 * v.1 - d.1 * v.0;
                cr > 0 || (cr == 0 && d.0 * v.0 + d.1 * v.1 > 0)
            })
        });
        !outside
    })
}

fn random_mask(rng: &mut ChaCha8Rng, density: f64) -> BinaryMask {
    let bits = (0..32 * 32).map(|_| rng.gen_bool(density)).collect();
    BinaryMask::new(32, 32, bits).unwrap()
}

fn maskgen_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut fails = [0usize; 3];
    for _ in 0..200 {
        let pixels: Vec<f64> = (0..32 * 32).map(|_| rng.gen_range(0..=255) as f64).collect();
        let img = Frame::new(32, 32, pixels, PixelScale::Byte).unwrap();
        let block = 2 * rng.gen_range(1..8) + 1;
        let offset = rng.gen_range(-6..=6) as f64;
        if adaptive_threshold(&img, block, offset).unwrap() != brute_threshold(&img, block, offset) {
            fails[0] += 1;
        }

        let density = rng.gen_range(0.2..0.7);
        let m = random_mask(&mut rng, density);
        if fill_holes(&m) != brute_fill(&m) {
            fails[1] += 1;
        }

        // Sparse point sets keep the quadratic oracle cheap; include the
        // degenerate 0/1/2-point cases.
        let k = rng.gen_range(0..=40);
        let mut m = BinaryMask::empty(32, 32);
        for _ in 0..k {
            m.set(rng.gen_range(0..32), rng.gen_range(0..32), true);
        }
        if convex_hull_fill(&m) != brute_hull(&m) {
            fails[2] += 1;
        }
    }
    outcome(
        fails == [0, 0, 0],
        format!("mismatches threshold/fill/hull over 200 each: {fails:?}"),
    )
}

fn stage_chain(root: &Path) -> Outcome {
    let manifest = load_manifest(&root.join(MANIFEST_FILE)).unwrap();
    let mut broken = Vec::new();
    for e in &manifest.entries {
        let dir = root.join(&e.path);
        let load = |k: MaskKind| BinaryMask::read_png(&dir.join(k.mask_file_name())).unwrap();
        let (t, f, h) = (load(MaskKind::Threshold), load(MaskKind::FilledThreshold), load(MaskKind::Hull));
        if !(t.is_subset_of(&f) && f.is_subset_of(&h)) {
            broken.push(e.sequence_id.clone());
        }
    }
    outcome(
        broken.is_empty(),
        format!("{} sequences, violations: {broken:?}", manifest.entries.len()),
    )
}

// ---------------------------------------------------------------- segnet

fn gradient_check() -> Outcome {
    let mut worst = 0.0f64;
    let mut checked = 0;
    let mut skipped = 0;
    for (seed, depth, base) in [(1u64, 1, 2), (2, 2, 2), (3, 2, 3), (4, 3, 2)] {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let size = 1 << (depth + 1);
        let cfg = NetConfig {
            input_size: size,
            depth,
            base_channels: base,
        };
        let n = cfg.param_count();
        let params: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.6..0.6)).collect();
        let w = ModelWeights::from_params(cfg, params.clone()).unwrap();
        let xs: Vec<Tensor> = (0..2)
            .map(|_| Tensor::from_vec(1, size, size, (0..size * size).map(|_| rng.gen_range(0.0..1.0)).collect()))
            .collect();
        let ts: Vec<Vec<f64>> = (0..2)
            .map(|_| (0..size * size).map(|_| if rng.gen_bool(0.5) { 1.0 } else { 0.0 }).collect())
            .collect();
        let inputs: Vec<&Tensor> = xs.iter().collect();
        let targets: Vec<&[f64]> = ts.iter().map(|t| t.as_slice()).collect();
        let (_, grad) = loss_and_gradient(&w, &inputs, &targets).unwrap();
        let loss_at = |i: usize, delta: f64| {
            let mut p = params.clone();
            p[i] += delta;
            let w = ModelWeights::from_params(cfg, p).unwrap();
            loss_and_gradient(&w, &inputs, &targets).unwrap().0
        };
        let h = 1e-5;
        for i in 0..n {
            let numeric = (loss_at(i, h) - loss_at(i, -h)) / (2.0 * h);
            let scale = grad[i].abs().max(numeric.abs());
            // Central differences carry about eps·loss/h ≈ 1e-11 of rounding
            // noise, so components below this floor cannot be resolved.
            if scale < 1e-6 {
                skipped += 1;
                continue;
            }
            worst = worst.max((grad[i] - numeric).abs() / scale);
            checked += 1;
        }
    }
    outcome(worst < 1e-4, format!("max relative error {worst:.2e} over {checked} components ({skipped} below 1e-6 skipped)"))
}

// ---------------------------------------------------------------- desk replication

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn one(results: &[RunResult], k: MaskKind, stage: Stage) -> f64 {
    stage_values(results, k, stage, Metric::Representative)[0]
}

fn cv_ordering(r: &[RunResult]) -> Outcome {
    let (t, f, h) = (
        one(r, MaskKind::Threshold, Stage::CvOnly),
        one(r, MaskKind::FilledThreshold, Stage::CvOnly),
        one(r, MaskKind::Hull, Stage::CvOnly),
    );
    outcome(
        h >= f && f >= t,
        format!("CV accuracy Hull {:.2}% ≥ Filled {:.2}% ≥ Threshold {:.2}%", 100.0 * h, 100.0 * f, 100.0 * t),
    )
}

fn base_beats_cv(r: &[RunResult]) -> Outcome {
    let cv = one(r, MaskKind::Threshold, Stage::CvOnly);
    let base = mean(&stage_values(r, MaskKind::Threshold, Stage::Base, Metric::Representative));
    outcome(base >= cv, format!("Threshold base {:.2}% vs CV {:.2}%", 100.0 * base, 100.0 * cv))
}

fn refinement_significant(r: &[RunResult], folds: usize) -> Outcome {
    let stages: Vec<Stage> = std::iter::once(Stage::Base).chain((1..=folds).map(Stage::Fold)).collect();
    let samples: Vec<SampleSet> = stages
        .iter()
        .map(|&s| SampleSet::new(s.to_string(), stage_values(r, MaskKind::Threshold, s, Metric::Representative)).unwrap())
        .collect();
    let report = compare_pairs(&samples, &all_pairs(stages.len()), 0.05).unwrap();
    let base = mean(&samples[0].values);
    let mut lines = Vec::new();
    let mut hit = false;
    for (i, pair) in report.pairs.iter().enumerate().filter(|(_, p)| p.label_a == "base") {
        let fold_mean = mean(&samples.iter().find(|s| s.label == pair.label_b).unwrap().values);
        let sig = report.significant[i];
        hit |= sig && fold_mean > base;
        lines.push(format!("{} p={:.2e}{}", pair.label_b, pair.p_value, if sig { "*" } else { "" }));
    }
    outcome(hit, format!("base {:.2}%; {}", 100.0 * base, lines.join(", ")))
}

fn gap_shrinks(r: &[RunResult]) -> Outcome {
    let Some(g) = algorithm_gaps(r, MaskKind::Threshold, MaskKind::Hull, Metric::Representative) else {
        return outcome(false, "missing stages");
    };
    let refined = g.mean_fold_gap().unwrap_or(f64::NAN);
    outcome(
        refined <= 0.5 * g.base_gap,
        format!(
            "Threshold–Hull gap {:.2} pp at base, {:.2} pp mean over refinements",
            100.0 * g.base_gap,
            100.0 * refined
        ),
    )
}

fn deid_static(r: &[RunResult], folds: usize) -> Outcome {
    let mut rates = Vec::new();
    for k in 1..=folds {
        let (passed, frames) = r
            .iter()
            .filter(|x| x.algorithm == MaskKind::Threshold && x.stage == Stage::Fold(k))
            .fold((0, 0), |(p, n), x| (p + x.deid.static_passed, n + x.deid.static_frames));
        rates.push((k, passed, frames));
    }
    let ok = rates.iter().all(|&(_, p, n)| n > 0 && p as f64 >= 0.9 * n as f64);
    let shown: Vec<String> = rates
        .iter()
        .map(|&(k, p, n)| format!("fold {k}: {p}/{n} ({:.1}%)", 100.0 * p as f64 / n.max(1) as f64))
        .collect();
    outcome(ok, shown.join(", "))
}

fn desk_run(root: &Path, out: &Path) -> (ExperimentOutcome, ExperimentPlan) {
    let report = prepare_dataset(root, &DeskSetup::default()).unwrap();
    println!(
        "  dataset: {} sequences, {} good / {} rejected after triage, {} representative, {} bad",
        report.sequences,
        report.train_good,
        report.rejected,
        report.representative.len(),
        report.bad.len()
    );
    let plan = ExperimentPlan::desk(root, out);
    (run_experiment(&plan).unwrap(), plan)
}

fn main() {
    let mut run = Runner { failed: Vec::new() };
    run.check("holm thresholds m=6", holm_six);
    run.check("t_cdf vs integration oracle", t_cdf_oracle);
    run.check("t-test properties", t_test_properties);
    run.check("maskgen brute-force equivalence", maskgen_oracles);
    run.check("segnet gradient check", gradient_check);

    let dir = tempfile::tempdir().unwrap();
    let (root_a, root_b) = (dir.path().join("data_a"), dir.path().join("data_b"));
    let start = Instant::now();
    let first = std::panic::catch_unwind(|| desk_run(&root_a, &dir.path().join("out_a")));
    println!("  first desk run: {:.0}s", start.elapsed().as_secs_f64());
    match &first {
        Ok((out, plan)) => {
            let r = &out.results;
            run.check("stage chain Threshold ⊆ Filled ⊆ Hull", || stage_chain(&root_a));
            run.check("desk (a) CV ordering", || cv_ordering(r));
            run.check("desk (b) base ≥ CV input (Threshold)", || base_beats_cv(r));
            run.check("desk (c) significant refinement (Threshold)", || refinement_significant(r, plan.folds));
            run.check("desk (d) Threshold–Hull gap shrinks ≥ 50%", || gap_shrinks(r));
            run.check("de-id static text, refined Threshold", || deid_static(r, plan.folds));
        }
        Err(_) => {
            for name in [
                "stage chain Threshold ⊆ Filled ⊆ Hull",
                "desk (a) CV ordering",
                "desk (b) base ≥ CV input (Threshold)",
                "desk (c) significant refinement (Threshold)",
                "desk (d) Threshold–Hull gap shrinks ≥ 50%",
                "de-id static text, refined Threshold",
            ] {
                run.check(name, || outcome(false, "desk run failed"));
            }
        }
    }

    run.check("determinism of full desk plan", || {
        let Ok((a, _)) = &first else {
            return outcome(false, "first run failed");
        };
        let (b, _) = desk_run(&root_b, &dir.path().join("out_b"));
        let (pa, pb) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
        write_results(&a.results, &pa).unwrap();
        write_results(&b.results, &pb).unwrap();
        let (ba, bb) = (std::fs::read(&pa).unwrap(), std::fs::read(&pb).unwrap());
        outcome(
            ba == bb && results_to_csv(&a.results) == results_to_csv(&b.results),
            format!("{} rows, {} bytes, identical: {}", a.results.len(), ba.len(), ba == bb),
        )
    });

    if run.failed.is_empty() {
        println!("all acceptance criteria passed");
    } else {
        println!("failed: {}", run.failed.join(", "));
        std::process::exit(1);
    }
}
