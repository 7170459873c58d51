//! Command-line front end. `dispatch` returns the process exit code:
//! 0 success, 1 usage error, 2 runtime failure.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::experiment::{
    generate_dataset_masks, load_results, prepare_dataset, refine_fold, render_report, run_base, run_experiment,
    write_results, write_timings, DeskSetup, ExperimentContext, ExperimentData, ExperimentPlan,
};
use crate::maskgen::{MaskAlgorithm, MaskKind, DEFAULT_BLOCK, DEFAULT_OFFSET};
use crate::metrics::apply_mask;
use crate::review::{
    partition, sample_bad_mask, sample_representative, serve, ReviewStore, SimulatedReviewer, VERDICT_LOG_FILE,
};
use crate::segnet::{load_weights, predict_mask, save_weights};
use crate::sequence_io::{
    frame_paths, load_manifest, read_frame, write_frame, write_manifest, DatasetManifest, MANIFEST_FILE,
};
use crate::synthcone::{write_corpus, CorpusRecipe};

pub const CONFIG_SNAPSHOT: &str = "effective_config.json";
pub const LOG_ENV: &str = "CONEBOOT_LOG";

#[derive(Debug, Parser)]
#[command(name = "coneboot", version, about = "Label bootstrapping for ultrasound cone segmentation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic corpus with ground truth.
    Synth(SynthArgs),
    /// Generate CV masks for every sequence of a dataset.
    Maskgen(MaskgenArgs),
    /// Triage service and verdict handling.
    #[command(subcommand)]
    Review(ReviewCommand),
    /// Test-set sampling.
    #[command(subcommand)]
    Testset(TestsetCommand),
    /// Train a single base or refined model.
    #[command(subcommand)]
    Train(TrainCommand),
    /// Full replicate experiment.
    #[command(subcommand)]
    Experiment(ExperimentCommand),
    /// Render Markdown tables from a results CSV.
    Report(ReportArgs),
    /// De-identification with a trained model.
    #[command(subcommand)]
    Deid(DeidCommand),
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    /// Output dataset root.
    pub out: PathBuf,
    /// JSON corpus recipe; flags below override it.
    #[arg(long)]
    pub recipe: Option<PathBuf>,
    #[arg(long)]
    pub sequences: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args, Serialize)]
pub struct MaskgenArgs {
    pub root: PathBuf,
    /// threshold | filled | hull; all three when omitted.
    #[arg(long, value_parser = parse_kind)]
    pub algo: Option<MaskKind>,
    #[arg(long, default_value_t = DEFAULT_BLOCK)]
    pub block: usize,
    #[arg(long, default_value_t = DEFAULT_OFFSET, allow_hyphen_values = true)]
    pub offset: f64,
    /// Hull of the largest connected component only.
    #[arg(long)]
    pub largest_component: bool,
}

#[derive(Debug, Subcommand)]
pub enum ReviewCommand {
    /// Serve the review HTTP API until interrupted.
    Serve(ServeArgs),
    /// Judge every pending sequence against its truth mask.
    Simulate(SimulateArgs),
    /// Write train_good / rejected splits from the verdict log.
    Partition(PartitionArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct ServeArgs {
    pub root: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: String,
    #[arg(long, value_parser = parse_kind, default_value = "threshold")]
    pub mask: MaskKind,
}

#[derive(Debug, Args, Serialize)]
pub struct SimulateArgs {
    pub root: PathBuf,
    #[arg(long, value_parser = parse_kind, default_value = "threshold")]
    pub mask: MaskKind,
    #[arg(long, default_value_t = 0.8)]
    pub min_coverage: f64,
    #[arg(long, default_value_t = 0.1)]
    pub max_spill: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct PartitionArgs {
    pub root: PathBuf,
    /// Leave unreviewed sequences unsorted instead of failing.
    #[arg(long)]
    pub allow_partial: bool,
}

#[derive(Debug, Subcommand)]
pub enum TestsetCommand {
    /// Draw a test set and record it in the manifest.
    Sample(SampleArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TestsetKind {
    Representative,
    Bad,
}

#[derive(Debug, Args, Serialize)]
pub struct SampleArgs {
    pub root: PathBuf,
    #[arg(long, value_enum)]
    pub set: TestsetKind,
    #[arg(short, long)]
    pub n: usize,
    #[arg(long)]
    pub seed: u64,
}

#[derive(Debug, Subcommand)]
pub enum TrainCommand {
    /// Train from scratch on the CV masks of train_good.
    Base(TrainArgs),
    /// Refine base weights on representative folds.
    Refine(RefineArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    /// Dataset root (with manifest.json).
    pub root: PathBuf,
    #[arg(long, value_parser = parse_kind)]
    pub algo: MaskKind,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Experiment plan supplying net and training settings.
    #[arg(long)]
    pub plan: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
}

#[derive(Debug, Args, Serialize)]
pub struct RefineArgs {
    #[command(flatten)]
    pub common: TrainArgs,
    /// Base weights file.
    #[arg(long)]
    pub weights: PathBuf,
    /// 1-based fold; every fold when omitted.
    #[arg(long)]
    pub fold: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum ExperimentCommand {
    /// Build a split desk-scale synthetic dataset (corpus, masks, simulated triage, test sets).
    Prepare(PrepareArgs),
    /// Run every algorithm and replicate of a plan.
    Run(RunArgs),
    /// Same as the top-level `report`.
    Report(ReportArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct PrepareArgs {
    pub out: PathBuf,
    /// JSON desk setup; flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Test-set sampling seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args, Serialize)]
pub struct RunArgs {
    #[arg(long)]
    pub plan: PathBuf,
    #[arg(long)]
    pub workers: Option<usize>,
    /// Replicate seeds become seed, seed+1, …
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct ReportArgs {
    #[arg(long)]
    pub results: PathBuf,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Write the Markdown here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum DeidCommand {
    /// Mask every frame of a sequence directory (or of every sequence in a dataset).
    Apply(DeidArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct DeidArgs {
    #[arg(long)]
    pub weights: PathBuf,
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the predicted mask next to each frame.
    #[arg(long)]
    pub save_masks: bool,
}

fn parse_kind(s: &str) -> std::result::Result<MaskKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Parses `args` (including the program name), runs the command and
/// returns the exit code.
pub fn dispatch<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::new().filter_or(LOG_ENV, "info")).try_init();
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

fn snapshot<T: Serialize>(dir: &Path, command: &str, config: &T) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let doc = serde_json::json!({ "command": command, "config": config });
    let path = dir.join(CONFIG_SNAPSHOT);
    let text = serde_json::to_string_pretty(&doc).map_err(|e| Error::malformed(&path, e))?;
    std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::malformed(path, e))
}

fn manifest_at(root: &Path) -> Result<DatasetManifest> {
    let path = root.join(MANIFEST_FILE);
    if path.exists() {
        load_manifest(&path)
    } else {
        DatasetManifest::scan(root)
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Synth(a) => synth(a),
        Command::Maskgen(a) => maskgen(a),
        Command::Review(ReviewCommand::Serve(a)) => review_serve(a),
        Command::Review(ReviewCommand::Simulate(a)) => review_simulate(a),
        Command::Review(ReviewCommand::Partition(a)) => review_partition(a),
        Command::Testset(TestsetCommand::Sample(a)) => testset_sample(a),
        Command::Train(TrainCommand::Base(a)) => train_base(a),
        Command::Train(TrainCommand::Refine(a)) => train_refine(a),
        Command::Experiment(ExperimentCommand::Prepare(a)) => experiment_prepare(a),
        Command::Experiment(ExperimentCommand::Run(a)) => experiment_run(a),
        Command::Experiment(ExperimentCommand::Report(a)) | Command::Report(a) => report(a),
        Command::Deid(DeidCommand::Apply(a)) => deid_apply(a),
    }
}

fn synth(a: SynthArgs) -> Result<()> {
    let mut recipe = match &a.recipe {
        Some(p) => read_json(p)?,
        None => CorpusRecipe::default(),
    };
    if let Some(n) = a.sequences {
        recipe.sequences = n;
    }
    if let Some(s) = a.seed {
        recipe.seed = s;
    }
    let manifest = write_corpus(&a.out, &recipe)?;
    snapshot(&a.out, "synth", &recipe)?;
    println!("wrote {} sequences to {}", manifest.entries.len(), a.out.display());
    Ok(())
}

fn maskgen(a: MaskgenArgs) -> Result<()> {
    let manifest = manifest_at(&a.root)?;
    let algo = MaskAlgorithm {
        hull_on_largest_component: a.largest_component,
        ..MaskAlgorithm::new(a.algo.unwrap_or(MaskKind::Hull)).with_threshold(a.block, a.offset)
    };
    let kinds: Vec<MaskKind> = match a.algo {
        Some(k) => vec![k],
        None => MaskKind::ALL.to_vec(),
    };
    let n = generate_dataset_masks(&a.root, &manifest, &algo, &kinds)?;
    snapshot(&a.root, "maskgen", &a)?;
    println!("wrote masks for {n} sequences");
    Ok(())
}

fn review_serve(a: ServeArgs) -> Result<()> {
    let manifest = load_manifest(&a.root.join(MANIFEST_FILE))?;
    let store = ReviewStore::open(&a.root, manifest, a.mask)?;
    let handle = serve(store, &a.addr)?;
    println!("review API listening on http://{}", handle.addr());
    handle.join();
    Ok(())
}

fn review_simulate(a: SimulateArgs) -> Result<()> {
    let manifest = load_manifest(&a.root.join(MANIFEST_FILE))?;
    let mut store = ReviewStore::open(&a.root, manifest, a.mask)?;
    let reviewer = SimulatedReviewer {
        min_coverage: a.min_coverage,
        max_spill: a.max_spill,
        ..SimulatedReviewer::default()
    };
    let n = reviewer.review_all(&mut store)?;
    let p = store.progress();
    println!("reviewed {n}: {} good, {} bad of {}", p.good, p.bad, p.total);
    Ok(())
}

fn review_partition(a: PartitionArgs) -> Result<()> {
    let path = a.root.join(MANIFEST_FILE);
    let mut manifest = load_manifest(&path)?;
    let store = ReviewStore::open(&a.root, manifest.clone(), MaskKind::Threshold)?;
    let report = partition(&mut manifest, &store.queue, a.allow_partial)?;
    write_manifest(&manifest, &path)?;
    println!(
        "train_good {}, rejected {}, unresolved {} (good fraction {:.3}; log {})",
        report.train_good.len(),
        report.rejected.len(),
        report.unresolved,
        report.good_fraction,
        a.root.join(VERDICT_LOG_FILE).display()
    );
    Ok(())
}

fn testset_sample(a: SampleArgs) -> Result<()> {
    let path = a.root.join(MANIFEST_FILE);
    let mut manifest = load_manifest(&path)?;
    let ids = match a.set {
        TestsetKind::Representative => sample_representative(&mut manifest, a.n, a.seed)?,
        TestsetKind::Bad => sample_bad_mask(&mut manifest, a.n, a.seed)?,
    };
    write_manifest(&manifest, &path)?;
    println!("{}", ids.join("\n"));
    Ok(())
}

/// Plan for a single training command: the plan file (or defaults) with
/// two replicate seeds starting at `seed`; replicate 0 is the one trained.
fn single_run_plan(a: &TrainArgs, refine: bool) -> Result<ExperimentPlan> {
    let mut plan = match &a.plan {
        Some(p) => ExperimentPlan::load(p)?,
        None => ExperimentPlan::default(),
    };
    plan.dataset_root = a.root.clone();
    plan.output_dir = a.out.clone();
    plan.mask_algorithms = vec![a.algo];
    plan.replicates = 2;
    plan.seeds = vec![a.seed, a.seed.wrapping_add(1)];
    let cfg = if refine { &mut plan.refine_train } else { &mut plan.base_train };
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    if let Some(lr) = a.learning_rate {
        cfg.learning_rate = lr;
    }
    plan.validate()?;
    Ok(plan)
}

fn load_data(plan: &ExperimentPlan) -> Result<ExperimentData> {
    let manifest = load_manifest(&plan.dataset_root.join(MANIFEST_FILE))?;
    ExperimentData::load(&plan.dataset_root, &manifest, &plan.mask_algorithms)
}

fn train_base(a: TrainArgs) -> Result<()> {
    let plan = single_run_plan(&a, false)?;
    let data = load_data(&plan)?;
    let ctx = ExperimentContext::new(&plan, &data)?;
    let (result, weights) = run_base(&ctx, a.algo, 0)?;
    let weights_path = a.out.join(format!("base_{}.cbw", a.algo));
    save_weights(&weights, &weights_path)?;
    write_results(std::slice::from_ref(&result), &a.out.join("results.csv"))?;
    snapshot(&a.out, "train base", &plan)?;
    println!(
        "base {}: representative accuracy {:.4}; weights {}",
        a.algo,
        result.test_accuracy,
        weights_path.display()
    );
    Ok(())
}

fn train_refine(a: RefineArgs) -> Result<()> {
    let plan = single_run_plan(&a.common, true)?;
    let data = load_data(&plan)?;
    let ctx = ExperimentContext::new(&plan, &data)?;
    let base = load_weights(&a.weights)?;
    if *base.config() != plan.net {
        return Err(Error::invalid("base weights do not match the plan's network"));
    }
    let folds: Vec<usize> = match a.fold {
        Some(k) if k >= 1 => vec![k - 1],
        Some(_) => return Err(Error::invalid("folds are numbered from 1")),
        None => (0..ctx.fold_groups.len()).collect(),
    };
    let mut results = Vec::new();
    for fold in folds {
        let (r, _, w) = refine_fold(&ctx, a.common.algo, 0, &base, fold)?;
        save_weights(&w, &a.common.out.join(format!("fold_{}_{}.cbw", fold + 1, a.common.algo)))?;
        println!("fold {}: held-out accuracy {:.4}", fold + 1, r.test_accuracy);
        results.push(r);
    }
    write_results(&results, &a.common.out.join("results.csv"))?;
    snapshot(&a.common.out, "train refine", &plan)
}

fn experiment_prepare(a: PrepareArgs) -> Result<()> {
    let mut setup: DeskSetup = match &a.config {
        Some(p) => read_json(p)?,
        None => DeskSetup::default(),
    };
    if let Some(s) = a.seed {
        setup.testset_seed = s;
    }
    let report = prepare_dataset(&a.out, &setup)?;
    snapshot(&a.out, "experiment prepare", &setup)?;
    println!(
        "{} sequences: {} representative, {} bad-mask, {} train_good, {} rejected (good fraction {:.3})",
        report.sequences,
        report.representative.len(),
        report.bad.len(),
        report.train_good,
        report.rejected,
        report.good_fraction
    );
    Ok(())
}

fn experiment_run(a: RunArgs) -> Result<()> {
    let mut plan = ExperimentPlan::load(&a.plan)?;
    if let Some(w) = a.workers {
        plan.workers = w;
    }
    if let Some(s) = a.seed {
        plan.seeds = (0..plan.replicates as u64).map(|r| s.wrapping_add(r)).collect();
    }
    if let Some(o) = a.out {
        plan.output_dir = o;
    }
    plan.validate()?;
    snapshot(&plan.output_dir, "experiment run", &plan)?;
    let outcome = run_experiment(&plan)?;
    let results_path = plan.output_dir.join("results.csv");
    write_results(&outcome.results, &results_path)?;
    write_timings(&outcome.timings, &plan.output_dir.join("timings.csv"))?;
    let md = render_report(&outcome.results, plan.alpha)?;
    let report_path = plan.output_dir.join("report.md");
    std::fs::write(&report_path, md).map_err(|e| Error::io(&report_path, e))?;
    println!("results: {}\nreport: {}", results_path.display(), report_path.display());
    Ok(())
}

fn report(a: ReportArgs) -> Result<()> {
    let results = load_results(&a.results)?;
    let md = render_report(&results, a.alpha)?;
    match &a.out {
        Some(p) => std::fs::write(p, md).map_err(|e| Error::io(p, e)),
        None => {
            print!("{md}");
            Ok(())
        }
    }
}

fn deid_sequence(weights: &crate::segnet::ModelWeights, dir: &Path, out: &Path, save_masks: bool) -> Result<usize> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let paths = frame_paths(dir)?;
    for p in &paths {
        let frame = read_frame(p)?;
        let mask = predict_mask(weights, &frame, Some(frame.dims()))?;
        let name = p.file_name().expect("frame path has a file name");
        write_frame(&out.join(name), &apply_mask(&frame, &mask)?)?;
        if save_masks {
            let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or("frame");
            mask.write_png(&out.join(format!("{stem}_mask.png")))?;
        }
    }
    Ok(paths.len())
}

fn deid_apply(a: DeidArgs) -> Result<()> {
    let weights = load_weights(&a.weights)?;
    let n = if a.input.join(MANIFEST_FILE).exists() {
        let manifest = load_manifest(&a.input.join(MANIFEST_FILE))?;
        let mut n = 0;
        for e in &manifest.entries {
            n += deid_sequence(&weights, &a.input.join(&e.path), &a.out.join(&e.path), a.save_masks)?;
        }
        n
    } else {
        deid_sequence(&weights, &a.input, &a.out, a.save_masks)?
    };
    snapshot(&a.out, "deid apply", &a)?;
    println!("de-identified {n} frames into {}", a.out.display());
    Ok(())
}
