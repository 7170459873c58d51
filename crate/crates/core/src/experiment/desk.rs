//! Desk-scale dataset preparation on a synthetic corpus: render, CV masks,
//! representative draw, simulated triage, bad-mask draw.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ExperimentPlan;
use crate::error::{Error, Result};
use crate::maskgen::{generate_stages, MaskAlgorithm, MaskKind, DEFAULT_BLOCK, DEFAULT_OFFSET};
use crate::review::{partition, sample_bad_mask, sample_representative, ReviewStore, SimulatedReviewer, VERDICT_LOG_FILE};
use crate::segnet::net::NetConfig;
use crate::segnet::train::TrainConfig;
use crate::sequence_io::{load_sequence, write_manifest, DatasetManifest, Split, MANIFEST_FILE};
use crate::synthcone::{write_corpus, CorpusRecipe};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DeskSetup {
    pub recipe: CorpusRecipe,
    pub threshold_block: usize,
    pub threshold_offset: f64,
    pub representative: usize,
    pub bad: usize,
    pub testset_seed: u64,
    pub reviewer: SimulatedReviewer,
    /// Masks shown to the (simulated) reviewer.
    pub review_algorithm: MaskKind,
}

impl Default for DeskSetup {
    fn default() -> Self {
        DeskSetup {
            recipe: CorpusRecipe::default(),
            threshold_block: DEFAULT_BLOCK,
            threshold_offset: DEFAULT_OFFSET,
            representative: 12,
            bad: 6,
            testset_seed: 11,
            reviewer: SimulatedReviewer::default(),
            review_algorithm: MaskKind::Threshold,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrepareReport {
    pub sequences: usize,
    pub representative: Vec<String>,
    pub bad: Vec<String>,
    pub train_good: usize,
    pub rejected: usize,
    pub good_fraction: f64,
}

/// Writes `mask_{kind}.png` for every manifest entry.
pub fn generate_dataset_masks(
    root: &Path,
    manifest: &DatasetManifest,
    algo: &MaskAlgorithm,
    kinds: &[MaskKind],
) -> Result<usize> {
    for e in &manifest.entries {
        let dir = root.join(&e.path);
        let stages = generate_stages(&load_sequence(&dir)?, algo)?;
        for &k in kinds {
            stages.get(k).write_png(&dir.join(k.mask_file_name()))?;
        }
    }
    Ok(manifest.entries.len())
}

/// Builds a complete, split dataset under `root` (overwriting a previous
/// one).
pub fn prepare_dataset(root: &Path, setup: &DeskSetup) -> Result<PrepareReport> {
    let log_path = root.join(VERDICT_LOG_FILE);
    if log_path.exists() {
        std::fs::remove_file(&log_path).map_err(|e| Error::io(&log_path, e))?;
    }
    let mut manifest = write_corpus(root, &setup.recipe)?;
    let algo = MaskAlgorithm::new(MaskKind::Hull).with_threshold(setup.threshold_block, setup.threshold_offset);
    generate_dataset_masks(root, &manifest, &algo, &MaskKind::ALL)?;

    let representative = sample_representative(&mut manifest, setup.representative, setup.testset_seed)?;
    let mut store = ReviewStore::open(root, manifest, setup.review_algorithm)?;
    setup.reviewer.review_all(&mut store)?;
    let ReviewStore { mut manifest, queue, .. } = store;
    let triage = partition(&mut manifest, &queue, false)?;
    let bad = sample_bad_mask(&mut manifest, setup.bad, setup.testset_seed.wrapping_add(1))?;
    write_manifest(&manifest, &root.join(MANIFEST_FILE))?;
    Ok(PrepareReport {
        sequences: manifest.entries.len(),
        representative,
        bad,
        train_good: manifest.ids_in(Split::TrainGood).len(),
        rejected: manifest.ids_in(Split::Rejected).len(),
        good_fraction: triage.good_fraction,
    })
}

impl ExperimentPlan {
    /// Small plan: 64×64 inputs, all three algorithms, 6 replicates, about
    /// ten minutes on one CPU core.
    pub fn desk(dataset_root: &Path, output_dir: &Path) -> Self {
        let train = |epochs: usize| TrainConfig {
            learning_rate: 2e-3,
            batch_size: 4,
            epochs,
            eval_every: 5,
            ..TrainConfig::default()
        };
        ExperimentPlan {
            dataset_root: dataset_root.to_path_buf(),
            output_dir: output_dir.to_path_buf(),
            net: NetConfig {
                input_size: 64,
                depth: 2,
                base_channels: 4,
            },
            frames_per_sequence: 3,
            eval_frames_per_sequence: 4,
            base_train: train(15),
            refine_train: train(10),
            ..ExperimentPlan::default()
        }
    }
}
