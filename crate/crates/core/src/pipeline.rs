//! End-to-end reproduction run: ratings → split → biclusters → grid → Q → report.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bicluster::{enumerate_grid, sample_biclusters, Algorithm, Bicluster, BiclusterError};
use crate::evaluation::{evaluate_cold_start, EvalConfig, EvalError, EvalReport};
use crate::gridmap::{map_to_grid, GridMapError};
use crate::ingest::{
    binarize, make_cold_start, split_train_test, Binarization, ColdStartSplit, IngestError,
    RatingRecord,
};
use crate::mdp_env::{EnvError, GridEnv, GridState, RewardKind};
use crate::persistence::{
    biclusters_doc, popularity_of, BiclusterRecord, BiclusterRunParams, BiclustersDoc, GridDoc,
    GridModel, SplitDoc,
};
use crate::rl_trainer::{train, LearningCurve, TrainConfig, TrainError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Bicluster(#[from] BiclusterError),
    #[error(transparent)]
    GridMap(#[from] GridMapError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Offsets added to the master seed for each randomized stage.
pub mod seed_offset {
    pub const SPLIT: u64 = 0;
    pub const COLD_START: u64 = 1;
    pub const SAMPLE: u64 = 2;
    pub const TRAIN: u64 = 3;
    pub const EVAL: u64 = 4;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReproConfig {
    pub dataset: String,
    pub seed: u64,
    pub n: usize,
    pub binarization: Binarization,
    pub train_fraction: f64,
    pub keep_fraction: f64,
    pub algorithm: Algorithm,
    pub min_rows: Vec<usize>,
    pub min_cols: Vec<usize>,
    pub max_enumerate: usize,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl ReproConfig {
    pub const DEFAULT_THRESHOLDS: [usize; 3] = [2, 4, 8];

    /// Grid side 20 for ML-100k and 30 for ML-1M.
    pub fn default_n(dataset: &str) -> usize {
        if dataset == "ml-1m" {
            30
        } else {
            20
        }
    }

    pub fn new(dataset: &str, seed: u64) -> Self {
        Self {
            dataset: dataset.to_string(),
            seed,
            n: Self::default_n(dataset),
            binarization: Binarization::default(),
            train_fraction: 0.8,
            keep_fraction: 0.1,
            algorithm: Algorithm::Bibit,
            min_rows: Self::DEFAULT_THRESHOLDS.to_vec(),
            min_cols: Self::DEFAULT_THRESHOLDS.to_vec(),
            max_enumerate: usize::MAX,
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
        }
    }

    pub fn stage_seed(&self, offset: u64) -> u64 {
        self.seed.wrapping_add(offset)
    }
}

/// Every artifact one run produces, ready to be written out.
#[derive(Debug, Clone)]
pub struct ReproOutput {
    pub split: SplitDoc,
    pub biclusters: BiclustersDoc,
    pub grid: GridDoc,
    pub model: GridModel,
    pub curve: LearningCurve,
    pub report: EvalReport,
}

/// 80/20 split plus cold-start masking of the test users.
pub fn prepare_split(
    records: &[RatingRecord],
    config: &ReproConfig,
) -> Result<(Vec<RatingRecord>, ColdStartSplit), PipelineError> {
    let tt = split_train_test(
        records,
        config.train_fraction,
        config.stage_seed(seed_offset::SPLIT),
    )?;
    let train = binarize(&tt.train, config.binarization)?;
    let split = make_cold_start(
        train,
        &tt.test,
        config.keep_fraction,
        config.binarization,
        config.stage_seed(seed_offset::COLD_START),
    )?;
    Ok((tt.train, split))
}

/// Places exactly n² biclusters, given with raw ids, on the grid.
pub fn build_env(
    biclusters: &[BiclusterRecord],
    n: usize,
    reward: RewardKind,
) -> Result<GridEnv, PipelineError> {
    // Jaccard distances and areas are id-agnostic, so raw ids serve as indices.
    let as_indices: Vec<Bicluster> = biclusters
        .iter()
        .map(BiclusterRecord::to_bicluster)
        .collect();
    let assignment = map_to_grid(&as_indices, n)?;
    let mut states = vec![GridState::default(); n * n];
    for (b, cell) in biclusters.iter().zip(&assignment.cell_of) {
        states[cell.index(n)] = GridState::new(b.users.clone(), b.items.clone());
    }
    Ok(GridEnv::new(n, states, reward)?)
}

pub fn run_repro(
    records: &[RatingRecord],
    config: &ReproConfig,
) -> Result<ReproOutput, PipelineError> {
    let (train_records, split) = prepare_split(records, config)?;
    let matrix = &split.train;
    log::info!(
        "train matrix {} users x {} items, {} test users",
        matrix.n_users(),
        matrix.n_items(),
        split.test_users.len()
    );

    let pool = enumerate_grid(
        matrix,
        config.algorithm,
        &config.min_rows,
        &config.min_cols,
        config.max_enumerate,
    )?;
    let cells = config.n * config.n;
    let sample_seed = config.stage_seed(seed_offset::SAMPLE);
    let sampled = sample_biclusters(&pool, cells, sample_seed)?;
    log::info!("sampled {cells} of {} biclusters", pool.len());
    let run_params = BiclusterRunParams {
        algorithm: config.algorithm,
        min_rows: config.min_rows.clone(),
        min_cols: config.min_cols.clone(),
        max_enumerate: config.max_enumerate,
        seed: sample_seed,
        sampled: Some(cells),
        pool_size: pool.len(),
    };
    let biclusters = biclusters_doc(run_params, &sampled, matrix);

    let env = build_env(&biclusters.biclusters, config.n, RewardKind::Similarity)?;
    let popularity = popularity_of(matrix);
    let grid = GridDoc::new(&env, &popularity);

    let train_config = TrainConfig {
        seed: config.stage_seed(seed_offset::TRAIN),
        ..config.train
    };
    let (q, curve) = train(&env, &train_config)?;
    let seeds = BTreeMap::from([
        ("master".to_string(), config.seed),
        ("split".to_string(), config.stage_seed(seed_offset::SPLIT)),
        (
            "cold_start".to_string(),
            config.stage_seed(seed_offset::COLD_START),
        ),
        ("sample".to_string(), sample_seed),
        ("train".to_string(), train_config.seed),
        ("eval".to_string(), config.stage_seed(seed_offset::EVAL)),
    ]);
    let model = GridModel::new(env, q, train_config, seeds, popularity);

    let eval_config = EvalConfig {
        seed: config.stage_seed(seed_offset::EVAL),
        ..config.eval
    };
    let report = evaluate_cold_start(&config.dataset, &split, &model, &eval_config)?;
    let split_doc = SplitDoc::new(
        config.stage_seed(seed_offset::SPLIT),
        config.binarization,
        config.keep_fraction,
        &train_records,
        &split,
    );
    Ok(ReproOutput {
        split: split_doc,
        biclusters,
        grid,
        model,
        curve,
        report,
    })
}
