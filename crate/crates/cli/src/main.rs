use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use gridrec_core::bicluster::{enumerate_grid, sample_biclusters, Algorithm, BiclusterParams};
use gridrec_core::evaluation::{evaluate_cold_start, EvalConfig, EvalReport};
use gridrec_core::ingest::{
    binarize, make_cold_start, parse_movielens_100k, parse_movielens_1m, split_train_test,
    Binarization, BinarizeOp, RatingRecord,
};
use gridrec_core::mdp_env::RewardKind;
use gridrec_core::online_update::RetrainSchedule;
use gridrec_core::persistence::{
    biclusters_doc, load_model, read_doc, save_curve, save_model, write_json, BiclusterRunParams,
    BiclustersDoc, GridDoc, GridModel, SplitDoc,
};
use gridrec_core::pipeline::{build_env, run_repro, ReproConfig};
use gridrec_core::recommender::{walk_and_recommend, RecommendationRequest};
use gridrec_core::rl_trainer::{train, TdAlgorithm, TrainConfig};

type Result<T> = std::result::Result<T, Box<dyn std::error::Error>>;

/// Writes to stdout; a closed pipe (`gridrec ... | head`) is not an error.
fn emit(text: &str) -> io::Result<()> {
    match io::stdout().lock().write_all(text.as_bytes()) {
        Err(e) if e.kind() == io::ErrorKind::BrokenPipe => Ok(()),
        r => r,
    }
}

macro_rules! outln {
    ($($arg:tt)*) => {
        emit(&format!("{}\n", format_args!($($arg)*)))?
    };
}

/// Grid-based recommender pipeline.
#[derive(Parser)]
#[command(name = "gridrec", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse ratings, binarize, and write a seeded train/cold-start split.
    Ingest(IngestArgs),
    /// Enumerate biclusters of the training matrix, optionally sampling n² of them.
    Bicluster(BiclusterArgs),
    /// Lay n² biclusters out on an n×n grid.
    Map(MapArgs),
    /// Train a Q-table on a grid.
    Train(TrainArgs),
    /// Recommend items for a profile with a trained model.
    Recommend(RecommendArgs),
    /// Cold-start P@N / R@N of the model against the baselines.
    Evaluate(EvaluateArgs),
    /// Serve the model over HTTP.
    Serve(ServeArgs),
    /// Run the whole pipeline on a MovieLens dataset with fixed seeds.
    Repro(ReproArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    #[value(name = "ml-100k")]
    Ml100k,
    #[value(name = "ml-1m")]
    Ml1m,
}

#[derive(Clone, Copy, ValueEnum)]
enum Op {
    Ge,
    Gt,
}

#[derive(Clone, Copy, ValueEnum)]
enum BiclusterAlg {
    Bimax,
    Bibit,
}

impl From<BiclusterAlg> for Algorithm {
    fn from(a: BiclusterAlg) -> Self {
        match a {
            BiclusterAlg::Bimax => Algorithm::Bimax,
            BiclusterAlg::Bibit => Algorithm::Bibit,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum TdAlg {
    Q,
    Sarsa,
}

impl From<TdAlg> for TdAlgorithm {
    fn from(a: TdAlg) -> Self {
        match a {
            TdAlg::Q => TdAlgorithm::QLearning,
            TdAlg::Sarsa => TdAlgorithm::Sarsa,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Reward {
    Similarity,
    Distance,
}

impl From<Reward> for RewardKind {
    fn from(r: Reward) -> Self {
        match r {
            Reward::Similarity => RewardKind::Similarity,
            Reward::Distance => RewardKind::Distance,
        }
    }
}

#[derive(Args)]
struct BinarizeArgs {
    /// Ratings at (or above, with `gt`) this value are positive.
    #[arg(long, default_value_t = 3)]
    threshold: u8,
    #[arg(long, value_enum, default_value = "ge")]
    op: Op,
}

impl BinarizeArgs {
    fn binarization(&self) -> Result<Binarization> {
        let op = match self.op {
            Op::Ge => BinarizeOp::Ge,
            Op::Gt => BinarizeOp::Gt,
        };
        Ok(Binarization::new(self.threshold, op)?)
    }
}

#[derive(Args)]
struct IngestArgs {
    /// Ratings file (`u.data` or `ratings.dat`).
    #[arg(long)]
    ratings: PathBuf,
    #[arg(long, value_enum, default_value = "ml-100k")]
    format: Format,
    #[command(flatten)]
    binarize: BinarizeArgs,
    /// Fraction of each user's ratings kept for training.
    #[arg(long, default_value_t = 0.8)]
    train_fraction: f64,
    /// Fraction of a test user's positives left observed.
    #[arg(long, default_value_t = 0.1)]
    keep_fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "split.json")]
    out: PathBuf,
}

#[derive(Args)]
struct BiclusterArgs {
    #[arg(long)]
    split: PathBuf,
    #[arg(long, value_enum, default_value = "bibit")]
    algorithm: BiclusterAlg,
    /// Minimum user counts; the union over all combinations is kept.
    #[arg(long, value_delimiter = ',', default_value = "2,4,8")]
    min_rows: Vec<usize>,
    /// Minimum item counts; the union over all combinations is kept.
    #[arg(long, value_delimiter = ',', default_value = "2,4,8")]
    min_cols: Vec<usize>,
    /// Per-combination enumeration cap.
    #[arg(long, default_value_t = BiclusterParams::DEFAULT_MAX_ENUMERATE)]
    max_enumerate: usize,
    /// Sample n² biclusters from the pool; without it the whole pool is written.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "biclusters.json")]
    out: PathBuf,
}

#[derive(Args)]
struct MapArgs {
    /// Bicluster file holding exactly n² biclusters.
    #[arg(long)]
    biclusters: PathBuf,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value = "grid.json")]
    out: PathBuf,
}

#[derive(Args)]
struct TrainParams {
    #[arg(long, value_enum, default_value = "q")]
    algorithm: TdAlg,
    #[arg(long, default_value_t = 0.1)]
    alpha: f64,
    #[arg(long, default_value_t = 0.9)]
    gamma: f64,
    #[arg(long, default_value_t = 0.1)]
    epsilon: f64,
    #[arg(long, default_value_t = 10_000)]
    episodes: usize,
    /// Steps per episode.
    #[arg(long, default_value_t = 50)]
    horizon: usize,
    /// Moving-average window of the learning curve.
    #[arg(long, default_value_t = 100)]
    window: usize,
}

impl TrainParams {
    fn config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            algorithm: self.algorithm.into(),
            alpha: self.alpha,
            gamma: self.gamma,
            epsilon: self.epsilon,
            episodes: self.episodes,
            horizon: self.horizon,
            seed,
            window: self.window,
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    grid: PathBuf,
    #[command(flatten)]
    params: TrainParams,
    #[arg(long, value_enum, default_value = "similarity")]
    reward: Reward,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "model.json")]
    out: PathBuf,
    /// Learning curve CSV.
    #[arg(long)]
    curve: Option<PathBuf>,
}

#[derive(Args)]
struct WalkArgs {
    /// Number of start states.
    #[arg(long, default_value_t = RecommendationRequest::DEFAULT_K)]
    k: usize,
    /// Exploration rate of the recommendation walk.
    #[arg(long, default_value_t = RecommendationRequest::DEFAULT_EPSILON)]
    walk_epsilon: f64,
    #[arg(long, default_value_t = RecommendationRequest::DEFAULT_MAX_STEPS)]
    max_steps: usize,
}

#[derive(Args)]
struct RecommendArgs {
    #[arg(long)]
    model: PathBuf,
    /// Comma-separated item ids the user likes.
    #[arg(long, value_delimiter = ',', required = true)]
    profile: Vec<u32>,
    #[arg(long, default_value_t = 10)]
    n: usize,
    #[command(flatten)]
    walk: WalkArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    split: PathBuf,
    /// List length N.
    #[arg(long, default_value_t = 30)]
    top_n: usize,
    #[command(flatten)]
    walk: WalkArgs,
    /// User-based neighborhood size.
    #[arg(long, default_value_t = 50)]
    neighbors: usize,
    /// Item-based: similar items kept per profile item (all when omitted).
    #[arg(long)]
    similar_cap: Option<usize>,
    #[arg(long, default_value = "dataset")]
    dataset: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "report.json")]
    out: PathBuf,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    bind: String,
    /// Feedback log; defaults to `<model>.feedback.jsonl`.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Save the model after this many feedback events (0 disables).
    #[arg(long, default_value_t = 100)]
    snapshot_every: u64,
    /// Retrain after this many feedback events (0 disables).
    #[arg(long, default_value_t = RetrainSchedule::default().every)]
    retrain_every: u64,
    #[arg(long, default_value_t = RetrainSchedule::default().episodes)]
    retrain_episodes: usize,
}

#[derive(Args)]
struct ReproArgs {
    #[arg(long, value_enum, default_value = "ml-100k")]
    dataset: Format,
    /// Ratings file; defaults to data/ml-100k/u.data or data/ml-1m/ratings.dat.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Grid side; 20 for ml-100k, 30 for ml-1m.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Independent runs averaged into the report, seeded seed, seed+1000, ...
    #[arg(long, default_value_t = 1)]
    runs: u64,
    #[arg(long, default_value_t = 30)]
    top_n: usize,
    #[arg(long, value_enum, default_value = "bibit")]
    bicluster: BiclusterAlg,
    #[command(flatten)]
    train: TrainParams,
    #[arg(long, default_value = "repro-out")]
    out_dir: PathBuf,
}

fn read_ratings(path: &Path, format: Format) -> Result<Vec<RatingRecord>> {
    Ok(match format {
        Format::Ml100k => parse_movielens_100k(path)?,
        Format::Ml1m => parse_movielens_1m(path)?,
    })
}

fn ingest(args: IngestArgs) -> Result<()> {
    let records = read_ratings(&args.ratings, args.format)?;
    let binarization = args.binarize.binarization()?;
    let tt = split_train_test(&records, args.train_fraction, args.seed)?;
    let train = binarize(&tt.train, binarization)?;
    let split = make_cold_start(
        train,
        &tt.test,
        args.keep_fraction,
        binarization,
        args.seed.wrapping_add(1),
    )?;
    outln!(
        "{} ratings; train {} users x {} items; {} cold-start users ({} dropped)",
        records.len(),
        split.train.n_users(),
        split.train.n_items(),
        split.test_users.len(),
        split.dropped_users.len()
    );
    let doc = SplitDoc::new(
        args.seed,
        binarization,
        args.keep_fraction,
        &tt.train,
        &split,
    );
    write_json(&args.out, &doc)?;
    Ok(())
}

fn bicluster(args: BiclusterArgs) -> Result<()> {
    let split: SplitDoc = read_doc(&args.split)?;
    let matrix = split.into_split()?.train;
    let algorithm = args.algorithm.into();
    let pool = enumerate_grid(
        &matrix,
        algorithm,
        &args.min_rows,
        &args.min_cols,
        args.max_enumerate,
    )?;
    let chosen = match args.n {
        Some(n) => sample_biclusters(&pool, n * n, args.seed)?,
        None => pool.clone(),
    };
    outln!("{} biclusters found, {} written", pool.len(), chosen.len());
    let params = BiclusterRunParams {
        algorithm,
        min_rows: args.min_rows,
        min_cols: args.min_cols,
        max_enumerate: args.max_enumerate,
        seed: args.seed,
        sampled: args.n.map(|n| n * n),
        pool_size: pool.len(),
    };
    write_json(&args.out, &biclusters_doc(params, &chosen, &matrix))?;
    Ok(())
}

fn map(args: MapArgs) -> Result<()> {
    let doc: BiclustersDoc = read_doc(&args.biclusters)?;
    let popularity = doc.popularity()?;
    let env = build_env(&doc.biclusters, args.n, RewardKind::Similarity)?;
    write_json(&args.out, &GridDoc::new(&env, &popularity))?;
    outln!(
        "mapped {} biclusters onto a {}x{} grid",
        doc.biclusters.len(),
        args.n,
        args.n
    );
    Ok(())
}

fn train_cmd(args: TrainArgs) -> Result<()> {
    let grid: GridDoc = read_doc(&args.grid)?;
    let (env, popularity) = grid.into_env(args.reward.into())?;
    let config = args.params.config(args.seed);
    let (q, curve) = train(&env, &config)?;
    outln!(
        "trained {} episodes; final window average return {:.4}",
        config.episodes,
        curve.final_window_avg()
    );
    let seeds = [("train".to_string(), args.seed)].into_iter().collect();
    let model = GridModel::new(env, q, config, seeds, popularity);
    save_model(&model, &args.out)?;
    if let Some(path) = args.curve {
        save_curve(&curve, path)?;
    }
    Ok(())
}

fn recommend(args: RecommendArgs) -> Result<()> {
    let model = load_model(&args.model)?;
    let request = RecommendationRequest {
        profile: args.profile,
        n: args.n,
        k: args.walk.k,
        epsilon: args.walk.walk_epsilon,
        max_steps: args.walk.max_steps,
        seed: args.seed,
    };
    let rec = walk_and_recommend(&model, &request)?;
    outln!("{}", serde_json::to_string_pretty(&rec)?);
    Ok(())
}

fn evaluate(args: EvaluateArgs) -> Result<()> {
    let model = load_model(&args.model)?;
    let split: SplitDoc = read_doc(&args.split)?;
    let split = split.into_split()?;
    let config = EvalConfig {
        n: args.top_n,
        k: args.walk.k,
        epsilon: args.walk.walk_epsilon,
        max_steps: args.walk.max_steps,
        seed: args.seed,
        neighbors: args.neighbors,
        similar_cap: args.similar_cap,
    };
    let report = evaluate_cold_start(&args.dataset, &split, &model, &config)?;
    emit(&report.to_table())?;
    write_json(&args.out, &report)?;
    Ok(())
}

fn serve(args: ServeArgs) -> Result<()> {
    let log = args
        .log
        .unwrap_or_else(|| args.model.with_extension("feedback.jsonl"));
    let config = gridrec_service::ServiceConfig {
        model_path: args.model,
        log_path: log,
        snapshot_every: args.snapshot_every,
        retrain: RetrainSchedule {
            every: args.retrain_every,
            episodes: args.retrain_episodes,
        },
    };
    gridrec_service::serve_blocking(config, &args.bind)?;
    Ok(())
}

fn repro(args: ReproArgs) -> Result<()> {
    let (name, default_path) = match args.dataset {
        Format::Ml100k => ("ml-100k", "data/ml-100k/u.data"),
        Format::Ml1m => ("ml-1m", "data/ml-1m/ratings.dat"),
    };
    let path = args
        .data
        .clone()
        .unwrap_or_else(|| PathBuf::from(default_path));
    let records = read_ratings(&path, args.dataset)?;
    if args.runs == 0 {
        return Err("--runs must be at least 1".into());
    }
    let mut reports = Vec::new();
    std::fs::create_dir_all(&args.out_dir)?;
    for run in 0..args.runs {
        let mut config = ReproConfig::new(name, args.seed.wrapping_add(1000 * run));
        if let Some(n) = args.n {
            config.n = n;
        }
        config.algorithm = args.bicluster.into();
        config.train = args.train.config(0);
        config.eval.n = args.top_n;
        let out = run_repro(&records, &config)?;
        if run == 0 {
            let dir = &args.out_dir;
            write_json(dir.join("split.json"), &out.split)?;
            write_json(dir.join("biclusters.json"), &out.biclusters)?;
            write_json(dir.join("grid.json"), &out.grid)?;
            save_model(&out.model, dir.join("model.json"))?;
            save_curve(&out.curve, dir.join("curve.csv"))?;
        }
        reports.push(out.report);
    }
    let report = EvalReport::average(&reports)?;
    emit(&report.to_table())?;
    write_json(args.out_dir.join("report.json"), &report)?;
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Ingest(a) => ingest(a),
        Command::Bicluster(a) => bicluster(a),
        Command::Map(a) => map(a),
        Command::Train(a) => train_cmd(a),
        Command::Recommend(a) => recommend(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Serve(a) => serve(a),
        Command::Repro(a) => repro(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
