//! Versioned JSON documents for every pipeline artifact, and the
//! [`GridModel`] they describe.
//!
//! All JSON is written canonically: object keys sorted, floats with 17
//! significant digits, so identical artifacts are byte-identical files.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::bicluster::{Algorithm, Bicluster};
use crate::ingest::{
    binarize, Binarization, BinaryMatrix, ColdStartSplit, IngestError, RatingRecord, TestUser,
};
use crate::mdp_env::{Action, Cell, EnvError, GridEnv, GridState, RewardKind};
use crate::rl_trainer::{LearningCurve, QTable, TrainConfig};

pub const SCHEMA_VERSION: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelInvariant {
    JsonSyntax,
    SchemaVersion,
    Schema,
    GridSize,
    CellCount,
    CellBounds,
    DuplicateCell,
    EmptyUserSet,
    EmptyItemSet,
    UnsortedIds,
    QShape,
    QMask,
    QFinite,
    QRange,
    TrainConfig,
    Popularity,
}

impl ModelInvariant {
    pub fn name(self) -> &'static str {
        match self {
            Self::JsonSyntax => "json_syntax",
            Self::SchemaVersion => "schema_version",
            Self::Schema => "schema",
            Self::GridSize => "grid_size",
            Self::CellCount => "cell_count",
            Self::CellBounds => "cell_bounds",
            Self::DuplicateCell => "duplicate_cell",
            Self::EmptyUserSet => "empty_user_set",
            Self::EmptyItemSet => "empty_item_set",
            Self::UnsortedIds => "unsorted_ids",
            Self::QShape => "q_shape",
            Self::QMask => "q_mask",
            Self::QFinite => "q_finite",
            Self::QRange => "q_range",
            Self::TrainConfig => "train_config",
            Self::Popularity => "popularity",
        }
    }
}

impl fmt::Display for ModelInvariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error)]
pub enum PersistError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invariant `{invariant}` violated: {detail}")]
    Invariant {
        invariant: ModelInvariant,
        detail: String,
    },
    #[error(transparent)]
    Ingest(#[from] IngestError),
}

impl PersistError {
    fn invariant(invariant: ModelInvariant, detail: impl Into<String>) -> Self {
        Self::Invariant {
            invariant,
            detail: detail.into(),
        }
    }

    /// The violated invariant, if this is a validation failure.
    pub fn violated(&self) -> Option<ModelInvariant> {
        match self {
            Self::Invariant { invariant, .. } => Some(*invariant),
            _ => None,
        }
    }
}

// ---------------------------------------------------------------------------
// Canonical JSON

/// Serializes with sorted keys and 17-significant-digit floats.
pub fn to_canonical_json<T: Serialize>(value: &T) -> Result<String, PersistError> {
    let value = serde_json::to_value(value)?;
    let mut out = String::new();
    write_value(&value, &mut out);
    out.push('\n');
    Ok(out)
}

fn write_value(value: &Value, out: &mut String) {
    match value {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(num) => {
            if let Some(u) = num.as_u64() {
                write!(out, "{u}").unwrap();
            } else if let Some(i) = num.as_i64() {
                write!(out, "{i}").unwrap();
            } else {
                let f = num.as_f64().expect("JSON numbers are u64, i64 or f64");
                write!(out, "{f:.16e}").unwrap();
            }
        }
        Value::String(s) => out.push_str(&serde_json::to_string(s).expect("strings serialize")),
        Value::Array(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_value(item, out);
            }
            out.push(']');
        }
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push('{');
            for (i, key) in keys.into_iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&serde_json::to_string(key).expect("strings serialize"));
                out.push(':');
                write_value(&map[key], out);
            }
            out.push('}');
        }
    }
}

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<(), PersistError> {
    let path = path.as_ref();
    let text = to_canonical_json(value)?;
    fs::write(path, text).map_err(|source| PersistError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn read_text(path: &Path) -> Result<String, PersistError> {
    fs::read_to_string(path).map_err(|source| PersistError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Parses a versioned document, rejecting unknown versions before decoding.
pub fn read_versioned<T: DeserializeOwned>(text: &str) -> Result<T, PersistError> {
    let value: Value = serde_json::from_str(text)
        .map_err(|e| PersistError::invariant(ModelInvariant::JsonSyntax, e.to_string()))?;
    check_version(&value)?;
    serde_json::from_value(value)
        .map_err(|e| PersistError::invariant(ModelInvariant::Schema, e.to_string()))
}

fn check_version(value: &Value) -> Result<(), PersistError> {
    match value.get("version").and_then(Value::as_u64) {
        Some(SCHEMA_VERSION) => Ok(()),
        Some(v) => Err(PersistError::invariant(
            ModelInvariant::SchemaVersion,
            format!("unsupported version {v}, expected {SCHEMA_VERSION}"),
        )),
        None => Err(PersistError::invariant(
            ModelInvariant::SchemaVersion,
            "missing or non-integer `version`",
        )),
    }
}

// ---------------------------------------------------------------------------
// Model

/// The persistent artifact: grid states, Q-table, training settings and the
/// item popularity used to order recommendations within a cell.
#[derive(Debug, Clone, PartialEq)]
pub struct GridModel {
    env: GridEnv,
    pub q: QTable,
    pub train_config: TrainConfig,
    pub seeds: BTreeMap<String, u64>,
    /// Sequence number of the last feedback event applied.
    pub feedback_seq: u64,
    popularity: BTreeMap<u32, u32>,
    ranked_items: Vec<Vec<u32>>,
}

impl GridModel {
    pub fn new(
        env: GridEnv,
        q: QTable,
        train_config: TrainConfig,
        seeds: BTreeMap<String, u64>,
        popularity: BTreeMap<u32, u32>,
    ) -> Self {
        assert_eq!(env.n(), q.n(), "Q-table and grid disagree on n");
        let ranked_items = env
            .states()
            .iter()
            .map(|s| rank_by_popularity(&s.items, &popularity))
            .collect();
        Self {
            env,
            q,
            train_config,
            seeds,
            feedback_seq: 0,
            popularity,
            ranked_items,
        }
    }

    pub fn n(&self) -> usize {
        self.env.n()
    }

    pub fn env(&self) -> &GridEnv {
        &self.env
    }

    pub fn state(&self, cell: Cell) -> Result<&GridState, EnvError> {
        self.env.state(cell)
    }

    /// Inserts a user into a cell's user set; item sets never change.
    pub fn add_user(&mut self, cell: Cell, user: u32) -> Result<bool, EnvError> {
        Ok(self.env.state_mut(cell)?.add_user(user))
    }

    pub fn popularity(&self) -> &BTreeMap<u32, u32> {
        &self.popularity
    }

    pub fn item_popularity(&self, item: u32) -> u32 {
        self.popularity.get(&item).copied().unwrap_or(0)
    }

    /// A cell's items by descending training popularity, then ascending id.
    pub fn ranked_items(&self, cell: Cell) -> &[u32] {
        &self.ranked_items[cell.index(self.n())]
    }

    /// Mutable pieces needed by incremental retraining.
    pub(crate) fn env_and_q(&mut self) -> (&GridEnv, &mut QTable) {
        (&self.env, &mut self.q)
    }

    pub fn to_doc(&self) -> ModelDoc {
        let n = self.n();
        ModelDoc {
            version: SCHEMA_VERSION,
            n,
            cells: cell_records(&self.env),
            q: QDoc {
                shape: vec![n, n, 4],
                values: self
                    .q
                    .values()
                    .iter()
                    .map(|&v| {
                        if v.is_finite() {
                            Value::from(v)
                        } else {
                            Value::Null
                        }
                    })
                    .collect(),
            },
            train_config: self.train_config,
            reward: self.env.reward_kind(),
            seeds: self.seeds.clone(),
            feedback_seq: self.feedback_seq,
            item_popularity: popularity_pairs(&self.popularity),
        }
    }

    /// Validates every invariant and rebuilds the model.
    pub fn from_doc(doc: ModelDoc) -> Result<Self, PersistError> {
        use ModelInvariant as I;
        let n = doc.n;
        if n < 2 {
            return Err(PersistError::invariant(
                I::GridSize,
                format!("n = {n}, need n >= 2"),
            ));
        }
        let states = validate_cells(n, &doc.cells)?;

        if doc.q.shape != [n, n, 4] {
            return Err(PersistError::invariant(
                I::QShape,
                format!("declared shape {:?}, expected [{n}, {n}, 4]", doc.q.shape),
            ));
        }
        if doc.q.values.len() != n * n * 4 {
            return Err(PersistError::invariant(
                I::QShape,
                format!("{} values, expected {}", doc.q.values.len(), n * n * 4),
            ));
        }
        doc.train_config
            .validate()
            .map_err(|e| PersistError::invariant(I::TrainConfig, e.to_string()))?;
        let upper = if doc.train_config.gamma < 1.0 {
            1.0 / (1.0 - doc.train_config.gamma)
        } else {
            f64::INFINITY
        };
        let mut values = Vec::with_capacity(n * n * 4);
        for (idx, raw) in doc.q.values.iter().enumerate() {
            let cell = Cell::from_index(idx / 4, n);
            let action = Action::ALL[idx % 4];
            let valid = action.apply(cell, n).is_some();
            let at = || format!("cell ({}, {}) action {action:?}", cell.row, cell.col);
            let value = match raw {
                Value::Null if !valid => f64::NEG_INFINITY,
                Value::Null => {
                    return Err(PersistError::invariant(
                        I::QMask,
                        format!("{} is null but valid", at()),
                    ))
                }
                _ if !valid => {
                    return Err(PersistError::invariant(
                        I::QMask,
                        format!("{} leaves the grid but has a value", at()),
                    ))
                }
                Value::Number(num) => num.as_f64().expect("JSON numbers convert to f64"),
                Value::String(s) => match s.trim().parse::<f64>() {
                    Ok(v) if !v.is_finite() => {
                        return Err(PersistError::invariant(
                            I::QFinite,
                            format!("{} is {s}", at()),
                        ))
                    }
                    _ => {
                        return Err(PersistError::invariant(
                            I::Schema,
                            format!("{} is a string", at()),
                        ))
                    }
                },
                other => {
                    return Err(PersistError::invariant(
                        I::Schema,
                        format!("{} is {other}", at()),
                    ))
                }
            };
            if valid && !value.is_finite() {
                return Err(PersistError::invariant(
                    I::QFinite,
                    format!("{} is {value}", at()),
                ));
            }
            if valid && !(-1e-9..=upper + 1e-9).contains(&value) {
                return Err(PersistError::invariant(
                    I::QRange,
                    format!("{} = {value} outside [0, {upper}]", at()),
                ));
            }
            values.push(value);
        }
        let popularity = popularity_map(&doc.item_popularity)?;
        let env = GridEnv::new(n, states, doc.reward)
            .map_err(|e| PersistError::invariant(I::Schema, e.to_string()))?;
        let mut model = Self::new(
            env,
            QTable::from_values(n, values),
            doc.train_config,
            doc.seeds,
            popularity,
        );
        model.feedback_seq = doc.feedback_seq;
        Ok(model)
    }
}

fn rank_by_popularity(items: &[u32], popularity: &BTreeMap<u32, u32>) -> Vec<u32> {
    let mut ranked = items.to_vec();
    ranked.sort_by_key(|i| {
        (
            std::cmp::Reverse(popularity.get(i).copied().unwrap_or(0)),
            *i,
        )
    });
    ranked
}

fn cell_records(env: &GridEnv) -> Vec<CellRecord> {
    env.cells()
        .map(|cell| {
            let s = env.state(cell).expect("iterating in-bounds cells");
            CellRecord {
                row: cell.row,
                col: cell.col,
                users: s.users.clone(),
                items: s.items.clone(),
            }
        })
        .collect()
}

fn validate_cells(n: usize, cells: &[CellRecord]) -> Result<Vec<GridState>, PersistError> {
    use ModelInvariant as I;
    if cells.len() != n * n {
        return Err(PersistError::invariant(
            I::CellCount,
            format!("{} cells, expected {}", cells.len(), n * n),
        ));
    }
    let mut slots: Vec<Option<GridState>> = vec![None; n * n];
    for c in cells {
        if c.row >= n || c.col >= n {
            return Err(PersistError::invariant(
                I::CellBounds,
                format!("cell ({}, {}) outside {n}x{n}", c.row, c.col),
            ));
        }
        let at = format!("cell ({}, {})", c.row, c.col);
        if c.users.is_empty() {
            return Err(PersistError::invariant(I::EmptyUserSet, at));
        }
        if c.items.is_empty() {
            return Err(PersistError::invariant(I::EmptyItemSet, at));
        }
        if !c.users.windows(2).all(|w| w[0] < w[1]) || !c.items.windows(2).all(|w| w[0] < w[1]) {
            return Err(PersistError::invariant(
                I::UnsortedIds,
                format!("{at} ids not strictly ascending"),
            ));
        }
        let slot = &mut slots[c.row * n + c.col];
        if slot.is_some() {
            return Err(PersistError::invariant(I::DuplicateCell, at));
        }
        *slot = Some(GridState {
            users: c.users.clone(),
            items: c.items.clone(),
        });
    }
    Ok(slots
        .into_iter()
        .map(|s| s.expect("count and uniqueness imply coverage"))
        .collect())
}

fn popularity_pairs(popularity: &BTreeMap<u32, u32>) -> Vec<[u32; 2]> {
    popularity.iter().map(|(&i, &c)| [i, c]).collect()
}

fn popularity_map(pairs: &[[u32; 2]]) -> Result<BTreeMap<u32, u32>, PersistError> {
    let mut map = BTreeMap::new();
    for &[item, count] in pairs {
        if map.insert(item, count).is_some() {
            return Err(PersistError::invariant(
                ModelInvariant::Popularity,
                format!("item {item} listed twice"),
            ));
        }
    }
    Ok(map)
}

/// Positive counts per raw item id.
pub fn popularity_of(matrix: &BinaryMatrix) -> BTreeMap<u32, u32> {
    matrix
        .item_ids()
        .iter()
        .zip(matrix.item_popularity())
        .map(|(&id, c)| (id, c as u32))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub row: usize,
    pub col: usize,
    pub users: Vec<u32>,
    pub items: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QDoc {
    pub shape: Vec<usize>,
    /// Row-major `(row, col, action)`; `null` for moves that leave the grid.
    pub values: Vec<Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDoc {
    pub version: u64,
    pub n: usize,
    pub cells: Vec<CellRecord>,
    pub q: QDoc,
    pub train_config: TrainConfig,
    pub reward: RewardKind,
    pub seeds: BTreeMap<String, u64>,
    pub feedback_seq: u64,
    pub item_popularity: Vec<[u32; 2]>,
}

pub fn model_to_json(model: &GridModel) -> Result<String, PersistError> {
    to_canonical_json(&model.to_doc())
}

pub fn model_from_json(text: &str) -> Result<GridModel, PersistError> {
    GridModel::from_doc(read_versioned(text)?)
}

pub fn save_model(model: &GridModel, path: impl AsRef<Path>) -> Result<(), PersistError> {
    write_json(path, &model.to_doc())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<GridModel, PersistError> {
    model_from_json(&read_text(path.as_ref())?)
}

// ---------------------------------------------------------------------------
// Biclusters and grids

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BiclusterRecord {
    pub users: Vec<u32>,
    pub items: Vec<u32>,
}

impl BiclusterRecord {
    pub fn from_bicluster(b: &Bicluster, matrix: &BinaryMatrix) -> Self {
        Self {
            users: b.users.iter().map(|&u| matrix.user_ids()[u]).collect(),
            items: b.items.iter().map(|&i| matrix.item_ids()[i]).collect(),
        }
    }

    /// Dense-index bicluster over a synthetic index space of the record's own ids.
    pub fn to_bicluster(&self) -> Bicluster {
        Bicluster::new(
            self.users.iter().map(|&u| u as usize).collect(),
            self.items.iter().map(|&i| i as usize).collect(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiclusterRunParams {
    pub algorithm: Algorithm,
    pub min_rows: Vec<usize>,
    pub min_cols: Vec<usize>,
    pub max_enumerate: usize,
    pub seed: u64,
    /// Number sampled, when the file holds a sample rather than the full pool.
    pub sampled: Option<usize>,
    /// Size of the pool the sample was drawn from.
    pub pool_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiclustersDoc {
    pub version: u64,
    pub params: BiclusterRunParams,
    pub item_popularity: Vec<[u32; 2]>,
    pub biclusters: Vec<BiclusterRecord>,
}

impl BiclustersDoc {
    pub fn popularity(&self) -> Result<BTreeMap<u32, u32>, PersistError> {
        popularity_map(&self.item_popularity)
    }
}

pub fn biclusters_doc(
    params: BiclusterRunParams,
    biclusters: &[Bicluster],
    matrix: &BinaryMatrix,
) -> BiclustersDoc {
    BiclustersDoc {
        version: SCHEMA_VERSION,
        params,
        item_popularity: popularity_pairs(&popularity_of(matrix)),
        biclusters: biclusters
            .iter()
            .map(|b| BiclusterRecord::from_bicluster(b, matrix))
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridDoc {
    pub version: u64,
    pub n: usize,
    pub cells: Vec<CellRecord>,
    pub item_popularity: Vec<[u32; 2]>,
}

impl GridDoc {
    pub fn new(env: &GridEnv, popularity: &BTreeMap<u32, u32>) -> Self {
        Self {
            version: SCHEMA_VERSION,
            n: env.n(),
            cells: cell_records(env),
            item_popularity: popularity_pairs(popularity),
        }
    }

    pub fn into_env(
        self,
        reward: RewardKind,
    ) -> Result<(GridEnv, BTreeMap<u32, u32>), PersistError> {
        if self.n < 2 {
            return Err(PersistError::invariant(
                ModelInvariant::GridSize,
                format!("n = {}", self.n),
            ));
        }
        let states = validate_cells(self.n, &self.cells)?;
        let env = GridEnv::new(self.n, states, reward)
            .map_err(|e| PersistError::invariant(ModelInvariant::Schema, e.to_string()))?;
        Ok((env, popularity_map(&self.item_popularity)?))
    }
}

// ---------------------------------------------------------------------------
// Splits

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitDoc {
    pub version: u64,
    pub seed: u64,
    pub binarization: Binarization,
    pub keep_fraction: f64,
    /// Training ratings as `[user, item, rating, timestamp]`.
    pub train: Vec<(u32, u32, u8, i64)>,
    pub test: Vec<TestUser>,
    pub dropped: Vec<u32>,
}

impl SplitDoc {
    pub fn new(
        seed: u64,
        binarization: Binarization,
        keep_fraction: f64,
        train: &[RatingRecord],
        split: &ColdStartSplit,
    ) -> Self {
        Self {
            version: SCHEMA_VERSION,
            seed,
            binarization,
            keep_fraction,
            train: train
                .iter()
                .map(|r| (r.user_id, r.item_id, r.rating, r.timestamp))
                .collect(),
            test: split.test_users.clone(),
            dropped: split.dropped_users.clone(),
        }
    }

    pub fn train_records(&self) -> Vec<RatingRecord> {
        self.train
            .iter()
            .map(|&(user_id, item_id, rating, timestamp)| RatingRecord {
                user_id,
                item_id,
                rating,
                timestamp,
            })
            .collect()
    }

    pub fn into_split(self) -> Result<ColdStartSplit, PersistError> {
        let train = binarize(&self.train_records(), self.binarization)?;
        Ok(ColdStartSplit {
            train,
            test_users: self.test,
            dropped_users: self.dropped,
        })
    }
}

pub fn read_doc<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T, PersistError> {
    read_versioned(&read_text(path.as_ref())?)
}

// ---------------------------------------------------------------------------
// Curves

/// `episode,return,window_avg` with 1-based episode numbers.
pub fn curve_to_csv(curve: &LearningCurve) -> String {
    let mut out = String::from("episode,return,window_avg\n");
    for (i, (r, w)) in curve.returns.iter().zip(curve.window_avg()).enumerate() {
        writeln!(out, "{},{:.16e},{:.16e}", i + 1, r, w).unwrap();
    }
    out
}

pub fn save_curve(curve: &LearningCurve, path: impl AsRef<Path>) -> Result<(), PersistError> {
    let path = path.as_ref();
    fs::write(path, curve_to_csv(curve)).map_err(|source| PersistError::Io {
        path: path.display().to_string(),
        source,
    })
}
