//! MovieLens parsing, binarization and the train/test/cold-start splits.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bits::BitSet;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("no records")]
    NoRecords,
    #[error("line {line}: malformed record: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("line {line}: rating {rating} outside [1,5]")]
    RatingOutOfRange { line: usize, rating: i64 },
    #[error("threshold {0} outside [1,5]")]
    BadThreshold(u8),
    #[error("fraction {0} must lie strictly between 0 and 1")]
    BadFraction(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RatingRecord {
    pub user_id: u32,
    pub item_id: u32,
    pub rating: u8,
    pub timestamp: i64,
}

/// Record/user/item counts of a parsed ratings file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RatingStats {
    pub records: usize,
    pub users: usize,
    pub items: usize,
}

pub fn summarize(records: &[RatingRecord]) -> RatingStats {
    let users: BTreeSet<u32> = records.iter().map(|r| r.user_id).collect();
    let items: BTreeSet<u32> = records.iter().map(|r| r.item_id).collect();
    RatingStats {
        records: records.len(),
        users: users.len(),
        items: items.len(),
    }
}

/// Tab-separated `user \t item \t rating \t timestamp` (MovieLens-100k `u.data`).
pub fn parse_movielens_100k(path: impl AsRef<Path>) -> Result<Vec<RatingRecord>, IngestError> {
    parse_ratings(&read(path.as_ref())?, "\t")
}

/// `::`-separated `user::item::rating::timestamp` (MovieLens-1M `ratings.dat`).
pub fn parse_movielens_1m(path: impl AsRef<Path>) -> Result<Vec<RatingRecord>, IngestError> {
    parse_ratings(&read(path.as_ref())?, "::")
}

fn read(path: &Path) -> Result<String, IngestError> {
    fs::read_to_string(path).map_err(|source| IngestError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Parses ratings text with the given field separator. Blank lines are skipped.
pub fn parse_ratings(text: &str, separator: &str) -> Result<Vec<RatingRecord>, IngestError> {
    let mut records = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(separator).map(str::trim).collect();
        if fields.len() != 4 {
            return Err(IngestError::Malformed {
                line,
                reason: format!("expected 4 fields, found {}", fields.len()),
            });
        }
        let int = |s: &str, name: &str| -> Result<i64, IngestError> {
            s.parse::<i64>().map_err(|_| IngestError::Malformed {
                line,
                reason: format!("{name} {s:?} is not an integer"),
            })
        };
        let id = |s: &str, name: &str| -> Result<u32, IngestError> {
            let v = int(s, name)?;
            u32::try_from(v)
                .ok()
                .filter(|&v| v >= 1)
                .ok_or_else(|| IngestError::Malformed {
                    line,
                    reason: format!("{name} {v} must be a positive id"),
                })
        };
        let user_id = id(fields[0], "user id")?;
        let item_id = id(fields[1], "item id")?;
        let rating = int(fields[2], "rating")?;
        if !(1..=5).contains(&rating) {
            return Err(IngestError::RatingOutOfRange { line, rating });
        }
        let timestamp = int(fields[3], "timestamp")?;
        records.push(RatingRecord {
            user_id,
            item_id,
            rating: rating as u8,
            timestamp,
        });
    }
    if records.is_empty() {
        return Err(IngestError::NoRecords);
    }
    Ok(records)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BinarizeOp {
    /// rating ≥ threshold
    #[default]
    Ge,
    /// rating > threshold
    Gt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Binarization {
    pub threshold: u8,
    pub op: BinarizeOp,
}

impl Default for Binarization {
    fn default() -> Self {
        Self {
            threshold: 3,
            op: BinarizeOp::Ge,
        }
    }
}

impl Binarization {
    pub fn new(threshold: u8, op: BinarizeOp) -> Result<Self, IngestError> {
        if !(1..=5).contains(&threshold) {
            return Err(IngestError::BadThreshold(threshold));
        }
        Ok(Self { threshold, op })
    }

    #[inline]
    pub fn is_positive(&self, rating: u8) -> bool {
        match self.op {
            BinarizeOp::Ge => rating >= self.threshold,
            BinarizeOp::Gt => rating > self.threshold,
        }
    }
}

/// Binary user × item matrix with dense indices assigned in ascending raw-id order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMatrix {
    user_ids: Vec<u32>,
    item_ids: Vec<u32>,
    user_index: HashMap<u32, usize>,
    item_index: HashMap<u32, usize>,
    rows: Vec<BitSet>,
    cols: Vec<BitSet>,
}

impl BinaryMatrix {
    /// Builds a matrix from raw ids and the `(user, item)` pairs that are set.
    /// Pairs referring to unknown ids are ignored.
    pub fn from_pairs(
        user_ids: impl IntoIterator<Item = u32>,
        item_ids: impl IntoIterator<Item = u32>,
        ones: impl IntoIterator<Item = (u32, u32)>,
    ) -> Self {
        let user_ids: Vec<u32> = user_ids
            .into_iter()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let item_ids: Vec<u32> = item_ids
            .into_iter()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let user_index: HashMap<u32, usize> =
            user_ids.iter().enumerate().map(|(i, &u)| (u, i)).collect();
        let item_index: HashMap<u32, usize> =
            item_ids.iter().enumerate().map(|(i, &t)| (t, i)).collect();
        let mut rows = vec![BitSet::new(item_ids.len()); user_ids.len()];
        let mut cols = vec![BitSet::new(user_ids.len()); item_ids.len()];
        for (u, i) in ones {
            if let (Some(&r), Some(&c)) = (user_index.get(&u), item_index.get(&i)) {
                rows[r].insert(c);
                cols[c].insert(r);
            }
        }
        Self {
            user_ids,
            item_ids,
            user_index,
            item_index,
            rows,
            cols,
        }
    }

    /// Matrix from 0/1 strings such as `"1100"`; user and item ids are `index + 1`.
    pub fn from_bit_strings(rows: &[&str]) -> Self {
        let n_items = rows.first().map_or(0, |r| r.len());
        let mut ones = Vec::new();
        for (u, row) in rows.iter().enumerate() {
            assert_eq!(row.len(), n_items, "ragged bit-string matrix");
            for (i, ch) in row.chars().enumerate() {
                match ch {
                    '1' => ones.push((u as u32 + 1, i as u32 + 1)),
                    '0' => {}
                    other => panic!("invalid bit character {other:?}"),
                }
            }
        }
        Self::from_pairs(1..=rows.len() as u32, 1..=n_items as u32, ones)
    }

    pub fn n_users(&self) -> usize {
        self.user_ids.len()
    }

    pub fn n_items(&self) -> usize {
        self.item_ids.len()
    }

    pub fn user_ids(&self) -> &[u32] {
        &self.user_ids
    }

    pub fn item_ids(&self) -> &[u32] {
        &self.item_ids
    }

    pub fn user_index(&self, user_id: u32) -> Option<usize> {
        self.user_index.get(&user_id).copied()
    }

    pub fn item_index(&self, item_id: u32) -> Option<usize> {
        self.item_index.get(&item_id).copied()
    }

    /// Items of a user as a bit-vector over dense item indices.
    pub fn row(&self, user: usize) -> &BitSet {
        &self.rows[user]
    }

    pub fn rows(&self) -> &[BitSet] {
        &self.rows
    }

    /// Users of an item as a bit-vector over dense user indices.
    pub fn col(&self, item: usize) -> &BitSet {
        &self.cols[item]
    }

    pub fn cols(&self) -> &[BitSet] {
        &self.cols
    }

    pub fn get(&self, user: usize, item: usize) -> bool {
        self.rows[user].contains(item)
    }

    pub fn count_ones(&self) -> usize {
        self.rows.iter().map(BitSet::count).sum()
    }

    /// Positive count per item, indexed densely.
    pub fn item_popularity(&self) -> Vec<usize> {
        self.cols.iter().map(BitSet::count).collect()
    }

    /// One rating-1 record per set entry.
    pub fn to_records(&self) -> Vec<RatingRecord> {
        let mut out = Vec::with_capacity(self.count_ones());
        for (u, row) in self.rows.iter().enumerate() {
            for i in row.ones() {
                out.push(RatingRecord {
                    user_id: self.user_ids[u],
                    item_id: self.item_ids[i],
                    rating: 1,
                    timestamp: 0,
                });
            }
        }
        out
    }
}

/// Binarizes ratings: an entry is set iff some record for the pair is positive.
/// Duplicate `(user, item)` records resolve to their maximum rating.
pub fn binarize(
    records: &[RatingRecord],
    binarization: Binarization,
) -> Result<BinaryMatrix, IngestError> {
    if records.is_empty() {
        return Err(IngestError::NoRecords);
    }
    Binarization::new(binarization.threshold, binarization.op)?;
    let mut best: HashMap<(u32, u32), u8> = HashMap::with_capacity(records.len());
    for r in records {
        let slot = best.entry((r.user_id, r.item_id)).or_insert(r.rating);
        *slot = (*slot).max(r.rating);
    }
    let ones = best
        .into_iter()
        .filter(|&(_, rating)| binarization.is_positive(rating))
        .map(|(pair, _)| pair);
    Ok(BinaryMatrix::from_pairs(
        records.iter().map(|r| r.user_id),
        records.iter().map(|r| r.item_id),
        ones,
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainTestSplit {
    pub train: Vec<RatingRecord>,
    pub test: Vec<RatingRecord>,
    /// Users with fewer than two records; all their records went to `train`.
    pub train_only_users: Vec<u32>,
}

/// User-stratified random split: each user's records are shuffled and
/// `round(train_fraction · count)` of them (clamped so both sides get at least
/// one record) go to training.
pub fn split_train_test(
    records: &[RatingRecord],
    train_fraction: f64,
    seed: u64,
) -> Result<TrainTestSplit, IngestError> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(IngestError::BadFraction(train_fraction));
    }
    if records.is_empty() {
        return Err(IngestError::NoRecords);
    }
    let mut by_user: BTreeMap<u32, Vec<RatingRecord>> = BTreeMap::new();
    for r in records {
        by_user.entry(r.user_id).or_default().push(*r);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut split = TrainTestSplit {
        train: Vec::with_capacity(records.len()),
        test: Vec::new(),
        train_only_users: Vec::new(),
    };
    for (user, mut recs) in by_user {
        if recs.len() < 2 {
            split.train_only_users.push(user);
            split.train.extend(recs);
            continue;
        }
        recs.shuffle(&mut rng);
        let n_train =
            ((train_fraction * recs.len() as f64).round() as usize).clamp(1, recs.len() - 1);
        let test = recs.split_off(n_train);
        split.train.extend(recs);
        split.test.extend(test);
    }
    if !split.train_only_users.is_empty() {
        log::warn!(
            "{} user(s) with fewer than 2 records kept entirely in train",
            split.train_only_users.len()
        );
    }
    Ok(split)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestUser {
    pub user: u32,
    /// The visible profile (raw item ids, ascending).
    pub observed: Vec<u32>,
    /// Held-out positives the recommender should retrieve (raw item ids, ascending).
    pub hidden: Vec<u32>,
}

#[derive(Debug, Clone)]
pub struct ColdStartSplit {
    pub train: BinaryMatrix,
    pub test_users: Vec<TestUser>,
    /// Users with no evaluable hidden set.
    pub dropped_users: Vec<u32>,
}

/// Number of items left visible from `positives` positive test items.
pub fn observed_count(positives: usize, keep_fraction: f64) -> usize {
    ((keep_fraction * positives as f64).round() as usize)
        .max(1)
        .min(positives)
}

/// Masks each test user's positive items: `max(1, round(keep_fraction · |pos|))`
/// uniformly chosen items stay observed, the rest become hidden.
pub fn make_cold_start(
    train: BinaryMatrix,
    test: &[RatingRecord],
    keep_fraction: f64,
    binarization: Binarization,
    seed: u64,
) -> Result<ColdStartSplit, IngestError> {
    if test.is_empty() {
        return Err(IngestError::NoRecords);
    }
    if !(keep_fraction > 0.0 && keep_fraction < 1.0) {
        return Err(IngestError::BadFraction(keep_fraction));
    }
    let mut best: BTreeMap<u32, BTreeMap<u32, u8>> = BTreeMap::new();
    for r in test {
        let slot = best
            .entry(r.user_id)
            .or_default()
            .entry(r.item_id)
            .or_insert(r.rating);
        *slot = (*slot).max(r.rating);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut test_users = Vec::new();
    let mut dropped_users = Vec::new();
    for (user, items) in best {
        let mut positives: Vec<u32> = items
            .into_iter()
            .filter(|&(_, r)| binarization.is_positive(r))
            .map(|(i, _)| i)
            .collect();
        if positives.is_empty() {
            dropped_users.push(user);
            continue;
        }
        positives.shuffle(&mut rng);
        let keep = observed_count(positives.len(), keep_fraction);
        let mut hidden = positives.split_off(keep);
        if hidden.is_empty() {
            dropped_users.push(user);
            continue;
        }
        positives.sort_unstable();
        hidden.sort_unstable();
        test_users.push(TestUser {
            user,
            observed: positives,
            hidden,
        });
    }
    if !dropped_users.is_empty() {
        log::info!(
            "{} test user(s) without a hidden set dropped",
            dropped_users.len()
        );
    }
    Ok(ColdStartSplit {
        train,
        test_users,
        dropped_users,
    })
}
