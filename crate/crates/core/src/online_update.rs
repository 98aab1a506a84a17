//! Online feedback: a satisfied user joins the user set of the cell that
//! produced the recommendation, which shifts the rewards of every edge
//! touching that cell. Incremental retraining picks the change up.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mdp_env::{Cell, EnvError};
use crate::persistence::GridModel;
use crate::rl_trainer::{continue_training, TrainError};

#[derive(Debug, Error)]
pub enum OnlineError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("feedback log {path}: {source}")]
    Log {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("feedback log {path}, line {line}: {reason}")]
    BadLogLine {
        path: String,
        line: usize,
        reason: String,
    },
}

/// One line of the feedback log.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedbackEvent {
    pub seq: u64,
    pub user: u32,
    pub cell: Cell,
    pub satisfied: bool,
    /// Unix seconds.
    pub ts: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedbackOutcome {
    /// The event was new (sequence number beyond the last applied one).
    pub accepted: bool,
    /// A user set actually changed.
    pub applied: bool,
    pub user_set_size: usize,
}

/// Applies one event. Events whose `seq` is not beyond the model's
/// `feedback_seq` were already applied and are ignored, so replaying a log
/// is idempotent. Unsatisfied feedback is recorded but changes no user set.
pub fn apply_feedback(
    model: &mut GridModel,
    event: &FeedbackEvent,
) -> Result<FeedbackOutcome, OnlineError> {
    let size = model.state(event.cell)?.users.len();
    if event.seq <= model.feedback_seq {
        return Ok(FeedbackOutcome {
            accepted: false,
            applied: false,
            user_set_size: size,
        });
    }
    model.feedback_seq = event.seq;
    let applied = event.satisfied && model.add_user(event.cell, event.user)?;
    Ok(FeedbackOutcome {
        accepted: true,
        applied,
        user_set_size: model.state(event.cell)?.users.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetrainSchedule {
    /// Retrain after every `every` accepted events; 0 disables retraining.
    pub every: u64,
    pub episodes: usize,
}

impl Default for RetrainSchedule {
    fn default() -> Self {
        Self {
            every: 10,
            episodes: 100,
        }
    }
}

/// Runs `episodes` further training episodes on the model's own Q-table
/// against its current user sets.
pub fn retrain(model: &mut GridModel, episodes: usize, seed: u64) -> Result<(), OnlineError> {
    let config = model.train_config;
    let (env, q) = model.env_and_q();
    continue_training(env, q, &config, episodes, seed)?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubmitOutcome {
    pub accepted: bool,
    pub applied: bool,
    pub user_set_size: usize,
    pub retrained: bool,
}

/// A model plus the retraining counter that drives [`RetrainSchedule`].
#[derive(Debug, Clone)]
pub struct OnlineLearner {
    pub model: GridModel,
    pub schedule: RetrainSchedule,
    since_retrain: u64,
    retrains: u64,
}

impl OnlineLearner {
    /// Counters resume from `feedback_seq`, assuming consecutive sequence
    /// numbers, so a restarted learner retrains at the same events with the
    /// same seeds as the original one.
    pub fn new(model: GridModel, schedule: RetrainSchedule) -> Self {
        let (since_retrain, retrains) = match schedule.every {
            0 => (0, 0),
            every => (model.feedback_seq % every, model.feedback_seq / every),
        };
        Self {
            model,
            schedule,
            since_retrain,
            retrains,
        }
    }

    pub fn retrain_count(&self) -> u64 {
        self.retrains
    }

    /// Applies the event, then retrains if the schedule says so.
    pub fn submit(&mut self, event: &FeedbackEvent) -> Result<SubmitOutcome, OnlineError> {
        let outcome = apply_feedback(&mut self.model, event)?;
        let retrained = if outcome.accepted {
            self.since_retrain += 1;
            self.maybe_retrain()?
        } else {
            false
        };
        Ok(SubmitOutcome {
            accepted: outcome.accepted,
            applied: outcome.applied,
            user_set_size: outcome.user_set_size,
            retrained,
        })
    }

    /// Retrains once `every` accepted events have accumulated. The seed of
    /// each incremental run derives from the training seed and the run index.
    pub fn maybe_retrain(&mut self) -> Result<bool, OnlineError> {
        if self.schedule.every == 0 || self.since_retrain < self.schedule.every {
            return Ok(false);
        }
        self.since_retrain = 0;
        self.retrains += 1;
        let seed = self
            .model
            .train_config
            .seed
            .wrapping_add(self.retrains.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        retrain(&mut self.model, self.schedule.episodes, seed)?;
        Ok(true)
    }
}

/// Append-only JSON-lines feedback log.
#[derive(Debug)]
pub struct FeedbackLog {
    path: PathBuf,
    file: File,
}

impl FeedbackLog {
    pub fn open(path: impl AsRef<Path>) -> Result<Self, OnlineError> {
        let path = path.as_ref().to_path_buf();
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|source| log_err(&path, source))?;
        Ok(Self { path, file })
    }

    /// Writes and syncs one event.
    pub fn append(&mut self, event: &FeedbackEvent) -> Result<(), OnlineError> {
        let mut line = serde_json::to_string(event).expect("events serialize");
        line.push('\n');
        self.file
            .write_all(line.as_bytes())
            .and_then(|_| self.file.sync_data())
            .map_err(|source| log_err(&self.path, source))
    }

    /// Reads every event; a missing file is an empty log.
    pub fn read_all(path: impl AsRef<Path>) -> Result<Vec<FeedbackEvent>, OnlineError> {
        let path = path.as_ref();
        let file = match File::open(path) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(source) => return Err(log_err(path, source)),
        };
        let mut events = Vec::new();
        for (idx, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|source| log_err(path, source))?;
            if line.trim().is_empty() {
                continue;
            }
            let event = serde_json::from_str(&line).map_err(|e| OnlineError::BadLogLine {
                path: path.display().to_string(),
                line: idx + 1,
                reason: e.to_string(),
            })?;
            events.push(event);
        }
        Ok(events)
    }
}

fn log_err(path: &Path, source: std::io::Error) -> OnlineError {
    OnlineError::Log {
        path: path.display().to_string(),
        source,
    }
}

/// Replays logged events over a model; already-applied ones are skipped.
pub fn replay(learner: &mut OnlineLearner, events: &[FeedbackEvent]) -> Result<usize, OnlineError> {
    let mut accepted = 0;
    for e in events {
        if learner.submit(e)?.accepted {
            accepted += 1;
        }
    }
    Ok(accepted)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp_env::{GridEnv, GridState, RewardKind};
    use crate::rl_trainer::{QTable, TrainConfig};
    use std::collections::BTreeMap;

    fn model() -> GridModel {
        let st = |u: &[u32]| GridState::new(u.to_vec(), vec![1]);
        let env = GridEnv::new(
            2,
            vec![st(&[1, 2]), st(&[2, 3]), st(&[4]), st(&[5])],
            RewardKind::Similarity,
        )
        .unwrap();
        GridModel::new(
            env,
            QTable::new(2),
            TrainConfig::default(),
            BTreeMap::new(),
            BTreeMap::new(),
        )
    }

    fn ev(seq: u64, user: u32, cell: Cell, satisfied: bool) -> FeedbackEvent {
        FeedbackEvent {
            seq,
            user,
            cell,
            satisfied,
            ts: 0,
        }
    }

    #[test]
    fn satisfied_feedback_raises_edge_reward() {
        let mut m = model();
        let (a, b) = (Cell::new(0, 0), Cell::new(0, 1));
        assert_eq!(m.env().reward_between(a, b).unwrap(), 1.0 / 3.0);
        apply_feedback(&mut m, &ev(1, 7, a, true)).unwrap();
        apply_feedback(&mut m, &ev(2, 7, b, true)).unwrap();
        assert_eq!(m.env().reward_between(a, b).unwrap(), 0.5);
    }

    #[test]
    fn duplicate_and_unsatisfied_are_no_ops() {
        let mut m = model();
        let c = Cell::new(0, 0);
        let before = m.state(c).unwrap().clone();
        let out = apply_feedback(&mut m, &ev(1, 2, c, true)).unwrap();
        assert!(out.accepted && !out.applied);
        let out = apply_feedback(&mut m, &ev(2, 9, c, false)).unwrap();
        assert!(out.accepted && !out.applied);
        assert_eq!(m.state(c).unwrap(), &before);
        assert_eq!(m.feedback_seq, 2);
    }

    #[test]
    fn reapplying_an_event_is_idempotent() {
        let mut once = model();
        let e = ev(1, 8, Cell::new(1, 1), true);
        apply_feedback(&mut once, &e).unwrap();
        let mut twice = once.clone();
        let out = apply_feedback(&mut twice, &e).unwrap();
        assert!(!out.accepted);
        assert_eq!(once, twice);
    }

    #[test]
    fn unknown_cell_is_an_error() {
        let mut m = model();
        assert!(matches!(
            apply_feedback(&mut m, &ev(1, 1, Cell::new(2, 0), true)),
            Err(OnlineError::Env(EnvError::OutOfBounds { .. }))
        ));
    }

    #[test]
    fn retrain_every_tenth_event() {
        let mut learner = OnlineLearner::new(
            model(),
            RetrainSchedule {
                every: 10,
                episodes: 5,
            },
        );
        for seq in 1..=9 {
            assert!(
                !learner
                    .submit(&ev(seq, 100 + seq as u32, Cell::new(1, 0), true))
                    .unwrap()
                    .retrained
            );
        }
        assert_eq!(learner.retrain_count(), 0);
        assert!(
            learner
                .submit(&ev(10, 200, Cell::new(1, 0), true))
                .unwrap()
                .retrained
        );
        assert_eq!(learner.retrain_count(), 1);
        assert!(!learner.model.q.is_untrained());
    }

    #[test]
    fn log_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("feedback.jsonl");
        assert!(FeedbackLog::read_all(&path).unwrap().is_empty());
        let mut log = FeedbackLog::open(&path).unwrap();
        let events = [
            ev(1, 3, Cell::new(0, 1), true),
            ev(2, 4, Cell::new(1, 1), false),
        ];
        for e in &events {
            log.append(e).unwrap();
        }
        assert_eq!(FeedbackLog::read_all(&path).unwrap(), events);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(
            text.starts_with("{\"seq\":1,\"user\":3,\"cell\":[0,1],\"satisfied\":true,\"ts\":0}")
        );
    }
}
