//! Grid-based recommendation: biclusters laid out on an n×n gridworld,
//! a tabular Q-learning/SARSA walker over it, and the tooling around them.

pub mod bicluster;
pub mod bits;
pub mod evaluation;
pub mod gridmap;
pub mod ingest;
pub mod mdp_env;
pub mod online_update;
pub mod persistence;
pub mod pipeline;
pub mod recommender;
pub mod rl_trainer;
