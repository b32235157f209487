//! Adaptive next-question recommendation for short self-assessment tests.
//!
//! Five interchangeable strategies share one contract ([`recommend::Strategy`]):
//!
//! * [`concept_map`]: two-level walk over a prerequisite concept graph (top layer)
//! * [`collab`]: hybrid matrix-factorization / user-KNN rating prediction (bottom layer)
//! * [`cluster`]: fused difficulty scores, k-means levels and a keyword graph (top layer)
//! * [`supervised`]: random-forest correctness and time estimates (bottom layer)
//! * [`rl`]: tabular Q-learning inside a prerequisite-feasible concept plan (top layer)
//!
//! [`sim`] runs all of them against synthetic students.

pub mod background;
pub mod cluster;
pub mod collab;
pub mod concept_map;
pub mod domain;
pub mod ingest;
pub mod ratings;
pub mod recommend;
pub mod rl;
pub mod sim;
pub mod stats;
pub mod strategies;
pub mod supervised;

pub use domain::{
    ConceptId, Difficulty, InteractionEvent, Outcome, Question, QuestionBank, QuestionId, SessionId,
    SessionState, UserId,
};
pub use recommend::{Layer, RecommendContext, Recommendation, Strategy, StrategyError};
