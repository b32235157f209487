//! The next-question contract shared by every strategy.

use std::cmp::Ordering;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::domain::{ConceptId, InteractionEvent, Question, QuestionBank, QuestionId, SessionState};

/// Where a strategy sits: planning the conceptual path, picking the concrete
/// item, or neither (baseline).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layer {
    Top,
    Bottom,
    Control,
}

/// What the per-candidate scores in a [`Recommendation`] measure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreKind {
    /// Weighted learning-indicator profile.
    Indicator,
    EstimatedRating,
    Relevance,
    /// Correctness probability traded off against expected time.
    Utility,
    QValue,
    Uniform,
    /// Cold-start ordering: negated teacher level.
    Fallback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub question_id: QuestionId,
    pub score: f64,
}

impl CandidateScore {
    pub fn new(question_id: QuestionId, score: f64) -> Self {
        Self { question_id, score }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub question_id: QuestionId,
    pub kind: ScoreKind,
    /// Candidates ranked best first.
    pub scores: Vec<CandidateScore>,
    /// Concept the pick was made for, when the strategy walks concepts.
    pub concept: Option<ConceptId>,
}

impl Recommendation {
    /// Ranks by descending score with ascending id as tie-break and recommends
    /// the head. `None` when there are no candidates.
    pub fn ranked(kind: ScoreKind, mut scores: Vec<CandidateScore>, concept: Option<ConceptId>) -> Option<Self> {
        scores.sort_by(rank_order);
        let question_id = scores.first()?.question_id.clone();
        Some(Self {
            question_id,
            kind,
            scores,
            concept,
        })
    }

    /// A pick that did not come from ranking (e.g. an exploratory draw); the
    /// candidate list is still ranked.
    pub fn with_pick(kind: ScoreKind, question_id: QuestionId, mut scores: Vec<CandidateScore>, concept: Option<ConceptId>) -> Self {
        scores.sort_by(rank_order);
        Self {
            question_id,
            kind,
            scores,
            concept,
        }
    }

    pub fn score_of(&self, id: &QuestionId) -> Option<f64> {
        self.scores.iter().find(|c| &c.question_id == id).map(|c| c.score)
    }
}

fn rank_order(a: &CandidateScore, b: &CandidateScore) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.question_id.cmp(&b.question_id))
}

/// Cold-start ordering: easiest teacher level first, then id.
pub fn fallback_ranking(pool: &[&Question]) -> Option<Recommendation> {
    let scores = pool
        .iter()
        .map(|q| CandidateScore::new(q.id.clone(), -(q.teacher_level as f64)))
        .collect();
    Recommendation::ranked(ScoreKind::Fallback, scores, None)
}

/// Everything a strategy sees when asked for the next question.
pub struct RecommendContext<'a> {
    pub bank: &'a QuestionBank,
    pub session: &'a SessionState,
    /// Unserved questions of the session topic, in id order.
    pub pool: &'a [&'a Question],
    /// This user's events from earlier sessions, oldest first.
    pub prior_events: &'a [InteractionEvent],
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum StrategyError {
    #[error("no candidate questions left")]
    EmptyPool,
    #[error("{0}")]
    Failed(String),
}

/// A next-question strategy. Implementations must never return a question that
/// is not in `ctx.pool`.
pub trait Strategy: Send + Sync {
    fn name(&self) -> &'static str;

    fn layer(&self) -> Layer;

    fn recommend(&self, ctx: &RecommendContext<'_>, rng: &mut dyn RngCore) -> Result<Recommendation, StrategyError>;

    /// Called after `event` is recorded; `ctx.session` already contains it and
    /// `ctx.pool` no longer holds the answered question.
    fn observe(&self, _ctx: &RecommendContext<'_>, _event: &InteractionEvent) {}

    /// Called once when the session finishes.
    fn finish(&self, _ctx: &RecommendContext<'_>) {}

    /// JSON dump of the learned model, for strategies that have one.
    fn snapshot(&self) -> Option<serde_json::Value> {
        None
    }
}
