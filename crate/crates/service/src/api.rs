//! Request and response bodies. Nothing here carries the answer key.

use learnpath_core::recommend::{CandidateScore, ScoreKind};
use learnpath_core::{ConceptId, Layer, Outcome, Question, QuestionId, Recommendation, SessionId};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct CreateSession {
    pub user_id: String,
    pub topic: String,
    /// Falls back to the configured default strategy.
    #[serde(default)]
    pub strategy: Option<String>,
    #[serde(default)]
    pub length: Option<usize>,
}

/// A question as shown to the student.
#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
pub struct QuestionView {
    pub id: QuestionId,
    pub text: String,
    pub options: Vec<String>,
    pub topic: String,
    pub keywords: Vec<String>,
    /// 1-based position in the test.
    pub position: usize,
}

impl QuestionView {
    pub fn new(q: &Question, position: usize) -> Self {
        Self {
            id: q.id.clone(),
            text: q.text.clone(),
            options: q.options.clone(),
            topic: q.topic.clone(),
            keywords: q.keywords.iter().cloned().collect(),
            position,
        }
    }
}

/// Why the question was chosen: the strategy's score for every candidate.
#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
pub struct RecommendationView {
    pub kind: ScoreKind,
    pub concept: Option<ConceptId>,
    pub scores: Vec<CandidateScore>,
}

impl From<&Recommendation> for RecommendationView {
    fn from(r: &Recommendation) -> Self {
        Self {
            kind: r.kind,
            concept: r.concept.clone(),
            scores: r.scores.clone(),
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct SessionCreated {
    pub session_id: SessionId,
    pub strategy: String,
    pub model_version: u64,
    pub length: usize,
    pub question: QuestionView,
    pub recommendation: RecommendationView,
}

/// Exactly one of `choice_index`, `dont_know` or `skip` must be set.
#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct AnswerRequest {
    pub question_id: QuestionId,
    #[serde(default)]
    pub choice_index: Option<usize>,
    #[serde(default)]
    pub dont_know: bool,
    #[serde(default)]
    pub skip: bool,
    #[serde(default)]
    pub elapsed_ms: u64,
    #[serde(default)]
    pub click_count: u32,
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
pub struct AnsweredQuestion {
    pub question_id: QuestionId,
    pub outcome: Outcome,
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
pub struct SessionSummary {
    pub score: usize,
    pub answered: usize,
    pub outcomes: Vec<AnsweredQuestion>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct AnswerResponse {
    /// `None` for a skipped question.
    pub correct: Option<bool>,
    pub outcome: Outcome,
    pub finished: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub next_question: Option<QuestionView>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recommendation: Option<RecommendationView>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summary: Option<SessionSummary>,
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
pub struct StrategyInfo {
    pub name: String,
    pub layer: Layer,
    pub trainable: bool,
    pub model_version: u64,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct RetrainRequest {
    pub strategy: String,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct RetrainResponse {
    pub strategy: String,
    pub model_version: u64,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct TopicInfo {
    pub topic: String,
    pub questions: usize,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct Health {
    pub status: String,
    pub questions: usize,
    pub topics: usize,
    pub active_sessions: usize,
    pub events: usize,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct ErrorBody {
    pub error: String,
    pub message: String,
}
