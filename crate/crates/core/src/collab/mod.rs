//! Collaborative filtering: a blend of a factor model and user-based KNN over
//! the implicit rating matrix.

mod factor;
mod knn;

use serde::{Deserialize, Serialize};

pub use factor::{train_factor_model, FactorConfig, FactorModel};
pub use knn::{cosine_similarity, knn_predict, KnnPrediction};

use crate::domain::{InteractionEvent, QuestionBank, QuestionId, UserId};
use crate::ratings::{build_rating_matrix, RatingError, RatingMatrix};
use crate::recommend::{fallback_ranking, CandidateScore, Recommendation, RecommendContext, ScoreKind};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum CollabError {
    #[error("rating matrix has no entries")]
    EmptyMatrix,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("user {0} is not in the model")]
    UnknownUser(UserId),
    #[error("question {0} is not in the model")]
    UnknownQuestion(QuestionId),
    #[error("no candidate questions left")]
    EmptyPool,
    #[error(transparent)]
    Rating(#[from] RatingError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub question_id: QuestionId,
    /// Always within [1, 5].
    pub estimated_rating: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CollabConfig {
    #[serde(flatten)]
    pub factor: FactorConfig,
    pub n_neighbors: usize,
    /// Weight of the factor model in the blend; KNN gets the rest.
    pub alpha: f64,
}

impl Default for CollabConfig {
    fn default() -> Self {
        Self {
            factor: FactorConfig::default(),
            n_neighbors: 20,
            alpha: 0.5,
        }
    }
}

pub fn blend(factor: f64, knn: Option<f64>, alpha: f64) -> f64 {
    match knn {
        Some(k) => alpha * factor + (1.0 - alpha) * k,
        None => factor,
    }
    .clamp(1.0, 5.0)
}

pub fn hybrid_predict(
    model: &FactorModel,
    matrix: &RatingMatrix,
    user: &UserId,
    question: &QuestionId,
    alpha: f64,
    n_neighbors: usize,
) -> Result<Prediction, CollabError> {
    let factor = model.predict(user, question)?;
    let knn = knn_predict(matrix, user, question, n_neighbors).value();
    Ok(Prediction {
        question_id: question.clone(),
        estimated_rating: blend(factor, knn, alpha),
    })
}

/// A trained snapshot: the matrix it was fitted on plus the factor model.
#[derive(Debug, Clone)]
pub struct CollabFilter {
    pub matrix: RatingMatrix,
    pub model: FactorModel,
    pub config: CollabConfig,
}

impl CollabFilter {
    pub fn train(events: &[InteractionEvent], bank: &QuestionBank, config: CollabConfig) -> Result<Self, CollabError> {
        if !(0.0..=1.0).contains(&config.alpha) {
            return Err(CollabError::InvalidConfig(format!("alpha {} outside [0, 1]", config.alpha)));
        }
        let matrix = build_rating_matrix(events, bank.questions())?;
        let model = train_factor_model(&matrix, &config.factor)?;
        Ok(Self { matrix, model, config })
    }

    pub fn predict(&self, user: &UserId, question: &QuestionId) -> Result<Prediction, CollabError> {
        hybrid_predict(
            &self.model,
            &self.matrix,
            user,
            question,
            self.config.alpha,
            self.config.n_neighbors,
        )
    }

    /// Highest estimated rating first. Users the model has never seen get the
    /// cold-start ordering; questions it has never seen get the user's baseline
    /// (global mean plus user bias).
    pub fn recommend(&self, ctx: &RecommendContext<'_>) -> Result<Recommendation, CollabError> {
        if ctx.pool.is_empty() {
            return Err(CollabError::EmptyPool);
        }
        let user = &ctx.session.user_id;
        let Some(baseline) = self.model.predict_cold_question(user) else {
            return fallback_ranking(ctx.pool).ok_or(CollabError::EmptyPool);
        };
        let scores = ctx
            .pool
            .iter()
            .map(|q| {
                let score = match self.predict(user, &q.id) {
                    Ok(p) => p.estimated_rating,
                    Err(CollabError::UnknownQuestion(_)) => baseline,
                    Err(e) => return Err(e),
                };
                Ok(CandidateScore::new(q.id.clone(), score))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Recommendation::ranked(ScoreKind::EstimatedRating, scores, None).ok_or(CollabError::EmptyPool)
    }
}
