//! Forest-based recommender: predict the chance of a correct answer and the
//! answer time for every candidate, then take the best trade-off.

mod features;
mod forest;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

pub use features::{
    quantile, session_aggregates, sessions_of, BackgroundField, FeatureSchema, CANDIDATE_FEATURES, SESSION_FEATURES,
};
pub use forest::{fit_tree, train_forest, FeatureSubsample, ForestConfig, ForestModel, Label, Mode, Node, TreeConfig};

use crate::background::BackgroundProfile;
use crate::domain::{InteractionEvent, Question, QuestionBank, QuestionId, SessionState, UserId};
use crate::recommend::{fallback_ranking, CandidateScore, Recommendation, RecommendContext, ScoreKind};
use crate::stats::SuccessRates;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SupervisedError {
    #[error("need at least 2 training rows, got {0}")]
    TooFewRows(usize),
    #[error("training labels mix classes and values")]
    MixedLabelTypes,
    #[error("feature vector has {got} entries, model expects {expected}")]
    SchemaMismatch { expected: usize, got: usize },
    #[error("regression targets must be finite and non-negative")]
    NegativeTarget,
    #[error("features must be finite")]
    NonFinite,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("no estimates to choose from")]
    EmptyEstimates,
    #[error("no candidate questions left")]
    EmptyPool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateEstimate {
    pub question_id: QuestionId,
    pub p_correct: f64,
    pub expected_time_ms: f64,
}

/// `p - lambda * min(t / t_ref, 1)`.
pub fn utility(estimate: &CandidateEstimate, lambda: f64, t_ref_ms: f64) -> f64 {
    estimate.p_correct - lambda * (estimate.expected_time_ms / t_ref_ms).min(1.0)
}

/// Best utility among estimates not in `served_correct`; the filter is ignored
/// when it would leave nothing.
pub fn select_by_heuristic(
    estimates: &[CandidateEstimate],
    lambda: f64,
    t_ref_ms: f64,
    served_correct: &BTreeSet<QuestionId>,
) -> Result<Recommendation, SupervisedError> {
    let mut kept: Vec<&CandidateEstimate> = estimates
        .iter()
        .filter(|e| !served_correct.contains(&e.question_id))
        .collect();
    if kept.is_empty() {
        kept = estimates.iter().collect();
    }
    let scores = kept
        .into_iter()
        .map(|e| CandidateScore::new(e.question_id.clone(), utility(e, lambda, t_ref_ms)))
        .collect();
    Recommendation::ranked(ScoreKind::Utility, scores, None).ok_or(SupervisedError::EmptyEstimates)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SupervisedConfig {
    pub forest: ForestConfig,
    pub lambda: f64,
    pub t_ref_ms: f64,
    /// Drop questions the user already answered correctly in an earlier test.
    pub filter_served_correct: bool,
    /// Answer times above this quantile are clipped before training.
    pub time_clip_quantile: f64,
}

impl Default for SupervisedConfig {
    fn default() -> Self {
        Self {
            forest: ForestConfig::default(),
            lambda: 0.3,
            t_ref_ms: 120_000.0,
            filter_served_correct: true,
            time_clip_quantile: 0.99,
        }
    }
}

/// Training rows for the correctness and time models: one per non-skipped
/// answer, featurized with the answers before it in the same test.
pub fn training_rows(
    bank: &QuestionBank,
    events: &[InteractionEvent],
    profiles: &BTreeMap<UserId, BackgroundProfile>,
    schema: &FeatureSchema,
    rates: &SuccessRates,
    time_clip_quantile: f64,
) -> (Vec<(Vec<f64>, Label)>, Vec<(Vec<f64>, Label)>) {
    let mut p_rows = Vec::new();
    let mut raw_times = Vec::new();
    for session in sessions_of(events).values() {
        let ordered: Vec<InteractionEvent> = session.iter().map(|e| (*e).clone()).collect();
        for (i, e) in ordered.iter().enumerate() {
            let Some(q) = bank.get(&e.question_id) else { continue };
            if !e.outcome.is_attempt() {
                continue;
            }
            let x = schema.vector(profiles.get(&e.user_id), &ordered[..i], q, bank, rates);
            p_rows.push((x.clone(), Label::Class(e.outcome.is_correct())));
            raw_times.push((x, e.elapsed_ms as f64));
        }
    }
    let cap = quantile(&raw_times.iter().map(|t| t.1).collect::<Vec<_>>(), time_clip_quantile).unwrap_or(0.0);
    let t_rows = raw_times
        .into_iter()
        .map(|(x, t)| (x, Label::Value(t.min(cap))))
        .collect();
    (p_rows, t_rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupervisedModels {
    pub schema: FeatureSchema,
    pub p_model: ForestModel,
    pub t_model: ForestModel,
}

#[derive(Debug, Clone)]
pub struct SupervisedRecommender {
    /// `None` until there are at least two answers to learn from.
    pub models: Option<SupervisedModels>,
    pub schema: FeatureSchema,
    pub rates: SuccessRates,
    pub profiles: BTreeMap<UserId, BackgroundProfile>,
    pub config: SupervisedConfig,
}

impl SupervisedRecommender {
    /// `profiles` should already be normalized and imputed.
    pub fn train(
        bank: &QuestionBank,
        events: &[InteractionEvent],
        profiles: &[BackgroundProfile],
        config: SupervisedConfig,
    ) -> Result<Self, SupervisedError> {
        if config.t_ref_ms.is_nan() || config.t_ref_ms <= 0.0 {
            return Err(SupervisedError::InvalidConfig("t_ref_ms must be positive".into()));
        }
        let schema = FeatureSchema::from_profiles(profiles);
        let rates = SuccessRates::from_events(events);
        let profiles: BTreeMap<UserId, BackgroundProfile> =
            profiles.iter().map(|p| (p.user_id.clone(), p.clone())).collect();
        let (p_rows, t_rows) = training_rows(bank, events, &profiles, &schema, &rates, config.time_clip_quantile);
        let models = if p_rows.len() < 2 {
            None
        } else {
            let t_config = ForestConfig {
                seed: config.forest.seed.wrapping_add(1),
                ..config.forest
            };
            Some(SupervisedModels {
                schema: schema.clone(),
                p_model: train_forest(&p_rows, &config.forest)?,
                t_model: train_forest(&t_rows, &t_config)?,
            })
        };
        Ok(Self {
            models,
            schema,
            rates,
            profiles,
            config,
        })
    }

    pub fn features(&self, session: &SessionState, candidate: &Question, bank: &QuestionBank) -> Vec<f64> {
        self.schema
            .vector(self.profiles.get(&session.user_id), &session.events, candidate, bank, &self.rates)
    }

    pub fn estimate_candidates(
        &self,
        session: &SessionState,
        pool: &[&Question],
        bank: &QuestionBank,
    ) -> Result<Vec<CandidateEstimate>, SupervisedError> {
        let Some(models) = &self.models else {
            return Ok(Vec::new());
        };
        pool.iter()
            .map(|q| {
                let x = self.features(session, q, bank);
                Ok(CandidateEstimate {
                    question_id: q.id.clone(),
                    p_correct: models.p_model.predict(&x)?.clamp(0.0, 1.0),
                    expected_time_ms: models.t_model.predict(&x)?.max(0.0),
                })
            })
            .collect()
    }

    pub fn recommend(&self, ctx: &RecommendContext<'_>) -> Result<Recommendation, SupervisedError> {
        if ctx.pool.is_empty() {
            return Err(SupervisedError::EmptyPool);
        }
        if self.models.is_none() {
            return fallback_ranking(ctx.pool).ok_or(SupervisedError::EmptyPool);
        }
        let estimates = self.estimate_candidates(ctx.session, ctx.pool, ctx.bank)?;
        let served_correct: BTreeSet<QuestionId> = if self.config.filter_served_correct {
            ctx.prior_events
                .iter()
                .filter(|e| e.outcome.is_correct())
                .map(|e| e.question_id.clone())
                .collect()
        } else {
            BTreeSet::new()
        };
        select_by_heuristic(&estimates, self.config.lambda, self.config.t_ref_ms, &served_correct)
    }
}
