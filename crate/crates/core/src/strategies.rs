//! The six registered strategies behind one interface, and a factory that
//! builds them from the bank, concept map and event log.

use std::sync::{Arc, Mutex};

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::background::BackgroundProfile;
use crate::cluster::{ClusterConfig, ClusterError, ClusterRecommender};
use crate::collab::{CollabConfig, CollabError, CollabFilter};
use crate::concept_map::{
    ConceptMap, ConceptMapRecommender, IndicatorWeights, MasteryCriterion, MasteryScope, WalkError, WalkOutcome,
};
use crate::domain::{InteractionEvent, Question, QuestionBank};
use crate::recommend::{
    fallback_ranking, CandidateScore, Layer, RecommendContext, Recommendation, ScoreKind, Strategy, StrategyError,
};
use crate::rl::{Learner, RlConfig, RlError, RlRecommender};
use crate::stats::SuccessRates;
use crate::supervised::{SupervisedConfig, SupervisedError, SupervisedRecommender};

pub const CONCEPT_MAP: &str = "concept_map";
pub const COLLABORATIVE_FILTERING: &str = "collaborative_filtering";
pub const CLUSTERING: &str = "clustering";
pub const SUPERVISED: &str = "supervised";
pub const REINFORCEMENT_LEARNING: &str = "reinforcement_learning";
pub const RANDOM: &str = "random";

/// Registered names with their layer, in listing order.
pub const REGISTRY: [(&str, Layer); 6] = [
    (CONCEPT_MAP, Layer::Top),
    (COLLABORATIVE_FILTERING, Layer::Bottom),
    (CLUSTERING, Layer::Top),
    (SUPERVISED, Layer::Bottom),
    (REINFORCEMENT_LEARNING, Layer::Top),
    (RANDOM, Layer::Control),
];

pub fn layer_of(name: &str) -> Option<Layer> {
    REGISTRY.iter().find(|(n, _)| *n == name).map(|(_, l)| *l)
}

/// Strategies whose model is refitted from the event log on demand.
pub fn is_trainable(name: &str) -> bool {
    matches!(name, COLLABORATIVE_FILTERING | SUPERVISED | REINFORCEMENT_LEARNING)
}

#[derive(Debug, thiserror::Error)]
pub enum BuildError {
    #[error("unknown strategy `{0}`")]
    UnknownStrategy(String),
    #[error(transparent)]
    Collab(#[from] CollabError),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error(transparent)]
    Supervised(#[from] SupervisedError),
    #[error(transparent)]
    Rl(#[from] RlError),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConceptMapConfig {
    pub criterion: MasteryCriterion,
    pub weights: IndicatorWeights,
    pub scope: MasteryScope,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StrategyConfig {
    pub concept_map: ConceptMapConfig,
    pub collaborative_filtering: CollabConfig,
    pub clustering: ClusterConfig,
    pub supervised: SupervisedConfig,
    pub reinforcement_learning: RlConfig,
}

/// Inputs every strategy is built from.
#[derive(Clone, Copy)]
pub struct TrainingData<'a> {
    pub bank: &'a QuestionBank,
    pub map: &'a ConceptMap,
    pub events: &'a [InteractionEvent],
    pub profiles: &'a [BackgroundProfile],
}

/// Builds strategies by name. The Q-table outlives rebuilds: every RL strategy
/// made by one factory shares the same learner.
pub struct StrategyFactory {
    pub config: StrategyConfig,
    learner: Arc<Mutex<Learner>>,
}

impl StrategyFactory {
    pub fn new(config: StrategyConfig) -> Self {
        let learner = Learner::new(config.reinforcement_learning.epsilon);
        Self::with_learner(config, learner)
    }

    pub fn with_learner(config: StrategyConfig, learner: Learner) -> Self {
        Self {
            config,
            learner: Arc::new(Mutex::new(learner)),
        }
    }

    pub fn learner(&self) -> Arc<Mutex<Learner>> {
        Arc::clone(&self.learner)
    }

    pub fn build(&self, name: &str, data: TrainingData<'_>) -> Result<Arc<dyn Strategy>, BuildError> {
        let cfg = &self.config;
        Ok(match name {
            CONCEPT_MAP => {
                let rates = SuccessRates::from_events(data.events);
                let mut rec = ConceptMapRecommender::new(data.map.clone(), Box::new(rates));
                rec.criterion = cfg.concept_map.criterion;
                rec.weights = cfg.concept_map.weights;
                rec.scope = cfg.concept_map.scope;
                Arc::new(ConceptMapStrategy(rec))
            }
            COLLABORATIVE_FILTERING => {
                match CollabFilter::train(data.events, data.bank, cfg.collaborative_filtering) {
                    Ok(filter) => Arc::new(CollabStrategy(Some(filter))),
                    // Nothing to learn from yet.
                    Err(CollabError::EmptyMatrix) => Arc::new(CollabStrategy(None)),
                    Err(e) => return Err(e.into()),
                }
            }
            CLUSTERING => Arc::new(ClusterRecommender::build(data.bank, data.events, &cfg.clustering)?),
            SUPERVISED => Arc::new(SupervisedRecommender::train(
                data.bank,
                data.events,
                data.profiles,
                cfg.supervised,
            )?),
            REINFORCEMENT_LEARNING => Arc::new(RlRecommender::build(
                data.map.clone(),
                data.bank,
                data.events,
                cfg.reinforcement_learning,
                self.learner(),
            )?),
            RANDOM => Arc::new(RandomStrategy),
            other => return Err(BuildError::UnknownStrategy(other.to_owned())),
        })
    }
}

fn failed(e: impl std::fmt::Display) -> StrategyError {
    StrategyError::Failed(e.to_string())
}

/// The graph walk. Once every concept of the topic is mastered, or the concepts
/// have no unasked questions left, the rest of the test uses the cold-start order.
pub struct ConceptMapStrategy(pub ConceptMapRecommender);

impl Strategy for ConceptMapStrategy {
    fn name(&self) -> &'static str {
        CONCEPT_MAP
    }

    fn layer(&self) -> Layer {
        Layer::Top
    }

    fn recommend(&self, ctx: &RecommendContext<'_>, _rng: &mut dyn RngCore) -> Result<Recommendation, StrategyError> {
        if ctx.pool.is_empty() {
            return Err(StrategyError::EmptyPool);
        }
        match self.0.recommend(ctx) {
            Ok(WalkOutcome::Next(rec)) => Ok(rec),
            Ok(WalkOutcome::Done) | Err(WalkError::PoolExhausted) => {
                fallback_ranking(ctx.pool).ok_or(StrategyError::EmptyPool)
            }
            Err(e) => Err(failed(e)),
        }
    }
}

/// Collaborative filtering, or the cold-start order before any rating exists.
pub struct CollabStrategy(pub Option<CollabFilter>);

impl Strategy for CollabStrategy {
    fn name(&self) -> &'static str {
        COLLABORATIVE_FILTERING
    }

    fn layer(&self) -> Layer {
        Layer::Bottom
    }

    fn recommend(&self, ctx: &RecommendContext<'_>, _rng: &mut dyn RngCore) -> Result<Recommendation, StrategyError> {
        match &self.0 {
            Some(filter) => filter.recommend(ctx).map_err(|e| match e {
                CollabError::EmptyPool => StrategyError::EmptyPool,
                e => failed(e),
            }),
            None => fallback_ranking(ctx.pool).ok_or(StrategyError::EmptyPool),
        }
    }

    fn snapshot(&self) -> Option<serde_json::Value> {
        self.0.as_ref().and_then(|f| serde_json::to_value(&f.model).ok())
    }
}

impl Strategy for ClusterRecommender {
    fn name(&self) -> &'static str {
        CLUSTERING
    }

    fn layer(&self) -> Layer {
        Layer::Top
    }

    fn recommend(&self, ctx: &RecommendContext<'_>, _rng: &mut dyn RngCore) -> Result<Recommendation, StrategyError> {
        ClusterRecommender::recommend(self, ctx).map_err(|e| match e {
            ClusterError::EmptyPool => StrategyError::EmptyPool,
            e => failed(e),
        })
    }
}

impl Strategy for SupervisedRecommender {
    fn name(&self) -> &'static str {
        SUPERVISED
    }

    fn layer(&self) -> Layer {
        Layer::Bottom
    }

    fn recommend(&self, ctx: &RecommendContext<'_>, _rng: &mut dyn RngCore) -> Result<Recommendation, StrategyError> {
        SupervisedRecommender::recommend(self, ctx).map_err(|e| match e {
            SupervisedError::EmptyPool | SupervisedError::EmptyEstimates => StrategyError::EmptyPool,
            e => failed(e),
        })
    }

    fn snapshot(&self) -> Option<serde_json::Value> {
        self.models.as_ref().and_then(|m| serde_json::to_value(m).ok())
    }
}

impl Strategy for RlRecommender {
    fn name(&self) -> &'static str {
        REINFORCEMENT_LEARNING
    }

    fn layer(&self) -> Layer {
        Layer::Top
    }

    fn recommend(&self, ctx: &RecommendContext<'_>, rng: &mut dyn RngCore) -> Result<Recommendation, StrategyError> {
        RlRecommender::recommend(self, ctx, rng).map_err(|e| match e {
            RlError::EmptyPool => StrategyError::EmptyPool,
            e => failed(e),
        })
    }

    fn observe(&self, ctx: &RecommendContext<'_>, event: &InteractionEvent) {
        RlRecommender::observe(self, ctx, event);
    }

    fn finish(&self, ctx: &RecommendContext<'_>) {
        RlRecommender::finish(self, ctx);
    }

    fn snapshot(&self) -> Option<serde_json::Value> {
        let learner = self.learner();
        let guard = learner.lock().ok()?;
        serde_json::to_value(&guard.table).ok()
    }
}

/// Uniform draw from the pool.
pub fn random_baseline(pool: &[&Question], rng: &mut dyn RngCore) -> Result<Recommendation, StrategyError> {
    if pool.is_empty() {
        return Err(StrategyError::EmptyPool);
    }
    let pick = pool[rng.random_range(0..pool.len())].id.clone();
    let share = 1.0 / pool.len() as f64;
    let scores = pool.iter().map(|q| CandidateScore::new(q.id.clone(), share)).collect();
    Ok(Recommendation::with_pick(ScoreKind::Uniform, pick, scores, None))
}

pub struct RandomStrategy;

impl Strategy for RandomStrategy {
    fn name(&self) -> &'static str {
        RANDOM
    }

    fn layer(&self) -> Layer {
        Layer::Control
    }

    fn recommend(&self, ctx: &RecommendContext<'_>, rng: &mut dyn RngCore) -> Result<Recommendation, StrategyError> {
        random_baseline(ctx.pool, rng)
    }
}
