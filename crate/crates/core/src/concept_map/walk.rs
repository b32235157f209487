use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::{Concept, ConceptMap};
use crate::domain::{ConceptId, InteractionEvent, Question, QuestionId};
use crate::recommend::{CandidateScore, RecommendContext, Recommendation, ScoreKind};
use crate::stats::SuccessRates;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum WalkError {
    #[error("no concept has all prerequisites satisfied; blocked: {0:?}")]
    Stuck(Vec<ConceptId>),
    #[error("concept {0} has no unasked questions")]
    ConceptExhausted(ConceptId),
    #[error("every concept is exhausted")]
    PoolExhausted,
    #[error("mastery thresholds must lie in (0, 1]")]
    InvalidCriterion,
}

/// Explicit rule for when a concept counts as learned.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MasteryCriterion {
    pub min_correct_fraction: f64,
    pub min_coverage_fraction: f64,
}

impl Default for MasteryCriterion {
    fn default() -> Self {
        Self {
            min_correct_fraction: 0.7,
            min_coverage_fraction: 0.5,
        }
    }
}

impl MasteryCriterion {
    pub fn new(min_correct_fraction: f64, min_coverage_fraction: f64) -> Result<Self, WalkError> {
        let ok = |x: f64| x > 0.0 && x <= 1.0;
        if ok(min_correct_fraction) && ok(min_coverage_fraction) {
            Ok(Self {
                min_correct_fraction,
                min_coverage_fraction,
            })
        } else {
            Err(WalkError::InvalidCriterion)
        }
    }
}

/// Which answers count as evidence of mastery.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MasteryScope {
    /// Only answers given in the current test.
    Session,
    /// The user's earlier tests plus the current one.
    #[default]
    Cumulative,
}

/// Latest answer per question. Skipped questions are not answers.
#[derive(Debug, Clone, Default)]
pub struct AnswerHistory {
    latest: HashMap<QuestionId, bool>,
}

impl AnswerHistory {
    /// Events must be in chronological order; later answers replace earlier ones.
    pub fn from_events<'a, I: IntoIterator<Item = &'a InteractionEvent>>(events: I) -> Self {
        let mut latest = HashMap::new();
        for e in events.into_iter().filter(|e| e.outcome.is_attempt()) {
            latest.insert(e.question_id.clone(), e.outcome.is_correct());
        }
        Self { latest }
    }

    /// `Some(correct)` if the question has been answered.
    pub fn answered(&self, q: &QuestionId) -> Option<bool> {
        self.latest.get(q).copied()
    }

    fn concept_stats(&self, concept: &Concept) -> (usize, usize) {
        concept
            .question_ids
            .iter()
            .filter_map(|q| self.answered(q))
            .fold((0, 0), |(answered, correct), c| (answered + 1, correct + c as usize))
    }
}

pub fn concept_mastered(concept: &Concept, history: &AnswerHistory, criterion: &MasteryCriterion) -> bool {
    let (answered, correct) = history.concept_stats(concept);
    if answered == 0 {
        return false;
    }
    let coverage = answered as f64 / concept.question_ids.len() as f64;
    let accuracy = correct as f64 / answered as f64;
    coverage >= criterion.min_coverage_fraction && accuracy >= criterion.min_correct_fraction
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NextConcept {
    Concept(ConceptId),
    Done,
}

/// The unmastered concept whose prerequisites are all mastered and that receives
/// the most arc weight from mastered concepts; ties go to the smallest id.
pub fn next_concept(map: &ConceptMap, mastered: &BTreeSet<ConceptId>) -> Result<NextConcept, WalkError> {
    let flags: Vec<bool> = map.concepts().iter().map(|c| mastered.contains(&c.id)).collect();
    match pick_concept(map, &flags, &flags)? {
        Some(i) => Ok(NextConcept::Concept(map.concepts()[i].id.clone())),
        None => Ok(NextConcept::Done),
    }
}

/// `retired` concepts (mastered or used up) satisfy prerequisites and are not
/// candidates; only `mastered` ones contribute arc weight to the ranking.
fn pick_concept(map: &ConceptMap, mastered: &[bool], retired: &[bool]) -> Result<Option<usize>, WalkError> {
    let open: Vec<usize> = (0..map.len()).filter(|&i| !retired[i]).collect();
    if open.is_empty() {
        return Ok(None);
    }
    let best = open
        .iter()
        .copied()
        .filter(|&i| map.prerequisites(i).all(|(p, _)| retired[p]))
        .map(|i| {
            let pull: f64 = map.incoming(i).iter().filter(|(p, _)| mastered[*p]).map(|(_, w)| w).sum();
            (i, pull)
        })
        // max pull, earliest index on ties
        .fold(None::<(usize, f64)>, |best, (i, pull)| match best {
            Some((_, bp)) if bp >= pull => best,
            _ => Some((i, pull)),
        });
    match best {
        Some((i, _)) => Ok(Some(i)),
        None => Err(WalkError::Stuck(open.iter().map(|&i| map.concepts()[i].id.clone()).collect())),
    }
}

/// Population success rate, or any personalised estimate, of answering correctly.
pub trait CorrectnessEstimator: Send + Sync {
    fn p_correct(&self, question: &Question, ctx: &RecommendContext<'_>) -> f64;
}

impl CorrectnessEstimator for SuccessRates {
    fn p_correct(&self, question: &Question, _ctx: &RecommendContext<'_>) -> f64 {
        self.rate(&question.id)
    }
}

/// Learning indicators for one candidate question. All components lie in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IndicatorProfile {
    /// Correct fraction of answered questions in the concept so far.
    pub correct_fraction: f64,
    /// Answered fraction of the concept's questions.
    pub coverage: f64,
    pub p_correct_estimate: f64,
    /// Share of the question's keywords not yet seen in this test.
    pub keyword_novelty: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IndicatorWeights {
    pub p_correct: f64,
    pub keyword_novelty: f64,
}

impl Default for IndicatorWeights {
    fn default() -> Self {
        Self {
            p_correct: 0.7,
            keyword_novelty: 0.3,
        }
    }
}

impl IndicatorWeights {
    pub fn scalarize(&self, p: &IndicatorProfile) -> f64 {
        self.p_correct * p.p_correct_estimate + self.keyword_novelty * p.keyword_novelty
    }
}

/// Greedy bottom-level step: the unasked question of `concept` with the best
/// scalarized indicator profile, ties to the smallest id.
pub fn next_question_in_concept(
    concept: &Concept,
    ctx: &RecommendContext<'_>,
    history: &AnswerHistory,
    estimator: &dyn CorrectnessEstimator,
    weights: &IndicatorWeights,
) -> Result<Recommendation, WalkError> {
    let covered: BTreeSet<&String> = ctx
        .session
        .asked
        .iter()
        .filter_map(|id| ctx.bank.get(id))
        .flat_map(|q| q.keywords.iter())
        .collect();
    let (answered, correct) = history.concept_stats(concept);
    let coverage = answered as f64 / concept.question_ids.len() as f64;
    let correct_fraction = if answered == 0 { 0.0 } else { correct as f64 / answered as f64 };
    let scores: Vec<CandidateScore> = ctx
        .pool
        .iter()
        .filter(|q| concept.question_ids.contains(&q.id))
        .map(|q| {
            let seen = q.keywords.iter().filter(|k| covered.contains(k)).count();
            let profile = IndicatorProfile {
                correct_fraction,
                coverage,
                p_correct_estimate: estimator.p_correct(q, ctx).clamp(0.0, 1.0),
                keyword_novelty: 1.0 - seen as f64 / q.keywords.len() as f64,
            };
            CandidateScore::new(q.id.clone(), weights.scalarize(&profile))
        })
        .collect();
    Recommendation::ranked(ScoreKind::Indicator, scores, Some(concept.id.clone()))
        .ok_or_else(|| WalkError::ConceptExhausted(concept.id.clone()))
}

#[derive(Debug, Clone, PartialEq)]
pub enum WalkOutcome {
    Next(Recommendation),
    /// Every concept of the topic is mastered.
    Done,
}

/// Two-level walk: a prerequisite-respecting tour over concepts on top, a greedy
/// indicator-maximising choice of question inside the current concept below.
///
/// The walk state is recomputed from the answer history on every call, so equal
/// histories give equal recommendations. A concept whose questions have all been
/// served this test is retired: it unblocks its successors and is not re-entered
/// within the test.
pub struct ConceptMapRecommender {
    map: ConceptMap,
    pub criterion: MasteryCriterion,
    pub weights: IndicatorWeights,
    pub scope: MasteryScope,
    estimator: Box<dyn CorrectnessEstimator>,
}

impl ConceptMapRecommender {
    pub fn new(map: ConceptMap, estimator: Box<dyn CorrectnessEstimator>) -> Self {
        Self {
            map,
            criterion: MasteryCriterion::default(),
            weights: IndicatorWeights::default(),
            scope: MasteryScope::default(),
            estimator,
        }
    }

    pub fn map(&self) -> &ConceptMap {
        &self.map
    }

    pub fn history(&self, ctx: &RecommendContext<'_>) -> AnswerHistory {
        match self.scope {
            MasteryScope::Session => AnswerHistory::from_events(&ctx.session.events),
            MasteryScope::Cumulative => {
                AnswerHistory::from_events(ctx.prior_events.iter().chain(&ctx.session.events))
            }
        }
    }

    pub fn recommend(&self, ctx: &RecommendContext<'_>) -> Result<WalkOutcome, WalkError> {
        let history = self.history(ctx);
        let concepts = self.map.concepts();
        let in_topic = |c: &Concept| {
            c.question_ids
                .iter()
                .any(|q| ctx.bank.get(q).is_some_and(|q| q.topic == ctx.session.topic))
        };
        let relevant: Vec<bool> = concepts.iter().map(in_topic).collect();
        let mastered: Vec<bool> = concepts
            .iter()
            .map(|c| concept_mastered(c, &history, &self.criterion))
            .collect();
        if (0..concepts.len()).all(|i| !relevant[i] || mastered[i]) {
            return Ok(WalkOutcome::Done);
        }
        let pool_ids: BTreeSet<&QuestionId> = ctx.pool.iter().map(|q| &q.id).collect();
        let retired: Vec<bool> = (0..concepts.len())
            .map(|i| {
                !relevant[i]
                    || mastered[i]
                    || !concepts[i].question_ids.iter().any(|q| pool_ids.contains(q))
            })
            .collect();
        let pick = match pick_concept(&self.map, &mastered, &retired) {
            Ok(Some(i)) => i,
            Ok(None) => return Err(WalkError::PoolExhausted),
            // Unreachable when cycles are condensed; fall back to the open concept
            // with the fewest unsatisfied prerequisites.
            Err(WalkError::Stuck(_)) => (0..concepts.len())
                .filter(|&i| !retired[i])
                .min_by_key(|&i| self.map.prerequisites(i).filter(|(p, _)| !retired[*p]).count())
                .ok_or(WalkError::PoolExhausted)?,
            Err(e) => return Err(e),
        };
        next_question_in_concept(&concepts[pick], ctx, &history, self.estimator.as_ref(), &self.weights)
            .map(WalkOutcome::Next)
    }
}
