//! Tabular Q-learning over question choices, steered along a planned concept
//! path.

mod planner;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;
use std::sync::{Arc, Mutex};

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

pub use planner::{is_prerequisite_feasible, plan_path_dijkstra, PlanError, PlannedPath, PlannerOptions};

use crate::concept_map::{concept_failure_costs, concept_mastered, AnswerHistory, ConceptMap, MasteryCriterion};
use crate::domain::{ConceptId, InteractionEvent, Outcome, Question, QuestionBank, SessionId, SessionState};
use crate::recommend::{CandidateScore, Recommendation, RecommendContext, ScoreKind};
use crate::stats::SuccessRates;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum RlError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("no candidate questions left")]
    EmptyPool,
    #[error(transparent)]
    Plan(#[from] PlanError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OutcomeFactors {
    pub correct: f64,
    pub wrong: f64,
    pub dont_know: f64,
    pub skipped: f64,
}

impl Default for OutcomeFactors {
    fn default() -> Self {
        Self {
            correct: 1.0,
            wrong: 0.25,
            dont_know: 0.0,
            skipped: 0.0,
        }
    }
}

impl OutcomeFactors {
    pub fn factor(&self, outcome: Outcome) -> f64 {
        match outcome {
            Outcome::Correct => self.correct,
            Outcome::Wrong => self.wrong,
            Outcome::DontKnow => self.dont_know,
            Outcome::Skipped => self.skipped,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RlConfig {
    pub gamma: f64,
    pub alpha_lr: f64,
    pub epsilon: f64,
    /// Multiplier applied to epsilon after every finished episode.
    pub epsilon_decay: f64,
    pub r_complete: f64,
    pub factors: OutcomeFactors,
    /// Penalty per `t_ref_ms` of answer time, saturating at one unit. Off by default.
    pub time_weight: f64,
    pub t_ref_ms: f64,
    pub criterion: MasteryCriterion,
    pub relax_cycles: bool,
}

impl Default for RlConfig {
    fn default() -> Self {
        Self {
            gamma: 0.9,
            alpha_lr: 0.1,
            epsilon: 0.2,
            epsilon_decay: 0.99,
            r_complete: 10.0,
            factors: OutcomeFactors::default(),
            time_weight: 0.0,
            t_ref_ms: 120_000.0,
            criterion: MasteryCriterion::default(),
            relax_cycles: true,
        }
    }
}

impl RlConfig {
    pub fn validate(&self) -> Result<(), RlError> {
        let bad = |m: &str| Err(RlError::InvalidConfig(m.into()));
        if !(0.0..1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1)");
        }
        if !(self.alpha_lr > 0.0 && self.alpha_lr <= 1.0) {
            return bad("alpha_lr must lie in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.epsilon) || !(0.0..=1.0).contains(&self.epsilon_decay) {
            return bad("epsilon and epsilon_decay must lie in [0, 1]");
        }
        if !(self.r_complete.is_finite() && self.t_ref_ms > 0.0) {
            return bad("r_complete must be finite and t_ref_ms positive");
        }
        Ok(())
    }
}

/// Failure-rate-weighted credit for one answer.
pub fn dense_reward(question: &Question, event: &InteractionEvent, rates: &SuccessRates, config: &RlConfig) -> f64 {
    let base = rates.failure_rate(&question.id) * config.factors.factor(event.outcome);
    base - config.time_weight * (event.elapsed_ms as f64 / config.t_ref_ms).min(1.0)
}

/// `r_complete` scaled by the covered share of `required`.
pub fn sparse_reward(path: &[ConceptId], required: &BTreeSet<ConceptId>, r_complete: f64) -> f64 {
    if required.is_empty() {
        return r_complete;
    }
    let covered: BTreeSet<&ConceptId> = path.iter().filter(|c| required.contains(*c)).collect();
    r_complete * covered.len() as f64 / required.len() as f64
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LearningState {
    pub concept_mastery: Vec<bool>,
    /// Correct share of this test's answers in quarters, 0..=4.
    pub progress_bucket: u8,
    pub current_concept: Option<ConceptId>,
}

impl LearningState {
    pub fn progress_bucket(correct: usize, answered: usize) -> u8 {
        if answered == 0 {
            0
        } else {
            ((correct as f64 / answered as f64) * 4.0).floor().min(4.0) as u8
        }
    }

    /// Stable text key: mastery bits, bucket and concept separated by `|`.
    pub fn key(&self) -> String {
        let bits: String = self.concept_mastery.iter().map(|&m| if m { '1' } else { '0' }).collect();
        let concept = self.current_concept.as_ref().map_or("-", |c| c.as_str());
        format!("{bits}|{}|{concept}", self.progress_bucket)
    }
}

/// Q-values keyed by encoded state, then action; unseen pairs read as 0.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct QTable {
    values: BTreeMap<String, BTreeMap<String, f64>>,
}

impl QTable {
    pub fn get(&self, state: &str, action: &str) -> f64 {
        self.values
            .get(state)
            .and_then(|row| row.get(action))
            .copied()
            .unwrap_or(0.0)
    }

    pub fn set(&mut self, state: &str, action: &str, value: f64) {
        self.values
            .entry(state.to_owned())
            .or_default()
            .insert(action.to_owned(), value);
    }

    /// Max over `actions`, or 0 when there are none.
    pub fn max_over<'a, I: IntoIterator<Item = &'a str>>(&self, state: &str, actions: I) -> f64 {
        actions
            .into_iter()
            .map(|a| self.get(state, a))
            .fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.max(v))))
            .unwrap_or(0.0)
    }

    pub fn len(&self) -> usize {
        self.values.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &str, f64)> {
        self.values
            .iter()
            .flat_map(|(s, row)| row.iter().map(move |(a, v)| (s.as_str(), a.as_str(), *v)))
    }

    pub fn to_json(&self) -> serde_json::Result<String> {
        serde_json::to_string_pretty(self)
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        std::fs::write(path, self.to_json().map_err(std::io::Error::other)?)
    }

    pub fn load(path: impl AsRef<Path>) -> std::io::Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?).map_err(std::io::Error::other)
    }
}

/// One temporal-difference step. `next` is `None` at a terminal state.
pub fn q_update(
    table: &mut QTable,
    state: &str,
    action: &str,
    reward: f64,
    next: Option<(&str, &[&str])>,
    gamma: f64,
    alpha_lr: f64,
) {
    let future = next.map_or(0.0, |(s, actions)| table.max_over(s, actions.iter().copied()));
    let q = table.get(state, action);
    table.set(state, action, q + alpha_lr * (reward + gamma * future - q));
}

/// Spreads an end-of-episode reward evenly over the episode's steps.
pub fn distribute_sparse(table: &mut QTable, steps: &[(String, String)], reward: f64, alpha_lr: f64) {
    if steps.is_empty() {
        return;
    }
    let bump = alpha_lr * reward / steps.len() as f64;
    for (s, a) in steps {
        let q = table.get(s, a);
        table.set(s, a, q + bump);
    }
}

/// Mutable learner state; shared by every snapshot of the recommender so that
/// retraining the reward statistics keeps what was learned.
#[derive(Debug, Default)]
pub struct Learner {
    pub table: QTable,
    pub epsilon: f64,
    pub episodes: u64,
    /// (state, action) pairs of each open episode.
    steps: HashMap<SessionId, Vec<(String, String)>>,
}

impl Learner {
    pub fn new(epsilon: f64) -> Self {
        Self {
            epsilon,
            ..Self::default()
        }
    }

    pub fn with_table(table: QTable, epsilon: f64) -> Self {
        Self {
            table,
            epsilon,
            ..Self::default()
        }
    }
}

pub struct RlRecommender {
    map: ConceptMap,
    /// Planned concept order per topic.
    pub plans: BTreeMap<String, Vec<ConceptId>>,
    rates: SuccessRates,
    pub config: RlConfig,
    learner: Arc<Mutex<Learner>>,
}

struct Situation<'q> {
    state: LearningState,
    candidates: Vec<&'q Question>,
}

impl RlRecommender {
    /// Plans a path per topic over the concepts that carry that topic's
    /// questions, with mean failure rates as entry costs.
    pub fn build(
        map: ConceptMap,
        bank: &QuestionBank,
        events: &[InteractionEvent],
        config: RlConfig,
        learner: Arc<Mutex<Learner>>,
    ) -> Result<Self, RlError> {
        config.validate()?;
        let rates = SuccessRates::from_events(events);
        let costs = concept_failure_costs(&map, &rates);
        let opts = PlannerOptions {
            relax_cycles: config.relax_cycles,
            ..PlannerOptions::default()
        };
        let mut plans = BTreeMap::new();
        for topic in bank.topics() {
            let required: BTreeSet<ConceptId> = map
                .concepts()
                .iter()
                .filter(|c| c.question_ids.iter().any(|q| bank.get(q).is_some_and(|q| q.topic == topic)))
                .map(|c| c.id.clone())
                .collect();
            let path = plan_path_dijkstra(&map, &required, &costs, &opts)?;
            plans.insert(topic.to_owned(), path.concepts);
        }
        Ok(Self {
            map,
            plans,
            rates,
            config,
            learner,
        })
    }

    pub fn learner(&self) -> Arc<Mutex<Learner>> {
        Arc::clone(&self.learner)
    }

    pub fn map(&self) -> &ConceptMap {
        &self.map
    }

    /// Concepts a test on `topic` should cover.
    pub fn required(&self, topic: &str) -> BTreeSet<ConceptId> {
        self.plans.get(topic).map(|p| p.iter().cloned().collect()).unwrap_or_default()
    }

    fn situation<'q>(&self, session: &SessionState, prior: &[InteractionEvent], events: &[InteractionEvent], pool: &[&'q Question]) -> Situation<'q> {
        let history = AnswerHistory::from_events(prior.iter().chain(events));
        let mastery: Vec<bool> = self
            .map
            .concepts()
            .iter()
            .map(|c| concept_mastered(c, &history, &self.config.criterion))
            .collect();
        let correct = events.iter().filter(|e| e.outcome.is_correct()).count();
        let plan = self.plans.get(&session.topic).map(Vec::as_slice).unwrap_or(&[]);
        let current = plan.iter().find_map(|c| {
            let i = self.map.index_of(c)?;
            if mastery[i] {
                return None;
            }
            let concept = &self.map.concepts()[i];
            let qs: Vec<&Question> = pool.iter().copied().filter(|q| concept.question_ids.contains(&q.id)).collect();
            (!qs.is_empty()).then(|| (c.clone(), qs))
        });
        let (current_concept, candidates) = match current {
            Some((c, qs)) => (Some(c), qs),
            None => (None, pool.to_vec()),
        };
        Situation {
            state: LearningState {
                concept_mastery: mastery,
                progress_bucket: LearningState::progress_bucket(correct, events.len()),
                current_concept,
            },
            candidates,
        }
    }

    pub fn state(&self, ctx: &RecommendContext<'_>) -> LearningState {
        self.situation(ctx.session, ctx.prior_events, &ctx.session.events, ctx.pool).state
    }

    /// Epsilon-greedy over the current concept's unasked questions; exploitation
    /// takes the highest Q-value, smallest id on ties.
    pub fn recommend(&self, ctx: &RecommendContext<'_>, rng: &mut dyn RngCore) -> Result<Recommendation, RlError> {
        if ctx.pool.is_empty() {
            return Err(RlError::EmptyPool);
        }
        let sit = self.situation(ctx.session, ctx.prior_events, &ctx.session.events, ctx.pool);
        let key = sit.state.key();
        let (epsilon, scores) = {
            let learner = self.learner.lock().expect("learner lock");
            let scores: Vec<CandidateScore> = sit
                .candidates
                .iter()
                .map(|q| CandidateScore::new(q.id.clone(), learner.table.get(&key, q.id.as_str())))
                .collect();
            (learner.epsilon, scores)
        };
        let explore = epsilon > 0.0 && rng.random::<f64>() < epsilon;
        let concept = sit.state.current_concept.clone();
        if explore {
            let pick = sit.candidates[rng.random_range(0..sit.candidates.len())].id.clone();
            Ok(Recommendation::with_pick(ScoreKind::QValue, pick, scores, concept))
        } else {
            Recommendation::ranked(ScoreKind::QValue, scores, concept).ok_or(RlError::EmptyPool)
        }
    }

    /// Temporal-difference update for the answer just recorded.
    pub fn observe(&self, ctx: &RecommendContext<'_>, event: &InteractionEvent) {
        let Some(question) = ctx.bank.get(&event.question_id) else { return };
        let events = &ctx.session.events;
        let before = &events[..events.len().saturating_sub(1)];
        let mut pool_before: Vec<&Question> = ctx.pool.to_vec();
        pool_before.push(question);
        pool_before.sort_by(|a, b| a.id.cmp(&b.id));
        let s = self.situation(ctx.session, ctx.prior_events, before, &pool_before).state.key();
        let reward = dense_reward(question, event, &self.rates, &self.config);
        let next = (!ctx.session.finished && !ctx.pool.is_empty())
            .then(|| self.situation(ctx.session, ctx.prior_events, events, ctx.pool));
        let mut learner = self.learner.lock().expect("learner lock");
        match &next {
            Some(n) => {
                let key = n.state.key();
                let actions: Vec<&str> = n.candidates.iter().map(|q| q.id.as_str()).collect();
                q_update(&mut learner.table, &s, event.question_id.as_str(), reward, Some((&key, &actions)), self.config.gamma, self.config.alpha_lr);
            }
            None => q_update(&mut learner.table, &s, event.question_id.as_str(), reward, None, self.config.gamma, self.config.alpha_lr),
        }
        learner
            .steps
            .entry(ctx.session.session_id.clone())
            .or_default()
            .push((s, event.question_id.to_string()));
    }

    /// Credits the episode with the share of required concepts it touched and
    /// decays exploration.
    pub fn finish(&self, ctx: &RecommendContext<'_>) {
        let mut path: Vec<ConceptId> = Vec::new();
        for e in &ctx.session.events {
            for i in self.map.concepts_of(&e.question_id) {
                let id = &self.map.concepts()[i].id;
                if !path.contains(id) {
                    path.push(id.clone());
                }
            }
        }
        let reward = sparse_reward(&path, &self.required(&ctx.session.topic), self.config.r_complete);
        let mut learner = self.learner.lock().expect("learner lock");
        let steps = learner.steps.remove(&ctx.session.session_id).unwrap_or_default();
        distribute_sparse(&mut learner.table, &steps, reward, self.config.alpha_lr);
        learner.epsilon *= self.config.epsilon_decay;
        learner.episodes += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    #[test]
    fn q_update_cases() {
        let mut t = QTable::default();
        q_update(&mut t, "s", "a", 1.0, None, 0.0, 1.0);
        assert_eq!(t.get("s", "a"), 1.0);
        let mut z = QTable::default();
        q_update(&mut z, "s", "a", 0.0, Some(("s2", &["x", "y"])), 0.9, 0.5);
        assert_eq!(z.get("s", "a"), 0.0);
        assert_eq!(z.get("never", "seen"), 0.0);
    }

    #[test]
    fn sparse_reward_cases() {
        let req: BTreeSet<ConceptId> = (0..12).map(|i| ConceptId::from(format!("T{i}"))).collect();
        let all: Vec<ConceptId> = req.iter().cloned().collect();
        assert_eq!(sparse_reward(&all, &req, 10.0), 10.0);
        assert_eq!(sparse_reward(&[], &req, 10.0), 0.0);
        assert_eq!(sparse_reward(&all[..6], &req, 10.0), 5.0);
    }

    #[test]
    fn progress_buckets() {
        assert_eq!(LearningState::progress_bucket(0, 0), 0);
        assert_eq!(LearningState::progress_bucket(1, 4), 1);
        assert_eq!(LearningState::progress_bucket(2, 3), 2);
        assert_eq!(LearningState::progress_bucket(5, 5), 4);
    }

    #[test]
    fn table_json_round_trip() {
        let mut t = QTable::default();
        t.set("01|2|A", "Q7", 0.125);
        t.set("01|2|A", "Q8", -1.5);
        let back = QTable::from_json(&t.to_json().unwrap()).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.len(), 2);
    }

    #[test]
    fn config_validation() {
        assert!(RlConfig::default().validate().is_ok());
        assert!(RlConfig { gamma: 1.0, ..RlConfig::default() }.validate().is_err());
        assert!(RlConfig { alpha_lr: 0.0, ..RlConfig::default() }.validate().is_err());
    }
}
