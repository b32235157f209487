use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::{Rng, RngCore};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::concept_map::ConceptMap;
use crate::domain::{Difficulty, InteractionEvent, Outcome, Question, QuestionBank, QuestionId, SessionId, UserId};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum StudentError {
    #[error("discrimination must be positive, got {0}")]
    Discrimination(f64),
    #[error("dont_know_rate must lie in [0, 1], got {0}")]
    DontKnowRate(f64),
    #[error("skill_sd must be non-negative, got {0}")]
    SkillSd(f64),
}

/// Response time: a base, an extra for difficult items, and uniform jitter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TimeModel {
    pub base_ms: u64,
    pub difficult_extra_ms: u64,
    pub jitter_ms: u64,
}

impl Default for TimeModel {
    fn default() -> Self {
        Self {
            base_ms: 20_000,
            difficult_extra_ms: 15_000,
            jitter_ms: 10_000,
        }
    }
}

pub fn difficulty_offset(d: Difficulty) -> f64 {
    match d {
        Difficulty::Basic => 0.0,
        Difficulty::Difficult => 1.0,
    }
}

pub fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatedStudent {
    pub id: UserId,
    /// Latent ability per keyword; absent keywords count as 0.
    pub skill: BTreeMap<String, f64>,
    pub discrimination: f64,
    pub dont_know_rate: f64,
    pub time: TimeModel,
}

impl SimulatedStudent {
    pub fn new(
        id: impl Into<UserId>,
        skill: BTreeMap<String, f64>,
        discrimination: f64,
        dont_know_rate: f64,
        time: TimeModel,
    ) -> Result<Self, StudentError> {
        if !(discrimination > 0.0 && discrimination.is_finite()) {
            return Err(StudentError::Discrimination(discrimination));
        }
        if !(0.0..=1.0).contains(&dont_know_rate) {
            return Err(StudentError::DontKnowRate(dont_know_rate));
        }
        Ok(Self {
            id: id.into(),
            skill,
            discrimination,
            dont_know_rate,
            time,
        })
    }

    pub fn skill_of(&self, keyword: &str) -> f64 {
        self.skill.get(keyword).copied().unwrap_or(0.0)
    }

    pub fn mean_skill<'a>(&self, keywords: impl IntoIterator<Item = &'a String>) -> f64 {
        let (sum, n) = keywords
            .into_iter()
            .fold((0.0, 0usize), |(s, n), k| (s + self.skill_of(k), n + 1));
        if n == 0 {
            0.0
        } else {
            sum / n as f64
        }
    }

    /// Two-parameter logistic response probability.
    pub fn p_correct(&self, question: &Question) -> f64 {
        logistic(self.discrimination * (self.mean_skill(&question.keywords) - difficulty_offset(question.difficulty)))
    }

    /// Draws an outcome, then a response time. Consumes the same number of
    /// random draws whatever the outcome, so runs stay aligned across strategies.
    pub fn simulate_answer(
        &self,
        question: &Question,
        session_id: &SessionId,
        timestamp: i64,
        rng: &mut dyn RngCore,
    ) -> InteractionEvent {
        let u: f64 = rng.random();
        let v: f64 = rng.random();
        let outcome = if u < self.p_correct(question) {
            Outcome::Correct
        } else if v < self.dont_know_rate {
            Outcome::DontKnow
        } else {
            Outcome::Wrong
        };
        let extra = if question.difficulty.is_difficult() {
            self.time.difficult_extra_ms
        } else {
            0
        };
        let jitter = rng.random_range(0..=self.time.jitter_ms);
        let clicks = rng.random_range(1..=3);
        InteractionEvent {
            user_id: self.id.clone(),
            session_id: session_id.clone(),
            question_id: question.id.clone(),
            outcome,
            elapsed_ms: self.time.base_ms + extra + jitter,
            click_count: clicks,
            timestamp,
        }
    }

    /// Practice raises skill on the question's keywords, but only at the full
    /// rate once every prerequisite concept is latently known.
    pub fn learn(&mut self, question: &Question, curriculum: &Curriculum, model: &LearningModel) {
        let ready = curriculum
            .prerequisite_keywords(&question.id)
            .iter()
            .all(|kws| self.mean_skill(kws) >= model.known_threshold);
        let gain = if ready { model.gain } else { model.blocked_gain };
        for k in &question.keywords {
            let s = self.skill.entry(k.clone()).or_insert(0.0);
            *s = (*s + gain).min(model.max_skill);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearningModel {
    /// Skill gained per attempt when prerequisites are known.
    pub gain: f64,
    /// Skill gained per attempt otherwise.
    pub blocked_gain: f64,
    /// Mean keyword skill at which a concept counts as known.
    pub known_threshold: f64,
    pub max_skill: f64,
}

impl Default for LearningModel {
    fn default() -> Self {
        Self {
            gain: 0.4,
            blocked_gain: 0.0,
            known_threshold: 0.0,
            max_skill: 4.0,
        }
    }
}

/// For each question, the keyword sets of the prerequisite concepts of every
/// concept it belongs to.
#[derive(Debug, Clone, Default)]
pub struct Curriculum {
    prerequisites: HashMap<QuestionId, Vec<BTreeSet<String>>>,
}

impl Curriculum {
    pub fn new(map: &ConceptMap, bank: &QuestionBank) -> Self {
        let concept_keywords: Vec<BTreeSet<String>> = map
            .concepts()
            .iter()
            .map(|c| {
                c.question_ids
                    .iter()
                    .filter_map(|q| bank.get(q))
                    .flat_map(|q| q.keywords.iter().cloned())
                    .collect()
            })
            .collect();
        let prerequisites = bank
            .questions()
            .iter()
            .map(|q| {
                let sets = map
                    .concepts_of(&q.id)
                    .into_iter()
                    .flat_map(|c| map.prerequisites(c).map(|(p, _)| p).collect::<Vec<_>>())
                    .collect::<BTreeSet<usize>>()
                    .into_iter()
                    .map(|p| concept_keywords[p].clone())
                    .collect();
                (q.id.clone(), sets)
            })
            .collect();
        Self { prerequisites }
    }

    pub fn prerequisite_keywords(&self, q: &QuestionId) -> &[BTreeSet<String>] {
        self.prerequisites.get(q).map_or(&[], Vec::as_slice)
    }
}

/// Distribution the simulated population is drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StudentProfile {
    pub skill_mean: f64,
    pub skill_sd: f64,
    pub discrimination: f64,
    pub dont_know_rate: f64,
    pub time: TimeModel,
    pub learning: LearningModel,
}

impl Default for StudentProfile {
    fn default() -> Self {
        Self {
            skill_mean: -1.0,
            skill_sd: 0.5,
            discrimination: 1.5,
            dont_know_rate: 0.2,
            time: TimeModel::default(),
            learning: LearningModel::default(),
        }
    }
}

/// `n` students with ids `{prefix}000`, `{prefix}001`, ... and independent
/// normal skills on every keyword.
pub fn generate_population(
    n: usize,
    prefix: &str,
    keywords: &BTreeSet<String>,
    profile: &StudentProfile,
    rng: &mut dyn RngCore,
) -> Result<Vec<SimulatedStudent>, StudentError> {
    let normal = Normal::new(profile.skill_mean, profile.skill_sd).map_err(|_| StudentError::SkillSd(profile.skill_sd))?;
    (0..n)
        .map(|i| {
            let skill = keywords.iter().map(|k| (k.clone(), normal.sample(&mut *rng))).collect();
            SimulatedStudent::new(
                format!("{prefix}{i:03}"),
                skill,
                profile.discrimination,
                profile.dont_know_rate,
                profile.time,
            )
        })
        .collect()
}
