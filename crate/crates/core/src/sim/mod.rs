//! Synthetic students and the experiment runner that benchmarks strategies
//! against them.

mod student;

pub use student::{
    difficulty_offset, generate_population, logistic, Curriculum, LearningModel, SimulatedStudent, StudentError,
    StudentProfile, TimeModel,
};

use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::concept_map::{concept_mastered, load_concept_map, AnswerHistory, Concept, ConceptMap, MasteryCriterion};
use crate::domain::{InteractionEvent, Outcome, QuestionBank, QuestionId, SessionId, SessionState, UserId};
use crate::ingest::load_question_bank;
use crate::recommend::{RecommendContext, Strategy, StrategyError};
use crate::strategies::{layer_of, random_baseline, BuildError, StrategyConfig, StrategyFactory, TrainingData};

pub const RESULTS_HEADER: &str = "strategy,student,seed,questions_to_mastery,correct_rate,coverage";

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("config field `{field}`: {message}")]
    Config { field: &'static str, message: String },
    #[error("cannot load {what}: {message}")]
    Load { what: &'static str, message: String },
    #[error(transparent)]
    Build(#[from] BuildError),
    #[error("strategy {strategy} failed: {source}")]
    Strategy {
        strategy: String,
        #[source]
        source: StrategyError,
    },
    #[error("strategy {strategy} recommended {question}, which is not an unasked question of the topic")]
    OutOfPool { strategy: String, question: QuestionId },
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

fn config_error(field: &'static str, message: impl Into<String>) -> SimError {
    SimError::Config {
        field,
        message: message.into(),
    }
}

/// Input files. Relative paths are resolved against the config file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataPaths {
    pub bank: PathBuf,
    pub concept_nodes: PathBuf,
    pub concept_arcs: PathBuf,
}

/// Students who take random tests before the experiment so that data-driven
/// strategies have something to train on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WarmupConfig {
    pub students: usize,
    pub sessions: usize,
}

impl Default for WarmupConfig {
    fn default() -> Self {
        Self {
            students: 30,
            sessions: 2,
        }
    }
}

fn default_session_length() -> usize {
    crate::domain::DEFAULT_SESSION_LENGTH
}

fn default_max_sessions() -> usize {
    20
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub strategies: Vec<String>,
    pub population: usize,
    pub seeds: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub paths: Option<DataPaths>,
    /// Defaults to the first topic of the bank.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topic: Option<String>,
    #[serde(default = "default_session_length")]
    pub session_length: usize,
    /// Upper bound on tests per student run.
    #[serde(default = "default_max_sessions")]
    pub max_sessions: usize,
    #[serde(default)]
    pub population_seed: u64,
    #[serde(default)]
    pub warmup: WarmupConfig,
    #[serde(default)]
    pub student: StudentProfile,
    #[serde(default)]
    pub strategy_config: StrategyConfig,
}

impl ExperimentConfig {
    pub fn new(strategies: &[&str], population: usize, seeds: Vec<u64>) -> Self {
        Self {
            strategies: strategies.iter().map(|s| s.to_string()).collect(),
            population,
            seeds,
            paths: None,
            topic: None,
            session_length: default_session_length(),
            max_sessions: default_max_sessions(),
            population_seed: 0,
            warmup: WarmupConfig::default(),
            student: StudentProfile::default(),
            strategy_config: StrategyConfig::default(),
        }
    }

    /// Reads a JSON config and resolves relative data paths against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, SimError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let mut cfg: Self = serde_json::from_str(&text).map_err(|e| config_error("(document)", e.to_string()))?;
        if let (Some(paths), Some(dir)) = (cfg.paths.as_mut(), path.parent()) {
            for p in [&mut paths.bank, &mut paths.concept_nodes, &mut paths.concept_arcs] {
                if p.is_relative() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.strategies.is_empty() {
            return Err(config_error("strategies", "at least one strategy is required"));
        }
        if let Some(bad) = self.strategies.iter().find(|s| layer_of(s).is_none()) {
            return Err(config_error("strategies", format!("unknown strategy `{bad}`")));
        }
        let distinct: BTreeSet<&String> = self.strategies.iter().collect();
        if distinct.len() != self.strategies.len() {
            return Err(config_error("strategies", "strategies must not repeat"));
        }
        if self.session_length == 0 {
            return Err(config_error("session_length", "must be at least 1"));
        }
        if self.max_sessions == 0 {
            return Err(config_error("max_sessions", "must be at least 1"));
        }
        let s = &self.student;
        if s.discrimination.is_nan() || s.discrimination <= 0.0 {
            return Err(config_error("student.discrimination", "must be positive"));
        }
        if !(0.0..=1.0).contains(&s.dont_know_rate) {
            return Err(config_error("student.dont_know_rate", "must lie in [0, 1]"));
        }
        if s.skill_sd.is_nan() || s.skill_sd < 0.0 {
            return Err(config_error("student.skill_sd", "must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionTranscript {
    pub session_id: SessionId,
    pub questions: Vec<QuestionId>,
    pub outcomes: Vec<Outcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub strategy: String,
    pub student: UserId,
    pub seed: u64,
    /// Answers given until every topic concept met the mastery criterion, or
    /// all answers given when it never did.
    pub questions_to_mastery: usize,
    pub mastered: bool,
    pub correct_rate: f64,
    /// Share of the topic's keywords touched by served questions.
    pub coverage: f64,
    pub transcripts: Vec<SessionTranscript>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategySummary {
    pub strategy: String,
    pub runs: usize,
    pub mastered_runs: usize,
    pub mean_questions_to_mastery: f64,
    pub mean_correct_rate: f64,
    pub mean_coverage: f64,
    /// Mean correctness of the i-th answer over the runs that reached it.
    pub correct_rate_trajectory: Vec<f64>,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub topic: String,
    pub summaries: Vec<StrategySummary>,
    pub records: Vec<RunRecord>,
}

impl ExperimentResult {
    pub fn summary(&self, strategy: &str) -> Option<&StrategySummary> {
        self.summaries.iter().find(|s| s.strategy == strategy)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), SimError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(RESULTS_HEADER.split(','))?;
        for r in &self.records {
            w.write_record([
                r.strategy.clone(),
                r.student.to_string(),
                r.seed.to_string(),
                r.questions_to_mastery.to_string(),
                format!("{:.6}", r.correct_rate),
                format!("{:.6}", r.coverage),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn csv_string(&self) -> Result<String, SimError> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }

    /// Writes `results.csv` and `summary.json` (summaries, transcripts and config echo).
    pub fn write_to_dir(&self, dir: impl AsRef<Path>) -> Result<(), SimError> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        self.write_csv(std::fs::File::create(dir.join("results.csv"))?)?;
        std::fs::write(dir.join("summary.json"), serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// Loads the bank and concept map named in `config.paths` and runs.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult, SimError> {
    let paths = config
        .paths
        .as_ref()
        .ok_or_else(|| config_error("paths", "bank and concept map paths are required"))?;
    let bank = load_question_bank(&paths.bank).map_err(|e| SimError::Load {
        what: "question bank",
        message: e.to_string(),
    })?;
    let (map, _) = load_concept_map(&paths.concept_nodes, &paths.concept_arcs).map_err(|e| SimError::Load {
        what: "concept map",
        message: e.to_string(),
    })?;
    run_experiment_with(config, &QuestionBank::new(bank), &map)
}

/// Independent random streams per (seed, student): one for the student's
/// answers, one for the strategy. Answer draws are therefore paired across strategies.
fn stream(seed: u64, student: usize, which: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((student as u64) << 1) | which);
    rng
}

pub fn run_experiment_with(
    config: &ExperimentConfig,
    bank: &QuestionBank,
    map: &ConceptMap,
) -> Result<ExperimentResult, SimError> {
    config.validate()?;
    let topic = match &config.topic {
        Some(t) if bank.topics().contains(t.as_str()) => t.clone(),
        Some(t) => return Err(config_error("topic", format!("no questions for topic `{t}`"))),
        None => bank
            .topics()
            .into_iter()
            .next()
            .ok_or_else(|| config_error("paths.bank", "question bank is empty"))?
            .to_owned(),
    };
    let topic_questions = bank.topic(&topic);
    let keywords: BTreeSet<String> = topic_questions.iter().flat_map(|q| q.keywords.iter().cloned()).collect();
    let curriculum = Curriculum::new(map, bank);
    let topic_concepts: Vec<&Concept> = map
        .concepts()
        .iter()
        .filter(|c| c.question_ids.iter().any(|q| bank.get(q).is_some_and(|q| q.topic == topic)))
        .collect();
    let criterion = config.strategy_config.concept_map.criterion;
    let session_length = config.session_length.min(topic_questions.len());

    let mut pop_rng = ChaCha8Rng::seed_from_u64(config.population_seed);
    let population = generate_population(config.population, "s", &keywords, &config.student, &mut pop_rng)
        .map_err(|e| config_error("student", e.to_string()))?;
    let warmup = generate_population(config.warmup.students, "w", &keywords, &config.student, &mut pop_rng)
        .map_err(|e| config_error("student", e.to_string()))?;
    let warmup_events = warm_up(config, bank, &topic, &curriculum, warmup, session_length, &mut pop_rng);

    let factory = StrategyFactory::new(config.strategy_config.clone());
    let data = TrainingData {
        bank,
        map,
        events: &warmup_events,
        profiles: &[],
    };
    let ctx = RunContext {
        bank,
        topic: &topic,
        curriculum: &curriculum,
        concepts: &topic_concepts,
        criterion: &criterion,
        keywords: &keywords,
        learning: &config.student.learning,
        session_length,
        max_sessions: config.max_sessions,
    };
    let mut records = Vec::new();
    for name in &config.strategies {
        let strategy = factory.build(name, data)?;
        for (i, student) in population.iter().enumerate() {
            for &seed in &config.seeds {
                records.push(run_student(&ctx, strategy.as_ref(), student.clone(), i, seed)?);
            }
        }
    }
    let summaries = config
        .strategies
        .iter()
        .map(|s| summarize(s, &records, &config.seeds))
        .collect();
    Ok(ExperimentResult {
        config: config.clone(),
        topic,
        summaries,
        records,
    })
}

fn warm_up(
    config: &ExperimentConfig,
    bank: &QuestionBank,
    topic: &str,
    curriculum: &Curriculum,
    students: Vec<SimulatedStudent>,
    session_length: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<InteractionEvent> {
    let mut events = Vec::new();
    let mut clock = 0i64;
    for mut student in students {
        for s in 0..config.warmup.sessions {
            let mut session = SessionState::new(format!("{}-warmup-{s}", student.id), student.id.clone(), topic, "random")
                .with_length(session_length);
            while !session.finished {
                let pool = bank.pool_for(&session);
                let Ok(rec) = random_baseline(&pool, rng) else { break };
                let question = bank.get(&rec.question_id).expect("pool questions are in the bank");
                session.serve(rec.question_id.clone()).expect("pool questions are unasked");
                clock += 1;
                let ev = student.simulate_answer(question, &session.session_id, clock, rng);
                session.record(ev).expect("answer matches the served question");
                student.learn(question, curriculum, &config.student.learning);
            }
            events.extend(session.events);
        }
    }
    events
}

struct RunContext<'a> {
    bank: &'a QuestionBank,
    topic: &'a str,
    curriculum: &'a Curriculum,
    concepts: &'a [&'a Concept],
    criterion: &'a MasteryCriterion,
    keywords: &'a BTreeSet<String>,
    learning: &'a LearningModel,
    session_length: usize,
    max_sessions: usize,
}

impl RunContext<'_> {
    fn mastered(&self, history: &[InteractionEvent], current: &[InteractionEvent]) -> bool {
        if self.concepts.is_empty() {
            return false;
        }
        let answers = AnswerHistory::from_events(history.iter().chain(current));
        self.concepts.iter().all(|c| concept_mastered(c, &answers, self.criterion))
    }
}

/// Tests one student until every topic concept is mastered or the test budget
/// runs out.
fn run_student(
    ctx: &RunContext<'_>,
    strategy: &dyn Strategy,
    mut student: SimulatedStudent,
    index: usize,
    seed: u64,
) -> Result<RunRecord, SimError> {
    let mut answer_rng = stream(seed, index, 0);
    let mut strategy_rng = stream(seed, index, 1);
    let name = strategy.name();
    let fail = |source| SimError::Strategy {
        strategy: name.to_owned(),
        source,
    };
    let mut history: Vec<InteractionEvent> = Vec::new();
    let mut transcripts = Vec::new();
    let mut seen_keywords: BTreeSet<&String> = BTreeSet::new();
    let mut mastered_at = None;
    let mut clock = 0i64;
    for s in 0..ctx.max_sessions {
        let session_id = format!("{}-{seed}-{s}", student.id);
        let mut session = SessionState::new(session_id, student.id.clone(), ctx.topic, name).with_length(ctx.session_length);
        while !session.finished && mastered_at.is_none() {
            let pool = ctx.bank.pool_for(&session);
            if pool.is_empty() {
                session.close_exhausted();
                break;
            }
            let rec = strategy
                .recommend(
                    &RecommendContext {
                        bank: ctx.bank,
                        session: &session,
                        pool: &pool,
                        prior_events: &history,
                    },
                    &mut strategy_rng,
                )
                .map_err(fail)?;
            let Some(question) = pool.iter().find(|q| q.id == rec.question_id).copied() else {
                return Err(SimError::OutOfPool {
                    strategy: name.to_owned(),
                    question: rec.question_id,
                });
            };
            session
                .serve(question.id.clone())
                .map_err(|e| fail(StrategyError::Failed(e.to_string())))?;
            clock += 1;
            let event = student.simulate_answer(question, &session.session_id, clock, &mut answer_rng);
            session
                .record(event.clone())
                .map_err(|e| fail(StrategyError::Failed(e.to_string())))?;
            student.learn(question, ctx.curriculum, ctx.learning);
            seen_keywords.extend(question.keywords.iter());
            let pool = ctx.bank.pool_for(&session);
            let after = RecommendContext {
                bank: ctx.bank,
                session: &session,
                pool: &pool,
                prior_events: &history,
            };
            strategy.observe(&after, &event);
            if ctx.mastered(&history, &session.events) {
                mastered_at = Some(history.len() + session.events.len());
            }
        }
        let pool = ctx.bank.pool_for(&session);
        strategy.finish(&RecommendContext {
            bank: ctx.bank,
            session: &session,
            pool: &pool,
            prior_events: &history,
        });
        transcripts.push(SessionTranscript {
            session_id: session.session_id.clone(),
            questions: session.asked.clone(),
            outcomes: session.events.iter().map(|e| e.outcome).collect(),
        });
        history.extend(session.events);
        if mastered_at.is_some() {
            break;
        }
    }
    let answered = history.len();
    let correct = history.iter().filter(|e| e.outcome.is_correct()).count();
    Ok(RunRecord {
        strategy: name.to_owned(),
        student: student.id.clone(),
        seed,
        questions_to_mastery: mastered_at.unwrap_or(answered),
        mastered: mastered_at.is_some(),
        correct_rate: if answered == 0 { 0.0 } else { correct as f64 / answered as f64 },
        coverage: if ctx.keywords.is_empty() {
            0.0
        } else {
            seen_keywords.len() as f64 / ctx.keywords.len() as f64
        },
        transcripts,
    })
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

fn summarize(strategy: &str, records: &[RunRecord], seeds: &[u64]) -> StrategySummary {
    let runs: Vec<&RunRecord> = records.iter().filter(|r| r.strategy == strategy).collect();
    let outcomes: Vec<Vec<bool>> = runs
        .iter()
        .map(|r| {
            r.transcripts
                .iter()
                .flat_map(|t| t.outcomes.iter().map(|o| o.is_correct()))
                .collect()
        })
        .collect();
    let longest = outcomes.iter().map(Vec::len).max().unwrap_or(0);
    let correct_rate_trajectory = (0..longest)
        .map(|i| mean(outcomes.iter().filter_map(|o| o.get(i)).map(|&c| c as u8 as f64)))
        .collect();
    StrategySummary {
        strategy: strategy.to_owned(),
        runs: runs.len(),
        mastered_runs: runs.iter().filter(|r| r.mastered).count(),
        mean_questions_to_mastery: mean(runs.iter().map(|r| r.questions_to_mastery as f64)),
        mean_correct_rate: mean(runs.iter().map(|r| r.correct_rate)),
        mean_coverage: mean(runs.iter().map(|r| r.coverage)),
        correct_rate_trajectory,
        seeds: seeds.to_vec(),
    }
}

/// Three concepts in a prerequisite chain (`A -> B -> C`), each with its own
/// keyword and `per_concept` questions (the last one difficult), all in topic `chain`.
pub fn chain_benchmark(per_concept: usize) -> (QuestionBank, ConceptMap) {
    use crate::concept_map::Prerequisite;
    use crate::domain::{Difficulty, Question};

    let mut questions = Vec::new();
    let mut concepts = Vec::new();
    for name in ["A", "B", "C"] {
        let keyword = name.to_lowercase();
        let ids: Vec<QuestionId> = (1..=per_concept).map(|i| format!("{name}{i}").into()).collect();
        for (i, id) in ids.iter().enumerate() {
            let difficult = i + 1 == per_concept && per_concept > 1;
            questions.push(Question {
                id: id.clone(),
                text: format!("Question {id} on {name}"),
                options: vec!["yes".into(), "no".into(), "maybe".into()],
                correct_index: 0,
                difficulty: if difficult { Difficulty::Difficult } else { Difficulty::Basic },
                teacher_level: if difficult { 4 } else { 1 + (i % 3) as u8 },
                keywords: BTreeSet::from([keyword.clone()]),
                topic: "chain".into(),
            });
        }
        concepts.push(Concept {
            id: name.into(),
            question_ids: ids.into_iter().collect(),
        });
    }
    let arc = |from: &str, to: &str| Prerequisite {
        from: from.into(),
        to: to.into(),
        weight: 1.0,
    };
    let map = ConceptMap::new(concepts, vec![arc("A", "B"), arc("B", "C")])
        .expect("chain map is valid")
        .0;
    (QuestionBank::new(questions), map)
}
