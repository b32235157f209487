use std::collections::{BTreeMap, BTreeSet};

use learnpath_core::sim::{
    chain_benchmark, run_experiment, run_experiment_with, Curriculum, ExperimentConfig, LearningModel, SimError,
    SimulatedStudent, TimeModel, RESULTS_HEADER,
};
use learnpath_core::strategies::{random_baseline, REGISTRY};
use learnpath_core::{Difficulty, Outcome, Question, QuestionId, SessionId, StrategyError};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn question(id: &str, keywords: &[&str], difficulty: Difficulty) -> Question {
    Question {
        id: id.into(),
        text: String::new(),
        options: vec!["a".into(), "b".into()],
        correct_index: 0,
        difficulty,
        teacher_level: 1,
        keywords: keywords.iter().map(|k| k.to_string()).collect(),
        topic: "t".into(),
    }
}

fn student(skill: f64) -> SimulatedStudent {
    let skills = BTreeMap::from([("x".to_owned(), skill), ("y".to_owned(), skill)]);
    SimulatedStudent::new("s", skills, 1.5, 0.3, TimeModel::default()).unwrap()
}

#[test]
fn response_model_saturation_and_midpoint() {
    let q = question("Q1", &["x", "y"], Difficulty::Basic);
    let sid = SessionId::from("sess");
    let strong = student(10.0);
    assert!(strong.p_correct(&q) > 0.999);
    let weak = student(-10.0);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for t in 0..50 {
        assert_eq!(strong.simulate_answer(&q, &sid, t, &mut rng).outcome, Outcome::Correct);
        let o = weak.simulate_answer(&q, &sid, t, &mut rng).outcome;
        assert!(matches!(o, Outcome::Wrong | Outcome::DontKnow));
    }
    let hard = question("Q2", &["x"], Difficulty::Difficult);
    assert!((student(1.0).p_correct(&hard) - 0.5).abs() < 1e-12);
    assert!((student(0.0).p_correct(&q) - 0.5).abs() < 1e-12);
    // Missing keywords count as zero skill.
    let unknown = question("Q3", &["z"], Difficulty::Basic);
    assert!((strong.p_correct(&unknown) - 0.5).abs() < 1e-12);
}

#[test]
fn answers_replay_and_time_model() {
    let q = question("Q1", &["x"], Difficulty::Difficult);
    let s = student(0.5);
    let sid = SessionId::from("sess");
    let draw = |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..30).map(|t| s.simulate_answer(&q, &sid, t, &mut rng)).collect::<Vec<_>>()
    };
    let a = draw(9);
    assert_eq!(a, draw(9));
    let tm = TimeModel::default();
    for e in &a {
        let min = tm.base_ms + tm.difficult_extra_ms;
        assert!((min..=min + tm.jitter_ms).contains(&e.elapsed_ms));
    }
}

#[test]
fn invalid_student_parameters() {
    assert!(SimulatedStudent::new("s", BTreeMap::new(), 0.0, 0.1, TimeModel::default()).is_err());
    assert!(SimulatedStudent::new("s", BTreeMap::new(), 1.0, 1.5, TimeModel::default()).is_err());
}

#[test]
fn learning_waits_for_prerequisites() {
    let (bank, map) = chain_benchmark(4);
    let curriculum = Curriculum::new(&map, &bank);
    let model = LearningModel::default();
    let skills = ["a", "b", "c"].iter().map(|k| (k.to_string(), -1.0)).collect();
    let mut s = SimulatedStudent::new("s", skills, 1.5, 0.0, TimeModel::default()).unwrap();
    let b1 = bank.get(&"B1".into()).unwrap();
    s.learn(b1, &curriculum, &model);
    assert_eq!(s.skill_of("b"), -1.0);
    let a1 = bank.get(&"A1".into()).unwrap();
    for _ in 0..3 {
        s.learn(a1, &curriculum, &model);
    }
    assert!(s.skill_of("a") >= model.known_threshold);
    s.learn(b1, &curriculum, &model);
    assert!((s.skill_of("b") - (-1.0 + model.gain)).abs() < 1e-12);
}

#[test]
fn random_baseline_is_uniform_and_seeded() {
    let qs: Vec<Question> = ["Q1", "Q2", "Q3", "Q4"].iter().map(|q| question(q, &["x"], Difficulty::Basic)).collect();
    let pool: Vec<&Question> = qs.iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    assert_eq!(random_baseline(&pool[..1], &mut rng).unwrap().question_id, QuestionId::from("Q1"));
    assert_eq!(random_baseline(&[], &mut rng).unwrap_err(), StrategyError::EmptyPool);
    let draws = |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..10_000).map(|_| random_baseline(&pool, &mut rng).unwrap().question_id).collect::<Vec<_>>()
    };
    let d = draws(42);
    assert_eq!(d, draws(42));
    let mut counts: BTreeMap<QuestionId, usize> = BTreeMap::new();
    for q in d {
        *counts.entry(q).or_default() += 1;
    }
    for (q, c) in counts {
        let f = c as f64 / 10_000.0;
        assert!((0.23..=0.27).contains(&f), "{q}: {f}");
    }
}

#[test]
fn empty_population_gives_header_only() {
    let (bank, map) = chain_benchmark(4);
    let cfg = ExperimentConfig::new(&["random"], 0, vec![1, 2]);
    let result = run_experiment_with(&cfg, &bank, &map).unwrap();
    assert!(result.records.is_empty());
    assert_eq!(result.csv_string().unwrap(), format!("{RESULTS_HEADER}\n"));
}

#[test]
fn config_errors_name_the_field() {
    let (bank, map) = chain_benchmark(4);
    let field = |cfg: ExperimentConfig| match run_experiment_with(&cfg, &bank, &map) {
        Err(SimError::Config { field, .. }) => field,
        other => panic!("expected config error, got {other:?}"),
    };
    assert_eq!(field(ExperimentConfig::new(&["nope"], 1, vec![1])), "strategies");
    assert_eq!(field(ExperimentConfig::new(&[], 1, vec![1])), "strategies");
    let mut c = ExperimentConfig::new(&["random"], 1, vec![1]);
    c.session_length = 0;
    assert_eq!(field(c), "session_length");
    let mut c = ExperimentConfig::new(&["random"], 1, vec![1]);
    c.student.dont_know_rate = 2.0;
    assert_eq!(field(c), "student.dont_know_rate");
    let mut c = ExperimentConfig::new(&["random"], 1, vec![1]);
    c.topic = Some("geometry".into());
    assert_eq!(field(c), "topic");
    assert_eq!(field_of(run_experiment(&ExperimentConfig::new(&["random"], 1, vec![1]))), "paths");
}

fn field_of<T: std::fmt::Debug>(r: Result<T, SimError>) -> &'static str {
    match r {
        Err(SimError::Config { field, .. }) => field,
        other => panic!("expected config error, got {other:?}"),
    }
}

#[test]
fn every_strategy_runs_without_repeats_and_replays_exactly() {
    let (bank, map) = chain_benchmark(5);
    let names: Vec<&str> = REGISTRY.iter().map(|(n, _)| *n).collect();
    let mut cfg = ExperimentConfig::new(&names, 3, vec![1, 2]);
    cfg.max_sessions = 6;
    cfg.warmup.students = 20;
    cfg.strategy_config.supervised.forest.n_trees = 15;
    let a = run_experiment_with(&cfg, &bank, &map).unwrap();
    let b = run_experiment_with(&cfg, &bank, &map).unwrap();
    assert_eq!(a.csv_string().unwrap(), b.csv_string().unwrap());
    assert_eq!(a.records.len(), 6 * 3 * 2);
    for r in &a.records {
        for t in &r.transcripts {
            let unique: BTreeSet<&QuestionId> = t.questions.iter().collect();
            assert_eq!(unique.len(), t.questions.len(), "{} repeated in {}", r.strategy, t.session_id);
            assert!(t.questions.len() <= cfg.session_length);
        }
        assert!((0.0..=1.0).contains(&r.correct_rate) && (0.0..=1.0).contains(&r.coverage));
    }
    let s = a.summary("random").unwrap();
    assert_eq!(s.runs, 6);
    assert_eq!(s.seeds, vec![1, 2]);
}

#[test]
fn config_file_round_trip_and_output_files() {
    let dir = tempfile::tempdir().unwrap();
    let (bank, map) = chain_benchmark(4);
    let mut bank_csv = Vec::new();
    learnpath_core::ingest::write_question_bank(bank.questions(), &mut bank_csv).unwrap();
    std::fs::write(dir.path().join("bank.csv"), bank_csv).unwrap();
    let nodes: String = std::iter::once("concept_id,question_ids\n".to_owned())
        .chain(map.concepts().iter().map(|c| {
            let qs: Vec<&str> = c.question_ids.iter().map(QuestionId::as_str).collect();
            format!("{},{}\n", c.id, qs.join(";"))
        }))
        .collect();
    std::fs::write(dir.path().join("nodes.csv"), nodes).unwrap();
    std::fs::write(dir.path().join("arcs.csv"), "from,to,weight\nA,B,1\nB,C,1\n").unwrap();
    let cfg_path = dir.path().join("experiment.json");
    std::fs::write(
        &cfg_path,
        r#"{"strategies": ["concept_map", "random"], "population": 2, "seeds": [7],
            "paths": {"bank": "bank.csv", "concept_nodes": "nodes.csv", "concept_arcs": "arcs.csv"},
            "max_sessions": 5}"#,
    )
    .unwrap();
    let cfg = ExperimentConfig::load(&cfg_path).unwrap();
    let from_files = run_experiment(&cfg).unwrap();
    let in_memory = run_experiment_with(&cfg, &bank, &map).unwrap();
    assert_eq!(from_files.csv_string().unwrap(), in_memory.csv_string().unwrap());
    let out = dir.path().join("out");
    from_files.write_to_dir(&out).unwrap();
    let csv = std::fs::read_to_string(out.join("results.csv")).unwrap();
    assert!(csv.starts_with(RESULTS_HEADER));
    assert_eq!(csv.lines().count(), 1 + 2 * 2);
    let summary: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["config"]["seeds"], serde_json::json!([7]));

    std::fs::write(&cfg_path, r#"{"strategies": ["random"], "population": 1, "seeds": [1], "colour": 3}"#).unwrap();
    assert!(matches!(ExperimentConfig::load(&cfg_path), Err(SimError::Config { .. })));
}

#[test]
fn concept_map_beats_random_on_the_chain() {
    let (bank, map) = chain_benchmark(4);
    let cfg = ExperimentConfig::new(&["concept_map", "random"], 1, (0..100).collect());
    let result = run_experiment_with(&cfg, &bank, &map).unwrap();
    let walk = result.summary("concept_map").unwrap();
    let random = result.summary("random").unwrap();
    eprintln!(
        "concept_map {:.2} ({} mastered), random {:.2} ({} mastered)",
        walk.mean_questions_to_mastery, walk.mastered_runs, random.mean_questions_to_mastery, random.mastered_runs
    );
    assert_eq!(walk.runs, 100);
    assert!(walk.mean_questions_to_mastery <= random.mean_questions_to_mastery);
}
