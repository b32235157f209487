use learnpath_core::supervised::{
    fit_tree, select_by_heuristic, train_forest, CandidateEstimate, FeatureSubsample, ForestConfig, ForestModel, Label,
    SupervisedConfig, SupervisedRecommender, TreeConfig, SESSION_FEATURES,
};
use learnpath_core::background::{BackgroundProfile, FieldValue};
use learnpath_core::stats::SuccessRates;
use learnpath_core::{
    Difficulty, InteractionEvent, Outcome, Question, QuestionBank, QuestionId, RecommendContext, SessionState,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeSet;

/// Points on [0, 10] outside (4.5, 5.5), labeled by the generating rule x > 5.
fn separable(n: usize, seed: u64) -> Vec<(Vec<f64>, Label)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let x: f64 = rng.random_range(0.0..10.0);
        if (x - 5.0).abs() < 0.5 {
            continue;
        }
        out.push((vec![x], Label::Class(x > 5.0)));
    }
    out
}

fn accuracy(model: &ForestModel, rows: &[(Vec<f64>, Label)]) -> f64 {
    let hits = rows
        .iter()
        .filter(|(x, y)| (model.predict(x).unwrap() >= 0.5) == matches!(y, Label::Class(true)))
        .count();
    hits as f64 / rows.len() as f64
}

#[test]
fn forest_separates_margin_data() {
    let train = separable(200, 1);
    let test = separable(200, 2);
    let model = train_forest(&train, &ForestConfig::default()).unwrap();
    let acc = accuracy(&model, &test);
    assert!(acc >= 0.95, "held-out accuracy {acc}");
}

#[test]
fn more_trees_do_not_hurt_training_error() {
    let train = separable(200, 3);
    let mut last = 1.0;
    for n in [1, 5, 25, 100] {
        let model = train_forest(&train, &ForestConfig { n_trees: n, ..ForestConfig::default() }).unwrap();
        let err = 1.0 - accuracy(&model, &train);
        assert!(err <= last + 0.02, "{n} trees: {err} after {last}");
        last = err;
    }
}

fn arb_rows() -> impl Strategy<Value = Vec<(Vec<f64>, Label)>> {
    (1usize..5).prop_flat_map(|d| {
        prop::collection::vec(
            (prop::collection::vec(-5.0f64..5.0, d), any::<bool>()).prop_map(|(x, c)| (x, Label::Class(c))),
            2..40,
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn one_tree_forest_is_a_plain_tree(rows in arb_rows(), seed in any::<u64>()) {
        let cfg = ForestConfig {
            n_trees: 1,
            bootstrap: false,
            feature_subsample: FeatureSubsample::All,
            seed,
            ..ForestConfig::default()
        };
        let forest = train_forest(&rows, &cfg).unwrap();
        let tree_cfg = TreeConfig { max_depth: cfg.max_depth, min_leaf: cfg.min_leaf, features: FeatureSubsample::All };
        let (_, tree) = fit_tree(&rows, &tree_cfg, &mut ChaCha8Rng::seed_from_u64(seed ^ 1)).unwrap();
        prop_assert_eq!(&forest.trees[0], &tree);
        for (x, _) in &rows {
            prop_assert_eq!(forest.predict(x).unwrap(), tree.predict(x));
        }
    }

    #[test]
    fn probabilities_bounded_and_leaves_normalized(rows in arb_rows(), seed in any::<u64>()) {
        let forest = train_forest(&rows, &ForestConfig { n_trees: 7, seed, ..ForestConfig::default() }).unwrap();
        for (x, _) in &rows {
            let p = forest.predict(x).unwrap();
            prop_assert!((0.0..=1.0).contains(&p));
        }
        fn leaves_ok(n: &learnpath_core::supervised::Node) -> bool {
            match n {
                learnpath_core::supervised::Node::Leaf { distribution: Some([a, b]), .. } => (a + b - 1.0).abs() < 1e-12,
                learnpath_core::supervised::Node::Leaf { .. } => false,
                learnpath_core::supervised::Node::Split { left, right, .. } => leaves_ok(left) && leaves_ok(right),
            }
        }
        prop_assert!(forest.trees.iter().all(leaves_ok));
        let back = ForestModel::from_json(&forest.to_json().unwrap()).unwrap();
        prop_assert_eq!(back, forest);
    }

    #[test]
    fn saturated_times_do_not_change_the_pick(
        ps in prop::collection::vec(0.0f64..1.0, 1..8),
        extra in 0.0f64..1e6,
        lambda in 0.0f64..1.0,
    ) {
        let t_ref = 120_000.0;
        let base: Vec<CandidateEstimate> = ps
            .iter()
            .enumerate()
            .map(|(i, &p)| CandidateEstimate { question_id: format!("Q{i}").into(), p_correct: p, expected_time_ms: t_ref + (i as f64) * 1000.0 })
            .collect();
        let shifted: Vec<CandidateEstimate> = base
            .iter()
            .map(|e| CandidateEstimate { expected_time_ms: e.expected_time_ms + extra, ..e.clone() })
            .collect();
        let none = BTreeSet::new();
        prop_assert_eq!(
            select_by_heuristic(&base, lambda, t_ref, &none).unwrap().question_id,
            select_by_heuristic(&shifted, lambda, t_ref, &none).unwrap().question_id
        );
    }

    #[test]
    fn served_correct_never_reserved(
        ps in prop::collection::vec(0.0f64..1.0, 1..8),
        served in prop::collection::btree_set(0usize..8, 0..8),
    ) {
        let est: Vec<CandidateEstimate> = ps
            .iter()
            .enumerate()
            .map(|(i, &p)| CandidateEstimate { question_id: format!("Q{i}").into(), p_correct: p, expected_time_ms: 1.0 })
            .collect();
        let served: BTreeSet<QuestionId> = served.iter().map(|i| format!("Q{i}").into()).collect();
        let pick = select_by_heuristic(&est, 0.3, 120_000.0, &served).unwrap();
        let all_served = est.iter().all(|e| served.contains(&e.question_id));
        prop_assert!(all_served || !served.contains(&pick.question_id));
    }
}

// A small synthetic population: ability in [-2, 2], P(correct) falls with level.
fn bank() -> QuestionBank {
    QuestionBank::new(
        (0..12)
            .map(|i| Question {
                id: format!("Q{i:02}").into(),
                text: String::new(),
                options: vec!["a".into(), "b".into()],
                correct_index: 0,
                difficulty: if i % 12 >= 6 { Difficulty::Difficult } else { Difficulty::Basic },
                teacher_level: (i / 3 + 1) as u8,
                keywords: BTreeSet::from(["k".to_owned()]),
                topic: "t".into(),
            })
            .collect(),
    )
}

fn population(bank: &QuestionBank, seed: u64) -> (Vec<InteractionEvent>, Vec<BackgroundProfile>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut events = Vec::new();
    let mut profiles = Vec::new();
    for s in 0..120 {
        let ability: f64 = rng.random_range(-2.0..2.0);
        let user = format!("s{s:03}");
        profiles.push(BackgroundProfile {
            user_id: user.clone().into(),
            answers: [("grade".to_owned(), Some(FieldValue::Numeric(((ability + 2.0) * 25.0).round())))].into(),
        });
        let mut ids: Vec<&Question> = bank.questions().iter().collect();
        for i in (1..ids.len()).rev() {
            ids.swap(i, rng.random_range(0..=i));
        }
        for (step, q) in ids.iter().take(6).enumerate() {
            let p = 1.0 / (1.0 + (-(ability - (q.teacher_level as f64 - 2.5))).exp());
            let outcome = if rng.random::<f64>() < p { Outcome::Correct } else { Outcome::Wrong };
            events.push(InteractionEvent {
                user_id: user.clone().into(),
                session_id: format!("{user}-1").into(),
                question_id: q.id.clone(),
                outcome,
                elapsed_ms: 20_000 + 10_000 * q.teacher_level as u64,
                click_count: 1,
                timestamp: step as i64,
            });
        }
    }
    (events, profiles)
}

fn quick_config() -> SupervisedConfig {
    SupervisedConfig {
        forest: ForestConfig { n_trees: 30, seed: 9, ..ForestConfig::default() },
        ..SupervisedConfig::default()
    }
}

fn scripted(session: &mut SessionState, answers: &[(&str, Outcome)]) {
    for (i, (q, o)) in answers.iter().enumerate() {
        session.serve((*q).into()).unwrap();
        session
            .record(InteractionEvent {
                user_id: session.user_id.clone(),
                session_id: session.session_id.clone(),
                question_id: (*q).into(),
                outcome: *o,
                elapsed_ms: 30_000,
                click_count: 1,
                timestamp: i as i64,
            })
            .unwrap();
    }
}

#[test]
fn estimates_cover_pool_and_are_bounded() {
    let b = bank();
    let (events, profiles) = population(&b, 4);
    let rec = SupervisedRecommender::train(&b, &events, &profiles, quick_config()).unwrap();
    let s = SessionState::new("x", "s000", "t", "supervised");
    let pool = b.pool_for(&s);
    let est = rec.estimate_candidates(&s, &pool, &b).unwrap();
    assert_eq!(est.len(), pool.len());
    for e in &est {
        assert!((0.0..=1.0).contains(&e.p_correct));
        assert!(e.expected_time_ms >= 0.0);
    }
}

#[test]
fn all_correct_training_gives_certainty() {
    let b = bank();
    let (mut events, profiles) = population(&b, 5);
    for e in &mut events {
        e.outcome = Outcome::Correct;
    }
    let rec = SupervisedRecommender::train(&b, &events, &profiles, quick_config()).unwrap();
    let s = SessionState::new("x", "s001", "t", "supervised");
    let pool = b.pool_for(&s);
    assert!(rec.estimate_candidates(&s, &pool, &b).unwrap().iter().all(|e| e.p_correct == 1.0));
}

#[test]
fn unused_feature_does_not_matter() {
    let b = bank();
    let (events, profiles) = population(&b, 6);
    let rec = SupervisedRecommender::train(&b, &events, &profiles, quick_config()).unwrap();
    let models = rec.models.as_ref().unwrap();
    let mut used = Vec::new();
    for t in models.p_model.trees.iter().chain(&models.t_model.trees) {
        t.split_features(&mut used);
    }
    let used: BTreeSet<usize> = used.into_iter().collect();
    let unused = (0..rec.schema.len()).find(|i| !used.contains(i)).expect("some feature is never split on");
    let s = SessionState::new("x", "s002", "t", "supervised");
    for q in b.questions() {
        let x = rec.features(&s, q, &b);
        let mut y = x.clone();
        y[unused] += 1234.5;
        assert_eq!(models.p_model.predict(&x), models.p_model.predict(&y));
        assert_eq!(models.t_model.predict(&x), models.t_model.predict(&y));
    }
}

#[test]
fn first_and_second_step_differ_only_in_session_block() {
    let b = bank();
    let (events, profiles) = population(&b, 7);
    let rec = SupervisedRecommender::train(&b, &events, &profiles, quick_config()).unwrap();
    let mut s = SessionState::new("x", "s003", "t", "supervised");
    let q = b.get(&"Q11".into()).unwrap();
    let before = rec.features(&s, q, &b);
    let off = rec.schema.session_offset();
    assert!(before[off..off + SESSION_FEATURES.len()].iter().all(|&v| v == 0.0));
    scripted(&mut s, &[("Q00", Outcome::Correct)]);
    let after = rec.features(&s, q, &b);
    for i in 0..before.len() {
        if !(off..off + SESSION_FEATURES.len()).contains(&i) {
            assert_eq!(before[i], after[i], "feature {i}");
        }
    }
    assert_ne!(before, after);
}

#[test]
fn recommendation_is_deterministic_and_cold_start_falls_back() {
    let b = bank();
    let (events, profiles) = population(&b, 8);
    let r1 = SupervisedRecommender::train(&b, &events, &profiles, quick_config()).unwrap();
    let r2 = SupervisedRecommender::train(&b, &events, &profiles, quick_config()).unwrap();
    let s = SessionState::new("x", "s004", "t", "supervised");
    let pool = b.pool_for(&s);
    let ctx = RecommendContext { bank: &b, session: &s, pool: &pool, prior_events: &[] };
    assert_eq!(r1.recommend(&ctx).unwrap(), r2.recommend(&ctx).unwrap());

    let cold = SupervisedRecommender::train(&b, &[], &[], quick_config()).unwrap();
    assert!(cold.models.is_none());
    assert_eq!(cold.recommend(&ctx).unwrap().question_id.as_str(), "Q00");
}

#[test]
fn struggling_student_gets_easier_question_than_twin() {
    let b = bank();
    let (events, profiles) = population(&b, 10);
    let rates = SuccessRates::from_events(&events);
    let rec = SupervisedRecommender::train(&b, &events, &profiles, quick_config()).unwrap();
    let history = ["Q03", "Q04", "Q05"];
    let pick = |outcome: Outcome| {
        let earlier: Vec<InteractionEvent> = ["Q00", "Q01", "Q02"]
            .iter()
            .enumerate()
            .map(|(i, q)| InteractionEvent {
                user_id: "newcomer".into(),
                session_id: "earlier".into(),
                question_id: (*q).into(),
                outcome,
                elapsed_ms: 30_000,
                click_count: 1,
                timestamp: i as i64 - 100,
            })
            .collect();
        let mut s = SessionState::new("twin", "newcomer", "t", "supervised").with_length(10);
        let answers: Vec<(&str, Outcome)> = history.iter().map(|q| (*q, outcome)).collect();
        scripted(&mut s, &answers);
        let pool = b.pool_for(&s);
        let ctx = RecommendContext { bank: &b, session: &s, pool: &pool, prior_events: &earlier };
        rec.recommend(&ctx).unwrap().question_id
    };
    let weak = pick(Outcome::Wrong);
    let strong = pick(Outcome::Correct);
    assert_ne!(weak, strong);
    assert!(
        rates.rate(&weak) >= rates.rate(&strong),
        "weak pick {weak} ({}) vs strong pick {strong} ({})",
        rates.rate(&weak),
        rates.rate(&strong)
    );
}
