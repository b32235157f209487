use learnpath_core::collab::{
    hybrid_predict, knn_predict, train_factor_model, CollabConfig, CollabFilter, FactorConfig, KnnPrediction,
};
use learnpath_core::ratings::{Rating, RatingMatrix};
use learnpath_core::{Difficulty, Question, QuestionBank, RecommendContext, SessionState};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use std::collections::BTreeSet;

/// Ratings generated from a known 2-D factor model; returns (train, held out).
fn synthetic(seed: u64) -> (Vec<Rating>, Vec<Rating>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |n: usize| -> Vec<[f64; 2]> {
        (0..n)
            .map(|_| [StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng)])
            .collect()
    };
    let users = draw(50);
    let items = draw(40);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcdef);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (i, u) in users.iter().enumerate() {
        for (j, v) in items.iter().enumerate() {
            let r = (3.0 + u[0] * v[0] + u[1] * v[1]).round().clamp(1.0, 5.0) as u8;
            let rating = Rating::new(format!("u{i:02}").into(), format!("q{j:02}").into(), r).unwrap();
            if rng.random::<f64>() < 0.3 {
                train.push(rating);
            } else {
                test.push(rating);
            }
        }
    }
    (train, test)
}

fn held_out_config() -> CollabConfig {
    CollabConfig {
        factor: FactorConfig {
            k: 2,
            epochs: 400,
            learning_rate: 0.02,
            regularization: 0.05,
            seed: 1,
            init_std: 0.1,
        },
        n_neighbors: 20,
        alpha: 1.0,
    }
}

#[test]
fn held_out_rmse_beats_global_mean() {
    let (train, test) = synthetic(42);
    let matrix = RatingMatrix::from_ratings(train);
    let cfg = held_out_config();
    let model = train_factor_model(&matrix, &cfg.factor).unwrap();
    let mean = matrix.mean().unwrap();
    let (mut se_model, mut se_mean, mut n) = (0.0, 0.0, 0.0);
    for r in &test {
        let Ok(p) = hybrid_predict(&model, &matrix, &r.user_id, &r.question_id, cfg.alpha, cfg.n_neighbors) else {
            continue;
        };
        se_model += (p.estimated_rating - r.value() as f64).powi(2);
        se_mean += (mean - r.value() as f64).powi(2);
        n += 1.0;
    }
    let (rmse, base) = ((se_model / n).sqrt(), (se_mean / n).sqrt());
    eprintln!("held-out rmse {rmse:.4} baseline {base:.4}");
    assert!(rmse < 0.75);
    assert!(base - rmse >= 0.3);
}

/// Straightforward dense re-implementation used as the reference.
fn knn_oracle(grid: &[[Option<u8>; 5]; 5], user: usize, q: usize, n: usize) -> Option<f64> {
    let mut sims = Vec::new();
    for v in 0..5 {
        if v == user || grid[v][q].is_none() {
            continue;
        }
        let (mut dot, mut a, mut b) = (0.0, 0.0, 0.0);
        for j in 0..5 {
            if let (Some(x), Some(y)) = (grid[user][j], grid[v][j]) {
                dot += (x as f64) * (y as f64);
                a += (x as f64).powi(2);
                b += (y as f64).powi(2);
            }
        }
        let sim = if a > 0.0 && b > 0.0 { dot / (a.sqrt() * b.sqrt()) } else { 0.0 };
        if sim > 0.0 {
            sims.push((sim, v));
        }
    }
    sims.sort_by(|x, y| y.0.partial_cmp(&x.0).unwrap().then(x.1.cmp(&y.1)));
    sims.truncate(n);
    if sims.is_empty() {
        return None;
    }
    let num: f64 = sims.iter().map(|&(s, v)| s * grid[v][q].unwrap() as f64).sum();
    let den: f64 = sims.iter().map(|&(s, _)| s).sum();
    Some(num / den)
}

fn grid_matrix(grid: &[[Option<u8>; 5]; 5]) -> RatingMatrix {
    let mut ratings = Vec::new();
    for (i, row) in grid.iter().enumerate() {
        for (j, cell) in row.iter().enumerate() {
            if let Some(v) = cell {
                ratings.push(Rating::new(format!("u{i}").into(), format!("q{j}").into(), *v).unwrap());
            }
        }
    }
    RatingMatrix::from_ratings(ratings)
}

const HAND: [[Option<u8>; 5]; 5] = [
    [Some(5), Some(3), None, Some(1), None],
    [Some(4), None, Some(4), Some(1), Some(2)],
    [Some(1), Some(1), Some(5), None, Some(4)],
    [None, Some(2), Some(4), Some(5), Some(1)],
    [Some(2), Some(5), None, Some(3), Some(3)],
];

#[test]
fn knn_matches_dense_oracle_on_hand_matrix() {
    let m = grid_matrix(&HAND);
    for u in 0..5 {
        for q in 0..5 {
            for n in 1..=5 {
                let got = knn_predict(&m, &format!("u{u}").into(), &format!("q{q}").into(), n).value();
                let want = knn_oracle(&HAND, u, q, n);
                match (got, want) {
                    (Some(g), Some(w)) => assert!((g - w).abs() < 1e-9, "u{u} q{q} n{n}: {g} vs {w}"),
                    (None, None) => {}
                    other => panic!("u{u} q{q} n{n}: {other:?}"),
                }
            }
        }
    }
}

#[test]
fn knn_hand_value() {
    // u0 vs u1 share q0, q3: (5*4 + 1*1) / (sqrt(26) * sqrt(17)); u0 vs u2 share q0, q1: 8 / (sqrt(34) * sqrt(2)).
    let m = grid_matrix(&HAND);
    let s1 = 21.0 / (26f64.sqrt() * 17f64.sqrt());
    let s2 = 8.0 / (34f64.sqrt() * 2f64.sqrt());
    let s3 = (3.0 * 2.0 + 1.0 * 5.0) / (10f64.sqrt() * 29f64.sqrt());
    let want = (s1 * 4.0 + s2 * 5.0 + s3 * 4.0) / (s1 + s2 + s3);
    let got = knn_predict(&m, &"u0".into(), &"q2".into(), 5).value().unwrap();
    assert!((got - want).abs() < 1e-9);
}

fn bank(ids: &[(&str, u8)]) -> QuestionBank {
    QuestionBank::new(
        ids.iter()
            .map(|&(id, level)| Question {
                id: id.into(),
                text: String::new(),
                options: vec!["a".into(), "b".into()],
                correct_index: 0,
                difficulty: Difficulty::Basic,
                teacher_level: level,
                keywords: BTreeSet::from(["k".to_owned()]),
                topic: "t".into(),
            })
            .collect(),
    )
}

#[test]
fn new_user_gets_easiest_first() {
    let (train, _) = synthetic(3);
    let matrix = RatingMatrix::from_ratings(train);
    let filter = CollabFilter {
        model: train_factor_model(&matrix, &FactorConfig::default()).unwrap(),
        matrix,
        config: CollabConfig::default(),
    };
    let b = bank(&[("Q1", 4), ("Q2", 2), ("Q3", 2), ("Q4", 5)]);
    let session = SessionState::new("s", "stranger", "t", "collaborative_filtering");
    let pool = b.pool_for(&session);
    let ctx = RecommendContext { bank: &b, session: &session, pool: &pool, prior_events: &[] };
    let rec = filter.recommend(&ctx).unwrap();
    let order: Vec<_> = rec.scores.iter().map(|c| c.question_id.as_str()).collect();
    assert_eq!(order, ["Q2", "Q3", "Q1", "Q4"]);
}

fn arb_ratings() -> impl Strategy<Value = Vec<(u8, u8, u8)>> {
    prop::collection::vec((0u8..6, 0u8..6, 1u8..=5), 1..30)
}

fn to_matrix(cells: &[(u8, u8, u8)]) -> RatingMatrix {
    RatingMatrix::from_ratings(
        cells
            .iter()
            .map(|&(u, q, v)| Rating::new(format!("u{u}").into(), format!("q{q}").into(), v).unwrap()),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn predictions_clamped_and_deterministic(cells in arb_ratings(), seed in 0u64..1000, alpha in 0.0f64..=1.0) {
        let m = to_matrix(&cells);
        let cfg = FactorConfig { k: 2, epochs: 20, learning_rate: 0.05, seed, ..FactorConfig::default() };
        let a = train_factor_model(&m, &cfg).unwrap();
        let b = train_factor_model(&m, &cfg).unwrap();
        prop_assert_eq!(
            a.user_factors.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
            b.user_factors.iter().map(|x| x.to_bits()).collect::<Vec<_>>()
        );
        for w in a.epoch_rmse.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-6);
        }
        for u in m.users() {
            for q in m.questions() {
                let p = hybrid_predict(&a, &m, u, q, alpha, 3).unwrap();
                prop_assert!((1.0..=5.0).contains(&p.estimated_rating));
            }
        }
    }

    #[test]
    fn uniform_similarity_gives_plain_mean(values in prop::collection::vec(1u8..=5, 1..8), anchor in 1u8..=5) {
        // Everyone rates the anchor alike, so every pair has similarity 1.
        let mut ratings = vec![Rating::new("target".into(), "anchor".into(), anchor).unwrap()];
        for (i, v) in values.iter().enumerate() {
            ratings.push(Rating::new(format!("r{i}").into(), "anchor".into(), anchor).unwrap());
            ratings.push(Rating::new(format!("r{i}").into(), "q".into(), *v).unwrap());
        }
        let m = RatingMatrix::from_ratings(ratings);
        let got = knn_predict(&m, &"target".into(), &"q".into(), m.n_users());
        let mean = values.iter().map(|&v| v as f64).sum::<f64>() / values.len() as f64;
        match got {
            KnnPrediction::Value(p) => prop_assert!((p - mean).abs() < 1e-9),
            KnnPrediction::NoNeighbor => prop_assert!(false),
        }
    }

    #[test]
    fn recommendation_is_sorted_predictions(cells in arb_ratings(), seed in 0u64..100) {
        let m = to_matrix(&cells);
        let cfg = CollabConfig { factor: FactorConfig { k: 2, epochs: 10, seed, ..FactorConfig::default() }, ..CollabConfig::default() };
        let filter = CollabFilter { model: train_factor_model(&m, &cfg.factor).unwrap(), matrix: m, config: cfg };
        let ids: Vec<String> = (0..6).map(|q| format!("q{q}")).collect();
        let b = bank(&ids.iter().map(|s| (s.as_str(), 3)).collect::<Vec<_>>());
        let user = filter.matrix.users()[0].clone();
        let session = SessionState::new("s", user.clone(), "t", "collaborative_filtering");
        let pool = b.pool_for(&session);
        let ctx = RecommendContext { bank: &b, session: &session, pool: &pool, prior_events: &[] };
        let rec = filter.recommend(&ctx).unwrap();
        let mut brute: Vec<(f64, String)> = pool
            .iter()
            .map(|q| {
                let s = filter
                    .predict(&user, &q.id)
                    .map(|p| p.estimated_rating)
                    .unwrap_or_else(|_| filter.model.predict_cold_question(&user).unwrap());
                (s, q.id.to_string())
            })
            .collect();
        brute.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        let got: Vec<String> = rec.scores.iter().map(|c| c.question_id.to_string()).collect();
        prop_assert_eq!(got, brute.into_iter().map(|x| x.1).collect::<Vec<_>>());
        prop_assert_eq!(rec.question_id.as_str(), rec.scores[0].question_id.as_str());
    }
}
