//! User-based nearest neighbours over the rating matrix.

use std::collections::BTreeMap;

use crate::domain::{QuestionId, UserId};
use crate::ratings::RatingMatrix;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KnnPrediction {
    Value(f64),
    NoNeighbor,
}

impl KnnPrediction {
    pub fn value(self) -> Option<f64> {
        match self {
            KnnPrediction::Value(v) => Some(v),
            KnnPrediction::NoNeighbor => None,
        }
    }
}

/// Cosine similarity restricted to co-rated questions; 0 when nothing is shared.
pub fn cosine_similarity(a: &BTreeMap<usize, u8>, b: &BTreeMap<usize, u8>) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (q, &ra) in a {
        if let Some(&rb) = b.get(q) {
            let (x, y) = (ra as f64, rb as f64);
            dot += x * y;
            na += x * x;
            nb += y * y;
        }
    }
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na.sqrt() * nb.sqrt())
    }
}

/// Similarity-weighted mean of the `n_neighbors` most similar users who rated
/// `question`. Users with zero similarity carry no weight and are skipped.
pub fn knn_predict(matrix: &RatingMatrix, user: &UserId, question: &QuestionId, n_neighbors: usize) -> KnnPrediction {
    let (Some(u), Some(q)) = (matrix.user_index(user), matrix.question_index(question)) else {
        return KnnPrediction::NoNeighbor;
    };
    let target = matrix.row(u);
    let mut neighbors: Vec<(f64, usize, u8)> = (0..matrix.n_users())
        .filter(|&v| v != u)
        .filter_map(|v| {
            let r = matrix.get(v, q)?;
            let sim = cosine_similarity(target, matrix.row(v));
            (sim > 0.0).then_some((sim, v, r))
        })
        .collect();
    neighbors.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    neighbors.truncate(n_neighbors);
    let weight: f64 = neighbors.iter().map(|n| n.0).sum();
    if neighbors.is_empty() || weight <= 0.0 {
        return KnnPrediction::NoNeighbor;
    }
    KnnPrediction::Value(neighbors.iter().map(|n| n.0 * n.2 as f64).sum::<f64>() / weight)
}
