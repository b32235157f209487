//! Difficulty clustering: fuse teacher and student difficulty into a score,
//! group scores with k-means, then climb or descend the difficulty ladder
//! choosing the most keyword-related question.

mod graph;
mod kmeans;

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

pub use graph::KeywordGraph;
pub use kmeans::{kmeans_1d, optimal_centroids_1d, sse, KMeansConfig, KMeansFit};

use crate::domain::{InteractionEvent, Outcome, Question, QuestionBank, QuestionId, SessionState};
use crate::recommend::{fallback_ranking, CandidateScore, Recommendation, RecommendContext, ScoreKind};
use crate::stats::SuccessRates;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ClusterError {
    #[error("k must be at least 1")]
    InvalidK,
    #[error("{points} scores cannot form {k} clusters")]
    TooFewPoints { points: usize, k: usize },
    #[error("{distinct} distinct scores cannot form {k} clusters")]
    TooFewDistinct { distinct: usize, k: usize },
    #[error("scores must be finite")]
    NonFiniteScore,
    #[error("no candidate questions left")]
    EmptyPool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionScore {
    pub question_id: QuestionId,
    /// In [0, 1]; higher is harder.
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreWeights {
    pub teacher: f64,
    pub student: f64,
}

impl Default for ScoreWeights {
    fn default() -> Self {
        Self {
            teacher: 0.5,
            student: 0.5,
        }
    }
}

/// Teacher level mapped to [0, 1], blended with the observed failure rate.
pub fn fused_score(teacher_level: u8, success_rate: f64, weights: ScoreWeights) -> f64 {
    let teacher = (teacher_level.clamp(1, 5) - 1) as f64 / 4.0;
    let total = weights.teacher + weights.student;
    ((weights.teacher * teacher + weights.student * (1.0 - success_rate)) / total).clamp(0.0, 1.0)
}

pub fn phase1_score(q: &Question, rates: &SuccessRates, weights: ScoreWeights) -> QuestionScore {
    QuestionScore {
        question_id: q.id.clone(),
        score: fused_score(q.teacher_level, rates.rate(&q.id), weights),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DifficultyClustering {
    pub k: usize,
    pub assignments: BTreeMap<QuestionId, usize>,
    pub scores: BTreeMap<QuestionId, f64>,
    /// Ascending: cluster 0 is the easiest.
    pub centroids: Vec<f64>,
    pub sse: f64,
    pub sse_trace: Vec<f64>,
}

impl DifficultyClustering {
    pub fn cluster_of(&self, q: &QuestionId) -> Option<usize> {
        self.assignments.get(q).copied()
    }
}

pub fn phase2_cluster(scores: &[QuestionScore], config: &KMeansConfig) -> Result<DifficultyClustering, ClusterError> {
    let values: Vec<f64> = scores.iter().map(|s| s.score).collect();
    let fit = kmeans_1d(&values, config)?;
    Ok(DifficultyClustering {
        k: config.k,
        assignments: scores
            .iter()
            .zip(&fit.labels)
            .map(|(s, &l)| (s.question_id.clone(), l))
            .collect(),
        scores: scores.iter().map(|s| (s.question_id.clone(), s.score)).collect(),
        centroids: fit.centroids,
        sse: fit.sse,
        sse_trace: fit.trace,
    })
}

pub fn phase3_relevance(candidate: &Question, reference: &Question, graph: &KeywordGraph) -> f64 {
    graph.relevance(&candidate.id, &reference.id)
}

/// One step on the difficulty ladder.
pub fn ladder_target(current: usize, outcome: Outcome, k: usize) -> usize {
    let top = k.saturating_sub(1);
    match outcome {
        Outcome::Correct => (current + 1).min(top),
        Outcome::Wrong | Outcome::DontKnow => current.saturating_sub(1),
        Outcome::Skipped => current.min(top),
    }
}

/// Cluster the next question should come from: 0 at the start of a session,
/// otherwise one ladder step from the last answered question's cluster.
pub fn target_cluster(session: &SessionState, clustering: &DifficultyClustering) -> usize {
    session
        .last_event()
        .map(|e| {
            let current = clustering.cluster_of(&e.question_id).unwrap_or(0);
            ladder_target(current, e.outcome, clustering.k)
        })
        .unwrap_or(0)
}

pub fn phase4_next(
    session: &SessionState,
    clustering: &DifficultyClustering,
    graph: &KeywordGraph,
    pool: &[&Question],
) -> Result<Recommendation, ClusterError> {
    if pool.is_empty() {
        return Err(ClusterError::EmptyPool);
    }
    let mut by_cluster: BTreeMap<usize, Vec<&Question>> = BTreeMap::new();
    for q in pool {
        if let Some(c) = clustering.cluster_of(&q.id) {
            by_cluster.entry(c).or_default().push(q);
        }
    }
    let target = target_cluster(session, clustering);
    // Nearest non-empty cluster by centroid distance, easier side on ties.
    let Some(chosen) = by_cluster.keys().copied().min_by(|&a, &b| {
        let da = (clustering.centroids[a] - clustering.centroids[target]).abs();
        let db = (clustering.centroids[b] - clustering.centroids[target]).abs();
        da.total_cmp(&db).then(a.cmp(&b))
    }) else {
        return fallback_ranking(pool).ok_or(ClusterError::EmptyPool);
    };
    let reference = session.last_event().map(|e| &e.question_id);
    let scores = by_cluster[&chosen]
        .iter()
        .map(|q| {
            let score = match reference {
                Some(r) => graph.relevance(&q.id, r),
                None => graph.total_keyword_degree(&q.id),
            };
            CandidateScore::new(q.id.clone(), score)
        })
        .collect();
    Recommendation::ranked(ScoreKind::Relevance, scores, None).ok_or(ClusterError::EmptyPool)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusterConfig {
    pub k: usize,
    pub seed: u64,
    pub max_iters: usize,
    pub n_init: usize,
    pub exact_seed: bool,
    pub weights: ScoreWeights,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        let km = KMeansConfig::default();
        Self {
            k: km.k,
            seed: km.seed,
            max_iters: km.max_iters,
            n_init: km.n_init,
            exact_seed: km.exact_seed,
            weights: ScoreWeights::default(),
        }
    }
}

/// Per-topic clusterings plus the keyword graph of the whole bank.
#[derive(Debug, Clone)]
pub struct ClusterRecommender {
    pub clusterings: BTreeMap<String, DifficultyClustering>,
    pub graph: KeywordGraph,
}

impl ClusterRecommender {
    /// k is lowered for topics with fewer distinct scores than requested.
    pub fn build(bank: &QuestionBank, events: &[InteractionEvent], config: &ClusterConfig) -> Result<Self, ClusterError> {
        if config.k == 0 {
            return Err(ClusterError::InvalidK);
        }
        let rates = SuccessRates::from_events(events);
        let mut clusterings = BTreeMap::new();
        for topic in bank.topics() {
            let scores: Vec<QuestionScore> = bank
                .topic(topic)
                .into_iter()
                .map(|q| phase1_score(q, &rates, config.weights))
                .collect();
            let mut distinct: Vec<f64> = scores.iter().map(|s| s.score).collect();
            distinct.sort_by(f64::total_cmp);
            distinct.dedup();
            let km = KMeansConfig {
                k: config.k.min(distinct.len()).max(1),
                seed: config.seed,
                max_iters: config.max_iters,
                n_init: config.n_init,
                exact_seed: config.exact_seed,
            };
            clusterings.insert(topic.to_owned(), phase2_cluster(&scores, &km)?);
        }
        Ok(Self {
            clusterings,
            graph: KeywordGraph::build(bank.questions()),
        })
    }

    pub fn recommend(&self, ctx: &RecommendContext<'_>) -> Result<Recommendation, ClusterError> {
        match self.clusterings.get(&ctx.session.topic) {
            Some(c) => phase4_next(ctx.session, c, &self.graph, ctx.pool),
            None => fallback_ranking(ctx.pool).ok_or(ClusterError::EmptyPool),
        }
    }

    /// `question_id,score,cluster` rows in id order.
    pub fn write_dump<W: Write>(&self, writer: W) -> csv::Result<()> {
        let mut rows: Vec<(&QuestionId, f64, usize)> = self
            .clusterings
            .values()
            .flat_map(|c| c.assignments.iter().map(|(q, &l)| (q, c.scores[q], l)))
            .collect();
        rows.sort_by(|a, b| a.0.cmp(b.0));
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["question_id", "score", "cluster"])?;
        for (q, s, l) in rows {
            w.write_record([q.as_str(), &format!("{s:.6}"), &l.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}
