//! Implicit 1..5 ratings and the sparse user-question matrix they populate.
//!
//! | outcome                 | rating |
//! |-------------------------|--------|
//! | "I don't know"          | 1      |
//! | wrong, basic question   | 2      |
//! | right, basic question   | 3      |
//! | wrong, difficult        | 4      |
//! | right, difficult        | 5      |
//!
//! Skipped questions produce no rating.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::domain::{Difficulty, InteractionEvent, Outcome, Question, QuestionId, UserId};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum RatingError {
    #[error("skipped answers carry no rating")]
    SkippedNotRatable,
    #[error("event is for {event} but question {question} was supplied")]
    QuestionMismatch {
        event: QuestionId,
        question: QuestionId,
    },
    #[error("event references unknown question {0}")]
    UnknownQuestion(QuestionId),
    #[error("rating value {0} outside 1..5")]
    OutOfRange(u8),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rating {
    pub user_id: UserId,
    pub question_id: QuestionId,
    value: u8,
}

impl Rating {
    pub fn new(user_id: UserId, question_id: QuestionId, value: u8) -> Result<Self, RatingError> {
        if !(1..=5).contains(&value) {
            return Err(RatingError::OutOfRange(value));
        }
        Ok(Self {
            user_id,
            question_id,
            value,
        })
    }

    pub fn value(&self) -> u8 {
        self.value
    }
}

pub fn rating_value(outcome: Outcome, difficulty: Difficulty) -> Option<u8> {
    match (outcome, difficulty) {
        (Outcome::Skipped, _) => None,
        (Outcome::DontKnow, _) => Some(1),
        (Outcome::Wrong, Difficulty::Basic) => Some(2),
        (Outcome::Correct, Difficulty::Basic) => Some(3),
        (Outcome::Wrong, Difficulty::Difficult) => Some(4),
        (Outcome::Correct, Difficulty::Difficult) => Some(5),
    }
}

pub fn derive_rating(event: &InteractionEvent, question: &Question) -> Result<Rating, RatingError> {
    if event.question_id != question.id {
        return Err(RatingError::QuestionMismatch {
            event: event.question_id.clone(),
            question: question.id.clone(),
        });
    }
    let value = rating_value(event.outcome, question.difficulty).ok_or(RatingError::SkippedNotRatable)?;
    Ok(Rating {
        user_id: event.user_id.clone(),
        question_id: question.id.clone(),
        value,
    })
}

/// Sparse user x question matrix. Users and questions are indexed densely in
/// sorted-id order, so indices are stable for a given set of ratings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingMatrix {
    users: Vec<UserId>,
    questions: Vec<QuestionId>,
    /// Per-user row: question index -> rating.
    rows: Vec<BTreeMap<usize, u8>>,
    #[serde(skip)]
    user_index: HashMap<UserId, usize>,
    #[serde(skip)]
    question_index: HashMap<QuestionId, usize>,
}

impl RatingMatrix {
    /// Later ratings for the same (user, question) replace earlier ones.
    pub fn from_ratings<I: IntoIterator<Item = Rating>>(ratings: I) -> Self {
        let mut latest: BTreeMap<(UserId, QuestionId), u8> = BTreeMap::new();
        for r in ratings {
            latest.insert((r.user_id, r.question_id), r.value);
        }
        let users: Vec<UserId> = latest
            .keys()
            .map(|(u, _)| u.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let questions: Vec<QuestionId> = latest
            .keys()
            .map(|(_, q)| q.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let mut m = Self {
            rows: vec![BTreeMap::new(); users.len()],
            users,
            questions,
            user_index: HashMap::new(),
            question_index: HashMap::new(),
        };
        m.rebuild_index();
        for ((u, q), v) in latest {
            let (ui, qi) = (m.user_index[&u], m.question_index[&q]);
            m.rows[ui].insert(qi, v);
        }
        m
    }

    /// Restores the lookup maps after deserialization.
    pub fn rebuild_index(&mut self) {
        self.user_index = self.users.iter().cloned().enumerate().map(|(i, u)| (u, i)).collect();
        self.question_index = self
            .questions
            .iter()
            .cloned()
            .enumerate()
            .map(|(i, q)| (q, i))
            .collect();
    }

    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn n_questions(&self) -> usize {
        self.questions.len()
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(BTreeMap::len).sum()
    }

    pub fn users(&self) -> &[UserId] {
        &self.users
    }

    pub fn questions(&self) -> &[QuestionId] {
        &self.questions
    }

    pub fn user_index(&self, u: &UserId) -> Option<usize> {
        self.user_index.get(u).copied()
    }

    pub fn question_index(&self, q: &QuestionId) -> Option<usize> {
        self.question_index.get(q).copied()
    }

    pub fn row(&self, user: usize) -> &BTreeMap<usize, u8> {
        &self.rows[user]
    }

    pub fn get(&self, user: usize, question: usize) -> Option<u8> {
        self.rows.get(user)?.get(&question).copied()
    }

    pub fn value(&self, u: &UserId, q: &QuestionId) -> Option<u8> {
        self.get(self.user_index(u)?, self.question_index(q)?)
    }

    /// All stored entries as (user index, question index, rating), row-major.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, u8)> + '_ {
        self.rows
            .iter()
            .enumerate()
            .flat_map(|(u, row)| row.iter().map(move |(&q, &v)| (u, q, v)))
    }

    pub fn mean(&self) -> Option<f64> {
        let n = self.nnz();
        (n > 0).then(|| self.entries().map(|(_, _, v)| v as f64).sum::<f64>() / n as f64)
    }
}

/// Builds the matrix from an event log. Events are ordered by timestamp (ties keep
/// log order) so the latest answer per (user, question) wins.
pub fn build_rating_matrix(
    events: &[InteractionEvent],
    bank: &[Question],
) -> Result<RatingMatrix, RatingError> {
    let by_id: HashMap<&QuestionId, &Question> = bank.iter().map(|q| (&q.id, q)).collect();
    let mut ordered: Vec<&InteractionEvent> = events.iter().collect();
    ordered.sort_by_key(|e| e.timestamp);
    let mut ratings = Vec::with_capacity(ordered.len());
    for e in ordered {
        let q = by_id
            .get(&e.question_id)
            .ok_or_else(|| RatingError::UnknownQuestion(e.question_id.clone()))?;
        match derive_rating(e, q) {
            Ok(r) => ratings.push(r),
            Err(RatingError::SkippedNotRatable) => {}
            Err(other) => return Err(other),
        }
    }
    Ok(RatingMatrix::from_ratings(ratings))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn question(id: &str, difficulty: Difficulty) -> Question {
        Question {
            id: id.into(),
            text: String::new(),
            options: vec!["a".into(), "b".into()],
            correct_index: 0,
            difficulty,
            teacher_level: 1,
            keywords: BTreeSet::from(["k".to_owned()]),
            topic: "t".into(),
        }
    }

    fn ev(user: &str, q: &str, outcome: Outcome, ts: i64) -> InteractionEvent {
        InteractionEvent {
            user_id: user.into(),
            session_id: "s".into(),
            question_id: q.into(),
            outcome,
            elapsed_ms: 0,
            click_count: 0,
            timestamp: ts,
        }
    }

    #[test]
    fn rating_table_cases() {
        let basic = question("Q1", Difficulty::Basic);
        let hard = question("Q1", Difficulty::Difficult);
        let r = |o, q: &Question| derive_rating(&ev("u", "Q1", o, 0), q).map(|r| r.value());
        assert_eq!(r(Outcome::DontKnow, &basic), Ok(1));
        assert_eq!(r(Outcome::DontKnow, &hard), Ok(1));
        assert_eq!(r(Outcome::Wrong, &basic), Ok(2));
        assert_eq!(r(Outcome::Correct, &basic), Ok(3));
        assert_eq!(r(Outcome::Wrong, &hard), Ok(4));
        assert_eq!(r(Outcome::Correct, &hard), Ok(5));
        assert_eq!(r(Outcome::Skipped, &hard), Err(RatingError::SkippedNotRatable));
    }

    #[test]
    fn rating_image_and_leniency_order() {
        let mut image = BTreeSet::new();
        for o in [Outcome::Correct, Outcome::Wrong, Outcome::DontKnow] {
            for d in [Difficulty::Basic, Difficulty::Difficult] {
                image.insert(rating_value(o, d).unwrap());
            }
        }
        assert_eq!(image, BTreeSet::from([1, 2, 3, 4, 5]));
        let v = |o, d| rating_value(o, d).unwrap();
        assert!(v(Outcome::Wrong, Difficulty::Difficult) > v(Outcome::Correct, Difficulty::Basic));
        assert!(v(Outcome::Correct, Difficulty::Basic) > v(Outcome::Wrong, Difficulty::Basic));
    }

    #[test]
    fn empty_log_gives_empty_matrix() {
        let m = build_rating_matrix(&[], &[question("Q1", Difficulty::Basic)]).unwrap();
        assert_eq!(m.nnz(), 0);
        assert_eq!(m.mean(), None);
    }

    #[test]
    fn latest_answer_wins() {
        let bank = [question("Q1", Difficulty::Basic)];
        // Log order is deliberately reversed relative to time.
        let log = [ev("u", "Q1", Outcome::Correct, 20), ev("u", "Q1", Outcome::Wrong, 10)];
        let m = build_rating_matrix(&log, &bank).unwrap();
        assert_eq!(m.nnz(), 1);
        assert_eq!(m.value(&"u".into(), &"Q1".into()), Some(3));
    }

    #[test]
    fn dense_three_by_two() {
        let bank = [question("Q1", Difficulty::Basic), question("Q2", Difficulty::Difficult)];
        let log: Vec<_> = ["a", "b", "c"]
            .iter()
            .flat_map(|u| [ev(u, "Q1", Outcome::Correct, 1), ev(u, "Q2", Outcome::Wrong, 2)])
            .collect();
        let m = build_rating_matrix(&log, &bank).unwrap();
        assert_eq!(m.nnz(), 6);
        assert_eq!((m.n_users(), m.n_questions()), (3, 2));
        // Replaying the same log is idempotent.
        assert_eq!(build_rating_matrix(&log, &bank).unwrap(), m);
    }

    #[test]
    fn skipped_omitted_and_unknown_rejected() {
        let bank = [question("Q1", Difficulty::Basic)];
        let m = build_rating_matrix(&[ev("u", "Q1", Outcome::Skipped, 0)], &bank).unwrap();
        assert_eq!(m.nnz(), 0);
        assert_eq!(
            build_rating_matrix(&[ev("u", "Q9", Outcome::Correct, 0)], &bank),
            Err(RatingError::UnknownQuestion("Q9".into()))
        );
    }

    #[test]
    fn rating_constructor_validates() {
        assert_eq!(Rating::new("u".into(), "q".into(), 0), Err(RatingError::OutOfRange(0)));
        assert!(Rating::new("u".into(), "q".into(), 5).is_ok());
    }
}
