//! Population answer statistics per question.

use std::collections::HashMap;

use crate::domain::{InteractionEvent, QuestionId};

/// Success rate reported for a question nobody has attempted yet.
pub const SUCCESS_PRIOR: f64 = 0.5;

/// Fraction of attempts (non-skipped events) on `question_id` that were correct.
pub fn question_success_rate(question_id: &QuestionId, events: &[InteractionEvent]) -> f64 {
    let (correct, attempts) = events
        .iter()
        .filter(|e| &e.question_id == question_id && e.outcome.is_attempt())
        .fold((0usize, 0usize), |(c, n), e| (c + e.outcome.is_correct() as usize, n + 1));
    if attempts == 0 {
        SUCCESS_PRIOR
    } else {
        correct as f64 / attempts as f64
    }
}

/// Precomputed `question_success_rate` for every question in a log.
#[derive(Debug, Clone, Default)]
pub struct SuccessRates {
    counts: HashMap<QuestionId, (usize, usize)>,
    prior: f64,
}

impl SuccessRates {
    pub fn from_events(events: &[InteractionEvent]) -> Self {
        let mut counts: HashMap<QuestionId, (usize, usize)> = HashMap::new();
        for e in events.iter().filter(|e| e.outcome.is_attempt()) {
            let c = counts.entry(e.question_id.clone()).or_default();
            c.0 += e.outcome.is_correct() as usize;
            c.1 += 1;
        }
        Self {
            counts,
            prior: SUCCESS_PRIOR,
        }
    }

    pub fn rate(&self, id: &QuestionId) -> f64 {
        match self.counts.get(id) {
            Some(&(correct, attempts)) if attempts > 0 => correct as f64 / attempts as f64,
            _ => self.prior,
        }
    }

    pub fn failure_rate(&self, id: &QuestionId) -> f64 {
        1.0 - self.rate(id)
    }

    pub fn attempts(&self, id: &QuestionId) -> usize {
        self.counts.get(id).map_or(0, |c| c.1)
    }
}
