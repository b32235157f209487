//! Shared data model: questions, answer events and test sessions.

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

macro_rules! string_id {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub fn new(id: impl Into<String>) -> Self {
                Self(id.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.to_owned())
            }
        }

        impl From<String> for $name {
            fn from(s: String) -> Self {
                Self(s)
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }
    };
}

string_id!(
    /// Identifier of a question in the assessment bank. Ordering is lexicographic
    /// and is the tie-break used by every strategy.
    QuestionId
);
string_id!(
    /// Identifier of a node in a concept map.
    ConceptId
);
string_id!(UserId);
string_id!(SessionId);

/// Teacher-assigned binary difficulty used by the implicit rating scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Difficulty {
    Basic,
    Difficult,
}

impl Difficulty {
    pub fn is_difficult(self) -> bool {
        matches!(self, Difficulty::Difficult)
    }
}

/// One multiple-choice item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Question {
    pub id: QuestionId,
    pub text: String,
    pub options: Vec<String>,
    pub correct_index: usize,
    pub difficulty: Difficulty,
    /// Finer teacher rating, 1 (easiest) to 5.
    pub teacher_level: u8,
    pub keywords: BTreeSet<String>,
    pub topic: String,
}

impl Question {
    pub fn is_correct_choice(&self, choice: usize) -> bool {
        choice == self.correct_index
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Correct,
    Wrong,
    DontKnow,
    Skipped,
}

impl Outcome {
    /// Skips carry no evidence about knowledge; every other outcome is an attempt.
    pub fn is_attempt(self) -> bool {
        !matches!(self, Outcome::Skipped)
    }

    pub fn is_correct(self) -> bool {
        matches!(self, Outcome::Correct)
    }
}

/// A single logged answer, as stored one-per-line in the JSONL event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionEvent {
    pub user_id: UserId,
    pub session_id: SessionId,
    pub question_id: QuestionId,
    pub outcome: Outcome,
    pub elapsed_ms: u64,
    pub click_count: u32,
    /// UTC milliseconds since the epoch.
    pub timestamp: i64,
}

pub const DEFAULT_SESSION_LENGTH: usize = 5;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SessionError {
    #[error("question {0} was already served in this session")]
    AlreadyAsked(QuestionId),
    #[error("no question is awaiting an answer")]
    NothingPending,
    #[error("answer is for {got}, but {expected} is the question being served")]
    QuestionMismatch { expected: QuestionId, got: QuestionId },
    #[error("event timestamp {got} precedes the previous event at {previous}")]
    TimestampRegression { previous: i64, got: i64 },
    #[error("session is finished")]
    Finished,
}

/// One self-assessment test in progress.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub session_id: SessionId,
    pub user_id: UserId,
    pub topic: String,
    pub strategy_name: String,
    pub asked: Vec<QuestionId>,
    pub events: Vec<InteractionEvent>,
    pub length_target: usize,
    pub finished: bool,
}

impl SessionState {
    pub fn new(
        session_id: impl Into<SessionId>,
        user_id: impl Into<UserId>,
        topic: impl Into<String>,
        strategy_name: impl Into<String>,
    ) -> Self {
        Self {
            session_id: session_id.into(),
            user_id: user_id.into(),
            topic: topic.into(),
            strategy_name: strategy_name.into(),
            asked: Vec::new(),
            events: Vec::new(),
            length_target: DEFAULT_SESSION_LENGTH,
            finished: false,
        }
    }

    pub fn with_length(mut self, length: usize) -> Self {
        self.length_target = length;
        self
    }

    pub fn has_asked(&self, id: &QuestionId) -> bool {
        self.asked.contains(id)
    }

    /// The question served but not yet answered, if any.
    pub fn pending(&self) -> Option<&QuestionId> {
        if self.asked.len() > self.events.len() {
            self.asked.last()
        } else {
            None
        }
    }

    pub fn serve(&mut self, id: QuestionId) -> Result<(), SessionError> {
        if self.finished {
            return Err(SessionError::Finished);
        }
        if self.has_asked(&id) {
            return Err(SessionError::AlreadyAsked(id));
        }
        self.asked.push(id);
        Ok(())
    }

    /// Records the answer to the pending question. Marks the session finished once
    /// `length_target` answers are in.
    pub fn record(&mut self, event: InteractionEvent) -> Result<(), SessionError> {
        if self.finished {
            return Err(SessionError::Finished);
        }
        let expected = self.pending().ok_or(SessionError::NothingPending)?;
        if *expected != event.question_id {
            return Err(SessionError::QuestionMismatch {
                expected: expected.clone(),
                got: event.question_id,
            });
        }
        if let Some(prev) = self.events.last() {
            if event.timestamp < prev.timestamp {
                return Err(SessionError::TimestampRegression {
                    previous: prev.timestamp,
                    got: event.timestamp,
                });
            }
        }
        self.events.push(event);
        if self.events.len() >= self.length_target {
            self.finished = true;
        }
        Ok(())
    }

    /// Ends the session early because no candidate question is left.
    pub fn close_exhausted(&mut self) {
        self.finished = true;
    }

    pub fn last_event(&self) -> Option<&InteractionEvent> {
        self.events.last()
    }

    pub fn correct_count(&self) -> usize {
        self.events.iter().filter(|e| e.outcome.is_correct()).count()
    }
}

/// Question bank indexed by id, with per-topic listings in id order.
#[derive(Debug, Clone, Default)]
pub struct QuestionBank {
    questions: Vec<Question>,
    index: HashMap<QuestionId, usize>,
}

impl QuestionBank {
    /// Questions are stored in id order; the caller guarantees unique ids.
    pub fn new(mut questions: Vec<Question>) -> Self {
        questions.sort_by(|a, b| a.id.cmp(&b.id));
        let index = questions.iter().enumerate().map(|(i, q)| (q.id.clone(), i)).collect();
        Self { questions, index }
    }

    pub fn get(&self, id: &QuestionId) -> Option<&Question> {
        self.index.get(id).map(|&i| &self.questions[i])
    }

    pub fn questions(&self) -> &[Question] {
        &self.questions
    }

    pub fn len(&self) -> usize {
        self.questions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.questions.is_empty()
    }

    pub fn topic(&self, topic: &str) -> Vec<&Question> {
        self.questions.iter().filter(|q| q.topic == topic).collect()
    }

    pub fn topics(&self) -> BTreeSet<&str> {
        self.questions.iter().map(|q| q.topic.as_str()).collect()
    }

    /// Topic questions not yet served in `session`, in id order.
    pub fn pool_for(&self, session: &SessionState) -> Vec<&Question> {
        self.questions
            .iter()
            .filter(|q| q.topic == session.topic && !session.has_asked(&q.id))
            .collect()
    }
}
