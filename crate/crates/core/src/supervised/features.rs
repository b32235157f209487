//! Fixed-length feature vectors: background answers, aggregates of the
//! current test so far, and the candidate question itself.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::background::{BackgroundProfile, FieldValue};
use crate::domain::{InteractionEvent, Question, QuestionBank};
use crate::stats::SuccessRates;

pub const SESSION_FEATURES: [&str; 7] = [
    "answered",
    "correct_fraction",
    "skipped_fraction",
    "mean_elapsed_s",
    "difficult_fraction",
    "mean_success_rate",
    "mean_clicks",
];

pub const CANDIDATE_FEATURES: [&str; 3] = ["candidate_difficult", "candidate_teacher_level", "candidate_success_rate"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackgroundField {
    Numeric { name: String, default: f64 },
    /// Encoded as the index into `categories`; unseen values map to -1.
    Categorical { name: String, categories: Vec<String>, default: f64 },
}

impl BackgroundField {
    pub fn name(&self) -> &str {
        match self {
            BackgroundField::Numeric { name, .. } | BackgroundField::Categorical { name, .. } => name,
        }
    }

    fn encode(&self, value: Option<&FieldValue>) -> f64 {
        match (self, value) {
            (BackgroundField::Numeric { default, .. }, None) | (BackgroundField::Categorical { default, .. }, None) => *default,
            (BackgroundField::Numeric { default, .. }, Some(v)) => v.as_f64().unwrap_or(*default),
            (BackgroundField::Categorical { categories, .. }, Some(FieldValue::Categorical(c))) => {
                categories.iter().position(|x| x == c).map_or(-1.0, |i| i as f64)
            }
            (BackgroundField::Categorical { categories, .. }, Some(FieldValue::Numeric(n))) => {
                let s = n.to_string();
                categories.iter().position(|x| *x == s).map_or(-1.0, |i| i as f64)
            }
        }
    }
}

/// Most frequent value; ties go to the smallest.
fn mode(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let mut best = (0.0, 0usize);
    let mut i = 0;
    while i < values.len() {
        let j = i + values[i..].iter().take_while(|v| **v == values[i]).count();
        if j - i > best.1 {
            best = (values[i], j - i);
        }
        i = j;
    }
    best.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub background: Vec<BackgroundField>,
}

impl FeatureSchema {
    /// Fields are taken in name order. A field is categorical if any profile
    /// answered it with text.
    pub fn from_profiles(profiles: &[BackgroundProfile]) -> Self {
        let names: BTreeSet<&String> = profiles.iter().flat_map(|p| p.answers.keys()).collect();
        let background = names
            .into_iter()
            .map(|name| {
                let values: Vec<&FieldValue> = profiles.iter().filter_map(|p| p.get(name)).collect();
                let categorical = values.iter().any(|v| matches!(v, FieldValue::Categorical(_)));
                if categorical {
                    let categories: Vec<String> = values
                        .iter()
                        .map(|v| match v {
                            FieldValue::Categorical(c) => c.clone(),
                            FieldValue::Numeric(n) => n.to_string(),
                        })
                        .collect::<BTreeSet<_>>()
                        .into_iter()
                        .collect();
                    let mut field = BackgroundField::Categorical {
                        name: name.clone(),
                        categories,
                        default: -1.0,
                    };
                    let mut codes: Vec<f64> = values.iter().map(|v| field.encode(Some(v))).collect();
                    if let BackgroundField::Categorical { default, .. } = &mut field {
                        *default = if codes.is_empty() { -1.0 } else { mode(&mut codes) };
                    }
                    field
                } else {
                    let mut nums: Vec<f64> = values.iter().filter_map(|v| v.as_f64()).collect();
                    BackgroundField::Numeric {
                        name: name.clone(),
                        default: if nums.is_empty() { 0.0 } else { mode(&mut nums) },
                    }
                }
            })
            .collect();
        Self { background }
    }

    pub fn len(&self) -> usize {
        self.background.len() + SESSION_FEATURES.len() + CANDIDATE_FEATURES.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn names(&self) -> Vec<String> {
        self.background
            .iter()
            .map(|f| f.name().to_owned())
            .chain(SESSION_FEATURES.iter().map(|s| s.to_string()))
            .chain(CANDIDATE_FEATURES.iter().map(|s| s.to_string()))
            .collect()
    }

    /// Index of the first session aggregate.
    pub fn session_offset(&self) -> usize {
        self.background.len()
    }

    pub fn encode_background(&self, profile: Option<&BackgroundProfile>) -> Vec<f64> {
        self.background
            .iter()
            .map(|f| f.encode(profile.and_then(|p| p.get(f.name()))))
            .collect()
    }

    pub fn vector(
        &self,
        profile: Option<&BackgroundProfile>,
        history: &[InteractionEvent],
        candidate: &Question,
        bank: &QuestionBank,
        rates: &SuccessRates,
    ) -> Vec<f64> {
        let mut v = self.encode_background(profile);
        v.extend(session_aggregates(history, bank, rates));
        v.extend([
            candidate.difficulty.is_difficult() as u8 as f64,
            candidate.teacher_level as f64,
            rates.rate(&candidate.id),
        ]);
        v
    }
}

/// Aggregates over the answers given so far in the current test; all zero
/// before the first answer.
pub fn session_aggregates(history: &[InteractionEvent], bank: &QuestionBank, rates: &SuccessRates) -> [f64; 7] {
    if history.is_empty() {
        return [0.0; 7];
    }
    let n = history.len() as f64;
    let mean = |f: &dyn Fn(&InteractionEvent) -> f64| history.iter().map(f).sum::<f64>() / n;
    [
        n,
        mean(&|e| e.outcome.is_correct() as u8 as f64),
        mean(&|e| (!e.outcome.is_attempt()) as u8 as f64),
        mean(&|e| e.elapsed_ms as f64 / 1000.0),
        mean(&|e| bank.get(&e.question_id).is_some_and(|q| q.difficulty.is_difficult()) as u8 as f64),
        mean(&|e| rates.rate(&e.question_id)),
        mean(&|e| e.click_count as f64),
    ]
}

/// Events grouped per session, each session ordered by timestamp (log order on ties).
pub fn sessions_of(events: &[InteractionEvent]) -> BTreeMap<&str, Vec<&InteractionEvent>> {
    let mut out: BTreeMap<&str, Vec<&InteractionEvent>> = BTreeMap::new();
    for e in events {
        out.entry(e.session_id.as_str()).or_default().push(e);
    }
    for v in out.values_mut() {
        v.sort_by_key(|e| e.timestamp);
    }
    out
}

/// Nearest-rank quantile of the values.
pub fn quantile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((q.clamp(0.0, 1.0) * v.len() as f64).ceil() as usize).clamp(1, v.len());
    Some(v[rank - 1])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantile_nearest_rank() {
        let v: Vec<f64> = (1..=100).map(|x| x as f64).collect();
        assert_eq!(quantile(&v, 0.99), Some(99.0));
        assert_eq!(quantile(&[5.0], 0.99), Some(5.0));
        assert_eq!(quantile(&[], 0.5), None);
    }

    #[test]
    fn schema_encodes_categories_and_defaults() {
        let p = |u: &str, g: Option<f64>, s: Option<&str>| BackgroundProfile {
            user_id: u.into(),
            answers: [
                ("grade".to_owned(), g.map(FieldValue::Numeric)),
                ("school".to_owned(), s.map(|x| FieldValue::Categorical(x.into()))),
            ]
            .into_iter()
            .collect(),
        };
        let profiles = [p("a", Some(80.0), Some("north")), p("b", Some(60.0), Some("south")), p("c", Some(60.0), Some("south"))];
        let schema = FeatureSchema::from_profiles(&profiles);
        assert_eq!(schema.names()[..2], ["grade".to_owned(), "school".to_owned()]);
        assert_eq!(schema.encode_background(Some(&profiles[0])), [80.0, 0.0]);
        assert_eq!(schema.encode_background(None), [60.0, 1.0]);
        assert_eq!(schema.len(), 12);
    }
}
