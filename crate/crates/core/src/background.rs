//! Background questionnaire profiles: grade normalization and mode imputation.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{self, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::domain::UserId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FieldValue {
    Numeric(f64),
    Categorical(String),
}

impl FieldValue {
    fn total_cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (FieldValue::Numeric(a), FieldValue::Numeric(b)) => a.total_cmp(b),
            (FieldValue::Numeric(_), FieldValue::Categorical(_)) => Ordering::Less,
            (FieldValue::Categorical(_), FieldValue::Numeric(_)) => Ordering::Greater,
            (FieldValue::Categorical(a), FieldValue::Categorical(b)) => a.cmp(b),
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            FieldValue::Numeric(v) => Some(*v),
            FieldValue::Categorical(_) => None,
        }
    }
}

/// One student's questionnaire answers; `None` marks a missing answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackgroundProfile {
    pub user_id: UserId,
    pub answers: BTreeMap<String, Option<FieldValue>>,
}

impl BackgroundProfile {
    pub fn get(&self, field: &str) -> Option<&FieldValue> {
        self.answers.get(field).and_then(Option::as_ref)
    }

    pub fn is_complete(&self) -> bool {
        self.answers.values().all(Option::is_some)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum BackgroundError {
    #[error("cannot read background file: {0}")]
    Io(#[from] io::Error),
    #[error("background file line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("field `{0}` is missing for every user")]
    AllMissing(String),
    #[error("grade scale for `{field}` is empty ({min}..{max})")]
    BadScale { field: String, min: f64, max: f64 },
}

pub fn load_background(path: impl AsRef<Path>) -> Result<Vec<BackgroundProfile>, BackgroundError> {
    parse_background(File::open(path)?)
}

/// Parses `user_id,<field>...`. Empty cells are missing; cells that parse as a
/// number are numeric, everything else categorical.
pub fn parse_background<R: Read>(reader: R) -> Result<Vec<BackgroundProfile>, BackgroundError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| BackgroundError::Parse {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    if headers.get(0) != Some("user_id") {
        return Err(BackgroundError::Parse {
            line: 1,
            message: "first column must be `user_id`".into(),
        });
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| BackgroundError::Parse {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let user_id = UserId::from(rec.get(0).unwrap_or(""));
        let answers = headers
            .iter()
            .zip(rec.iter())
            .skip(1)
            .map(|(h, cell)| {
                let v = if cell.is_empty() {
                    None
                } else if let Ok(x) = cell.parse::<f64>() {
                    Some(FieldValue::Numeric(x))
                } else {
                    Some(FieldValue::Categorical(cell.to_owned()))
                };
                (h.to_owned(), v)
            })
            .collect();
        out.push(BackgroundProfile { user_id, answers });
    }
    Ok(out)
}

/// Native range of a grade field, e.g. 0..20 or 1..10.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradeScale {
    pub min: f64,
    pub max: f64,
}

/// Maps each listed grade field onto 0..100, clamping values outside the scale.
pub fn normalize_grades(
    profiles: &[BackgroundProfile],
    scales: &BTreeMap<String, GradeScale>,
) -> Result<Vec<BackgroundProfile>, BackgroundError> {
    for (field, s) in scales {
        if s.max.is_nan() || s.min.is_nan() || s.max <= s.min {
            return Err(BackgroundError::BadScale {
                field: field.clone(),
                min: s.min,
                max: s.max,
            });
        }
    }
    Ok(profiles
        .iter()
        .map(|p| {
            let mut p = p.clone();
            for (field, s) in scales {
                if let Some(Some(FieldValue::Numeric(v))) = p.answers.get_mut(field) {
                    *v = ((*v - s.min) / (s.max - s.min) * 100.0).clamp(0.0, 100.0);
                }
            }
            p
        })
        .collect())
}

/// Fills every missing answer with the mode of that field over the other users.
/// Ties go to the smallest number, then the lexicographically first category.
/// Fields absent from a profile's map count as missing.
pub fn impute_background(
    profiles: &[BackgroundProfile],
) -> Result<Vec<BackgroundProfile>, BackgroundError> {
    let fields: BTreeSet<&String> = profiles.iter().flat_map(|p| p.answers.keys()).collect();
    let mut modes: BTreeMap<&String, FieldValue> = BTreeMap::new();
    for field in &fields {
        let mut values: Vec<&FieldValue> = profiles.iter().filter_map(|p| p.get(field)).collect();
        if profiles.iter().all(|p| p.get(field).is_some()) {
            continue;
        }
        values.sort_by(|a, b| a.total_cmp(b));
        let mode = mode_of_sorted(&values).ok_or_else(|| BackgroundError::AllMissing((*field).clone()))?;
        modes.insert(field, mode.clone());
    }
    Ok(profiles
        .iter()
        .map(|p| {
            let mut p = p.clone();
            for (field, mode) in &modes {
                let slot = p.answers.entry((*field).clone()).or_insert(None);
                if slot.is_none() {
                    *slot = Some(mode.clone());
                }
            }
            p
        })
        .collect())
}

/// Longest run in a sorted slice; the first (smallest) run wins ties.
fn mode_of_sorted<'a>(values: &[&'a FieldValue]) -> Option<&'a FieldValue> {
    let mut best: Option<(&FieldValue, usize)> = None;
    let mut i = 0;
    while i < values.len() {
        let mut j = i + 1;
        while j < values.len() && values[j].total_cmp(values[i]) == Ordering::Equal {
            j += 1;
        }
        if best.is_none_or(|(_, n)| j - i > n) {
            best = Some((values[i], j - i));
        }
        i = j;
    }
    best.map(|(v, _)| v)
}
