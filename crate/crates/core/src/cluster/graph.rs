//! Bipartite question-keyword graph.

use std::collections::{BTreeMap, BTreeSet};

use crate::domain::{Question, QuestionId};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeywordGraph {
    question_keywords: BTreeMap<QuestionId, BTreeSet<String>>,
    keyword_questions: BTreeMap<String, BTreeSet<QuestionId>>,
}

impl KeywordGraph {
    pub fn build<'a, I: IntoIterator<Item = &'a Question>>(questions: I) -> Self {
        let mut g = Self::default();
        for q in questions {
            for kw in &q.keywords {
                g.keyword_questions.entry(kw.clone()).or_default().insert(q.id.clone());
            }
            g.question_keywords.insert(q.id.clone(), q.keywords.clone());
        }
        g
    }

    pub fn contains(&self, q: &QuestionId) -> bool {
        self.question_keywords.contains_key(q)
    }

    /// Number of questions tagged with `keyword`.
    pub fn keyword_degree(&self, keyword: &str) -> usize {
        self.keyword_questions.get(keyword).map_or(0, BTreeSet::len)
    }

    pub fn question_degree(&self, q: &QuestionId) -> usize {
        self.question_keywords.get(q).map_or(0, BTreeSet::len)
    }

    pub fn keywords_of(&self, q: &QuestionId) -> Option<&BTreeSet<String>> {
        self.question_keywords.get(q)
    }

    pub fn questions_with(&self, keyword: &str) -> Option<&BTreeSet<QuestionId>> {
        self.keyword_questions.get(keyword)
    }

    pub fn keyword_count(&self) -> usize {
        self.keyword_questions.len()
    }

    /// Summed degree of every keyword on `q`.
    pub fn total_keyword_degree(&self, q: &QuestionId) -> f64 {
        self.keywords_of(q)
            .map_or(0, |kws| kws.iter().map(|k| self.keyword_degree(k)).sum::<usize>()) as f64
    }

    /// Summed degree of the keywords the two questions share.
    pub fn relevance(&self, candidate: &QuestionId, reference: &QuestionId) -> f64 {
        let (Some(a), Some(b)) = (self.keywords_of(candidate), self.keywords_of(reference)) else {
            return 0.0;
        };
        a.intersection(b).map(|k| self.keyword_degree(k)).sum::<usize>() as f64
    }
}
