//! Concept maps: a weighted digraph whose arcs say "master `from` before `to`",
//! and the two-level walk that recommends questions from it.
//!
//! Cycles are allowed. Concepts in the same strongly connected component are
//! treated as having no prerequisite relation among themselves, so a map with
//! mutually dependent concepts can still be walked.

mod walk;

pub use walk::{
    concept_mastered, next_concept, next_question_in_concept, AnswerHistory, ConceptMapRecommender,
    CorrectnessEstimator, IndicatorProfile, IndicatorWeights, MasteryCriterion, MasteryScope,
    NextConcept, WalkError, WalkOutcome,
};

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{self, Read, Write};
use std::path::Path;

use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;
use serde::{Deserialize, Serialize};

use crate::domain::{ConceptId, Question, QuestionId};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Concept {
    pub id: ConceptId,
    pub question_ids: BTreeSet<QuestionId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prerequisite {
    pub from: ConceptId,
    pub to: ConceptId,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MapWarning {
    /// Concepts that depend on each other in a cycle.
    Cycle(Vec<ConceptId>),
}

#[derive(Debug, thiserror::Error)]
pub enum ConceptMapError {
    #[error("cannot read concept map: {0}")]
    Io(#[from] io::Error),
    #[error("{file} line {line}: {message}")]
    Parse {
        file: &'static str,
        line: u64,
        message: String,
    },
    #[error("arc {from} -> {to} references an unknown concept")]
    DanglingArcEndpoint { from: ConceptId, to: ConceptId },
    #[error("concept {0} has no questions")]
    EmptyConceptLabel(ConceptId),
    #[error("concept {0} is listed twice")]
    DuplicateConcept(ConceptId),
    #[error("concept {0} has an arc to itself")]
    SelfLoop(ConceptId),
    #[error("arc {from} -> {to} has non-positive weight {weight}")]
    BadWeight {
        from: ConceptId,
        to: ConceptId,
        weight: f64,
    },
}

#[derive(Debug, Clone)]
pub struct ConceptMap {
    concepts: Vec<Concept>,
    index: HashMap<ConceptId, usize>,
    arcs: Vec<Prerequisite>,
    /// Incoming arcs per concept as (source index, weight).
    preds: Vec<Vec<(usize, f64)>>,
    /// Strongly connected component id per concept.
    component: Vec<usize>,
}

impl ConceptMap {
    /// Validates the graph. Concepts are re-ordered by id; cycle warnings list
    /// each non-trivial strongly connected component once.
    pub fn new(
        mut concepts: Vec<Concept>,
        arcs: Vec<Prerequisite>,
    ) -> Result<(Self, Vec<MapWarning>), ConceptMapError> {
        concepts.sort_by(|a, b| a.id.cmp(&b.id));
        let mut index = HashMap::new();
        for (i, c) in concepts.iter().enumerate() {
            if c.question_ids.is_empty() {
                return Err(ConceptMapError::EmptyConceptLabel(c.id.clone()));
            }
            if index.insert(c.id.clone(), i).is_some() {
                return Err(ConceptMapError::DuplicateConcept(c.id.clone()));
            }
        }
        let mut preds = vec![Vec::new(); concepts.len()];
        let mut graph = DiGraph::<usize, ()>::new();
        let nodes: Vec<_> = (0..concepts.len()).map(|i| graph.add_node(i)).collect();
        for arc in &arcs {
            let (Some(&f), Some(&t)) = (index.get(&arc.from), index.get(&arc.to)) else {
                return Err(ConceptMapError::DanglingArcEndpoint {
                    from: arc.from.clone(),
                    to: arc.to.clone(),
                });
            };
            if f == t {
                return Err(ConceptMapError::SelfLoop(arc.from.clone()));
            }
            if !(arc.weight > 0.0 && arc.weight.is_finite()) {
                return Err(ConceptMapError::BadWeight {
                    from: arc.from.clone(),
                    to: arc.to.clone(),
                    weight: arc.weight,
                });
            }
            preds[t].push((f, arc.weight));
            graph.add_edge(nodes[f], nodes[t], ());
        }
        let mut component = vec![0; concepts.len()];
        let mut warnings = Vec::new();
        let mut sccs = tarjan_scc(&graph);
        // Deterministic component ids and warning order.
        for scc in &mut sccs {
            scc.sort_by_key(|n| graph[*n]);
        }
        sccs.sort_by_key(|scc| graph[scc[0]]);
        for (cid, scc) in sccs.iter().enumerate() {
            for n in scc {
                component[graph[*n]] = cid;
            }
            if scc.len() > 1 {
                warnings.push(MapWarning::Cycle(
                    scc.iter().map(|n| concepts[graph[*n]].id.clone()).collect(),
                ));
            }
        }
        Ok((
            Self {
                concepts,
                index,
                arcs,
                preds,
                component,
            },
            warnings,
        ))
    }

    pub fn len(&self) -> usize {
        self.concepts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.concepts.is_empty()
    }

    pub fn concepts(&self) -> &[Concept] {
        &self.concepts
    }

    pub fn arcs(&self) -> &[Prerequisite] {
        &self.arcs
    }

    pub fn index_of(&self, id: &ConceptId) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn concept(&self, id: &ConceptId) -> Option<&Concept> {
        self.index_of(id).map(|i| &self.concepts[i])
    }

    /// All incoming arcs of concept `i`, including ones inside its component.
    pub fn incoming(&self, i: usize) -> &[(usize, f64)] {
        &self.preds[i]
    }

    /// Prerequisites of concept `i` that lie outside its strongly connected component.
    pub fn prerequisites(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let c = self.component[i];
        self.preds[i].iter().copied().filter(move |&(p, _)| self.component[p] != c)
    }

    pub fn same_component(&self, a: usize, b: usize) -> bool {
        self.component[a] == self.component[b]
    }

    /// Indices of all concepts that (transitively) must precede concept `i`,
    /// ignoring arcs inside components.
    pub fn ancestors(&self, i: usize) -> BTreeSet<usize> {
        let mut seen = BTreeSet::new();
        let mut stack: Vec<usize> = self.prerequisites(i).map(|(p, _)| p).collect();
        while let Some(p) = stack.pop() {
            if seen.insert(p) {
                stack.extend(self.prerequisites(p).map(|(q, _)| q));
            }
        }
        seen
    }

    /// Concept indices labelled with question `q`.
    pub fn concepts_of(&self, q: &QuestionId) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.concepts[i].question_ids.contains(q))
            .collect()
    }

    /// Bank questions that label no concept.
    pub fn unmapped_questions<'a>(&self, bank: &'a [Question]) -> Vec<&'a QuestionId> {
        let mapped: BTreeSet<&QuestionId> =
            self.concepts.iter().flat_map(|c| c.question_ids.iter()).collect();
        bank.iter().map(|q| &q.id).filter(|id| !mapped.contains(id)).collect()
    }

    /// The sub-map over concepts that have at least one question in `keep`, with
    /// question labels restricted to `keep`. Arcs between kept concepts survive.
    pub fn restrict_to(&self, keep: &BTreeSet<QuestionId>) -> ConceptMap {
        let concepts: Vec<Concept> = self
            .concepts
            .iter()
            .filter_map(|c| {
                let qs: BTreeSet<QuestionId> = c.question_ids.intersection(keep).cloned().collect();
                (!qs.is_empty()).then(|| Concept {
                    id: c.id.clone(),
                    question_ids: qs,
                })
            })
            .collect();
        let ids: BTreeSet<&ConceptId> = concepts.iter().map(|c| &c.id).collect();
        let arcs = self
            .arcs
            .iter()
            .filter(|a| ids.contains(&a.from) && ids.contains(&a.to))
            .cloned()
            .collect();
        ConceptMap::new(concepts, arcs)
            .expect("restriction of a valid map is valid")
            .0
    }
}

pub fn load_concept_map(
    nodes_path: impl AsRef<Path>,
    arcs_path: impl AsRef<Path>,
) -> Result<(ConceptMap, Vec<MapWarning>), ConceptMapError> {
    let concepts = parse_nodes(File::open(nodes_path)?)?;
    let arcs = parse_arcs(File::open(arcs_path)?)?;
    ConceptMap::new(concepts, arcs)
}

/// `concept_id,question_ids` with `;`-separated question ids.
pub fn parse_nodes<R: Read>(reader: R) -> Result<Vec<Concept>, ConceptMapError> {
    let mut out = Vec::new();
    for (line, rec) in records(reader, "nodes", &["concept_id", "question_ids"])? {
        let id = ConceptId::from(rec.get(0).unwrap_or(""));
        if id.as_str().is_empty() {
            return Err(ConceptMapError::Parse {
                file: "nodes",
                line,
                message: "empty concept_id".into(),
            });
        }
        let question_ids = rec
            .get(1)
            .unwrap_or("")
            .split(';')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(QuestionId::from)
            .collect();
        out.push(Concept { id, question_ids });
    }
    Ok(out)
}

/// `from,to,weight`.
pub fn parse_arcs<R: Read>(reader: R) -> Result<Vec<Prerequisite>, ConceptMapError> {
    let mut out = Vec::new();
    for (line, rec) in records(reader, "arcs", &["from", "to", "weight"])? {
        let weight = rec.get(2).unwrap_or("").parse::<f64>().map_err(|_| ConceptMapError::Parse {
            file: "arcs",
            line,
            message: format!("bad weight `{}`", rec.get(2).unwrap_or("")),
        })?;
        out.push(Prerequisite {
            from: rec.get(0).unwrap_or("").into(),
            to: rec.get(1).unwrap_or("").into(),
            weight,
        });
    }
    Ok(out)
}

/// Partial-ordering file `from,to`; every arc gets weight 1.
pub fn parse_partial_order<R: Read>(reader: R) -> Result<Vec<Prerequisite>, ConceptMapError> {
    Ok(records(reader, "order", &["from", "to"])?
        .into_iter()
        .map(|(_, rec)| Prerequisite {
            from: rec.get(0).unwrap_or("").into(),
            to: rec.get(1).unwrap_or("").into(),
            weight: 1.0,
        })
        .collect())
}

/// Writes arcs in the `from,to,weight` format read by [`parse_arcs`].
pub fn write_arcs<W: Write>(arcs: &[Prerequisite], writer: W) -> Result<(), ConceptMapError> {
    let mut w = csv::Writer::from_writer(writer);
    let to_io = |e: csv::Error| ConceptMapError::Io(io::Error::other(e));
    w.write_record(["from", "to", "weight"]).map_err(to_io)?;
    for a in arcs {
        w.write_record([a.from.as_str(), a.to.as_str(), &a.weight.to_string()])
            .map_err(to_io)?;
    }
    w.flush()?;
    Ok(())
}

fn records<R: Read>(
    reader: R,
    file: &'static str,
    header: &[&str],
) -> Result<Vec<(u64, csv::StringRecord)>, ConceptMapError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let found = rdr
        .headers()
        .map_err(|e| ConceptMapError::Parse {
            file,
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    if found.iter().collect::<Vec<_>>() != header {
        return Err(ConceptMapError::Parse {
            file,
            line: 1,
            message: format!("expected header `{}`", header.join(",")),
        });
    }
    rdr.records()
        .map(|r| {
            r.map(|rec| (rec.position().map_or(0, |p| p.line()), rec))
                .map_err(|e| ConceptMapError::Parse {
                    file,
                    line: e.position().map_or(0, |p| p.line()),
                    message: e.to_string(),
                })
        })
        .collect()
}

/// Per-concept mean failure rate, used as the planner's entry cost.
pub fn concept_failure_costs(
    map: &ConceptMap,
    rates: &crate::stats::SuccessRates,
) -> BTreeMap<ConceptId, f64> {
    map.concepts()
        .iter()
        .map(|c| {
            let sum: f64 = c.question_ids.iter().map(|q| rates.failure_rate(q)).sum();
            (c.id.clone(), sum / c.question_ids.len() as f64)
        })
        .collect()
}
