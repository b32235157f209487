//! Concept-level path planning: the cheapest prerequisite-feasible order that
//! covers a required set of concepts.

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashSet};

use crate::concept_map::ConceptMap;
use crate::domain::ConceptId;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum PlanError {
    #[error("concept {0} is not in the map")]
    UnknownConcept(ConceptId),
    #[error("concept {0} can never have its prerequisites satisfied")]
    Infeasible(ConceptId),
    #[error("concept {0} has a missing, negative or non-finite cost")]
    InvalidCost(ConceptId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PlannerOptions {
    /// Treat each strongly connected component as satisfiable from outside:
    /// arcs inside a cycle do not block. When false every arc must be honored.
    pub relax_cycles: bool,
    /// Closures larger than this are ordered greedily (cheapest available
    /// concept first), which reaches the same cost.
    pub exact_limit: usize,
}

impl Default for PlannerOptions {
    fn default() -> Self {
        Self {
            relax_cycles: true,
            exact_limit: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlannedPath {
    pub concepts: Vec<ConceptId>,
    pub cost: f64,
}

fn blockers(map: &ConceptMap, i: usize, opts: &PlannerOptions) -> Vec<usize> {
    if opts.relax_cycles {
        map.prerequisites(i).map(|(p, _)| p).collect()
    } else {
        map.incoming(i).iter().map(|&(p, _)| p).collect()
    }
}

/// Cost-ordered search key: the sequence of (cost, index) steps taken so far.
#[derive(Debug, Clone, PartialEq)]
struct Entry {
    cost: f64,
    steps: Vec<(f64, usize)>,
    mask: u64,
}

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        self.cost.total_cmp(&other.cost).then_with(|| {
            for (a, b) in self.steps.iter().zip(&other.steps) {
                let o = a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
                if o != Ordering::Equal {
                    return o;
                }
            }
            self.steps.len().cmp(&other.steps.len())
        })
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Minimum total entry cost over every order that visits each required concept
/// after its prerequisites. Dijkstra over sets of visited concepts; among equal
/// costs the order taking cheaper, then smaller-id, concepts first wins.
pub fn plan_path_dijkstra(
    map: &ConceptMap,
    required: &BTreeSet<ConceptId>,
    costs: &BTreeMap<ConceptId, f64>,
    opts: &PlannerOptions,
) -> Result<PlannedPath, PlanError> {
    let mut req_idx = BTreeSet::new();
    for c in required {
        req_idx.insert(map.index_of(c).ok_or_else(|| PlanError::UnknownConcept(c.clone()))?);
    }
    // Every concept a required one transitively waits on.
    let mut closure = BTreeSet::new();
    let mut stack: Vec<usize> = req_idx.iter().copied().collect();
    while let Some(i) = stack.pop() {
        if closure.insert(i) {
            stack.extend(blockers(map, i, opts));
        }
    }
    let nodes: Vec<usize> = closure.into_iter().collect();
    let local: BTreeMap<usize, usize> = nodes.iter().enumerate().map(|(l, &g)| (g, l)).collect();
    let mut cost = Vec::with_capacity(nodes.len());
    for &g in &nodes {
        let id = &map.concepts()[g].id;
        match costs.get(id) {
            Some(&c) if c.is_finite() && c >= 0.0 => cost.push(c),
            _ => return Err(PlanError::InvalidCost(id.clone())),
        }
    }
    let pre: Vec<Vec<usize>> = nodes
        .iter()
        .map(|&g| blockers(map, g, opts).into_iter().map(|p| local[&p]).collect())
        .collect();

    // Fixpoint of what can ever be entered.
    let mut reachable = vec![false; nodes.len()];
    loop {
        let mut changed = false;
        for l in 0..nodes.len() {
            if !reachable[l] && pre[l].iter().all(|&p| reachable[p]) {
                reachable[l] = true;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    if let Some(&r) = req_idx.iter().find(|r| !reachable[local[r]]) {
        return Err(PlanError::Infeasible(map.concepts()[r].id.clone()));
    }

    let order = if nodes.len() <= opts.exact_limit.min(63) {
        lattice_search(&cost, &pre)
    } else {
        greedy_order(&cost, &pre)
    };
    Ok(PlannedPath {
        cost: order.iter().map(|&l| cost[l]).sum(),
        concepts: order.into_iter().map(|l| map.concepts()[nodes[l]].id.clone()).collect(),
    })
}

fn available(pre: &[Vec<usize>], done: &dyn Fn(usize) -> bool) -> Vec<usize> {
    (0..pre.len())
        .filter(|&l| !done(l) && pre[l].iter().all(|&p| done(p)))
        .collect()
}

fn lattice_search(cost: &[f64], pre: &[Vec<usize>]) -> Vec<usize> {
    let n = cost.len();
    let goal: u64 = if n == 64 { u64::MAX } else { (1u64 << n) - 1 };
    let mut heap = BinaryHeap::new();
    heap.push(Reverse(Entry {
        cost: 0.0,
        steps: Vec::new(),
        mask: 0,
    }));
    let mut settled = HashSet::new();
    while let Some(Reverse(e)) = heap.pop() {
        if e.mask == goal {
            return e.steps.into_iter().map(|s| s.1).collect();
        }
        if !settled.insert(e.mask) {
            continue;
        }
        for l in available(pre, &|i| e.mask & (1 << i) != 0) {
            let mask = e.mask | (1 << l);
            if settled.contains(&mask) {
                continue;
            }
            let mut steps = e.steps.clone();
            steps.push((cost[l], l));
            heap.push(Reverse(Entry {
                cost: e.cost + cost[l],
                steps,
                mask,
            }));
        }
    }
    unreachable!("every closure node is reachable")
}

fn greedy_order(cost: &[f64], pre: &[Vec<usize>]) -> Vec<usize> {
    let mut done = vec![false; cost.len()];
    let mut order = Vec::with_capacity(cost.len());
    while order.len() < cost.len() {
        let next = available(pre, &|i| done[i])
            .into_iter()
            .min_by(|&a, &b| cost[a].total_cmp(&cost[b]).then(a.cmp(&b)))
            .expect("closure is reachable");
        done[next] = true;
        order.push(next);
    }
    order
}

/// True when no concept appears before one of its prerequisites that is also
/// on the path or that was never visited.
pub fn is_prerequisite_feasible(map: &ConceptMap, path: &[ConceptId], opts: &PlannerOptions) -> bool {
    let mut seen = BTreeSet::new();
    for c in path {
        let Some(i) = map.index_of(c) else { return false };
        if blockers(map, i, opts).iter().any(|p| !seen.contains(p)) {
            return false;
        }
        seen.insert(i);
    }
    true
}
