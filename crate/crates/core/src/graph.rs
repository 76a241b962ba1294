//! Peer score matrix, relevance vector, threshold pruning and the weighted
//! communication graph built from them.
//!
//! Node ids index every structure here. Relevance `S_j` is the column sum of
//! the score matrix; the surviving nodes are ranked by `S` descending (ties by
//! lower node id) and every higher-ranked node feeds every lower-ranked one.
//! The in-edge weights of a target are the sources' relevances normalized over
//! that target's in-neighbourhood.

use std::fmt;

use serde::{Deserialize, Serialize};

/// Row-sum tolerance accepted by [`ScoreMatrix::from_rows`].
pub const ROW_SUM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ScoreMatrixError {
    #[error("score matrix needs n >= 2, got {0}")]
    TooSmall(usize),
    #[error("row {row} has {len} entries, expected {n}")]
    Ragged { row: usize, len: usize, n: usize },
    #[error("diagonal entry {0} is not zero")]
    SelfScore(usize),
    #[error("entry ({row}, {col}) = {value} is negative or not finite")]
    BadEntry { row: usize, col: usize, value: f64 },
    #[error("row {row} sums to {sum}, expected 1")]
    RowSum { row: usize, sum: f64 },
}

/// `entries[i][j]` is the share of node i's unit score given to node j.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreMatrix {
    entries: Vec<Vec<f64>>,
}

impl ScoreMatrix {
    pub fn from_rows(entries: Vec<Vec<f64>>) -> Result<Self, ScoreMatrixError> {
        let n = entries.len();
        if n < 2 {
            return Err(ScoreMatrixError::TooSmall(n));
        }
        for (i, row) in entries.iter().enumerate() {
            if row.len() != n {
                return Err(ScoreMatrixError::Ragged { row: i, len: row.len(), n });
            }
            if row[i] != 0.0 {
                return Err(ScoreMatrixError::SelfScore(i));
            }
            for (j, &value) in row.iter().enumerate() {
                if !(value >= 0.0 && value.is_finite()) {
                    return Err(ScoreMatrixError::BadEntry { row: i, col: j, value });
                }
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(ScoreMatrixError::RowSum { row: i, sum });
            }
        }
        Ok(Self { entries })
    }

    /// Builds from per-scorer rows over the *other* nodes (ascending node id,
    /// length n-1), inserting the zero diagonal.
    pub fn from_peer_rows(peer_rows: &[Vec<f64>]) -> Result<Self, ScoreMatrixError> {
        let n = peer_rows.len();
        let entries = peer_rows
            .iter()
            .enumerate()
            .map(|(i, peers)| {
                let mut row = peers.clone();
                if i <= row.len() {
                    row.insert(i, 0.0);
                }
                row
            })
            .collect();
        if n < 2 {
            return Err(ScoreMatrixError::TooSmall(n));
        }
        Self::from_rows(entries)
    }

    pub fn n(&self) -> usize {
        self.entries.len()
    }

    pub fn entries(&self) -> &[Vec<f64>] {
        &self.entries
    }
}

/// `scores[j]` = total score node j received.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelevanceVector {
    pub scores: Vec<f64>,
}

impl RelevanceVector {
    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.scores.iter().sum()
    }
}

pub fn relevance_scores(m: &ScoreMatrix) -> RelevanceVector {
    let n = m.n();
    let scores = (0..n)
        .map(|j| (0..n).filter(|&i| i != j).map(|i| m.entries[i][j]).sum())
        .collect();
    RelevanceVector { scores }
}

/// What the pruning threshold is compared against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TauScale {
    /// Raw `S_j`, whose total is the node count.
    #[default]
    Raw,
    /// `S_j / Σ_k S_k`, independent of the node count.
    Share,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pruning {
    pub surviving: Vec<usize>,
    pub pruned: Vec<usize>,
}

fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (j, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = j;
        }
    }
    best
}

/// Keeps `{j : S_j >= tau}`; never returns an empty survivor set (the argmax
/// node is kept when everything falls below `tau`).
pub fn prune(v: &RelevanceVector, tau: f64, scale: TauScale) -> Pruning {
    let total = v.total();
    let measure = |s: f64| match scale {
        TauScale::Raw => s,
        TauScale::Share if total > 0.0 => s / total,
        TauScale::Share => 0.0,
    };
    let (mut surviving, mut pruned): (Vec<usize>, Vec<usize>) =
        (0..v.len()).partition(|&j| measure(v.scores[j]) >= tau);
    if surviving.is_empty() && !v.is_empty() {
        let keep = argmax(&v.scores);
        surviving.push(keep);
        pruned.retain(|&j| j != keep);
    }
    Pruning { surviving, pruned }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RelevanceLabel {
    High,
    Moderate,
    Low,
}

impl fmt::Display for RelevanceLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RelevanceLabel::High => "high relevance",
            RelevanceLabel::Moderate => "moderate relevance",
            RelevanceLabel::Low => "low relevance",
        })
    }
}

/// high: w > 0.7; moderate: 0.4 < w <= 0.7; low: w <= 0.4.
pub fn weight_to_label(w: f64) -> RelevanceLabel {
    if w > 0.7 {
        RelevanceLabel::High
    } else if w > 0.4 {
        RelevanceLabel::Moderate
    } else {
        RelevanceLabel::Low
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub source: usize,
    pub target: usize,
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Topology {
    /// Every higher-ranked node feeds every lower-ranked node.
    #[default]
    Ranked,
    /// All ordered pairs including self-loops, unit weights.
    Complete,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrunedNode {
    pub node_id: usize,
    pub relevance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommGraph {
    pub topology: Topology,
    /// Surviving node ids, rank 1 first.
    pub order: Vec<usize>,
    /// `relevance[r]` belongs to `order[r]`.
    pub relevance: Vec<f64>,
    /// Sorted by (target rank, source rank).
    pub edges: Vec<Edge>,
    pub pruned: Vec<PrunedNode>,
}

/// `values / sum`, or uniform when the sum is not positive.
fn normalize(values: &[f64]) -> Vec<f64> {
    let sum: f64 = values.iter().sum();
    if sum > 0.0 {
        values.iter().map(|v| v / sum).collect()
    } else {
        vec![1.0 / values.len() as f64; values.len()]
    }
}

impl CommGraph {
    /// Ranks `surviving` by relevance and wires the ranked DAG.
    pub fn build(pruning: &Pruning, v: &RelevanceVector) -> Self {
        let mut order = pruning.surviving.clone();
        order.sort_by(|&a, &b| v.scores[b].total_cmp(&v.scores[a]).then(a.cmp(&b)));
        let relevance = order.iter().map(|&j| v.scores[j]).collect();
        let pruned = pruning
            .pruned
            .iter()
            .map(|&j| PrunedNode {
                node_id: j,
                relevance: v.scores[j],
            })
            .collect();
        Self::ranked(order, relevance, pruned)
    }

    fn ranked(order: Vec<usize>, relevance: Vec<f64>, pruned: Vec<PrunedNode>) -> Self {
        let mut edges = Vec::new();
        for t in 1..order.len() {
            let weights = normalize(&relevance[..t]);
            for (s, w) in weights.into_iter().enumerate() {
                edges.push(Edge {
                    source: order[s],
                    target: order[t],
                    weight: w,
                });
            }
        }
        Self {
            topology: Topology::Ranked,
            order,
            relevance,
            edges,
            pruned,
        }
    }

    /// Fully connected graph over `nodes` (in the given order) with self-loops
    /// and unit weights.
    pub fn complete(nodes: &[usize]) -> Self {
        let mut edges = Vec::with_capacity(nodes.len() * nodes.len());
        for &target in nodes {
            for &source in nodes {
                edges.push(Edge {
                    source,
                    target,
                    weight: 1.0,
                });
            }
        }
        Self {
            topology: Topology::Complete,
            order: nodes.to_vec(),
            relevance: vec![1.0; nodes.len()],
            edges,
            pruned: Vec::new(),
        }
    }

    /// Same nodes with the rank order inverted; edges re-derived.
    pub fn reversed(&self) -> Self {
        match self.topology {
            Topology::Ranked => {
                let order = self.order.iter().rev().copied().collect();
                let relevance = self.relevance.iter().rev().copied().collect();
                Self::ranked(order, relevance, self.pruned.clone())
            }
            Topology::Complete => {
                let nodes: Vec<usize> = self.order.iter().rev().copied().collect();
                Self::complete(&nodes)
            }
        }
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// 0-based rank.
    pub fn rank_of(&self, node: usize) -> Option<usize> {
        self.order.iter().position(|&n| n == node)
    }

    pub fn relevance_of(&self, node: usize) -> Option<f64> {
        self.rank_of(node).map(|r| self.relevance[r])
    }

    /// In-edges of `target`, in source rank order.
    pub fn in_edges(&self, target: usize) -> Vec<Edge> {
        let mut edges: Vec<Edge> = self.edges.iter().filter(|e| e.target == target).copied().collect();
        edges.sort_by_key(|e| self.rank_of(e.source));
        edges
    }

    pub fn out_degree(&self, node: usize) -> usize {
        self.edges.iter().filter(|e| e.source == node && e.target != node).count()
    }

    /// Feedback contributors of `node`: all lower-ranked nodes in rank order,
    /// with their relevances normalized over that set.
    pub fn feedback_weights(&self, node: usize) -> Vec<(usize, f64)> {
        let Some(r) = self.rank_of(node) else {
            return Vec::new();
        };
        if r + 1 >= self.order.len() {
            return Vec::new();
        }
        let weights = normalize(&self.relevance[r + 1..]);
        self.order[r + 1..].iter().copied().zip(weights).collect()
    }

    /// The node with the most outgoing edges; ties go to the better rank.
    pub fn dominant_source(&self) -> Option<usize> {
        let mut best: Option<(usize, usize)> = None;
        for &node in &self.order {
            let d = self.out_degree(node);
            if best.is_none_or(|(_, bd)| d > bd) {
                best = Some((node, d));
            }
        }
        best.map(|(n, _)| n)
    }

    /// Relevance shares `S_j / Σ S` in rank order.
    pub fn relevance_shares(&self) -> Vec<f64> {
        normalize(&self.relevance)
    }
}
