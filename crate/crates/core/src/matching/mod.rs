//! Graph matching: affinity construction, the reweighted random-walk
//! solver, discretization, and locality-based filtering of the result.

mod affinity;
mod hungarian;
mod lpm;
mod rrwm;
mod sinkhorn;

use std::cmp::Ordering;
use std::collections::HashSet;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::CellGraph;

pub use affinity::{build_affinity, AffinityMatrix, AffinityParams};
pub use hungarian::{hungarian, Assignment};
pub use lpm::{lpm_filter, positions_by_id, LpmOutcome, LpmParams};
pub use rrwm::{rrwm, RrwmParams, SoftMatch};
pub use sinkhorn::{sinkhorn, SinkhornResult, PAD_EPSILON};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Match {
    pub src_id: String,
    pub tgt_id: String,
    pub score: f64,
}

impl Match {
    pub fn new(src_id: impl Into<String>, tgt_id: impl Into<String>, score: f64) -> Self {
        Self {
            src_id: src_id.into(),
            tgt_id: tgt_id.into(),
            score,
        }
    }
}

/// One-to-one scored correspondences.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MatchSet {
    matches: Vec<Match>,
}

impl MatchSet {
    /// Rejects repeated source or target ids and scores outside `[0, 1]`.
    pub fn new(matches: Vec<Match>) -> Result<Self> {
        let mut src = HashSet::with_capacity(matches.len());
        let mut tgt = HashSet::with_capacity(matches.len());
        for m in &matches {
            if !(0.0..=1.0).contains(&m.score) {
                return Err(Error::InvalidInput(format!(
                    "match {} -> {} has score {} outside [0, 1]",
                    m.src_id, m.tgt_id, m.score
                )));
            }
            if !src.insert(m.src_id.as_str()) {
                return Err(Error::InvalidInput(format!(
                    "source id `{}` matched twice",
                    m.src_id
                )));
            }
            if !tgt.insert(m.tgt_id.as_str()) {
                return Err(Error::InvalidInput(format!(
                    "target id `{}` matched twice",
                    m.tgt_id
                )));
            }
        }
        Ok(Self { matches })
    }

    /// Canonical one-to-one pool from possibly conflicting candidates.
    ///
    /// Candidates are ranked by descending score, ties by `(src_id,
    /// tgt_id)`; each is accepted if neither endpoint is taken yet. The
    /// result is sorted by `(src_id, tgt_id)`, so it does not depend on the
    /// order candidates arrived in.
    pub fn pool(mut candidates: Vec<Match>) -> Self {
        candidates.sort_by(|a, b| {
            b.score
                .partial_cmp(&a.score)
                .unwrap_or(Ordering::Equal)
                .then_with(|| a.src_id.cmp(&b.src_id))
                .then_with(|| a.tgt_id.cmp(&b.tgt_id))
        });
        let mut src = HashSet::new();
        let mut tgt = HashSet::new();
        let mut kept: Vec<Match> = Vec::new();
        for m in candidates {
            if src.contains(&m.src_id) || tgt.contains(&m.tgt_id) {
                continue;
            }
            src.insert(m.src_id.clone());
            tgt.insert(m.tgt_id.clone());
            kept.push(m);
        }
        kept.sort_by(|a, b| {
            a.src_id
                .cmp(&b.src_id)
                .then_with(|| a.tgt_id.cmp(&b.tgt_id))
        });
        Self { matches: kept }
    }

    pub fn len(&self) -> usize {
        self.matches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matches.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Match> {
        self.matches.iter()
    }

    pub fn as_slice(&self) -> &[Match] {
        &self.matches
    }

    pub fn into_vec(self) -> Vec<Match> {
        self.matches
    }

    pub fn total_score(&self) -> f64 {
        self.matches.iter().map(|m| m.score).sum()
    }
}

impl<'a> IntoIterator for &'a MatchSet {
    type Item = &'a Match;
    type IntoIter = std::slice::Iter<'a, Match>;

    fn into_iter(self) -> Self::IntoIter {
        self.matches.iter()
    }
}

/// How the soft RRWM output is turned into a one-to-one assignment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Discretization {
    #[default]
    Hungarian,
    /// Sinkhorn balancing followed by greedy one-to-one selection.
    SinkhornGreedy,
}

impl std::str::FromStr for Discretization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hungarian" => Ok(Self::Hungarian),
            "sinkhorn" | "sinkhorn_greedy" | "sinkhorn-greedy" => Ok(Self::SinkhornGreedy),
            other => Err(Error::Config(format!("unknown discretization `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatcherParams {
    pub affinity: AffinityParams,
    pub rrwm: RrwmParams,
    pub discretization: Discretization,
    /// Matches whose row-normalized soft score falls below this are dropped.
    pub score_threshold: f64,
}

impl Default for MatcherParams {
    fn default() -> Self {
        Self {
            affinity: AffinityParams::default(),
            rrwm: RrwmParams::default(),
            discretization: Discretization::Hungarian,
            score_threshold: 0.1,
        }
    }
}

/// Output of matching one graph pair.
#[derive(Debug, Clone)]
pub struct GraphMatch {
    pub matches: Vec<Match>,
    pub rrwm_iterations: usize,
    pub rrwm_converged: bool,
}

/// Affinity → RRWM → discretization → score threshold for one graph pair.
pub fn match_graphs(
    source: &CellGraph,
    target: &CellGraph,
    params: &MatcherParams,
) -> Result<GraphMatch> {
    let k = build_affinity(source, target, &params.affinity)?;
    let soft = rrwm(&k, &params.rrwm)?;
    let scores = soft.row_normalized();
    let pairs: Vec<(usize, usize)> = match params.discretization {
        Discretization::Hungarian => hungarian(&scores)?.pairs,
        Discretization::SinkhornGreedy => {
            let balanced = sinkhorn(&scores, 1000, 1e-9)?.matrix;
            greedy_assignment(&balanced)
        }
    };
    let matches = pairs
        .into_iter()
        .map(|(i, a)| (i, a, scores[(i, a)]))
        .filter(|&(_, _, s)| s >= params.score_threshold)
        .map(|(i, a, s)| {
            Match::new(
                &source.nodes[i].cell_id,
                &target.nodes[a].cell_id,
                s.clamp(0.0, 1.0),
            )
        })
        .collect();
    Ok(GraphMatch {
        matches,
        rrwm_iterations: soft.iterations,
        rrwm_converged: soft.converged,
    })
}

/// Repeatedly takes the largest remaining entry whose row and column are
/// both free.
pub fn greedy_assignment(m: &DMatrix<f64>) -> Vec<(usize, usize)> {
    let mut entries: Vec<(usize, usize, f64)> = (0..m.nrows())
        .flat_map(|i| (0..m.ncols()).map(move |j| (i, j)))
        .map(|(i, j)| (i, j, m[(i, j)]))
        .collect();
    entries.sort_by(|a, b| {
        b.2.partial_cmp(&a.2)
            .unwrap_or(Ordering::Equal)
            .then((a.0, a.1).cmp(&(b.0, b.1)))
    });
    let mut rows = vec![false; m.nrows()];
    let mut cols = vec![false; m.ncols()];
    let mut out = Vec::new();
    for (i, j, _) in entries {
        if !rows[i] && !cols[j] {
            rows[i] = true;
            cols[j] = true;
            out.push((i, j));
        }
    }
    out.sort_unstable();
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Point2D;
    use crate::graph::build_graph;
    use crate::io::CellRecord;

    #[test]
    fn match_set_rejects_duplicates() {
        assert!(MatchSet::new(vec![Match::new("a", "x", 0.5), Match::new("a", "y", 0.5)]).is_err());
        assert!(MatchSet::new(vec![Match::new("a", "x", 0.5), Match::new("b", "x", 0.5)]).is_err());
        assert!(MatchSet::new(vec![Match::new("a", "x", 1.5)]).is_err());
    }

    #[test]
    fn pooling_is_order_independent() {
        let cands = vec![
            Match::new("a", "x", 0.9),
            Match::new("b", "x", 0.95),
            Match::new("a", "y", 0.3),
            Match::new("c", "z", 0.5),
            Match::new("c", "z", 0.5),
        ];
        let mut rev = cands.clone();
        rev.reverse();
        let p = MatchSet::pool(cands);
        assert_eq!(p, MatchSet::pool(rev));
        assert_eq!(
            p.as_slice(),
            &[
                Match::new("a", "y", 0.3),
                Match::new("b", "x", 0.95),
                Match::new("c", "z", 0.5)
            ]
        );
    }

    #[test]
    fn identical_graphs_match_identically() {
        let pts = [
            (0.0, 0.0),
            (9.0, 1.0),
            (4.0, 8.0),
            (12.0, 10.0),
            (2.0, 14.0),
            (15.0, 3.0),
        ];
        let cells: Vec<CellRecord> = pts
            .iter()
            .enumerate()
            .map(|(i, &(x, y))| {
                CellRecord::new(format!("n{i}"), Point2D::new(x, y))
                    .with_feature("perimeter", 20.0 + 3.0 * i as f64)
                    .with_feature("solidity", 0.7 + 0.04 * i as f64)
            })
            .collect();
        let refs: Vec<&CellRecord> = cells.iter().collect();
        let names = vec!["perimeter".to_string(), "solidity".to_string()];
        let g = build_graph(&refs, 15.0, &names).unwrap();
        for disc in [Discretization::Hungarian, Discretization::SinkhornGreedy] {
            let params = MatcherParams {
                discretization: disc,
                ..Default::default()
            };
            let out = match_graphs(&g, &g, &params).unwrap();
            assert_eq!(out.matches.len(), 6);
            assert!(out.matches.iter().all(|m| m.src_id == m.tgt_id));
        }
    }

    #[test]
    fn greedy_takes_largest_first() {
        let m = DMatrix::from_row_slice(2, 2, &[0.9, 0.8, 0.85, 0.1]);
        assert_eq!(greedy_assignment(&m), vec![(0, 0), (1, 1)]);
    }
}
