use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::{Match, MatchSet};
use crate::error::{Error, Result};
use crate::geometry::Point2D;
use crate::io::CellTable;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LpmParams {
    /// Neighbourhood size.
    pub k: usize,
    /// A match survives when its cost is at most `lambda · k`.
    pub lambda: f64,
}

impl Default for LpmParams {
    fn default() -> Self {
        Self { k: 8, lambda: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpmOutcome {
    pub matches: MatchSet,
    /// Too few matches to judge neighbourhoods; input returned unchanged.
    pub low_confidence: bool,
    /// Survivors of the first pass.
    pub first_pass: usize,
}

pub fn positions_by_id(table: &CellTable) -> HashMap<String, Point2D> {
    table
        .cells()
        .iter()
        .map(|c| (c.id.clone(), c.centroid))
        .collect()
}

/// Indices (into `pool`) of the `k` pool members nearest to `pool[of]`,
/// excluding `of` itself; ties go to the lower index.
fn knn(points: &[Point2D], pool: &[usize], of: Point2D, skip: usize, k: usize) -> Vec<usize> {
    let mut d: Vec<(f64, usize)> = pool
        .iter()
        .filter(|&&m| m != skip)
        .map(|&m| (points[m].distance_sq(&of), m))
        .collect();
    let take = k.min(d.len());
    if take < d.len() {
        d.select_nth_unstable_by(take, |a, b| a.partial_cmp(b).unwrap());
        d.truncate(take);
    }
    d.into_iter().map(|(_, m)| m).collect()
}

/// Neighbourhood-overlap deficit of match `m` with neighbourhoods drawn
/// from `pool`.
fn cost(src: &[Point2D], tgt: &[Point2D], pool: &[usize], m: usize, k: usize) -> usize {
    let ns: HashSet<usize> = knn(src, pool, src[m], m, k).into_iter().collect();
    let nt = knn(tgt, pool, tgt[m], m, k);
    let shared = nt.iter().filter(|j| ns.contains(j)).count();
    k - shared
}

/// Locality-preserving filter.
///
/// For a match `(i, a)` its source neighbourhood is the `k` matched source
/// cells nearest to `i` and its target neighbourhood the `k` matched target
/// cells nearest to `a`. The cost is `k` minus the number of matches with
/// one end in each. Pass one scores every match against all matches; pass
/// two re-scores every match against only the pass-one survivors. A match
/// is kept when its pass-two cost is at most `lambda · k`.
pub fn lpm_filter(
    matches: &MatchSet,
    src_positions: &HashMap<String, Point2D>,
    tgt_positions: &HashMap<String, Point2D>,
    params: &LpmParams,
) -> Result<LpmOutcome> {
    if !(params.lambda >= 0.0) || params.k == 0 {
        return Err(Error::Config("LPM needs k ≥ 1 and lambda ≥ 0".into()));
    }
    let lookup = |map: &HashMap<String, Point2D>, id: &str| {
        map.get(id)
            .copied()
            .ok_or_else(|| Error::UnknownId(id.to_string()))
    };
    let src: Vec<Point2D> = matches
        .iter()
        .map(|m| lookup(src_positions, &m.src_id))
        .collect::<Result<_>>()?;
    let tgt: Vec<Point2D> = matches
        .iter()
        .map(|m| lookup(tgt_positions, &m.tgt_id))
        .collect::<Result<_>>()?;

    let n = matches.len();
    let k = params.k;
    if n < k + 1 {
        return Ok(LpmOutcome {
            matches: matches.clone(),
            low_confidence: true,
            first_pass: n,
        });
    }
    let limit = params.lambda * k as f64;
    let all: Vec<usize> = (0..n).collect();
    let pass1: Vec<usize> = all
        .iter()
        .copied()
        .filter(|&m| cost(&src, &tgt, &all, m, k) as f64 <= limit)
        .collect();
    let first_pass = pass1.len();

    let survivors: Vec<usize> = if pass1.len() < k + 1 {
        pass1
    } else {
        all.iter()
            .copied()
            .filter(|&m| cost(&src, &tgt, &pass1, m, k) as f64 <= limit)
            .collect()
    };
    let kept: Vec<Match> = survivors
        .into_iter()
        .map(|m| matches.as_slice()[m].clone())
        .collect();
    Ok(LpmOutcome {
        matches: MatchSet::new(kept)?,
        low_confidence: false,
        first_pass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::RigidTransform;

    fn grid_matches(
        side: usize,
        t: &RigidTransform,
    ) -> (MatchSet, HashMap<String, Point2D>, HashMap<String, Point2D>) {
        let mut src = HashMap::new();
        let mut tgt = HashMap::new();
        let mut ms = Vec::new();
        for y in 0..side {
            for x in 0..side {
                let p = Point2D::new(x as f64 * 10.0, y as f64 * 10.0);
                let id = format!("{x}_{y}");
                src.insert(format!("s{id}"), p);
                tgt.insert(format!("t{id}"), t.apply(p));
                ms.push(Match::new(format!("s{id}"), format!("t{id}"), 1.0));
            }
        }
        (MatchSet::new(ms).unwrap(), src, tgt)
    }

    #[test]
    fn rigid_grid_kept() {
        let t = RigidTransform::euclidean(0.4, 100.0, -20.0).unwrap();
        let (ms, src, tgt) = grid_matches(5, &t);
        let out = lpm_filter(&ms, &src, &tgt, &LpmParams::default()).unwrap();
        assert_eq!(out.matches.len(), 25);
        assert!(!out.low_confidence);
    }

    #[test]
    fn swapped_pair_removed() {
        let (ms, src, tgt) = grid_matches(5, &RigidTransform::identity());
        let mut v = ms.into_vec();
        // Swap the targets of (1,1) and (3,3).
        let a = v.iter().position(|m| m.src_id == "s1_1").unwrap();
        let b = v.iter().position(|m| m.src_id == "s3_3").unwrap();
        let ta = v[a].tgt_id.clone();
        v[a].tgt_id = v[b].tgt_id.clone();
        v[b].tgt_id = ta;
        let ms = MatchSet::new(v).unwrap();
        let params = LpmParams { k: 4, lambda: 0.5 };
        let out = lpm_filter(&ms, &src, &tgt, &params).unwrap();
        let kept: HashSet<&str> = out.matches.iter().map(|m| m.src_id.as_str()).collect();
        assert_eq!(kept.len(), 23);
        assert!(!kept.contains("s1_1") && !kept.contains("s3_3"));
    }

    #[test]
    fn small_sets_pass_through() {
        let (ms, src, tgt) = grid_matches(5, &RigidTransform::identity());
        let three = MatchSet::new(ms.as_slice()[..3].to_vec()).unwrap();
        let out = lpm_filter(&three, &src, &tgt, &LpmParams::default()).unwrap();
        assert!(out.low_confidence);
        assert_eq!(out.matches, three);
    }

    #[test]
    fn unknown_ids() {
        let ms = MatchSet::new(vec![Match::new("nope", "t0_0", 1.0)]).unwrap();
        let (_, src, tgt) = grid_matches(2, &RigidTransform::identity());
        assert!(
            matches!(lpm_filter(&ms, &src, &tgt, &LpmParams::default()), Err(Error::UnknownId(id)) if id == "nope")
        );
    }
}
