use nalgebra::DMatrix;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    /// `(row, col)` pairs sorted by row; `min(rows, cols)` of them.
    pub pairs: Vec<(usize, usize)>,
    pub total: f64,
}

/// Maximum-total-score one-to-one assignment of a rectangular score matrix.
///
/// Shortest augmenting paths with row/column potentials (Kuhn–Munkres in its
/// O(n²m) form), run on costs `−score` with the shorter side as rows.
pub fn hungarian(score: &DMatrix<f64>) -> Result<Assignment> {
    if score.is_empty() {
        return Err(Error::EmptyInput(
            "assignment needs a non-empty score matrix",
        ));
    }
    if score.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(
            "assignment scores must be finite".into(),
        ));
    }
    let transposed = score.nrows() > score.ncols();
    let cost = if transposed {
        -score.transpose()
    } else {
        -score.clone()
    };
    let row_to_col = solve_min(&cost);
    let mut pairs: Vec<(usize, usize)> = row_to_col
        .into_iter()
        .enumerate()
        .map(|(r, c)| if transposed { (c, r) } else { (r, c) })
        .collect();
    pairs.sort_unstable();
    let total = pairs.iter().map(|&(r, c)| score[(r, c)]).sum();
    Ok(Assignment { pairs, total })
}

/// Minimum-cost assignment for `n ≤ m`; returns the column of every row.
fn solve_min(cost: &DMatrix<f64>) -> Vec<usize> {
    let (n, m) = cost.shape();
    debug_assert!(n <= m);
    // 1-based with a virtual column 0 holding the row being inserted.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for row in 1..=n {
        owner[0] = row;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let reduced = cost[(i0 - 1, j - 1)] - u[i0] - v[j];
                if reduced < minv[j] {
                    minv[j] = reduced;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut row_to_col = vec![0usize; n];
    for j in 1..=m {
        if owner[j] > 0 {
            row_to_col[owner[j] - 1] = j - 1;
        }
    }
    row_to_col
}

#[cfg(test)]
mod tests {
    use super::*;
    use itertools_free::permutations;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Minimal permutation enumeration so the oracle shares no code with the
    /// solver.
    mod itertools_free {
        pub fn permutations(n: usize) -> Vec<Vec<usize>> {
            fn rec(prefix: &mut Vec<usize>, used: &mut Vec<bool>, out: &mut Vec<Vec<usize>>) {
                if prefix.len() == used.len() {
                    out.push(prefix.clone());
                    return;
                }
                for i in 0..used.len() {
                    if !used[i] {
                        used[i] = true;
                        prefix.push(i);
                        rec(prefix, used, out);
                        prefix.pop();
                        used[i] = false;
                    }
                }
            }
            let mut out = Vec::new();
            rec(&mut Vec::new(), &mut vec![false; n], &mut out);
            out
        }
    }

    #[test]
    fn identity_scores() {
        let a = hungarian(&DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0])).unwrap();
        assert_eq!(a.pairs, vec![(0, 0), (1, 1)]);
        assert_eq!(a.total, 2.0);
    }

    #[test]
    fn ties_total_only() {
        let a = hungarian(&DMatrix::from_element(3, 5, 0.4)).unwrap();
        assert_eq!(a.pairs.len(), 3);
        assert!((a.total - 1.2).abs() < 1e-12);
    }

    #[test]
    fn seeded_7x7_matches_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let m = DMatrix::from_fn(7, 7, |_, _| rng.gen_range(0.0..1.0));
        let best = permutations(7)
            .iter()
            .map(|p| p.iter().enumerate().map(|(r, &c)| m[(r, c)]).sum::<f64>())
            .fold(f64::NEG_INFINITY, f64::max);
        let a = hungarian(&m).unwrap();
        assert!((a.total - best).abs() < 1e-12);
    }

    #[test]
    fn tall_matrices_are_transposed() {
        let m = DMatrix::from_row_slice(3, 2, &[0.1, 0.9, 0.8, 0.2, 0.5, 0.5]);
        let a = hungarian(&m).unwrap();
        assert_eq!(a.pairs, vec![(0, 1), (1, 0)]);
    }

    #[test]
    fn errors() {
        assert!(matches!(
            hungarian(&DMatrix::zeros(0, 0)),
            Err(Error::EmptyInput(_))
        ));
        let bad = DMatrix::from_row_slice(1, 2, &[f64::NAN, 1.0]);
        assert!(matches!(hungarian(&bad), Err(Error::InvalidInput(_))));
    }
}
