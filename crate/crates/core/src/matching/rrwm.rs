use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::affinity::AffinityMatrix;
use super::sinkhorn::sinkhorn;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RrwmParams {
    /// Weight of the random-walk term; the reweighting jump gets `1 − alpha`.
    pub alpha: f64,
    /// Inflation applied before the bistochastic projection.
    pub beta: f64,
    pub max_iter: usize,
    /// Stop once `‖x_{k+1} − x_k‖∞` falls below this.
    pub tol: f64,
    /// Sinkhorn passes per reweighting step.
    pub sinkhorn_iters: usize,
}

impl Default for RrwmParams {
    fn default() -> Self {
        Self {
            alpha: 0.2,
            beta: 30.0,
            max_iter: 300,
            tol: 1e-6,
            sinkhorn_iters: 100,
        }
    }
}

/// Soft assignment scores, `n1 × n2`, entries summing to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftMatch {
    pub scores: DMatrix<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl SoftMatch {
    /// Each row rescaled to sum to 1 (rows that are all zero stay zero).
    pub fn row_normalized(&self) -> DMatrix<f64> {
        let mut m = self.scores.clone();
        for mut row in m.row_iter_mut() {
            let s: f64 = row.sum();
            if s > 0.0 {
                row /= s;
            }
        }
        m
    }
}

fn normalize_l1(x: &mut [f64]) -> Result<()> {
    let s: f64 = x.iter().sum();
    if !(s > 0.0 && s.is_finite()) {
        return Err(Error::DegenerateAffinity);
    }
    for v in x.iter_mut() {
        *v /= s;
    }
    Ok(())
}

/// Reweighted random walks over the affinity graph.
///
/// Each step takes a lazy walk `(K x / d_max + x) / 2` (L1-normalized),
/// builds the jump distribution by inflating it with `exp(beta · x / max x)`
/// and projecting onto bistochastic matrices with Sinkhorn, and mixes the two
/// as `alpha · walk + (1 − alpha) · jump`. The lazy half stops nearly
/// bipartite affinities from flipping between two states.
pub fn rrwm(k: &AffinityMatrix, params: &RrwmParams) -> Result<SoftMatch> {
    if !(params.alpha > 0.0 && params.alpha < 1.0) {
        return Err(Error::Config(format!(
            "RRWM alpha must lie in (0, 1), got {}",
            params.alpha
        )));
    }
    if !(params.beta > 0.0) {
        return Err(Error::Config(format!(
            "RRWM beta must be positive, got {}",
            params.beta
        )));
    }
    let (n1, n2) = (k.n1, k.n2);
    let n = k.dim();
    if n == 0 {
        return Err(Error::EmptyInput("RRWM needs a non-empty affinity matrix"));
    }
    let d_max = k.max_row_sum();
    if !(d_max > 0.0) {
        return Err(Error::DegenerateAffinity);
    }

    let mut x = vec![1.0 / n as f64; n];
    let mut walk = vec![0.0; n];
    let mut iterations = 0;
    let mut converged = false;
    while iterations < params.max_iter {
        k.mul_vec(&x, &mut walk);
        for (w, xi) in walk.iter_mut().zip(&x) {
            *w = 0.5 * (*w / d_max + xi);
        }
        normalize_l1(&mut walk)?;

        let peak = walk.iter().cloned().fold(0.0, f64::max);
        // exp(beta·(x/max − 1)) keeps values in (0, 1]; the constant factor
        // is removed by the projection anyway.
        let inflated = DMatrix::from_fn(n1, n2, |i, a| {
            (params.beta * (walk[i * n2 + a] / peak - 1.0)).exp()
        });
        let jump = sinkhorn(&inflated, params.sinkhorn_iters, 1e-9)?.matrix;
        let mut jump_vec: Vec<f64> = (0..n).map(|r| jump[(r / n2, r % n2)]).collect();
        normalize_l1(&mut jump_vec)?;

        let mut next: Vec<f64> = walk
            .iter()
            .zip(&jump_vec)
            .map(|(w, j)| params.alpha * w + (1.0 - params.alpha) * j)
            .collect();
        normalize_l1(&mut next)?;
        let delta = next
            .iter()
            .zip(&x)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        x = next;
        iterations += 1;
        if delta < params.tol {
            converged = true;
            break;
        }
    }
    Ok(SoftMatch {
        scores: DMatrix::from_fn(n1, n2, |i, a| x[i * n2 + a]),
        iterations,
        converged,
    })
}
