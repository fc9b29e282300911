//! Rigid Coherent Point Drift.
//!
//! The transformed source points are the centroids of an equal-variance
//! Gaussian mixture with an extra uniform outlier component; target points
//! are the data. EM alternates posterior responsibilities (E-step) with a
//! closed-form Procrustes update of rotation, translation, optionally scale,
//! and the shared variance σ² (M-step).
//!
//! The E-step never materializes the `M × N` posterior matrix: each target
//! point contributes only to a handful of scalar sufficient statistics.
//! Once σ² is small, pairs are skipped through a bucket grid when their
//! kernel term falls below `1e-16` of the outlier constant (or, without an
//! outlier term, underflows to zero), so the skipped mass is below rounding
//! of each posterior denominator.

use nalgebra::{Matrix2, Vector2};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Point2D, RigidTransform};
use crate::spatial::BucketGrid;

/// σ² floor; reaching it ends the iteration.
pub const SIGMA2_FLOOR: f64 = 1e-12;

/// `exp(-x)` is exactly zero in f64 for `x` beyond this.
const EXP_UNDERFLOW: f64 = 746.0;

/// Kernel terms smaller than this fraction of the outlier constant are
/// dropped.
const NEGLIGIBLE: f64 = 1e-16;

/// Target points per E-step work unit. Fixed so the reduction order does not
/// depend on the thread count.
const CHUNK: usize = 512;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CpdConfig {
    /// Weight `w` of the uniform outlier component, in `[0, 1)`.
    pub outlier_weight: f64,
    pub max_iterations: usize,
    /// Relative σ² change below which EM stops.
    pub tolerance: f64,
    /// Keep the scale at 1 (coordinates already in μm).
    pub fix_scale: bool,
    /// Uniformly downsample each side to at most this many points.
    pub max_points: Option<usize>,
    /// Seed for the downsampling draw.
    pub sample_seed: u64,
}

impl Default for CpdConfig {
    fn default() -> Self {
        Self {
            outlier_weight: 0.1,
            max_iterations: 100,
            tolerance: 1e-5,
            fix_scale: true,
            max_points: Some(5000),
            sample_seed: 0,
        }
    }
}

impl CpdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.outlier_weight) {
            return Err(Error::Config(format!(
                "outlier weight must lie in [0, 1), got {}",
                self.outlier_weight
            )));
        }
        if self.max_iterations == 0 {
            return Err(Error::Config("max_iterations must be at least 1".into()));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::Config("tolerance must be positive".into()));
        }
        if self.max_points.is_some_and(|m| m < 2) {
            return Err(Error::Config("max_points must be at least 2".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CpdResult {
    /// Maps source points into the target frame.
    pub transform: RigidTransform,
    pub sigma2: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Log-likelihood of the target under the final mixture.
    pub final_loglik: f64,
    /// σ² after each M-step, in order.
    pub sigma2_history: Vec<f64>,
}

/// Registers `source` onto `target` with unit point weights.
pub fn cpd_rigid(source: &[Point2D], target: &[Point2D], config: &CpdConfig) -> Result<CpdResult> {
    config.validate()?;
    check_points(source)?;
    check_points(target)?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.sample_seed);
    let src = downsample(source, config.max_points, &mut rng);
    let tgt = downsample(target, config.max_points, &mut rng);
    let src_w = vec![1.0; src.len()];
    let tgt_w = vec![1.0; tgt.len()];
    run(&src, &src_w, &tgt, &tgt_w, config, SIGMA2_FLOOR)
}

/// Variant where each point stands for `weight` coincident copies: source
/// weights scale mixture priors, target weights replicate data points.
/// No downsampling is applied.
pub fn cpd_rigid_weighted(
    source: &[Point2D],
    source_weights: &[f64],
    target: &[Point2D],
    target_weights: &[f64],
    config: &CpdConfig,
) -> Result<CpdResult> {
    cpd_rigid_weighted_floored(source, source_weights, target, target_weights, config, 0.0)
}

/// [`cpd_rigid_weighted`] with σ² held at or above `min_sigma2`, so that
/// structure finer than `sqrt(min_sigma2)` cannot steer the fit.
pub fn cpd_rigid_weighted_floored(
    source: &[Point2D],
    source_weights: &[f64],
    target: &[Point2D],
    target_weights: &[f64],
    config: &CpdConfig,
    min_sigma2: f64,
) -> Result<CpdResult> {
    config.validate()?;
    check_points(source)?;
    check_points(target)?;
    if !(min_sigma2 >= 0.0 && min_sigma2.is_finite()) {
        return Err(Error::Config(format!(
            "σ² floor must be finite and non-negative, got {min_sigma2}"
        )));
    }
    for (pts, w) in [(source, source_weights), (target, target_weights)] {
        if pts.len() != w.len() {
            return Err(Error::InvalidInput(
                "one weight per point is required".into(),
            ));
        }
        if w.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::InvalidInput(
                "point weights must be positive and finite".into(),
            ));
        }
    }
    run(
        source,
        source_weights,
        target,
        target_weights,
        config,
        min_sigma2.max(SIGMA2_FLOOR),
    )
}

fn check_points(points: &[Point2D]) -> Result<()> {
    if points.len() < 2 {
        return Err(Error::TooFewPoints {
            needed: 2,
            got: points.len(),
        });
    }
    if points.iter().any(|p| !p.is_finite()) {
        return Err(Error::InvalidInput("non-finite coordinate".into()));
    }
    Ok(())
}

fn downsample(points: &[Point2D], cap: Option<usize>, rng: &mut ChaCha8Rng) -> Vec<Point2D> {
    match cap {
        Some(cap) if points.len() > cap => {
            let mut idx = sample(rng, points.len(), cap).into_vec();
            idx.sort_unstable();
            idx.into_iter().map(|i| points[i]).collect()
        }
        _ => points.to_vec(),
    }
}

fn weighted_mean(points: &[Point2D], weights: &[f64]) -> Vector2<f64> {
    let total: f64 = weights.iter().sum();
    let mut m = Vector2::zeros();
    for (p, w) in points.iter().zip(weights) {
        m += Vector2::new(p.x, p.y) * *w;
    }
    m / total
}

/// Sufficient statistics of one E-step.
#[derive(Debug, Default, Clone, Copy)]
struct Stats {
    /// Σ P
    np: f64,
    /// Σ P x
    sx: Vector2<f64>,
    /// Σ P y
    sy: Vector2<f64>,
    /// Σ P x yᵀ
    sxy: Matrix2<f64>,
    /// Σ P ‖x‖²
    sxx: f64,
    /// Σ P ‖y‖²
    syy: f64,
    /// Σ v ln(Σ u e + c)
    loglik: f64,
}

impl Stats {
    fn add(&mut self, o: &Stats) {
        self.np += o.np;
        self.sx += o.sx;
        self.sy += o.sy;
        self.sxy += o.sxy;
        self.sxx += o.sxx;
        self.syy += o.syy;
        self.loglik += o.loglik;
    }
}

struct Problem<'a> {
    /// Centered source points (mixture centroids before transformation).
    y: Vec<Vector2<f64>>,
    u: &'a [f64],
    /// Centered target points.
    x: Vec<Vector2<f64>>,
    v: &'a [f64],
    u_total: f64,
    u_max: f64,
    v_total: f64,
    w: f64,
}

impl Problem<'_> {
    fn e_step(&self, rot: &Matrix2<f64>, scale: f64, t: &Vector2<f64>, sigma2: f64) -> Stats {
        let ty: Vec<Vector2<f64>> = self.y.iter().map(|y| scale * rot * y + t).collect();
        let c = if self.w > 0.0 {
            2.0 * std::f64::consts::PI * sigma2 * self.w / (1.0 - self.w) * self.u_total
                / self.v_total
        } else {
            0.0
        };
        let inv = 1.0 / (2.0 * sigma2);
        let exponent = if c > 0.0 {
            (self.u_max / (NEGLIGIBLE * c))
                .ln()
                .clamp(1.0, EXP_UNDERFLOW)
        } else {
            EXP_UNDERFLOW
        };
        let cutoff2 = exponent * 2.0 * sigma2;
        let cutoff = cutoff2.sqrt();

        let ty_pts: Vec<Point2D> = ty.iter().map(|p| Point2D::new(p.x, p.y)).collect();
        let (min, max) = bounds(&ty_pts);
        let span = (max.x - min.x).max(max.y - min.y);
        let grid = (cutoff < 0.25 * span).then(|| BucketGrid::new(&ty_pts, cutoff));

        let chunks: Vec<Stats> = self
            .x
            .par_chunks(CHUNK)
            .enumerate()
            .map(|(ci, xs)| {
                let mut acc = Stats::default();
                let mut kernel: Vec<(usize, f64)> = Vec::with_capacity(self.y.len().min(1024));
                for (k, xn) in xs.iter().enumerate() {
                    let n = ci * CHUNK + k;
                    kernel.clear();
                    let mut push = |m: usize| {
                        let d2 = (xn - ty[m]).norm_squared();
                        if d2 > cutoff2 {
                            return;
                        }
                        let e = (-d2 * inv).exp();
                        if e > 0.0 {
                            kernel.push((m, self.u[m] * e));
                        }
                    };
                    match &grid {
                        Some(g) => {
                            g.for_each_candidate(Point2D::new(xn.x, xn.y), cutoff, &mut push)
                        }
                        None => (0..ty.len()).for_each(&mut push),
                    }
                    let denom: f64 = kernel.iter().map(|(_, e)| e).sum::<f64>() + c;
                    let vn = self.v[n];
                    if denom > 0.0 {
                        acc.loglik += vn * denom.ln();
                    } else {
                        // Only possible with w = 0: the point is unexplained.
                        acc.loglik += vn * f64::MIN_POSITIVE.ln();
                        continue;
                    }
                    let scale_n = vn / denom;
                    let mut pn = 0.0;
                    let mut py = Vector2::zeros();
                    let mut pyy = 0.0;
                    for &(m, e) in &kernel {
                        let p = e * scale_n;
                        pn += p;
                        py += self.y[m] * p;
                        pyy += p * self.y[m].norm_squared();
                    }
                    acc.np += pn;
                    acc.sx += xn * pn;
                    acc.sy += py;
                    acc.sxy += xn * py.transpose();
                    acc.sxx += pn * xn.norm_squared();
                    acc.syy += pyy;
                }
                acc
            })
            .collect();
        let mut total = Stats::default();
        for s in &chunks {
            total.add(s);
        }
        total
    }
}

fn bounds(points: &[Point2D]) -> (Point2D, Point2D) {
    let mut min = Point2D::new(f64::INFINITY, f64::INFINITY);
    let mut max = Point2D::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in points {
        min.x = min.x.min(p.x);
        min.y = min.y.min(p.y);
        max.x = max.x.max(p.x);
        max.y = max.y.max(p.y);
    }
    (min, max)
}

/// Proper rotation maximizing `tr(Aᵀ R)`.
pub(crate) fn procrustes_rotation(a: &Matrix2<f64>) -> Matrix2<f64> {
    let svd = a.svd(true, true);
    let u = svd.u.expect("u requested");
    let v_t = svd.v_t.expect("v_t requested");
    let d = (u * v_t).determinant().signum();
    let c = Matrix2::new(1.0, 0.0, 0.0, if d == 0.0 { 1.0 } else { d });
    u * c * v_t
}

fn run(
    source: &[Point2D],
    u: &[f64],
    target: &[Point2D],
    v: &[f64],
    config: &CpdConfig,
    min_sigma2: f64,
) -> Result<CpdResult> {
    let cy = weighted_mean(source, u);
    let cx = weighted_mean(target, v);
    let problem = Problem {
        y: source.iter().map(|p| Vector2::new(p.x, p.y) - cy).collect(),
        u,
        x: target.iter().map(|p| Vector2::new(p.x, p.y) - cx).collect(),
        v,
        u_total: u.iter().sum(),
        u_max: u.iter().copied().fold(0.0, f64::max),
        v_total: v.iter().sum(),
        w: config.outlier_weight,
    };

    // σ² = Σ v u ‖x − y‖² / (D Σv Σu), expanded around the centered means.
    let xx: f64 = problem
        .x
        .iter()
        .zip(v)
        .map(|(x, w)| w * x.norm_squared())
        .sum();
    let yy: f64 = problem
        .y
        .iter()
        .zip(u)
        .map(|(y, w)| w * y.norm_squared())
        .sum();
    let mut sigma2 =
        (problem.u_total * xx + problem.v_total * yy) / (2.0 * problem.u_total * problem.v_total);
    if !(sigma2 > SIGMA2_FLOOR) {
        return Err(Error::DegenerateConfiguration(
            "all points coincide; variance is zero".into(),
        ));
    }

    let mut rot = Matrix2::identity();
    let mut scale = 1.0;
    let mut t = Vector2::zeros();
    let mut iterations = 0;
    let mut converged = false;
    let mut loglik = f64::NEG_INFINITY;
    let mut prev_loglik = f64::NEG_INFINITY;
    let mut history = Vec::new();

    while iterations < config.max_iterations {
        let stats = problem.e_step(&rot, scale, &t, sigma2);
        iterations += 1;
        loglik = stats.loglik
            + problem.v_total
                * ((1.0 - problem.w) / (problem.u_total * 2.0 * std::f64::consts::PI * sigma2))
                    .ln();
        if !(stats.np > 0.0) {
            return Err(Error::DegenerateConfiguration(
                "no target point is explained by the mixture".into(),
            ));
        }
        let np = stats.np;
        let mu_x = stats.sx / np;
        let mu_y = stats.sy / np;
        let a = stats.sxy - np * mu_x * mu_y.transpose();
        let ypy = stats.syy - np * mu_y.norm_squared();
        let xpx = stats.sxx - np * mu_x.norm_squared();

        rot = procrustes_rotation(&a);
        let tr_ar = (a.transpose() * rot).trace();
        if !config.fix_scale && ypy > 0.0 {
            scale = tr_ar / ypy;
        }
        t = mu_x - scale * rot * mu_y;

        let new_sigma2 = (xpx - 2.0 * scale * tr_ar + scale * scale * ypy) / (2.0 * np);
        if min_sigma2 > SIGMA2_FLOOR && !(new_sigma2 > min_sigma2) {
            // Held at the floor; stop once the likelihood settles.
            sigma2 = min_sigma2;
            history.push(sigma2);
            if (loglik - prev_loglik).abs() <= config.tolerance * loglik.abs() {
                converged = true;
                break;
            }
            prev_loglik = loglik;
            continue;
        }
        if !(new_sigma2 > SIGMA2_FLOOR) {
            sigma2 = SIGMA2_FLOOR;
            history.push(sigma2);
            converged = true;
            break;
        }
        let change = (sigma2 - new_sigma2).abs() / sigma2;
        sigma2 = new_sigma2;
        history.push(sigma2);
        if change < config.tolerance {
            converged = true;
            break;
        }
    }

    // Undo centering: T(p) = sR(p − cy) + t + cx.
    let trans = t + cx - scale * rot * cy;
    let theta = rot[(1, 0)].atan2(rot[(0, 0)]);
    let transform = RigidTransform::new(theta, scale, trans.x, trans.y)?;
    Ok(CpdResult {
        transform,
        sigma2,
        iterations,
        converged,
        final_loglik: loglik,
        sigma2_history: history,
    })
}
