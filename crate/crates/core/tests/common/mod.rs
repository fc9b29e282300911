#![allow(dead_code)]

use std::collections::HashMap;

use cellalign::io::CellTable;
use cellalign::synth::SynthOutput;
use cellalign::{AffineTransform, Point2D, RigidTransform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(n: usize, extent: f64, seed: u64) -> Vec<Point2D> {
    let mut r = rng(seed);
    (0..n)
        .map(|_| Point2D::new(r.gen_range(0.0..extent), r.gen_range(0.0..extent)))
        .collect()
}

pub fn positions(table: &CellTable) -> HashMap<String, Point2D> {
    table
        .cells()
        .iter()
        .map(|c| (c.id.clone(), c.centroid))
        .collect()
}

/// RMS distance between `f(source cell)` and the truth-transformed source
/// cell, over every truth pair.
pub fn truth_rms(out: &SynthOutput, f: impl Fn(Point2D) -> Point2D) -> f64 {
    let src = positions(&out.source);
    let sum: f64 = out
        .truth
        .iter()
        .map(|(s, _)| {
            let p = src[s];
            f(p).distance_sq(&out.truth_transform.apply(p))
        })
        .sum();
    (sum / out.truth.len() as f64).sqrt()
}

pub fn rigid_close(a: &RigidTransform, b: &RigidTransform, deg: f64, um: f64) -> bool {
    let dtheta = cellalign::geometry::angle_difference(a.theta(), b.theta())
        .abs()
        .to_degrees();
    let dt = ((a.dx() - b.dx()).powi(2) + (a.dy() - b.dy()).powi(2)).sqrt();
    dtheta <= deg && dt <= um
}

pub fn max_mapping_error(
    points: &[Point2D],
    a: &AffineTransform,
    b: impl Fn(Point2D) -> Point2D,
) -> f64 {
    points
        .iter()
        .map(|&p| a.apply(p).distance(&b(p)))
        .fold(0.0, f64::max)
}
