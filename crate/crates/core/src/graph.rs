//! Density gating, window sampling and proximity graphs for the
//! graph-matching stage.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Point2D, RigidTransform};
use crate::io::CellRecord;
use crate::spatial::BucketGrid;

/// Kernel mass beyond this many bandwidths is dropped (< 1e-27 of a
/// cell's own contribution).
const KDE_CUTOFF_BANDWIDTHS: f64 = 11.0;

/// Max-normalized Gaussian KDE value per cell, in input order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityMap {
    pub values: Vec<f64>,
    pub bandwidth: f64,
}

impl DensityMap {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn passing(&self, gate: f64) -> impl Iterator<Item = usize> + '_ {
        self.values
            .iter()
            .enumerate()
            .filter(move |(_, &d)| d >= gate)
            .map(|(i, _)| i)
    }
}

pub fn kde_density(points: &[Point2D], bandwidth: f64) -> Result<DensityMap> {
    if points.is_empty() {
        return Err(Error::EmptyInput("density needs at least one cell"));
    }
    if !(bandwidth > 0.0 && bandwidth.is_finite()) {
        return Err(Error::Config(format!(
            "KDE bandwidth must be positive, got {bandwidth}"
        )));
    }
    let radius = KDE_CUTOFF_BANDWIDTHS * bandwidth;
    let grid = BucketGrid::new(points, radius);
    let inv = 1.0 / (2.0 * bandwidth * bandwidth);
    let mut values: Vec<f64> = points
        .iter()
        .map(|p| {
            let mut sum = 0.0;
            grid.for_each_candidate(*p, radius, |j| {
                sum += (-points[j].distance_sq(p) * inv).exp();
            });
            sum
        })
        .collect();
    let max = values.iter().cloned().fold(0.0, f64::max);
    for v in &mut values {
        *v /= max;
    }
    Ok(DensityMap { values, bandwidth })
}

/// Paired sampling windows: an axis-aligned square in the source frame and
/// a larger one around its coarse-transform image in the target frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowPair {
    /// Index of the source cell the window is centred on.
    pub center_cell: usize,
    pub source_center: Point2D,
    pub source_size: f64,
    pub target_center: Point2D,
    pub target_size: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowParams {
    pub count: usize,
    pub density_gate: f64,
    pub source_size: f64,
    pub target_size: f64,
}

impl Default for WindowParams {
    fn default() -> Self {
        Self {
            count: 8,
            density_gate: 0.5,
            source_size: 50.0,
            target_size: 150.0,
        }
    }
}

const RESTARTS: usize = 16;

/// Picks window centres uniformly among dense cells, keeping centres at
/// least one source window side apart when possible.
///
/// Candidates are visited in a seeded random order and accepted when far
/// enough from every accepted centre; a few further orders are tried if the
/// first falls short. If none yields `count` centres, the remaining slots go
/// to the candidates farthest from the best accepted set.
pub fn sample_windows(
    points: &[Point2D],
    density: &DensityMap,
    coarse: &RigidTransform,
    params: &WindowParams,
    seed: u64,
) -> Result<Vec<WindowPair>> {
    if points.len() != density.len() {
        return Err(Error::InvalidInput(
            "density map does not match the cell list".into(),
        ));
    }
    let mut candidates: Vec<usize> = density.passing(params.density_gate).collect();
    if candidates.is_empty() {
        return Err(Error::NoDenseRegion {
            gate: params.density_gate,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let sep = |a: &Point2D, b: &Point2D| a.distance(b);
    let mut chosen: Vec<usize> = Vec::new();
    for _ in 0..RESTARTS {
        candidates.shuffle(&mut rng);
        let mut pass: Vec<usize> = Vec::with_capacity(params.count);
        for &c in &candidates {
            if pass.len() == params.count {
                break;
            }
            if pass
                .iter()
                .all(|&k| sep(&points[k], &points[c]) >= params.source_size)
            {
                pass.push(c);
            }
        }
        if pass.len() > chosen.len() {
            chosen = pass;
        }
        if chosen.len() == params.count {
            break;
        }
    }
    let wanted = params.count.min(candidates.len());
    while chosen.len() < wanted {
        let next = candidates
            .iter()
            .filter(|c| !chosen.contains(c))
            .map(|&c| {
                let d = chosen
                    .iter()
                    .map(|&k| sep(&points[k], &points[c]))
                    .fold(f64::INFINITY, f64::min);
                (c, d)
            })
            .fold(None, |best: Option<(usize, f64)>, (c, d)| match best {
                Some((_, bd)) if bd >= d => best,
                _ => Some((c, d)),
            });
        match next {
            Some((c, _)) => chosen.push(c),
            None => break,
        }
    }

    Ok(chosen
        .into_iter()
        .map(|c| WindowPair {
            center_cell: c,
            source_center: points[c],
            source_size: params.source_size,
            target_center: coarse.apply(points[c]),
            target_size: params.target_size,
        })
        .collect())
}

/// Indices of cells inside the axis-aligned square of side `size` centred
/// on `center` (boundary inclusive), in input order.
pub fn cells_in_window(points: &[Point2D], center: Point2D, size: f64) -> Vec<usize> {
    let half = size / 2.0;
    points
        .iter()
        .enumerate()
        .filter(|(_, p)| (p.x - center.x).abs() <= half && (p.y - center.y).abs() <= half)
        .map(|(i, _)| i)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphNode {
    pub cell_id: String,
    pub position: Point2D,
    pub features: Vec<f64>,
}

/// Undirected edge with `i < j`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraphEdge {
    pub i: usize,
    pub j: usize,
    pub length: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellGraph {
    pub feature_names: Vec<String>,
    pub nodes: Vec<GraphNode>,
    pub edges: Vec<GraphEdge>,
}

impl CellGraph {
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn index_of(&self) -> HashMap<&str, usize> {
        self.nodes
            .iter()
            .enumerate()
            .map(|(i, n)| (n.cell_id.as_str(), i))
            .collect()
    }
}

/// Proximity graph over `cells`: an edge joins every pair strictly closer
/// than `edge_threshold`.
pub fn build_graph(
    cells: &[&CellRecord],
    edge_threshold: f64,
    feature_names: &[String],
) -> Result<CellGraph> {
    if cells.is_empty() {
        return Err(Error::EmptyInput("graph window contains no cells"));
    }
    if !(edge_threshold > 0.0) {
        return Err(Error::Config("edge threshold must be positive".into()));
    }
    let nodes = cells
        .iter()
        .map(|c| {
            let features = feature_names
                .iter()
                .map(|name| {
                    c.feature(name).ok_or_else(|| Error::MissingFeature {
                        id: c.id.clone(),
                        name: name.clone(),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(GraphNode {
                cell_id: c.id.clone(),
                position: c.centroid,
                features,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let positions: Vec<Point2D> = nodes.iter().map(|n| n.position).collect();
    let grid = BucketGrid::new(&positions, edge_threshold);
    let t2 = edge_threshold * edge_threshold;
    let mut edges = Vec::new();
    for (i, p) in positions.iter().enumerate() {
        let mut near = Vec::new();
        grid.for_each_candidate(*p, edge_threshold, |j| {
            if j > i && positions[j].distance_sq(p) < t2 {
                near.push(j);
            }
        });
        near.sort_unstable();
        edges.extend(near.into_iter().map(|j| GraphEdge {
            i,
            j,
            length: positions[j].distance(p),
        }));
    }
    Ok(CellGraph {
        feature_names: feature_names.to_vec(),
        nodes,
        edges,
    })
}
