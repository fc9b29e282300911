//! Landmark accuracy metrics, feature concordance, correspondence census and
//! regional composition maps.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::geometry::{angle_difference, AffineTransform, Point2D, RigidTransform};
use crate::io::{CellTable, LandmarkSet};
use crate::spatial::BucketGrid;

/// Either kind of transform, as read from a JSON file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Transform {
    Rigid(RigidTransform),
    Affine(AffineTransform),
}

impl Transform {
    pub fn apply(&self, p: Point2D) -> Point2D {
        match self {
            Transform::Rigid(t) => t.apply(p),
            Transform::Affine(t) => t.apply(p),
        }
    }

    /// Rotation angle in radians.
    pub fn angle(&self) -> f64 {
        match self {
            Transform::Rigid(t) => t.theta(),
            Transform::Affine(t) => t.rotation_angle(),
        }
    }

    /// Length of the translation vector, μm.
    pub fn translation_magnitude(&self) -> f64 {
        match self {
            Transform::Rigid(t) => t.translation_magnitude(),
            Transform::Affine(t) => t.translation_magnitude(),
        }
    }

    pub fn to_affine(&self) -> AffineTransform {
        match self {
            Transform::Rigid(t) => t.to_affine(),
            Transform::Affine(t) => *t,
        }
    }
}

impl From<RigidTransform> for Transform {
    fn from(t: RigidTransform) -> Self {
        Transform::Rigid(t)
    }
}

impl From<AffineTransform> for Transform {
    fn from(t: AffineTransform) -> Self {
        Transform::Affine(t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LandmarkResidual {
    /// Residual under the ground-truth transform, μm.
    pub d_gt: f64,
    /// Residual under the estimated transform, μm.
    pub d_est: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub delta_d: f64,
    pub delta_t: f64,
    pub delta_theta: f64,
    pub delta_theta_deg: f64,
    pub per_landmark: Vec<LandmarkResidual>,
}

/// Compares an estimated transform against ground truth on landmarks.
///
/// `ΔD = mean |d_gt − d_est|` where `d = ‖T(src) − tgt‖`,
/// `ΔT = |‖t_est‖ − ‖t_gt‖|` and `Δθ` is the wrapped angle difference.
pub fn evaluate(
    landmarks: &LandmarkSet,
    estimated: &Transform,
    ground_truth: &Transform,
) -> Result<EvaluationReport> {
    if landmarks.len() < LandmarkSet::MIN_PAIRS {
        return Err(Error::TooFewLandmarks {
            needed: LandmarkSet::MIN_PAIRS,
            got: landmarks.len(),
        });
    }
    let per_landmark: Vec<LandmarkResidual> = landmarks
        .pairs
        .iter()
        .map(|lm| LandmarkResidual {
            d_gt: ground_truth.apply(lm.source).distance(&lm.target),
            d_est: estimated.apply(lm.source).distance(&lm.target),
        })
        .collect();
    let delta_d = per_landmark
        .iter()
        .map(|r| (r.d_gt - r.d_est).abs())
        .sum::<f64>()
        / per_landmark.len() as f64;
    let delta_theta = angle_difference(estimated.angle(), ground_truth.angle());
    Ok(EvaluationReport {
        delta_d,
        delta_t: (estimated.translation_magnitude() - ground_truth.translation_magnitude()).abs(),
        delta_theta,
        delta_theta_deg: delta_theta.to_degrees(),
        per_landmark,
    })
}

/// Mean distance between mapped landmark sources and their targets.
pub fn mean_landmark_error(landmarks: &LandmarkSet, t: &Transform) -> f64 {
    if landmarks.is_empty() {
        return 0.0;
    }
    landmarks
        .pairs
        .iter()
        .map(|lm| t.apply(lm.source).distance(&lm.target))
        .sum::<f64>()
        / landmarks.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub r: f64,
    /// Two-sided p-value.
    pub p: f64,
    pub n: usize,
}

/// Sample Pearson correlation with a Student-t p-value.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<Correlation> {
    if x.len() != y.len() {
        return Err(Error::InvalidInput(format!(
            "pearson needs equal-length inputs, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    let n = x.len();
    if n < 3 {
        return Err(Error::UndefinedCorrelation("fewer than 3 pairs"));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("pearson inputs must be finite".into()));
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation("zero variance"));
    }
    let r = (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0);
    let dof = (n - 2) as f64;
    let p = if r.abs() == 1.0 {
        0.0
    } else {
        let t = r * (dof / (1.0 - r * r)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, dof).expect("positive degrees of freedom");
        (2.0 * dist.sf(t.abs())).clamp(0.0, 1.0)
    };
    Ok(Correlation { r, p, n })
}

/// Correspondence class of a source cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PairClass {
    /// No target cell within the radius.
    None,
    /// Its nearest target is claimed by no other source.
    One,
    /// Its nearest target is shared with other sources.
    Multi,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellPair {
    pub src_id: String,
    pub tgt_id: Option<String>,
    pub distance: Option<f64>,
    pub class: PairClass,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Census {
    pub n0: usize,
    pub n1: usize,
    pub n_multi: usize,
}

impl Census {
    pub fn total(&self) -> usize {
        self.n0 + self.n1 + self.n_multi
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NearestPairing {
    pub radius: f64,
    /// One entry per source cell, in source order.
    pub pairs: Vec<CellPair>,
    pub census: Census,
}

impl NearestPairing {
    /// `(src_id, tgt_id)` of the uniquely paired cells.
    pub fn one_to_one(&self) -> impl Iterator<Item = (&str, &str)> {
        self.pairs
            .iter()
            .filter(|p| p.class == PairClass::One)
            .map(|p| (p.src_id.as_str(), p.tgt_id.as_deref().unwrap_or_default()))
    }
}

/// Half the median nearest-neighbour distance within `table`.
pub fn default_pairing_radius(table: &CellTable) -> Result<f64> {
    let pts = table.positions();
    if pts.len() < 2 {
        return Err(Error::TooFewPoints {
            needed: 2,
            got: pts.len(),
        });
    }
    let grid = BucketGrid::new(&pts, nn_cell_hint(&pts));
    let mut d: Vec<f64> = pts
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            grid.nearest_filtered(&pts, p, |j| j != i)
                .map_or(0.0, |(_, d)| d)
        })
        .collect();
    d.sort_by(f64::total_cmp);
    let m = d.len();
    let median = if m % 2 == 1 {
        d[m / 2]
    } else {
        0.5 * (d[m / 2 - 1] + d[m / 2])
    };
    Ok(median / 2.0)
}

fn nn_cell_hint(points: &[Point2D]) -> f64 {
    let (mut lo, mut hi) = (
        Point2D::new(f64::INFINITY, f64::INFINITY),
        Point2D::new(f64::NEG_INFINITY, f64::NEG_INFINITY),
    );
    for p in points {
        lo = Point2D::new(lo.x.min(p.x), lo.y.min(p.y));
        hi = Point2D::new(hi.x.max(p.x), hi.y.max(p.y));
    }
    let area = ((hi.x - lo.x) * (hi.y - lo.y)).max(1e-12);
    (area / points.len() as f64).sqrt().max(1e-9)
}

/// Pairs each mapped source cell with its nearest target cell within
/// `radius` (may be infinite) and classifies it.
pub fn nearest_pairing(
    source_mapped: &CellTable,
    target: &CellTable,
    radius: f64,
) -> Result<NearestPairing> {
    if source_mapped.is_empty() || target.is_empty() {
        return Err(Error::EmptyInput(
            "nearest pairing needs two non-empty tables",
        ));
    }
    if !(radius > 0.0) {
        return Err(Error::Config(format!(
            "pairing radius must be positive, got {radius}"
        )));
    }
    let tgt = target.positions();
    let grid = BucketGrid::new(&tgt, nn_cell_hint(&tgt));
    let nearest: Vec<Option<(usize, f64)>> = source_mapped
        .cells()
        .iter()
        .map(|c| grid.nearest(&tgt, c.centroid).filter(|&(_, d)| d <= radius))
        .collect();
    let mut claims = vec![0usize; tgt.len()];
    for &(j, _) in nearest.iter().flatten() {
        claims[j] += 1;
    }
    let mut census = Census::default();
    let pairs = source_mapped
        .cells()
        .iter()
        .zip(&nearest)
        .map(|(c, hit)| {
            let class = match hit {
                None => PairClass::None,
                Some((j, _)) if claims[*j] == 1 => PairClass::One,
                Some(_) => PairClass::Multi,
            };
            match class {
                PairClass::None => census.n0 += 1,
                PairClass::One => census.n1 += 1,
                PairClass::Multi => census.n_multi += 1,
            }
            CellPair {
                src_id: c.id.clone(),
                tgt_id: hit.map(|(j, _)| target.cells()[j].id.clone()),
                distance: hit.map(|(_, d)| d),
                class,
            }
        })
        .collect();
    Ok(NearestPairing {
        radius,
        pairs,
        census,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureConcordance {
    pub feature: String,
    pub r: f64,
    pub p: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcordanceReport {
    pub radius: f64,
    pub census: Census,
    pub features: Vec<FeatureConcordance>,
    /// Shared features whose correlation is undefined.
    pub skipped: Vec<String>,
}

/// Per-feature `(source, target)` values over the uniquely paired cells.
pub fn paired_feature_values(
    pairing: &NearestPairing,
    source: &CellTable,
    target: &CellTable,
) -> BTreeMap<String, Vec<(f64, f64)>> {
    let src: HashMap<&str, usize> = source.ids().enumerate().map(|(i, id)| (id, i)).collect();
    let tgt: HashMap<&str, usize> = target.ids().enumerate().map(|(i, id)| (id, i)).collect();
    let shared: BTreeSet<String> = source
        .feature_names()
        .into_iter()
        .filter(|f| target.feature_names().contains(f))
        .collect();
    let mut out: BTreeMap<String, Vec<(f64, f64)>> =
        shared.iter().map(|f| (f.clone(), Vec::new())).collect();
    for (s, t) in pairing.one_to_one() {
        let (Some(&i), Some(&j)) = (src.get(s), tgt.get(t)) else {
            continue;
        };
        let (a, b) = (&source.cells()[i], &target.cells()[j]);
        for (name, values) in out.iter_mut() {
            if let (Some(x), Some(y)) = (a.feature(name), b.feature(name)) {
                values.push((x, y));
            }
        }
    }
    out
}

/// Nearest-cell pairing followed by a Pearson correlation of every shared
/// feature over the uniquely paired cells.
pub fn feature_concordance(
    source_mapped: &CellTable,
    target: &CellTable,
    radius: f64,
) -> Result<ConcordanceReport> {
    let pairing = nearest_pairing(source_mapped, target, radius)?;
    let mut features = Vec::new();
    let mut skipped = Vec::new();
    for (name, values) in paired_feature_values(&pairing, source_mapped, target) {
        let (x, y): (Vec<f64>, Vec<f64>) = values.into_iter().unzip();
        match pearson(&x, &y) {
            Ok(c) => features.push(FeatureConcordance {
                feature: name,
                r: c.r,
                p: c.p,
                n: c.n,
            }),
            Err(Error::UndefinedCorrelation(_)) => skipped.push(name),
            Err(e) => return Err(e),
        }
    }
    Ok(ConcordanceReport {
        radius,
        census: pairing.census,
        features,
        skipped,
    })
}

/// Values on a square grid anchored at the origin; bin `(ix, iy)` covers
/// `[ix·s, (ix+1)·s) × [iy·s, (iy+1)·s)`. Stored row-major from `(ix0, iy0)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridMap {
    pub grid_size: f64,
    pub ix0: i64,
    pub iy0: i64,
    pub nx: usize,
    pub ny: usize,
    /// `None` marks an empty (or, for concordance, half-empty) bin.
    pub values: Vec<Option<f64>>,
}

impl GridMap {
    pub fn get(&self, ix: i64, iy: i64) -> Option<f64> {
        if ix < self.ix0 || iy < self.iy0 {
            return None;
        }
        let (cx, cy) = ((ix - self.ix0) as usize, (iy - self.iy0) as usize);
        if cx >= self.nx || cy >= self.ny {
            return None;
        }
        self.values[cy * self.nx + cx]
    }

    /// `(ix, iy, value)` for every non-empty bin, row-major.
    pub fn occupied(&self) -> impl Iterator<Item = (i64, i64, f64)> + '_ {
        self.values.iter().enumerate().filter_map(move |(k, v)| {
            v.map(|v| {
                (
                    self.ix0 + (k % self.nx) as i64,
                    self.iy0 + (k / self.nx) as i64,
                    v,
                )
            })
        })
    }
}

pub(crate) fn bin_of(p: Point2D, grid_size: f64) -> (i64, i64) {
    (
        (p.x / grid_size).floor() as i64,
        (p.y / grid_size).floor() as i64,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositionMap {
    pub positive_label: String,
    pub map: GridMap,
    /// Cells per bin, aligned with `map.values`.
    pub counts: Vec<usize>,
}

/// Fraction of cells labelled `positive_label` in each occupied bin.
pub fn regional_composition(
    cells: &CellTable,
    grid_size: f64,
    positive_label: &str,
) -> Result<CompositionMap> {
    if !(grid_size > 0.0 && grid_size.is_finite()) {
        return Err(Error::Config(format!(
            "grid size must be positive, got {grid_size}"
        )));
    }
    if cells.is_empty() {
        return Err(Error::EmptyInput("regional composition needs cells"));
    }
    let mut bins: BTreeMap<(i64, i64), (usize, usize)> = BTreeMap::new();
    for c in cells.cells() {
        let label = c
            .class_label
            .as_deref()
            .ok_or_else(|| Error::MissingLabel(c.id.clone()))?;
        let (ix, iy) = bin_of(c.centroid, grid_size);
        let e = bins.entry((iy, ix)).or_default();
        e.0 += 1;
        if label == positive_label {
            e.1 += 1;
        }
    }
    let ix0 = bins.keys().map(|k| k.1).min().unwrap();
    let ix1 = bins.keys().map(|k| k.1).max().unwrap();
    let iy0 = bins.keys().map(|k| k.0).min().unwrap();
    let iy1 = bins.keys().map(|k| k.0).max().unwrap();
    let nx = (ix1 - ix0 + 1) as usize;
    let ny = (iy1 - iy0 + 1) as usize;
    let mut values = vec![None; nx * ny];
    let mut counts = vec![0; nx * ny];
    for (&(iy, ix), &(n, pos)) in &bins {
        let k = (iy - iy0) as usize * nx + (ix - ix0) as usize;
        values[k] = Some(pos as f64 / n as f64);
        counts[k] = n;
    }
    Ok(CompositionMap {
        positive_label: positive_label.to_string(),
        map: GridMap {
            grid_size,
            ix0,
            iy0,
            nx,
            ny,
            values,
        },
        counts,
    })
}

/// `1 − |p_a − p_b|` on bins occupied in both maps, over the union of
/// their extents.
pub fn regional_concordance(a: &GridMap, b: &GridMap) -> Result<GridMap> {
    if a.grid_size != b.grid_size {
        return Err(Error::GridMismatch(format!(
            "grid sizes differ: {} vs {}",
            a.grid_size, b.grid_size
        )));
    }
    let ix0 = a.ix0.min(b.ix0);
    let iy0 = a.iy0.min(b.iy0);
    let ix1 = (a.ix0 + a.nx as i64).max(b.ix0 + b.nx as i64);
    let iy1 = (a.iy0 + a.ny as i64).max(b.iy0 + b.ny as i64);
    let (nx, ny) = ((ix1 - ix0) as usize, (iy1 - iy0) as usize);
    let mut values = Vec::with_capacity(nx * ny);
    for iy in iy0..iy1 {
        for ix in ix0..ix1 {
            values.push(match (a.get(ix, iy), b.get(ix, iy)) {
                (Some(pa), Some(pb)) => Some((1.0 - (pa - pb).abs()).clamp(0.0, 1.0)),
                _ => None,
            });
        }
    }
    Ok(GridMap {
        grid_size: a.grid_size,
        ix0,
        iy0,
        nx,
        ny,
        values,
    })
}
