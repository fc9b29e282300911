//! Coarse CPD registration followed by windowed graph matching, LPM
//! filtering and a weighted affine fit.

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cpd::{cpd_rigid, cpd_rigid_weighted_floored, CpdConfig, CpdResult};
use crate::error::{Error, Result};
use crate::evaluation::bin_of;
use crate::fit::{fit_affine, CorrespondenceSet};
use crate::geometry::{AffineTransform, Point2D, RigidTransform};
use crate::graph::{
    build_graph, cells_in_window, kde_density, sample_windows, WindowPair, WindowParams,
};
use crate::io::{CellRecord, CellTable};
use crate::matching::{
    lpm_filter, match_graphs, positions_by_id, AffinityParams, LpmParams, Match, MatchSet,
    MatcherParams,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SupercellConfig {
    /// Side of the binning grid, μm.
    pub grid_size: f64,
}

impl Default for SupercellConfig {
    fn default() -> Self {
        Self { grid_size: 100.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlignmentConfig {
    pub cpd: CpdConfig,
    /// KDE bandwidth for density gating, μm.
    pub kde_bandwidth: f64,
    pub density_gate: f64,
    pub window_count: usize,
    pub src_window: f64,
    pub tgt_window: f64,
    pub edge_threshold: f64,
    pub matcher: MatcherParams,
    pub lpm: LpmParams,
    pub min_pooled_matches: usize,
    /// Fewer cells than this on either side is an error.
    pub min_cells: usize,
    /// Features used for node affinity; `None` uses all shared features.
    pub features: Option<Vec<String>>,
    pub supercell: Option<SupercellConfig>,
}

impl Default for AlignmentConfig {
    fn default() -> Self {
        Self {
            cpd: CpdConfig::default(),
            kde_bandwidth: 25.0,
            density_gate: 0.5,
            window_count: 8,
            src_window: 50.0,
            tgt_window: 150.0,
            edge_threshold: 15.0,
            matcher: MatcherParams {
                affinity: AffinityParams {
                    sigma_position: Some(8.0),
                    ..Default::default()
                },
                ..Default::default()
            },
            lpm: LpmParams::default(),
            min_pooled_matches: 10,
            min_cells: 50,
            features: None,
            supercell: None,
        }
    }
}

impl AlignmentConfig {
    pub fn validate(&self) -> Result<()> {
        self.cpd.validate()?;
        let positive = [
            ("kde_bandwidth", self.kde_bandwidth),
            ("src_window", self.src_window),
            ("tgt_window", self.tgt_window),
            ("edge_threshold", self.edge_threshold),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.density_gate > 0.0 && self.density_gate <= 1.0) {
            return Err(Error::Config(format!(
                "density_gate must lie in (0, 1], got {}",
                self.density_gate
            )));
        }
        if self.window_count == 0 {
            return Err(Error::Config("window_count must be at least 1".into()));
        }
        if self.min_pooled_matches < 3 {
            return Err(Error::Config(
                "min_pooled_matches must be at least 3".into(),
            ));
        }
        if let Some(sc) = &self.supercell {
            if !(sc.grid_size > 0.0 && sc.grid_size.is_finite()) {
                return Err(Error::Config(format!(
                    "supercell grid size must be positive, got {}",
                    sc.grid_size
                )));
            }
        }
        Ok(())
    }

    fn window_params(&self) -> WindowParams {
        WindowParams {
            count: self.window_count,
            density_gate: self.density_gate,
            source_size: self.src_window,
            target_size: self.tgt_window,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowReport {
    pub source_center: Point2D,
    pub target_center: Point2D,
    pub source_cells: usize,
    pub target_cells: usize,
    pub matches: usize,
    pub rrwm_iterations: usize,
    pub rrwm_converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub cpd_iterations: usize,
    pub cpd_sigma2: f64,
    pub cpd_converged: bool,
    /// Points (or super-cells) per side that entered CPD.
    pub cpd_points: (usize, usize),
    pub windows_sampled: usize,
    pub windows_used: usize,
    pub windows: Vec<WindowReport>,
    /// One-to-one pool before filtering.
    pub pooled_count: usize,
    pub lpm_survivors: usize,
    pub lpm_low_confidence: bool,
    /// Weighted residual RMS of the affine fit, μm.
    pub fit_rms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentResult {
    pub coarse: RigidTransform,
    pub refined: AffineTransform,
    pub matches: MatchSet,
    /// The refinement was skipped and `refined` lifts `coarse`.
    pub coarse_only: bool,
    pub diagnostics: Diagnostics,
}

/// Coarse-stage summary handed to [`refine`].
#[derive(Debug, Clone, PartialEq)]
pub struct CoarseStage {
    pub transform: RigidTransform,
    pub iterations: usize,
    pub sigma2: f64,
    pub converged: bool,
    pub points: (usize, usize),
}

impl CoarseStage {
    fn from_cpd(r: &CpdResult, points: (usize, usize)) -> Self {
        Self {
            transform: r.transform,
            iterations: r.iterations,
            sigma2: r.sigma2,
            converged: r.converged,
            points,
        }
    }
}

fn check_sizes(source: &CellTable, target: &CellTable, config: &AlignmentConfig) -> Result<()> {
    let got = source.len().min(target.len());
    if got < config.min_cells {
        return Err(Error::TooFewCells {
            needed: config.min_cells,
            got,
        });
    }
    Ok(())
}

/// Full pipeline on the cells themselves.
pub fn align(
    source: &CellTable,
    target: &CellTable,
    config: &AlignmentConfig,
    seed: u64,
) -> Result<AlignmentResult> {
    config.validate()?;
    check_sizes(source, target, config)?;
    let cpd_config = CpdConfig {
        sample_seed: seed,
        ..config.cpd.clone()
    };
    let src = source.positions();
    let tgt = target.positions();
    let cpd = cpd_rigid(&src, &tgt, &cpd_config)?;
    let cap = |n: usize| config.cpd.max_points.map_or(n, |m| m.min(n));
    let coarse = CoarseStage::from_cpd(&cpd, (cap(src.len()), cap(tgt.len())));
    refine(source, target, &coarse, config, seed)
}

/// Pipeline whose coarse stage runs weighted CPD on grid super-cells.
pub fn align_large(
    source: &CellTable,
    target: &CellTable,
    config: &AlignmentConfig,
    seed: u64,
) -> Result<AlignmentResult> {
    config.validate()?;
    let grid = config
        .supercell
        .ok_or_else(|| Error::Config("align_large needs a supercell configuration".into()))?
        .grid_size;
    check_sizes(source, target, config)?;
    let sc_src = supercell_cluster(&source.positions(), grid)?;
    let sc_tgt = supercell_cluster(&target.positions(), grid)?;
    if sc_src.len() < 2 || sc_tgt.len() < 2 {
        return Err(Error::DegenerateConfiguration(format!(
            "super-cell grid {grid} μm leaves {} source and {} target super-cells; CPD needs at least 2 each",
            sc_src.len(),
            sc_tgt.len()
        )));
    }
    let (sp, sw): (Vec<Point2D>, Vec<f64>) =
        sc_src.iter().map(|s| (s.centroid, s.weight as f64)).unzip();
    let (tp, tw): (Vec<Point2D>, Vec<f64>) =
        sc_tgt.iter().map(|s| (s.centroid, s.weight as f64)).unzip();
    // Centroids of well-filled bins sit near bin centres; blur below the
    // grid pitch so the two lattices cannot lock onto each other.
    let cpd = cpd_rigid_weighted_floored(&sp, &sw, &tp, &tw, &config.cpd, grid * grid / 4.0)?;
    let coarse = CoarseStage::from_cpd(&cpd, (sp.len(), tp.len()));
    refine(source, target, &coarse, config, seed)
}

fn shared_features(
    source: &CellTable,
    target: &CellTable,
    config: &AlignmentConfig,
) -> Vec<String> {
    match &config.features {
        Some(f) => f.clone(),
        None => {
            let tgt = target.feature_names();
            source
                .feature_names()
                .into_iter()
                .filter(|f| tgt.contains(f))
                .collect()
        }
    }
}

struct WindowOutcome {
    report: WindowReport,
    matches: Vec<Match>,
    used: bool,
}

#[allow(clippy::too_many_arguments)]
fn match_window(
    window: &WindowPair,
    source: &CellTable,
    target: &CellTable,
    src_pos: &[Point2D],
    tgt_pos: &[Point2D],
    features: &[String],
    coarse: &RigidTransform,
    config: &AlignmentConfig,
) -> Result<WindowOutcome> {
    let si = cells_in_window(src_pos, window.source_center, window.source_size);
    let ti = cells_in_window(tgt_pos, window.target_center, window.target_size);
    let mut report = WindowReport {
        source_center: window.source_center,
        target_center: window.target_center,
        source_cells: si.len(),
        target_cells: ti.len(),
        matches: 0,
        rrwm_iterations: 0,
        rrwm_converged: false,
    };
    if si.is_empty() || ti.is_empty() {
        return Ok(WindowOutcome {
            report,
            matches: Vec::new(),
            used: false,
        });
    }
    let sc: Vec<&CellRecord> = si.iter().map(|&i| &source.cells()[i]).collect();
    let tc: Vec<&CellRecord> = ti.iter().map(|&i| &target.cells()[i]).collect();
    let mut gs = build_graph(&sc, config.edge_threshold, features)?;
    // Edge lengths come from the source frame; node positions are compared
    // against target cells, so they move into the target frame.
    for n in &mut gs.nodes {
        n.position = coarse.apply(n.position);
    }
    let gt = build_graph(&tc, config.edge_threshold, features)?;
    match match_graphs(&gs, &gt, &config.matcher) {
        Ok(m) => {
            report.matches = m.matches.len();
            report.rrwm_iterations = m.rrwm_iterations;
            report.rrwm_converged = m.rrwm_converged;
            Ok(WindowOutcome {
                report,
                matches: m.matches,
                used: true,
            })
        }
        Err(Error::DegenerateAffinity) => Ok(WindowOutcome {
            report,
            matches: Vec::new(),
            used: false,
        }),
        Err(e) => Err(e),
    }
}

/// Graph-matching refinement given a coarse transform.
pub fn refine(
    source: &CellTable,
    target: &CellTable,
    coarse: &CoarseStage,
    config: &AlignmentConfig,
    seed: u64,
) -> Result<AlignmentResult> {
    config.validate()?;
    check_sizes(source, target, config)?;
    let src_pos = source.positions();
    let tgt_pos = target.positions();
    let density = kde_density(&src_pos, config.kde_bandwidth)?;
    let windows = sample_windows(
        &src_pos,
        &density,
        &coarse.transform,
        &config.window_params(),
        seed,
    )?;
    let features = shared_features(source, target, config);

    let outcomes: Vec<WindowOutcome> = windows
        .par_iter()
        .map(|w| {
            match_window(
                w,
                source,
                target,
                &src_pos,
                &tgt_pos,
                &features,
                &coarse.transform,
                config,
            )
        })
        .collect::<Result<_>>()?;
    let windows_used = outcomes.iter().filter(|o| o.used).count();
    if windows_used == 0 {
        return Err(Error::WindowsEmpty {
            windows: windows.len(),
        });
    }
    let mut reports = Vec::with_capacity(outcomes.len());
    let mut candidates = Vec::new();
    for o in outcomes {
        reports.push(o.report);
        candidates.extend(o.matches);
    }
    let pooled = MatchSet::pool(candidates);
    let src_map = positions_by_id(source);
    let tgt_map = positions_by_id(target);
    let lpm = lpm_filter(&pooled, &src_map, &tgt_map, &config.lpm)?;

    let mut refined = coarse.transform.to_affine();
    let mut fit_rms = None;
    let mut coarse_only = true;
    if lpm.matches.len() >= config.min_pooled_matches {
        let pairs = CorrespondenceSet::from_matches(&lpm.matches, &src_map, &tgt_map)?;
        match fit_affine(&pairs) {
            Ok(fit) => {
                refined = fit.transform;
                fit_rms = Some(fit.rms);
                coarse_only = false;
            }
            Err(Error::DegenerateConfiguration(_) | Error::TooFewPairs { .. }) => {}
            Err(e) => return Err(e),
        }
    }

    Ok(AlignmentResult {
        coarse: coarse.transform,
        refined,
        diagnostics: Diagnostics {
            cpd_iterations: coarse.iterations,
            cpd_sigma2: coarse.sigma2,
            cpd_converged: coarse.converged,
            cpd_points: coarse.points,
            windows_sampled: windows.len(),
            windows_used,
            windows: reports,
            pooled_count: pooled.len(),
            lpm_survivors: lpm.matches.len(),
            lpm_low_confidence: lpm.low_confidence,
            fit_rms,
        },
        matches: lpm.matches,
        coarse_only,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SuperCell {
    pub centroid: Point2D,
    pub weight: usize,
}

/// Bins points on an origin-anchored grid; one super-cell per occupied bin,
/// ordered by bin row then column.
pub fn supercell_cluster(points: &[Point2D], grid_size: f64) -> Result<Vec<SuperCell>> {
    if points.is_empty() {
        return Err(Error::EmptyInput("super-cell clustering needs cells"));
    }
    if !(grid_size > 0.0 && grid_size.is_finite()) {
        return Err(Error::Config(format!(
            "grid size must be positive, got {grid_size}"
        )));
    }
    let mut bins: BTreeMap<(i64, i64), (f64, f64, usize)> = BTreeMap::new();
    for p in points {
        let (ix, iy) = bin_of(*p, grid_size);
        let e = bins.entry((iy, ix)).or_insert((0.0, 0.0, 0));
        e.0 += p.x;
        e.1 += p.y;
        e.2 += 1;
    }
    Ok(bins
        .into_values()
        .map(|(sx, sy, n)| SuperCell {
            centroid: Point2D::new(sx / n as f64, sy / n as f64),
            weight: n,
        })
        .collect())
}

/// Positions of `table` mapped by `t`, keyed by id.
pub fn mapped_positions(table: &CellTable, t: &AffineTransform) -> HashMap<String, Point2D> {
    table
        .cells()
        .iter()
        .map(|c| (c.id.clone(), t.apply(c.centroid)))
        .collect()
}
