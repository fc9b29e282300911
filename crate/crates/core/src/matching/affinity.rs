use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::CellGraph;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AffinityParams {
    /// Bandwidth of the node kernel on z-scored features.
    pub sigma_feature: f64,
    /// Bandwidth of the edge-length kernel, μm.
    pub sigma_edge: f64,
    /// Bandwidth of an optional kernel on the distance between candidate
    /// nodes, μm. Node positions of both graphs must share one frame.
    pub sigma_position: Option<f64>,
    /// With a positional kernel, pairs farther apart than this many
    /// `sigma_position` are not candidates.
    pub position_cutoff: f64,
}

impl Default for AffinityParams {
    fn default() -> Self {
        Self {
            sigma_feature: 1.0,
            sigma_edge: 5.0,
            sigma_position: None,
            position_cutoff: 3.0,
        }
    }
}

/// Pairwise affinity over candidate assignments `(i, a)`, indexed
/// `i * n2 + a`.
///
/// The diagonal holds node affinities. Off-diagonal entries are nonzero
/// only where both graphs have the corresponding edge, so they are kept in
/// compressed sparse rows.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityMatrix {
    pub n1: usize,
    pub n2: usize,
    diag: Vec<f64>,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl AffinityMatrix {
    pub fn dim(&self) -> usize {
        self.n1 * self.n2
    }

    pub fn index(&self, i: usize, a: usize) -> usize {
        i * self.n2 + a
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        if row == col {
            return self.diag[row];
        }
        let range = self.row_ptr[row]..self.row_ptr[row + 1];
        match self.cols[range.clone()].binary_search(&col) {
            Ok(k) => self.vals[range.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn diagonal(&self) -> &[f64] {
        &self.diag
    }

    pub fn off_diagonal_nnz(&self) -> usize {
        self.vals.len()
    }

    /// `out = K · x`
    pub fn mul_vec(&self, x: &[f64], out: &mut [f64]) {
        for r in 0..self.dim() {
            let mut acc = self.diag[r] * x[r];
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.vals[k] * x[self.cols[k]];
            }
            out[r] = acc;
        }
    }

    pub fn max_row_sum(&self) -> f64 {
        (0..self.dim())
            .map(|r| {
                self.diag[r]
                    + self.vals[self.row_ptr[r]..self.row_ptr[r + 1]]
                        .iter()
                        .sum::<f64>()
            })
            .fold(0.0, f64::max)
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let n = self.dim();
        let mut m = nalgebra::DMatrix::zeros(n, n);
        for r in 0..n {
            m[(r, r)] = self.diag[r];
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                m[(r, self.cols[k])] = self.vals[k];
            }
        }
        m
    }

    /// Builds from a diagonal and symmetric off-diagonal triplets.
    pub fn from_parts(
        n1: usize,
        n2: usize,
        diag: Vec<f64>,
        mut triplets: Vec<(usize, usize, f64)>,
    ) -> Result<Self> {
        let n = n1 * n2;
        if diag.len() != n {
            return Err(Error::InvalidInput(
                "diagonal length must be n1 * n2".into(),
            ));
        }
        triplets.retain(|&(_, _, v)| v != 0.0);
        triplets.sort_unstable_by_key(|t| (t.0, t.1));
        let mut row_ptr = vec![0usize; n + 1];
        for &(r, c, _) in &triplets {
            if r >= n || c >= n || r == c {
                return Err(Error::InvalidInput(
                    "off-diagonal triplet out of range".into(),
                ));
            }
            row_ptr[r + 1] += 1;
        }
        for r in 0..n {
            row_ptr[r + 1] += row_ptr[r];
        }
        Ok(Self {
            n1,
            n2,
            diag,
            row_ptr,
            cols: triplets.iter().map(|t| t.1).collect(),
            vals: triplets.iter().map(|t| t.2).collect(),
        })
    }
}

/// Mean and standard deviation per feature over the union of both node sets.
fn feature_moments(a: &CellGraph, b: &CellGraph) -> Vec<(f64, f64)> {
    let dim = a.feature_names.len();
    let all: Vec<&Vec<f64>> = a
        .nodes
        .iter()
        .chain(&b.nodes)
        .map(|n| &n.features)
        .collect();
    let n = all.len() as f64;
    (0..dim)
        .map(|k| {
            let mean = all.iter().map(|f| f[k]).sum::<f64>() / n;
            let var = all.iter().map(|f| (f[k] - mean).powi(2)).sum::<f64>() / n;
            (mean, var.sqrt())
        })
        .collect()
}

/// Node affinity `exp(−‖z_i − z_a‖² / σ_f²)` over z-scored features and edge
/// affinity `exp(−(ℓ_ij − ℓ_ab)² / σ_e²)` for every pair of edges.
///
/// With `sigma_position` set, node affinities are further multiplied by
/// `exp(−‖p_i − p_a‖² / σ_p²)`, edge affinities by the geometric mean of
/// the two endpoint kernels, and pairs beyond the cutoff take part in
/// nothing.
pub fn build_affinity(
    source: &CellGraph,
    target: &CellGraph,
    params: &AffinityParams,
) -> Result<AffinityMatrix> {
    if source.nodes.is_empty() || target.nodes.is_empty() {
        return Err(Error::EmptyInput("graph matching needs non-empty graphs"));
    }
    if source.feature_names != target.feature_names
        || source
            .nodes
            .iter()
            .chain(&target.nodes)
            .any(|n| n.features.len() != source.feature_names.len())
    {
        return Err(Error::FeatureMismatch {
            source_dim: source.feature_names.len(),
            target_dim: target.feature_names.len(),
        });
    }
    if !(params.sigma_feature > 0.0 && params.sigma_edge > 0.0) {
        return Err(Error::Config("affinity bandwidths must be positive".into()));
    }
    if params.sigma_position.is_some_and(|s| !(s > 0.0)) || !(params.position_cutoff > 0.0) {
        return Err(Error::Config(
            "positional kernel bandwidth and cutoff must be positive".into(),
        ));
    }
    let n1 = source.nodes.len();
    let n2 = target.nodes.len();
    let moments = feature_moments(source, target);
    let z = |f: &[f64]| -> Vec<f64> {
        f.iter()
            .zip(&moments)
            .map(|(v, (m, s))| if *s > 1e-12 { (v - m) / s } else { 0.0 })
            .collect()
    };
    let zs: Vec<Vec<f64>> = source.nodes.iter().map(|n| z(&n.features)).collect();
    let zt: Vec<Vec<f64>> = target.nodes.iter().map(|n| z(&n.features)).collect();
    let sf2 = params.sigma_feature * params.sigma_feature;
    let mut diag = Vec::with_capacity(n1 * n2);
    // Positional kernel per pair; zero marks a non-candidate.
    let mut near = Vec::with_capacity(n1 * n2);
    for (zi, ni) in zs.iter().zip(&source.nodes) {
        for (za, na) in zt.iter().zip(&target.nodes) {
            let d2: f64 = zi.iter().zip(za).map(|(a, b)| (a - b) * (a - b)).sum();
            let mut v = (-d2 / sf2).exp();
            let mut g = 1.0;
            if let Some(sp) = params.sigma_position {
                let r2 = ni.position.distance_sq(&na.position);
                g = if r2 <= (params.position_cutoff * sp).powi(2) {
                    (-r2 / (sp * sp)).exp()
                } else {
                    0.0
                };
                v *= g;
            }
            diag.push(v);
            near.push(g);
        }
    }

    let se2 = params.sigma_edge * params.sigma_edge;
    let idx = |i: usize, a: usize| i * n2 + a;
    let mut triplets = Vec::new();
    for e in &source.edges {
        for f in &target.edges {
            let straight = (near[idx(e.i, f.i)] * near[idx(e.j, f.j)]).sqrt();
            let flipped = (near[idx(e.i, f.j)] * near[idx(e.j, f.i)]).sqrt();
            if straight == 0.0 && flipped == 0.0 {
                continue;
            }
            let v = (-(e.length - f.length).powi(2) / se2).exp();
            // (i→a, j→b) and the flipped orientation (i→b, j→a).
            if straight > 0.0 {
                triplets.push((idx(e.i, f.i), idx(e.j, f.j), v * straight));
                triplets.push((idx(e.j, f.j), idx(e.i, f.i), v * straight));
            }
            if flipped > 0.0 {
                triplets.push((idx(e.i, f.j), idx(e.j, f.i), v * flipped));
                triplets.push((idx(e.j, f.i), idx(e.i, f.j), v * flipped));
            }
        }
    }
    AffinityMatrix::from_parts(n1, n2, diag, triplets)
}
