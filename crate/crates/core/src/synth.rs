//! Synthetic tissue-like cell patterns with a known transform and known
//! correspondences.
//!
//! Positions come from a Neyman–Scott process (uniform parents, Gaussian
//! offspring) or, with `cluster_count == 0`, a uniform process. The target
//! table is the transformed source with jitter, dropout of matched cells and
//! extra unmatched cells. All randomness flows from one ChaCha8 stream.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Point2D, RigidTransform};
use crate::io::{CellRecord, CellTable, LandmarkPair, LandmarkSet, Modality};

/// Identifier of the generator algorithm recorded in run manifests.
pub const RNG_ALGORITHM: &str = "chacha8 (rand_chacha 0.3, seed_from_u64)";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthScenario {
    pub n_points: usize,
    /// Side of the square the source pattern lives in, μm.
    pub extent: f64,
    /// Number of parent clusters; zero gives a uniform pattern.
    pub cluster_count: usize,
    pub cluster_sigma: f64,
    pub transform: RigidTransform,
    pub jitter_sigma: f64,
    pub dropout_rate: f64,
    pub spurious_rate: f64,
    /// Relative noise on morphology features of matched target cells.
    pub feature_noise: f64,
    pub seed: u64,
}

impl Default for SynthScenario {
    fn default() -> Self {
        Self {
            n_points: 1000,
            extent: 600.0,
            cluster_count: 12,
            cluster_sigma: 40.0,
            transform: RigidTransform::identity(),
            jitter_sigma: 0.0,
            dropout_rate: 0.0,
            spurious_rate: 0.0,
            feature_noise: 0.02,
            seed: 0,
        }
    }
}

impl SynthScenario {
    /// Same section imaged twice: small jitter, little dropout.
    pub fn restained_like(seed: u64) -> Self {
        Self {
            n_points: 2000,
            extent: 600.0,
            cluster_count: 12,
            cluster_sigma: 40.0,
            transform: RigidTransform::euclidean(4f64.to_radians(), 30.0, -15.0).unwrap(),
            jitter_sigma: 0.5,
            dropout_rate: 0.05,
            spurious_rate: 0.0,
            feature_noise: 0.02,
            seed,
        }
    }

    /// Adjacent section: cells shift more and many have no counterpart.
    pub fn serial_like(seed: u64) -> Self {
        Self {
            jitter_sigma: 3.0,
            dropout_rate: 0.25,
            ..Self::restained_like(seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.n_points < 2 {
            return fail("n_points must be at least 2");
        }
        if !(self.extent > 0.0 && self.extent.is_finite()) {
            return fail("extent must be positive");
        }
        if self.cluster_count > 0 && !(self.cluster_sigma > 0.0 && self.cluster_sigma.is_finite()) {
            return fail("cluster_sigma must be positive when clustering");
        }
        if !(self.jitter_sigma >= 0.0 && self.jitter_sigma.is_finite()) {
            return fail("jitter_sigma must be non-negative");
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return fail("dropout_rate must lie in [0, 1)");
        }
        if !(self.spurious_rate >= 0.0 && self.spurious_rate.is_finite()) {
            return fail("spurious_rate must be non-negative");
        }
        if !(self.feature_noise >= 0.0 && self.feature_noise.is_finite()) {
            return fail("feature_noise must be non-negative");
        }
        Ok(())
    }
}

/// A generated source/target pair with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutput {
    pub source: CellTable,
    pub target: CellTable,
    /// `(source id, target id)` for every matched cell, in source order.
    pub truth: Vec<(String, String)>,
    pub truth_transform: RigidTransform,
}

struct Morphology {
    area: f64,
    perimeter: f64,
    solidity: f64,
    stain: f64,
}

fn draw_morphology(rng: &mut ChaCha8Rng) -> Morphology {
    let area = LogNormal::new(60f64.ln(), 0.3).unwrap().sample(rng);
    let solidity = Normal::new(0.9f64, 0.05)
        .unwrap()
        .sample(rng)
        .clamp(0.6, 1.0);
    let roughness = LogNormal::new(0.0, 0.05).unwrap().sample(rng);
    let perimeter =
        2.0 * (std::f64::consts::PI * area).sqrt() * (1.0 + 0.5 * (1.0 - solidity)) * roughness;
    let stain = Normal::new(0.5f64, 0.15).unwrap().sample(rng).max(0.01);
    Morphology {
        area,
        perimeter,
        solidity,
        stain,
    }
}

fn perturb(m: &Morphology, noise: f64, rng: &mut ChaCha8Rng) -> Morphology {
    if noise == 0.0 {
        return Morphology { ..*m };
    }
    let normal = Normal::new(0.0, noise).unwrap();
    let mut factor = || (1.0 + normal.sample(rng)).max(0.05);
    Morphology {
        area: m.area * factor(),
        perimeter: m.perimeter * factor(),
        solidity: (m.solidity * factor()).min(1.0),
        stain: m.stain * factor(),
    }
}

fn cell(id: String, centroid: Point2D, m: &Morphology) -> CellRecord {
    CellRecord::new(id, centroid)
        .with_feature("area", m.area)
        .with_feature("perimeter", m.perimeter)
        .with_feature("solidity", m.solidity)
        .with_feature("nucleus_stain_mean", m.stain)
}

struct PointProcess {
    parents: Vec<Point2D>,
    offspring: Option<Normal<f64>>,
    extent: f64,
}

impl PointProcess {
    fn new(s: &SynthScenario, rng: &mut ChaCha8Rng) -> Self {
        let parents = (0..s.cluster_count)
            .map(|_| Point2D::new(rng.gen_range(0.0..s.extent), rng.gen_range(0.0..s.extent)))
            .collect();
        let offspring = (s.cluster_count > 0).then(|| Normal::new(0.0, s.cluster_sigma).unwrap());
        Self {
            parents,
            offspring,
            extent: s.extent,
        }
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> Point2D {
        let inside = |v: f64| (0.0..self.extent).contains(&v);
        match &self.offspring {
            None => Point2D::new(
                rng.gen_range(0.0..self.extent),
                rng.gen_range(0.0..self.extent),
            ),
            Some(normal) => {
                // Offspring falling outside the square are redrawn.
                loop {
                    let parent = self.parents[rng.gen_range(0..self.parents.len())];
                    let p =
                        Point2D::new(parent.x + normal.sample(rng), parent.y + normal.sample(rng));
                    if inside(p.x) && inside(p.y) {
                        return p;
                    }
                }
            }
        }
    }
}

pub fn generate(scenario: &SynthScenario) -> Result<SynthOutput> {
    scenario.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    let process = PointProcess::new(scenario, &mut rng);

    let mut source = Vec::with_capacity(scenario.n_points);
    let mut morph = Vec::with_capacity(scenario.n_points);
    for i in 0..scenario.n_points {
        let p = process.draw(&mut rng);
        let m = draw_morphology(&mut rng);
        source.push(cell(format!("s{i}"), p, &m));
        morph.push(m);
    }

    let jitter =
        (scenario.jitter_sigma > 0.0).then(|| Normal::new(0.0, scenario.jitter_sigma).unwrap());
    let t = scenario.transform;
    let mut target = Vec::new();
    let mut truth = Vec::new();
    for (i, (src, m)) in source.iter().zip(&morph).enumerate() {
        if rng.gen::<f64>() < scenario.dropout_rate {
            continue;
        }
        let mut p = t.apply(src.centroid);
        if let Some(j) = &jitter {
            p.x += j.sample(&mut rng);
            p.y += j.sample(&mut rng);
        }
        let tm = perturb(m, scenario.feature_noise, &mut rng);
        let id = format!("t{i}");
        truth.push((src.id.clone(), id.clone()));
        target.push(cell(id, p, &tm));
    }

    let spurious = (scenario.spurious_rate * scenario.n_points as f64).round() as usize;
    for k in 0..spurious {
        let p = t.apply(process.draw(&mut rng));
        let m = draw_morphology(&mut rng);
        target.push(cell(format!("x{k}"), p, &m));
    }

    if target.is_empty() {
        return Err(Error::Config("dropout removed every target cell".into()));
    }
    Ok(SynthOutput {
        source: CellTable::new(Modality::HE, source)?,
        target: CellTable::new(Modality::MxIF, target)?,
        truth,
        truth_transform: t,
    })
}

impl SynthOutput {
    /// Removes `count` randomly chosen truth pairs from both tables and
    /// returns them as landmarks (source position → target position).
    pub fn hold_out_landmarks(
        &self,
        count: usize,
        seed: u64,
    ) -> Result<(SynthOutput, LandmarkSet)> {
        if count > self.truth.len() {
            return Err(Error::Config(format!(
                "requested {count} landmarks but only {} truth pairs exist",
                self.truth.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6c61_6e64_6d61_726b);
        let mut picked: Vec<usize> = sample(&mut rng, self.truth.len(), count).into_vec();
        picked.sort_unstable();

        let src_pos = |id: &str| {
            self.source
                .cells()
                .iter()
                .find(|c| c.id == id)
                .unwrap()
                .centroid
        };
        let tgt_pos = |id: &str| {
            self.target
                .cells()
                .iter()
                .find(|c| c.id == id)
                .unwrap()
                .centroid
        };
        let pairs = picked
            .iter()
            .map(|&k| {
                let (s, t) = &self.truth[k];
                LandmarkPair {
                    source: src_pos(s),
                    target: tgt_pos(t),
                }
            })
            .collect();
        let held_src: std::collections::HashSet<&str> =
            picked.iter().map(|&k| self.truth[k].0.as_str()).collect();
        let held_tgt: std::collections::HashSet<&str> =
            picked.iter().map(|&k| self.truth[k].1.as_str()).collect();
        let rest = SynthOutput {
            source: self.source.filter(|c| !held_src.contains(c.id.as_str()))?,
            target: self.target.filter(|c| !held_tgt.contains(c.id.as_str()))?,
            truth: self
                .truth
                .iter()
                .filter(|(s, _)| !held_src.contains(s.as_str()))
                .cloned()
                .collect(),
            truth_transform: self.truth_transform,
        };
        Ok((rest, LandmarkSet::new(pairs)?))
    }
}
