//! Least-squares transforms from point correspondences.

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::cpd::procrustes_rotation;
use crate::error::{Error, Result};
use crate::geometry::{AffineTransform, Point2D, RigidTransform, SINGULAR_DET};
use crate::io::LandmarkSet;
use crate::matching::MatchSet;

/// Source/target pairs with optional nonnegative weights.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrespondenceSet {
    pairs: Vec<(Point2D, Point2D)>,
    weights: Option<Vec<f64>>,
}

impl CorrespondenceSet {
    pub fn new(pairs: Vec<(Point2D, Point2D)>) -> Result<Self> {
        check_finite(&pairs)?;
        Ok(Self {
            pairs,
            weights: None,
        })
    }

    pub fn weighted(pairs: Vec<(Point2D, Point2D)>, weights: Vec<f64>) -> Result<Self> {
        check_finite(&pairs)?;
        if weights.len() != pairs.len() {
            return Err(Error::InvalidInput(
                "one weight per pair is required".into(),
            ));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidInput(
                "pair weights must be finite and nonnegative".into(),
            ));
        }
        if !pairs.is_empty() && weights.iter().all(|&w| w == 0.0) {
            return Err(Error::InvalidInput("pair weights are all zero".into()));
        }
        Ok(Self {
            pairs,
            weights: Some(weights),
        })
    }

    pub fn from_landmarks(landmarks: &LandmarkSet) -> Self {
        Self {
            pairs: landmarks
                .pairs
                .iter()
                .map(|p| (p.source, p.target))
                .collect(),
            weights: None,
        }
    }

    /// Pairs the matched cells' positions; the match score is the weight.
    pub fn from_matches(
        matches: &MatchSet,
        source: &std::collections::HashMap<String, Point2D>,
        target: &std::collections::HashMap<String, Point2D>,
    ) -> Result<Self> {
        let mut pairs = Vec::with_capacity(matches.len());
        let mut weights = Vec::with_capacity(matches.len());
        for m in matches {
            let s = source
                .get(&m.src_id)
                .ok_or_else(|| Error::UnknownId(m.src_id.clone()))?;
            let t = target
                .get(&m.tgt_id)
                .ok_or_else(|| Error::UnknownId(m.tgt_id.clone()))?;
            pairs.push((*s, *t));
            weights.push(m.score);
        }
        Self::weighted(pairs, weights)
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pairs(&self) -> &[(Point2D, Point2D)] {
        &self.pairs
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.weights.as_ref().map_or(1.0, |w| w[i])
    }

    fn effective_len(&self) -> usize {
        match &self.weights {
            Some(w) => w.iter().filter(|&&v| v > 0.0).count(),
            None => self.pairs.len(),
        }
    }

    /// Weighted centroids and total weight.
    fn centroids(&self) -> (Vector2<f64>, Vector2<f64>, f64) {
        let mut cs = Vector2::zeros();
        let mut ct = Vector2::zeros();
        let mut total = 0.0;
        for (i, (s, t)) in self.pairs.iter().enumerate() {
            let w = self.weight(i);
            cs += w * Vector2::new(s.x, s.y);
            ct += w * Vector2::new(t.x, t.y);
            total += w;
        }
        (cs / total, ct / total, total)
    }

    /// Weighted RMS of `‖f(s) − t‖`.
    pub fn rms(&self, f: impl Fn(Point2D) -> Point2D) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for (i, (s, t)) in self.pairs.iter().enumerate() {
            let w = self.weight(i);
            num += w * f(*s).distance_sq(t);
            den += w;
        }
        if den > 0.0 {
            (num / den).sqrt()
        } else {
            0.0
        }
    }
}

fn check_finite(pairs: &[(Point2D, Point2D)]) -> Result<()> {
    if pairs.iter().any(|(s, t)| !s.is_finite() || !t.is_finite()) {
        return Err(Error::InvalidInput(
            "correspondence coordinates must be finite".into(),
        ));
    }
    Ok(())
}

/// Centered source scatter and source/target cross-covariance.
fn moments(pairs: &CorrespondenceSet) -> (Vector2<f64>, Vector2<f64>, Matrix2<f64>, Matrix2<f64>) {
    let (cs, ct, _) = pairs.centroids();
    let mut ss = Matrix2::zeros();
    let mut ts = Matrix2::zeros();
    for (i, (s, t)) in pairs.pairs.iter().enumerate() {
        let w = pairs.weight(i);
        let ds = Vector2::new(s.x, s.y) - cs;
        let dt = Vector2::new(t.x, t.y) - ct;
        ss += w * ds * ds.transpose();
        ts += w * dt * ds.transpose();
    }
    (cs, ct, ss, ts)
}

/// Similarity (or Euclidean when `estimate_scale` is false) transform
/// minimizing `Σ wᵢ ‖T(sᵢ) − tᵢ‖²`.
pub fn fit_rigid(pairs: &CorrespondenceSet, estimate_scale: bool) -> Result<RigidTransform> {
    let n = pairs.effective_len();
    if n < 2 {
        return Err(Error::TooFewPairs { needed: 2, got: n });
    }
    let (cs, ct, ss, ts) = moments(pairs);
    let spread = ss.trace();
    let size = cs.norm_squared().max(1.0) * pairs.centroids().2;
    if !(spread > 1e-20 * size) {
        return Err(Error::DegenerateConfiguration(
            "source points coincide".into(),
        ));
    }
    let r = procrustes_rotation(&ts);
    let scale = if estimate_scale {
        (r.transpose() * ts).trace() / spread
    } else {
        1.0
    };
    if !(scale > 0.0) {
        return Err(Error::DegenerateConfiguration(
            "fitted scale is not positive".into(),
        ));
    }
    let t = ct - scale * r * cs;
    RigidTransform::new(r[(1, 0)].atan2(r[(0, 0)]), scale, t.x, t.y)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineFit {
    pub transform: AffineTransform,
    /// Weighted residual RMS, μm.
    pub rms: f64,
}

/// Weighted least-squares affine map over the six coefficients.
pub fn fit_affine(pairs: &CorrespondenceSet) -> Result<AffineFit> {
    let n = pairs.effective_len();
    if n < 3 {
        return Err(Error::TooFewPairs { needed: 3, got: n });
    }
    let (cs, ct, ss, ts) = moments(pairs);
    let eig = ss.symmetric_eigenvalues();
    let (lo, hi) = (eig.min(), eig.max());
    if !(hi > 0.0) || lo <= 1e-12 * hi {
        return Err(Error::DegenerateConfiguration(
            "source points are collinear".into(),
        ));
    }
    let inv = ss
        .try_inverse()
        .ok_or_else(|| Error::DegenerateConfiguration("source scatter is singular".into()))?;
    let a = ts * inv;
    let t = ct - a * cs;
    let transform = AffineTransform {
        a11: a[(0, 0)],
        a12: a[(0, 1)],
        a21: a[(1, 0)],
        a22: a[(1, 1)],
        tx: t.x,
        ty: t.y,
    };
    if transform.determinant().abs() <= SINGULAR_DET {
        return Err(Error::DegenerateConfiguration(
            "fitted affine map is singular".into(),
        ));
    }
    let rms = pairs.rms(|p| transform.apply(p));
    Ok(AffineFit { transform, rms })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn forward(f: impl Fn(Point2D) -> Point2D, src: &[Point2D]) -> CorrespondenceSet {
        CorrespondenceSet::new(src.iter().map(|&s| (s, f(s))).collect()).unwrap()
    }

    fn eight() -> Vec<Point2D> {
        [
            (0.0, 0.0),
            (120.0, 10.0),
            (35.0, 88.0),
            (-40.0, 61.0),
            (210.0, -30.0),
            (5.0, -99.0),
            (150.0, 150.0),
            (-75.0, -20.0),
        ]
        .iter()
        .map(|&(x, y)| Point2D::new(x, y))
        .collect()
    }

    #[test]
    fn identity_pairs() {
        let t = fit_rigid(&forward(|p| p, &eight()), false).unwrap();
        assert!(t.theta().abs() <= 1e-12);
        assert!(t.translation_magnitude() <= 1e-12);
    }

    #[test]
    fn recovers_eight_pair_rigid() {
        let truth = RigidTransform::euclidean(3f64.to_radians(), 40.0, -12.0).unwrap();
        let t = fit_rigid(&forward(|p| truth.apply(p), &eight()), false).unwrap();
        assert!((t.theta() - truth.theta()).abs() < 1e-9);
        assert!((t.dx() - 40.0).abs() < 1e-9 && (t.dy() + 12.0).abs() < 1e-9);
        assert_eq!(t.scale(), 1.0);
    }

    #[test]
    fn recovers_scale_when_asked() {
        let truth = RigidTransform::new(-0.3, 1.7, 5.0, 9.0).unwrap();
        let t = fit_rigid(&forward(|p| truth.apply(p), &eight()), true).unwrap();
        assert!((t.scale() - 1.7).abs() < 1e-9);
        assert!((t.theta() + 0.3).abs() < 1e-9);
    }

    #[test]
    fn rigid_errors() {
        let one =
            CorrespondenceSet::new(vec![(Point2D::new(0.0, 0.0), Point2D::new(1.0, 1.0))]).unwrap();
        assert!(matches!(
            fit_rigid(&one, false),
            Err(Error::TooFewPairs { needed: 2, got: 1 })
        ));
        let p = Point2D::new(3.0, 4.0);
        let same = CorrespondenceSet::new(vec![
            (p, Point2D::new(0.0, 0.0)),
            (p, Point2D::new(1.0, 0.0)),
        ])
        .unwrap();
        assert!(matches!(
            fit_rigid(&same, false),
            Err(Error::DegenerateConfiguration(_))
        ));
    }

    #[test]
    fn affine_exact_three() {
        let truth = AffineTransform {
            a11: 1.1,
            a12: 0.2,
            a21: -0.15,
            a22: 0.95,
            tx: 12.0,
            ty: -7.0,
        };
        let src = [
            Point2D::new(0.0, 0.0),
            Point2D::new(50.0, 3.0),
            Point2D::new(-8.0, 40.0),
        ];
        let fit = fit_affine(&forward(|p| truth.apply(p), &src)).unwrap();
        let t = fit.transform;
        for (a, b) in [
            (t.a11, 1.1),
            (t.a12, 0.2),
            (t.a21, -0.15),
            (t.a22, 0.95),
            (t.tx, 12.0),
            (t.ty, -7.0),
        ] {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
        assert!(fit.rms < 1e-9);
    }

    #[test]
    fn affine_identity() {
        let fit = fit_affine(&forward(|p| p, &eight())).unwrap();
        let id = AffineTransform::identity();
        for (a, b) in [
            (fit.transform.a11, id.a11),
            (fit.transform.a12, 0.0),
            (fit.transform.tx, 0.0),
            (fit.transform.ty, 0.0),
        ] {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn affine_errors() {
        let src = [
            Point2D::new(0.0, 0.0),
            Point2D::new(1.0, 1.0),
            Point2D::new(2.0, 2.0),
        ];
        assert!(matches!(
            fit_affine(&forward(|p| p, &src)),
            Err(Error::DegenerateConfiguration(_))
        ));
        assert!(matches!(
            fit_affine(&forward(|p| p, &src[..2])),
            Err(Error::TooFewPairs { needed: 3, got: 2 })
        ));
    }

    #[test]
    fn zero_weights_do_not_count() {
        let src = eight();
        let pairs: Vec<_> = src.iter().map(|&s| (s, s)).collect();
        let mut w = vec![0.0; 8];
        w[0] = 1.0;
        let set = CorrespondenceSet::weighted(pairs, w).unwrap();
        assert!(matches!(
            fit_rigid(&set, false),
            Err(Error::TooFewPairs { got: 1, .. })
        ));
        assert!(CorrespondenceSet::weighted(vec![(src[0], src[0])], vec![0.0]).is_err());
    }

    #[test]
    fn weights_pull_the_fit() {
        // Two inconsistent halves; the heavy half wins.
        let a = RigidTransform::euclidean(0.0, 10.0, 0.0).unwrap();
        let b = RigidTransform::euclidean(0.0, -10.0, 0.0).unwrap();
        let src = eight();
        let mut pairs: Vec<_> = src.iter().map(|&s| (s, a.apply(s))).collect();
        pairs.extend(src.iter().map(|&s| (s, b.apply(s))));
        let mut w = vec![1.0; 8];
        w.extend(vec![1e-6; 8]);
        let t = fit_rigid(&CorrespondenceSet::weighted(pairs, w).unwrap(), false).unwrap();
        assert!((t.dx() - 10.0).abs() < 1e-3);
    }

    #[test]
    fn rigid_is_locally_optimal() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let truth = RigidTransform::euclidean(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-50.0..50.0),
                rng.gen_range(-50.0..50.0),
            )
            .unwrap();
            let src: Vec<Point2D> = (0..20)
                .map(|_| Point2D::new(rng.gen_range(0.0..100.0), rng.gen_range(0.0..100.0)))
                .collect();
            let pairs: Vec<_> = src
                .iter()
                .map(|&s| {
                    let t = truth.apply(s);
                    (
                        s,
                        Point2D::new(
                            t.x + rng.gen_range(-2.0..2.0),
                            t.y + rng.gen_range(-2.0..2.0),
                        ),
                    )
                })
                .collect();
            let set = CorrespondenceSet::new(pairs).unwrap();
            let fit = fit_rigid(&set, false).unwrap();
            let best = set.rms(|p| fit.apply(p));
            for _ in 0..100 {
                let other = RigidTransform::euclidean(
                    fit.theta() + rng.gen_range(-0.01..0.01),
                    fit.dx() + rng.gen_range(-0.5..0.5),
                    fit.dy() + rng.gen_range(-0.5..0.5),
                )
                .unwrap();
                assert!(best <= set.rms(|p| other.apply(p)) + 1e-12);
            }
        }
    }

    proptest! {
        #[test]
        fn affine_extra_consistent_pair(x in -100.0f64..100.0, y in -100.0f64..100.0) {
            let truth = AffineTransform { a11: 0.9, a12: -0.3, a21: 0.25, a22: 1.05, tx: 4.0, ty: 8.0 };
            let mut src = eight();
            let base = fit_affine(&forward(|p| truth.apply(p), &src)).unwrap().transform;
            src.push(Point2D::new(x, y));
            let more = fit_affine(&forward(|p| base.apply(p), &src)).unwrap().transform;
            for (a, b) in [(base.a11, more.a11), (base.a12, more.a12), (base.a21, more.a21), (base.a22, more.a22), (base.tx, more.tx), (base.ty, more.ty)] {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }

        #[test]
        fn rigid_rotation_equivariance(theta in -1.5f64..1.5, phi in -1.5f64..1.5, dx in -50.0f64..50.0, dy in -50.0f64..50.0) {
            let truth = RigidTransform::euclidean(theta, dx, dy).unwrap();
            let src = eight();
            let fit = fit_rigid(&forward(|p| truth.apply(p), &src), false).unwrap();
            let rot = RigidTransform::euclidean(phi, 0.0, 0.0).unwrap();
            let fit2 = fit_rigid(&forward(|p| rot.apply(truth.apply(p)), &src), false).unwrap();
            let d = crate::geometry::angle_difference(fit2.theta(), fit.theta() + phi);
            prop_assert!(d < 1e-9);
        }
    }
}
