//! Planar points and the two transform families used throughout the crate.
//!
//! Every coordinate is in micrometres. Pixel coordinates are converted once,
//! at ingest, by [`px_to_um`].

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Determinant magnitude below which an affine map is treated as singular.
pub const SINGULAR_DET: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2D {
    pub x: f64,
    pub y: f64,
}

impl Point2D {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn distance(&self, other: &Point2D) -> f64 {
        self.distance_sq(other).sqrt()
    }

    pub fn distance_sq(&self, other: &Point2D) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        dx * dx + dy * dy
    }

    pub fn norm(&self) -> f64 {
        self.x.hypot(self.y)
    }
}

/// Wraps an angle into `(-π, π]`.
pub fn normalize_angle(theta: f64) -> f64 {
    let wrapped = theta.rem_euclid(TAU);
    if wrapped > PI {
        wrapped - TAU
    } else {
        wrapped
    }
}

/// Absolute angular difference folded into `[0, π]`.
pub fn angle_difference(a: f64, b: f64) -> f64 {
    normalize_angle(a - b).abs()
}

/// Similarity transform `p ↦ S·R(θ)·p + (dx, dy)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RigidRepr", into = "RigidRepr")]
pub struct RigidTransform {
    theta: f64,
    scale: f64,
    dx: f64,
    dy: f64,
}

#[derive(Serialize, Deserialize)]
struct RigidRepr {
    theta_rad: f64,
    scale: f64,
    dx_um: f64,
    dy_um: f64,
}

impl TryFrom<RigidRepr> for RigidTransform {
    type Error = Error;

    fn try_from(r: RigidRepr) -> Result<Self> {
        RigidTransform::new(r.theta_rad, r.scale, r.dx_um, r.dy_um)
    }
}

impl From<RigidTransform> for RigidRepr {
    fn from(t: RigidTransform) -> Self {
        RigidRepr {
            theta_rad: t.theta,
            scale: t.scale,
            dx_um: t.dx,
            dy_um: t.dy,
        }
    }
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    /// Builds a transform, normalizing `theta` into `(-π, π]`.
    pub fn new(theta: f64, scale: f64, dx: f64, dy: f64) -> Result<Self> {
        if !(theta.is_finite() && scale.is_finite() && dx.is_finite() && dy.is_finite()) {
            return Err(Error::InvalidInput(
                "rigid transform parameters must be finite".into(),
            ));
        }
        if scale <= 0.0 {
            return Err(Error::InvalidInput(format!(
                "rigid transform scale must be positive, got {scale}"
            )));
        }
        Ok(Self {
            theta: normalize_angle(theta),
            scale,
            dx,
            dy,
        })
    }

    /// Unit-scale rotation followed by translation.
    pub fn euclidean(theta: f64, dx: f64, dy: f64) -> Result<Self> {
        Self::new(theta, 1.0, dx, dy)
    }

    pub const fn identity() -> Self {
        Self {
            theta: 0.0,
            scale: 1.0,
            dx: 0.0,
            dy: 0.0,
        }
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn theta_degrees(&self) -> f64 {
        self.theta.to_degrees()
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    pub fn dy(&self) -> f64 {
        self.dy
    }

    pub fn apply(&self, p: Point2D) -> Point2D {
        apply_rigid(self, p)
    }

    /// Translation distance `T = √(dx² + dy²)`.
    pub fn translation_magnitude(&self) -> f64 {
        translation_magnitude(self)
    }

    pub fn to_affine(&self) -> AffineTransform {
        let (s, c) = self.theta.sin_cos();
        AffineTransform {
            a11: self.scale * c,
            a12: -self.scale * s,
            a21: self.scale * s,
            a22: self.scale * c,
            tx: self.dx,
            ty: self.dy,
        }
    }
}

pub fn apply_rigid(t: &RigidTransform, p: Point2D) -> Point2D {
    let (s, c) = t.theta.sin_cos();
    let sc = t.scale * c;
    let ss = t.scale * s;
    Point2D {
        x: sc * p.x - ss * p.y + t.dx,
        y: ss * p.x + sc * p.y + t.dy,
    }
}

pub fn translation_magnitude(t: &RigidTransform) -> f64 {
    t.dx.hypot(t.dy)
}

/// General planar affine map
/// `(x, y) ↦ (a11·x + a12·y + tx, a21·x + a22·y + ty)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineTransform {
    pub a11: f64,
    pub a12: f64,
    pub a21: f64,
    pub a22: f64,
    #[serde(rename = "tx_um")]
    pub tx: f64,
    #[serde(rename = "ty_um")]
    pub ty: f64,
}

impl Default for AffineTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl From<RigidTransform> for AffineTransform {
    fn from(t: RigidTransform) -> Self {
        t.to_affine()
    }
}

impl AffineTransform {
    pub const fn identity() -> Self {
        Self {
            a11: 1.0,
            a12: 0.0,
            a21: 0.0,
            a22: 1.0,
            tx: 0.0,
            ty: 0.0,
        }
    }

    pub const fn translation(tx: f64, ty: f64) -> Self {
        Self {
            a11: 1.0,
            a12: 0.0,
            a21: 0.0,
            a22: 1.0,
            tx,
            ty,
        }
    }

    pub fn determinant(&self) -> f64 {
        self.a11 * self.a22 - self.a12 * self.a21
    }

    pub fn is_invertible(&self) -> bool {
        self.determinant().abs() > SINGULAR_DET
    }

    pub fn is_finite(&self) -> bool {
        [self.a11, self.a12, self.a21, self.a22, self.tx, self.ty]
            .iter()
            .all(|v| v.is_finite())
    }

    pub fn apply(&self, p: Point2D) -> Point2D {
        Point2D {
            x: self.a11 * p.x + self.a12 * p.y + self.tx,
            y: self.a21 * p.x + self.a22 * p.y + self.ty,
        }
    }

    /// `outer ∘ self`, i.e. apply `self` first.
    pub fn then(&self, outer: &AffineTransform) -> AffineTransform {
        compose(outer, self)
    }

    pub fn inverse(&self) -> Result<AffineTransform> {
        invert(self)
    }

    /// Decomposes into rotation angle of the linear part's closest rotation
    /// and its translation. Used for reporting refined transforms in the
    /// same terms as rigid ones.
    pub fn rotation_angle(&self) -> f64 {
        (self.a21 - self.a12).atan2(self.a11 + self.a22)
    }

    pub fn translation_magnitude(&self) -> f64 {
        self.tx.hypot(self.ty)
    }
}

/// Returns the map `p ↦ outer(inner(p))`.
pub fn compose(outer: &AffineTransform, inner: &AffineTransform) -> AffineTransform {
    AffineTransform {
        a11: outer.a11 * inner.a11 + outer.a12 * inner.a21,
        a12: outer.a11 * inner.a12 + outer.a12 * inner.a22,
        a21: outer.a21 * inner.a11 + outer.a22 * inner.a21,
        a22: outer.a21 * inner.a12 + outer.a22 * inner.a22,
        tx: outer.a11 * inner.tx + outer.a12 * inner.ty + outer.tx,
        ty: outer.a21 * inner.tx + outer.a22 * inner.ty + outer.ty,
    }
}

pub fn invert(t: &AffineTransform) -> Result<AffineTransform> {
    let det = t.determinant();
    if !(det.abs() > SINGULAR_DET) {
        return Err(Error::SingularTransform { det });
    }
    let a11 = t.a22 / det;
    let a12 = -t.a12 / det;
    let a21 = -t.a21 / det;
    let a22 = t.a11 / det;
    Ok(AffineTransform {
        a11,
        a12,
        a21,
        a22,
        tx: -(a11 * t.tx + a12 * t.ty),
        ty: -(a21 * t.tx + a22 * t.ty),
    })
}

/// Scales pixel coordinates by the pixel size (μm/px).
pub fn px_to_um(p: Point2D, pixel_size: f64) -> Result<Point2D> {
    if !(pixel_size > 0.0 && pixel_size.is_finite()) {
        return Err(Error::InvalidPixelSize(pixel_size));
    }
    Ok(Point2D {
        x: p.x * pixel_size,
        y: p.y * pixel_size,
    })
}
