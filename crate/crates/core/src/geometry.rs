//! Axis-aligned boxes and 2-D affine maps.
//!
//! Boxes are stored as `(x, y, w, h)` with the origin at the top-left corner
//! of the canvas and continuous (real-valued) pixel coordinates: pixel
//! `(i, j)` covers `[i, i + 1) x [j, j + 1)` and has its center at
//! `(i + 0.5, j + 0.5)`.

use crate::error::{Error, Result};

/// Axis-aligned rectangle in continuous pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    /// Builds a box, rejecting non-finite coordinates and non-positive extents.
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        let b = BBox { x, y, w, h };
        if b.is_valid() {
            Ok(b)
        } else {
            Err(Error::InvalidBox { x, y, w, h })
        }
    }

    /// Builds a box from its top-left and bottom-right corners.
    pub fn from_corners(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        Self::new(x1, y1, x2 - x1, y2 - y1)
    }

    pub fn is_valid(&self) -> bool {
        self.x.is_finite()
            && self.y.is_finite()
            && self.w.is_finite()
            && self.h.is_finite()
            && self.w > 0.0
            && self.h > 0.0
    }

    #[inline]
    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    #[inline]
    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    #[inline]
    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    /// The four corners in the order top-left, top-right, bottom-left, bottom-right.
    pub fn corners(&self) -> [(f64, f64); 4] {
        [
            (self.x, self.y),
            (self.right(), self.y),
            (self.x, self.bottom()),
            (self.right(), self.bottom()),
        ]
    }

    /// True when `other` lies inside `self` (boundaries included).
    pub fn contains(&self, other: &BBox) -> bool {
        other.x >= self.x
            && other.y >= self.y
            && other.right() <= self.right()
            && other.bottom() <= self.bottom()
    }
}

/// Intersection area of two boxes; zero when they are disjoint or only share
/// an edge or a corner.
pub fn intersection_area(a: &BBox, b: &BBox) -> f64 {
    let iw = a.right().min(b.right()) - a.x.max(b.x);
    let ih = a.bottom().min(b.bottom()) - a.y.max(b.y);
    if iw <= 0.0 || ih <= 0.0 {
        0.0
    } else {
        iw * ih
    }
}

/// Intersection over union of two valid boxes, in `[0, 1]`.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = intersection_area(a, b);
    if inter == 0.0 {
        return 0.0;
    }
    // Areas go through the same corner differences as the intersection so
    // that identical boxes give exactly 1.
    let area_a = (a.right() - a.x) * (a.bottom() - a.y);
    let area_b = (b.right() - b.x) * (b.bottom() - b.y);
    let union = area_a + area_b - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Intersection of `b` with the canvas `[0, width] x [0, height]`, or `None`
/// when nothing with positive area remains.
pub fn clip_box(b: &BBox, width: f64, height: f64) -> Option<BBox> {
    let (x, w) = clip_span(b.x, b.w, width)?;
    let (y, h) = clip_span(b.y, b.h, height)?;
    Some(BBox { x, y, w, h })
}

fn clip_span(start: f64, len: f64, limit: f64) -> Option<(f64, f64)> {
    let end = start + len;
    if start >= 0.0 && end <= limit {
        return Some((start, len));
    }
    let lo = start.max(0.0);
    let hi = end.min(limit);
    if hi > lo {
        Some((lo, hi - lo))
    } else {
        None
    }
}

/// 2x3 affine map `(px, py) -> (a*px + b*py + tx, c*px + d*py + ty)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineMap {
    pub a: f64,
    pub b: f64,
    pub tx: f64,
    pub c: f64,
    pub d: f64,
    pub ty: f64,
}

/// Determinants below this magnitude are treated as singular.
const SINGULAR_DET: f64 = 1e-12;

impl AffineMap {
    pub const IDENTITY: AffineMap = AffineMap {
        a: 1.0,
        b: 0.0,
        tx: 0.0,
        c: 0.0,
        d: 1.0,
        ty: 0.0,
    };

    /// Builds a map from its coefficients, rejecting singular linear parts.
    pub fn new(a: f64, b: f64, tx: f64, c: f64, d: f64, ty: f64) -> Result<Self> {
        let m = AffineMap { a, b, tx, c, d, ty };
        m.check_invertible()?;
        Ok(m)
    }

    pub fn translation(tx: f64, ty: f64) -> Self {
        AffineMap {
            tx,
            ty,
            ..Self::IDENTITY
        }
    }

    /// Rotation by `angle_deg` about the origin. In the y-down image frame a
    /// positive angle turns clockwise on screen: `(1, 0)` goes to `(0, 1)`.
    ///
    /// Exact multiples of 90 degrees produce exact 0/±1 coefficients.
    pub fn rotation(angle_deg: f64) -> Self {
        let (sin, cos) =
            quarter_turn_sin_cos(angle_deg).unwrap_or_else(|| angle_deg.to_radians().sin_cos());
        AffineMap {
            a: cos,
            b: -sin,
            tx: 0.0,
            c: sin,
            d: cos,
            ty: 0.0,
        }
    }

    /// Shear `(px, py) -> (px + shear_x*py, shear_y*px + py)`.
    pub fn shear(shear_x: f64, shear_y: f64) -> Self {
        AffineMap {
            a: 1.0,
            b: shear_x,
            tx: 0.0,
            c: shear_y,
            d: 1.0,
            ty: 0.0,
        }
    }

    #[inline]
    pub fn determinant(&self) -> f64 {
        self.a * self.d - self.b * self.c
    }

    pub fn check_invertible(&self) -> Result<()> {
        let det = self.determinant();
        if det.is_finite() && det.abs() > SINGULAR_DET {
            Ok(())
        } else {
            Err(Error::NonInvertible { det })
        }
    }

    #[inline]
    pub fn apply(&self, px: f64, py: f64) -> (f64, f64) {
        (
            self.a * px + self.b * py + self.tx,
            self.c * px + self.d * py + self.ty,
        )
    }

    /// `self ∘ first`: applies `first`, then `self`.
    pub fn after(&self, first: &AffineMap) -> AffineMap {
        AffineMap {
            a: self.a * first.a + self.b * first.c,
            b: self.a * first.b + self.b * first.d,
            tx: self.a * first.tx + self.b * first.ty + self.tx,
            c: self.c * first.a + self.d * first.c,
            d: self.c * first.b + self.d * first.d,
            ty: self.c * first.tx + self.d * first.ty + self.ty,
        }
    }

    pub fn inverse(&self) -> Result<AffineMap> {
        self.check_invertible()?;
        let det = self.determinant();
        let a = self.d / det;
        let b = -self.b / det;
        let c = -self.c / det;
        let d = self.a / det;
        Ok(AffineMap {
            a,
            b,
            tx: -(a * self.tx + b * self.ty),
            c,
            d,
            ty: -(c * self.tx + d * self.ty),
        })
    }
}

impl Default for AffineMap {
    fn default() -> Self {
        Self::IDENTITY
    }
}

fn quarter_turn_sin_cos(angle_deg: f64) -> Option<(f64, f64)> {
    if angle_deg.fract() != 0.0 || angle_deg.abs() > 1e15 {
        return None;
    }
    let deg = angle_deg as i64;
    if deg % 90 != 0 {
        return None;
    }
    Some(match deg.rem_euclid(360) {
        0 => (0.0, 1.0),
        90 => (1.0, 0.0),
        180 => (0.0, -1.0),
        _ => (-1.0, 0.0),
    })
}

/// Tightest axis-aligned box around the images of the four corners of `b`.
///
/// The map is applied to the top-left corner and to the edge vectors
/// separately, so the identity map returns `b` bit for bit.
pub fn transform_box(m: &AffineMap, b: &BBox) -> BBox {
    let (ox, oy) = m.apply(b.x, b.y);
    let (ex_x, ex_y) = (m.a * b.w, m.c * b.w);
    let (ey_x, ey_y) = (m.b * b.h, m.d * b.h);
    let xs = [0.0, ex_x, ey_x, ex_x + ey_x];
    let ys = [0.0, ex_y, ey_y, ex_y + ey_y];
    let (min_x, max_x) = min_max(&xs);
    let (min_y, max_y) = min_max(&ys);
    BBox {
        x: ox + min_x,
        y: oy + min_y,
        w: max_x - min_x,
        h: max_y - min_y,
    }
}

fn min_max(v: &[f64; 4]) -> (f64, f64) {
    v.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
            (lo.min(x), hi.max(x))
        })
}
