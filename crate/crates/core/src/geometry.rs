//! Axis-aligned box arithmetic shared by the matching costs, the losses and
//! the evaluation criterion.
//!
//! Boxes are stored in corner form in image coordinates. The L1 regression
//! cost works on the normalized center form; [`BBox::to_center`] and
//! [`CenterBox::to_corner`] convert between the two. Boxes are never clamped
//! to the image frame.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("invalid box [{0}, {1}, {2}, {3}]: need finite coordinates with min <= max")]
    InvalidBox(f64, f64, f64, f64),
    #[error("invalid center box ({0}, {1}, {2}, {3}): need finite values and w, h >= 0")]
    InvalidCenterBox(f64, f64, f64, f64),
    #[error("image dimensions must be positive, got {0}x{1}")]
    ImageSize(f64, f64),
    #[error("generalized IoU is undefined for two degenerate boxes")]
    DegenerateGiou,
}

/// Corner-form rectangle `[x_min, y_min, x_max, y_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    x_min: f64,
    y_min: f64,
    x_max: f64,
    y_max: f64,
}

impl BBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self, GeometryError> {
        let finite = [x_min, y_min, x_max, y_max].iter().all(|v| v.is_finite());
        if !finite || x_min > x_max || y_min > y_max {
            return Err(GeometryError::InvalidBox(x_min, y_min, x_max, y_max));
        }
        Ok(Self { x_min, y_min, x_max, y_max })
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }
    pub fn y_min(&self) -> f64 {
        self.y_min
    }
    pub fn x_max(&self) -> f64 {
        self.x_max
    }
    pub fn y_max(&self) -> f64 {
        self.y_max
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn is_degenerate(&self) -> bool {
        self.area() <= 0.0
    }

    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let w = (self.x_max.min(other.x_max) - self.x_min.max(other.x_min)).max(0.0);
        let h = (self.y_max.min(other.y_max) - self.y_min.max(other.y_min)).max(0.0);
        w * h
    }

    /// Smallest box containing both `self` and `other`.
    pub fn enclosing(&self, other: &BBox) -> BBox {
        BBox {
            x_min: self.x_min.min(other.x_min),
            y_min: self.y_min.min(other.y_min),
            x_max: self.x_max.max(other.x_max),
            y_max: self.y_max.max(other.y_max),
        }
    }

    pub fn contains(&self, other: &BBox) -> bool {
        self.x_min <= other.x_min && self.y_min <= other.y_min && self.x_max >= other.x_max && self.y_max >= other.y_max
    }

    /// Same box shifted by `(dx, dy)`.
    pub fn translated(&self, dx: f64, dy: f64) -> BBox {
        BBox { x_min: self.x_min + dx, y_min: self.y_min + dy, x_max: self.x_max + dx, y_max: self.y_max + dy }
    }

    /// Normalized center form relative to an `image_w` x `image_h` frame.
    pub fn to_center(&self, image_w: f64, image_h: f64) -> Result<CenterBox, GeometryError> {
        check_image(image_w, image_h)?;
        Ok(CenterBox {
            cx: (self.x_min + self.x_max) / 2.0 / image_w,
            cy: (self.y_min + self.y_max) / 2.0 / image_h,
            w: self.width() / image_w,
            h: self.height() / image_h,
        })
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.x_min, self.y_min, self.x_max, self.y_max]
    }
}

impl TryFrom<[f64; 4]> for BBox {
    type Error = GeometryError;

    fn try_from(v: [f64; 4]) -> Result<Self, Self::Error> {
        BBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        b.to_array()
    }
}

fn check_image(image_w: f64, image_h: f64) -> Result<(), GeometryError> {
    if image_w > 0.0 && image_h > 0.0 && image_w.is_finite() && image_h.is_finite() {
        Ok(())
    } else {
        Err(GeometryError::ImageSize(image_w, image_h))
    }
}

/// Center-form box `(cx, cy, w, h)`, normalized by the image size.
///
/// Construction only checks finiteness and non-negative extent; centers
/// outside `[0, 1]` are allowed because boxes are not clamped.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CenterBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl CenterBox {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self, GeometryError> {
        let finite = [cx, cy, w, h].iter().all(|v| v.is_finite());
        if !finite || w < 0.0 || h < 0.0 {
            return Err(GeometryError::InvalidCenterBox(cx, cy, w, h));
        }
        Ok(Self { cx, cy, w, h })
    }

    pub fn to_corner(&self, image_w: f64, image_h: f64) -> Result<BBox, GeometryError> {
        check_image(image_w, image_h)?;
        BBox::new(
            (self.cx - self.w / 2.0) * image_w,
            (self.cy - self.h / 2.0) * image_h,
            (self.cx + self.w / 2.0) * image_w,
            (self.cy + self.h / 2.0) * image_h,
        )
    }
}

/// A human box paired with an object box and the object's category.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxPair {
    pub human: BBox,
    pub object: BBox,
    pub object_category: usize,
}

impl BoxPair {
    pub fn new(human: BBox, object: BBox, object_category: usize) -> Self {
        Self { human, object, object_category }
    }

    /// `(human IoU, object IoU)` against another pair; categories are ignored.
    pub fn ious(&self, other: &BoxPair) -> (f64, f64) {
        (iou(&self.human, &other.human), iou(&self.object, &other.object))
    }

    /// Both member IoUs strictly above `thresh`.
    pub fn overlaps(&self, other: &BoxPair, thresh: f64) -> bool {
        let (h, o) = self.ious(other);
        h > thresh && o > thresh
    }
}

/// Intersection over union. Two boxes with zero union area give 0.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Generalized IoU: `iou - (enclosing - union) / enclosing`.
pub fn giou(a: &BBox, b: &BBox) -> Result<f64, GeometryError> {
    if a.is_degenerate() && b.is_degenerate() {
        return Err(GeometryError::DegenerateGiou);
    }
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    let enclosing = a.enclosing(b).area();
    let iou = inter / union;
    Ok((iou - (enclosing - union) / enclosing).clamp(-1.0, 1.0))
}

/// Union region of a human-object pair.
pub fn union_box(pair: &BoxPair) -> BBox {
    pair.human.enclosing(&pair.object)
}

/// Sum of absolute coordinate differences in normalized center form.
pub fn l1_box_cost(pred: &CenterBox, gt: &CenterBox) -> f64 {
    (pred.cx - gt.cx).abs() + (pred.cy - gt.cy).abs() + (pred.w - gt.w).abs() + (pred.h - gt.h).abs()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn b(x0: f64, y0: f64, x1: f64, y1: f64) -> BBox {
        BBox::new(x0, y0, x1, y1).unwrap()
    }

    /// Counts grid cells whose centers fall inside each box.
    fn raster_iou(a: &BBox, c: &BBox, lo: f64, hi: f64, side: usize) -> f64 {
        let step = (hi - lo) / side as f64;
        let inside = |r: &BBox, x: f64, y: f64| x >= r.x_min && x < r.x_max && y >= r.y_min && y < r.y_max;
        let (mut inter, mut uni) = (0usize, 0usize);
        for i in 0..side {
            for j in 0..side {
                let x = lo + (i as f64 + 0.5) * step;
                let y = lo + (j as f64 + 0.5) * step;
                let (ia, ic) = (inside(a, x, y), inside(c, x, y));
                inter += (ia && ic) as usize;
                uni += (ia || ic) as usize;
            }
        }
        if uni == 0 {
            0.0
        } else {
            inter as f64 / uni as f64
        }
    }

    #[test]
    fn iou_examples() {
        assert_eq!(iou(&b(0., 0., 1., 1.), &b(0., 0., 1., 1.)), 1.0);
        assert_eq!(iou(&b(0., 0., 1., 1.), &b(2., 0., 3., 1.)), 0.0);
        let oracle = raster_iou(&b(0., 0., 2., 2.), &b(1., 0., 3., 2.), 0.0, 3.0, 600);
        assert_abs_diff_eq!(oracle, 1.0 / 3.0, epsilon = 1e-3);
        assert_abs_diff_eq!(iou(&b(0., 0., 2., 2.), &b(1., 0., 3., 2.)), 1.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn iou_of_degenerate_boxes_is_zero() {
        assert_eq!(iou(&b(1., 1., 1., 1.), &b(1., 1., 1., 1.)), 0.0);
        assert_eq!(iou(&b(0., 0., 0., 5.), &b(0., 0., 3., 3.)), 0.0);
    }

    #[test]
    fn giou_examples() {
        assert_eq!(giou(&b(0., 0., 1., 1.), &b(0., 0., 1., 1.)).unwrap(), 1.0);
        assert_eq!(giou(&b(0., 0., 1., 1.), &b(1., 0., 2., 1.)).unwrap(), 0.0);
        assert_abs_diff_eq!(giou(&b(0., 0., 1., 1.), &b(9., 0., 10., 1.)).unwrap(), -0.8, epsilon = 1e-12);
        assert_eq!(giou(&b(1., 1., 1., 1.), &b(2., 2., 2., 3.)), Err(GeometryError::DegenerateGiou));
    }

    #[test]
    fn union_box_examples() {
        let p = |h: BBox, o: BBox| union_box(&BoxPair::new(h, o, 0));
        assert_eq!(p(b(0., 0., 1., 1.), b(0., 0., 1., 1.)), b(0., 0., 1., 1.));
        assert_eq!(p(b(0., 0., 4., 4.), b(1., 1., 2., 2.)), b(0., 0., 4., 4.));
        assert_eq!(p(b(0., 0., 1., 1.), b(3., 2., 5., 4.)), b(0., 0., 5., 4.));
    }

    #[test]
    fn l1_examples() {
        let c = |a, b2, w, h| CenterBox::new(a, b2, w, h).unwrap();
        assert_eq!(l1_box_cost(&c(0.3, 0.3, 0.1, 0.1), &c(0.3, 0.3, 0.1, 0.1)), 0.0);
        assert_abs_diff_eq!(l1_box_cost(&c(0.5, 0.5, 0.2, 0.2), &c(0.5, 0.5, 0.4, 0.2)), 0.2, epsilon = 1e-12);
        assert_abs_diff_eq!(l1_box_cost(&c(0.1, 0.2, 0.3, 0.4), &c(0.2, 0.4, 0.1, 0.1)), 0.8, epsilon = 1e-12);
    }

    #[test]
    fn center_form_examples() {
        let c = b(0., 0., 10., 10.).to_center(10., 10.).unwrap();
        assert_eq!(c, CenterBox { cx: 0.5, cy: 0.5, w: 1.0, h: 1.0 });
        let c = b(2., 2., 4., 6.).to_center(10., 10.).unwrap();
        assert_abs_diff_eq!(c.cx, 0.3, epsilon = 1e-12);
        assert_abs_diff_eq!(c.cy, 0.4, epsilon = 1e-12);
        assert_abs_diff_eq!(c.w, 0.2, epsilon = 1e-12);
        assert_abs_diff_eq!(c.h, 0.4, epsilon = 1e-12);
        assert!(matches!(b(0., 0., 1., 1.).to_center(0., 10.), Err(GeometryError::ImageSize(..))));
        assert!(c.to_corner(10., -1.).is_err());
    }

    #[test]
    fn rejects_inverted_boxes() {
        assert!(BBox::new(1., 0., 0., 1.).is_err());
        assert!(BBox::new(0., 0., f64::NAN, 1.).is_err());
        assert!(serde_json::from_str::<BBox>("[0, 2, 1, 1]").is_err());
        assert!(CenterBox::new(0.5, 0.5, -0.1, 0.2).is_err());
    }

    #[test]
    fn giou_tends_to_minus_one_along_translation() {
        let a = b(0., 0., 1., 1.);
        let mut prev = giou(&a, &a).unwrap();
        for step in 1..200 {
            let g = giou(&a, &a.translated(step as f64 * 0.5, 0.25 * step as f64)).unwrap();
            assert!(g <= prev + 1e-15, "giou increased at step {step}");
            prev = g;
        }
        assert!(prev < -0.99);
    }

    fn arb_box() -> impl Strategy<Value = BBox> {
        (0.0..10.0f64, 0.0..10.0f64, 0.0..5.0f64, 0.0..5.0f64)
            .prop_map(|(x, y, w, h)| BBox::new(x, y, x + w, y + h).unwrap())
    }

    fn arb_solid_box() -> impl Strategy<Value = BBox> {
        (0.0..10.0f64, 0.0..10.0f64, 0.2..5.0f64, 0.2..5.0f64)
            .prop_map(|(x, y, w, h)| BBox::new(x, y, x + w, y + h).unwrap())
    }

    proptest! {
        #[test]
        fn iou_and_giou_are_symmetric_and_ordered(a in arb_solid_box(), c in arb_box()) {
            let (i, g) = (iou(&a, &c), giou(&a, &c).unwrap());
            prop_assert_eq!(i, iou(&c, &a));
            prop_assert!((g - giou(&c, &a).unwrap()).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&i));
            prop_assert!((-1.0..=1.0).contains(&g));
            prop_assert!(g <= i + 1e-12);
        }

        #[test]
        fn giou_equals_iou_when_union_fills_enclosing(x in 0.0..5.0f64, w in 0.5..3.0f64, w2 in 0.5..3.0f64) {
            // two boxes sharing the same vertical extent and overlapping horizontally
            let a = BBox::new(x, 0.0, x + w, 2.0).unwrap();
            let c = BBox::new(x + w * 0.5, 0.0, x + w * 0.5 + w2, 2.0).unwrap();
            prop_assert!((giou(&a, &c).unwrap() - iou(&a, &c)).abs() < 1e-12);
        }

        #[test]
        fn union_box_is_minimal_container(h in arb_box(), o in arb_box()) {
            let u = union_box(&BoxPair::new(h, o, 0));
            prop_assert!(u.contains(&h) && u.contains(&o));
            prop_assert_eq!(u.x_min(), h.x_min().min(o.x_min()));
            prop_assert_eq!(u.y_min(), h.y_min().min(o.y_min()));
            prop_assert_eq!(u.x_max(), h.x_max().max(o.x_max()));
            prop_assert_eq!(u.y_max(), h.y_max().max(o.y_max()));
        }

        #[test]
        fn center_form_round_trip(bx in arb_box(), iw in 1.0..2000.0f64, ih in 1.0..2000.0f64) {
            let back = bx.to_center(iw, ih).unwrap().to_corner(iw, ih).unwrap();
            for (p, q) in bx.to_array().iter().zip(back.to_array()) {
                prop_assert!((p - q).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn raster_oracle_agrees_with_closed_form() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let side = 400;
        for _ in 0..40 {
            let mut rb = || {
                let (x, y) = (rng.random_range(0.0..6.0), rng.random_range(0.0..6.0));
                let (w, h) = (rng.random_range(0.5..4.0), rng.random_range(0.5..4.0));
                b(x, y, x + w, y + h)
            };
            let (a, c) = (rb(), rb());
            let oracle = raster_iou(&a, &c, 0.0, 10.0, side);
            assert!((oracle - iou(&a, &c)).abs() <= 2.0 / side as f64, "{a:?} {c:?}");
        }
    }
}
