//! Axis-aligned box arithmetic and box-level coordinate transforms.
//!
//! Boxes use the corner convention `(x1, y1, x2, y2)` with continuous pixel
//! coordinates. Center-normalised formats are converted at ingestion.

use serde::{Deserialize, Serialize};

use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BBox<T = f64> {
    pub x1: T,
    pub y1: T,
    pub x2: T,
    pub y2: T,
}

impl<T: Scalar> BBox<T> {
    pub fn new(x1: T, y1: T, x2: T, y2: T) -> Self {
        Self { x1, y1, x2, y2 }
    }

    /// Builds a box from two arbitrary corners, restoring `x1 <= x2`, `y1 <= y2`.
    pub fn from_corners(xa: T, ya: T, xb: T, yb: T) -> Self {
        Self {
            x1: xa.min(xb),
            y1: ya.min(yb),
            x2: xa.max(xb),
            y2: ya.max(yb),
        }
    }

    /// YOLO-style `(cx, cy, w, h)` normalised to `[0, 1]`, scaled to an image.
    pub fn from_center_normalized(cx: T, cy: T, w: T, h: T, img_w: T, img_h: T) -> Self {
        let half = T::lit(0.5);
        Self::new(
            (cx - w * half) * img_w,
            (cy - h * half) * img_h,
            (cx + w * half) * img_w,
            (cy + h * half) * img_h,
        )
    }

    pub fn to_center_normalized(&self, img_w: T, img_h: T) -> (T, T, T, T) {
        let half = T::lit(0.5);
        (
            (self.x1 + self.x2) * half / img_w,
            (self.y1 + self.y2) * half / img_h,
            self.width() / img_w,
            self.height() / img_h,
        )
    }

    pub fn width(&self) -> T {
        (self.x2 - self.x1).max(T::zero())
    }

    pub fn height(&self) -> T {
        (self.y2 - self.y1).max(T::zero())
    }

    pub fn area(&self) -> T {
        self.width() * self.height()
    }

    pub fn is_valid(&self) -> bool {
        self.x1.is_finite()
            && self.y1.is_finite()
            && self.x2.is_finite()
            && self.y2.is_finite()
            && self.x1 <= self.x2
            && self.y1 <= self.y2
    }

    pub fn intersection(&self, other: &Self) -> T {
        let w = self.x2.min(other.x2) - self.x1.max(other.x1);
        let h = self.y2.min(other.y2) - self.y1.max(other.y1);
        if w <= T::zero() || h <= T::zero() {
            T::zero()
        } else {
            w * h
        }
    }

    pub fn iou(&self, other: &Self) -> T {
        iou(self, other)
    }

    pub fn translate(&self, dx: T, dy: T) -> Self {
        Self::new(self.x1 + dx, self.y1 + dy, self.x2 + dx, self.y2 + dy)
    }

    pub fn scale(&self, s: T) -> Self {
        Self::new(self.x1 * s, self.y1 * s, self.x2 * s, self.y2 * s)
    }

    pub fn map<U: Scalar>(&self, f: impl Fn(T) -> U) -> BBox<U> {
        BBox::new(f(self.x1), f(self.y1), f(self.x2), f(self.y2))
    }

    /// Largest absolute coordinate difference.
    pub fn max_abs_diff(&self, other: &Self) -> T {
        (self.x1 - other.x1)
            .abs()
            .max((self.y1 - other.y1).abs())
            .max((self.x2 - other.x2).abs())
            .max((self.y2 - other.y2).abs())
    }
}

/// Intersection over union; zero when the union is empty.
pub fn iou<T: Scalar>(a: &BBox<T>, b: &BBox<T>) -> T {
    let inter = a.intersection(b);
    let union = a.area() + b.area() - inter;
    if union <= T::zero() {
        return T::zero();
    }
    // Rounding can push the ratio a hair past one for near-identical boxes.
    (inter / union).min(T::one()).max(T::zero())
}

/// Intersects `b` with `[0, w] x [0, h]`; `None` when nothing with positive area remains.
pub fn clip_box<T: Scalar>(b: &BBox<T>, w: T, h: T) -> Option<BBox<T>> {
    let c = BBox::new(
        b.x1.max(T::zero()),
        b.y1.max(T::zero()),
        b.x2.min(w),
        b.y2.min(h),
    );
    if c.x2 > c.x1 && c.y2 > c.y1 {
        Some(c)
    } else {
        None
    }
}

/// Scale, then offset, then reflect inside the destination frame.
///
/// A point `x` maps to `scale_x * x + offset_x`, followed by
/// `frame_w - x'` when `flip_h` is set (likewise for `y`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineBoxTransform<T = f64> {
    pub scale_x: T,
    pub scale_y: T,
    pub offset_x: T,
    pub offset_y: T,
    pub flip_h: bool,
    pub flip_v: bool,
    pub frame_w: T,
    pub frame_h: T,
}

impl<T: Scalar> AffineBoxTransform<T> {
    pub fn identity(frame_w: T, frame_h: T) -> Self {
        Self {
            scale_x: T::one(),
            scale_y: T::one(),
            offset_x: T::zero(),
            offset_y: T::zero(),
            flip_h: false,
            flip_v: false,
            frame_w,
            frame_h,
        }
    }

    pub fn hflip(frame_w: T, frame_h: T) -> Self {
        Self {
            flip_h: true,
            ..Self::identity(frame_w, frame_h)
        }
    }

    pub fn vflip(frame_w: T, frame_h: T) -> Self {
        Self {
            flip_v: true,
            ..Self::identity(frame_w, frame_h)
        }
    }

    pub fn scale_offset(scale: T, offset_x: T, offset_y: T, frame_w: T, frame_h: T) -> Self {
        Self {
            scale_x: scale,
            scale_y: scale,
            offset_x,
            offset_y,
            ..Self::identity(frame_w, frame_h)
        }
    }

    pub fn is_identity(&self) -> bool {
        self.scale_x == T::one()
            && self.scale_y == T::one()
            && self.offset_x == T::zero()
            && self.offset_y == T::zero()
            && !self.flip_h
            && !self.flip_v
    }

    pub fn apply_x(&self, x: T) -> T {
        let v = self.scale_x * x + self.offset_x;
        if self.flip_h {
            self.frame_w - v
        } else {
            v
        }
    }

    pub fn apply_y(&self, y: T) -> T {
        let v = self.scale_y * y + self.offset_y;
        if self.flip_v {
            self.frame_h - v
        } else {
            v
        }
    }

    pub fn apply(&self, b: &BBox<T>) -> BBox<T> {
        apply_transform(b, self)
    }

    pub fn invert(&self) -> Self {
        invert_transform(self)
    }
}

pub fn apply_transform<T: Scalar>(b: &BBox<T>, t: &AffineBoxTransform<T>) -> BBox<T> {
    BBox::from_corners(t.apply_x(b.x1), t.apply_y(b.y1), t.apply_x(b.x2), t.apply_y(b.y2))
}

/// Inverse transform.
///
/// For `x' = F - (s x + o)` the inverse is `x = (F - o - x') / s`, which in
/// scale/offset/flip form is scale `1/s`, offset `-o/s` and frame
/// `(F - 2o)/s` with the same flip flags. The frame of an unflipped axis only
/// records the approximate source extent.
pub fn invert_transform<T: Scalar>(t: &AffineBoxTransform<T>) -> AffineBoxTransform<T> {
    let two = T::lit(2.0);
    AffineBoxTransform {
        scale_x: T::one() / t.scale_x,
        scale_y: T::one() / t.scale_y,
        offset_x: -t.offset_x / t.scale_x,
        offset_y: -t.offset_y / t.scale_y,
        flip_h: t.flip_h,
        flip_v: t.flip_v,
        frame_w: (t.frame_w - two * t.offset_x) / t.scale_x,
        frame_h: (t.frame_h - two * t.offset_y) / t.scale_y,
    }
}

/// Letterbox geometry: isotropic scale so the longer side equals `target`,
/// content centred in a `target x target` frame with offsets floored to
/// whole pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Letterbox<T = f64> {
    pub transform: AffineBoxTransform<T>,
    /// Resized content size in whole pixels.
    pub content_w: usize,
    pub content_h: usize,
    pub target: usize,
}

pub fn letterbox<T: Scalar>(src_w: usize, src_h: usize, target: usize) -> Letterbox<T> {
    assert!(src_w > 0 && src_h > 0 && target > 0, "letterbox dimensions must be positive");
    let longer = src_w.max(src_h);
    let scale = T::from_usize_lossy(target) / T::from_usize_lossy(longer);
    let content = |side: usize| -> usize {
        if side == longer {
            target
        } else {
            // Tolerate products such as 100 * 0.3 landing just below an integer.
            let exact = src_dim_scaled(side, target, longer);
            exact.min(target)
        }
    };
    let content_w = content(src_w);
    let content_h = content(src_h);
    let offset_x = T::from_usize_lossy((target - content_w) / 2);
    let offset_y = T::from_usize_lossy((target - content_h) / 2);
    let t = T::from_usize_lossy(target);
    Letterbox {
        transform: AffineBoxTransform::scale_offset(scale, offset_x, offset_y, t, t),
        content_w,
        content_h,
        target,
    }
}

/// `floor(side * target / longer)` in exact integer arithmetic.
fn src_dim_scaled(side: usize, target: usize, longer: usize) -> usize {
    (side as u128 * target as u128 / longer as u128) as usize
}

pub fn letterbox_transform<T: Scalar>(src_w: usize, src_h: usize, target: usize) -> AffineBoxTransform<T> {
    letterbox(src_w, src_h, target).transform
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn b(x1: f64, y1: f64, x2: f64, y2: f64) -> BBox {
        BBox::new(x1, y1, x2, y2)
    }

    #[test]
    fn iou_examples() {
        assert_eq!(iou(&b(0., 0., 10., 10.), &b(0., 0., 10., 10.)), 1.0);
        assert_eq!(iou(&b(0., 0., 10., 10.), &b(20., 20., 30., 30.)), 0.0);
        let v = iou(&b(0., 0., 10., 10.), &b(5., 0., 15., 10.));
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn iou_degenerate_is_zero() {
        assert_eq!(iou(&b(1., 1., 1., 1.), &b(1., 1., 1., 1.)), 0.0);
        assert_eq!(iou(&b(0., 0., 0., 5.), &b(0., 0., 3., 5.)), 0.0);
    }

    #[test]
    fn iou_generic_f32() {
        let a = BBox::<f32>::new(0., 0., 10., 10.);
        let c = BBox::<f32>::new(5., 0., 15., 10.);
        assert!((iou(&a, &c) - 1.0 / 3.0).abs() < 1e-6);
    }

    #[test]
    fn letterbox_examples() {
        let lb = letterbox::<f64>(2256, 1616, 960);
        assert!((lb.transform.scale_x - 960.0 / 2256.0).abs() < 1e-15);
        assert!((lb.transform.scale_x - 0.42553).abs() < 1e-5);
        assert_eq!((lb.content_w, lb.content_h), (960, 687));
        assert_eq!(lb.transform.offset_x, 0.0);
        assert_eq!(lb.transform.offset_y, 136.0);

        let id = letterbox::<f64>(960, 960, 960);
        assert!(id.transform.is_identity());

        let lb = letterbox::<f64>(100, 50, 200);
        assert_eq!(lb.transform.scale_x, 2.0);
        assert_eq!(lb.transform.scale_y, 2.0);
        assert_eq!((lb.content_w, lb.content_h), (200, 100));
        assert_eq!((lb.transform.offset_x, lb.transform.offset_y), (0.0, 50.0));
    }

    #[test]
    fn apply_examples() {
        let id = AffineBoxTransform::identity(100.0, 100.0);
        assert_eq!(apply_transform(&b(0., 0., 10., 10.), &id), b(0., 0., 10., 10.));
        let fh = AffineBoxTransform::hflip(100.0, 100.0);
        assert_eq!(apply_transform(&b(0., 0., 10., 10.), &fh), b(90., 0., 100., 10.));
        let so = AffineBoxTransform::scale_offset(2.0, 5.0, 5.0, 100.0, 100.0);
        assert_eq!(apply_transform(&b(10., 10., 20., 20.), &so), b(25., 25., 45., 45.));
    }

    #[test]
    fn invert_examples() {
        let id = AffineBoxTransform::identity(100.0, 100.0);
        assert!(invert_transform(&id).is_identity());
        let so = AffineBoxTransform::scale_offset(2.0, 5.0, 5.0, 100.0, 100.0);
        let inv = invert_transform(&so);
        assert_eq!((inv.scale_x, inv.scale_y), (0.5, 0.5));
        assert_eq!((inv.offset_x, inv.offset_y), (-2.5, -2.5));
        assert!(!inv.flip_h && !inv.flip_v);
        let fh = AffineBoxTransform::hflip(100.0, 80.0);
        assert_eq!(invert_transform(&fh), fh);
    }

    #[test]
    fn clip_examples() {
        assert_eq!(clip_box(&b(-5., -5., 5., 5.), 10., 10.), Some(b(0., 0., 5., 5.)));
        assert_eq!(clip_box(&b(2., 2., 8., 8.), 10., 10.), Some(b(2., 2., 8., 8.)));
        assert_eq!(clip_box(&b(20., 20., 30., 30.), 10., 10.), None);
        // touching edge has zero area
        assert_eq!(clip_box(&b(10., 0., 12., 5.), 10., 10.), None);
    }

    #[test]
    fn center_normalized_conversion() {
        let bb = BBox::from_center_normalized(0.5, 0.5, 0.5, 0.5, 100.0, 100.0);
        assert_eq!(bb, b(25., 25., 75., 75.));
        let (cx, cy, w, h) = bb.to_center_normalized(100.0, 100.0);
        assert_eq!((cx, cy, w, h), (0.5, 0.5, 0.5, 0.5));
    }

    fn arb_box() -> impl Strategy<Value = BBox> {
        (0.0..100.0f64, 0.0..100.0f64, 0.0..50.0f64, 0.0..50.0f64)
            .prop_map(|(x, y, w, h)| b(x, y, x + w, y + h))
    }

    proptest! {
        #[test]
        fn iou_symmetric_and_bounded(a in arb_box(), c in arb_box()) {
            let ab = iou(&a, &c);
            prop_assert_eq!(ab, iou(&c, &a));
            prop_assert!((0.0..=1.0).contains(&ab));
        }

        #[test]
        fn letterbox_is_isotropic(w in 1usize..4000, h in 1usize..4000, t in 1usize..2000) {
            let lb = letterbox::<f64>(w, h, t);
            prop_assert_eq!(lb.transform.scale_x, lb.transform.scale_y);
            prop_assert!(lb.content_w <= t && lb.content_h <= t);
            prop_assert!(lb.content_w == t || lb.content_h == t);
        }
    }
}
