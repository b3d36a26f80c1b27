//! Box-aware augmentation: letterboxing, mosaic and mixup.
//!
//! Only the pseudo-labelled stream is mosaicked and mixed; labelled images
//! are letterboxed and nothing else.

use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{clip_box, letterbox, BBox};
use crate::image::{Image, PAD_VALUE};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabeledBox {
    pub bbox: BBox<f64>,
    pub class_id: usize,
    /// Loss weight in `(0, 1]`; human labels carry 1.
    pub weight: f64,
}

impl LabeledBox {
    pub fn new(bbox: BBox<f64>, class_id: usize, weight: f64) -> Self {
        Self {
            bbox,
            class_id,
            weight,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub image: Image,
    pub boxes: Vec<LabeledBox>,
    pub domain: String,
    pub labeled: bool,
}

impl Sample {
    pub fn width(&self) -> usize {
        self.image.width
    }

    pub fn height(&self) -> usize {
        self.image.height
    }

    pub fn total_weight(&self) -> f64 {
        self.boxes.iter().map(|b| b.weight).sum()
    }

    pub fn boxes_in_bounds(&self) -> bool {
        let (w, h) = (self.width() as f64, self.height() as f64);
        self.boxes
            .iter()
            .all(|b| b.bbox.is_valid() && b.bbox.x1 >= 0.0 && b.bbox.y1 >= 0.0 && b.bbox.x2 <= w && b.bbox.y2 <= h)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AugmentError {
    #[error("mosaic input {index} is {width}x{height}, expected {target}x{target}")]
    MosaicSize {
        index: usize,
        width: usize,
        height: usize,
        target: usize,
    },
    #[error("mixup inputs differ in shape: {a:?} vs {b:?}")]
    MixupShape {
        a: (usize, usize, usize),
        b: (usize, usize, usize),
    },
    #[error("invalid beta parameters ({0}, {1})")]
    Beta(f64, f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub p_mosaic: f64,
    pub p_mixup: f64,
    pub mixup_alpha: f64,
    pub mixup_beta: f64,
    /// Boxes keeping less than this fraction of their area after a mosaic clip are dropped.
    pub mosaic_min_area_frac: f64,
    /// Boxes smaller than this many output pixels after a mosaic are dropped.
    pub mosaic_min_area_px: f64,
    pub mixup_min_weight: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            p_mosaic: 0.5,
            p_mixup: 0.5,
            mixup_alpha: 8.0,
            mixup_beta: 8.0,
            mosaic_min_area_frac: 0.1,
            mosaic_min_area_px: 4.0,
            mixup_min_weight: 0.05,
        }
    }
}

/// Resizes (bilinear) and pads a sample into a `target x target` frame.
pub fn letterbox_sample(s: &Sample, target: usize) -> Sample {
    if s.width() == target && s.height() == target {
        return s.clone();
    }
    let lb = letterbox::<f64>(s.width(), s.height(), target);
    let content = s.image.resize_bilinear(lb.content_w, lb.content_h);
    let mut canvas = Image::filled(target, target, s.image.channels, PAD_VALUE);
    let (ox, oy) = (lb.transform.offset_x as i64, lb.transform.offset_y as i64);
    canvas.blit(&content, ox, oy, (0, 0, target as i64, target as i64));
    let t = target as f64;
    let boxes = s
        .boxes
        .iter()
        .filter_map(|b| {
            clip_box(&lb.transform.apply(&b.bbox), t, t).map(|bb| LabeledBox { bbox: bb, ..*b })
        })
        .collect();
    Sample {
        id: s.id.clone(),
        image: canvas,
        boxes,
        domain: s.domain.clone(),
        labeled: s.labeled,
    }
}

/// Mosaic with a random centre drawn uniformly (whole pixels) from the
/// middle half of the `2 * target` canvas.
pub fn mosaic<R: Rng + ?Sized>(
    four: [&Sample; 4],
    target: usize,
    cfg: &AugmentConfig,
    rng: &mut R,
) -> Result<Sample, AugmentError> {
    let lo = target.div_ceil(2);
    let hi = (3 * target) / 2;
    let cx = rng.random_range(lo..=hi);
    let cy = rng.random_range(lo..=hi);
    mosaic_at(four, target, (cx, cy), cfg)
}

/// Mosaic around a fixed canvas centre.
///
/// Sample `k` fills quadrant `k` (top-left, top-right, bottom-left,
/// bottom-right) with the corner of the image touching the centre. The
/// `2 * target` canvas is then halved back to `target x target`.
pub fn mosaic_at(
    four: [&Sample; 4],
    target: usize,
    center: (usize, usize),
    cfg: &AugmentConfig,
) -> Result<Sample, AugmentError> {
    for (index, s) in four.iter().enumerate() {
        if s.width() != target || s.height() != target {
            return Err(AugmentError::MosaicSize {
                index,
                width: s.width(),
                height: s.height(),
                target,
            });
        }
    }
    let channels = four[0].image.channels;
    let side = 2 * target as i64;
    let t = target as i64;
    let (cx, cy) = (center.0 as i64, center.1 as i64);
    let mut canvas = Image::filled(2 * target, 2 * target, channels, PAD_VALUE);
    let mut boxes = Vec::new();
    for (k, s) in four.iter().enumerate() {
        let (dx, dy, region) = match k {
            0 => (cx - t, cy - t, (0, 0, cx, cy)),
            1 => (cx, cy - t, (cx, 0, side, cy)),
            2 => (cx - t, cy, (0, cy, cx, side)),
            _ => (cx, cy, (cx, cy, side, side)),
        };
        canvas.blit(&s.image, dx, dy, region);
        let (rx0, ry0, rx1, ry1) = (region.0 as f64, region.1 as f64, region.2 as f64, region.3 as f64);
        for b in &s.boxes {
            let moved = b.bbox.translate(dx as f64, dy as f64);
            let shifted = moved.translate(-rx0, -ry0);
            let Some(clipped) = clip_box(&shifted, rx1 - rx0, ry1 - ry0) else {
                continue;
            };
            let clipped = clipped.translate(rx0, ry0);
            let area = clipped.area();
            let out = clipped.scale(0.5);
            if area < cfg.mosaic_min_area_frac * b.bbox.area() || out.area() < cfg.mosaic_min_area_px {
                continue;
            }
            boxes.push(LabeledBox { bbox: out, ..*b });
        }
    }
    Ok(Sample {
        id: format!("mosaic[{}|{}|{}|{}]", four[0].id, four[1].id, four[2].id, four[3].id),
        image: canvas.downscale2(),
        boxes,
        domain: four[0].domain.clone(),
        labeled: false,
    })
}

pub fn mixup<R: Rng + ?Sized>(
    a: &Sample,
    b: &Sample,
    cfg: &AugmentConfig,
    rng: &mut R,
) -> Result<Sample, AugmentError> {
    let beta = Beta::new(cfg.mixup_alpha, cfg.mixup_beta)
        .map_err(|_| AugmentError::Beta(cfg.mixup_alpha, cfg.mixup_beta))?;
    let lambda = beta.sample(rng);
    mixup_with_lambda(a, b, lambda, cfg.mixup_min_weight)
}

/// `lambda * a + (1 - lambda) * b`; box weights scaled by their image's share
/// and floored at `min_weight`.
pub fn mixup_with_lambda(a: &Sample, b: &Sample, lambda: f64, min_weight: f64) -> Result<Sample, AugmentError> {
    if !a.image.same_shape(&b.image) {
        let shape = |s: &Sample| (s.image.width, s.image.height, s.image.channels);
        return Err(AugmentError::MixupShape { a: shape(a), b: shape(b) });
    }
    let data = a
        .image
        .data
        .iter()
        .zip(&b.image.data)
        .map(|(&pa, &pb)| lambda * pa + (1.0 - lambda) * pb)
        .collect();
    let scaled = |s: &Sample, f: f64| {
        s.boxes
            .iter()
            .map(move |bx| LabeledBox {
                weight: (bx.weight * f).max(min_weight),
                ..*bx
            })
            .collect::<Vec<_>>()
    };
    let mut boxes = scaled(a, lambda);
    boxes.extend(scaled(b, 1.0 - lambda));
    Ok(Sample {
        id: format!("mixup[{}|{}]", a.id, b.id),
        image: Image {
            data,
            ..a.image.clone()
        },
        boxes,
        domain: a.domain.clone(),
        labeled: false,
    })
}

/// Mosaic with probability `p_mosaic`, then mixup with probability `p_mixup`
/// against a second mosaic; one output per input sample.
pub fn augment_pseudo_stream<R: Rng + ?Sized>(
    samples: &[Sample],
    target: usize,
    cfg: &AugmentConfig,
    rng: &mut R,
) -> Result<Vec<Sample>, AugmentError> {
    let n = samples.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    let pick = |rng: &mut R| &samples[rng.random_range(0..n)];
    let mut out = Vec::with_capacity(n);
    for s in samples {
        let base = if rng.random_bool(cfg.p_mosaic.clamp(0.0, 1.0)) {
            let four = [s, pick(rng), pick(rng), pick(rng)];
            mosaic(four, target, cfg, rng)?
        } else {
            s.clone()
        };
        let mixed = if rng.random_bool(cfg.p_mixup.clamp(0.0, 1.0)) {
            let four = [pick(rng), pick(rng), pick(rng), pick(rng)];
            let partner = mosaic(four, target, cfg, rng)?;
            mixup(&base, &partner, cfg, rng)?
        } else {
            base
        };
        out.push(mixed);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn sample(w: usize, h: usize, boxes: Vec<LabeledBox>) -> Sample {
        let data = (0..w * h * 3).map(|i| (i % 7) as f64 / 7.0).collect();
        Sample {
            id: "s".into(),
            image: Image::from_data(w, h, 3, data).unwrap(),
            boxes,
            domain: "basic".into(),
            labeled: true,
        }
    }

    fn lbox(x1: f64, y1: f64, x2: f64, y2: f64) -> LabeledBox {
        LabeledBox::new(BBox::new(x1, y1, x2, y2), 0, 1.0)
    }

    #[test]
    fn letterbox_square_at_target_is_unchanged() {
        let s = sample(16, 16, vec![lbox(1., 1., 5., 5.)]);
        assert_eq!(letterbox_sample(&s, 16), s);
    }

    #[test]
    fn letterbox_wide_image() {
        let s = sample(200, 100, vec![lbox(0., 0., 200., 100.)]);
        let out = letterbox_sample(&s, 100);
        assert_eq!((out.width(), out.height()), (100, 100));
        assert_eq!(out.boxes[0].bbox, BBox::new(0., 25., 100., 75.));
        for x in 0..100 {
            for y in (0..25).chain(75..100) {
                assert_eq!(out.image.get(x, y, 0), PAD_VALUE);
            }
        }
    }

    #[test]
    fn mosaic_fixed_center_replicates_central_box() {
        let s = sample(20, 20, vec![lbox(6., 6., 14., 14.)]);
        let out = mosaic_at([&s, &s, &s, &s], 20, (20, 20), &AugmentConfig::default()).unwrap();
        assert_eq!((out.width(), out.height()), (20, 20));
        let got: Vec<BBox> = out.boxes.iter().map(|b| b.bbox).collect();
        assert_eq!(
            got,
            vec![
                BBox::new(3., 3., 7., 7.),
                BBox::new(13., 3., 17., 7.),
                BBox::new(3., 13., 7., 17.),
                BBox::new(13., 13., 17., 17.),
            ]
        );
        assert!(out.boxes_in_bounds());
    }

    #[test]
    fn mosaic_without_boxes() {
        let s = sample(10, 10, vec![]);
        let mut rng = stream(1, &[]);
        let out = mosaic([&s, &s, &s, &s], 10, &AugmentConfig::default(), &mut rng).unwrap();
        assert!(out.boxes.is_empty());
    }

    #[test]
    fn mosaic_drops_boxes_outside_their_quadrant() {
        // Centre at (10, 10) on a 2*20 canvas: only the bottom-right copy keeps
        // its top-left corner on the canvas.
        let s = sample(20, 20, vec![lbox(0., 0., 6., 6.)]);
        let out = mosaic_at([&s, &s, &s, &s], 20, (10, 10), &AugmentConfig::default()).unwrap();
        assert_eq!(out.boxes.len(), 1);
        assert_eq!(out.boxes[0].bbox, BBox::new(5., 5., 8., 8.));
        assert!(out.boxes_in_bounds());
    }

    #[test]
    fn mosaic_rejects_wrong_size() {
        let s = sample(20, 20, vec![]);
        let t = sample(10, 20, vec![]);
        let err = mosaic_at([&s, &t, &s, &s], 20, (20, 20), &AugmentConfig::default()).unwrap_err();
        assert!(matches!(err, AugmentError::MosaicSize { index: 1, .. }));
    }

    #[test]
    fn mixup_degenerate_lambda() {
        let a = sample(8, 8, vec![lbox(0., 0., 2., 2.)]);
        let mut b = sample(8, 8, vec![lbox(4., 4., 6., 6.)]);
        b.image.data.iter_mut().for_each(|v| *v = 1.0 - *v);
        let out = mixup_with_lambda(&a, &b, 1.0, 0.05).unwrap();
        assert_eq!(out.image.data, a.image.data);
        assert_eq!(out.boxes[0].weight, 1.0);
        assert_eq!(out.boxes[1].weight, 0.05);
    }

    #[test]
    fn mixup_half_and_half() {
        let a = sample(8, 8, vec![lbox(0., 0., 2., 2.)]);
        let b = sample(8, 8, vec![lbox(4., 4., 6., 6.)]);
        let out = mixup_with_lambda(&a, &b, 0.5, 0.05).unwrap();
        assert_eq!(out.boxes.len(), 2);
        assert!(out.boxes.iter().all(|b| b.weight == 0.5));

        let same = mixup_with_lambda(&a, &a, 0.5, 0.05).unwrap();
        assert_eq!(same.image.data, a.image.data);
        assert_eq!(same.boxes.len(), 2);
        assert_eq!(same.boxes[0].bbox, same.boxes[1].bbox);
    }

    #[test]
    fn mixup_shape_mismatch() {
        let a = sample(8, 8, vec![]);
        let b = sample(8, 4, vec![]);
        assert!(matches!(
            mixup_with_lambda(&a, &b, 0.5, 0.05),
            Err(AugmentError::MixupShape { .. })
        ));
    }

    #[test]
    fn pseudo_stream_is_deterministic() {
        let samples: Vec<Sample> = (0..5)
            .map(|i| sample(12, 12, vec![lbox(i as f64, 1., i as f64 + 5., 6.)]))
            .collect();
        let cfg = AugmentConfig::default();
        let a = augment_pseudo_stream(&samples, 12, &cfg, &mut stream(3, &[])).unwrap();
        let b = augment_pseudo_stream(&samples, 12, &cfg, &mut stream(3, &[])).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 5);
        assert!(a.iter().all(|s| s.boxes_in_bounds()));
    }
}
