//! Detection post-processing: class-wise NMS, weighted boxes fusion (WBF)
//! and the test-time-augmentation ensemble built on top of it.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::detector::{Detector, DetectorError};
use crate::geometry::{iou, AffineBoxTransform, BBox};
use crate::image::Image;
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection<T = f64> {
    pub bbox: BBox<T>,
    pub class_id: usize,
    pub confidence: T,
}

impl<T: Scalar> Detection<T> {
    pub fn new(bbox: BBox<T>, class_id: usize, confidence: T) -> Self {
        Self {
            bbox,
            class_id,
            confidence,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusedDetection<T = f64> {
    pub bbox: BBox<T>,
    pub class_id: usize,
    pub confidence: T,
    /// Number of source boxes merged into this one.
    pub cluster_size: usize,
}

impl<T: Scalar> FusedDetection<T> {
    pub fn detection(&self) -> Detection<T> {
        Detection::new(self.bbox, self.class_id, self.confidence)
    }
}

/// Confidence descending, then class, then `x1`, then `y1`.
pub fn detection_order<T: Scalar>(a: &Detection<T>, b: &Detection<T>) -> Ordering {
    b.confidence
        .partial_cmp(&a.confidence)
        .unwrap_or(Ordering::Equal)
        .then(a.class_id.cmp(&b.class_id))
        .then(a.bbox.x1.partial_cmp(&b.bbox.x1).unwrap_or(Ordering::Equal))
        .then(a.bbox.y1.partial_cmp(&b.bbox.y1).unwrap_or(Ordering::Equal))
}

/// Greedy class-wise non-maximum suppression.
///
/// A box survives iff its IoU with every already kept box of the same class
/// is below `iou_thresh`. Output is in kept order.
pub fn nms<T: Scalar>(dets: &[Detection<T>], iou_thresh: T) -> Vec<Detection<T>> {
    let mut order: Vec<&Detection<T>> = dets.iter().collect();
    order.sort_by(|a, b| detection_order(a, b));
    let mut kept: Vec<Detection<T>> = Vec::new();
    for d in order {
        let suppressed = kept
            .iter()
            .any(|k| k.class_id == d.class_id && iou(&k.bbox, &d.bbox) >= iou_thresh);
        if !suppressed {
            kept.push(*d);
        }
    }
    kept
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WbfParams<T = f64> {
    pub iou_thresh: T,
    pub skip_conf: T,
}

impl Default for WbfParams<f64> {
    fn default() -> Self {
        Self {
            iou_thresh: 0.55,
            skip_conf: 0.0,
        }
    }
}

struct Cluster<T> {
    weight_sum: T,
    conf_sum: T,
    corner_sums: [T; 4],
    count: usize,
    fused: BBox<T>,
}

impl<T: Scalar> Cluster<T> {
    fn new(d: &Detection<T>) -> Self {
        let mut c = Self {
            weight_sum: T::zero(),
            conf_sum: T::zero(),
            corner_sums: [T::zero(); 4],
            count: 0,
            fused: d.bbox,
        };
        c.push(d);
        c
    }

    fn push(&mut self, d: &Detection<T>) {
        let w = d.confidence;
        self.weight_sum += w;
        self.conf_sum += d.confidence;
        self.count += 1;
        let b = &d.bbox;
        for (s, v) in self.corner_sums.iter_mut().zip([b.x1, b.y1, b.x2, b.y2]) {
            *s += w * v;
        }
        if self.weight_sum > T::zero() {
            let [x1, y1, x2, y2] = self.corner_sums.map(|s| s / self.weight_sum);
            self.fused = BBox::new(x1, y1, x2, y2);
        } else {
            // All-zero confidences: fall back to an unweighted running mean.
            let n = T::from_usize_lossy(self.count);
            let f = &self.fused;
            self.fused = BBox::new(
                f.x1 + (b.x1 - f.x1) / n,
                f.y1 + (b.y1 - f.y1) / n,
                f.x2 + (b.x2 - f.x2) / n,
                f.y2 + (b.y2 - f.y2) / n,
            );
        }
    }
}

/// Weighted boxes fusion over `sources.len()` prediction lists.
///
/// Each class is processed independently in [`detection_order`]. A box joins
/// the cluster whose current fused box overlaps it most (first cluster on
/// ties) when that IoU reaches `iou_thresh`; otherwise it opens a new
/// cluster. Fused corners are confidence-weighted means; the fused
/// confidence is the mean member confidence scaled by `min(n, S) / S`.
pub fn weighted_boxes_fusion<T: Scalar>(
    sources: &[Vec<Detection<T>>],
    params: WbfParams<T>,
) -> Vec<FusedDetection<T>> {
    let n_sources = sources.len().max(1);
    let s = T::from_usize_lossy(n_sources);
    let mut pooled: Vec<&Detection<T>> = sources
        .iter()
        .flatten()
        .filter(|d| d.confidence >= params.skip_conf)
        .collect();
    pooled.sort_by(|a, b| a.class_id.cmp(&b.class_id).then(detection_order(a, b)));

    let mut out = Vec::new();
    let mut start = 0;
    while start < pooled.len() {
        let class_id = pooled[start].class_id;
        let end = start + pooled[start..].iter().take_while(|d| d.class_id == class_id).count();
        let mut clusters: Vec<Cluster<T>> = Vec::new();
        for d in &pooled[start..end] {
            let mut best: Option<(usize, T)> = None;
            for (k, c) in clusters.iter().enumerate() {
                let v = iou(&c.fused, &d.bbox);
                if best.is_none_or(|(_, bv)| v > bv) {
                    best = Some((k, v));
                }
            }
            match best {
                Some((k, v)) if v >= params.iou_thresh => clusters[k].push(d),
                _ => clusters.push(Cluster::new(d)),
            }
        }
        for c in clusters {
            let n = c.count;
            let mean = c.conf_sum / T::from_usize_lossy(n);
            let factor = T::from_usize_lossy(n.min(n_sources)) / s;
            out.push(FusedDetection {
                bbox: c.fused,
                class_id,
                confidence: mean * factor,
                cluster_size: n,
            });
        }
        start = end;
    }
    out.sort_by(|a, b| detection_order(&a.detection(), &b.detection()));
    out
}

/// Named test-time augmentations, resolved against each image's size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TtaOp {
    Identity,
    Hflip,
    Vflip,
}

impl TtaOp {
    pub fn transform(self, width: usize, height: usize) -> AffineBoxTransform<f64> {
        let (w, h) = (width as f64, height as f64);
        match self {
            TtaOp::Identity => AffineBoxTransform::identity(w, h),
            TtaOp::Hflip => AffineBoxTransform::hflip(w, h),
            TtaOp::Vflip => AffineBoxTransform::vflip(w, h),
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim() {
            "identity" => Some(TtaOp::Identity),
            "hflip" => Some(TtaOp::Hflip),
            "vflip" => Some(TtaOp::Vflip),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TtaOp::Identity => "identity",
            TtaOp::Hflip => "hflip",
            TtaOp::Vflip => "vflip",
        }
    }
}

/// Predicts on every transformed copy of `image`, maps the boxes back to the
/// original frame and fuses the per-transform lists with WBF.
pub fn tta_ensemble(
    teacher: &dyn Detector,
    image: &Image,
    tta_set: &[AffineBoxTransform<f64>],
    params: WbfParams<f64>,
) -> Result<Vec<FusedDetection<f64>>, DetectorError> {
    if !tta_set.iter().any(|t| t.is_identity()) {
        return Err(DetectorError::InvalidInput(
            "test-time augmentation set must include the identity transform".into(),
        ));
    }
    let views: Vec<Image> = tta_set.iter().map(|t| image.warp(t)).collect();
    let preds = teacher.predict(&views)?;
    if preds.len() != views.len() {
        return Err(DetectorError::InvalidInput(format!(
            "detector returned {} prediction lists for {} images",
            preds.len(),
            views.len()
        )));
    }
    let sources: Vec<Vec<Detection<f64>>> = preds
        .into_iter()
        .zip(tta_set)
        .map(|(dets, t)| {
            let inv = t.invert();
            dets.into_iter()
                .map(|d| Detection::new(inv.apply(&d.bbox), d.class_id, d.confidence))
                .collect()
        })
        .collect();
    Ok(weighted_boxes_fusion(&sources, params))
}
