//! COCO-style detection evaluation: greedy matching, all-point interpolated
//! average precision and class-mean AP at IoU 0.50 and 0.50:0.95.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fusion::Detection;
use crate::geometry::{iou, BBox};
use crate::Scalar;

/// IoU thresholds 0.50, 0.55, ..., 0.95.
pub fn coco_iou_thresholds<T: Scalar>() -> [T; 10] {
    std::array::from_fn(|i| T::lit(50.0 + 5.0 * i as f64) / T::lit(100.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthBox<T = f64> {
    pub bbox: BBox<T>,
    pub class_id: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageDetections<T = f64> {
    pub image_id: String,
    pub detections: Vec<Detection<T>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageGroundTruth<T = f64> {
    pub image_id: String,
    pub boxes: Vec<GroundTruthBox<T>>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("prediction references image `{0}` which has no ground-truth entry")]
    UnknownImage(String),
    #[error("image `{0}` appears more than once")]
    DuplicateImage(String),
    #[error("class id {class_id} out of range for {n_classes} classes")]
    ClassOutOfRange { class_id: usize, n_classes: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MatchFlag {
    pub det_index: usize,
    pub matched: bool,
}

/// Greedy matching of one image's detections of a single class.
///
/// Detections are visited by confidence (input order breaks ties); each takes
/// the unmatched ground truth with the highest IoU if it reaches `iou_thresh`.
/// The result is in input order.
pub fn match_detections<T: Scalar>(
    dets: &[Detection<T>],
    gts: &[GroundTruthBox<T>],
    iou_thresh: T,
) -> Vec<MatchFlag> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        dets[b]
            .confidence
            .partial_cmp(&dets[a].confidence)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut gt_taken = vec![false; gts.len()];
    let mut flags = vec![false; dets.len()];
    for i in order {
        let mut best: Option<(usize, T)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if gt_taken[g] {
                continue;
            }
            let v = iou(&dets[i].bbox, &gt.bbox);
            if v >= iou_thresh && best.is_none_or(|(_, bv)| v > bv) {
                best = Some((g, v));
            }
        }
        if let Some((g, _)) = best {
            gt_taken[g] = true;
            flags[i] = true;
        }
    }
    flags
        .into_iter()
        .enumerate()
        .map(|(det_index, matched)| MatchFlag { det_index, matched })
        .collect()
}

/// Area under the precision envelope for rank-ordered TP/FP flags.
/// `None` when there is no ground truth.
pub fn average_precision<T: Scalar>(flags: &[bool], n_gt: usize) -> Option<T> {
    let points = flags.iter().scan((0usize, 0usize), |(tp, fp), &hit| {
        if hit {
            *tp += 1;
        } else {
            *fp += 1;
        }
        Some((*tp, *fp))
    });
    envelope_area(points, n_gt)
}

/// Like [`average_precision`] for `(confidence, is_tp)` pairs in any order.
/// Equal confidences form a single operating point, so the result does not
/// depend on the order of ties.
pub fn average_precision_ranked<T: Scalar>(scored: &[(T, bool)], n_gt: usize) -> Option<T> {
    let sorted = sort_scored(scored);
    envelope_area(operating_points(&sorted), n_gt)
}

fn sort_scored<T: Scalar>(scored: &[(T, bool)]) -> Vec<(T, bool)> {
    let mut v = scored.to_vec();
    v.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(std::cmp::Ordering::Equal));
    v
}

fn operating_points<T: Scalar>(sorted: &[(T, bool)]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    for (i, &(conf, hit)) in sorted.iter().enumerate() {
        if hit {
            tp += 1;
        } else {
            fp += 1;
        }
        let last_of_group = sorted.get(i + 1).is_none_or(|next| next.0 != conf);
        if last_of_group {
            out.push((tp, fp));
        }
    }
    out
}

fn envelope_area<T: Scalar>(points: impl IntoIterator<Item = (usize, usize)>, n_gt: usize) -> Option<T> {
    if n_gt == 0 {
        return None;
    }
    let points: Vec<(usize, usize)> = points.into_iter().collect();
    let ap = exact_envelope_area(&points, n_gt)
        .map(|(num, den)| T::from_u128(num).unwrap_or(T::nan()) / T::from_u128(den).unwrap_or(T::nan()))
        .filter(|v| v.is_finite())
        .unwrap_or_else(|| float_envelope_area(&points, n_gt));
    Some(ap.min(T::one()).max(T::zero()))
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// The area as a reduced fraction, so small cases such as 5/6 round once.
/// `None` when the denominators outgrow `u128`.
fn exact_envelope_area(points: &[(usize, usize)], n_gt: usize) -> Option<(u128, u128)> {
    // envelope precision at each point as tp / (tp + fp), walking backwards
    let mut env: Vec<(u128, u128)> = vec![(0, 1); points.len()];
    let mut best = (0u128, 1u128);
    for (k, &(tp, fp)) in points.iter().enumerate().rev() {
        let p = (tp as u128, (tp + fp) as u128);
        if p.0 * best.1 > best.0 * p.1 {
            best = p;
        }
        env[k] = best;
    }
    let (mut num, mut den) = (0u128, 1u128);
    let mut prev_tp = 0usize;
    for (&(tp, _), &(a, b)) in points.iter().zip(&env) {
        let step = (tp - prev_tp) as u128;
        prev_tp = tp;
        if step == 0 || a == 0 {
            continue;
        }
        let g = gcd(den, b);
        let lcm = (den / g).checked_mul(b)?;
        num = num.checked_mul(lcm / den)?.checked_add(step.checked_mul(a)?.checked_mul(lcm / b)?)?;
        den = lcm;
        let r = gcd(num, den);
        (num, den) = (num / r, den / r);
    }
    let den = den.checked_mul(n_gt as u128)?;
    let r = gcd(num, den).max(1);
    Some((num / r, den / r))
}

fn float_envelope_area<T: Scalar>(points: &[(usize, usize)], n_gt: usize) -> T {
    let n = T::from_usize_lossy(n_gt);
    let pr: Vec<(T, T)> = points
        .iter()
        .map(|&(tp, fp)| {
            let tp_t = T::from_usize_lossy(tp);
            (tp_t / n, tp_t / T::from_usize_lossy(tp + fp))
        })
        .collect();
    let mut env = T::zero();
    // Walk backwards so the running max is the envelope at each recall level.
    let mut contributions = Vec::with_capacity(pr.len());
    for k in (0..pr.len()).rev() {
        env = env.max(pr[k].1);
        let prev_recall = if k == 0 { T::zero() } else { pr[k - 1].0 };
        contributions.push((pr[k].0 - prev_recall) * env);
    }
    contributions.into_iter().rev().fold(T::zero(), |acc, c| acc + c)
}

/// Per-class AP at IoU 0.50 and averaged over 0.50:0.95, plus their class
/// means over classes that have ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport<T = f64> {
    pub per_class_ap50: BTreeMap<usize, T>,
    pub per_class_ap50_95: BTreeMap<usize, T>,
    pub map50: T,
    pub map50_95: T,
    pub n_classes: usize,
    pub gt_counts: BTreeMap<usize, usize>,
    pub det_counts: BTreeMap<usize, usize>,
    pub n_images: usize,
}

impl<T: Scalar> EvalReport<T> {
    /// `metric,class,value` lines.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("metric,class,value\n");
        let _ = writeln!(s, "map50,all,{}", self.map50);
        let _ = writeln!(s, "map50_95,all,{}", self.map50_95);
        let _ = writeln!(s, "n_images,all,{}", self.n_images);
        for c in 0..self.n_classes {
            if let Some(v) = self.per_class_ap50.get(&c) {
                let _ = writeln!(s, "ap50,{c},{v}");
            }
            if let Some(v) = self.per_class_ap50_95.get(&c) {
                let _ = writeln!(s, "ap50_95,{c},{v}");
            }
            let _ = writeln!(s, "gt_count,{c},{}", self.gt_counts.get(&c).copied().unwrap_or(0));
            let _ = writeln!(s, "det_count,{c},{}", self.det_counts.get(&c).copied().unwrap_or(0));
        }
        s
    }

    pub fn evaluated_classes(&self) -> usize {
        self.per_class_ap50.len()
    }
}

struct Indexed<T> {
    /// `[image][class] -> detections`
    dets: Vec<Vec<Vec<Detection<T>>>>,
    gts: Vec<Vec<Vec<GroundTruthBox<T>>>>,
}

fn index_inputs<T: Scalar>(
    predictions: &[ImageDetections<T>],
    ground_truth: &[ImageGroundTruth<T>],
    n_classes: usize,
) -> Result<Indexed<T>, EvalError> {
    let mut slot: HashMap<&str, usize> = HashMap::with_capacity(ground_truth.len());
    let mut gts = Vec::with_capacity(ground_truth.len());
    for (i, g) in ground_truth.iter().enumerate() {
        if slot.insert(g.image_id.as_str(), i).is_some() {
            return Err(EvalError::DuplicateImage(g.image_id.clone()));
        }
        let mut per_class = vec![Vec::new(); n_classes];
        for b in &g.boxes {
            if b.class_id >= n_classes {
                return Err(EvalError::ClassOutOfRange {
                    class_id: b.class_id,
                    n_classes,
                });
            }
            per_class[b.class_id].push(*b);
        }
        gts.push(per_class);
    }
    let mut dets = vec![vec![Vec::new(); n_classes]; ground_truth.len()];
    let mut seen = vec![false; ground_truth.len()];
    for p in predictions {
        let &i = slot
            .get(p.image_id.as_str())
            .ok_or_else(|| EvalError::UnknownImage(p.image_id.clone()))?;
        if std::mem::replace(&mut seen[i], true) {
            return Err(EvalError::DuplicateImage(p.image_id.clone()));
        }
        for d in &p.detections {
            if d.class_id >= n_classes {
                return Err(EvalError::ClassOutOfRange {
                    class_id: d.class_id,
                    n_classes,
                });
            }
            dets[i][d.class_id].push(*d);
        }
    }
    Ok(Indexed { dets, gts })
}

fn pooled_flags<T: Scalar>(idx: &Indexed<T>, class_id: usize, iou_thresh: T) -> Vec<(T, bool)> {
    let mut scored = Vec::new();
    for (dets, gts) in idx.dets.iter().zip(&idx.gts) {
        let d = &dets[class_id];
        for f in match_detections(d, &gts[class_id], iou_thresh) {
            scored.push((d[f.det_index].confidence, f.matched));
        }
    }
    scored
}

/// Evaluates per-image predictions against ground truth.
///
/// Images present in `ground_truth` but absent from `predictions` count as
/// having no detections.
pub fn map_scores<T: Scalar>(
    predictions: &[ImageDetections<T>],
    ground_truth: &[ImageGroundTruth<T>],
    n_classes: usize,
) -> Result<EvalReport<T>, EvalError> {
    let idx = index_inputs(predictions, ground_truth, n_classes)?;
    let thresholds = coco_iou_thresholds::<T>();
    let mut report = EvalReport {
        per_class_ap50: BTreeMap::new(),
        per_class_ap50_95: BTreeMap::new(),
        map50: T::zero(),
        map50_95: T::zero(),
        n_classes,
        gt_counts: BTreeMap::new(),
        det_counts: BTreeMap::new(),
        n_images: ground_truth.len(),
    };
    for c in 0..n_classes {
        let n_gt: usize = idx.gts.iter().map(|g| g[c].len()).sum();
        let n_det: usize = idx.dets.iter().map(|d| d[c].len()).sum();
        report.gt_counts.insert(c, n_gt);
        report.det_counts.insert(c, n_det);
        if n_gt == 0 {
            continue;
        }
        let mut sum = T::zero();
        for (k, &thr) in thresholds.iter().enumerate() {
            let ap = average_precision_ranked(&pooled_flags(&idx, c, thr), n_gt).unwrap_or(T::zero());
            if k == 0 {
                report.per_class_ap50.insert(c, ap);
            }
            sum += ap;
        }
        report
            .per_class_ap50_95
            .insert(c, sum / T::from_usize_lossy(thresholds.len()));
    }
    let evaluated = report.per_class_ap50.len();
    if evaluated > 0 {
        let n = T::from_usize_lossy(evaluated);
        report.map50 = report.per_class_ap50.values().copied().sum::<T>() / n;
        report.map50_95 = report.per_class_ap50_95.values().copied().sum::<T>() / n;
    }
    Ok(report)
}

/// Precision/recall operating points for one class at one IoU threshold,
/// in decreasing confidence order. Empty when the class has no ground truth.
pub fn pr_curve<T: Scalar>(
    predictions: &[ImageDetections<T>],
    ground_truth: &[ImageGroundTruth<T>],
    n_classes: usize,
    class_id: usize,
    iou_thresh: T,
) -> Result<Vec<(T, T, T)>, EvalError> {
    let idx = index_inputs(predictions, ground_truth, n_classes)?;
    let n_gt: usize = idx.gts.iter().map(|g| g[class_id].len()).sum();
    if n_gt == 0 {
        return Ok(Vec::new());
    }
    let sorted = sort_scored(&pooled_flags(&idx, class_id, iou_thresh));
    let mut confs = sorted.iter().map(|s| s.0).collect::<Vec<_>>();
    confs.dedup();
    Ok(operating_points(&sorted)
        .into_iter()
        .zip(confs)
        .map(|((tp, fp), conf)| {
            let tp_t = T::from_usize_lossy(tp);
            (conf, tp_t / T::from_usize_lossy(n_gt), tp_t / T::from_usize_lossy(tp + fp))
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gt(x1: f64, y1: f64, x2: f64, y2: f64, c: usize) -> GroundTruthBox {
        GroundTruthBox {
            bbox: BBox::new(x1, y1, x2, y2),
            class_id: c,
        }
    }

    fn det(x1: f64, y1: f64, x2: f64, y2: f64, c: usize, conf: f64) -> Detection {
        Detection::new(BBox::new(x1, y1, x2, y2), c, conf)
    }

    #[test]
    fn thresholds_are_coco() {
        let t = coco_iou_thresholds::<f64>();
        assert_eq!(t[0], 0.5);
        assert_eq!(t[9], 0.95);
        assert!((t[3] - 0.65).abs() < 1e-15);
    }

    #[test]
    fn match_examples() {
        let g = [gt(0., 0., 10., 10., 0)];
        let m = match_detections(&[det(0., 0., 10., 10., 0, 0.9)], &g, 0.5);
        assert_eq!(m, vec![MatchFlag { det_index: 0, matched: true }]);

        let m = match_detections(
            &[det(0., 0., 10., 10., 0, 0.8), det(0., 0., 10., 10., 0, 0.9)],
            &g,
            0.5,
        );
        assert!(!m[0].matched && m[1].matched);

        // IoU 0.4: 40 / 100 with the second box (0,0,10,4) against (0,0,10,10)
        let low = det(0., 0., 10., 4., 0, 0.9);
        assert!((iou(&low.bbox, &g[0].bbox) - 0.4).abs() < 1e-15);
        assert!(!match_detections(&[low], &g, 0.5)[0].matched);
    }

    #[test]
    fn ap_examples() {
        assert_eq!(average_precision::<f64>(&[true], 1), Some(1.0));
        assert_eq!(average_precision::<f64>(&[false], 1), Some(0.0));
        let ap = average_precision::<f64>(&[true, false, true], 2).unwrap();
        assert_eq!(ap, 5.0 / 6.0);
        assert_eq!(average_precision::<f64>(&[true], 0), None);
        assert_eq!(average_precision::<f64>(&[], 3), Some(0.0));
    }

    #[test]
    fn ranked_ap_ties_form_one_point() {
        // A tie between a TP and an FP at the top: one operating point (1/1 recall, 1/2 precision).
        let ap = average_precision_ranked(&[(0.9, false), (0.9, true)], 1).unwrap();
        assert_eq!(ap, 0.5);
        let ap2 = average_precision_ranked(&[(0.9, true), (0.9, false)], 1).unwrap();
        assert_eq!(ap, ap2);
    }

    #[test]
    fn perfect_and_empty_predictions() {
        let gts = vec![ImageGroundTruth {
            image_id: "a".into(),
            boxes: vec![gt(0., 0., 10., 10., 0), gt(20., 20., 30., 30., 1)],
        }];
        let perfect = vec![ImageDetections {
            image_id: "a".into(),
            detections: gts[0]
                .boxes
                .iter()
                .map(|g| Detection::new(g.bbox, g.class_id, 1.0))
                .collect(),
        }];
        let r = map_scores(&perfect, &gts, 2).unwrap();
        assert_eq!((r.map50, r.map50_95), (1.0, 1.0));
        let r = map_scores::<f64>(&[], &gts, 2).unwrap();
        assert_eq!((r.map50, r.map50_95), (0.0, 0.0));
    }

    #[test]
    fn classes_without_gt_are_excluded() {
        let gts = vec![ImageGroundTruth {
            image_id: "a".into(),
            boxes: vec![gt(0., 0., 10., 10., 0)],
        }];
        let preds = vec![ImageDetections {
            image_id: "a".into(),
            detections: vec![det(0., 0., 10., 10., 0, 0.9), det(50., 50., 60., 60., 2, 0.9)],
        }];
        let r = map_scores(&preds, &gts, 3).unwrap();
        assert_eq!(r.evaluated_classes(), 1);
        assert_eq!(r.map50, 1.0);
    }

    #[test]
    fn unknown_image_is_an_error() {
        let preds = vec![ImageDetections::<f64> {
            image_id: "ghost".into(),
            detections: vec![],
        }];
        assert_eq!(
            map_scores(&preds, &[], 1).unwrap_err(),
            EvalError::UnknownImage("ghost".into())
        );
    }

    #[test]
    fn csv_lists_every_metric() {
        let gts = vec![ImageGroundTruth {
            image_id: "a".into(),
            boxes: vec![gt(0., 0., 10., 10., 0)],
        }];
        let csv = map_scores::<f64>(&[], &gts, 1).unwrap().to_csv();
        assert!(csv.starts_with("metric,class,value\nmap50,all,0\n"));
        assert!(csv.contains("ap50_95,0,0\n"));
        assert!(csv.contains("gt_count,0,1\n"));
    }

    #[test]
    fn pr_curve_points() {
        let gts = vec![ImageGroundTruth {
            image_id: "a".into(),
            boxes: vec![gt(0., 0., 10., 10., 0), gt(20., 0., 30., 10., 0)],
        }];
        let preds = vec![ImageDetections {
            image_id: "a".into(),
            detections: vec![
                det(0., 0., 10., 10., 0, 0.9),
                det(50., 0., 60., 10., 0, 0.8),
                det(20., 0., 30., 10., 0, 0.7),
            ],
        }];
        let pr = pr_curve(&preds, &gts, 1, 0, 0.5).unwrap();
        assert_eq!(pr.len(), 3);
        assert_eq!(pr[0], (0.9, 0.5, 1.0));
        assert_eq!(pr[2].1, 1.0);
    }
}
