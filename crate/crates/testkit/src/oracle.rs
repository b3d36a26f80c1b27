//! Reference implementations written from the definitions, sharing no code
//! with `ssod-core`. Boxes are plain `[x1, y1, x2, y2]` arrays.

use std::cmp::Ordering;

pub type RawBox = [f64; 4];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawDet {
    pub b: RawBox,
    pub class: usize,
    pub conf: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawFused {
    pub b: RawBox,
    pub class: usize,
    pub conf: f64,
    pub members: usize,
}

pub fn area(b: &RawBox) -> f64 {
    (b[2] - b[0]).max(0.0) * (b[3] - b[1]).max(0.0)
}

pub fn iou(a: &RawBox, b: &RawBox) -> f64 {
    let w = (a[2].min(b[2]) - a[0].max(b[0])).max(0.0);
    let h = (a[3].min(b[3]) - a[1].max(b[1])).max(0.0);
    let inter = w * h;
    let union = area(a) + area(b) - inter;
    if union > 0.0 {
        (inter / union).clamp(0.0, 1.0)
    } else {
        0.0
    }
}

/// Confidence descending, then class, `x1`, `y1` ascending.
pub fn rank(a: &RawDet, b: &RawDet) -> Ordering {
    b.conf
        .total_cmp(&a.conf)
        .then(a.class.cmp(&b.class))
        .then(a.b[0].total_cmp(&b.b[0]))
        .then(a.b[1].total_cmp(&b.b[1]))
}

fn fused_box(members: &[RawDet]) -> RawBox {
    let total: f64 = members.iter().map(|m| m.conf).sum();
    let mut out = [0.0; 4];
    for (k, o) in out.iter_mut().enumerate() {
        *o = if total > 0.0 {
            members.iter().map(|m| m.conf * m.b[k]).sum::<f64>() / total
        } else {
            members.iter().map(|m| m.b[k]).sum::<f64>() / members.len() as f64
        };
    }
    out
}

/// Greedy clustering where every cluster's fused box is recomputed from all
/// of its members before each comparison.
pub fn wbf(sources: &[Vec<RawDet>], iou_thresh: f64, skip_conf: f64) -> Vec<RawFused> {
    let s = sources.len().max(1);
    let pool: Vec<RawDet> = sources.iter().flatten().filter(|d| d.conf >= skip_conf).copied().collect();
    let mut classes: Vec<usize> = pool.iter().map(|d| d.class).collect();
    classes.sort_unstable();
    classes.dedup();
    let mut out = Vec::new();
    for c in classes {
        let mut items: Vec<RawDet> = pool.iter().filter(|d| d.class == c).copied().collect();
        items.sort_by(rank);
        let mut clusters: Vec<Vec<RawDet>> = Vec::new();
        for d in items {
            let mut best: Option<(usize, f64)> = None;
            for (k, members) in clusters.iter().enumerate() {
                let v = iou(&fused_box(members), &d.b);
                if best.is_none() || v > best.unwrap().1 {
                    best = Some((k, v));
                }
            }
            match best {
                Some((k, v)) if v >= iou_thresh => clusters[k].push(d),
                _ => clusters.push(vec![d]),
            }
        }
        for members in clusters {
            let n = members.len();
            let mean = members.iter().map(|m| m.conf).sum::<f64>() / n as f64;
            out.push(RawFused {
                b: fused_box(&members),
                class: c,
                conf: mean * n.min(s) as f64 / s as f64,
                members: n,
            });
        }
    }
    out.sort_by(|a, b| {
        let da = RawDet { b: a.b, class: a.class, conf: a.conf };
        let db = RawDet { b: b.b, class: b.class, conf: b.conf };
        rank(&da, &db)
    });
    out
}

/// Per-image greedy matching for one class: detections by confidence (input
/// order on ties), each taking the free ground truth of highest IoU.
pub fn match_image(dets: &[RawDet], gts: &[RawBox], thr: f64) -> Vec<(f64, bool)> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].conf.total_cmp(&dets[a].conf).then(a.cmp(&b)));
    let mut used = vec![false; gts.len()];
    let mut out = Vec::new();
    for i in order {
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gts.iter().enumerate() {
            let v = iou(&dets[i].b, gt);
            if !used[g] && v >= thr && (best.is_none() || v > best.unwrap().1) {
                best = Some((g, v));
            }
        }
        if let Some((g, _)) = best {
            used[g] = true;
        }
        out.push((dets[i].conf, best.is_some()));
    }
    out
}

/// All-point interpolated AP from scratch: one operating point per distinct
/// confidence, precision at each recall replaced by the best precision at
/// any recall at least as large.
pub fn average_precision(scored: &[(f64, bool)], n_gt: usize) -> f64 {
    let mut cutoffs: Vec<f64> = scored.iter().map(|s| s.0).collect();
    cutoffs.sort_by(|a, b| b.total_cmp(a));
    cutoffs.dedup();
    let curve: Vec<(f64, f64)> = cutoffs
        .iter()
        .map(|&t| {
            let tp = scored.iter().filter(|s| s.0 >= t && s.1).count();
            let n = scored.iter().filter(|s| s.0 >= t).count();
            (tp as f64 / n_gt as f64, tp as f64 / n as f64)
        })
        .collect();
    let mut ap = 0.0;
    for i in 0..curve.len() {
        let prev = if i == 0 { 0.0 } else { curve[i - 1].0 };
        let env = curve[i..].iter().map(|p| p.1).fold(0.0, f64::max);
        ap += (curve[i].0 - prev) * env;
    }
    ap
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapResult {
    /// `(class, ap50, ap50_95)` for every class with ground truth.
    pub per_class: Vec<(usize, f64, f64)>,
    pub map50: f64,
    pub map50_95: f64,
}

/// `preds[i]` and `gts[i]` belong to image `i`.
pub fn map_scores(preds: &[Vec<RawDet>], gts: &[Vec<(RawBox, usize)>], n_classes: usize) -> MapResult {
    let mut per_class = Vec::new();
    for c in 0..n_classes {
        let n_gt: usize = gts.iter().map(|g| g.iter().filter(|x| x.1 == c).count()).sum();
        if n_gt == 0 {
            continue;
        }
        let mut aps = Vec::new();
        for k in 0..10 {
            let thr = (50 + 5 * k) as f64 / 100.0;
            let mut scored = Vec::new();
            for (p, g) in preds.iter().zip(gts) {
                let d: Vec<RawDet> = p.iter().filter(|d| d.class == c).copied().collect();
                let t: Vec<RawBox> = g.iter().filter(|x| x.1 == c).map(|x| x.0).collect();
                scored.extend(match_image(&d, &t, thr));
            }
            aps.push(average_precision(&scored, n_gt));
        }
        per_class.push((c, aps[0], aps.iter().sum::<f64>() / 10.0));
    }
    let n = per_class.len().max(1) as f64;
    MapResult {
        map50: per_class.iter().map(|p| p.1).sum::<f64>() / n,
        map50_95: per_class.iter().map(|p| p.2).sum::<f64>() / n,
        per_class,
    }
}
