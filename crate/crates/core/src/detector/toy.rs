//! A desk-scale trainable detector.
//!
//! Every anchor window on a stride grid is described by pooled channel
//! statistics; each class scores windows with a linear template plus bias
//! passed through a logistic. Training is plain gradient descent on the
//! weighted logistic loss, so all gradients are available in closed form.

use serde::{Deserialize, Serialize};

use super::{Detector, DetectorError, ParamVector};
use crate::augment::Sample;
use crate::fusion::{nms, Detection};
use crate::geometry::{iou, BBox};
use crate::image::{Image, PAD_VALUE};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyConfig {
    pub image_size: usize,
    pub channels: usize,
    pub n_classes: usize,
    /// Two square anchor side lengths in pixels.
    pub anchors: [usize; 2],
    pub stride: usize,
    /// Pooling cells per window side.
    pub grid: usize,
    pub learning_rate: f64,
    /// Scores below this are never emitted.
    pub score_floor: f64,
    pub nms_iou: f64,
    /// Minimum IoU between a window and a box for the window to be a positive.
    pub positive_iou: f64,
    /// Extra loss weight on positive window/class terms.
    pub positive_weight: f64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            image_size: 40,
            channels: 3,
            n_classes: 3,
            anchors: [8, 12],
            stride: 2,
            grid: 2,
            learning_rate: 0.01,
            score_floor: 0.05,
            nms_iou: 0.5,
            positive_iou: 0.5,
            positive_weight: 1.0,
        }
    }
}

impl ToyConfig {
    /// Pooled cell means, window-minus-surround contrast, and a large-anchor flag.
    pub fn n_features(&self) -> usize {
        self.grid * self.grid * self.channels + self.channels + 1
    }

    pub fn n_params(&self) -> usize {
        self.n_classes * (self.n_features() + 1)
    }

    pub fn validate(&self) -> Result<(), String> {
        let mut bad = Vec::new();
        if self.channels == 0 {
            bad.push("channels must be positive".to_string());
        }
        if self.n_classes == 0 {
            bad.push("n_classes must be positive".to_string());
        }
        if self.stride == 0 || self.grid == 0 {
            bad.push("stride and grid must be positive".to_string());
        }
        for a in self.anchors {
            if a == 0 || a > self.image_size || a % self.grid != 0 {
                bad.push(format!(
                    "anchor {a} must lie in 1..={} and be divisible by grid {}",
                    self.image_size, self.grid
                ));
            }
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(bad.join("; "))
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Window {
    x: usize,
    y: usize,
    size: usize,
    large: bool,
}

impl Window {
    fn bbox(&self) -> BBox<f64> {
        BBox::new(
            self.x as f64,
            self.y as f64,
            (self.x + self.size) as f64,
            (self.y + self.size) as f64,
        )
    }
}

#[derive(Debug, Clone)]
pub struct ToyDetector {
    cfg: ToyConfig,
    windows: Vec<Window>,
    params: Vec<f64>,
}

struct Integral {
    w1: usize,
    channels: usize,
    sums: Vec<f64>,
}

impl Integral {
    fn new(img: &Image) -> Self {
        let (w1, h1, c) = (img.width + 1, img.height + 1, img.channels);
        let mut sums = vec![0.0; w1 * h1 * c];
        for y in 0..img.height {
            for ch in 0..c {
                let mut row = 0.0;
                for x in 0..img.width {
                    row += img.get(x, y, ch);
                    let above = sums[(y * w1 + x + 1) * c + ch];
                    sums[((y + 1) * w1 + x + 1) * c + ch] = above + row;
                }
            }
        }
        Self { w1, channels: c, sums }
    }

    #[inline]
    fn at(&self, x: usize, y: usize, c: usize) -> f64 {
        self.sums[(y * self.w1 + x) * self.channels + c]
    }

    /// Sum over `[x0, x1) x [y0, y1)` of channel `c`.
    #[inline]
    fn rect(&self, x0: usize, y0: usize, x1: usize, y1: usize, c: usize) -> f64 {
        self.at(x1, y1, c) - self.at(x0, y1, c) - self.at(x1, y0, c) + self.at(x0, y0, c)
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

impl ToyDetector {
    pub fn new(cfg: ToyConfig) -> Result<Self, DetectorError> {
        cfg.validate().map_err(DetectorError::InvalidInput)?;
        let mut windows = Vec::new();
        for (k, &size) in cfg.anchors.iter().enumerate() {
            let last = cfg.image_size - size;
            for y in (0..=last).step_by(cfg.stride) {
                for x in (0..=last).step_by(cfg.stride) {
                    windows.push(Window { x, y, size, large: k == 1 });
                }
            }
        }
        let params = vec![0.0; cfg.n_params()];
        Ok(Self { cfg, windows, params })
    }

    pub fn config(&self) -> &ToyConfig {
        &self.cfg
    }

    pub fn n_windows(&self) -> usize {
        self.windows.len()
    }

    pub fn window_boxes(&self) -> Vec<BBox<f64>> {
        self.windows.iter().map(Window::bbox).collect()
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.cfg.learning_rate = lr;
    }

    fn check_image(&self, img: &Image) -> Result<(), DetectorError> {
        let s = self.cfg.image_size;
        if img.width != s || img.height != s || img.channels != self.cfg.channels {
            return Err(DetectorError::DimensionMismatch {
                expected: format!("{s}x{s}x{}", self.cfg.channels),
                got: format!("{}x{}x{}", img.width, img.height, img.channels),
            });
        }
        Ok(())
    }

    /// Row-major `[window][feature]` matrix.
    pub fn features(&self, img: &Image) -> Result<Vec<f64>, DetectorError> {
        self.check_image(img)?;
        let ii = Integral::new(img);
        let nf = self.cfg.n_features();
        let (g, ch) = (self.cfg.grid, self.cfg.channels);
        let s = self.cfg.image_size;
        let mut out = vec![0.0; self.windows.len() * nf];
        for (wi, w) in self.windows.iter().enumerate() {
            let f = &mut out[wi * nf..(wi + 1) * nf];
            let cell = w.size / g;
            let cell_area = (cell * cell) as f64;
            for gy in 0..g {
                for gx in 0..g {
                    let (x0, y0) = (w.x + gx * cell, w.y + gy * cell);
                    for c in 0..ch {
                        f[(gy * g + gx) * ch + c] =
                            ii.rect(x0, y0, x0 + cell, y0 + cell, c) / cell_area - PAD_VALUE;
                    }
                }
            }
            let margin = w.size / 2;
            let (ox0, oy0) = (w.x.saturating_sub(margin), w.y.saturating_sub(margin));
            let (ox1, oy1) = ((w.x + w.size + margin).min(s), (w.y + w.size + margin).min(s));
            let inner_area = (w.size * w.size) as f64;
            let ring_area = ((ox1 - ox0) * (oy1 - oy0)) as f64 - inner_area;
            for c in 0..ch {
                let inner = ii.rect(w.x, w.y, w.x + w.size, w.y + w.size, c);
                let outer = ii.rect(ox0, oy0, ox1, oy1, c);
                let ring_mean = if ring_area > 0.0 {
                    (outer - inner) / ring_area
                } else {
                    PAD_VALUE
                };
                f[g * g * ch + c] = inner / inner_area - ring_mean;
            }
            f[nf - 1] = if w.large { 1.0 } else { 0.0 };
        }
        Ok(out)
    }

    #[inline]
    fn logit(&self, feats: &[f64], class: usize) -> f64 {
        let nf = self.cfg.n_features();
        let p = &self.params[class * (nf + 1)..(class + 1) * (nf + 1)];
        feats.iter().zip(p).map(|(a, b)| a * b).sum::<f64>() + p[nf]
    }

    /// Logistic score of every window for every class, `[window][class]`.
    pub fn window_scores(&self, img: &Image) -> Result<Vec<f64>, DetectorError> {
        let feats = self.features(img)?;
        let nf = self.cfg.n_features();
        let nc = self.cfg.n_classes;
        let mut out = Vec::with_capacity(self.windows.len() * nc);
        for wi in 0..self.windows.len() {
            let f = &feats[wi * nf..(wi + 1) * nf];
            for c in 0..nc {
                out.push(sigmoid(self.logit(f, c)));
            }
        }
        Ok(out)
    }

    pub fn predict_one(&self, img: &Image) -> Result<Vec<Detection<f64>>, DetectorError> {
        let scores = self.window_scores(img)?;
        let nc = self.cfg.n_classes;
        let mut dets = Vec::new();
        for (wi, w) in self.windows.iter().enumerate() {
            for c in 0..nc {
                let p = scores[wi * nc + c];
                if p >= self.cfg.score_floor {
                    dets.push(Detection::new(w.bbox(), c, p));
                }
            }
        }
        Ok(nms(&dets, self.cfg.nms_iou))
    }

    /// Per `[window][class]` targets and weights for one sample.
    fn targets(&self, s: &Sample) -> (Vec<f64>, Vec<f64>) {
        let nc = self.cfg.n_classes;
        let mut y = vec![0.0; self.windows.len() * nc];
        let mut wt = vec![1.0; self.windows.len() * nc];
        for (wi, w) in self.windows.iter().enumerate() {
            let wb = w.bbox();
            let mut best: Option<(f64, usize, f64)> = None;
            for b in &s.boxes {
                let v = iou(&wb, &b.bbox);
                if best.is_none_or(|(bv, _, _)| v > bv) {
                    best = Some((v, b.class_id, b.weight));
                }
            }
            if let Some((v, class, weight)) = best {
                if v >= self.cfg.positive_iou && class < nc {
                    y[wi * nc + class] = 1.0;
                    wt[wi * nc + class] = weight * self.cfg.positive_weight;
                }
            }
        }
        (y, wt)
    }

    /// Mean weighted logistic loss over all `(image, window, class)` terms and its gradient.
    pub fn loss_and_grad(&self, batch: &[Sample]) -> Result<(f64, Vec<f64>), DetectorError> {
        let nf = self.cfg.n_features();
        let nc = self.cfg.n_classes;
        let mut grad = vec![0.0; self.params.len()];
        let mut loss = 0.0;
        let mut terms = 0usize;
        for s in batch {
            let feats = self.features(&s.image)?;
            let (y, wt) = self.targets(s);
            for wi in 0..self.windows.len() {
                let f = &feats[wi * nf..(wi + 1) * nf];
                for c in 0..nc {
                    let k = wi * nc + c;
                    let z = self.logit(f, c);
                    loss += wt[k] * (softplus(z) - y[k] * z);
                    let r = wt[k] * (sigmoid(z) - y[k]);
                    let g = &mut grad[c * (nf + 1)..(c + 1) * (nf + 1)];
                    for (gi, fi) in g.iter_mut().zip(f) {
                        *gi += r * fi;
                    }
                    g[nf] += r;
                }
            }
            terms += self.windows.len() * nc;
        }
        if terms == 0 {
            return Ok((0.0, grad));
        }
        let m = terms as f64;
        grad.iter_mut().for_each(|g| *g /= m);
        Ok((loss / m, grad))
    }

    pub fn loss(&self, batch: &[Sample]) -> Result<f64, DetectorError> {
        self.loss_and_grad(batch).map(|(l, _)| l)
    }

    pub fn params_slice(&self) -> &[f64] {
        &self.params
    }
}

impl Detector for ToyDetector {
    fn predict(&self, images: &[Image]) -> Result<Vec<Vec<Detection<f64>>>, DetectorError> {
        images.iter().map(|img| self.predict_one(img)).collect()
    }

    fn train_step(&mut self, batch: &[Sample]) -> Result<f64, DetectorError> {
        let (loss, grad) = self.loss_and_grad(batch)?;
        let lr = self.cfg.learning_rate;
        for (p, g) in self.params.iter_mut().zip(grad) {
            *p -= lr * g;
        }
        Ok(loss)
    }

    fn get_params(&self) -> Result<ParamVector<f64>, DetectorError> {
        Ok(ParamVector::new(self.params.clone()))
    }

    fn set_params(&mut self, params: &ParamVector<f64>) -> Result<(), DetectorError> {
        if params.len() != self.params.len() {
            return Err(DetectorError::ParamLength {
                expected: self.params.len(),
                got: params.len(),
            });
        }
        if !params.all_finite() {
            return Err(DetectorError::InvalidInput("non-finite parameter".into()));
        }
        self.params.clone_from(&params.values);
        Ok(())
    }

    fn concurrent_predict(&self) -> bool {
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augment::LabeledBox;

    fn cfg() -> ToyConfig {
        ToyConfig {
            image_size: 16,
            n_classes: 2,
            anchors: [4, 8],
            ..ToyConfig::default()
        }
    }

    fn gray(size: usize) -> Image {
        Image::filled(size, size, 3, 0.5)
    }

    #[test]
    fn zero_init_scores_are_one_half() {
        let det = ToyDetector::new(cfg()).unwrap();
        let preds = det.predict(&[gray(16)]).unwrap();
        assert!(!preds[0].is_empty());
        assert!(preds[0].iter().all(|d| d.confidence == 0.5));
        // class-wise NMS leaves no same-class pair at IoU >= 0.5
        for (i, a) in preds[0].iter().enumerate() {
            for b in &preds[0][i + 1..] {
                assert!(a.class_id != b.class_id || iou(&a.bbox, &b.bbox) < 0.5);
            }
        }
    }

    #[test]
    fn rejects_wrong_image_size() {
        let det = ToyDetector::new(cfg()).unwrap();
        assert!(matches!(
            det.predict(&[gray(15)]),
            Err(DetectorError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn window_grid_counts() {
        let det = ToyDetector::new(cfg()).unwrap();
        // (16-4)/2+1 = 7 per side, (16-8)/2+1 = 5 per side
        assert_eq!(det.n_windows(), 49 + 25);
    }

    #[test]
    fn features_of_uniform_gray_are_zero_except_flag() {
        let det = ToyDetector::new(cfg()).unwrap();
        let nf = det.config().n_features();
        let f = det.features(&gray(16)).unwrap();
        for w in 0..det.n_windows() {
            assert!(f[w * nf..w * nf + nf - 1].iter().all(|v| v.abs() < 1e-12));
        }
    }

    #[test]
    fn small_step_reduces_loss() {
        let mut det = ToyDetector::new(cfg()).unwrap();
        let mut img = gray(16);
        for y in 4..12 {
            for x in 4..12 {
                img.set(x, y, 0, 0.9);
            }
        }
        let batch = vec![Sample {
            id: "a".into(),
            image: img,
            boxes: vec![LabeledBox::new(BBox::new(4., 4., 12., 12.), 0, 1.0)],
            domain: "basic".into(),
            labeled: true,
        }];
        det.set_learning_rate(0.1);
        let before = det.loss(&batch).unwrap();
        let reported = det.train_step(&batch).unwrap();
        assert_eq!(before, reported);
        assert!(det.loss(&batch).unwrap() < before);
    }

    #[test]
    fn set_params_checks_length() {
        let mut det = ToyDetector::new(cfg()).unwrap();
        assert!(matches!(
            det.set_params(&ParamVector::zeros(3)),
            Err(DetectorError::ParamLength { .. })
        ));
    }

    #[test]
    fn softplus_is_stable() {
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
        assert_eq!(softplus(1000.0), 1000.0);
        assert!(softplus(-1000.0) >= 0.0);
    }
}
