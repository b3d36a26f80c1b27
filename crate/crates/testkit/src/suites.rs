//! Randomized equivalence and property suites. Each returns the number of
//! cases checked and the largest deviation seen, or a description of the
//! first failure.

use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestCaseError, TestRng, TestRunner};
use rand::{Rng, RngCore};

use ssod_core::augment::{augment_pseudo_stream, letterbox_sample, mixup, mosaic, AugmentConfig, LabeledBox, Sample};
use ssod_core::detector::toy::{ToyConfig, ToyDetector};
use ssod_core::detector::{ema_update, synth_generate, Detector, ParamVector, SynthDomainConfig};
use ssod_core::fusion::{weighted_boxes_fusion, Detection, WbfParams};
use ssod_core::geometry::{clip_box, iou, letterbox, AffineBoxTransform, BBox};
use ssod_core::image::Image;
use ssod_core::metrics::{average_precision, map_scores, GroundTruthBox, ImageDetections, ImageGroundTruth};
use ssod_core::rng::stream;

use crate::oracle::{self, RawBox, RawDet};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuiteReport {
    pub cases: usize,
    pub max_error: f64,
}

fn to_core(d: &RawDet) -> Detection<f64> {
    Detection::new(BBox::new(d.b[0], d.b[1], d.b[2], d.b[3]), d.class, d.conf)
}

fn random_conf<R: Rng>(rng: &mut R) -> f64 {
    // a share of quantized confidences exercises the tie-breaking rules
    if rng.random_bool(0.25) {
        rng.random_range(1..=10) as f64 / 10.0
    } else {
        rng.random_range(0.01..1.0)
    }
}

fn jitter<R: Rng>(rng: &mut R, b: &RawBox, amount: f64) -> RawBox {
    let (w, h) = (b[2] - b[0], b[3] - b[1]);
    let mut out = [
        b[0] + rng.random_range(-amount..=amount) * w,
        b[1] + rng.random_range(-amount..=amount) * h,
        b[2] + rng.random_range(-amount..=amount) * w,
        b[3] + rng.random_range(-amount..=amount) * h,
    ];
    if out[2] <= out[0] {
        out[2] = out[0] + 0.5;
    }
    if out[3] <= out[1] {
        out[3] = out[1] + 0.5;
    }
    out
}

fn random_box<R: Rng>(rng: &mut R) -> RawBox {
    let (x, y) = (rng.random_range(0.0..90.0), rng.random_range(0.0..90.0));
    let (w, h) = (rng.random_range(4.0..30.0), rng.random_range(4.0..30.0));
    [x, y, x + w, y + h]
}

/// Random instance with at most 20 boxes, 3 classes and 3 sources.
pub fn random_wbf_instance<R: Rng>(rng: &mut R) -> (Vec<Vec<RawDet>>, f64, f64) {
    let n_sources = rng.random_range(1..=3);
    let n_classes = rng.random_range(1..=3);
    let objects: Vec<RawBox> = (0..rng.random_range(1..=4)).map(|_| random_box(rng)).collect();
    let mut sources = vec![Vec::new(); n_sources];
    for _ in 0..rng.random_range(0..=20) {
        let obj = &objects[rng.random_range(0..objects.len())];
        let d = RawDet {
            b: jitter(rng, obj, 0.2),
            class: rng.random_range(0..n_classes),
            conf: random_conf(rng),
        };
        sources[rng.random_range(0..n_sources)].push(d);
    }
    let thr = rng.random_range(0.3..0.9);
    let skip = if rng.random_bool(0.5) { 0.0 } else { rng.random_range(0.0..0.5) };
    (sources, thr, skip)
}

pub fn wbf_equivalence(instances: usize, seed: u64) -> Result<SuiteReport, String> {
    let mut rng = stream(seed, &[1]);
    let mut max_error: f64 = 0.0;
    for case in 0..instances {
        let (sources, thr, skip) = random_wbf_instance(&mut rng);
        let expected = oracle::wbf(&sources, thr, skip);
        let core_sources: Vec<Vec<Detection<f64>>> = sources.iter().map(|s| s.iter().map(to_core).collect()).collect();
        let got = weighted_boxes_fusion(&core_sources, WbfParams { iou_thresh: thr, skip_conf: skip });
        if got.len() != expected.len() {
            return Err(format!("instance {case}: {} fused boxes, oracle has {}", got.len(), expected.len()));
        }
        for (g, e) in got.iter().zip(&expected) {
            if g.class_id != e.class || g.cluster_size != e.members {
                return Err(format!("instance {case}: got {g:?}, oracle {e:?}"));
            }
            let coords = [g.bbox.x1, g.bbox.y1, g.bbox.x2, g.bbox.y2];
            let err = coords
                .iter()
                .zip(&e.b)
                .map(|(a, b)| (a - b).abs())
                .fold((g.confidence - e.conf).abs(), f64::max);
            max_error = max_error.max(err);
            if err > 1e-9 {
                return Err(format!("instance {case}: deviation {err:e}: got {g:?}, oracle {e:?}"));
            }
        }
    }
    Ok(SuiteReport { cases: instances, max_error })
}

/// Per-image detections, per-image ground truth and the class count.
pub type MapInstance = (Vec<Vec<RawDet>>, Vec<Vec<(RawBox, usize)>>, usize);

/// Random instance with at most 5 images, 3 classes and 10 detections per image.
pub fn random_map_instance<R: Rng>(rng: &mut R) -> MapInstance {
    let n_images = rng.random_range(1..=5);
    let n_classes = rng.random_range(1..=3);
    let mut preds = Vec::new();
    let mut gts = Vec::new();
    for _ in 0..n_images {
        let g: Vec<(RawBox, usize)> = (0..rng.random_range(0..=4))
            .map(|_| (random_box(rng), rng.random_range(0..n_classes)))
            .collect();
        let mut p = Vec::new();
        for _ in 0..rng.random_range(0..=10) {
            let (b, class) = if !g.is_empty() && rng.random_bool(0.7) {
                let (gb, gc) = g[rng.random_range(0..g.len())];
                let c = if rng.random_bool(0.85) { gc } else { rng.random_range(0..n_classes) };
                let amount = rng.random_range(0.0..0.25);
                (jitter(rng, &gb, amount), c)
            } else {
                (random_box(rng), rng.random_range(0..n_classes))
            };
            p.push(RawDet { b, class, conf: random_conf(rng) });
        }
        preds.push(p);
        gts.push(g);
    }
    (preds, gts, n_classes)
}

pub fn core_inputs(
    preds: &[Vec<RawDet>],
    gts: &[Vec<(RawBox, usize)>],
) -> (Vec<ImageDetections<f64>>, Vec<ImageGroundTruth<f64>>) {
    let p = preds
        .iter()
        .enumerate()
        .map(|(i, d)| ImageDetections {
            image_id: format!("img{i}"),
            detections: d.iter().map(to_core).collect(),
        })
        .collect();
    let g = gts
        .iter()
        .enumerate()
        .map(|(i, b)| ImageGroundTruth {
            image_id: format!("img{i}"),
            boxes: b
                .iter()
                .map(|(r, c)| GroundTruthBox {
                    bbox: BBox::new(r[0], r[1], r[2], r[3]),
                    class_id: *c,
                })
                .collect(),
        })
        .collect();
    (p, g)
}

pub fn map_equivalence(instances: usize, seed: u64) -> Result<SuiteReport, String> {
    let mut rng = stream(seed, &[2]);
    let mut max_error: f64 = 0.0;
    for case in 0..instances {
        let (preds, gts, n_classes) = random_map_instance(&mut rng);
        let expected = oracle::map_scores(&preds, &gts, n_classes);
        let (p, g) = core_inputs(&preds, &gts);
        let got = map_scores(&p, &g, n_classes).map_err(|e| format!("instance {case}: {e}"))?;
        let classes: Vec<usize> = got.per_class_ap50.keys().copied().collect();
        let expected_classes: Vec<usize> = expected.per_class.iter().map(|c| c.0).collect();
        if classes != expected_classes {
            return Err(format!("instance {case}: evaluated classes {classes:?}, oracle {expected_classes:?}"));
        }
        let mut err = (got.map50 - expected.map50).abs().max((got.map50_95 - expected.map50_95).abs());
        for &(c, ap50, ap) in &expected.per_class {
            err = err.max((got.per_class_ap50[&c] - ap50).abs());
            err = err.max((got.per_class_ap50_95[&c] - ap).abs());
        }
        max_error = max_error.max(err);
        if err > 1e-9 {
            return Err(format!("instance {case}: deviation {err:e}; got {got:?}, oracle {expected:?}"));
        }
    }
    Ok(SuiteReport { cases: instances, max_error })
}

/// Flags `[TP, FP, TP]` with two ground-truth boxes.
pub fn ap_hand_example() -> Result<f64, String> {
    let ap = average_precision::<f64>(&[true, false, true], 2).ok_or("no AP for n_gt = 2")?;
    if ap == 5.0 / 6.0 {
        Ok(ap)
    } else {
        Err(format!("AP = {ap:.17}, expected 5/6"))
    }
}

fn runner(cases: u32) -> TestRunner {
    let cfg = Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    };
    TestRunner::new_with_rng(cfg, TestRng::deterministic_rng(RngAlgorithm::ChaCha))
}

fn check<S: Strategy>(
    name: &str,
    cases: u32,
    strategy: S,
    test: impl Fn(S::Value) -> Result<(), TestCaseError>,
) -> Result<usize, String> {
    runner(cases)
        .run(&strategy, test)
        .map_err(|e| format!("{name}: {e}"))?;
    Ok(cases as usize)
}

fn in_frame_box(w: f64, h: f64) -> impl Strategy<Value = BBox<f64>> {
    (0.0..=w, 0.0..=w, 0.0..=h, 0.0..=h).prop_map(|(a, b, c, d)| BBox::from_corners(a, c, b, d))
}

fn any_box() -> impl Strategy<Value = BBox<f64>> {
    (-50.0..150.0f64, -50.0..150.0f64, 0.0..80.0f64, 0.0..80.0f64).prop_map(|(x, y, w, h)| BBox::new(x, y, x + w, y + h))
}

fn random_image<R: Rng>(rng: &mut R, w: usize, h: usize) -> Image {
    let data = (0..w * h * 3).map(|_| rng.random_range(0.0..=1.0)).collect();
    Image::from_data(w, h, 3, data).expect("shape matches data")
}

/// A sample whose boxes lie inside the image.
pub fn random_sample<R: Rng>(rng: &mut R, w: usize, h: usize, n_boxes: usize) -> Sample {
    let boxes = (0..n_boxes)
        .map(|_| {
            let (x1, x2) = (rng.random_range(0.0..w as f64), rng.random_range(0.0..w as f64));
            let (y1, y2) = (rng.random_range(0.0..h as f64), rng.random_range(0.0..h as f64));
            let mut b = BBox::from_corners(x1, y1, x2, y2);
            b.x2 = b.x2.max(b.x1 + 1e-3).min(w as f64);
            b.y2 = b.y2.max(b.y1 + 1e-3).min(h as f64);
            LabeledBox::new(b, rng.random_range(0..3), rng.random_range(0.05..=1.0))
        })
        .collect();
    Sample {
        id: format!("s{}", rng.next_u32()),
        image: random_image(rng, w, h),
        boxes,
        domain: "test".into(),
        labeled: false,
    }
}

fn bounded(s: &Sample) -> Result<(), TestCaseError> {
    prop_assert!(s.boxes_in_bounds(), "box outside {}x{}: {:?}", s.width(), s.height(), s.boxes);
    Ok(())
}

/// Geometry and augmentation invariants; `scale` multiplies every case count.
pub fn geometry_augment_properties(scale: u32) -> Result<SuiteReport, String> {
    let mut cases = 0;
    let mut max_error: f64 = 0.0;
    let err_cell = std::cell::Cell::new(0.0f64);

    cases += check("iou symmetry and bounds", 2000 * scale, (any_box(), any_box()), |(a, b)| {
        let (ab, ba) = (iou(&a, &b), iou(&b, &a));
        prop_assert_eq!(ab, ba);
        prop_assert!((0.0..=1.0).contains(&ab));
        if a.area() > 0.0 {
            prop_assert_eq!(iou(&a, &a), 1.0);
        }
        Ok(())
    })?;

    cases += check("clip_box", 1000 * scale, (any_box(), 1.0..100.0f64, 1.0..100.0f64), |(b, w, h)| {
        match clip_box(&b, w, h) {
            Some(c) => {
                prop_assert!(c.x1 >= 0.0 && c.y1 >= 0.0 && c.x2 <= w && c.y2 <= h && c.area() > 0.0);
                prop_assert!(c.x1 >= b.x1 && c.y1 >= b.y1 && c.x2 <= b.x2 && c.y2 <= b.y2);
            }
            None => {
                let frame = BBox::new(0.0, 0.0, w, h);
                prop_assert_eq!(b.intersection(&frame), 0.0);
            }
        }
        Ok(())
    })?;

    let transform = (
        0.1..10.0f64,
        0.1..10.0f64,
        -100.0..100.0f64,
        -100.0..100.0f64,
        any::<bool>(),
        any::<bool>(),
        1.0..1000.0f64,
        1.0..1000.0f64,
    )
        .prop_map(|(sx, sy, ox, oy, fh, fv, fw, fhh)| AffineBoxTransform {
            scale_x: sx,
            scale_y: sy,
            offset_x: ox,
            offset_y: oy,
            flip_h: fh,
            flip_v: fv,
            frame_w: fw,
            frame_h: fhh,
        });
    cases += check(
        "transform round trip",
        2000 * scale,
        (transform, in_frame_box(1000.0, 1000.0)),
        |(t, b)| {
            let back = t.invert().apply(&t.apply(&b));
            let e = back.max_abs_diff(&b);
            err_cell.set(err_cell.get().max(e));
            prop_assert!(e <= 1e-9, "round trip error {e:e}: {b:?} -> {back:?}");
            Ok(())
        },
    )?;

    cases += check(
        "letterbox rule",
        2000 * scale,
        (1usize..5000, 1usize..5000, 1usize..2000),
        |(w, h, target)| {
            let lb = letterbox::<f64>(w, h, target);
            let t = lb.transform;
            let longer = w.max(h);
            prop_assert_eq!(t.scale_x, t.scale_y);
            prop_assert_eq!(t.scale_x, target as f64 / longer as f64);
            let expect = |side: usize| if side == longer { target } else { side * target / longer };
            prop_assert_eq!((lb.content_w, lb.content_h), (expect(w), expect(h)));
            prop_assert_eq!(t.offset_x, ((target - lb.content_w) / 2) as f64);
            prop_assert_eq!(t.offset_y, ((target - lb.content_h) / 2) as f64);
            prop_assert!(!t.flip_h && !t.flip_v);
            let full = t.apply(&BBox::new(0.0, 0.0, w as f64, h as f64));
            let tf = target as f64;
            prop_assert!(full.x1 >= 0.0 && full.y1 >= 0.0 && full.x2 <= tf + 1e-9 && full.y2 <= tf + 1e-9);
            Ok(())
        },
    )?;

    cases += check(
        "letterbox_sample",
        1000 * scale,
        (1usize..40, 1usize..40, 4usize..48, any::<u64>(), 0usize..5),
        |(w, h, target, seed, n)| {
            let mut rng = stream(seed, &[]);
            let s = random_sample(&mut rng, w, h, n);
            let out = letterbox_sample(&s, target);
            prop_assert_eq!((out.width(), out.height()), (target, target));
            bounded(&out)?;
            prop_assert_eq!(out.boxes.len(), s.boxes.len());
            let inv = letterbox::<f64>(w, h, target).transform.invert();
            for (a, b) in s.boxes.iter().zip(&out.boxes) {
                let e = inv.apply(&b.bbox).max_abs_diff(&a.bbox);
                prop_assert!(e <= 1e-6, "restored box off by {e:e}");
                prop_assert_eq!(a.weight, b.weight);
            }
            Ok(())
        },
    )?;

    let aug = AugmentConfig::default();
    cases += check(
        "mosaic",
        1000 * scale,
        (8usize..33, any::<u64>(), any::<u64>()),
        |(target, data_seed, seed)| {
            let mut rng = stream(data_seed, &[]);
            let four: Vec<Sample> = (0..4)
                .map(|_| {
                    let n = rng.random_range(0..5);
                    random_sample(&mut rng, target, target, n)
                })
                .collect();
            let refs = [&four[0], &four[1], &four[2], &four[3]];
            let a = mosaic(refs, target, &aug, &mut stream(seed, &[])).map_err(|e| TestCaseError::fail(e.to_string()))?;
            let b = mosaic(refs, target, &aug, &mut stream(seed, &[])).map_err(|e| TestCaseError::fail(e.to_string()))?;
            prop_assert_eq!(&a, &b);
            prop_assert_eq!((a.width(), a.height()), (target, target));
            bounded(&a)?;
            let input: f64 = four.iter().map(Sample::total_weight).sum();
            prop_assert!(a.total_weight() <= input + 1e-12);
            prop_assert!(a.boxes.len() <= four.iter().map(|s| s.boxes.len()).sum::<usize>());
            Ok(())
        },
    )?;

    cases += check(
        "mixup",
        1000 * scale,
        (1usize..24, 1usize..24, any::<u64>(), any::<u64>()),
        |(w, h, data_seed, seed)| {
            let mut rng = stream(data_seed, &[]);
            let (n1, n2) = (rng.random_range(0..4), rng.random_range(0..4));
            let a = random_sample(&mut rng, w, h, n1);
            let b = random_sample(&mut rng, w, h, n2);
            let m1 = mixup(&a, &b, &aug, &mut stream(seed, &[])).map_err(|e| TestCaseError::fail(e.to_string()))?;
            let m2 = mixup(&a, &b, &aug, &mut stream(seed, &[])).map_err(|e| TestCaseError::fail(e.to_string()))?;
            prop_assert_eq!(&m1, &m2);
            bounded(&m1)?;
            prop_assert_eq!(m1.boxes.len(), a.boxes.len() + b.boxes.len());
            for bx in &m1.boxes {
                prop_assert!(bx.weight >= aug.mixup_min_weight && bx.weight <= 1.0);
            }
            let same = mixup(&a, &a, &aug, &mut stream(seed, &[])).map_err(|e| TestCaseError::fail(e.to_string()))?;
            let e = same.image.data.iter().zip(&a.image.data).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            prop_assert!(e <= 1e-12, "mixup of a sample with itself changed pixels by {e:e}");
            Ok(())
        },
    )?;

    cases += check(
        "pseudo stream",
        500 * scale,
        (8usize..25, 1usize..7, any::<u64>(), any::<u64>()),
        |(target, n, data_seed, seed)| {
            let mut rng = stream(data_seed, &[]);
            let samples: Vec<Sample> = (0..n)
                .map(|_| {
                    let k = rng.random_range(0..4);
                    random_sample(&mut rng, target, target, k)
                })
                .collect();
            let a = augment_pseudo_stream(&samples, target, &aug, &mut stream(seed, &[]))
                .map_err(|e| TestCaseError::fail(e.to_string()))?;
            let b = augment_pseudo_stream(&samples, target, &aug, &mut stream(seed, &[]))
                .map_err(|e| TestCaseError::fail(e.to_string()))?;
            prop_assert_eq!(&a, &b);
            prop_assert_eq!(a.len(), n);
            for s in &a {
                prop_assert_eq!((s.width(), s.height()), (target, target));
                bounded(s)?;
            }
            Ok(())
        },
    )?;

    max_error = max_error.max(err_cell.get());
    Ok(SuiteReport { cases, max_error })
}

/// EMA fixed point, endpoints, geometric convergence and the two-step example.
pub fn ema_properties(instances: usize, seed: u64) -> Result<SuiteReport, String> {
    let mut rng = stream(seed, &[3]);
    let mut max_error: f64 = 0.0;
    let ema = |t: &ParamVector<f64>, s: &ParamVector<f64>, d: f64| ema_update(t, s, d).map_err(|e| e.to_string());
    for case in 0..instances {
        let n = rng.random_range(1..64);
        let mut vec = || ParamVector::new((0..n).map(|_| rng.random_range(-100.0..100.0)).collect());
        let (t0, s) = (vec(), vec());
        let decay = rng.random_range(0.0..=1.0);
        if ema(&t0, &t0, decay)?.values.iter().zip(&t0.values).any(|(a, b)| a.to_bits() != b.to_bits()) {
            return Err(format!("instance {case}: ema(t, t) != t at decay {decay}"));
        }
        if ema(&t0, &s, 0.0)? != s || ema(&t0, &s, 1.0)? != t0 {
            return Err(format!("instance {case}: decay endpoints do not return student / teacher"));
        }
        let d0 = t0.max_abs_diff(&s);
        let mut t = t0.clone();
        for step in 1..=50 {
            t = ema(&t, &s, decay)?;
            let bound = decay.powi(step) * d0;
            let dist = t.max_abs_diff(&s);
            max_error = max_error.max(dist - bound);
            if dist > bound + 1e-12 * (1.0 + d0) {
                return Err(format!("instance {case}: step {step} distance {dist:e} exceeds bound {bound:e}"));
            }
        }
    }
    let once = ema(&ParamVector::new(vec![1.0]), &ParamVector::new(vec![0.0]), 0.9)?;
    let twice = ema(&once, &ParamVector::new(vec![0.0]), 0.9)?;
    let e = (twice.values[0] - 0.81).abs();
    if e > 1e-12 {
        return Err(format!("two-step example gave {}, expected 0.81", twice.values[0]));
    }
    Ok(SuiteReport { cases: instances + 1, max_error: max_error.max(e) })
}

pub fn gradient_check_config() -> ToyConfig {
    ToyConfig {
        image_size: 24,
        anchors: [8, 12],
        stride: 4,
        ..ToyConfig::default()
    }
}

/// Analytic toy gradients against central finite differences with step `1e-5`.
pub fn gradient_check(batches: usize, seed: u64) -> Result<SuiteReport, String> {
    const H: f64 = 1e-5;
    let mut rng = stream(seed, &[4]);
    let mut max_error: f64 = 0.0;
    let world = SynthDomainConfig {
        image_size: 24,
        box_min: 6,
        box_max: 12,
        objects_max: 3,
        ..SynthDomainConfig::default()
    };
    for case in 0..batches {
        let cfg = ToyConfig {
            positive_weight: rng.random_range(1.0..5.0),
            ..gradient_check_config()
        };
        let mut det = ToyDetector::new(cfg.clone()).map_err(|e| e.to_string())?;
        let params: Vec<f64> = (0..cfg.n_params()).map(|_| rng.random_range(-1.5..1.5)).collect();
        det.set_params(&ParamVector::new(params.clone())).map_err(|e| e.to_string())?;
        let size = rng.random_range(1..=3);
        let ds = synth_generate(&SynthDomainConfig { seed: rng.next_u64(), ..world.clone() }, size).map_err(|e| e.to_string())?;
        let mut batch = ds.samples;
        for s in &mut batch {
            for b in &mut s.boxes {
                b.weight = rng.random_range(0.05..=1.0);
            }
        }
        let (_, grad) = det.loss_and_grad(&batch).map_err(|e| e.to_string())?;
        for i in 0..params.len() {
            let mut at = |delta: f64| -> Result<f64, String> {
                let mut p = params.clone();
                p[i] += delta;
                det.set_params(&ParamVector::new(p)).map_err(|e| e.to_string())?;
                det.loss(&batch).map_err(|e| e.to_string())
            };
            let numeric = (at(H)? - at(-H)?) / (2.0 * H);
            let rel = (grad[i] - numeric).abs() / grad[i].abs().max(numeric.abs()).max(1e-8);
            max_error = max_error.max(rel);
            if rel > 1e-4 {
                return Err(format!(
                    "batch {case}, parameter {i}: analytic {:e}, numeric {numeric:e}, relative error {rel:e}",
                    grad[i]
                ));
            }
        }
    }
    Ok(SuiteReport { cases: batches, max_error })
}
