use proptest::prelude::*;
use ssod_core::fusion::{nms, weighted_boxes_fusion, Detection, WbfParams};
use ssod_core::geometry::{iou, BBox};
use ssod_core::rng::stream;
use ssod_testkit::suites::{ema_properties, geometry_augment_properties, random_wbf_instance};

#[test]
fn geometry_and_augmentation_invariants() {
    let r = geometry_augment_properties(1).unwrap();
    assert!(r.cases >= 10_000, "{} cases", r.cases);
    assert!(r.max_error <= 1e-9);
}

#[test]
fn ema_invariants() {
    let r = ema_properties(2000, 0).unwrap();
    assert!(r.max_error <= 1e-12);
}

fn det() -> impl Strategy<Value = Detection<f64>> {
    (0.0..80.0f64, 0.0..80.0f64, 1.0..30.0f64, 1.0..30.0f64, 0usize..3, 0.01..1.0f64)
        .prop_map(|(x, y, w, h, c, p)| Detection::new(BBox::new(x, y, x + w, y + h), c, p))
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 1000, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn nms_keeps_a_separated_subset(dets in prop::collection::vec(det(), 0..25), thr in 0.1..1.0f64) {
        let kept = nms(&dets, thr);
        for k in &kept {
            prop_assert!(dets.contains(k));
        }
        for (i, a) in kept.iter().enumerate() {
            for b in &kept[i + 1..] {
                prop_assert!(a.class_id != b.class_id || iou(&a.bbox, &b.bbox) < thr);
            }
        }
    }

    #[test]
    fn single_source_at_threshold_one_keeps_every_distinct_box(dets in prop::collection::vec(det(), 0..20)) {
        let out = weighted_boxes_fusion(std::slice::from_ref(&dets), WbfParams { iou_thresh: 1.0 + 1e-9, skip_conf: 0.0 });
        prop_assert_eq!(out.len(), dets.len());
        for f in &out {
            prop_assert_eq!(f.cluster_size, 1);
            prop_assert!(dets.iter().any(|d| d.bbox.max_abs_diff(&f.bbox) < 1e-12 && d.confidence == f.confidence));
        }
    }
}

#[test]
fn fused_confidence_never_exceeds_best_member() {
    let mut rng = stream(5, &[]);
    for _ in 0..2000 {
        let (sources, thr, skip) = random_wbf_instance(&mut rng);
        let core: Vec<Vec<Detection<f64>>> = sources
            .iter()
            .map(|s| s.iter().map(|d| Detection::new(BBox::new(d.b[0], d.b[1], d.b[2], d.b[3]), d.class, d.conf)).collect())
            .collect();
        let best = core.iter().flatten().map(|d| d.confidence).fold(0.0, f64::max);
        for f in weighted_boxes_fusion(&core, WbfParams { iou_thresh: thr, skip_conf: skip }) {
            assert!(f.confidence <= best + 1e-15);
        }
    }
}
