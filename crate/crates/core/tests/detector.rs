mod common;

use common::*;
use proptest::prelude::*;
use xsal::detector::{iou, match_box, match_index, select_top_box, target_score, BBox, Detection, MatchThresholds};
use xsal::tensor::Image;

fn bx(x1: f64, y1: f64, x2: f64, y2: f64) -> BBox<f64> {
    BBox::new(x1, y1, x2, y2).unwrap()
}

fn det(b: BBox<f64>, score: f64) -> Detection<f64> {
    Detection::new(b, 0, score).unwrap()
}

/// A box sharing `target`'s height whose IoU with `target = (0,0,10,10)` is `q`.
fn box_with_iou(q: f64) -> BBox<f64> {
    // Shift right by s: inter = 10(10-s), union = 10(10+s) → q = (10-s)/(10+s).
    let s = 10.0 * (1.0 - q) / (1.0 + q);
    bx(s, 0.0, 10.0 + s, 10.0)
}

#[test]
fn match_box_exact_duplicate() {
    let target = det(bx(0.0, 0.0, 10.0, 10.0), 0.9);
    let dets = vec![det(bx(20.0, 20.0, 30.0, 30.0), 0.95), target];
    assert_eq!(match_box(&dets, &target, MatchThresholds::default()), Some(target));
}

#[test]
fn match_box_prefers_highest_iou() {
    let target = det(bx(0.0, 0.0, 10.0, 10.0), 0.9);
    let a = det(box_with_iou(0.6), 0.9);
    let b = det(box_with_iou(0.8), 0.3);
    assert!((iou(&a.bbox, &target.bbox) - 0.6).abs() < 1e-12);
    assert!((iou(&b.bbox, &target.bbox) - 0.8).abs() < 1e-12);
    assert_eq!(match_box(&[a, b], &target, MatchThresholds::default()), Some(b));
    assert_eq!(match_box(&[b, a], &target, MatchThresholds::default()), Some(b));
}

#[test]
fn match_box_respects_score_floor() {
    let target = det(bx(0.0, 0.0, 10.0, 10.0), 0.9);
    assert_eq!(match_box(&[det(target.bbox, 0.04)], &target, MatchThresholds::default()), None);
    assert!(match_box(&[det(target.bbox, 0.05)], &target, MatchThresholds::default()).is_some());
}

#[test]
fn match_box_respects_iou_floor() {
    let target = det(bx(0.0, 0.0, 10.0, 10.0), 0.9);
    let under = det(box_with_iou(0.49), 0.9);
    assert_eq!(match_box(&[under], &target, MatchThresholds::default()), None);
    let at = det(bx(0.0, 0.0, 10.0, 5.0), 0.9);
    assert_eq!(iou(&at.bbox, &target.bbox), 0.5);
    assert_eq!(match_box(&[at], &target, MatchThresholds::default()), Some(at));
}

#[test]
fn match_box_ties_break_on_score_then_index() {
    let target = det(bx(0.0, 0.0, 10.0, 10.0), 0.9);
    let low = Detection::new(target.bbox, 1, 0.4).unwrap();
    let high = Detection::new(target.bbox, 2, 0.7).unwrap();
    let twin = Detection::new(target.bbox, 3, 0.7).unwrap();
    assert_eq!(match_index(&[low, high, twin], &target, MatchThresholds::default()), Some(1));
    assert_eq!(match_index(&[twin, low, high], &target, MatchThresholds::default()), Some(0));
}

#[test]
fn select_top_box_examples() {
    let b = bx(0.0, 0.0, 1.0, 1.0);
    let dets: Vec<_> = [0.2, 0.9, 0.4].iter().map(|&s| det(b, s)).collect();
    assert_eq!(select_top_box(&dets).unwrap(), dets[1]);
    let tied = [Detection::new(b, 4, 0.5).unwrap(), Detection::new(b, 5, 0.5).unwrap()];
    assert_eq!(select_top_box(&tied).unwrap().class_id, 4);
}

#[test]
fn target_score_examples() {
    let d = random_micro(16, 16, 1);
    let img = seeded_image(16, 16, 2);
    let top = top_detection(&d, &img);
    assert_eq!(target_score(&d, &img, &top).unwrap(), top.score);

    let b = brightness_micro(16, 16);
    let blob = blob_image(16, 16, 3);
    let t = top_detection(&b, &blob);
    // sigmoid(-3) < 0.05, so the black image re-identifies nothing.
    assert_eq!(target_score(&b, &Image::filled(16, 16, 3, 0.0), &t).unwrap(), 0.0);
    let far = det(bx(200.0, 200.0, 210.0, 210.0), 0.5);
    assert_eq!(target_score(&d, &img, &far).unwrap(), 0.0);
    assert!(target_score(&d, &Image::filled(8, 8, 3, 0.0), &top).is_err());
}

fn arb_box() -> impl Strategy<Value = BBox<f64>> {
    (-50.0f64..50.0, -50.0f64..50.0, 0.1f64..40.0, 0.1f64..40.0).prop_map(|(x, y, w, h)| bx(x, y, x + w, y + h))
}

proptest! {
    #[test]
    fn iou_is_symmetric_and_bounded(a in arb_box(), b in arb_box()) {
        let ab = iou(&a, &b);
        prop_assert_eq!(ab, iou(&b, &a));
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert_eq!(iou(&a, &a), 1.0);
        prop_assert!((ab - ref_iou(&a, &b)).abs() < 1e-12);
    }

    #[test]
    fn match_result_satisfies_thresholds(boxes in prop::collection::vec((arb_box(), 0.0f64..=1.0), 0..12), t in arb_box()) {
        let dets: Vec<_> = boxes.iter().map(|&(b, s)| det(b, s)).collect();
        let target = det(t, 0.5);
        let th = MatchThresholds::default();
        let m = match_index(&dets, &target, th);
        prop_assert_eq!(m, match_index(&dets, &target, th));
        if let Some(i) = m {
            prop_assert!(dets[i].score >= 0.05 && iou(&dets[i].bbox, &t) >= 0.5);
            prop_assert_eq!(dets[i].score, ref_target_score(&dets, &target));
        } else {
            prop_assert_eq!(ref_target_score(&dets, &target), 0.0);
        }
    }
}
