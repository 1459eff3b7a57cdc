//! IoU, greedy detection matching and precision/recall sweeps.
//!
//! Counting is pooled over damage classes: a prediction may match a ground
//! truth box of any class.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::claimstore::{DamageClass, NormalizedBBox};

pub const DEFAULT_IOU_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub image_id: String,
    pub bbox: NormalizedBBox,
    pub class: DamageClass,
    pub confidence: f64,
}

/// Ground-truth damage box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub image_id: String,
    pub bbox: NormalizedBBox,
    pub class: DamageClass,
}

/// Intersection over union in normalized coordinates.
pub fn iou(a: &NormalizedBBox, b: &NormalizedBBox) -> f64 {
    let (ax0, ay0, ax1, ay1) = a.corners();
    let (bx0, by0, bx1, by1) = b.corners();
    let iw = (ax1.min(bx1) - ax0.max(bx0)).max(0.0);
    let ih = (ay1.min(by1) - ay0.max(by0)).max(0.0);
    let inter = iw * ih;
    if inter == 0.0 {
        return 0.0;
    }
    let union = (ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter;
    (inter / union).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchOutcome {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    /// For each prediction (input order), the index of the matched ground truth.
    pub assignment: Vec<Option<usize>>,
}

/// Greedy matching on a single image. Predictions are visited by confidence
/// descending (ties by input order); each takes the unmatched ground truth
/// with the highest IoU at or above `iou_threshold` (ties by lowest index).
pub fn match_detections(
    preds: &[Detection],
    gts: &[Annotation],
    iou_threshold: f64,
) -> Result<MatchOutcome, EvalError> {
    let mut ids = preds
        .iter()
        .map(|p| &p.image_id)
        .chain(gts.iter().map(|g| &g.image_id));
    if let Some(first) = ids.next() {
        if let Some(other) = ids.find(|id| *id != first) {
            return Err(EvalError::MixedImages {
                first: first.clone(),
                other: other.clone(),
            });
        }
    }
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| preds[b].confidence.total_cmp(&preds[a].confidence));
    let mut taken = vec![false; gts.len()];
    let mut assignment = vec![None; preds.len()];
    for p in order {
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if taken[g] {
                continue;
            }
            let o = iou(&preds[p].bbox, &gt.bbox);
            if o >= iou_threshold && best.is_none_or(|(_, b)| o > b) {
                best = Some((g, o));
            }
        }
        if let Some((g, _)) = best {
            taken[g] = true;
            assignment[p] = Some(g);
        }
    }
    let tp = assignment.iter().flatten().count() as u64;
    Ok(MatchOutcome {
        tp,
        fp: preds.len() as u64 - tp,
        fn_: gts.len() as u64 - tp,
        assignment,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub confidence_threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl PrPoint {
    /// Precision is 1 with no predictions; recall is 1 with no ground truth.
    pub fn from_counts(confidence_threshold: f64, tp: u64, fp: u64, fn_: u64) -> Self {
        let ratio = |num: u64, den: u64| {
            if den == 0 {
                1.0
            } else {
                num as f64 / den as f64
            }
        };
        Self {
            confidence_threshold,
            precision: ratio(tp, tp + fp),
            recall: ratio(tp, tp + fn_),
            tp,
            fp,
            fn_,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    pub iou_threshold: f64,
    pub points: Vec<PrPoint>,
}

type Grouped<'a> = Vec<(Vec<Detection>, Vec<Annotation>)>;

fn group_by_image<'a>(
    preds: impl Iterator<Item = &'a Detection>,
    gts: &[Annotation],
) -> Grouped<'a> {
    let mut by_image: BTreeMap<&str, (Vec<Detection>, Vec<Annotation>)> = BTreeMap::new();
    for p in preds {
        by_image.entry(&p.image_id).or_default().0.push(p.clone());
    }
    for g in gts {
        by_image.entry(&g.image_id).or_default().1.push(g.clone());
    }
    by_image.into_values().collect()
}

/// Drops predictions below `confidence_threshold`, matches per image and
/// pools the counts.
pub fn precision_recall_at(
    preds: &[Detection],
    gts: &[Annotation],
    confidence_threshold: f64,
    iou_threshold: f64,
) -> PrPoint {
    let groups = group_by_image(
        preds
            .iter()
            .filter(|p| p.confidence >= confidence_threshold),
        gts,
    );
    let (tp, fp, fn_) = groups
        .par_iter()
        .map(|(p, g)| {
            let m = match_detections(p, g, iou_threshold).expect("grouped by image");
            (m.tp, m.fp, m.fn_)
        })
        .reduce(|| (0, 0, 0), |a, b| (a.0 + b.0, a.1 + b.1, a.2 + b.2));
    PrPoint::from_counts(confidence_threshold, tp, fp, fn_)
}

pub fn pr_curve(
    preds: &[Detection],
    gts: &[Annotation],
    iou_threshold: f64,
    thresholds: &[f64],
) -> Result<PrCurve, EvalError> {
    // negated so NaN is rejected too
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    if let Some(w) = thresholds.windows(2).find(|w| !(w[0] < w[1])) {
        return Err(EvalError::Invalid(format!(
            "confidence thresholds must be strictly ascending, got {} then {}",
            w[0], w[1]
        )));
    }
    if !(0.0..=1.0).contains(&iou_threshold) {
        return Err(EvalError::Invalid(format!(
            "iou threshold {iou_threshold} outside [0, 1]"
        )));
    }
    Ok(PrCurve {
        iou_threshold,
        points: thresholds
            .iter()
            .map(|&t| precision_recall_at(preds, gts, t, iou_threshold))
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bx(cx: f64, cy: f64, w: f64, h: f64) -> NormalizedBBox {
        NormalizedBBox::new(cx, cy, w, h).unwrap()
    }

    fn det(img: &str, b: NormalizedBBox, conf: f64) -> Detection {
        Detection {
            image_id: img.into(),
            bbox: b,
            class: DamageClass::Dent,
            confidence: conf,
        }
    }

    fn gt(img: &str, b: NormalizedBBox) -> Annotation {
        Annotation {
            image_id: img.into(),
            bbox: b,
            class: DamageClass::Dent,
        }
    }

    #[test]
    fn iou_examples() {
        let a = bx(0.5, 0.5, 0.2, 0.2);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &bx(0.1, 0.1, 0.1, 0.1)), 0.0);
        // pixel corners (0,0)-(2,2) and (1,1)-(3,3) in a 4x4 frame
        let p = NormalizedBBox::from_pixel_corners(0.0, 0.0, 2.0, 2.0, 4, 4).unwrap();
        let q = NormalizedBBox::from_pixel_corners(1.0, 1.0, 3.0, 3.0, 4, 4).unwrap();
        assert!((iou(&p, &q) - 1.0 / 7.0).abs() < 1e-12);
    }

    #[test]
    fn single_perfect_match() {
        let b = bx(0.5, 0.5, 0.4, 0.4);
        let m = match_detections(&[det("i", b, 0.9)], &[gt("i", b)], 0.5).unwrap();
        assert_eq!((m.tp, m.fp, m.fn_), (1, 0, 0));
        assert_eq!(m.assignment, [Some(0)]);
    }

    #[test]
    fn higher_confidence_wins_the_single_gt() {
        let b = bx(0.5, 0.5, 0.4, 0.4);
        // listed low-confidence first to show ordering is by confidence
        let preds = [det("i", b, 0.8), det("i", bx(0.51, 0.5, 0.4, 0.4), 0.9)];
        let m = match_detections(&preds, &[gt("i", b)], 0.5).unwrap();
        assert_eq!((m.tp, m.fp, m.fn_), (1, 1, 0));
        assert_eq!(m.assignment, [None, Some(0)]);
    }

    #[test]
    fn low_overlap_is_fp_and_fn() {
        let a = bx(0.3, 0.5, 0.4, 0.4);
        let b = bx(0.6, 0.5, 0.4, 0.4);
        assert!(iou(&a, &b) < 0.5);
        let m = match_detections(&[det("i", a, 0.9)], &[gt("i", b)], 0.5).unwrap();
        assert_eq!((m.tp, m.fp, m.fn_), (0, 1, 1));
    }

    #[test]
    fn mixed_images_rejected() {
        let b = bx(0.5, 0.5, 0.4, 0.4);
        assert!(matches!(
            match_detections(&[det("a", b, 0.9)], &[gt("b", b)], 0.5),
            Err(EvalError::MixedImages { .. })
        ));
    }

    #[test]
    fn pr_conventions() {
        let b = bx(0.5, 0.5, 0.4, 0.4);
        let preds = [det("a", b, 0.7), det("b", b, 0.4)];
        let gts = [gt("a", b), gt("b", b)];
        let p = precision_recall_at(&preds, &gts, 0.4, 0.5);
        assert_eq!((p.precision, p.recall), (1.0, 1.0));
        let p = precision_recall_at(&preds, &gts, 0.95, 0.5);
        assert_eq!((p.precision, p.recall, p.fn_), (1.0, 0.0, 2));
        let curve = pr_curve(&preds, &gts, 0.5, &[0.1, 0.5, 0.9]).unwrap();
        assert!(curve.points.iter().all(|p| p.precision == 1.0));
        assert_eq!(
            curve.points.iter().map(|p| p.recall).collect::<Vec<_>>(),
            [1.0, 0.5, 0.0]
        );
        assert!(pr_curve(&preds, &gts, 0.5, &[0.5, 0.1]).is_err());
    }

    fn arb_box() -> impl Strategy<Value = NormalizedBBox> {
        (0.1f64..0.9, 0.1f64..0.9, 0.05f64..0.5, 0.05f64..0.5)
            .prop_map(|(cx, cy, w, h)| NormalizedBBox::new(cx, cy, w, h).unwrap())
    }

    proptest! {
        #[test]
        fn iou_properties(a in arb_box(), b in arb_box()) {
            let x = iou(&a, &b);
            prop_assert!((0.0..=1.0).contains(&x));
            prop_assert_eq!(x, iou(&b, &a));
            prop_assert!((iou(&a, &a) - 1.0).abs() < 1e-12);
        }

        #[test]
        fn recall_nonincreasing_in_threshold(
            preds in proptest::collection::vec((0usize..3, arb_box(), 0.0f64..1.0), 0..20),
            gts in proptest::collection::vec((0usize..3, arb_box()), 0..10),
            mut ts in proptest::collection::btree_set(0u32..100, 1..8),
        ) {
            let preds: Vec<_> = preds.into_iter().map(|(i, b, c)| det(&i.to_string(), b, c)).collect();
            let gts: Vec<_> = gts.into_iter().map(|(i, b)| gt(&i.to_string(), b)).collect();
            let ts: Vec<f64> = std::mem::take(&mut ts).into_iter().map(|t| t as f64 / 100.0).collect();
            let c = pr_curve(&preds, &gts, 0.5, &ts).unwrap();
            for w in c.points.windows(2) {
                prop_assert!(w[1].recall <= w[0].recall);
                prop_assert!(w[1].tp <= w[0].tp);
            }
            for p in &c.points {
                prop_assert_eq!(p.tp + p.fn_, gts.len() as u64);
            }
        }
    }
}
