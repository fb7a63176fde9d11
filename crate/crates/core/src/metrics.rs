//! Per-class Dice and panoptic quality.
//!
//! Panoptic quality treats each vertebra label as its own category with at
//! most one instance per image:
//!
//! ```text
//! PQ = sum(IoU over matched pairs) / (TP + FP/2 + FN/2)
//! ```
//!
//! where a prediction and a ground-truth segment match when their IoU is
//! strictly above the threshold. Tallies pool over images by summation.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{rasterize, ContourSet, MaskGrid};
use crate::labeling::{LabeledSpine, VertebraLabel};

pub const DEFAULT_THRESHOLDS: [f64; 2] = [0.7, 0.8];

/// `2|A n B| / (|A| + |B|)`; 1 when both are empty.
pub fn dice(pred: &MaskGrid, gt: &MaskGrid) -> Result<f64> {
    let inter = pred.intersection_area(gt)?;
    let total = pred.area() + gt.area();
    if total == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / total as f64)
}

/// Intersection over union; 1 when both are empty.
pub fn iou(a: &MaskGrid, b: &MaskGrid) -> Result<f64> {
    let inter = a.intersection_area(b)?;
    let union = a.union_area(b)?;
    if union == 0 {
        return Ok(1.0);
    }
    Ok(inter as f64 / union as f64)
}

/// Union of the masks of all contours carrying each label.
fn masks_by_label(set: &ContourSet) -> Result<BTreeMap<VertebraLabel, MaskGrid>> {
    let mut out: BTreeMap<VertebraLabel, MaskGrid> = BTreeMap::new();
    for c in &set.contours {
        let Some(label) = c.label else { continue };
        let m = rasterize(c, &set.frame)?;
        let merged = match out.remove(&label) {
            Some(prev) => prev.union(&m)?,
            None => m,
        };
        out.insert(label, merged);
    }
    Ok(out)
}

/// Dice for every label present in the ground truth. A label missing from
/// the prediction scores 0.
pub fn per_class_dice(
    pred: &ContourSet,
    gt: &ContourSet,
) -> Result<BTreeMap<VertebraLabel, f64>> {
    pred.frame.check_same_lattice(&gt.frame)?;
    let pm = masks_by_label(pred)?;
    let gm = masks_by_label(gt)?;
    let empty = MaskGrid::empty(gt.frame.width, gt.frame.height);
    gm.iter()
        .map(|(label, g)| Ok((*label, dice(pm.get(label).unwrap_or(&empty), g)?)))
        .collect()
}

pub fn per_class_dice_spines(
    pred: &LabeledSpine,
    gt: &LabeledSpine,
) -> Result<BTreeMap<VertebraLabel, f64>> {
    per_class_dice(&pred.to_contour_set(), &gt.to_contour_set())
}

/// Unweighted mean; 0 for an empty map.
pub fn mean_dice(per_class: &BTreeMap<VertebraLabel, f64>) -> f64 {
    if per_class.is_empty() {
        return 0.0;
    }
    per_class.values().sum::<f64>() / per_class.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchedPair {
    pub pred: usize,
    pub gt: usize,
    pub iou: f64,
}

/// One-to-one matching of predicted to ground-truth segments.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceMatch {
    /// Sorted by ground-truth index.
    pub pairs: Vec<MatchedPair>,
    pub unmatched_predictions: Vec<usize>,
    pub unmatched_ground_truth: Vec<usize>,
    pub threshold: f64,
}

fn check_threshold(threshold: f64) -> Result<()> {
    if threshold > 0.0 && threshold <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidThreshold(threshold))
    }
}

/// Greedy matching in descending IoU, keeping pairs with IoU above the
/// threshold. For thresholds of at least 0.5 a segment can exceed the
/// threshold with at most one partner, so greedy equals optimal.
pub fn match_masks(pred: &[MaskGrid], gt: &[MaskGrid], threshold: f64) -> Result<InstanceMatch> {
    check_threshold(threshold)?;
    let mut candidates = Vec::new();
    for (p, pm) in pred.iter().enumerate() {
        for (g, gm) in gt.iter().enumerate() {
            let v = iou(pm, gm)?;
            if v > threshold {
                candidates.push(MatchedPair { pred: p, gt: g, iou: v });
            }
        }
    }
    candidates.sort_by(|a, b| {
        b.iou
            .total_cmp(&a.iou)
            .then(a.gt.cmp(&b.gt))
            .then(a.pred.cmp(&b.pred))
    });
    let mut pred_used = vec![false; pred.len()];
    let mut gt_used = vec![false; gt.len()];
    let mut pairs = Vec::new();
    for c in candidates {
        if pred_used[c.pred] || gt_used[c.gt] {
            continue;
        }
        pred_used[c.pred] = true;
        gt_used[c.gt] = true;
        pairs.push(c);
    }
    pairs.sort_by_key(|p| p.gt);
    let unmatched = |used: &[bool]| {
        used.iter()
            .enumerate()
            .filter(|(_, &u)| !u)
            .map(|(i, _)| i)
            .collect::<Vec<_>>()
    };
    Ok(InstanceMatch {
        pairs,
        unmatched_predictions: unmatched(&pred_used),
        unmatched_ground_truth: unmatched(&gt_used),
        threshold,
    })
}

pub fn match_instances(pred: &ContourSet, gt: &ContourSet, threshold: f64) -> Result<InstanceMatch> {
    check_threshold(threshold)?;
    pred.frame.check_same_lattice(&gt.frame)?;
    match_masks(&pred.masks()?, &gt.masks()?, threshold)
}

/// Matched/unmatched counts and the IoU sum of matched pairs.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PqTally {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub iou_sum: f64,
}

impl PqTally {
    pub fn of(m: &InstanceMatch) -> Self {
        Self {
            tp: m.pairs.len(),
            fp: m.unmatched_predictions.len(),
            fn_: m.unmatched_ground_truth.len(),
            iou_sum: m.pairs.iter().map(|p| p.iou).sum(),
        }
    }

    pub fn merge(&mut self, other: &PqTally) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
        self.iou_sum += other.iou_sum;
    }

    /// 1 when there is nothing to match on either side.
    pub fn pq(&self) -> f64 {
        let denom = self.tp as f64 + 0.5 * self.fp as f64 + 0.5 * self.fn_ as f64;
        if denom == 0.0 {
            1.0
        } else {
            self.iou_sum / denom
        }
    }
}

pub fn panoptic_quality(m: &InstanceMatch) -> f64 {
    PqTally::of(m).pq()
}

/// Label-wise tallies at one threshold. Unlabeled predictions are ignored.
pub fn per_class_pq(
    pred: &ContourSet,
    gt: &ContourSet,
    threshold: f64,
) -> Result<BTreeMap<VertebraLabel, PqTally>> {
    check_threshold(threshold)?;
    pred.frame.check_same_lattice(&gt.frame)?;
    let pm = pred.masks()?;
    let gm = gt.masks()?;
    let labels: BTreeSet<VertebraLabel> = pred
        .contours
        .iter()
        .chain(&gt.contours)
        .filter_map(|c| c.label)
        .collect();
    let mut out = BTreeMap::new();
    for label in labels {
        let pick = |set: &ContourSet, masks: &[MaskGrid]| -> Vec<MaskGrid> {
            set.contours
                .iter()
                .zip(masks)
                .filter(|(c, _)| c.label == Some(label))
                .map(|(_, m)| m.clone())
                .collect()
        };
        let m = match_masks(&pick(pred, &pm), &pick(gt, &gm), threshold)?;
        out.insert(label, PqTally::of(&m));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DiceTally {
    pub sum: f64,
    pub images: usize,
}

impl DiceTally {
    pub fn mean(&self) -> f64 {
        if self.images == 0 {
            0.0
        } else {
            self.sum / self.images as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ThresholdReport {
    pub threshold: f64,
    pub per_class: BTreeMap<VertebraLabel, PqTally>,
}

impl ThresholdReport {
    pub fn overall(&self) -> PqTally {
        let mut t = PqTally::default();
        for v in self.per_class.values() {
            t.merge(v);
        }
        t
    }
}

/// Pooled evaluation over one or more images.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvaluationReport {
    pub images: usize,
    pub dice: BTreeMap<VertebraLabel, DiceTally>,
    pub thresholds: Vec<ThresholdReport>,
}

impl EvaluationReport {
    pub fn per_class_dice(&self) -> BTreeMap<VertebraLabel, f64> {
        self.dice.iter().map(|(l, t)| (*l, t.mean())).collect()
    }

    /// Unweighted mean over classes present in the ground truth.
    pub fn mean_dice(&self) -> f64 {
        mean_dice(&self.per_class_dice())
    }

    pub fn panoptic_quality(&self, threshold: f64) -> Option<BTreeMap<VertebraLabel, f64>> {
        self.thresholds
            .iter()
            .find(|t| t.threshold == threshold)
            .map(|t| t.per_class.iter().map(|(l, v)| (*l, v.pq())).collect())
    }

    /// Sums tallies from another report computed at the same thresholds.
    pub fn merge(&mut self, other: &EvaluationReport) -> Result<()> {
        if self.images == 0 && self.thresholds.is_empty() {
            *self = other.clone();
            return Ok(());
        }
        let same = self.thresholds.len() == other.thresholds.len()
            && self
                .thresholds
                .iter()
                .zip(&other.thresholds)
                .all(|(a, b)| a.threshold == b.threshold);
        if !same {
            return Err(Error::Format("cannot merge reports with different thresholds".into()));
        }
        self.images += other.images;
        for (l, t) in &other.dice {
            let e = self.dice.entry(*l).or_default();
            e.sum += t.sum;
            e.images += t.images;
        }
        for (mine, theirs) in self.thresholds.iter_mut().zip(&other.thresholds) {
            for (l, t) in &theirs.per_class {
                mine.per_class.entry(*l).or_default().merge(t);
            }
        }
        Ok(())
    }
}

pub fn evaluate(pred: &ContourSet, gt: &ContourSet, thresholds: &[f64]) -> Result<EvaluationReport> {
    for &t in thresholds {
        check_threshold(t)?;
    }
    let dice = per_class_dice(pred, gt)?
        .into_iter()
        .map(|(l, d)| (l, DiceTally { sum: d, images: 1 }))
        .collect();
    let thresholds = thresholds
        .iter()
        .map(|&t| {
            Ok(ThresholdReport {
                threshold: t,
                per_class: per_class_pq(pred, gt, t)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvaluationReport {
        images: 1,
        dice,
        thresholds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Contour, ImageFrame, Source};
    use VertebraLabel::*;

    fn sq(x: f64, y: f64, s: f64) -> MaskGrid {
        let f = ImageFrame::new(60, 60, "t").unwrap();
        rasterize(&Contour::rect(x, y, x + s, y + s, Source::GroundTruth).unwrap(), &f).unwrap()
    }

    fn labeled(rects: &[(f64, f64, f64, f64, Option<VertebraLabel>)]) -> ContourSet {
        let f = ImageFrame::new(60, 60, "t").unwrap();
        let cs = rects
            .iter()
            .map(|&(x, y, w, h, l)| {
                Contour::rect(x, y, x + w, y + h, Source::GroundTruth)
                    .unwrap()
                    .with_label(l)
            })
            .collect();
        ContourSet::new(f, Source::GroundTruth, cs).unwrap()
    }

    #[test]
    fn dice_examples() {
        let a = sq(0.0, 0.0, 10.0);
        assert_eq!(dice(&a, &a).unwrap(), 1.0);
        assert_eq!(dice(&a, &sq(30.0, 30.0, 10.0)).unwrap(), 0.0);
        assert_eq!(dice(&a, &sq(5.0, 0.0, 10.0)).unwrap(), 0.5);
        let e = MaskGrid::empty(60, 60);
        assert_eq!(dice(&e, &e).unwrap(), 1.0);
        assert_eq!(dice(&a, &e).unwrap(), 0.0);
        assert!(dice(&a, &MaskGrid::empty(10, 10)).is_err());
    }

    #[test]
    fn per_class_dice_missing_label_scores_zero() {
        let gt = labeled(&[
            (0.0, 0.0, 10.0, 10.0, Some(L1)),
            (0.0, 20.0, 10.0, 10.0, Some(L2)),
        ]);
        let pred = labeled(&[(0.0, 20.0, 10.0, 10.0, Some(L2)), (0.0, 0.0, 10.0, 10.0, None)]);
        let d = per_class_dice(&pred, &gt).unwrap();
        assert_eq!(d[&L1], 0.0);
        assert_eq!(d[&L2], 1.0);
        assert_eq!(mean_dice(&d), 0.5);
        let perfect = per_class_dice(&gt, &gt).unwrap();
        assert!(perfect.values().all(|&v| v == 1.0));
    }

    #[test]
    fn matching_examples() {
        let gt = vec![sq(0.0, 0.0, 10.0), sq(20.0, 0.0, 10.0), sq(40.0, 0.0, 10.0)];
        let m = match_masks(&gt, &gt, 0.8).unwrap();
        assert_eq!(m.pairs.len(), 3);
        assert!(m.pairs.iter().all(|p| p.iou == 1.0));
        assert_eq!(panoptic_quality(&m), 1.0);

        let m = match_masks(&[], &gt[..2], 0.7).unwrap();
        assert!(m.pairs.is_empty());
        assert_eq!(m.unmatched_ground_truth, vec![0, 1]);
        assert_eq!(panoptic_quality(&m), 0.0);

        assert!(matches!(
            match_masks(&gt, &gt, 0.0),
            Err(Error::InvalidThreshold(_))
        ));
        assert!(match_masks(&gt, &gt, 1.5).is_err());
    }

    #[test]
    fn pq_with_one_miss() {
        let m = InstanceMatch {
            pairs: vec![MatchedPair { pred: 0, gt: 0, iou: 0.8 }],
            unmatched_predictions: vec![],
            unmatched_ground_truth: vec![1],
            threshold: 0.7,
        };
        assert!((panoptic_quality(&m) - 0.8 / 1.5).abs() < 1e-15);
        assert_eq!(PqTally::default().pq(), 1.0);
    }

    #[test]
    fn evaluate_identity_and_merge() {
        let gt = labeled(&[
            (0.0, 0.0, 10.0, 10.0, Some(C2)),
            (0.0, 20.0, 10.0, 10.0, Some(C3)),
        ]);
        let r = evaluate(&gt, &gt, &DEFAULT_THRESHOLDS).unwrap();
        assert_eq!(r.mean_dice(), 1.0);
        for t in DEFAULT_THRESHOLDS {
            assert!(r.panoptic_quality(t).unwrap().values().all(|&v| v == 1.0));
        }
        let mut pooled = EvaluationReport::default();
        pooled.merge(&r).unwrap();
        pooled.merge(&r).unwrap();
        assert_eq!(pooled.images, 2);
        assert_eq!(pooled.thresholds[0].per_class[&C2].tp, 2);
        assert_eq!(pooled.mean_dice(), 1.0);
    }
}
