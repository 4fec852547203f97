//! One-to-one greedy IoU matching between predictions and ground truth,
//! following the COCO protocol including its ignore semantics.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{box_iou, BBox, CrownInstance, SizeClass};

pub const DEFAULT_MAX_DETECTIONS: usize = 300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IouKind {
    #[default]
    Mask,
    Box,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchConfig {
    pub iou_threshold: f64,
    pub iou_kind: IouKind,
    pub size_filter: Option<SizeClass>,
    pub max_detections: usize,
    /// Metres per pixel, used to derive crown areas for size filtering.
    pub gsd: f64,
}

impl MatchConfig {
    pub fn new(iou_threshold: f64) -> Self {
        Self {
            iou_threshold,
            iou_kind: IouKind::Mask,
            size_filter: None,
            max_detections: DEFAULT_MAX_DETECTIONS,
            gsd: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.iou_threshold > 0.0 && self.iou_threshold <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "IoU threshold {} outside (0, 1]",
                self.iou_threshold
            )));
        }
        if self.max_detections == 0 {
            return Err(Error::InvalidConfig("max_detections must be >= 1".into()));
        }
        if !(self.gsd > 0.0) {
            return Err(Error::InvalidConfig("gsd must be > 0".into()));
        }
        Ok(())
    }
}

/// Sparse prediction × ground-truth IoU table plus prediction scores.
///
/// Only pairs with positive IoU are stored. Built once per (tile, IoU kind)
/// and reused across thresholds and size classes.
#[derive(Debug, Clone, PartialEq)]
pub struct PairTable {
    scores: Vec<f64>,
    /// Per prediction: `(gt index, iou)` sorted by gt index.
    candidates: Vec<Vec<(usize, f64)>>,
    n_gt: usize,
}

fn geometry_iou(kind: IouKind, p: &CrownInstance, pb: &BBox, g: &CrownInstance, gb: &BBox) -> f64 {
    if !pb.intersects(gb) {
        return 0.0;
    }
    match kind {
        IouKind::Box => box_iou(pb, gb),
        IouKind::Mask => p.mask().iou(g.mask()).unwrap_or(0.0),
    }
}

impl PairTable {
    pub fn build(preds: &[CrownInstance], gts: &[CrownInstance], kind: IouKind) -> Self {
        let gt_boxes: Vec<BBox> = gts.iter().map(|g| g.bbox()).collect();
        let row = |p: &CrownInstance| {
            let pb = p.bbox();
            gts.iter()
                .zip(&gt_boxes)
                .enumerate()
                .filter_map(|(j, (g, gb))| {
                    let iou = geometry_iou(kind, p, &pb, g, gb);
                    (iou > 0.0).then_some((j, iou))
                })
                .collect::<Vec<_>>()
        };
        #[cfg(feature = "parallel")]
        let candidates = {
            use rayon::prelude::*;
            preds.par_iter().map(row).collect()
        };
        #[cfg(not(feature = "parallel"))]
        let candidates = preds.iter().map(row).collect();
        Self {
            scores: preds.iter().map(|p| p.score()).collect(),
            candidates,
            n_gt: gts.len(),
        }
    }

    /// Table from a dense IoU matrix (`ious[pred][gt]`).
    pub fn from_dense(scores: Vec<f64>, ious: &[Vec<f64>], n_gt: usize) -> Self {
        assert_eq!(scores.len(), ious.len());
        let candidates = ious
            .iter()
            .map(|row| {
                assert_eq!(row.len(), n_gt);
                row.iter()
                    .enumerate()
                    .filter(|(_, &v)| v > 0.0)
                    .map(|(j, &v)| (j, v))
                    .collect()
            })
            .collect();
        Self {
            scores,
            candidates,
            n_gt,
        }
    }

    pub fn n_pred(&self) -> usize {
        self.scores.len()
    }

    pub fn n_gt(&self) -> usize {
        self.n_gt
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn candidates(&self, pred: usize) -> &[(usize, f64)] {
        &self.candidates[pred]
    }

    pub fn iou(&self, pred: usize, gt: usize) -> f64 {
        let row = &self.candidates[pred];
        row.binary_search_by_key(&gt, |&(j, _)| j)
            .map(|k| row[k].1)
            .unwrap_or(0.0)
    }

    pub fn best_iou(&self, pred: usize) -> f64 {
        self.candidates[pred].iter().map(|&(_, v)| v).fold(0.0, f64::max)
    }

    /// Processing order: score descending, then best available IoU
    /// descending, then input order.
    pub fn order(&self) -> Vec<usize> {
        let best: Vec<f64> = (0..self.n_pred()).map(|i| self.best_iou(i)).collect();
        let mut idx: Vec<usize> = (0..self.n_pred()).collect();
        idx.sort_by(|&a, &b| {
            self.scores[b]
                .total_cmp(&self.scores[a])
                .then_with(|| best[b].total_cmp(&best[a]))
                .then_with(|| a.cmp(&b))
        });
        idx
    }

    /// Restrict to a subset of predictions (indices into this table); the
    /// result is indexed by position in `keep`.
    pub fn select(&self, keep: &[usize]) -> PairTable {
        PairTable {
            scores: keep.iter().map(|&i| self.scores[i]).collect(),
            candidates: keep.iter().map(|&i| self.candidates[i].clone()).collect(),
            n_gt: self.n_gt,
        }
    }
}

/// Ignore flags produced by size stratification.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Stratification {
    pub gt_ignored: Vec<bool>,
    /// Predictions whose own area falls outside the class; dropped when unmatched.
    pub pred_out_of_range: Vec<bool>,
}

impl Stratification {
    pub fn none(n_pred: usize, n_gt: usize) -> Self {
        Self {
            gt_ignored: vec![false; n_gt],
            pred_out_of_range: vec![false; n_pred],
        }
    }

    pub fn from_areas(pred_areas_m2: &[f64], gt_areas_m2: &[f64], class: SizeClass) -> Self {
        Self {
            gt_ignored: gt_areas_m2.iter().map(|&a| !class.contains(a)).collect(),
            pred_out_of_range: pred_areas_m2.iter().map(|&a| !class.contains(a)).collect(),
        }
    }

    pub fn in_class_gts(&self) -> usize {
        self.gt_ignored.iter().filter(|&&i| !i).count()
    }

    pub fn in_class_preds(&self) -> usize {
        self.pred_out_of_range.iter().filter(|&&i| !i).count()
    }
}

/// Flag ground truths outside `class` as ignored and mark out-of-range predictions.
pub fn stratify(preds: &[CrownInstance], gts: &[CrownInstance], class: SizeClass, gsd: f64) -> Stratification {
    let pa: Vec<f64> = preds.iter().map(|p| p.area_m2(gsd)).collect();
    let ga: Vec<f64> = gts.iter().map(|g| g.area_m2(gsd)).collect();
    Stratification::from_areas(&pa, &ga, class)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchedPair {
    pub pred: usize,
    pub gt: usize,
    pub iou: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub matched: Vec<MatchedPair>,
    pub false_positives: Vec<usize>,
    pub false_negatives: Vec<usize>,
    pub ignored_predictions: Vec<usize>,
    pub ignored_gts: Vec<usize>,
    /// Predictions beyond the `max_detections` cap, never evaluated.
    pub truncated: Vec<usize>,
    /// Evaluated predictions in processing order.
    pub ranked: Vec<usize>,
}

impl MatchResult {
    pub fn tp(&self) -> usize {
        self.matched.len()
    }

    pub fn fp(&self) -> usize {
        self.false_positives.len()
    }

    pub fn fn_count(&self) -> usize {
        self.false_negatives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tp() + self.fp() + self.fn_count() == 0
    }
}

fn pick(
    cands: &[(usize, f64)],
    tau: f64,
    taken: &[bool],
    ignored: &[bool],
    want_ignored: bool,
) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for &(g, iou) in cands {
        if iou < tau || taken[g] || ignored[g] != want_ignored {
            continue;
        }
        match best {
            Some((_, b)) if iou.partial_cmp(&b) != Some(Ordering::Greater) => {}
            _ => best = Some((g, iou)),
        }
    }
    best
}

/// Greedy matching over a prepared table.
///
/// Predictions are visited in [`PairTable::order`], truncated to
/// `max_detections`. Each takes the highest-IoU unmatched in-class GT with
/// IoU ≥ `tau`; failing that the highest-IoU unmatched ignored GT (and is
/// itself ignored); failing that it is a false positive unless its own area
/// is outside the stratum, in which case it is ignored.
pub fn match_table(table: &PairTable, strat: Option<&Stratification>, tau: f64, max_detections: usize) -> MatchResult {
    let none;
    let strat = match strat {
        Some(s) => s,
        None => {
            none = Stratification::none(table.n_pred(), table.n_gt());
            &none
        }
    };
    let order = table.order();
    let cut = order.len().min(max_detections);
    let mut taken = vec![false; table.n_gt()];
    let mut out = MatchResult {
        truncated: order[cut..].to_vec(),
        ranked: order[..cut].to_vec(),
        ..Default::default()
    };
    for &p in &order[..cut] {
        let cands = table.candidates(p);
        if let Some((g, iou)) = pick(cands, tau, &taken, &strat.gt_ignored, false) {
            taken[g] = true;
            out.matched.push(MatchedPair { pred: p, gt: g, iou });
        } else if let Some((g, _)) = pick(cands, tau, &taken, &strat.gt_ignored, true) {
            taken[g] = true;
            out.ignored_predictions.push(p);
        } else if strat.pred_out_of_range[p] {
            out.ignored_predictions.push(p);
        } else {
            out.false_positives.push(p);
        }
    }
    for (g, &t) in taken.iter().enumerate() {
        if strat.gt_ignored[g] {
            out.ignored_gts.push(g);
        } else if !t {
            out.false_negatives.push(g);
        }
    }
    out.truncated.sort_unstable();
    out
}

/// Match raw instances under `cfg`.
pub fn greedy_match(preds: &[CrownInstance], gts: &[CrownInstance], cfg: &MatchConfig) -> Result<MatchResult> {
    cfg.validate()?;
    let table = PairTable::build(preds, gts, cfg.iou_kind);
    let strat = cfg.size_filter.map(|c| stratify(preds, gts, c, cfg.gsd));
    Ok(match_table(
        &table,
        strat.as_ref(),
        cfg.iou_threshold,
        cfg.max_detections,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{BinaryMask, PixelRect, Polygon, Source};

    fn gt_square(x: f64, y: f64, n: f64) -> CrownInstance {
        CrownInstance::ground_truth(Polygon::rect(x, y, x + n, y + n).unwrap()).unwrap()
    }

    fn pred_square(x: i64, y: i64, n: i64, score: f64) -> CrownInstance {
        CrownInstance::prediction(BinaryMask::filled(PixelRect::new(x, y, n, n)), score).unwrap()
    }

    #[test]
    fn identical_sets_fully_match() {
        let gts: Vec<_> = (0..4).map(|i| gt_square(i as f64 * 20.0, 0.0, 10.0)).collect();
        let preds: Vec<_> = gts.iter().map(|g| g.clone().with_source(Source::Prediction)).collect();
        for tau in [0.5, 0.75, 1.0] {
            let r = greedy_match(&preds, &gts, &MatchConfig::new(tau)).unwrap();
            assert_eq!(r.tp(), 4);
            assert_eq!(r.fp() + r.fn_count(), 0);
        }
    }

    #[test]
    fn no_predictions_all_false_negatives() {
        let gts: Vec<_> = (0..5).map(|i| gt_square(i as f64 * 20.0, 0.0, 10.0)).collect();
        let r = greedy_match(&[], &gts, &MatchConfig::new(0.5)).unwrap();
        assert_eq!(r.fn_count(), 5);
        assert_eq!(r.tp(), 0);
    }

    #[test]
    fn higher_score_claims_shared_gt() {
        let t = PairTable::from_dense(vec![0.6, 0.9], &[vec![0.8], vec![0.7]], 1);
        let r = match_table(&t, None, 0.5, 300);
        assert_eq!(
            r.matched,
            vec![MatchedPair {
                pred: 1,
                gt: 0,
                iou: 0.7
            }]
        );
        assert_eq!(r.false_positives, vec![0]);
    }

    #[test]
    fn equal_scores_break_on_best_iou() {
        let t = PairTable::from_dense(vec![0.5, 0.5], &[vec![0.6], vec![0.9]], 1);
        let r = match_table(&t, None, 0.5, 300);
        assert_eq!(r.matched[0].pred, 1);
    }

    #[test]
    fn cap_truncates_lowest_scores() {
        let t = PairTable::from_dense(vec![0.1, 0.9, 0.5], &[vec![], vec![], vec![]], 0);
        let r = match_table(&t, None, 0.5, 2);
        assert_eq!(r.truncated, vec![0]);
        assert_eq!(r.false_positives, vec![1, 2]);
    }

    #[test]
    fn stratified_giant_gt_tiny_pred() {
        // 40×40 px at gsd 0.3 → 144 m² (Giant); 6×6 px → 3.24 m² (Tiny)
        let gsd = 0.3;
        let gts = vec![gt_square(0.0, 0.0, 40.0)];
        let preds = vec![pred_square(100, 100, 6, 0.9)];
        let strat = stratify(&preds, &gts, SizeClass::Tiny, gsd);
        assert_eq!(strat.gt_ignored, vec![true]);
        assert_eq!(strat.pred_out_of_range, vec![false]);
        let mut cfg = MatchConfig::new(0.5);
        cfg.size_filter = Some(SizeClass::Tiny);
        cfg.gsd = gsd;
        let r = greedy_match(&preds, &gts, &cfg).unwrap();
        // nothing in-class to match → the tiny prediction is a false positive
        assert_eq!(r.false_positives, vec![0]);
        assert_eq!(r.ignored_gts, vec![0]);
        assert!(r.false_negatives.is_empty());

        // overlapping the ignored giant instead: absorbed, neither TP nor FP
        let preds = vec![pred_square(0, 0, 38, 0.9)];
        cfg.size_filter = Some(SizeClass::Giant);
        let r = greedy_match(&preds, &gts, &cfg).unwrap();
        assert_eq!(r.tp(), 1);
        cfg.size_filter = Some(SizeClass::Tiny);
        let r = greedy_match(&preds, &gts, &cfg).unwrap();
        assert_eq!(r.ignored_predictions, vec![0]);
        assert!(r.is_empty());
    }

    #[test]
    fn empty_stratum_is_empty_result() {
        let gts = vec![gt_square(0.0, 0.0, 40.0)];
        let preds = vec![pred_square(0, 0, 40, 0.9)];
        let mut cfg = MatchConfig::new(0.5);
        cfg.size_filter = Some(SizeClass::Small);
        cfg.gsd = 0.3;
        let r = greedy_match(&preds, &gts, &cfg).unwrap();
        assert!(r.is_empty());
        assert_eq!(r.ignored_predictions, vec![0]);
    }

    #[test]
    fn config_validation() {
        assert!(greedy_match(&[], &[], &MatchConfig::new(0.0)).is_err());
        assert!(greedy_match(&[], &[], &MatchConfig::new(1.2)).is_err());
        let mut c = MatchConfig::new(0.5);
        c.max_detections = 0;
        assert!(greedy_match(&[], &[], &c).is_err());
    }
}
