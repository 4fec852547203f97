//! Raster-level evaluation: tile predictions are merged into the orthomosaic
//! frame by NMS, then scored with one-to-one matching as RF1 at each IoU
//! threshold and its mean over the threshold set (mRF1).

mod aggregate;
mod optimize;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CrownInstance, SizeClass};
use crate::matching::{match_table, IouKind, MatchResult, PairTable, Stratification};
use crate::tile_metrics::ThresholdSet;

pub use aggregate::{aggregate_tiles, nms, AggregationConfig, EdgePolicy, FilterOrder, TileLayout};
pub use optimize::{
    optimize_thresholds, write_audit_csv, GridCell, Objective, OptimizationResult, ThresholdGrid, ValidationRaster,
};

/// Match counts and derived scores at one IoU threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rf1 {
    pub iou: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Rf1 {
    pub fn from_counts(iou: f64, tp: usize, fp: usize, fn_: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        // 2·TP / (|preds| + |gts|), zero when nothing matched
        let f1 = if tp == 0 {
            0.0
        } else {
            (2 * tp) as f64 / ((tp + fp) + (tp + fn_)) as f64
        };
        Self {
            iou,
            tp,
            fp,
            fn_,
            precision: ratio(tp, tp + fp),
            recall: ratio(tp, tp + fn_),
            f1,
        }
    }
}

/// RF1 at every threshold of a set plus their mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rf1Curve {
    pub mrf1: f64,
    pub per_threshold: Vec<Rf1>,
}

impl Rf1Curve {
    fn from_scores(per_threshold: Vec<Rf1>) -> Self {
        let mrf1 = per_threshold.iter().map(|r| r.f1).sum::<f64>() / per_threshold.len() as f64;
        Self { mrf1, per_threshold }
    }

    pub fn at(&self, iou: f64) -> Option<&Rf1> {
        self.per_threshold.iter().find(|r| (r.iou - iou).abs() < 1e-9)
    }

    pub fn rf1_50(&self) -> Option<f64> {
        self.at(0.5).map(|r| r.f1)
    }

    pub fn rf1_75(&self) -> Option<f64> {
        self.at(0.75).map(|r| r.f1)
    }
}

/// Raster-level scores, overall and per size class. `None` marks a stratum
/// with neither predictions nor ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RasterScore {
    pub thresholds: Vec<f64>,
    pub all: Option<Rf1Curve>,
    pub per_class: BTreeMap<SizeClass, Option<Rf1Curve>>,
}

impl RasterScore {
    pub fn mrf1(&self) -> Option<f64> {
        self.all.as_ref().map(|c| c.mrf1)
    }

    pub fn class_mrf1(&self, class: SizeClass) -> Option<f64> {
        self.per_class.get(&class).and_then(|c| c.as_ref().map(|c| c.mrf1))
    }
}

/// Predictions and ground truth of one raster, prepared for repeated scoring.
#[derive(Debug, Clone)]
pub struct RasterCase {
    table: PairTable,
    pred_area_m2: Vec<f64>,
    gt_area_m2: Vec<f64>,
}

impl RasterCase {
    pub fn new(preds: &[CrownInstance], gts: &[CrownInstance], gsd: f64, kind: IouKind) -> Result<Self> {
        if !(gsd > 0.0) {
            return Err(Error::InvalidConfig("gsd must be > 0".into()));
        }
        Ok(Self {
            table: PairTable::build(preds, gts, kind),
            pred_area_m2: preds.iter().map(|p| p.area_m2(gsd)).collect(),
            gt_area_m2: gts.iter().map(|g| g.area_m2(gsd)).collect(),
        })
    }

    pub(crate) fn from_parts(table: PairTable, pred_area_m2: Vec<f64>, gt_area_m2: Vec<f64>) -> Self {
        Self {
            table,
            pred_area_m2,
            gt_area_m2,
        }
    }

    fn stratification(&self, class: Option<SizeClass>) -> Option<Stratification> {
        class.map(|c| Stratification::from_areas(&self.pred_area_m2, &self.gt_area_m2, c))
    }

    /// Whether the stratum has any prediction or ground truth at all.
    fn populated(&self, strat: Option<&Stratification>) -> bool {
        match strat {
            None => self.table.n_pred() + self.table.n_gt() > 0,
            Some(s) => s.in_class_gts() + s.in_class_preds() > 0,
        }
    }

    pub fn match_at(&self, tau: f64, size_filter: Option<SizeClass>) -> MatchResult {
        let strat = self.stratification(size_filter);
        match_table(&self.table, strat.as_ref(), tau, usize::MAX)
    }
}

/// Scores pooled over rasters: counts are summed per threshold before F1.
pub fn pooled_curve(
    cases: &[RasterCase],
    thresholds: &ThresholdSet,
    size_filter: Option<SizeClass>,
) -> Option<Rf1Curve> {
    let strats: Vec<_> = cases.iter().map(|c| c.stratification(size_filter)).collect();
    let populated = cases.iter().zip(&strats).any(|(c, s)| c.populated(s.as_ref()));
    if !populated {
        return None;
    }
    let per = thresholds
        .values()
        .iter()
        .map(|&tau| {
            let (mut tp, mut fp, mut fn_) = (0, 0, 0);
            for (c, s) in cases.iter().zip(&strats) {
                let r = match_table(&c.table, s.as_ref(), tau, usize::MAX);
                tp += r.tp();
                fp += r.fp();
                fn_ += r.fn_count();
            }
            Rf1::from_counts(tau, tp, fp, fn_)
        })
        .collect();
    Some(Rf1Curve::from_scores(per))
}

pub fn pooled_score(cases: &[RasterCase], thresholds: &ThresholdSet) -> RasterScore {
    let per_class = SizeClass::ALL
        .into_iter()
        .map(|c| (c, pooled_curve(cases, thresholds, Some(c))))
        .collect();
    RasterScore {
        thresholds: thresholds.values().to_vec(),
        all: pooled_curve(cases, thresholds, None),
        per_class,
    }
}

/// Precision, recall and F1 at one threshold; `None` when the stratum is empty.
pub fn rf1(
    preds: &[CrownInstance],
    gts: &[CrownInstance],
    tau: f64,
    size_filter: Option<SizeClass>,
    gsd: f64,
) -> Result<Option<Rf1>> {
    let t = ThresholdSet::new(vec![tau])?;
    Ok(mrf1(preds, gts, &t, size_filter, gsd)?.map(|c| c.per_threshold[0]))
}

/// Mean RF1 over `thresholds` for one stratum.
pub fn mrf1(
    preds: &[CrownInstance],
    gts: &[CrownInstance],
    thresholds: &ThresholdSet,
    size_filter: Option<SizeClass>,
    gsd: f64,
) -> Result<Option<Rf1Curve>> {
    if thresholds.is_empty() {
        return Err(Error::InvalidConfig("empty threshold set".into()));
    }
    let case = RasterCase::new(preds, gts, gsd, IouKind::Mask)?;
    Ok(pooled_curve(std::slice::from_ref(&case), thresholds, size_filter))
}

/// Overall and per-class RF1 curves for one raster.
pub fn raster_score(
    preds: &[CrownInstance],
    gts: &[CrownInstance],
    thresholds: &ThresholdSet,
    gsd: f64,
) -> Result<RasterScore> {
    let case = RasterCase::new(preds, gts, gsd, IouKind::Mask)?;
    Ok(pooled_score(std::slice::from_ref(&case), thresholds))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{BinaryMask, PixelRect, Source};

    fn sq(x: i64, y: i64, w: i64, h: i64) -> BinaryMask {
        BinaryMask::filled(PixelRect::new(x, y, w, h))
    }

    fn gt(m: BinaryMask) -> CrownInstance {
        CrownInstance::from_mask(m, 1.0, Source::GroundTruth).unwrap()
    }

    fn pred(m: BinaryMask, s: f64) -> CrownInstance {
        CrownInstance::prediction(m, s).unwrap()
    }

    #[test]
    fn perfect_predictions() {
        let gts: Vec<_> = (0..5).map(|i| gt(sq(i * 30, 0, 20, 20))).collect();
        let preds: Vec<_> = (0..5).map(|i| pred(sq(i * 30, 0, 20, 20), 0.9)).collect();
        let c = mrf1(&preds, &gts, &ThresholdSet::coco(), None, 0.1).unwrap().unwrap();
        assert_eq!(c.mrf1, 1.0);
        assert_eq!(c.rf1_50(), Some(1.0));
        assert_eq!(c.rf1_75(), Some(1.0));
    }

    #[test]
    fn two_tp_two_fp_two_fn() {
        let gts: Vec<_> = (0..4).map(|i| gt(sq(i * 30, 0, 20, 20))).collect();
        let preds = vec![
            pred(sq(0, 0, 20, 20), 0.9),
            pred(sq(30, 0, 20, 20), 0.9),
            pred(sq(0, 100, 20, 20), 0.9),
            pred(sq(30, 100, 20, 20), 0.9),
        ];
        let r = rf1(&preds, &gts, 0.5, None, 0.1).unwrap().unwrap();
        assert_eq!((r.tp, r.fp, r.fn_), (2, 2, 2));
        assert_eq!((r.precision, r.recall, r.f1), (0.5, 0.5, 0.5));
    }

    #[test]
    fn survives_exactly_half_the_thresholds() {
        // 50×50 GT vs 50×36 pred: IoU = 0.72 → matched for τ ≤ 0.70 only
        let gts = vec![gt(sq(0, 0, 50, 50))];
        let preds = vec![pred(sq(0, 0, 50, 36), 0.8)];
        let iou = preds[0].mask().iou(gts[0].mask()).unwrap();
        assert!((iou - 0.72).abs() < 1e-12);
        let c = mrf1(&preds, &gts, &ThresholdSet::coco(), None, 0.1).unwrap().unwrap();
        let f1s: Vec<f64> = c.per_threshold.iter().map(|r| r.f1).collect();
        assert_eq!(f1s, vec![1.0, 1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(c.mrf1, 0.5);
    }

    #[test]
    fn empty_strata_are_absent() {
        assert!(mrf1(&[], &[], &ThresholdSet::coco(), None, 0.1).unwrap().is_none());
        let gts = vec![gt(sq(0, 0, 10, 10))];
        // 1 m² only → every class but Tiny is absent
        let s = raster_score(&[], &gts, &ThresholdSet::coco(), 0.1).unwrap();
        assert_eq!(s.class_mrf1(SizeClass::Tiny), Some(0.0));
        assert_eq!(s.class_mrf1(SizeClass::Giant), None);
        assert_eq!(s.mrf1(), Some(0.0));
    }
}
