//! COCO-style tile-level metrics: 101-point interpolated AP and recall,
//! pooled over all tiles, at each IoU threshold and per size class.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CrownInstance, SizeClass};
use crate::matching::{match_table, IouKind, PairTable, Stratification};

/// Ordered IoU thresholds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ThresholdSet(Vec<f64>);

impl ThresholdSet {
    /// `{0.50, 0.55, …, 0.95}`.
    pub fn coco() -> Self {
        ThresholdSet((0..10).map(|i| (50 + 5 * i) as f64 / 100.0).collect())
    }

    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidConfig("threshold set is empty".into()));
        }
        if values.iter().any(|&t| !(t > 0.0 && t < 1.0)) {
            return Err(Error::InvalidConfig("thresholds must lie in (0, 1)".into()));
        }
        if values.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidConfig("thresholds must be strictly increasing".into()));
        }
        Ok(ThresholdSet(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl Default for ThresholdSet {
    fn default() -> Self {
        Self::coco()
    }
}

impl TryFrom<Vec<f64>> for ThresholdSet {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        ThresholdSet::new(v)
    }
}

impl From<ThresholdSet> for Vec<f64> {
    fn from(t: ThresholdSet) -> Self {
        t.0
    }
}

pub const RECALL_POINTS: usize = 101;

/// One tile's predictions and ground truth, prepared for repeated matching.
#[derive(Debug, Clone)]
pub struct TileCase {
    pub id: u64,
    table: PairTable,
    pred_area_m2: Vec<f64>,
    gt_area_m2: Vec<f64>,
}

impl TileCase {
    pub fn new(id: u64, preds: &[CrownInstance], gts: &[CrownInstance], gsd: f64, kind: IouKind) -> Self {
        Self {
            id,
            table: PairTable::build(preds, gts, kind),
            pred_area_m2: preds.iter().map(|p| p.area_m2(gsd)).collect(),
            gt_area_m2: gts.iter().map(|g| g.area_m2(gsd)).collect(),
        }
    }

    /// Case from an explicit IoU table; areas drive size stratification.
    pub fn from_table(id: u64, table: PairTable, pred_area_m2: Vec<f64>, gt_area_m2: Vec<f64>) -> Self {
        assert_eq!(table.n_pred(), pred_area_m2.len());
        assert_eq!(table.n_gt(), gt_area_m2.len());
        Self {
            id,
            table,
            pred_area_m2,
            gt_area_m2,
        }
    }

    pub fn table(&self) -> &PairTable {
        &self.table
    }

    fn stratification(&self, class: Option<SizeClass>) -> Option<Stratification> {
        class.map(|c| Stratification::from_areas(&self.pred_area_m2, &self.gt_area_m2, c))
    }
}

#[derive(Debug, Clone, Copy)]
struct Det {
    score: f64,
    tile: u64,
    rank: usize,
    tp: bool,
}

struct Pooled {
    dets: Vec<Det>,
    n_gt: usize,
}

fn pool(cases: &[TileCase], tau: f64, class: Option<SizeClass>, max_det: usize) -> Pooled {
    let mut dets = Vec::new();
    let mut n_gt = 0;
    for case in cases {
        let strat = case.stratification(class);
        let r = match_table(&case.table, strat.as_ref(), tau, max_det);
        n_gt += r.tp() + r.fn_count();
        let mut is_tp = vec![None; case.table.n_pred()];
        for m in &r.matched {
            is_tp[m.pred] = Some(true);
        }
        for &p in &r.false_positives {
            is_tp[p] = Some(false);
        }
        for (rank, &p) in r.ranked.iter().enumerate() {
            if let Some(tp) = is_tp[p] {
                dets.push(Det {
                    score: case.table.scores()[p],
                    tile: case.id,
                    rank,
                    tp,
                });
            }
        }
    }
    dets.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then(a.tile.cmp(&b.tile))
            .then(a.rank.cmp(&b.rank))
    });
    Pooled { dets, n_gt }
}

/// Pooled precision/recall curve at one IoU threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    pub scores: Vec<f64>,
    pub tp_cum: Vec<usize>,
    pub fp_cum: Vec<usize>,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    /// Envelope precision at recall levels `0.00, 0.01, …, 1.00`.
    pub interpolated: Vec<f64>,
    pub n_gt: usize,
}

impl PrCurve {
    fn from_pooled(p: &Pooled) -> PrCurve {
        let n = p.dets.len();
        let mut tp_cum = Vec::with_capacity(n);
        let mut fp_cum = Vec::with_capacity(n);
        let (mut tp, mut fp) = (0usize, 0usize);
        for d in &p.dets {
            if d.tp {
                tp += 1;
            } else {
                fp += 1;
            }
            tp_cum.push(tp);
            fp_cum.push(fp);
        }
        let recall: Vec<f64> = tp_cum
            .iter()
            .map(|&t| if p.n_gt == 0 { 0.0 } else { t as f64 / p.n_gt as f64 })
            .collect();
        let precision: Vec<f64> = tp_cum
            .iter()
            .zip(&fp_cum)
            .map(|(&t, &f)| t as f64 / (t + f) as f64)
            .collect();
        let mut envelope = precision.clone();
        for i in (1..envelope.len()).rev() {
            if envelope[i] > envelope[i - 1] {
                envelope[i - 1] = envelope[i];
            }
        }
        let interpolated = (0..RECALL_POINTS)
            .map(|i| {
                let r = i as f64 * 0.01;
                let k = recall.partition_point(|&x| x < r);
                envelope.get(k).copied().unwrap_or(0.0)
            })
            .collect();
        PrCurve {
            scores: p.dets.iter().map(|d| d.score).collect(),
            tp_cum,
            fp_cum,
            precision,
            recall,
            interpolated,
            n_gt: p.n_gt,
        }
    }

    pub fn average_precision(&self) -> f64 {
        self.interpolated.iter().sum::<f64>() / RECALL_POINTS as f64
    }
}

pub fn pr_curve(cases: &[TileCase], tau: f64, size_filter: Option<SizeClass>, max_det: usize) -> PrCurve {
    PrCurve::from_pooled(&pool(cases, tau, size_filter, max_det))
}

fn ap_from(p: &Pooled, size_filter: Option<SizeClass>) -> Option<f64> {
    if p.n_gt == 0 {
        // no ground truth: a size stratum is absent; overall AP is 0 when
        // there is anything to penalize, absent otherwise
        return (size_filter.is_none() && !p.dets.is_empty()).then_some(0.0);
    }
    Some(PrCurve::from_pooled(p).average_precision())
}

fn recall_from(p: &Pooled) -> Option<f64> {
    (p.n_gt > 0).then(|| p.dets.iter().filter(|d| d.tp).count() as f64 / p.n_gt as f64)
}

/// 101-point interpolated AP at IoU `tau`, detections pooled over tiles.
pub fn average_precision(cases: &[TileCase], tau: f64, size_filter: Option<SizeClass>, max_det: usize) -> Option<f64> {
    ap_from(&pool(cases, tau, size_filter, max_det), size_filter)
}

/// Recall under the detection cap, averaged over `thresholds`.
pub fn average_recall(
    cases: &[TileCase],
    thresholds: &[f64],
    max_det: usize,
    size_filter: Option<SizeClass>,
) -> Option<f64> {
    let vals: Option<Vec<f64>> = thresholds
        .iter()
        .map(|&t| recall_from(&pool(cases, t, size_filter, max_det)))
        .collect();
    vals.filter(|v| !v.is_empty())
        .map(|v| v.iter().sum::<f64>() / v.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdMetrics {
    pub iou: f64,
    pub ap: Option<f64>,
    pub ar: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassTileMetrics {
    pub map: Option<f64>,
    pub mar: Option<f64>,
}

/// Tile-level metric block of a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TileMetrics {
    pub map: Option<f64>,
    pub ap50: Option<f64>,
    pub ap75: Option<f64>,
    pub mar: Option<f64>,
    pub ar50: Option<f64>,
    pub ar75: Option<f64>,
    pub max_detections: usize,
    pub thresholds: Vec<f64>,
    pub per_threshold: Vec<ThresholdMetrics>,
    pub per_class: BTreeMap<SizeClass, ClassTileMetrics>,
}

fn mean(values: &[Option<f64>]) -> Option<f64> {
    let v: Option<Vec<f64>> = values.iter().copied().collect();
    v.filter(|v| !v.is_empty())
        .map(|v| v.iter().sum::<f64>() / v.len() as f64)
}

fn stratum(
    cases: &[TileCase],
    thresholds: &ThresholdSet,
    class: Option<SizeClass>,
    max_det: usize,
) -> Vec<ThresholdMetrics> {
    let eval = |&t: &f64| {
        let p = pool(cases, t, class, max_det);
        ThresholdMetrics {
            iou: t,
            ap: ap_from(&p, class),
            ar: recall_from(&p),
        }
    };
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        thresholds.values().par_iter().map(eval).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        thresholds.values().iter().map(eval).collect()
    }
}

fn at(per: &[ThresholdMetrics], tau: f64) -> Option<&ThresholdMetrics> {
    per.iter().find(|m| (m.iou - tau).abs() < 1e-9)
}

/// mAP/mAR over `thresholds`, AP/AR at 0.50 and 0.75, and per-class mAP/mAR.
pub fn coco_summary(cases: &[TileCase], thresholds: &ThresholdSet, max_det: usize) -> TileMetrics {
    let per = stratum(cases, thresholds, None, max_det);
    let single = |tau: f64| -> ThresholdMetrics {
        at(&per, tau).cloned().unwrap_or_else(|| {
            let p = pool(cases, tau, None, max_det);
            ThresholdMetrics {
                iou: tau,
                ap: ap_from(&p, None),
                ar: recall_from(&p),
            }
        })
    };
    let (m50, m75) = (single(0.5), single(0.75));
    let per_class = SizeClass::ALL
        .into_iter()
        .map(|c| {
            let s = stratum(cases, thresholds, Some(c), max_det);
            let aps: Vec<_> = s.iter().map(|m| m.ap).collect();
            let ars: Vec<_> = s.iter().map(|m| m.ar).collect();
            (
                c,
                ClassTileMetrics {
                    map: mean(&aps),
                    mar: mean(&ars),
                },
            )
        })
        .collect();
    let aps: Vec<_> = per.iter().map(|m| m.ap).collect();
    let ars: Vec<_> = per.iter().map(|m| m.ar).collect();
    TileMetrics {
        map: mean(&aps),
        ap50: m50.ap,
        ap75: m75.ap,
        mar: mean(&ars),
        ar50: m50.ar,
        ar75: m75.ar,
        max_detections: max_det,
        thresholds: thresholds.values().to_vec(),
        per_threshold: per,
        per_class,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn case(id: u64, scores: Vec<f64>, ious: Vec<Vec<f64>>, n_gt: usize) -> TileCase {
        let n = scores.len();
        TileCase::from_table(
            id,
            PairTable::from_dense(scores, &ious, n_gt),
            vec![1.0; n],
            vec![1.0; n_gt],
        )
    }

    #[test]
    fn coco_thresholds() {
        let t = ThresholdSet::coco();
        assert_eq!(t.len(), 10);
        assert_eq!(t.values()[0], 0.5);
        assert_eq!(t.values()[9], 0.95);
        assert!(ThresholdSet::new(vec![0.5, 0.5]).is_err());
        assert!(ThresholdSet::new(vec![]).is_err());
    }

    #[test]
    fn perfect_and_empty() {
        let c = case(0, vec![0.9, 0.8], vec![vec![1.0, 0.0], vec![0.0, 1.0]], 2);
        for t in ThresholdSet::coco().values() {
            assert_eq!(average_precision(std::slice::from_ref(&c), *t, None, 300), Some(1.0));
        }
        let none = case(0, vec![], vec![], 3);
        assert_eq!(
            average_precision(std::slice::from_ref(&none), 0.5, None, 300),
            Some(0.0)
        );
        assert_eq!(average_recall(&[none], &[0.5], 300, None), Some(0.0));
        let nothing = case(0, vec![], vec![], 0);
        assert_eq!(average_precision(&[nothing], 0.5, None, 300), None);
        let fp_only = case(0, vec![0.5], vec![vec![]], 0);
        assert_eq!(
            average_precision(std::slice::from_ref(&fp_only), 0.5, None, 300),
            Some(0.0)
        );
        assert_eq!(average_precision(&[fp_only], 0.5, Some(SizeClass::Tiny), 300), None);
    }

    #[test]
    fn hand_computed_two_tile_curve() {
        // tile 0: 0.9 TP, 0.7 FP; tile 1: 0.8 FP, 0.6 TP; 3 GTs total.
        // pooled: TP FP FP TP → P = 1, 1/2, 1/3, 1/2 ; R = 1/3, 1/3, 1/3, 2/3
        // envelope: 1, 1/2, 1/2, 1/2. Recall levels 0..=0.33 → 1 (34 pts),
        // 0.34..=0.66 → 1/2 (33 pts), rest 0.
        let t0 = case(0, vec![0.9, 0.7], vec![vec![0.8, 0.0], vec![0.2, 0.3]], 2);
        let t1 = case(1, vec![0.8, 0.6], vec![vec![0.0], vec![0.55]], 1);
        let ap = average_precision(&[t0.clone(), t1.clone()], 0.5, None, 300).unwrap();
        let expected = (34.0 * 1.0 + 33.0 * 0.5) / 101.0;
        assert!((ap - expected).abs() < 1e-12, "{ap} vs {expected}");
        // tile order does not matter
        let swapped = average_precision(&[t1, t0], 0.5, None, 300).unwrap();
        assert_eq!(ap, swapped);
    }

    #[test]
    fn half_recall() {
        let c = case(
            0,
            vec![0.9, 0.8],
            vec![vec![1.0, 0.0, 0.0, 0.0], vec![0.0, 1.0, 0.0, 0.0]],
            4,
        );
        let ar = average_recall(&[c], ThresholdSet::coco().values(), 300, None);
        assert_eq!(ar, Some(0.5));
    }

    #[test]
    fn summary_of_constant_ap() {
        let c = case(0, vec![0.9], vec![vec![1.0]], 1);
        let s = coco_summary(&[c], &ThresholdSet::coco(), 300);
        assert_eq!(s.map, Some(1.0));
        assert_eq!(s.ap50, Some(1.0));
        assert_eq!(s.mar, Some(1.0));
        // areas are 1 m² → Tiny only
        assert_eq!(s.per_class[&SizeClass::Tiny].map, Some(1.0));
        assert_eq!(s.per_class[&SizeClass::Giant].map, None);
    }
}
