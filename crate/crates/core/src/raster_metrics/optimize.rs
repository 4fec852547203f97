use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::aggregate::{collect_candidates, pair_iou, score_order, AggregationConfig, FilterOrder, TileLayout};
use super::{pooled_curve, RasterCase, Rf1Curve};
use crate::error::{Error, Result};
use crate::geometry::{BBox, CrownInstance};
use crate::matching::{IouKind, PairTable};
use crate::tile_metrics::ThresholdSet;

/// Candidate values for the NMS IoU and confidence thresholds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ThresholdGrid {
    pub nms_iou: Vec<f64>,
    pub confidence: Vec<f64>,
}

impl Default for ThresholdGrid {
    /// NMS IoU 0.30..=0.95 and confidence 0.05..=0.95, both in steps of 0.05.
    fn default() -> Self {
        Self {
            nms_iou: (6..=19).map(|i| (5 * i) as f64 / 100.0).collect(),
            confidence: (1..=19).map(|i| (5 * i) as f64 / 100.0).collect(),
        }
    }
}

impl ThresholdGrid {
    pub fn validate(&self) -> Result<()> {
        if self.nms_iou.is_empty() || self.confidence.is_empty() {
            return Err(Error::InvalidConfig("threshold grid is empty".into()));
        }
        for &v in &self.nms_iou {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::InvalidConfig(format!("grid nms_iou {v} outside (0, 1]")));
            }
        }
        for &v in &self.confidence {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidConfig(format!("grid confidence {v} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    #[default]
    Mrf1,
    /// RF1 at a single IoU threshold, e.g. 0.75.
    Rf1At(f64),
}

impl Objective {
    fn eval(&self, curve: &Rf1Curve) -> Option<f64> {
        match self {
            Objective::Mrf1 => Some(curve.mrf1),
            Objective::Rf1At(t) => curve.at(*t).map(|r| r.f1),
        }
    }
}

/// Tile predictions and raster ground truth of one validation orthomosaic.
#[derive(Debug, Clone)]
pub struct ValidationRaster {
    pub tile_preds: BTreeMap<u64, Vec<CrownInstance>>,
    pub layout: TileLayout,
    pub gts: Vec<CrownInstance>,
    pub gsd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub nms_iou: f64,
    pub confidence: f64,
    pub mrf1: Option<f64>,
    pub rf1_50: Option<f64>,
    pub rf1_75: Option<f64>,
    pub objective: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationResult {
    pub best: AggregationConfig,
    pub best_objective: f64,
    pub objective: Objective,
    pub cells: Vec<GridCell>,
}

/// Per-raster data that does not depend on the grid cell.
struct Prepared {
    /// Candidates in NMS visiting order.
    scores: Vec<f64>,
    /// For each candidate (sorted position): earlier candidates with their NMS IoU.
    overlaps: Vec<Vec<(usize, f64)>>,
    table: PairTable,
    pred_area_m2: Vec<f64>,
    gt_area_m2: Vec<f64>,
}

fn prepare(v: &ValidationRaster, base: &AggregationConfig) -> Result<Prepared> {
    let raw = collect_candidates(&v.tile_preds, &v.layout, base.edge_policy)?;
    let order = score_order(&raw);
    let cands: Vec<CrownInstance> = order.iter().map(|&i| raw[i].clone()).collect();
    let boxes: Vec<BBox> = cands.iter().map(|c| c.bbox()).collect();
    let row = |i: usize| -> Vec<(usize, f64)> {
        (0..i)
            .filter_map(|k| {
                let iou = pair_iou(base.nms_geometry, &cands[k], &boxes[k], &cands[i], &boxes[i]);
                (iou > 0.0).then_some((k, iou))
            })
            .collect()
    };
    #[cfg(feature = "parallel")]
    let overlaps = {
        use rayon::prelude::*;
        (0..cands.len()).into_par_iter().map(row).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let overlaps = (0..cands.len()).map(row).collect();
    Ok(Prepared {
        scores: cands.iter().map(|c| c.score()).collect(),
        overlaps,
        table: PairTable::build(&cands, &v.gts, IouKind::Mask),
        pred_area_m2: cands.iter().map(|c| c.area_m2(v.gsd)).collect(),
        gt_area_m2: v.gts.iter().map(|g| g.area_m2(v.gsd)).collect(),
    })
}

impl Prepared {
    fn kept(&self, nms_iou: f64, confidence: f64, order: FilterOrder) -> Vec<usize> {
        let mut kept = vec![false; self.scores.len()];
        let mut out = Vec::new();
        for i in 0..self.scores.len() {
            let passes = self.scores[i] >= confidence;
            if order == FilterOrder::ConfidenceFirst && !passes {
                continue;
            }
            if self.overlaps[i].iter().any(|&(k, iou)| kept[k] && iou >= nms_iou) {
                continue;
            }
            kept[i] = true;
            if passes {
                out.push(i);
            }
        }
        out
    }

    fn case(&self, keep: &[usize]) -> RasterCase {
        RasterCase::from_parts(
            self.table.select(keep),
            keep.iter().map(|&i| self.pred_area_m2[i]).collect(),
            self.gt_area_m2.clone(),
        )
    }
}

/// Exhaustive grid search for the aggregation thresholds maximizing
/// `objective` on a validation set.
///
/// Ties prefer the lower confidence threshold, then the lower NMS IoU.
/// Every cell is reported in `cells` (NMS-major order) for auditing.
pub fn optimize_thresholds(
    val: &[ValidationRaster],
    grid: &ThresholdGrid,
    objective: Objective,
    base: &AggregationConfig,
    thresholds: &ThresholdSet,
) -> Result<OptimizationResult> {
    if val.is_empty() {
        return Err(Error::EmptyInput("validation set has no rasters".into()));
    }
    grid.validate()?;
    let prepared: Vec<Prepared> = val.iter().map(|v| prepare(v, base)).collect::<Result<_>>()?;
    let cells: Vec<(f64, f64)> = grid
        .nms_iou
        .iter()
        .flat_map(|&n| grid.confidence.iter().map(move |&c| (n, c)))
        .collect();
    let eval = |&(nms_iou, confidence): &(f64, f64)| {
        let cases: Vec<RasterCase> = prepared
            .iter()
            .map(|p| p.case(&p.kept(nms_iou, confidence, base.filter_order)))
            .collect();
        let curve = pooled_curve(&cases, thresholds, None);
        GridCell {
            nms_iou,
            confidence,
            mrf1: curve.as_ref().map(|c| c.mrf1),
            rf1_50: curve.as_ref().and_then(|c| c.rf1_50()),
            rf1_75: curve.as_ref().and_then(|c| c.rf1_75()),
            objective: curve.as_ref().and_then(|c| objective.eval(c)),
        }
    };
    #[cfg(feature = "parallel")]
    let scored: Vec<GridCell> = {
        use rayon::prelude::*;
        cells.par_iter().map(eval).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let scored: Vec<GridCell> = cells.iter().map(eval).collect();

    let best = scored
        .iter()
        .filter(|c| c.objective.is_some())
        .min_by(|a, b| {
            b.objective
                .unwrap()
                .total_cmp(&a.objective.unwrap())
                .then(a.confidence.total_cmp(&b.confidence))
                .then(a.nms_iou.total_cmp(&b.nms_iou))
        })
        .ok_or_else(|| Error::EmptyInput("no grid cell produced a defined objective".into()))?;
    Ok(OptimizationResult {
        best: AggregationConfig {
            nms_iou: best.nms_iou,
            confidence_threshold: best.confidence,
            ..base.clone()
        },
        best_objective: best.objective.unwrap(),
        objective,
        cells: scored,
    })
}

/// CSV audit table: `nms_iou,confidence,mrf1,rf1_50,rf1_75` (empty for absent).
pub fn write_audit_csv<W: Write>(cells: &[GridCell], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["nms_iou", "confidence", "mrf1", "rf1_50", "rf1_75"])?;
    let f = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for c in cells {
        w.write_record([
            c.nms_iou.to_string(),
            c.confidence.to_string(),
            f(c.mrf1),
            f(c.rf1_50),
            f(c.rf1_75),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{BinaryMask, PixelRect, Source};
    use crate::raster_metrics::{aggregate_tiles, mrf1};

    fn sq(x: i64, y: i64, w: i64, h: i64) -> BinaryMask {
        BinaryMask::filled(PixelRect::new(x, y, w, h))
    }

    /// One crown with a shifted duplicate of IoU 0.6 (suppressed only at nms ≤ 0.6).
    fn fixture() -> ValidationRaster {
        let gts = vec![CrownInstance::from_mask(sq(0, 0, 40, 40), 1.0, Source::GroundTruth).unwrap()];
        // 40×40 shifted by 10 in x: inter 30·40, union 50·40 → 0.6
        let preds = vec![
            CrownInstance::prediction(sq(0, 0, 40, 40), 0.9).unwrap(),
            CrownInstance::prediction(sq(10, 0, 40, 40), 0.8).unwrap(),
        ];
        let layout = TileLayout::new(PixelRect::new(0, 0, 100, 100)).with_tile(0, PixelRect::new(0, 0, 100, 100));
        ValidationRaster {
            tile_preds: BTreeMap::from([(0, preds)]),
            layout,
            gts,
            gsd: 0.1,
        }
    }

    #[test]
    fn default_grid_shape() {
        let g = ThresholdGrid::default();
        assert_eq!(g.nms_iou.len(), 14);
        assert_eq!(g.confidence.len(), 19);
        assert_eq!(g.nms_iou[0], 0.3);
        assert_eq!(*g.confidence.last().unwrap(), 0.95);
    }

    #[test]
    fn single_cell_grid() {
        let grid = ThresholdGrid {
            nms_iou: vec![0.7],
            confidence: vec![0.1],
        };
        let r = optimize_thresholds(
            &[fixture()],
            &grid,
            Objective::Mrf1,
            &AggregationConfig::default(),
            &ThresholdSet::coco(),
        )
        .unwrap();
        assert_eq!(r.best.nms_iou, 0.7);
        assert_eq!(r.best.confidence_threshold, 0.1);
        assert_eq!(r.cells.len(), 1);
    }

    #[test]
    fn duplicates_vanish_below_point_six() {
        let grid = ThresholdGrid {
            nms_iou: vec![0.5, 0.6, 0.7, 0.8],
            confidence: vec![0.05],
        };
        let v = fixture();
        let r = optimize_thresholds(
            std::slice::from_ref(&v),
            &grid,
            Objective::Mrf1,
            &AggregationConfig::default(),
            &ThresholdSet::coco(),
        )
        .unwrap();
        assert!(r.best.nms_iou <= 0.6);
        assert_eq!(r.best_objective, 1.0);
        for cell in &r.cells {
            let cfg = AggregationConfig {
                nms_iou: cell.nms_iou,
                confidence_threshold: cell.confidence,
                ..Default::default()
            };
            let merged = aggregate_tiles(&v.tile_preds, &v.layout, &cfg).unwrap();
            let direct = mrf1(&merged, &v.gts, &ThresholdSet::coco(), None, v.gsd)
                .unwrap()
                .unwrap();
            assert_eq!(cell.mrf1, Some(direct.mrf1));
        }
    }

    #[test]
    fn empty_validation_set() {
        let r = optimize_thresholds(
            &[],
            &ThresholdGrid::default(),
            Objective::Mrf1,
            &AggregationConfig::default(),
            &ThresholdSet::coco(),
        );
        assert!(matches!(r, Err(Error::EmptyInput(_))));
    }

    #[test]
    fn audit_csv_columns() {
        let cells = vec![GridCell {
            nms_iou: 0.5,
            confidence: 0.25,
            mrf1: Some(0.75),
            rf1_50: Some(1.0),
            rf1_75: None,
            objective: Some(0.75),
        }];
        let mut buf = Vec::new();
        write_audit_csv(&cells, &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "nms_iou,confidence,mrf1,rf1_50,rf1_75\n0.5,0.25,0.75,1,\n"
        );
    }
}
