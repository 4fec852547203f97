use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{box_iou, BBox, CrownInstance, PixelRect, Side};
use crate::matching::IouKind;

/// Whether confidence filtering runs before or after NMS.
///
/// With greedy hard NMS both orders keep the same set: every instance at or
/// above the confidence threshold is visited before any instance below it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterOrder {
    #[default]
    ConfidenceFirst,
    NmsFirst,
}

/// Treatment of predictions cut by a tile border that lies inside the raster.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgePolicy {
    Keep,
    /// Discard instances whose mask touches a tile edge that is not a raster
    /// edge; the overlapping neighbour tile is expected to see them whole.
    #[default]
    DropInteriorEdge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AggregationConfig {
    pub nms_iou: f64,
    pub confidence_threshold: f64,
    pub nms_geometry: IouKind,
    pub filter_order: FilterOrder,
    pub edge_policy: EdgePolicy,
}

impl Default for AggregationConfig {
    fn default() -> Self {
        Self {
            nms_iou: 0.5,
            confidence_threshold: 0.0,
            nms_geometry: IouKind::Mask,
            filter_order: FilterOrder::ConfidenceFirst,
            edge_policy: EdgePolicy::DropInteriorEdge,
        }
    }
}

impl AggregationConfig {
    pub fn new(nms_iou: f64, confidence_threshold: f64) -> Self {
        Self {
            nms_iou,
            confidence_threshold,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.nms_iou > 0.0 && self.nms_iou <= 1.0) {
            return Err(Error::InvalidConfig(format!("nms_iou {} outside (0, 1]", self.nms_iou)));
        }
        if !(0.0..=1.0).contains(&self.confidence_threshold) {
            return Err(Error::InvalidConfig(format!(
                "confidence_threshold {} outside [0, 1]",
                self.confidence_threshold
            )));
        }
        Ok(())
    }
}

/// Placement of tiles inside the raster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TileLayout {
    pub raster: PixelRect,
    pub windows: BTreeMap<u64, PixelRect>,
}

impl TileLayout {
    pub fn new(raster: PixelRect) -> Self {
        Self {
            raster,
            windows: BTreeMap::new(),
        }
    }

    pub fn with_tile(mut self, id: u64, window: PixelRect) -> Self {
        self.windows.insert(id, window);
        self
    }

    /// Sides of `window` that lie strictly inside the raster.
    pub fn interior_sides(&self, window: &PixelRect) -> Vec<Side> {
        let r = &self.raster;
        let mut sides = Vec::with_capacity(4);
        if window.x0 > r.x0 {
            sides.push(Side::Left);
        }
        if window.x1() < r.x1() {
            sides.push(Side::Right);
        }
        if window.y0 > r.y0 {
            sides.push(Side::Top);
        }
        if window.y1() < r.y1() {
            sides.push(Side::Bottom);
        }
        sides
    }
}

/// Tile predictions moved to the raster frame, edge policy applied, in
/// deterministic (tile id, index) order.
pub(crate) fn collect_candidates(
    tile_preds: &BTreeMap<u64, Vec<CrownInstance>>,
    layout: &TileLayout,
    policy: EdgePolicy,
) -> Result<Vec<CrownInstance>> {
    let mut out = Vec::new();
    for (&id, preds) in tile_preds {
        let window = layout.windows.get(&id).ok_or(Error::UnknownTile(id))?;
        let sides = match policy {
            EdgePolicy::Keep => Vec::new(),
            EdgePolicy::DropInteriorEdge => layout.interior_sides(window),
        };
        for p in preds {
            let moved = p.translated(window.x0, window.y0);
            if sides.iter().any(|&s| moved.mask().touches_edge(window, s)) {
                continue;
            }
            out.push(moved);
        }
    }
    Ok(out)
}

/// Indices sorted by descending score, ties in input order.
pub(crate) fn score_order(instances: &[CrownInstance]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..instances.len()).collect();
    idx.sort_by(|&a, &b| instances[b].score().total_cmp(&instances[a].score()));
    idx
}

pub(crate) fn pair_iou(kind: IouKind, a: &CrownInstance, ab: &BBox, b: &CrownInstance, bb: &BBox) -> f64 {
    if !ab.intersects(bb) {
        return 0.0;
    }
    match kind {
        IouKind::Box => box_iou(ab, bb),
        IouKind::Mask => a.mask().iou(b.mask()).unwrap_or(0.0),
    }
}

const BUCKET: f64 = 256.0;

fn buckets(b: &BBox) -> impl Iterator<Item = (i64, i64)> {
    let (x0, x1) = ((b.x_min / BUCKET).floor() as i64, (b.x_max / BUCKET).floor() as i64);
    let (y0, y1) = ((b.y_min / BUCKET).floor() as i64, (b.y_max / BUCKET).floor() as i64);
    (y0..=y1).flat_map(move |y| (x0..=x1).map(move |x| (x, y)))
}

/// Greedy non-maximum suppression. Returns kept indices in score order; an
/// instance is suppressed when its IoU with an already kept one is ≥ `iou`.
pub fn nms(instances: &[CrownInstance], iou: f64, kind: IouKind) -> Vec<usize> {
    let boxes: Vec<BBox> = instances.iter().map(|i| i.bbox()).collect();
    let mut grid: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    let mut keep = Vec::new();
    let mut seen = Vec::new();
    for i in score_order(instances) {
        seen.clear();
        let suppressed = buckets(&boxes[i]).any(|cell| {
            grid.get(&cell).is_some_and(|ks| {
                ks.iter().any(|&k| {
                    if seen.contains(&k) {
                        return false;
                    }
                    seen.push(k);
                    pair_iou(kind, &instances[k], &boxes[k], &instances[i], &boxes[i]) >= iou
                })
            })
        });
        if !suppressed {
            for cell in buckets(&boxes[i]) {
                grid.entry(cell).or_default().push(i);
            }
            keep.push(i);
        }
    }
    keep
}

/// Merge per-tile predictions into one de-duplicated raster-frame set.
///
/// Tile-local instances are translated by their window origin, the edge
/// policy and confidence threshold are applied, and NMS removes duplicates
/// from overlapping tiles. Output is in descending score order.
pub fn aggregate_tiles(
    tile_preds: &BTreeMap<u64, Vec<CrownInstance>>,
    layout: &TileLayout,
    cfg: &AggregationConfig,
) -> Result<Vec<CrownInstance>> {
    cfg.validate()?;
    let candidates = collect_candidates(tile_preds, layout, cfg.edge_policy)?;
    let passes = |c: &CrownInstance| c.score() >= cfg.confidence_threshold;
    Ok(match cfg.filter_order {
        FilterOrder::ConfidenceFirst => {
            let filtered: Vec<CrownInstance> = candidates.into_iter().filter(passes).collect();
            let keep = nms(&filtered, cfg.nms_iou, cfg.nms_geometry);
            keep.into_iter().map(|i| filtered[i].clone()).collect()
        }
        FilterOrder::NmsFirst => {
            let keep = nms(&candidates, cfg.nms_iou, cfg.nms_geometry);
            keep.into_iter()
                .filter(|&i| passes(&candidates[i]))
                .map(|i| candidates[i].clone())
                .collect()
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BinaryMask;

    fn pred(x: i64, y: i64, n: i64, s: f64) -> CrownInstance {
        CrownInstance::prediction(BinaryMask::filled(PixelRect::new(x, y, n, n)), s).unwrap()
    }

    fn layout_2x1() -> TileLayout {
        TileLayout::new(PixelRect::new(0, 0, 150, 100))
            .with_tile(0, PixelRect::new(0, 0, 100, 100))
            .with_tile(1, PixelRect::new(50, 0, 100, 100))
    }

    #[test]
    fn single_tile_is_translation() {
        let layout = TileLayout::new(PixelRect::new(0, 0, 500, 500)).with_tile(3, PixelRect::new(0, 0, 500, 500));
        let preds = BTreeMap::from([(3, vec![pred(10, 10, 5, 0.9), pred(100, 10, 5, 0.7)])]);
        let out = aggregate_tiles(&preds, &layout, &AggregationConfig::new(0.5, 0.0)).unwrap();
        assert_eq!(out.len(), 2);
        let layout = TileLayout::new(PixelRect::new(0, 0, 500, 500)).with_tile(3, PixelRect::new(200, 100, 300, 300));
        let out = aggregate_tiles(&preds, &layout, &AggregationConfig::new(0.5, 0.0)).unwrap();
        assert_eq!(out[0].bbox(), BBox::new(210.0, 110.0, 215.0, 115.0));
    }

    #[test]
    fn duplicate_from_overlapping_tiles() {
        // crown at raster (60..80) seen by both tiles
        let preds = BTreeMap::from([(0, vec![pred(60, 20, 20, 0.8)]), (1, vec![pred(10, 20, 20, 0.9)])]);
        let out = aggregate_tiles(&preds, &layout_2x1(), &AggregationConfig::new(0.5, 0.0)).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].score(), 0.9);
    }

    #[test]
    fn interior_edge_cuts_are_dropped() {
        // tile 0's right edge (x = 100) is interior; the truncated piece is dropped
        let preds = BTreeMap::from([(0, vec![pred(90, 20, 10, 0.9)]), (1, vec![pred(40, 20, 20, 0.8)])]);
        let mut cfg = AggregationConfig::new(0.5, 0.0);
        let out = aggregate_tiles(&preds, &layout_2x1(), &cfg).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].score(), 0.8);
        cfg.edge_policy = EdgePolicy::Keep;
        assert_eq!(aggregate_tiles(&preds, &layout_2x1(), &cfg).unwrap().len(), 2);
    }

    #[test]
    fn unknown_tile_errors() {
        let preds = BTreeMap::from([(9, vec![pred(0, 0, 5, 0.5)])]);
        assert!(matches!(
            aggregate_tiles(&preds, &layout_2x1(), &AggregationConfig::default()),
            Err(Error::UnknownTile(9))
        ));
    }

    #[test]
    fn confidence_filter_and_order_equivalence() {
        let preds = BTreeMap::from([(
            0,
            vec![
                pred(10, 10, 20, 0.3),
                pred(12, 10, 20, 0.6),
                pred(60, 10, 10, 0.2),
                pred(13, 11, 20, 0.95),
            ],
        )]);
        let layout = TileLayout::new(PixelRect::new(0, 0, 100, 100)).with_tile(0, PixelRect::new(0, 0, 100, 100));
        let mut cfg = AggregationConfig::new(0.5, 0.25);
        let a = aggregate_tiles(&preds, &layout, &cfg).unwrap();
        cfg.filter_order = FilterOrder::NmsFirst;
        let b = aggregate_tiles(&preds, &layout, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 1);
        assert_eq!(a[0].score(), 0.95);
    }

    #[test]
    fn threshold_one_keeps_all_but_exact_duplicates() {
        let v = vec![pred(0, 0, 10, 0.9), pred(0, 0, 10, 0.5), pred(1, 0, 10, 0.4)];
        assert_eq!(nms(&v, 1.0, IouKind::Mask), vec![0, 2]);
        assert_eq!(nms(&v, 1.0, IouKind::Box), vec![0, 2]);
    }
}
