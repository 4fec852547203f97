//! Inter-annotator agreement: mRF1 between two human annotation layers, one
//! acting as prediction and the other as reference.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{BinaryMask, CrownInstance, PixelRect, Polygon, SizeClass, Source};
use crate::raster_metrics::raster_score;
use crate::tile_metrics::ThresholdSet;

/// Crowns with IoU above this are treated as overlapping annotations.
pub const OVERLAP_EPSILON: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationSet {
    annotator: String,
    crowns: Vec<CrownInstance>,
    region: Polygon,
}

impl AnnotationSet {
    /// Tags every crown with the annotator, fixes scores at 1.0 and validates the set.
    pub fn new(annotator: impl Into<String>, crowns: Vec<CrownInstance>, region: Polygon) -> Result<Self> {
        let annotator = annotator.into();
        let crowns = crowns
            .into_iter()
            .map(|c| c.with_source(Source::Annotator(annotator.clone())))
            .collect();
        let set = Self {
            annotator,
            crowns,
            region,
        };
        set.validate()?;
        Ok(set)
    }

    pub fn annotator(&self) -> &str {
        &self.annotator
    }

    pub fn crowns(&self) -> &[CrownInstance] {
        &self.crowns
    }

    pub fn region(&self) -> &Polygon {
        &self.region
    }

    /// Every crown must touch the region and no two crowns may overlap beyond
    /// [`OVERLAP_EPSILON`].
    pub fn validate(&self) -> Result<()> {
        let invalid = |reason: String| Error::InvalidAnnotationSet {
            set: self.annotator.clone(),
            reason,
        };
        let region = self.region.to_mask();
        for (i, c) in self.crowns.iter().enumerate() {
            if c.score() != 1.0 {
                return Err(invalid(format!("crown {i} has score {}", c.score())));
            }
            if c.mask().intersection_count(&region) == 0 {
                return Err(invalid(format!("crown {i} lies outside the region")));
            }
        }
        let boxes: Vec<_> = self.crowns.iter().map(|c| c.bbox()).collect();
        for i in 0..self.crowns.len() {
            for j in i + 1..self.crowns.len() {
                if boxes[i].intersection_area(&boxes[j]) <= 0.0 {
                    continue;
                }
                let iou = self.crowns[i].mask().iou(self.crowns[j].mask())?;
                if iou > OVERLAP_EPSILON {
                    return Err(invalid(format!("crowns {i} and {j} overlap with IoU {iou:.3}")));
                }
            }
        }
        Ok(())
    }
}

/// Pixels inside both regions.
pub fn shared_region(a: &AnnotationSet, b: &AnnotationSet) -> Result<BinaryMask> {
    let disjoint = || Error::DisjointRegions(a.annotator.clone(), b.annotator.clone());
    let frame = PixelRect::covering(&a.region.bbox())
        .intersection(&PixelRect::covering(&b.region.bbox()))
        .ok_or_else(disjoint)?;
    let m = a.region.rasterize(frame).and(&b.region.rasterize(frame));
    if m.is_empty() {
        return Err(disjoint());
    }
    Ok(m)
}

/// Crowns restricted to `region`; crowns entirely inside are kept as they are.
pub fn clip_to_region(crowns: &[CrownInstance], region: &BinaryMask) -> Vec<CrownInstance> {
    crowns
        .iter()
        .filter_map(|c| {
            let inside = c.mask().and(region);
            let n = inside.count();
            if n == c.mask().count() {
                Some(c.clone())
            } else if n == 0 {
                None
            } else {
                c.replace_mask(inside).ok()
            }
        })
        .collect()
}

/// mRF1 for one ordered pair, overall and per size class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementRow {
    pub prediction: String,
    pub reference: String,
    pub all: Option<f64>,
    pub per_class: BTreeMap<SizeClass, Option<f64>>,
}

/// Agreement of `a` (as prediction) with `b` (as reference) on their shared region.
///
/// No confidence filtering and no NMS: each layer is scored as it was drawn.
pub fn pairwise_agreement(
    a: &AnnotationSet,
    b: &AnnotationSet,
    thresholds: &ThresholdSet,
    gsd: f64,
) -> Result<AgreementRow> {
    let region = shared_region(a, b)?;
    let preds = clip_to_region(&a.crowns, &region);
    let gts = clip_to_region(&b.crowns, &region);
    let score = raster_score(&preds, &gts, thresholds, gsd)?;
    Ok(AgreementRow {
        prediction: a.annotator.clone(),
        reference: b.annotator.clone(),
        all: score.mrf1(),
        per_class: SizeClass::ALL.into_iter().map(|c| (c, score.class_mrf1(c))).collect(),
    })
}

/// Every ordered pair, grouped by reference set in input order.
pub fn agreement_matrix(sets: &[AnnotationSet], thresholds: &ThresholdSet, gsd: f64) -> Result<Vec<AgreementRow>> {
    if sets.len() < 2 {
        return Err(Error::EmptyInput("agreement needs at least two annotation sets".into()));
    }
    let pairs: Vec<(usize, usize)> = (0..sets.len())
        .flat_map(|r| (0..sets.len()).filter(move |&p| p != r).map(move |p| (p, r)))
        .collect();
    let run = |&(p, r): &(usize, usize)| pairwise_agreement(&sets[p], &sets[r], thresholds, gsd);
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        pairs.par_iter().map(run).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        pairs.iter().map(run).collect()
    }
}

fn percent(v: Option<f64>) -> String {
    v.map(|x| format!("{:.1}", 100.0 * x)).unwrap_or_default()
}

/// CSV with one row per ordered pair; values in percent, empty when the class is absent.
pub fn write_agreement_csv<W: Write>(rows: &[AgreementRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["prediction".to_string(), "reference".to_string(), "all".to_string()];
    header.extend(SizeClass::ALL.iter().map(|c| c.name().to_lowercase()));
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.prediction.clone(), r.reference.clone(), percent(r.all)];
        rec.extend(
            SizeClass::ALL
                .iter()
                .map(|c| percent(r.per_class.get(c).copied().flatten())),
        );
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}
