//! Pairwise inter-annotator agreement (RF1 with one set as reference).

use std::path::PathBuf;

use canopy_core::agreement::{agreement_matrix, write_agreement_csv, AgreementRow, AnnotationSet};
use canopy_core::geometry::Polygon;
use canopy_core::report::RunManifest;
use canopy_core::{Error, Result};
use serde::{Deserialize, Serialize};
use toml::Table;

use crate::config::typed;
use crate::inputs::{load_crowns, region_polygon, thresholds, Ctx, GridSource};
use crate::output::OutDir;

#[derive(Debug, Serialize, Deserialize)]
pub struct Annotator {
    pub name: String,
    /// GeoJSON crowns.
    pub crowns: PathBuf,
    /// GeoJSON polygon of the area this annotator covered; the whole raster when absent.
    #[serde(default)]
    pub region: Option<PathBuf>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Config {
    #[serde(default)]
    pub raster: Option<PathBuf>,
    #[serde(default)]
    pub width: Option<u64>,
    #[serde(default)]
    pub height: Option<u64>,
    #[serde(default)]
    pub gsd: Option<f64>,
    #[serde(default)]
    pub geotransform: Option<[f64; 6]>,
    #[serde(default)]
    pub crs: Option<String>,
    #[serde(default)]
    pub thresholds: Option<Vec<f64>>,
    pub annotators: Vec<Annotator>,
}

#[derive(Serialize)]
struct Report<'a> {
    rows: &'a [AgreementRow],
    manifest: RunManifest,
}

pub fn run(table: &Table, out: &mut OutDir) -> Result<String> {
    let cfg: Config = typed(table)?;
    if cfg.annotators.len() < 2 {
        return Err(Error::InvalidConfig(
            "agreement needs at least two [[annotators]]".into(),
        ));
    }
    let ts = thresholds(&cfg.thresholds)?;
    let mut ctx = Ctx::new("agreement", &cfg)?;
    let grid = GridSource {
        raster: cfg.raster.clone(),
        width: cfg.width,
        height: cfg.height,
        gsd: cfg.gsd,
        geotransform: cfg.geotransform,
        crs: cfg.crs.clone(),
    }
    .grid(&mut ctx)?;
    let sets: Vec<AnnotationSet> = cfg
        .annotators
        .iter()
        .map(|a| {
            let crowns = load_crowns(&a.crowns, &grid, &mut ctx)?;
            let region = match &a.region {
                Some(p) => region_polygon(p, &grid, &mut ctx)?,
                None => Polygon::rect(0.0, 0.0, grid.width as f64, grid.height as f64)?,
            };
            AnnotationSet::new(a.name.clone(), crowns, region)
        })
        .collect::<Result<_>>()?;
    let rows = agreement_matrix(&sets, &ts, grid.gsd)?;
    let mut csv = Vec::new();
    write_agreement_csv(&rows, &mut csv)?;
    out.write("agreement.csv", &csv)?;
    out.json(
        "report.json",
        &Report {
            rows: &rows,
            manifest: ctx.manifest,
        },
    )?;
    let pct = |v: Option<f64>| v.map(|x| format!("{:.1}", 100.0 * x)).unwrap_or_else(|| "n/a".into());
    Ok(rows
        .iter()
        .map(|r| format!("{} vs {} (reference)  mRF1 {}", r.prediction, r.reference, pct(r.all)))
        .collect::<Vec<_>>()
        .join("\n"))
}
