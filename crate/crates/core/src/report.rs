//! Metric reports and the run manifests embedded in them.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::raster_metrics::RasterScore;
use crate::tile_metrics::TileMetrics;
use crate::tiler::sha256_hex;

/// Everything needed to reproduce a run. Wall-clock times are deliberately
/// absent so that equal runs serialize identically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub config: serde_json::Value,
    /// Input path → SHA-256 of its bytes.
    pub inputs: BTreeMap<String, String>,
    pub seed: Option<u64>,
}

impl RunManifest {
    pub fn new(command: impl Into<String>, config: &impl Serialize) -> Result<Self> {
        Ok(Self {
            command: command.into(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config: serde_json::to_value(config)?,
            inputs: BTreeMap::new(),
            seed: None,
        })
    }

    pub fn with_input(mut self, name: impl Into<String>, bytes: &[u8]) -> Self {
        self.add_input(name, bytes);
        self
    }

    pub fn add_input(&mut self, name: impl Into<String>, bytes: &[u8]) {
        self.inputs.insert(name.into(), sha256_hex(bytes));
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedScore {
    pub name: String,
    pub score: RasterScore,
}

/// Tile-level (mAP family) and raster-level (RF1 family) results of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub thresholds: Vec<f64>,
    pub tile: Option<TileMetrics>,
    pub raster: Option<RasterScore>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rasters: Vec<NamedScore>,
    #[serde(default)]
    pub empty_masks_dropped: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<RunManifest>,
}

impl MetricReport {
    pub fn new(thresholds: &[f64]) -> Self {
        Self {
            thresholds: thresholds.to_vec(),
            tile: None,
            raster: None,
            rasters: Vec::new(),
            empty_masks_dropped: 0,
            manifest: None,
        }
    }

    pub fn with_manifest(mut self, manifest: RunManifest) -> Self {
        self.manifest = Some(manifest);
        self
    }

    /// Pretty JSON with a trailing newline; field order is fixed by the types.
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    /// Human summary with metrics in percent, one decimal.
    pub fn summary(&self) -> String {
        let pct = |v: Option<f64>| v.map(|x| format!("{:.1}", 100.0 * x)).unwrap_or_else(|| "n/a".into());
        let mut lines = Vec::new();
        if let Some(t) = &self.tile {
            lines.push(format!(
                "tile    mAP {}  AP50 {}  AP75 {}  mAR {}",
                pct(t.map),
                pct(t.ap50),
                pct(t.ap75),
                pct(t.mar)
            ));
            let classes: Vec<String> = t
                .per_class
                .iter()
                .map(|(c, m)| format!("{} {}", c.name(), pct(m.map)))
                .collect();
            lines.push(format!("        mAP by size: {}", classes.join("  ")));
        }
        if let Some(r) = &self.raster {
            let (r50, r75) = r.all.as_ref().map(|c| (c.rf1_50(), c.rf1_75())).unwrap_or((None, None));
            lines.push(format!(
                "raster  mRF1 {}  RF1_50 {}  RF1_75 {}",
                pct(r.mrf1()),
                pct(r50),
                pct(r75)
            ));
            let classes: Vec<String> = r
                .per_class
                .keys()
                .map(|c| format!("{} {}", c.name(), pct(r.class_mrf1(*c))))
                .collect();
            lines.push(format!("        mRF1 by size: {}", classes.join("  ")));
        }
        if self.empty_masks_dropped > 0 {
            lines.push(format!("dropped {} empty masks", self.empty_masks_dropped));
        }
        lines.join("\n")
    }
}
