use std::sync::Arc;

use canopy_core::pipeline::{
    end_to_end_eval, DetectorNoise, OracleDetector, OracleSegmenter, PipelineConfig, PipelineRaster, SegmenterNoise,
};
use canopy_core::raster_metrics::AggregationConfig;
use canopy_core::synth::{generate, SceneSpec};
use canopy_core::tile_metrics::ThresholdSet;
use canopy_core::tiler::TilingSpec;

fn raster(seed: u64, det: DetectorNoise, seg: SegmenterNoise) -> PipelineRaster {
    let scene = generate(&SceneSpec {
        width: 1000,
        height: 1000,
        crowns: 40,
        max_radius: 40.0,
        cell: Some(250),
        seed,
        ..Default::default()
    })
    .unwrap();
    PipelineRaster {
        name: format!("scene-{seed}"),
        detector: Arc::new(OracleDetector::new(&scene.crowns, det, seed)),
        segmenter: Arc::new(OracleSegmenter::new(&scene.crowns, seg, seed)),
        image: scene.image,
        grid: scene.grid,
        gts: scene.crowns,
    }
}

#[test]
fn noiseless_oracles_close_at_every_overlap() {
    let rasters: Vec<_> = (0..2)
        .map(|s| raster(s, DetectorNoise::default(), SegmenterNoise::default()))
        .collect();
    for overlap in [0.0, 0.5, 0.75] {
        let tiling = TilingSpec::new(250, overlap).unwrap();
        let r = end_to_end_eval(
            &rasters,
            &tiling,
            &AggregationConfig::default(),
            &PipelineConfig::default(),
            &ThresholdSet::coco(),
        )
        .unwrap();
        let t = r.tile.as_ref().unwrap();
        assert_eq!(t.map, Some(1.0), "overlap {overlap}");
        assert_eq!(t.mar, Some(1.0), "overlap {overlap}");
        assert_eq!(r.raster.as_ref().unwrap().mrf1(), Some(1.0), "overlap {overlap}");
        assert_eq!(r.empty_masks_dropped, 0);
    }
}

#[test]
fn reports_are_deterministic() {
    let noise = DetectorNoise {
        shift_sigma: 3.0,
        drop_rate: 0.2,
        spurious_rate: 0.2,
        ..Default::default()
    };
    let run = || {
        let rasters = vec![raster(
            9,
            noise,
            SegmenterNoise {
                radius: 1,
                boundary_noise: 0.2,
            },
        )];
        end_to_end_eval(
            &rasters,
            &TilingSpec::new(250, 0.5).unwrap(),
            &AggregationConfig::default(),
            &PipelineConfig::default(),
            &ThresholdSet::coco(),
        )
        .unwrap()
        .to_json()
        .unwrap()
    };
    assert_eq!(run(), run());
}
