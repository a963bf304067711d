//! Run configuration: one JSON document with a section per stage.

use std::fs;
use std::path::{Path, PathBuf};

use conftrack_core::dbscan::DbscanParams;
use conftrack_core::event::{DetectorConfig, GenConfig, Selection};
use conftrack_core::graph::{EdgeTopology, GraphParams};
use conftrack_core::metrics::EvalConfig;
use conftrack_core::neural::AdamHyper;
use conftrack_core::postprocess::MergeParams;
use conftrack_core::tracknet::{ModelConfig, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorSection {
    pub train_events: usize,
    /// Held out for inference and evaluation.
    pub test_events: usize,
    pub n_tracks: usize,
    pub pt_range: (f64, f64),
    pub eps_range: (f64, f64),
    pub eta_range: (f64, f64),
    pub noise_fraction: f64,
    pub hit_smearing_sigma: f64,
}

impl Default for GeneratorSection {
    fn default() -> Self {
        let g = GenConfig::default();
        Self {
            train_events: 50,
            test_events: 10,
            n_tracks: g.n_tracks,
            pt_range: g.pt_range,
            eps_range: g.eps_range,
            eta_range: g.eta_range,
            noise_fraction: g.noise_fraction,
            hit_smearing_sigma: g.hit_smearing_sigma,
        }
    }
}

impl GeneratorSection {
    /// Generator settings for the `k`-th event of a run seeded with `seed`.
    /// The event seed, and so its id, is `seed + k`.
    pub fn event_config(&self, seed: u64, k: usize) -> GenConfig {
        GenConfig {
            n_tracks: self.n_tracks,
            pt_range: self.pt_range,
            eps_range: self.eps_range,
            eta_range: self.eta_range,
            noise_fraction: self.noise_fraction,
            hit_smearing_sigma: self.hit_smearing_sigma,
            seed: seed.wrapping_add(k as u64),
        }
    }
}

/// Graph construction: clustering plus edge and target settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DbscanSection {
    pub eps: f64,
    pub min_pts: usize,
    pub topology: EdgeTopology,
    pub ellipse_padding: f64,
    pub mvee_tolerance: f64,
}

impl Default for DbscanSection {
    fn default() -> Self {
        let g = GraphParams::default();
        Self {
            eps: g.dbscan.eps,
            min_pts: g.dbscan.min_pts,
            topology: g.topology,
            ellipse_padding: g.ellipse_padding,
            mvee_tolerance: g.mvee_tolerance,
        }
    }
}

impl DbscanSection {
    pub fn graph_params(&self) -> GraphParams {
        GraphParams {
            dbscan: DbscanParams {
                eps: self.eps,
                min_pts: self.min_pts,
            },
            topology: self.topology,
            ellipse_padding: self.ellipse_padding,
            mvee_tolerance: self.mvee_tolerance,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSection {
    pub epochs: usize,
    pub adam: AdamHyper,
}

impl Default for TrainingSection {
    fn default() -> Self {
        Self {
            epochs: 30,
            adam: AdamHyper::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackmlInput {
    pub hits: PathBuf,
    pub truth: PathBuf,
    pub particles: PathBuf,
    /// Taken from the hits file name when absent.
    #[serde(default)]
    pub event_id: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    /// TrackML events to ingest. The synthetic generator is used when empty.
    pub trackml: Vec<TrackmlInput>,
    pub out: PathBuf,
}

impl Default for PathsSection {
    fn default() -> Self {
        Self {
            trackml: Vec::new(),
            out: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub detector: DetectorConfig,
    pub generator: GeneratorSection,
    pub selection: Selection,
    pub dbscan: DbscanSection,
    pub model: ModelConfig,
    pub training: TrainingSection,
    pub nms: MergeParams,
    pub eval: EvalConfig,
    pub paths: PathsSection,
}

impl RunConfig {
    /// Small desk-scale run: lr 1e-3 and the default 50 + 10 events.
    pub fn toy() -> Self {
        let mut c = Self::default();
        c.training.adam.lr = 1e-3;
        c
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Seed used for model initialization, shuffling and event generation.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.model.seed = seed;
        self
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.training.epochs,
            adam: self.training.adam,
            seed: self.seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.detector.validate()?;
        self.generator.event_config(self.seed, 0).validate(&self.detector)?;
        self.model.validate().map_err(|e| Error::Config(e.to_string()))?;
        let d = &self.dbscan;
        if !(d.eps > 0.0) || d.min_pts == 0 {
            return Err(Error::Config("dbscan needs eps > 0 and min_pts ≥ 1".into()));
        }
        if !(d.ellipse_padding >= 0.0) || !(d.mvee_tolerance > 0.0) {
            return Err(Error::Config(
                "dbscan needs ellipse_padding ≥ 0 and mvee_tolerance > 0".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.nms.iou_threshold) || self.nms.iou_resolution < 3 {
            return Err(Error::Config(
                "nms needs iou_threshold in [0, 1] and iou_resolution ≥ 3".into(),
            ));
        }
        if !(self.eval.match_fraction >= 0.0 && self.eval.match_fraction < 1.0) {
            return Err(Error::Config("eval.match_fraction must be in [0, 1)".into()));
        }
        if self.paths.trackml.is_empty() && self.generator.train_events == 0 {
            return Err(Error::Config("generator.train_events must be positive".into()));
        }
        Ok(())
    }

    /// The configuration as echoed into every artifact.
    pub fn echo(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config is always representable")
    }
}
