//! Versioned JSON artifacts. Every document carries `format`, the run
//! seed and the echoed run configuration next to its payload.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use conftrack_core::ellipse::Ellipse5;
use conftrack_core::event::Event;
use conftrack_core::graph::Graph;
use conftrack_core::metrics::{EventPrediction, Metrics};
use conftrack_core::neural::{AdamHyper, AdamState, Tensor2};
use conftrack_core::tracknet::{EpochRecord, Model, ModelConfig};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::RunConfig;
use crate::error::{Error, Result};

pub const EVENT_FORMAT: &str = "event-v1";
pub const GRAPH_FORMAT: &str = "graph-v1";
pub const CHECKPOINT_FORMAT: &str = "tracknet-v1";
pub const PREDICTION_FORMAT: &str = "prediction-v1";
pub const METRICS_FORMAT: &str = "metrics-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document<T> {
    pub format: String,
    pub seed: u64,
    pub config: Value,
    #[serde(flatten)]
    pub body: T,
}

impl<T> Document<T> {
    pub fn new(format: &str, cfg: &RunConfig, body: T) -> Self {
        Self {
            format: format.to_string(),
            seed: cfg.seed,
            config: cfg.echo(),
            body,
        }
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    text.push('\n');
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

/// Reads a document and checks its `format` tag.
pub fn read_document<T: DeserializeOwned>(path: &Path, format: &str) -> Result<Document<T>> {
    let v: Value = read_json(path)?;
    let found = v.get("format").and_then(Value::as_str).unwrap_or("<missing>");
    if found != format {
        return Err(Error::Data(format!(
            "{}: expected format {format}, found {found}",
            path.display()
        )));
    }
    serde_json::from_value(v).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventBody {
    pub event: Event,
}

pub fn save_event(path: &Path, cfg: &RunConfig, event: &Event) -> Result<()> {
    write_json(
        path,
        &Document::new(EVENT_FORMAT, cfg, EventBody { event: event.clone() }),
    )
}

pub fn load_event(path: &Path) -> Result<Event> {
    let d: Document<EventBody> = read_document(path, EVENT_FORMAT)?;
    d.body.event.validate()?;
    Ok(d.body.event)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphBody {
    #[serde(flatten)]
    pub graph: Graph,
}

pub fn save_graph(path: &Path, cfg: &RunConfig, g: &Graph) -> Result<()> {
    write_json(path, &Document::new(GRAPH_FORMAT, cfg, GraphBody { graph: g.clone() }))
}

pub fn load_graph(path: &Path) -> Result<Graph> {
    let d: Document<GraphBody> = read_document(path, GRAPH_FORMAT)?;
    d.body.graph.validate()?;
    Ok(d.body.graph)
}

/// Row-major nested lists.
pub fn tensor_to_rows(t: &Tensor2) -> Vec<Vec<f64>> {
    t.to_rows()
}

pub fn tensor_from_rows(name: &str, rows: &[Vec<f64>]) -> Result<Tensor2> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != cols) {
        return Err(Error::Data(format!("parameter {name} is a ragged array")));
    }
    Tensor2::new(rows.len(), cols, rows.concat()).map_err(|e| Error::Data(format!("parameter {name}: {e}")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerBody {
    pub step: u64,
    pub hyper: AdamHyper,
    pub m: BTreeMap<String, Vec<Vec<f64>>>,
    pub v: BTreeMap<String, Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointBody {
    pub epoch: usize,
    pub model: ModelConfig,
    pub params: BTreeMap<String, Vec<Vec<f64>>>,
    pub optimizer: Option<OptimizerBody>,
    pub history: Vec<EpochRecord>,
}

pub struct Checkpoint {
    pub model: Model,
    pub optimizer: Option<AdamState>,
    pub epoch: usize,
    pub seed: u64,
    pub history: Vec<EpochRecord>,
}

fn named<'a>(names: &[String], ts: impl IntoIterator<Item = &'a Tensor2>) -> BTreeMap<String, Vec<Vec<f64>>> {
    names.iter().cloned().zip(ts.into_iter().map(tensor_to_rows)).collect()
}

impl Checkpoint {
    pub fn to_document(&self, cfg: &RunConfig) -> Document<CheckpointBody> {
        let names: Vec<String> = self.model.named_params().into_iter().map(|(n, _)| n).collect();
        let body = CheckpointBody {
            epoch: self.epoch,
            model: self.model.config.clone(),
            params: named(&names, self.model.params_iter()),
            optimizer: self.optimizer.as_ref().map(|o| OptimizerBody {
                step: o.step,
                hyper: o.hyper,
                m: named(&names, &o.m),
                v: named(&names, &o.v),
            }),
            history: self.history.clone(),
        };
        let mut d = Document::new(CHECKPOINT_FORMAT, cfg, body);
        d.seed = self.seed;
        d
    }

    /// Rebuilds the model, rejecting any parameter whose name or shape does
    /// not match the stored model configuration.
    pub fn from_document(d: Document<CheckpointBody>) -> Result<Self> {
        let b = d.body;
        let mut model = Model::zeros(b.model.clone())?;
        let expected: Vec<(String, (usize, usize))> =
            model.named_params().into_iter().map(|(n, t)| (n, t.shape())).collect();
        let take = |map: &BTreeMap<String, Vec<Vec<f64>>>, what: &str| -> Result<Vec<Tensor2>> {
            if map.len() != expected.len() {
                return Err(Error::Data(format!(
                    "{what}: {} arrays stored, model has {}",
                    map.len(),
                    expected.len()
                )));
            }
            expected
                .iter()
                .map(|(name, shape)| {
                    let rows = map
                        .get(name)
                        .ok_or_else(|| Error::Data(format!("{what}: missing {name}")))?;
                    let t = tensor_from_rows(name, rows)?;
                    if t.shape() != *shape {
                        return Err(Error::Data(format!(
                            "{what}: {name} has shape {:?}, config needs {:?}",
                            t.shape(),
                            shape
                        )));
                    }
                    Ok(t)
                })
                .collect()
        };
        let params = take(&b.params, "params")?;
        for (dst, src) in model.params_mut().into_iter().zip(params) {
            *dst = src;
        }
        let optimizer = match &b.optimizer {
            Some(o) => Some(AdamState {
                step: o.step,
                m: take(&o.m, "optimizer.m")?,
                v: take(&o.v, "optimizer.v")?,
                hyper: o.hyper,
            }),
            None => None,
        };
        Ok(Self {
            model,
            optimizer,
            epoch: b.epoch,
            seed: d.seed,
            history: b.history,
        })
    }
}

pub fn save_checkpoint(path: &Path, cfg: &RunConfig, c: &Checkpoint) -> Result<()> {
    write_json(path, &c.to_document(cfg))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::from_document(read_document(path, CHECKPOINT_FORMAT)?).map_err(|e| match e {
        Error::Data(m) => Error::Data(format!("{}: {m}", path.display())),
        other => other,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionBody {
    pub prediction: EventPrediction,
    /// Decoded ellipse per vertex, `None` below the class threshold.
    pub vertex_ellipses: Vec<Option<Ellipse5>>,
}

pub fn save_prediction(path: &Path, cfg: &RunConfig, p: &PredictionBody) -> Result<()> {
    write_json(path, &Document::new(PREDICTION_FORMAT, cfg, p.clone()))
}

pub fn load_prediction(path: &Path) -> Result<PredictionBody> {
    Ok(read_document::<PredictionBody>(path, PREDICTION_FORMAT)?.body)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsBody {
    #[serde(flatten)]
    pub metrics: Metrics,
}

pub fn save_metrics(path: &Path, cfg: &RunConfig, m: &Metrics) -> Result<()> {
    write_json(path, &Document::new(METRICS_FORMAT, cfg, MetricsBody { metrics: *m }))
}

pub fn load_metrics(path: &Path) -> Result<Metrics> {
    Ok(read_document::<MetricsBody>(path, METRICS_FORMAT)?.body.metrics)
}
