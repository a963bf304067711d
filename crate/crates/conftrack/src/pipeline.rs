//! Pipeline stages and the end-to-end run.

use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};

use conftrack_core::ellipse::Ellipse5;
use conftrack_core::event::{apply_selection, generate_event, Event};
use conftrack_core::graph::{build_training_graph, Graph};
use conftrack_core::kinematics::PointXY;
use conftrack_core::metrics::{evaluate, EventPrediction, Metrics};
use conftrack_core::neural::AdamState;
use conftrack_core::postprocess::{assign_hits, merge_ellipses};
use conftrack_core::tracknet::{infer, predict_cluster_params, train, Model};
use rayon::prelude::*;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::formats::{self, Checkpoint, PredictionBody};
use crate::svg;
use crate::trackml;

/// Appends timestamp-free lines to `run.log` and mirrors them to the logger.
pub struct RunLog {
    file: File,
    path: PathBuf,
}

impl RunLog {
    pub fn create(path: &Path) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        Ok(Self {
            file,
            path: path.to_path_buf(),
        })
    }

    pub fn line(&mut self, msg: &str) -> Result<()> {
        log::info!("{msg}");
        writeln!(self.file, "{msg}").map_err(|e| Error::io(&self.path, e))
    }
}

pub fn generate_events(cfg: &RunConfig) -> Result<Vec<Event>> {
    let n = cfg.generator.train_events + cfg.generator.test_events;
    (0..n)
        .map(|k| {
            let e = generate_event(&cfg.detector, &cfg.generator.event_config(cfg.seed, k))?;
            Ok(apply_selection(&e, &cfg.selection))
        })
        .collect()
}

/// Fails with an I/O error naming the first configured input that does not exist.
pub fn check_inputs(cfg: &RunConfig) -> Result<()> {
    for t in &cfg.paths.trackml {
        for p in [&t.hits, &t.truth, &t.particles] {
            if !p.is_file() {
                return Err(Error::io(
                    p,
                    std::io::Error::new(std::io::ErrorKind::NotFound, "input file not found"),
                ));
            }
        }
    }
    Ok(())
}

pub fn ingest_events(cfg: &RunConfig) -> Result<Vec<Event>> {
    cfg.paths
        .trackml
        .iter()
        .enumerate()
        .map(|(k, t)| {
            let id = t
                .event_id
                .or_else(|| trackml::event_id_from_path(&t.hits))
                .unwrap_or(k as u64);
            let e = trackml::read_trackml_event(&t.hits, &t.truth, &t.particles, id, cfg.detector.field_b)?;
            Ok(apply_selection(&e, &cfg.selection))
        })
        .collect()
}

/// TrackML inputs when configured, the synthetic generator otherwise.
pub fn source_events(cfg: &RunConfig) -> Result<Vec<Event>> {
    if cfg.paths.trackml.is_empty() {
        generate_events(cfg)
    } else {
        ingest_events(cfg)
    }
}

/// Graphs with truth targets; events without hits are skipped.
pub fn build_graphs(events: &[Event], cfg: &RunConfig) -> Result<Vec<Graph>> {
    let params = cfg.dbscan.graph_params();
    events
        .par_iter()
        .filter(|e| !e.hits.is_empty())
        .map(|e| Ok(build_training_graph(e, &params)?))
        .collect()
}

pub fn train_model(graphs: &[Graph], cfg: &RunConfig, resume: Option<Checkpoint>) -> Result<Checkpoint> {
    let (mut model, opt, epoch0, mut history): (Model, Option<AdamState>, usize, _) = match resume {
        Some(c) => (c.model, c.optimizer, c.epoch, c.history),
        None => (Model::init(cfg.model.clone())?, None, 0, Vec::new()),
    };
    // epochs are numbered by `train` from the optimizer step count
    let out = train(&mut model, graphs, &cfg.train_config(), opt)?;
    history.extend(out.history);
    Ok(Checkpoint {
        model,
        optimizer: Some(out.optimizer),
        epoch: epoch0 + cfg.training.epochs,
        seed: cfg.seed,
        history,
    })
}

/// Inference, merging, hit assignment and parameter prediction for one graph.
pub fn predict_graph(model: &Model, g: &Graph, cfg: &RunConfig) -> Result<PredictionBody> {
    let threshold = cfg.eval.class_threshold;
    let inf = infer(model, g, threshold)?;
    let kept: Vec<usize> = (0..g.len()).filter(|&i| inf.ellipses[i].is_some()).collect();
    let ellipses: Vec<Ellipse5> = kept.iter().map(|&i| inf.ellipses[i].expect("kept")).collect();
    let scores: Vec<f64> = kept.iter().map(|&i| inf.outputs.class_prob[i]).collect();
    let mut candidates = merge_ellipses(&ellipses, &scores, &cfg.nms)?;
    for c in &mut candidates {
        for m in &mut c.member_vertex_ids {
            *m = kept[*m];
        }
    }
    let points: Vec<(f64, f64, f64)> = g
        .vertices
        .iter()
        .zip(&inf.outputs.class_prob)
        .map(|(v, &p)| (v.eta, v.phi, p))
        .collect();
    let assignments = assign_hits(&candidates, &points, threshold);

    let mut clusters = vec![Vec::new(); candidates.len()];
    for (i, a) in assignments.iter().enumerate() {
        if let Some(c) = a {
            clusters[*c].push(i);
        }
    }
    let xy: Vec<PointXY> = g.vertices.iter().map(|v| v.xy()).collect();
    let params = predict_cluster_params(model, &inf.outputs.final_state, &clusters, &xy)?;
    for ((c, p), cl) in candidates.iter_mut().zip(&params).zip(&clusters) {
        c.params = (!cl.is_empty()).then_some((p.pt, p.eps_t));
    }
    Ok(PredictionBody {
        prediction: EventPrediction {
            event_id: g.event_id,
            hit_ids: g.vertices.iter().map(|v| v.hit_id).collect(),
            class_prob: inf.outputs.class_prob,
            assignments,
            candidates,
        },
        vertex_ellipses: inf.ellipses,
    })
}

pub fn predict_all(model: &Model, graphs: &[Graph], cfg: &RunConfig) -> Result<Vec<PredictionBody>> {
    graphs.par_iter().map(|g| predict_graph(model, g, cfg)).collect()
}

pub fn evaluate_predictions(preds: &[PredictionBody], events: &[Event], cfg: &RunConfig) -> Result<Metrics> {
    let p: Vec<EventPrediction> = preds.iter().map(|p| p.prediction.clone()).collect();
    Ok(evaluate(&p, events, &cfg.eval)?)
}

pub fn candidate_ellipses(p: &PredictionBody) -> Vec<Ellipse5> {
    p.prediction.candidates.iter().map(|c| c.ellipse).collect()
}

pub fn event_file(dir: &Path, id: u64) -> PathBuf {
    dir.join(format!("event_{id}.json"))
}

pub fn graph_file(dir: &Path, id: u64) -> PathBuf {
    dir.join(format!("graph_{id}.json"))
}

pub fn prediction_file(dir: &Path, id: u64) -> PathBuf {
    dir.join(format!("prediction_{id}.json"))
}

pub fn plot_file(dir: &Path, id: u64) -> PathBuf {
    dir.join(format!("event_{id}.svg"))
}

/// `.json` files of a directory in name order.
pub fn json_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    v.sort();
    Ok(v)
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub out: PathBuf,
    pub metrics: Metrics,
    pub train_events: usize,
    pub test_events: usize,
}

/// The first `n - test_events` events train; the rest are held out. When
/// that leaves either side empty, every event is used for both.
fn split(events: &[Event], test_events: usize) -> (&[Event], &[Event]) {
    let n = events.len();
    if test_events == 0 || n <= test_events {
        (events, events)
    } else {
        events.split_at(n - test_events)
    }
}

/// generate/ingest → build-graphs → train → infer → merge → evaluate → plot.
/// Inputs are checked before anything is written; on a later failure the
/// run log records the failing stage.
pub fn run_pipeline(cfg: &RunConfig) -> Result<RunSummary> {
    cfg.validate()?;
    check_inputs(cfg)?;
    let out = cfg.paths.out.clone();
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let mut log = RunLog::create(&out.join("run.log"))?;
    log.line(&format!("seed {}", cfg.seed))?;
    let result = run_stages(cfg, &out, &mut log);
    if let Err(e) = &result {
        log.line(&format!("failed: {e}"))?;
    }
    result
}

fn run_stages(cfg: &RunConfig, out: &Path, log: &mut RunLog) -> Result<RunSummary> {
    let events = source_events(cfg).map_err(|e| e.in_stage("events"))?;
    let events: Vec<Event> = events.into_iter().filter(|e| !e.hits.is_empty()).collect();
    if events.is_empty() {
        return Err(Error::Data("no events with selected hits".into()).in_stage("events"));
    }
    let events_dir = out.join("events");
    for e in &events {
        formats::save_event(&event_file(&events_dir, e.event_id), cfg, e)?;
    }
    log.line(&format!("events: {}", events.len()))?;

    let (train_ev, test_ev) = split(&events, cfg.generator.test_events);
    let graphs = build_graphs(&events, cfg).map_err(|e| e.in_stage("build-graphs"))?;
    let graphs_dir = out.join("graphs");
    for g in &graphs {
        formats::save_graph(&graph_file(&graphs_dir, g.event_id), cfg, g)?;
    }
    let n_train = train_ev.len();
    let offset = events.len() - test_ev.len();
    let train_graphs = &graphs[..n_train];
    let test_graphs = &graphs[offset..];
    log.line(&format!(
        "graphs: {} train, {} test",
        train_graphs.len(),
        test_graphs.len()
    ))?;

    let ckpt = train_model(train_graphs, cfg, None).map_err(|e| e.in_stage("train"))?;
    for r in &ckpt.history {
        log.line(&format!(
            "epoch {} l_c {:.6e} l_loc {:.6e} l_t {:.6e} l_total {:.6e}",
            r.epoch, r.l_c, r.l_loc, r.l_t, r.l_total
        ))?;
    }
    formats::save_checkpoint(&out.join("checkpoint.json"), cfg, &ckpt)?;

    let preds = predict_all(&ckpt.model, test_graphs, cfg).map_err(|e| e.in_stage("infer"))?;
    let pred_dir = out.join("predictions");
    for p in &preds {
        formats::save_prediction(&prediction_file(&pred_dir, p.prediction.event_id), cfg, p)?;
    }
    let metrics = evaluate_predictions(&preds, test_ev, cfg).map_err(|e| e.in_stage("evaluate"))?;
    formats::save_metrics(&out.join("metrics.json"), cfg, &metrics)?;
    log.line(&format!(
        "metrics: efficiency {:.4} purity {:.4} auc {}",
        metrics.segmentation.efficiency,
        metrics.segmentation.purity,
        metrics
            .hit_classification
            .auc
            .map_or("n/a".to_string(), |a| format!("{a:.4}"))
    ))?;

    let plot_dir = out.join("plots");
    test_ev
        .par_iter()
        .zip(&preds)
        .map(|(e, p)| svg::write_event_svg(&plot_file(&plot_dir, e.event_id), e, &candidate_ellipses(p)))
        .collect::<Result<Vec<()>>>()
        .map_err(|e| e.in_stage("plot"))?;
    log.line("done")?;
    Ok(RunSummary {
        out: out.to_path_buf(),
        metrics,
        train_events: train_ev.len(),
        test_events: test_ev.len(),
    })
}
