//! Command line interface.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::config::{RunConfig, TrackmlInput};
use crate::error::{Error, Result};
use crate::formats;
use crate::pipeline::{self, candidate_ellipses};
use crate::svg;

#[derive(Debug, Parser)]
#[command(name = "conftrack", version, about = "One-shot GNN track finding in eta-phi space")]
pub struct Cli {
    /// JSON run configuration; defaults apply to missing keys.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory; overrides `paths.out`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, short, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic events into OUT/events.
    Generate,
    /// Read TrackML CSV files into OUT/events. Without flags the configured inputs are used.
    Ingest {
        #[arg(long, requires_all = ["truth", "particles"])]
        hits: Option<PathBuf>,
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long)]
        particles: Option<PathBuf>,
        #[arg(long)]
        event_id: Option<u64>,
    },
    /// Build graphs with truth targets from event files into OUT/graphs.
    BuildGraphs {
        /// Defaults to OUT/events.
        #[arg(long)]
        events: Option<PathBuf>,
    },
    /// Train on every graph of a directory and write OUT/checkpoint.json.
    Train {
        /// Defaults to OUT/graphs.
        #[arg(long)]
        graphs: Option<PathBuf>,
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Predict candidates for every graph into OUT/predictions.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Defaults to OUT/graphs.
        #[arg(long)]
        graphs: Option<PathBuf>,
    },
    /// Score predictions against events and write OUT/metrics.json.
    Evaluate {
        /// Defaults to OUT/predictions.
        #[arg(long)]
        predictions: Option<PathBuf>,
        /// Defaults to OUT/events.
        #[arg(long)]
        events: Option<PathBuf>,
    },
    /// Render one event, with candidate ellipses when a prediction is given.
    Plot {
        #[arg(long)]
        event: PathBuf,
        #[arg(long)]
        prediction: Option<PathBuf>,
        /// Defaults to OUT/plots/event_<id>.svg.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Every stage end to end.
    Run,
}

/// Resolves the configuration from the file and the global overrides.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg = cfg.with_seed(s);
    }
    if let Some(o) = &cli.out {
        cfg.paths.out.clone_from(o);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_dir<T>(dir: &Path, load: impl Fn(&Path) -> Result<T>) -> Result<Vec<T>> {
    let files = pipeline::json_files(dir)?;
    if files.is_empty() {
        return Err(Error::Data(format!("{}: no .json files", dir.display())));
    }
    files.iter().map(|p| load(p)).collect()
}

pub fn execute(cli: &Cli) -> Result<()> {
    let cfg = resolve_config(cli)?;
    let out = cfg.paths.out.clone();
    let dir_or = |o: &Option<PathBuf>, name: &str| o.clone().unwrap_or_else(|| out.join(name));
    match &cli.command {
        Command::Generate => {
            for e in pipeline::generate_events(&cfg)? {
                formats::save_event(&pipeline::event_file(&out.join("events"), e.event_id), &cfg, &e)?;
            }
        }
        Command::Ingest {
            hits,
            truth,
            particles,
            event_id,
        } => {
            let mut cfg = cfg.clone();
            if let (Some(h), Some(t), Some(p)) = (hits, truth, particles) {
                cfg.paths.trackml = vec![TrackmlInput {
                    hits: h.clone(),
                    truth: t.clone(),
                    particles: p.clone(),
                    event_id: *event_id,
                }];
            }
            if cfg.paths.trackml.is_empty() {
                return Err(Error::Config(
                    "ingest needs --hits/--truth/--particles or paths.trackml".into(),
                ));
            }
            pipeline::check_inputs(&cfg)?;
            for e in pipeline::ingest_events(&cfg)? {
                formats::save_event(&pipeline::event_file(&out.join("events"), e.event_id), &cfg, &e)?;
            }
        }
        Command::BuildGraphs { events } => {
            let evs = load_dir(&dir_or(events, "events"), formats::load_event)?;
            for g in pipeline::build_graphs(&evs, &cfg)? {
                formats::save_graph(&pipeline::graph_file(&out.join("graphs"), g.event_id), &cfg, &g)?;
            }
        }
        Command::Train { graphs, resume } => {
            let gs = load_dir(&dir_or(graphs, "graphs"), formats::load_graph)?;
            let prev = resume.as_deref().map(formats::load_checkpoint).transpose()?;
            let ckpt = pipeline::train_model(&gs, &cfg, prev)?;
            for r in &ckpt.history {
                log::info!("epoch {} l_total {:.6e}", r.epoch, r.l_total);
            }
            formats::save_checkpoint(&out.join("checkpoint.json"), &cfg, &ckpt)?;
        }
        Command::Infer { checkpoint, graphs } => {
            let ckpt = formats::load_checkpoint(checkpoint)?;
            let gs = load_dir(&dir_or(graphs, "graphs"), formats::load_graph)?;
            for p in pipeline::predict_all(&ckpt.model, &gs, &cfg)? {
                let path = pipeline::prediction_file(&out.join("predictions"), p.prediction.event_id);
                formats::save_prediction(&path, &cfg, &p)?;
            }
        }
        Command::Evaluate { predictions, events } => {
            let preds = load_dir(&dir_or(predictions, "predictions"), formats::load_prediction)?;
            let evs = load_dir(&dir_or(events, "events"), formats::load_event)?;
            // only the events that were predicted
            let evs: Vec<_> = evs
                .into_iter()
                .filter(|e| preds.iter().any(|p| p.prediction.event_id == e.event_id))
                .collect();
            let m = pipeline::evaluate_predictions(&preds, &evs, &cfg)?;
            formats::save_metrics(&out.join("metrics.json"), &cfg, &m)?;
            println!("{}", serde_json::to_string_pretty(&m).expect("metrics serialize"));
        }
        Command::Plot {
            event,
            prediction,
            output,
        } => {
            let e = formats::load_event(event)?;
            let ellipses = match prediction {
                Some(p) => candidate_ellipses(&formats::load_prediction(p)?),
                None => Vec::new(),
            };
            let path = output
                .clone()
                .unwrap_or_else(|| pipeline::plot_file(&out.join("plots"), e.event_id));
            svg::write_event_svg(&path, &e, &ellipses)?;
        }
        Command::Run => {
            let s = pipeline::run_pipeline(&cfg)?;
            println!(
                "{} train / {} test events, efficiency {:.4}, purity {:.4}",
                s.train_events, s.test_events, s.metrics.segmentation.efficiency, s.metrics.segmentation.purity
            );
        }
    }
    Ok(())
}
