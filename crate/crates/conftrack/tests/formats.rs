use conftrack::config::RunConfig;
use conftrack::formats::{self, Checkpoint, EVENT_FORMAT};
use conftrack::pipeline;
use conftrack::Error;
use conftrack_core::event::{generate_event, DetectorConfig, GenConfig};
use conftrack_core::graph::build_training_graph;
use conftrack_core::neural::{AdamHyper, AdamState};
use conftrack_core::tracknet::{EpochRecord, Model};
use serde_json::Value;

fn small_config() -> RunConfig {
    let mut c = RunConfig::toy().with_seed(11);
    c.model = c.model.with_hidden_width(4);
    c
}

#[test]
fn event_and_graph_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config();
    let e = generate_event(
        &DetectorConfig::default(),
        &GenConfig {
            seed: 5,
            ..GenConfig::default()
        },
    )
    .unwrap();
    let p = dir.path().join("e.json");
    formats::save_event(&p, &cfg, &e).unwrap();
    assert_eq!(formats::load_event(&p).unwrap(), e);

    let v: Value = serde_json::from_str(&std::fs::read_to_string(&p).unwrap()).unwrap();
    assert_eq!(v["format"], EVENT_FORMAT);
    assert_eq!(v["seed"], 11);
    assert_eq!(v["config"]["seed"], 11);

    let g = build_training_graph(&e, &cfg.dbscan.graph_params()).unwrap();
    let gp = dir.path().join("g.json");
    formats::save_graph(&gp, &cfg, &g).unwrap();
    assert_eq!(formats::load_graph(&gp).unwrap(), g);
}

#[test]
fn checkpoint_round_trips_with_optimizer_state() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config();
    let model = Model::init(cfg.model.clone()).unwrap();
    let mut opt = AdamState::new(AdamHyper::default(), model.params_iter());
    opt.step = 7;
    opt.m[0].set(0, 0, 0.25);
    let ckpt = Checkpoint {
        model: model.clone(),
        optimizer: Some(opt.clone()),
        epoch: 3,
        seed: 11,
        history: vec![EpochRecord {
            epoch: 1,
            l_c: 0.5,
            l_loc: 0.25,
            l_t: 0.125,
            l_total: 0.875,
        }],
    };
    let p = dir.path().join("c.json");
    formats::save_checkpoint(&p, &cfg, &ckpt).unwrap();
    let back = formats::load_checkpoint(&p).unwrap();
    assert_eq!(back.model, model);
    assert_eq!(back.optimizer, Some(opt));
    assert_eq!((back.epoch, back.seed), (3, 11));
    assert_eq!(back.history, ckpt.history);
}

#[test]
fn checkpoint_with_wrong_shape_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config();
    let ckpt = Checkpoint {
        model: Model::init(cfg.model.clone()).unwrap(),
        optimizer: None,
        epoch: 0,
        seed: 0,
        history: Vec::new(),
    };
    let p = dir.path().join("c.json");
    formats::save_checkpoint(&p, &cfg, &ckpt).unwrap();
    let mut v: Value = serde_json::from_str(&std::fs::read_to_string(&p).unwrap()).unwrap();
    let name = v["params"].as_object().unwrap().keys().next().unwrap().clone();
    v["params"][&name].as_array_mut().unwrap().pop();
    std::fs::write(&p, v.to_string()).unwrap();
    let err = formats::load_checkpoint(&p).err().unwrap();
    assert!(matches!(err, Error::Data(_)), "{err}");
    assert!(err.to_string().contains(&name), "{err}");
    assert_eq!(err.exit_code(), 3);

    v["params"].as_object_mut().unwrap().remove(&name);
    std::fs::write(&p, v.to_string()).unwrap();
    assert!(formats::load_checkpoint(&p).is_err());
}

#[test]
fn wrong_format_tag_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config();
    let e = generate_event(&DetectorConfig::default(), &GenConfig::default()).unwrap();
    let p = dir.path().join("e.json");
    formats::save_event(&p, &cfg, &e).unwrap();
    let err = formats::load_graph(&p).err().unwrap();
    assert!(
        err.to_string().contains("expected format graph-v1, found event-v1"),
        "{err}"
    );
}

#[test]
fn metrics_and_predictions_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config();
    cfg.training.epochs = 1;
    let e = generate_event(
        &DetectorConfig::default(),
        &GenConfig {
            n_tracks: 3,
            ..GenConfig::default()
        },
    )
    .unwrap();
    let graphs = pipeline::build_graphs(std::slice::from_ref(&e), &cfg).unwrap();
    let ckpt = pipeline::train_model(&graphs, &cfg, None).unwrap();
    let preds = pipeline::predict_all(&ckpt.model, &graphs, &cfg).unwrap();
    let pp = dir.path().join("p.json");
    formats::save_prediction(&pp, &cfg, &preds[0]).unwrap();
    assert_eq!(formats::load_prediction(&pp).unwrap(), preds[0]);

    let m = pipeline::evaluate_predictions(&preds, &[e], &cfg).unwrap();
    let mp = dir.path().join("m.json");
    formats::save_metrics(&mp, &cfg, &m).unwrap();
    assert_eq!(formats::load_metrics(&mp).unwrap(), m);
}

#[test]
fn missing_file_is_an_io_error() {
    let err = formats::load_event(std::path::Path::new("/nonexistent/e.json"))
        .err()
        .unwrap();
    assert!(matches!(err, Error::Io { .. }));
    assert_eq!(err.exit_code(), 5);
}
