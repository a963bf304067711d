use std::f64::consts::{PI, TAU};

use conftrack_core::dbscan::{dbscan, DbscanParams};
use conftrack_core::ellipse::{
    decode_box, ellipse_iou, encode_box, mvee, point_in_ellipse, BoxScales, Ellipse5, DEFAULT_IOU_RESOLUTION,
};
use conftrack_core::event::{apply_selection, generate_event, DetectorConfig, GenConfig, Selection};
use conftrack_core::graph::{build_training_graph, EdgeTopology, GraphParams};
use conftrack_core::kinematics::{fit_track, from_conformal, to_conformal, PointXY};
use conftrack_core::metrics::{evaluate, roc_auc, EvalConfig, EventPrediction};
use conftrack_core::neural::{bce_loss, huber_loss};
use conftrack_core::postprocess::{choose_threshold, merge_ellipses, MergeParams};
use conftrack_core::tracknet::{gnn_forward, Model, ModelConfig};
use conftrack_core::{canonical_phi, wrap_angle, EncodedBox};
use proptest::prelude::*;

fn ellipse() -> impl Strategy<Value = Ellipse5> {
    (-2.0..2.0f64, 0.0..TAU, 1e-3..0.3f64, 1e-3..0.3f64, 0.0..PI)
        .prop_map(|(e, p, a, b, t)| Ellipse5::new(e, p, a, b, t))
}

/// Groups labels into a canonical partition (sets of indices).
fn partition(labels: &[i64]) -> Vec<Vec<usize>> {
    let mut groups: std::collections::BTreeMap<i64, Vec<usize>> = Default::default();
    for (i, &l) in labels.iter().enumerate() {
        if l >= 0 {
            groups.entry(l).or_default().push(i);
        }
    }
    let mut v: Vec<Vec<usize>> = groups.into_values().collect();
    v.sort();
    v
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn angles_stay_in_range(x in -100.0..100.0f64) {
        let w = wrap_angle(x);
        prop_assert!((-PI..PI).contains(&w));
        prop_assert!(((x - w) / TAU - ((x - w) / TAU).round()).abs() < 1e-9);
        prop_assert!((0.0..TAU).contains(&canonical_phi(x)));
    }

    #[test]
    fn conformal_map_is_an_involution(x in -3.0..3.0f64, y in -3.0..3.0f64) {
        prop_assume!(x.hypot(y) > 1e-3);
        let p = PointXY::new(x, y);
        let back = from_conformal(to_conformal(p).unwrap()).unwrap();
        prop_assert!((back.x - x).abs() <= 1e-12 * p.norm() && (back.y - y).abs() <= 1e-12 * p.norm());
    }

    #[test]
    fn generator_is_valid_and_deterministic(seed in 0u64..10_000, n in 1usize..15, noise in 0.0..0.5f64) {
        let det = DetectorConfig::default();
        let gen = GenConfig { n_tracks: n, noise_fraction: noise, seed, ..GenConfig::default() };
        let e = generate_event(&det, &gen).unwrap();
        e.validate().unwrap();
        prop_assert_eq!(&e, &generate_event(&det, &gen).unwrap());
    }

    #[test]
    fn unsmeared_tracks_close_under_the_fit(seed in 0u64..10_000) {
        // the parabola drops a δ·v² term of order 2Rε³/r_min⁴; above ~0.3 mm
        // on a 32 mm inner layer it exceeds the 0.1% center tolerance
        let det = DetectorConfig::default();
        let gen = GenConfig { hit_smearing_sigma: 0.0, noise_fraction: 0.0, eps_range: (5e-5, 3e-4), seed, ..GenConfig::default() };
        let e = generate_event(&det, &gen).unwrap();
        for t in e.tracks.iter().filter(|t| t.hit_ids.len() >= 4) {
            let xy: Vec<PointXY> = t.hit_ids.iter().map(|id| e.hits.iter().find(|h| h.hit_id == *id).unwrap().xy()).collect();
            let p = fit_track(&xy, e.field_b).unwrap().params;
            let d = t.circle.center_distance();
            prop_assert!((p.a - t.circle.a).hypot(p.b - t.circle.b) / d < 1e-3);
            prop_assert!((p.eps_t.abs() - t.params.eps_t).abs() / t.params.eps_t < 0.05);
        }
    }

    #[test]
    fn selection_is_idempotent_and_monotone(seed in 0u64..10_000, pt_min in 0.0..12.0f64) {
        let e = generate_event(&DetectorConfig::default(), &GenConfig { seed, pt_range: (1.0, 10.0), ..GenConfig::default() }).unwrap();
        let sel = Selection { pt_min, volumes: None };
        let once = apply_selection(&e, &sel);
        once.validate().unwrap();
        prop_assert!(once.hits.len() <= e.hits.len());
        prop_assert_eq!(&apply_selection(&once, &sel), &once);
        prop_assert_eq!(&apply_selection(&e, &Selection::everything()), &e);
    }

    #[test]
    fn dbscan_partition_ignores_point_order(
        pts in prop::collection::vec((-1.0..1.0f64, 0.0..TAU), 0..80),
        eps in 0.02..0.4f64,
        min_pts in 1usize..4,
        rot in 0usize..80,
    ) {
        let p = DbscanParams { eps, min_pts };
        let labels = dbscan(&pts, &p);
        let n = pts.len();
        let k = if n == 0 { 0 } else { rot % n };
        let mut rotated = pts.clone();
        rotated.rotate_left(k);
        let rl = dbscan(&rotated, &p);
        // with min_pts <= 2 every neighbor of a core point is itself core,
        // so no border point can be claimed by two clusters
        if min_pts <= 2 {
            let back: Vec<i64> = (0..n).map(|i| rl[(i + n - k) % n]).collect();
            prop_assert_eq!(partition(&labels), partition(&back));
        }
        prop_assert!(labels.iter().all(|&l| l >= -1));
    }

    #[test]
    fn box_codec_round_trips(e in ellipse(), de in -0.1..0.1f64, dp in -0.1..0.1f64) {
        let s = BoxScales::default();
        let v = (e.eta_c + de, canonical_phi(e.phi_c + dp));
        let back = decode_box(&encode_box(&e, v, &s).unwrap(), v, &s);
        prop_assert!((back.eta_c - e.eta_c).abs() < 1e-12);
        prop_assert!(wrap_angle(back.phi_c - e.phi_c).abs() < 1e-12);
        prop_assert!((back.a - e.a).abs() < 1e-12 && (back.b - e.b).abs() < 1e-12);
        let d = (back.theta - e.theta).rem_euclid(PI);
        prop_assert!(d.min(PI - d) < 1e-12);
    }

    #[test]
    fn iou_is_a_symmetric_ratio(e1 in ellipse(), e2 in ellipse()) {
        let i12 = ellipse_iou(&e1, &e2, DEFAULT_IOU_RESOLUTION);
        prop_assert!((0.0..=1.0).contains(&i12));
        prop_assert_eq!(i12, ellipse_iou(&e2, &e1, DEFAULT_IOU_RESOLUTION));
        prop_assert!((ellipse_iou(&e1, &e1, DEFAULT_IOU_RESOLUTION) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mvee_contains_its_points(pts in prop::collection::vec((-0.3..0.3f64, 1.0..1.6f64), 1..30)) {
        let e = mvee(&pts, 1e-7).unwrap();
        prop_assert!(e.is_valid());
        for &p in &pts {
            prop_assert!(point_in_ellipse(&e, p));
        }
    }

    #[test]
    fn graphs_keep_their_invariants(seed in 0u64..10_000, layered in any::<bool>()) {
        let e = generate_event(&DetectorConfig::default(), &GenConfig { seed, ..GenConfig::default() }).unwrap();
        let params = GraphParams {
            topology: if layered { EdgeTopology::LayerAdjacent } else { EdgeTopology::Complete },
            ..GraphParams::default()
        };
        let g = build_training_graph(&e, &params).unwrap();
        g.validate().unwrap();
        prop_assert_eq!(g.len(), e.hits.len());
        for v in &g.vertices {
            if let Some(t) = v.target {
                prop_assert!(point_in_ellipse(&t, v.eta_phi()));
            }
        }
        for ed in &g.edges {
            prop_assert!(ed.i < ed.j);
            let same = g.vertices[ed.i].particle_id == g.vertices[ed.j].particle_id && g.vertices[ed.i].particle_id != 0;
            prop_assert_eq!(ed.truth, same);
        }
    }

    #[test]
    fn losses_are_non_negative(ps in prop::collection::vec((0.0..=1.0f64, any::<bool>()), 1..20), r in prop::collection::vec(-5.0..5.0f64, 5)) {
        let y: Vec<f64> = ps.iter().map(|p| if p.1 { 1.0 } else { 0.0 }).collect();
        let p: Vec<f64> = ps.iter().map(|p| p.0).collect();
        prop_assert!(bce_loss(&y, &p).unwrap() >= 0.0);
        let b = EncodedBox::from_array([r[0], r[1], r[2], r[3], r[4]]);
        prop_assert!(huber_loss(&[b], &[EncodedBox::ZERO], &[true], 1.0).unwrap() >= 0.0);
    }

    #[test]
    fn merging_partitions_its_input(es in prop::collection::vec(ellipse(), 0..25), seed in any::<u64>(), th in 0.0..1.0f64) {
        let scores: Vec<f64> = (0..es.len()).map(|i| ((seed.wrapping_mul(i as u64 + 1) % 1000) as f64) / 1000.0).collect();
        let c = merge_ellipses(&es, &scores, &MergeParams { iou_threshold: th, ..MergeParams::default() }).unwrap();
        let mut ids: Vec<usize> = c.iter().flat_map(|c| c.member_vertex_ids.clone()).collect();
        ids.sort_unstable();
        prop_assert_eq!(ids, (0..es.len()).collect::<Vec<_>>());
        for cand in &c {
            let s: Vec<f64> = cand.member_vertex_ids.iter().map(|&i| scores[i]).collect();
            let lo = s.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(cand.confidence >= lo - 1e-12 && cand.confidence <= hi + 1e-12);
        }
    }

    #[test]
    fn well_separated_groups_ignore_score_order(
        n_groups in 1usize..6,
        per in 1usize..4,
        scores in prop::collection::vec(0.0..1.0f64, 18),
    ) {
        // each group: near-identical ellipses; groups far apart
        let mut es = Vec::new();
        for g in 0..n_groups {
            for k in 0..per {
                es.push(Ellipse5::new(g as f64, 1.0, 0.05, 0.02, 0.3 + 1e-4 * k as f64));
            }
        }
        let p = MergeParams::default();
        let sc = &scores[..es.len()];
        let mut rev = sc.to_vec();
        rev.reverse();
        let groups = |s: &[f64]| {
            let mut v: Vec<Vec<usize>> = merge_ellipses(&es, s, &p)
                .unwrap()
                .into_iter()
                .map(|c| {
                    let mut m = c.member_vertex_ids;
                    m.sort_unstable();
                    m
                })
                .collect();
            v.sort();
            v
        };
        prop_assert_eq!(groups(sc), groups(&rev));
    }

    #[test]
    fn threshold_is_optimal(pairs in prop::collection::vec((0.0..=1.0f64, any::<bool>()), 2..40)) {
        prop_assume!(pairs.iter().any(|p| p.1) && pairs.iter().any(|p| !p.1));
        let c = choose_threshold(&pairs).unwrap();
        let ba = |t: f64| {
            let ns = pairs.iter().filter(|p| p.1).count() as f64;
            let nc = pairs.len() as f64 - ns;
            let tp = pairs.iter().filter(|p| p.1 && p.0 > t).count() as f64;
            let tn = pairs.iter().filter(|p| !p.1 && p.0 <= t).count() as f64;
            0.5 * (tp / ns + tn / nc)
        };
        prop_assert!((ba(c.threshold) - c.balanced_accuracy).abs() < 1e-12);
        for k in 0..=200 {
            prop_assert!(ba(k as f64 / 200.0) <= c.balanced_accuracy + 1e-12);
        }
    }

    #[test]
    fn auc_is_a_rate(pairs in prop::collection::vec((0.0..=1.0f64, any::<bool>()), 1..40)) {
        let s: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let l: Vec<bool> = pairs.iter().map(|p| p.1).collect();
        if let Some(a) = roc_auc(&s, &l) {
            prop_assert!((0.0..=1.0).contains(&a));
            let flipped: Vec<bool> = l.iter().map(|x| !x).collect();
            prop_assert!((roc_auc(&s, &flipped).unwrap() - (1.0 - a)).abs() < 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn metrics_ignore_event_order(seed in 0u64..1000, rot in 0usize..4, drop_every in 2usize..5) {
        let det = DetectorConfig::default();
        let events: Vec<_> = (0..4).map(|k| generate_event(&det, &GenConfig { seed: seed * 10 + k, ..GenConfig::default() }).unwrap()).collect();
        let preds: Vec<EventPrediction> = events
            .iter()
            .map(|e| {
                let pids: Vec<u64> = e.tracks.iter().map(|t| t.particle_id).collect();
                EventPrediction {
                    event_id: e.event_id,
                    hit_ids: e.hits.iter().map(|h| h.hit_id).collect(),
                    class_prob: e.hits.iter().enumerate().map(|(i, _)| (i % 7) as f64 / 6.0).collect(),
                    assignments: e
                        .hits
                        .iter()
                        .enumerate()
                        .map(|(i, h)| if i % drop_every == 0 { None } else { pids.iter().position(|&p| p == h.particle_id) })
                        .collect(),
                    candidates: e
                        .tracks
                        .iter()
                        .map(|t| conftrack_core::postprocess::TrackCandidate {
                            ellipse: Ellipse5::circle(0.0, 0.0, 0.1),
                            confidence: 0.5,
                            member_vertex_ids: Vec::new(),
                            params: Some((t.params.pt * 1.1, 0.0)),
                        })
                        .collect(),
                }
            })
            .collect();
        let m = evaluate(&preds, &events, &EvalConfig::default()).unwrap();
        for r in [m.segmentation.efficiency, m.segmentation.purity, m.hit_classification.accuracy] {
            prop_assert!((0.0..=1.0).contains(&r));
        }
        prop_assert!(m.parameter_resolution.pt_rel_rms >= 0.0);
        let mut p2 = preds.clone();
        p2.rotate_left(rot);
        let mut e2 = events.clone();
        e2.reverse();
        prop_assert_eq!(evaluate(&p2, &e2, &EvalConfig::default()).unwrap(), m);
    }

    #[test]
    fn forward_pass_is_permutation_equivariant(seed in 0u64..1000, rot in 1usize..20) {
        let e = generate_event(&DetectorConfig::default(), &GenConfig { n_tracks: 4, seed, ..GenConfig::default() }).unwrap();
        let g = build_training_graph(&e, &GraphParams::default()).unwrap();
        let m = Model::init(ModelConfig { seed, ..ModelConfig::default() }.with_hidden_width(8)).unwrap();
        let n = g.len();
        let k = rot % n;
        let perm: Vec<usize> = (0..n).map(|i| (i + k) % n).collect();
        let mut h = g.clone();
        h.vertices = perm.iter().map(|&i| g.vertices[i]).collect();
        let inv: Vec<usize> = {
            let mut v = vec![0; n];
            for (new, &old) in perm.iter().enumerate() {
                v[old] = new;
            }
            v
        };
        for ed in &mut h.edges {
            let (a, b) = (inv[ed.i], inv[ed.j]);
            ed.i = a.min(b);
            ed.j = a.max(b);
        }
        h.edges.sort_by_key(|ed| (ed.i, ed.j));
        let o1 = gnn_forward(&m, &g).unwrap();
        let o2 = gnn_forward(&m, &h).unwrap();
        for (new, &old) in perm.iter().enumerate() {
            prop_assert!((o1.class_prob[old] - o2.class_prob[new]).abs() < 1e-12);
            for c in 0..2 {
                prop_assert!((o1.final_state[old][c] - o2.final_state[new][c]).abs() < 1e-12);
            }
        }
    }
}
