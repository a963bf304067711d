//! Turning per-vertex ellipses into track candidates.

use alloc::vec::Vec;
use core::f64::consts::PI;

#[cfg(not(feature = "std"))]
use num_traits::Float;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ellipse::{canonical_theta, ellipse_iou, point_in_ellipse, Ellipse5, DEFAULT_IOU_RESOLUTION};
use crate::wrap_angle;

/// IoU threshold used until one is chosen from data.
pub const DEFAULT_IOU_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PostprocessError {
    #[error("{ellipses} ellipses but {scores} scores")]
    Length { ellipses: usize, scores: usize },
    #[error("threshold needs pairs of both kinds ({same} same-track, {cross} cross-track)")]
    SingleClass { same: usize, cross: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackCandidate {
    pub ellipse: Ellipse5,
    /// Mean score of the members.
    pub confidence: f64,
    /// Indices into the merged input.
    pub member_vertex_ids: Vec<usize>,
    /// `(p_T, ε_T)` once the tracking head has run.
    pub params: Option<(f64, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MergeParams {
    /// Members need IoU with the group seed strictly above this.
    pub iou_threshold: f64,
    pub iou_resolution: usize,
}

impl Default for MergeParams {
    fn default() -> Self {
        Self {
            iou_threshold: DEFAULT_IOU_THRESHOLD,
            iou_resolution: DEFAULT_IOU_RESOLUTION,
        }
    }
}

/// Greedy seed-anchored grouping: the highest-scoring unassigned ellipse
/// seeds a group, every unassigned ellipse overlapping the seed by more
/// than the threshold joins it, and the group is averaged.
///
/// Output is ordered by descending confidence.
pub fn merge_ellipses(
    ellipses: &[Ellipse5],
    scores: &[f64],
    params: &MergeParams,
) -> Result<Vec<TrackCandidate>, PostprocessError> {
    merge_ellipses_with(ellipses, scores, params, None)
}

/// [`merge_ellipses`] with an optional score re-weighting hook applied to
/// `(index, score)` before ordering.
pub fn merge_ellipses_with(
    ellipses: &[Ellipse5],
    scores: &[f64],
    params: &MergeParams,
    reweight: Option<&dyn Fn(usize, f64) -> f64>,
) -> Result<Vec<TrackCandidate>, PostprocessError> {
    if ellipses.len() != scores.len() {
        return Err(PostprocessError::Length {
            ellipses: ellipses.len(),
            scores: scores.len(),
        });
    }
    let ranked: Vec<f64> = match reweight {
        Some(f) => scores.iter().enumerate().map(|(i, &s)| f(i, s)).collect(),
        None => scores.to_vec(),
    };
    let mut order: Vec<usize> = (0..ellipses.len()).collect();
    order.sort_by(|&a, &b| ranked[b].total_cmp(&ranked[a]).then(a.cmp(&b)));

    let mut taken = alloc::vec![false; ellipses.len()];
    let mut out = Vec::new();
    for (k, &seed) in order.iter().enumerate() {
        if taken[seed] {
            continue;
        }
        taken[seed] = true;
        let mut members = alloc::vec![seed];
        for &j in &order[k + 1..] {
            if !taken[j] && ellipse_iou(&ellipses[seed], &ellipses[j], params.iou_resolution) > params.iou_threshold {
                taken[j] = true;
                members.push(j);
            }
        }
        let group: Vec<Ellipse5> = members.iter().map(|&i| ellipses[i]).collect();
        let confidence = members.iter().map(|&i| scores[i]).sum::<f64>() / members.len() as f64;
        out.push(TrackCandidate {
            ellipse: average_ellipses(&group),
            confidence,
            member_vertex_ids: members,
            params: None,
        });
    }
    out.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
    Ok(out)
}

/// Mean of η, a and b; φ averaged through offsets from the first member
/// wrapped to the shorter arc; θ as a circular mean with period π.
/// Means are taken as offsets from the first member, so identical inputs
/// average to themselves exactly.
pub fn average_ellipses(group: &[Ellipse5]) -> Ellipse5 {
    let n = group.len() as f64;
    let first = group[0];
    let mean_offset = |f: &dyn Fn(&Ellipse5) -> f64| group.iter().map(f).sum::<f64>() / n;
    let eta = first.eta_c + mean_offset(&|e| e.eta_c - first.eta_c);
    let phi = first.phi_c + mean_offset(&|e| wrap_angle(e.phi_c - first.phi_c));
    let a = first.a + mean_offset(&|e| e.a - first.a);
    let b = first.b + mean_offset(&|e| e.b - first.b);
    let theta = if group.iter().all(|e| e.theta == first.theta) {
        first.theta
    } else {
        let s2: f64 = group.iter().map(|e| (2.0 * e.theta).sin()).sum();
        let c2: f64 = group.iter().map(|e| (2.0 * e.theta).cos()).sum();
        0.5 * s2.atan2(c2)
    };
    Ellipse5::new(eta, phi, a, b, theta)
}

/// Assigns each vertex with `class_prob ≥ class_threshold` to the first
/// candidate (in the given order, i.e. highest confidence) whose ellipse
/// contains it. `vertices` holds `(η, φ, class_prob)`.
pub fn assign_hits(
    candidates: &[TrackCandidate],
    vertices: &[(f64, f64, f64)],
    class_threshold: f64,
) -> Vec<Option<usize>> {
    vertices
        .iter()
        .map(|&(eta, phi, p)| {
            if p < class_threshold {
                return None;
            }
            candidates.iter().position(|c| point_in_ellipse(&c.ellipse, (eta, phi)))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdChoice {
    pub threshold: f64,
    pub balanced_accuracy: f64,
    /// Some threshold classifies every pair correctly.
    pub separable: bool,
}

fn balanced_accuracy(pairs: &[(f64, bool)], t: f64, n_same: usize, n_cross: usize) -> f64 {
    let mut tp = 0usize;
    let mut tn = 0usize;
    for &(iou, same) in pairs {
        let pred = iou > t;
        if same && pred {
            tp += 1;
        } else if !same && !pred {
            tn += 1;
        }
    }
    0.5 * (tp as f64 / n_same as f64 + tn as f64 / n_cross as f64)
}

/// Threshold in `[0, 1]` maximizing the balanced accuracy of "same track
/// iff IoU > T". The score is constant between consecutive IoU values;
/// adjacent optimal intervals are merged and the midpoint of the widest
/// one is returned.
pub fn choose_threshold(pairs: &[(f64, bool)]) -> Result<ThresholdChoice, PostprocessError> {
    let n_same = pairs.iter().filter(|p| p.1).count();
    let n_cross = pairs.len() - n_same;
    if n_same == 0 || n_cross == 0 {
        return Err(PostprocessError::SingleClass {
            same: n_same,
            cross: n_cross,
        });
    }
    let mut cuts: Vec<f64> = pairs.iter().map(|p| p.0.clamp(0.0, 1.0)).collect();
    cuts.push(0.0);
    cuts.push(1.0);
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();

    let scored: Vec<(f64, f64, f64)> = cuts
        .windows(2)
        .map(|w| (w[0], w[1], balanced_accuracy(pairs, w[0], n_same, n_cross)))
        .collect();
    let best = scored.iter().map(|s| s.2).fold(f64::NEG_INFINITY, f64::max);

    let mut widest: Option<(f64, f64)> = None;
    let mut run: Option<(f64, f64)> = None;
    for &(lo, hi, ba) in &scored {
        if ba == best {
            run = Some(match run {
                Some((start, _)) => (start, hi),
                None => (lo, hi),
            });
        } else {
            run = None;
        }
        if let Some((s, e)) = run {
            if widest.is_none_or(|(ws, we)| e - s > we - ws) {
                widest = Some((s, e));
            }
        }
    }
    let (lo, hi) = widest.unwrap_or((0.0, 1.0));
    Ok(ThresholdChoice {
        threshold: 0.5 * (lo + hi),
        balanced_accuracy: best,
        separable: best == 1.0,
    })
}

/// Circular distance between two orientations with period π.
pub fn theta_distance(t1: f64, t2: f64) -> f64 {
    let d = canonical_theta(t1 - t2);
    d.min(PI - d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn p() -> MergeParams {
        MergeParams::default()
    }

    #[test]
    fn identical_ellipses_merge() {
        let e = Ellipse5::new(0.3, 1.2, 0.04, 0.01, 0.7);
        let c = merge_ellipses(&[e, e, e], &[0.9, 0.8, 0.7], &p()).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].ellipse, e);
        assert!((c[0].confidence - 0.8).abs() < 1e-15);
        assert_eq!(c[0].member_vertex_ids, [0, 1, 2]);
    }

    #[test]
    fn disjoint_ellipses_stay_apart() {
        let a = Ellipse5::new(0.0, 1.0, 0.04, 0.01, 0.0);
        let b = Ellipse5::new(1.0, 1.0, 0.04, 0.01, 0.0);
        let c = merge_ellipses(&[a, b], &[0.4, 0.6], &p()).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c[0].member_vertex_ids, [1]);
        assert_eq!(c[0].confidence, 0.6);
    }

    #[test]
    fn overlapping_pair_plus_outsider() {
        // slide B along η until IoU(A, B) is about 0.6
        let a = Ellipse5::new(0.0, 1.0, 0.05, 0.02, 0.0);
        let mut shift = 0.0;
        let mut b = a;
        while ellipse_iou(&a, &b, DEFAULT_IOU_RESOLUTION) > 0.6 {
            shift += 1e-4;
            b = Ellipse5::new(shift, 1.0, 0.05, 0.02, 0.0);
        }
        let iou = ellipse_iou(&a, &b, DEFAULT_IOU_RESOLUTION);
        assert!(iou > 0.55 && iou <= 0.6);
        let c_far = Ellipse5::new(2.0, 4.0, 0.05, 0.02, 0.0);
        let c = merge_ellipses(&[a, b, c_far], &[0.9, 0.8, 0.7], &p()).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c[0].member_vertex_ids, [0, 1]);
        assert!((c[0].ellipse.eta_c - shift / 2.0).abs() < 1e-12);
        assert_eq!(c[1].member_vertex_ids, [2]);
    }

    #[test]
    fn averaging_across_the_seams() {
        let a = Ellipse5::new(0.0, 0.01, 0.04, 0.01, 0.05);
        let b = Ellipse5::new(0.0, core::f64::consts::TAU - 0.01, 0.04, 0.01, PI - 0.05);
        let m = average_ellipses(&[a, b]);
        assert!(wrap_angle(m.phi_c).abs() < 1e-12);
        assert!(theta_distance(m.theta, 0.0) < 1e-12);
    }

    #[test]
    fn partition_and_confidence_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..30 {
            let n = rng.random_range(1..25);
            let es: Vec<Ellipse5> = (0..n)
                .map(|_| {
                    Ellipse5::new(
                        rng.random_range(-0.2..0.2),
                        rng.random_range(0.0..0.4),
                        rng.random_range(0.01..0.1),
                        rng.random_range(0.005..0.05),
                        rng.random_range(0.0..PI),
                    )
                })
                .collect();
            let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
            let c = merge_ellipses(&es, &scores, &p()).unwrap();
            let mut seen: Vec<usize> = c.iter().flat_map(|c| c.member_vertex_ids.clone()).collect();
            seen.sort_unstable();
            assert_eq!(seen, (0..n).collect::<Vec<_>>());
            for cand in &c {
                let s: Vec<f64> = cand.member_vertex_ids.iter().map(|&i| scores[i]).collect();
                let lo = s.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                assert!(cand.confidence >= lo - 1e-15 && cand.confidence <= hi + 1e-15);
                assert!(cand.ellipse.is_valid());
            }
            assert!(c.windows(2).all(|w| w[0].confidence >= w[1].confidence));
        }
    }

    #[test]
    fn length_mismatch() {
        let e = Ellipse5::circle(0.0, 0.0, 0.1);
        assert!(merge_ellipses(&[e], &[], &p()).is_err());
    }

    #[test]
    fn reweight_hook_changes_seed_order() {
        let a = Ellipse5::new(0.0, 1.0, 0.05, 0.02, 0.0);
        let b = Ellipse5::new(0.001, 1.0, 0.05, 0.02, 0.0);
        let flip = |i: usize, _s: f64| if i == 1 { 1.0 } else { 0.0 };
        let c = merge_ellipses_with(&[a, b], &[0.9, 0.1], &p(), Some(&flip)).unwrap();
        assert_eq!(c[0].member_vertex_ids, [1, 0]);
        assert_eq!(c[0].confidence, 0.5);
    }

    #[test]
    fn hit_assignment_rules() {
        let big = TrackCandidate {
            ellipse: Ellipse5::circle(0.0, 1.0, 0.1),
            confidence: 0.9,
            member_vertex_ids: alloc::vec![0],
            params: None,
        };
        let small = TrackCandidate {
            ellipse: Ellipse5::circle(0.05, 1.0, 0.1),
            confidence: 0.6,
            member_vertex_ids: alloc::vec![1],
            params: None,
        };
        let cands = [big, small];
        let v = [
            (0.0, 1.0, 0.9),
            (0.14, 1.0, 0.9),
            (0.05, 1.0, 0.8),
            (1.0, 1.0, 0.9),
            (0.0, 1.0, 0.2),
        ];
        assert_eq!(assign_hits(&cands, &v, 0.5), [Some(0), Some(1), Some(0), None, None]);
        assert!(assign_hits(&cands, &v, 0.95).iter().all(Option::is_none));
    }

    #[test]
    fn threshold_examples() {
        let sep = [(0.8, true), (0.95, true), (0.9, true), (0.2, false), (0.05, false)];
        let c = choose_threshold(&sep).unwrap();
        assert_eq!(c.threshold, 0.5);
        assert!(c.separable);
        let one = choose_threshold(&[(0.9, true), (0.1, false)]).unwrap();
        assert_eq!(one.threshold, 0.5);
        assert!(matches!(
            choose_threshold(&[(0.3, true)]),
            Err(PostprocessError::SingleClass { .. })
        ));
    }

    #[test]
    fn threshold_matches_exhaustive_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        for round in 0..40 {
            let n = rng.random_range(2..30);
            let mut pairs: Vec<(f64, bool)> = (0..n)
                .map(|_| {
                    let same = rng.random_bool(0.5);
                    // quantized so ties occur; overlapping in later rounds
                    let centre = if same && round % 2 == 0 { 0.7 } else { 0.4 };
                    let v: f64 = (centre + rng.random_range(-0.3..0.3f64)).clamp(0.0, 1.0);
                    ((v * 50.0).round() / 50.0, same)
                })
                .collect();
            pairs.push((0.5, true));
            pairs.push((0.5, false));
            let c = choose_threshold(&pairs).unwrap();
            let n_same = pairs.iter().filter(|p| p.1).count();
            let n_cross = pairs.len() - n_same;
            let mut best = 0.0f64;
            for k in 0..=100_000 {
                best = best.max(balanced_accuracy(&pairs, k as f64 * 1e-5, n_same, n_cross));
            }
            assert!((c.balanced_accuracy - best).abs() < 1e-12);
            assert!((balanced_accuracy(&pairs, c.threshold, n_same, n_cross) - best).abs() < 1e-12);
            assert_eq!(c.separable, best == 1.0);
        }
    }

    #[test]
    fn fully_overlapping_is_not_separable() {
        let pairs: Vec<(f64, bool)> = (0..10)
            .flat_map(|k| [(k as f64 / 10.0, true), (k as f64 / 10.0, false)])
            .collect();
        let c = choose_threshold(&pairs).unwrap();
        assert_eq!(c.balanced_accuracy, 0.5);
        assert!(!c.separable);
        // every interval scores 0.5, so they merge into [0, 1]
        assert_eq!(c.threshold, 0.5);
    }
}
