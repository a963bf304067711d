//! Hit classification, segmentation and parameter-resolution metrics.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

#[cfg(not(feature = "std"))]
use num_traits::Float;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::event::{Event, NOISE_ID};
use crate::postprocess::TrackCandidate;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("no truth event with id {0}")]
    MissingEvent(u64),
    #[error("event {0} appears more than once")]
    DuplicateEvent(u64),
    #[error("event {event_id}: {reason}")]
    Inconsistent { event_id: u64, reason: &'static str },
}

/// Network output and post-processing result for one event. The per-hit
/// vectors are aligned with `hit_ids`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventPrediction {
    pub event_id: u64,
    pub hit_ids: Vec<u64>,
    pub class_prob: Vec<f64>,
    /// Candidate index per hit.
    pub assignments: Vec<Option<usize>>,
    pub candidates: Vec<TrackCandidate>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// A candidate matches a truth track when it holds more than this
    /// fraction of the track's hits.
    pub match_fraction: f64,
    pub class_threshold: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            match_fraction: 0.5,
            class_threshold: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HitClassification {
    pub accuracy: f64,
    /// `None` when only one class is present.
    pub auc: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segmentation {
    pub efficiency: f64,
    /// 0 when there are no candidates, see `no_candidates`.
    pub purity: f64,
    pub no_candidates: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParameterResolution {
    /// RMS of `(p̂_T − p_T) / p_T`.
    pub pt_rel_rms: f64,
    /// RMS of `ε̂_T − ε_T`.
    pub eps_t_abs_rms: f64,
    /// Matched pairs with predicted parameters; both RMS values are 0 when
    /// there are none.
    pub n_pairs: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub events: usize,
    pub hits: usize,
    pub truth_tracks: usize,
    pub candidates: usize,
    pub matched_tracks: usize,
    pub matched_candidates: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub hit_classification: HitClassification,
    pub segmentation: Segmentation,
    pub parameter_resolution: ParameterResolution,
    pub counts: Counts,
}

/// Area under the ROC curve by the Mann–Whitney statistic, ties counted
/// as one half.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // sum of average ranks of the positives
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let avg = 0.5 * ((i + 1) + (j + 1)) as f64;
        rank_sum += idx[i..=j].iter().filter(|&&k| labels[k]).count() as f64 * avg;
        i = j + 1;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos as f64 * n_neg as f64))
}

fn rms(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt()
    }
}

/// Scores predictions against truth. Events are paired by id, so the
/// order of either list does not matter.
pub fn evaluate(preds: &[EventPrediction], truth: &[Event], cfg: &EvalConfig) -> Result<Metrics, MetricsError> {
    let mut by_id: BTreeMap<u64, &Event> = BTreeMap::new();
    for e in truth {
        if by_id.insert(e.event_id, e).is_some() {
            return Err(MetricsError::DuplicateEvent(e.event_id));
        }
    }
    let mut seen = BTreeMap::new();
    // evaluate in id order so floating sums do not depend on input order
    let mut ordered: Vec<&EventPrediction> = preds.iter().collect();
    ordered.sort_by_key(|p| p.event_id);

    let mut scores = Vec::new();
    let mut labels = Vec::new();
    let mut correct = 0usize;
    let mut counts = Counts {
        events: preds.len(),
        hits: 0,
        truth_tracks: 0,
        candidates: 0,
        matched_tracks: 0,
        matched_candidates: 0,
    };
    let mut pt_res = Vec::new();
    let mut eps_res = Vec::new();

    for p in ordered {
        if seen.insert(p.event_id, ()).is_some() {
            return Err(MetricsError::DuplicateEvent(p.event_id));
        }
        let ev = by_id.get(&p.event_id).ok_or(MetricsError::MissingEvent(p.event_id))?;
        let inconsistent = |reason| MetricsError::Inconsistent {
            event_id: p.event_id,
            reason,
        };
        if p.class_prob.len() != p.hit_ids.len() || p.assignments.len() != p.hit_ids.len() {
            return Err(inconsistent("per-hit vectors differ in length"));
        }
        if p.assignments.iter().flatten().any(|&c| c >= p.candidates.len()) {
            return Err(inconsistent("assignment to a missing candidate"));
        }
        let particle_of: BTreeMap<u64, u64> = ev.hits.iter().map(|h| (h.hit_id, h.particle_id)).collect();
        let mut assigned: BTreeMap<u64, usize> = BTreeMap::new();
        for (k, &hid) in p.hit_ids.iter().enumerate() {
            let pid = *particle_of
                .get(&hid)
                .ok_or(inconsistent("hit id not in the truth event"))?;
            let is_track = pid != NOISE_ID;
            let prob = p.class_prob[k];
            scores.push(prob);
            labels.push(is_track);
            if (prob >= cfg.class_threshold) == is_track {
                correct += 1;
            }
            if let Some(c) = p.assignments[k] {
                assigned.insert(hid, c);
            }
        }
        counts.hits += p.hit_ids.len();
        counts.candidates += p.candidates.len();

        let mut cand_matched = alloc::vec![false; p.candidates.len()];
        for t in &ev.tracks {
            if t.hit_ids.is_empty() {
                continue;
            }
            counts.truth_tracks += 1;
            let mut tally: BTreeMap<usize, usize> = BTreeMap::new();
            for hid in &t.hit_ids {
                if let Some(&c) = assigned.get(hid) {
                    *tally.entry(c).or_default() += 1;
                }
            }
            let need = cfg.match_fraction * t.hit_ids.len() as f64;
            let best = tally
                .iter()
                .filter(|(_, &n)| n as f64 > need)
                .max_by_key(|(&c, &n)| (n, core::cmp::Reverse(c)));
            if let Some((&c, _)) = best {
                counts.matched_tracks += 1;
                cand_matched[c] = true;
                if let Some((pt, eps)) = p.candidates[c].params {
                    pt_res.push((pt - t.params.pt) / t.params.pt);
                    eps_res.push(eps - t.params.eps_t);
                }
            }
        }
        counts.matched_candidates += cand_matched.iter().filter(|&&m| m).count();
    }
    for p in preds {
        if !by_id.contains_key(&p.event_id) {
            return Err(MetricsError::MissingEvent(p.event_id));
        }
    }

    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    Ok(Metrics {
        hit_classification: HitClassification {
            accuracy: ratio(correct, counts.hits),
            auc: roc_auc(&scores, &labels),
        },
        segmentation: Segmentation {
            efficiency: ratio(counts.matched_tracks, counts.truth_tracks),
            purity: ratio(counts.matched_candidates, counts.candidates),
            no_candidates: counts.candidates == 0,
        },
        parameter_resolution: ParameterResolution {
            pt_rel_rms: rms(&pt_res),
            eps_t_abs_rms: rms(&eps_res),
            n_pairs: pt_res.len(),
        },
        counts,
    })
}
