//! Events: hits plus per-particle truth, a deterministic synthetic
//! generator over idealized cylindrical layers, and hit selection.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::f64::consts::TAU;

#[cfg(not(feature = "std"))]
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kinematics::{self, CircleTrack, PointXY, TrackParams};
use crate::{canonical_phi, wrap_angle};

/// Particle id carried by noise hits.
pub const NOISE_ID: u64 = 0;

/// Volume id stamped on synthetic hits (a TrackML pixel-barrel volume).
pub const SYNTHETIC_VOLUME: u32 = 8;

/// Largest `|δ|/R²` the generator will produce.
pub const MAX_DISPLACEMENT_RATIO: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EventError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("event {event_id} is inconsistent: {reason}")]
    Invalid { event_id: u64, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub hit_id: u64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    /// `√(x² + y²)`.
    pub r: f64,
    pub eta: f64,
    /// Azimuth in `[0, 2π)`.
    pub phi: f64,
    pub volume: u32,
    pub layer: u32,
    /// `0` marks noise.
    pub particle_id: u64,
}

impl Hit {
    /// Builds a hit from a space point in meters, deriving `r`, `η`, `φ`.
    pub fn from_xyz(hit_id: u64, [x, y, z]: [f64; 3], volume: u32, layer: u32, particle_id: u64) -> Self {
        let r = x.hypot(y);
        Self {
            hit_id,
            x,
            y,
            z,
            r,
            eta: kinematics::eta_of(r, z),
            phi: canonical_phi(y.atan2(x)),
            volume,
            layer,
            particle_id,
        }
    }

    pub fn is_noise(&self) -> bool {
        self.particle_id == NOISE_ID
    }

    pub fn xy(&self) -> PointXY {
        PointXY::new(self.x, self.y)
    }

    pub fn eta_phi(&self) -> (f64, f64) {
        (self.eta, self.phi)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthTrack {
    pub particle_id: u64,
    pub params: TrackParams,
    pub circle: CircleTrack,
    pub hit_ids: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub event_id: u64,
    pub hits: Vec<Hit>,
    pub tracks: Vec<TruthTrack>,
    /// Solenoid field in tesla.
    pub field_b: f64,
}

impl Event {
    pub fn track(&self, particle_id: u64) -> Option<&TruthTrack> {
        self.tracks.iter().find(|t| t.particle_id == particle_id)
    }

    pub fn noise_count(&self) -> usize {
        self.hits.iter().filter(|h| h.is_noise()).count()
    }

    /// Checks every structural invariant of the event.
    pub fn validate(&self) -> Result<(), EventError> {
        let fail = |reason: String| EventError::Invalid {
            event_id: self.event_id,
            reason,
        };
        let mut ids = BTreeMap::new();
        for h in &self.hits {
            if ids.insert(h.hit_id, h.particle_id).is_some() {
                return Err(fail(format!("duplicate hit id {}", h.hit_id)));
            }
            if (h.r - h.x.hypot(h.y)).abs() > 1e-12 * h.r.max(1.0) {
                return Err(fail(format!("hit {} has inconsistent r", h.hit_id)));
            }
            if !(0.0..TAU).contains(&h.phi)
                || wrap_angle(h.phi - h.y.atan2(h.x)).abs() > 1e-9
                || (h.eta - kinematics::eta_of(h.r, h.z)).abs() > 1e-9 * h.eta.abs().max(1.0)
            {
                return Err(fail(format!("hit {} has inconsistent eta/phi", h.hit_id)));
            }
        }
        let mut referenced = BTreeSet::new();
        for t in &self.tracks {
            if t.particle_id == NOISE_ID {
                return Err(fail(String::from("track with particle id 0")));
            }
            if t.hit_ids.is_empty() {
                return Err(fail(format!("track {} has no hits", t.particle_id)));
            }
            for id in &t.hit_ids {
                match ids.get(id) {
                    Some(&pid) if pid == t.particle_id => {}
                    Some(_) => {
                        return Err(fail(format!(
                            "hit {id} listed by track {} carries another particle id",
                            t.particle_id
                        )))
                    }
                    None => return Err(fail(format!("track {} lists unknown hit {id}", t.particle_id))),
                }
                if !referenced.insert(*id) {
                    return Err(fail(format!("hit {id} referenced twice")));
                }
            }
        }
        for h in &self.hits {
            if !h.is_noise() && !referenced.contains(&h.hit_id) {
                return Err(fail(format!("hit {} belongs to no track", h.hit_id)));
            }
        }
        Ok(())
    }
}

/// Idealized barrel: concentric cylinders in a uniform solenoid field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorConfig {
    /// Strictly increasing layer radii in meters.
    pub layer_radii: Vec<f64>,
    pub z_halflength: f64,
    pub field_b: f64,
}

impl Default for DetectorConfig {
    /// Radii of the four TrackML pixel-barrel layers, 2 T field.
    fn default() -> Self {
        Self {
            layer_radii: alloc::vec![0.032, 0.072, 0.116, 0.172],
            z_halflength: 0.5,
            field_b: 2.0,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<(), EventError> {
        if self.layer_radii.is_empty() {
            return Err(EventError::Config(String::from("detector has no layers")));
        }
        if self.layer_radii[0] <= 0.0 || self.layer_radii.windows(2).any(|w| w[1] <= w[0]) {
            return Err(EventError::Config(String::from(
                "layer radii must be positive and strictly increasing",
            )));
        }
        if !(self.z_halflength > 0.0) || !(self.field_b > 0.0) {
            return Err(EventError::Config(String::from(
                "z half-length and field must be positive",
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub n_tracks: usize,
    /// GeV.
    pub pt_range: (f64, f64),
    /// Unsigned transverse impact parameter range in meters.
    pub eps_range: (f64, f64),
    pub eta_range: (f64, f64),
    /// Noise hits over all hits.
    pub noise_fraction: f64,
    /// Gaussian smearing applied to each coordinate, meters.
    pub hit_smearing_sigma: f64,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            n_tracks: 10,
            pt_range: (2.0, 10.0),
            eps_range: (0.0, 1e-3),
            eta_range: (-1.5, 1.5),
            noise_fraction: 0.1,
            hit_smearing_sigma: 1e-5,
            seed: 0,
        }
    }
}

impl GenConfig {
    pub fn validate(&self, det: &DetectorConfig) -> Result<(), EventError> {
        let ordered = |(lo, hi): (f64, f64)| lo.is_finite() && hi.is_finite() && lo <= hi;
        if !ordered(self.pt_range) || !(self.pt_range.0 > 0.0) {
            return Err(EventError::Config(String::from(
                "pt_range must be ordered and positive",
            )));
        }
        if !ordered(self.eps_range) || self.eps_range.0 < 0.0 {
            return Err(EventError::Config(String::from(
                "eps_range must be ordered and non-negative",
            )));
        }
        if !ordered(self.eta_range) {
            return Err(EventError::Config(String::from("eta_range must be ordered")));
        }
        if !(0.0..1.0).contains(&self.noise_fraction) {
            return Err(EventError::Config(String::from("noise_fraction must lie in [0, 1)")));
        }
        if !(self.hit_smearing_sigma >= 0.0) {
            return Err(EventError::Config(String::from("hit smearing must be non-negative")));
        }
        let r_min =
            kinematics::radius_from_pt(det.field_b, self.pt_range.0).map_err(|e| EventError::Config(format!("{e}")))?;
        let eps = self.eps_range.1;
        let ratio = (2.0 * r_min * eps + eps * eps) / (r_min * r_min);
        if ratio > MAX_DISPLACEMENT_RATIO {
            return Err(EventError::Config(format!(
                "|δ|/R² reaches {ratio:.3e} at the low p_T end, above {MAX_DISPLACEMENT_RATIO}"
            )));
        }
        Ok(())
    }
}

/// Rotation sense (+1 counter-clockwise, -1 clockwise) and the point of
/// closest approach for a circle traversed with direction `phi0` at that point.
fn closest_approach(c: &CircleTrack, phi0: f64) -> (PointXY, f64) {
    let d = c.center_distance();
    let pca = if d > 0.0 {
        let k = 1.0 - c.radius / d;
        PointXY::new(c.a * k, c.b * k)
    } else {
        PointXY::new(c.a + c.radius, c.b)
    };
    // Counter-clockwise tangent at the PCA.
    let rx = pca.x - c.a;
    let ry = pca.y - c.b;
    let (s, co) = phi0.sin_cos();
    let sense = if -ry * co + rx * s >= 0.0 { 1.0 } else { -1.0 };
    (pca, sense)
}

/// First crossing of the track with the cylinder of radius `layer_radius`,
/// moving from the point of closest approach in direction `phi0`.
///
/// `z` grows linearly with the transverse arc length, `z = s·sinh η`.
/// Returns `None` when the circle never reaches the layer.
pub fn intersect_helix_layer(c: &CircleTrack, phi0: f64, eta: f64, layer_radius: f64) -> Option<[f64; 3]> {
    let d = c.center_distance();
    let big_r = c.radius;
    if !(layer_radius > 0.0) || d == 0.0 {
        return None;
    }
    if layer_radius > big_r + d || layer_radius < (big_r - d).abs() {
        return None;
    }
    let along = (layer_radius * layer_radius - big_r * big_r + d * d) / (2.0 * d);
    let h = (layer_radius * layer_radius - along * along).max(0.0).sqrt();
    let (ux, uy) = (c.a / d, c.b / d);
    let candidates = [
        PointXY::new(along * ux - h * uy, along * uy + h * ux),
        PointXY::new(along * ux + h * uy, along * uy - h * ux),
    ];
    let (pca, sense) = closest_approach(c, phi0);
    let start = (pca.y - c.b).atan2(pca.x - c.a);
    let best = candidates
        .iter()
        .map(|p| {
            let ang = (p.y - c.b).atan2(p.x - c.a);
            let mut turn = (sense * (ang - start)) % TAU;
            if turn < 0.0 {
                turn += TAU;
            }
            (turn, *p)
        })
        .min_by(|x, y| x.0.total_cmp(&y.0))?;
    let arc = big_r * best.0;
    Some([best.1.x, best.1.y, arc * eta.sinh()])
}

/// Generates one synthetic event. Deterministic in `gen.seed`; the event id
/// is the seed.
pub fn generate_event(det: &DetectorConfig, gen: &GenConfig) -> Result<Event, EventError> {
    det.validate()?;
    gen.validate(det)?;
    let mut rng = ChaCha8Rng::seed_from_u64(gen.seed);
    let smear = Normal::new(0.0, gen.hit_smearing_sigma).map_err(|e| EventError::Config(format!("smearing: {e}")))?;
    let uniform = |rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)| {
        if hi > lo {
            rng.random_range(lo..hi)
        } else {
            lo
        }
    };

    let mut hits = Vec::new();
    let mut tracks = Vec::new();
    let mut next_hit_id = 1u64;

    for k in 0..gen.n_tracks {
        let particle_id = k as u64 + 1;
        let pt = uniform(&mut rng, gen.pt_range);
        let radius = kinematics::radius_from_pt(det.field_b, pt).map_err(|e| EventError::Config(format!("{e}")))?;
        let phi0 = rng.random_range(0.0..TAU);
        let eta = uniform(&mut rng, gen.eta_range);
        let d0 = uniform(&mut rng, gen.eps_range);
        let side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let charge: i8 = if rng.random_bool(0.5) { 1 } else { -1 };

        // Positive charges bend clockwise in a +z field: the center sits to
        // the right of the direction of flight.
        let right = (phi0.sin(), -phi0.cos());
        let offset = side * d0 + f64::from(charge) * radius;
        let circle = CircleTrack {
            a: offset * right.0,
            b: offset * right.1,
            radius,
            charge,
        };

        let mut hit_ids = Vec::new();
        for (layer, &rho) in det.layer_radii.iter().enumerate() {
            let Some(p) = intersect_helix_layer(&circle, phi0, eta, rho) else {
                continue;
            };
            let noise = [smear.sample(&mut rng), smear.sample(&mut rng), smear.sample(&mut rng)];
            if p[2].abs() > det.z_halflength {
                continue;
            }
            let pos = [p[0] + noise[0], p[1] + noise[1], p[2] + noise[2]];
            hits.push(Hit::from_xyz(
                next_hit_id,
                pos,
                SYNTHETIC_VOLUME,
                layer as u32,
                particle_id,
            ));
            hit_ids.push(next_hit_id);
            next_hit_id += 1;
        }
        if hit_ids.is_empty() {
            continue;
        }
        tracks.push(TruthTrack {
            particle_id,
            params: TrackParams {
                pt,
                eps_t: circle.impact_parameter(),
                a: circle.a,
                b: circle.b,
            },
            circle,
            hit_ids,
        });
    }

    let signal = hits.len() as f64;
    let n_noise = (signal * gen.noise_fraction / (1.0 - gen.noise_fraction)).round() as usize;
    for _ in 0..n_noise {
        let layer = rng.random_range(0..det.layer_radii.len());
        let rho = det.layer_radii[layer];
        let phi = rng.random_range(0.0..TAU);
        let eta = uniform(&mut rng, gen.eta_range);
        let z = (rho * eta.sinh()).clamp(-det.z_halflength, det.z_halflength);
        let (s, c) = phi.sin_cos();
        hits.push(Hit::from_xyz(
            next_hit_id,
            [rho * c, rho * s, z],
            SYNTHETIC_VOLUME,
            layer as u32,
            NOISE_ID,
        ));
        next_hit_id += 1;
    }

    Ok(Event {
        event_id: gen.seed,
        hits,
        tracks,
        field_b: det.field_b,
    })
}

/// Hit selection by sub-detector volume and truth transverse momentum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Selection {
    /// GeV; applied to hits of truth particles only.
    pub pt_min: f64,
    /// Kept volume ids; `None` keeps every volume.
    pub volumes: Option<BTreeSet<u32>>,
}

impl Default for Selection {
    /// Pixel detector (TrackML volumes 7, 8, 9) and `p_T ≥ 2 GeV`.
    fn default() -> Self {
        Self {
            pt_min: 2.0,
            volumes: Some([7, 8, 9].into_iter().collect()),
        }
    }
}

impl Selection {
    pub fn everything() -> Self {
        Self {
            pt_min: 0.0,
            volumes: None,
        }
    }
}

/// Keeps hits in the selected volumes whose particle passes `pt_min`;
/// noise hits ignore the momentum cut. Tracks left without hits are dropped.
pub fn apply_selection(e: &Event, sel: &Selection) -> Event {
    let pt_of: BTreeMap<u64, f64> = e.tracks.iter().map(|t| (t.particle_id, t.params.pt)).collect();
    let keep = |h: &Hit| {
        let volume_ok = sel.volumes.as_ref().is_none_or(|v| v.contains(&h.volume));
        let pt_ok = h.is_noise() || pt_of.get(&h.particle_id).is_some_and(|&pt| pt >= sel.pt_min);
        volume_ok && pt_ok
    };
    let hits: Vec<Hit> = e.hits.iter().copied().filter(|h| keep(h)).collect();
    let kept: BTreeSet<u64> = hits.iter().map(|h| h.hit_id).collect();
    let tracks = e
        .tracks
        .iter()
        .filter_map(|t| {
            let hit_ids: Vec<u64> = t.hit_ids.iter().copied().filter(|id| kept.contains(id)).collect();
            (!hit_ids.is_empty()).then(|| TruthTrack { hit_ids, ..t.clone() })
        })
        .collect();
    Event {
        event_id: e.event_id,
        hits,
        tracks,
        field_b: e.field_b,
    }
}
