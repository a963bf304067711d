//! TrackML CSV ingestion (hits, truth and particles files of one event).

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::Read;
use std::path::Path;

use conftrack_core::event::{Event, Hit, TruthTrack, NOISE_ID};
use conftrack_core::kinematics::{radius_from_pt, CircleTrack, TrackParams};
use serde::de::DeserializeOwned;
use serde::Deserialize;

use crate::error::{Error, Result};

pub const HITS_HEADER: [&str; 7] = ["hit_id", "x", "y", "z", "volume_id", "layer_id", "module_id"];
pub const TRUTH_HEADER: [&str; 9] = ["hit_id", "particle_id", "tx", "ty", "tz", "tpx", "tpy", "tpz", "weight"];
pub const PARTICLES_HEADER: [&str; 9] = ["particle_id", "vx", "vy", "vz", "px", "py", "pz", "q", "nhits"];

/// TrackML lengths are millimeters.
const MM: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct HitRow {
    pub hit_id: u64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub volume_id: u32,
    pub layer_id: u32,
    pub module_id: u64,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct TruthRow {
    pub hit_id: u64,
    pub particle_id: u64,
    pub tx: f64,
    pub ty: f64,
    pub tz: f64,
    pub tpx: f64,
    pub tpy: f64,
    pub tpz: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct ParticleRow {
    pub particle_id: u64,
    pub vx: f64,
    pub vy: f64,
    pub vz: f64,
    pub px: f64,
    pub py: f64,
    pub pz: f64,
    pub q: i32,
    pub nhits: u32,
}

/// Reads every row of a CSV whose header must equal `header` exactly.
/// Errors carry the 1-based line number, the header being line 1.
pub fn read_rows<T: DeserializeOwned, R: Read>(reader: R, header: &[&str], name: &str) -> Result<Vec<T>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let found = rdr
        .headers()
        .map_err(|e| Error::Data(format!("{name}: line 1: {e}")))?
        .clone();
    if found.iter().ne(header.iter().copied()) {
        return Err(Error::Data(format!(
            "{name}: line 1: expected header \"{}\", found \"{}\"",
            header.join(","),
            found.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut rows = Vec::new();
    for rec in rdr.deserialize() {
        rows.push(rec.map_err(|e: csv::Error| {
            let line = e.position().map_or(0, |p| p.line());
            Error::Data(format!("{name}: line {line}: {}", describe(&e)))
        })?);
    }
    Ok(rows)
}

fn describe(e: &csv::Error) -> String {
    match e.kind() {
        csv::ErrorKind::Deserialize { err, .. } => err.to_string(),
        csv::ErrorKind::UnequalLengths { expected_len, len, .. } => {
            format!("expected {expected_len} fields, found {len}")
        }
        _ => e.to_string(),
    }
}

fn read_file<T: DeserializeOwned>(path: &Path, header: &[&str]) -> Result<Vec<T>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_rows(f, header, &path.display().to_string())
}

/// Builds an event from parsed rows. Hits without a truth row are noise;
/// a truth row for an unknown hit is an error.
pub fn assemble_event(
    event_id: u64,
    hits: &[HitRow],
    truth: &[TruthRow],
    particles: &[ParticleRow],
    field_b: f64,
) -> Result<Event> {
    let known: HashMap<u64, ()> = hits.iter().map(|h| (h.hit_id, ())).collect();
    let mut particle_of = HashMap::with_capacity(truth.len());
    for t in truth {
        if !known.contains_key(&t.hit_id) {
            return Err(Error::Data(format!(
                "event {event_id}: truth lists hit {} which is not in the hits file",
                t.hit_id
            )));
        }
        particle_of.insert(t.hit_id, t.particle_id);
    }
    let by_pid: HashMap<u64, &ParticleRow> = particles.iter().map(|p| (p.particle_id, p)).collect();

    let mut out_hits = Vec::with_capacity(hits.len());
    // particle id -> hit ids, in order of first appearance
    let mut order: Vec<u64> = Vec::new();
    let mut members: BTreeMap<u64, Vec<u64>> = BTreeMap::new();
    for h in hits {
        let pid = particle_of.get(&h.hit_id).copied().unwrap_or(NOISE_ID);
        out_hits.push(Hit::from_xyz(
            h.hit_id,
            [h.x * MM, h.y * MM, h.z * MM],
            h.volume_id,
            h.layer_id,
            pid,
        ));
        if pid != NOISE_ID {
            let e = members.entry(pid).or_default();
            if e.is_empty() {
                order.push(pid);
            }
            e.push(h.hit_id);
        }
    }

    let mut tracks = Vec::with_capacity(order.len());
    for pid in order {
        let p = by_pid.get(&pid).ok_or_else(|| {
            Error::Data(format!(
                "event {event_id}: particle {pid} is in truth but not in particles"
            ))
        })?;
        let circle =
            particle_circle(p, field_b).map_err(|m| Error::Data(format!("event {event_id}: particle {pid}: {m}")))?;
        tracks.push(TruthTrack {
            particle_id: pid,
            params: TrackParams {
                pt: p.px.hypot(p.py),
                eps_t: circle.impact_parameter(),
                a: circle.a,
                b: circle.b,
            },
            circle,
            hit_ids: members.remove(&pid).unwrap_or_default(),
        });
    }
    let e = Event {
        event_id,
        hits: out_hits,
        tracks,
        field_b,
    };
    e.validate()?;
    Ok(e)
}

/// Transverse circle of a particle from its production vertex and
/// momentum. Neutral particles are given the positive bending sense.
fn particle_circle(p: &ParticleRow, field_b: f64) -> std::result::Result<CircleTrack, String> {
    let pt = p.px.hypot(p.py);
    let radius = radius_from_pt(field_b, pt).map_err(|e| e.to_string())?;
    let phi0 = p.py.atan2(p.px);
    let charge: i8 = if p.q < 0 { -1 } else { 1 };
    // same convention as the generator: the center lies to the right of
    // the flight direction for positive charge
    let right = (phi0.sin(), -phi0.cos());
    let s = f64::from(charge) * radius;
    Ok(CircleTrack {
        a: p.vx * MM + s * right.0,
        b: p.vy * MM + s * right.1,
        radius,
        charge,
    })
}

/// Reads one TrackML event from its three CSV files.
pub fn read_trackml_event(hits: &Path, truth: &Path, particles: &Path, event_id: u64, field_b: f64) -> Result<Event> {
    let h: Vec<HitRow> = read_file(hits, &HITS_HEADER)?;
    let t: Vec<TruthRow> = read_file(truth, &TRUTH_HEADER)?;
    let p: Vec<ParticleRow> = read_file(particles, &PARTICLES_HEADER)?;
    assemble_event(event_id, &h, &t, &p, field_b)
}

/// Event number embedded in a TrackML file name, e.g. 1000 for
/// `event000001000-hits.csv`.
pub fn event_id_from_path(path: &Path) -> Option<u64> {
    let name = path.file_name()?.to_str()?;
    let digits: String = name
        .strip_prefix("event")?
        .chars()
        .take_while(char::is_ascii_digit)
        .collect();
    digits.parse().ok()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn event_ids_from_names() {
        assert_eq!(event_id_from_path(Path::new("a/event000001000-hits.csv")), Some(1000));
        assert_eq!(event_id_from_path(Path::new("hits.csv")), None);
    }

    #[test]
    fn header_must_match() {
        let err = read_rows::<HitRow, _>("hit_id,x,y,z\n1,2,3,4\n".as_bytes(), &HITS_HEADER, "hits").unwrap_err();
        assert!(err.to_string().contains("line 1"));
    }

    #[test]
    fn unequal_row_length() {
        let text = "hit_id,x,y,z,volume_id,layer_id,module_id\n1,2,3,4,8,2,1\n2,2,3\n";
        let err = read_rows::<HitRow, _>(text.as_bytes(), &HITS_HEADER, "hits").unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
    }
}
