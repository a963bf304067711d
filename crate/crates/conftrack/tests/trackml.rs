use std::path::{Path, PathBuf};

use conftrack::trackml::{read_trackml_event, HITS_HEADER};
use conftrack::Error;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures/trackml")
        .join(name)
}

fn read(hits: &Path, truth: &Path, particles: &Path) -> Result<conftrack_core::event::Event, Error> {
    read_trackml_event(hits, truth, particles, 1, 2.0)
}

fn fixture_event() -> Result<conftrack_core::event::Event, Error> {
    read(
        &fixture("event000000001-hits.csv"),
        &fixture("event000000001-truth.csv"),
        &fixture("event000000001-particles.csv"),
    )
}

#[test]
fn fixture_event_is_read() {
    let e = fixture_event().unwrap();
    assert_eq!(e.hits.len(), 3);
    let h = &e.hits[0];
    assert_eq!((h.hit_id, h.volume, h.layer), (1, 8, 2));
    assert!((h.x + 0.0644).abs() < 1e-15 && (h.z + 0.514).abs() < 1e-15);
    assert!(e.hits[2].is_noise());
    assert_eq!(e.tracks.len(), 1);
    let t = &e.tracks[0];
    assert_eq!(t.particle_id, 4503599627370496);
    assert_eq!(t.hit_ids, vec![1, 2]);
    assert!((t.params.pt - 5.0).abs() < 1e-12);
    // prompt particle: circle through the origin
    assert!(t.params.eps_t < 1e-12);
}

#[test]
fn empty_hits_file_gives_an_empty_event() {
    let dir = tempfile::tempdir().unwrap();
    let hits = dir.path().join("hits.csv");
    let truth = dir.path().join("truth.csv");
    std::fs::write(&hits, format!("{}\n", HITS_HEADER.join(","))).unwrap();
    std::fs::write(&truth, "hit_id,particle_id,tx,ty,tz,tpx,tpy,tpz,weight\n").unwrap();
    let e = read(&hits, &truth, &fixture("event000000001-particles.csv")).unwrap();
    assert!(e.hits.is_empty() && e.tracks.is_empty());
}

#[test]
fn truth_for_an_unknown_hit_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let truth = dir.path().join("truth.csv");
    let mut text = std::fs::read_to_string(fixture("event000000001-truth.csv")).unwrap();
    text.push_str("9,4503599627370496,0,0,0,0,0,0,0\n");
    std::fs::write(&truth, text).unwrap();
    let err = read(
        &fixture("event000000001-hits.csv"),
        &truth,
        &fixture("event000000001-particles.csv"),
    )
    .unwrap_err();
    assert!(err.to_string().contains("hit 9"), "{err}");
    assert_eq!(err.exit_code(), 3);
}

#[test]
fn hits_without_truth_are_noise() {
    let dir = tempfile::tempdir().unwrap();
    let truth = dir.path().join("truth.csv");
    std::fs::write(&truth, "hit_id,particle_id,tx,ty,tz,tpx,tpy,tpz,weight\n").unwrap();
    let e = read(
        &fixture("event000000001-hits.csv"),
        &truth,
        &fixture("event000000001-particles.csv"),
    )
    .unwrap();
    assert_eq!(e.noise_count(), 3);
    assert!(e.tracks.is_empty());
}

#[test]
fn malformed_row_names_its_line() {
    let err = read(
        &fixture("malformed-hits.csv"),
        &fixture("event000000001-truth.csv"),
        &fixture("event000000001-particles.csv"),
    )
    .unwrap_err();
    assert!(matches!(err, Error::Data(_)));
    assert!(err.to_string().contains("line 3"), "{err}");
}

#[test]
fn missing_file_is_an_io_error() {
    let missing = fixture("no-such-file.csv");
    let err = read(
        &missing,
        &fixture("event000000001-truth.csv"),
        &fixture("event000000001-particles.csv"),
    )
    .unwrap_err();
    assert!(matches!(err, Error::Io { .. }));
    assert!(err.to_string().contains("no-such-file.csv"));
    assert_eq!(err.exit_code(), 5);
}
