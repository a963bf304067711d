//! Hit graphs: DBSCAN clusters in η–φ become connected components, vertex
//! states start as `(z, layer)`, and every track vertex carries its
//! particle's enclosing ellipse as a regression target.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use crate::dbscan::DbscanParams;
use crate::dbscan::{dbscan, UNCLUSTERED};
use crate::ellipse::{self, Ellipse5, SEMI_AXIS_FLOOR};
use crate::event::{Event, NOISE_ID};
use crate::kinematics::PointXY;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GraphError {
    #[error("event {0} has no hits")]
    EmptyEvent(u64),
    #[error("track vertex for hit {hit_id} (particle {particle_id}) has no truth ellipse")]
    MissingEllipse { hit_id: u64, particle_id: u64 },
    #[error("invalid graph: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VertexClass {
    Track,
    Noise,
}

impl VertexClass {
    /// Classification target: 1 for track hits, 0 for noise.
    pub fn target(self) -> f64 {
        match self {
            VertexClass::Track => 1.0,
            VertexClass::Noise => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Vertex {
    pub eta: f64,
    pub phi: f64,
    /// Initial state `(z, layer)`.
    pub state: [f64; 2],
    pub hit_id: u64,
    pub class: VertexClass,
    pub target: Option<Ellipse5>,
    pub particle_id: u64,
    /// Transverse position, used for the conformal fit features.
    pub x: f64,
    pub y: f64,
}

impl Vertex {
    pub fn eta_phi(&self) -> (f64, f64) {
        (self.eta, self.phi)
    }

    pub fn xy(&self) -> PointXY {
        PointXY::new(self.x, self.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub i: usize,
    pub j: usize,
    /// Both endpoints come from the same non-noise particle.
    pub truth: bool,
}

/// Truth kinematics of a particle present in the graph.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraphTrack {
    pub particle_id: u64,
    pub pt: f64,
    pub eps_t: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Graph {
    pub event_id: u64,
    pub field_b: f64,
    pub vertices: Vec<Vertex>,
    pub edges: Vec<Edge>,
    pub tracks: Vec<GraphTrack>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EdgeTopology {
    /// Every pair of vertices inside a cluster.
    #[default]
    Complete,
    /// Pairs inside a cluster whose layers differ by exactly one.
    LayerAdjacent,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphParams {
    pub dbscan: DbscanParams,
    pub topology: EdgeTopology,
    /// Relative growth of both semi-axes of the truth ellipses.
    pub ellipse_padding: f64,
    /// Convergence tolerance of the enclosing-ellipse iteration.
    pub mvee_tolerance: f64,
}

impl Default for GraphParams {
    fn default() -> Self {
        Self {
            dbscan: DbscanParams::default(),
            topology: EdgeTopology::Complete,
            ellipse_padding: 0.1,
            mvee_tolerance: 1e-7,
        }
    }
}

impl Graph {
    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    /// Structural checks: edge ranges, no self loops, `i < j` uniqueness,
    /// label soundness and target presence on track vertices only.
    pub fn validate(&self) -> Result<(), GraphError> {
        let n = self.vertices.len();
        let mut seen = BTreeSet::new();
        for e in &self.edges {
            if e.i >= n || e.j >= n {
                return Err(GraphError::Invalid(alloc::format!(
                    "edge ({}, {}) out of range",
                    e.i,
                    e.j
                )));
            }
            if e.i >= e.j {
                return Err(GraphError::Invalid(alloc::format!(
                    "edge ({}, {}) is not i < j",
                    e.i,
                    e.j
                )));
            }
            if !seen.insert((e.i, e.j)) {
                return Err(GraphError::Invalid(alloc::format!("duplicate edge ({}, {})", e.i, e.j)));
            }
            if e.truth != same_particle(&self.vertices[e.i], &self.vertices[e.j]) {
                return Err(GraphError::Invalid(alloc::format!(
                    "edge ({}, {}) mislabeled",
                    e.i,
                    e.j
                )));
            }
        }
        for v in &self.vertices {
            if (v.class == VertexClass::Noise) != (v.particle_id == NOISE_ID) {
                return Err(GraphError::Invalid(alloc::format!("hit {} has wrong class", v.hit_id)));
            }
            if v.class == VertexClass::Noise && v.target.is_some() {
                return Err(GraphError::Invalid(alloc::format!(
                    "noise hit {} has a target",
                    v.hit_id
                )));
            }
        }
        Ok(())
    }

    /// Vertex indices grouped by truth particle, in ascending particle id.
    pub fn truth_clusters(&self) -> Vec<(u64, Vec<usize>)> {
        let mut groups: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
        for (i, v) in self.vertices.iter().enumerate() {
            if v.particle_id != NOISE_ID {
                groups.entry(v.particle_id).or_default().push(i);
            }
        }
        groups.into_iter().collect()
    }

    /// Neighbor lists; every undirected edge appears in both endpoints.
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = alloc::vec![Vec::new(); self.vertices.len()];
        for e in &self.edges {
            adj[e.i].push(e.j);
            adj[e.j].push(e.i);
        }
        adj
    }
}

fn same_particle(a: &Vertex, b: &Vertex) -> bool {
    a.particle_id != NOISE_ID && a.particle_id == b.particle_id
}

/// Clusters the event's hits in η–φ and connects vertices inside each
/// cluster. Unclustered hits stay isolated.
pub fn build_graph(e: &Event, p: &GraphParams) -> Result<Graph, GraphError> {
    if e.hits.is_empty() {
        return Err(GraphError::EmptyEvent(e.event_id));
    }
    let vertices: Vec<Vertex> = e
        .hits
        .iter()
        .map(|h| Vertex {
            eta: h.eta,
            phi: h.phi,
            state: [h.z, f64::from(h.layer)],
            hit_id: h.hit_id,
            class: if h.is_noise() {
                VertexClass::Noise
            } else {
                VertexClass::Track
            },
            target: None,
            particle_id: h.particle_id,
            x: h.x,
            y: h.y,
        })
        .collect();

    let coords: Vec<(f64, f64)> = vertices.iter().map(Vertex::eta_phi).collect();
    let labels = dbscan(&coords, &p.dbscan);
    let mut clusters: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        if l != UNCLUSTERED {
            clusters.entry(l).or_default().push(i);
        }
    }

    let layer = |i: usize| e.hits[i].layer as i64;
    let mut edges = Vec::new();
    for members in clusters.values() {
        for (k, &i) in members.iter().enumerate() {
            for &j in &members[k + 1..] {
                let connect = match p.topology {
                    EdgeTopology::Complete => true,
                    EdgeTopology::LayerAdjacent => (layer(i) - layer(j)).abs() == 1,
                };
                if connect {
                    let (i, j) = if i < j { (i, j) } else { (j, i) };
                    edges.push(Edge {
                        i,
                        j,
                        truth: same_particle(&vertices[i], &vertices[j]),
                    });
                }
            }
        }
    }
    edges.sort_by_key(|e| (e.i, e.j));

    let present: BTreeSet<u64> = vertices.iter().map(|v| v.particle_id).collect();
    let tracks = e
        .tracks
        .iter()
        .filter(|t| present.contains(&t.particle_id))
        .map(|t| GraphTrack {
            particle_id: t.particle_id,
            pt: t.params.pt,
            eps_t: t.params.eps_t,
        })
        .collect();

    Ok(Graph {
        event_id: e.event_id,
        field_b: e.field_b,
        vertices,
        edges,
        tracks,
    })
}

/// One padded minimum-area ellipse per truth track.
///
/// Both semi-axes grow by `1 + padding`; afterwards each is raised to at
/// least [`SEMI_AXIS_FLOOR`], so single-hit tracks become floor circles and
/// two-hit tracks get a floor-width minor axis.
pub fn truth_ellipses(e: &Event, padding: f64, tolerance: f64) -> Vec<(u64, Ellipse5)> {
    let by_id: BTreeMap<u64, (f64, f64)> = e.hits.iter().map(|h| (h.hit_id, h.eta_phi())).collect();
    e.tracks
        .iter()
        .filter_map(|t| {
            let pts: Vec<(f64, f64)> = t.hit_ids.iter().filter_map(|id| by_id.get(id).copied()).collect();
            let raw = ellipse::mvee_unfloored(&pts, tolerance).ok()?;
            let grow = 1.0 + padding;
            Some((
                t.particle_id,
                Ellipse5::new(
                    raw.eta_c,
                    raw.phi_c,
                    (raw.a * grow).max(SEMI_AXIS_FLOOR),
                    (raw.b * grow).max(SEMI_AXIS_FLOOR),
                    raw.theta,
                ),
            ))
        })
        .collect()
}

/// Copies each track vertex's particle ellipse onto the vertex; noise
/// vertices get no target.
pub fn assign_vertex_targets(g: &Graph, ellipses: &[(u64, Ellipse5)]) -> Result<Graph, GraphError> {
    let lookup: BTreeMap<u64, Ellipse5> = ellipses.iter().copied().collect();
    let mut out = g.clone();
    for v in &mut out.vertices {
        v.target = match v.class {
            VertexClass::Noise => None,
            VertexClass::Track => Some(*lookup.get(&v.particle_id).ok_or(GraphError::MissingEllipse {
                hit_id: v.hit_id,
                particle_id: v.particle_id,
            })?),
        };
    }
    Ok(out)
}

/// Graph with targets: `build_graph`, `truth_ellipses`, `assign_vertex_targets`.
pub fn build_training_graph(e: &Event, p: &GraphParams) -> Result<Graph, GraphError> {
    let g = build_graph(e, p)?;
    let ellipses = truth_ellipses(e, p.ellipse_padding, p.mvee_tolerance);
    assign_vertex_targets(&g, &ellipses)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ellipse::point_in_ellipse;
    use crate::event::{generate_event, DetectorConfig, GenConfig, Hit, TruthTrack};
    use crate::kinematics::{CircleTrack, TrackParams};

    fn truth(particle_id: u64, hit_ids: Vec<u64>) -> TruthTrack {
        TruthTrack {
            particle_id,
            params: TrackParams {
                pt: 3.0,
                eps_t: 0.0,
                a: 0.0,
                b: 5.0,
            },
            circle: CircleTrack {
                a: 0.0,
                b: 5.0,
                radius: 5.0,
                charge: 1,
            },
            hit_ids,
        }
    }

    /// Hit placed at (η, φ) on a 0.1 m cylinder.
    fn hit(id: u64, eta: f64, phi: f64, layer: u32, particle: u64) -> Hit {
        let r = 0.1;
        Hit::from_xyz(id, [r * phi.cos(), r * phi.sin(), r * eta.sinh()], 8, layer, particle)
    }

    fn event(hits: Vec<Hit>, tracks: Vec<TruthTrack>) -> Event {
        Event {
            event_id: 1,
            hits,
            tracks,
            field_b: 2.0,
        }
    }

    #[test]
    fn four_hit_cluster_is_k4() {
        let hits = (0..4)
            .map(|k| hit(k + 1, 0.2, 1.0 + 0.01 * k as f64, k as u32, 1))
            .collect();
        let e = event(hits, alloc::vec![truth(1, (1..=4).collect())]);
        let g = build_graph(&e, &GraphParams::default()).unwrap();
        assert_eq!(g.edges.len(), 6);
        assert!(g.edges.iter().all(|e| e.truth));
        g.validate().unwrap();
        assert_eq!(g.vertices[2].state, [e.hits[2].z, 2.0]);

        let adj = GraphParams {
            topology: EdgeTopology::LayerAdjacent,
            ..GraphParams::default()
        };
        assert_eq!(build_graph(&e, &adj).unwrap().edges.len(), 3);
    }

    #[test]
    fn mixed_cluster_labels() {
        let hits = alloc::vec![
            hit(1, 0.2, 1.00, 0, 1),
            hit(2, 0.2, 1.01, 1, 1),
            hit(3, 0.21, 1.02, 0, 2),
            hit(4, 0.21, 1.03, 1, 2),
        ];
        let e = event(
            hits,
            alloc::vec![truth(1, alloc::vec![1, 2]), truth(2, alloc::vec![3, 4])],
        );
        let g = build_graph(&e, &GraphParams::default()).unwrap();
        assert_eq!(g.edges.len(), 6);
        let true_edges: Vec<(usize, usize)> = g.edges.iter().filter(|e| e.truth).map(|e| (e.i, e.j)).collect();
        assert_eq!(true_edges, [(0, 1), (2, 3)]);
        g.validate().unwrap();
    }

    #[test]
    fn isolated_noise() {
        let hits = (0..5)
            .map(|k| hit(k + 1, -1.0 + 0.5 * k as f64, 0.5 * k as f64, 0, 0))
            .collect();
        let e = event(hits, Vec::new());
        let g = build_graph(&e, &GraphParams::default()).unwrap();
        assert!(g.edges.is_empty());
        assert!(g.vertices.iter().all(|v| v.class == VertexClass::Noise));
        let g = assign_vertex_targets(&g, &[]).unwrap();
        assert!(g.vertices.iter().all(|v| v.target.is_none() && v.class.target() == 0.0));
    }

    #[test]
    fn empty_event_is_rejected() {
        assert_eq!(
            build_graph(&event(Vec::new(), Vec::new()), &GraphParams::default()),
            Err(GraphError::EmptyEvent(1))
        );
    }

    #[test]
    fn truth_ellipse_degenerate_tracks() {
        let hits = alloc::vec![hit(1, 0.3, 2.0, 0, 1), hit(2, 0.5, 1.0, 0, 2), hit(3, 0.5, 1.2, 1, 2)];
        let e = event(hits, alloc::vec![truth(1, alloc::vec![1]), truth(2, alloc::vec![2, 3])]);
        let ells = truth_ellipses(&e, 0.1, 1e-7);
        let single = ells[0].1;
        assert_eq!((single.a, single.b), (SEMI_AXIS_FLOOR, SEMI_AXIS_FLOOR));
        let pair = ells[1].1;
        assert!((pair.a - 0.1 * 1.1).abs() < 1e-9);
        assert_eq!(pair.b, SEMI_AXIS_FLOOR);
    }

    #[test]
    fn collinear_track_along_eta() {
        let hits: Vec<Hit> = (0..5).map(|k| hit(k + 1, 0.1 * k as f64, 1.0, k as u32, 1)).collect();
        let len = hits[4].eta - hits[0].eta;
        let e = event(hits, alloc::vec![truth(1, (1..=5).collect())]);
        let ell = truth_ellipses(&e, 0.1, 1e-7)[0].1;
        assert!((ell.a - len / 2.0 * 1.1).abs() < 1e-9);
        assert!(ell.theta.abs() < 1e-9 || (core::f64::consts::PI - ell.theta).abs() < 1e-9);
    }

    #[test]
    fn generated_event_targets() {
        let gen = GenConfig {
            seed: 4,
            eta_range: (-1.0, 1.0),
            ..GenConfig::default()
        };
        let e = generate_event(&DetectorConfig::default(), &gen).unwrap();
        let g = build_training_graph(&e, &GraphParams::default()).unwrap();
        g.validate().unwrap();
        let n_track = g.vertices.iter().filter(|v| v.class == VertexClass::Track).count();
        assert_eq!(g.vertices.iter().filter(|v| v.target.is_some()).count(), n_track);
        for (pid, members) in g.truth_clusters() {
            let first = g.vertices[members[0]].target.unwrap();
            for &i in &members {
                let v = &g.vertices[i];
                assert_eq!(v.target.unwrap(), first, "particle {pid}");
                assert!(point_in_ellipse(&first, v.eta_phi()));
            }
        }
    }

    #[test]
    fn missing_ellipse_is_an_error() {
        let hits = alloc::vec![hit(1, 0.3, 2.0, 0, 1)];
        let e = event(hits, alloc::vec![truth(1, alloc::vec![1])]);
        let g = build_graph(&e, &GraphParams::default()).unwrap();
        assert!(matches!(
            assign_vertex_targets(&g, &[]),
            Err(GraphError::MissingEllipse { .. })
        ));
    }
}
