//! One-shot charged-particle tracking as instance segmentation.
//!
//! Hits are clustered in η–φ space into graphs, a message-passing network
//! with auto-registration classifies each hit and regresses an elliptical
//! bounding box around its track, the boxes are merged into track
//! candidates, and transverse track parameters (p_T, ε_T) are extracted
//! from a parabola fit in conformal space.
//!
//! Without the default `std` feature the crate is `no_std` and only needs
//! `alloc`; float math then goes through `libm`. File formats, CSV
//! ingestion, plotting and the command line live in the `conftrack` crate.

#![cfg_attr(not(feature = "std"), no_std)]
// `!(x > 0.0)` is used on purpose so NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

extern crate alloc;

pub mod dbscan;
pub mod ellipse;
pub mod event;
pub mod graph;
pub mod kinematics;
pub mod metrics;
pub mod neural;
pub mod postprocess;
pub mod tracknet;

mod linalg;

pub use dbscan::DbscanParams;
pub use ellipse::{BoxScales, Ellipse5, EncodedBox};
pub use event::{DetectorConfig, Event, GenConfig, Hit, TruthTrack};
pub use graph::{EdgeTopology, Graph, GraphParams, Vertex, VertexClass};
pub use kinematics::{CircleTrack, ParabolaCoeffs, PointUV, PointXY, TrackParams};
pub use tracknet::{Model, ModelConfig, VertexOutputs};

/// Wraps an angle difference into `[-π, π)`.
pub fn wrap_angle(d: f64) -> f64 {
    use core::f64::consts::PI;
    let w = canonical_phi(d + PI) - PI;
    if w >= PI {
        -PI
    } else {
        w
    }
}

/// Maps an azimuth into `[0, 2π)`.
pub fn canonical_phi(phi: f64) -> f64 {
    use core::f64::consts::TAU;
    let mut p = phi % TAU;
    if p < 0.0 {
        p += TAU;
    }
    // -1e-18 % TAU + TAU rounds to TAU
    if p >= TAU {
        0.0
    } else {
        p
    }
}
