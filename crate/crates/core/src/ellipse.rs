//! Five-parameter elliptical bounding boxes in η–φ space.
//!
//! An [`Ellipse5`] is `(η_c, φ_c, a, b, θ)` with `a ≥ b > 0` and the rotation
//! `θ` of the major axis with respect to the η axis kept in `[0, π)`. All φ
//! differences are taken along the shortest arc.

use alloc::vec::Vec;
use core::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

#[cfg(not(feature = "std"))]
use num_traits::Float;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::{canonical_phi, linalg, wrap_angle};

/// Smallest semi-axis handed out for degenerate (1–2 hit, collinear) inputs.
pub const SEMI_AXIS_FLOOR: f64 = 1e-4;

/// Default number of polygon vertices used by [`ellipse_iou`].
pub const DEFAULT_IOU_RESOLUTION: usize = 64;

/// Slack on the membership quadratic form so that points sitting exactly on
/// the boundary count as inside despite rounding.
const BOUNDARY_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EllipseError {
    #[error("semi-axes must be positive, got a = {a}, b = {b}")]
    NonPositiveAxis { a: f64, b: f64 },
    #[error("minimum enclosing ellipse needs at least one point")]
    NoPoints,
}

/// Maps an angle into `[0, π)`.
pub fn canonical_theta(theta: f64) -> f64 {
    let mut t = theta % PI;
    if t < 0.0 {
        t += PI;
    }
    if t >= PI {
        0.0
    } else {
        t
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ellipse5 {
    pub eta_c: f64,
    pub phi_c: f64,
    /// Semi-major axis.
    pub a: f64,
    /// Semi-minor axis.
    pub b: f64,
    /// Rotation of the major axis w.r.t. the η axis, in `[0, π)`.
    pub theta: f64,
}

impl Ellipse5 {
    /// Builds a canonical ellipse: axes are swapped (and θ turned by π/2)
    /// when `b > a`, θ is reduced to `[0, π)` and φ_c to `[0, 2π)`.
    pub fn new(eta_c: f64, phi_c: f64, a: f64, b: f64, theta: f64) -> Self {
        let (a, b, theta) = if b > a {
            (b, a, theta + FRAC_PI_2)
        } else {
            (a, b, theta)
        };
        Self {
            eta_c,
            phi_c: canonical_phi(phi_c),
            a,
            b,
            theta: canonical_theta(theta),
        }
    }

    pub fn circle(eta_c: f64, phi_c: f64, radius: f64) -> Self {
        Self::new(eta_c, phi_c, radius, radius, 0.0)
    }

    pub fn area(&self) -> f64 {
        PI * self.a * self.b
    }

    /// Scales both semi-axes by `k` about the center.
    pub fn dilate(&self, k: f64) -> Self {
        Self::new(self.eta_c, self.phi_c, self.a * k, self.b * k, self.theta)
    }

    pub fn is_valid(&self) -> bool {
        self.a.is_finite()
            && self.b.is_finite()
            && self.a >= self.b
            && self.b > 0.0
            && (0.0..PI).contains(&self.theta)
            && self.eta_c.is_finite()
            && (0.0..core::f64::consts::TAU).contains(&self.phi_c)
    }

    /// Value of the normalized quadratic form at `(eta, phi)`; `≤ 1` inside.
    pub fn quadratic_form(&self, eta: f64, phi: f64) -> f64 {
        let de = eta - self.eta_c;
        let dp = wrap_angle(phi - self.phi_c);
        let (s, c) = self.theta.sin_cos();
        let x = c * de + s * dp;
        let y = -s * de + c * dp;
        (x / self.a).powi(2) + (y / self.b).powi(2)
    }

    /// Polygon with `n` vertices inscribed in the ellipse, counter-clockwise,
    /// with φ expressed around `phi_origin + wrap(φ_c - phi_origin)`.
    fn polygon(&self, n: usize, phi_center: f64) -> Vec<[f64; 2]> {
        let (s, c) = self.theta.sin_cos();
        (0..n)
            .map(|k| {
                let t = core::f64::consts::TAU * k as f64 / n as f64;
                let (st, ct) = t.sin_cos();
                let x = self.a * ct;
                let y = self.b * st;
                [self.eta_c + c * x - s * y, phi_center + s * x + c * y]
            })
            .collect()
    }
}

/// Residual encoding of an ellipse relative to a vertex.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncodedBox {
    pub d_eta: f64,
    pub d_phi: f64,
    pub d_a: f64,
    pub d_b: f64,
    pub d_theta: f64,
}

impl EncodedBox {
    pub const ZERO: Self = Self {
        d_eta: 0.0,
        d_phi: 0.0,
        d_a: 0.0,
        d_b: 0.0,
        d_theta: 0.0,
    };

    pub fn to_array(&self) -> [f64; 5] {
        [self.d_eta, self.d_phi, self.d_a, self.d_b, self.d_theta]
    }

    pub fn from_array(v: [f64; 5]) -> Self {
        Self {
            d_eta: v[0],
            d_phi: v[1],
            d_a: v[2],
            d_b: v[3],
            d_theta: v[4],
        }
    }
}

/// Scale constants bringing each encoded residual to order one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoxScales {
    pub eta_m: f64,
    pub phi_m: f64,
    pub a_m: f64,
    pub b_m: f64,
    pub theta_m: f64,
    pub delta_theta: f64,
}

impl Default for BoxScales {
    fn default() -> Self {
        Self {
            eta_m: 0.01,
            phi_m: 0.004,
            a_m: 0.038,
            b_m: 0.005,
            theta_m: FRAC_PI_4,
            delta_theta: 0.5,
        }
    }
}

/// Encodes `e` relative to the vertex at `(eta_v, phi_v)`.
///
/// θ is taken from the period window `[-Δ_θ, π - Δ_θ)`, so `δ_θ` lies in
/// `[0, π/θ_m)` and the orientation `-Δ_θ` encodes to zero.
pub fn encode_box(e: &Ellipse5, vertex: (f64, f64), s: &BoxScales) -> Result<EncodedBox, EllipseError> {
    if !(e.a > 0.0 && e.b > 0.0) {
        return Err(EllipseError::NonPositiveAxis { a: e.a, b: e.b });
    }
    let theta = canonical_theta(e.theta + s.delta_theta) - s.delta_theta;
    Ok(EncodedBox {
        d_eta: (e.eta_c - vertex.0) / s.eta_m,
        d_phi: wrap_angle(e.phi_c - vertex.1) / s.phi_m,
        d_a: (e.a / s.a_m).ln(),
        d_b: (e.b / s.b_m).ln(),
        d_theta: (theta + s.delta_theta) / s.theta_m,
    })
}

/// Inverse of [`encode_box`]; the result is re-canonicalized.
pub fn decode_box(d: &EncodedBox, vertex: (f64, f64), s: &BoxScales) -> Ellipse5 {
    Ellipse5::new(
        vertex.0 + d.d_eta * s.eta_m,
        vertex.1 + d.d_phi * s.phi_m,
        s.a_m * d.d_a.exp(),
        s.b_m * d.d_b.exp(),
        d.d_theta * s.theta_m - s.delta_theta,
    )
}

/// Boundary-inclusive membership test.
pub fn point_in_ellipse(e: &Ellipse5, p: (f64, f64)) -> bool {
    e.quadratic_form(p.0, p.1) <= 1.0 + BOUNDARY_SLACK
}

fn polygon_area(poly: &[[f64; 2]]) -> f64 {
    let n = poly.len();
    if n < 3 {
        return 0.0;
    }
    let twice: f64 = (0..n)
        .map(|i| {
            let p = poly[i];
            let q = poly[(i + 1) % n];
            p[0] * q[1] - q[0] * p[1]
        })
        .sum();
    0.5 * twice.abs()
}

/// Sutherland–Hodgman clip of `subject` by the convex counter-clockwise `clip`.
fn clip_convex(subject: &[[f64; 2]], clip: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut output: Vec<[f64; 2]> = subject.to_vec();
    let m = clip.len();
    for i in 0..m {
        if output.is_empty() {
            break;
        }
        let c0 = clip[i];
        let c1 = clip[(i + 1) % m];
        let side = |p: [f64; 2]| (c1[0] - c0[0]) * (p[1] - c0[1]) - (c1[1] - c0[1]) * (p[0] - c0[0]);
        let input = core::mem::take(&mut output);
        let n = input.len();
        for k in 0..n {
            let cur = input[k];
            let prev = input[(k + n - 1) % n];
            let s_cur = side(cur);
            let s_prev = side(prev);
            let cur_in = s_cur >= 0.0;
            let prev_in = s_prev >= 0.0;
            if cur_in != prev_in {
                let t = s_prev / (s_prev - s_cur);
                output.push([prev[0] + t * (cur[0] - prev[0]), prev[1] + t * (cur[1] - prev[1])]);
            }
            if cur_in {
                output.push(cur);
            }
        }
    }
    output
}

fn ordering_key(e: &Ellipse5) -> [f64; 5] {
    [e.eta_c, e.phi_c, e.a, e.b, e.theta]
}

/// Intersection over union of two ellipses.
///
/// Each ellipse is replaced by an inscribed `resolution`-gon and the convex
/// polygons are intersected exactly; the error is `O(1/resolution²)`.
pub fn ellipse_iou(e1: &Ellipse5, e2: &Ellipse5, resolution: usize) -> f64 {
    let resolution = resolution.max(3);
    // Evaluate in a fixed order so the result is exactly symmetric.
    let swap = ordering_key(e2)
        .iter()
        .zip(ordering_key(e1).iter())
        .find(|(x, y)| x != y)
        .is_some_and(|(x, y)| x < y);
    let (p, q) = if swap { (e2, e1) } else { (e1, e2) };

    let d_eta = q.eta_c - p.eta_c;
    let d_phi = wrap_angle(q.phi_c - p.phi_c);
    if d_eta.hypot(d_phi) > p.a + q.a {
        return 0.0;
    }
    let poly_p = p.polygon(resolution, p.phi_c);
    let poly_q = q.polygon(resolution, p.phi_c + d_phi);
    let area_p = polygon_area(&poly_p);
    let area_q = polygon_area(&poly_q);
    let inter = polygon_area(&clip_convex(&poly_p, &poly_q));
    let union = area_p + area_q - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Minimum-area enclosing ellipse of `(η, φ)` points by Khachiyan's
/// algorithm.
///
/// φ values are unwrapped around the first point. Coincident and collinear
/// inputs fall back to a floor-radius circle and a floor-width segment
/// ellipse respectively. The returned ellipse is rescaled, if needed, so
/// every input point is contained exactly.
pub fn mvee(points: &[(f64, f64)], tolerance: f64) -> Result<Ellipse5, EllipseError> {
    let e = mvee_unfloored(points, tolerance)?;
    Ok(Ellipse5::new(
        e.eta_c,
        e.phi_c,
        e.a.max(SEMI_AXIS_FLOOR),
        e.b.max(SEMI_AXIS_FLOOR),
        e.theta,
    ))
}

/// Same as [`mvee`] without the semi-axis floor: coincident points give a
/// zero-radius circle and collinear points a zero-width segment.
pub fn mvee_unfloored(points: &[(f64, f64)], tolerance: f64) -> Result<Ellipse5, EllipseError> {
    let first = *points.first().ok_or(EllipseError::NoPoints)?;
    let pts: Vec<[f64; 2]> = points
        .iter()
        .map(|&(eta, phi)| [eta, first.1 + wrap_angle(phi - first.1)])
        .collect();
    let n = pts.len() as f64;

    let mean = pts.iter().fold([0.0, 0.0], |m, p| [m[0] + p[0] / n, m[1] + p[1] / n]);
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for p in &pts {
        let dx = p[0] - mean[0];
        let dy = p[1] - mean[1];
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    let (lo, hi, minor_dir) = linalg::sym2_eigen(sxx, sxy, syy);

    if hi <= 1e-30 {
        return Ok(Ellipse5::circle(mean[0], mean[1], 0.0));
    }
    if lo <= 1e-12 * hi || pts.len() < 3 {
        let major_dir = minor_dir + FRAC_PI_2;
        let (s, c) = major_dir.sin_cos();
        let (mut t_min, mut t_max) = (f64::INFINITY, f64::NEG_INFINITY);
        for p in &pts {
            let t = c * (p[0] - mean[0]) + s * (p[1] - mean[1]);
            t_min = t_min.min(t);
            t_max = t_max.max(t);
        }
        let mid = 0.5 * (t_min + t_max);
        return Ok(Ellipse5::new(
            mean[0] + c * mid,
            mean[1] + s * mid,
            0.5 * (t_max - t_min),
            0.0,
            major_dir,
        ));
    }

    // Work relative to the centroid to keep the lifted system well scaled.
    let rel: Vec<[f64; 2]> = pts.iter().map(|p| [p[0] - mean[0], p[1] - mean[1]]).collect();
    let m = rel.len();
    let mut u = alloc::vec![1.0 / n; m];
    let d = 2.0;
    for _ in 0..200_000 {
        let mut x = [[0.0f64; 3]; 3];
        for (q, &w) in rel.iter().zip(&u) {
            let l = [q[0], q[1], 1.0];
            for i in 0..3 {
                for j in 0..3 {
                    x[i][j] += w * l[i] * l[j];
                }
            }
        }
        let Some(xi) = linalg::inverse3(&x) else {
            break;
        };
        let (mut j_max, mut m_max) = (0usize, f64::NEG_INFINITY);
        for (j, q) in rel.iter().enumerate() {
            let l = [q[0], q[1], 1.0];
            let mut v = 0.0;
            for i in 0..3 {
                for k in 0..3 {
                    v += l[i] * xi[i][k] * l[k];
                }
            }
            if v > m_max {
                m_max = v;
                j_max = j;
            }
        }
        let step = (m_max - d - 1.0) / ((d + 1.0) * (m_max - 1.0));
        let mut change = 0.0;
        for (j, w) in u.iter_mut().enumerate() {
            let new = (1.0 - step) * *w + if j == j_max { step } else { 0.0 };
            change += (new - *w) * (new - *w);
            *w = new;
        }
        if change.sqrt() < tolerance {
            break;
        }
    }

    let c = rel
        .iter()
        .zip(&u)
        .fold([0.0, 0.0], |acc, (q, &w)| [acc[0] + w * q[0], acc[1] + w * q[1]]);
    let (mut cxx, mut cxy, mut cyy) = (0.0, 0.0, 0.0);
    for (q, &w) in rel.iter().zip(&u) {
        cxx += w * q[0] * q[0];
        cxy += w * q[0] * q[1];
        cyy += w * q[1] * q[1];
    }
    cxx -= c[0] * c[0];
    cxy -= c[0] * c[1];
    cyy -= c[1] * c[1];
    // Shape matrix A = (1/d)·Σ⁻¹; its eigenvalues are 1/a², 1/b². Σ has the
    // same eigenvectors, with d·λ(Σ) = a², b².
    let (lam_lo, lam_hi, lo_dir) = linalg::sym2_eigen(cxx, cxy, cyy);
    let mut a = (d * lam_hi).max(0.0).sqrt();
    let mut b = (d * lam_lo).max(0.0).sqrt();
    let theta = lo_dir + FRAC_PI_2;
    if !(b > 0.0) {
        b = SEMI_AXIS_FLOOR;
    }
    let center = [mean[0] + c[0], mean[1] + c[1]];
    let e = Ellipse5::new(center[0], center[1], a, b, theta);
    let worst = pts.iter().map(|p| e.quadratic_form(p[0], p[1])).fold(0.0f64, f64::max);
    if worst > 1.0 {
        let k = worst.sqrt();
        a *= k;
        b *= k;
    }
    Ok(Ellipse5::new(center[0], center[1], a, b, theta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use core::f64::consts::{SQRT_2, TAU};

    #[test]
    fn encode_examples() {
        let s = BoxScales::default();
        let e = Ellipse5::new(1.0, 2.0, s.a_m, s.b_m, -s.delta_theta);
        let d = encode_box(&e, (1.0, 2.0), &s).unwrap();
        for v in d.to_array() {
            assert!(v.abs() < 1e-12, "{d:?}");
        }

        let e = Ellipse5::new(0.51, 1.0, 0.02, 0.01, 0.3);
        let d = encode_box(&e, (0.5, 1.0), &s).unwrap();
        assert!((d.d_eta - 1.0).abs() < 1e-12);

        let e = Ellipse5::new(0.0, 1.0, 0.02, 0.01, FRAC_PI_4);
        let d = encode_box(&e, (0.0, 1.0), &s).unwrap();
        assert!((d.d_theta - (1.0 + 2.0 / PI)).abs() < 1e-12);

        let bad = Ellipse5 {
            eta_c: 0.0,
            phi_c: 0.0,
            a: 0.1,
            b: 0.0,
            theta: 0.0,
        };
        assert!(encode_box(&bad, (0.0, 0.0), &s).is_err());
    }

    #[test]
    fn decode_examples() {
        let s = BoxScales::default();
        let e = decode_box(&EncodedBox::ZERO, (0.0, 0.0), &s);
        assert_eq!((e.eta_c, e.phi_c), (0.0, 0.0));
        assert!((e.a - s.a_m).abs() < 1e-15 && (e.b - s.b_m).abs() < 1e-15);
        assert!((e.theta - canonical_theta(-s.delta_theta)).abs() < 1e-15);

        let d = EncodedBox {
            d_a: 2.0f64.ln(),
            ..EncodedBox::ZERO
        };
        let e = decode_box(&d, (0.0, 0.0), &s);
        assert!((e.a - 0.076).abs() < 1e-15);
    }

    #[test]
    fn decode_swaps_axes() {
        let s = BoxScales::default();
        // b_m·e^3 ≈ 0.1 > a_m
        let d = EncodedBox {
            d_b: 3.0,
            ..EncodedBox::ZERO
        };
        let e = decode_box(&d, (0.0, 0.0), &s);
        assert!(e.is_valid());
        assert!(e.a >= e.b);
    }

    #[test]
    fn membership_boundary() {
        let e = Ellipse5::new(0.0, 1.0, 0.3, 0.1, 0.0);
        assert!(point_in_ellipse(&e, (0.0, 1.0)));
        assert!(point_in_ellipse(&e, (0.3, 1.0)));
        assert!(!point_in_ellipse(&e, (0.3 * 1.001, 1.0)));
        // across the φ seam
        let e = Ellipse5::new(0.0, 0.01, 0.1, 0.05, FRAC_PI_2);
        assert!(point_in_ellipse(&e, (0.0, TAU - 0.05)));
    }

    #[test]
    fn iou_examples() {
        let e = Ellipse5::new(0.2, 3.0, 0.3, 0.1, 0.4);
        assert!((ellipse_iou(&e, &e, 64) - 1.0).abs() < 1e-6);

        let f = Ellipse5::new(0.2 + 0.3 + 0.2 + 1e-9, 3.0, 0.2, 0.1, 0.0);
        assert_eq!(ellipse_iou(&e, &f, 64), 0.0);

        let c1 = Ellipse5::circle(0.0, 1.0, 1.0);
        let c2 = Ellipse5::circle(1.0, 1.0, 1.0);
        let lens = 2.0 * PI / 3.0 - 3.0f64.sqrt() / 2.0;
        let exact = lens / (2.0 * PI - lens);
        assert!((exact - 0.2430).abs() < 5e-5);
        let iou = ellipse_iou(&c1, &c2, 64);
        assert!((iou - exact).abs() < 0.005, "{iou}");
        assert_eq!(iou, ellipse_iou(&c2, &c1, 64));
    }

    #[test]
    fn iou_dilation_is_inverse_square() {
        let e = Ellipse5::new(0.0, 1.0, 0.2, 0.05, 1.0);
        let mut last = 1.0 + 1e-9;
        for k in [1.1, 1.3, 1.6, 2.0, 3.0] {
            let v = ellipse_iou(&e, &e.dilate(k), 64);
            assert!(v < last);
            assert!((v - 1.0 / (k * k)).abs() < 2e-3, "{k}: {v}");
            last = v;
        }
    }

    #[test]
    fn mvee_unit_square() {
        let e = mvee(&[(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (1.0, 1.0)], 1e-6).unwrap();
        assert!((e.eta_c - 0.5).abs() < 1e-3 && (e.phi_c - 0.5).abs() < 1e-3);
        assert!((e.a - SQRT_2 / 2.0).abs() < 1e-3, "{e:?}");
        assert!((e.b - SQRT_2 / 2.0).abs() < 1e-3, "{e:?}");
    }

    #[test]
    fn mvee_degenerate_inputs() {
        let e = mvee(&[(0.3, 2.0)], 1e-6).unwrap();
        assert_eq!(
            (e.eta_c, e.phi_c, e.a, e.b),
            (0.3, 2.0, SEMI_AXIS_FLOOR, SEMI_AXIS_FLOOR)
        );

        let e = mvee(&[(0.0, 1.0), (0.0, 1.2)], 1e-6).unwrap();
        assert!((e.a - 0.1).abs() < 1e-12 && e.b == SEMI_AXIS_FLOOR);
        assert!((e.theta - FRAC_PI_2).abs() < 1e-12);
        assert!((e.phi_c - 1.1).abs() < 1e-12);

        let pts: Vec<(f64, f64)> = (0..5).map(|i| (0.1 * i as f64, 2.0)).collect();
        let e = mvee(&pts, 1e-6).unwrap();
        assert!((e.a - 0.2).abs() < 1e-12);
        assert!(e.theta.abs() < 1e-12 || (PI - e.theta).abs() < 1e-12);

        assert_eq!(mvee(&[], 1e-6), Err(EllipseError::NoPoints));
    }

    #[test]
    fn mvee_recovers_sampled_ellipse() {
        let truth = Ellipse5::new(0.4, 2.0, 0.3, 0.12, 0.7);
        let (s, c) = truth.theta.sin_cos();
        let pts: Vec<(f64, f64)> = (0..40)
            .map(|k| {
                let t = TAU * k as f64 / 40.0;
                let x = truth.a * t.cos();
                let y = truth.b * t.sin();
                (truth.eta_c + c * x - s * y, truth.phi_c + s * x + c * y)
            })
            .collect();
        let e = mvee(&pts, 1e-9).unwrap();
        assert!((e.a - truth.a).abs() < 1e-3, "{e:?}");
        assert!((e.b - truth.b).abs() < 1e-3, "{e:?}");
        assert!((e.theta - truth.theta).abs() < 1e-2);
        for p in &pts {
            assert!(point_in_ellipse(&e, *p));
        }
    }

    #[test]
    fn mvee_across_phi_seam() {
        let pts = [(0.0, TAU - 0.02), (0.01, 0.01), (-0.01, 0.0), (0.02, 0.03)];
        let e = mvee(&pts, 1e-7).unwrap();
        assert!(e.a < 0.1);
        for p in &pts {
            assert!(point_in_ellipse(&e, *p));
        }
    }
}
