//! Transverse-plane track geometry.
//!
//! A charged track in a solenoidal field is a circle `(x-a)² + (y-b)² = R²`
//! in the transverse plane. The conformal map `(x, y) ↦ (x, y)/(x² + y²)`
//! turns circles through the origin into straight lines
//! `v = 1/(2b) - u·a/b`; slightly displaced circles become parabolas
//! `v = 1/(2b) - u·a/b - u²·ε_T·(R/b)³`, so a three-term least-squares fit
//! in `(u, v)` yields `a`, `b` and the impact parameter `ε_T`.
//!
//! Units are meters, tesla and GeV throughout.

use alloc::vec::Vec;

#[cfg(not(feature = "std"))]
use num_traits::Float;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg;

/// `p_T [GeV] = 0.3 · B [T] · R [m]`.
pub const PT_PER_TESLA_METER: f64 = 0.3;

/// Condition number above which a parabola fit is flagged as ill-conditioned.
pub const ILL_CONDITIONED: f64 = 1e10;

/// Condition number above which the fit is refused outright.
const RANK_DEFICIENT: f64 = 1e15;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum KinematicsError {
    #[error("conformal map is undefined at the beamline (x = y = 0)")]
    ConformalOrigin,
    #[error("polar angle {0} outside (0, π)")]
    PolarAngle(f64),
    #[error("{name} must be positive, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error(
        "parabola fit needs at least 3 points with 3 distinct u values, got {points} points / {distinct} distinct"
    )]
    TooFewPoints { points: usize, distinct: usize },
    #[error("parabola fit is rank deficient (condition number {condition:e})")]
    RankDeficient { condition: f64 },
    #[error("constant term c0 = {0} gives an infinite-radius track")]
    DegenerateParabola(f64),
}

pub type Result<T> = core::result::Result<T, KinematicsError>;

/// Cartesian transverse-plane point in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointXY {
    pub x: f64,
    pub y: f64,
}

/// Conformal-space point in 1/m.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointUV {
    pub u: f64,
    pub v: f64,
}

impl PointXY {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn norm(&self) -> f64 {
        self.x.hypot(self.y)
    }

    /// Rotates the point by `angle` about the origin.
    pub fn rotated(&self, angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self {
            x: c * self.x - s * self.y,
            y: s * self.x + c * self.y,
        }
    }
}

impl PointUV {
    pub const fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }
}

/// A transverse circle with center `(a, b)`, radius `R` and charge sign.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CircleTrack {
    pub a: f64,
    pub b: f64,
    pub radius: f64,
    pub charge: i8,
}

impl CircleTrack {
    /// `δ = R² - a² - b²`; zero for prompt tracks.
    pub fn displacement(&self) -> f64 {
        self.radius * self.radius - self.a * self.a - self.b * self.b
    }

    /// Distance of closest approach to the beamline, `|√(a² + b²) - R|`.
    pub fn impact_parameter(&self) -> f64 {
        (self.a.hypot(self.b) - self.radius).abs()
    }

    pub fn center_distance(&self) -> f64 {
        self.a.hypot(self.b)
    }

    /// Signed residual of `p` against the circle equation,
    /// `(x-a)² + (y-b)² - R²`.
    pub fn residual(&self, p: PointXY) -> f64 {
        let dx = p.x - self.a;
        let dy = p.y - self.b;
        dx * dx + dy * dy - self.radius * self.radius
    }
}

/// Coefficients of `v = c0 + c1·u + c2·u²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParabolaCoeffs {
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
}

impl ParabolaCoeffs {
    pub const fn new(c0: f64, c1: f64, c2: f64) -> Self {
        Self { c0, c1, c2 }
    }

    pub fn eval(&self, u: f64) -> f64 {
        self.c0 + u * (self.c1 + u * self.c2)
    }

    pub fn to_array(&self) -> [f64; 3] {
        [self.c0, self.c1, self.c2]
    }
}

/// Transverse track parameters.
///
/// `eps_t` carries the sign produced by the extraction formula; truth
/// generators report the unsigned distance, so compare magnitudes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackParams {
    pub pt: f64,
    pub eps_t: f64,
    pub a: f64,
    pub b: f64,
}

impl TrackParams {
    pub fn radius(&self) -> f64 {
        self.a.hypot(self.b)
    }
}

/// Result of a conformal-space parabola fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParabolaFit {
    pub coeffs: ParabolaCoeffs,
    /// Condition number of the column-scaled normal matrix.
    pub condition: f64,
    pub residual_sum_squares: f64,
}

impl ParabolaFit {
    pub fn is_ill_conditioned(&self) -> bool {
        self.condition > ILL_CONDITIONED
    }
}

fn conformal(x: f64, y: f64) -> Result<(f64, f64)> {
    let r2 = x * x + y * y;
    if r2 == 0.0 || !r2.is_finite() {
        return Err(KinematicsError::ConformalOrigin);
    }
    Ok((x / r2, y / r2))
}

/// `(x, y) ↦ (x, y)/(x² + y²)`.
pub fn to_conformal(p: PointXY) -> Result<PointUV> {
    let (u, v) = conformal(p.x, p.y)?;
    Ok(PointUV { u, v })
}

/// The conformal map is an involution, so the inverse is the same formula.
pub fn from_conformal(p: PointUV) -> Result<PointXY> {
    let (x, y) = conformal(p.u, p.v)?;
    Ok(PointXY { x, y })
}

/// `η = -ln tan(θ/2)` for a polar angle in `(0, π)`.
pub fn pseudorapidity(theta: f64) -> Result<f64> {
    if !(theta > 0.0 && theta < core::f64::consts::PI) {
        return Err(KinematicsError::PolarAngle(theta));
    }
    Ok(-(0.5 * theta).tan().ln())
}

/// Inverse of [`pseudorapidity`]: `θ = 2·atan(e^{-η})`.
pub fn polar_angle(eta: f64) -> f64 {
    2.0 * (-eta).exp().atan()
}

/// Pseudorapidity of a space point seen from the origin, `asinh(z / r)`.
pub fn eta_of(r: f64, z: f64) -> f64 {
    (z / r).asinh()
}

fn require_positive(name: &'static str, value: f64) -> Result<f64> {
    if value > 0.0 && value.is_finite() {
        Ok(value)
    } else {
        Err(KinematicsError::NonPositive { name, value })
    }
}

/// `p_T = 0.3 · B · R`.
pub fn pt_from_radius(field_b: f64, radius: f64) -> Result<f64> {
    let b = require_positive("field strength", field_b)?;
    let r = require_positive("radius", radius)?;
    Ok(PT_PER_TESLA_METER * b * r)
}

/// `R = p_T / (0.3 · B)`.
pub fn radius_from_pt(field_b: f64, pt: f64) -> Result<f64> {
    let b = require_positive("field strength", field_b)?;
    let pt = require_positive("transverse momentum", pt)?;
    Ok(pt / (PT_PER_TESLA_METER * b))
}

/// Least-squares fit of `v = c0 + c1·u + c2·u²`.
///
/// Solved through the normal equations after scaling each design column to
/// unit norm, followed by one step of iterative refinement.
pub fn fit_parabola(points: &[PointUV]) -> Result<ParabolaFit> {
    let n = points.len();
    let mut us: Vec<f64> = points.iter().map(|p| p.u).collect();
    us.sort_by(|a, b| a.total_cmp(b));
    us.dedup();
    if n < 3 || us.len() < 3 {
        return Err(KinematicsError::TooFewPoints {
            points: n,
            distinct: us.len(),
        });
    }

    let row = |u: f64| [1.0, u, u * u];
    let mut col_norm = [0.0f64; 3];
    for p in points {
        let r = row(p.u);
        for k in 0..3 {
            col_norm[k] += r[k] * r[k];
        }
    }
    let scale = col_norm.map(|s| {
        let s = s.sqrt();
        if s > 0.0 {
            1.0 / s
        } else {
            1.0
        }
    });

    let mut normal = [[0.0f64; 3]; 3];
    let mut rhs = [0.0f64; 3];
    for p in points {
        let r = row(p.u);
        let rs = [r[0] * scale[0], r[1] * scale[1], r[2] * scale[2]];
        for i in 0..3 {
            rhs[i] += rs[i] * p.v;
            for j in 0..3 {
                normal[i][j] += rs[i] * rs[j];
            }
        }
    }

    let ev = linalg::sym3_eigenvalues(&normal);
    let condition = if ev[0] > 0.0 { ev[2] / ev[0] } else { f64::INFINITY };
    if !(condition < RANK_DEFICIENT) {
        return Err(KinematicsError::RankDeficient { condition });
    }
    let mut sol = linalg::cholesky_solve3(&normal, &rhs).ok_or(KinematicsError::RankDeficient { condition })?;

    // One refinement pass against the true residual.
    let mut r_rhs = [0.0f64; 3];
    for p in points {
        let r = row(p.u);
        let rs = [r[0] * scale[0], r[1] * scale[1], r[2] * scale[2]];
        let resid = p.v - (rs[0] * sol[0] + rs[1] * sol[1] + rs[2] * sol[2]);
        for i in 0..3 {
            r_rhs[i] += rs[i] * resid;
        }
    }
    if let Some(corr) = linalg::cholesky_solve3(&normal, &r_rhs) {
        for i in 0..3 {
            sol[i] += corr[i];
        }
    }

    let coeffs = ParabolaCoeffs {
        c0: sol[0] * scale[0],
        c1: sol[1] * scale[1],
        c2: sol[2] * scale[2],
    };
    let residual_sum_squares = points
        .iter()
        .map(|p| {
            let d = p.v - coeffs.eval(p.u);
            d * d
        })
        .sum();
    Ok(ParabolaFit {
        coeffs,
        condition,
        residual_sum_squares,
    })
}

/// Inverts the parabola coefficients into track parameters.
///
/// `b = 1/(2·c0)`, `a = -c1·b`, `R ≈ √(a² + b²)`, `ε_T = -c2·b³/R³`,
/// `p_T = 0.3·B·R`.
pub fn extract_track_params(c: ParabolaCoeffs, field_b: f64) -> Result<TrackParams> {
    if c.c0 == 0.0 || !c.c0.is_finite() {
        return Err(KinematicsError::DegenerateParabola(c.c0));
    }
    require_positive("field strength", field_b)?;
    let b = 1.0 / (2.0 * c.c0);
    let a = -c.c1 * b;
    let radius = a.hypot(b);
    let eps_t = -c.c2 * (b / radius).powi(3);
    Ok(TrackParams {
        pt: pt_from_radius(field_b, radius)?,
        eps_t,
        a,
        b,
    })
}

/// Circular mean of the azimuths of `points`.
pub fn mean_azimuth(points: &[PointXY]) -> f64 {
    let (s, c) = points.iter().fold((0.0, 0.0), |(s, c), p| {
        let n = p.norm();
        if n > 0.0 {
            (s + p.y / n, c + p.x / n)
        } else {
            (s, c)
        }
    });
    s.atan2(c)
}

/// A transverse fit carried out in the frame where the track heads along
/// `+x`, so the circle center lies close to the `v` axis and `b` dominates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameFit {
    /// Rotation applied to the hits before mapping (radians).
    pub rotation: f64,
    /// Fit coefficients in the rotated frame.
    pub fit: ParabolaFit,
    /// Parameters with `(a, b)` rotated back into the detector frame.
    pub params: TrackParams,
}

/// Rotates hits into the track frame, maps them to conformal space, fits a
/// parabola and extracts the track parameters.
pub fn fit_track(points: &[PointXY], field_b: f64) -> Result<FrameFit> {
    let rotation = -mean_azimuth(points);
    let uv = points
        .iter()
        .map(|p| to_conformal(p.rotated(rotation)))
        .collect::<Result<Vec<_>>>()?;
    let fit = fit_parabola(&uv)?;
    let mut params = extract_track_params(fit.coeffs, field_b)?;
    let center = PointXY::new(params.a, params.b).rotated(-rotation);
    params.a = center.x;
    params.b = center.y;
    Ok(FrameFit { rotation, fit, params })
}
