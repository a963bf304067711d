//! η–φ event displays as SVG: hits as dots colored by particle, ellipses
//! as outlines.

use std::collections::BTreeMap;
use std::f64::consts::TAU;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use conftrack_core::ellipse::Ellipse5;
use conftrack_core::event::Event;

use crate::error::{Error, Result};

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 600.0;
const MARGIN: f64 = 60.0;
const NOISE_COLOR: &str = "#999999";
const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];

struct Frame {
    eta_lo: f64,
    eta_hi: f64,
}

impl Frame {
    fn fit(event: &Event, ellipses: &[Ellipse5]) -> Self {
        let etas = event
            .hits
            .iter()
            .map(|h| (h.eta, h.eta))
            .chain(ellipses.iter().map(|e| (e.eta_c - e.a, e.eta_c + e.a)));
        let (lo, hi) = etas.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (a, b)| {
            (lo.min(a), hi.max(b))
        });
        if lo.is_finite() && hi.is_finite() {
            let pad = 0.05 * (hi - lo).max(0.2);
            Self {
                eta_lo: lo - pad,
                eta_hi: hi + pad,
            }
        } else {
            Self {
                eta_lo: -2.5,
                eta_hi: 2.5,
            }
        }
    }

    fn sx(&self) -> f64 {
        (WIDTH - 2.0 * MARGIN) / (self.eta_hi - self.eta_lo)
    }

    fn sy(&self) -> f64 {
        (HEIGHT - 2.0 * MARGIN) / TAU
    }

    fn x(&self, eta: f64) -> f64 {
        MARGIN + (eta - self.eta_lo) * self.sx()
    }

    fn y(&self, phi: f64) -> f64 {
        HEIGHT - MARGIN - phi * self.sy()
    }
}

/// Renders the event's hits and the given ellipses. Output bytes depend
/// only on the input.
pub fn render_event_svg(event: &Event, ellipses: &[Ellipse5]) -> String {
    let f = Frame::fit(event, ellipses);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);

    // axes with ticks
    let (x0, x1, y0, y1) = (MARGIN, WIDTH - MARGIN, HEIGHT - MARGIN, MARGIN);
    let _ = writeln!(
        s,
        r#"<g id="axes" stroke="black" stroke-width="1" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}"/>"#);
    let _ = writeln!(s, r#"<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}"/>"#);
    for k in 0..=4 {
        let eta = f.eta_lo + (f.eta_hi - f.eta_lo) * f64::from(k) / 4.0;
        let x = f.x(eta);
        let _ = writeln!(s, r#"<line x1="{x:.2}" y1="{y0}" x2="{x:.2}" y2="{:.2}"/>"#, y0 + 5.0);
        let _ = writeln!(
            s,
            r#"<text x="{x:.2}" y="{:.2}" stroke="none" text-anchor="middle">{eta:.2}</text>"#,
            y0 + 20.0
        );
    }
    for k in 0..=4 {
        let phi = TAU * f64::from(k) / 4.0;
        let y = f.y(phi);
        let _ = writeln!(s, r#"<line x1="{:.2}" y1="{y:.2}" x2="{x0}" y2="{y:.2}"/>"#, x0 - 5.0);
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" stroke="none" text-anchor="end">{phi:.2}</text>"#,
            x0 - 8.0,
            y + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" stroke="none" text-anchor="middle">η</text>"#,
        0.5 * (x0 + x1),
        HEIGHT - 15.0
    );
    let _ = writeln!(
        s,
        r#"<text x="15" y="{:.2}" stroke="none" text-anchor="middle">φ</text>"#,
        0.5 * (y0 + y1)
    );
    let _ = writeln!(s, "</g>");

    // ellipses in data coordinates so the rotation is applied before the
    // anisotropic axis scaling
    let _ = writeln!(
        s,
        r#"<g id="ellipses" transform="matrix({:.6} 0 0 {:.6} {:.6} {:.6})" fill="none" stroke="black">"#,
        f.sx(),
        -f.sy(),
        MARGIN - f.eta_lo * f.sx(),
        HEIGHT - MARGIN
    );
    for e in ellipses {
        let _ = writeln!(
            s,
            r#"<ellipse cx="{:.6}" cy="{:.6}" rx="{:.6}" ry="{:.6}" transform="rotate({:.6} {:.6} {:.6})" vector-effect="non-scaling-stroke"/>"#,
            e.eta_c,
            e.phi_c,
            e.a,
            e.b,
            e.theta.to_degrees(),
            e.eta_c,
            e.phi_c
        );
    }
    let _ = writeln!(s, "</g>");

    let mut colors: BTreeMap<u64, &str> = BTreeMap::new();
    let mut pids: Vec<u64> = event
        .hits
        .iter()
        .filter(|h| !h.is_noise())
        .map(|h| h.particle_id)
        .collect();
    pids.sort_unstable();
    pids.dedup();
    for (k, pid) in pids.into_iter().enumerate() {
        colors.insert(pid, PALETTE[k % PALETTE.len()]);
    }
    let _ = writeln!(s, r#"<g id="hits">"#);
    for h in &event.hits {
        let c = colors.get(&h.particle_id).copied().unwrap_or(NOISE_COLOR);
        let _ = writeln!(
            s,
            r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{c}"/>"#,
            f.x(h.eta),
            f.y(h.phi)
        );
    }
    let _ = writeln!(s, "</g>");
    s.push_str("</svg>\n");
    s
}

pub fn write_event_svg(path: &Path, event: &Event, ellipses: &[Ellipse5]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, render_event_svg(event, ellipses)).map_err(|e| Error::io(path, e))
}
