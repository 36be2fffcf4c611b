//! SVG rendering of solved episodes.
//!
//! Output is a pure function of the trajectory and instance: node layout,
//! truck legs as a solid polyline, drone sorties as dashed segments, and a
//! cost caption. Coordinates print with Rust's shortest round-trip float
//! formatting, so the byte stream is reproducible across runs.

use crate::env::Trajectory;
use crate::instance::{Agent, Instance};

const SIZE: f64 = 600.0;
const MARGIN: f64 = 40.0;

struct Mapper {
    min_x: f64,
    min_y: f64,
    scale: f64,
}

impl Mapper {
    fn new(inst: &Instance) -> Mapper {
        let mut min_x = f64::INFINITY;
        let mut max_x = f64::NEG_INFINITY;
        let mut min_y = f64::INFINITY;
        let mut max_y = f64::NEG_INFINITY;
        for p in &inst.nodes {
            min_x = min_x.min(p.x);
            max_x = max_x.max(p.x);
            min_y = min_y.min(p.y);
            max_y = max_y.max(p.y);
        }
        let span = (max_x - min_x).max(max_y - min_y).max(1e-9);
        Mapper { min_x, min_y, scale: (SIZE - 2.0 * MARGIN) / span }
    }

    fn x(&self, x: f64) -> f64 {
        MARGIN + (x - self.min_x) * self.scale
    }

    // SVG y grows downward; flip so the plot reads like the plane.
    fn y(&self, y: f64) -> f64 {
        SIZE - MARGIN - (y - self.min_y) * self.scale
    }
}

/// Renders the episode as a standalone SVG document.
pub fn render_svg(traj: &Trajectory, inst: &Instance) -> String {
    let m = Mapper::new(inst);
    let mut out = String::new();
    out.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {SIZE} {SIZE}\">\n"
    ));
    out.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");

    let moves = traj.movements();
    let truck_legs: Vec<_> = moves.iter().filter(|mv| mv.agent == Agent::Truck).collect();
    if !truck_legs.is_empty() {
        let mut points = String::new();
        let first = &inst.nodes[truck_legs[0].from];
        points.push_str(&format!("{},{}", m.x(first.x), m.y(first.y)));
        for leg in &truck_legs {
            let p = &inst.nodes[leg.to];
            points.push_str(&format!(" {},{}", m.x(p.x), m.y(p.y)));
        }
        out.push_str(&format!(
            "<polyline points=\"{points}\" fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"2\"/>\n"
        ));
    }

    for mv in moves.iter().filter(|mv| mv.agent == Agent::Drone) {
        let a = &inst.nodes[mv.from];
        let b = &inst.nodes[mv.to];
        out.push_str(&format!(
            "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#d62728\" stroke-width=\"1.5\" stroke-dasharray=\"6 4\"/>\n",
            m.x(a.x),
            m.y(a.y),
            m.x(b.x),
            m.y(b.y)
        ));
    }

    for (i, p) in inst.nodes.iter().enumerate() {
        if i == inst.depot {
            out.push_str(&format!(
                "<rect x=\"{}\" y=\"{}\" width=\"12\" height=\"12\" fill=\"#2ca02c\" stroke=\"#000\"/>\n",
                m.x(p.x) - 6.0,
                m.y(p.y) - 6.0
            ));
        } else {
            out.push_str(&format!(
                "<circle cx=\"{}\" cy=\"{}\" r=\"5\" fill=\"#fff\" stroke=\"#000\"/>\n",
                m.x(p.x),
                m.y(p.y)
            ));
        }
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"11\" font-family=\"monospace\">{}</text>\n",
            m.x(p.x) + 7.0,
            m.y(p.y) - 7.0,
            i
        ));
    }

    out.push_str(&format!(
        "<text x=\"{MARGIN}\" y=\"{}\" font-size=\"14\" font-family=\"monospace\">cost {}</text>\n",
        SIZE - 12.0,
        traj.cost()
    ));
    out.push_str("</svg>\n");
    out
}
