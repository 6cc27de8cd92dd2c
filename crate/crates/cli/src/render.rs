//! SVG frames from a replay log: scene bounds, vehicle boxes and the ego's
//! observation sectors.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use shail_core::geometry::{OrientedBox, Pose, Vec2};
use shail_core::observation::{N_SECTORS, SECTOR_WIDTH};
use shail_core::scenario::Bounds;
use shail_core::simulator::ReplayRecord;
use shail_core::Result;

pub const PIXELS_PER_METER: f64 = 4.0;
pub const MARGIN_PX: f64 = 10.0;

/// World to image transform for a scene. Image y grows downwards.
#[derive(Debug, Clone, Copy)]
pub struct View {
    pub bounds: Bounds,
    pub scale: f64,
    pub margin: f64,
}

impl View {
    pub fn new(bounds: Bounds) -> Self {
        Self {
            bounds,
            scale: PIXELS_PER_METER,
            margin: MARGIN_PX,
        }
    }

    pub fn to_image(&self, p: Vec2) -> (f64, f64) {
        (
            (p.x - self.bounds.min_x) * self.scale + self.margin,
            (self.bounds.max_y - p.y) * self.scale + self.margin,
        )
    }

    pub fn size(&self) -> (f64, f64) {
        (
            (self.bounds.max_x - self.bounds.min_x) * self.scale + 2.0 * self.margin,
            (self.bounds.max_y - self.bounds.min_y) * self.scale + 2.0 * self.margin,
        )
    }
}

fn polygon(view: &View, b: &OrientedBox) -> String {
    b.corners()
        .iter()
        .map(|&c| {
            let (x, y) = view.to_image(c);
            format!("{x:.6},{y:.6}")
        })
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn render_frame(rec: &ReplayRecord, sector_radius: f64) -> String {
    let view = View::new(rec.scene_bounds);
    let (w, h) = view.size();
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.1}" height="{h:.1}" viewBox="0 0 {w:.6} {h:.6}">"#
    );
    let (x0, y0) = view.to_image(Vec2::new(rec.scene_bounds.min_x, rec.scene_bounds.max_y));
    let (x1, y1) = view.to_image(Vec2::new(rec.scene_bounds.max_x, rec.scene_bounds.min_y));
    let _ = writeln!(
        s,
        r##"<rect id="bounds" x="{x0:.6}" y="{y0:.6}" width="{:.6}" height="{:.6}" fill="#f4f4f4" stroke="#888"/>"##,
        x1 - x0,
        y1 - y0
    );
    let ego_pose = Pose::new(rec.ego.x, rec.ego.y, rec.ego.heading);
    let (cx, cy) = view.to_image(ego_pose.position());
    let r = sector_radius * view.scale;
    for k in 0..N_SECTORS {
        let a0 = ego_pose.heading + k as f64 * SECTOR_WIDTH - SECTOR_WIDTH / 2.0;
        let a1 = a0 + SECTOR_WIDTH;
        // image y is flipped, so world angles become negative
        let p0 = (cx + r * a0.cos(), cy - r * a0.sin());
        let p1 = (cx + r * a1.cos(), cy - r * a1.sin());
        let _ = writeln!(
            s,
            r##"<path class="sector" d="M {cx:.6} {cy:.6} L {:.6} {:.6} A {r:.6} {r:.6} 0 0 0 {:.6} {:.6} Z" fill="none" stroke="#9bc" stroke-dasharray="4 3"/>"##,
            p0.0, p0.1, p1.0, p1.1
        );
    }
    for v in &rec.vehicles {
        let b = OrientedBox::new(Pose::new(v.x, v.y, v.heading), v.length, v.width);
        let fill = if v.overridden { "#e9a23b" } else { "#5b7fa6" };
        let _ = writeln!(
            s,
            r#"<polygon class="vehicle" data-track="{}" points="{}" fill="{fill}"/>"#,
            v.track_id,
            polygon(&view, &b)
        );
    }
    let ego = OrientedBox::new(ego_pose, rec.ego.length, rec.ego.width);
    let _ = writeln!(
        s,
        r##"<polygon id="ego-box" data-track="{}" points="{}" fill="#c0392b"/>"##,
        rec.ego.track_id,
        polygon(&view, &ego)
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" font-family="monospace" font-size="12">t={:.1}s v={:.2} a={:.2} {:?}</text>"#,
        view.margin,
        view.margin + 12.0,
        rec.time_ms as f64 / 1000.0,
        rec.ego.v,
        rec.commanded_accel,
        rec.done
    );
    s.push_str("</svg>\n");
    s
}

/// Write one SVG per record; returns the written paths.
pub fn render_log(records: &[ReplayRecord], out_dir: &Path, sector_radius: f64) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir)?;
    let mut paths = Vec::with_capacity(records.len());
    for (i, rec) in records.iter().enumerate() {
        let p = out_dir.join(format!("frame_{i:05}.svg"));
        fs::write(&p, render_frame(rec, sector_radius))?;
        paths.push(p);
    }
    Ok(paths)
}
