//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

use std::sync::Arc;

use rand::Rng;
use shail_core::geometry::{build_path, OrientedBox, Path, Pose, Vec2};
use shail_core::learning::occupancy::TabularOptionsMdp;
use shail_core::scenario::{Frame, TrackDataset, VehicleTrack};
use shail_core::simulator::{EgoState, VehicleSnapshot};
use shail_core::{FRAME_DT, FRAME_MS};

/// Central finite differences of `f` at `x`.
pub fn numeric_grad(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            let x0 = p[i];
            p[i] = x0 + h;
            let up = f(&p);
            p[i] = x0 - h;
            let down = f(&p);
            p[i] = x0;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `||a - b|| / max(||a||, ||b||)`, zero when both vanish.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

/// Occupancy of a hierarchical policy by propagating the joint law of
/// (state, running option) one primitive step at a time and summing the
/// discounted series until the remaining mass is negligible.
pub fn augmented_chain_occupancy(omdp: &TabularOptionsMdp, pi_h: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mdp = &omdp.mdp;
    let n = mdp.b0.len();
    let na = mdp.transitions[0].len();
    let k = omdp.options.len();
    let mut x = vec![vec![0.0; k]; n];
    for s in 0..n {
        for o in 0..k {
            x[s][o] = mdp.b0[s] * pi_h[s][o];
        }
    }
    let mut rho = vec![vec![0.0; na]; n];
    let mut disc = 1.0;
    while disc > 1e-17 {
        let mut next = vec![vec![0.0; k]; n];
        for s in 0..n {
            for o in 0..k {
                let mass = x[s][o];
                if mass == 0.0 {
                    continue;
                }
                let opt = &omdp.options[o];
                for (a, &p) in opt.policy[s].iter().enumerate() {
                    let pa = mass * p;
                    rho[s][a] += disc * pa;
                    for s2 in 0..n {
                        let m = pa * mdp.transitions[s][a][s2];
                        if m == 0.0 {
                            continue;
                        }
                        let b = opt.beta[s2];
                        next[s2][o] += m * (1.0 - b);
                        for o2 in 0..k {
                            next[s2][o2] += m * b * pi_h[s2][o2];
                        }
                    }
                }
            }
        }
        x = next;
        disc *= mdp.gamma;
    }
    rho
}

/// Monte Carlo estimate of the same occupancy from `episodes` rollouts truncated at `horizon`.
pub fn monte_carlo_occupancy<R: Rng>(
    omdp: &TabularOptionsMdp,
    pi_h: &[Vec<f64>],
    episodes: usize,
    horizon: usize,
    rng: &mut R,
) -> Vec<Vec<f64>> {
    let mdp = &omdp.mdp;
    let n = mdp.b0.len();
    let na = mdp.transitions[0].len();
    let draw = |w: &[f64], rng: &mut R| {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, p) in w.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        w.iter().rposition(|&p| p > 0.0).unwrap()
    };
    let mut rho = vec![vec![0.0; na]; n];
    for _ in 0..episodes {
        let mut s = draw(&mdp.b0, rng);
        let mut o = draw(&pi_h[s], rng);
        let mut g = 1.0;
        for _ in 0..horizon {
            let a = draw(&omdp.options[o].policy[s], rng);
            rho[s][a] += g;
            let s2 = draw(&mdp.transitions[s][a], rng);
            if rng.random::<f64>() < omdp.options[o].beta[s2] {
                o = draw(&pi_h[s2], rng);
            }
            s = s2;
            g *= mdp.gamma;
        }
    }
    for row in &mut rho {
        for v in row {
            *v /= episodes as f64;
        }
    }
    rho
}

/// Point-in-rectangle test written out in the box frame.
fn inside(b: &OrientedBox, p: Vec2) -> bool {
    let (c, s) = (b.center.heading.cos(), b.center.heading.sin());
    let dx = p.x - b.center.x;
    let dy = p.y - b.center.y;
    let u = c * dx + s * dy;
    let v = -s * dx + c * dy;
    u.abs() <= b.length / 2.0 && v.abs() <= b.width / 2.0
}

fn aabb(b: &OrientedBox) -> (f64, f64, f64, f64) {
    let (c, s) = (b.center.heading.cos().abs(), b.center.heading.sin().abs());
    let hx = 0.5 * (b.length * c + b.width * s);
    let hy = 0.5 * (b.length * s + b.width * c);
    (b.center.x - hx, b.center.x + hx, b.center.y - hy, b.center.y + hy)
}

/// Overlap by scanning a `cell`-spaced lattice over the common bounding box.
pub fn grid_overlap(a: &OrientedBox, b: &OrientedBox, cell: f64) -> bool {
    let (ax0, ax1, ay0, ay1) = aabb(a);
    let (bx0, bx1, by0, by1) = aabb(b);
    let (x0, x1) = (ax0.max(bx0), ax1.min(bx1));
    let (y0, y1) = (ay0.max(by0), ay1.min(by1));
    if x0 > x1 || y0 > y1 {
        return false;
    }
    let i0 = (x0 / cell).floor() as i64;
    let i1 = (x1 / cell).ceil() as i64;
    let j0 = (y0 / cell).floor() as i64;
    let j1 = (y1 / cell).ceil() as i64;
    for i in i0..=i1 {
        for j in j0..=j1 {
            let p = Vec2::new(i as f64 * cell, j as f64 * cell);
            if inside(a, p) && inside(b, p) {
                return true;
            }
        }
    }
    false
}

/// Box with every side moved outward by `d` (inward for negative `d`).
pub fn grown(b: &OrientedBox, d: f64) -> OrientedBox {
    OrientedBox {
        center: b.center,
        length: b.length + 2.0 * d,
        width: b.width + 2.0 * d,
    }
}

/// Lattice verdict when it is insensitive to moving both outlines by `band / 2`;
/// `None` for pairs whose boundaries come within the band.
pub fn grid_verdict(a: &OrientedBox, b: &OrientedBox, band: f64, cell: f64) -> Option<bool> {
    let h = band / 2.0;
    let outer = grid_overlap(&grown(a, h), &grown(b, h), cell);
    let inner = grid_overlap(&grown(a, -h), &grown(b, -h), cell);
    (outer == inner).then_some(outer)
}

/// Trapezoidal JSD (nats) between two normal densities.
pub fn gaussian_jsd_quadrature(m1: f64, s1: f64, m2: f64, s2: f64) -> f64 {
    let pdf = |x: f64, m: f64, s: f64| (-0.5 * ((x - m) / s).powi(2)).exp() / (s * (2.0 * std::f64::consts::PI).sqrt());
    let lo = m1.min(m2) - 12.0 * s1.max(s2);
    let hi = m1.max(m2) + 12.0 * s1.max(s2);
    let n = 200_000;
    let dx = (hi - lo) / n as f64;
    let mut acc = 0.0;
    for i in 0..=n {
        let x = lo + i as f64 * dx;
        let p = pdf(x, m1, s1);
        let q = pdf(x, m2, s2);
        let m = 0.5 * (p + q);
        let mut f = 0.0;
        if p > 0.0 {
            f += 0.5 * p * (p / m).ln();
        }
        if q > 0.0 {
            f += 0.5 * q * (q / m).ln();
        }
        let w = if i == 0 || i == n { 0.5 } else { 1.0 };
        acc += w * f * dx;
    }
    acc
}

/// Track moving along `pts` (sampled densely) at constant `speed`, starting at `t0_ms`.
pub fn polyline_track(id: i64, pts: &[Vec2], speed: f64, n_frames: usize, t0_ms: i64, length: f64, width: f64) -> VehicleTrack {
    let path = build_path(pts).expect("valid polyline");
    let frames = (0..n_frames)
        .map(|k| {
            let s = (speed * k as f64 * FRAME_DT).min(path.length());
            let p = path.pose_at(s);
            let v = Vec2::from_angle(p.heading) * speed;
            Frame {
                frame_id: k as i64 + 1,
                timestamp_ms: t0_ms + k as i64 * FRAME_MS,
                x: p.x,
                y: p.y,
                vx: v.x,
                vy: v.y,
                psi: p.heading,
            }
        })
        .collect();
    VehicleTrack {
        track_id: id,
        agent_type: "car".into(),
        length,
        width,
        frames,
    }
}

/// Straight track along +x from `x0` at constant `speed`.
pub fn straight_track(id: i64, x0: f64, y: f64, speed: f64, n_frames: usize) -> VehicleTrack {
    let frames = (0..n_frames)
        .map(|k| Frame {
            frame_id: k as i64 + 1,
            timestamp_ms: k as i64 * FRAME_MS,
            x: x0 + speed * k as f64 * FRAME_DT,
            y,
            vx: speed,
            vy: 0.0,
            psi: 0.0,
        })
        .collect();
    VehicleTrack {
        track_id: id,
        agent_type: "car".into(),
        length: 4.5,
        width: 1.8,
        frames,
    }
}

pub fn dataset(tracks: Vec<VehicleTrack>) -> Arc<TrackDataset> {
    Arc::new(TrackDataset::from_tracks(tracks))
}

/// Random ego on a straight or gently curved path plus constant-velocity
/// vehicles scattered around it.
pub fn random_scene<R: Rng>(rng: &mut R) -> (EgoState, Vec<VehicleSnapshot>) {
    let curvature: f64 = if rng.random_bool(0.5) { 0.0 } else { rng.random_range(-0.05..0.05) };
    let heading0: f64 = rng.random_range(-3.0..3.0);
    let pts: Vec<Vec2> = (0..=200)
        .map(|i| {
            let s = i as f64;
            if curvature == 0.0 {
                Vec2::new(s * heading0.cos(), s * heading0.sin())
            } else {
                let r = 1.0 / curvature;
                let th = s * curvature;
                let local = Vec2::new(r * th.sin(), r * (1.0 - th.cos()));
                local.rotate(heading0)
            }
        })
        .collect();
    let path: Arc<Path> = Arc::new(build_path(&pts).unwrap());
    let ego = EgoState {
        track_id: 0,
        s: rng.random_range(20.0..60.0),
        v: rng.random_range(0.0..10.0),
        path: path.clone(),
        length: rng.random_range(4.0..5.0),
        width: rng.random_range(1.7..2.0),
    };
    let origin = ego.pose().position();
    let n = rng.random_range(1..7);
    let others = (0..n)
        .map(|i| {
            // half the vehicles ride on the ego's path, the rest are scattered
            let pose = if rng.random_bool(0.5) {
                let s = (ego.s + rng.random_range(-25.0..25.0)).clamp(0.0, path.length());
                path.pose_at(s)
            } else {
                let p = origin + Vec2::new(rng.random_range(-25.0..25.0), rng.random_range(-25.0..25.0));
                Pose::new(p.x, p.y, rng.random_range(-3.1..3.1))
            };
            let speed = rng.random_range(0.0..10.0);
            VehicleSnapshot {
                track_id: i as i64 + 1,
                pose,
                velocity: Vec2::from_angle(pose.heading) * speed,
                length: rng.random_range(4.0..5.0),
                width: rng.random_range(1.7..2.0),
                overridden: false,
            }
        })
        .collect();
    (ego, others)
}
