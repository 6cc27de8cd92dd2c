//! Seeded synthetic roundabout scenes.
//!
//! Vehicles arrive on the entry arms as a Poisson process, drive arm → ring →
//! exit arm along fixed paths and are driven longitudinally by IDM with
//! per-vehicle parameters, a gap-acceptance rule at the ring entry and
//! zero-mean acceleration noise. Any vehicle involved in a box overlap is
//! dropped and the scene is regenerated, so the output is collision-free.

use std::collections::BTreeSet;
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};

use super::{Frame, TrackDataset, VehicleTrack};
use crate::error::{Error, Result};
use crate::geometry::{boxes_intersect, build_path, wrap_angle, OrientedBox, Path, Vec2};
use crate::simulator::{idm_accel_opt, IdmParams, Leader, FOLLOW_HEADING};
use crate::{A_CLIP, FRAME_DT, FRAME_MS};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IdmRange {
    pub v0: (f64, f64),
    pub s0: (f64, f64),
    pub time_headway: (f64, f64),
    pub a_max: (f64, f64),
    pub b: (f64, f64),
}

impl Default for IdmRange {
    fn default() -> Self {
        Self {
            v0: (7.0, 10.0),
            s0: (2.0, 4.0),
            time_headway: (0.8, 1.6),
            a_max: (1.5, 2.5),
            b: (2.0, 3.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthParams {
    pub ring_radius: f64,
    pub n_arms: usize,
    /// Vehicles per second over all arms.
    pub arrival_rate: f64,
    pub idm_parameter_ranges: IdmRange,
    pub gap_acceptance_s: f64,
    pub noise_std: f64,
    /// Length of the arrival window (s). The scene runs on until every vehicle left.
    pub duration: f64,
    pub seed: u64,
    /// Optional cap on the number of vehicles in the final (collision-free) scene.
    #[serde(default)]
    pub max_vehicles: Option<usize>,
    #[serde(default = "default_arm_length")]
    pub arm_length: f64,
}

fn default_arm_length() -> f64 {
    40.0
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            ring_radius: 25.0,
            n_arms: 4,
            arrival_rate: 0.3,
            idm_parameter_ranges: IdmRange::default(),
            gap_acceptance_s: 3.5,
            noise_std: 0.3,
            duration: 120.0,
            seed: 0,
            max_vehicles: None,
            arm_length: default_arm_length(),
        }
    }
}

const LANE_OFFSET: f64 = 3.0;
const ENTRY_BLEND: f64 = 0.2;
const VEHICLE_LENGTH: (f64, f64) = (4.0, 5.0);
const VEHICLE_WIDTH: (f64, f64) = (1.7, 2.0);
const PATH_STEP: f64 = 0.25;
const MAX_EXTRA_TIME_S: f64 = 600.0;
const MAX_REGENERATIONS: usize = 200;

impl SynthParams {
    fn merge_angle(&self) -> f64 {
        (LANE_OFFSET / self.ring_radius).asin() + ENTRY_BLEND
    }

    pub fn validate(&self) -> Result<()> {
        let r = &self.idm_parameter_ranges;
        let ranges = [r.v0, r.s0, r.time_headway, r.a_max, r.b];
        let positive = [self.ring_radius, self.gap_acceptance_s, self.duration, self.arm_length];
        if positive.iter().any(|&x| !(x.is_finite() && x > 0.0)) {
            return Err(Error::Config(
                "ring_radius, gap_acceptance_s, duration and arm_length must be positive".into(),
            ));
        }
        if !(self.arrival_rate.is_finite() && self.arrival_rate >= 0.0) {
            return Err(Error::Config("arrival_rate must be non-negative".into()));
        }
        if !(self.noise_std.is_finite() && self.noise_std >= 0.0) {
            return Err(Error::Config("noise_std must be non-negative".into()));
        }
        if ranges.iter().any(|&(lo, hi)| !(lo > 0.0 && lo <= hi && hi.is_finite())) {
            return Err(Error::Config("IDM ranges must satisfy 0 < min <= max".into()));
        }
        if self.n_arms < 2 {
            return Err(Error::Config("need at least two arms".into()));
        }
        if self.ring_radius <= LANE_OFFSET + 2.0 {
            return Err(Error::Config("ring radius too small for the lane offset".into()));
        }
        let spacing = 2.0 * PI / self.n_arms as f64;
        if spacing <= 2.0 * self.merge_angle() + 0.1 {
            return Err(Error::Config(format!(
                "{} arms do not fit on a ring of radius {}",
                self.n_arms, self.ring_radius
            )));
        }
        Ok(())
    }
}

fn ring_point(r: f64, phi: f64) -> Vec2 {
    Vec2::from_angle(phi) * r
}

fn ring_tangent(phi: f64) -> Vec2 {
    Vec2::new(-phi.sin(), phi.cos())
}

fn cubic(p0: Vec2, p1: Vec2, p2: Vec2, p3: Vec2, t: f64) -> Vec2 {
    let u = 1.0 - t;
    p0 * (u * u * u) + p1 * (3.0 * u * u * t) + p2 * (3.0 * u * t * t) + p3 * (t * t * t)
}

fn push_dense(out: &mut Vec<Vec2>, f: impl Fn(f64) -> Vec2, approx_len: f64) {
    let n = (approx_len / PATH_STEP).ceil().max(2.0) as usize;
    for i in 0..=n {
        out.push(f(i as f64 / n as f64));
    }
}

/// Route geometry: densely sampled path plus the arc length of the yield line
/// and the merge point on it.
struct Route {
    path: Path,
    entry_arm: usize,
    s_yield: f64,
    s_merge: f64,
    merge_point: Vec2,
}

fn build_route(p: &SynthParams, entry: usize, exit: usize) -> Route {
    let r = p.ring_radius;
    let spacing = 2.0 * PI / p.n_arms as f64;
    let th_in = spacing * entry as f64;
    let th_out = spacing * exit as f64;
    let u_in = Vec2::from_angle(th_in);
    let t_in = ring_tangent(th_in);
    let u_out = Vec2::from_angle(th_out);
    let t_out = ring_tangent(th_out);
    let alpha = p.merge_angle();
    let phi_in = th_in + alpha;
    let mut phi_out = th_out - alpha;
    while phi_out <= phi_in {
        phi_out += 2.0 * PI;
    }

    let far_in = u_in * (r + p.arm_length) + t_in * LANE_OFFSET;
    let near_in = u_in * (r + 6.0) + t_in * LANE_OFFSET;
    let merge = ring_point(r, phi_in);
    let diverge = ring_point(r, phi_out);
    let near_out = u_out * (r + 6.0) - t_out * LANE_OFFSET;
    let far_out = u_out * (r + p.arm_length) - t_out * LANE_OFFSET;

    let mut pts = Vec::new();
    push_dense(&mut pts, |t| far_in + (near_in - far_in) * t, p.arm_length - 6.0);
    let s_yield_idx = pts.len() - 1;
    let (a1, a2) = (near_in - u_in * 3.0, merge - ring_tangent(phi_in) * 3.0);
    push_dense(&mut pts, |t| cubic(near_in, a1, a2, merge, t), 8.0);
    let s_merge_idx = pts.len() - 1;
    push_dense(&mut pts, |t| ring_point(r, phi_in + (phi_out - phi_in) * t), r * (phi_out - phi_in));
    let (b1, b2) = (diverge + ring_tangent(phi_out) * 3.0, near_out - u_out * 3.0);
    push_dense(&mut pts, |t| cubic(diverge, b1, b2, near_out, t), 8.0);
    push_dense(&mut pts, |t| near_out + (far_out - near_out) * t, p.arm_length - 6.0);

    // index bookkeeping survives dedup because the joins are the only duplicates
    let mut s = vec![0.0; pts.len()];
    for i in 1..pts.len() {
        s[i] = s[i - 1] + pts[i - 1].dist(pts[i]);
    }
    let path = build_path(&pts).expect("route has distinct points");
    Route {
        path,
        entry_arm: entry,
        s_yield: s[s_yield_idx],
        s_merge: s[s_merge_idx],
        merge_point: merge,
    }
}

struct Agent {
    id: i64,
    route: usize,
    idm: IdmParams,
    length: f64,
    width: f64,
    s: f64,
    v: f64,
    committed: bool,
    frames: Vec<Frame>,
    active: bool,
}

struct Spawn {
    time_s: f64,
    arm: usize,
    exit: usize,
    idm: IdmParams,
    length: f64,
    width: f64,
}

fn sample_range<R: Rng>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    }
}

fn plan_spawns(p: &SynthParams, rng: &mut ChaCha8Rng) -> Vec<Spawn> {
    let mut out = Vec::new();
    if p.arrival_rate <= 0.0 {
        return out;
    }
    let exp = Exp::new(p.arrival_rate).expect("positive rate");
    let mut t = 0.0;
    loop {
        t += exp.sample(rng);
        if t > p.duration {
            break;
        }
        let arm = rng.random_range(0..p.n_arms);
        let exit = (arm + rng.random_range(1..p.n_arms)) % p.n_arms;
        let r = &p.idm_parameter_ranges;
        let idm = IdmParams {
            v0: sample_range(rng, r.v0),
            s0: sample_range(rng, r.s0),
            time_headway: sample_range(rng, r.time_headway),
            a_max: sample_range(rng, r.a_max),
            b: sample_range(rng, r.b),
            delta: 4.0,
            b_emergency: A_CLIP,
        };
        out.push(Spawn {
            time_s: t,
            arm,
            exit,
            idm,
            length: sample_range(rng, VEHICLE_LENGTH),
            width: sample_range(rng, VEHICLE_WIDTH),
        });
    }
    out
}

/// Generate a collision-free roundabout dataset; identical seeds give
/// bit-identical output.
pub fn synth_roundabout(params: &SynthParams) -> Result<TrackDataset> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let spawns = plan_spawns(params, &mut rng);
    let noise_seed: u64 = rng.random();

    let mut routes = Vec::new();
    let mut route_of = Vec::with_capacity(spawns.len());
    for sp in &spawns {
        let key = (sp.arm, sp.exit);
        let idx = match routes.iter().position(|(k, _): &((usize, usize), Route)| *k == key) {
            Some(i) => i,
            None => {
                routes.push((key, build_route(params, sp.arm, sp.exit)));
                routes.len() - 1
            }
        };
        route_of.push(idx);
    }
    let routes: Vec<Route> = routes.into_iter().map(|(_, r)| r).collect();

    let mut excluded: BTreeSet<usize> = BTreeSet::new();
    for _ in 0..MAX_REGENERATIONS {
        let cap = params.max_vehicles.unwrap_or(usize::MAX);
        let active: Vec<usize> = (0..spawns.len()).filter(|i| !excluded.contains(i)).take(cap).collect();
        let tracks = run_scene(params, &spawns, &route_of, &routes, &active, noise_seed);
        match first_collision(&tracks) {
            None => return Ok(TrackDataset::from_tracks(tracks)),
            Some((_, b)) => {
                // drop the later-spawned vehicle of the pair
                log::debug!("synthetic scene: dropping vehicle {b} after overlap");
                excluded.insert(b as usize);
            }
        }
    }
    Err(Error::Config("could not generate a collision-free scene".into()))
}

fn run_scene(
    p: &SynthParams,
    spawns: &[Spawn],
    route_of: &[usize],
    routes: &[Route],
    active: &[usize],
    noise_seed: u64,
) -> Vec<VehicleTrack> {
    let mut noise_rng = ChaCha8Rng::seed_from_u64(noise_seed);
    let noise = Normal::new(0.0, p.noise_std.max(0.0)).expect("finite std");
    let mut agents: Vec<Agent> = Vec::new();
    let mut pending: Vec<usize> = active.to_vec();
    pending.reverse();
    let horizon = ((p.duration + MAX_EXTRA_TIME_S) / FRAME_DT) as i64;

    for step in 0..horizon {
        let t = step as f64 * FRAME_DT;
        // spawn when due and the entry is clear
        while let Some(&i) = pending.last() {
            let sp = &spawns[i];
            if sp.time_s > t {
                break;
            }
            let route = &routes[route_of[i]];
            let blocked = agents
                .iter()
                .any(|a| a.active && routes[a.route].entry_arm == route.entry_arm && a.s < 12.0 && a.s < routes[a.route].s_merge);
            if blocked {
                break;
            }
            pending.pop();
            let v = sp.idm.v0.min(8.0) * 0.8;
            agents.push(Agent {
                id: i as i64,
                route: route_of[i],
                idm: sp.idm,
                length: sp.length,
                width: sp.width,
                s: 0.0,
                v,
                committed: false,
                frames: Vec::new(),
                active: true,
            });
        }
        if pending.is_empty() && agents.iter().all(|a| !a.active) && t > p.duration {
            break;
        }

        // record current frame for every active agent
        let poses: Vec<Option<(Vec2, f64)>> = agents
            .iter()
            .map(|a| {
                a.active.then(|| {
                    let pose = routes[a.route].path.pose_at(a.s);
                    (pose.position(), pose.heading)
                })
            })
            .collect();
        for (a, pose) in agents.iter_mut().zip(&poses) {
            if let Some((pos, heading)) = pose {
                let vel = Vec2::from_angle(*heading) * a.v;
                a.frames.push(Frame {
                    frame_id: step + 1,
                    timestamp_ms: step * FRAME_MS,
                    x: pos.x,
                    y: pos.y,
                    vx: vel.x,
                    vy: vel.y,
                    psi: *heading,
                });
            }
        }

        // accelerations from the current state
        let mut accels = vec![0.0; agents.len()];
        for i in 0..agents.len() {
            if !agents[i].active {
                continue;
            }
            let a = &agents[i];
            let route = &routes[a.route];
            let leader = find_leader(i, &agents, &poses, routes);
            let mut acc = idm_accel_opt(leader, a.v, &a.idm);
            if !a.committed && a.s < route.s_merge {
                // virtual stopped vehicle at the yield line
                let gap = route.s_yield + a.idm.s0 - a.s - 0.5 * a.length;
                acc = acc.min(idm_accel_opt(
                    Some(Leader {
                        track_id: None,
                        gap,
                        v_lead: 0.0,
                    }),
                    a.v,
                    &a.idm,
                ));
            }
            let eps: f64 = if p.noise_std > 0.0 { noise.sample(&mut noise_rng) } else { 0.0 };
            accels[i] = (acc + eps).clamp(-A_CLIP, A_CLIP);
        }

        // gap acceptance for approaching vehicles
        for i in 0..agents.len() {
            if !agents[i].active || agents[i].committed {
                continue;
            }
            let route = &routes[agents[i].route];
            if agents[i].s < route.s_yield - 15.0 {
                continue;
            }
            if gap_clear(i, &agents, routes, route.merge_point, p.gap_acceptance_s) {
                agents[i].committed = true;
            }
        }

        // integrate; the realized acceleration is whatever keeps v >= 0
        for (a, &acc) in agents.iter_mut().zip(&accels) {
            if !a.active {
                continue;
            }
            let v_next = (a.v + acc * FRAME_DT).max(0.0);
            a.s += 0.5 * (a.v + v_next) * FRAME_DT;
            a.v = v_next;
            if a.s >= routes[a.route].path.length() {
                a.active = false;
            }
        }
    }

    agents
        .into_iter()
        .filter(|a| a.frames.len() >= 2)
        .map(|a| VehicleTrack {
            track_id: a.id + 1,
            agent_type: "car".into(),
            length: a.length,
            width: a.width,
            frames: a.frames,
        })
        .collect()
}

fn find_leader(i: usize, agents: &[Agent], poses: &[Option<(Vec2, f64)>], routes: &[Route]) -> Option<Leader> {
    let me = &agents[i];
    let path = &routes[me.route].path;
    let mut best: Option<Leader> = None;
    for (j, other) in agents.iter().enumerate() {
        if j == i || !other.active {
            continue;
        }
        let Some((pos, heading)) = poses[j] else { continue };
        if pos.dist(path.pose_at(me.s).position()) > 60.0 {
            continue;
        }
        let (s, lat) = path.project(pos);
        if s <= me.s || lat > 1.5 || wrap_angle(heading - path.heading_at(s)).abs() >= FOLLOW_HEADING {
            continue;
        }
        let gap = s - me.s - 0.5 * (me.length + other.length);
        if best.is_none_or(|b| gap < b.gap) {
            best = Some(Leader {
                track_id: Some(other.id),
                gap,
                v_lead: other.v,
            });
        }
    }
    best
}

/// No other vehicle reaches the merge point within `gap_s`, and none occupies it.
fn gap_clear(i: usize, agents: &[Agent], routes: &[Route], merge: Vec2, gap_s: f64) -> bool {
    for (j, other) in agents.iter().enumerate() {
        if j == i || !other.active {
            continue;
        }
        let r = &routes[other.route];
        if r.entry_arm == routes[agents[i].route].entry_arm && other.s < r.s_merge {
            continue;
        }
        let (sm, lat) = r.path.project(merge);
        if lat > 0.5 {
            continue;
        }
        let ahead = sm - other.s;
        if ahead < -(other.length + 3.0) {
            continue;
        }
        if ahead <= 10.0 || ahead / other.v.max(0.1) < gap_s {
            return false;
        }
    }
    true
}

/// First overlapping pair `(earlier, later)` by spawn order, scanning frames in time.
pub(crate) fn first_collision(tracks: &[VehicleTrack]) -> Option<(i64, i64)> {
    let mut times: BTreeSet<i64> = BTreeSet::new();
    for t in tracks {
        times.extend(t.frames.iter().map(|f| f.timestamp_ms));
    }
    for &time in &times {
        let boxes: Vec<(i64, OrientedBox)> = tracks
            .iter()
            .filter_map(|t| {
                t.frame_at(time).map(|f| {
                    (
                        t.track_id,
                        OrientedBox::new(crate::geometry::Pose::new(f.x, f.y, f.psi), t.length, t.width),
                    )
                })
            })
            .collect();
        for a in 0..boxes.len() {
            for b in a + 1..boxes.len() {
                if boxes[a].1.center.position().dist(boxes[b].1.center.position()) > 12.0 {
                    continue;
                }
                if boxes_intersect(&boxes[a].1, &boxes[b].1) {
                    let (x, y) = (boxes[a].0.min(boxes[b].0), boxes[a].0.max(boxes[b].0));
                    // track ids are spawn index + 1
                    return Some((x - 1, y - 1));
                }
            }
        }
    }
    None
}
