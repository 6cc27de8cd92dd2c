//! Path-constrained traffic simulator.
//!
//! The ego moves along its recorded path under commanded acceleration with
//! double-integrator dynamics. Every other vehicle replays its recording, except
//! that in evaluation mode a vehicle about to run into the ego from behind is
//! switched to IDM control for the rest of the episode.

mod idm;

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{boxes_intersect, wrap_angle, OrientedBox, Path, Pose, Vec2};
use crate::observation::EncoderConfig;
use crate::scenario::{extract_path_with_stations, finite_difference_accels, Bounds, TrackDataset};
use crate::{A_CLIP, FRAME_DT, FRAME_MS};

pub use idm::{idm_accel, idm_accel_opt, idm_free_accel, IdmParams, Leader};

/// Lateral distance within which a vehicle counts as being on a path.
pub const FOLLOW_LATERAL: f64 = 2.0;
/// Lateral slack beyond a vehicle's half width for the override's lane corridor.
pub const CORRIDOR_MARGIN: f64 = 0.5;
/// Maximum heading difference for a follow candidate.
pub const FOLLOW_HEADING: f64 = std::f64::consts::PI / 6.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    /// Evaluation mode enables the not-at-fault override.
    pub evaluation: bool,
    pub override_horizon_s: f64,
    pub idm: IdmParams,
    pub encoder: EncoderConfig,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            evaluation: false,
            override_horizon_s: 2.0,
            idm: IdmParams::default(),
            encoder: EncoderConfig::default(),
        }
    }
}

impl SimConfig {
    pub fn evaluation() -> Self {
        Self {
            evaluation: true,
            ..Self::default()
        }
    }
}

/// Path of a movable track and the arc length of each recorded frame.
#[derive(Debug, Clone)]
pub struct TrackGeometry {
    pub path: Arc<Path>,
    pub stations: Vec<f64>,
}

/// Position and motion of one non-ego vehicle at the current instant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleSnapshot {
    pub track_id: i64,
    pub pose: Pose,
    pub velocity: Vec2,
    pub length: f64,
    pub width: f64,
    pub overridden: bool,
}

impl VehicleSnapshot {
    pub fn bbox(&self) -> OrientedBox {
        OrientedBox::new(self.pose, self.length, self.width)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EgoState {
    pub track_id: i64,
    pub s: f64,
    pub v: f64,
    pub path: Arc<Path>,
    pub length: f64,
    pub width: f64,
}

impl EgoState {
    pub fn pose(&self) -> Pose {
        self.path.pose_at(self.s)
    }

    pub fn bbox(&self) -> OrientedBox {
        OrientedBox::new(self.pose(), self.length, self.width)
    }

    pub fn velocity(&self) -> Vec2 {
        Vec2::from_angle(self.pose().heading) * self.v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Done {
    Running,
    LeftScene,
    Collision,
}

/// A non-ego vehicle that switched from replay to IDM integration along its path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdmVehicle {
    pub s: f64,
    pub v: f64,
    pub left: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub time_step: u64,
    pub start_ms: i64,
    pub ego: EgoState,
    pub prev_heading: Option<f64>,
    pub overridden: BTreeMap<i64, IdmVehicle>,
    pub done: Done,
    pub collided_with: Option<i64>,
}

impl SimState {
    pub fn time_ms(&self) -> i64 {
        self.start_ms + self.time_step as i64 * FRAME_MS
    }

    pub fn time_s(&self) -> f64 {
        self.time_step as f64 * FRAME_DT
    }

    pub fn yaw_rate(&self) -> f64 {
        match self.prev_heading {
            Some(h) => wrap_angle(self.ego.pose().heading - h) / FRAME_DT,
            None => 0.0,
        }
    }

    pub fn is_running(&self) -> bool {
        self.done == Done::Running
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    pub commanded_accel: f64,
    pub realized_accel: f64,
    pub displacement: f64,
    pub done: Done,
    pub collided_with: Option<i64>,
    pub newly_overridden: usize,
}

/// Double-integrator update with closed-form stop inside the frame.
/// Returns `(displacement, v_next)`.
pub fn integrate(v: f64, a: f64, dt: f64) -> (f64, f64) {
    let v_next = v + a * dt;
    if v_next >= 0.0 {
        (v * dt + 0.5 * a * dt * dt, v_next)
    } else {
        (v * v / (2.0 * -a), 0.0)
    }
}

pub struct Simulator {
    dataset: Arc<TrackDataset>,
    geometry: BTreeMap<i64, TrackGeometry>,
    eligible: Vec<i64>,
    config: SimConfig,
}

impl Simulator {
    pub fn new(dataset: Arc<TrackDataset>, config: SimConfig) -> Self {
        let mut geometry = BTreeMap::new();
        let mut eligible = Vec::new();
        for (&id, t) in &dataset.tracks {
            if let Ok((path, stations)) = extract_path_with_stations(t) {
                geometry.insert(
                    id,
                    TrackGeometry {
                        path: Arc::new(path),
                        stations,
                    },
                );
                if t.frames.len() >= 3 {
                    eligible.push(id);
                }
            }
        }
        Self {
            dataset,
            geometry,
            eligible,
            config,
        }
    }

    pub fn dataset(&self) -> &Arc<TrackDataset> {
        &self.dataset
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    /// Tracks that can serve as ego: movable, with at least three frames.
    pub fn eligible(&self) -> &[i64] {
        &self.eligible
    }

    pub fn geometry(&self, id: i64) -> Option<&TrackGeometry> {
        self.geometry.get(&id)
    }

    pub fn scene_bounds(&self) -> Bounds {
        self.dataset.scene_bounds
    }

    /// Start an episode. Without an explicit id the ego is drawn uniformly
    /// from the eligible tracks.
    pub fn reset<R: Rng + ?Sized>(&self, ego_track_id: Option<i64>, rng: &mut R) -> Result<SimState> {
        let id = match ego_track_id {
            Some(id) => {
                self.dataset.track(id)?;
                if !self.eligible.contains(&id) {
                    return Err(Error::NoEligibleTrack);
                }
                id
            }
            None => {
                if self.eligible.is_empty() {
                    return Err(Error::NoEligibleTrack);
                }
                self.eligible[rng.random_range(0..self.eligible.len())]
            }
        };
        let track = &self.dataset.tracks[&id];
        let geo = &self.geometry[&id];
        Ok(SimState {
            time_step: 0,
            start_ms: track.start_ms(),
            ego: EgoState {
                track_id: id,
                s: 0.0,
                v: track.frames[0].speed(),
                path: geo.path.clone(),
                length: track.length,
                width: track.width,
            },
            prev_heading: None,
            overridden: BTreeMap::new(),
            done: Done::Running,
            collided_with: None,
        })
    }

    pub fn reset_seeded(&self, ego_track_id: Option<i64>, seed: u64) -> Result<SimState> {
        self.reset(ego_track_id, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    /// Every non-ego vehicle present at the state's time, in track-id order.
    pub fn snapshots(&self, state: &SimState) -> Vec<VehicleSnapshot> {
        let t = state.time_ms();
        let mut out = Vec::new();
        for (&id, track) in &self.dataset.tracks {
            if id == state.ego.track_id {
                continue;
            }
            if let Some(iv) = state.overridden.get(&id) {
                if iv.left {
                    continue;
                }
                let path = &self.geometry[&id].path;
                let pose = path.pose_at(iv.s);
                out.push(VehicleSnapshot {
                    track_id: id,
                    pose,
                    velocity: Vec2::from_angle(pose.heading) * iv.v,
                    length: track.length,
                    width: track.width,
                    overridden: true,
                });
            } else if let Some(f) = track.frame_at(t) {
                out.push(track.snapshot(f));
            }
        }
        out
    }

    /// Closest on-path, heading-aligned vehicle ahead of the ego.
    pub fn select_follow_vehicle(&self, state: &SimState) -> Option<Leader> {
        select_leader(&state.ego, &self.snapshots(state))
    }

    /// Evaluation-mode rule: any replayed vehicle that has the ego ahead on its
    /// own path and whose constant-velocity projection over the override horizon
    /// meets the ego's switches to IDM control permanently. Returns the number of
    /// newly switched vehicles.
    pub fn not_at_fault_override(&self, state: &mut SimState) -> usize {
        if !self.config.evaluation || !state.is_running() {
            return 0;
        }
        let ego_box = state.ego.bbox();
        let ego_vel = state.ego.velocity();
        let steps = (self.config.override_horizon_s / FRAME_DT).round() as usize;
        let mut switched = Vec::new();
        for snap in self.snapshots(state) {
            if snap.overridden {
                continue;
            }
            let Some(geo) = self.geometry.get(&snap.track_id) else {
                continue;
            };
            let (s_self, _) = geo.path.project(snap.pose.position());
            if corridor_gap(&geo.path, s_self, snap.length, snap.width, &ego_box).is_none() {
                continue;
            }
            let other = snap.bbox();
            let hits = (1..=steps).any(|k| {
                let t = k as f64 * FRAME_DT;
                let a = translate(&ego_box, ego_vel * t);
                let b = translate(&other, snap.velocity * t);
                boxes_intersect(&a, &b)
            });
            if hits {
                let v = snap.velocity.dot(Vec2::from_angle(geo.path.heading_at(s_self))).max(0.0);
                switched.push((snap.track_id, IdmVehicle { s: s_self, v, left: false }));
            }
        }
        let n = switched.len();
        for (id, iv) in switched {
            log::debug!("t={} ms: vehicle {id} switched to IDM", state.time_ms());
            state.overridden.insert(id, iv);
        }
        n
    }

    /// IDM leader for an overridden vehicle: the ego, when it is ahead on that vehicle's path.
    fn overridden_leader(&self, id: i64, iv: &IdmVehicle, state: &SimState) -> Option<Leader> {
        let geo = &self.geometry[&id];
        let track = &self.dataset.tracks[&id];
        let (s_ego, gap) = corridor_gap(&geo.path, iv.s, track.length, track.width, &state.ego.bbox())?;
        let tangent = Vec2::from_angle(geo.path.heading_at(s_ego));
        Some(Leader {
            track_id: None,
            gap,
            v_lead: state.ego.velocity().dot(tangent).max(0.0),
        })
    }

    /// Advance one frame under commanded acceleration `accel` (clipped to ±A_CLIP).
    pub fn step(&self, state: &mut SimState, accel: f64) -> Result<StepInfo> {
        if !state.is_running() {
            return Err(Error::SteppedAfterDone);
        }
        if !accel.is_finite() {
            return Err(Error::Config(format!("non-finite acceleration {accel}")));
        }
        let a = accel.clamp(-A_CLIP, A_CLIP);
        let newly_overridden = self.not_at_fault_override(state);

        // accelerations of IDM-driven vehicles from the pre-step state
        let idm_updates: Vec<(i64, f64)> = state
            .overridden
            .iter()
            .filter(|(_, iv)| !iv.left)
            .map(|(&id, iv)| {
                let leader = self.overridden_leader(id, iv, state);
                (id, idm_accel_opt(leader, iv.v, &self.config.idm))
            })
            .collect();

        let heading_before = state.ego.pose().heading;
        let (disp, v_next) = integrate(state.ego.v, a, FRAME_DT);
        let realized = (v_next - state.ego.v) / FRAME_DT;
        let len = state.ego.path.length();
        state.ego.s = (state.ego.s + disp).min(len);
        state.ego.v = v_next;
        state.prev_heading = Some(heading_before);

        for (id, acc) in idm_updates {
            let path_len = self.geometry[&id].path.length();
            let iv = state.overridden.get_mut(&id).expect("overridden vehicle");
            let (d, vn) = integrate(iv.v, acc, FRAME_DT);
            iv.s += d;
            iv.v = vn;
            if iv.s >= path_len {
                iv.left = true;
            }
        }
        state.time_step += 1;

        let ego_box = state.ego.bbox();
        let hit = self
            .snapshots(state)
            .into_iter()
            .find(|o| boxes_intersect(&ego_box, &o.bbox()))
            .map(|o| o.track_id);
        if let Some(id) = hit {
            state.done = Done::Collision;
            state.collided_with = Some(id);
        } else if state.ego.s >= len {
            state.done = Done::LeftScene;
        }
        Ok(StepInfo {
            commanded_accel: a,
            realized_accel: realized,
            displacement: disp,
            done: state.done,
            collided_with: state.collided_with,
            newly_overridden,
        })
    }

    /// Recorded finite-difference acceleration of the ego track at the current frame.
    pub fn expert_accel(&self, state: &SimState) -> Result<f64> {
        let track = self.dataset.track(state.ego.track_id)?;
        let k = state.time_step as usize;
        if k + 1 >= track.frames.len() {
            return Err(Error::EndOfTrack(track.track_id));
        }
        let f = &track.frames;
        Ok(((f[k + 1].speed() - f[k].speed()) / FRAME_DT).clamp(-A_CLIP, A_CLIP))
    }

    /// All finite-difference accelerations of a track (unclipped).
    pub fn recorded_accels(&self, id: i64) -> Result<Vec<f64>> {
        Ok(finite_difference_accels(self.dataset.track(id)?))
    }

    pub fn replay_record(&self, state: &SimState, commanded_accel: f64) -> ReplayRecord {
        let pose = state.ego.pose();
        ReplayRecord {
            time_ms: state.time_ms(),
            step: state.time_step,
            ego: EgoRecord {
                track_id: state.ego.track_id,
                s: state.ego.s,
                v: state.ego.v,
                x: pose.x,
                y: pose.y,
                heading: pose.heading,
                length: state.ego.length,
                width: state.ego.width,
            },
            commanded_accel,
            done: state.done,
            vehicles: self
                .snapshots(state)
                .into_iter()
                .map(|s| VehicleRecord {
                    track_id: s.track_id,
                    x: s.pose.x,
                    y: s.pose.y,
                    heading: s.pose.heading,
                    length: s.length,
                    width: s.width,
                    overridden: s.overridden,
                })
                .collect(),
            scene_bounds: self.dataset.scene_bounds,
        }
    }
}

/// Nearest part of `ego` ahead of a vehicle at arc length `s` that lies inside
/// the vehicle's lane corridor. Returns that arc length and the bumper gap.
/// Sampling the box outline handles an ego that is still angled across the
/// lane while merging.
fn corridor_gap(path: &Path, s: f64, length: f64, width: f64, ego: &OrientedBox) -> Option<(f64, f64)> {
    let c = ego.corners();
    let mut pts = vec![ego.center.position()];
    for i in 0..4 {
        let (a, b) = (c[i], c[(i + 1) % 4]);
        pts.extend([a, a + (b - a) * 0.5]);
    }
    let band = 0.5 * width + CORRIDOR_MARGIN;
    pts.iter()
        .map(|&p| path.project(p))
        .filter(|&(sp, lat)| lat <= band && sp > s)
        .map(|(sp, _)| sp)
        .min_by(f64::total_cmp)
        .map(|sp| (sp, sp - s - 0.5 * length))
}

fn translate(b: &OrientedBox, d: Vec2) -> OrientedBox {
    OrientedBox {
        center: Pose {
            x: b.center.x + d.x,
            y: b.center.y + d.y,
            heading: b.center.heading,
        },
        ..*b
    }
}

/// Follow-vehicle rule shared by the IDM baseline: among vehicles projecting
/// ahead of the ego on its path, within [`FOLLOW_LATERAL`] of it and heading
/// within [`FOLLOW_HEADING`] of the path tangent, the one with the smallest
/// arc-length gap.
pub fn select_leader(ego: &EgoState, others: &[VehicleSnapshot]) -> Option<Leader> {
    let mut best: Option<(f64, Leader)> = None;
    for o in others {
        let (s, lat) = ego.path.project(o.pose.position());
        if s <= ego.s || lat > FOLLOW_LATERAL {
            continue;
        }
        let tangent = ego.path.heading_at(s);
        if wrap_angle(o.pose.heading - tangent).abs() >= FOLLOW_HEADING {
            continue;
        }
        let ds = s - ego.s;
        if best.as_ref().is_none_or(|(b, _)| ds < *b) {
            best = Some((
                ds,
                Leader {
                    track_id: Some(o.track_id),
                    gap: ds - 0.5 * (ego.length + o.length),
                    v_lead: o.velocity.dot(Vec2::from_angle(tangent)).max(0.0),
                },
            ));
        }
    }
    best.map(|(_, l)| l)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EgoRecord {
    pub track_id: i64,
    pub s: f64,
    pub v: f64,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub length: f64,
    pub width: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleRecord {
    pub track_id: i64,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub length: f64,
    pub width: f64,
    pub overridden: bool,
}

/// One line of a replay log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayRecord {
    pub time_ms: i64,
    pub step: u64,
    pub ego: EgoRecord,
    pub commanded_accel: f64,
    pub done: Done,
    pub vehicles: Vec<VehicleRecord>,
    pub scene_bounds: Bounds,
}

impl ReplayRecord {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("replay record serializes")
    }
}

/// Parse a line-delimited replay log; blank lines are ignored.
pub fn parse_replay_log(text: &str) -> Result<Vec<ReplayRecord>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}
