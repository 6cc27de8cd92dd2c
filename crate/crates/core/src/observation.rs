//! Ego-centric feature vector shared by every learned policy and the discriminator.
//!
//! Layout (22 values, fixed):
//!
//! | index | feature |
//! |-------|---------|
//! | 0 | ego speed (m/s) |
//! | 1 | ego yaw rate (rad/s) |
//! | 2 + 5k .. 2 + 5k + 4 | sector k: present, rel_x, rel_y, rel_vx, rel_vy |
//!
//! Sector `k` covers ego-frame bearings `[-36° + 72°k, 36° + 72°k)`, so sector 0
//! is centered on the ego heading and indices increase counterclockwise.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::geometry::{Pose, Vec2};
use crate::simulator::{SimState, Simulator, VehicleSnapshot};

pub const N_SECTORS: usize = 5;
pub const OBS_DIM: usize = 2 + 5 * N_SECTORS;
pub const SECTOR_WIDTH: f64 = 2.0 * PI / N_SECTORS as f64;

pub const FEATURE_NAMES: [&str; OBS_DIM] = [
    "ego_speed",
    "ego_yaw_rate",
    "s0_present",
    "s0_rel_x",
    "s0_rel_y",
    "s0_rel_vx",
    "s0_rel_vy",
    "s1_present",
    "s1_rel_x",
    "s1_rel_y",
    "s1_rel_vx",
    "s1_rel_vy",
    "s2_present",
    "s2_rel_x",
    "s2_rel_y",
    "s2_rel_vx",
    "s2_rel_vy",
    "s3_present",
    "s3_rel_x",
    "s3_rel_y",
    "s3_rel_vx",
    "s3_rel_vy",
    "s4_present",
    "s4_rel_x",
    "s4_rel_y",
    "s4_rel_vx",
    "s4_rel_vy",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    /// Sensing range (m); also the placeholder `rel_x` of an empty sector.
    pub r_max: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self { r_max: 50.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sector {
    pub present: bool,
    pub track_id: Option<i64>,
    pub rel_x: f64,
    pub rel_y: f64,
    pub rel_vx: f64,
    pub rel_vy: f64,
}

impl Sector {
    pub fn absent(r_max: f64) -> Self {
        Self {
            present: false,
            track_id: None,
            rel_x: r_max,
            rel_y: 0.0,
            rel_vx: 0.0,
            rel_vy: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub ego_speed: f64,
    pub ego_yaw_rate: f64,
    pub sectors: [Sector; N_SECTORS],
}

impl Observation {
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(OBS_DIM);
        v.push(self.ego_speed);
        v.push(self.ego_yaw_rate);
        for s in &self.sectors {
            v.push(if s.present { 1.0 } else { 0.0 });
            v.extend_from_slice(&[s.rel_x, s.rel_y, s.rel_vx, s.rel_vy]);
        }
        v
    }
}

/// Sector index for an ego-frame bearing in radians.
pub fn sector_of(bearing: f64) -> usize {
    let k = ((bearing + SECTOR_WIDTH / 2.0) / SECTOR_WIDTH).floor() as i64;
    k.rem_euclid(N_SECTORS as i64) as usize
}

/// Encode a scene given the ego pose, its speed and yaw rate.
pub fn encode_scene(ego: &Pose, ego_speed: f64, yaw_rate: f64, others: &[VehicleSnapshot], cfg: &EncoderConfig) -> Observation {
    let mut sectors = [Sector::absent(cfg.r_max); N_SECTORS];
    let mut best: [(f64, i64); N_SECTORS] = [(f64::INFINITY, i64::MAX); N_SECTORS];
    let ego_pos = ego.position();
    let ego_vel = Vec2::from_angle(ego.heading) * ego_speed;
    for o in others {
        let d = o.pose.position() - ego_pos;
        let dist = d.norm();
        if dist > cfg.r_max {
            continue;
        }
        let rel = d.rotate(-ego.heading);
        let k = sector_of(rel.angle());
        let key = (dist, o.track_id);
        if key.0 < best[k].0 || (key.0 == best[k].0 && key.1 < best[k].1) {
            best[k] = key;
            let rv = (o.velocity - ego_vel).rotate(-ego.heading);
            sectors[k] = Sector {
                present: true,
                track_id: Some(o.track_id),
                rel_x: rel.x,
                rel_y: rel.y,
                rel_vx: rv.x,
                rel_vy: rv.y,
            };
        }
    }
    Observation {
        ego_speed,
        ego_yaw_rate: yaw_rate,
        sectors,
    }
}

/// Encode the ego's view of a running simulator state.
pub fn encode(sim: &Simulator, state: &SimState) -> Observation {
    let pose = state.ego.pose();
    let others = sim.snapshots(state);
    encode_scene(&pose, state.ego.v, state.yaw_rate(), &others, &sim.config().encoder)
}

const STD_FLOOR: f64 = 1e-6;

/// Per-dimension standardization statistics, frozen at training start.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    /// Population mean and standard deviation of `rows`.
    pub fn from_rows<'a, I>(rows: I, dim: usize) -> Self
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        let mut n = 0usize;
        let mut mean = vec![0.0; dim];
        let mut m2 = vec![0.0; dim];
        for row in rows {
            n += 1;
            for j in 0..dim {
                let delta = row[j] - mean[j];
                mean[j] += delta / n as f64;
                m2[j] += delta * (row[j] - mean[j]);
            }
        }
        if n == 0 {
            return Self::identity(dim);
        }
        let std = m2.iter().map(|&m| (m / n as f64).sqrt()).collect();
        Self { mean, std }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(&v, (&m, &s))| (v - m) / s.max(STD_FLOOR))
            .collect()
    }

    /// Normalize and clip each coordinate to `[-bound, bound]`.
    pub fn normalize_clipped(&self, x: &[f64], bound: f64) -> Vec<f64> {
        let mut z = self.normalize(x);
        for v in &mut z {
            *v = v.clamp(-bound, bound);
        }
        z
    }

    pub fn denormalize(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(&v, (&m, &s))| v * s.max(STD_FLOOR) + m)
            .collect()
    }
}

/// Normalize an observation with frozen statistics.
pub fn normalize(obs: &[f64], stats: &NormStats) -> Vec<f64> {
    stats.normalize(obs)
}
