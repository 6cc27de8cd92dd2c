//! Recorded vehicle tracks: Interaction-format CSV I/O, path extraction and
//! expert (observation, acceleration) transitions.

mod synth;

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{build_path, Path, Pose, Vec2, DUP_EPS};
use crate::observation::{encode_scene, EncoderConfig, Observation};
use crate::simulator::VehicleSnapshot;
use crate::{A_CLIP, FRAME_DT, FRAME_MS};

pub use synth::{synth_roundabout, IdmRange, SynthParams};

pub const CSV_COLUMNS: [&str; 11] = [
    "track_id",
    "frame_id",
    "timestamp_ms",
    "agent_type",
    "x",
    "y",
    "vx",
    "vy",
    "psi_rad",
    "length",
    "width",
];

const VEHICLE_TYPES: [&str; 5] = ["car", "truck", "bus", "van", "vehicle"];

fn is_vehicle(agent_type: &str) -> bool {
    VEHICLE_TYPES.iter().any(|t| t.eq_ignore_ascii_case(agent_type.trim()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub frame_id: i64,
    pub timestamp_ms: i64,
    pub x: f64,
    pub y: f64,
    pub vx: f64,
    pub vy: f64,
    pub psi: f64,
}

impl Frame {
    pub fn position(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }

    pub fn velocity(&self) -> Vec2 {
        Vec2::new(self.vx, self.vy)
    }

    pub fn speed(&self) -> f64 {
        self.vx.hypot(self.vy)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleTrack {
    pub track_id: i64,
    pub agent_type: String,
    pub length: f64,
    pub width: f64,
    pub frames: Vec<Frame>,
}

impl VehicleTrack {
    pub fn start_ms(&self) -> i64 {
        self.frames[0].timestamp_ms
    }

    pub fn end_ms(&self) -> i64 {
        self.frames[self.frames.len() - 1].timestamp_ms
    }

    /// Frame recorded at `t_ms`, if the vehicle is in the scene then.
    pub fn frame_at(&self, t_ms: i64) -> Option<&Frame> {
        if t_ms < self.start_ms() || t_ms > self.end_ms() {
            return None;
        }
        let off = t_ms - self.start_ms();
        if off % FRAME_MS != 0 {
            return None;
        }
        self.frames.get((off / FRAME_MS) as usize)
    }

    pub fn snapshot(&self, f: &Frame) -> VehicleSnapshot {
        VehicleSnapshot {
            track_id: self.track_id,
            pose: Pose::new(f.x, f.y, f.psi),
            velocity: f.velocity(),
            length: self.length,
            width: self.width,
            overridden: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub min_x: f64,
    pub min_y: f64,
    pub max_x: f64,
    pub max_y: f64,
}

impl Bounds {
    pub fn contains(&self, p: Vec2, margin: f64) -> bool {
        p.x >= self.min_x - margin && p.x <= self.max_x + margin && p.y >= self.min_y - margin && p.y <= self.max_y + margin
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackDataset {
    pub tracks: BTreeMap<i64, VehicleTrack>,
    pub scene_bounds: Bounds,
}

impl TrackDataset {
    /// Dataset whose bounds are the tight bounding box of all frames.
    pub fn from_tracks(tracks: impl IntoIterator<Item = VehicleTrack>) -> Self {
        let tracks: BTreeMap<i64, VehicleTrack> = tracks.into_iter().map(|t| (t.track_id, t)).collect();
        let mut b = Bounds {
            min_x: f64::INFINITY,
            min_y: f64::INFINITY,
            max_x: f64::NEG_INFINITY,
            max_y: f64::NEG_INFINITY,
        };
        for f in tracks.values().flat_map(|t| &t.frames) {
            b.min_x = b.min_x.min(f.x);
            b.min_y = b.min_y.min(f.y);
            b.max_x = b.max_x.max(f.x);
            b.max_y = b.max_y.max(f.y);
        }
        if tracks.is_empty() {
            b = Bounds {
                min_x: 0.0,
                min_y: 0.0,
                max_x: 0.0,
                max_y: 0.0,
            };
        }
        Self { tracks, scene_bounds: b }
    }

    pub fn is_empty(&self) -> bool {
        self.tracks.is_empty()
    }

    pub fn track(&self, id: i64) -> Result<&VehicleTrack> {
        self.tracks.get(&id).ok_or(Error::UnknownTrack(id))
    }

    /// Serialize in the Interaction CSV layout. Floats use the shortest
    /// representation that parses back to the same bits.
    pub fn to_csv(&self) -> String {
        let mut out = CSV_COLUMNS.join(",");
        out.push('\n');
        for t in self.tracks.values() {
            for f in &t.frames {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{},{},{},{},{}",
                    t.track_id, f.frame_id, f.timestamp_ms, t.agent_type, f.x, f.y, f.vx, f.vy, f.psi, t.length, t.width
                );
            }
        }
        out
    }
}

/// Parse Interaction-format track CSV text. Non-vehicle agents are skipped.
pub fn parse_tracks(csv_text: &str) -> Result<TrackDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(csv_text.as_bytes());
    let headers = rdr
        .headers()
        .map_err(|e| Error::Parse {
            line: 1,
            column: String::new(),
            message: e.to_string(),
        })?
        .clone();
    let mut col = [0usize; 11];
    for (k, name) in CSV_COLUMNS.iter().enumerate() {
        col[k] = headers.iter().position(|h| h == *name).ok_or_else(|| Error::Parse {
            line: 1,
            column: name.to_string(),
            message: "missing column".into(),
        })?;
    }

    struct Row {
        agent_type: String,
        length: f64,
        width: f64,
        frame: Frame,
    }
    let mut rows: BTreeMap<i64, Vec<Row>> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Parse {
            line: e.position().map(|p| p.line()).unwrap_or(0),
            column: String::new(),
            message: e.to_string(),
        })?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let field = |k: usize| -> Result<&str> {
            rec.get(col[k]).ok_or_else(|| Error::Parse {
                line,
                column: CSV_COLUMNS[k].to_string(),
                message: "missing field".into(),
            })
        };
        let int = |k: usize| -> Result<i64> {
            let s = field(k)?;
            s.parse::<i64>().map_err(|e| Error::Parse {
                line,
                column: CSV_COLUMNS[k].to_string(),
                message: format!("{e}: {s:?}"),
            })
        };
        let num = |k: usize| -> Result<f64> {
            let s = field(k)?;
            match s.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                Ok(_) => Err(Error::Parse {
                    line,
                    column: CSV_COLUMNS[k].to_string(),
                    message: format!("non-finite value {s:?}"),
                }),
                Err(e) => Err(Error::Parse {
                    line,
                    column: CSV_COLUMNS[k].to_string(),
                    message: format!("{e}: {s:?}"),
                }),
            }
        };
        let agent_type = field(3)?.to_string();
        if !is_vehicle(&agent_type) {
            continue;
        }
        let track_id = int(0)?;
        let frame = Frame {
            frame_id: int(1)?,
            timestamp_ms: int(2)?,
            x: num(4)?,
            y: num(5)?,
            vx: num(6)?,
            vy: num(7)?,
            psi: num(8)?,
        };
        let length = num(9)?;
        let width = num(10)?;
        for (k, v) in [(9, length), (10, width)] {
            if v <= 0.0 {
                return Err(Error::Parse {
                    line,
                    column: CSV_COLUMNS[k].to_string(),
                    message: "must be positive".into(),
                });
            }
        }
        rows.entry(track_id).or_default().push(Row {
            agent_type,
            length,
            width,
            frame,
        });
    }

    let mut tracks = Vec::with_capacity(rows.len());
    for (track_id, mut rs) in rows {
        rs.sort_by_key(|r| r.frame.timestamp_ms);
        for w in rs.windows(2) {
            if w[1].frame.timestamp_ms - w[0].frame.timestamp_ms != FRAME_MS {
                return Err(Error::Gap {
                    track_id,
                    prev_ms: w[0].frame.timestamp_ms,
                    next_ms: w[1].frame.timestamp_ms,
                });
            }
        }
        tracks.push(VehicleTrack {
            track_id,
            agent_type: rs[0].agent_type.clone(),
            length: rs[0].length,
            width: rs[0].width,
            frames: rs.into_iter().map(|r| r.frame).collect(),
        });
    }
    Ok(TrackDataset::from_tracks(tracks))
}

/// Path through a track's recorded positions.
pub fn extract_path(track: &VehicleTrack) -> Result<Path> {
    let pts: Vec<Vec2> = track.frames.iter().map(Frame::position).collect();
    build_path(&pts)
}

/// Path plus the arc length of each frame's position along it.
pub fn extract_path_with_stations(track: &VehicleTrack) -> Result<(Path, Vec<f64>)> {
    let path = extract_path(track)?;
    let mut stations = Vec::with_capacity(track.frames.len());
    let mut s = 0.0;
    let mut last = track.frames[0].position();
    for f in &track.frames {
        let d = last.dist(f.position());
        if d >= DUP_EPS {
            s += d;
            last = f.position();
        }
        stations.push(s);
    }
    Ok((path, stations))
}

/// Forward finite-difference accelerations `(speed[t+1] - speed[t]) / dt`,
/// one per frame except the last. Not clipped.
pub fn finite_difference_accels(track: &VehicleTrack) -> Vec<f64> {
    track.frames.windows(2).map(|w| (w[1].speed() - w[0].speed()) / FRAME_DT).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertTransition {
    pub track_id: i64,
    pub frame_index: usize,
    pub observation: Vec<f64>,
    pub action: f64,
}

/// Snapshots of every vehicle except `ego_id` recorded at `t_ms`.
pub fn recorded_snapshots(dataset: &TrackDataset, ego_id: i64, t_ms: i64) -> Vec<VehicleSnapshot> {
    dataset
        .tracks
        .values()
        .filter(|t| t.track_id != ego_id)
        .filter_map(|t| t.frame_at(t_ms).map(|f| t.snapshot(f)))
        .collect()
}

/// Observation of the recorded scene at frame `t` with `track` as the ego.
pub fn recorded_observation(
    dataset: &TrackDataset,
    track: &VehicleTrack,
    path: &Path,
    stations: &[f64],
    t: usize,
    cfg: &EncoderConfig,
) -> Observation {
    let f = &track.frames[t];
    let pose = path.pose_at(stations[t]);
    let yaw_rate = if t == 0 {
        0.0
    } else {
        let prev = path.heading_at(stations[t - 1]);
        crate::geometry::wrap_angle(pose.heading - prev) / FRAME_DT
    };
    let others = recorded_snapshots(dataset, track.track_id, f.timestamp_ms);
    encode_scene(&pose, f.speed(), yaw_rate, &others, cfg)
}

/// Expert (observation, acceleration) pairs for every movable track with at least
/// three frames. Actions are clipped to `±A_CLIP`; clipping events are logged.
pub fn expert_transitions(dataset: &TrackDataset, cfg: &EncoderConfig) -> Vec<ExpertTransition> {
    let mut out = Vec::new();
    for track in dataset.tracks.values() {
        if track.frames.len() < 3 {
            continue;
        }
        let Ok((path, stations)) = extract_path_with_stations(track) else {
            continue;
        };
        for (t, a) in finite_difference_accels(track).into_iter().enumerate() {
            let action = a.clamp(-A_CLIP, A_CLIP);
            if action != a {
                log::warn!(
                    "track {} frame {}: expert acceleration {a:.3} clipped to {action}",
                    track.track_id,
                    t
                );
            }
            let obs = recorded_observation(dataset, track, &path, &stations, t, cfg);
            out.push(ExpertTransition {
                track_id: track.track_id,
                frame_index: t,
                observation: obs.to_vec(),
                action,
            });
        }
    }
    out
}
