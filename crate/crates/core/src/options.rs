//! Fixed low-level controllers. Each option targets a speed at a future time and
//! holds the constant acceleration that gets there. Safety is predicted by rolling
//! the ego forward under that acceleration while every other vehicle keeps its
//! current velocity.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::{boxes_intersect, OrientedBox, Pose};
use crate::simulator::{integrate, EgoState, SimState, Simulator, VehicleSnapshot};
use crate::{A_CLIP, FRAME_DT};

/// Margin added on every side of both boxes during safety rollouts.
pub const SAFETY_MARGIN: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptionSpec {
    pub v_target: f64,
    pub t_target: f64,
    pub is_hard_brake: bool,
}

/// Ordered option set; index `k` always denotes the same (v, t) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptionSet {
    pub specs: Vec<OptionSpec>,
    pub hard_brake: usize,
}

impl Default for OptionSet {
    fn default() -> Self {
        enumerate_options(&[0.0, 2.0, 4.0, 6.0, 8.0], &[0.5, 1.0, 2.0]).expect("default option set")
    }
}

/// All (v, t) combinations in v-major order. The (min v, min t) option is the
/// always-safe HardBrake.
pub fn enumerate_options(speeds: &[f64], times: &[f64]) -> Result<OptionSet> {
    if speeds.is_empty() || times.is_empty() {
        return Err(Error::Config("option speed and time sets must be nonempty".into()));
    }
    if speeds.iter().any(|&v| !(v.is_finite() && v >= 0.0)) || times.iter().any(|&t| !(t.is_finite() && t > 0.0)) {
        return Err(Error::Config("option speeds must be >= 0 and times > 0".into()));
    }
    let v_min = speeds.iter().copied().fold(f64::INFINITY, f64::min);
    let t_min = times.iter().copied().fold(f64::INFINITY, f64::min);
    if v_min > 0.0 {
        return Err(Error::Config("option speed set has no stopping option".into()));
    }
    let mut specs = Vec::with_capacity(speeds.len() * times.len());
    let mut hard_brake = None;
    for &v in speeds {
        for &t in times {
            let hb = hard_brake.is_none() && v == v_min && t == t_min;
            if hb {
                hard_brake = Some(specs.len());
            }
            specs.push(OptionSpec {
                v_target: v,
                t_target: t,
                is_hard_brake: hb,
            });
        }
    }
    Ok(OptionSet {
        specs,
        hard_brake: hard_brake.expect("min v and min t are members"),
    })
}

impl OptionSet {
    pub fn len(&self) -> usize {
        self.specs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }

    /// Hex SHA-256 over the option values, used to match checkpoints.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for s in &self.specs {
            h.update(s.v_target.to_le_bytes());
            h.update(s.t_target.to_le_bytes());
            h.update([s.is_hard_brake as u8]);
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptionRuntime {
    pub index: usize,
    pub spec: OptionSpec,
    pub a_cmd: f64,
    pub steps_total: usize,
    pub steps_done: usize,
}

impl OptionRuntime {
    pub fn remaining(&self) -> usize {
        self.steps_total - self.steps_done
    }
}

fn steps_for(t: f64) -> usize {
    ((t / FRAME_DT).round() as usize).max(1)
}

/// Fix the option's acceleration from the ego's current speed.
pub fn initiate(index: usize, spec: &OptionSpec, ego_speed: f64) -> OptionRuntime {
    OptionRuntime {
        index,
        spec: *spec,
        a_cmd: ((spec.v_target - ego_speed) / spec.t_target).clamp(-A_CLIP, A_CLIP),
        steps_total: steps_for(spec.t_target),
        steps_done: 0,
    }
}

/// Acceleration for the next frame and whether the option completes with it.
pub fn option_step(rt: &mut OptionRuntime) -> Result<(f64, bool)> {
    if rt.steps_done >= rt.steps_total {
        return Err(Error::StepAfterFinish);
    }
    rt.steps_done += 1;
    Ok((rt.a_cmd, rt.steps_done == rt.steps_total))
}

/// Per-option probability of being safe. Binary here; the HardBrake entry is always 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SafetyVector {
    pub p: Vec<f64>,
}

impl SafetyVector {
    pub fn all_safe(n: usize) -> Self {
        Self { p: vec![1.0; n] }
    }

    pub fn is_safe(&self, k: usize) -> bool {
        self.p[k] > 0.0
    }
}

/// True if holding `a_cmd` for `steps` frames from `ego` never overlaps a
/// constant-velocity projection of `others`.
pub fn rollout_is_safe(ego: &EgoState, a_cmd: f64, steps: usize, others: &[VehicleSnapshot]) -> bool {
    if others.is_empty() {
        return true;
    }
    let len = ego.path.length();
    let (mut s, mut v) = (ego.s, ego.v);
    let reach = ego.v * steps as f64 * FRAME_DT + 0.5 * A_CLIP * (steps as f64 * FRAME_DT).powi(2);
    let origin = ego.pose().position();
    let relevant: Vec<&VehicleSnapshot> = others
        .iter()
        .filter(|o| {
            let o_reach = o.velocity.norm() * steps as f64 * FRAME_DT;
            o.pose.position().dist(origin) <= reach + o_reach + ego.length.max(ego.width) + o.length.max(o.width) + 4.0 * SAFETY_MARGIN
        })
        .collect();
    if relevant.is_empty() {
        return true;
    }
    for k in 1..=steps {
        let (d, vn) = integrate(v, a_cmd, FRAME_DT);
        s = (s + d).min(len);
        v = vn;
        let ego_box = OrientedBox::new(ego.path.pose_at(s), ego.length, ego.width).inflated(SAFETY_MARGIN);
        let t = k as f64 * FRAME_DT;
        for o in &relevant {
            let p = o.pose.position() + o.velocity * t;
            let b = OrientedBox::new(Pose::new(p.x, p.y, o.pose.heading), o.length, o.width).inflated(SAFETY_MARGIN);
            if boxes_intersect(&ego_box, &b) {
                return false;
            }
        }
        if s >= len {
            break;
        }
    }
    true
}

/// Safety of every option from the current state.
pub fn predict_safety_scene(ego: &EgoState, others: &[VehicleSnapshot], options: &OptionSet) -> SafetyVector {
    let p = options
        .specs
        .iter()
        .enumerate()
        .map(|(k, spec)| {
            if k == options.hard_brake {
                return 1.0;
            }
            let rt = initiate(k, spec, ego.v);
            if rollout_is_safe(ego, rt.a_cmd, rt.steps_total, others) {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    SafetyVector { p }
}

pub fn predict_safety(sim: &Simulator, state: &SimState, options: &OptionSet) -> SafetyVector {
    predict_safety_scene(&state.ego, &sim.snapshots(state), options)
}

/// Termination check for an active option: interrupt when its remaining portion
/// is predicted unsafe. HardBrake is never interrupted.
pub fn should_interrupt(sim: &Simulator, state: &SimState, rt: &OptionRuntime, options: &OptionSet) -> bool {
    if rt.index == options.hard_brake || rt.remaining() == 0 {
        return false;
    }
    !rollout_is_safe(&state.ego, rt.a_cmd, rt.remaining(), &sim.snapshots(state))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn enumeration_rules() {
        let o = enumerate_options(&[0.0, 4.0, 8.0], &[1.0, 2.0]).unwrap();
        assert_eq!(o.len(), 6);
        assert_eq!(o.hard_brake, 0);
        assert_eq!((o.specs[0].v_target, o.specs[0].t_target), (0.0, 1.0));
        assert_eq!((o.specs[3].v_target, o.specs[3].t_target), (4.0, 2.0));
        assert_eq!(o.specs.iter().filter(|s| s.is_hard_brake).count(), 1);

        let single = enumerate_options(&[0.0], &[1.0]).unwrap();
        assert_eq!(single.len(), 1);
        assert!(single.specs[0].is_hard_brake);

        assert!(matches!(enumerate_options(&[1.0, 2.0], &[1.0]), Err(Error::Config(_))));
        assert!(enumerate_options(&[], &[1.0]).is_err());

        // order is independent of the input order of the min elements
        let o2 = enumerate_options(&[8.0, 0.0], &[2.0, 0.5]).unwrap();
        assert_eq!(o2.hard_brake, 3);
        assert_eq!(o.hash(), enumerate_options(&[0.0, 4.0, 8.0], &[1.0, 2.0]).unwrap().hash());
        assert_ne!(o.hash(), o2.hash());
    }

    #[test]
    fn initiation() {
        let spec = |v, t| OptionSpec {
            v_target: v,
            t_target: t,
            is_hard_brake: false,
        };
        let rt = initiate(0, &spec(8.0, 2.0), 4.0);
        assert_eq!(rt.a_cmd, 2.0);
        assert_eq!(rt.steps_total, 20);
        assert_eq!(initiate(0, &spec(4.0, 1.0), 4.0).a_cmd, 0.0);
        assert_eq!(initiate(0, &spec(0.0, 0.5), 8.0).a_cmd, -A_CLIP);
    }

    #[test]
    fn stepping_and_finish() {
        let spec = OptionSpec {
            v_target: 0.0,
            t_target: 0.1,
            is_hard_brake: true,
        };
        let mut rt = initiate(0, &spec, 1.0);
        assert_eq!(rt.steps_total, 1);
        assert!(option_step(&mut rt).unwrap().1);
        assert!(matches!(option_step(&mut rt), Err(Error::StepAfterFinish)));

        let spec = OptionSpec {
            v_target: 6.0,
            t_target: 2.0,
            is_hard_brake: false,
        };
        let mut rt = initiate(0, &spec, 2.0);
        let mut v = 2.0;
        for call in 1..=20 {
            let (a, fin) = option_step(&mut rt).unwrap();
            v += a * FRAME_DT;
            assert_eq!(fin, call == 20);
        }
        assert!((v - 6.0).abs() < 1e-9);
    }
}
