use serde::{Deserialize, Serialize};

/// Intelligent Driver Model parameters. Defaults are the roundabout settings:
/// 8.94 m/s desired speed, 3 m minimum spacing, 0.5 s headway, 3 m/s² nominal
/// acceleration and 2.5 m/s² comfortable braking.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IdmParams {
    pub v0: f64,
    pub s0: f64,
    pub time_headway: f64,
    pub a_max: f64,
    pub b: f64,
    pub delta: f64,
    /// Lower clip on the output; also the response to a non-positive gap.
    pub b_emergency: f64,
}

impl Default for IdmParams {
    fn default() -> Self {
        Self {
            v0: 8.94,
            s0: 3.0,
            time_headway: 0.5,
            a_max: 3.0,
            b: 2.5,
            delta: 4.0,
            b_emergency: 8.0,
        }
    }
}

impl IdmParams {
    pub fn is_valid(&self) -> bool {
        [
            self.v0,
            self.s0,
            self.time_headway,
            self.a_max,
            self.b,
            self.delta,
            self.b_emergency,
        ]
        .iter()
        .all(|&x| x.is_finite() && x > 0.0)
    }

    /// Desired dynamic gap s*.
    pub fn desired_gap(&self, v: f64, v_lead: f64) -> f64 {
        let dv = v - v_lead;
        self.s0 + v * self.time_headway + v * dv / (2.0 * (self.a_max * self.b).sqrt())
    }
}

fn free_term(v: f64, p: &IdmParams) -> f64 {
    1.0 - (v / p.v0).powf(p.delta)
}

/// Free-road IDM acceleration (no leader).
pub fn idm_free_accel(v: f64, p: &IdmParams) -> f64 {
    (p.a_max * free_term(v, p)).clamp(-p.b_emergency, p.a_max)
}

/// IDM acceleration behind a leader at net (bumper-to-bumper) `gap`.
pub fn idm_accel(gap: f64, v: f64, v_lead: f64, p: &IdmParams) -> f64 {
    if gap <= 0.0 {
        return -p.b_emergency;
    }
    let ratio = p.desired_gap(v, v_lead) / gap;
    (p.a_max * (free_term(v, p) - ratio * ratio)).clamp(-p.b_emergency, p.a_max)
}

/// Leader as seen along a path: net gap and leader speed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Leader {
    pub track_id: Option<i64>,
    pub gap: f64,
    pub v_lead: f64,
}

pub fn idm_accel_opt(leader: Option<Leader>, v: f64, p: &IdmParams) -> f64 {
    match leader {
        Some(l) => idm_accel(l.gap, v, l.v_lead, p),
        None => idm_free_accel(v, p),
    }
}
