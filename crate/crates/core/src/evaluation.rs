//! Closed-loop evaluation against the recorded experts.

use std::fmt::Write as _;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{Agent, PolicyKind};
use crate::error::{Error, Result};
use crate::scenario::TrackDataset;
use crate::simulator::{Done, ReplayRecord, SimConfig, Simulator};
use crate::A_CLIP;

/// Frame at which positions are compared (10 s).
pub const RMSE_FRAME: u64 = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub n_episodes: usize,
    pub seed: u64,
    pub max_steps: usize,
    pub n_bins: usize,
    pub record_replays: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            n_episodes: 100,
            seed: 0,
            max_steps: 600,
            n_bins: 100,
            record_replays: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Collision,
    LeftScene,
    /// Hit the step cap or the end of the recording.
    Timeout,
}

/// One closed-loop rollout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub outcome: Outcome,
    pub steps: u64,
    pub travel_distance: f64,
    pub mean_speed: f64,
    /// Ego position at frame 100, if reached without collision.
    pub pos_10s: Option<[f64; 2]>,
    #[serde(skip)]
    pub accels: Vec<f64>,
    #[serde(skip)]
    pub replay: Vec<ReplayRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub index: usize,
    pub ego_track_id: i64,
    pub policy: Trajectory,
    pub expert: Trajectory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub policy: String,
    pub n_episodes: usize,
    pub success_rate: f64,
    pub collision_rate: f64,
    pub avg_travel_distance: f64,
    /// Absent when no episode reaches 10 s under both policy and expert.
    pub rmse_10s: Option<f64>,
    pub mean_abs_dv: f64,
    pub accel_jsd: f64,
    pub episodes: Vec<EpisodeRecord>,
}

impl EvalReport {
    /// Fails with `NoSurvivors` when the 10 s position error is undefined.
    pub fn rmse(&self) -> Result<f64> {
        self.rmse_10s.ok_or(Error::NoSurvivors)
    }
}

/// Roll `agent` from the start of `ego`'s track.
pub fn rollout<A: Agent>(
    sim: &Simulator,
    ego: i64,
    agent: &mut A,
    max_steps: usize,
    rng: &mut ChaCha8Rng,
    record: bool,
) -> Result<Trajectory> {
    let mut state = sim.reset(Some(ego), rng)?;
    let mut accels = Vec::new();
    let mut speed_sum = state.ego.v;
    let mut n_speed = 1usize;
    let mut pos_10s = None;
    let mut replay = Vec::new();
    let outcome = loop {
        if state.time_step as usize >= max_steps {
            break Outcome::Timeout;
        }
        let a = match agent.act(sim, &state, rng) {
            Ok(a) => a,
            Err(Error::EndOfTrack(_)) => break Outcome::Timeout,
            Err(e) => return Err(e),
        };
        if record {
            replay.push(sim.replay_record(&state, a));
        }
        let info = sim.step(&mut state, a)?;
        accels.push(info.realized_accel);
        speed_sum += state.ego.v;
        n_speed += 1;
        if state.time_step == RMSE_FRAME && state.done != Done::Collision {
            let p = state.ego.pose();
            pos_10s = Some([p.x, p.y]);
        }
        match state.done {
            Done::Running => {}
            Done::Collision => break Outcome::Collision,
            Done::LeftScene => break Outcome::LeftScene,
        }
    };
    if record {
        replay.push(sim.replay_record(&state, 0.0));
    }
    Ok(Trajectory {
        outcome,
        steps: state.time_step,
        travel_distance: state.ego.s,
        mean_speed: speed_sum / n_speed as f64,
        pos_10s,
        accels,
        replay,
    })
}

/// Ego tracks for each episode: a seeded permutation of the eligible tracks,
/// cycled when more episodes than tracks are requested.
pub fn episode_egos(sim: &Simulator, n_episodes: usize, seed: u64) -> Result<Vec<i64>> {
    if sim.eligible().is_empty() {
        return Err(Error::NoEligibleTrack);
    }
    let mut ids = sim.eligible().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    Ok((0..n_episodes).map(|i| ids[i % ids.len()]).collect())
}

fn episode_rng(seed: u64, index: usize, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((index as u64) << 1) | stream);
    rng
}

/// Evaluate any agent family. `make_agent` builds a fresh agent per episode.
pub fn evaluate_with<A, F>(sim: &Simulator, name: &str, make_agent: F, cfg: &EvalConfig) -> Result<EvalReport>
where
    A: Agent,
    F: Fn() -> A + Sync,
{
    if cfg.n_episodes == 0 {
        return Err(Error::Config("n_episodes must be at least 1".into()));
    }
    if !sim.config().evaluation {
        return Err(Error::Config("evaluation requires a simulator in evaluation mode".into()));
    }
    let egos = episode_egos(sim, cfg.n_episodes, cfg.seed)?;
    let expert_kind = PolicyKind::ExpertReplay;
    let episodes: Vec<EpisodeRecord> = egos
        .par_iter()
        .enumerate()
        .map(|(i, &ego)| {
            let mut agent = make_agent();
            let policy = rollout(
                sim,
                ego,
                &mut agent,
                cfg.max_steps,
                &mut episode_rng(cfg.seed, i, 0),
                cfg.record_replays,
            )?;
            let expert = rollout(
                sim,
                ego,
                &mut expert_kind.agent(),
                cfg.max_steps,
                &mut episode_rng(cfg.seed, i, 1),
                false,
            )?;
            Ok(EpisodeRecord {
                index: i,
                ego_track_id: ego,
                policy,
                expert,
            })
        })
        .collect::<Result<_>>()?;
    Ok(summarize(name, episodes, cfg.n_bins))
}

pub fn summarize(name: &str, episodes: Vec<EpisodeRecord>, n_bins: usize) -> EvalReport {
    let n = episodes.len();
    let nf = n as f64;
    let collisions = episodes.iter().filter(|e| e.policy.outcome == Outcome::Collision).count();
    let sq: Vec<f64> = episodes
        .iter()
        .filter_map(|e| match (e.policy.pos_10s, e.expert.pos_10s) {
            (Some(p), Some(q)) => Some((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)),
            _ => None,
        })
        .collect();
    let rmse_10s = (!sq.is_empty()).then(|| (sq.iter().sum::<f64>() / sq.len() as f64).sqrt());
    let pol_acc: Vec<f64> = episodes.iter().flat_map(|e| e.policy.accels.iter().copied()).collect();
    let exp_acc: Vec<f64> = episodes.iter().flat_map(|e| e.expert.accels.iter().copied()).collect();
    let accel_jsd = if pol_acc.is_empty() || exp_acc.is_empty() {
        0.0
    } else {
        jsd(&pol_acc, &exp_acc, n_bins)
    };
    EvalReport {
        policy: name.to_string(),
        n_episodes: n,
        success_rate: (n - collisions) as f64 / nf,
        collision_rate: collisions as f64 / nf,
        avg_travel_distance: episodes.iter().map(|e| e.policy.travel_distance).sum::<f64>() / nf,
        rmse_10s,
        mean_abs_dv: episodes
            .iter()
            .map(|e| (e.expert.mean_speed - e.policy.mean_speed).abs())
            .sum::<f64>()
            / nf,
        accel_jsd,
        episodes,
    }
}

/// Evaluate a [`PolicyKind`] on `dataset` with the not-at-fault override enabled.
pub fn evaluate(kind: &PolicyKind, dataset: Arc<TrackDataset>, base: SimConfig, cfg: &EvalConfig) -> Result<EvalReport> {
    let sim = Simulator::new(dataset, SimConfig { evaluation: true, ..base });
    evaluate_with(&sim, kind.kind().name(), || kind.agent(), cfg)
}

const JSD_SMOOTHING: f64 = 1e-9;

fn histogram(xs: &[f64], n_bins: usize) -> Vec<f64> {
    let mut h = vec![JSD_SMOOTHING; n_bins];
    let width = 2.0 * A_CLIP / n_bins as f64;
    for &x in xs {
        let k = (((x + A_CLIP) / width).floor().max(0.0) as usize).min(n_bins - 1);
        h[k] += 1.0;
    }
    let s: f64 = h.iter().sum();
    h.iter().map(|c| c / s).collect()
}

/// Jensen-Shannon divergence (nats) between histograms of two sample sets on
/// `n_bins` equal bins over the acceleration clip range.
pub fn jsd(a: &[f64], b: &[f64], n_bins: usize) -> f64 {
    assert!(n_bins > 0 && !a.is_empty() && !b.is_empty(), "jsd needs bins and samples");
    let p = histogram(a, n_bins);
    let q = histogram(b, n_bins);
    let mut d = 0.0;
    for (&pi, &qi) in p.iter().zip(&q) {
        let m = 0.5 * (pi + qi);
        d += 0.5 * pi * (pi / m).ln() + 0.5 * qi * (qi / m).ln();
    }
    d.clamp(0.0, std::f64::consts::LN_2)
}

/// Mean and two standard deviations of each metric over several reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub policy: String,
    pub n_runs: usize,
    pub success_rate: (f64, f64),
    pub avg_travel_distance: (f64, f64),
    pub rmse_10s: Option<(f64, f64)>,
    pub mean_abs_dv: (f64, f64),
    pub accel_jsd: (f64, f64),
}

fn mean_2sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (m, 2.0 * var.sqrt())
}

pub fn summarize_runs(reports: &[EvalReport]) -> MetricSummary {
    let col = |f: &dyn Fn(&EvalReport) -> f64| -> Vec<f64> { reports.iter().map(f).collect() };
    let rmse: Vec<f64> = reports.iter().filter_map(|r| r.rmse_10s).collect();
    MetricSummary {
        policy: reports.first().map(|r| r.policy.clone()).unwrap_or_default(),
        n_runs: reports.len(),
        success_rate: mean_2sd(&col(&|r| r.success_rate)),
        avg_travel_distance: mean_2sd(&col(&|r| r.avg_travel_distance)),
        rmse_10s: (!rmse.is_empty()).then(|| mean_2sd(&rmse)),
        mean_abs_dv: mean_2sd(&col(&|r| r.mean_abs_dv)),
        accel_jsd: mean_2sd(&col(&|r| r.accel_jsd)),
    }
}

/// Plain-text table: one row per model, `mean ± 2sd` per metric.
pub fn format_table(rows: &[MetricSummary]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<14} {:>16} {:>18} {:>16} {:>16} {:>18}",
        "model", "success (%)", "travel (m)", "rmse@10s (m)", "|dv| (m/s)", "accel jsd"
    );
    let cell = |(m, s): (f64, f64), k: f64, p: usize| format!("{:.p$} ± {:.p$}", m * k, s * k);
    for r in rows {
        let rmse = r.rmse_10s.map_or("n/a".to_string(), |v| cell(v, 1.0, 2));
        let _ = writeln!(
            out,
            "{:<14} {:>16} {:>18} {:>16} {:>16} {:>18}",
            r.policy,
            cell(r.success_rate, 100.0, 1),
            cell(r.avg_travel_distance, 1.0, 1),
            rmse,
            cell(r.mean_abs_dv, 1.0, 2),
            cell(r.accel_jsd, 1.0, 4)
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsd_extremes() {
        let a = vec![-1.0, 0.0, 2.5, 2.5];
        assert_eq!(jsd(&a, &a, 100), 0.0);
        let d = jsd(&[-4.0; 50], &[4.0; 70], 100);
        assert!((d - std::f64::consts::LN_2).abs() < 1e-6);
        let x = [0.1, 0.3, -2.0];
        let y = [1.0, -0.2];
        assert_eq!(jsd(&x, &y, 10), jsd(&y, &x, 10));
    }

    #[test]
    fn out_of_range_samples_land_in_end_bins() {
        assert_eq!(jsd(&[-7.0], &[-5.0], 10), 0.0);
        assert_eq!(jsd(&[9.0], &[5.0], 10), 0.0);
    }

    #[test]
    fn mean_two_sd() {
        let (m, s) = mean_2sd(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 2.0 * 2f64.sqrt()).abs() < 1e-12);
        assert_eq!(mean_2sd(&[4.0]), (4.0, 0.0));
    }
}
