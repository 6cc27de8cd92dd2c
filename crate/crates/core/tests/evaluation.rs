mod common;

use std::collections::BTreeSet;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use shail_core::baselines::{Agent, PolicyKind};
use shail_core::evaluation::*;
use shail_core::scenario::{synth_roundabout, SynthParams};
use shail_core::simulator::{SimConfig, SimState, Simulator};

use common::*;

struct Constant(f64);

impl Agent for Constant {
    fn act(&mut self, _: &Simulator, _: &SimState, _: &mut ChaCha8Rng) -> shail_core::Result<f64> {
        Ok(self.0)
    }
}

fn trajectory(outcome: Outcome, pos: Option<[f64; 2]>, speed: f64) -> Trajectory {
    Trajectory {
        outcome,
        steps: 100,
        travel_distance: 10.0,
        mean_speed: speed,
        pos_10s: pos,
        accels: vec![0.0],
        replay: Vec::new(),
    }
}

#[test]
fn full_brake_stops_in_closed_form_distance() {
    for v0 in [2.0, 5.0, 8.0] {
        let sim = Simulator::new(dataset(vec![straight_track(1, 0.0, 0.0, v0, 300)]), SimConfig::evaluation());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t = rollout(&sim, 1, &mut Constant(-5.0), 200, &mut rng, false).unwrap();
        assert!((t.travel_distance - v0 * v0 / 10.0).abs() < 1e-9, "v0={v0}: {}", t.travel_distance);
        assert_eq!(t.outcome, Outcome::Timeout);
    }
}

#[test]
fn histogram_jsd_tracks_quadrature() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let draw = |m: f64, rng: &mut ChaCha8Rng| -> Vec<f64> {
        let d = Normal::new(m, 1.0).unwrap();
        (0..400_000).map(|_| d.sample(rng)).collect()
    };
    let a = draw(0.0, &mut rng);
    let b = draw(1.0, &mut rng);
    let exact = gaussian_jsd_quadrature(0.0, 1.0, 1.0, 1.0);
    assert!((jsd(&a, &b, 100) - exact).abs() < 0.01, "{} vs {exact}", jsd(&a, &b, 100));
    assert!(jsd(&a, &draw(0.0, &mut rng), 100) < 1e-3);
}

#[test]
fn egos_are_a_cycled_permutation() {
    let ds = Arc::new(
        synth_roundabout(&SynthParams {
            seed: 4,
            max_vehicles: Some(8),
            ..SynthParams::default()
        })
        .unwrap(),
    );
    let sim = Simulator::new(ds, SimConfig::evaluation());
    let n = sim.eligible().len();
    let egos = episode_egos(&sim, 3 * n + 1, 17).unwrap();
    let first: BTreeSet<i64> = egos[..n].iter().copied().collect();
    assert_eq!(first, sim.eligible().iter().copied().collect());
    for i in n..egos.len() {
        assert_eq!(egos[i], egos[i - n]);
    }
    assert_eq!(egos, episode_egos(&sim, 3 * n + 1, 17).unwrap());
}

#[test]
fn summary_counts_only_survivors_for_rmse() {
    let rec = |i, out, pos, speed| EpisodeRecord {
        index: i,
        ego_track_id: i as i64,
        policy: trajectory(out, pos, speed),
        expert: trajectory(Outcome::LeftScene, Some([0.0, 0.0]), 4.0),
    };
    let r = summarize(
        "x",
        vec![
            rec(0, Outcome::Collision, None, 1.0),
            rec(1, Outcome::LeftScene, Some([3.0, 4.0]), 5.0),
            rec(2, Outcome::Timeout, Some([0.0, 0.0]), 4.0),
            rec(3, Outcome::Timeout, None, 6.0),
        ],
        10,
    );
    assert_eq!(r.success_rate, 0.75);
    assert_eq!(r.collision_rate, 0.25);
    assert!((r.rmse_10s.unwrap() - (25.0f64 / 2.0).sqrt()).abs() < 1e-12);
    assert!((r.mean_abs_dv - (3.0 + 1.0 + 0.0 + 2.0) / 4.0).abs() < 1e-12);

    let dead = summarize("y", vec![rec(0, Outcome::Collision, None, 1.0)], 10);
    assert!(dead.rmse().is_err());
}

#[test]
fn expert_replay_scores_perfectly() {
    let ds = Arc::new(
        synth_roundabout(&SynthParams {
            seed: 9,
            max_vehicles: Some(12),
            ..SynthParams::default()
        })
        .unwrap(),
    );
    let cfg = EvalConfig {
        n_episodes: 24,
        seed: 1,
        ..EvalConfig::default()
    };
    let r = evaluate(&PolicyKind::ExpertReplay, ds, SimConfig::default(), &cfg).unwrap();
    assert_eq!(r.n_episodes, 24);
    assert_eq!(r.rmse_10s.unwrap(), 0.0);
    assert_eq!(r.mean_abs_dv, 0.0);
    assert_eq!(r.accel_jsd, 0.0);
}

#[test]
fn evaluation_mode_is_required() {
    let sim = Simulator::new(dataset(vec![straight_track(1, 0.0, 0.0, 5.0, 100)]), SimConfig::default());
    assert!(evaluate_with(&sim, "c", || Constant(0.0), &EvalConfig::default()).is_err());
    let sim = Simulator::new(dataset(vec![straight_track(1, 0.0, 0.0, 5.0, 100)]), SimConfig::evaluation());
    assert!(evaluate_with(
        &sim,
        "c",
        || Constant(0.0),
        &EvalConfig {
            n_episodes: 0,
            ..EvalConfig::default()
        }
    )
    .is_err());
}
