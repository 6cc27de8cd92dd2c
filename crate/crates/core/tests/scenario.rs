mod common;

use shail_core::geometry::{boxes_intersect, Vec2, DUP_EPS};
use shail_core::scenario::{extract_path, finite_difference_accels, parse_tracks, synth_roundabout, SynthParams, VehicleTrack};

use common::straight_track;

fn scene(seed: u64) -> SynthParams {
    SynthParams {
        seed,
        max_vehicles: Some(15),
        ..SynthParams::default()
    }
}

#[test]
fn csv_round_trip_is_bit_identical() {
    let ds = synth_roundabout(&scene(11)).unwrap();
    let back = parse_tracks(&ds.to_csv()).unwrap();
    assert_eq!(ds.tracks.len(), back.tracks.len());
    for (id, t) in &ds.tracks {
        let u = &back.tracks[id];
        assert_eq!(t.frames.len(), u.frames.len());
        for (a, b) in t.frames.iter().zip(&u.frames) {
            assert_eq!(a.x.to_bits(), b.x.to_bits());
            assert_eq!(a.y.to_bits(), b.y.to_bits());
            assert_eq!(a.vx.to_bits(), b.vx.to_bits());
            assert_eq!(a.vy.to_bits(), b.vy.to_bits());
            assert_eq!(a.psi.to_bits(), b.psi.to_bits());
            assert_eq!(a.timestamp_ms, b.timestamp_ms);
        }
    }
}

#[test]
fn path_length_is_sum_of_displacements() {
    let ds = synth_roundabout(&scene(12)).unwrap();
    for t in ds.tracks.values() {
        let path = extract_path(t).unwrap();
        let mut kept: Vec<Vec2> = Vec::new();
        for f in &t.frames {
            let p = f.position();
            if kept.last().is_none_or(|q| q.dist(p) > DUP_EPS) {
                kept.push(p);
            }
        }
        let direct: f64 = kept.windows(2).map(|w| w[0].dist(w[1])).sum();
        assert!((path.length() - direct).abs() < 1e-9, "track {}", t.track_id);
    }
}

#[test]
fn speed_ramp_gives_unit_actions() {
    let mut t: VehicleTrack = straight_track(1, 0.0, 0.0, 0.0, 11);
    let mut x = 0.0;
    for (k, f) in t.frames.iter_mut().enumerate() {
        let v = k as f64 * 0.1;
        f.vx = v;
        f.x = x;
        x += v * 0.1 + 0.005;
    }
    let acc = finite_difference_accels(&t);
    assert!(acc.iter().take(10).all(|a| (a - 1.0).abs() < 1e-12), "{acc:?}");
}

#[test]
fn generated_scenes_are_collision_free() {
    for seed in [1, 2, 3] {
        let ds = synth_roundabout(&scene(seed)).unwrap();
        let mut times: Vec<i64> = ds.tracks.values().flat_map(|t| t.frames.iter().map(|f| f.timestamp_ms)).collect();
        times.sort_unstable();
        times.dedup();
        for t in times {
            let boxes: Vec<_> = ds
                .tracks
                .values()
                .filter_map(|tr| tr.frame_at(t).map(|f| tr.snapshot(f).bbox()))
                .collect();
            for i in 0..boxes.len() {
                for j in i + 1..boxes.len() {
                    assert!(!boxes_intersect(&boxes[i], &boxes[j]), "seed {seed}: overlap at {t} ms");
                }
            }
        }
    }
}

#[test]
fn generator_is_seeded_and_capped() {
    let a = synth_roundabout(&scene(5)).unwrap();
    assert_eq!(a, synth_roundabout(&scene(5)).unwrap());
    assert_eq!(a.tracks.len(), 15);
    let none = synth_roundabout(&SynthParams {
        arrival_rate: 0.0,
        ..SynthParams::default()
    })
    .unwrap();
    assert!(none.tracks.is_empty());
}
