mod common;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use shail_core::geometry::{boxes_intersect, build_path, wrap_angle, OrientedBox, Pose, Vec2};

use common::grid_verdict;

fn point() -> impl Strategy<Value = Vec2> {
    (-50.0..50.0f64, -50.0..50.0f64).prop_map(|(x, y)| Vec2::new(x, y))
}

fn obox() -> impl Strategy<Value = OrientedBox> {
    (-3.0..3.0f64, -3.0..3.0f64, -3.2..3.2f64, 0.5..5.0f64, 0.3..2.5f64)
        .prop_map(|(x, y, h, l, w)| OrientedBox::new(Pose::new(x, y, h), l, w))
}

/// Distance from `p` to the polyline by sampling every segment at 1 mm.
fn dense_lateral(pts: &[Vec2], p: Vec2) -> f64 {
    let mut best = f64::INFINITY;
    for w in pts.windows(2) {
        let d = w[1] - w[0];
        let n = (d.norm() / 1e-3).ceil().max(1.0) as usize;
        for k in 0..=n {
            let q = w[0] + d * (k as f64 / n as f64);
            best = best.min(q.dist(p));
        }
    }
    best
}

#[test]
fn arclength_matches_direct_summation() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let pts: Vec<Vec2> = (0..100)
        .map(|_| Vec2::new(rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0)))
        .collect();
    let path = build_path(&pts).unwrap();
    let direct: f64 = pts.windows(2).map(|w| w[0].dist(w[1])).sum();
    assert!((path.length() - direct).abs() <= 1e-12 * direct.max(1.0));
    assert_eq!(path.arclength()[0], 0.0);
}

#[test]
fn l_shaped_interpolation() {
    let path = build_path(&[Vec2::new(0.0, 0.0), Vec2::new(3.0, 0.0), Vec2::new(3.0, 4.0)]).unwrap();
    let p = path.pose_at(5.0);
    assert!((p.x - 3.0).abs() < 1e-12 && (p.y - 2.0).abs() < 1e-12);
    assert!((p.heading - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn projection_matches_dense_sampling(pts in proptest::collection::vec(point(), 2..6), p in point()) {
        let path = build_path(&pts).unwrap();
        let (s, lat) = path.project(p);
        prop_assert!((0.0..=path.length() + 1e-9).contains(&s));
        prop_assert!((lat - dense_lateral(path.waypoints(), p)).abs() <= 1e-3);
        // the projected point is at the reported distance
        prop_assert!((path.pose_at(s).position().dist(p) - lat).abs() <= 1e-6);
    }

    #[test]
    fn arclength_strictly_increasing(pts in proptest::collection::vec(point(), 2..20)) {
        if let Ok(path) = build_path(&pts) {
            prop_assert!(path.waypoints().len() >= 2);
            prop_assert!(path.arclength().windows(2).all(|w| w[1] > w[0]));
        }
    }

    #[test]
    fn wrapped_angles_in_range(t in -100.0..100.0f64) {
        let w = wrap_angle(t);
        prop_assert!(w > -std::f64::consts::PI && w <= std::f64::consts::PI);
        prop_assert!(((t - w) / std::f64::consts::TAU - ((t - w) / std::f64::consts::TAU).round()).abs() < 1e-9);
    }

    #[test]
    fn box_invariants(b in obox()) {
        prop_assert!(b.length >= b.width && b.width > 0.0);
        prop_assert!(b.center.heading > -std::f64::consts::PI && b.center.heading <= std::f64::consts::PI);
    }

    #[test]
    fn sat_agrees_with_grid(a in obox(), b in obox()) {
        if let Some(truth) = grid_verdict(&a, &b, 0.02, 0.01) {
            prop_assert_eq!(boxes_intersect(&a, &b), truth);
        }
    }

    #[test]
    fn sat_symmetric_and_rigid_invariant(a in obox(), b in obox(), dx in -20.0..20.0f64, dy in -20.0..20.0f64, rot in -3.0..3.0f64) {
        let hit = boxes_intersect(&a, &b);
        prop_assert_eq!(hit, boxes_intersect(&b, &a));
        let move_box = |o: &OrientedBox| {
            let c = o.center.position().rotate(rot) + Vec2::new(dx, dy);
            OrientedBox::new(Pose::new(c.x, c.y, o.center.heading + rot), o.length, o.width)
        };
        let (ma, mb) = (move_box(&a), move_box(&b));
        // only compare away from the touching configuration
        if a.separation(&b).abs() > 1e-6 {
            prop_assert_eq!(hit, boxes_intersect(&ma, &mb));
        }
    }
}
