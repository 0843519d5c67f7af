mod common;

use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use spacetime_assembly::assembly::{next_object, placeable_set, prioritize_by_busy_time, AssemblyGraph};
use spacetime_assembly::geometry::{wrap_angle, Pose2};
use spacetime_assembly::orchestrator::{verify_paths, Finding};
use spacetime_assembly::scenes;
use spacetime_assembly::stplanner::{config_distance, st_distance, DistanceParams, SpaceTimePoint};
use spacetime_assembly::world::{evaluate_entity, sweep_collision_free, Config, EntityState, Knot, PlanState, TimedPath};

use common::{fuzz_segment, fuzz_world, oracle_distance, oracle_segment_clear};

fn pt(x: f64, y: f64, th: f64, t: f64) -> SpaceTimePoint {
    SpaceTimePoint::new(Config::new(x, y, th), t)
}

fn coord() -> impl Strategy<Value = f64> {
    -5.0..5.0f64
}

fn angle() -> impl Strategy<Value = f64> {
    -3.1..3.1f64
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn distance_matches_reference(
        a in (coord(), coord(), angle(), 0.0..10.0f64),
        b in (coord(), coord(), angle(), 0.0..10.0f64),
        lambda in 0.05..1.0f64,
        v in 0.2..3.0f64,
    ) {
        let p = DistanceParams { lambda, v_max: v, ..DistanceParams::default() };
        let d = st_distance(&pt(a.0, a.1, a.2, a.3), &pt(b.0, b.1, b.2, b.3), &p);
        let o = oracle_distance(a, b, lambda, v);
        if o.is_finite() {
            prop_assert!((d - o).abs() <= 1e-9 * (1.0 + o), "{d} vs {o}");
        } else {
            prop_assert!(d.is_infinite());
        }
    }

    #[test]
    fn finite_distance_is_one_directional(
        a in (coord(), coord(), angle(), 0.0..10.0f64),
        b in (coord(), coord(), angle(), 0.0..10.0f64),
    ) {
        let p = DistanceParams::default();
        let (ya, yb) = (pt(a.0, a.1, a.2, a.3), pt(b.0, b.1, b.2, b.3));
        prop_assert_eq!(st_distance(&ya, &ya, &p), 0.0);
        if ya != yb && st_distance(&ya, &yb, &p).is_finite() {
            prop_assert!(st_distance(&yb, &ya, &p).is_infinite());
        }
    }

    #[test]
    fn distance_is_additive_on_straight_segments(
        a in (coord(), coord(), -1.5..1.5f64, 0.0..5.0f64),
        d in (-2.0..2.0f64, -2.0..2.0f64, -1.5..1.5f64),
        slack in 1.0..4.0f64,
        s in 0.01..0.99f64,
    ) {
        let p = DistanceParams::default();
        let dq = d.0.hypot(d.1) + p.angle_weight * d.2.abs();
        let dt = (dq / p.v_max) * slack + 1e-3;
        let ya = pt(a.0, a.1, a.2, a.3);
        let yb = pt(a.0 + d.0, a.1 + d.1, a.2 + d.2, a.3 + dt);
        let ym = pt(a.0 + s * d.0, a.1 + s * d.1, a.2 + s * d.2, a.3 + s * dt);
        let whole = st_distance(&ya, &yb, &p);
        prop_assert!(whole.is_finite());
        let parts = st_distance(&ya, &ym, &p) + st_distance(&ym, &yb, &p);
        prop_assert!((whole - parts).abs() < 1e-9, "{whole} vs {parts}");
    }

    #[test]
    fn lambda_one_is_the_configuration_metric(
        a in (coord(), coord(), angle()),
        b in (coord(), coord(), angle()),
        dt in 0.1..50.0f64,
    ) {
        let p = DistanceParams { lambda: 1.0, v_max: 1e6, ..DistanceParams::default() };
        let (qa, qb) = (Config::new(a.0, a.1, a.2), Config::new(b.0, b.1, b.2));
        let d = st_distance(&SpaceTimePoint::new(qa, 1.0), &SpaceTimePoint::new(qb, 1.0 + dt), &p);
        prop_assert!((d - config_distance(&qa, &qb, p.angle_weight)).abs() < 1e-12);
    }

    #[test]
    fn wrapped_angles_stay_in_half_open_range(a in -100.0..100.0f64) {
        let w = wrap_angle(a);
        prop_assert!(w > -std::f64::consts::PI - 1e-12 && w <= std::f64::consts::PI + 1e-12);
        prop_assert!(((a - w) / std::f64::consts::TAU - ((a - w) / std::f64::consts::TAU).round()).abs() < 1e-9);
    }

    #[test]
    fn pose_inverse_undoes_compose(
        a in (coord(), coord(), angle()),
        b in (coord(), coord(), angle()),
    ) {
        let (pa, pb) = (Pose2::new(a.0, a.1, a.2), Pose2::new(b.0, b.1, b.2));
        let back = pa.inverse().compose(&pa.compose(&pb));
        prop_assert!((back.x - pb.x).abs() < 1e-9 && (back.y - pb.y).abs() < 1e-9);
        prop_assert!(wrap_angle(back.theta - pb.theta).abs() < 1e-9);
    }

    #[test]
    fn evaluation_is_continuous_and_clamped(
        steps in prop::collection::vec((0.05..2.0f64, coord(), coord()), 1..6),
        probe in 0.0..1.0f64,
    ) {
        let scene = scenes::tower().with_robots(1).unwrap();
        let mut t = 0.0;
        let mut knots = vec![Knot::new(0.0, Config::new(0.0, 0.0, 0.0))];
        for (dt, x, y) in &steps {
            t += dt;
            knots.push(Knot::new(t, Config::new(*x, *y, 0.0)));
        }
        let mut plan = PlanState::new();
        plan.commit("r00", &TimedPath::new(knots.clone()));
        let at = |t: f64| match evaluate_entity(&plan, &scene, "r00", t).unwrap() {
            EntityState::Robot(q) => q,
            EntityState::Object(_) => unreachable!(),
        };
        let last = knots.last().unwrap().q;
        prop_assert_eq!(at(t + 5.0), last);
        let tp = probe * t;
        let (a, b) = (at(tp), at(tp + 1e-9));
        prop_assert!(a.translation_to(&b) < 1e-6);
    }

    #[test]
    fn placeable_set_is_monotone(mask in prop::collection::vec(any::<bool>(), 36), extra in 0usize..36) {
        let scene = scenes::wall();
        let graph = AssemblyGraph::from_scene(&scene);
        let ids: Vec<&str> = scene.object_ids().collect();
        let placed: BTreeSet<&str> = ids.iter().zip(&mask).filter(|(_, m)| **m).map(|(i, _)| *i).collect();
        let before = placeable_set(&graph, &placed);
        let mut more = placed.clone();
        more.insert(ids[extra]);
        let after = placeable_set(&graph, &more);
        for o in &before {
            if !more.contains(o.as_str()) {
                prop_assert!(after.contains(o));
            }
        }
        if let Ok(next) = next_object(&graph, &placed) {
            prop_assert!(before.contains(&next));
        }
    }

    #[test]
    fn priority_keys_never_decrease(busy in prop::collection::vec(0.0..20.0f64, 1..6), max_team in 1usize..4) {
        let map: BTreeMap<String, f64> = busy.iter().enumerate().map(|(i, b)| (format!("r{i}"), *b)).collect();
        let list = prioritize_by_busy_time(&map, max_team);
        for w in list.entries.windows(2) {
            prop_assert!(w[0].1 <= w[1].1);
        }
        for (team, key) in &list.entries {
            prop_assert!(team.len() <= max_team);
            let k = team.iter().map(|r| map[r]).fold(f64::NEG_INFINITY, f64::max);
            prop_assert_eq!(k, *key);
        }
    }

    #[test]
    fn rewind_restores_every_earlier_state(steps in 1usize..8, depth in 0usize..8) {
        let mut plan = PlanState::new();
        let mut history = vec![plan.clone()];
        for k in 0..steps {
            let mut work = plan.working_copy();
            work.placed.push(format!("o{k}"));
            work.commit("r0", &TimedPath::single(k as f64 + 1.0, Config::new(k as f64, 0.0, 0.0)));
            plan.adopt(work);
            history.push(plan.working_copy());
        }
        let res = plan.rewind(depth);
        if depth > steps {
            prop_assert!(res.is_err());
            prop_assert_eq!(plan.placed.len(), steps);
        } else {
            prop_assert!(res.is_ok());
            let want = &history[steps - depth];
            prop_assert_eq!(&plan.placed, &want.placed);
            prop_assert_eq!(&plan.committed, &want.committed);
            prop_assert_eq!(plan.snapshot_count(), steps - depth);
            prop_assert!(plan.committed.values().all(TimedPath::strictly_increasing));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sweep_never_passes_what_the_fine_oracle_rejects(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = fuzz_world(&mut rng);
        let robot = w.scene.robot("r0").unwrap().clone();
        for _ in 0..8 {
            let (a, b) = fuzz_segment(&mut rng);
            if sweep_collision_free(&w.plan, &w.scene, &robot, &a, &b, None, 0.05) {
                prop_assert!(oracle_segment_clear(&w, &robot, &a, &b, 1e-3), "{a:?} -> {b:?}");
            }
        }
    }

    #[test]
    fn verifier_flags_any_teleport(jump in 0.5..5.0f64, dir in angle()) {
        let scene = scenes::tower().with_robots(1).unwrap();
        let r = scene.robot("r00").unwrap();
        let q0 = r.home_config;
        let q1 = Config::new(q0.x + jump * dir.cos(), q0.y + jump * dir.sin(), q0.theta);
        let mut paths = BTreeMap::new();
        paths.insert("r00".to_owned(), TimedPath::new(vec![Knot::new(0.0, q0), Knot::new(0.1, q1)]));
        let report = verify_paths(&scene, &paths, &BTreeMap::new(), 0.005);
        let flagged = report.count(|f| matches!(f, Finding::SpeedViolation { .. }));
        prop_assert!(flagged > 0);
    }
}
