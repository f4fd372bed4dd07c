mod common;

use common::*;
use conplan::geometry::{Obb, Vec2};
use conplan::kinematics::{rollout, Control, ControlProfile, EgoState, Trajectory, VehicleLimits};
use conplan::labeling::{
    best_trajectory, detect_collision, detect_out_of_map, detect_stuck, label_candidates, similarity,
    stationary_time, ConstraintKind, ConstraintSet, Label, LabelRecord, STUCK_TIME,
};
use conplan::scene::{drivable_area, AgentKind, AgentTrack};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: usize = 30;

fn lim() -> VehicleLimits {
    VehicleLimits::default()
}

fn drive(s: EgoState, c: Control) -> Trajectory {
    rollout(&s, &ControlProfile::constant(H, c), DT, &lim())
}

fn shifted(t: &Trajectory, dy: f64) -> Trajectory {
    Trajectory::new(t.states.iter().map(|s| EgoState::new(s.x, s.y + dy, s.heading, s.speed)).collect())
}

#[test]
fn unit_lateral_shift_has_similarity_31() {
    let gt = drive(EgoState::new(0.0, 0.0, 0.0, 8.0), Control::new(0.0, 0.0));
    assert_eq!(similarity(&gt, &gt).unwrap(), 0.0);
    let c = shifted(&gt, 1.0);
    assert!((similarity(&c, &gt).unwrap() - 31.0).abs() < 1e-9);
    assert_eq!(similarity(&c, &gt).unwrap(), similarity(&gt, &c).unwrap());
}

#[test]
fn length_mismatch_is_a_dimension_error() {
    let a = drive(EgoState::new(0.0, 0.0, 0.0, 8.0), Control::new(0.0, 0.0));
    let b = Trajectory::new(a.states[..10].to_vec());
    assert!(matches!(similarity(&a, &b), Err(conplan::Error::Dimension { .. })));
}

#[test]
fn best_picks_the_exact_match_and_breaks_ties_low() {
    let gt = drive(EgoState::new(0.0, 0.0, 0.0, 8.0), Control::new(0.5, 0.1));
    let cands = vec![shifted(&gt, 2.0), shifted(&gt, 1.0), gt.clone(), shifted(&gt, -1.0)];
    assert_eq!(best_trajectory(&cands, &gt).unwrap(), 2);
    let tied = vec![shifted(&gt, 3.0), shifted(&gt, 1.0), shifted(&gt, -1.0)];
    assert_eq!(best_trajectory(&tied, &gt).unwrap(), 1);
    assert!(best_trajectory(&[], &gt).is_err());
}

proptest! {
    #[test]
    fn best_matches_brute_force(seed in 0u64..1000, n in 1usize..10) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut random = || {
            let s = EgoState::new(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0), rng.gen_range(-1.0..1.0), rng.gen_range(0.0..15.0));
            drive(s, Control::new(rng.gen_range(-4.0..4.0), rng.gen_range(-0.8..0.8)))
        };
        let gt = random();
        let cands: Vec<Trajectory> = (0..n).map(|_| random()).collect();
        let dist = |c: &Trajectory| -> f64 {
            c.states.iter().zip(&gt.states).map(|(a, b)| (a.x - b.x).powi(2) + (a.y - b.y).powi(2)).sum()
        };
        let mut oracle = 0;
        for i in 1..n {
            if dist(&cands[i]) < dist(&cands[oracle]) {
                oracle = i;
            }
        }
        prop_assert_eq!(best_trajectory(&cands, &gt).unwrap(), oracle);
    }

    #[test]
    fn similarity_is_symmetric_and_nonnegative(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = drive(EgoState::new(0.0, 0.0, 0.0, rng.gen_range(0.0..15.0)), Control::new(rng.gen_range(-4.0..4.0), 0.3));
        let b = drive(EgoState::new(1.0, 2.0, 0.5, rng.gen_range(0.0..15.0)), Control::new(0.0, rng.gen_range(-0.8..0.8)));
        let s = similarity(&a, &b).unwrap();
        prop_assert!(s >= 0.0);
        prop_assert_eq!(s, similarity(&b, &a).unwrap());
    }
}

#[test]
fn distant_agent_never_collides() {
    let far = track(7, &cruise(0.0, 50.0, 10.0, 200), 0);
    let sc = straight_scene(10.0, 20.0, vec![far]);
    let t = drive(EgoState::new(0.0, 0.0, 0.0, 10.0), Control::new(0.0, 0.0));
    assert_eq!(detect_collision(&t, &sc, 0), None);
}

#[test]
fn co_located_agent_is_detected_at_its_step() {
    let t0 = 20;
    let t = drive(EgoState::new(0.0, 0.0, 0.0, 10.0), Control::new(0.0, 0.0));
    // parked far to the side except at step 7 of the plan
    let states: Vec<EgoState> = (0..=100)
        .map(|tick| if tick == t0 + 7 { t.states[7] } else { EgoState::new(0.0, 60.0, 0.0, 0.0) })
        .collect();
    let sc = straight_scene(10.0, 10.0, vec![track(7, &states, 0)]);
    assert_eq!(detect_collision(&t, &sc, t0), Some(7));
    // one tick later the overlap shows up a step earlier; far earlier it never does
    assert_eq!(detect_collision(&t, &sc, t0 + 1), Some(6));
    assert_eq!(detect_collision(&t, &sc, t0 - 20), None);
}

#[test]
fn obb_overlap_agrees_with_point_sampling() {
    fn grid(b: &Obb) -> Vec<Vec2> {
        let [u, v] = b.axes();
        let n = 100;
        let mut pts = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                let s = -1.0 + 2.0 * i as f64 / (n - 1) as f64;
                let r = -1.0 + 2.0 * j as f64 / (n - 1) as f64;
                pts.push(b.center + u * (s * b.half_length) + v * (r * b.half_width));
            }
        }
        pts
    }
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut random = || {
        Obb::new(
            Vec2::new(rng.gen_range(-4.0..4.0), rng.gen_range(-4.0..4.0)),
            rng.gen_range(-3.2..3.2),
            rng.gen_range(1.0..6.0),
            rng.gen_range(0.5..3.0),
        )
    };
    let (mut checked, mut overlapping) = (0, 0);
    while checked < 1000 {
        let (a, b) = (random(), random());
        if a.separation(&b).abs() < 1e-3 {
            continue;
        }
        checked += 1;
        let sampled = grid(&a).iter().any(|&p| b.contains(p)) || grid(&b).iter().any(|&p| a.contains(p));
        assert_eq!(a.overlaps(&b), sampled, "{a:?} {b:?}");
        assert_eq!(a.overlaps(&b), b.overlaps(&a));
        overlapping += sampled as usize;
    }
    assert!(overlapping > 100 && overlapping < 900, "{overlapping}");
}

#[test]
fn lane_center_driving_stays_on_the_map() {
    let sc = straight_scene(10.0, 20.0, vec![]);
    let area = drivable_area(&sc).unwrap();
    let t = drive(EgoState::new(0.0, 0.0, 0.0, 10.0), Control::new(0.0, 0.0));
    assert_eq!(detect_out_of_map(&t, &area, &sc), None);
}

#[test]
fn turning_off_the_road_exits_at_the_computed_step() {
    let sc = straight_scene(10.0, 20.0, vec![]);
    let area = drivable_area(&sc).unwrap();
    let (v, w) = (10.0, 0.5);
    let t = drive(EgoState::new(0.0, 0.0, 0.0, v), Control::new(0.0, w));
    // closed-form circle of radius v / w; exit when a corner passes |y| = 5
    let r = v / w;
    let oracle = (0..=H).find(|&k| {
        let th = w * k as f64 * DT;
        let c = Vec2::new(r * th.sin(), r * (1.0 - th.cos()));
        let (u, n) = (Vec2::new(th.cos(), th.sin()), Vec2::new(-th.sin(), th.cos()));
        [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)]
            .iter()
            .any(|(a, b)| (c + u * (a * 2.25) + n * (b * 0.9)).y.abs() > 5.0)
    });
    assert!(oracle.is_some());
    assert_eq!(detect_out_of_map(&t, &area, &sc), oracle);
}

#[test]
fn corner_on_the_boundary_counts_as_inside() {
    let mut sc = straight_scene(10.0, 20.0, vec![]);
    let ego = cruise(0.0, 4.0, 0.0, 200);
    sc.ego_track = AgentTrack::from_states(EGO_ID, AgentKind::Vehicle, (4.0, 2.0), 0, DT, &ego);
    let area = drivable_area(&sc).unwrap();
    let t = drive(EgoState::new(0.0, 4.0, 0.0, 0.0), Control::new(0.0, 0.0));
    assert_eq!(detect_out_of_map(&t, &area, &sc), None);
    assert_eq!(detect_out_of_map(&shifted(&t, 1e-6), &area, &sc), Some(0));
}

fn stuck_candidates() -> Vec<Trajectory> {
    let s = EgoState::new(0.0, 0.0, 0.0, 0.0);
    vec![drive(s, Control::new(0.0, 0.0)), drive(s, Control::new(2.0, 0.0)), drive(s, Control::new(-4.0, 0.3))]
}

#[test]
fn stopped_long_with_a_safe_mover_labels_stationary_plans() {
    let c = stuck_candidates();
    assert_eq!(detect_stuck(&c, 6.0, STUCK_TIME, &[true, true, true]), vec![0, 2]);
    assert!(detect_stuck(&c, 3.0, STUCK_TIME, &[true, true, true]).is_empty());
    assert!(detect_stuck(&c, STUCK_TIME, STUCK_TIME, &[true, true, true]).is_empty());
    // the only mover is unsafe
    assert!(detect_stuck(&c, 6.0, STUCK_TIME, &[true, false, true]).is_empty());
}

#[test]
fn blocked_ego_gets_no_stuck_labels() {
    // parked car right in front: every moving plan hits it
    let blocker = track(7, &cruise(5.0, 0.0, 0.0, 300), 0);
    let mut sc = straight_scene(0.0, 20.0, vec![blocker]);
    sc.goal = Vec2::new(100.0, 0.0);
    let area = drivable_area(&sc).unwrap();
    let c = stuck_candidates();
    let gt = c[0].clone();
    let labels = label_candidates(&c, &gt, &sc, &area, 60, 6.0, ConstraintSet::ALL).unwrap().unwrap();
    assert_eq!(labels.labels[1], Label::Violating(ConstraintKind::Collision));
    assert!(!labels.labels.contains(&Label::Violating(ConstraintKind::Stuck)));
    assert_eq!(labels.best_index, 0);
}

#[test]
fn stationary_time_counts_trailing_stopped_states() {
    let mut hist = cruise(0.0, 0.0, 5.0, 10);
    hist.extend(cruise(5.0, 0.0, 0.0, 59));
    assert!((stationary_time(&hist, DT) - 6.0).abs() < 1e-12);
    assert_eq!(stationary_time(&cruise(0.0, 0.0, 5.0, 10), DT), 0.0);
}

#[test]
fn labels_on_an_open_road() {
    let sc = straight_scene(10.0, 20.0, vec![]);
    let area = drivable_area(&sc).unwrap();
    let s = EgoState::new(0.0, 0.0, 0.0, 10.0);
    let c = vec![drive(s, Control::new(0.0, 0.8)), drive(s, Control::new(0.0, 0.0)), drive(s, Control::new(1.0, 0.0))];
    let gt = drive(s, Control::new(0.3, 0.0));
    let l = label_candidates(&c, &gt, &sc, &area, 0, 0.0, ConstraintSet::ALL).unwrap().unwrap();
    assert_eq!(l.labels, vec![Label::Violating(ConstraintKind::OutOfMap), Label::Best, Label::Unlabeled]);
    assert_eq!(l.best_index, 1);
    let none = label_candidates(&c, &gt, &sc, &area, 0, 0.0, ConstraintSet::NONE).unwrap().unwrap();
    assert_eq!(none.num_violating(), 0);
    assert_eq!(none.best_index, best_trajectory(&c, &gt).unwrap());
    // every candidate off the map: the tick is skipped
    let off = vec![c[0].clone(), drive(s, Control::new(0.0, -0.8))];
    assert_eq!(label_candidates(&off, &gt, &sc, &area, 0, 0.0, ConstraintSet::ALL).unwrap(), None);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn enabling_constraints_never_shrinks_the_violating_set(seed in 0u64..1000, mask in 0u8..8, extra in 0u8..3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let agents = (0..3)
            .map(|i| track(10 + i, &cruise(rng.gen_range(5.0..60.0), rng.gen_range(-3.0..3.0), rng.gen_range(0.0..8.0), 300), 0))
            .collect();
        let sc = straight_scene(5.0, 20.0, agents);
        let area = drivable_area(&sc).unwrap();
        let s = EgoState::new(0.0, 0.0, 0.0, rng.gen_range(0.0..12.0));
        let c: Vec<Trajectory> = (0..8)
            .map(|_| drive(s, Control::new(rng.gen_range(-4.0..4.0), rng.gen_range(-0.8..0.8))))
            .collect();
        let gt = c[0].clone();
        let small = ConstraintSet { collision: mask & 1 != 0, out_of_map: mask & 2 != 0, stuck: mask & 4 != 0 };
        let mut big = small;
        big.insert(conplan::labeling::ConstraintKind::ALL[extra as usize]);
        let st = rng.gen_range(0.0..8.0);
        let count = |set| {
            label_candidates(&c, &gt, &sc, &area, 0, st, set)
                .unwrap()
                .map_or(c.len(), |l| l.num_violating())
        };
        prop_assert!(count(big) >= count(small));
    }
}

#[test]
fn constraint_sets_parse_and_print() {
    let s: ConstraintSet = "out_of_map, collision".parse().unwrap();
    assert_eq!(s.to_string(), "collision,out_of_map");
    assert_eq!("none".parse::<ConstraintSet>().unwrap(), ConstraintSet::NONE);
    assert!("speeding".parse::<ConstraintSet>().is_err());
}

#[test]
fn label_records_round_trip_as_json() {
    let r = LabelRecord {
        scenario: "s".into(),
        tick: 12,
        labels: Some(vec![Label::Violating(ConstraintKind::Stuck), Label::Best, Label::Unlabeled]),
        best_index: Some(1),
    };
    let text = serde_json::to_string(&r).unwrap();
    assert_eq!(serde_json::from_str::<LabelRecord>(&text).unwrap(), r);
    let skipped = LabelRecord { labels: None, best_index: None, ..r };
    assert_eq!(serde_json::from_str::<LabelRecord>(&serde_json::to_string(&skipped).unwrap()).unwrap(), skipped);
}
