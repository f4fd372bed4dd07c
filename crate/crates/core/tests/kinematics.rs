use conplan::kinematics::{
    normalize_angle, rollout, smooth_controls, Control, ControlProfile, EgoState, VehicleLimits,
};
use proptest::prelude::*;
use std::f64::consts::PI;

const DT: f64 = 0.1;

fn lim() -> VehicleLimits {
    VehicleLimits::default()
}

#[test]
fn stationary_start_with_zero_controls_never_moves() {
    let s = EgoState::new(3.0, -2.0, 0.7, 0.0);
    let t = rollout(&s, &ControlProfile::zeros(30), DT, &lim());
    assert_eq!(t.states.len(), 31);
    assert!(t.states.iter().all(|x| *x == s));
}

#[test]
fn straight_line_ten_steps_is_exact() {
    let t = rollout(&EgoState::new(0.0, 0.0, 0.0, 10.0), &ControlProfile::zeros(10), DT, &lim());
    let end = t.end();
    assert!((end.x - 10.0).abs() < 1e-12, "x = {}", end.x);
    assert_eq!(end.y, 0.0);
}

#[test]
fn circle_of_radius_ten_closes_after_one_period() {
    // 5 m/s at 0.5 rad/s: radius 10 m, period 4π s
    let steps = (4.0 * PI / DT).round() as usize;
    let period_steps = 4.0 * PI / DT;
    let start = EgoState::new(1.0, 2.0, 0.3, 5.0);
    let t = rollout(&start, &ControlProfile::constant(steps, Control::new(0.0, 0.5)), DT, &lim());
    // exact-arc integration: any residual comes only from rounding the step count
    let residual_arc = (steps as f64 - period_steps).abs() * DT * 5.0;
    let d = t.end().position().distance(start.position());
    assert!(d <= residual_arc + 1e-6, "distance {d}");
    // a dt that divides the period exactly closes to 1e-6
    let n = 1000;
    let dt = 4.0 * PI / n as f64;
    let t = rollout(&start, &ControlProfile::constant(n, Control::new(0.0, 0.5)), dt, &lim());
    assert!(t.end().position().distance(start.position()) < 1e-6);
    for s in &t.states {
        let center = start.position() + conplan::geometry::Vec2::from_angle(start.heading).perp() * 10.0;
        assert!((s.position().distance(center) - 10.0).abs() < 1e-9);
    }
}

#[test]
fn constant_acceleration_matches_closed_form() {
    let a = 1.5;
    let t = rollout(&EgoState::new(0.0, 0.0, 0.0, 2.0), &ControlProfile::constant(20, Control::new(a, 0.0)), DT, &lim());
    for (k, s) in t.states.iter().enumerate() {
        let time = k as f64 * DT;
        assert!((s.speed - (2.0 + a * time)).abs() < 1e-12);
        assert!((s.x - (2.0 * time + 0.5 * a * time * time)).abs() < 1e-9);
    }
}

#[test]
fn smoothing_window_one_is_identity() {
    let p = ControlProfile::new((0..7).map(|i| Control::new(0.3 * i as f64 - 1.0, 0.1)).collect());
    assert_eq!(smooth_controls(&p, 1, &lim()), p);
}

#[test]
fn smoothing_keeps_constant_profile() {
    let p = ControlProfile::constant(12, Control::new(1.25, -0.4));
    let s = smooth_controls(&p, 5, &lim());
    for c in s.steps() {
        assert!((c.accel - 1.25).abs() < 1e-15 && (c.turn_rate + 0.4).abs() < 1e-15);
    }
}

#[test]
fn impulse_spreads_over_three_steps() {
    let mut steps = vec![Control::new(0.0, 0.0); 7];
    steps[3] = Control::new(3.0, 0.6);
    let s = smooth_controls(&ControlProfile::new(steps), 3, &lim());
    let accel: Vec<f64> = s.steps().iter().map(|c| c.accel).collect();
    let expected = [0.0, 0.0, 1.0, 1.0, 1.0, 0.0, 0.0];
    for (a, e) in accel.iter().zip(expected) {
        assert!((a - e).abs() < 1e-12, "{accel:?}");
    }
    assert!((s.steps()[2].turn_rate - 0.2).abs() < 1e-12);
}

#[test]
fn smoothing_reclamps_bounds() {
    let l = lim();
    let p = ControlProfile::constant(5, Control::new(10.0, 3.0));
    for c in smooth_controls(&p, 3, &l).steps() {
        assert!(c.within(&l));
    }
}

fn control() -> impl Strategy<Value = Control> {
    let l = VehicleLimits::default();
    (-l.a_max..=l.a_max, -l.omega_max..=l.omega_max).prop_map(|(a, w)| Control::new(a, w))
}

fn state() -> impl Strategy<Value = EgoState> {
    (-100.0..100.0f64, -100.0..100.0f64, -PI..PI, 0.0..=20.0f64)
        .prop_map(|(x, y, h, v)| EgoState::new(x, y, h, v))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn rollouts_respect_speed_bounds_and_step_length(
        s in state(),
        cs in prop::collection::vec(control(), 1..40),
    ) {
        let l = lim();
        let t = rollout(&s, &ControlProfile::new(cs), DT, &l);
        for w in t.states.windows(2) {
            prop_assert!(w[1].speed >= 0.0 && w[1].speed <= l.v_max);
            let d = w[0].position().distance(w[1].position());
            prop_assert!(d <= (w[0].speed + l.a_max * DT) * DT + 1e-9);
            prop_assert!(w[1].heading > -PI && w[1].heading <= PI);
        }
    }
}

proptest! {
    #[test]
    fn rollout_composes_over_a_split(
        s in state(),
        cs in prop::collection::vec(control(), 2..40),
        k in 0usize..40,
    ) {
        let l = lim();
        let p = ControlProfile::new(cs);
        let k = k % p.len();
        let whole = rollout(&s, &p, DT, &l);
        let (a, b) = p.split_at(k);
        let first = rollout(&s, &a, DT, &l);
        let second = rollout(first.end(), &b, DT, &l);
        prop_assert_eq!(whole.end(), second.end());
    }

    #[test]
    fn rollout_is_deterministic(s in state(), cs in prop::collection::vec(control(), 1..30)) {
        let p = ControlProfile::new(cs);
        prop_assert_eq!(rollout(&s, &p, DT, &lim()), rollout(&s, &p, DT, &lim()));
    }

    #[test]
    fn normalized_angles_stay_in_half_open_range(a in -1e4..1e4f64) {
        let n = normalize_angle(a);
        prop_assert!(n > -PI && n <= PI);
        let k = (a - n) / (2.0 * PI);
        prop_assert!((k - k.round()).abs() < 1e-9);
    }
}
