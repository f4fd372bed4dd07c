//! Kinematic bicycle model parameterized by acceleration and turn rate, with
//! exact per-step arc integration and a moving-average control smoother.

use crate::geometry::Vec2;
use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, TAU};

/// Simulation step used by every generated scenario.
pub const DEFAULT_DT: f64 = 0.1;

const STRAIGHT_TURN_RATE: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleLimits {
    /// m/s², symmetric for acceleration and braking.
    pub a_max: f64,
    /// rad/s
    pub omega_max: f64,
    /// m/s
    pub v_max: f64,
}

impl Default for VehicleLimits {
    fn default() -> Self {
        VehicleLimits {
            a_max: 4.0,
            omega_max: 0.8,
            v_max: 20.0,
        }
    }
}

/// Wraps an angle into (−π, π].
pub fn normalize_angle(a: f64) -> f64 {
    let x = (a + PI).rem_euclid(TAU) - PI;
    if x <= -PI {
        x + TAU
    } else {
        x
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EgoState {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub speed: f64,
}

impl EgoState {
    pub fn new(x: f64, y: f64, heading: f64, speed: f64) -> Self {
        EgoState {
            x,
            y,
            heading: normalize_angle(heading),
            speed: speed.max(0.0),
        }
    }

    pub fn position(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Control {
    pub accel: f64,
    pub turn_rate: f64,
}

impl Control {
    pub fn new(accel: f64, turn_rate: f64) -> Self {
        Control { accel, turn_rate }
    }

    pub fn clamped(self, limits: &VehicleLimits) -> Control {
        Control {
            accel: self.accel.clamp(-limits.a_max, limits.a_max),
            turn_rate: self.turn_rate.clamp(-limits.omega_max, limits.omega_max),
        }
    }

    pub fn within(&self, limits: &VehicleLimits) -> bool {
        self.accel.abs() <= limits.a_max && self.turn_rate.abs() <= limits.omega_max
    }
}

/// Per-step controls over a fixed horizon.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ControlProfile {
    steps: Vec<Control>,
}

impl ControlProfile {
    pub fn new(steps: Vec<Control>) -> Self {
        ControlProfile { steps }
    }

    pub fn zeros(horizon: usize) -> Self {
        ControlProfile {
            steps: vec![Control::default(); horizon],
        }
    }

    pub fn constant(horizon: usize, c: Control) -> Self {
        ControlProfile {
            steps: vec![c; horizon],
        }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn steps(&self) -> &[Control] {
        &self.steps
    }

    pub fn clamped(&self, limits: &VehicleLimits) -> ControlProfile {
        ControlProfile {
            steps: self.steps.iter().map(|c| c.clamped(limits)).collect(),
        }
    }

    pub fn within(&self, limits: &VehicleLimits) -> bool {
        self.steps.iter().all(|c| c.within(limits))
    }

    pub fn split_at(&self, k: usize) -> (ControlProfile, ControlProfile) {
        let (a, b) = self.steps.split_at(k);
        (ControlProfile::new(a.to_vec()), ControlProfile::new(b.to_vec()))
    }
}

/// Ego states at uniform spacing; index 0 is the current state.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Trajectory {
    pub states: Vec<EgoState>,
}

impl Trajectory {
    pub fn new(states: Vec<EgoState>) -> Self {
        Trajectory { states }
    }

    /// Number of steps (states − 1).
    pub fn horizon(&self) -> usize {
        self.states.len().saturating_sub(1)
    }

    pub fn start(&self) -> &EgoState {
        &self.states[0]
    }

    pub fn end(&self) -> &EgoState {
        &self.states[self.states.len() - 1]
    }

    /// Straight-line distance between the first and last positions.
    pub fn displacement(&self) -> f64 {
        self.start().position().distance(self.end().position())
    }

    pub fn path_length(&self) -> f64 {
        self.states
            .windows(2)
            .map(|w| w[0].position().distance(w[1].position()))
            .sum()
    }
}

/// Distance covered and end speed for one step of linear speed change,
/// accounting for the clamp at 0 and `v_max` part-way through the step.
fn longitudinal(v0: f64, accel: f64, dt: f64, v_max: f64) -> (f64, f64) {
    let v_lin = v0 + accel * dt;
    if v_lin < 0.0 {
        let t_stop = v0 / -accel;
        (0.5 * v0 * t_stop, 0.0)
    } else if v_lin > v_max {
        let t_sat = ((v_max - v0) / accel).max(0.0);
        (
            v0 * t_sat + 0.5 * accel * t_sat * t_sat + v_max * (dt - t_sat),
            v_max,
        )
    } else {
        (v0 * dt + 0.5 * accel * dt * dt, v_lin)
    }
}

/// Advances one step: speed changes linearly, heading by `turn_rate·dt`, and
/// the position moves along the circular arc joining the two headings.
pub fn step(state: &EgoState, control: Control, dt: f64, limits: &VehicleLimits) -> EgoState {
    let v0 = state.speed.min(limits.v_max);
    let (dist, v1) = longitudinal(v0, control.accel, dt, limits.v_max);
    let h0 = state.heading;
    let dh = control.turn_rate * dt;
    let (dx, dy) = if control.turn_rate.abs() < STRAIGHT_TURN_RATE {
        let (s, c) = h0.sin_cos();
        (dist * c, dist * s)
    } else {
        let r = dist / dh;
        let (s0, c0) = h0.sin_cos();
        let (s1, c1) = (h0 + dh).sin_cos();
        (r * (s1 - s0), r * (c0 - c1))
    };
    EgoState {
        x: state.x + dx,
        y: state.y + dy,
        heading: normalize_angle(h0 + dh),
        speed: v1,
    }
}

/// Integrates `controls` from `start`. The result has `controls.len() + 1`
/// states.
pub fn rollout(
    start: &EgoState,
    controls: &ControlProfile,
    dt: f64,
    limits: &VehicleLimits,
) -> Trajectory {
    let mut states = Vec::with_capacity(controls.len() + 1);
    let mut s = *start;
    states.push(s);
    for &c in controls.steps() {
        s = step(&s, c, dt, limits);
        states.push(s);
    }
    Trajectory { states }
}

/// Centered moving average per channel with edge replication; the result is
/// re-clamped to the vehicle bounds. `window` must be odd.
pub fn smooth_controls(
    raw: &ControlProfile,
    window: usize,
    limits: &VehicleLimits,
) -> ControlProfile {
    assert!(window % 2 == 1, "smoothing window must be odd");
    let n = raw.len();
    if window <= 1 || n == 0 {
        return raw.clamped(limits);
    }
    let half = (window / 2) as isize;
    let last = n as isize - 1;
    let steps = (0..n as isize)
        .map(|i| {
            let (mut a, mut w) = (0.0, 0.0);
            for j in (i - half)..=(i + half) {
                let c = raw.steps[j.clamp(0, last) as usize];
                a += c.accel;
                w += c.turn_rate;
            }
            let k = window as f64;
            Control::new(a / k, w / k).clamped(limits)
        })
        .collect();
    ControlProfile { steps }
}
