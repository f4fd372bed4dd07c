//! Automatic constraint labels for candidate trajectories: collision,
//! out-of-map and stuck detection, plus selection of the candidate closest
//! to the expert.

use crate::error::{Error, Result};
use crate::geometry::Obb;
use crate::kinematics::{EgoState, Trajectory};
use crate::scene::{DrivableArea, Scenario};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// Stationary time after which a stationary plan may be labeled stuck (s).
pub const STUCK_TIME: f64 = 5.0;
/// Total displacement below which a candidate counts as stationary (m).
pub const STUCK_DISPLACEMENT: f64 = 0.5;
/// Speed below which the ego counts as stopped (m/s).
pub const STOPPED_SPEED: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintKind {
    Collision,
    OutOfMap,
    Stuck,
}

impl ConstraintKind {
    pub const ALL: [ConstraintKind; 3] = [ConstraintKind::Collision, ConstraintKind::OutOfMap, ConstraintKind::Stuck];

    pub fn name(self) -> &'static str {
        match self {
            ConstraintKind::Collision => "collision",
            ConstraintKind::OutOfMap => "out_of_map",
            ConstraintKind::Stuck => "stuck",
        }
    }
}

/// Enabled constraint kinds.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct ConstraintSet {
    pub collision: bool,
    pub out_of_map: bool,
    pub stuck: bool,
}

impl ConstraintSet {
    pub const NONE: ConstraintSet = ConstraintSet {
        collision: false,
        out_of_map: false,
        stuck: false,
    };
    pub const ALL: ConstraintSet = ConstraintSet {
        collision: true,
        out_of_map: true,
        stuck: true,
    };

    pub fn contains(&self, k: ConstraintKind) -> bool {
        match k {
            ConstraintKind::Collision => self.collision,
            ConstraintKind::OutOfMap => self.out_of_map,
            ConstraintKind::Stuck => self.stuck,
        }
    }

    pub fn insert(&mut self, k: ConstraintKind) {
        match k {
            ConstraintKind::Collision => self.collision = true,
            ConstraintKind::OutOfMap => self.out_of_map = true,
            ConstraintKind::Stuck => self.stuck = true,
        }
    }

    pub fn is_empty(&self) -> bool {
        *self == ConstraintSet::NONE
    }

    pub fn kinds(&self) -> impl Iterator<Item = ConstraintKind> + '_ {
        ConstraintKind::ALL.into_iter().filter(|k| self.contains(*k))
    }
}

impl fmt::Display for ConstraintSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_empty() {
            return f.write_str("none");
        }
        let names: Vec<&str> = self.kinds().map(ConstraintKind::name).collect();
        f.write_str(&names.join(","))
    }
}

impl FromStr for ConstraintSet {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let mut set = ConstraintSet::NONE;
        if s == "none" {
            return Ok(set);
        }
        for part in s.split(',') {
            let k = match part.trim() {
                "collision" => ConstraintKind::Collision,
                "out_of_map" => ConstraintKind::OutOfMap,
                "stuck" => ConstraintKind::Stuck,
                other => {
                    return Err(Error::Config(format!(
                        "unknown constraint `{other}`; valid names: none, collision, out_of_map, stuck"
                    )))
                }
            };
            set.insert(k);
        }
        Ok(set)
    }
}

impl Serialize for ConstraintSet {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ConstraintSet {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "label", content = "kind")]
pub enum Label {
    Violating(ConstraintKind),
    Best,
    Unlabeled,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstraintLabelSet {
    pub labels: Vec<Label>,
    pub best_index: usize,
}

impl ConstraintLabelSet {
    pub fn violating(&self) -> impl Iterator<Item = usize> + '_ {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, l)| matches!(l, Label::Violating(_)))
            .map(|(i, _)| i)
    }

    pub fn num_violating(&self) -> usize {
        self.violating().count()
    }
}

/// Sum of squared distances between corresponding positions.
pub fn similarity(a: &Trajectory, b: &Trajectory) -> Result<f64> {
    if a.states.len() != b.states.len() {
        return Err(Error::Dimension {
            context: "trajectory similarity",
            expected: a.states.len(),
            got: b.states.len(),
        });
    }
    Ok(a.states
        .iter()
        .zip(&b.states)
        .map(|(p, q)| (p.position() - q.position()).norm_sq())
        .sum())
}

/// Index of the candidate closest to `gt`; ties go to the lowest index.
pub fn best_trajectory(candidates: &[Trajectory], gt: &Trajectory) -> Result<usize> {
    best_among(candidates, gt, |_| true)?.ok_or(Error::Empty("candidate set"))
}

fn best_among(
    candidates: &[Trajectory],
    gt: &Trajectory,
    allowed: impl Fn(usize) -> bool,
) -> Result<Option<usize>> {
    let mut best: Option<(usize, f64)> = None;
    for (i, c) in candidates.iter().enumerate() {
        if !allowed(i) {
            continue;
        }
        let s = similarity(c, gt)?;
        if best.map_or(true, |(_, b)| s < b) {
            best = Some((i, s));
        }
    }
    Ok(best.map(|(i, _)| i))
}

pub fn ego_footprint(scenario: &Scenario, s: &EgoState) -> Obb {
    scenario.ego_track.footprint_at(s)
}

/// First step whose ego box overlaps an agent box at the same absolute tick.
/// Step `k` of `traj` happens at tick `t0 + k`.
pub fn detect_collision(traj: &Trajectory, scenario: &Scenario, t0: usize) -> Option<usize> {
    traj.states.iter().enumerate().find_map(|(k, s)| {
        let ego = ego_footprint(scenario, s);
        scenario
            .agents
            .iter()
            .filter_map(|a| a.obb_at_tick(t0 + k, scenario.dt))
            .any(|b| ego.overlaps(&b))
            .then_some(k)
    })
}

/// First step where a corner of the ego footprint leaves the drivable area.
pub fn detect_out_of_map(traj: &Trajectory, area: &DrivableArea, scenario: &Scenario) -> Option<usize> {
    traj.states.iter().position(|s| {
        ego_footprint(scenario, s)
            .corners()
            .iter()
            .any(|&c| !area.contains(c))
    })
}

pub fn is_stationary(traj: &Trajectory) -> bool {
    traj.displacement() < STUCK_DISPLACEMENT
}

/// Stationary candidates to label stuck: only once the ego has been stopped
/// longer than `threshold` and some non-stationary candidate is safe.
pub fn detect_stuck(candidates: &[Trajectory], stationary_time: f64, threshold: f64, safe: &[bool]) -> Vec<usize> {
    if stationary_time <= threshold {
        return Vec::new();
    }
    let stationary: Vec<bool> = candidates.iter().map(is_stationary).collect();
    let alternative = stationary.iter().zip(safe).any(|(&st, &ok)| !st && ok);
    if !alternative {
        return Vec::new();
    }
    (0..candidates.len()).filter(|&i| stationary[i]).collect()
}

/// Time the ego has been continuously stopped at the end of `history`.
pub fn stationary_time(history: &[EgoState], dt: f64) -> f64 {
    history.iter().rev().take_while(|s| s.speed < STOPPED_SPEED).count() as f64 * dt
}

/// Per-candidate outcomes of every detector, regardless of which are enabled.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdicts {
    pub collision: Vec<Option<usize>>,
    pub out_of_map: Vec<Option<usize>>,
    pub stuck: Vec<bool>,
}

impl Verdicts {
    pub fn compute(
        candidates: &[Trajectory],
        scenario: &Scenario,
        area: &DrivableArea,
        t0: usize,
        stationary_time: f64,
    ) -> Self {
        let collision: Vec<Option<usize>> = candidates.iter().map(|c| detect_collision(c, scenario, t0)).collect();
        let out_of_map: Vec<Option<usize>> = candidates
            .iter()
            .map(|c| detect_out_of_map(c, area, scenario))
            .collect();
        let safe: Vec<bool> = collision
            .iter()
            .zip(&out_of_map)
            .map(|(c, o)| c.is_none() && o.is_none())
            .collect();
        let mut stuck = vec![false; candidates.len()];
        for i in detect_stuck(candidates, stationary_time, STUCK_TIME, &safe) {
            stuck[i] = true;
        }
        Verdicts {
            collision,
            out_of_map,
            stuck,
        }
    }

    pub fn num_colliding(&self) -> usize {
        self.collision.iter().filter(|c| c.is_some()).count()
    }

    /// First enabled violation of candidate `i`, in precedence order.
    pub fn violation(&self, i: usize, enabled: ConstraintSet) -> Option<ConstraintKind> {
        if enabled.collision && self.collision[i].is_some() {
            Some(ConstraintKind::Collision)
        } else if enabled.out_of_map && self.out_of_map[i].is_some() {
            Some(ConstraintKind::OutOfMap)
        } else if enabled.stuck && self.stuck[i] {
            Some(ConstraintKind::Stuck)
        } else {
            None
        }
    }
}

/// Builds the label set from precomputed verdicts. Returns `None` when every
/// candidate violates an enabled constraint (the tick is skipped).
pub fn labels_from_verdicts(
    candidates: &[Trajectory],
    gt: &Trajectory,
    verdicts: &Verdicts,
    enabled: ConstraintSet,
) -> Result<Option<ConstraintLabelSet>> {
    let violation: Vec<Option<ConstraintKind>> =
        (0..candidates.len()).map(|i| verdicts.violation(i, enabled)).collect();
    let Some(best) = best_among(candidates, gt, |i| violation[i].is_none())? else {
        if candidates.is_empty() {
            return Err(Error::Empty("candidate set"));
        }
        log::debug!("every candidate violates a constraint; labeling skipped");
        return Ok(None);
    };
    let labels = violation
        .iter()
        .enumerate()
        .map(|(i, v)| match v {
            Some(k) => Label::Violating(*k),
            None if i == best => Label::Best,
            None => Label::Unlabeled,
        })
        .collect();
    Ok(Some(ConstraintLabelSet {
        labels,
        best_index: best,
    }))
}

pub fn label_candidates(
    candidates: &[Trajectory],
    gt: &Trajectory,
    scenario: &Scenario,
    area: &DrivableArea,
    t0: usize,
    stationary_time: f64,
    enabled: ConstraintSet,
) -> Result<Option<ConstraintLabelSet>> {
    let verdicts = Verdicts::compute(candidates, scenario, area, t0, stationary_time);
    labels_from_verdicts(candidates, gt, &verdicts, enabled)
}

/// One line of the label dump.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub scenario: String,
    pub tick: usize,
    /// `None` when labeling was skipped for this tick.
    pub labels: Option<Vec<Label>>,
    pub best_index: Option<usize>,
}
