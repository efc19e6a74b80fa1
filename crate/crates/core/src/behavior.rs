use serde::{Deserialize, Serialize};

use crate::config::{CostWeights, LookaheadConfig};
use crate::cost::CenterMode;
use crate::geometry::{Lane, RoadModel};
use crate::lattice::lookahead_distance;
use crate::prediction::TrafficVehicle;

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default,
)]
#[serde(rename_all = "kebab-case")]
pub enum BehaviorState {
    #[default]
    PreMergeBeforeHardNose,
    PreMergeAfterHardNose,
    MergeInitiation,
    MergeContinuation,
    PostMergeLaneFollow,
}

impl BehaviorState {
    pub fn is_pre_merge(self) -> bool {
        self <= BehaviorState::PreMergeAfterHardNose
    }

    pub fn center_mode(self) -> CenterMode {
        match self {
            BehaviorState::MergeInitiation | BehaviorState::MergeContinuation => CenterMode::Merge,
            _ => CenterMode::LaneFollow,
        }
    }
}

/// Thresholds for declaring the merge complete.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PostMergeTolerance {
    pub lateral: f64,
    pub heading: f64,
}

impl Default for PostMergeTolerance {
    fn default() -> Self {
        Self {
            lateral: 0.3,
            heading: 0.05,
        }
    }
}

/// Next behavior from the rear-axle Frenet pose. States only move forward,
/// except that merge continuation falls back to initiation when the ego
/// re-enters the merge lane.
pub fn update_behavior(
    s: f64,
    l: f64,
    heading_error: f64,
    road: &RoadModel,
    current: BehaviorState,
    tol: PostMergeTolerance,
) -> BehaviorState {
    use BehaviorState::*;
    if current == PostMergeLaneFollow {
        return current;
    }
    let candidate = if l >= road.w_merge {
        if (l - road.main_center()).abs() <= tol.lateral && heading_error.abs() < tol.heading {
            PostMergeLaneFollow
        } else {
            MergeContinuation
        }
    } else if s < road.s_hard_nose {
        PreMergeBeforeHardNose
    } else if s < road.s_soft_nose {
        PreMergeAfterHardNose
    } else {
        MergeInitiation
    };
    if current == MergeContinuation && candidate == MergeInitiation {
        return candidate;
    }
    candidate.max(current)
}

pub fn goal_lateral(state: BehaviorState, road: &RoadModel) -> f64 {
    if state.is_pre_merge() {
        road.merge_center()
    } else {
        road.main_center()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleOfInterest {
    pub vehicle: TrafficVehicle,
    /// Bumper-to-bumper gap, zero for a vehicle alongside.
    pub gap: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct VehiclesOfInterest {
    pub lead_merge: Option<VehicleOfInterest>,
    pub lead_main: Option<VehicleOfInterest>,
    pub rear_main: Option<VehicleOfInterest>,
}

/// Longitudinal extent of the ego along the reference line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EgoExtent {
    pub s: f64,
    pub v: f64,
    pub front: f64,
    pub rear: f64,
}

/// Nearest vehicles around the ego. A vehicle alongside the ego counts as
/// a lead with zero gap, so the ego yields to it rather than racing it.
pub fn select_vehicles_of_interest(
    ego: &EgoExtent,
    traffic: &[TrafficVehicle],
    state: BehaviorState,
) -> VehiclesOfInterest {
    let ahead = |lane: Lane| {
        traffic
            .iter()
            .filter(|v| v.lane == lane && v.front() >= ego.rear)
            .map(|v| VehicleOfInterest {
                vehicle: *v,
                gap: (v.rear() - ego.front).max(0.0),
            })
            .min_by(|a, b| {
                a.gap
                    .total_cmp(&b.gap)
                    .then(a.vehicle.s.total_cmp(&b.vehicle.s))
            })
    };
    let behind = |lane: Lane| {
        traffic
            .iter()
            .filter(|v| v.lane == lane && v.front() < ego.rear)
            .map(|v| VehicleOfInterest {
                vehicle: *v,
                gap: ego.rear - v.front(),
            })
            .min_by(|a, b| a.gap.total_cmp(&b.gap))
    };
    let post = state == BehaviorState::PostMergeLaneFollow;
    VehiclesOfInterest {
        lead_merge: if post { None } else { ahead(Lane::Merge) },
        lead_main: ahead(Lane::Main),
        rear_main: if post { None } else { behind(Lane::Main) },
    }
}

/// Id of the stationary stand-in for the end of the merge lane.
pub const RAMP_END_ID: u32 = u32::MAX;

/// Treats the end of the merge lane as a stopped vehicle ahead of an ego
/// that has not yet moved into the main lane. It replaces the merge-lane
/// lead when it is closer.
pub fn with_ramp_end(
    voi: VehiclesOfInterest,
    ego: &EgoExtent,
    road: &RoadModel,
    state: BehaviorState,
) -> VehiclesOfInterest {
    if !matches!(
        state,
        BehaviorState::PreMergeBeforeHardNose
            | BehaviorState::PreMergeAfterHardNose
            | BehaviorState::MergeInitiation
    ) {
        return voi;
    }
    let gap = (road.s_ramp_end - ego.front).max(0.0);
    if voi.lead_merge.is_some_and(|o| o.gap <= gap) {
        return voi;
    }
    let end = TrafficVehicle {
        id: RAMP_END_ID,
        lane: Lane::Merge,
        s: road.s_ramp_end + 0.5,
        v: 0.0,
        length: 1.0,
        width: road.w_merge,
    };
    VehiclesOfInterest {
        lead_merge: Some(VehicleOfInterest { vehicle: end, gap }),
        ..voi
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Requirement {
    LeadMerge,
    LeadMain,
    RearMain,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SafetyEntry {
    pub requirement: Requirement,
    pub gap: f64,
    pub v_other: f64,
    pub predictive_distance: f64,
    /// Infinite when nothing is closing; written as `null`.
    #[serde(
        serialize_with = "crate::cost::ser_inf",
        deserialize_with = "crate::cost::de_inf"
    )]
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct SafetyAssessment {
    pub entries: Vec<SafetyEntry>,
    /// Index of the entry with the smallest safety factor.
    pub binding: Option<usize>,
}

/// Gap left after braking to the lead's speed.
pub fn lead_predictive_distance(v: f64, v_lead: f64, gap: f64, w: &CostWeights) -> f64 {
    if v > v_lead {
        gap - (v - v_lead).powi(2) / (2.0 * w.a_max_dec)
    } else {
        gap
    }
}

/// Gap left after accelerating to the rear vehicle's speed.
pub fn rear_predictive_distance(v: f64, v_rear: f64, gap: f64, w: &CostWeights) -> f64 {
    if v < v_rear {
        gap - (v_rear - v).powi(2) / (2.0 * w.a_max_acc)
    } else {
        gap
    }
}

/// Safety factors for every vehicle of interest within `range`.
pub fn predictive_distances(
    v: f64,
    voi: &VehiclesOfInterest,
    range: f64,
    w: &CostWeights,
) -> SafetyAssessment {
    let mut entries = Vec::new();
    let leads = [
        (Requirement::LeadMerge, voi.lead_merge),
        (Requirement::LeadMain, voi.lead_main),
    ];
    for (requirement, o) in leads {
        let Some(o) = o.filter(|o| o.gap <= range) else {
            continue;
        };
        let d = lead_predictive_distance(v, o.vehicle.v, o.gap, w);
        let alpha = if v > 0.0 { d / v } else { f64::INFINITY };
        entries.push(SafetyEntry {
            requirement,
            gap: o.gap,
            v_other: o.vehicle.v,
            predictive_distance: d,
            alpha,
        });
    }
    if let Some(o) = voi.rear_main.filter(|o| o.gap <= range) {
        let d = rear_predictive_distance(v, o.vehicle.v, o.gap, w);
        let alpha = if o.vehicle.v > 0.0 {
            d / o.vehicle.v
        } else {
            f64::INFINITY
        };
        entries.push(SafetyEntry {
            requirement: Requirement::RearMain,
            gap: o.gap,
            v_other: o.vehicle.v,
            predictive_distance: d,
            alpha,
        });
    }
    let binding = (0..entries.len()).min_by(|&a, &b| entries[a].alpha.total_cmp(&entries[b].alpha));
    SafetyAssessment { entries, binding }
}

/// Speed at which a lead requirement holds with equality.
pub fn lead_equality_speed(v_lead: f64, gap: f64, w: &CostWeights) -> f64 {
    let (a, t) = (w.a_max_dec, w.t_reaction);
    if gap <= t * v_lead {
        return gap.max(0.0) / t;
    }
    // (v - vL)² + 2 a t v - 2 a d = 0, largest root
    (v_lead - a * t) + (2.0 * a * (gap - t * v_lead) + a * a * t * t).sqrt()
}

/// Speed at which the rear requirement holds with equality, or the rear
/// vehicle's speed when no real root exists.
pub fn rear_equality_speed(v_rear: f64, gap: f64, w: &CostWeights) -> f64 {
    let disc = 2.0 * w.a_max_acc * (gap - w.t_reaction * v_rear);
    if disc < 0.0 {
        v_rear
    } else {
        v_rear + disc.sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesiredSpeed {
    pub v: f64,
    pub assessment: SafetyAssessment,
}

/// The equality speed of the requirement with the smallest safety factor,
/// or the speed limit when no vehicle of interest is in range.
pub fn desired_speed(
    v: f64,
    voi: &VehiclesOfInterest,
    speed_limit: f64,
    w: &CostWeights,
    lookahead: &LookaheadConfig,
) -> DesiredSpeed {
    let assessment = predictive_distances(v, voi, lookahead_distance(v, lookahead), w);
    let target = match assessment.binding.map(|i| assessment.entries[i]) {
        Some(e) => match e.requirement {
            Requirement::RearMain => rear_equality_speed(e.v_other, e.gap, w),
            _ => lead_equality_speed(e.v_other, e.gap, w),
        },
        None => speed_limit,
    };
    DesiredSpeed {
        v: target.clamp(0.0, speed_limit),
        assessment,
    }
}
