use serde::{Deserialize, Serialize};

use crate::geometry::{Lane, RoadModel};
use crate::obb::OrientedBox;

/// A traffic participant. `s` is the reference arc length of the vehicle's
/// center; vehicles drive on their lane centerline and never change lanes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrafficVehicle {
    pub id: u32,
    pub lane: Lane,
    pub s: f64,
    pub v: f64,
    pub length: f64,
    pub width: f64,
}

impl TrafficVehicle {
    pub fn lane_offset(&self, road: &RoadModel) -> f64 {
        match self.lane {
            Lane::Merge => road.merge_center(),
            _ => road.main_center(),
        }
    }

    pub fn s_at(&self, t: f64) -> f64 {
        self.s + self.v * t
    }

    pub fn front(&self) -> f64 {
        self.s + 0.5 * self.length
    }

    pub fn rear(&self) -> f64 {
        self.s - 0.5 * self.length
    }

    pub fn footprint_at(&self, road: &RoadModel, s: f64, inflation: f64) -> Option<OrientedBox> {
        let st = road
            .state_at(s.clamp(0.0, road.length()), self.lane_offset(road))
            .ok()?;
        Some(OrientedBox::new(
            st.x,
            st.y,
            st.theta,
            self.length + 2.0 * inflation,
            self.width + 2.0 * inflation,
        ))
    }
}

/// Constant-speed rollout, (t, s, v) at every `dt` up to `horizon`.
pub fn predict_constant_velocity(
    vehicle: &TrafficVehicle,
    horizon: f64,
    dt: f64,
) -> Vec<(f64, f64, f64)> {
    let n = (horizon / dt + 1e-9).floor() as usize;
    (0..=n)
        .map(|i| {
            let t = i as f64 * dt;
            (t, vehicle.s_at(t), vehicle.v)
        })
        .collect()
}

/// One ego pose on a candidate, with its arrival time and reference position.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EgoPose {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct CollisionGeometry {
    pub exists: bool,
    pub s_ego: f64,
    pub s_obs: f64,
    pub t_ego: f64,
    pub t_obs: f64,
    pub d_ego: f64,
    pub d_obs: f64,
}

/// Dimensions used by the footprint sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Footprints {
    pub ego_length: f64,
    pub ego_width: f64,
    pub ego_rear_overhang: f64,
    pub inflation: f64,
    pub lane_step: f64,
}

/// Range of obstacle center positions whose footprint overlaps `ego_box`,
/// sampling the obstacle's lane every `step` metres around `s_center`.
pub fn overlapping_positions(
    road: &RoadModel,
    obstacle: &TrafficVehicle,
    ego_box: &OrientedBox,
    s_center: f64,
    fp: &Footprints,
) -> Option<(f64, f64)> {
    let reach = 0.5 * (fp.ego_length + obstacle.length) + 2.0 * fp.inflation + fp.lane_step;
    let n = (2.0 * reach / fp.lane_step).ceil() as usize;
    let mut first = None;
    let mut last = None;
    for i in 0..=n {
        let s = s_center - reach + i as f64 * fp.lane_step;
        if s < 0.0 || s > road.length() {
            continue;
        }
        let Some(ob) = obstacle.footprint_at(road, s, fp.inflation) else {
            continue;
        };
        if ob.overlaps(ego_box) {
            first.get_or_insert(s);
            last = Some(s);
        }
    }
    first.zip(last)
}

/// Spatial conflict between an ego candidate and a lane-bound obstacle,
/// with each vehicle's arrival time at its own conflict position.
pub fn find_collision_positions(
    road: &RoadModel,
    ego: &[EgoPose],
    ego_s0: f64,
    obstacle: &TrafficVehicle,
    fp: &Footprints,
) -> CollisionGeometry {
    for p in ego {
        let b = OrientedBox::from_rear_axle(
            p.x,
            p.y,
            p.theta,
            fp.ego_length,
            fp.ego_width,
            fp.ego_rear_overhang,
            fp.inflation,
        );
        let center = p.s + 0.5 * fp.ego_length - fp.ego_rear_overhang;
        if let Some((first, last)) = overlapping_positions(road, obstacle, &b, center, fp) {
            return conflict_timing(p.s, p.t, ego_s0, first, last, obstacle);
        }
    }
    CollisionGeometry::default()
}

/// Fills in times and distances once the conflict positions are known.
/// An obstacle already past the whole conflict range has no conflict.
pub fn conflict_timing(
    s_ego: f64,
    t_ego: f64,
    ego_s0: f64,
    obs_first: f64,
    obs_last: f64,
    obstacle: &TrafficVehicle,
) -> CollisionGeometry {
    if obstacle.s > obs_last {
        return CollisionGeometry::default();
    }
    let s_obs = obs_first.max(obstacle.s);
    let d_obs = s_obs - obstacle.s;
    let t_obs = if d_obs == 0.0 {
        0.0
    } else if obstacle.v > 0.0 {
        d_obs / obstacle.v
    } else {
        return CollisionGeometry::default();
    };
    CollisionGeometry {
        exists: true,
        s_ego,
        s_obs,
        t_ego,
        t_obs,
        d_ego: (s_ego - ego_s0).max(0.0),
        d_obs,
    }
}
