use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::config::{CostWeights, VehicleParams};
use crate::geometry::{Lane, RoadModel};
use crate::lattice::{ego_box, EdgeSample, VelocityProfile};
use crate::math::trapezoid;
use crate::obb::OrientedBox;
use crate::prediction::{CollisionGeometry, TrafficVehicle};

/// A point on a candidate in time: travelled arc length, speed, and where
/// the rear axle sits on the road.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionSample {
    /// Absolute time since the start of the plan.
    pub t: f64,
    pub sigma: f64,
    pub v: f64,
    pub s: f64,
    pub l: f64,
    pub dtheta: f64,
}

/// Samples an edge uniformly in time; the pose at each time comes from the
/// path sample at the travelled arc length.
pub fn motion_samples(
    samples: &[EdgeSample],
    profile: &VelocityProfile,
    t0: f64,
    intervals: usize,
) -> Vec<MotionSample> {
    let mut out = Vec::with_capacity(intervals + 1);
    let mut k = 0;
    for i in 0..=intervals {
        let t = profile.duration * i as f64 / intervals as f64;
        let sigma = if i == intervals {
            samples.last().unwrap().sigma
        } else {
            profile.distance(t)
        };
        while k + 2 < samples.len() && samples[k + 1].sigma < sigma {
            k += 1;
        }
        let (a, b) = (&samples[k], &samples[k + 1]);
        let u = ((sigma - a.sigma) / (b.sigma - a.sigma)).clamp(0.0, 1.0);
        out.push(MotionSample {
            t: t0 + t,
            sigma,
            v: profile.velocity(t),
            s: a.s + (b.s - a.s) * u,
            l: a.l + (b.l - a.l) * u,
            dtheta: a.dtheta + (b.dtheta - a.dtheta) * u,
        });
    }
    out
}

pub fn cost_curvature(samples: &[EdgeSample]) -> f64 {
    trapezoid(
        samples.iter().map(|p| p.sigma),
        samples.iter().map(|p| p.kappa * p.kappa),
    )
}

pub fn cost_curvature_rate(samples: &[EdgeSample]) -> f64 {
    trapezoid(
        samples.iter().map(|p| p.sigma),
        samples.iter().map(|p| p.dkappa * p.dkappa),
    )
}

/// Squared longitudinal jerk integrated over time, edge by edge.
pub fn cost_jerk(profiles: &[VelocityProfile]) -> f64 {
    profiles.iter().map(VelocityProfile::jerk_cost).sum()
}

/// ∫ (v − v_d)² ds on the arc-length grid implied by the time samples.
pub fn cost_velocity(motion: &[MotionSample], v_desired: f64) -> f64 {
    trapezoid(
        motion.iter().map(|m| m.sigma),
        motion.iter().map(|m| (m.v - v_desired).powi(2)),
    )
}

/// Previous plan in Frenet form, ordered by reference arc length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct PreviousPath {
    pub points: Vec<(f64, f64)>,
}

impl PreviousPath {
    /// Lateral offset of the previous path at reference station `s`.
    pub fn l_at(&self, s: f64) -> Option<f64> {
        let p = &self.points;
        if p.len() < 2 || s < p[0].0 || s > p[p.len() - 1].0 {
            return None;
        }
        let i = p.partition_point(|q| q.0 <= s).clamp(1, p.len() - 1);
        let (a, b) = (p[i - 1], p[i]);
        let u = if b.0 > a.0 {
            (s - a.0) / (b.0 - a.0)
        } else {
            0.0
        };
        Some(a.1 + (b.1 - a.1) * u)
    }
}

/// ∫ d² ds where d is the distance to the previous path at the same station.
/// Stations the previous path does not cover contribute nothing.
pub fn cost_consistency(samples: &[EdgeSample], previous: Option<&PreviousPath>) -> f64 {
    let Some(prev) = previous else { return 0.0 };
    trapezoid(
        samples.iter().map(|p| p.sigma),
        samples
            .iter()
            .map(|p| prev.l_at(p.s).map_or(0.0, |l| (p.l - l).powi(2))),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CenterMode {
    LaneFollow,
    Merge,
}

pub fn center_density(dist: f64, mode: CenterMode, w_main: f64, w: &CostWeights) -> f64 {
    match mode {
        CenterMode::Merge if dist >= 0.5 * w_main => w.c + w.m_merge * dist,
        _ => w.m * dist,
    }
}

/// ∫ C_center ds, or `None` when a sample leaves the road. In merge mode
/// the density jumps where D crosses half a main-lane width; intervals
/// straddling the jump are split at the crossing of the interpolated D.
pub fn cost_center(
    samples: &[EdgeSample],
    road: &RoadModel,
    mode: CenterMode,
    l_d: f64,
    w: &CostWeights,
) -> Option<f64> {
    if samples
        .iter()
        .any(|p| road.lane_membership(p.s, p.l) == Lane::OffRoad)
    {
        return None;
    }
    let half = 0.5 * road.w_main;
    let dens = |d: f64| center_density(d, mode, road.w_main, w);
    let edge = |above: bool| {
        if above {
            w.c + w.m_merge * half
        } else {
            w.m * half
        }
    };
    let mut sum = 0.0;
    for pq in samples.windows(2) {
        let (da, db) = ((pq[0].l - l_d).abs(), (pq[1].l - l_d).abs());
        let h = pq[1].sigma - pq[0].sigma;
        let (fa, fb) = (dens(da), dens(db));
        if mode == CenterMode::Merge && (da >= half) != (db >= half) {
            let u = ((half - da) / (db - da)).clamp(0.0, 1.0);
            sum += 0.5 * u * h * (fa + edge(da >= half))
                + 0.5 * (1.0 - u) * h * (edge(db >= half) + fb);
        } else {
            sum += 0.5 * h * (fa + fb);
        }
    }
    Some(sum)
}

/// Reaction distance plus the braking distance needed to match the lead.
pub fn safe_following_distance(v: f64, v_lead: f64, w: &CostWeights) -> f64 {
    v * w.t_reaction + ((v * v - v_lead * v_lead) / (2.0 * w.a_max_dec)).max(0.0)
}

/// Per-metre following cost; `None` if the gap is closed.
pub fn follow_density(v: f64, v_lead: f64, gap: f64, w: &CostWeights) -> Option<f64> {
    follow_parts(v, v_lead, gap, w).map(|(lin, e)| lin + e.exp())
}

/// The closing-speed term and the exponent of the distance term.
fn follow_parts(v: f64, v_lead: f64, gap: f64, w: &CostWeights) -> Option<(f64, f64)> {
    if !(gap > 0.0) {
        return None;
    }
    let d_safe = safe_following_distance(v, v_lead, w).max(MIN_SAFE_DISTANCE);
    Some((
        w.alpha1 * ((v - v_lead) / gap).max(0.0),
        (d_safe - gap) / d_safe,
    ))
}

/// Safe distances shrink to zero at standstill; this floor keeps the
/// exponential terms finite.
pub const MIN_SAFE_DISTANCE: f64 = 1.0;

/// ∫ C_obs ds against a constant-speed lead. `front_offset` is the distance
/// from the rear axle to the front bumper. The exponential term is
/// integrated with its exponent interpolated linearly between samples, so
/// its relative accuracy does not depend on how small it is.
pub fn cost_obs_follow(
    motion: &[MotionSample],
    lead: Option<&TrafficVehicle>,
    front_offset: f64,
    w: &CostWeights,
) -> Option<f64> {
    let Some(lead) = lead else { return Some(0.0) };
    let mut parts = Vec::with_capacity(motion.len());
    for m in motion {
        let gap = lead.s_at(m.t) - 0.5 * lead.length - (m.s + front_offset * m.dtheta.cos());
        parts.push(follow_parts(m.v, lead.v, gap, w)?);
    }
    let mut sum = 0.0;
    for (ab, mm) in parts.windows(2).zip(motion.windows(2)) {
        let h = mm[1].sigma - mm[0].sigma;
        let ((la, ea), (lb, eb)) = (ab[0], ab[1]);
        let de = eb - ea;
        let expo = if de.abs() < 1e-6 {
            0.5 * (ea.exp() + eb.exp())
        } else {
            (eb.exp() - ea.exp()) / de
        };
        sum += h * (0.5 * (la + lb) + expo);
    }
    Some(sum)
}

/// The merge conflict term for a single obstacle.
pub fn merge_bracket(
    dt: f64,
    d_safe_ego: f64,
    d_ego: f64,
    d_safe_obs: f64,
    d_obs: f64,
    alpha2: f64,
) -> f64 {
    alpha2 / dt.abs()
        + ((d_safe_ego - d_ego) / d_safe_ego).exp()
        + ((d_safe_obs - d_obs) / d_safe_obs).exp()
}

/// Merge conflict value for one obstacle. The vehicle arriving second must
/// be able to brake to a stop; the one arriving first needs the follower's
/// reaction distance.
pub fn merge_obstacle_value(
    geom: &CollisionGeometry,
    v_ego: f64,
    v_obs: f64,
    w: &CostWeights,
    eps: f64,
) -> Option<f64> {
    if !geom.exists {
        return Some(0.0);
    }
    let dt = geom.t_ego - geom.t_obs;
    if dt.abs() < eps {
        return None;
    }
    let (ds_ego, ds_obs) = if dt > 0.0 {
        (v_ego * v_ego / (2.0 * w.a_max_dec), w.t_reaction * v_ego)
    } else {
        (w.t_reaction * v_obs, v_obs * v_obs / (2.0 * w.a_max_dec))
    };
    Some(merge_bracket(
        dt,
        ds_ego.max(MIN_SAFE_DISTANCE),
        geom.d_ego,
        ds_obs.max(MIN_SAFE_DISTANCE),
        geom.d_obs,
        w.alpha2,
    ))
}

/// Largest single-obstacle value; `None` if any is infeasible.
pub fn cost_obs_merge(values: &[Option<f64>]) -> Option<f64> {
    values
        .iter()
        .try_fold(0.0f64, |acc, v| v.map(|x| acc.max(x)))
}

/// |κ| ≤ κ_max and |dκ/ds| ≤ κ̇_max(v) at every sample.
pub fn check_hard_constraints(
    samples: &[EdgeSample],
    profile: &VelocityProfile,
    vehicle: &VehicleParams,
) -> bool {
    let kmax = vehicle.max_curvature();
    samples.iter().all(|p| {
        let v = profile.velocity(profile.time_at_distance(p.sigma));
        p.kappa.abs() <= kmax && p.dkappa.abs() <= vehicle.max_curvature_rate(v)
    })
}

/// True when no footprint along the poses touches a static obstacle.
pub fn check_static_collision(
    poses: &[(f64, f64, f64)],
    obstacles: &[OrientedBox],
    vehicle: &VehicleParams,
    inflation: f64,
) -> bool {
    poses.iter().all(|&(x, y, th)| {
        let b = ego_box(x, y, th, vehicle, inflation);
        obstacles.iter().all(|o| !o.overlaps(&b))
    })
}

pub(crate) fn ser_inf<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_some(v)
    } else {
        s.serialize_none()
    }
}

pub(crate) fn de_inf<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
}

/// Unweighted cost terms plus their weighted total. An infeasible
/// breakdown carries an infinite total that never enters arithmetic and is
/// written as `null`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct CostBreakdown {
    pub curvature: f64,
    pub jerk: f64,
    pub curvature_rate: f64,
    pub velocity: f64,
    pub consistency: f64,
    pub center: f64,
    pub obs: f64,
    #[serde(serialize_with = "ser_inf", deserialize_with = "de_inf")]
    pub total: f64,
    pub infeasible: bool,
}

impl CostBreakdown {
    pub fn infeasible() -> Self {
        Self {
            total: f64::INFINITY,
            infeasible: true,
            ..Self::default()
        }
    }

    pub fn weighted_total(&self, w: &CostWeights) -> f64 {
        w.w_curvature * self.curvature
            + w.w_jerk * self.jerk
            + w.w_curvature_rate * self.curvature_rate
            + w.w_velocity * self.velocity
            + w.w_consistency * self.consistency
            + w.w_center * self.center
            + w.w_obs * self.obs
    }

    /// Recomputes `total` from the terms.
    pub fn finish(mut self, w: &CostWeights) -> Self {
        if self.infeasible {
            return Self::infeasible();
        }
        self.total = self.weighted_total(w);
        self
    }

    /// Term-wise sum; totals add as given.
    pub fn accumulate(&self, other: &CostBreakdown) -> CostBreakdown {
        if self.infeasible || other.infeasible {
            return Self::infeasible();
        }
        CostBreakdown {
            curvature: self.curvature + other.curvature,
            jerk: self.jerk + other.jerk,
            curvature_rate: self.curvature_rate + other.curvature_rate,
            velocity: self.velocity + other.velocity,
            consistency: self.consistency + other.consistency,
            center: self.center + other.center,
            obs: self.obs + other.obs,
            total: self.total + other.total,
            infeasible: false,
        }
    }
}

/// Term values, each `None` when that term hit its infinite sentinel.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TermValues {
    pub curvature: f64,
    pub jerk: f64,
    pub curvature_rate: f64,
    pub velocity: f64,
    pub consistency: f64,
    pub center: Option<f64>,
    pub obs: Option<f64>,
}

/// Weighted sum of the terms, marked infeasible if hard constraints or the
/// static check failed or any term is infinite.
pub fn total_cost(
    t: &TermValues,
    hard_ok: bool,
    static_ok: bool,
    w: &CostWeights,
) -> CostBreakdown {
    match (t.center, t.obs) {
        (Some(center), Some(obs)) if hard_ok && static_ok => CostBreakdown {
            curvature: t.curvature,
            jerk: t.jerk,
            curvature_rate: t.curvature_rate,
            velocity: t.velocity,
            consistency: t.consistency,
            center,
            obs,
            total: 0.0,
            infeasible: false,
        }
        .finish(w),
        _ => CostBreakdown::infeasible(),
    }
}
