use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::behavior::{
    desired_speed, goal_lateral, select_vehicles_of_interest, update_behavior, with_ramp_end,
    BehaviorState, EgoExtent, PostMergeTolerance, SafetyAssessment,
};
use crate::config::{DesiredSpeedMode, PlannerConfig};
use crate::cost::{
    center_density, cost_center, cost_consistency, cost_curvature, cost_curvature_rate,
    cost_obs_merge, cost_velocity, follow_density, merge_obstacle_value, motion_samples,
    CenterMode, CostBreakdown, MotionSample, PreviousPath,
};
use crate::error::{Error, Result};
use crate::geometry::{Lane, RoadModel, StaticState};
use crate::lattice::{
    build_lattice, build_lattice_cached, BvpCache, EdgeSample, Lattice, LatticeNode,
    LatticeRequest, NodeKind, PruneStats, SpatialEdge, VelocityProfile,
};
use crate::math::{trapezoid, wrap_angle};
use crate::obb::OrientedBox;
use crate::prediction::{conflict_timing, overlapping_positions, Footprints, TrafficVehicle};

/// Kinematic ego state in world coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct EgoState {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub kappa: f64,
    pub v: f64,
    pub a: f64,
}

/// A timed trajectory point. `(x, y, t, v, a)` is the tracking interface;
/// the remaining fields come for free from the path lookup.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct Waypoint {
    pub x: f64,
    pub y: f64,
    pub t: f64,
    pub v: f64,
    pub a: f64,
    pub theta: f64,
    pub kappa: f64,
    pub s: f64,
    pub l: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrajectoryKind {
    Lattice,
    /// Standing still at the current pose.
    Hold,
    /// Braking along the previous plan, or straight ahead without one.
    Fallback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySegment {
    pub samples: Vec<EdgeSample>,
    pub profile: VelocityProfile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub kind: TrajectoryKind,
    pub segments: Vec<TrajectorySegment>,
    pub waypoints: Vec<Waypoint>,
    pub breakdown: CostBreakdown,
}

impl Trajectory {
    pub fn duration(&self) -> f64 {
        self.segments.iter().map(|s| s.profile.duration).sum()
    }

    /// The plan's path in Frenet form for the consistency term.
    pub fn previous_path(&self) -> PreviousPath {
        let mut points: Vec<(f64, f64)> = if self.segments.is_empty() {
            self.waypoints.iter().map(|w| (w.s, w.l)).collect()
        } else {
            self.segments
                .iter()
                .flat_map(|g| g.samples.iter().map(|p| (p.s, p.l)))
                .collect()
        };
        points.dedup_by(|b, a| b.0 <= a.0);
        PreviousPath { points }
    }
}

/// Everything one planning cycle needs besides the road and configuration.
#[derive(Debug, Clone)]
pub struct PlanContext<'a> {
    pub ego: EgoState,
    /// Frenet position of the ego rear axle.
    pub s: f64,
    pub l: f64,
    pub previous: Option<&'a Trajectory>,
    pub traffic: &'a [TrafficVehicle],
    pub behavior: BehaviorState,
    pub v_desired: f64,
    pub l_desired: f64,
    pub static_obstacles: &'a [OrientedBox],
    /// `None` means unlimited.
    pub time_budget: Option<Duration>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanOutcome {
    pub trajectory: Trajectory,
    pub candidates: usize,
    pub pruned: PruneStats,
    /// True when the deadline cut the search short.
    pub interrupted: bool,
}

struct Scene<'a> {
    road: &'a RoadModel,
    cfg: &'a PlannerConfig,
    /// Traffic by lane, merge lane first.
    lanes: [Vec<TrafficVehicle>; 2],
    s0: f64,
    v_desired: f64,
    l_desired: f64,
    mode: CenterMode,
    merge_term: bool,
    prev: Option<PreviousPath>,
    fp: Footprints,
}

#[derive(Debug, Clone, Copy)]
struct Conflict {
    sigma: f64,
    s_ego: f64,
    first: f64,
    last: f64,
}

#[derive(Debug, Clone)]
struct SpatialTerms {
    curvature: f64,
    curvature_rate: f64,
    consistency: f64,
    center: Option<f64>,
    /// Conflict with the main lane entered on this edge, per distinct
    /// main-lane vehicle size.
    conflicts: Vec<((f64, f64), Option<Conflict>)>,
}

enum Reject {
    OffRoad,
    Overlap,
    Simultaneous,
}

fn lane_index(lane: Lane) -> Option<usize> {
    match lane {
        Lane::Merge => Some(0),
        Lane::Main => Some(1),
        Lane::OffRoad => None,
    }
}

/// Frenet bounding box of the ego body at a sample: (s_lo, s_hi, l_lo, l_hi).
fn ego_frenet_box(s: f64, l: f64, dtheta: f64, cfg: &PlannerConfig) -> (f64, f64, f64, f64) {
    let v = &cfg.vehicle;
    let (sin, cos) = dtheta.sin_cos();
    let (front, back, half) = (v.length - v.rear_overhang, -v.rear_overhang, 0.5 * v.width);
    let mut b = (
        f64::INFINITY,
        f64::NEG_INFINITY,
        f64::INFINITY,
        f64::NEG_INFINITY,
    );
    for (dx, dy) in [(front, half), (front, -half), (back, half), (back, -half)] {
        let cs = s + dx * cos - dy * sin;
        let cl = l + dx * sin + dy * cos;
        b = (b.0.min(cs), b.1.max(cs), b.2.min(cl), b.3.max(cl));
    }
    b
}

impl<'a> Scene<'a> {
    fn spatial_terms(&self, lat: &Lattice, idx: usize) -> SpatialTerms {
        let sp = &lat.spatial[idx];
        let w = &self.cfg.weights;
        let samples = &sp.samples;
        let mut conflicts = Vec::new();
        if self.merge_term {
            for v in &self.lanes[1] {
                let dims = (v.length, v.width);
                if conflicts.iter().any(|(d, _)| *d == dims) {
                    continue;
                }
                conflicts.push((dims, self.conflict(samples, v)));
            }
        }
        SpatialTerms {
            curvature: cost_curvature(samples),
            curvature_rate: cost_curvature_rate(samples),
            consistency: cost_consistency(samples, self.prev.as_ref()),
            center: cost_center(samples, self.road, self.mode, self.l_desired, w),
            conflicts,
        }
    }

    /// First sample whose footprint reaches the lane of `proto`, unless the
    /// edge already starts inside it.
    fn conflict(&self, samples: &[EdgeSample], proto: &TrafficVehicle) -> Option<Conflict> {
        let lane_lo = proto.lane_offset(self.road) - 0.5 * proto.width - 2.0 * self.fp.inflation;
        let veh = &self.cfg.vehicle;
        for (i, p) in samples.iter().enumerate() {
            let (_, _, _, l_hi) = ego_frenet_box(p.s, p.l, p.dtheta, self.cfg);
            if l_hi < lane_lo {
                continue;
            }
            let b = OrientedBox::from_rear_axle(
                p.x,
                p.y,
                p.theta,
                veh.length,
                veh.width,
                veh.rear_overhang,
                self.fp.inflation,
            );
            let center = p.s + 0.5 * veh.length - veh.rear_overhang;
            if let Some((first, last)) =
                overlapping_positions(self.road, proto, &b, center, &self.fp)
            {
                if i == 0 {
                    return None;
                }
                return Some(Conflict {
                    sigma: p.sigma,
                    s_ego: p.s,
                    first,
                    last,
                });
            }
        }
        None
    }

    fn edge_cost(
        &self,
        lat: &Lattice,
        e: usize,
        terms: &SpatialTerms,
    ) -> std::result::Result<CostBreakdown, Reject> {
        let edge = &lat.edges[e];
        let sp = &lat.spatial[edge.spatial];
        let from = &lat.nodes[edge.from];
        let cfg = self.cfg;
        let w = &cfg.weights;
        let center = terms.center.ok_or(Reject::OffRoad)?;
        let motion = motion_samples(
            &sp.samples,
            &edge.profile,
            from.t,
            cfg.lattice.time_intervals,
        );
        let mut obs = 0.0;
        if cfg.obstacle_cost {
            obs += self.follow_cost(&motion, sp)?;
            let mut values = Vec::new();
            for (dims, c) in &terms.conflicts {
                let Some(c) = c else { continue };
                let tau = edge.profile.time_at_distance(c.sigma);
                let t_ego = from.t + tau;
                let v_ego = edge.profile.velocity(tau);
                for v in self.lanes[1]
                    .iter()
                    .filter(|v| (v.length, v.width) == *dims)
                {
                    let g = conflict_timing(c.s_ego, t_ego, self.s0, c.first, c.last, v);
                    values.push(merge_obstacle_value(
                        &g,
                        v_ego,
                        v.v,
                        w,
                        cfg.simultaneity_eps,
                    ));
                }
            }
            obs += cost_obs_merge(&values).ok_or(Reject::Simultaneous)?;
        }
        Ok(CostBreakdown {
            curvature: terms.curvature,
            jerk: edge.profile.jerk_cost(),
            curvature_rate: terms.curvature_rate,
            velocity: cost_velocity(&motion, self.v_desired),
            consistency: terms.consistency,
            center,
            obs,
            total: 0.0,
            infeasible: false,
        }
        .finish(w))
    }

    /// Overlap gate plus following cost against the nearest vehicle ahead in
    /// every lane the ego body reaches.
    fn follow_cost(
        &self,
        motion: &[MotionSample],
        sp: &SpatialEdge,
    ) -> std::result::Result<f64, Reject> {
        let cfg = self.cfg;
        let infl = cfg.footprint_inflation;
        let (t0, t1) = (motion[0].t, motion[motion.len() - 1].t);
        let first = &sp.samples[0];
        let last = &sp.samples[sp.samples.len() - 1];
        let reach = cfg.vehicle.length + infl;
        let (s_lo, s_hi) = (first.s.min(last.s) - reach, first.s.max(last.s) + reach);
        let front_offset = cfg.vehicle.length - cfg.vehicle.rear_overhang;
        let ego_front0 = first.s + front_offset * first.dtheta.cos();

        let mut dens = vec![0.0; motion.len()];
        for (li, lane) in self.lanes.iter().enumerate() {
            if lane.is_empty() {
                continue;
            }
            let lane_l = if li == 0 {
                self.road.merge_center()
            } else {
                self.road.main_center()
            };
            let lane_half = lane
                .iter()
                .map(|v| 0.5 * v.width + infl)
                .fold(0.0, f64::max);
            // Vehicles that can come near the edge during its time window.
            let near: Vec<&TrafficVehicle> = lane
                .iter()
                .filter(|v| {
                    let half = 0.5 * v.length + infl;
                    let (a, b) = (v.s_at(t0), v.s_at(t1));
                    a.min(b) - half <= s_hi && a.max(b) + half >= s_lo
                })
                .collect();
            let lead = lane
                .iter()
                .filter(|v| v.s_at(t0) - 0.5 * v.length > ego_front0)
                .min_by(|a, b| a.s_at(t0).total_cmp(&b.s_at(t0)));
            for (k, m) in motion.iter().enumerate() {
                let (bs_lo, bs_hi, bl_lo, bl_hi) = ego_frenet_box(m.s, m.l, m.dtheta, cfg);
                if bl_hi + infl < lane_l - lane_half || bl_lo - infl > lane_l + lane_half {
                    continue;
                }
                for v in &near {
                    let vs = v.s_at(m.t);
                    let half = 0.5 * v.length + infl;
                    let half_w = 0.5 * v.width + infl;
                    if bs_hi + infl >= vs - half
                        && bs_lo - infl <= vs + half
                        && bl_hi + infl >= lane_l - half_w
                        && bl_lo - infl <= lane_l + half_w
                    {
                        return Err(Reject::Overlap);
                    }
                }
                if let Some(lead) = lead {
                    let gap =
                        lead.s_at(m.t) - 0.5 * lead.length - (m.s + front_offset * m.dtheta.cos());
                    dens[k] +=
                        follow_density(m.v, lead.v, gap, &cfg.weights).ok_or(Reject::Overlap)?;
                }
            }
        }
        Ok(trapezoid(motion.iter().map(|m| m.sigma), dens))
    }

    /// Cost of ending at `node` with `remaining` metres of lookahead unused.
    fn terminal(&self, node: &LatticeNode, remaining: f64) -> CostBreakdown {
        let w = &self.cfg.weights;
        let d = (node.state.l - self.l_desired).abs();
        CostBreakdown {
            velocity: self.v_desired * self.v_desired * remaining,
            center: center_density(d, self.mode, self.road.w_main, w) * remaining,
            ..CostBreakdown::default()
        }
        .finish(w)
    }
}

fn is_terminal(lat: &Lattice, node: &LatticeNode) -> bool {
    node.kind == NodeKind::Stop || node.layer + 1 == lat.layers.len()
}

fn remaining(lat: &Lattice, node: &LatticeNode) -> f64 {
    (lat.lookahead - lat.layers[node.layer].distance).max(0.0)
}

struct Search<'s, 'a> {
    scene: &'s Scene<'a>,
    lat: &'s Lattice,
    spatial: Vec<Option<Option<SpatialTerms>>>,
    edges: Vec<Option<Option<CostBreakdown>>>,
    pruned: PruneStats,
    deadline: Option<Instant>,
    interrupted: bool,
}

impl<'s, 'a> Search<'s, 'a> {
    fn expired(&mut self) -> bool {
        if !self.interrupted && self.deadline.is_some_and(|d| Instant::now() >= d) {
            self.interrupted = true;
        }
        self.interrupted
    }

    fn edge(&mut self, e: usize) -> Option<CostBreakdown> {
        if let Some(c) = self.edges[e] {
            return c;
        }
        let sp = self.lat.edges[e].spatial;
        if self.spatial[sp].is_none() {
            self.spatial[sp] = Some(Some(self.scene.spatial_terms(self.lat, sp)));
        }
        let terms = self.spatial[sp].as_ref().unwrap().as_ref().unwrap();
        let c = match self.scene.edge_cost(self.lat, e, terms) {
            Ok(c) => Some(c),
            Err(r) => {
                match r {
                    Reject::OffRoad => self.pruned.off_road += 1,
                    Reject::Overlap => self.pruned.obstacle_overlap += 1,
                    Reject::Simultaneous => self.pruned.simultaneous_arrival += 1,
                }
                None
            }
        };
        self.edges[e] = Some(c);
        c
    }

    /// Depth-first dive along the search order to get some complete
    /// candidate quickly.
    fn dive(&mut self) -> Option<(f64, Vec<usize>)> {
        let mut stack: Vec<(usize, usize)> = vec![(0, 0)];
        let mut path: Vec<usize> = Vec::new();
        let mut acc: Vec<CostBreakdown> = vec![CostBreakdown::default()];
        while let Some(&mut (node, ref mut next)) = stack.last_mut() {
            if self.expired() {
                return None;
            }
            let out = &self.lat.outgoing[node];
            if *next >= out.len() {
                stack.pop();
                path.pop();
                acc.pop();
                continue;
            }
            let e = out[*next];
            *next += 1;
            let Some(c) = self.edge(e) else { continue };
            let to = self.lat.edges[e].to;
            let total = acc.last().unwrap().accumulate(&c);
            path.push(e);
            let tn = &self.lat.nodes[to];
            if is_terminal(self.lat, tn) {
                let t = total.accumulate(&self.scene.terminal(tn, remaining(self.lat, tn)));
                return Some((t.total, path));
            }
            acc.push(total);
            stack.push((to, 0));
        }
        None
    }
}

/// Best candidate found by the search.
struct Best {
    total: f64,
    breakdown: CostBreakdown,
    edges: Vec<usize>,
}

/// A complete path the search could have returned.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub s: f64,
    pub l: f64,
    pub t: f64,
    pub v: f64,
    /// Number of lattice edges; zero for holding at the current pose.
    pub edges: usize,
    pub breakdown: CostBreakdown,
    pub selected: bool,
}

fn run_search(search: &mut Search, mut out: Option<&mut Vec<Candidate>>) -> (Option<Best>, usize) {
    let lat = search.lat;
    let scene = search.scene;
    let n = lat.nodes.len();
    let mut best: Option<Best> = None;
    let consider = |b: Best, best: &mut Option<Best>| {
        if best.as_ref().is_none_or(|cur| b.total < cur.total) {
            *best = Some(b);
        }
    };

    if lat.root_hold {
        let root = lat.root();
        let t = scene.terminal(root, lat.lookahead);
        if let Some(out) = out.as_deref_mut() {
            let st = &root.state;
            out.push(Candidate {
                s: st.s,
                l: st.l,
                t: root.t,
                v: root.v,
                edges: 0,
                breakdown: t,
                selected: false,
            });
        }
        consider(
            Best {
                total: t.total,
                breakdown: t,
                edges: Vec::new(),
            },
            &mut best,
        );
    }
    if let Some((_, edges)) = search.dive() {
        let mut acc = CostBreakdown::default();
        for &e in &edges {
            acc = acc.accumulate(&search.edges[e].unwrap().unwrap());
        }
        let last = &lat.nodes[lat.edges[*edges.last().unwrap()].to];
        let t = acc.accumulate(&scene.terminal(last, remaining(lat, last)));
        if let Some(out) = out.as_deref_mut() {
            let st = &last.state;
            out.push(Candidate {
                s: st.s,
                l: st.l,
                t: last.t,
                v: last.v,
                edges: edges.len(),
                breakdown: t,
                selected: false,
            });
        }
        consider(
            Best {
                total: t.total,
                breakdown: t,
                edges,
            },
            &mut best,
        );
    }

    // Layered forward pass; each node keeps its cheapest predecessor edge.
    let mut cost: Vec<Option<CostBreakdown>> = vec![None; n];
    let mut pred: Vec<Option<usize>> = vec![None; n];
    cost[0] = Some(CostBreakdown::default());
    let mut by_layer: Vec<Vec<usize>> = vec![Vec::new(); lat.layers.len()];
    for (i, node) in lat.nodes.iter().enumerate() {
        if node.kind != NodeKind::Stop {
            by_layer[node.layer].push(i);
        }
    }
    for layer in &mut by_layer {
        layer.sort_by_key(|&i| {
            let nd = &lat.nodes[i];
            let st = lat.layers[nd.layer]
                .order
                .iter()
                .position(|&j| j == nd.station)
                .unwrap_or(0);
            let tr = match nd.kind {
                NodeKind::Track(m) => m,
                _ => 0,
            };
            (
                st,
                (lat.tracks.get(tr).copied().unwrap_or(0.0).abs() * 1e6) as i64,
                tr,
            )
        });
    }
    let mut candidates = 0usize;
    let reconstruct = |node: usize, pred: &[Option<usize>]| {
        let mut edges = Vec::new();
        let mut cur = node;
        while let Some(e) = pred[cur] {
            edges.push(e);
            cur = lat.edges[e].from;
        }
        edges.reverse();
        edges
    };
    'outer: for layer in &by_layer {
        for &node in layer {
            let Some(base) = cost[node] else { continue };
            for &e in &lat.outgoing[node] {
                if search.expired() {
                    break 'outer;
                }
                let Some(c) = search.edge(e) else { continue };
                let to = lat.edges[e].to;
                let total = base.accumulate(&c);
                if cost[to].is_none_or(|cur| total.total < cur.total) {
                    cost[to] = Some(total);
                    pred[to] = Some(e);
                }
            }
        }
    }
    for (i, node) in lat.nodes.iter().enumerate() {
        if i == 0 || !is_terminal(lat, node) {
            continue;
        }
        let Some(c) = cost[i] else { continue };
        candidates += 1;
        let t = c.accumulate(&scene.terminal(node, remaining(lat, node)));
        let edges = reconstruct(i, &pred);
        if let Some(out) = out.as_deref_mut() {
            let st = &node.state;
            out.push(Candidate {
                s: st.s,
                l: st.l,
                t: node.t,
                v: node.v,
                edges: edges.len(),
                breakdown: t,
                selected: false,
            });
        }
        consider(
            Best {
                total: t.total,
                breakdown: t,
                edges,
            },
            &mut best,
        );
    }
    (best, candidates)
}

/// Point on a sampled path at arc length `sigma`: cubic Hermite in x and y
/// using the sample headings, linear in the rest.
pub fn pose_on_samples(samples: &[EdgeSample], sigma: f64) -> EdgeSample {
    let n = samples.len();
    if n == 1 || sigma <= samples[0].sigma {
        return samples[0];
    }
    if sigma >= samples[n - 1].sigma {
        return samples[n - 1];
    }
    let i = samples
        .partition_point(|p| p.sigma <= sigma)
        .clamp(1, n - 1)
        - 1;
    let (a, b) = (&samples[i], &samples[i + 1]);
    let h = b.sigma - a.sigma;
    let u = (sigma - a.sigma) / h;
    let (h00, h10, h01, h11) = (
        2.0 * u * u * u - 3.0 * u * u + 1.0,
        u * u * u - 2.0 * u * u + u,
        -2.0 * u * u * u + 3.0 * u * u,
        u * u * u - u * u,
    );
    let lin = |p: f64, q: f64| p + (q - p) * u;
    EdgeSample {
        sigma,
        x: h00 * a.x + h10 * h * a.theta.cos() + h01 * b.x + h11 * h * b.theta.cos(),
        y: h00 * a.y + h10 * h * a.theta.sin() + h01 * b.y + h11 * h * b.theta.sin(),
        theta: lin(a.theta, b.theta),
        kappa: lin(a.kappa, b.kappa),
        dkappa: lin(a.dkappa, b.dkappa),
        s: lin(a.s, b.s),
        l: lin(a.l, b.l),
        dtheta: lin(a.dtheta, b.dtheta),
    }
}

/// Samples the trajectory every `dt` up to `horizon` or its end.
pub fn to_waypoints(segments: &[TrajectorySegment], dt: f64, horizon: f64) -> Vec<Waypoint> {
    if segments.is_empty() {
        return Vec::new();
    }
    let total: f64 = segments.iter().map(|s| s.profile.duration).sum();
    let end = horizon.min(total);
    let n = (end / dt + 1e-9).floor() as usize;
    let mut out = Vec::with_capacity(n + 1);
    let mut k = 0;
    let mut t0 = 0.0;
    for i in 0..=n {
        let t = i as f64 * dt;
        while k + 1 < segments.len() && t > t0 + segments[k].profile.duration {
            t0 += segments[k].profile.duration;
            k += 1;
        }
        let seg = &segments[k];
        let tau = (t - t0).clamp(0.0, seg.profile.duration);
        let p = pose_on_samples(&seg.samples, seg.profile.distance(tau));
        out.push(Waypoint {
            x: p.x,
            y: p.y,
            t,
            v: seg.profile.velocity(tau),
            a: seg.profile.accel(tau),
            theta: p.theta,
            kappa: p.kappa,
            s: p.s,
            l: p.l,
        });
    }
    out
}

/// Brakes at the comfortable limit along the previous plan's path, or
/// straight ahead if there is none.
pub fn fallback_trajectory(ctx: &PlanContext, road: &RoadModel, cfg: &PlannerConfig) -> Trajectory {
    let decel = -cfg.lattice.accel_range[0].abs().max(1e-3);
    let v0 = ctx.ego.v.max(0.0);
    let t_stop = v0 / -decel;
    let path: Vec<EdgeSample> = match ctx.previous {
        Some(p) if !p.segments.is_empty() => {
            let mut pts: Vec<EdgeSample> = Vec::new();
            let mut offset = 0.0;
            for seg in &p.segments {
                for q in &seg.samples {
                    pts.push(EdgeSample {
                        sigma: offset + q.sigma,
                        ..*q
                    });
                }
                offset += seg.samples.last().map_or(0.0, |q| q.sigma);
            }
            pts.dedup_by(|b, a| b.sigma <= a.sigma);
            // Start at the sample nearest the ego.
            let i0 = pts
                .iter()
                .enumerate()
                .min_by(|a, b| {
                    let da = (a.1.x - ctx.ego.x).powi(2) + (a.1.y - ctx.ego.y).powi(2);
                    let db = (b.1.x - ctx.ego.x).powi(2) + (b.1.y - ctx.ego.y).powi(2);
                    da.total_cmp(&db)
                })
                .map_or(0, |x| x.0);
            let base = pts[i0].sigma;
            pts[i0..]
                .iter()
                .map(|q| EdgeSample {
                    sigma: q.sigma - base,
                    ..*q
                })
                .collect()
        }
        _ => Vec::new(),
    };
    let dt = cfg.waypoint_dt;
    let n = (cfg.waypoint_horizon / dt + 1e-9).floor() as usize;
    let mut waypoints = Vec::with_capacity(n + 1);
    for i in 0..=n {
        let t = i as f64 * dt;
        let tc = t.min(t_stop);
        let dist = v0 * tc + 0.5 * decel * tc * tc;
        let v = (v0 + decel * t).max(0.0);
        let a = if t < t_stop { decel } else { 0.0 };
        let (x, y, theta, kappa) = if path.len() >= 2 && dist <= path[path.len() - 1].sigma {
            let p = pose_on_samples(&path, dist);
            (p.x, p.y, p.theta, p.kappa)
        } else {
            let (bx, by, bth, rest) = match path.last() {
                Some(p) if path.len() >= 2 => (p.x, p.y, p.theta, dist - p.sigma),
                _ => (ctx.ego.x, ctx.ego.y, ctx.ego.theta, dist),
            };
            (bx + rest * bth.cos(), by + rest * bth.sin(), bth, 0.0)
        };
        let (s, l) = road
            .project_near(x, y, ctx.s + dist)
            .unwrap_or((ctx.s + dist, ctx.l));
        waypoints.push(Waypoint {
            x,
            y,
            t,
            v,
            a,
            theta,
            kappa,
            s,
            l,
        });
    }
    Trajectory {
        kind: TrajectoryKind::Fallback,
        segments: Vec::new(),
        waypoints,
        breakdown: CostBreakdown::infeasible(),
    }
}

fn hold_trajectory(ctx: &PlanContext, cfg: &PlannerConfig, breakdown: CostBreakdown) -> Trajectory {
    let dt = cfg.waypoint_dt;
    let n = (cfg.waypoint_horizon / dt + 1e-9).floor() as usize;
    let e = ctx.ego;
    let waypoints = (0..=n)
        .map(|i| Waypoint {
            x: e.x,
            y: e.y,
            t: i as f64 * dt,
            v: 0.0,
            a: 0.0,
            theta: e.theta,
            kappa: e.kappa,
            s: ctx.s,
            l: ctx.l,
        })
        .collect();
    Trajectory {
        kind: TrajectoryKind::Hold,
        segments: Vec::new(),
        waypoints,
        breakdown,
    }
}

fn build_scene<'a>(ctx: &PlanContext, road: &'a RoadModel, cfg: &'a PlannerConfig) -> Scene<'a> {
    let mut lanes: [Vec<TrafficVehicle>; 2] = [Vec::new(), Vec::new()];
    for v in ctx.traffic {
        if (v.s - ctx.s).abs() > cfg.sensing_range {
            continue;
        }
        if let Some(i) = lane_index(v.lane) {
            lanes[i].push(*v);
        }
    }
    for lane in &mut lanes {
        lane.sort_by(|a, b| a.s.total_cmp(&b.s));
    }
    let mode = if cfg.merge_center_cost {
        ctx.behavior.center_mode()
    } else {
        CenterMode::LaneFollow
    };
    Scene {
        road,
        cfg,
        lanes,
        s0: ctx.s,
        v_desired: ctx.v_desired,
        l_desired: ctx.l_desired,
        mode,
        merge_term: ctx.behavior != BehaviorState::PostMergeLaneFollow,
        prev: ctx.previous.map(Trajectory::previous_path),
        fp: Footprints {
            ego_length: cfg.vehicle.length,
            ego_width: cfg.vehicle.width,
            ego_rear_overhang: cfg.vehicle.rear_overhang,
            inflation: cfg.footprint_inflation,
            lane_step: cfg.obstacle_lane_step,
        },
    }
}

/// Cheapest complete path found by enumerating every root-to-terminal path
/// of the lattice `plan_cycle` would build. Exponential; meant for checking
/// the search on small lattices.
pub fn exhaustive_best(
    ctx: &PlanContext,
    road: &RoadModel,
    cfg: &PlannerConfig,
) -> Result<Option<CostBreakdown>> {
    let root_state = StaticState {
        x: ctx.ego.x,
        y: ctx.ego.y,
        theta: ctx.ego.theta,
        kappa: ctx.ego.kappa,
        s: ctx.s,
        l: ctx.l,
    };
    let root = LatticeNode {
        state: root_state,
        t: 0.0,
        v: ctx.ego.v.max(0.0),
        a: ctx.ego.a,
        layer: 0,
        station: 0,
        kind: NodeKind::Root,
    };
    let req = LatticeRequest {
        ego: root,
        v_desired: ctx.v_desired,
        l_desired: ctx.l_desired,
        static_obstacles: ctx.static_obstacles,
        deadline: None,
    };
    let lat = build_lattice(&req, road, cfg)?;
    let scene = build_scene(ctx, road, cfg);
    let mut search = Search {
        scene: &scene,
        lat: &lat,
        spatial: vec![None; lat.spatial.len()],
        edges: vec![None; lat.edges.len()],
        pruned: PruneStats::default(),
        deadline: None,
        interrupted: false,
    };
    let mut best: Option<CostBreakdown> = None;
    let mut keep = |c: CostBreakdown| {
        if best.is_none_or(|b| c.total < b.total) {
            best = Some(c);
        }
    };
    if lat.root_hold {
        keep(scene.terminal(lat.root(), lat.lookahead));
    }
    let mut stack = vec![(0usize, CostBreakdown::default())];
    while let Some((node, acc)) = stack.pop() {
        let nd = &lat.nodes[node];
        if node != 0 && is_terminal(&lat, nd) {
            keep(acc.accumulate(&scene.terminal(nd, remaining(&lat, nd))));
            continue;
        }
        for &e in &lat.outgoing[node] {
            if let Some(c) = search.edge(e) {
                stack.push((lat.edges[e].to, acc.accumulate(&c)));
            }
        }
    }
    Ok(best)
}

/// One planning cycle: lattice, layered search, selection, waypoints.
pub fn plan_cycle(
    ctx: &PlanContext,
    road: &RoadModel,
    cfg: &PlannerConfig,
    cache: &mut BvpCache,
) -> PlanOutcome {
    plan_cycle_inner(ctx, road, cfg, cache, None)
}

/// Like [`plan_cycle`], also returning every candidate the search compared.
pub fn plan_cycle_candidates(
    ctx: &PlanContext,
    road: &RoadModel,
    cfg: &PlannerConfig,
    cache: &mut BvpCache,
) -> (PlanOutcome, Vec<Candidate>) {
    let mut list = Vec::new();
    let out = plan_cycle_inner(ctx, road, cfg, cache, Some(&mut list));
    let total = out.trajectory.breakdown.total;
    if out.trajectory.kind != TrajectoryKind::Fallback {
        if let Some(c) = list.iter_mut().find(|c| c.breakdown.total == total) {
            c.selected = true;
        }
    }
    (out, list)
}

fn plan_cycle_inner(
    ctx: &PlanContext,
    road: &RoadModel,
    cfg: &PlannerConfig,
    cache: &mut BvpCache,
    candidates_out: Option<&mut Vec<Candidate>>,
) -> PlanOutcome {
    let deadline = ctx.time_budget.map(|b| Instant::now() + b);
    let root_state = match road.state_at(ctx.s, ctx.l) {
        Ok(_) => StaticState {
            x: ctx.ego.x,
            y: ctx.ego.y,
            theta: ctx.ego.theta,
            kappa: ctx.ego.kappa,
            s: ctx.s,
            l: ctx.l,
        },
        Err(_) => {
            return PlanOutcome {
                trajectory: fallback_trajectory(ctx, road, cfg),
                candidates: 0,
                pruned: PruneStats::default(),
                interrupted: false,
            }
        }
    };
    let root = LatticeNode {
        state: root_state,
        t: 0.0,
        v: ctx.ego.v.max(0.0),
        a: ctx.ego.a,
        layer: 0,
        station: 0,
        kind: NodeKind::Root,
    };
    let req = LatticeRequest {
        ego: root,
        v_desired: ctx.v_desired,
        l_desired: ctx.l_desired,
        static_obstacles: ctx.static_obstacles,
        deadline,
    };
    let lat = match build_lattice_cached(&req, road, cfg, cache) {
        Ok(l) => l,
        Err(_) => {
            return PlanOutcome {
                trajectory: fallback_trajectory(ctx, road, cfg),
                candidates: 0,
                pruned: PruneStats::default(),
                interrupted: deadline.is_some_and(|d| Instant::now() >= d),
            }
        }
    };

    let scene = build_scene(ctx, road, cfg);
    let mut search = Search {
        scene: &scene,
        lat: &lat,
        spatial: vec![None; lat.spatial.len()],
        edges: vec![None; lat.edges.len()],
        pruned: lat.pruned.clone(),
        deadline,
        interrupted: lat.pruned.deadline > 0,
    };
    let (best, candidates) = run_search(&mut search, candidates_out);
    let interrupted = search.interrupted;
    let mut pruned = search.pruned;
    if interrupted && pruned.deadline == 0 {
        pruned.deadline = 1;
    }
    let trajectory = match best {
        Some(b) if b.edges.is_empty() => hold_trajectory(ctx, cfg, b.breakdown),
        Some(b) => {
            let segments: Vec<TrajectorySegment> = b
                .edges
                .iter()
                .map(|&e| {
                    let edge = &lat.edges[e];
                    TrajectorySegment {
                        samples: lat.spatial[edge.spatial].samples.clone(),
                        profile: edge.profile,
                    }
                })
                .collect();
            let waypoints = to_waypoints(&segments, cfg.waypoint_dt, cfg.waypoint_horizon);
            Trajectory {
                kind: TrajectoryKind::Lattice,
                segments,
                waypoints,
                breakdown: b.breakdown,
            }
        }
        None => fallback_trajectory(ctx, road, cfg),
    };
    PlanOutcome {
        trajectory,
        candidates,
        pruned,
        interrupted,
    }
}

/// Per-cycle trace record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanRecord {
    pub t: f64,
    pub behavior: BehaviorState,
    pub v_desired: f64,
    pub l_desired: f64,
    pub safety: SafetyAssessment,
    pub candidates: usize,
    pub pruned: PruneStats,
    pub interrupted: bool,
    pub kind: TrajectoryKind,
    pub breakdown: CostBreakdown,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub wall_ms: Option<f64>,
    pub waypoints: Vec<Waypoint>,
}

/// Stateful planner: behavior, previous plan and BVP warm starts carried
/// from one cycle to the next.
#[derive(Debug, Clone)]
pub struct Planner {
    pub cfg: PlannerConfig,
    pub behavior: BehaviorState,
    pub previous: Option<Trajectory>,
    cache: BvpCache,
    last_s: Option<f64>,
    /// Disables the wall-clock budget, for reproducible runs.
    pub unlimited_budget: bool,
}

impl Planner {
    pub fn new(cfg: PlannerConfig) -> Self {
        Self {
            cfg,
            behavior: BehaviorState::default(),
            previous: None,
            cache: BvpCache::new(),
            last_s: None,
            unlimited_budget: false,
        }
    }

    pub fn cache(&self) -> &BvpCache {
        &self.cache
    }

    pub fn step(
        &mut self,
        t: f64,
        ego: &EgoState,
        traffic: &[TrafficVehicle],
        static_obstacles: &[OrientedBox],
        road: &RoadModel,
    ) -> Result<(PlanRecord, Trajectory)> {
        self.step_inner(t, ego, traffic, static_obstacles, road, false)
            .map(|(r, tr, _)| (r, tr))
    }

    /// One cycle that also reports every candidate compared.
    pub fn step_with_candidates(
        &mut self,
        t: f64,
        ego: &EgoState,
        traffic: &[TrafficVehicle],
        static_obstacles: &[OrientedBox],
        road: &RoadModel,
    ) -> Result<(PlanRecord, Trajectory, Vec<Candidate>)> {
        self.step_inner(t, ego, traffic, static_obstacles, road, true)
    }

    fn step_inner(
        &mut self,
        t: f64,
        ego: &EgoState,
        traffic: &[TrafficVehicle],
        static_obstacles: &[OrientedBox],
        road: &RoadModel,
        collect: bool,
    ) -> Result<(PlanRecord, Trajectory, Vec<Candidate>)> {
        let started = Instant::now();
        let (s, l) = match self.last_s {
            Some(g) => road.project_near(ego.x, ego.y, g)?,
            None => road.project(ego.x, ego.y)?,
        };
        self.last_s = Some(s);
        let (_, _, th_ref, _) = road
            .reference
            .query_pose(s)
            .map_err(|_| Error::OutOfRange {
                s,
                length: road.length(),
            })?;
        let heading_error = wrap_angle(ego.theta - th_ref);
        let tol = PostMergeTolerance {
            lateral: self.cfg.post_merge_lateral_tol,
            heading: self.cfg.post_merge_heading_tol,
        };
        self.behavior = update_behavior(s, l, heading_error, road, self.behavior, tol);
        let veh = &self.cfg.vehicle;
        let extent = EgoExtent {
            s,
            v: ego.v,
            front: s + veh.length - veh.rear_overhang,
            rear: s - veh.rear_overhang,
        };
        let sensed: Vec<TrafficVehicle> = traffic
            .iter()
            .filter(|v| (v.s - s).abs() <= self.cfg.sensing_range)
            .copied()
            .collect();
        let voi = with_ramp_end(
            select_vehicles_of_interest(&extent, &sensed, self.behavior),
            &extent,
            road,
            self.behavior,
        );
        let ds = desired_speed(
            ego.v,
            &voi,
            road.speed_limit,
            &self.cfg.weights,
            &self.cfg.lookahead,
        );
        let v_desired = match self.cfg.desired_speed_mode {
            DesiredSpeedMode::SafetyFactor => ds.v,
            DesiredSpeedMode::SpeedLimit => road.speed_limit,
        };
        let l_desired = goal_lateral(self.behavior, road);
        let ctx = PlanContext {
            ego: *ego,
            s,
            l,
            previous: self.previous.as_ref(),
            traffic: &sensed,
            behavior: self.behavior,
            v_desired,
            l_desired,
            static_obstacles,
            time_budget: if self.unlimited_budget {
                None
            } else {
                Some(Duration::from_secs_f64(self.cfg.time_budget))
            },
        };
        let (out, candidates) = if collect {
            plan_cycle_candidates(&ctx, road, &self.cfg, &mut self.cache)
        } else {
            (
                plan_cycle(&ctx, road, &self.cfg, &mut self.cache),
                Vec::new(),
            )
        };
        let record = PlanRecord {
            t,
            behavior: self.behavior,
            v_desired,
            l_desired,
            safety: ds.assessment,
            candidates: out.candidates,
            pruned: out.pruned,
            interrupted: out.interrupted,
            kind: out.trajectory.kind,
            breakdown: out.trajectory.breakdown,
            wall_ms: Some(started.elapsed().as_secs_f64() * 1e3),
            waypoints: out.trajectory.waypoints.clone(),
        };
        self.previous = Some(out.trajectory.clone());
        Ok((record, out.trajectory, candidates))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::tests::straight_road;

    fn ctx<'a>(
        road: &RoadModel,
        s: f64,
        l: f64,
        v: f64,
        traffic: &'a [TrafficVehicle],
    ) -> PlanContext<'a> {
        let st = road.state_at(s, l).unwrap();
        PlanContext {
            ego: EgoState {
                x: st.x,
                y: st.y,
                theta: st.theta,
                kappa: st.kappa,
                v,
                a: 0.0,
            },
            s,
            l,
            previous: None,
            traffic,
            behavior: BehaviorState::PreMergeBeforeHardNose,
            v_desired: v,
            l_desired: l,
            static_obstacles: &[],
            time_budget: None,
        }
    }

    #[test]
    fn open_road_holds_lane_and_speed() {
        let road = straight_road();
        let cfg = PlannerConfig::default();
        let c = ctx(&road, 20.0, 1.75, 15.0, &[]);
        let out = plan_cycle(&c, &road, &cfg, &mut BvpCache::new());
        let tr = out.trajectory;
        assert_eq!(tr.kind, TrajectoryKind::Lattice);
        assert!(
            tr.breakdown.velocity < 1e-9 && tr.breakdown.center < 1e-9,
            "{:?}",
            tr.breakdown
        );
        assert!(tr
            .waypoints
            .iter()
            .all(|w| (w.l - 1.75).abs() < 1e-6 && (w.v - 15.0).abs() < 1e-9));
        assert_eq!(tr.waypoints.len(), 51);
    }

    #[test]
    fn candidate_list_contains_the_choice() {
        let road = straight_road();
        let cfg = PlannerConfig::default();
        let traffic = [TrafficVehicle {
            id: 1,
            lane: Lane::Main,
            s: 140.0,
            v: 18.0,
            length: 4.6,
            width: 1.85,
        }];
        let mut c = ctx(&road, 150.0, 1.75, 12.0, &traffic);
        c.behavior = BehaviorState::MergeInitiation;
        c.l_desired = 5.25;
        let plain = plan_cycle(&c, &road, &cfg, &mut BvpCache::new());
        let (out, list) = plan_cycle_candidates(&c, &road, &cfg, &mut BvpCache::new());
        assert_eq!(plain, out);
        assert!(list.len() >= out.candidates);
        let chosen: Vec<_> = list.iter().filter(|c| c.selected).collect();
        assert_eq!(chosen.len(), 1);
        assert_eq!(chosen[0].breakdown, out.trajectory.breakdown);
        assert!(list
            .iter()
            .all(|c| c.breakdown.total >= chosen[0].breakdown.total));
    }

    #[test]
    fn lower_center_cost_wins() {
        let road = straight_road();
        let cfg = PlannerConfig::default();
        let mut c = ctx(&road, 150.0, 1.75, 15.0, &[]);
        c.behavior = BehaviorState::MergeInitiation;
        c.l_desired = 5.25;
        let tr = plan_cycle(&c, &road, &cfg, &mut BvpCache::new()).trajectory;
        let end = tr.segments.last().unwrap().samples.last().unwrap();
        assert!((end.l - 5.25).abs() < 1.0, "end l {}", end.l);
    }

    #[test]
    fn waypoints_follow_profile() {
        let road = straight_road();
        let cfg = PlannerConfig::default();
        let c = ctx(&road, 20.0, 1.75, 10.0, &[]);
        let mut c2 = c.clone();
        c2.v_desired = 14.0;
        let tr = plan_cycle(&c2, &road, &cfg, &mut BvpCache::new()).trajectory;
        let mut t0 = 0.0;
        for w in &tr.waypoints {
            let mut k = 0;
            t0 = 0.0;
            while k + 1 < tr.segments.len() && w.t > t0 + tr.segments[k].profile.duration {
                t0 += tr.segments[k].profile.duration;
                k += 1;
            }
            let p = &tr.segments[k].profile;
            assert!((w.v - p.velocity(w.t - t0)).abs() < 1e-9);
            assert!((w.a - p.accel(w.t - t0)).abs() < 1e-9);
        }
        let _ = t0;
        // Uniform motion gives 1 m spacing at 10 m/s.
        let flat = plan_cycle(&c, &road, &cfg, &mut BvpCache::new()).trajectory;
        assert_eq!(flat.waypoints.len(), 51);
        for p in flat.waypoints.windows(2) {
            assert!((p[1].x - p[0].x - 1.0).abs() < 1e-6);
        }
        assert!(to_waypoints(&[], 0.1, 5.0).is_empty());
        let short = to_waypoints(&flat.segments[..1], 0.1, 5.0);
        assert!(short.last().unwrap().t <= flat.segments[0].profile.duration + 1e-12);
    }

    /// Enumerates every root-to-terminal path of the lattice.
    #[test]
    fn search_matches_enumeration() {
        let road = straight_road();
        let mut cfg = PlannerConfig::default();
        cfg.lattice.layers = 2;
        cfg.lattice.stations_per_lane = 2;
        cfg.lattice.accel_samples = 3;
        let traffic = [TrafficVehicle {
            id: 1,
            lane: Lane::Main,
            s: 140.0,
            v: 18.0,
            length: 4.6,
            width: 1.85,
        }];
        for (s, v, vd, beh) in [
            (150.0, 12.0, 16.0, BehaviorState::MergeInitiation),
            (20.0, 15.0, 10.0, BehaviorState::PreMergeBeforeHardNose),
            (120.0, 8.0, 8.0, BehaviorState::MergeInitiation),
        ] {
            let mut c = ctx(&road, s, 1.75, v, &traffic);
            c.behavior = beh;
            c.v_desired = vd;
            c.l_desired = goal_lateral(beh, &road);
            let out = plan_cycle(&c, &road, &cfg, &mut BvpCache::new());
            let oracle = exhaustive_best(&c, &road, &cfg).unwrap().unwrap().total;
            let got = out.trajectory.breakdown.total;
            assert_eq!(got, oracle);
        }
    }

    #[test]
    fn deterministic_without_budget() {
        let road = straight_road();
        let cfg = PlannerConfig::default();
        let traffic = [TrafficVehicle {
            id: 1,
            lane: Lane::Main,
            s: 150.0,
            v: 20.0,
            length: 4.6,
            width: 1.85,
        }];
        let mut c = ctx(&road, 110.0, 1.75, 15.0, &traffic);
        c.behavior = BehaviorState::MergeInitiation;
        c.l_desired = 5.25;
        let a = plan_cycle(&c, &road, &cfg, &mut BvpCache::new()).trajectory;
        let b = plan_cycle(&c, &road, &cfg, &mut BvpCache::new()).trajectory;
        assert_eq!(a.waypoints, b.waypoints);
    }

    #[test]
    fn anytime_never_worse_with_more_time() {
        let road = straight_road();
        let cfg = PlannerConfig::default();
        let mut c = ctx(&road, 110.0, 1.75, 15.0, &[]);
        c.behavior = BehaviorState::MergeInitiation;
        c.l_desired = 5.25;
        let full = plan_cycle(&c, &road, &cfg, &mut BvpCache::new())
            .trajectory
            .breakdown
            .total;
        for us in [0u64, 200, 2000, 20000] {
            c.time_budget = Some(Duration::from_micros(us));
            let r = plan_cycle(&c, &road, &cfg, &mut BvpCache::new())
                .trajectory
                .breakdown
                .total;
            assert!(full <= r, "{us}: {full} > {r}");
        }
    }

    #[test]
    fn fallback_without_previous_plan_stops_straight() {
        let road = straight_road();
        let cfg = PlannerConfig::default();
        let wall = [OrientedBox::new(40.0, 3.5, 0.0, 4.0, 9.0)];
        let mut c = ctx(&road, 20.0, 1.75, 10.0, &[]);
        c.static_obstacles = &wall;
        let tr = plan_cycle(&c, &road, &cfg, &mut BvpCache::new()).trajectory;
        assert_eq!(tr.kind, TrajectoryKind::Fallback);
        assert!(tr.breakdown.infeasible);
        let last = tr.waypoints.last().unwrap();
        assert_eq!(last.v, 0.0);
        assert!((last.x - (20.0 + 25.0)).abs() < 1e-9 && (last.y - 1.75).abs() < 1e-9);
    }

    #[test]
    fn consecutive_cycles_agree() {
        let road = straight_road();
        for (s, l, v) in [(40.0, 1.75, 15.0), (40.0, 1.45, 15.0), (40.0, 2.0, 8.0)] {
            let mut p = Planner::new(PlannerConfig::default());
            p.unlimited_budget = true;
            let st = road.state_at(s, l).unwrap();
            let mut ego = EgoState {
                x: st.x,
                y: st.y,
                theta: st.theta,
                kappa: 0.0,
                v,
                a: 0.0,
            };
            let (_, first) = p.step(0.0, &ego, &[], &[], &road).unwrap();
            let w1 = first.waypoints[1];
            ego = EgoState {
                x: w1.x,
                y: w1.y,
                theta: w1.theta,
                kappa: w1.kappa,
                v: w1.v,
                a: w1.a,
            };
            let (_, second) = p.step(0.1, &ego, &[], &[], &road).unwrap();
            // Distance from each new path point to the old path.
            let old = first.previous_path();
            for w in &second.waypoints {
                if let Some(lo) = old.l_at(w.s) {
                    assert!(
                        (lo - w.l).abs() < 0.1,
                        "start l={l} s={} {} vs {}",
                        w.s,
                        w.l,
                        lo
                    );
                }
            }
        }
    }
}
