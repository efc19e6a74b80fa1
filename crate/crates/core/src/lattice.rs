use std::collections::HashMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::config::{BvpConfig, LatticeConfig, LookaheadConfig, PlannerConfig, VehicleParams};
use crate::error::{Error, Result};
use crate::geometry::{Lane, RoadModel, StaticState};
use crate::math::{linspace, wrap_angle};
use crate::obb::OrientedBox;
use crate::spline::{eval_cubic_rate, integrate_path_n, solve_bvp, PathSegment, SplineParams};

pub fn lookahead_distance(v: f64, cfg: &LookaheadConfig) -> f64 {
    (v * cfg.t_horizon).clamp(cfg.d_min, cfg.d_max)
}

/// Lateral stations across every lane that exists at `s_layer`, merge lane
/// first, each lane ordered by increasing `l`.
pub fn sample_layer_states(
    road: &RoadModel,
    s_layer: f64,
    cfg: &LatticeConfig,
) -> Vec<StaticState> {
    let mut bands = Vec::with_capacity(2);
    if s_layer < road.s_ramp_end {
        bands.push((0.0, road.w_merge));
    }
    bands.push((road.w_merge, road.outer_edge()));
    let mut out = Vec::new();
    for (lo, hi) in bands {
        let (a, b) = (lo + cfg.lateral_margin, hi - cfg.lateral_margin);
        let ls = if cfg.stations_per_lane == 1 || a >= b {
            vec![0.5 * (lo + hi)]
        } else {
            linspace(a, b, cfg.stations_per_lane)
        };
        for l in ls {
            if road.lane_membership(s_layer, l) == Lane::OffRoad {
                continue;
            }
            if let Ok(st) = road.state_at(s_layer, l) {
                out.push(st);
            }
        }
    }
    out
}

pub fn acceleration_grid(cfg: &LatticeConfig) -> Vec<f64> {
    linspace(cfg.accel_range[0], cfg.accel_range[1], cfg.accel_samples)
}

/// Sign filter: no braking below the desired speed, no accelerating above it.
pub fn accel_allowed(a: f64, v_node: f64, v_desired: f64) -> bool {
    !((v_desired > v_node && a < 0.0) || (v_desired < v_node && a > 0.0))
}

/// Acceleration candidates for an edge of length `edge_length` leaving a
/// node at `v_node`.
pub fn sample_accelerations(
    v_node: f64,
    v_desired: f64,
    edge_length: f64,
    cfg: &LatticeConfig,
) -> Vec<f64> {
    acceleration_grid(cfg)
        .into_iter()
        .filter(|&a| accel_allowed(a, v_node, v_desired))
        .filter(|&a| v_node * v_node + 2.0 * a * edge_length >= 0.0)
        .collect()
}

/// v(t) = v0 + a0 t + c2 t² + c3 t³ on [0, duration].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VelocityProfile {
    pub v0: f64,
    pub a0: f64,
    pub c2: f64,
    pub c3: f64,
    pub duration: f64,
}

impl VelocityProfile {
    /// Cubic matching speed and acceleration at both ends of [0, t].
    pub fn hermite(v0: f64, a0: f64, v_t: f64, a_t: f64, t: f64) -> Self {
        let dv = v_t - v0 - a0 * t;
        let da = a_t - a0;
        let c2 = 3.0 * dv / (t * t) - da / t;
        let c3 = -2.0 * dv / (t * t * t) + da / (t * t);
        Self {
            v0,
            a0,
            c2,
            c3,
            duration: t,
        }
    }

    /// Hermite cubic whose integral over its duration equals `distance`.
    pub fn hermite_over_distance(
        v0: f64,
        a0: f64,
        v_t: f64,
        a_t: f64,
        distance: f64,
    ) -> Result<Self> {
        // ∫v dt = T (v0 + vT)/2 + T² (a0 − aT)/12 for the Hermite cubic.
        let qa = (a0 - a_t) / 12.0;
        let qb = 0.5 * (v0 + v_t);
        let disc = qb * qb + 4.0 * qa * distance;
        if !(distance > 0.0) || disc < 0.0 {
            return Err(Error::DegenerateProfile(
                "no duration covers the distance".into(),
            ));
        }
        let den = qb + disc.sqrt();
        if !(den > 0.0) {
            return Err(Error::DegenerateProfile("zero-motion edge".into()));
        }
        let t = 2.0 * distance / den;
        if !(t.is_finite() && t > 0.0) {
            return Err(Error::DegenerateProfile("non-finite duration".into()));
        }
        Ok(Self::hermite(v0, a0, v_t, a_t, t))
    }

    pub fn velocity(&self, t: f64) -> f64 {
        self.v0 + t * (self.a0 + t * (self.c2 + t * self.c3))
    }

    pub fn accel(&self, t: f64) -> f64 {
        self.a0 + t * (2.0 * self.c2 + 3.0 * t * self.c3)
    }

    pub fn jerk(&self, t: f64) -> f64 {
        2.0 * self.c2 + 6.0 * self.c3 * t
    }

    pub fn distance(&self, t: f64) -> f64 {
        t * (self.v0 + t * (0.5 * self.a0 + t * (self.c2 / 3.0 + 0.25 * t * self.c3)))
    }

    pub fn end_velocity(&self) -> f64 {
        self.velocity(self.duration)
    }

    pub fn end_accel(&self) -> f64 {
        self.accel(self.duration)
    }

    pub fn length(&self) -> f64 {
        self.distance(self.duration)
    }

    /// ∫₀ᵀ ȧ(t)² dt in closed form.
    pub fn jerk_cost(&self) -> f64 {
        let (a, b, t) = (2.0 * self.c2, 6.0 * self.c3, self.duration);
        t * (a * a + t * (a * b + t * b * b / 3.0))
    }

    fn accel_roots(&self) -> [Option<f64>; 2] {
        let (qa, qb, qc) = (3.0 * self.c3, 2.0 * self.c2, self.a0);
        let inside = |t: f64| (t > 0.0 && t < self.duration).then_some(t);
        if qa.abs() < 1e-14 {
            if qb.abs() < 1e-14 {
                return [None, None];
            }
            return [inside(-qc / qb), None];
        }
        let disc = qb * qb - 4.0 * qa * qc;
        if disc < 0.0 {
            return [None, None];
        }
        let r = disc.sqrt();
        [
            inside((-qb - r) / (2.0 * qa)),
            inside((-qb + r) / (2.0 * qa)),
        ]
    }

    pub fn min_velocity(&self) -> f64 {
        let mut m = self.v0.min(self.end_velocity());
        for t in self.accel_roots().into_iter().flatten() {
            m = m.min(self.velocity(t));
        }
        m
    }

    pub fn max_velocity(&self) -> f64 {
        let mut m = self.v0.max(self.end_velocity());
        for t in self.accel_roots().into_iter().flatten() {
            m = m.max(self.velocity(t));
        }
        m
    }

    /// (min, max) of a(t) over the profile.
    pub fn accel_range(&self) -> (f64, f64) {
        let (a, b) = (self.a0, self.end_accel());
        let (mut lo, mut hi) = (a.min(b), a.max(b));
        if self.c3.abs() > 1e-14 {
            let t = -self.c2 / (3.0 * self.c3);
            if t > 0.0 && t < self.duration {
                let v = self.accel(t);
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        (lo, hi)
    }

    pub fn is_valid(&self, accel_lo: f64, accel_hi: f64) -> bool {
        let (lo, hi) = self.accel_range();
        self.duration > 0.0
            && self.min_velocity() >= -1e-9
            && lo >= accel_lo - 1e-9
            && hi <= accel_hi + 1e-9
    }

    /// Time at which the travelled distance reaches `d`, clamped to the profile.
    pub fn time_at_distance(&self, d: f64) -> f64 {
        if d <= 0.0 {
            return 0.0;
        }
        let total = self.length();
        if d >= total {
            return self.duration;
        }
        let (mut lo, mut hi) = (0.0, self.duration);
        let mut t = self.duration * d / total;
        for _ in 0..60 {
            let f = self.distance(t) - d;
            if f.abs() < 1e-12 {
                break;
            }
            if f > 0.0 {
                hi = t;
            } else {
                lo = t;
            }
            if hi - lo < 1e-13 {
                break;
            }
            let v = self.velocity(t);
            let next = if v > 1e-6 { t - f / v } else { f64::NAN };
            t = if next > lo && next < hi {
                next
            } else {
                0.5 * (lo + hi)
            };
        }
        t
    }
}

/// Profile for a constant-acceleration target: the end speed is what
/// `a_edge` would reach over `s_f`, and the end acceleration is `a_edge`.
pub fn velocity_profile(v0: f64, a0: f64, a_edge: f64, s_f: f64) -> Result<VelocityProfile> {
    if v0 <= 0.0 && a_edge <= 0.0 {
        return Err(Error::DegenerateProfile("zero-motion edge".into()));
    }
    let sq = v0 * v0 + 2.0 * a_edge * s_f;
    if sq < 0.0 {
        return Err(Error::DegenerateProfile("speed would go negative".into()));
    }
    VelocityProfile::hermite_over_distance(v0, a0, sq.sqrt(), a_edge, s_f)
}

/// A path sample with its Frenet coordinates on the road.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeSample {
    /// Arc length along the edge.
    pub sigma: f64,
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub kappa: f64,
    pub dkappa: f64,
    pub s: f64,
    pub l: f64,
    /// Heading relative to the reference tangent.
    pub dtheta: f64,
}

pub fn edge_samples(
    segment: &PathSegment,
    road: &RoadModel,
    s_from: f64,
    s_to: f64,
) -> Vec<EdgeSample> {
    let a = segment.params.coeffs();
    let len = segment.params.length;
    segment
        .poses
        .iter()
        .map(|p| {
            let guess = s_from + (s_to - s_from) * p.s / len;
            let (s, l) = road.reference.project_local(p.x, p.y, guess);
            let (_, _, th_ref, _) = road.reference.pose_clamped(s);
            EdgeSample {
                sigma: p.s,
                x: p.x,
                y: p.y,
                theta: p.theta,
                kappa: p.kappa,
                dkappa: eval_cubic_rate(&a, p.s),
                s,
                l,
                dtheta: wrap_angle(p.theta - th_ref),
            }
        })
        .collect()
}

/// Whether every footprint corner along the samples stays inside the road,
/// with the lane line closed before `line_end`.
pub fn footprint_on_road(
    samples: &[EdgeSample],
    road: &RoadModel,
    vehicle: &VehicleParams,
    margin: f64,
    line_end: f64,
) -> bool {
    let front = vehicle.length - vehicle.rear_overhang;
    let back = -vehicle.rear_overhang;
    let half = 0.5 * vehicle.width + margin;
    samples.iter().all(|p| {
        let (sin, cos) = p.dtheta.sin_cos();
        [(front, half), (front, -half), (back, half), (back, -half)]
            .iter()
            .all(|&(dx, dy)| {
                let s = p.s + dx * cos - dy * sin;
                let l = p.l + dx * sin + dy * cos;
                road.corner_inside(s, l, line_end)
            })
    })
}

pub fn ego_box(x: f64, y: f64, theta: f64, vehicle: &VehicleParams, inflation: f64) -> OrientedBox {
    OrientedBox::from_rear_axle(
        x,
        y,
        theta,
        vehicle.length,
        vehicle.width,
        vehicle.rear_overhang,
        inflation,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StationRef {
    /// Layer 0 is the root.
    pub layer: usize,
    pub station: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialEdge {
    pub from: StationRef,
    pub to: StationRef,
    pub segment: PathSegment,
    pub samples: Vec<EdgeSample>,
    pub max_abs_dkappa: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NodeKind {
    Root,
    /// Constant-acceleration track, indexing [`Lattice::tracks`].
    Track(usize),
    Stop,
}

/// Lattice state. Speed, acceleration and time are pinned by the node's
/// track so that edge costs never depend on the path taken to reach it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatticeNode {
    pub state: StaticState,
    pub t: f64,
    pub v: f64,
    pub a: f64,
    pub layer: usize,
    pub station: usize,
    pub kind: NodeKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatticeEdge {
    pub from: usize,
    pub to: usize,
    pub spatial: usize,
    pub profile: VelocityProfile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    /// Reference arc length of the layer.
    pub s: f64,
    /// Reference distance from the root.
    pub distance: f64,
    pub stations: Vec<StaticState>,
    /// Station indices by increasing distance from the goal line.
    pub order: Vec<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PruneStats {
    pub lateral_slope: usize,
    pub bvp_failure: usize,
    pub curvature: usize,
    pub off_road: usize,
    pub static_collision: usize,
    pub profile: usize,
    pub curvature_rate: usize,
    pub obstacle_overlap: usize,
    pub simultaneous_arrival: usize,
    pub deadline: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lattice {
    pub layers: Vec<Layer>,
    pub tracks: Vec<f64>,
    pub nodes: Vec<LatticeNode>,
    pub spatial: Vec<SpatialEdge>,
    pub edges: Vec<LatticeEdge>,
    /// Outgoing edge ids per node, in search order.
    pub outgoing: Vec<Vec<usize>>,
    pub lookahead: f64,
    pub v_desired: f64,
    pub pruned: PruneStats,
    /// Whether the root itself may be kept as a standstill plan.
    pub root_hold: bool,
}

impl Lattice {
    pub fn root(&self) -> &LatticeNode {
        &self.nodes[0]
    }
}

/// Inputs to lattice construction beyond the road and configuration.
#[derive(Debug, Clone)]
pub struct LatticeRequest<'a> {
    pub ego: LatticeNode,
    pub v_desired: f64,
    pub l_desired: f64,
    pub static_obstacles: &'a [OrientedBox],
    pub deadline: Option<Instant>,
}

type GeomKey = [i64; 5];

/// BVP results reused within and across planning cycles.
#[derive(Debug, Default, Clone)]
pub struct BvpCache {
    exact: HashMap<GeomKey, Option<SplineParams>>,
    warm: HashMap<(usize, usize, usize), SplineParams>,
    pub solves: usize,
    pub hits: usize,
}

fn geometry_key(a: &StaticState, b: &StaticState) -> GeomKey {
    let (sin, cos) = a.theta.sin_cos();
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let lx = dx * cos + dy * sin;
    let ly = -dx * sin + dy * cos;
    let q = |v: f64, scale: f64| (v * scale).round() as i64;
    [
        q(lx, 1e5),
        q(ly, 1e5),
        q(wrap_angle(b.theta - a.theta), 1e6),
        q(a.kappa, 1e7),
        q(b.kappa, 1e7),
    ]
}

impl BvpCache {
    pub fn new() -> Self {
        Self::default()
    }

    /// Solves (or recalls) the spline joining two states. `slot` identifies
    /// the station pair for warm starts across cycles.
    pub fn solve(
        &mut self,
        from: &StaticState,
        to: &StaticState,
        slot: (usize, usize, usize),
        cfg: &BvpConfig,
    ) -> Option<SplineParams> {
        let key = geometry_key(from, to);
        if let Some(hit) = self.exact.get(&key) {
            self.hits += 1;
            return hit.map(|p| {
                SplineParams::new([from.kappa, p.knots[1], p.knots[2], to.kappa], p.length)
            });
        }
        self.solves += 1;
        let warm = self.warm.get(&slot).copied();
        let mut sol = solve_bvp(from, to, warm.as_ref(), cfg).ok();
        if sol.is_none() && warm.is_some() {
            sol = solve_bvp(from, to, None, cfg).ok();
        }
        let params = sol.map(|s| s.params);
        if self.exact.len() > 200_000 {
            self.exact.clear();
        }
        self.exact.insert(key, params);
        if let Some(p) = params {
            self.warm.insert(slot, p);
        }
        params
    }
}

/// Builds the lattice with a throwaway BVP cache.
pub fn build_lattice(
    req: &LatticeRequest,
    road: &RoadModel,
    cfg: &PlannerConfig,
) -> Result<Lattice> {
    build_lattice_cached(req, road, cfg, &mut BvpCache::new())
}

fn track_state(v0: f64, a: f64, d: f64) -> Option<(f64, f64)> {
    let sq = v0 * v0 + 2.0 * a * d;
    if sq <= 0.0 {
        return None;
    }
    let v = sq.sqrt();
    let t = if a == 0.0 { d / v0 } else { (v - v0) / a };
    Some((v, t))
}

pub fn build_lattice_cached(
    req: &LatticeRequest,
    road: &RoadModel,
    cfg: &PlannerConfig,
    cache: &mut BvpCache,
) -> Result<Lattice> {
    let lc = &cfg.lattice;
    let vehicle = &cfg.vehicle;
    let ego = req.ego;
    let v0 = ego.v;
    let lookahead = lookahead_distance(v0, &cfg.lookahead);
    let tracks = acceleration_grid(lc);
    let (a_lo, a_hi) = (lc.accel_range[0], lc.accel_range[1]);
    let kappa_max = vehicle.max_curvature();
    let mut pruned = PruneStats::default();
    let past_deadline = || req.deadline.is_some_and(|d| Instant::now() >= d);

    let mut layers = vec![Layer {
        s: ego.state.s,
        distance: 0.0,
        stations: vec![ego.state],
        order: vec![0],
    }];
    for k in 1..=lc.layers {
        let d = lookahead * k as f64 / lc.layers as f64;
        let s = ego.state.s + d;
        if s >= road.length() {
            break;
        }
        let stations = sample_layer_states(road, s, lc);
        let mut order: Vec<usize> = (0..stations.len()).collect();
        order.sort_by(|&i, &j| {
            let di = (stations[i].l - req.l_desired).abs();
            let dj = (stations[j].l - req.l_desired).abs();
            di.total_cmp(&dj).then(i.cmp(&j))
        });
        layers.push(Layer {
            s,
            distance: d,
            stations,
            order,
        });
    }

    // Nodes.
    let mut nodes = vec![LatticeNode {
        layer: 0,
        station: 0,
        kind: NodeKind::Root,
        ..ego
    }];
    let mut track_nodes: Vec<Vec<Vec<Option<usize>>>> = vec![Vec::new()];
    let mut stop_nodes: Vec<Vec<usize>> = vec![Vec::new()];
    for (k, layer) in layers.iter().enumerate().skip(1) {
        let mut per_station = Vec::with_capacity(layer.stations.len());
        let mut stops = Vec::with_capacity(layer.stations.len());
        for (j, st) in layer.stations.iter().enumerate() {
            let mut per_track = Vec::with_capacity(tracks.len());
            for (m, &a) in tracks.iter().enumerate() {
                per_track.push(track_state(v0, a, layer.distance).map(|(v, t)| {
                    nodes.push(LatticeNode {
                        state: *st,
                        t,
                        v,
                        a,
                        layer: k,
                        station: j,
                        kind: NodeKind::Track(m),
                    });
                    nodes.len() - 1
                }));
            }
            per_station.push(per_track);
            let t_stop = if v0 > 0.0 {
                2.0 * layer.distance / v0
            } else {
                f64::INFINITY
            };
            nodes.push(LatticeNode {
                state: *st,
                t: t_stop,
                v: 0.0,
                a: 0.0,
                layer: k,
                station: j,
                kind: NodeKind::Stop,
            });
            stops.push(nodes.len() - 1);
        }
        track_nodes.push(per_station);
        stop_nodes.push(stops);
    }

    let mut spatial = Vec::new();
    let mut edges: Vec<LatticeEdge> = Vec::new();
    let mut outgoing: Vec<Vec<usize>> = vec![Vec::new(); nodes.len()];
    let mut track_order: Vec<usize> = (0..tracks.len()).collect();
    track_order.sort_by(|&i, &j| tracks[i].abs().total_cmp(&tracks[j].abs()).then(i.cmp(&j)));

    'layers: for k in 0..layers.len().saturating_sub(1) {
        let (from_layer, to_layer) = (&layers[k], &layers[k + 1]);
        for &i in &from_layer.order {
            let from_st = from_layer.stations[i];
            let from_ids: Vec<usize> = if k == 0 {
                vec![0]
            } else {
                track_nodes[k][i].iter().flatten().copied().collect()
            };
            for &j in &to_layer.order {
                if past_deadline() {
                    pruned.deadline += 1;
                    break 'layers;
                }
                let to_st = to_layer.stations[j];
                let ds = to_layer.s - from_layer.s;
                if (to_st.l - from_st.l).abs() > lc.max_lateral_slope * ds {
                    pruned.lateral_slope += 1;
                    continue;
                }
                let Some(params) = cache.solve(&from_st, &to_st, (k, i, j), &cfg.bvp) else {
                    pruned.bvp_failure += 1;
                    continue;
                };
                let segment = integrate_path_n(&params, &from_st, lc.path_intervals);
                let samples = edge_samples(&segment, road, from_layer.s, to_layer.s);
                if samples.iter().any(|p| p.kappa.abs() > kappa_max) {
                    pruned.curvature += 1;
                    continue;
                }
                if !footprint_on_road(&samples, road, vehicle, 0.0, road.s_soft_nose) {
                    pruned.off_road += 1;
                    continue;
                }
                if !req.static_obstacles.is_empty()
                    && samples.iter().any(|p| {
                        let b = ego_box(p.x, p.y, p.theta, vehicle, cfg.footprint_inflation);
                        req.static_obstacles.iter().any(|o| o.overlaps(&b))
                    })
                {
                    pruned.static_collision += 1;
                    continue;
                }
                let max_abs_dkappa = samples.iter().map(|p| p.dkappa.abs()).fold(0.0, f64::max);
                let sp_id = spatial.len();
                let s_f = params.length;
                spatial.push(SpatialEdge {
                    from: StationRef {
                        layer: k,
                        station: i,
                    },
                    to: StationRef {
                        layer: k + 1,
                        station: j,
                    },
                    segment,
                    samples,
                    max_abs_dkappa,
                });
                let sp = &spatial[sp_id];

                for &from in &from_ids {
                    let fnode = nodes[from];
                    let mut push =
                        |to: usize, profile: VelocityProfile, pruned: &mut PruneStats| {
                            if !profile.is_valid(a_lo, a_hi) {
                                pruned.profile += 1;
                                return;
                            }
                            if !curvature_rate_ok(sp, &profile, vehicle) {
                                pruned.curvature_rate += 1;
                                return;
                            }
                            outgoing[from].push(edges.len());
                            edges.push(LatticeEdge {
                                from,
                                to,
                                spatial: sp_id,
                                profile,
                            });
                        };
                    for &m in &track_order {
                        let Some(to) = track_nodes[k + 1][j][m] else {
                            continue;
                        };
                        if !accel_allowed(tracks[m], fnode.v, req.v_desired) {
                            continue;
                        }
                        let tn = nodes[to];
                        match VelocityProfile::hermite_over_distance(
                            fnode.v, fnode.a, tn.v, tn.a, s_f,
                        ) {
                            Ok(p) => push(to, p, &mut pruned),
                            Err(_) => pruned.profile += 1,
                        }
                    }
                    if accel_allowed(-1.0, fnode.v, req.v_desired) && fnode.v > 0.0 {
                        let to = stop_nodes[k + 1][j];
                        match VelocityProfile::hermite_over_distance(
                            fnode.v, fnode.a, 0.0, 0.0, s_f,
                        ) {
                            Ok(p) => push(to, p, &mut pruned),
                            Err(_) => pruned.profile += 1,
                        }
                    }
                }
            }
        }
    }

    let root_hold = v0 < lc.stop_speed;
    if outgoing[0].is_empty() && !root_hold {
        return Err(Error::EmptyLattice);
    }
    Ok(Lattice {
        layers,
        tracks,
        nodes,
        spatial,
        edges,
        outgoing,
        lookahead,
        v_desired: req.v_desired,
        pruned,
        root_hold,
    })
}

fn curvature_rate_ok(sp: &SpatialEdge, profile: &VelocityProfile, vehicle: &VehicleParams) -> bool {
    if sp.max_abs_dkappa <= vehicle.max_curvature_rate(profile.max_velocity()) {
        return true;
    }
    sp.samples.iter().all(|p| {
        let v = profile.velocity(profile.time_at_distance(p.sigma));
        p.dkappa.abs() <= vehicle.max_curvature_rate(v)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::tests::straight_road;
    use proptest::prelude::*;

    fn ego_at(road: &RoadModel, s: f64, l: f64, v: f64) -> LatticeNode {
        LatticeNode {
            state: road.state_at(s, l).unwrap(),
            t: 0.0,
            v,
            a: 0.0,
            layer: 0,
            station: 0,
            kind: NodeKind::Root,
        }
    }

    #[test]
    fn lookahead_examples() {
        let c = LookaheadConfig {
            d_min: 30.0,
            ..LookaheadConfig::default()
        };
        assert_eq!(lookahead_distance(20.0, &c), 120.0);
        assert_eq!(lookahead_distance(0.0, &c), 30.0);
        assert_eq!(lookahead_distance(0.0, &LookaheadConfig::default()), 60.0);
        assert_eq!(lookahead_distance(10.0, &c), 60.0);
    }

    #[test]
    fn station_counts_and_headings() {
        let road = straight_road();
        let c = LatticeConfig::default();
        let st = sample_layer_states(&road, 150.0, &c);
        assert_eq!(st.len(), 10);
        assert!(st.iter().all(|s| s.theta == 0.0));
        assert!((st[0].l - 1.0).abs() < 1e-12 && (st[4].l - 2.5).abs() < 1e-12);
        assert!((st[5].l - 4.5).abs() < 1e-12 && (st[9].l - 6.0).abs() < 1e-12);
        assert_eq!(sample_layer_states(&road, 310.0, &c).len(), 5);
    }

    #[test]
    fn acceleration_filter_examples() {
        let c = LatticeConfig::default();
        let up = sample_accelerations(15.0, 25.0, 30.0, &c);
        let want = [0.0, 2.0 / 3.0, 4.0 / 3.0, 2.0];
        assert_eq!(up.len(), 4);
        for (a, b) in up.iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
        let down = sample_accelerations(25.0, 15.0, 30.0, &c);
        let want = [-2.0, -4.0 / 3.0, -2.0 / 3.0, 0.0];
        for (a, b) in down.iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(sample_accelerations(20.0, 20.0, 30.0, &c).len(), 7);
        // Braking that would stop the car inside the edge is dropped.
        assert_eq!(sample_accelerations(5.0, 0.0, 15.0, &c).len(), 2);
    }

    #[test]
    fn hermite_coefficients() {
        let p = VelocityProfile::hermite(10.0, 0.0, 20.0, 0.0, 5.0);
        // Oracle: solve the 2x2 end conditions directly.
        let m = nalgebra::Matrix2::new(25.0, 125.0, 10.0, 75.0);
        let c = m.lu().solve(&nalgebra::Vector2::new(10.0, 0.0)).unwrap();
        assert!((p.c2 - c[0]).abs() < 1e-12 && (p.c3 - c[1]).abs() < 1e-12);
        assert!((p.c2 - 1.2).abs() < 1e-12 && (p.c3 + 0.16).abs() < 1e-12);
        assert!((p.velocity(5.0) - 20.0).abs() < 1e-12 && p.accel(5.0).abs() < 1e-12);
        assert!((p.jerk_cost() - 9.6).abs() < 1e-12);
    }

    #[test]
    fn constant_speed_profile() {
        let p = velocity_profile(12.0, 0.0, 0.0, 60.0).unwrap();
        assert!(p.c2.abs() < 1e-15 && p.c3.abs() < 1e-15 && (p.duration - 5.0).abs() < 1e-12);
        assert!(velocity_profile(0.0, 0.0, 0.0, 10.0).is_err());
        assert!(velocity_profile(3.0, 0.0, -2.0, 10.0).is_err());
    }

    #[test]
    fn lattice_structure_on_straight_road() {
        let road = straight_road();
        let cfg = PlannerConfig::default();
        let req = LatticeRequest {
            ego: ego_at(&road, 120.0, 1.75, 15.0),
            v_desired: 15.0,
            l_desired: 5.25,
            static_obstacles: &[],
            deadline: None,
        };
        let lat = build_lattice(&req, &road, &cfg).unwrap();
        assert_eq!(lat.layers.len(), 4);
        assert!(lat.spatial.len() <= 10 + 100 + 100);
        let kmax = cfg.vehicle.max_curvature();
        for sp in &lat.spatial {
            assert!(sp.samples.iter().all(|p| p.kappa.abs() <= kmax));
        }
        for n in &lat.nodes {
            assert_ne!(road.lane_membership(n.state.s, n.state.l), Lane::OffRoad);
        }
        for e in &lat.edges {
            let sp = &lat.spatial[e.spatial];
            assert_eq!(sp.from.layer + 1, sp.to.layer);
            assert!((e.profile.length() - sp.segment.params.length).abs() < 1e-3);
            assert!((e.profile.end_velocity() - lat.nodes[e.to].v).abs() < 1e-9);
            assert!((e.profile.end_accel() - lat.nodes[e.to].a).abs() < 1e-9);
            assert!((e.profile.a0 - lat.nodes[e.from].a).abs() < 1e-12);
            assert!(e.profile.min_velocity() >= -1e-9);
            // Spatial edges joined at a node share its curvature exactly.
            assert_eq!(
                sp.segment.poses.last().unwrap().kappa,
                lat.nodes[e.to].state.kappa
            );
        }
    }

    #[test]
    fn standstill_only_accelerates() {
        let road = straight_road();
        let cfg = PlannerConfig::default();
        let req = LatticeRequest {
            ego: ego_at(&road, 120.0, 1.75, 0.0),
            v_desired: 10.0,
            l_desired: 1.75,
            static_obstacles: &[],
            deadline: None,
        };
        let lat = build_lattice(&req, &road, &cfg).unwrap();
        assert!(!lat.outgoing[0].is_empty());
        for &e in &lat.outgoing[0] {
            assert!(lat.nodes[lat.edges[e].to].a >= 0.0);
            assert_ne!(lat.nodes[lat.edges[e].to].kind, NodeKind::Stop);
        }
    }

    #[test]
    fn blocked_stations_give_empty_lattice() {
        let road = straight_road();
        let cfg = PlannerConfig::default();
        let wall = [OrientedBox::new(135.0, 3.5, 0.0, 4.0, 7.0)];
        let req = LatticeRequest {
            ego: ego_at(&road, 120.0, 1.75, 5.0),
            v_desired: 5.0,
            l_desired: 1.75,
            static_obstacles: &wall,
            deadline: None,
        };
        assert!(matches!(
            build_lattice(&req, &road, &cfg),
            Err(Error::EmptyLattice)
        ));
    }

    proptest! {
        #[test]
        fn accepted_profiles_cover_distance(
            v0 in 0.0f64..30.0, a0 in -2.0f64..2.0, vt in 0.0f64..30.0, at in -2.0f64..2.0, d in 5.0f64..80.0
        ) {
            if let Ok(p) = VelocityProfile::hermite_over_distance(v0, a0, vt, at, d) {
                // Composite Simpson with many panels as an independent quadrature.
                let n = 2000;
                let h = p.duration / n as f64;
                let mut acc = p.velocity(0.0) + p.velocity(p.duration);
                for i in 1..n {
                    acc += if i % 2 == 1 { 4.0 } else { 2.0 } * p.velocity(i as f64 * h);
                }
                prop_assert!((acc * h / 3.0 - d).abs() < 1e-3);
                if p.is_valid(-2.0, 2.0) {
                    for i in 0..=200 {
                        let t = p.duration * i as f64 / 200.0;
                        prop_assert!(p.velocity(t) >= -1e-6);
                        prop_assert!(p.accel(t).abs() <= 2.0 + 1e-6);
                    }
                }
            }
        }

        #[test]
        fn time_at_distance_inverts(v0 in 0.5f64..30.0, vt in 0.5f64..30.0, d in 5.0f64..80.0, f in 0.0f64..1.0) {
            if let Ok(p) = VelocityProfile::hermite_over_distance(v0, 0.0, vt, 0.0, d) {
                if p.is_valid(-2.0, 2.0) {
                    let t = p.time_at_distance(f * d);
                    prop_assert!((p.distance(t) - f * d).abs() < 1e-8);
                }
            }
        }
    }
}
