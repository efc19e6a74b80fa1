use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::behavior::BehaviorState;
use crate::config::{PlannerConfig, SimConfig};
use crate::error::{Error, Result};
use crate::geometry::{Lane, RoadModel};
use crate::math::wrap_angle;
use crate::metrics::{compute_episode_metrics, EpisodeMetrics};
use crate::obb::OrientedBox;
use crate::planner::{Candidate, EgoState, PlanRecord, Planner, Waypoint};
use crate::prediction::TrafficVehicle;
use crate::scenario::{validate_scenario, Scenario};

pub const MAX_DECELERATION: f64 = 8.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IdmParams {
    pub v0: f64,
    pub headway: f64,
    pub a_max: f64,
    pub b_comf: f64,
    pub s0: f64,
    pub delta: f64,
    /// 0 ignores a merging ego, 1 treats it as an in-lane leader.
    pub yield_factor: f64,
}

impl Default for IdmParams {
    fn default() -> Self {
        Self {
            v0: 15.28,
            headway: 1.5,
            a_max: 1.5,
            b_comf: 2.0,
            s0: 2.0,
            delta: 4.0,
            yield_factor: 0.1,
        }
    }
}

impl IdmParams {
    pub fn validate(&self) -> std::result::Result<(), String> {
        let pos = [
            self.v0,
            self.headway,
            self.a_max,
            self.b_comf,
            self.s0,
            self.delta,
        ];
        if pos.iter().any(|x| !(*x > 0.0)) {
            return Err("IDM parameters must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.yield_factor) {
            return Err(format!("yield factor {} outside [0, 1]", self.yield_factor));
        }
        Ok(())
    }

    /// Desired dynamic gap s*.
    pub fn desired_gap(&self, v: f64, dv: f64) -> f64 {
        self.s0 + v * self.headway + v * dv / (2.0 * (self.a_max * self.b_comf).sqrt())
    }

    /// Bumper gap at which a follower at speed `v` behind a leader at the same
    /// speed has zero acceleration. Infinite when `v >= v0`.
    pub fn equilibrium_gap(&self, v: f64) -> f64 {
        let r = 1.0 - (v / self.v0).powf(self.delta);
        if r <= 0.0 {
            f64::INFINITY
        } else {
            self.desired_gap(v, 0.0) / r.sqrt()
        }
    }
}

/// IDM acceleration. `gap = INFINITY` means no leader.
pub fn idm_acceleration(v: f64, gap: f64, v_lead: f64, p: &IdmParams) -> f64 {
    let free = 1.0 - (v / p.v0).powf(p.delta);
    let inter = if gap.is_finite() {
        let s = p.desired_gap(v, v - v_lead).max(0.0) / gap.max(1e-3);
        s * s
    } else {
        0.0
    };
    (p.a_max * (free - inter)).clamp(-MAX_DECELERATION, p.a_max)
}

/// What a main-lane vehicle needs to know about the ego.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EgoFootprint {
    pub s_rear: f64,
    pub s_front: f64,
    pub l_min: f64,
    pub l_max: f64,
    pub v: f64,
    /// Ego has committed to merging and is past the soft nose.
    pub intent: bool,
}

pub const YIELD_ANTICIPATION: f64 = 0.2;
/// Stand-in leader distance for a vehicle with an empty lane ahead.
pub const PROXY_LEADER_GAP: f64 = 300.0;

/// Share of the ego's lateral extent inside the main lane.
pub fn encroachment(ego: &EgoFootprint, road: &RoadModel) -> f64 {
    let w = ego.l_max - ego.l_min;
    if w <= 0.0 {
        return if ego.l_min >= road.w_merge { 1.0 } else { 0.0 };
    }
    ((ego.l_max - road.w_merge) / w).clamp(0.0, 1.0)
}

/// Blend weight of the ego as a leader. Any reactive vehicle treats an ego
/// that is fully in its lane as a real leader.
pub fn merge_weight(yield_factor: f64, f: f64, intent: bool) -> f64 {
    if yield_factor <= 0.0 {
        return 0.0;
    }
    if f >= 1.0 {
        return 1.0;
    }
    let f = if intent { f.max(YIELD_ANTICIPATION) } else { f };
    yield_factor * f
}

/// Effective leader `(gap, v)` of a main-lane vehicle once the merging ego
/// is taken into account, or `None` if the ego does not affect it.
pub fn merge_reactive_gap(
    vehicle: &TrafficVehicle,
    real_leader: Option<(f64, f64)>,
    ego: &EgoFootprint,
    road: &RoadModel,
    yield_factor: f64,
) -> Option<(f64, f64)> {
    let gap_ego = ego.s_rear - vehicle.front();
    if ego.s_front <= vehicle.front() {
        return None;
    }
    let f = encroachment(ego, road);
    if f <= 0.0 && !ego.intent {
        return None;
    }
    let w = merge_weight(yield_factor, f, ego.intent);
    if w <= 0.0 {
        return None;
    }
    let (gap_real, v_real) = real_leader.unwrap_or((PROXY_LEADER_GAP, vehicle.v));
    if gap_ego >= gap_real {
        return None;
    }
    Some((
        gap_real * (1.0 - w) + gap_ego * w,
        v_real * (1.0 - w) + ego.v * w,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimVehicle {
    pub state: TrafficVehicle,
    pub idm: IdmParams,
}

/// Advances traffic by one step. Accelerations are computed from the
/// current state, then speed and position are updated semi-implicitly.
pub fn step_traffic(
    traffic: &mut Vec<SimVehicle>,
    ego: Option<&EgoFootprint>,
    road: &RoadModel,
    dt: f64,
) {
    let n = traffic.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        let (p, q) = (&traffic[a].state, &traffic[b].state);
        p.lane.cmp(&q.lane).then(p.s.total_cmp(&q.s))
    });
    let mut acc = vec![0.0; n];
    for (k, &i) in order.iter().enumerate() {
        let me = &traffic[i];
        let leader = order
            .get(k + 1)
            .map(|&j| &traffic[j])
            .filter(|o| o.state.lane == me.state.lane)
            .map(|o| (o.state.rear() - me.state.front(), o.state.v));
        let ego_lead = ego.and_then(|e| match me.state.lane {
            Lane::Main => merge_reactive_gap(&me.state, leader, e, road, me.idm.yield_factor),
            // Merge-lane traffic treats an ego ahead in its lane as a leader.
            _ => (e.l_min < road.w_merge && e.s_front > me.state.front())
                .then(|| (e.s_rear - me.state.front(), e.v))
                .filter(|(g, _)| leader.is_none_or(|(lg, _)| *g < lg)),
        });
        let (gap, v_lead) = ego_lead.or(leader).unwrap_or((f64::INFINITY, 0.0));
        acc[i] = idm_acceleration(me.state.v, gap, v_lead, &me.idm);
    }
    for (v, a) in traffic.iter_mut().zip(acc) {
        v.state.v = (v.state.v + a * dt).max(0.0);
        v.state.s += v.state.v * dt;
    }
    let end = road.length();
    traffic.retain(|v| v.state.rear() <= end);
}

/// Ego state `tau` seconds into a waypoint list: linear interpolation
/// between waypoints, constant velocity past the last one.
pub fn interpolate_waypoints(wps: &[Waypoint], tau: f64) -> Option<Waypoint> {
    let first = wps.first()?;
    if tau <= first.t {
        return Some(*first);
    }
    let last = wps.last()?;
    if tau >= last.t {
        let d = last.v * (tau - last.t);
        let (s, c) = last.theta.sin_cos();
        return Some(Waypoint {
            t: tau,
            x: last.x + d * c,
            y: last.y + d * s,
            s: last.s + d,
            a: 0.0,
            ..*last
        });
    }
    let i = wps.partition_point(|w| w.t <= tau) - 1;
    let (a, b) = (&wps[i], &wps[i + 1]);
    if tau == a.t {
        return Some(*a);
    }
    let u = (tau - a.t) / (b.t - a.t);
    let lerp = |p: f64, q: f64| p + (q - p) * u;
    Some(Waypoint {
        x: lerp(a.x, b.x),
        y: lerp(a.y, b.y),
        t: tau,
        v: lerp(a.v, b.v),
        a: lerp(a.a, b.a),
        theta: wrap_angle(a.theta + wrap_angle(b.theta - a.theta) * u),
        kappa: lerp(a.kappa, b.kappa),
        s: lerp(a.s, b.s),
        l: lerp(a.l, b.l),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EgoSample {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub kappa: f64,
    pub v: f64,
    pub a: f64,
    pub s: f64,
    pub l: f64,
}

impl EgoSample {
    pub fn state(&self) -> EgoState {
        EgoState {
            x: self.x,
            y: self.y,
            theta: self.theta,
            kappa: self.kappa,
            v: self.v,
            a: self.a,
        }
    }

    fn from_waypoint(t: f64, w: &Waypoint) -> Self {
        Self {
            t,
            x: w.x,
            y: w.y,
            theta: w.theta,
            kappa: w.kappa,
            v: w.v,
            a: w.a,
            s: w.s,
            l: w.l,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Outcome {
    Success,
    Collision { id: u32 },
    RoadDeparture,
    RampOverrun,
    Timeout,
    Error { message: String },
}

impl Outcome {
    pub fn is_success(&self) -> bool {
        matches!(self, Outcome::Success)
    }
}

pub fn ego_box(e: &EgoSample, cfg: &PlannerConfig) -> OrientedBox {
    let v = &cfg.vehicle;
    OrientedBox::from_rear_axle(e.x, e.y, e.theta, v.length, v.width, v.rear_overhang, 0.0)
}

/// First traffic vehicle whose footprint overlaps the ego.
pub fn detect_collision(
    ego: &EgoSample,
    traffic: &[SimVehicle],
    road: &RoadModel,
    cfg: &PlannerConfig,
) -> Option<u32> {
    let b = ego_box(ego, cfg);
    let reach = cfg.vehicle.length + 10.0;
    traffic
        .iter()
        .filter(|v| v.state.s >= 0.0 && (v.state.s - ego.s).abs() < reach)
        .find(|v| {
            v.state
                .footprint_at(road, v.state.s, 0.0)
                .is_some_and(|ob| ob.overlaps(&b))
        })
        .map(|v| v.state.id)
}

/// Boundary check on the ego's corners. Touching counts as leaving.
pub fn detect_departure(ego: &EgoSample, road: &RoadModel, cfg: &PlannerConfig) -> Option<Outcome> {
    for (x, y) in ego_box(ego, cfg).corners() {
        let Ok((s, l)) = road.project_near(x, y, ego.s) else {
            return Some(Outcome::RoadDeparture);
        };
        if !road.corner_inside(s, l, road.s_hard_nose) {
            return Some(if s >= road.s_ramp_end && l <= road.w_merge {
                Outcome::RampOverrun
            } else {
                Outcome::RoadDeparture
            });
        }
    }
    None
}

fn footprint(
    ego: &EgoSample,
    cfg: &PlannerConfig,
    road: &RoadModel,
    behavior: BehaviorState,
) -> EgoFootprint {
    let v = &cfg.vehicle;
    let (sn, cs) =
        wrap_angle(ego.theta - road.reference.query_pose(ego.s).map_or(ego.theta, |p| p.2))
            .sin_cos();
    // Lateral extent of the body in the Frenet frame, from the relative heading.
    let fwd = v.length - v.rear_overhang;
    let hw = 0.5 * v.width;
    let ls = [
        fwd * sn + hw * cs,
        fwd * sn - hw * cs,
        -v.rear_overhang * sn + hw * cs,
        -v.rear_overhang * sn - hw * cs,
    ];
    let l_min = ego.l + ls.iter().copied().fold(f64::INFINITY, f64::min);
    let l_max = ego.l + ls.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    EgoFootprint {
        s_rear: ego.s - v.rear_overhang,
        s_front: ego.s + fwd,
        l_min,
        l_max,
        v: ego.v,
        intent: matches!(
            behavior,
            BehaviorState::MergeInitiation | BehaviorState::MergeContinuation
        ) && ego.s >= road.s_soft_nose,
    }
}

/// One planning cycle as written to a trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleRecord {
    pub ego: EgoSample,
    pub traffic: Vec<TrafficVehicle>,
    pub plan: PlanRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub label: String,
    pub outcome: Outcome,
    /// Seconds from episode start to entering post-merge lane following.
    pub merge_time: Option<f64>,
    pub duration: f64,
    pub metrics: EpisodeMetrics,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub wall_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum TraceLine {
    Cycle(Box<CycleRecord>),
    Summary(EpisodeSummary),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeResult {
    pub summary: EpisodeSummary,
    /// Executed ego state at every planning instant.
    pub samples: Vec<EgoSample>,
    pub cycles: Vec<CycleRecord>,
    pub cycle_ms: Vec<f64>,
}

impl EpisodeResult {
    pub fn write_trace(&self, mut out: impl Write) -> Result<()> {
        for c in &self.cycles {
            serde_json::to_writer(&mut out, &TraceLine::Cycle(Box::new(c.clone())))?;
            out.write_all(b"\n")?;
        }
        serde_json::to_writer(&mut out, &TraceLine::Summary(self.summary.clone()))?;
        out.write_all(b"\n")?;
        Ok(())
    }
}

/// Reads a trace back into its cycles and summary.
pub fn read_trace(text: &str) -> Result<(Vec<CycleRecord>, Option<EpisodeSummary>)> {
    let mut cycles = Vec::new();
    let mut summary = None;
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        match serde_json::from_str::<TraceLine>(line)? {
            TraceLine::Cycle(c) => cycles.push(*c),
            TraceLine::Summary(s) => summary = Some(s),
        }
    }
    Ok((cycles, summary))
}

fn initial_state(
    scenario: &Scenario,
    pcfg: &PlannerConfig,
) -> Result<(RoadModel, EgoSample, Vec<SimVehicle>)> {
    pcfg.validate()?;
    if let Err(d) = validate_scenario(scenario, pcfg.vehicle.length, pcfg.vehicle.rear_overhang) {
        let msg: Vec<String> = d.iter().map(|d| d.to_string()).collect();
        return Err(Error::Scenario(msg.join("; ")));
    }
    let road = scenario.road.build()?;
    let st = road.state_at(scenario.ego.s, scenario.ego.l)?;
    let ego = EgoSample {
        t: 0.0,
        x: st.x,
        y: st.y,
        theta: st.theta,
        kappa: st.kappa,
        v: scenario.ego.v,
        a: 0.0,
        s: scenario.ego.s,
        l: scenario.ego.l,
    };
    let traffic = scenario
        .traffic
        .iter()
        .map(|t| SimVehicle {
            state: TrafficVehicle {
                id: t.id,
                lane: t.lane,
                s: t.s,
                v: t.v,
                length: t.length,
                width: t.width,
            },
            idm: t.idm,
        })
        .collect();
    Ok((road, ego, traffic))
}

/// A single planning cycle on a scenario's initial state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanReport {
    pub label: String,
    pub record: PlanRecord,
    pub candidates: Vec<Candidate>,
}

/// Plans once from the scenario's initial state without a time budget.
pub fn plan_snapshot(scenario: &Scenario, pcfg: &PlannerConfig) -> Result<PlanReport> {
    let (road, ego, traffic) = initial_state(scenario, pcfg)?;
    let states: Vec<TrafficVehicle> = traffic.iter().map(|v| v.state).collect();
    let mut planner = Planner::new(pcfg.clone());
    planner.unlimited_budget = true;
    let (mut record, _, candidates) =
        planner.step_with_candidates(0.0, &ego.state(), &states, &[], &road)?;
    record.wall_ms = None;
    Ok(PlanReport {
        label: scenario.label.clone(),
        record,
        candidates,
    })
}

/// Closed loop: plan, then execute the plan for one period, until the ego
/// reaches post-merge lane following or fails.
pub fn run_episode(
    scenario: &Scenario,
    pcfg: &PlannerConfig,
    scfg: &SimConfig,
    keep_cycles: bool,
) -> Result<EpisodeResult> {
    let steps = scfg.steps_per_plan()?;
    let (road, mut ego, mut traffic) = initial_state(scenario, pcfg)?;
    let started = Instant::now();
    let mut planner = Planner::new(pcfg.clone());
    planner.unlimited_budget = !scfg.realtime;
    let mut samples = Vec::new();
    let mut cycles = Vec::new();
    let mut cycle_ms = Vec::new();
    let mut step = 0usize;
    let mut merge_time = None;
    let total_steps = (scfg.timeout / scfg.dt).round() as usize;
    let outcome = 'episode: loop {
        let t_plan = step as f64 * scfg.dt;
        let states: Vec<TrafficVehicle> = traffic.iter().map(|v| v.state).collect();
        let (mut record, traj) = match planner.step(t_plan, &ego.state(), &states, &[], &road) {
            Ok(r) => r,
            Err(e) => {
                break Outcome::Error {
                    message: e.to_string(),
                }
            }
        };
        samples.push(ego);
        if !scfg.record_timing {
            record.wall_ms = None;
        } else if let Some(ms) = record.wall_ms {
            cycle_ms.push(ms);
        }
        let behavior = record.behavior;
        if keep_cycles {
            cycles.push(CycleRecord {
                ego,
                traffic: states,
                plan: record,
            });
        }
        if behavior == BehaviorState::PostMergeLaneFollow {
            merge_time = Some(t_plan);
            break Outcome::Success;
        }
        if step >= total_steps {
            break Outcome::Timeout;
        }
        for _ in 0..steps {
            let fp = footprint(&ego, pcfg, &road, behavior);
            step += 1;
            let t = step as f64 * scfg.dt;
            let Some(w) = interpolate_waypoints(&traj.waypoints, t - t_plan) else {
                break 'episode Outcome::Error {
                    message: "plan has no waypoints".into(),
                };
            };
            ego = EgoSample::from_waypoint(t, &w);
            step_traffic(&mut traffic, Some(&fp), &road, scfg.dt);
            if let Some(id) = detect_collision(&ego, &traffic, &road, pcfg) {
                break 'episode Outcome::Collision { id };
            }
            if let Some(o) = detect_departure(&ego, &road, pcfg) {
                break 'episode o;
            }
        }
    };
    let duration = step as f64 * scfg.dt;
    let summary = EpisodeSummary {
        label: scenario.label.clone(),
        outcome,
        merge_time,
        duration,
        metrics: compute_episode_metrics(&samples, scfg.plan_period),
        wall_s: scfg.record_timing.then(|| started.elapsed().as_secs_f64()),
    };
    Ok(EpisodeResult {
        summary,
        samples,
        cycles,
        cycle_ms,
    })
}
