//! Fixtures shared by the benchmarks.

use onramp_core::{
    generate_headway_sweep, run_episode, BehaviorState, EgoState, HeadwaySweepConfig, PlanContext,
    PlannerConfig, RoadModel, SimConfig, StaticState, TrafficVehicle,
};

fn pose(x: f64, y: f64, theta: f64, kappa: f64) -> StaticState {
    StaticState {
        x,
        y,
        theta,
        kappa,
        s: 0.0,
        l: 0.0,
    }
}

/// Boundary pairs for the spline solver: a lane change, a gentle curve
/// and a quarter circle.
pub fn bvp_pairs() -> Vec<(&'static str, StaticState, StaticState)> {
    vec![
        (
            "lane-change",
            pose(0.0, 0.0, 0.0, 0.0),
            pose(40.0, 3.5, 0.0, 0.0),
        ),
        (
            "curve",
            pose(0.0, 0.0, 0.0, 0.0),
            pose(39.5, 4.0, 0.2, 0.01),
        ),
        (
            "quarter-circle",
            pose(0.0, 0.0, 0.0, 0.1),
            pose(10.0, 10.0, std::f64::consts::FRAC_PI_2, 0.1),
        ),
    ]
}

/// A planning snapshot taken from a dense headway-sweep episode while the
/// ego is negotiating the merge.
pub struct PlanFixture {
    pub road: RoadModel,
    pub ego: EgoState,
    pub s: f64,
    pub l: f64,
    pub traffic: Vec<TrafficVehicle>,
    pub behavior: BehaviorState,
    pub v_desired: f64,
    pub l_desired: f64,
}

impl PlanFixture {
    pub fn ctx(&self) -> PlanContext<'_> {
        PlanContext {
            ego: self.ego,
            s: self.s,
            l: self.l,
            previous: None,
            traffic: &self.traffic,
            behavior: self.behavior,
            v_desired: self.v_desired,
            l_desired: self.l_desired,
            static_obstacles: &[],
            time_budget: None,
        }
    }
}

pub fn merge_fixture() -> PlanFixture {
    let suite = generate_headway_sweep(&HeadwaySweepConfig {
        count: 5,
        ..Default::default()
    })
    .expect("sweep");
    let sc = &suite[1];
    let r =
        run_episode(sc, &PlannerConfig::default(), &SimConfig::default(), true).expect("episode");
    let c = r
        .cycles
        .iter()
        .find(|c| c.plan.behavior == BehaviorState::MergeInitiation)
        .or(r.cycles.last())
        .expect("at least one cycle");
    PlanFixture {
        road: sc.road.build().expect("road"),
        ego: c.ego.state(),
        s: c.ego.s,
        l: c.ego.l,
        traffic: c.traffic.clone(),
        behavior: c.plan.behavior,
        v_desired: c.plan.v_desired,
        l_desired: c.plan.l_desired,
    }
}
