//! Lattice motion planning for highway on-ramp merges, with a closed-loop
//! traffic simulator and a batch evaluation harness.

pub mod behavior;
pub mod config;
pub mod cost;
pub mod error;
pub mod geometry;
pub mod lattice;
pub mod math;
pub mod metrics;
pub mod obb;
pub mod planner;
pub mod prediction;
pub mod scenario;
pub mod sim;
pub mod spline;

pub use behavior::BehaviorState;
pub use config::{
    BvpConfig, Config, CostWeights, DesiredSpeedMode, LatticeConfig, LookaheadConfig,
    PlannerConfig, SimConfig, VehicleParams,
};
pub use cost::CostBreakdown;
pub use error::{Error, Result};
pub use geometry::{
    build_reference_path, Lane, PathSample, ReferencePath, RoadDefinition, RoadModel, StaticState,
};
pub use lattice::BvpCache;
pub use metrics::{
    aggregate, compute_episode_metrics, replay_summary, run_batch, run_batch_with, BatchResult,
    EpisodeMetrics, MetricsTable, Variant,
};
pub use obb::OrientedBox;
pub use planner::{
    plan_cycle, plan_cycle_candidates, Candidate, EgoState, PlanContext, PlanOutcome, PlanRecord,
    Planner, Trajectory, Waypoint,
};
pub use prediction::TrafficVehicle;
pub use scenario::{
    generate_headway_sweep, generate_random_suite, validate_scenario, HeadwaySweepConfig, Scenario,
    SuiteConfig,
};
pub use sim::{
    plan_snapshot, read_trace, run_episode, EgoSample, EpisodeResult, EpisodeSummary, IdmParams,
    Outcome, PlanReport,
};
pub use spline::{coeffs_from_knots, integrate_path, solve_bvp, PathSegment, SplineParams};
