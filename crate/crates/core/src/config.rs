use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ego vehicle dimensions and steering limits. Poses refer to the rear axle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VehicleParams {
    pub wheelbase: f64,
    pub length: f64,
    pub width: f64,
    /// Distance from the rear bumper to the rear axle.
    pub rear_overhang: f64,
    pub max_steer: f64,
    pub max_steer_rate: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self {
            wheelbase: 2.7,
            length: 4.6,
            width: 1.85,
            rear_overhang: 1.0,
            max_steer: 0.6,
            max_steer_rate: 0.6,
        }
    }
}

impl VehicleParams {
    pub fn max_curvature(&self) -> f64 {
        self.max_steer.tan() / self.wheelbase
    }

    /// Bound on dκ/ds at speed `v`, from dκ/dt = δ̇/L and ds = v dt.
    /// Speeds below 1 m/s are treated as 1 m/s.
    pub fn max_curvature_rate(&self, v: f64) -> f64 {
        self.max_steer_rate / (self.wheelbase * v.max(1.0))
    }

    /// Offset from the rear axle to the geometric center, along the heading.
    pub fn center_offset(&self) -> f64 {
        0.5 * self.length - self.rear_overhang
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LookaheadConfig {
    pub t_horizon: f64,
    pub d_min: f64,
    pub d_max: f64,
}

impl Default for LookaheadConfig {
    fn default() -> Self {
        Self {
            t_horizon: 6.0,
            d_min: 60.0,
            d_max: 120.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LatticeConfig {
    pub layers: usize,
    pub stations_per_lane: usize,
    pub accel_range: [f64; 2],
    pub accel_samples: usize,
    /// Clearance between a station and the lane edge.
    pub lateral_margin: f64,
    /// Number of arc-length intervals each edge path is sampled at.
    pub path_intervals: usize,
    /// Number of time intervals each edge profile is sampled at.
    pub time_intervals: usize,
    /// Below this speed the ego counts as stopped.
    pub stop_speed: f64,
    /// Largest |Δl|/Δs a station pair may have before a solve is attempted.
    pub max_lateral_slope: f64,
}

impl Default for LatticeConfig {
    fn default() -> Self {
        Self {
            layers: 3,
            stations_per_lane: 5,
            accel_range: [-2.0, 2.0],
            accel_samples: 7,
            lateral_margin: 1.0,
            path_intervals: 128,
            time_intervals: 64,
            stop_speed: 0.1,
            max_lateral_slope: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BvpConfig {
    pub max_iterations: usize,
    pub max_halvings: usize,
    pub position_tolerance: f64,
    pub heading_tolerance: f64,
    /// Newton iterates until the residual is this fraction of the tolerance,
    /// or until the iteration cap is hit.
    pub inner_factor: f64,
    pub coarse_steps: usize,
    pub verify_steps: usize,
    pub knot_perturbation: f64,
    pub length_perturbation: f64,
    /// Iterates with any knot beyond this magnitude are declared divergent.
    pub max_abs_knot: f64,
    /// Retry from a grid of initial guesses when the first start fails.
    pub restarts: bool,
}

impl Default for BvpConfig {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            max_halvings: 4,
            position_tolerance: 1e-3,
            heading_tolerance: 1e-4,
            inner_factor: 1e-3,
            coarse_steps: 64,
            verify_steps: 512,
            knot_perturbation: 1e-4,
            length_perturbation: 1e-3,
            max_abs_knot: 2.0,
            restarts: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CostWeights {
    pub w_curvature: f64,
    pub w_jerk: f64,
    pub w_curvature_rate: f64,
    pub w_velocity: f64,
    pub w_consistency: f64,
    pub w_center: f64,
    pub w_obs: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub m: f64,
    pub m_merge: f64,
    pub c: f64,
    pub t_reaction: f64,
    pub a_max_dec: f64,
    pub a_max_acc: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        Self {
            w_curvature: 10.0,
            w_jerk: 1.0,
            w_curvature_rate: 10.0,
            w_velocity: 0.2,
            w_consistency: 0.5,
            w_center: 1.0,
            w_obs: 5.0,
            alpha1: 1.0,
            alpha2: 1.0,
            m: 1.0,
            m_merge: 2.0,
            c: 10.0,
            t_reaction: 1.0,
            a_max_dec: 2.0,
            a_max_acc: 2.0,
        }
    }
}

impl CostWeights {
    pub fn validate(&self) -> Result<()> {
        let ws = [
            self.w_curvature,
            self.w_jerk,
            self.w_curvature_rate,
            self.w_velocity,
            self.w_consistency,
            self.w_center,
            self.w_obs,
            self.alpha1,
            self.alpha2,
            self.m,
            self.m_merge,
            self.t_reaction,
        ];
        if ws.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Config(
                "weights must be finite and non-negative".into(),
            ));
        }
        if self.m_merge < self.m {
            return Err(Error::Config("m_merge must be at least m".into()));
        }
        if !(self.c > 0.0 && self.a_max_dec > 0.0 && self.a_max_acc > 0.0) {
            return Err(Error::Config(
                "c, a_max_dec and a_max_acc must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// How the planner picks its target speed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum DesiredSpeedMode {
    #[default]
    SafetyFactor,
    SpeedLimit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerConfig {
    pub vehicle: VehicleParams,
    pub lookahead: LookaheadConfig,
    pub lattice: LatticeConfig,
    pub bvp: BvpConfig,
    pub weights: CostWeights,
    /// Wall-clock budget per cycle, seconds.
    pub time_budget: f64,
    pub waypoint_dt: f64,
    pub waypoint_horizon: f64,
    pub footprint_inflation: f64,
    /// Arrival-time separations below this are treated as simultaneous.
    pub simultaneity_eps: f64,
    pub obstacle_lane_step: f64,
    /// Traffic further than this from the ego (along the road) is ignored.
    pub sensing_range: f64,
    pub post_merge_lateral_tol: f64,
    pub post_merge_heading_tol: f64,
    pub desired_speed_mode: DesiredSpeedMode,
    /// When false the merge branch of the centering cost is replaced by the
    /// lane-follow branch.
    pub merge_center_cost: bool,
    /// When false the dynamic obstacle cost and its overlap gate are off.
    pub obstacle_cost: bool,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            vehicle: VehicleParams::default(),
            lookahead: LookaheadConfig::default(),
            lattice: LatticeConfig::default(),
            bvp: BvpConfig::default(),
            weights: CostWeights::default(),
            time_budget: 0.09,
            waypoint_dt: 0.1,
            waypoint_horizon: 5.0,
            footprint_inflation: 0.2,
            simultaneity_eps: 0.05,
            obstacle_lane_step: 0.5,
            sensing_range: 300.0,
            post_merge_lateral_tol: 0.3,
            post_merge_heading_tol: 0.05,
            desired_speed_mode: DesiredSpeedMode::SafetyFactor,
            merge_center_cost: true,
            obstacle_cost: true,
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        let l = &self.lattice;
        if l.layers == 0 || l.stations_per_lane == 0 || l.accel_samples == 0 {
            return Err(Error::Config("lattice sizes must be positive".into()));
        }
        if l.accel_range[0] > l.accel_range[1] {
            return Err(Error::Config("accel_range is inverted".into()));
        }
        if l.path_intervals < 2 || l.time_intervals < 2 {
            return Err(Error::Config("need at least two sample intervals".into()));
        }
        let la = &self.lookahead;
        if !(la.d_min > 0.0 && la.d_min <= la.d_max && la.t_horizon > 0.0) {
            return Err(Error::Config("invalid lookahead".into()));
        }
        if !(self.time_budget > 0.0 && self.waypoint_dt > 0.0 && self.waypoint_horizon > 0.0) {
            return Err(Error::Config(
                "time budget and waypoint timing must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub dt: f64,
    pub plan_period: f64,
    pub timeout: f64,
    /// Store per-cycle wall time in traces. Off by default so that traces
    /// are reproducible byte for byte.
    pub record_timing: bool,
    /// Enforce the planner's wall-clock budget. When off every cycle runs
    /// its search to completion and episodes are reproducible.
    pub realtime: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 0.02,
            plan_period: 0.1,
            timeout: 100.0,
            record_timing: false,
            realtime: false,
        }
    }
}

impl SimConfig {
    /// Simulation steps per planning cycle.
    pub fn steps_per_plan(&self) -> Result<usize> {
        let ratio = self.plan_period / self.dt;
        let n = ratio.round();
        if !(self.dt > 0.0) || n < 1.0 || (ratio - n).abs() > 1e-9 {
            return Err(Error::Config("dt must divide the planning period".into()));
        }
        Ok(n as usize)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct Config {
    pub planner: PlannerConfig,
    pub sim: SimConfig,
}

impl Config {
    /// Reads a TOML or JSON file, picked by extension.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: Config = match path.extension().and_then(|e| e.to_str()) {
            Some("json") => serde_json::from_str(&text)?,
            _ => toml::from_str(&text).map_err(|e| Error::Parse(e.to_string()))?,
        };
        cfg.planner.validate()?;
        cfg.sim.steps_per_plan()?;
        Ok(cfg)
    }
}
