use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{DesiredSpeedMode, PlannerConfig, SimConfig};
use crate::error::{Error, Result};
use crate::scenario::Scenario;
use crate::sim::{read_trace, run_episode, EgoSample, EpisodeResult, EpisodeSummary, Outcome};

/// Per-episode comfort maxima. Decelerations are reported as magnitudes.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub max_long_accel: f64,
    pub max_long_decel: f64,
    pub max_lat_accel: f64,
    pub max_long_jerk: Option<f64>,
    pub max_lat_jerk: Option<f64>,
}

/// Central differences at the interior points of a uniformly sampled series.
pub fn central_differences(xs: &[f64], h: f64) -> Vec<f64> {
    xs.windows(3).map(|w| (w[2] - w[0]) / (2.0 * h)).collect()
}

fn max_abs(xs: impl IntoIterator<Item = f64>) -> f64 {
    xs.into_iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Maxima over the executed samples, taken every `h` seconds.
pub fn compute_episode_metrics(samples: &[EgoSample], h: f64) -> EpisodeMetrics {
    let a_long: Vec<f64> = samples.iter().map(|s| s.a).collect();
    let a_lat: Vec<f64> = samples.iter().map(|s| s.v * s.v * s.kappa).collect();
    let jerk = |xs: &[f64]| (xs.len() >= 3).then(|| max_abs(central_differences(xs, h)));
    EpisodeMetrics {
        max_long_accel: a_long.iter().fold(0.0, |m: f64, a| m.max(*a)),
        max_long_decel: a_long.iter().fold(0.0, |m: f64, a| m.max(-*a)),
        max_lat_accel: max_abs(a_lat.iter().copied()),
        max_long_jerk: jerk(&a_long),
        max_lat_jerk: jerk(&a_lat),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Full,
    AblationA,
    AblationB,
    NoObs,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Full,
        Variant::AblationA,
        Variant::AblationB,
        Variant::NoObs,
    ];

    pub fn apply(self, cfg: &PlannerConfig) -> PlannerConfig {
        let mut c = cfg.clone();
        match self {
            Variant::Full => {}
            Variant::AblationA => c.desired_speed_mode = DesiredSpeedMode::SpeedLimit,
            Variant::AblationB => c.merge_center_cost = false,
            Variant::NoObs => c.obstacle_cost = false,
        }
        c
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::AblationA => "ablation-a",
            Variant::AblationB => "ablation-b",
            Variant::NoObs => "no-obs",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s.to_ascii_lowercase())
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown variant {s:?}; expected full, ablation-a, ablation-b or no-obs"
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FailureCounts {
    pub collision: usize,
    pub road_departure: usize,
    pub ramp_overrun: usize,
    pub timeout: usize,
    pub error: usize,
}

/// One table row. Column names are the ones the CSV export uses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsTable {
    #[serde(rename = "Variant")]
    pub variant: Variant,
    #[serde(rename = "Episodes")]
    pub episodes: usize,
    #[serde(rename = "Success Rate (%)")]
    pub success_rate: f64,
    /// Mean over successes, clock started at episode start.
    #[serde(rename = "Avg. Merge Time (s)")]
    pub avg_merge_time: Option<f64>,
    #[serde(rename = "Max. Longit. Acceleration (m/s^2)")]
    pub max_long_accel: f64,
    #[serde(rename = "Max. Longit. Deceleration (m/s^2)")]
    pub max_long_decel: f64,
    #[serde(rename = "Max. Lat. Acceleration (m/s^2)")]
    pub max_lat_accel: f64,
    #[serde(rename = "Max. Longit. Jerk (m/s^3)")]
    pub max_long_jerk: Option<f64>,
    #[serde(rename = "Max. Lat. Jerk (m/s^3)")]
    pub max_lat_jerk: Option<f64>,
    #[serde(skip)]
    pub failures: FailureCounts,
}

fn opt_max(a: Option<f64>, b: Option<f64>) -> Option<f64> {
    match (a, b) {
        (Some(x), Some(y)) => Some(x.max(y)),
        (x, None) => x,
        (None, y) => y,
    }
}

/// Suite-wide aggregate. Merge times are summed in sorted order so the
/// result does not depend on episode order.
pub fn aggregate(variant: Variant, episodes: &[EpisodeSummary]) -> MetricsTable {
    let n = episodes.len();
    let mut times: Vec<f64> = episodes
        .iter()
        .filter(|e| e.outcome.is_success())
        .filter_map(|e| e.merge_time)
        .collect();
    times.sort_by(f64::total_cmp);
    let successes = episodes.iter().filter(|e| e.outcome.is_success()).count();
    let mut failures = FailureCounts::default();
    for e in episodes {
        match e.outcome {
            Outcome::Success => {}
            Outcome::Collision { .. } => failures.collision += 1,
            Outcome::RoadDeparture => failures.road_departure += 1,
            Outcome::RampOverrun => failures.ramp_overrun += 1,
            Outcome::Timeout => failures.timeout += 1,
            Outcome::Error { .. } => failures.error += 1,
        }
    }
    let m = episodes
        .iter()
        .map(|e| e.metrics)
        .fold(EpisodeMetrics::default(), |acc, m| EpisodeMetrics {
            max_long_accel: acc.max_long_accel.max(m.max_long_accel),
            max_long_decel: acc.max_long_decel.max(m.max_long_decel),
            max_lat_accel: acc.max_lat_accel.max(m.max_lat_accel),
            max_long_jerk: opt_max(acc.max_long_jerk, m.max_long_jerk),
            max_lat_jerk: opt_max(acc.max_lat_jerk, m.max_lat_jerk),
        });
    MetricsTable {
        variant,
        episodes: n,
        success_rate: if n == 0 {
            0.0
        } else {
            100.0 * successes as f64 / n as f64
        },
        avg_merge_time: (!times.is_empty()).then(|| times.iter().sum::<f64>() / times.len() as f64),
        max_long_accel: m.max_long_accel,
        max_long_decel: m.max_long_decel,
        max_lat_accel: m.max_lat_accel,
        max_long_jerk: m.max_long_jerk,
        max_lat_jerk: m.max_lat_jerk,
        failures,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchResult {
    pub table: MetricsTable,
    pub episodes: Vec<EpisodeSummary>,
    /// Planner wall time of every cycle, when timing was recorded.
    pub cycle_ms: Vec<f64>,
}

/// Runs a suite under one variant. Episodes that error out count as
/// failures and the batch carries on.
pub fn run_batch(
    suite: &[Scenario],
    variant: Variant,
    pcfg: &PlannerConfig,
    scfg: &SimConfig,
    threads: Option<usize>,
) -> Result<BatchResult> {
    run_batch_with(suite, variant, pcfg, scfg, threads, None)
}

/// Episode callback for [`run_batch_with`]; receives full cycle records.
pub type EpisodeSink<'a> = &'a (dyn Fn(&EpisodeResult) -> Result<()> + Sync);

/// [`run_batch`] that hands every finished episode, cycles included, to
/// `sink`. A sink error aborts the batch.
pub fn run_batch_with(
    suite: &[Scenario],
    variant: Variant,
    pcfg: &PlannerConfig,
    scfg: &SimConfig,
    threads: Option<usize>,
    sink: Option<EpisodeSink>,
) -> Result<BatchResult> {
    let cfg = variant.apply(pcfg);
    let run = |sc: &Scenario| -> Result<(EpisodeSummary, Vec<f64>)> {
        match run_episode(sc, &cfg, scfg, sink.is_some()) {
            Ok(r) => {
                if let Some(f) = sink {
                    f(&r)?;
                }
                Ok((r.summary, r.cycle_ms))
            }
            Err(e) => Ok((
                EpisodeSummary {
                    label: sc.label.clone(),
                    outcome: Outcome::Error {
                        message: e.to_string(),
                    },
                    merge_time: None,
                    duration: 0.0,
                    metrics: EpisodeMetrics::default(),
                    wall_s: None,
                },
                Vec::new(),
            )),
        }
    };
    let results: Vec<(EpisodeSummary, Vec<f64>)> = match threads {
        Some(1) => suite.iter().map(run).collect::<Result<_>>()?,
        _ => {
            let mut b = rayon::ThreadPoolBuilder::new();
            if let Some(n) = threads {
                b = b.num_threads(n);
            }
            let pool = b.build().map_err(|e| Error::Config(e.to_string()))?;
            pool.install(|| suite.par_iter().map(run).collect::<Result<_>>())?
        }
    };
    let (episodes, ms): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    Ok(BatchResult {
        table: aggregate(variant, &episodes),
        episodes,
        cycle_ms: ms.concat(),
    })
}

/// Rebuilds an episode summary from a trace, with the metrics recomputed
/// from the recorded ego samples. `h` is the planning period.
pub fn replay_summary(trace: &str, h: f64) -> Result<EpisodeSummary> {
    let (cycles, summary) = read_trace(trace)?;
    let mut summary = summary.ok_or_else(|| Error::Parse("trace has no summary line".into()))?;
    let samples: Vec<EgoSample> = cycles.iter().map(|c| c.ego).collect();
    summary.metrics = compute_episode_metrics(&samples, h);
    Ok(summary)
}
