use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{build_reference_path, Lane, ReferencePath, RoadModel};
use crate::math::linspace;
use crate::sim::IdmParams;

/// A linear-curvature piece of the reference line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvaturePiece {
    pub length: f64,
    pub kappa_start: f64,
    pub kappa_end: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum RoadGeometry {
    Polyline {
        points: Vec<[f64; 2]>,
    },
    /// Curvature integrated from a start pose `[x, y, heading]`.
    Curvature {
        start: [f64; 3],
        pieces: Vec<CurvaturePiece>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoadSpec {
    pub geometry: RoadGeometry,
    #[serde(default = "default_spacing")]
    pub spacing: f64,
    pub w_merge: f64,
    pub w_main: f64,
    pub s_hard_nose: f64,
    pub s_soft_nose: f64,
    pub s_ramp_end: f64,
    pub speed_limit: f64,
}

fn default_spacing() -> f64 {
    1.0
}

impl RoadSpec {
    pub fn build(&self) -> Result<RoadModel> {
        let reference = match &self.geometry {
            RoadGeometry::Polyline { points } => {
                let pts: Vec<(f64, f64)> = points.iter().map(|p| (p[0], p[1])).collect();
                build_reference_path(&pts, self.spacing)?
            }
            RoadGeometry::Curvature { start, pieces } => {
                if pieces.is_empty() {
                    return Err(Error::DegenerateGeometry("no curvature pieces".into()));
                }
                let total: f64 = pieces.iter().map(|p| p.length).sum();
                let pieces = pieces.clone();
                ReferencePath::from_curvature(
                    (start[0], start[1], start[2]),
                    total,
                    self.spacing,
                    move |s| {
                        let mut acc = 0.0;
                        for p in &pieces {
                            if s <= acc + p.length {
                                let u = ((s - acc) / p.length).clamp(0.0, 1.0);
                                return p.kappa_start + (p.kappa_end - p.kappa_start) * u;
                            }
                            acc += p.length;
                        }
                        pieces.last().map_or(0.0, |p| p.kappa_end)
                    },
                )?
            }
        };
        RoadModel::new(
            reference,
            self.w_merge,
            self.w_main,
            self.s_hard_nose,
            self.s_soft_nose,
            self.s_ramp_end,
            self.speed_limit,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EgoSpawn {
    pub s: f64,
    pub l: f64,
    pub v: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrafficSpawn {
    pub id: u32,
    pub lane: Lane,
    /// Reference arc length of the vehicle center.
    pub s: f64,
    pub v: f64,
    pub length: f64,
    pub width: f64,
    pub idm: IdmParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub label: String,
    pub seed: u64,
    pub road: RoadSpec,
    pub ego: EgoSpawn,
    pub traffic: Vec<TrafficSpawn>,
}

impl Scenario {
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DiagnosticKind {
    Road,
    Placement,
    Overlap,
    Parameters,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub kind: DiagnosticKind,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}: {}", self.kind, self.message)
    }
}

/// Checks road invariants, ego placement and spawn overlaps.
pub fn validate_scenario(
    sc: &Scenario,
    ego_length: f64,
    ego_rear_overhang: f64,
) -> std::result::Result<(), Vec<Diagnostic>> {
    let mut out = Vec::new();
    let mut push = |kind, message: String| out.push(Diagnostic { kind, message });
    let road = match sc.road.build() {
        Ok(r) => r,
        Err(e) => {
            push(DiagnosticKind::Road, e.to_string());
            return Err(out);
        }
    };
    let e = sc.ego;
    if !(e.s >= 0.0 && e.s < road.s_hard_nose) {
        push(
            DiagnosticKind::Placement,
            format!(
                "ego at s={} must start before the hard nose at {}",
                e.s, road.s_hard_nose
            ),
        );
    }
    if road.lane_membership(e.s, e.l) != Lane::Merge {
        push(
            DiagnosticKind::Placement,
            format!("ego at l={} is not in the merge lane", e.l),
        );
    }
    if !(e.v >= 0.0) {
        push(
            DiagnosticKind::Parameters,
            format!("ego speed {} is negative", e.v),
        );
    }
    let (ego_lo, ego_hi) = (
        e.s - ego_rear_overhang,
        e.s - ego_rear_overhang + ego_length,
    );
    for v in &sc.traffic {
        if v.lane == Lane::OffRoad {
            push(
                DiagnosticKind::Placement,
                format!("vehicle {} has no lane", v.id),
            );
        }
        if !(v.v >= 0.0 && v.length > 0.0 && v.width > 0.0) {
            push(
                DiagnosticKind::Parameters,
                format!("vehicle {} has invalid speed or size", v.id),
            );
        }
        if let Err(m) = v.idm.validate() {
            push(DiagnosticKind::Parameters, format!("vehicle {}: {m}", v.id));
        }
        if v.lane == Lane::Merge && v.s - 0.5 * v.length < ego_hi && v.s + 0.5 * v.length > ego_lo {
            push(
                DiagnosticKind::Overlap,
                format!("vehicle {} overlaps the ego at s={}", v.id, v.s),
            );
        }
    }
    for lane in [Lane::Merge, Lane::Main] {
        let mut vs: Vec<&TrafficSpawn> = sc.traffic.iter().filter(|v| v.lane == lane).collect();
        vs.sort_by(|a, b| a.s.total_cmp(&b.s));
        for w in vs.windows(2) {
            if w[1].s - 0.5 * w[1].length <= w[0].s + 0.5 * w[0].length {
                push(
                    DiagnosticKind::Overlap,
                    format!(
                        "vehicles {} and {} overlap near s={}",
                        w[0].id, w[1].id, w[0].s
                    ),
                );
            }
        }
    }
    if out.is_empty() {
        Ok(())
    } else {
        Err(out)
    }
}

/// Stream of main-lane vehicles at equilibrium spacing. The front vehicle
/// drives at its desired speed; the rest want to go `follower_ratio` times
/// faster and so settle at the IDM equilibrium gap behind it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Platoon {
    pub speed: f64,
    pub headway: f64,
    pub yield_factor: f64,
    pub follower_ratio: f64,
    pub s_front: f64,
    pub s_back: f64,
    pub length: f64,
    pub width: f64,
}

impl Platoon {
    pub fn spawn(&self, lane: Lane, first_id: u32) -> Vec<TrafficSpawn> {
        let base = IdmParams {
            headway: self.headway,
            yield_factor: self.yield_factor,
            ..IdmParams::default()
        };
        let leader = IdmParams {
            v0: self.speed,
            ..base
        };
        let follower = IdmParams {
            v0: self.speed * self.follower_ratio,
            ..base
        };
        let gap = follower.equilibrium_gap(self.speed);
        let mut out = Vec::new();
        let mut s = self.s_front;
        let mut id = first_id;
        while s >= self.s_back {
            let idm = if out.is_empty() { leader } else { follower };
            out.push(TrafficSpawn {
                id,
                lane,
                s,
                v: self.speed,
                length: self.length,
                width: self.width,
                idm,
            });
            id += 1;
            s -= gap + self.length;
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HeadwaySweepConfig {
    pub count: usize,
    pub headway_min: f64,
    pub headway_max: f64,
    pub stream_speed: f64,
    pub yield_factor: f64,
    pub ego_s: f64,
    pub ego_speed: f64,
    pub speed_limit: f64,
    pub road_length: f64,
    pub s_hard_nose: f64,
    pub s_soft_nose: f64,
    pub s_ramp_end: f64,
    pub lane_width: f64,
    /// Stream extent relative to the ego start and the ramp end.
    pub behind_ego: f64,
    pub past_ramp_end: f64,
}

impl Default for HeadwaySweepConfig {
    fn default() -> Self {
        Self {
            count: 50,
            headway_min: 0.25,
            headway_max: 3.0,
            stream_speed: 15.28,
            yield_factor: 0.1,
            ego_s: 10.0,
            ego_speed: 15.0,
            speed_limit: 29.06,
            road_length: 700.0,
            s_hard_nose: 60.0,
            s_soft_nose: 100.0,
            s_ramp_end: 300.0,
            lane_width: 3.5,
            behind_ego: 60.0,
            past_ramp_end: 200.0,
        }
    }
}

pub const VEHICLE_LENGTH: f64 = 4.6;
pub const VEHICLE_WIDTH: f64 = 1.85;

/// Fixed straight ramp with a main-lane stream whose time headway is swept.
pub fn generate_headway_sweep(cfg: &HeadwaySweepConfig) -> Result<Vec<Scenario>> {
    if cfg.count < 2 {
        return Err(Error::Config(
            "a headway sweep needs at least two scenarios".into(),
        ));
    }
    if !(cfg.headway_min > 0.0 && cfg.headway_max >= cfg.headway_min) {
        return Err(Error::Config(
            "headways must be positive and ordered".into(),
        ));
    }
    let road = RoadSpec {
        geometry: RoadGeometry::Polyline {
            points: vec![[0.0, 0.0], [cfg.road_length, 0.0]],
        },
        spacing: 1.0,
        w_merge: cfg.lane_width,
        w_main: cfg.lane_width,
        s_hard_nose: cfg.s_hard_nose,
        s_soft_nose: cfg.s_soft_nose,
        s_ramp_end: cfg.s_ramp_end,
        speed_limit: cfg.speed_limit,
    };
    Ok(linspace(cfg.headway_min, cfg.headway_max, cfg.count)
        .into_iter()
        .enumerate()
        .map(|(i, h)| {
            let platoon = Platoon {
                speed: cfg.stream_speed,
                headway: h,
                yield_factor: cfg.yield_factor,
                follower_ratio: 1.2,
                s_front: cfg.s_ramp_end + cfg.past_ramp_end,
                s_back: cfg.ego_s - cfg.behind_ego,
                length: VEHICLE_LENGTH,
                width: VEHICLE_WIDTH,
            };
            Scenario {
                label: format!("headway-{i:02}-{h:.3}"),
                seed: i as u64,
                road: road.clone(),
                ego: EgoSpawn {
                    s: cfg.ego_s,
                    l: 0.5 * cfg.lane_width,
                    v: cfg.ego_speed,
                },
                traffic: platoon.spawn(Lane::Main, 1),
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SuiteConfig {
    pub count: usize,
    pub templates: usize,
    pub ramp_length: [f64; 2],
    pub lane_width: [f64; 2],
    pub speed_limit: [f64; 2],
    pub stream_speed: [f64; 2],
    pub headway: [f64; 2],
    pub yield_factors: Vec<f64>,
    pub ego_speed: [f64; 2],
    /// Largest main-line curvature magnitude among the templates.
    pub max_curvature: f64,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            count: 160,
            templates: 8,
            ramp_length: [120.0, 350.0],
            lane_width: [3.4, 3.7],
            speed_limit: [24.6, 33.33],
            stream_speed: [2.78, 33.33],
            headway: [0.8, 3.0],
            yield_factors: vec![0.1, 0.7],
            ego_speed: [8.0, 20.0],
            max_curvature: 1.0 / 400.0,
        }
    }
}

impl SuiteConfig {
    pub fn validate(&self) -> Result<()> {
        let ranges = [
            ("ramp_length", self.ramp_length),
            ("lane_width", self.lane_width),
            ("speed_limit", self.speed_limit),
            ("stream_speed", self.stream_speed),
            ("headway", self.headway),
            ("ego_speed", self.ego_speed),
        ];
        for (name, [lo, hi]) in ranges {
            if !(lo <= hi && lo >= 0.0) {
                return Err(Error::Config(format!(
                    "{name}: range [{lo}, {hi}] is inconsistent"
                )));
            }
        }
        if self.headway[0] <= 0.0 || self.lane_width[0] <= 0.0 || self.speed_limit[0] <= 0.0 {
            return Err(Error::Config(
                "headway, lane width and speed limit must be positive".into(),
            ));
        }
        if self.ramp_length[0] < 60.0 {
            return Err(Error::Config(
                "ramps shorter than 60 m are not supported".into(),
            ));
        }
        if self.yield_factors.is_empty()
            || self.yield_factors.iter().any(|y| !(0.0..=1.0).contains(y))
        {
            return Err(Error::Config("yield factors must lie in [0, 1]".into()));
        }
        if self.templates == 0 || self.count == 0 {
            return Err(Error::Config(
                "need at least one template and one scenario".into(),
            ));
        }
        if !(self.max_curvature >= 0.0 && self.max_curvature < 0.01) {
            return Err(Error::Config("template curvature out of range".into()));
        }
        Ok(())
    }
}

/// Shape of one ramp family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeometryTemplate {
    pub kappa: f64,
    /// Share of the ramp-length range this template draws from.
    pub ramp_band: [f64; 2],
    /// Distance between hard and soft nose.
    pub gore: f64,
}

pub fn geometry_templates(cfg: &SuiteConfig) -> Vec<GeometryTemplate> {
    let k = cfg.max_curvature;
    let kappas = [0.0, k, -k, 0.5 * k, -0.5 * k, 0.0, k, -k];
    let bands = [[0.0, 0.5], [0.5, 1.0]];
    let gores = [40.0, 25.0, 60.0, 40.0];
    (0..cfg.templates)
        .map(|i| GeometryTemplate {
            kappa: kappas[i % kappas.len()],
            ramp_band: bands[i % 2],
            gore: gores[(i / 2) % gores.len()],
        })
        .collect()
}

fn uniform(rng: &mut ChaCha8Rng, r: [f64; 2]) -> f64 {
    if r[1] > r[0] {
        rng.random_range(r[0]..=r[1])
    } else {
        r[0]
    }
}

/// Seeded suite spread evenly over the geometry templates.
pub fn generate_random_suite(cfg: &SuiteConfig, seed: u64) -> Result<Vec<Scenario>> {
    cfg.validate()?;
    let templates = geometry_templates(cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment: Vec<usize> = (0..cfg.count).map(|i| i % templates.len()).collect();
    assignment.shuffle(&mut rng);
    let mut out = Vec::with_capacity(cfg.count);
    for (i, &ti) in assignment.iter().enumerate() {
        let tpl = templates[ti];
        let ep_seed: u64 = rng.random();
        let mut r = ChaCha8Rng::seed_from_u64(ep_seed);
        let span = cfg.ramp_length[1] - cfg.ramp_length[0];
        let band = [
            cfg.ramp_length[0] + span * tpl.ramp_band[0],
            cfg.ramp_length[0] + span * tpl.ramp_band[1],
        ];
        let ramp = uniform(&mut r, band);
        let width = uniform(&mut r, cfg.lane_width);
        let limit = uniform(&mut r, cfg.speed_limit);
        let stream = uniform(&mut r, cfg.stream_speed);
        let headway = uniform(&mut r, cfg.headway);
        let ego_v = uniform(&mut r, cfg.ego_speed);
        let ego_s = 10.0;
        let s_hard = 60.0;
        let s_soft = s_hard + tpl.gore;
        let s_end = s_soft + ramp;
        let length = s_end + 250.0;
        // Straight approach, then the template curvature with short
        // transitions at both ends.
        let pieces = vec![
            CurvaturePiece {
                length: 40.0,
                kappa_start: 0.0,
                kappa_end: 0.0,
            },
            CurvaturePiece {
                length: 40.0,
                kappa_start: 0.0,
                kappa_end: tpl.kappa,
            },
            CurvaturePiece {
                length: length - 80.0,
                kappa_start: tpl.kappa,
                kappa_end: tpl.kappa,
            },
        ];
        let road = RoadSpec {
            geometry: RoadGeometry::Curvature {
                start: [0.0, 0.0, 0.0],
                pieces,
            },
            spacing: 1.0,
            w_merge: width,
            w_main: width,
            s_hard_nose: s_hard,
            s_soft_nose: s_soft,
            s_ramp_end: s_end,
            speed_limit: limit,
        };
        let platoon = Platoon {
            speed: stream,
            headway,
            yield_factor: 0.0,
            follower_ratio: 1.2,
            s_front: s_end + 150.0,
            s_back: ego_s - 80.0,
            length: VEHICLE_LENGTH,
            width: VEHICLE_WIDTH,
        };
        let mut traffic = platoon.spawn(Lane::Main, 1);
        for v in &mut traffic {
            v.idm.yield_factor = cfg.yield_factors[r.random_range(0..cfg.yield_factors.len())];
        }
        out.push(Scenario {
            label: format!("suite-{i:03}-t{ti}"),
            seed: ep_seed,
            road,
            ego: EgoSpawn {
                s: ego_s,
                l: 0.5 * width,
                v: ego_v,
            },
            traffic,
        });
    }
    Ok(out)
}
