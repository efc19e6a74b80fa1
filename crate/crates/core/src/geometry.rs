use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::wrap_angle;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathSample {
    pub s: f64,
    pub x: f64,
    pub y: f64,
    /// Heading, unwrapped so that it is continuous along the path.
    pub theta: f64,
    pub kappa: f64,
}

/// Pose of a point on the road, with its Frenet coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct StaticState {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub kappa: f64,
    pub s: f64,
    pub l: f64,
}

/// Arc-length parameterized curve sampled at uniform spacing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferencePath {
    samples: Vec<PathSample>,
    spacing: f64,
}

/// Resamples a polyline at uniform arc length. Heading comes from central
/// differences of the resampled points and curvature from differences of
/// the heading.
pub fn build_reference_path(points: &[(f64, f64)], resample_spacing: f64) -> Result<ReferencePath> {
    if points.len() < 2 {
        return Err(Error::DegenerateGeometry("need at least two points".into()));
    }
    if !(resample_spacing > 0.0) {
        return Err(Error::DegenerateGeometry(
            "resample spacing must be positive".into(),
        ));
    }
    let mut cum = Vec::with_capacity(points.len());
    cum.push(0.0);
    for w in points.windows(2) {
        let d = (w[1].0 - w[0].0).hypot(w[1].1 - w[0].1);
        if !(d > 1e-9) {
            return Err(Error::DegenerateGeometry(format!(
                "duplicate consecutive points at ({}, {})",
                w[0].0, w[0].1
            )));
        }
        cum.push(cum.last().unwrap() + d);
    }
    let total = *cum.last().unwrap();
    let n = ((total / resample_spacing) - 1e-9).ceil().max(1.0) as usize;
    let ds = total / n as f64;

    let mut xy = Vec::with_capacity(n + 1);
    let mut seg = 0;
    for i in 0..=n {
        let s = if i == n { total } else { i as f64 * ds };
        while seg + 2 < cum.len() && cum[seg + 1] < s {
            seg += 1;
        }
        let t = ((s - cum[seg]) / (cum[seg + 1] - cum[seg])).clamp(0.0, 1.0);
        let (a, b) = (points[seg], points[seg + 1]);
        xy.push((a.0 + (b.0 - a.0) * t, a.1 + (b.1 - a.1) * t));
    }

    let mut theta = vec![0.0; n + 1];
    for i in 0..=n {
        // Second-order differences, one-sided at the ends.
        let (dx, dy) = if n == 1 {
            (xy[1].0 - xy[0].0, xy[1].1 - xy[0].1)
        } else if i == 0 {
            (
                -3.0 * xy[0].0 + 4.0 * xy[1].0 - xy[2].0,
                -3.0 * xy[0].1 + 4.0 * xy[1].1 - xy[2].1,
            )
        } else if i == n {
            (
                3.0 * xy[n].0 - 4.0 * xy[n - 1].0 + xy[n - 2].0,
                3.0 * xy[n].1 - 4.0 * xy[n - 1].1 + xy[n - 2].1,
            )
        } else {
            (xy[i + 1].0 - xy[i - 1].0, xy[i + 1].1 - xy[i - 1].1)
        };
        theta[i] = dy.atan2(dx);
    }
    unwrap_in_place(&mut theta);
    let kappa = differentiate(&theta, ds);

    let samples = (0..=n)
        .map(|i| PathSample {
            s: if i == n { total } else { i as f64 * ds },
            x: xy[i].0,
            y: xy[i].1,
            theta: theta[i],
            kappa: kappa[i],
        })
        .collect();
    Ok(ReferencePath {
        samples,
        spacing: ds,
    })
}

fn unwrap_in_place(theta: &mut [f64]) {
    for i in 1..theta.len() {
        let d = wrap_angle(theta[i] - theta[i - 1]);
        theta[i] = theta[i - 1] + d;
    }
}

fn differentiate(v: &[f64], ds: f64) -> Vec<f64> {
    let n = v.len() - 1;
    (0..=n)
        .map(|i| {
            if n == 0 {
                0.0
            } else if i == 0 {
                (v[1] - v[0]) / ds
            } else if i == n {
                (v[n] - v[n - 1]) / ds
            } else {
                (v[i + 1] - v[i - 1]) / (2.0 * ds)
            }
        })
        .collect()
}

impl ReferencePath {
    /// Wraps samples that are already uniformly spaced, e.g. an analytic curve.
    pub fn from_samples(samples: Vec<PathSample>) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::DegenerateGeometry(
                "need at least two samples".into(),
            ));
        }
        let spacing = samples[1].s - samples[0].s;
        if samples[0].s != 0.0 || !(spacing > 0.0) {
            return Err(Error::DegenerateGeometry(
                "samples must start at s = 0 and increase".into(),
            ));
        }
        for (i, w) in samples.windows(2).enumerate() {
            let d = w[1].s - w[0].s;
            if (d - spacing).abs() > 1e-9 * spacing.max(1.0) {
                return Err(Error::DegenerateGeometry(format!(
                    "non-uniform spacing after sample {i}"
                )));
            }
        }
        Ok(Self { samples, spacing })
    }

    /// Integrates a curvature profile from a start pose. Curvature is stored
    /// exactly; position uses a fine sub-step.
    pub fn from_curvature(
        start: (f64, f64, f64),
        length: f64,
        spacing: f64,
        kappa: impl Fn(f64) -> f64,
    ) -> Result<Self> {
        if !(length > 0.0 && spacing > 0.0) {
            return Err(Error::DegenerateGeometry(
                "length and spacing must be positive".into(),
            ));
        }
        let n = ((length / spacing) - 1e-9).ceil().max(1.0) as usize;
        let ds = length / n as f64;
        let sub = 8;
        let h = ds / sub as f64;
        let (mut x, mut y, mut th) = start;
        let mut samples = Vec::with_capacity(n + 1);
        for i in 0..=n {
            let s = i as f64 * ds;
            samples.push(PathSample {
                s,
                x,
                y,
                theta: th,
                kappa: kappa(s),
            });
            if i == n {
                break;
            }
            for k in 0..sub {
                let s0 = s + k as f64 * h;
                let k1 = kappa(s0);
                let k2 = kappa(s0 + 0.5 * h);
                let k4 = kappa(s0 + h);
                let th_mid = th + 0.5 * h * (k1 + k2) * 0.5;
                let th_end = th + h / 6.0 * (k1 + 4.0 * k2 + k4);
                x += h / 6.0 * (th.cos() + 4.0 * th_mid.cos() + th_end.cos());
                y += h / 6.0 * (th.sin() + 4.0 * th_mid.sin() + th_end.sin());
                th = th_end;
            }
        }
        Ok(Self {
            samples,
            spacing: ds,
        })
    }

    pub fn samples(&self) -> &[PathSample] {
        &self.samples
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn total_length(&self) -> f64 {
        self.samples.last().unwrap().s
    }

    fn locate(&self, s: f64) -> (usize, f64) {
        let n = self.samples.len();
        let i = ((s / self.spacing).floor().max(0.0) as usize).min(n - 2);
        let t = (s - self.samples[i].s) / (self.samples[i + 1].s - self.samples[i].s);
        (i, t)
    }

    /// Interpolated (x, y, θ, κ). θ is continuous along the path, so plain
    /// linear interpolation of it is angle-aware.
    pub fn query_pose(&self, s: f64) -> Result<(f64, f64, f64, f64)> {
        let len = self.total_length();
        if !(s >= -1e-9 && s <= len + 1e-9) {
            return Err(Error::OutOfRange { s, length: len });
        }
        Ok(self.pose_clamped(s))
    }

    pub(crate) fn pose_clamped(&self, s: f64) -> (f64, f64, f64, f64) {
        let s = s.clamp(0.0, self.total_length());
        let (i, t) = self.locate(s);
        let (a, b) = (&self.samples[i], &self.samples[i + 1]);
        if t == 0.0 {
            return (a.x, a.y, a.theta, a.kappa);
        }
        if t == 1.0 {
            return (b.x, b.y, b.theta, b.kappa);
        }
        (
            a.x + (b.x - a.x) * t,
            a.y + (b.y - a.y) * t,
            a.theta + (b.theta - a.theta) * t,
            a.kappa + (b.kappa - a.kappa) * t,
        )
    }

    pub fn lateral_offset_state(&self, s: f64, l: f64) -> Result<StaticState> {
        let (x, y, theta, kappa) = self.query_pose(s)?;
        offset_pose(x, y, theta, kappa, s, l)
    }

    /// Frenet coordinates of a point, searching the whole path.
    pub fn project_to_frenet(&self, x: f64, y: f64, corridor: f64) -> Result<(f64, f64)> {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, p) in self.samples.iter().enumerate() {
            let d = (p.x - x).powi(2) + (p.y - y).powi(2);
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        self.refine_projection(x, y, best, corridor)
    }

    /// Like [`project_to_frenet`](Self::project_to_frenet) but walks from a
    /// guess instead of scanning every sample.
    pub fn project_near(&self, x: f64, y: f64, s_guess: f64, corridor: f64) -> Result<(f64, f64)> {
        let n = self.samples.len();
        let d2 = |i: usize| (self.samples[i].x - x).powi(2) + (self.samples[i].y - y).powi(2);
        let mut i = ((s_guess / self.spacing).round().max(0.0) as usize).min(n - 1);
        let mut di = d2(i);
        loop {
            if i + 1 < n && d2(i + 1) < di {
                i += 1;
                di = d2(i);
            } else if i > 0 && d2(i - 1) < di {
                i -= 1;
                di = d2(i);
            } else {
                break;
            }
        }
        self.refine_projection(x, y, i, corridor)
    }

    /// Cheap projection for points known to lie close to `s_guess`: a few
    /// Newton steps on the foot-point condition, no corridor check.
    pub fn project_local(&self, x: f64, y: f64, s_guess: f64) -> (f64, f64) {
        let len = self.total_length();
        let mut s = s_guess.clamp(0.0, len);
        for _ in 0..4 {
            let (cx, cy, th, k) = self.pose_clamped(s);
            let (sin, cos) = th.sin_cos();
            let (dx, dy) = (x - cx, y - cy);
            let l = -dx * sin + dy * cos;
            let step = (dx * cos + dy * sin) / (1.0 - k * l).max(0.2);
            s = (s + step).clamp(0.0, len);
            if step.abs() < 1e-9 {
                break;
            }
        }
        let (cx, cy, th, _) = self.pose_clamped(s);
        (s, -(x - cx) * th.sin() + (y - cy) * th.cos())
    }

    fn foot_residual(&self, x: f64, y: f64, s: f64) -> f64 {
        let (cx, cy, th, _) = self.pose_clamped(s);
        (x - cx) * th.cos() + (y - cy) * th.sin()
    }

    fn refine_projection(&self, x: f64, y: f64, near: usize, corridor: f64) -> Result<(f64, f64)> {
        let n = self.samples.len();
        let fail = || Error::ProjectionFailure { x, y };
        let mut lo = near.saturating_sub(1);
        let mut hi = (near + 1).min(n - 1);
        let mut glo = self.foot_residual(x, y, self.samples[lo].s);
        let mut ghi = self.foot_residual(x, y, self.samples[hi].s);
        let mut grow = 0;
        while !(glo >= 0.0 && ghi <= 0.0) {
            if grow > 8 {
                return Err(fail());
            }
            if glo < 0.0 {
                if lo == 0 {
                    return Err(fail());
                }
                lo -= 1;
                glo = self.foot_residual(x, y, self.samples[lo].s);
            }
            if ghi > 0.0 {
                if hi == n - 1 {
                    return Err(fail());
                }
                hi += 1;
                ghi = self.foot_residual(x, y, self.samples[hi].s);
            }
            grow += 1;
        }
        let (mut a, mut b) = (self.samples[lo].s, self.samples[hi].s);
        let (mut fa, mut fb) = (glo, ghi);
        let mut s = a;
        if fa == 0.0 {
            s = a;
        } else if fb == 0.0 {
            s = b;
        } else {
            // Illinois false position.
            let mut side = 0i8;
            for _ in 0..100 {
                s = (a * fb - b * fa) / (fb - fa);
                let fs = self.foot_residual(x, y, s);
                if fs == 0.0 || (b - a) < 1e-13 {
                    break;
                }
                if fs > 0.0 {
                    a = s;
                    fa = fs;
                    if side == 1 {
                        fb *= 0.5;
                    }
                    side = 1;
                } else {
                    b = s;
                    fb = fs;
                    if side == -1 {
                        fa *= 0.5;
                    }
                    side = -1;
                }
                if fs.abs() < 1e-13 {
                    break;
                }
            }
        }
        let (cx, cy, th, _) = self.pose_clamped(s);
        let l = -(x - cx) * th.sin() + (y - cy) * th.cos();
        if !(l.abs() <= corridor) {
            return Err(fail());
        }
        Ok((s, l))
    }
}

/// Shifts a reference pose along its left normal by `l`.
pub fn offset_pose(x: f64, y: f64, theta: f64, kappa: f64, s: f64, l: f64) -> Result<StaticState> {
    let lk = l * kappa;
    if !(lk.abs() < 1.0) {
        return Err(Error::OffsetSingularity { l, kappa });
    }
    let (sin, cos) = theta.sin_cos();
    Ok(StaticState {
        x: x - l * sin,
        y: y + l * cos,
        theta,
        kappa: kappa / (1.0 - lk),
        s,
        l,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Lane {
    Merge,
    Main,
    OffRoad,
}

/// Merge lane plus one adjacent main lane. The reference path is the outer
/// edge of the merge lane and the main lane lies at positive `l`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoadModel {
    pub reference: ReferencePath,
    pub w_merge: f64,
    pub w_main: f64,
    pub s_hard_nose: f64,
    pub s_soft_nose: f64,
    pub s_ramp_end: f64,
    pub speed_limit: f64,
}

impl RoadModel {
    pub fn new(
        reference: ReferencePath,
        w_merge: f64,
        w_main: f64,
        s_hard_nose: f64,
        s_soft_nose: f64,
        s_ramp_end: f64,
        speed_limit: f64,
    ) -> Result<Self> {
        let road = Self {
            reference,
            w_merge,
            w_main,
            s_hard_nose,
            s_soft_nose,
            s_ramp_end,
            speed_limit,
        };
        road.validate()?;
        Ok(road)
    }

    pub fn validate(&self) -> Result<()> {
        let len = self.reference.total_length();
        if !(0.0 <= self.s_hard_nose
            && self.s_hard_nose < self.s_soft_nose
            && self.s_soft_nose < self.s_ramp_end
            && self.s_ramp_end <= len)
        {
            return Err(Error::InvalidRoad(format!(
                "need 0 <= hard nose ({}) < soft nose ({}) < ramp end ({}) <= length ({len})",
                self.s_hard_nose, self.s_soft_nose, self.s_ramp_end
            )));
        }
        if !(self.w_merge > 0.0 && self.w_main > 0.0 && self.speed_limit > 0.0) {
            return Err(Error::InvalidRoad(
                "widths and speed limit must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn length(&self) -> f64 {
        self.reference.total_length()
    }

    pub fn merge_center(&self) -> f64 {
        0.5 * self.w_merge
    }

    pub fn main_center(&self) -> f64 {
        self.w_merge + 0.5 * self.w_main
    }

    pub fn outer_edge(&self) -> f64 {
        self.w_merge + self.w_main
    }

    pub fn lane_membership(&self, s: f64, l: f64) -> Lane {
        if (0.0..self.w_merge).contains(&l) && s < self.s_ramp_end {
            Lane::Merge
        } else if l >= self.w_merge && l <= self.outer_edge() {
            Lane::Main
        } else {
            Lane::OffRoad
        }
    }

    /// Whether a footprint corner at (s, l) is strictly inside the drivable
    /// area. The line between the lanes may not be crossed before `line_end`.
    pub fn corner_inside(&self, s: f64, l: f64, line_end: f64) -> bool {
        if !(s > 0.0 && s < self.length() && l < self.outer_edge()) {
            return false;
        }
        if s < self.s_ramp_end {
            l > 0.0 && (s >= line_end || l < self.w_merge)
        } else {
            l > self.w_merge
        }
    }

    pub fn project(&self, x: f64, y: f64) -> Result<(f64, f64)> {
        self.reference.project_to_frenet(x, y, self.corridor())
    }

    pub fn project_near(&self, x: f64, y: f64, s_guess: f64) -> Result<(f64, f64)> {
        self.reference.project_near(x, y, s_guess, self.corridor())
    }

    pub fn corridor(&self) -> f64 {
        2.0 * (self.w_merge + self.w_main)
    }

    pub fn state_at(&self, s: f64, l: f64) -> Result<StaticState> {
        self.reference.lateral_offset_state(s, l)
    }
}

/// File form of a road: a centerline polyline plus lane layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoadDefinition {
    pub centerline: Vec<[f64; 2]>,
    #[serde(default = "default_spacing")]
    pub resample_spacing: f64,
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

impl RoadDefinition {
    pub fn build(&self) -> Result<RoadModel> {
        let pts: Vec<(f64, f64)> = self.centerline.iter().map(|p| (p[0], p[1])).collect();
        let reference = build_reference_path(&pts, self.resample_spacing)?;
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
