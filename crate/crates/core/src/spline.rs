use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::config::BvpConfig;
use crate::error::{Error, Result};
use crate::geometry::{PathSample, StaticState};
use crate::math::wrap_angle;

/// Curvature cubic given by its values at s = 0, s_f/3, 2s_f/3 and s_f.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplineParams {
    pub knots: [f64; 4],
    pub length: f64,
}

/// Polynomial coefficients (a0, a1, a2, a3) of κ(s) = a0 + a1 s + a2 s² + a3 s³.
pub fn coeffs_from_knots(p: &SplineParams) -> [f64; 4] {
    let [p0, p1, p2, p3] = p.knots;
    let l = p.length;
    [
        p0,
        -(11.0 * p0 - 18.0 * p1 + 9.0 * p2 - 2.0 * p3) / (2.0 * l),
        9.0 * (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3) / (2.0 * l * l),
        -9.0 * (p0 - 3.0 * p1 + 3.0 * p2 - p3) / (2.0 * l * l * l),
    ]
}

impl SplineParams {
    pub fn new(knots: [f64; 4], length: f64) -> Self {
        Self { knots, length }
    }

    pub fn coeffs(&self) -> [f64; 4] {
        coeffs_from_knots(self)
    }

    pub fn curvature(&self, s: f64) -> f64 {
        eval_cubic(&self.coeffs(), s)
    }

    pub fn curvature_rate(&self, s: f64) -> f64 {
        eval_cubic_rate(&self.coeffs(), s)
    }
}

#[inline]
pub fn eval_cubic(a: &[f64; 4], s: f64) -> f64 {
    a[0] + s * (a[1] + s * (a[2] + s * a[3]))
}

#[inline]
pub fn eval_cubic_rate(a: &[f64; 4], s: f64) -> f64 {
    a[1] + s * (2.0 * a[2] + s * 3.0 * a[3])
}

pub type PathPose = PathSample;

/// One curvature-continuous path piece, integrated from its start state.
/// Pose `s` values are arc lengths along the segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathSegment {
    pub params: SplineParams,
    pub start: StaticState,
    pub poses: Vec<PathPose>,
}

#[inline]
fn rk4_step(a: &[f64; 4], s: f64, h: f64, x: &mut f64, y: &mut f64, th: &mut f64) {
    let k1 = eval_cubic(a, s);
    let km = eval_cubic(a, s + 0.5 * h);
    let k4 = eval_cubic(a, s + h);
    let (s1, c1) = th.sin_cos();
    let (s2, c2) = (*th + 0.5 * h * k1).sin_cos();
    let (s3, c3) = (*th + 0.5 * h * km).sin_cos();
    let (s4, c4) = (*th + h * km).sin_cos();
    *x += h / 6.0 * (c1 + 2.0 * c2 + 2.0 * c3 + c4);
    *y += h / 6.0 * (s1 + 2.0 * s2 + 2.0 * s3 + s4);
    *th += h / 6.0 * (k1 + 4.0 * km + k4);
}

/// Endpoint (x, y, θ) after `steps` equal RK4 steps.
pub fn integrate_endpoint(
    params: &SplineParams,
    start: (f64, f64, f64),
    steps: usize,
) -> (f64, f64, f64) {
    let a = params.coeffs();
    let h = params.length / steps as f64;
    let (mut x, mut y, mut th) = start;
    for i in 0..steps {
        rk4_step(&a, i as f64 * h, h, &mut x, &mut y, &mut th);
    }
    (x, y, th)
}

/// Classical RK4 on dx/ds = cos θ, dy/ds = sin θ, dθ/ds = κ(s). The step is
/// shrunk so that the last sample lands exactly on s_f.
pub fn integrate_path(params: &SplineParams, start: &StaticState, step: f64) -> PathSegment {
    let n = ((params.length / step) - 1e-9).ceil().max(1.0) as usize;
    integrate_path_n(params, start, n)
}

pub fn integrate_path_n(params: &SplineParams, start: &StaticState, n: usize) -> PathSegment {
    let a = params.coeffs();
    let h = params.length / n as f64;
    let (mut x, mut y, mut th) = (start.x, start.y, start.theta);
    let mut poses = Vec::with_capacity(n + 1);
    poses.push(PathPose {
        s: 0.0,
        x,
        y,
        theta: th,
        kappa: params.knots[0],
    });
    for i in 0..n {
        rk4_step(&a, i as f64 * h, h, &mut x, &mut y, &mut th);
        let s = if i + 1 == n {
            params.length
        } else {
            (i + 1) as f64 * h
        };
        let kappa = if i + 1 == n {
            params.knots[3]
        } else {
            eval_cubic(&a, s)
        };
        poses.push(PathPose {
            s,
            x,
            y,
            theta: th,
            kappa,
        });
    }
    PathSegment {
        params: *params,
        start: *start,
        poses,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BvpSolution {
    pub params: SplineParams,
    /// Newton iterations of the start that converged.
    pub iterations: usize,
    /// Initial guesses tried, the converged one included.
    pub starts: usize,
}

fn residual(
    u: &Vector3<f64>,
    p0: f64,
    p3: f64,
    x0: &StaticState,
    xf: &StaticState,
    steps: usize,
) -> Vector3<f64> {
    let params = SplineParams::new([p0, u[0], u[1], p3], u[2]);
    let (x, y, th) = integrate_endpoint(&params, (x0.x, x0.y, x0.theta), steps);
    Vector3::new(x - xf.x, y - xf.y, wrap_angle(th - xf.theta))
}

fn within(r: &Vector3<f64>, pos_tol: f64, head_tol: f64) -> bool {
    r[0].hypot(r[1]) < pos_tol && r[2].abs() < head_tol
}

/// Newton-Raphson shooting for the curvature cubic joining two states.
/// p0 and p3 are pinned to the boundary curvatures; (p1, p2, s_f) are solved
/// so that the integrated endpoint reaches `xf`. When the first start fails
/// and `cfg.restarts` is set, a fixed grid of further starts is tried.
pub fn solve_bvp(
    x0: &StaticState,
    xf: &StaticState,
    init: Option<&SplineParams>,
    cfg: &BvpConfig,
) -> Result<BvpSolution> {
    let (p0, p3) = (x0.kappa, xf.kappa);
    let dist = (xf.x - x0.x).hypot(xf.y - x0.y);
    let dth = wrap_angle(xf.theta - x0.theta);
    let base = dist * (1.0 + dth * dth / 5.0);
    let u = match init {
        Some(g) => Vector3::new(g.knots[1], g.knots[2], g.length),
        None => Vector3::new(p0 + (p3 - p0) / 3.0, p0 + 2.0 * (p3 - p0) / 3.0, base),
    };
    let first = match newton(x0, xf, u, cfg) {
        Ok(sol) => return Ok(sol),
        Err(e) => e,
    };
    let mut starts = 1;
    if !cfg.restarts || !(base > 0.0) {
        return Err(first);
    }
    // Interior knots equal, or skewed into an S, with their mean set so the
    // integrated curvature matches the heading change.
    for m in [1.0, 1.3, 0.8, 1.7, 2.2, 3.0, 4.0] {
        let len = base * m;
        let q = (8.0 * dth / len - p0 - p3) / 6.0;
        for d in [0.0, 0.1, -0.1, 0.2, -0.2] {
            starts += 1;
            if let Ok(sol) = newton(x0, xf, Vector3::new(q + d, q - d, len), cfg) {
                return Ok(BvpSolution { starts, ..sol });
            }
        }
    }
    Err(first)
}

fn newton(
    x0: &StaticState,
    xf: &StaticState,
    mut u: Vector3<f64>,
    cfg: &BvpConfig,
) -> Result<BvpSolution> {
    let (p0, p3) = (x0.kappa, xf.kappa);
    if !(u[2] > 0.0) {
        return Err(Error::BvpFailure("initial length is not positive".into()));
    }
    let steps = cfg.coarse_steps;
    let (pt, ht) = (cfg.position_tolerance, cfg.heading_tolerance);
    let (pt_in, ht_in) = (pt * cfg.inner_factor, ht * cfg.inner_factor);
    let mut r = residual(&u, p0, p3, x0, xf, steps);
    let mut iterations = 0;
    let h = [
        cfg.knot_perturbation,
        cfg.knot_perturbation,
        cfg.length_perturbation,
    ];

    while !within(&r, pt_in, ht_in) {
        if iterations == cfg.max_iterations {
            if within(&r, pt, ht) {
                break;
            }
            return Err(Error::BvpFailure(format!(
                "no convergence in {iterations} iterations"
            )));
        }
        iterations += 1;
        let mut jac = Matrix3::zeros();
        for j in 0..3 {
            let mut up = u;
            let mut um = u;
            up[j] += h[j];
            um[j] -= h[j];
            if um[2] <= 0.0 {
                return Err(Error::BvpFailure("length collapsed".into()));
            }
            let pp = SplineParams::new([p0, up[0], up[1], p3], up[2]);
            let pm = SplineParams::new([p0, um[0], um[1], p3], um[2]);
            let ep = integrate_endpoint(&pp, (x0.x, x0.y, x0.theta), steps);
            let em = integrate_endpoint(&pm, (x0.x, x0.y, x0.theta), steps);
            jac[(0, j)] = (ep.0 - em.0) / (2.0 * h[j]);
            jac[(1, j)] = (ep.1 - em.1) / (2.0 * h[j]);
            jac[(2, j)] = wrap_angle(ep.2 - em.2) / (2.0 * h[j]);
        }
        let delta = jac
            .lu()
            .solve(&(-r))
            .ok_or_else(|| Error::BvpFailure("singular jacobian".into()))?;
        let norm = r.norm();
        let mut lambda = 1.0;
        let mut next = None;
        for k in 0..=cfg.max_halvings {
            let cand = u + delta * lambda;
            if cand[2] > 0.0 && cand.iter().all(|c| c.is_finite()) {
                let rc = residual(&cand, p0, p3, x0, xf, steps);
                if rc.norm() < norm || k == cfg.max_halvings {
                    next = Some((cand, rc));
                    break;
                }
            }
            lambda *= 0.5;
        }
        match next {
            Some((cand, _)) if cand[0].abs().max(cand[1].abs()) > cfg.max_abs_knot => {
                return Err(Error::BvpFailure("knots diverged".into()));
            }
            Some((cand, rc)) => {
                u = cand;
                r = rc;
            }
            None => return Err(Error::BvpFailure("length driven non-positive".into())),
        }
    }

    let params = SplineParams::new([p0, u[0], u[1], p3], u[2]);
    let fine = residual(&u, p0, p3, x0, xf, cfg.verify_steps);
    if !within(&fine, pt, ht) {
        return Err(Error::BvpFailure("fine-step verification failed".into()));
    }
    Ok(BvpSolution {
        params,
        iterations,
        starts: 1,
    })
}
