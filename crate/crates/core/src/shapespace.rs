//! Shape-space points and periodic gaits.
//!
//! A [`Gait`] is a closed loop `r(t)` in shape space with period `T`. Two
//! representations are supported: a truncated Fourier series per coordinate
//! and a piecewise-linear waypoint loop. Both are evaluated analytically,
//! including the shape velocity `ṙ(t)`.

use std::f64::consts::PI;
use std::ops::Deref;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point `r` in shape space (joint angles, radians).
#[derive(Debug, Clone, PartialEq)]
pub struct Shape(pub DVector<f64>);

/// Shape velocity `ṙ` (rad/s).
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeVelocity(pub DVector<f64>);

impl Shape {
    pub fn new(coords: &[f64]) -> Self {
        Shape(DVector::from_column_slice(coords))
    }

    pub fn zeros(dim: usize) -> Self {
        Shape(DVector::zeros(dim))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn ensure_dim(&self, expected: usize) -> Result<()> {
        if self.dim() == expected {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                expected,
                found: self.dim(),
            })
        }
    }

    /// `self + h·e_i`
    pub fn nudged(&self, i: usize, h: f64) -> Shape {
        let mut v = self.0.clone();
        v[i] += h;
        Shape(v)
    }
}

impl Deref for Shape {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        self.0.as_slice()
    }
}

impl ShapeVelocity {
    pub fn new(rates: &[f64]) -> Self {
        ShapeVelocity(DVector::from_column_slice(rates))
    }

    pub fn zeros(dim: usize) -> Self {
        ShapeVelocity(DVector::zeros(dim))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

impl Deref for ShapeVelocity {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        self.0.as_slice()
    }
}

/// Mean plus `K` harmonics per coordinate:
/// `r_i(t) = mean_i + Σ_k cos_i[k]·cos(kωt) + sin_i[k]·sin(kωt)`, `ω = 2π/T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FourierGait {
    pub mean: Vec<f64>,
    /// `cos[i][k-1]` multiplies `cos(kωt)` in coordinate `i`.
    pub cos: Vec<Vec<f64>>,
    pub sin: Vec<Vec<f64>>,
}

/// Closed polyline. Knot `k` sits at `points[k]` at time `times[k]`; the last
/// segment returns to `points[0]` at `t = T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaypointGait {
    pub points: Vec<Vec<f64>>,
    pub times: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum GaitKind {
    Fourier(FourierGait),
    Waypoints(WaypointGait),
}

/// Periodic shape trajectory. Only constructible through validating
/// constructors, so every `Gait` is closed and well-formed.
#[derive(Debug, Clone, PartialEq)]
pub struct Gait {
    period: f64,
    kind: GaitKind,
}

fn check_period(period: f64) -> Result<()> {
    if period.is_finite() && period > 0.0 {
        Ok(())
    } else {
        Err(Error::MalformedGait(format!(
            "period must be positive and finite, got {period}"
        )))
    }
}

impl Gait {
    pub fn fourier(
        period: f64,
        mean: Vec<f64>,
        cos: Vec<Vec<f64>>,
        sin: Vec<Vec<f64>>,
    ) -> Result<Gait> {
        check_period(period)?;
        let d = mean.len();
        if d == 0 {
            return Err(Error::MalformedGait("shape dimension must be ≥ 1".into()));
        }
        if cos.len() != d || sin.len() != d {
            return Err(Error::MalformedGait(format!(
                "expected {d} coefficient rows, got {} cos / {} sin",
                cos.len(),
                sin.len()
            )));
        }
        let harmonics = cos[0].len();
        if cos.iter().chain(sin.iter()).any(|row| row.len() != harmonics) {
            return Err(Error::MalformedGait(
                "every coordinate needs the same number of harmonics".into(),
            ));
        }
        let all = mean.iter().chain(cos.iter().flatten()).chain(sin.iter().flatten());
        if all.clone().any(|c| !c.is_finite()) {
            return Err(Error::MalformedGait("non-finite coefficient".into()));
        }
        Ok(Gait {
            period,
            kind: GaitKind::Fourier(FourierGait { mean, cos, sin }),
        })
    }

    /// Single-harmonic gait `r_i(t) = mean_i + amp_i·sin(ωt + phase_i)`.
    pub fn sinusoid(period: f64, mean: &[f64], amplitude: &[f64], phase: &[f64]) -> Result<Gait> {
        if amplitude.len() != mean.len() || phase.len() != mean.len() {
            return Err(Error::MalformedGait(
                "mean, amplitude and phase lengths differ".into(),
            ));
        }
        // a·sin(ωt + φ) = a·sin φ·cos ωt + a·cos φ·sin ωt
        let cos = amplitude
            .iter()
            .zip(phase)
            .map(|(a, p)| vec![a * p.sin()])
            .collect();
        let sin = amplitude
            .iter()
            .zip(phase)
            .map(|(a, p)| vec![a * p.cos()])
            .collect();
        Gait::fourier(period, mean.to_vec(), cos, sin)
    }

    /// Constant shape held for one period.
    pub fn stationary(period: f64, shape: &[f64]) -> Result<Gait> {
        Gait::fourier(
            period,
            shape.to_vec(),
            vec![Vec::new(); shape.len()],
            vec![Vec::new(); shape.len()],
        )
    }

    /// Waypoint loop with knots evenly spaced in time.
    pub fn waypoints(points: Vec<Vec<f64>>, period: f64) -> Result<Gait> {
        let n = points.len();
        let times = (0..n).map(|k| period * k as f64 / n as f64).collect();
        Gait::waypoints_timed(points, times, period)
    }

    pub fn waypoints_timed(points: Vec<Vec<f64>>, times: Vec<f64>, period: f64) -> Result<Gait> {
        check_period(period)?;
        if points.is_empty() {
            return Err(Error::MalformedGait("waypoint loop has no points".into()));
        }
        if points.len() != times.len() {
            return Err(Error::MalformedGait(format!(
                "{} waypoints but {} knot times",
                points.len(),
                times.len()
            )));
        }
        let d = points[0].len();
        if d == 0 || points.iter().any(|p| p.len() != d) {
            return Err(Error::MalformedGait(
                "waypoints must share a nonzero dimension".into(),
            ));
        }
        if points.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::MalformedGait("non-finite waypoint".into()));
        }
        if times[0] != 0.0 {
            return Err(Error::MalformedGait("first knot time must be 0".into()));
        }
        for w in times.windows(2) {
            if !(w[1] > w[0]) {
                return Err(Error::MalformedGait(format!(
                    "knot times not strictly increasing at {}",
                    w[1]
                )));
            }
        }
        if !(times[times.len() - 1] < period) {
            return Err(Error::MalformedGait(
                "last knot time must lie before the period".into(),
            ));
        }
        Ok(Gait {
            period,
            kind: GaitKind::Waypoints(WaypointGait { points, times }),
        })
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn kind(&self) -> &GaitKind {
        &self.kind
    }

    pub fn dim(&self) -> usize {
        match &self.kind {
            GaitKind::Fourier(f) => f.mean.len(),
            GaitKind::Waypoints(w) => w.points[0].len(),
        }
    }

    /// Reduces `t` into `[0, T)`.
    pub fn phase_time(&self, t: f64) -> f64 {
        let tau = t.rem_euclid(self.period);
        if tau >= self.period {
            0.0
        } else {
            tau
        }
    }

    /// Shape and shape velocity at time `t`. At waypoint knots the velocity is
    /// the right-hand limit.
    pub fn eval(&self, t: f64) -> (Shape, ShapeVelocity) {
        let tau = self.phase_time(t);
        let piece = self.piece_index(tau);
        self.eval_on_piece(piece, tau)
    }

    pub fn shape_at(&self, t: f64) -> Shape {
        self.eval(t).0
    }

    /// Intervals of `[0, T]` on which the gait is smooth, in order.
    pub fn pieces(&self) -> Vec<(f64, f64)> {
        match &self.kind {
            GaitKind::Fourier(_) => vec![(0.0, self.period)],
            GaitKind::Waypoints(w) => {
                let n = w.times.len();
                (0..n)
                    .map(|k| {
                        let end = if k + 1 < n { w.times[k + 1] } else { self.period };
                        (w.times[k], end)
                    })
                    .collect()
            }
        }
    }

    fn piece_index(&self, tau: f64) -> usize {
        match &self.kind {
            GaitKind::Fourier(_) => 0,
            GaitKind::Waypoints(w) => w.times.partition_point(|&s| s <= tau).saturating_sub(1),
        }
    }

    /// Evaluates the analytic formula of smooth piece `piece` at phase time
    /// `tau`, without reducing `tau` or switching pieces at the endpoints.
    pub fn eval_on_piece(&self, piece: usize, tau: f64) -> (Shape, ShapeVelocity) {
        match &self.kind {
            GaitKind::Fourier(f) => {
                let omega = 2.0 * PI / self.period;
                let phase = omega * tau;
                let d = f.mean.len();
                let mut r = DVector::from_column_slice(&f.mean);
                let mut rdot = DVector::zeros(d);
                for i in 0..d {
                    for (k, (a, b)) in f.cos[i].iter().zip(&f.sin[i]).enumerate() {
                        let kf = (k + 1) as f64;
                        let (s, c) = (kf * phase).sin_cos();
                        r[i] += a * c + b * s;
                        rdot[i] += kf * omega * (b * c - a * s);
                    }
                }
                (Shape(r), ShapeVelocity(rdot))
            }
            GaitKind::Waypoints(w) => {
                let n = w.points.len();
                let (t0, t1) = self.pieces()[piece];
                let p0 = &w.points[piece];
                let p1 = &w.points[(piece + 1) % n];
                let dt = t1 - t0;
                let s = (tau - t0) / dt;
                let r: Vec<f64> = p0.iter().zip(p1).map(|(a, b)| (1.0 - s) * a + s * b).collect();
                let rdot: Vec<f64> = p0.iter().zip(p1).map(|(a, b)| (b - a) / dt).collect();
                (Shape::new(&r), ShapeVelocity::new(&rdot))
            }
        }
    }

    /// Dense sampling into a waypoint loop with `resolution` evenly timed knots.
    pub fn resample(&self, resolution: usize) -> Result<Gait> {
        if resolution < 2 {
            return Err(Error::InvalidArgument("resolution must be ≥ 2".into()));
        }
        let points = (0..resolution)
            .map(|j| {
                let t = self.period * j as f64 / resolution as f64;
                self.shape_at(t).to_vec()
            })
            .collect();
        Gait::waypoints(points, self.period)
    }

    /// Retimes the gait through `warp`, a strictly increasing map of `[0, T]`
    /// onto `[0, T']` with `warp(0) = 0`. Waypoint loops keep their knots;
    /// Fourier gaits are first resampled at `resolution` knots.
    pub fn reparameterize<W: Fn(f64) -> f64>(&self, warp: W, resolution: usize) -> Result<Gait> {
        let start = warp(0.0);
        if start.abs() > 1e-12 * self.period.max(1.0) {
            return Err(Error::InvalidArgument(format!(
                "time warp must fix t = 0, got warp(0) = {start}"
            )));
        }
        let checks = resolution.max(64);
        let mut prev = 0.0;
        for j in 1..=checks {
            let t = self.period * j as f64 / checks as f64;
            let w = warp(t);
            if !(w > prev) || !w.is_finite() {
                return Err(Error::NonMonotoneWarp { at: t });
            }
            prev = w;
        }
        let base = match &self.kind {
            GaitKind::Fourier(_) => self.resample(resolution)?,
            GaitKind::Waypoints(_) => self.clone(),
        };
        let GaitKind::Waypoints(w) = &base.kind else {
            unreachable!("resample always yields a waypoint loop")
        };
        let mut times = Vec::with_capacity(w.times.len());
        times.push(0.0);
        for &t in &w.times[1..] {
            let wt = warp(t);
            if !(wt > *times.last().unwrap()) {
                return Err(Error::NonMonotoneWarp { at: t });
            }
            times.push(wt);
        }
        let new_period = warp(base.period);
        if !(new_period > *times.last().unwrap()) {
            return Err(Error::NonMonotoneWarp { at: base.period });
        }
        Gait::waypoints_timed(w.points.clone(), times, new_period)
    }

    /// A reciprocal gait: the loop traversed forward, then exactly retraced.
    /// Waypoint loops retrace their own knots; Fourier gaits are resampled at
    /// `resolution` knots first. The result has period `2T`.
    pub fn retraced(&self, resolution: usize) -> Result<Gait> {
        let base = match &self.kind {
            GaitKind::Fourier(_) => self.resample(resolution)?,
            GaitKind::Waypoints(_) => self.clone(),
        };
        let GaitKind::Waypoints(w) = &base.kind else {
            unreachable!("resample always yields a waypoint loop")
        };
        let n = w.points.len();
        let mut points = w.points.clone();
        let mut times = w.times.clone();
        points.push(w.points[0].clone());
        times.push(base.period);
        for k in (1..n).rev() {
            points.push(w.points[k].clone());
            times.push(2.0 * base.period - w.times[k]);
        }
        Gait::waypoints_timed(points, times, 2.0 * base.period)
    }
}
