//! Reconstruction of body motion from shape motion.
//!
//! [`integrate_gait`] solves `ġ = g·A(r(t))ṙ(t)` with a fixed-step
//! fourth-order Runge–Kutta–Munthe-Kaas scheme. Steps never straddle a
//! waypoint knot, and for providers with contact pieces a step that crosses a
//! selector boundary is cut at the bisected switch time. The pose is carried
//! across every switch unchanged; only the connection jumps.

use serde::{Deserialize, Serialize};

use crate::connection::ConnectionProvider;
use crate::error::{Error, Result};
use crate::liegroup::{Pose, Twist};
use crate::models::{ContactSet, LeggedModel};
use crate::shapespace::{Gait, Shape};

/// Order of the stepping scheme.
pub const SCHEME_ORDER: u32 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegratorSettings {
    /// Nominal step; each smooth piece of the gait is cut into equal steps no
    /// longer than this.
    pub step: f64,
    /// Width of the bracket a contact switch is located to.
    pub event_tol: f64,
    pub cycles: usize,
}

impl Default for IntegratorSettings {
    fn default() -> Self {
        Self {
            step: 1e-3,
            event_tol: 1e-10,
            cycles: 1,
        }
    }
}

impl IntegratorSettings {
    pub fn with_step(step: f64) -> Self {
        Self {
            step,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(Error::InvalidArgument(format!("step must be positive, got {}", self.step)));
        }
        if !(self.event_tol > 0.0) {
            return Err(Error::InvalidArgument("event tolerance must be positive".into()));
        }
        if self.cycles == 0 {
            return Err(Error::InvalidArgument("need at least one cycle".into()));
        }
        Ok(())
    }
}

/// State at one output time. Values are limits from the integration interval
/// that ends at this sample; `contacts` names the piece used on it.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub pose: Pose,
    pub shape: Shape,
    pub twist: Twist,
    pub contacts: Option<ContactSet>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    /// First time known to lie in the new piece (upper end of the bracket).
    pub time: f64,
    pub bracket: (f64, f64),
    pub before: ContactSet,
    pub after: ContactSet,
    pub shape: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub samples: Vec<Sample>,
    pub events: Vec<EventRecord>,
    pub period: f64,
    pub cycles: usize,
    pub step: f64,
    pub order: u32,
    /// Largest body-velocity norm seen at any stage evaluation.
    pub max_twist_norm: f64,
    /// Sample index at the end of each cycle.
    pub cycle_ends: Vec<usize>,
}

/// Per-cycle and total holonomy of a trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Displacement {
    pub total: Twist,
    pub per_cycle: Vec<Twist>,
}

/// Left-trivialized inverse of `dexp`, truncated after the second bracket
/// (the third-order Bernoulli term vanishes, the fourth is beyond order 4).
fn dexpinv(u: &Twist, v: &Twist) -> Twist {
    let uv = u.bracket(v);
    *v + uv * 0.5 + u.bracket(&uv) * (1.0 / 12.0)
}

struct Stepper<'a> {
    provider: &'a ConnectionProvider,
    gait: &'a Gait,
    max_twist_norm: f64,
}

impl Stepper<'_> {
    fn twist(&mut self, piece: usize, tau: f64, contacts: Option<&ContactSet>) -> Result<Twist> {
        let (r, rdot) = self.gait.eval_on_piece(piece, tau);
        let a = self.provider.eval_piece(&r, contacts)?;
        let xi = a.apply(&rdot)?;
        self.max_twist_norm = self.max_twist_norm.max(xi.norm());
        Ok(xi)
    }

    fn contacts_at(&self, piece: usize, tau: f64) -> Result<Option<ContactSet>> {
        let (r, _) = self.gait.eval_on_piece(piece, tau);
        self.provider.contact_set(&r)
    }

    /// One RKMK4 step from `t0` to `t1`; returns the new pose and the twist at `t1`.
    fn step(
        &mut self,
        g: &Pose,
        piece: usize,
        t0: f64,
        t1: f64,
        contacts: Option<&ContactSet>,
    ) -> Result<(Pose, Twist)> {
        let h = t1 - t0;
        let mid = t0 + 0.5 * h;
        let k1 = self.twist(piece, t0, contacts)? * h;
        let xi_mid = self.twist(piece, mid, contacts)?;
        let k2 = dexpinv(&(k1 * 0.5), &xi_mid) * h;
        let k3 = dexpinv(&(k2 * 0.5), &xi_mid) * h;
        let xi_end = self.twist(piece, t1, contacts)?;
        let k4 = dexpinv(&k3, &xi_end) * h;
        let theta = (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (1.0 / 6.0);
        Ok((g.compose(&Pose::exp(&theta, 1.0)), xi_end))
    }
}

/// Integrates the reconstruction equation from `g(0) = identity` over
/// `settings.cycles` periods of `gait`.
pub fn integrate_gait(
    provider: &ConnectionProvider,
    gait: &Gait,
    settings: &IntegratorSettings,
) -> Result<Trajectory> {
    settings.validate()?;
    if gait.dim() != provider.dim() {
        return Err(Error::DimensionMismatch {
            expected: provider.dim(),
            found: gait.dim(),
        });
    }
    let period = gait.period();
    let pieces = gait.pieces();
    let mut stepper = Stepper {
        provider,
        gait,
        max_twist_norm: 0.0,
    };

    let mut g = Pose::identity();
    let mut contacts = stepper.contacts_at(0, 0.0)?;
    let (r0, _) = gait.eval_on_piece(0, 0.0);
    let xi0 = stepper.twist(0, 0.0, contacts.as_ref())?;
    let mut samples = vec![Sample {
        t: 0.0,
        pose: g,
        shape: r0,
        twist: xi0,
        contacts,
    }];
    let mut events = Vec::new();
    let mut cycle_ends = Vec::with_capacity(settings.cycles);

    for cycle in 0..settings.cycles {
        let base = cycle as f64 * period;
        for (piece, &(a, b)) in pieces.iter().enumerate() {
            let n = ((b - a) / settings.step - 1e-9).ceil().max(1.0) as usize;
            for k in 0..n {
                let tau0 = a + (b - a) * k as f64 / n as f64;
                let tau1 = if k + 1 == n {
                    b
                } else {
                    a + (b - a) * (k + 1) as f64 / n as f64
                };
                let mut start = tau0;
                let mut switches = 0;
                while start < tau1 {
                    let switch = match contacts {
                        Some(current) => {
                            locate_switch(&stepper, piece, start, tau1, current, settings.event_tol)?
                        }
                        None => None,
                    };
                    let end = switch.map_or(tau1, |(_, hi, _)| hi);
                    let (next, xi) = stepper.step(&g, piece, start, end, contacts.as_ref())?;
                    g = next;
                    let t = if end == b && piece + 1 == pieces.len() {
                        (cycle + 1) as f64 * period
                    } else {
                        base + end
                    };
                    samples.push(Sample {
                        t,
                        pose: g,
                        shape: gait.eval_on_piece(piece, end).0,
                        twist: xi,
                        contacts,
                    });
                    if let Some((lo, hi, after)) = switch {
                        switches += 1;
                        if switches > 1 {
                            log::warn!(
                                "{switches} contact switches inside one step near t = {:.6}",
                                base + hi
                            );
                        }
                        events.push(EventRecord {
                            time: base + hi,
                            bracket: (base + lo, base + hi),
                            before: contacts.expect("switch implies contacts"),
                            after,
                            shape: gait.eval_on_piece(piece, hi).0.to_vec(),
                        });
                        contacts = Some(after);
                    }
                    start = end;
                }
            }
        }
        cycle_ends.push(samples.len() - 1);
    }

    Ok(Trajectory {
        samples,
        events,
        period,
        cycles: settings.cycles,
        step: settings.step,
        order: SCHEME_ORDER,
        max_twist_norm: stepper.max_twist_norm,
        cycle_ends,
    })
}

/// Looks for a selector change in `(start, end]`, probing the midpoint and
/// the end, then bisects to a bracket no wider than `tol`. Returns
/// `(lo, hi, new contact set)`.
fn locate_switch(
    stepper: &Stepper<'_>,
    piece: usize,
    start: f64,
    end: f64,
    current: ContactSet,
    tol: f64,
) -> Result<Option<(f64, f64, ContactSet)>> {
    let mid = 0.5 * (start + end);
    let mut hi = None;
    for probe in [mid, end] {
        if probe > start && stepper.contacts_at(piece, probe)? != Some(current) {
            hi = Some(probe);
            break;
        }
    }
    let Some(mut hi) = hi else {
        return Ok(None);
    };
    let mut lo = start;
    while hi - lo > tol {
        let m = 0.5 * (lo + hi);
        if m <= lo || m >= hi {
            break;
        }
        if stepper.contacts_at(piece, m)? == Some(current) {
            lo = m;
        } else {
            hi = m;
        }
    }
    let after = stepper
        .contacts_at(piece, hi)?
        .expect("piecewise provider always reports a contact set");
    Ok(Some((lo, hi, after)))
}

/// Net motion `log(g(0)⁻¹ g(end))` and the increment of every cycle.
pub fn net_displacement(traj: &Trajectory) -> Result<Displacement> {
    let first = traj
        .samples
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty trajectory".into()))?;
    let last = traj.samples.last().expect("non-empty");
    let cycles = (last.t - first.t) / traj.period;
    if (cycles - cycles.round()).abs() > 1e-9 * cycles.abs().max(1.0) || cycles.round() < 1.0 {
        return Err(Error::NonIntegerCycles { cycles });
    }
    let mut per_cycle = Vec::with_capacity(traj.cycle_ends.len());
    let mut prev = first.pose;
    for &idx in &traj.cycle_ends {
        let pose = traj.samples[idx].pose;
        per_cycle.push(prev.between(&pose).log());
        prev = pose;
    }
    Ok(Displacement {
        total: first.pose.between(&last.pose).log(),
        per_cycle,
    })
}

/// Largest `‖log(g_k⁻¹ g_{k+1})‖ / (C·Δt)` over adjacent samples, with
/// `C = traj.max_twist_norm`. Values ≤ 1 mean the pose never jumps faster
/// than the body velocity allows.
pub fn continuity_ratio(traj: &Trajectory) -> f64 {
    let c = traj.max_twist_norm;
    traj.samples
        .windows(2)
        .map(|w| {
            let inc = w[0].pose.between(&w[1].pose).log().norm();
            let dt = w[1].t - w[0].t;
            if inc == 0.0 {
                0.0
            } else {
                inc / (c * dt)
            }
        })
        .fold(0.0, f64::max)
}

/// A maximal run of samples integrated under one contact set, as an
/// inclusive index range.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StancePhase {
    pub contacts: ContactSet,
    pub start: usize,
    pub end: usize,
}

pub fn stance_phases(traj: &Trajectory) -> Vec<StancePhase> {
    let mut phases: Vec<StancePhase> = Vec::new();
    for (k, s) in traj.samples.iter().enumerate() {
        let Some(c) = s.contacts else { continue };
        match phases.last_mut() {
            Some(p) if p.contacts == c && p.end + 1 == k => p.end = k,
            _ => phases.push(StancePhase {
                contacts: c,
                start: k.saturating_sub(1),
                end: k,
            }),
        }
    }
    if let Some(p) = phases.first_mut() {
        p.start = 0;
    }
    phases
}

/// For every single-foot stance phase, the largest distance the planted
/// foot's world position moves from where it landed.
pub fn stance_drift(traj: &Trajectory, model: &LeggedModel) -> Result<Vec<(StancePhase, f64)>> {
    stance_phases(traj)
        .into_iter()
        .filter(|p| p.contacts.len() == 1)
        .map(|p| {
            let foot = p.contacts.feet()[0];
            let world = |k: usize| -> Result<[f64; 2]> {
                let s = &traj.samples[k];
                Ok(s.pose.compose(&model.foot_pose(foot, &s.shape)?).position())
            };
            let anchor = world(p.start)?;
            let mut drift: f64 = 0.0;
            for k in p.start..=p.end {
                let w = world(k)?;
                drift = drift.max((w[0] - anchor[0]).hypot(w[1] - anchor[1]));
            }
            Ok((p, drift))
        })
        .collect()
}
