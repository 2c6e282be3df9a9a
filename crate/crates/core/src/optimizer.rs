//! Derivative-free gait search.
//!
//! A [`GaitFamily`] maps a parameter vector onto the coefficients of a
//! template Fourier gait. [`optimize`] maximizes one component of the
//! per-cycle displacement over that family with a bounded Nelder–Mead
//! search, restarted until the evaluation budget is spent.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::connection::ConnectionProvider;
use crate::error::{Error, Result};
use crate::integrator::{integrate_gait, net_displacement, IntegratorSettings};
use crate::liegroup::Twist;
use crate::shapespace::{Gait, GaitKind};

const ALPHA: f64 = 1.0;
const GAMMA: f64 = 2.0;
const RHO: f64 = 0.5;
const SIGMA: f64 = 0.5;

/// Initial simplex edge as a fraction of each parameter's range.
const INITIAL_STEP: f64 = 0.1;
/// Simplex diameter, relative to the box, below which a run restarts.
const X_TOL: f64 = 1e-9;
const F_TOL: f64 = 1e-13;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObjectiveDirection {
    X,
    Y,
    Theta,
    /// Planar distance `‖(x, y)‖`.
    Speed,
}

impl ObjectiveDirection {
    pub fn component(&self, xi: &Twist) -> f64 {
        match self {
            Self::X => xi.vx,
            Self::Y => xi.vy,
            Self::Theta => xi.omega,
            Self::Speed => xi.vx.hypot(xi.vy),
        }
    }
}

/// Chosen component of the net displacement over `settings.cycles` cycles.
/// Any failure, including a singular constraint solve, yields `−∞`.
pub fn objective_displacement(
    provider: &ConnectionProvider,
    gait: &Gait,
    direction: ObjectiveDirection,
    settings: &IntegratorSettings,
) -> f64 {
    let value = integrate_gait(provider, gait, settings)
        .and_then(|traj| net_displacement(&traj))
        .map(|d| direction.component(&d.total));
    match value {
        Ok(v) if !v.is_nan() => v,
        _ => f64::NEG_INFINITY,
    }
}

/// One Fourier coefficient a parameter writes to. Coordinates are 0-based,
/// harmonics 1-based. The text form is 1-based throughout, e.g. `amp:2:1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    Mean(usize),
    Cos(usize, usize),
    Sin(usize, usize),
    /// Amplitude `a` of `a·sin(kωt + φ)`.
    Amp(usize, usize),
    /// Phase `φ` of `a·sin(kωt + φ)`.
    Phase(usize, usize),
}

impl Slot {
    fn coordinate(&self) -> usize {
        match *self {
            Slot::Mean(i) | Slot::Cos(i, _) | Slot::Sin(i, _) | Slot::Amp(i, _) | Slot::Phase(i, _) => i,
        }
    }

    fn harmonic(&self) -> Option<usize> {
        match *self {
            Slot::Mean(_) => None,
            Slot::Cos(_, k) | Slot::Sin(_, k) | Slot::Amp(_, k) | Slot::Phase(_, k) => Some(k),
        }
    }
}

impl fmt::Display for Slot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Slot::Mean(i) => write!(f, "mean:{}", i + 1),
            Slot::Cos(i, k) => write!(f, "cos:{}:{k}", i + 1),
            Slot::Sin(i, k) => write!(f, "sin:{}:{k}", i + 1),
            Slot::Amp(i, k) => write!(f, "amp:{}:{k}", i + 1),
            Slot::Phase(i, k) => write!(f, "phase:{}:{k}", i + 1),
        }
    }
}

impl FromStr for Slot {
    type Err = Error;

    fn from_str(s: &str) -> Result<Slot> {
        let bad = || Error::InvalidArgument(format!("bad gait slot '{s}'"));
        let parts: Vec<&str> = s.split(':').collect();
        let num = |k: usize| -> Result<usize> {
            let v: usize = parts.get(k).ok_or_else(bad)?.parse().map_err(|_| bad())?;
            if v == 0 {
                return Err(bad());
            }
            Ok(v)
        };
        let slot = match (parts[0], parts.len()) {
            ("mean", 2) => Slot::Mean(num(1)? - 1),
            ("cos", 3) => Slot::Cos(num(1)? - 1, num(2)?),
            ("sin", 3) => Slot::Sin(num(1)? - 1, num(2)?),
            ("amp", 3) => Slot::Amp(num(1)? - 1, num(2)?),
            ("phase", 3) => Slot::Phase(num(1)? - 1, num(2)?),
            _ => return Err(bad()),
        };
        Ok(slot)
    }
}

impl Serialize for Slot {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Slot {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A free parameter; its value is written to every slot in `slots`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Parameter {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
    pub slots: Vec<Slot>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaitFamily {
    template: Gait,
    parameters: Vec<Parameter>,
}

impl GaitFamily {
    pub fn new(template: Gait, parameters: Vec<Parameter>) -> Result<GaitFamily> {
        let GaitKind::Fourier(f) = template.kind() else {
            return Err(Error::InvalidArgument("gait family template must be a Fourier gait".into()));
        };
        if parameters.is_empty() {
            return Err(Error::InvalidArgument("gait family has no parameters".into()));
        }
        let harmonics = f.cos.first().map_or(0, Vec::len);
        for p in &parameters {
            if !(p.lower.is_finite() && p.upper.is_finite() && p.lower < p.upper) {
                return Err(Error::InvalidArgument(format!(
                    "parameter '{}' has bounds [{}, {}]",
                    p.name, p.lower, p.upper
                )));
            }
            if p.slots.is_empty() {
                return Err(Error::InvalidArgument(format!("parameter '{}' drives no slot", p.name)));
            }
            for slot in &p.slots {
                if slot.coordinate() >= template.dim() || slot.harmonic().is_some_and(|k| k > harmonics) {
                    return Err(Error::InvalidArgument(format!(
                        "slot {slot} of parameter '{}' is outside the template ({} coordinates, {harmonics} harmonics)",
                        p.name,
                        template.dim()
                    )));
                }
            }
        }
        Ok(GaitFamily { template, parameters })
    }

    pub fn dim(&self) -> usize {
        self.parameters.len()
    }

    pub fn parameters(&self) -> &[Parameter] {
        &self.parameters
    }

    pub fn template(&self) -> &Gait {
        &self.template
    }

    pub fn bounds(&self) -> Vec<(f64, f64)> {
        self.parameters.iter().map(|p| (p.lower, p.upper)).collect()
    }

    /// Gait for parameter vector `p`. Amplitude and phase slots are applied
    /// after the raw coefficient slots.
    pub fn gait(&self, p: &[f64]) -> Result<Gait> {
        if p.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: p.len(),
            });
        }
        let GaitKind::Fourier(f) = self.template.kind() else {
            unreachable!("checked in constructor")
        };
        let (mut mean, mut cos, mut sin) = (f.mean.clone(), f.cos.clone(), f.sin.clone());
        let mut polar = Vec::new();
        for (param, &v) in self.parameters.iter().zip(p) {
            for slot in &param.slots {
                match *slot {
                    Slot::Mean(i) => mean[i] = v,
                    Slot::Cos(i, k) => cos[i][k - 1] = v,
                    Slot::Sin(i, k) => sin[i][k - 1] = v,
                    Slot::Amp(..) | Slot::Phase(..) => polar.push((*slot, v)),
                }
            }
        }
        for (slot, v) in polar {
            let (i, k) = match slot {
                Slot::Amp(i, k) | Slot::Phase(i, k) => (i, k - 1),
                _ => unreachable!(),
            };
            // a·sin(ωt + φ) has cos coefficient a·sin φ and sin coefficient a·cos φ.
            let (a, phi) = (cos[i][k].hypot(sin[i][k]), cos[i][k].atan2(sin[i][k]));
            let (a, phi) = match slot {
                Slot::Amp(..) => (v, phi),
                _ => (a, v),
            };
            cos[i][k] = a * phi.sin();
            sin[i][k] = a * phi.cos();
        }
        Gait::fourier(self.template.period(), mean, cos, sin)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    BudgetExhausted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub seed: usize,
    pub params: Vec<f64>,
    #[serde(with = "extended_float")]
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationReport {
    pub best_params: Vec<f64>,
    #[serde(with = "extended_float")]
    pub best_objective: f64,
    pub evaluations: usize,
    /// Every evaluation, grouped by seed in seed order.
    pub history: Vec<Evaluation>,
    pub termination: Termination,
}

impl OptimizationReport {
    /// Running maximum of the history objectives.
    pub fn best_so_far(&self) -> Vec<f64> {
        self.history
            .iter()
            .scan(f64::NEG_INFINITY, |best, e| {
                *best = best.max(e.objective);
                Some(*best)
            })
            .collect()
    }
}

/// Serializes infinities as strings so `−∞` sentinels survive JSON.
pub mod extended_float {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else if *v < 0.0 {
            s.serialize_str("-inf")
        } else {
            s.serialize_str("nan")
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Text(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => match t.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(serde::de::Error::custom(format!("bad number '{other}'"))),
            },
        }
    }
}

/// Maximizes the displacement component over `family`.
pub fn optimize(
    provider: &ConnectionProvider,
    family: &GaitFamily,
    direction: ObjectiveDirection,
    settings: &IntegratorSettings,
    budget: usize,
    seeds: usize,
    seed: u64,
) -> Result<OptimizationReport> {
    let objective = |p: &[f64]| match family.gait(p) {
        Ok(g) => objective_displacement(provider, &g, direction, settings),
        Err(_) => f64::NEG_INFINITY,
    };
    maximize(objective, &family.bounds(), budget, seeds, seed)
}

/// Bounded Nelder–Mead maximization of `f`. The budget is split evenly over
/// `seeds` independent searches, each drawing its start points from its own
/// stream of a generator seeded with `seed`.
pub fn maximize<F>(f: F, bounds: &[(f64, f64)], budget: usize, seeds: usize, seed: u64) -> Result<OptimizationReport>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let d = bounds.len();
    if d == 0 || bounds.iter().any(|(lo, hi)| !(lo < hi)) {
        return Err(Error::InvalidArgument("optimizer needs non-empty bounded box".into()));
    }
    if seeds == 0 {
        return Err(Error::InvalidArgument("need at least one seed".into()));
    }
    if budget / seeds < d + 2 {
        return Err(Error::InvalidArgument(format!(
            "budget {budget} over {seeds} seeds leaves fewer than {} evaluations per seed",
            d + 2
        )));
    }
    let runs: Vec<Vec<Evaluation>> = (0..seeds)
        .into_par_iter()
        .map(|s| {
            let share = budget / seeds + usize::from(s < budget % seeds);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(s as u64);
            let mut search = Search {
                f: &f,
                bounds,
                budget: share,
                seed: s,
                history: Vec::with_capacity(share),
            };
            search.run(&mut rng);
            search.history
        })
        .collect();

    let history: Vec<Evaluation> = runs.into_iter().flatten().collect();
    let best = history
        .iter()
        .fold(None::<&Evaluation>, |best, e| match best {
            Some(b) if b.objective >= e.objective => Some(b),
            _ => Some(e),
        })
        .expect("budget is non-zero");
    Ok(OptimizationReport {
        best_params: best.params.clone(),
        best_objective: best.objective,
        evaluations: history.len(),
        termination: Termination::BudgetExhausted,
        history,
    })
}

struct Search<'a, F> {
    f: &'a F,
    bounds: &'a [(f64, f64)],
    budget: usize,
    seed: usize,
    history: Vec<Evaluation>,
}

/// Vertex with its negated objective (the simplex minimizes).
type Vertex = (Vec<f64>, f64);

impl<F: Fn(&[f64]) -> f64> Search<'_, F> {
    fn project(&self, x: &mut [f64]) {
        for (v, &(lo, hi)) in x.iter_mut().zip(self.bounds) {
            *v = v.clamp(lo, hi);
        }
    }

    /// `None` once the budget is spent.
    fn eval(&mut self, mut x: Vec<f64>) -> Option<Vertex> {
        if self.history.len() >= self.budget {
            return None;
        }
        self.project(&mut x);
        let mut value = (self.f)(&x);
        if value.is_nan() {
            value = f64::NEG_INFINITY;
        }
        self.history.push(Evaluation {
            seed: self.seed,
            params: x.clone(),
            objective: value,
        });
        Some((x, -value))
    }

    fn best(&self) -> Option<&Evaluation> {
        self.history
            .iter()
            .fold(None, |best: Option<&Evaluation>, e| match best {
                Some(b) if b.objective >= e.objective => Some(b),
                _ => Some(e),
            })
    }

    fn run(&mut self, rng: &mut ChaCha8Rng) {
        let mut start: Vec<f64> = self.bounds.iter().map(|&(lo, hi)| rng.gen_range(lo..=hi)).collect();
        loop {
            let before = self.best().map(|e| e.objective);
            if self.simplex_run(start).is_none() {
                return;
            }
            let after = self.best().map(|e| e.objective);
            // Polish around an improved best, otherwise try a fresh start.
            start = match (before, after) {
                (Some(b), Some(a)) if a <= b => {
                    self.bounds.iter().map(|&(lo, hi)| rng.gen_range(lo..=hi)).collect()
                }
                _ => self.best().expect("evaluated").params.clone(),
            };
        }
    }

    /// One Nelder–Mead run to convergence; `None` when the budget ran out.
    fn simplex_run(&mut self, x0: Vec<f64>) -> Option<()> {
        let d = self.bounds.len();
        let mut simplex: Vec<Vertex> = Vec::with_capacity(d + 1);
        simplex.push(self.eval(x0.clone())?);
        for i in 0..d {
            let (lo, hi) = self.bounds[i];
            let step = INITIAL_STEP * (hi - lo);
            let mut x = x0.clone();
            x[i] = if x[i] + step <= hi { x[i] + step } else { x[i] - step };
            simplex.push(self.eval(x)?);
        }
        loop {
            simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
            if self.converged(&simplex) {
                return Some(());
            }
            let worst = simplex[d].clone();
            let centroid: Vec<f64> = (0..d)
                .map(|k| simplex[..d].iter().map(|v| v.0[k]).sum::<f64>() / d as f64)
                .collect();
            let toward = |from: &[f64], coef: f64| -> Vec<f64> {
                centroid.iter().zip(from).map(|(c, x)| c + coef * (x - c)).collect()
            };
            let reflected = self.eval(toward(&worst.0, -ALPHA))?;
            if reflected.1 < simplex[0].1 {
                let expanded = self.eval(toward(&reflected.0, GAMMA))?;
                simplex[d] = if expanded.1 < reflected.1 { expanded } else { reflected };
                continue;
            }
            if reflected.1 < simplex[d - 1].1 {
                simplex[d] = reflected;
                continue;
            }
            let accepted = if reflected.1 < worst.1 {
                let c = self.eval(toward(&reflected.0, RHO))?;
                (c.1 <= reflected.1).then_some(c)
            } else {
                let c = self.eval(toward(&worst.0, RHO))?;
                (c.1 < worst.1).then_some(c)
            };
            match accepted {
                Some(c) => simplex[d] = c,
                None => {
                    let best = simplex[0].0.clone();
                    for v in simplex.iter_mut().skip(1) {
                        let x: Vec<f64> = best.iter().zip(&v.0).map(|(b, x)| b + SIGMA * (x - b)).collect();
                        *v = self.eval(x)?;
                    }
                }
            }
        }
    }

    fn converged(&self, simplex: &[Vertex]) -> bool {
        let (lo, hi) = (simplex[0].1, simplex[simplex.len() - 1].1);
        if !hi.is_finite() {
            return false;
        }
        let spread = hi - lo;
        let diameter = simplex
            .iter()
            .skip(1)
            .map(|v| {
                v.0.iter()
                    .zip(&simplex[0].0)
                    .zip(self.bounds)
                    .map(|((a, b), (l, u))| ((a - b) / (u - l)).abs())
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max);
        spread <= F_TOL * (1.0 + lo.abs()) && diameter <= X_TOL
    }
}
