//! Mechanical testbeds that produce pose maps and constraint systems.
//!
//! * [`ChainModel`]: planar serial chain, body frame on the middle link.
//! * [`DragModel`]: resistive-force swimmer built on a chain.
//! * [`LeggedModel`]: rigid body with swinging legs and planted feet,
//!   contact set chosen from the shape.
//! * [`SlipModel`]: the legged geometry with viscous, slipping feet.
//! * [`ManyLeggedSurrogate`]: a chain whose links rest on `m` slipping point
//!   feet each; tends to the drag model as `m` grows.
//! * [`JacobianTestbed`]: smooth synthetic pose maps.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;
use std::str::FromStr;

use nalgebra::{Matrix2, Matrix3xX, Vector2};
use serde::{Deserialize, Serialize};

use crate::connection::{ConstraintBuilder, ConstraintSystem, PoseMap};
use crate::error::{Error, Result};
use crate::liegroup::Pose;
use crate::shapespace::Shape;

// ---------------------------------------------------------------------------
// Contact sets

/// Set of feet in contact, as a bitmask over foot indices (0-based in code,
/// printed 1-based, e.g. `1+2`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ContactSet(u32);

impl ContactSet {
    pub const MAX_FEET: usize = 32;

    pub fn single(foot: usize) -> Self {
        assert!(foot < Self::MAX_FEET);
        ContactSet(1 << foot)
    }

    pub fn from_feet(feet: &[usize]) -> Self {
        ContactSet(feet.iter().fold(0, |acc, &f| {
            assert!(f < Self::MAX_FEET);
            acc | (1 << f)
        }))
    }

    pub fn feet(&self) -> Vec<usize> {
        (0..Self::MAX_FEET).filter(|&i| self.contains(i)).collect()
    }

    pub fn contains(&self, foot: usize) -> bool {
        foot < Self::MAX_FEET && self.0 & (1 << foot) != 0
    }

    pub fn len(&self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(&self) -> bool {
        self.0 == 0
    }

    pub fn bits(&self) -> u32 {
        self.0
    }
}

impl fmt::Display for ContactSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let labels: Vec<String> = self.feet().iter().map(|i| (i + 1).to_string()).collect();
        write!(f, "{}", labels.join("+"))
    }
}

impl FromStr for ContactSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let feet = s
            .split('+')
            .map(|tok| match tok.trim().parse::<usize>() {
                Ok(n) if (1..=Self::MAX_FEET).contains(&n) => Ok(n - 1),
                _ => Err(Error::InvalidArgument(format!("bad contact set `{s}`"))),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ContactSet::from_feet(&feet))
    }
}

// ---------------------------------------------------------------------------
// Serial chains

/// Planar chain of `n = d + 1` links (odd `n`). Joint `j` joins link `j` to
/// link `j + 1`; the body frame sits at the midpoint of the middle link,
/// x-axis along it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainModel {
    lengths: Vec<f64>,
}

impl ChainModel {
    pub fn new(lengths: Vec<f64>) -> Result<Self> {
        if lengths.is_empty() || lengths.len().is_multiple_of(2) {
            return Err(Error::InvalidModel(format!(
                "chain needs an odd number of links, got {}",
                lengths.len()
            )));
        }
        if lengths.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
            return Err(Error::InvalidModel("link lengths must be positive".into()));
        }
        Ok(Self { lengths })
    }

    pub fn lengths(&self) -> &[f64] {
        &self.lengths
    }

    pub fn links(&self) -> usize {
        self.lengths.len()
    }

    pub fn dim(&self) -> usize {
        self.lengths.len() - 1
    }

    fn middle(&self) -> usize {
        self.lengths.len() / 2
    }

    /// Link frames (midpoint, heading) and joint positions in the body frame.
    fn kinematics(&self, r: &Shape) -> Result<(Vec<Pose>, Vec<[f64; 2]>)> {
        r.ensure_dim(self.dim())?;
        let n = self.links();
        let m = self.middle();
        let mut frames = vec![Pose::identity(); n];
        for j in m..n - 1 {
            frames[j + 1] = frames[j]
                .compose(&Pose::translation(0.5 * self.lengths[j], 0.0))
                .compose(&Pose::rotation(r[j]))
                .compose(&Pose::translation(0.5 * self.lengths[j + 1], 0.0));
        }
        for j in (0..m).rev() {
            frames[j] = frames[j + 1]
                .compose(&Pose::translation(-0.5 * self.lengths[j + 1], 0.0))
                .compose(&Pose::rotation(-r[j]))
                .compose(&Pose::translation(-0.5 * self.lengths[j], 0.0));
        }
        let joints = (0..n - 1)
            .map(|j| frames[j].transform_point([0.5 * self.lengths[j], 0.0]))
            .collect();
        Ok((frames, joints))
    }

    /// Sample point at arclength `s ∈ [-L/2, L/2]` on each link, with its
    /// derivatives with respect to the joint angles.
    fn material_points(&self, r: &Shape, offsets: &[(usize, f64)]) -> Result<Vec<BodyPoint>> {
        let (frames, joints) = self.kinematics(r)?;
        let m = self.middle();
        let d = self.dim();
        Ok(offsets
            .iter()
            .map(|&(link, s)| {
                let frame = &frames[link];
                let pos = frame.transform_point([s, 0.0]);
                let mut dpos = vec![[0.0; 2]; d];
                let mut dheading = vec![0.0; d];
                // joints between the middle link and this one swing the point
                let (range, sign) = if link > m {
                    (m..link, 1.0)
                } else {
                    (link..m, -1.0)
                };
                for j in range {
                    let q = joints[j];
                    dpos[j] = [-sign * (pos[1] - q[1]), sign * (pos[0] - q[0])];
                    dheading[j] = sign;
                }
                BodyPoint {
                    pos,
                    heading: frame.theta,
                    dpos,
                    dheading,
                }
            })
            .collect())
    }
}

/// Forward kinematics: link frames in the body frame (middle link at identity).
pub fn chain_frames(chain: &ChainModel, r: &Shape) -> Result<Vec<Pose>> {
    Ok(chain.kinematics(r)?.0)
}

// ---------------------------------------------------------------------------
// Viscous point contacts

/// A point fixed to some part of the body, with its shape derivatives.
#[derive(Debug, Clone)]
struct BodyPoint {
    pos: [f64; 2],
    heading: f64,
    dpos: Vec<[f64; 2]>,
    dheading: Vec<f64>,
}

/// Tangential, normal and yaw viscous coefficients of a contact.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlipCoefficients {
    pub k_t: f64,
    pub k_n: f64,
    pub k_omega: f64,
}

impl SlipCoefficients {
    pub fn isotropic(k: f64) -> Self {
        Self {
            k_t: k,
            k_n: k,
            k_omega: k,
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            k_t: s * self.k_t,
            k_n: s * self.k_n,
            k_omega: s * self.k_omega,
        }
    }
}

/// Adds the wrench of one viscous contact to `sys`.
///
/// The contact's velocity (world velocity resolved in the body frame) is
/// `B ξ + J ṙ` with `B = [[1, 0, -y], [0, 1, x]]`; the force is
/// `-(k_t t̂t̂ᵀ + k_n n̂n̂ᵀ)` times that velocity, and the yaw moment is
/// `-k_ω` times the contact's angular velocity. Moments are taken about the
/// body origin, so the wrench of a force `f` is `Bᵀ f`.
fn add_viscous_contact(sys: &mut ConstraintSystem, point: &BodyPoint, k: &SlipCoefficients, weight: f64) {
    let [x, y] = point.pos;
    let (s, c) = point.heading.sin_cos();
    let t = Vector2::new(c, s);
    let n = Vector2::new(-s, c);
    let kmat: Matrix2<f64> = (t * t.transpose() * k.k_t + n * n.transpose() * k.k_n) * weight;
    let b = nalgebra::Matrix2x3::new(1.0, 0.0, -y, 0.0, 1.0, x);
    sys.m -= b.transpose() * kmat * b;
    sys.m[(2, 2)] -= weight * k.k_omega;
    let d = sys.dim();
    if d > 0 {
        let mut jac = nalgebra::Matrix2xX::zeros(d);
        for (j, dp) in point.dpos.iter().enumerate() {
            jac[(0, j)] = dp[0];
            jac[(1, j)] = dp[1];
        }
        sys.n -= b.transpose() * kmat * jac;
        for (j, dh) in point.dheading.iter().enumerate() {
            sys.n[(2, j)] -= weight * k.k_omega * dh;
        }
    }
}

// ---------------------------------------------------------------------------
// Resistive-force swimmer

/// Quadrature rule along each link.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Quadrature {
    GaussLegendre(usize),
    /// Composite midpoint rule with evenly spaced nodes.
    Midpoint(usize),
}

impl Quadrature {
    pub fn points(&self) -> usize {
        match *self {
            Quadrature::GaussLegendre(q) | Quadrature::Midpoint(q) => q,
        }
    }

    /// Nodes and weights on `[-1, 1]`.
    pub fn rule(&self) -> (Vec<f64>, Vec<f64>) {
        match *self {
            Quadrature::GaussLegendre(q) => gauss_legendre(q),
            Quadrature::Midpoint(q) => {
                let h = 2.0 / q as f64;
                ((0..q).map(|j| -1.0 + (j as f64 + 0.5) * h).collect(), vec![h; q])
            }
        }
    }
}

/// Gauss–Legendre nodes and weights on `[-1, 1]` by Newton iteration on `P_q`.
pub fn gauss_legendre(q: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; q];
    let mut weights = vec![0.0; q];
    let qf = q as f64;
    for i in 0..q {
        let mut x = (PI * (i as f64 + 0.75) / (qf + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=q {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            if q == 1 {
                p0 = 1.0;
                p1 = x;
            }
            dp = qf * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes[q - 1 - i] = x;
        weights[q - 1 - i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    (nodes, weights)
}

/// Slender-body swimmer in a viscous medium: each link feels drag
/// `-(c_t v_t + c_n v_n)` per unit length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DragModel {
    pub chain: ChainModel,
    pub c_t: f64,
    pub c_n: f64,
    pub quadrature: Quadrature,
}

impl DragModel {
    pub fn new(chain: ChainModel, c_t: f64, c_n: f64, quadrature: Quadrature) -> Result<Self> {
        if !(c_t > 0.0 && c_n > 0.0) {
            return Err(Error::InvalidModel("drag coefficients must be positive".into()));
        }
        if quadrature.points() < 2 {
            return Err(Error::InvalidModel("need at least 2 quadrature points".into()));
        }
        Ok(Self {
            chain,
            c_t,
            c_n,
            quadrature,
        })
    }

    /// Three unit links, normal drag twice tangential drag, 8-point Gauss.
    pub fn purcell() -> Self {
        DragModel::new(
            ChainModel::new(vec![1.0; 3]).expect("valid chain"),
            1.0,
            2.0,
            Quadrature::GaussLegendre(8),
        )
        .expect("valid drag model")
    }

    pub fn with_quadrature(&self, quadrature: Quadrature) -> Result<Self> {
        DragModel::new(self.chain.clone(), self.c_t, self.c_n, quadrature)
    }

    pub fn dim(&self) -> usize {
        self.chain.dim()
    }

    pub fn build_constraints(&self, r: &Shape) -> Result<ConstraintSystem> {
        build_drag_constraints(self, r)
    }
}

/// Zero net drag force and moment, `Mξ + Nṙ = 0`, assembled by quadrature
/// along every link.
pub fn build_drag_constraints(model: &DragModel, r: &Shape) -> Result<ConstraintSystem> {
    let (nodes, weights) = model.quadrature.rule();
    let lengths = model.chain.lengths();
    let mut samples = Vec::with_capacity(lengths.len() * nodes.len());
    let mut sample_weights = Vec::with_capacity(samples.capacity());
    for (link, &len) in lengths.iter().enumerate() {
        for (x, w) in nodes.iter().zip(&weights) {
            samples.push((link, 0.5 * len * x));
            sample_weights.push(0.5 * len * w);
        }
    }
    let points = model.chain.material_points(r, &samples)?;
    let k = SlipCoefficients {
        k_t: model.c_t,
        k_n: model.c_n,
        k_omega: 0.0,
    };
    let mut sys = ConstraintSystem::zeros(model.dim());
    for (p, w) in points.iter().zip(&sample_weights) {
        add_viscous_contact(&mut sys, p, &k, *w);
    }
    Ok(sys)
}

impl ConstraintBuilder for DragModel {
    fn dim(&self) -> usize {
        DragModel::dim(self)
    }

    fn build(&self, r: &Shape, _contacts: Option<&ContactSet>) -> Result<ConstraintSystem> {
        build_drag_constraints(self, r)
    }
}

// ---------------------------------------------------------------------------
// Legged bodies

/// One leg: hip at a body-frame point, swinging by its leg angle. At leg
/// angle `r` the foot sits at `hip + ℓ(cos(ψ + r), sin(ψ + r))` with heading
/// `r`, where `ψ` is the rest direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Foot {
    pub hip: [f64; 2],
    pub leg_length: f64,
    pub rest_angle: f64,
}

impl Foot {
    /// Foot frame in the body frame.
    pub fn pose(&self, leg_angle: f64) -> Pose {
        let (s, c) = self.rest_angle.sin_cos();
        Pose::translation(self.hip[0], self.hip[1])
            .compose(&Pose::rotation(leg_angle))
            .compose(&Pose::translation(self.leg_length * c, self.leg_length * s))
    }

    fn body_point(&self, leg_angle: f64, index: usize, dim: usize) -> BodyPoint {
        let pose = self.pose(leg_angle);
        let (s, c) = (self.rest_angle + leg_angle).sin_cos();
        let mut dpos = vec![[0.0; 2]; dim];
        let mut dheading = vec![0.0; dim];
        dpos[index] = [-self.leg_length * s, self.leg_length * c];
        dheading[index] = 1.0;
        BodyPoint {
            pos: pose.position(),
            heading: pose.theta,
            dpos,
            dheading,
        }
    }
}

/// Contact rule as a function of shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Selector {
    /// The foot with the largest leg angle stands; ties go to the lower index.
    ArgMax,
    /// The same contact set everywhere.
    Fixed(ContactSet),
}

/// Rigid body with one swinging leg per shape coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeggedModel {
    feet: Vec<Foot>,
    selector: Selector,
}

impl LeggedModel {
    pub fn new(feet: Vec<Foot>, selector: Selector) -> Result<Self> {
        if feet.is_empty() || feet.len() > ContactSet::MAX_FEET {
            return Err(Error::InvalidModel(format!(
                "legged model needs 1..={} feet",
                ContactSet::MAX_FEET
            )));
        }
        if feet.iter().any(|f| !(f.leg_length > 0.0)) {
            return Err(Error::InvalidModel("leg lengths must be positive".into()));
        }
        if let Selector::Fixed(c) = &selector {
            if c.is_empty() || c.feet().iter().any(|&i| i >= feet.len()) {
                return Err(Error::InvalidModel(format!("fixed contact set `{c}` is not valid")));
            }
        }
        Ok(Self { feet, selector })
    }

    /// Two-legged crawler: hips at `(±0.5, 0)` on a unit-length body, legs of
    /// length 0.6 hanging towards `-y`, stance foot = larger leg angle.
    pub fn crawler() -> Self {
        let leg = |x: f64| Foot {
            hip: [x, 0.0],
            leg_length: 0.6,
            rest_angle: -FRAC_PI_2,
        };
        LeggedModel::new(vec![leg(0.5), leg(-0.5)], Selector::ArgMax).expect("valid crawler")
    }

    pub fn feet(&self) -> &[Foot] {
        &self.feet
    }

    pub fn selector(&self) -> &Selector {
        &self.selector
    }

    pub fn dim(&self) -> usize {
        self.feet.len()
    }

    fn check_contacts(&self, c: &ContactSet) -> Result<()> {
        if c.is_empty() {
            return Err(Error::DegenerateStance("empty contact set".into()));
        }
        if c.feet().iter().any(|&i| i >= self.feet.len()) {
            return Err(Error::InvalidModel(format!("contact set `{c}` names a missing foot")));
        }
        Ok(())
    }

    /// Foot frame in the body frame at shape `r`.
    pub fn foot_pose(&self, foot: usize, r: &Shape) -> Result<Pose> {
        r.ensure_dim(self.dim())?;
        Ok(self.feet[foot].pose(r[foot]))
    }
}

/// Which feet are planted at shape `r`.
pub fn select_contacts(model: &LeggedModel, r: &Shape) -> Result<ContactSet> {
    r.ensure_dim(model.dim())?;
    Ok(match &model.selector {
        Selector::Fixed(c) => *c,
        Selector::ArgMax => {
            let mut best = 0;
            for i in 1..r.dim() {
                if r[i] > r[best] {
                    best = i;
                }
            }
            ContactSet::single(best)
        }
    })
}

/// `F[c]`: body pose relative to the frame fixed by the planted feet.
#[derive(Debug, Clone)]
pub struct ContactMap {
    model: LeggedModel,
    contacts: ContactSet,
}

impl ContactMap {
    pub fn contacts(&self) -> ContactSet {
        self.contacts
    }
}

impl PoseMap for ContactMap {
    fn dim(&self) -> usize {
        self.model.dim()
    }

    fn pose(&self, r: &Shape) -> Result<Pose> {
        r.ensure_dim(self.model.dim())?;
        let feet = self.contacts.feet();
        match feet.as_slice() {
            // a flat foot fixes the whole body frame
            [i] => Ok(self.model.feet[*i].pose(r[*i]).inverse()),
            // two pins: stance frame at the midpoint of the feet, x towards
            // the second foot
            [i, j] => {
                let p = self.model.feet[*i].pose(r[*i]).position();
                let q = self.model.feet[*j].pose(r[*j]).position();
                let (dx, dy) = (q[0] - p[0], q[1] - p[1]);
                let sep = dx.hypot(dy);
                let scale = self.model.feet[*i].leg_length + self.model.feet[*j].leg_length;
                if sep <= 1e-9 * scale {
                    return Err(Error::DegenerateStance(format!(
                        "pinned feet {} coincide",
                        self.contacts
                    )));
                }
                let stance = Pose::new(0.5 * (p[0] + q[0]), 0.5 * (p[1] + q[1]), dy.atan2(dx));
                Ok(stance.inverse())
            }
            _ => Err(Error::DegenerateStance(format!(
                "stance `{}` must have one flat foot or two pinned feet",
                self.contacts
            ))),
        }
    }
}

/// The holonomic piece `F[c]` of a legged model.
pub fn build_contact_map(model: &LeggedModel, c: &ContactSet) -> Result<ContactMap> {
    model.check_contacts(c)?;
    if c.len() > 2 {
        return Err(Error::DegenerateStance(format!(
            "stance `{c}` must have one flat foot or two pinned feet"
        )));
    }
    Ok(ContactMap {
        model: model.clone(),
        contacts: *c,
    })
}

// ---------------------------------------------------------------------------
// Slipping feet

/// Legged geometry whose stance feet slide against viscous ground contacts
/// instead of sticking. An optional body contact at the body origin drags
/// regardless of stance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlipModel {
    legged: LeggedModel,
    feet: Vec<SlipCoefficients>,
    body: Option<SlipCoefficients>,
}

impl SlipModel {
    pub fn new(
        legged: LeggedModel,
        feet: Vec<SlipCoefficients>,
        body: Option<SlipCoefficients>,
    ) -> Result<Self> {
        if feet.len() != legged.dim() {
            return Err(Error::InvalidModel(format!(
                "{} feet but {} coefficient sets",
                legged.dim(),
                feet.len()
            )));
        }
        let positive = |k: &SlipCoefficients| k.k_t > 0.0 && k.k_n > 0.0 && k.k_omega > 0.0;
        if !feet.iter().all(positive) {
            return Err(Error::InvalidModel("foot slip coefficients must be positive".into()));
        }
        if let Some(b) = &body {
            if !(b.k_t >= 0.0 && b.k_n >= 0.0 && b.k_omega >= 0.0) {
                return Err(Error::InvalidModel("body drag coefficients must be ≥ 0".into()));
            }
        }
        Ok(Self { legged, feet, body })
    }

    /// Crawler geometry with feet `(k_t, k_n, k_ω) = (20, 40, 2)` and body
    /// drag `(1, 2, 0.5)`.
    pub fn crawler() -> Self {
        let foot = SlipCoefficients {
            k_t: 20.0,
            k_n: 40.0,
            k_omega: 2.0,
        };
        SlipModel::new(
            LeggedModel::crawler(),
            vec![foot; 2],
            Some(SlipCoefficients {
                k_t: 1.0,
                k_n: 2.0,
                k_omega: 0.5,
            }),
        )
        .expect("valid slip crawler")
    }

    pub fn legged(&self) -> &LeggedModel {
        &self.legged
    }

    pub fn foot_coefficients(&self) -> &[SlipCoefficients] {
        &self.feet
    }

    pub fn body_coefficients(&self) -> Option<&SlipCoefficients> {
        self.body.as_ref()
    }

    pub fn dim(&self) -> usize {
        self.legged.dim()
    }

    /// Same model with every foot coefficient multiplied by `s`.
    pub fn with_foot_scale(&self, s: f64) -> Result<Self> {
        SlipModel::new(
            self.legged.clone(),
            self.feet.iter().map(|k| k.scaled(s)).collect(),
            self.body,
        )
    }
}

/// Zero net wrench from the viscous stance feet (plus body drag).
pub fn build_slip_constraints(model: &SlipModel, c: &ContactSet, r: &Shape) -> Result<ConstraintSystem> {
    model.legged.check_contacts(c)?;
    r.ensure_dim(model.dim())?;
    let d = model.dim();
    let mut sys = ConstraintSystem::zeros(d);
    for i in c.feet() {
        let point = model.legged.feet[i].body_point(r[i], i, d);
        add_viscous_contact(&mut sys, &point, &model.feet[i], 1.0);
    }
    if let Some(body) = &model.body {
        let origin = BodyPoint {
            pos: [0.0, 0.0],
            heading: 0.0,
            dpos: vec![[0.0; 2]; d],
            dheading: vec![0.0; d],
        };
        add_viscous_contact(&mut sys, &origin, body, 1.0);
    }
    Ok(sys)
}

impl ConstraintBuilder for SlipModel {
    fn dim(&self) -> usize {
        SlipModel::dim(self)
    }

    fn contact_set(&self, r: &Shape) -> Option<ContactSet> {
        select_contacts(&self.legged, r).ok()
    }

    fn build(&self, r: &Shape, contacts: Option<&ContactSet>) -> Result<ConstraintSystem> {
        let c = match contacts {
            Some(c) => *c,
            None => select_contacts(&self.legged, r)?,
        };
        build_slip_constraints(self, &c, r)
    }
}

// ---------------------------------------------------------------------------
// Many-legged limit

/// A drag chain replaced by `m` evenly spaced slipping point feet per link,
/// each carrying `1/m` of the link's drag (`k_t = c_t L/m`, `k_n = c_n L/m`,
/// no yaw term).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManyLeggedSurrogate {
    pub drag: DragModel,
    pub feet_per_link: usize,
}

impl ManyLeggedSurrogate {
    pub fn new(drag: DragModel, feet_per_link: usize) -> Result<Self> {
        if feet_per_link < 2 {
            return Err(Error::InvalidModel("surrogate needs m ≥ 2 feet per link".into()));
        }
        Ok(Self {
            drag,
            feet_per_link,
        })
    }
}

/// Slip constraints of `m` feet per link; converges to the drag quadrature as
/// `m → ∞` (midpoint-rule error, `O(1/m²)`).
pub fn many_legged_drag_surrogate(model: &ManyLeggedSurrogate, r: &Shape) -> Result<ConstraintSystem> {
    let m = model.feet_per_link;
    let chain = &model.drag.chain;
    let mut samples = Vec::with_capacity(chain.links() * m);
    let mut coeffs = Vec::with_capacity(samples.capacity());
    for (link, &len) in chain.lengths().iter().enumerate() {
        let spacing = len / m as f64;
        let k = SlipCoefficients {
            k_t: model.drag.c_t * spacing,
            k_n: model.drag.c_n * spacing,
            k_omega: 0.0,
        };
        for j in 0..m {
            samples.push((link, -0.5 * len + (j as f64 + 0.5) * spacing));
            coeffs.push(k);
        }
    }
    let points = chain.material_points(r, &samples)?;
    let mut sys = ConstraintSystem::zeros(chain.dim());
    for (p, k) in points.iter().zip(&coeffs) {
        add_viscous_contact(&mut sys, p, k, 1.0);
    }
    Ok(sys)
}

impl ConstraintBuilder for ManyLeggedSurrogate {
    fn dim(&self) -> usize {
        self.drag.dim()
    }

    fn build(&self, r: &Shape, _contacts: Option<&ContactSet>) -> Result<ConstraintSystem> {
        many_legged_drag_surrogate(self, r)
    }
}

// ---------------------------------------------------------------------------
// Synthetic holonomic maps

/// Smooth two-dof pose maps used to exercise the holonomic route.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum JacobianTestbed {
    /// `Rot(r1)·Trans(r2, 0)`
    RotateSlide,
    /// Distal link frame of a three-unit-link chain, seen from the
    /// proximal link.
    ChainTip,
    /// `(sin r1 + 0.3 r2², r1 cos r2, 0.5 sin(r1 + r2) + 0.2 r2)`
    Trigonometric,
}

impl JacobianTestbed {
    pub const ALL: [JacobianTestbed; 3] = [
        JacobianTestbed::RotateSlide,
        JacobianTestbed::ChainTip,
        JacobianTestbed::Trigonometric,
    ];
}

impl PoseMap for JacobianTestbed {
    fn dim(&self) -> usize {
        2
    }

    fn pose(&self, r: &Shape) -> Result<Pose> {
        r.ensure_dim(2)?;
        Ok(match self {
            JacobianTestbed::RotateSlide => {
                Pose::rotation(r[0]).compose(&Pose::translation(r[1], 0.0))
            }
            JacobianTestbed::ChainTip => {
                let chain = ChainModel::new(vec![1.0; 3])?;
                let frames = chain_frames(&chain, r)?;
                frames[0].between(&frames[2])
            }
            JacobianTestbed::Trigonometric => Pose::new(
                r[0].sin() + 0.3 * r[1] * r[1],
                r[0] * r[1].cos(),
                0.5 * (r[0] + r[1]).sin() + 0.2 * r[1],
            ),
        })
    }
}

/// Row-stacked `[M | N]` for comparing constraint systems.
pub fn stacked(sys: &ConstraintSystem) -> Matrix3xX<f64> {
    let d = sys.dim();
    let mut out = Matrix3xX::zeros(3 + d);
    out.columns_mut(0, 3).copy_from(&sys.m);
    out.columns_mut(3, d).copy_from(&sys.n);
    out
}

/// Frobenius distance between two systems relative to the size of `reference`.
pub fn relative_gap(sys: &ConstraintSystem, reference: &ConstraintSystem) -> f64 {
    let a = stacked(sys);
    let b = stacked(reference);
    (a - &b).norm() / b.norm()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::connection::{jacobian_connection_eval, linear_constraint_connection};
    use crate::liegroup::Twist;
    use nalgebra::{Matrix3, SymmetricEigen, Vector3};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn close(a: &Pose, b: &Pose, tol: f64) -> bool {
        (a.x - b.x).abs() <= tol
            && (a.y - b.y).abs() <= tol
            && crate::liegroup::normalize_angle(a.theta - b.theta).abs() <= tol
    }

    #[test]
    fn contact_set_display_round_trip() {
        let c = ContactSet::from_feet(&[0, 2]);
        assert_eq!(c.to_string(), "1+3");
        assert_eq!("1+3".parse::<ContactSet>().unwrap(), c);
        assert!("0".parse::<ContactSet>().is_err());
    }

    #[test]
    fn gauss_legendre_is_exact_for_polynomials() {
        for q in [2, 3, 8, 64] {
            let (x, w) = gauss_legendre(q);
            assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-13);
            let deg = 2 * q - 1;
            let integral: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(deg as i32 - 1)).sum();
            let exact = if (deg - 1) % 2 == 0 { 2.0 / deg as f64 } else { 0.0 };
            assert!((integral - exact).abs() < 1e-13, "q = {q}");
        }
    }

    #[test]
    fn straight_chain_frames() {
        let chain = ChainModel::new(vec![1.0, 2.0, 1.5]).unwrap();
        let frames = chain_frames(&chain, &Shape::zeros(2)).unwrap();
        assert!(close(&frames[1], &Pose::identity(), 0.0));
        assert!(close(&frames[0], &Pose::new(-1.5, 0.0, 0.0), 1e-15));
        assert!(close(&frames[2], &Pose::new(1.75, 0.0, 0.0), 1e-15));
    }

    #[test]
    fn bent_chain_frames_by_hand() {
        let chain = ChainModel::new(vec![1.0; 3]).unwrap();
        // r = (π/2, 0): joint 1 at (-0.5, 0); link 1 points along -x rotated by
        // -π/2, i.e. its far end hangs at +y, midpoint (-0.5, 0.5)
        let f = chain_frames(&chain, &Shape::new(&[FRAC_PI_2, 0.0])).unwrap();
        assert!(close(&f[0], &Pose::new(-0.5, 0.5, -FRAC_PI_2), 1e-15));
        assert!(close(&f[2], &Pose::new(1.0, 0.0, 0.0), 1e-15));
        // r = (0, π/2): link 3 midpoint at (0.5, 0.5), heading +π/2
        let f = chain_frames(&chain, &Shape::new(&[0.0, FRAC_PI_2])).unwrap();
        assert!(close(&f[2], &Pose::new(0.5, 0.5, FRAC_PI_2), 1e-15));
        // r = (-π/2, π/2): outer links both turn to +y headings
        let f = chain_frames(&chain, &Shape::new(&[-FRAC_PI_2, FRAC_PI_2])).unwrap();
        assert!(close(&f[0], &Pose::new(-0.5, -0.5, FRAC_PI_2), 1e-15));
        assert!(close(&f[2], &Pose::new(0.5, 0.5, FRAC_PI_2), 1e-15));
        assert_eq!(f, chain_frames(&chain, &Shape::new(&[-FRAC_PI_2, FRAC_PI_2])).unwrap());
        assert!(chain_frames(&chain, &Shape::zeros(3)).is_err());
    }

    #[test]
    fn chain_validation() {
        assert!(ChainModel::new(vec![1.0, 1.0]).is_err());
        assert!(ChainModel::new(vec![1.0, -1.0, 1.0]).is_err());
    }

    #[test]
    fn material_point_derivatives_match_finite_differences() {
        let chain = ChainModel::new(vec![1.0, 0.8, 1.2, 0.7, 0.9]).unwrap();
        let r = Shape::new(&[0.3, -0.7, 0.4, 1.1]);
        let samples = [(0, -0.3), (1, 0.2), (2, 0.45), (3, -0.1), (4, 0.35)];
        let points = chain.material_points(&r, &samples).unwrap();
        let h = 1e-6;
        for j in 0..4 {
            let plus = chain.material_points(&r.nudged(j, h), &samples).unwrap();
            let minus = chain.material_points(&r.nudged(j, -h), &samples).unwrap();
            for (k, p) in points.iter().enumerate() {
                for c in 0..2 {
                    let fd = (plus[k].pos[c] - minus[k].pos[c]) / (2.0 * h);
                    assert!((fd - p.dpos[j][c]).abs() < 1e-8, "link {k} joint {j}");
                }
                let fd = (plus[k].heading - minus[k].heading) / (2.0 * h);
                assert!((fd - p.dheading[j]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn single_link_longitudinal_drag() {
        let model = DragModel::new(
            ChainModel::new(vec![2.5]).unwrap(),
            0.7,
            1.9,
            Quadrature::GaussLegendre(4),
        )
        .unwrap();
        let sys = build_drag_constraints(&model, &Shape::zeros(0)).unwrap();
        assert_eq!(sys.dim(), 0);
        let wrench = sys.m * Vector3::new(1.0, 0.0, 0.0);
        assert!((wrench[0] + 0.7 * 2.5).abs() < 1e-14);
        assert!(wrench[1].abs() < 1e-14 && wrench[2].abs() < 1e-14);
        assert!((sys.m[(0, 0)] + 0.7 * 2.5).abs() < 1e-14);
    }

    #[test]
    fn straight_isotropic_swimmer_is_negative_definite() {
        let model = DragModel::new(
            ChainModel::new(vec![1.0; 3]).unwrap(),
            1.5,
            1.5,
            Quadrature::GaussLegendre(8),
        )
        .unwrap();
        let sys = build_drag_constraints(&model, &Shape::zeros(2)).unwrap();
        assert!((sys.m - sys.m.transpose()).amax() < 1e-14);
        let eig = SymmetricEigen::new(sys.m).eigenvalues;
        assert!(eig.iter().all(|&l| l < 0.0), "{eig}");
        // hand values: -c·3 on translations, -c·∫s² = -c·27/12 on rotation
        assert!((sys.m[(0, 0)] + 4.5).abs() < 1e-13);
        assert!((sys.m[(2, 2)] + 1.5 * 27.0 / 12.0).abs() < 1e-13);
    }

    #[test]
    fn quadrature_self_convergence() {
        let coarse = DragModel::purcell();
        let fine = coarse.with_quadrature(Quadrature::GaussLegendre(64)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let r = Shape::new(&[rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)]);
            let a = stacked(&build_drag_constraints(&coarse, &r).unwrap());
            let b = stacked(&build_drag_constraints(&fine, &r).unwrap());
            assert!((a - b).amax() <= 1e-6);
        }
    }

    #[test]
    fn drag_dissipation_is_positive() {
        let model = DragModel::purcell();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let r = Shape::new(&[rng.gen_range(-2.5..2.5), rng.gen_range(-2.5..2.5)]);
            let sys = build_drag_constraints(&model, &r).unwrap();
            let neg = -sys.m;
            assert!((neg - neg.transpose()).amax() < 1e-12);
            let min = SymmetricEigen::new(neg).eigenvalues.min();
            assert!(min > 0.0);
            for _ in 0..5 {
                let xi = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
                assert!(xi.dot(&(neg * xi)) > 0.0);
            }
        }
    }

    #[test]
    fn selector_rule() {
        let m = LeggedModel::crawler();
        assert_eq!(select_contacts(&m, &Shape::new(&[0.2, 0.1])).unwrap(), ContactSet::single(0));
        assert_eq!(select_contacts(&m, &Shape::new(&[0.1, 0.2])).unwrap(), ContactSet::single(1));
        assert_eq!(select_contacts(&m, &Shape::new(&[0.15, 0.15])).unwrap(), ContactSet::single(0));
    }

    #[test]
    fn selector_changes_only_across_threshold() {
        let m = LeggedModel::crawler();
        let n = 101;
        for i in 0..n {
            for j in 0..n {
                let r1 = -1.0 + 2.0 * i as f64 / (n - 1) as f64;
                let r2 = -1.0 + 2.0 * j as f64 / (n - 1) as f64;
                let c = select_contacts(&m, &Shape::new(&[r1, r2])).unwrap();
                let expected = if r1 >= r2 { 0 } else { 1 };
                assert_eq!(c, ContactSet::single(expected));
            }
        }
    }

    #[test]
    fn foot_under_hip_gives_pure_translation() {
        let foot = Foot {
            hip: [0.0, 0.0],
            leg_length: 0.8,
            rest_angle: -FRAC_PI_2,
        };
        let m = LeggedModel::new(vec![foot], Selector::Fixed(ContactSet::single(0))).unwrap();
        let f = build_contact_map(&m, &ContactSet::single(0)).unwrap();
        assert!(close(&f.pose(&Shape::new(&[0.0])).unwrap(), &Pose::new(0.0, 0.8, 0.0), 1e-15));
    }

    #[test]
    fn leg_sweep_turns_body_against_the_leg() {
        let foot = Foot {
            hip: [0.0, 0.0],
            leg_length: 0.8,
            rest_angle: -FRAC_PI_2,
        };
        let m = LeggedModel::new(vec![foot], Selector::Fixed(ContactSet::single(0))).unwrap();
        let f = build_contact_map(&m, &ContactSet::single(0)).unwrap();
        let base = f.pose(&Shape::new(&[0.0])).unwrap();
        for delta in [-0.6, 0.1, 0.9] {
            let g = f.pose(&Shape::new(&[delta])).unwrap();
            // heading relative to the foot turns by -δ and the hip, which the
            // leg pivots about, stays put in the foot frame
            assert!((g.theta + delta).abs() < 1e-15);
            assert!(close(&base.between(&g), &Pose::rotation(-delta), 1e-15));
        }
    }

    /// Newton solve of the two-pin stance equations
    /// `g·mid = 0`, `(R(θ)(q - p))_y = 0`, starting from identity.
    fn pinning_oracle(p: [f64; 2], q: [f64; 2]) -> Pose {
        let mid = [0.5 * (p[0] + q[0]), 0.5 * (p[1] + q[1])];
        let d = [q[0] - p[0], q[1] - p[1]];
        let residual = |g: &Vector3<f64>| {
            let (s, c) = g[2].sin_cos();
            Vector3::new(
                g[0] + c * mid[0] - s * mid[1],
                g[1] + s * mid[0] + c * mid[1],
                s * d[0] + c * d[1],
            )
        };
        let mut g = Vector3::zeros();
        for _ in 0..50 {
            let f = residual(&g);
            let mut jac = Matrix3::zeros();
            let h = 1e-7;
            for k in 0..3 {
                let mut gp = g;
                gp[k] += h;
                let mut gm = g;
                gm[k] -= h;
                jac.set_column(k, &((residual(&gp) - residual(&gm)) / (2.0 * h)));
            }
            g -= jac.lu().solve(&f).unwrap();
            if f.amax() < 1e-15 {
                break;
            }
        }
        // pick the branch with the second foot on +x
        let (s, c) = g[2].sin_cos();
        if c * d[0] - s * d[1] < 0.0 {
            g[2] += PI;
            let (s, c) = g[2].sin_cos();
            g[0] = -(c * mid[0] - s * mid[1]);
            g[1] = -(s * mid[0] + c * mid[1]);
        }
        Pose::new(g[0], g[1], g[2])
    }

    #[test]
    fn two_pin_stance_matches_root_finder() {
        let m = LeggedModel::crawler();
        let both = ContactSet::from_feet(&[0, 1]);
        let f = build_contact_map(&m, &both).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..5 {
            let r = Shape::new(&[rng.gen_range(-0.8..0.8), rng.gen_range(-0.8..0.8)]);
            let p = m.foot_pose(0, &r).unwrap().position();
            let q = m.foot_pose(1, &r).unwrap().position();
            let oracle = pinning_oracle(p, q);
            assert!(close(&f.pose(&r).unwrap(), &oracle, 1e-9));
        }
    }

    #[test]
    fn coincident_pins_are_degenerate() {
        let leg = Foot {
            hip: [0.0, 0.0],
            leg_length: 0.5,
            rest_angle: -FRAC_PI_2,
        };
        let m = LeggedModel::new(vec![leg, leg], Selector::ArgMax).unwrap();
        let f = build_contact_map(&m, &ContactSet::from_feet(&[0, 1])).unwrap();
        assert!(matches!(
            f.pose(&Shape::new(&[0.2, 0.2])),
            Err(Error::DegenerateStance(_))
        ));
        assert!(build_contact_map(&m, &ContactSet::from_feet(&[])).is_err());
    }

    #[test]
    fn isotropic_single_foot_frozen_leg_pins_body() {
        let legged = LeggedModel::new(
            vec![Foot {
                hip: [0.2, 0.1],
                leg_length: 0.5,
                rest_angle: -FRAC_PI_2,
            }],
            Selector::ArgMax,
        )
        .unwrap();
        let model = SlipModel::new(legged.clone(), vec![SlipCoefficients::isotropic(3.0)], None).unwrap();
        let r = Shape::new(&[0.4]);
        let sys = build_slip_constraints(&model, &ContactSet::single(0), &r).unwrap();
        let a = linear_constraint_connection(&sys).unwrap();
        let xi = a.apply(&crate::shapespace::ShapeVelocity::zeros(1)).unwrap();
        assert_eq!(xi, Twist::zero());
        // with no other dissipation the foot cannot slide, so the slip and
        // stick connections agree
        let stick = jacobian_connection_eval(
            &build_contact_map(&legged, &ContactSet::single(0)).unwrap(),
            &r,
            1e-5,
        )
        .unwrap();
        assert!(a.distance(&stick) < 1e-9);
    }

    #[test]
    fn mirror_symmetric_stance_does_not_turn() {
        let model = SlipModel::crawler();
        let both = ContactSet::from_feet(&[0, 1]);
        for delta in [0.1, 0.35, -0.5] {
            let r = Shape::new(&[delta, -delta]);
            let sys = build_slip_constraints(&model, &both, &r).unwrap();
            let a = linear_constraint_connection(&sys).unwrap();
            let xi = a.apply(&crate::shapespace::ShapeVelocity::new(&[0.7, -0.7])).unwrap();
            assert!(xi.omega.abs() < 1e-14, "{xi:?}");
            assert!(xi.vx.abs() < 1e-14);
        }
    }

    #[test]
    fn slip_approaches_stick() {
        let base = SlipModel::crawler();
        let r = Shape::new(&[0.3, -0.2]);
        let c = ContactSet::single(0);
        let stick = jacobian_connection_eval(&build_contact_map(base.legged(), &c).unwrap(), &r, 1e-5).unwrap();
        let mut last = f64::INFINITY;
        for e in 1..=5 {
            let model = base.with_foot_scale(10f64.powi(e)).unwrap();
            let a = linear_constraint_connection(&build_slip_constraints(&model, &c, &r).unwrap()).unwrap();
            let gap = a.distance(&stick);
            assert!(gap <= last);
            last = gap;
        }
        assert!(last <= 1e-3);
    }

    #[test]
    fn slip_validation() {
        let legged = LeggedModel::crawler();
        assert!(SlipModel::new(legged.clone(), vec![SlipCoefficients::isotropic(1.0)], None).is_err());
        assert!(SlipModel::new(legged, vec![SlipCoefficients::isotropic(0.0); 2], None).is_err());
    }

    #[test]
    fn two_feet_per_link_is_two_point_midpoint_rule() {
        let drag = DragModel::purcell();
        let surrogate = ManyLeggedSurrogate::new(drag.clone(), 2).unwrap();
        let midpoint = drag.with_quadrature(Quadrature::Midpoint(2)).unwrap();
        let r = Shape::new(&[0.4, -0.9]);
        let a = stacked(&many_legged_drag_surrogate(&surrogate, &r).unwrap());
        let b = stacked(&build_drag_constraints(&midpoint, &r).unwrap());
        assert!((a - b).amax() < 1e-14);
    }

    #[test]
    fn doubling_legs_shrinks_gap() {
        let drag = DragModel::purcell();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..5 {
            let r = Shape::new(&[rng.gen_range(-1.5..1.5), rng.gen_range(-1.5..1.5)]);
            let reference = build_drag_constraints(&drag, &r).unwrap();
            let mut last = f64::INFINITY;
            for m in [2, 4, 8, 16, 32, 64] {
                let s = ManyLeggedSurrogate::new(drag.clone(), m).unwrap();
                let gap = relative_gap(&many_legged_drag_surrogate(&s, &r).unwrap(), &reference);
                assert!(gap < last);
                last = gap;
            }
            assert!(last <= 1e-3);
        }
    }

    #[test]
    fn testbeds_are_smooth_and_deterministic() {
        for tb in JacobianTestbed::ALL {
            let r = Shape::new(&[0.3, -0.4]);
            assert_eq!(tb.pose(&r).unwrap(), tb.pose(&r).unwrap());
        }
    }
}
