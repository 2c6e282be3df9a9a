//! Planar rigid transforms SE(2) and their Lie algebra se(2).
//!
//! A [`Pose`] locates the body frame in the world; a [`Twist`] is a body
//! velocity `g⁻¹ġ` written as `(vx, vy, omega)`. Group elements compose like
//! the 3×3 homogeneous matrices
//!
//! ```text
//! | cos θ  -sin θ  x |
//! | sin θ   cos θ  y |
//! |   0       0    1 |
//! ```
//!
//! and headings are kept in `(-π, π]` after every operation.

use std::f64::consts::PI;
use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

/// Below this rotation magnitude `exp` and `log` use series expansions of the
/// translation coupling terms.
pub const SMALL_ANGLE: f64 = 1e-6;

/// Wraps an angle into `(-π, π]`.
pub fn normalize_angle(angle: f64) -> f64 {
    if angle > -PI && angle <= PI {
        return angle;
    }
    let wrapped = (angle + PI).rem_euclid(2.0 * PI) - PI;
    if wrapped <= -PI {
        wrapped + 2.0 * PI
    } else {
        wrapped
    }
}

/// Element of SE(2).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

/// Element of se(2), ordered `(vx, vy, omega)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Twist {
    pub vx: f64,
    pub vy: f64,
    pub omega: f64,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self {
            x,
            y,
            theta: normalize_angle(theta),
        }
    }

    pub const fn identity() -> Self {
        Self {
            x: 0.0,
            y: 0.0,
            theta: 0.0,
        }
    }

    pub fn translation(x: f64, y: f64) -> Self {
        Self::new(x, y, 0.0)
    }

    pub fn rotation(theta: f64) -> Self {
        Self::new(0.0, 0.0, theta)
    }

    /// Group product `self · other`.
    pub fn compose(&self, other: &Pose) -> Pose {
        let (s, c) = self.theta.sin_cos();
        Pose::new(
            self.x + c * other.x - s * other.y,
            self.y + s * other.x + c * other.y,
            self.theta + other.theta,
        )
    }

    pub fn inverse(&self) -> Pose {
        let (s, c) = self.theta.sin_cos();
        Pose::new(
            -c * self.x - s * self.y,
            s * self.x - c * self.y,
            -self.theta,
        )
    }

    /// `self⁻¹ · other`, the pose of `other` seen from `self`.
    pub fn between(&self, other: &Pose) -> Pose {
        self.inverse().compose(other)
    }

    /// Maps a point expressed in this frame into the parent frame.
    pub fn transform_point(&self, p: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.theta.sin_cos();
        [self.x + c * p[0] - s * p[1], self.y + s * p[0] + c * p[1]]
    }

    /// Flow of the constant body velocity `xi` for time `dt`, i.e. `exp(dt·xi)`.
    pub fn exp(xi: &Twist, dt: f64) -> Pose {
        let w = xi.omega * dt;
        let vx = xi.vx * dt;
        let vy = xi.vy * dt;
        // V = [[a, -b], [b, a]] with a = sin w / w, b = (1 - cos w) / w
        let (a, b) = if w.abs() < SMALL_ANGLE {
            let w2 = w * w;
            (1.0 - w2 / 6.0, w / 2.0 - w * w2 / 24.0)
        } else {
            let (s, c) = w.sin_cos();
            (s / w, (1.0 - c) / w)
        };
        Pose::new(a * vx - b * vy, b * vx + a * vy, w)
    }

    /// Principal-branch logarithm; `Pose::exp(&g.log(), 1.0) == g`.
    pub fn log(&self) -> Twist {
        let theta = self.theta;
        let half = 0.5 * theta;
        let alpha = if theta.abs() < SMALL_ANGLE {
            1.0 - theta * theta / 12.0
        } else {
            half / half.tan()
        };
        Twist::new(
            alpha * self.x + half * self.y,
            -half * self.x + alpha * self.y,
            theta,
        )
    }

    /// Adjoint action `Ad_g ξ`, the twist `g ξ g⁻¹`.
    pub fn adjoint(&self, xi: &Twist) -> Twist {
        let (s, c) = self.theta.sin_cos();
        Twist::new(
            c * xi.vx - s * xi.vy + self.y * xi.omega,
            s * xi.vx + c * xi.vy - self.x * xi.omega,
            xi.omega,
        )
    }

    pub fn adjoint_matrix(&self) -> Matrix3<f64> {
        let (s, c) = self.theta.sin_cos();
        Matrix3::new(c, -s, self.y, s, c, -self.x, 0.0, 0.0, 1.0)
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        let (s, c) = self.theta.sin_cos();
        Matrix3::new(c, -s, self.x, s, c, self.y, 0.0, 0.0, 1.0)
    }

    /// Inverse of [`Pose::matrix`]; the heading is read with `atan2`.
    pub fn from_matrix(m: &Matrix3<f64>) -> Pose {
        Pose::new(m[(0, 2)], m[(1, 2)], m[(1, 0)].atan2(m[(0, 0)]))
    }

    pub fn position(&self) -> [f64; 2] {
        [self.x, self.y]
    }
}

impl Mul for Pose {
    type Output = Pose;

    fn mul(self, rhs: Pose) -> Pose {
        self.compose(&rhs)
    }
}

impl Twist {
    pub const fn new(vx: f64, vy: f64, omega: f64) -> Self {
        Self { vx, vy, omega }
    }

    pub const fn zero() -> Self {
        Self::new(0.0, 0.0, 0.0)
    }

    pub fn from_vector(v: &Vector3<f64>) -> Self {
        Self::new(v[0], v[1], v[2])
    }

    pub fn to_vector(&self) -> Vector3<f64> {
        Vector3::new(self.vx, self.vy, self.omega)
    }

    /// Euclidean norm of `(vx, vy, omega)`.
    pub fn norm(&self) -> f64 {
        (self.vx * self.vx + self.vy * self.vy + self.omega * self.omega).sqrt()
    }

    pub fn scale(&self, k: f64) -> Twist {
        Twist::new(k * self.vx, k * self.vy, k * self.omega)
    }

    /// Lie bracket, equal to the matrix commutator of the `hat` forms.
    pub fn bracket(&self, other: &Twist) -> Twist {
        Twist::new(
            other.omega * self.vy - self.omega * other.vy,
            self.omega * other.vx - other.omega * self.vx,
            0.0,
        )
    }

    /// 3×3 matrix form in se(2).
    pub fn hat(&self) -> Matrix3<f64> {
        Matrix3::new(
            0.0, -self.omega, self.vx, self.omega, 0.0, self.vy, 0.0, 0.0, 0.0,
        )
    }

    pub fn max_abs(&self) -> f64 {
        self.vx.abs().max(self.vy.abs()).max(self.omega.abs())
    }
}

impl Add for Twist {
    type Output = Twist;

    fn add(self, rhs: Twist) -> Twist {
        Twist::new(self.vx + rhs.vx, self.vy + rhs.vy, self.omega + rhs.omega)
    }
}

impl AddAssign for Twist {
    fn add_assign(&mut self, rhs: Twist) {
        *self = *self + rhs;
    }
}

impl Sub for Twist {
    type Output = Twist;

    fn sub(self, rhs: Twist) -> Twist {
        Twist::new(self.vx - rhs.vx, self.vy - rhs.vy, self.omega - rhs.omega)
    }
}

impl Neg for Twist {
    type Output = Twist;

    fn neg(self) -> Twist {
        self.scale(-1.0)
    }
}

impl Mul<f64> for Twist {
    type Output = Twist;

    fn mul(self, k: f64) -> Twist {
        self.scale(k)
    }
}

impl Mul<Twist> for f64 {
    type Output = Twist;

    fn mul(self, xi: Twist) -> Twist {
        xi.scale(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    fn assert_pose_eq(a: &Pose, b: &Pose, tol: f64) {
        assert!(
            (a.x - b.x).abs() <= tol
                && (a.y - b.y).abs() <= tol
                && normalize_angle(a.theta - b.theta).abs() <= tol,
            "{a:?} != {b:?}"
        );
    }

    fn assert_twist_eq(a: &Twist, b: &Twist, tol: f64) {
        assert!((*a - *b).max_abs() <= tol, "{a:?} != {b:?}");
    }

    #[test]
    fn normalization_range() {
        assert_eq!(normalize_angle(PI), PI);
        assert_eq!(normalize_angle(-PI), PI);
        assert_eq!(normalize_angle(1e-20), 1e-20);
        assert_relative_eq!(normalize_angle(3.0 * PI), PI, epsilon = 1e-12);
        assert_relative_eq!(normalize_angle(-3.5 * PI), 0.5 * PI, epsilon = 1e-12);
    }

    #[test]
    fn compose_examples() {
        let p = Pose::new(1.0, 2.0, 0.3);
        assert_eq!(Pose::identity().compose(&p), p);
        assert_pose_eq(
            &Pose::translation(1.0, 0.0).compose(&Pose::translation(0.0, 1.0)),
            &Pose::new(1.0, 1.0, 0.0),
            0.0,
        );
        assert_pose_eq(
            &Pose::rotation(FRAC_PI_2).compose(&Pose::translation(1.0, 0.0)),
            &Pose::new(0.0, 1.0, FRAC_PI_2),
            1e-15,
        );
    }

    #[test]
    fn inverse_examples() {
        assert_eq!(Pose::identity().inverse(), Pose::identity());
        assert_pose_eq(
            &Pose::translation(1.0, 0.0).inverse(),
            &Pose::new(-1.0, 0.0, 0.0),
            0.0,
        );
        let g = Pose::new(1.0, 1.0, FRAC_PI_2);
        let inv = g.inverse();
        assert_pose_eq(&inv, &Pose::new(-1.0, 1.0, -FRAC_PI_2), 1e-15);
        assert_pose_eq(&g.compose(&inv), &Pose::identity(), 1e-15);
        // matrix product cross-check
        let m = g.matrix() * inv.matrix();
        assert_relative_eq!(m, Matrix3::identity(), epsilon = 1e-15);
    }

    /// Euler flow of a constant twist with a tiny step, as an independent
    /// reference for the closed-form exponential.
    fn fine_flow(xi: &Twist, duration: f64, h: f64) -> Pose {
        let n = (duration / h).round() as usize;
        let (mut x, mut y, mut th) = (0.0f64, 0.0f64, 0.0f64);
        // midpoint rule on the heading makes the position update exact to O(h²)
        for _ in 0..n {
            let mid = th + 0.5 * xi.omega * h;
            let (s, c) = mid.sin_cos();
            x += h * (c * xi.vx - s * xi.vy);
            y += h * (s * xi.vx + c * xi.vy);
            th += xi.omega * h;
        }
        Pose::new(x, y, th)
    }

    #[test]
    fn exp_examples() {
        assert_eq!(Pose::exp(&Twist::zero(), 1.0), Pose::identity());
        assert_pose_eq(
            &Pose::exp(&Twist::new(1.0, 0.0, 0.0), 1.0),
            &Pose::new(1.0, 0.0, 0.0),
            0.0,
        );
        let xi = Twist::new(1.0, 0.0, FRAC_PI_2);
        let g = Pose::exp(&xi, 1.0);
        let two_over_pi = 2.0 / PI;
        assert_pose_eq(&g, &Pose::new(two_over_pi, two_over_pi, FRAC_PI_2), 1e-15);
        assert_pose_eq(&g, &fine_flow(&xi, 1.0, 1e-6), 1e-9);
    }

    #[test]
    fn log_examples() {
        assert_eq!(Pose::identity().log(), Twist::zero());
        assert_twist_eq(
            &Pose::rotation(FRAC_PI_2).log(),
            &Twist::new(0.0, 0.0, FRAC_PI_2),
            0.0,
        );
        let two_over_pi = 2.0 / PI;
        assert_twist_eq(
            &Pose::new(two_over_pi, two_over_pi, FRAC_PI_2).log(),
            &Twist::new(1.0, 0.0, FRAC_PI_2),
            1e-15,
        );
    }

    #[test]
    fn small_angle_branches_agree_at_switch() {
        let xi = Twist::new(0.7, -0.4, 1.0);
        for &w in &[SMALL_ANGLE * (1.0 - 1e-9), SMALL_ANGLE * (1.0 + 1e-9)] {
            let series = Pose::exp(&xi, w);
            let (s, c) = w.sin_cos();
            let closed_x = (s / w * 0.7 + (1.0 - c) / w * 0.4) * w;
            let closed_y = ((1.0 - c) / w * 0.7 - s / w * 0.4) * w;
            assert!((series.x - closed_x).abs() <= 1e-12);
            assert!((series.y - closed_y).abs() <= 1e-12);
            let back = series.log();
            assert_twist_eq(&back, &xi.scale(w), 1e-12);
        }
    }

    #[test]
    fn adjoint_examples() {
        let xi = Twist::new(0.3, -1.2, 0.7);
        assert_eq!(Pose::identity().adjoint(&xi), xi);
        assert_twist_eq(
            &Pose::rotation(FRAC_PI_2).adjoint(&Twist::new(1.0, 0.0, 0.0)),
            &Twist::new(0.0, 1.0, 0.0),
            1e-15,
        );
        let g = Pose::translation(0.0, 1.0);
        let out = g.adjoint(&Twist::new(0.0, 0.0, 1.0));
        assert_twist_eq(&out, &Twist::new(1.0, 0.0, 1.0), 0.0);
        // g ξ̂ g⁻¹ via homogeneous matrices
        let conj = g.matrix() * Twist::new(0.0, 0.0, 1.0).hat() * g.inverse().matrix();
        assert_relative_eq!(conj, out.hat(), epsilon = 1e-15);
    }

    #[test]
    fn bracket_matches_commutator() {
        let a = Twist::new(1.0, 0.0, 0.0);
        let b = Twist::new(0.0, 0.0, 1.0);
        assert_twist_eq(&a.bracket(&b), &Twist::new(0.0, -1.0, 0.0), 0.0);
        let c = Twist::new(0.4, -0.9, 1.3);
        let d = Twist::new(-2.0, 0.5, 0.25);
        let comm = c.hat() * d.hat() - d.hat() * c.hat();
        assert_relative_eq!(comm, c.bracket(&d).hat(), epsilon = 1e-15);
    }

    fn pose_strategy() -> impl Strategy<Value = Pose> {
        (-5.0..5.0f64, -5.0..5.0f64, -PI..PI).prop_map(|(x, y, t)| Pose::new(x, y, t))
    }

    fn twist_strategy(max_omega: f64) -> impl Strategy<Value = Twist> {
        (-3.0..3.0f64, -3.0..3.0f64, -max_omega..max_omega)
            .prop_map(|(vx, vy, w)| Twist::new(vx, vy, w))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn exp_log_round_trip(xi in twist_strategy(PI - 0.1)) {
            let back = Pose::exp(&xi, 1.0).log();
            prop_assert!((back - xi).norm() <= 1e-10);
        }

        #[test]
        fn exp_homomorphism(xi in twist_strategy(2.0), a in -1.0..1.0f64, b in -1.0..1.0f64) {
            let lhs = Pose::exp(&xi, a + b);
            let rhs = Pose::exp(&xi, a).compose(&Pose::exp(&xi, b));
            prop_assert!((lhs.x - rhs.x).abs() <= 1e-12);
            prop_assert!((lhs.y - rhs.y).abs() <= 1e-12);
            prop_assert!(normalize_angle(lhs.theta - rhs.theta).abs() <= 1e-12);
        }

        #[test]
        fn group_laws(p in pose_strategy(), q in pose_strategy(), r in pose_strategy()) {
            let left = p.compose(&q).compose(&r);
            let right = p.compose(&q.compose(&r));
            prop_assert!((left.x - right.x).abs() <= 1e-12);
            prop_assert!((left.y - right.y).abs() <= 1e-12);
            prop_assert!(normalize_angle(left.theta - right.theta).abs() <= 1e-12);
            let id = p.compose(&p.inverse());
            prop_assert!(id.x.abs() <= 1e-12 && id.y.abs() <= 1e-12 && id.theta.abs() <= 1e-12);
            prop_assert_eq!(Pose::identity().compose(&p), p);
            let m = Pose::from_matrix(&(p.matrix() * q.matrix()));
            let c = p.compose(&q);
            prop_assert!((m.x - c.x).abs() <= 1e-12 && (m.y - c.y).abs() <= 1e-12);
            prop_assert!(c.theta > -PI && c.theta <= PI);
        }

        #[test]
        fn adjoint_consistency(g in pose_strategy(), xi in twist_strategy(2.0)) {
            let lhs = g.compose(&Pose::exp(&xi, 1.0));
            let rhs = Pose::exp(&g.adjoint(&xi), 1.0).compose(&g);
            prop_assert!((lhs.x - rhs.x).abs() <= 1e-10);
            prop_assert!((lhs.y - rhs.y).abs() <= 1e-10);
            prop_assert!(normalize_angle(lhs.theta - rhs.theta).abs() <= 1e-10);
            let via_matrix = g.adjoint_matrix() * xi.to_vector();
            prop_assert!((Twist::from_vector(&via_matrix) - g.adjoint(&xi)).max_abs() <= 1e-12);
        }

        #[test]
        fn twist_vector_space(a in twist_strategy(2.0), b in twist_strategy(2.0), k in -3.0..3.0f64) {
            let lhs = (a + b) * k;
            let rhs = a * k + b * k;
            prop_assert!((lhs - rhs).max_abs() <= 1e-14);
            prop_assert_eq!((a + b).vx, a.vx + b.vx);
        }
    }
}
