//! Local connections `A(r)`: the 3×d matrices taking shape velocity to body
//! velocity, `g⁻¹ġ = A(r)ṙ`.
//!
//! Four construction routes feed the same [`ConnectionMatrix`]:
//!
//! * a pose map `F(r)` differentiated on the group (`A_F = F⁻¹ J_F`),
//! * a contact model whose active piece `F[c]` is picked by the shape,
//! * a linear constraint system `Mξ + Nṙ = 0` solved for `ξ`,
//! * a fixed matrix, mostly for tests and calibration.

use std::sync::Arc;

use nalgebra::{Matrix3, Matrix3xX};

use crate::error::{Error, Result};
use crate::liegroup::{Pose, Twist};
use crate::models::{build_contact_map, select_contacts, ContactSet, LeggedModel};
use crate::shapespace::{Shape, ShapeVelocity};

/// Default central-difference step for Jacobian connections.
pub const DEFAULT_JACOBIAN_STEP: f64 = 1e-5;

/// Constraint systems whose `M` has a larger condition estimate are rejected.
pub const MAX_CONDITION: f64 = 1e12;

/// Rows are `(vx, vy, omega)`, columns are shape coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct ConnectionMatrix(pub Matrix3xX<f64>);

impl ConnectionMatrix {
    pub fn zeros(dim: usize) -> Self {
        ConnectionMatrix(Matrix3xX::zeros(dim))
    }

    pub fn from_columns(columns: &[Twist]) -> Self {
        let mut m = Matrix3xX::zeros(columns.len());
        for (j, c) in columns.iter().enumerate() {
            m.set_column(j, &c.to_vector());
        }
        ConnectionMatrix(m)
    }

    /// Builds from row-major entries `[vx row, vy row, omega row]`.
    pub fn from_row_slice(dim: usize, entries: &[f64]) -> Result<Self> {
        if entries.len() != 3 * dim {
            return Err(Error::DimensionMismatch {
                expected: 3 * dim,
                found: entries.len(),
            });
        }
        Ok(ConnectionMatrix(Matrix3xX::from_row_slice(entries)))
    }

    pub fn dim(&self) -> usize {
        self.0.ncols()
    }

    pub fn column(&self, i: usize) -> Twist {
        Twist::new(self.0[(0, i)], self.0[(1, i)], self.0[(2, i)])
    }

    /// Row-major entries, the layout used in field files.
    pub fn row_major(&self) -> Vec<f64> {
        (0..3)
            .flat_map(|i| (0..self.dim()).map(move |j| (i, j)))
            .map(|(i, j)| self.0[(i, j)])
            .collect()
    }

    /// `A·ṙ`
    pub fn apply(&self, rdot: &ShapeVelocity) -> Result<Twist> {
        if rdot.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: rdot.dim(),
            });
        }
        Ok(Twist::from_vector(&(&self.0 * &rdot.0)))
    }

    /// Max-abs entry of `self - other`.
    pub fn distance(&self, other: &ConnectionMatrix) -> f64 {
        (&self.0 - &other.0).amax()
    }
}

/// A smooth map from shape to body pose, `F: Q → SE(2)`.
pub trait PoseMap: Send + Sync {
    fn dim(&self) -> usize;
    fn pose(&self, r: &Shape) -> Result<Pose>;
}

/// Adapts a closure into a [`PoseMap`].
pub struct FnPoseMap<F> {
    dim: usize,
    f: F,
}

impl<F> FnPoseMap<F>
where
    F: Fn(&Shape) -> Pose + Send + Sync,
{
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F> PoseMap for FnPoseMap<F>
where
    F: Fn(&Shape) -> Pose + Send + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn pose(&self, r: &Shape) -> Result<Pose> {
        r.ensure_dim(self.dim)?;
        Ok((self.f)(r))
    }
}

/// Body-frame connection of a pose map, `A_F(r) = F(r)⁻¹ J_F(r)`.
///
/// Column `i` is `log(F(r - h·eᵢ)⁻¹ F(r + h·eᵢ)) / 2h`, a central difference
/// taken on the group so the result lies in se(2). Second-order accurate in `h`.
pub fn jacobian_connection_eval(map: &dyn PoseMap, r: &Shape, h: f64) -> Result<ConnectionMatrix> {
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "difference step must be positive, got {h}"
        )));
    }
    r.ensure_dim(map.dim())?;
    let columns = (0..map.dim())
        .map(|i| {
            let minus = map.pose(&r.nudged(i, -h))?;
            let plus = map.pose(&r.nudged(i, h))?;
            Ok(minus.between(&plus).log().scale(0.5 / h))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ConnectionMatrix::from_columns(&columns))
}

/// Linear implicit equation `M ξ + N ṙ = 0` tying body velocity to shape
/// velocity.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintSystem {
    pub m: Matrix3<f64>,
    pub n: Matrix3xX<f64>,
}

impl ConstraintSystem {
    pub fn zeros(dim: usize) -> Self {
        Self {
            m: Matrix3::zeros(),
            n: Matrix3xX::zeros(dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.n.ncols()
    }

    /// 2-norm condition number of `M` (infinite when singular).
    pub fn condition(&self) -> f64 {
        let sv = self.m.singular_values();
        let max = sv.max();
        let min = sv.min();
        if min > 0.0 && max.is_finite() {
            max / min
        } else {
            f64::INFINITY
        }
    }

    /// `‖M·A + N‖∞` (max-abs entry).
    pub fn residual(&self, a: &ConnectionMatrix) -> f64 {
        (self.m * &a.0 + &self.n).amax()
    }
}

/// Solves `Mξ + Nṙ = 0` for the connection `A = -M⁻¹N` with a partially
/// pivoted LU factorization and one step of iterative refinement.
pub fn linear_constraint_connection(sys: &ConstraintSystem) -> Result<ConnectionMatrix> {
    let condition = sys.condition();
    if !(condition <= MAX_CONDITION) {
        return Err(Error::SingularConstraint { condition });
    }
    let lu = sys.m.lu();
    let rhs = -&sys.n;
    let mut a = lu
        .solve(&rhs)
        .ok_or(Error::SingularConstraint { condition })?;
    let correction = lu
        .solve(&(&rhs - sys.m * &a))
        .ok_or(Error::SingularConstraint { condition })?;
    a += correction;
    Ok(ConnectionMatrix(a))
}

/// Anything that can assemble a constraint system at a shape, optionally
/// depending on an active contact set picked by the shape.
pub trait ConstraintBuilder: Send + Sync {
    fn dim(&self) -> usize;

    fn contact_set(&self, _r: &Shape) -> Option<ContactSet> {
        None
    }

    fn build(&self, r: &Shape, contacts: Option<&ContactSet>) -> Result<ConstraintSystem>;
}

/// The active contact set at `r` and the connection of that piece, evaluated
/// through the Jacobian route on `F[c]`.
pub fn piecewise_connection_eval(
    model: &LeggedModel,
    r: &Shape,
    h: f64,
) -> Result<(ContactSet, ConnectionMatrix)> {
    let c = select_contacts(model, r)?;
    let map = build_contact_map(model, &c)?;
    let a = jacobian_connection_eval(&map, r, h)?;
    Ok((c, a))
}

/// Source of `A(r)` for the integrator and the analysis tools.
#[derive(Clone)]
pub enum ConnectionProvider {
    Constant(ConnectionMatrix),
    Jacobian { map: Arc<dyn PoseMap>, step: f64 },
    Piecewise { model: LeggedModel, step: f64 },
    Constraint(Arc<dyn ConstraintBuilder>),
}

impl std::fmt::Debug for ConnectionProvider {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "ConnectionProvider::{}(dim = {})", self.kind_name(), self.dim())
    }
}

impl ConnectionProvider {
    pub fn jacobian(map: Arc<dyn PoseMap>) -> Self {
        ConnectionProvider::Jacobian {
            map,
            step: DEFAULT_JACOBIAN_STEP,
        }
    }

    pub fn piecewise(model: LeggedModel) -> Self {
        ConnectionProvider::Piecewise {
            model,
            step: DEFAULT_JACOBIAN_STEP,
        }
    }

    pub fn constraint<B: ConstraintBuilder + 'static>(builder: B) -> Self {
        ConnectionProvider::Constraint(Arc::new(builder))
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            ConnectionProvider::Constant(_) => "constant",
            ConnectionProvider::Jacobian { .. } => "jacobian",
            ConnectionProvider::Piecewise { .. } => "piecewise",
            ConnectionProvider::Constraint(_) => "constraint",
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            ConnectionProvider::Constant(a) => a.dim(),
            ConnectionProvider::Jacobian { map, .. } => map.dim(),
            ConnectionProvider::Piecewise { model, .. } => model.dim(),
            ConnectionProvider::Constraint(b) => b.dim(),
        }
    }

    /// Active contact set at `r`, for providers that switch between pieces.
    pub fn contact_set(&self, r: &Shape) -> Result<Option<ContactSet>> {
        match self {
            ConnectionProvider::Piecewise { model, .. } => select_contacts(model, r).map(Some),
            ConnectionProvider::Constraint(b) => {
                r.ensure_dim(b.dim())?;
                Ok(b.contact_set(r))
            }
            _ => Ok(None),
        }
    }

    /// Connection of a given piece, regardless of which piece the selector
    /// would pick at `r`. Providers without pieces ignore `contacts`.
    pub fn eval_piece(&self, r: &Shape, contacts: Option<&ContactSet>) -> Result<ConnectionMatrix> {
        r.ensure_dim(self.dim())?;
        match self {
            ConnectionProvider::Constant(a) => Ok(a.clone()),
            ConnectionProvider::Jacobian { map, step } => {
                jacobian_connection_eval(map.as_ref(), r, *step)
            }
            ConnectionProvider::Piecewise { model, step } => {
                let c = match contacts {
                    Some(c) => *c,
                    None => select_contacts(model, r)?,
                };
                let map = build_contact_map(model, &c)?;
                jacobian_connection_eval(&map, r, *step)
            }
            ConnectionProvider::Constraint(b) => {
                let sys = b.build(r, contacts)?;
                linear_constraint_connection(&sys)
            }
        }
    }

    /// Active contact set (if any) and `A(r)`.
    pub fn eval(&self, r: &Shape) -> Result<(Option<ContactSet>, ConnectionMatrix)> {
        let c = self.contact_set(r)?;
        let a = self.eval_piece(r, c.as_ref())?;
        Ok((c, a))
    }

    /// Constraint system behind the connection, for constraint providers.
    pub fn constraint_system(&self, r: &Shape) -> Option<Result<ConstraintSystem>> {
        match self {
            ConnectionProvider::Constraint(b) => {
                let c = b.contact_set(r);
                Some(b.build(r, c.as_ref()))
            }
            _ => None,
        }
    }
}
