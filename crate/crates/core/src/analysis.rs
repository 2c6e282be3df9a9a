//! Shape-space field tools: dense sampling of `A(r)`, a finite-difference
//! curvature `D = ∂A₂/∂r₁ − ∂A₁/∂r₂ + [A₁, A₂]`, and a comparison of
//! integrated displacement against the curvature integral over a loop.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::connection::{ConnectionMatrix, ConnectionProvider};
use crate::error::{Error, Result};
use crate::integrator::{integrate_gait, net_displacement, IntegratorSettings};
use crate::liegroup::Twist;
use crate::models::ContactSet;
use crate::shapespace::{Gait, Shape};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Axis {
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl Axis {
    pub fn new(min: f64, max: f64, count: usize) -> Self {
        Self { min, max, count }
    }

    pub fn spacing(&self) -> f64 {
        (self.max - self.min) / (self.count - 1) as f64
    }

    pub fn value(&self, i: usize) -> f64 {
        if i + 1 == self.count {
            self.max
        } else {
            self.min + self.spacing() * i as f64
        }
    }

    fn contains(&self, x: f64) -> bool {
        x >= self.min && x <= self.max
    }

    fn validate(&self) -> Result<()> {
        if self.count < 2 || !(self.max > self.min) || !self.min.is_finite() || !self.max.is_finite() {
            return Err(Error::InvalidGrid(format!(
                "axis [{}, {}] with {} nodes",
                self.min, self.max, self.count
            )));
        }
        Ok(())
    }
}

/// A rectangular grid over two shape coordinates. Other coordinates are held
/// at `base`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub axes: [Axis; 2],
    pub coords: [usize; 2],
    pub base: Vec<f64>,
}

impl GridSpec {
    /// Grid over the first two coordinates of a `dim`-dof shape space.
    pub fn square(dim: usize, min: f64, max: f64, count: usize) -> Self {
        Self {
            axes: [Axis::new(min, max, count); 2],
            coords: [0, 1],
            base: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.base.len()
    }

    pub fn node_count(&self) -> usize {
        self.axes[0].count * self.axes[1].count
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        i * self.axes[1].count + j
    }

    pub fn shape(&self, i: usize, j: usize) -> Shape {
        let mut r = self.base.clone();
        r[self.coords[0]] = self.axes[0].value(i);
        r[self.coords[1]] = self.axes[1].value(j);
        Shape::new(&r)
    }

    pub fn validate(&self) -> Result<()> {
        for a in &self.axes {
            a.validate()?;
        }
        let d = self.dim();
        if self.coords[0] == self.coords[1] || self.coords.iter().any(|&c| c >= d) {
            return Err(Error::InvalidGrid(format!(
                "grid coordinates {:?} invalid for a {d}-dof shape",
                self.coords
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldNode {
    pub shape: Shape,
    /// `None` when the constraint solve was singular here.
    pub connection: Option<ConnectionMatrix>,
    pub contacts: Option<ContactSet>,
}

impl FieldNode {
    pub fn singular(&self) -> bool {
        self.connection.is_none()
    }
}

/// Connection sampled on a grid; nodes are stored with the second axis
/// varying fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldGrid {
    pub spec: GridSpec,
    pub nodes: Vec<FieldNode>,
}

impl FieldGrid {
    pub fn node(&self, i: usize, j: usize) -> &FieldNode {
        &self.nodes[self.spec.index(i, j)]
    }

    /// Builds a field from a closure, mostly for synthetic tests.
    pub fn from_fn<F>(spec: GridSpec, f: F) -> Result<FieldGrid>
    where
        F: Fn(&Shape) -> ConnectionMatrix,
    {
        spec.validate()?;
        let nodes = grid_indices(&spec)
            .map(|(i, j)| {
                let shape = spec.shape(i, j);
                let a = f(&shape);
                FieldNode {
                    shape,
                    connection: Some(a),
                    contacts: None,
                }
            })
            .collect();
        Ok(FieldGrid { spec, nodes })
    }
}

fn grid_indices(spec: &GridSpec) -> impl Iterator<Item = (usize, usize)> {
    let n2 = spec.axes[1].count;
    (0..spec.node_count()).map(move |k| (k / n2, k % n2))
}

/// Evaluates the provider at every grid node. Singular constraint solves are
/// recorded as flagged nodes; other errors abort.
pub fn sample_field(provider: &ConnectionProvider, spec: &GridSpec) -> Result<FieldGrid> {
    spec.validate()?;
    if spec.dim() != provider.dim() {
        return Err(Error::DimensionMismatch {
            expected: provider.dim(),
            found: spec.dim(),
        });
    }
    let nodes = (0..spec.node_count())
        .into_par_iter()
        .map(|k| {
            let n2 = spec.axes[1].count;
            let shape = spec.shape(k / n2, k % n2);
            let contacts = provider.contact_set(&shape)?;
            let connection = match provider.eval_piece(&shape, contacts.as_ref()) {
                Ok(a) => Some(a),
                Err(Error::SingularConstraint { .. }) => None,
                Err(e) => return Err(e),
            };
            Ok(FieldNode {
                shape,
                connection,
                contacts,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FieldGrid {
        spec: spec.clone(),
        nodes,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StencilStatus {
    /// Central differences on both axes.
    Interior,
    /// At least one axis used a one-sided difference.
    LowerOrder,
    /// The stencil touches a node with a different contact set.
    Straddling,
    /// The stencil touches a singular node.
    Singular,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurvatureField {
    pub spec: GridSpec,
    /// `None` where the status is `Straddling` or `Singular`.
    pub values: Vec<Option<Twist>>,
    pub status: Vec<StencilStatus>,
}

impl CurvatureField {
    pub fn status(&self, i: usize, j: usize) -> StencilStatus {
        self.status[self.spec.index(i, j)]
    }

    pub fn value(&self, i: usize, j: usize) -> Result<Twist> {
        self.values[self.spec.index(i, j)].ok_or(Error::SingularStencil { i, j })
    }
}

/// Finite-difference curvature of a 2-dof field.
pub fn curvature(field: &FieldGrid) -> Result<CurvatureField> {
    let spec = &field.spec;
    if spec.dim() != 2 {
        return Err(Error::InvalidGrid(format!(
            "curvature needs a 2-dof shape space, got {}",
            spec.dim()
        )));
    }
    let [n1, n2] = [spec.axes[0].count, spec.axes[1].count];
    if n1 < 3 || n2 < 3 {
        return Err(Error::InvalidGrid("curvature needs at least 3 nodes per axis".into()));
    }
    let [h1, h2] = [spec.axes[0].spacing(), spec.axes[1].spacing()];

    // Stencil along one axis: (lower, upper, spacing multiple, one-sided).
    let stencil = |k: usize, n: usize| -> (usize, usize, f64, bool) {
        if k == 0 {
            (0, 1, 1.0, true)
        } else if k + 1 == n {
            (n - 2, n - 1, 1.0, true)
        } else {
            (k - 1, k + 1, 2.0, false)
        }
    };

    let mut values = Vec::with_capacity(field.nodes.len());
    let mut status = Vec::with_capacity(field.nodes.len());
    for (i, j) in grid_indices(spec) {
        let centre = field.node(i, j);
        let (a, b, s1, one1) = stencil(i, n1);
        let (c, d, s2, one2) = stencil(j, n2);
        let used = [centre, field.node(a, j), field.node(b, j), field.node(i, c), field.node(i, d)];
        if used.iter().any(|n| n.singular()) {
            values.push(None);
            status.push(StencilStatus::Singular);
            continue;
        }
        if used.iter().any(|n| n.contacts != centre.contacts) {
            values.push(None);
            status.push(StencilStatus::Straddling);
            continue;
        }
        let col = |n: &FieldNode, k: usize| n.connection.as_ref().expect("checked").column(k);
        let d_a2_d1 = (col(field.node(b, j), 1) - col(field.node(a, j), 1)) * (1.0 / (s1 * h1));
        let d_a1_d2 = (col(field.node(i, d), 0) - col(field.node(i, c), 0)) * (1.0 / (s2 * h2));
        let bracket = col(centre, 0).bracket(&col(centre, 1));
        values.push(Some(d_a2_d1 - d_a1_d2 + bracket));
        status.push(if one1 || one2 {
            StencilStatus::LowerOrder
        } else {
            StencilStatus::Interior
        });
    }
    Ok(CurvatureField {
        spec: spec.clone(),
        values,
        status,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HolonomyReport {
    /// Net displacement from integrating one cycle.
    pub displacement: Twist,
    /// Curvature integrated over the region the loop encloses, weighted by
    /// winding number.
    pub area_integral: Twist,
    pub gap: Twist,
    /// `‖gap‖ / ‖displacement‖` (0 when both vanish).
    pub relative_gap: f64,
    pub note: String,
}

/// Number of loop samples used for the boundary integral.
const LOOP_SAMPLES: usize = 4000;

/// Compares one cycle's displacement with the curvature integral over the
/// enclosed region. Only the translational part agrees exactly in the limit;
/// rotation couples the components at higher order.
pub fn holonomy_vs_area(
    provider: &ConnectionProvider,
    gait: &Gait,
    field: &CurvatureField,
    settings: &IntegratorSettings,
) -> Result<HolonomyReport> {
    let spec = &field.spec;
    if spec.dim() != 2 || gait.dim() != 2 {
        return Err(Error::DimensionMismatch {
            expected: 2,
            found: gait.dim(),
        });
    }
    let period = gait.period();
    let loop_pts: Vec<[f64; 2]> = (0..=LOOP_SAMPLES)
        .map(|k| {
            let r = gait.shape_at(period * k as f64 / LOOP_SAMPLES as f64);
            [r[0], r[1]]
        })
        .collect();
    for p in &loop_pts {
        if !spec.axes[0].contains(p[0]) || !spec.axes[1].contains(p[1]) {
            return Err(Error::LoopOutsideGrid { r1: p[0], r2: p[1] });
        }
    }

    let area_integral = boundary_integral(field, &loop_pts)?;
    let traj = integrate_gait(
        provider,
        gait,
        &IntegratorSettings {
            cycles: 1,
            ..*settings
        },
    )?;
    let displacement = net_displacement(&traj)?.total;
    let gap = displacement - area_integral;
    let scale = displacement.norm();
    let relative_gap = if scale == 0.0 {
        if gap.norm() == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        gap.norm() / scale
    };
    Ok(HolonomyReport {
        displacement,
        area_integral,
        gap,
        relative_gap,
        note: "agreement is exact only for commuting components; the gap is not expected to vanish".into(),
    })
}

/// `∬ D dr₁dr₂ = ∮ Φ dr₂` with `Φ(r₁, r₂) = ∫_c^{r₁} D(s, r₂) ds` and `D`
/// bilinearly interpolated between nodes.
fn boundary_integral(field: &CurvatureField, pts: &[[f64; 2]]) -> Result<Twist> {
    let spec = &field.spec;
    let [ax1, ax2] = spec.axes;
    let (h1, h2) = (ax1.spacing(), ax2.spacing());
    let cell = |x: f64, ax: &Axis| -> usize {
        (((x - ax.min) / ax.spacing()).floor().max(0.0) as usize).min(ax.count - 2)
    };

    let (lo1, hi1) = pts
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p[0]), b.max(p[0])));
    let (lo2, hi2) = pts
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p[1]), b.max(p[1])));
    let (i0, i1) = (cell(lo1, &ax1), cell(hi1, &ax1) + 1);
    let (j0, j1) = (cell(lo2, &ax2), cell(hi2, &ax2) + 1);
    for i in i0..=i1 {
        for j in j0..=j1 {
            field.value(i, j)?;
        }
    }
    let d = |i: usize, j: usize| field.values[spec.index(i, j)].expect("checked");

    // Cumulative row integrals from column i0 at each node.
    let n1 = i1 - i0 + 1;
    let mut cumulative = vec![Twist::zero(); n1 * (j1 - j0 + 1)];
    for j in j0..=j1 {
        let row = (j - j0) * n1;
        for i in i0 + 1..=i1 {
            cumulative[row + i - i0] = cumulative[row + i - i0 - 1] + (d(i - 1, j) + d(i, j)) * (0.5 * h1);
        }
    }
    let row_integral = |x: f64, j: usize| -> Twist {
        let k = cell(x, &ax1).clamp(i0, i1 - 1);
        let s = x - ax1.value(k);
        let (dk, dk1) = (d(k, j), d(k + 1, j));
        cumulative[(j - j0) * n1 + k - i0] + dk * s + (dk1 - dk) * (0.5 * s * s / h1)
    };
    let phi = |p: &[f64; 2]| -> Twist {
        let j = cell(p[1], &ax2).clamp(j0, j1 - 1);
        let w = (p[1] - ax2.value(j)) / h2;
        row_integral(p[0], j) * (1.0 - w) + row_integral(p[0], j + 1) * w
    };

    let mut total = Twist::zero();
    let mut prev = phi(&pts[0]);
    for k in 1..pts.len() {
        let next = phi(&pts[k]);
        total += (prev + next) * (0.5 * (pts[k][1] - pts[k - 1][1]));
        prev = next;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::connection::ConstraintSystem;
    use crate::connection::ConstraintBuilder;
    use crate::models::{DragModel, LeggedModel};
    use nalgebra::{Matrix3, Matrix3xX};
    use std::f64::consts::FRAC_PI_2;

    /// `M = −I` makes the connection equal to `N`.
    struct Synthetic<F>(F);

    impl<F: Fn(&Shape) -> ConnectionMatrix + Send + Sync> ConstraintBuilder for Synthetic<F> {
        fn dim(&self) -> usize {
            2
        }
        fn build(&self, r: &Shape, _: Option<&ContactSet>) -> Result<ConstraintSystem> {
            Ok(ConstraintSystem {
                m: -Matrix3::identity(),
                n: (self.0)(r).0,
            })
        }
    }

    #[test]
    fn constant_provider_gives_constant_field() {
        let a = ConnectionMatrix::from_row_slice(2, &[1.0, 2.0, 0.0, -1.0, 0.5, 0.25]).unwrap();
        let field = sample_field(&ConnectionProvider::Constant(a.clone()), &GridSpec::square(2, -1.0, 1.0, 5)).unwrap();
        assert!(field.nodes.iter().all(|n| n.connection.as_ref() == Some(&a)));
    }

    #[test]
    fn crawler_contacts_split_on_diagonal() {
        let model = LeggedModel::crawler();
        let field = sample_field(&ConnectionProvider::piecewise(model), &GridSpec::square(2, -1.0, 1.0, 9)).unwrap();
        for n in &field.nodes {
            let (r1, r2) = (n.shape[0], n.shape[1]);
            let c = n.contacts.unwrap();
            if r1 > r2 {
                assert_eq!(c, ContactSet::single(0));
            } else if r2 > r1 {
                assert_eq!(c, ContactSet::single(1));
            }
        }
        let curv = curvature(&field).unwrap();
        assert_eq!(curv.status(3, 4), StencilStatus::Straddling);
        assert!(matches!(curv.value(3, 4), Err(Error::SingularStencil { i: 3, j: 4 })));
    }

    #[test]
    fn swimmer_field_matches_direct_evaluation() {
        let provider = ConnectionProvider::constraint(DragModel::purcell());
        let spec = GridSpec::square(2, -1.5, 1.5, 33);
        let field = sample_field(&provider, &spec).unwrap();
        assert_eq!(field.nodes.len(), 1089);
        for k in 0..20 {
            let (i, j) = ((k * 7 + 3) % 33, (k * 13 + 5) % 33);
            let direct = provider.eval(&spec.shape(i, j)).unwrap().1;
            assert_eq!(field.node(i, j).connection.as_ref(), Some(&direct));
        }
    }

    #[test]
    fn singular_nodes_are_flagged() {
        struct Pinch;
        impl ConstraintBuilder for Pinch {
            fn dim(&self) -> usize {
                2
            }
            fn build(&self, r: &Shape, _: Option<&ContactSet>) -> Result<ConstraintSystem> {
                let s = if r[0].abs() < 1e-12 { 0.0 } else { 1.0 };
                Ok(ConstraintSystem {
                    m: -Matrix3::identity() * s,
                    n: Matrix3xX::from_element(2, 1.0),
                })
            }
        }
        let field = sample_field(&ConnectionProvider::constraint(Pinch), &GridSpec::square(2, -1.0, 1.0, 5)).unwrap();
        assert!(field.node(2, 0).singular());
        assert!(!field.node(1, 0).singular());
        let curv = curvature(&field).unwrap();
        assert_eq!(curv.status(1, 2), StencilStatus::Singular);
        assert_eq!(curv.status(0, 2), StencilStatus::LowerOrder);
    }

    #[test]
    fn commuting_constant_columns_have_no_curvature() {
        let a = ConnectionMatrix::from_columns(&[Twist::new(1.0, 0.0, 0.0), Twist::new(0.0, 1.0, 0.0)]);
        let field = FieldGrid::from_fn(GridSpec::square(2, -1.0, 1.0, 5), |_| a.clone()).unwrap();
        let curv = curvature(&field).unwrap();
        assert!(curv.values.iter().all(|v| v.unwrap() == Twist::zero()));
    }

    #[test]
    fn constant_noncommuting_columns_match_commutator() {
        let (a1, a2) = (Twist::new(1.0, 0.0, 0.0), Twist::new(0.0, 0.0, 1.0));
        let a = ConnectionMatrix::from_columns(&[a1, a2]);
        let field = FieldGrid::from_fn(GridSpec::square(2, -1.0, 1.0, 5), |_| a.clone()).unwrap();
        let d = curvature(&field).unwrap().value(2, 2).unwrap();
        let comm = a1.hat() * a2.hat() - a2.hat() * a1.hat();
        let oracle = Twist::new(comm[(0, 2)], comm[(1, 2)], comm[(1, 0)]);
        assert_eq!(d, oracle);
        assert_eq!(d, Twist::new(0.0, -1.0, 0.0));
    }

    #[test]
    fn curl_of_synthetic_field() {
        let a = |r: &Shape| ConnectionMatrix::from_columns(&[Twist::new(r[1], 0.0, 0.0), Twist::zero()]);
        let field = FieldGrid::from_fn(GridSpec::square(2, -1.0, 1.0, 11), a).unwrap();
        let curv = curvature(&field).unwrap();
        let h = 0.2;
        for (k, v) in curv.values.iter().enumerate() {
            if curv.status[k] == StencilStatus::Interior {
                assert!((v.unwrap() - Twist::new(-1.0, 0.0, 0.0)).max_abs() <= h * h);
            }
        }
    }

    #[test]
    fn interior_curvature_is_second_order() {
        // A₁ = (sin r₂, 0, 0), A₂ = (r₁³, r₁r₂, 0): curl = (3r₁² − cos r₂, r₂, 0).
        let a = |r: &Shape| {
            ConnectionMatrix::from_columns(&[
                Twist::new(r[1].sin(), 0.0, 0.0),
                Twist::new(r[0].powi(3), r[0] * r[1], 0.0),
            ])
        };
        let err = |n: usize| {
            let field = FieldGrid::from_fn(GridSpec::square(2, -1.0, 1.0, n), a).unwrap();
            let curv = curvature(&field).unwrap();
            let mid = n / 2 + 1;
            let r = field.node(mid, mid).shape.clone();
            let exact = Twist::new(3.0 * r[0] * r[0] - r[1].cos(), r[1], 0.0);
            (curv.value(mid, mid).unwrap() - exact).max_abs()
        };
        let ratio = err(11) / err(21);
        assert!((ratio - 4.0).abs() < 0.5, "ratio {ratio}");
    }

    #[test]
    fn reciprocal_loop_has_no_holonomy() {
        let provider = ConnectionProvider::constraint(DragModel::purcell());
        let field = sample_field(&provider, &GridSpec::square(2, -1.0, 1.0, 21)).unwrap();
        let curv = curvature(&field).unwrap();
        let gait = Gait::sinusoid(1.0, &[0.0, 0.0], &[0.5, 0.5], &[0.0, 0.0]).unwrap();
        let report = holonomy_vs_area(&provider, &gait, &curv, &IntegratorSettings::with_step(1e-3)).unwrap();
        assert!(report.displacement.norm() < 1e-8);
        assert!(report.area_integral.norm() < 1e-8);
    }

    #[test]
    fn commuting_constant_field_has_no_holonomy() {
        let a = ConnectionMatrix::from_columns(&[Twist::new(1.0, 0.0, 0.0), Twist::new(0.0, 2.0, 0.0)]);
        let provider = ConnectionProvider::Constant(a.clone());
        let field = FieldGrid::from_fn(GridSpec::square(2, -1.0, 1.0, 5), |_| a.clone()).unwrap();
        let curv = curvature(&field).unwrap();
        let gait = Gait::sinusoid(1.0, &[0.0, 0.0], &[0.5, 0.5], &[0.0, FRAC_PI_2]).unwrap();
        let report = holonomy_vs_area(&provider, &gait, &curv, &IntegratorSettings::with_step(1e-2)).unwrap();
        assert!(report.area_integral.norm() == 0.0);
        assert!(report.displacement.norm() < 1e-12);
    }

    #[test]
    fn area_integral_of_synthetic_curl() {
        // Curl is −1 everywhere; a counter-clockwise circle of radius ρ encloses −πρ².
        let provider = ConnectionProvider::constraint(Synthetic(|r: &Shape| {
            ConnectionMatrix::from_columns(&[Twist::new(r[1], 0.0, 0.0), Twist::zero()])
        }));
        let a = |r: &Shape| ConnectionMatrix::from_columns(&[Twist::new(r[1], 0.0, 0.0), Twist::zero()]);
        let field = FieldGrid::from_fn(GridSpec::square(2, -1.0, 1.0, 21), a).unwrap();
        let curv = curvature(&field).unwrap();
        let gait = Gait::sinusoid(1.0, &[0.1, 0.0], &[0.5, 0.5], &[FRAC_PI_2, 0.0]).unwrap();
        let report = holonomy_vs_area(&provider, &gait, &curv, &IntegratorSettings::with_step(1e-3)).unwrap();
        let area = -std::f64::consts::PI * 0.25;
        assert!((report.area_integral.vx - area).abs() < 1e-5, "{:?}", report.area_integral);
        assert!((report.displacement.vx - area).abs() < 1e-8, "{:?}", report.displacement);
    }

    #[test]
    fn loop_outside_grid_is_rejected() {
        let provider = ConnectionProvider::constraint(DragModel::purcell());
        let field = sample_field(&provider, &GridSpec::square(2, -0.5, 0.5, 5)).unwrap();
        let curv = curvature(&field).unwrap();
        let gait = Gait::sinusoid(1.0, &[0.0, 0.0], &[0.8, 0.8], &[0.0, FRAC_PI_2]).unwrap();
        let err = holonomy_vs_area(&provider, &gait, &curv, &IntegratorSettings::default()).unwrap_err();
        assert!(matches!(err, Error::LoopOutsideGrid { .. }));
    }

    #[test]
    fn swimmer_gap_shrinks_with_amplitude() {
        let provider = ConnectionProvider::constraint(DragModel::purcell());
        let field = sample_field(&provider, &GridSpec::square(2, -0.5, 0.5, 161)).unwrap();
        let curv = curvature(&field).unwrap();
        let reports: Vec<HolonomyReport> = [0.4, 0.2, 0.1]
            .iter()
            .map(|&a| {
                let pts = vec![vec![-a, -a], vec![a, -a], vec![a, a], vec![-a, a]];
                let gait = Gait::waypoints(pts, 1.0).unwrap();
                holonomy_vs_area(&provider, &gait, &curv, &IntegratorSettings::with_step(1e-3)).unwrap()
            })
            .collect();
        let gaps: Vec<f64> = reports.iter().map(|r| r.gap.norm()).collect();
        assert!(gaps[0] > gaps[1] && gaps[1] > gaps[2], "{gaps:?}");
        // Leading term scales as a², the gap close to a⁴.
        let slope = (gaps[1] / gaps[2]).log2();
        assert!(slope > 3.0, "slope {slope}");
        assert!(reports[2].relative_gap < reports[0].relative_gap);
    }
}
