use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Polytope;
use crate::linalg::{matrix_from_rows, matrix_to_rows, min_eigenvalue, symmetrize, vector_to_vec};

/// Symmetry tolerance on construction.
pub const SYMMETRY_TOL: f64 = 1e-9;
/// Regularization added to a singular linear map.
pub const MAP_REGULARIZATION: f64 = 1e-9;

/// `{z : (z - p)ᵀ Q (z - p) ≤ 1}` with `Q ≻ 0`, or the single point `{p}`.
///
/// The inverse shape `Q⁻¹` is cached since Minkowski sums and images are
/// naturally expressed in it.
#[derive(Debug, Clone, PartialEq)]
pub struct Ellipsoid {
    center: DVector<f64>,
    shape: Option<Shape>,
}

#[derive(Debug, Clone, PartialEq)]
struct Shape {
    q: DMatrix<f64>,
    q_inv: DMatrix<f64>,
}

#[derive(Serialize, Deserialize)]
struct EllipsoidJson {
    p: Vec<f64>,
    /// `null` for the point variant.
    #[serde(rename = "Q")]
    q: Option<Vec<Vec<f64>>>,
}

impl Serialize for Ellipsoid {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        EllipsoidJson {
            p: vector_to_vec(&self.center),
            q: self.shape.as_ref().map(|sh| matrix_to_rows(&sh.q)),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Ellipsoid {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = EllipsoidJson::deserialize(d)?;
        let n = raw.p.len();
        let center = DVector::from_vec(raw.p);
        match raw.q {
            None => Ok(Ellipsoid::point(center)),
            Some(rows) => {
                let q = matrix_from_rows(&rows, n)
                    .filter(|m| m.nrows() == n)
                    .ok_or_else(|| serde::de::Error::custom("Q must be n × n"))?;
                Ellipsoid::new(center, q).map_err(serde::de::Error::custom)
            }
        }
    }
}

impl Ellipsoid {
    pub fn new(center: DVector<f64>, q: DMatrix<f64>) -> Result<Self> {
        let n = center.len();
        if q.shape() != (n, n) {
            return Err(Error::Dimension(format!(
                "shape matrix is {:?}, center has length {n}",
                q.shape()
            )));
        }
        if (&q - q.transpose()).amax() > SYMMETRY_TOL * q.amax().max(1.0) {
            return Err(Error::InvalidArgument(
                "shape matrix is not symmetric".into(),
            ));
        }
        let q = symmetrize(&q);
        if !(min_eigenvalue(&q) > 0.0) {
            return Err(Error::InvalidArgument(
                "shape matrix is not positive definite".into(),
            ));
        }
        let q_inv = symmetrize(
            &q.clone()
                .try_inverse()
                .ok_or_else(|| Error::InvalidArgument("shape matrix is singular".into()))?,
        );
        Ok(Self {
            center,
            shape: Some(Shape { q, q_inv }),
        })
    }

    /// Builds the ellipsoid from `Q⁻¹` (which must be positive definite).
    pub fn from_inverse_shape(center: DVector<f64>, q_inv: DMatrix<f64>) -> Result<Self> {
        let q_inv = symmetrize(&q_inv);
        if q_inv.shape() != (center.len(), center.len()) {
            return Err(Error::Dimension("inverse shape matrix".into()));
        }
        if !(min_eigenvalue(&q_inv) > 0.0) {
            return Err(Error::InvalidArgument(
                "inverse shape matrix is not positive definite".into(),
            ));
        }
        let q = symmetrize(
            &q_inv
                .clone()
                .try_inverse()
                .ok_or_else(|| Error::InvalidArgument("inverse shape is singular".into()))?,
        );
        Ok(Self {
            center,
            shape: Some(Shape { q, q_inv }),
        })
    }

    pub fn point(center: DVector<f64>) -> Self {
        Self {
            center,
            shape: None,
        }
    }

    /// Euclidean ball; radius 0 gives the point variant.
    pub fn ball(center: DVector<f64>, radius: f64) -> Result<Self> {
        if radius == 0.0 {
            return Ok(Self::point(center));
        }
        if !(radius > 0.0) {
            return Err(Error::InvalidArgument(format!("ball radius {radius}")));
        }
        let n = center.len();
        Self::from_inverse_shape(center, DMatrix::identity(n, n) * radius * radius)
    }

    /// Ellipsoid through the corners of the bounding box of `poly`:
    /// semi-axes `√n` times the box half-widths.
    pub fn circumscribing(poly: &Polytope) -> Result<Self> {
        let (lo, hi) = poly.bounding_box()?;
        let n = poly.dim();
        let center = (&lo + &hi) * 0.5;
        let half = (&hi - &lo) * 0.5;
        if half.iter().any(|h| *h <= 0.0) {
            return Err(Error::InvalidArgument(
                "cannot circumscribe a flat polytope".into(),
            ));
        }
        let q_inv = DMatrix::from_diagonal(&half.map(|h| n as f64 * h * h));
        Self::from_inverse_shape(center, q_inv)
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn center(&self) -> &DVector<f64> {
        &self.center
    }

    pub fn is_point(&self) -> bool {
        self.shape.is_none()
    }

    /// `Q`, or `None` for a point.
    pub fn shape(&self) -> Option<&DMatrix<f64>> {
        self.shape.as_ref().map(|s| &s.q)
    }

    /// `Q⁻¹`; the zero matrix for a point.
    pub fn inverse_shape(&self) -> DMatrix<f64> {
        match &self.shape {
            Some(s) => s.q_inv.clone(),
            None => DMatrix::zeros(self.dim(), self.dim()),
        }
    }

    /// `(z - p)ᵀ Q (z - p)`; for a point, 0 at the center and +∞ elsewhere.
    pub fn level(&self, z: &DVector<f64>) -> f64 {
        let dz = z - &self.center;
        match &self.shape {
            Some(s) => dz.dot(&(&s.q * &dz)),
            None if dz.amax() == 0.0 => 0.0,
            None => f64::INFINITY,
        }
    }

    /// Membership allowing `z` to sit up to (roughly) `tol` outside in
    /// Euclidean distance: `√level ≤ 1 + tol·√λ_max(Q)`.
    pub fn contains(&self, z: &DVector<f64>, tol: f64) -> bool {
        match &self.shape {
            Some(_) => self.level(z).sqrt() <= 1.0 + tol * self.max_inverse_axis(),
            None => (z - &self.center).norm() <= tol,
        }
    }

    /// `1 / (shortest semi-axis)`, i.e. `√λ_max(Q)`.
    fn max_inverse_axis(&self) -> f64 {
        match &self.shape {
            Some(s) => crate::linalg::max_eigenvalue(&s.q).sqrt(),
            None => f64::INFINITY,
        }
    }

    /// `trace(Q⁻¹)`, the sum of squared semi-axes.
    pub fn trace_inverse_shape(&self) -> f64 {
        self.shape.as_ref().map_or(0.0, |s| s.q_inv.trace())
    }

    /// Boundary point along a unit-sphere direction `u`: `p + Q^{-1/2} u`.
    pub fn boundary_point(&self, u: &DVector<f64>) -> DVector<f64> {
        match &self.shape {
            Some(s) => {
                let eig = s.q_inv.clone().symmetric_eigen();
                let sqrt = &eig.eigenvectors
                    * DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0).sqrt()))
                    * eig.eigenvectors.transpose();
                &self.center + sqrt * u
            }
            None => self.center.clone(),
        }
    }

    pub fn translate(&self, t: &DVector<f64>) -> Ellipsoid {
        Self {
            center: &self.center + t,
            shape: self.shape.clone(),
        }
    }
}

/// Box aligned with the principal axes of `e` that circumscribes it: for each
/// unit eigenvector `v` of `Q` with eigenvalue `λ`, rows `±vᵀx ≤ ±vᵀp + 1/√λ`.
/// A point becomes a degenerate box.
pub fn ellipsoid_to_polytope(e: &Ellipsoid) -> Polytope {
    let n = e.dim();
    let Some(q) = e.shape() else {
        return Polytope::singleton(e.center());
    };
    let eig = q.clone().symmetric_eigen();
    let mut hmat = DMatrix::zeros(2 * n, n);
    let mut hvec = DVector::zeros(2 * n);
    for j in 0..n {
        let v = eig.eigenvectors.column(j);
        let half = 1.0 / eig.eigenvalues[j].sqrt();
        let vp = v.dot(e.center());
        hmat.row_mut(2 * j).copy_from(&v.transpose());
        hvec[2 * j] = vp + half;
        hmat.row_mut(2 * j + 1).copy_from(&(-v.transpose()));
        hvec[2 * j + 1] = -vp + half;
    }
    Polytope::new(hmat, hvec).expect("finite box")
}

/// Result of [`affine_image_ellipsoid`].
#[derive(Debug, Clone)]
pub struct AffineImage {
    pub ellipsoid: Ellipsoid,
    /// The map was singular and `A + εI` was used instead.
    pub regularized: bool,
}

/// `{A x + b : x ∈ E}` = ellipsoid with center `Ap + b` and inverse shape
/// `A Q⁻¹ Aᵀ`.
pub fn affine_image_ellipsoid(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    e: &Ellipsoid,
) -> Result<AffineImage> {
    let n = e.dim();
    if a.shape() != (n, n) || b.len() != n {
        return Err(Error::Dimension("affine map must be square".into()));
    }
    let center = a * e.center() + b;
    if e.is_point() {
        return Ok(AffineImage {
            ellipsoid: Ellipsoid::point(center),
            regularized: false,
        });
    }
    let q_inv = e.inverse_shape();
    let image = |m: &DMatrix<f64>| {
        Ellipsoid::from_inverse_shape(center.clone(), m * &q_inv * m.transpose())
    };

    let svd = a.clone().svd(false, false);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if smin > 1e-12 * smax.max(1.0) {
        if let Ok(ellipsoid) = image(a) {
            return Ok(AffineImage {
                ellipsoid,
                regularized: false,
            });
        }
    }
    let reg = a + DMatrix::identity(n, n) * MAP_REGULARIZATION;
    let rsvd = reg.clone().svd(false, false);
    if rsvd.singular_values.min() <= 1e-15 * rsvd.singular_values.max().max(1.0) {
        return Err(Error::SingularMap);
    }
    let ellipsoid = image(&reg).map_err(|_| Error::SingularMap)?;
    Ok(AffineImage {
        ellipsoid,
        regularized: true,
    })
}

/// Trace-parameterized outer ellipsoid of `E1 ⊕ E2`: center `p1 + p2`,
/// inverse shape `(1 + 1/β) Q1⁻¹ + (1 + β) Q2⁻¹` with
/// `β = √(tr Q1⁻¹ / tr Q2⁻¹)`.
pub fn minkowski_outer_ellipsoid(e1: &Ellipsoid, e2: &Ellipsoid) -> Result<Ellipsoid> {
    if e1.dim() != e2.dim() {
        return Err(Error::Dimension("Minkowski sum operands".into()));
    }
    if e2.is_point() {
        return Ok(e1.translate(e2.center()));
    }
    if e1.is_point() {
        return Ok(e2.translate(e1.center()));
    }
    let p1 = e1.inverse_shape();
    let p2 = e2.inverse_shape();
    let beta = (p1.trace() / p2.trace()).sqrt();
    let sum = p1 * (1.0 + 1.0 / beta) + p2 * (1.0 + beta);
    Ellipsoid::from_inverse_shape(e1.center() + e2.center(), sum)
}
