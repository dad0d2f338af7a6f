//! Geometry of the unit hypersphere `S^{d-1}` embedded in `R^d`.
//!
//! All inner products that feed `acos` are clamped to `[-1, 1]`.

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on `|norm - 1|` below which input vectors are silently renormalized.
pub const RENORMALIZE_TOL: f64 = 1e-6;
/// Maximum `|v . base|` accepted for a tangent vector.
pub const TANGENT_TOL: f64 = 1e-9;
const ANTIPODAL_TOL: f64 = 1e-12;
const POLE_TOL: f64 = 1e-9;

/// A point on the unit sphere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct UnitVector(DVector<f64>);

impl UnitVector {
    /// Builds a unit vector. Norms within `1e-12` of one are kept exactly;
    /// larger deviations below [`RENORMALIZE_TOL`] are renormalized.
    pub fn new(coords: DVector<f64>) -> Result<Self> {
        if coords.len() < 2 {
            return Err(Error::DimensionMismatch {
                expected: 2,
                found: coords.len(),
            });
        }
        let norm = coords.norm();
        if !norm.is_finite() || (norm - 1.0).abs() >= RENORMALIZE_TOL {
            return Err(Error::NotUnit(norm));
        }
        if (norm - 1.0).abs() <= 1e-12 {
            return Ok(UnitVector(coords));
        }
        Ok(UnitVector(coords / norm))
    }

    /// Normalizes an arbitrary non-zero vector onto the sphere.
    pub fn normalize(coords: DVector<f64>) -> Result<Self> {
        let norm = coords.norm();
        if !(norm.is_finite() && norm > 0.0) {
            return Err(Error::NotUnit(norm));
        }
        Self::new(coords / norm)
    }

    pub fn from_slice(coords: &[f64]) -> Result<Self> {
        Self::new(DVector::from_column_slice(coords))
    }

    /// Canonical basis vector `e_i` in `R^dim`.
    pub fn basis(dim: usize, i: usize) -> Self {
        let mut v = DVector::zeros(dim);
        v[i] = 1.0;
        UnitVector(v)
    }

    /// Wraps a vector the caller guarantees to be unit norm.
    pub(crate) fn from_unit_unchecked(coords: DVector<f64>) -> Self {
        let norm = coords.norm();
        UnitVector(coords / norm)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn coords(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DVector<f64> {
        self.0
    }

    pub fn dot(&self, other: &UnitVector) -> f64 {
        self.0.dot(&other.0)
    }

    pub fn neg(&self) -> UnitVector {
        UnitVector(-&self.0)
    }
}

impl TryFrom<Vec<f64>> for UnitVector {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        UnitVector::new(DVector::from_vec(v))
    }
}

impl From<UnitVector> for Vec<f64> {
    fn from(u: UnitVector) -> Self {
        u.0.as_slice().to_vec()
    }
}

fn check_dim(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::DimensionMismatch {
            expected: a,
            found: b,
        });
    }
    Ok(())
}

/// Exponential map at `base` applied to the tangent vector `v`.
pub fn exp_map(base: &UnitVector, v: &DVector<f64>) -> Result<UnitVector> {
    check_dim(base.dim(), v.len())?;
    let along = v.dot(base.coords());
    if along.abs() > TANGENT_TOL * v.norm().max(1.0) {
        return Err(Error::NonTangent(along));
    }
    let norm = v.norm();
    if norm >= PI {
        return Err(Error::OutOfInjectivity(norm));
    }
    Ok(exp_map_unchecked(base, v))
}

/// Exponential map without the tangency and injectivity checks; any component
/// of `v` along `base` is discarded first.
pub(crate) fn exp_map_unchecked(base: &UnitVector, v: &DVector<f64>) -> UnitVector {
    let b = base.coords();
    let t = v - b * v.dot(b);
    let norm = t.norm();
    if norm == 0.0 {
        return base.clone();
    }
    UnitVector::from_unit_unchecked(b * norm.cos() + t * (norm.sin() / norm))
}

/// Logarithm map: the tangent vector at `base` pointing to `p` with length
/// equal to their geodesic distance.
pub fn log_map(base: &UnitVector, p: &UnitVector) -> Result<DVector<f64>> {
    check_dim(base.dim(), p.dim())?;
    let c = base.dot(p).clamp(-1.0, 1.0);
    if c <= -1.0 + ANTIPODAL_TOL {
        return Err(Error::AntipodalPoint);
    }
    let b = base.coords();
    let t = p.coords() - b * c;
    let s = t.norm();
    if s == 0.0 {
        return Ok(DVector::zeros(b.len()));
    }
    let theta = s.atan2(c);
    Ok(t * (theta / s))
}

/// Great-circle distance in `[0, π]`.
pub fn geodesic_distance(a: &UnitVector, b: &UnitVector) -> f64 {
    let diff = (a.coords() - b.coords()).norm();
    let sum = (a.coords() + b.coords()).norm();
    2.0 * diff.atan2(sum)
}

/// Rotation by `angle` in the plane spanned by the orthonormal pair `(u, w)`,
/// turning `u` towards `w`; identity on the orthogonal complement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaneRotation {
    u: Vec<f64>,
    w: Vec<f64>,
    angle: f64,
}

impl PlaneRotation {
    pub fn identity(dim: usize) -> Self {
        PlaneRotation {
            u: vec![0.0; dim],
            w: vec![0.0; dim],
            angle: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.u.len()
    }

    pub fn angle(&self) -> f64 {
        self.angle
    }

    fn rotate(&self, x: &DVector<f64>, angle: f64) -> DVector<f64> {
        if angle == 0.0 {
            return x.clone();
        }
        let u = DVector::from_column_slice(&self.u);
        let w = DVector::from_column_slice(&self.w);
        let xu = x.dot(&u);
        let xw = x.dot(&w);
        let (s, c) = angle.sin_cos();
        // In-plane part (xu, xw) rotated by angle; the rest is untouched.
        x + &u * (c * xu - s * xw - xu) + &w * (s * xu + c * xw - xw)
    }

    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        self.rotate(x, self.angle)
    }

    pub fn apply_inverse(&self, x: &DVector<f64>) -> DVector<f64> {
        self.rotate(x, -self.angle)
    }

    /// Dense `d x d` orthogonal matrix with determinant +1.
    pub fn to_matrix(&self) -> DMatrix<f64> {
        let d = self.dim();
        let mut m = DMatrix::zeros(d, d);
        for j in 0..d {
            let mut e = DVector::zeros(d);
            e[j] = 1.0;
            m.set_column(j, &self.apply(&e));
        }
        m
    }
}

/// Minimal rotation carrying `a` onto `b`.
///
/// For antipodal inputs the rotation plane is ambiguous; `plane` then supplies
/// a vector whose component orthogonal to `a` fixes it.
pub fn rotate_a_to_b(
    a: &UnitVector,
    b: &UnitVector,
    plane: Option<&DVector<f64>>,
) -> Result<PlaneRotation> {
    check_dim(a.dim(), b.dim())?;
    let ac = a.coords();
    let c = a.dot(b).clamp(-1.0, 1.0);
    if c <= -1.0 + ANTIPODAL_TOL {
        let p = plane.ok_or(Error::AntipodalAmbiguity)?;
        check_dim(a.dim(), p.len())?;
        let w = p - ac * p.dot(ac);
        let wn = w.norm();
        if wn < 1e-12 {
            return Err(Error::AntipodalAmbiguity);
        }
        return Ok(PlaneRotation {
            u: ac.as_slice().to_vec(),
            w: (w / wn).as_slice().to_vec(),
            angle: PI,
        });
    }
    let w = b.coords() - ac * c;
    let s = w.norm();
    if s < 1e-300 {
        return Ok(PlaneRotation::identity(a.dim()));
    }
    Ok(PlaneRotation {
        u: ac.as_slice().to_vec(),
        w: (w / s).as_slice().to_vec(),
        angle: s.atan2(c),
    })
}

/// A subsphere `{x : d(x, axis) = radius}` with `0 < radius <= π/2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subsphere {
    pub axis: UnitVector,
    pub radius: f64,
}

impl Subsphere {
    pub fn new(axis: UnitVector, radius: f64) -> Result<Self> {
        if !(radius > 0.0 && radius <= FRAC_PI_2 + 1e-15) {
            return Err(Error::InvalidConfig(format!(
                "subsphere radius {radius} outside (0, π/2]"
            )));
        }
        Ok(Subsphere {
            axis,
            radius: radius.min(FRAC_PI_2),
        })
    }

    pub fn is_great(&self) -> bool {
        (self.radius - FRAC_PI_2).abs() < 1e-12
    }
}

/// Closest point to `p` on the subsphere `s`, measured along the great circle
/// through `p` and the axis.
pub fn project_to_subsphere(p: &UnitVector, s: &Subsphere) -> Result<UnitVector> {
    check_dim(p.dim(), s.axis.dim())?;
    let rho = geodesic_distance(p, &s.axis);
    if rho < POLE_TOL || PI - rho < POLE_TOL {
        return Err(Error::PoleDegenerate);
    }
    let v = s.axis.coords();
    let x = (p.coords() * s.radius.sin() + v * (rho - s.radius).sin()) / rho.sin();
    Ok(UnitVector::from_unit_unchecked(x))
}

/// Like [`project_to_subsphere`], but points at a pole of the axis are sent to
/// the deterministic point returned by [`pole_tiebreak_point`].
pub fn project_to_subsphere_or_tiebreak(p: &UnitVector, s: &Subsphere) -> Result<UnitVector> {
    match project_to_subsphere(p, s) {
        Err(Error::PoleDegenerate) => Ok(pole_tiebreak_point(s)),
        other => other,
    }
}

/// Unit tangent direction at `axis` obtained from the first canonical basis
/// vector with a non-negligible tangent component.
pub fn pole_tiebreak_direction(axis: &UnitVector) -> DVector<f64> {
    let v = axis.coords();
    for i in 0..v.len() {
        let mut t = -v * v[i];
        t[i] += 1.0;
        let n = t.norm();
        if n > 1e-6 {
            return t / n;
        }
    }
    unreachable!("a unit vector in dimension >= 2 has a non-parallel basis vector")
}

/// Tie-break projection for points at a pole: step from the axis by the radius
/// along [`pole_tiebreak_direction`].
pub fn pole_tiebreak_point(s: &Subsphere) -> UnitVector {
    let t = pole_tiebreak_direction(&s.axis);
    UnitVector::from_unit_unchecked(s.axis.coords() * s.radius.cos() + t * s.radius.sin())
}

/// `d(p, axis) - radius`: positive outside the subsphere (away from the axis).
pub fn signed_residual(p: &UnitVector, s: &Subsphere) -> f64 {
    geodesic_distance(p, &s.axis) - s.radius
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;
    use std::f64::consts::{FRAC_PI_4, SQRT_2};

    fn uv(c: &[f64]) -> UnitVector {
        UnitVector::from_slice(c).unwrap()
    }

    fn dv(c: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(c)
    }

    fn close(a: &DVector<f64>, b: &[f64], tol: f64) -> bool {
        (a - dv(b)).amax() <= tol
    }

    fn random_unit(rng: &mut impl Rng, d: usize) -> UnitVector {
        let v = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        UnitVector::normalize(v).unwrap()
    }

    #[test]
    fn exp_map_examples() {
        let north = uv(&[0.0, 0.0, 1.0]);
        let p = exp_map(&north, &dv(&[FRAC_PI_2, 0.0, 0.0])).unwrap();
        assert!(close(p.coords(), &[1.0, 0.0, 0.0], 1e-15));
        let p = exp_map(&north, &dv(&[0.0, 0.0, 0.0])).unwrap();
        assert_eq!(p, north);
        let p = exp_map(&north, &dv(&[FRAC_PI_4, 0.0, 0.0])).unwrap();
        assert!(close(p.coords(), &[SQRT_2 / 2.0, 0.0, SQRT_2 / 2.0], 1e-15));
    }

    #[test]
    fn exp_map_errors() {
        let north = uv(&[0.0, 0.0, 1.0]);
        assert!(matches!(
            exp_map(&north, &dv(&[0.1, 0.0, 0.2])),
            Err(Error::NonTangent(_))
        ));
        assert!(matches!(
            exp_map(&north, &dv(&[PI, 0.0, 0.0])),
            Err(Error::OutOfInjectivity(_))
        ));
    }

    #[test]
    fn log_map_examples() {
        let north = uv(&[0.0, 0.0, 1.0]);
        let v = log_map(&north, &uv(&[1.0, 0.0, 0.0])).unwrap();
        assert!(close(&v, &[FRAC_PI_2, 0.0, 0.0], 1e-15));
        let v = log_map(&north, &north).unwrap();
        assert!(close(&v, &[0.0, 0.0, 0.0], 0.0));
        let v = log_map(&north, &uv(&[0.0, SQRT_2 / 2.0, SQRT_2 / 2.0])).unwrap();
        assert!(close(&v, &[0.0, FRAC_PI_4, 0.0], 1e-15));
        assert!(matches!(
            log_map(&north, &north.neg()),
            Err(Error::AntipodalPoint)
        ));
    }

    #[test]
    fn geodesic_distance_examples() {
        let x = uv(&[1.0, 0.0, 0.0]);
        assert!((geodesic_distance(&x, &uv(&[0.0, 1.0, 0.0])) - FRAC_PI_2).abs() < 1e-15);
        assert_eq!(geodesic_distance(&x, &x), 0.0);
        assert!((geodesic_distance(&x, &x.neg()) - PI).abs() < 1e-15);
    }

    #[test]
    fn rotation_examples() {
        let north = uv(&[0.0, 0.0, 1.0]);
        let r = rotate_a_to_b(&north, &north, None).unwrap();
        assert!((r.to_matrix() - DMatrix::identity(3, 3)).amax() < 1e-15);

        let x = uv(&[1.0, 0.0, 0.0]);
        let r = rotate_a_to_b(&north, &x, None).unwrap().to_matrix();
        let expected = DMatrix::from_row_slice(3, 3, &[0.0, 0.0, 1.0, 0.0, 1.0, 0.0, -1.0, 0.0, 0.0]);
        assert!((r - expected).amax() < 1e-15);

        assert!(matches!(
            rotate_a_to_b(&north, &north.neg(), None),
            Err(Error::AntipodalAmbiguity)
        ));
        let r = rotate_a_to_b(&north, &north.neg(), Some(&dv(&[1.0, 0.0, 0.0]))).unwrap();
        assert!(close(&r.apply(north.coords()), &[0.0, 0.0, -1.0], 1e-15));
    }

    #[test]
    fn rotation_random_s4_is_special_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let a = random_unit(&mut rng, 5);
            let b = random_unit(&mut rng, 5);
            let r = rotate_a_to_b(&a, &b, None).unwrap();
            let m = r.to_matrix();
            assert!((&m * a.coords() - b.coords()).amax() < 1e-10);
            assert!((m.transpose() * &m - DMatrix::identity(5, 5)).amax() < 1e-10);
            assert!((m.determinant() - 1.0).abs() < 1e-10);
            // identity on the complement of span{a, b}
            let mut z = DVector::from_fn(5, |_, _| rng.sample::<f64, _>(StandardNormal));
            let basis = DMatrix::from_columns(&[a.coords().clone(), b.coords().clone()]);
            let q = basis.qr().q();
            z -= &q * (q.transpose() * &z);
            assert!((&m * &z - &z).amax() < 1e-10);
        }
    }

    #[test]
    fn projection_examples() {
        let s = Subsphere::new(uv(&[0.0, 0.0, 1.0]), FRAC_PI_4).unwrap();
        let p = project_to_subsphere(&uv(&[1.0, 0.0, 0.0]), &s).unwrap();
        assert!(close(p.coords(), &[SQRT_2 / 2.0, 0.0, SQRT_2 / 2.0], 1e-15));
        let q = project_to_subsphere(&p, &s).unwrap();
        assert!(close(q.coords(), p.coords().as_slice(), 1e-15));

        let great = Subsphere::new(uv(&[0.0, 0.0, 1.0]), FRAC_PI_2).unwrap();
        let p = project_to_subsphere(&uv(&[0.0, 1.0, 0.0]), &great).unwrap();
        assert!(close(p.coords(), &[0.0, 1.0, 0.0], 1e-15));

        assert!(matches!(
            project_to_subsphere(&uv(&[0.0, 0.0, 1.0]), &s),
            Err(Error::PoleDegenerate)
        ));
        let t = project_to_subsphere_or_tiebreak(&uv(&[0.0, 0.0, -1.0]), &s).unwrap();
        assert!(close(t.coords(), &[SQRT_2 / 2.0, 0.0, SQRT_2 / 2.0], 1e-15));
    }

    #[test]
    fn residual_examples() {
        let s = Subsphere::new(uv(&[0.0, 0.0, 1.0]), FRAC_PI_4).unwrap();
        assert!((signed_residual(&uv(&[1.0, 0.0, 0.0]), &s) - FRAC_PI_4).abs() < 1e-15);
        let on = uv(&[SQRT_2 / 2.0, 0.0, SQRT_2 / 2.0]);
        assert!(signed_residual(&on, &s).abs() < 1e-15);
        assert!((signed_residual(&uv(&[0.0, 0.0, 1.0]), &s) + FRAC_PI_4).abs() < 1e-15);
    }

    #[test]
    fn unit_vector_constructor_policy() {
        let v = UnitVector::from_slice(&[1.0 + 5e-7, 0.0]).unwrap();
        assert_eq!(v.coords()[0], 1.0);
        assert!(matches!(
            UnitVector::from_slice(&[1.1, 0.0]),
            Err(Error::NotUnit(_))
        ));
        assert!(UnitVector::from_slice(&[1.0]).is_err());
    }

    #[test]
    fn projection_is_optimal_among_subsphere_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let d = rng.random_range(3..7);
            let p = random_unit(&mut rng, d);
            let axis = random_unit(&mut rng, d);
            let r = rng.random_range(0.05..FRAC_PI_2);
            let s = Subsphere::new(axis.clone(), r).unwrap();
            let res = signed_residual(&p, &s).abs();
            let proj = project_to_subsphere(&p, &s).unwrap();
            assert!((geodesic_distance(&proj, &p) - res).abs() < 1e-10);
            for _ in 0..50 {
                // random point on the subsphere
                let t = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
                let t = &t - axis.coords() * t.dot(axis.coords());
                let q = UnitVector::normalize(axis.coords() * r.cos() + t.normalize() * r.sin()).unwrap();
                assert!(res <= geodesic_distance(&p, &q) + 1e-12);
            }
        }
    }

    #[test]
    fn distance_is_never_nan() {
        let a = uv(&[1.0, 1e-17]);
        let b = UnitVector::from_unit_unchecked(dv(&[1.0 + 1e-16, 0.0]));
        assert!(!geodesic_distance(&a, &b).is_nan());
        assert!(!geodesic_distance(&a, &a.neg()).is_nan());
    }

    proptest! {
        #[test]
        fn log_inverts_exp(seed in any::<u64>(), d in 2usize..8, len in 1e-6f64..(PI - 0.01)) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let b = random_unit(&mut rng, d);
            let t = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
            let t = &t - b.coords() * t.dot(b.coords());
            prop_assume!(t.norm() > 1e-8);
            let v = t.normalize() * len;
            let p = exp_map(&b, &v).unwrap();
            let back = log_map(&b, &p).unwrap();
            prop_assert!((back - &v).amax() < 1e-9);
            prop_assert!((geodesic_distance(&b, &p) - len).abs() < 1e-9);
        }

        #[test]
        fn rotations_are_isometries(seed in any::<u64>(), d in 2usize..8) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (a, b, x, y) = (
                random_unit(&mut rng, d),
                random_unit(&mut rng, d),
                random_unit(&mut rng, d),
                random_unit(&mut rng, d),
            );
            let r = rotate_a_to_b(&a, &b, None).unwrap();
            let rx = UnitVector::from_unit_unchecked(r.apply(x.coords()));
            let ry = UnitVector::from_unit_unchecked(r.apply(y.coords()));
            prop_assert!((geodesic_distance(&rx, &ry) - geodesic_distance(&x, &y)).abs() < 1e-10);
        }
    }
}
