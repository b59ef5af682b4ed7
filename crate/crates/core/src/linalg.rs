//! Small fixed-size helpers for trivariate Gaussians.
//!
//! The inference loop evaluates a handful of 3x3 factorizations per point, so
//! these routines are written out by hand rather than going through the
//! generic decompositions.

use nalgebra::{Matrix3, Vector3};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// `ln((2π)^3)`.
pub const LN_2PI_CUBED: f64 = 5.513_631_199_228_036;

/// Lower-triangular Cholesky factor of a symmetric positive-definite 3x3 matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Cholesky3 {
    l00: f64,
    l10: f64,
    l11: f64,
    l20: f64,
    l21: f64,
    l22: f64,
}

impl Cholesky3 {
    /// Factorizes `a` using its lower triangle. Returns `None` when a pivot is
    /// not strictly positive or not finite.
    pub fn new(a: &Mat3) -> Option<Self> {
        let l00 = positive_sqrt(a[(0, 0)])?;
        let l10 = a[(1, 0)] / l00;
        let l20 = a[(2, 0)] / l00;
        let l11 = positive_sqrt(a[(1, 1)] - l10 * l10)?;
        let l21 = (a[(2, 1)] - l20 * l10) / l11;
        let l22 = positive_sqrt(a[(2, 2)] - l20 * l20 - l21 * l21)?;
        Some(Self {
            l00,
            l10,
            l11,
            l20,
            l21,
            l22,
        })
    }

    /// `dᵀ A⁻¹ d`.
    #[inline]
    pub fn mahalanobis_sq(&self, d: &Vec3) -> f64 {
        let y0 = d.x / self.l00;
        let y1 = (d.y - self.l10 * y0) / self.l11;
        let y2 = (d.z - self.l20 * y0 - self.l21 * y1) / self.l22;
        y0 * y0 + y1 * y1 + y2 * y2
    }

    #[inline]
    pub fn ln_det(&self) -> f64 {
        2.0 * (self.l00 * self.l11 * self.l22).ln()
    }

    /// `L z`; maps a standard normal draw onto `N(0, A)`.
    #[inline]
    pub fn mul_lower(&self, z: &Vec3) -> Vec3 {
        Vec3::new(
            self.l00 * z.x,
            self.l10 * z.x + self.l11 * z.y,
            self.l20 * z.x + self.l21 * z.y + self.l22 * z.z,
        )
    }
}

#[inline]
fn positive_sqrt(v: f64) -> Option<f64> {
    if v > 0.0 && v.is_finite() {
        Some(v.sqrt())
    } else {
        None
    }
}

/// Log-density of `N(0, A)` at `d`, given the factor of `A`.
#[inline]
pub fn ln_normal(chol: &Cholesky3, d: &Vec3) -> f64 {
    -0.5 * (LN_2PI_CUBED + chol.ln_det() + chol.mahalanobis_sq(d))
}

/// Symmetric `v vᵀ`.
#[inline]
pub fn outer(v: &Vec3) -> Mat3 {
    v * v.transpose()
}

/// Packs the upper triangle in row order: xx, xy, xz, yy, yz, zz.
pub fn sym_to_array(m: &Mat3) -> [f64; 6] {
    [m[(0, 0)], m[(0, 1)], m[(0, 2)], m[(1, 1)], m[(1, 2)], m[(2, 2)]]
}

pub fn sym_from_array(a: [f64; 6]) -> Mat3 {
    Mat3::new(a[0], a[1], a[2], a[1], a[3], a[4], a[2], a[4], a[5])
}

/// Largest eigenvalue of a symmetric matrix.
pub fn max_eigenvalue(m: &Mat3) -> f64 {
    m.symmetric_eigenvalues().max()
}
