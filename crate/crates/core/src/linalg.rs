//! Complex vector and matrix aliases plus a few helpers nalgebra lacks.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

pub type C64 = Complex64;
pub type CVector = DVector<C64>;
pub type CMatrix = DMatrix<C64>;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);

pub fn cvec_zeros(n: usize) -> CVector {
    CVector::from_element(n, ZERO)
}

pub fn cvec_from_fn(n: usize, f: impl FnMut(usize) -> C64) -> CVector {
    let mut f = f;
    CVector::from_fn(n, |i, _| f(i))
}

pub fn norm_sqr(v: &CVector) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum()
}

/// Elementwise product.
pub fn hadamard(a: &CVector, b: &CVector) -> CVector {
    a.component_mul(b)
}

pub fn all_finite_vec(v: &CVector) -> bool {
    v.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

pub fn all_finite_mat(m: &CMatrix) -> bool {
    m.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

pub fn max_abs_diff(a: &CVector, b: &CVector) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

/// Rank-one Hermitian outer product `s sᴴ`.
pub fn outer_herm(s: &CVector) -> CMatrix {
    s * s.adjoint()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dot_is_unconjugated_and_dotc_conjugates() {
        let a = CVector::from_vec(vec![C64::new(0.0, 1.0)]);
        assert_eq!(a.dot(&a), C64::new(-1.0, 0.0));
        assert_eq!(a.dotc(&a), C64::new(1.0, 0.0));
    }

    #[test]
    fn outer_is_hermitian() {
        let s = CVector::from_vec(vec![C64::new(1.0, 2.0), C64::new(-0.5, 0.25)]);
        let m = outer_herm(&s);
        assert!((m.clone() - m.adjoint()).norm() < 1e-15);
        assert!((m[(0, 0)].re - norm_sqr(&s.rows(0, 1).into_owned())).abs() < 1e-15);
    }
}
