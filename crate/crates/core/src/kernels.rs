//! Small convex solvers: a power-ball constrained quadratic, a boxed scalar
//! quadratic, Euclidean projections, and a monotone projected-gradient ascent.

use nalgebra::{DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::linalg::{CMatrix, CVector, C64};

/// Solution of [`min_quadratic_ball`] with its multiplier.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadBallSolution {
    pub x: CVector,
    /// Multiplier of the power constraint; zero for an interior optimum.
    pub lambda: f64,
}

/// `argmin xᴴAx − 2Re(bᴴx)` subject to `‖x‖² ≤ p`, for Hermitian PSD `A`.
///
/// The unconstrained minimizer (pseudo-inverse) is returned when it exists and
/// is feasible. Otherwise `λ` in `x(λ) = (A + λI)⁻¹ b` is bisected on
/// `[0, ‖b‖/√p]` until `‖x‖² = p` to 1e-10 relative.
pub fn min_quadratic_ball(a: &CMatrix, b: &CVector, p: f64) -> Result<QuadBallSolution> {
    let n = b.len();
    if a.shape() != (n, n) {
        return Err(Error::Shape(format!("A is {:?}, b has length {n}", a.shape())));
    }
    if !(p.is_finite() && p > 0.0) {
        return Err(Error::Domain(format!("power budget must be > 0, got {p}")));
    }
    let scale = a.norm().max(f64::MIN_POSITIVE);
    if (a - a.adjoint()).norm() > 1e-10 * scale {
        return Err(Error::Kernel("quadratic form is not Hermitian".into()));
    }
    let b_norm = b.norm();
    if b_norm == 0.0 {
        return Ok(QuadBallSolution { x: CVector::zeros(n), lambda: 0.0 });
    }
    let herm = (a + a.adjoint()) * C64::from(0.5);
    let eig = SymmetricEigen::new(herm);
    let lam: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    let lam_max = lam.iter().copied().fold(0.0, f64::max);
    let tol = 1e-12 * lam_max.max(f64::MIN_POSITIVE);
    if lam.iter().any(|&l| l < -1e-9 * lam_max.max(1e-300)) {
        return Err(Error::Kernel("quadratic form is not positive semidefinite".into()));
    }
    let v = &eig.eigenvectors;
    let c = v.ad_mul(b);
    let build = |shift: f64| -> CVector {
        let mut coeffs = CVector::zeros(n);
        for i in 0..n {
            let d = lam[i].max(0.0) + shift;
            if d > tol {
                coeffs[i] = c[i] / d;
            }
        }
        v * coeffs
    };

    let unbounded = (0..n).any(|i| lam[i] <= tol && c[i].norm() > 1e-12 * b_norm);
    if !unbounded {
        let x = build(0.0);
        if x.norm_squared() <= p {
            return Ok(QuadBallSolution { x, lambda: 0.0 });
        }
    }

    let norm2 = |shift: f64| -> f64 {
        (0..n)
            .map(|i| {
                let d = lam[i].max(0.0) + shift;
                if d > 0.0 {
                    c[i].norm_sqr() / (d * d)
                } else {
                    f64::INFINITY
                }
            })
            .sum()
    };
    let mut lo = 0.0;
    let mut hi = b_norm / p.sqrt();
    if norm2(hi) > p * (1.0 + 1e-10) {
        return Err(Error::Kernel("multiplier bracket failed; quadratic form is not PSD".into()));
    }
    for _ in 0..300 {
        let mid = 0.5 * (lo + hi);
        let r = norm2(mid);
        if (r - p).abs() <= 1e-10 * p {
            hi = mid;
            break;
        }
        if r > p {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= f64::EPSILON * hi {
            break;
        }
    }
    let lambda = hi;
    let mut x = build(lambda);
    let nx = x.norm_squared();
    if nx > p {
        x *= C64::from((p / nx).sqrt());
    }
    Ok(QuadBallSolution { x, lambda })
}

/// Minimizer of `a·p² − 2b·p` on `[0, √p_max]`.
pub fn min_scalar_quadratic_box(a: f64, b: f64, p_max: f64) -> Result<f64> {
    if !(a.is_finite() && a > 0.0) {
        return Err(Error::Kernel(format!("scalar quadratic needs a > 0, got {a}")));
    }
    if !(p_max.is_finite() && p_max > 0.0) {
        return Err(Error::Domain(format!("power bound must be > 0, got {p_max}")));
    }
    Ok((b / a).clamp(0.0, p_max.sqrt()))
}

/// Radial projection onto `|t|² + |r|² ≤ 1`.
pub fn project_pair_ball(t: C64, r: C64) -> (C64, C64) {
    let n = (t.norm_sqr() + r.norm_sqr()).sqrt();
    if n <= 1.0 {
        (t, r)
    } else {
        (t / n, r / n)
    }
}

/// Radial projection onto the closed unit disc.
pub fn project_unit_disc(z: C64) -> C64 {
    let n = z.norm();
    if n <= 1.0 {
        z
    } else {
        z / n
    }
}

/// Nearest point of the circle `|z| = radius`; the origin maps to `radius`.
pub fn project_fixed_modulus(z: C64, radius: f64) -> C64 {
    let n = z.norm();
    if n == 0.0 {
        C64::new(radius, 0.0)
    } else {
        z * (radius / n)
    }
}

/// Euclidean projection of one element's `(q_t, q_r, φ_t, φ_r)` onto
/// `{|q_t| ≤ φ_t, |q_r| ≤ φ_r, φ_t² + φ_r² ≤ 1}`.
///
/// Phases of `q` are kept; the magnitudes solve a two-side problem coupled by
/// one ball multiplier `ν`, found by bisection.
pub fn project_ms_element(q_t: C64, q_r: C64, phi_t: f64, phi_r: f64) -> (C64, C64, f64, f64) {
    let side = |a0: f64, p0: f64, nu: f64| -> (f64, f64) {
        let interior = p0 / (1.0 + nu);
        if a0 <= interior {
            (a0, interior)
        } else {
            let t = ((a0 + p0) / (2.0 + nu)).max(0.0);
            (t, t)
        }
    };
    let (at0, ar0) = (q_t.norm(), q_r.norm());
    let solve = |nu: f64| {
        let (at, pt) = side(at0, phi_t, nu);
        let (ar, pr) = side(ar0, phi_r, nu);
        (at, pt, ar, pr)
    };
    let excess = |s: (f64, f64, f64, f64)| s.1 * s.1 + s.3 * s.3 - 1.0;
    let mut sol = solve(0.0);
    if excess(sol) > 0.0 {
        let mut lo = 0.0;
        let mut hi = 1.0;
        while excess(solve(hi)) > 0.0 {
            hi *= 2.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if excess(solve(mid)) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-15 * hi {
                break;
            }
        }
        sol = solve(hi);
    }
    let (at, pt, ar, pr) = sol;
    let rescale = |q: C64, a0: f64, a: f64| if a0 > 0.0 { q * (a / a0) } else { C64::new(0.0, 0.0) };
    (rescale(q_t, at0, at), rescale(q_r, ar0, ar), pt, pr)
}

/// Outcome flag of an iterative solver.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Converged,
    CapReached,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PgaOptions {
    /// Stop once the relative objective increase of an accepted step is below this.
    pub tol: f64,
    pub max_iter: usize,
    pub initial_step: f64,
}

impl Default for PgaOptions {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter: 20000, initial_step: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PgaResult {
    pub x: DVector<f64>,
    pub value: f64,
    pub iterations: usize,
    pub status: SolveStatus,
    /// Objective after each accepted step, starting with the projected start.
    pub history: Vec<f64>,
}

/// Monotone projected-gradient ascent with Armijo backtracking.
///
/// Each trial step is halved until `f(y) ≥ f(x) + 1e-4·gᵀ(y − x)`. The first
/// trial step is `initial_step`; afterwards it is the Barzilai–Borwein step of
/// the last move, falling back to twice the last accepted step.
pub fn projected_gradient_ascent<F, G, P>(
    obj: F,
    grad: G,
    project: P,
    x0: &DVector<f64>,
    opts: &PgaOptions,
) -> PgaResult
where
    F: Fn(&DVector<f64>) -> f64,
    G: Fn(&DVector<f64>) -> DVector<f64>,
    P: Fn(&DVector<f64>) -> DVector<f64>,
{
    const ARMIJO: f64 = 1e-4;
    let mut x = project(x0);
    let mut f = obj(&x);
    let mut history = vec![f];
    let mut g = grad(&x);
    let mut step = opts.initial_step;
    for it in 0..opts.max_iter {
        let mut t = step;
        let accepted = loop {
            let y = project(&(&x + &g * t));
            let d = &y - &x;
            let dn = d.norm();
            if dn <= 1e-15 * (1.0 + x.norm()) {
                break None;
            }
            let fy = obj(&y);
            if fy >= f + ARMIJO * g.dot(&d) && fy >= f {
                break Some((y, fy, d));
            }
            t *= 0.5;
            if t < 1e-30 {
                break None;
            }
        };
        let Some((y, fy, d)) = accepted else {
            return PgaResult { x, value: f, iterations: it, status: SolveStatus::Converged, history };
        };
        let rel = (fy - f) / f.abs().max(1.0);
        let g_new = grad(&y);
        let dg = &g_new - &g;
        let curv = -d.dot(&dg);
        step = if curv > 0.0 { (d.norm_squared() / curv).clamp(1e-12, 1e12) } else { (2.0 * t).min(1e12) };
        x = y;
        f = fy;
        g = g_new;
        history.push(f);
        if rel < opts.tol {
            return PgaResult { x, value: f, iterations: it + 1, status: SolveStatus::Converged, history };
        }
    }
    PgaResult { x, value: f, iterations: opts.max_iter, status: SolveStatus::CapReached, history }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64) -> C64 {
        C64::new(re, 0.0)
    }

    #[test]
    fn interior_identity() {
        let a = CMatrix::identity(2, 2);
        let b = CVector::from_vec(vec![C64::new(0.3, 0.1), C64::new(-0.2, 0.4)]);
        let s = min_quadratic_ball(&a, &b, 1.0).unwrap();
        assert!((s.x - &b).norm() < 1e-14);
        assert_eq!(s.lambda, 0.0);
    }

    #[test]
    fn boundary_identity() {
        let a = CMatrix::identity(2, 2);
        let b = CVector::from_vec(vec![c(2.0), c(0.0)]);
        let s = min_quadratic_ball(&a, &b, 1.0).unwrap();
        assert!((s.x[0] - c(1.0)).norm() < 1e-9 && s.x[1].norm() < 1e-12);
        assert!((s.lambda - 1.0).abs() < 1e-8);
    }

    #[test]
    fn linear_objective_goes_to_boundary() {
        let a = CMatrix::zeros(2, 2);
        let b = CVector::from_vec(vec![c(1.0), c(0.0)]);
        let s = min_quadratic_ball(&a, &b, 4.0).unwrap();
        assert!((s.x[0] - c(2.0)).norm() < 1e-9 && s.x[1].norm() < 1e-12);
    }

    #[test]
    fn kernel_rejections() {
        let mut a = CMatrix::identity(2, 2);
        a[(0, 1)] = c(1.0);
        let b = CVector::from_vec(vec![c(1.0), c(0.0)]);
        assert!(min_quadratic_ball(&a, &b, 1.0).is_err());
        let neg = CMatrix::identity(2, 2) * c(-1.0);
        assert!(min_quadratic_ball(&neg, &b, 1.0).is_err());
    }

    #[test]
    fn scalar_box() {
        assert_eq!(min_scalar_quadratic_box(1.0, 0.5, 1.0).unwrap(), 0.5);
        assert_eq!(min_scalar_quadratic_box(1.0, 5.0, 1.0).unwrap(), 1.0);
        assert_eq!(min_scalar_quadratic_box(2.0, -1.0, 1.0).unwrap(), 0.0);
        assert!(min_scalar_quadratic_box(0.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn pair_ball_examples() {
        assert_eq!(project_pair_ball(c(0.5), c(0.5)), (c(0.5), c(0.5)));
        let (t, r) = project_pair_ball(c(1.0), c(1.0));
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((t - c(h)).norm() < 1e-15 && (r - c(h)).norm() < 1e-15);
        let (t, r) = project_pair_ball(c(0.0), C64::new(0.0, -3.0));
        assert_eq!(t, c(0.0));
        assert!((r - C64::new(0.0, -1.0)).norm() < 1e-15);
    }

    #[test]
    fn ms_projection_cases() {
        // Already feasible.
        let p = project_ms_element(c(0.3), c(0.2), 0.5, 0.4);
        assert_eq!(p, (c(0.3), c(0.2), 0.5, 0.4));
        // Cone violated on one side only.
        let (qt, _, pt, _) = project_ms_element(c(0.8), c(0.0), 0.2, 0.0);
        assert!((qt.norm() - 0.5).abs() < 1e-12 && (pt - 0.5).abs() < 1e-12);
        // Ball violated.
        let (_, _, pt, pr) = project_ms_element(c(0.0), c(0.0), 1.0, 1.0);
        assert!((pt * pt + pr * pr - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pga_quadratic_and_linear() {
        let cvec = DVector::from_vec(vec![0.3, -0.2, 0.1]);
        let cc = cvec.clone();
        let ball = |x: &DVector<f64>| {
            let n = x.norm();
            if n > 1.0 {
                x / n
            } else {
                x.clone()
            }
        };
        let r = projected_gradient_ascent(
            |x| -(x - &cc).norm_squared(),
            |x| (x - &cc) * -2.0,
            ball,
            &DVector::zeros(3),
            &PgaOptions::default(),
        );
        assert!((r.x - &cvec).norm() < 1e-6);
        assert!(r.history.windows(2).all(|w| w[1] >= w[0]));

        let dir = DVector::from_vec(vec![1.0, 2.0, -2.0]);
        let d2 = dir.clone();
        let r =
            projected_gradient_ascent(|x| d2.dot(x), |_| d2.clone(), ball, &DVector::zeros(3), &PgaOptions::default());
        assert!((r.x.norm() - 1.0).abs() < 1e-6);
        assert!((r.x - dir.normalize()).norm() < 1e-6);
    }
}
