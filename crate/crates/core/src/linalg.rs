//! Small dense helpers for 2×2 complex matrices.
//!
//! Basis ordering everywhere is (|↑⟩, |↓⟩): index 0 is the +1 eigenstate of σ_z.

use nalgebra::{DMatrix, Matrix2, Vector2};
use num_complex::Complex64;

pub type C64 = Complex64;
pub type Mat2 = Matrix2<C64>;
pub type Vec2 = Vector2<C64>;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);
pub const I: C64 = C64::new(0.0, 1.0);

pub fn identity() -> Mat2 {
    Mat2::identity()
}

pub fn sigma_x() -> Mat2 {
    Mat2::new(ZERO, ONE, ONE, ZERO)
}

pub fn sigma_y() -> Mat2 {
    Mat2::new(ZERO, -I, I, ZERO)
}

pub fn sigma_z() -> Mat2 {
    Mat2::new(ONE, ZERO, ZERO, -ONE)
}

/// σ₊ = |↑⟩⟨↓|.
pub fn sigma_plus() -> Mat2 {
    Mat2::new(ZERO, ONE, ZERO, ZERO)
}

/// σ₋ = |↓⟩⟨↑|.
pub fn sigma_minus() -> Mat2 {
    Mat2::new(ZERO, ZERO, ONE, ZERO)
}

pub fn up() -> Vec2 {
    Vec2::new(ONE, ZERO)
}

pub fn down() -> Vec2 {
    Vec2::new(ZERO, ONE)
}

pub fn projector(v: &Vec2) -> Mat2 {
    v * v.adjoint()
}

pub fn commutator(a: &Mat2, b: &Mat2) -> Mat2 {
    a * b - b * a
}

pub fn trace(m: &Mat2) -> C64 {
    m[(0, 0)] + m[(1, 1)]
}

pub fn hermitian_defect(m: &Mat2) -> f64 {
    (m - m.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max)
}

pub fn hermitize(m: &Mat2) -> Mat2 {
    (m + m.adjoint()).scale(0.5)
}

/// Eigen-decomposition of a Hermitian 2×2 matrix in closed form.
///
/// Returns eigenvalues in descending order with matching orthonormal
/// eigenvectors. Only the Hermitian part of `m` is used.
pub fn eigh2(m: &Mat2) -> ([f64; 2], [Vec2; 2]) {
    let a = m[(0, 0)].re;
    let d = m[(1, 1)].re;
    let b = (m[(0, 1)] + m[(1, 0)].conj()) * 0.5;
    let mean = 0.5 * (a + d);
    let half = 0.5 * (a - d);
    let r = (half * half + b.norm_sqr()).sqrt();
    let (hi, lo) = (mean + r, mean - r);
    let scale = a.abs().max(d.abs()).max(b.norm()).max(f64::MIN_POSITIVE);
    if r <= 1e-15 * scale {
        return ([hi, lo], [up(), down()]);
    }
    let vec_for = |lam: f64| -> Vec2 {
        let v1 = Vec2::new(b, C64::new(lam - a, 0.0));
        let v2 = Vec2::new(C64::new(lam - d, 0.0), b.conj());
        let v = if v1.norm() >= v2.norm() { v1 } else { v2 };
        v.unscale(v.norm())
    };
    let v_hi = vec_for(hi);
    // Orthogonal complement in 2D: (−v1*, v0*).
    let v_lo = Vec2::new(-v_hi[1].conj(), v_hi[0].conj());
    ([hi, lo], [v_hi, v_lo])
}

/// Square root of a positive-semidefinite Hermitian 2×2 matrix, with
/// negative eigenvalues clamped to zero.
pub fn sqrt_psd2(m: &Mat2) -> Mat2 {
    let (vals, vecs) = eigh2(m);
    let mut out = Mat2::zeros();
    for (lam, v) in vals.iter().zip(vecs.iter()) {
        out += projector(v).scale(lam.max(0.0).sqrt());
    }
    out
}

/// Exact propagator exp(−i H τ) for a Hermitian 2×2 `h`.
pub fn unitary_step(h: &Mat2, tau: f64) -> Mat2 {
    // H = h0·I + n·σ
    let h0 = 0.5 * (h[(0, 0)].re + h[(1, 1)].re);
    let nz = 0.5 * (h[(0, 0)].re - h[(1, 1)].re);
    let off = (h[(0, 1)] + h[(1, 0)].conj()) * 0.5; // nx − i·ny
    let nx = off.re;
    let ny = -off.im;
    let norm = (nx * nx + ny * ny + nz * nz).sqrt();
    let phase = C64::from_polar(1.0, -h0 * tau);
    let (c, s_over) = if norm * tau.abs() < 1e-300 {
        (1.0, tau)
    } else {
        ((norm * tau).cos(), (norm * tau).sin() / norm)
    };
    let n_sigma = sigma_x().scale(nx) + sigma_y().scale(ny) + sigma_z().scale(nz);
    (identity().scale(c) - n_sigma * C64::new(0.0, s_over)) * phase
}

pub fn to_dmatrix(m: &Mat2) -> DMatrix<C64> {
    DMatrix::from_fn(2, 2, |i, j| m[(i, j)])
}
