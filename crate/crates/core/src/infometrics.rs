//! Distances and Fisher informations of the driven spin.
//!
//! Four routes to the quantum Fisher information (QFI) live here:
//!
//! - the eigen-expansion of ρ and its parameter derivative ([`qfi_full_rank`]),
//! - the pure-state Fubini–Study form ([`qfi_pure_fubini`]),
//! - the variance of the interaction-picture generator A(t) ([`qfi_pure_from_a`]),
//! - the finite-difference Bures quotient ([`fd_qfi`]).
//!
//! [`qfi`] picks between the first and third by the purity of ρ(t). The two
//! disagree at exactly unit purity when the support of ρ changes with the
//! parameter, so the routing threshold is explicit.

use std::f64::consts::PI;

use nalgebra::DMatrix;

use crate::dynamics::{state_at, unitary_product};
use crate::error::{domain, QestError, Result};
use crate::linalg::{self, eigh2, hermitize, projector, sqrt_psd2, unitary_step, Mat2, Vec2, C64};
use crate::qmodel::{
    d_hamiltonian_matrix, hamiltonian_matrix, ComplexOperator, ModelParams, ParamName, PiecewisePulse, Povm,
    PureState, QubitState,
};

/// Eigenvalues above this count as in-support.
pub const SUPPORT_THRESHOLD: f64 = 1e-10;
/// States with Tr[ρ²] above this use the pure-state route.
pub const PURITY_THRESHOLD: f64 = 1.0 - 1e-9;
/// Default finite-difference step, in natural units of the parameter.
pub const DEFAULT_FD_STEP: f64 = 1e-5;
/// Default Gauss–Legendre nodes per quadrature panel.
pub const DEFAULT_QUAD_POINTS: usize = 16;
/// Segments longer than this are split into several quadrature panels.
const MAX_PANEL: f64 = 2.0;
const BURES_SLACK: f64 = 1e-9;

/// Eigenvalues in descending order with orthonormal eigenvectors.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralDecomposition {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: Vec<Vec2>,
}

impl SpectralDecomposition {
    pub fn of(state: &QubitState) -> Self {
        let (vals, vecs) = eigh2(state.matrix());
        Self { eigenvalues: vals.to_vec(), eigenvectors: vecs.to_vec() }
    }

    pub fn reconstruct(&self) -> Mat2 {
        self.eigenvalues
            .iter()
            .zip(&self.eigenvectors)
            .fold(Mat2::zeros(), |acc, (p, v)| acc + projector(v).scale(*p))
    }

    /// Number of eigenvalues above [`SUPPORT_THRESHOLD`].
    pub fn support_dim(&self) -> usize {
        self.eigenvalues.iter().filter(|p| **p > SUPPORT_THRESHOLD).count()
    }
}

/// First-order parameter derivative ρ⁽¹⁾ of the state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerivativeEstimate {
    matrix: Mat2,
    /// Finite-difference step used (0 for analytic inputs).
    pub step: f64,
    /// Truncation order of the scheme.
    pub order: u32,
}

impl DerivativeEstimate {
    /// Wraps an exact derivative. Must be Hermitian and traceless within 1e-10.
    pub fn new(matrix: Mat2) -> Result<Self> {
        if linalg::hermitian_defect(&matrix) > 1e-10 {
            return domain("state derivative must be Hermitian");
        }
        if linalg::trace(&matrix).norm() > 1e-10 {
            return domain("state derivative must be traceless");
        }
        Ok(Self { matrix: hermitize(&matrix), step: 0.0, order: 0 })
    }

    pub fn matrix(&self) -> &Mat2 {
        &self.matrix
    }
}

// ---------------------------------------------------------------------------
// Bures distance

fn clamp_bures(d2: f64) -> Result<f64> {
    if d2 < -BURES_SLACK || d2 > 2.0 + BURES_SLACK || !d2.is_finite() {
        return Err(QestError::NumericalFailure(format!("Bures distance {d2} outside [0, 2]")));
    }
    Ok(d2.clamp(0.0, 2.0))
}

fn det2(m: &Mat2) -> f64 {
    (m[(0, 0)].re * m[(1, 1)].re - m[(0, 1)].norm_sqr()).max(0.0)
}

/// D² = 2(1 − Tr√(√ρ₁ ρ₂ √ρ₁)).
///
/// For 2×2 the eigenvalues λ± of √ρ₁ρ₂√ρ₁ satisfy λ₊ + λ₋ = Tr[ρ₁ρ₂] and
/// λ₊λ₋ = det ρ₁ det ρ₂, so (√λ₊ + √λ₋)² = Tr[ρ₁ρ₂] + 2√(det ρ₁ det ρ₂).
/// This avoids taking square roots of round-off eigenvalues for pure states.
pub fn bures_distance_sq(rho1: &QubitState, rho2: &QubitState) -> Result<f64> {
    let overlap = (rho1.matrix() * rho2.matrix()).trace().re;
    let dets = det2(rho1.matrix()) * det2(rho2.matrix());
    let fidelity_root = (overlap + 2.0 * dets.sqrt()).max(0.0).sqrt();
    clamp_bures(2.0 * (1.0 - fidelity_root))
}

/// Same quantity through explicit matrix square roots (eigen-decomposition
/// with clamped eigenvalues).
pub fn bures_distance_sq_eigen(rho1: &QubitState, rho2: &QubitState) -> Result<f64> {
    let s = sqrt_psd2(rho1.matrix());
    let inner = hermitize(&(s * rho2.matrix() * s));
    let (vals, _) = eigh2(&inner);
    let fidelity_root: f64 = vals.iter().map(|l| l.max(0.0).sqrt()).sum();
    clamp_bures(2.0 * (1.0 - fidelity_root))
}

fn sqrt_psd_general(m: &DMatrix<C64>) -> DMatrix<C64> {
    let h = (m + m.adjoint()).scale(0.5);
    let eig = h.symmetric_eigen();
    let mut out = DMatrix::<C64>::zeros(m.nrows(), m.ncols());
    for (k, lam) in eig.eigenvalues.iter().enumerate() {
        let v = eig.eigenvectors.column(k);
        out += (&v * v.adjoint()).scale(lam.max(0.0).sqrt());
    }
    out
}

/// Bures distance for density operators of any dimension.
pub fn bures_distance_sq_operators(rho1: &ComplexOperator, rho2: &ComplexOperator) -> Result<f64> {
    if rho1.dim() != rho2.dim() {
        return domain("operators have different dimensions");
    }
    let s = sqrt_psd_general(rho1.matrix());
    let inner = &s * rho2.matrix() * &s;
    let inner = (&inner + inner.adjoint()).scale(0.5);
    let fidelity_root: f64 = inner.symmetric_eigenvalues().iter().map(|l| l.max(0.0).sqrt()).sum();
    clamp_bures(2.0 * (1.0 - fidelity_root))
}

// ---------------------------------------------------------------------------
// State derivatives

fn admissible(which: ParamName, value: f64) -> bool {
    value.is_finite() && (which != ParamName::Gamma || value >= 0.0)
}

/// ρ⁽¹⁾(t) = ∂ρ(t)/∂X at the current parameter values.
///
/// Uses a central difference with one Richardson level (steps h and h/2).
/// When X₀ − h is inadmissible (γ at zero) it falls back to the forward
/// difference with one Richardson level, which is second order.
pub fn rho_derivative(
    params: &ModelParams,
    pulse: &PiecewisePulse,
    initial: &QubitState,
    which: ParamName,
    t: f64,
    step: f64,
) -> Result<DerivativeEstimate> {
    if !(step > 0.0 && step.is_finite()) {
        return domain(format!("finite-difference step must be positive, got {step}"));
    }
    let x0 = params.get(which);
    if !admissible(which, x0) || !admissible(which, x0 + step) {
        return domain(format!("{} = {x0} (+{step}) is outside the admissible range", which.as_str()));
    }
    let pulse = pulse.truncated(t)?;
    let rho = |x: f64| -> Result<Mat2> {
        let p = params.with(which, x)?;
        Ok(*crate::dynamics::final_state(initial, &p, &pulse)?.matrix())
    };
    let (matrix, order) = if admissible(which, x0 - step) {
        let central = |h: f64| -> Result<Mat2> { Ok((rho(x0 + h)? - rho(x0 - h)?).unscale(2.0 * h)) };
        let coarse = central(step)?;
        let fine = central(step / 2.0)?;
        ((fine.scale(4.0) - coarse).unscale(3.0), 4)
    } else {
        let base = rho(x0)?;
        let forward = |h: f64| -> Result<Mat2> { Ok((rho(x0 + h)? - base).unscale(h)) };
        let coarse = forward(step)?;
        let fine = forward(step / 2.0)?;
        (fine.scale(2.0) - coarse, 2)
    };
    let mut matrix = hermitize(&matrix);
    let tr = linalg::trace(&matrix) * 0.5;
    matrix[(0, 0)] -= tr;
    matrix[(1, 1)] -= tr;
    Ok(DerivativeEstimate { matrix, step, order })
}

// ---------------------------------------------------------------------------
// QFI formulations

/// 4 Σ_k Σ_{m | p_m > 0} p_m/(p_m + p_k)² |⟨ψ_k|ρ⁽¹⁾|ψ_m⟩|², k over the full basis.
pub fn qfi_full_rank(rho0: &QubitState, rho1: &DerivativeEstimate) -> f64 {
    let dec = SpectralDecomposition::of(rho0);
    let d = rho1.matrix();
    let mut f = 0.0;
    for (pm, vm) in dec.eigenvalues.iter().zip(&dec.eigenvectors) {
        if *pm <= SUPPORT_THRESHOLD {
            continue;
        }
        let dvm = d * vm;
        for (pk, vk) in dec.eigenvalues.iter().zip(&dec.eigenvectors) {
            let pk = pk.max(0.0);
            let elem = vk.dotc(&dvm);
            f += pm / ((pm + pk) * (pm + pk)) * elem.norm_sqr();
        }
    }
    4.0 * f
}

/// 4(⟨ψ⁽¹⁾|ψ⁽¹⁾⟩ − |⟨ψ⁽⁰⁾|ψ⁽¹⁾⟩|²).
pub fn qfi_pure_fubini(psi0: &PureState, psi1: &Vec2) -> f64 {
    let overlap = psi0.amplitudes().dotc(psi1);
    4.0 * (psi1.norm_squared() - overlap.norm_sqr())
}

/// Gauss–Legendre nodes and weights on [−1, 1], by Newton iteration on P_n.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "need at least one node");
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p_prev, mut p) = (1.0, z);
            for k in 2..=n {
                let next = ((2 * k - 1) as f64 * z * p - (k - 1) as f64 * p_prev) / k as f64;
                p_prev = p;
                p = next;
            }
            dp = n as f64 * (z * p - p_prev) / (z * z - 1.0);
            let dz = p / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
    }
    (x, w)
}

/// A(t) = ∫₀ᵗ U⁽⁰⁾†(t′) ∂_X H(t′) U⁽⁰⁾(t′) dt′, the relaxation rate ignored.
///
/// Each segment is integrated with `quad_points` Gauss–Legendre nodes per
/// panel; segments longer than 2/ω₀ are split into equal panels.
pub fn a_operator(
    params: &ModelParams,
    pulse: &PiecewisePulse,
    which: ParamName,
    t: f64,
    quad_points: usize,
) -> Result<ComplexOperator> {
    Ok(ComplexOperator::from_qubit(&a_matrix(params, pulse, which, t, quad_points)?))
}

pub(crate) fn a_matrix(
    params: &ModelParams,
    pulse: &PiecewisePulse,
    which: ParamName,
    t: f64,
    quad_points: usize,
) -> Result<Mat2> {
    if which == ParamName::Gamma {
        return Err(QestError::UnsupportedParameter(which));
    }
    if quad_points == 0 {
        return domain("quad_points must be >= 1");
    }
    let pulse = pulse.truncated(t)?;
    let (nodes, weights) = gauss_legendre(quad_points);
    let mut a = Mat2::zeros();
    let mut u_start = Mat2::identity();
    for seg in pulse.segments() {
        if seg.duration == 0.0 {
            continue;
        }
        let h = hamiltonian_matrix(params, seg.amplitude, seg.phase);
        let dh = d_hamiltonian_matrix(seg.amplitude, seg.phase, which)?;
        let panels = (seg.duration / MAX_PANEL).ceil().max(1.0) as usize;
        let width = seg.duration / panels as f64;
        for p in 0..panels {
            let left = width * p as f64;
            for (x, w) in nodes.iter().zip(&weights) {
                let s = left + 0.5 * width * (x + 1.0);
                let u = unitary_step(&h, s) * u_start;
                a += (u.adjoint() * dh * u).scale(0.5 * width * w);
            }
        }
        u_start = unitary_step(&h, seg.duration) * u_start;
    }
    Ok(hermitize(&a))
}

/// 4(⟨ψ₀|A²|ψ₀⟩ − ⟨ψ₀|A|ψ₀⟩²).
pub fn qfi_pure_from_a(psi0: &PureState, a: &ComplexOperator) -> Result<f64> {
    if !a.is_hermitian(1e-10) {
        return domain("A(t) must be Hermitian");
    }
    let a = a.as_qubit().ok_or_else(|| QestError::Domain("A(t) must be a qubit operator".into()))?;
    Ok(variance_qfi(psi0.amplitudes(), &a))
}

fn variance_qfi(psi: &Vec2, a: &Mat2) -> f64 {
    let av = a * psi;
    let mean = psi.dotc(&av).re;
    (4.0 * (av.norm_squared() - mean * mean)).max(0.0)
}

/// (∫₀ᵗ [λ_max − λ_min] dt′)² with λ the eigenvalues of ∂_X H.
pub fn qfi_tight_bound(params: &ModelParams, pulse: &PiecewisePulse, which: ParamName, t: f64) -> Result<f64> {
    if which == ParamName::Gamma {
        return Err(QestError::UnsupportedParameter(which));
    }
    let pulse = pulse.truncated(t)?;
    let mut integral = 0.0;
    for seg in pulse.segments() {
        if seg.amplitude > params.omega0 * (1.0 + 1e-12) {
            return domain(format!("segment amplitude {} exceeds omega0", seg.amplitude));
        }
        let (vals, _) = eigh2(&d_hamiltonian_matrix(seg.amplitude, seg.phase, which)?);
        integral += (vals[0] - vals[1]) * seg.duration;
    }
    Ok(integral * integral)
}

/// 4 Σ_{n>0} |⟨ψ₀|A|ψ_n⟩|² (1 − ε(p₀⁽¹⁾ + 3p_n⁽¹⁾)), valid to first order in ε.
///
/// `basis[0]` must equal `psi0`; `p1` holds the first-order populations.
pub fn qfi_mixed_approx(psi0: &PureState, a: &ComplexOperator, basis: &[PureState], p1: &[f64], eps: f64) -> Result<f64> {
    let a = a.as_qubit().ok_or_else(|| QestError::Domain("A(t) must be a qubit operator".into()))?;
    if basis.len() != 2 || p1.len() != 2 {
        return domain("basis and first-order populations must have length 2");
    }
    for (i, u) in basis.iter().enumerate() {
        for (j, v) in basis.iter().enumerate() {
            let ip = u.amplitudes().dotc(v.amplitudes()).norm();
            let expected = if i == j { 1.0 } else { 0.0 };
            if (ip - expected).abs() > 1e-10 {
                return domain("basis must be orthonormal");
            }
        }
    }
    if (basis[0].amplitudes().dotc(psi0.amplitudes()).norm() - 1.0).abs() > 1e-10 {
        return domain("basis[0] must coincide with psi0");
    }
    let apsi = a * psi0.amplitudes();
    let mut f = 0.0;
    for (n, v) in basis.iter().enumerate().skip(1) {
        let elem = v.amplitudes().dotc(&apsi);
        f += elem.norm_sqr() * (1.0 - eps * (p1[0] + 3.0 * p1[n]));
    }
    Ok(4.0 * f)
}

/// Σ_{n | π_n⁽⁰⁾ > 0} (π_n⁽¹⁾)² / π_n⁽⁰⁾ with π_n⁽ⁱ⁾ = Tr[ρ⁽ⁱ⁾Π_n].
pub fn cfi(rho0: &QubitState, rho1: &DerivativeEstimate, povm: &Povm) -> Result<f64> {
    let mut f = 0.0;
    for e in povm.elements() {
        let e = e.as_qubit().ok_or_else(|| QestError::Domain("POVM must act on a qubit".into()))?;
        let p0 = (rho0.matrix() * e).trace().re;
        let p1 = (rho1.matrix() * e).trace().re;
        if p0 > SUPPORT_THRESHOLD {
            f += p1 * p1 / p0;
        }
    }
    Ok(f)
}

/// (4/δX²)·D²(ρ_{X₀}(t), ρ_{X₀+δX}(t)).
pub fn fd_qfi(
    params: &ModelParams,
    pulse: &PiecewisePulse,
    initial: &QubitState,
    which: ParamName,
    delta_x: f64,
    t: f64,
) -> Result<f64> {
    if !(delta_x > 0.0 && delta_x.is_finite()) {
        return domain(format!("deltaX must be positive, got {delta_x}"));
    }
    let shifted = params.with(which, params.get(which) + delta_x)?;
    let a = state_at(initial, params, pulse, t)?;
    let b = state_at(initial, &shifted, pulse, t)?;
    Ok(4.0 / (delta_x * delta_x) * bures_distance_sq(&a, &b)?)
}

/// Which formula [`qfi`] used.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QfiRoute {
    /// Pure state: variance of A(t).
    PureGenerator,
    /// Eigen-expansion of ρ with a numerically differentiated ρ⁽¹⁾.
    FullRank,
}

/// Purity-routed QFI of ρ_X(t).
///
/// Pure states with X ∈ {Δ, α} go through A(t); everything else (mixed
/// states, or the relaxation rate, which has no Hamiltonian generator) uses
/// the eigen-expansion with the default finite-difference derivative.
pub fn qfi_with_route(
    params: &ModelParams,
    pulse: &PiecewisePulse,
    initial: &QubitState,
    which: ParamName,
    t: f64,
) -> Result<(f64, QfiRoute)> {
    let rho = state_at(initial, params, pulse, t)?;
    if which != ParamName::Gamma && rho.purity() > PURITY_THRESHOLD && initial.purity() > PURITY_THRESHOLD {
        let dec = SpectralDecomposition::of(initial);
        let psi0 = PureState::normalized(dec.eigenvectors[0])?;
        let a = a_matrix(params, pulse, which, t, DEFAULT_QUAD_POINTS)?;
        return Ok((variance_qfi(psi0.amplitudes(), &a), QfiRoute::PureGenerator));
    }
    let d = rho_derivative(params, pulse, initial, which, t, DEFAULT_FD_STEP)?;
    Ok((qfi_full_rank(&rho, &d), QfiRoute::FullRank))
}

pub fn qfi(params: &ModelParams, pulse: &PiecewisePulse, initial: &QubitState, which: ParamName, t: f64) -> Result<f64> {
    qfi_with_route(params, pulse, initial, which, t).map(|(f, _)| f)
}

/// CFI of ρ_X(t) under `povm`, with the default finite-difference derivative.
pub fn cfi_at(
    params: &ModelParams,
    pulse: &PiecewisePulse,
    initial: &QubitState,
    which: ParamName,
    t: f64,
    povm: &Povm,
) -> Result<f64> {
    let rho = state_at(initial, params, pulse, t)?;
    let d = rho_derivative(params, pulse, initial, which, t, DEFAULT_FD_STEP)?;
    cfi(&rho, &d, povm)
}

/// Heisenberg-picture ψ⁽¹⁾ = −i A ψ₀ of the pure-state expansion.
pub fn pure_derivative(psi0: &PureState, a: &ComplexOperator) -> Result<Vec2> {
    let a = a.as_qubit().ok_or_else(|| QestError::Domain("A(t) must be a qubit operator".into()))?;
    Ok((a * psi0.amplitudes()) * C64::new(0.0, -1.0))
}

/// U⁽⁰⁾(t) for the pulse; exposed for tests that need the unperturbed frame.
pub fn unperturbed_unitary(params: &ModelParams, pulse: &PiecewisePulse, t: f64) -> Result<Mat2> {
    Ok(unitary_product(params, pulse.truncated(t)?.segments()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{sigma_x, sigma_z};
    use crate::qmodel::PulseSegment;
    use approx::assert_abs_diff_eq;

    fn diag(p: f64) -> QubitState {
        QubitState::new(Mat2::new(C64::new(p, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0), C64::new(1.0 - p, 0.0)))
            .unwrap()
    }

    #[test]
    fn bures_reference_values() {
        let up = QubitState::up();
        assert_abs_diff_eq!(bures_distance_sq(&up, &up).unwrap(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(bures_distance_sq(&up, &QubitState::down()).unwrap(), 2.0, epsilon = 1e-15);
        let mixed = QubitState::maximally_mixed();
        assert_abs_diff_eq!(bures_distance_sq(&up, &mixed).unwrap(), 2.0 * (1.0 - 0.5f64.sqrt()), epsilon = 1e-12);
        assert_abs_diff_eq!(bures_distance_sq(&mixed, &up).unwrap(), 0.585786437626905, epsilon = 1e-12);
    }

    #[test]
    fn bures_closed_form_matches_eigen_route() {
        let states = [diag(0.3), diag(0.95), QubitState::maximally_mixed()];
        let rot = |s: &QubitState, th: f64| {
            let u = unitary_step(&(sigma_x() * C64::new(0.5, 0.0)), th);
            QubitState::new(u * s.matrix() * u.adjoint()).unwrap()
        };
        for a in &states {
            for b in &states {
                let b = rot(b, 0.7);
                let d = bures_distance_sq(a, &b).unwrap();
                assert_abs_diff_eq!(d, bures_distance_sq_eigen(a, &b).unwrap(), epsilon = 1e-12);
            }
        }
        // Nearby pure states: D² = 2(1 − cos(θ/2)) ≈ θ²/4. The eigen route
        // loses this to √(round-off); the closed form keeps it.
        let th = 1e-4;
        let b = rot(&QubitState::up(), th);
        let exact = 2.0 * (1.0 - (th / 2.0).cos());
        let d = bures_distance_sq(&QubitState::up(), &b).unwrap();
        assert!((d - exact).abs() < 1e-6 * exact, "{d} vs {exact}");
    }

    #[test]
    fn bures_general_dimension() {
        let mut a = DMatrix::<C64>::zeros(3, 3);
        a[(0, 0)] = C64::new(1.0, 0.0);
        let mut b = DMatrix::<C64>::zeros(3, 3);
        b[(2, 2)] = C64::new(1.0, 0.0);
        let a = ComplexOperator::new(a).unwrap();
        let b = ComplexOperator::new(b).unwrap();
        assert_abs_diff_eq!(bures_distance_sq_operators(&a, &b).unwrap(), 2.0, epsilon = 1e-14);
        assert_abs_diff_eq!(bures_distance_sq_operators(&a, &a).unwrap(), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn full_rank_diagonal_hand_value() {
        let c = 0.3;
        for &p in &[0.2, 0.5, 0.9] {
            let d = DerivativeEstimate::new(sigma_x().scale(c)).unwrap();
            assert_abs_diff_eq!(qfi_full_rank(&diag(p), &d), 4.0 * c * c, epsilon = 1e-12);
        }
        let zero = DerivativeEstimate::new(Mat2::zeros()).unwrap();
        assert_eq!(qfi_full_rank(&diag(0.3), &zero), 0.0);
    }

    #[test]
    fn fubini_cases() {
        let up = PureState::up();
        assert_abs_diff_eq!(qfi_pure_fubini(&up, &(up.amplitudes() * C64::new(0.3, -0.2))), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(qfi_pure_fubini(&up, PureState::down().amplitudes()), 4.0);
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(16);
        assert_abs_diff_eq!(w.iter().sum::<f64>(), 2.0, epsilon = 1e-14);
        let int: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(30)).sum();
        assert_abs_diff_eq!(int, 2.0 / 31.0, epsilon = 1e-14);
        let (x, w) = gauss_legendre(3);
        assert_abs_diff_eq!(x.iter().zip(&w).map(|(x, w)| w * x * x).sum::<f64>(), 2.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn a_operator_free_evolution() {
        let p = ModelParams::reference();
        let pulse = PiecewisePulse::constant(4.0, 0.0, 0.0).unwrap();
        let a = a_operator(&p, &pulse, ParamName::Delta, 3.0, 16).unwrap().as_qubit().unwrap();
        assert!((a - sigma_z().scale(-1.5)).norm() < 1e-13);
        let equator = PureState::from_angles(PI / 2.0, 0.0);
        let f = qfi_pure_from_a(&equator, &ComplexOperator::from_qubit(&a)).unwrap();
        assert_abs_diff_eq!(f, 9.0, epsilon = 1e-12);
        let f_up = qfi_pure_from_a(&PureState::up(), &ComplexOperator::from_qubit(&a)).unwrap();
        assert_abs_diff_eq!(f_up, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn a_operator_rejects_gamma() {
        let p = ModelParams::reference();
        let pulse = PiecewisePulse::constant(1.0, 0.5, 0.0).unwrap();
        assert_eq!(
            a_operator(&p, &pulse, ParamName::Gamma, 1.0, 8),
            Err(QestError::UnsupportedParameter(ParamName::Gamma))
        );
        assert!(qfi_tight_bound(&p, &pulse, ParamName::Gamma, 1.0).is_err());
    }

    #[test]
    fn quadrature_converges() {
        let p = ModelParams::reference();
        let pulse = PiecewisePulse::new(vec![
            PulseSegment::new(3.2, 1.0, 0.4).unwrap(),
            PulseSegment::new(5.0, 0.0, 0.0).unwrap(),
            PulseSegment::new(1.7, 0.8, -2.0).unwrap(),
        ])
        .unwrap();
        for which in [ParamName::Delta, ParamName::Alpha] {
            let a16 = a_matrix(&p, &pulse, which, pulse.total_duration(), 16).unwrap();
            let a32 = a_matrix(&p, &pulse, which, pulse.total_duration(), 32).unwrap();
            assert!((a16 - a32).norm() < 1e-10);
        }
    }

    #[test]
    fn tight_bound_cases() {
        let p = ModelParams::reference();
        let pulse = PiecewisePulse::new(vec![
            PulseSegment::new(2.0, 1.0, 0.4).unwrap(),
            PulseSegment::new(3.0, 0.3, 1.0).unwrap(),
        ])
        .unwrap();
        assert_abs_diff_eq!(qfi_tight_bound(&p, &pulse, ParamName::Delta, 4.0).unwrap(), 16.0, epsilon = 1e-12);
        let constant = PiecewisePulse::constant(6.0, 1.0, 0.0).unwrap();
        assert_abs_diff_eq!(qfi_tight_bound(&p, &constant, ParamName::Alpha, 6.0).unwrap(), 9.0, epsilon = 1e-12);
        let off = PiecewisePulse::constant(6.0, 0.0, 0.0).unwrap();
        assert_eq!(qfi_tight_bound(&p, &off, ParamName::Alpha, 6.0).unwrap(), 0.0);
    }

    #[test]
    fn mixed_approx_unperturbed_limit() {
        let psi = PureState::from_angles(1.0, 0.3);
        let a = ComplexOperator::from_qubit(&(sigma_x().scale(0.7) + sigma_z().scale(-0.2)));
        let exact = qfi_pure_from_a(&psi, &a).unwrap();
        let approx = qfi_mixed_approx(&psi, &a, &[psi, psi.orthogonal()], &[-1.0, 1.0], 0.0).unwrap();
        assert_abs_diff_eq!(approx, exact, epsilon = 1e-13);
        assert!(qfi_mixed_approx(&psi, &a, &[psi.orthogonal(), psi], &[0.0, 0.0], 0.0).is_err());
    }

    #[test]
    fn mixed_approx_equal_superposition_scales() {
        // ψ₀ is an equal-weight superposition of the σ_z eigenvectors.
        let psi = PureState::from_angles(PI / 2.0, 0.0);
        let a = ComplexOperator::from_qubit(&sigma_z().scale(-2.0));
        let f0 = qfi_pure_from_a(&psi, &a).unwrap();
        let (p0, p1, eps) = (-1.0, 1.0, 0.01);
        let approx = qfi_mixed_approx(&psi, &a, &[psi, psi.orthogonal()], &[p0, p1], eps).unwrap();
        assert_abs_diff_eq!(approx, f0 * (1.0 - eps * (p0 + 3.0 * p1)), epsilon = 1e-12);
    }

    #[test]
    fn cfi_zero_for_equator_under_sigma_z() {
        let rho = PureState::from_angles(PI / 2.0, 0.0).projector();
        // Rotation about z moves the state along the equator: ρ⁽¹⁾ ∝ σ_y/2.
        let d = DerivativeEstimate::new(crate::linalg::sigma_y().scale(0.5 * 1.3)).unwrap();
        let c = cfi(&rho, &d, &Povm::sigma_z()).unwrap();
        assert_abs_diff_eq!(c, 0.0, epsilon = 1e-15);
        assert!(qfi_full_rank(&rho, &d) > 0.1);
        let zero = DerivativeEstimate::new(Mat2::zeros()).unwrap();
        assert_eq!(cfi(&rho, &zero, &Povm::sigma_z()).unwrap(), 0.0);
    }

    #[test]
    fn derivative_of_alpha_without_drive_is_zero() {
        let p = ModelParams::reference().with_gamma(0.05);
        let pulse = PiecewisePulse::constant(5.0, 0.0, 0.0).unwrap();
        let initial = PureState::from_angles(1.0, 0.2).projector();
        let d = rho_derivative(&p, &pulse, &initial, ParamName::Alpha, 5.0, 1e-4).unwrap();
        assert!(d.matrix().norm() < 1e-10);
        assert_eq!(fd_qfi(&p, &pulse, &initial, ParamName::Alpha, 0.1, 5.0).unwrap(), 0.0);
    }

    #[test]
    fn derivative_of_gamma_at_zero_uses_forward_scheme() {
        let p = ModelParams::new(0.0, 1.0, 0.0, 1.0).unwrap();
        let t = 3.0;
        let pulse = PiecewisePulse::constant(t, 0.0, 0.0).unwrap();
        let d = rho_derivative(&p, &pulse, &QubitState::down(), ParamName::Gamma, t, 1e-4).unwrap();
        assert_eq!(d.order, 2);
        let expected = (QubitState::up().matrix() - QubitState::down().matrix()).scale(t);
        assert!((d.matrix() - expected).norm() < 1e-6);
    }

    #[test]
    fn negative_gamma_step_is_rejected() {
        let p = ModelParams::reference();
        let pulse = PiecewisePulse::constant(1.0, 0.0, 0.0).unwrap();
        assert!(rho_derivative(&p, &pulse, &QubitState::up(), ParamName::Delta, 1.0, 0.0).is_err());
        assert!(fd_qfi(&p, &pulse, &QubitState::up(), ParamName::Delta, -0.1, 1.0).is_err());
    }

    #[test]
    fn routing_picks_pure_generator_without_damping() {
        let p = ModelParams::reference();
        let pulse = PiecewisePulse::constant(2.0, 1.0, 0.0).unwrap();
        let (_, route) = qfi_with_route(&p, &pulse, &QubitState::up(), ParamName::Delta, 2.0).unwrap();
        assert_eq!(route, QfiRoute::PureGenerator);
        let (_, route) = qfi_with_route(&p.with_gamma(0.05), &pulse, &QubitState::up(), ParamName::Delta, 2.0).unwrap();
        assert_eq!(route, QfiRoute::FullRank);
        let (_, route) = qfi_with_route(&p, &pulse, &QubitState::up(), ParamName::Gamma, 2.0).unwrap();
        assert_eq!(route, QfiRoute::FullRank);
    }
}
