//! Exact propagation of the damped spin under piecewise-constant controls.
//!
//! Within one segment the Liouvillian is constant, so the map over the
//! segment is the matrix exponential of the 4×4 column-stacked generator.

use nalgebra::{Matrix4, Vector4};

use crate::error::{domain, Result};
use crate::linalg::{self, commutator, sigma_minus, sigma_plus, unitary_step, Mat2, C64};
use crate::qmodel::{
    hamiltonian, hamiltonian_matrix, ComplexOperator, ModelParams, PiecewisePulse, PulseSegment, PureState,
    QubitState,
};

/// Default number of reported samples inside each segment.
pub const DEFAULT_SAMPLES_PER_SEGMENT: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<QubitState>,
}

impl Trajectory {
    pub fn final_state(&self) -> &QubitState {
        self.states.last().expect("trajectory is never empty")
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitaryPropagator(Mat2);

impl UnitaryPropagator {
    pub fn identity() -> Self {
        Self(Mat2::identity())
    }

    pub fn matrix(&self) -> &Mat2 {
        &self.0
    }

    pub fn unitarity_defect(&self) -> f64 {
        (self.0.adjoint() * self.0 - Mat2::identity()).norm()
    }

    pub fn apply(&self, state: &QubitState) -> QubitState {
        QubitState::from_propagated(self.0 * state.matrix() * self.0.adjoint())
    }

    pub fn apply_pure(&self, psi: &PureState) -> PureState {
        let v = self.0 * psi.amplitudes();
        PureState::normalized(v).expect("unitary image of a unit vector is non-zero")
    }
}

fn dissipator(rho: &Mat2) -> Mat2 {
    let sp = sigma_plus();
    let sm = sigma_minus();
    let n = sm * sp; // |↓⟩⟨↓|
    sp * rho * sm - (n * rho + rho * n).scale(0.5)
}

/// dρ/dt = −i[H, ρ] + γ(σ₊ρσ₋ − ½{σ₋σ₊, ρ}).
pub fn lindblad_rhs(state: &QubitState, params: &ModelParams, amplitude: f64, phase: f64) -> Result<ComplexOperator> {
    let h = hamiltonian(params, amplitude, phase)?.as_qubit().expect("qubit Hamiltonian");
    let rho = state.matrix();
    let out = commutator(&h, rho) * C64::new(0.0, -1.0) + dissipator(rho).scale(params.gamma);
    Ok(ComplexOperator::from_qubit(&out))
}

/// Column-stacked Liouvillian: vec(AρB) = (Bᵀ ⊗ A) vec(ρ).
pub fn liouvillian(params: &ModelParams, amplitude: f64, phase: f64) -> Matrix4<C64> {
    let h = hamiltonian_matrix(params, amplitude, phase);
    let id = Mat2::identity();
    let sp = sigma_plus();
    let sm = sigma_minus();
    let n = sm * sp;
    let minus_i = C64::new(0.0, -1.0);
    let coherent = (id.kronecker(&h) - h.transpose().kronecker(&id)) * minus_i;
    let jump = sm.transpose().kronecker(&sp);
    let anti = id.kronecker(&n) + n.transpose().kronecker(&id);
    coherent + (jump - anti.scale(0.5)).scale(params.gamma)
}

fn vectorize(m: &Mat2) -> Vector4<C64> {
    Vector4::new(m[(0, 0)], m[(1, 0)], m[(0, 1)], m[(1, 1)])
}

fn unvectorize(v: &Vector4<C64>) -> Mat2 {
    Mat2::new(v[0], v[2], v[1], v[3])
}

/// exp(L·τ) for a single segment.
pub(crate) fn segment_map(params: &ModelParams, seg: &PulseSegment, tau: f64) -> Matrix4<C64> {
    if tau == 0.0 {
        return Matrix4::identity();
    }
    (liouvillian(params, seg.amplitude, seg.phase) * C64::new(tau, 0.0)).exp()
}

fn apply_map(map: &Matrix4<C64>, rho: &Mat2) -> Mat2 {
    unvectorize(&(map * vectorize(rho)))
}

fn check_segment(params: &ModelParams, seg: &PulseSegment) -> Result<()> {
    if seg.amplitude > params.omega0 * (1.0 + 1e-12) {
        return domain(format!("segment amplitude {} exceeds omega0 {}", seg.amplitude, params.omega0));
    }
    Ok(())
}

pub fn propagate_segment(state: &QubitState, params: &ModelParams, seg: &PulseSegment) -> Result<QubitState> {
    check_segment(params, seg)?;
    if seg.duration == 0.0 {
        return Ok(*state);
    }
    let map = segment_map(params, seg, seg.duration);
    Ok(QubitState::from_propagated(apply_map(&map, state.matrix())))
}

/// State at the end of the whole pulse.
pub fn final_state(state: &QubitState, params: &ModelParams, pulse: &PiecewisePulse) -> Result<QubitState> {
    pulse.segments().iter().try_fold(*state, |rho, seg| propagate_segment(&rho, params, seg))
}

/// State at time `t` inside the pulse.
pub fn state_at(state: &QubitState, params: &ModelParams, pulse: &PiecewisePulse, t: f64) -> Result<QubitState> {
    final_state(state, params, &pulse.truncated(t)?)
}

/// Propagates through the pulse, reporting `samples_per_segment` uniform
/// sub-steps inside every segment of non-zero length. Boundary states are
/// computed with the full segment map so they coincide with
/// [`propagate_segment`].
pub fn propagate_pulse(
    state: &QubitState,
    params: &ModelParams,
    pulse: &PiecewisePulse,
    samples_per_segment: usize,
) -> Result<Trajectory> {
    if samples_per_segment == 0 {
        return domain("samples_per_segment must be >= 1");
    }
    let mut times = vec![0.0];
    let mut states = vec![*state];
    let mut t0 = 0.0;
    let mut rho = *state;
    for seg in pulse.segments() {
        check_segment(params, seg)?;
        if seg.duration == 0.0 {
            continue;
        }
        let tau = seg.duration / samples_per_segment as f64;
        let sub = segment_map(params, seg, tau);
        let mut inner = *rho.matrix();
        for k in 1..samples_per_segment {
            inner = apply_map(&sub, &inner);
            times.push(t0 + tau * k as f64);
            states.push(QubitState::from_propagated(inner));
        }
        rho = propagate_segment(&rho, params, seg)?;
        t0 += seg.duration;
        times.push(t0);
        states.push(rho);
    }
    Ok(Trajectory { times, states })
}

/// Ordered product of exp(−iH_k τ_k) up to time `t`; γ is ignored.
pub fn unitary_propagator(params: &ModelParams, pulse: &PiecewisePulse, t: f64) -> Result<UnitaryPropagator> {
    let total = pulse.total_duration();
    if !(0.0..=total * (1.0 + 1e-12)).contains(&t) {
        return domain(format!("time {t} outside [0, {total}]"));
    }
    let mut u = Mat2::identity();
    let mut remaining = t;
    for seg in pulse.segments() {
        if remaining <= 0.0 {
            break;
        }
        check_segment(params, seg)?;
        let d = seg.duration.min(remaining);
        u = unitary_step(&hamiltonian_matrix(params, seg.amplitude, seg.phase), d) * u;
        remaining -= d;
    }
    Ok(UnitaryPropagator(u))
}

/// Pure-state propagation under the unitary part.
pub fn propagate_pure(psi: &PureState, params: &ModelParams, pulse: &PiecewisePulse) -> Result<PureState> {
    Ok(unitary_propagator(params, pulse, pulse.total_duration())?.apply_pure(psi))
}

pub(crate) fn unitary_product(params: &ModelParams, segs: &[PulseSegment]) -> Mat2 {
    segs.iter().fold(linalg::identity(), |u, s| {
        unitary_step(&hamiltonian_matrix(params, s.amplitude, s.phase), s.duration) * u
    })
}
