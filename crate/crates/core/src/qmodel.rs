//! States, operators, pulses and the spin Hamiltonian.
//!
//! Units: every time is expressed in 1/ω₀ and every frequency in ω₀, so the
//! reference amplitude `omega0` is normally 1.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{domain, QestError, Result};
use crate::linalg::{
    self, eigh2, hermitian_defect, sigma_minus, sigma_plus, sigma_x, sigma_y, sigma_z, Mat2, Vec2,
    C64,
};

/// Offset used in the Δ case studies.
pub const DELTA_0: f64 = 0.2;
/// Nominal control scaling.
pub const ALPHA_0: f64 = 1.0;
/// Relaxation rate used in the dissipative case studies.
pub const GAMMA_0: f64 = 0.05;
/// Duration of the time-optimal Δ-selective control.
pub const SELECTIVE_FINAL_TIME: f64 = 3.235 * PI;

const STATE_TOL: f64 = 1e-10;

/// Square complex matrix of dimension ≥ 2 with finite entries.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexOperator(DMatrix<C64>);

impl ComplexOperator {
    pub fn new(m: DMatrix<C64>) -> Result<Self> {
        if m.nrows() != m.ncols() || m.nrows() < 2 {
            return domain(format!("operator must be square with dim >= 2, got {}x{}", m.nrows(), m.ncols()));
        }
        if m.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return domain("operator has non-finite entries");
        }
        Ok(Self(m))
    }

    pub fn from_qubit(m: &Mat2) -> Self {
        Self(linalg::to_dmatrix(m))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<C64> {
        self.0
    }

    /// The 2×2 block, if this is a qubit operator.
    pub fn as_qubit(&self) -> Option<Mat2> {
        (self.dim() == 2).then(|| Mat2::new(self.0[(0, 0)], self.0[(0, 1)], self.0[(1, 0)], self.0[(1, 1)]))
    }

    pub fn hermitian_defect(&self) -> f64 {
        (&self.0 - self.0.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.hermitian_defect() <= tol
    }

    /// Sorted (descending) eigenvalues of the Hermitian part.
    pub fn hermitian_eigenvalues(&self) -> Vec<f64> {
        let h = (&self.0 + self.0.adjoint()).scale(0.5);
        let mut vals: Vec<f64> = h.symmetric_eigenvalues().iter().copied().collect();
        vals.sort_by(|a, b| b.total_cmp(a));
        vals
    }

    pub fn trace(&self) -> C64 {
        self.0.trace()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamName {
    Delta,
    Alpha,
    Gamma,
}

impl ParamName {
    pub fn as_str(self) -> &'static str {
        match self {
            ParamName::Delta => "delta",
            ParamName::Alpha => "alpha",
            ParamName::Gamma => "gamma",
        }
    }
}

/// Physical parameters of the driven, damped spin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, try_from = "RawParams")]
pub struct ModelParams {
    pub delta: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub omega0: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawParams {
    delta: f64,
    alpha: f64,
    gamma: f64,
    #[serde(default = "one")]
    omega0: f64,
}

fn one() -> f64 {
    1.0
}

impl TryFrom<RawParams> for ModelParams {
    type Error = QestError;
    fn try_from(r: RawParams) -> Result<Self> {
        ModelParams::new(r.delta, r.alpha, r.gamma, r.omega0)
    }
}

impl ModelParams {
    pub fn new(delta: f64, alpha: f64, gamma: f64, omega0: f64) -> Result<Self> {
        if ![delta, alpha, gamma, omega0].iter().all(|v| v.is_finite()) {
            return domain("model parameters must be finite");
        }
        if omega0 <= 0.0 {
            return domain(format!("omega0 must be positive, got {omega0}"));
        }
        if gamma < 0.0 {
            return domain(format!("gamma must be non-negative, got {gamma}"));
        }
        Ok(Self { delta, alpha, gamma, omega0 })
    }

    /// Δ₀ = 0.2, α₀ = 1, γ = 0, ω₀ = 1.
    pub fn reference() -> Self {
        Self { delta: DELTA_0, alpha: ALPHA_0, gamma: 0.0, omega0: 1.0 }
    }

    pub fn get(&self, which: ParamName) -> f64 {
        match which {
            ParamName::Delta => self.delta,
            ParamName::Alpha => self.alpha,
            ParamName::Gamma => self.gamma,
        }
    }

    pub fn with(&self, which: ParamName, value: f64) -> Result<Self> {
        let mut p = *self;
        match which {
            ParamName::Delta => p.delta = value,
            ParamName::Alpha => p.alpha = value,
            ParamName::Gamma => p.gamma = value,
        }
        Self::new(p.delta, p.alpha, p.gamma, p.omega0)
    }

    pub fn with_gamma(&self, gamma: f64) -> Self {
        Self { gamma, ..*self }
    }

    pub fn with_delta(&self, delta: f64) -> Self {
        Self { delta, ..*self }
    }
}

/// Normalized state vector of the spin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PureState(Vec2);

impl PureState {
    pub fn new(amplitudes: Vec2) -> Result<Self> {
        if (amplitudes.norm() - 1.0).abs() > 1e-12 {
            return domain(format!("pure state must have unit norm, got {}", amplitudes.norm()));
        }
        Ok(Self(amplitudes))
    }

    /// Normalizes any non-zero vector.
    pub fn normalized(v: Vec2) -> Result<Self> {
        let n = v.norm();
        if !(n > 0.0 && n.is_finite()) {
            return domain("cannot normalize a zero vector");
        }
        Ok(Self(v.unscale(n)))
    }

    pub fn up() -> Self {
        Self(linalg::up())
    }

    pub fn down() -> Self {
        Self(linalg::down())
    }

    /// cos(θ/2)|↑⟩ + e^{iϕ} sin(θ/2)|↓⟩.
    pub fn from_angles(theta: f64, azimuth: f64) -> Self {
        Self(Vec2::new(
            C64::new((theta / 2.0).cos(), 0.0),
            C64::from_polar((theta / 2.0).sin(), azimuth),
        ))
    }

    pub fn amplitudes(&self) -> &Vec2 {
        &self.0
    }

    pub fn projector(&self) -> QubitState {
        QubitState(linalg::projector(&self.0))
    }

    /// The orthogonal state, with the convention (−b*, a*).
    pub fn orthogonal(&self) -> Self {
        Self(Vec2::new(-self.0[1].conj(), self.0[0].conj()))
    }
}

/// Density matrix of the spin: Hermitian, unit trace, positive semidefinite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QubitState(Mat2);

impl QubitState {
    pub fn new(m: Mat2) -> Result<Self> {
        let defect = hermitian_defect(&m);
        if defect > STATE_TOL {
            return domain(format!("density matrix not Hermitian (defect {defect:.3e})"));
        }
        let tr = linalg::trace(&m);
        if (tr - C64::new(1.0, 0.0)).norm() > STATE_TOL {
            return domain(format!("density matrix trace {tr} != 1"));
        }
        let (vals, _) = eigh2(&m);
        if vals[1] < -STATE_TOL {
            return domain(format!("density matrix has negative eigenvalue {:.3e}", vals[1]));
        }
        Ok(Self(m))
    }

    /// Wraps a propagated matrix, symmetrizing away round-off. Callers are
    /// responsible for producing a physical state.
    pub(crate) fn from_propagated(m: Mat2) -> Self {
        Self(linalg::hermitize(&m))
    }

    pub fn up() -> Self {
        PureState::up().projector()
    }

    pub fn down() -> Self {
        PureState::down().projector()
    }

    pub fn maximally_mixed() -> Self {
        Self(linalg::identity().scale(0.5))
    }

    pub fn matrix(&self) -> &Mat2 {
        &self.0
    }

    pub fn purity(&self) -> f64 {
        (self.0 * self.0).trace().re
    }

    pub fn population_up(&self) -> f64 {
        self.0[(0, 0)].re
    }

    pub fn population_down(&self) -> f64 {
        self.0[(1, 1)].re
    }

    pub fn min_eigenvalue(&self) -> f64 {
        eigh2(&self.0).0[1]
    }

    pub fn to_operator(&self) -> ComplexOperator {
        ComplexOperator::from_qubit(&self.0)
    }
}

/// Expectation values (⟨σ_x⟩, ⟨σ_y⟩, ⟨σ_z⟩).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlochVector {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl BlochVector {
    pub fn new(x: f64, y: f64, z: f64) -> Result<Self> {
        let b = Self { x, y, z };
        if !(x.is_finite() && y.is_finite() && z.is_finite()) || b.norm() > 1.0 + 1e-10 {
            return domain(format!("Bloch vector ({x}, {y}, {z}) lies outside the unit ball"));
        }
        Ok(b)
    }

    pub fn norm(&self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn distance(&self, other: &BlochVector) -> f64 {
        let (dx, dy, dz) = (self.x - other.x, self.y - other.y, self.z - other.z);
        (dx * dx + dy * dy + dz * dz).sqrt()
    }
}

pub fn bloch_from_state(state: &QubitState) -> BlochVector {
    let m = state.matrix();
    BlochVector {
        x: (m * sigma_x()).trace().re,
        y: (m * sigma_y()).trace().re,
        z: (m * sigma_z()).trace().re,
    }
}

pub fn state_from_bloch(b: &BlochVector) -> Result<QubitState> {
    let b = BlochVector::new(b.x, b.y, b.z)?;
    let m = (linalg::identity() + sigma_x().scale(b.x) + sigma_y().scale(b.y) + sigma_z().scale(b.z)).scale(0.5);
    Ok(QubitState(m))
}

/// Maps any angle into (−π, π].
pub fn normalize_phase(phase: f64) -> f64 {
    let turns = ((phase - PI) / (2.0 * PI)).ceil();
    let p = phase - 2.0 * PI * turns;
    if p <= -PI {
        p + 2.0 * PI
    } else {
        p
    }
}

/// One constant piece of the control: amplitude ω and phase φ held for `duration`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, try_from = "RawSegment")]
pub struct PulseSegment {
    pub duration: f64,
    pub amplitude: f64,
    pub phase: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSegment {
    duration: f64,
    amplitude: f64,
    phase: f64,
}

impl TryFrom<RawSegment> for PulseSegment {
    type Error = QestError;
    fn try_from(r: RawSegment) -> Result<Self> {
        PulseSegment::new(r.duration, r.amplitude, r.phase)
    }
}

impl PulseSegment {
    /// Zero durations are accepted and act as the identity map.
    pub fn new(duration: f64, amplitude: f64, phase: f64) -> Result<Self> {
        if !(duration.is_finite() && amplitude.is_finite() && phase.is_finite()) {
            return domain("segment values must be finite");
        }
        if duration < 0.0 {
            return domain(format!("segment duration must be >= 0, got {duration}"));
        }
        if amplitude < 0.0 {
            return domain(format!("segment amplitude must be >= 0, got {amplitude}"));
        }
        Ok(Self { duration, amplitude, phase: normalize_phase(phase) })
    }

    pub fn free(duration: f64) -> Result<Self> {
        Self::new(duration, 0.0, 0.0)
    }
}

/// Ordered list of constant segments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, try_from = "RawPulse")]
pub struct PiecewisePulse {
    segments: Vec<PulseSegment>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPulse {
    segments: Vec<PulseSegment>,
}

impl TryFrom<RawPulse> for PiecewisePulse {
    type Error = QestError;
    fn try_from(r: RawPulse) -> Result<Self> {
        PiecewisePulse::new(r.segments)
    }
}

impl PiecewisePulse {
    pub fn new(segments: Vec<PulseSegment>) -> Result<Self> {
        if segments.is_empty() {
            return domain("pulse must contain at least one segment");
        }
        Ok(Self { segments })
    }

    /// A single segment held for `duration`.
    pub fn constant(duration: f64, amplitude: f64, phase: f64) -> Result<Self> {
        Self::new(vec![PulseSegment::new(duration, amplitude, phase)?])
    }

    pub fn segments(&self) -> &[PulseSegment] {
        &self.segments
    }

    pub fn total_duration(&self) -> f64 {
        self.segments.iter().map(|s| s.duration).sum()
    }

    /// Segment start times, one per segment.
    pub fn start_times(&self) -> Vec<f64> {
        let mut t = 0.0;
        self.segments
            .iter()
            .map(|s| {
                let start = t;
                t += s.duration;
                start
            })
            .collect()
    }

    /// Index of the segment active at time `t`: the one whose half-open
    /// interval [start, end) contains `t`; `t = total` maps to the last
    /// segment of non-zero length.
    pub fn segment_index_at(&self, t: f64) -> Result<usize> {
        let total = self.total_duration();
        if !(0.0..=total).contains(&t) {
            return domain(format!("time {t} outside [0, {total}]"));
        }
        let mut start = 0.0;
        let mut last_nonzero = 0;
        for (k, s) in self.segments.iter().enumerate() {
            if s.duration > 0.0 {
                if t < start + s.duration {
                    return Ok(k);
                }
                last_nonzero = k;
            }
            start += s.duration;
        }
        Ok(last_nonzero)
    }

    pub fn segment_at(&self, t: f64) -> Result<&PulseSegment> {
        Ok(&self.segments[self.segment_index_at(t)?])
    }

    /// The pulse restricted to [0, t]. Segments past `t` are dropped and the
    /// active one is shortened.
    pub fn truncated(&self, t: f64) -> Result<PiecewisePulse> {
        let total = self.total_duration();
        if !(0.0..=total * (1.0 + 1e-12) + 1e-15).contains(&t) {
            return domain(format!("time {t} outside [0, {total}]"));
        }
        let mut out = Vec::with_capacity(self.segments.len());
        let mut remaining = t;
        for s in &self.segments {
            if remaining <= 0.0 {
                break;
            }
            let d = s.duration.min(remaining);
            out.push(PulseSegment { duration: d, ..*s });
            remaining -= d;
        }
        if out.is_empty() {
            out.push(PulseSegment { duration: 0.0, ..self.segments[0] });
        }
        Ok(PiecewisePulse { segments: out })
    }

    /// Appends a free-evolution segment so that the pulse lasts `t`.
    pub fn extended_to(&self, t: f64) -> Result<PiecewisePulse> {
        let total = self.total_duration();
        if t <= total {
            return self.truncated(t);
        }
        let mut segments = self.segments.clone();
        segments.push(PulseSegment::free(t - total)?);
        PiecewisePulse::new(segments)
    }

    /// ∫ ω(t)² dt.
    pub fn energy(&self) -> f64 {
        self.segments.iter().map(|s| s.amplitude * s.amplitude * s.duration).sum()
    }

    pub fn max_amplitude(&self) -> f64 {
        self.segments.iter().map(|s| s.amplitude).fold(0.0, f64::max)
    }
}

/// Finite set of positive operators summing to the identity.
#[derive(Debug, Clone, PartialEq)]
pub struct Povm {
    elements: Vec<ComplexOperator>,
}

impl Povm {
    pub fn new(elements: Vec<ComplexOperator>) -> Result<Self> {
        let Some(first) = elements.first() else {
            return domain("POVM needs at least one element");
        };
        let dim = first.dim();
        let mut sum = DMatrix::<C64>::zeros(dim, dim);
        for (n, e) in elements.iter().enumerate() {
            if e.dim() != dim {
                return domain(format!("POVM element {n} has dimension {} != {dim}", e.dim()));
            }
            if !e.is_hermitian(STATE_TOL) {
                return domain(format!("POVM element {n} is not Hermitian"));
            }
            if e.hermitian_eigenvalues().last().copied().unwrap_or(0.0) < -STATE_TOL {
                return domain(format!("POVM element {n} is not positive semidefinite"));
            }
            sum += e.matrix();
        }
        let defect = (sum - DMatrix::<C64>::identity(dim, dim)).iter().map(|z| z.norm()).fold(0.0, f64::max);
        if defect > STATE_TOL {
            return domain(format!("POVM elements do not sum to identity (defect {defect:.3e})"));
        }
        Ok(Self { elements })
    }

    /// Projectors onto |↑⟩ and |↓⟩.
    pub fn sigma_z() -> Self {
        Self {
            elements: vec![
                ComplexOperator::from_qubit(&linalg::projector(&linalg::up())),
                ComplexOperator::from_qubit(&linalg::projector(&linalg::down())),
            ],
        }
    }

    pub fn elements(&self) -> &[ComplexOperator] {
        &self.elements
    }
}

fn check_amplitude(params: &ModelParams, amplitude: f64) -> Result<()> {
    if !(0.0..=params.omega0 * (1.0 + 1e-12)).contains(&amplitude) {
        return domain(format!("amplitude {amplitude} outside [0, {}]", params.omega0));
    }
    Ok(())
}

pub(crate) fn drive_operator(amplitude: f64, phase: f64) -> Mat2 {
    // e^{−iφ}σ₊ + e^{iφ}σ₋
    sigma_plus() * C64::from_polar(amplitude, -phase) + sigma_minus() * C64::from_polar(amplitude, phase)
}

pub(crate) fn hamiltonian_matrix(params: &ModelParams, amplitude: f64, phase: f64) -> Mat2 {
    sigma_z().scale(-params.delta / 2.0) - drive_operator(amplitude, phase).scale(params.alpha / 4.0)
}

pub(crate) fn d_hamiltonian_matrix(amplitude: f64, phase: f64, which: ParamName) -> Result<Mat2> {
    match which {
        ParamName::Delta => Ok(sigma_z().scale(-0.5)),
        ParamName::Alpha => Ok(drive_operator(amplitude, phase).scale(-0.25)),
        ParamName::Gamma => Err(QestError::UnsupportedParameter(ParamName::Gamma)),
    }
}

/// H = −(Δ/2)σ_z − (α/4)·ω·(e^{−iφ}σ₊ + e^{iφ}σ₋).
pub fn hamiltonian(params: &ModelParams, amplitude: f64, phase: f64) -> Result<ComplexOperator> {
    check_amplitude(params, amplitude)?;
    Ok(ComplexOperator::from_qubit(&hamiltonian_matrix(params, amplitude, phase)))
}

/// ∂H/∂X for X ∈ {Δ, α}. The relaxation rate only enters the dissipator.
pub fn d_hamiltonian(params: &ModelParams, amplitude: f64, phase: f64, which: ParamName) -> Result<ComplexOperator> {
    check_amplitude(params, amplitude)?;
    d_hamiltonian_matrix(amplitude, phase, which).map(|m| ComplexOperator::from_qubit(&m))
}
