use nalgebra::{Matrix2, Matrix4, Vector2};
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Ordering of the product basis `{|r⟩, |l⟩} ⊗ {|S₋⟩, |S₊⟩}`.
pub const BASIS_LABELS: [&str; 4] = ["r,S-", "r,S+", "l,S-", "l,S+"];

/// Tolerance for the Hermiticity, trace and positivity checks.
pub const STATE_TOLERANCE: f64 = 1e-12;

/// Eigenvalues of a density matrix below this are treated as exact zeros.
const RANK_CUTOFF: f64 = 1e-13;

type C = Complex64;

/// A polarizer in front of a detector. Angles are in radians and measured in
/// the linear basis reached after the quarter-wave plate, which maps `|r⟩`
/// (signal) and `|S₋⟩` (idler) onto the 0° axis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Polarizer {
    Open,
    Linear(f64),
}

impl Polarizer {
    fn projector(self) -> Matrix2<C> {
        match self {
            Polarizer::Open => Matrix2::identity(),
            Polarizer::Linear(theta) => {
                let v = Vector2::new(C::new(theta.cos(), 0.0), C::new(theta.sin(), 0.0));
                v * v.adjoint()
            }
        }
    }
}

/// Density matrix of the signal polarization and the spin-wave mode.
#[derive(Clone, Debug, PartialEq)]
pub struct TwoQubitState {
    rho: Matrix4<C>,
    raw_trace: f64,
}

impl TwoQubitState {
    /// Normalizes `rho` to unit trace after checking Hermiticity and
    /// positivity. The trace before normalization is kept in
    /// [`raw_trace`](Self::raw_trace).
    pub fn from_matrix(rho: Matrix4<C>) -> Result<Self> {
        let trace = rho.trace();
        if !(trace.re > 0.0) || trace.im.abs() > STATE_TOLERANCE * trace.re {
            return Err(Error::invalid(format!(
                "density matrix trace {trace} is not positive"
            )));
        }
        let state = TwoQubitState {
            rho: rho.map(|z| z / trace.re),
            raw_trace: trace.re,
        };
        state.validate()?;
        Ok(state)
    }

    pub fn matrix(&self) -> &Matrix4<C> {
        &self.rho
    }

    pub fn raw_trace(&self) -> f64 {
        self.raw_trace
    }

    /// Checks Hermiticity, unit trace and positive semidefiniteness to
    /// [`STATE_TOLERANCE`].
    pub fn validate(&self) -> Result<()> {
        let herm = max_abs(&(self.rho - self.rho.adjoint()));
        if herm > STATE_TOLERANCE {
            return Err(Error::Numerical(format!(
                "state not Hermitian (deviation {herm:e})"
            )));
        }
        let tr = self.rho.trace();
        if (tr.re - 1.0).abs() > STATE_TOLERANCE || tr.im.abs() > STATE_TOLERANCE {
            return Err(Error::Numerical(format!("state trace {tr} != 1")));
        }
        let min_eig = self
            .eigenvalues()
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        if min_eig < -STATE_TOLERANCE {
            return Err(Error::Numerical(format!(
                "state not positive (eigenvalue {min_eig:e})"
            )));
        }
        Ok(())
    }

    fn hermitian_part(&self) -> Matrix4<C> {
        (self.rho + self.rho.adjoint()).map(|z| z * 0.5)
    }

    pub fn eigenvalues(&self) -> [f64; 4] {
        let eig = self.hermitian_part().symmetric_eigenvalues();
        [eig[0], eig[1], eig[2], eig[3]]
    }

    pub fn purity(&self) -> f64 {
        (self.rho * self.rho).trace().re
    }

    /// Wootters concurrence, from the singular values of
    /// `τ_ij = ⟨v_i| σy⊗σy |v_j*⟩` over the subnormalized eigenvectors of ρ.
    pub fn concurrence(&self) -> f64 {
        let eig = self.hermitian_part().symmetric_eigen();
        let sy = Matrix2::new(
            C::new(0.0, 0.0),
            C::new(0.0, -1.0),
            C::new(0.0, 1.0),
            C::new(0.0, 0.0),
        );
        let flip = sy.kronecker(&sy);
        let mut vs = Matrix4::<C>::zeros();
        for k in 0..4 {
            let p = eig.eigenvalues[k];
            if p > RANK_CUTOFF {
                vs.set_column(k, &eig.eigenvectors.column(k).map(|z| z * p.sqrt()));
            }
        }
        let tau = vs.adjoint() * flip * vs.conjugate();
        let mut sv: Vec<f64> = tau.singular_values().iter().copied().collect();
        sv.sort_by(|a, b| b.total_cmp(a));
        (sv[0] - sv[1] - sv[2] - sv[3]).max(0.0)
    }

    /// `Tr[(P_s ⊗ P_i) ρ]`: probability that both photons pass their
    /// polarizers. [`Polarizer::Open`] on one side gives the marginal.
    pub fn pass_probability(&self, signal: Polarizer, idler: Polarizer) -> f64 {
        let proj = signal.projector().kronecker(&idler.projector());
        (proj * self.rho).trace().re.clamp(0.0, 1.0)
    }
}

pub(crate) fn max_abs<const N: usize>(m: &nalgebra::SMatrix<C, N, N>) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// `cos η |r⟩|S₋⟩ + sin η |l⟩|S₊⟩`, assembled from its four density-matrix
/// terms.
pub fn ideal_state(eta: f64) -> Result<TwoQubitState> {
    if !(0.0..=std::f64::consts::FRAC_PI_2).contains(&eta) {
        return Err(Error::invalid(format!("eta = {eta} outside [0, pi/2]")));
    }
    let (s, c) = eta.sin_cos();
    let mut rho = Matrix4::<C>::zeros();
    rho[(0, 0)] = C::new(c * c, 0.0);
    rho[(3, 3)] = C::new(s * s, 0.0);
    rho[(0, 3)] = C::new(c * s, 0.0);
    rho[(3, 0)] = C::new(c * s, 0.0);
    TwoQubitState::from_matrix(rho)
}

/// `V ρ + (1 - V) I/4`.
pub fn add_white_noise(state: &TwoQubitState, visibility: f64) -> Result<TwoQubitState> {
    if !(0.0..=1.0).contains(&visibility) {
        return Err(Error::invalid(format!(
            "visibility {visibility} outside [0, 1]"
        )));
    }
    let rho = state.rho.map(|z| z * visibility)
        + Matrix4::<C>::identity().map(|z| z * ((1.0 - visibility) / 4.0));
    let out = TwoQubitState {
        rho,
        raw_trace: 1.0,
    };
    out.validate()?;
    Ok(out)
}
