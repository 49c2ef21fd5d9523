//! The signal-photon / spin-wave state and the collective excitation
//! operators behind it.

mod collective;
mod two_qubit;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_pcg::Pcg64Mcg;

pub use collective::{
    build_collective_operator, heralded_commutator, mode_weights, normalized_mode_operator,
    product_basis, vacuum_configurations, vacuum_correlation, AtomLevel, CollectiveOperator,
    Configuration, EnsembleModel, HeraldedCommutator, SparseKet, VacuumAverage, EXHAUSTIVE_LIMIT,
    MAX_EXPLICIT_ATOMS,
};
pub use two_qubit::{
    add_white_noise, ideal_state, Polarizer, TwoQubitState, BASIS_LABELS, STATE_TOLERANCE,
};

use crate::angular_momentum::{branching_table, Helicity, LevelScheme};
use crate::error::{Error, Result};

/// Wave vectors of the write, read and signal fields, rad/m.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WaveVectors {
    pub k_w: Vector3<f64>,
    pub k_r: Vector3<f64>,
    pub k_s: Vector3<f64>,
}

/// Idler wave vector `k_i = k_w + k_r - k_s`.
pub fn phase_match(k: &WaveVectors) -> Vector3<f64> {
    k.k_w + k.k_r - k.k_s
}

/// Write/read/signal geometry of the off-axis counter-propagating setup:
/// write along `+z`, read counter-propagating, signal at `signal_angle` from
/// the write beam in the x-z plane. All fields share `wavelength`.
pub fn counter_propagating_geometry(wavelength: f64, signal_angle: f64) -> WaveVectors {
    let k = 2.0 * std::f64::consts::PI / wavelength;
    let k_w = Vector3::new(0.0, 0.0, k);
    WaveVectors {
        k_w,
        k_r: -k_w,
        k_s: Vector3::new(k * signal_angle.sin(), 0.0, k * signal_angle.cos()),
    }
}

/// One row of the collective-operator validation.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct OperatorCheck {
    pub n_atoms: usize,
    /// `⟨s₋ s†₋⟩` on the vacuum.
    pub norm_minus: f64,
    /// `⟨s₊ s†₊⟩` on the vacuum.
    pub norm_plus: f64,
    /// `|⟨s₋ s†₊⟩|` on the vacuum.
    pub cross: f64,
    /// `|⟨[s₋, s†₋]⟩ - 1|` in the heralded one-excitation state.
    pub deviation_minus: f64,
    pub deviation_plus: f64,
}

/// Builds the normalized `s†_{±1}` modes of `scheme` for `n_atoms` atoms at
/// random positions (seeded) inside a 400 µm cube, with `Δk = k_s - k_w` for
/// 795 nm light and a 2° signal angle, and evaluates the vacuum norms, the
/// cross term, and the heralded commutator deviation.
pub fn check_collective_operators(
    scheme: &LevelScheme,
    n_atoms: usize,
    seed: u64,
) -> Result<OperatorCheck> {
    if n_atoms == 0 || n_atoms > MAX_EXPLICIT_ATOMS {
        return Err(Error::invalid(format!(
            "atom number {n_atoms} outside 1..={MAX_EXPLICIT_ATOMS}"
        )));
    }
    let mut rng =
        Pcg64Mcg::seed_from_u64(seed ^ (n_atoms as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let side = 400e-6;
    let positions = (0..n_atoms)
        .map(|_| {
            Vector3::new(
                rng.random::<f64>(),
                rng.random::<f64>(),
                rng.random::<f64>(),
            ) * side
        })
        .collect();
    let k = counter_propagating_geometry(795e-9, 2f64.to_radians());
    let model = EnsembleModel::new(scheme.f_a(), scheme.f_b(), positions, k.k_s - k.k_w)?;
    let table = branching_table(scheme);
    let minus = normalized_mode_operator(&model, &table, Helicity::Minus)?;
    let plus = normalized_mode_operator(&model, &table, Helicity::Plus)?;
    let mode = VacuumAverage::Auto;
    Ok(OperatorCheck {
        n_atoms,
        norm_minus: vacuum_correlation(&model, &minus, &minus, mode).re,
        norm_plus: vacuum_correlation(&model, &plus, &plus, mode).re,
        cross: vacuum_correlation(&model, &minus, &plus, mode).norm(),
        deviation_minus: heralded_commutator(&model, &minus, mode).deviation(),
        deviation_plus: heralded_commutator(&model, &plus, mode).deviation(),
    })
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn log_log_slope(points: &[(f64, f64)]) -> Result<f64> {
    if points.len() < 2 || points.iter().any(|&(x, y)| !(x > 0.0 && y > 0.0)) {
        return Err(Error::Numerical(
            "log-log fit needs at least two positive points".into(),
        ));
    }
    let n = points.len() as f64;
    let (sx, sy) = points
        .iter()
        .fold((0.0, 0.0), |(a, b), &(x, y)| (a + x.ln(), b + y.ln()));
    let (mx, my) = (sx / n, sy / n);
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for &(x, y) in points {
        let dx = x.ln() - mx;
        sxy += dx * (y.ln() - my);
        sxx += dx * dx;
    }
    if sxx == 0.0 {
        return Err(Error::Numerical(
            "log-log fit needs distinct abscissae".into(),
        ));
    }
    Ok(sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn phase_matching_limits() {
        let k_w = Vector3::new(0.0, 0.0, 7.9e6);
        let k_s = Vector3::new(1.0e5, -2.0e4, 7.8e6);
        let counter = WaveVectors {
            k_w,
            k_r: -k_w,
            k_s,
        };
        assert_eq!(phase_match(&counter), -k_s);
        let k_r = Vector3::new(3.0, 4.0, 5.0);
        assert_eq!(phase_match(&WaveVectors { k_w, k_r, k_s: k_w }), k_r);
    }

    #[test]
    fn idler_leaves_at_signal_angle_from_read() {
        let angle = 2f64.to_radians();
        let k = counter_propagating_geometry(795e-9, angle);
        let k_i = phase_match(&k);
        let between = (k_i.dot(&k.k_r) / (k_i.norm() * k.k_r.norm())).acos();
        assert!((between - angle).abs() < 1e-12);
        assert!((k_i.norm() - k.k_w.norm()).abs() / k.k_w.norm() < 1e-15);
    }

    #[test]
    fn slope_of_power_law() {
        let pts: Vec<(f64, f64)> = (4..=12).map(|n| (n as f64, 3.0 / n as f64)).collect();
        assert!((log_log_slope(&pts).unwrap() + 1.0).abs() < 1e-12);
        assert!(log_log_slope(&pts[..1]).is_err());
    }
}
