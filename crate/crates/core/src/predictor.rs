//! Closed-form coincidence fringes, polarization correlation functions and
//! the CHSH combination, with Poisson uncertainty propagation.

use std::f64::consts::{FRAC_PI_2, PI};

use serde::Serialize;

use crate::error::{Error, Result};

/// Polarizer orientations in radians. Polarizers have period π.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MeasurementSetting {
    pub theta_s: f64,
    pub theta_i: f64,
}

impl MeasurementSetting {
    pub fn new(theta_s: f64, theta_i: f64) -> Self {
        MeasurementSetting { theta_s, theta_i }
    }

    pub fn from_degrees(theta_s: f64, theta_i: f64) -> Self {
        MeasurementSetting::new(theta_s.to_radians(), theta_i.to_radians())
    }

    /// The four settings `(θs,θi), (θs⊥,θi⊥), (θs⊥,θi), (θs,θi⊥)` entering
    /// one correlation estimate, with `θ⊥ = θ + π/2`.
    pub fn quartet(&self) -> [MeasurementSetting; 4] {
        let (s, i) = (self.theta_s, self.theta_i);
        let (sp, ip) = (perpendicular(s), perpendicular(i));
        [
            MeasurementSetting::new(s, i),
            MeasurementSetting::new(sp, ip),
            MeasurementSetting::new(sp, i),
            MeasurementSetting::new(s, ip),
        ]
    }
}

pub fn perpendicular(theta: f64) -> f64 {
    theta + FRAC_PI_2
}

/// Reduces a polarizer angle to `[0, π)`.
pub fn reduce_angle(theta: f64) -> f64 {
    let r = theta.rem_euclid(PI);
    if r >= PI {
        0.0
    } else {
        r
    }
}

/// Coincidence fringe: `amplitude · f(θs, θi; η) + background`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FringeModel {
    pub eta: f64,
    pub amplitude: f64,
    pub background: f64,
}

impl FringeModel {
    pub fn new(eta: f64, amplitude: f64, background: f64) -> Result<Self> {
        if !(amplitude >= 0.0 && background >= 0.0) || !eta.is_finite() {
            return Err(Error::invalid(format!(
                "fringe model needs finite eta and non-negative amplitude/background, got {amplitude}, {background}"
            )));
        }
        Ok(FringeModel {
            eta,
            amplitude,
            background,
        })
    }
}

/// Angular shape `[(cos η + sin η) cos(θs-θi) + (cos η - sin η) cos(θs+θi)]² / 2`.
/// Its maximum is 1 at `η = π/4`.
pub fn fringe_shape(eta: f64, theta_s: f64, theta_i: f64) -> f64 {
    let g = fringe_amplitude(eta, theta_s, theta_i);
    g * g / 2.0
}

pub(crate) fn fringe_amplitude(eta: f64, theta_s: f64, theta_i: f64) -> f64 {
    let (s, c) = eta.sin_cos();
    (c + s) * (theta_s - theta_i).cos() + (c - s) * (theta_s + theta_i).cos()
}

/// `∂/∂θs` of [`fringe_amplitude`].
pub(crate) fn fringe_amplitude_ds(eta: f64, theta_s: f64, theta_i: f64) -> f64 {
    let (s, c) = eta.sin_cos();
    -(c + s) * (theta_s - theta_i).sin() - (c - s) * (theta_s + theta_i).sin()
}

/// Largest value of [`fringe_shape`] over `θs` at fixed `θi`. The minimum is
/// always zero.
pub fn fringe_shape_max(eta: f64, theta_i: f64) -> f64 {
    let (s, c) = eta.sin_cos();
    let (si, ci) = theta_i.sin_cos();
    2.0 * (c * c * ci * ci + s * s * si * si)
}

pub fn coincidence_rate(model: &FringeModel, setting: &MeasurementSetting) -> f64 {
    model.amplitude * fringe_shape(model.eta, setting.theta_s, setting.theta_i) + model.background
}

/// Counts at `(θs,θi), (θs⊥,θi⊥), (θs⊥,θi), (θs,θi⊥)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CountQuartet {
    pub same: f64,
    pub both_perp: f64,
    pub signal_perp: f64,
    pub idler_perp: f64,
}

impl CountQuartet {
    pub fn new(same: f64, both_perp: f64, signal_perp: f64, idler_perp: f64) -> Result<Self> {
        let q = CountQuartet {
            same,
            both_perp,
            signal_perp,
            idler_perp,
        };
        if !q.as_array().iter().all(|c| *c >= 0.0 && c.is_finite()) {
            return Err(Error::invalid(format!(
                "counts must be finite and non-negative: {q:?}"
            )));
        }
        Ok(q)
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.same, self.both_perp, self.signal_perp, self.idler_perp]
    }

    pub fn total(&self) -> f64 {
        self.as_array().iter().sum()
    }

    /// Expected counts of `model` at the quartet built on `setting`.
    pub fn predicted(model: &FringeModel, setting: &MeasurementSetting) -> Self {
        let [a, b, c, d] = setting.quartet().map(|s| coincidence_rate(model, &s));
        CountQuartet {
            same: a,
            both_perp: b,
            signal_perp: c,
            idler_perp: d,
        }
    }
}

/// A correlation estimate with its one-sigma uncertainty.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Correlation {
    pub value: f64,
    pub sigma: f64,
}

impl Correlation {
    pub fn new(value: f64, sigma: f64) -> Self {
        Correlation { value, sigma }
    }
}

/// `E = (C + C⊥⊥ - C⊥· - C·⊥) / (C + C⊥⊥ + C⊥· + C·⊥)`. The uncertainty treats
/// every count as an independent Poisson variable and propagates to first
/// order: `σ² = [(1-E)²(C + C⊥⊥) + (1+E)²(C⊥· + C·⊥)] / T²`.
#[allow(non_snake_case)]
pub fn correlation_E(q: &CountQuartet) -> Result<Correlation> {
    let total = q.total();
    if !(total > 0.0) {
        return Err(Error::Numerical(
            "correlation undefined: all four counts are zero".into(),
        ));
    }
    let plus = q.same + q.both_perp;
    let minus = q.signal_perp + q.idler_perp;
    let e = (plus - minus) / total;
    let var = ((1.0 - e).powi(2) * plus + (1.0 + e).powi(2) * minus) / (total * total);
    Ok(Correlation::new(e, var.sqrt()))
}

/// The CHSH angle set `{θs, θs′, θi, θi′}` in radians.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ChshAngles {
    pub theta_s: f64,
    pub theta_s_prime: f64,
    pub theta_i: f64,
    pub theta_i_prime: f64,
}

impl ChshAngles {
    pub fn from_degrees(
        theta_s: f64,
        theta_s_prime: f64,
        theta_i: f64,
        theta_i_prime: f64,
    ) -> Self {
        ChshAngles {
            theta_s: theta_s.to_radians(),
            theta_s_prime: theta_s_prime.to_radians(),
            theta_i: theta_i.to_radians(),
            theta_i_prime: theta_i_prime.to_radians(),
        }
    }

    /// `θs = -22.5°, θs′ = 22.5°, θi = 0°, θi′ = -45°`.
    pub fn canonical() -> Self {
        ChshAngles::from_degrees(-22.5, 22.5, 0.0, -45.0)
    }

    /// `(θs,θi), (θs′,θi), (θs,θi′), (θs′,θi′)`: the order entering S with signs `+ + + -`.
    pub fn settings(&self) -> [MeasurementSetting; 4] {
        [
            MeasurementSetting::new(self.theta_s, self.theta_i),
            MeasurementSetting::new(self.theta_s_prime, self.theta_i),
            MeasurementSetting::new(self.theta_s, self.theta_i_prime),
            MeasurementSetting::new(self.theta_s_prime, self.theta_i_prime),
        ]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ChshResult {
    pub angles: ChshAngles,
    pub settings: [MeasurementSetting; 4],
    pub e_values: [Correlation; 4],
    pub s: f64,
    pub sigma_s: f64,
}

impl ChshResult {
    /// Number of standard deviations by which `|S|` exceeds the local bound 2.
    pub fn violation_sigmas(&self) -> f64 {
        (self.s.abs() - 2.0) / self.sigma_s
    }
}

/// `S = E₁ + E₂ + E₃ - E₄` in the order of [`ChshAngles::settings`];
/// `σ_S` is the quadrature sum of the `σ_E`.
#[allow(non_snake_case)]
pub fn chsh_S(e_values: [Correlation; 4], angles: ChshAngles) -> ChshResult {
    let [e1, e2, e3, e4] = e_values;
    ChshResult {
        angles,
        settings: angles.settings(),
        e_values,
        s: e1.value + e2.value + e3.value - e4.value,
        sigma_s: e_values
            .iter()
            .map(|e| e.sigma * e.sigma)
            .sum::<f64>()
            .sqrt(),
    }
}

/// `E(θs, θi)` of the zero-background fringe at mixing angle `eta`.
pub fn predicted_correlation(eta: f64, setting: &MeasurementSetting) -> Result<f64> {
    let model = FringeModel::new(eta, 1.0, 0.0)?;
    Ok(correlation_E(&CountQuartet::predicted(&model, setting))?.value)
}

/// Ideal S from the zero-background fringe at mixing angle `eta`.
#[allow(non_snake_case)]
pub fn predict_ideal_S(eta: f64, angles: &ChshAngles) -> Result<f64> {
    if !(0.0..=FRAC_PI_2).contains(&eta) {
        return Err(Error::invalid(format!("eta = {eta} outside [0, pi/2]")));
    }
    let mut e = [Correlation::new(0.0, 0.0); 4];
    for (slot, setting) in e.iter_mut().zip(angles.settings()) {
        slot.value = predicted_correlation(eta, &setting)?;
    }
    Ok(chsh_S(e, *angles).s)
}
