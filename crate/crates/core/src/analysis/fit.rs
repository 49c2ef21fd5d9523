use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::predictor::{fringe_amplitude, fringe_amplitude_ds, fringe_shape, fringe_shape_max};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LmOptions {
    pub max_iterations: usize,
    /// Relative step size below which the fit counts as converged.
    pub tolerance: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        LmOptions {
            max_iterations: 500,
            tolerance: 1e-12,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LmSolution {
    pub params: DVector<f64>,
    /// `(JᵀJ)⁻¹` at the solution; `None` when singular.
    pub covariance: Option<DMatrix<f64>>,
    pub chi2: f64,
    pub iterations: usize,
}

/// Levenberg–Marquardt minimization of `|r(p)|²`. `model` returns the
/// weighted residual vector and its Jacobian with respect to `p`.
pub fn levenberg_marquardt<F>(model: F, p0: &[f64], opts: &LmOptions) -> Result<LmSolution>
where
    F: Fn(&DVector<f64>) -> (DVector<f64>, DMatrix<f64>),
{
    let n = p0.len();
    let mut p = DVector::from_column_slice(p0);
    let (mut r, mut j) = model(&p);
    let mut chi2 = r.norm_squared();
    if !chi2.is_finite() {
        return Err(Error::Numerical(format!(
            "non-finite residuals at the starting point {p0:?}"
        )));
    }
    let mut lambda = 1e-3;
    let mut last_step = f64::NAN;
    for iteration in 1..=opts.max_iterations {
        let jt = j.transpose();
        let h = &jt * &j;
        let grad = &jt * &r;
        let diag_floor = 1e-12
            * (0..n)
                .map(|k| h[(k, k)])
                .fold(0.0, f64::max)
                .max(f64::MIN_POSITIVE);
        loop {
            let mut a = h.clone();
            for k in 0..n {
                a[(k, k)] += lambda * h[(k, k)].max(diag_floor);
            }
            let step = a.cholesky().map(|c| c.solve(&(-&grad)));
            let candidate = step.as_ref().map(|d| &p + d);
            let trial = candidate.as_ref().map(|pc| {
                let (rc, jc) = model(pc);
                let c2 = rc.norm_squared();
                (rc, jc, c2)
            });
            match (step, candidate, trial) {
                (Some(d), Some(pc), Some((rc, jc, c2))) if c2.is_finite() && c2 <= chi2 => {
                    let converged = (0..n)
                        .all(|k| d[k].abs() <= opts.tolerance * (pc[k].abs() + opts.tolerance))
                        || chi2 - c2 <= opts.tolerance * opts.tolerance * chi2;
                    last_step = d.amax();
                    p = pc;
                    r = rc;
                    j = jc;
                    chi2 = c2;
                    lambda = (lambda / 10.0).max(1e-15);
                    if converged {
                        return Ok(solution(p, &j, chi2, iteration));
                    }
                    break;
                }
                _ => {
                    lambda *= 10.0;
                    if lambda > 1e16 {
                        // No direction lowers χ² any further.
                        return Ok(solution(p, &j, chi2, iteration));
                    }
                }
            }
        }
    }
    Err(Error::Numerical(format!(
        "fit did not converge in {} iterations (chi2 = {chi2:e}, last step {last_step:e}, params {:?})",
        opts.max_iterations,
        p.as_slice()
    )))
}

fn solution(params: DVector<f64>, j: &DMatrix<f64>, chi2: f64, iterations: usize) -> LmSolution {
    LmSolution {
        params,
        covariance: (j.transpose() * j).try_inverse(),
        chi2,
        iterations,
    }
}

fn check_weights<'a>(values: impl Iterator<Item = (f64, f64, f64)> + 'a) -> Result<()> {
    for (x, y, s) in values {
        if !(x.is_finite() && y.is_finite()) {
            return Err(Error::invalid(format!("non-finite data point ({x}, {y})")));
        }
        if !(s > 0.0 && s.is_finite()) {
            return Err(Error::invalid(format!("uncertainty {s} must be positive")));
        }
    }
    Ok(())
}

/// Coincidence counts at one signal polarizer angle (radians).
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FringePoint {
    pub theta_s: f64,
    pub counts: f64,
    pub sigma: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FringeFit {
    pub amplitude: f64,
    pub background: f64,
    /// Added to `θs` in the model, reduced to `(-π/2, π/2]`.
    pub phase_offset: f64,
    /// `(C_max - C_min)/(C_max + C_min)` of the fitted curve.
    pub visibility: f64,
    pub chi2: f64,
    /// `(counts - model)/σ` per point.
    pub residuals: Vec<f64>,
    pub iterations: usize,
}

/// Weighted fit of `amplitude · f(θs + φ, θi; η) + background` with `η` and
/// `θi` held fixed. Several starting phases are tried and the lowest χ² kept.
pub fn fit_fringe(points: &[FringePoint], eta_fixed: f64, theta_i_fixed: f64) -> Result<FringeFit> {
    if points.len() < 4 {
        return Err(Error::Numerical(format!(
            "fringe fit needs at least 4 points, got {}",
            points.len()
        )));
    }
    check_weights(points.iter().map(|p| (p.theta_s, p.counts, p.sigma)))?;
    if !(eta_fixed.is_finite() && theta_i_fixed.is_finite()) {
        return Err(Error::invalid("eta and theta_i must be finite"));
    }
    let lo = points
        .iter()
        .map(|p| p.theta_s)
        .fold(f64::INFINITY, f64::min);
    let hi = points
        .iter()
        .map(|p| p.theta_s)
        .fold(f64::NEG_INFINITY, f64::max);
    if hi - lo < FRAC_PI_2 - 1e-9 {
        return Err(Error::Numerical(format!(
            "fringe points span {:.3}°, less than half a period",
            (hi - lo).to_degrees()
        )));
    }
    let f_max = fringe_shape_max(eta_fixed, theta_i_fixed);
    let c_max = points
        .iter()
        .map(|p| p.counts)
        .fold(f64::NEG_INFINITY, f64::max);
    let c_min = points
        .iter()
        .map(|p| p.counts)
        .fold(f64::INFINITY, f64::min);
    let a0 = if f_max > 0.0 {
        (c_max - c_min) / f_max
    } else {
        c_max - c_min
    };

    let model = |p: &DVector<f64>| {
        let (a, b, phi) = (p[0], p[1], p[2]);
        let mut r = DVector::zeros(points.len());
        let mut j = DMatrix::zeros(points.len(), 3);
        for (k, pt) in points.iter().enumerate() {
            let th = pt.theta_s + phi;
            let g = fringe_amplitude(eta_fixed, th, theta_i_fixed);
            let f = fringe_shape(eta_fixed, th, theta_i_fixed);
            r[k] = (a * f + b - pt.counts) / pt.sigma;
            j[(k, 0)] = f / pt.sigma;
            j[(k, 1)] = 1.0 / pt.sigma;
            j[(k, 2)] = a * g * fringe_amplitude_ds(eta_fixed, th, theta_i_fixed) / pt.sigma;
        }
        (r, j)
    };

    let mut best: Option<LmSolution> = None;
    let mut last_err = None;
    for k in -4..4 {
        let phi0 = k as f64 * PI / 8.0;
        match levenberg_marquardt(model, &[a0, c_min, phi0], &LmOptions::default()) {
            Ok(sol) => {
                if best.as_ref().is_none_or(|b| sol.chi2 < b.chi2) {
                    best = Some(sol);
                }
            }
            Err(e) => last_err = Some(e),
        }
        if a0 == 0.0 {
            break;
        }
    }
    let sol = match best {
        Some(s) => s,
        None => return Err(last_err.expect("at least one start was tried")),
    };
    let (a, b) = (sol.params[0], sol.params[1]);
    let phase_offset = {
        let r = sol.params[2].rem_euclid(PI);
        if r > FRAC_PI_2 {
            r - PI
        } else {
            r
        }
    };
    let ends = [b, a * f_max + b];
    let (top, bottom) = (ends[0].max(ends[1]), ends[0].min(ends[1]));
    if !(top + bottom > 0.0) {
        return Err(Error::Numerical(format!(
            "fitted fringe has non-positive extrema ({bottom}, {top}); visibility undefined"
        )));
    }
    let (r, _) = model(&sol.params);
    Ok(FringeFit {
        amplitude: a,
        background: b,
        phase_offset,
        visibility: (top - bottom) / (top + bottom),
        chi2: sol.chi2,
        residuals: r.iter().map(|x| -x).collect(),
        iterations: sol.iterations,
    })
}

/// [`fit_fringe`] for raw counts with Poisson errors. Weights come from the
/// fitted curve rather than the counts (`σ² = max(model, 1)`), refitting until
/// the visibility settles; `√counts` weights pull the background low.
pub fn fit_fringe_counts(
    theta_s: &[f64],
    counts: &[f64],
    eta_fixed: f64,
    theta_i_fixed: f64,
) -> Result<FringeFit> {
    if theta_s.len() != counts.len() {
        return Err(Error::invalid(format!(
            "{} angles but {} counts",
            theta_s.len(),
            counts.len()
        )));
    }
    if let Some(c) = counts.iter().find(|c| !(**c >= 0.0)) {
        return Err(Error::invalid(format!(
            "counts must be non-negative, got {c}"
        )));
    }
    let mut points: Vec<FringePoint> = theta_s
        .iter()
        .zip(counts)
        .map(|(&t, &c)| FringePoint {
            theta_s: t,
            counts: c,
            sigma: c.max(1.0).sqrt(),
        })
        .collect();
    let mut fit = fit_fringe(&points, eta_fixed, theta_i_fixed)?;
    for _ in 0..20 {
        for p in points.iter_mut() {
            let m = fit.amplitude
                * fringe_shape(eta_fixed, p.theta_s + fit.phase_offset, theta_i_fixed)
                + fit.background;
            p.sigma = m.max(1.0).sqrt();
        }
        let next = fit_fringe(&points, eta_fixed, theta_i_fixed)?;
        let settled = (next.visibility - fit.visibility).abs() < 1e-10;
        fit = next;
        if settled {
            break;
        }
    }
    Ok(fit)
}

/// g_si measured at one storage time.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DecayPoint {
    pub delta_t_ns: f64,
    pub g_si: f64,
    pub sigma: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DecayFit {
    pub tau_ns: f64,
    pub sigma_tau: f64,
    pub amplitude: f64,
    pub sigma_amplitude: f64,
    pub floor: f64,
    pub sigma_floor: f64,
    pub chi2: f64,
    pub iterations: usize,
}

/// Weighted fit of `floor + amplitude · exp(-Δt/τ)`. Uncertainties come
/// from the covariance of the fit with the given σ taken as absolute.
pub fn fit_exponential(points: &[DecayPoint]) -> Result<DecayFit> {
    check_weights(points.iter().map(|p| (p.delta_t_ns, p.g_si, p.sigma)))?;
    let mut ts: Vec<f64> = points.iter().map(|p| p.delta_t_ns).collect();
    ts.sort_by(f64::total_cmp);
    ts.dedup();
    if ts.len() < 3 {
        return Err(Error::Numerical(format!(
            "decay fit needs at least 3 distinct storage times, got {}",
            ts.len()
        )));
    }
    let span = ts[ts.len() - 1] - ts[0];
    let g_max = points
        .iter()
        .map(|p| p.g_si)
        .fold(f64::NEG_INFINITY, f64::max);
    let g_min = points.iter().map(|p| p.g_si).fold(f64::INFINITY, f64::min);

    let model = |p: &DVector<f64>| {
        let (floor, a, tau) = (p[0], p[1], p[2]);
        let mut r = DVector::zeros(points.len());
        let mut j = DMatrix::zeros(points.len(), 3);
        for (k, pt) in points.iter().enumerate() {
            let e = (-pt.delta_t_ns / tau).exp();
            r[k] = (floor + a * e - pt.g_si) / pt.sigma;
            j[(k, 0)] = 1.0 / pt.sigma;
            j[(k, 1)] = e / pt.sigma;
            j[(k, 2)] = a * e * pt.delta_t_ns / (tau * tau) / pt.sigma;
        }
        (r, j)
    };
    let sol = levenberg_marquardt(
        model,
        &[g_min, g_max - g_min, span / 2.0],
        &LmOptions::default(),
    )?;
    let (floor, a, tau) = (sol.params[0], sol.params[1], sol.params[2]);
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::Numerical(format!(
            "fitted decay constant {tau} is not positive"
        )));
    }
    let cov = sol
        .covariance
        .as_ref()
        .ok_or_else(|| Error::Numerical("decay fit covariance is singular".into()))?;
    Ok(DecayFit {
        tau_ns: tau,
        sigma_tau: cov[(2, 2)].sqrt(),
        amplitude: a,
        sigma_amplitude: cov[(1, 1)].sqrt(),
        floor,
        sigma_floor: cov[(0, 0)].sqrt(),
        chi2: sol.chi2,
        iterations: sol.iterations,
    })
}
