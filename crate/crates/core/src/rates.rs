//! Closed-form contraction and moment rates.

use serde::{Deserialize, Serialize};

use crate::coupling::{lambda0_dstar, ConcaveDistance};
use crate::error::{invalid, Error, Result};
use crate::model::{DissipativityParams, IDENTITY_TOL};
use crate::report::VerificationReport;

/// Every explicit constant of the contraction argument.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateBundle {
    pub c1: f64,
    pub c2: f64,
    /// Contraction rate, may be negative when `lambda3` is too large.
    pub lambda0_star: f64,
    pub lambda0_dstar: f64,
    /// Moment decay rate `(lambda2 - 2 lambda3) / 2`.
    pub lambda_star: f64,
    /// Supremum of admissible `lambda3`; the admissible set is the open
    /// interval below it.
    pub lambda3_star: f64,
    pub noise_sq: f64,
    /// Whether the model's own `lambda3` lies strictly below `lambda3_star`.
    pub lambda3_admissible: bool,
}

/// Fill a [`RateBundle`] from the dissipativity constants and the two
/// noise intensities. Only `sigma0^2 + sigma1^2` matters.
pub fn rate_constants(
    params: &DissipativityParams,
    sigma0: f64,
    sigma1: f64,
) -> Result<RateBundle> {
    params.validate()?;
    let noise_sq = sigma0 * sigma0 + sigma1 * sigma1;
    if !(noise_sq > 0.0) {
        return Err(Error::DegenerateNoise);
    }
    let d = ConcaveDistance::canonical(params, noise_sq)?;
    let (c1, c2, ell0) = (d.c1, d.c2, params.ell0);
    let dstar = lambda0_dstar(&d, params, noise_sq)?;
    let lambda0_star = lambda0_star_from(c1, c2, params);
    let lambda3_star = (dstar / (1.0 + (c1 * ell0).exp())).min(params.lambda2 / 2.0);
    Ok(RateBundle {
        c1,
        c2,
        lambda0_star,
        lambda0_dstar: dstar,
        lambda_star: (params.lambda2 - 2.0 * params.lambda3) / 2.0,
        lambda3_star,
        noise_sq,
        lambda3_admissible: params.lambda3 < lambda3_star,
    })
}

/// `c2 ell0 / (1 - e^{-c1 ell0} + c2 ell0) (l1 ∧ l2/2) - (1 + c1/c2) l3`.
fn lambda0_star_from(c1: f64, c2: f64, params: &DissipativityParams) -> f64 {
    let ell0 = params.ell0;
    let norm = -(-c1 * ell0).exp_m1() + c2 * ell0;
    c2 * ell0 / norm * params.dissipation_min() - (1.0 + c1 / c2) * params.lambda3
}

/// `ell0 (ell0 + (e^{c1 ell0} - 1)/c1)^{-1} (l1 ∧ l2/2) - (1 + e^{c1 ell0}) l3`,
/// using `c2 = c1 e^{-c1 ell0}`. The `ell0` in front cancels only at `ell0 = 1`.
pub fn lambda0_star_simplified(c1: f64, params: &DissipativityParams) -> f64 {
    let ell0 = params.ell0;
    let growth = (c1 * ell0).exp_m1() / c1;
    ell0 * params.dissipation_min() / (ell0 + growth) - (1.0 + (c1 * ell0).exp()) * params.lambda3
}

/// Recompute `lambda0*` from the bundle's `c1, c2` and compare it, and the
/// stored value, with the simplified closed form.
pub fn rate_identity_check(
    bundle: &RateBundle,
    params: &DissipativityParams,
) -> VerificationReport {
    let simplified = lambda0_star_simplified(bundle.c1, params);
    let recomputed = lambda0_star_from(bundle.c1, bundle.c2, params);
    let diff = (recomputed - simplified)
        .abs()
        .max((bundle.lambda0_star - simplified).abs());
    VerificationReport {
        pass: diff <= IDENTITY_TOL,
        max_violation: diff,
        arg_x: recomputed,
        arg_y: simplified,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub noise_sq: f64,
    pub c1: f64,
    pub lambda0_star: f64,
}

/// `lambda0*` along an increasing list of total noise intensities.
pub fn rate_noise_sweep(params: &DissipativityParams, noise_sq: &[f64]) -> Result<Vec<SweepPoint>> {
    if noise_sq.is_empty() {
        return Err(invalid("noise sweep needs at least one value"));
    }
    if noise_sq.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(invalid("noise sweep values must be strictly increasing"));
    }
    noise_sq
        .iter()
        .map(|&q| {
            let b = rate_constants(params, q.sqrt(), 0.0)?;
            Ok(SweepPoint {
                noise_sq: q,
                c1: b.c1,
                lambda0_star: b.lambda0_star,
            })
        })
        .collect()
}

/// `lambda* = (lambda2 - 2 lambda3) / 2`; requires `lambda2 > 2 lambda3`.
pub fn moment_rate(params: &DissipativityParams) -> Result<f64> {
    if !params.supports_moment_bound() {
        return Err(Error::PreconditionViolated(format!(
            "moment bound needs lambda2 > 2 lambda3 (lambda2 = {}, lambda3 = {})",
            params.lambda2, params.lambda3
        )));
    }
    Ok((params.lambda2 - 2.0 * params.lambda3) / 2.0)
}
