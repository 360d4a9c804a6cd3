//! Cutoff, reflection factor and the concave Lyapunov distance.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::{DissipativityParams, IDENTITY_TOL};
use crate::report::{VerificationReport, Worst};

/// Tolerance of the Lyapunov inequality check.
pub const PSI_TOL: f64 = 1e-10;

/// Reflection activation scale `epsilon`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CutoffParam(f64);

impl CutoffParam {
    pub fn new(epsilon: f64) -> Result<Self> {
        if !(epsilon.is_finite() && epsilon > 0.0) {
            return Err(invalid(format!("epsilon must be positive, got {epsilon}")));
        }
        Ok(Self(epsilon))
    }

    pub fn epsilon(self) -> f64 {
        self.0
    }

    /// `h_eps(r)` without argument checking.
    #[inline]
    pub fn h(self, r: f64) -> f64 {
        let eps = self.0;
        if r <= eps {
            0.0
        } else if r >= 2.0 * eps {
            1.0
        } else {
            -((r - eps) / (r - 2.0 * eps)).exp_m1()
        }
    }

    /// `1 - 2 h_eps(rho)`.
    #[inline]
    pub fn factor(self, rho: f64) -> f64 {
        1.0 - 2.0 * self.h(rho)
    }
}

/// `h_eps(r)`: 0 on `[0, eps]`, `1 - exp((r-eps)/(r-2eps))` on `(eps, 2eps)`,
/// 1 from `2eps` on.
pub fn cutoff(param: CutoffParam, r: f64) -> Result<f64> {
    if !(r >= 0.0) {
        return Err(invalid(format!("cutoff needs r >= 0, got {r}")));
    }
    Ok(param.h(r))
}

/// Mean absolute value `(1/N) sum |z_j|`.
#[inline]
pub fn mean_abs(z: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = z.len() as f64;
    z.map(f64::abs).sum::<f64>() / n
}

/// One-dimensional reflection factor `1 - 2 h_eps(||z||_1)` with the
/// normalised l1 norm. `+1` is synchronous, `-1` full reflection.
pub fn reflection_factor(param: CutoffParam, z: &[f64]) -> Result<f64> {
    if z.is_empty() {
        return Err(invalid("reflection factor of an empty difference vector"));
    }
    Ok(param.factor(mean_abs(z.iter().copied())))
}

/// `f(r) = 1 - exp(-c1 r) + c2 r`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConcaveDistance {
    pub c1: f64,
    pub c2: f64,
}

impl ConcaveDistance {
    pub fn new(c1: f64, c2: f64) -> Result<Self> {
        if !(c1 > 0.0 && c2 > 0.0 && c1.is_finite() && c2.is_finite()) {
            return Err(invalid("concave distance needs c1, c2 > 0"));
        }
        Ok(Self { c1, c2 })
    }

    /// Canonical constants `c1 = lambda1 ell0 / noise_sq`, `c2 = c1 exp(-c1 ell0)`.
    pub fn canonical(params: &DissipativityParams, noise_sq: f64) -> Result<Self> {
        if !(noise_sq > 0.0) {
            return Err(Error::DegenerateNoise);
        }
        let c1 = params.lambda1 * params.ell0 / noise_sq;
        Self::new(c1, c1 * (-c1 * params.ell0).exp())
    }

    #[inline]
    pub fn f(&self, r: f64) -> f64 {
        -(-self.c1 * r).exp_m1() + self.c2 * r
    }

    /// `1 - exp(-c1 ell0) + c2 ell0`, the normaliser shared by the rate formulas.
    pub fn f_at(&self, ell0: f64) -> f64 {
        self.f(ell0)
    }
}

/// `(f(r), f'(r), f''(r))` in closed form.
pub fn concave_distance_eval(d: &ConcaveDistance, r: f64) -> (f64, f64, f64) {
    let e = (-d.c1 * r).exp();
    (d.f(r), d.c1 * e + d.c2, -d.c1 * d.c1 * e)
}

/// `psi(r) = 1/2 f'(r) ((l1+l2) 1{r <= ell0} - l2) r + 2 noise_sq f''(r)`.
///
/// The indicator is closed at `ell0`.
pub fn psi(d: &ConcaveDistance, params: &DissipativityParams, noise_sq: f64, r: f64) -> f64 {
    let (_, f1, f2) = concave_distance_eval(d, r);
    let slope = if r <= params.ell0 {
        params.lambda1 + params.lambda2 - params.lambda2
    } else {
        -params.lambda2
    };
    0.5 * f1 * slope * r + 2.0 * noise_sq * f2
}

/// `lambda0**`, the minimum of the inner and outer Lyapunov rates.
pub fn lambda0_dstar(
    d: &ConcaveDistance,
    params: &DissipativityParams,
    noise_sq: f64,
) -> Result<f64> {
    if !(noise_sq > 0.0) {
        return Err(Error::DegenerateNoise);
    }
    let expected_c2 = d.c1 * (-d.c1 * params.ell0).exp();
    if (d.c2 - expected_c2).abs() > IDENTITY_TOL {
        return Err(Error::InconsistentConstants(format!(
            "c2 = {} but c1 exp(-c1 ell0) = {expected_c2}",
            d.c2
        )));
    }
    let norm = d.f_at(params.ell0);
    let inner = d.c1 * d.c2 * noise_sq / norm;
    let outer = d.c2 * params.lambda2 * params.ell0 / (2.0 * norm);
    Ok(inner.min(outer))
}

/// Radial grid for the Lyapunov check: `points` uniform samples of
/// `[0, r_max]` plus `ell0` and its two floating-point neighbours.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PsiGrid {
    pub r_max: f64,
    pub points: usize,
}

impl PsiGrid {
    pub fn for_params(params: &DissipativityParams) -> Self {
        Self {
            r_max: 20.0 * params.ell0,
            points: 100_000,
        }
    }

    pub fn radii(&self, ell0: f64) -> Result<Vec<f64>> {
        if !(self.r_max >= 10.0 * ell0) {
            return Err(invalid(format!(
                "psi grid needs r_max >= 10 ell0, got {}",
                self.r_max
            )));
        }
        if self.points < 2 {
            return Err(invalid("psi grid needs at least two points"));
        }
        let step = self.r_max / (self.points - 1) as f64;
        let mut r: Vec<f64> = (0..self.points).map(|i| i as f64 * step).collect();
        r.extend([ell0.next_down(), ell0, ell0.next_up()]);
        Ok(r)
    }
}

/// Max over the grid of `psi(r) + lambda0** f(r)`.
pub fn verify_psi_bound(
    d: &ConcaveDistance,
    params: &DissipativityParams,
    noise_sq: f64,
    grid: &PsiGrid,
) -> Result<VerificationReport> {
    let rate = lambda0_dstar(d, params, noise_sq)?;
    verify_psi_bound_with_rate(d, params, noise_sq, rate, grid)
}

/// Same check with an externally supplied rate.
pub fn verify_psi_bound_with_rate(
    d: &ConcaveDistance,
    params: &DissipativityParams,
    noise_sq: f64,
    rate: f64,
    grid: &PsiGrid,
) -> Result<VerificationReport> {
    let mut worst = Worst::new();
    for r in grid.radii(params.ell0)? {
        worst.offer(psi(d, params, noise_sq, r) + rate * d.f(r), r, r);
    }
    Ok(worst.report(PSI_TOL))
}
