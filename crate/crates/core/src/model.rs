//! Coefficient families, assumption constants and their grid verifiers.
//!
//! Drift and diffusion are restricted to closed-form families so that the
//! dissipativity, measure-Lipschitz and ellipticity conditions can be checked
//! mechanically:
//!
//! ```text
//! dX = b(X, mu) dt + sigma(X) dB + sigma0 dW
//! 2(x-y)(b(x,mu) - b(y,mu)) <= (l1+l2)|x-y|^2 1{|x-y| <= ell0} - l2 |x-y|^2
//! |b(x,mu) - b(x,nu)|       <= l3 W1(mu, nu)
//! k1 <= sigma(x)^2 <= k2
//! ```

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::metrics::w1_sorted;
use crate::report::{VerificationReport, Worst};

/// Absolute tolerance for closed-form identities.
pub const IDENTITY_TOL: f64 = 1e-12;

/// Default `eta` used to pick the noise split.
pub const DEFAULT_ETA: f64 = 0.9;

/// `(lambda1, lambda2, lambda3, ell0)` of the long-distance dissipativity
/// and measure-Lipschitz conditions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DissipativityParams {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub ell0: f64,
}

impl DissipativityParams {
    pub fn new(lambda1: f64, lambda2: f64, lambda3: f64, ell0: f64) -> Result<Self> {
        let p = Self {
            lambda1,
            lambda2,
            lambda3,
            ell0,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let all_finite = [self.lambda1, self.lambda2, self.lambda3, self.ell0]
            .iter()
            .all(|v| v.is_finite());
        if !all_finite {
            return Err(invalid("dissipativity parameters must be finite"));
        }
        if self.lambda1 <= 0.0 || self.lambda2 <= 0.0 {
            return Err(invalid("lambda1 and lambda2 must be positive"));
        }
        if self.lambda3 < 0.0 {
            return Err(invalid("lambda3 must be nonnegative"));
        }
        if self.ell0 < 1.0 {
            return Err(invalid("ell0 must be at least 1"));
        }
        Ok(())
    }

    /// `lambda2 > 2 lambda3`, required for uniform moment bounds.
    pub fn supports_moment_bound(&self) -> bool {
        self.lambda2 > 2.0 * self.lambda3
    }

    /// `lambda1 ∧ lambda2/2`.
    pub fn dissipation_min(&self) -> f64 {
        self.lambda1.min(self.lambda2 / 2.0)
    }
}

/// Interaction kernel `K`, always 1-Lipschitz.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Kernel {
    /// `K(z) = sin(kappa z) / kappa`
    ScaledSine { kappa: f64 },
    /// `K(z) = tanh(kappa z) / kappa`
    Saturated { kappa: f64 },
    /// `K(z) = z`, so the interaction only sees the mean of the measure.
    LinearMean,
}

impl Kernel {
    #[inline]
    pub fn eval(&self, z: f64) -> f64 {
        match *self {
            Kernel::ScaledSine { kappa } => (kappa * z).sin() / kappa,
            Kernel::Saturated { kappa } => (kappa * z).tanh() / kappa,
            Kernel::LinearMean => z,
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            Kernel::ScaledSine { kappa } | Kernel::Saturated { kappa } => {
                if !(kappa.is_finite() && kappa > 0.0) {
                    return Err(invalid("kernel kappa must be positive"));
                }
                Ok(())
            }
            Kernel::LinearMean => Ok(()),
        }
    }
}

/// Drift family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum DriftSpec {
    /// `b(x) = theta x`
    Linear { theta: f64 },
    /// `b(x) = a x - b x^3`
    DoubleWell { a: f64, b: f64 },
    /// `b(x, mu) = p(x) + weight * ∫ K(x - y) mu(dy)` where `p` has
    /// coefficients `confinement[k]` for `x^k`.
    ConfinementPlusKernel {
        confinement: Vec<f64>,
        kernel: Kernel,
        weight: f64,
    },
}

/// Whatever a drift needs to know about an empirical measure.
#[derive(Clone, Copy, Debug)]
pub enum MeasureSummary<'a> {
    Free,
    Mean(f64),
    /// Means of `cos(kappa y)` and `sin(kappa y)`.
    Trig {
        cos_mean: f64,
        sin_mean: f64,
    },
    Atoms(&'a [f64]),
}

impl DriftSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            DriftSpec::Linear { theta } if !theta.is_finite() => {
                Err(invalid("theta must be finite"))
            }
            DriftSpec::DoubleWell { a, b } if !(a.is_finite() && b.is_finite()) => {
                Err(invalid("double-well coefficients must be finite"))
            }
            DriftSpec::ConfinementPlusKernel {
                confinement,
                kernel,
                weight,
            } => {
                if !confinement.iter().all(|c| c.is_finite()) || !weight.is_finite() {
                    return Err(invalid(
                        "confinement coefficients and kernel weight must be finite",
                    ));
                }
                kernel.validate()
            }
            _ => Ok(()),
        }
    }

    /// Measure-free part of the drift.
    #[inline]
    pub fn confinement(&self, x: f64) -> f64 {
        match self {
            DriftSpec::Linear { theta } => theta * x,
            DriftSpec::DoubleWell { a, b } => a * x - b * x * x * x,
            DriftSpec::ConfinementPlusKernel { confinement, .. } => {
                confinement.iter().rev().fold(0.0, |acc, c| acc * x + c)
            }
        }
    }

    /// Divided difference `(p(x) - p(y)) / (x - y)` of the confinement,
    /// evaluated without cancellation.
    pub fn confinement_slope(&self, x: f64, y: f64) -> f64 {
        match self {
            DriftSpec::Linear { theta } => *theta,
            DriftSpec::DoubleWell { a, b } => a - b * (x * x + x * y + y * y),
            DriftSpec::ConfinementPlusKernel { confinement, .. } => {
                // sum_k c_k * sum_{j<k} x^j y^{k-1-j}
                let mut slope = 0.0;
                for (k, c) in confinement.iter().enumerate().skip(1) {
                    let mut term = 0.0;
                    for j in 0..k {
                        term += x.powi(j as i32) * y.powi((k - 1 - j) as i32);
                    }
                    slope += c * term;
                }
                slope
            }
        }
    }

    /// Constant `k` with `2(x-y)(I(x) - I(y)) <= 2 k |x-y|^2` for the
    /// interaction part `I(x) = weight * ∫K(x-z) mu(dz)`, uniformly in `mu`.
    pub fn interaction_spatial_bound(&self) -> f64 {
        match self {
            DriftSpec::ConfinementPlusKernel {
                kernel: Kernel::LinearMean,
                weight,
                ..
            } => *weight,
            DriftSpec::ConfinementPlusKernel { weight, .. } => weight.abs(),
            _ => 0.0,
        }
    }

    /// Lipschitz constant of `mu -> b(x, mu)` with respect to W1.
    pub fn measure_lipschitz(&self) -> f64 {
        match self {
            DriftSpec::ConfinementPlusKernel { weight, .. } => weight.abs(),
            _ => 0.0,
        }
    }

    pub fn is_measure_free(&self) -> bool {
        self.measure_lipschitz() == 0.0
    }

    pub fn kernel(&self) -> Option<(Kernel, f64)> {
        match self {
            DriftSpec::ConfinementPlusKernel { kernel, weight, .. } => Some((*kernel, *weight)),
            _ => None,
        }
    }

    /// Precompute the measure statistics the drift depends on.
    pub fn summarize<'a>(&self, atoms: &'a [f64]) -> MeasureSummary<'a> {
        match self.kernel() {
            None => MeasureSummary::Free,
            Some((_, 0.0)) => MeasureSummary::Free,
            Some((Kernel::LinearMean, _)) => {
                MeasureSummary::Mean(atoms.iter().sum::<f64>() / atoms.len() as f64)
            }
            Some((Kernel::ScaledSine { kappa }, _)) => {
                let (mut c, mut s) = (0.0, 0.0);
                for &y in atoms {
                    let (sy, cy) = (kappa * y).sin_cos();
                    c += cy;
                    s += sy;
                }
                let n = atoms.len() as f64;
                MeasureSummary::Trig {
                    cos_mean: c / n,
                    sin_mean: s / n,
                }
            }
            Some((Kernel::Saturated { .. }, _)) => MeasureSummary::Atoms(atoms),
        }
    }

    /// `b(x, mu)` from a precomputed summary of `mu`.
    #[inline]
    pub fn eval_summary(&self, x: f64, summary: &MeasureSummary<'_>) -> f64 {
        let base = self.confinement(x);
        let Some((kernel, weight)) = self.kernel() else {
            return base;
        };
        let interaction = match (*summary, kernel) {
            (MeasureSummary::Free, _) => return base,
            (MeasureSummary::Mean(m), _) => x - m,
            (MeasureSummary::Trig { cos_mean, sin_mean }, Kernel::ScaledSine { kappa }) => {
                // sin(k(x-y)) = sin(kx)cos(ky) - cos(kx)sin(ky)
                let (sx, cx) = (kappa * x).sin_cos();
                (sx * cos_mean - cx * sin_mean) / kappa
            }
            (MeasureSummary::Atoms(atoms), k) => {
                atoms.iter().map(|&y| k.eval(x - y)).sum::<f64>() / atoms.len() as f64
            }
            (MeasureSummary::Trig { .. }, _) => {
                unreachable!("trig summary only built for sine kernels")
            }
        };
        base + weight * interaction
    }

    /// `b(x, mu)` by direct summation over the atoms of `mu`.
    pub fn eval_direct(&self, x: f64, atoms: &[f64]) -> f64 {
        let base = self.confinement(x);
        match self.kernel() {
            Some((kernel, weight)) if !atoms.is_empty() => {
                let mean =
                    atoms.iter().map(|&y| kernel.eval(x - y)).sum::<f64>() / atoms.len() as f64;
                base + weight * mean
            }
            _ => base,
        }
    }
}

/// Diffusion coefficient family.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SigmaFamily {
    /// `sigma(x) = c`
    Constant { c: f64 },
    /// `sigma(x) = a + b sin(x)`
    BoundedWave { a: f64, b: f64 },
}

impl SigmaFamily {
    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            SigmaFamily::Constant { c } => c,
            SigmaFamily::BoundedWave { a, b } => a + b * x.sin(),
        }
    }

    /// Exact `inf_x sigma(x)^2`.
    pub fn inf_sq(&self) -> f64 {
        match *self {
            SigmaFamily::Constant { c } => c * c,
            SigmaFamily::BoundedWave { a, b } => {
                let gap = a.abs() - b.abs();
                if gap > 0.0 {
                    gap * gap
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiffusionSpec {
    pub family: SigmaFamily,
    /// Lower bound on `sigma^2`.
    pub kappa1: f64,
    /// Upper bound on `sigma^2`.
    pub kappa2: f64,
    /// Lipschitz constant of `sigma`.
    pub lipschitz: f64,
    /// Common-noise intensity.
    pub sigma0: f64,
}

impl DiffusionSpec {
    pub fn validate(&self) -> Result<()> {
        let vals = [self.kappa1, self.kappa2, self.lipschitz, self.sigma0];
        if !vals.iter().all(|v| v.is_finite()) {
            return Err(invalid("diffusion constants must be finite"));
        }
        if !(self.kappa1 > 0.0 && self.kappa1 <= self.kappa2) {
            return Err(invalid("need 0 < kappa1 <= kappa2"));
        }
        if self.lipschitz < 0.0 {
            return Err(invalid("sigma Lipschitz constant must be nonnegative"));
        }
        Ok(())
    }

    #[inline]
    pub fn sigma(&self, x: f64) -> f64 {
        self.family.eval(x)
    }
}

/// Split of the idiosyncratic noise into a constant part `sigma1` and a
/// remainder `bar_sigma(x)^2 = sigma(x)^2 - alpha kappa1`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSplit {
    pub alpha: f64,
    pub sigma1: f64,
    pub eta: f64,
    family: SigmaFamily,
}

impl NoiseSplit {
    #[inline]
    pub fn bar_sigma_sq(&self, x: f64) -> f64 {
        let s = self.family.eval(x);
        s * s - self.sigma1 * self.sigma1
    }

    #[inline]
    pub fn bar_sigma(&self, x: f64) -> f64 {
        self.bar_sigma_sq(x).max(0.0).sqrt()
    }

    /// `max_x |sigma1^2 + bar_sigma(x)^2 - sigma(x)^2|` over the grid.
    pub fn verify_reconstruction(&self, grid: &Grid) -> Result<VerificationReport> {
        let mut worst = Worst::new();
        for x in grid.points()? {
            let s = self.family.eval(x);
            let b = self.bar_sigma(x);
            let err = (self.sigma1 * self.sigma1 + b * b - s * s).abs();
            worst.offer(err, x, x);
        }
        Ok(worst.report(IDENTITY_TOL))
    }
}

/// Uniform 1-D grid `lo, lo + step, ..., <= hi`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
}

impl Default for Grid {
    fn default() -> Self {
        Self {
            lo: -20.0,
            hi: 20.0,
            step: 0.05,
        }
    }
}

impl Grid {
    pub fn new(lo: f64, hi: f64, step: f64) -> Self {
        Self { lo, hi, step }
    }

    pub fn points(&self) -> Result<Vec<f64>> {
        if !(self.lo.is_finite() && self.hi.is_finite() && self.step.is_finite()) {
            return Err(invalid("grid bounds must be finite"));
        }
        if self.step <= 0.0 || self.hi < self.lo {
            return Err(invalid("grid is empty (need step > 0 and hi >= lo)"));
        }
        let n = ((self.hi - self.lo) / self.step + 1e-9).floor() as usize;
        Ok((0..=n).map(|i| self.lo + i as f64 * self.step).collect())
    }
}

/// Full coefficient set of the McKean-Vlasov equation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub drift: DriftSpec,
    pub diffusion: DiffusionSpec,
    pub dissipativity: DissipativityParams,
    #[serde(default)]
    pub split: Option<NoiseSplit>,
}

impl ModelSpec {
    /// Model without a noise split; the idiosyncratic noise is stepped as
    /// `sigma(X) dB` directly.
    pub fn new(
        drift: DriftSpec,
        diffusion: DiffusionSpec,
        dissipativity: DissipativityParams,
    ) -> Result<Self> {
        drift.validate()?;
        dissipativity.validate()?;
        if !diffusion.sigma0.is_finite() {
            return Err(invalid("sigma0 must be finite"));
        }
        Ok(Self {
            drift,
            diffusion,
            dissipativity,
            split: None,
        })
    }

    pub fn with_split(mut self, eta: f64, grid: &Grid) -> Result<Self> {
        self.split = Some(split_noise(&self.diffusion, eta, grid)?);
        Ok(self)
    }

    #[inline]
    pub fn sigma0(&self) -> f64 {
        self.diffusion.sigma0
    }

    #[inline]
    pub fn sigma1(&self) -> f64 {
        self.split.map_or(0.0, |s| s.sigma1)
    }

    /// Multiplier of the second idiosyncratic Brownian motion at `x`.
    #[inline]
    pub fn bar_sigma(&self, x: f64) -> f64 {
        match &self.split {
            Some(s) => s.bar_sigma(x),
            None => self.diffusion.sigma(x),
        }
    }

    /// `sigma0^2 + sigma1^2`.
    pub fn noise_sq(&self) -> f64 {
        let (s0, s1) = (self.sigma0(), self.sigma1());
        s0 * s0 + s1 * s1
    }

    pub fn rates(&self) -> Result<crate::rates::RateBundle> {
        crate::rates::rate_constants(&self.dissipativity, self.sigma0(), self.sigma1())
    }

    /// Run every assumption verifier.
    pub fn verify_all(&self, grid: &Grid, sampler: &MeasureSampler) -> Result<AssumptionReports> {
        let dissipativity = verify_dissipativity(&self.drift, &self.dissipativity, grid)?;
        let sigma_bounds = verify_sigma_bounds(&self.diffusion, grid)?;
        let w1_lipschitz = verify_w1_lipschitz(&self.drift, self.dissipativity.lambda3, sampler)?;
        let split_reconstruction = self
            .split
            .map(|s| s.verify_reconstruction(grid))
            .transpose()?;
        let split_admissible = self.split.map(|s| {
            let inf = grid
                .points()
                .map(|pts| {
                    pts.iter()
                        .map(|&x| s.bar_sigma_sq(x))
                        .fold(f64::INFINITY, f64::min)
                })
                .unwrap_or(f64::NAN);
            inf > 0.0
        });
        Ok(AssumptionReports {
            dissipativity,
            sigma_bounds,
            w1_lipschitz,
            split_reconstruction,
            split_admissible,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReports {
    pub dissipativity: VerificationReport,
    pub sigma_bounds: VerificationReport,
    pub w1_lipschitz: VerificationReport,
    pub split_reconstruction: Option<VerificationReport>,
    pub split_admissible: Option<bool>,
}

impl AssumptionReports {
    pub fn all_pass(&self) -> bool {
        self.dissipativity.pass
            && self.sigma_bounds.pass
            && self.w1_lipschitz.pass
            && self.split_reconstruction.is_none_or(|r| r.pass)
            && self.split_admissible.unwrap_or(true)
    }

    /// First failing check, if any.
    pub fn first_failure(&self) -> Option<(&'static str, f64)> {
        let checks = [
            ("dissipativity", Some(self.dissipativity)),
            ("sigma_bounds", Some(self.sigma_bounds)),
            ("w1_lipschitz", Some(self.w1_lipschitz)),
            ("split_reconstruction", self.split_reconstruction),
        ];
        for (name, report) in checks {
            if let Some(r) = report {
                if !r.pass {
                    return Some((name, r.max_violation));
                }
            }
        }
        if self.split_admissible == Some(false) {
            return Some(("split_admissible", f64::NAN));
        }
        None
    }
}

/// Scan all grid pairs for violations of the dissipativity inequality.
///
/// The interaction part is replaced by its measure-uniform bound, so a pass
/// holds for every measure argument.
pub fn verify_dissipativity(
    drift: &DriftSpec,
    params: &DissipativityParams,
    grid: &Grid,
) -> Result<VerificationReport> {
    params.validate()?;
    let pts = grid.points()?;
    let interaction = drift.interaction_spatial_bound();
    let mut worst = Worst::new();
    for (i, &x) in pts.iter().enumerate() {
        for &y in &pts[i + 1..] {
            let d = x - y;
            let r = d.abs();
            let r2 = d * d;
            // Both sides share the factor |x-y|^2.
            let lhs = 2.0 * (drift.confinement_slope(x, y) + interaction);
            let rhs = if r <= params.ell0 {
                params.lambda1 + params.lambda2 - params.lambda2
            } else {
                -params.lambda2
            };
            worst.offer((lhs - rhs) * r2, x, y);
        }
    }
    if pts.len() < 2 {
        worst.offer(0.0, pts[0], pts[0]);
    }
    Ok(worst.report(IDENTITY_TOL))
}

/// Random small discrete measures used by [`verify_w1_lipschitz`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasureSampler {
    pub trials: usize,
    pub max_atoms: usize,
    pub spread: f64,
    pub seed: u64,
}

impl Default for MeasureSampler {
    fn default() -> Self {
        Self {
            trials: 4000,
            max_atoms: 8,
            spread: 5.0,
            seed: 0x5eed,
        }
    }
}

/// `|b(x,mu) - b(x,nu)| / W1(mu,nu)`, or `None` when `mu = nu` in W1.
pub fn lipschitz_ratio(drift: &DriftSpec, x: f64, mu: &[f64], nu: &[f64]) -> Result<Option<f64>> {
    let w = w1_sorted(mu, nu)?;
    let diff = (drift.eval_direct(x, mu) - drift.eval_direct(x, nu)).abs();
    if w == 0.0 {
        return if diff == 0.0 {
            Ok(None)
        } else {
            Ok(Some(f64::INFINITY))
        };
    }
    Ok(Some(diff / w))
}

/// Empirical check of `|b(x,mu) - b(x,nu)| <= lambda3 W1(mu,nu)`.
///
/// `max_violation` is the largest observed ratio minus `lambda3`; `arg_x` is
/// the evaluation point and `arg_y` the W1 distance of the worst pair.
pub fn verify_w1_lipschitz(
    drift: &DriftSpec,
    lambda3: f64,
    sampler: &MeasureSampler,
) -> Result<VerificationReport> {
    if !(1..=8).contains(&sampler.max_atoms) {
        return Err(invalid("measure sampler needs 1..=8 atoms"));
    }
    if !(lambda3 >= 0.0) {
        return Err(invalid("lambda3 must be nonnegative"));
    }
    drift.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(sampler.seed);
    let mut worst_ratio = 0.0_f64;
    let (mut arg_x, mut arg_w) = (0.0, 0.0);
    let s = sampler.spread;
    let mut mu = Vec::with_capacity(8);
    let mut nu = Vec::with_capacity(8);
    for trial in 0..sampler.trials {
        let n = rng.random_range(1..=sampler.max_atoms);
        mu.clear();
        nu.clear();
        mu.extend((0..n).map(|_| rng.random_range(-s..=s)));
        if trial % 4 == 0 {
            // rigid shifts saturate the bound for the mean kernel
            let shift = rng.random_range(-1.0..=1.0);
            nu.extend(mu.iter().map(|&y| y + shift));
        } else {
            nu.extend((0..n).map(|_| rng.random_range(-s..=s)));
        }
        let x = rng.random_range(-s..=s);
        if let Some(ratio) = lipschitz_ratio(drift, x, &mu, &nu)? {
            if ratio > worst_ratio || ratio.is_nan() {
                worst_ratio = ratio;
                arg_x = x;
                arg_w = w1_sorted(&mu, &nu)?;
            }
        }
    }
    Ok(VerificationReport {
        pass: worst_ratio <= lambda3 * (1.0 + 1e-9),
        max_violation: worst_ratio - lambda3,
        arg_x,
        arg_y: arg_w,
    })
}

/// Check `kappa1 <= sigma^2 <= kappa2` pointwise and the Lipschitz bound on
/// all grid pairs.
pub fn verify_sigma_bounds(diffusion: &DiffusionSpec, grid: &Grid) -> Result<VerificationReport> {
    let pts = grid.points()?;
    let sig: Vec<f64> = pts.iter().map(|&x| diffusion.sigma(x)).collect();
    let mut worst = Worst::new();
    for (&x, &s) in pts.iter().zip(&sig) {
        let s2 = s * s;
        worst.offer((diffusion.kappa1 - s2).max(s2 - diffusion.kappa2), x, x);
    }
    for i in 0..pts.len() {
        for j in i + 1..pts.len() {
            let v = (sig[i] - sig[j]).abs() - diffusion.lipschitz * (pts[i] - pts[j]).abs();
            worst.offer(v, pts[i], pts[j]);
        }
    }
    Ok(worst.report(IDENTITY_TOL))
}

/// Choose `alpha = eta * inf sigma^2 / kappa1` so that the remainder keeps a
/// fraction `1 - eta` of the ellipticity.
///
/// The infimum is the smaller of the grid minimum and the family's exact
/// infimum, so the split stays admissible between grid points.
pub fn split_noise(diffusion: &DiffusionSpec, eta: f64, grid: &Grid) -> Result<NoiseSplit> {
    if !(eta > 0.0 && eta < 1.0) {
        return Err(invalid(format!("eta must lie in (0, 1), got {eta}")));
    }
    diffusion.validate()?;
    let grid_inf = grid
        .points()?
        .iter()
        .map(|&x| {
            let s = diffusion.sigma(x);
            s * s
        })
        .fold(f64::INFINITY, f64::min);
    let inf = grid_inf.min(diffusion.family.inf_sq());
    if !(inf > 0.0) {
        return Err(Error::DegenerateDiffusion(format!(
            "inf sigma^2 = {inf} on the grid"
        )));
    }
    let alpha = eta * inf / diffusion.kappa1;
    Ok(NoiseSplit {
        alpha,
        sigma1: (alpha * diffusion.kappa1).sqrt(),
        eta,
        family: diffusion.family,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(l1: f64, l2: f64, l3: f64, ell0: f64) -> DissipativityParams {
        DissipativityParams::new(l1, l2, l3, ell0).unwrap()
    }

    fn constant(c: f64, k1: f64, k2: f64) -> DiffusionSpec {
        DiffusionSpec {
            family: SigmaFamily::Constant { c },
            kappa1: k1,
            kappa2: k2,
            lipschitz: 0.0,
            sigma0: 0.0,
        }
    }

    fn wave(a: f64, b: f64, k1: f64, k2: f64, lip: f64) -> DiffusionSpec {
        DiffusionSpec {
            family: SigmaFamily::BoundedWave { a, b },
            kappa1: k1,
            kappa2: k2,
            lipschitz: lip,
            sigma0: 0.0,
        }
    }

    #[test]
    fn params_reject_bad_values() {
        assert!(DissipativityParams::new(0.0, 1.0, 0.0, 1.0).is_err());
        assert!(DissipativityParams::new(1.0, 1.0, -0.1, 1.0).is_err());
        assert!(DissipativityParams::new(1.0, 1.0, 0.0, 0.5).is_err());
        assert!(params(1.0, 2.0, 0.5, 1.0).supports_moment_bound());
        assert!(!params(1.0, 2.0, 1.0, 1.0).supports_moment_bound());
    }

    #[test]
    fn linear_attractive_drift_is_dissipative() {
        let r = verify_dissipativity(
            &DriftSpec::Linear { theta: -1.0 },
            &params(0.01, 2.0, 0.0, 1.0),
            &Grid::default(),
        )
        .unwrap();
        assert!(r.pass, "{r:?}");
    }

    #[test]
    fn repulsive_drift_fails_with_growing_violation() {
        let drift = DriftSpec::Linear { theta: 1.0 };
        let p = params(1.0, 0.5, 0.0, 1.0);
        let small = verify_dissipativity(&drift, &p, &Grid::new(-2.0, 2.0, 0.05)).unwrap();
        let large = verify_dissipativity(&drift, &p, &Grid::new(-20.0, 20.0, 0.05)).unwrap();
        assert!(!small.pass && !large.pass);
        assert!(large.max_violation > small.max_violation);
        assert!(((large.arg_x - large.arg_y).abs() - 40.0).abs() < 1e-9);
    }

    #[test]
    fn double_well_passes_with_brute_force_oracle() {
        let drift = DriftSpec::DoubleWell { a: 1.0, b: 1.0 };
        let p = params(2.0, 2.0, 0.0, 8f64.sqrt());
        let grid = Grid::new(-6.0, 6.0, 0.05);
        // oracle: direct evaluation of both sides, no divided differences
        let pts = grid.points().unwrap();
        let b = |x: f64| x - x * x * x;
        let mut worst = f64::NEG_INFINITY;
        for &x in &pts {
            for &y in &pts {
                let r = (x - y).abs();
                let lhs = 2.0 * (x - y) * (b(x) - b(y));
                let ind = if r <= p.ell0 { 1.0 } else { 0.0 };
                let rhs = (p.lambda1 + p.lambda2) * r * r * ind - p.lambda2 * r * r;
                worst = worst.max(lhs - rhs);
            }
        }
        assert!(worst <= 1e-9, "oracle violation {worst}");
        let report = verify_dissipativity(&drift, &p, &Grid::default()).unwrap();
        assert!(report.pass, "{report:?}");
    }

    #[test]
    fn empty_grid_is_invalid() {
        let err = verify_dissipativity(
            &DriftSpec::Linear { theta: -1.0 },
            &params(1.0, 2.0, 0.0, 1.0),
            &Grid::new(1.0, 0.0, 0.1),
        );
        assert!(matches!(err, Err(Error::InvalidArgument(_))));
        assert!(Grid::new(0.0, 1.0, 0.0).points().is_err());
    }

    #[test]
    fn linear_sharpness_at_threshold() {
        for theta in [-0.3, -1.0, -2.5] {
            let drift = DriftSpec::Linear { theta };
            let edge = -2.0 * theta;
            let grid = Grid::new(-5.0, 5.0, 0.1);
            assert!(
                verify_dissipativity(&drift, &params(0.1, edge, 0.0, 1.0), &grid)
                    .unwrap()
                    .pass
            );
            assert!(
                verify_dissipativity(&drift, &params(0.1, edge * 0.7, 0.0, 1.0), &grid)
                    .unwrap()
                    .pass
            );
            assert!(
                !verify_dissipativity(&drift, &params(0.1, edge * 1.01, 0.0, 1.0), &grid)
                    .unwrap()
                    .pass
            );
        }
    }

    #[test]
    fn kernel_drift_uses_interaction_bound() {
        let drift = DriftSpec::ConfinementPlusKernel {
            confinement: vec![0.0, -1.0],
            kernel: Kernel::ScaledSine { kappa: 1.0 },
            weight: 0.25,
        };
        // 2(-1 + 0.25) = -1.5
        assert!(
            verify_dissipativity(&drift, &params(0.5, 1.5, 0.25, 1.0), &Grid::default())
                .unwrap()
                .pass
        );
        assert!(
            !verify_dissipativity(&drift, &params(0.5, 1.6, 0.25, 1.0), &Grid::default())
                .unwrap()
                .pass
        );
    }

    #[test]
    fn confinement_slope_matches_difference_quotient() {
        let drift = DriftSpec::ConfinementPlusKernel {
            confinement: vec![0.3, -1.0, 0.2, -0.5],
            kernel: Kernel::LinearMean,
            weight: 0.0,
        };
        for (x, y) in [(0.5, -1.25), (2.0, 3.0), (-4.0, 1.5)] {
            let q = (drift.confinement(x) - drift.confinement(y)) / (x - y);
            assert!((drift.confinement_slope(x, y) - q).abs() < 1e-12);
        }
    }

    #[test]
    fn w1_lipschitz_trivial_cases() {
        let sine = DriftSpec::ConfinementPlusKernel {
            confinement: vec![0.0, -1.0],
            kernel: Kernel::ScaledSine { kappa: 1.0 },
            weight: 1.0,
        };
        assert_eq!(
            lipschitz_ratio(&sine, 0.7, &[0.5, 1.0], &[1.0, 0.5]).unwrap(),
            None
        );
        let r = lipschitz_ratio(&sine, 0.3, &[0.0], &[1.0])
            .unwrap()
            .unwrap();
        assert!(r <= 1.0);
        assert!((r - (0.3f64.sin() - (0.3f64 - 1.0).sin()).abs()).abs() < 1e-15);

        let free = DriftSpec::ConfinementPlusKernel {
            confinement: vec![0.0, -1.0],
            kernel: Kernel::ScaledSine { kappa: 1.0 },
            weight: 0.0,
        };
        let rep = verify_w1_lipschitz(&free, 0.0, &MeasureSampler::default()).unwrap();
        assert!(rep.pass && rep.max_violation == 0.0);
        assert!(
            verify_w1_lipschitz(&sine, 1.0, &MeasureSampler::default())
                .unwrap()
                .pass
        );
    }

    #[test]
    fn w1_lipschitz_detects_understated_constant() {
        let mean = DriftSpec::ConfinementPlusKernel {
            confinement: vec![],
            kernel: Kernel::LinearMean,
            weight: 2.0,
        };
        assert!(
            verify_w1_lipschitz(&mean, 2.0, &MeasureSampler::default())
                .unwrap()
                .pass
        );
        let rep = verify_w1_lipschitz(&mean, 1.5, &MeasureSampler::default()).unwrap();
        assert!(!rep.pass);
        assert!((rep.max_violation - 0.5).abs() < 1e-9);
    }

    #[test]
    fn sigma_bounds_examples() {
        assert!(
            verify_sigma_bounds(&constant(1.0, 1.0, 1.0), &Grid::default())
                .unwrap()
                .pass
        );
        assert!(
            verify_sigma_bounds(&wave(2.0, 1.0, 1.0, 9.0, 1.0), &Grid::default())
                .unwrap()
                .pass
        );
        let bad = verify_sigma_bounds(&wave(1.0, 1.0, 0.5, 4.0, 1.0), &Grid::default()).unwrap();
        assert!(!bad.pass);
        // worst point sits next to a zero of 1 + sin(x)
        assert!((bad.arg_x.sin() + 1.0).abs() < 1e-2, "{bad:?}");
        // understated Lipschitz constant
        assert!(
            !verify_sigma_bounds(&wave(2.0, 1.0, 1.0, 9.0, 0.9), &Grid::default())
                .unwrap()
                .pass
        );
    }

    #[test]
    fn split_examples() {
        let s = split_noise(&constant(1.0, 1.0, 1.0), 0.5, &Grid::default()).unwrap();
        assert!((s.alpha - 0.5).abs() < 1e-15);
        assert!((s.sigma1 - 0.5f64.sqrt()).abs() < 1e-15);
        assert!((s.bar_sigma(3.0) - 0.5f64.sqrt()).abs() < 1e-15);

        assert!(matches!(
            split_noise(&constant(1.0, 1.0, 1.0), 1.0, &Grid::default()),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            split_noise(&constant(1.0, 1.0, 1.0), 0.0, &Grid::default()),
            Err(Error::InvalidArgument(_))
        ));

        let s = split_noise(&wave(2.0, 1.0, 1.0, 9.0, 1.0), 0.9, &Grid::default()).unwrap();
        assert!((s.alpha - 0.9).abs() < 1e-12);
        for x in Grid::default().points().unwrap() {
            assert!(s.bar_sigma_sq(x) >= 0.1 - 1e-12);
        }
        assert!(s.verify_reconstruction(&Grid::default()).unwrap().pass);
    }

    #[test]
    fn degenerate_diffusion_rejected() {
        let d = wave(1.0, 1.0, 0.5, 4.0, 1.0);
        assert!(matches!(
            split_noise(&d, 0.5, &Grid::default()),
            Err(Error::DegenerateDiffusion(_))
        ));
    }

    #[test]
    fn summary_matches_direct_sum() {
        let atoms = [0.3, -1.2, 2.5, 0.0, 4.1];
        for kernel in [
            Kernel::ScaledSine { kappa: 1.3 },
            Kernel::Saturated { kappa: 0.7 },
            Kernel::LinearMean,
        ] {
            let drift = DriftSpec::ConfinementPlusKernel {
                confinement: vec![0.1, -1.0],
                kernel,
                weight: 0.4,
            };
            let summary = drift.summarize(&atoms);
            for x in [-3.0, 0.2, 1.7] {
                let a = drift.eval_summary(x, &summary);
                let b = drift.eval_direct(x, &atoms);
                assert!((a - b).abs() < 1e-12, "{kernel:?} {a} {b}");
            }
        }
    }

    #[test]
    fn drift_serde_shape() {
        let json = r#"{"family":"confinement_plus_kernel","confinement":[0,-1],"kernel":{"kind":"scaled_sine","kappa":1},"weight":0.5}"#;
        let d: DriftSpec = serde_json::from_str(json).unwrap();
        assert_eq!(d.kernel(), Some((Kernel::ScaledSine { kappa: 1.0 }, 0.5)));
        let r = VerificationReport {
            pass: true,
            max_violation: -1.0,
            arg_x: 0.0,
            arg_y: 1.0,
        };
        let v = serde_json::to_value(r).unwrap();
        for key in ["pass", "max_violation", "arg_x", "arg_y"] {
            assert!(v.get(key).is_some());
        }
    }
}
