//! Wasserstein distances, Monte Carlo estimators and decay fits.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::coupling::CutoffParam;
use crate::error::{invalid, Error, Result};
use crate::model::{DriftSpec, Kernel, ModelSpec};
use crate::par::map_replicas;
use crate::rng::{Lineage, StreamRole};
use crate::simulate::{
    simulate_coupled, simulate_trajectory, steps_for, CouplingVariant, InitPair, InitSampler,
    RunRecord, SimConfig,
};

/// Largest sample size accepted by [`w1_bruteforce`].
pub const BRUTEFORCE_MAX: usize = 8;

fn check_pair(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(invalid(format!(
            "w1 needs equal sizes, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(invalid("w1 needs at least one sample"));
    }
    if a.iter().chain(b).any(|v| v.is_nan()) {
        return Err(invalid("w1 samples must not be NaN"));
    }
    Ok(())
}

fn sorted(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_unstable_by(f64::total_cmp);
    s
}

/// W1 between two equal-size empirical measures via order statistics.
pub fn w1_sorted(a: &[f64], b: &[f64]) -> Result<f64> {
    check_pair(a, b)?;
    let (a, b) = (sorted(a), sorted(b));
    let sum: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum();
    Ok(sum / a.len() as f64)
}

/// W1 as the minimum over all bijections. Test oracle for small samples.
pub fn w1_bruteforce(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() > BRUTEFORCE_MAX || b.len() > BRUTEFORCE_MAX {
        return Err(Error::SizeLimit(format!(
            "brute force W1 is limited to {BRUTEFORCE_MAX} atoms"
        )));
    }
    check_pair(a, b)?;
    let a = sorted(a);
    let n = a.len();
    let mut perm = b.to_vec();
    let cost = |p: &[f64]| a.iter().zip(p).map(|(x, y)| (x - y).abs()).sum::<f64>();
    let mut best = cost(&perm);
    // Heap's algorithm, iterative
    let mut c = vec![0usize; n];
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            best = best.min(cost(&perm));
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    Ok(best / n as f64)
}

/// Mean and standard error of a sample.
pub fn mean_stderr(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Replica-averaged distance over time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistanceSeries {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub stderr: Vec<f64>,
}

impl DistanceSeries {
    pub fn new(times: Vec<f64>, values: Vec<f64>, stderr: Vec<f64>) -> Result<Self> {
        let s = Self {
            times,
            values,
            stderr,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.times.len() != self.values.len() || self.times.len() != self.stderr.len() {
            return Err(invalid("series columns must have equal lengths"));
        }
        if self.times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(invalid("series times must be strictly increasing"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// `d(t) ~ A e^{-rate t} + plateau`, with the rate read off the pre-floor window.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub rate: f64,
    pub intercept: f64,
    pub plateau: f64,
    pub r2: f64,
    pub window_lo: f64,
    pub window_hi: f64,
}

/// Minimum number of samples in the log-linear window.
pub const MIN_WINDOW: usize = 4;

struct LinFit {
    slope: f64,
    intercept: f64,
    r2: f64,
}

fn linear_fit(x: &[f64], y: &[f64]) -> LinFit {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        sxx += (a - mx) * (a - mx);
        sxy += (a - mx) * (b - my);
        syy += (b - my) * (b - my);
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = x
        .iter()
        .zip(y)
        .map(|(&a, &b)| (b - intercept - slope * a).powi(2))
        .sum();
    let r2 = if syy > 0.0 {
        (1.0 - ss_res / syy).clamp(0.0, 1.0)
    } else {
        1.0
    };
    LinFit {
        slope,
        intercept,
        r2,
    }
}

/// Least squares `A e^{-lambda t} + F` at fixed `lambda`, `F >= 0`.
/// Returns `(A, F, residual sum of squares)`.
fn amplitude_floor(t: &[f64], d: &[f64], lambda: f64) -> (f64, f64, f64) {
    let n = t.len() as f64;
    let e: Vec<f64> = t.iter().map(|&s| (-lambda * (s - t[0])).exp()).collect();
    let (se, see) = (e.iter().sum::<f64>(), e.iter().map(|v| v * v).sum::<f64>());
    let (sd, sed) = (
        d.iter().sum::<f64>(),
        e.iter().zip(d).map(|(a, b)| a * b).sum::<f64>(),
    );
    let det = see * n - se * se;
    let (mut a, mut f) = if det > 1e-12 * see * n {
        ((sed * n - se * sd) / det, (see * sd - se * sed) / det)
    } else {
        (0.0, sd / n)
    };
    if f < 0.0 {
        f = 0.0;
        a = sed / see;
    }
    let rss = e
        .iter()
        .zip(d)
        .map(|(ei, di)| (di - a * ei - f).powi(2))
        .sum();
    (a, f, rss)
}

/// Fit the decay-plus-floor model.
///
/// The floor comes from a separable least-squares fit of
/// `A e^{-lambda t} + F` (`F >= 0`). The rate, intercept and `r2` then come
/// from a log-linear fit of `log(max(d - F, 1e-12))` on the leading run of
/// samples with `d > 2F`.
pub fn fit_decay(series: &DistanceSeries) -> Result<DecayFit> {
    series.validate()?;
    if series.len() < 8 {
        return Err(invalid("decay fit needs at least 8 samples"));
    }
    let (t, d) = (&series.times, &series.values);
    if d.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(invalid("decay fit needs finite nonnegative values"));
    }
    let span = t[t.len() - 1] - t[0];
    let min_gap = t
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::INFINITY, f64::min);
    let (lo, hi) = ((1e-3 / span).ln(), (10.0 / min_gap).ln());
    let rss_at = |u: f64| amplitude_floor(t, d, u.exp()).2;
    const GRID: usize = 240;
    let grid: Vec<f64> = (0..=GRID)
        .map(|k| lo + (hi - lo) * k as f64 / GRID as f64)
        .collect();
    let best = (0..=GRID)
        .min_by(|&i, &j| rss_at(grid[i]).total_cmp(&rss_at(grid[j])))
        .unwrap_or(0);
    let (mut a, mut b) = (grid[best.saturating_sub(1)], grid[(best + 1).min(GRID)]);
    // golden section on log lambda
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let (mut c, mut e) = (b - g * (b - a), a + g * (b - a));
    let (mut fc, mut fe) = (rss_at(c), rss_at(e));
    for _ in 0..80 {
        if fc <= fe {
            b = e;
            e = c;
            fe = fc;
            c = b - g * (b - a);
            fc = rss_at(c);
        } else {
            a = c;
            c = e;
            fc = fe;
            e = a + g * (b - a);
            fe = rss_at(e);
        }
    }
    let lambda = ((a + b) / 2.0).exp();
    let (amp, floor, _) = amplitude_floor(t, d, lambda);
    if !(amp > 0.0) {
        return Err(Error::NoDecayWindow);
    }
    let len = d.iter().take_while(|&&v| v > 2.0 * floor).count();
    if len < MIN_WINDOW {
        return Err(Error::NoDecayWindow);
    }
    let y: Vec<f64> = d[..len]
        .iter()
        .map(|&v| (v - floor).max(1e-12).ln())
        .collect();
    let fit = linear_fit(&t[..len], &y);
    Ok(DecayFit {
        rate: -fit.slope,
        intercept: fit.intercept,
        plateau: floor,
        r2: fit.r2,
        window_lo: t[0],
        window_hi: t[len - 1],
    })
}

/// Per-replica W1 between the two coupled empirical measures.
#[derive(Clone, Debug, PartialEq)]
pub struct CoupledW1Samples {
    pub times: Vec<f64>,
    /// `per_replica[r][k]` is the distance of replica `r` at `times[k]`.
    pub per_replica: Vec<Vec<f64>>,
}

impl CoupledW1Samples {
    /// Replica mean with standard errors.
    pub fn series(&self) -> DistanceSeries {
        series_from(&self.times, &self.per_replica)
    }

    /// Decay fit of the mean series plus delete-one jackknife standard
    /// errors of `(rate, plateau)`. Replicas whose jackknife fit fails are
    /// skipped.
    pub fn fit_with_jackknife(&self) -> Result<(DecayFit, f64, f64)> {
        let fit = fit_decay(&self.series())?;
        let r = self.per_replica.len();
        let mut rates = Vec::with_capacity(r);
        let mut floors = Vec::with_capacity(r);
        for skip in 0..r {
            let rows: Vec<Vec<f64>> = self
                .per_replica
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != skip)
                .map(|(_, v)| v.clone())
                .collect();
            if let Ok(f) = fit_decay(&series_from(&self.times, &rows)) {
                rates.push(f.rate);
                floors.push(f.plateau);
            }
        }
        Ok((fit, jackknife_se(&rates), jackknife_se(&floors)))
    }
}

/// Difference of fitted floors `plateau(b) - plateau(a)` with a paired
/// delete-one jackknife standard error. Replica `r` of both runs must share
/// its common-noise path, i.e. both runs use the same master seed.
pub fn paired_floor_difference(a: &CoupledW1Samples, b: &CoupledW1Samples) -> Result<(f64, f64)> {
    let r = a.per_replica.len();
    if r != b.per_replica.len() || r < 2 {
        return Err(invalid(
            "paired floor comparison needs equal replica counts of at least 2",
        ));
    }
    let diff = fit_decay(&b.series())?.plateau - fit_decay(&a.series())?.plateau;
    let drop_one = |s: &CoupledW1Samples, skip: usize| {
        let rows: Vec<Vec<f64>> = s
            .per_replica
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != skip)
            .map(|(_, v)| v.clone())
            .collect();
        fit_decay(&series_from(&s.times, &rows)).map(|f| f.plateau)
    };
    let mut partial = Vec::with_capacity(r);
    for skip in 0..r {
        if let (Ok(fa), Ok(fb)) = (drop_one(a, skip), drop_one(b, skip)) {
            partial.push(fb - fa);
        }
    }
    Ok((diff, jackknife_se(&partial)))
}

fn jackknife_se(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    if v.len() < 2 {
        return f64::NAN;
    }
    let m = v.iter().sum::<f64>() / n;
    ((n - 1.0) / n * v.iter().map(|x| (x - m).powi(2)).sum::<f64>()).sqrt()
}

fn series_from(times: &[f64], rows: &[Vec<f64>]) -> DistanceSeries {
    let mut values = Vec::with_capacity(times.len());
    let mut stderr = Vec::with_capacity(times.len());
    let mut col = Vec::with_capacity(rows.len());
    for k in 0..times.len() {
        col.clear();
        col.extend(rows.iter().map(|r| r[k]));
        let (m, s) = mean_stderr(&col);
        values.push(m);
        stderr.push(s);
    }
    DistanceSeries {
        times: times.to_vec(),
        values,
        stderr,
    }
}

/// Run every replica of the coupled pair and record the W1 distance of the
/// two empirical measures at each snapshot.
pub fn cal_w1_samples(
    model: &ModelSpec,
    sim: &SimConfig,
    init: &InitPair,
    epsilon: CutoffParam,
) -> Result<CoupledW1Samples> {
    sim.validate()?;
    if sim.replicas < 2 {
        return Err(invalid("coupled W1 estimate needs at least 2 replicas"));
    }
    let rows = map_replicas(sim.replicas, |r| {
        let mut out = Vec::new();
        let mut err = None;
        simulate_coupled(
            model,
            sim,
            init,
            epsilon,
            CouplingVariant::Reflection,
            r,
            |_, s| match w1_sorted(&s.x.positions, &s.y.positions) {
                Ok(w) => out.push(w),
                Err(e) => err = Some(e),
            },
        )?;
        match err {
            Some(e) => Err(e),
            None => Ok(out),
        }
    })?;
    let steps = sim.steps();
    let times = (0..=steps)
        .step_by(sim.save_every)
        .map(|k| k as f64 * sim.dt)
        .collect();
    Ok(CoupledW1Samples {
        times,
        per_replica: rows,
    })
}

/// Replica-averaged coupled W1 series, an upper-bound estimator of the W1
/// distance between the conditional laws.
pub fn cal_w1_estimate(
    model: &ModelSpec,
    sim: &SimConfig,
    init: &InitPair,
    epsilon: CutoffParam,
) -> Result<DistanceSeries> {
    Ok(cal_w1_samples(model, sim, init, epsilon)?.series())
}

fn final_positions(
    model: &ModelSpec,
    sim: &SimConfig,
    init: &InitSampler,
    replica: u32,
) -> Result<Vec<f64>> {
    let steps = sim.steps();
    let mut last = Vec::new();
    simulate_trajectory(model, sim, init, replica, |k, e| {
        if k == steps {
            last = e.positions.clone();
        }
    })?;
    Ok(last)
}

fn probe_config(sim: &SimConfig, n: usize, t_probe: f64) -> SimConfig {
    let steps = steps_for(t_probe, sim.dt).max(1);
    SimConfig {
        t_end: t_probe,
        particles: n,
        save_every: steps,
        ..*sim
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChaosPoint {
    pub n: usize,
    pub error: f64,
    pub stderr: f64,
}

fn check_chaos_args(n_list: &[usize], n_ref: usize, t_probe: f64) -> Result<()> {
    if n_list.is_empty() || n_list[0] == 0 || n_list.windows(2).any(|w| w[1] <= w[0]) {
        return Err(invalid(
            "particle counts must be positive and strictly increasing",
        ));
    }
    let max = *n_list.last().unwrap_or(&0);
    if n_ref < 4 * max {
        return Err(invalid(format!(
            "reference size {n_ref} is below 4 x {max}"
        )));
    }
    if !(t_probe >= 0.0 && t_probe.is_finite()) {
        return Err(invalid("probe time must be finite and nonnegative"));
    }
    Ok(())
}

/// Errors of one replica, one per entry of `n_list`.
pub(crate) fn chaos_replica(
    model: &ModelSpec,
    sim: &SimConfig,
    init: &InitSampler,
    n_list: &[usize],
    n_ref: usize,
    t_probe: f64,
    replica: u32,
) -> Result<Vec<f64>> {
    let reference = final_positions(model, &probe_config(sim, n_ref, t_probe), init, replica)?;
    n_list
        .iter()
        .map(|&n| {
            let small = final_positions(model, &probe_config(sim, n, t_probe), init, replica)?;
            w1_sorted(&reference[..n], &small)
        })
        .collect()
}

/// Propagation-of-chaos error: W1 at `t_probe` between an `N`-particle
/// system and the first `N` particles of an `n_ref`-particle system driven
/// by the same common noise and nested idiosyncratic streams.
pub fn chaos_error(
    model: &ModelSpec,
    sim: &SimConfig,
    init: &InitSampler,
    n_list: &[usize],
    n_ref: usize,
    t_probe: f64,
) -> Result<Vec<ChaosPoint>> {
    sim.validate()?;
    check_chaos_args(n_list, n_ref, t_probe)?;
    let rows = map_replicas(sim.replicas, |r| {
        chaos_replica(model, sim, init, n_list, n_ref, t_probe, r)
    })?;
    let series = series_from(&n_list.iter().map(|&n| n as f64).collect::<Vec<_>>(), &rows);
    Ok(n_list
        .iter()
        .zip(series.values.iter().zip(&series.stderr))
        .map(|(&n, (&error, &stderr))| ChaosPoint { n, error, stderr })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LooPoint {
    pub n: usize,
    /// Monte Carlo mean of the squared leave-one-out drift error.
    pub mean_sq_error: f64,
    pub stderr: f64,
    /// Exact value where available (mean kernel).
    pub closed_form: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LooScaling {
    /// OLS slope of log error against log N; `None` if some error is 0.
    pub slope: Option<f64>,
    /// Same slope through the closed-form values, when available.
    pub closed_form_slope: Option<f64>,
    pub points: Vec<LooPoint>,
}

/// Settings of the leave-one-out experiment.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LooSettings {
    pub n_ref: usize,
    pub trials: usize,
    pub t_probe: f64,
}

/// Leave-one-out drift error versus `N` for a convolution drift.
///
/// A reference ensemble of `n_ref` particles is simulated to `t_probe` along
/// one common-noise path (replica 0). Each trial draws `N` samples with
/// replacement from it, which are exactly i.i.d. from the reference
/// empirical law `mu_ref`, and averages
/// `|b(X_i, mu^{N,i}) - b(X_i, mu_ref)|^2` over `i`, where `mu^{N,i}` drops
/// sample `i`.
pub fn leave_one_out_scaling(
    model: &ModelSpec,
    sim: &SimConfig,
    init: &InitSampler,
    n_list: &[usize],
    settings: &LooSettings,
) -> Result<LooScaling> {
    sim.validate()?;
    let Some((kernel, weight)) = model.drift.kernel() else {
        return Err(Error::UnsupportedFamily(
            "leave-one-out scaling needs a convolution drift".into(),
        ));
    };
    if n_list.is_empty() || n_list[0] < 2 || n_list.windows(2).any(|w| w[1] <= w[0]) {
        return Err(invalid(
            "particle counts must be at least 2 and strictly increasing",
        ));
    }
    if settings.trials < 2 || settings.n_ref < 2 {
        return Err(invalid(
            "leave-one-out needs at least 2 trials and 2 reference particles",
        ));
    }
    let reference = final_positions(
        model,
        &probe_config(sim, settings.n_ref, settings.t_probe),
        init,
        0,
    )?;
    let ref_drift = DriftSpec::ConfinementPlusKernel {
        confinement: vec![],
        kernel,
        weight,
    };
    let mean_ref = reference.iter().sum::<f64>() / reference.len() as f64;
    let var_ref = reference
        .iter()
        .map(|x| (x - mean_ref).powi(2))
        .sum::<f64>()
        / reference.len() as f64;

    let points = map_replicas(n_list.len(), |k| {
        let n = n_list[k as usize];
        let lineage = Lineage::new(sim.master_seed, k, StreamRole::Aux);
        let mut rng: ChaCha8Rng = lineage.stream(0);
        let mut per_trial = Vec::with_capacity(settings.trials);
        let mut sample = vec![0.0; n];
        for _ in 0..settings.trials {
            for s in sample.iter_mut() {
                *s = reference[rng.random_range(0..reference.len())];
            }
            per_trial.push(loo_trial(&ref_drift, kernel, weight, &sample, &reference));
        }
        let (mean_sq_error, stderr) = mean_stderr(&per_trial);
        let closed_form = matches!(kernel, Kernel::LinearMean)
            .then(|| weight * weight * var_ref / (n as f64 - 1.0));
        Ok(LooPoint {
            n,
            mean_sq_error,
            stderr,
            closed_form,
        })
    })?;
    let log_n: Vec<f64> = points.iter().map(|p| (p.n as f64).ln()).collect();
    let slope_of = |vals: &[f64]| -> Option<f64> {
        if points.len() < 2 || vals.iter().any(|v| !(*v > 0.0)) {
            return None;
        }
        let y: Vec<f64> = vals.iter().map(|v| v.ln()).collect();
        Some(linear_fit(&log_n, &y).slope)
    };
    let slope = slope_of(&points.iter().map(|p| p.mean_sq_error).collect::<Vec<_>>());
    let closed: Option<Vec<f64>> = points.iter().map(|p| p.closed_form).collect();
    let closed_form_slope = closed.and_then(|c| slope_of(&c));
    Ok(LooScaling {
        slope,
        closed_form_slope,
        points,
    })
}

/// Mean over `i` of the squared leave-one-out interaction error of one trial.
fn loo_trial(
    drift: &DriftSpec,
    kernel: Kernel,
    weight: f64,
    sample: &[f64],
    reference: &[f64],
) -> f64 {
    let n = sample.len();
    let m = (n - 1) as f64;
    if weight == 0.0 {
        return 0.0;
    }
    match kernel {
        Kernel::LinearMean => {
            let total: f64 = sample.iter().sum();
            let ref_mean = reference.iter().sum::<f64>() / reference.len() as f64;
            sample
                .iter()
                .map(|&x| {
                    let loo = (total - x) / m;
                    (weight * (loo - ref_mean)).powi(2)
                })
                .sum::<f64>()
                / n as f64
        }
        Kernel::ScaledSine { kappa } => {
            let (mut c, mut s) = (0.0, 0.0);
            let trig: Vec<(f64, f64)> = sample.iter().map(|&x| (kappa * x).sin_cos()).collect();
            for &(sx, cx) in &trig {
                c += cx;
                s += sx;
            }
            let ref_summary = drift.summarize(reference);
            trig.iter()
                .zip(sample)
                .map(|(&(sx, cx), &x)| {
                    let (cm, sm) = ((c - cx) / m, (s - sx) / m);
                    let loo = weight * (sx * cm - cx * sm) / kappa;
                    (loo - drift.eval_summary(x, &ref_summary)).powi(2)
                })
                .sum::<f64>()
                / n as f64
        }
        Kernel::Saturated { .. } => {
            sample
                .iter()
                .enumerate()
                .map(|(i, &x)| {
                    let loo = sample
                        .iter()
                        .enumerate()
                        .filter(|(j, _)| *j != i)
                        .map(|(_, &y)| kernel.eval(x - y))
                        .sum::<f64>()
                        / m;
                    (weight * loo - drift.eval_direct(x, reference)).powi(2)
                })
                .sum::<f64>()
                / n as f64
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentPoint {
    pub t: f64,
    pub mean_abs: f64,
    pub max_abs: f64,
}

/// Ensemble mean and maximum of `|X|` at each snapshot.
pub fn moment_track(run: &RunRecord) -> Vec<MomentPoint> {
    run.snapshots
        .iter()
        .map(|s| {
            let n = s.positions.len() as f64;
            MomentPoint {
                t: s.time,
                mean_abs: s.positions.iter().map(|x| x.abs()).sum::<f64>() / n,
                max_abs: s.positions.iter().fold(0.0, |m, x| m.max(x.abs())),
            }
        })
        .collect()
}

/// Value of particle 0 at the end of every replica of the plain system.
pub fn plain_marginal(model: &ModelSpec, sim: &SimConfig, init: &InitSampler) -> Result<Vec<f64>> {
    sim.validate()?;
    map_replicas(sim.replicas, |r| {
        Ok(final_positions(model, sim, init, r)?[0])
    })
}

/// Value of particle 0 of the coupled copy `y` at the end of every replica.
pub fn coupled_marginal(
    model: &ModelSpec,
    sim: &SimConfig,
    init: &InitPair,
    epsilon: CutoffParam,
    variant: CouplingVariant,
) -> Result<Vec<f64>> {
    sim.validate()?;
    map_replicas(sim.replicas, |r| {
        let s = simulate_coupled(model, sim, init, epsilon, variant, r, |_, _| {})?;
        Ok(s.y.positions[0])
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{DiffusionSpec, DissipativityParams, Grid, SigmaFamily};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn dyadic(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n)
            .map(|_| rng.random_range(-64i32..=64) as f64 / 8.0)
            .collect()
    }

    #[test]
    fn w1_examples() {
        assert_eq!(w1_sorted(&[0.3, -1.0], &[0.3, -1.0]).unwrap(), 0.0);
        assert_eq!(w1_sorted(&[0.0, 2.0], &[1.0, 3.0]).unwrap(), 1.0);
        assert_eq!(w1_sorted(&[0.0, 1.0], &[1.0, 0.0]).unwrap(), 0.0);
        assert_eq!(w1_bruteforce(&[3.0], &[5.0]).unwrap(), 2.0);
        assert_eq!(
            w1_bruteforce(&[0.0, 0.0, 10.0], &[0.0, 10.0, 10.0]).unwrap(),
            10.0 / 3.0
        );
        assert_eq!(
            w1_sorted(&[0.0, 0.0, 10.0], &[0.0, 10.0, 10.0]).unwrap(),
            10.0 / 3.0
        );
        assert!(matches!(
            w1_sorted(&[1.0], &[1.0, 2.0]),
            Err(Error::InvalidArgument(_))
        ));
        assert!(w1_sorted(&[], &[]).is_err());
        assert!(matches!(
            w1_bruteforce(&[0.0; 9], &[0.0; 9]),
            Err(Error::SizeLimit(_))
        ));
    }

    #[test]
    fn bruteforce_matches_sorted_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..2000 {
            let n = rng.random_range(1..=6);
            let (a, b) = (dyadic(&mut rng, n), dyadic(&mut rng, n));
            assert_eq!(
                w1_sorted(&a, &b).unwrap(),
                w1_bruteforce(&a, &b).unwrap(),
                "{a:?} {b:?}"
            );
        }
    }

    #[test]
    fn bruteforce_covers_all_permutations() {
        // only the reversed pairing is optimal here
        let a = [0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0];
        let b = [7.0, 6.0, 5.0, 4.0, 3.0, 2.0, 1.0, 0.0];
        assert_eq!(w1_bruteforce(&a, &b).unwrap(), 0.0);
    }

    proptest! {
        #[test]
        fn w1_metric_axioms(
            a in prop::collection::vec(-100.0f64..100.0, 1..20),
            seed in any::<u64>(),
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = a.len();
            let b: Vec<f64> = (0..n).map(|_| rng.random_range(-100.0..100.0)).collect();
            let c: Vec<f64> = (0..n).map(|_| rng.random_range(-100.0..100.0)).collect();
            let ab = w1_sorted(&a, &b).unwrap();
            prop_assert!(ab >= 0.0);
            prop_assert_eq!(ab, w1_sorted(&b, &a).unwrap());
            prop_assert_eq!(w1_sorted(&a, &a).unwrap(), 0.0);
            let ac = w1_sorted(&a, &c).unwrap();
            let cb = w1_sorted(&c, &b).unwrap();
            prop_assert!(ab <= ac + cb + 1e-12 * (ac + cb));
        }

        #[test]
        fn w1_shift_equals_offset(a in prop::collection::vec(-10.0f64..10.0, 1..30), shift in -5.0f64..5.0) {
            let b: Vec<f64> = a.iter().map(|x| x + shift).collect();
            prop_assert!((w1_sorted(&a, &b).unwrap() - shift.abs()).abs() < 1e-12);
        }
    }

    fn synthetic(a: f64, rate: f64, floor: f64) -> DistanceSeries {
        let times: Vec<f64> = (0..=100).map(|k| k as f64 * 0.1).collect();
        let values = times
            .iter()
            .map(|t| a * (-rate * t).exp() + floor)
            .collect();
        DistanceSeries::new(times, values, vec![0.0; 101]).unwrap()
    }

    #[test]
    fn fit_decay_examples() {
        let f = fit_decay(&synthetic(2.0, 0.5, 0.01)).unwrap();
        assert!((f.rate - 0.5).abs() < 0.01, "{f:?}");
        assert!((f.plateau - 0.01).abs() < 0.005, "{f:?}");

        let f = fit_decay(&synthetic(1.5, 0.7, 0.0)).unwrap();
        assert!((f.rate - 0.7).abs() < 1e-6, "{f:?}");
        assert!(f.r2 > 0.999999);
        assert_eq!((f.window_lo, f.window_hi), (0.0, 10.0));

        assert!(matches!(
            fit_decay(&synthetic(0.0, 0.5, 0.3)),
            Err(Error::NoDecayWindow)
        ));
        let short = DistanceSeries::new(vec![0.0, 1.0], vec![1.0, 0.5], vec![0.0; 2]).unwrap();
        assert!(fit_decay(&short).is_err());
    }

    #[test]
    fn fit_decay_randomized() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..100 {
            let rate = rng.random_range(0.2..1.5);
            let a = rng.random_range(0.5..4.0);
            let floor = rng.random_range(0.0..0.05);
            let mut s = synthetic(a, rate, floor);
            for v in &mut s.values {
                *v *= 1.0 + rng.random_range(-1e-3..1e-3);
            }
            let f = fit_decay(&s).unwrap();
            assert!(
                (f.rate - rate).abs() < 0.01 * rate.max(1.0),
                "{rate} {floor} {f:?}"
            );
            assert!((f.plateau - floor).abs() < 0.005, "{rate} {floor} {f:?}");
        }
    }

    #[test]
    fn series_rejects_bad_columns() {
        assert!(DistanceSeries::new(vec![0.0, 0.0], vec![1.0, 1.0], vec![0.0, 0.0]).is_err());
        assert!(DistanceSeries::new(vec![0.0, 1.0], vec![1.0], vec![0.0, 0.0]).is_err());
    }

    fn ou(sigma: f64, sigma0: f64) -> ModelSpec {
        ModelSpec::new(
            DriftSpec::Linear { theta: -1.0 },
            DiffusionSpec {
                family: SigmaFamily::Constant { c: sigma },
                kappa1: sigma * sigma,
                kappa2: sigma * sigma,
                lipschitz: 0.0,
                sigma0,
            },
            DissipativityParams::new(1.0, 2.0, 0.0, 1.0).unwrap(),
        )
        .unwrap()
        .with_split(0.5, &Grid::default())
        .unwrap()
    }

    fn sim(replicas: usize, particles: usize, t_end: f64) -> SimConfig {
        SimConfig {
            dt: 0.01,
            t_end,
            save_every: 10,
            replicas,
            master_seed: 5,
            particles,
        }
    }

    #[test]
    fn cal_w1_trivial_cases() {
        let model = ou(1.0, 0.5);
        let same = InitPair {
            a: InitSampler::GaussianPair { m: 0.0, s: 1.0 },
            b: InitSampler::GaussianPair { m: 0.0, s: 1.0 },
            shared_draws: true,
        };
        let eps = CutoffParam::new(0.01).unwrap();
        let s = cal_w1_estimate(&model, &sim(4, 16, 1.0), &same, eps).unwrap();
        assert!(s.values.iter().all(|&v| v == 0.0));

        let points = InitPair {
            a: InitSampler::Dirac { x0: 0.0 },
            b: InitSampler::Dirac { x0: 1.0 },
            shared_draws: false,
        };
        let s = cal_w1_estimate(&model, &sim(4, 16, 1.0), &points, eps).unwrap();
        assert_eq!((s.values[0], s.stderr[0]), (1.0, 0.0));
        assert_eq!(s.times.len(), 11);

        assert!(cal_w1_estimate(&model, &sim(1, 16, 1.0), &points, eps).is_err());
    }

    #[test]
    fn paired_floor_difference_of_identical_runs() {
        let times: Vec<f64> = (0..20).map(|k| k as f64 * 0.5).collect();
        let row = |a: f64| {
            times
                .iter()
                .map(|t| a * (-t).exp() + 0.1)
                .collect::<Vec<_>>()
        };
        let s = CoupledW1Samples {
            times: times.clone(),
            per_replica: vec![row(1.0), row(2.0), row(3.0)],
        };
        let (d, se) = paired_floor_difference(&s, &s).unwrap();
        assert_eq!((d, se), (0.0, 0.0));
        let shifted = CoupledW1Samples {
            times: times.clone(),
            per_replica: s
                .per_replica
                .iter()
                .map(|r| r.iter().map(|v| v + 0.05).collect())
                .collect(),
        };
        let (d, _) = paired_floor_difference(&s, &shifted).unwrap();
        assert!((d - 0.05).abs() < 1e-6, "{d}");
    }

    #[test]
    fn cal_w1_initial_value_matches_samples() {
        let model = ou(1.0, 0.5);
        let pair = InitPair {
            a: InitSampler::UniformInterval { a: -1.0, b: 1.0 },
            b: InitSampler::GaussianPair { m: 2.0, s: 0.5 },
            shared_draws: false,
        };
        let eps = CutoffParam::new(0.01).unwrap();
        let cfg = sim(3, 10, 0.1);
        let samples = cal_w1_samples(&model, &cfg, &pair, eps).unwrap();
        for r in 0..3u32 {
            let s = crate::simulate::initial_coupled(&pair, 10, cfg.master_seed, r, eps).unwrap();
            let w = w1_sorted(&s.x.positions, &s.y.positions).unwrap();
            assert_eq!(samples.per_replica[r as usize][0], w);
        }
    }

    #[test]
    fn chaos_trivial_and_args() {
        let model = ModelSpec::new(
            DriftSpec::ConfinementPlusKernel {
                confinement: vec![0.0, -1.0],
                kernel: Kernel::ScaledSine { kappa: 1.0 },
                weight: 0.25,
            },
            DiffusionSpec {
                family: SigmaFamily::Constant { c: 1.0 },
                kappa1: 1.0,
                kappa2: 1.0,
                lipschitz: 0.0,
                sigma0: 0.5,
            },
            DissipativityParams::new(1.0, 1.5, 0.25, 1.0).unwrap(),
        )
        .unwrap();
        let init = InitSampler::GaussianPair { m: 0.0, s: 1.0 };
        let cfg = sim(2, 8, 1.0);
        // N equal to the reference size: same system
        let e = chaos_replica(&model, &cfg, &init, &[16], 16, 0.5, 0).unwrap();
        assert_eq!(e, vec![0.0]);
        let e = chaos_error(&model, &cfg, &init, &[2, 4], 16, 0.0).unwrap();
        assert!(e.iter().all(|p| p.error == 0.0));
        assert!(chaos_error(&model, &cfg, &init, &[2, 8], 16, 1.0).is_err());
        assert!(chaos_error(&model, &cfg, &init, &[4, 2], 16, 1.0).is_err());
        let e = chaos_error(&model, &cfg, &init, &[2, 4], 16, 0.5).unwrap();
        assert!(e.iter().all(|p| p.error > 0.0));
    }

    #[test]
    fn loo_mean_kernel_closed_form() {
        let model = ModelSpec::new(
            DriftSpec::ConfinementPlusKernel {
                confinement: vec![0.0, -1.0],
                kernel: Kernel::LinearMean,
                weight: 0.5,
            },
            DiffusionSpec {
                family: SigmaFamily::Constant { c: 1.0 },
                kappa1: 1.0,
                kappa2: 1.0,
                lipschitz: 0.0,
                sigma0: 0.5,
            },
            DissipativityParams::new(1.0, 1.0, 0.5, 1.0).unwrap(),
        )
        .unwrap();
        let settings = LooSettings {
            n_ref: 512,
            trials: 4000,
            t_probe: 0.5,
        };
        let out = leave_one_out_scaling(
            &model,
            &sim(1, 1, 1.0),
            &InitSampler::GaussianPair { m: 0.0, s: 1.0 },
            &[8, 32, 128],
            &settings,
        )
        .unwrap();
        for p in &out.points {
            let exact = p.closed_form.unwrap();
            assert!((p.mean_sq_error - exact).abs() < 4.0 * p.stderr, "{p:?}");
        }
        let slope = out.closed_form_slope.unwrap();
        let n: [f64; 3] = [8.0, 32.0, 128.0];
        let x: Vec<f64> = n.iter().map(|v| v.ln()).collect();
        let y: Vec<f64> = n.iter().map(|v| -(v - 1.0).ln()).collect();
        assert!((slope - linear_fit(&x, &y).slope).abs() < 1e-12);
    }

    #[test]
    fn loo_zero_weight_and_family() {
        let diffusion = DiffusionSpec {
            family: SigmaFamily::Constant { c: 1.0 },
            kappa1: 1.0,
            kappa2: 1.0,
            lipschitz: 0.0,
            sigma0: 0.0,
        };
        let params = DissipativityParams::new(1.0, 2.0, 0.0, 1.0).unwrap();
        let settings = LooSettings {
            n_ref: 64,
            trials: 10,
            t_probe: 0.1,
        };
        let init = InitSampler::GaussianPair { m: 0.0, s: 1.0 };
        let flat = ModelSpec::new(
            DriftSpec::ConfinementPlusKernel {
                confinement: vec![0.0, -1.0],
                kernel: Kernel::ScaledSine { kappa: 1.0 },
                weight: 0.0,
            },
            diffusion,
            params,
        )
        .unwrap();
        let out = leave_one_out_scaling(&flat, &sim(1, 1, 1.0), &init, &[4, 8], &settings).unwrap();
        assert!(out.points.iter().all(|p| p.mean_sq_error == 0.0));
        assert_eq!(out.slope, None);

        let linear = ModelSpec::new(DriftSpec::Linear { theta: -1.0 }, diffusion, params).unwrap();
        assert!(matches!(
            leave_one_out_scaling(&linear, &sim(1, 1, 1.0), &init, &[4, 8], &settings),
            Err(Error::UnsupportedFamily(_))
        ));
    }

    #[test]
    fn loo_sine_matches_direct_sum() {
        let drift = DriftSpec::ConfinementPlusKernel {
            confinement: vec![],
            kernel: Kernel::ScaledSine { kappa: 1.3 },
            weight: 0.7,
        };
        let sample = [0.1, -0.4, 2.0, 1.1, -3.0];
        let reference = [0.0, 0.5, -1.0, 2.5, 0.2, -0.7];
        let fast = loo_trial(
            &drift,
            Kernel::ScaledSine { kappa: 1.3 },
            0.7,
            &sample,
            &reference,
        );
        let mut direct = 0.0;
        for i in 0..sample.len() {
            let others: Vec<f64> = sample
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, &y)| y)
                .collect();
            direct += (drift.eval_direct(sample[i], &others)
                - drift.eval_direct(sample[i], &reference))
            .powi(2);
        }
        assert!((fast - direct / 5.0).abs() < 1e-13);
    }

    #[test]
    fn moments_of_static_run() {
        let model = ModelSpec::new(
            DriftSpec::Linear { theta: 0.0 },
            DiffusionSpec {
                family: SigmaFamily::Constant { c: 0.0 },
                kappa1: 1.0,
                kappa2: 1.0,
                lipschitz: 0.0,
                sigma0: 0.0,
            },
            DissipativityParams::new(1.0, 2.0, 0.0, 1.0).unwrap(),
        )
        .unwrap();
        let run = crate::simulate::record_trajectory(
            &model,
            &sim(1, 5, 1.0),
            &InitSampler::Dirac { x0: 3.0 },
            0,
        )
        .unwrap();
        let m = moment_track(&run);
        assert_eq!(m.len(), 11);
        assert!(m.iter().all(|p| p.mean_abs == 3.0 && p.max_abs == 3.0));
    }

    #[test]
    fn ou_moment_plateau() {
        // b = -x, sigma0 = 1, no idiosyncratic noise: X = common OU, stationary sd 1/sqrt(2)
        let model = ModelSpec::new(
            DriftSpec::Linear { theta: -1.0 },
            DiffusionSpec {
                family: SigmaFamily::Constant { c: 0.0 },
                kappa1: 1.0,
                kappa2: 1.0,
                lipschitz: 0.0,
                sigma0: 1.0,
            },
            DissipativityParams::new(1.0, 2.0, 0.0, 1.0).unwrap(),
        )
        .unwrap();
        let cfg = SimConfig {
            dt: 0.01,
            t_end: 4.0,
            save_every: 400,
            replicas: 2000,
            master_seed: 9,
            particles: 1,
        };
        let vals = map_replicas(cfg.replicas, |r| {
            let run = crate::simulate::record_trajectory(
                &model,
                &cfg,
                &InitSampler::Dirac { x0: 0.0 },
                r,
            )?;
            Ok(moment_track(&run).last().unwrap().mean_abs)
        })
        .unwrap();
        let (m, se) = mean_stderr(&vals);
        // Euler stationary variance for dt: 1 / (2 - dt), t = 4 leaves e^{-8} transient
        let sd = (1.0 - (-8.0f64).exp()).sqrt() / (2.0 - cfg.dt).sqrt();
        let exact = sd * (2.0 / std::f64::consts::PI).sqrt();
        assert!((m - exact).abs() < 4.0 * se, "{m} {exact} {se}");
    }
}
