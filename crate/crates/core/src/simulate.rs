//! Euler-Maruyama stepping of the interacting particle system and of the
//! reflection-coupled pair.
//!
//! One step of the interacting system, with the empirical measure frozen at
//! the start of the step:
//!
//! ```text
//! X_i += b(X_i, mu_N) dt + sigma1 sqrt(dt) xi1_i + bar_sigma(X_i) sqrt(dt) xi2_i + sigma0 sqrt(dt) zeta
//! ```
//!
//! The coupled copy `Y` reuses `xi1`, `xi2` and `zeta` but scales the
//! `sigma1` and `sigma0` increments by `pi = 1 - 2 h_eps(mean |X - Y|)`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::coupling::{mean_abs, CutoffParam};
use crate::error::{invalid, Error, Result};
use crate::model::{DriftSpec, ModelSpec};
use crate::rng::{Lineage, NoiseSource, StepNoise, StreamRole};

/// Initial law of every particle.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitSampler {
    Dirac {
        x0: f64,
    },
    UniformInterval {
        a: f64,
        b: f64,
    },
    /// Gaussian with mean `m` and standard deviation `s`.
    GaussianPair {
        m: f64,
        s: f64,
    },
}

impl InitSampler {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            InitSampler::Dirac { x0 } => x0.is_finite(),
            InitSampler::UniformInterval { a, b } => a.is_finite() && b.is_finite() && a <= b,
            InitSampler::GaussianPair { m, s } => m.is_finite() && s.is_finite() && s >= 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(invalid(format!("invalid initial sampler {self:?}")))
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            InitSampler::Dirac { x0 } => x0,
            InitSampler::UniformInterval { a, b } => {
                if a == b {
                    a
                } else {
                    rng.random_range(a..b)
                }
            }
            InitSampler::GaussianPair { m, s } => {
                m + s * rng.sample::<f64, _>(rand_distr::StandardNormal)
            }
        }
    }

    /// `E|X_0|` where it has a closed form.
    pub fn mean_abs(&self) -> f64 {
        match *self {
            InitSampler::Dirac { x0 } => x0.abs(),
            InitSampler::UniformInterval { a, b } => {
                if a >= 0.0 || b <= 0.0 {
                    ((a + b) / 2.0).abs()
                } else {
                    (a * a + b * b) / (2.0 * (b - a))
                }
            }
            InitSampler::GaussianPair { m, s } => {
                if s == 0.0 {
                    return m.abs();
                }
                // folded normal mean
                let z = m / s;
                s * (2.0 / std::f64::consts::PI).sqrt() * (-z * z / 2.0).exp()
                    + m * erf(z / std::f64::consts::SQRT_2)
            }
        }
    }
}

// Abramowitz-Stegun 7.1.26, |error| < 1.5e-7; only used for reporting.
fn erf(x: f64) -> f64 {
    let t = 1.0 / (1.0 + 0.327_591_1 * x.abs());
    let poly = t
        * (0.254_829_592
            + t * (-0.284_496_736
                + t * (1.421_413_741 + t * (-1.453_152_027 + t * 1.061_405_429))));
    let y = 1.0 - poly * (-x * x).exp();
    y.copysign(x)
}

/// `N` particle positions at one time point.
#[derive(Clone, Debug, PartialEq)]
pub struct Ensemble {
    pub positions: Vec<f64>,
    pub time: f64,
    pub lineage: Lineage,
}

impl Ensemble {
    /// Particle `i` draws its initial value from stream `(lineage, i)`.
    pub fn sample(init: &InitSampler, n: usize, lineage: Lineage) -> Result<Self> {
        if n == 0 {
            return Err(invalid("ensemble needs at least one particle"));
        }
        init.validate()?;
        let positions = (0..n)
            .map(|i| init.sample(&mut lineage.stream(i)))
            .collect();
        Ok(Self {
            positions,
            time: 0.0,
            lineage,
        })
    }

    pub fn from_positions(positions: Vec<f64>, lineage: Lineage) -> Result<Self> {
        if positions.is_empty() {
            return Err(invalid("ensemble needs at least one particle"));
        }
        Ok(Self {
            positions,
            time: 0.0,
            lineage,
        })
    }

    pub fn n(&self) -> usize {
        self.positions.len()
    }
}

/// How the coupled copy computes its drift.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CouplingVariant {
    /// Each system sees its own empirical measure.
    #[default]
    Reflection,
    /// Deliberately broken: the coupled copy evaluates its drift against the
    /// reference system's empirical measure. Only used as a mutation check.
    BrokenDriftMeasure,
}

/// Reference ensemble `x` and its reflection-coupled copy `y`.
#[derive(Clone, Debug, PartialEq)]
pub struct CoupledState {
    pub x: Ensemble,
    pub y: Ensemble,
    pub epsilon: CutoffParam,
    pub variant: CouplingVariant,
}

impl CoupledState {
    pub fn new(x: Ensemble, y: Ensemble, epsilon: CutoffParam) -> Result<Self> {
        if x.n() != y.n() {
            return Err(invalid("coupled ensembles must have equal size"));
        }
        if x.time != y.time {
            return Err(invalid("coupled ensembles must share the time point"));
        }
        Ok(Self {
            x,
            y,
            epsilon,
            variant: CouplingVariant::Reflection,
        })
    }

    /// `pi = 1 - 2 h_eps(mean |x_i - y_i|)` at the current state.
    pub fn reflection_factor(&self) -> f64 {
        let diffs = self
            .x
            .positions
            .iter()
            .zip(&self.y.positions)
            .map(|(a, b)| a - b);
        self.epsilon.factor(mean_abs(diffs))
    }
}

/// Time discretisation and Monte Carlo layout.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub dt: f64,
    pub t_end: f64,
    pub save_every: usize,
    pub replicas: usize,
    pub master_seed: u64,
    pub particles: usize,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt < 1.0) {
            return Err(invalid(format!("dt must lie in (0, 1), got {}", self.dt)));
        }
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            return Err(invalid("t_end must be finite and nonnegative"));
        }
        if self.save_every == 0 || self.replicas == 0 || self.particles == 0 {
            return Err(invalid(
                "save_every, replicas and particles must be positive",
            ));
        }
        Ok(())
    }

    /// Number of steps; `t_end / dt` rounded up.
    pub fn steps(&self) -> usize {
        steps_for(self.t_end, self.dt)
    }

    /// Horizon actually simulated, `steps * dt >= t_end`.
    pub fn horizon(&self) -> f64 {
        self.steps() as f64 * self.dt
    }
}

pub(crate) fn steps_for(t: f64, dt: f64) -> usize {
    let ratio = t / dt;
    let rounded = ratio.round();
    if (ratio - rounded).abs() < 1e-9 * ratio.max(1.0) {
        rounded as usize
    } else {
        ratio.ceil() as usize
    }
}

/// `b(x, empirical measure of ensemble)`.
pub fn drift_eval(drift: &DriftSpec, x: f64, ensemble: &Ensemble) -> f64 {
    drift.eval_summary(x, &drift.summarize(&ensemble.positions))
}

fn compute_drifts(drift: &DriftSpec, at: &[f64], measure: &[f64], out: &mut Vec<f64>) {
    let summary = drift.summarize(measure);
    out.clear();
    out.extend(at.iter().map(|&x| drift.eval_summary(x, &summary)));
}

/// Shared Euler-Maruyama update; `factor` scales the reflected terms.
fn advance(
    model: &ModelSpec,
    positions: &mut [f64],
    drifts: &[f64],
    factor: f64,
    dt: f64,
    noise: &StepNoise,
) -> bool {
    let sqrt_dt = dt.sqrt();
    let s1 = factor * model.sigma1() * sqrt_dt;
    let common = factor * model.sigma0() * sqrt_dt * noise.zeta;
    let mut finite = true;
    for (i, x) in positions.iter_mut().enumerate() {
        let bar = model.bar_sigma(*x) * sqrt_dt;
        *x += drifts[i] * dt + s1 * noise.xi1[i] + bar * noise.xi2[i] + common;
        finite &= x.is_finite();
    }
    finite
}

fn check_noise(n: usize, noise: &StepNoise) -> Result<()> {
    if noise.xi1.len() != n || noise.xi2.len() != n {
        return Err(invalid(format!(
            "noise for {} particles, ensemble has {n}",
            noise.xi1.len()
        )));
    }
    Ok(())
}

/// Advance the interacting system by one step in place.
pub fn step_interacting(
    model: &ModelSpec,
    e: &mut Ensemble,
    dt: f64,
    noise: &StepNoise,
) -> Result<()> {
    check_noise(e.n(), noise)?;
    let mut drifts = Vec::with_capacity(e.n());
    compute_drifts(&model.drift, &e.positions, &e.positions, &mut drifts);
    let ok = advance(model, &mut e.positions, &drifts, 1.0, dt, noise);
    e.time += dt;
    if !ok {
        return Err(Error::Diverged { time: e.time });
    }
    Ok(())
}

/// Advance the coupled pair by one step; returns the reflection factor used.
pub fn step_coupled(
    model: &ModelSpec,
    s: &mut CoupledState,
    dt: f64,
    noise: &StepNoise,
) -> Result<f64> {
    let n = s.x.n();
    check_noise(n, noise)?;
    let pi = s.reflection_factor();
    let mut dx = Vec::with_capacity(n);
    let mut dy = Vec::with_capacity(n);
    compute_drifts(&model.drift, &s.x.positions, &s.x.positions, &mut dx);
    let y_measure = match s.variant {
        CouplingVariant::Reflection => &s.y.positions,
        CouplingVariant::BrokenDriftMeasure => &s.x.positions,
    };
    compute_drifts(&model.drift, &s.y.positions, y_measure, &mut dy);
    let ok_x = advance(model, &mut s.x.positions, &dx, 1.0, dt, noise);
    let ok_y = advance(model, &mut s.y.positions, &dy, pi, dt, noise);
    s.x.time += dt;
    s.y.time = s.x.time;
    if !(ok_x && ok_y) {
        return Err(Error::Diverged { time: s.x.time });
    }
    Ok(pi)
}

/// Positions saved at one snapshot.
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub step: usize,
    pub time: f64,
    pub positions: Vec<f64>,
}

/// Time-indexed snapshots of one replica.
#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord {
    pub replica: u32,
    pub horizon: f64,
    pub snapshots: Vec<Snapshot>,
}

/// Run replica `replica` of the interacting system from `init`, calling
/// `recorder(step, ensemble)` at step 0 and every `save_every` steps.
/// Returns the simulated horizon.
pub fn simulate_trajectory(
    model: &ModelSpec,
    sim: &SimConfig,
    init: &InitSampler,
    replica: u32,
    mut recorder: impl FnMut(usize, &Ensemble),
) -> Result<f64> {
    sim.validate()?;
    let lineage = Lineage::new(sim.master_seed, replica, StreamRole::InitA);
    let mut e = Ensemble::sample(init, sim.particles, lineage)?;
    let mut source = NoiseSource::new(sim.master_seed, replica, sim.particles);
    let mut noise = StepNoise::zeros(sim.particles);
    recorder(0, &e);
    let steps = sim.steps();
    for k in 1..=steps {
        source.fill(&mut noise);
        step_interacting(model, &mut e, sim.dt, &noise)?;
        if k % sim.save_every == 0 {
            recorder(k, &e);
        }
    }
    Ok(sim.horizon())
}

/// [`simulate_trajectory`] collecting every snapshot.
pub fn record_trajectory(
    model: &ModelSpec,
    sim: &SimConfig,
    init: &InitSampler,
    replica: u32,
) -> Result<RunRecord> {
    let mut snapshots = Vec::new();
    let horizon = simulate_trajectory(model, sim, init, replica, |step, e| {
        snapshots.push(Snapshot {
            step,
            time: step as f64 * sim.dt,
            positions: e.positions.clone(),
        });
    })?;
    Ok(RunRecord {
        replica,
        horizon,
        snapshots,
    })
}

/// Initial laws of the two coupled systems.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitPair {
    pub a: InitSampler,
    pub b: InitSampler,
    /// Draw `y` from the same streams as `x` (identical samples when the
    /// laws coincide).
    #[serde(default)]
    pub shared_draws: bool,
}

/// Sample the initial coupled state of a replica.
pub fn initial_coupled(
    init: &InitPair,
    n: usize,
    master_seed: u64,
    replica: u32,
    epsilon: CutoffParam,
) -> Result<CoupledState> {
    let la = Lineage::new(master_seed, replica, StreamRole::InitA);
    let lb = if init.shared_draws {
        la
    } else {
        Lineage::new(master_seed, replica, StreamRole::InitB)
    };
    CoupledState::new(
        Ensemble::sample(&init.a, n, la)?,
        Ensemble::sample(&init.b, n, lb)?,
        epsilon,
    )
}

/// Run replica `replica` of the coupled pair, calling `recorder(step, state)`
/// at step 0 and every `save_every` steps.
pub fn simulate_coupled(
    model: &ModelSpec,
    sim: &SimConfig,
    init: &InitPair,
    epsilon: CutoffParam,
    variant: CouplingVariant,
    replica: u32,
    mut recorder: impl FnMut(usize, &CoupledState),
) -> Result<CoupledState> {
    sim.validate()?;
    let mut state = initial_coupled(init, sim.particles, sim.master_seed, replica, epsilon)?;
    state.variant = variant;
    let mut source = NoiseSource::new(sim.master_seed, replica, sim.particles);
    let mut noise = StepNoise::zeros(sim.particles);
    recorder(0, &state);
    for k in 1..=sim.steps() {
        source.fill(&mut noise);
        step_coupled(model, &mut state, sim.dt, &noise)?;
        if k % sim.save_every == 0 {
            recorder(k, &state);
        }
    }
    Ok(state)
}
