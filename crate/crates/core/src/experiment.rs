//! Config ingestion, experiment dispatch and artifact emission.
//!
//! A run is described by one JSON document ([`RunConfig`]). Every experiment
//! produces an [`Outcome`] whose artifacts are written by
//! [`write_artifacts`]: `summary.json`, `series_<name>.csv`, an optional
//! `run_record.csv` and `manifest.json`. The manifest is itself a valid
//! config that reproduces the CSV files byte for byte.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::coupling::{verify_psi_bound, ConcaveDistance, CutoffParam, PsiGrid};
use crate::error::{invalid, Error, Result};
use crate::metrics::{
    cal_w1_samples, chaos_error, coupled_marginal, leave_one_out_scaling, mean_stderr,
    moment_track, plain_marginal, w1_sorted, DistanceSeries, LooSettings,
};
use crate::model::{
    DiffusionSpec, DissipativityParams, DriftSpec, Grid, Kernel, MeasureSampler, ModelSpec,
    DEFAULT_ETA,
};
use crate::par::map_replicas;
use crate::rates::{rate_identity_check, rate_noise_sweep};
use crate::rng::derive_seed;
use crate::simulate::{record_trajectory, CouplingVariant, InitPair, InitSampler, SimConfig};

/// Version string embedded in every manifest.
pub const VERSION: &str = concat!("mkvlab-", env!("CARGO_PKG_VERSION"));

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Rates,
    VerifyAssumptions,
    PsiCheck,
    Contract,
    Chaos,
    CouplingConsistency,
    AppendixScaling,
    Moments,
}

impl Experiment {
    pub const ALL: [Experiment; 8] = [
        Experiment::Rates,
        Experiment::VerifyAssumptions,
        Experiment::PsiCheck,
        Experiment::Contract,
        Experiment::Chaos,
        Experiment::CouplingConsistency,
        Experiment::AppendixScaling,
        Experiment::Moments,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::Rates => "rates",
            Experiment::VerifyAssumptions => "verify-assumptions",
            Experiment::PsiCheck => "psi-check",
            Experiment::Contract => "contract",
            Experiment::Chaos => "chaos",
            Experiment::CouplingConsistency => "coupling-consistency",
            Experiment::AppendixScaling => "appendix-scaling",
            Experiment::Moments => "moments",
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Experiment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Experiment::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| invalid(format!("unknown experiment `{s}`")))
    }
}

fn default_eta() -> Option<f64> {
    Some(DEFAULT_ETA)
}

/// Model descriptor; `eta = null` disables the noise split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub drift: DriftSpec,
    pub diffusion: DiffusionSpec,
    pub dissipativity: DissipativityParams,
    #[serde(default = "default_eta")]
    pub eta: Option<f64>,
}

impl ModelConfig {
    pub fn build(&self, grid: &Grid) -> Result<ModelSpec> {
        let model = ModelSpec::new(self.drift.clone(), self.diffusion, self.dissipativity)?;
        match self.eta {
            Some(eta) => model.with_split(eta, grid),
            None => Ok(model),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingConfig {
    pub epsilon: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContractSettings {
    pub rate_fraction: f64,
    pub floor_constant: f64,
    pub min_r2: f64,
}

impl Default for ContractSettings {
    fn default() -> Self {
        Self {
            rate_fraction: 0.8,
            floor_constant: 20.0,
            min_r2: 0.95,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChaosSettings {
    pub n_list: Vec<usize>,
    pub n_ref: usize,
    pub t_probe: f64,
    #[serde(default = "two")]
    pub sigmas: f64,
}

fn two() -> f64 {
    2.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConsistencySettings {
    pub epsilons: Vec<f64>,
    pub baseline_runs: usize,
    pub pass_sigmas: f64,
    pub mutation_sigmas: f64,
}

impl Default for ConsistencySettings {
    fn default() -> Self {
        Self {
            epsilons: vec![0.5, 0.1, 0.02],
            baseline_runs: 32,
            pass_sigmas: 3.0,
            mutation_sigmas: 5.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AppendixSettings {
    pub n_list: Vec<usize>,
    pub n_ref: usize,
    pub trials: usize,
    pub t_probe: f64,
    #[serde(default = "slope_tolerance")]
    pub slope_tolerance: f64,
}

fn slope_tolerance() -> f64 {
    0.15
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MomentSettings {
    pub plateau_window: f64,
    pub multiplier: f64,
}

impl Default for MomentSettings {
    fn default() -> Self {
        Self {
            plateau_window: 10.0,
            multiplier: 5.0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RatesSettings {
    /// Values of `sigma0^2 + sigma1^2` for the sensitivity sweep.
    pub noise_sweep: Vec<f64>,
}

/// One experiment run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Set in manifests; ignored on input.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub version: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub experiment: Option<Experiment>,
    pub model: ModelConfig,
    pub sim: SimConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coupling: Option<CouplingConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init_a: Option<InitSampler>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init_b: Option<InitSampler>,
    #[serde(default)]
    pub shared_init_draws: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub grid: Grid,
    #[serde(default)]
    pub sampler: MeasureSampler,
    #[serde(default)]
    pub contract: ContractSettings,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chaos: Option<ChaosSettings>,
    #[serde(default)]
    pub consistency: ConsistencySettings,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub appendix: Option<AppendixSettings>,
    #[serde(default)]
    pub moments: MomentSettings,
    #[serde(default)]
    pub rates: RatesSettings,
}

impl RunConfig {
    /// Parse a JSON document; errors name the offending field path.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let mut path = e.path().to_string();
            let inner = e.into_inner();
            let message = inner.to_string();
            // serde reports a missing field at its parent; name the field itself
            if let Some(field) = message
                .strip_prefix("missing field `")
                .and_then(|r| r.split('`').next())
            {
                path = if path == "." {
                    field.to_string()
                } else {
                    format!("{path}.{field}")
                };
            }
            Error::Config { path, message }
        })
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn build_model(&self) -> Result<ModelSpec> {
        self.model.build(&self.grid)
    }

    pub fn epsilon(&self) -> Result<CutoffParam> {
        let c = self.coupling.ok_or_else(|| missing("coupling.epsilon"))?;
        CutoffParam::new(c.epsilon)
    }

    pub fn init_a(&self) -> Result<InitSampler> {
        self.init_a.ok_or_else(|| missing("init_a"))
    }

    pub fn init_pair(&self) -> Result<InitPair> {
        Ok(InitPair {
            a: self.init_a()?,
            b: self.init_b.ok_or_else(|| missing("init_b"))?,
            shared_draws: self.shared_init_draws,
        })
    }
}

fn missing(field: &str) -> Error {
    Error::Config {
        path: field.to_string(),
        message: "required by this experiment".into(),
    }
}

/// Named time series written as `series_<name>.csv`.
#[derive(Clone, Debug, PartialEq)]
pub struct NamedSeries {
    pub name: String,
    pub series: DistanceSeries,
}

/// Row of `run_record.csv`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RecordRow {
    pub t: f64,
    pub replica: u32,
    pub metric_name: &'static str,
    pub value: f64,
}

/// Result of one experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct Outcome {
    pub experiment: Experiment,
    pub pass: bool,
    pub summary: Value,
    pub series: Vec<NamedSeries>,
    pub records: Vec<RecordRow>,
}

impl Outcome {
    fn new(experiment: Experiment, pass: bool, summary: Value) -> Self {
        Self {
            experiment,
            pass,
            summary,
            series: Vec::new(),
            records: Vec::new(),
        }
    }

    fn with_series(mut self, name: &str, series: DistanceSeries) -> Self {
        self.series.push(NamedSeries {
            name: name.to_string(),
            series,
        });
        self
    }
}

/// Run `experiment` on `config`.
pub fn run(config: &RunConfig, experiment: Experiment) -> Result<Outcome> {
    match experiment {
        Experiment::Rates => run_rates(config),
        Experiment::VerifyAssumptions => run_verify(config),
        Experiment::PsiCheck => run_psi(config),
        Experiment::Contract => run_contract(config),
        Experiment::Chaos => run_chaos(config),
        Experiment::CouplingConsistency => run_consistency(config),
        Experiment::AppendixScaling => run_appendix(config),
        Experiment::Moments => run_moments(config),
    }
}

fn run_rates(config: &RunConfig) -> Result<Outcome> {
    let model = config.build_model()?;
    let bundle = model.rates()?;
    let identity = rate_identity_check(&bundle, &model.dissipativity);
    let moment_rate = crate::rates::moment_rate(&model.dissipativity).ok();
    let mut outcome = Outcome::new(
        Experiment::Rates,
        identity.pass,
        json!({
            "sigma0": model.sigma0(),
            "sigma1": model.sigma1(),
            "c1": bundle.c1,
            "c2": bundle.c2,
            "lambda0_star": bundle.lambda0_star,
            "lambda0_dstar": bundle.lambda0_dstar,
            "lambda3_star": bundle.lambda3_star,
            "lambda_star": bundle.lambda_star,
            "noise_sq": bundle.noise_sq,
            "lambda3_admissible": bundle.lambda3_admissible,
            "moment_rate": moment_rate,
            "identity_check": identity,
        }),
    );
    if !config.rates.noise_sweep.is_empty() {
        let sweep = rate_noise_sweep(&model.dissipativity, &config.rates.noise_sweep)?;
        let n = sweep.len();
        outcome = outcome.with_series(
            "noise_sweep",
            DistanceSeries::new(
                sweep.iter().map(|p| p.noise_sq).collect(),
                sweep.iter().map(|p| p.lambda0_star).collect(),
                vec![0.0; n],
            )?,
        );
    }
    Ok(outcome)
}

fn assumption_gate(config: &RunConfig, model: &ModelSpec) -> Result<()> {
    let reports = model.verify_all(&config.grid, &config.sampler)?;
    if let Some((check, max_violation)) = reports.first_failure() {
        return Err(Error::AssumptionRejected {
            check: check.to_string(),
            max_violation,
        });
    }
    Ok(())
}

fn run_verify(config: &RunConfig) -> Result<Outcome> {
    let model = config.build_model()?;
    let reports = model.verify_all(&config.grid, &config.sampler)?;
    let failure = reports
        .first_failure()
        .map(|(c, v)| json!({ "check": c, "max_violation": v }));
    Ok(Outcome::new(
        Experiment::VerifyAssumptions,
        reports.all_pass(),
        json!({ "reports": reports, "first_failure": failure }),
    ))
}

fn run_psi(config: &RunConfig) -> Result<Outcome> {
    let model = config.build_model()?;
    let bundle = model.rates()?;
    let params = &model.dissipativity;
    let d = ConcaveDistance::new(bundle.c1, bundle.c2)?;
    let grid = PsiGrid::for_params(params);
    let report = verify_psi_bound(&d, params, bundle.noise_sq, &grid)?;
    // coarse profile of psi + lambda0** f for plotting
    let k = 400;
    let radii: Vec<f64> = (1..=k).map(|i| grid.r_max * i as f64 / k as f64).collect();
    let values = radii
        .iter()
        .map(|&r| {
            crate::coupling::psi(&d, params, bundle.noise_sq, r) + bundle.lambda0_dstar * d.f(r)
        })
        .collect();
    Ok(Outcome::new(
        Experiment::PsiCheck,
        report.pass,
        json!({
            "c1": bundle.c1,
            "c2": bundle.c2,
            "lambda0_dstar": bundle.lambda0_dstar,
            "noise_sq": bundle.noise_sq,
            "grid_points": grid.points,
            "r_max": grid.r_max,
            "report": report,
        }),
    )
    .with_series(
        "psi_margin",
        DistanceSeries::new(radii, values, vec![0.0; k])?,
    ))
}

fn run_contract(config: &RunConfig) -> Result<Outcome> {
    let model = config.build_model()?;
    assumption_gate(config, &model)?;
    let bundle = model.rates()?;
    if !bundle.lambda3_admissible {
        return Err(Error::PreconditionViolated(format!(
            "lambda3 = {} is not below lambda3* = {}",
            model.dissipativity.lambda3, bundle.lambda3_star
        )));
    }
    let eps = config.epsilon()?;
    let init = config.init_pair()?;
    let samples = cal_w1_samples(&model, &config.sim, &init, eps)?;
    let series = samples.series();
    let settings = config.contract;
    let scale = 1.0 / config.sim.particles as f64 + eps.epsilon();
    let rate_threshold = settings.rate_fraction * bundle.lambda0_star;
    let floor_threshold = settings.floor_constant * scale;
    let base = json!({
        "lambda0_star": bundle.lambda0_star,
        "rate_threshold": rate_threshold,
        "floor_threshold": floor_threshold,
        "min_r2": settings.min_r2,
        "particles": config.sim.particles,
        "epsilon": eps.epsilon(),
        "replicas": config.sim.replicas,
        "horizon": config.sim.horizon(),
    });
    let mut summary = base;
    let pass = if series.values.iter().all(|&v| v == 0.0) {
        summary["trivial"] = json!("coupled systems coincide; the series is identically zero");
        true
    } else {
        match samples.fit_with_jackknife() {
            Ok((fit, rate_se, floor_se)) => {
                let pass = fit.rate >= rate_threshold
                    && fit.r2 >= settings.min_r2
                    && fit.plateau <= floor_threshold;
                summary["fit"] = serde_json::to_value(fit)?;
                summary["rate_stderr"] = json!(rate_se);
                summary["plateau_stderr"] = json!(floor_se);
                summary["fitted_floor_constant"] = json!(fit.plateau / scale);
                pass
            }
            Err(Error::NoDecayWindow) => {
                summary["fit"] = Value::Null;
                summary["hint"] = json!("no decay window: the floor dominates; raise the particle count or lower epsilon");
                false
            }
            Err(e) => return Err(e),
        }
    };
    Ok(Outcome::new(Experiment::Contract, pass, summary).with_series("w1", series))
}

fn run_chaos(config: &RunConfig) -> Result<Outcome> {
    let model = config.build_model()?;
    let settings = config.chaos.as_ref().ok_or_else(|| missing("chaos"))?;
    let init = config.init_a()?;
    let points = chaos_error(
        &model,
        &config.sim,
        &init,
        &settings.n_list,
        settings.n_ref,
        settings.t_probe,
    )?;
    let steps: Vec<Value> = points
        .windows(2)
        .map(|w| {
            let drop = w[0].error - w[1].error;
            let margin = settings.sigmas * (w[0].stderr.powi(2) + w[1].stderr.powi(2)).sqrt();
            json!({ "from": w[0].n, "to": w[1].n, "decrease": drop, "required": margin, "pass": drop > margin })
        })
        .collect();
    let pass = steps.iter().all(|s| s["pass"] == json!(true));
    let series = DistanceSeries::new(
        points.iter().map(|p| p.n as f64).collect(),
        points.iter().map(|p| p.error).collect(),
        points.iter().map(|p| p.stderr).collect(),
    )?;
    Ok(Outcome::new(
        Experiment::Chaos,
        pass,
        json!({ "n_ref": settings.n_ref, "t_probe": settings.t_probe, "points": points, "steps": steps }),
    )
    .with_series("chaos", series))
}

/// Marginal-consistency statistic at one `epsilon`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyRow {
    pub epsilon: f64,
    pub variant: CouplingVariant,
    pub distance: f64,
    /// `(distance - baseline mean) / baseline sd`.
    pub z: f64,
}

fn run_consistency(config: &RunConfig) -> Result<Outcome> {
    let model = config.build_model()?;
    let sim = config.sim;
    let settings = &config.consistency;
    if sim.replicas < 1024 {
        return Err(invalid(format!(
            "consistency needs at least 1024 replicas, got {}",
            sim.replicas
        )));
    }
    if sim.particles > 8 {
        return Err(invalid(
            "consistency compares single-particle marginals; use at most 8 particles",
        ));
    }
    if settings.epsilons.is_empty() || settings.baseline_runs < 2 {
        return Err(invalid(
            "consistency needs epsilons and at least 2 baseline runs",
        ));
    }
    let pair = config.init_pair()?;
    let seeded = |k: u64| SimConfig {
        master_seed: derive_seed(sim.master_seed, k),
        ..sim
    };
    let plain = plain_marginal(&model, &seeded(0), &pair.b)?;
    let baseline = (0..settings.baseline_runs as u64)
        .map(|k| {
            let p = plain_marginal(&model, &seeded(2 + 2 * k), &pair.b)?;
            let q = plain_marginal(&model, &seeded(3 + 2 * k), &pair.b)?;
            w1_sorted(&p, &q)
        })
        .collect::<Result<Vec<_>>>()?;
    let (base_mean, base_se) = mean_stderr(&baseline);
    let base_sd = base_se * (baseline.len() as f64).sqrt();
    let row = |eps: f64, variant| -> Result<ConsistencyRow> {
        let y = coupled_marginal(&model, &seeded(1), &pair, CutoffParam::new(eps)?, variant)?;
        let distance = w1_sorted(&y, &plain)?;
        Ok(ConsistencyRow {
            epsilon: eps,
            variant,
            distance,
            z: (distance - base_mean) / base_sd,
        })
    };
    let rows = settings
        .epsilons
        .iter()
        .map(|&e| row(e, CouplingVariant::Reflection))
        .collect::<Result<Vec<_>>>()?;
    let mutation = row(settings.epsilons[0], CouplingVariant::BrokenDriftMeasure)?;
    let consistent = rows.iter().all(|r| r.z.abs() <= settings.pass_sigmas);
    let detected = mutation.z > settings.mutation_sigmas;
    Ok(Outcome::new(
        Experiment::CouplingConsistency,
        consistent && detected,
        json!({
            "baseline_mean": base_mean,
            "baseline_sd": base_sd,
            "baseline_runs": baseline.len(),
            "pass_sigmas": settings.pass_sigmas,
            "mutation_sigmas": settings.mutation_sigmas,
            "rows": rows,
            "mutation": mutation,
            "consistent": consistent,
            "mutation_detected": detected,
        }),
    ))
}

fn run_appendix(config: &RunConfig) -> Result<Outcome> {
    let model = config.build_model()?;
    let settings = config
        .appendix
        .as_ref()
        .ok_or_else(|| missing("appendix"))?;
    let init = config.init_a()?;
    let loo = LooSettings {
        n_ref: settings.n_ref,
        trials: settings.trials,
        t_probe: settings.t_probe,
    };
    let out = leave_one_out_scaling(&model, &config.sim, &init, &settings.n_list, &loo)?;
    let pass = out
        .slope
        .is_some_and(|s| (s + 1.0).abs() <= settings.slope_tolerance);
    let series = DistanceSeries::new(
        out.points.iter().map(|p| p.n as f64).collect(),
        out.points.iter().map(|p| p.mean_sq_error).collect(),
        out.points.iter().map(|p| p.stderr).collect(),
    )?;
    let kernel = match model.drift {
        DriftSpec::ConfinementPlusKernel {
            kernel: Kernel::LinearMean,
            ..
        } => "linear_mean",
        DriftSpec::ConfinementPlusKernel {
            kernel: Kernel::ScaledSine { .. },
            ..
        } => "scaled_sine",
        _ => "saturated",
    };
    Ok(Outcome::new(
        Experiment::AppendixScaling,
        pass,
        json!({
            "kernel": kernel,
            "target_slope": -1.0,
            "slope_tolerance": settings.slope_tolerance,
            "slope": out.slope,
            "closed_form_slope": out.closed_form_slope,
            "points": out.points,
        }),
    )
    .with_series("loo_error", series))
}

fn run_moments(config: &RunConfig) -> Result<Outcome> {
    let model = config.build_model()?;
    let rate = crate::rates::moment_rate(&model.dissipativity)?;
    let init = config.init_a()?;
    let sim = config.sim;
    let tracks = map_replicas(sim.replicas, |r| {
        Ok(moment_track(&record_trajectory(&model, &sim, &init, r)?))
    })?;
    let times: Vec<f64> = tracks[0].iter().map(|p| p.t).collect();
    let mut values = Vec::with_capacity(times.len());
    let mut stderr = Vec::with_capacity(times.len());
    for k in 0..times.len() {
        let col: Vec<f64> = tracks.iter().map(|tr| tr[k].mean_abs).collect();
        let (m, s) = mean_stderr(&col);
        values.push(m);
        stderr.push(s);
    }
    let settings = config.moments;
    let window: Vec<f64> = times
        .iter()
        .zip(&values)
        .filter(|(t, _)| **t <= settings.plateau_window)
        .map(|(_, v)| *v)
        .collect();
    let plateau = window.iter().sum::<f64>() / window.len() as f64;
    let initial = values[0];
    let bound = initial + settings.multiplier * plateau;
    let peak = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut records = Vec::with_capacity(tracks.len() * times.len() * 2);
    for (r, tr) in tracks.iter().enumerate() {
        for p in tr {
            records.push(RecordRow {
                t: p.t,
                replica: r as u32,
                metric_name: "mean_abs",
                value: p.mean_abs,
            });
            records.push(RecordRow {
                t: p.t,
                replica: r as u32,
                metric_name: "max_abs",
                value: p.max_abs,
            });
        }
    }
    let mut outcome = Outcome::new(
        Experiment::Moments,
        peak <= bound,
        json!({
            "moment_rate": rate,
            "initial_mean_abs": initial,
            "plateau": plateau,
            "plateau_window": settings.plateau_window,
            "multiplier": settings.multiplier,
            "bound": bound,
            "peak_mean_abs": peak,
            "horizon": sim.horizon(),
        }),
    )
    .with_series("mean_abs", DistanceSeries::new(times, values, stderr)?);
    outcome.records = records;
    Ok(outcome)
}

/// Write all artifacts of `outcome` into `dir`, creating it if needed.
pub fn write_artifacts(
    outcome: &Outcome,
    config: &RunConfig,
    dir: &Path,
    elapsed_s: f64,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    let summary = json!({
        "experiment": outcome.experiment,
        "version": VERSION,
        "pass": outcome.pass,
        "elapsed_s": elapsed_s,
        "results": outcome.summary,
    });
    fs::write(
        dir.join("summary.json"),
        serde_json::to_string_pretty(&summary)? + "\n",
    )?;
    for s in &outcome.series {
        let mut w = csv::Writer::from_path(dir.join(format!("series_{}.csv", s.name)))?;
        w.write_record(["t", "value", "stderr"])?;
        for k in 0..s.series.len() {
            w.write_record(
                [s.series.times[k], s.series.values[k], s.series.stderr[k]].map(|v| v.to_string()),
            )?;
        }
        w.flush()?;
    }
    if !outcome.records.is_empty() {
        let mut w = csv::Writer::from_path(dir.join("run_record.csv"))?;
        for row in &outcome.records {
            w.serialize(row)?;
        }
        w.flush()?;
    }
    let manifest = RunConfig {
        version: Some(VERSION.to_string()),
        experiment: Some(outcome.experiment),
        output: Some(dir.to_path_buf()),
        ..config.clone()
    };
    fs::write(dir.join("manifest.json"), manifest.to_json()? + "\n")?;
    Ok(())
}

/// Run and write artifacts; returns the outcome.
pub fn run_and_write(config: &RunConfig, experiment: Experiment, dir: &Path) -> Result<Outcome> {
    let start = Instant::now();
    let outcome = run(config, experiment)?;
    write_artifacts(&outcome, config, dir, start.elapsed().as_secs_f64())?;
    Ok(outcome)
}
