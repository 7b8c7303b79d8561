//! Run configuration, experiment dispatch and output files.
//!
//! Outputs of a run (all under the output directory):
//! - `diagnostics.csv`: `t,H,V,L4,bracket2,b_vzv,energy_residual`, norms of `v = u - z`
//! - `snapshot_<step>.csv` / `.json`: coefficients of `u` and a sidecar `{t, params_hash, seed, step}`
//! - experiment tables (`ou.csv`, `depend.csv`, `pullback.csv`, `absorb.csv`, `spectrum.csv`)
//!   with a JSON summary next to them
//! - `manifest.json`: config hash, seed, versions, status

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Result, SnsError};
use crate::flow_fields::{read_coeffs_csv, write_coeffs_csv, SpectralField};
use crate::galerkin_solver::{GalerkinSolver, NoiseInput, Scheme, SolverConfig, Trajectory};
use crate::harmonic_basis::degree_eigenvalue;
use crate::nonlinear::{estimate_report, DealiasPolicy};
use crate::rds_experiments::{
    absorbing_radius, continuous_dependence, pullback_compactness, AbsorbingSetup, PerturbationDirections, PullbackPlan,
};
use crate::sphere_operators::{ModelParams, OperatorVariant};
use crate::stochastic_forcing::{
    member_seed, mode_noise_amplitude, stationary_variance, steps_of, NoisePath, NoiseSpec, OuStepper,
};

pub const FORMAT_VERSION: &str = "sphere-sns streamfunction v1";

/// One coefficient `(u, Z_{l,m})` of a real field; the `-m` partner is implied.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeEntry {
    pub l: usize,
    pub m: i64,
    pub re: f64,
    #[serde(default)]
    pub im: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsConfig {
    pub nu: f64,
    #[serde(default)]
    pub rotation: f64,
    #[serde(default)]
    pub alpha: f64,
    #[serde(alias = "L")]
    pub l_max: usize,
    #[serde(default)]
    pub variant: OperatorVariant,
    #[serde(default)]
    pub forcing: Vec<ModeEntry>,
    #[serde(default)]
    pub dealias: DealiasPolicy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialCondition {
    Zero,
    /// Random smooth field with `||u0|| = amplitude`; seeded from the run seed.
    Random {
        #[serde(default = "one")]
        amplitude: f64,
        #[serde(default = "one")]
        decay: f64,
    },
    Modes {
        modes: Vec<ModeEntry>,
    },
    /// A coefficient file in the snapshot format.
    File {
        path: PathBuf,
    },
}

impl Default for InitialCondition {
    fn default() -> Self {
        InitialCondition::Random {
            amplitude: 1.0,
            decay: 1.0,
        }
    }
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Experiment {
    Simulate {
        #[serde(default)]
        initial: InitialCondition,
        /// Steps between snapshot files; 0 disables them.
        #[serde(default)]
        snapshot_every: usize,
    },
    /// Single-path time averages of `|z_{l,m}|^2` over `solver.t_end` against the stationary law.
    Ou {
        #[serde(default = "default_ou_burn_in")]
        burn_in: f64,
    },
    Depend {
        #[serde(default)]
        initial: InitialCondition,
        #[serde(default = "default_max_n")]
        max_n: u32,
    },
    Pullback {
        #[serde(default = "default_pullback_times")]
        times: Vec<f64>,
        #[serde(default = "default_rho")]
        rho: f64,
        #[serde(default = "default_samples")]
        samples: usize,
    },
    Absorb {
        #[serde(default = "default_horizon")]
        horizon: f64,
        #[serde(default = "default_rho")]
        rho: f64,
        #[serde(default = "default_absorb_samples")]
        samples: usize,
        #[serde(default = "default_t_forward")]
        t_forward: f64,
        #[serde(default = "default_tol")]
        tol: f64,
        /// Random fields used to estimate the interpolation constant.
        #[serde(default = "default_corpus")]
        corpus: usize,
    },
    Spectrum,
    Selftest,
}

fn default_ou_burn_in() -> f64 {
    0.0
}
fn default_max_n() -> u32 {
    8
}
fn default_pullback_times() -> Vec<f64> {
    vec![5.0, 10.0, 20.0, 40.0, 80.0]
}
fn default_rho() -> f64 {
    10.0
}
fn default_samples() -> usize {
    2
}
fn default_horizon() -> f64 {
    20.0
}
fn default_absorb_samples() -> usize {
    10
}
fn default_t_forward() -> f64 {
    25.0
}
fn default_tol() -> f64 {
    1e-3
}
fn default_corpus() -> usize {
    100
}

impl Experiment {
    pub fn name(&self) -> &'static str {
        match self {
            Experiment::Simulate { .. } => "simulate",
            Experiment::Ou { .. } => "ou",
            Experiment::Depend { .. } => "depend",
            Experiment::Pullback { .. } => "pullback",
            Experiment::Absorb { .. } => "absorb",
            Experiment::Spectrum => "spectrum",
            Experiment::Selftest => "selftest",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub params: ParamsConfig,
    pub solver: SolverConfig,
    #[serde(default = "NoiseSpec::off")]
    pub noise: NoiseSpec,
    pub experiment: Experiment,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

fn config_error(pointer: &str, message: impl Into<String>) -> SnsError {
    SnsError::Config {
        pointer: pointer.to_string(),
        message: message.into(),
    }
}

fn pointer_of(path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment;
    let mut out = String::new();
    for seg in path.iter() {
        match seg {
            Segment::Seq { index } => out.push_str(&format!("/{index}")),
            Segment::Map { key } => out.push_str(&format!("/{}", key.replace('~', "~0").replace('/', "~1"))),
            Segment::Enum { variant } => out.push_str(&format!("/{variant}")),
            Segment::Unknown => {}
        }
    }
    if out.is_empty() {
        "/".to_string()
    } else {
        out
    }
}

/// Parses and validates a JSON run configuration.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let config: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let pointer = pointer_of(e.path());
        config_error(&pointer, e.into_inner().to_string())
    })?;
    config.validate()?;
    Ok(config)
}

pub fn serialize_config(config: &RunConfig) -> String {
    serde_json::to_string_pretty(config).expect("config serializes")
}

impl RunConfig {
    /// Schema-level checks, reported with JSON pointers.
    pub fn validate(&self) -> Result<()> {
        let p = &self.params;
        let finite_nonneg = |v: f64, ptr: &str| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(config_error(ptr, format!("{v} must be finite and non-negative")))
            }
        };
        if !(p.nu.is_finite() && p.nu > 0.0) {
            return Err(config_error("/params/nu", format!("{} must be finite and positive", p.nu)));
        }
        finite_nonneg(p.rotation, "/params/rotation")?;
        finite_nonneg(p.alpha, "/params/alpha")?;
        if p.l_max == 0 || p.l_max > crate::harmonic_basis::MAX_DEGREE {
            return Err(config_error(
                "/params/l_max",
                format!("must be in 1..={}", crate::harmonic_basis::MAX_DEGREE),
            ));
        }
        for (i, e) in p.forcing.iter().enumerate() {
            check_mode_entry(e, p.l_max, &format!("/params/forcing/{i}"))?;
        }
        let s = &self.solver;
        if !(s.dt.is_finite() && s.dt > 0.0) {
            return Err(config_error("/solver/dt", "must be finite and positive"));
        }
        if !(s.t_end.is_finite() && s.t_end >= 0.0) {
            return Err(config_error("/solver/t_end", "must be finite and non-negative"));
        }
        steps_of(s.t_end, s.dt).map_err(|e| config_error("/solver/t_end", e.to_string()))?;
        if s.record_every == 0 {
            return Err(config_error("/solver/record_every", "must be at least 1"));
        }
        let stiffness = s.dt * p.nu * self.variant_eigenvalue(p.l_max);
        if stiffness > 50.0 {
            return Err(config_error(
                "/solver/dt",
                format!("dt*nu*sigma_L = {stiffness} exceeds 50"),
            ));
        }
        if let Err(SnsError::InvalidParameter { field, reason }) = self.noise.validate() {
            return Err(config_error(&format!("/noise/{field}"), reason));
        }
        self.validate_experiment()
    }

    fn variant_eigenvalue(&self, l: usize) -> f64 {
        self.params.variant.eigenvalue(l)
    }

    fn validate_experiment(&self) -> Result<()> {
        let positive = |v: f64, ptr: &str| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(config_error(ptr, format!("{v} must be finite and positive")))
            }
        };
        let check_initial = |ic: &InitialCondition| -> Result<()> {
            match ic {
                InitialCondition::Random { amplitude, decay } => {
                    if !(amplitude.is_finite() && *amplitude >= 0.0) {
                        return Err(config_error("/experiment/initial/amplitude", "must be finite and non-negative"));
                    }
                    if !decay.is_finite() {
                        return Err(config_error("/experiment/initial/decay", "must be finite"));
                    }
                    Ok(())
                }
                InitialCondition::Modes { modes } => {
                    for (i, e) in modes.iter().enumerate() {
                        check_mode_entry(e, self.params.l_max, &format!("/experiment/initial/modes/{i}"))?;
                    }
                    Ok(())
                }
                _ => Ok(()),
            }
        };
        match &self.experiment {
            Experiment::Simulate { initial, .. } => check_initial(initial),
            Experiment::Depend { initial, max_n } => {
                if *max_n > 60 {
                    return Err(config_error("/experiment/max_n", "at most 60 halvings"));
                }
                check_initial(initial)
            }
            Experiment::Ou { burn_in } => {
                if !(burn_in.is_finite() && *burn_in >= 0.0) {
                    return Err(config_error("/experiment/burn_in", "must be finite and non-negative"));
                }
                steps_of(*burn_in, self.solver.dt).map_err(|e| config_error("/experiment/burn_in", e.to_string()))?;
                Ok(())
            }
            Experiment::Pullback { times, rho, samples } => {
                positive(*rho, "/experiment/rho")?;
                if *samples == 0 {
                    return Err(config_error("/experiment/samples", "must be at least 1"));
                }
                if times.is_empty() {
                    return Err(config_error("/experiment/times", "must not be empty"));
                }
                for (i, &t) in times.iter().enumerate() {
                    let ptr = format!("/experiment/times/{i}");
                    positive(t, &ptr)?;
                    steps_of(t, self.solver.dt).map_err(|e| config_error(&ptr, e.to_string()))?;
                    if i > 0 && t <= times[i - 1] {
                        return Err(config_error(&ptr, "times must increase"));
                    }
                }
                Ok(())
            }
            Experiment::Absorb {
                horizon,
                rho,
                samples,
                t_forward,
                tol,
                corpus,
            } => {
                positive(*horizon, "/experiment/horizon")?;
                positive(*rho, "/experiment/rho")?;
                positive(*t_forward, "/experiment/t_forward")?;
                positive(*tol, "/experiment/tol")?;
                steps_of(*horizon, self.solver.dt).map_err(|e| config_error("/experiment/horizon", e.to_string()))?;
                steps_of(*t_forward, self.solver.dt).map_err(|e| config_error("/experiment/t_forward", e.to_string()))?;
                if *samples == 0 {
                    return Err(config_error("/experiment/samples", "must be at least 1"));
                }
                if *corpus == 0 {
                    return Err(config_error("/experiment/corpus", "must be at least 1"));
                }
                Ok(())
            }
            Experiment::Spectrum | Experiment::Selftest => Ok(()),
        }
    }

    pub fn seed(&self) -> u64 {
        self.noise.seed
    }

    /// The model parameters described by the config.
    pub fn model_params(&self) -> Result<ModelParams> {
        let p = &self.params;
        let forcing = field_from_modes(&p.forcing, p.l_max)?;
        let params = ModelParams::new(p.nu, p.l_max)?
            .with_rotation(p.rotation)
            .with_alpha(p.alpha)
            .with_variant(p.variant)
            .with_noise(self.noise.clone())
            .with_forcing(&forcing);
        params.validate()?;
        Ok(params)
    }

    /// SHA-256 of the serialized config.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(serde_json::to_vec(self).expect("config serializes")))
    }

    /// SHA-256 of the physical parameters and noise block.
    pub fn params_hash(&self) -> String {
        let v = serde_json::json!({ "params": self.params, "noise": self.noise });
        hex::encode(Sha256::digest(serde_json::to_vec(&v).expect("params serialize")))
    }
}

fn check_mode_entry(e: &ModeEntry, l_max: usize, ptr: &str) -> Result<()> {
    if e.l == 0 || e.l > l_max || e.m.unsigned_abs() as usize > e.l {
        return Err(config_error(ptr, format!("mode (l={}, m={}) outside 1 <= l <= {l_max}, |m| <= l", e.l, e.m)));
    }
    if !(e.re.is_finite() && e.im.is_finite()) {
        return Err(config_error(ptr, "coefficients must be finite"));
    }
    Ok(())
}

pub fn field_from_modes(modes: &[ModeEntry], l_max: usize) -> Result<SpectralField> {
    let mut f = SpectralField::zeros(l_max);
    for e in modes {
        let current = f.z_coeff(e.l, e.m);
        f.set_z_coeff(e.l, e.m, current + Complex64::new(e.re, e.im))?;
    }
    Ok(f)
}

fn initial_field(ic: &InitialCondition, l_max: usize, seed: u64) -> Result<SpectralField> {
    match ic {
        InitialCondition::Zero => Ok(SpectralField::zeros(l_max)),
        InitialCondition::Random { amplitude, decay } => {
            let mut rng = ChaCha8Rng::seed_from_u64(member_seed(seed, u64::MAX));
            let f = SpectralField::random(l_max, *decay, &mut rng);
            Ok(f.scaled(amplitude / f.h_norm2().sqrt()))
        }
        InitialCondition::Modes { modes } => field_from_modes(modes, l_max),
        InitialCondition::File { path } => {
            let file = File::open(path).map_err(|e| SnsError::io(path, e))?;
            Ok(read_coeffs_csv(std::io::BufReader::new(file))?.resized(l_max))
        }
    }
}

/// How a run ended.
#[derive(Debug, Clone, PartialEq)]
pub enum RunStatus {
    Success,
    BlowUp { t: f64, norm: f64, last_good_step: usize },
}

impl RunStatus {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunStatus::Success => 0,
            RunStatus::BlowUp { .. } => 2,
        }
    }
}

/// Exit status for an error that prevented a run from producing a status.
pub fn error_exit_code(err: &SnsError) -> i32 {
    match err {
        SnsError::Config { .. }
        | SnsError::InvalidParameter { .. }
        | SnsError::Misaligned { .. }
        | SnsError::DegenerateDrift { .. }
        | SnsError::DimensionMismatch { .. }
        | SnsError::ModeOutOfRange { .. } => 3,
        SnsError::BlowUp { .. } => 2,
        _ => 1,
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    format: &'static str,
    experiment: &'static str,
    config_hash: String,
    params_hash: String,
    seed: u64,
    versions: serde_json::Value,
    status: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    blow_up: Option<serde_json::Value>,
    files: &'a [String],
}

struct Output {
    dir: PathBuf,
    files: Vec<String>,
}

impl Output {
    fn new(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| SnsError::io(dir, e))?;
        Ok(Output {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    fn create(&mut self, name: &str) -> Result<(PathBuf, BufWriter<File>)> {
        let path = self.dir.join(name);
        let file = File::create(&path).map_err(|e| SnsError::io(&path, e))?;
        self.files.push(name.to_string());
        Ok((path, BufWriter::new(file)))
    }

    /// Writes a CSV table; every value is already formatted.
    fn csv(&mut self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
        let (path, w) = self.create(name)?;
        let to_io = |e: csv::Error| SnsError::io(&path, std::io::Error::other(e.to_string()));
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(header).map_err(to_io)?;
        for r in rows {
            wr.write_record(r).map_err(to_io)?;
        }
        wr.flush().map_err(|e| SnsError::io(&path, e))
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let (path, mut w) = self.create(name)?;
        serde_json::to_writer_pretty(&mut w, value).map_err(|e| SnsError::io(&path, std::io::Error::other(e)))?;
        writeln!(w).map_err(|e| SnsError::io(&path, e))?;
        w.flush().map_err(|e| SnsError::io(&path, e))
    }

    fn snapshot(&mut self, field: &SpectralField, sidecar: serde_json::Value, step: usize) -> Result<()> {
        let name = format!("snapshot_{step:08}.csv");
        let (path, mut w) = self.create(&name)?;
        write_coeffs_csv(field, &mut w).map_err(|e| match e {
            SnsError::Io { source, .. } => SnsError::io(&path, source),
            other => other,
        })?;
        w.flush().map_err(|e| SnsError::io(&path, e))?;
        self.json(&format!("snapshot_{step:08}.json"), &sidecar)
    }
}

fn num(x: f64) -> String {
    format!("{x:e}")
}

/// Runs the configured experiment, writing artifacts under `out_dir`.
/// Validation and I/O failures are returned as errors; a numerical blow-up is a status.
pub fn run(config: &RunConfig, out_dir: &Path) -> Result<RunStatus> {
    config.validate()?;
    let params = config.model_params()?;
    let mut out = Output::new(out_dir)?;
    let status = match run_experiment(config, &params, &mut out) {
        Ok(()) => RunStatus::Success,
        Err(SnsError::BlowUp {
            t,
            norm,
            last_good_step,
        }) => RunStatus::BlowUp {
            t,
            norm,
            last_good_step,
        },
        Err(e) => return Err(e),
    };
    let files = out.files.clone();
    let manifest = Manifest {
        format: FORMAT_VERSION,
        experiment: config.experiment.name(),
        config_hash: config.hash(),
        params_hash: config.params_hash(),
        seed: config.seed(),
        versions: serde_json::json!({ "sphere-sns": env!("CARGO_PKG_VERSION") }),
        status: match status {
            RunStatus::Success => "success",
            RunStatus::BlowUp { .. } => "blow_up",
        },
        blow_up: match &status {
            RunStatus::BlowUp {
                t,
                norm,
                last_good_step,
            } => Some(serde_json::json!({ "t": t, "norm": norm, "last_good_step": last_good_step })),
            RunStatus::Success => None,
        },
        files: &files,
    };
    out.json("manifest.json", &manifest)?;
    Ok(status)
}

fn solver_for(config: &RunConfig, params: &ModelParams) -> Result<GalerkinSolver> {
    GalerkinSolver::with_policy(params.clone(), config.params.dealias)
}

fn run_experiment(config: &RunConfig, params: &ModelParams, out: &mut Output) -> Result<()> {
    let seed = config.seed();
    match &config.experiment {
        Experiment::Simulate {
            initial,
            snapshot_every,
        } => {
            let solver = solver_for(config, params)?;
            let path = NoisePath::new(params, config.solver.dt, 0.0)?;
            let u0 = initial_field(initial, params.l_max, seed)?;
            let v0 = &u0 - &path.z_at(0.0)?;
            let cfg = SolverConfig {
                diagnostics: true,
                ..config.solver.clone()
            };
            let traj = solver.integrate(&v0, 0.0, NoiseInput::Path(&path), &cfg)?;
            write_diagnostics(out, &traj)?;
            if *snapshot_every > 0 {
                for (i, rec) in traj.records.iter().enumerate() {
                    if rec.step % snapshot_every == 0 {
                        let sidecar = serde_json::json!({
                            "t": rec.t,
                            "params_hash": config.params_hash(),
                            "seed": seed,
                            "step": rec.step,
                        });
                        out.snapshot(&traj.u(i), sidecar, rec.step)?;
                    }
                }
            }
            Ok(())
        }
        Experiment::Ou { burn_in } => run_ou(config, params, *burn_in, out),
        Experiment::Depend { initial, max_n } => {
            let path = NoisePath::new(params, config.solver.dt, 0.0)?;
            let u0 = initial_field(initial, params.l_max, seed)?;
            let dirs = PerturbationDirections::random(params.l_max, member_seed(seed, 1));
            let ns: Vec<u32> = (0..=*max_n).collect();
            let rows = continuous_dependence(params, &u0, &path, &dirs, &ns, &config.solver)?;
            let table: Vec<Vec<String>> = rows
                .iter()
                .map(|r| vec![r.n.to_string(), num(r.delta), num(r.sup_h), num(r.l2_v)])
                .collect();
            out.csv("depend.csv", &["n", "delta", "sup_h", "l2_v"], &table)?;
            out.json("depend.json", &serde_json::json!({ "rows": rows, "seeds": [seed] }))
        }
        Experiment::Pullback { times, rho, samples } => {
            let solver = solver_for(config, params)?;
            let t_max = times.last().copied().unwrap_or(0.0);
            let path = NoisePath::new(params, config.solver.dt, -t_max)?;
            let plan = PullbackPlan {
                times: times.clone(),
                rho: *rho,
                samples: *samples,
                seed,
            };
            let rep = pullback_compactness(&solver, &path, &plan, &config.solver)?;
            let table: Vec<Vec<String>> = (0..rep.times.len())
                .map(|i| {
                    vec![
                        num(rep.times[i]),
                        rep.successive_distances
                            .get(i.wrapping_sub(1))
                            .map_or(String::new(), |d| num(*d)),
                        num(rep.sup_norms[i]),
                        num(rep.spreads[i]),
                    ]
                })
                .collect();
            out.csv("pullback.csv", &["t", "distance_to_previous", "sup_norm", "spread"], &table)?;
            out.json(
                "pullback.json",
                &serde_json::json!({
                    "note": "surrogate: clustering of pullback images at finite truncation",
                    "cauchy_distances": rep.successive_distances,
                    "eventually_decreasing": rep.eventually_decreasing(),
                    "first_time_below_1e-3": rep.first_time_below(1e-3),
                    "seeds": [seed],
                }),
            )
        }
        Experiment::Absorb {
            horizon,
            rho,
            samples,
            t_forward,
            tol,
            corpus,
        } => {
            let solver = solver_for(config, params)?;
            let mut rng = ChaCha8Rng::seed_from_u64(member_seed(seed, 2));
            let fields: Vec<SpectralField> = (0..*corpus)
                .map(|_| SpectralField::random(params.l_max, 1.0, &mut rng))
                .collect();
            let report = estimate_report(&fields, solver.transform())?;
            let constant = report.interpolation_constant();
            let path = NoisePath::new(params, config.solver.dt, -horizon)?;
            let setup = AbsorbingSetup {
                horizon: *horizon,
                constant,
                rho: *rho,
                samples: *samples,
                t_forward: *t_forward,
                tol: *tol,
                seed,
            };
            let est = absorbing_radius(&solver, &path, &setup, &config.solver)?;
            let table: Vec<Vec<String>> = est
                .entry_times
                .iter()
                .enumerate()
                .map(|(i, t)| vec![i.to_string(), t.map_or("never".into(), num)])
                .collect();
            out.csv("absorb.csv", &["sample", "entry_time"], &table)?;
            out.json(
                "absorb.json",
                &serde_json::json!({
                    "note": "interpolation constant C estimated as the corpus maximum of |u|_L4^2/(|u||u|_V); g = alpha z - B(z,z)",
                    "r1": est.r1,
                    "r2": est.r2,
                    "z0_norm": est.z0_norm,
                    "constant": est.constant,
                    "entry_times": est.entry_times,
                    "non_absorbing": est.non_absorbing,
                    "estimates": report,
                    "seeds": [seed],
                }),
            )
        }
        Experiment::Spectrum => {
            let rows = spectrum_rows(params)?;
            let header = ["l", "lambda", "sigma", "noise_amplitude", "stationary_variance", "max_rossby_frequency"];
            let mut stdout = std::io::stdout().lock();
            let _ = writeln!(stdout, "{}", header.join("\t"));
            for r in &rows {
                let _ = writeln!(stdout, "{}", r.join("\t"));
            }
            out.csv("spectrum.csv", &header, &rows)
        }
        Experiment::Selftest => {
            let rows = selftest()?;
            let mut stdout = std::io::stdout().lock();
            let _ = writeln!(stdout, "{:<40} {:>12} {:>12}  result", "check", "value", "tolerance");
            let mut all = true;
            for r in &rows {
                all &= r.pass;
                let _ = writeln!(
                    stdout,
                    "{:<40} {:>12.3e} {:>12.1e}  {}",
                    r.name,
                    r.value,
                    r.tolerance,
                    if r.pass { "pass" } else { "FAIL" }
                );
            }
            let table: Vec<Vec<String>> = rows
                .iter()
                .map(|r| vec![r.name.to_string(), num(r.value), num(r.tolerance), r.pass.to_string()])
                .collect();
            out.csv("selftest.csv", &["check", "value", "tolerance", "pass"], &table)?;
            if all {
                Ok(())
            } else {
                Err(SnsError::Format("selftest failed".into()))
            }
        }
    }
}

fn write_diagnostics(out: &mut Output, traj: &Trajectory) -> Result<()> {
    let rows: Vec<Vec<String>> = traj
        .records
        .iter()
        .map(|r| {
            vec![
                num(r.t),
                num(r.norms.h),
                num(r.norms.v),
                num(r.norms.l4),
                num(r.norms.bracket2),
                num(r.b_vzv),
                if r.energy_residual.is_nan() {
                    String::new()
                } else {
                    num(r.energy_residual)
                },
            ]
        })
        .collect();
    out.csv(
        "diagnostics.csv",
        &["t", "H", "V", "L4", "bracket2", "b_vzv", "energy_residual"],
        &rows,
    )
}

fn run_ou(config: &RunConfig, params: &ModelParams, burn_in: f64, out: &mut Output) -> Result<()> {
    let dt = config.solver.dt;
    let stepper = OuStepper::new(params, dt)?;
    let n_burn = steps_of(burn_in, dt)?;
    let n = steps_of(config.solver.t_end, dt)?.max(1) as usize;
    let mut state = stepper.stationary(config.seed(), 0);
    for _ in 0..n_burn {
        state = stepper.step(&state);
    }
    let len = state.z.len();
    let mut acc = vec![0.0; len];
    for _ in 0..n {
        state = stepper.step(&state);
        for (a, z) in acc.iter_mut().zip(&state.z) {
            *a += z.norm_sqr();
        }
    }
    let mut rows = Vec::new();
    for l in 1..=params.l_max {
        let theory = stationary_variance(l, params)?;
        for m in 0..=l {
            let emp = acc[crate::harmonic_basis::tri_index(l, m)] / n as f64;
            rows.push(vec![l.to_string(), m.to_string(), num(emp), num(theory)]);
        }
    }
    out.csv("ou.csv", &["l", "m", "time_average", "stationary_variance"], &rows)
}

fn spectrum_rows(params: &ModelParams) -> Result<Vec<Vec<String>>> {
    (1..=params.l_max)
        .map(|l| {
            let lambda = degree_eigenvalue(l);
            Ok(vec![
                l.to_string(),
                num(lambda),
                num(params.sigma(l)),
                num(mode_noise_amplitude(l, &params.noise)),
                num(stationary_variance(l, params)?),
                num(-2.0 * params.rotation * l as f64 / lambda),
            ])
        })
        .collect()
}

/// One line of the built-in property suite.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelftestRow {
    pub name: &'static str,
    pub value: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// Fast property checks of transforms, operators, nonlinearity, noise and solver.
pub fn selftest() -> Result<Vec<SelftestRow>> {
    use crate::flow_fields::velocity;
    use crate::nonlinear::{advective_term, trilinear_b};
    use crate::sphere_operators::apply_coriolis;

    let mut rows = Vec::new();
    let mut push = |name, value: f64, tolerance| {
        rows.push(SelftestRow {
            name,
            value,
            tolerance,
            pass: value <= tolerance,
        })
    };
    let mut rng = ChaCha8Rng::seed_from_u64(20240601);

    let t31 = DealiasPolicy::ThreeHalves.transform(31)?;
    let f = SpectralField::random(31, 0.0, &mut rng);
    let back = t31.analyze(&t31.synthesize(f.psi())?)?;
    let err = back
        .as_slice()
        .iter()
        .zip(f.psi().as_slice())
        .map(|(a, b)| (a - b).norm())
        .fold(0.0, f64::max);
    push("transform round trip L=31", err, 1e-10);

    let t = DealiasPolicy::ThreeHalves.transform(12)?;
    let u = SpectralField::random(12, 0.5, &mut rng);
    let vel = velocity(&u, &t)?;
    let parseval = (t.integrate(&vel.dot(&vel)) - u.h_norm2()).abs() / u.h_norm2();
    push("Parseval of velocity", parseval, 1e-10);

    let w = SpectralField::random(12, 0.5, &mut rng);
    let z = SpectralField::random(12, 0.5, &mut rng);
    let skew = trilinear_b(&u, &w, &w, &t)?.abs() / (u.h_norm2() * w.h_norm2() * w.v_norm2()).sqrt();
    push("b(v,w,w) = 0", skew, 1e-10);
    let b1 = trilinear_b(&u, &w, &z, &t)?;
    let b2 = trilinear_b(&u, &z, &w, &t)?;
    push("b(v,z,w) = -b(v,w,z)", (b1 + b2).abs() / b1.abs(), 1e-10);
    let cuu = apply_coriolis(&u, 3.0).inner_h(&u).abs() / u.h_norm2();
    push("(Cu,u) = 0", cuu, 1e-12);
    let buu = advective_term(&u, &t)?.inner_h(&u).abs() / (u.h_norm2() * u.v_norm2().sqrt());
    push("(B(u,u),u) = 0", buu, 1e-10);

    let p = ModelParams::new(0.1, 4)?;
    let solver = GalerkinSolver::new(p)?;
    let u0 = SpectralField::z_mode(4, 1, 0, Complex64::new(1.0, 0.0))?;
    let traj = solver.integrate(
        &u0,
        0.0,
        NoiseInput::Off,
        &SolverConfig::new(0.01, 1.0)
            .with_record_every(100)
            .with_diagnostics(false)
            .with_scheme(Scheme::Ifrk4),
    )?;
    let decay = (traj.final_u().h_norm2().sqrt() - (-0.2f64).exp()).abs();
    push("single-mode decay exp(-nu lambda_1 t)", decay, 1e-12);

    let pn = ModelParams::new(1.0, 6)?.with_noise(NoiseSpec::new(0.1, 1.0, 9));
    let sn = GalerkinSolver::new(pn.clone())?;
    let path = NoisePath::new(&pn, 0.01, 0.0)?;
    let x = SpectralField::random(6, 1.0, &mut rng);
    let cocycle = crate::rds_experiments::cocycle_check(&sn, &x, 0.5, 0.5, &path, &SolverConfig::new(0.01, 0.0))?;
    push("cocycle identity", cocycle, 1e-10);
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "params": {"nu": 1.0, "L": 15},
        "solver": {"dt": 0.01, "t_end": 1.0},
        "experiment": {"kind": "simulate"}
    }"#;

    #[test]
    fn minimal_config_accepted() {
        let c = parse_config(MINIMAL).unwrap();
        assert_eq!(c.params.l_max, 15);
        assert_eq!(c.experiment.name(), "simulate");
        assert_eq!(c.noise, NoiseSpec::off());
    }

    #[test]
    fn negative_viscosity_points_at_nu() {
        let text = MINIMAL.replace("\"nu\": 1.0", "\"nu\": -1");
        match parse_config(&text) {
            Err(SnsError::Config { pointer, .. }) => assert_eq!(pointer, "/params/nu"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn rough_noise_rejected_with_threshold() {
        let text = MINIMAL.replace(
            "\"experiment\"",
            "\"noise\": {\"epsilon\": 0.1, \"s_exponent\": 0.4, \"seed\": 1}, \"experiment\"",
        );
        match parse_config(&text) {
            Err(SnsError::Config { pointer, message }) => {
                assert_eq!(pointer, "/noise/s_exponent");
                assert!(message.contains("1/2"));
            }
            other => panic!("{other:?}"),
        }
        let allowed = text.replace("\"seed\": 1}", "\"seed\": 1, \"allow_rough_noise\": true}");
        assert!(parse_config(&allowed).is_ok());
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = MINIMAL.replace("\"nu\": 1.0", "\"nu\": 1.0, \"viscosity\": 2");
        match parse_config(&text) {
            Err(SnsError::Config { pointer, message }) => {
                assert!(pointer.starts_with("/params"), "{pointer}");
                assert!(message.contains("viscosity"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn serialization_roundtrip() {
        let c = parse_config(MINIMAL).unwrap();
        assert_eq!(parse_config(&serialize_config(&c)).unwrap(), c);
    }

    #[test]
    fn exit_codes() {
        assert_eq!(error_exit_code(&config_error("/x", "bad")), 3);
        assert_eq!(RunStatus::Success.exit_code(), 0);
        assert_eq!(
            RunStatus::BlowUp {
                t: 1.0,
                norm: 1e13,
                last_good_step: 3
            }
            .exit_code(),
            2
        );
    }
}
