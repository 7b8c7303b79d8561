//! Time stepping of the Galerkin system for `v = u - z`:
//!
//! `dv/dt = -(nu A + C) v - P_L B(v + z) + alpha z + f`
//!
//! The diagonal part `nu A + C` is integrated exactly by an integrating factor; the
//! quadratic term and the `z` coupling are explicit. `z` is sampled at the start of each
//! step and held fixed over its stages.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SnsError};
use crate::flow_fields::{l4_norm, norms, FieldNorms, SpectralField};
use crate::harmonic_basis::{tri_index, SphereTransform};
use crate::nonlinear::{advective_term, trilinear_b, DealiasPolicy};
use crate::sphere_operators::{apply_a, ModelParams};
use crate::stochastic_forcing::{steps_of, NoisePath, OuCursor};

pub const BLOW_UP_NORM: f64 = 1e12;
const MAX_STIFFNESS: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Lawson integrating-factor RK4.
    #[default]
    Ifrk4,
    /// Integrating-factor forward Euler.
    IfEuler,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub dt: f64,
    pub t_end: f64,
    #[serde(default)]
    pub scheme: Scheme,
    /// Steps between stored records; the first and last step are always stored.
    #[serde(default = "default_record_every")]
    pub record_every: usize,
    /// Evaluate the per-step energy balance (costs three extra transforms per step).
    #[serde(default)]
    pub audit: bool,
    /// Compute norm diagnostics at record times.
    #[serde(default = "default_true")]
    pub diagnostics: bool,
}

fn default_true() -> bool {
    true
}

fn default_record_every() -> usize {
    1
}

impl SolverConfig {
    pub fn new(dt: f64, t_end: f64) -> Self {
        SolverConfig {
            dt,
            t_end,
            scheme: Scheme::default(),
            record_every: 1,
            audit: false,
            diagnostics: true,
        }
    }

    pub fn with_scheme(mut self, scheme: Scheme) -> Self {
        self.scheme = scheme;
        self
    }

    pub fn with_record_every(mut self, every: usize) -> Self {
        self.record_every = every;
        self
    }

    pub fn with_audit(mut self, audit: bool) -> Self {
        self.audit = audit;
        self
    }

    pub fn with_diagnostics(mut self, diagnostics: bool) -> Self {
        self.diagnostics = diagnostics;
        self
    }

    pub fn validate(&self, params: &ModelParams) -> Result<()> {
        let bad = |field, reason: String| Err(SnsError::InvalidParameter { field, reason });
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return bad("dt", "must be positive".into());
        }
        if !self.t_end.is_finite() {
            return bad("t_end", "must be finite".into());
        }
        if self.record_every == 0 {
            return bad("record_every", "must be at least 1".into());
        }
        let stiffness = self.dt * params.nu * params.sigma(params.l_max);
        if stiffness > MAX_STIFFNESS {
            return bad(
                "dt",
                format!("dt*nu*sigma_L = {stiffness} exceeds {MAX_STIFFNESS}"),
            );
        }
        Ok(())
    }
}

/// Where `z` comes from during an integration.
#[derive(Debug, Clone, Copy)]
pub enum NoiseInput<'a> {
    Off,
    Path(&'a NoisePath),
    /// `z + delta` with a fixed field `delta`.
    Perturbed(&'a NoisePath, &'a SpectralField),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DiagRecord {
    pub step: usize,
    pub t: f64,
    /// Norms of `v`.
    pub norms: FieldNorms,
    pub b_vzv: f64,
    /// Energy residual of the step ending here; NaN when not audited.
    pub energy_residual: f64,
}

/// Per-step audit data, indexed by the step that starts at `t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepAudit {
    pub t: f64,
    pub residual: f64,
    /// `||z||_{L4}` at the start of the step.
    pub z_l4: f64,
    /// `||F||_{V'}^2` with `F = alpha z - B(z) + f`.
    pub forcing_dual2: f64,
}

#[derive(Debug, Clone, Default)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub v: Vec<SpectralField>,
    pub z: Vec<SpectralField>,
    pub records: Vec<DiagRecord>,
    /// `||v||^2` after every step, starting with the initial value.
    pub v_h2: Vec<f64>,
    pub audit: Vec<StepAudit>,
}

impl Trajectory {
    /// `u = v + z` at record `i`.
    pub fn u(&self, i: usize) -> SpectralField {
        &self.v[i] + &self.z[i]
    }

    pub fn final_u(&self) -> SpectralField {
        self.u(self.v.len() - 1)
    }
}

/// Galerkin solver at fixed parameters; owns the transform and the integrating factors.
pub struct GalerkinSolver {
    params: ModelParams,
    transform: SphereTransform,
    advection: bool,
}

impl GalerkinSolver {
    pub fn new(params: ModelParams) -> Result<Self> {
        Self::with_policy(params, DealiasPolicy::ThreeHalves)
    }

    pub fn with_policy(params: ModelParams, policy: DealiasPolicy) -> Result<Self> {
        params.validate()?;
        let transform = policy.transform(params.l_max)?;
        Ok(GalerkinSolver {
            params,
            transform,
            advection: true,
        })
    }

    /// Disables `B`, leaving the linear Stokes-Coriolis-OU system.
    pub fn without_advection(mut self) -> Self {
        self.advection = false;
        self
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn transform(&self) -> &SphereTransform {
        &self.transform
    }

    fn symbols(&self) -> Vec<Complex64> {
        let l_max = self.params.l_max;
        let mut out = vec![Complex64::new(0.0, 0.0); crate::harmonic_basis::tri_len(l_max)];
        for l in 1..=l_max {
            for m in 0..=l {
                out[tri_index(l, m)] = self.params.linear_symbol(l, m as i64);
            }
        }
        out
    }

    /// Explicit part `-P_L B(v + z) + alpha z + f`.
    pub fn explicit_part(&self, v: &SpectralField, z: &SpectralField) -> Result<SpectralField> {
        let mut out = self.params.forcing.axpy(self.params.alpha, z);
        if self.advection {
            let b = advective_term(&(v + z), &self.transform)?;
            out = out.axpy(-1.0, &b);
        }
        Ok(out)
    }

    /// Full right side `-(nu A + C) v - P_L B(v + z) + alpha z + f`.
    pub fn rhs_v(&self, v: &SpectralField, z: &SpectralField) -> Result<SpectralField> {
        let linear = v.map_modes(|l, m| -self.params.linear_symbol(l, m as i64));
        Ok(&linear + &self.explicit_part(v, z)?)
    }

    /// One step of size `dt` with `z` frozen.
    pub fn step(&self, v: &SpectralField, z: &SpectralField, dt: f64, scheme: Scheme) -> Result<SpectralField> {
        let kappa = self.symbols();
        let factor = |frac: f64| -> Vec<Complex64> { kappa.iter().map(|k| (-k * (frac * dt)).exp()).collect() };
        let apply = |f: &SpectralField, e: &[Complex64]| f.map_modes(|l, m| e[tri_index(l, m)]);
        match scheme {
            Scheme::IfEuler => {
                let e = factor(1.0);
                let n = self.explicit_part(v, z)?;
                Ok(apply(&v.axpy(dt, &n), &e))
            }
            Scheme::Ifrk4 => {
                let e_half = factor(0.5);
                let e_full = factor(1.0);
                let a = self.explicit_part(v, z)?;
                let ev_half = apply(v, &e_half);
                let b = self.explicit_part(&apply(&v.axpy(0.5 * dt, &a), &e_half), z)?;
                let c = self.explicit_part(&ev_half.axpy(0.5 * dt, &b), z)?;
                let ev = apply(v, &e_full);
                let d = self.explicit_part(&ev.axpy(dt, &apply(&c, &e_half)), z)?;
                let mid = apply(&(&b + &c), &e_half);
                let sum = apply(&a, &e_full).axpy(2.0, &mid).axpy(1.0, &d);
                Ok(ev.axpy(dt / 6.0, &sum))
            }
        }
    }

    /// `2 [ -nu (Av, v) - b(v, z, v) + (g, v) + (f, v) ]`, `g = alpha z - B(z, z)`;
    /// `bz` must be `P_L B(z, z)`.
    fn energy_rate(&self, v: &SpectralField, z: &SpectralField, bz: &SpectralField) -> Result<f64> {
        let dissipation = self.params.nu * apply_a(v, self.params.variant).inner_h(v);
        let b_vzv = if self.advection {
            trilinear_b(v, z, v, &self.transform)?
        } else {
            0.0
        };
        let g = z.scaled(self.params.alpha).axpy(-1.0, bz);
        Ok(2.0 * (-dissipation - b_vzv + g.inner_h(v) + self.params.forcing.inner_h(v)))
    }

    fn advect_z(&self, z: &SpectralField) -> Result<SpectralField> {
        if self.advection && z.max_abs_psi() > 0.0 {
            advective_term(z, &self.transform)
        } else {
            Ok(SpectralField::zeros(z.l_max()))
        }
    }

    /// Residual of the discrete energy balance over one step from `v0` to `v1` with `z` frozen:
    /// `(|v1|^2 - |v0|^2)/dt` minus the trapezoid average of the energy rate.
    pub fn energy_step_audit(&self, v0: &SpectralField, v1: &SpectralField, z: &SpectralField, dt: f64) -> Result<f64> {
        let bz = self.advect_z(z)?;
        let r0 = self.energy_rate(v0, z, &bz)?;
        let r1 = self.energy_rate(v1, z, &bz)?;
        Ok((v1.h_norm2() - v0.h_norm2()) / dt - 0.5 * (r0 + r1))
    }

    /// `g = alpha z - P_L B(z, z)`.
    pub fn g_term(&self, z: &SpectralField) -> Result<SpectralField> {
        Ok(z.scaled(self.params.alpha).axpy(-1.0, &self.advect_z(z)?))
    }

    fn record(&self, step: usize, t: f64, v: &SpectralField, z: &SpectralField, residual: f64) -> Result<DiagRecord> {
        let b_vzv = if self.advection && z.max_abs_psi() > 0.0 {
            trilinear_b(v, z, v, &self.transform)?
        } else {
            0.0
        };
        Ok(DiagRecord {
            step,
            t,
            norms: norms(v, &self.transform, self.params.nu, self.params.lambda1())?,
            b_vzv,
            energy_residual: residual,
        })
    }

    /// Integrates from path time `t0` to `config.t_end`, starting at `v(t0) = v0`.
    pub fn integrate(&self, v0: &SpectralField, t0: f64, noise: NoiseInput<'_>, config: &SolverConfig) -> Result<Trajectory> {
        config.validate(&self.params)?;
        if v0.l_max() != self.params.l_max {
            return Err(SnsError::DimensionMismatch {
                expected: format!("initial field at L={}", self.params.l_max),
                got: format!("L={}", v0.l_max()),
            });
        }
        let n_steps = steps_of(config.t_end - t0, config.dt)?;
        if n_steps < 0 {
            return Err(SnsError::InvalidParameter {
                field: "t_end",
                reason: format!("end time {} precedes start {t0}", config.t_end),
            });
        }
        let n_steps = n_steps as usize;
        let mut source = ZSource::new(noise, t0, config.dt, self.params.l_max)?;
        let mut traj = Trajectory::default();
        let mut v = v0.clone();
        let mut z = source.current();
        traj.v_h2.push(v.h_norm2());
        traj.times.push(t0);
        if config.diagnostics {
            traj.records.push(self.record(0, t0, &v, &z, f64::NAN)?);
        }
        traj.v.push(v.clone());
        traj.z.push(z.clone());
        for n in 0..n_steps {
            let t = t0 + n as f64 * config.dt;
            let next = self.step(&v, &z, config.dt, config.scheme)?;
            let norm = next.h_norm2().sqrt();
            if !norm.is_finite() || norm > BLOW_UP_NORM {
                return Err(SnsError::BlowUp {
                    t: t + config.dt,
                    norm,
                    last_good_step: n,
                });
            }
            let mut residual = f64::NAN;
            if config.audit {
                let bz = self.advect_z(&z)?;
                let r0 = self.energy_rate(&v, &z, &bz)?;
                let r1 = self.energy_rate(&next, &z, &bz)?;
                residual = (next.h_norm2() - v.h_norm2()) / config.dt - 0.5 * (r0 + r1);
                let forcing = self.params.forcing.axpy(self.params.alpha, &z).axpy(-1.0, &bz);
                let z_l4 = if z.max_abs_psi() > 0.0 {
                    l4_norm(&z, &self.transform)?
                } else {
                    0.0
                };
                traj.audit.push(StepAudit {
                    t,
                    residual,
                    z_l4,
                    forcing_dual2: forcing.v_prime_norm2(),
                });
            }
            v = next;
            source.advance();
            z = source.current();
            traj.v_h2.push(v.h_norm2());
            let step = n + 1;
            if step % config.record_every == 0 || step == n_steps {
                let t_next = t0 + step as f64 * config.dt;
                traj.times.push(t_next);
                if config.diagnostics {
                    traj.records.push(self.record(step, t_next, &v, &z, residual)?);
                }
                traj.v.push(v.clone());
                traj.z.push(z.clone());
            }
        }
        Ok(traj)
    }
}

/// Samples `z` on the solver lattice. The path lattice may be finer than the solver step
/// (several path steps per solver step) or coarser (`z` held over several solver steps).
struct ZSource<'a> {
    cursor: Option<OuCursor<'a>>,
    perturbation: Option<&'a SpectralField>,
    substeps: usize,
    hold: usize,
    counter: usize,
    l_max: usize,
}

impl<'a> ZSource<'a> {
    fn new(noise: NoiseInput<'a>, t0: f64, dt: f64, l_max: usize) -> Result<Self> {
        let (path, perturbation) = match noise {
            NoiseInput::Off => {
                return Ok(ZSource {
                    cursor: None,
                    perturbation: None,
                    substeps: 1,
                    hold: 1,
                    counter: 0,
                    l_max,
                })
            }
            NoiseInput::Path(p) => (p, None),
            NoiseInput::Perturbed(p, d) => (p, Some(d)),
        };
        if path.l_max() != l_max {
            return Err(SnsError::DimensionMismatch {
                expected: format!("noise path at L={l_max}"),
                got: format!("L={}", path.l_max()),
            });
        }
        let (substeps, hold) = if dt >= path.dt() {
            (steps_of(dt, path.dt())?, 1)
        } else {
            (1, steps_of(path.dt(), dt)?)
        };
        Ok(ZSource {
            cursor: Some(path.cursor(t0)?),
            perturbation,
            substeps: substeps as usize,
            hold: hold as usize,
            counter: 0,
            l_max,
        })
    }

    fn current(&self) -> SpectralField {
        let base = match &self.cursor {
            Some(c) => c.field(),
            None => SpectralField::zeros(self.l_max),
        };
        match self.perturbation {
            Some(d) => base.axpy(1.0, d),
            None => base,
        }
    }

    fn advance(&mut self) {
        self.counter += 1;
        if self.counter < self.hold {
            return;
        }
        self.counter = 0;
        if let Some(c) = self.cursor.as_mut() {
            for _ in 0..self.substeps {
                c.advance();
            }
        }
    }
}

/// One row of a truncation refinement study.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RefineRow {
    pub l_max: usize,
    /// `sup_t ||u_L(t) - u_{L_prev}(t)||` over the record times.
    pub diff_to_previous: Option<f64>,
}

/// Runs the same physical setup at each truncation in `l_list` and compares successive levels.
/// Noise modes shared between levels receive identical increments.
pub fn galerkin_refine(
    u0: &SpectralField,
    params: &ModelParams,
    l_list: &[usize],
    config: &SolverConfig,
    noise_anchor: f64,
) -> Result<Vec<RefineRow>> {
    if l_list.windows(2).any(|w| w[0] >= w[1]) {
        return Err(SnsError::InvalidParameter {
            field: "l_list",
            reason: "truncations must increase".into(),
        });
    }
    let mut rows = Vec::new();
    let mut previous: Option<Vec<SpectralField>> = None;
    for &l in l_list {
        let p = ModelParams {
            l_max: l,
            forcing: params.forcing.resized(l),
            ..params.clone()
        };
        let solver = GalerkinSolver::new(p.clone())?;
        let path = NoisePath::new(&p, config.dt, noise_anchor)?;
        let z0 = path.z_at(0.0)?;
        let v0 = &u0.resized(l) - &z0;
        let traj = solver.integrate(&v0, 0.0, NoiseInput::Path(&path), config)?;
        let us: Vec<SpectralField> = (0..traj.v.len()).map(|i| traj.u(i)).collect();
        let diff = previous.as_ref().map(|prev| {
            prev.iter()
                .zip(&us)
                .map(|(a, b)| (&b.resized(l) - &a.resized(l)).h_norm2().sqrt())
                .fold(0.0, f64::max)
        });
        rows.push(RefineRow {
            l_max: l,
            diff_to_previous: diff,
        });
        previous = Some(us);
    }
    Ok(rows)
}
