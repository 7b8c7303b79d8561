//! Experiments on the random dynamical system `phi(t, omega) x = v(t) + z(t)`:
//! cocycle property, continuous dependence, absorbing balls and pullback clustering.
//!
//! Throughout, `phi(t, omega) x` starts at path time 0 with `v(0) = x - z(0)`, and the
//! shifted realization `theta_s omega` is obtained with [`NoisePath::path_shift`].

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Result, SnsError};
use crate::flow_fields::{l4_norm, SpectralField};
use crate::galerkin_solver::{GalerkinSolver, NoiseInput, SolverConfig, Trajectory};
use crate::sphere_operators::ModelParams;
use crate::stochastic_forcing::{member_seed, steps_of, NoisePath};

/// `phi(t, path) x` on the solver lattice `dt`.
pub fn cocycle_map(solver: &GalerkinSolver, x: &SpectralField, t: f64, path: &NoisePath, config: &SolverConfig) -> Result<SpectralField> {
    let z0 = path.z_at(0.0)?;
    let v0 = x - &z0;
    let cfg = SolverConfig {
        t_end: t,
        record_every: usize::MAX,
        audit: false,
        diagnostics: false,
        ..config.clone()
    };
    Ok(solver.integrate(&v0, 0.0, NoiseInput::Path(path), &cfg)?.final_u())
}

/// `|| phi(t + s, w) x - phi(t, theta_s w) phi(s, w) x ||`.
pub fn cocycle_check(
    solver: &GalerkinSolver,
    x: &SpectralField,
    t: f64,
    s: f64,
    path: &NoisePath,
    config: &SolverConfig,
) -> Result<f64> {
    steps_of(t, config.dt)?;
    steps_of(s, config.dt)?;
    let direct = cocycle_map(solver, x, t + s, path, config)?;
    let first = cocycle_map(solver, x, s, path, config)?;
    let composed = cocycle_map(solver, &first, t, &path.path_shift(s)?, config)?;
    Ok((&direct - &composed).h_norm2().sqrt())
}

/// Fixed perturbation directions for the continuous-dependence study.
#[derive(Debug, Clone)]
pub struct PerturbationDirections {
    pub initial: SpectralField,
    pub noise: SpectralField,
    pub forcing: SpectralField,
}

impl PerturbationDirections {
    /// Smooth random directions, each of unit `H` norm.
    pub fn random(l_max: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut unit = || {
            let f = SpectralField::random(l_max, 2.0, &mut rng);
            f.scaled(1.0 / f.h_norm2().sqrt())
        };
        PerturbationDirections {
            initial: unit(),
            noise: unit(),
            forcing: unit(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DependenceRow {
    pub n: u32,
    pub delta: f64,
    /// `sup_t ||v_n(t) - v(t)||`
    pub sup_h: f64,
    /// `(int_0^T ||v_n - v||_V^2 dt)^{1/2}`
    pub l2_v: f64,
}

/// Perturbs `u0`, `z` and `f` by `delta_n = 2^{-n}` times fixed directions and measures the
/// distance of the perturbed `v` to the unperturbed one on `[0, config.t_end]`.
pub fn continuous_dependence(
    params: &ModelParams,
    u0: &SpectralField,
    path: &NoisePath,
    directions: &PerturbationDirections,
    ns: &[u32],
    config: &SolverConfig,
) -> Result<Vec<DependenceRow>> {
    let cfg = SolverConfig {
        record_every: 1,
        audit: false,
        diagnostics: false,
        ..config.clone()
    };
    let base_solver = GalerkinSolver::new(params.clone())?;
    let z0 = path.z_at(0.0)?;
    let base = base_solver.integrate(&(u0 - &z0), 0.0, NoiseInput::Path(path), &cfg)?;
    ns.par_iter()
        .map(|&n| {
            let delta = if n == u32::MAX { 0.0 } else { 0.5f64.powi(n as i32) };
            let forcing = params.forcing.axpy(delta, &directions.forcing);
            let solver = GalerkinSolver::new(params.clone().with_forcing(&forcing))?;
            let dz = directions.noise.scaled(delta);
            let u0n = u0.axpy(delta, &directions.initial);
            let v0n = &u0n - &(&z0 + &dz);
            let pert = solver.integrate(&v0n, 0.0, NoiseInput::Perturbed(path, &dz), &cfg)?;
            let (sup_h, l2_v) = trajectory_distance(&base, &pert, cfg.dt);
            Ok(DependenceRow { n, delta, sup_h, l2_v })
        })
        .collect()
}

/// Sup of the `H` distance and trapezoid `L^2(V)` distance between the `v` components.
fn trajectory_distance(a: &Trajectory, b: &Trajectory, dt: f64) -> (f64, f64) {
    let mut sup: f64 = 0.0;
    let mut integral = 0.0;
    let n = a.v.len();
    for i in 0..n {
        let d = &a.v[i] - &b.v[i];
        sup = sup.max(d.h_norm2().sqrt());
        let w = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
        integral += w * dt * d.v_norm2();
    }
    (sup, integral.sqrt())
}

/// A point on the sphere of radius `rho` in `H_L`, with smooth random direction.
pub fn sample_sphere(l_max: usize, rho: f64, rng: &mut ChaCha8Rng) -> SpectralField {
    let f = SpectralField::random(l_max, 1.0, rng);
    f.scaled(rho / f.h_norm2().sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AbsorbingEstimate {
    pub r1: f64,
    pub r2: f64,
    pub z0_norm: f64,
    /// Interpolation constant used in the exponential weight.
    pub constant: f64,
    /// First time each trajectory enters the ball; `None` if it never does within the horizon.
    pub entry_times: Vec<Option<f64>>,
    /// True when some trajectory failed to enter by the horizon.
    pub non_absorbing: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AbsorbingSetup {
    /// Length `S` of the past window in the radius formula.
    pub horizon: f64,
    /// Interpolation constant `C`.
    pub constant: f64,
    pub rho: f64,
    pub samples: usize,
    /// Forward observation time.
    pub t_forward: f64,
    /// Entry is declared once `||u(t)|| <= max(r2(theta_t w), tol)`.
    pub tol: f64,
    pub seed: u64,
}

/// Running evaluation of
/// `r1^2 = sup_s 2|z(s)|^2 e^{int_s^0 a} + (3/nu) int (|g|_{V'}^2 + |f|_{V'}^2) e^{int_t^0 a} dt`,
/// `a(r) = -nu lambda_1 + (3 C^2 / nu) |z(r)|_{L4}^2`, on a window starting at a fixed past time.
struct RadiusAccumulator {
    sup_term: f64,
    integral: f64,
}

impl RadiusAccumulator {
    fn new() -> Self {
        RadiusAccumulator {
            sup_term: 0.0,
            integral: 0.0,
        }
    }

    /// Advances over one step `[t, t + dt]` given the values at `t`.
    fn push(&mut self, z_h2: f64, rate: f64, source: f64, dt: f64) {
        let decay = (rate * dt).exp();
        self.sup_term = (self.sup_term * decay).max(2.0 * z_h2 * decay);
        self.integral = self.integral * decay + source * dt * decay;
    }

    fn r1_squared(&self, nu: f64) -> f64 {
        self.sup_term + 3.0 / nu * self.integral
    }
}

/// Radius of the absorbing ball along a path, and entry times of forward trajectories
/// started on the sphere `||x|| = rho`.
pub fn absorbing_radius(solver: &GalerkinSolver, path: &NoisePath, setup: &AbsorbingSetup, config: &SolverConfig) -> Result<AbsorbingEstimate> {
    let params = solver.params();
    if !(setup.horizon > 0.0) {
        return Err(SnsError::InvalidParameter {
            field: "horizon",
            reason: "must be positive".into(),
        });
    }
    let dt = config.dt;
    let nu = params.nu;
    if nu <= 0.0 {
        return Err(SnsError::InvalidParameter {
            field: "nu",
            reason: "absorbing radius requires positive viscosity".into(),
        });
    }
    let n_past = steps_of(setup.horizon, dt)?;
    let n_fwd = steps_of(setup.t_forward, dt)?.max(0) as usize;
    let f_dual2 = params.forcing.v_prime_norm2();
    let c2 = setup.constant * setup.constant;

    // r2(theta_t w) for t = 0, dt, ..., t_forward
    let mut acc = RadiusAccumulator::new();
    let mut r2_along = Vec::with_capacity(n_fwd + 1);
    let mut r1_at_zero = 0.0;
    let mut cursor = path.cursor(-setup.horizon)?;
    let mut substeps = steps_of(dt, path.dt())?;
    if substeps < 1 {
        substeps = 1;
    }
    for k in 0..=(n_past + n_fwd as i64) {
        let z = cursor.field();
        let z_h = z.h_norm2().sqrt();
        if k >= n_past {
            let r1 = acc.r1_squared(nu).sqrt();
            if k == n_past {
                r1_at_zero = r1;
            }
            r2_along.push(r1 + z_h);
        }
        if k == n_past + n_fwd as i64 {
            break;
        }
        let z_l4 = if z_h > 0.0 { l4_norm(&z, solver.transform())? } else { 0.0 };
        let rate = -nu * params.lambda1() + 3.0 * c2 / nu * z_l4 * z_l4;
        let g = solver.g_term(&z)?;
        acc.push(z_h * z_h, rate, g.v_prime_norm2() + f_dual2, dt);
        for _ in 0..substeps {
            cursor.advance();
        }
    }
    let z0_norm = path.z_at(0.0)?.h_norm2().sqrt();
    let r2 = r1_at_zero + z0_norm;

    let mut rng = ChaCha8Rng::seed_from_u64(setup.seed);
    let starts: Vec<SpectralField> = (0..setup.samples)
        .map(|_| sample_sphere(params.l_max, setup.rho, &mut rng))
        .collect();
    let cfg = SolverConfig {
        t_end: setup.t_forward,
        record_every: 1,
        audit: false,
        diagnostics: false,
        ..config.clone()
    };
    let z0 = path.z_at(0.0)?;
    let entry_times: Vec<Option<f64>> = starts
        .par_iter()
        .map(|x| {
            let traj = solver.integrate(&(x - &z0), 0.0, NoiseInput::Path(path), &cfg)?;
            Ok((0..traj.v.len())
                .find(|&i| traj.u(i).h_norm2().sqrt() <= r2_along[i].max(setup.tol))
                .map(|i| traj.times[i]))
        })
        .collect::<Result<_>>()?;
    let non_absorbing = entry_times.iter().any(Option::is_none);
    Ok(AbsorbingEstimate {
        r1: r1_at_zero,
        r2,
        z0_norm,
        constant: setup.constant,
        entry_times,
        non_absorbing,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PullbackPlan {
    /// Increasing pullback times `t_n`.
    pub times: Vec<f64>,
    pub rho: f64,
    /// Initial conditions per pullback time.
    pub samples: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PullbackReport {
    pub times: Vec<f64>,
    /// `max_j ||phi(t_{n+1}, theta_{-t_{n+1}} w) x_{n+1,j} - phi(t_n, theta_{-t_n} w) x_{n,j}||`
    pub successive_distances: Vec<f64>,
    /// `max_j ||phi(t_n, theta_{-t_n} w) x_{n,j}||`
    pub sup_norms: Vec<f64>,
    /// Largest distance between images of different samples at the same `t_n`.
    pub spreads: Vec<f64>,
}

impl PullbackReport {
    /// True when the successive distances decrease from some index on.
    pub fn eventually_decreasing(&self) -> bool {
        let d = &self.successive_distances;
        let start = (0..d.len())
            .rev()
            .find(|&i| i > 0 && d[i] > d[i - 1])
            .unwrap_or(0);
        start + 1 < d.len() || d.len() <= 1
    }

    /// First pullback time `t_{n+1}` whose successive distance is below `threshold`.
    pub fn first_time_below(&self, threshold: f64) -> Option<f64> {
        self.successive_distances
            .iter()
            .position(|&d| d < threshold)
            .map(|i| self.times[i + 1])
    }
}

/// Pullback images `phi(t_n, theta_{-t_n} w) x` for initial conditions on the sphere of radius `rho`.
pub fn pullback_compactness(solver: &GalerkinSolver, path: &NoisePath, plan: &PullbackPlan, config: &SolverConfig) -> Result<PullbackReport> {
    if plan.times.windows(2).any(|w| w[0] >= w[1]) || plan.times.is_empty() {
        return Err(SnsError::InvalidParameter {
            field: "times",
            reason: "pullback times must be non-empty and increasing".into(),
        });
    }
    for &t in &plan.times {
        steps_of(t, config.dt)?;
    }
    let l_max = solver.params().l_max;
    let jobs: Vec<(usize, usize, SpectralField)> = (0..plan.times.len())
        .flat_map(|n| {
            let mut rng = ChaCha8Rng::seed_from_u64(member_seed(plan.seed, n as u64));
            (0..plan.samples)
                .map(|j| (n, j, sample_sphere(l_max, plan.rho, &mut rng)))
                .collect::<Vec<_>>()
        })
        .collect();
    let images: Vec<(usize, usize, SpectralField)> = jobs
        .par_iter()
        .map(|(n, j, x)| {
            let t = plan.times[*n];
            let shifted = path.path_shift(-t)?;
            Ok((*n, *j, cocycle_map(solver, x, t, &shifted, config)?))
        })
        .collect::<Result<_>>()?;
    let mut grid = vec![vec![SpectralField::zeros(l_max); plan.samples]; plan.times.len()];
    for (n, j, img) in images {
        grid[n][j] = img;
    }
    let dist = |a: &SpectralField, b: &SpectralField| (a - b).h_norm2().sqrt();
    let successive_distances = grid
        .windows(2)
        .map(|w| (0..plan.samples).map(|j| dist(&w[0][j], &w[1][j])).fold(0.0, f64::max))
        .collect();
    let sup_norms = grid
        .iter()
        .map(|row| row.iter().map(|f| f.h_norm2().sqrt()).fold(0.0, f64::max))
        .collect();
    let spreads = grid
        .iter()
        .map(|row| {
            let mut s: f64 = 0.0;
            for a in 0..row.len() {
                for b in a + 1..row.len() {
                    s = s.max(dist(&row[a], &row[b]));
                }
            }
            s
        })
        .collect();
    Ok(PullbackReport {
        times: plan.times.clone(),
        successive_distances,
        sup_norms,
        spreads,
    })
}

/// Largest per-step residual of the weak form of the `v` equation tested against `tests`:
/// `(v_{n+1} - v_n, phi)/dt - 1/2 [(R(v_n, z_n), phi) + (R(v_{n+1}, z_n), phi)]`,
/// normalized by `||phi||`. The trajectory must be recorded at every step.
pub fn weak_form_residual(solver: &GalerkinSolver, traj: &Trajectory, tests: &[SpectralField], dt: f64) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for n in 0..traj.v.len().saturating_sub(1) {
        if (traj.times[n + 1] - traj.times[n] - dt).abs() > 1e-9 * dt {
            return Err(SnsError::Misaligned {
                time: traj.times[n + 1] - traj.times[n],
                dt,
            });
        }
        let z = &traj.z[n];
        let r0 = solver.rhs_v(&traj.v[n], z)?;
        let r1 = solver.rhs_v(&traj.v[n + 1], z)?;
        let dv = &traj.v[n + 1] - &traj.v[n];
        for phi in tests {
            let res = dv.inner_h(phi) / dt - 0.5 * (r0.inner_h(phi) + r1.inner_h(phi));
            worst = worst.max(res.abs() / phi.h_norm2().sqrt());
        }
    }
    Ok(worst)
}
