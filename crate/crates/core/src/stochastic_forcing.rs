//! Additive noise `G dW` with `G = epsilon A^{-s}` and the stationary Ornstein-Uhlenbeck
//! process `dz + (nu A + alpha + C) z dt = G dW`.
//!
//! Gaussian increments come from a counter-based stream: the draw for absolute step `k`
//! and mode `(l, m)` depends only on `(seed, k, l, m)`. A [`NoisePath`] fixes an anchor step
//! where the process starts in its stationary law; `z` at any later step is the exact OU
//! transition chain from there, so time shifts are plain index offsets.

use std::sync::Arc;

use num_complex::Complex64;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SnsError};
use crate::flow_fields::{l4_norm, SpectralField};
use crate::harmonic_basis::{degree_eigenvalue, tri_index, tri_len, SphereTransform};
use crate::sphere_operators::{coriolis_symbol, ModelParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub epsilon: f64,
    #[serde(default = "default_s_exponent")]
    pub s_exponent: f64,
    #[serde(default)]
    pub seed: u64,
    /// Admits `s_exponent <= 1/2`, where the noise is no longer trace class in `H`.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub allow_rough_noise: bool,
}

fn default_s_exponent() -> f64 {
    1.0
}

impl NoiseSpec {
    pub fn new(epsilon: f64, s_exponent: f64, seed: u64) -> Self {
        NoiseSpec {
            epsilon,
            s_exponent,
            seed,
            allow_rough_noise: false,
        }
    }

    pub fn off() -> Self {
        NoiseSpec::new(0.0, 1.0, 0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon.is_finite() && self.epsilon >= 0.0) {
            return Err(SnsError::InvalidParameter {
                field: "epsilon",
                reason: "must be finite and non-negative".into(),
            });
        }
        if !self.s_exponent.is_finite() {
            return Err(SnsError::InvalidParameter {
                field: "s_exponent",
                reason: "must be finite".into(),
            });
        }
        if self.s_exponent <= 0.5 && !self.allow_rough_noise {
            return Err(SnsError::InvalidParameter {
                field: "s_exponent",
                reason: format!(
                    "{} is at or below the regularity threshold 1/2: epsilon A^(-s) W is \
                     radonifying into H only for s > 1/2 (set allow_rough_noise to override)",
                    self.s_exponent
                ),
            });
        }
        Ok(())
    }
}

/// `g_l = epsilon (l(l+1))^{-s}`, the noise amplitude on every mode of degree `l`.
pub fn mode_noise_amplitude(l: usize, spec: &NoiseSpec) -> f64 {
    if spec.epsilon == 0.0 {
        return 0.0;
    }
    spec.epsilon * degree_eigenvalue(l).powf(-spec.s_exponent)
}

/// OU drift `gamma_{l,m} = nu sigma_l + alpha + c_{l,m}`.
pub fn ou_drift(l: usize, m: i64, params: &ModelParams) -> Complex64 {
    coriolis_symbol(l, m, params.rotation) + (params.nu * params.sigma(l) + params.alpha)
}

/// Stationary `E|z_{l,m}|^2 = g_l^2 / (2 (nu sigma_l + alpha))`.
pub fn stationary_variance(l: usize, params: &ModelParams) -> Result<f64> {
    let g = mode_noise_amplitude(l, &params.noise);
    if g == 0.0 {
        return Ok(0.0);
    }
    let r = params.nu * params.sigma(l) + params.alpha;
    if r <= 0.0 {
        return Err(SnsError::DegenerateDrift { l });
    }
    Ok(g * g / (2.0 * r))
}

/// Seed for ensemble member `member`: `seed ^ splitmix64(member)`.
pub fn member_seed(seed: u64, member: u64) -> u64 {
    seed ^ splitmix64(member)
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const INIT_SALT: u64 = 0x5354_4154_494F_4E41;

/// Standard normal pairs for every mode slot `(l, m)` up to `l_max`, in triangle order.
fn mode_normals(key: u64, stream: i64, l_max: usize) -> Vec<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    rng.set_stream(stream as u64);
    let unit = |x: u64| ((x >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64);
    (0..tri_len(l_max))
        .map(|_| {
            let u1 = unit(rng.next_u64());
            let u2 = unit(rng.next_u64());
            let r = (-2.0 * u1.ln()).sqrt();
            let (s, c) = (std::f64::consts::TAU * u2).sin_cos();
            (r * c, r * s)
        })
        .collect()
}

/// Complex Gaussian with `E|x|^2 = var`; real for `m = 0`.
fn complex_gaussian(normals: (f64, f64), m: usize, var: f64) -> Complex64 {
    if m == 0 {
        Complex64::new(var.sqrt() * normals.0, 0.0)
    } else {
        Complex64::new(normals.0, normals.1) * (0.5 * var).sqrt()
    }
}

/// OU state at an absolute step; `z` holds basis coefficients `(z, Z_{l,m})`, `m >= 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct OUState {
    pub t: f64,
    pub step: i64,
    pub seed: u64,
    pub l_max: usize,
    pub z: Vec<Complex64>,
}

impl OUState {
    pub fn field(&self) -> SpectralField {
        let mut f = SpectralField::zeros(self.l_max);
        for l in 1..=self.l_max {
            for m in 0..=l {
                f.set_z_coeff(l, m as i64, self.z[tri_index(l, m)])
                    .expect("mode within range");
            }
        }
        f
    }

    pub fn coeff(&self, l: usize, m: usize) -> Complex64 {
        self.z[tri_index(l, m)]
    }
}

/// Per-mode OU transition over a fixed step.
#[derive(Debug, Clone)]
pub struct OuStepper {
    dt: f64,
    l_max: usize,
    decay: Vec<Complex64>,
    increment_var: Vec<f64>,
    stationary_var: Vec<f64>,
}

impl OuStepper {
    pub fn new(params: &ModelParams, dt: f64) -> Result<Self> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(SnsError::InvalidParameter {
                field: "dt",
                reason: "must be positive".into(),
            });
        }
        let n = tri_len(params.l_max);
        let mut decay = vec![Complex64::new(0.0, 0.0); n];
        let mut increment_var = vec![0.0; n];
        let mut stationary_var = vec![0.0; n];
        for l in 1..=params.l_max {
            let g = mode_noise_amplitude(l, &params.noise);
            let sv = stationary_variance(l, params)?;
            for m in 0..=l {
                let k = tri_index(l, m);
                let gamma = ou_drift(l, m as i64, params);
                decay[k] = (-gamma * dt).exp();
                stationary_var[k] = sv;
                increment_var[k] = if g == 0.0 {
                    0.0
                } else {
                    g * g * -(-2.0 * gamma.re * dt).exp_m1() / (2.0 * gamma.re)
                };
            }
        }
        Ok(OuStepper {
            dt,
            l_max: params.l_max,
            decay,
            increment_var,
            stationary_var,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn l_max(&self) -> usize {
        self.l_max
    }

    /// Draw from the stationary law, keyed by `(seed, step)`.
    pub fn stationary(&self, seed: u64, step: i64) -> OUState {
        let normals = mode_normals(splitmix64(seed ^ INIT_SALT), step, self.l_max);
        let mut z = vec![Complex64::new(0.0, 0.0); tri_len(self.l_max)];
        for l in 1..=self.l_max {
            for m in 0..=l {
                let k = tri_index(l, m);
                z[k] = complex_gaussian(normals[k], m, self.stationary_var[k]);
            }
        }
        OUState {
            t: step as f64 * self.dt,
            step,
            seed,
            l_max: self.l_max,
            z,
        }
    }

    /// Exact transition from `state.step` to `state.step + 1`.
    pub fn step(&self, state: &OUState) -> OUState {
        let mut z = state.z.clone();
        if self.increment_var.iter().any(|&v| v > 0.0) {
            let normals = mode_normals(state.seed, state.step, self.l_max);
            for l in 1..=self.l_max {
                for m in 0..=l {
                    let k = tri_index(l, m);
                    z[k] = self.decay[k] * z[k] + complex_gaussian(normals[k], m, self.increment_var[k]);
                }
            }
        } else {
            for (zk, d) in z.iter_mut().zip(&self.decay) {
                *zk *= d;
            }
        }
        OUState {
            t: (state.step + 1) as f64 * self.dt,
            step: state.step + 1,
            seed: state.seed,
            l_max: self.l_max,
            z,
        }
    }
}

/// Stationary initial state at step 0.
pub fn ou_stationary_init(params: &ModelParams, dt: f64, seed: u64) -> Result<OUState> {
    Ok(OuStepper::new(params, dt)?.stationary(seed, 0))
}

/// One exact OU step of size `dt`.
pub fn ou_step(state: &OUState, params: &ModelParams, dt: f64) -> Result<OUState> {
    Ok(OuStepper::new(params, dt)?.step(state))
}

/// A realization of the truncated two-sided noise and its OU process on the lattice `dt Z`.
///
/// Path time `t` maps to absolute step `offset + t/dt`. The process is stationary from the
/// `anchor` step on; earlier queries fail.
#[derive(Debug, Clone)]
pub struct NoisePath {
    seed: u64,
    offset: i64,
    anchor: i64,
    stepper: Arc<OuStepper>,
}

impl NoisePath {
    /// Path with seed `params.noise.seed`, stationary from path time `anchor_time`.
    pub fn new(params: &ModelParams, dt: f64, anchor_time: f64) -> Result<Self> {
        let stepper = Arc::new(OuStepper::new(params, dt)?);
        let anchor = steps_of(anchor_time, dt)?;
        Ok(NoisePath {
            seed: params.noise.seed,
            offset: 0,
            anchor,
            stepper,
        })
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn dt(&self) -> f64 {
        self.stepper.dt
    }

    pub fn l_max(&self) -> usize {
        self.stepper.l_max
    }

    /// Absolute step index of path time `t`.
    pub fn absolute_step(&self, t: f64) -> Result<i64> {
        Ok(self.offset + steps_of(t, self.dt())?)
    }

    /// Earliest path time at which `z` is defined.
    pub fn earliest_time(&self) -> f64 {
        (self.anchor - self.offset) as f64 * self.dt()
    }

    /// `theta_s`: the same realization seen from time `s`.
    pub fn path_shift(&self, s: f64) -> Result<NoisePath> {
        let k = steps_of(s, self.dt())?;
        Ok(NoisePath {
            offset: self.offset + k,
            ..self.clone()
        })
    }

    /// Iterator of OU states starting at path time `t`.
    pub fn cursor(&self, t: f64) -> Result<OuCursor<'_>> {
        let target = self.absolute_step(t)?;
        if target < self.anchor {
            return Err(SnsError::BeforeAnchor {
                step: target,
                anchor: self.anchor,
            });
        }
        let mut state = self.stepper.stationary(self.seed, self.anchor);
        while state.step < target {
            state = self.stepper.step(&state);
        }
        Ok(OuCursor {
            path: self,
            state,
        })
    }

    pub fn z_at(&self, t: f64) -> Result<SpectralField> {
        Ok(self.cursor(t)?.field())
    }
}

/// Walks a noise path one step at a time.
#[derive(Debug, Clone)]
pub struct OuCursor<'a> {
    path: &'a NoisePath,
    state: OUState,
}

impl<'a> OuCursor<'a> {
    pub fn state(&self) -> &OUState {
        &self.state
    }

    pub fn field(&self) -> SpectralField {
        self.state.field()
    }

    /// Path time of the current state.
    pub fn time(&self) -> f64 {
        (self.state.step - self.path.offset) as f64 * self.path.dt()
    }

    pub fn advance(&mut self) {
        self.state = self.path.stepper.step(&self.state);
    }
}

/// Number of whole steps in `t`; errors unless `t` is an integer multiple of `dt`.
pub fn steps_of(t: f64, dt: f64) -> Result<i64> {
    let r = t / dt;
    let k = r.round();
    if !r.is_finite() || (r - k).abs() > 1e-9 * k.abs().max(1.0) {
        return Err(SnsError::Misaligned { time: t, dt });
    }
    Ok(k as i64)
}

/// Time average of `||z||^2 + ||z||_{L4}^2` over `[-t_avg, 0]` (trapezoid rule on the lattice).
pub fn ergodic_average(path: &NoisePath, t_avg: f64, transform: &SphereTransform) -> Result<f64> {
    Ok(ergodic_averages(path, t_avg, transform)?.combined())
}

/// Separate time averages of `||z||^2` and `||z||_{L4}^2` over `[-t_avg, 0]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErgodicAverages {
    pub h2: f64,
    pub l4_2: f64,
}

impl ErgodicAverages {
    pub fn combined(&self) -> f64 {
        self.h2 + self.l4_2
    }
}

pub fn ergodic_averages(path: &NoisePath, t_avg: f64, transform: &SphereTransform) -> Result<ErgodicAverages> {
    if !(t_avg > 0.0) {
        return Err(SnsError::InvalidParameter {
            field: "t_avg",
            reason: "averaging window must be positive".into(),
        });
    }
    let n = steps_of(t_avg, path.dt())?;
    let mut cursor = path.cursor(-t_avg)?;
    let (mut h2, mut l4_2) = (0.0, 0.0);
    for i in 0..=n {
        let w = if i == 0 || i == n { 0.5 } else { 1.0 };
        let z = cursor.field();
        h2 += w * z.h_norm2();
        if z.max_abs_psi() > 0.0 {
            l4_2 += w * l4_norm(&z, transform)?.powi(2);
        }
        if i < n {
            cursor.advance();
        }
    }
    Ok(ErgodicAverages {
        h2: h2 / n as f64,
        l4_2: l4_2 / n as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(eps: f64, s: f64, l: usize) -> ModelParams {
        ModelParams::new(1.0, l)
            .unwrap()
            .with_noise(NoiseSpec::new(eps, s, 42))
    }

    #[test]
    fn amplitudes() {
        assert_eq!(mode_noise_amplitude(1, &NoiseSpec::new(1.0, 1.0, 0)), 0.5);
        assert_eq!(mode_noise_amplitude(7, &NoiseSpec::off()), 0.0);
        // 6^-0.6 = exp(-0.6 ln 6)
        let expected = (-0.6 * 6f64.ln()).exp();
        assert!((mode_noise_amplitude(2, &NoiseSpec::new(1.0, 0.6, 0)) - expected).abs() < 1e-15);
        assert!((expected - 0.341_278_751_846_536_5).abs() < 1e-15);
    }

    #[test]
    fn spec_validation_threshold() {
        assert!(NoiseSpec::new(1.0, 0.6, 0).validate().is_ok());
        let err = NoiseSpec::new(1.0, 0.4, 0).validate().unwrap_err();
        assert!(err.to_string().contains("1/2"));
        let mut rough = NoiseSpec::new(1.0, 0.4, 0);
        rough.allow_rough_noise = true;
        assert!(rough.validate().is_ok());
    }

    #[test]
    fn stationary_variance_first_mode() {
        assert_eq!(stationary_variance(1, &params(1.0, 1.0, 3)).unwrap(), 1.0 / 16.0);
    }

    #[test]
    fn degenerate_drift_detected() {
        let p = params(1.0, 1.0, 3).with_variant(crate::sphere_operators::OperatorVariant::HodgeRicci);
        assert!(matches!(OuStepper::new(&p, 0.1), Err(SnsError::DegenerateDrift { l: 1 })));
        assert!(OuStepper::new(&p.with_alpha(0.5), 0.1).is_ok());
    }

    #[test]
    fn zero_noise_is_pure_decay() {
        let p = ModelParams::new(0.3, 4).unwrap().with_rotation(2.0);
        let st = OuStepper::new(&p, 0.05).unwrap();
        let mut s = st.stationary(1, 0);
        assert!(s.z.iter().all(|c| c.norm() == 0.0));
        s.z[tri_index(3, 2)] = Complex64::new(1.0, 0.5);
        let next = st.step(&s);
        let expected = s.z[tri_index(3, 2)] * (-ou_drift(3, 2, &p) * 0.05).exp();
        assert_eq!(next.coeff(3, 2), expected);
    }

    #[test]
    fn draws_are_deterministic_and_shared_across_truncations() {
        let a = OuStepper::new(&params(1.0, 1.0, 5), 0.01).unwrap();
        let b = OuStepper::new(&params(1.0, 1.0, 9), 0.01).unwrap();
        let sa = a.step(&a.stationary(7, -3));
        let sb = b.step(&b.stationary(7, -3));
        assert_eq!(sa, a.step(&a.stationary(7, -3)));
        for l in 1..=5 {
            for m in 0..=l {
                assert_eq!(sa.coeff(l, m), sb.coeff(l, m));
            }
        }
        assert!(sa.coeff(1, 0).im == 0.0);
    }

    #[test]
    fn shift_is_an_index_offset() {
        let p = params(0.5, 1.0, 4);
        let path = NoisePath::new(&p, 0.01, -5.0).unwrap();
        let shifted = path.path_shift(1.0).unwrap();
        assert_eq!(shifted.z_at(0.0).unwrap(), path.z_at(1.0).unwrap());
        let composed = path.path_shift(0.3).unwrap().path_shift(-0.7).unwrap();
        assert_eq!(composed.z_at(0.2).unwrap(), path.path_shift(-0.4).unwrap().z_at(0.2).unwrap());
        assert_eq!(path.path_shift(0.0).unwrap().z_at(0.5).unwrap(), path.z_at(0.5).unwrap());
        assert!(matches!(path.path_shift(0.015), Err(SnsError::Misaligned { .. })));
        assert!(matches!(path.z_at(-6.0), Err(SnsError::BeforeAnchor { .. })));
    }

    #[test]
    fn member_seeds_differ() {
        assert_ne!(member_seed(1, 0), member_seed(1, 1));
        assert_eq!(member_seed(9, 3), 9 ^ splitmix64(3));
    }

    #[test]
    fn steps_of_alignment() {
        assert_eq!(steps_of(1.0, 0.01).unwrap(), 100);
        assert_eq!(steps_of(-0.3, 0.1).unwrap(), -3);
        assert!(steps_of(0.25, 0.1).is_err());
    }
}
