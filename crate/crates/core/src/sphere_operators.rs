//! Stokes operator, its powers, Coriolis, Leray projection and Galerkin truncation.
//! All of them are mode-wise multipliers on the streamfunction coefficients.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SnsError};
use crate::flow_fields::{GridTangentField, SpectralField};
use crate::harmonic_basis::{degree_eigenvalue, ScalarCoeffs, SphereTransform};
use crate::stochastic_forcing::NoiseSpec;

/// Which spectrum the Stokes operator carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorVariant {
    /// `sigma_l = l(l+1)`
    #[default]
    LaplaceBeltrami,
    /// `sigma_l = l(l+1) - 2`, the Hodge Laplacian with the Ricci term of the unit sphere.
    HodgeRicci,
}

impl OperatorVariant {
    pub fn eigenvalue(self, l: usize) -> f64 {
        match self {
            OperatorVariant::LaplaceBeltrami => degree_eigenvalue(l),
            OperatorVariant::HodgeRicci => degree_eigenvalue(l) - 2.0,
        }
    }

    /// Smallest eigenvalue on divergence-free fields (degree 1).
    pub fn lambda1(self) -> f64 {
        self.eigenvalue(1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub nu: f64,
    /// Angular velocity of the frame.
    pub rotation: f64,
    pub alpha: f64,
    pub l_max: usize,
    pub variant: OperatorVariant,
    /// Deterministic forcing, stored by its streamfunction.
    pub forcing: SpectralField,
    pub noise: NoiseSpec,
}

impl ModelParams {
    /// Non-rotating, unforced, noise-free model.
    pub fn new(nu: f64, l_max: usize) -> Result<Self> {
        let p = ModelParams {
            nu,
            rotation: 0.0,
            alpha: 0.0,
            l_max,
            variant: OperatorVariant::default(),
            forcing: SpectralField::zeros(l_max),
            noise: NoiseSpec::off(),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_rotation(mut self, rotation: f64) -> Self {
        self.rotation = rotation;
        self
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn with_variant(mut self, variant: OperatorVariant) -> Self {
        self.variant = variant;
        self
    }

    pub fn with_noise(mut self, noise: NoiseSpec) -> Self {
        self.noise = noise;
        self
    }

    /// The forcing is truncated or padded to `l_max`.
    pub fn with_forcing(mut self, forcing: &SpectralField) -> Self {
        self.forcing = forcing.resized(self.l_max);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field, reason: &str| {
            Err(SnsError::InvalidParameter {
                field,
                reason: reason.to_string(),
            })
        };
        // nu = 0 is admitted for inviscid conservation runs
        if !(self.nu.is_finite() && self.nu >= 0.0) {
            return bad("nu", "must be finite and non-negative");
        }
        if !(self.rotation.is_finite() && self.rotation >= 0.0) {
            return bad("rotation", "must be finite and non-negative");
        }
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return bad("alpha", "must be finite and non-negative");
        }
        if self.l_max == 0 {
            return bad("l_max", "truncation degree must be at least 1");
        }
        if self.forcing.l_max() != self.l_max {
            return Err(SnsError::DimensionMismatch {
                expected: format!("forcing at L={}", self.l_max),
                got: format!("L={}", self.forcing.l_max()),
            });
        }
        self.noise.validate()
    }

    pub fn lambda1(&self) -> f64 {
        self.variant.lambda1()
    }

    pub fn sigma(&self, l: usize) -> f64 {
        self.variant.eigenvalue(l)
    }

    /// Linear part of the velocity equation for mode `(l, m)`:
    /// `dpsi/dt = -kappa psi + ...` with `kappa = nu sigma_l + c_{l,m}`.
    pub fn linear_symbol(&self, l: usize, m: i64) -> Complex64 {
        coriolis_symbol(l, m, self.rotation) + self.nu * self.sigma(l)
    }
}

/// `A f`, multiplying degree `l` by `sigma_l`.
pub fn apply_a(f: &SpectralField, variant: OperatorVariant) -> SpectralField {
    f.map_degrees(|l| variant.eigenvalue(l))
}

/// `A^s f`. Negative powers under the Ricci variant need vanishing degree-1 content.
pub fn apply_a_power(f: &SpectralField, s: f64, variant: OperatorVariant) -> Result<SpectralField> {
    if s < 0.0 && variant == OperatorVariant::HodgeRicci {
        let magnitude = (-1..=1)
            .map(|m| f.z_coeff(1, m).norm())
            .fold(0.0, f64::max);
        if magnitude > 1e-14 {
            return Err(SnsError::NonInvertible { magnitude });
        }
        return Ok(f.map_degrees(|l| if l == 1 { 0.0 } else { variant.eigenvalue(l).powf(s) }));
    }
    if s == 0.0 {
        return Ok(f.clone());
    }
    Ok(f.map_degrees(|l| variant.eigenvalue(l).powf(s)))
}

/// Multiplier of the projected Coriolis operator `P C_1` on `psi_{l,m}`:
/// `(P C_1 u)^ = -i 2 Omega m / lambda_l psi^`. The velocity equation carries `-C u`,
/// so a free mode evolves as `exp(i 2 Omega m t / lambda_l)`.
pub fn coriolis_symbol(l: usize, m: i64, omega: f64) -> Complex64 {
    if l == 0 {
        return Complex64::new(0.0, 0.0);
    }
    Complex64::new(0.0, -2.0 * omega * m as f64 / degree_eigenvalue(l))
}

/// `P C_1 f` in the streamfunction basis.
pub fn apply_coriolis(f: &SpectralField, omega: f64) -> SpectralField {
    f.map_modes(|l, m| coriolis_symbol(l, m as i64, omega))
}

/// Leray projection of a grid tangent field onto the divergence-free fields of degree
/// at most `transform.l_max()`: `psi = curl F / lambda_l`.
pub fn leray_project(f: &GridTangentField, transform: &SphereTransform) -> Result<SpectralField> {
    let curl = transform.curl_coeffs(&f.u_theta, &f.u_phi)?;
    Ok(psi_from_vorticity(curl))
}

/// Inverts `omega = lambda_l psi` for `l >= 1`; the mean is dropped.
pub(crate) fn psi_from_vorticity(omega: ScalarCoeffs) -> SpectralField {
    SpectralField::from_psi(omega).map_degrees(|l| 1.0 / degree_eigenvalue(l))
}

/// Galerkin projection `P_L`, keeping the storage size of `f`.
pub fn truncate(f: &SpectralField, l_cut: usize) -> Result<SpectralField> {
    if l_cut > f.l_max() {
        return Err(SnsError::DegreeOverflow {
            requested: l_cut,
            max: f.l_max(),
        });
    }
    Ok(f.map_degrees(|l| if l <= l_cut { 1.0 } else { 0.0 }))
}
