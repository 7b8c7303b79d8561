//! Divergence-free tangent fields stored by their streamfunction, plus the norms used
//! throughout the solver and diagnostics.
//!
//! A field `u = Curl psi` with `psi = sum psi_{l,m} Y_{l,m}` has basis coefficients
//! `u_{l,m} = (u, Z_{l,m}) = sqrt(lambda_l) psi_{l,m}` and vorticity
//! `curl u = lambda_l psi_{l,m}` mode by mode, `lambda_l = l(l+1)`.

use std::io::{BufRead, Write};
use std::ops::{Add, Mul, Neg, Sub};

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Result, SnsError};
use crate::harmonic_basis::{degree_eigenvalue, tri_index, GridField, ScalarCoeffs, SphereTransform};

/// Streamfunction coefficients of a real divergence-free field; the `l = 0` entry is always zero.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralField {
    psi: ScalarCoeffs,
}

impl SpectralField {
    pub fn zeros(l_max: usize) -> Self {
        SpectralField {
            psi: ScalarCoeffs::zeros(l_max),
        }
    }

    /// Wraps streamfunction coefficients, dropping the mean (`l = 0`) component.
    pub fn from_psi(mut psi: ScalarCoeffs) -> Self {
        psi.as_mut_slice()[0] = Complex64::new(0.0, 0.0);
        SpectralField { psi }
    }

    pub fn psi(&self) -> &ScalarCoeffs {
        &self.psi
    }

    pub fn l_max(&self) -> usize {
        self.psi.l_max()
    }

    /// `amplitude * Z_{l,m}` plus its conjugate partner, so the field is real.
    /// For `m = 0` only the real part of `amplitude` survives.
    pub fn z_mode(l_max: usize, l: usize, m: i64, amplitude: Complex64) -> Result<Self> {
        if l == 0 {
            return Err(SnsError::ZeroDegree);
        }
        let mut psi = ScalarCoeffs::zeros(l_max);
        psi.set(l, m, amplitude / degree_eigenvalue(l).sqrt())?;
        Ok(SpectralField { psi })
    }

    /// Basis coefficient `(u, Z_{l,m})`.
    pub fn z_coeff(&self, l: usize, m: i64) -> Complex64 {
        self.psi.get(l, m) * degree_eigenvalue(l).sqrt()
    }

    pub fn set_z_coeff(&mut self, l: usize, m: i64, value: Complex64) -> Result<()> {
        if l == 0 {
            return Err(SnsError::ZeroDegree);
        }
        self.psi.set(l, m, value / degree_eigenvalue(l).sqrt())
    }

    /// Gaussian basis coefficients with standard deviation `(l(l+1))^{-decay/2}`.
    pub fn random<R: Rng + ?Sized>(l_max: usize, decay: f64, rng: &mut R) -> Self {
        let mut out = SpectralField::zeros(l_max);
        for l in 1..=l_max {
            let sd = degree_eigenvalue(l).powf(-0.5 * decay);
            for m in 0..=l {
                let re: f64 = rng.sample(StandardNormal);
                let im: f64 = if m == 0 { 0.0 } else { rng.sample(StandardNormal) };
                let amp = if m == 0 { sd } else { sd * std::f64::consts::FRAC_1_SQRT_2 };
                out.set_z_coeff(l, m as i64, Complex64::new(re, im) * amp)
                    .expect("mode within range");
            }
        }
        out
    }

    /// Zero-pads or truncates to degree `l_max`.
    pub fn resized(&self, l_max: usize) -> Self {
        SpectralField {
            psi: self.psi.resized(l_max),
        }
    }

    /// Multiplies every `(l, m)` coefficient by `f(l, m)` with `m >= 0`.
    /// `f(l, 0)` must be real for the result to stay real.
    pub fn map_modes(&self, f: impl Fn(usize, usize) -> Complex64) -> Self {
        let mut out = self.clone();
        let data = out.psi.as_mut_slice();
        for l in 1..=self.l_max() {
            for m in 0..=l {
                let k = tri_index(l, m);
                data[k] *= f(l, m);
            }
        }
        out
    }

    /// Multiplies degree `l` by the real factor `f(l)`.
    pub fn map_degrees(&self, f: impl Fn(usize) -> f64) -> Self {
        self.map_modes(|l, _| Complex64::new(f(l), 0.0))
    }

    pub fn scaled(&self, factor: f64) -> Self {
        self.map_degrees(|_| factor)
    }

    /// `self + factor * other` on the common degrees, keeping `self.l_max()`.
    pub fn axpy(&self, factor: f64, other: &SpectralField) -> Self {
        let mut out = self.clone();
        let n = other.psi.as_slice().len().min(out.psi.as_slice().len());
        for (a, b) in out.psi.as_mut_slice()[..n].iter_mut().zip(&other.psi.as_slice()[..n]) {
            *a += b * factor;
        }
        out
    }

    /// `(u, w)` in L^2 of tangent fields.
    pub fn inner_h(&self, other: &SpectralField) -> f64 {
        self.psi.weighted_dot(&other.psi, degree_eigenvalue)
    }

    /// `||u||^2 = sum lambda_l |psi_{l,m}|^2`.
    pub fn h_norm2(&self) -> f64 {
        self.psi.weighted_sum_sq(degree_eigenvalue)
    }

    /// `||curl u||^2 = sum lambda_l^2 |psi_{l,m}|^2`, the enstrophy (times two).
    pub fn enstrophy2(&self) -> f64 {
        self.psi.weighted_sum_sq(|l| degree_eigenvalue(l).powi(2))
    }

    /// `||u||_V^2 = ||u||^2 + ||div u||^2 + ||curl u||^2` with `div u = 0`.
    pub fn v_norm2(&self) -> f64 {
        self.psi
            .weighted_sum_sq(|l| degree_eigenvalue(l) + degree_eigenvalue(l).powi(2))
    }

    /// Dual norm against `V`: `sum |u_{l,m}|^2 / (1 + lambda_l)`.
    pub fn v_prime_norm2(&self) -> f64 {
        self.psi
            .weighted_sum_sq(|l| degree_eigenvalue(l) / (1.0 + degree_eigenvalue(l)))
    }

    pub fn max_abs_psi(&self) -> f64 {
        self.psi.max_abs()
    }
}

impl Add for &SpectralField {
    type Output = SpectralField;
    fn add(self, rhs: &SpectralField) -> SpectralField {
        self.axpy(1.0, rhs)
    }
}

impl Sub for &SpectralField {
    type Output = SpectralField;
    fn sub(self, rhs: &SpectralField) -> SpectralField {
        self.axpy(-1.0, rhs)
    }
}

impl Mul<f64> for &SpectralField {
    type Output = SpectralField;
    fn mul(self, rhs: f64) -> SpectralField {
        self.scaled(rhs)
    }
}

impl Neg for &SpectralField {
    type Output = SpectralField;
    fn neg(self) -> SpectralField {
        self.scaled(-1.0)
    }
}

/// Tangent field sampled on a quadrature grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridTangentField {
    pub u_theta: GridField,
    pub u_phi: GridField,
}

impl GridTangentField {
    pub fn zeros(n_theta: usize, n_phi: usize) -> Self {
        GridTangentField {
            u_theta: GridField::zeros(n_theta, n_phi),
            u_phi: GridField::zeros(n_theta, n_phi),
        }
    }

    /// Pointwise `u . w`.
    pub fn dot(&self, other: &GridTangentField) -> GridField {
        let a = self.u_theta.zip_map(&other.u_theta, |x, y| x * y);
        let b = self.u_phi.zip_map(&other.u_phi, |x, y| x * y);
        a.zip_map(&b, |x, y| x + y)
    }

    /// Pointwise normal component `x . (u × w)`.
    pub fn cross_normal(&self, other: &GridTangentField) -> GridField {
        let a = self.u_theta.zip_map(&other.u_phi, |x, y| x * y);
        let b = self.u_phi.zip_map(&other.u_theta, |x, y| x * y);
        a.zip_map(&b, |x, y| x - y)
    }

    /// `u × (x s)` for a normal field `s`: components `s (u_phi, -u_theta)`.
    pub fn cross_with_normal(&self, s: &GridField) -> GridTangentField {
        GridTangentField {
            u_theta: self.u_phi.zip_map(s, |u, s| u * s),
            u_phi: self.u_theta.zip_map(s, |u, s| -u * s),
        }
    }

    /// `x × u`: components `(-u_phi, u_theta)`.
    pub fn rotate(&self) -> GridTangentField {
        GridTangentField {
            u_theta: GridField {
                values: self.u_phi.values.iter().map(|v| -v).collect(),
                ..self.u_phi.clone()
            },
            u_phi: self.u_theta.clone(),
        }
    }

    pub fn scale_by(&self, s: &GridField) -> GridTangentField {
        GridTangentField {
            u_theta: self.u_theta.zip_map(s, |u, s| u * s),
            u_phi: self.u_phi.zip_map(s, |u, s| u * s),
        }
    }

    pub fn combine(&self, a: f64, other: &GridTangentField, b: f64) -> GridTangentField {
        GridTangentField {
            u_theta: self.u_theta.zip_map(&other.u_theta, |x, y| a * x + b * y),
            u_phi: self.u_phi.zip_map(&other.u_phi, |x, y| a * x + b * y),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.u_theta.max_abs().max(self.u_phi.max_abs())
    }
}

/// `u = Curl psi` on the grid, evaluated from the spectral derivatives.
pub fn velocity(f: &SpectralField, transform: &SphereTransform) -> Result<GridTangentField> {
    let (u_theta, u_phi) = transform.synthesize_curl(f.psi())?;
    Ok(GridTangentField { u_theta, u_phi })
}

/// `curl u`, i.e. `lambda_l psi_{l,m}`.
pub fn vorticity(f: &SpectralField) -> ScalarCoeffs {
    f.map_degrees(degree_eigenvalue).psi
}

/// `(sum_i w_i |u(x_i)|^4)^{1/4}` over the transform grid.
pub fn l4_norm(f: &SpectralField, transform: &SphereTransform) -> Result<f64> {
    let u = velocity(f, transform)?;
    let sq = u.dot(&u);
    let quartic = GridField {
        values: sq.values.iter().map(|v| v * v).collect(),
        ..sq
    };
    Ok(transform.integrate(&quartic).max(0.0).powf(0.25))
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct FieldNorms {
    pub h: f64,
    pub v: f64,
    pub l4: f64,
    /// `[u]^2 = nu ||u||_V^2 - nu lambda_1 / 2 ||u||^2`
    pub bracket2: f64,
}

pub fn norms(f: &SpectralField, transform: &SphereTransform, nu: f64, lambda1: f64) -> Result<FieldNorms> {
    let h2 = f.h_norm2();
    let v2 = f.v_norm2();
    Ok(FieldNorms {
        h: h2.sqrt(),
        v: v2.sqrt(),
        l4: l4_norm(f, transform)?,
        bracket2: nu * v2 - nu * 0.5 * lambda1 * h2,
    })
}

const CSV_MAGIC: &str = "# sphere-sns streamfunction v1, L=";

/// Writes the `m >= 0` streamfunction coefficients of degrees `l >= 1`.
pub fn write_coeffs_csv<W: Write>(f: &SpectralField, mut out: W) -> Result<()> {
    let io = |e| SnsError::io("<coefficient stream>", e);
    writeln!(out, "{CSV_MAGIC}{}", f.l_max()).map_err(io)?;
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| SnsError::Format(e.to_string());
    w.write_record(["l", "m", "re", "im"]).map_err(csv_err)?;
    for (l, m, c) in f.psi().iter().filter(|(l, _, _)| *l >= 1) {
        w.write_record([
            l.to_string(),
            m.to_string(),
            format!("{:e}", c.re),
            format!("{:e}", c.im),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(io)?;
    Ok(())
}

/// Reads the coefficient format; rows with `m < 0` are folded in by conjugate symmetry.
pub fn read_coeffs_csv<R: BufRead>(mut input: R) -> Result<SpectralField> {
    let mut first = String::new();
    input
        .read_line(&mut first)
        .map_err(|e| SnsError::io("<coefficient stream>", e))?;
    let l_max: usize = first
        .trim_end()
        .strip_prefix(CSV_MAGIC)
        .and_then(|s| s.trim().parse().ok())
        .ok_or_else(|| SnsError::Format(format!("bad header line {:?}", first.trim_end())))?;
    let mut field = SpectralField::zeros(l_max);
    let mut rdr = csv::Reader::from_reader(input);
    for rec in rdr.records() {
        let rec = rec.map_err(|e| SnsError::Format(e.to_string()))?;
        if rec.len() != 4 {
            return Err(SnsError::Format(format!("expected 4 columns, got {}", rec.len())));
        }
        let parse_err = |what: &str| SnsError::Format(format!("unparsable {what} in row {rec:?}"));
        let l: usize = rec[0].trim().parse().map_err(|_| parse_err("l"))?;
        let m: i64 = rec[1].trim().parse().map_err(|_| parse_err("m"))?;
        let re: f64 = rec[2].trim().parse().map_err(|_| parse_err("re"))?;
        let im: f64 = rec[3].trim().parse().map_err(|_| parse_err("im"))?;
        if l == 0 {
            return Err(SnsError::Format("degree 0 row in streamfunction file".into()));
        }
        field.psi.set(l, m, Complex64::new(re, im))?;
    }
    Ok(field)
}
