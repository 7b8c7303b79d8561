//! Scalar and vector spherical harmonics on a Gauss-Legendre x equiangular grid.
//!
//! Conventions: complex orthonormal harmonics with the Condon-Shortley phase,
//!
//! ```text
//! Y_{l,m}(theta, phi) = Pbar_l^m(cos theta) e^{i m phi},   Y_{l,-m} = (-1)^m conj(Y_{l,m})
//! ```
//!
//! where `Pbar` already carries the factor `sqrt((2l+1)/(4 pi) (l-m)!/(l+m)!)`.
//! Divergence-free basis fields are `Z_{l,m} = (l(l+1))^{-1/2} Curl Y_{l,m}` with
//! `Curl psi = -x × grad psi`, i.e. components `(u_theta, u_phi) = (d_phi psi / sin theta, -d_theta psi)`.
//!
//! Real fields are stored by their `m >= 0` coefficients only; negative orders follow
//! from conjugate symmetry.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Result, SnsError};

/// Largest supported truncation degree.
pub const MAX_DEGREE: usize = 512;

const RESCALE: f64 = 1e250;

#[inline]
pub(crate) fn tri_index(l: usize, m: usize) -> usize {
    l * (l + 1) / 2 + m
}

#[inline]
pub(crate) fn tri_len(l_max: usize) -> usize {
    (l_max + 1) * (l_max + 2) / 2
}

/// `l(l+1)`, the Laplace-Beltrami eigenvalue of degree `l`.
#[inline]
pub fn degree_eigenvalue(l: usize) -> f64 {
    (l * (l + 1)) as f64
}

/// Truncation degree together with the quadrature grid used for transforms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TruncationSpec {
    pub l_max: usize,
    pub n_theta: usize,
    pub n_phi: usize,
}

/// Smallest `n >= min` whose prime factors are 2, 3 and 5.
fn fft_friendly(min: usize) -> usize {
    (min.max(1)..)
        .find(|&n| {
            let mut k = n;
            for p in [2, 3, 5] {
                while k % p == 0 {
                    k /= p;
                }
            }
            k == 1
        })
        .expect("5-smooth numbers are unbounded")
}

impl TruncationSpec {
    /// Dealiasing grid for quadratic products: `n_theta = ceil((3L+2)/2)` and the smallest
    /// FFT-friendly `n_phi >= 3L+1`.
    pub fn new(l_max: usize) -> Result<Self> {
        Self::with_grid(l_max, (3 * l_max + 3) / 2, fft_friendly(3 * l_max + 1))
    }

    /// Smallest grid on which band-limited fields are still transformed exactly.
    /// Quadratic products alias on this grid.
    pub fn minimal(l_max: usize) -> Result<Self> {
        Self::with_grid(l_max, l_max + 1, 2 * l_max + 1)
    }

    pub fn with_grid(l_max: usize, n_theta: usize, n_phi: usize) -> Result<Self> {
        if l_max == 0 {
            return Err(SnsError::InvalidTruncation("L must be at least 1".into()));
        }
        if l_max > MAX_DEGREE {
            return Err(SnsError::DegreeOverflow {
                requested: l_max,
                max: MAX_DEGREE,
            });
        }
        if n_theta < l_max + 1 || n_phi < 2 * l_max + 1 {
            return Err(SnsError::InvalidTruncation(format!(
                "grid {n_theta}x{n_phi} too coarse for L={l_max} (need n_theta >= {}, n_phi >= {})",
                l_max + 1,
                2 * l_max + 1
            )));
        }
        Ok(TruncationSpec {
            l_max,
            n_theta,
            n_phi,
        })
    }

    /// True when the grid integrates cubic products of degree-L fields exactly.
    pub fn is_dealiased(&self) -> bool {
        2 * self.n_theta >= 3 * self.l_max + 2 && self.n_phi > 3 * self.l_max
    }

    /// Number of stored `m >= 0` coefficients.
    pub fn coeff_len(&self) -> usize {
        tri_len(self.l_max)
    }
}

/// Gauss-Legendre nodes (ascending) and weights on [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

/// Newton iteration on the three-term recurrence.
pub fn gauss_legendre(n: usize) -> GaussLegendre {
    assert!(n >= 1, "gauss_legendre needs at least one node");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let nf = n as f64;
    for i in 0..(n + 1) / 2 {
        // i-th largest root
        let mut x = (PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_and_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() <= 1e-16 * x.abs().max(1e-300) {
                let (_, d) = legendre_and_derivative(n, x);
                dp = d;
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[n - 1 - i] = x;
        weights[n - 1 - i] = w;
        nodes[i] = -x;
        weights[i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    GaussLegendre { nodes, weights }
}

fn legendre_and_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let nf = n as f64;
    (p1, nf * (x * p1 - p0) / (x * x - 1.0))
}

/// Tensor grid: Gauss-Legendre in `mu = cos theta`, equispaced in longitude.
#[derive(Debug, Clone)]
pub struct QuadratureGrid {
    pub mu: Vec<f64>,
    pub weights: Vec<f64>,
    pub theta: Vec<f64>,
    pub sin_theta: Vec<f64>,
    pub phi: Vec<f64>,
}

impl QuadratureGrid {
    pub fn new(n_theta: usize, n_phi: usize) -> Self {
        let gl = gauss_legendre(n_theta);
        let theta = gl.nodes.iter().map(|mu| mu.acos()).collect();
        let sin_theta = gl.nodes.iter().map(|mu| (1.0 - mu * mu).sqrt()).collect();
        let phi = (0..n_phi)
            .map(|j| 2.0 * PI * j as f64 / n_phi as f64)
            .collect();
        QuadratureGrid {
            mu: gl.nodes,
            weights: gl.weights,
            theta,
            sin_theta,
            phi,
        }
    }

    pub fn n_theta(&self) -> usize {
        self.mu.len()
    }

    pub fn n_phi(&self) -> usize {
        self.phi.len()
    }

    /// Surface weight of node (i, j); the weights sum to 4 pi.
    pub fn area_weight(&self, i: usize) -> f64 {
        self.weights[i] * 2.0 * PI / self.n_phi() as f64
    }
}

/// Complex spherical-harmonic coefficients of a real field, `m >= 0` triangle.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarCoeffs {
    l_max: usize,
    data: Vec<Complex64>,
}

impl ScalarCoeffs {
    pub fn zeros(l_max: usize) -> Self {
        ScalarCoeffs {
            l_max,
            data: vec![Complex64::new(0.0, 0.0); tri_len(l_max)],
        }
    }

    pub fn l_max(&self) -> usize {
        self.l_max
    }

    /// Coefficient of `Y_{l,m}`; negative orders come from conjugate symmetry.
    pub fn get(&self, l: usize, m: i64) -> Complex64 {
        let am = m.unsigned_abs() as usize;
        if l > self.l_max || am > l {
            return Complex64::new(0.0, 0.0);
        }
        let c = self.data[tri_index(l, am)];
        if m >= 0 {
            c
        } else if am % 2 == 0 {
            c.conj()
        } else {
            -c.conj()
        }
    }

    /// Sets `c_{l,m}` and, implicitly, its conjugate partner `c_{l,-m}`.
    pub fn set(&mut self, l: usize, m: i64, value: Complex64) -> Result<()> {
        let am = m.unsigned_abs() as usize;
        if l > self.l_max || am > l {
            return Err(SnsError::ModeOutOfRange {
                l,
                m,
                l_max: self.l_max,
            });
        }
        let v = if m >= 0 {
            value
        } else if am % 2 == 0 {
            value.conj()
        } else {
            -value.conj()
        };
        self.data[tri_index(l, am)] = if am == 0 {
            Complex64::new(v.re, 0.0)
        } else {
            v
        };
        Ok(())
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    /// `(l, m, c_{l,m})` for `0 <= m <= l <= L`.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, Complex64)> + '_ {
        (0..=self.l_max).flat_map(move |l| (0..=l).map(move |m| (l, m, self.data[tri_index(l, m)])))
    }

    /// Zero-pads or truncates to degree `l_max`.
    pub fn resized(&self, l_max: usize) -> Self {
        let mut out = ScalarCoeffs::zeros(l_max);
        let n = tri_len(l_max.min(self.l_max));
        out.data[..n].copy_from_slice(&self.data[..n]);
        out
    }

    /// Largest coefficient modulus.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|c| c.norm()).fold(0.0, f64::max)
    }

    /// `sum over all (l, m), including m < 0, of w(l) |c_{l,m}|^2`.
    pub fn weighted_sum_sq(&self, weight: impl Fn(usize) -> f64) -> f64 {
        self.iter()
            .map(|(l, m, c)| {
                let mult = if m == 0 { 1.0 } else { 2.0 };
                mult * weight(l) * c.norm_sqr()
            })
            .sum()
    }

    /// Real inner product `sum over all (l, m) of w(l) Re(a conj b)`.
    pub fn weighted_dot(&self, other: &ScalarCoeffs, weight: impl Fn(usize) -> f64) -> f64 {
        let l_max = self.l_max.min(other.l_max);
        let mut acc = 0.0;
        for l in 0..=l_max {
            let w = weight(l);
            for m in 0..=l {
                let k = tri_index(l, m);
                let mult = if m == 0 { 1.0 } else { 2.0 };
                acc += mult * w * (self.data[k] * other.data[k].conj()).re;
            }
        }
        acc
    }
}

/// Real scalar samples on a quadrature grid, row-major in (theta, phi).
#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    pub n_theta: usize,
    pub n_phi: usize,
    pub values: Vec<f64>,
}

impl GridField {
    pub fn zeros(n_theta: usize, n_phi: usize) -> Self {
        GridField {
            n_theta,
            n_phi,
            values: vec![0.0; n_theta * n_phi],
        }
    }

    pub fn from_fn(grid: &QuadratureGrid, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut out = GridField::zeros(grid.n_theta(), grid.n_phi());
        for i in 0..grid.n_theta() {
            for j in 0..grid.n_phi() {
                out.values[i * grid.n_phi() + j] = f(grid.theta[i], grid.phi[j]);
            }
        }
        out
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n_phi + j]
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |a, v| a.max(v.abs()))
    }

    pub fn zip_map(&self, other: &GridField, f: impl Fn(f64, f64) -> f64) -> GridField {
        debug_assert_eq!(self.values.len(), other.values.len());
        GridField {
            n_theta: self.n_theta,
            n_phi: self.n_phi,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| f(*a, *b))
                .collect(),
        }
    }
}

/// Normalized associated Legendre values with their theta-derivatives on the grid latitudes.
#[derive(Debug, Clone)]
pub struct LegendreTable {
    l_max: usize,
    n_theta: usize,
    p: Vec<f64>,
    dp_dtheta: Vec<f64>,
}

impl LegendreTable {
    pub fn l_max(&self) -> usize {
        self.l_max
    }

    #[inline]
    pub fn p(&self, l: usize, m: usize, i: usize) -> f64 {
        self.p[tri_index(l, m) * self.n_theta + i]
    }

    #[inline]
    pub fn dp_dtheta(&self, l: usize, m: usize, i: usize) -> f64 {
        self.dp_dtheta[tri_index(l, m) * self.n_theta + i]
    }
}

/// `Pbar_l^m(mu)` for `0 <= m <= l <= l_max`, triangle-packed.
///
/// m-then-l recurrence; each order runs on a rescaled accumulator so that sectoral
/// seeds `sin^m theta` far below the double range do not flush the whole column.
pub fn legendre_column(l_max: usize, mu: f64, sin_theta: f64) -> Vec<f64> {
    let mut out = vec![0.0; tri_len(l_max)];
    let ln_sin = sin_theta.ln();
    let mut ln_sectoral = -0.5 * (4.0 * PI).ln();
    for m in 0..=l_max {
        if m > 0 {
            let mf = m as f64;
            ln_sectoral += 0.5 * ((2.0 * mf + 1.0) / (2.0 * mf)).ln();
        }
        let mut scale = ln_sectoral + if m == 0 { 0.0 } else { m as f64 * ln_sin };
        let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
        let mut prev2 = 0.0;
        let mut prev1 = sign;
        out[tri_index(m, m)] = prev1 * scale.exp();
        for l in m + 1..=l_max {
            let lf = l as f64;
            let mf = m as f64;
            let a = ((4.0 * lf * lf - 1.0) / (lf * lf - mf * mf)).sqrt();
            let b = if l == m + 1 {
                0.0
            } else {
                (((lf - 1.0) * (lf - 1.0) - mf * mf) / (4.0 * (lf - 1.0) * (lf - 1.0) - 1.0)).sqrt()
            };
            let cur = a * (mu * prev1 - b * prev2);
            prev2 = prev1;
            prev1 = cur;
            if prev1.abs() > RESCALE {
                prev1 /= RESCALE;
                prev2 /= RESCALE;
                scale += RESCALE.ln();
            }
            out[tri_index(l, m)] = prev1 * scale.exp();
        }
    }
    out
}

#[inline]
fn eps_lm(l: usize, m: usize) -> f64 {
    let (lf, mf) = (l as f64, m as f64);
    ((lf * lf - mf * mf) / (4.0 * lf * lf - 1.0)).sqrt()
}

/// `dPbar_l^m/dtheta` from a column that extends to degree `l_max + 1`.
fn dtheta_from_column(column: &[f64], l: usize, m: usize, sin_theta: f64) -> f64 {
    let lf = l as f64;
    let lower = if l > m {
        (lf + 1.0) * eps_lm(l, m) * column[tri_index(l - 1, m)]
    } else {
        0.0
    };
    let upper = lf * eps_lm(l + 1, m) * column[tri_index(l + 1, m)];
    // (1 - mu^2) dP/dmu = lower - upper and d/dtheta = -sin(theta) d/dmu
    -(lower - upper) / sin_theta
}

pub fn legendre_table(spec: &TruncationSpec) -> Result<LegendreTable> {
    if spec.l_max > MAX_DEGREE {
        return Err(SnsError::DegreeOverflow {
            requested: spec.l_max,
            max: MAX_DEGREE,
        });
    }
    let grid = gauss_legendre(spec.n_theta);
    Ok(table_on_nodes(spec.l_max, &grid.nodes))
}

fn table_on_nodes(l_max: usize, mu: &[f64]) -> LegendreTable {
    let n_theta = mu.len();
    let len = tri_len(l_max);
    let mut p = vec![0.0; len * n_theta];
    let mut dp = vec![0.0; len * n_theta];
    for (i, &x) in mu.iter().enumerate() {
        let s = (1.0 - x * x).sqrt();
        let col = legendre_column(l_max + 1, x, s);
        for l in 0..=l_max {
            for m in 0..=l {
                let k = tri_index(l, m) * n_theta + i;
                p[k] = col[tri_index(l, m)];
                dp[k] = dtheta_from_column(&col, l, m, s);
            }
        }
    }
    LegendreTable {
        l_max,
        n_theta,
        p,
        dp_dtheta: dp,
    }
}

fn check_point(theta: f64) -> Result<f64> {
    let s = theta.sin();
    if !(s > 0.0) {
        return Err(SnsError::InvalidParameter {
            field: "theta",
            reason: "pointwise evaluation requires 0 < theta < pi".into(),
        });
    }
    Ok(s)
}

fn check_mode(l: usize, m: i64) -> Result<()> {
    if m.unsigned_abs() as usize > l {
        return Err(SnsError::ModeOutOfRange { l, m, l_max: l });
    }
    if l > MAX_DEGREE {
        return Err(SnsError::DegreeOverflow {
            requested: l,
            max: MAX_DEGREE,
        });
    }
    Ok(())
}

fn reflect(value: Complex64, m: i64) -> Complex64 {
    if m >= 0 {
        value
    } else if m % 2 == 0 {
        value.conj()
    } else {
        -value.conj()
    }
}

/// Pointwise `Y_{l,m}(theta, phi)`.
pub fn ylm(l: usize, m: i64, theta: f64, phi: f64) -> Result<Complex64> {
    check_mode(l, m)?;
    let am = m.unsigned_abs() as usize;
    let col = legendre_column(l, theta.cos(), theta.sin().abs());
    let v = col[tri_index(l, am)] * Complex64::from_polar(1.0, am as f64 * phi);
    Ok(reflect(v, m))
}

/// Pointwise `Z_{l,m} = (l(l+1))^{-1/2} Curl Y_{l,m}`, components `(u_theta, u_phi)`.
pub fn vector_basis_eval(l: usize, m: i64, theta: f64, phi: f64) -> Result<[Complex64; 2]> {
    if l == 0 {
        return Err(SnsError::ZeroDegree);
    }
    check_mode(l, m)?;
    let s = check_point(theta)?;
    let am = m.unsigned_abs() as usize;
    let col = legendre_column(l + 1, theta.cos(), s);
    let p = col[tri_index(l, am)];
    let dp = dtheta_from_column(&col, l, am, s);
    let e = Complex64::from_polar(1.0, am as f64 * phi);
    let norm = 1.0 / degree_eigenvalue(l).sqrt();
    let u_theta = Complex64::new(0.0, am as f64) * p / s * e * norm;
    let u_phi = -dp * e * norm;
    Ok([reflect(u_theta, m), reflect(u_phi, m)])
}

/// Which angular kernel a Legendre sum or projection uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kernel {
    /// `Pbar`
    Value,
    /// `dPbar/dtheta`
    DTheta,
    /// `i m Pbar / sin theta`, i.e. `(1/sin theta) d/dphi`
    DPhiOverSin,
}

/// Forward and inverse transforms for one truncation. Immutable once built.
pub struct SphereTransform {
    spec: TruncationSpec,
    grid: QuadratureGrid,
    table: LegendreTable,
    fft_forward: Arc<dyn Fft<f64>>,
    fft_inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for SphereTransform {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SphereTransform")
            .field("spec", &self.spec)
            .finish_non_exhaustive()
    }
}

impl SphereTransform {
    pub fn new(spec: TruncationSpec) -> Result<Self> {
        let grid = QuadratureGrid::new(spec.n_theta, spec.n_phi);
        let table = legendre_table(&spec)?;
        let mut planner = FftPlanner::new();
        Ok(SphereTransform {
            spec,
            fft_forward: planner.plan_fft_forward(spec.n_phi),
            fft_inverse: planner.plan_fft_inverse(spec.n_phi),
            grid,
            table,
        })
    }

    pub fn spec(&self) -> &TruncationSpec {
        &self.spec
    }

    pub fn grid(&self) -> &QuadratureGrid {
        &self.grid
    }

    pub fn table(&self) -> &LegendreTable {
        &self.table
    }

    pub fn l_max(&self) -> usize {
        self.spec.l_max
    }

    fn check_grid(&self, field: &GridField) -> Result<()> {
        if field.n_theta != self.spec.n_theta || field.n_phi != self.spec.n_phi {
            return Err(SnsError::DimensionMismatch {
                expected: format!("{}x{}", self.spec.n_theta, self.spec.n_phi),
                got: format!("{}x{}", field.n_theta, field.n_phi),
            });
        }
        Ok(())
    }

    fn check_coeffs(&self, coeffs: &ScalarCoeffs) -> Result<()> {
        if coeffs.l_max() > self.spec.l_max {
            return Err(SnsError::DimensionMismatch {
                expected: format!("L <= {}", self.spec.l_max),
                got: format!("L = {}", coeffs.l_max()),
            });
        }
        Ok(())
    }

    /// Per-latitude Fourier coefficients `F_m(mu_i) = (1/n_phi) sum_j f_ij e^{-i m phi_j}`,
    /// `m <= L`, stored `m`-major: `[m * n_theta + i]`.
    fn fourier_analyze(&self, field: &GridField) -> Vec<Complex64> {
        let (n_theta, n_phi) = (self.spec.n_theta, self.spec.n_phi);
        let nm = self.spec.l_max + 1;
        let mut buf: Vec<Complex64> = field.values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        let mut scratch = vec![Complex64::new(0.0, 0.0); self.fft_forward.get_inplace_scratch_len()];
        self.fft_forward.process_with_scratch(&mut buf, &mut scratch);
        let inv = 1.0 / n_phi as f64;
        let mut out = vec![Complex64::new(0.0, 0.0); n_theta * nm];
        for i in 0..n_theta {
            for m in 0..nm {
                out[m * n_theta + i] = buf[i * n_phi + m] * inv;
            }
        }
        out
    }

    /// Real field `Re A_0 + 2 Re sum_{m>0} A_m e^{i m phi}` from `m`-major coefficients.
    fn fourier_synthesize(&self, fourier: &[Complex64]) -> GridField {
        let (n_theta, n_phi) = (self.spec.n_theta, self.spec.n_phi);
        let nm = self.spec.l_max + 1;
        let mut buf = vec![Complex64::new(0.0, 0.0); n_theta * n_phi];
        for i in 0..n_theta {
            let row = &mut buf[i * n_phi..(i + 1) * n_phi];
            row[0] = Complex64::new(fourier[i].re, 0.0);
            for m in 1..nm {
                let a = fourier[m * n_theta + i];
                row[m] = a;
                row[n_phi - m] = a.conj();
            }
        }
        let mut scratch = vec![Complex64::new(0.0, 0.0); self.fft_inverse.get_inplace_scratch_len()];
        self.fft_inverse.process_with_scratch(&mut buf, &mut scratch);
        GridField {
            n_theta,
            n_phi,
            values: buf.iter().map(|b| b.re).collect(),
        }
    }

    /// Real table column for `(l, m)` used by `kernel`.
    fn column(&self, kernel: Kernel, l: usize, m: usize) -> &[f64] {
        let nt = self.spec.n_theta;
        let k = tri_index(l, m) * nt;
        match kernel {
            Kernel::Value | Kernel::DPhiOverSin => &self.table.p[k..k + nt],
            Kernel::DTheta => &self.table.dp_dtheta[k..k + nt],
        }
    }

    fn legendre_synthesize(&self, coeffs: &ScalarCoeffs, kernel: Kernel) -> Vec<Complex64> {
        let nt = self.spec.n_theta;
        let nm = self.spec.l_max + 1;
        let lc = coeffs.l_max();
        let data = coeffs.as_slice();
        let mut out = vec![Complex64::new(0.0, 0.0); nt * nm];
        for m in 0..=lc {
            let acc = &mut out[m * nt..(m + 1) * nt];
            for l in m..=lc {
                let c = data[tri_index(l, m)];
                if c.re == 0.0 && c.im == 0.0 {
                    continue;
                }
                for (a, &k) in acc.iter_mut().zip(self.column(kernel, l, m)) {
                    *a += c * k;
                }
            }
            if kernel == Kernel::DPhiOverSin {
                for (a, s) in acc.iter_mut().zip(&self.grid.sin_theta) {
                    *a *= Complex64::new(0.0, m as f64 / s);
                }
            }
        }
        out
    }

    /// `c_{l,m} += sign 2 pi sum_i w_i F_m(mu_i) conj(K_l^m(mu_i))`.
    fn legendre_project_into(
        &self,
        fourier: &[Complex64],
        kernel: Kernel,
        sign: f64,
        out: &mut ScalarCoeffs,
    ) {
        let nt = self.spec.n_theta;
        let data = out.as_mut_slice();
        let mut weighted = vec![Complex64::new(0.0, 0.0); nt];
        for m in 0..=self.spec.l_max {
            for i in 0..nt {
                let w = 2.0 * PI * sign * self.grid.weights[i];
                weighted[i] = match kernel {
                    Kernel::DPhiOverSin => fourier[m * nt + i] * Complex64::new(0.0, -(m as f64) * w / self.grid.sin_theta[i]),
                    _ => fourier[m * nt + i] * w,
                };
            }
            for l in m..=self.spec.l_max {
                let mut acc = Complex64::new(0.0, 0.0);
                for (f, &k) in weighted.iter().zip(self.column(kernel, l, m)) {
                    acc += f * k;
                }
                data[tri_index(l, m)] += acc;
            }
        }
    }

    /// Quadrature projection onto `Y_{l,m}`, `l <= L`.
    pub fn analyze(&self, field: &GridField) -> Result<ScalarCoeffs> {
        self.check_grid(field)?;
        let fourier = self.fourier_analyze(field);
        let mut out = ScalarCoeffs::zeros(self.spec.l_max);
        self.legendre_project_into(&fourier, Kernel::Value, 1.0, &mut out);
        for l in 0..=self.spec.l_max {
            let k = tri_index(l, 0);
            out.as_mut_slice()[k].im = 0.0;
        }
        Ok(out)
    }

    /// Direct summation of the expansion on the grid.
    pub fn synthesize(&self, coeffs: &ScalarCoeffs) -> Result<GridField> {
        self.check_coeffs(coeffs)?;
        Ok(self.fourier_synthesize(&self.legendre_synthesize(coeffs, Kernel::Value)))
    }

    /// Surface gradient `(d_theta g, d_phi g / sin theta)`.
    pub fn synthesize_gradient(&self, coeffs: &ScalarCoeffs) -> Result<(GridField, GridField)> {
        self.check_coeffs(coeffs)?;
        let gt = self.fourier_synthesize(&self.legendre_synthesize(coeffs, Kernel::DTheta));
        let gp = self.fourier_synthesize(&self.legendre_synthesize(coeffs, Kernel::DPhiOverSin));
        Ok((gt, gp))
    }

    /// `Curl psi = (d_phi psi / sin theta, -d_theta psi)`.
    pub fn synthesize_curl(&self, coeffs: &ScalarCoeffs) -> Result<(GridField, GridField)> {
        let (d_theta, d_phi_over_sin) = self.synthesize_gradient(coeffs)?;
        let u_phi = GridField {
            values: d_theta.values.iter().map(|v| -v).collect(),
            ..d_theta
        };
        Ok((d_phi_over_sin, u_phi))
    }

    /// Spectral coefficients of `div F`, via `(div F, Y) = -(F, grad Y)`.
    pub fn divergence_coeffs(&self, f_theta: &GridField, f_phi: &GridField) -> Result<ScalarCoeffs> {
        self.check_grid(f_theta)?;
        self.check_grid(f_phi)?;
        let mut out = ScalarCoeffs::zeros(self.spec.l_max);
        let ft = self.fourier_analyze(f_theta);
        let fp = self.fourier_analyze(f_phi);
        self.legendre_project_into(&ft, Kernel::DTheta, -1.0, &mut out);
        self.legendre_project_into(&fp, Kernel::DPhiOverSin, -1.0, &mut out);
        Ok(out)
    }

    /// Spectral coefficients of `curl F`, via `(curl F, Y) = (F, Curl Y)`.
    pub fn curl_coeffs(&self, f_theta: &GridField, f_phi: &GridField) -> Result<ScalarCoeffs> {
        self.check_grid(f_theta)?;
        self.check_grid(f_phi)?;
        let mut out = ScalarCoeffs::zeros(self.spec.l_max);
        let ft = self.fourier_analyze(f_theta);
        let fp = self.fourier_analyze(f_phi);
        // Curl Y = (DPhiOverSin Y, -DTheta Y)
        self.legendre_project_into(&ft, Kernel::DPhiOverSin, 1.0, &mut out);
        self.legendre_project_into(&fp, Kernel::DTheta, -1.0, &mut out);
        Ok(out)
    }

    /// `integral over the sphere` by the grid quadrature.
    pub fn integrate(&self, field: &GridField) -> f64 {
        let n_phi = self.spec.n_phi;
        (0..self.spec.n_theta)
            .map(|i| {
                let row: f64 = field.values[i * n_phi..(i + 1) * n_phi].iter().sum();
                row * self.grid.area_weight(i)
            })
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_coeffs(l_max: usize, seed: u64) -> ScalarCoeffs {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut c = ScalarCoeffs::zeros(l_max);
        for l in 0..=l_max {
            for m in 0..=l as i64 {
                let v = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
                c.set(l, m, v).unwrap();
            }
        }
        c
    }

    #[test]
    fn gauss_small_cases() {
        let g1 = gauss_legendre(1);
        assert_eq!(g1.nodes, vec![0.0]);
        assert!((g1.weights[0] - 2.0).abs() < 1e-15);
        let g2 = gauss_legendre(2);
        let r = 1.0 / 3f64.sqrt();
        assert!((g2.nodes[0] + r).abs() < 1e-15 && (g2.nodes[1] - r).abs() < 1e-15);
        assert!((g2.weights[0] - 1.0).abs() < 1e-15 && (g2.weights[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn gauss_degree_eight_monomial() {
        let g = gauss_legendre(5);
        let s: f64 = g.nodes.iter().zip(&g.weights).map(|(x, w)| w * x.powi(8)).sum();
        assert!((s - 2.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn gauss_nodes_sorted_and_weights_sum() {
        for n in [3, 16, 47, 200] {
            let g = gauss_legendre(n);
            assert!(g.nodes.windows(2).all(|w| w[0] < w[1]));
            assert!(g.weights.iter().all(|w| *w > 0.0));
            let s: f64 = g.weights.iter().sum();
            assert!((s - 2.0).abs() < 1e-13, "n={n}: {s}");
        }
    }

    #[test]
    fn gauss_orthogonality_of_legendre_polynomials() {
        let n = 12;
        let g = gauss_legendre(n);
        for j in 0..n {
            for k in 0..n {
                let s: f64 = g
                    .nodes
                    .iter()
                    .zip(&g.weights)
                    .map(|(x, w)| w * legendre_and_derivative(j, *x).0 * legendre_and_derivative(k, *x).0)
                    .sum();
                let expected = if j == k { 2.0 / (2 * j + 1) as f64 } else { 0.0 };
                assert!((s - expected).abs() < 1e-13, "j={j} k={k}");
            }
        }
    }

    #[test]
    fn legendre_reference_values() {
        let col = legendre_column(2, 0.3, (1.0f64 - 0.09).sqrt());
        assert!((col[tri_index(0, 0)] - 0.2820947918).abs() < 1e-10);
        let col = legendre_column(2, 0.0, 1.0);
        assert_eq!(col[tri_index(1, 0)], 0.0);
        let col = legendre_column(2, 1.0, 0.0);
        assert!((col[tri_index(2, 0)] - 0.6307831305).abs() < 1e-10);
    }

    #[test]
    fn legendre_matches_closed_forms() {
        let mu: f64 = 0.37;
        let s = (1.0 - mu * mu).sqrt();
        let col = legendre_column(3, mu, s);
        let y11 = -(3.0 / (8.0 * PI)).sqrt() * s;
        let y22 = 0.25 * (15.0 / (2.0 * PI)).sqrt() * s * s;
        let y31 = -0.125 * (21.0 / PI).sqrt() * s * (5.0 * mu * mu - 1.0);
        assert!((col[tri_index(1, 1)] - y11).abs() < 1e-14);
        assert!((col[tri_index(2, 2)] - y22).abs() < 1e-14);
        assert!((col[tri_index(3, 1)] - y31).abs() < 1e-14);
    }

    #[test]
    fn theta_derivative_matches_finite_difference() {
        let theta: f64 = 1.1;
        let h = 1e-6;
        let c = legendre_column(9, theta.cos(), theta.sin());
        let cp = legendre_column(8, (theta + h).cos(), (theta + h).sin());
        let cm = legendre_column(8, (theta - h).cos(), (theta - h).sin());
        for l in 0..=8 {
            for m in 0..=l {
                let fd = (cp[tri_index(l, m)] - cm[tri_index(l, m)]) / (2.0 * h);
                let an = dtheta_from_column(&c, l, m, theta.sin());
                assert!((fd - an).abs() < 1e-7, "l={l} m={m}: {fd} vs {an}");
            }
        }
    }

    #[test]
    fn high_degree_column_stays_finite() {
        let g = gauss_legendre(769);
        let col = legendre_column(512, g.nodes[0], (1.0 - g.nodes[0] * g.nodes[0]).sqrt());
        assert!(col.iter().all(|v| v.is_finite()));
        assert!(TruncationSpec::new(513).is_err());
    }

    #[test]
    fn zero_field_analyzes_to_zero() {
        let t = SphereTransform::new(TruncationSpec::new(6).unwrap()).unwrap();
        let z = GridField::zeros(t.spec().n_theta, t.spec().n_phi);
        assert_eq!(t.analyze(&z).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn real_part_of_y32() {
        let t = SphereTransform::new(TruncationSpec::new(5).unwrap()).unwrap();
        let f = GridField::from_fn(t.grid(), |th, ph| ylm(3, 2, th, ph).unwrap().re);
        let c = t.analyze(&f).unwrap();
        for l in 0..=5usize {
            for m in -(l as i64)..=l as i64 {
                let expected = if l == 3 && m.abs() == 2 { 0.5 } else { 0.0 };
                assert!((c.get(l, m) - Complex64::new(expected, 0.0)).norm() < 1e-12, "({l},{m})");
            }
        }
    }

    #[test]
    fn analyze_rejects_wrong_dimensions() {
        let t = SphereTransform::new(TruncationSpec::new(4).unwrap()).unwrap();
        assert!(matches!(
            t.analyze(&GridField::zeros(3, 3)),
            Err(SnsError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn roundtrip_l31() {
        let t = SphereTransform::new(TruncationSpec::new(31).unwrap()).unwrap();
        let c = random_coeffs(31, 7);
        let back = t.analyze(&t.synthesize(&c).unwrap()).unwrap();
        let err = c
            .as_slice()
            .iter()
            .zip(back.as_slice())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        assert!(err < 1e-10, "{err}");
    }

    #[test]
    fn synthesize_matches_pointwise_sum() {
        let t = SphereTransform::new(TruncationSpec::new(4).unwrap()).unwrap();
        let c = random_coeffs(4, 3);
        let g = t.synthesize(&c).unwrap();
        let (i, j) = (2, 5);
        let (th, ph) = (t.grid().theta[i], t.grid().phi[j]);
        let mut direct = 0.0;
        for l in 0..=4usize {
            for m in -(l as i64)..=l as i64 {
                direct += (c.get(l, m) * ylm(l, m, th, ph).unwrap()).re;
            }
        }
        assert!((direct - g.at(i, j)).abs() < 1e-12);
    }

    #[test]
    fn surface_weights_sum_to_four_pi() {
        let t = SphereTransform::new(TruncationSpec::new(10).unwrap()).unwrap();
        let one = GridField::from_fn(t.grid(), |_, _| 1.0);
        assert!((t.integrate(&one) - 4.0 * PI).abs() < 1e-12);
    }

    #[test]
    fn vector_basis_rejects_degree_zero() {
        assert!(matches!(vector_basis_eval(0, 0, 1.0, 0.0), Err(SnsError::ZeroDegree)));
    }

    #[test]
    fn vector_addition_theorem_l2() {
        let (th, ph) = (0.7, 2.1);
        let s: f64 = (-2..=2)
            .map(|m| {
                let z = vector_basis_eval(2, m, th, ph).unwrap();
                z[0].norm_sqr() + z[1].norm_sqr()
            })
            .sum();
        assert!((s - 0.3978873577).abs() < 1e-10);
    }

    #[test]
    fn negative_order_symmetry() {
        let (th, ph) = (0.4, 1.3);
        for m in 1..=3i64 {
            let a = ylm(3, m, th, ph).unwrap();
            let b = ylm(3, -m, th, ph).unwrap();
            let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
            assert!((b - a.conj() * sign).norm() < 1e-15);
        }
    }
}
