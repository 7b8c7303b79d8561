//! Quadratic terms: the covariant derivative `nabla_u w`, the trilinear form
//! `b(u, w, z) = (nabla_u w, z)` and the projected advection `P B(u, u)`.
//!
//! Products are formed on the quadrature grid of the supplied transform. With the 3/2-rule
//! grid, quadratic products are projected and cubic integrands integrated without aliasing.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SnsError};
use crate::flow_fields::{l4_norm, velocity, vorticity, GridTangentField, SpectralField};
use crate::harmonic_basis::{degree_eigenvalue, GridField, SphereTransform, TruncationSpec};
use crate::sphere_operators::psi_from_vorticity;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DealiasPolicy {
    /// Grid from the 3/2 rule.
    #[default]
    ThreeHalves,
    /// Smallest grid that resolves degree `L` itself; aliases quadratic products.
    None,
}

impl DealiasPolicy {
    pub fn spec(self, l_max: usize) -> Result<TruncationSpec> {
        match self {
            DealiasPolicy::ThreeHalves => TruncationSpec::new(l_max),
            DealiasPolicy::None => TruncationSpec::minimal(l_max),
        }
    }

    pub fn transform(self, l_max: usize) -> Result<SphereTransform> {
        SphereTransform::new(self.spec(l_max)?)
    }
}

fn check_degree(f: &SpectralField, transform: &SphereTransform) -> Result<()> {
    if f.l_max() > transform.l_max() {
        return Err(SnsError::DegreeOverflow {
            requested: f.l_max(),
            max: transform.l_max(),
        });
    }
    Ok(())
}

/// Velocity and vorticity of `f` on the transform grid.
fn grid_state(f: &SpectralField, transform: &SphereTransform) -> Result<(GridTangentField, GridField)> {
    let f = f.resized(transform.l_max());
    let u = velocity(&f, transform)?;
    let w = transform.synthesize(&vorticity(&f))?;
    Ok((u, w))
}

/// `P_L B(u, u)` at the degree of `u`: the streamfunction whose vorticity is `div(u omega)`.
pub fn advective_term(u: &SpectralField, transform: &SphereTransform) -> Result<SpectralField> {
    check_degree(u, transform)?;
    let (vel, omega) = grid_state(u, transform)?;
    let flux_theta = vel.u_theta.zip_map(&omega, |a, w| a * w);
    let flux_phi = vel.u_phi.zip_map(&omega, |a, w| a * w);
    let div = transform.divergence_coeffs(&flux_theta, &flux_phi)?;
    Ok(psi_from_vorticity(div).resized(u.l_max()))
}

/// `nabla_u w = 1/2 [ -Curl s + grad(u.w) - w x curl u - u x curl w ]`, `s = x.(u x w)`,
/// for divergence-free `u`, `w` with vorticities `curl_u`, `curl_w` on the grid.
///
/// `s` and `u.w` are re-expanded with `transform`, so they are differentiated exactly only
/// when the transform resolves degree `2L`.
pub fn covariant_derivative(
    u: &GridTangentField,
    w: &GridTangentField,
    curl_u: &GridField,
    curl_w: &GridField,
    transform: &SphereTransform,
) -> Result<GridTangentField> {
    let s = transform.analyze(&u.cross_normal(w))?;
    let d = transform.analyze(&u.dot(w))?;
    let (curl_s_theta, curl_s_phi) = transform.synthesize_curl(&s)?;
    let (grad_theta, grad_phi) = transform.synthesize_gradient(&d)?;
    let curl_s = GridTangentField {
        u_theta: curl_s_theta,
        u_phi: curl_s_phi,
    };
    let grad = GridTangentField {
        u_theta: grad_theta,
        u_phi: grad_phi,
    };
    let w_cross = w.cross_with_normal(curl_u);
    let u_cross = u.cross_with_normal(curl_w);
    let out = grad
        .combine(0.5, &curl_s, -0.5)
        .combine(1.0, &w_cross, -0.5)
        .combine(1.0, &u_cross, -0.5);
    Ok(out)
}

/// `b(u, w, z)` by quadrature of
/// `1/2 [ -x.(u x w) curl z + (curl u x w).z - (u x curl w).z ]`.
pub fn trilinear_b(u: &SpectralField, w: &SpectralField, z: &SpectralField, transform: &SphereTransform) -> Result<f64> {
    for f in [u, w, z] {
        check_degree(f, transform)?;
    }
    let (vu, cu) = grid_state(u, transform)?;
    let (vw, cw) = grid_state(w, transform)?;
    let (vz, cz) = grid_state(z, transform)?;
    let s = vu.cross_normal(&vw);
    // (x curl u) x w = curl u (-w_phi, w_theta); u x (x curl w) = curl w (u_phi, -u_theta)
    let rot_w = vw.rotate().scale_by(&cu);
    let u_cross = vu.cross_with_normal(&cw);
    let mut integrand = GridField::zeros(s.n_theta, s.n_phi);
    let zt = &vz.u_theta.values;
    let zp = &vz.u_phi.values;
    for k in 0..integrand.values.len() {
        integrand.values[k] = 0.5
            * (-s.values[k] * cz.values[k]
                + (rot_w.u_theta.values[k] - u_cross.u_theta.values[k]) * zt[k]
                + (rot_w.u_phi.values[k] - u_cross.u_phi.values[k]) * zp[k]);
    }
    Ok(transform.integrate(&integrand))
}

/// `||A u||` with the `l(l+1)` spectrum.
fn a_norm(u: &SpectralField) -> f64 {
    u.psi().weighted_sum_sq(|l| degree_eigenvalue(l).powi(3)).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateRow {
    pub name: &'static str,
    pub inequality: &'static str,
    pub max_ratio: f64,
}

/// Corpus maxima of `LHS / RHS` for the interpolation and trilinear estimates,
/// with the unknown constants omitted from the right sides.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateReport {
    pub samples: usize,
    pub rows: Vec<EstimateRow>,
}

impl EstimateReport {
    pub fn max_ratio(&self, name: &str) -> Option<f64> {
        self.rows.iter().find(|r| r.name == name).map(|r| r.max_ratio)
    }

    /// Largest `||u||_{L4}^2 / (||u|| ||u||_V)`.
    pub fn interpolation_constant(&self) -> f64 {
        self.max_ratio("interpolation_l4").unwrap_or(f64::NAN).sqrt()
    }

    /// Largest `|b(u,v,w)| / (||u||_{L4} ||v||_V ||w||_{L4})`.
    pub fn trilinear_constant(&self) -> f64 {
        self.max_ratio("b_l4").unwrap_or(f64::NAN)
    }
}

/// Evaluates every estimate on the corpus; triples are consecutive entries, cyclically.
pub fn estimate_report(corpus: &[SpectralField], transform: &SphereTransform) -> Result<EstimateReport> {
    if corpus.is_empty() {
        return Err(SnsError::EmptyCorpus);
    }
    const ROWS: [(&str, &str); 7] = [
        ("interpolation_l4", "|u|_L4^2 <= C |u| |u|_V"),
        ("b_estimate", "|b(u,v,w)| <= C |u|^1/2 |u|_V^1/2 |v|_V^1/2 |Av|^1/2 |w|"),
        ("b_estimate2", "|b(u,v,w)| <= C |u|^1/2 |Au|^1/2 |v|_V |w|"),
        ("b_estimate3", "|b(u,v,w)| <= C |u|^1/2 |u|_V^1/2 |v|_V |w|^1/2 |w|_V^1/2"),
        ("b_l4", "|b(u,v,w)| <= C |u|_L4 |v|_V |w|_L4"),
        ("b_l4_diagonal", "|b(u,v,u)| <= C |u|_L4^2 |v|_V"),
        ("bilinear_dual", "|B(u)|_V' <= C |u|_L4^2"),
    ];
    let mut maxima = [0.0f64; 7];
    let n = corpus.len();
    struct Norms {
        h: f64,
        v: f64,
        a: f64,
        l4: f64,
    }
    let norms: Vec<Norms> = corpus
        .iter()
        .map(|f| {
            Ok(Norms {
                h: f.h_norm2().sqrt(),
                v: f.v_norm2().sqrt(),
                a: a_norm(f),
                l4: l4_norm(f, transform)?,
            })
        })
        .collect::<Result<_>>()?;
    let ratio = |num: f64, den: f64| if den > 0.0 { num / den } else { 0.0 };
    for i in 0..n {
        let (j, k) = ((i + 1) % n, (i + 2) % n);
        let (nu, nv, nw) = (&norms[i], &norms[j], &norms[k]);
        let b = trilinear_b(&corpus[i], &corpus[j], &corpus[k], transform)?.abs();
        let b_diag = trilinear_b(&corpus[i], &corpus[j], &corpus[i], transform)?.abs();
        let bu = advective_term(&corpus[i], transform)?.v_prime_norm2().sqrt();
        let values = [
            ratio(nu.l4 * nu.l4, nu.h * nu.v),
            ratio(b, (nu.h * nu.v * nv.v * nv.a).sqrt() * nw.h),
            ratio(b, (nu.h * nu.a).sqrt() * nv.v * nw.h),
            ratio(b, (nu.h * nu.v * nw.h * nw.v).sqrt() * nv.v),
            ratio(b, nu.l4 * nv.v * nw.l4),
            ratio(b_diag, nu.l4 * nu.l4 * nv.v),
            ratio(bu, nu.l4 * nu.l4),
        ];
        for (m, v) in maxima.iter_mut().zip(values) {
            *m = m.max(v);
        }
    }
    let rows = ROWS
        .iter()
        .zip(maxima)
        .map(|(&(name, inequality), max_ratio)| EstimateRow {
            name,
            inequality,
            max_ratio,
        })
        .collect();
    log::info!("estimate report over {n} fields computed");
    Ok(EstimateReport { samples: n, rows })
}
