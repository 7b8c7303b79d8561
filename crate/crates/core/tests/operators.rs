mod common;

use common::SphereQuad;
use nalgebra::DMatrix;
use num_complex::Complex64;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sphere_sns::flow_fields::{velocity, SpectralField};
use sphere_sns::harmonic_basis::{vector_basis_eval, SphereTransform, TruncationSpec};
use sphere_sns::nonlinear::{advective_term, trilinear_b, DealiasPolicy};
use sphere_sns::sphere_operators::{
    apply_a, apply_a_power, apply_coriolis, coriolis_symbol, leray_project, ModelParams, OperatorVariant,
};

fn modes(l_max: usize) -> Vec<(usize, i64)> {
    (1..=l_max).flat_map(|l| (-(l as i64)..=l as i64).map(move |m| (l, m))).collect()
}

/// Cartesian velocity of a field at `(theta, phi)`, summed from the pointwise vector harmonics.
fn ambient_velocity(f: &SpectralField, theta: f64, phi: f64) -> [f64; 3] {
    let mut ut = Complex64::new(0.0, 0.0);
    let mut up = Complex64::new(0.0, 0.0);
    for (l, m) in modes(f.l_max()) {
        let a = f.z_coeff(l, m);
        if a == Complex64::new(0.0, 0.0) {
            continue;
        }
        let z = vector_basis_eval(l, m, theta, phi).unwrap();
        ut += a * z[0];
        up += a * z[1];
    }
    assert!(ut.im.abs() < 1e-10 && up.im.abs() < 1e-10);
    let (st, ct, sp, cp) = (theta.sin(), theta.cos(), phi.sin(), phi.cos());
    [
        ut.re * ct * cp - up.re * sp,
        ut.re * ct * sp + up.re * cp,
        -ut.re * st,
    ]
}

fn ambient_at(f: &SpectralField, x: [f64; 3]) -> [f64; 3] {
    let r = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
    ambient_velocity(f, (x[2] / r).clamp(-1.0, 1.0).acos(), x[1].atan2(x[0]))
}

/// `b(u, v, w) = int ((u . D) V) . w`, with `V` the 0-homogeneous extension of `v`
/// and the directional derivative by a fourth-order central difference in R^3.
fn trilinear_oracle(u: &SpectralField, v: &SpectralField, w: &SpectralField, q: &SphereQuad) -> f64 {
    let h = 1e-3;
    q.integrate(|th, ph| {
        let x = [th.sin() * ph.cos(), th.sin() * ph.sin(), th.cos()];
        let uu = ambient_velocity(u, th, ph);
        let ww = ambient_velocity(w, th, ph);
        let at = |s: f64| ambient_at(v, [x[0] + s * uu[0], x[1] + s * uu[1], x[2] + s * uu[2]]);
        let (p1, m1, p2, m2) = (at(h), at(-h), at(2.0 * h), at(-2.0 * h));
        (0..3)
            .map(|k| (8.0 * (p1[k] - m1[k]) - (p2[k] - m2[k])) / (12.0 * h) * ww[k])
            .sum()
    })
}

#[test]
fn trilinear_form_matches_ambient_oracle() {
    let l = 4;
    let t = DealiasPolicy::ThreeHalves.transform(l).unwrap();
    let q = SphereQuad::new(16, 32);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..3 {
        let u = SpectralField::random(l, 0.0, &mut rng);
        let v = SpectralField::random(l, 0.0, &mut rng);
        let w = SpectralField::random(l, 0.0, &mut rng);
        let a = trilinear_b(&u, &v, &w, &t).unwrap();
        let b = trilinear_oracle(&u, &v, &w, &q);
        let scale = (u.h_norm2() * v.v_norm2() * w.v_norm2()).sqrt();
        assert!((a - b).abs() < 1e-7 * scale, "{a} vs {b}");
    }
}

#[test]
fn dense_coriolis_matrix_is_diagonal_with_symbol() {
    // M[(l',m'),(l,m)] = int 2 Omega cos(theta) (n x Z_{l,m}) . conj(Z_{l',m'})
    let (l_max, omega) = (5, 1.3);
    let basis = modes(l_max);
    let q = SphereQuad::new(12, 24);
    let n = basis.len();
    let mut mat = DMatrix::<Complex64>::zeros(n, n);
    for (j, &(l, m)) in basis.iter().enumerate() {
        for (i, &(lp, mp)) in basis.iter().enumerate() {
            mat[(i, j)] = q.integrate_c(|th, ph| {
                let z = vector_basis_eval(l, m, th, ph).unwrap();
                let zp = vector_basis_eval(lp, mp, th, ph).unwrap();
                // n x (a e_theta + b e_phi) = a e_phi - b e_theta
                let c = 2.0 * omega * th.cos();
                c * (-z[1] * zp[0].conj() + z[0] * zp[1].conj())
            });
        }
    }
    // P projects onto span{Z}, so M is the matrix of P C_1 in that basis.
    let anti = (&mat + mat.adjoint()).norm();
    assert!(anti < 1e-12, "not anti-Hermitian: {anti}");
    for (i, &(l, m)) in basis.iter().enumerate() {
        for j in 0..n {
            let expect = if i == j { coriolis_symbol(l, m, omega) } else { Complex64::new(0.0, 0.0) };
            assert!((mat[(i, j)] - expect).norm() < 1e-12, "({i},{j}) {} vs {expect}", mat[(i, j)]);
        }
    }
    // l = 3, m = 1: 2 Omega m / lambda = Omega / 6
    let k = basis.iter().position(|&b| b == (3, 1)).unwrap();
    assert!((mat[(k, k)].im + omega / 6.0).abs() < 1e-12);
}

#[test]
fn leray_projection_recovers_divergence_free_fields() {
    let t = SphereTransform::new(TruncationSpec::new(10).unwrap()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let f = SpectralField::random(10, 0.5, &mut rng);
    let back = leray_project(&velocity(&f, &t).unwrap(), &t).unwrap();
    assert!((&back - &f).max_abs_psi() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn poincare_inequality(seed in any::<u64>(), l_max in 1usize..20) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = SpectralField::random(l_max, 0.0, &mut rng);
        let au = apply_a(&u, OperatorVariant::LaplaceBeltrami).inner_h(&u);
        prop_assert!(au >= 2.0 * u.h_norm2() * (1.0 - 1e-12));
        prop_assert!(u.v_norm2() >= 3.0 * u.h_norm2() * (1.0 - 1e-12));
    }

    #[test]
    fn coriolis_is_skew(seed in any::<u64>(), omega in -5.0f64..5.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = SpectralField::random(10, 0.5, &mut rng);
        let w = SpectralField::random(10, 0.5, &mut rng);
        let scale = (u.h_norm2() * w.h_norm2()).sqrt() * omega.abs().max(1.0);
        prop_assert!(apply_coriolis(&u, omega).inner_h(&u).abs() < 1e-12 * scale);
        let lhs = apply_coriolis(&u, omega).inner_h(&w);
        let rhs = -u.inner_h(&apply_coriolis(&w, omega));
        prop_assert!((lhs - rhs).abs() < 1e-12 * scale);
    }

    #[test]
    fn fractional_powers_compose(seed in any::<u64>(), s in -1.5f64..1.5, r in -1.5f64..1.5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = SpectralField::random(8, 1.0, &mut rng);
        let v = OperatorVariant::LaplaceBeltrami;
        let a = apply_a_power(&apply_a_power(&u, s, v).unwrap(), r, v).unwrap();
        let b = apply_a_power(&u, s + r, v).unwrap();
        prop_assert!((&a - &b).max_abs_psi() < 1e-12 * b.max_abs_psi().max(1e-300));
    }

    #[test]
    fn trilinear_is_linear_in_each_slot(seed in any::<u64>(), a in -2.0f64..2.0) {
        let t = DealiasPolicy::ThreeHalves.transform(6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f: Vec<SpectralField> = (0..4).map(|_| SpectralField::random(6, 0.5, &mut rng)).collect();
        let mix = f[0].axpy(a, &f[3]);
        let scale = f.iter().map(|g| g.v_norm2().sqrt()).product::<f64>().max(1e-300) * (1.0 + a.abs());
        for slot in 0..3 {
            let mut args = [&f[0], &f[1], &f[2]];
            args[slot] = &mix;
            let lhs = trilinear_b(args[0], args[1], args[2], &t).unwrap();
            let mut a0 = [&f[0], &f[1], &f[2]];
            let mut a3 = [&f[0], &f[1], &f[2]];
            a0[slot] = &f[0];
            a3[slot] = &f[3];
            let rhs = trilinear_b(a0[0], a0[1], a0[2], &t).unwrap() + a * trilinear_b(a3[0], a3[1], a3[2], &t).unwrap();
            prop_assert!((lhs - rhs).abs() < 1e-11 * scale, "slot {}", slot);
        }
    }

    #[test]
    fn advective_term_pairs_with_trilinear(seed in any::<u64>()) {
        let l = 8;
        let t = DealiasPolicy::ThreeHalves.transform(l).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = SpectralField::random(l, 0.5, &mut rng);
        let w = SpectralField::random(l, 0.5, &mut rng);
        let lhs = advective_term(&u, &t).unwrap().inner_h(&w);
        let rhs = trilinear_b(&u, &u, &w, &t).unwrap();
        prop_assert!((lhs - rhs).abs() < 1e-10 * (u.v_norm2() * u.v_norm2() * w.v_norm2()).sqrt());
    }
}

#[test]
fn model_params_reject_bad_values() {
    assert!(ModelParams::new(f64::NAN, 5).is_err());
    assert!(ModelParams::new(1.0, 0).is_err());
}
