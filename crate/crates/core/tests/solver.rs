use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sphere_sns::flow_fields::SpectralField;
use sphere_sns::galerkin_solver::{GalerkinSolver, NoiseInput, Scheme, SolverConfig};
use sphere_sns::rds_experiments::weak_form_residual;
use sphere_sns::sphere_operators::ModelParams;
use sphere_sns::stochastic_forcing::{NoisePath, NoiseSpec};
use sphere_sns::SnsError;

/// Single-degree fields have no self-advection, so with constant forcing `f = k a_inf Z`
/// each mode relaxes as `a(t) = a_inf + (a0 - a_inf) exp(-k t)`, `k = nu sigma + i c`.
#[test]
fn manufactured_single_degree_solution() {
    for l_max in [2usize, 5, 8] {
        let params = ModelParams::new(0.3, l_max).unwrap().with_rotation(1.5);
        let (a0, a_inf) = (Complex64::new(0.8, -0.4), Complex64::new(-0.2, 1.1));
        let mut u0 = SpectralField::zeros(l_max);
        let mut forcing = SpectralField::zeros(l_max);
        for m in 0..=2i64 {
            let k = params.linear_symbol(2, m);
            let (a, b) = if m == 0 { (Complex64::new(a0.re, 0.0), Complex64::new(a_inf.re, 0.0)) } else { (a0, a_inf) };
            u0.set_z_coeff(2, m, a).unwrap();
            forcing.set_z_coeff(2, m, k * b).unwrap();
        }
        let params = params.with_forcing(&forcing);
        let solver = GalerkinSolver::new(params.clone()).unwrap();
        let traj = solver
            .integrate(&u0, 0.0, NoiseInput::Off, &SolverConfig::new(0.01, 2.0).with_record_every(50))
            .unwrap();
        for (i, &t) in traj.times.iter().enumerate() {
            let u = traj.u(i);
            for m in 0..=2i64 {
                let k = params.linear_symbol(2, m);
                let (a, b) = (u0.z_coeff(2, m), forcing.z_coeff(2, m) / k);
                let exact = b + (a - b) * (-k * t).exp();
                assert!((u.z_coeff(2, m) - exact).norm() < 1e-9, "L={l_max} t={t} m={m}");
            }
            let others: f64 = (&u - &sphere_sns::sphere_operators::truncate(&u, 2).unwrap()).h_norm2();
            assert!(others < 1e-24);
        }
    }
}

fn nonlinear_run(dt: f64, scheme: Scheme) -> SpectralField {
    let params = ModelParams::new(0.05, 10).unwrap().with_rotation(0.5);
    let solver = GalerkinSolver::new(params).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let u0 = SpectralField::random(10, 1.0, &mut rng).scaled(3.0);
    let cfg = SolverConfig::new(dt, 0.8).with_scheme(scheme).with_diagnostics(false).with_record_every(1 << 20);
    solver.integrate(&u0, 0.0, NoiseInput::Off, &cfg).unwrap().final_u()
}

#[test]
fn ifrk4_is_fourth_order() {
    let (a, b, c) = (
        nonlinear_run(0.04, Scheme::Ifrk4),
        nonlinear_run(0.02, Scheme::Ifrk4),
        nonlinear_run(0.01, Scheme::Ifrk4),
    );
    let ratio = (&a - &b).h_norm2().sqrt() / (&b - &c).h_norm2().sqrt();
    assert!((12.0..20.0).contains(&ratio), "ratio {ratio}");
}

#[test]
fn if_euler_is_first_order() {
    let (a, b, c) = (
        nonlinear_run(0.004, Scheme::IfEuler),
        nonlinear_run(0.002, Scheme::IfEuler),
        nonlinear_run(0.001, Scheme::IfEuler),
    );
    let ratio = (&a - &b).h_norm2().sqrt() / (&b - &c).h_norm2().sqrt();
    assert!((1.8..2.2).contains(&ratio), "ratio {ratio}");
}

#[test]
fn blow_up_reports_last_good_step() {
    let params = ModelParams::new(1e-3, 10).unwrap();
    let solver = GalerkinSolver::new(params).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let u0 = SpectralField::random(10, 0.0, &mut rng).scaled(1e4);
    match solver.integrate(&u0, 0.0, NoiseInput::Off, &SolverConfig::new(0.5, 50.0)) {
        Err(SnsError::BlowUp { last_good_step, norm, .. }) => {
            assert!(last_good_step < 100);
            assert!(!(norm <= 1e12));
        }
        other => panic!("expected blow-up, got {:?}", other.map(|t| t.times.len())),
    }
}

#[test]
fn stiff_steps_rejected() {
    let solver = GalerkinSolver::new(ModelParams::new(1.0, 40).unwrap()).unwrap();
    let u0 = SpectralField::zeros(40);
    let r = solver.integrate(&u0, 0.0, NoiseInput::Off, &SolverConfig::new(0.1, 1.0));
    assert!(matches!(r, Err(SnsError::InvalidParameter { field: "dt", .. })));
}

#[test]
fn weak_form_holds_along_noisy_trajectory() {
    let params = ModelParams::new(0.5, 8).unwrap().with_noise(NoiseSpec::new(0.2, 1.0, 4));
    let solver = GalerkinSolver::new(params.clone()).unwrap();
    let path = NoisePath::new(&params, 0.005, 0.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let u0 = SpectralField::random(8, 1.0, &mut rng);
    let v0 = &u0 - &path.z_at(0.0).unwrap();
    let coarse = solver
        .integrate(&v0, 0.0, NoiseInput::Path(&path), &SolverConfig::new(0.01, 0.5))
        .unwrap();
    let fine = solver
        .integrate(&v0, 0.0, NoiseInput::Path(&path), &SolverConfig::new(0.005, 0.5))
        .unwrap();
    let tests: Vec<SpectralField> = (0..20).map(|_| SpectralField::random(8, 1.0, &mut rng)).collect();
    let rc = weak_form_residual(&solver, &coarse, &tests, 0.01).unwrap();
    let rf = weak_form_residual(&solver, &fine, &tests, 0.005).unwrap();
    // trapezoid consistency error of a fourth-order step: second order in dt
    let ratio = rc / rf;
    assert!((3.0..5.0).contains(&ratio), "{rc} / {rf} = {ratio}");
}
