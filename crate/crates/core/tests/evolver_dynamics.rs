use isoaffine::eulerian::{lagrangian_reconstruct, ReconstructInput};
use isoaffine::evolver::{evolve, rk4_step, Dynamics, EvolverConfig, RunStatus};
use isoaffine::lagrangian::{
    build_beta, build_profiles, gradient, unit_data, FlowState, Grid3, VecField, WeightProfiles,
};
use isoaffine::modulation::{background_at, Background, Coefficients};
use isoaffine::pipeline::{prepare_motion, reference_params, Motion, REFERENCE_SIGMA};
use isoaffine::{Mat3, Vec3};

fn motion() -> Motion {
    prepare_motion(&reference_params(), REFERENCE_SIGMA, 2.0, 1e-10).unwrap()
}

/// `Λ[θ − (1+1/α)∇div θ + ∑_k y_k ∇θ_k + (1/α) y div θ]`, the bracket of
/// the acceleration linearised at `θ = 0`, with the same stencils.
fn linear_bracket(grid: &Grid3, theta: &VecField, lambda: &Mat3, alpha: f64) -> VecField {
    let n = grid.len();
    let mut div = vec![0.0; n];
    for c in 0..3 {
        let d = grid.deriv(&theta.0[c], c);
        div.iter_mut().zip(&d).for_each(|(o, v)| *o += v);
    }
    let grad_div = gradient(grid, &div);
    let grads: Vec<VecField> = (0..3).map(|k| gradient(grid, &theta.0[k])).collect();
    let pts: Vec<Vec3> = (0..n)
        .map(|i| {
            let y = grid.point(i);
            let mut s = theta.at(i) - grad_div.at(i).scale(1.0 + 1.0 / alpha) + y.scale(div[i] / alpha);
            for k in 0..3 {
                s = s + grads[k].at(i).scale(y[k]);
            }
            *lambda * s
        })
        .collect();
    VecField::from_points(&pts)
}

#[test]
fn acceleration_matches_linearised_operator() {
    let m = motion();
    let grid = Grid3::new(17, 2.0).unwrap();
    let profiles = build_beta(&grid, 0.0, 2).unwrap();
    let dynamics = Dynamics::new(&grid, m.coeffs, &profiles);
    let bg = background_at(0.7, &m.resc).unwrap();
    let (unit, _) = unit_data(&grid);
    let amp = 1e-7;
    let state = FlowState::new(&grid, 0.7, unit.scale(amp), VecField::zeros(grid.len())).unwrap();
    let acc = dynamics.acceleration(&state, &bg);
    let lin = linear_bracket(&grid, &unit, &bg.lambda, m.coeffs.alpha).scale(-amp * m.coeffs.flux(bg.mu));
    let err = acc.axpy(-1.0, &lin).max_norm();
    let rel = err / lin.max_norm();
    assert!(rel <= 1e-6, "relative deviation {rel:e}");
}

#[test]
fn velocity_terms_are_damping_and_rotation() {
    let m = motion();
    let grid = Grid3::new(17, 2.0).unwrap();
    let profiles = build_beta(&grid, 0.0, 2).unwrap();
    let dynamics = Dynamics::new(&grid, m.coeffs, &profiles);
    let bg = background_at(1.3, &m.resc).unwrap();
    let (_, unit_v) = unit_data(&grid);
    let state = FlowState::new(&grid, 1.3, VecField::zeros(grid.len()), unit_v.clone()).unwrap();
    let acc = dynamics.acceleration(&state, &bg);
    for i in 0..grid.len() {
        let v = unit_v.at(i);
        let want = -(v.scale(bg.mu_tau / bg.mu) + (bg.gamma_star * v).scale(2.0));
        assert!((acc.at(i) - want).norm() <= 1e-14 * (1.0 + want.norm()));
    }
}

fn frozen_bg(tau: f64) -> isoaffine::Result<Background> {
    Ok(Background { tau, t: tau, mu: 1.0, mu_tau: 0.0, lambda: Mat3::diag([1.5, 1.0, 1.0 / 1.5]), gamma_star: Mat3::ZERO })
}

/// Fourth-order convergence of the τ-stepper on a fixed grid.
#[test]
fn stepper_converges_at_fourth_order() {
    let grid = Grid3::new(25, 2.0).unwrap();
    let profiles = build_beta(&grid, 1e-4, 2).unwrap();
    let coeffs = Coefficients {
        cbar: 0.3,
        alpha: 1.5,
        exps: isoaffine::time_frames::exponents(1.5, 1.0, 0.5).unwrap(),
    };
    let dynamics = Dynamics::new(&grid, coeffs, &profiles);
    let (t0, v0) = unit_data(&grid);
    let start = FlowState::new(&grid, 0.0, t0.scale(1e-3), v0.scale(1e-3)).unwrap();
    let run = |steps: usize| {
        let h = 0.4 / steps as f64;
        let mut s = start.clone();
        for _ in 0..steps {
            s = rk4_step(&dynamics, &s, h, &frozen_bg).unwrap().0;
        }
        s
    };
    let (a, b, c) = (run(4), run(8), run(16));
    let e1 = a.theta.axpy(-1.0, &b.theta).max_norm();
    let e2 = b.theta.axpy(-1.0, &c.theta).max_norm();
    assert!(e1 / e2 > 13.0, "ratio {}", e1 / e2);
}

#[test]
fn backward_steps_retrace_the_forward_run() {
    let grid = Grid3::new(21, 2.0).unwrap();
    let profiles = build_beta(&grid, 1e-4, 2).unwrap();
    let coeffs = Coefficients {
        cbar: 0.3,
        alpha: 1.5,
        exps: isoaffine::time_frames::exponents(1.5, 1.0, 0.5).unwrap(),
    };
    let dynamics = Dynamics::new(&grid, coeffs, &profiles);
    let (t0, v0) = unit_data(&grid);
    let start = FlowState::new(&grid, 0.0, t0.scale(1e-3), v0.scale(1e-3)).unwrap();
    let retrace = |h: f64| {
        let mut s = start.clone();
        for _ in 0..4 {
            s = rk4_step(&dynamics, &s, h, &frozen_bg).unwrap().0;
        }
        for _ in 0..4 {
            s = rk4_step(&dynamics, &s, -h, &frozen_bg).unwrap().0;
        }
        s.theta.axpy(-1.0, &start.theta).max_norm()
    };
    let (e1, e2) = (retrace(0.05), retrace(0.025));
    assert!(e1 < 1e-3 * start.theta.max_norm());
    assert!(e1 / e2 > 13.0, "ratio {}", e1 / e2);
}

#[test]
fn zero_data_stays_zero() {
    let m = motion();
    let grid = Grid3::new(33, 4.0).unwrap();
    let profiles = build_beta(&grid, 0.0, 2).unwrap();
    let config = EvolverConfig {
        tau_end: 1.0,
        cfl: 0.4,
        order: 2,
        epsilon: 0.0,
        lambda: 0.0,
        sigma_choice: m.exps.sigma,
        grid,
        snapshot_stride: 5,
        dtau_max: 0.05,
        apriori_c: 1.0,
    };
    let z = VecField::zeros(grid.len());
    let led = evolve(&config, &m.resc, &m.coeffs, &profiles, z.clone(), z).unwrap();
    assert_eq!(led.status, RunStatus::Completed);
    let s = led.final_state.unwrap();
    assert_eq!(s.theta.max_norm() + s.v.max_norm(), 0.0);
    assert!(led.snapshots.iter().all(|s| s.norms.sn == 0.0 && s.support.radius(1e-10) == 0.0));
}

fn reconstruct_at_start(m: &Motion, grid: &Grid3, lambda: f64, eps: f64) -> (isoaffine::eulerian::LagrangianFields, WeightProfiles) {
    let bg0 = background_at(0.0, &m.resc).unwrap();
    let init = build_profiles(grid, lambda, eps, 2, &bg0, &m.coeffs).unwrap();
    let dynamics = Dynamics::new(grid, m.coeffs, &init.profiles);
    let state = FlowState::new(grid, 0.0, init.theta0.clone(), init.v0.clone()).unwrap();
    let accel = dynamics.acceleration(&state, &bg0);
    let out = lagrangian_reconstruct(&ReconstructInput {
        grid,
        resc: &m.resc,
        profiles: &init.profiles,
        theta0: &init.theta0,
        state: &state,
        accel: &accel,
    })
    .unwrap();
    (out, init.profiles)
}

#[test]
fn unperturbed_reconstruction_is_affine() {
    let m = motion();
    let grid = Grid3::new(17, 2.0).unwrap();
    let (out, _) = reconstruct_at_start(&m, &grid, 0.0, 0.0);
    let p = &m.traj.params;
    let det0 = p.a0.det();
    for i in 0..grid.len() {
        let y = grid.point(i);
        let rho = (-0.5 * y.norm_sq()).exp() / det0;
        assert!((out.f[i] - rho).abs() <= 1e-15);
        assert!((out.temperature[i] - p.tbar).abs() <= 1e-12 * p.tbar);
    }
    let spread = out.temperature.iter().cloned().fold(f64::MIN, f64::max)
        - out.temperature.iter().cloned().fold(f64::MAX, f64::min);
    assert!(spread <= 1e-12 * p.tbar);
    // only stencil truncation remains
    let (fine, _) = reconstruct_at_start(&m, &Grid3::new(33, 2.0).unwrap(), 0.0, 0.0);
    assert!(out.momentum_residual <= 1e-2 * out.momentum_scale);
    assert!(out.momentum_residual / fine.momentum_residual > 10.0);
}

#[test]
fn initial_temperature_carries_beta() {
    let m = motion();
    let grid = Grid3::new(17, 2.0).unwrap();
    let (out, profiles) = reconstruct_at_start(&m, &grid, 1e-4, 0.0);
    let tbar = m.traj.params.tbar;
    for i in 0..grid.len() {
        assert!((out.temperature[i] - tbar * (1.0 + profiles.beta[i])).abs() <= 1e-14);
    }
}

#[test]
fn momentum_residual_decreases_under_refinement() {
    let m = motion();
    let mut res = Vec::new();
    for n in [17, 25, 33] {
        let grid = Grid3::new(n, 2.0).unwrap();
        let (out, _) = reconstruct_at_start(&m, &grid, 1e-5, 1e-4);
        res.push(out.momentum_residual);
        let mass0 = grid.integrate_with(|i| (-0.5 * grid.point(i).norm_sq()).exp());
        assert!((out.mass - mass0).abs() <= 1e-13 * mass0);
    }
    assert!(res[0] > res[1] && res[1] > res[2], "{res:?}");
    assert!(res[0] / res[2] > 5.0, "{res:?}");
}
