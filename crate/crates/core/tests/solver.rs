use nonlocal_sir::solver::{cfl_timestep, diffusion_rhs, stable_timestep, transport_rhs};
use nonlocal_sir::{
    build_grid, make_sir, make_sis, project_function, Field, Grid, Interaction, KernelMatrix,
    KernelSpec, RkScheme, Solver, SolverConfig, State,
};
use proptest::prelude::*;

fn grid(lo: f64, hi: f64, n: usize) -> Grid {
    build_grid(&[lo], &[hi], &[n]).unwrap()
}

fn constant_state(g: &Grid, values: &[f64]) -> State {
    let fields = values
        .iter()
        .map(|&v| project_function(g, |_| v).unwrap())
        .collect();
    State::physical(0.0, fields).unwrap()
}

fn rk4_sis(s: f64, i: f64, alpha: f64, beta: f64, t: f64, dt: f64) -> (f64, f64) {
    let f = |s: f64, i: f64| {
        let inc = beta * s * i;
        (-inc + alpha * i, inc - alpha * i)
    };
    let steps = (t / dt).round() as usize;
    let (mut s, mut i) = (s, i);
    for _ in 0..steps {
        let k1 = f(s, i);
        let k2 = f(s + 0.5 * dt * k1.0, i + 0.5 * dt * k1.1);
        let k3 = f(s + 0.5 * dt * k2.0, i + 0.5 * dt * k2.1);
        let k4 = f(s + dt * k3.0, i + dt * k3.1);
        s += dt / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0);
        i += dt / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1);
    }
    (s, i)
}

#[test]
fn cfl_timestep_examples() {
    let g = grid(0.0, 1.0, 100);
    assert!((cfl_timestep(&g, 2.0, 0.0, 0.5) - 0.0025).abs() < 1e-15);
    assert!((cfl_timestep(&g, 0.0, 0.01, 0.5) - 0.0025).abs() < 1e-15);
    assert!(cfl_timestep(&g, 0.0, 0.0, 0.5) > 1e100);
    assert!(stable_timestep(&g, 2.0, 0.0, 100.0, 0.5) < 0.0025);
}

#[test]
fn transport_moves_a_single_cell_to_the_right() {
    let g = grid(0.0, 1.0, 10);
    let mut values = vec![0.0; 10];
    values[4] = 1.0;
    let u = Field::from_values(&g, values).unwrap();
    let v = vec![vec![1.0; 11]];
    let rhs = transport_rhs(&g, &u, &v).unwrap();
    for (j, r) in rhs.values().iter().enumerate() {
        let expected = match j {
            4 => -10.0,
            5 => 10.0,
            _ => 0.0,
        };
        assert!((r - expected).abs() < 1e-12, "cell {j}: {r}");
    }
    let total: f64 = rhs.values().iter().sum::<f64>() * g.dx(0);
    assert!(total.abs() < 1e-14);
}

#[test]
fn transport_vanishes_for_zero_density_or_velocity() {
    let g = grid(-1.0, 1.0, 20);
    let zero = Field::zeros(&g);
    let bump = project_function(&g, |x| (1.0 - x[0] * x[0]).max(0.0)).unwrap();
    let rhs = transport_rhs(&g, &zero, &[vec![3.0; 21]]).unwrap();
    assert!(rhs.values().iter().all(|&r| r == 0.0));
    let rhs = transport_rhs(&g, &bump, &[vec![0.0; 21]]).unwrap();
    assert!(rhs.values().iter().all(|&r| r == 0.0));
}

#[test]
fn transport_telescopes_with_outflow_at_boundary_only() {
    let g = grid(-1.0, 1.0, 40);
    let u = project_function(&g, |x| 1.0 + x[0].sin()).unwrap();
    let v: Vec<f64> = (0..41).map(|k| (3.0 * g.interface(0, k)).cos()).collect();
    let rhs = transport_rhs(&g, &u, &[v.clone()]).unwrap();
    let total: f64 = rhs.values().iter().sum::<f64>() * g.dx(0);
    let left_flux = v[0].min(0.0) * u.values()[0];
    let right_flux = v[40].max(0.0) * u.values()[39];
    assert!((total - (left_flux - right_flux)).abs() < 1e-12);
}

#[test]
fn diffusion_examples() {
    let g = grid(0.0, 1.0, 10);
    let c = 3.0;
    let u = project_function(&g, |_| c).unwrap();
    let zero = diffusion_rhs(&g, &u, 0.0).unwrap();
    assert!(zero.values().iter().all(|&r| r == 0.0));
    let rhs = diffusion_rhs(&g, &u, 1.0).unwrap();
    let edge = -c / (0.1 * 0.1);
    assert!((rhs.values()[0] - edge).abs() < 1e-9);
    assert!((rhs.values()[9] - edge).abs() < 1e-9);
    assert!(rhs.values()[1..9].iter().all(|r| r.abs() < 1e-9));

    let eps = 0.7;
    let q = project_function(&g, |x| x[0] * x[0]).unwrap();
    let rhs = diffusion_rhs(&g, &q, eps).unwrap();
    for r in &rhs.values()[1..9] {
        assert!((r - 2.0 * eps).abs() < 1e-10, "{r}");
    }
}

#[test]
fn rhs_of_zero_state_is_zero_and_step_advances_time() {
    let g = grid(-1.0, 1.0, 20);
    let model = make_sis(1.0, 1.0, KernelSpec::QuadAbs { gamma: 0.5 }, 0.01).unwrap();
    let solver = Solver::new(&model, &g, SolverConfig::fixed(1.0, 0.01)).unwrap();
    let zero = State::zeros(&g, 2);
    for f in solver.full_rhs(&zero).unwrap() {
        assert!(f.values().iter().all(|&v| v == 0.0));
    }
    let next = solver.rk_step(&zero, 0.01).unwrap();
    assert_eq!(next.time(), 0.01);
    assert!(next.fields().iter().all(|f| f.values().iter().all(|&v| v == 0.0)));
}

#[test]
fn homogeneous_rhs_is_pointwise_reaction() {
    let g = grid(-1.0, 1.0, 16);
    let model = make_sis(0.7, 1.3, KernelSpec::Zero, 0.0).unwrap();
    let state = constant_state(&g, &[2.0, 0.5]);
    let rhs = model_rhs(&model, &state);
    let inc = 1.3 * 2.0 * 0.5;
    let expected = [-inc + 0.7 * 0.5, inc - 0.7 * 0.5];
    for (f, e) in rhs.iter().zip(expected) {
        assert!(f.values().iter().all(|v| (v - e).abs() < 1e-14));
    }
}

fn model_rhs(model: &nonlocal_sir::ModelSpec, state: &State) -> Vec<Field> {
    nonlocal_sir::solver::full_rhs(model, state).unwrap()
}

#[test]
fn homogeneous_endemic_point_is_fixed() {
    let g = grid(-1.0, 1.0, 16);
    let model = make_sis(1.0, 1.0, KernelSpec::Zero, 0.0).unwrap();
    let state = constant_state(&g, &[1.0, 1.0]);
    let next = nonlocal_sir::solver::rk_step(&model, &state, 1e-3).unwrap();
    for f in next.fields() {
        assert!(f.values().iter().all(|v| (v - 1.0).abs() <= 1e-15));
    }
}

#[test]
fn homogeneous_sis_matches_rk4_reference() {
    let g = grid(-1.0, 1.0, 8);
    let model = make_sis(1.0, 1.0, KernelSpec::Zero, 0.0).unwrap();
    let init = constant_state(&g, &[2.0, 0.1]);
    let (s_ref, i_ref) = rk4_sis(2.0, 0.1, 1.0, 1.0, 10.0, 1e-5);
    for rk in [RkScheme::Ssp2, RkScheme::Ssp3] {
        let config = SolverConfig::fixed(10.0, 1e-3).with_rk(rk);
        let out = nonlocal_sir::solver::run(&model, &init, config, &mut []).unwrap();
        assert_eq!(out.state.time(), 10.0);
        let s = out.state.field(0).values()[3];
        let i = out.state.field(1).values()[3];
        assert!(((s - s_ref) / s_ref).abs() <= 1e-6, "{rk:?}: S {s} vs {s_ref}");
        assert!(((i - i_ref) / i_ref).abs() <= 1e-6, "{rk:?}: I {i} vs {i_ref}");
    }
}

#[test]
fn zero_horizon_returns_initial_state() {
    let g = grid(-1.0, 1.0, 20);
    let model = make_sis(1.0, 1.0, KernelSpec::QuadAbs { gamma: 0.5 }, 0.0).unwrap();
    let init = State::physical(
        0.0,
        vec![
            project_function(&g, |x| (0.5 - x[0].abs()).max(0.0)).unwrap(),
            project_function(&g, |x| (0.2 - x[0].abs()).max(0.0)).unwrap(),
        ],
    )
    .unwrap();
    let mut seen = Vec::new();
    let mut sink = |step: usize, _: &State| seen.push(step);
    let out = nonlocal_sir::solver::run(&model, &init, SolverConfig::fixed(0.0, 0.01), &mut [&mut sink])
        .unwrap();
    assert_eq!(out.summary.steps, 0);
    assert_eq!(out.state, init);
    assert_eq!(seen, vec![0]);
}

#[test]
fn strict_policy_aborts_on_oversized_step() {
    let g = grid(-1.0, 1.0, 200);
    let model = make_sis(1.0, 1.0, KernelSpec::QuadAbs { gamma: 0.5 }, 0.0).unwrap();
    let init = State::physical(
        0.0,
        vec![
            project_function(&g, |x| if x[0].abs() < 0.5 { 5.0 } else { 0.0 }).unwrap(),
            Field::zeros(&g),
        ],
    )
    .unwrap();
    let out = nonlocal_sir::solver::run(&model, &init, SolverConfig::fixed(1.0, 0.5), &mut []).unwrap();
    assert!(matches!(
        out.summary.abort,
        Some(nonlocal_sir::Error::CflViolation { .. })
    ));
    assert!(out.into_result().is_err());
}

#[test]
fn repeated_runs_are_bit_identical() {
    let g = grid(-1.0, 1.0, 100);
    let km = KernelMatrix::from_rows(
        &["S", "I", "R"],
        vec![
            vec![
                KernelSpec::QuadAbs { gamma: 0.5 },
                KernelSpec::Gaussian {
                    amplitude: 1.0,
                    sigma: 0.3,
                    interaction: Interaction::Attractive,
                },
                KernelSpec::Zero,
            ],
            vec![KernelSpec::QuadAbs { gamma: 0.4 }; 3],
            vec![KernelSpec::Zero; 3],
        ],
    )
    .unwrap();
    let model = make_sir(1.0, 2.0, km, 1e-3).unwrap();
    let init = State::physical(
        0.0,
        vec![
            project_function(&g, |x| (0.6 - x[0].abs()).max(0.0)).unwrap(),
            project_function(&g, |x| (0.2 - (x[0] - 0.1).abs()).max(0.0)).unwrap(),
            Field::zeros(&g),
        ],
    )
    .unwrap();
    let config = SolverConfig::cfl(0.5, 0.5).with_rk(RkScheme::Ssp3);
    let a = nonlocal_sir::solver::run(&model, &init, config, &mut []).unwrap();
    let b = nonlocal_sir::solver::run(&model, &init, config, &mut []).unwrap();
    assert!(a.summary.abort.is_none());
    assert_eq!(a.state, b.state);
    assert!(a.summary.max_mass_drift < 1e-12);
}

fn bump(center: f64, width: f64, height: f64) -> impl Fn(&[f64]) -> f64 {
    move |x| {
        let r = (x[0] - center) / width;
        if r.abs() < 1.0 {
            height * (0.5 + 0.5 * (std::f64::consts::PI * r).cos())
        } else {
            0.0
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn sis_runs_stay_nonnegative_and_conservative(
        gamma in 0.1f64..1.0,
        beta in 0.1f64..3.0,
        alpha in 0.1f64..2.0,
        s_height in 0.1f64..2.0,
        i_height in 0.0f64..2.0,
        i_center in -0.3f64..0.3,
        eps in prop_oneof![Just(0.0), 1e-4f64..1e-2],
    ) {
        let g = grid(-1.5, 1.5, 120);
        let model = make_sis(alpha, beta, KernelSpec::QuadAbs { gamma }, eps).unwrap();
        let init = State::physical(0.0, vec![
            project_function(&g, bump(0.0, 0.5, s_height)).unwrap(),
            project_function(&g, bump(i_center, 0.2, i_height)).unwrap(),
        ]).unwrap();
        let out = nonlocal_sir::solver::run(&model, &init, SolverConfig::cfl(0.5, 0.5), &mut []).unwrap();
        prop_assert!(out.summary.abort.is_none());
        prop_assert!(out.summary.min_value >= -1e-12);
        prop_assert!(out.summary.max_mass_drift <= 1e-9);
    }

    #[test]
    fn forward_euler_sized_steps_keep_single_cells_nonnegative(
        cell in 10usize..30,
        v in -5.0f64..5.0,
    ) {
        let g = grid(0.0, 1.0, 40);
        let mut values = vec![0.0; 40];
        values[cell] = 1.0;
        let u = Field::from_values(&g, values.clone()).unwrap();
        let rhs = transport_rhs(&g, &u, &[vec![v; 41]]).unwrap();
        let dt = cfl_timestep(&g, v.abs(), 0.0, 0.5);
        for (a, r) in values.iter().zip(rhs.values()) {
            prop_assert!(a + dt * r >= -1e-15);
        }
    }
}
