use nonlocal_sir::kernels::{convolve_gradient, velocity_for_compartment, TabulatedKernel, VelocityPlan};
use nonlocal_sir::{
    build_grid, eval_gradient, Field, Grid, Interaction, KernelMatrix, KernelSpec, State, Targets,
};
use proptest::prelude::*;

/// Reference gradient written from the closed forms, independent of the
/// library's evaluator.
fn reference_gradient(spec: &KernelSpec, x: [f64; 2], dim: usize) -> [f64; 2] {
    match spec {
        KernelSpec::QuadAbs { gamma } => {
            let s = if x[0] > 0.0 {
                1.0
            } else if x[0] < 0.0 {
                -1.0
            } else {
                0.0
            };
            [2.0 * x[0] - gamma * s, 0.0]
        }
        KernelSpec::Gaussian {
            amplitude,
            sigma,
            interaction,
        } => {
            let sign = match interaction {
                Interaction::Attractive => -1.0,
                Interaction::Repulsive => 1.0,
            };
            let r2: f64 = x[..dim].iter().map(|c| c * c).sum();
            let e = (-r2 / (2.0 * sigma * sigma)).exp();
            let mut g = [0.0; 2];
            for a in 0..dim {
                g[a] = -sign * amplitude * x[a] / (sigma * sigma) * e;
            }
            g
        }
        _ => [0.0; 2],
    }
}

fn brute_force(grid: &Grid, density: &[f64], spec: &KernelSpec, targets: Targets) -> Vec<f64> {
    let [mx, my] = targets.shape(grid);
    let component = match targets {
        Targets::Centers { component } => component,
        Targets::Interfaces { axis } => axis,
    };
    let mut out = Vec::with_capacity(mx * my);
    for t in 0..mx * my {
        let p = targets.position(grid, t);
        let mut acc = 0.0;
        for (j, &u) in density.iter().enumerate() {
            let c = grid.cell_center(j);
            let g = reference_gradient(spec, [p[0] - c[0], p[1] - c[1]], grid.dim());
            acc += g[component] * u * grid.cell_measure();
        }
        out.push(acc);
    }
    out
}

fn assert_close(a: &[f64], b: &[f64], rel: f64) {
    let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    for (k, (x, y)) in a.iter().zip(b).enumerate() {
        assert!((x - y).abs() <= rel * scale, "target {k}: {x} vs {y}");
    }
}

fn quad() -> KernelSpec {
    KernelSpec::QuadAbs { gamma: 0.5 }
}

fn gauss(amplitude: f64, sigma: f64, interaction: Interaction) -> KernelSpec {
    KernelSpec::Gaussian {
        amplitude,
        sigma,
        interaction,
    }
}

#[test]
fn eval_gradient_examples() {
    assert_eq!(eval_gradient(&quad(), &[1.0]).unwrap()[0], 1.5);
    assert_eq!(eval_gradient(&quad(), &[0.0]).unwrap()[0], 0.0);
    assert!((eval_gradient(&quad(), &[-0.1]).unwrap()[0] - 0.3).abs() < 1e-15);
    assert!(eval_gradient(&quad(), &[0.1, 0.2]).is_err());
}

#[test]
fn single_cell_mass_matches_pointwise_gradient() {
    let g = build_grid(&[-1.7], &[1.7], &[340]).unwrap();
    let dx = g.dx(0);
    let j = (0..340).min_by(|&a, &b| g.center(0, a).abs().total_cmp(&g.center(0, b).abs())).unwrap();
    let mut values = vec![0.0; 340];
    values[j] = 1.0 / dx;
    let u = Field::from_values(&g, values).unwrap();
    let out = convolve_gradient(&g, &u, &quad(), Targets::Interfaces { axis: 0 }).unwrap();
    let k = (0..=340).min_by(|&a, &b| (g.interface(0, a) - 1.0).abs().total_cmp(&(g.interface(0, b) - 1.0).abs())).unwrap();
    let expected = eval_gradient(&quad(), &[g.interface(0, k) - g.center(0, j)]).unwrap()[0];
    assert!(((out[k] - expected) / expected).abs() < 1e-12);
    assert!((expected - 1.5).abs() < 0.02);
}

#[test]
fn zero_density_and_zero_kernel_give_zero() {
    let g = build_grid(&[-1.0], &[1.0], &[20]).unwrap();
    let zero = Field::zeros(&g);
    let out = convolve_gradient(&g, &zero, &quad(), Targets::Centers { component: 0 }).unwrap();
    assert!(out.iter().all(|&v| v == 0.0));
    let km = KernelMatrix::shared(&["S", "I"], KernelSpec::Zero).unwrap();
    let u = Field::from_values(&g, (0..20).map(|j| j as f64).collect()).unwrap();
    let state = State::physical(0.0, vec![u.clone(), u]).unwrap();
    let v = velocity_for_compartment(&g, &state, &km, 0, Targets::Interfaces { axis: 0 }).unwrap();
    assert!(v.iter().all(|&x| x == 0.0));
    assert!(velocity_for_compartment(&g, &state, &km, 5, Targets::Interfaces { axis: 0 }).is_err());
}

#[test]
fn cross_kernel_velocity_matches_oracle() {
    let g = build_grid(&[-1.0], &[1.0], &[50]).unwrap();
    let w = gauss(1.3, 0.2, Interaction::Attractive);
    let km = KernelMatrix::from_rows(
        &["S", "I"],
        vec![vec![KernelSpec::Zero, w.clone()], vec![KernelSpec::Zero; 2]],
    )
    .unwrap();
    let mut i = vec![0.0; 50];
    i[31] = 2.0;
    let s = Field::from_values(&g, vec![1.0; 50]).unwrap();
    let i = Field::from_values(&g, i).unwrap();
    let state = State::physical(0.0, vec![s, i.clone()]).unwrap();
    let targets = Targets::Interfaces { axis: 0 };
    let v = velocity_for_compartment(&g, &state, &km, 0, targets).unwrap();
    let expected: Vec<f64> = brute_force(&g, i.values(), &w, targets).iter().map(|x| -x).collect();
    assert_close(&v, &expected, 1e-12);
}

#[test]
fn shared_kernel_gives_identical_velocities() {
    let g = build_grid(&[-1.0], &[1.0], &[60]).unwrap();
    let km = KernelMatrix::shared(&["S", "I"], quad()).unwrap();
    let s = Field::from_values(&g, (0..60).map(|j| ((j as f64) * 0.3).sin().abs()).collect()).unwrap();
    let i = Field::from_values(&g, (0..60).map(|j| ((j as f64) * 0.7).cos().abs()).collect()).unwrap();
    let state = State::physical(0.0, vec![s, i]).unwrap();
    let t = Targets::Interfaces { axis: 0 };
    let vs = velocity_for_compartment(&g, &state, &km, 0, t).unwrap();
    let vi = velocity_for_compartment(&g, &state, &km, 1, t).unwrap();
    assert_eq!(vs, vi);
}

#[test]
fn even_density_has_zero_gradient_at_its_center() {
    let g = build_grid(&[-1.0], &[1.0], &[40]).unwrap();
    let values: Vec<f64> = (0..40).map(|j| (-(g.center(0, j) * 4.0).powi(2)).exp()).collect();
    let u = Field::from_values(&g, values).unwrap();
    for spec in [quad(), gauss(1.0, 0.3, Interaction::Repulsive)] {
        let out = convolve_gradient(&g, &u, &spec, Targets::Interfaces { axis: 0 }).unwrap();
        assert!(out[20].abs() < 1e-12, "{spec:?}: {}", out[20]);
    }
}

#[test]
fn tabulated_copy_of_gaussian_reproduces_it_on_the_lattice() {
    let g = build_grid(&[-1.0], &[1.0], &[40]).unwrap();
    let w = gauss(0.8, 0.25, Interaction::Attractive);
    let table = TabulatedKernel::sample(&w, 1, 0.5 * g.dx(0), 200).unwrap();
    let tab = KernelSpec::Tabulated(table);
    let u = Field::from_values(&g, (0..40).map(|j| 1.0 + (j % 7) as f64).collect()).unwrap();
    let t = Targets::Interfaces { axis: 0 };
    let a = convolve_gradient(&g, &u, &tab, t).unwrap();
    let b = convolve_gradient(&g, &u, &w, t).unwrap();
    assert_close(&a, &b, 1e-12);
}

fn random_kernel() -> impl Strategy<Value = KernelSpec> {
    prop_oneof![
        (0.05f64..2.0).prop_map(|gamma| KernelSpec::QuadAbs { gamma }),
        (0.1f64..3.0, 0.05f64..1.0, any::<bool>()).prop_map(|(a, s, attr)| gauss(
            a,
            s,
            if attr { Interaction::Attractive } else { Interaction::Repulsive }
        )),
    ]
}

fn random_gaussian() -> impl Strategy<Value = KernelSpec> {
    (0.1f64..3.0, 0.05f64..1.0, any::<bool>()).prop_map(|(a, s, attr)| {
        gauss(a, s, if attr { Interaction::Attractive } else { Interaction::Repulsive })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn convolution_matches_brute_force_1d(
        spec in random_kernel(),
        n in 4usize..60,
        density in prop::collection::vec(0.0f64..5.0, 60),
        centers in any::<bool>(),
    ) {
        let g = build_grid(&[-1.0], &[1.3], &[n]).unwrap();
        let u = Field::from_values(&g, density[..n].to_vec()).unwrap();
        let t = if centers { Targets::Centers { component: 0 } } else { Targets::Interfaces { axis: 0 } };
        let out = convolve_gradient(&g, &u, &spec, t).unwrap();
        assert_close(&out, &brute_force(&g, u.values(), &spec, t), 1e-12);
    }

    #[test]
    fn convolution_matches_brute_force_2d(
        spec in random_gaussian(),
        nx in 4usize..12,
        ny in 4usize..12,
        density in prop::collection::vec(0.0f64..5.0, 144),
        axis in 0usize..2,
        centers in any::<bool>(),
    ) {
        let g = build_grid(&[-1.0, -0.5], &[1.0, 0.8], &[nx, ny]).unwrap();
        let u = Field::from_values(&g, density[..nx * ny].to_vec()).unwrap();
        let t = if centers { Targets::Centers { component: axis } } else { Targets::Interfaces { axis } };
        let out = convolve_gradient(&g, &u, &spec, t).unwrap();
        assert_close(&out, &brute_force(&g, u.values(), &spec, t), 1e-12);
    }

    #[test]
    fn gradient_is_odd(spec in random_kernel(), x in -5.0f64..5.0) {
        let a = eval_gradient(&spec, &[x]).unwrap();
        let b = eval_gradient(&spec, &[-x]).unwrap();
        prop_assert_eq!(a[0], -b[0]);
    }

    #[test]
    fn convolution_is_linear(
        spec in random_kernel(),
        u in prop::collection::vec(0.0f64..5.0, 30),
        v in prop::collection::vec(0.0f64..5.0, 30),
        a in -3.0f64..3.0,
        b in -3.0f64..3.0,
    ) {
        let g = build_grid(&[-1.0], &[1.0], &[30]).unwrap();
        let t = Targets::Interfaces { axis: 0 };
        let combo: Vec<f64> = u.iter().zip(&v).map(|(x, y)| a * x + b * y).collect();
        let cu = convolve_gradient(&g, &Field::from_values(&g, u).unwrap(), &spec, t).unwrap();
        let cv = convolve_gradient(&g, &Field::from_values(&g, v).unwrap(), &spec, t).unwrap();
        let cc = convolve_gradient(&g, &Field::from_values(&g, combo).unwrap(), &spec, t).unwrap();
        let expected: Vec<f64> = cu.iter().zip(&cv).map(|(x, y)| a * x + b * y).collect();
        let scale = cu.iter().chain(&cv).fold(1e-300f64, |m, x| m.max(x.abs())) * (a.abs() + b.abs());
        for (x, y) in cc.iter().zip(&expected) {
            prop_assert!((x - y).abs() <= 1e-12 * scale.max(1e-300));
        }
    }

    #[test]
    fn shifting_density_shifts_samples(
        spec in random_kernel(),
        bumps in prop::collection::vec(0.0f64..5.0, 8),
        start in 5usize..20,
        shift in 1usize..10,
    ) {
        let g = build_grid(&[-1.0], &[1.0], &[40]).unwrap();
        let place = |s: usize| {
            let mut v = vec![0.0; 40];
            v[s..s + 8].copy_from_slice(&bumps);
            Field::from_values(&g, v).unwrap()
        };
        let t = Targets::Interfaces { axis: 0 };
        let a = convolve_gradient(&g, &place(start), &spec, t).unwrap();
        let b = convolve_gradient(&g, &place(start + shift), &spec, t).unwrap();
        for k in 0..=40 - shift {
            prop_assert_eq!(a[k], b[k + shift]);
        }
    }

    #[test]
    fn velocity_plan_matches_direct_sums(
        kinds in prop::collection::vec(0usize..4, 9),
        fields in prop::collection::vec(prop::collection::vec(0.0f64..3.0, 24), 3),
    ) {
        let g = build_grid(&[-1.0], &[1.0], &[24]).unwrap();
        let menu = [KernelSpec::Zero, quad(), gauss(1.0, 0.3, Interaction::Attractive), KernelSpec::QuadAbs { gamma: 0.2 }];
        let rows: Vec<Vec<KernelSpec>> = kinds.chunks(3).map(|r| r.iter().map(|&k| menu[k].clone()).collect()).collect();
        let km = KernelMatrix::from_rows(&["A", "B", "C"], rows).unwrap();
        let state = State::physical(0.0, fields.iter().map(|f| Field::from_values(&g, f.clone()).unwrap()).collect()).unwrap();
        let plan = VelocityPlan::new(&g, &km).unwrap();
        let slices: Vec<&[f64]> = fields.iter().map(|f| f.as_slice()).collect();
        let fast = plan.interface_velocities(&slices);
        for xi in 0..3 {
            let direct = velocity_for_compartment(&g, &state, &km, xi, Targets::Interfaces { axis: 0 }).unwrap();
            let scale = direct.iter().fold(1.0f64, |m, x| m.max(x.abs()));
            for (x, y) in fast[xi][0].iter().zip(&direct) {
                prop_assert!((x - y).abs() <= 1e-12 * scale);
            }
        }
    }
}
