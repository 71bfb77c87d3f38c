//! Property tests for the spec invariants that hold on random data.

use proptest::prelude::*;

use coagdiff_core::coagulation::{
    gain, loss, q_truncated, weak_form_lhs, weak_form_rhs, weak_form_scale, ConcentrationVector,
    TestSequence,
};
use coagdiff_core::grid::{DiffusionProfile, Grid1D, TriWorkspace};
use coagdiff_core::kernels::{GrowthClass, KernelSpec};
use coagdiff_core::simulator::{ClusterField, InitialData, ReactionScheme, SpatialProfile};

fn kernel_strategy() -> impl Strategy<Value = KernelSpec<f64>> {
    prop_oneof![
        (0.0..4.0).prop_map(|c| KernelSpec::constant(c).unwrap()),
        ((0.1..3.0), (0.0..1.2)).prop_map(|(c, g)| KernelSpec::sum_power(c, g).unwrap()),
        ((0.1..3.0), (0.0..0.9), (0.0..0.9))
            .prop_map(|(c, a, b)| KernelSpec::product_power(c, a, b).unwrap()),
        Just(KernelSpec::multiplicative()),
    ]
}

fn conc_strategy(max_n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..2.0, 1..=max_n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn kernel_symmetry(kernel in kernel_strategy(), i in 1usize..512, j in 1usize..512) {
        prop_assert_eq!(kernel.eval(i, j).unwrap(), kernel.eval(j, i).unwrap());
        prop_assert!(kernel.eval(i, j).unwrap() >= 0.0);
    }

    #[test]
    fn classification_is_total_on_closed_forms(kernel in kernel_strategy()) {
        let class = kernel.classify().unwrap();
        prop_assert!(matches!(
            class,
            GrowthClass::Sublinear | GrowthClass::LinearBorderline | GrowthClass::Superlinear
        ));
    }

    #[test]
    fn gain_loss_nonnegative_and_mass_null(
        kernel in kernel_strategy(),
        c in conc_strategy(96),
    ) {
        let cv = ConcentrationVector::new(c).unwrap();
        let g = gain(&cv, &kernel).unwrap();
        let l = loss(&cv, &kernel).unwrap();
        prop_assert!(g.iter().all(|&v| v >= 0.0));
        prop_assert!(l.iter().all(|&v| v >= 0.0));
        prop_assert_eq!(g[0], 0.0);
        prop_assert_eq!(l[cv.n() - 1], 0.0);

        let q = q_truncated(&cv, &kernel).unwrap();
        let mut mass = 0.0;
        let mut scale = 0.0;
        for i in 1..=cv.n() {
            mass += i as f64 * q[i - 1];
            scale += i as f64 * (g[i - 1] + l[i - 1]);
        }
        prop_assert!(mass.abs() <= 1e-10 * scale.max(1e-300));
    }

    #[test]
    fn weak_form_identity(
        kernel in kernel_strategy(),
        c in conc_strategy(64),
        seed in any::<u64>(),
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let n = c.len();
        let cv = ConcentrationVector::new(c).unwrap();
        let phi = TestSequence::new((0..n).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect())
            .unwrap();
        let lhs = weak_form_lhs(&cv, &kernel, &phi).unwrap();
        let rhs = weak_form_rhs(&cv, &kernel, &phi).unwrap();
        let scale = weak_form_scale(&cv, &kernel, &phi).unwrap().max(1e-300);
        prop_assert!((lhs - rhs).abs() <= 1e-10 * scale);
    }

    #[test]
    fn heat_step_contracts_and_conserves(
        u in prop::collection::vec(-3.0f64..3.0, 2..128),
        d in 0.01f64..10.0,
        dt in 1e-5f64..0.5,
    ) {
        let grid = Grid1D::new(u.len()).unwrap();
        let out = grid.heat_step_be(&u, d, dt).unwrap();
        let max_in = u.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
        let max_out = out.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
        prop_assert!(max_out <= max_in * (1.0 + 1e-12));
        let sum_in: f64 = u.iter().sum();
        let sum_out: f64 = out.iter().sum();
        let abs: f64 = u.iter().map(|v| v.abs()).sum();
        prop_assert!((sum_in - sum_out).abs() <= 1e-12 * abs.max(1e-300));
    }

    #[test]
    fn heat_step_preserves_positivity(
        u in prop::collection::vec(0.0f64..3.0, 2..96),
        d in 0.01f64..10.0,
        dt in 1e-5f64..0.5,
    ) {
        let grid = Grid1D::new(u.len()).unwrap();
        let out = grid.heat_step_be(&u, d, dt).unwrap();
        prop_assert!(out.iter().all(|&v| v >= -1e-15));
    }

    #[test]
    fn laplacian_quadratic_form_nonpositive(
        u in prop::collection::vec(-2.0f64..2.0, 2..128),
    ) {
        let grid = Grid1D::new(u.len()).unwrap();
        let lu = grid.laplacian(&u).unwrap();
        let quad: f64 = u.iter().zip(lu.iter()).map(|(&a, &b)| a * b).sum();
        let scale: f64 = grid.gradient_energy(&u) / grid.h() + 1e-300;
        prop_assert!(quad <= 1e-11 * scale);
    }

    #[test]
    fn lp_norm_homogeneous(
        u in prop::collection::vec(-2.0f64..2.0, 2..64),
        alpha in -3.0f64..3.0,
        p in 1.0f64..6.0,
    ) {
        let grid = Grid1D::new(u.len()).unwrap();
        let base = grid.lp_norm_space(&u, p).unwrap();
        let scaled: Vec<f64> = u.iter().map(|&v| alpha * v).collect();
        let got = grid.lp_norm_space(&scaled, p).unwrap();
        prop_assert!((got - alpha.abs() * base).abs() <= 1e-10 * (1.0 + base));
    }

    #[test]
    fn diffusion_tail_bounds(
        d_inf in 0.1f64..5.0,
        amp in -0.05f64..5.0,
        rate in 0.2f64..3.0,
        i0 in 1usize..64,
        i in 0usize..512,
    ) {
        prop_assume!(d_inf + amp > 0.0);
        let profile = DiffusionProfile::limit(d_inf, amp, rate).unwrap();
        let i = i0 + i;
        let (lo, hi) = (profile.inf_from(i0), profile.sup_from(i0));
        let v = profile.rate(i);
        prop_assert!(lo <= v * (1.0 + 1e-12) && v <= hi * (1.0 + 1e-12));
    }

    #[test]
    fn moment_monotonicity(
        rows in prop::collection::vec(prop::collection::vec(0.0f64..2.0, 4), 1..24),
        tail in 1usize..24,
    ) {
        let n = rows.len();
        prop_assume!(tail <= n);
        let grid = Grid1D::new(4).unwrap();
        let state =
            ClusterField::from_initial(n, grid, &InitialData::Table { rows }).unwrap();
        let rho1 = state.moment_field(1.0);
        let rho2 = state.moment_field(2.0);
        let tail1 = state.tail_moment_field(1.0, tail).unwrap();
        for j in 0..4 {
            // rho_{k+1} >= rho_k and the tail moment never exceeds the full one.
            prop_assert!(rho2[j] >= rho1[j] * (1.0 - 1e-12));
            prop_assert!(tail1[j] <= rho1[j] * (1.0 + 1e-12));
            prop_assert!(tail1[j] >= 0.0);
        }
    }

    #[test]
    fn semi_implicit_reaction_nonnegative(
        c in conc_strategy(48),
        dt in 1e-4f64..1.0,
    ) {
        let n = c.len();
        let grid = Grid1D::single_cell();
        let mut state = ClusterField::<f64>::zeros(n, grid).unwrap();
        for (i0, v) in c.iter().enumerate() {
            state.species_mut(i0 + 1)[0] = *v;
        }
        let kernel = KernelSpec::multiplicative();
        let out = coagdiff_core::simulator::reaction_substep(
            &state,
            &kernel,
            dt,
            ReactionScheme::SemiImplicitLoss,
        )
        .unwrap();
        prop_assert!(out.min_entry() >= 0.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn initial_families_nonnegative_with_exact_mass(
        n in 1usize..128,
        cells in 2usize..16,
        ratio in 0.05f64..0.95,
        amp in 0.0f64..1.0,
    ) {
        let grid = Grid1D::new(cells).unwrap();
        let init = InitialData::Geometric {
            density: SpatialProfile::Cosine { mean: 1.0, amplitude: amp, mode: 1 },
            ratio,
        };
        let state = ClusterField::from_initial(n, grid.clone(), &init).unwrap();
        prop_assert!(state.min_entry() >= 0.0);
        // Mass equals the cell average of the density profile exactly.
        let expect: f64 = grid
            .centers()
            .iter()
            .map(|&x| 1.0 + amp * (std::f64::consts::PI * x).cos())
            .sum::<f64>()
            * grid.h();
        let mass = state.total_mass();
        prop_assert!((mass - expect).abs() <= 1e-11 * expect.max(1.0));
    }

    #[test]
    fn q2_duality_ratio_bounded(
        nx in 2usize..24,
        nt in 1usize..24,
        m in 0.05f64..8.0,
        seed in any::<u64>(),
    ) {
        use coagdiff_core::duality::{k_ratio, IntervalField, TimeMesh};
        use rand::{Rng, SeedableRng};
        let grid = Grid1D::new(nx).unwrap();
        let mesh = TimeMesh::new(nt, 1.0).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let frames: Vec<Vec<f64>> = (0..nt)
            .map(|_| (0..nx).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect())
            .collect();
        let f = IntervalField::from_frames(grid, mesh, frames).unwrap();
        let r = k_ratio(m, 2.0, &f).unwrap();
        prop_assert!(r <= 1.0 + 1e-12, "ratio {}", r);
    }
}

#[test]
fn tri_workspace_reuse_matches_fresh() {
    // The in-place heat step with a reused workspace must match the
    // allocating entry point bit for bit.
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
    let grid = Grid1D::new(33).unwrap();
    let mut ws = TriWorkspace::new(33);
    for _ in 0..10 {
        let u: Vec<f64> = (0..33).map(|_| rng.random::<f64>()).collect();
        let fresh = grid.heat_step_be(&u, 1.3, 0.02).unwrap();
        let mut inplace = u.clone();
        grid.heat_step_be_inplace(&mut inplace, 1.3, 0.02, &mut ws);
        assert_eq!(fresh, inplace);
    }
}
