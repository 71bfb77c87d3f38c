//! Cross-module audit: duality pairing and averaged-diffusivity bounds on
//! fields produced by a real simulation run.

use coagdiff_core::duality::{dual_pairing_audit, ContractionOptions, IntervalField, TimeMesh};
use coagdiff_core::grid::DiffusionProfile;
use coagdiff_core::kernels::KernelSpec;
use coagdiff_core::simulator::{
    run, InitialData, OutputConfig, ReactionScheme, SimConfig, SimTolerances, SpatialProfile,
};

fn tracked_run() -> coagdiff_core::simulator::RunOutput<f64> {
    let cfg = SimConfig::<f64> {
        kernel: KernelSpec::sum_power(1.0, 0.5).unwrap(),
        diffusion: DiffusionProfile::limit(1.0, 1.0, 1.0).unwrap(),
        n: 24,
        n_cells: 16,
        dt: 5e-3,
        t_end: 0.2,
        initial: InitialData::Geometric {
            density: SpatialProfile::Cosine { mean: 1.0, amplitude: 0.5, mode: 1 },
            ratio: 0.5,
        },
        scheme: ReactionScheme::ExplicitRk4,
        output: OutputConfig {
            stride: 1,
            moment_orders: vec![1.0, 2.0],
            lp_exponents: vec![],
            tail_index: Some(10),
            record_tail_moments: true,
            record_averaged_diffusivity: true,
            store_states: false,
        },
        tolerances: SimTolerances::default(),
    };
    let out = run(&cfg).unwrap();
    assert!(out.completed());
    out
}

#[test]
fn averaged_diffusivity_stays_in_tail_range() {
    let out = tracked_run();
    let rec = &out.record;
    let profile = DiffusionProfile::limit(1.0, 1.0, 1.0).unwrap();
    let i0 = rec.tail_index;
    let (lo, hi) = (profile.inf_from(i0), profile.sup_from(i0));
    let series = rec.averaged_diffusivity.as_ref().expect("recorded");
    for frame in series.frames() {
        for &v in frame {
            assert!(v >= lo * (1.0 - 1e-12) && v <= hi * (1.0 + 1e-12), "{v} not in [{lo}, {hi}]");
        }
    }
}

#[test]
fn tail_moments_sandwiched_by_full_moments() {
    let out = tracked_run();
    let rec = &out.record;
    let rho1 = &rec.moments[0].series;
    let tail1 = &rec.tail_moments[0].series;
    for (full, tail) in rho1.frames().iter().zip(tail1.frames()) {
        for (&f, &t) in full.iter().zip(tail) {
            assert!(t >= 0.0 && t <= f * (1.0 + 1e-12));
        }
    }
}

#[test]
fn pairing_audit_on_tail_mass_field() {
    // rho_1^{n,I} paired against the backward dual problem driven by its own
    // averaged diffusivity field M_1^{n,I}: the discrete integration-by-parts
    // identity must close to solver precision on real trajectory data.
    let out = tracked_run();
    let rec = &out.record;
    let grid = rec.final_state.grid().clone();
    let nt = rec.steps;
    let mesh = TimeMesh::new(nt, *rec.output_times.last().unwrap()).unwrap();

    let rho: Vec<Vec<f64>> = rec.tail_moments[0].series.frames().to_vec();
    assert_eq!(rho.len(), nt + 1);

    // Collocate the coefficient on intervals via the older frame.
    let m_frames: Vec<Vec<f64>> = rec
        .averaged_diffusivity
        .as_ref()
        .unwrap()
        .frames()[..nt]
        .to_vec();
    let coeff = IntervalField::from_frames(grid.clone(), mesh, m_frames).unwrap();
    let phi = IntervalField::from_fn(grid, mesh, |_, t, x| 1.0 + x * (1.0 - x) * (1.0 + t));

    let opts = ContractionOptions { residual_tol: 1e-13, ..ContractionOptions::default() };
    let audit = dual_pairing_audit(&rho, &coeff, &phi, &opts).unwrap();
    assert!(
        audit.gap.abs() <= 1e-9 * audit.scale,
        "gap {:e} vs scale {:e} (dual residual {:e})",
        audit.gap,
        audit.scale,
        audit.dual_residual_rel
    );
}
