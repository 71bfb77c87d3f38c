//! Acceptance suite: one test per criterion, each printing a pass/fail line.
//!
//! Run with `cargo test --test acceptance -- --nocapture` to see the lines;
//! thresholds are pinned here and in the experiment defaults.

use std::sync::OnceLock;
use std::time::Instant;

use coagdiff_core::coagulation::{gain, gain_fast, ConcentrationVector, FftConvolver};
use coagdiff_core::experiments::{
    run_experiment, weakform_sweep, ExperimentId, ExperimentOutput, WeakformSweepParams,
};
use coagdiff_core::kernels::KernelSpec;
use coagdiff_core::report::CheckOutcome;

fn announce(criterion: u32, what: &str, check: &CheckOutcome) {
    println!("ACCEPTANCE {criterion:2} {} — {what}", check.line());
    assert!(check.pass, "criterion {criterion}: {}", check.line());
}

fn find<'a>(out: &'a ExperimentOutput, name: &str) -> &'a CheckOutcome {
    out.checks
        .iter()
        .find(|c| c.name == name)
        .unwrap_or_else(|| panic!("missing check {name} in {}", out.id))
}

fn weakform() -> &'static ExperimentOutput {
    static CELL: OnceLock<ExperimentOutput> = OnceLock::new();
    CELL.get_or_init(|| {
        let start = Instant::now();
        let out = weakform_sweep(&WeakformSweepParams::default()).expect("sweep runs");
        println!("weak-form sweep: {:?}", start.elapsed());
        assert!(start.elapsed().as_secs() < 10, "criterion 1 runtime budget");
        out
    })
}

fn experiment(id: ExperimentId) -> ExperimentOutput {
    run_experiment(id, None).unwrap_or_else(|e| panic!("{} failed to run: {e}", id.name()))
}

fn e4() -> &'static ExperimentOutput {
    static CELL: OnceLock<ExperimentOutput> = OnceLock::new();
    CELL.get_or_init(|| {
        let start = Instant::now();
        let out = experiment(ExperimentId::E4);
        assert!(start.elapsed().as_secs() < 600, "criterion 6 runtime budget");
        out
    })
}

fn e5() -> &'static ExperimentOutput {
    static CELL: OnceLock<ExperimentOutput> = OnceLock::new();
    CELL.get_or_init(|| {
        let start = Instant::now();
        let out = experiment(ExperimentId::E5);
        assert!(start.elapsed().as_secs() < 60, "criterion 7 runtime budget");
        out
    })
}

#[test]
fn criterion_01_weak_form_identity() {
    let out = weakform();
    announce(1, "weak-form identity over kernel families", find(out, "identity_worst_rel"));
}

#[test]
fn criterion_02_mass_nullity() {
    let out = weakform();
    announce(2, "exact mass nullity of the coagulation operator", find(out, "mass_nullity_worst_rel"));
}

#[test]
fn criterion_03_mass_conservation_flow() {
    let start = Instant::now();
    let out = experiment(ExperimentId::E1);
    announce(3, "mass conservation along the D-R-D flow", find(&out, "mass_drift_rel"));
    announce(3, "mass never increases between outputs", find(&out, "mass_max_increase_rel"));
    assert!(start.elapsed().as_secs() < 120, "criterion 3 runtime budget");
}

#[test]
fn criterion_04_homogeneous_moment_oracles() {
    let start = Instant::now();
    let out = experiment(ExperimentId::E2);
    announce(4, "constant-kernel rho_0 oracle 1/(1+t)", find(&out, "rho0_error_abs"));
    announce(4, "multiplicative rho_2 oracle 1/(1-t)", find(&out, "rho2_error_rel"));
    assert!(start.elapsed().as_secs() < 120, "criterion 4 runtime budget");
}

#[test]
fn criterion_05_gelation_signature() {
    let start = Instant::now();
    let out = experiment(ExperimentId::E3);
    announce(5, "capped-mass deficit across truncations", find(&out, "capped_mass_deficit"));
    announce(5, "capped mass decreasing in n", find(&out, "min_capped_drop_per_doubling"));
    announce(5, "non-vanishing deficit trend", find(&out, "min_gap_retention"));
    assert!(start.elapsed().as_secs() < 300, "criterion 5 runtime budget");
}

#[test]
fn criterion_06_moment_propagation_bounded() {
    let out = e4();
    announce(6, "rho_2 space-time L^2 norms bounded in n", find(out, "rho2_l2_max_over_min"));
}

#[test]
fn criterion_07_duality_constant_q2() {
    let out = e5();
    announce(7, "every q=2 ratio at most 1 (fp slack 1e-12)", find(out, "max_ratio"));
    announce(7, "constant witness reaches 1 - 1e-6", find(out, "min_estimate"));
}

#[test]
fn criterion_08_energy_identity_sign() {
    let out = e5();
    announce(8, "pairing sign exact in 50/50 trials", find(out, "energy_sign_failures"));
    announce(8, "discrete energy identity closes", find(out, "energy_identity_worst_rel_gap"));
}

#[test]
fn criterion_09_contraction_solver() {
    let start = Instant::now();
    let out = experiment(ExperimentId::E6);
    announce(9, "contraction residual", find(&out, "residual_rel"));
    announce(9, "observed update ratio within bound", find(&out, "max_update_ratio"));
    announce(9, "fixed point independent of initial iterate", find(&out, "init_independence_spread"));
    assert!(start.elapsed().as_secs() < 60, "criterion 9 runtime budget");
}

#[test]
fn criterion_10_fast_gain_equivalence_and_speed() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4096);
    let n = 4096;
    let kernel = KernelSpec::sum_power(1.0, 0.5).unwrap();
    let c = ConcentrationVector::new((0..n).map(|_| rng.random::<f64>()).collect()).unwrap();

    // Correctness on every closed-form family at full size.
    for k in [
        KernelSpec::constant(2.0).unwrap(),
        kernel.clone(),
        KernelSpec::product_power(1.0, 0.25, 0.65).unwrap(),
        KernelSpec::multiplicative(),
    ] {
        let reference = gain(&c, &k).unwrap();
        let fast = gain_fast(&c, &k, &mut FftConvolver::new()).unwrap();
        let scale = reference.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
        let worst = reference
            .iter()
            .zip(fast.iter())
            .fold(0.0f64, |a, (r, f)| a.max((r - f).abs()));
        let check = CheckOutcome::le(
            format!("gain_fast_rel_error_{}", k.family_name()),
            worst / scale,
            1e-12,
        );
        announce(10, "fast gain matches brute force at n = 4096", &check);
    }

    // Speed floor: interleaved timings, medians, single worker.
    let mut conv = FftConvolver::new();
    let _ = gain_fast(&c, &kernel, &mut conv).unwrap(); // warm the plan cache
    let mut slow = Vec::new();
    let mut fast = Vec::new();
    for _ in 0..5 {
        let t0 = Instant::now();
        let r = gain(&c, &kernel).unwrap();
        slow.push(t0.elapsed().as_secs_f64());
        std::hint::black_box(r);

        let t0 = Instant::now();
        let r = gain_fast(&c, &kernel, &mut conv).unwrap();
        fast.push(t0.elapsed().as_secs_f64());
        std::hint::black_box(r);
    }
    slow.sort_by(f64::total_cmp);
    fast.sort_by(f64::total_cmp);
    let speedup = slow[2] / fast[2];
    let check = CheckOutcome::ge("gain_fast_speedup_n4096", speedup, 5.0);
    announce(10, "fast gain at least 5x faster than brute force", &check);
}

#[test]
fn criterion_11_low_species_sup_cascade() {
    let out = e4();
    announce(
        11,
        "sup of c_i (i <= 8) varies < 1% across n in {64,128,256}",
        find(out, "species_sup_max_spread"),
    );
}
