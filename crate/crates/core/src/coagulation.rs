//! The truncated coagulation operator `Q^n` and its weak formulation.
//!
//! For a concentration vector `c = (c_1..c_n)` at one spatial node,
//!
//! ```text
//! Q_i(c) = 1/2 sum_{j=1}^{i-1} a_{i-j,j} c_{i-j} c_j  -  c_i sum_{j=1}^{n-i} a_{i,j} c_j,
//! ```
//!
//! where the loss sum stops at `n - i` so that only pairs with `i + j <= n`
//! react. That truncation makes the operator exactly mass-null: for any test
//! sequence `phi`,
//!
//! ```text
//! sum_i phi_i Q_i(c) = 1/2 sum_{i+j<=n} a_{i,j} c_i c_j (phi_{i+j} - phi_i - phi_j),
//! ```
//!
//! which vanishes identically for `phi_i = i`.
//!
//! The module keeps two routes: a brute-force reference path (`gain`, `loss`,
//! [`q_truncated`]) with a fixed ascending summation order, and an accelerated
//! path for power-separable kernels ([`gain_fast`], [`CoagulationEval`]) built
//! on fast convolution of the factor sequences plus prefix sums for the loss
//! rates. The transform provider is injected through [`Convolver`] so the two
//! routes can always be checked against each other.

use std::collections::HashMap;
use std::ops::Deref;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::kernels::{KernelSpec, PowerTerm};
use crate::scalar::{FftScalar, Scalar};

/// Concentrations `c_1..c_n` at one spatial node; entries are nonnegative.
#[derive(Debug, Clone)]
pub struct ConcentrationVector<T> {
    c: Vec<T>,
}

impl<T: Scalar> ConcentrationVector<T> {
    pub fn new(c: Vec<T>) -> Result<Self> {
        if c.is_empty() {
            return Err(Error::InvalidParameter("concentration vector needs n >= 1".into()));
        }
        if let Some(&bad) = c.iter().find(|v| !(v.is_finite() && **v >= T::zero())) {
            return Err(Error::InvalidParameter(format!(
                "concentrations must be finite and nonnegative (got {bad})"
            )));
        }
        Ok(Self { c })
    }

    pub fn n(&self) -> usize {
        self.c.len()
    }
}

impl<T> Deref for ConcentrationVector<T> {
    type Target = [T];
    fn deref(&self) -> &[T] {
        &self.c
    }
}

/// Test sequence `phi_1..phi_n` for the weak formulation.
#[derive(Debug, Clone)]
pub struct TestSequence<T> {
    phi: Vec<T>,
}

impl<T: Scalar> TestSequence<T> {
    pub fn new(phi: Vec<T>) -> Result<Self> {
        if phi.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("test sequence entries must be finite".into()));
        }
        Ok(Self { phi })
    }
}

impl<T> Deref for TestSequence<T> {
    type Target = [T];
    fn deref(&self) -> &[T] {
        &self.phi
    }
}

// --- reference path -------------------------------------------------------

/// Gain `Q_i^+ = 1/2 sum_{j<i} a_{i-j,j} c_{i-j} c_j` into `out`.
///
/// Summation runs over ascending `j` so results are bit-reproducible.
pub fn gain_into<T: Scalar>(c: &[T], kernel: &KernelSpec<T>, out: &mut [T]) {
    let n = c.len();
    debug_assert_eq!(out.len(), n);
    let half = T::of(0.5);
    out[0] = T::zero();
    for i in 2..=n {
        let mut acc = T::zero();
        for j in 1..i {
            acc += kernel.eval_unchecked(i - j, j) * c[i - j - 1] * c[j - 1];
        }
        out[i - 1] = half * acc;
    }
}

/// Loss rate `lambda_i = sum_{j<=n-i} a_{i,j} c_j` into `out` (no `c_i` factor).
pub fn loss_rate_into<T: Scalar>(c: &[T], kernel: &KernelSpec<T>, out: &mut [T]) {
    let n = c.len();
    debug_assert_eq!(out.len(), n);
    for i in 1..=n {
        let mut acc = T::zero();
        for j in 1..=(n - i) {
            acc += kernel.eval_unchecked(i, j) * c[j - 1];
        }
        out[i - 1] = acc;
    }
}

/// Gain term of the truncated operator; entry 1 is zero.
pub fn gain<T: Scalar>(c: &ConcentrationVector<T>, kernel: &KernelSpec<T>) -> Result<Vec<T>> {
    kernel.check_range(c.n())?;
    let mut out = vec![T::zero(); c.n()];
    gain_into(c, kernel, &mut out);
    Ok(out)
}

/// Loss term `c_i sum_{j<=n-i} a_{i,j} c_j`; entry n is zero.
pub fn loss<T: Scalar>(c: &ConcentrationVector<T>, kernel: &KernelSpec<T>) -> Result<Vec<T>> {
    kernel.check_range(c.n())?;
    let mut out = vec![T::zero(); c.n()];
    loss_rate_into(c, kernel, &mut out);
    for (o, &ci) in out.iter_mut().zip(c.iter()) {
        *o *= ci;
    }
    Ok(out)
}

/// Truncated coagulation operator `Q^n = gain - loss`.
///
/// The mass functional `sum_i i Q_i` vanishes in exact arithmetic.
pub fn q_truncated<T: Scalar>(c: &ConcentrationVector<T>, kernel: &KernelSpec<T>) -> Result<Vec<T>> {
    let g = gain(c, kernel)?;
    let l = loss(c, kernel)?;
    Ok(g.iter().zip(l.iter()).map(|(&a, &b)| a - b).collect())
}

fn check_phi_len<T>(phi: &[T], n: usize) -> Result<()> {
    if phi.len() < n {
        return Err(Error::SizeMismatch { what: "test sequence", expected: n, got: phi.len() });
    }
    Ok(())
}

/// Left side of the weak formulation: `sum_i phi_i Q_i^n(c)`.
pub fn weak_form_lhs<T: Scalar>(
    c: &ConcentrationVector<T>,
    kernel: &KernelSpec<T>,
    phi: &TestSequence<T>,
) -> Result<T> {
    check_phi_len(phi, c.n())?;
    let q = q_truncated(c, kernel)?;
    Ok(q.iter().zip(phi.iter()).map(|(&qi, &pi)| pi * qi).sum())
}

/// Right side of the weak formulation:
/// `1/2 sum_{i+j<=n} a_{i,j} c_i c_j (phi_{i+j} - phi_i - phi_j)`.
pub fn weak_form_rhs<T: Scalar>(
    c: &ConcentrationVector<T>,
    kernel: &KernelSpec<T>,
    phi: &TestSequence<T>,
) -> Result<T> {
    check_phi_len(phi, c.n())?;
    kernel.check_range(c.n())?;
    let n = c.n();
    let half = T::of(0.5);
    let mut acc = T::zero();
    for i in 1..n {
        for j in 1..=(n - i) {
            let w = phi[i + j - 1] - phi[i - 1] - phi[j - 1];
            acc += kernel.eval_unchecked(i, j) * c[i - 1] * c[j - 1] * w;
        }
    }
    Ok(half * acc)
}

/// Magnitude of the summands entering both weak-form routes; identity checks
/// use it to normalize cancellation error.
pub fn weak_form_scale<T: Scalar>(
    c: &ConcentrationVector<T>,
    kernel: &KernelSpec<T>,
    phi: &TestSequence<T>,
) -> Result<T> {
    check_phi_len(phi, c.n())?;
    kernel.check_range(c.n())?;
    let n = c.n();
    let g = gain(c, kernel)?;
    let l = loss(c, kernel)?;
    let mut scale = T::zero();
    for i in 0..n {
        scale += phi[i].abs() * (g[i].abs() + l[i].abs());
    }
    let half = T::of(0.5);
    for i in 1..n {
        for j in 1..=(n - i) {
            let w = phi[i + j - 1].abs() + phi[i - 1].abs() + phi[j - 1].abs();
            scale += half * kernel.eval_unchecked(i, j) * c[i - 1].abs() * c[j - 1].abs() * w;
        }
    }
    Ok(scale)
}

// --- convolution providers ------------------------------------------------

/// Linear convolution provider injected into the accelerated gain path.
pub trait Convolver<T> {
    /// Writes the full linear convolution of `x` and `y` into `out`
    /// (`out.len() == x.len() + y.len() - 1` on return).
    fn convolve(&mut self, x: &[T], y: &[T], out: &mut Vec<T>);
}

/// Schoolbook O(n^2) convolution; the deterministic reference provider.
#[derive(Debug, Default)]
pub struct DirectConvolver;

impl<T: Scalar> Convolver<T> for DirectConvolver {
    fn convolve(&mut self, x: &[T], y: &[T], out: &mut Vec<T>) {
        out.clear();
        out.resize(x.len() + y.len() - 1, T::zero());
        for (a, &xv) in x.iter().enumerate() {
            for (b, &yv) in y.iter().enumerate() {
                out[a + b] += xv * yv;
            }
        }
    }
}

/// FFT-backed convolution with cached plans and zero padding to a power of
/// two at least `x.len() + y.len() - 1`.
///
/// Both real inputs ride in one complex transform (`x + i y`), whose spectra
/// are separated by conjugate symmetry.
type PlanPair<T> = (Arc<dyn Fft<T>>, Arc<dyn Fft<T>>);

pub struct FftConvolver<T: FftScalar> {
    planner: FftPlanner<T>,
    plans: HashMap<usize, PlanPair<T>>,
    packed: Vec<Complex<T>>,
    spectrum: Vec<Complex<T>>,
    scratch: Vec<Complex<T>>,
}

impl<T: FftScalar> Default for FftConvolver<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: FftScalar> FftConvolver<T> {
    pub fn new() -> Self {
        Self {
            planner: FftPlanner::new(),
            plans: HashMap::new(),
            packed: Vec::new(),
            spectrum: Vec::new(),
            scratch: Vec::new(),
        }
    }

    fn plans_for(&mut self, len: usize) -> PlanPair<T> {
        let planner = &mut self.planner;
        let (f, i) = self.plans.entry(len).or_insert_with(|| {
            (planner.plan_fft_forward(len), planner.plan_fft_inverse(len))
        });
        (f.clone(), i.clone())
    }
}

impl<T: FftScalar> Convolver<T> for FftConvolver<T> {
    fn convolve(&mut self, x: &[T], y: &[T], out: &mut Vec<T>) {
        let out_len = x.len() + y.len() - 1;
        let len = out_len.next_power_of_two();
        let (fwd, inv) = self.plans_for(len);

        self.packed.clear();
        self.packed.resize(len, Complex::new(T::zero(), T::zero()));
        for (k, &v) in x.iter().enumerate() {
            self.packed[k].re = v;
        }
        for (k, &v) in y.iter().enumerate() {
            self.packed[k].im = v;
        }
        let need = fwd.get_inplace_scratch_len().max(inv.get_inplace_scratch_len());
        self.scratch.resize(need, Complex::new(T::zero(), T::zero()));
        fwd.process_with_scratch(&mut self.packed, &mut self.scratch);

        // Z = X + iY with X, Y spectra of the real inputs:
        // X[k] = (Z[k] + conj(Z[-k]))/2, Y[k] = (Z[k] - conj(Z[-k]))/(2i).
        self.spectrum.clear();
        self.spectrum.resize(len, Complex::new(T::zero(), T::zero()));
        let half = T::of(0.5);
        for k in 0..len {
            let zk = self.packed[k];
            let zmk = self.packed[(len - k) % len].conj();
            let xs = (zk + zmk).scale(half);
            let ys = (zk - zmk) * Complex::new(T::zero(), -half);
            self.spectrum[k] = xs * ys;
        }
        inv.process_with_scratch(&mut self.spectrum, &mut self.scratch);

        let norm = T::one() / T::from_index(len);
        out.clear();
        out.extend(self.spectrum[..out_len].iter().map(|z| z.re * norm));
    }
}

// --- accelerated gain -----------------------------------------------------

/// Collapsed convolution plan for a separable kernel: each entry contributes
/// `factor * (w_p * w_q)` to the gain, where `w_e[j] = j^e c_j`.
struct ConvPlan<T> {
    factor: T,
    p_idx: usize,
    q_idx: usize,
}

/// Loss-rate plan: `lambda_i += coef * i^p * P_q(n - i)` with prefix sums
/// `P_q(m) = sum_{j<=m} j^q c_j`.
struct LossPlan<T> {
    coef: T,
    p_idx: usize,
    q_idx: usize,
}

fn exponent_index<T: Scalar>(exps: &mut Vec<T>, e: T) -> usize {
    if let Some(k) = exps.iter().position(|&x| x == e) {
        k
    } else {
        exps.push(e);
        exps.len() - 1
    }
}

/// Groups the power terms into the minimal set of convolutions: a symmetric
/// off-diagonal pair collapses into one convolution with doubled weight.
fn collapse_terms<T: Scalar>(
    terms: &[PowerTerm<T>],
) -> (Vec<T>, Vec<ConvPlan<T>>, Vec<LossPlan<T>>) {
    let mut exps: Vec<T> = Vec::new();
    let mut convs = Vec::new();
    let mut losses = Vec::new();
    let half = T::of(0.5);
    let mut used = vec![false; terms.len()];
    for (k, t) in terms.iter().enumerate() {
        losses.push(LossPlan {
            coef: t.coef,
            p_idx: exponent_index(&mut exps, t.p),
            q_idx: exponent_index(&mut exps, t.q),
        });
        if used[k] {
            continue;
        }
        used[k] = true;
        let p_idx = exponent_index(&mut exps, t.p);
        let q_idx = exponent_index(&mut exps, t.q);
        if t.p == t.q {
            convs.push(ConvPlan { factor: half * t.coef, p_idx, q_idx });
            continue;
        }
        let partner = terms
            .iter()
            .enumerate()
            .position(|(m, s)| !used[m] && s.p == t.q && s.q == t.p && s.coef == t.coef);
        match partner {
            Some(m) => {
                used[m] = true;
                convs.push(ConvPlan { factor: t.coef, p_idx, q_idx });
            }
            None => convs.push(ConvPlan { factor: half * t.coef, p_idx, q_idx }),
        }
    }
    (exps, convs, losses)
}

/// Accelerated gain for power-separable kernels: identical to [`gain`] up to
/// floating point, O(n log n) with an FFT provider.
pub fn gain_fast<T: Scalar>(
    c: &ConcentrationVector<T>,
    kernel: &KernelSpec<T>,
    conv: &mut dyn Convolver<T>,
) -> Result<Vec<T>> {
    kernel.check_range(c.n())?;
    let terms = kernel.separable_terms().ok_or(Error::NonSeparableKernel)?;
    let n = c.n();
    let (exps, convs, _) = collapse_terms(&terms);
    let tables = power_tables(&exps, n);
    let weighted: Vec<Vec<T>> = tables
        .iter()
        .map(|tab| (0..n).map(|j0| tab[j0 + 1] * c[j0]).collect())
        .collect();
    let mut out = vec![T::zero(); n];
    let mut buf = Vec::new();
    for plan in &convs {
        conv.convolve(&weighted[plan.p_idx], &weighted[plan.q_idx], &mut buf);
        // gain index i (1-based) reads convolution lag i-2.
        for i0 in 1..n {
            out[i0] += plan.factor * buf[i0 - 1];
        }
    }
    Ok(out)
}

fn power_tables<T: Scalar>(exps: &[T], n: usize) -> Vec<Vec<T>> {
    exps.iter()
        .map(|&e| {
            let mut tab = vec![T::zero(); n + 1];
            for (i, slot) in tab.iter_mut().enumerate().skip(1) {
                *slot = T::index_pow(i, e);
            }
            tab
        })
        .collect()
}

/// Reusable evaluator of the truncated operator for one `(kernel, n)` pair.
///
/// Separable kernels take the fast route (convolution gain, prefix-sum loss
/// rates); table kernels fall back to the reference sums. All scratch lives
/// in the evaluator, so one instance per worker gives lock-free parallelism.
pub struct CoagulationEval<T> {
    kernel: KernelSpec<T>,
    n: usize,
    path: Path<T>,
    rate_buf: Vec<T>,
}

enum Path<T> {
    Direct,
    Separable {
        tables: Vec<Vec<T>>,
        convs: Vec<ConvPlan<T>>,
        losses: Vec<LossPlan<T>>,
        provider: Box<dyn Convolver<T> + Send>,
        weighted: Vec<Vec<T>>,
        prefix: Vec<Vec<T>>,
        conv_buf: Vec<T>,
    },
}

impl<T: Scalar> CoagulationEval<T> {
    /// Builds an evaluator with an injected convolution provider; falls back
    /// to the reference path when the kernel is not separable.
    pub fn new(
        kernel: KernelSpec<T>,
        n: usize,
        provider: Option<Box<dyn Convolver<T> + Send>>,
    ) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParameter("evaluator needs n >= 1".into()));
        }
        kernel.check_range(n)?;
        let path = match (kernel.separable_terms(), provider) {
            (Some(terms), Some(provider)) => {
                let (exps, convs, losses) = collapse_terms(&terms);
                let tables = power_tables(&exps, n);
                let m = exps.len();
                Path::Separable {
                    tables,
                    convs,
                    losses,
                    provider,
                    weighted: vec![vec![T::zero(); n]; m],
                    prefix: vec![vec![T::zero(); n + 1]; m],
                    conv_buf: Vec::new(),
                }
            }
            _ => Path::Direct,
        };
        Ok(Self { kernel, n, path, rate_buf: vec![T::zero(); n] })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn kernel(&self) -> &KernelSpec<T> {
        &self.kernel
    }

    /// True when the evaluator runs the accelerated separable route.
    pub fn is_fast(&self) -> bool {
        matches!(self.path, Path::Separable { .. })
    }

    fn refresh_caches(&mut self, c: &[T]) {
        if let Path::Separable { tables, weighted, prefix, .. } = &mut self.path {
            for (e, tab) in tables.iter().enumerate() {
                let w = &mut weighted[e];
                let p = &mut prefix[e];
                p[0] = T::zero();
                for j0 in 0..c.len() {
                    w[j0] = tab[j0 + 1] * c[j0];
                    p[j0 + 1] = p[j0] + w[j0];
                }
            }
        }
    }

    /// Gain into `out`; requires `c.len() == n`.
    pub fn gain_into(&mut self, c: &[T], out: &mut [T]) {
        assert_eq!(c.len(), self.n);
        assert_eq!(out.len(), self.n);
        match &self.path {
            Path::Direct => gain_into(c, &self.kernel, out),
            Path::Separable { .. } => {
                self.refresh_caches(c);
                self.fast_gain(out);
            }
        }
    }

    /// Loss rates `lambda_i` into `out`.
    pub fn loss_rate_into(&mut self, c: &[T], out: &mut [T]) {
        assert_eq!(c.len(), self.n);
        assert_eq!(out.len(), self.n);
        match &mut self.path {
            Path::Direct => loss_rate_into(c, &self.kernel, out),
            Path::Separable { .. } => {
                self.refresh_caches(c);
                self.loss_from_prefix(out);
            }
        }
    }

    fn loss_from_prefix(&self, out: &mut [T]) {
        let n = self.n;
        if let Path::Separable { tables, losses, prefix, .. } = &self.path {
            out.fill(T::zero());
            for plan in losses {
                let pow = &tables[plan.p_idx];
                let pre = &prefix[plan.q_idx];
                for i in 1..=n {
                    out[i - 1] += plan.coef * pow[i] * pre[n - i];
                }
            }
        }
    }

    /// Truncated operator `Q = gain - c .* lambda` into `out`.
    pub fn q_into(&mut self, c: &[T], out: &mut [T]) {
        assert_eq!(c.len(), self.n);
        assert_eq!(out.len(), self.n);
        let mut rate = std::mem::take(&mut self.rate_buf);
        rate.resize(self.n, T::zero());
        match &self.path {
            Path::Direct => {
                gain_into(c, &self.kernel, out);
                loss_rate_into(c, &self.kernel, &mut rate);
            }
            Path::Separable { .. } => {
                self.refresh_caches(c);
                self.fast_gain(out);
                self.loss_from_prefix(&mut rate);
            }
        }
        for i in 0..self.n {
            out[i] -= c[i] * rate[i];
        }
        self.rate_buf = rate;
    }

    fn fast_gain(&mut self, out: &mut [T]) {
        out.fill(T::zero());
        let n = self.n;
        if let Path::Separable { convs, provider, weighted, conv_buf, .. } = &mut self.path {
            for plan in convs.iter() {
                provider.convolve(&weighted[plan.p_idx], &weighted[plan.q_idx], conv_buf);
                for i0 in 1..n {
                    out[i0] += plan.factor * conv_buf[i0 - 1];
                }
            }
        }
    }
}

impl<T: FftScalar> CoagulationEval<T> {
    /// Evaluator with the default provider: FFT for separable kernels once
    /// `n` is large enough to pay for transforms, direct otherwise.
    pub fn with_default_provider(kernel: KernelSpec<T>, n: usize) -> Result<Self> {
        let provider: Box<dyn Convolver<T> + Send> = if n >= 64 {
            Box::new(FftConvolver::new())
        } else {
            Box::new(DirectConvolver)
        };
        Self::new(kernel, n, Some(provider))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    type K = KernelSpec<f64>;

    fn cv(v: &[f64]) -> ConcentrationVector<f64> {
        ConcentrationVector::new(v.to_vec()).unwrap()
    }

    fn random_c(n: usize, rng: &mut ChaCha8Rng) -> ConcentrationVector<f64> {
        ConcentrationVector::new((0..n).map(|_| rng.random::<f64>()).collect()).unwrap()
    }

    #[test]
    fn gain_hand_values() {
        let k = K::constant(1.0).unwrap();
        assert_eq!(gain(&cv(&[1.0, 0.0]), &k).unwrap(), vec![0.0, 0.5]);
        assert_eq!(gain(&cv(&[1.0, 1.0, 0.0]), &k).unwrap(), vec![0.0, 0.5, 1.0]);
    }

    #[test]
    fn loss_hand_values() {
        let k = K::constant(1.0).unwrap();
        assert_eq!(loss(&cv(&[1.0, 0.0]), &k).unwrap(), vec![1.0, 0.0]);
        assert_eq!(loss(&cv(&[1.0, 1.0, 0.0]), &k).unwrap(), vec![2.0, 1.0, 0.0]);
        assert_eq!(loss(&cv(&[0.0, 0.0, 0.0]), &k).unwrap(), vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn q_hand_values_and_mass_nullity() {
        let k = K::constant(1.0).unwrap();
        let q = q_truncated(&cv(&[1.0, 0.0]), &k).unwrap();
        assert_eq!(q, vec![-1.0, 0.5]);
        assert_eq!(1.0 * q[0] + 2.0 * q[1], 0.0);

        let q = q_truncated(&cv(&[1.0, 1.0, 0.0]), &k).unwrap();
        assert_eq!(q, vec![-2.0, -0.5, 1.0]);
        assert_eq!(q[0] + 2.0 * q[1] + 3.0 * q[2], 0.0);
    }

    #[test]
    fn mass_nullity_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let k = K::sum_power(2.0, 0.7).unwrap();
        for _ in 0..20 {
            let c = random_c(128, &mut rng);
            let g = gain(&c, &k).unwrap();
            let l = loss(&c, &k).unwrap();
            let mass: f64 =
                (1..=128).map(|i| i as f64 * (g[i - 1] - l[i - 1])).sum();
            let scale: f64 = (1..=128).map(|i| i as f64 * (g[i - 1] + l[i - 1])).sum();
            assert!(mass.abs() <= 1e-10 * scale, "mass {mass:e} vs scale {scale:e}");
        }
    }

    #[test]
    fn weak_form_hand_values() {
        let k = K::constant(1.0).unwrap();
        let c = cv(&[1.0, 0.0]);
        let phi = TestSequence::new(vec![1.0, 1.0]).unwrap();
        assert_eq!(weak_form_lhs(&c, &k, &phi).unwrap(), -0.5);
        assert_eq!(weak_form_rhs(&c, &k, &phi).unwrap(), -0.5);
    }

    #[test]
    fn weak_form_mass_test_sequence_vanishes() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let k = K::product_power(1.0, 0.3, 0.5).unwrap();
        for n in [8usize, 64] {
            let c = random_c(n, &mut rng);
            let phi = TestSequence::new((1..=n).map(|i| i as f64).collect()).unwrap();
            let scale = weak_form_scale(&c, &k, &phi).unwrap();
            assert!(weak_form_lhs(&c, &k, &phi).unwrap().abs() <= 1e-12 * scale);
            assert!(weak_form_rhs(&c, &k, &phi).unwrap().abs() <= 1e-12 * scale);
        }
    }

    #[test]
    fn weak_form_identity_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let k = K::sum_power(1.0, 0.5).unwrap();
        for _ in 0..25 {
            let n = 64;
            let c = random_c(n, &mut rng);
            let phi = TestSequence::new((0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect())
                .unwrap();
            let lhs = weak_form_lhs(&c, &k, &phi).unwrap();
            let rhs = weak_form_rhs(&c, &k, &phi).unwrap();
            let scale = weak_form_scale(&c, &k, &phi).unwrap();
            assert!((lhs - rhs).abs() <= 1e-10 * scale);
        }
    }

    #[test]
    fn fft_convolver_matches_direct() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in [1usize, 2, 5, 17, 64, 130] {
            let x: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
            let y: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
            let mut direct = Vec::new();
            DirectConvolver.convolve(&x, &y, &mut direct);
            let mut fft_out = Vec::new();
            FftConvolver::new().convolve(&x, &y, &mut fft_out);
            let scale = direct.iter().fold(1.0f64, |a: f64, &b| a.max(b.abs()));
            for (d, f) in direct.iter().zip(fft_out.iter()) {
                assert!((d - f).abs() <= 1e-13 * scale);
            }
        }
    }

    #[test]
    fn gain_fast_constant_hand_value() {
        let k = K::constant(2.0).unwrap();
        let c = cv(&[1.0, 1.0, 1.0, 1.0]);
        let g = gain_fast(&c, &k, &mut DirectConvolver).unwrap();
        assert_eq!(g, vec![0.0, 1.0, 2.0, 3.0]);
    }

    #[test]
    fn gain_fast_matches_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let kernels: Vec<K> = vec![
            K::constant(2.0).unwrap(),
            K::sum_power(1.0, 0.5).unwrap(),
            K::product_power(1.3, 0.25, 0.65).unwrap(),
            K::multiplicative(),
        ];
        for k in &kernels {
            for n in [2usize, 3, 16, 512] {
                let c = random_c(n, &mut rng);
                let reference = gain(&c, k).unwrap();
                let scale = reference.iter().fold(0.0f64, |a, &b| a.max(b.abs())).max(1e-300);
                let mut fftc = FftConvolver::new();
                let fast = gain_fast(&c, k, &mut fftc).unwrap();
                for (r, f) in reference.iter().zip(fast.iter()) {
                    assert!((r - f).abs() <= 1e-12 * scale, "{} n={n}", k.family_name());
                }
            }
        }
    }

    #[test]
    fn gain_fast_zero_input() {
        let k = K::sum_power(1.0, 0.5).unwrap();
        let c = cv(&[0.0; 16]);
        let g = gain_fast(&c, &k, &mut FftConvolver::new()).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gain_fast_rejects_table() {
        let k = K::table(2, vec![1.0, 1.0, 1.0, 1.0]).unwrap();
        let c = cv(&[1.0, 1.0]);
        assert!(matches!(
            gain_fast(&c, &k, &mut DirectConvolver),
            Err(Error::NonSeparableKernel)
        ));
    }

    #[test]
    fn evaluator_matches_reference_ops() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let kernels: Vec<K> = vec![
            K::sum_power(1.0, 0.5).unwrap(),
            K::multiplicative(),
            K::table(48, {
                // random symmetric table
                let mut m = vec![0.0; 48 * 48];
                for i in 0..48 {
                    for j in 0..=i {
                        let v = rng.random::<f64>();
                        m[i * 48 + j] = v;
                        m[j * 48 + i] = v;
                    }
                }
                m
            })
            .unwrap(),
        ];
        for k in &kernels {
            let n = 48;
            let c = random_c(n, &mut rng);
            let mut ev = CoagulationEval::with_default_provider(k.clone(), n).unwrap();
            let mut q_fast = vec![0.0; n];
            ev.q_into(&c, &mut q_fast);
            let q_ref = q_truncated(&c, k).unwrap();
            let scale = q_ref.iter().fold(0.0f64, |a, &b| a.max(b.abs())).max(1e-300);
            for (a, b) in q_ref.iter().zip(q_fast.iter()) {
                assert!((a - b).abs() <= 1e-12 * scale, "{}", k.family_name());
            }
        }
    }

    #[test]
    fn truncation_locality() {
        // c supported on the first n/2 entries: padding the truncation from n
        // to 2n must leave Q_i unchanged for i <= n/2.
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let n = 64;
        let mut base = vec![0.0; n];
        for v in base.iter_mut().take(n / 2) {
            *v = rng.random::<f64>();
        }
        let mut padded = base.clone();
        padded.resize(2 * n, 0.0);
        let k = K::sum_power(1.0, 0.5).unwrap();
        let q_n = q_truncated(&cv(&base), &k).unwrap();
        let q_2n = q_truncated(&cv(&padded), &k).unwrap();
        for i0 in 0..(n / 2) {
            assert_eq!(q_n[i0], q_2n[i0], "entry {}", i0 + 1);
        }
    }
}
