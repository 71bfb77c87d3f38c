//! Parabolic duality estimates and the non-divergence dual solver.
//!
//! Everything here lives on one discrete collocation: backward Euler in time
//! with the summation-by-parts Neumann Laplacian in space. Forcings and
//! coefficients are sampled once per time interval (piecewise constant in
//! time); the interval value drives the implicit step to the newer frame, and
//! space-time L^q norms use the matching rectangle rule. On that collocation
//! the Hilbert-space bound `K_{m,2} <= 1` holds exactly: squaring
//! `dv/dt - m L v = f` and summing gives
//!
//! ```text
//! |dv/dt|^2 + m^2 |L v|^2 - 2 m <dv/dt, L v> = |f|^2,
//! ```
//!
//! and the pairing `<dv/dt, L v>` telescopes to
//! `-1/2 |grad v(T)|^2 - 1/2 sum_k |grad (v^{k+1} - v^k)|^2 <= 0`.
//!
//! The constant estimator reports lower bounds of the discrete constant
//! only: spatially uniform forcing realizes ratio 1 exactly, random smooth
//! and rough forcings probe above it, and for `q = 2` a power iteration on
//! the quadratic form sharpens the search. No claim is made about the
//! continuum constant for `q != 2`.
//!
//! The dual solver treats `dv/dt - M(t,x) L v = f` with discontinuous
//! `M in [a, b]` as a perturbation of the constant-coefficient problem with
//! `m = (a+b)/2` and iterates that solve to a fixed point; the update ratio
//! observed in the `Z`-norm `(|dv/dt|_q^q + m^q |L v|_q^q)^{1/q}` echoes the
//! contraction factor `(b-a)/2 * K_{m,q} / m`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::{Grid1D, TriWorkspace};
use crate::scalar::Scalar;

// --- time mesh and interval fields -----------------------------------------

/// Uniform time mesh with `nt` backward-Euler intervals covering `[0, T]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeMesh<T> {
    nt: usize,
    dt: T,
}

impl<T: Scalar> TimeMesh<T> {
    pub fn new(nt: usize, t_end: T) -> Result<Self> {
        if nt == 0 || !(t_end > T::zero() && t_end.is_finite()) {
            return Err(Error::InvalidParameter("time mesh needs nt >= 1 and T > 0".into()));
        }
        Ok(Self { nt, dt: t_end / T::from_index(nt) })
    }

    pub fn nt(&self) -> usize {
        self.nt
    }

    pub fn dt(&self) -> T {
        self.dt
    }

    pub fn t_end(&self) -> T {
        self.dt * T::from_index(self.nt)
    }
}

/// Space-time field sampled once per interval (piecewise constant in time).
#[derive(Debug, Clone)]
pub struct IntervalField<T> {
    grid: Grid1D<T>,
    mesh: TimeMesh<T>,
    frames: Vec<Vec<T>>,
}

impl<T: Scalar> IntervalField<T> {
    pub fn zeros(grid: Grid1D<T>, mesh: TimeMesh<T>) -> Self {
        let frames = vec![vec![T::zero(); grid.n_cells()]; mesh.nt()];
        Self { grid, mesh, frames }
    }

    /// Builds a field from `(interval index, interval midpoint time, x)`.
    pub fn from_fn(
        grid: Grid1D<T>,
        mesh: TimeMesh<T>,
        f: impl Fn(usize, T, T) -> T,
    ) -> Self {
        let half = T::of(0.5);
        let frames = (0..mesh.nt())
            .map(|k| {
                let t_mid = (T::from_index(k) + half) * mesh.dt();
                (0..grid.n_cells()).map(|j| f(k, t_mid, grid.cell_center(j))).collect()
            })
            .collect();
        Self { grid, mesh, frames }
    }

    pub fn from_frames(grid: Grid1D<T>, mesh: TimeMesh<T>, frames: Vec<Vec<T>>) -> Result<Self> {
        if frames.len() != mesh.nt() {
            return Err(Error::SizeMismatch {
                what: "interval frames",
                expected: mesh.nt(),
                got: frames.len(),
            });
        }
        for f in &frames {
            if f.len() != grid.n_cells() {
                return Err(Error::SizeMismatch {
                    what: "interval frame",
                    expected: grid.n_cells(),
                    got: f.len(),
                });
            }
        }
        Ok(Self { grid, mesh, frames })
    }

    pub fn grid(&self) -> &Grid1D<T> {
        &self.grid
    }

    pub fn mesh(&self) -> TimeMesh<T> {
        self.mesh
    }

    pub fn frame(&self, k: usize) -> &[T] {
        &self.frames[k]
    }

    pub fn frames(&self) -> &[Vec<T>] {
        &self.frames
    }

    pub fn min_value(&self) -> T {
        self.frames.iter().flatten().fold(T::infinity(), |a, &b| a.min(b))
    }

    pub fn max_value(&self) -> T {
        self.frames.iter().flatten().fold(T::neg_infinity(), |a, &b| a.max(b))
    }

    /// Rectangle-rule space-time L^q norm `(sum_k dt sum_j |.|^q h)^(1/q)`.
    pub fn lq_norm(&self, q: T) -> T {
        let mut acc = T::zero();
        for f in &self.frames {
            acc += f.iter().fold(T::zero(), |a, &b| a + b.abs().powf(q));
        }
        (acc * self.mesh.dt() * self.grid.h()).powf(q.recip())
    }

    /// Reverses the interval order (time reflection `t -> T - t`).
    pub fn time_reversed(&self) -> Self {
        let mut frames = self.frames.clone();
        frames.reverse();
        Self { grid: self.grid.clone(), mesh: self.mesh, frames }
    }
}

fn check_q<T: Scalar>(q: T) -> Result<()> {
    if !(q > T::one() && q.is_finite()) {
        return Err(Error::InvalidExponent { p: q.to_f64().unwrap_or(f64::NAN) });
    }
    Ok(())
}

// --- constant-coefficient forced solve --------------------------------------

/// Backward-Euler solution of `dv/dt - m L v = f` with `v(0) = 0`, plus the
/// derived interval fields entering the duality ratio.
pub struct ForcedHeatSolution<T> {
    /// Frames `v^0..v^nt` (`v^0 = 0`).
    pub v: Vec<Vec<T>>,
    /// Difference quotients `(v^{k+1} - v^k)/dt` per interval.
    pub dv_dt: IntervalField<T>,
    /// `L v^{k+1}` per interval (new-frame collocation).
    pub lap_v: IntervalField<T>,
}

/// Solves `dv/dt - m L v = f` by backward Euler on the forcing's mesh.
pub fn solve_heat_forced<T: Scalar>(m: T, f: &IntervalField<T>) -> Result<ForcedHeatSolution<T>> {
    if !(m > T::zero() && m.is_finite()) {
        return Err(Error::InvalidParameter("heat solve needs m > 0".into()));
    }
    let grid = f.grid().clone();
    let mesh = f.mesh();
    let nt = mesh.nt();
    let dt = mesh.dt();
    let nc = grid.n_cells();
    let mut ws = TriWorkspace::new(nc );
    let mut v = Vec::with_capacity(nt + 1);
    v.push(vec![T::zero(); nc]);
    let mut dv = Vec::with_capacity(nt);
    let mut lap = Vec::with_capacity(nt);
    for k in 0..nt {
        let mut next = v[k].clone();
        for (slot, &fv) in next.iter_mut().zip(f.frame(k)) {
            *slot += dt * fv;
        }
        grid.heat_step_be_inplace(&mut next, m, dt, &mut ws);
        let inv_dt = dt.recip();
        dv.push(next.iter().zip(v[k].iter()).map(|(&a, &b)| (a - b) * inv_dt).collect());
        let mut l = vec![T::zero(); nc];
        grid.laplacian_into(&next, &mut l);
        lap.push(l);
        v.push(next);
    }
    Ok(ForcedHeatSolution {
        v,
        dv_dt: IntervalField::from_frames(grid.clone(), mesh, dv)?,
        lap_v: IntervalField::from_frames(grid, mesh, lap)?,
    })
}

/// Duality ratio `(|dv/dt|_q^q + m^q |L v|_q^q)^{1/q} / |f|_q`.
pub fn k_ratio<T: Scalar>(m: T, q: T, f: &IntervalField<T>) -> Result<T> {
    check_q(q)?;
    let denom = f.lq_norm(q);
    if denom == T::zero() {
        return Err(Error::ZeroForcing);
    }
    let sol = solve_heat_forced(m, f)?;
    Ok(z_norm_of(&sol.dv_dt, &sol.lap_v, m, q) / denom)
}

/// The `Z`-norm `(|dv|_q^q + m^q |lap|_q^q)^{1/q}` of a pair of interval fields.
fn z_norm_of<T: Scalar>(dv: &IntervalField<T>, lap: &IntervalField<T>, m: T, q: T) -> T {
    let a = dv.lq_norm(q).powf(q);
    let b = lap.lq_norm(q).powf(q);
    (a + m.powf(q) * b).powf(q.recip())
}

// --- energy identity ---------------------------------------------------------

/// Discrete audit of the pairing `int dv/dt L v <= 0`.
#[derive(Debug, Clone, Copy)]
pub struct EnergyReport<T> {
    /// `sum_k dt sum_j (dv/dt) (L v^{k+1}) h`.
    pub pairing: T,
    /// `-1/2 |grad v(T)|^2`.
    pub boundary_term: T,
    /// `-1/2 sum_k |grad (v^{k+1} - v^k)|^2` (backward-Euler dissipation).
    pub dissipation: T,
    /// `pairing - boundary_term - dissipation`; pure roundoff.
    pub identity_gap: T,
    /// Whether `pairing <= 0`.
    pub sign_ok: bool,
}

/// Verifies the energy identity behind `K_{m,2} <= 1` on one forcing.
pub fn energy_identity_check<T: Scalar>(m: T, f: &IntervalField<T>) -> Result<EnergyReport<T>> {
    let sol = solve_heat_forced(m, f)?;
    let grid = f.grid();
    let mesh = f.mesh();
    let dt = mesh.dt();
    let h = grid.h();
    let half = T::of(0.5);

    let mut pairing = T::zero();
    let mut dissipation = T::zero();
    for k in 0..mesh.nt() {
        let dv = sol.dv_dt.frame(k);
        let lv = sol.lap_v.frame(k);
        let mut cell = T::zero();
        for (a, b) in dv.iter().zip(lv.iter()) {
            cell += *a * *b;
        }
        pairing += cell * h * dt;
        let delta: Vec<T> =
            sol.v[k + 1].iter().zip(sol.v[k].iter()).map(|(&a, &b)| a - b).collect();
        dissipation -= half * grid.gradient_energy(&delta);
    }
    let boundary_term = -half * grid.gradient_energy(&sol.v[mesh.nt()]);
    let identity_gap = pairing - boundary_term - dissipation;
    Ok(EnergyReport {
        pairing,
        boundary_term,
        dissipation,
        identity_gap,
        sign_ok: pairing <= T::zero(),
    })
}

// --- K estimation -------------------------------------------------------------

/// Sampler configuration for [`estimate_k`].
#[derive(Debug, Clone, Copy)]
pub struct KSamplerConfig<T> {
    pub nx: usize,
    pub nt: usize,
    pub t_end: T,
    /// Random smooth forcings (low-order cosine combinations).
    pub smooth_samples: usize,
    /// Random piecewise-constant forcings.
    pub rough_samples: usize,
    /// Power-iteration refinements on the quadratic form (`q = 2` only).
    pub power_iterations: usize,
    pub seed: u64,
}

impl<T: Scalar> Default for KSamplerConfig<T> {
    fn default() -> Self {
        Self {
            nx: 32,
            nt: 64,
            t_end: T::one(),
            smooth_samples: 60,
            rough_samples: 40,
            power_iterations: 30,
            seed: 1,
        }
    }
}

/// Lower-bound estimate of the discrete duality constant.
#[derive(Debug, Clone)]
pub struct KEstimate<T> {
    pub m: T,
    pub q: T,
    pub nx: usize,
    pub nt: usize,
    pub t_end: T,
    /// Largest observed ratio; a lower bound of the discrete constant.
    pub estimate: T,
    /// Every sampled ratio (constant witness first).
    pub ratios: Vec<T>,
}

fn random_smooth_forcing<T: Scalar>(
    grid: &Grid1D<T>,
    mesh: TimeMesh<T>,
    rng: &mut ChaCha8Rng,
) -> IntervalField<T> {
    let t_end = mesh.t_end();
    let modes: Vec<(T, usize, usize, T)> = (0..4)
        .map(|k| {
            (
                T::of(rng.random::<f64>() * 2.0 - 1.0),
                k,
                rng.random_range(0..4usize),
                T::of(rng.random::<f64>() * std::f64::consts::TAU),
            )
        })
        .collect();
    let pi = T::of(std::f64::consts::PI);
    let two = T::of(2.0);
    IntervalField::from_fn(grid.clone(), mesh, |_, t, x| {
        modes.iter().fold(T::zero(), |acc, &(amp, kx, kt, phase)| {
            let space = (pi * T::from_index(kx) * x).cos();
            let time = (two * pi * T::from_index(kt) * t / t_end + phase).cos();
            acc + amp * space * time
        })
    })
}

fn random_rough_forcing<T: Scalar>(
    grid: &Grid1D<T>,
    mesh: TimeMesh<T>,
    rng: &mut ChaCha8Rng,
) -> IntervalField<T> {
    let frames = (0..mesh.nt())
        .map(|_| {
            (0..grid.n_cells()).map(|_| T::of(rng.random::<f64>() * 2.0 - 1.0)).collect()
        })
        .collect();
    IntervalField::from_frames(grid.clone(), mesh, frames).expect("shapes by construction")
}

/// Forward map of the `q = 2` quadratic form: forcing to `(dv/dt, m L v)`,
/// flattened in interval-major order.
fn q2_forward<T: Scalar>(m: T, f: &IntervalField<T>) -> Result<(Vec<T>, Vec<T>)> {
    let sol = solve_heat_forced(m, f)?;
    let mut y1 = Vec::new();
    let mut y2 = Vec::new();
    for k in 0..f.mesh().nt() {
        y1.extend_from_slice(sol.dv_dt.frame(k));
        y2.extend(sol.lap_v.frame(k).iter().map(|&v| m * v));
    }
    Ok((y1, y2))
}

/// Adjoint of [`q2_forward`] in the Euclidean pairing; the transpose of the
/// lower-triangular time-stepping recurrence runs backward in time.
fn q2_adjoint<T: Scalar>(
    m: T,
    grid: &Grid1D<T>,
    mesh: TimeMesh<T>,
    y1: &[T],
    y2: &[T],
) -> Vec<T> {
    let nt = mesh.nt();
    let nc = grid.n_cells();
    let dt = mesh.dt();
    let inv_dt = dt.recip();
    let mut ws = TriWorkspace::new(nc);
    let mut lbuf = vec![T::zero(); nc];
    // w^j for j = 1..=nt, stored at j-1:
    // w^j = z1^{j-1}/dt + m L z2^{j-1} - z1^j/dt (last term absent at j = nt).
    let mut w = vec![vec![T::zero(); nc]; nt];
    for j in 1..=nt {
        let z1_prev = &y1[(j - 1) * nc..j * nc];
        let z2_prev = &y2[(j - 1) * nc..j * nc];
        grid.laplacian_into(z2_prev, &mut lbuf);
        let row = &mut w[j - 1];
        for i in 0..nc {
            row[i] = z1_prev[i] * inv_dt + m * lbuf[i];
        }
        if j < nt {
            let z1_next = &y1[j * nc..(j + 1) * nc];
            for i in 0..nc {
                row[i] -= z1_next[i] * inv_dt;
            }
        }
    }
    // p^i = G (w^{i+1} + p^{i+1}), i = nt-1 .. 0, with G = (I - dt m L)^{-1}.
    let mut p = vec![T::zero(); nc];
    let mut out = vec![T::zero(); nt * nc];
    for i in (0..nt).rev() {
        for (slot, &wv) in p.iter_mut().zip(w[i].iter()) {
            *slot += wv;
        }
        grid.heat_step_be_inplace(&mut p, m, dt, &mut ws);
        for (slot, &pv) in out[i * nc..(i + 1) * nc].iter_mut().zip(p.iter()) {
            *slot = dt * pv;
        }
    }
    out
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b.iter()).map(|(&x, &y)| x * y).sum()
}

fn norm2<T: Scalar>(a: &[T]) -> T {
    dot(a, a).sqrt()
}

/// Estimates the discrete duality constant from below by maximizing the
/// ratio over random forcings, plus power iteration for `q = 2`.
pub fn estimate_k<T: Scalar>(m: T, q: T, cfg: &KSamplerConfig<T>) -> Result<KEstimate<T>> {
    check_q(q)?;
    if !(m > T::zero() && m.is_finite()) {
        return Err(Error::InvalidParameter("estimate needs m > 0".into()));
    }
    let grid = if cfg.nx == 1 { Grid1D::single_cell() } else { Grid1D::new(cfg.nx)? };
    let mesh = TimeMesh::new(cfg.nt, cfg.t_end)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut ratios = Vec::new();

    // Constant-forcing witness: dv/dt = f and L v = 0, ratio exactly 1.
    let witness = IntervalField::from_fn(grid.clone(), mesh, |_, _, _| T::one());
    ratios.push(k_ratio(m, q, &witness)?);

    for _ in 0..cfg.smooth_samples {
        let f = random_smooth_forcing(&grid, mesh, &mut rng);
        match k_ratio(m, q, &f) {
            Ok(r) => ratios.push(r),
            Err(Error::ZeroForcing) => continue,
            Err(e) => return Err(e),
        }
    }
    for _ in 0..cfg.rough_samples {
        let f = random_rough_forcing(&grid, mesh, &mut rng);
        ratios.push(k_ratio(m, q, &f)?);
    }

    if q == T::of(2.0) && cfg.power_iterations > 0 {
        // Power iteration on S^T S; every iterate is itself a valid forcing,
        // so its ratio is a sound sample.
        let nc = grid.n_cells();
        let mut x: Vec<T> =
            (0..mesh.nt() * nc).map(|_| T::of(rng.random::<f64>() * 2.0 - 1.0)).collect();
        let nx = norm2(&x);
        for v in x.iter_mut() {
            *v /= nx;
        }
        for _ in 0..cfg.power_iterations {
            let f = IntervalField::from_frames(
                grid.clone(),
                mesh,
                x.chunks(nc).map(|c| c.to_vec()).collect(),
            )?;
            let (y1, y2) = q2_forward(m, &f)?;
            let num = (dot(&y1, &y1) + dot(&y2, &y2)).sqrt();
            let den = norm2(&x);
            ratios.push(num / den);
            let next = q2_adjoint(m, &grid, mesh, &y1, &y2);
            let nn = norm2(&next);
            if nn == T::zero() {
                break;
            }
            x = next;
            for v in x.iter_mut() {
                *v /= nn;
            }
        }
    }

    let estimate = ratios.iter().fold(T::zero(), |a, &b| a.max(b));
    Ok(KEstimate { m, q, nx: cfg.nx, nt: cfg.nt, t_end: cfg.t_end, estimate, ratios })
}

// --- closeness ---------------------------------------------------------------

/// Verdict on the closeness condition `((b-a)/(b+a)) K_{(a+b)/2, p'} < 1`.
#[derive(Debug, Clone)]
pub struct ClosenessReport<T> {
    pub a: T,
    pub b: T,
    pub p: T,
    pub p_conjugate: T,
    pub k_estimate: KEstimate<T>,
    /// `((b-a)/(b+a)) * K_hat`.
    pub lhs: T,
    pub satisfied: bool,
    /// True only for `p' = 2`, where the discrete constant is pinned at 1;
    /// for other exponents the estimator is a lower bound and the verdict is
    /// a heuristic.
    pub rigorous: bool,
}

/// Evaluates the closeness condition with the estimated constant.
pub fn check_closeness<T: Scalar>(
    a: T,
    b: T,
    p: T,
    cfg: &KSamplerConfig<T>,
) -> Result<ClosenessReport<T>> {
    if !(a > T::zero() && a <= b && b.is_finite()) {
        return Err(Error::InvalidParameter("closeness needs 0 < a <= b".into()));
    }
    check_q(p)?;
    let p_conjugate = p / (p - T::one());
    let m = (a + b) * T::of(0.5);
    let k_estimate = estimate_k(m, p_conjugate, cfg)?;
    let lhs = (b - a) / (b + a) * k_estimate.estimate;
    Ok(ClosenessReport {
        a,
        b,
        p,
        p_conjugate,
        lhs,
        satisfied: lhs < T::one(),
        rigorous: p_conjugate == T::of(2.0),
        k_estimate,
    })
}

// --- contraction solver --------------------------------------------------------

/// The non-divergence dual problem `du/dt - M(t,x) L u = f`, `u(0) = 0`, with
/// bounded measurable coefficient `a <= M <= b`.
#[derive(Debug, Clone)]
pub struct DualProblem<T> {
    pub coeff: IntervalField<T>,
    pub forcing: IntervalField<T>,
    pub q: T,
    pub a: T,
    pub b: T,
}

impl<T: Scalar> DualProblem<T> {
    pub fn new(
        coeff: IntervalField<T>,
        forcing: IntervalField<T>,
        q: T,
        a: T,
        b: T,
    ) -> Result<Self> {
        check_q(q)?;
        if !(a > T::zero() && a <= b && b.is_finite()) {
            return Err(Error::InvalidParameter("dual problem needs 0 < a <= b".into()));
        }
        if coeff.grid() != forcing.grid() || coeff.mesh() != forcing.mesh() {
            return Err(Error::InvalidParameter(
                "coefficient and forcing must share grid and mesh".into(),
            ));
        }
        if coeff.min_value() < a || coeff.max_value() > b {
            return Err(Error::InvalidParameter(format!(
                "coefficient leaves [{a}, {b}]: range [{}, {}]",
                coeff.min_value(),
                coeff.max_value()
            )));
        }
        Ok(Self { coeff, forcing, q, a, b })
    }

    pub fn mean_coefficient(&self) -> T {
        (self.a + self.b) * T::of(0.5)
    }
}

/// Built-in coefficient patterns for dual-problem studies.
#[derive(Debug, Clone)]
pub enum CoefficientPattern<T> {
    Constant { value: T },
    /// `low`/`high` alternating by parity of (interval + cell).
    Checkerboard { low: T, high: T },
    /// Independent fair draws from `{low, high}` per (interval, cell).
    RandomTwoValued { low: T, high: T, seed: u64 },
}

impl<T: Scalar> CoefficientPattern<T> {
    pub fn build(&self, grid: &Grid1D<T>, mesh: TimeMesh<T>) -> IntervalField<T> {
        match self {
            Self::Constant { value } => {
                IntervalField::from_fn(grid.clone(), mesh, |_, _, _| *value)
            }
            Self::Checkerboard { low, high } => {
                let frames = (0..mesh.nt())
                    .map(|k| {
                        (0..grid.n_cells())
                            .map(|j| if (k + j) % 2 == 0 { *low } else { *high })
                            .collect()
                    })
                    .collect();
                IntervalField::from_frames(grid.clone(), mesh, frames).expect("shape")
            }
            Self::RandomTwoValued { low, high, seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                let frames = (0..mesh.nt())
                    .map(|_| {
                        (0..grid.n_cells())
                            .map(|_| if rng.random::<bool>() { *high } else { *low })
                            .collect()
                    })
                    .collect();
                IntervalField::from_frames(grid.clone(), mesh, frames).expect("shape")
            }
        }
    }

    /// Coefficient bounds `(a, b)` of the pattern.
    pub fn bounds(&self) -> (T, T) {
        match self {
            Self::Constant { value } => (*value, *value),
            Self::Checkerboard { low, high } | Self::RandomTwoValued { low, high, .. } => {
                (*low, *high)
            }
        }
    }
}

/// Initial iterate for the contraction.
#[derive(Debug, Clone, Copy)]
pub enum InitialIterate {
    Zero,
    /// The constant-coefficient solve of the same forcing.
    ForcingScaled,
    Random { seed: u64 },
}

/// Options of the fixed-point iteration.
#[derive(Debug, Clone, Copy)]
pub struct ContractionOptions<T> {
    pub max_iters: usize,
    /// Converged when `|du/dt - M L u - f|_q <= residual_tol * |f|_q`.
    pub residual_tol: T,
    pub initial: InitialIterate,
}

impl<T: Scalar> Default for ContractionOptions<T> {
    fn default() -> Self {
        Self { max_iters: 200, residual_tol: T::of(1e-12), initial: InitialIterate::Zero }
    }
}

/// Outcome of the contraction solve.
#[derive(Debug, Clone)]
pub struct ContractionSolve<T> {
    /// Fixed point frames `u^0..u^nt`.
    pub u: Vec<Vec<T>>,
    pub iterations: usize,
    /// `Z`-norm of each update `v_{k+1} - v_k`.
    pub update_norms: Vec<T>,
    /// Successive update-norm ratios (the observed contraction factors).
    pub update_ratios: Vec<T>,
    /// Final relative residual `|du/dt - M L u - f|_q / |f|_q`.
    pub residual_rel: T,
}

impl<T: Scalar> ContractionSolve<T> {
    /// Largest observed contraction factor.
    pub fn max_update_ratio(&self) -> Option<T> {
        self.update_ratios.iter().copied().fold(None, |acc, r| match acc {
            None => Some(r),
            Some(a) => Some(a.max(r)),
        })
    }
}

fn residual_field<T: Scalar>(
    prob: &DualProblem<T>,
    u: &[Vec<T>],
) -> Result<IntervalField<T>> {
    let grid = prob.forcing.grid();
    let mesh = prob.forcing.mesh();
    let dt = mesh.dt();
    let inv_dt = dt.recip();
    let nc = grid.n_cells();
    let mut lap = vec![T::zero(); nc];
    let mut frames = Vec::with_capacity(mesh.nt());
    for k in 0..mesh.nt() {
        grid.laplacian_into(&u[k + 1], &mut lap);
        let mk = prob.coeff.frame(k);
        let fk = prob.forcing.frame(k);
        frames.push(
            (0..nc)
                .map(|j| (u[k + 1][j] - u[k][j]) * inv_dt - mk[j] * lap[j] - fk[j])
                .collect(),
        );
    }
    IntervalField::from_frames(grid.clone(), mesh, frames)
}

/// Z-norm of the difference of two frame sequences.
fn update_z_norm<T: Scalar>(
    grid: &Grid1D<T>,
    mesh: TimeMesh<T>,
    m: T,
    q: T,
    a: &[Vec<T>],
    b: &[Vec<T>],
) -> Result<T> {
    let nc = grid.n_cells();
    let dt = mesh.dt();
    let inv_dt = dt.recip();
    let mut dv = Vec::with_capacity(mesh.nt());
    let mut lap = Vec::with_capacity(mesh.nt());
    let mut lbuf = vec![T::zero(); nc];
    for k in 0..mesh.nt() {
        let d_new: Vec<T> =
            (0..nc).map(|j| a[k + 1][j] - b[k + 1][j]).collect();
        let d_old: Vec<T> = (0..nc).map(|j| a[k][j] - b[k][j]).collect();
        dv.push((0..nc).map(|j| (d_new[j] - d_old[j]) * inv_dt).collect());
        grid.laplacian_into(&d_new, &mut lbuf);
        lap.push(lbuf.clone());
    }
    let dv = IntervalField::from_frames(grid.clone(), mesh, dv)?;
    let lap = IntervalField::from_frames(grid.clone(), mesh, lap)?;
    Ok(z_norm_of(&dv, &lap, m, q))
}

/// Solves the dual problem by iterating the constant-coefficient solve
/// `(d/dt - m L)(Fv) = -(m - M) L v + f` with `m = (a+b)/2`.
///
/// Converges whenever the closeness condition holds for the problem's
/// exponent; for `q = 2` that is automatic (the contraction factor is at
/// most `(b-a)/(b+a) < 1`). Non-convergence is reported with the last
/// observed update ratio, which signals a closeness violation.
pub fn solve_dual_contraction<T: Scalar>(
    prob: &DualProblem<T>,
    opts: &ContractionOptions<T>,
) -> Result<ContractionSolve<T>> {
    let grid = prob.forcing.grid().clone();
    let mesh = prob.forcing.mesh();
    let nt = mesh.nt();
    let nc = grid.n_cells();
    let m = prob.mean_coefficient();
    let q = prob.q;
    let f_norm = prob.forcing.lq_norm(q);

    let mut v: Vec<Vec<T>> = match opts.initial {
        InitialIterate::Zero => vec![vec![T::zero(); nc]; nt + 1],
        InitialIterate::ForcingScaled => solve_heat_forced(m, &prob.forcing)?.v,
        InitialIterate::Random { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let scale = if f_norm > T::zero() { f_norm } else { T::one() };
            let mut frames = vec![vec![T::zero(); nc]];
            frames.extend((0..nt).map(|_| {
                (0..nc)
                    .map(|_| T::of(rng.random::<f64>() * 2.0 - 1.0) * scale)
                    .collect::<Vec<T>>()
            }));
            frames
        }
    };

    let mut update_norms = Vec::new();
    let mut update_ratios = Vec::new();
    let mut ws = TriWorkspace::new(nc);
    let mut lap = vec![T::zero(); nc];
    let dt = mesh.dt();

    for iter in 1..=opts.max_iters {
        // Fv: forward BE sweep with the perturbation forcing.
        let mut w: Vec<Vec<T>> = Vec::with_capacity(nt + 1);
        w.push(vec![T::zero(); nc]);
        for k in 0..nt {
            grid.laplacian_into(&v[k + 1], &mut lap);
            let mk = prob.coeff.frame(k);
            let fk = prob.forcing.frame(k);
            let mut next = w[k].clone();
            for j in 0..nc {
                let g = fk[j] - (m - mk[j]) * lap[j];
                next[j] += dt * g;
            }
            grid.heat_step_be_inplace(&mut next, m, dt, &mut ws);
            w.push(next);
        }

        let z = update_z_norm(&grid, mesh, m, q, &w, &v)?;
        if let Some(&prev) = update_norms.last() {
            if prev > T::zero() {
                update_ratios.push(z / prev);
            }
        }
        update_norms.push(z);
        v = w;

        let residual = residual_field(prob, &v)?.lq_norm(q);
        let target = if f_norm > T::zero() { opts.residual_tol * f_norm } else { opts.residual_tol };
        if residual <= target {
            return Ok(ContractionSolve {
                u: v,
                iterations: iter,
                update_norms,
                update_ratios,
                residual_rel: if f_norm > T::zero() { residual / f_norm } else { residual },
            });
        }
    }
    let last_ratio = update_ratios.last().copied().unwrap_or(T::nan());
    Err(Error::ContractionDiverged {
        max_iters: opts.max_iters,
        last_ratio: last_ratio.to_f64().unwrap_or(f64::NAN),
    })
}

// --- duality pairing audit -----------------------------------------------------

/// Discrete integration-by-parts audit of the duality pairing.
#[derive(Debug, Clone, Copy)]
pub struct PairingAudit<T> {
    /// `int int rho phi`.
    pub lhs: T,
    /// `int rho(0) v(0) + int int (d rho/dt - L(M rho)) v`.
    pub rhs: T,
    pub gap: T,
    /// Sum of absolute contributions, for normalizing the gap.
    pub scale: T,
    /// Relative residual of the backward dual solve.
    pub dual_residual_rel: T,
}

/// Pairs a density series `rho^0..rho^nt` (any data, e.g. a simulator tail
/// moment) against the backward dual solution `v` of
/// `dv/dt + M L v = -phi`, `v(T) = 0`, and checks the exact discrete
/// identity
///
/// ```text
/// sum_k dt <rho^k, phi^k> = <rho^0, v^0>
///     + sum_k [ <rho^{k+1} - rho^k, v^{k+1}> - dt <L(M^k rho^k), v^k> ].
/// ```
///
/// The only slack is the dual solver's residual, so the gap is roundoff-level
/// for arbitrary densities.
pub fn dual_pairing_audit<T: Scalar>(
    rho: &[Vec<T>],
    coeff: &IntervalField<T>,
    phi: &IntervalField<T>,
    opts: &ContractionOptions<T>,
) -> Result<PairingAudit<T>> {
    let grid = coeff.grid().clone();
    let mesh = coeff.mesh();
    let nt = mesh.nt();
    let nc = grid.n_cells();
    if rho.len() != nt + 1 {
        return Err(Error::SizeMismatch { what: "density frames", expected: nt + 1, got: rho.len() });
    }
    for r in rho {
        if r.len() != nc {
            return Err(Error::SizeMismatch { what: "density frame", expected: nc, got: r.len() });
        }
    }

    // Solve the time-reversed forward problem, then map back.
    let (a, b) = (coeff.min_value(), coeff.max_value());
    let prob = DualProblem::new(
        coeff.time_reversed(),
        phi.time_reversed(),
        T::of(2.0),
        a,
        b,
    )?;
    let sol = solve_dual_contraction(&prob, opts)?;
    let v: Vec<&Vec<T>> = (0..=nt).map(|k| &sol.u[nt - k]).collect();

    let h = grid.h();
    let dt = mesh.dt();
    let inner = |x: &[T], y: &[T]| -> T {
        x.iter().zip(y.iter()).map(|(&p, &q2)| p * q2).sum::<T>() * h
    };

    let mut lhs = T::zero();
    let mut scale = T::zero();
    for k in 0..nt {
        let term = inner(&rho[k], phi.frame(k)) * dt;
        lhs += term;
        scale += term.abs();
    }

    let head = inner(&rho[0], v[0]);
    let mut rhs = head;
    scale += head.abs();
    let mut mrho = vec![T::zero(); nc];
    let mut lap = vec![T::zero(); nc];
    for k in 0..nt {
        let jump: Vec<T> = (0..nc).map(|j| rho[k + 1][j] - rho[k][j]).collect();
        let t1 = inner(&jump, v[k + 1]);
        let mk = coeff.frame(k);
        for j in 0..nc {
            mrho[j] = mk[j] * rho[k][j];
        }
        grid.laplacian_into(&mrho, &mut lap);
        let t2 = inner(&lap, v[k]) * dt;
        rhs += t1 - t2;
        scale += t1.abs() + t2.abs();
    }

    Ok(PairingAudit {
        lhs,
        rhs,
        gap: lhs - rhs,
        scale: scale.max(T::of(1e-300)),
        dual_residual_rel: sol.residual_rel,
    })
}
