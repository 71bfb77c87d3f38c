//! Cell-centered 1-D grid on `[0, 1]` with homogeneous Neumann boundary.
//!
//! Cells have width `h = 1/N` and centers `x_j = (j + 1/2) h`. The discrete
//! Laplacian uses reflected ghost values (`u_{-1} = u_0`, `u_N = u_{N-1}`),
//! which makes it symmetric negative semidefinite with zero row sums, the
//! summation-by-parts structure the conservation and energy arguments rely
//! on. Diffusion substeps are backward Euler via the Thomas algorithm: the
//! system matrix is an M-matrix, so steps preserve positivity and the grand
//! sum exactly (up to solver roundoff).

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Uniform cell-centered grid on `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid1D<T> {
    n_cells: usize,
    h: T,
}

impl<T: Scalar> Grid1D<T> {
    /// A grid with `n_cells >= 2` cells.
    pub fn new(n_cells: usize) -> Result<Self> {
        if n_cells < 2 {
            return Err(Error::InvalidParameter(format!(
                "grid needs at least 2 cells (got {n_cells}); use single_cell() for \
                 space-homogeneous runs"
            )));
        }
        Ok(Self { n_cells, h: T::one() / T::from_index(n_cells) })
    }

    /// Degenerate one-cell grid for space-homogeneous runs; the Laplacian is
    /// identically zero there.
    pub fn single_cell() -> Self {
        Self { n_cells: 1, h: T::one() }
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    pub fn h(&self) -> T {
        self.h
    }

    /// Center of cell `j`: `(j + 1/2) h`.
    pub fn cell_center(&self, j: usize) -> T {
        (T::from_index(j) + T::of(0.5)) * self.h
    }

    pub fn centers(&self) -> Vec<T> {
        (0..self.n_cells).map(|j| self.cell_center(j)).collect()
    }

    fn check_len(&self, len: usize, what: &'static str) -> Result<()> {
        if len != self.n_cells {
            return Err(Error::SizeMismatch { what, expected: self.n_cells, got: len });
        }
        Ok(())
    }

    /// Applies the Neumann Laplacian `(L u)_j = (u_{j-1} - 2 u_j + u_{j+1}) / h^2`
    /// with reflected ghosts into `out`. Row sums vanish, so `sum_j (L u)_j = 0`
    /// up to roundoff.
    pub fn laplacian_into(&self, u: &[T], out: &mut [T]) {
        let n = self.n_cells;
        debug_assert_eq!(u.len(), n);
        debug_assert_eq!(out.len(), n);
        if n == 1 {
            out[0] = T::zero();
            return;
        }
        let inv_h2 = T::one() / (self.h * self.h);
        out[0] = (u[1] - u[0]) * inv_h2;
        for j in 1..n - 1 {
            out[j] = (u[j - 1] - (u[j] + u[j]) + u[j + 1]) * inv_h2;
        }
        out[n - 1] = (u[n - 2] - u[n - 1]) * inv_h2;
    }

    /// Allocating form of [`Grid1D::laplacian_into`].
    pub fn laplacian(&self, u: &[T]) -> Result<Vec<T>> {
        self.check_len(u.len(), "laplacian input")?;
        let mut out = vec![T::zero(); u.len()];
        self.laplacian_into(u, &mut out);
        Ok(out)
    }

    /// Face-difference energy `sum_faces ((u_{j+1} - u_j)/h)^2 h`, the discrete
    /// counterpart of the gradient L^2 norm squared.
    pub fn gradient_energy(&self, u: &[T]) -> T {
        let mut acc = T::zero();
        for j in 0..self.n_cells.saturating_sub(1) {
            let d = (u[j + 1] - u[j]) / self.h;
            acc += d * d * self.h;
        }
        acc
    }

    /// One backward-Euler heat step: solves `(I - dt d L) out = u`.
    ///
    /// Preserves constants and the grand sum; maps nonnegative input to
    /// nonnegative output; contracts the max norm.
    pub fn heat_step_be(&self, u: &[T], d: T, dt: T) -> Result<Vec<T>> {
        self.check_len(u.len(), "heat step input")?;
        if d.is_nan() || d <= T::zero() || dt.is_nan() || dt <= T::zero() {
            return Err(Error::InvalidParameter("heat step needs d > 0 and dt > 0".into()));
        }
        let mut out = u.to_vec();
        let mut ws = TriWorkspace::new(self.n_cells);
        self.heat_step_be_inplace(&mut out, d, dt, &mut ws);
        Ok(out)
    }

    /// In-place backward-Euler heat step with caller-owned scratch.
    pub fn heat_step_be_inplace(&self, u: &mut [T], d: T, dt: T, ws: &mut TriWorkspace<T>) {
        let n = self.n_cells;
        debug_assert_eq!(u.len(), n);
        if n == 1 {
            return;
        }
        let r = dt * d / (self.h * self.h);
        let one = T::one();
        let two = T::of(2.0);
        // Thomas sweep for the tridiagonal system with Neumann corner rows
        // (1 + r) and interior rows (1 + 2r), off-diagonals -r.
        let cp = &mut ws.upper;
        let dp = &mut ws.rhs;
        cp[0] = -r / (one + r);
        dp[0] = u[0] / (one + r);
        for j in 1..n {
            let diag = if j == n - 1 { one + r } else { one + two * r };
            let m = diag + r * cp[j - 1];
            cp[j] = -r / m;
            dp[j] = (u[j] + r * dp[j - 1]) / m;
        }
        u[n - 1] = dp[n - 1];
        for j in (0..n - 1).rev() {
            u[j] = dp[j] - cp[j] * u[j + 1];
        }
    }

    /// Spatial L^p norm `(sum_j |u_j|^p h)^(1/p)`; `p = inf` gives the max norm.
    pub fn lp_norm_space(&self, u: &[T], p: T) -> Result<T> {
        self.check_len(u.len(), "norm input")?;
        check_exponent(p)?;
        if p == T::infinity() {
            return Ok(u.iter().fold(T::zero(), |a, &b| a.max(b.abs())));
        }
        let s = u.iter().fold(T::zero(), |a, &b| a + b.abs().powf(p));
        Ok((s * self.h).powf(T::one() / p))
    }
}

fn check_exponent<T: Scalar>(p: T) -> Result<()> {
    if p.is_nan() || p < T::one() {
        return Err(Error::InvalidExponent { p: p.to_f64().unwrap_or(f64::NAN) });
    }
    Ok(())
}

/// Scratch buffers for the Thomas algorithm, reusable across species.
#[derive(Debug, Clone)]
pub struct TriWorkspace<T> {
    upper: Vec<T>,
    rhs: Vec<T>,
}

impl<T: Scalar> TriWorkspace<T> {
    pub fn new(n: usize) -> Self {
        Self { upper: vec![T::zero(); n], rhs: vec![T::zero(); n] }
    }
}

// --- diffusion profiles ----------------------------------------------------

/// Per-size diffusion coefficients `d_i` with positive infimum `delta`,
/// finite supremum `D` and a limit `d_inf` as the size grows.
#[derive(Debug, Clone)]
pub enum DiffusionProfile<T> {
    /// `d_i = d` for all sizes.
    Constant { d: T },
    /// `d_i = d_inf + amplitude / i^rate`, converging to `d_inf > 0`.
    Limit { d_inf: T, amplitude: T, rate: T },
    /// Explicit head values for sizes `1..=values.len()`, then `tail`.
    List { values: Vec<T>, tail: T },
}

impl<T: Scalar> DiffusionProfile<T> {
    pub fn constant(d: T) -> Result<Self> {
        if !(d.is_finite() && d > T::zero()) {
            return Err(Error::InvalidParameter("diffusion needs d > 0".into()));
        }
        Ok(Self::Constant { d })
    }

    pub fn limit(d_inf: T, amplitude: T, rate: T) -> Result<Self> {
        if !(d_inf.is_finite() && d_inf > T::zero()) {
            return Err(Error::InvalidParameter("diffusion limit needs d_inf > 0".into()));
        }
        if !(rate.is_finite() && rate > T::zero()) {
            return Err(Error::InvalidParameter("diffusion limit needs rate r > 0".into()));
        }
        // d_i is monotone in i, so positivity everywhere reduces to d_1 > 0.
        if !(amplitude.is_finite() && d_inf + amplitude > T::zero()) {
            return Err(Error::InvalidParameter("diffusion limit needs d_inf + A > 0".into()));
        }
        Ok(Self::Limit { d_inf, amplitude, rate })
    }

    pub fn list(values: Vec<T>, tail: T) -> Result<Self> {
        if values.iter().chain([&tail]).any(|&v| !(v.is_finite() && v > T::zero())) {
            return Err(Error::InvalidParameter("diffusion values must be positive".into()));
        }
        Ok(Self::List { values, tail })
    }

    /// `d_i` for size `i >= 1`.
    pub fn rate(&self, i: usize) -> T {
        debug_assert!(i >= 1);
        match self {
            Self::Constant { d } => *d,
            Self::Limit { d_inf, amplitude, rate } => {
                *d_inf + *amplitude / T::index_pow(i, *rate)
            }
            Self::List { values, tail } => {
                values.get(i - 1).copied().unwrap_or(*tail)
            }
        }
    }

    pub fn rates(&self, n: usize) -> Vec<T> {
        (1..=n).map(|i| self.rate(i)).collect()
    }

    /// Limit of `d_i` as the size grows.
    pub fn limit_value(&self) -> T {
        match self {
            Self::Constant { d } => *d,
            Self::Limit { d_inf, .. } => *d_inf,
            Self::List { tail, .. } => *tail,
        }
    }

    /// `inf_{i >= i0} d_i` (`delta` for `i0 = 1`).
    pub fn inf_from(&self, i0: usize) -> T {
        match self {
            Self::Constant { d } => *d,
            Self::Limit { d_inf, amplitude, .. } => {
                if *amplitude >= T::zero() {
                    *d_inf
                } else {
                    self.rate(i0)
                }
            }
            Self::List { values, tail } => values[i0.saturating_sub(1).min(values.len())..]
                .iter()
                .fold(*tail, |a, &b| a.min(b)),
        }
    }

    /// `sup_{i >= i0} d_i` (`D` for `i0 = 1`).
    pub fn sup_from(&self, i0: usize) -> T {
        match self {
            Self::Constant { d } => *d,
            Self::Limit { d_inf, amplitude, .. } => {
                if *amplitude >= T::zero() {
                    self.rate(i0)
                } else {
                    *d_inf
                }
            }
            Self::List { values, tail } => values[i0.saturating_sub(1).min(values.len())..]
                .iter()
                .fold(*tail, |a, &b| a.max(b)),
        }
    }

    /// Smallest tail index `I <= n` whose diffusion spread satisfies
    /// `(sup - inf) / (sup + inf) <= frac`, or `n` when no index does.
    pub fn default_tail_index(&self, n: usize, frac: T) -> usize {
        for i0 in 1..=n {
            let (lo, hi) = (self.inf_from(i0), self.sup_from(i0));
            if (hi - lo) / (hi + lo) <= frac {
                return i0;
            }
        }
        n
    }
}

// --- space-time series ------------------------------------------------------

/// Time-stamped spatial fields on `[0, T] x [0, 1]`, supporting space-time
/// L^p norms with trapezoidal time weights.
#[derive(Debug, Clone)]
pub struct SpaceTimeSeries<T> {
    grid: Grid1D<T>,
    times: Vec<T>,
    frames: Vec<Vec<T>>,
}

impl<T: Scalar> SpaceTimeSeries<T> {
    pub fn new(grid: Grid1D<T>) -> Self {
        Self { grid, times: Vec::new(), frames: Vec::new() }
    }

    pub fn from_frames(grid: Grid1D<T>, times: Vec<T>, frames: Vec<Vec<T>>) -> Result<Self> {
        let mut s = Self::new(grid);
        if times.len() != frames.len() {
            return Err(Error::SizeMismatch {
                what: "space-time frames",
                expected: times.len(),
                got: frames.len(),
            });
        }
        for (t, f) in times.into_iter().zip(frames) {
            s.push_frame(t, f)?;
        }
        Ok(s)
    }

    pub fn push_frame(&mut self, t: T, frame: Vec<T>) -> Result<()> {
        if frame.len() != self.grid.n_cells() {
            return Err(Error::SizeMismatch {
                what: "frame",
                expected: self.grid.n_cells(),
                got: frame.len(),
            });
        }
        if let Some(&last) = self.times.last() {
            if t <= last {
                return Err(Error::InvalidParameter(format!(
                    "frame times must increase (got {t} after {last})"
                )));
            }
        }
        self.times.push(t);
        self.frames.push(frame);
        Ok(())
    }

    pub fn grid(&self) -> &Grid1D<T> {
        &self.grid
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn times(&self) -> &[T] {
        &self.times
    }

    pub fn frame(&self, m: usize) -> &[T] {
        &self.frames[m]
    }

    pub fn frames(&self) -> &[Vec<T>] {
        &self.frames
    }

    /// Space-time L^p norm with trapezoidal weights in time and the midpoint
    /// rule in space; `p = inf` is the overall max.
    pub fn lp_norm_spacetime(&self, p: T) -> Result<T> {
        check_exponent(p)?;
        if self.frames.is_empty() {
            return Ok(T::zero());
        }
        if p == T::infinity() {
            return Ok(self
                .frames
                .iter()
                .flat_map(|f| f.iter())
                .fold(T::zero(), |a, &b| a.max(b.abs())));
        }
        let h = self.grid.h();
        let m = self.times.len();
        let mut acc = T::zero();
        for k in 0..m {
            let w = trapezoid_weight(&self.times, k);
            if w == T::zero() {
                continue;
            }
            let cell: T = self.frames[k].iter().fold(T::zero(), |a, &b| a + b.abs().powf(p));
            acc += w * cell * h;
        }
        Ok(acc.powf(T::one() / p))
    }

    /// Writes the series as CSV rows `t,x,value` with header.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,x,value\n");
        for (k, t) in self.times.iter().enumerate() {
            for (j, v) in self.frames[k].iter().enumerate() {
                out.push_str(&format!("{},{},{}\n", t, self.grid.cell_center(j), v));
            }
        }
        out
    }
}

fn trapezoid_weight<T: Scalar>(times: &[T], k: usize) -> T {
    let m = times.len();
    if m == 1 {
        return T::zero();
    }
    let half = T::of(0.5);
    if k == 0 {
        (times[1] - times[0]) * half
    } else if k == m - 1 {
        (times[m - 1] - times[m - 2]) * half
    } else {
        (times[k + 1] - times[k - 1]) * half
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn cosine_mode(grid: &Grid1D<f64>, k: usize) -> Vec<f64> {
        (0..grid.n_cells()).map(|j| (PI * k as f64 * grid.cell_center(j)).cos()).collect()
    }

    /// Discrete eigenvalue of the reflected-ghost Laplacian for mode k.
    fn lambda_h(grid: &Grid1D<f64>, k: usize) -> f64 {
        let h = grid.h();
        2.0 / (h * h) * (1.0 - (PI * k as f64 * h).cos())
    }

    #[test]
    fn laplacian_kills_constants() {
        let g = Grid1D::<f64>::new(17).unwrap();
        let u = vec![3.25; 17];
        assert!(g.laplacian(&u).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn laplacian_cosine_eigenmode() {
        let g = Grid1D::<f64>::new(64).unwrap();
        let u = cosine_mode(&g, 1);
        let lam = lambda_h(&g, 1);
        let lu = g.laplacian(&u).unwrap();
        for (l, v) in lu.iter().zip(u.iter()) {
            assert!((l + lam * v).abs() <= 1e-10 * lam, "{l} vs {}", -lam * v);
        }
    }

    #[test]
    fn laplacian_sums_to_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g = Grid1D::<f64>::new(96).unwrap();
        for _ in 0..10 {
            let u: Vec<f64> = (0..96).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect();
            let s: f64 = g.laplacian(&u).unwrap().iter().sum();
            let scale: f64 = u.iter().map(|v| v.abs()).sum::<f64>() / (g.h() * g.h());
            assert!(s.abs() <= 1e-14 * scale);
        }
    }

    #[test]
    fn summation_by_parts() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = Grid1D::<f64>::new(41).unwrap();
        for _ in 0..10 {
            let u: Vec<f64> = (0..41).map(|_| rng.random::<f64>() - 0.5).collect();
            let v: Vec<f64> = (0..41).map(|_| rng.random::<f64>() - 0.5).collect();
            let lv = g.laplacian(&v).unwrap();
            let lhs: f64 = u.iter().zip(lv.iter()).map(|(&a, &b)| a * b * g.h()).sum();
            let mut rhs = 0.0;
            for j in 0..40 {
                rhs -= (u[j + 1] - u[j]) / g.h() * ((v[j + 1] - v[j]) / g.h()) * g.h();
            }
            assert!((lhs - rhs).abs() <= 1e-11 * (lhs.abs() + rhs.abs() + 1.0));
            // In particular the quadratic form is nonpositive.
            let lu = g.laplacian(&u).unwrap();
            let quad: f64 = u.iter().zip(lu.iter()).map(|(&a, &b)| a * b).sum();
            assert!(quad <= 1e-12);
        }
    }

    #[test]
    fn heat_step_preserves_constants() {
        let g = Grid1D::<f64>::new(33).unwrap();
        let u = vec![0.7; 33];
        let out = g.heat_step_be(&u, 2.0, 0.1).unwrap();
        for v in out {
            assert!((v - 0.7).abs() <= 1e-14);
        }
    }

    #[test]
    fn heat_step_eigenmode_decay() {
        let g = Grid1D::<f64>::new(64).unwrap();
        let u = cosine_mode(&g, 1);
        let (d, dt) = (1.3, 0.02);
        let lam = lambda_h(&g, 1);
        let expect = 1.0 / (1.0 + dt * d * lam);
        let out = g.heat_step_be(&u, d, dt).unwrap();
        for (o, v) in out.iter().zip(u.iter()) {
            assert!((o - expect * v).abs() <= 1e-12);
        }
    }

    #[test]
    fn heat_step_mass_and_max_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let g = Grid1D::<f64>::new(256).unwrap();
        for _ in 0..5 {
            let u: Vec<f64> = (0..256).map(|_| rng.random::<f64>()).collect();
            let out = g.heat_step_be(&u, 0.8, 0.05).unwrap();
            let sum_in: f64 = u.iter().sum();
            let sum_out: f64 = out.iter().sum();
            let abs_in: f64 = u.iter().map(|v| v.abs()).sum();
            assert!((sum_in - sum_out).abs() <= 1e-13 * abs_in);
            let max_in = u.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
            let max_out = out.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
            assert!(max_out <= max_in * (1.0 + 1e-14));
            assert!(out.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn heat_step_convergence_order_in_h() {
        // Refine with dt ~ h^2 so both error terms scale as h^2.
        let d = 1.0;
        let t_end = 0.1;
        let mut errors = Vec::new();
        for n in [16usize, 32, 64] {
            let g = Grid1D::<f64>::new(n).unwrap();
            let nt = (2.0 * (n * n) as f64 * t_end).ceil() as usize;
            let dt = t_end / nt as f64;
            let mut u = cosine_mode(&g, 1);
            let mut ws = TriWorkspace::new(n);
            for _ in 0..nt {
                g.heat_step_be_inplace(&mut u, d, dt, &mut ws);
            }
            let decay = (-d * PI * PI * t_end).exp();
            let exact = cosine_mode(&g, 1);
            let err = u
                .iter()
                .zip(exact.iter())
                .fold(0.0f64, |a, (&num, &ex)| a.max((num - decay * ex).abs()));
            errors.push(err);
        }
        let order01 = (errors[0] / errors[1]).log2();
        let order12 = (errors[1] / errors[2]).log2();
        assert!(order01 >= 1.9, "{order01}");
        assert!(order12 >= 1.9, "{order12}");
    }

    #[test]
    fn lp_norms_space() {
        let g = Grid1D::<f64>::new(50).unwrap();
        let ones = vec![1.0; 50];
        for p in [1.0, 2.0, 3.5] {
            assert!((g.lp_norm_space(&ones, p).unwrap() - 1.0).abs() < 1e-14);
        }
        let mut spike = vec![0.0; 50];
        spike[17] = 4.0;
        assert_eq!(g.lp_norm_space(&spike, f64::INFINITY).unwrap(), 4.0);

        // Midpoint-rule quadrature of x^2 carries an O(h^2) error.
        let x: Vec<f64> = g.centers();
        let norm = g.lp_norm_space(&x, 2.0).unwrap();
        assert!((norm - 1.0 / 3.0f64.sqrt()).abs() <= 1e-4);

        assert!(g.lp_norm_space(&ones, 0.5).is_err());
    }

    #[test]
    fn diffusion_profiles() {
        let p = DiffusionProfile::limit(1.0, 1.0, 1.0).unwrap();
        assert_eq!(p.rate(1), 2.0);
        assert_eq!(p.rate(4), 1.25);
        assert_eq!(p.inf_from(1), 1.0);
        assert_eq!(p.sup_from(1), 2.0);
        assert_eq!(p.sup_from(10), p.rate(10));
        assert_eq!(p.limit_value(), 1.0);
        // Spread <= 0.05 first holds when (d_I - 1)/(d_I + 1) <= 0.05, i.e.
        // A/I^r <= 2*0.05/(1-0.05) => I >= 9.5 => I = 10.
        assert_eq!(p.default_tail_index(4096, 0.05), 10);

        let p = DiffusionProfile::list(vec![3.0, 0.5, 2.0], 1.0).unwrap();
        assert_eq!(p.rate(2), 0.5);
        assert_eq!(p.rate(7), 1.0);
        assert_eq!(p.inf_from(1), 0.5);
        assert_eq!(p.sup_from(3), 2.0);
        assert_eq!(p.inf_from(4), 1.0);

        assert!(DiffusionProfile::<f64>::limit(1.0, -1.0, 1.0).is_err());
        assert!(DiffusionProfile::<f64>::constant(0.0).is_err());
    }

    #[test]
    fn spacetime_series_norms() {
        let g = Grid1D::<f64>::new(8).unwrap();
        let mut s = SpaceTimeSeries::new(g);
        for k in 0..=10 {
            s.push_frame(k as f64 * 0.1, vec![1.0; 8]).unwrap();
        }
        // Unit function on [0,1]x[0,1] has every L^p norm 1.
        for p in [1.0, 2.0, 4.0] {
            assert!((s.lp_norm_spacetime(p).unwrap() - 1.0).abs() <= 1e-12);
        }
        assert_eq!(s.lp_norm_spacetime(f64::INFINITY).unwrap(), 1.0);

        let g = Grid1D::<f64>::new(8).unwrap();
        let mut s = SpaceTimeSeries::new(g);
        s.push_frame(0.0, vec![2.0; 8]).unwrap();
        assert_eq!(s.lp_norm_spacetime(2.0).unwrap(), 0.0);
        assert_eq!(s.lp_norm_spacetime(f64::INFINITY).unwrap(), 2.0);
        assert!(s.push_frame(0.0, vec![1.0; 8]).is_err());
    }
}
