//! Coagulation rate kernels `a_{i,j}` and their growth classification.
//!
//! A kernel assigns a symmetric nonnegative merge rate to every pair of
//! cluster sizes. The closed-form families are defined for all sizes; table
//! kernels carry an explicit `n_max` beyond which lookups fail. Growth
//! matters because sublinear rates (`a_{i,j} <= C(i^g + j^g)`, `g < 1`)
//! conserve mass while superlinear rates gel.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Growth class of a rate family, deciding whether gelation can occur.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GrowthClass {
    /// Strictly sublinear growth; mass-conserving regime.
    Sublinear,
    /// The additive borderline `a_{i,j} ~ i + j`.
    LinearBorderline,
    /// Superlinear growth; gelation can occur.
    Superlinear,
}

impl std::fmt::Display for GrowthClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            GrowthClass::Sublinear => "sublinear",
            GrowthClass::LinearBorderline => "linear-borderline",
            GrowthClass::Superlinear => "superlinear",
        };
        f.write_str(s)
    }
}

/// One power-product term of a separable kernel: `coef * i^p * j^q`.
#[derive(Debug, Clone, Copy)]
pub struct PowerTerm<T> {
    pub coef: T,
    pub p: T,
    pub q: T,
}

#[derive(Debug, Clone)]
enum Family<T> {
    /// `a(i,j) = c0`
    Constant { c0: T },
    /// `a(i,j) = c (i^gamma + j^gamma)`
    SumPower { c: T, gamma: T },
    /// `a(i,j) = c (i^alpha j^beta + i^beta j^alpha)`
    ProductPower { c: T, alpha: T, beta: T },
    /// `a(i,j) = i j`
    Multiplicative,
    /// Dense symmetric rate matrix for sizes `1..=n_max`, row-major.
    Table { n_max: usize, rates: Vec<T> },
}

/// A symmetric nonnegative coagulation rate family.
///
/// Immutable after construction; [`KernelSpec::eval`] is pure and safe to
/// call concurrently.
#[derive(Debug, Clone)]
pub struct KernelSpec<T> {
    family: Family<T>,
}

fn require(cond: bool, msg: &str) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::InvalidParameter(msg.to_string()))
    }
}

impl<T: Scalar> KernelSpec<T> {
    /// `a(i,j) = c0`.
    pub fn constant(c0: T) -> Result<Self> {
        require(c0.is_finite() && c0 >= T::zero(), "constant kernel needs c0 >= 0")?;
        Ok(Self { family: Family::Constant { c0 } })
    }

    /// `a(i,j) = c (i^gamma + j^gamma)`.
    ///
    /// `gamma < 1` is the sublinear regime; `gamma = 1` (the additive kernel
    /// up to the factor `c`) is accepted for borderline studies.
    pub fn sum_power(c: T, gamma: T) -> Result<Self> {
        require(c.is_finite() && c > T::zero(), "sum-power kernel needs C > 0")?;
        require(gamma.is_finite() && gamma >= T::zero(), "sum-power kernel needs gamma >= 0")?;
        Ok(Self { family: Family::SumPower { c, gamma } })
    }

    /// `a(i,j) = c (i^alpha j^beta + i^beta j^alpha)`.
    pub fn product_power(c: T, alpha: T, beta: T) -> Result<Self> {
        require(c.is_finite() && c > T::zero(), "product-power kernel needs C > 0")?;
        require(
            alpha.is_finite() && alpha >= T::zero() && beta.is_finite() && beta >= T::zero(),
            "product-power kernel needs alpha, beta >= 0",
        )?;
        Ok(Self { family: Family::ProductPower { c, alpha, beta } })
    }

    /// `a(i,j) = i j`.
    pub fn multiplicative() -> Self {
        Self { family: Family::Multiplicative }
    }

    /// Dense table of rates for sizes `1..=n_max`, row-major (`i` outer).
    ///
    /// The full square matrix is stored so that lookups stay branch-free;
    /// symmetry and nonnegativity are checked here instead.
    pub fn table(n_max: usize, rates: Vec<T>) -> Result<Self> {
        require(n_max >= 1, "table kernel needs n_max >= 1")?;
        if rates.len() != n_max * n_max {
            return Err(Error::SizeMismatch {
                what: "table kernel rates",
                expected: n_max * n_max,
                got: rates.len(),
            });
        }
        for (idx, &r) in rates.iter().enumerate() {
            if !(r.is_finite() && r >= T::zero()) {
                let (i, j) = (idx / n_max + 1, idx % n_max + 1);
                return Err(Error::InvalidParameter(format!(
                    "table kernel rate a({i}, {j}) must be finite and nonnegative"
                )));
            }
        }
        for i in 0..n_max {
            for j in (i + 1)..n_max {
                if rates[i * n_max + j] != rates[j * n_max + i] {
                    return Err(Error::InvalidParameter(format!(
                        "table kernel is not symmetric at ({}, {})",
                        i + 1,
                        j + 1
                    )));
                }
            }
        }
        Ok(Self { family: Family::Table { n_max, rates } })
    }

    /// Loads a table kernel from CSV with header `i,j,a` and `n_max^2`
    /// row-major entries.
    pub fn table_from_csv(n_max: usize, text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        match lines.next() {
            Some((_, h)) if h.trim().eq_ignore_ascii_case("i,j,a") => {}
            _ => return Err(Error::Config("table CSV must start with header 'i,j,a'".into())),
        }
        let mut rates = Vec::with_capacity(n_max * n_max);
        for (lineno, line) in lines {
            let mut cols = line.split(',');
            let parse = |s: Option<&str>, what: &str| -> Result<f64> {
                s.map(str::trim)
                    .ok_or_else(|| {
                        Error::Config(format!("line {}: missing {what}", lineno + 1))
                    })?
                    .parse()
                    .map_err(|e| Error::Config(format!("line {}: bad {what}: {e}", lineno + 1)))
            };
            let i = parse(cols.next(), "i")? as usize;
            let j = parse(cols.next(), "j")? as usize;
            let a = parse(cols.next(), "a")?;
            let expect = rates.len();
            let (ei, ej) = (expect / n_max + 1, expect % n_max + 1);
            if i != ei || j != ej {
                return Err(Error::Config(format!(
                    "line {}: expected row-major entry ({ei}, {ej}), got ({i}, {j})",
                    lineno + 1
                )));
            }
            rates.push(T::of(a));
        }
        Self::table(n_max, rates)
    }

    /// Largest size the kernel guarantees rates for; `None` when unbounded.
    pub fn n_max(&self) -> Option<usize> {
        match &self.family {
            Family::Table { n_max, .. } => Some(*n_max),
            _ => None,
        }
    }

    /// Checks that all pairs with `i, j <= n` are evaluable.
    pub fn check_range(&self, n: usize) -> Result<()> {
        match self.n_max() {
            Some(m) if n > m => Err(Error::TableIndexOutOfRange { i: n, j: n, n_max: m }),
            _ => Ok(()),
        }
    }

    /// Rate `a_{i,j}` for `1 <= i, j <= n_max`.
    pub fn eval(&self, i: usize, j: usize) -> Result<T> {
        if i == 0 || j == 0 {
            return Err(Error::ZeroKernelIndex { i, j });
        }
        if let Some(m) = self.n_max() {
            if i > m || j > m {
                return Err(Error::TableIndexOutOfRange { i, j, n_max: m });
            }
        }
        Ok(self.eval_unchecked(i, j))
    }

    /// Rate lookup without range checks; callers validate once up front.
    #[inline]
    pub fn eval_unchecked(&self, i: usize, j: usize) -> T {
        debug_assert!(i >= 1 && j >= 1);
        match &self.family {
            Family::Constant { c0 } => *c0,
            Family::SumPower { c, gamma } => {
                *c * (T::index_pow(i, *gamma) + T::index_pow(j, *gamma))
            }
            Family::ProductPower { c, alpha, beta } => {
                *c * (T::index_pow(i, *alpha) * T::index_pow(j, *beta)
                    + T::index_pow(i, *beta) * T::index_pow(j, *alpha))
            }
            Family::Multiplicative => T::from_index(i) * T::from_index(j),
            Family::Table { n_max, rates } => {
                debug_assert!(i <= *n_max && j <= *n_max);
                rates[(i - 1) * n_max + (j - 1)]
            }
        }
    }

    /// Growth class of a closed-form family; tables cannot be classified.
    pub fn classify(&self) -> Result<GrowthClass> {
        let one = T::one();
        Ok(match &self.family {
            Family::Constant { .. } => GrowthClass::Sublinear,
            Family::SumPower { gamma, .. } => {
                if *gamma < one {
                    GrowthClass::Sublinear
                } else if *gamma == one {
                    GrowthClass::LinearBorderline
                } else {
                    GrowthClass::Superlinear
                }
            }
            Family::ProductPower { alpha, beta, .. } => {
                let s = *alpha + *beta;
                if s < one {
                    GrowthClass::Sublinear
                } else if s == one {
                    GrowthClass::LinearBorderline
                } else {
                    GrowthClass::Superlinear
                }
            }
            Family::Multiplicative => GrowthClass::Superlinear,
            Family::Table { .. } => return Err(Error::UnclassifiableKernel),
        })
    }

    /// Samples `a(i, j) / j` for `j = 1..=j_max`.
    ///
    /// For sublinear families the sequence decays toward zero in `j`; a flat
    /// profile flags a kernel that violates that asymptotic.
    pub fn sublinearity_profile(&self, i: usize, j_max: usize) -> Result<Vec<T>> {
        if i == 0 {
            return Err(Error::ZeroKernelIndex { i, j: 1 });
        }
        if let Some(m) = self.n_max() {
            if i > m || j_max > m {
                return Err(Error::TableIndexOutOfRange { i, j: j_max, n_max: m });
            }
        }
        Ok((1..=j_max)
            .map(|j| self.eval_unchecked(i, j) / T::from_index(j))
            .collect())
    }

    /// Power-product decomposition `a(i,j) = sum_t coef_t i^{p_t} j^{q_t}`,
    /// or `None` for table kernels.
    pub fn separable_terms(&self) -> Option<Vec<PowerTerm<T>>> {
        let zero = T::zero();
        let one = T::one();
        match &self.family {
            Family::Constant { c0 } => Some(vec![PowerTerm { coef: *c0, p: zero, q: zero }]),
            Family::SumPower { c, gamma } => Some(vec![
                PowerTerm { coef: *c, p: *gamma, q: zero },
                PowerTerm { coef: *c, p: zero, q: *gamma },
            ]),
            Family::ProductPower { c, alpha, beta } => Some(vec![
                PowerTerm { coef: *c, p: *alpha, q: *beta },
                PowerTerm { coef: *c, p: *beta, q: *alpha },
            ]),
            Family::Multiplicative => Some(vec![PowerTerm { coef: one, p: one, q: one }]),
            Family::Table { .. } => None,
        }
    }

    /// Human-readable family name (used by configs and reports).
    pub fn family_name(&self) -> &'static str {
        match &self.family {
            Family::Constant { .. } => "constant",
            Family::SumPower { .. } => "sum_power",
            Family::ProductPower { .. } => "product_power",
            Family::Multiplicative => "multiplicative",
            Family::Table { .. } => "table",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    type K = KernelSpec<f64>;

    #[test]
    fn constant_family_evaluates_to_c0() {
        let k = K::constant(2.0).unwrap();
        assert_eq!(k.eval(3, 7).unwrap(), 2.0);
    }

    #[test]
    fn sum_power_limit_case() {
        // gamma = 1 borderline, used only in tests.
        let k = K::sum_power(1.0, 1.0).unwrap();
        assert_eq!(k.eval(2, 3).unwrap(), 5.0);
        assert_eq!(k.classify().unwrap(), GrowthClass::LinearBorderline);
    }

    #[test]
    fn product_power_half_half() {
        let k = K::product_power(1.0, 0.5, 0.5).unwrap();
        assert!((k.eval(4, 9).unwrap() - 12.0).abs() < 1e-12);
    }

    #[test]
    fn classification_matches_growth() {
        assert_eq!(K::sum_power(1.0, 0.5).unwrap().classify().unwrap(), GrowthClass::Sublinear);
        assert_eq!(
            K::product_power(1.0, 0.6, 0.6).unwrap().classify().unwrap(),
            GrowthClass::Superlinear
        );
        assert_eq!(K::multiplicative().classify().unwrap(), GrowthClass::Superlinear);
        assert_eq!(
            K::product_power(1.0, 0.3, 0.7).unwrap().classify().unwrap(),
            GrowthClass::LinearBorderline
        );
        assert_eq!(K::constant(1.0).unwrap().classify().unwrap(), GrowthClass::Sublinear);
        let t = K::table(2, vec![1.0, 2.0, 2.0, 3.0]).unwrap();
        assert!(matches!(t.classify(), Err(Error::UnclassifiableKernel)));
    }

    #[test]
    fn symmetry_across_families() {
        let specs: Vec<K> = vec![
            K::constant(0.7).unwrap(),
            K::sum_power(1.3, 0.4).unwrap(),
            K::product_power(0.9, 0.2, 0.7).unwrap(),
            K::multiplicative(),
        ];
        for k in &specs {
            for i in (1..=512).step_by(31) {
                for j in (1..=512).step_by(47) {
                    assert_eq!(k.eval_unchecked(i, j), k.eval_unchecked(j, i), "at ({i},{j})");
                }
            }
        }
    }

    #[test]
    fn sublinearity_profile_values() {
        let k = K::constant(2.0).unwrap();
        let prof = k.sublinearity_profile(1, 4).unwrap();
        assert_eq!(prof, vec![2.0, 1.0, 2.0 / 3.0, 0.5]);

        let k = K::sum_power(1.0, 0.5).unwrap();
        let prof = k.sublinearity_profile(1, 10_000).unwrap();
        assert!((prof[9_999] - (1.0 + 100.0) / 10_000.0).abs() < 1e-15);

        // Multiplicative: a(2, j)/j is flat at 2 — no decay.
        let k = K::multiplicative();
        let prof = k.sublinearity_profile(2, 64).unwrap();
        assert!(prof.iter().all(|&v| v == 2.0));
    }

    #[test]
    fn sublinear_profiles_decay() {
        // Spot-check of the asymptotic a(i,j)/j -> 0 between j = 2^8 and 2^16.
        let specs: Vec<K> = vec![
            K::constant(2.0).unwrap(),
            K::sum_power(1.0, 0.5).unwrap(),
            K::product_power(1.0, 0.3, 0.4).unwrap(),
        ];
        for k in &specs {
            assert_eq!(k.classify().unwrap(), GrowthClass::Sublinear);
            for i in [1usize, 7, 33, 64] {
                let at = |j: usize| k.eval_unchecked(i, j) / j as f64;
                assert!(at(1 << 16) < at(1 << 8), "{} at i={i}", k.family_name());
            }
        }
    }

    #[test]
    fn growth_envelopes() {
        let c = 1.7;
        let gamma = 0.6;
        let k = K::sum_power(c, gamma).unwrap();
        for (i, j) in [(1usize, 1usize), (5, 9), (100, 3), (64, 512)] {
            let bound = c * ((i as f64).powf(gamma) + (j as f64).powf(gamma));
            assert_eq!(k.eval_unchecked(i, j), bound);
        }
        let (ct, a, b) = (0.8, 0.3, 0.6);
        let k = K::product_power(ct, a, b).unwrap();
        for (i, j) in [(1usize, 1usize), (5, 9), (100, 3), (64, 512)] {
            let m = a.max(b);
            let bound = ct * 2.0 * ((i * j) as f64).powf(m);
            assert!(k.eval_unchecked(i, j) <= bound * (1.0 + 1e-12));
        }
    }

    #[test]
    fn table_lookup_and_range_errors() {
        let k = K::table(3, vec![0.0, 1.0, 2.0, 1.0, 5.0, 3.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(k.eval(2, 3).unwrap(), 3.0);
        assert_eq!(k.eval(3, 2).unwrap(), 3.0);
        assert!(matches!(k.eval(4, 1), Err(Error::TableIndexOutOfRange { .. })));
        assert!(matches!(k.eval(0, 1), Err(Error::ZeroKernelIndex { .. })));
        assert!(k.check_range(3).is_ok());
        assert!(k.check_range(4).is_err());
    }

    #[test]
    fn asymmetric_table_rejected() {
        let r = K::table(2, vec![1.0, 2.0, 2.5, 3.0]);
        assert!(matches!(r, Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn table_csv_round_trip() {
        let csv = "i,j,a\n1,1,0.5\n1,2,1.5\n2,1,1.5\n2,2,2.5\n";
        let k = K::table_from_csv(2, csv).unwrap();
        assert_eq!(k.eval(1, 2).unwrap(), 1.5);
        assert_eq!(k.n_max(), Some(2));

        let bad = "i,j,a\n1,1,0.5\n2,1,1.5\n";
        assert!(K::table_from_csv(2, bad).is_err());
    }
}
