//! Correlation kernels used throughout the pipeline.
//!
//! Everything here is hand-rolled on purpose: Pearson and Spearman
//! coefficients, two-sided p-values from the Student-t approximation
//! (via the regularized incomplete beta function), and the significance
//! star convention used in reports. An exact permutation p-value is
//! provided for small samples so the t approximation can be sanity-checked.

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::float::Real;

/// Minimum sample count for a defined correlation p-value (need n - 2 >= 1).
pub const MIN_SAMPLES: usize = 3;

/// Largest n for which [`spearman_exact`] will enumerate all permutations.
pub const MAX_EXACT_N: usize = 10;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum StatsError {
    #[error("input lengths differ ({left} vs {right})")]
    LengthMismatch { left: usize, right: usize },
    #[error("need at least {min} samples, got {got}")]
    TooFewSamples { min: usize, got: usize },
    #[error("correlation undefined: {side} input is constant")]
    ConstantInput { side: &'static str },
    #[error("exact permutation p-value supports n <= {max}, got {got}")]
    PermutationTooLarge { max: usize, got: usize },
}

/// A correlation coefficient with its two-sided p-value and sample count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrResult<T> {
    /// Correlation coefficient in [-1, 1].
    pub r: T,
    /// Two-sided p-value in [0, 1].
    pub p: T,
    /// Number of samples the coefficient was computed from.
    pub n: usize,
}

/// Significance stars: `***` p < .01, `**` p < .05, `*` p < .1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub enum Stars {
    #[default]
    None,
    One,
    Two,
    Three,
}

impl Stars {
    pub fn as_str(self) -> &'static str {
        match self {
            Stars::None => "",
            Stars::One => "*",
            Stars::Two => "**",
            Stars::Three => "***",
        }
    }
}

impl std::fmt::Display for Stars {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Serialize for Stars {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for Stars {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        match s.as_str() {
            "" => Ok(Stars::None),
            "*" => Ok(Stars::One),
            "**" => Ok(Stars::Two),
            "***" => Ok(Stars::Three),
            other => Err(serde::de::Error::custom(format!(
                "invalid star marker {other:?}"
            ))),
        }
    }
}

/// Maps a two-sided p-value to its star marker.
///
/// Boundaries are strict: p = 0.01 earns `**`, not `***`, and p = 0.1 earns
/// nothing.
pub fn stars<T: Real>(p: T) -> Stars {
    if p < T::of(0.01) {
        Stars::Three
    } else if p < T::of(0.05) {
        Stars::Two
    } else if p < T::of(0.1) {
        Stars::One
    } else {
        Stars::None
    }
}

/// Arithmetic mean. Precondition: `values` is non-empty.
pub fn mean<T: Real>(values: &[T]) -> T {
    debug_assert!(!values.is_empty());
    values.iter().copied().sum::<T>() / T::of_usize(values.len())
}

/// Median by sorting a copy; even lengths average the two middle values.
/// Precondition: `values` is non-empty and free of NaN.
pub fn median<T: Real>(values: &[T]) -> T {
    debug_assert!(!values.is_empty());
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("median input must not be NaN"));
    let mid = sorted.len() / 2;
    if sorted.len() % 2 == 1 {
        sorted[mid]
    } else {
        (sorted[mid - 1] + sorted[mid]) / T::of(2.0)
    }
}

/// Mean and population standard deviation (the 1/n convention).
/// Precondition: `values` is non-empty.
pub fn mean_and_population_std<T: Real>(values: &[T]) -> (T, T) {
    let m = mean(values);
    let var = values
        .iter()
        .map(|&v| {
            let d = v - m;
            d * d
        })
        .sum::<T>()
        / T::of_usize(values.len());
    (m, var.sqrt())
}

fn check_lengths<T>(x: &[T], y: &[T]) -> Result<(), StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    if x.len() < MIN_SAMPLES {
        return Err(StatsError::TooFewSamples {
            min: MIN_SAMPLES,
            got: x.len(),
        });
    }
    Ok(())
}

/// Pearson coefficient from centered sums, without a p-value.
fn pearson_r<T: Real>(x: &[T], y: &[T]) -> Result<T, StatsError> {
    let mx = mean(x);
    let my = mean(y);
    let mut sxy = T::zero();
    let mut sxx = T::zero();
    let mut syy = T::zero();
    for (&xi, &yi) in x.iter().zip(y) {
        let dx = xi - mx;
        let dy = yi - my;
        sxy = sxy + dx * dy;
        sxx = sxx + dx * dx;
        syy = syy + dy * dy;
    }
    if sxx == T::zero() {
        return Err(StatsError::ConstantInput { side: "left" });
    }
    if syy == T::zero() {
        return Err(StatsError::ConstantInput { side: "right" });
    }
    let r = sxy / (sxx * syy).sqrt();
    // Rounding can push a perfect linear relation just past +/-1.
    Ok(r.min(T::one()).max(-T::one()))
}

/// Two-sided p-value for a correlation coefficient under the Student-t
/// approximation with n - 2 degrees of freedom.
///
/// Substituting t = r * sqrt(df / (1 - r^2)) into the t survival function
/// collapses to the regularized incomplete beta at x = 1 - r^2, which is what
/// gets evaluated here (no intermediate t, so r = +/-1 cleanly yields p = 0).
pub fn p_two_sided<T: Real>(r: T, n: usize) -> T {
    debug_assert!(n >= MIN_SAMPLES);
    let df = T::of_usize(n - 2);
    let x = T::one() - r * r;
    if x <= T::zero() {
        return T::zero();
    }
    reg_inc_beta(df / T::of(2.0), T::of(0.5), x)
        .min(T::one())
        .max(T::zero())
}

/// Pearson product-moment correlation with a two-sided p-value.
///
/// Errors on length mismatch, fewer than [`MIN_SAMPLES`] samples, or a
/// constant input (zero variance).
pub fn pearson<T: Real>(x: &[T], y: &[T]) -> Result<CorrResult<T>, StatsError> {
    check_lengths(x, y)?;
    let r = pearson_r(x, y)?;
    Ok(CorrResult {
        r,
        p: p_two_sided(r, x.len()),
        n: x.len(),
    })
}

/// Ranks with ties averaged (1-based), the convention Spearman needs.
/// Precondition: `values` is free of NaN.
pub fn average_ranks<T: Real>(values: &[T]) -> Vec<T> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        values[i]
            .partial_cmp(&values[j])
            .expect("rank input must not be NaN")
    });
    let mut ranks = vec![T::zero(); n];
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // Tied block occupies ranks start+1 ..= end; everyone gets the mean.
        let tied_rank = T::of_usize(start + 1 + end) / T::of(2.0);
        for &idx in &order[start..end] {
            ranks[idx] = tied_rank;
        }
        start = end;
    }
    ranks
}

/// Spearman rank correlation: Pearson applied to average ranks, with the
/// same Student-t p-value approximation.
pub fn spearman<T: Real>(x: &[T], y: &[T]) -> Result<CorrResult<T>, StatsError> {
    check_lengths(x, y)?;
    let rx = average_ranks(x);
    let ry = average_ranks(y);
    let r = pearson_r(&rx, &ry)?;
    Ok(CorrResult {
        r,
        p: p_two_sided(r, x.len()),
        n: x.len(),
    })
}

/// Spearman coefficient with an exact permutation p-value: the fraction of
/// the n! orderings of `y` whose |rho| is at least the observed |rho|.
///
/// Only feasible for tiny samples; capped at [`MAX_EXACT_N`]. Intended as an
/// oracle for validating the t approximation, not for production use.
pub fn spearman_exact<T: Real>(x: &[T], y: &[T]) -> Result<CorrResult<T>, StatsError> {
    check_lengths(x, y)?;
    if x.len() > MAX_EXACT_N {
        return Err(StatsError::PermutationTooLarge {
            max: MAX_EXACT_N,
            got: x.len(),
        });
    }
    let rx = average_ranks(x);
    let ry = average_ranks(y);
    let observed = pearson_r(&rx, &ry)?;
    // |rho| comparisons need a hair of slack: permuted copies of the observed
    // arrangement must count as "at least as extreme" despite rounding.
    let cutoff = observed.abs() - T::of(1e-12);

    let mut perm = ry.clone();
    let mut hits = 0usize;
    let mut total = 0usize;
    let mut counts = vec![0usize; perm.len()];
    // Heap's algorithm, iterative form: visits every permutation exactly once.
    let mut tally = |p: &[T]| {
        total += 1;
        if let Ok(r) = pearson_r(&rx, p) {
            if r.abs() >= cutoff {
                hits += 1;
            }
        }
    };
    tally(&perm);
    let mut i = 1;
    while i < perm.len() {
        if counts[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(counts[i], i);
            }
            tally(&perm);
            counts[i] += 1;
            i = 1;
        } else {
            counts[i] = 0;
            i += 1;
        }
    }

    Ok(CorrResult {
        r: observed,
        p: T::of_usize(hits) / T::of_usize(total),
        n: x.len(),
    })
}

/// CDF of the Student-t distribution with `df` degrees of freedom.
pub fn student_t_cdf<T: Real>(t: T, df: T) -> T {
    let x = df / (df + t * t);
    let half = T::of(0.5);
    let tail = half * reg_inc_beta(half * df, half, x);
    if t >= T::zero() {
        T::one() - tail
    } else {
        tail
    }
}

/// Regularized incomplete beta function I_x(a, b) for a, b > 0 and x in [0, 1].
///
/// Continued-fraction evaluation (modified Lentz) on whichever side of the
/// symmetry point converges fast, using the identity
/// I_x(a, b) = 1 - I_{1-x}(b, a).
pub fn reg_inc_beta<T: Real>(a: T, b: T, x: T) -> T {
    assert!(a > T::zero() && b > T::zero(), "beta parameters must be positive");
    if x <= T::zero() {
        return T::zero();
    }
    if x >= T::one() {
        return T::one();
    }
    let one = T::one();
    let front = (ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b)
        + a * x.ln()
        + b * (one - x).ln())
    .exp();
    if x < (a + one) / (a + b + T::of(2.0)) {
        front * beta_cont_frac(a, b, x) / a
    } else {
        one - front * beta_cont_frac(b, a, one - x) / b
    }
}

/// Continued fraction for the incomplete beta, evaluated with modified Lentz.
fn beta_cont_frac<T: Real>(a: T, b: T, x: T) -> T {
    let one = T::one();
    let two = T::of(2.0);
    // Floor keeps denominators away from zero without disturbing the result.
    let tiny = T::of(1e-300).max(T::min_positive_value());
    let eps = T::of(1e-15).max(T::epsilon());

    let qab = a + b;
    let qap = a + one;
    let qam = a - one;
    let mut c = one;
    let mut d = one - qab * x / qap;
    if d.abs() < tiny {
        d = tiny;
    }
    d = one / d;
    let mut h = d;
    for m in 1..=300 {
        let mf = T::of_usize(m);
        let m2 = two * mf;
        // Even step.
        let aa = mf * (b - mf) * x / ((qam + m2) * (a + m2));
        d = one + aa * d;
        if d.abs() < tiny {
            d = tiny;
        }
        c = one + aa / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = one / d;
        h = h * d * c;
        // Odd step.
        let aa = -(a + mf) * (qab + mf) * x / ((a + m2) * (qap + m2));
        d = one + aa * d;
        if d.abs() < tiny {
            d = tiny;
        }
        c = one + aa / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = one / d;
        let delta = d * c;
        h = h * delta;
        if (delta - one).abs() < eps {
            break;
        }
    }
    h
}

/// Natural log of the gamma function (Lanczos, g = 7, 9 coefficients).
pub fn ln_gamma<T: Real>(z: T) -> T {
    const COEFFS: [f64; 9] = [
        0.999_999_999_999_809_93,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_13,
        -176.615_029_162_140_59,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_571_6e-6,
        1.505_632_735_149_311_6e-7,
    ];
    let one = T::one();
    let half = T::of(0.5);
    if z < half {
        // Reflection formula keeps the series in its accurate range.
        let pi = T::of(std::f64::consts::PI);
        return (pi / (pi * z).sin()).ln() - ln_gamma(one - z);
    }
    let z = z - one;
    let mut acc = T::of(COEFFS[0]);
    for (i, &c) in COEFFS.iter().enumerate().skip(1) {
        acc = acc + T::of(c) / (z + T::of_usize(i));
    }
    let t = z + T::of(7.5);
    T::of(0.5 * (2.0 * std::f64::consts::PI).ln()) + (z + half) * t.ln() - t + acc.ln()
}
