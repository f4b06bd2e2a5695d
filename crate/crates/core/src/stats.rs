//! Betting and significance arithmetic for scored picks.

/// Profit per unit staked on a winning -110 bet.
pub const WIN_PAYOUT: f64 = 100.0 / 110.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("no scored picks")]
pub struct NoPicks;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoiSummary {
    /// Total profit in stake currency.
    pub profit: f64,
    /// Profit over total staked, as a fraction (0.184 for +18.4%).
    pub roi: f64,
}

impl RoiSummary {
    pub fn percent(&self) -> f64 {
        self.roi * 100.0
    }
}

/// Flat-stake return at -110 odds.
pub fn roi(wins: u32, losses: u32, stake: f64) -> Result<RoiSummary, NoPicks> {
    let n = wins + losses;
    if n == 0 {
        return Err(NoPicks);
    }
    let profit = f64::from(wins) * stake * WIN_PAYOUT - f64::from(losses) * stake;
    Ok(RoiSummary {
        profit,
        roi: profit / (stake * f64::from(n)),
    })
}

/// Round to one decimal place (half away from zero).
pub fn round_tenth(x: f64) -> f64 {
    libm::round(x * 10.0) / 10.0
}

/// Largest `n` for which the p = 1/2 tail is summed in exact integers.
const EXACT_HALF_MAX_N: u64 = 120;

/// One-sided exact binomial tail `P(X >= k)` for `X ~ Bin(n, p0)`.
pub fn binomial_p(n: u64, k: u64, p0: f64) -> f64 {
    if k == 0 {
        return 1.0;
    }
    if k > n {
        return 0.0;
    }
    if p0 <= 0.0 {
        return 0.0;
    }
    if p0 >= 1.0 {
        return 1.0;
    }
    if p0 == 0.5 && n <= EXACT_HALF_MAX_N {
        return half_tail_exact(n, k);
    }
    binomial_tail_float(n, k, p0)
}

fn half_tail_exact(n: u64, k: u64) -> f64 {
    let mut coeff: u128 = 1;
    let mut total: u128 = 0;
    for i in 0..=n {
        if i >= k {
            total += coeff;
        }
        coeff = coeff * u128::from(n - i) / u128::from(i + 1);
    }
    // u128 -> f64 rounds to nearest; scaling by 2^-n is exact.
    libm::ldexp(total as f64, -(n as i32))
}

fn ln_choose(n: u64, k: u64) -> f64 {
    libm::lgamma(n as f64 + 1.0) - libm::lgamma(k as f64 + 1.0) - libm::lgamma((n - k) as f64 + 1.0)
}

fn ln_pmf(n: u64, i: u64, p: f64) -> f64 {
    ln_choose(n, i) + i as f64 * libm::log(p) + (n - i) as f64 * libm::log1p(-p)
}

/// Tail by term-ratio summation anchored at one log-space pmf value. Sums
/// away from the mode so terms shrink; the lower tail is complemented.
pub fn binomial_tail_float(n: u64, k: u64, p: f64) -> f64 {
    if k == 0 {
        return 1.0;
    }
    if k > n {
        return 0.0;
    }
    let odds = p / (1.0 - p);
    let mode = libm::floor((n as f64 + 1.0) * p) as u64;
    if k > mode {
        let mut term = 1.0;
        let mut sum = 1.0;
        for i in k..n {
            term *= (n - i) as f64 / (i + 1) as f64 * odds;
            sum += term;
            if term < sum * 1e-17 {
                break;
            }
        }
        (libm::exp(ln_pmf(n, k, p)) * sum).clamp(0.0, 1.0)
    } else {
        let top = k - 1;
        let mut term = 1.0;
        let mut sum = 1.0;
        for i in (1..=top).rev() {
            term *= i as f64 / (n - i + 1) as f64 / odds;
            sum += term;
            if term < sum * 1e-17 {
                break;
            }
        }
        (1.0 - libm::exp(ln_pmf(n, top, p)) * sum).clamp(0.0, 1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roi_examples() {
        let all = roi(31, 19, 100.0).unwrap();
        assert_eq!(round_tenth(all.percent()), 18.4);
        assert!((all.profit - 918.0).abs() < 0.5);
        assert_eq!(round_tenth(roi(8, 3, 100.0).unwrap().percent()), 38.8);
        let even = roi(1, 1, 100.0).unwrap();
        assert!((even.percent() - (100.0 / 1.1 - 100.0) / 200.0 * 100.0).abs() < 1e-12);
        assert_eq!(round_tenth(even.percent()), -4.5);
        assert_eq!(roi(0, 0, 100.0), Err(NoPicks));
    }

    #[test]
    fn roi_edges() {
        assert_eq!(roi(0, 7, 100.0).unwrap().roi, -1.0);
        assert!((roi(5, 0, 100.0).unwrap().roi - 100.0 / 110.0).abs() < 1e-15);
    }

    #[test]
    fn binomial_spot_values() {
        assert_eq!(binomial_p(11, 8, 0.5), 232.0 / 2048.0);
        assert_eq!(binomial_p(12, 5, 0.5), 3302.0 / 4096.0);
        assert_eq!(binomial_p(1, 1, 0.5), 0.5);
        assert!((binomial_p(50, 31, 0.5) - 0.059).abs() < 0.0005);
        assert_eq!(binomial_p(10, 0, 0.5), 1.0);
        assert_eq!(binomial_p(10, 11, 0.5), 0.0);
    }

    #[test]
    fn float_path_agrees_with_exact_path() {
        for n in 1..=120 {
            for k in 0..=n {
                let exact = binomial_p(n, k, 0.5);
                let float = binomial_tail_float(n, k, 0.5);
                assert!((exact - float).abs() < 1e-12, "n={n} k={k}");
            }
        }
    }

    #[test]
    fn large_n_stays_bounded() {
        let p = binomial_p(10_000, 5_100, 0.5);
        assert!(p > 0.0 && p < 0.03);
        assert!((binomial_p(10_000, 1, 0.5) - 1.0).abs() < 1e-12);
        assert!(binomial_p(10_000, 9_000, 0.5) < 1e-100);
    }

    #[test]
    fn degenerate_probabilities() {
        assert_eq!(binomial_p(5, 3, 0.0), 0.0);
        assert_eq!(binomial_p(5, 3, 1.0), 1.0);
    }
}
