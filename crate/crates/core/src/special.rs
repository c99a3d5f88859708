//! Special functions: log-gamma, digamma, log-beta, and stable log-space sums.
//!
//! Both `ln_gamma` and `digamma` use the standard recurrence-plus-asymptotic
//! scheme: shift the argument above a threshold with the recurrence, then
//! evaluate the Stirling / asymptotic series. Absolute error is below 1e-13
//! for arguments >= 1e-3, which covers every concentration parameter and
//! count this crate produces.

/// Threshold above which the asymptotic series is accurate to ~1e-14.
const ASYMPTOTIC_CUTOFF: f64 = 12.0;

/// Natural log of the gamma function for x > 0.
pub fn ln_gamma(x: f64) -> f64 {
    assert!(x > 0.0, "ln_gamma requires x > 0, got {x}");
    let mut shift = 0.0;
    let mut z = x;
    while z < ASYMPTOTIC_CUTOFF {
        shift -= z.ln();
        z += 1.0;
    }
    // Stirling series with Bernoulli-number coefficients.
    let inv = 1.0 / z;
    let inv2 = inv * inv;
    let series = inv
        * (1.0 / 12.0
            + inv2
                * (-1.0 / 360.0
                    + inv2 * (1.0 / 1260.0 + inv2 * (-1.0 / 1680.0 + inv2 * (1.0 / 1188.0)))));
    shift + (z - 0.5) * z.ln() - z + 0.5 * (2.0 * std::f64::consts::PI).ln() + series
}

/// Digamma function psi(x) = d/dx ln Gamma(x) for x > 0.
pub fn digamma(x: f64) -> f64 {
    assert!(x > 0.0, "digamma requires x > 0, got {x}");
    let mut acc = 0.0;
    let mut z = x;
    while z < ASYMPTOTIC_CUTOFF {
        acc -= 1.0 / z;
        z += 1.0;
    }
    let inv = 1.0 / z;
    let inv2 = inv * inv;
    // psi(z) ~ ln z - 1/(2z) - sum B_{2n} / (2n z^{2n})
    let series = inv2
        * (1.0 / 12.0
            - inv2
                * (1.0 / 120.0
                    - inv2 * (1.0 / 252.0 - inv2 * (1.0 / 240.0 - inv2 * (1.0 / 132.0)))));
    acc + z.ln() - 0.5 * inv - series
}

/// Log of the multivariate beta function: sum ln Gamma(a_i) - ln Gamma(sum a_i).
pub fn ln_beta(a: &[f64]) -> f64 {
    let total: f64 = a.iter().sum();
    a.iter().map(|&x| ln_gamma(x)).sum::<f64>() - ln_gamma(total)
}

/// ln(exp(a) + exp(b)) without overflow. Either argument may be -inf.
/// When one side trails by more than 45 nats its contribution is below
/// 3e-20 relative and is dropped, which is invisible at f64 resolution.
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    let diff = lo - hi;
    if !(diff > -45.0) {
        // covers lo = -inf and, when both are -inf, diff = NaN
        return hi;
    }
    hi + diff.exp().ln_1p()
}

/// ln(sum exp(v)) over a slice; returns -inf on an empty or all -inf slice.
pub fn log_sum_exp(v: &[f64]) -> f64 {
    let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if hi == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let s: f64 = v.iter().map(|&x| (x - hi).exp()).sum();
    hi + s.ln()
}

/// Exponentiates log-weights into a normalized distribution, in place.
pub fn softmax_in_place(v: &mut [f64]) {
    let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for x in v.iter_mut() {
        *x = (*x - hi).exp();
        s += *x;
    }
    for x in v.iter_mut() {
        *x /= s;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

    // Independent oracle for psi at positive integers: psi(n) = H_{n-1} - gamma.
    fn digamma_integer_oracle(n: u32) -> f64 {
        let harmonic: f64 = (1..n).map(|k| 1.0 / k as f64).sum();
        harmonic - EULER_GAMMA
    }

    #[test]
    fn digamma_matches_harmonic_numbers() {
        for n in 1..30 {
            let got = digamma(n as f64);
            let want = digamma_integer_oracle(n);
            assert!(
                (got - want).abs() < 1e-12,
                "psi({n}) = {got}, oracle {want}"
            );
        }
    }

    #[test]
    fn digamma_half_integer() {
        // psi(1/2) = -gamma - 2 ln 2
        let want = -EULER_GAMMA - 2.0 * std::f64::consts::LN_2;
        assert!((digamma(0.5) - want).abs() < 1e-12);
    }

    #[test]
    fn digamma_recurrence_small_arguments() {
        // psi(x + 1) = psi(x) + 1/x, checked down at the 1e-3 end of the domain.
        for &x in &[1e-3, 7e-3, 0.05, 0.3, 0.9, 2.7] {
            let lhs = digamma(x + 1.0);
            let rhs = digamma(x) + 1.0 / x;
            assert!(
                (lhs - rhs).abs() <= 1e-12 * rhs.abs().max(1.0),
                "recurrence off at {x}: {lhs} vs {rhs}"
            );
        }
    }

    #[test]
    fn ln_gamma_matches_factorials() {
        let mut fact = 1.0f64;
        for n in 1..25u32 {
            // Gamma(n) = (n-1)!
            let got = ln_gamma(n as f64);
            assert!(
                (got - fact.ln()).abs() < 1e-12 * fact.ln().abs().max(1.0),
                "lnGamma({n})"
            );
            fact *= n as f64;
        }
    }

    #[test]
    fn ln_gamma_half() {
        let want = std::f64::consts::PI.sqrt().ln();
        assert!((ln_gamma(0.5) - want).abs() < 1e-13);
    }

    #[test]
    fn ln_beta_binary() {
        // B(2,1) = 1/2, B(3,2) = 1/12
        assert!((ln_beta(&[2.0, 1.0]) - (0.5f64).ln()).abs() < 1e-13);
        assert!((ln_beta(&[3.0, 2.0]) - (1.0f64 / 12.0).ln()).abs() < 1e-13);
    }

    #[test]
    fn log_add_exp_basic() {
        assert!((log_add_exp(0.0, 0.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(log_add_exp(f64::NEG_INFINITY, 3.0), 3.0);
        let big = log_add_exp(-1000.0, -1000.0);
        assert!((big - (-1000.0 + std::f64::consts::LN_2)).abs() < 1e-12);
    }

    #[test]
    fn softmax_normalizes() {
        let mut v = vec![-800.0, -801.0, -802.0];
        softmax_in_place(&mut v);
        let s: f64 = v.iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
        assert!(v[0] > v[1] && v[1] > v[2]);
    }
}
