//! Trigamma function and the tail series used by the window bound.

/// Trigamma ψ′(x) for x > 0.
///
/// Shifts the argument upward with ψ′(x) = ψ′(x+1) + 1/x² until x ≥ 10 and
/// then applies the asymptotic expansion in Bernoulli numbers.
pub fn trigamma(x: f64) -> f64 {
    assert!(x > 0.0, "trigamma requires a positive argument");
    let mut x = x;
    let mut acc = 0.0;
    while x < 10.0 {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    // 1/x + 1/(2x²) + Σ B_2k / x^(2k+1)
    let series = inv2
        * (1.0 / 6.0
            + inv2
                * (-1.0 / 30.0
                    + inv2 * (1.0 / 42.0 + inv2 * (-1.0 / 30.0 + inv2 * (5.0 / 66.0 + inv2 * (-691.0 / 2730.0 + inv2 * 7.0 / 6.0))))));
    acc + inv + 0.5 * inv2 + inv * series
}

/// Upper bound on Σ_{n≥0} 1 / ((a+n)·sqrt((a+n)² − b²)) for a > b ≥ 0.
pub fn tail_series_bound(a: f64, b: f64) -> f64 {
    debug_assert!(a > b && b >= 0.0);
    let r = b / a;
    trigamma(a) / (1.0 - r * r).sqrt()
}

/// Partial sum of the same series over the first `terms` terms.
pub fn tail_series_partial(a: f64, b: f64, terms: usize) -> f64 {
    (0..terms)
        .map(|n| {
            let x = a + n as f64;
            1.0 / (x * (x * x - b * b).sqrt())
        })
        .sum()
}
