//! Hurwitz zeta function for real `s > 1` and `q > 0`.

/// B_2, B_4, ..., B_14.
const BERNOULLI: [f64; 7] = [
    1.0 / 6.0,
    -1.0 / 30.0,
    1.0 / 42.0,
    -1.0 / 30.0,
    5.0 / 66.0,
    -691.0 / 2730.0,
    7.0 / 6.0,
];

/// `ζ(s, q) = Σ_{k≥0} (q + k)^(-s)` by direct summation up to a shift point
/// followed by the Euler–Maclaurin tail.
pub fn hurwitz_zeta(s: f64, q: f64) -> f64 {
    assert!(s > 1.0 && q > 0.0, "hurwitz_zeta needs s > 1 and q > 0, got s={s}, q={q}");
    let shift = (12.0 + s).max(q);
    let mut sum = 0.0;
    let mut a = q;
    while a < shift {
        sum += a.powf(-s);
        a += 1.0;
    }
    // Tail from `a`: integral + half term + Bernoulli corrections.
    let a_pow = a.powf(-s);
    sum += a * a_pow / (s - 1.0) + 0.5 * a_pow;
    let mut rising = s; // s (s+1) ... (s+2j-2)
    let mut term = a_pow / a; // a^(-s-1)
    let mut factorial = 2.0; // (2j)!
    for (j, b) in BERNOULLI.iter().enumerate() {
        let j = j + 1;
        sum += b / factorial * rising * term;
        let k = 2 * j;
        rising *= (s + k as f64 - 1.0) * (s + k as f64);
        term /= a * a;
        factorial *= ((k + 1) * (k + 2)) as f64;
    }
    sum
}
