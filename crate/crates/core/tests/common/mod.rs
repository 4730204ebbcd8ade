#![allow(dead_code)]

//! Shared oracles for the integration suites, independent of the assembly
//! and solver code they check.

/// Plain bisection to |hi - lo| <= tol; f(lo) and f(hi) must bracket a root.
pub fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let flo = f(lo);
    assert!(
        flo * f(hi) <= 0.0,
        "bisection bracket invalid: f({lo}) = {flo}, f({hi}) = {}",
        f(hi)
    );
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if f(lo) * f(mid) <= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Slope m of the one-dimensional solution u = m·x of the homogeneous
/// (g = 0, r = 0, β = 0) transfer problem on the unit square: the flux
/// m^{p-1} + μ m^{q-1} through Γ3 balances the transfer term
/// α ω (b - m)^{p-1}.
pub fn flux_balance_root(p: f64, q: f64, mu: f64, alpha: f64, omega: f64, b: f64) -> f64 {
    let h = |m: f64| m.powf(p - 1.0) + mu * m.powf(q - 1.0) - alpha * omega * (b - m).powf(p - 1.0);
    bisect(h, 0.0, b, 1e-12 * b.max(1.0))
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}
