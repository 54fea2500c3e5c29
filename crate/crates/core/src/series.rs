//! Composition sums through truncated exponential generating series.
//!
//! For a coefficient sequence `c_0, c_1, ...` the multinomial composition sum
//!
//! ```text
//!   Σ_{t_1+…+t_z = i} i!/(t_1!…t_z!) · c_{t_1}…c_{t_z}
//! ```
//!
//! equals `i! · [x^i] (Σ_j c_j x^j / j!)^z`. Powers are taken by repeated
//! squaring on series truncated at the highest degree needed, so the cost is
//! `O(L² log z)` instead of the `O(z^L)` of naive enumeration.

use crate::scalar::{factorial, Scalar};

/// Truncated product of two ordinary power series.
fn mul_truncated<S: Scalar>(a: &[S], b: &[S], deg: usize) -> Vec<S> {
    let mut out = vec![S::zero(); deg + 1];
    for (i, ai) in a.iter().enumerate().take(deg + 1) {
        if ai.is_zero() {
            continue;
        }
        for (j, bj) in b.iter().enumerate().take(deg + 1 - i) {
            out[i + j] = out[i + j].clone() + ai.clone() * bj.clone();
        }
    }
    out
}

/// Ordinary coefficients of `(Σ_{j ≤ max_part} c_j x^j / j!)^z` up to `deg`.
///
/// `max_part` restricts every part of the composition (the `t_i < ℓ`
/// constraint is `max_part = ℓ - 1`).
pub fn egf_power<S: Scalar>(c: &[S], max_part: usize, z: u64, deg: usize) -> Vec<S> {
    let mut base = vec![S::zero(); deg + 1];
    for (j, cj) in c.iter().enumerate().take(max_part.min(deg) + 1) {
        base[j] = cj.clone() / factorial::<S>(j);
    }
    let mut acc = vec![S::zero(); deg + 1];
    acc[0] = S::one();
    let mut e = z;
    while e > 0 {
        if e & 1 == 1 {
            acc = mul_truncated(&acc, &base, deg);
        }
        e >>= 1;
        if e > 0 {
            base = mul_truncated(&base, &base, deg);
        }
    }
    acc
}

/// All composition sums `i = 0..=deg` for `z` parts, as an EGF-to-value map.
pub fn composition_sums<S: Scalar>(c: &[S], max_part: usize, z: u64, deg: usize) -> Vec<S> {
    egf_power(c, max_part, z, deg)
        .into_iter()
        .enumerate()
        .map(|(i, a)| a * factorial::<S>(i))
        .collect()
}

/// Single composition sum of `i` into `z` parts, parts bounded by `max_part`.
pub fn composition_sum<S: Scalar>(c: &[S], max_part: usize, z: u64, i: usize) -> S {
    composition_sums(c, max_part, z, i).pop().unwrap_or_else(S::zero)
}
