//! Derivative jets of iterated generating functions.
//!
//! A jet is `[h(t), h'(t), ..., h^{(L)}(t)]`. Composing with a polynomial `f`
//! uses Faà di Bruno over the integer partitions of each order, tabulated
//! once. The log-space variant keeps `ln` of every entry, which is what the
//! `r ≥ 2` asymptotics need once `f^p(t)` collapses doubly exponentially.

use std::sync::OnceLock;

use super::MarkedGWLaw;
use crate::error::{Error, Result};

pub const DEFAULT_MAX_ORDER: usize = 6;

#[derive(Debug, Clone)]
struct Term {
    coef: f64,
    /// number of blocks, i.e. which derivative of the outer function
    k: usize,
    /// (block size j, multiplicity m_j)
    blocks: Vec<(usize, u32)>,
}

/// Faà di Bruno coefficients `n! / Π (m_j! (j!)^{m_j})` for `n ≤ max_order`.
#[derive(Debug, Clone)]
pub struct FaaDiBruno {
    terms: Vec<Vec<Term>>,
}

fn fact(n: usize) -> f64 {
    (1..=n).map(|i| i as f64).product()
}

fn partitions(n: usize, max_part: usize, acc: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
    if n == 0 {
        out.push(acc.clone());
        return;
    }
    for part in (1..=max_part.min(n)).rev() {
        acc.push(part);
        partitions(n - part, part, acc, out);
        acc.pop();
    }
}

impl FaaDiBruno {
    pub fn new(max_order: usize) -> Self {
        let mut terms = vec![Vec::new()];
        for n in 1..=max_order {
            let mut parts = Vec::new();
            partitions(n, n, &mut Vec::new(), &mut parts);
            let row = parts
                .into_iter()
                .map(|p| {
                    let mut blocks: Vec<(usize, u32)> = Vec::new();
                    for j in p.iter().copied() {
                        match blocks.iter_mut().find(|(b, _)| *b == j) {
                            Some(entry) => entry.1 += 1,
                            None => blocks.push((j, 1)),
                        }
                    }
                    let denom: f64 =
                        blocks.iter().map(|&(j, m)| fact(m as usize) * fact(j).powi(m as i32)).product();
                    Term { coef: (fact(n) / denom).round(), k: p.len(), blocks }
                })
                .collect();
            terms.push(row);
        }
        FaaDiBruno { terms }
    }

    pub fn max_order(&self) -> usize {
        self.terms.len() - 1
    }

    /// Jet of `f ∘ h` from the outer derivatives `f^{(i)}(h(t))` and the jet of `h`.
    pub fn compose(&self, outer: &[f64], inner: &[f64]) -> Vec<f64> {
        let order = inner.len() - 1;
        let mut out = vec![0.0; order + 1];
        out[0] = outer[0];
        for (n, slot) in out.iter_mut().enumerate().skip(1) {
            *slot = self.terms[n]
                .iter()
                .map(|t| {
                    t.blocks.iter().fold(t.coef * outer[t.k], |acc, &(j, m)| acc * inner[j].powi(m as i32))
                })
                .sum();
        }
        out
    }

    /// Same as [`compose`](Self::compose) with every entry given and returned as a logarithm.
    pub fn compose_log(&self, outer: &[f64], inner: &[f64]) -> Vec<f64> {
        let order = inner.len() - 1;
        let mut out = vec![f64::NEG_INFINITY; order + 1];
        out[0] = outer[0];
        for (n, slot) in out.iter_mut().enumerate().skip(1) {
            let logs: Vec<f64> = self.terms[n]
                .iter()
                .map(|t| {
                    t.blocks
                        .iter()
                        .fold(t.coef.ln() + outer[t.k], |acc, &(j, m)| acc + m as f64 * inner[j])
                })
                .collect();
            *slot = log_sum_exp(&logs);
        }
        out
    }
}

fn default_table() -> &'static FaaDiBruno {
    static TABLE: OnceLock<FaaDiBruno> = OnceLock::new();
    TABLE.get_or_init(|| FaaDiBruno::new(DEFAULT_MAX_ORDER))
}

pub(crate) fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// A polynomial with nonnegative coefficients, `Σ a_k t^k`.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkedPgf {
    coeffs: Vec<f64>,
}

impl MarkedPgf {
    pub fn new(coeffs: Vec<f64>) -> Self {
        MarkedPgf { coeffs }
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, a| acc * t + a)
    }

    /// `f^{(i)}(t)` for `i = 0..=order`.
    pub fn derivatives(&self, t: f64, order: usize) -> Vec<f64> {
        let mut c = self.coeffs.clone();
        let mut out = Vec::with_capacity(order + 1);
        for _ in 0..=order {
            out.push(c.iter().rev().fold(0.0, |acc, a| acc * t + a));
            c = c.iter().enumerate().skip(1).map(|(k, a)| k as f64 * a).collect();
        }
        out
    }

    /// `ln f^{(i)}(x)` given `ln x`; `-inf` where the derivative vanishes.
    pub fn log_derivatives(&self, ln_x: f64, order: usize) -> Vec<f64> {
        (0..=order)
            .map(|i| {
                let logs: Vec<f64> = self
                    .coeffs
                    .iter()
                    .enumerate()
                    .skip(i)
                    .filter(|(_, a)| **a > 0.0)
                    .map(|(k, a)| {
                        let falling: f64 = ((k - i + 1)..=k).map(|j| (j as f64).ln()).sum();
                        let power = if k == i { 0.0 } else { (k - i) as f64 * ln_x };
                        a.ln() + falling + power
                    })
                    .collect();
                log_sum_exp(&logs)
            })
            .collect()
    }

    /// Jet of the `p`-th iterate at `t`, orders `0..=order`.
    pub fn iterate_jet(&self, t: f64, p: u32, order: usize, table: &FaaDiBruno) -> Result<Vec<f64>> {
        if order > table.max_order() {
            return Err(Error::OrderTooLarge { order, max: table.max_order() });
        }
        let mut jet = vec![0.0; order + 1];
        jet[0] = t;
        if order >= 1 {
            jet[1] = 1.0;
        }
        for _ in 0..p {
            let outer = self.derivatives(jet[0], order);
            jet = table.compose(&outer, &jet);
        }
        Ok(jet)
    }

    /// Log-space jet of the `p`-th iterate at `t > 0`.
    pub fn iterate_log_jet(&self, t: f64, p: u32, order: usize, table: &FaaDiBruno) -> Result<Vec<f64>> {
        if order > table.max_order() {
            return Err(Error::OrderTooLarge { order, max: table.max_order() });
        }
        let mut jet = vec![f64::NEG_INFINITY; order + 1];
        jet[0] = t.ln();
        if order >= 1 {
            jet[1] = 0.0;
        }
        for _ in 0..p {
            let outer = self.log_derivatives(jet[0], order);
            jet = table.compose_log(&outer, &jet);
        }
        Ok(jet)
    }
}

/// Polynomial `f_s` (or `ψ` in zero-mark mode) of a finite law.
pub fn marked_pgf(law: &MarkedGWLaw, s: f64, zero_mark_mode: bool) -> Result<MarkedPgf> {
    law.pgf(if zero_mark_mode { 0.0 } else { s })
}

/// Jet `[(f_s^p)(t), ..., (f_s^p)^{(order)}(t)]`.
pub fn gen_fn_jet(law: &MarkedGWLaw, s: f64, t: f64, iterate_p: u32, order: usize, zero_mark_mode: bool) -> Result<Vec<f64>> {
    marked_pgf(law, s, zero_mark_mode)?.iterate_jet(t, iterate_p, order, default_table())
}

/// `(f_s^p)^{(order)}(t)`, or `(ψ^p)^{(order)}(t)` in zero-mark mode.
pub fn gen_fn_eval(law: &MarkedGWLaw, s: f64, t: f64, iterate_p: u32, order: usize, zero_mark_mode: bool) -> Result<f64> {
    Ok(gen_fn_jet(law, s, t, iterate_p, order, zero_mark_mode)?[order])
}
