//! Goodness-of-fit testing of samplers against exact tree laws.

use std::collections::HashMap;
use std::hash::Hash;

use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Categories with a smaller expected count are pooled.
pub const MIN_EXPECTED: f64 = 5.0;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChiSquareResult {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
    pub categories: usize,
    pub samples: u64,
    /// Samples that fell outside the listed support.
    pub unexpected: u64,
}

/// Pearson test of `observed` counts against category probabilities.
///
/// Probability not covered by `probs` forms one extra category. Sparse
/// categories are pooled, smallest first, until every pool expects at
/// least [`MIN_EXPECTED`] samples.
pub fn chi_square_gof(observed: &[u64], probs: &[f64], rest_observed: u64) -> ChiSquareResult {
    let n: u64 = observed.iter().sum::<u64>() + rest_observed;
    let nf = n as f64;
    let mut cats: Vec<(f64, f64)> =
        observed.iter().zip(probs).map(|(o, p)| (*o as f64, p * nf)).collect();
    let rest_p = (1.0 - probs.iter().sum::<f64>()).max(0.0);
    let impossible = observed.iter().zip(probs).any(|(o, p)| *o > 0 && *p <= 0.0);
    if impossible || (rest_observed > 0 && rest_p * nf <= 1e-9) {
        // an outcome the law cannot produce is conclusive on its own
        return ChiSquareResult {
            statistic: f64::INFINITY,
            dof: probs.len(),
            p_value: 0.0,
            categories: probs.len() + 1,
            samples: n,
            unexpected: rest_observed,
        };
    }
    if rest_p * nf > 1e-9 {
        cats.push((rest_observed as f64, rest_p * nf));
    }
    cats.sort_by(|a, b| a.1.partial_cmp(&b.1).expect("finite expectations"));
    let mut pooled: Vec<(f64, f64)> = Vec::new();
    let mut acc = (0.0, 0.0);
    for (o, e) in cats {
        acc = (acc.0 + o, acc.1 + e);
        if acc.1 >= MIN_EXPECTED {
            pooled.push(acc);
            acc = (0.0, 0.0);
        }
    }
    if acc.1 > 0.0 || acc.0 > 0.0 {
        match pooled.first_mut() {
            Some(first) => *first = (first.0 + acc.0, first.1 + acc.1),
            None => pooled.push(acc),
        }
    }
    let statistic: f64 = pooled
        .iter()
        .map(|(o, e)| if *e > 0.0 { (o - e).powi(2) / e } else if *o > 0.0 { f64::INFINITY } else { 0.0 })
        .sum();
    let dof = pooled.len().saturating_sub(1);
    let p_value = if !statistic.is_finite() {
        0.0
    } else if dof == 0 {
        1.0
    } else {
        1.0 - ChiSquared::new(dof as f64).expect("positive dof").cdf(statistic)
    };
    ChiSquareResult { statistic, dof, p_value, categories: pooled.len(), samples: n, unexpected: rest_observed }
}

/// Tallies `samples` against an exact law given as `(outcome, probability)`.
pub fn goodness_of_fit<T: Eq + Hash>(law: &[(T, f64)], samples: impl IntoIterator<Item = T>) -> ChiSquareResult {
    let index: HashMap<&T, usize> = law.iter().enumerate().map(|(i, (t, _))| (t, i)).collect();
    let mut counts = vec![0u64; law.len()];
    let mut rest = 0u64;
    for s in samples {
        match index.get(&s) {
            Some(i) => counts[*i] += 1,
            None => rest += 1,
        }
    }
    let probs: Vec<f64> = law.iter().map(|(_, p)| *p).collect();
    chi_square_gof(&counts, &probs, rest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn perfect_fit() {
        let r = chi_square_gof(&[50, 30, 20], &[0.5, 0.3, 0.2], 0);
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.dof, 2);
        assert!((r.p_value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn known_statistic() {
        // (60-50)^2/50 + (40-50)^2/50 = 4, one dof: p = 0.0455
        let r = chi_square_gof(&[60, 40], &[0.5, 0.5], 0);
        assert!((r.statistic - 4.0).abs() < 1e-12);
        assert!((r.p_value - 0.04550026).abs() < 1e-6);
    }

    #[test]
    fn sparse_categories_pooled_and_unexpected_counted() {
        let r = chi_square_gof(&[995, 2, 3], &[0.995, 0.002, 0.003], 0);
        assert_eq!(r.categories, 2);
        let r = chi_square_gof(&[90, 10], &[0.9, 0.1], 5);
        assert_eq!(r.unexpected, 5);
        assert!(r.p_value < 1e-6);
    }

    #[test]
    fn fair_die_passes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let law: Vec<(u32, f64)> = (0..6).map(|i| (i, 1.0 / 6.0)).collect();
        let r = goodness_of_fit(&law, (0..60_000).map(|_| rng.random_range(0..6u32)));
        assert!(r.p_value > 0.001);
    }
}
