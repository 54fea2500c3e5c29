//! Marked reproduction laws.
//!
//! A law is an offspring distribution `p` together with a mark function `q`:
//! a node with `k` children is marked with probability `q(k)`. Finite-support
//! laws are stored as exact rationals; JSON doubles are converted exactly, so
//! every exact operation downstream works on the values the user wrote.

pub mod genfn;

use std::collections::BTreeMap;
use std::fmt;

use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use rand::Rng;
use rand_distr::{Distribution, Geometric, Poisson};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::marked_tree::MarkedTree;
use crate::scalar::{format_ratio, parse_rational, rational_from_f64, ratio_to_f64, Scalar};

pub use genfn::{gen_fn_eval, gen_fn_jet, FaaDiBruno, MarkedPgf, DEFAULT_MAX_ORDER};

/// Tolerance on `Σ p(k) = 1` before exact renormalization.
const SUM_TOLERANCE: f64 = 1e-9;

/// One atom of the reproduction-marking law `p_0(k, η)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Atom {
    pub k: u32,
    pub eta: u8,
    pub prob: BigRational,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Criticality {
    Subcritical,
    Critical,
    Supercritical,
}

impl fmt::Display for Criticality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Criticality::Subcritical => "subcritical",
            Criticality::Critical => "critical",
            Criticality::Supercritical => "supercritical",
        })
    }
}

/// Minimal out-degrees: `r` over the offspring law, `r_tilde` over unmarked
/// reproduction (`None` when no out-degree can stay unmarked).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DegreeBounds {
    pub r: u32,
    pub r_tilde: Option<u32>,
}

/// Sampling-only parametric offspring families.
#[derive(Debug, Clone, PartialEq)]
pub enum InfiniteFamily {
    Poisson { mean: f64 },
    /// `p(k) = (1 - a)^k a`.
    Geometric { success: f64 },
}

impl InfiniteFamily {
    fn p(&self, k: u32) -> f64 {
        match *self {
            InfiniteFamily::Poisson { mean } => {
                let lg = statrs::function::gamma::ln_gamma(k as f64 + 1.0);
                (k as f64 * mean.ln() - mean - lg).exp()
            }
            InfiniteFamily::Geometric { success } => (1.0 - success).powi(k as i32) * success,
        }
    }

    fn mean(&self) -> f64 {
        match *self {
            InfiniteFamily::Poisson { mean } => mean,
            InfiniteFamily::Geometric { success } => (1.0 - success) / success,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Offspring {
    Finite(BTreeMap<u32, BigRational>),
    Infinite(InfiniteFamily),
}

/// Mark probabilities per out-degree, with a default for unlisted degrees.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkFunction {
    pub values: BTreeMap<u32, BigRational>,
    pub default: BigRational,
}

impl MarkFunction {
    pub fn constant(q: BigRational) -> Self {
        MarkFunction { values: BTreeMap::new(), default: q }
    }

    pub fn new(values: BTreeMap<u32, BigRational>) -> Self {
        MarkFunction { values, default: BigRational::zero() }
    }

    pub fn at(&self, k: u32) -> &BigRational {
        self.values.get(&k).unwrap_or(&self.default)
    }
}

/// A validated marked Galton-Watson law.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkedGWLaw {
    offspring: Offspring,
    mark: MarkFunction,
    atoms: Vec<Atom>,
    mean: f64,
    mean_exact: Option<BigRational>,
    bounds: DegreeBounds,
}

fn check_mark_function(mark: &MarkFunction) -> Result<()> {
    let bad = mark
        .values
        .iter()
        .map(|(k, q)| (Some(*k), q))
        .chain(std::iter::once((None, &mark.default)))
        .find(|(_, q)| q.is_negative() || **q > BigRational::one());
    match bad {
        Some((k, q)) => Err(Error::NotAProbability(format!(
            "q({}) = {} is outside [0,1]",
            k.map(|k| k.to_string()).unwrap_or_else(|| "default".into()),
            format_ratio(q)
        ))),
        None => Ok(()),
    }
}

/// Validates conditions (non-degeneracy, finite mean, some mark possible)
/// and renormalizes `p` exactly.
pub fn validate_law(offspring: BTreeMap<u32, BigRational>, mark_fn: MarkFunction) -> Result<MarkedGWLaw> {
    if let Some((k, p)) = offspring.iter().find(|(_, p)| p.is_negative()) {
        return Err(Error::NotAProbability(format!("p({k}) = {} is negative", format_ratio(p))));
    }
    check_mark_function(&mark_fn)?;
    let total: BigRational = offspring.values().fold(BigRational::zero(), |a, b| a + b);
    if total.is_zero() || (ratio_to_f64(&total) - 1.0).abs() > SUM_TOLERANCE {
        return Err(Error::NotAProbability(format!("Σ p(k) = {}", ratio_to_f64(&total))));
    }
    let p: BTreeMap<u32, BigRational> = offspring
        .into_iter()
        .filter(|(_, p)| !p.is_zero())
        .map(|(k, p)| (k, p / &total))
        .collect();
    let low = p.get(&0).cloned().unwrap_or_else(BigRational::zero) + p.get(&1).cloned().unwrap_or_else(BigRational::zero);
    if low >= BigRational::one() {
        return Err(Error::Degenerate(ratio_to_f64(&low)));
    }
    let mut atoms = Vec::new();
    for (&k, pk) in &p {
        let q = mark_fn.at(k);
        for (eta, w) in [(0u8, BigRational::one() - q), (1u8, q.clone())] {
            if !w.is_zero() {
                atoms.push(Atom { k, eta, prob: pk * w });
            }
        }
    }
    if !atoms.iter().any(|a| a.eta == 1) {
        return Err(Error::NoMarkPossible);
    }
    let mean_exact = p
        .iter()
        .fold(BigRational::zero(), |acc, (k, pk)| acc + pk * BigRational::from_integer((*k).into()));
    let r = *p.keys().next().expect("nonempty support");
    let r_tilde = atoms.iter().filter(|a| a.eta == 0).map(|a| a.k).min();
    Ok(MarkedGWLaw {
        offspring: Offspring::Finite(p),
        mark: mark_fn,
        atoms,
        mean: ratio_to_f64(&mean_exact),
        mean_exact: Some(mean_exact),
        bounds: DegreeBounds { r, r_tilde },
    })
}

/// Sampling-only law with an infinite-support offspring family.
pub fn validate_infinite_law(family: InfiniteFamily, mark_fn: MarkFunction) -> Result<MarkedGWLaw> {
    let ok = match family {
        InfiniteFamily::Poisson { mean } => mean.is_finite() && mean > 0.0,
        InfiniteFamily::Geometric { success } => success > 0.0 && success < 1.0,
    };
    if !ok {
        return Err(Error::NotAProbability(format!("bad family parameters {family:?}")));
    }
    check_mark_function(&mark_fn)?;
    let low = family.p(0) + family.p(1);
    if low >= 1.0 {
        return Err(Error::Degenerate(low));
    }
    // every degree has positive probability: a mark is possible iff q is not ≡ 0
    if mark_fn.default.is_zero() && mark_fn.values.values().all(|q| q.is_zero()) {
        return Err(Error::NoMarkPossible);
    }
    let r_tilde = (0..=mark_fn.values.keys().max().copied().unwrap_or(0) + 1)
        .find(|k| mark_fn.at(*k) < &BigRational::one());
    Ok(MarkedGWLaw {
        mean: family.mean(),
        offspring: Offspring::Infinite(family),
        mark: mark_fn,
        atoms: Vec::new(),
        mean_exact: None,
        bounds: DegreeBounds { r: 0, r_tilde },
    })
}

impl MarkedGWLaw {
    pub fn is_finite(&self) -> bool {
        matches!(self.offspring, Offspring::Finite(_))
    }

    /// Positive atoms of `p_0`, ordered by `(k, η)`.
    pub fn atoms(&self) -> Result<&[Atom]> {
        if self.is_finite() {
            Ok(&self.atoms)
        } else {
            Err(Error::UnsupportedInfiniteSupport)
        }
    }

    pub fn atoms_as<S: Scalar>(&self) -> Result<Vec<(u32, u8, S)>> {
        Ok(self.atoms()?.iter().map(|a| (a.k, a.eta, S::from_ratio(&a.prob))).collect())
    }

    /// Offspring probabilities as `(k, p(k))`, positive entries only.
    pub fn offspring(&self) -> Result<&BTreeMap<u32, BigRational>> {
        match &self.offspring {
            Offspring::Finite(p) => Ok(p),
            Offspring::Infinite(_) => Err(Error::UnsupportedInfiniteSupport),
        }
    }

    pub fn p(&self, k: u32) -> f64 {
        match &self.offspring {
            Offspring::Finite(p) => p.get(&k).map(ratio_to_f64).unwrap_or(0.0),
            Offspring::Infinite(f) => f.p(k),
        }
    }

    pub fn q(&self, k: u32) -> f64 {
        ratio_to_f64(self.mark.at(k))
    }

    pub fn mark_function(&self) -> &MarkFunction {
        &self.mark
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn mean_exact(&self) -> Option<&BigRational> {
        self.mean_exact.as_ref()
    }

    pub fn mean_as<S: Scalar>(&self) -> Result<S> {
        self.mean_exact.as_ref().map(S::from_ratio).ok_or(Error::UnsupportedInfiniteSupport)
    }

    pub fn bounds(&self) -> DegreeBounds {
        self.bounds
    }

    pub fn max_degree(&self) -> Result<u32> {
        Ok(*self.offspring()?.keys().next_back().expect("nonempty support"))
    }

    pub fn criticality(&self) -> Criticality {
        let ord = match &self.mean_exact {
            Some(m) => m.cmp(&BigRational::one()),
            None => self.mean.partial_cmp(&1.0).unwrap_or(std::cmp::Ordering::Greater),
        };
        match ord {
            std::cmp::Ordering::Less => Criticality::Subcritical,
            std::cmp::Ordering::Equal => Criticality::Critical,
            std::cmp::Ordering::Greater => Criticality::Supercritical,
        }
    }

    /// `E[M_1] = Σ_k p(k) q(k)`.
    pub fn mark_mean<S: Scalar>(&self) -> Result<S> {
        Ok(self
            .atoms_as::<S>()?
            .into_iter()
            .filter(|(_, eta, _)| *eta == 1)
            .fold(S::zero(), |acc, (_, _, p)| acc + p))
    }

    /// Short canonical description, stable across runs.
    pub fn fingerprint(&self) -> String {
        let q = |k: u32| format_ratio(self.mark.at(k));
        match &self.offspring {
            Offspring::Finite(p) => {
                let ps: Vec<String> = p.iter().map(|(k, v)| format!("{k}:{}", format_ratio(v))).collect();
                let qs: Vec<String> = p.keys().map(|k| format!("{k}:{}", q(*k))).collect();
                format!("p={{{}}};q={{{}}}", ps.join(","), qs.join(","))
            }
            Offspring::Infinite(f) => format!("{f:?};q_default={}", format_ratio(&self.mark.default)),
        }
    }

    /// Draws `(k, η)` from `p_0` for infinite-support laws.
    pub(crate) fn sample_infinite<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<(u32, u8)> {
        let k = match &self.offspring {
            Offspring::Infinite(InfiniteFamily::Poisson { mean }) => {
                Poisson::new(*mean).ok()?.sample(rng) as u32
            }
            Offspring::Infinite(InfiniteFamily::Geometric { success }) => {
                Geometric::new(*success).ok()?.sample(rng) as u32
            }
            Offspring::Finite(_) => return None,
        };
        let eta = rng.random_bool(self.q(k).clamp(0.0, 1.0)) as u8;
        Some((k, eta))
    }

    /// Polynomial coefficients (by degree) of `t ↦ E[s^{M_1} t^{Z_1}]`.
    pub fn pgf(&self, s: f64) -> Result<MarkedPgf> {
        let p = self.offspring()?;
        let max = self.max_degree()? as usize;
        let mut coeffs = vec![0.0; max + 1];
        for (k, pk) in p {
            let q = self.q(*k);
            coeffs[*k as usize] = ratio_to_f64(pk) * (s * q + 1.0 - q);
        }
        Ok(MarkedPgf::new(coeffs))
    }
}

/// `p_0(k, η)`: probability of `k` children and mark `η`.
pub fn reproduction_mark_prob(law: &MarkedGWLaw, k: u32, eta: u8) -> f64 {
    let q = law.q(k);
    law.p(k) * if eta == 1 { q } else { 1.0 - q }
}

/// Exact `p_0(k, η)` for finite laws.
pub fn reproduction_mark_prob_exact(law: &MarkedGWLaw, k: u32, eta: u8) -> Result<BigRational> {
    Ok(law
        .atoms()?
        .iter()
        .find(|a| a.k == k && a.eta == eta)
        .map(|a| a.prob.clone())
        .unwrap_or_else(BigRational::zero))
}

/// Probability that an MGW tree restricted to `tree.height()` equals `tree`:
/// the product of `p_0(k_u, η_u)` over the nodes above the horizon.
pub fn truncated_tree_probability<S: Scalar>(law: &MarkedGWLaw, tree: &MarkedTree) -> Result<S> {
    let atoms = law.atoms_as::<S>()?;
    let mut prob = S::one();
    for (w, info) in tree.nodes() {
        if w.depth() >= tree.height() {
            continue;
        }
        let p = atoms
            .iter()
            .find(|(k, eta, _)| *k == info.out_degree && *eta == info.mark)
            .map(|(_, _, p)| p.clone());
        match p {
            Some(p) => prob = prob * p,
            None => return Ok(S::zero()),
        }
    }
    Ok(prob)
}

/// JSON law file: `{"p": {"0": "3/5", "2": "2/5"}, "q": {"0": "0", "2": "1"}}`.
///
/// Values may be decimal strings, `a/b` strings or JSON numbers. Optional
/// keys: `"q_default"` for degrees absent from `"q"`, and `"family"`
/// (`{"poisson": <mean>}` or `{"geometric": <success>}`) replacing `"p"` for
/// sampling-only laws.
pub fn parse_law_json(text: &str, allow_infinite: bool) -> Result<MarkedGWLaw> {
    let v: Value = serde_json::from_str(text).map_err(|e| Error::Parse(format!("law json: {e}")))?;
    let obj = v.as_object().ok_or_else(|| Error::Parse("law json must be an object".into()))?;
    let mut q = BTreeMap::new();
    if let Some(qv) = obj.get("q") {
        q = parse_prob_map(qv, "q")?;
    }
    let default = match obj.get("q_default") {
        Some(d) => json_rational(d, "q_default")?,
        None => BigRational::zero(),
    };
    let mark = MarkFunction { values: q, default };
    match (obj.get("p"), obj.get("family")) {
        (Some(p), None) => validate_law(parse_prob_map(p, "p")?, mark),
        (None, Some(fam)) => {
            if !allow_infinite {
                return Err(Error::UnsupportedInfiniteSupport);
            }
            let fam = fam.as_object().ok_or_else(|| Error::Parse("family must be an object".into()))?;
            let family = if let Some(m) = fam.get("poisson") {
                InfiniteFamily::Poisson { mean: ratio_to_f64(&json_rational(m, "poisson")?) }
            } else if let Some(a) = fam.get("geometric") {
                InfiniteFamily::Geometric { success: ratio_to_f64(&json_rational(a, "geometric")?) }
            } else {
                return Err(Error::Parse("family must be poisson or geometric".into()));
            };
            validate_infinite_law(family, mark)
        }
        _ => Err(Error::Parse("law json needs exactly one of \"p\" or \"family\"".into())),
    }
}

fn json_rational(v: &Value, what: &str) -> Result<BigRational> {
    match v {
        Value::String(s) => parse_rational(s),
        Value::Number(n) => n
            .as_i64()
            .map(|i| BigRational::from_integer(i.into()))
            .or_else(|| n.as_f64().and_then(rational_from_f64)),
        _ => None,
    }
    .ok_or_else(|| Error::Parse(format!("{what}: cannot read {v} as a number")))
}

fn parse_prob_map(v: &Value, what: &str) -> Result<BTreeMap<u32, BigRational>> {
    let obj = v.as_object().ok_or_else(|| Error::Parse(format!("{what} must be an object")))?;
    obj.iter()
        .map(|(k, v)| {
            let k: u32 = k.trim().parse().map_err(|_| Error::Parse(format!("{what}: bad degree '{k}'")))?;
            Ok((k, json_rational(v, what)?))
        })
        .collect()
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    pub fn law(p: &[(u32, &str)], q: &[(u32, &str)], q_default: &str) -> MarkedGWLaw {
        let p = p.iter().map(|(k, v)| (*k, parse_rational(v).unwrap())).collect();
        let q = q.iter().map(|(k, v)| (*k, parse_rational(v).unwrap())).collect();
        validate_law(p, MarkFunction { values: q, default: parse_rational(q_default).unwrap() }).unwrap()
    }

    /// p = {0: 0.6, 2: 0.4}, q = {0: 0, 2: 1}.
    pub fn law_a() -> MarkedGWLaw {
        law(&[(0, "3/5"), (2, "2/5")], &[(0, "0"), (2, "1")], "0")
    }

    /// p = {0: 1/2, 2: 1/2}, q ≡ 1.
    pub fn law_b() -> MarkedGWLaw {
        law(&[(0, "1/2"), (2, "1/2")], &[], "1")
    }

    /// p = {0: 0.2, 2: 0.8}, q ≡ 1.
    pub fn law_c() -> MarkedGWLaw {
        law(&[(0, "1/5"), (2, "4/5")], &[], "1")
    }

    /// p = {0: 1/2, 2: 1/2}, q = {0: 0, 2: 1}.
    pub fn law_d() -> MarkedGWLaw {
        law(&[(0, "1/2"), (2, "1/2")], &[(0, "0"), (2, "1")], "0")
    }

    /// p = {2: 0.6, 3: 0.4}, q ≡ 1/2.
    pub fn law_f() -> MarkedGWLaw {
        law(&[(2, "3/5"), (3, "2/5")], &[], "1/2")
    }

    /// p = {0: 0.3, 1: 0.2, 2: 0.5}, q = {0: 0, 1: 0, 2: 1/2}: unmarked
    /// reproduction keeps degrees 0, 1 and 2.
    pub fn law_g() -> MarkedGWLaw {
        law(&[(0, "3/10"), (1, "1/5"), (2, "1/2")], &[(0, "0"), (1, "0"), (2, "1/2")], "0")
    }
}
