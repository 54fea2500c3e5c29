//! Exact enumeration of truncated trees and the checks built on it.
//!
//! Martingale identities only involve the state `(n, Z_n, M_n)`, so they are
//! checked on the aggregated state chain: one-step transitions are
//! convolution powers of `p_0`. Change-of-measure identities are per tree
//! and use the full enumeration.

use std::collections::BTreeMap;

use num_rational::BigRational;
use num_traits::{One, Zero};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::laws::{truncated_tree_probability, MarkedGWLaw};
use crate::marked_tree::{compute_masses, MarkedTree};
use crate::moments::{conditional_from_moments, f_ell_eval, moment_vector, xi_table, XiTable};
use crate::penalty::{
    gamma_type_distribution, girsanov_weight, kappa_solve, typed_node_law, Regime, State, TiltedNodeLaw, WeightTables,
    TYPE_VECTOR_CAP,
};
use crate::sampler::{degenerate_node_law, spine_laws, SpineMode};
use crate::scalar::{rational_from_f64, ratio_to_f64, Scalar};

/// Maximum number of enumerated trees.
pub const ENUMERATION_CAP: usize = 10_000_000;

const MARTINGALE_TOL: f64 = 1e-10;
const FLOAT_GAP_TOL: f64 = 1e-12;

/// Every truncated tree of positive probability, with that probability.
#[derive(Debug, Clone)]
pub struct EnumeratedMeasure {
    pub trees: Vec<(MarkedTree, BigRational)>,
    pub depth: usize,
    pub fingerprint: String,
}

impl EnumeratedMeasure {
    pub fn total(&self) -> BigRational {
        self.trees.iter().fold(BigRational::zero(), |a, (_, p)| a + p)
    }
}

pub fn enumerate_truncated(law: &MarkedGWLaw, depth: usize) -> Result<EnumeratedMeasure> {
    enumerate_capped(law, depth, ENUMERATION_CAP)
}

/// Number of truncated trees of positive probability, as a float (may be huge).
pub fn count_truncated(law: &MarkedGWLaw, depth: usize) -> Result<f64> {
    let degrees: Vec<usize> = law.atoms()?.iter().map(|a| a.k as usize).collect();
    // completions[w] = number of ways to finish the tree from a generation of width w
    let max_width = |d: usize| {
        let kmax = degrees.iter().copied().max().unwrap_or(0).max(1);
        kmax.checked_pow(d as u32).unwrap_or(usize::MAX)
    };
    if max_width(depth) > 1 << 20 {
        return Ok(f64::INFINITY);
    }
    let mut completions = vec![1.0f64; max_width(depth) + 1];
    for d in (0..depth).rev() {
        let mut next = vec![0.0f64; max_width(d) + 1];
        // counts[K] = number of atom sequences over w nodes with total out-degree K
        let mut counts = vec![1.0f64];
        for (w, slot) in next.iter_mut().enumerate() {
            if w > 0 {
                let mut c = vec![0.0f64; counts.len() + degrees.iter().max().copied().unwrap_or(0)];
                for (k, v) in counts.iter().enumerate() {
                    for d in &degrees {
                        c[k + d] += v;
                    }
                }
                counts = c;
            }
            *slot = counts.iter().enumerate().map(|(k, v)| v * completions.get(k).copied().unwrap_or(0.0)).sum();
        }
        completions = next;
    }
    Ok(completions[1])
}

pub fn enumerate_capped(law: &MarkedGWLaw, depth: usize, cap: usize) -> Result<EnumeratedMeasure> {
    let mut trees = Vec::new();
    visit_truncated(law, depth, cap, |t, p| {
        trees.push((t.clone(), p.clone()));
        Ok(())
    })?;
    Ok(EnumeratedMeasure { trees, depth, fingerprint: law.fingerprint() })
}

/// Calls `visit` on every truncated tree of positive probability without
/// keeping them, depth first.
pub fn visit_truncated(
    law: &MarkedGWLaw,
    depth: usize,
    cap: usize,
    mut visit: impl FnMut(&MarkedTree, &BigRational) -> Result<()>,
) -> Result<()> {
    let atoms: Vec<(u32, u8, BigRational)> = law.atoms_as()?;
    if count_truncated(law, depth)? > cap as f64 {
        return Err(Error::StateSpaceTooLarge(cap));
    }
    let mut gens = Vec::with_capacity(depth);
    descend(&atoms, depth, &mut gens, &BigRational::one(), 1, &mut visit)
}

fn descend(
    atoms: &[(u32, u8, BigRational)],
    depth: usize,
    gens: &mut Vec<Vec<(u32, u8)>>,
    prob: &BigRational,
    width: usize,
    visit: &mut impl FnMut(&MarkedTree, &BigRational) -> Result<()>,
) -> Result<()> {
    if gens.len() == depth || width == 0 {
        return visit(&MarkedTree::from_generations(gens, depth), prob);
    }
    // odometer over atoms^width
    let mut idx = vec![0usize; width];
    loop {
        let gen: Vec<(u32, u8)> = idx.iter().map(|&i| (atoms[i].0, atoms[i].1)).collect();
        let p = idx.iter().fold(prob.clone(), |acc, &i| acc * &atoms[i].2);
        let w = gen.iter().map(|(k, _)| *k as usize).sum();
        gens.push(gen);
        descend(atoms, depth, gens, &p, w, visit)?;
        gens.pop();
        let mut pos = 0;
        while pos < width {
            idx[pos] += 1;
            if idx[pos] < atoms.len() {
                break;
            }
            idx[pos] = 0;
            pos += 1;
        }
        if pos == width {
            return Ok(());
        }
    }
}

/// `Σ P(tree) · functional(tree)` in double precision.
pub fn exact_expectation(measure: &EnumeratedMeasure, functional: impl Fn(&MarkedTree) -> f64) -> f64 {
    measure.trees.iter().map(|(t, p)| ratio_to_f64(p) * functional(t)).sum()
}

/// `Σ P(tree) · functional(tree)` in the scalar of the functional.
pub fn exact_expectation_as<S: Scalar>(measure: &EnumeratedMeasure, functional: impl Fn(&MarkedTree) -> S) -> S {
    measure.trees.iter().fold(S::zero(), |acc, (t, p)| acc + S::from_ratio(p) * functional(t))
}

/// `(n, Z_n, M_n)` at the horizon of a truncated tree.
pub fn horizon_state(tree: &MarkedTree) -> State {
    let h = tree.height();
    State { n: h as u32, z: tree.generation_sizes()[h] as u32, m: tree.mark_counts()[h] as u32 }
}

/// Probability of a truncated tree under the typed tree of order `ell`:
/// per generation, the γ-mixture over type vectors of the typed node laws.
pub fn tau_ell_probability<S: Scalar>(law: &MarkedGWLaw, xi: &XiTable<S>, ell: usize, tree: &MarkedTree) -> Result<S> {
    let masses = compute_masses(tree);
    let marks = tree.mark_counts();
    let mut cache: BTreeMap<(usize, BigRational), TiltedNodeLaw<S>> = BTreeMap::new();
    let mut prob = S::one();
    for g in 0..tree.height() {
        let nodes: Vec<(BigRational, u32, u8)> = tree
            .generation(g)
            .map(|(w, info)| (masses.get(w).cloned().expect("mass"), info.out_degree, info.mark))
            .collect();
        if nodes.is_empty() {
            break;
        }
        let node_masses: Vec<BigRational> = nodes.iter().map(|(m, _, _)| m.clone()).collect();
        let dist = gamma_type_distribution(xi, ell, &node_masses, marks[g] as u32, TYPE_VECTOR_CAP)?;
        let mut factor = S::zero();
        for (types, gamma) in dist {
            let mut term = gamma;
            for ((m, k, eta), t) in nodes.iter().zip(&types) {
                let key = (*t, m.clone());
                if !cache.contains_key(&key) {
                    cache.insert(key.clone(), typed_node_law(law, xi, *t, &S::from_ratio(m))?);
                }
                term = term * cache[&key].prob(*k, *eta);
                if term.is_zero() {
                    break;
                }
            }
            factor = factor + term;
        }
        prob = prob * factor;
    }
    Ok(prob)
}

/// Probability under i.i.d. reproduction from `node_law`.
pub fn iid_probability(node_law: &TiltedNodeLaw<f64>, tree: &MarkedTree) -> f64 {
    tree.nodes()
        .filter(|(w, _)| w.depth() < tree.height())
        .map(|(_, i)| node_law.prob(i.out_degree, i.mark))
        .product()
}

/// Probability of a truncated tree (special node marginalized out) when one
/// uniformly chosen node per generation reproduces by `special`.
pub fn spine_probability(normal: &TiltedNodeLaw<f64>, special: &TiltedNodeLaw<f64>, tree: &MarkedTree) -> f64 {
    let mut prob = 1.0;
    for g in 0..tree.height() {
        let nodes: Vec<(u32, u8)> = tree.generation(g).map(|(_, i)| (i.out_degree, i.mark)).collect();
        if nodes.is_empty() {
            return 0.0;
        }
        let base: Vec<f64> = nodes.iter().map(|(k, e)| normal.prob(*k, *e)).collect();
        let sum: f64 = (0..nodes.len())
            .map(|v| {
                let (k, e) = nodes[v];
                base.iter()
                    .enumerate()
                    .fold(special.prob(k, e), |acc, (u, p)| if u == v { acc } else { acc * p })
            })
            .sum();
        prob *= sum / nodes.len() as f64;
    }
    prob
}

/// Exact probability under the regular-tree limit with Bernoulli marks.
fn rary_probability_exact(law: &MarkedGWLaw, s: &BigRational, r: u32, tree: &MarkedTree) -> BigRational {
    let q = law.mark_function().at(r).clone();
    let sq = s * &q;
    let pi = &sq / (&sq + BigRational::one() - &q);
    let mut prob = BigRational::one();
    for (w, i) in tree.nodes() {
        if w.depth() >= tree.height() {
            continue;
        }
        if i.out_degree != r {
            return BigRational::zero();
        }
        prob *= if i.mark == 1 { pi.clone() } else { BigRational::one() - &pi };
    }
    prob
}

fn unmarked_regular_exact(r: u32, tree: &MarkedTree) -> BigRational {
    let ok = tree.nodes().filter(|(w, _)| w.depth() < tree.height()).all(|(_, i)| i.out_degree == r && i.mark == 0);
    if ok {
        BigRational::one()
    } else {
        BigRational::zero()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChangeOfMeasureReport {
    pub regime: String,
    pub depth: usize,
    pub mode: String,
    pub trees: usize,
    /// `max |P(t) B_h(t) - Q(t)|` over enumerated trees.
    pub max_gap: f64,
    /// `Σ Q(t)` over the trees of positive `P`-probability.
    pub tilted_mass: f64,
    pub pass: bool,
}

/// Per-tree probability under the explicit tilted construction.
type TiltedProbability<S> = Box<dyn Fn(&MarkedTree) -> Result<S>>;

fn exact_mode(regime: Regime, exact: bool) -> bool {
    exact && matches!(regime, Regime::PolySub { .. } | Regime::ExpoRary { .. } | Regime::ExpoZeroRary { .. })
}

/// Compares `P · B_h` with the explicit tilted construction on every tree.
pub fn check_change_of_measure(law: &MarkedGWLaw, regime: Regime, depth: usize, exact: bool) -> Result<ChangeOfMeasureReport> {
    if !regime.has_tilted_tree() {
        return Err(Error::RegimeMismatch(format!("{regime} has no explicit tilted tree to compare against")));
    }
    let tables = WeightTables::build(law, regime)?;
    let rational = exact_mode(regime, exact);
    let mut trees = 0usize;
    let mut max_gap = 0.0f64;
    let mut mass = 0.0f64;
    let mut mass_exact = BigRational::zero();
    if rational {
        let tilted: TiltedProbability<BigRational> = match regime {
            Regime::PolySub { ell } => {
                let xi = tables.xi().expect("built").clone();
                let law = law.clone();
                Box::new(move |t| tau_ell_probability(&law, &xi, ell, t))
            }
            Regime::ExpoRary { s, r } => {
                let s = rational_from_f64(s).expect("finite s");
                let law = law.clone();
                Box::new(move |t| Ok(rary_probability_exact(&law, &s, r, t)))
            }
            Regime::ExpoZeroRary { r_tilde } => Box::new(move |t| Ok(unmarked_regular_exact(r_tilde, t))),
            _ => unreachable!("exact_mode filters regimes"),
        };
        visit_truncated(law, depth, ENUMERATION_CAP, |tree, p| {
            let lhs = p * tables.exact_weight(horizon_state(tree))?;
            let q = tilted(tree)?;
            max_gap = max_gap.max(ratio_to_f64(&(lhs - &q)).abs());
            mass_exact += q;
            trees += 1;
            Ok(())
        })?;
        mass = ratio_to_f64(&mass_exact);
    } else {
        let tilted: TiltedProbability<f64> = match regime {
            Regime::PolySub { ell } => {
                let xi = tables.xi().expect("built").to_f64();
                let law = law.clone();
                Box::new(move |t| tau_ell_probability(&law, &xi, ell, t))
            }
            Regime::ExpoPositive { s, ell } => {
                let (normal, special) = spine_laws(law, SpineMode::Marked { s })?;
                if ell == 0 {
                    Box::new(move |t| Ok(iid_probability(&normal, t)))
                } else {
                    Box::new(move |t| Ok(spine_probability(&normal, &special, t)))
                }
            }
            Regime::ExpoZero { ell } => {
                if ell == 0 {
                    let k = kappa_solve(law, 0.0, true)?;
                    let normal = crate::penalty::tilted_node_law(
                        crate::penalty::NodeLawKind::ZeroMark { kappa_tilde: k.kappa },
                        law,
                    )?;
                    Box::new(move |t| Ok(iid_probability(&normal, t)))
                } else {
                    let (normal, special) = spine_laws(law, SpineMode::ZeroMark)?;
                    Box::new(move |t| Ok(spine_probability(&normal, &special, t)))
                }
            }
            Regime::ExpoRary { s, .. } => {
                let nl = degenerate_node_law(law, s)?;
                Box::new(move |t| Ok(iid_probability(&nl, t)))
            }
            Regime::ExpoZeroRary { .. } => {
                let nl = degenerate_node_law(law, 0.0)?;
                Box::new(move |t| Ok(iid_probability(&nl, t)))
            }
            Regime::PolyCrit | Regime::PolySuper { .. } => unreachable!("rejected above"),
        };
        visit_truncated(law, depth, ENUMERATION_CAP, |tree, p| {
            let lhs = ratio_to_f64(p) * girsanov_weight(&tables, horizon_state(tree))?.value();
            let q = tilted(tree)?;
            max_gap = max_gap.max((lhs - q).abs());
            mass += q;
            trees += 1;
            Ok(())
        })?;
    }
    let mass_ok = if rational { mass_exact == BigRational::one() } else { (mass - 1.0).abs() <= 1e-10 };
    let pass = mass_ok && if rational { max_gap == 0.0 } else { max_gap < FLOAT_GAP_TOL };
    Ok(ChangeOfMeasureReport {
        regime: regime.to_string(),
        depth,
        mode: if rational { "rational" } else { "float" }.into(),
        trees,
        max_gap,
        tilted_mass: mass,
        pass,
    })
}

/// Law of `(K, H)` = (total children, total marks) of `z` independent nodes.
struct Convolutions<S> {
    base: Vec<(u32, u8, S)>,
    powers: Vec<BTreeMap<(u32, u32), S>>,
}

impl<S: Scalar> Convolutions<S> {
    fn new(base: Vec<(u32, u8, S)>) -> Self {
        Convolutions { base, powers: vec![BTreeMap::from([((0, 0), S::one())])] }
    }

    fn power(&mut self, z: usize) -> &BTreeMap<(u32, u32), S> {
        while self.powers.len() <= z {
            let last = self.powers.last().expect("power 0");
            let mut next: BTreeMap<(u32, u32), S> = BTreeMap::new();
            for ((k, h), p) in last {
                for (bk, be, bp) in &self.base {
                    let e = next.entry((k + bk, h + *be as u32)).or_insert_with(S::zero);
                    *e = e.clone() + p.clone() * bp.clone();
                }
            }
            self.powers.push(next);
        }
        &self.powers[z]
    }
}

/// Distribution of `(Z_n, M_n)` for `n = 0..=depth`.
pub fn state_distribution<S: Scalar>(law: &MarkedGWLaw, depth: usize) -> Result<Vec<BTreeMap<(u32, u32), S>>> {
    let mut conv = Convolutions::new(law.atoms_as::<S>()?);
    let mut levels = vec![BTreeMap::from([((1u32, 0u32), S::one())])];
    for _ in 0..depth {
        let mut next: BTreeMap<(u32, u32), S> = BTreeMap::new();
        for ((z, m), p) in levels.last().expect("level").clone() {
            for ((k, h), q) in conv.power(z as usize) {
                let e = next.entry((*k, m + h)).or_insert_with(S::zero);
                *e = e.clone() + p.clone() * q.clone();
            }
        }
        levels.push(next);
    }
    Ok(levels)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MartingaleReport {
    pub regime: String,
    pub depth: usize,
    pub mode: String,
    /// Number of reachable `(n, Z_n, M_n)` states with `n < depth`.
    pub states_checked: usize,
    /// `max |E[B_{n+1} | F_n] - B_n| / max(1, B_n)`.
    pub max_residual: f64,
    /// `max_n |E[B_n] - 1|`.
    pub max_unit_mean_gap: f64,
    pub residuals_histogram: BTreeMap<String, usize>,
    pub pass: bool,
}

fn bucket(r: f64) -> &'static str {
    match r {
        0.0 => "0",
        r if r < 1e-15 => "<1e-15",
        r if r < 1e-12 => "1e-15..1e-12",
        r if r < 1e-10 => "1e-12..1e-10",
        _ => ">=1e-10",
    }
}

fn martingale_generic<S: Scalar>(
    law: &MarkedGWLaw,
    depth: usize,
    weight: impl Fn(State) -> Result<S>,
) -> Result<(usize, f64, f64, BTreeMap<String, usize>)> {
    let mut conv = Convolutions::new(law.atoms_as::<S>()?);
    let levels = state_distribution::<S>(law, depth)?;
    let mut hist = BTreeMap::new();
    let mut max_res = 0.0f64;
    let mut max_mean_gap = 0.0f64;
    let mut count = 0;
    for (n, level) in levels.iter().enumerate() {
        let mean = level.iter().try_fold(S::zero(), |acc, ((z, m), p)| {
            Ok::<S, Error>(acc + p.clone() * weight(State { n: n as u32, z: *z, m: *m })?)
        })?;
        max_mean_gap = max_mean_gap.max((mean - S::one()).abs_val().to_f64());
        if n == depth {
            break;
        }
        for (z, m) in level.keys() {
            let b = weight(State { n: n as u32, z: *z, m: *m })?;
            let mut next = S::zero();
            for ((k, h), q) in conv.power(*z as usize) {
                let w = weight(State { n: n as u32 + 1, z: *k, m: m + h })?;
                next = next + q.clone() * w;
            }
            let scale = b.to_f64().abs().max(1.0);
            let res = (next - b).abs_val().to_f64() / scale;
            *hist.entry(bucket(res).to_string()).or_insert(0) += 1;
            max_res = max_res.max(res);
            count += 1;
        }
    }
    Ok((count, max_res, max_mean_gap, hist))
}

/// One-step martingale identity on every reachable history up to `depth`.
pub fn check_martingale(law: &MarkedGWLaw, regime: Regime, depth: usize, exact: bool) -> Result<MartingaleReport> {
    let tables = WeightTables::build(law, regime)?;
    let rational = exact && tables.has_exact_weight();
    let (states, max_residual, gap, hist) = if rational {
        martingale_generic::<BigRational>(law, depth, |st| tables.exact_weight(st))?
    } else {
        martingale_generic::<f64>(law, depth, |st| Ok(girsanov_weight(&tables, st)?.value()))?
    };
    let pass = if rational { max_residual == 0.0 && gap == 0.0 } else { max_residual < MARTINGALE_TOL && gap < MARTINGALE_TOL };
    Ok(MartingaleReport {
        regime: regime.to_string(),
        depth,
        mode: if rational { "rational" } else { "float" }.into(),
        states_checked: states,
        max_residual,
        max_unit_mean_gap: gap,
        residuals_histogram: hist,
        pass,
    })
}

/// Combined report of the `verify` command.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub regime: String,
    pub depth: usize,
    pub max_gap: f64,
    pub residuals_histogram: BTreeMap<String, usize>,
    pub pass: bool,
    pub martingale: MartingaleReport,
    pub change_of_measure: Option<ChangeOfMeasureReport>,
}

pub fn verify(law: &MarkedGWLaw, regime: Regime, depth: usize, exact: bool) -> Result<VerifyReport> {
    let martingale = check_martingale(law, regime, depth, exact)?;
    let com = if regime.has_tilted_tree() { Some(check_change_of_measure(law, regime, depth, exact)?) } else { None };
    let max_gap = com.as_ref().map(|c| c.max_gap).unwrap_or(0.0).max(martingale.max_residual);
    let pass = martingale.pass && com.as_ref().is_none_or(|c| c.pass);
    Ok(VerifyReport {
        regime: regime.to_string(),
        depth,
        max_gap,
        residuals_histogram: martingale.residuals_histogram.clone(),
        pass,
        martingale,
        change_of_measure: com,
    })
}

/// `E[1_Λ M_{n+p}^ℓ] / E[M_{n+p}^ℓ]` and its limit `E[1_Λ f_ℓ(M_n, Z_n)]`,
/// for an event `Λ` of the first `n` generations.
pub fn poly_penalization_ratio(
    law: &MarkedGWLaw,
    ell: usize,
    n: usize,
    p: u32,
    event: impl Fn(&MarkedTree) -> bool,
) -> Result<(f64, f64)> {
    let measure = enumerate_truncated(law, n)?;
    let xi = xi_table::<f64>(law, ell)?;
    let e = moment_vector::<f64>(law, p, ell)?;
    let denom = moment_vector::<f64>(law, p + n as u32, ell)?[ell];
    let mut num = 0.0;
    let mut limit = 0.0;
    for (tree, prob) in &measure.trees {
        if !event(tree) {
            continue;
        }
        let st = horizon_state(tree);
        let pr = ratio_to_f64(prob);
        num += pr * conditional_from_moments(&e, &(st.m as f64), st.z, ell);
        limit += pr * f_ell_eval(&xi, ell, &(st.m as f64), st.z);
    }
    Ok((num / denom, limit))
}

/// `E[1_Λ s^{M_{n+p}} t^{Z_{n+p}}] / E[s^{M_{n+p}} t^{Z_{n+p}}]` and its limit
/// `E[1_Λ s^{M_n} κ(s)^{Z_n - 1}]`.
pub fn expo_penalization_ratio(
    law: &MarkedGWLaw,
    s: f64,
    t: f64,
    n: usize,
    p: u32,
    event: impl Fn(&MarkedTree) -> bool,
) -> Result<(f64, f64)> {
    let measure = enumerate_truncated(law, n)?;
    let f = law.pgf(s)?;
    let iterate = |x: f64, k: u32| (0..k).fold(x, |y, _| f.eval(y));
    let fp = iterate(t, p);
    let denom = iterate(t, p + n as u32);
    let kappa = kappa_solve(law, s, false)?.kappa;
    let mut num = 0.0;
    let mut limit = 0.0;
    for (tree, prob) in &measure.trees {
        if !event(tree) {
            continue;
        }
        let st = horizon_state(tree);
        let base = ratio_to_f64(prob) * s.powi(st.m as i32);
        num += base * fp.powi(st.z as i32);
        limit += base * kappa.powi(st.z as i32 - 1);
    }
    Ok((num / denom, limit))
}

/// `Σ P(tree)` over the enumeration equals one, and matches the product formula.
pub fn check_normalization(law: &MarkedGWLaw, depth: usize) -> Result<bool> {
    let m = enumerate_truncated(law, depth)?;
    let consistent = m
        .trees
        .iter()
        .all(|(t, p)| truncated_tree_probability::<BigRational>(law, t).map(|q| &q == p).unwrap_or(false));
    Ok(consistent && m.total() == BigRational::one())
}
