//! Seeded samplers for the base and tilted tree measures.
//!
//! All samplers build the tree generation by generation. For the typed and
//! spine trees this is forced: the type vector and the special node of the
//! next generation depend on the whole current generation.

use std::collections::BTreeMap;

use num_rational::BigRational;
use num_traits::Zero;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::laws::MarkedGWLaw;
use crate::marked_tree::{next_generation_masses, MarkedTree, NodeWord};
use crate::moments::XiTable;
use crate::penalty::{gamma_type_distribution, kappa_solve, tilted_node_law, typed_node_law, NodeLawKind, TiltedNodeLaw, TYPE_VECTOR_CAP};
use crate::scalar::ratio_to_f64;

/// Hard cap on the number of nodes of one sampled tree.
pub const NODE_BUDGET: usize = 10_000_000;

/// A seeded ChaCha8 stream that counts the 64-bit words it hands out.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    counter: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        RngStream { seed, counter: 0, rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    /// Independent stream for shard `i` of a batch: seed `base + i`.
    pub fn shard(base_seed: u64, i: u64) -> Self {
        Self::new(base_seed.wrapping_add(i))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn counter(&self) -> u64 {
        self.counter
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.counter += 1;
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.counter += 1;
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.counter += dst.len().div_ceil(8) as u64;
        self.rng.fill_bytes(dst)
    }
}

/// A sampled tree with per-node types. Spine trees use type 1 for the
/// special node and 0 elsewhere.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TypedMarkedTree {
    pub tree: MarkedTree,
    pub types: BTreeMap<NodeWord, u32>,
    pub spine: bool,
}

impl TypedMarkedTree {
    pub fn to_text(&self) -> String {
        self.tree.to_text_with(|w| self.types.get(w).copied())
    }

    /// Types of generation `n`, left to right.
    pub fn generation_types(&self, n: usize) -> Vec<u32> {
        self.tree.generation(n).map(|(w, _)| self.types.get(w).copied().unwrap_or(0)).collect()
    }
}

fn check_budget(total: usize) -> Result<()> {
    if total > NODE_BUDGET {
        Err(Error::NodeBudgetExceeded(NODE_BUDGET))
    } else {
        Ok(())
    }
}

fn grow_iid<R: Rng + ?Sized>(depth: usize, rng: &mut R, mut draw: impl FnMut(&mut R) -> (u32, u8)) -> Result<MarkedTree> {
    let mut generations: Vec<Vec<(u32, u8)>> = Vec::with_capacity(depth);
    let mut width = 1usize;
    let mut total = 1usize;
    for _ in 0..depth {
        if width == 0 {
            break;
        }
        let gen: Vec<(u32, u8)> = (0..width).map(|_| draw(rng)).collect();
        width = gen.iter().map(|(k, _)| *k as usize).sum();
        total += width;
        check_budget(total)?;
        generations.push(gen);
    }
    Ok(MarkedTree::from_generations(&generations, depth))
}

/// MGW tree with i.i.d. reproduction from `node_law`, truncated at `depth`.
pub fn sample_iid<R: Rng + ?Sized>(node_law: &TiltedNodeLaw<f64>, depth: usize, rng: &mut R) -> Result<MarkedTree> {
    grow_iid(depth, rng, |rng| node_law.sample(rng))
}

/// Base-measure MGW tree truncated at `depth`.
pub fn sample_mgw<R: Rng + ?Sized>(law: &MarkedGWLaw, depth: usize, rng: &mut R) -> Result<MarkedTree> {
    if law.is_finite() {
        sample_iid(&tilted_node_law(NodeLawKind::Base, law)?, depth, rng)
    } else {
        grow_iid(depth, rng, |rng| law.sample_infinite(rng).expect("infinite family"))
    }
}

fn draw_index<R: Rng + ?Sized>(probs: impl Iterator<Item = f64>, rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, p) in probs.enumerate() {
        acc += p;
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}

/// Multitype tree whose truncations have law `f_ℓ(M_h, Z_h) dP`.
pub fn sample_tau_ell<R: Rng + ?Sized>(
    law: &MarkedGWLaw,
    xi: &XiTable<f64>,
    ell: usize,
    depth: usize,
    rng: &mut R,
) -> Result<TypedMarkedTree> {
    let mut generations: Vec<Vec<(u32, u8)>> = Vec::with_capacity(depth);
    let mut gen_types: Vec<Vec<usize>> = vec![vec![ell]];
    let mut masses: Vec<BigRational> = vec![BigRational::zero()];
    let mut marks = 0u32;
    let mut total = 1usize;
    let mut cache: BTreeMap<(usize, BigRational), TiltedNodeLaw<f64>> = BTreeMap::new();
    for _ in 0..depth {
        if masses.is_empty() {
            break;
        }
        let types = gen_types.last().expect("current generation");
        let mut gen = Vec::with_capacity(masses.len());
        for (m, &t) in masses.iter().zip(types) {
            let key = (t, m.clone());
            if !cache.contains_key(&key) {
                cache.insert(key.clone(), typed_node_law(law, xi, t, &ratio_to_f64(m))?);
            }
            gen.push(cache[&key].sample(rng));
        }
        marks += gen.iter().map(|(_, e)| *e as u32).sum::<u32>();
        let data: Vec<(BigRational, u32, u8)> =
            masses.iter().zip(&gen).map(|(m, (k, e))| (m.clone(), *k, *e)).collect();
        masses = next_generation_masses(&data);
        total += masses.len();
        check_budget(total)?;
        generations.push(gen);
        if masses.is_empty() {
            break;
        }
        let dist = gamma_type_distribution(xi, ell, &masses, marks, TYPE_VECTOR_CAP)?;
        let pick = draw_index(dist.iter().map(|(_, p)| *p), rng);
        gen_types.push(dist.into_iter().nth(pick).expect("drawn vector").0);
    }
    let tree = MarkedTree::from_generations(&generations, depth);
    let mut types = BTreeMap::new();
    for (n, ts) in gen_types.iter().enumerate() {
        for ((w, _), t) in tree.generation(n).zip(ts) {
            types.insert(w.clone(), *t as u32);
        }
    }
    Ok(TypedMarkedTree { tree, types, spine: false })
}

/// Which spine construction to use.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SpineMode {
    /// Normal nodes follow `p_{s,0}`, the special node `p_{s,1}`.
    Marked { s: f64 },
    /// Normal nodes follow `p_{0,1}`, the special node `p_{0,2}`.
    ZeroMark,
}

/// Normal and special node laws of a spine tree.
pub fn spine_laws(law: &MarkedGWLaw, mode: SpineMode) -> Result<(TiltedNodeLaw<f64>, TiltedNodeLaw<f64>)> {
    match mode {
        SpineMode::Marked { s } => {
            let k = kappa_solve(law, s, false)?;
            if k.kappa <= 0.0 {
                return Err(Error::RegimeMismatch("spine trees need p(0) > 0".into()));
            }
            Ok((
                tilted_node_law(NodeLawKind::Leafless { s, kappa: k.kappa }, law)?,
                tilted_node_law(NodeLawKind::Spine { s, kappa: k.kappa, derivative: k.derivative }, law)?,
            ))
        }
        SpineMode::ZeroMark => {
            let k = kappa_solve(law, 0.0, true)?;
            if k.kappa <= 0.0 || k.derivative <= 0.0 {
                return Err(Error::RegimeMismatch(
                    "zero-mark spine trees need unmarked leaves and unmarked reproduction (κ̃ > 0, ψ'(κ̃) > 0)".into(),
                ));
            }
            Ok((
                tilted_node_law(NodeLawKind::ZeroMark { kappa_tilde: k.kappa }, law)?,
                tilted_node_law(NodeLawKind::ZeroMarkSpine { kappa_tilde: k.kappa, derivative: k.derivative }, law)?,
            ))
        }
    }
}

/// Tree with one special node per generation, re-chosen uniformly.
pub fn sample_spine_tree<R: Rng + ?Sized>(
    law: &MarkedGWLaw,
    mode: SpineMode,
    depth: usize,
    rng: &mut R,
) -> Result<TypedMarkedTree> {
    let (normal, special) = spine_laws(law, mode)?;
    let mut generations: Vec<Vec<(u32, u8)>> = Vec::with_capacity(depth);
    let mut specials = vec![0usize];
    let mut width = 1usize;
    let mut total = 1usize;
    for _ in 0..depth {
        let v = *specials.last().expect("special node");
        let gen: Vec<(u32, u8)> =
            (0..width).map(|i| if i == v { special.sample(rng) } else { normal.sample(rng) }).collect();
        width = gen.iter().map(|(k, _)| *k as usize).sum();
        total += width;
        check_budget(total)?;
        generations.push(gen);
        specials.push(rng.random_range(0..width));
    }
    let tree = MarkedTree::from_generations(&generations, depth);
    let mut types = BTreeMap::new();
    for (n, v) in specials.iter().enumerate() {
        for (i, (w, _)) in tree.generation(n).enumerate() {
            types.insert(w.clone(), (i == *v) as u32);
        }
    }
    Ok(TypedMarkedTree { tree, types, spine: true })
}

/// Regular tree of the degenerate limits: `r`-ary with Bernoulli marks for
/// `s > 0`, unmarked `r̃`-ary for `s = 0`.
pub fn sample_degenerate<R: Rng + ?Sized>(law: &MarkedGWLaw, s: f64, depth: usize, rng: &mut R) -> Result<MarkedTree> {
    let node_law = degenerate_node_law(law, s)?;
    sample_iid(&node_law, depth, rng)
}

/// Node law of [`sample_degenerate`].
pub fn degenerate_node_law(law: &MarkedGWLaw, s: f64) -> Result<TiltedNodeLaw<f64>> {
    let b = law.bounds();
    if s > 0.0 {
        if b.r == 0 || s >= 1.0 {
            return Err(Error::RegimeMismatch("the r-ary limit needs p(0) = 0 and s in (0,1)".into()));
        }
        tilted_node_law(NodeLawKind::RaryBernoulli { s, r: b.r }, law)
    } else {
        match b.r_tilde {
            Some(rt) if rt >= 1 => tilted_node_law(NodeLawKind::RaryUnmarked { r_tilde: rt }, law),
            _ => Err(Error::RegimeMismatch("the unmarked regular limit needs r̃ ≥ 1".into())),
        }
    }
}

/// Total number of marks `M_∞` of one untruncated subcritical tree.
pub fn sample_total_marks<R: Rng + ?Sized>(law: &MarkedGWLaw, rng: &mut R) -> Result<u64> {
    let node_law = tilted_node_law(NodeLawKind::Base, law)?;
    let mut width = 1u64;
    let mut marks = 0u64;
    let mut total = 1u64;
    while width > 0 {
        let mut next = 0u64;
        for _ in 0..width {
            let (k, eta) = node_law.sample(rng);
            next += k as u64;
            marks += eta as u64;
        }
        width = next;
        total += next;
        if total > NODE_BUDGET as u64 {
            return Err(Error::NodeBudgetExceeded(NODE_BUDGET));
        }
    }
    Ok(marks)
}
