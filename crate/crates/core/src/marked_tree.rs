//! Finite ordered marked trees addressed by Neveu words.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use num_rational::BigRational;
use num_traits::Zero;

use crate::error::{Error, Result};
use crate::scalar::{format_ratio, parse_rational};

/// Address of a node: the sequence of child indices from the root.
/// The empty word is the root.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct NodeWord(Vec<u32>);

impl NodeWord {
    pub fn root() -> Self {
        NodeWord(Vec::new())
    }

    pub fn new(path: Vec<u32>) -> Self {
        NodeWord(path)
    }

    pub fn depth(&self) -> usize {
        self.0.len()
    }

    pub fn path(&self) -> &[u32] {
        &self.0
    }

    pub fn is_root(&self) -> bool {
        self.0.is_empty()
    }

    pub fn child(&self, j: u32) -> Self {
        let mut p = self.0.clone();
        p.push(j);
        NodeWord(p)
    }

    pub fn parent(&self) -> Option<Self> {
        self.0.split_last().map(|(_, rest)| NodeWord(rest.to_vec()))
    }

    /// Position among siblings (1-based); `None` for the root.
    pub fn last(&self) -> Option<u32> {
        self.0.last().copied()
    }

    pub fn concat(&self, other: &NodeWord) -> Self {
        let mut p = self.0.clone();
        p.extend_from_slice(&other.0);
        NodeWord(p)
    }
}

impl fmt::Display for NodeWord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, j) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(".")?;
            }
            write!(f, "{j}")?;
        }
        Ok(())
    }
}

impl FromStr for NodeWord {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.is_empty() {
            return Ok(NodeWord::root());
        }
        s.split('.')
            .map(|part| match part.parse::<u32>() {
                Ok(j) if j > 0 => Ok(j),
                _ => Err(Error::Parse(format!("bad word component '{part}' in '{s}'"))),
            })
            .collect::<Result<Vec<_>>>()
            .map(NodeWord)
    }
}

fn show(word: &NodeWord) -> String {
    if word.is_root() {
        "∅".to_string()
    } else {
        word.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeInfo {
    pub out_degree: u32,
    pub mark: u8,
}

/// A finite marked tree restricted to generations `0..=height`.
///
/// Nodes are kept in a map ordered by word, so the nodes of one generation
/// come out left to right. Nodes at depth `height` have no children and no
/// mark: their reproduction is not observed yet.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MarkedTree {
    nodes: BTreeMap<NodeWord, NodeInfo>,
    height: usize,
}

/// One `(word, out_degree, mark)` record.
pub type Record = (NodeWord, u32, u8);

/// Validates a record set and builds the tree.
pub fn build_tree(records: impl IntoIterator<Item = Record>, height: usize) -> Result<MarkedTree> {
    let mut nodes = BTreeMap::new();
    for (word, out_degree, mark) in records {
        if mark > 1 {
            return Err(Error::Parse(format!("mark of {} must be 0 or 1", show(&word))));
        }
        if word.depth() > height {
            return Err(Error::BeyondHorizon(show(&word)));
        }
        if nodes.insert(word.clone(), NodeInfo { out_degree, mark }).is_some() {
            return Err(Error::DuplicateNode(show(&word)));
        }
    }
    if !nodes.contains_key(&NodeWord::root()) {
        return Err(Error::MissingParent(
            nodes.keys().next().map(show).unwrap_or_else(|| "∅".into()),
        ));
    }
    for word in nodes.keys() {
        if let Some(parent) = word.parent() {
            if !nodes.contains_key(&parent) {
                return Err(Error::MissingParent(show(word)));
            }
        }
    }
    // contiguity: children of u are exactly u1..u{k_u}
    let mut child_counts: BTreeMap<&NodeWord, u32> = BTreeMap::new();
    for word in nodes.keys() {
        if let Some(parent) = word.parent() {
            let (p, _) = nodes.get_key_value(&parent).expect("parent checked above");
            *child_counts.entry(p).or_default() += 1;
        }
    }
    for (word, info) in &nodes {
        let present = child_counts.get(word).copied().unwrap_or(0);
        let in_range = (1..=info.out_degree).all(|j| nodes.contains_key(&word.child(j)));
        if present != info.out_degree || !in_range {
            return Err(Error::ContiguityViolation { node: show(word), out_degree: info.out_degree });
        }
        if word.depth() == height && info.mark == 1 {
            return Err(Error::MarkedLeafAtHorizon(show(word)));
        }
    }
    Ok(MarkedTree { nodes, height })
}

/// Generation-level summary of a tree.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GenerationStats {
    /// Z_n: number of nodes at depth n.
    pub z: usize,
    /// M_n: number of marked nodes at depth < n.
    pub m: usize,
    pub nodes: Vec<NodeWord>,
}

impl MarkedTree {
    /// Root-only tree of height 0.
    pub fn root_only() -> Self {
        let mut nodes = BTreeMap::new();
        nodes.insert(NodeWord::root(), NodeInfo { out_degree: 0, mark: 0 });
        MarkedTree { nodes, height: 0 }
    }

    /// Builds a tree from per-generation `(out_degree, mark)` lists given left
    /// to right. `generations[n]` must have exactly as many entries as the
    /// out-degrees of generation `n - 1` add up to. Generations past the last
    /// supplied one up to `height` are filled with unmarked childless nodes.
    pub(crate) fn from_generations(generations: &[Vec<(u32, u8)>], height: usize) -> Self {
        let mut nodes = BTreeMap::new();
        let mut frontier = vec![NodeWord::root()];
        for depth in 0..=height {
            let gen = generations.get(depth);
            let mut next = Vec::new();
            for (i, word) in frontier.iter().enumerate() {
                let (k, eta) = if depth == height {
                    (0, 0)
                } else {
                    gen.map(|g| g[i]).unwrap_or((0, 0))
                };
                for j in 1..=k {
                    next.push(word.child(j));
                }
                nodes.insert(word.clone(), NodeInfo { out_degree: k, mark: eta });
            }
            frontier = next;
        }
        MarkedTree { nodes, height }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn get(&self, word: &NodeWord) -> Option<NodeInfo> {
        self.nodes.get(word).copied()
    }

    pub fn nodes(&self) -> impl Iterator<Item = (&NodeWord, &NodeInfo)> {
        self.nodes.iter()
    }

    /// Nodes of generation `n`, left to right.
    pub fn generation(&self, n: usize) -> impl Iterator<Item = (&NodeWord, &NodeInfo)> {
        self.nodes.iter().filter(move |(w, _)| w.depth() == n)
    }

    pub fn records(&self) -> Vec<Record> {
        self.nodes.iter().map(|(w, i)| (w.clone(), i.out_degree, i.mark)).collect()
    }

    /// Z_n for every n in `0..=height`.
    pub fn generation_sizes(&self) -> Vec<usize> {
        let mut z = vec![0; self.height + 1];
        for w in self.nodes.keys() {
            z[w.depth()] += 1;
        }
        z
    }

    /// M_n for every n in `0..=height`.
    pub fn mark_counts(&self) -> Vec<usize> {
        let mut per_depth = vec![0; self.height + 1];
        for (w, info) in &self.nodes {
            per_depth[w.depth()] += info.mark as usize;
        }
        let mut m = vec![0; self.height + 1];
        for n in 1..=self.height {
            m[n] = m[n - 1] + per_depth[n - 1];
        }
        m
    }

    /// True when the tree is the full regular `r`-ary tree up to its height.
    pub fn is_regular(&self, r: u32) -> bool {
        self.nodes
            .iter()
            .all(|(w, info)| if w.depth() == self.height { true } else { info.out_degree == r })
    }
}

/// Restriction to generations `0..=h`; nodes at depth `h` lose their
/// children and their mark.
pub fn restrict(tree: &MarkedTree, h: usize) -> Result<MarkedTree> {
    if h > tree.height {
        return Err(Error::HorizonExceedsTree { requested: h, height: tree.height });
    }
    let nodes = tree
        .nodes
        .iter()
        .filter(|(w, _)| w.depth() <= h)
        .map(|(w, info)| {
            let info = if w.depth() == h { NodeInfo { out_degree: 0, mark: 0 } } else { *info };
            (w.clone(), info)
        })
        .collect();
    Ok(MarkedTree { nodes, height: h })
}

/// Z_n, M_n and the generation-n words of `tree`.
pub fn generation_stats(tree: &MarkedTree, n: usize) -> Result<GenerationStats> {
    if n > tree.height {
        return Err(Error::HorizonExceedsTree { requested: n, height: tree.height });
    }
    let nodes: Vec<NodeWord> = tree.generation(n).map(|(w, _)| w.clone()).collect();
    let m = tree
        .nodes
        .iter()
        .filter(|(w, _)| w.depth() < n)
        .map(|(_, info)| info.mark as usize)
        .sum();
    Ok(GenerationStats { z: nodes.len(), m, nodes })
}

/// Exact masses of every node of a tree.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MassAssignment {
    masses: BTreeMap<NodeWord, BigRational>,
}

impl MassAssignment {
    pub fn get(&self, word: &NodeWord) -> Option<&BigRational> {
        self.masses.get(word)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&NodeWord, &BigRational)> {
        self.masses.iter()
    }

    /// Masses of generation `n`, left to right.
    pub fn generation(&self, n: usize) -> Vec<BigRational> {
        self.masses.iter().filter(|(w, _)| w.depth() == n).map(|(_, m)| m.clone()).collect()
    }

    pub fn generation_sum(&self, n: usize) -> BigRational {
        self.masses
            .iter()
            .filter(|(w, _)| w.depth() == n)
            .fold(BigRational::zero(), |acc, (_, m)| acc + m)
    }

    /// One `word;num/den` line per node.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (w, m) in &self.masses {
            out.push_str(&format!("{w};{}\n", format_ratio(m)));
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut masses = BTreeMap::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (w, m) = line
                .split_once(';')
                .ok_or_else(|| Error::Parse(format!("mass line '{line}'")))?;
            let m = parse_rational(m).ok_or_else(|| Error::Parse(format!("mass value '{m}'")))?;
            masses.insert(w.parse()?, m);
        }
        Ok(MassAssignment { masses })
    }
}

/// Next-generation masses from one generation's masses and reproduction
/// data: every node hands its mass (plus one if marked) evenly to its
/// children, and the childless nodes' share is spread over the whole next
/// generation. Output is left to right over the children.
pub fn next_generation_masses(current: &[(BigRational, u32, u8)]) -> Vec<BigRational> {
    let z_next: u64 = current.iter().map(|(_, k, _)| *k as u64).sum();
    if z_next == 0 {
        return Vec::new();
    }
    let orphan: BigRational = current
        .iter()
        .filter(|(_, k, _)| *k == 0)
        .fold(BigRational::zero(), |acc, (m, _, eta)| acc + m + BigRational::from_integer((*eta).into()));
    let orphan_share = orphan / BigRational::from_integer(z_next.into());
    let mut out = Vec::with_capacity(z_next as usize);
    for (m, k, eta) in current {
        if *k == 0 {
            continue;
        }
        let own = (m + BigRational::from_integer((*eta).into())) / BigRational::from_integer((*k).into());
        let v = own + &orphan_share;
        out.extend(std::iter::repeat_n(v, *k as usize));
    }
    out
}

pub fn compute_masses(tree: &MarkedTree) -> MassAssignment {
    let mut masses = BTreeMap::new();
    let mut gen: Vec<(NodeWord, BigRational)> = vec![(NodeWord::root(), BigRational::zero())];
    for depth in 0..=tree.height {
        let data: Vec<(BigRational, u32, u8)> = gen
            .iter()
            .map(|(w, m)| {
                let info = tree.nodes[w];
                (m.clone(), info.out_degree, info.mark)
            })
            .collect();
        let next_masses = if depth < tree.height { next_generation_masses(&data) } else { Vec::new() };
        let next_words: Vec<NodeWord> = tree.generation(depth + 1).map(|(w, _)| w.clone()).collect();
        for (w, m) in gen.drain(..) {
            masses.insert(w, m);
        }
        gen = next_words.into_iter().zip(next_masses).collect();
    }
    MassAssignment { masses }
}

impl MarkedTree {
    /// Text form: a `height=<h>` line followed by one `word;out_degree;mark`
    /// record per node, root first (its word is the empty string).
    pub fn to_text(&self) -> String {
        self.to_text_with(|_| None)
    }

    /// Like [`MarkedTree::to_text`] with an optional `:type` suffix per node.
    pub fn to_text_with(&self, ty: impl Fn(&NodeWord) -> Option<u32>) -> String {
        let mut out = format!("height={}\n", self.height);
        for (w, info) in &self.nodes {
            out.push_str(&format!("{w};{};{}", info.out_degree, info.mark));
            if let Some(t) = ty(w) {
                out.push_str(&format!(":{t}"));
            }
            out.push('\n');
        }
        out
    }

    /// Parses the text form; `:type` suffixes are returned alongside.
    pub fn parse_typed(text: &str) -> Result<(MarkedTree, BTreeMap<NodeWord, u32>)> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| Error::Parse("empty tree text".into()))?;
        let height: usize = header
            .trim()
            .strip_prefix("height=")
            .and_then(|h| h.parse().ok())
            .ok_or_else(|| Error::Parse(format!("bad header '{header}'")))?;
        let mut records = Vec::new();
        let mut types = BTreeMap::new();
        for line in lines {
            let (body, ty) = match line.split_once(':') {
                Some((b, t)) => {
                    let t = t.trim().parse::<u32>().map_err(|_| Error::Parse(format!("bad type in '{line}'")))?;
                    (b, Some(t))
                }
                None => (line, None),
            };
            let fields: Vec<&str> = body.split(';').collect();
            if fields.len() != 3 {
                return Err(Error::Parse(format!("record '{line}' needs word;out_degree;mark")));
            }
            let word: NodeWord = fields[0].parse()?;
            let k = fields[1].trim().parse().map_err(|_| Error::Parse(format!("bad out-degree in '{line}'")))?;
            let eta = fields[2].trim().parse().map_err(|_| Error::Parse(format!("bad mark in '{line}'")))?;
            if let Some(t) = ty {
                types.insert(word.clone(), t);
            }
            records.push((word, k, eta));
        }
        Ok((build_tree(records, height)?, types))
    }

    pub fn parse(text: &str) -> Result<MarkedTree> {
        Self::parse_typed(text).map(|(t, _)| t)
    }
}
