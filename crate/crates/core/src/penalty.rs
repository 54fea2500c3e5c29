//! Penalization martingales, their fixed-point constants and the node laws
//! of the tilted trees they define.
//!
//! Weights are returned in log space. The polynomial and regular-tree
//! regimes also have exact rational weights, which the oracle uses to
//! check martingale identities with equality instead of a tolerance.

use std::fmt;

use num_rational::BigRational;
use num_traits::{One, Zero};
use rand::Rng;

use crate::error::{Error, Result};
use crate::laws::{Criticality, MarkedGWLaw, MarkedPgf};
use crate::moments::{f_ell_eval, omega_table, p_ell_eval, xi_table, OmegaTable, XiTable, MAX_ELL};
use crate::scalar::{factorial, rational_from_f64, Scalar};

/// Default cap on explicitly enumerated type vectors.
pub const TYPE_VECTOR_CAP: usize = 1_000_000;

const KAPPA_MAX_ITER: usize = 200;
const NORMALIZATION_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Regime {
    PolySub { ell: usize },
    PolyCrit,
    PolySuper { ell: usize },
    /// `ell = 0` is the plain exponential weight, `ell ≥ 1` the spine weight.
    ExpoPositive { s: f64, ell: usize },
    ExpoRary { s: f64, r: u32 },
    ExpoZero { ell: usize },
    ExpoZeroRary { r_tilde: u32 },
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Regime::PolySub { ell } => write!(f, "poly-sub(ell={ell})"),
            Regime::PolyCrit => write!(f, "poly-crit"),
            Regime::PolySuper { ell } => write!(f, "poly-super(ell={ell})"),
            Regime::ExpoPositive { s, ell } => write!(f, "expo-positive(s={s},ell={ell})"),
            Regime::ExpoRary { s, r } => write!(f, "expo-rary(s={s},r={r})"),
            Regime::ExpoZero { ell } => write!(f, "expo-zero(ell={ell})"),
            Regime::ExpoZeroRary { r_tilde } => write!(f, "expo-zero-rary(r={r_tilde})"),
        }
    }
}

impl Regime {
    /// Builds a regime from its command-line tag. `r` and `r̃` come from the law.
    pub fn from_tag(tag: &str, ell: Option<usize>, s: Option<f64>, law: &MarkedGWLaw) -> Result<Regime> {
        let need_s = || s.ok_or_else(|| Error::RegimeMismatch(format!("{tag} needs --s")));
        let need_ell = || ell.ok_or_else(|| Error::RegimeMismatch(format!("{tag} needs --ell")));
        let regime = match tag {
            "poly-sub" => Regime::PolySub { ell: need_ell()? },
            "poly-crit" => Regime::PolyCrit,
            "poly-super" => Regime::PolySuper { ell: need_ell()? },
            "expo-positive" => Regime::ExpoPositive { s: need_s()?, ell: ell.unwrap_or(0) },
            "expo-rary" => Regime::ExpoRary { s: need_s()?, r: law.bounds().r },
            "expo-zero" => Regime::ExpoZero { ell: ell.unwrap_or(0) },
            "expo-zero-rary" => Regime::ExpoZeroRary {
                r_tilde: law
                    .bounds()
                    .r_tilde
                    .ok_or_else(|| Error::RegimeMismatch("no out-degree stays unmarked".into()))?,
            },
            other => return Err(Error::RegimeMismatch(format!("unknown regime tag '{other}'"))),
        };
        Ok(regime)
    }

    /// Whether the tilted measure has an explicit construction.
    pub fn has_tilted_tree(&self) -> bool {
        !matches!(self, Regime::PolyCrit | Regime::PolySuper { .. })
    }
}

/// Generation index with population size and marks strictly above it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct State {
    pub n: u32,
    pub z: u32,
    pub m: u32,
}

impl State {
    pub const ROOT: State = State { n: 0, z: 1, m: 0 };
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KappaSolution {
    /// Smallest fixed point in `[0, 1]`.
    pub kappa: f64,
    /// Derivative of the generating function at the fixed point.
    pub derivative: f64,
}

/// Fixed point of `f_s` (or of `ψ` in zero-mark mode) by bisection.
pub fn kappa_solve(law: &MarkedGWLaw, s: f64, zero_mark_mode: bool) -> Result<KappaSolution> {
    if !zero_mark_mode && !(0.0..1.0).contains(&s) {
        return Err(Error::RegimeMismatch(format!("κ(s) needs s in [0,1), got {s}")));
    }
    let f = law.pgf(if zero_mark_mode { 0.0 } else { s })?;
    let kappa = fixed_point(&f);
    Ok(KappaSolution { kappa, derivative: f.derivatives(kappa, 1)[1] })
}

fn fixed_point(f: &MarkedPgf) -> f64 {
    if f.coeffs()[0] == 0.0 {
        return 0.0;
    }
    // f(0) > 0 > f(1) - 1 and f(t) - t is convex: a single crossing
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    let mut mid = 0.5;
    for _ in 0..KAPPA_MAX_ITER {
        mid = 0.5 * (lo + hi);
        let g = f.eval(mid) - mid;
        // run the bracket down to machine precision: a residual test on g
        // would stop early by a factor 1/(1 - f'(κ))
        if g == 0.0 || hi - lo <= f64::EPSILON {
            break;
        }
        if g > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    mid
}

/// `α_r(s) = p(r)(s q(r) + 1 - q(r))`.
pub fn alpha_r(law: &MarkedGWLaw, s: f64, r: u32) -> f64 {
    let q = law.q(r);
    law.p(r) * (s * q + 1.0 - q)
}

fn alpha_r_exact(law: &MarkedGWLaw, s: &BigRational, r: u32) -> Result<BigRational> {
    let p = law.offspring()?.get(&r).cloned().unwrap_or_else(BigRational::zero);
    let q = law.mark_function().at(r).clone();
    Ok(p * (s * &q + BigRational::one() - q))
}

/// Prebuilt constants for one regime on one law.
#[derive(Debug, Clone)]
pub struct WeightTables {
    regime: Regime,
    mu: f64,
    mu_exact: Option<BigRational>,
    xi: Option<XiTable<BigRational>>,
    omega: Option<OmegaTable<BigRational>>,
    kappa: Option<KappaSolution>,
    log_alpha: f64,
    alpha_exact: Option<BigRational>,
    s_exact: Option<BigRational>,
}

fn mismatch(msg: impl Into<String>) -> Error {
    Error::RegimeMismatch(msg.into())
}

fn check_s(s: f64) -> Result<()> {
    if s > 0.0 && s < 1.0 {
        Ok(())
    } else {
        Err(mismatch(format!("s must lie in (0,1), got {s}")))
    }
}

impl WeightTables {
    /// Checks admissibility of `regime` for `law` and builds its constants.
    pub fn build(law: &MarkedGWLaw, regime: Regime) -> Result<WeightTables> {
        let mut t = WeightTables {
            regime,
            mu: law.mean(),
            mu_exact: law.mean_exact().cloned(),
            xi: None,
            omega: None,
            kappa: None,
            log_alpha: 0.0,
            alpha_exact: None,
            s_exact: None,
        };
        let crit = law.criticality();
        let bounds = law.bounds();
        match regime {
            Regime::PolySub { ell } => {
                if crit != Criticality::Subcritical {
                    return Err(mismatch(format!("poly-sub needs μ < 1, law is {crit}")));
                }
                t.xi = Some(xi_table(law, ell)?);
            }
            Regime::PolyCrit => {
                if crit != Criticality::Critical {
                    return Err(mismatch(format!("poly-crit needs μ = 1, law is {crit}")));
                }
            }
            Regime::PolySuper { ell } => {
                if crit != Criticality::Supercritical {
                    return Err(mismatch(format!("poly-super needs μ > 1, law is {crit}")));
                }
                t.omega = Some(omega_table(law, ell)?);
            }
            Regime::ExpoPositive { s, ell } => {
                check_s(s)?;
                if ell > MAX_ELL {
                    return Err(Error::OrderTooLarge { order: ell, max: MAX_ELL });
                }
                if bounds.r != 0 {
                    return Err(mismatch("expo-positive needs p(0) > 0; use expo-rary"));
                }
                t.kappa = Some(kappa_solve(law, s, false)?);
            }
            Regime::ExpoRary { s, r } => {
                check_s(s)?;
                if bounds.r == 0 {
                    return Err(mismatch("expo-rary needs p(0) = 0 (minimal out-degree r ≥ 1)"));
                }
                if r != bounds.r {
                    return Err(mismatch(format!("expo-rary: the law has r = {}, got r = {r}", bounds.r)));
                }
                let s_exact = rational_from_f64(s).ok_or_else(|| mismatch("s is not finite"))?;
                t.log_alpha = alpha_r(law, s, r).ln();
                t.alpha_exact = law.is_finite().then(|| alpha_r_exact(law, &s_exact, r)).transpose()?;
                t.s_exact = Some(s_exact);
            }
            Regime::ExpoZero { ell } => {
                if ell > MAX_ELL {
                    return Err(Error::OrderTooLarge { order: ell, max: MAX_ELL });
                }
                if bounds.r_tilde != Some(0) {
                    return Err(mismatch("expo-zero needs an unmarked leaf, p(0)(1 - q(0)) > 0"));
                }
                let k = kappa_solve(law, 0.0, true)?;
                if ell >= 1 && k.derivative <= 0.0 {
                    return Err(mismatch("ψ'(κ̃) = 0: unmarked nodes never reproduce, no spine weight"));
                }
                t.kappa = Some(k);
            }
            Regime::ExpoZeroRary { r_tilde } => {
                match bounds.r_tilde {
                    Some(rt) if rt >= 1 && rt == r_tilde => {}
                    Some(0) => return Err(mismatch("expo-zero-rary needs r̃ ≥ 1; this law has unmarked leaves")),
                    _ => return Err(mismatch(format!("expo-zero-rary with r̃ = {r_tilde} does not match the law"))),
                }
                let p = crate::laws::reproduction_mark_prob(law, r_tilde, 0);
                t.log_alpha = p.ln();
                t.alpha_exact = law
                    .is_finite()
                    .then(|| crate::laws::reproduction_mark_prob_exact(law, r_tilde, 0))
                    .transpose()?;
            }
        }
        Ok(t)
    }

    pub fn regime(&self) -> Regime {
        self.regime
    }

    pub fn xi(&self) -> Option<&XiTable<BigRational>> {
        self.xi.as_ref()
    }

    pub fn kappa(&self) -> Option<KappaSolution> {
        self.kappa
    }

    /// Exact weight for regimes whose density is rational.
    pub fn exact_weight(&self, st: State) -> Result<BigRational> {
        let q = |v: u64| BigRational::from_integer(v.into());
        match self.regime {
            Regime::PolySub { ell } => Ok(f_ell_eval(self.xi.as_ref().expect("built"), ell, &q(st.m as u64), st.z)),
            Regime::PolyCrit => Ok(q(st.z as u64)),
            Regime::PolySuper { ell } => {
                let mu = self.mu_exact.as_ref().ok_or(Error::UnsupportedInfiniteSupport)?;
                Ok(p_ell_eval(self.omega.as_ref().expect("built"), ell, st.z) / mu.powu(ell as u64 * st.n as u64))
            }
            Regime::ExpoRary { r, .. } => {
                let alpha = self.alpha_exact.as_ref().ok_or(Error::UnsupportedInfiniteSupport)?;
                let s = self.s_exact.as_ref().expect("built");
                Ok(match rary_exponent(r, st.n) {
                    Some(e) if st.z as u64 == r_pow(r, st.n).unwrap_or(0) => s.powu(st.m as u64) / alpha.powu(e),
                    _ => BigRational::zero(),
                })
            }
            Regime::ExpoZeroRary { r_tilde } => {
                let alpha = self.alpha_exact.as_ref().ok_or(Error::UnsupportedInfiniteSupport)?;
                Ok(match rary_exponent(r_tilde, st.n) {
                    Some(e) if st.m == 0 && st.z as u64 == r_pow(r_tilde, st.n).unwrap_or(0) => {
                        BigRational::one() / alpha.powu(e)
                    }
                    _ => BigRational::zero(),
                })
            }
            _ => Err(mismatch(format!("{} has no rational weight (κ is irrational in general)", self.regime))),
        }
    }

    pub fn has_exact_weight(&self) -> bool {
        !matches!(self.regime, Regime::ExpoPositive { .. } | Regime::ExpoZero { .. })
    }
}

fn r_pow(r: u32, n: u32) -> Option<u64> {
    (r as u64).checked_pow(n)
}

/// `(r^n - 1)/(r - 1)`, or `n` when `r = 1`.
fn rary_exponent(r: u32, n: u32) -> Option<u64> {
    if r == 1 {
        Some(n as u64)
    } else {
        r_pow(r, n).map(|p| (p - 1) / (r as u64 - 1))
    }
}

/// A value of the density martingale, held as its logarithm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GirsanovWeight {
    pub regime: Regime,
    pub n: u32,
    pub log_value: f64,
}

impl GirsanovWeight {
    pub fn value(&self) -> f64 {
        self.log_value.exp()
    }
}

/// Density of the tilted measure on `F_n`, evaluated at `(n, Z_n, M_n)`.
pub fn girsanov_weight(tables: &WeightTables, st: State) -> Result<GirsanovWeight> {
    let z = st.z as f64;
    let m = st.m as f64;
    let log_value = match tables.regime {
        Regime::PolySub { ell } => {
            let xi = tables.xi.as_ref().expect("built").to_f64();
            f_ell_eval(&xi, ell, &m, st.z).ln()
        }
        Regime::PolyCrit => z.ln(),
        Regime::PolySuper { ell } => {
            let omega = tables.omega.as_ref().expect("built").to_f64();
            p_ell_eval(&omega, ell, st.z).ln() - (ell as f64) * (st.n as f64) * tables.mu.ln()
        }
        Regime::ExpoPositive { s, ell } => {
            let k = tables.kappa.expect("built");
            let base = m * s.ln() + (z - 1.0) * k.kappa.ln();
            if ell == 0 {
                base
            } else {
                base + z.ln() - st.n as f64 * k.derivative.ln()
            }
        }
        Regime::ExpoRary { s, r } => {
            if r_pow(r, st.n) == Some(st.z as u64) {
                m * s.ln() - rary_exponent(r, st.n).expect("fits") as f64 * tables.log_alpha
            } else {
                f64::NEG_INFINITY
            }
        }
        Regime::ExpoZero { ell } => {
            let k = tables.kappa.expect("built");
            if st.m > 0 {
                f64::NEG_INFINITY
            } else if ell == 0 {
                (z - 1.0) * k.kappa.ln()
            } else {
                z.ln() + (z - 1.0) * k.kappa.ln() - st.n as f64 * k.derivative.ln()
            }
        }
        Regime::ExpoZeroRary { r_tilde } => {
            if st.m == 0 && r_pow(r_tilde, st.n) == Some(st.z as u64) {
                -(rary_exponent(r_tilde, st.n).expect("fits") as f64) * tables.log_alpha
            } else {
                f64::NEG_INFINITY
            }
        }
    };
    // 0^0 conventions: κ = 0 with Z = 1 contributes nothing
    let log_value = if log_value.is_nan() { 0.0 } else { log_value };
    Ok(GirsanovWeight { regime: tables.regime, n: st.n, log_value })
}

/// Multinomial coefficient `ℓ! / Π t_u!`.
fn multinomial<S: Scalar>(types: &[usize]) -> S {
    let ell: usize = types.iter().sum();
    types.iter().fold(factorial::<S>(ell), |acc, t| acc / factorial::<S>(*t))
}

/// All vectors of `z` nonnegative integers summing to `ell`, lexicographically decreasing.
fn type_vectors(ell: usize, z: usize, cap: usize) -> Result<Vec<Vec<usize>>> {
    // C(ell + z - 1, ell) without overflow
    let mut count: u128 = 1;
    for i in 1..=ell as u128 {
        count = count * (z as u128 + i - 1) / i;
        if count > cap as u128 {
            return Err(Error::TooManyTypeVectors { cap });
        }
    }
    fn rec(left: usize, slots: usize, acc: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if slots == 1 {
            acc.push(left);
            out.push(acc.clone());
            acc.pop();
            return;
        }
        for t in (0..=left).rev() {
            acc.push(t);
            rec(left - t, slots - 1, acc, out);
            acc.pop();
        }
    }
    let mut out = Vec::with_capacity(count as usize);
    if z > 0 {
        rec(ell, z, &mut Vec::with_capacity(z), &mut out);
    }
    Ok(out)
}

/// Law of the type vector of a generation with the given masses.
///
/// Returns `(types, probability)` pairs over all vectors summing to `ell`.
pub fn gamma_type_distribution<S: Scalar>(
    xi: &XiTable<S>,
    ell: usize,
    masses: &[BigRational],
    m_n: u32,
    cap: usize,
) -> Result<Vec<(Vec<usize>, S)>> {
    if masses.is_empty() {
        return Err(Error::InconsistentMasses("a type vector needs at least one node".into()));
    }
    let total = masses.iter().fold(BigRational::zero(), |a, b| a + b);
    if total != BigRational::from_integer(m_n.into()) {
        return Err(Error::InconsistentMasses(format!("Σ m_u = {total}, M_n = {m_n}")));
    }
    let z = masses.len();
    let m: Vec<S> = masses.iter().map(S::from_ratio).collect();
    // f_t(m_u, 1) ξ_t for every node and every t ≤ ℓ
    let node_terms: Vec<Vec<S>> = m
        .iter()
        .map(|mu| (0..=ell).map(|t| f_ell_eval(xi, t, mu, 1) * xi.get(t).clone()).collect())
        .collect();
    let denom = xi.get(ell).clone() * f_ell_eval(xi, ell, &S::from_u64(m_n as u64), z as u32);
    type_vectors(ell, z, cap)?
        .into_iter()
        .map(|types| {
            let num = types
                .iter()
                .zip(&node_terms)
                .fold(multinomial::<S>(&types), |acc, (t, terms)| acc * terms[*t].clone());
            let p = num / denom.clone();
            Ok((types, p))
        })
        .collect()
}

/// Which tilted reproduction law a node follows.
#[derive(Debug, Clone, PartialEq)]
pub enum NodeLawKind {
    Base,
    /// `p_i(· | m)` of a type-`i` node with mass `m`.
    Typed { i: usize },
    /// `p_{s,0}`: the exponentially tilted MGW law.
    Leafless { s: f64, kappa: f64 },
    /// `p_{s,1} = p_{s,0} · k / f_s'(κ)`.
    Spine { s: f64, kappa: f64, derivative: f64 },
    /// `p_{0,1}`: unmarked reproduction tilted by `κ̃`.
    ZeroMark { kappa_tilde: f64 },
    /// `p_{0,2} = p_{0,1} · k / ψ'(κ̃)`.
    ZeroMarkSpine { kappa_tilde: f64, derivative: f64 },
    /// Exactly `r` children, mark Bernoulli(`s q(r) / (s q(r) + 1 - q(r))`).
    RaryBernoulli { s: f64, r: u32 },
    /// Exactly `r̃` children, never marked.
    RaryUnmarked { r_tilde: u32 },
}

/// A reproduction-marking law over `(k, η)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TiltedNodeLaw<S> {
    pub kind: NodeLawKind,
    /// Positive atoms `(k, η, probability)`.
    pub atoms: Vec<(u32, u8, S)>,
}

impl<S: Scalar> TiltedNodeLaw<S> {
    pub fn prob(&self, k: u32, eta: u8) -> S {
        self.atoms
            .iter()
            .find(|(kk, e, _)| *kk == k && *e == eta)
            .map(|(_, _, p)| p.clone())
            .unwrap_or_else(S::zero)
    }

    /// Inverse-CDF draw.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (u32, u8) {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (k, eta, p) in &self.atoms {
            acc += p.to_f64();
            if u < acc {
                return (*k, *eta);
            }
        }
        let (k, eta, _) = self.atoms.last().expect("nonempty law");
        (*k, *eta)
    }

    fn checked(self) -> Result<Self> {
        let total = self.atoms.iter().fold(S::zero(), |acc, (_, _, p)| acc + p.clone());
        let gap = (total.clone() - S::one()).abs_val().to_f64();
        if gap > NORMALIZATION_TOL || self.atoms.iter().any(|(_, _, p)| *p < S::zero()) {
            return Err(Error::NotNormalizable(format!("{:?} sums to {}", self.kind, total.to_f64())));
        }
        Ok(self)
    }
}

/// `p_i(k, η | m) = p_0(k, η) f_i(m + η, k) / f_i(m, 1)`.
pub fn typed_node_law<S: Scalar>(law: &MarkedGWLaw, xi: &XiTable<S>, i: usize, mass: &S) -> Result<TiltedNodeLaw<S>> {
    let denom = f_ell_eval(xi, i, mass, 1);
    let atoms = law
        .atoms_as::<S>()?
        .into_iter()
        .map(|(k, eta, p)| {
            let m = mass.clone() + S::from_u64(eta as u64);
            (k, eta, p * f_ell_eval(xi, i, &m, k) / denom.clone())
        })
        .filter(|(_, _, p)| !p.is_zero())
        .collect();
    TiltedNodeLaw { kind: NodeLawKind::Typed { i }, atoms }.checked()
}

/// The non-typed tilted laws, in double precision.
pub fn tilted_node_law(kind: NodeLawKind, law: &MarkedGWLaw) -> Result<TiltedNodeLaw<f64>> {
    let atoms = law.atoms_as::<f64>()?;
    let pw = |x: f64, k: u32| if k == 0 { 1.0 } else { x.powi(k as i32) };
    let scaled: Vec<(u32, u8, f64)> = match kind {
        NodeLawKind::Base => atoms,
        NodeLawKind::Typed { .. } => {
            return Err(Error::NotNormalizable("typed laws need a ξ table; use typed_node_law".into()))
        }
        NodeLawKind::Leafless { s, kappa } => atoms
            .into_iter()
            .map(|(k, eta, p)| (k, eta, p * if eta == 1 { s } else { 1.0 } * pw(kappa, k) / kappa))
            .collect(),
        NodeLawKind::Spine { s, kappa, derivative } => atoms
            .into_iter()
            .map(|(k, eta, p)| {
                let base = if k == 0 { 0.0 } else { p * if eta == 1 { s } else { 1.0 } * pw(kappa, k - 1) };
                (k, eta, base * k as f64 / derivative)
            })
            .collect(),
        NodeLawKind::ZeroMark { kappa_tilde } => atoms
            .into_iter()
            .filter(|(_, eta, _)| *eta == 0)
            .map(|(k, eta, p)| (k, eta, p * pw(kappa_tilde, k) / kappa_tilde))
            .collect(),
        NodeLawKind::ZeroMarkSpine { kappa_tilde, derivative } => atoms
            .into_iter()
            .filter(|(k, eta, _)| *eta == 0 && *k > 0)
            .map(|(k, eta, p)| (k, eta, p * k as f64 * pw(kappa_tilde, k - 1) / derivative))
            .collect(),
        NodeLawKind::RaryBernoulli { s, r } => {
            let q = law.q(r);
            let pi = s * q / (s * q + 1.0 - q);
            vec![(r, 0, 1.0 - pi), (r, 1, pi)]
        }
        NodeLawKind::RaryUnmarked { r_tilde } => vec![(r_tilde, 0, 1.0)],
    };
    let atoms = scaled.into_iter().filter(|(_, _, p)| *p > 0.0).collect();
    TiltedNodeLaw { kind, atoms }.checked()
}

/// `b(t) = ln t + Σ_j r^{-(j+1)} ln(f_s^{j+1}(t) / f_s^j(t)^r)` for laws without leaves.
pub fn b_exponent(law: &MarkedGWLaw, s: f64, t: f64) -> Result<f64> {
    let r = law.bounds().r;
    if r < 2 {
        return Err(mismatch(format!("b(t) needs p(0) = 0 and r ≥ 2, got r = {r}")));
    }
    check_s(s)?;
    if !(t > 0.0 && t <= 1.0) {
        return Err(mismatch(format!("b(t) needs t in (0,1], got {t}")));
    }
    let f = law.pgf(s)?;
    let a = f.coeffs();
    let ln_ar = a[r as usize].ln();
    let rf = r as f64;
    let mut l = t.ln();
    let mut b = l;
    let mut scale = 1.0;
    for _ in 0..10_000 {
        // L_{j+1} - r L_j = ln a_r + ln(1 + Σ_{k>r} (a_k/a_r) e^{(k-r) L_j})
        let tail: f64 = a
            .iter()
            .enumerate()
            .skip(r as usize + 1)
            .map(|(k, ak)| ak / a[r as usize] * ((k - r as usize) as f64 * l).exp())
            .sum();
        let delta = ln_ar + tail.ln_1p();
        scale /= rf;
        let inc = scale * delta;
        b += inc;
        l = rf * l + delta;
        if inc.abs() < 1e-14 {
            break;
        }
    }
    Ok(b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::laws::fixtures::*;
    use crate::scalar::rational;
    use approx::assert_relative_eq;
    use num_rational::BigRational as Q;

    #[test]
    fn kappa_examples() {
        let b = law_b();
        let k = kappa_solve(&b, 0.5, false).unwrap();
        assert!((k.kappa - (2.0 - 3f64.sqrt())).abs() < 1e-12);
        for s in [0.1f64, 0.3, 0.7, 0.95] {
            let exact = (1.0 - (1.0 - s * s).sqrt()) / s;
            assert!((kappa_solve(&b, s, false).unwrap().kappa - exact).abs() < 1e-12);
        }
        assert_eq!(kappa_solve(&law_f(), 0.5, false).unwrap().kappa, 0.0);
        let a = law_a();
        let mut prev = 0.0;
        for i in 0..20 {
            let s = i as f64 / 20.0;
            let k = kappa_solve(&a, s, false).unwrap();
            let f = a.pgf(s).unwrap();
            assert!((f.eval(k.kappa) - k.kappa).abs() < 1e-12);
            assert!(k.kappa >= prev);
            prev = k.kappa;
        }
        // ψ ≡ 0.6 for law A
        let z = kappa_solve(&a, 0.0, true).unwrap();
        assert!((z.kappa - 0.6).abs() < 1e-14);
        assert_eq!(z.derivative, 0.0);
        assert_eq!(kappa_solve(&law_f(), 0.0, true).unwrap().kappa, 0.0);
    }

    #[test]
    fn root_weight_is_one() {
        let cases = [
            (law_a(), Regime::PolySub { ell: 2 }),
            (law_d(), Regime::PolyCrit),
            (law_c(), Regime::PolySuper { ell: 2 }),
            (law_a(), Regime::ExpoPositive { s: 0.5, ell: 0 }),
            (law_a(), Regime::ExpoPositive { s: 0.5, ell: 1 }),
            (law_f(), Regime::ExpoRary { s: 0.5, r: 2 }),
            (law_a(), Regime::ExpoZero { ell: 0 }),
            (law_g(), Regime::ExpoZero { ell: 1 }),
            (law_f(), Regime::ExpoZeroRary { r_tilde: 2 }),
        ];
        for (law, regime) in cases {
            let t = WeightTables::build(&law, regime).unwrap();
            let w = girsanov_weight(&t, State::ROOT).unwrap();
            assert!(w.log_value.abs() < 1e-15, "{regime}: {}", w.log_value);
            if t.has_exact_weight() {
                assert_eq!(t.exact_weight(State::ROOT).unwrap(), Q::one());
            }
        }
    }

    #[test]
    fn weight_examples() {
        let t = WeightTables::build(&law_d(), Regime::PolyCrit).unwrap();
        assert_relative_eq!(girsanov_weight(&t, State { n: 4, z: 3, m: 2 }).unwrap().value(), 3.0);
        let t = WeightTables::build(&law_a(), Regime::PolySub { ell: 1 }).unwrap();
        let st = State { n: 2, z: 2, m: 1 };
        assert_eq!(t.exact_weight(st).unwrap(), rational(5, 2));
        assert_relative_eq!(girsanov_weight(&t, st).unwrap().value(), 2.5, max_relative = 1e-15);
        let t = WeightTables::build(&law_f(), Regime::ExpoRary { s: 0.5, r: 2 }).unwrap();
        let st = State { n: 1, z: 2, m: 1 };
        assert_eq!(t.exact_weight(st).unwrap(), rational(10, 9));
        assert_relative_eq!(girsanov_weight(&t, st).unwrap().value(), 0.5 / 0.45, max_relative = 1e-14);
        assert_eq!(girsanov_weight(&t, State { n: 1, z: 3, m: 1 }).unwrap().value(), 0.0);
    }

    #[test]
    fn rary_weights_stay_finite_in_log_space() {
        let t = WeightTables::build(&law_f(), Regime::ExpoRary { s: 0.5, r: 2 }).unwrap();
        let w = girsanov_weight(&t, State { n: 12, z: 4096, m: 0 }).unwrap();
        assert!(w.log_value.is_finite() && w.log_value > 700.0);
    }

    #[test]
    fn admissibility() {
        let bad = [
            (law_a(), Regime::PolyCrit),
            (law_c(), Regime::PolySub { ell: 1 }),
            (law_a(), Regime::PolySuper { ell: 1 }),
            (law_f(), Regime::ExpoPositive { s: 0.5, ell: 0 }),
            (law_a(), Regime::ExpoRary { s: 0.5, r: 0 }),
            (law_a(), Regime::ExpoZeroRary { r_tilde: 0 }),
            (law_a(), Regime::ExpoZero { ell: 1 }),
            (law_f(), Regime::ExpoZero { ell: 0 }),
            (law_a(), Regime::ExpoPositive { s: 1.0, ell: 0 }),
        ];
        for (law, regime) in bad {
            assert!(matches!(WeightTables::build(&law, regime), Err(Error::RegimeMismatch(_))), "{regime}");
        }
        assert!(Regime::from_tag("expo-zero-rary", None, None, &law_a()).is_ok());
        assert!(WeightTables::build(&law_a(), Regime::from_tag("expo-zero-rary", None, None, &law_a()).unwrap()).is_err());
    }

    #[test]
    fn gamma_at_order_one() {
        let xi = xi_table::<Q>(&law_a(), 3).unwrap();
        let zero = vec![Q::zero(); 4];
        let g = gamma_type_distribution(&xi, 1, &zero, 0, TYPE_VECTOR_CAP).unwrap();
        assert_eq!(g.len(), 4);
        assert!(g.iter().all(|(_, p)| *p == rational(1, 4)));
        let masses = vec![rational(1, 3), rational(0, 1), rational(5, 3)];
        let g = gamma_type_distribution(&xi, 1, &masses, 2, TYPE_VECTOR_CAP).unwrap();
        for (types, p) in g {
            let u = types.iter().position(|t| *t == 1).unwrap();
            let expect = (Q::one() + masses[u].clone() / rational(2, 1)) / (rational(3, 1) + rational(1, 1));
            assert_eq!(p, expect);
        }
        assert!(matches!(
            gamma_type_distribution(&xi, 1, &masses, 3, TYPE_VECTOR_CAP),
            Err(Error::InconsistentMasses(_))
        ));
        assert_eq!(
            gamma_type_distribution(&xi, 3, &vec![Q::zero(); 200], 0, 1000).unwrap_err(),
            Error::TooManyTypeVectors { cap: 1000 }
        );
    }

    #[test]
    fn gamma_normalizes() {
        let xi = xi_table::<Q>(&law_a(), 3).unwrap();
        let masses = vec![rational(1, 3), rational(4, 9), rational(7, 9), rational(4, 9)];
        for ell in 1..=3 {
            let total = gamma_type_distribution(&xi, ell, &masses, 2, TYPE_VECTOR_CAP)
                .unwrap()
                .into_iter()
                .fold(Q::zero(), |a, (_, p)| a + p);
            assert_eq!(total, Q::one());
        }
    }

    #[test]
    fn typed_laws() {
        let law = law_a();
        let xi = xi_table::<Q>(&law, 3).unwrap();
        let t0 = typed_node_law(&law, &xi, 0, &rational(7, 3)).unwrap();
        assert_eq!(t0.atoms, law.atoms_as::<Q>().unwrap());
        for i in 1..=3 {
            let t = typed_node_law(&law, &xi, i, &Q::zero()).unwrap();
            assert_eq!(t.prob(0, 0), Q::zero());
        }
        // p_1(k,η) = p_0(k,η)(k + η/ξ_1) at mass 0
        let t1 = typed_node_law(&law, &xi, 1, &Q::zero()).unwrap();
        assert_eq!(t1.prob(2, 1), rational(2, 5) * (rational(2, 1) + rational(1, 2)));
    }

    #[test]
    fn exponential_node_laws_normalize() {
        let a = law_a();
        let k = kappa_solve(&a, 0.5, false).unwrap();
        let spine = tilted_node_law(NodeLawKind::Spine { s: 0.5, kappa: k.kappa, derivative: k.derivative }, &a).unwrap();
        assert_eq!(spine.prob(0, 0), 0.0);
        let leafless = tilted_node_law(NodeLawKind::Leafless { s: 0.5, kappa: k.kappa }, &a).unwrap();
        let back: f64 = leafless.atoms.iter().map(|(k, _, p)| p * *k as f64).sum();
        let direct: f64 = spine.atoms.iter().map(|(_, _, p)| p).sum();
        assert_relative_eq!(direct, 1.0, epsilon = 1e-12);
        assert_relative_eq!(back, k.derivative / k.kappa * k.kappa, epsilon = 1e-12);
        let g = law_g();
        let z = kappa_solve(&g, 0.0, true).unwrap();
        let zm = tilted_node_law(NodeLawKind::ZeroMark { kappa_tilde: z.kappa }, &g).unwrap();
        assert!(zm.atoms.iter().all(|(_, eta, _)| *eta == 0));
        tilted_node_law(NodeLawKind::ZeroMarkSpine { kappa_tilde: z.kappa, derivative: z.derivative }, &g).unwrap();
        let rb = tilted_node_law(NodeLawKind::RaryBernoulli { s: 0.5, r: 2 }, &law_f()).unwrap();
        assert_relative_eq!(rb.prob(2, 1), 1.0 / 3.0, epsilon = 1e-15);
        // law A has ψ' = 0: the zero-mark spine law cannot be normalized
        let za = kappa_solve(&a, 0.0, true).unwrap();
        assert!(matches!(
            tilted_node_law(NodeLawKind::ZeroMarkSpine { kappa_tilde: za.kappa, derivative: za.derivative }, &a),
            Err(Error::NotNormalizable(_))
        ));
    }

    #[test]
    fn b_exponent_properties() {
        let f = law_f();
        for t in [0.1, 0.5, 0.9] {
            assert!(b_exponent(&f, 0.5, t).unwrap() < 0.0);
        }
        let target = -alpha_r(&f, 0.5, 2).ln();
        let t = 0.7;
        let b = b_exponent(&f, 0.5, t).unwrap();
        let pgf = f.pgf(0.5).unwrap();
        let mut x = t;
        for p in 1..=6 {
            x = pgf.eval(x);
            if p == 6 {
                assert!((x.ln() - 2f64.powi(p) * b - target).abs() < 1e-3);
            }
        }
        assert!(b_exponent(&law_a(), 0.5, 0.5).is_err());
    }
}
