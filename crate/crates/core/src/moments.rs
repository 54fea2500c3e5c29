//! Moment tables and the polynomial state functions built from them.
//!
//! Every recursion here has the same shape: the `ℓ`-th moment of a sum over
//! `z` i.i.d. subtrees is a multinomial composition sum of lower moments,
//! which [`crate::series`] evaluates without enumerating compositions.

use crate::error::{Error, Result};
use crate::laws::{Criticality, MarkedGWLaw};
use crate::scalar::{binomial, factorial, Scalar};
use crate::series::{composition_sum, composition_sums};

/// Largest moment order the tables accept.
pub const MAX_ELL: usize = 6;

macro_rules! table_type {
    ($(#[$doc:meta])* $name:ident) => {
        $(#[$doc])*
        #[derive(Debug, Clone, PartialEq)]
        pub struct $name<S> {
            values: Vec<S>,
        }

        impl<S: Scalar> $name<S> {
            /// Entry of order `ell`; entry 0 is always 1.
            pub fn get(&self, ell: usize) -> &S {
                &self.values[ell]
            }

            pub fn values(&self) -> &[S] {
                &self.values
            }

            pub fn max_order(&self) -> usize {
                self.values.len() - 1
            }

            pub fn to_f64(&self) -> $name<f64> {
                $name { values: self.values.iter().map(Scalar::to_f64).collect() }
            }
        }
    };
}

table_type!(
    /// `ξ_ℓ = E[M_∞^ℓ]` for a subcritical law.
    XiTable
);
table_type!(
    /// Supercritical constants with `E[M_p^ℓ] ~ ω_ℓ μ^{ℓp}`.
    OmegaTable
);
table_type!(
    /// Critical constants with `E[M_p^ℓ] ~ ω̃_ℓ p^{2ℓ-1}`.
    OmegaTildeTable
);

fn check_order(ell: usize) -> Result<()> {
    if ell > MAX_ELL {
        return Err(Error::OrderTooLarge { order: ell, max: MAX_ELL });
    }
    Ok(())
}

/// `Σ_{t_1+…+t_z=i} multinomial · Π c_{t_j}` with unconstrained parts.
fn comp<S: Scalar>(c: &[S], z: u32, i: usize) -> S {
    composition_sum(c, i, z as u64, i)
}

pub fn xi_table<S: Scalar>(law: &MarkedGWLaw, max_ell: usize) -> Result<XiTable<S>> {
    check_order(max_ell)?;
    let atoms = law.atoms_as::<S>()?;
    if law.criticality() != Criticality::Subcritical {
        return Err(Error::NotSubcritical(law.mean()));
    }
    let mu: S = law.mean_as()?;
    let one_minus_mu = S::one() - mu;
    let mut xi = vec![S::one()];
    for ell in 1..=max_ell {
        let mut rhs = S::zero();
        for (k, eta, p) in &atoms {
            // compositions of ℓ with every part < ℓ
            let mut term = composition_sum(&xi, ell - 1, *k as u64, ell);
            if *eta == 1 {
                let lower = composition_sums(&xi, ell - 1, *k as u64, ell - 1);
                for (j, s) in lower.into_iter().enumerate() {
                    term = term + binomial::<S>(ell, j) * s;
                }
            }
            rhs = rhs + p.clone() * term;
        }
        xi.push(rhs / one_minus_mu.clone());
    }
    Ok(XiTable { values: xi })
}

/// `f_ℓ(m, z) = (1/ξ_ℓ) Σ_i C(ℓ,i) m^{ℓ-i} Σ_{t_1+…+t_z=i} multinomial Π ξ_{t_j}`.
pub fn f_ell_eval<S: Scalar>(xi: &XiTable<S>, ell: usize, m: &S, z: u32) -> S {
    assert!(ell <= xi.max_order(), "f_ℓ needs ξ up to order {ell}");
    if ell == 0 {
        return S::one();
    }
    let sums = composition_sums(&xi.values[..=ell], ell, z as u64, ell);
    let total = sums
        .into_iter()
        .enumerate()
        .fold(S::zero(), |acc, (i, s)| acc + binomial::<S>(ell, i) * m.powu((ell - i) as u64) * s);
    total / xi.values[ell].clone()
}

/// Moment vectors `[E[M_p^0], ..., E[M_p^L]]` for `p = 0, 1, 2, ...`.
pub struct MomentRecursion<S> {
    atoms: Vec<(u32, u8, S)>,
    max_ell: usize,
    current: Vec<S>,
}

impl<S: Scalar> MomentRecursion<S> {
    pub fn new(law: &MarkedGWLaw, max_ell: usize) -> Result<Self> {
        let atoms = law.atoms_as::<S>()?;
        let mut current = vec![S::zero(); max_ell + 1];
        current[0] = S::one();
        Ok(MomentRecursion { atoms, max_ell, current })
    }

    pub fn current(&self) -> &[S] {
        &self.current
    }

    /// Moves from `p` to `p + 1` by conditioning on the first generation.
    pub fn step(&mut self) {
        let l = self.max_ell;
        let mut next = vec![S::zero(); l + 1];
        for (k, eta, p) in &self.atoms {
            let sums = composition_sums(&self.current, l, *k as u64, l);
            for (ell, slot) in next.iter_mut().enumerate() {
                let v = if *eta == 1 {
                    (0..=ell).fold(S::zero(), |acc, j| acc + binomial::<S>(ell, j) * sums[j].clone())
                } else {
                    sums[ell].clone()
                };
                *slot = slot.clone() + p.clone() * v;
            }
        }
        self.current = next;
    }
}

impl<S: Scalar> Iterator for MomentRecursion<S> {
    type Item = Vec<S>;

    /// Yields the vector for the current `p`, then advances.
    fn next(&mut self) -> Option<Vec<S>> {
        let out = self.current.clone();
        self.step();
        Some(out)
    }
}

/// `[E[M_p^j]]_{j ≤ ℓ}`.
pub fn moment_vector<S: Scalar>(law: &MarkedGWLaw, p: u32, ell: usize) -> Result<Vec<S>> {
    let mut rec = MomentRecursion::new(law, ell)?;
    for _ in 0..p {
        rec.step();
    }
    Ok(rec.current)
}

/// `E[M_p^ℓ]`.
pub fn moment_mp_exact<S: Scalar>(law: &MarkedGWLaw, p: u32, ell: usize) -> Result<S> {
    Ok(moment_vector::<S>(law, p, ell)?.swap_remove(ell))
}

/// `E[M_{n+p}^ℓ | M_n, Z_n] = Σ_j C(ℓ,j) M_n^{ℓ-j} Σ_{t_1+…+t_{Z_n}=j} multinomial Π E[M_p^{t_i}]`.
pub fn conditional_moment<S: Scalar>(law: &MarkedGWLaw, m_n: &S, z_n: u32, p: u32, ell: usize) -> Result<S> {
    let e = moment_vector::<S>(law, p, ell)?;
    Ok(conditional_from_moments(&e, m_n, z_n, ell))
}

/// [`conditional_moment`] from precomputed `E[M_p^j]`, `j ≤ ℓ`.
pub fn conditional_from_moments<S: Scalar>(e: &[S], m_n: &S, z_n: u32, ell: usize) -> S {
    let sums = composition_sums(e, ell, z_n as u64, ell);
    sums.into_iter()
        .enumerate()
        .fold(S::zero(), |acc, (j, s)| acc + binomial::<S>(ell, j) * m_n.powu((ell - j) as u64) * s)
}

pub fn omega_table<S: Scalar>(law: &MarkedGWLaw, max_ell: usize) -> Result<OmegaTable<S>> {
    check_order(max_ell)?;
    if law.criticality() != Criticality::Supercritical {
        return Err(Error::WrongCriticality(format!("ω needs μ > 1, got {}", law.mean())));
    }
    let mu: S = law.mean_as()?;
    let offspring: Vec<(u32, S)> =
        law.offspring()?.iter().map(|(k, p)| (*k, S::from_ratio(p))).collect();
    let mut omega = vec![S::one()];
    if max_ell >= 1 {
        omega.push(law.mark_mean::<S>()? / (mu.clone() - S::one()));
    }
    for ell in 2..=max_ell {
        let c = offspring
            .iter()
            .fold(S::zero(), |acc, (k, p)| acc + p.clone() * composition_sum(&omega, ell - 1, *k as u64, ell));
        omega.push(c / (mu.powu(ell as u64) - mu.clone()));
    }
    Ok(OmegaTable { values: omega })
}

pub fn omega_tilde_table<S: Scalar>(law: &MarkedGWLaw, max_ell: usize) -> Result<OmegaTildeTable<S>> {
    check_order(max_ell)?;
    if law.criticality() != Criticality::Critical {
        return Err(Error::WrongCriticality(format!("ω̃ needs μ = 1, got {}", law.mean())));
    }
    // E[Z_1(Z_1 - 1)/2]
    let half_factorial = law.offspring()?.iter().fold(S::zero(), |acc, (k, p)| {
        let k = *k as u64;
        acc + S::from_ratio(p) * S::from_u64(k * k.saturating_sub(1) / 2)
    });
    let mut w = vec![S::one()];
    if max_ell >= 1 {
        w.push(law.mark_mean::<S>()?);
    }
    for ell in 2..=max_ell {
        let pairs = (1..ell).fold(S::zero(), |acc, t1| {
            acc + binomial::<S>(ell, t1) * w[t1].clone() * w[ell - t1].clone()
        });
        w.push(half_factorial.clone() * pairs / S::from_u64(2 * ell as u64 - 1));
    }
    Ok(OmegaTildeTable { values: w })
}

/// `P_ℓ(z) = (1/ω_ℓ) Σ_{t_1+…+t_z=ℓ} multinomial Π ω_{t_i}`.
pub fn p_ell_eval<S: Scalar>(omega: &OmegaTable<S>, ell: usize, z: u32) -> S {
    comp(&omega.values[..=ell], z, ell) / omega.values[ell].clone()
}

/// `H_ℓ(x) = x(x-1)…(x-ℓ+1)/ℓ!`.
pub fn hilbert_eval<S: Scalar>(ell: usize, x: &S) -> S {
    let num = (0..ell).fold(S::one(), |acc, j| acc * (x.clone() - S::from_u64(j as u64)));
    num / factorial::<S>(ell)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::laws::fixtures::*;
    use crate::scalar::rational;
    use crate::series::naive;
    use approx::assert_relative_eq;
    use num_rational::BigRational;
    use num_traits::{One, Zero};

    type Q = BigRational;

    #[test]
    fn xi_for_law_a() {
        let xi = xi_table::<Q>(&law_a(), 3).unwrap();
        assert_eq!(xi.get(0), &Q::one());
        assert_eq!(xi.get(1), &rational(2, 1));
        assert_eq!(xi.get(2), &rational(34, 1));
        let xf = xi_table::<f64>(&law_a(), 3).unwrap();
        assert_relative_eq!(xf.get(3).to_owned(), xi.get(3).to_f64(), max_relative = 1e-12);
        assert!(matches!(xi_table::<f64>(&law_c(), 2), Err(Error::NotSubcritical(_))));
    }

    #[test]
    fn moments_increase_to_xi() {
        let law = law_a();
        let xi = xi_table::<f64>(&law, 3).unwrap();
        let mut prev = vec![0.0; 4];
        for e in MomentRecursion::<f64>::new(&law, 3).unwrap().take(200) {
            for l in 1..=3 {
                assert!(e[l] >= prev[l] - 1e-12 && e[l] <= xi.get(l) * (1.0 + 1e-12));
            }
            prev = e;
        }
        for l in 1..=3 {
            assert_relative_eq!(prev[l], *xi.get(l), max_relative = 1e-9);
        }
    }

    #[test]
    fn f_ell_examples() {
        let xi = xi_table::<Q>(&law_a(), 3).unwrap();
        assert_eq!(f_ell_eval(&xi, 0, &rational(5, 1), 7), Q::one());
        assert_eq!(f_ell_eval(&xi, 1, &Q::zero(), 1), Q::one());
        assert_eq!(f_ell_eval(&xi, 1, &rational(1, 1), 2), rational(5, 2));
        // z = 0 convention: m^ℓ/ξ_ℓ
        assert_eq!(f_ell_eval(&xi, 2, &rational(3, 1), 0), rational(9, 34));
    }

    #[test]
    fn f_ell_matches_enumeration() {
        let xi = xi_table::<Q>(&law_a(), 3).unwrap();
        for ell in 0..=3 {
            for z in 0..=4u32 {
                for m in 0..=2 {
                    let m = rational(m, 1);
                    let direct = (0..=ell).fold(Q::zero(), |acc, i| {
                        acc + binomial::<Q>(ell, i)
                            * m.powu((ell - i) as u64)
                            * naive::composition_sum(xi.values(), ell, z as usize, i)
                    });
                    assert_eq!(f_ell_eval(&xi, ell, &m, z) * xi.get(ell).clone(), direct);
                }
            }
        }
    }

    #[test]
    fn moment_recursion_examples() {
        let law = law_a();
        assert_eq!(moment_mp_exact::<Q>(&law, 0, 2).unwrap(), Q::zero());
        for ell in 1..=4 {
            assert_eq!(moment_mp_exact::<Q>(&law, 1, ell).unwrap(), rational(2, 5));
        }
        for law in [law_a(), law_c(), law_f()] {
            let mu = law.mean_exact().unwrap().clone();
            let em1 = law.mark_mean::<Q>().unwrap();
            for p in 0..6u32 {
                let expect = em1.clone() * (Q::one() - mu.powu(p as u64)) / (Q::one() - mu.clone());
                assert_eq!(moment_mp_exact::<Q>(&law, p, 1).unwrap(), expect);
            }
        }
        // critical: E[M_p] = p E[M_1]
        assert_eq!(moment_mp_exact::<Q>(&law_d(), 7, 1).unwrap(), rational(7, 2));
    }

    #[test]
    fn conditional_moment_examples() {
        let law = law_a();
        let m = rational(3, 1);
        assert_eq!(conditional_moment::<Q>(&law, &m, 2, 0, 2).unwrap(), rational(9, 1));
        let ep = moment_mp_exact::<Q>(&law, 3, 1).unwrap();
        assert_eq!(conditional_moment::<Q>(&law, &m, 2, 3, 1).unwrap(), m.clone() + rational(2, 1) * ep);
        // unconditioned start is the plain moment
        assert_eq!(
            conditional_moment::<Q>(&law, &Q::zero(), 1, 4, 3).unwrap(),
            moment_mp_exact::<Q>(&law, 4, 3).unwrap()
        );
    }

    #[test]
    fn omega_tables() {
        let w = omega_table::<Q>(&law_c(), 2).unwrap();
        assert_eq!(w.get(1), &rational(5, 3));
        let wt = omega_tilde_table::<Q>(&law_d(), 2).unwrap();
        assert_eq!(wt.get(1), &rational(1, 2));
        assert_eq!(wt.get(2), &rational(1, 12));
        assert!(matches!(omega_table::<f64>(&law_d(), 2), Err(Error::WrongCriticality(_))));
        assert!(matches!(omega_tilde_table::<f64>(&law_c(), 2), Err(Error::WrongCriticality(_))));
    }

    #[test]
    fn omega_is_the_growth_constant() {
        let law = law_c();
        let w = omega_table::<f64>(&law, 3).unwrap();
        let e = moment_vector::<f64>(&law, 60, 3).unwrap();
        for l in 1..=3 {
            assert_relative_eq!(e[l] / 1.6f64.powi(60 * l as i32), *w.get(l), max_relative = 1e-6);
        }
    }

    #[test]
    fn p_ell_examples() {
        let w = omega_table::<Q>(&law_c(), 3).unwrap();
        for ell in 0..=3 {
            assert_eq!(p_ell_eval(&w, ell, 1), Q::one());
        }
        assert_eq!(p_ell_eval(&w, 2, 0), Q::zero());
        for z in [2u32, 3] {
            let direct = naive::composition_sum(w.values(), 2, z as usize, 2) / w.get(2).clone();
            assert_eq!(p_ell_eval(&w, 2, z), direct);
        }
    }

    #[test]
    fn hilbert_examples() {
        assert_eq!(hilbert_eval(0, &7.5f64), 1.0);
        assert_eq!(hilbert_eval(2, &rational(3, 1)), rational(3, 1));
        for ell in 1..6 {
            for j in 0..ell {
                assert_eq!(hilbert_eval(ell, &rational(j as i64, 1)), Q::zero());
            }
        }
    }
}
