//! Convergence diagnostics for the growth lemmas.
//!
//! None of these limits has a closed form worth trusting numerically, so a
//! report tabulates the normalized sequence and judges whether it settles.
//! Thresholds are engineering choices and are recorded in every report.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::laws::genfn::FaaDiBruno;
use crate::laws::{Criticality, MarkedGWLaw, DEFAULT_MAX_ORDER};
use crate::moments::{omega_table, omega_tilde_table, MomentRecursion};
use crate::penalty::{alpha_r, b_exponent, kappa_solve};

pub const DEFAULT_THRESHOLD: f64 = 1e-3;
pub const DEFAULT_WINDOW: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Stabilized,
    Diverged,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Row {
    pub p: u32,
    pub value: f64,
    pub predicted: Option<f64>,
    pub ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceReport {
    /// What is tabulated, e.g. `E[M_p^2]/p^3`.
    pub quantity: String,
    pub rows: Vec<Row>,
    pub verdict: Verdict,
    pub threshold: f64,
    pub window: usize,
    /// Changes are absolute (log-space sequences) rather than relative.
    pub log_space: bool,
}

impl ConvergenceReport {
    fn new(quantity: String, rows: Vec<Row>, log_space: bool) -> Self {
        let verdict = judge(&rows.iter().map(|r| r.value).collect::<Vec<_>>(), DEFAULT_WINDOW, DEFAULT_THRESHOLD, log_space);
        ConvergenceReport { quantity, rows, verdict, threshold: DEFAULT_THRESHOLD, window: DEFAULT_WINDOW, log_space }
    }

    pub fn last(&self) -> Option<&Row> {
        self.rows.last()
    }

    /// `|value - predicted|` at the last row, relative unless in log space.
    pub fn final_gap(&self) -> Option<f64> {
        let r = self.last()?;
        let pred = r.predicted?;
        Some(if self.log_space { (r.value - pred).abs() } else { ((r.value - pred) / pred).abs() })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("p,value,predicted,ratio\n");
        let opt = |x: Option<f64>| x.map(|v| format!("{v:.12e}")).unwrap_or_default();
        for r in &self.rows {
            out.push_str(&format!("{},{:.12e},{},{}\n", r.p, r.value, opt(r.predicted), opt(r.ratio)));
        }
        out
    }
}

/// Stabilized iff every change over the last `window` steps is below
/// `threshold`; diverged on non-finite values or on a monotone run of
/// changes that all exceed it.
pub fn judge(values: &[f64], window: usize, threshold: f64, log_space: bool) -> Verdict {
    if values.iter().any(|v| !v.is_finite()) {
        return Verdict::Diverged;
    }
    if values.len() < window + 1 {
        return Verdict::Inconclusive;
    }
    let tail = &values[values.len() - window - 1..];
    let diffs: Vec<f64> = tail.windows(2).map(|w| w[1] - w[0]).collect();
    let changes: Vec<f64> = tail
        .windows(2)
        .map(|w| if log_space { (w[1] - w[0]).abs() } else { ((w[1] - w[0]) / w[1]).abs() })
        .collect();
    if changes.iter().all(|c| *c < threshold) {
        Verdict::Stabilized
    } else if changes.iter().all(|c| *c >= threshold)
        && (diffs.iter().all(|d| *d > 0.0) || diffs.iter().all(|d| *d < 0.0))
    {
        Verdict::Diverged
    } else {
        Verdict::Inconclusive
    }
}

/// Growth check of `E[M_p^ℓ]` for supercritical and critical laws.
pub fn check_moment_growth(law: &MarkedGWLaw, ell: usize, p_max: u32) -> Result<ConvergenceReport> {
    let crit = law.criticality();
    if crit == Criticality::Subcritical {
        return Err(Error::WrongCriticality("moment growth needs μ ≥ 1; subcritical moments converge to ξ".into()));
    }
    moment_growth_report(law, crit, ell, p_max)
}

/// [`check_moment_growth`] normalized as if the law had criticality `assumed`.
/// A mismatched normalization must not look stable.
pub fn moment_growth_report(law: &MarkedGWLaw, assumed: Criticality, ell: usize, p_max: u32) -> Result<ConvergenceReport> {
    if ell == 0 || ell > crate::moments::MAX_ELL {
        return Err(Error::OrderTooLarge { order: ell, max: crate::moments::MAX_ELL });
    }
    let (predicted, quantity): (Option<f64>, String) = match assumed {
        Criticality::Supercritical => (
            omega_table::<f64>(law, ell).ok().map(|w| *w.get(ell)),
            format!("E[M_p^{ell}]/mu^({ell}p)"),
        ),
        Criticality::Critical => (
            omega_tilde_table::<f64>(law, ell).ok().map(|w| *w.get(ell)),
            format!("E[M_p^{ell}]/p^{}", 2 * ell - 1),
        ),
        Criticality::Subcritical => {
            return Err(Error::WrongCriticality("no growth normalization for μ < 1".into()));
        }
    };
    let ln_mu = law.mean().ln();
    let mut rows = Vec::with_capacity(p_max as usize);
    for (p, e) in MomentRecursion::<f64>::new(law, ell)?.enumerate().skip(1).take(p_max as usize) {
        let p = p as u32;
        let value = match assumed {
            Criticality::Supercritical => (e[ell].ln() - ell as f64 * p as f64 * ln_mu).exp(),
            _ => e[ell] / (p as f64).powi(2 * ell as i32 - 1),
        };
        rows.push(Row { p, value, predicted, ratio: predicted.map(|w| value / w) });
    }
    Ok(ConvergenceReport::new(quantity, rows, false))
}

/// Growth check of the derivatives of `f_s^p` at `t`, by the law's minimal degree.
pub fn check_gf_asymptotics(law: &MarkedGWLaw, s: f64, t: f64, ell: usize, p_max: u32) -> Result<ConvergenceReport> {
    if ell > DEFAULT_MAX_ORDER {
        return Err(Error::OrderTooLarge { order: ell, max: DEFAULT_MAX_ORDER });
    }
    let table = FaaDiBruno::new(DEFAULT_MAX_ORDER);
    let f = law.pgf(s)?;
    let r = law.bounds().r;
    let ln_jet = |p: u32| -> Result<f64> { Ok(f.iterate_log_jet(t, p, ell, &table)?[ell]) };
    let mut rows = Vec::with_capacity(p_max as usize);
    match r {
        0 | 1 => {
            let (rate, quantity, fixed) = if r == 0 {
                let k = kappa_solve(law, s, false)?;
                (k.derivative, format!("(f_s^p)^({ell})(t)/f_s'(kappa)^p"), k.kappa)
            } else {
                (alpha_r(law, s, 1), format!("(f_s^p)^({ell})(t)/f_s'(0)^p"), 0.0)
            };
            // with leaves, f_s^p(t) itself converges to κ; otherwise the limit is only known empirically
            let to_fixed_point = r == 0 && ell == 0;
            for p in 1..=p_max {
                let value = if to_fixed_point { ln_jet(p)?.exp() } else { (ln_jet(p)? - p as f64 * rate.ln()).exp() };
                rows.push(Row { p, value, predicted: None, ratio: None });
            }
            let limit = if to_fixed_point { Some(fixed) } else { rows.last().map(|r| r.value) };
            for row in &mut rows {
                row.predicted = limit;
                row.ratio = limit.map(|l| row.value / l);
            }
            let quantity = if to_fixed_point { "f_s^p(t)".to_string() } else { quantity };
            Ok(ConvergenceReport::new(quantity, rows, false))
        }
        _ => {
            let b = b_exponent(law, s, t)?;
            let rf = r as f64;
            for p in 1..=p_max {
                let value = ln_jet(p)? - (rf.powi(p as i32) * b + (p as f64) * (ell as f64) * rf.ln());
                rows.push(Row { p, value, predicted: None, ratio: None });
            }
            let limit = if ell == 0 { Some(-alpha_r(law, s, r).ln() / (rf - 1.0)) } else { rows.last().map(|r| r.value) };
            for row in &mut rows {
                row.predicted = limit;
                row.ratio = limit.map(|l| row.value - l);
            }
            Ok(ConvergenceReport::new(
                format!("ln (f_s^p)^({ell})(t) - r^p b(t) - p*{ell}*ln r"),
                rows,
                true,
            ))
        }
    }
}
