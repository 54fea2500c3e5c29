//! Execution of a validated [`RunConfig`].

use std::fmt::Write as _;
use std::fs;
use std::time::{SystemTime, UNIX_EPOCH};

use num_rational::BigRational;
use rayon::prelude::*;
use serde_json::json;

use mgw::asymptotics::{check_gf_asymptotics, check_moment_growth, moment_growth_report, ConvergenceReport, Verdict};
use mgw::moments::{omega_table, omega_tilde_table, xi_table, MomentRecursion};
use mgw::oracle::verify;
use mgw::penalty::{kappa_solve, tilted_node_law, NodeLawKind, WeightTables};
use mgw::sampler::{sample_degenerate, sample_iid, sample_mgw, sample_spine_tree, sample_tau_ell, RngStream, SpineMode};
use mgw::scalar::format_ratio;
use mgw::{parse_law_json, Criticality, MarkedGWLaw, Regime};

use crate::config::{Assumed, Command, Measure, Quantity, RunConfig};
use crate::output::{emit, sig17};

/// Why a run did not succeed; decides the exit code.
#[derive(Debug)]
pub enum Failure {
    /// A check ran and did not pass (exit 1).
    Verification(String),
    /// Bad flags, unreadable input, or a law outside the command's domain (exit 2).
    Usage(String),
}

impl From<mgw::Error> for Failure {
    fn from(e: mgw::Error) -> Self {
        Failure::Usage(e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Usage(format!("io: {e}"))
    }
}

type Outcome = Result<(), Failure>;

fn load_law(cfg: &RunConfig, allow_infinite: bool) -> Result<MarkedGWLaw, Failure> {
    let text = fs::read_to_string(&cfg.law).map_err(|e| Failure::Usage(format!("cannot read law file {}: {e}", cfg.law.display())))?;
    Ok(parse_law_json(&text, allow_infinite)?)
}

/// Fills in the seed when none was given and reports it on stderr.
pub fn resolve_seed(cfg: &mut RunConfig) {
    if cfg.command == Command::Sample && cfg.seed.is_none() {
        let nanos = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_nanos() as u64).unwrap_or(0);
        cfg.seed = Some(nanos);
        eprintln!("no --seed given; using seed {nanos}");
    }
}

pub fn run(cfg: &RunConfig) -> Outcome {
    match cfg.command {
        Command::Validate => validate(cfg),
        Command::Sample => sample(cfg),
        Command::Moments => moments(cfg),
        Command::Kappa => kappa(cfg),
        Command::Verify => verify_cmd(cfg),
        Command::Asymptotics => asymptotics(cfg),
    }
}

fn to_json_line(v: &serde_json::Value) -> String {
    format!("{}\n", serde_json::to_string_pretty(v).expect("json value"))
}

fn validate(cfg: &RunConfig) -> Outcome {
    let law = load_law(cfg, true)?;
    let b = law.bounds();
    let report = json!({
        "finite_support": law.is_finite(),
        "mean": law.mean(),
        "mean_exact": law.mean_exact().map(format_ratio),
        "criticality": law.criticality().to_string(),
        "r": b.r,
        "r_tilde": b.r_tilde,
        "max_degree": law.max_degree().ok(),
        "fingerprint": law.fingerprint(),
    });
    emit(None, &to_json_line(&report))?;
    Ok(())
}

fn sample(cfg: &RunConfig) -> Outcome {
    let measure = cfg.measure.expect("validated");
    let law = load_law(cfg, measure == Measure::Base)?;
    let depth = cfg.depth.expect("validated");
    let count = cfg.count.expect("validated");
    let seed = cfg.seed.expect("seed resolved before running");
    let s = cfg.s.unwrap_or(0.0);
    let ell = cfg.ell.unwrap_or(0);
    let b = law.bounds();

    // admissibility is checked once, up front, by the weight tables of the matching regime
    let regime = match measure {
        Measure::Base => None,
        Measure::PolyEll => Some(Regime::PolySub { ell }),
        Measure::ExpoSpine => Some(Regime::ExpoPositive { s, ell }),
        Measure::ExpoRary => Some(Regime::ExpoRary { s, r: b.r }),
        Measure::ZeroMark => Some(match b.r_tilde {
            Some(0) => Regime::ExpoZero { ell: 0 },
            Some(rt) => Regime::ExpoZeroRary { r_tilde: rt },
            None => return Err(Failure::Usage("no out-degree stays unmarked with positive probability".into())),
        }),
        Measure::ZeroMarkSpine => Some(Regime::ExpoZero { ell: 1 }),
    };
    if let Some(r) = regime {
        WeightTables::build(&law, r)?;
    }

    let xi = if measure == Measure::PolyEll { Some(xi_table::<f64>(&law, ell)?) } else { None };
    let plain = match (measure, ell) {
        (Measure::ExpoSpine, 0) => {
            let k = kappa_solve(&law, s, false)?;
            Some(tilted_node_law(NodeLawKind::Leafless { s, kappa: k.kappa }, &law)?)
        }
        (Measure::ZeroMark, _) if b.r_tilde == Some(0) => {
            let k = kappa_solve(&law, 0.0, true)?;
            Some(tilted_node_law(NodeLawKind::ZeroMark { kappa_tilde: k.kappa }, &law)?)
        }
        _ => None,
    };

    let one = |i: usize| -> mgw::Result<String> {
        let mut rng = RngStream::shard(seed, i as u64);
        Ok(match measure {
            Measure::Base => sample_mgw(&law, depth, &mut rng)?.to_text(),
            Measure::PolyEll => sample_tau_ell(&law, xi.as_ref().expect("built"), ell, depth, &mut rng)?.to_text(),
            Measure::ExpoSpine if ell == 0 => sample_iid(plain.as_ref().expect("built"), depth, &mut rng)?.to_text(),
            Measure::ExpoSpine => sample_spine_tree(&law, SpineMode::Marked { s }, depth, &mut rng)?.to_text(),
            Measure::ExpoRary => sample_degenerate(&law, s, depth, &mut rng)?.to_text(),
            Measure::ZeroMark => match &plain {
                Some(node_law) => sample_iid(node_law, depth, &mut rng)?.to_text(),
                None => sample_degenerate(&law, 0.0, depth, &mut rng)?.to_text(),
            },
            Measure::ZeroMarkSpine => sample_spine_tree(&law, SpineMode::ZeroMark, depth, &mut rng)?.to_text(),
        })
    };
    // one stream per tree, so the output does not depend on the thread count
    let trees: Vec<String> = (0..count).into_par_iter().map(one).collect::<mgw::Result<_>>()?;
    emit(cfg.out.as_deref(), &trees.join("\n"))?;
    Ok(())
}

fn moments(cfg: &RunConfig) -> Outcome {
    let law = load_law(cfg, false)?;
    let max_ell = cfg.ell.expect("validated");
    let p_max = cfg.p_max.expect("validated");
    if max_ell == 0 {
        return Err(Failure::Usage("--ell must be at least 1".into()));
    }
    let crit = law.criticality();
    let mu = law.mean();
    let prediction: Box<dyn Fn(usize, u32) -> f64> = match crit {
        // constants are computed exactly and rounded once
        Criticality::Subcritical => {
            let xi = xi_table::<BigRational>(&law, max_ell)?.to_f64();
            Box::new(move |l, _| *xi.get(l))
        }
        Criticality::Supercritical => {
            let w = omega_table::<BigRational>(&law, max_ell)?.to_f64();
            Box::new(move |l, p| *w.get(l) * mu.powf((l as u32 * p) as f64))
        }
        Criticality::Critical => {
            let w = omega_tilde_table::<BigRational>(&law, max_ell)?.to_f64();
            Box::new(move |l, p| *w.get(l) * (p as f64).powi(2 * l as i32 - 1))
        }
    };
    let exact_values: Vec<Vec<String>> = if cfg.exact {
        MomentRecursion::<BigRational>::new(&law, max_ell)?
            .take(p_max as usize + 1)
            .map(|e| e.iter().map(format_ratio).collect())
            .collect()
    } else {
        Vec::new()
    };
    let mut csv = String::from("regime,ell,p,exact_value,asymptotic_prediction,ratio\n");
    for (p, e) in MomentRecursion::<f64>::new(&law, max_ell)?.take(p_max as usize + 1).enumerate().skip(1) {
        let p = p as u32;
        for l in 1..=max_ell {
            let pred = prediction(l, p);
            let value = if cfg.exact { exact_values[p as usize][l].clone() } else { format!("{:.17e}", e[l]) };
            writeln!(csv, "{crit},{l},{p},{value},{pred:.17e},{:.17e}", e[l] / pred).expect("string write");
        }
    }
    emit(cfg.out.as_deref(), &csv)?;
    Ok(())
}

fn kappa(cfg: &RunConfig) -> Outcome {
    let law = load_law(cfg, false)?;
    let s = cfg.s.unwrap_or(0.0);
    let k = kappa_solve(&law, s, cfg.zero_mark)?;
    let text = format!(
        "{{\n  \"s\": {},\n  \"zero_mark\": {},\n  \"kappa\": {},\n  \"derivative\": {}\n}}\n",
        sig17(s),
        cfg.zero_mark,
        sig17(k.kappa),
        sig17(k.derivative)
    );
    emit(cfg.out.as_deref(), &text)?;
    Ok(())
}

fn verify_cmd(cfg: &RunConfig) -> Outcome {
    let law = load_law(cfg, false)?;
    let regime = Regime::from_tag(cfg.regime.as_deref().expect("validated"), cfg.ell, cfg.s, &law)?;
    let report = verify(&law, regime, cfg.depth.expect("validated"), cfg.exact)?;
    emit(cfg.out.as_deref(), &to_json_line(&serde_json::to_value(&report).expect("report serializes")))?;
    if report.pass {
        Ok(())
    } else {
        Err(Failure::Verification(format!("{regime}: max gap {:e}", report.max_gap)))
    }
}

fn asymptotics(cfg: &RunConfig) -> Outcome {
    let law = load_law(cfg, false)?;
    let p_max = cfg.p_max.expect("validated");
    let ell = cfg.ell.unwrap_or(0);
    let report: ConvergenceReport = match cfg.quantity.unwrap_or(Quantity::Moments) {
        Quantity::Moments => match cfg.assume {
            None => check_moment_growth(&law, ell, p_max)?,
            Some(a) => {
                let assumed = match a {
                    Assumed::Critical => Criticality::Critical,
                    Assumed::Supercritical => Criticality::Supercritical,
                };
                moment_growth_report(&law, assumed, ell, p_max)?
            }
        },
        Quantity::Gf => check_gf_asymptotics(&law, cfg.s.expect("validated"), cfg.t.expect("validated"), ell, p_max)?,
    };
    let verdict = json!({
        "quantity": report.quantity,
        "verdict": report.verdict,
        "threshold": report.threshold,
        "window": report.window,
        "log_space": report.log_space,
        "final_gap": report.final_gap(),
        "last": report.last(),
    });
    let verdict_text = serde_json::to_string(&verdict).expect("json value");
    let csv = report.to_csv();
    match (&cfg.out, &cfg.verdict) {
        (_, Some(vpath)) => {
            emit(cfg.out.as_deref(), &csv)?;
            emit(Some(vpath), &format!("{verdict_text}\n"))?;
        }
        (Some(out), None) => {
            emit(Some(out), &csv)?;
            emit(None, &format!("{verdict_text}\n"))?;
        }
        (None, None) => emit(None, &format!("{csv}# verdict: {verdict_text}\n"))?,
    }
    if cfg.require_stable && report.verdict != Verdict::Stabilized {
        return Err(Failure::Verification(format!("{} did not stabilize ({:?})", report.quantity, report.verdict)));
    }
    Ok(())
}
