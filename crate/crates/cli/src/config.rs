//! The resolved configuration of one run.
//!
//! Every subcommand is lowered to a [`RunConfig`] before anything executes,
//! so flag combinations are checked in one place and a run can be saved and
//! replayed byte for byte (the seed is resolved before saving).

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Validate,
    Sample,
    Moments,
    Kappa,
    Verify,
    Asymptotics,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Measure {
    Base,
    PolyEll,
    ExpoSpine,
    ExpoRary,
    ZeroMark,
    ZeroMarkSpine,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Quantity {
    /// Growth of `E[M_p^ℓ]` (critical and supercritical laws).
    Moments,
    /// Growth of the derivatives of the iterated generating function.
    Gf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Assumed {
    Critical,
    Supercritical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub command: Command,
    pub law: PathBuf,
    #[serde(default)]
    pub regime: Option<String>,
    #[serde(default)]
    pub measure: Option<Measure>,
    #[serde(default)]
    pub quantity: Option<Quantity>,
    #[serde(default)]
    pub assume: Option<Assumed>,
    #[serde(default)]
    pub ell: Option<usize>,
    #[serde(default)]
    pub s: Option<f64>,
    #[serde(default)]
    pub t: Option<f64>,
    #[serde(default)]
    pub depth: Option<usize>,
    #[serde(default)]
    pub count: Option<usize>,
    #[serde(default)]
    pub p_max: Option<u32>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub verdict: Option<PathBuf>,
    #[serde(default)]
    pub exact: bool,
    #[serde(default)]
    pub zero_mark: bool,
    #[serde(default)]
    pub require_stable: bool,
}

impl RunConfig {
    pub fn new(command: Command, law: PathBuf) -> Self {
        RunConfig {
            command,
            law,
            regime: None,
            measure: None,
            quantity: None,
            assume: None,
            ell: None,
            s: None,
            t: None,
            depth: None,
            count: None,
            p_max: None,
            seed: None,
            out: None,
            verdict: None,
            exact: false,
            zero_mark: false,
            require_stable: false,
        }
    }

    /// Rejects flag combinations that the command would otherwise ignore or
    /// misread. Runs before any file is opened.
    pub fn validate(&self) -> Result<(), String> {
        let forbid = |set: bool, flag: &str, why: &str| if set { Err(format!("--{flag} {why}")) } else { Ok(()) };
        let require = |set: bool, flag: &str| if set { Ok(()) } else { Err(format!("{:?} needs --{flag}", self.command).to_lowercase()) };
        let only = |cmds: &str| format!("only applies to {cmds}");
        forbid(self.seed.is_some() && self.command != Command::Sample, "seed", &only("sample"))?;
        forbid(self.count.is_some() && self.command != Command::Sample, "count", &only("sample"))?;
        forbid(self.measure.is_some() && self.command != Command::Sample, "measure", &only("sample"))?;
        forbid(self.regime.is_some() && self.command != Command::Verify, "regime", &only("verify"))?;
        forbid(
            self.exact && !matches!(self.command, Command::Verify | Command::Moments),
            "exact",
            &only("verify and moments"),
        )?;
        forbid(self.zero_mark && self.command != Command::Kappa, "zero-mark", &only("kappa"))?;
        forbid(
            (self.quantity.is_some() || self.assume.is_some() || self.t.is_some() || self.require_stable || self.verdict.is_some())
                && self.command != Command::Asymptotics,
            "quantity/assume/t/require-stable/verdict",
            &only("asymptotics"),
        )?;
        if let Some(s) = self.s {
            if !(0.0..1.0).contains(&s) {
                return Err(format!("--s must lie in [0, 1), got {s}"));
            }
        }
        if let Some(t) = self.t {
            if !(0.0..=1.0).contains(&t) {
                return Err(format!("--t must lie in [0, 1], got {t}"));
            }
        }
        match self.command {
            Command::Validate => {
                forbid(self.ell.is_some() || self.s.is_some() || self.depth.is_some() || self.p_max.is_some(), "ell/s/depth/p-max", "do not apply to validate")?;
                forbid(self.out.is_some(), "out", "does not apply to validate")
            }
            Command::Kappa => {
                forbid(self.ell.is_some() || self.depth.is_some() || self.p_max.is_some(), "ell/depth/p-max", "do not apply to kappa")?;
                match (self.s, self.zero_mark) {
                    (Some(_), true) => Err("--zero-mark fixes s = 0; drop --s".into()),
                    (None, false) => Err("kappa needs --s or --zero-mark".into()),
                    _ => Ok(()),
                }
            }
            Command::Moments => {
                require(self.ell.is_some(), "ell")?;
                require(self.p_max.is_some(), "p-max")?;
                forbid(self.s.is_some() || self.depth.is_some(), "s/depth", "do not apply to moments")
            }
            Command::Verify => {
                require(self.regime.is_some(), "regime")?;
                require(self.depth.is_some(), "depth")?;
                forbid(self.p_max.is_some(), "p-max", "does not apply to verify")
            }
            Command::Asymptotics => {
                require(self.p_max.is_some(), "p-max")?;
                forbid(self.depth.is_some(), "depth", "does not apply to asymptotics")?;
                match self.quantity.unwrap_or(Quantity::Moments) {
                    Quantity::Moments => {
                        require(self.ell.is_some(), "ell")?;
                        forbid(self.s.is_some() || self.t.is_some(), "s/t", "apply to --quantity gf only")
                    }
                    Quantity::Gf => {
                        require(self.s.is_some(), "s")?;
                        require(self.t.is_some(), "t")?;
                        forbid(self.assume.is_some(), "assume", "applies to --quantity moments only")
                    }
                }
            }
            Command::Sample => {
                require(self.depth.is_some(), "depth")?;
                require(self.count.is_some(), "count")?;
                forbid(self.p_max.is_some(), "p-max", "does not apply to sample")?;
                let measure = self.measure.ok_or("sample needs --measure")?;
                let (needs_s, ell_ok): (bool, fn(Option<usize>) -> bool) = match measure {
                    Measure::Base | Measure::ZeroMark | Measure::ZeroMarkSpine => (false, |e| e.is_none()),
                    Measure::PolyEll => (false, |e| e.is_some_and(|e| e >= 1)),
                    Measure::ExpoSpine => (true, |e| e.is_none_or(|e| e <= 1)),
                    Measure::ExpoRary => (true, |e| e.is_none()),
                };
                if needs_s {
                    require(self.s.is_some_and(|s| s > 0.0), "s in (0, 1)")?;
                } else {
                    forbid(self.s.is_some(), "s", &format!("does not apply to measure {measure:?}"))?;
                }
                if !ell_ok(self.ell) {
                    return Err(match measure {
                        Measure::PolyEll => "measure poly-ell needs --ell ≥ 1".into(),
                        Measure::ExpoSpine => "measure expo-spine takes --ell 0 (plain) or 1 (spine)".into(),
                        m => format!("--ell does not apply to measure {m:?}"),
                    });
                }
                Ok(())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_config() -> RunConfig {
        RunConfig {
            measure: Some(Measure::PolyEll),
            ell: Some(1),
            depth: Some(3),
            count: Some(10),
            seed: Some(42),
            out: Some("trees.txt".into()),
            ..RunConfig::new(Command::Sample, "lawA.json".into())
        }
    }

    #[test]
    fn round_trips_through_json() {
        let cfgs = [
            sample_config(),
            RunConfig { s: Some(0.5), ..RunConfig::new(Command::Kappa, "b.json".into()) },
            RunConfig {
                quantity: Some(Quantity::Gf),
                s: Some(0.25),
                t: Some(0.9),
                ell: Some(2),
                p_max: Some(60),
                require_stable: true,
                ..RunConfig::new(Command::Asymptotics, "b.json".into())
            },
        ];
        for cfg in cfgs {
            let text = serde_json::to_string(&cfg).unwrap();
            let back: RunConfig = serde_json::from_str(&text).unwrap();
            assert_eq!(back, cfg);
            assert!(back.validate().is_ok());
        }
    }

    #[test]
    fn missing_optional_fields_default() {
        let cfg: RunConfig = serde_json::from_str(r#"{"command": "validate", "law": "a.json"}"#).unwrap();
        assert_eq!(cfg, RunConfig::new(Command::Validate, "a.json".into()));
    }

    #[test]
    fn incompatible_flags_rejected() {
        let bad = [
            RunConfig { seed: Some(1), ..RunConfig::new(Command::Verify, "a".into()) },
            RunConfig { s: Some(0.5), zero_mark: true, ..RunConfig::new(Command::Kappa, "a".into()) },
            RunConfig::new(Command::Kappa, "a".into()),
            RunConfig { s: Some(0.5), ..sample_config() },
            RunConfig { ell: None, ..sample_config() },
            RunConfig { measure: Some(Measure::ExpoSpine), ell: Some(2), s: Some(0.5), ..sample_config() },
            RunConfig { measure: Some(Measure::ExpoRary), ell: None, ..sample_config() },
            RunConfig { exact: true, ..sample_config() },
            RunConfig { s: Some(1.5), ..RunConfig::new(Command::Kappa, "a".into()) },
        ];
        for cfg in bad {
            assert!(cfg.validate().is_err(), "{cfg:?}");
        }
    }
}
