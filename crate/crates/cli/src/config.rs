//! Experiment configuration files (TOML).
//!
//! ```toml
//! [params]
//! stages = 12
//! cuts = "2"                 # list of integers or a rule string in k
//! spacing = "t_k = h_{k-1}"  # list, rule, or the previous-height preset
//! top_spacers = [0, 1, 0]    # optional; list or rule, defaults to 0
//! law = "uniform"            # or { point_mass = 0 }, { table = [[-1, "1/4"], ...] },
//!                            # or a list with one entry per stage
//!
//! [experiment]
//! name = "greedy"            # validate, riesz-decay, oracle-check, greedy,
//!                            # kb-bound, phi-limit, section6
//!
//! [numeric]
//! seed = 1
//! grid = 16384
//! epsilon = 0.1
//! replicas = 64
//!
//! [output]
//! dir = "out"
//! formats = ["json", "csv"]
//! ```

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use num_bigint::BigInt;
use num_rational::BigRational;
use riesz_core::{OffsetLaw, OrnsteinParams, SpacerScale};
use serde::{Deserialize, Serialize};

use crate::rules::Rule;

/// Names accepted for the previous-height spacing preset.
pub const PREVIOUS_HEIGHT: [&str; 3] = ["t_k = h_{k-1}", "h_{k-1}", "previous-height"];

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("cannot parse config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error(transparent)]
    Rule(#[from] crate::rules::RuleError),
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Params(#[from] riesz_core::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Validate,
    RieszDecay,
    OracleCheck,
    Greedy,
    KbBound,
    PhiLimit,
    Section6,
}

impl Experiment {
    pub fn name(&self) -> &'static str {
        match self {
            Experiment::Validate => "validate",
            Experiment::RieszDecay => "riesz-decay",
            Experiment::OracleCheck => "oracle-check",
            Experiment::Greedy => "greedy",
            Experiment::KbBound => "kb-bound",
            Experiment::PhiLimit => "phi-limit",
            Experiment::Section6 => "section6",
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Experiment {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        <Experiment as clap::ValueEnum>::from_str(s, true)
            .map_err(|_| ConfigError::Invalid(format!("unknown experiment {s:?}")))
    }
}

/// A sequence given as an explicit list or a rule string.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SeqSpec {
    List(Vec<i64>),
    Text(String),
}

impl SeqSpec {
    fn is_previous_height(&self) -> bool {
        matches!(self, SeqSpec::Text(s) if PREVIOUS_HEIGHT.contains(&s.trim()))
    }

    fn len(&self) -> Option<usize> {
        match self {
            SeqSpec::List(v) => Some(v.len()),
            SeqSpec::Text(_) => None,
        }
    }

    fn resolve(&self, n: usize, what: &str) -> Result<Vec<BigInt>, ConfigError> {
        match self {
            SeqSpec::List(v) if v.len() == n => Ok(v.iter().map(|&x| BigInt::from(x)).collect()),
            SeqSpec::List(v) => Err(ConfigError::Invalid(format!("{what}: {} entries for {n} stages", v.len()))),
            SeqSpec::Text(s) => Ok(s.parse::<Rule>()?.take(n)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LawSpec {
    Named(String),
    PointMass { point_mass: i64 },
    Table { table: Vec<(i64, String)> },
}

impl LawSpec {
    fn resolve(&self) -> Result<OffsetLaw, ConfigError> {
        match self {
            LawSpec::Named(s) if s == "uniform" => Ok(OffsetLaw::Uniform),
            LawSpec::Named(s) => Err(ConfigError::Invalid(format!("unknown law {s:?}"))),
            LawSpec::PointMass { point_mass } => Ok(OffsetLaw::PointMass(BigInt::from(*point_mass))),
            LawSpec::Table { table } => table
                .iter()
                .map(|(s, m)| {
                    let mass: BigRational = m
                        .parse()
                        .map_err(|_| ConfigError::Invalid(format!("bad mass {m:?}; use \"p/q\"")))?;
                    Ok((BigInt::from(*s), mass))
                })
                .collect::<Result<_, _>>()
                .map(OffsetLaw::Table),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LawsSpec {
    One(LawSpec),
    PerStage(Vec<LawSpec>),
}

impl Default for LawsSpec {
    fn default() -> Self {
        LawsSpec::One(LawSpec::Named("uniform".into()))
    }
}

fn zero_seq() -> SeqSpec {
    SeqSpec::Text("0".into())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stages: Option<usize>,
    pub cuts: SeqSpec,
    #[serde(default = "zero_seq")]
    pub spacing: SeqSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top_spacers: Option<SeqSpec>,
    #[serde(default)]
    pub law: LawsSpec,
}

impl ParamsSpec {
    pub fn stage_count(&self) -> Result<usize, ConfigError> {
        let from_lists = [Some(&self.cuts), Some(&self.spacing), self.top_spacers.as_ref()]
            .into_iter()
            .flatten()
            .filter_map(SeqSpec::len)
            .chain(match &self.law {
                LawsSpec::PerStage(v) => Some(v.len()),
                LawsSpec::One(_) => None,
            });
        let mut n = self.stages;
        for len in from_lists {
            match n {
                None => n = Some(len),
                Some(m) if m != len => {
                    return Err(ConfigError::Invalid(format!("sequence of length {len} for {m} stages")))
                }
                _ => {}
            }
        }
        n.ok_or_else(|| ConfigError::Invalid("set `stages` when every sequence is a rule".into()))
    }

    pub fn build(&self) -> Result<OrnsteinParams, ConfigError> {
        let n = self.stage_count()?;
        let cuts = self
            .cuts
            .resolve(n, "cuts")?
            .iter()
            .map(|c| u64::try_from(c).map_err(|_| ConfigError::Invalid(format!("cut {c} out of range"))))
            .collect::<Result<Vec<_>, _>>()?;
        let scale = if self.spacing.is_previous_height() {
            SpacerScale::PreviousHeight
        } else {
            SpacerScale::Explicit(self.spacing.resolve(n, "spacing")?)
        };
        let tops = match &self.top_spacers {
            Some(s) => s.resolve(n, "top_spacers")?,
            None => Vec::new(),
        };
        let laws = match &self.law {
            LawsSpec::One(l) => vec![l.resolve()?],
            LawsSpec::PerStage(v) => v.iter().map(LawSpec::resolve).collect::<Result<_, _>>()?,
        };
        Ok(OrnsteinParams::new(cuts, scale, tops, laws)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<Experiment>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum GreedyModeSpec {
    Fixed,
    #[default]
    Averaged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NumericSection {
    #[serde(default)]
    pub seed: u64,
    /// Grid size `N`; each experiment picks a default when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<usize>,
    /// Coefficient window `N_c`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<u64>,
    #[serde(default = "defaults::epsilon")]
    pub epsilon: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replicas: Option<usize>,
    #[serde(default = "defaults::budget")]
    pub budget: usize,
    #[serde(default = "defaults::threshold")]
    pub threshold: f64,
    #[serde(default = "defaults::max_steps")]
    pub max_steps: usize,
    #[serde(default)]
    pub mode: GreedyModeSpec,
    /// Stage used by single-stage experiments (kb-bound, section6).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage: Option<usize>,
    /// Grid points for kb-bound.
    #[serde(default = "defaults::points")]
    pub points: usize,
    /// Seeds for oracle-check.
    #[serde(default = "defaults::seeds")]
    pub seeds: u64,
    /// Stages built into the tower for oracle-check; all by default.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tower_stages: Option<usize>,
}

mod defaults {
    pub fn epsilon() -> f64 {
        0.1
    }
    pub fn budget() -> usize {
        8
    }
    pub fn threshold() -> f64 {
        1e-3
    }
    pub fn max_steps() -> usize {
        50
    }
    pub fn points() -> usize {
        32
    }
    pub fn seeds() -> u64 {
        10
    }
    pub fn dir() -> std::path::PathBuf {
        "riesz-out".into()
    }
    pub fn formats() -> Vec<super::Format> {
        vec![super::Format::Json, super::Format::Csv]
    }
}

impl Default for NumericSection {
    fn default() -> Self {
        toml::from_str("").expect("all numeric fields have defaults")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "defaults::dir")]
    pub dir: PathBuf,
    #[serde(default = "defaults::formats")]
    pub formats: Vec<Format>,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: defaults::dir(), formats: defaults::formats() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub params: ParamsSpec,
    #[serde(default)]
    pub experiment: ExperimentSection,
    #[serde(default)]
    pub numeric: NumericSection,
    #[serde(default)]
    pub output: OutputSection,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.into(), source })?;
        Self::from_toml(&text)
    }

    pub fn wants(&self, format: Format) -> bool {
        self.output.formats.contains(&format)
    }
}

/// Preset files shipped with the tool.
pub const PRESETS: [(&str, &str); 3] = [
    ("dyadic-odometer", include_str!("../presets/dyadic-odometer.toml")),
    ("classic-ornstein", include_str!("../presets/classic-ornstein.toml")),
    ("degenerate-xi", include_str!("../presets/degenerate-xi.toml")),
];

pub fn preset(name: &str) -> Result<ExperimentConfig, ConfigError> {
    let (_, text) = PRESETS
        .iter()
        .find(|(n, _)| *n == name)
        .ok_or_else(|| ConfigError::Invalid(format!("unknown preset {name:?}")))?;
    ExperimentConfig::from_toml(text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_build() {
        for (name, _) in PRESETS {
            let cfg = preset(name).unwrap();
            cfg.params.build().unwrap_or_else(|e| panic!("{name}: {e}"));
        }
    }

    #[test]
    fn rule_sequences_need_a_stage_count() {
        let cfg = ExperimentConfig::from_toml("[params]\ncuts = \"2\"\n").unwrap();
        assert!(matches!(cfg.params.build(), Err(ConfigError::Invalid(_))));
    }

    #[test]
    fn lists_fix_the_stage_count() {
        let cfg = ExperimentConfig::from_toml("[params]\ncuts = [2, 3]\nspacing = \"2\"\n").unwrap();
        let p = cfg.params.build().unwrap();
        assert_eq!(p.stages(), 2);
        assert_eq!(p.height(2), &BigInt::from(24));
    }

    #[test]
    fn previous_height_preset() {
        let text = "[params]\nstages = 3\ncuts = \"3\"\nspacing = \"t_k = h_{k-1}\"\n";
        let p = ExperimentConfig::from_toml(text).unwrap().params.build().unwrap();
        assert_eq!(p.scale_rule(), &SpacerScale::PreviousHeight);
    }

    #[test]
    fn law_forms() {
        let text = r#"
[params]
cuts = [3, 3]
spacing = [2, 2]
law = [{ point_mass = 0 }, { table = [[-1, "1/4"], [0, "1/2"], [1, "1/4"]] }]
"#;
        let p = ExperimentConfig::from_toml(text).unwrap().params.build().unwrap();
        assert!(!p.law(0).is_uniform());
        assert_eq!(p.law(1).support_size(), BigInt::from(3));
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(ExperimentConfig::from_toml("[params]\ncuts = [2]\nfoo = 1\n").is_err());
    }

    #[test]
    fn experiment_names() {
        assert_eq!("kb-bound".parse::<Experiment>().unwrap(), Experiment::KbBound);
        assert!("nope".parse::<Experiment>().is_err());
    }
}
