//! Method identifiers and typed hyperparameters.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{OodError, Result};

/// The 22 post-hoc score functions. The string forms are stable CLI/config ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Mahalanobis,
    Rmds,
    Knn,
    Fdbd,
    Vim,
    Residual,
    Odin,
    Openmax,
    Relation,
    Tempscale,
    Gen,
    Msp,
    Mcdropout,
    Mls,
    Klm,
    React,
    Ash,
    She,
    Rankfeat,
    Gradnorm,
    Energy,
    Dice,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Family {
    Distance,
    Classification,
    Density,
}

impl Family {
    pub fn title(self) -> &'static str {
        match self {
            Family::Distance => "Distance-based Methods",
            Family::Classification => "Classification-based Methods",
            Family::Density => "Density-based Methods",
        }
    }
}

impl Method {
    /// All methods in report order (grouped by family).
    pub const ALL: [Method; 22] = [
        Method::Mahalanobis,
        Method::Rmds,
        Method::Knn,
        Method::Fdbd,
        Method::Vim,
        Method::Residual,
        Method::Odin,
        Method::Openmax,
        Method::Relation,
        Method::Tempscale,
        Method::Gen,
        Method::Msp,
        Method::Mcdropout,
        Method::Mls,
        Method::Klm,
        Method::React,
        Method::Ash,
        Method::She,
        Method::Rankfeat,
        Method::Gradnorm,
        Method::Energy,
        Method::Dice,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Method::Mahalanobis => "mahalanobis",
            Method::Rmds => "rmds",
            Method::Knn => "knn",
            Method::Fdbd => "fdbd",
            Method::Vim => "vim",
            Method::Residual => "residual",
            Method::Odin => "odin",
            Method::Openmax => "openmax",
            Method::Relation => "relation",
            Method::Tempscale => "tempscale",
            Method::Gen => "gen",
            Method::Msp => "msp",
            Method::Mcdropout => "mcdropout",
            Method::Mls => "mls",
            Method::Klm => "klm",
            Method::React => "react",
            Method::Ash => "ash",
            Method::She => "she",
            Method::Rankfeat => "rankfeat",
            Method::Gradnorm => "gradnorm",
            Method::Energy => "energy",
            Method::Dice => "dice",
        }
    }

    /// Display name used in report tables.
    pub fn display_name(self) -> &'static str {
        match self {
            Method::Mahalanobis => "Mahalanobis",
            Method::Rmds => "RMDS",
            Method::Knn => "KNN",
            Method::Fdbd => "fDBD",
            Method::Vim => "ViM",
            Method::Residual => "Residual",
            Method::Odin => "ODIN",
            Method::Openmax => "OpenMax",
            Method::Relation => "Relation",
            Method::Tempscale => "TempScale",
            Method::Gen => "GEN",
            Method::Msp => "MSP",
            Method::Mcdropout => "MCDropout",
            Method::Mls => "MLS",
            Method::Klm => "KL Matching",
            Method::React => "ReAct",
            Method::Ash => "ASH",
            Method::She => "SHE",
            Method::Rankfeat => "RankFeat",
            Method::Gradnorm => "GradNorm",
            Method::Energy => "Energy",
            Method::Dice => "DICE",
        }
    }

    pub fn family(self) -> Family {
        match self {
            Method::Mahalanobis | Method::Rmds | Method::Knn | Method::Fdbd => Family::Distance,
            Method::Energy | Method::Dice => Family::Density,
            _ => Family::Classification,
        }
    }

    /// Hyperparameter keys this method accepts.
    pub fn accepted_keys(self) -> &'static [Param] {
        use Param::*;
        match self {
            Method::Energy => &[Temperature],
            Method::Odin => &[Temperature, Noise],
            Method::Gen => &[Gamma, TopM],
            Method::Knn => &[K, Cap],
            Method::Relation => &[Pow, Cap],
            Method::Vim | Method::Residual => &[Dim],
            Method::React => &[Percentile, Temperature, Scorer],
            Method::Ash => &[Percentile],
            Method::Dice => &[Sparsity],
            Method::She => &[Beta],
            Method::Openmax => &[TailSize, AlphaTop],
            Method::Fdbd => &[DistanceAsNormalizer, Negate],
            _ => &[],
        }
    }

    pub fn all_ids() -> String {
        Method::ALL.iter().map(|m| m.id()).collect::<Vec<_>>().join(", ")
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Method {
    type Err = OodError;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        let alias = match s.as_str() {
            "kl_matching" | "klmatching" | "kl" => "klm",
            "maxlogit" => "mls",
            "temp_scaling" | "temperature_scaling" => "tempscale",
            other => other,
        };
        Method::ALL
            .iter()
            .copied()
            .find(|m| m.id() == alias)
            .ok_or_else(|| {
                OodError::InvalidConfig(format!(
                    "unknown method `{s}`; expected one of {}",
                    Method::all_ids()
                ))
            })
    }
}

/// Hyperparameter keys. Their string forms are the stable config keys.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Param {
    #[serde(rename = "T")]
    Temperature,
    #[serde(rename = "gamma")]
    Gamma,
    #[serde(rename = "M")]
    TopM,
    #[serde(rename = "K")]
    K,
    #[serde(rename = "percentile")]
    Percentile,
    #[serde(rename = "pow")]
    Pow,
    #[serde(rename = "dim")]
    Dim,
    #[serde(rename = "noise")]
    Noise,
    #[serde(rename = "beta")]
    Beta,
    #[serde(rename = "eta")]
    TailSize,
    #[serde(rename = "alpha_top")]
    AlphaTop,
    #[serde(rename = "sparsity")]
    Sparsity,
    #[serde(rename = "cap")]
    Cap,
    #[serde(rename = "distance_as_normalizer")]
    DistanceAsNormalizer,
    #[serde(rename = "negate")]
    Negate,
    #[serde(rename = "scorer")]
    Scorer,
}

impl Param {
    pub fn key(self) -> &'static str {
        match self {
            Param::Temperature => "T",
            Param::Gamma => "gamma",
            Param::TopM => "M",
            Param::K => "K",
            Param::Percentile => "percentile",
            Param::Pow => "pow",
            Param::Dim => "dim",
            Param::Noise => "noise",
            Param::Beta => "beta",
            Param::TailSize => "eta",
            Param::AlphaTop => "alpha_top",
            Param::Sparsity => "sparsity",
            Param::Cap => "cap",
            Param::DistanceAsNormalizer => "distance_as_normalizer",
            Param::Negate => "negate",
            Param::Scorer => "scorer",
        }
    }

    const ALL: [Param; 16] = [
        Param::Temperature,
        Param::Gamma,
        Param::TopM,
        Param::K,
        Param::Percentile,
        Param::Pow,
        Param::Dim,
        Param::Noise,
        Param::Beta,
        Param::TailSize,
        Param::AlphaTop,
        Param::Sparsity,
        Param::Cap,
        Param::DistanceAsNormalizer,
        Param::Negate,
        Param::Scorer,
    ];

    fn kind(self) -> ValueKind {
        match self {
            Param::TopM | Param::K | Param::Dim | Param::TailSize | Param::AlphaTop | Param::Cap => {
                ValueKind::Count
            }
            Param::DistanceAsNormalizer | Param::Negate => ValueKind::Flag,
            Param::Scorer => ValueKind::Choice(&["msp", "energy"]),
            _ => ValueKind::Real,
        }
    }
}

impl fmt::Display for Param {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for Param {
    type Err = OodError;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        Param::ALL
            .iter()
            .copied()
            .find(|p| p.key() == s || (p.key().eq_ignore_ascii_case(s) && p.key().len() > 1))
            .ok_or_else(|| OodError::InvalidConfig(format!("unknown hyperparameter `{s}`")))
    }
}

enum ValueKind {
    Real,
    Count,
    Flag,
    Choice(&'static [&'static str]),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Flag(bool),
    Number(f64),
    Choice(String),
}

impl fmt::Display for ParamValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamValue::Flag(b) => write!(f, "{b}"),
            ParamValue::Number(x) => write!(f, "{x}"),
            ParamValue::Choice(s) => f.write_str(s),
        }
    }
}

impl ParamValue {
    fn parse(param: Param, raw: &str) -> Result<Self> {
        let raw = raw.trim();
        let bad = || OodError::InvalidConfig(format!("bad value `{raw}` for `{param}`"));
        match param.kind() {
            ValueKind::Real | ValueKind::Count => {
                raw.parse::<f64>().map(ParamValue::Number).map_err(|_| bad())
            }
            ValueKind::Flag => match raw.to_ascii_lowercase().as_str() {
                "true" | "1" | "yes" => Ok(ParamValue::Flag(true)),
                "false" | "0" | "no" => Ok(ParamValue::Flag(false)),
                _ => Err(bad()),
            },
            ValueKind::Choice(_) => Ok(ParamValue::Choice(raw.to_ascii_lowercase())),
        }
    }
}

/// A method plus its validated hyperparameters. Keys not set fall back to the
/// method defaults exposed by the accessors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodConfig {
    pub method: Method,
    #[serde(default)]
    pub params: BTreeMap<Param, ParamValue>,
}

pub const DEFAULT_KNN_K: usize = 50;
pub const DEFAULT_RELATION_POW: f64 = 8.0;
pub const DEFAULT_REACT_PERCENTILE: f64 = 99.0;
pub const DEFAULT_ASH_PERCENTILE: f64 = 90.0;
pub const DEFAULT_DICE_SPARSITY: f64 = 90.0;
pub const DEFAULT_SHE_BETA: f64 = 1.0;
pub const DEFAULT_OPENMAX_TAIL: usize = 20;
pub const DEFAULT_OPENMAX_ALPHA: usize = 10;
pub const DEFAULT_GEN_GAMMA: f64 = 0.1;
pub const DEFAULT_VIM_DIM: usize = 256;
pub const DEFAULT_KNN_CAP: usize = 50_000;
pub const DEFAULT_ODIN_TEMPERATURE: f64 = 1.0;
pub const DEFAULT_ODIN_NOISE: f64 = 0.0014;

impl MethodConfig {
    pub fn new(method: Method) -> Self {
        Self {
            method,
            params: BTreeMap::new(),
        }
    }

    /// Sets a numeric key, validating it.
    pub fn with(mut self, param: Param, value: f64) -> Result<Self> {
        self.set(param, ParamValue::Number(value))?;
        Ok(self)
    }

    pub fn with_flag(mut self, param: Param, value: bool) -> Result<Self> {
        self.set(param, ParamValue::Flag(value))?;
        Ok(self)
    }

    pub fn set(&mut self, param: Param, value: ParamValue) -> Result<()> {
        if !self.method.accepted_keys().contains(&param) {
            return Err(OodError::InvalidConfig(format!(
                "`{param}` is not a hyperparameter of {}",
                self.method
            )));
        }
        check_range(param, &value)?;
        self.params.insert(param, value);
        Ok(())
    }

    /// Parses `method` or `method:key=value,key=value`.
    pub fn parse(spec: &str) -> Result<Self> {
        let (name, rest) = match spec.split_once(':') {
            Some((n, r)) => (n, Some(r)),
            None => (spec, None),
        };
        let mut cfg = MethodConfig::new(name.parse()?);
        if let Some(rest) = rest {
            for pair in rest.split(',').filter(|p| !p.trim().is_empty()) {
                let (k, v) = pair.split_once('=').ok_or_else(|| {
                    OodError::InvalidConfig(format!("expected key=value, got `{pair}`"))
                })?;
                let param: Param = k.parse()?;
                let value = ParamValue::parse(param, v)?;
                cfg.set(param, value)?;
            }
        }
        Ok(cfg)
    }

    /// Re-checks every stored key, e.g. after deserialization.
    pub fn validate(&self) -> Result<()> {
        for (p, v) in &self.params {
            if !self.method.accepted_keys().contains(p) {
                return Err(OodError::InvalidConfig(format!(
                    "`{p}` is not a hyperparameter of {}",
                    self.method
                )));
            }
            check_range(*p, v)?;
        }
        Ok(())
    }

    fn number(&self, p: Param) -> Option<f64> {
        match self.params.get(&p) {
            Some(ParamValue::Number(x)) => Some(*x),
            _ => None,
        }
    }

    fn flag(&self, p: Param) -> Option<bool> {
        match self.params.get(&p) {
            Some(ParamValue::Flag(b)) => Some(*b),
            _ => None,
        }
    }

    pub fn temperature(&self) -> f64 {
        self.number(Param::Temperature).unwrap_or(1.0)
    }

    pub fn gamma(&self) -> f64 {
        self.number(Param::Gamma).unwrap_or(DEFAULT_GEN_GAMMA)
    }

    /// `None` sums over every class.
    pub fn top_m(&self) -> Option<usize> {
        self.number(Param::TopM).map(|x| x as usize)
    }

    pub fn k(&self) -> usize {
        self.number(Param::K).map_or(DEFAULT_KNN_K, |x| x as usize)
    }

    pub fn cap(&self) -> usize {
        self.number(Param::Cap).map_or(DEFAULT_KNN_CAP, |x| x as usize)
    }

    pub fn percentile(&self) -> f64 {
        let default = match self.method {
            Method::Ash => DEFAULT_ASH_PERCENTILE,
            _ => DEFAULT_REACT_PERCENTILE,
        };
        self.number(Param::Percentile).unwrap_or(default)
    }

    pub fn pow(&self) -> f64 {
        self.number(Param::Pow).unwrap_or(DEFAULT_RELATION_POW)
    }

    pub fn dim(&self) -> usize {
        self.number(Param::Dim).map_or(DEFAULT_VIM_DIM, |x| x as usize)
    }

    pub fn noise(&self) -> f64 {
        self.number(Param::Noise).unwrap_or(DEFAULT_ODIN_NOISE)
    }

    pub fn beta(&self) -> f64 {
        self.number(Param::Beta).unwrap_or(DEFAULT_SHE_BETA)
    }

    pub fn tail_size(&self) -> usize {
        self.number(Param::TailSize).map_or(DEFAULT_OPENMAX_TAIL, |x| x as usize)
    }

    pub fn alpha_top(&self) -> usize {
        self.number(Param::AlphaTop).map_or(DEFAULT_OPENMAX_ALPHA, |x| x as usize)
    }

    pub fn sparsity(&self) -> f64 {
        self.number(Param::Sparsity).unwrap_or(DEFAULT_DICE_SPARSITY)
    }

    pub fn distance_as_normalizer(&self) -> bool {
        self.flag(Param::DistanceAsNormalizer).unwrap_or(true)
    }

    pub fn negate(&self) -> bool {
        self.flag(Param::Negate).unwrap_or(false)
    }

    /// ReAct's scorer applied after clamping.
    pub fn react_energy(&self) -> bool {
        matches!(self.params.get(&Param::Scorer), Some(ParamValue::Choice(s)) if s == "energy")
    }

    /// Compact `key=value,...` rendering, sorted by key.
    pub fn params_string(&self) -> String {
        self.params
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join(",")
    }
}

impl fmt::Display for MethodConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.params.is_empty() {
            write!(f, "{}", self.method)
        } else {
            write!(f, "{}:{}", self.method, self.params_string())
        }
    }
}

fn check_range(param: Param, value: &ParamValue) -> Result<()> {
    let err = |why: &str| Err(OodError::InvalidConfig(format!("`{param}` = {value}: {why}")));
    match (param.kind(), value) {
        (ValueKind::Flag, ParamValue::Flag(_)) => Ok(()),
        (ValueKind::Choice(opts), ParamValue::Choice(s)) => {
            if opts.contains(&s.as_str()) {
                Ok(())
            } else {
                err(&format!("expected one of {opts:?}"))
            }
        }
        (ValueKind::Count, ParamValue::Number(x)) => {
            let x = *x;
            if !x.is_finite() || x < 0.0 || x.fract() != 0.0 || x > u32::MAX as f64 {
                return err("expected a non-negative integer");
            }
            let min = match param {
                Param::K | Param::TopM | Param::AlphaTop | Param::Cap => 1.0,
                Param::TailSize => 2.0,
                _ => 0.0,
            };
            if x < min {
                return err(&format!("must be at least {min}"));
            }
            Ok(())
        }
        (ValueKind::Real, ParamValue::Number(x)) => {
            let x = *x;
            if !x.is_finite() {
                return err("must be finite");
            }
            let ok = match param {
                Param::Temperature | Param::Pow | Param::Beta => x > 0.0,
                Param::Gamma => x > 0.0 && x < 1.0,
                Param::Percentile | Param::Sparsity => (0.0..=100.0).contains(&x),
                Param::Noise => x >= 0.0,
                _ => true,
            };
            if ok {
                Ok(())
            } else {
                err("out of range")
            }
        }
        _ => err("wrong value type"),
    }
}
