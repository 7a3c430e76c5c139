//! TOML run configuration. Every field has a default so a resolved copy can be
//! written back into the manifest.

use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use eos_lab::eos_core::{derive_setup, symmetric_xy, symmetric_xyxy, ChannelSpec, EosSetup};
use eos_lab::phase_space::{Quadrature, StateModel};
use eos_lab::reconstruction::DEFAULT_SEED;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

/// Configuration problems; mapped to exit code 1.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

/// Parses `a+bi`, `a-bi`, `bi`, `a` and the `j` suffix.
pub fn parse_complex(s: &str) -> Result<C64> {
    let t: String = s.chars().filter(|c| !c.is_whitespace()).collect();
    if t.is_empty() {
        bail!("empty complex literal");
    }
    let bad = || anyhow!("invalid complex literal `{s}`");
    let Some(body) = t.strip_suffix('i').or_else(|| t.strip_suffix('j')) else {
        return Ok(C64::new(t.parse().map_err(|_| bad())?, 0.0));
    };
    // split at the last sign that is not an exponent sign or the leading sign
    let bytes = body.as_bytes();
    let split = (1..bytes.len()).rev().find(|&k| {
        (bytes[k] == b'+' || bytes[k] == b'-') && !matches!(bytes[k - 1], b'e' | b'E')
    });
    let (re, im) = match split {
        Some(k) => (&body[..k], &body[k..]),
        None => ("0", body),
    };
    let im = match im {
        "" | "+" => "1",
        "-" => "-1",
        other => other,
    };
    Ok(C64::new(re.parse().map_err(|_| bad())?, im.parse().map_err(|_| bad())?))
}

/// A complex quantity written either as a TOML number or as a string literal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ComplexLit {
    Real(f64),
    Text(String),
}

impl ComplexLit {
    pub fn value(&self) -> Result<C64> {
        match self {
            ComplexLit::Real(x) => Ok(C64::new(*x, 0.0)),
            ComplexLit::Text(s) => parse_complex(s),
        }
    }
}

impl From<f64> for ComplexLit {
    fn from(x: f64) -> Self {
        ComplexLit::Real(x)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelConfig {
    pub pump: ComplexLit,
    pub probe: f64,
    pub quadrature: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SetupConfig {
    /// `xy`, `xyxy` or `custom`.
    pub kind: String,
    pub zeta: ComplexLit,
    pub beta: f64,
    pub channels: Vec<ChannelConfig>,
}

impl Default for SetupConfig {
    fn default() -> Self {
        Self { kind: "xy".into(), zeta: 1.0.into(), beta: 10.0, channels: Vec::new() }
    }
}

fn quadrature(s: &str) -> Result<Quadrature> {
    match s {
        "X" | "x" => Ok(Quadrature::X),
        "Y" | "y" => Ok(Quadrature::Y),
        other => Err(ConfigError(format!("unknown quadrature `{other}`")).into()),
    }
}

impl SetupConfig {
    /// The setup at squeezing `zeta_override` (real, non-negative) or at the configured ζ.
    pub fn build(&self, zeta_override: Option<f64>) -> Result<EosSetup> {
        let zeta = match zeta_override {
            Some(z) => C64::new(z, 0.0),
            None => self.zeta.value()?,
        };
        match self.kind.as_str() {
            "xy" | "xyxy" if zeta.im != 0.0 || zeta.re < 0.0 => {
                Err(ConfigError("symmetric setups take a real ζ ≥ 0; use kind = \"custom\"".into()).into())
            }
            "xy" => Ok(symmetric_xy(zeta.re, self.beta)),
            "xyxy" => Ok(symmetric_xyxy(zeta.re, self.beta)),
            "custom" => {
                let specs: Result<Vec<ChannelSpec>> = self
                    .channels
                    .iter()
                    .map(|c| Ok(ChannelSpec { pump: c.pump.value()?, probe: c.probe, quadrature: quadrature(&c.quadrature)? }))
                    .collect();
                Ok(derive_setup(zeta, &specs?)?)
            }
            other => Err(ConfigError(format!("unknown setup kind `{other}`")).into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StateConfig {
    /// `vacuum`, `coherent`, `fock`, `cat` or `squeezed`.
    pub kind: String,
    pub alpha: ComplexLit,
    pub n: u32,
    pub even: bool,
    pub r: f64,
    pub phase: f64,
}

impl Default for StateConfig {
    fn default() -> Self {
        Self { kind: "vacuum".into(), alpha: 0.0.into(), n: 0, even: true, r: 0.0, phase: 0.0 }
    }
}

impl StateConfig {
    pub fn build(&self) -> Result<StateModel> {
        let s = match self.kind.as_str() {
            "vacuum" => StateModel::Vacuum,
            "coherent" => StateModel::Coherent(self.alpha.value()?),
            "fock" => StateModel::Fock(self.n),
            "cat" => StateModel::Cat { alpha: self.alpha.value()?, even: self.even },
            "squeezed" => StateModel::Squeezed { r: self.r, phase: self.phase },
            other => return Err(ConfigError(format!("unknown state kind `{other}`")).into()),
        };
        s.validate()?;
        Ok(s)
    }

    pub fn label(&self) -> String {
        match self.kind.as_str() {
            "coherent" | "cat" => format!("{}({})", self.kind, fmt_lit(&self.alpha)),
            "fock" => format!("fock({})", self.n),
            "squeezed" => format!("squeezed({})", self.r),
            other => other.to_string(),
        }
    }
}

fn fmt_lit(l: &ComplexLit) -> String {
    match l {
        ComplexLit::Real(x) => format!("{x}"),
        ComplexLit::Text(s) => s.clone(),
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CountDistConfig {
    /// Squeezing values; empty means the setup's own ζ.
    pub zetas: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SCurvesConfig {
    pub zeta_min: f64,
    pub zeta_max: f64,
    pub points: usize,
    pub s_values: Vec<f64>,
}

impl Default for SCurvesConfig {
    fn default() -> Self {
        Self { zeta_min: 0.05, zeta_max: 4.0, points: 80, s_values: vec![0.5, 0.0, -0.5, -1.0, -2.0] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PostStateConfig {
    /// One outcome list per stage; an empty list draws the outcome.
    pub outcomes: Vec<Vec<i64>>,
    pub grid: usize,
    /// Half-width of the re-gridding window; 0 selects 4 + √n_max.
    pub half_width: f64,
    pub n_max: usize,
}

impl Default for PostStateConfig {
    fn default() -> Self {
        Self { outcomes: vec![vec![10, 0], vec![40, 0]], grid: 257, half_width: 0.0, n_max: 40 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FidelityConfig {
    pub zetas: Vec<f64>,
    /// Any of `XY`, `XYXY`, `XY->XY`.
    pub schemes: Vec<String>,
    pub states: Vec<StateConfig>,
    /// `auto` picks the coherent family for vacuum and coherent inputs and the Fock family otherwise.
    pub family: String,
    pub fock_n_max: u32,
    pub coherent_half_width: f64,
    pub coherent_nodes: usize,
    pub samples: usize,
}

impl Default for FidelityConfig {
    fn default() -> Self {
        Self {
            zetas: vec![0.25, 0.5, 1.0, 2.0, 3.0],
            schemes: vec!["XY".into(), "XY->XY".into()],
            states: vec![StateConfig { kind: "coherent".into(), alpha: 3.0.into(), ..StateConfig::default() }],
            family: "auto".into(),
            fock_n_max: 10,
            coherent_half_width: 6.0,
            coherent_nodes: 81,
            samples: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleConfig {
    pub beta: f64,
    pub zeta: f64,
    pub states: Vec<StateConfig>,
    /// Offset added to the canonical θ; nonzero values are a negative control.
    pub detune: f64,
    pub budget: f64,
    pub balance_budget: f64,
    /// Probe and squeezing of the informational exact-vs-normal comparison; β = 0 skips it.
    pub gaussian_beta: f64,
    pub gaussian_zeta: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            beta: 2.0,
            zeta: 0.3,
            states: vec![
                StateConfig::default(),
                StateConfig { kind: "coherent".into(), alpha: 1.0.into(), ..StateConfig::default() },
            ],
            detune: 0.0,
            budget: 1e-6,
            balance_budget: 1e-9,
            gaussian_beta: 10.0,
            gaussian_zeta: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub seed: u64,
    pub setup: SetupConfig,
    pub state: StateConfig,
    pub count_dist: CountDistConfig,
    pub s_curves: SCurvesConfig,
    pub post_state: PostStateConfig,
    pub fidelity: FidelityConfig,
    pub oracle: OracleConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seed: DEFAULT_SEED,
            setup: SetupConfig::default(),
            state: StateConfig::default(),
            count_dist: CountDistConfig::default(),
            s_curves: SCurvesConfig::default(),
            post_state: PostStateConfig::default(),
            fidelity: FidelityConfig::default(),
            oracle: OracleConfig::default(),
        }
    }
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        // toml reports the line and column of the offending span
        toml::from_str(text).map_err(|e| ConfigError(format!("config: {e}")).into())
    }

    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading {}", p.display()))
                    .map_err(|e| ConfigError(format!("{e:#}")))?;
                Self::parse(&text)
            }
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn complex_literals() {
        let cases = [
            ("3", C64::new(3.0, 0.0)),
            ("3+0i", C64::new(3.0, 0.0)),
            ("-1.5-2i", C64::new(-1.5, -2.0)),
            ("2i", C64::new(0.0, 2.0)),
            ("-i", C64::new(0.0, -1.0)),
            ("1e-3+2.5e+1j", C64::new(1e-3, 25.0)),
            (" 0.5 + 0.25i ", C64::new(0.5, 0.25)),
        ];
        for (s, want) in cases {
            assert_eq!(parse_complex(s).unwrap(), want, "{s}");
        }
        assert!(parse_complex("3+").is_err());
        assert!(parse_complex("abc").is_err());
    }

    #[test]
    fn defaults_round_trip() {
        let c = Config::default();
        assert_eq!(Config::parse(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn malformed_reports_position() {
        let err = Config::parse("[setup]\nzeta = = 1\n").unwrap_err();
        let msg = format!("{err}");
        assert!(msg.contains("line 2"), "{msg}");
        assert!(err.downcast_ref::<ConfigError>().is_some());
        assert!(Config::parse("[setup]\nbogus = 1\n").is_err());
    }

    #[test]
    fn custom_setup() {
        let c = Config::parse(
            "[setup]\nkind = \"custom\"\nzeta = \"0.5+0.5i\"\nchannels = [{ pump = 0.6, probe = 8.0, quadrature = \"X\" }, { pump = \"0.8i\", probe = 8.0, quadrature = \"Y\" }]\n",
        )
        .unwrap();
        let s = c.setup.build(None).unwrap();
        assert_eq!(s.len(), 2);
    }
}
