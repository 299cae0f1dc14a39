//! Run configuration: an optional TOML file whose values are overridden by flags.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use menucast_core::evaluate::Method;
use menucast_core::{Likelihood, PriorFamily};
use serde::Deserialize;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub input: Option<PathBuf>,
    pub series: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub items: Option<Vec<String>>,
    pub likelihood: Option<String>,
    pub prior: Option<String>,
    pub degree: Option<usize>,
    pub knot_spacing: Option<i64>,
    pub alpha: Option<f64>,
    pub samples: Option<usize>,
    pub tau1: Option<f64>,
    pub tau2: Option<f64>,
    pub tau3: Option<f64>,
    pub horizon: Option<usize>,
    #[serde(default)]
    pub tune: TuneSection,
    #[serde(default)]
    pub evaluate: EvaluateSection,
    #[serde(default)]
    pub synth: SynthSection,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TuneSection {
    pub folds: Option<usize>,
    pub test_size: Option<usize>,
    pub grid_tau1: Option<Vec<f64>>,
    pub grid_tau2: Option<Vec<f64>>,
    pub grid_tau3: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluateSection {
    pub folds: Option<usize>,
    pub test_size: Option<usize>,
    pub methods: Option<Vec<String>>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSection {
    pub kind: Option<String>,
    pub n: Option<usize>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}

pub fn parse_likelihood(s: &str) -> Result<Likelihood> {
    match s.to_ascii_lowercase().as_str() {
        "normal" => Ok(Likelihood::Normal),
        "negbinom" | "negative-binomial" | "nb" => Ok(Likelihood::NegBinom),
        _ => bail!("unknown likelihood '{s}' (expected normal or negbinom)"),
    }
}

pub fn parse_prior(s: &str) -> Result<PriorFamily> {
    match s.to_ascii_lowercase().as_str() {
        "lasso" | "laplace" => Ok(PriorFamily::Lasso),
        "horseshoe" => Ok(PriorFamily::Horseshoe),
        _ => bail!("unknown prior '{s}' (expected lasso or horseshoe)"),
    }
}

pub fn parse_methods(names: &[String]) -> Result<Vec<Method>> {
    let mut out = Vec::new();
    for n in names {
        let m: Method = n.parse()?;
        if !out.contains(&m) {
            out.push(m);
        }
    }
    if out.is_empty() {
        bail!("no evaluation methods selected");
    }
    Ok(out)
}

/// Comma-separated list of positive numbers.
pub fn parse_grid(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .with_context(|| format!("bad grid value '{t}'"))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_sections() {
        let cfg: FileConfig = toml::from_str(
            r#"
seed = 3
likelihood = "normal"
[evaluate]
folds = 4
methods = ["NEGBINOM", "naive"]
"#,
        )
        .unwrap();
        assert_eq!(cfg.seed, Some(3));
        assert_eq!(cfg.evaluate.folds, Some(4));
        assert_eq!(parse_methods(cfg.evaluate.methods.as_ref().unwrap()).unwrap(), vec![Method::NegBinom, Method::Naive]);
        assert!(toml::from_str::<FileConfig>("sed = 3").is_err());
    }

    #[test]
    fn grids() {
        assert_eq!(parse_grid("1, 2.5,5").unwrap(), vec![1.0, 2.5, 5.0]);
        assert!(parse_grid("1,x").is_err());
        assert!(parse_likelihood("poisson").is_err());
    }
}
