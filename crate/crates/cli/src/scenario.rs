//! Scenario files.
//!
//! ```toml
//! mode = "stationary"   # or "oneshot"
//! f_per = 0.5
//! lambda = 0.225        # stationary only
//!
//! [[support]]
//! p = 0.2
//! W = 1
//! L = 1
//! f = 5
//! R = 10
//! ```
//!
//! Unknown keys are rejected. Numbers are parsed as decimals with correct
//! rounding, so published parameters round-trip exactly.

use std::path::Path;

use mfoffload::model::{Configuration, OneShotScenario, Scenario, StationaryScenario, SupportDistribution};
use mfoffload::Error as ModelError;
use serde::Deserialize;
use toml::Spanned;

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: field `{field}`: {message}")]
    Field { field: String, line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeTag {
    Oneshot,
    Stationary,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SupportEntry {
    pub p: Spanned<f64>,
    #[serde(rename = "W")]
    pub w: Spanned<f64>,
    #[serde(rename = "L")]
    pub l: Spanned<f64>,
    pub f: Spanned<f64>,
    #[serde(rename = "R")]
    pub r: Spanned<f64>,
}

/// Raw file contents before validation.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub mode: Spanned<ModeTag>,
    pub f_per: Spanned<f64>,
    #[serde(default)]
    pub lambda: Option<Spanned<f64>>,
    pub support: Spanned<Vec<SupportEntry>>,
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].bytes().filter(|&b| b == b'\n').count() + 1
}

pub fn parse_scenario(path: &Path) -> Result<Scenario, ScenarioError> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| ScenarioError::Io { path: path.display().to_string(), source })?;
    parse_scenario_str(&text)
}

pub fn parse_scenario_str(text: &str) -> Result<Scenario, ScenarioError> {
    let raw: ScenarioFile = toml::from_str(text).map_err(|e| ScenarioError::Syntax {
        line: e.span().map_or(1, |s| line_of(text, s.start)),
        message: e.message().to_string(),
    })?;
    let field_err = |field: &str, span: std::ops::Range<usize>, err: ModelError| ScenarioError::Field {
        field: field.to_string(),
        line: line_of(text, span.start),
        message: err.to_string(),
    };

    let mut points = Vec::with_capacity(raw.support.get_ref().len());
    for (i, entry) in raw.support.get_ref().iter().enumerate() {
        let config = Configuration::new(*entry.w.get_ref(), *entry.l.get_ref(), *entry.f.get_ref(), *entry.r.get_ref())
            .map_err(|e| {
                let (name, span) = match &e {
                    ModelError::InvalidConfiguration { field: "W", .. } => ("W", entry.w.span()),
                    ModelError::InvalidConfiguration { field: "L", .. } => ("L", entry.l.span()),
                    ModelError::InvalidConfiguration { field: "f", .. } => ("f", entry.f.span()),
                    _ => ("R", entry.r.span()),
                };
                field_err(&format!("support[{i}].{name}"), span, e)
            })?;
        points.push((*entry.p.get_ref(), config));
    }
    let dist = SupportDistribution::new(points).map_err(|e| {
        let entries = raw.support.get_ref();
        match e {
            ModelError::InvalidProbability { index, .. } => {
                field_err(&format!("support[{index}].p"), entries[index].p.span(), e)
            }
            ModelError::ProbabilitySum { .. } => field_err(
                "support[*].p (probability sum)",
                entries.first().map_or(raw.support.span(), |en| en.p.span()),
                e,
            ),
            _ => field_err("support", raw.support.span(), e),
        }
    })?;

    let f_per = *raw.f_per.get_ref();
    match *raw.mode.get_ref() {
        ModeTag::Oneshot => {
            if let Some(lambda) = &raw.lambda {
                return Err(ScenarioError::Field {
                    field: "lambda".into(),
                    line: line_of(text, lambda.span().start),
                    message: "only allowed when mode = \"stationary\"".into(),
                });
            }
            OneShotScenario::new(dist, f_per)
                .map(Scenario::OneShot)
                .map_err(|e| field_err("f_per", raw.f_per.span(), e))
        }
        ModeTag::Stationary => {
            let lambda = raw.lambda.as_ref().ok_or_else(|| ScenarioError::Field {
                field: "lambda".into(),
                line: line_of(text, raw.mode.span().start),
                message: "required when mode = \"stationary\"".into(),
            })?;
            StationaryScenario::new(dist, f_per, *lambda.get_ref()).map(Scenario::Stationary).map_err(|e| match e {
                ModelError::InvalidParameter { name: "lambda", .. } => field_err("lambda", lambda.span(), e),
                _ => field_err("f_per", raw.f_per.span(), e),
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use mfoffload::model::{presets, CostModel};

    const COMPETITIVE: &str = r#"
mode = "oneshot"
f_per = 0.5

[[support]]
p = 0.2
W = 1
L = 1
f = 1
R = 20

[[support]]
p = 0.4
W = 3
L = 2
f = 1
R = 20

[[support]]
p = 0.4
W = 5
L = 3
f = 1
R = 20
"#;

    #[test]
    fn parses_competitive_example() {
        let s = parse_scenario_str(COMPETITIVE).unwrap();
        assert_eq!(s, Scenario::OneShot(presets::competitive()));
        assert_eq!(s.distribution().len(), 3);
    }

    #[test]
    fn probability_sum_error_names_field() {
        let text = COMPETITIVE.replacen("p = 0.4", "p = 0.399", 1);
        let err = parse_scenario_str(&text).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("probability sum"), "{msg}");
        assert!(msg.starts_with("line 6:"), "{msg}");
    }

    #[test]
    fn stationary_requires_lambda() {
        let text = COMPETITIVE.replace("oneshot", "stationary");
        let err = parse_scenario_str(&text).unwrap_err();
        assert!(err.to_string().contains("lambda"), "{err}");
    }

    #[test]
    fn oneshot_rejects_lambda() {
        let text = COMPETITIVE.replace("f_per = 0.5", "f_per = 0.5\nlambda = 1");
        assert!(parse_scenario_str(&text).is_err());
    }

    #[test]
    fn nonpositive_field_reports_line() {
        let text = COMPETITIVE.replacen("L = 2", "L = 0", 1);
        let err = parse_scenario_str(&text).unwrap_err().to_string();
        assert!(err.contains("support[1].L"), "{err}");
        assert!(err.starts_with("line 15:"), "{err}");
    }

    #[test]
    fn unknown_field_rejected() {
        let text = COMPETITIVE.replacen("R = 20", "R = 20\nQ = 1", 1);
        let err = parse_scenario_str(&text).unwrap_err().to_string();
        assert!(err.contains("Q"), "{err}");
    }

    #[test]
    fn stationary_example() {
        let text = r#"
mode = "stationary"
f_per = 3
lambda = 0.6
support = [
  { p = 0.8, W = 3, L = 1.5, f = 5, R = 12 },
  { p = 0.2, W = 1.5, L = 1, f = 2, R = 20 },
]
"#;
        let s = parse_scenario_str(text).unwrap();
        assert_eq!(s, Scenario::Stationary(presets::cooperative_stationary()));
    }
}
