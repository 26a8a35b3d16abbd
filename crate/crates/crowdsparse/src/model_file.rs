//! Plain-text model serialization: a flat `key: value` document holding the
//! fitted parameters, the penalty they were fit at, the sign-disambiguation
//! flag, and any feature standardization baked into the fit. Floats are
//! rendered with 17 significant digits, so save/load round-trips exactly.

use std::fs;
use std::path::Path;

use crate::data::StandardizeRecord;
use crate::em::CrowdParams;
use crate::error::{Error, Result};

const FORMAT_LINE: &str = "crowdsparse-model 1";

#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub params: CrowdParams,
    pub lambda: f64,
    pub flipped: bool,
    /// Present when the model was fit on standardized features; predictions
    /// must apply the same transform first.
    pub standardize: Option<StandardizeRecord>,
}

impl ModelFile {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("format: {FORMAT_LINE}\n"));
        out.push_str(&format!("d: {}\n", self.params.d()));
        out.push_str(&format!("k: {}\n", self.params.k()));
        out.push_str(&format!("lambda: {}\n", render(self.lambda)));
        out.push_str(&format!("flipped: {}\n", self.flipped));
        out.push_str(&format!("alpha: {}\n", render_vec(&self.params.alpha)));
        out.push_str(&format!("gamma: {}\n", render_vec(&self.params.gamma)));
        out.push_str(&format!("beta: {}\n", render_vec(&self.params.beta)));
        if let Some(std) = &self.standardize {
            out.push_str(&format!("standardize_mean: {}\n", render_vec(&std.mean)));
            out.push_str(&format!("standardize_scale: {}\n", render_vec(&std.scale)));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<ModelFile> {
        parse(text).map_err(|(line, msg)| Error::Invalid(format!("line {line}: {msg}")))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<ModelFile> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        parse(&text).map_err(|(line, msg)| Error::parse(path, line, msg))
    }
}

/// 17 significant digits: enough to reproduce any f64 bit pattern.
fn render(v: f64) -> String {
    format!("{v:.16e}")
}

fn render_vec(values: &[f64]) -> String {
    values.iter().map(|v| render(*v)).collect::<Vec<_>>().join(",")
}

type LineError = (usize, String);

fn parse(text: &str) -> std::result::Result<ModelFile, LineError> {
    let mut format = None;
    let mut d = None;
    let mut k = None;
    let mut lambda = None;
    let mut flipped = None;
    let mut alpha = None;
    let mut gamma = None;
    let mut beta = None;
    let mut std_mean: Option<Vec<f64>> = None;
    let mut std_scale: Option<Vec<f64>> = None;

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once(':')
            .ok_or_else(|| (line_no, "expected `key: value`".to_string()))?;
        let key = key.trim();
        let value = value.trim();
        let dup = |slot: bool| -> std::result::Result<(), LineError> {
            if slot {
                Err((line_no, format!("duplicate key `{key}`")))
            } else {
                Ok(())
            }
        };
        match key {
            "format" => {
                dup(format.is_some())?;
                if value != FORMAT_LINE {
                    return Err((line_no, format!("unsupported format `{value}`")));
                }
                format = Some(());
            }
            "d" => {
                dup(d.is_some())?;
                d = Some(parse_count(value, line_no)?);
            }
            "k" => {
                dup(k.is_some())?;
                k = Some(parse_count(value, line_no)?);
            }
            "lambda" => {
                dup(lambda.is_some())?;
                let v = parse_float(value, line_no)?;
                if !(v.is_finite() && v >= 0.0) {
                    return Err((line_no, "lambda must be finite and >= 0".into()));
                }
                lambda = Some(v);
            }
            "flipped" => {
                dup(flipped.is_some())?;
                flipped = Some(match value {
                    "true" => true,
                    "false" => false,
                    other => return Err((line_no, format!("expected true/false, got `{other}`"))),
                });
            }
            "alpha" => {
                dup(alpha.is_some())?;
                alpha = Some(parse_floats(value, line_no)?);
            }
            "gamma" => {
                dup(gamma.is_some())?;
                gamma = Some(parse_floats(value, line_no)?);
            }
            "beta" => {
                dup(beta.is_some())?;
                beta = Some(parse_floats(value, line_no)?);
            }
            "standardize_mean" => {
                dup(std_mean.is_some())?;
                std_mean = Some(parse_floats(value, line_no)?);
            }
            "standardize_scale" => {
                dup(std_scale.is_some())?;
                std_scale = Some(parse_floats(value, line_no)?);
            }
            other => return Err((line_no, format!("unknown key `{other}`"))),
        }
    }

    let last = text.lines().count().max(1);
    let missing = |name: &str| (last, format!("missing key `{name}`"));
    format.ok_or_else(|| missing("format"))?;
    let d = d.ok_or_else(|| missing("d"))?;
    let k = k.ok_or_else(|| missing("k"))?;
    let lambda = lambda.ok_or_else(|| missing("lambda"))?;
    let flipped = flipped.ok_or_else(|| missing("flipped"))?;
    let alpha = alpha.ok_or_else(|| missing("alpha"))?;
    let gamma = gamma.ok_or_else(|| missing("gamma"))?;
    let beta = beta.ok_or_else(|| missing("beta"))?;

    if alpha.len() != d {
        return Err((last, format!("alpha has {} entries but d = {d}", alpha.len())));
    }
    if gamma.len() != k {
        return Err((last, format!("gamma has {} entries but k = {k}", gamma.len())));
    }
    if beta.len() != k + 1 {
        return Err((
            last,
            format!("beta has {} entries but k + 1 = {}", beta.len(), k + 1),
        ));
    }
    let standardize = match (std_mean, std_scale) {
        (None, None) => None,
        (Some(mean), Some(scale)) => {
            if mean.len() != k || scale.len() != k {
                return Err((last, "standardization record width must equal k".into()));
            }
            if scale.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
                return Err((last, "standardization scales must be positive".into()));
            }
            Some(StandardizeRecord { mean, scale })
        }
        _ => {
            return Err((
                last,
                "standardize_mean and standardize_scale must appear together".into(),
            ))
        }
    };
    if alpha.iter().chain(&gamma).chain(&beta).any(|v| !v.is_finite()) {
        return Err((last, "parameters must be finite".into()));
    }
    Ok(ModelFile {
        params: CrowdParams { alpha, gamma, beta },
        lambda,
        flipped,
        standardize,
    })
}

fn parse_count(value: &str, line: usize) -> std::result::Result<usize, LineError> {
    value
        .parse::<usize>()
        .map_err(|_| (line, format!("expected a nonnegative integer, got `{value}`")))
}

fn parse_float(value: &str, line: usize) -> std::result::Result<f64, LineError> {
    value
        .parse::<f64>()
        .map_err(|_| (line, format!("expected a number, got `{value}`")))
}

fn parse_floats(value: &str, line: usize) -> std::result::Result<Vec<f64>, LineError> {
    if value.is_empty() {
        return Ok(Vec::new());
    }
    value
        .split(',')
        .map(|cell| parse_float(cell.trim(), line))
        .collect()
}
