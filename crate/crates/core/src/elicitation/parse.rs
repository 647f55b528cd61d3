use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

/// Hyperprior rates returned by the model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElicitedRates {
    pub alpha_rate: f64,
    pub beta_rate: f64,
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ParseError {
    #[error("response is empty")]
    Empty,
    #[error("response is not valid JSON: {0}")]
    InvalidJson(String),
    #[error("response JSON is not an object")]
    NotAnObject,
    #[error("missing field `{0}`")]
    MissingField(&'static str),
    #[error("field `{field}` is not a number: {found}")]
    NotNumeric { field: &'static str, found: String },
    #[error("field `{field}` must be > 0, got {value}")]
    NonPositive { field: &'static str, value: f64 },
}

/// Returns the body of the first fenced block (``` with optional language
/// tag), or the trimmed input when there is no fence.
fn strip_fences(raw: &str) -> &str {
    let text = raw.trim();
    let Some(start) = text.find("```") else {
        return text;
    };
    let after = &text[start + 3..];
    // Drop the language tag line, if any.
    let body = match after.find('\n') {
        Some(nl) if !after[..nl].contains('{') => &after[nl + 1..],
        _ => after.trim_start_matches(|c: char| c.is_ascii_alphabetic()),
    };
    match body.find("```") {
        Some(end) => body[..end].trim(),
        None => body.trim(),
    }
}

fn rate(obj: &serde_json::Map<String, Value>, field: &'static str) -> Result<f64, ParseError> {
    let v = obj.get(field).ok_or(ParseError::MissingField(field))?;
    let x = v.as_f64().ok_or_else(|| ParseError::NotNumeric {
        field,
        found: v.to_string(),
    })?;
    if x.is_finite() && x > 0.0 {
        Ok(x)
    } else {
        Err(ParseError::NonPositive { field, value: x })
    }
}

/// Parses `{"alpha_rate": .., "beta_rate": ..}`, optionally wrapped in a
/// markdown code fence. Extra fields are ignored.
pub fn parse_response(raw: &str) -> Result<ElicitedRates, ParseError> {
    let body = strip_fences(raw);
    if body.is_empty() {
        return Err(ParseError::Empty);
    }
    let value: Value =
        serde_json::from_str(body).map_err(|e| ParseError::InvalidJson(e.to_string()))?;
    let obj = value.as_object().ok_or(ParseError::NotAnObject)?;
    Ok(ElicitedRates {
        alpha_rate: rate(obj, "alpha_rate")?,
        beta_rate: rate(obj, "beta_rate")?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plain_and_fenced() {
        let r = parse_response(r#"{"alpha_rate": 0.5, "beta_rate": 0.1}"#).unwrap();
        assert_eq!((r.alpha_rate, r.beta_rate), (0.5, 0.1));
        let r = parse_response("```json\n{\"alpha_rate\": 0.1, \"beta_rate\": 1.0}\n```").unwrap();
        assert_eq!((r.alpha_rate, r.beta_rate), (0.1, 1.0));
        let r = parse_response("```\n{\"alpha_rate\": 0.1, \"beta_rate\": 2.0}\n```\n").unwrap();
        assert_eq!((r.alpha_rate, r.beta_rate), (0.1, 2.0));
        let r = parse_response("```{\"alpha_rate\": 3, \"beta_rate\": 4}```").unwrap();
        assert_eq!((r.alpha_rate, r.beta_rate), (3.0, 4.0));
    }

    #[test]
    fn extra_fields_tolerated() {
        let r = parse_response(r#"{"alpha_rate": 2, "beta_rate": 0.25, "why": "x"}"#).unwrap();
        assert_eq!((r.alpha_rate, r.beta_rate), (2.0, 0.25));
    }

    #[test]
    fn negative_alpha_named() {
        let err = parse_response(r#"{"alpha_rate": -1, "beta_rate": 0.5}"#).unwrap_err();
        assert_eq!(err, ParseError::NonPositive { field: "alpha_rate", value: -1.0 });
    }
}
