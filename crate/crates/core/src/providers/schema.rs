//! Response schemas for structured chat completions.
//!
//! Every payload is a JSON object so the same shape works for providers
//! with a JSON-object response mode.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::domain::RequirementField;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemaId {
    ExtractedRequirements,
    RequirementCandidates,
    ElementCandidates,
    EnhancedLine,
    IntegratedParagraph,
}

impl SchemaId {
    pub fn name(self) -> &'static str {
        match self {
            Self::ExtractedRequirements => "extracted_requirements",
            Self::RequirementCandidates => "requirement_candidates",
            Self::ElementCandidates => "element_candidates",
            Self::EnhancedLine => "enhanced_line",
            Self::IntegratedParagraph => "integrated_paragraph",
        }
    }
}

/// A schema plus the candidate count the caller asked for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructuredSchema {
    pub id: SchemaId,
    pub expected_len: Option<usize>,
}

impl StructuredSchema {
    pub fn extracted_requirements() -> Self {
        Self { id: SchemaId::ExtractedRequirements, expected_len: None }
    }

    pub fn requirement_candidates(n: usize) -> Self {
        Self { id: SchemaId::RequirementCandidates, expected_len: Some(n) }
    }

    pub fn element_candidates(n: usize) -> Self {
        Self { id: SchemaId::ElementCandidates, expected_len: Some(n) }
    }

    pub fn enhanced_line() -> Self {
        Self { id: SchemaId::EnhancedLine, expected_len: None }
    }

    pub fn integrated_paragraph() -> Self {
        Self { id: SchemaId::IntegratedParagraph, expected_len: None }
    }

    /// JSON Schema handed to providers that support constrained output.
    pub fn json_schema(&self) -> Value {
        let string_list = json!({"type": "array", "items": {"type": "string"}});
        match self.id {
            SchemaId::ExtractedRequirements => {
                let props: Map<String, Value> =
                    RequirementField::ALL.iter().map(|f| (f.key().to_owned(), string_list.clone())).collect();
                let keys: Vec<&str> = RequirementField::ALL.iter().map(|f| f.key()).collect();
                json!({"type": "object", "properties": props, "required": keys, "additionalProperties": false})
            }
            SchemaId::RequirementCandidates | SchemaId::ElementCandidates => {
                let field_keys: Vec<&str> = RequirementField::ALL.iter().map(|f| f.key()).collect();
                let mut candidates = json!({
                    "type": "array",
                    "items": {
                        "type": "object",
                        "properties": {
                            "value": {"type": "string"},
                            "reasoning": {"type": "string"},
                            "influencing_fields": {"type": "array", "items": {"type": "string", "enum": field_keys}},
                        },
                        "required": ["value", "reasoning", "influencing_fields"],
                        "additionalProperties": false,
                    }
                });
                if let Some(n) = self.expected_len {
                    candidates["minItems"] = json!(n);
                    candidates["maxItems"] = json!(n);
                }
                let mut props = Map::new();
                let mut required = vec!["candidates"];
                if self.id == SchemaId::ElementCandidates {
                    props.insert("element_type".into(), json!({"type": "string"}));
                    required.push("element_type");
                }
                props.insert("candidates".into(), candidates);
                json!({"type": "object", "properties": props, "required": required, "additionalProperties": false})
            }
            SchemaId::EnhancedLine | SchemaId::IntegratedParagraph => json!({
                "type": "object",
                "properties": {"text": {"type": "string"}},
                "required": ["text"],
                "additionalProperties": false,
            }),
        }
    }

    /// Checks a payload against this schema.
    pub fn validate(&self, payload: &Value) -> Result<(), String> {
        let obj = payload.as_object().ok_or("payload is not an object")?;
        match self.id {
            SchemaId::ExtractedRequirements => {
                for f in RequirementField::ALL {
                    let list = obj.get(f.key()).ok_or_else(|| format!("missing field {}", f.key()))?;
                    string_list(list).map_err(|e| format!("{}: {e}", f.key()))?;
                }
                if let Some(extra) = obj.keys().find(|k| k.parse::<RequirementField>().is_err()) {
                    return Err(format!("unexpected field {extra}"));
                }
                Ok(())
            }
            SchemaId::RequirementCandidates | SchemaId::ElementCandidates => {
                if self.id == SchemaId::ElementCandidates {
                    obj.get("element_type").and_then(Value::as_str).ok_or("missing element_type")?;
                }
                let list = obj.get("candidates").and_then(Value::as_array).ok_or("missing candidates array")?;
                if let Some(n) = self.expected_len {
                    if list.len() != n {
                        return Err(format!("expected {n} candidates, got {}", list.len()));
                    }
                }
                for (i, c) in list.iter().enumerate() {
                    let value = c.get("value").and_then(Value::as_str).ok_or(format!("candidate {i}: no value"))?;
                    if value.trim().is_empty() {
                        return Err(format!("candidate {i}: empty value"));
                    }
                    c.get("reasoning").and_then(Value::as_str).ok_or(format!("candidate {i}: no reasoning"))?;
                    let fields = c.get("influencing_fields").ok_or(format!("candidate {i}: no influencing_fields"))?;
                    for name in string_list(fields).map_err(|e| format!("candidate {i}: {e}"))? {
                        name.parse::<RequirementField>().map_err(|e| format!("candidate {i}: {e}"))?;
                    }
                }
                Ok(())
            }
            SchemaId::EnhancedLine | SchemaId::IntegratedParagraph => {
                let text = obj.get("text").and_then(Value::as_str).ok_or("missing text")?;
                if text.trim().is_empty() {
                    return Err("empty text".into());
                }
                if self.id == SchemaId::EnhancedLine && text.contains('\n') {
                    return Err("enhanced line contains a newline".into());
                }
                Ok(())
            }
        }
    }
}

fn string_list(v: &Value) -> Result<Vec<&str>, String> {
    v.as_array()
        .ok_or("not a list")?
        .iter()
        .map(|s| s.as_str().ok_or_else(|| "list item is not a string".to_owned()))
        .collect()
}

/// One recommended value from a candidates payload.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Candidate {
    pub value: String,
    pub reasoning: String,
    pub influencing_fields: Vec<RequirementField>,
}

/// Typed views of validated payloads.
pub fn extracted_requirements(payload: &Value) -> BTreeMap<RequirementField, Vec<String>> {
    RequirementField::ALL
        .into_iter()
        .map(|f| {
            let items = payload[f.key()]
                .as_array()
                .map(|a| a.iter().filter_map(Value::as_str).map(str::to_owned).collect())
                .unwrap_or_default();
            (f, items)
        })
        .collect()
}

pub fn candidates(payload: &Value) -> Vec<Candidate> {
    payload["candidates"]
        .as_array()
        .map(|list| {
            list.iter()
                .map(|c| Candidate {
                    value: c["value"].as_str().unwrap_or_default().to_owned(),
                    reasoning: c["reasoning"].as_str().unwrap_or_default().to_owned(),
                    influencing_fields: c["influencing_fields"]
                        .as_array()
                        .map(|a| a.iter().filter_map(|f| f.as_str()?.parse().ok()).collect())
                        .unwrap_or_default(),
                })
                .collect()
        })
        .unwrap_or_default()
}

pub fn text(payload: &Value) -> String {
    payload["text"].as_str().unwrap_or_default().to_owned()
}
