//! Parameter values, parameter specifications and block validation.
//!
//! A block is a map from parameter name to [`ParamValue`]. Conditional
//! sub-parameters of an enum parameter live next to it in the same block,
//! so `agent/critic = "td-lambda"` and `agent/lambda = 0.9` are siblings.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::{Number, Value};

/// A named map of parameters. Keys are sorted, which keeps serialization canonical.
pub type Block = BTreeMap<String, ParamValue>;

/// One parameter value.
#[derive(Debug, Clone, PartialEq)]
pub enum ParamValue {
    Number(f64),
    Integer(i64),
    Bool(bool),
    Enum(String),
    Block(Block),
}

impl ParamValue {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            ParamValue::Number(x) => Some(*x),
            ParamValue::Integer(i) => Some(*i as f64),
            _ => None,
        }
    }

    pub fn as_i64(&self) -> Option<i64> {
        match self {
            ParamValue::Integer(i) => Some(*i),
            _ => None,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self {
            ParamValue::Bool(b) => Some(*b),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            ParamValue::Enum(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_block(&self) -> Option<&Block> {
        match self {
            ParamValue::Block(b) => Some(b),
            _ => None,
        }
    }

    /// Plain JSON form. Floats always carry a fractional part or exponent so
    /// that the kind survives a round trip.
    pub fn to_json(&self) -> Value {
        match self {
            ParamValue::Number(x) => Number::from_f64(*x).map(Value::Number).unwrap_or(Value::Null),
            ParamValue::Integer(i) => Value::from(*i),
            ParamValue::Bool(b) => Value::Bool(*b),
            ParamValue::Enum(s) => Value::String(s.clone()),
            ParamValue::Block(b) => Value::Object(
                b.iter().map(|(k, v)| (k.clone(), v.to_json())).collect(),
            ),
        }
    }

    /// Infers the kind from the JSON shape alone.
    pub fn from_json(v: &Value) -> Option<ParamValue> {
        Some(match v {
            Value::Bool(b) => ParamValue::Bool(*b),
            Value::Number(n) => {
                if let Some(i) = n.as_i64() {
                    ParamValue::Integer(i)
                } else {
                    ParamValue::Number(n.as_f64()?)
                }
            }
            Value::String(s) => ParamValue::Enum(s.clone()),
            Value::Object(m) => {
                let mut b = Block::new();
                for (k, v) in m {
                    b.insert(k.clone(), ParamValue::from_json(v)?);
                }
                ParamValue::Block(b)
            }
            Value::Null | Value::Array(_) => return None,
        })
    }

    /// Canonical compact serialization, used as a group key in reports.
    pub fn canonical(&self) -> String {
        serde_json::to_string(&self.to_json()).expect("json values always serialize")
    }
}

impl fmt::Display for ParamValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamValue::Enum(s) => f.write_str(s),
            other => f.write_str(&other.canonical()),
        }
    }
}

impl Serialize for ParamValue {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_json().serialize(s)
    }
}

impl<'de> Deserialize<'de> for ParamValue {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = Value::deserialize(d)?;
        ParamValue::from_json(&v)
            .ok_or_else(|| serde::de::Error::custom("null and arrays are not parameter values"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamKind {
    Float,
    Int,
    Bool,
    Enum,
    Child,
}

/// Declaration of one parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub kind: ParamKind,
    pub default: ParamValue,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub choices: Option<Vec<String>>,
    /// Conditional sub-parameters, keyed by enum choice (enum kind) or the
    /// nested parameter list under the key `""` (child kind).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub children: Option<BTreeMap<String, Vec<ParamSpec>>>,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub doc: String,
}

impl ParamSpec {
    pub fn float(name: &str, default: f64, doc: &str) -> Self {
        ParamSpec {
            name: name.into(),
            kind: ParamKind::Float,
            default: ParamValue::Number(default),
            min: None,
            max: None,
            choices: None,
            children: None,
            doc: doc.into(),
        }
    }

    pub fn int(name: &str, default: i64, doc: &str) -> Self {
        ParamSpec {
            kind: ParamKind::Int,
            default: ParamValue::Integer(default),
            ..ParamSpec::float(name, 0.0, doc)
        }
    }

    pub fn boolean(name: &str, default: bool, doc: &str) -> Self {
        ParamSpec {
            kind: ParamKind::Bool,
            default: ParamValue::Bool(default),
            ..ParamSpec::float(name, 0.0, doc)
        }
    }

    pub fn choice(name: &str, default: &str, choices: &[&str], doc: &str) -> Self {
        ParamSpec {
            kind: ParamKind::Enum,
            default: ParamValue::Enum(default.into()),
            choices: Some(choices.iter().map(|c| c.to_string()).collect()),
            ..ParamSpec::float(name, 0.0, doc)
        }
    }

    pub fn child(name: &str, params: Vec<ParamSpec>, doc: &str) -> Self {
        let default = ParamValue::Block(defaults(&params));
        let mut children = BTreeMap::new();
        children.insert(String::new(), params);
        ParamSpec {
            kind: ParamKind::Child,
            default,
            children: Some(children),
            ..ParamSpec::float(name, 0.0, doc)
        }
    }

    pub fn range(mut self, min: f64, max: f64) -> Self {
        self.min = Some(min);
        self.max = Some(max);
        self
    }

    pub fn at_least(mut self, min: f64) -> Self {
        self.min = Some(min);
        self
    }

    pub fn with_children(mut self, choice: &str, params: Vec<ParamSpec>) -> Self {
        self.children
            .get_or_insert_with(BTreeMap::new)
            .insert(choice.into(), params);
        self
    }

    /// Nested parameter list of a child-kind spec.
    pub fn nested(&self) -> &[ParamSpec] {
        self.children
            .as_ref()
            .and_then(|c| c.get(""))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    /// Conditional parameters activated by `choice`.
    pub fn conditional(&self, choice: &str) -> &[ParamSpec] {
        if self.kind != ParamKind::Enum {
            return &[];
        }
        self.children
            .as_ref()
            .and_then(|c| c.get(choice))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    /// Checks a single value (not recursing into child blocks).
    pub fn check_value(&self, v: &ParamValue) -> Result<(), String> {
        match (self.kind, v) {
            (ParamKind::Float, ParamValue::Number(_) | ParamValue::Integer(_))
            | (ParamKind::Int, ParamValue::Integer(_)) => {
                let x = v.as_f64().unwrap_or(f64::NAN);
                if !x.is_finite() {
                    return Err("value is not finite".into());
                }
                if let Some(lo) = self.min {
                    if x < lo {
                        return Err(format!("value {x} below minimum {lo}"));
                    }
                }
                if let Some(hi) = self.max {
                    if x > hi {
                        return Err(format!("value {x} above maximum {hi}"));
                    }
                }
                Ok(())
            }
            (ParamKind::Bool, ParamValue::Bool(_)) => Ok(()),
            (ParamKind::Enum, ParamValue::Enum(tag)) => {
                let choices = self.choices.as_deref().unwrap_or(&[]);
                if choices.iter().any(|c| c == tag) {
                    Ok(())
                } else {
                    Err(format!("'{tag}' is not one of [{}]", choices.join(", ")))
                }
            }
            (ParamKind::Child, ParamValue::Block(_)) => Ok(()),
            (kind, _) => Err(format!("type mismatch: expected {kind:?}").to_lowercase()),
        }
    }

    /// Coerces an integer literal into a float for float-kind parameters.
    pub fn coerce(&self, v: ParamValue) -> ParamValue {
        match (self.kind, v) {
            (ParamKind::Float, ParamValue::Integer(i)) => ParamValue::Number(i as f64),
            (_, v) => v,
        }
    }
}

/// One validation failure.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub path: String,
    pub reason: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.reason)
    }
}

pub(crate) fn join_path(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}/{name}")
    }
}

/// All-defaults block for a parameter list, with the conditional children
/// of each enum's default choice.
pub fn defaults(specs: &[ParamSpec]) -> Block {
    let mut b = Block::new();
    for spec in specs {
        b.insert(spec.name.clone(), spec.default.clone());
        if let ParamValue::Enum(choice) = &spec.default {
            for c in spec.conditional(choice) {
                b.entry(c.name.clone()).or_insert_with(|| c.default.clone());
            }
        }
    }
    b
}

/// Finds the declaration for `key` among `specs` and their conditional children.
pub fn find_spec<'a>(specs: &'a [ParamSpec], key: &str) -> Option<&'a ParamSpec> {
    specs.iter().find(|s| s.name == key).or_else(|| {
        specs
            .iter()
            .filter_map(|s| s.children.as_ref().filter(|_| s.kind == ParamKind::Enum))
            .flat_map(|c| c.values().flatten())
            .find(|s| s.name == key)
    })
}

/// Validates `block` against `specs`, appending violations with paths rooted at `prefix`.
///
/// Keys declared only as conditional children of an inactive choice are
/// tolerated; unknown keys are violations; missing required parameters are
/// violations.
pub fn validate_block(block: &Block, specs: &[ParamSpec], prefix: &str, out: &mut Vec<Violation>) {
    for (key, value) in block {
        let path = join_path(prefix, key);
        let Some(spec) = find_spec(specs, key) else {
            out.push(Violation { path, reason: "unknown parameter".into() });
            continue;
        };
        if let Err(reason) = spec.check_value(value) {
            out.push(Violation { path, reason });
            continue;
        }
        if let (ParamKind::Child, ParamValue::Block(inner)) = (spec.kind, value) {
            validate_block(inner, spec.nested(), &path, out);
        }
    }
    let mut required: Vec<&ParamSpec> = specs.iter().collect();
    for spec in specs {
        if let Some(ParamValue::Enum(choice)) = block.get(&spec.name) {
            required.extend(spec.conditional(choice));
        }
    }
    for spec in required {
        if !block.contains_key(&spec.name) {
            out.push(Violation {
                path: join_path(prefix, &spec.name),
                reason: "missing parameter".into(),
            });
        }
    }
}
