//! Experiment descriptors, fork expansion and unit resolution.
//!
//! A descriptor is a JSON document (`.simx.json`):
//!
//! ```json
//! {
//!   "name": "mc-sweep",
//!   "environment": {"class": "mountain-car"},
//!   "agent": {"class": "q-learning", "alpha": {"$fork": [0.1, 0.5]}},
//!   "run": {"num_episodes": 100, "eval_every": 10, "episode_max_steps": 1000, "seed": 7}
//! }
//! ```
//!
//! Any leaf may be replaced by `{"$fork": [v1, v2, ...]}`. Forks are ordered
//! by their position in the document; the first varies slowest during
//! expansion. Canonical serialization sorts keys, so when that would reorder
//! the forks an explicit top-level `fork_order` list is written.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::params::{find_spec, join_path, validate_block, Block, ParamKind, ParamSpec, ParamValue, Violation};
use crate::schema::Category;
use crate::{agents, env};

pub const FORK_KEY: &str = "$fork";
pub const MAX_UNITS: u128 = 1_000_000;
pub const DESCRIPTOR_EXTENSION: &str = ".simx.json";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DescriptorError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax { line: usize, column: usize, message: String },
    #[error("invalid descriptor:\n{}", list(.0))]
    Invalid(Vec<Violation>),
    #[error("missing assignment for fork path '{0}'")]
    MissingAssignment(String),
    #[error("assignment for '{0}', which is not a fork path")]
    UnknownAssignment(String),
    #[error("fork expansion yields {0} units, more than the limit of 1000000")]
    TooManyUnits(u128),
}

fn list(v: &[Violation]) -> String {
    v.iter().map(|x| format!("  {x}")).collect::<Vec<_>>().join("\n")
}

impl DescriptorError {
    /// The error as a list of violations, for reporting.
    pub fn violations(&self) -> Vec<Violation> {
        match self {
            DescriptorError::Invalid(v) => v.clone(),
            DescriptorError::Syntax { .. } => vec![Violation { path: String::new(), reason: self.to_string() }],
            DescriptorError::MissingAssignment(p) | DescriptorError::UnknownAssignment(p) => {
                vec![Violation { path: p.clone(), reason: self.to_string() }]
            }
            DescriptorError::TooManyUnits(_) => vec![Violation { path: String::new(), reason: self.to_string() }],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunSettings {
    pub num_episodes: u64,
    pub eval_every: u64,
    pub episode_max_steps: u64,
    pub seed: u64,
    /// Greedy episodes per evaluation point.
    pub eval_episodes: u64,
    /// Log every n-th step (the terminal step is always logged).
    pub log_every: u64,
}

impl Default for RunSettings {
    fn default() -> Self {
        RunSettings { num_episodes: 100, eval_every: 10, episode_max_steps: 1000, seed: 0, eval_episodes: 1, log_every: 1 }
    }
}

impl RunSettings {
    pub fn params() -> Vec<ParamSpec> {
        let d = Self::default();
        vec![
            ParamSpec::int("num_episodes", d.num_episodes as i64, "Training episodes").at_least(1.0),
            ParamSpec::int("eval_every", d.eval_every as i64, "Training episodes between evaluations").at_least(1.0),
            ParamSpec::int("episode_max_steps", d.episode_max_steps as i64, "Step limit per episode").at_least(1.0),
            ParamSpec::int("seed", d.seed as i64, "Experiment seed").at_least(0.0),
            ParamSpec::int("eval_episodes", d.eval_episodes as i64, "Greedy episodes per evaluation").at_least(1.0),
            ParamSpec::int("log_every", d.log_every as i64, "Step decimation of the episode log").at_least(1.0),
        ]
    }

    /// Episodes in the full schedule, training and evaluation.
    pub fn total_episodes(&self) -> u64 {
        self.num_episodes + (self.num_episodes / self.eval_every) * self.eval_episodes
    }

    fn get(&self, key: &str) -> Option<u64> {
        Some(match key {
            "num_episodes" => self.num_episodes,
            "eval_every" => self.eval_every,
            "episode_max_steps" => self.episode_max_steps,
            "seed" => self.seed,
            "eval_episodes" => self.eval_episodes,
            "log_every" => self.log_every,
            _ => return None,
        })
    }

    fn set(&mut self, key: &str, x: u64) -> bool {
        let slot = match key {
            "num_episodes" => &mut self.num_episodes,
            "eval_every" => &mut self.eval_every,
            "episode_max_steps" => &mut self.episode_max_steps,
            "seed" => &mut self.seed,
            "eval_episodes" => &mut self.eval_episodes,
            "log_every" => &mut self.log_every,
            _ => return false,
        };
        *slot = x;
        true
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForkedParameter {
    pub path: String,
    pub values: Vec<ParamValue>,
}

/// A parsed descriptor. Fork paths hold their first value in the blocks so
/// that the blocks are always complete.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentDescriptor {
    pub name: String,
    pub environment: Block,
    pub agent: Block,
    pub run: RunSettings,
    pub forks: Vec<ForkedParameter>,
}

impl ExperimentDescriptor {
    pub fn environment_class(&self) -> &str {
        self.environment.get("class").and_then(ParamValue::as_str).unwrap_or("")
    }

    pub fn agent_class(&self) -> &str {
        self.agent.get("class").and_then(ParamValue::as_str).unwrap_or("")
    }

    pub fn unit_count(&self) -> u128 {
        self.forks.iter().map(|f| f.values.len() as u128).product()
    }

    /// Value at a slash-separated path, e.g. `agent/alpha` or `run/seed`.
    pub fn get(&self, path: &str) -> Option<ParamValue> {
        let (head, rest) = path.split_once('/')?;
        match head {
            "run" => self.run.get(rest).map(|x| ParamValue::Integer(x as i64)),
            "environment" => lookup(&self.environment, rest).cloned(),
            "agent" => lookup(&self.agent, rest).cloned(),
            _ => None,
        }
    }

    fn set(&mut self, path: &str, v: ParamValue) -> bool {
        let Some((head, rest)) = path.split_once('/') else { return false };
        match head {
            "run" => match v.as_i64() {
                Some(x) if x >= 0 => self.run.set(rest, x as u64),
                _ => false,
            },
            "environment" => store(&mut self.environment, rest, v),
            "agent" => store(&mut self.agent, rest, v),
            _ => false,
        }
    }
}

fn lookup<'a>(b: &'a Block, path: &str) -> Option<&'a ParamValue> {
    match path.split_once('/') {
        None => b.get(path),
        Some((head, rest)) => lookup(b.get(head)?.as_block()?, rest),
    }
}

fn store(b: &mut Block, path: &str, v: ParamValue) -> bool {
    match path.split_once('/') {
        None => b.insert(path.to_string(), v).is_some(),
        Some((head, rest)) => match b.get_mut(head) {
            Some(ParamValue::Block(inner)) => store(inner, rest, v),
            _ => false,
        },
    }
}

/// One point of the fork product.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentalUnit {
    pub unit_id: String,
    pub index: u64,
    pub assignments: BTreeMap<String, ParamValue>,
    pub resolved: ExperimentDescriptor,
    pub seed: u64,
}

/// Reference splitmix64 finalizer.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn unit_seed(descriptor_seed: u64, index: u64) -> u64 {
    splitmix64(descriptor_seed ^ index)
}

/// `name/000042`; six digits cover the unit limit.
pub fn unit_id(name: &str, index: u64) -> String {
    format!("{name}/{index:06}")
}

// ---------------------------------------------------------------------------
// parsing

fn syntax(e: &serde_json::Error) -> DescriptorError {
    DescriptorError::Syntax { line: e.line(), column: e.column(), message: e.to_string() }
}

pub fn parse_descriptor(text: &str) -> Result<ExperimentDescriptor, DescriptorError> {
    let value: Value = serde_json::from_str(text).map_err(|e| syntax(&e))?;
    from_value(&value)
}

struct Parser {
    violations: Vec<Violation>,
    forks: Vec<ForkedParameter>,
}

impl Parser {
    fn bad(&mut self, path: &str, reason: impl Into<String>) {
        self.violations.push(Violation { path: path.to_string(), reason: reason.into() });
    }

    fn leaf(&mut self, path: &str, v: &Value) -> Option<ParamValue> {
        match v {
            Value::Array(_) => {
                self.bad(path, "arrays are only allowed inside {\"$fork\": [...]}");
                None
            }
            Value::Null => {
                self.bad(path, "null is not a parameter value");
                None
            }
            other => ParamValue::from_json(other).or_else(|| {
                self.bad(path, "unsupported value");
                None
            }),
        }
    }

    /// Converts a JSON object into a block, lifting forks out.
    fn block(&mut self, path: &str, obj: &Map<String, Value>) -> Block {
        let mut b = Block::new();
        for (k, v) in obj {
            let p = join_path(path, k);
            if let Some(first) = self.value(&p, v) {
                b.insert(k.clone(), first);
            }
        }
        b
    }

    fn value(&mut self, path: &str, v: &Value) -> Option<ParamValue> {
        let Value::Object(obj) = v else { return self.leaf(path, v) };
        let Some(fork) = obj.get(FORK_KEY) else {
            return Some(ParamValue::Block(self.block(path, obj)));
        };
        if obj.len() != 1 {
            self.bad(path, "a fork object may only contain \"$fork\"");
            return None;
        }
        let Value::Array(items) = fork else {
            self.bad(path, "\"$fork\" must be a list of values");
            return None;
        };
        if items.is_empty() {
            self.bad(path, "fork value list is empty");
            return None;
        }
        let mut values = Vec::with_capacity(items.len());
        for (i, item) in items.iter().enumerate() {
            if item.is_object() {
                self.bad(&format!("{path}[{i}]"), "child blocks cannot be forked");
                return None;
            }
            values.push(self.leaf(&format!("{path}[{i}]"), item)?);
        }
        let first = values[0].clone();
        self.forks.push(ForkedParameter { path: path.to_string(), values });
        Some(first)
    }
}

/// Resolves the parameter declaration at `rel` inside a component block.
fn spec_at<'a>(specs: &'a [ParamSpec], rel: &str) -> Option<&'a ParamSpec> {
    match rel.split_once('/') {
        None => find_spec(specs, rel),
        Some((head, rest)) => {
            let s = find_spec(specs, head)?;
            (s.kind == ParamKind::Child).then(|| spec_at(s.nested(), rest)).flatten()
        }
    }
}

/// Fills defaults recursively. Enum parameters get the conditional children
/// of their current value and of every value forked at their path.
fn fill_defaults(b: &mut Block, specs: &[ParamSpec], path: &str, forks: &[ForkedParameter]) {
    for spec in specs {
        let p = join_path(path, &spec.name);
        let v = b.entry(spec.name.clone()).or_insert_with(|| spec.default.clone());
        match (spec.kind, v) {
            (ParamKind::Child, ParamValue::Block(inner)) => fill_defaults(inner, spec.nested(), &p, forks),
            (ParamKind::Enum, ParamValue::Enum(choice)) => {
                let mut choices = BTreeSet::from([choice.clone()]);
                for f in forks.iter().filter(|f| f.path == p) {
                    choices.extend(f.values.iter().filter_map(|x| x.as_str().map(str::to_string)));
                }
                for c in choices {
                    for child in spec.conditional(&c) {
                        b.entry(child.name.clone()).or_insert_with(|| child.default.clone());
                    }
                }
            }
            _ => {}
        }
    }
}

/// Integer literals given for float parameters become floats.
fn coerce_block(b: &mut Block, specs: &[ParamSpec]) {
    for (k, v) in b.iter_mut() {
        if let Some(spec) = find_spec(specs, k) {
            if let ParamValue::Block(inner) = v {
                coerce_block(inner, spec.nested());
            } else {
                *v = spec.coerce(v.clone());
            }
        }
    }
}

fn component(p: &mut Parser, obj: &Map<String, Value>, key: &str, category: Category) -> Option<(Block, Vec<ParamSpec>)> {
    let mut block = p.block(key, obj);
    let class_path = join_path(key, "class");
    let class = match block.get("class") {
        Some(ParamValue::Enum(c)) => c.clone(),
        Some(_) => {
            p.bad(&class_path, "type mismatch: expected a class name");
            return None;
        }
        None => {
            p.bad(&class_path, "missing parameter");
            return None;
        }
    };
    if p.forks.iter().any(|f| f.path == class_path) {
        p.bad(&class_path, "the class of a component cannot be forked");
        return None;
    }
    let specs = match category {
        Category::Environment => env::class_params(&class).ok(),
        _ => agents::runnable_classes()
            .any(|c| c == class)
            .then(|| agents::class_params(&class).ok())
            .flatten(),
    };
    let Some(specs) = specs else {
        p.bad(&class_path, format!("unknown parameter path: no {key} class '{class}'"));
        return None;
    };
    block.remove("class");
    coerce_block(&mut block, &specs);
    let forks = p.forks.clone();
    fill_defaults(&mut block, &specs, key, &forks);
    for f in p.forks.iter_mut().filter(|f| f.path.starts_with(&format!("{key}/"))) {
        let rel = &f.path[key.len() + 1..];
        match spec_at(&specs, rel) {
            None => {}
            Some(s) if s.kind == ParamKind::Child => p.violations.push(Violation {
                path: f.path.clone(),
                reason: "child blocks cannot be forked".into(),
            }),
            Some(s) => {
                for (i, v) in f.values.iter_mut().enumerate() {
                    *v = s.coerce(v.clone());
                    if let Err(reason) = s.check_value(v) {
                        p.violations.push(Violation { path: format!("{}[{i}]", f.path), reason });
                    }
                }
            }
        }
    }
    let mut violations = Vec::new();
    validate_block(&block, &specs, key, &mut violations);
    // the first fork value already sits in the block; report it once
    violations.retain(|v| {
        !p.forks.iter().any(|f| {
            f.path == v.path && v.path.strip_prefix(&format!("{key}/")).and_then(|rel| spec_at(&specs, rel)).is_some()
        })
    });
    p.violations.extend(violations);
    block.insert("class".into(), ParamValue::Enum(class));
    Some((block, specs))
}

fn run_settings(p: &mut Parser, obj: &Map<String, Value>) -> RunSettings {
    let mut run = RunSettings::default();
    let specs = RunSettings::params();
    for (k, v) in obj {
        let path = join_path("run", k);
        let Some(spec) = find_spec(&specs, k) else {
            p.bad(&path, "unknown parameter");
            continue;
        };
        if let Value::Object(o) = v {
            if o.contains_key(FORK_KEY) {
                if let Some(first) = p.value(&path, v) {
                    let f = p.forks.last().expect("fork just recorded").clone();
                    for (i, x) in f.values.iter().enumerate() {
                        if let Err(reason) = spec.check_value(x) {
                            p.bad(&format!("{path}[{i}]"), reason);
                        }
                    }
                    if let Some(x) = first.as_i64().filter(|&x| x >= 0) {
                        run.set(k, x as u64);
                    }
                }
                continue;
            }
        }
        let x = match (k.as_str(), v) {
            ("seed", Value::Number(n)) => n.as_u64(),
            (_, Value::Number(n)) => n.as_u64().filter(|&x| x >= 1),
            _ => None,
        };
        match x {
            Some(x) => {
                run.set(k, x);
            }
            None => p.bad(&path, format!("type mismatch: expected integer >= {}", spec.min.unwrap_or(0.0))),
        }
    }
    run
}

fn valid_name(name: &str) -> bool {
    !name.is_empty()
        && name != "."
        && name != ".."
        && name.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
}

/// Builds a descriptor from an already-parsed JSON value.
pub fn from_value(value: &Value) -> Result<ExperimentDescriptor, DescriptorError> {
    let mut p = Parser { violations: Vec::new(), forks: Vec::new() };
    let Value::Object(root) = value else {
        return Err(DescriptorError::Invalid(vec![Violation { path: String::new(), reason: "descriptor must be a JSON object".into() }]));
    };
    for k in root.keys() {
        if !matches!(k.as_str(), "name" | "environment" | "agent" | "run" | "fork_order") {
            p.bad(k, "unknown parameter");
        }
    }
    let name = match root.get("name") {
        Some(Value::String(s)) if valid_name(s) => s.clone(),
        Some(_) => {
            p.bad("name", "must be a non-empty string of letters, digits, '-', '_' or '.'");
            String::new()
        }
        None => {
            p.bad("name", "missing parameter");
            String::new()
        }
    };
    let (mut environment, mut agent, mut run) = (None, None, None);
    for (k, v) in root {
        match (k.as_str(), v) {
            ("environment", Value::Object(o)) => environment = component(&mut p, o, k, Category::Environment),
            ("agent", Value::Object(o)) => agent = component(&mut p, o, k, Category::Agent),
            ("run", Value::Object(o)) => run = Some(run_settings(&mut p, o)),
            ("environment" | "agent" | "run", _) => p.bad(k, "must be an object"),
            _ => {}
        }
    }
    for key in ["environment", "agent"] {
        if !root.contains_key(key) {
            p.bad(key, "missing parameter");
        }
    }
    let run = run.unwrap_or_default();
    if let Some(order) = root.get("fork_order") {
        reorder_forks(&mut p, order);
    }
    if !p.violations.is_empty() {
        return Err(DescriptorError::Invalid(p.violations));
    }
    let (environment, _) = environment.expect("no violations");
    let (agent, _) = agent.expect("no violations");
    let d = ExperimentDescriptor { name, environment, agent, run, forks: p.forks };
    if d.unit_count() > MAX_UNITS {
        return Err(DescriptorError::TooManyUnits(d.unit_count()));
    }
    Ok(d)
}

fn reorder_forks(p: &mut Parser, order: &Value) {
    let paths: Option<Vec<&str>> = order.as_array().and_then(|a| a.iter().map(Value::as_str).collect());
    let Some(paths) = paths else {
        p.bad("fork_order", "must be a list of fork paths");
        return;
    };
    let declared: BTreeSet<&str> = p.forks.iter().map(|f| f.path.as_str()).collect();
    let listed: BTreeSet<&str> = paths.iter().copied().collect();
    if listed != declared || listed.len() != paths.len() {
        p.bad("fork_order", "must list every fork path exactly once");
        return;
    }
    let mut sorted = Vec::with_capacity(paths.len());
    for path in paths {
        let i = p.forks.iter().position(|f| f.path == path).expect("checked above");
        sorted.push(p.forks.remove(i));
    }
    p.forks = sorted;
}

// ---------------------------------------------------------------------------
// serialization

fn block_json(b: &Block, path: &str, forks: &[ForkedParameter]) -> Value {
    let mut m = Map::new();
    for (k, v) in b {
        let p = join_path(path, k);
        let out = if let Some(f) = forks.iter().find(|f| f.path == p) {
            let mut fork = Map::new();
            fork.insert(FORK_KEY.into(), Value::Array(f.values.iter().map(ParamValue::to_json).collect()));
            Value::Object(fork)
        } else if let ParamValue::Block(inner) = v {
            block_json(inner, &p, forks)
        } else {
            v.to_json()
        };
        m.insert(k.clone(), out);
    }
    Value::Object(m)
}

pub fn to_value(d: &ExperimentDescriptor) -> Value {
    let mut run = Map::new();
    for spec in RunSettings::params() {
        let p = join_path("run", &spec.name);
        let x = d.run.get(&spec.name).expect("declared run key");
        let v = match d.forks.iter().find(|f| f.path == p) {
            Some(f) => {
                let mut fork = Map::new();
                fork.insert(FORK_KEY.into(), Value::Array(f.values.iter().map(ParamValue::to_json).collect()));
                Value::Object(fork)
            }
            None => Value::from(x),
        };
        run.insert(spec.name.clone(), v);
    }
    let mut root = Map::new();
    root.insert("name".into(), Value::String(d.name.clone()));
    root.insert("environment".into(), block_json(&d.environment, "environment", &d.forks));
    root.insert("agent".into(), block_json(&d.agent, "agent", &d.forks));
    root.insert("run".into(), Value::Object(run));
    let paths: Vec<&str> = d.forks.iter().map(|f| f.path.as_str()).collect();
    if paths.windows(2).any(|w| w[0] > w[1]) {
        root.insert("fork_order".into(), Value::from(paths));
    }
    Value::Object(root)
}

/// Recursively sorts object keys.
pub fn sorted(v: &Value) -> Value {
    match v {
        Value::Object(m) => {
            let mut keys: Vec<&String> = m.keys().collect();
            keys.sort();
            Value::Object(keys.into_iter().map(|k| (k.clone(), sorted(&m[k]))).collect())
        }
        Value::Array(a) => Value::Array(a.iter().map(sorted).collect()),
        other => other.clone(),
    }
}

/// Pretty JSON with sorted keys, LF line endings and a trailing newline.
pub fn canonical_json(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(&sorted(v)).expect("JSON values serialize");
    s.push('\n');
    s
}

pub fn serialize_descriptor(d: &ExperimentDescriptor) -> String {
    canonical_json(&to_value(d))
}

impl Serialize for ExperimentDescriptor {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        sorted(&to_value(self)).serialize(s)
    }
}

impl<'de> Deserialize<'de> for ExperimentDescriptor {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = Value::deserialize(d)?;
        from_value(&v).map_err(serde::de::Error::custom)
    }
}

impl fmt::Display for ExperimentDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&serialize_descriptor(self))
    }
}

// ---------------------------------------------------------------------------
// expansion

/// Substitutes one value per fork path. Fails on a missing or extra path.
pub fn resolve_unit(
    d: &ExperimentDescriptor,
    assignments: &BTreeMap<String, ParamValue>,
) -> Result<ExperimentDescriptor, DescriptorError> {
    for path in assignments.keys() {
        if !d.forks.iter().any(|f| &f.path == path) {
            return Err(DescriptorError::UnknownAssignment(path.clone()));
        }
    }
    let mut out = d.clone();
    out.forks.clear();
    for f in &d.forks {
        let v = assignments
            .get(&f.path)
            .ok_or_else(|| DescriptorError::MissingAssignment(f.path.clone()))?;
        if !out.set(&f.path, v.clone()) {
            return Err(DescriptorError::UnknownAssignment(f.path.clone()));
        }
    }
    Ok(out)
}

/// Fork value indices of unit `index`, first fork most significant.
pub fn fork_indices(d: &ExperimentDescriptor, mut index: u64) -> Vec<usize> {
    let mut idx = vec![0; d.forks.len()];
    for (slot, f) in idx.iter_mut().zip(&d.forks).rev() {
        let n = f.values.len() as u64;
        *slot = (index % n) as usize;
        index /= n;
    }
    idx
}

pub fn expand_forks(d: &ExperimentDescriptor) -> Result<Vec<ExperimentalUnit>, DescriptorError> {
    let count = d.unit_count();
    if count > MAX_UNITS {
        return Err(DescriptorError::TooManyUnits(count));
    }
    (0..count as u64)
        .map(|index| {
            let assignments: BTreeMap<String, ParamValue> = fork_indices(d, index)
                .into_iter()
                .zip(&d.forks)
                .map(|(i, f)| (f.path.clone(), f.values[i].clone()))
                .collect();
            Ok(ExperimentalUnit {
                unit_id: unit_id(&d.name, index),
                index,
                resolved: resolve_unit(d, &assignments)?,
                assignments,
                seed: unit_seed(d.run.seed, index),
            })
        })
        .collect()
}
