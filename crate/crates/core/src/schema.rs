//! Static registry of every environment, agent, controller, critic and actor.

use serde::{Deserialize, Serialize};

use crate::params::{validate_block, ParamSpec, Violation};
use crate::{agents, env};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Environment,
    Agent,
    Controller,
    Critic,
    Actor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemaEntry {
    pub category: Category,
    pub class_name: String,
    pub params: Vec<ParamSpec>,
    pub doc: String,
}

/// The complete catalog, sorted by category then class name.
pub fn export_schema() -> Vec<SchemaEntry> {
    let mut out: Vec<SchemaEntry> = env::CLASSES
        .iter()
        .map(|c| SchemaEntry {
            category: Category::Environment,
            class_name: c.to_string(),
            params: env::class_params(c).expect("registered environment"),
            doc: env::class_doc(c).to_string(),
        })
        .collect();
    let classes = agents::AGENT_CLASSES
        .iter()
        .chain(&agents::CONTROLLER_CLASSES)
        .chain(&agents::CRITIC_CLASSES)
        .chain(&agents::ACTOR_CLASSES);
    for c in classes {
        out.push(SchemaEntry {
            category: agents::category(c).expect("registered class"),
            class_name: c.to_string(),
            params: agents::class_params(c).expect("registered class"),
            doc: agents::class_doc(c).to_string(),
        });
    }
    out.sort_by(|a, b| (a.category, &a.class_name).cmp(&(b.category, &b.class_name)));
    out
}

pub fn find_entry<'a>(schema: &'a [SchemaEntry], category: Category, class: &str) -> Option<&'a SchemaEntry> {
    schema.iter().find(|e| e.category == category && e.class_name == class)
}

/// Violations of `block` against `entry`. A `class` key, if present, must
/// name the entry.
pub fn validate(block: &crate::params::Block, entry: &SchemaEntry) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut rest = block.clone();
    if let Some(class) = rest.remove("class") {
        if class.as_str() != Some(entry.class_name.as_str()) {
            out.push(Violation {
                path: "class".into(),
                reason: format!("expected '{}', got {class}", entry.class_name),
            });
        }
    }
    validate_block(&rest, &entry.params, "", &mut out);
    out
}

/// The schema document served to clients.
pub fn schema_json() -> String {
    serde_json::to_string_pretty(&export_schema()).expect("schema serializes")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{defaults, ParamValue};

    fn entry(class: &str) -> SchemaEntry {
        export_schema().into_iter().find(|e| e.class_name == class).unwrap()
    }

    #[test]
    fn named_classes_present() {
        let s = export_schema();
        assert!(find_entry(&s, Category::Environment, "mountain-car").is_some());
        for c in ["sarsa", "q-learning", "double-q-learning"] {
            assert!(find_entry(&s, Category::Agent, c).is_some(), "{c}");
        }
    }

    #[test]
    fn defaults_self_validate() {
        for e in export_schema() {
            assert!(validate(&defaults(&e.params), &e).is_empty(), "{}", e.class_name);
        }
    }

    #[test]
    fn q_learning_examples() {
        let e = entry("q-learning");
        let mut b = defaults(&e.params);
        b.insert("alpha".into(), ParamValue::Number(0.5));
        b.insert("gamma".into(), ParamValue::Number(0.9));
        assert!(validate(&b, &e).is_empty());

        b.insert("alpha".into(), ParamValue::Number(-1.0));
        let v = validate(&b, &e);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].path, "alpha");

        b.insert("alpha".into(), ParamValue::Number(0.5));
        b.insert("alhpa".into(), ParamValue::Number(0.5));
        let v = validate(&b, &e);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].reason, "unknown parameter");
    }

    #[test]
    fn roundtrip_and_stability() {
        let text = schema_json();
        let back: Vec<SchemaEntry> = serde_json::from_str(&text).unwrap();
        assert_eq!(back, export_schema());
        assert_eq!(text, schema_json());
    }

    #[test]
    fn class_unique_within_category() {
        let s = export_schema();
        for w in s.windows(2) {
            assert_ne!((w[0].category, &w[0].class_name), (w[1].category, &w[1].class_name));
        }
    }

    #[test]
    fn spec_invariants() {
        fn check(specs: &[ParamSpec]) {
            for p in specs {
                assert!(p.check_value(&p.default).is_ok(), "{}", p.name);
                if p.kind == crate::params::ParamKind::Enum {
                    let choices = p.choices.as_ref().unwrap();
                    assert!(!choices.is_empty());
                    for (k, kids) in p.children.iter().flatten() {
                        assert!(choices.contains(k));
                        check(kids);
                    }
                } else {
                    check(p.nested());
                }
            }
        }
        for e in export_schema() {
            check(&e.params);
        }
    }
}
