//! The published schema must list exactly the keys the parser accepts.

use std::collections::BTreeSet;

use cavsim_core::ScenarioConfig;
use serde_json::Value;

fn schema() -> Value {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../docs/scenario.schema.json");
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn keys(v: &Value) -> BTreeSet<String> {
    v.as_object().unwrap().keys().cloned().collect()
}

#[test]
fn sections_and_fields_match_the_parser() {
    let schema = schema();
    let props = &schema["properties"];
    let defaults = serde_json::to_value(ScenarioConfig::default()).unwrap();
    assert_eq!(keys(props), keys(&defaults));
    for section in ["engine", "channel", "estimator", "dynamics", "spawns"] {
        let mut expected = keys(&defaults[section]);
        if section == "channel" {
            expected.insert("burst".into());
        }
        assert_eq!(keys(&props[section]["properties"]), expected, "{section}");
    }
    let intersection = keys(&defaults["intersections"][0]);
    assert_eq!(keys(&schema["$defs"]["intersection"]["properties"]), intersection);
}

#[test]
fn documented_defaults_parse_to_the_built_in_ones() {
    let schema = schema();
    let mut doc = serde_json::Map::new();
    for (section, body) in schema["properties"].as_object().unwrap() {
        if let Some(default) = body.get("default") {
            doc.insert(section.clone(), default.clone());
            continue;
        }
        let mut fields = serde_json::Map::new();
        for (name, field) in body["properties"].as_object().unwrap() {
            if let Some(default) = field.get("default") {
                fields.insert(name.clone(), default.clone());
            }
        }
        doc.insert(section.clone(), Value::Object(fields));
    }
    let parsed = ScenarioConfig::from_json_str(&Value::Object(doc).to_string()).unwrap();
    assert_eq!(parsed, ScenarioConfig::default());
}
