//! JSON Schemas for the on-disk formats, validated on load and before write.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use serde_json::Value;

pub static ANNOTATIONS: &str = include_str!("../../../docs/schemas/annotations.schema.json");
pub static VIDEO_META: &str = include_str!("../../../docs/schemas/video_meta.schema.json");
pub static DESCRIPTION_RECORD: &str = include_str!("../../../docs/schemas/description_record.schema.json");
pub static ACTION_RECORD: &str = include_str!("../../../docs/schemas/action_record.schema.json");
pub static MANIFEST: &str = include_str!("../../../docs/schemas/manifest.schema.json");
pub static EPISODE: &str = include_str!("../../../docs/schemas/episode.schema.json");

fn validator(schema: &'static str) -> Arc<jsonschema::Validator> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<jsonschema::Validator>>>> = OnceLock::new();
    let mut cache = CACHE.get_or_init(Default::default).lock().expect("schema cache poisoned");
    cache
        .entry(schema.as_ptr() as usize)
        .or_insert_with(|| {
            let value: Value = serde_json::from_str(schema).expect("bundled schema is valid JSON");
            Arc::new(jsonschema::validator_for(&value).expect("bundled schema compiles"))
        })
        .clone()
}

/// Every schema violation in `instance`, formatted as `path: message`.
pub fn violations(schema: &'static str, instance: &Value) -> Vec<String> {
    validator(schema)
        .iter_errors(instance)
        .map(|e| format!("{}: {}", e.instance_path, e))
        .collect()
}

pub fn check(schema: &'static str, instance: &Value) -> Result<(), String> {
    let errors = violations(schema, instance);
    if errors.is_empty() {
        Ok(())
    } else {
        Err(errors.join("; "))
    }
}
