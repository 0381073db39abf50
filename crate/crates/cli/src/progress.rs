//! Line-delimited JSON progress events on standard error.

use serde_json::{json, Value};

pub fn emit(stage: &str, event: &str, fields: Value) {
    let mut obj = json!({ "stage": stage, "event": event });
    if let (Some(dst), Some(src)) = (obj.as_object_mut(), fields.as_object()) {
        for (k, v) in src {
            dst.insert(k.clone(), v.clone());
        }
    }
    eprintln!("{obj}");
}

/// Runs a stage closure, timing it and emitting start/done events.
pub fn stage<T, E>(
    name: &str,
    f: impl FnOnce() -> Result<T, E>,
) -> Result<(T, u128), E> {
    emit(name, "start", json!({}));
    let t0 = std::time::Instant::now();
    let out = f()?;
    let ms = t0.elapsed().as_millis();
    emit(name, "done", json!({ "ms": ms }));
    Ok((out, ms))
}
