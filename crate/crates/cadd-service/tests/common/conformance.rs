//! Replays recorded request/response exchanges against the router.
//!
//! Expected bodies match exactly, with these placeholders: `"<string>"`,
//! `"<number>"`, `"<bool>"`, `"<array>"`, `"<object>"` and `"<any>"`. A string
//! that is exactly `"{{name}}"` stands for a value captured by an earlier
//! step; `{{name}}` inside a longer string is replaced textually.

use std::collections::HashMap;
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::Request;
use axum::Router;

use super::{multipart, png, raster, send, BOUNDARY};
use serde::Deserialize;
use serde_json::Value;

#[derive(Deserialize)]
pub struct Suite {
    pub steps: Vec<Step>,
}

#[derive(Deserialize)]
pub struct Step {
    pub name: String,
    request: RequestSpec,
    response: ResponseSpec,
    #[serde(default)]
    poll: Option<Poll>,
    #[serde(default)]
    capture: HashMap<String, String>,
}

#[derive(Deserialize)]
struct RequestSpec {
    method: String,
    path: String,
    #[serde(default)]
    json: Option<Value>,
    #[serde(default)]
    raw: Option<String>,
    #[serde(default)]
    multipart: Option<MultipartSpec>,
}

#[derive(Deserialize)]
struct MultipartSpec {
    manifest: Value,
    #[serde(default)]
    raster: Option<Synthetic>,
    #[serde(default)]
    tiles: Option<Synthetic>,
}

/// Pixels generated by the test helpers rather than stored in the fixture.
#[derive(Deserialize)]
struct Synthetic {
    width: u32,
    height: u32,
    seed: u32,
    #[serde(default)]
    tile: Option<u32>,
}

#[derive(Deserialize)]
struct ResponseSpec {
    status: u16,
    #[serde(default)]
    content_type: Option<String>,
    #[serde(default)]
    body: Option<Value>,
    #[serde(default)]
    body_prefix: Option<String>,
    #[serde(default)]
    body_prefix_hex: Option<String>,
}

#[derive(Deserialize)]
struct Poll {
    pointer: String,
    until: Vec<String>,
    timeout_s: u64,
}

pub type Vars = HashMap<String, Value>;

pub fn substitute(v: &Value, vars: &Vars) -> Value {
    match v {
        Value::String(s) => {
            if let Some(name) = s.strip_prefix("{{").and_then(|r| r.strip_suffix("}}")) {
                if let Some(val) = vars.get(name) {
                    return val.clone();
                }
            }
            Value::String(substitute_str(s, vars))
        }
        Value::Array(items) => Value::Array(items.iter().map(|i| substitute(i, vars)).collect()),
        Value::Object(map) => Value::Object(map.iter().map(|(k, v)| (k.clone(), substitute(v, vars))).collect()),
        other => other.clone(),
    }
}

pub fn substitute_str(s: &str, vars: &Vars) -> String {
    let mut out = s.to_string();
    for (name, val) in vars {
        let text = match val {
            Value::String(t) => t.clone(),
            other => other.to_string(),
        };
        out = out.replace(&format!("{{{{{name}}}}}"), &text);
    }
    out
}

/// Returns the first mismatch as a JSON-pointer-ish path.
pub fn matches(expected: &Value, actual: &Value, path: &str) -> Result<(), String> {
    let ok = match expected {
        Value::String(p) if p.starts_with('<') && p.ends_with('>') => match p.as_str() {
            "<string>" => actual.is_string(),
            "<number>" => actual.is_number(),
            "<bool>" => actual.is_boolean(),
            "<array>" => actual.is_array(),
            "<object>" => actual.is_object(),
            "<any>" => true,
            other => return Err(format!("{path}: unknown placeholder {other}")),
        },
        Value::Object(exp) => {
            let Value::Object(act) = actual else {
                return Err(format!("{path}: expected an object, got {actual}"));
            };
            let mut keys: Vec<&String> = exp.keys().chain(act.keys()).collect();
            keys.sort();
            keys.dedup();
            for k in keys {
                let sub = format!("{path}/{k}");
                match (exp.get(k), act.get(k)) {
                    (Some(e), Some(a)) => matches(e, a, &sub)?,
                    (Some(_), None) => return Err(format!("{sub}: missing")),
                    (None, Some(a)) => return Err(format!("{sub}: unexpected field {a}")),
                    (None, None) => unreachable!(),
                }
            }
            true
        }
        Value::Array(exp) => {
            let Value::Array(act) = actual else {
                return Err(format!("{path}: expected an array, got {actual}"));
            };
            if exp.len() != act.len() {
                return Err(format!("{path}: expected {} items, got {}", exp.len(), act.len()));
            }
            for (i, (e, a)) in exp.iter().zip(act).enumerate() {
                matches(e, a, &format!("{path}/{i}"))?;
            }
            true
        }
        other => other == actual,
    };
    if ok {
        Ok(())
    } else {
        Err(format!("{path}: expected {expected}, got {actual}"))
    }
}

fn build_request(spec: &RequestSpec, vars: &Vars) -> Request<Body> {
    let path = substitute_str(&spec.path, vars);
    let builder = Request::builder().method(spec.method.as_str()).uri(path);
    if let Some(json) = &spec.json {
        return builder
            .header("content-type", "application/json")
            .body(Body::from(substitute(json, vars).to_string()))
            .unwrap();
    }
    if let Some(raw) = &spec.raw {
        return builder.header("content-type", "application/json").body(Body::from(raw.clone())).unwrap();
    }
    if let Some(mp) = &spec.multipart {
        let mut parts: Vec<(String, Vec<u8>)> = vec![("manifest".into(), substitute(&mp.manifest, vars).to_string().into_bytes())];
        if let Some(r) = &mp.raster {
            parts.push(("raster".into(), png(&raster(r.width, r.height, r.seed))));
        }
        if let Some(t) = &mp.tiles {
            let image = raster(t.width, t.height, t.seed);
            let ts = t.tile.expect("tile archives need a tile size");
            for r in 0..t.height.div_ceil(ts) {
                for c in 0..t.width.div_ceil(ts) {
                    let (w, h) = (ts.min(t.width - c * ts), ts.min(t.height - r * ts));
                    let tile = image::imageops::crop_imm(&image, c * ts, r * ts, w, h).to_image();
                    parts.push((format!("r{r}_c{c}.png"), png(&tile)));
                }
            }
        }
        let borrowed: Vec<(&str, Vec<u8>)> = parts.iter().map(|(n, b)| (n.as_str(), b.clone())).collect();
        return builder
            .header("content-type", format!("multipart/form-data; boundary={BOUNDARY}"))
            .body(Body::from(multipart(&borrowed)))
            .unwrap();
    }
    builder.body(Body::empty()).unwrap()
}

pub async fn run_step(app: &Router, step: &Step, vars: &mut Vars) -> Result<(), String> {
    let started = Instant::now();
    let reply = loop {
        let reply = send(app, build_request(&step.request, vars)).await;
        let Some(poll) = &step.poll else { break reply };
        let state = serde_json::from_slice::<Value>(&reply.body)
            .ok()
            .and_then(|v| v.pointer(&poll.pointer).and_then(Value::as_str).map(str::to_string));
        if state.is_some_and(|s| poll.until.contains(&s)) {
            break reply;
        }
        if started.elapsed() > Duration::from_secs(poll.timeout_s) {
            return Err(format!("timed out waiting for {} in {:?}", poll.pointer, poll.until));
        }
        tokio::time::sleep(Duration::from_millis(20)).await;
    };

    let exp = &step.response;
    if reply.status.as_u16() != exp.status {
        return Err(format!("status {} (expected {}): {}", reply.status, exp.status, String::from_utf8_lossy(&reply.body)));
    }
    if let Some(ct) = &exp.content_type {
        if reply.content_type() != ct {
            return Err(format!("content-type `{}` (expected `{ct}`)", reply.content_type()));
        }
    }
    if let Some(prefix) = &exp.body_prefix {
        let prefix = substitute_str(prefix, vars);
        if !reply.body.starts_with(prefix.as_bytes()) {
            return Err(format!("body does not start with {prefix:?}: {:?}", String::from_utf8_lossy(&reply.body)));
        }
    }
    if let Some(hex_prefix) = &exp.body_prefix_hex {
        let prefix = hex::decode(hex_prefix).unwrap();
        if !reply.body.starts_with(&prefix) {
            return Err(format!("body does not start with bytes {hex_prefix}"));
        }
    }
    let parsed: Option<Value> = serde_json::from_slice(&reply.body).ok();
    if let Some(body) = &exp.body {
        let actual = parsed.as_ref().ok_or("body is not JSON")?;
        matches(&substitute(body, vars), actual, "")?;
    }
    for (name, pointer) in &step.capture {
        let value = parsed
            .as_ref()
            .and_then(|v| v.pointer(pointer))
            .ok_or_else(|| format!("nothing to capture at {pointer}"))?;
        vars.insert(name.clone(), value.clone());
    }
    Ok(())
}

/// Runs every step in order and returns the failures, one line each.
pub async fn run_suite(app: &Router, suite: &Suite) -> Vec<String> {
    let mut vars = Vars::new();
    let mut failures = Vec::new();
    for step in &suite.steps {
        if let Err(e) = run_step(app, step, &mut vars).await {
            failures.push(format!("{}: {e}", step.name));
        }
    }
    failures
}

pub fn load_suite(path: &std::path::Path) -> Suite {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}
