//! Canonical JSON: object keys sorted by byte order, no insignificant
//! whitespace, a single trailing LF.
//!
//! Every file artifact the toolchain writes (`experiment.manifest.json`,
//! `envspec.json`, the provenance export, reports and receipts) goes through
//! [`to_canonical_string`], so equal values always produce equal bytes and
//! therefore equal hashes.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use crate::digest::ContentHash;

pub fn to_canonical_string<T: Serialize + ?Sized>(value: &T) -> serde_json::Result<String> {
    let value = serde_json::to_value(value)?;
    let mut out = String::new();
    write_value(&value, &mut out);
    out.push('\n');
    Ok(out)
}

pub fn canonical_hash<T: Serialize + ?Sized>(value: &T) -> serde_json::Result<ContentHash> {
    Ok(ContentHash::of_bytes(to_canonical_string(value)?.as_bytes()))
}

/// Re-emit arbitrary JSON text in canonical form.
pub fn canonicalize_str(text: &str) -> serde_json::Result<String> {
    let value: Value = serde_json::from_str(text)?;
    to_canonical_string(&value)
}

pub fn from_json_str<T: DeserializeOwned>(text: &str) -> serde_json::Result<T> {
    serde_json::from_str(text)
}

/// Write canonical JSON to `path` through a temporary sibling and a rename.
pub fn write_canonical_file<T: Serialize + ?Sized>(path: &Path, value: &T) -> io::Result<()> {
    let text = to_canonical_string(value).map_err(io::Error::other)?;
    write_atomic(path, text.as_bytes())
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let file_name = path
        .file_name()
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "path has no file name"))?;
    let mut tmp_name = file_name.to_os_string();
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path).inspect_err(|_| {
        let _ = fs::remove_file(&tmp);
    })
}

fn write_value(value: &Value, out: &mut String) {
    match value {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => {
            let _ = write!(out, "{n}");
        }
        Value::String(s) => write_string(s, out),
        Value::Array(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_value(item, out);
            }
            out.push(']');
        }
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push('{');
            for (i, key) in keys.into_iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_string(key, out);
                out.push(':');
                write_value(&map[key], out);
            }
            out.push('}');
        }
    }
}

fn write_string(s: &str, out: &mut String) {
    // serde_json's string escaping is already minimal and deterministic.
    out.push_str(&serde_json::to_string(s).expect("string serialization is infallible"));
}
