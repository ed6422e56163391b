//! Checkpoint and report documents. Keys are written in lexicographic order
//! at every level; parameter values are written as 32-bit floats.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use eapcr_core::eval::EvalReport;
use eapcr_core::train::{Checkpoint, CHECKPOINT_VERSION};
use eapcr_core::Error as CoreError;
use serde::Serialize;
use serde_json::value::RawValue;
use serde_json::Value;

use crate::config::RunConfig;
use crate::error::{CliError, Result};

pub const RUN_CONFIG_KEY: &str = "run_config";

#[derive(Serialize)]
struct SortedArray<'a> {
    data: &'a [f32],
    shape: &'a [usize],
}

fn raw(text: String) -> Box<RawValue> {
    RawValue::from_string(text).expect("serde_json output is valid JSON")
}

pub fn checkpoint_to_string(ckpt: &Checkpoint, run_config: &RunConfig) -> String {
    let mut value = serde_json::to_value(ckpt).expect("checkpoint serializes");
    let fields = value.as_object_mut().expect("checkpoint is a JSON object");
    fields.remove("params");
    let mut doc: BTreeMap<String, Box<RawValue>> = fields.iter().map(|(k, v)| (k.clone(), raw(v.to_string()))).collect();
    let params: BTreeMap<&str, SortedArray<'_>> = ckpt
        .params
        .iter()
        .map(|(name, a)| (name.as_str(), SortedArray { data: &a.data, shape: &a.shape }))
        .collect();
    doc.insert("params".into(), raw(serde_json::to_string(&params).expect("params serialize")));
    doc.insert(RUN_CONFIG_KEY.into(), raw(run_config.to_json()));
    let mut text = serde_json::to_string(&doc).expect("document serializes");
    text.push('\n');
    text
}

/// Parses and validates a checkpoint; the embedded run config is returned
/// when present.
pub fn checkpoint_from_str(text: &str) -> Result<(Checkpoint, Option<RunConfig>)> {
    let schema = |msg: String| CliError::Core(CoreError::Schema(msg));
    let mut value: Value = serde_json::from_str(text).map_err(|e| schema(e.to_string()))?;
    let fields = value.as_object_mut().ok_or_else(|| schema("document is not a JSON object".into()))?;
    let version = fields
        .get("format_version")
        .and_then(Value::as_u64)
        .ok_or_else(|| schema("format_version: missing or not an unsigned integer".into()))?;
    if version != u64::from(CHECKPOINT_VERSION) {
        return Err(CoreError::Version(u32::try_from(version).unwrap_or(u32::MAX)).into());
    }
    let run_config = match fields.remove(RUN_CONFIG_KEY) {
        Some(v) => Some(serde_json::from_value(v).map_err(|e| schema(format!("{RUN_CONFIG_KEY}: {e}")))?),
        None => None,
    };
    let ckpt: Checkpoint = serde_json::from_value(value).map_err(|e| schema(e.to_string()))?;
    ckpt.model()?;
    Ok((ckpt, run_config))
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint, run_config: &RunConfig) -> Result<()> {
    fs::write(path, checkpoint_to_string(ckpt, run_config)).map_err(CliError::io(path))
}

pub fn load_checkpoint(path: &Path) -> Result<(Checkpoint, Option<RunConfig>)> {
    let text = fs::read_to_string(path).map_err(CliError::io(path))?;
    checkpoint_from_str(&text)
}

/// Report fields plus the run config, the evaluated split and the seed.
pub fn report_to_string(report: &EvalReport, run_config: &RunConfig, split: &str) -> String {
    let mut value = serde_json::to_value(report).expect("report serializes");
    let fields = value.as_object_mut().expect("report is a JSON object");
    fields.insert(RUN_CONFIG_KEY.into(), serde_json::to_value(run_config).expect("run config serializes"));
    fields.insert("seed".into(), run_config.seed.into());
    fields.insert("split".into(), split.into());
    let mut text = serde_json::to_string_pretty(&value).expect("report serializes");
    text.push('\n');
    text
}
