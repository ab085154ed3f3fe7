//! Run inputs: the `--input` JSON file and conversions between JSON and
//! runtime values.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use hpvm::kernel::{BufferData, ScalarType, Value};
use hpvm::Port;
use serde::Deserialize;
use serde_json::Value as Json;

/// Contents of an `--input` file.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputFile {
    /// Graph to run when the document holds several.
    #[serde(default)]
    pub graph: Option<String>,
    /// Root input values by port name.
    #[serde(default)]
    pub args: BTreeMap<String, Json>,
    /// Records for the streaming root inputs, one object per token.
    #[serde(default)]
    pub stream: Vec<BTreeMap<String, Json>>,
    #[serde(skip)]
    pub base: PathBuf,
}

impl InputFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut f: InputFile = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        f.base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(f)
    }
}

/// A buffer payload is either a JSON array or `{"file": "x.bin"}` naming raw
/// little-endian elements, relative to the input file.
pub fn buffer_data(elem: ScalarType, json: &Json, base: &Path) -> Result<BufferData> {
    if let Some(file) = json.get("file").and_then(Json::as_str) {
        let path = base.join(file);
        let bytes = std::fs::read(&path).with_context(|| format!("reading {}", path.display()))?;
        return BufferData::from_le_bytes(elem, &bytes).ok_or_else(|| {
            anyhow!(
                "{}: {} bytes is not a whole number of {} elements",
                path.display(),
                bytes.len(),
                elem.name()
            )
        });
    }
    let items = json
        .as_array()
        .ok_or_else(|| anyhow!("expected an array or {{\"file\": ...}}, found {json}"))?;
    let ints = || -> Result<Vec<i64>> {
        items
            .iter()
            .map(|v| {
                v.as_i64()
                    .or_else(|| v.as_bool().map(i64::from))
                    .ok_or_else(|| anyhow!("`{v}` is not an integer"))
            })
            .collect()
    };
    let floats = || -> Result<Vec<f64>> {
        items
            .iter()
            .map(|v| v.as_f64().ok_or_else(|| anyhow!("`{v}` is not a number")))
            .collect()
    };
    Ok(match elem {
        ScalarType::I32 | ScalarType::Bool => BufferData::I32(
            ints()?
                .into_iter()
                .map(|v| i32::try_from(v).map_err(|_| anyhow!("{v} does not fit in i32")))
                .collect::<Result<_>>()?,
        ),
        ScalarType::I64 => BufferData::I64(ints()?),
        ScalarType::F32 => BufferData::F32(floats()?.into_iter().map(|v| v as f32).collect()),
        ScalarType::F64 => BufferData::F64(floats()?),
    })
}

pub fn scalar(ty: ScalarType, json: &Json) -> Result<Value> {
    let bad = || anyhow!("`{json}` is not a valid {}", ty.name());
    Ok(match ty {
        ScalarType::I32 => Value::I32(json.as_i64().and_then(|v| i32::try_from(v).ok()).ok_or_else(bad)?),
        ScalarType::I64 => Value::I64(json.as_i64().ok_or_else(bad)?),
        ScalarType::F32 => Value::F32(json.as_f64().ok_or_else(bad)? as f32),
        ScalarType::F64 => Value::F64(json.as_f64().ok_or_else(bad)?),
        ScalarType::Bool => Value::Bool(json.as_bool().ok_or_else(bad)?),
    })
}

/// Looks up the value of every port in `ports` from `values`, reporting
/// missing and unknown names.
pub fn ordered<'a>(
    ports: &[&'a Port],
    values: &'a BTreeMap<String, Json>,
    what: &str,
) -> Result<Vec<(&'a Port, &'a Json)>> {
    if let Some(extra) = values.keys().find(|k| !ports.iter().any(|p| &p.name == *k)) {
        bail!("{what}: `{extra}` is not an input port here");
    }
    ports
        .iter()
        .map(|p| {
            values
                .get(&p.name)
                .map(|v| (*p, v))
                .ok_or_else(|| anyhow!("{what}: no value for `{}`", p.name))
        })
        .collect()
}

pub fn scalar_json(v: &Value) -> Json {
    match *v {
        Value::I32(x) => x.into(),
        Value::I64(x) => x.into(),
        Value::F32(x) => serde_json::Number::from_f64(x as f64).map_or(Json::Null, Json::Number),
        Value::F64(x) => serde_json::Number::from_f64(x).map_or(Json::Null, Json::Number),
        Value::Bool(x) => x.into(),
        Value::Buf(id) => Json::String(id.to_string()),
    }
}

pub fn buffer_json(d: &BufferData) -> Json {
    match d {
        BufferData::I32(v) => v.iter().copied().collect(),
        BufferData::I64(v) => v.iter().copied().collect(),
        BufferData::F32(v) => v.iter().map(|&x| scalar_json(&Value::F32(x))).collect(),
        BufferData::F64(v) => v.iter().map(|&x| scalar_json(&Value::F64(x))).collect(),
    }
}
