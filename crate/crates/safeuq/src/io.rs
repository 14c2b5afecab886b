//! File formats: parameter blobs, dataset CSV, saved models and JSON.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use safeuq_core::data::{Dataset, Matrix};
use safeuq_core::estimators::{EstimatorKind, FittedModel};
use safeuq_core::nn::{LayerShape, ParamVector, TrainConfig};

use crate::error::{AppError, Result};

pub fn create_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| AppError::io(dir, e))?;
    }
    Ok(())
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    create_parent(path)?;
    let f = File::create(path).map_err(|e| AppError::io(path, e))?;
    let mut w = BufWriter::new(f);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n").map_err(|e| AppError::io(path, e))?;
    w.flush().map_err(|e| AppError::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn csv_writer(path: &Path) -> Result<csv::Writer<File>> {
    create_parent(path)?;
    Ok(csv::Writer::from_path(path)?)
}

#[derive(Serialize, Deserialize)]
struct ParamSidecar {
    len: usize,
    shapes: Vec<LayerShape>,
}

/// Writes `<stem>.bin` (little-endian f64) and `<stem>.json` (shapes).
pub fn write_params(stem: &Path, params: &ParamVector) -> Result<()> {
    let bin = stem.with_extension("bin");
    create_parent(&bin)?;
    let bytes: Vec<u8> = params.values.iter().flat_map(|v| v.to_le_bytes()).collect();
    fs::write(&bin, bytes).map_err(|e| AppError::io(&bin, e))?;
    write_json(
        &stem.with_extension("json"),
        &ParamSidecar {
            len: params.values.len(),
            shapes: params.shapes.clone(),
        },
    )
}

pub fn read_params(stem: &Path) -> Result<ParamVector> {
    let side: ParamSidecar = read_json(&stem.with_extension("json"))?;
    let bin = stem.with_extension("bin");
    let bytes = fs::read(&bin).map_err(|e| AppError::io(&bin, e))?;
    if bytes.len() != side.len * 8 {
        return Err(AppError::Invalid(format!(
            "{}: expected {} bytes, found {}",
            bin.display(),
            side.len * 8,
            bytes.len()
        )));
    }
    let expected: usize = side.shapes.iter().map(|s| s.len()).sum();
    if expected != side.len {
        return Err(AppError::Invalid(format!("{}: shapes do not cover the blob", bin.display())));
    }
    let values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Ok(ParamVector {
        values,
        shapes: side.shapes,
    })
}

/// Header `x0..xk,y0..ym`, plus `c0..cj` when the dataset carries context.
pub fn write_dataset_csv(path: &Path, data: &Dataset) -> Result<()> {
    let mut w = csv_writer(path)?;
    let ctx_cols = data.context.as_ref().map_or(0, |c| c.cols());
    let header: Vec<String> = (0..data.input_dim())
        .map(|i| format!("x{i}"))
        .chain((0..data.target_dim()).map(|i| format!("y{i}")))
        .chain((0..ctx_cols).map(|i| format!("c{i}")))
        .collect();
    w.write_record(&header)?;
    for i in 0..data.len() {
        let row: Vec<String> = data
            .inputs
            .row(i)
            .iter()
            .chain(data.targets.row(i))
            .chain(data.context_row(i))
            .map(|v| v.to_string())
            .collect();
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| AppError::io(path, e))
}

pub fn read_dataset_csv(path: &Path) -> Result<Dataset> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    let kind = |c: char| header.iter().filter(|h| h.starts_with(c)).count();
    let (nx, ny, nc) = (kind('x'), kind('y'), kind('c'));
    if nx + ny + nc != header.len() || nx == 0 || ny == 0 {
        return Err(AppError::Invalid(format!("{}: header must be x0..,y0..[,c0..]", path.display())));
    }
    let (mut xs, mut ys, mut cs) = (Vec::new(), Vec::new(), Vec::new());
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let vals = rec
            .iter()
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| AppError::Invalid(format!("{} row {}: {e}", path.display(), line + 2)))?;
        xs.extend_from_slice(&vals[..nx]);
        ys.extend_from_slice(&vals[nx..nx + ny]);
        cs.extend_from_slice(&vals[nx + ny..]);
    }
    let n = xs.len() / nx;
    let context = (nc > 0).then(|| Matrix::from_vec(n, nc, cs)).transpose()?;
    Ok(Dataset::with_context(Matrix::from_vec(n, nx, xs)?, Matrix::from_vec(n, ny, ys)?, context)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub kind: EstimatorKind,
    pub train: TrainConfig,
    pub seed: u64,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    info: ModelInfo,
    /// Model JSON with every parameter vector replaced by a blob reference.
    model: Value,
}

const BLOB_KEY: &str = "params_blob";

fn is_param_vector(m: &Map<String, Value>) -> bool {
    m.len() == 2 && matches!(m.get("values"), Some(Value::Array(_))) && matches!(m.get("shapes"), Some(Value::Array(_)))
}

fn extract_blobs(v: &mut Value, dir: &Path, count: &mut usize) -> Result<()> {
    match v {
        Value::Object(m) if is_param_vector(m) => {
            let p: ParamVector = serde_json::from_value(Value::Object(m.clone()))?;
            let name = format!("params_{count:03}");
            *count += 1;
            write_params(&dir.join(&name), &p)?;
            let mut r = Map::new();
            r.insert(BLOB_KEY.to_string(), Value::String(name));
            *v = Value::Object(r);
        }
        Value::Object(m) => {
            for x in m.values_mut() {
                extract_blobs(x, dir, count)?;
            }
        }
        Value::Array(a) => {
            for x in a {
                extract_blobs(x, dir, count)?;
            }
        }
        _ => {}
    }
    Ok(())
}

fn restore_blobs(v: &mut Value, dir: &Path) -> Result<()> {
    match v {
        Value::Object(m) => {
            if let (1, Some(Value::String(name))) = (m.len(), m.get(BLOB_KEY)) {
                let p = read_params(&dir.join(name))?;
                *v = serde_json::to_value(p)?;
                return Ok(());
            }
            for x in m.values_mut() {
                restore_blobs(x, dir)?;
            }
        }
        Value::Array(a) => {
            for x in a {
                restore_blobs(x, dir)?;
            }
        }
        _ => {}
    }
    Ok(())
}

/// Saves `model` as `dir/model.json` plus one blob pair per parameter vector.
pub fn save_model(dir: &Path, model: &FittedModel, info: &ModelInfo) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| AppError::io(dir, e))?;
    let mut value = serde_json::to_value(model)?;
    let mut count = 0;
    extract_blobs(&mut value, dir, &mut count)?;
    let path = dir.join("model.json");
    write_json(
        &path,
        &ModelFile {
            info: info.clone(),
            model: value,
        },
    )?;
    Ok(path)
}

pub fn load_model(dir: &Path) -> Result<(FittedModel, ModelInfo)> {
    let mut file: ModelFile = read_json(&dir.join("model.json"))?;
    restore_blobs(&mut file.model, dir)?;
    Ok((serde_json::from_value(file.model)?, file.info))
}

#[cfg(test)]
mod tests {
    use super::*;
    use safeuq_core::nn::NetworkSpec;

    #[test]
    fn params_round_trip_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let spec = NetworkSpec::mlp(2, 1, 1, 3);
        let mut p = ParamVector::zeros(&spec);
        for (i, v) in p.values.iter_mut().enumerate() {
            *v = (i as f64).sin() / 3.0;
        }
        write_params(&dir.path().join("w"), &p).unwrap();
        assert_eq!(read_params(&dir.path().join("w")).unwrap(), p);
    }

    #[test]
    fn truncated_blob_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = ParamVector::zeros(&NetworkSpec::mlp(1, 1, 1, 2));
        write_params(&dir.path().join("w"), &p).unwrap();
        fs::write(dir.path().join("w.bin"), [0u8; 5]).unwrap();
        assert!(read_params(&dir.path().join("w")).is_err());
    }
}
