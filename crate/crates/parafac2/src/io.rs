//! On-disk formats: a tensor directory (meta.json plus one raw binary file
//! per slice), a model directory (factor matrices as raw binaries), and JSON
//! helpers for reports and manifests. All binaries are little-endian f64 in
//! row-major order.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Parafac2Model, RaggedTensor};

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorMeta {
    #[serde(rename = "I")]
    i: usize,
    #[serde(rename = "J")]
    j: Vec<usize>,
    #[serde(rename = "K")]
    k: usize,
    order: String,
    dtype: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ModelMeta {
    #[serde(rename = "R")]
    r: usize,
    #[serde(rename = "I")]
    i: usize,
    #[serde(rename = "J")]
    j: Vec<usize>,
    #[serde(rename = "K")]
    k: usize,
    order: String,
    dtype: String,
}

fn write_matrix_rowmajor(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let mut buf = Vec::with_capacity(m.len() * 8);
    for row in 0..m.nrows() {
        for col in 0..m.ncols() {
            buf.extend_from_slice(&m[(row, col)].to_le_bytes());
        }
    }
    fs::write(path, buf)?;
    Ok(())
}

fn read_matrix_rowmajor(path: &Path, nrows: usize, ncols: usize) -> Result<DMatrix<f64>> {
    let buf = fs::read(path)?;
    if buf.len() != nrows * ncols * 8 {
        return Err(Error::InvalidArgument(format!(
            "{}: expected {} bytes for {}x{} f64, found {}",
            path.display(),
            nrows * ncols * 8,
            nrows,
            ncols,
            buf.len()
        )));
    }
    let mut m = DMatrix::zeros(nrows, ncols);
    for row in 0..nrows {
        for col in 0..ncols {
            let at = (row * ncols + col) * 8;
            m[(row, col)] = f64::from_le_bytes(buf[at..at + 8].try_into().unwrap());
        }
    }
    Ok(m)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

/// Writes a ragged tensor as `meta.json` plus `slice_NNNN.bin` files.
pub fn write_tensor(dir: &Path, x: &RaggedTensor) -> Result<()> {
    fs::create_dir_all(dir)?;
    let meta = TensorMeta {
        i: x.nrows(),
        j: x.col_counts(),
        k: x.nslices(),
        order: "row-major".into(),
        dtype: "f64le".into(),
    };
    write_json(&dir.join("meta.json"), &meta)?;
    for k in 0..x.nslices() {
        write_matrix_rowmajor(&dir.join(format!("slice_{:04}.bin", k)), x.slice(k))?;
    }
    Ok(())
}

pub fn read_tensor(dir: &Path) -> Result<RaggedTensor> {
    let meta: TensorMeta = read_json(&dir.join("meta.json"))?;
    if meta.order != "row-major" || meta.dtype != "f64le" {
        return Err(Error::InvalidArgument(format!(
            "unsupported tensor encoding: order={} dtype={}",
            meta.order, meta.dtype
        )));
    }
    if meta.j.len() != meta.k {
        return Err(Error::InvalidArgument(
            "tensor meta: J list length does not match K".into(),
        ));
    }
    let slices = (0..meta.k)
        .map(|k| read_matrix_rowmajor(&dir.join(format!("slice_{:04}.bin", k)), meta.i, meta.j[k]))
        .collect::<Result<Vec<_>>>()?;
    RaggedTensor::new(slices)
}

/// Writes a model as `meta.json` plus `A.bin`, `B_NNNN.bin`, and `C.bin`.
pub fn write_model(dir: &Path, model: &Parafac2Model) -> Result<()> {
    fs::create_dir_all(dir)?;
    let meta = ModelMeta {
        r: model.rank(),
        i: model.a.nrows(),
        j: model.b.iter().map(|bk| bk.nrows()).collect(),
        k: model.nslices(),
        order: "row-major".into(),
        dtype: "f64le".into(),
    };
    write_json(&dir.join("meta.json"), &meta)?;
    write_matrix_rowmajor(&dir.join("A.bin"), &model.a)?;
    for (k, bk) in model.b.iter().enumerate() {
        write_matrix_rowmajor(&dir.join(format!("B_{:04}.bin", k)), bk)?;
    }
    write_matrix_rowmajor(&dir.join("C.bin"), &model.c)?;
    Ok(())
}

pub fn read_model(dir: &Path) -> Result<Parafac2Model> {
    let meta: ModelMeta = read_json(&dir.join("meta.json"))?;
    let a = read_matrix_rowmajor(&dir.join("A.bin"), meta.i, meta.r)?;
    let b = (0..meta.k)
        .map(|k| read_matrix_rowmajor(&dir.join(format!("B_{:04}.bin", k)), meta.j[k], meta.r))
        .collect::<Result<Vec<_>>>()?;
    let c = read_matrix_rowmajor(&dir.join("C.bin"), meta.k, meta.r)?;
    Parafac2Model::new(a, b, c)
}
