//! On-disk formats: SMM1 matrices, datasets, model checkpoints and manifold
//! exports. Every write goes to a temporary sibling first and is renamed
//! into place.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use smaat_core::data::{Dataset, DatasetMeta};
use smaat_core::linalg::{EigenBasis, Matrix, StandardizeStats};
use smaat_core::manifold::{GammaPolicy, LayerAnalysis, LayerManifold};
use smaat_core::network::{Activation, Layer, Model};
use smaat_core::smm1;

use crate::error::{LabError, Result};

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| LabError::io(dir, e))?;
    }
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = path.with_file_name(format!(".{name}.tmp-{}", std::process::id()));
    fs::write(&tmp, bytes).map_err(|e| LabError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        LabError::io(path, e)
    })
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| LabError::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| LabError::Json {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = read_bytes(path)?;
    serde_json::from_slice(&bytes).map_err(|e| LabError::Json {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

pub fn save_matrix(path: &Path, m: &Matrix) -> Result<()> {
    write_atomic(path, &smm1::encode(m))
}

pub fn load_matrix(path: &Path) -> Result<Matrix> {
    smm1::decode(&read_bytes(path)?).map_err(|e| LabError::format(path, e))
}

/// Labels as little-endian `u16`.
pub fn encode_labels(y: &[usize]) -> std::result::Result<Vec<u8>, usize> {
    let mut out = Vec::with_capacity(2 * y.len());
    for &l in y {
        let v = u16::try_from(l).map_err(|_| l)?;
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_labels(bytes: &[u8]) -> std::result::Result<Vec<usize>, smaat_core::Error> {
    if bytes.len() % 2 != 0 {
        return Err(smaat_core::Error::Truncated {
            expected: bytes.len() + 1,
            got: bytes.len(),
        });
    }
    Ok(bytes
        .chunks_exact(2)
        .map(|c| u16::from_le_bytes([c[0], c[1]]) as usize)
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetSidecar {
    rows: usize,
    classes: usize,
    meta: DatasetMeta,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetPaths {
    pub x: PathBuf,
    pub y: PathBuf,
    pub meta: PathBuf,
}

/// `<dir>/<name>.x.smm1`, `<dir>/<name>.y.bin`, `<dir>/<name>.meta.json`.
pub fn dataset_paths(dir: &Path, name: &str) -> DatasetPaths {
    DatasetPaths {
        x: dir.join(format!("{name}.x.smm1")),
        y: dir.join(format!("{name}.y.bin")),
        meta: dir.join(format!("{name}.meta.json")),
    }
}

pub fn save_dataset(dir: &Path, name: &str, data: &Dataset) -> Result<DatasetPaths> {
    let paths = dataset_paths(dir, name);
    let y = encode_labels(&data.y)
        .map_err(|l| LabError::meta(&paths.y, format!("label {l} does not fit in 16 bits")))?;
    save_matrix(&paths.x, &data.x)?;
    write_atomic(&paths.y, &y)?;
    write_json(
        &paths.meta,
        &DatasetSidecar {
            rows: data.len(),
            classes: data.classes,
            meta: data.meta.clone(),
        },
    )?;
    Ok(paths)
}

/// Loads and cross-checks the three dataset files; nothing is returned
/// unless all of them agree.
pub fn load_dataset(dir: &Path, name: &str) -> Result<Dataset> {
    let paths = dataset_paths(dir, name);
    let x = load_matrix(&paths.x)?;
    let y = decode_labels(&read_bytes(&paths.y)?).map_err(|e| LabError::format(&paths.y, e))?;
    let side: DatasetSidecar = read_json(&paths.meta)?;
    if x.rows() != side.rows || y.len() != side.rows {
        return Err(LabError::meta(
            &paths.meta,
            format!(
                "metadata lists {} rows; features have {}, labels {}",
                side.rows,
                x.rows(),
                y.len()
            ),
        ));
    }
    if side.meta.ambient_d != x.cols() {
        return Err(LabError::meta(
            &paths.meta,
            format!("ambient_d = {} but features have {} columns", side.meta.ambient_d, x.cols()),
        ));
    }
    Dataset::new(x, y, side.classes, side.meta).map_err(|e| LabError::meta(&paths.meta, e.to_string()))
}

/// SHA-256 over the exact feature bits and labels.
pub fn dataset_hash(data: &Dataset) -> String {
    let mut h = Sha256::new();
    h.update((data.x.rows() as u64).to_le_bytes());
    h.update((data.x.cols() as u64).to_le_bytes());
    for v in data.x.as_slice() {
        h.update(v.to_le_bytes());
    }
    for &l in &data.y {
        h.update((l as u64).to_le_bytes());
    }
    hex::encode(h.finalize())
}

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"SMCK";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointHeader {
    dims: Vec<usize>,
    activations: Vec<Activation>,
    frozen_below: Option<usize>,
    seed: u64,
}

/// `SMCK`, a little-endian `u32` header length, a JSON header with the
/// architecture, then per layer the weight matrix and the bias row as SMM1
/// blobs.
pub fn encode_checkpoint(model: &Model) -> Vec<u8> {
    let header = CheckpointHeader {
        dims: model.dims(),
        activations: model.layers.iter().map(|l| l.activation).collect(),
        frozen_below: model.frozen_below,
        seed: model.seed,
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::new();
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for l in &model.layers {
        out.extend_from_slice(&smm1::encode(&l.weights));
        let bias = Matrix::new(1, l.bias.len(), l.bias.clone()).expect("finite bias");
        out.extend_from_slice(&smm1::encode(&bias));
    }
    out
}

pub fn decode_checkpoint(path: &Path, bytes: &[u8]) -> Result<Model> {
    let fmt = |e| LabError::format(path, e);
    if bytes.len() < 4 {
        return Err(fmt(smaat_core::Error::Truncated {
            expected: 8,
            got: bytes.len(),
        }));
    }
    let found = [bytes[0], bytes[1], bytes[2], bytes[3]];
    if found != CHECKPOINT_MAGIC {
        return Err(fmt(smaat_core::Error::BadMagic {
            expected: CHECKPOINT_MAGIC,
            found,
        }));
    }
    if bytes.len() < 8 {
        return Err(fmt(smaat_core::Error::Truncated {
            expected: 8,
            got: bytes.len(),
        }));
    }
    let hlen = u32::from_le_bytes([bytes[4], bytes[5], bytes[6], bytes[7]]) as usize;
    let body = &bytes[8..];
    if body.len() < hlen {
        return Err(fmt(smaat_core::Error::Truncated {
            expected: 8 + hlen,
            got: bytes.len(),
        }));
    }
    let header: CheckpointHeader = serde_json::from_slice(&body[..hlen]).map_err(|e| LabError::Json {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    if header.dims.len() != header.activations.len() + 1 {
        return Err(LabError::meta(path, "dims and activations disagree"));
    }
    let mut rest = &body[hlen..];
    let mut layers = Vec::with_capacity(header.activations.len());
    for (i, &activation) in header.activations.iter().enumerate() {
        let (weights, used) = smm1::decode_prefix(rest).map_err(fmt)?;
        rest = &rest[used..];
        let (bias, used) = smm1::decode_prefix(rest).map_err(fmt)?;
        rest = &rest[used..];
        if weights.shape() != (header.dims[i], header.dims[i + 1]) || bias.shape() != (1, header.dims[i + 1]) {
            return Err(LabError::meta(path, format!("layer {} blob shapes disagree with dims", i + 1)));
        }
        layers.push(Layer {
            weights,
            bias: bias.into_vec(),
            activation,
        });
    }
    if !rest.is_empty() {
        return Err(fmt(smaat_core::Error::TrailingBytes { extra: rest.len() }));
    }
    Model::from_layers(layers, header.frozen_below, header.seed).map_err(|e| LabError::meta(path, e.to_string()))
}

pub fn save_checkpoint(path: &Path, model: &Model) -> Result<()> {
    write_atomic(path, &encode_checkpoint(model))
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    decode_checkpoint(path, &read_bytes(path)?)
}

/// The model with every parameter rounded to checkpoint precision.
pub fn round_model(model: &Model) -> Model {
    let mut m = model.clone();
    for l in &mut m.layers {
        l.weights = smm1::round_to_storage(&l.weights);
        l.bias.iter_mut().for_each(|b| *b = *b as f32 as f64);
    }
    m
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifoldFiles {
    pub mean: String,
    pub scale: String,
    pub vectors: String,
    pub values: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifoldHeader {
    pub layer_index: usize,
    pub dim: usize,
    pub n_fit: usize,
    pub rank_deficient: bool,
    pub policy: GammaPolicy,
    pub k: usize,
    pub saturated: bool,
    pub gamma_total: f64,
    pub gamma_sample: f64,
    pub files: ManifoldFiles,
}

fn row(v: &[f64]) -> Matrix {
    Matrix::new(1, v.len(), v.to_vec()).expect("finite vector")
}

/// `<name>.json` plus SMM1 blobs for mean, scale, eigenvectors and
/// eigenvalues, referenced by file name relative to `dir`.
pub fn save_manifold(dir: &Path, name: &str, analysis: &LayerAnalysis, policy: GammaPolicy) -> Result<PathBuf> {
    let m = &analysis.manifold;
    let files = ManifoldFiles {
        mean: format!("{name}.mean.smm1"),
        scale: format!("{name}.scale.smm1"),
        vectors: format!("{name}.vectors.smm1"),
        values: format!("{name}.values.smm1"),
    };
    save_matrix(&dir.join(&files.mean), &row(&m.stats.mean))?;
    save_matrix(&dir.join(&files.scale), &row(&m.stats.scale))?;
    save_matrix(&dir.join(&files.vectors), &m.basis.vectors)?;
    save_matrix(&dir.join(&files.values), &row(&m.basis.values))?;
    let header = ManifoldHeader {
        layer_index: m.layer_index,
        dim: m.dim,
        n_fit: m.n_fit,
        rank_deficient: m.rank_deficient,
        policy,
        k: analysis.k,
        saturated: analysis.saturated,
        gamma_total: analysis.gamma_total,
        gamma_sample: analysis.gamma_sample,
        files,
    };
    let path = dir.join(format!("{name}.json"));
    write_json(&path, &header)?;
    Ok(path)
}

pub fn load_manifold(header_path: &Path) -> Result<(LayerManifold, ManifoldHeader)> {
    let header: ManifoldHeader = read_json(header_path)?;
    let dir = header_path.parent().unwrap_or(Path::new("."));
    let vec_of = |f: &str| -> Result<Vec<f64>> {
        let p = dir.join(f);
        let m = load_matrix(&p)?;
        if m.rows() != 1 || m.cols() != header.dim {
            return Err(LabError::meta(&p, format!("expected 1 x {}, got {:?}", header.dim, m.shape())));
        }
        Ok(m.into_vec())
    };
    let mean = vec_of(&header.files.mean)?;
    let scale = vec_of(&header.files.scale)?;
    let values = vec_of(&header.files.values)?;
    let vp = dir.join(&header.files.vectors);
    let vectors = load_matrix(&vp)?;
    if vectors.shape() != (header.dim, header.dim) {
        return Err(LabError::meta(&vp, "eigenvector block is not dim x dim"));
    }
    let manifold = LayerManifold {
        layer_index: header.layer_index,
        dim: header.dim,
        stats: StandardizeStats { mean, scale },
        basis: EigenBasis { vectors, values },
        n_fit: header.n_fit,
        rank_deficient: header.rank_deficient,
    };
    Ok((manifold, header))
}

#[cfg(test)]
mod tests {
    use super::*;
    use smaat_core::data::gen_subspace_classes;
    use smaat_core::network::{init_model, Architecture};

    #[test]
    fn dataset_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let d = gen_subspace_classes(40, 5, 2, 3, 2.0, 0.1, 4).unwrap();
        save_dataset(dir.path(), "toy", &d).unwrap();
        let back = load_dataset(dir.path(), "toy").unwrap();
        assert_eq!(back.x, smm1::round_to_storage(&d.x));
        assert_eq!(back.y, d.y);
        assert_eq!(back.meta, d.meta);

        let p = dataset_paths(dir.path(), "toy");
        let bytes = fs::read(&p.x).unwrap();
        fs::write(&p.x, &bytes[..bytes.len() - 3]).unwrap();
        assert_eq!(load_dataset(dir.path(), "toy").unwrap_err().code(), "truncated");
        let mut bad = bytes.clone();
        bad[0] = b'X';
        fs::write(&p.x, &bad).unwrap();
        let err = load_dataset(dir.path(), "toy").unwrap_err();
        assert_eq!(err.code(), "bad_magic");
        assert!(err.to_string().contains("SMM1"), "{err}");
        fs::write(&p.x, &bytes).unwrap();
        let y = fs::read(&p.y).unwrap();
        fs::write(&p.y, &y[..y.len() - 2]).unwrap();
        assert_eq!(load_dataset(dir.path(), "toy").unwrap_err().code(), "meta_mismatch");
    }

    #[test]
    fn checkpoint_round_trip_and_corruption() {
        let a = Architecture::new(vec![4, 6, 3], vec![Activation::Tanh, Activation::Softmax]).unwrap();
        let mut m = init_model(&a, 9).unwrap();
        m.layers[0].bias[2] = 0.1;
        m.set_frozen_below(Some(2)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.smck");
        save_checkpoint(&path, &m).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap(), round_model(&m));
        let bytes = fs::read(&path).unwrap();
        assert_eq!(decode_checkpoint(&path, &bytes[..bytes.len() - 1]).unwrap_err().code(), "truncated");
        let mut bad = bytes.clone();
        bad[1] = 0;
        assert_eq!(decode_checkpoint(&path, &bad).unwrap_err().code(), "bad_magic");
        let mut long = bytes.clone();
        long.push(0);
        assert_eq!(decode_checkpoint(&path, &long).unwrap_err().code(), "trailing_bytes");
    }

    #[test]
    fn manifold_round_trip() {
        let d = gen_subspace_classes(60, 4, 3, 2, 2.0, 0.1, 1).unwrap();
        let an = smaat_core::manifold::analyze_layer(&d.x, 0, GammaPolicy::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = save_manifold(dir.path(), "layer0", &an, GammaPolicy::default()).unwrap();
        let (m, h) = load_manifold(&p).unwrap();
        assert_eq!(h.k, an.k);
        assert_eq!(m.basis.vectors, smm1::round_to_storage(&an.manifold.basis.vectors));
    }

    #[test]
    fn atomic_write_leaves_no_temp() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub/out.txt");
        write_atomic(&p, b"a").unwrap();
        write_atomic(&p, b"b").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"b");
        assert_eq!(fs::read_dir(p.parent().unwrap()).unwrap().count(), 1);
    }
}
