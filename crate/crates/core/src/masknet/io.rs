//! `KWNET1` model files.
//!
//! Layout (little-endian): magic `KWNET1\0`, u32 layer count, then per layer
//! u32 rows, u32 cols, rows·cols f64 weights (row-major), rows f64 biases;
//! then the normalization block (u32 dim, f64 count, dim f64 mean, dim f64
//! std); then the u64 initialization seed.

use std::fs;
use std::io::{Cursor, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};

use super::mlp::{Layer, Mlp};
use super::{MaskNetModel, Topology};
use crate::error::{Error, Result};
use crate::features::NormStats;

const MAGIC: &[u8; 7] = b"KWNET1\0";

pub fn save_model(model: &MaskNetModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    model.validate()?;
    let mut buf: Vec<u8> = Vec::with_capacity(64 + model.net.num_params() * 8 + model.norm_stats.dim() * 16);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(model.net.layers.len() as u32).to_le_bytes());
    for layer in &model.net.layers {
        buf.extend_from_slice(&(layer.outputs() as u32).to_le_bytes());
        buf.extend_from_slice(&(layer.inputs() as u32).to_le_bytes());
        for w in layer.weights.iter() {
            buf.extend_from_slice(&w.to_le_bytes());
        }
        for b in layer.bias.iter() {
            buf.extend_from_slice(&b.to_le_bytes());
        }
    }
    model
        .norm_stats
        .write_block(&mut buf)
        .expect("writing to a Vec cannot fail");
    buf.extend_from_slice(&model.seed.to_le_bytes());
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&buf).map_err(|e| Error::io(path, e))
}

/// Loads a model file. With `expected`, every layer width must match that
/// topology; otherwise the topology is inferred from the file.
pub fn load_model(path: impl AsRef<Path>, expected: Option<&Topology>) -> Result<MaskNetModel> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse(&bytes, expected)
}

fn truncated() -> Error {
    Error::format("model file", "truncated")
}

fn read_u32(r: &mut Cursor<&[u8]>) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|_| truncated())?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64s(r: &mut Cursor<&[u8]>, n: usize) -> Result<Vec<f64>> {
    let remaining = r.get_ref().len() - r.position() as usize;
    if n.checked_mul(8).is_none_or(|len| len > remaining) {
        return Err(truncated());
    }
    let mut bytes = vec![0u8; n * 8];
    r.read_exact(&mut bytes).map_err(|_| truncated())?;
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

fn parse(bytes: &[u8], expected: Option<&Topology>) -> Result<MaskNetModel> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::format("model file", "bad magic (not a KWNET1 model)"));
    }
    let mut r = Cursor::new(bytes);
    r.set_position(MAGIC.len() as u64);
    let n_layers = read_u32(&mut r)? as usize;
    let expected_dims = expected.map(Topology::dims);
    if n_layers == 0 {
        return Err(Error::dim("model has no layers"));
    }
    if let Some(d) = &expected_dims {
        if d.len() - 1 != n_layers {
            return Err(Error::dim(format!(
                "model has {n_layers} layers, expected {}",
                d.len() - 1
            )));
        }
    }

    let mut layers = Vec::with_capacity(n_layers);
    for i in 0..n_layers {
        let rows = read_u32(&mut r)? as usize;
        let cols = read_u32(&mut r)? as usize;
        if rows == 0 || cols == 0 {
            return Err(Error::dim(format!("layer {i} has zero width")));
        }
        if let Some(d) = &expected_dims {
            if (cols, rows) != (d[i], d[i + 1]) {
                return Err(Error::dim(format!(
                    "layer {i} is {cols}→{rows}, expected {}→{}",
                    d[i],
                    d[i + 1]
                )));
            }
        }
        if let Some(prev) = layers.last().map(Layer::outputs) {
            if prev != cols {
                return Err(Error::dim(format!(
                    "layer {i} takes {cols} inputs but the previous layer emits {prev}"
                )));
            }
        }
        let weights = read_f64s(&mut r, rows * cols)?;
        let bias = read_f64s(&mut r, rows)?;
        layers.push(Layer {
            weights: Array2::from_shape_vec((rows, cols), weights).expect("sized above"),
            bias: Array1::from(bias),
        });
    }
    let net = Mlp { layers };
    if !net.is_finite() {
        return Err(Error::format("model file", "non-finite parameters"));
    }
    let norm_stats = NormStats::read_block(&mut r)?;
    let mut seed = [0u8; 8];
    r.read_exact(&mut seed).map_err(|_| truncated())?;
    if (r.position() as usize) != bytes.len() {
        return Err(Error::format("model file", "trailing bytes after seed"));
    }
    let topology = Topology::from_dims(&net.dims())?;
    let model = MaskNetModel {
        net,
        features: topology.features,
        norm_stats,
        seed: u64::from_le_bytes(seed),
    };
    model.validate()?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FeatureConfig;

    fn small() -> (Topology, MaskNetModel) {
        let topo = Topology {
            features: FeatureConfig { base_dim: 4, left_context: 2, right_context: 2 },
            hidden: vec![6, 7, 5],
        };
        let mut m = MaskNetModel::init(&topo, 99);
        m.norm_stats.mean.iter_mut().enumerate().for_each(|(i, v)| *v = i as f64 * 0.5);
        m.norm_stats.std.iter_mut().enumerate().for_each(|(i, v)| *v = 1.0 + i as f64);
        m.norm_stats.count = 1234.0;
        m.net.layers[2].bias[1] = -0.25;
        (topo, m)
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.kwnet");
        let (topo, m) = small();
        save_model(&m, &p).unwrap();
        assert_eq!(load_model(&p, Some(&topo)).unwrap(), m);
        assert_eq!(load_model(&p, None).unwrap(), m);
        save_model(&load_model(&p, None).unwrap(), dir.path().join("again.kwnet")).unwrap();
        assert_eq!(fs::read(&p).unwrap(), fs::read(dir.path().join("again.kwnet")).unwrap());
    }

    #[test]
    fn corrupted_magic_is_structured_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.kwnet");
        let (_, m) = small();
        save_model(&m, &p).unwrap();
        let mut bytes = fs::read(&p).unwrap();
        bytes[0] = b'X';
        fs::write(&p, &bytes).unwrap();
        assert!(matches!(load_model(&p, None), Err(Error::Format { .. })));
    }

    #[test]
    fn truncation_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.kwnet");
        let (_, m) = small();
        save_model(&m, &p).unwrap();
        let bytes = fs::read(&p).unwrap();
        for cut in [5, 11, 40, bytes.len() - 3] {
            fs::write(&p, &bytes[..cut]).unwrap();
            assert!(load_model(&p, None).is_err(), "cut at {cut}");
        }
    }

    #[test]
    fn hidden_width_1023_fails_reference_validation() {
        // header of a file whose first hidden layer is 1023 wide
        let mut bytes = MAGIC.to_vec();
        bytes.extend_from_slice(&4u32.to_le_bytes());
        bytes.extend_from_slice(&1023u32.to_le_bytes());
        bytes.extend_from_slice(&5376u32.to_le_bytes());
        let err = parse(&bytes, Some(&Topology::default())).unwrap_err();
        assert!(matches!(err, Error::Dimension(_)), "{err}");
    }

    #[test]
    fn inconsistent_chain_is_dimension_error() {
        let (_, mut m) = small();
        m.net.layers[1].weights = Array2::zeros((7, 3));
        let dir = tempfile::tempdir().unwrap();
        assert!(save_model(&m, dir.path().join("m.kwnet")).is_err());
    }
}
