//! Binary checkpoint format (all integers and floats little-endian):
//!
//! ```text
//! magic        8 bytes   "DHNNCKPT"
//! version      u32       CHECKPOINT_VERSION
//! kind         u8        0 = baseline, 1 = hnn, 2 = dhnn
//! input_dim    u32
//! n_layers     u32       3 (baseline, hnn) or 6 (dhnn: H layers then D layers)
//! per layer:
//!   rows       u32
//!   cols       u32
//!   weights    rows*cols f64, row-major
//!   biases     rows f64
//! ```

use thiserror::Error;

use super::{DenseLayer, DirectNet, Model, ModelKind, PotentialNet};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"DHNNCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {found} (expected {CHECKPOINT_VERSION})")]
    Version { found: u32 },
    #[error("unknown model kind tag {0}")]
    UnknownKind(u8),
    #[error("truncated checkpoint: needed {needed} bytes at offset {offset}")]
    Truncated { offset: usize, needed: usize },
    #[error("layer shape mismatch: {0}")]
    Shape(String),
    #[error("{0} trailing bytes after checkpoint")]
    TrailingBytes(usize),
}

pub(super) fn encode(model: &Model) -> Vec<u8> {
    let layers = model.layers();
    let mut out = Vec::with_capacity(32 + model.param_count() * 8 + layers.len() * 8);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.push(model.kind().tag());
    out.extend_from_slice(&(model.input_dim() as u32).to_le_bytes());
    out.extend_from_slice(&(layers.len() as u32).to_le_bytes());
    for l in layers {
        out.extend_from_slice(&(l.rows() as u32).to_le_bytes());
        out.extend_from_slice(&(l.cols() as u32).to_le_bytes());
        for v in l.weights.iter().chain(&l.biases) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or(
            CheckpointError::Truncated {
                offset: self.pos,
                needed: n,
            },
        )?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, CheckpointError> {
        let raw = self.take(n.checked_mul(8).ok_or(CheckpointError::Truncated {
            offset: self.pos,
            needed: usize::MAX,
        })?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

fn expect_shape(layer: &DenseLayer, rows: usize, cols: usize, name: &str) -> Result<(), CheckpointError> {
    if layer.rows() != rows || layer.cols() != cols {
        return Err(CheckpointError::Shape(format!(
            "{name}: expected {rows}x{cols}, found {}x{}",
            layer.rows(),
            layer.cols()
        )));
    }
    Ok(())
}

fn potential(layers: &[DenseLayer], input_dim: usize) -> Result<PotentialNet, CheckpointError> {
    let h = layers[0].rows();
    expect_shape(&layers[0], h, input_dim, "layer1")?;
    expect_shape(&layers[1], h, h, "layer2")?;
    expect_shape(&layers[2], 1, h, "head")?;
    Ok(PotentialNet {
        layer1: layers[0].clone(),
        layer2: layers[1].clone(),
        head: layers[2].clone(),
    })
}

pub(super) fn decode(bytes: &[u8]) -> Result<Model, CheckpointError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8).map_err(|_| CheckpointError::BadMagic)? != CHECKPOINT_MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::Version { found: version });
    }
    let tag = r.take(1)?[0];
    let kind = ModelKind::from_tag(tag).ok_or(CheckpointError::UnknownKind(tag))?;
    let input_dim = r.u32()? as usize;
    if !(input_dim == 2 || input_dim == 3) {
        return Err(CheckpointError::Shape(format!("input dimension {input_dim}")));
    }
    let n_layers = r.u32()? as usize;
    let expected_layers = if kind == ModelKind::Dissipative { 6 } else { 3 };
    if n_layers != expected_layers {
        return Err(CheckpointError::Shape(format!(
            "{kind} checkpoint has {n_layers} layers, expected {expected_layers}"
        )));
    }
    let mut layers = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        let weights = r.f64s(rows.saturating_mul(cols))?;
        let biases = r.f64s(rows)?;
        let layer = DenseLayer::new(rows, cols, weights, biases)
            .map_err(|e| CheckpointError::Shape(e.to_string()))?;
        layers.push(layer);
    }
    if r.pos != bytes.len() {
        return Err(CheckpointError::TrailingBytes(bytes.len() - r.pos));
    }
    Ok(match kind {
        ModelKind::Hamiltonian => Model::Hamiltonian(potential(&layers, input_dim)?),
        ModelKind::Dissipative => {
            let hamiltonian = potential(&layers[..3], input_dim)?;
            let dissipation = potential(&layers[3..], input_dim)?;
            if dissipation.hidden() != hamiltonian.hidden() {
                return Err(CheckpointError::Shape("subnetwork widths differ".into()));
            }
            Model::Dissipative {
                hamiltonian,
                dissipation,
            }
        }
        ModelKind::Baseline => {
            let h = layers[0].rows();
            expect_shape(&layers[0], h, input_dim, "layer1")?;
            expect_shape(&layers[1], h, h, "layer2")?;
            expect_shape(&layers[2], 2, h, "head")?;
            Model::Baseline(DirectNet {
                layer1: layers[0].clone(),
                layer2: layers[1].clone(),
                head: layers[2].clone(),
            })
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn small(kind: ModelKind, seed: u64) -> Model {
        Model::init_with_width(kind, 3, 6, seed).unwrap()
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(seed in any::<u64>(), k in 0u8..3, dim in 2usize..4) {
            let kind = ModelKind::from_tag(k).unwrap();
            let m = Model::init_with_width(kind, dim, 5, seed).unwrap();
            let back = Model::deserialize(&m.serialize()).unwrap();
            prop_assert_eq!(
                m.params().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                back.params().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
            );
            prop_assert_eq!(back.kind(), kind);
            prop_assert_eq!(back.input_dim(), dim);
        }
    }

    #[test]
    fn header_corruption_is_detected() {
        let bytes = small(ModelKind::Hamiltonian, 1).serialize();

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert_eq!(Model::deserialize(&bad), Err(CheckpointError::BadMagic));

        let mut bad = bytes.clone();
        bad[8] = 9;
        assert_eq!(Model::deserialize(&bad), Err(CheckpointError::Version { found: 9 }));

        let mut bad = bytes.clone();
        bad[12] = 7;
        assert_eq!(Model::deserialize(&bad), Err(CheckpointError::UnknownKind(7)));

        // Claim a 2-output head on an hnn checkpoint: rows field of the last layer.
        let mut bad = bytes.clone();
        bad[12] = 0;
        assert!(matches!(Model::deserialize(&bad), Err(CheckpointError::Shape(_))));

        assert!(matches!(
            Model::deserialize(&bytes[..bytes.len() - 3]),
            Err(CheckpointError::Truncated { .. })
        ));
        let mut long = bytes.clone();
        long.push(0);
        assert_eq!(Model::deserialize(&long), Err(CheckpointError::TrailingBytes(1)));
    }

    #[test]
    fn dissipative_checkpoint_holds_two_potentials() {
        let bytes = small(ModelKind::Dissipative, 3).serialize();
        assert_eq!(u32::from_le_bytes(bytes[17..21].try_into().unwrap()), 6);
        let Model::Dissipative { hamiltonian, dissipation } = Model::deserialize(&bytes).unwrap() else {
            panic!("kind lost in round trip");
        };
        assert_eq!(hamiltonian.param_count(), dissipation.param_count());
    }
}
