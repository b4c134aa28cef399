//! `NFRNET1` model files.
//!
//! Layout: the 8-byte magic `NFRNET1\n`, a UTF-8 JSON header terminated by a
//! NUL byte, then the weight blobs as little-endian `f64`. Each weighted
//! layer's header entry carries the blob's byte offset (relative to the first
//! byte after the NUL) and its element count.

use serde::{Deserialize, Serialize};

use crate::error::{NfrError, Result};
use crate::net::{Layer, Network};
use crate::tensor::{Shape, Tensor};

const MAGIC: &[u8; 8] = b"NFRNET1\n";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format: String,
    input_shape: Vec<usize>,
    class_count: usize,
    init: String,
    layers: Vec<LayerHeader>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum LayerHeader {
    Dense {
        shape: Vec<usize>,
        relu: bool,
        offset: usize,
        len: usize,
    },
    Conv2d {
        shape: Vec<usize>,
        stride: usize,
        padding: usize,
        relu: bool,
        offset: usize,
        len: usize,
    },
    #[serde(rename = "maxpool2d")]
    MaxPool2d { size: usize, stride: usize },
    Flatten,
}

pub fn save_model(net: &Network) -> Result<Vec<u8>> {
    let mut blob = Vec::new();
    let mut layers = Vec::with_capacity(net.depth());
    for layer in net.layers() {
        let mut push = |w: &Tensor| {
            let offset = blob.len();
            for v in w.data() {
                blob.extend_from_slice(&v.to_le_bytes());
            }
            (w.dims().to_vec(), offset, w.numel())
        };
        layers.push(match layer {
            Layer::Dense { weights, relu } => {
                let (shape, offset, len) = push(weights);
                LayerHeader::Dense { shape, relu: *relu, offset, len }
            }
            Layer::Conv2d { weights, stride, padding, relu } => {
                let (shape, offset, len) = push(weights);
                LayerHeader::Conv2d {
                    shape,
                    stride: *stride,
                    padding: *padding,
                    relu: *relu,
                    offset,
                    len,
                }
            }
            Layer::MaxPool2d { size, stride } => LayerHeader::MaxPool2d { size: *size, stride: *stride },
            Layer::Flatten => LayerHeader::Flatten,
        });
    }
    let header = Header {
        format: "NFRNET1".into(),
        input_shape: net.input_shape().dims().to_vec(),
        class_count: net.class_count(),
        init: net.init().to_string(),
        layers,
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(MAGIC.len() + json.len() + 1 + blob.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&json);
    out.push(0);
    out.extend_from_slice(&blob);
    Ok(out)
}

pub fn load_model(bytes: &[u8]) -> Result<Network> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(NfrError::MagicMismatch { expected: "NFRNET1\\n" });
    }
    let rest = &bytes[MAGIC.len()..];
    let nul = rest
        .iter()
        .position(|&b| b == 0)
        .ok_or_else(|| NfrError::Truncated("model header (no NUL terminator)".into()))?;
    let header: Header = serde_json::from_slice(&rest[..nul])
        .map_err(|e| NfrError::BadHeader(e.to_string()))?;
    if header.format != "NFRNET1" {
        return Err(NfrError::BadHeader(format!("format field is {:?}", header.format)));
    }
    let blob = &rest[nul + 1..];
    let read = |index: usize, shape: &[usize], offset: usize, len: usize| -> Result<Tensor> {
        let shape = Shape::new(shape.to_vec())
            .map_err(|e| NfrError::BadHeader(format!("layer {index}: {e}")))?;
        if shape.numel() != len {
            return Err(NfrError::BadHeader(format!(
                "layer {index}: shape {shape} disagrees with len {len}"
            )));
        }
        let bytes = blob
            .get(offset..offset + 8 * len)
            .ok_or_else(|| NfrError::Truncated(format!("weights of layer {index}")))?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Tensor::new(shape, data)
    };
    let mut layers = Vec::with_capacity(header.layers.len());
    for (i, lh) in header.layers.iter().enumerate() {
        let index = i + 1;
        layers.push(match lh {
            LayerHeader::Dense { shape, relu, offset, len } => Layer::Dense {
                weights: read(index, shape, *offset, *len)?,
                relu: *relu,
            },
            LayerHeader::Conv2d { shape, stride, padding, relu, offset, len } => Layer::Conv2d {
                weights: read(index, shape, *offset, *len)?,
                stride: *stride,
                padding: *padding,
                relu: *relu,
            },
            LayerHeader::MaxPool2d { size, stride } => Layer::MaxPool2d { size: *size, stride: *stride },
            LayerHeader::Flatten => Layer::Flatten,
        });
    }
    let input_shape = Shape::new(header.input_shape).map_err(|e| NfrError::BadHeader(e.to_string()))?;
    let net = Network::new(input_shape, layers, header.init)
        .map_err(|e| NfrError::BadHeader(format!("inconsistent shapes: {e}")))?;
    if net.class_count() != header.class_count {
        return Err(NfrError::BadHeader(format!(
            "class_count {} but final layer has {} outputs",
            header.class_count,
            net.class_count()
        )));
    }
    Ok(net)
}

impl Network {
    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        std::fs::write(path, save_model(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Network> {
        load_model(&std::fs::read(path)?)
    }
}
