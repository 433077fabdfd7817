//! Binary model file.
//!
//! ```text
//! "BIKA" | version u16 | arch name (u16 length + UTF-8) | layer count u16
//! per layer: kind u8 (0 linear, 1 conv2d, 2 maxpool)
//!            dims u32... (linear: in, out; conv2d: in_ch, out_ch; maxpool: none)
//!            saturate u8
//!            threshold layers only: polarity bitmap, ceil(n / 8) bytes,
//!            LSB first, 1 = positive; then n thresholds as i16
//! ```
//!
//! All integers little-endian. A JSON sidecar mirrors the structure for
//! inspection; the binary is authoritative.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::{
    ArchName, Architecture, BikaModel, InputSpec, Layer, ThresholdConnection, ThresholdKind,
    ThresholdLayer,
};
use crate::error::{Error, Result};
use crate::threshold_math::Polarity;

pub const MAGIC: &[u8; 4] = b"BIKA";
pub const VERSION: u16 = 1;

const KIND_LINEAR: u8 = 0;
const KIND_CONV2D: u8 = 1;
const KIND_MAXPOOL: u8 = 2;

pub fn encode(model: &BikaModel) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let name = model.arch_name().as_str().as_bytes();
    out.extend_from_slice(&(name.len() as u16).to_le_bytes());
    out.extend_from_slice(name);
    let count = u16::try_from(model.layers().len())
        .map_err(|_| Error::DimensionOverflow("more than 65535 layers".into()))?;
    out.extend_from_slice(&count.to_le_bytes());

    for layer in model.layers() {
        match layer {
            Layer::MaxPool => {
                out.push(KIND_MAXPOOL);
                out.push(0);
            }
            Layer::Threshold(t) => {
                let (kind, dims) = match t.kind() {
                    ThresholdKind::Linear {
                        in_features,
                        out_features,
                    } => (KIND_LINEAR, [in_features, out_features]),
                    ThresholdKind::Conv2d {
                        in_channels,
                        out_channels,
                    } => (KIND_CONV2D, [in_channels, out_channels]),
                };
                out.push(kind);
                for d in dims {
                    let d = u32::try_from(d)
                        .map_err(|_| Error::DimensionOverflow(format!("dimension {d}")))?;
                    out.extend_from_slice(&d.to_le_bytes());
                }
                out.push(t.saturate() as u8);
                let conns = t.connections();
                let mut bitmap = vec![0u8; conns.len().div_ceil(8)];
                for (i, c) in conns.iter().enumerate() {
                    if c.polarity == Polarity::Positive {
                        bitmap[i / 8] |= 1 << (i % 8);
                    }
                }
                out.extend_from_slice(&bitmap);
                for c in conns {
                    out.extend_from_slice(&c.threshold.to_le_bytes());
                }
            }
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Malformed {
                offset: self.buf.len() as u64,
                reason: format!("unexpected end of file, needed {n} bytes at {}", self.pos),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn malformed(&self, reason: impl Into<String>) -> Error {
        Error::Malformed {
            offset: self.pos as u64,
            reason: reason.into(),
        }
    }
}

pub fn decode(bytes: &[u8]) -> Result<BikaModel> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let magic = r
        .take(4)
        .map_err(|_| Error::Version("file too short for magic".into()))?;
    if magic != MAGIC {
        return Err(Error::Version(format!(
            "bad magic {magic:02x?}, not a BIKA model"
        )));
    }
    let version = r.u16()?;
    if version != VERSION {
        return Err(Error::Version(format!(
            "file version {version}, supported {VERSION}"
        )));
    }
    let name_len = r.u16()? as usize;
    let name_at = r.pos;
    let name = std::str::from_utf8(r.take(name_len)?).map_err(|_| Error::Malformed {
        offset: name_at as u64,
        reason: "arch name is not UTF-8".into(),
    })?;
    let arch: ArchName = name.parse().map_err(|_| Error::Malformed {
        offset: name_at as u64,
        reason: format!("unknown arch '{name}'"),
    })?;

    let count = r.u16()? as usize;
    let mut layers = Vec::with_capacity(count);
    for _ in 0..count {
        let kind_at = r.pos;
        let kind = match r.u8()? {
            KIND_LINEAR => Some(ThresholdKind::Linear {
                in_features: r.u32()?,
                out_features: r.u32()?,
            }),
            KIND_CONV2D => Some(ThresholdKind::Conv2d {
                in_channels: r.u32()?,
                out_channels: r.u32()?,
            }),
            KIND_MAXPOOL => None,
            other => {
                return Err(Error::Malformed {
                    offset: kind_at as u64,
                    reason: format!("unknown layer kind {other}"),
                })
            }
        };
        let saturate = match r.u8()? {
            0 => false,
            1 => true,
            other => return Err(r.malformed(format!("saturate flag {other}"))),
        };
        let Some(kind) = kind else {
            layers.push(Layer::MaxPool);
            continue;
        };
        let n = kind
            .fan_in()
            .checked_mul(kind.outputs())
            .filter(|&n| n > 0 && n <= bytes.len() * 8)
            .ok_or_else(|| r.malformed(format!("implausible layer dims {kind:?}")))?;
        let bitmap = r.take(n.div_ceil(8))?;
        let raw = r.take(2 * n)?;
        let conns = raw
            .chunks_exact(2)
            .enumerate()
            .map(|(i, b)| {
                let polarity = if bitmap[i / 8] >> (i % 8) & 1 == 1 {
                    Polarity::Positive
                } else {
                    Polarity::Negative
                };
                ThresholdConnection::new(polarity, i16::from_le_bytes([b[0], b[1]]))
            })
            .collect();
        layers.push(Layer::Threshold(ThresholdLayer::new(
            kind, conns, saturate,
        )?));
    }
    if r.pos != bytes.len() {
        return Err(r.malformed(format!("{} trailing bytes", bytes.len() - r.pos)));
    }

    let input = restore_input_spec(arch, &layers)?;
    BikaModel::new(arch, input, layers).map_err(|e| Error::Malformed {
        offset: 0,
        reason: e.to_string(),
    })
}

fn restore_input_spec(arch: ArchName, layers: &[Layer]) -> Result<InputSpec> {
    if arch != ArchName::Custom {
        return Ok(Architecture::preset(arch)?.input);
    }
    let shape = match layers.first() {
        Some(Layer::Threshold(t)) => match t.kind() {
            ThresholdKind::Linear { in_features, .. } => vec![in_features],
            ThresholdKind::Conv2d { in_channels, .. } => vec![in_channels, 0, 0],
        },
        Some(Layer::MaxPool) => vec![0, 0, 0],
        None => vec![0],
    };
    Ok(InputSpec::pixels(shape))
}

pub fn save_model(model: &BikaModel, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode(model)?)?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<BikaModel> {
    decode(&fs::read(path)?)
}

pub fn sidecar_path(model_path: impl AsRef<Path>) -> PathBuf {
    model_path.as_ref().with_extension("json")
}

#[derive(Serialize)]
struct SidecarLayer {
    kind: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    dims: Option<[usize; 2]>,
    saturate: bool,
    connections: usize,
    positive_polarity: usize,
    threshold_min: Option<i16>,
    threshold_max: Option<i16>,
}

#[derive(Serialize)]
struct Sidecar {
    format: &'static str,
    version: u16,
    arch: ArchName,
    structure: String,
    input_shape: Vec<usize>,
    connections: usize,
    layers: Vec<SidecarLayer>,
}

pub fn sidecar_json(model: &BikaModel) -> Result<String> {
    let layers = model
        .layers()
        .iter()
        .map(|l| match l {
            Layer::MaxPool => SidecarLayer {
                kind: "maxpool",
                dims: None,
                saturate: false,
                connections: 0,
                positive_polarity: 0,
                threshold_min: None,
                threshold_max: None,
            },
            Layer::Threshold(t) => {
                let (kind, dims) = match t.kind() {
                    ThresholdKind::Linear {
                        in_features,
                        out_features,
                    } => ("linear", [in_features, out_features]),
                    ThresholdKind::Conv2d {
                        in_channels,
                        out_channels,
                    } => ("conv2d", [in_channels, out_channels]),
                };
                let c = t.connections();
                SidecarLayer {
                    kind,
                    dims: Some(dims),
                    saturate: t.saturate(),
                    connections: c.len(),
                    positive_polarity: c
                        .iter()
                        .filter(|c| c.polarity == Polarity::Positive)
                        .count(),
                    threshold_min: c.iter().map(|c| c.threshold).min(),
                    threshold_max: c.iter().map(|c| c.threshold).max(),
                }
            }
        })
        .collect();
    let doc = Sidecar {
        format: "BIKA",
        version: VERSION,
        arch: model.arch_name(),
        structure: model.architecture().describe(),
        input_shape: model.input_spec().shape.clone(),
        connections: model.connection_count(),
        layers,
    };
    Ok(serde_json::to_string_pretty(&doc).expect("sidecar serializes"))
}

/// Writes the binary model and its JSON sidecar.
pub fn save_with_sidecar(model: &BikaModel, path: impl AsRef<Path>) -> Result<PathBuf> {
    save_model(model, &path)?;
    let side = sidecar_path(&path);
    fs::write(&side, sidecar_json(model)?)?;
    Ok(side)
}
