use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::layer::{maxpool_output_shape, ThresholdKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArchName {
    Tfc,
    Sfc,
    Lfc,
    Cnv,
    Custom,
}

impl ArchName {
    pub const PRESETS: [ArchName; 4] = [ArchName::Tfc, ArchName::Sfc, ArchName::Lfc, ArchName::Cnv];

    pub fn as_str(self) -> &'static str {
        match self {
            ArchName::Tfc => "tfc",
            ArchName::Sfc => "sfc",
            ArchName::Lfc => "lfc",
            ArchName::Cnv => "cnv",
            ArchName::Custom => "custom",
        }
    }
}

impl fmt::Display for ArchName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ArchName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tfc" => Ok(ArchName::Tfc),
            "sfc" => Ok(ArchName::Sfc),
            "lfc" => Ok(ArchName::Lfc),
            "cnv" => Ok(ArchName::Cnv),
            "custom" => Ok(ArchName::Custom),
            other => Err(Error::Config(format!(
                "unknown architecture '{other}' (presets: tfc, sfc, lfc, cnv)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LayerSpec {
    Linear {
        in_features: usize,
        out_features: usize,
    },
    Conv2d {
        in_channels: usize,
        out_channels: usize,
    },
    MaxPool,
}

impl LayerSpec {
    pub fn threshold_kind(&self) -> Option<ThresholdKind> {
        match *self {
            LayerSpec::Linear {
                in_features,
                out_features,
            } => Some(ThresholdKind::Linear {
                in_features,
                out_features,
            }),
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
            } => Some(ThresholdKind::Conv2d {
                in_channels,
                out_channels,
            }),
            LayerSpec::MaxPool => None,
        }
    }

    pub fn from_kind(kind: ThresholdKind) -> Self {
        match kind {
            ThresholdKind::Linear {
                in_features,
                out_features,
            } => LayerSpec::Linear {
                in_features,
                out_features,
            },
            ThresholdKind::Conv2d {
                in_channels,
                out_channels,
            } => LayerSpec::Conv2d {
                in_channels,
                out_channels,
            },
        }
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match self.threshold_kind() {
            Some(kind) => shape_through(kind, input),
            None => maxpool_output_shape(input),
        }
    }

    /// Short name in the `F64` / `C64` / `P2` notation.
    pub fn label(&self) -> String {
        match *self {
            LayerSpec::Linear { out_features, .. } => format!("F{out_features}"),
            LayerSpec::Conv2d { out_channels, .. } => format!("C{out_channels}"),
            LayerSpec::MaxPool => "P2".into(),
        }
    }
}

fn shape_through(kind: ThresholdKind, input: &[usize]) -> Result<Vec<usize>> {
    match kind {
        ThresholdKind::Linear {
            in_features,
            out_features,
        } => {
            let numel: usize = input.iter().product();
            if input.contains(&0) || numel == in_features {
                Ok(vec![out_features])
            } else {
                Err(Error::ShapeMismatch {
                    expected: format!("{in_features} features"),
                    got: format!("{input:?}"),
                })
            }
        }
        ThresholdKind::Conv2d {
            in_channels,
            out_channels,
        } => match *input {
            [c, h, w] if c == in_channels => Ok(vec![out_channels, h, w]),
            _ => Err(Error::ShapeMismatch {
                expected: format!("[{in_channels}, H, W]"),
                got: format!("{input:?}"),
            }),
        },
    }
}

/// Expected model input. A zero dimension is unknown and matches anything.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputSpec {
    pub shape: Vec<usize>,
    pub min: i16,
    pub max: i16,
}

impl InputSpec {
    pub fn pixels(shape: Vec<usize>) -> Self {
        Self {
            shape,
            min: 0,
            max: 255,
        }
    }

    pub fn accepts(&self, shape: &[usize]) -> bool {
        let known = !self.shape.contains(&0);
        if known && self.shape.len() == 1 {
            return shape.iter().product::<usize>() == self.shape[0];
        }
        self.shape.len() == shape.len()
            && self
                .shape
                .iter()
                .zip(shape)
                .all(|(&e, &g)| e == 0 || e == g)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub name: ArchName,
    pub input: InputSpec,
    pub layers: Vec<LayerSpec>,
}

impl Architecture {
    pub fn preset(name: ArchName) -> Result<Self> {
        use LayerSpec::*;
        let mlp = |widths: &[usize]| {
            let mut layers = Vec::new();
            let mut prev = 784;
            for &w in widths {
                layers.push(Linear {
                    in_features: prev,
                    out_features: w,
                });
                prev = w;
            }
            Architecture {
                name,
                input: InputSpec::pixels(vec![1, 28, 28]),
                layers,
            }
        };
        Ok(match name {
            ArchName::Tfc => mlp(&[64, 32, 10]),
            ArchName::Sfc => mlp(&[256, 256, 256, 10]),
            ArchName::Lfc => mlp(&[1024, 1024, 1024, 10]),
            ArchName::Cnv => {
                let conv = |i, o| Conv2d {
                    in_channels: i,
                    out_channels: o,
                };
                Architecture {
                    name,
                    input: InputSpec::pixels(vec![3, 32, 32]),
                    layers: vec![
                        conv(3, 64),
                        conv(64, 64),
                        MaxPool,
                        conv(64, 128),
                        conv(128, 128),
                        MaxPool,
                        conv(128, 256),
                        conv(256, 256),
                        MaxPool,
                        Linear {
                            in_features: 256 * 4 * 4,
                            out_features: 512,
                        },
                        Linear {
                            in_features: 512,
                            out_features: 512,
                        },
                        Linear {
                            in_features: 512,
                            out_features: 10,
                        },
                    ],
                }
            }
            ArchName::Custom => {
                return Err(Error::Config("custom architectures have no preset".into()))
            }
        })
    }

    /// `F64/F32/F10` style description.
    pub fn describe(&self) -> String {
        self.layers
            .iter()
            .map(LayerSpec::label)
            .collect::<Vec<_>>()
            .join("/")
    }

    /// Shape entering each layer followed by the final output shape.
    pub fn shapes(&self) -> Result<Vec<Vec<usize>>> {
        let mut shapes = vec![self.input.shape.clone()];
        for layer in &self.layers {
            let next = layer.output_shape(shapes.last().unwrap())?;
            shapes.push(next);
        }
        Ok(shapes)
    }

    pub fn validate(&self) -> Result<()> {
        self.shapes().map(|_| ())
    }

    pub fn output_len(&self) -> Result<usize> {
        Ok(self.shapes()?.last().unwrap().iter().product())
    }
}
