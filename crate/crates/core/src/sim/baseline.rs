//! Synthetic BNN and 8-bit QNN workloads with the same layer dimensions as a
//! BiKA architecture, plus straightforward scalar reference forwards.

use std::str::FromStr;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::layer::{im2col_window, maxpool_forward, saturate_sum, OpCounter};
use crate::model::{ArchName, Architecture, LayerSpec, ThresholdKind};
use crate::tensor::IntTensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineKind {
    Bnn,
    Qnn,
}

impl FromStr for BaselineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bnn" => Ok(BaselineKind::Bnn),
            "qnn" => Ok(BaselineKind::Qnn),
            other => Err(Error::Config(format!(
                "unknown baseline kind '{other}' (expected bnn or qnn)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BnnLayer {
    pub kind: ThresholdKind,
    /// `[out][fan_in]` sign bits, `true` for `+1`.
    pub weights: Vec<bool>,
    /// One threshold per output on the `{-1,+1}` dot product.
    pub thresholds: Vec<i32>,
    /// Activation level binarized to `+1`; `0` for hidden layers.
    pub input_threshold: i16,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QnnLayer {
    pub kind: ThresholdKind,
    pub weights: Vec<i8>,
    /// Ascending 256-entry table per output.
    pub thresholds: Vec<Vec<i32>>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum BaselineLayer {
    Bnn(BnnLayer),
    Qnn(QnnLayer),
    MaxPool,
}

/// How a workload file names its layer dimensions: a preset name or a full
/// architecture.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WorkloadDims {
    Preset(ArchName),
    Custom(Architecture),
}

impl WorkloadDims {
    pub fn architecture(&self) -> Result<Architecture> {
        match self {
            WorkloadDims::Preset(name) => Architecture::preset(*name),
            WorkloadDims::Custom(arch) => {
                arch.validate()?;
                Ok(arch.clone())
            }
        }
    }
}

/// The `{kind, dims, seed}` workload file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadSpec {
    pub kind: BaselineKind,
    pub dims: WorkloadDims,
    pub seed: u64,
}

impl WorkloadSpec {
    pub fn build(&self) -> Result<BaselineWorkload> {
        BaselineWorkload::synthetic(self.kind, &self.dims.architecture()?, self.seed)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BaselineWorkload {
    pub kind: BaselineKind,
    pub arch: Architecture,
    pub layers: Vec<BaselineLayer>,
}

impl BaselineWorkload {
    pub fn synthetic(kind: BaselineKind, arch: &Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut first = true;
        let mut layers = Vec::with_capacity(arch.layers.len());
        for spec in &arch.layers {
            let Some(tk) = spec.threshold_kind() else {
                layers.push(BaselineLayer::MaxPool);
                continue;
            };
            let (n, outs, fan_in) = (tk.connection_count(), out_channels(tk), tk.fan_in() as f64);
            layers.push(match kind {
                BaselineKind::Bnn => {
                    let spread = fan_in.sqrt().ceil() as i32;
                    let input_threshold = if first {
                        midpoint(arch.input.min, arch.input.max)
                    } else {
                        0
                    };
                    BaselineLayer::Bnn(BnnLayer {
                        kind: tk,
                        weights: (0..n).map(|_| rng.gen_bool(0.5)).collect(),
                        thresholds: (0..outs).map(|_| rng.gen_range(-spread..=spread)).collect(),
                        input_threshold,
                    })
                }
                BaselineKind::Qnn => {
                    let weights: Vec<i8> = (0..n).map(|_| rng.gen_range(-127..=127)).collect();
                    // table spans about one accumulator standard deviation; 73 ~ 127/sqrt(3)
                    let amax = if first {
                        arch.input
                            .max
                            .unsigned_abs()
                            .max(arch.input.min.unsigned_abs())
                    } else {
                        128
                    };
                    let spread = (amax as f64 * 73.0 * fan_in.sqrt() / 2.0).ceil() as i32;
                    let thresholds = (0..outs)
                        .map(|_| {
                            let mut t: Vec<i32> =
                                (0..256).map(|_| rng.gen_range(-spread..=spread)).collect();
                            t.sort_unstable();
                            t
                        })
                        .collect();
                    BaselineLayer::Qnn(QnnLayer {
                        kind: tk,
                        weights,
                        thresholds,
                    })
                }
            });
            first = false;
        }
        Ok(Self {
            kind,
            arch: arch.clone(),
            layers,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        if self.layers.len() != self.arch.layers.len() {
            return Err(Error::LengthMismatch {
                expected: self.arch.layers.len(),
                got: self.layers.len(),
            });
        }
        for (spec, layer) in self.arch.layers.iter().zip(&self.layers) {
            let ok = match (spec, layer) {
                (LayerSpec::MaxPool, BaselineLayer::MaxPool) => true,
                (_, BaselineLayer::Bnn(l)) => {
                    self.kind == BaselineKind::Bnn
                        && spec.threshold_kind() == Some(l.kind)
                        && l.weights.len() == l.kind.connection_count()
                        && l.thresholds.len() == out_channels(l.kind)
                }
                (_, BaselineLayer::Qnn(l)) => {
                    self.kind == BaselineKind::Qnn
                        && spec.threshold_kind() == Some(l.kind)
                        && l.weights.len() == l.kind.connection_count()
                        && l.thresholds.len() == out_channels(l.kind)
                        && l.thresholds
                            .iter()
                            .all(|t| t.len() == 256 && t.windows(2).all(|p| p[0] <= p[1]))
                }
                _ => false,
            };
            if !ok {
                return Err(Error::Model(format!(
                    "baseline layer does not match {spec:?}"
                )));
            }
        }
        Ok(())
    }

    /// Scalar reference forward, independent of the array engine.
    pub fn reference_forward(&self, x: &IntTensor) -> Result<IntTensor> {
        let mut cur = x.clone();
        for layer in &self.layers {
            cur = match layer {
                BaselineLayer::MaxPool => maxpool_forward(&cur, &mut OpCounter::default())?,
                BaselineLayer::Bnn(l) => bnn_reference(l, &cur)?,
                BaselineLayer::Qnn(l) => qnn_reference(l, &cur)?,
            };
        }
        Ok(cur)
    }
}

fn midpoint(lo: i16, hi: i16) -> i16 {
    ((lo as i32 + hi as i32 + 1) / 2) as i16
}

pub(crate) fn out_channels(kind: ThresholdKind) -> usize {
    match kind {
        ThresholdKind::Linear { out_features, .. } => out_features,
        ThresholdKind::Conv2d { out_channels, .. } => out_channels,
    }
}

/// Rows of the lowered matmul: one per linear input, one per conv pixel.
pub(crate) fn lowered_rows(
    kind: ThresholdKind,
    x: &IntTensor,
) -> Result<(Vec<Vec<i16>>, Vec<usize>)> {
    match kind {
        ThresholdKind::Linear {
            in_features,
            out_features,
        } => {
            if x.len() != in_features {
                return Err(Error::ShapeMismatch {
                    expected: format!("[{in_features}]"),
                    got: format!("{:?}", x.shape()),
                });
            }
            Ok((vec![x.data().to_vec()], vec![out_features]))
        }
        ThresholdKind::Conv2d {
            in_channels,
            out_channels,
        } => {
            let s = x.shape();
            if s.len() != 3 || s[0] != in_channels {
                return Err(Error::ShapeMismatch {
                    expected: format!("[{in_channels}, H, W]"),
                    got: format!("{s:?}"),
                });
            }
            let (h, w) = (s[1], s[2]);
            let mut rows = Vec::with_capacity(h * w);
            for y in 0..h {
                for xx in 0..w {
                    let mut win = vec![0i16; in_channels * 9];
                    im2col_window(x.data(), in_channels, h, w, y, xx, &mut win);
                    rows.push(win);
                }
            }
            Ok((rows, vec![out_channels, h, w]))
        }
    }
}

/// Scatters `out[row][m]` into the layer's output layout.
pub(crate) fn gather_output(
    kind: ThresholdKind,
    out: &[Vec<i32>],
    shape: Vec<usize>,
) -> Result<IntTensor> {
    let data = match kind {
        ThresholdKind::Linear { .. } => out[0].iter().map(|&v| v as i16).collect(),
        ThresholdKind::Conv2d { out_channels, .. } => {
            let mut d = Vec::with_capacity(out_channels * out.len());
            for o in 0..out_channels {
                d.extend(out.iter().map(|row| row[o] as i16));
            }
            d
        }
    };
    IntTensor::new(shape, data)
}

pub fn bnn_reference(l: &BnnLayer, x: &IntTensor) -> Result<IntTensor> {
    let (rows, shape) = lowered_rows(l.kind, x)?;
    let k = l.kind.fan_in();
    let out: Vec<Vec<i32>> = rows
        .iter()
        .map(|row| {
            (0..out_channels(l.kind))
                .map(|o| {
                    let w = &l.weights[o * k..(o + 1) * k];
                    let dot: i32 = row
                        .iter()
                        .zip(w)
                        .map(|(&a, &wb)| {
                            if (a >= l.input_threshold) == wb {
                                1
                            } else {
                                -1
                            }
                        })
                        .sum();
                    if dot >= l.thresholds[o] {
                        1
                    } else {
                        -1
                    }
                })
                .collect()
        })
        .collect();
    gather_output(l.kind, &out, shape)
}

pub fn qnn_reference(l: &QnnLayer, x: &IntTensor) -> Result<IntTensor> {
    let (rows, shape) = lowered_rows(l.kind, x)?;
    let k = l.kind.fan_in();
    let out: Vec<Vec<i32>> = rows
        .iter()
        .map(|row| {
            (0..out_channels(l.kind))
                .map(|o| {
                    let w = &l.weights[o * k..(o + 1) * k];
                    let acc: i32 = row
                        .iter()
                        .zip(w)
                        .map(|(&a, &wv)| a as i32 * wv as i32)
                        .sum();
                    let level = l.thresholds[o].iter().filter(|&&t| t <= acc).count() as i32;
                    saturate_sum(level - 128)
                })
                .collect()
        })
        .collect();
    gather_output(l.kind, &out, shape)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_workloads_match_dims() {
        for kind in [BaselineKind::Bnn, BaselineKind::Qnn] {
            for name in ArchName::PRESETS {
                let arch = Architecture::preset(name).unwrap();
                let w = BaselineWorkload::synthetic(kind, &arch, 3).unwrap();
                w.validate().unwrap();
                assert_eq!(w.arch, arch);
            }
        }
    }

    #[test]
    fn workload_spec_json() {
        let spec: WorkloadSpec =
            serde_json::from_str(r#"{"kind":"qnn","dims":"tfc","seed":4}"#).unwrap();
        assert_eq!(spec.dims, WorkloadDims::Preset(ArchName::Tfc));
        let a = spec.build().unwrap();
        assert_eq!(a, spec.build().unwrap());
        assert!(
            serde_json::from_str::<WorkloadSpec>(r#"{"kind":"mac","dims":"tfc","seed":4}"#)
                .is_err()
        );
    }

    #[test]
    fn bnn_reference_by_hand() {
        let l = BnnLayer {
            kind: ThresholdKind::Linear {
                in_features: 3,
                out_features: 2,
            },
            weights: vec![true, false, true, false, false, false],
            thresholds: vec![1, -1],
            input_threshold: 0,
        };
        let x = IntTensor::new(vec![3], vec![1, -1, -1]).unwrap();
        // signs: [+,-,-]; row0 agree [y,y,n] -> 1 >= 1; row1 [n,y,y] -> 1 >= -1
        assert_eq!(bnn_reference(&l, &x).unwrap().data(), &[1, 1]);
    }

    #[test]
    fn qnn_reference_by_hand() {
        let mut table: Vec<i32> = (0..256).map(|i| i - 128).collect();
        table.sort();
        let l = QnnLayer {
            kind: ThresholdKind::Linear {
                in_features: 2,
                out_features: 1,
            },
            weights: vec![3, -2],
            thresholds: vec![table],
        };
        let x = IntTensor::new(vec![2], vec![10, 4]).unwrap();
        // acc = 22; entries <= 22 are -128..=22, i.e. 151 of them
        assert_eq!(qnn_reference(&l, &x).unwrap().data(), &[151 - 128]);
    }
}
