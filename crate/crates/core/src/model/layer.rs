//! Integer threshold layers. The forward path only compares, selects signs and
//! adds; [`OpCounter`] tallies those operations so tests can confirm that no
//! data multiplication ever happens.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::IntTensor;
use crate::threshold_math::Polarity;

pub const ACC_MIN: i32 = -128;
pub const ACC_MAX: i32 = 127;

/// Threshold that fires for every representable input.
pub const ALWAYS_FIRE: ThresholdConnection = ThresholdConnection {
    polarity: Polarity::Positive,
    threshold: i16::MIN,
};
/// Threshold that never fires for any activation below `i16::MAX`.
pub const NEVER_FIRE: ThresholdConnection = ThresholdConnection {
    polarity: Polarity::Positive,
    threshold: i16::MAX,
};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpCounter {
    pub comparisons: u64,
    pub additions: u64,
    pub multiplications: u64,
}

impl OpCounter {
    pub fn merge(&mut self, other: &OpCounter) {
        self.comparisons += other.comparisons;
        self.additions += other.additions;
        self.multiplications += other.multiplications;
    }
}

/// Exported form of one `Sign(w a + b)` edge.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ThresholdConnection {
    pub polarity: Polarity,
    pub threshold: i16,
}

impl ThresholdConnection {
    pub fn new(polarity: Polarity, threshold: i16) -> Self {
        Self {
            polarity,
            threshold,
        }
    }
}

/// +1 when the comparator fires, -1 otherwise.
#[inline]
pub fn connection_activate(c: ThresholdConnection, a: i16) -> i32 {
    let fire = match c.polarity {
        Polarity::Positive => a >= c.threshold,
        Polarity::Negative => a <= c.threshold,
    };
    if fire {
        1
    } else {
        -1
    }
}

#[inline]
pub fn saturate_sum(sum: i32) -> i32 {
    sum.clamp(ACC_MIN, ACC_MAX)
}

pub fn neuron_forward(
    connections: &[ThresholdConnection],
    inputs: &[i16],
    saturate: bool,
    ops: &mut OpCounter,
) -> Result<i32> {
    if connections.len() != inputs.len() {
        return Err(Error::LengthMismatch {
            expected: connections.len(),
            got: inputs.len(),
        });
    }
    let sum = accumulate(connections, inputs);
    ops.comparisons += inputs.len() as u64;
    ops.additions += inputs.len() as u64;
    Ok(if saturate { saturate_sum(sum) } else { sum })
}

#[inline]
fn accumulate(connections: &[ThresholdConnection], inputs: &[i16]) -> i32 {
    connections
        .iter()
        .zip(inputs)
        .map(|(&c, &a)| connection_activate(c, a))
        .sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ThresholdKind {
    Linear {
        in_features: usize,
        out_features: usize,
    },
    /// 3x3 kernel, stride 1, zero padding 1.
    Conv2d {
        in_channels: usize,
        out_channels: usize,
    },
}

impl ThresholdKind {
    /// Connections summed by one output neuron.
    pub fn fan_in(&self) -> usize {
        match *self {
            ThresholdKind::Linear { in_features, .. } => in_features,
            ThresholdKind::Conv2d { in_channels, .. } => in_channels * 9,
        }
    }

    pub fn outputs(&self) -> usize {
        match *self {
            ThresholdKind::Linear { out_features, .. } => out_features,
            ThresholdKind::Conv2d { out_channels, .. } => out_channels,
        }
    }

    pub fn connection_count(&self) -> usize {
        self.fan_in() * self.outputs()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThresholdLayer {
    kind: ThresholdKind,
    /// Row-major `[out][fan_in]`; for conv the fan-in index is `(c, kh, kw)`.
    connections: Vec<ThresholdConnection>,
    saturate: bool,
}

impl ThresholdLayer {
    pub fn new(
        kind: ThresholdKind,
        connections: Vec<ThresholdConnection>,
        saturate: bool,
    ) -> Result<Self> {
        if kind.fan_in() == 0 || kind.outputs() == 0 {
            return Err(Error::Model(format!(
                "layer with empty dimension: {kind:?}"
            )));
        }
        if connections.len() != kind.connection_count() {
            return Err(Error::LengthMismatch {
                expected: kind.connection_count(),
                got: connections.len(),
            });
        }
        Ok(Self {
            kind,
            connections,
            saturate,
        })
    }

    pub fn filled(kind: ThresholdKind, c: ThresholdConnection, saturate: bool) -> Result<Self> {
        Self::new(kind, vec![c; kind.connection_count()], saturate)
    }

    pub fn kind(&self) -> ThresholdKind {
        self.kind
    }

    pub fn connections(&self) -> &[ThresholdConnection] {
        &self.connections
    }

    pub fn saturate(&self) -> bool {
        self.saturate
    }

    pub fn set_saturate(&mut self, on: bool) {
        self.saturate = on;
    }

    /// Connections of output neuron / output channel `o`.
    pub fn row(&self, o: usize) -> &[ThresholdConnection] {
        let n = self.kind.fan_in();
        &self.connections[o * n..(o + 1) * n]
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match self.kind {
            ThresholdKind::Linear {
                in_features,
                out_features,
            } => {
                let numel: usize = input.iter().product();
                if numel != in_features {
                    return Err(shape_err(format!("{in_features} features"), input));
                }
                Ok(vec![out_features])
            }
            ThresholdKind::Conv2d {
                in_channels,
                out_channels,
            } => match *input {
                [c, h, w] if c == in_channels => Ok(vec![out_channels, h, w]),
                _ => Err(shape_err(format!("[{in_channels}, H, W]"), input)),
            },
        }
    }

    pub fn forward(&self, x: &IntTensor, ops: &mut OpCounter) -> Result<IntTensor> {
        let out_shape = self.output_shape(x.shape())?;
        let data = match self.kind {
            ThresholdKind::Linear { out_features, .. } => {
                let mut out = Vec::with_capacity(out_features);
                for o in 0..out_features {
                    out.push(neuron_forward(self.row(o), x.data(), self.saturate, ops)? as i16);
                }
                out
            }
            ThresholdKind::Conv2d {
                in_channels,
                out_channels,
            } => {
                let (h, w) = (x.shape()[1], x.shape()[2]);
                let mut out = Vec::with_capacity(out_channels * h * w);
                let mut window = vec![0i16; in_channels * 9];
                for o in 0..out_channels {
                    let row = self.row(o);
                    for y in 0..h {
                        for xx in 0..w {
                            im2col_window(x.data(), in_channels, h, w, y, xx, &mut window);
                            out.push(neuron_forward(row, &window, self.saturate, ops)? as i16);
                        }
                    }
                }
                out
            }
        };
        IntTensor::new(out_shape, data)
    }
}

/// Gathers the zero-padded 3x3 receptive field at `(y, x)` in `(c, kh, kw)` order.
pub fn im2col_window(
    data: &[i16],
    channels: usize,
    h: usize,
    w: usize,
    y: usize,
    x: usize,
    window: &mut [i16],
) {
    let mut idx = 0;
    for c in 0..channels {
        let plane = &data[c * h * w..(c + 1) * h * w];
        for ky in 0..3 {
            let sy = y + ky;
            for kx in 0..3 {
                let sx = x + kx;
                // padded coordinates are shifted by one
                window[idx] = if sy >= 1 && sy <= h && sx >= 1 && sx <= w {
                    plane[(sy - 1) * w + (sx - 1)]
                } else {
                    0
                };
                idx += 1;
            }
        }
    }
}

fn shape_err(expected: String, got: &[usize]) -> Error {
    Error::ShapeMismatch {
        expected,
        got: format!("{got:?}"),
    }
}

pub fn maxpool_output_shape(input: &[usize]) -> Result<Vec<usize>> {
    match *input {
        [c, h, w] => {
            if h % 2 != 0 || w % 2 != 0 {
                return Err(Error::OddSpatial {
                    height: h,
                    width: w,
                });
            }
            Ok(vec![c, h / 2, w / 2])
        }
        _ => Err(shape_err("[C, H, W]".into(), input)),
    }
}

/// 2x2 window, stride 2, no padding.
pub fn maxpool_forward(x: &IntTensor, ops: &mut OpCounter) -> Result<IntTensor> {
    let out_shape = maxpool_output_shape(x.shape())?;
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (oh, ow) = (h / 2, w / 2);
    let d = x.data();
    let mut out = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        let plane = &d[ch * h * w..(ch + 1) * h * w];
        for y in 0..oh {
            for xx in 0..ow {
                let r0 = 2 * y * w + 2 * xx;
                let r1 = r0 + w;
                let m = plane[r0]
                    .max(plane[r0 + 1])
                    .max(plane[r1])
                    .max(plane[r1 + 1]);
                out.push(m);
            }
        }
    }
    ops.comparisons += 3 * out.len() as u64;
    IntTensor::new(out_shape, out)
}
