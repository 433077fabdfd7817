//! Integer-only BiKA networks: every edge is one learnable threshold and every
//! neuron sums the resulting +1/-1 outputs.

pub mod arch;
pub mod format;
pub mod layer;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use arch::{ArchName, Architecture, InputSpec, LayerSpec};
pub use layer::{
    connection_activate, maxpool_forward, neuron_forward, OpCounter, ThresholdConnection,
    ThresholdKind, ThresholdLayer, ALWAYS_FIRE, NEVER_FIRE,
};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::tensor::IntTensor;
use crate::threshold_math::Polarity;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Layer {
    Threshold(ThresholdLayer),
    MaxPool,
}

impl Layer {
    pub fn spec(&self) -> LayerSpec {
        match self {
            Layer::Threshold(t) => LayerSpec::from_kind(t.kind()),
            Layer::MaxPool => LayerSpec::MaxPool,
        }
    }

    pub fn forward(&self, x: &IntTensor, ops: &mut OpCounter) -> Result<IntTensor> {
        match self {
            Layer::Threshold(t) => t.forward(x, ops),
            Layer::MaxPool => maxpool_forward(x, ops),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BikaModel {
    arch: ArchName,
    input: InputSpec,
    layers: Vec<Layer>,
}

impl BikaModel {
    pub fn new(arch: ArchName, input: InputSpec, layers: Vec<Layer>) -> Result<Self> {
        let model = Self {
            arch,
            input,
            layers,
        };
        model.architecture().validate()?;
        Ok(model)
    }

    /// Builds `arch` with every connection set to `c`.
    pub fn uniform(arch: &Architecture, c: ThresholdConnection, saturate: bool) -> Result<Self> {
        Self::from_fn(arch, saturate, |_| c)
    }

    /// Seeded random thresholds; first-layer thresholds span the pixel range,
    /// hidden ones the saturated accumulator range.
    pub fn random<R: Rng>(arch: &Architecture, saturate: bool, rng: &mut R) -> Result<Self> {
        let mut first = true;
        let mut layers = Vec::with_capacity(arch.layers.len());
        for spec in &arch.layers {
            match spec.threshold_kind() {
                Some(kind) => {
                    let (lo, hi) = if first {
                        (arch.input.min, arch.input.max)
                    } else {
                        (-40, 40)
                    };
                    first = false;
                    let conns = (0..kind.connection_count())
                        .map(|_| {
                            let polarity = if rng.gen_bool(0.5) {
                                Polarity::Positive
                            } else {
                                Polarity::Negative
                            };
                            ThresholdConnection::new(polarity, rng.gen_range(lo..=hi))
                        })
                        .collect();
                    layers.push(Layer::Threshold(ThresholdLayer::new(
                        kind, conns, saturate,
                    )?));
                }
                None => layers.push(Layer::MaxPool),
            }
        }
        Self::new(arch.name, arch.input.clone(), layers)
    }

    fn from_fn<F: FnMut(usize) -> ThresholdConnection>(
        arch: &Architecture,
        saturate: bool,
        mut f: F,
    ) -> Result<Self> {
        let mut layers = Vec::with_capacity(arch.layers.len());
        for (i, spec) in arch.layers.iter().enumerate() {
            layers.push(match spec.threshold_kind() {
                Some(kind) => Layer::Threshold(ThresholdLayer::new(
                    kind,
                    (0..kind.connection_count()).map(|_| f(i)).collect(),
                    saturate,
                )?),
                None => Layer::MaxPool,
            });
        }
        Self::new(arch.name, arch.input.clone(), layers)
    }

    pub fn arch_name(&self) -> ArchName {
        self.arch
    }

    pub fn input_spec(&self) -> &InputSpec {
        &self.input
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn threshold_layers(&self) -> impl Iterator<Item = &ThresholdLayer> {
        self.layers.iter().filter_map(|l| match l {
            Layer::Threshold(t) => Some(t),
            Layer::MaxPool => None,
        })
    }

    pub fn connection_count(&self) -> usize {
        self.threshold_layers().map(|t| t.connections().len()).sum()
    }

    pub fn set_saturate(&mut self, on: bool) {
        for l in &mut self.layers {
            if let Layer::Threshold(t) = l {
                t.set_saturate(on);
            }
        }
    }

    pub fn architecture(&self) -> Architecture {
        Architecture {
            name: self.arch,
            input: self.input.clone(),
            layers: self.layers.iter().map(Layer::spec).collect(),
        }
    }

    pub fn forward(&self, x: &IntTensor) -> Result<IntTensor> {
        self.forward_counted(x, &mut OpCounter::default())
    }

    pub fn forward_counted(&self, x: &IntTensor, ops: &mut OpCounter) -> Result<IntTensor> {
        if !self.input.accepts(x.shape()) {
            return Err(Error::ShapeMismatch {
                expected: format!("{:?}", self.input.shape),
                got: format!("{:?}", x.shape()),
            });
        }
        let mut cur = x.clone();
        for layer in &self.layers {
            cur = layer.forward(&cur, ops)?;
        }
        Ok(cur)
    }

    pub fn classify(&self, x: &IntTensor) -> Result<usize> {
        Ok(self.forward(x)?.argmax())
    }

    pub fn forward_batch(
        &self,
        inputs: &[IntTensor],
        exec: Exec,
    ) -> Result<(Vec<IntTensor>, OpCounter)> {
        let results = exec.map(inputs, |x| {
            let mut ops = OpCounter::default();
            self.forward_counted(x, &mut ops).map(|y| (y, ops))
        });
        let mut total = OpCounter::default();
        let mut outs = Vec::with_capacity(results.len());
        for r in results {
            let (y, ops) = r?;
            total.merge(&ops);
            outs.push(y);
        }
        Ok((outs, total))
    }
}

/// Full-model forward, the free-function form of [`BikaModel::forward`].
pub fn model_forward(m: &BikaModel, x: &IntTensor) -> Result<IntTensor> {
    m.forward(x)
}
