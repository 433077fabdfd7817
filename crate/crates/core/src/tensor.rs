use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major 16-bit integer tensor carrying activations between layers.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct IntTensor {
    shape: Vec<usize>,
    data: Vec<i16>,
}

impl IntTensor {
    pub fn new(shape: Vec<usize>, data: Vec<i16>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::ShapeMismatch {
                expected: "positive dimensions".into(),
                got: format!("{shape:?}"),
            });
        }
        if numel != data.len() {
            return Err(Error::LengthMismatch {
                expected: numel,
                got: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![0; n],
        }
    }

    pub fn from_u8(shape: Vec<usize>, pixels: &[u8]) -> Result<Self> {
        Self::new(shape, pixels.iter().map(|&p| p as i16).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[i16] {
        &self.data
    }

    pub fn into_data(self) -> Vec<i16> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Lowest index among the maxima.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.data.iter().enumerate() {
            if v > self.data[best] {
                best = i;
            }
        }
        best
    }

    /// Splits a leading batch dimension into per-sample tensors.
    pub fn unbatch(&self) -> Result<Vec<IntTensor>> {
        if self.shape.len() < 2 {
            return Err(Error::ShapeMismatch {
                expected: "[N, ...] batch".into(),
                got: format!("{:?}", self.shape),
            });
        }
        let inner: Vec<usize> = self.shape[1..].to_vec();
        let step: usize = inner.iter().product();
        Ok(self
            .data
            .chunks(step)
            .map(|c| IntTensor {
                shape: inner.clone(),
                data: c.to_vec(),
            })
            .collect())
    }

    pub fn batch(samples: &[IntTensor]) -> Result<IntTensor> {
        let first = samples.first().ok_or(Error::EmptyDataset)?;
        let mut shape = vec![samples.len()];
        shape.extend_from_slice(&first.shape);
        let mut data = Vec::with_capacity(first.len() * samples.len());
        for s in samples {
            if s.shape != first.shape {
                return Err(Error::ShapeMismatch {
                    expected: format!("{:?}", first.shape),
                    got: format!("{:?}", s.shape),
                });
            }
            data.extend_from_slice(&s.data);
        }
        Ok(IntTensor { shape, data })
    }
}
