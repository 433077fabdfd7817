use serde::Serialize;

use crate::datasets::Dataset;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::model::{BikaModel, OpCounter};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalResult {
    pub samples: usize,
    pub correct: usize,
    pub accuracy: f64,
    pub ops: OpCounter,
}

/// Integer-only test-set accuracy of an exported model.
pub fn evaluate_model(model: &BikaModel, d: &Dataset, exec: Exec) -> Result<EvalResult> {
    if d.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let idx: Vec<usize> = (0..d.len()).collect();
    let parts = exec.map_chunks(&idx, 64, |chunk| -> Result<(usize, OpCounter)> {
        let mut ops = OpCounter::default();
        let mut hits = 0;
        for &i in chunk {
            let scores = model.forward_counted(&d.image(i), &mut ops)?;
            hits += (scores.argmax() == d.label(i)) as usize;
        }
        Ok((hits, ops))
    });
    let mut correct = 0;
    let mut ops = OpCounter::default();
    for p in parts {
        let (h, o) = p?;
        correct += h;
        ops.merge(&o);
    }
    Ok(EvalResult {
        samples: d.len(),
        correct,
        accuracy: correct as f64 / d.len() as f64,
        ops,
    })
}
