use serde::{Deserialize, Serialize};

use super::shadow::{Grads, ShadowEntry, ShadowModel};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

pub enum Optimizer {
    Sgd,
    Adam {
        beta1: f64,
        beta2: f64,
        eps: f64,
        step: i32,
        m: Grads,
        v: Grads,
    },
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, model: &ShadowModel) -> Self {
        match kind {
            OptimizerKind::Sgd => Optimizer::Sgd,
            OptimizerKind::Adam => Optimizer::Adam {
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-8,
                step: 0,
                m: Grads::zeros_like(model),
                v: Grads::zeros_like(model),
            },
        }
    }

    pub fn step(&mut self, model: &mut ShadowModel, grads: &Grads, lr: f64) {
        match self {
            Optimizer::Sgd => {
                for (i, entry) in model.layers.iter_mut().enumerate() {
                    if let ShadowEntry::Threshold(t) = entry {
                        sgd(&mut t.weights, &grads.weights[i], lr);
                        sgd(&mut t.biases, &grads.biases[i], lr);
                    }
                }
            }
            Optimizer::Adam {
                beta1,
                beta2,
                eps,
                step,
                m,
                v,
            } => {
                *step += 1;
                let c1 = 1.0 - beta1.powi(*step);
                let c2 = 1.0 - beta2.powi(*step);
                let h = AdamHyper {
                    beta1: *beta1,
                    beta2: *beta2,
                    eps: *eps,
                    lr,
                    c1,
                    c2,
                };
                for (i, entry) in model.layers.iter_mut().enumerate() {
                    if let ShadowEntry::Threshold(t) = entry {
                        adam(
                            &mut t.weights,
                            &grads.weights[i],
                            &mut m.weights[i],
                            &mut v.weights[i],
                            &h,
                        );
                        adam(
                            &mut t.biases,
                            &grads.biases[i],
                            &mut m.biases[i],
                            &mut v.biases[i],
                            &h,
                        );
                    }
                }
            }
        }
    }
}

fn sgd(p: &mut [f64], g: &[f64], lr: f64) {
    p.iter_mut().zip(g).for_each(|(p, g)| *p -= lr * g);
}

struct AdamHyper {
    beta1: f64,
    beta2: f64,
    eps: f64,
    lr: f64,
    c1: f64,
    c2: f64,
}

fn adam(p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64], h: &AdamHyper) {
    for i in 0..p.len() {
        m[i] = h.beta1 * m[i] + (1.0 - h.beta1) * g[i];
        v[i] = h.beta2 * v[i] + (1.0 - h.beta2) * g[i] * g[i];
        let mhat = m[i] / h.c1;
        let vhat = v[i] / h.c2;
        p[i] -= h.lr * mhat / (vhat.sqrt() + h.eps);
    }
}
