//! Conversion of trained `(w, b)` pairs into integer threshold connections.
//!
//! The exported comparator must agree with `Sign(w a + b)` evaluated in the
//! same floating-point arithmetic the shadow forward uses, not only with the
//! real-number threshold `-b / w`. `fl(w a + b)` is monotone in `a`, so the
//! boundary is located by bisection over the 16-bit range and the natural
//! `ceil(-b/w)` / `floor(-b/w)` is kept wherever it is already exact.

use super::shadow::{ShadowEntry, ShadowModel};
use crate::error::{Error, Result};
use crate::model::{
    BikaModel, Layer, ThresholdConnection, ThresholdLayer, ALWAYS_FIRE, NEVER_FIRE,
};
use crate::threshold_math::Polarity;

/// Activations for which the export is exact. The outermost 16-bit values
/// belong to the always/never-fire sentinels.
pub const EXACT_MIN: i32 = i16::MIN as i32 + 1;
pub const EXACT_MAX: i32 = i16::MAX as i32 - 1;

/// `Sign(w a + b)` as evaluated during training.
#[inline]
pub fn shadow_sign(w: f64, b: f64, a: i32) -> i32 {
    if w * a as f64 + b >= 0.0 {
        1
    } else {
        -1
    }
}

fn to_i16(v: f64) -> i16 {
    // saturating cast
    v as i16
}

pub fn export_connection(w: f64, b: f64) -> Result<ThresholdConnection> {
    if !w.is_finite() || !b.is_finite() {
        return Err(Error::NonFinite { layer: 0, index: 0 });
    }
    if w == 0.0 {
        return Ok(if b >= 0.0 { ALWAYS_FIRE } else { NEVER_FIRE });
    }
    let fires = |a: i32| shadow_sign(w, b, a) == 1;
    let natural = -b / w;
    if w > 0.0 {
        // smallest firing activation
        if fires(EXACT_MIN) {
            return Ok(ThresholdConnection::new(
                Polarity::Positive,
                to_i16(natural.ceil()).min(EXACT_MIN as i16),
            ));
        }
        if !fires(EXACT_MAX) {
            return Ok(ThresholdConnection::new(
                Polarity::Positive,
                to_i16(natural.ceil()).max(EXACT_MAX as i16 + 1),
            ));
        }
        let (mut lo, mut hi) = (EXACT_MIN, EXACT_MAX);
        let guess = natural.ceil();
        if guess > lo as f64 && guess <= hi as f64 {
            let g = guess as i32;
            if fires(g) && !fires(g - 1) {
                return Ok(ThresholdConnection::new(Polarity::Positive, g as i16));
            }
        }
        // invariant: !fires(lo), fires(hi)
        while hi - lo > 1 {
            let mid = lo + (hi - lo) / 2;
            if fires(mid) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Ok(ThresholdConnection::new(Polarity::Positive, hi as i16))
    } else {
        // largest firing activation
        if fires(EXACT_MAX) {
            return Ok(ThresholdConnection::new(
                Polarity::Negative,
                to_i16(natural.floor()).max(EXACT_MAX as i16),
            ));
        }
        if !fires(EXACT_MIN) {
            return Ok(ThresholdConnection::new(
                Polarity::Negative,
                to_i16(natural.floor()).min(EXACT_MIN as i16 - 1),
            ));
        }
        let (mut lo, mut hi) = (EXACT_MIN, EXACT_MAX);
        let guess = natural.floor();
        if guess >= lo as f64 && guess < hi as f64 {
            let g = guess as i32;
            if fires(g) && !fires(g + 1) {
                return Ok(ThresholdConnection::new(Polarity::Negative, g as i16));
            }
        }
        // invariant: fires(lo), !fires(hi)
        while hi - lo > 1 {
            let mid = lo + (hi - lo) / 2;
            if fires(mid) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(ThresholdConnection::new(Polarity::Negative, lo as i16))
    }
}

pub fn export(shadow: &ShadowModel) -> Result<BikaModel> {
    let mut layers = Vec::with_capacity(shadow.layers.len());
    for (li, entry) in shadow.layers.iter().enumerate() {
        layers.push(match entry {
            ShadowEntry::MaxPool => Layer::MaxPool,
            ShadowEntry::Threshold(t) => {
                let conns = t
                    .weights
                    .iter()
                    .zip(&t.biases)
                    .enumerate()
                    .map(|(i, (&w, &b))| {
                        export_connection(w, b).map_err(|e| match e {
                            Error::NonFinite { .. } => Error::NonFinite {
                                layer: li,
                                index: i,
                            },
                            other => other,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                Layer::Threshold(ThresholdLayer::new(t.kind, conns, shadow.saturate)?)
            }
        });
    }
    BikaModel::new(shadow.arch.name, shadow.arch.input.clone(), layers)
}

#[derive(Clone, Debug, PartialEq, Eq, serde::Serialize)]
pub struct EquivalenceSummary {
    pub connections: usize,
    pub mismatches: usize,
    pub activation_min: i32,
    pub activation_max: i32,
}

impl EquivalenceSummary {
    pub fn passed(&self) -> bool {
        self.mismatches == 0
    }
}

/// Exhaustively compares every exported connection with `Sign(w a + b)` for
/// every integer `a` in `[lo, hi]`.
pub fn verify_export(
    shadow: &ShadowModel,
    model: &BikaModel,
    lo: i32,
    hi: i32,
) -> EquivalenceSummary {
    let mut connections = 0;
    let mut mismatches = 0;
    for (t, layer) in shadow.threshold_layers().zip(model.threshold_layers()) {
        for ((&w, &b), &c) in t.weights.iter().zip(&t.biases).zip(layer.connections()) {
            connections += 1;
            if !connection_matches(w, b, c, lo, hi) {
                mismatches += 1;
            }
        }
    }
    EquivalenceSummary {
        connections,
        mismatches,
        activation_min: lo,
        activation_max: hi,
    }
}

pub fn connection_matches(w: f64, b: f64, c: ThresholdConnection, lo: i32, hi: i32) -> bool {
    (lo..=hi).all(|a| crate::model::connection_activate(c, a as i16) == shadow_sign(w, b, a))
}
