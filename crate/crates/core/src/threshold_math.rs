//! Piecewise-constant functions and their decomposition into binary thresholds.
//!
//! A function with `t` half-open slots `[s_i, s_{i+1})` is rewritten as a sum of
//! `t` weighted step functions, each one `+alpha` at or above its threshold and
//! `-alpha` below it. Rounding the weights to integers and duplicating each
//! threshold `|alpha|` times yields a multiplier-free form whose size is the
//! quantization factor `m`; `m = 1` is a single learnable threshold.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sign of a unit threshold contribution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Polarity {
    Positive,
    Negative,
}

impl Polarity {
    pub fn of(v: f64) -> Self {
        if v < 0.0 {
            Polarity::Negative
        } else {
            Polarity::Positive
        }
    }

    pub fn as_i32(self) -> i32 {
        match self {
            Polarity::Positive => 1,
            Polarity::Negative => -1,
        }
    }

    /// Flips `v` for negative polarity. Only a sign selection, never a product.
    #[inline]
    pub fn apply(self, v: i32) -> i32 {
        match self {
            Polarity::Positive => v,
            Polarity::Negative => -v,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseConstantFn {
    boundaries: Vec<f64>,
    outputs: Vec<f64>,
}

impl PiecewiseConstantFn {
    pub fn new(boundaries: Vec<f64>, outputs: Vec<f64>) -> Result<Self> {
        if outputs.is_empty() {
            return Err(Error::InvalidFunction(
                "at least one slot is required".into(),
            ));
        }
        if boundaries.len() != outputs.len() + 1 {
            return Err(Error::InvalidFunction(format!(
                "{} boundaries for {} outputs, expected {}",
                boundaries.len(),
                outputs.len(),
                outputs.len() + 1
            )));
        }
        if boundaries.iter().chain(&outputs).any(|v| !v.is_finite()) {
            return Err(Error::InvalidFunction("values must be finite".into()));
        }
        if boundaries.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidFunction(
                "boundaries must be strictly increasing".into(),
            ));
        }
        Ok(Self {
            boundaries,
            outputs,
        })
    }

    /// Samples `target` at the left end of `slots` equal slots over `[lo, hi)`.
    pub fn sample<F: Fn(f64) -> f64>(target: F, lo: f64, hi: f64, slots: usize) -> Result<Self> {
        if slots == 0 {
            return Err(Error::InvalidFunction(
                "at least one slot is required".into(),
            ));
        }
        let step = (hi - lo) / slots as f64;
        let boundaries: Vec<f64> = (0..=slots)
            .map(|i| if i == slots { hi } else { lo + step * i as f64 })
            .collect();
        let outputs = boundaries[..slots].iter().map(|&s| target(s)).collect();
        Self::new(boundaries, outputs)
    }

    pub fn boundaries(&self) -> &[f64] {
        &self.boundaries
    }

    pub fn outputs(&self) -> &[f64] {
        &self.outputs
    }

    pub fn slots(&self) -> usize {
        self.outputs.len()
    }

    pub fn domain(&self) -> (f64, f64) {
        (
            self.boundaries[0],
            self.boundaries[self.boundaries.len() - 1],
        )
    }

    /// One probe per slot (its midpoint) plus every in-domain boundary.
    pub fn probe_points(&self) -> Vec<f64> {
        let mut probes = Vec::with_capacity(2 * self.slots());
        for w in self.boundaries.windows(2) {
            probes.push(w[0]);
            probes.push(w[0] + (w[1] - w[0]) / 2.0);
        }
        probes
    }
}

pub fn eval_piecewise(f: &PiecewiseConstantFn, x: f64) -> Result<f64> {
    let (lo, hi) = f.domain();
    if !(lo <= x && x < hi) {
        return Err(Error::Domain { x, lo, hi });
    }
    // first boundary strictly greater than x closes the slot
    let slot = f.boundaries.partition_point(|&s| s <= x) - 1;
    Ok(f.outputs[slot])
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightedThreshold {
    pub alpha: f64,
    pub threshold: f64,
}

pub fn eval_weighted_threshold(wt: &WeightedThreshold, x: f64) -> f64 {
    if x >= wt.threshold {
        wt.alpha
    } else {
        -wt.alpha
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct WeightedThresholdSet {
    pub items: Vec<WeightedThreshold>,
}

impl WeightedThresholdSet {
    pub fn alphas(&self) -> Vec<f64> {
        self.items.iter().map(|w| w.alpha).collect()
    }

    pub fn thresholds(&self) -> Vec<f64> {
        self.items.iter().map(|w| w.threshold).collect()
    }
}

/// Closed-form threshold weights: `alpha_0 = (O_0 + O_{t-1}) / 2` and
/// `alpha_i = (O_i - O_{i-1}) / 2`, thresholds at the left slot ends.
pub fn decompose(f: &PiecewiseConstantFn) -> WeightedThresholdSet {
    let o = &f.outputs;
    let t = o.len();
    let items = (0..t)
        .map(|i| {
            let alpha = if i == 0 {
                (o[0] + o[t - 1]) / 2.0
            } else {
                (o[i] - o[i - 1]) / 2.0
            };
            WeightedThreshold {
                alpha,
                threshold: f.boundaries[i],
            }
        })
        .collect();
    WeightedThresholdSet { items }
}

pub fn reconstruct(wts: &WeightedThresholdSet, x: f64) -> f64 {
    wts.items
        .iter()
        .map(|wt| eval_weighted_threshold(wt, x))
        .sum()
}

/// A unit threshold inside a mixed set: contributes `polarity * Thres(x)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixedThreshold {
    pub threshold: f64,
    pub polarity: Polarity,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixedThresholdSet {
    m: usize,
    items: Vec<MixedThreshold>,
}

impl MixedThresholdSet {
    pub fn new(items: Vec<MixedThreshold>) -> Result<Self> {
        if items.is_empty() {
            return Err(Error::EmptyMix);
        }
        Ok(Self {
            m: items.len(),
            items,
        })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn items(&self) -> &[MixedThreshold] {
        &self.items
    }

    /// Integer in `[-m, m]` with the parity of `m`.
    pub fn eval(&self, x: f64) -> i64 {
        self.items
            .iter()
            .map(|it| {
                let step = if x >= it.threshold { 1 } else { -1 };
                it.polarity.apply(step) as i64
            })
            .sum()
    }
}

/// Rounds every weight (ties away from zero) and duplicates each threshold
/// `|round(alpha)|` times with the sign of the rounded weight.
pub fn quantize_mix(wts: &WeightedThresholdSet) -> Result<MixedThresholdSet> {
    let mut items = Vec::new();
    for wt in &wts.items {
        let q = wt.alpha.round();
        let copies = q.abs() as usize;
        let polarity = Polarity::of(q);
        items.extend(std::iter::repeat_n(
            MixedThreshold {
                threshold: wt.threshold,
                polarity,
            },
            copies,
        ));
    }
    MixedThresholdSet::new(items)
}

/// Largest absolute deviation between `f` and the mixed reconstruction over
/// the probe points of `f`.
pub fn mixed_max_abs_error(f: &PiecewiseConstantFn, mixed: Option<&MixedThresholdSet>) -> f64 {
    f.probe_points()
        .into_iter()
        .map(|x| {
            let target = eval_piecewise(f, x).expect("probe inside domain");
            let approx = mixed.map_or(0, |m| m.eval(x)) as f64;
            (target - approx).abs()
        })
        .fold(0.0, f64::max)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffineSignParams {
    pub w: f64,
    pub beta: f64,
}

/// Threshold form of `Sign(w x + beta)`.
///
/// Positive polarity fires (+1) for `x >= threshold`, negative polarity fires
/// for `x <= threshold`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffineThreshold {
    pub threshold: f64,
    pub polarity: Polarity,
}

impl AffineThreshold {
    pub fn fire(&self, x: f64) -> i32 {
        let on = match self.polarity {
            Polarity::Positive => x >= self.threshold,
            Polarity::Negative => x <= self.threshold,
        };
        if on {
            1
        } else {
            -1
        }
    }
}

pub fn affine_to_threshold(p: AffineSignParams) -> Result<AffineThreshold> {
    if p.w == 0.0 {
        return Err(Error::DegenerateWeight);
    }
    Ok(AffineThreshold {
        threshold: -p.beta / p.w,
        polarity: Polarity::of(p.w),
    })
}

/// `Sign(w x + beta)` with `Sign(0) = +1`.
pub fn affine_sign(p: AffineSignParams, x: f64) -> i32 {
    if p.w * x + p.beta >= 0.0 {
        1
    } else {
        -1
    }
}
