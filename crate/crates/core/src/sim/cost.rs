//! Closed-form cycle counts for one matmul on an output-stationary array.

use serde::{Deserialize, Serialize};

use super::PeKind;
use crate::error::{Error, Result};

/// Threshold table size of the 8-bit baseline.
pub const QNN_LEVELS: u64 = 256;
/// Bit lanes per XNOR-popcount PE operation.
pub const BNN_LANES: u64 = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatmulShape {
    /// Batch rows streamed through the array rows.
    pub b: u64,
    /// Reduction length.
    pub k: u64,
    /// Outputs streamed through the array columns.
    pub m: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CycleBreakdown {
    pub passes: u64,
    pub k_eff: u64,
    pub cycles_per_pass: u64,
    pub total: u64,
}

pub fn k_eff(pe: PeKind, k: u64) -> u64 {
    match pe {
        PeKind::BikaCac | PeKind::QnnMac => k,
        PeKind::BnnXnorPopcount => k.div_ceil(BNN_LANES),
    }
}

pub fn activation_phase(pe: PeKind, cols: u64) -> u64 {
    match pe {
        PeKind::BikaCac => 0,
        PeKind::BnnXnorPopcount => cols + 1,
        PeKind::QnnMac => cols + QNN_LEVELS,
    }
}

pub fn matmul_cycles(
    pe: PeKind,
    rows: u64,
    cols: u64,
    shape: MatmulShape,
) -> Result<CycleBreakdown> {
    if rows == 0 || cols == 0 {
        return Err(Error::Config(format!(
            "array must be at least 1x1, got {rows}x{cols}"
        )));
    }
    if shape.b == 0 || shape.k == 0 || shape.m == 0 {
        return Err(Error::Config(format!("empty matmul {shape:?}")));
    }
    let overflow = || Error::DimensionOverflow(format!("{shape:?} on {rows}x{cols}"));
    let passes = shape
        .b
        .div_ceil(rows)
        .checked_mul(shape.m.div_ceil(cols))
        .ok_or_else(overflow)?;
    let k_eff = k_eff(pe, shape.k);
    let cycles_per_pass = k_eff
        .checked_add(rows - 1)
        .and_then(|v| v.checked_add(cols - 1))
        .and_then(|v| v.checked_add(cols))
        .and_then(|v| v.checked_add(activation_phase(pe, cols)))
        .ok_or_else(overflow)?;
    let total = passes.checked_mul(cycles_per_pass).ok_or_else(overflow)?;
    Ok(CycleBreakdown {
        passes,
        k_eff,
        cycles_per_pass,
        total,
    })
}

/// One output per cycle on the scalar pooling unit.
pub fn maxpool_cycles(outputs: u64) -> u64 {
    outputs
}
