//! Clock-by-clock model of an output-stationary systolic array.
//!
//! Row `r` of the left operand enters column 0 skewed by `r` cycles and moves
//! one PE right per cycle; column `c` of the top operand enters row 0 skewed
//! by `c` cycles and moves one PE down per cycle. A PE accumulates whenever
//! both operands arrive. After the last PE has consumed its final operand the
//! accumulators shift out one column per cycle, then the activation unit runs.
//! Cycle counts come from stepping this state machine, not from the closed
//! form in [`super::cost`].

use std::collections::HashMap;

use super::SimOps;
use crate::model::layer::saturate_sum;
use crate::model::{connection_activate, ThresholdConnection};

/// PE arithmetic. `k` is the operand index within the reduction.
pub trait Datapath {
    type Row: Copy;
    type Col: Copy;
    fn step(&self, k: usize, acc: &mut i32, a: Self::Row, w: Self::Col, ops: &mut SimOps);
}

pub struct CacDatapath;

impl Datapath for CacDatapath {
    type Row = i16;
    type Col = ThresholdConnection;

    #[inline]
    fn step(&self, _k: usize, acc: &mut i32, a: i16, w: ThresholdConnection, ops: &mut SimOps) {
        *acc += connection_activate(w, a);
        ops.comparisons += 1;
        ops.additions += 1;
    }
}

/// SIMD-8 XNOR followed by a popcount accumulate; the accumulator holds the
/// number of agreeing bits.
pub struct XnorDatapath {
    pub bits: usize,
}

impl Datapath for XnorDatapath {
    type Row = u8;
    type Col = u8;

    #[inline]
    fn step(&self, k: usize, acc: &mut i32, a: u8, w: u8, ops: &mut SimOps) {
        let lanes = (self.bits - 8 * k).min(8);
        let mask = if lanes == 8 { 0xff } else { (1u8 << lanes) - 1 };
        *acc += (!(a ^ w) & mask).count_ones() as i32;
        ops.xnor_bit_ops += lanes as u64;
        ops.additions += 1;
    }
}

pub struct MacDatapath;

impl Datapath for MacDatapath {
    type Row = i16;
    type Col = i8;

    #[inline]
    fn step(&self, _k: usize, acc: &mut i32, a: i16, w: i8, ops: &mut SimOps) {
        *acc += a as i32 * w as i32;
        ops.multiplications += 1;
        ops.additions += 1;
    }
}

/// Operands without values, for timing-only runs.
pub struct TimingDatapath;

impl Datapath for TimingDatapath {
    type Row = ();
    type Col = ();

    #[inline]
    fn step(&self, _k: usize, _acc: &mut i32, _a: (), _w: (), _ops: &mut SimOps) {}
}

/// Post-drain processing of one output column.
#[derive(Clone, Copy, Debug)]
pub enum ColumnActivation<'a> {
    /// Accumulator passes through, optionally clamped to 8 bits.
    Identity { saturate: bool },
    /// `+1` if `2 * agreeing - bits >= threshold`, else `-1`.
    Sign { threshold: i32, bits: usize },
    /// Count of table entries `<= acc`, minus 128, clamped to 8 bits.
    Table { thresholds: &'a [i32] },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PassCycles {
    pub compute: u64,
    pub drain: u64,
    pub activation: u64,
}

impl PassCycles {
    pub fn total(&self) -> u64 {
        self.compute + self.drain + self.activation
    }
}

#[derive(Clone, Copy)]
struct Token<T> {
    k: usize,
    value: Option<T>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ActivationMode {
    None,
    Sign,
    Table,
}

pub struct SystolicArray {
    pub rows: usize,
    pub cols: usize,
}

impl SystolicArray {
    pub fn new(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "array must be at least 1x1");
        Self { rows, cols }
    }

    /// Runs one tile. `rows`/`cols` hold the operand stream of each array
    /// row/column, or `None` for lanes left idle at the matrix edge; idle
    /// lanes still carry timing bubbles. Returns `out[r][c]` for live PEs.
    #[allow(clippy::too_many_arguments)]
    pub fn run_pass<D: Datapath>(
        &self,
        dp: &D,
        k_eff: usize,
        rows: &[Option<&[D::Row]>],
        cols: &[Option<&[D::Col]>],
        activation: &[Option<ColumnActivation<'_>>],
        mode: ActivationMode,
        ops: &mut SimOps,
    ) -> (Vec<Vec<Option<i32>>>, PassCycles) {
        let (nr, nc) = (self.rows, self.cols);
        assert_eq!(rows.len(), nr);
        assert_eq!(cols.len(), nc);
        assert!(k_eff > 0);

        let mut acc = vec![0i32; nr * nc];
        let mut a_reg: Vec<Option<Token<D::Row>>> = vec![None; nr * nc];
        let mut w_reg: Vec<Option<Token<D::Col>>> = vec![None; nr * nc];
        let mut finished = 0usize;
        let mut cycle = 0usize;

        while finished < nr * nc {
            // walk bottom-right to top-left so neighbours still hold last cycle's operands
            for r in (0..nr).rev() {
                for c in (0..nc).rev() {
                    let a_in = if c == 0 {
                        cycle.checked_sub(r).filter(|&k| k < k_eff).map(|k| Token {
                            k,
                            value: rows[r].map(|s| s[k]),
                        })
                    } else {
                        a_reg[r * nc + c - 1]
                    };
                    let w_in = if r == 0 {
                        cycle.checked_sub(c).filter(|&k| k < k_eff).map(|k| Token {
                            k,
                            value: cols[c].map(|s| s[k]),
                        })
                    } else {
                        w_reg[(r - 1) * nc + c]
                    };
                    if let (Some(a), Some(w)) = (a_in, w_in) {
                        debug_assert_eq!(a.k, w.k, "operands out of step");
                        if let (Some(av), Some(wv)) = (a.value, w.value) {
                            dp.step(a.k, &mut acc[r * nc + c], av, wv, ops);
                        }
                        if a.k + 1 == k_eff {
                            finished += 1;
                        }
                    }
                    a_reg[r * nc + c] = a_in;
                    w_reg[r * nc + c] = w_in;
                }
            }
            cycle += 1;
        }
        let compute = cycle as u64;

        // drain: the rightmost column leaves first, the rest shift right
        let mut drained: Vec<Option<Vec<i32>>> = vec![None; nc];
        let mut drain = 0u64;
        let mut lanes: Vec<Vec<i32>> = (0..nc)
            .map(|c| (0..nr).map(|r| acc[r * nc + c]).collect())
            .collect();
        for step in 0..nc {
            let leaving = lanes.pop().expect("one column per drain cycle");
            drained[nc - 1 - step] = Some(leaving);
            drain += 1;
        }

        let live = |r: usize, c: usize| rows[r].is_some() && cols[c].is_some();
        let mut out = vec![vec![None; nc]; nr];
        let mut act_cycles = 0u64;
        match mode {
            ActivationMode::None => {
                for c in 0..nc {
                    let col = drained[c].as_ref().unwrap();
                    for r in 0..nr {
                        if live(r, c) {
                            let v = match activation[c] {
                                Some(ColumnActivation::Identity { saturate: true }) => {
                                    saturate_sum(col[r])
                                }
                                _ => col[r],
                            };
                            out[r][c] = Some(v);
                        }
                    }
                }
            }
            ActivationMode::Sign => {
                // one cycle loads every column's threshold
                act_cycles += 1;
                ops.threshold_loads += activation.iter().filter(|a| a.is_some()).count() as u64;
                for c in 0..nc {
                    act_cycles += 1;
                    let col = drained[c].as_ref().unwrap();
                    for r in 0..nr {
                        if let (true, Some(ColumnActivation::Sign { threshold, bits })) =
                            (live(r, c), activation[c])
                        {
                            ops.comparisons += 1;
                            let dot = 2 * col[r] - bits as i32;
                            out[r][c] = Some(if dot >= threshold { 1 } else { -1 });
                        }
                    }
                }
            }
            ActivationMode::Table => {
                // one column's table per cycle
                let mut tables: Vec<Option<&[i32]>> = vec![None; nc];
                for c in 0..nc {
                    act_cycles += 1;
                    if let Some(ColumnActivation::Table { thresholds }) = activation[c] {
                        ops.threshold_loads += thresholds.len() as u64;
                        tables[c] = Some(thresholds);
                    }
                }
                let levels = super::cost::QNN_LEVELS as usize;
                let mut counts = vec![0i32; nr * nc];
                // a single comparator per output walks the table serially
                for j in 0..levels {
                    act_cycles += 1;
                    for c in 0..nc {
                        let (Some(table), Some(col)) = (tables[c], drained[c].as_ref()) else {
                            continue;
                        };
                        for r in 0..nr {
                            if live(r, c) {
                                ops.comparisons += 1;
                                counts[r * nc + c] += (table[j] <= col[r]) as i32;
                            }
                        }
                    }
                }
                for c in 0..nc {
                    for r in 0..nr {
                        if live(r, c) {
                            out[r][c] = Some(saturate_sum(counts[r * nc + c] - 128));
                        }
                    }
                }
            }
        }
        (
            out,
            PassCycles {
                compute,
                drain,
                activation: act_cycles,
            },
        )
    }

    /// Cycles for one pass of reduction length `k_eff`, stepping the engine
    /// with value-free operands. Results are cached per tile shape.
    pub fn timing_pass(
        &self,
        k_eff: usize,
        live_rows: usize,
        live_cols: usize,
        mode: ActivationMode,
        cache: &mut TimingCache,
    ) -> PassCycles {
        let key = (self.rows, self.cols, k_eff, live_rows, live_cols, mode);
        if let Some(&hit) = cache.passes.get(&key) {
            return hit;
        }
        let stream = vec![(); k_eff];
        let rows: Vec<Option<&[()]>> = (0..self.rows)
            .map(|r| (r < live_rows).then_some(stream.as_slice()))
            .collect();
        let cols: Vec<Option<&[()]>> = (0..self.cols)
            .map(|c| (c < live_cols).then_some(stream.as_slice()))
            .collect();
        let dummy = [0i32; 256];
        let act: Vec<Option<ColumnActivation>> = (0..self.cols)
            .map(|c| {
                (c < live_cols).then_some(match mode {
                    ActivationMode::None => ColumnActivation::Identity { saturate: false },
                    ActivationMode::Sign => ColumnActivation::Sign {
                        threshold: 0,
                        bits: 0,
                    },
                    ActivationMode::Table => ColumnActivation::Table { thresholds: &dummy },
                })
            })
            .collect();
        let mut ops = SimOps::default();
        let (_, cycles) = self.run_pass(&TimingDatapath, k_eff, &rows, &cols, &act, mode, &mut ops);
        cache.passes.insert(key, cycles);
        cycles
    }
}

#[derive(Default)]
pub struct TimingCache {
    passes: HashMap<(usize, usize, usize, usize, usize, ActivationMode), PassCycles>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::threshold_math::Polarity;

    #[test]
    fn single_pe_matches_dot_product() {
        let array = SystolicArray::new(1, 1);
        let a = [3i16, -1, 4];
        let w = [2i8, 5, -1];
        let mut ops = SimOps::default();
        let act = [Some(ColumnActivation::Identity { saturate: false })];
        let (out, cycles) = array.run_pass(
            &MacDatapath,
            3,
            &[Some(&a)],
            &[Some(&w)],
            &act,
            ActivationMode::None,
            &mut ops,
        );
        assert_eq!(out[0][0], Some(6 - 5 - 4));
        assert_eq!(
            cycles,
            PassCycles {
                compute: 3,
                drain: 1,
                activation: 0
            }
        );
        assert_eq!(ops.multiplications, 3);
    }

    #[test]
    fn skewed_tile_keeps_operands_aligned() {
        let array = SystolicArray::new(2, 3);
        let x0 = [5i16, 0];
        let x1 = [-2i16, 7];
        let c = |t| ThresholdConnection::new(Polarity::Positive, t);
        let cols: Vec<Vec<ThresholdConnection>> =
            vec![vec![c(1), c(1)], vec![c(6), c(-5)], vec![c(0), c(8)]];
        let col_refs: Vec<Option<&[ThresholdConnection]>> =
            vec![Some(&cols[0]), Some(&cols[1]), None];
        let act = [Some(ColumnActivation::Identity { saturate: true }); 3];
        let mut ops = SimOps::default();
        let (out, cycles) = array.run_pass(
            &CacDatapath,
            2,
            &[Some(&x0), Some(&x1)],
            &col_refs,
            &act,
            ActivationMode::None,
            &mut ops,
        );
        // row 0: (5>=1)+(0>=1) = 0, (5>=6)+(0>=-5) = 0; row 1: (-2>=1)+(7>=1) = 0, (-2>=6)+(7>=-5) = 0
        assert_eq!(
            out,
            vec![vec![Some(0), Some(0), None], vec![Some(0), Some(0), None]]
        );
        assert_eq!(cycles.compute, 2 + 1 + 2);
        assert_eq!(cycles.drain, 3);
        assert_eq!(ops.comparisons, 8);
    }

    #[test]
    fn xnor_masks_partial_words() {
        let dp = XnorDatapath { bits: 11 };
        let mut acc = 0;
        let mut ops = SimOps::default();
        dp.step(0, &mut acc, 0b1010_1010, 0b1010_1010, &mut ops);
        dp.step(1, &mut acc, 0b0000_0000, 0b0000_0001, &mut ops);
        assert_eq!(acc, 8 + 2);
        assert_eq!(ops.xnor_bit_ops, 11);
    }
}
