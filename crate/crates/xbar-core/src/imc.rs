//! XNOR and AND encodings, partial wordline activation and output
//! post-processing.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use crate::adc::{quantize, AdcConfig};
use crate::crossbar::{ArraySolution, ColumnCurrents, CrossbarInstance, IterOptions};
use crate::device::{BitcellKind, CellState, MtjState};
use crate::error::{Error, Result};
use crate::units::Amps;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum ImcMode {
    /// Inputs and weights in {-1, +1}.
    Xnor,
    /// Inputs and weights in {0, 1}.
    And,
}

/// Which line combination is sensed for a kind.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sensing {
    BlbMinusBl,
    BlMinusBlb,
    SlbMinusSl,
    Blb,
    Slb,
    /// Source line minus the all-zero dummy column.
    SlMinusDummy,
}

/// How the digitized code turns into the group output.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Postprocess {
    /// O = 2 O' - sum(W).
    XnorShift,
    /// O = A.
    Identity,
    /// XNOR from an AND count: O = 4 A - 2 sum(In') - sum(W).
    XnorFromAnd,
    /// AND from a differential count: A = (O' + sum(In')) / 2.
    AndFromDifferential,
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ImcScheme {
    pub mode: ImcMode,
    /// Gain of the analog current subtractor.
    pub subtractor_gain: f64,
}

impl ImcScheme {
    pub const fn new(mode: ImcMode) -> Self {
        Self {
            mode,
            subtractor_gain: 1.0,
        }
    }

    pub fn sensing(&self, kind: BitcellKind) -> Sensing {
        match (kind, self.mode) {
            (BitcellKind::StrideI, ImcMode::Xnor) => Sensing::BlbMinusBl,
            (BitcellKind::StrideI, ImcMode::And) => Sensing::Blb,
            (BitcellKind::StrideII, ImcMode::Xnor) => Sensing::SlbMinusSl,
            (BitcellKind::StrideII, ImcMode::And) => Sensing::Slb,
            (BitcellKind::TwoT2Mtj, _) => Sensing::BlMinusBlb,
            (BitcellKind::OneT1Mtj, _) => Sensing::SlMinusDummy,
        }
    }

    pub fn postprocess(&self, kind: BitcellKind) -> Postprocess {
        match (kind, self.mode) {
            (BitcellKind::OneT1Mtj, ImcMode::Xnor) => Postprocess::XnorFromAnd,
            (BitcellKind::TwoT2Mtj, ImcMode::And) => Postprocess::AndFromDifferential,
            (_, ImcMode::Xnor) => Postprocess::XnorShift,
            (_, ImcMode::And) => Postprocess::Identity,
        }
    }

    /// Whether the digitized analog quantity can be negative.
    pub fn signed_output(&self, kind: BitcellKind) -> bool {
        !matches!(self.sensing(kind), Sensing::Blb | Sensing::Slb | Sensing::SlMinusDummy)
    }

    /// Whether the array carries an extra dummy column after the data columns.
    pub fn needs_dummy(&self, kind: BitcellKind) -> bool {
        kind == BitcellKind::OneT1Mtj
    }
}

/// In' = (In + 1) / 2.
pub fn encode_inputs_xnor(inputs: &[i8]) -> Result<Vec<u8>> {
    inputs
        .iter()
        .map(|&x| match x {
            -1 => Ok(0),
            1 => Ok(1),
            v => Err(Error::Domain {
                what: "XNOR input",
                value: v as i64,
            }),
        })
        .collect()
}

/// In = 2 In' - 1.
pub fn decode_inputs_xnor(bits: &[u8]) -> Vec<i8> {
    bits.iter().map(|&b| 2 * b as i8 - 1).collect()
}

/// Stored state for one logical weight. Weights are {-1, +1} in XNOR mode and
/// {0, 1} in AND mode; "+1" and "1" put MTJ_L in P (1T-1MTJ: the single MTJ).
pub fn map_weight(mode: ImcMode, kind: BitcellKind, w: i8) -> Result<CellState> {
    let one = match (mode, w) {
        (ImcMode::Xnor, 1) | (ImcMode::And, 1) => true,
        (ImcMode::Xnor, -1) | (ImcMode::And, 0) => false,
        (_, v) => {
            return Err(Error::Domain {
                what: "weight",
                value: v as i64,
            })
        }
    };
    let left = if one { MtjState::P } else { MtjState::Ap };
    Ok(match kind {
        BitcellKind::OneT1Mtj => CellState::Single(left),
        _ => CellState::pair(left),
    })
}

pub fn map_weights(mode: ImcMode, kind: BitcellKind, w: &[i8]) -> Result<Vec<CellState>> {
    w.iter().map(|&x| map_weight(mode, kind, x)).collect()
}

/// Cell states for an N x M weight matrix plus the dummy column when the
/// scheme needs one. The result has M or M + 1 columns, row-major.
pub fn array_states(scheme: &ImcScheme, kind: BitcellKind, rows: usize, cols: usize, w: &[i8]) -> Result<Vec<CellState>> {
    if w.len() != rows * cols {
        return Err(Error::Shape {
            what: "weight matrix",
            expected: rows * cols,
            got: w.len(),
        });
    }
    let mapped = map_weights(scheme.mode, kind, w)?;
    if !scheme.needs_dummy(kind) {
        return Ok(mapped);
    }
    let zero = CellState::Single(MtjState::Ap);
    let mut out = Vec::with_capacity(rows * (cols + 1));
    for r in 0..rows {
        out.extend_from_slice(&mapped[r * cols..(r + 1) * cols]);
        out.push(zero);
    }
    Ok(out)
}

/// O = 2 O' - sum(W).
pub fn postprocess_xnor(o_prime: i64, sum_w: i64) -> i64 {
    (o_prime << 1) - sum_w
}

pub fn dummy_column_correct(i_col: Amps, i_dummy: Amps) -> Amps {
    i_col - i_dummy
}

/// Two's-complement bit planes of 4-bit signed weights, least significant
/// plane first.
pub fn bit_slice_weights(w: &[i8]) -> Result<[Vec<u8>; 4]> {
    let mut planes: [Vec<u8>; 4] = Default::default();
    for p in planes.iter_mut() {
        p.reserve(w.len());
    }
    for &x in w {
        if !(-8..=7).contains(&x) {
            return Err(Error::Domain {
                what: "4-bit weight",
                value: x as i64,
            });
        }
        let u = (x as u8) & 0x0f;
        for (b, p) in planes.iter_mut().enumerate() {
            p.push((u >> b) & 1);
        }
    }
    Ok(planes)
}

/// Unsigned bit planes of 4-bit activations, least significant first.
pub fn bit_slice_inputs(x: &[u8]) -> Result<[Vec<u8>; 4]> {
    let mut planes: [Vec<u8>; 4] = Default::default();
    for &v in x {
        if v > 15 {
            return Err(Error::Domain {
                what: "4-bit input",
                value: v as i64,
            });
        }
        for (b, p) in planes.iter_mut().enumerate() {
            p.push((v >> b) & 1);
        }
    }
    Ok(planes)
}

/// Shift-add of AND outputs `o[i][j]` for input plane i and weight plane j.
/// The most significant weight plane carries weight -8.
pub fn bit_stream_accumulate(o: &[[i64; 4]; 4]) -> i64 {
    let mut acc = 0;
    for (i, row) in o.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            let term = v << (i + j);
            acc += if j == 3 { -term } else { term };
        }
    }
    acc
}

/// Rows asserted together, in array order.
pub fn pwa_groups(rows: usize, pwa: usize) -> Result<Vec<Range<usize>>> {
    if pwa == 0 {
        return Err(Error::Domain {
            what: "pwa",
            value: 0,
        });
    }
    Ok((0..rows).step_by(pwa).map(|s| s..(s + pwa).min(rows)).collect())
}

/// One column pass: inputs, grouping and the precomputed weight sums.
#[derive(Clone, Debug, PartialEq)]
pub struct ImcOperation {
    /// In' per row.
    pub inputs: Vec<u8>,
    pub pwa: usize,
    /// Sum of logical weights per (group, column), row-major by group.
    /// Only needed for the XNOR post-processing.
    pub sum_w: Vec<i64>,
}

impl ImcOperation {
    pub fn new(inputs: Vec<u8>, pwa: usize) -> Self {
        Self {
            inputs,
            pwa,
            sum_w: Vec::new(),
        }
    }

    /// Attach per-group weight sums of an N x M logical weight matrix.
    pub fn with_weight_sums(mut self, w: &[i8], cols: usize) -> Result<Self> {
        let rows = self.inputs.len();
        if w.len() != rows * cols {
            return Err(Error::Shape {
                what: "weight matrix",
                expected: rows * cols,
                got: w.len(),
            });
        }
        let groups = pwa_groups(rows, self.pwa)?;
        let mut s = vec![0i64; groups.len() * cols];
        for (g, range) in groups.iter().enumerate() {
            for r in range.clone() {
                for c in 0..cols {
                    s[g * cols + c] += w[r * cols + c] as i64;
                }
            }
        }
        self.sum_w = s;
        Ok(self)
    }

    pub fn validate(&self, rows: usize) -> Result<()> {
        if self.inputs.len() != rows {
            return Err(Error::Shape {
                what: "input vector",
                expected: rows,
                got: self.inputs.len(),
            });
        }
        if let Some(&b) = self.inputs.iter().find(|&&b| b > 1) {
            return Err(Error::Domain {
                what: "input bit",
                value: b as i64,
            });
        }
        pwa_groups(rows, self.pwa).map(|_| ())
    }

    /// Number of asserted rows per group.
    pub fn active_per_group(&self) -> Vec<i64> {
        let groups = pwa_groups(self.inputs.len(), self.pwa).unwrap_or_default();
        groups
            .iter()
            .map(|g| self.inputs[g.clone()].iter().map(|&b| b as i64).sum())
            .collect()
    }
}

/// Analog outputs of every cycle plus, once digitized, the codes and
/// post-processed outputs.
#[derive(Clone, Debug, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ImcResult {
    pub cols: usize,
    /// Sensed current per (cycle, column), row-major by cycle.
    pub currents: Vec<f64>,
    /// ADC codes O' per (cycle, column).
    pub codes: Vec<i64>,
    /// Post-processed group outputs per (cycle, column).
    pub outputs: Vec<i64>,
}

impl ImcResult {
    pub fn cycles(&self) -> usize {
        if self.cols == 0 {
            0
        } else {
            self.currents.len() / self.cols
        }
    }

    /// Sum of post-processed outputs over cycles, per column.
    pub fn column_totals(&self) -> Vec<i64> {
        let mut t = vec![0; self.cols];
        for (k, v) in self.outputs.iter().enumerate() {
            t[k % self.cols] += v;
        }
        t
    }
}

/// Sensed current of one column.
pub fn sense(s: Sensing, col: &ColumnCurrents, dummy: Option<&ColumnCurrents>, gain: f64) -> f64 {
    match s {
        Sensing::BlbMinusBl => gain * (col.i_blb.0 - col.i_bl.0),
        Sensing::BlMinusBlb => gain * (col.i_bl.0 - col.i_blb.0),
        Sensing::SlbMinusSl => gain * (col.i_slb.0 - col.i_sl.0),
        Sensing::Blb => col.i_blb.0,
        Sensing::Slb => col.i_slb.0,
        Sensing::SlMinusDummy => {
            let d = dummy.map_or(0.0, |d| d.i_sl.0);
            gain * dummy_column_correct(col.i_sl, Amps(d)).0
        }
    }
}

/// Sensed currents of all data columns of a solved array.
pub fn sense_solution(scheme: &ImcScheme, kind: BitcellKind, sol: &ArraySolution) -> Vec<f64> {
    let s = scheme.sensing(kind);
    if scheme.needs_dummy(kind) {
        let data = sol.cols - 1;
        let dummy = sol.columns[data];
        sol.columns[..data]
            .iter()
            .map(|c| sense(s, c, Some(&dummy), scheme.subtractor_gain))
            .collect()
    } else {
        sol.columns
            .iter()
            .map(|c| sense(s, c, None, scheme.subtractor_gain))
            .collect()
    }
}

/// Wordline vector of one group.
pub fn group_wordlines(inputs: &[u8], group: &Range<usize>) -> Vec<bool> {
    (0..inputs.len()).map(|r| group.contains(&r) && inputs[r] == 1).collect()
}

fn data_columns(inst: &CrossbarInstance, scheme: &ImcScheme) -> Result<usize> {
    let cfg = inst.config();
    if scheme.needs_dummy(cfg.kind) {
        if cfg.cols < 2 {
            return Err(Error::param("crossbar.cols", "1T-1MTJ arrays need a dummy column"));
        }
        Ok(cfg.cols - 1)
    } else {
        Ok(cfg.cols)
    }
}

/// Sensed currents of the data columns for one PWA cycle.
pub fn run_imc_group(
    inst: &CrossbarInstance,
    op: &ImcOperation,
    scheme: &ImcScheme,
    opts: &IterOptions,
    group: usize,
) -> Result<Vec<f64>> {
    let cfg = inst.config();
    op.validate(cfg.rows)?;
    data_columns(inst, scheme)?;
    let groups = pwa_groups(cfg.rows, op.pwa)?;
    let range = groups.get(group).ok_or(Error::Domain {
        what: "group index",
        value: group as i64,
    })?;
    let wl = group_wordlines(&op.inputs, range);
    let sol = inst.solve_iterative(&wl, opts).map_err(|e| Error::Cycle {
        cycle: group,
        source: alloc::boxed::Box::new(e),
    })?;
    Ok(sense_solution(scheme, cfg.kind, &sol))
}

/// Analog stage: solve one array per PWA cycle and sense every data column.
pub fn run_imc_column_pass(
    inst: &CrossbarInstance,
    op: &ImcOperation,
    scheme: &ImcScheme,
    opts: &IterOptions,
) -> Result<ImcResult> {
    let cfg = inst.config();
    op.validate(cfg.rows)?;
    let data_cols = data_columns(inst, scheme)?;
    let cycles = pwa_groups(cfg.rows, op.pwa)?.len();
    let mut currents = Vec::with_capacity(cycles * data_cols);
    for g in 0..cycles {
        currents.extend(run_imc_group(inst, op, scheme, opts, g)?);
    }
    Ok(ImcResult {
        cols: data_cols,
        currents,
        codes: Vec::new(),
        outputs: Vec::new(),
    })
}

/// Turn one digitized code into the logical group output.
pub fn postprocess(p: Postprocess, code: i64, active: i64, sum_w: i64) -> i64 {
    match p {
        Postprocess::XnorShift => postprocess_xnor(code, sum_w),
        Postprocess::Identity => code,
        Postprocess::XnorFromAnd => 4 * code - 2 * active - sum_w,
        Postprocess::AndFromDifferential => (code + active).div_euclid(2),
    }
}

/// Digital stage: quantize every cycle's current and post-process it.
pub fn digitize(
    res: &mut ImcResult,
    op: &ImcOperation,
    scheme: &ImcScheme,
    kind: BitcellKind,
    adc: &AdcConfig,
) -> Result<()> {
    let p = scheme.postprocess(kind);
    let needs_sum = matches!(p, Postprocess::XnorShift | Postprocess::XnorFromAnd);
    let cycles = res.cycles();
    if needs_sum && op.sum_w.len() != cycles * res.cols {
        return Err(Error::Shape {
            what: "weight sums",
            expected: cycles * res.cols,
            got: op.sum_w.len(),
        });
    }
    let active = op.active_per_group();
    res.codes.clear();
    res.outputs.clear();
    for (k, &i) in res.currents.iter().enumerate() {
        let g = k / res.cols;
        let code = quantize(Amps(i), adc);
        let sw = if needs_sum { op.sum_w[k] } else { 0 };
        res.codes.push(code);
        res.outputs.push(postprocess(p, code, active[g], sw));
    }
    Ok(())
}

/// Exact group output of one column, as the hardware should compute it.
pub fn ideal_group_output(mode: ImcMode, inputs: &[u8], w_col: impl Iterator<Item = i8>) -> i64 {
    let mut acc = 0i64;
    for (x, w) in inputs.iter().zip(w_col) {
        acc += match mode {
            ImcMode::Xnor => (2 * *x as i64 - 1) * w as i64,
            ImcMode::And => *x as i64 * w as i64,
        };
    }
    acc
}

/// Ideal analog quantity the ADC sees for a group (O' for differential and
/// XNOR schemes, the AND count otherwise).
pub fn ideal_code(scheme: &ImcScheme, kind: BitcellKind, inputs: &[u8], w_col: &[i8]) -> i64 {
    let mut acc = 0i64;
    for (x, &w) in inputs.iter().zip(w_col) {
        if *x == 0 {
            continue;
        }
        acc += match (scheme.sensing(kind), scheme.mode) {
            (Sensing::SlMinusDummy, ImcMode::Xnor) => ((w + 1) / 2) as i64,
            (Sensing::BlMinusBlb, ImcMode::And) => 2 * w as i64 - 1,
            _ => w as i64,
        };
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn xnor_encoding() {
        assert_eq!(encode_inputs_xnor(&[-1, 1]).unwrap(), vec![0, 1]);
        assert_eq!(encode_inputs_xnor(&[1; 4]).unwrap(), vec![1; 4]);
        assert!(encode_inputs_xnor(&[0]).is_err());
    }

    #[test]
    fn weight_mapping() {
        let plus = map_weight(ImcMode::Xnor, BitcellKind::StrideI, 1).unwrap();
        assert_eq!(
            plus,
            CellState::Pair {
                left: MtjState::P,
                right: MtjState::Ap
            }
        );
        let minus = map_weight(ImcMode::Xnor, BitcellKind::StrideI, -1).unwrap();
        assert_eq!(minus, plus.mirrored());
        let zero = map_weight(ImcMode::And, BitcellKind::StrideII, 0).unwrap();
        assert_eq!(
            zero,
            CellState::Pair {
                left: MtjState::Ap,
                right: MtjState::P
            }
        );
        assert!(map_weight(ImcMode::And, BitcellKind::StrideI, 2).is_err());
        assert!(map_weight(ImcMode::Xnor, BitcellKind::StrideI, 0).is_err());
        assert_eq!(
            map_weight(ImcMode::And, BitcellKind::OneT1Mtj, 1).unwrap(),
            CellState::Single(MtjState::P)
        );
    }

    #[test]
    fn postprocess_examples() {
        assert_eq!(postprocess_xnor(3, 0), 6);
        assert_eq!(postprocess_xnor(0, 0), 0);
        // In = W = all +1 over 8 rows: O' = 8, sum(W) = 8
        assert_eq!(postprocess_xnor(8, 8), 8);
    }

    #[test]
    fn slicing_examples() {
        let p = bit_slice_weights(&[-3, 0]).unwrap();
        assert_eq!([p[3][0], p[2][0], p[1][0], p[0][0]], [1, 1, 0, 1]);
        assert!(p.iter().all(|b| b[1] == 0));
        assert!(bit_slice_weights(&[8]).is_err());
        for w in -8i8..=7 {
            let p = bit_slice_weights(&[w]).unwrap();
            let r = -8 * p[3][0] as i64 + 4 * p[2][0] as i64 + 2 * p[1][0] as i64 + p[0][0] as i64;
            assert_eq!(r, w as i64);
        }
    }

    #[test]
    fn stream_examples() {
        let mut o = [[0i64; 4]; 4];
        // input 3 (planes 0, 1) times weight 2 (plane 1)
        o[0][1] = 1;
        o[1][1] = 1;
        assert_eq!(bit_stream_accumulate(&o), 6);
        assert_eq!(bit_stream_accumulate(&[[0; 4]; 4]), 0);
    }

    #[test]
    fn groups_partition_rows() {
        let g = pwa_groups(20, 8).unwrap();
        assert_eq!(g, vec![0..8, 8..16, 16..20]);
        assert!(pwa_groups(4, 0).is_err());
    }

    #[test]
    fn cross_scheme_conversions_are_exact() {
        // exhaustive over 4 rows
        for xin in 0u8..16 {
            for wbits in 0u8..16 {
                let x: Vec<u8> = (0..4).map(|k| (xin >> k) & 1).collect();
                let wa: Vec<i8> = (0..4).map(|k| ((wbits >> k) & 1) as i8).collect();
                let wx: Vec<i8> = wa.iter().map(|&b| 2 * b - 1).collect();
                let k: i64 = x.iter().map(|&b| b as i64).sum();
                let sw: i64 = wx.iter().map(|&w| w as i64).sum();
                let xs = ImcScheme::new(ImcMode::Xnor);
                let a = ImcScheme::new(ImcMode::And);
                let c1 = ideal_code(&xs, BitcellKind::OneT1Mtj, &x, &wx);
                assert_eq!(
                    postprocess(Postprocess::XnorFromAnd, c1, k, sw),
                    ideal_group_output(ImcMode::Xnor, &x, wx.iter().copied())
                );
                let c2 = ideal_code(&a, BitcellKind::TwoT2Mtj, &x, &wa);
                assert_eq!(
                    postprocess(Postprocess::AndFromDifferential, c2, k, 0),
                    ideal_group_output(ImcMode::And, &x, wa.iter().copied())
                );
                let c3 = ideal_code(&xs, BitcellKind::StrideI, &x, &wx);
                assert_eq!(
                    postprocess(Postprocess::XnorShift, c3, k, sw),
                    ideal_group_output(ImcMode::Xnor, &x, wx.iter().copied())
                );
            }
        }
    }

    proptest! {
        #[test]
        fn encoding_round_trip(v in proptest::collection::vec(prop_oneof![Just(-1i8), Just(1i8)], 0..64)) {
            prop_assert_eq!(decode_inputs_xnor(&encode_inputs_xnor(&v).unwrap()), v);
        }

        #[test]
        fn weight_sum_identity(
            x in proptest::collection::vec(prop_oneof![Just(-1i8), Just(1i8)], 1..32),
            seed in any::<u64>(),
        ) {
            let w: Vec<i8> = (0..x.len()).map(|k| if (seed >> (k % 64)) & 1 == 1 { 1 } else { -1 }).collect();
            let xp = encode_inputs_xnor(&x).unwrap();
            let lhs: i64 = x.iter().zip(&w).map(|(a, b)| (*a as i64) * (*b as i64)).sum();
            let o_prime: i64 = xp.iter().zip(&w).map(|(a, b)| (*a as i64) * (*b as i64)).sum();
            let sw: i64 = w.iter().map(|&b| b as i64).sum();
            prop_assert_eq!(lhs, postprocess_xnor(o_prime, sw));
        }

        #[test]
        fn stream_matches_integer_dot(
            w in proptest::collection::vec(-8i8..=7, 8),
            x in proptest::collection::vec(0u8..=15, 8),
        ) {
            let wp = bit_slice_weights(&w).unwrap();
            let xp = bit_slice_inputs(&x).unwrap();
            let mut o = [[0i64; 4]; 4];
            for i in 0..4 {
                for j in 0..4 {
                    o[i][j] = (0..8).map(|k| (xp[i][k] * wp[j][k]) as i64).sum();
                }
            }
            let direct: i64 = w.iter().zip(&x).map(|(a, b)| *a as i64 * *b as i64).sum();
            prop_assert_eq!(bit_stream_accumulate(&o), direct);
        }
    }
}
