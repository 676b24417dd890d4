//! Quantized multilayer perceptrons mapped onto tiled crossbars.
//!
//! Binary layers run in XNOR mode. 4-bit layers run in AND mode with four
//! weight bit planes per tile and four input bit cycles, recombined by
//! shift-add. Each PWA cycle is digitized and the partial sums are added as
//! integers, both across groups and across row tiles.

use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use crate::adc::{optimize_iquant, sweep_grid, AdcConfig, Calibration, Loss};
use crate::crossbar::{build_array, CrossbarConfig, CrossbarInstance, IterOptions};
use crate::device::BitcellKind;
use crate::error::{Error, Result};
use crate::imc::{
    array_states, bit_slice_inputs, bit_slice_weights, bit_stream_accumulate, digitize, encode_inputs_xnor,
    ideal_code, pwa_groups, run_imc_group, sense_solution, ImcMode, ImcOperation, ImcResult, ImcScheme,
};
use crate::lut::LutSet;
use crate::units::Amps;
use crate::variation::{trial_rng, variation_factors, BranchSigmas};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Precision {
    /// Weights and inputs in {-1, +1}.
    Binary,
    /// Signed 4-bit weights, unsigned 4-bit inputs.
    Int4,
}

impl Precision {
    pub fn mode(self) -> ImcMode {
        match self {
            Precision::Binary => ImcMode::Xnor,
            Precision::Int4 => ImcMode::And,
        }
    }

    pub fn weight_ok(self, w: i8) -> bool {
        match self {
            Precision::Binary => w == 1 || w == -1,
            Precision::Int4 => (-8..=7).contains(&w),
        }
    }

    pub fn input_ok(self, x: i8) -> bool {
        match self {
            Precision::Binary => x == 1 || x == -1,
            Precision::Int4 => (0..=15).contains(&x),
        }
    }

    /// Weight bit planes per tile.
    pub fn planes(self) -> usize {
        match self {
            Precision::Binary => 1,
            Precision::Int4 => 4,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields))]
pub enum Activation {
    /// -1 below zero, +1 otherwise.
    Sign,
    /// Clipped ReLU to 0..=15: round(y * mult / 2^shift), rounding halves up.
    Relu4 { mult: i64, shift: u32 },
    /// Integer logits of the last layer.
    Identity,
}

impl Activation {
    pub fn apply(&self, y: i64) -> i8 {
        match *self {
            Activation::Sign => {
                if y >= 0 {
                    1
                } else {
                    -1
                }
            }
            Activation::Relu4 { mult, shift } => {
                let half = if shift == 0 { 0 } else { 1i64 << (shift - 1) };
                ((y * mult + half) >> shift).clamp(0, 15) as i8
            }
            Activation::Identity => y.clamp(i8::MIN as i64, i8::MAX as i64) as i8,
        }
    }

    /// Precision of the values this activation produces.
    pub fn output_precision(&self) -> Option<Precision> {
        match self {
            Activation::Sign => Some(Precision::Binary),
            Activation::Relu4 { .. } => Some(Precision::Int4),
            Activation::Identity => None,
        }
    }
}

/// Fully connected layer computing y = W^T x + b.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DenseLayer {
    pub inputs: usize,
    pub outputs: usize,
    pub precision: Precision,
    /// Row-major `inputs x outputs`.
    pub weights: Vec<i8>,
    pub bias: Vec<i64>,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn validate(&self) -> Result<()> {
        if self.inputs == 0 || self.outputs == 0 {
            return Err(Error::param("layer", "needs at least one input and output"));
        }
        if self.weights.len() != self.inputs * self.outputs {
            return Err(Error::Shape {
                what: "layer weights",
                expected: self.inputs * self.outputs,
                got: self.weights.len(),
            });
        }
        if self.bias.len() != self.outputs {
            return Err(Error::Shape {
                what: "layer bias",
                expected: self.outputs,
                got: self.bias.len(),
            });
        }
        if let Some(&w) = self.weights.iter().find(|&&w| !self.precision.weight_ok(w)) {
            return Err(Error::Domain {
                what: "layer weight",
                value: w as i64,
            });
        }
        if let Activation::Relu4 { mult, shift } = self.activation {
            if mult <= 0 || shift > 40 {
                return Err(Error::param("layer.activation", "relu4 needs mult > 0 and shift <= 40"));
            }
        }
        Ok(())
    }

    /// Pre-activation outputs from the integer reference.
    pub fn reference(&self, x: &[i8]) -> Result<Vec<i64>> {
        let mut y = mvm_reference(&self.weights, x, self.outputs, self.precision)?;
        for (v, b) in y.iter_mut().zip(&self.bias) {
            *v += b;
        }
        Ok(y)
    }
}

/// How 0..=16 grey levels become first-layer inputs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields))]
pub enum InputEncoding {
    /// +1 at or above the threshold, -1 below.
    Binarize { threshold: u8 },
    /// round(15 x / max), clamped to 0..=15.
    Uniform4 { max: u8 },
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct QuantNetwork {
    pub input: InputEncoding,
    pub layers: Vec<DenseLayer>,
}

impl QuantNetwork {
    pub fn validate(&self) -> Result<()> {
        let first = self.layers.first().ok_or(Error::Empty("network"))?;
        let enc_ok = matches!(
            (self.input, first.precision),
            (InputEncoding::Binarize { .. }, Precision::Binary) | (InputEncoding::Uniform4 { .. }, Precision::Int4)
        );
        if !enc_ok {
            return Err(Error::param("network.input", "encoding does not match the first layer"));
        }
        if let InputEncoding::Uniform4 { max: 0 } = self.input {
            return Err(Error::param("network.input.max", "must be positive"));
        }
        for (k, l) in self.layers.iter().enumerate() {
            l.validate().map_err(|e| Error::Tile {
                layer: k,
                tile: 0,
                source: alloc::boxed::Box::new(e),
            })?;
            match self.layers.get(k + 1) {
                Some(next) => {
                    if next.inputs != l.outputs {
                        return Err(Error::Shape {
                            what: "layer chain",
                            expected: l.outputs,
                            got: next.inputs,
                        });
                    }
                    if l.activation.output_precision() != Some(next.precision) {
                        return Err(Error::param("layer.activation", "does not produce the next layer's inputs"));
                    }
                }
                None => {
                    if l.activation != Activation::Identity {
                        return Err(Error::param("layer.activation", "the last layer emits raw logits"));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn input_len(&self) -> usize {
        self.layers.first().map_or(0, |l| l.inputs)
    }

    pub fn classes(&self) -> usize {
        self.layers.last().map_or(0, |l| l.outputs)
    }

    pub fn encode_input(&self, pixels: &[u8]) -> Result<Vec<i8>> {
        if pixels.len() != self.input_len() {
            return Err(Error::Shape {
                what: "input image",
                expected: self.input_len(),
                got: pixels.len(),
            });
        }
        Ok(match self.input {
            InputEncoding::Binarize { threshold } => {
                pixels.iter().map(|&p| if p >= threshold { 1 } else { -1 }).collect()
            }
            InputEncoding::Uniform4 { max } => {
                let m = max as u32;
                pixels
                    .iter()
                    .map(|&p| ((15 * p as u32 + m / 2) / m).min(15) as i8)
                    .collect()
            }
        })
    }

    /// Integer logits of the software reference.
    pub fn reference_forward(&self, pixels: &[u8]) -> Result<Vec<i64>> {
        let mut x = self.encode_input(pixels)?;
        let last = self.layers.len() - 1;
        for (k, l) in self.layers.iter().enumerate() {
            let y = l.reference(&x)?;
            if k == last {
                return Ok(y);
            }
            x = y.iter().map(|&v| l.activation.apply(v)).collect();
        }
        unreachable!("validated networks have a last layer")
    }
}

/// Index of the largest logit; ties go to the lowest class.
pub fn argmax(logits: &[i64]) -> usize {
    let mut best = 0;
    for (k, &v) in logits.iter().enumerate() {
        if v > logits[best] {
            best = k;
        }
    }
    best
}

/// Exact dot products of `inputs` with the columns of a row-major
/// `inputs.len() x outputs` matrix. Binary operands follow XNOR semantics.
pub fn mvm_reference(weights: &[i8], inputs: &[i8], outputs: usize, precision: Precision) -> Result<Vec<i64>> {
    let rows = inputs.len();
    if weights.len() != rows * outputs {
        return Err(Error::Shape {
            what: "weight matrix",
            expected: rows * outputs,
            got: weights.len(),
        });
    }
    if let Some(&x) = inputs.iter().find(|&&x| !precision.input_ok(x)) {
        return Err(Error::Domain {
            what: "input",
            value: x as i64,
        });
    }
    if let Some(&w) = weights.iter().find(|&&w| !precision.weight_ok(w)) {
        return Err(Error::Domain {
            what: "weight",
            value: w as i64,
        });
    }
    let mut y = vec![0i64; outputs];
    for (r, &x) in inputs.iter().enumerate() {
        for (c, acc) in y.iter_mut().enumerate() {
            *acc += x as i64 * weights[r * outputs + c] as i64;
        }
    }
    Ok(y)
}

/// One physical array of a layer.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Tile {
    pub row_tile: usize,
    pub col_tile: usize,
    /// Weight bit plane, least significant first. Always 0 for binary layers.
    pub plane: usize,
    pub rows: Range<usize>,
    pub cols: Range<usize>,
    /// Logical weights, `array rows x cols.len()`. Rows past the layer hold
    /// the low state and are never asserted.
    pub weights: Vec<i8>,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LayerPlan {
    pub precision: Precision,
    pub scheme: ImcScheme,
    pub row_tiles: Vec<Range<usize>>,
    pub col_tiles: Vec<Range<usize>>,
    /// Ordered by (row tile, column tile, plane).
    pub tiles: Vec<Tile>,
    /// Layer bias; XNOR layers also carry -sum(W) here.
    pub bias: Vec<i64>,
    /// Converter with `i_quant` in units of the nominal unit-cell current.
    pub adc: AdcConfig,
}

impl LayerPlan {
    pub fn tile_index(&self, row_tile: usize, col_tile: usize, plane: usize) -> usize {
        (row_tile * self.col_tiles.len() + col_tile) * self.precision.planes() + plane
    }
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MappingPlan {
    pub kind: BitcellKind,
    pub array_rows: usize,
    pub array_cols: usize,
    pub pwa: usize,
    pub layers: Vec<LayerPlan>,
}

fn chunks(n: usize, size: usize) -> Vec<Range<usize>> {
    (0..n).step_by(size).map(|s| s..(s + size).min(n)).collect()
}

/// Tile a network onto `array.rows x array.cols` arrays of `array.kind`.
/// Row tiles run over input channels, column tiles over outputs.
pub fn compile_network(net: &QuantNetwork, array: &CrossbarConfig, pwa: usize) -> Result<MappingPlan> {
    net.validate()?;
    array.validate()?;
    if pwa == 0 || pwa > array.rows {
        return Err(Error::Domain {
            what: "pwa",
            value: pwa as i64,
        });
    }
    let kind = array.kind;
    let mut layers = Vec::with_capacity(net.layers.len());
    for l in &net.layers {
        let scheme = ImcScheme::new(l.precision.mode());
        let planes: Vec<Vec<i8>> = match l.precision {
            Precision::Binary => vec![l.weights.clone()],
            Precision::Int4 => bit_slice_weights(&l.weights)?
                .iter()
                .map(|p| p.iter().map(|&b| b as i8).collect())
                .collect(),
        };
        let low: i8 = match scheme.mode {
            ImcMode::Xnor => -1,
            ImcMode::And => 0,
        };
        let row_tiles = chunks(l.inputs, array.rows);
        let col_tiles = chunks(l.outputs, array.cols);
        let mut tiles = Vec::with_capacity(row_tiles.len() * col_tiles.len() * planes.len());
        for (rt, rows) in row_tiles.iter().enumerate() {
            for (ct, cols) in col_tiles.iter().enumerate() {
                for (plane, w) in planes.iter().enumerate() {
                    let mut weights = Vec::with_capacity(array.rows * cols.len());
                    for r in 0..array.rows {
                        let src = rows.start + r;
                        for c in cols.clone() {
                            weights.push(if src < rows.end { w[src * l.outputs + c] } else { low });
                        }
                    }
                    tiles.push(Tile {
                        row_tile: rt,
                        col_tile: ct,
                        plane,
                        rows: rows.clone(),
                        cols: cols.clone(),
                        weights,
                    });
                }
            }
        }
        let mut bias = l.bias.clone();
        if scheme.mode == ImcMode::Xnor {
            for r in 0..l.inputs {
                for (c, b) in bias.iter_mut().enumerate() {
                    *b -= l.weights[r * l.outputs + c] as i64;
                }
            }
        }
        layers.push(LayerPlan {
            precision: l.precision,
            scheme,
            row_tiles,
            col_tiles,
            tiles,
            bias,
            adc: AdcConfig::for_pwa(pwa, Amps(1.0), scheme.signed_output(kind))?,
        });
    }
    Ok(MappingPlan {
        kind,
        array_rows: array.rows,
        array_cols: array.cols,
        pwa,
        layers,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Fidelity {
    /// No parasitics, no variation.
    #[cfg_attr(feature = "serde", serde(rename = "ideal"))]
    Ideal,
    #[cfg_attr(feature = "serde", serde(rename = "nonideal"))]
    NonIdeal,
    #[cfg_attr(feature = "serde", serde(rename = "nonideal+variation"))]
    NonIdealVariation,
}

impl Fidelity {
    pub fn name(self) -> &'static str {
        match self {
            Fidelity::Ideal => "ideal",
            Fidelity::NonIdeal => "nonideal",
            Fidelity::NonIdealVariation => "nonideal+variation",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChipOptions {
    pub fidelity: Fidelity,
    /// Branch spreads used at `NonIdealVariation`.
    pub sigmas: BranchSigmas,
    /// Seeds the per-tile variation draws.
    pub seed: u64,
    pub iter: IterOptions,
}

impl ChipOptions {
    pub fn new(fidelity: Fidelity, seed: u64) -> Self {
        Self {
            fidelity,
            sigmas: BranchSigmas::ZERO,
            seed,
            iter: IterOptions::default(),
        }
    }
}

fn tile_stream(layer: usize, tile: usize) -> u64 {
    ((layer as u64) << 32) | tile as u64
}

fn tile_err(layer: usize, tile: usize, e: Error) -> Error {
    Error::Tile {
        layer,
        tile,
        source: alloc::boxed::Box::new(e),
    }
}

/// Sensed current per ideal unit: one asserted high cell against one low
/// cell on an ideal single-row array.
pub fn unit_current(luts: &Arc<LutSet>, array: &CrossbarConfig, scheme: &ImcScheme, iter: &IterOptions) -> Result<Amps> {
    let kind = array.kind;
    let w: [i8; 2] = match scheme.mode {
        ImcMode::Xnor => [1, -1],
        ImcMode::And => [1, 0],
    };
    let states = array_states(scheme, kind, 1, 2, &w)?;
    let cfg = CrossbarConfig {
        rows: 1,
        cols: states.len(),
        ..array.ideal()
    };
    let inst = build_array(cfg, states, luts.clone())?;
    let sol = inst.solve_iterative(&[true], iter)?;
    let s = sense_solution(scheme, kind, &sol);
    let c0 = ideal_code(scheme, kind, &[1], &w[..1]);
    let c1 = ideal_code(scheme, kind, &[1], &w[1..]);
    let unit = (s[0] - s[1]) / (c0 - c1) as f64;
    if !(unit.is_finite() && unit > 0.0) {
        return Err(Error::param("unit current", "high and low cells are not distinguishable"));
    }
    Ok(Amps(unit))
}

/// Absolute error tallies of one layer's pre-activation outputs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct ErrorTally {
    pub outputs: u64,
    pub mismatched: u64,
    pub sum_abs: u64,
    pub max_abs: u64,
}

impl ErrorTally {
    pub fn add(&mut self, hw: &[i64], reference: &[i64]) {
        for (a, b) in hw.iter().zip(reference) {
            let d = (a - b).unsigned_abs();
            self.outputs += 1;
            self.sum_abs += d;
            self.max_abs = self.max_abs.max(d);
            if d != 0 {
                self.mismatched += 1;
            }
        }
    }

    pub fn merge(&mut self, o: &ErrorTally) {
        self.outputs += o.outputs;
        self.mismatched += o.mismatched;
        self.sum_abs += o.sum_abs;
        self.max_abs = self.max_abs.max(o.max_abs);
    }
}

/// Result of one sample on the chip.
#[derive(Clone, Debug, PartialEq)]
pub struct Forward {
    pub logits: Vec<i64>,
    pub prediction: usize,
    /// Hardware against the reference MVM of the same layer inputs.
    pub errors: Vec<ErrorTally>,
}

/// A compiled network programmed into arrays.
#[derive(Clone, Debug)]
pub struct Chip {
    plan: MappingPlan,
    opts: ChipOptions,
    units: Vec<Amps>,
    arrays: Vec<Vec<CrossbarInstance>>,
}

impl Chip {
    /// Program every tile. `array` supplies parasitics and bias; ideal
    /// fidelity strips the parasitics.
    pub fn new(plan: MappingPlan, luts: Arc<LutSet>, array: &CrossbarConfig, opts: ChipOptions) -> Result<Self> {
        if array.kind != plan.kind || luts.kind != plan.kind {
            return Err(Error::param("crossbar.kind", "array, tables and plan disagree on the bitcell"));
        }
        if array.rows != plan.array_rows || array.cols < plan.array_cols {
            return Err(Error::param("crossbar.rows", "array size differs from the compiled plan"));
        }
        let base = match opts.fidelity {
            Fidelity::Ideal => array.ideal(),
            _ => *array,
        };
        let vary = opts.fidelity == Fidelity::NonIdealVariation;
        let mut units = Vec::with_capacity(plan.layers.len());
        let mut arrays = Vec::with_capacity(plan.layers.len());
        for (li, lp) in plan.layers.iter().enumerate() {
            units.push(unit_current(&luts, array, &lp.scheme, &opts.iter)?);
            let mut insts = Vec::with_capacity(lp.tiles.len());
            for (ti, t) in lp.tiles.iter().enumerate() {
                let build = || -> Result<CrossbarInstance> {
                    let states = array_states(&lp.scheme, plan.kind, plan.array_rows, t.cols.len(), &t.weights)?;
                    let cfg = CrossbarConfig {
                        cols: states.len() / plan.array_rows,
                        ..base
                    };
                    let mut inst = build_array(cfg, states, luts.clone())?;
                    if vary {
                        let mut rng = trial_rng(opts.seed, tile_stream(li, ti));
                        let f = variation_factors(inst.states(), &opts.sigmas, &mut rng);
                        inst.set_variation(Some(f))?;
                    }
                    Ok(inst)
                };
                insts.push(build().map_err(|e| tile_err(li, ti, e))?);
            }
            arrays.push(insts);
        }
        Ok(Self {
            plan,
            opts,
            units,
            arrays,
        })
    }

    pub fn plan(&self) -> &MappingPlan {
        &self.plan
    }

    pub fn options(&self) -> &ChipOptions {
        &self.opts
    }

    pub fn unit(&self, layer: usize) -> Amps {
        self.units[layer]
    }

    /// Converter of a layer in amperes.
    pub fn adc(&self, layer: usize) -> AdcConfig {
        let a = self.plan.layers[layer].adc;
        a.with_i_quant(Amps(a.i_quant.0 * self.units[layer].0))
    }

    /// Sensed currents of every PWA cycle of one tile. Cycles without an
    /// asserted row are skipped and read zero.
    fn analog(&self, layer: usize, tile: usize, bits: &[u8]) -> Result<(ImcOperation, ImcResult)> {
        let lp = &self.plan.layers[layer];
        let inst = &self.arrays[layer][tile];
        let op = ImcOperation::new(bits.to_vec(), self.plan.pwa);
        let groups = pwa_groups(bits.len(), self.plan.pwa)?;
        let cols = lp.tiles[tile].cols.len();
        let mut currents = Vec::with_capacity(groups.len() * cols);
        for (g, range) in groups.iter().enumerate() {
            if bits[range.clone()].iter().all(|&b| b == 0) {
                currents.extend(core::iter::repeat(0.0).take(cols));
            } else {
                currents.extend(run_imc_group(inst, &op, &lp.scheme, &self.opts.iter, g)?);
            }
        }
        Ok((
            op,
            ImcResult {
                cols,
                currents,
                codes: Vec::new(),
                outputs: Vec::new(),
            },
        ))
    }

    /// Per-column sums of the digitized group outputs.
    fn tile_totals(&self, layer: usize, tile: usize, bits: &[u8]) -> Result<Vec<i64>> {
        let lp = &self.plan.layers[layer];
        let (mut op, mut res) = self.analog(layer, tile, bits).map_err(|e| tile_err(layer, tile, e))?;
        op.sum_w = vec![0; res.currents.len()];
        digitize(&mut res, &op, &lp.scheme, self.plan.kind, &self.adc(layer)).map_err(|e| tile_err(layer, tile, e))?;
        Ok(res.column_totals())
    }

    /// Input bit vectors of a row tile, padded to the array height.
    fn row_bits(&self, layer: usize, x: &[i8], rows: &Range<usize>) -> Result<Vec<Vec<u8>>> {
        let n = self.plan.array_rows;
        let pad = |mut v: Vec<u8>| {
            v.resize(n, 0);
            v
        };
        Ok(match self.plan.layers[layer].precision {
            Precision::Binary => vec![pad(encode_inputs_xnor(&x[rows.clone()])?)],
            Precision::Int4 => {
                let u: Vec<u8> = x[rows.clone()]
                    .iter()
                    .map(|&v| {
                        u8::try_from(v).map_err(|_| Error::Domain {
                            what: "4-bit input",
                            value: v as i64,
                        })
                    })
                    .collect::<Result<_>>()?;
                bit_slice_inputs(&u)?.into_iter().map(pad).collect()
            }
        })
    }

    /// Pre-activation outputs of one layer, bias included.
    pub fn layer_mvm(&self, layer: usize, x: &[i8]) -> Result<Vec<i64>> {
        let lp = &self.plan.layers[layer];
        let mut y = lp.bias.clone();
        for (rt, rows) in lp.row_tiles.iter().enumerate() {
            let bits = self.row_bits(layer, x, rows)?;
            for (ct, cols) in lp.col_tiles.iter().enumerate() {
                match lp.precision {
                    Precision::Binary => {
                        let t = lp.tile_index(rt, ct, 0);
                        for (c, v) in self.tile_totals(layer, t, &bits[0])?.into_iter().enumerate() {
                            y[cols.start + c] += v;
                        }
                    }
                    Precision::Int4 => {
                        let mut o = vec![[[0i64; 4]; 4]; cols.len()];
                        for j in 0..4 {
                            let t = lp.tile_index(rt, ct, j);
                            for (i, b) in bits.iter().enumerate() {
                                for (c, v) in self.tile_totals(layer, t, b)?.into_iter().enumerate() {
                                    o[c][i][j] = v;
                                }
                            }
                        }
                        for (c, oc) in o.iter().enumerate() {
                            y[cols.start + c] += bit_stream_accumulate(oc);
                        }
                    }
                }
            }
        }
        Ok(y)
    }

    fn check_net(&self, net: &QuantNetwork) -> Result<()> {
        if net.layers.len() != self.plan.layers.len()
            || net.layers.iter().zip(&self.plan.layers).any(|(l, p)| l.precision != p.precision)
        {
            return Err(Error::param("network", "was not compiled into this plan"));
        }
        Ok(())
    }

    pub fn forward(&self, net: &QuantNetwork, pixels: &[u8]) -> Result<Forward> {
        self.check_net(net)?;
        let mut x = net.encode_input(pixels)?;
        let mut errors = vec![ErrorTally::default(); net.layers.len()];
        let last = net.layers.len() - 1;
        for (k, l) in net.layers.iter().enumerate() {
            let y = self.layer_mvm(k, &x)?;
            errors[k].add(&y, &l.reference(&x)?);
            if k == last {
                let prediction = argmax(&y);
                return Ok(Forward {
                    logits: y,
                    prediction,
                    errors,
                });
            }
            x = y.iter().map(|&v| l.activation.apply(v)).collect();
        }
        unreachable!("validated networks have a last layer")
    }

    /// (current, ideal code) pairs of every asserted cycle, per layer. Layer
    /// inputs follow the integer reference so each layer is seen in isolation.
    pub fn calibration_pairs(&self, net: &QuantNetwork, pixels: &[u8]) -> Result<Vec<Vec<(f64, i64)>>> {
        self.check_net(net)?;
        let mut x = net.encode_input(pixels)?;
        let mut out = vec![Vec::new(); net.layers.len()];
        for (k, l) in net.layers.iter().enumerate() {
            let lp = &self.plan.layers[k];
            let groups = pwa_groups(self.plan.array_rows, self.plan.pwa)?;
            for (rt, rows) in lp.row_tiles.iter().enumerate() {
                let bits = self.row_bits(k, &x, rows)?;
                for (ct, _) in lp.col_tiles.iter().enumerate() {
                    for plane in 0..lp.precision.planes() {
                        let t = lp.tile_index(rt, ct, plane);
                        let tile = &lp.tiles[t];
                        let cols = tile.cols.len();
                        for b in &bits {
                            let (_, res) = self.analog(k, t, b).map_err(|e| tile_err(k, t, e))?;
                            for (g, range) in groups.iter().enumerate() {
                                if b[range.clone()].iter().all(|&v| v == 0) {
                                    continue;
                                }
                                for c in 0..cols {
                                    let w: Vec<i8> = range.clone().map(|r| tile.weights[r * cols + c]).collect();
                                    let code = ideal_code(&lp.scheme, self.plan.kind, &b[range.clone()], &w);
                                    out[k].push((res.currents[g * cols + c], code));
                                }
                            }
                        }
                    }
                }
            }
            let y = l.reference(&x)?;
            x = y.iter().map(|&v| l.activation.apply(v)).collect();
        }
        Ok(out)
    }

    /// Fit each layer's reference step over [lo, hi] units on collected pairs.
    pub fn apply_calibration(
        &mut self,
        pairs: &[Vec<(f64, i64)>],
        lo: f64,
        hi: f64,
        steps: usize,
        loss: Loss,
    ) -> Result<Vec<Calibration>> {
        if pairs.len() != self.plan.layers.len() {
            return Err(Error::Shape {
                what: "calibration layers",
                expected: self.plan.layers.len(),
                got: pairs.len(),
            });
        }
        let mut out = Vec::with_capacity(pairs.len());
        for (k, p) in pairs.iter().enumerate() {
            let unit = self.units[k].0;
            let grid = sweep_grid(Amps(lo * unit), Amps(hi * unit), steps)?;
            let cal = optimize_iquant(p, &self.adc(k), &grid, loss)?;
            self.plan.layers[k].adc.i_quant = Amps(cal.config.i_quant.0 / unit);
            out.push(cal);
        }
        Ok(out)
    }

    pub fn calibrate(
        &mut self,
        net: &QuantNetwork,
        samples: &[Sample],
        lo: f64,
        hi: f64,
        steps: usize,
        loss: Loss,
    ) -> Result<Vec<Calibration>> {
        let mut pairs = vec![Vec::new(); self.plan.layers.len()];
        for s in samples {
            for (acc, p) in pairs.iter_mut().zip(self.calibration_pairs(net, &s.pixels)?) {
                acc.extend(p);
            }
        }
        self.apply_calibration(&pairs, lo, hi, steps, loss)
    }
}

/// Labeled image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sample {
    pub pixels: Vec<u8>,
    pub label: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LayerErrorStats {
    pub layer: usize,
    pub outputs: u64,
    pub mean_abs_error: f64,
    pub max_abs_error: u64,
    /// Fraction of outputs that differ from the reference.
    pub mismatch_rate: f64,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct InferenceReport {
    pub fidelity: Fidelity,
    pub seed: u64,
    pub samples: usize,
    pub correct: usize,
    pub accuracy: f64,
    pub layers: Vec<LayerErrorStats>,
}

/// Running totals over samples; merging is order independent.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Tally {
    pub samples: usize,
    pub correct: usize,
    pub errors: Vec<ErrorTally>,
}

impl Tally {
    pub fn add(&mut self, f: &Forward, label: usize) {
        self.samples += 1;
        if f.prediction == label {
            self.correct += 1;
        }
        if self.errors.len() < f.errors.len() {
            self.errors.resize(f.errors.len(), ErrorTally::default());
        }
        for (a, e) in self.errors.iter_mut().zip(&f.errors) {
            a.merge(e);
        }
    }

    pub fn merge(&mut self, o: &Tally) {
        self.samples += o.samples;
        self.correct += o.correct;
        if self.errors.len() < o.errors.len() {
            self.errors.resize(o.errors.len(), ErrorTally::default());
        }
        for (a, e) in self.errors.iter_mut().zip(&o.errors) {
            a.merge(e);
        }
    }

    pub fn finish(&self, fidelity: Fidelity, seed: u64) -> InferenceReport {
        let layers = self
            .errors
            .iter()
            .enumerate()
            .map(|(layer, e)| {
                let n = e.outputs.max(1) as f64;
                LayerErrorStats {
                    layer,
                    outputs: e.outputs,
                    mean_abs_error: e.sum_abs as f64 / n,
                    max_abs_error: e.max_abs,
                    mismatch_rate: e.mismatched as f64 / n,
                }
            })
            .collect();
        InferenceReport {
            fidelity,
            seed,
            samples: self.samples,
            correct: self.correct,
            accuracy: if self.samples == 0 {
                0.0
            } else {
                self.correct as f64 / self.samples as f64
            },
            layers,
        }
    }
}

/// Accuracy of the software reference.
pub fn reference_accuracy(net: &QuantNetwork, dataset: &[Sample]) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    let mut correct = 0;
    for s in dataset {
        if argmax(&net.reference_forward(&s.pixels)?) == s.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / dataset.len() as f64)
}

/// Run every sample through the chip in order.
pub fn run_inference(chip: &Chip, net: &QuantNetwork, dataset: &[Sample]) -> Result<InferenceReport> {
    if dataset.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    let mut t = Tally::default();
    for s in dataset {
        if s.label >= net.classes() {
            return Err(Error::Domain {
                what: "label",
                value: s.label as i64,
            });
        }
        t.add(&chip.forward(net, &s.pixels)?, s.label);
    }
    Ok(t.finish(chip.opts.fidelity, chip.opts.seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::device::DeviceParams;
    use crate::lut::GridSpec;
    use proptest::prelude::*;
    use rand_chacha::rand_core::{RngCore, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_layer(rng: &mut ChaCha8Rng, n: usize, m: usize, p: Precision, act: Activation) -> DenseLayer {
        let weights = (0..n * m)
            .map(|_| match p {
                Precision::Binary => {
                    if rng.next_u32() & 1 == 1 {
                        1
                    } else {
                        -1
                    }
                }
                Precision::Int4 => (rng.next_u32() % 16) as i8 - 8,
            })
            .collect();
        let bias = (0..m).map(|_| (rng.next_u32() % 9) as i64 - 4).collect();
        DenseLayer {
            inputs: n,
            outputs: m,
            precision: p,
            weights,
            bias,
            activation: act,
        }
    }

    fn bnn(rng: &mut ChaCha8Rng, sizes: &[usize]) -> QuantNetwork {
        let last = sizes.len() - 2;
        let layers = (0..=last)
            .map(|k| {
                let act = if k == last { Activation::Identity } else { Activation::Sign };
                rand_layer(rng, sizes[k], sizes[k + 1], Precision::Binary, act)
            })
            .collect();
        QuantNetwork {
            input: InputEncoding::Binarize { threshold: 8 },
            layers,
        }
    }

    fn int4(rng: &mut ChaCha8Rng, sizes: &[usize]) -> QuantNetwork {
        let last = sizes.len() - 2;
        let layers = (0..=last)
            .map(|k| {
                let act = if k == last {
                    Activation::Identity
                } else {
                    Activation::Relu4 { mult: 3, shift: 7 }
                };
                rand_layer(rng, sizes[k], sizes[k + 1], Precision::Int4, act)
            })
            .collect();
        QuantNetwork {
            input: InputEncoding::Uniform4 { max: 16 },
            layers,
        }
    }

    fn pixels(rng: &mut ChaCha8Rng, n: usize) -> Vec<u8> {
        (0..n).map(|_| (rng.next_u32() % 17) as u8).collect()
    }

    fn luts(kind: BitcellKind) -> Arc<LutSet> {
        let p = DeviceParams::default();
        let v = CrossbarConfig::default_v_read(kind).0;
        let grid = GridSpec::for_kind(kind, v + 0.02, if v > 0.3 { 0.02 } else { 0.005 }, None).unwrap();
        Arc::new(LutSet::build(kind, p.v_dd, &grid, &p).unwrap())
    }

    #[test]
    fn tiling_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let arr = CrossbarConfig::for_kind(BitcellKind::StrideI);
        let one = QuantNetwork {
            input: InputEncoding::Binarize { threshold: 8 },
            layers: vec![rand_layer(&mut rng, 64, 64, Precision::Binary, Activation::Identity)],
        };
        assert_eq!(compile_network(&one, &arr, 8).unwrap().layers[0].tiles.len(), 1);
        let wide = QuantNetwork {
            input: InputEncoding::Binarize { threshold: 8 },
            layers: vec![rand_layer(&mut rng, 130, 10, Precision::Binary, Activation::Identity)],
        };
        let p = compile_network(&wide, &arr, 8).unwrap();
        let spans: Vec<usize> = p.layers[0].row_tiles.iter().map(|r| r.len()).collect();
        assert_eq!(spans, vec![64, 64, 2]);
        let q = int4(&mut rng, &[64, 64]);
        assert_eq!(compile_network(&q, &arr, 8).unwrap().layers[0].tiles.len(), 4);
    }

    #[test]
    fn every_weight_mapped_once() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = int4(&mut rng, &[70, 20, 5]);
        let arr = CrossbarConfig {
            rows: 16,
            cols: 8,
            ..CrossbarConfig::for_kind(BitcellKind::TwoT2Mtj)
        };
        let plan = compile_network(&net, &arr, 4).unwrap();
        for (l, lp) in net.layers.iter().zip(&plan.layers) {
            let mut seen = vec![0u32; l.weights.len()];
            let mut rebuilt = vec![0i64; l.weights.len()];
            for t in &lp.tiles {
                assert!(t.rows.len() <= arr.rows);
                let cols = t.cols.len();
                for (r, src) in t.rows.clone().enumerate() {
                    for (c, dst) in t.cols.clone().enumerate() {
                        let k = src * l.outputs + dst;
                        seen[k] += 1;
                        let bit = t.weights[r * cols + c] as i64;
                        rebuilt[k] += if t.plane == 3 { -bit << 3 } else { bit << t.plane };
                    }
                }
            }
            assert!(seen.iter().all(|&s| s == 4));
            let orig: Vec<i64> = l.weights.iter().map(|&w| w as i64).collect();
            assert_eq!(rebuilt, orig);
        }
    }

    #[test]
    fn folded_bias() {
        let net = QuantNetwork {
            input: InputEncoding::Binarize { threshold: 1 },
            layers: vec![DenseLayer {
                inputs: 2,
                outputs: 1,
                precision: Precision::Binary,
                weights: vec![1, 1],
                bias: vec![5],
                activation: Activation::Identity,
            }],
        };
        let plan = compile_network(&net, &CrossbarConfig::for_kind(BitcellKind::StrideII), 2).unwrap();
        assert_eq!(plan.layers[0].bias, vec![3]);
    }

    #[test]
    fn reference_examples() {
        assert_eq!(mvm_reference(&[1; 8], &[1; 8], 1, Precision::Binary).unwrap(), vec![8]);
        assert_eq!(mvm_reference(&[3, -2], &[1, 2], 1, Precision::Int4).unwrap(), vec![-1]);
        assert!(mvm_reference(&[0], &[1], 1, Precision::Binary).is_err());
        assert!(mvm_reference(&[1], &[-1], 1, Precision::Int4).is_err());
    }

    #[test]
    fn activations() {
        assert_eq!(Activation::Sign.apply(0), 1);
        assert_eq!(Activation::Sign.apply(-1), -1);
        let r = Activation::Relu4 { mult: 1, shift: 2 };
        assert_eq!(r.apply(-9), 0);
        assert_eq!(r.apply(6), 2);
        assert_eq!(r.apply(5), 1);
        assert_eq!(r.apply(1000), 15);
    }

    #[test]
    fn input_encoding() {
        let net = QuantNetwork {
            input: InputEncoding::Uniform4 { max: 16 },
            layers: vec![DenseLayer {
                inputs: 3,
                outputs: 1,
                precision: Precision::Int4,
                weights: vec![1, 1, 1],
                bias: vec![0],
                activation: Activation::Identity,
            }],
        };
        assert_eq!(net.encode_input(&[0, 8, 16]).unwrap(), vec![0, 8, 15]);
        assert!(net.encode_input(&[0]).is_err());
    }

    #[test]
    fn invalid_networks() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut net = bnn(&mut rng, &[8, 4, 2]);
        net.layers[1].inputs = 3;
        assert!(net.validate().is_err());
        let mut net = bnn(&mut rng, &[8, 4, 2]);
        net.layers[0].activation = Activation::Relu4 { mult: 1, shift: 1 };
        assert!(net.validate().is_err());
        let mut net = bnn(&mut rng, &[8, 4]);
        net.layers[0].weights[0] = 0;
        assert!(net.validate().is_err());
        let mut net = bnn(&mut rng, &[8, 4]);
        net.input = InputEncoding::Uniform4 { max: 16 };
        assert!(net.validate().is_err());
    }

    fn small_array(kind: BitcellKind, rows: usize, cols: usize) -> CrossbarConfig {
        CrossbarConfig {
            rows,
            cols,
            ..CrossbarConfig::for_kind(kind)
        }
    }

    #[test]
    fn ideal_path_matches_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let nets = [bnn(&mut rng, &[20, 12, 4]), int4(&mut rng, &[20, 6, 3])];
        let inputs: Vec<Vec<u8>> = (0..4).map(|_| pixels(&mut rng, 20)).collect();
        for kind in BitcellKind::ALL {
            let l = luts(kind);
            for net in &nets {
                for (rows, cols, pwa) in [(8, 8, 4), (16, 5, 16)] {
                    let arr = small_array(kind, rows, cols);
                    let plan = compile_network(net, &arr, pwa).unwrap();
                    let chip = Chip::new(plan, l.clone(), &arr, ChipOptions::new(Fidelity::Ideal, 0)).unwrap();
                    for x in &inputs {
                        let f = chip.forward(net, x).unwrap();
                        assert_eq!(f.logits, net.reference_forward(x).unwrap(), "{kind}");
                        assert!(f.errors.iter().all(|e| e.sum_abs == 0));
                    }
                }
            }
        }
    }

    #[test]
    fn zero_parasitics_equal_ideal() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let kind = BitcellKind::StrideII;
        let net = bnn(&mut rng, &[8, 8]);
        let arr = small_array(kind, 8, 8).ideal();
        let plan = compile_network(&net, &arr, 8).unwrap();
        let l = luts(kind);
        let ideal = Chip::new(plan.clone(), l.clone(), &arr, ChipOptions::new(Fidelity::Ideal, 0)).unwrap();
        let non = Chip::new(plan, l, &arr, ChipOptions::new(Fidelity::NonIdeal, 0)).unwrap();
        for _ in 0..8 {
            let x = pixels(&mut rng, 8);
            assert_eq!(ideal.forward(&net, &x).unwrap(), non.forward(&net, &x).unwrap());
        }
    }

    #[test]
    fn calibration_keeps_ideal_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let kind = BitcellKind::OneT1Mtj;
        let net = int4(&mut rng, &[16, 4]);
        let arr = small_array(kind, 16, 4);
        let plan = compile_network(&net, &arr, 8).unwrap();
        let mut chip = Chip::new(plan, luts(kind), &arr, ChipOptions::new(Fidelity::Ideal, 0)).unwrap();
        let samples: Vec<Sample> = (0..4)
            .map(|_| Sample {
                pixels: pixels(&mut rng, 16),
                label: 0,
            })
            .collect();
        let cal = chip.calibrate(&net, &samples, 0.7, 1.0, 64, Loss::Mae).unwrap();
        assert_eq!(cal[0].loss, 0.0);
        assert_eq!(chip.plan().layers[0].adc.i_quant, Amps(1.0));
    }

    #[test]
    fn variation_draws_are_per_tile_and_seeded() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let kind = BitcellKind::StrideI;
        let net = bnn(&mut rng, &[16, 8]);
        let arr = small_array(kind, 8, 8);
        let plan = compile_network(&net, &arr, 8).unwrap();
        let l = luts(kind);
        let mut o = ChipOptions::new(Fidelity::NonIdealVariation, 11);
        o.sigmas = BranchSigmas { p: 0.3, ap: 0.1 };
        let a = Chip::new(plan.clone(), l.clone(), &arr, o).unwrap();
        let b = Chip::new(plan, l, &arr, o).unwrap();
        let fa = a.arrays[0][0].variation().unwrap();
        assert_eq!(fa, b.arrays[0][0].variation().unwrap());
        assert_ne!(fa, a.arrays[0][1].variation().unwrap());
    }

    #[test]
    fn unit_current_is_positive() {
        for kind in [BitcellKind::StrideI, BitcellKind::OneT1Mtj] {
            let l = luts(kind);
            let arr = CrossbarConfig::for_kind(kind);
            for mode in [ImcMode::Xnor, ImcMode::And] {
                let u = unit_current(&l, &arr, &ImcScheme::new(mode), &IterOptions::default()).unwrap();
                assert!(u.0 > 1e-6 && u.0 < 1e-4, "{kind} {u:?}");
            }
        }
    }

    fn naive_binary(w: &[i8], x: &[i8], m: usize) -> Vec<i64> {
        // popcount of matching signs
        (0..m)
            .map(|c| {
                let n = x.len() as i64;
                let matches = x.iter().enumerate().filter(|(r, &v)| v == w[r * m + c]).count() as i64;
                2 * matches - n
            })
            .collect()
    }

    fn naive_int4(w: &[i8], x: &[i8], m: usize) -> Vec<i64> {
        let xu: Vec<u8> = x.iter().map(|&v| v as u8).collect();
        let xp = bit_slice_inputs(&xu).unwrap();
        let wp = bit_slice_weights(w).unwrap();
        (0..m)
            .map(|c| {
                let mut o = [[0i64; 4]; 4];
                for i in 0..4 {
                    for j in 0..4 {
                        o[i][j] = (0..x.len()).map(|r| (xp[i][r] & wp[j][r * m + c]) as i64).sum();
                    }
                }
                bit_stream_accumulate(&o)
            })
            .collect()
    }

    proptest! {
        #[test]
        fn reference_matches_independent_forms(seed in any::<u64>(), m in 1usize..5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let b = rand_layer(&mut rng, 64, m, Precision::Binary, Activation::Identity);
            let xb: Vec<i8> = (0..64).map(|_| if rng.next_u32() & 1 == 1 { 1 } else { -1 }).collect();
            prop_assert_eq!(mvm_reference(&b.weights, &xb, m, Precision::Binary).unwrap(), naive_binary(&b.weights, &xb, m));
            let q = rand_layer(&mut rng, 64, m, Precision::Int4, Activation::Identity);
            let xq: Vec<i8> = (0..64).map(|_| (rng.next_u32() % 16) as i8).collect();
            prop_assert_eq!(mvm_reference(&q.weights, &xq, m, Precision::Int4).unwrap(), naive_int4(&q.weights, &xq, m));
        }

        #[test]
        fn tally_merge_is_order_free(a in proptest::collection::vec(-5i64..5, 1..20), b in proptest::collection::vec(-5i64..5, 1..20)) {
            let zero_a = vec![0; a.len()];
            let zero_b = vec![0; b.len()];
            let mut x = ErrorTally::default();
            x.add(&a, &zero_a);
            let mut y = ErrorTally::default();
            y.add(&b, &zero_b);
            let mut xy = x;
            xy.merge(&y);
            let mut yx = y;
            yx.merge(&x);
            prop_assert_eq!(xy, yx);
        }
    }
}
