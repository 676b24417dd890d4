//! Crossbar arrays with driver, wire and sink parasitics.
//!
//! Bitlines are driven from the top through R_D and run down the column with
//! R_w per cell. Wordlines are ideal, so every column is an independent
//! network.

use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use crate::bitcell::{stamp_cell, CellDevices, CellHandles, CellTerminals};
use crate::circuit::{CircuitBuilder, NodeId, SolveOptions};
use crate::device::{BitcellKind, CellState, DeviceParams};
use crate::error::{Error, Result};
use crate::lut::{LutSet, LutTerminal, LutView};
use crate::units::{Amps, Ohms, Volts};

/// How the source lines are terminated.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "type", rename_all = "kebab-case"))]
pub enum SinkModel {
    /// Op-amp virtual ground at every cell.
    #[default]
    VirtualGround,
    /// Distributed source line (R_w per cell) ending in `r_sink` to ground at
    /// the bottom of the column.
    Resistive { r_sink: Ohms },
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CrossbarConfig {
    pub rows: usize,
    pub cols: usize,
    pub kind: BitcellKind,
    pub r_driver: Ohms,
    pub r_wire: Ohms,
    pub sink: SinkModel,
    pub v_read: Volts,
    pub v_dd: Volts,
}

impl CrossbarConfig {
    pub const DEFAULT_R_DRIVER: Ohms = Ohms(250.0);

    /// Per-cell bitline resistance. The taller STRIDe-I cell gets the longer
    /// wire; the value reproduces a 0.61 V worst effective read voltage.
    pub fn default_r_wire(kind: BitcellKind) -> Ohms {
        match kind {
            BitcellKind::StrideI => Ohms(2.4),
            _ => Ohms(2.1),
        }
    }

    /// Operating read voltage at the default device parameters. Baselines are
    /// biased for a 21 uA high current.
    pub fn default_v_read(kind: BitcellKind) -> Volts {
        match kind {
            BitcellKind::StrideI => Volts(0.68),
            BitcellKind::StrideII => Volts(0.65),
            _ => Volts(0.1293),
        }
    }

    pub fn for_kind(kind: BitcellKind) -> Self {
        Self {
            rows: 64,
            cols: 64,
            kind,
            r_driver: Self::DEFAULT_R_DRIVER,
            r_wire: Self::default_r_wire(kind),
            sink: SinkModel::VirtualGround,
            v_read: Self::default_v_read(kind),
            v_dd: Volts(1.2),
        }
    }

    pub fn ideal(mut self) -> Self {
        self.r_driver = Ohms::ZERO;
        self.r_wire = Ohms::ZERO;
        self.sink = SinkModel::VirtualGround;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 {
            return Err(Error::param("crossbar.rows", "array needs at least one row and column"));
        }
        for (name, r) in [("crossbar.r_driver", self.r_driver), ("crossbar.r_wire", self.r_wire)] {
            if !(r.0.is_finite() && r.0 >= 0.0) {
                return Err(Error::param(name, "must be finite and non-negative"));
            }
        }
        if let SinkModel::Resistive { r_sink } = self.sink {
            if !(r_sink.0.is_finite() && r_sink.0 >= 0.0) {
                return Err(Error::param("crossbar.sink.r_sink", "must be finite and non-negative"));
            }
        }
        if !(self.v_read.0 > 0.0 && self.v_read.0 <= self.v_dd.0) {
            return Err(Error::param("crossbar.v_read", "must lie in (0, v_dd]"));
        }
        Ok(())
    }

    pub fn is_ideal(&self) -> bool {
        self.r_driver.0 == 0.0
            && self.r_wire.0 == 0.0
            && matches!(self.sink, SinkModel::VirtualGround)
    }
}

/// Worst effective read voltage when `pwa` cells at the bottom of a column all
/// draw `i_h` from the same line.
pub fn worst_case_vread(config: &CrossbarConfig, pwa: usize, i_h: Amps) -> Result<Volts> {
    if pwa == 0 || pwa > config.rows {
        return Err(Error::Domain {
            what: "pwa",
            value: pwa as i64,
        });
    }
    let n = config.rows as f64;
    let p = pwa as f64;
    let ih = i_h.0;
    let rd = config.r_driver.0;
    let rw = config.r_wire.0;
    let tri = p * (p + 1.0) / 2.0;
    Ok(Volts(config.v_read.0 - ih * p * (rd + (n - p - 1.0) * rw) - ih * rw * tri))
}

/// Per-cell wire resistance that yields `target` from [`worst_case_vread`].
pub fn back_solve_r_wire(config: &CrossbarConfig, pwa: usize, i_h: Amps, target: Volts) -> Result<Ohms> {
    if pwa == 0 || pwa > config.rows {
        return Err(Error::Domain {
            what: "pwa",
            value: pwa as i64,
        });
    }
    let n = config.rows as f64;
    let p = pwa as f64;
    let per_ohm = i_h.0 * (p * (n - p - 1.0) + p * (p + 1.0) / 2.0);
    let rest = config.v_read.0 - i_h.0 * p * config.r_driver.0 - target.0;
    Ok(Ohms(rest / per_ohm))
}

/// An array of one bitcell kind with its stored states and the shared tables.
#[derive(Clone, Debug)]
pub struct CrossbarInstance {
    config: CrossbarConfig,
    states: Vec<CellState>,
    luts: Arc<LutSet>,
    /// Per-cell multiplicative current deviations (left, right).
    variation: Option<Vec<[f64; 2]>>,
}

pub fn build_array(config: CrossbarConfig, states: Vec<CellState>, luts: Arc<LutSet>) -> Result<CrossbarInstance> {
    config.validate()?;
    if states.len() != config.rows * config.cols {
        return Err(Error::Shape {
            what: "weight matrix",
            expected: config.rows * config.cols,
            got: states.len(),
        });
    }
    if luts.kind != config.kind {
        return Err(Error::MissingLut(alloc::format!("{} (tables are for {})", config.kind, luts.kind)));
    }
    let wants_sl = !matches!(config.sink, SinkModel::VirtualGround);
    let has_sl = luts.terminals().contains(&LutTerminal::Sl);
    if wants_sl != has_sl {
        return Err(Error::param(
            "crossbar.sink",
            "tables must sweep the source lines exactly when the sink is resistive",
        ));
    }
    for s in &states {
        s.check(config.kind)?;
        luts.get(*s, true)?;
        luts.get(*s, false)?;
    }
    for lut in &luts.luts {
        for (t, a) in lut.grid.terminals.iter().zip(&lut.grid.axes) {
            if matches!(t, LutTerminal::Bl | LutTerminal::Blb) && a.end() < config.v_read.0 - 1e-12 {
                return Err(Error::param("lut.grid", "bitline axis does not reach v_read"));
            }
        }
    }
    Ok(CrossbarInstance {
        config,
        states,
        luts,
        variation: None,
    })
}

/// Currents on the lines of one column. Lines a kind lacks read zero.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ColumnCurrents {
    pub i_bl: Amps,
    pub i_blb: Amps,
    pub i_sl: Amps,
    pub i_slb: Amps,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ArraySolution {
    pub rows: usize,
    pub cols: usize,
    /// Effective (bl, blb, sl, slb) voltages seen by each cell, row-major.
    pub cell_voltages: Vec<[f64; 4]>,
    /// (left, right) branch currents, row-major.
    pub cell_currents: Vec<[f64; 2]>,
    pub columns: Vec<ColumnCurrents>,
    pub iterations: usize,
    pub max_update: f64,
    pub converged: bool,
}

impl ArraySolution {
    pub fn cell(&self, row: usize, col: usize) -> [f64; 2] {
        self.cell_currents[row * self.cols + col]
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IterOptions {
    /// Largest accepted per-cell voltage update, V.
    pub tol: f64,
    pub max_iter: usize,
    pub damping: f64,
}

impl Default for IterOptions {
    fn default() -> Self {
        Self {
            tol: 10e-6,
            max_iter: 500,
            damping: 0.5,
        }
    }
}

const TRACE_TAIL: usize = 16;

fn line_currents(kind: BitcellKind, l: f64, r: f64) -> (f64, f64) {
    match kind {
        BitcellKind::StrideI => (l + r, 0.0),
        BitcellKind::OneT1Mtj => (l, 0.0),
        BitcellKind::TwoT2Mtj | BitcellKind::StrideII => (l, r),
    }
}

impl CrossbarInstance {
    pub fn config(&self) -> &CrossbarConfig {
        &self.config
    }

    pub fn states(&self) -> &[CellState] {
        &self.states
    }

    pub fn luts(&self) -> &Arc<LutSet> {
        &self.luts
    }

    pub fn state(&self, row: usize, col: usize) -> CellState {
        self.states[row * self.config.cols + col]
    }

    /// Attach per-cell (left, right) current multipliers.
    pub fn set_variation(&mut self, factors: Option<Vec<[f64; 2]>>) -> Result<()> {
        if let Some(f) = &factors {
            if f.len() != self.states.len() {
                return Err(Error::Shape {
                    what: "variation factors",
                    expected: self.states.len(),
                    got: f.len(),
                });
            }
        }
        self.variation = factors;
        Ok(())
    }

    pub fn variation(&self) -> Option<&[[f64; 2]]> {
        self.variation.as_deref()
    }

    /// Replace the stored states, keeping tables and parasitics.
    pub fn set_states(&mut self, states: Vec<CellState>) -> Result<()> {
        if states.len() != self.states.len() {
            return Err(Error::Shape {
                what: "weight matrix",
                expected: self.states.len(),
                got: states.len(),
            });
        }
        for s in &states {
            s.check(self.config.kind)?;
        }
        self.states = states;
        Ok(())
    }

    fn check_wl(&self, wl: &[bool]) -> Result<()> {
        if wl.len() != self.config.rows {
            return Err(Error::Shape {
                what: "wordline vector",
                expected: self.config.rows,
                got: wl.len(),
            });
        }
        Ok(())
    }

    /// Damped fixed-point solve of every column.
    pub fn solve_iterative(&self, wl: &[bool], opts: &IterOptions) -> Result<ArraySolution> {
        self.check_wl(wl)?;
        let (n, m) = (self.config.rows, self.config.cols);
        let mut sol = ArraySolution {
            rows: n,
            cols: m,
            cell_voltages: vec![[0.0; 4]; n * m],
            cell_currents: vec![[0.0; 2]; n * m],
            columns: vec![ColumnCurrents::default(); m],
            iterations: 0,
            max_update: 0.0,
            converged: true,
        };
        let mut ws = ColumnWork::new(n);
        for c in 0..m {
            let (it, upd) = self.solve_column(c, wl, opts, &mut ws)?;
            sol.iterations = sol.iterations.max(it);
            sol.max_update = sol.max_update.max(upd);
            let mut col = ColumnCurrents::default();
            for r in 0..n {
                let k = r * m + c;
                let (l, rt) = (ws.il[r], ws.ir[r]);
                sol.cell_voltages[k] = [ws.bl[r], ws.blb[r], ws.sl[r], ws.slb[r]];
                sol.cell_currents[k] = [l, rt];
                let (s, sb) = line_currents(self.config.kind, l, rt);
                col.i_bl.0 += l;
                col.i_blb.0 += rt;
                col.i_sl.0 += s;
                col.i_slb.0 += sb;
            }
            sol.columns[c] = col;
        }
        Ok(sol)
    }

    fn views<'a>(&'a self, c: usize, wl: &[bool], out: &mut Vec<LutView<'a>>) -> Result<()> {
        out.clear();
        for (r, on) in wl.iter().enumerate() {
            out.push(self.luts.get(self.state(r, c), *on)?);
        }
        Ok(())
    }

    fn solve_column(&self, c: usize, wl: &[bool], opts: &IterOptions, ws: &mut ColumnWork) -> Result<(usize, f64)> {
        let n = self.config.rows;
        let m = self.config.cols;
        let kind = self.config.kind;
        let v_read = self.config.v_read.0;
        let rd = self.config.r_driver.0;
        let rw = self.config.r_wire.0;
        let sink = match self.config.sink {
            SinkModel::VirtualGround => None,
            SinkModel::Resistive { r_sink } => Some(r_sink.0),
        };
        let dims = self.luts.terminals().len();
        let mut views = Vec::with_capacity(n);
        self.views(c, wl, &mut views)?;
        ws.reset(v_read);
        let mut damping = opts.damping;
        let mut prev_upd = f64::INFINITY;
        let mut trace: Vec<f64> = Vec::new();
        let mut q = [0.0; 4];
        for it in 0..opts.max_iter {
            for r in 0..n {
                let full = [ws.bl[r], ws.blb[r], ws.sl[r], ws.slb[r]];
                let (l, rt) = match dims {
                    1 => views[r].lut.eval1(full[0]),
                    _ => {
                        let mut k = 0;
                        for t in self.luts.terminals() {
                            q[k] = match t {
                                LutTerminal::Bl => full[0],
                                LutTerminal::Blb => full[1],
                                LutTerminal::Sl => full[2],
                                LutTerminal::Slb => full[3],
                            };
                            k += 1;
                        }
                        views[r].eval(&q[..dims])
                    }
                };
                let f = self.variation.as_ref().map_or([1.0, 1.0], |v| v[r * m + c]);
                ws.il[r] = l * f[0];
                ws.ir[r] = rt * f[1];
            }
            // bitlines: suffix sums flow down from the driver
            let mut s_l: f64 = ws.il.iter().sum();
            let mut s_r: f64 = ws.ir.iter().sum();
            let mut vb = v_read - rd * s_l;
            let mut vbb = v_read - rd * s_r;
            let mut upd = 0.0f64;
            for r in 0..n {
                if r > 0 {
                    vb -= rw * s_l;
                    vbb -= rw * s_r;
                }
                ws.nbl[r] = vb;
                ws.nblb[r] = vbb;
                s_l -= ws.il[r];
                s_r -= ws.ir[r];
            }
            if let Some(rs) = sink {
                // source lines: prefix sums flow down into the sink
                let (mut p, mut pb) = (0.0, 0.0);
                for r in 0..n {
                    let (a, b) = line_currents(kind, ws.il[r], ws.ir[r]);
                    p += a;
                    pb += b;
                    ws.psl[r] = p;
                    ws.pslb[r] = pb;
                }
                let mut vs = rs * ws.psl[n - 1];
                let mut vsb = rs * ws.pslb[n - 1];
                for r in (0..n).rev() {
                    if r + 1 < n {
                        vs += rw * ws.psl[r];
                        vsb += rw * ws.pslb[r];
                    }
                    ws.nsl[r] = vs;
                    ws.nslb[r] = vsb;
                }
            }
            for r in 0..n {
                upd = upd
                    .max(libm::fabs(ws.nbl[r] - ws.bl[r]))
                    .max(libm::fabs(ws.nblb[r] - ws.blb[r]))
                    .max(libm::fabs(ws.nsl[r] - ws.sl[r]))
                    .max(libm::fabs(ws.nslb[r] - ws.slb[r]));
            }
            if !upd.is_finite() {
                return Err(Error::NonFinite { step: it });
            }
            if trace.len() == TRACE_TAIL {
                trace.remove(0);
            }
            trace.push(upd);
            if upd < opts.tol {
                ws.bl.copy_from_slice(&ws.nbl);
                ws.blb.copy_from_slice(&ws.nblb);
                ws.sl.copy_from_slice(&ws.nsl);
                ws.slb.copy_from_slice(&ws.nslb);
                // final currents at the accepted voltages
                for r in 0..n {
                    let full = [ws.bl[r], ws.blb[r], ws.sl[r], ws.slb[r]];
                    let mut k = 0;
                    for t in self.luts.terminals() {
                        q[k] = match t {
                            LutTerminal::Bl => full[0],
                            LutTerminal::Blb => full[1],
                            LutTerminal::Sl => full[2],
                            LutTerminal::Slb => full[3],
                        };
                        k += 1;
                    }
                    let (l, rt) = views[r].eval(&q[..dims]);
                    let f = self.variation.as_ref().map_or([1.0, 1.0], |v| v[r * m + c]);
                    ws.il[r] = l * f[0];
                    ws.ir[r] = rt * f[1];
                }
                return Ok((it + 1, upd));
            }
            if upd > prev_upd {
                damping = (damping * 0.5).max(0.02);
            }
            prev_upd = upd;
            for r in 0..n {
                ws.bl[r] += damping * (ws.nbl[r] - ws.bl[r]);
                ws.blb[r] += damping * (ws.nblb[r] - ws.blb[r]);
                ws.sl[r] += damping * (ws.nsl[r] - ws.sl[r]);
                ws.slb[r] += damping * (ws.nslb[r] - ws.slb[r]);
            }
        }
        Err(Error::NonConvergence {
            solver: "crossbar fixed point",
            iterations: opts.max_iter,
            residual: prev_upd,
            trace,
        })
    }

    /// Full nodal analysis of the array with analytic devices. Every wire node
    /// and cell internal node is an unknown.
    pub fn solve_dense_oracle(&self, wl: &[bool], params: &DeviceParams) -> Result<ArraySolution> {
        self.check_wl(wl)?;
        if self.variation.is_some() {
            return Err(Error::param("variation", "the oracle solves nominal devices only"));
        }
        let (n, m) = (self.config.rows, self.config.cols);
        if n * m > 256 {
            return Err(Error::param("crossbar", "oracle limited to 256 cells"));
        }
        let kind = self.config.kind;
        let dev = CellDevices::nominal(params);
        let mut b = CircuitBuilder::new();
        let drive = b.source(self.config.v_read.0);
        let gnd = b.source(0.0);
        let on = b.source(self.config.v_dd.0);
        let mut handles: Vec<(CellHandles, [NodeId; 4])> = Vec::with_capacity(n * m);
        let mut drivers = Vec::with_capacity(m);
        // column-major numbering keeps the Jacobian narrow
        for c in 0..m {
            let mut prev_bl = None;
            let mut prev_blb = None;
            let mut sl_nodes: Vec<(NodeId, NodeId)> = Vec::with_capacity(n);
            let mut col_drivers = (None, None);
            for r in 0..n {
                let bl = b.node();
                let blb = b.node();
                match (prev_bl, prev_blb) {
                    (None, None) => {
                        col_drivers = (
                            Some(b.resistor(drive, bl, self.config.r_driver.0)),
                            Some(b.resistor(drive, blb, self.config.r_driver.0)),
                        );
                    }
                    (Some(pb), Some(pbb)) => {
                        b.resistor(pb, bl, self.config.r_wire.0);
                        b.resistor(pbb, blb, self.config.r_wire.0);
                    }
                    _ => unreachable!(),
                }
                let (sl, slb) = match self.config.sink {
                    SinkModel::VirtualGround => (gnd, gnd),
                    SinkModel::Resistive { .. } => {
                        let s = b.node();
                        let sb = b.node();
                        if let Some(&(ps, psb)) = sl_nodes.last() {
                            b.resistor(ps, s, self.config.r_wire.0);
                            b.resistor(psb, sb, self.config.r_wire.0);
                        }
                        (s, sb)
                    }
                };
                sl_nodes.push((sl, slb));
                let t = CellTerminals {
                    bl,
                    blb,
                    sl,
                    slb,
                    wl: if wl[r] { on } else { gnd },
                    wwl: gnd,
                };
                let h = stamp_cell(&mut b, kind, self.state(r, c), &dev, &t)?;
                handles.push((h, [bl, blb, sl, slb]));
                prev_bl = Some(bl);
                prev_blb = Some(blb);
            }
            if let SinkModel::Resistive { r_sink } = self.config.sink {
                let (s, sb) = sl_nodes[n - 1];
                b.resistor(s, gnd, r_sink.0);
                b.resistor(sb, gnd, r_sink.0);
            }
            drivers.push(col_drivers);
        }
        let circuit = b.build()?;
        let opts = SolveOptions {
            tol: 5e-14,
            ..SolveOptions::default()
        };
        let x = circuit.solve(&opts)?;
        let mut sol = ArraySolution {
            rows: n,
            cols: m,
            cell_voltages: vec![[0.0; 4]; n * m],
            cell_currents: vec![[0.0; 2]; n * m],
            columns: vec![ColumnCurrents::default(); m],
            iterations: 1,
            max_update: circuit.max_residual(&x),
            converged: true,
        };
        for c in 0..m {
            let mut col = ColumnCurrents::default();
            for r in 0..n {
                let (h, nodes) = &handles[c * n + r];
                let l = circuit.current(&x, h.mtj_left);
                let rt = h.mtj_right.map_or(0.0, |e| circuit.current(&x, e));
                let k = r * m + c;
                sol.cell_currents[k] = [l, rt];
                sol.cell_voltages[k] = [
                    circuit.voltage(&x, nodes[0]),
                    circuit.voltage(&x, nodes[1]),
                    circuit.voltage(&x, nodes[2]),
                    circuit.voltage(&x, nodes[3]),
                ];
                let (s, sb) = line_currents(kind, l, rt);
                col.i_bl.0 += l;
                col.i_blb.0 += rt;
                col.i_sl.0 += s;
                col.i_slb.0 += sb;
            }
            sol.columns[c] = col;
        }
        Ok(sol)
    }
}

struct ColumnWork {
    bl: Vec<f64>,
    blb: Vec<f64>,
    sl: Vec<f64>,
    slb: Vec<f64>,
    nbl: Vec<f64>,
    nblb: Vec<f64>,
    nsl: Vec<f64>,
    nslb: Vec<f64>,
    il: Vec<f64>,
    ir: Vec<f64>,
    psl: Vec<f64>,
    pslb: Vec<f64>,
}

impl ColumnWork {
    fn new(n: usize) -> Self {
        Self {
            bl: vec![0.0; n],
            blb: vec![0.0; n],
            sl: vec![0.0; n],
            slb: vec![0.0; n],
            nbl: vec![0.0; n],
            nblb: vec![0.0; n],
            nsl: vec![0.0; n],
            nslb: vec![0.0; n],
            il: vec![0.0; n],
            ir: vec![0.0; n],
            psl: vec![0.0; n],
            pslb: vec![0.0; n],
        }
    }

    fn reset(&mut self, v: f64) {
        self.bl.iter_mut().for_each(|x| *x = v);
        self.blb.iter_mut().for_each(|x| *x = v);
        for buf in [&mut self.sl, &mut self.slb, &mut self.nsl, &mut self.nslb] {
            buf.iter_mut().for_each(|x| *x = 0.0);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::device::MtjState;
    use crate::lut::GridSpec;

    fn set(kind: BitcellKind, v_max: f64, step: f64) -> Arc<LutSet> {
        let grid = GridSpec::for_kind(kind, v_max, step, None).unwrap();
        Arc::new(LutSet::build(kind, Volts(1.2), &grid, &DeviceParams::default()).unwrap())
    }

    #[test]
    fn eq5_zero_parasitics_is_identity() {
        let cfg = CrossbarConfig::for_kind(BitcellKind::StrideI).ideal();
        assert_eq!(worst_case_vread(&cfg, 8, Amps(22.3e-6)).unwrap(), cfg.v_read);
    }

    #[test]
    fn eq5_back_solve_reproduces_paper_point() {
        let cfg = CrossbarConfig::for_kind(BitcellKind::StrideI);
        let rw = back_solve_r_wire(&cfg, 8, Amps(22.3e-6), Volts(0.61)).unwrap();
        assert!((rw.0 - 2.393).abs() < 0.01, "{rw}");
        let check = CrossbarConfig { r_wire: rw, ..cfg.clone() };
        let v = worst_case_vread(&check, 8, Amps(22.3e-6)).unwrap();
        assert!((v.0 - 0.61).abs() < 1e-12);
        let v = worst_case_vread(&cfg, 8, Amps(22.3e-6)).unwrap();
        assert!((v.0 - 0.61).abs() < 0.005, "{v}");
        let v16 = worst_case_vread(&cfg, 16, Amps(22.3e-6)).unwrap();
        assert!(v16 < v);
        assert!(worst_case_vread(&cfg, 65, Amps(1e-6)).is_err());
    }

    #[test]
    fn shape_and_state_checks() {
        let luts = set(BitcellKind::StrideI, 0.7, 0.05);
        let cfg = CrossbarConfig {
            rows: 2,
            cols: 2,
            ..CrossbarConfig::for_kind(BitcellKind::StrideI)
        };
        let ok = vec![CellState::pair(MtjState::P); 4];
        assert!(build_array(cfg.clone(), ok.clone(), luts.clone()).is_ok());
        assert!(matches!(
            build_array(cfg.clone(), ok[..3].to_vec(), luts.clone()),
            Err(Error::Shape { .. })
        ));
        let bad = vec![CellState::Single(MtjState::P); 4];
        assert!(build_array(cfg, bad, luts).is_err());
    }

    #[test]
    fn ideal_all_on_gives_multiples_of_ih() {
        let luts = set(BitcellKind::StrideI, 0.7, 0.01);
        let cfg = CrossbarConfig {
            rows: 8,
            cols: 1,
            ..CrossbarConfig::for_kind(BitcellKind::StrideI).ideal()
        };
        let inst = build_array(cfg, vec![CellState::pair(MtjState::P); 8], luts.clone()).unwrap();
        let sol = inst.solve_iterative(&[true; 8], &IterOptions::default()).unwrap();
        let ih = luts.get(CellState::pair(MtjState::Ap), true).unwrap().eval(&[0.68, 0.68]).0;
        let col = sol.columns[0];
        assert!((col.i_blb.0 - 8.0 * ih).abs() < 1e-12 * ih);
        assert!(col.i_bl.0.abs() < 1e-2 * ih);
    }

    #[test]
    fn all_off_is_leakage_only() {
        let luts = set(BitcellKind::StrideII, 0.7, 0.01);
        let cfg = CrossbarConfig {
            rows: 16,
            cols: 2,
            ..CrossbarConfig::for_kind(BitcellKind::StrideII)
        };
        let inst = build_array(cfg, vec![CellState::pair(MtjState::Ap); 32], luts).unwrap();
        let sol = inst.solve_iterative(&[false; 16], &IterOptions::default()).unwrap();
        let params = DeviceParams::default();
        let per = crate::device::fet_current(Volts(0.0), Volts(0.65), &params).0 + params.leakage_floor.0;
        for c in &sol.columns {
            assert!(c.i_bl.0.abs() < 16.0 * per && c.i_blb.0.abs() < 16.0 * per, "{c:?}");
        }
    }

    #[test]
    fn series_drop_is_ohmic() {
        let params = DeviceParams::default();
        let luts = set(BitcellKind::OneT1Mtj, 0.2, 0.002);
        let cfg = CrossbarConfig {
            rows: 1,
            cols: 1,
            r_driver: Ohms(1000.0),
            ..CrossbarConfig::for_kind(BitcellKind::OneT1Mtj)
        };
        let inst = build_array(cfg, vec![CellState::Single(MtjState::P)], luts).unwrap();
        let sol = inst.solve_dense_oracle(&[true], &params).unwrap();
        let i = sol.cell_currents[0][0];
        let v = sol.cell_voltages[0][0];
        assert!((0.1293 - v - i * 1000.0).abs() < 1e-12);
        assert!(sol.max_update < 1e-13);
    }

    #[test]
    fn oracle_degenerates_to_bitcell() {
        let params = DeviceParams::default();
        let luts = set(BitcellKind::StrideI, 0.7, 0.05);
        let cfg = CrossbarConfig {
            rows: 1,
            cols: 1,
            ..CrossbarConfig::for_kind(BitcellKind::StrideI).ideal()
        };
        let st = CellState::pair(MtjState::Ap);
        let inst = build_array(cfg, vec![st], luts).unwrap();
        let sol = inst.solve_dense_oracle(&[true], &params).unwrap();
        let tv = crate::bitcell::TerminalVoltages::read(Volts(0.68), Volts(1.2));
        let d = crate::bitcell::solve_bitcell_dc(BitcellKind::StrideI, st, &tv, &params).unwrap();
        assert!((sol.cell_currents[0][0] - d.i_left.0).abs() < 1e-12 * d.i_left.0);
        assert!((sol.cell_currents[0][1] - d.i_right.0).abs() < 1e-9 * d.i_left.0);
    }

    #[test]
    fn iterative_matches_oracle_small() {
        let params = DeviceParams::default();
        let luts = set(BitcellKind::StrideI, 0.7, 0.002);
        let cfg = CrossbarConfig {
            rows: 4,
            cols: 4,
            r_driver: Ohms(500.0),
            r_wire: Ohms(5.0),
            ..CrossbarConfig::for_kind(BitcellKind::StrideI)
        };
        let states: Vec<CellState> = (0..16)
            .map(|k| CellState::pair(if k % 3 == 0 { MtjState::P } else { MtjState::Ap }))
            .collect();
        let inst = build_array(cfg, states, luts).unwrap();
        let wl = [true, false, true, true];
        let a = inst.solve_iterative(&wl, &IterOptions::default()).unwrap();
        let b = inst.solve_dense_oracle(&wl, &params).unwrap();
        for (x, y) in a.cell_currents.iter().zip(&b.cell_currents) {
            for k in 0..2 {
                let scale = y[0].abs().max(y[1].abs());
                assert!((x[k] - y[k]).abs() < 3e-3 * scale, "{x:?} {y:?}");
            }
        }
    }

    #[test]
    fn deterministic() {
        let luts = set(BitcellKind::StrideII, 0.7, 0.01);
        let cfg = CrossbarConfig {
            rows: 8,
            cols: 3,
            ..CrossbarConfig::for_kind(BitcellKind::StrideII)
        };
        let states = (0..24)
            .map(|k| CellState::pair(if k % 2 == 0 { MtjState::P } else { MtjState::Ap }))
            .collect();
        let inst = build_array(cfg, states, luts).unwrap();
        let wl = [true, true, false, true, false, true, true, false];
        let a = inst.solve_iterative(&wl, &IterOptions::default()).unwrap();
        let b = inst.solve_iterative(&wl, &IterOptions::default()).unwrap();
        assert_eq!(a, b);
    }
}
