//! Gridded bitcell current tables with multilinear interpolation.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::bitcell::{solve_cell_dc, BranchCurrents, CellDevices, TerminalVoltages};
use crate::device::{BitcellKind, CellState, DeviceParams, MtjState};
use crate::error::{Error, Result};
use crate::units::Volts;

/// Cell terminal that a table axis sweeps.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum LutTerminal {
    Bl,
    Blb,
    Sl,
    Slb,
}

impl LutTerminal {
    const fn mirrored(self) -> Self {
        match self {
            LutTerminal::Bl => LutTerminal::Blb,
            LutTerminal::Blb => LutTerminal::Bl,
            LutTerminal::Sl => LutTerminal::Slb,
            LutTerminal::Slb => LutTerminal::Sl,
        }
    }

    fn set(self, tv: &mut TerminalVoltages, v: f64) {
        match self {
            LutTerminal::Bl => tv.v_bl = Volts(v),
            LutTerminal::Blb => tv.v_blb = Volts(v),
            LutTerminal::Sl => tv.v_sl = Volts(v),
            LutTerminal::Slb => tv.v_slb = Volts(v),
        }
    }
}

/// Uniform, strictly increasing grid axis.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Axis {
    pub start: f64,
    pub step: f64,
    pub len: usize,
}

impl Axis {
    /// Axis from `lo` to at least `hi` with spacing `step`.
    pub fn covering(lo: f64, hi: f64, step: f64) -> Result<Self> {
        if !(step.is_finite() && step > 0.0 && lo.is_finite() && hi.is_finite() && hi > lo) {
            return Err(Error::param("lut.step", "need step > 0 and hi > lo"));
        }
        let len = libm::ceil((hi - lo) / step - 1e-9) as usize + 1;
        Ok(Self {
            start: lo,
            step,
            len,
        })
    }

    pub fn value(&self, i: usize) -> f64 {
        self.start + self.step * i as f64
    }

    pub fn end(&self) -> f64 {
        self.value(self.len - 1)
    }

    fn validate(&self) -> Result<()> {
        if self.len < 2 || !(self.step > 0.0) || !self.start.is_finite() || !self.step.is_finite() {
            return Err(Error::param("lut.axis", "axes need two or more increasing points"));
        }
        Ok(())
    }

    /// Cell index and fractional position, clamped to the hull.
    #[inline]
    fn locate(&self, x: f64) -> (usize, f64) {
        let t = (x - self.start) / self.step;
        if !(t > 0.0) {
            return (0, 0.0);
        }
        let last = (self.len - 2) as f64;
        if t >= last + 1.0 {
            return (self.len - 2, 1.0);
        }
        let i = t as usize;
        let i = i.min(self.len - 2);
        (i, t - i as f64)
    }
}

/// Terminals swept by a table and their axes. The remaining terminals sit at
/// the base bias.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GridSpec {
    pub terminals: Vec<LutTerminal>,
    pub axes: Vec<Axis>,
}

impl GridSpec {
    /// Default read-time grid: bitlines from 0 to `v_max` at `step`, plus
    /// source-line axes up to `v_sink_max` when the sink is resistive.
    pub fn for_kind(kind: BitcellKind, v_max: f64, step: f64, v_sink_max: Option<f64>) -> Result<Self> {
        let ax = Axis::covering(0.0, v_max, step)?;
        let mut terminals = vec![LutTerminal::Bl];
        if kind != BitcellKind::OneT1Mtj {
            terminals.push(LutTerminal::Blb);
        }
        if let Some(hi) = v_sink_max {
            terminals.push(LutTerminal::Sl);
            if matches!(kind, BitcellKind::TwoT2Mtj | BitcellKind::StrideII) {
                terminals.push(LutTerminal::Slb);
            }
            let mut axes = vec![ax; terminals.len()];
            let sa = Axis::covering(0.0, hi, step.max(hi / 16.0))?;
            for (t, a) in terminals.iter().zip(axes.iter_mut()) {
                if matches!(t, LutTerminal::Sl | LutTerminal::Slb) {
                    *a = sa;
                }
            }
            return Ok(Self { terminals, axes });
        }
        let axes = vec![ax; terminals.len()];
        Ok(Self { terminals, axes })
    }

    pub fn validate(&self) -> Result<()> {
        if self.terminals.is_empty() || self.terminals.len() != self.axes.len() {
            return Err(Error::param("lut.grid", "one axis per terminal"));
        }
        for (i, t) in self.terminals.iter().enumerate() {
            if self.terminals[..i].contains(t) {
                return Err(Error::param("lut.grid", "terminal listed twice"));
            }
        }
        self.axes.iter().try_for_each(Axis::validate)
    }

    pub fn point_count(&self) -> usize {
        self.axes.iter().map(|a| a.len).product()
    }

    /// Voltages of the flat, row-major (last axis fastest) grid index.
    pub fn point(&self, mut flat: usize, out: &mut [f64]) {
        for d in (0..self.axes.len()).rev() {
            let a = &self.axes[d];
            out[d] = a.value(flat % a.len);
            flat /= a.len;
        }
    }

    /// Terminal bias of a grid point.
    pub fn bias(&self, base: &TerminalVoltages, flat: usize) -> TerminalVoltages {
        let mut v = [0.0; 4];
        self.point(flat, &mut v[..self.axes.len()]);
        let mut tv = *base;
        for (t, x) in self.terminals.iter().zip(v) {
            t.set(&mut tv, x);
        }
        tv
    }
}

/// Branch currents of one (kind, state, wordline) combination over a grid.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BitcellLut {
    pub kind: BitcellKind,
    pub state: CellState,
    pub base: TerminalVoltages,
    pub grid: GridSpec,
    pub left: Vec<f64>,
    pub right: Vec<f64>,
}

impl BitcellLut {
    pub fn from_tables(
        kind: BitcellKind,
        state: CellState,
        base: TerminalVoltages,
        grid: GridSpec,
        left: Vec<f64>,
        right: Vec<f64>,
    ) -> Result<Self> {
        grid.validate()?;
        state.check(kind)?;
        let n = grid.point_count();
        for (what, t) in [("lut.left", &left), ("lut.right", &right)] {
            if t.len() != n {
                return Err(Error::Shape {
                    what,
                    expected: n,
                    got: t.len(),
                });
            }
            if t.iter().any(|v| !v.is_finite()) {
                return Err(Error::param(what, "table holds non-finite values"));
            }
        }
        Ok(Self {
            kind,
            state,
            base,
            grid,
            left,
            right,
        })
    }

    /// Whether the table was built with the wordline asserted.
    pub fn wl_on(&self) -> bool {
        self.base.v_wl.0 > 0.0
    }

    pub fn dims(&self) -> usize {
        self.grid.axes.len()
    }

    /// Interpolated (left, right) currents at the voltages given in the order
    /// of the grid terminals. Queries outside the hull are clamped to it.
    #[inline]
    pub fn eval(&self, v: &[f64]) -> (f64, f64) {
        match self.grid.axes.len() {
            1 => self.eval1(v[0]),
            2 => self.eval2(v[0], v[1]),
            _ => self.eval_n(v),
        }
    }

    #[inline]
    pub fn eval1(&self, x: f64) -> (f64, f64) {
        let (i, t) = self.grid.axes[0].locate(x);
        let u = 1.0 - t;
        (
            u * self.left[i] + t * self.left[i + 1],
            u * self.right[i] + t * self.right[i + 1],
        )
    }

    #[inline]
    pub fn eval2(&self, x: f64, y: f64) -> (f64, f64) {
        let (i, tx) = self.grid.axes[0].locate(x);
        let (j, ty) = self.grid.axes[1].locate(y);
        let ny = self.grid.axes[1].len;
        let k00 = i * ny + j;
        let k10 = k00 + ny;
        let w00 = (1.0 - tx) * (1.0 - ty);
        let w01 = (1.0 - tx) * ty;
        let w10 = tx * (1.0 - ty);
        let w11 = tx * ty;
        let f = |t: &[f64]| w00 * t[k00] + w01 * t[k00 + 1] + w10 * t[k10] + w11 * t[k10 + 1];
        (f(&self.left), f(&self.right))
    }

    fn eval_n(&self, v: &[f64]) -> (f64, f64) {
        let d = self.grid.axes.len();
        let mut idx = [0usize; 4];
        let mut frac = [0.0f64; 4];
        let mut stride = [0usize; 4];
        let mut s = 1;
        for k in (0..d).rev() {
            let (i, t) = self.grid.axes[k].locate(v[k]);
            idx[k] = i;
            frac[k] = t;
            stride[k] = s;
            s *= self.grid.axes[k].len;
        }
        let base: usize = (0..d).map(|k| idx[k] * stride[k]).sum();
        let (mut l, mut r) = (0.0, 0.0);
        for corner in 0..(1usize << d) {
            let mut w = 1.0;
            let mut off = base;
            for k in 0..d {
                if corner >> k & 1 == 1 {
                    w *= frac[k];
                    off += stride[k];
                } else {
                    w *= 1.0 - frac[k];
                }
            }
            if w != 0.0 {
                l += w * self.left[off];
                r += w * self.right[off];
            }
        }
        (l, r)
    }
}

/// Tabulate a cell by solving every grid point in order.
pub fn build_lut(
    kind: BitcellKind,
    state: CellState,
    base: TerminalVoltages,
    grid: GridSpec,
    params: &DeviceParams,
) -> Result<BitcellLut> {
    params.validate()?;
    grid.validate()?;
    state.check(kind)?;
    if grid.terminals.len() > 4 {
        return Err(Error::param("lut.grid", "at most four axes"));
    }
    let dev = CellDevices::nominal(params);
    let n = grid.point_count();
    let mut left = Vec::with_capacity(n);
    let mut right = Vec::with_capacity(n);
    for flat in 0..n {
        let r = solve_lut_point(kind, state, &base, &grid, &dev, flat)?;
        left.push(r.i_left.0);
        right.push(r.i_right.0);
    }
    BitcellLut::from_tables(kind, state, base, grid, left, right)
}

/// One grid point of a table; errors carry the flat index.
pub fn solve_lut_point(
    kind: BitcellKind,
    state: CellState,
    base: &TerminalVoltages,
    grid: &GridSpec,
    dev: &CellDevices,
    flat: usize,
) -> Result<BranchCurrents> {
    let tv = grid.bias(base, flat);
    solve_cell_dc(kind, state, &tv, dev).map_err(|e| Error::LutPoint {
        index: flat,
        source: alloc::boxed::Box::new(e),
    })
}

/// Tables needed to solve an array of one kind: every stored state with the
/// wordline on and off. Mirror-symmetric kinds may hold only one of the two
/// complementary states and derive the other by swapping axes.
#[derive(Clone, Debug, PartialEq)]
pub struct LutSet {
    pub kind: BitcellKind,
    pub luts: Vec<BitcellLut>,
}

/// A table viewed either directly or through the left/right mirror.
#[derive(Clone, Copy, Debug)]
pub struct LutView<'a> {
    pub lut: &'a BitcellLut,
    pub mirrored: bool,
}

impl LutView<'_> {
    /// (left, right) currents with `v` ordered as (bl, blb, sl, slb) restricted
    /// to the kind's active terminals.
    #[inline]
    pub fn eval(&self, v: &[f64]) -> (f64, f64) {
        if !self.mirrored {
            return self.lut.eval(v);
        }
        match v.len() {
            2 => {
                let (l, r) = self.lut.eval2(v[1], v[0]);
                (r, l)
            }
            _ => {
                let mut w = [0.0; 4];
                for (k, t) in self.lut.grid.terminals.iter().enumerate() {
                    let src = self
                        .lut
                        .grid
                        .terminals
                        .iter()
                        .position(|u| *u == t.mirrored())
                        .unwrap_or(k);
                    w[k] = v[src];
                }
                let (l, r) = self.lut.eval(&w[..v.len()]);
                (r, l)
            }
        }
    }
}

impl fmt::Display for LutSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ({} tables)", self.kind, self.luts.len())
    }
}

impl LutSet {
    pub fn new(kind: BitcellKind, luts: Vec<BitcellLut>) -> Result<Self> {
        if let Some(first) = luts.first() {
            for l in &luts {
                if l.kind != kind {
                    return Err(Error::param("lut.kind", "tables of mixed kinds"));
                }
                if l.grid.terminals != first.grid.terminals {
                    return Err(Error::param("lut.grid", "tables of one set share terminals"));
                }
            }
        }
        Ok(Self { kind, luts })
    }

    /// The states a complete set must cover.
    pub fn required_states(kind: BitcellKind) -> [CellState; 2] {
        match kind {
            BitcellKind::OneT1Mtj => [CellState::Single(MtjState::P), CellState::Single(MtjState::Ap)],
            _ => [CellState::pair(MtjState::P), CellState::pair(MtjState::Ap)],
        }
    }

    /// Active terminals, in evaluation order.
    pub fn terminals(&self) -> &[LutTerminal] {
        self.luts.first().map_or(&[], |l| &l.grid.terminals)
    }

    pub fn get(&self, state: CellState, wl_on: bool) -> Result<LutView<'_>> {
        if let Some(lut) = self.luts.iter().find(|l| l.state == state && l.wl_on() == wl_on) {
            return Ok(LutView {
                lut,
                mirrored: false,
            });
        }
        if self.kind.is_mirror_symmetric() {
            let m = state.mirrored();
            if let Some(lut) = self.luts.iter().find(|l| l.state == m && l.wl_on() == wl_on) {
                return Ok(LutView {
                    lut,
                    mirrored: true,
                });
            }
        }
        Err(Error::MissingLut(format!(
            "{} {} with wordline {}",
            self.kind,
            state,
            if wl_on { "on" } else { "off" }
        )))
    }

    /// Build the minimal complete set with `build` producing each table.
    pub fn build_with<F>(kind: BitcellKind, v_wl: Volts, grid: &GridSpec, mut build: F) -> Result<Self>
    where
        F: FnMut(CellState, TerminalVoltages, GridSpec) -> Result<BitcellLut>,
    {
        let states = Self::required_states(kind);
        let wanted: &[CellState] = if kind.is_mirror_symmetric() {
            &states[1..]
        } else {
            &states
        };
        let mut luts = Vec::new();
        for &s in wanted {
            for wl in [v_wl, Volts(0.0)] {
                let base = TerminalVoltages {
                    v_wl: wl,
                    ..TerminalVoltages::default()
                };
                luts.push(build(s, base, grid.clone())?);
            }
        }
        Self::new(kind, luts)
    }

    /// Sequential build from nominal devices.
    pub fn build(kind: BitcellKind, v_wl: Volts, grid: &GridSpec, params: &DeviceParams) -> Result<Self> {
        Self::build_with(kind, v_wl, grid, |s, base, g| build_lut(kind, s, base, g, params))
    }
}
