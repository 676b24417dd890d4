//! Bitcell netlists and their DC operating points.

use alloc::vec::Vec;

use crate::circuit::{CircuitBuilder, ElementId, MtjElement, NodeId, SolveOptions};
use crate::device::{BitcellKind, CellState, DeviceParams, Fet, MtjState};
use crate::error::{Error, Result};
use crate::units::{Amps, Volts};

/// Voltages applied to the cell terminals. Terminals a kind lacks are ignored.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TerminalVoltages {
    pub v_bl: Volts,
    pub v_blb: Volts,
    pub v_sl: Volts,
    pub v_slb: Volts,
    pub v_wl: Volts,
    pub v_wwl: Volts,
}

impl TerminalVoltages {
    /// Read bias: both bitlines at `v_read`, sources grounded, WWL low.
    pub fn read(v_read: Volts, v_wl: Volts) -> Self {
        Self {
            v_bl: v_read,
            v_blb: v_read,
            v_wl,
            ..Self::default()
        }
    }

    pub fn validate(&self, v_dd: Volts) -> Result<()> {
        let hi = 2.0 * v_dd.0;
        let all = [
            ("v_bl", self.v_bl),
            ("v_blb", self.v_blb),
            ("v_sl", self.v_sl),
            ("v_slb", self.v_slb),
            ("v_wl", self.v_wl),
            ("v_wwl", self.v_wwl),
        ];
        for (name, v) in all {
            if !(v.0.is_finite() && (0.0..=hi).contains(&v.0)) {
                return Err(Error::param(
                    name,
                    alloc::format!("{} outside [0, 2*V_DD]", v),
                ));
            }
        }
        Ok(())
    }
}

/// Currents drawn from the bitlines into each MTJ branch, plus the internal
/// nodes behind the MTJs.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BranchCurrents {
    pub i_left: Amps,
    pub i_right: Amps,
    pub v_n1: Volts,
    pub v_n2: Volts,
}

/// Per-instance devices of one cell, so that mismatch can be applied device by
/// device. Transistors are indexed M1..M4 (1T-1MTJ uses M1 only, 2T-2MTJ uses
/// M1 and M2 as the two access devices).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CellDevices {
    pub r_p: [f64; 2],
    pub tmr: f64,
    pub fets: [Fet; 4],
    /// Bias at which the TMR halves; `None` keeps it constant.
    pub tmr_v_half: Option<f64>,
}

impl CellDevices {
    pub fn nominal(params: &DeviceParams) -> Self {
        let f = Fet::from_params(params);
        Self {
            r_p: [params.r_p.0; 2],
            tmr: params.tmr,
            fets: [f; 4],
            tmr_v_half: None,
        }
    }

    fn mtj(&self, side: usize, state: MtjState) -> MtjElement {
        MtjElement {
            r_p: self.r_p[side],
            tmr: self.tmr,
            cos_theta: match state {
                MtjState::P => 1.0,
                MtjState::Ap => -1.0,
            },
            v_half: self.tmr_v_half,
        }
    }
}

/// Nodes a cell attaches to.
#[derive(Clone, Copy, Debug)]
pub struct CellTerminals {
    pub bl: NodeId,
    pub blb: NodeId,
    pub sl: NodeId,
    pub slb: NodeId,
    pub wl: NodeId,
    pub wwl: NodeId,
}

/// Handles to the stamped cell.
#[derive(Clone, Copy, Debug)]
pub struct CellHandles {
    pub mtj_left: ElementId,
    pub mtj_right: Option<ElementId>,
    pub n1: NodeId,
    pub n2: Option<NodeId>,
}

/// Add one bitcell to a netlist under construction.
pub fn stamp_cell(
    b: &mut CircuitBuilder,
    kind: BitcellKind,
    state: CellState,
    dev: &CellDevices,
    t: &CellTerminals,
) -> Result<CellHandles> {
    state.check_shape(kind)?;
    let left = state.left();
    let [m1, m2, m3, m4] = dev.fets;
    Ok(match kind {
        BitcellKind::OneT1Mtj => {
            let n1 = b.node();
            let mtj_left = b.mtj(t.bl, n1, dev.mtj(0, left));
            b.fet(n1, t.wl, t.sl, m1);
            CellHandles {
                mtj_left,
                mtj_right: None,
                n1,
                n2: None,
            }
        }
        BitcellKind::TwoT2Mtj => {
            let right = state.right().unwrap_or(left.complement());
            let n1 = b.node();
            let n2 = b.node();
            let mtj_left = b.mtj(t.bl, n1, dev.mtj(0, left));
            let mtj_right = b.mtj(t.blb, n2, dev.mtj(1, right));
            b.fet(n1, t.wl, t.sl, m1);
            b.fet(n2, t.wl, t.slb, m2);
            CellHandles {
                mtj_left,
                mtj_right: Some(mtj_right),
                n1,
                n2: Some(n2),
            }
        }
        BitcellKind::StrideI => {
            let right = state.right().unwrap_or(left.complement());
            let n1 = b.node();
            let n2 = b.node();
            let s = b.node();
            let mtj_left = b.mtj(t.bl, n1, dev.mtj(0, left));
            let mtj_right = b.mtj(t.blb, n2, dev.mtj(1, right));
            b.fet(n1, n2, s, m1);
            b.fet(n2, n1, s, m2);
            b.fet(s, t.wl, t.sl, m3);
            b.fet(n1, t.wwl, n2, m4);
            CellHandles {
                mtj_left,
                mtj_right: Some(mtj_right),
                n1,
                n2: Some(n2),
            }
        }
        BitcellKind::StrideII => {
            let right = state.right().unwrap_or(left.complement());
            let n1 = b.node();
            let n2 = b.node();
            let a = b.node();
            let c = b.node();
            let mtj_left = b.mtj(t.bl, n1, dev.mtj(0, left));
            let mtj_right = b.mtj(t.blb, n2, dev.mtj(1, right));
            b.fet(n1, n2, a, m1);
            b.fet(a, t.wl, t.sl, m3);
            b.fet(n2, n1, c, m2);
            b.fet(c, t.wl, t.slb, m4);
            CellHandles {
                mtj_left,
                mtj_right: Some(mtj_right),
                n1,
                n2: Some(n2),
            }
        }
    })
}

/// DC operating point of one bitcell with explicit per-device parameters.
pub fn solve_cell_dc(
    kind: BitcellKind,
    state: CellState,
    tv: &TerminalVoltages,
    dev: &CellDevices,
) -> Result<BranchCurrents> {
    let mut b = CircuitBuilder::new();
    let t = CellTerminals {
        bl: b.source(tv.v_bl.0),
        blb: b.source(tv.v_blb.0),
        sl: b.source(tv.v_sl.0),
        slb: b.source(tv.v_slb.0),
        wl: b.source(tv.v_wl.0),
        wwl: b.source(tv.v_wwl.0),
    };
    let h = stamp_cell(&mut b, kind, state, dev, &t)?;
    let circuit = b.build()?;
    let x = circuit.solve(&SolveOptions::default())?;
    Ok(BranchCurrents {
        i_left: Amps(circuit.current(&x, h.mtj_left)),
        i_right: Amps(h.mtj_right.map_or(0.0, |m| circuit.current(&x, m))),
        v_n1: Volts(circuit.voltage(&x, h.n1)),
        v_n2: Volts(h.n2.map_or(0.0, |n| circuit.voltage(&x, n))),
    })
}

/// DC operating point of one bitcell built from nominal devices.
pub fn solve_bitcell_dc(
    kind: BitcellKind,
    state: CellState,
    tv: &TerminalVoltages,
    params: &DeviceParams,
) -> Result<BranchCurrents> {
    params.validate()?;
    tv.validate(params.v_dd)?;
    solve_cell_dc(kind, state, tv, &CellDevices::nominal(params))
}

/// High and low sensed read currents of a kind at one read voltage.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ReadPoint {
    pub v_read: Volts,
    pub i_high: Amps,
    pub i_low: Amps,
    pub ratio: f64,
    /// Branch currents with the cell holding AP-P (or P for 1T-1MTJ).
    pub first: BranchCurrents,
    /// Branch currents with the complementary state.
    pub second: BranchCurrents,
}

/// Read currents at one voltage. For two-MTJ kinds the high and low currents
/// are the larger and smaller branch of the AP-P cell; for 1T-1MTJ they are
/// the P and AP cell currents.
pub fn read_point(kind: BitcellKind, v_read: Volts, params: &DeviceParams) -> Result<ReadPoint> {
    let tv = TerminalVoltages::read(v_read, params.v_dd);
    let (first, second) = match kind {
        BitcellKind::OneT1Mtj => (
            solve_bitcell_dc(kind, CellState::Single(MtjState::P), &tv, params)?,
            solve_bitcell_dc(kind, CellState::Single(MtjState::Ap), &tv, params)?,
        ),
        _ => (
            solve_bitcell_dc(kind, CellState::pair(MtjState::Ap), &tv, params)?,
            solve_bitcell_dc(kind, CellState::pair(MtjState::P), &tv, params)?,
        ),
    };
    let (hi, lo) = match kind {
        BitcellKind::OneT1Mtj => (first.i_left.0, second.i_left.0),
        _ => {
            let a = libm::fabs(first.i_left.0);
            let b = libm::fabs(first.i_right.0);
            (a.max(b), a.min(b))
        }
    };
    Ok(ReadPoint {
        v_read,
        i_high: Amps(hi),
        i_low: Amps(lo),
        ratio: hi / lo,
        first,
        second,
    })
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct VreadSweep {
    pub kind: BitcellKind,
    pub points: Vec<ReadPoint>,
    /// Index of the largest ratio.
    pub peak: usize,
}

impl VreadSweep {
    pub fn peak_point(&self) -> &ReadPoint {
        &self.points[self.peak]
    }

    /// Whether the ratio maximum lies strictly inside the swept range.
    pub fn has_interior_peak(&self) -> bool {
        self.peak > 0 && self.peak + 1 < self.points.len()
    }
}

/// Sweep V_READ over `steps` evenly spaced points of [lo, hi].
pub fn sweep_vread(
    kind: BitcellKind,
    params: &DeviceParams,
    lo: Volts,
    hi: Volts,
    steps: usize,
) -> Result<VreadSweep> {
    if steps < 2 {
        return Err(Error::param("steps", "need at least two sweep points"));
    }
    if !(lo.0 > 0.0 && lo.0 < hi.0 && hi.0 <= params.v_dd.0) {
        return Err(Error::param("v_range", "must satisfy 0 < lo < hi <= V_DD"));
    }
    let mut points = Vec::with_capacity(steps);
    for k in 0..steps {
        let v = lo.0 + (hi.0 - lo.0) * k as f64 / (steps - 1) as f64;
        points.push(read_point(kind, Volts(v), params)?);
    }
    let peak = points
        .iter()
        .enumerate()
        .fold(0, |best, (i, p)| if p.ratio > points[best].ratio { i } else { best });
    Ok(VreadSweep { kind, points, peak })
}

/// Read voltage at which the high current equals `target`, by bisection on
/// [lo, hi]. The high current must be increasing over the bracket.
pub fn calibrate_vread(
    kind: BitcellKind,
    params: &DeviceParams,
    target: Amps,
    lo: Volts,
    hi: Volts,
) -> Result<Volts> {
    let f = |v: f64| -> Result<f64> { Ok(read_point(kind, Volts(v), params)?.i_high.0 - target.0) };
    let (mut a, mut b) = (lo.0, hi.0);
    let (fa, fb) = (f(a)?, f(b)?);
    if fa.signum() == fb.signum() {
        return Err(Error::param("target", "read current not bracketed by the voltage range"));
    }
    for _ in 0..60 {
        let m = 0.5 * (a + b);
        let fm = f(m)?;
        if fm.signum() == fa.signum() {
            a = m;
        } else {
            b = m;
        }
        if b - a < 1e-9 {
            break;
        }
    }
    Ok(Volts(0.5 * (a + b)))
}
