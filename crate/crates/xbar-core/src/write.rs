//! Macrospin LLGS switching and the circuit-coupled write cost of each
//! bitcell kind.

use alloc::vec;
use alloc::vec::Vec;

use crate::bitcell::{stamp_cell, CellDevices, CellTerminals, TerminalVoltages};
use crate::circuit::{CircuitBuilder, ElementId, SolveOptions};
use crate::device::{BitcellKind, CellState, DeviceParams, MtjState, ELEMENTARY_CHARGE, HBAR};
use crate::error::{Error, Result};
use crate::units::{Amps, Joules, Seconds, Volts};

/// Constant-coefficient form of the LLGS equation for one free layer with
/// uniaxial perpendicular anisotropy and the polarizer along +z.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Macrospin {
    /// rad s^-1 Oe^-1.
    pub gamma: f64,
    pub alpha: f64,
    /// Oe.
    pub h_k: f64,
    /// Spin-torque field per ampere, Oe/A.
    pub aj_per_amp: f64,
}

pub type Vec3 = [f64; 3];

fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn axpy(a: f64, x: Vec3, y: Vec3) -> Vec3 {
    [a * x[0] + y[0], a * x[1] + y[1], a * x[2] + y[2]]
}

pub fn norm(m: Vec3) -> f64 {
    libm::sqrt(m[0] * m[0] + m[1] * m[1] + m[2] * m[2])
}

impl Macrospin {
    pub fn from_params(p: &DeviceParams) -> Result<Self> {
        p.validate()?;
        let ms_si = p.ms_emu_cm3 * 1e3;
        // hbar eta / (2 e Ms V), tesla per ampere, then oersted
        let aj_t = HBAR * p.stt_efficiency() / (2.0 * ELEMENTARY_CHARGE * ms_si * p.fl_volume_m3());
        Ok(Self {
            gamma: p.gamma_mhz_oe * 1e6,
            alpha: p.alpha,
            h_k: p.anisotropy_field_oe(),
            aj_per_amp: aj_t * 1e4,
        })
    }

    /// dm/dt for a current from the pinned to the free layer.
    pub fn rhs(&self, m: Vec3, current: f64) -> Vec3 {
        let h = [0.0, 0.0, self.h_k * m[2]];
        let p = [0.0, 0.0, 1.0];
        let aj = self.aj_per_amp * current;
        let prec = cross(m, h);
        let stt = cross(m, cross(m, p));
        let t = axpy(-self.gamma, prec, [0.0; 3]);
        let t = axpy(self.gamma * aj, stt, t);
        let mt = cross(m, t);
        let k = 1.0 / (1.0 + self.alpha * self.alpha);
        [k * (t[0] + self.alpha * mt[0]), k * (t[1] + self.alpha * mt[1]), k * (t[2] + self.alpha * mt[2])]
    }

    /// One RK4 step with the current held over the step. Returns the norm
    /// drift before renormalization.
    pub fn step(&self, m: &mut Vec3, current: f64, dt: f64) -> f64 {
        let k1 = self.rhs(*m, current);
        let k2 = self.rhs(axpy(0.5 * dt, k1, *m), current);
        let k3 = self.rhs(axpy(0.5 * dt, k2, *m), current);
        let k4 = self.rhs(axpy(dt, k3, *m), current);
        let mut n = *m;
        for i in 0..3 {
            n[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        let len = norm(n);
        for (a, b) in m.iter_mut().zip(n) {
            *a = b / len;
        }
        libm::fabs(len - 1.0)
    }

    /// Current at which spin torque cancels damping.
    pub fn threshold_current(&self) -> Amps {
        Amps(self.alpha * self.h_k / self.aj_per_amp)
    }
}

/// Anisotropy energy density in units of K_u.
pub fn anisotropy_energy(m: Vec3) -> f64 {
    -m[2] * m[2]
}

/// Pole of a state tilted by `tilt_deg` towards +x.
pub fn initial_magnetization(state: MtjState, tilt_deg: f64) -> Vec3 {
    let t = tilt_deg.to_radians();
    let z = match state {
        MtjState::P => 1.0,
        MtjState::Ap => -1.0,
    };
    [libm::sin(t), 0.0, z * libm::cos(t)]
}

fn reached(m: Vec3, target: MtjState, threshold: f64) -> bool {
    match target {
        MtjState::P => m[2] >= threshold,
        MtjState::Ap => m[2] <= -threshold,
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct LlgsOptions {
    pub dt: Seconds,
    pub horizon: Seconds,
    pub tilt_deg: f64,
    /// Switched once m_z passes this fraction of the opposite pole.
    pub threshold: f64,
    /// Keep every n-th step of the trajectory; 0 keeps none.
    pub record_every: usize,
}

impl Default for LlgsOptions {
    fn default() -> Self {
        Self {
            dt: Seconds(1e-12),
            horizon: Seconds(500e-9),
            tilt_deg: 2.0,
            threshold: 0.9,
            record_every: 0,
        }
    }
}

impl LlgsOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt.0 > 0.0 && self.dt.0 <= 1e-12 * (1.0 + 1e-9)) {
            return Err(Error::param("llgs.dt", "must be positive and at most 1 ps"));
        }
        if !(self.horizon.0 > 0.0 && self.horizon.0.is_finite()) {
            return Err(Error::param("llgs.horizon", "must be finite and positive"));
        }
        if !(0.0..90.0).contains(&self.tilt_deg) {
            return Err(Error::param("llgs.tilt_deg", "must lie in [0, 90)"));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::param("llgs.threshold", "must lie in (0, 1)"));
        }
        Ok(())
    }

    fn steps(&self) -> usize {
        libm::ceil(self.horizon.0 / self.dt.0 - 1e-9) as usize
    }
}

/// Sampled magnetization.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MagnetizationState {
    pub m: Vec3,
    pub t_ns: f64,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct WriteResult {
    pub switched: bool,
    pub latency: Option<Seconds>,
    pub final_m: Vec3,
    pub trajectory: Vec<MagnetizationState>,
    /// Only set when a circuit supplies the current.
    pub energy: Option<Joules>,
    /// Largest norm drift seen before renormalization.
    pub max_drift: f64,
}

/// Fixed-step RK4 integration at constant current.
pub fn llgs_simulate(params: &DeviceParams, current: Amps, initial: MtjState, opts: &LlgsOptions) -> Result<WriteResult> {
    opts.validate()?;
    let mag = Macrospin::from_params(params)?;
    let target = initial.complement();
    let mut m = initial_magnetization(initial, opts.tilt_deg);
    let mut trajectory = Vec::new();
    let mut max_drift: f64 = 0.0;
    let dt = opts.dt.0;
    if opts.record_every > 0 {
        trajectory.push(MagnetizationState { m, t_ns: 0.0 });
    }
    for step in 1..=opts.steps() {
        max_drift = max_drift.max(mag.step(&mut m, current.0, dt));
        if !m.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { step });
        }
        let t = step as f64 * dt;
        if opts.record_every > 0 && step % opts.record_every == 0 {
            trajectory.push(MagnetizationState { m, t_ns: t * 1e9 });
        }
        if reached(m, target, opts.threshold) {
            return Ok(WriteResult {
                switched: true,
                latency: Some(Seconds(t)),
                final_m: m,
                trajectory,
                energy: None,
                max_drift,
            });
        }
    }
    Ok(WriteResult {
        switched: false,
        latency: None,
        final_m: m,
        trajectory,
        energy: None,
        max_drift,
    })
}

/// Macrospin critical current 4 e alpha K_u V / (hbar eta).
pub fn critical_current(params: &DeviceParams) -> Amps {
    let ku_si = params.ku_erg_cm3 * 0.1;
    Amps(4.0 * ELEMENTARY_CHARGE * params.alpha * ku_si * params.fl_volume_m3() / (HBAR * params.stt_efficiency()))
}

/// Spin polarization giving a critical current of `i_cr`.
pub fn back_solve_polarization(params: &DeviceParams, i_cr: Amps) -> Result<f64> {
    if !(i_cr.0 > 0.0 && i_cr.0.is_finite()) {
        return Err(Error::param("i_cr", "must be finite and positive"));
    }
    let ku_si = params.ku_erg_cm3 * 0.1;
    let eta = 4.0 * ELEMENTARY_CHARGE * params.alpha * ku_si * params.fl_volume_m3() / (HBAR * i_cr.0);
    // eta = P / (2 (1 + P^2)) has a root in (0, 1) only for eta < 1/4
    if !(eta > 0.0 && eta < 0.25) {
        return Err(Error::param("i_cr", "no polarization in (0, 1) reaches this current"));
    }
    Ok((1.0 - libm::sqrt(1.0 - 16.0 * eta * eta)) / (4.0 * eta))
}

/// Smallest current that switches within the horizon, by bisection on the
/// dynamics.
pub fn dynamic_critical_current(
    params: &DeviceParams,
    initial: MtjState,
    opts: &LlgsOptions,
    iterations: usize,
) -> Result<Amps> {
    let sign = match initial {
        MtjState::P => 1.0,
        MtjState::Ap => -1.0,
    };
    let ic = critical_current(params).0;
    let (mut lo, mut hi) = (0.5 * ic, 2.0 * ic);
    let switches = |i: f64| llgs_simulate(params, Amps(sign * i), initial, opts).map(|r| r.switched);
    if switches(lo)? || !switches(hi)? {
        return Err(Error::NonConvergence {
            solver: "critical current bisection",
            iterations: 0,
            residual: ic,
            trace: vec![lo, hi],
        });
    }
    for _ in 0..iterations {
        let mid = 0.5 * (lo + hi);
        if switches(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(Amps(hi))
}

/// Bias applied during a write and how long it is held.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct WriteSetup {
    pub v_write: Volts,
    /// Gate drive of the write-enabled access devices.
    pub v_gate: Volts,
    /// Bias at which the junction TMR halves.
    pub tmr_v_half: Volts,
    /// Line voltages of the two STRIDe-II cycles.
    pub stride2_cycle_voltages: [Volts; 2],
    pub llgs: LlgsOptions,
}

impl Default for WriteSetup {
    fn default() -> Self {
        Self {
            v_write: Volts(1.45),
            v_gate: Volts(1.8),
            tmr_v_half: Volts(0.2),
            stride2_cycle_voltages: [Volts(1.55), Volts(1.2)],
            llgs: LlgsOptions::default(),
        }
    }
}

impl WriteSetup {
    pub fn validate(&self, v_dd: Volts) -> Result<()> {
        self.llgs.validate()?;
        let vmax = 2.0 * v_dd.0;
        for (name, v) in [
            ("write.v_write", self.v_write.0),
            ("write.v_gate", self.v_gate.0),
            ("write.stride2_cycle_voltages", self.stride2_cycle_voltages[0].0),
            ("write.stride2_cycle_voltages", self.stride2_cycle_voltages[1].0),
        ] {
            if !(v > 0.0 && v <= vmax) {
                return Err(Error::param(name, "must lie in (0, 2 v_dd]"));
            }
        }
        if !(self.tmr_v_half.0 > 0.0 && self.tmr_v_half.0.is_finite()) {
            return Err(Error::param("write.tmr_v_half", "must be finite and positive"));
        }
        Ok(())
    }
}

/// One write cycle: starting state, bias and the junctions that must flip.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WriteCycle {
    pub from: CellState,
    pub to: CellState,
    pub bias: TerminalVoltages,
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CycleCost {
    pub latency: Seconds,
    pub energy: Joules,
    /// Largest junction current magnitude seen during the cycle.
    pub peak_current: Amps,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct WriteCost {
    pub kind: BitcellKind,
    pub cycles: Vec<CycleCost>,
    pub latency: Seconds,
    pub energy: Joules,
    pub latency_ratio: f64,
    pub energy_ratio: f64,
}

fn bias(bl: f64, blb: f64, sl: f64, slb: f64, wl: f64, wwl: f64) -> TerminalVoltages {
    TerminalVoltages {
        v_bl: Volts(bl),
        v_blb: Volts(blb),
        v_sl: Volts(sl),
        v_slb: Volts(slb),
        v_wl: Volts(wl),
        v_wwl: Volts(wwl),
    }
}

/// Write schedule of a kind. The 1T-1MTJ reference flips AP to P with the
/// access device source-degenerated; two-MTJ kinds write (AP, P) to (P, AP).
pub fn write_schedule(kind: BitcellKind, setup: &WriteSetup) -> Vec<WriteCycle> {
    let w = setup.v_write.0;
    let g = setup.v_gate.0;
    let ap_p = CellState::pair(MtjState::Ap);
    let p_ap = CellState::pair(MtjState::P);
    match kind {
        BitcellKind::OneT1Mtj => vec![WriteCycle {
            from: CellState::Single(MtjState::Ap),
            to: CellState::Single(MtjState::P),
            bias: bias(0.0, 0.0, w, 0.0, g, 0.0),
        }],
        BitcellKind::TwoT2Mtj => vec![
            WriteCycle {
                from: ap_p,
                to: CellState::Pair {
                    left: MtjState::P,
                    right: MtjState::P,
                },
                bias: bias(0.0, 0.0, w, 0.0, g, 0.0),
            },
            WriteCycle {
                from: CellState::Pair {
                    left: MtjState::P,
                    right: MtjState::P,
                },
                to: p_ap,
                bias: bias(0.0, w, 0.0, 0.0, g, 0.0),
            },
        ],
        // series path BLB -> MTJ_R -> M4 -> MTJ_L -> BL
        BitcellKind::StrideI => vec![WriteCycle {
            from: ap_p,
            to: p_ap,
            bias: bias(0.0, w, 0.0, 0.0, 0.0, g),
        }],
        BitcellKind::StrideII => {
            let [v1, v2] = setup.stride2_cycle_voltages;
            let (v1, v2) = (v1.0, v2.0);
            vec![
                WriteCycle {
                    from: ap_p,
                    to: CellState::Pair {
                        left: MtjState::P,
                        right: MtjState::P,
                    },
                    bias: bias(0.0, v1, v1, v1, v1.max(g), 0.0),
                },
                WriteCycle {
                    from: CellState::Pair {
                        left: MtjState::P,
                        right: MtjState::P,
                    },
                    to: p_ap,
                    bias: bias(v2, v2, v2, 0.0, v2.max(g), 0.0),
                },
            ]
        }
    }
}

fn mtj_states(s: CellState) -> [Option<MtjState>; 2] {
    match s {
        CellState::Single(m) => [Some(m), None],
        CellState::Pair { left, right } => [Some(left), Some(right)],
    }
}

/// Quasi-static circuit plus LLGS for every junction until all targets flip.
pub fn simulate_write_cycle(
    kind: BitcellKind,
    cycle: &WriteCycle,
    dev: &CellDevices,
    params: &DeviceParams,
    opts: &LlgsOptions,
) -> Result<CycleCost> {
    opts.validate()?;
    let mag = Macrospin::from_params(params)?;
    let mut b = CircuitBuilder::new();
    let tv = &cycle.bias;
    let t = CellTerminals {
        bl: b.source(tv.v_bl.0),
        blb: b.source(tv.v_blb.0),
        sl: b.source(tv.v_sl.0),
        slb: b.source(tv.v_slb.0),
        wl: b.source(tv.v_wl.0),
        wwl: b.source(tv.v_wwl.0),
    };
    let h = stamp_cell(&mut b, kind, cycle.from, dev, &t)?;
    let mut circuit = b.build()?;
    let ids: [Option<ElementId>; 2] = [Some(h.mtj_left), h.mtj_right];
    let from = mtj_states(cycle.from);
    let to = mtj_states(cycle.to);
    let mut m: [Vec3; 2] = [[0.0, 0.0, 1.0]; 2];
    for k in 0..2 {
        if let Some(s) = from[k] {
            m[k] = initial_magnetization(s, opts.tilt_deg);
        }
    }
    let sopts = SolveOptions::default();
    let dt = opts.dt.0;
    let mut x = circuit.solve(&sopts)?;
    let mut power = circuit.dissipation(&x);
    let mut energy = 0.0;
    let mut peak: f64 = 0.0;
    for step in 1..=opts.steps() {
        let mut currents = [0.0; 2];
        for k in 0..2 {
            if let Some(id) = ids[k] {
                currents[k] = circuit.current(&x, id);
                peak = peak.max(libm::fabs(currents[k]));
            }
        }
        for k in 0..2 {
            if ids[k].is_some() {
                mag.step(&mut m[k], currents[k], dt);
                if !m[k].iter().all(|v| v.is_finite()) {
                    return Err(Error::NonFinite { step });
                }
                circuit.set_mtj_cos(ids[k].expect("checked"), m[k][2]);
            }
        }
        x = circuit.solve_from(x, &sopts)?;
        let p = circuit.dissipation(&x);
        energy += 0.5 * (power + p) * dt;
        power = p;
        let done = (0..2).all(|k| match (from[k], to[k]) {
            (Some(a), Some(b)) if a != b => reached(m[k], b, opts.threshold),
            _ => true,
        });
        if done {
            return Ok(CycleCost {
                latency: Seconds(step as f64 * dt),
                energy: Joules(energy),
                peak_current: Amps(peak),
            });
        }
    }
    Err(Error::NonConvergence {
        solver: "write cycle",
        iterations: opts.steps(),
        residual: m[0][2],
        trace: vec![m[0][2], m[1][2], peak],
    })
}

fn write_devices(params: &DeviceParams, setup: &WriteSetup) -> CellDevices {
    let mut dev = CellDevices::nominal(params);
    dev.tmr_v_half = Some(setup.tmr_v_half.0);
    dev
}

/// Latency and energy of one kind without the reference comparison.
pub fn write_cost_absolute(kind: BitcellKind, setup: &WriteSetup, params: &DeviceParams) -> Result<Vec<CycleCost>> {
    params.validate()?;
    setup.validate(params.v_dd)?;
    let dev = write_devices(params, setup);
    write_schedule(kind, setup)
        .iter()
        .enumerate()
        .map(|(k, c)| {
            simulate_write_cycle(kind, c, &dev, params, &setup.llgs).map_err(|e| Error::Cycle {
                cycle: k,
                source: alloc::boxed::Box::new(e),
            })
        })
        .collect()
}

fn totals(c: &[CycleCost]) -> (f64, f64) {
    (c.iter().map(|x| x.latency.0).sum(), c.iter().map(|x| x.energy.0).sum())
}

/// Write latency and energy of a kind relative to the 1T-1MTJ write.
pub fn write_cycle_cost(kind: BitcellKind, setup: &WriteSetup, params: &DeviceParams) -> Result<WriteCost> {
    let reference = write_cost_absolute(BitcellKind::OneT1Mtj, setup, params)?;
    let cycles = if kind == BitcellKind::OneT1Mtj {
        reference.clone()
    } else {
        write_cost_absolute(kind, setup, params)?
    };
    let (rl, re) = totals(&reference);
    let (l, e) = totals(&cycles);
    Ok(WriteCost {
        kind,
        cycles,
        latency: Seconds(l),
        energy: Joules(e),
        latency_ratio: l / rl,
        energy_ratio: e / re,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn fast() -> LlgsOptions {
        LlgsOptions {
            horizon: Seconds(50e-9),
            ..LlgsOptions::default()
        }
    }

    /// Switching time from the polar-angle equation
    /// dtheta/dt = alpha gamma H_k sin(theta) (k - cos(theta)) / (1 + alpha^2).
    fn polar_oracle(mag: &Macrospin, k: f64, tilt_deg: f64, threshold: f64) -> f64 {
        let (a, b) = (tilt_deg.to_radians(), libm::acos(-threshold));
        let n = 200_000;
        let h = (b - a) / n as f64;
        let f = |t: f64| 1.0 / (libm::sin(t) * (k - libm::cos(t)));
        let mut s = f(a) + f(b);
        for i in 1..n {
            s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        let rate = mag.alpha * mag.gamma * mag.h_k / (1.0 + mag.alpha * mag.alpha);
        s * h / 3.0 / rate
    }

    #[test]
    fn critical_current_calibration() {
        let p = DeviceParams::default();
        let ic = critical_current(&p).0;
        assert!((ic / 75.96e-6 - 1.0).abs() < 0.1, "{ic}");
        let pol = back_solve_polarization(&p, Amps(75.96e-6)).unwrap();
        let q = DeviceParams {
            spin_polarization: pol,
            ..p.clone()
        };
        assert!((critical_current(&q).0 / 75.96e-6 - 1.0).abs() < 1e-9);
        let mag = Macrospin::from_params(&p).unwrap();
        assert!((mag.threshold_current().0 / ic - 1.0).abs() < 1e-9);
        let a2 = DeviceParams { alpha: 2.0 * p.alpha, ..p.clone() };
        assert!((critical_current(&a2).0 / (2.0 * ic) - 1.0).abs() < 1e-12);
        // barrier from the geometry
        assert!((p.anisotropy_barrier_kt() / p.energy_barrier_kt - 1.0).abs() < 0.15);
    }

    #[test]
    fn zero_current_relaxes() {
        let p = DeviceParams::default();
        let opts = LlgsOptions {
            tilt_deg: 30.0,
            record_every: 10,
            ..fast()
        };
        let r = llgs_simulate(&p, Amps(0.0), MtjState::P, &opts).unwrap();
        assert!(!r.switched);
        assert!(r.final_m[2] > 0.99);
        let e: Vec<f64> = r.trajectory.iter().map(|s| anisotropy_energy(s.m)).collect();
        assert!(e.windows(2).all(|w| w[1] <= w[0] + 1e-12));
        assert!(r.max_drift < 1e-6);
    }

    #[test]
    fn subcritical_holds() {
        let p = DeviceParams::default();
        let ic = critical_current(&p);
        let r = llgs_simulate(&p, ic * 0.5, MtjState::P, &fast()).unwrap();
        assert!(!r.switched);
    }

    #[test]
    fn direction_follows_sign() {
        let p = DeviceParams::default();
        let ic = critical_current(&p);
        let a = llgs_simulate(&p, ic * 2.0, MtjState::P, &fast()).unwrap();
        assert!(a.switched && a.latency.unwrap().0 < 50e-9);
        assert!(a.final_m[2] <= -0.9);
        // the same sign keeps an AP layer where it is
        let b = llgs_simulate(&p, ic * 2.0, MtjState::Ap, &fast()).unwrap();
        assert!(!b.switched && b.final_m[2] < -0.99);
        let c = llgs_simulate(&p, ic * -2.0, MtjState::Ap, &fast()).unwrap();
        assert!(c.switched && c.final_m[2] >= 0.9);
    }

    #[test]
    fn latency_matches_polar_equation() {
        let p = DeviceParams::default();
        let mag = Macrospin::from_params(&p).unwrap();
        let ic = critical_current(&p);
        for k in [1.05, 1.5, 2.0] {
            let r = llgs_simulate(&p, ic * k, MtjState::P, &LlgsOptions::default()).unwrap();
            let want = polar_oracle(&mag, k, 2.0, 0.9);
            let got = r.latency.unwrap().0;
            assert!((got / want - 1.0).abs() < 0.01, "k {k}: {got} vs {want}");
        }
        let r = llgs_simulate(&p, ic * 0.95, MtjState::P, &LlgsOptions::default()).unwrap();
        assert!(!r.switched);
    }

    #[test]
    fn bisection_agrees_with_formula() {
        let p = DeviceParams::default();
        let opts = LlgsOptions {
            dt: Seconds(1e-12),
            horizon: Seconds(300e-9),
            ..LlgsOptions::default()
        };
        let d = dynamic_critical_current(&p, MtjState::P, &opts, 8).unwrap();
        let f = critical_current(&p);
        assert!((d.0 / f.0 - 1.0).abs() < 0.1, "{} vs {}", d.0, f.0);
    }

    #[test]
    fn reference_ratio_is_one() {
        let p = DeviceParams::default();
        let w = write_cycle_cost(BitcellKind::OneT1Mtj, &WriteSetup::default(), &p).unwrap();
        assert_eq!(w.latency_ratio, 1.0);
        assert_eq!(w.energy_ratio, 1.0);
    }

    #[test]
    fn stride_write_ratios() {
        let p = DeviceParams::default();
        let s = WriteSetup::default();
        let one = write_cycle_cost(BitcellKind::StrideI, &s, &p).unwrap();
        assert_eq!(one.cycles.len(), 1);
        assert!((1.152..=1.728).contains(&one.latency_ratio), "{}", one.latency_ratio);
        assert!((1.112..=1.668).contains(&one.energy_ratio), "{}", one.energy_ratio);
        let two = write_cycle_cost(BitcellKind::StrideII, &s, &p).unwrap();
        assert_eq!(two.cycles.len(), 2);
        assert!(two.latency_ratio > one.latency_ratio);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn norm_preserved(x in -1.0f64..1.0, y in -1.0f64..1.0, z in -1.0f64..1.0, k in -3.0f64..3.0) {
            let n = libm::sqrt(x * x + y * y + z * z);
            prop_assume!(n > 0.1);
            let p = DeviceParams::default();
            let mag = Macrospin::from_params(&p).unwrap();
            let mut m = [x / n, y / n, z / n];
            let ic = critical_current(&p).0;
            for _ in 0..100 {
                let d = mag.step(&mut m, k * ic, 1e-12);
                prop_assert!(d < 1e-6);
                prop_assert!((norm(m) - 1.0).abs() < 1e-9);
            }
        }
    }
}
