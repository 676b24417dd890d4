//! MTJ and transistor compact models.

use core::fmt;
use core::str::FromStr;

use crate::error::{Error, Result};
use crate::units::{Amps, Ohms, Volts};

pub const BOLTZMANN: f64 = 1.380_649e-23;
pub const ELEMENTARY_CHARGE: f64 = 1.602_176_634e-19;
pub const HBAR: f64 = 1.054_571_817e-34;

/// Relative magnetization of free and pinned layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum MtjState {
    P,
    #[cfg_attr(feature = "serde", serde(rename = "AP"))]
    Ap,
}

impl MtjState {
    pub const fn complement(self) -> Self {
        match self {
            MtjState::P => MtjState::Ap,
            MtjState::Ap => MtjState::P,
        }
    }
}

impl fmt::Display for MtjState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MtjState::P => "P",
            MtjState::Ap => "AP",
        })
    }
}

/// Physical and electrical parameters of the MTJ stack and the access devices.
///
/// Magnetic quantities keep their customary CGS units.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct DeviceParams {
    pub fl_width_nm: f64,
    pub fl_length_nm: f64,
    pub fl_thickness_nm: f64,
    pub tox_nm: f64,
    pub ms_emu_cm3: f64,
    pub ku_erg_cm3: f64,
    pub energy_barrier_kt: f64,
    pub alpha: f64,
    /// Gyromagnetic ratio in 10^6 rad s^-1 Oe^-1.
    pub gamma_mhz_oe: f64,
    /// Spin polarization entering the spin-transfer efficiency P/(2(1+P^2)).
    pub spin_polarization: f64,
    pub r_p: Ohms,
    /// (R_AP - R_P) / R_P as a fraction.
    pub tmr: f64,
    pub vth: Volts,
    /// Transconductance factor in A/V^2.
    pub beta: f64,
    pub swing_mv_dec: f64,
    /// Drain-induced threshold lowering, V/V.
    pub dibl: f64,
    pub leakage_floor: Amps,
    pub v_dd: Volts,
    pub temperature_k: f64,
}

impl Default for DeviceParams {
    fn default() -> Self {
        Self {
            fl_width_nm: 60.0,
            fl_length_nm: 60.0,
            fl_thickness_nm: 1.0,
            tox_nm: 1.3,
            ms_emu_cm3: 865.0,
            ku_erg_cm3: 9.66e5,
            energy_barrier_kt: 64.0,
            alpha: 0.008,
            gamma_mhz_oe: 17.6,
            spin_polarization: 0.4077,
            r_p: Ohms(5790.0),
            tmr: 4.0,
            vth: Volts(0.437),
            beta: 3.65e-3,
            swing_mv_dec: 85.78,
            dibl: 0.18,
            leakage_floor: Amps(1e-12),
            v_dd: Volts(1.2),
            temperature_k: 298.15,
        }
    }
}

impl DeviceParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("fl_width_nm", self.fl_width_nm),
            ("fl_length_nm", self.fl_length_nm),
            ("fl_thickness_nm", self.fl_thickness_nm),
            ("tox_nm", self.tox_nm),
            ("ms_emu_cm3", self.ms_emu_cm3),
            ("ku_erg_cm3", self.ku_erg_cm3),
            ("energy_barrier_kt", self.energy_barrier_kt),
            ("alpha", self.alpha),
            ("gamma_mhz_oe", self.gamma_mhz_oe),
            ("spin_polarization", self.spin_polarization),
            ("r_p", self.r_p.0),
            ("tmr", self.tmr),
            ("vth", self.vth.0),
            ("beta", self.beta),
            ("swing_mv_dec", self.swing_mv_dec),
            ("leakage_floor", self.leakage_floor.0),
            ("v_dd", self.v_dd.0),
            ("temperature_k", self.temperature_k),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::param(name, "must be finite and strictly positive"));
            }
        }
        if !(self.dibl.is_finite() && self.dibl >= 0.0) {
            return Err(Error::param("dibl", "must be finite and non-negative"));
        }
        if self.spin_polarization >= 1.0 {
            return Err(Error::param("spin_polarization", "must be below 1"));
        }
        if self.vth.0 >= self.v_dd.0 {
            return Err(Error::param("vth", "must be below v_dd"));
        }
        if self.slope_factor() < 1.0 {
            return Err(Error::param(
                "swing_mv_dec",
                "implies a slope factor below 1 (faster than the thermal limit)",
            ));
        }
        Ok(())
    }

    /// k_B T / q.
    pub fn thermal_voltage(&self) -> f64 {
        BOLTZMANN * self.temperature_k / ELEMENTARY_CHARGE
    }

    /// Subthreshold slope factor n from the swing S = n V_T ln 10.
    pub fn slope_factor(&self) -> f64 {
        self.swing_mv_dec * 1e-3 / (self.thermal_voltage() * core::f64::consts::LN_10)
    }

    pub fn r_ap(&self) -> Ohms {
        self.r_p * (1.0 + self.tmr)
    }

    /// Free-layer area of the circular junction, nm^2.
    pub fn fl_area_nm2(&self) -> f64 {
        core::f64::consts::FRAC_PI_4 * self.fl_width_nm * self.fl_length_nm
    }

    pub fn fl_volume_m3(&self) -> f64 {
        self.fl_area_nm2() * self.fl_thickness_nm * 1e-27
    }

    /// K_u V / k_B T from the stack geometry.
    pub fn anisotropy_barrier_kt(&self) -> f64 {
        let ku_si = self.ku_erg_cm3 * 0.1;
        ku_si * self.fl_volume_m3() / (BOLTZMANN * self.temperature_k)
    }

    /// Anisotropy field 2K_u/M_s in Oe.
    pub fn anisotropy_field_oe(&self) -> f64 {
        2.0 * self.ku_erg_cm3 / self.ms_emu_cm3
    }

    /// Spin-transfer efficiency.
    pub fn stt_efficiency(&self) -> f64 {
        let p = self.spin_polarization;
        p / (2.0 * (1.0 + p * p))
    }
}

/// MTJ resistance for a stored state (bias independent).
pub fn mtj_resistance(state: MtjState, params: &DeviceParams) -> Result<Ohms> {
    if !(params.r_p.0.is_finite() && params.r_p.0 > 0.0) {
        return Err(Error::param("r_p", "must be finite and strictly positive"));
    }
    if !(params.tmr.is_finite() && params.tmr > 0.0) {
        return Err(Error::param("tmr", "must be finite and strictly positive"));
    }
    Ok(match state {
        MtjState::P => params.r_p,
        MtjState::Ap => params.r_ap(),
    })
}

/// Drain current of an NMOS with source at ground.
pub fn fet_current(v_gs: Volts, v_ds: Volts, params: &DeviceParams) -> Amps {
    Amps(Fet::from_params(params).current(v_ds.0, v_gs.0, 0.0))
}

const DIBL_SMOOTHING: f64 = 1e-3;

/// Charge-based long-channel NMOS with DIBL and a leakage floor.
///
/// Source and drain are interchangeable and the bulk sits at ground, so a
/// raised source sees the body effect through the slope factor.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Fet {
    pub vth: f64,
    pub beta: f64,
    pub n: f64,
    pub dibl: f64,
    pub floor: f64,
    pub vt: f64,
}

/// Current and its partial derivatives with respect to each terminal.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FetEval {
    pub i: f64,
    pub d_vd: f64,
    pub d_vg: f64,
    pub d_vs: f64,
}

#[inline]
fn softplus(y: f64) -> f64 {
    if y > 36.0 {
        y + libm::exp(-y)
    } else if y < -36.0 {
        libm::exp(y)
    } else {
        libm::log1p(libm::exp(y))
    }
}

#[inline]
fn logistic(y: f64) -> f64 {
    if y >= 0.0 {
        1.0 / (1.0 + libm::exp(-y))
    } else {
        let e = libm::exp(y);
        e / (1.0 + e)
    }
}

/// Interpolation function ln(1 + e^(x/2))^2 and its derivative.
#[inline]
fn ekv(x: f64) -> (f64, f64) {
    let l = softplus(0.5 * x);
    (l * l, l * logistic(0.5 * x))
}

impl Fet {
    pub fn from_params(p: &DeviceParams) -> Self {
        Self {
            vth: p.vth.0,
            beta: p.beta,
            n: p.slope_factor(),
            dibl: p.dibl,
            floor: p.leakage_floor.0,
            vt: p.thermal_voltage(),
        }
    }

    /// Drain-to-source current.
    #[inline]
    pub fn current(&self, vd: f64, vg: f64, vs: f64) -> f64 {
        let vds = vd - vs;
        let q = libm::sqrt(vds * vds + DIBL_SMOOTHING * DIBL_SMOOTHING);
        let vp = (vg - self.vth + self.dibl * q) / self.n;
        let ispec = 2.0 * self.n * self.beta * self.vt * self.vt;
        let (ff, _) = ekv((vp - vs) / self.vt);
        let (fr, _) = ekv((vp - vd) / self.vt);
        ispec * (ff - fr) + self.floor * libm::tanh(vds / self.vt)
    }

    #[inline]
    pub fn eval(&self, vd: f64, vg: f64, vs: f64) -> FetEval {
        let vds = vd - vs;
        let q = libm::sqrt(vds * vds + DIBL_SMOOTHING * DIBL_SMOOTHING);
        let vp = (vg - self.vth + self.dibl * q) / self.n;
        let dvp = self.dibl * vds / (q * self.n);
        let ispec = 2.0 * self.n * self.beta * self.vt * self.vt;
        let (ff, dff) = ekv((vp - vs) / self.vt);
        let (fr, dfr) = ekv((vp - vd) / self.vt);
        let th = libm::tanh(vds / self.vt);
        let gfloor = self.floor * (1.0 - th * th) / self.vt;
        let k = ispec / self.vt;
        FetEval {
            i: ispec * (ff - fr) + self.floor * th,
            d_vd: k * (dff * dvp - dfr * (dvp - 1.0)) + gfloor,
            d_vg: k * (dff - dfr) / self.n,
            d_vs: k * (dff * (-dvp - 1.0) + dfr * dvp) - gfloor,
        }
    }
}

/// The four bitcell topologies.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum BitcellKind {
    #[cfg_attr(feature = "serde", serde(rename = "1t-1mtj"))]
    OneT1Mtj,
    #[cfg_attr(feature = "serde", serde(rename = "2t-2mtj"))]
    TwoT2Mtj,
    #[cfg_attr(feature = "serde", serde(rename = "stride-i"))]
    StrideI,
    #[cfg_attr(feature = "serde", serde(rename = "stride-ii"))]
    StrideII,
}

impl BitcellKind {
    pub const ALL: [BitcellKind; 4] = [
        BitcellKind::OneT1Mtj,
        BitcellKind::TwoT2Mtj,
        BitcellKind::StrideI,
        BitcellKind::StrideII,
    ];

    pub const fn name(self) -> &'static str {
        match self {
            BitcellKind::OneT1Mtj => "1t-1mtj",
            BitcellKind::TwoT2Mtj => "2t-2mtj",
            BitcellKind::StrideI => "stride-i",
            BitcellKind::StrideII => "stride-ii",
        }
    }

    pub const fn is_stride(self) -> bool {
        matches!(self, BitcellKind::StrideI | BitcellKind::StrideII)
    }

    pub const fn mtj_count(self) -> usize {
        match self {
            BitcellKind::OneT1Mtj => 1,
            _ => 2,
        }
    }

    /// Whether the left/right mirror image of a cell is the same circuit.
    pub const fn is_mirror_symmetric(self) -> bool {
        !matches!(self, BitcellKind::OneT1Mtj)
    }
}

impl fmt::Display for BitcellKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BitcellKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BitcellKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::param("kind", alloc::format!("unknown bitcell kind `{s}`")))
    }
}

/// MTJ states stored in one bitcell.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum CellState {
    Single(MtjState),
    Pair { left: MtjState, right: MtjState },
}

impl CellState {
    pub const fn pair(left: MtjState) -> Self {
        CellState::Pair {
            left,
            right: left.complement(),
        }
    }

    pub const fn left(self) -> MtjState {
        match self {
            CellState::Single(s) => s,
            CellState::Pair { left, .. } => left,
        }
    }

    pub const fn right(self) -> Option<MtjState> {
        match self {
            CellState::Single(_) => None,
            CellState::Pair { right, .. } => Some(right),
        }
    }

    pub const fn mirrored(self) -> Self {
        match self {
            CellState::Single(s) => CellState::Single(s),
            CellState::Pair { left, right } => CellState::Pair {
                left: right,
                right: left,
            },
        }
    }

    /// Stored weights: the right shape and, for two-MTJ kinds, complementary.
    pub fn check(self, kind: BitcellKind) -> Result<()> {
        self.check_shape(kind)?;
        match self {
            CellState::Pair { left, right } if left == right => Err(Error::param(
                "weight",
                "two-MTJ cells store complementary states",
            )),
            _ => Ok(()),
        }
    }

    /// Any state the junctions can hold, including the intermediate states
    /// of a multi-cycle write.
    pub fn check_shape(self, kind: BitcellKind) -> Result<()> {
        match (kind, self) {
            (BitcellKind::OneT1Mtj, CellState::Single(_)) => Ok(()),
            (BitcellKind::OneT1Mtj, CellState::Pair { .. }) => Err(Error::param(
                "weight",
                "1T-1MTJ cells hold a single MTJ state",
            )),
            (_, CellState::Single(_)) => {
                Err(Error::param("weight", "two-MTJ cells hold a pair of states"))
            }
            _ => Ok(()),
        }
    }
}

impl fmt::Display for CellState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CellState::Single(s) => write!(f, "{s}"),
            CellState::Pair { left, right } => write!(f, "{left}-{right}"),
        }
    }
}
