//! Process variation: device-level Monte Carlo on a single bitcell and the
//! lumped Gaussian current model applied inside arrays.

use alloc::vec::Vec;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::bitcell::{solve_cell_dc, CellDevices, TerminalVoltages};
use crate::device::{BitcellKind, CellState, DeviceParams, Fet, MtjState};
use crate::error::{Error, Result};
use crate::units::{Amps, Volts};

const MAX_RESAMPLES: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct VariationSpec {
    pub sigma_vth: Volts,
    /// Of the oxide thickness.
    pub sigma_tox_fraction: f64,
    /// Of the lateral junction size.
    pub sigma_diameter_fraction: f64,
    /// R_P grows as exp(dt_ox / decay).
    pub tox_decay_nm: f64,
    pub seed: u64,
}

impl Default for VariationSpec {
    fn default() -> Self {
        Self {
            sigma_vth: Volts(0.025),
            sigma_tox_fraction: 0.015,
            // 5% of a 65 nm minimum metal width on a 60 nm junction
            sigma_diameter_fraction: 0.05 * 65.0 / 60.0,
            tox_decay_nm: 0.15,
            seed: 0,
        }
    }
}

impl VariationSpec {
    pub fn none() -> Self {
        Self {
            sigma_vth: Volts(0.0),
            sigma_tox_fraction: 0.0,
            sigma_diameter_fraction: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("variation.sigma_vth", self.sigma_vth.0),
            ("variation.sigma_tox_fraction", self.sigma_tox_fraction),
            ("variation.sigma_diameter_fraction", self.sigma_diameter_fraction),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::param(name, "must be finite and non-negative"));
            }
        }
        if !(self.tox_decay_nm.is_finite() && self.tox_decay_nm > 0.0) {
            return Err(Error::param("variation.tox_decay_nm", "must be finite and positive"));
        }
        Ok(())
    }

    pub fn is_zero(&self) -> bool {
        self.sigma_vth.0 == 0.0 && self.sigma_tox_fraction == 0.0 && self.sigma_diameter_fraction == 0.0
    }
}

/// Generator for one trial, independent of how trials are scheduled.
pub fn trial_rng(seed: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    rng
}

fn gauss(rng: &mut impl RngCore) -> f64 {
    StandardNormal.sample(rng)
}

/// mean * (1 + sigma z), redrawn until positive.
fn positive_draw(mean: f64, sigma_fraction: f64, what: &'static str, rng: &mut impl RngCore) -> Result<f64> {
    if sigma_fraction == 0.0 {
        return Ok(mean);
    }
    for _ in 0..MAX_RESAMPLES {
        let v = mean * (1.0 + sigma_fraction * gauss(rng));
        if v > 0.0 {
            return Ok(v);
        }
    }
    Err(Error::param(what, "no physical sample within the retry budget"))
}

fn vth_draw(mean: f64, sigma: f64, rng: &mut impl RngCore) -> Result<f64> {
    if sigma == 0.0 {
        return Ok(mean);
    }
    for _ in 0..MAX_RESAMPLES {
        let v = mean + sigma * gauss(rng);
        if v > 0.0 {
            return Ok(v);
        }
    }
    Err(Error::param("vth", "no physical sample within the retry budget"))
}

/// R_P of one junction with perturbed oxide and lateral size.
fn junction(base: &DeviceParams, spec: &VariationSpec, rng: &mut impl RngCore) -> Result<(f64, f64, f64)> {
    let tox = positive_draw(base.tox_nm, spec.sigma_tox_fraction, "tox_nm", rng)?;
    let scale = positive_draw(1.0, spec.sigma_diameter_fraction, "fl_width_nm", rng)?;
    let r = base.r_p.0 * libm::exp((tox - base.tox_nm) / spec.tox_decay_nm) / (scale * scale);
    Ok((r, tox, scale))
}

/// One global draw applied to every device of `base`.
pub fn sample_device_params(base: &DeviceParams, spec: &VariationSpec, rng: &mut impl RngCore) -> Result<DeviceParams> {
    spec.validate()?;
    let mut p = base.clone();
    p.vth = Volts(vth_draw(base.vth.0, spec.sigma_vth.0, rng)?);
    let (r, tox, scale) = junction(base, spec, rng)?;
    p.tox_nm = tox;
    p.fl_width_nm *= scale;
    p.fl_length_nm *= scale;
    p.r_p.0 = r;
    Ok(p)
}

/// Independent draws for every transistor and junction of one cell.
pub fn sample_cell_devices(base: &DeviceParams, spec: &VariationSpec, rng: &mut impl RngCore) -> Result<CellDevices> {
    spec.validate()?;
    let nominal = Fet::from_params(base);
    let mut fets = [nominal; 4];
    for f in fets.iter_mut() {
        f.vth = vth_draw(base.vth.0, spec.sigma_vth.0, rng)?;
    }
    let mut r_p = [0.0; 2];
    for r in r_p.iter_mut() {
        *r = junction(base, spec, rng)?.0;
    }
    Ok(CellDevices {
        r_p,
        tmr: base.tmr,
        fets,
        tmr_v_half: None,
    })
}

/// Per-branch statistics of a bitcell Monte Carlo run.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct McSummary {
    pub kind: BitcellKind,
    pub state: CellState,
    pub trials: usize,
    pub failed: usize,
    pub mean: [Amps; 2],
    pub std: [Amps; 2],
    /// std / |mean| per branch.
    pub sigma_fraction: [f64; 2],
    /// (left, right) currents of every successful trial, in trial order.
    pub samples: Vec<[f64; 2]>,
}

impl McSummary {
    /// mean + k std of a branch.
    pub fn upper(&self, branch: usize, k: f64) -> Amps {
        Amps(self.mean[branch].0 + k * self.std[branch].0)
    }
}

/// Currents of a single trial.
pub fn bitcell_trial(
    kind: BitcellKind,
    state: CellState,
    tv: &TerminalVoltages,
    base: &DeviceParams,
    spec: &VariationSpec,
    trial: u64,
) -> Result<[f64; 2]> {
    let mut rng = trial_rng(spec.seed, trial);
    let dev = sample_cell_devices(base, spec, &mut rng)?;
    let b = solve_cell_dc(kind, state, tv, &dev)?;
    Ok([b.i_left.0, b.i_right.0])
}

/// Statistics from per-trial outcomes, in trial order.
pub fn summarize_trials(kind: BitcellKind, state: CellState, outcomes: Vec<Result<[f64; 2]>>) -> Result<McSummary> {
    let trials = outcomes.len();
    if trials < 2 {
        return Err(Error::param("n_trials", "need at least two trials"));
    }
    let mut samples = Vec::with_capacity(trials);
    let mut failed = 0;
    for o in outcomes {
        match o {
            Ok(s) => samples.push(s),
            Err(e) if e.is_numerical() => failed += 1,
            Err(e) => return Err(e),
        }
    }
    if failed * 100 > trials || samples.len() < 2 {
        return Err(Error::TooManyFailures { failed, trials });
    }
    let n = samples.len() as f64;
    let mut mean = [0.0; 2];
    let mut std = [0.0; 2];
    for b in 0..2 {
        mean[b] = samples.iter().map(|s| s[b]).sum::<f64>() / n;
        let var = samples.iter().map(|s| (s[b] - mean[b]) * (s[b] - mean[b])).sum::<f64>() / (n - 1.0);
        std[b] = libm::sqrt(var);
    }
    let frac = |b: usize| if mean[b] == 0.0 { 0.0 } else { std[b] / libm::fabs(mean[b]) };
    Ok(McSummary {
        kind,
        state,
        trials,
        failed,
        mean: [Amps(mean[0]), Amps(mean[1])],
        std: [Amps(std[0]), Amps(std[1])],
        sigma_fraction: [frac(0), frac(1)],
        samples,
    })
}

/// Sequential Monte Carlo over `n_trials` seeded substreams.
pub fn bitcell_mc(
    kind: BitcellKind,
    state: CellState,
    tv: &TerminalVoltages,
    base: &DeviceParams,
    spec: &VariationSpec,
    n_trials: usize,
) -> Result<McSummary> {
    base.validate()?;
    spec.validate()?;
    tv.validate(base.v_dd)?;
    state.check(kind)?;
    let outcomes = (0..n_trials as u64)
        .map(|t| bitcell_trial(kind, state, tv, base, spec, t))
        .collect();
    summarize_trials(kind, state, outcomes)
}

/// i * N(1, sigma).
pub fn apply_current_variation(i_nominal: Amps, sigma_fraction: f64, rng: &mut impl RngCore) -> Amps {
    if sigma_fraction == 0.0 {
        return i_nominal;
    }
    i_nominal * (1.0 + sigma_fraction * gauss(rng))
}

/// Fractional current spread of the branch holding each MTJ state.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct BranchSigmas {
    pub p: f64,
    pub ap: f64,
}

impl BranchSigmas {
    pub const ZERO: Self = Self { p: 0.0, ap: 0.0 };

    pub fn for_state(&self, s: MtjState) -> f64 {
        match s {
            MtjState::P => self.p,
            MtjState::Ap => self.ap,
        }
    }
}

/// Branch spreads of a kind at its read point. Two-MTJ kinds are measured on
/// the (P, AP) cell; the 1T-1MTJ cell is measured once per state.
pub fn branch_sigmas(
    kind: BitcellKind,
    tv: &TerminalVoltages,
    base: &DeviceParams,
    spec: &VariationSpec,
    n_trials: usize,
) -> Result<(BranchSigmas, Vec<McSummary>)> {
    if kind == BitcellKind::OneT1Mtj {
        let p = bitcell_mc(kind, CellState::Single(MtjState::P), tv, base, spec, n_trials)?;
        let ap = bitcell_mc(kind, CellState::Single(MtjState::Ap), tv, base, spec, n_trials)?;
        let s = BranchSigmas {
            p: p.sigma_fraction[0],
            ap: ap.sigma_fraction[0],
        };
        Ok((s, alloc::vec![p, ap]))
    } else {
        let m = bitcell_mc(kind, CellState::pair(MtjState::P), tv, base, spec, n_trials)?;
        let s = BranchSigmas {
            p: m.sigma_fraction[0],
            ap: m.sigma_fraction[1],
        };
        Ok((s, alloc::vec![m]))
    }
}

/// Per-cell (left, right) multipliers for an array of stored states.
pub fn variation_factors(states: &[CellState], sigmas: &BranchSigmas, rng: &mut impl RngCore) -> Vec<[f64; 2]> {
    states
        .iter()
        .map(|s| match *s {
            CellState::Single(m) => [apply_current_variation(Amps(1.0), sigmas.for_state(m), rng).0, 1.0],
            CellState::Pair { left, right } => [
                apply_current_variation(Amps(1.0), sigmas.for_state(left), rng).0,
                apply_current_variation(Amps(1.0), sigmas.for_state(right), rng).0,
            ],
        })
        .collect()
}
