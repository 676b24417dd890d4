//! Flash ADC with a linear reference ladder and reference-step calibration.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::units::Amps;

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AdcConfig {
    pub bits: u32,
    /// Reference step between adjacent levels.
    pub i_quant: Amps,
    /// Magnitude ladder plus a sign comparator.
    pub signed: bool,
    /// Largest magnitude code.
    pub max_code: u32,
}

impl AdcConfig {
    pub fn new(bits: u32, i_quant: Amps, signed: bool) -> Result<Self> {
        let cfg = Self {
            bits,
            i_quant,
            signed,
            max_code: (1u32 << bits.min(31)) - 1,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Converter sized for `pwa` simultaneously asserted rows: 3 bits for
    /// pwa 8, 4 bits for pwa 16, with a top level at code `pwa` so that a
    /// full group is representable.
    pub fn for_pwa(pwa: usize, i_quant: Amps, signed: bool) -> Result<Self> {
        if pwa == 0 {
            return Err(Error::Domain {
                what: "pwa",
                value: 0,
            });
        }
        let bits = usize::BITS - (pwa - 1).leading_zeros();
        let cfg = Self {
            bits: bits.max(1),
            i_quant,
            signed,
            max_code: pwa as u32,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.bits == 0 || self.bits > 16 {
            return Err(Error::param("adc.bits", "must be between 1 and 16"));
        }
        if !(self.i_quant.0.is_finite() && self.i_quant.0 > 0.0) {
            return Err(Error::param("adc.i_quant", "must be finite and positive"));
        }
        if self.max_code == 0 {
            return Err(Error::param("adc.max_code", "must be positive"));
        }
        Ok(())
    }

    pub fn with_i_quant(mut self, i_quant: Amps) -> Self {
        self.i_quant = i_quant;
        self
    }
}

/// Code of a current: levels at (k + 0.5) i_quant, clamped to the range.
pub fn quantize(i_out: Amps, cfg: &AdcConfig) -> i64 {
    let x = i_out.0 / cfg.i_quant.0;
    let mag = libm::fabs(x);
    let code = if mag.is_nan() {
        0
    } else {
        (libm::floor(mag + 0.5) as i64).min(cfg.max_code as i64)
    };
    if x < 0.0 {
        if cfg.signed {
            -code
        } else {
            0
        }
    } else {
        code
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Loss {
    #[default]
    Mae,
    Mse,
}

/// Error of one candidate step.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SweepPoint {
    pub i_quant: Amps,
    pub loss: f64,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Calibration {
    pub config: AdcConfig,
    pub loss: f64,
    pub curve: Vec<SweepPoint>,
}

/// Sum of per-sample errors; integers keep ties exact.
pub fn calibration_loss(calib: &[(f64, i64)], cfg: &AdcConfig, loss: Loss) -> u64 {
    calib
        .iter()
        .map(|&(i, want)| {
            let d = (quantize(Amps(i), cfg) - want).unsigned_abs();
            match loss {
                Loss::Mae => d,
                Loss::Mse => d * d,
            }
        })
        .sum()
}

/// Evenly spaced candidate steps over [lo, hi], inclusive.
pub fn sweep_grid(lo: Amps, hi: Amps, steps: usize) -> Result<Vec<Amps>> {
    if steps < 2 || !(lo.0 > 0.0 && hi.0 > lo.0) {
        return Err(Error::param("adc.sweep", "need 0 < lo < hi and at least two steps"));
    }
    Ok((0..steps)
        .map(|k| Amps(lo.0 + (hi.0 - lo.0) * k as f64 / (steps - 1) as f64))
        .collect())
}

/// Step minimizing the calibration loss; ties go to the larger step.
pub fn optimize_iquant(
    calib: &[(f64, i64)],
    template: &AdcConfig,
    candidates: &[Amps],
    loss: Loss,
) -> Result<Calibration> {
    if calib.is_empty() {
        return Err(Error::Empty("calibration set"));
    }
    if candidates.is_empty() {
        return Err(Error::Empty("candidate set"));
    }
    let n = calib.len() as f64;
    let mut best: Option<(u64, AdcConfig)> = None;
    let mut curve = Vec::with_capacity(candidates.len());
    for &iq in candidates {
        let cfg = template.with_i_quant(iq);
        cfg.validate()?;
        let total = calibration_loss(calib, &cfg, loss);
        curve.push(SweepPoint {
            i_quant: iq,
            loss: total as f64 / n,
        });
        let better = match best {
            None => true,
            Some((b, c)) => total < b || (total == b && iq.0 > c.i_quant.0),
        };
        if better {
            best = Some((total, cfg));
        }
    }
    let (total, config) = best.expect("candidates are non-empty");
    Ok(Calibration {
        config,
        loss: total as f64 / n,
        curve,
    })
}
