//! Experiment configuration: a TOML file with one section per module.
//!
//! Missing keys take their defaults, unknown keys are rejected, and command
//! line flags override the file. Relative paths are resolved against the
//! directory holding the config file.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use xbar_core::adc::Loss;
use xbar_core::crossbar::{CrossbarConfig, SinkModel};
use xbar_core::inference::Fidelity;
use xbar_core::variation::{BranchSigmas, VariationSpec};
use xbar_core::write::WriteSetup;
use xbar_core::{BitcellKind, DeviceParams, Ohms, Volts};

use crate::error::{Result, SimError};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CrossbarSection {
    pub rows: usize,
    /// Data columns; 1T-1MTJ arrays add a dummy column on top.
    pub cols: usize,
    pub r_driver: f64,
    /// Per-cell wire resistance overrides by kind.
    pub r_wire: BTreeMap<BitcellKind, f64>,
    /// Read voltage overrides by kind.
    pub v_read: BTreeMap<BitcellKind, f64>,
    pub sink: SinkModel,
}

impl Default for CrossbarSection {
    fn default() -> Self {
        Self {
            rows: 64,
            cols: 64,
            r_driver: CrossbarConfig::DEFAULT_R_DRIVER.0,
            r_wire: BTreeMap::new(),
            v_read: BTreeMap::new(),
            sink: SinkModel::VirtualGround,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SchemeSection {
    pub subtractor_gain: f64,
}

impl Default for SchemeSection {
    fn default() -> Self {
        Self { subtractor_gain: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LutSection {
    pub dir: PathBuf,
    /// Grid pitch by kind, V.
    pub step: BTreeMap<BitcellKind, f64>,
    /// Bitline axes run to v_read plus this headroom.
    pub headroom: f64,
    /// Upper end of the source-line axes for resistive sinks.
    pub v_sink_max: f64,
}

impl Default for LutSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("luts"),
            step: BTreeMap::new(),
            headroom: 0.02,
            v_sink_max: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VariationSection {
    pub sigma_vth: f64,
    pub sigma_tox_fraction: f64,
    pub sigma_diameter_fraction: f64,
    pub tox_decay_nm: f64,
}

impl Default for VariationSection {
    fn default() -> Self {
        let d = VariationSpec::default();
        Self {
            sigma_vth: d.sigma_vth.0,
            sigma_tox_fraction: d.sigma_tox_fraction,
            sigma_diameter_fraction: d.sigma_diameter_fraction,
            tox_decay_nm: d.tox_decay_nm,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdcSection {
    pub loss: Loss,
    /// Candidate reference steps as fractions of the unit-cell current.
    pub lo: f64,
    pub hi: f64,
    pub steps: usize,
}

impl Default for AdcSection {
    fn default() -> Self {
        Self {
            loss: Loss::Mae,
            lo: 0.7,
            hi: 1.0,
            steps: 64,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub lo: f64,
    pub hi: f64,
    pub steps: usize,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            lo: 0.05,
            hi: 1.2,
            steps: 116,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeName {
    And,
    Xnor,
}

impl ModeName {
    pub fn mode(self) -> xbar_core::imc::ImcMode {
        match self {
            ModeName::And => xbar_core::imc::ImcMode::And,
            ModeName::Xnor => xbar_core::imc::ImcMode::Xnor,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ModeName::And => "and",
            ModeName::Xnor => "xnor",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SmSection {
    pub combos: usize,
    pub pwa: Vec<usize>,
    pub modes: Vec<ModeName>,
}

impl Default for SmSection {
    fn default() -> Self {
        Self {
            combos: 8000,
            pwa: vec![8, 16],
            modes: vec![ModeName::And, ModeName::Xnor],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MonteCarloSection {
    pub trials: usize,
}

impl Default for MonteCarloSection {
    fn default() -> Self {
        Self { trials: 1000 }
    }
}

#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RdmSection {
    /// Critical switching current, A. Defaults to the device estimate.
    pub i_cr: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InferenceSection {
    pub network: PathBuf,
    pub dataset: PathBuf,
    pub calibration: PathBuf,
    pub calibration_samples: usize,
    pub pwa: usize,
    pub fidelities: Vec<Fidelity>,
    /// Evaluate only the first `limit` samples.
    pub limit: Option<usize>,
    /// Monte Carlo trials behind the branch spreads.
    pub sigma_trials: usize,
    /// Branch spreads by kind, replacing the Monte Carlo estimate.
    pub branch_sigmas: BTreeMap<BitcellKind, BranchSigmas>,
}

impl Default for InferenceSection {
    fn default() -> Self {
        Self {
            network: PathBuf::from("fixtures/bnn_digits.json"),
            dataset: PathBuf::from("fixtures/digits_test.csv"),
            calibration: PathBuf::from("fixtures/digits_calib.csv"),
            calibration_samples: 16,
            pwa: 16,
            fidelities: vec![Fidelity::Ideal, Fidelity::NonIdeal, Fidelity::NonIdealVariation],
            limit: None,
            sigma_trials: 1000,
            branch_sigmas: BTreeMap::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Worker threads; 0 uses every available core.
    pub workers: usize,
    pub out_dir: PathBuf,
    pub kinds: Vec<BitcellKind>,
    pub device: DeviceParams,
    pub crossbar: CrossbarSection,
    pub scheme: SchemeSection,
    pub lut: LutSection,
    pub variation: VariationSection,
    pub adc: AdcSection,
    pub sweep: SweepSection,
    pub sm: SmSection,
    pub montecarlo: MonteCarloSection,
    pub rdm: RdmSection,
    pub inference: InferenceSection,
    pub write: WriteSetup,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            workers: 0,
            out_dir: PathBuf::from("out"),
            kinds: BitcellKind::ALL.to_vec(),
            device: DeviceParams::default(),
            crossbar: CrossbarSection::default(),
            scheme: SchemeSection::default(),
            lut: LutSection::default(),
            variation: VariationSection::default(),
            adc: AdcSection::default(),
            sweep: SweepSection::default(),
            sm: SmSection::default(),
            montecarlo: MonteCarloSection::default(),
            rdm: RdmSection::default(),
            inference: InferenceSection::default(),
            write: WriteSetup::default(),
        }
    }
}

/// Flags that take precedence over the file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub out_dir: Option<PathBuf>,
    pub kinds: Option<Vec<BitcellKind>>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| SimError::config(e.to_string()))
    }

    /// Read, resolve relative paths, apply overrides and validate.
    pub fn load(path: &Path, ov: &Overrides) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| SimError::io(path, e))?;
        let mut cfg = Self::from_toml(&text).map_err(|e| match e {
            SimError::Config(m) => SimError::config(format!("{}: {m}", path.display())),
            e => e,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        cfg.apply(ov);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        for p in [
            &mut self.out_dir,
            &mut self.lut.dir,
            &mut self.inference.network,
            &mut self.inference.dataset,
            &mut self.inference.calibration,
        ] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    pub fn apply(&mut self, ov: &Overrides) {
        if let Some(s) = ov.seed {
            self.seed = s;
        }
        if let Some(w) = ov.workers {
            self.workers = w;
        }
        if let Some(o) = &ov.out_dir {
            self.out_dir = o.clone();
        }
        if let Some(k) = &ov.kinds {
            self.kinds = k.clone();
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, why: &str| Err(SimError::config(format!("`{key}` {why}")));
        if self.kinds.is_empty() {
            return bad("kinds", "must list at least one bitcell kind");
        }
        self.device.validate()?;
        for k in &self.kinds {
            self.crossbar_for(*k).validate()?;
        }
        if !(self.scheme.subtractor_gain.is_finite() && self.scheme.subtractor_gain > 0.0) {
            return bad("scheme.subtractor_gain", "must be finite and positive");
        }
        if self.kinds.iter().any(|&k| !(self.lut_step(k) > 0.0 && self.lut_step(k) <= 0.1)) {
            return bad("lut.step", "must lie in (0, 0.1] V");
        }
        if !(self.lut.headroom >= 0.0 && self.lut.v_sink_max > 0.0) {
            return bad("lut.headroom", "must be non-negative with a positive lut.v_sink_max");
        }
        self.variation_spec().validate()?;
        let a = &self.adc;
        if !(a.lo > 0.0 && a.hi > a.lo && a.steps >= 2) {
            return bad("adc", "needs 0 < lo < hi and steps >= 2");
        }
        let s = &self.sweep;
        if !(s.lo > 0.0 && s.hi > s.lo && s.hi <= self.device.v_dd.0 && s.steps >= 2) {
            return bad("sweep", "needs 0 < lo < hi <= device.v_dd and steps >= 2");
        }
        if self.sm.combos == 0 {
            return bad("sm.combos", "must be positive");
        }
        if self.sm.pwa.is_empty() || self.sm.pwa.iter().any(|&p| p == 0 || p > self.crossbar.rows) {
            return bad("sm.pwa", "entries must lie in 1..=crossbar.rows");
        }
        if self.sm.modes.is_empty() {
            return bad("sm.modes", "must list at least one mode");
        }
        if self.montecarlo.trials < 2 {
            return bad("montecarlo.trials", "must be at least 2");
        }
        if let Some(i) = self.rdm.i_cr {
            if !(i.is_finite() && i > 0.0) {
                return bad("rdm.i_cr", "must be finite and positive");
            }
        }
        let inf = &self.inference;
        if inf.pwa == 0 || inf.pwa > self.crossbar.rows {
            return bad("inference.pwa", "must lie in 1..=crossbar.rows");
        }
        if inf.fidelities.is_empty() {
            return bad("inference.fidelities", "must list at least one fidelity");
        }
        if inf.sigma_trials < 2 {
            return bad("inference.sigma_trials", "must be at least 2");
        }
        for (k, s) in &inf.branch_sigmas {
            if !(s.p >= 0.0 && s.ap >= 0.0 && s.p.is_finite() && s.ap.is_finite()) {
                return Err(SimError::config(format!("`inference.branch_sigmas.{k}` must be finite and non-negative")));
            }
        }
        self.write.validate(self.device.v_dd)?;
        Ok(())
    }

    /// Array of one kind with the configured parasitics and read bias.
    pub fn crossbar_for(&self, kind: BitcellKind) -> CrossbarConfig {
        let c = &self.crossbar;
        CrossbarConfig {
            rows: c.rows,
            cols: c.cols,
            kind,
            r_driver: Ohms(c.r_driver),
            r_wire: c.r_wire.get(&kind).map_or(CrossbarConfig::default_r_wire(kind), |&r| Ohms(r)),
            sink: c.sink,
            v_read: c.v_read.get(&kind).map_or(CrossbarConfig::default_v_read(kind), |&v| Volts(v)),
            v_dd: self.device.v_dd,
        }
    }

    /// Grid pitch, coarser by default for the wide STRIDe read window.
    pub fn lut_step(&self, kind: BitcellKind) -> f64 {
        let default = if kind.is_stride() { 0.004 } else { 0.002 };
        self.lut.step.get(&kind).copied().unwrap_or(default)
    }

    pub fn variation_spec(&self) -> VariationSpec {
        let v = &self.variation;
        VariationSpec {
            sigma_vth: Volts(v.sigma_vth),
            sigma_tox_fraction: v.sigma_tox_fraction,
            sigma_diameter_fraction: v.sigma_diameter_fraction,
            tox_decay_nm: v.tox_decay_nm,
            seed: self.seed,
        }
    }

    /// SHA-256 over the canonical JSON of everything that shapes results.
    /// Worker count and output directory are excluded.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.workers = 0;
        c.out_dir = PathBuf::new();
        let bytes = serde_json::to_vec(&c).expect("config serializes");
        hex(&Sha256::digest(bytes))
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_defaults() {
        assert_eq!(ExperimentConfig::from_toml("").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn unknown_key_is_named() {
        let e = ExperimentConfig::from_toml("[crossbar]\nrowz = 3\n").unwrap_err();
        assert_eq!(e.exit_code(), 2);
        assert!(e.to_string().contains("rowz"), "{e}");
        let e = ExperimentConfig::from_toml("[device]\nvth = 0.4\nbogus = 1\n").unwrap_err();
        assert!(e.to_string().contains("bogus"), "{e}");
    }

    #[test]
    fn sections_parse() {
        let text = r#"
            seed = 7
            kinds = ["stride-i", "1t-1mtj"]
            [crossbar]
            rows = 32
            r_wire = { "stride-i" = 3.0 }
            sink = { type = "resistive", r_sink = 100.0 }
            [device]
            tmr = 4.5
            [inference]
            fidelities = ["ideal", "nonideal+variation"]
            branch_sigmas = { "stride-ii" = { p = 0.8, ap = 0.12 } }
            [write]
            v_write = 1.5
        "#;
        let c = ExperimentConfig::from_toml(text).unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.kinds, vec![BitcellKind::StrideI, BitcellKind::OneT1Mtj]);
        assert_eq!(c.crossbar_for(BitcellKind::StrideI).r_wire, Ohms(3.0));
        assert_eq!(c.crossbar_for(BitcellKind::StrideII).r_wire, CrossbarConfig::default_r_wire(BitcellKind::StrideII));
        assert_eq!(c.device.tmr, 4.5);
        assert_eq!(c.inference.fidelities[1], Fidelity::NonIdealVariation);
        assert_eq!(c.inference.branch_sigmas[&BitcellKind::StrideII].ap, 0.12);
        assert_eq!(c.write.v_write, Volts(1.5));
        c.validate().unwrap();
    }

    #[test]
    fn precedence_cli_over_file_over_defaults() {
        let mut c = ExperimentConfig::from_toml("seed = 5\nworkers = 3\n").unwrap();
        assert_eq!(c.lut_step(BitcellKind::StrideI), 0.004);
        c.apply(&Overrides {
            seed: Some(9),
            ..Default::default()
        });
        assert_eq!((c.seed, c.workers), (9, 3));
    }

    #[test]
    fn invalid_values_are_config_errors() {
        let c = ExperimentConfig::from_toml("[sm]\npwa = [0]\n").unwrap();
        let e = c.validate().unwrap_err();
        assert_eq!(e.exit_code(), 2);
        assert!(e.to_string().contains("sm.pwa"));
        let c = ExperimentConfig::from_toml("[device]\nr_p = -1.0\n").unwrap();
        assert_eq!(c.validate().unwrap_err().exit_code(), 2);
    }

    #[test]
    fn hash_ignores_run_only_fields() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        b.workers = 8;
        b.out_dir = PathBuf::from("elsewhere");
        assert_eq!(a.hash(), b.hash());
        b.seed = 2;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }
}
