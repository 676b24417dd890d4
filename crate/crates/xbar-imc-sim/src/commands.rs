//! The experiment commands. Work is spread over a rayon pool sized by the
//! `workers` setting; partial results are always merged in index order, so
//! output bytes do not depend on the worker count.

use std::path::PathBuf;
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;
use xbar_core::bitcell::ReadPoint;
use xbar_core::crossbar::{build_array, CrossbarConfig, CrossbarInstance, IterOptions};
use xbar_core::imc::{array_states, ImcScheme};
use xbar_core::inference::{
    compile_network, reference_accuracy, Chip, ChipOptions, Fidelity, InferenceReport, MappingPlan,
    QuantNetwork, Sample, Tally,
};
use xbar_core::lut::LutSet;
use xbar_core::metrics::{
    evaluate_trial, finish_worst_case, rdm, sample_trials, OutputStateHistogram, StateSummary,
};
use xbar_core::variation::{bitcell_trial, summarize_trials, trial_rng, BranchSigmas, McSummary};
use xbar_core::write::{critical_current, write_cycle_cost, WriteCost};
use xbar_core::{read_point, Amps, BitcellKind, CellState, MtjState, TerminalVoltages, Volts};

use crate::config::{ExperimentConfig, ModeName};
use crate::error::{Result, SimError};
use crate::fixtures::{load_dataset, load_network};
use crate::lutfile;
use crate::report::{num, Stamp, Writer};

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Command {
    GenLut,
    SweepVread,
    Sm,
    Rdm,
    Montecarlo,
    Infer,
    WriteSim,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::GenLut => "gen-lut",
            Command::SweepVread => "sweep-vread",
            Command::Sm => "sm",
            Command::Rdm => "rdm",
            Command::Montecarlo => "montecarlo",
            Command::Infer => "infer",
            Command::WriteSim => "write-sim",
        }
    }
}

/// Files written and a one-line account of the run.
#[derive(Debug)]
pub struct Outcome {
    pub summary: String,
    pub files: Vec<PathBuf>,
}

pub fn run(cmd: Command, cfg: &ExperimentConfig, force: bool) -> Result<Outcome> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| SimError::config(format!("worker pool: {e}")))?;
    let stamp = Stamp {
        command: cmd.name().to_string(),
        config_hash: cfg.hash(),
        seed: cfg.seed,
    };
    pool.install(|| {
        let mut w = Writer::new(&cfg.out_dir)?;
        let summary = match cmd {
            Command::GenLut => gen_lut(cfg, force, &stamp, &mut w),
            Command::SweepVread => sweep(cfg, &stamp, &mut w),
            Command::Sm => sm(cfg, &stamp, &mut w),
            Command::Rdm => read_disturb(cfg, &stamp, &mut w),
            Command::Montecarlo => montecarlo(cfg, &stamp, &mut w),
            Command::Infer => infer(cfg, &stamp, &mut w),
            Command::WriteSim => write_sim(cfg, &stamp, &mut w),
        }?;
        Ok(Outcome {
            summary,
            files: w.written,
        })
    })
}

#[derive(Serialize)]
struct LutEntry {
    kind: BitcellKind,
    file: String,
    fingerprint: String,
    tables: usize,
    points_per_table: usize,
}

fn gen_lut(cfg: &ExperimentConfig, force: bool, stamp: &Stamp, w: &mut Writer) -> Result<String> {
    let mut out = Vec::new();
    for &kind in &cfg.kinds {
        let (path, h) = lutfile::generate(cfg, kind, force)?;
        out.push(LutEntry {
            kind,
            file: path.file_name().unwrap().to_string_lossy().into_owned(),
            fingerprint: h.fingerprint,
            tables: h.tables.len(),
            points_per_table: h.tables[0].grid.point_count(),
        });
    }
    let rows: Vec<Vec<String>> = out
        .iter()
        .map(|e| {
            vec![
                e.kind.name().into(),
                e.file.clone(),
                e.fingerprint.clone(),
                e.tables.to_string(),
                e.points_per_table.to_string(),
            ]
        })
        .collect();
    w.json("gen-lut.json", stamp, &out)?;
    w.csv("gen-lut.csv", stamp, &["kind", "file", "fingerprint", "tables", "points_per_table"], &rows)?;
    Ok(format!("wrote {} table files to {}", out.len(), cfg.lut.dir.display()))
}

#[derive(Serialize)]
pub struct SweepResult {
    pub kind: BitcellKind,
    pub peak: ReadPoint,
    /// Read point at the configured operating voltage.
    pub operating: ReadPoint,
    pub points: Vec<ReadPoint>,
}

pub fn sweep_kind(cfg: &ExperimentConfig, kind: BitcellKind) -> Result<SweepResult> {
    let s = &cfg.sweep;
    let points: Vec<ReadPoint> = (0..s.steps)
        .into_par_iter()
        .map(|k| {
            let v = s.lo + (s.hi - s.lo) * k as f64 / (s.steps - 1) as f64;
            read_point(kind, Volts(v), &cfg.device)
        })
        .collect::<std::result::Result<_, _>>()?;
    let peak = points
        .iter()
        .enumerate()
        .fold(0, |best, (i, p)| if p.ratio > points[best].ratio { i } else { best });
    Ok(SweepResult {
        kind,
        peak: points[peak],
        operating: read_point(kind, cfg.crossbar_for(kind).v_read, &cfg.device)?,
        points,
    })
}

fn sweep(cfg: &ExperimentConfig, stamp: &Stamp, w: &mut Writer) -> Result<String> {
    let res = cfg.kinds.iter().map(|&k| sweep_kind(cfg, k)).collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    for r in &res {
        for p in &r.points {
            rows.push(vec![r.kind.name().into(), num(p.v_read.0), num(p.i_high.0), num(p.i_low.0), num(p.ratio)]);
        }
    }
    w.json("sweep-vread.json", stamp, &res)?;
    w.csv("sweep-vread.csv", stamp, &["kind", "v_read", "i_high", "i_low", "ratio"], &rows)?;
    let peaks: Vec<String> = res
        .iter()
        .map(|r| format!("{} {:.1} at {:.3} V", r.kind, r.peak.ratio, r.peak.v_read.0))
        .collect();
    Ok(format!("peak ratio: {}", peaks.join(", ")))
}

/// Substream of one (mode, pwa) combination; shared by every kind so all
/// designs see the same input and weight patterns.
pub fn sm_stream(mode: ModeName, pwa: usize) -> u64 {
    ((mode as u64 + 1) << 32) | pwa as u64
}

/// Trials evaluated per parallel chunk.
const SM_CHUNK: usize = 4;

#[derive(Clone, Debug, Serialize)]
pub struct SmResult {
    pub kind: BitcellKind,
    pub mode: ModeName,
    pub pwa: usize,
    pub combos: usize,
    pub worst_state: i64,
    pub worst_margin: Amps,
    pub states: Vec<StateSummary>,
}

fn sm_instance(cfg: &ExperimentConfig, kind: BitcellKind, scheme: &ImcScheme, luts: Arc<LutSet>) -> Result<CrossbarInstance> {
    let array = cfg.crossbar_for(kind);
    let low = match scheme.mode {
        xbar_core::imc::ImcMode::Xnor => -1,
        xbar_core::imc::ImcMode::And => 0,
    };
    let states = array_states(scheme, kind, array.rows, array.cols, &vec![low; array.rows * array.cols])?;
    let config = CrossbarConfig {
        cols: states.len() / array.rows,
        ..array
    };
    Ok(build_array(config, states, luts)?)
}

pub fn sm_kind(cfg: &ExperimentConfig, kind: BitcellKind, luts: Arc<LutSet>, mode: ModeName, pwa: usize) -> Result<SmResult> {
    let scheme = ImcScheme {
        mode: mode.mode(),
        subtractor_gain: cfg.scheme.subtractor_gain,
    };
    let inst = sm_instance(cfg, kind, &scheme, luts)?;
    let mut rng = trial_rng(cfg.seed, sm_stream(mode, pwa));
    let trials = sample_trials(cfg.crossbar.rows, cfg.crossbar.cols, pwa, mode.mode(), cfg.sm.combos, &mut rng)?;
    let opts = IterOptions::default();
    let parts: Vec<OutputStateHistogram> = trials
        .par_chunks(SM_CHUNK)
        .map(|chunk| {
            let mut inst = inst.clone();
            let mut h = OutputStateHistogram::new();
            for t in chunk {
                evaluate_trial(&mut inst, t, &scheme, pwa, &opts, &mut h)?;
            }
            Ok(h)
        })
        .collect::<xbar_core::Result<_>>()?;
    let mut hist = OutputStateHistogram::new();
    for h in parts {
        hist.merge(h);
    }
    let combos = hist.len();
    let wc = finish_worst_case(hist)?;
    Ok(SmResult {
        kind,
        mode,
        pwa,
        combos,
        worst_state: wc.worst.state,
        worst_margin: wc.worst.margin,
        states: wc.histogram.summary(),
    })
}

fn sm(cfg: &ExperimentConfig, stamp: &Stamp, w: &mut Writer) -> Result<String> {
    let mut res = Vec::new();
    for &kind in &cfg.kinds {
        let luts = lutfile::load(cfg, kind)?;
        for &mode in &cfg.sm.modes {
            for &pwa in &cfg.sm.pwa {
                res.push(sm_kind(cfg, kind, luts.clone(), mode, pwa)?);
            }
        }
    }
    let worst: Vec<Vec<String>> = res
        .iter()
        .map(|r| {
            vec![
                r.kind.name().into(),
                r.mode.name().into(),
                r.pwa.to_string(),
                r.combos.to_string(),
                r.worst_state.to_string(),
                num(r.worst_margin.0),
            ]
        })
        .collect();
    let mut states = Vec::new();
    for r in &res {
        for s in &r.states {
            states.push(vec![
                r.kind.name().into(),
                r.mode.name().into(),
                r.pwa.to_string(),
                s.state.to_string(),
                s.count.to_string(),
                num(s.min.0),
                num(s.max.0),
                num(s.mean.0),
            ]);
        }
    }
    w.json("sm.json", stamp, &res)?;
    w.csv("sm.csv", stamp, &["kind", "mode", "pwa", "combos", "worst_state", "worst_margin"], &worst)?;
    w.csv(
        "sm-states.csv",
        stamp,
        &["kind", "mode", "pwa", "state", "count", "min", "max", "mean"],
        &states,
    )?;
    let lines: Vec<String> = res
        .iter()
        .map(|r| format!("{}/{}/{} {:.2} uA", r.kind, r.mode.name(), r.pwa, r.worst_margin.0 * 1e6))
        .collect();
    Ok(format!("worst sense margin: {}", lines.join(", ")))
}

#[derive(Clone, Debug, Serialize)]
pub struct RdmResult {
    pub kind: BitcellKind,
    pub v_read: Volts,
    pub i_cr: Amps,
    /// Largest junction current during a read.
    pub i_mtj: Amps,
    pub rdm_percent: f64,
}

/// The 1T-1MTJ cell is disturbed hardest in P; two-MTJ cells in the P
/// junction of the (AP, P) cell, its higher-current branch.
pub fn rdm_kind(cfg: &ExperimentConfig, kind: BitcellKind) -> Result<RdmResult> {
    let v_read = cfg.crossbar_for(kind).v_read;
    let p = read_point(kind, v_read, &cfg.device)?;
    let i_mtj = match kind {
        BitcellKind::OneT1Mtj => p.first.i_left.0.abs(),
        _ => p.first.i_right.0.abs(),
    };
    let i_cr = cfg.rdm.i_cr.map_or(critical_current(&cfg.device), Amps);
    Ok(RdmResult {
        kind,
        v_read,
        i_cr,
        i_mtj: Amps(i_mtj),
        rdm_percent: rdm(i_cr, Amps(i_mtj))?,
    })
}

fn read_disturb(cfg: &ExperimentConfig, stamp: &Stamp, w: &mut Writer) -> Result<String> {
    let res = cfg.kinds.par_iter().map(|&k| rdm_kind(cfg, k)).collect::<Result<Vec<_>>>()?;
    let rows: Vec<Vec<String>> = res
        .iter()
        .map(|r| {
            vec![
                r.kind.name().into(),
                num(r.v_read.0),
                num(r.i_cr.0),
                num(r.i_mtj.0),
                num(r.rdm_percent),
            ]
        })
        .collect();
    w.json("rdm.json", stamp, &res)?;
    w.csv("rdm.csv", stamp, &["kind", "v_read", "i_cr", "i_mtj", "rdm_percent"], &rows)?;
    let lines: Vec<String> = res.iter().map(|r| format!("{} {:.3}%", r.kind, r.rdm_percent)).collect();
    Ok(format!("read-disturb margin: {}", lines.join(", ")))
}

/// Parallel bitcell Monte Carlo; identical to the sequential run.
pub fn bitcell_mc_par(cfg: &ExperimentConfig, kind: BitcellKind, state: CellState, trials: usize) -> Result<McSummary> {
    let spec = cfg.variation_spec();
    let tv = TerminalVoltages::read(cfg.crossbar_for(kind).v_read, cfg.device.v_dd);
    tv.validate(cfg.device.v_dd)?;
    state.check(kind)?;
    let outcomes = (0..trials as u64)
        .into_par_iter()
        .map(|t| bitcell_trial(kind, state, &tv, &cfg.device, &spec, t))
        .collect();
    Ok(summarize_trials(kind, state, outcomes)?)
}

#[derive(Clone, Debug, Serialize)]
pub struct BranchStats {
    pub branch: &'static str,
    pub junction: MtjState,
    pub mean: Amps,
    pub std: Amps,
    pub sigma_fraction: f64,
    /// Whether this is the conducting (higher current) branch of the cell.
    pub on: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct McResult {
    pub kind: BitcellKind,
    pub state: CellState,
    pub trials: usize,
    pub failed: usize,
    pub branches: Vec<BranchStats>,
}

/// Spreads of the cells behind the per-state current sigmas: P and AP
/// 1T-1MTJ cells, and the (P, AP) cell of two-MTJ kinds.
pub fn montecarlo_kind(cfg: &ExperimentConfig, kind: BitcellKind, trials: usize) -> Result<(BranchSigmas, Vec<McResult>)> {
    if kind == BitcellKind::OneT1Mtj {
        let mut res = Vec::new();
        for m in [MtjState::P, MtjState::Ap] {
            let s = bitcell_mc_par(cfg, kind, CellState::Single(m), trials)?;
            res.push(McResult {
                kind,
                state: s.state,
                trials: s.trials,
                failed: s.failed,
                branches: vec![BranchStats {
                    branch: "left",
                    junction: m,
                    mean: s.mean[0],
                    std: s.std[0],
                    sigma_fraction: s.sigma_fraction[0],
                    on: m == MtjState::P,
                }],
            });
        }
        let sig = BranchSigmas {
            p: res[0].branches[0].sigma_fraction,
            ap: res[1].branches[0].sigma_fraction,
        };
        return Ok((sig, res));
    }
    let state = CellState::pair(MtjState::P);
    let s = bitcell_mc_par(cfg, kind, state, trials)?;
    let on = if s.mean[0].0.abs() >= s.mean[1].0.abs() { 0 } else { 1 };
    let branches = (0..2)
        .map(|b| BranchStats {
            branch: ["left", "right"][b],
            junction: if b == 0 { MtjState::P } else { MtjState::Ap },
            mean: s.mean[b],
            std: s.std[b],
            sigma_fraction: s.sigma_fraction[b],
            on: b == on,
        })
        .collect();
    let sig = BranchSigmas {
        p: s.sigma_fraction[0],
        ap: s.sigma_fraction[1],
    };
    Ok((
        sig,
        vec![McResult {
            kind,
            state,
            trials: s.trials,
            failed: s.failed,
            branches,
        }],
    ))
}

fn montecarlo(cfg: &ExperimentConfig, stamp: &Stamp, w: &mut Writer) -> Result<String> {
    let mut res = Vec::new();
    for &kind in &cfg.kinds {
        res.extend(montecarlo_kind(cfg, kind, cfg.montecarlo.trials)?.1);
    }
    let mut rows = Vec::new();
    for r in &res {
        for b in &r.branches {
            rows.push(vec![
                r.kind.name().into(),
                r.state.to_string(),
                b.branch.into(),
                b.junction.to_string(),
                if b.on { "on" } else { "off" }.into(),
                r.trials.to_string(),
                r.failed.to_string(),
                num(b.mean.0),
                num(b.std.0),
                num(b.sigma_fraction),
            ]);
        }
    }
    w.json("montecarlo.json", stamp, &res)?;
    w.csv(
        "montecarlo.csv",
        stamp,
        &["kind", "state", "branch", "junction", "role", "trials", "failed", "mean", "std", "sigma_fraction"],
        &rows,
    )?;
    let lines: Vec<String> = res
        .iter()
        .flat_map(|r| {
            r.branches
                .iter()
                .map(move |b| format!("{} {} {:.3}", r.kind, if b.on { "on" } else { "off" }, b.sigma_fraction))
        })
        .collect();
    Ok(format!("sigma/mean: {}", lines.join(", ")))
}

#[derive(Clone, Debug, Serialize)]
pub struct InferKind {
    pub kind: BitcellKind,
    pub sigmas: BranchSigmas,
    /// Calibrated reference step per layer, in unit-cell currents.
    pub adc_steps: Vec<f64>,
    pub runs: Vec<InferenceReport>,
}

#[derive(Clone, Debug, Serialize)]
pub struct InferResult {
    pub network: String,
    pub pwa: usize,
    pub samples: usize,
    pub reference_accuracy: f64,
    pub kinds: Vec<InferKind>,
}

/// Evaluate the dataset in parallel and tally in sample order.
pub fn run_dataset(chip: &Chip, net: &QuantNetwork, data: &[Sample]) -> Result<InferenceReport> {
    if data.is_empty() {
        return Err(SimError::config("inference dataset is empty"));
    }
    if let Some(s) = data.iter().find(|s| s.label >= net.classes()) {
        return Err(SimError::config(format!("label {} outside the {} classes", s.label, net.classes())));
    }
    let fw = data
        .par_iter()
        .map(|s| chip.forward(net, &s.pixels))
        .collect::<xbar_core::Result<Vec<_>>>()?;
    let mut t = Tally::default();
    for (f, s) in fw.iter().zip(data) {
        t.add(f, s.label);
    }
    Ok(t.finish(chip.options().fidelity, chip.options().seed))
}

pub struct InferInputs {
    pub net: QuantNetwork,
    pub data: Vec<Sample>,
    pub calib: Vec<Sample>,
}

pub fn infer_inputs(cfg: &ExperimentConfig) -> Result<InferInputs> {
    let inf = &cfg.inference;
    let net = load_network(&inf.network)?;
    let mut data = load_dataset(&inf.dataset)?;
    if let Some(n) = inf.limit {
        data.truncate(n);
    }
    let mut calib = load_dataset(&inf.calibration)?;
    calib.truncate(inf.calibration_samples);
    for s in data.iter().chain(&calib) {
        if s.pixels.len() != net.input_len() {
            return Err(SimError::config(format!(
                "dataset rows hold {} pixels, the network takes {}",
                s.pixels.len(),
                net.input_len()
            )));
        }
    }
    if calib.is_empty() {
        return Err(SimError::config("calibration set is empty"));
    }
    Ok(InferInputs { net, data, calib })
}

fn compile(cfg: &ExperimentConfig, net: &QuantNetwork, array: &CrossbarConfig) -> Result<MappingPlan> {
    let mut plan = compile_network(net, array, cfg.inference.pwa)?;
    for l in &mut plan.layers {
        l.scheme.subtractor_gain = cfg.scheme.subtractor_gain;
    }
    Ok(plan)
}

pub fn infer_kind(cfg: &ExperimentConfig, kind: BitcellKind, luts: Arc<LutSet>, io: &InferInputs) -> Result<InferKind> {
    let array = cfg.crossbar_for(kind);
    let plan = compile(cfg, &io.net, &array)?;
    let sigmas = match cfg.inference.branch_sigmas.get(&kind) {
        Some(s) => *s,
        None => montecarlo_kind(cfg, kind, cfg.inference.sigma_trials)?.0,
    };
    let mut calibrated: Option<MappingPlan> = None;
    let mut runs = Vec::new();
    for &fid in &cfg.inference.fidelities {
        let chip = match fid {
            Fidelity::Ideal => Chip::new(plan.clone(), luts.clone(), &array, ChipOptions::new(fid, cfg.seed))?,
            _ => {
                if calibrated.is_none() {
                    let mut c = Chip::new(
                        plan.clone(),
                        luts.clone(),
                        &array,
                        ChipOptions::new(Fidelity::NonIdeal, cfg.seed),
                    )?;
                    let a = &cfg.adc;
                    c.calibrate(&io.net, &io.calib, a.lo, a.hi, a.steps, a.loss)?;
                    calibrated = Some(c.plan().clone());
                }
                let mut o = ChipOptions::new(fid, cfg.seed);
                if fid == Fidelity::NonIdealVariation {
                    o.sigmas = sigmas;
                }
                Chip::new(calibrated.clone().unwrap(), luts.clone(), &array, o)?
            }
        };
        runs.push(run_dataset(&chip, &io.net, &io.data)?);
    }
    let adc_steps = calibrated
        .as_ref()
        .unwrap_or(&plan)
        .layers
        .iter()
        .map(|l| l.adc.i_quant.0)
        .collect();
    Ok(InferKind {
        kind,
        sigmas,
        adc_steps,
        runs,
    })
}

fn infer(cfg: &ExperimentConfig, stamp: &Stamp, w: &mut Writer) -> Result<String> {
    let io = infer_inputs(cfg)?;
    let luts = cfg
        .kinds
        .iter()
        .map(|&k| lutfile::load(cfg, k))
        .collect::<Result<Vec<_>>>()?;
    let reference = reference_accuracy(&io.net, &io.data)?;
    let mut kinds = Vec::new();
    for (&kind, l) in cfg.kinds.iter().zip(luts) {
        kinds.push(infer_kind(cfg, kind, l, &io)?);
    }
    let res = InferResult {
        network: cfg
            .inference
            .network
            .file_name()
            .map_or(String::new(), |n| n.to_string_lossy().into_owned()),
        pwa: cfg.inference.pwa,
        samples: io.data.len(),
        reference_accuracy: reference,
        kinds,
    };
    let mut rows = Vec::new();
    for k in &res.kinds {
        for r in &k.runs {
            rows.push(vec![
                k.kind.name().into(),
                r.fidelity.name().into(),
                r.samples.to_string(),
                r.correct.to_string(),
                num(r.accuracy),
            ]);
        }
    }
    w.json("infer.json", stamp, &res)?;
    w.csv("infer.csv", stamp, &["kind", "fidelity", "samples", "correct", "accuracy"], &rows)?;
    let lines: Vec<String> = res
        .kinds
        .iter()
        .flat_map(|k| {
            k.runs
                .iter()
                .map(move |r| format!("{} {} {:.2}%", k.kind, r.fidelity.name(), 100.0 * r.accuracy))
        })
        .collect();
    Ok(format!("reference {:.2}%; {}", 100.0 * reference, lines.join(", ")))
}

fn write_sim(cfg: &ExperimentConfig, stamp: &Stamp, w: &mut Writer) -> Result<String> {
    let res = cfg
        .kinds
        .par_iter()
        .map(|&k| write_cycle_cost(k, &cfg.write, &cfg.device))
        .collect::<xbar_core::Result<Vec<WriteCost>>>()?;
    let rows: Vec<Vec<String>> = res
        .iter()
        .map(|r| {
            vec![
                r.kind.name().into(),
                r.cycles.len().to_string(),
                num(r.latency.0),
                num(r.energy.0),
                num(r.latency_ratio),
                num(r.energy_ratio),
            ]
        })
        .collect();
    w.json("write-sim.json", stamp, &res)?;
    w.csv(
        "write-sim.csv",
        stamp,
        &["kind", "cycles", "latency", "energy", "latency_ratio", "energy_ratio"],
        &rows,
    )?;
    let lines: Vec<String> = res
        .iter()
        .map(|r| format!("{} {:.2}x latency {:.2}x energy", r.kind, r.latency_ratio, r.energy_ratio))
        .collect();
    Ok(format!("write cost vs 1T-1MTJ: {}", lines.join(", ")))
}
