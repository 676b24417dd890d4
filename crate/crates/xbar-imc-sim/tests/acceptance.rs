//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero when any criterion fails.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use xbar_core::adc::AdcConfig;
use xbar_core::crossbar::{back_solve_r_wire, build_array, worst_case_vread, CrossbarConfig, IterOptions};
use xbar_core::imc::{
    array_states, digitize, ideal_group_output, run_imc_column_pass, ImcMode, ImcOperation, ImcScheme,
};
use xbar_core::inference::{unit_current, Fidelity};
use xbar_core::lut::LutSet;
use xbar_core::metrics::rdm;
use xbar_core::write::{back_solve_polarization, critical_current, dynamic_critical_current, write_cycle_cost};
use xbar_core::{Amps, BitcellKind, CellState, MtjState, Ohms, Volts};
use xbar_imc_sim::commands::{infer_inputs, infer_kind, montecarlo_kind, sm_kind, sweep_kind};
use xbar_imc_sim::config::{ExperimentConfig, ModeName};
use xbar_imc_sim::lutfile::LutRecipe;

use BitcellKind::{OneT1Mtj, StrideI, StrideII, TwoT2Mtj};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").canonicalize().unwrap()
}

fn base_config() -> ExperimentConfig {
    let mut c = ExperimentConfig::default();
    c.resolve_paths(&root());
    c
}

/// Tables at the production grid pitch, built once per kind.
struct Tables(BTreeMap<BitcellKind, Arc<LutSet>>);

impl Tables {
    fn new(cfg: &ExperimentConfig) -> Self {
        Self(
            BitcellKind::ALL
                .iter()
                .map(|&k| (k, Arc::new(LutRecipe::from_config(cfg, k).unwrap().build().unwrap())))
                .collect(),
        )
    }

    fn get(&self, k: BitcellKind) -> Arc<LutSet> {
        self.0[&k].clone()
    }
}

fn c1_encoding(t: &Tables) -> Verdict {
    let rows = 8;
    let opts = IterOptions::default();
    let mut checked = 0u64;
    let mut wrong = 0u64;
    for kind in BitcellKind::ALL {
        for mode in [ImcMode::Xnor, ImcMode::And] {
            let scheme = ImcScheme::new(mode);
            // one column per weight pattern
            let w: Vec<i8> = (0..rows * 256)
                .map(|k| {
                    let (r, c) = (k / 256, k % 256);
                    let b = ((c >> r) & 1) as i8;
                    if mode == ImcMode::Xnor { 2 * b - 1 } else { b }
                })
                .collect();
            let base = CrossbarConfig::for_kind(kind).ideal();
            let states = array_states(&scheme, kind, rows, 256, &w).unwrap();
            let cfg = CrossbarConfig {
                rows,
                cols: states.len() / rows,
                ..base
            };
            let luts = t.get(kind);
            let inst = build_array(cfg, states, luts.clone()).unwrap();
            let unit = unit_current(&luts, &base, &scheme, &opts).unwrap();
            let adc = AdcConfig::for_pwa(rows, unit, scheme.signed_output(kind)).unwrap();
            for x in 0..256usize {
                let inputs: Vec<u8> = (0..rows).map(|r| ((x >> r) & 1) as u8).collect();
                let op = ImcOperation::new(inputs.clone(), rows).with_weight_sums(&w, 256).unwrap();
                let mut res = run_imc_column_pass(&inst, &op, &scheme, &opts).unwrap();
                digitize(&mut res, &op, &scheme, kind, &adc).unwrap();
                for c in 0..256 {
                    let want = ideal_group_output(mode, &inputs, (0..rows).map(|r| w[r * 256 + c]));
                    checked += 1;
                    if res.outputs[c] != want {
                        wrong += 1;
                    }
                }
            }
        }
    }
    verdict(wrong == 0, format!("{checked} outputs over 4 kinds x 2 schemes, {wrong} wrong"))
}

/// Column currents below this fraction of the instance's largest column
/// current are compared against the floor instead of their own magnitude.
const CURRENT_FLOOR: f64 = 0.01;

fn c2_solver(t: &Tables) -> Verdict {
    let params = base_config().device;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let unif = |rng: &mut ChaCha8Rng| (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
    let mut worst: f64 = 0.0;
    let mut where_ = String::new();
    for n in 0..200 {
        let kind = BitcellKind::ALL[(rng.next_u32() % 4) as usize];
        let rows = 1 + (rng.next_u32() % 16) as usize;
        let cols = 1 + (rng.next_u32() as usize % (64 / rows));
        let base = CrossbarConfig::for_kind(kind);
        let cfg = CrossbarConfig {
            rows,
            cols,
            r_driver: Ohms(5.0 * base.r_driver.0 * unif(&mut rng)),
            r_wire: Ohms(5.0 * base.r_wire.0 * unif(&mut rng)),
            ..base
        };
        let states: Vec<CellState> = (0..rows * cols)
            .map(|_| {
                let m = if rng.next_u32() & 1 == 1 { MtjState::P } else { MtjState::Ap };
                if kind == OneT1Mtj { CellState::Single(m) } else { CellState::pair(m) }
            })
            .collect();
        let wl: Vec<bool> = (0..rows).map(|_| rng.next_u32() & 1 == 1).collect();
        let inst = build_array(cfg, states, t.get(kind)).unwrap();
        let a = inst.solve_iterative(&wl, &IterOptions::default()).unwrap();
        let b = inst.solve_dense_oracle(&wl, &params).unwrap();
        let lines = |c: &xbar_core::crossbar::ColumnCurrents| [c.i_bl.0, c.i_blb.0, c.i_sl.0, c.i_slb.0];
        let scale = b
            .columns
            .iter()
            .flat_map(|c| lines(c).map(f64::abs))
            .fold(0.0, f64::max);
        for (x, y) in a.columns.iter().zip(&b.columns) {
            for (p, q) in lines(x).iter().zip(lines(y)) {
                let denom = q.abs().max(CURRENT_FLOOR * scale);
                if denom == 0.0 {
                    continue;
                }
                let e = (p - q).abs() / denom;
                if e > worst {
                    worst = e;
                    where_ = format!("instance {n} ({kind} {rows}x{cols})");
                }
            }
        }
    }
    verdict(
        worst < 3e-3,
        format!("max relative column-current error {:.4}% at {where_}", 100.0 * worst),
    )
}

fn c3_rdm() -> Verdict {
    let a = rdm(Amps(75.96e-6), Amps(21e-6)).unwrap();
    let b = rdm(Amps(75.96e-6), Amps(2.75e-9)).unwrap();
    let cfg = base_config();
    let model = xbar_imc_sim::commands::rdm_kind(&cfg, OneT1Mtj).unwrap();
    let ok = (a - 72.35).abs() < 0.005 && (b - 99.996).abs() < 0.005;
    verdict(
        ok,
        format!(
            "{a:.4}% and {b:.4}%; model 1T-1MTJ at its read point {:.2}%",
            model.rdm_percent
        ),
    )
}

fn c4_eq5() -> Verdict {
    let cfg = CrossbarConfig::for_kind(StrideI);
    let ih = Amps(22.3e-6);
    let rw = back_solve_r_wire(&cfg, 8, ih, Volts(0.61)).unwrap();
    let sub = worst_case_vread(&CrossbarConfig { r_wire: rw, ..cfg }, 8, ih).unwrap();
    let dflt = worst_case_vread(&cfg, 8, ih).unwrap();
    let ok = (sub.0 - 0.61).abs() < 1e-9 && (dflt.0 - 0.61).abs() <= 0.005;
    verdict(
        ok,
        format!(
            "back-solved R_w {:.3} ohm substitutes to {:.4} V; configured R_w {} gives {:.4} V",
            rw.0, sub.0, cfg.r_wire, dflt.0
        ),
    )
}

fn c5_distinguishability() -> Verdict {
    let cfg = base_config();
    let base = sweep_kind(&cfg, TwoT2Mtj).unwrap().peak.ratio;
    let mut ok = true;
    let mut parts = vec![format!("2T-2MTJ peak {base:.2}")];
    for kind in [StrideI, StrideII] {
        let s = sweep_kind(&cfg, kind).unwrap();
        let interior = s.points.first().unwrap().ratio < s.peak.ratio && s.points.last().unwrap().ratio < s.peak.ratio;
        let good = interior && s.peak.ratio >= 100.0 && s.peak.ratio >= 20.0 * base;
        ok &= good;
        parts.push(format!(
            "{kind} peak {:.0} at {:.3} V (interior {interior}, {:.0}x)",
            s.peak.ratio,
            s.peak.v_read.0,
            s.peak.ratio / base
        ));
    }
    verdict(ok, parts.join("; "))
}

fn c6_sm(t: &Tables) -> Verdict {
    let cfg = base_config();
    let mut sm = BTreeMap::new();
    for kind in BitcellKind::ALL {
        for mode in [ModeName::And, ModeName::Xnor] {
            for pwa in [8, 16] {
                let r = sm_kind(&cfg, kind, t.get(kind), mode, pwa).unwrap();
                assert!(r.combos >= 8000);
                sm.insert((kind, mode, pwa), r.worst_margin.0 * 1e6);
            }
        }
    }
    let g = |k, m, p| sm[&(k, m, p)];
    let mut ok = true;
    for s in [StrideI, StrideII] {
        ok &= g(s, ModeName::And, 8) > g(OneT1Mtj, ModeName::And, 8);
        ok &= g(s, ModeName::Xnor, 8) > g(TwoT2Mtj, ModeName::Xnor, 8);
        for m in [ModeName::And, ModeName::Xnor] {
            ok &= g(s, m, 16) > 0.0;
        }
    }
    for b in [OneT1Mtj, TwoT2Mtj] {
        for m in [ModeName::And, ModeName::Xnor] {
            ok &= g(b, m, 16) < g(b, m, 8);
        }
    }
    let detail: Vec<String> = BitcellKind::ALL
        .iter()
        .map(|&k| {
            format!(
                "{k} AND {:.2}/{:.2} XNOR {:.2}/{:.2}",
                g(k, ModeName::And, 8),
                g(k, ModeName::And, 16),
                g(k, ModeName::Xnor, 8),
                g(k, ModeName::Xnor, 16)
            )
        })
        .collect();
    verdict(ok, format!("worst SM uA pwa8/pwa16: {}", detail.join("; ")))
}

fn c7_variation() -> Verdict {
    let cfg = base_config();
    let mut baseline_min = f64::INFINITY;
    for k in [OneT1Mtj, TwoT2Mtj] {
        for r in montecarlo_kind(&cfg, k, cfg.montecarlo.trials).unwrap().1 {
            for b in &r.branches {
                baseline_min = baseline_min.min(b.sigma_fraction);
            }
        }
    }
    let mut ok = true;
    let mut parts = vec![format!("baseline min sigma {baseline_min:.3}")];
    for k in [StrideI, StrideII] {
        let r = &montecarlo_kind(&cfg, k, cfg.montecarlo.trials).unwrap().1[0];
        let on = r.branches.iter().find(|b| b.on).unwrap();
        let off = r.branches.iter().find(|b| !b.on).unwrap();
        let off_hi = off.mean.0.abs() + 3.0 * off.std.0;
        let frac = off_hi / on.mean.0.abs();
        ok &= off.sigma_fraction > 0.5 && on.sigma_fraction < baseline_min + 0.05 && frac < 0.01;
        parts.push(format!(
            "{k} OFF {:.3} ON {:.3}, OFF+3sigma = {:.3}% of I_H",
            off.sigma_fraction,
            on.sigma_fraction,
            100.0 * frac
        ));
    }
    verdict(ok, parts.join("; "))
}

fn c8_inference(t: &Tables) -> Verdict {
    let mut ok = true;
    let mut parts = Vec::new();
    for net in ["bnn_digits", "int4_digits"] {
        let mut cfg = base_config();
        cfg.inference.network = root().join(format!("fixtures/{net}.json"));
        cfg.inference.fidelities = vec![Fidelity::Ideal, Fidelity::NonIdealVariation];
        cfg.inference.pwa = 16;
        let io = infer_inputs(&cfg).unwrap();
        let reference = xbar_core::inference::reference_accuracy(&io.net, &io.data).unwrap();
        let mut ideal = BTreeMap::new();
        let mut var = BTreeMap::new();
        for kind in BitcellKind::ALL {
            let r = infer_kind(&cfg, kind, t.get(kind), &io).unwrap();
            ideal.insert(kind, r.runs[0].accuracy);
            var.insert(kind, 100.0 * r.runs[1].accuracy);
        }
        let exact = ideal.values().all(|&a| a == reference);
        let best_base = var[&OneT1Mtj].max(var[&TwoT2Mtj]);
        let mut good = exact;
        for s in [StrideI, StrideII] {
            good &= var[&s] >= best_base + 5.0 && var[&s] >= 100.0 * reference - 3.0;
        }
        ok &= good;
        parts.push(format!(
            "{net}: {} ideal {:.2}% (exact {exact}), var 1T1 {:.2} 2T2 {:.2} S-I {:.2} S-II {:.2}",
            if good { "ok" } else { "miss" },
            100.0 * reference,
            var[&OneT1Mtj],
            var[&TwoT2Mtj],
            var[&StrideI],
            var[&StrideII]
        ));
    }
    verdict(ok, parts.join("; "))
}

fn c9_write() -> Verdict {
    let cfg = base_config();
    let p = &cfg.device;
    let ic = critical_current(p).0;
    let pol = back_solve_polarization(p, Amps(75.96e-6)).unwrap();
    let q = xbar_core::DeviceParams {
        spin_polarization: pol,
        ..p.clone()
    };
    let ic_q = critical_current(&q).0;
    let dyn_ic = dynamic_critical_current(p, MtjState::P, &cfg.write.llgs, 12).unwrap().0;
    let s1 = write_cycle_cost(StrideI, &cfg.write, p).unwrap();
    let s2 = write_cycle_cost(StrideII, &cfg.write, p).unwrap();
    let ok = (ic / 75.96e-6 - 1.0).abs() <= 0.1
        && (ic_q / 75.96e-6 - 1.0).abs() < 1e-9
        && (dyn_ic / ic - 1.0).abs() <= 0.1
        && (s1.latency_ratio / 1.44 - 1.0).abs() <= 0.2
        && (s1.energy_ratio / 1.39 - 1.0).abs() <= 0.2
        && s2.latency_ratio > s1.latency_ratio;
    verdict(
        ok,
        format!(
            "I_c {:.2} uA (polarization {pol:.4} gives {:.2}); dynamic {:.2} uA; STRIDe-I {:.2}x latency {:.2}x energy; STRIDe-II latency {:.2}x",
            ic * 1e6,
            ic_q * 1e6,
            dyn_ic * 1e6,
            s1.latency_ratio,
            s1.energy_ratio,
            s2.latency_ratio
        ),
    )
}

fn c10_determinism() -> Verdict {
    let bin = env!("CARGO_BIN_EXE_xbar-imc-sim");
    let dir = tempfile::tempdir().unwrap();
    let r = root();
    let cfg = dir.path().join("exp.toml");
    fs::write(
        &cfg,
        format!(
            r#"
seed = 7
[sm]
combos = 512
[montecarlo]
trials = 200
[inference]
network = "{}"
dataset = "{}"
calibration = "{}"
limit = 40
sigma_trials = 200
"#,
            r.join("fixtures/bnn_digits.json").display(),
            r.join("fixtures/digits_test.csv").display(),
            r.join("fixtures/digits_calib.csv").display()
        ),
    )
    .unwrap();
    let cmds = ["gen-lut", "sweep-vread", "sm", "rdm", "montecarlo", "infer", "write-sim"];
    let mut runs = Vec::new();
    for (k, workers) in ["1", "0"].iter().enumerate() {
        let out = dir.path().join(format!("run{k}"));
        for c in cmds {
            let mut cmd = Command::new(bin);
            cmd.arg(c).arg("--config").arg(&cfg).args(["--workers", workers, "--out"]).arg(&out);
            if c == "gen-lut" {
                cmd.arg("--force");
            }
            let o = cmd.output().unwrap();
            if !o.status.success() {
                return verdict(false, format!("{c} failed: {}", String::from_utf8_lossy(&o.stderr)));
            }
        }
        let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(&out)
            .unwrap()
            .map(|e| {
                let p = e.unwrap().path();
                (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap())
            })
            .collect();
        for e in fs::read_dir(dir.path().join("luts")).unwrap() {
            let p = e.unwrap().path();
            files.push((p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()));
        }
        files.sort();
        runs.push(files);
    }
    let same = runs[0] == runs[1];
    let diff: Vec<&str> = runs[0]
        .iter()
        .zip(&runs[1])
        .filter(|(a, b)| a != b)
        .map(|(a, _)| a.0.as_str())
        .collect();
    verdict(
        same && runs[0].len() == 19,
        format!("{} files from {} pipelines identical across two runs; differing: {diff:?}", runs[0].len(), cmds.len()),
    )
}

fn main() {
    let t0 = Instant::now();
    let tables = Tables::new(&base_config());
    println!("tables built in {:.1}s", t0.elapsed().as_secs_f64());
    let criteria: Vec<(&str, Option<Duration>, Box<dyn Fn() -> Verdict + '_>)> = vec![
        ("encoding exactness", Some(Duration::from_secs(60)), Box::new(|| c1_encoding(&tables))),
        ("solver oracle equivalence", Some(Duration::from_secs(300)), Box::new(|| c2_solver(&tables))),
        ("RDM formula", None, Box::new(c3_rdm)),
        ("worst-case read voltage", None, Box::new(c4_eq5)),
        ("distinguishability", None, Box::new(c5_distinguishability)),
        ("SM ordering", Some(Duration::from_secs(1800)), Box::new(|| c6_sm(&tables))),
        ("variation ordering", None, Box::new(c7_variation)),
        ("inference ordering", Some(Duration::from_secs(1200)), Box::new(|| c8_inference(&tables))),
        ("write dynamics", None, Box::new(c9_write)),
        ("determinism", None, Box::new(c10_determinism)),
    ];
    let mut failed = 0;
    for (i, (name, budget, f)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let mut v = f();
        let el = t.elapsed();
        if let Some(b) = budget {
            if el > *b {
                v.pass = false;
                v.detail.push_str(&format!("; over the {}s budget", b.as_secs()));
            }
        }
        if !v.pass {
            failed += 1;
        }
        println!(
            "criterion {:>2} {}: {} [{:.1}s] {}",
            i + 1,
            name,
            if v.pass { "PASS" } else { "FAIL" },
            el.as_secs_f64(),
            v.detail
        );
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
