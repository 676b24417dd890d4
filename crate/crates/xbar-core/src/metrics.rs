//! Sense margin, read-disturb margin and the sampled worst-case SM search.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use rand_core::RngCore;

use crate::crossbar::{CrossbarInstance, IterOptions};
use crate::error::{Error, Result};
use crate::imc::{array_states, ideal_code, pwa_groups, run_imc_group, ImcMode, ImcOperation, ImcScheme};
use crate::units::Amps;

/// Analog output currents grouped by the ideal output state.
#[derive(Clone, Debug, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct OutputStateHistogram {
    bins: BTreeMap<i64, Vec<f64>>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StateSummary {
    pub state: i64,
    pub count: usize,
    pub min: Amps,
    pub max: Amps,
    pub mean: Amps,
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MarginEntry {
    /// Upper state of the neighbouring pair.
    pub state: i64,
    pub margin: Amps,
}

impl OutputStateHistogram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, state: i64, current: f64) {
        self.bins.entry(state).or_default().push(current);
    }

    pub fn merge(&mut self, other: OutputStateHistogram) {
        for (s, mut v) in other.bins {
            self.bins.entry(s).or_default().append(&mut v);
        }
    }

    pub fn is_empty(&self) -> bool {
        self.bins.is_empty()
    }

    pub fn len(&self) -> usize {
        self.bins.values().map(Vec::len).sum()
    }

    pub fn states(&self) -> impl Iterator<Item = i64> + '_ {
        self.bins.keys().copied()
    }

    pub fn currents(&self, state: i64) -> Option<&[f64]> {
        self.bins.get(&state).map(Vec::as_slice)
    }

    pub fn summary(&self) -> Vec<StateSummary> {
        self.bins
            .iter()
            .map(|(&state, v)| {
                let (lo, hi) = min_max(v);
                StateSummary {
                    state,
                    count: v.len(),
                    min: Amps(lo),
                    max: Amps(hi),
                    mean: Amps(v.iter().sum::<f64>() / v.len() as f64),
                }
            })
            .collect()
    }

    /// Margins of every neighbouring pair of observed states.
    pub fn margins(&self) -> Vec<MarginEntry> {
        self.bins
            .keys()
            .filter(|&&a| self.bins.contains_key(&(a - 1)))
            .map(|&a| MarginEntry {
                state: a,
                margin: sense_margin(self, a).expect("both states present"),
            })
            .collect()
    }

    /// Smallest neighbouring-pair margin.
    pub fn worst(&self) -> Option<MarginEntry> {
        self.margins()
            .into_iter()
            .min_by(|a, b| a.margin.0.total_cmp(&b.margin.0))
    }
}

fn min_max(v: &[f64]) -> (f64, f64) {
    v.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)))
}

/// (min of state a - max of state a-1) / 2. Negative when the states overlap.
pub fn sense_margin(h: &OutputStateHistogram, a: i64) -> Result<Amps> {
    let upper = h.currents(a).ok_or(Error::Domain {
        what: "output state",
        value: a,
    })?;
    let lower = h.currents(a - 1).ok_or(Error::Domain {
        what: "output state",
        value: a - 1,
    })?;
    Ok(Amps((min_max(upper).0 - min_max(lower).1) / 2.0))
}

/// Read-disturb margin in percent.
pub fn rdm(i_cr: Amps, i_mtj: Amps) -> Result<f64> {
    if !(i_cr.0 > 0.0 && i_cr.0.is_finite()) {
        return Err(Error::param("i_cr", "must be finite and positive"));
    }
    Ok((i_cr.0 - i_mtj.0.abs()) / i_cr.0 * 100.0)
}

/// One array solve: a PWA group, inputs for its rows and a full weight
/// matrix. Every data column is one input/weight combination.
#[derive(Clone, Debug, PartialEq)]
pub struct SmTrial {
    pub group: usize,
    /// In' per row; rows outside the group are zero.
    pub inputs: Vec<u8>,
    /// Logical weights, rows x data columns.
    pub weights: Vec<i8>,
}

/// Uniformly sampled trials covering at least `combos` column combinations.
pub fn sample_trials(
    rows: usize,
    cols: usize,
    pwa: usize,
    mode: ImcMode,
    combos: usize,
    rng: &mut impl RngCore,
) -> Result<Vec<SmTrial>> {
    if combos == 0 || cols == 0 {
        return Err(Error::Empty("combination set"));
    }
    let groups = pwa_groups(rows, pwa)?;
    let n = combos.div_ceil(cols);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let group = (rng.next_u64() % groups.len() as u64) as usize;
        let mut inputs = alloc::vec![0u8; rows];
        for r in groups[group].clone() {
            inputs[r] = (rng.next_u32() & 1) as u8;
        }
        let weights = (0..rows * cols)
            .map(|_| {
                let b = (rng.next_u32() & 1) as i8;
                match mode {
                    ImcMode::Xnor => 2 * b - 1,
                    ImcMode::And => b,
                }
            })
            .collect();
        out.push(SmTrial { group, inputs, weights });
    }
    Ok(out)
}

/// Run one trial and bin each data column's current by its ideal state.
pub fn evaluate_trial(
    inst: &mut CrossbarInstance,
    trial: &SmTrial,
    scheme: &ImcScheme,
    pwa: usize,
    opts: &IterOptions,
    hist: &mut OutputStateHistogram,
) -> Result<()> {
    let cfg = *inst.config();
    let data_cols = if scheme.needs_dummy(cfg.kind) { cfg.cols - 1 } else { cfg.cols };
    let states = array_states(scheme, cfg.kind, cfg.rows, data_cols, &trial.weights)?;
    inst.set_states(states)?;
    let op = ImcOperation::new(trial.inputs.clone(), pwa);
    let currents = run_imc_group(inst, &op, scheme, opts, trial.group)?;
    let mut w_col = alloc::vec![0i8; cfg.rows];
    for (c, &i) in currents.iter().enumerate() {
        for (r, w) in w_col.iter_mut().enumerate() {
            *w = trial.weights[r * data_cols + c];
        }
        hist.insert(ideal_code(scheme, cfg.kind, &trial.inputs, &w_col), i);
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct WorstCaseSm {
    pub worst: MarginEntry,
    pub histogram: OutputStateHistogram,
}

/// Worst sense margin over all trials. Columns share one histogram, so the
/// result is a lower bound on any single column's margin.
pub fn worst_case_sm(
    inst: &CrossbarInstance,
    scheme: &ImcScheme,
    pwa: usize,
    trials: &[SmTrial],
    opts: &IterOptions,
) -> Result<WorstCaseSm> {
    if trials.is_empty() {
        return Err(Error::Empty("combination set"));
    }
    let mut inst = inst.clone();
    let mut hist = OutputStateHistogram::new();
    for t in trials {
        evaluate_trial(&mut inst, t, scheme, pwa, opts, &mut hist)?;
    }
    finish_worst_case(hist)
}

pub fn finish_worst_case(histogram: OutputStateHistogram) -> Result<WorstCaseSm> {
    let worst = histogram.worst().ok_or(Error::Empty("neighbouring output states"))?;
    Ok(WorstCaseSm { worst, histogram })
}
