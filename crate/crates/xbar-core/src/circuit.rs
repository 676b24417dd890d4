//! Nodal analysis of small nonlinear networks.
//!
//! Every free node carries a grounded capacitor during a pseudo-transient
//! continuation that starts from fully discharged nodes, which picks the same
//! latch state a real power-up would. A Newton polish then drives the KCL
//! residual below tolerance.

use alloc::vec;
use alloc::vec::Vec;

use crate::device::Fet;
use crate::error::{Error, Result};
use crate::linalg::BandMatrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ElementId(usize);

#[derive(Clone, Copy, Debug, PartialEq)]
enum Terminal {
    Free(usize),
    Fixed(f64),
}

/// MTJ whose conductance interpolates between P and AP with the cosine of the
/// free-layer angle. With `v_half` set, the AP conductance rises with bias as
/// TMR(V) = TMR / (1 + (V / v_half)^2).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MtjElement {
    pub r_p: f64,
    pub tmr: f64,
    pub cos_theta: f64,
    pub v_half: Option<f64>,
}

impl MtjElement {
    pub fn fixed(r: f64) -> Self {
        Self {
            r_p: r,
            tmr: 0.0,
            cos_theta: 1.0,
            v_half: None,
        }
    }

    /// Current from the pinned-layer terminal to the free-layer terminal and
    /// its derivative with respect to the voltage across the junction.
    #[inline]
    pub fn current(&self, v: f64) -> (f64, f64) {
        let gp = 1.0 / self.r_p;
        let wp = 0.5 * (1.0 + self.cos_theta);
        let wap = 0.5 * (1.0 - self.cos_theta);
        match self.v_half {
            None => {
                let g = wp * gp + wap / (self.r_p * (1.0 + self.tmr));
                (g * v, g)
            }
            Some(vh) => {
                let x = v / vh;
                let s = 1.0 + x * x;
                let d = 1.0 + self.tmr / s;
                let gap = 1.0 / (self.r_p * d);
                let dd = -self.tmr * 2.0 * x / (s * s * vh);
                let dgap = -gap * dd / d;
                let g = wp * gp + wap * gap;
                (g * v, g + v * wap * dgap)
            }
        }
    }
}

#[derive(Clone, Copy, Debug)]
enum Element<N> {
    Conductor { a: N, b: N, g: f64 },
    Mtj { a: N, b: N, m: MtjElement },
    Fet { d: N, g: N, s: N, fet: Fet },
}

/// Incrementally assembled netlist. Zero-ohm resistors merge their nodes.
#[derive(Clone, Debug, Default)]
pub struct CircuitBuilder {
    parent: Vec<usize>,
    fixed: Vec<Option<f64>>,
    elements: Vec<Element<usize>>,
}

impl CircuitBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn node(&mut self) -> NodeId {
        let id = self.parent.len();
        self.parent.push(id);
        self.fixed.push(None);
        NodeId(id)
    }

    /// A node held at `v` by an ideal source.
    pub fn source(&mut self, v: f64) -> NodeId {
        let n = self.node();
        self.fixed[n.0] = Some(v);
        n
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let ra = self.find(a);
        let rb = self.find(b);
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }

    pub fn resistor(&mut self, a: NodeId, b: NodeId, ohms: f64) -> ElementId {
        if ohms == 0.0 {
            self.union(a.0, b.0);
            self.elements.push(Element::Conductor {
                a: a.0,
                b: b.0,
                g: 0.0,
            });
        } else {
            self.elements.push(Element::Conductor {
                a: a.0,
                b: b.0,
                g: 1.0 / ohms,
            });
        }
        ElementId(self.elements.len() - 1)
    }

    /// MTJ from pinned-layer node `pl` to free-layer node `fl`.
    pub fn mtj(&mut self, pl: NodeId, fl: NodeId, m: MtjElement) -> ElementId {
        self.elements.push(Element::Mtj { a: pl.0, b: fl.0, m });
        ElementId(self.elements.len() - 1)
    }

    pub fn fet(&mut self, d: NodeId, g: NodeId, s: NodeId, fet: Fet) -> ElementId {
        self.elements.push(Element::Fet {
            d: d.0,
            g: g.0,
            s: s.0,
            fet,
        });
        ElementId(self.elements.len() - 1)
    }

    pub fn build(mut self) -> Result<Circuit> {
        let count = self.parent.len();
        let mut class_fixed: Vec<Option<f64>> = vec![None; count];
        for i in 0..count {
            if let Some(v) = self.fixed[i] {
                let r = self.find(i);
                match class_fixed[r] {
                    Some(w) if w != v => {
                        return Err(Error::param(
                            "circuit",
                            "zero-ohm path shorts two different sources",
                        ))
                    }
                    _ => class_fixed[r] = Some(v),
                }
            }
        }
        let mut free_of_root: Vec<Option<usize>> = vec![None; count];
        let mut n = 0;
        let mut map = Vec::with_capacity(count);
        for i in 0..count {
            let r = self.find(i);
            let t = match class_fixed[r] {
                Some(v) => Terminal::Fixed(v),
                None => {
                    let idx = *free_of_root[r].get_or_insert_with(|| {
                        n += 1;
                        n - 1
                    });
                    Terminal::Free(idx)
                }
            };
            map.push(t);
        }
        let elements: Vec<Element<Terminal>> = self
            .elements
            .iter()
            .map(|e| match *e {
                Element::Conductor { a, b, g } => Element::Conductor {
                    a: map[a],
                    b: map[b],
                    g,
                },
                Element::Mtj { a, b, m } => Element::Mtj {
                    a: map[a],
                    b: map[b],
                    m,
                },
                Element::Fet { d, g, s, fet } => Element::Fet {
                    d: map[d],
                    g: map[g],
                    s: map[s],
                    fet,
                },
            })
            .collect();
        let mut bw = 0usize;
        for e in &elements {
            let ts: [Terminal; 3] = match *e {
                Element::Conductor { a, b, .. } | Element::Mtj { a, b, .. } => [a, b, b],
                Element::Fet { d, g, s, .. } => [d, g, s],
            };
            for x in ts {
                for y in ts {
                    if let (Terminal::Free(i), Terminal::Free(j)) = (x, y) {
                        bw = bw.max(i.abs_diff(j));
                    }
                }
            }
        }
        Ok(Circuit {
            n,
            map,
            elements,
            bw,
        })
    }
}

/// Residual below which a Newton iterate that no step can improve is taken
/// as converged, A.
const NOISE_FLOOR: f64 = 1e-10;

/// Solver knobs. Defaults follow the bitcell settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolveOptions {
    /// Largest tolerated net current at any node, A.
    pub tol: f64,
    pub max_newton: usize,
    /// Node capacitance used by the continuation, F.
    pub cap: f64,
    pub dt0: f64,
    pub dt_growth: f64,
    pub dt_max: f64,
    /// Newton step clamp, V.
    pub max_step: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            tol: 1e-13,
            max_newton: 200,
            cap: 1e-15,
            dt0: 1e-13,
            dt_growth: 3.0,
            dt_max: 1e-8,
            max_step: 0.1,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Circuit {
    n: usize,
    map: Vec<Terminal>,
    elements: Vec<Element<Terminal>>,
    bw: usize,
}

#[inline]
fn volt(t: Terminal, x: &[f64]) -> f64 {
    match t {
        Terminal::Free(i) => x[i],
        Terminal::Fixed(v) => v,
    }
}

#[inline]
fn stamp(f: &mut [f64], t: Terminal, i: f64) {
    if let Terminal::Free(k) = t {
        f[k] += i;
    }
}

#[inline]
fn jstamp(j: &mut BandMatrix, row: Terminal, col: Terminal, v: f64) {
    if let (Terminal::Free(r), Terminal::Free(c)) = (row, col) {
        j.add(r, c, v);
    }
}

struct Workspace {
    f: Vec<f64>,
    dx: Vec<f64>,
    trial: Vec<f64>,
    jac: BandMatrix,
}

enum Mode<'a> {
    Transient { c_dt: f64, prev: &'a [f64] },
    Static,
}

impl Circuit {
    /// Number of unknown node voltages.
    pub fn unknowns(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.bw
    }

    pub fn voltage(&self, x: &[f64], node: NodeId) -> f64 {
        volt(self.map[node.0], x)
    }

    /// Current through an element: pinned to free layer for MTJs, drain to
    /// source for transistors, first to second node for resistors.
    pub fn current(&self, x: &[f64], id: ElementId) -> f64 {
        match self.elements[id.0] {
            Element::Conductor { a, b, g } => g * (volt(a, x) - volt(b, x)),
            Element::Mtj { a, b, m } => m.current(volt(a, x) - volt(b, x)).0,
            Element::Fet { d, g, s, fet } => fet.current(volt(d, x), volt(g, x), volt(s, x)),
        }
    }

    /// Power dissipated in all elements.
    pub fn dissipation(&self, x: &[f64]) -> f64 {
        self.elements
            .iter()
            .map(|e| match *e {
                Element::Conductor { a, b, g } => {
                    let v = volt(a, x) - volt(b, x);
                    g * v * v
                }
                Element::Mtj { a, b, m } => {
                    let v = volt(a, x) - volt(b, x);
                    m.current(v).0 * v
                }
                Element::Fet { d, g, s, fet } => {
                    let (vd, vs) = (volt(d, x), volt(s, x));
                    fet.current(vd, volt(g, x), vs) * (vd - vs)
                }
            })
            .sum()
    }

    /// Update the free-layer angle of an MTJ element.
    pub fn set_mtj_cos(&mut self, id: ElementId, cos_theta: f64) {
        if let Element::Mtj { m, .. } = &mut self.elements[id.0] {
            m.cos_theta = cos_theta;
        }
    }

    fn assemble(&self, x: &[f64], f: &mut [f64], jac: Option<&mut BandMatrix>) {
        f.iter_mut().for_each(|v| *v = 0.0);
        match jac {
            None => {
                for e in &self.elements {
                    match *e {
                        Element::Conductor { a, b, g } => {
                            let i = g * (volt(a, x) - volt(b, x));
                            stamp(f, a, i);
                            stamp(f, b, -i);
                        }
                        Element::Mtj { a, b, m } => {
                            let i = m.current(volt(a, x) - volt(b, x)).0;
                            stamp(f, a, i);
                            stamp(f, b, -i);
                        }
                        Element::Fet { d, g, s, fet } => {
                            let i = fet.current(volt(d, x), volt(g, x), volt(s, x));
                            stamp(f, d, i);
                            stamp(f, s, -i);
                        }
                    }
                }
            }
            Some(j) => {
                j.clear();
                for e in &self.elements {
                    match *e {
                        Element::Conductor { a, b, g } => {
                            let i = g * (volt(a, x) - volt(b, x));
                            stamp(f, a, i);
                            stamp(f, b, -i);
                            jstamp(j, a, a, g);
                            jstamp(j, a, b, -g);
                            jstamp(j, b, a, -g);
                            jstamp(j, b, b, g);
                        }
                        Element::Mtj { a, b, m } => {
                            let (i, g) = m.current(volt(a, x) - volt(b, x));
                            stamp(f, a, i);
                            stamp(f, b, -i);
                            jstamp(j, a, a, g);
                            jstamp(j, a, b, -g);
                            jstamp(j, b, a, -g);
                            jstamp(j, b, b, g);
                        }
                        Element::Fet { d, g, s, fet } => {
                            let e = fet.eval(volt(d, x), volt(g, x), volt(s, x));
                            stamp(f, d, e.i);
                            stamp(f, s, -e.i);
                            jstamp(j, d, d, e.d_vd);
                            jstamp(j, d, g, e.d_vg);
                            jstamp(j, d, s, e.d_vs);
                            jstamp(j, s, d, -e.d_vd);
                            jstamp(j, s, g, -e.d_vg);
                            jstamp(j, s, s, -e.d_vs);
                        }
                    }
                }
            }
        }
    }

    /// Largest absolute net current over all free nodes.
    pub fn max_residual(&self, x: &[f64]) -> f64 {
        let mut f = vec![0.0; self.n];
        self.assemble(x, &mut f, None);
        f.iter().fold(0.0f64, |m, v| m.max(libm::fabs(*v)))
    }

    fn workspace(&self) -> Workspace {
        Workspace {
            f: vec![0.0; self.n],
            dx: vec![0.0; self.n],
            trial: vec![0.0; self.n],
            jac: BandMatrix::zeros(self.n, self.bw, self.bw),
        }
    }

    /// Returns Ok(iterations) when converged.
    fn newton(
        &self,
        x: &mut [f64],
        ws: &mut Workspace,
        mode: Mode<'_>,
        max_iter: usize,
        opts: &SolveOptions,
    ) -> Result<usize> {
        let mut last = f64::INFINITY;
        for it in 0..max_iter {
            self.assemble(x, &mut ws.f, Some(&mut ws.jac));
            if let Mode::Transient { c_dt, prev } = mode {
                for k in 0..self.n {
                    ws.f[k] += c_dt * (x[k] - prev[k]);
                    ws.jac.add(k, k, c_dt);
                }
            }
            let res = ws.f.iter().fold(0.0f64, |m, v| m.max(libm::fabs(*v)));
            if !res.is_finite() {
                return Err(Error::NonFinite { step: it });
            }
            last = res;
            if matches!(mode, Mode::Static) && res < opts.tol {
                return Ok(it);
            }
            for k in 0..self.n {
                ws.dx[k] = -ws.f[k];
            }
            ws.jac.solve_in_place(&mut ws.dx)?;
            for d in ws.dx.iter_mut() {
                *d = d.clamp(-opts.max_step, opts.max_step);
            }
            let mut lambda = 1.0;
            if matches!(mode, Mode::Static) {
                // backtrack so that weakly tied nodes cannot cycle
                let mut improved = false;
                for _ in 0..12 {
                    for k in 0..self.n {
                        ws.trial[k] = x[k] + lambda * ws.dx[k];
                    }
                    self.assemble(&ws.trial, &mut ws.f, None);
                    let r = ws.f.iter().fold(0.0f64, |m, v| m.max(libm::fabs(*v)));
                    if r < res {
                        improved = true;
                        break;
                    }
                    lambda *= 0.5;
                }
                if !improved {
                    if res < NOISE_FLOOR {
                        return Ok(it);
                    }
                    lambda = 1.0;
                }
            }
            let mut step = 0.0f64;
            for k in 0..self.n {
                let d = lambda * ws.dx[k];
                x[k] += d;
                step = step.max(libm::fabs(d));
            }
            match mode {
                Mode::Transient { .. } if step < 1e-7 => return Ok(it + 1),
                Mode::Static if step < 1e-12 => return Ok(it + 1),
                _ => {}
            }
        }
        Err(Error::NonConvergence {
            solver: "newton",
            iterations: max_iter,
            residual: last,
            trace: Vec::new(),
        })
    }

    /// Continuation from discharged nodes followed by a Newton polish.
    pub fn solve(&self, opts: &SolveOptions) -> Result<Vec<f64>> {
        let mut x = vec![0.0; self.n];
        if self.n == 0 {
            return Ok(x);
        }
        let mut ws = self.workspace();
        let mut prev = x.clone();
        let mut dt = opts.dt0;
        while dt <= opts.dt_max {
            prev.copy_from_slice(&x);
            let mode = Mode::Transient {
                c_dt: opts.cap / dt,
                prev: &prev,
            };
            match self.newton(&mut x, &mut ws, mode, 40, opts) {
                Ok(_) => dt *= opts.dt_growth,
                Err(Error::Singular { .. }) | Err(Error::NonConvergence { .. }) => {
                    x.copy_from_slice(&prev);
                    dt *= 0.25;
                    if dt < opts.dt0 * 1e-6 {
                        return Err(Error::NonConvergence {
                            solver: "pseudo-transient",
                            iterations: 0,
                            residual: self.max_residual(&x),
                            trace: Vec::new(),
                        });
                    }
                }
                Err(e) => return Err(e),
            }
        }
        self.polish(&mut x, &mut ws, opts)?;
        Ok(x)
    }

    /// Newton from a caller-supplied starting point.
    pub fn solve_from(&self, mut x: Vec<f64>, opts: &SolveOptions) -> Result<Vec<f64>> {
        if self.n == 0 {
            return Ok(x);
        }
        let mut ws = self.workspace();
        self.polish(&mut x, &mut ws, opts)?;
        Ok(x)
    }

    fn polish(&self, x: &mut [f64], ws: &mut Workspace, opts: &SolveOptions) -> Result<()> {
        match self.newton(x, ws, Mode::Static, opts.max_newton, opts) {
            Ok(_) => Ok(()),
            Err(Error::NonConvergence {
                iterations,
                residual,
                ..
            }) => Err(Error::NonConvergence {
                solver: "dc operating point",
                iterations,
                residual,
                trace: Vec::new(),
            }),
            Err(e) => Err(e),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::device::DeviceParams;

    #[test]
    fn divider() {
        let mut b = CircuitBuilder::new();
        let top = b.source(1.0);
        let mid = b.node();
        let gnd = b.source(0.0);
        let r1 = b.resistor(top, mid, 1e3);
        b.resistor(mid, gnd, 3e3);
        let c = b.build().unwrap();
        assert_eq!(c.unknowns(), 1);
        let x = c.solve(&SolveOptions::default()).unwrap();
        assert!((c.voltage(&x, mid) - 0.75).abs() < 1e-12);
        assert!((c.current(&x, r1) - 0.25e-3).abs() < 1e-15);
        assert!((c.dissipation(&x) - 0.25e-3).abs() < 1e-15);
    }

    #[test]
    fn zero_ohm_merges_nodes() {
        let mut b = CircuitBuilder::new();
        let top = b.source(0.5);
        let a = b.node();
        let c = b.node();
        let gnd = b.source(0.0);
        let short = b.resistor(top, a, 0.0);
        b.resistor(a, c, 1e3);
        b.resistor(c, gnd, 1e3);
        let circ = b.build().unwrap();
        assert_eq!(circ.unknowns(), 1);
        let x = circ.solve(&SolveOptions::default()).unwrap();
        assert_eq!(circ.voltage(&x, a), 0.5);
        assert!((circ.voltage(&x, c) - 0.25).abs() < 1e-12);
        assert_eq!(circ.current(&x, short), 0.0);
    }

    #[test]
    fn shorted_sources_rejected() {
        let mut b = CircuitBuilder::new();
        let x = b.source(1.0);
        let y = b.source(0.0);
        b.resistor(x, y, 0.0);
        assert!(b.build().is_err());
    }

    #[test]
    fn mtj_bias_rolloff_derivative() {
        let m = MtjElement {
            r_p: 5e3,
            tmr: 4.0,
            cos_theta: -0.3,
            v_half: Some(0.5),
        };
        for v in [-0.8, -0.1, 0.0, 0.2, 0.9] {
            let h = 1e-7;
            let num = (m.current(v + h).0 - m.current(v - h).0) / (2.0 * h);
            let (_, g) = m.current(v);
            assert!((num - g).abs() < 1e-6 * g.abs(), "{v}");
        }
        let p = MtjElement {
            cos_theta: 1.0,
            ..m
        };
        assert_eq!(p.current(0.4).0, 0.4 / 5e3);
    }

    #[test]
    fn fet_load_converges_with_small_residual() {
        let p = DeviceParams::default();
        let fet = Fet::from_params(&p);
        let mut b = CircuitBuilder::new();
        let vdd = b.source(0.7);
        let gate = b.source(1.2);
        let gnd = b.source(0.0);
        let d = b.node();
        b.resistor(vdd, d, 20e3);
        b.fet(d, gate, gnd, fet);
        let c = b.build().unwrap();
        let x = c.solve(&SolveOptions::default()).unwrap();
        assert!(c.max_residual(&x) < 1e-13);
        assert!(c.voltage(&x, d) > 0.0 && c.voltage(&x, d) < 0.1);
    }
}
