//! Regression Monte Carlo for multiplicative (CARA-type) dynamic programs:
//! adaptive quantile cells, local affine regression, backward induction
//! over a discrete control grid.

use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::regression::solve_small;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LsmcConfig {
    pub n_paths: usize,
    pub cells_per_dim: usize,
    pub control_grid: Vec<f64>,
    /// Euler sub-steps per decision interval for path simulation.
    pub substeps: usize,
    pub seed: u64,
}

impl LsmcConfig {
    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.cells_per_dim == 0 {
            return Err(Error::invalid("cells_per_dim must be >= 1"));
        }
        if self.substeps == 0 {
            return Err(Error::invalid("substeps must be >= 1"));
        }
        let need = (self.cells_per_dim as u128).pow(dim as u32) * (dim as u128 + 2);
        if (self.n_paths as u128) < need {
            return Err(Error::invalid(format!(
                "n_paths = {} is below cells_per_dim^d·(d+2) = {need} for d = {dim}",
                self.n_paths
            )));
        }
        check_grid(&self.control_grid)
    }
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::invalid("control grid is empty"));
    }
    if grid.iter().any(|c| !c.is_finite()) || grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("control grid must be finite and strictly increasing"));
    }
    Ok(())
}

/// `lo, lo + step, …, hi` (the end point snapped onto the grid).
pub fn uniform_grid(lo: f64, hi: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || !(hi >= lo) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::invalid(format!("bad control grid [{lo}, {hi}] step {step}")));
    }
    let n = ((hi - lo) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|k| lo + step * k as f64).map(|c| (c * 1e12).round() / 1e12).collect())
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    /// Child `j` takes `thresholds[j-1] < x[dim] <= thresholds[j]`.
    Split { dim: usize, thresholds: Vec<f64>, children: Vec<usize> },
    Leaf(usize),
}

/// Sequential conditional-quantile tree: the first coordinate is cut into
/// strata by empirical quantiles, each stratum is then cut on the second
/// coordinate, and so on. States outside the training range fall in the
/// boundary cells.
#[derive(Debug, Clone, PartialEq)]
pub struct CellPartition {
    dim: usize,
    nodes: Vec<Node>,
    n_cells: usize,
    warnings: Vec<String>,
}

impl CellPartition {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn locate(&self, x: &[f64]) -> usize {
        let mut id = 0;
        loop {
            match &self.nodes[id] {
                Node::Leaf(c) => return *c,
                Node::Split { dim, thresholds, children } => {
                    id = children[thresholds.partition_point(|&t| t < x[*dim])];
                }
            }
        }
    }

    /// First-level thresholds (along coordinate 0).
    pub fn root_thresholds(&self) -> &[f64] {
        match &self.nodes[0] {
            Node::Split { thresholds, .. } => thresholds,
            Node::Leaf(_) => &[],
        }
    }

    /// Sample count of every cell.
    pub fn cell_counts(&self, states: &[f64]) -> Vec<usize> {
        let mut counts = vec![0; self.n_cells];
        for x in states.chunks(self.dim) {
            counts[self.locate(x)] += 1;
        }
        counts
    }
}

fn check_states(states: &[f64], dim: usize) -> Result<usize> {
    if dim == 0 || states.len() % dim != 0 {
        return Err(Error::invalid(format!("{} state coordinates do not split into dimension {dim}", states.len())));
    }
    if states.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("non-finite state coordinate"));
    }
    Ok(states.len() / dim)
}

/// Builds the quantile tree on `states` (row-major, `dim` coordinates each).
pub fn build_partition(states: &[f64], dim: usize, cells_per_dim: usize) -> Result<CellPartition> {
    let n = check_states(states, dim)?;
    if cells_per_dim == 0 {
        return Err(Error::invalid("cells_per_dim must be >= 1"));
    }
    let need = (cells_per_dim as u128).pow(dim as u32);
    if (n as u128) < need {
        return Err(Error::invalid(format!("{n} samples cannot fill {need} cells")));
    }
    let mut p = CellPartition { dim, nodes: Vec::new(), n_cells: 0, warnings: Vec::new() };
    let mut collapsed = vec![0usize; dim];
    let mut idx: Vec<usize> = (0..n).collect();
    grow(&mut p, states, &mut idx, 0, cells_per_dim, &mut collapsed);
    for (d, &k) in collapsed.iter().enumerate() {
        if k > 0 {
            p.warnings.push(format!("coordinate {d}: {k} strata have tied values; their splits were collapsed"));
        }
    }
    Ok(p)
}

fn grow(
    p: &mut CellPartition,
    states: &[f64],
    idx: &mut [usize],
    depth: usize,
    q: usize,
    collapsed: &mut [usize],
) -> usize {
    let id = p.nodes.len();
    if depth == p.dim {
        p.nodes.push(Node::Leaf(p.n_cells));
        p.n_cells += 1;
        return id;
    }
    let d = p.dim;
    let coord = |i: usize| states[i * d + depth];
    idx.sort_by(|&a, &b| coord(a).total_cmp(&coord(b)));
    let n = idx.len();
    let mut thresholds: Vec<f64> = Vec::with_capacity(q.saturating_sub(1));
    let mut lost = false;
    if n > 0 {
        let top = coord(idx[n - 1]);
        for j in 1..q {
            let cut = j * n / q;
            if cut == 0 {
                lost = true;
                continue;
            }
            let t = coord(idx[cut - 1]);
            if t >= top || thresholds.last().is_some_and(|&l| t <= l) {
                lost = true;
                continue;
            }
            thresholds.push(t);
        }
    }
    if lost {
        collapsed[depth] += 1;
    }
    p.nodes.push(Node::Split { dim: depth, thresholds: thresholds.clone(), children: Vec::new() });
    let mut children = Vec::with_capacity(thresholds.len() + 1);
    let mut start = 0;
    for j in 0..=thresholds.len() {
        let end = if j < thresholds.len() {
            start + idx[start..].partition_point(|&i| coord(i) <= thresholds[j])
        } else {
            n
        };
        children.push(grow(p, states, &mut idx[start..end], depth + 1, q, collapsed));
        start = end;
    }
    if let Node::Split { children: c, .. } = &mut p.nodes[id] {
        *c = children;
    }
    id
}

/// Per-cell affine coefficients `(intercept, slope₁, …, slope_d)` in the raw
/// state coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalAffineFit {
    dim: usize,
    coeffs: Vec<f64>,
    /// Cells fitted by their mean because the design was singular or too
    /// small.
    pub constant_cells: usize,
}

impl LocalAffineFit {
    pub fn cell(&self, q: usize) -> &[f64] {
        &self.coeffs[q * (self.dim + 1)..(q + 1) * (self.dim + 1)]
    }

    #[inline]
    fn value_in(&self, q: usize, x: &[f64]) -> f64 {
        let c = self.cell(q);
        c[0] + c[1..].iter().zip(x).map(|(b, xi)| b * xi).sum::<f64>()
    }
}

/// Local affine value at `state`; there is no continuity across cells.
pub fn evaluate_fit(fit: &LocalAffineFit, partition: &CellPartition, state: &[f64]) -> f64 {
    fit.value_in(partition.locate(state), state)
}

/// Cell assignment and per-cell normal-equation inverses for a fixed set of
/// states, reused across every regression target (one per control).
struct CellDesign {
    dim: usize,
    cell_of: Vec<usize>,
    cells: Vec<CellBasis>,
}

struct CellBasis {
    count: usize,
    mean: Vec<f64>,
    scale: Vec<f64>,
    /// Coordinates with spread inside the cell.
    active: Vec<usize>,
    /// `(XᵀX)⁻¹` on `(1, standardized active coordinates)`; `None` means a
    /// constant fit.
    inverse: Option<Vec<f64>>,
}

impl CellDesign {
    fn new(partition: &CellPartition, states: &[f64]) -> Result<(Self, Vec<String>)> {
        let d = partition.dim;
        let n = check_states(states, d)?;
        let cell_of: Vec<usize> = states.par_chunks(d).map(|x| partition.locate(x)).collect();
        let nq = partition.n_cells;
        let mut count = vec![0usize; nq];
        let mut sum = vec![0.0; nq * d];
        for (p, &q) in cell_of.iter().enumerate() {
            count[q] += 1;
            for j in 0..d {
                sum[q * d + j] += states[p * d + j];
            }
        }
        let mut mean = sum;
        for q in 0..nq {
            for j in 0..d {
                mean[q * d + j] /= count[q].max(1) as f64;
            }
        }
        let mut ss = vec![0.0; nq * d];
        for (p, &q) in cell_of.iter().enumerate() {
            for j in 0..d {
                ss[q * d + j] += (states[p * d + j] - mean[q * d + j]).powi(2);
            }
        }
        let mut cells: Vec<CellBasis> = (0..nq)
            .map(|q| {
                let c = count[q].max(1) as f64;
                let mu = mean[q * d..(q + 1) * d].to_vec();
                let scale: Vec<f64> = (0..d).map(|j| (ss[q * d + j] / c).sqrt()).collect();
                let active = (0..d).filter(|&j| scale[j] > 1e-12 * (1.0 + mu[j].abs())).collect();
                CellBasis { count: count[q], mean: mu, scale, active, inverse: None }
            })
            .collect();
        // Gram matrices on standardized coordinates
        let mut grams: Vec<Vec<f64>> = cells.iter().map(|c| vec![0.0; (c.active.len() + 1).pow(2)]).collect();
        let mut z = vec![0.0; d + 1];
        for (p, &q) in cell_of.iter().enumerate() {
            let c = &cells[q];
            let k = c.active.len() + 1;
            c.standardize(&states[p * d..(p + 1) * d], &mut z);
            let g = &mut grams[q];
            for a in 0..k {
                for b in 0..k {
                    g[a * k + b] += z[a] * z[b];
                }
            }
        }
        let mut singular = 0;
        for (c, g) in cells.iter_mut().zip(grams) {
            let k = c.active.len() + 1;
            if c.count < d + 2 || c.active.is_empty() {
                continue;
            }
            let mut inv = vec![0.0; k * k];
            let mut ok = true;
            for col in 0..k {
                let mut a = g.clone();
                let mut e = vec![0.0; k];
                e[col] = 1.0;
                if solve_small(&mut a, &mut e, k, 1e-10).is_none() {
                    ok = false;
                    break;
                }
                for row in 0..k {
                    inv[row * k + col] = e[row];
                }
            }
            if ok {
                c.inverse = Some(inv);
            } else {
                singular += 1;
            }
        }
        let mut warnings = Vec::new();
        let small = cells.iter().filter(|c| c.count < d + 2).count();
        if small > 0 {
            warnings.push(format!("{small} of {nq} cells hold fewer than {} samples; constant fits used", d + 2));
        }
        if singular > 0 {
            warnings.push(format!("{singular} of {nq} cells have a rank-deficient design; constant fits used"));
        }
        debug_assert_eq!(cell_of.len(), n);
        Ok((CellDesign { dim: d, cell_of, cells }, warnings))
    }

    fn fit(&self, states: &[f64], targets: &[f64]) -> LocalAffineFit {
        let d = self.dim;
        let nq = self.cells.len();
        let mut rhs: Vec<Vec<f64>> = self.cells.iter().map(|c| vec![0.0; c.active.len() + 1]).collect();
        let mut z = vec![0.0; d + 1];
        for (p, &q) in self.cell_of.iter().enumerate() {
            let c = &self.cells[q];
            c.standardize(&states[p * d..(p + 1) * d], &mut z);
            for (r, zi) in rhs[q].iter_mut().zip(&z) {
                *r += zi * targets[p];
            }
        }
        let mut coeffs = vec![0.0; nq * (d + 1)];
        let mut constant_cells = 0;
        for (q, c) in self.cells.iter().enumerate() {
            let out = &mut coeffs[q * (d + 1)..(q + 1) * (d + 1)];
            match &c.inverse {
                Some(inv) => {
                    let k = c.active.len() + 1;
                    let beta: Vec<f64> = (0..k).map(|a| (0..k).map(|b| inv[a * k + b] * rhs[q][b]).sum()).collect();
                    out[0] = beta[0];
                    for (slot, &j) in c.active.iter().enumerate() {
                        let slope = beta[slot + 1] / c.scale[j];
                        out[j + 1] = slope;
                        out[0] -= slope * c.mean[j];
                    }
                }
                None => {
                    if !c.active.is_empty() {
                        constant_cells += 1;
                    }
                    out[0] = if c.count > 0 { rhs[q][0] / c.count as f64 } else { 0.0 };
                }
            }
        }
        LocalAffineFit { dim: d, coeffs, constant_cells }
    }
}

impl CellBasis {
    #[inline]
    fn standardize(&self, x: &[f64], z: &mut [f64]) {
        z[0] = 1.0;
        for (slot, &j) in self.active.iter().enumerate() {
            z[slot + 1] = (x[j] - self.mean[j]) / self.scale[j];
        }
    }
}

/// Per-cell least squares of `targets` on `(1, state)`. Coordinates that are
/// constant inside a cell get slope 0; cells with a singular design or fewer
/// than `d + 2` samples are fitted by their mean.
pub fn regress_local(partition: &CellPartition, states: &[f64], targets: &[f64]) -> Result<(LocalAffineFit, Vec<String>)> {
    let n = check_states(states, partition.dim)?;
    if targets.len() != n {
        return Err(Error::invalid(format!("{n} states but {} targets", targets.len())));
    }
    let (design, warnings) = CellDesign::new(partition, states)?;
    Ok((design.fit(states, targets), warnings))
}

/// A backward-induction problem whose value is a product of per-stage
/// factors: `v_i = min_φ E_i[ v_{i+1} · factor(i, φ) ]` with `v_N = 1`. The
/// last stage's factor carries the terminal payoff.
pub trait ControlProblem: Sync {
    fn n_stages(&self) -> usize;
    fn n_paths(&self) -> usize;
    fn dim(&self) -> usize;
    /// Regression state of `path` at decision `stage`.
    fn state(&self, stage: usize, path: usize, out: &mut [f64]);
    fn factor(&self, stage: usize, path: usize, control: f64) -> f64;
}

#[derive(Debug, Clone, PartialEq)]
pub struct StagePolicy {
    pub partition: CellPartition,
    /// One fit of the conditional expectation per control.
    pub fits: Vec<LocalAffineFit>,
}

/// Trained feedback maps, one per decision stage.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyTable {
    pub dim: usize,
    pub controls: Vec<f64>,
    pub stages: Vec<StagePolicy>,
    /// Mean realized value at the first stage over the training paths.
    pub value_estimate: f64,
    pub warnings: Vec<String>,
}

/// Control indices ordered by `|φ|` (negative first on a tie), so that the
/// first strict minimum found favours small positions.
fn tie_order(controls: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..controls.len()).collect();
    order.sort_by(|&a, &b| controls[a].abs().total_cmp(&controls[b].abs()).then(controls[a].total_cmp(&controls[b])));
    order
}

fn argmin_in(fits: &[LocalAffineFit], order: &[usize], q: usize, x: &[f64]) -> (usize, f64) {
    let mut best = (order[0], fits[order[0]].value_in(q, x));
    for &l in &order[1..] {
        let e = fits[l].value_in(q, x);
        if e < best.1 - 1e-12 * best.1.abs() {
            best = (l, e);
        }
    }
    best
}

impl PolicyTable {
    pub fn n_stages(&self) -> usize {
        self.stages.len()
    }

    /// Optimal control at `stage` for `state`, with its estimated value.
    pub fn decide(&self, stage: usize, state: &[f64]) -> (f64, f64) {
        let s = &self.stages[stage];
        let q = s.partition.locate(state);
        let (l, e) = argmin_in(&s.fits, &tie_order(&self.controls), q, state);
        (self.controls[l], e)
    }

    pub fn control(&self, stage: usize, state: &[f64]) -> f64 {
        self.decide(stage, state).0
    }

    /// Optimal controls for many states at once (row-major).
    pub fn controls_for(&self, stage: usize, states: &[f64]) -> Vec<f64> {
        let s = &self.stages[stage];
        let order = tie_order(&self.controls);
        states
            .par_chunks(self.dim)
            .map(|x| self.controls[argmin_in(&s.fits, &order, s.partition.locate(x), x).0])
            .collect()
    }
}

/// Backward induction: at each stage, regress `v_{i+1} · factor(φ)` on the
/// state for every control, take the argmin of the fitted values per path,
/// and carry the realized product at the chosen control back as the new
/// path-wise value.
pub fn solve_backward<P: ControlProblem>(problem: &P, config: &LsmcConfig) -> Result<PolicyTable> {
    let d = problem.dim();
    let n = problem.n_paths();
    check_grid(&config.control_grid)?;
    let need = config.cells_per_dim.pow(d as u32) * (d + 2);
    if n < need {
        return Err(Error::invalid(format!("{n} paths is below cells_per_dim^d·(d+2) = {need}")));
    }
    let controls = config.control_grid.clone();
    let order = tie_order(&controls);
    let mut value = vec![1.0; n];
    let mut stages = Vec::with_capacity(problem.n_stages());
    let mut warnings = Vec::new();
    for i in (0..problem.n_stages()).rev() {
        let mut states = vec![0.0; n * d];
        states.par_chunks_mut(d).enumerate().for_each(|(p, x)| problem.state(i, p, x));
        let partition = build_partition(&states, d, config.cells_per_dim)?;
        warnings.extend(partition.warnings().iter().map(|w| format!("stage {i}: {w}")));
        let (design, w) = CellDesign::new(&partition, &states)?;
        warnings.extend(w.into_iter().map(|w| format!("stage {i}: {w}")));
        let fits: Vec<LocalAffineFit> = controls
            .par_iter()
            .map(|&phi| {
                let targets: Vec<f64> = (0..n).map(|p| value[p] * problem.factor(i, p, phi)).collect();
                design.fit(&states, &targets)
            })
            .collect();
        if fits.iter().any(|f| f.coeffs.iter().any(|c| !c.is_finite())) {
            return Err(Error::Numerical(format!("non-finite regression coefficients at stage {i}")));
        }
        value = (0..n)
            .into_par_iter()
            .map(|p| {
                let x = &states[p * d..(p + 1) * d];
                let (l, _) = argmin_in(&fits, &order, design.cell_of[p], x);
                value[p] * problem.factor(i, p, controls[l])
            })
            .collect();
        stages.push(StagePolicy { partition, fits });
    }
    stages.reverse();
    let value_estimate = value.iter().sum::<f64>() / n as f64;
    Ok(PolicyTable { dim: d, controls, stages, value_estimate, warnings })
}

const MAGIC: &str = "lsmc-policy 1";

impl PolicyTable {
    /// Line-oriented text form: header, control grid, then per stage the
    /// partition nodes and one coefficient row per (control, cell).
    pub fn write_text<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{MAGIC}")?;
        writeln!(w, "dim {}", self.dim)?;
        writeln!(w, "value {:e}", self.value_estimate)?;
        write!(w, "controls {}", self.controls.len())?;
        for c in &self.controls {
            write!(w, " {c:e}")?;
        }
        writeln!(w)?;
        writeln!(w, "stages {}", self.stages.len())?;
        for (i, s) in self.stages.iter().enumerate() {
            let p = &s.partition;
            writeln!(w, "stage {i} nodes {} cells {}", p.nodes.len(), p.n_cells)?;
            for node in &p.nodes {
                match node {
                    Node::Leaf(c) => writeln!(w, "leaf {c}")?,
                    Node::Split { dim, thresholds, children } => {
                        write!(w, "split {dim} {}", thresholds.len())?;
                        for t in thresholds {
                            write!(w, " {t:e}")?;
                        }
                        for c in children {
                            write!(w, " {c}")?;
                        }
                        writeln!(w)?;
                    }
                }
            }
            for f in &s.fits {
                for q in 0..p.n_cells {
                    let row: Vec<String> = f.cell(q).iter().map(|b| format!("{b:e}")).collect();
                    writeln!(w, "{}", row.join(" "))?;
                }
            }
        }
        Ok(())
    }

    pub fn read_text<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines().enumerate();
        let mut next = move || -> Result<(usize, String)> {
            match lines.next() {
                Some((i, l)) => Ok((i + 1, l?)),
                None => Err(Error::invalid("policy file ends early")),
            }
        };
        let bad = |line: usize, msg: &str| Error::Parse { path: "policy".into(), line: line as u64, msg: msg.into() };
        let (ln, magic) = next()?;
        if magic.trim() != MAGIC {
            return Err(bad(ln, "not a policy file"));
        }
        fn field<T: std::str::FromStr>(tok: Option<&str>) -> Option<T> {
            tok.and_then(|t| t.parse().ok())
        }
        let keyed = |line: &str, key: &str| -> Option<Vec<String>> {
            let mut it = line.split_whitespace();
            (it.next() == Some(key)).then(|| it.map(str::to_string).collect())
        };
        let (ln, l) = next()?;
        let dim: usize = keyed(&l, "dim").and_then(|v| field(v.first().map(|s| s.as_str()))).ok_or_else(|| bad(ln, "expected dim"))?;
        let (ln, l) = next()?;
        let value_estimate: f64 = keyed(&l, "value").and_then(|v| field(v.first().map(|s| s.as_str()))).ok_or_else(|| bad(ln, "expected value"))?;
        let (ln, l) = next()?;
        let toks = keyed(&l, "controls").ok_or_else(|| bad(ln, "expected controls"))?;
        let nc: usize = field(toks.first().map(|s| s.as_str())).ok_or_else(|| bad(ln, "bad control count"))?;
        let controls: Vec<f64> = toks[1..].iter().map(|t| t.parse()).collect::<std::result::Result<_, _>>().map_err(|_| bad(ln, "bad control value"))?;
        if controls.len() != nc {
            return Err(bad(ln, "control count mismatch"));
        }
        check_grid(&controls)?;
        let (ln, l) = next()?;
        let ns: usize = keyed(&l, "stages").and_then(|v| field(v.first().map(|s| s.as_str()))).ok_or_else(|| bad(ln, "expected stages"))?;
        let mut stages = Vec::with_capacity(ns);
        for _ in 0..ns {
            let (ln, l) = next()?;
            let t: Vec<&str> = l.split_whitespace().collect();
            if t.len() != 6 || t[0] != "stage" || t[2] != "nodes" || t[4] != "cells" {
                return Err(bad(ln, "expected stage header"));
            }
            let n_nodes: usize = t[3].parse().map_err(|_| bad(ln, "bad node count"))?;
            let n_cells: usize = t[5].parse().map_err(|_| bad(ln, "bad cell count"))?;
            let mut nodes = Vec::with_capacity(n_nodes);
            for _ in 0..n_nodes {
                let (ln, l) = next()?;
                let t: Vec<&str> = l.split_whitespace().collect();
                let node = match t.first() {
                    Some(&"leaf") => {
                        let c: usize = field(t.get(1).copied()).ok_or_else(|| bad(ln, "bad leaf"))?;
                        if c >= n_cells {
                            return Err(bad(ln, "leaf cell out of range"));
                        }
                        Node::Leaf(c)
                    }
                    Some(&"split") => {
                        let d: usize = field(t.get(1).copied()).ok_or_else(|| bad(ln, "bad split"))?;
                        let k: usize = field(t.get(2).copied()).ok_or_else(|| bad(ln, "bad split"))?;
                        if d >= dim || t.len() != 3 + k + k + 1 {
                            return Err(bad(ln, "malformed split"));
                        }
                        let thresholds = t[3..3 + k].iter().map(|s| s.parse()).collect::<std::result::Result<Vec<f64>, _>>().map_err(|_| bad(ln, "bad threshold"))?;
                        let children = t[3 + k..].iter().map(|s| s.parse()).collect::<std::result::Result<Vec<usize>, _>>().map_err(|_| bad(ln, "bad child"))?;
                        if children.iter().any(|&c| c >= n_nodes) {
                            return Err(bad(ln, "child out of range"));
                        }
                        Node::Split { dim: d, thresholds, children }
                    }
                    _ => return Err(bad(ln, "expected split or leaf")),
                };
                nodes.push(node);
            }
            let mut fits = Vec::with_capacity(nc);
            for _ in 0..nc {
                let mut coeffs = Vec::with_capacity(n_cells * (dim + 1));
                for _ in 0..n_cells {
                    let (ln, l) = next()?;
                    let row = l.split_whitespace().map(|s| s.parse()).collect::<std::result::Result<Vec<f64>, _>>().map_err(|_| bad(ln, "bad coefficient"))?;
                    if row.len() != dim + 1 {
                        return Err(bad(ln, "coefficient row has the wrong length"));
                    }
                    coeffs.extend(row);
                }
                fits.push(LocalAffineFit { dim, coeffs, constant_cells: 0 });
            }
            stages.push(StagePolicy { partition: CellPartition { dim, nodes, n_cells, warnings: Vec::new() }, fits });
        }
        Ok(PolicyTable { dim, controls, stages, value_estimate, warnings: Vec::new() })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;

    fn uniform_states(n: usize, d: usize, seed: u64) -> Vec<f64> {
        let mut g = rng::stream(seed, 0);
        (0..n * d).map(|_| g.random::<f64>()).collect()
    }

    #[test]
    fn quantile_thresholds_1d() {
        let s: Vec<f64> = (1..=100).map(|i| i as f64).collect();
        let p = build_partition(&s, 1, 4).unwrap();
        assert_eq!(p.root_thresholds(), &[25.0, 50.0, 75.0]);
        assert_eq!(p.cell_counts(&s), vec![25; 4]);
        assert_eq!(p.locate(&[-1e9]), 0);
        assert_eq!(p.locate(&[1e9]), 3);
    }

    #[test]
    fn balanced_cells_2d() {
        let s = uniform_states(10_000, 2, 1);
        let p = build_partition(&s, 2, 15).unwrap();
        assert_eq!(p.n_cells(), 225);
        let c = p.cell_counts(&s);
        assert!(c.iter().max().unwrap() - c.iter().min().unwrap() <= 2);
    }

    #[test]
    fn constant_coordinate_collapses() {
        let mut s = uniform_states(1000, 2, 2);
        for x in s.chunks_mut(2) {
            x[0] = 3.0;
        }
        let p = build_partition(&s, 2, 4).unwrap();
        assert_eq!(p.n_cells(), 4);
        assert!(!p.warnings().is_empty());
        assert!(build_partition(&s[..10], 2, 4).is_err());
    }

    #[test]
    fn affine_targets_recovered() {
        let s = uniform_states(5000, 3, 3);
        let y: Vec<f64> = s.chunks(3).map(|x| 1.5 - 2.0 * x[0] + 0.25 * x[1] + 4.0 * x[2]).collect();
        let p = build_partition(&s, 3, 4).unwrap();
        let (fit, _) = regress_local(&p, &s, &y).unwrap();
        for q in 0..p.n_cells() {
            let c = fit.cell(q);
            for (a, b) in c.iter().zip([1.5, -2.0, 0.25, 4.0]) {
                assert!((a - b).abs() < 1e-8);
            }
        }
        for (x, yi) in s.chunks(3).zip(&y).take(50) {
            assert!((evaluate_fit(&fit, &p, x) - yi).abs() < 1e-8);
        }
        let (fit, _) = regress_local(&p, &s, &vec![2.0; 5000]).unwrap();
        assert!((0..p.n_cells()).all(|q| fit.cell(q)[1..].iter().all(|b| b.abs() < 1e-10)));
    }

    #[test]
    fn local_fits_beat_global_on_a_quadratic() {
        let s = uniform_states(4000, 1, 4);
        let y: Vec<f64> = s.iter().map(|x| (x - 0.3).powi(2)).collect();
        let mse = |cells: usize| {
            let p = build_partition(&s, 1, cells).unwrap();
            let (f, _) = regress_local(&p, &s, &y).unwrap();
            s.iter().zip(&y).map(|(x, yi)| (evaluate_fit(&f, &p, &[*x]) - yi).powi(2)).sum::<f64>() / 4000.0
        };
        assert!(mse(8) < 0.1 * mse(1));
    }

    #[test]
    fn residuals_orthogonal_within_cells() {
        let s = uniform_states(3000, 2, 5);
        let mut g = rng::stream(6, 0);
        let y: Vec<f64> = s.chunks(2).map(|x| (3.0 * x[0]).sin() + x[1] * x[1] + g.random::<f64>()).collect();
        let p = build_partition(&s, 2, 5).unwrap();
        let (f, _) = regress_local(&p, &s, &y).unwrap();
        let mut acc = vec![[0.0; 3]; p.n_cells()];
        for (x, yi) in s.chunks(2).zip(&y) {
            let q = p.locate(x);
            let r = yi - evaluate_fit(&f, &p, x);
            acc[q][0] += r;
            acc[q][1] += r * x[0];
            acc[q][2] += r * x[1];
        }
        assert!(acc.iter().flatten().all(|v| v.abs() < 1e-8));
    }

    /// One stage, x ~ U(0,1): factor 1 + (φ − x − ε)², minimized at φ = x.
    struct Toy {
        states: Vec<f64>,
        noise: Vec<f64>,
    }

    impl ControlProblem for Toy {
        fn n_stages(&self) -> usize {
            1
        }
        fn n_paths(&self) -> usize {
            self.states.len()
        }
        fn dim(&self) -> usize {
            1
        }
        fn state(&self, _: usize, p: usize, out: &mut [f64]) {
            out[0] = self.states[p];
        }
        fn factor(&self, _: usize, p: usize, phi: f64) -> f64 {
            1.0 + (phi - self.states[p] - self.noise[p]).powi(2)
        }
    }

    fn toy(n: usize, seed: u64) -> Toy {
        let mut g = rng::stream(seed, 0);
        let states = (0..n).map(|_| g.random::<f64>()).collect();
        let noise = (0..n).map(|_| 0.2 * (g.random::<f64>() - 0.5)).collect();
        Toy { states, noise }
    }

    #[test]
    fn backward_policy_tracks_the_analytic_minimizer() {
        let problem = toy(20_000, 7);
        let config = LsmcConfig {
            n_paths: 20_000,
            cells_per_dim: 10,
            control_grid: uniform_grid(-0.5, 1.5, 0.01).unwrap(),
            substeps: 1,
            seed: 0,
        };
        let policy = solve_backward(&problem, &config).unwrap();
        for x in [0.05, 0.3, 0.5, 0.77, 0.95] {
            assert!((policy.control(0, &[x]) - x).abs() <= 0.011, "{x}");
        }
        let single = LsmcConfig { control_grid: vec![0.0], ..config };
        let policy = solve_backward(&problem, &single).unwrap();
        assert!(policy.controls_for(0, &[0.1, 0.9]).iter().all(|&c| c == 0.0));
        // E[1 + (x + ε)²] = 1 + 1/3 + 0.01/3
        assert!((policy.value_estimate - (1.0 + 1.0 / 3.0 + 0.01 / 3.0)).abs() < 0.01);
    }

    #[test]
    fn text_round_trip() {
        let problem = toy(2000, 8);
        let config = LsmcConfig {
            n_paths: 2000,
            cells_per_dim: 4,
            control_grid: uniform_grid(-1.0, 1.0, 0.25).unwrap(),
            substeps: 1,
            seed: 0,
        };
        let policy = solve_backward(&problem, &config).unwrap();
        let mut buf = Vec::new();
        policy.write_text(&mut buf).unwrap();
        let back = PolicyTable::read_text(&buf[..]).unwrap();
        assert_eq!(back.controls, policy.controls);
        assert_eq!(back.value_estimate, policy.value_estimate);
        for x in [0.0, 0.2, 0.6, 1.3] {
            assert_eq!(back.decide(0, &[x]), policy.decide(0, &[x]));
        }
        assert!(PolicyTable::read_text(&b"nope\n"[..]).is_err());
    }

    #[test]
    fn grid_and_config_checks() {
        let g = uniform_grid(-1.0, 1.0, 0.01).unwrap();
        assert_eq!(g.len(), 201);
        assert_eq!(g[100], 0.0);
        assert_eq!(uniform_grid(-5.0, 5.0, 0.05).unwrap().len(), 201);
        let c = LsmcConfig { n_paths: 100, cells_per_dim: 15, control_grid: g, substeps: 1, seed: 0 };
        assert!(c.validate(2).is_err());
        assert!(LsmcConfig { n_paths: 225 * 4, ..c.clone() }.validate(2).is_ok());
        assert!(LsmcConfig { control_grid: vec![1.0, 0.0], n_paths: 10_000, ..c }.validate(2).is_err());
    }
}
