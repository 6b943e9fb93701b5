use std::io::{Read, Write};

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::{ForecastState, ModelFamily, ModelParams, RhoSchedule};
use crate::error::{Error, Result};
use crate::rng;

/// The deterministic clock `θ_t = ∫_0^t ρ²(T − s) ds`.
pub fn time_change(rho: &RhoSchedule, delivery: f64, t: f64) -> Result<f64> {
    if !(t >= 0.0 && t <= delivery) {
        return Err(Error::domain(format!(
            "time_change needs 0 <= t <= T, got t={t}, T={delivery}"
        )));
    }
    Ok(rho.cumulative(delivery) - rho.cumulative(delivery - t))
}

/// One step of the time-changed dynamics over clock increment `dtheta`,
/// driven by independent standard normals `z_m` (mean) and `z_v`
/// (uncertainty). Returns the new `(m, V)`.
#[inline]
pub fn step(family: ModelFamily, b: f64, m: f64, v: f64, dtheta: f64, z_m: f64, z_v: f64) -> (f64, f64) {
    let sd = dtheta.sqrt();
    match family {
        ModelFamily::StudentT => {
            let m1 = m + v.sqrt() * sd * z_m;
            let v1 = v * (-(1.0 + 0.5 * b * b) * dtheta + b * sd * z_v).exp();
            (m1, v1)
        }
        ModelFamily::LogGh => {
            let m1 = m * (v.sqrt() * sd * z_m - 0.5 * v * dtheta).exp();
            let v1 = v * (-(1.0 + 0.5 * b * b) * dtheta + b * sd * z_v).exp();
            (m1, v1)
        }
        ModelFamily::Nig => {
            if v <= 0.0 {
                return (m, 0.0);
            }
            let m1 = m + v.sqrt() * sd * z_m;
            let v1 = v - v * dtheta + b * v.sqrt() * sd * z_v;
            (m1, v1.max(0.0))
        }
        ModelFamily::LogNig => {
            if v <= 0.0 {
                return (m, 0.0);
            }
            let kappa = 1.0 + 0.5 * b * b;
            let m1 = m * (v.sqrt() * sd * z_m - 0.5 * v * dtheta).exp();
            let v1 = v - kappa * v * dtheta + b * v.sqrt() * sd * z_v;
            (m1, v1.max(0.0))
        }
    }
}

/// Simulated trajectories of `(m, V)` on a time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSet {
    pub time_grid: Vec<f64>,
    /// Row-major `n_paths × n_times`.
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub seed: u64,
}

impl PathSet {
    pub fn n_paths(&self) -> usize {
        if self.time_grid.is_empty() {
            0
        } else {
            self.m.len() / self.time_grid.len()
        }
    }

    pub fn n_times(&self) -> usize {
        self.time_grid.len()
    }

    pub fn state(&self, path: usize, time_index: usize) -> ForecastState {
        let k = path * self.n_times() + time_index;
        ForecastState::new(self.time_grid[time_index], self.m[k], self.v[k])
    }

    /// The values of `m` across paths at one grid time.
    pub fn m_at(&self, time_index: usize) -> Vec<f64> {
        let nt = self.n_times();
        (0..self.n_paths()).map(|p| self.m[p * nt + time_index]).collect()
    }

    pub fn v_at(&self, time_index: usize) -> Vec<f64> {
        let nt = self.n_times();
        (0..self.n_paths()).map(|p| self.v[p * nt + time_index]).collect()
    }

    /// Columnar CSV: `path_id,time,m,V`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["path_id", "time", "m", "V"])?;
        let nt = self.n_times();
        for p in 0..self.n_paths() {
            for (j, t) in self.time_grid.iter().enumerate() {
                let k = p * nt + j;
                w.write_record([
                    p.to_string(),
                    t.to_string(),
                    self.m[k].to_string(),
                    self.v[k].to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R, seed: u64) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let header = r.headers()?.clone();
        if header.iter().collect::<Vec<_>>() != ["path_id", "time", "m", "V"] {
            return Err(Error::invalid("path CSV header must be path_id,time,m,V"));
        }
        let mut rows: Vec<(usize, f64, f64, f64)> = Vec::new();
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            let line = i as u64 + 2;
            let parse = |j: usize| -> Result<f64> {
                rec[j].parse::<f64>().map_err(|e| Error::Parse {
                    path: "<paths>".into(),
                    line,
                    msg: format!("column {j}: {e}"),
                })
            };
            let p = rec[0].parse::<usize>().map_err(|e| Error::Parse {
                path: "<paths>".into(),
                line,
                msg: e.to_string(),
            })?;
            rows.push((p, parse(1)?, parse(2)?, parse(3)?));
        }
        let n_paths = rows.iter().map(|r| r.0).max().map_or(0, |p| p + 1);
        if n_paths == 0 || rows.len() % n_paths != 0 {
            return Err(Error::invalid("path CSV is empty or ragged"));
        }
        let nt = rows.len() / n_paths;
        let time_grid: Vec<f64> = rows[..nt].iter().map(|r| r.1).collect();
        let mut m = vec![f64::NAN; rows.len()];
        let mut v = vec![f64::NAN; rows.len()];
        for (i, &(p, t, mm, vv)) in rows.iter().enumerate() {
            let j = i % nt;
            if rows[i].0 != i / nt || t != time_grid[j] {
                return Err(Error::invalid("path CSV rows must be ordered by path then time"));
            }
            m[p * nt + j] = mm;
            v[p * nt + j] = vv;
        }
        Ok(PathSet { time_grid, m, v, seed })
    }
}

pub(crate) fn check_grid(params: &ModelParams, start: f64, grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::invalid("time grid is empty"));
    }
    if grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::invalid("time grid must be strictly increasing"));
    }
    if grid[0] < start || *grid.last().unwrap() >= params.delivery || grid.iter().any(|t| !t.is_finite()) {
        return Err(Error::invalid(format!(
            "time grid must lie in [{start}, {}), got [{}, {}]",
            params.delivery,
            grid[0],
            grid.last().unwrap()
        )));
    }
    Ok(())
}

/// Simulates `n_paths` trajectories of `(m, V)` started from `initial` and
/// records them at every time in `grid`. Each grid interval is split into
/// `substeps` Euler steps in the time-changed clock.
///
/// Path `p` draws from its own stream of `seed`, so the output does not
/// depend on the number of worker threads.
pub fn simulate_paths(
    params: &ModelParams,
    initial: ForecastState,
    grid: &[f64],
    n_paths: usize,
    substeps: usize,
    seed: u64,
) -> Result<PathSet> {
    params.validate()?;
    initial.check(params.family)?;
    check_grid(params, initial.t, grid)?;
    if n_paths == 0 {
        return Err(Error::invalid("n_paths must be >= 1"));
    }
    if substeps == 0 {
        return Err(Error::invalid("substeps must be >= 1"));
    }
    // clock increments for every sub-step, shared by all paths
    let mut dthetas: Vec<Vec<f64>> = Vec::with_capacity(grid.len());
    let mut prev = initial.t;
    for &t in grid {
        let mut inc = Vec::new();
        if t > prev {
            let h = (t - prev) / substeps as f64;
            for s in 0..substeps {
                let a = prev + h * s as f64;
                let b = if s + 1 == substeps { t } else { a + h };
                inc.push(time_change(&params.rho, params.delivery, b)? - time_change(&params.rho, params.delivery, a)?);
            }
        }
        dthetas.push(inc);
        prev = t;
    }

    let nt = grid.len();
    let mut m = vec![0.0; n_paths * nt];
    let mut v = vec![0.0; n_paths * nt];
    let (family, b) = (params.family, params.b);
    m.par_chunks_mut(nt)
        .zip(v.par_chunks_mut(nt))
        .enumerate()
        .for_each(|(p, (mrow, vrow))| {
            let mut rng = rng::stream(seed, p as u64);
            let (mut mm, mut vv) = (initial.m, initial.v);
            for (j, inc) in dthetas.iter().enumerate() {
                for &dt in inc {
                    let z_m: f64 = StandardNormal.sample(&mut rng);
                    let z_v: f64 = StandardNormal.sample(&mut rng);
                    (mm, vv) = step(family, b, mm, vv, dt, z_m, z_v);
                }
                mrow[j] = mm;
                vrow[j] = vv;
            }
        });
    Ok(PathSet { time_grid: grid.to_vec(), m, v, seed })
}
