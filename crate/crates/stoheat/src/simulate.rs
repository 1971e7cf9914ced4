//! Seeded Monte Carlo finite-difference solver for the mild equation.
//!
//! The field evolves on a vertex-centered grid over `[-L, L]`:
//!
//! ```text
//!     u[m+1][j] = u[m][j] + (nu dt / (2 dx^2)) (u[m][j+1] - 2 u[m][j] + u[m][j-1])
//!                 + rho(u[m][j]) xi[m][j] sqrt(dt / dx),
//! ```
//!
//! the standard discretization of the Walsh formulation with cell-averaged
//! white noise (the noise integral over a step-by-cell box is
//! `xi sqrt(dt dx)`, divided by the cell width). Boundary nodes are
//! clamped to the exact homogeneous solution, which supports growing
//! initial data; the truncation guard on `L` keeps the boundary influence
//! on the observation window negligible.
//!
//! Replicas are independent and run in parallel; the counter RNG and the
//! fixed replica-major storage layout make results bit-identical for any
//! thread count. At production grid sizes a full per-step history is far
//! beyond memory, so the ensemble retains snapshots every
//! `snapshot_every` steps restricted to columns inside the observation
//! window; lags and windows downstream are expressed on that stored grid.

use crate::error::{Error, Result};
use crate::measure::{classify, InitialMeasure};
use crate::moments::RhoSpec;
use crate::quad::QuadratureSpec;
use crate::rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Master seed for an ensemble; the variate at `(replica, step, cell)` is
/// a pure function of this seed and those indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoiseSeed {
    pub master_seed: u64,
}

impl NoiseSeed {
    pub fn new(master_seed: u64) -> Self {
        NoiseSeed { master_seed }
    }
}

/// Space-time grid specification.
///
/// `nx` cells on `[-L, L]` give `nx + 1` vertex nodes with spacing
/// `dx = 2L/nx`; `nt` steps of `dt = t_max/nt`. Construction enforces the
/// explicit-scheme stability bound `nu dt / dx^2 <= 1/2` and the boundary
/// truncation guard `L >= obs_half_width + 6 sqrt(nu t_max)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GridDoc", into = "GridDoc")]
pub struct GridSpec {
    nu: f64,
    l: f64,
    nx: usize,
    t_max: f64,
    nt: usize,
    obs_half_width: f64,
    snapshot_every: usize,
    warm_start: bool,
}

#[derive(Serialize, Deserialize, Clone)]
struct GridDoc {
    nu: f64,
    l: f64,
    nx: usize,
    t_max: f64,
    nt: usize,
    obs_half_width: f64,
    #[serde(default = "one")]
    snapshot_every: usize,
    #[serde(default)]
    warm_start: bool,
}

fn one() -> usize {
    1
}

impl TryFrom<GridDoc> for GridSpec {
    type Error = Error;
    fn try_from(d: GridDoc) -> Result<Self> {
        GridSpec::new(d.nu, d.l, d.nx, d.t_max, d.nt, d.obs_half_width)?
            .with_snapshot_every(d.snapshot_every)?
            .with_warm_start(d.warm_start)
    }
}

impl From<GridSpec> for GridDoc {
    fn from(g: GridSpec) -> Self {
        GridDoc {
            nu: g.nu,
            l: g.l,
            nx: g.nx,
            t_max: g.t_max,
            nt: g.nt,
            obs_half_width: g.obs_half_width,
            snapshot_every: g.snapshot_every,
            warm_start: g.warm_start,
        }
    }
}

impl GridSpec {
    pub fn new(
        nu: f64,
        l: f64,
        nx: usize,
        t_max: f64,
        nt: usize,
        obs_half_width: f64,
    ) -> Result<Self> {
        if nu <= 0.0 || l <= 0.0 || t_max <= 0.0 {
            return Err(Error::domain("GridSpec::new", "nu, L, t_max must be positive"));
        }
        if nx < 3 || nt < 1 {
            return Err(Error::domain("GridSpec::new", "need nx >= 3 and nt >= 1"));
        }
        if obs_half_width < 0.0 {
            return Err(Error::domain("GridSpec::new", "obs_half_width must be nonnegative"));
        }
        let dx = 2.0 * l / nx as f64;
        let dt = t_max / nt as f64;
        let cfl = nu * dt / (dx * dx);
        if cfl > 0.5 + 1e-12 {
            return Err(Error::domain(
                "GridSpec::new",
                format!("stability violated: nu dt/dx^2 = {cfl:.4} > 1/2"),
            ));
        }
        if l < obs_half_width + 6.0 * (nu * t_max).sqrt() {
            return Err(Error::domain(
                "GridSpec::new",
                format!(
                    "truncation guard violated: need L >= {:.4}",
                    obs_half_width + 6.0 * (nu * t_max).sqrt()
                ),
            ));
        }
        Ok(GridSpec {
            nu,
            l,
            nx,
            t_max,
            nt,
            obs_half_width,
            snapshot_every: 1,
            warm_start: false,
        })
    }

    /// Retain one stored slice every `k` steps (the initial slice is always
    /// stored). `nt` must be a multiple of `k` so the final time is stored.
    pub fn with_snapshot_every(mut self, k: usize) -> Result<Self> {
        if k == 0 || self.nt % k != 0 {
            return Err(Error::domain(
                "GridSpec::with_snapshot_every",
                format!("snapshot stride must divide nt = {}", self.nt),
            ));
        }
        self.snapshot_every = k;
        Ok(self)
    }

    /// Warm start: replace the raw initial slice by the exact homogeneous
    /// solution at `t0 = dt` and shift all times by `dt`. Used for
    /// unbounded densities whose grid sampling is ill-posed.
    pub fn with_warm_start(mut self, on: bool) -> Result<Self> {
        self.warm_start = on;
        Ok(self)
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }
    pub fn l(&self) -> f64 {
        self.l
    }
    pub fn nx(&self) -> usize {
        self.nx
    }
    pub fn nt(&self) -> usize {
        self.nt
    }
    pub fn t_max(&self) -> f64 {
        self.t_max
    }
    pub fn dx(&self) -> f64 {
        2.0 * self.l / self.nx as f64
    }
    pub fn dt(&self) -> f64 {
        self.t_max / self.nt as f64
    }
    pub fn obs_half_width(&self) -> f64 {
        self.obs_half_width
    }
    pub fn snapshot_every(&self) -> usize {
        self.snapshot_every
    }
    pub fn warm_start(&self) -> bool {
        self.warm_start
    }
    /// Time offset of step zero (`dt` under warm start, else zero).
    pub fn t_offset(&self) -> f64 {
        if self.warm_start {
            self.dt()
        } else {
            0.0
        }
    }
    pub fn node_x(&self, j: usize) -> f64 {
        -self.l + j as f64 * self.dx()
    }
    pub fn n_nodes(&self) -> usize {
        self.nx + 1
    }
}

/// A replicated ensemble of simulated fields on the stored space-time grid.
#[derive(Debug, Clone)]
pub struct FieldEnsemble {
    grid: GridSpec,
    seed: NoiseSeed,
    replica_offset: usize,
    replicas: usize,
    stored_times: Vec<f64>,
    stored_cols: Vec<usize>,
    stored_xs: Vec<f64>,
    /// Replica-major values: `[replica][stored_time][stored_col]`.
    values: Vec<f64>,
    /// Exact homogeneous solution on the stored grid: `[stored_time][stored_col]`.
    j0_slice: Vec<f64>,
}

impl FieldEnsemble {
    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }
    pub fn seed(&self) -> NoiseSeed {
        self.seed
    }
    pub fn replicas(&self) -> usize {
        self.replicas
    }
    /// Global index of the first replica in this (possibly batched) ensemble.
    pub fn replica_offset(&self) -> usize {
        self.replica_offset
    }
    pub fn stored_times(&self) -> &[f64] {
        &self.stored_times
    }
    pub fn stored_xs(&self) -> &[f64] {
        &self.stored_xs
    }
    pub fn n_times(&self) -> usize {
        self.stored_times.len()
    }
    pub fn n_cols(&self) -> usize {
        self.stored_cols.len()
    }

    #[inline]
    pub fn value(&self, replica: usize, ti: usize, ci: usize) -> f64 {
        self.values[(replica * self.stored_times.len() + ti) * self.stored_cols.len() + ci]
    }

    /// Homogeneous part at a stored node.
    #[inline]
    pub fn j0_at(&self, ti: usize, ci: usize) -> f64 {
        self.j0_slice[ti * self.stored_cols.len() + ci]
    }

    /// Stochastic-convolution part `I = u - J0` at a stored node.
    #[inline]
    pub fn i_value(&self, replica: usize, ti: usize, ci: usize) -> f64 {
        self.value(replica, ti, ci) - self.j0_at(ti, ci)
    }

    /// Index of the stored time nearest to `t`; errors when `t` is not on
    /// the stored grid within a half-stride tolerance.
    pub fn time_index(&self, t: f64) -> Result<usize> {
        let stride = self.grid.dt() * self.grid.snapshot_every as f64;
        let rel = (t - self.stored_times[0]) / stride;
        let i = rel.round();
        if i < 0.0 || i as usize >= self.stored_times.len() || (rel - i).abs() > 1e-6 {
            return Err(Error::domain(
                "FieldEnsemble::time_index",
                format!("time {t} is not on the stored grid"),
            ));
        }
        Ok(i as usize)
    }

    /// Index of the stored column nearest to `x`; errors when `x` is not a
    /// stored node within tolerance.
    pub fn col_index(&self, x: f64) -> Result<usize> {
        let dx = self.grid.dx();
        let rel = (x - self.stored_xs[0]) / dx;
        let i = rel.round();
        if i < 0.0 || i as usize >= self.stored_xs.len() || (rel - i).abs() > 1e-6 {
            return Err(Error::domain(
                "FieldEnsemble::col_index",
                format!("location {x} is not a stored column"),
            ));
        }
        Ok(i as usize)
    }

    /// Raw value storage, for in-crate test fixtures that inject synthetic
    /// fields.
    #[cfg(test)]
    pub(crate) fn values_mut(&mut self) -> &mut Vec<f64> {
        &mut self.values
    }

    /// The replica's stored slice as a `(times x cols)` row-major vector.
    pub fn sample_path(&self, replica: usize) -> Result<&[f64]> {
        if replica >= self.replicas {
            return Err(Error::domain(
                "FieldEnsemble::sample_path",
                format!("replica {replica} out of range {}", self.replicas),
            ));
        }
        let stride = self.stored_times.len() * self.stored_cols.len();
        Ok(&self.values[replica * stride..(replica + 1) * stride])
    }
}

/// Exact `J_0` evaluated on the stored grid (and the initial slice when the
/// stored grid includes time zero, where the convention `I(0,.) = 0` pins
/// the homogeneous part to the deposited slice).
fn build_j0_slice(
    measure: &InitialMeasure,
    grid: &GridSpec,
    stored_times: &[f64],
    stored_cols: &[usize],
    initial: &[f64],
    spec: &QuadratureSpec,
) -> Result<Vec<f64>> {
    let mut out = vec![0.0; stored_times.len() * stored_cols.len()];
    let rows: Vec<Result<Vec<f64>>> = stored_times
        .par_iter()
        .map(|&t| {
            let mut row = vec![0.0; stored_cols.len()];
            for (ci, &j) in stored_cols.iter().enumerate() {
                row[ci] = if t == 0.0 {
                    initial[j]
                } else {
                    crate::measure::j0(measure, grid.nu(), t, grid.node_x(j), false, spec)?
                };
            }
            Ok(row)
        })
        .collect();
    for (ti, row) in rows.into_iter().enumerate() {
        let row = row?;
        out[ti * stored_cols.len()..(ti + 1) * stored_cols.len()].copy_from_slice(&row);
    }
    Ok(out)
}

/// Deposits the measure on the grid nodes: atoms as `weight/dx` in the
/// containing cell (boundary ties to the left-adjacent cell), densities
/// sampled at the nodes.
fn initial_slice(measure: &InitialMeasure, grid: &GridSpec) -> Vec<f64> {
    let n = grid.n_nodes();
    let dx = grid.dx();
    let mut u0 = vec![0.0; n];
    if let Some(d) = measure.density() {
        for (j, v) in u0.iter_mut().enumerate() {
            *v = d.eval(grid.node_x(j));
        }
    }
    for &(loc, w) in measure.atoms() {
        let pos = (loc + grid.l()) / dx;
        // Round half-down so an atom on a cell boundary lands left.
        let j = (pos - 0.5).ceil().max(0.0) as usize;
        let j = j.min(n - 1);
        u0[j] += w / dx;
    }
    u0
}

struct StepContext<'a> {
    u0: &'a [f64],
    boundary: &'a [(f64, f64)],
    stored_cols: &'a [usize],
    grid: &'a GridSpec,
    alpha: f64,
    noise_coef: f64,
    ens_key: u64,
    replica_offset: usize,
    row_len: usize,
}

fn run_replicas<F>(ctx: &StepContext<'_>, values: &mut [f64], rho_f: F) -> Vec<Result<()>>
where
    F: Fn(f64) -> f64 + Sync,
{
    let n = ctx.u0.len();
    let nt = ctx.grid.nt();
    let (alpha, noise_coef) = (ctx.alpha, ctx.noise_coef);
    values
        .par_chunks_mut(ctx.row_len)
        .enumerate()
        .map(|(r, out)| {
            let rep_key = rng::replica_key(ctx.ens_key, (ctx.replica_offset + r) as u64);
            let mut cur = ctx.u0.to_vec();
            let mut next = vec![0.0f64; n];
            // Stored row 0: the initial slice.
            for (ci, &j) in ctx.stored_cols.iter().enumerate() {
                out[ci] = cur[j];
            }
            let mut snap_row = 1usize;
            let last_pair = ((n - 2) >> 1) as u64;
            for m in 0..nt {
                let sk = rng::step_key(rep_key, m as u64);
                for p in 0..=last_pair {
                    let (z0, z1) = rng::normal_pair(sk, p);
                    let j = (p << 1) as usize;
                    if j >= 1 && j < n - 1 {
                        next[j] = cur[j]
                            + alpha * (cur[j - 1] - 2.0 * cur[j] + cur[j + 1])
                            + rho_f(cur[j]) * z0 * noise_coef;
                    }
                    let j = j + 1;
                    if j < n - 1 {
                        next[j] = cur[j]
                            + alpha * (cur[j - 1] - 2.0 * cur[j] + cur[j + 1])
                            + rho_f(cur[j]) * z1 * noise_coef;
                    }
                }
                next[0] = ctx.boundary[m].0;
                next[n - 1] = ctx.boundary[m].1;
                std::mem::swap(&mut cur, &mut next);
                if (m + 1) % ctx.grid.snapshot_every() == 0 {
                    let base = snap_row * ctx.stored_cols.len();
                    for (ci, &j) in ctx.stored_cols.iter().enumerate() {
                        let v = cur[j];
                        if !v.is_finite() {
                            return Err(Error::NumericalFailure {
                                replica: ctx.replica_offset + r,
                                step: m + 1,
                                cell: j,
                                message: format!("non-finite field value {v}"),
                            });
                        }
                        out[base + ci] = v;
                    }
                    snap_row += 1;
                }
            }
            Ok(())
        })
        .collect()
}

/// Runs `replicas` independent replicas with global indices starting at
/// `replica_offset`; see [`simulate`] for the common entry point.
pub fn simulate_batch(
    measure: &InitialMeasure,
    rho: &RhoSpec,
    grid: &GridSpec,
    seed: NoiseSeed,
    replica_offset: usize,
    replicas: usize,
    spec: &QuadratureSpec,
) -> Result<FieldEnsemble> {
    if replicas == 0 {
        return Err(Error::domain("simulate", "need at least one replica"));
    }
    if !rho.is_callable() {
        return Err(Error::domain(
            "simulate",
            "rho specification carries no pointwise coefficient",
        ));
    }
    if !classify(measure).in_mh {
        return Err(Error::domain(
            "simulate",
            "measure lies outside the admissible class",
        ));
    }

    let n = grid.n_nodes();
    let nt = grid.nt();
    let dt = grid.dt();
    let dx = grid.dx();
    let alpha = grid.nu() * dt / (2.0 * dx * dx);
    let noise_coef = (dt / dx).sqrt();
    let t0 = grid.t_offset();

    // Initial slice: raw deposit, or the exact homogeneous solution at dt
    // under warm start.
    let u0: Vec<f64> = if grid.warm_start() {
        let mut v = vec![0.0; n];
        let cols: Vec<Result<f64>> = (0..n)
            .into_par_iter()
            .map(|j| crate::measure::j0(measure, grid.nu(), dt, grid.node_x(j), false, spec))
            .collect();
        for (j, c) in cols.into_iter().enumerate() {
            v[j] = c?;
        }
        v
    } else {
        initial_slice(measure, grid)
    };

    // Deterministic boundary clamp values for every step.
    let boundary: Vec<(f64, f64)> = {
        let rows: Vec<Result<(f64, f64)>> = (1..=nt)
            .into_par_iter()
            .map(|m| {
                let t = t0 + m as f64 * dt;
                Ok((
                    crate::measure::j0(measure, grid.nu(), t, -grid.l(), false, spec)?,
                    crate::measure::j0(measure, grid.nu(), t, grid.l(), false, spec)?,
                ))
            })
            .collect();
        let mut v = Vec::with_capacity(nt);
        for r in rows {
            v.push(r?);
        }
        v
    };

    let stored_cols: Vec<usize> = (0..n)
        .filter(|&j| grid.node_x(j).abs() <= grid.obs_half_width() + 0.5 * dx)
        .collect();
    if stored_cols.is_empty() {
        return Err(Error::domain(
            "simulate",
            "observation window contains no grid nodes",
        ));
    }
    let stored_xs: Vec<f64> = stored_cols.iter().map(|&j| grid.node_x(j)).collect();
    let n_snapshots = nt / grid.snapshot_every() + 1;
    let stored_times: Vec<f64> = (0..n_snapshots)
        .map(|k| t0 + (k * grid.snapshot_every()) as f64 * dt)
        .collect();

    let j0_slice = build_j0_slice(measure, grid, &stored_times, &stored_cols, &u0, spec)?;

    let row_len = stored_times.len() * stored_cols.len();
    let mut values = vec![0.0f64; replicas * row_len];
    let ens_key = rng::ensemble_key(seed.master_seed);

    // Monomorphize the replica loop over the coefficient so the hot path
    // carries no enum dispatch.
    let ctx = StepContext {
        u0: &u0,
        boundary: &boundary,
        stored_cols: &stored_cols,
        grid,
        alpha,
        noise_coef,
        ens_key,
        replica_offset,
        row_len,
    };
    let results = match rho {
        RhoSpec::QuasiLinear { lambda, rho_bar } if *rho_bar == 0.0 => {
            let l = *lambda;
            run_replicas(&ctx, &mut values, move |u| l * u)
        }
        RhoSpec::QuasiLinear { lambda, rho_bar } => {
            let (l, b2) = (*lambda, rho_bar * rho_bar);
            run_replicas(&ctx, &mut values, move |u| l * (b2 + u * u).sqrt())
        }
        RhoSpec::Constant { sigma } => {
            let s = *sigma;
            run_replicas(&ctx, &mut values, move |_| s)
        }
        _ => run_replicas(&ctx, &mut values, |u| rho.eval(u)),
    };
    for r in results {
        r?;
    }

    Ok(FieldEnsemble {
        grid: grid.clone(),
        seed,
        replica_offset,
        replicas,
        stored_times,
        stored_cols,
        stored_xs,
        values,
        j0_slice,
    })
}

/// Simulates an ensemble with replica indices `0..replicas`.
pub fn simulate(
    measure: &InitialMeasure,
    rho: &RhoSpec,
    grid: &GridSpec,
    seed: NoiseSeed,
    replicas: usize,
    spec: &QuadratureSpec,
) -> Result<FieldEnsemble> {
    simulate_batch(measure, rho, grid, seed, 0, replicas, spec)
}

/// Deterministic second-moment closure of the discrete scheme for
/// quasi-linear coefficients: with independent zero-mean unit-variance
/// noise, `E[u_j u_k]` evolves in closed form
///
/// ```text
///     M' = T M T^t + (dt/dx) lambda^2 diag(rho_bar^2 + M_jj),
/// ```
///
/// where `T` is the deterministic step (boundary rows clamped). This is
/// the exact expectation of the simulated scheme, independent of replica
/// count, so it separates discretization bias from Monte Carlo error.
pub fn discrete_second_moment(
    measure: &InitialMeasure,
    lambda: f64,
    rho_bar: f64,
    grid: &GridSpec,
    at_x: &[f64],
    spec: &QuadratureSpec,
) -> Result<Vec<f64>> {
    let n = grid.n_nodes();
    let nt = grid.nt();
    let dt = grid.dt();
    let dx = grid.dx();
    let alpha = grid.nu() * dt / (2.0 * dx * dx);
    let t0 = grid.t_offset();

    let u0: Vec<f64> = if grid.warm_start() {
        (0..n)
            .map(|j| crate::measure::j0(measure, grid.nu(), dt, grid.node_x(j), false, spec))
            .collect::<Result<_>>()?
    } else {
        Ok::<_, Error>(initial_slice(measure, grid))?
    };

    let mut mean = u0.clone();
    let mut m: Vec<f64> = (0..n * n)
        .map(|idx| u0[idx / n] * u0[idx % n])
        .collect();
    let mut mean_next = vec![0.0; n];
    let mut b = vec![0.0; n * n];

    let tri = |v: &[f64], j: usize| -> f64 {
        v[j] + alpha * (v[j - 1] - 2.0 * v[j] + v[j + 1])
    };

    for step in 0..nt {
        let t_new = t0 + (step + 1) as f64 * dt;
        let (blo, bhi) = (
            crate::measure::j0(measure, grid.nu(), t_new, -grid.l(), false, spec)?,
            crate::measure::j0(measure, grid.nu(), t_new, grid.l(), false, spec)?,
        );
        // B = T M (apply T to each column), rows 0 and n-1 overwritten later.
        for col in 0..n {
            for row in 1..n - 1 {
                b[row * n + col] = m[row * n + col]
                    + alpha * (m[(row - 1) * n + col] - 2.0 * m[row * n + col]
                        + m[(row + 1) * n + col]);
            }
        }
        // M' = B T^t (apply T to each row of B) + noise diagonal.
        let noise_scale = dt / dx * lambda * lambda;
        let mut m_next = vec![0.0; n * n];
        for row in 1..n - 1 {
            for col in 1..n - 1 {
                m_next[row * n + col] = b[row * n + col]
                    + alpha * (b[row * n + col - 1] - 2.0 * b[row * n + col]
                        + b[row * n + col + 1]);
            }
            m_next[row * n + row] += noise_scale * (rho_bar * rho_bar + m[row * n + row]);
        }
        for j in 1..n - 1 {
            mean_next[j] = tri(&mean, j);
        }
        mean_next[0] = blo;
        mean_next[n - 1] = bhi;
        // Clamped boundary: deterministic value times the mean elsewhere.
        for k in 0..n {
            m_next[k] = blo * mean_next[k];
            m_next[(n - 1) * n + k] = bhi * mean_next[k];
            m_next[k * n] = mean_next[k] * blo;
            m_next[k * n + n - 1] = mean_next[k] * bhi;
        }
        m_next[0] = blo * blo;
        m_next[(n - 1) * n + n - 1] = bhi * bhi;
        m = m_next;
        std::mem::swap(&mut mean, &mut mean_next);
    }

    at_x
        .iter()
        .map(|&x| {
            let pos = (x + grid.l()) / dx;
            let j = pos.round() as usize;
            if (pos - j as f64).abs() > 1e-6 || j >= n {
                return Err(Error::domain(
                    "discrete_second_moment",
                    format!("{x} is not a grid node"),
                ));
            }
            Ok(m[j * n + j])
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::DensitySpec;

    fn qspec() -> QuadratureSpec {
        QuadratureSpec::default()
    }

    fn small_grid() -> GridSpec {
        GridSpec::new(1.0, 4.0, 80, 0.2, 128, 1.0)
            .unwrap()
            .with_snapshot_every(32)
            .unwrap()
    }

    #[test]
    fn grid_validation() {
        assert!(GridSpec::new(1.0, 4.0, 80, 1.0, 10, 1.0).is_err()); // unstable
        assert!(GridSpec::new(1.0, 1.0, 80, 1.0, 100000, 0.5).is_err()); // guard
        assert!(GridSpec::new(1.0, 4.0, 2, 0.1, 100, 1.0).is_err()); // nx too small
        let g = small_grid();
        assert!((g.dx() - 0.1).abs() < 1e-15);
        assert!(g.with_snapshot_every(7).is_err()); // does not divide nt
    }

    #[test]
    fn noiseless_run_tracks_homogeneous_solution() {
        let g = small_grid();
        let m = InitialMeasure::density_only(
            DensitySpec::Tabulated {
                xs: vec![-1.5, -0.5, 0.0, 0.75, 1.5],
                fs: vec![0.0, 1.0, 0.5, 1.25, 0.0],
            },
            "bump",
        )
        .unwrap();
        let rho = RhoSpec::additive(0.0);
        let ens = simulate(&m, &rho, &g, NoiseSeed::new(1), 1, &qspec()).unwrap();
        // Deterministic run: the field equals the FD heat evolution, which
        // must track the exact convolution to O(dx^2 + dt).
        let last = ens.n_times() - 1;
        let mut max_err = 0.0f64;
        for ci in 0..ens.n_cols() {
            let err = (ens.value(0, last, ci) - ens.j0_at(last, ci)).abs();
            max_err = max_err.max(err);
        }
        assert!(max_err < 5e-3, "max deviation {max_err}");

        // Refinement shrinks the deviation.
        let g2 = GridSpec::new(1.0, 4.0, 160, 0.2, 512, 1.0)
            .unwrap()
            .with_snapshot_every(128)
            .unwrap();
        let ens2 = simulate(&m, &rho, &g2, NoiseSeed::new(1), 1, &qspec()).unwrap();
        let last2 = ens2.n_times() - 1;
        let mut max_err2 = 0.0f64;
        for ci in 0..ens2.n_cols() {
            let err = (ens2.value(0, last2, ci) - ens2.j0_at(last2, ci)).abs();
            max_err2 = max_err2.max(err);
        }
        assert!(max_err2 < max_err, "{max_err2} !< {max_err}");
    }

    #[test]
    fn zero_data_zero_rho_stays_zero() {
        let g = small_grid();
        let m = InitialMeasure::density_only(DensitySpec::Constant { level: 0.0 }, "null").unwrap();
        let rho = RhoSpec::pam(1.0);
        let ens = simulate(&m, &rho, &g, NoiseSeed::new(3), 2, &qspec()).unwrap();
        for r in 0..2 {
            for ti in 0..ens.n_times() {
                for ci in 0..ens.n_cols() {
                    assert_eq!(ens.value(r, ti, ci), 0.0);
                }
            }
        }
    }

    #[test]
    fn additive_noise_variance_matches_closed_form() {
        // rho == sigma, mu = 0: Var[u(t,x)] -> sigma^2 sqrt(t)/sqrt(pi nu).
        let sigma = 0.8;
        let g = GridSpec::new(1.0, 4.0, 160, 0.2, 512, 0.5)
            .unwrap()
            .with_snapshot_every(512)
            .unwrap();
        let m = InitialMeasure::density_only(DensitySpec::Constant { level: 0.0 }, "null").unwrap();
        let rho = RhoSpec::additive(sigma);
        let reps = 4000;
        let ens = simulate(&m, &rho, &g, NoiseSeed::new(7), reps, &qspec()).unwrap();
        let ci = ens.col_index(0.0).unwrap();
        let last = ens.n_times() - 1;
        let mean_sq: f64 =
            (0..reps).map(|r| ens.value(r, last, ci).powi(2)).sum::<f64>() / reps as f64;
        let exact = sigma * sigma * (0.2f64).sqrt() / std::f64::consts::PI.sqrt();
        let rel = (mean_sq - exact).abs() / exact;
        assert!(rel < 0.08, "variance {mean_sq} vs {exact} (rel {rel})");
    }

    #[test]
    fn deterministic_across_thread_counts() {
        let g = small_grid();
        let m = InitialMeasure::dirac_origin();
        let rho = RhoSpec::pam(1.0);
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap();
            pool.install(|| simulate(&m, &rho, &g, NoiseSeed::new(99), 8, &qspec()).unwrap())
        };
        let a = run(1);
        let b = run(2);
        assert_eq!(a.values, b.values);
        // Replica slices are stable across calls and replicas differ.
        assert_eq!(a.sample_path(0).unwrap(), b.sample_path(0).unwrap());
        assert_ne!(a.sample_path(0).unwrap(), a.sample_path(1).unwrap());
    }

    #[test]
    fn batching_reproduces_monolithic_runs() {
        let g = small_grid();
        let m = InitialMeasure::dirac_origin();
        let rho = RhoSpec::pam(1.0);
        let s = qspec();
        let full = simulate(&m, &rho, &g, NoiseSeed::new(5), 6, &s).unwrap();
        let head = simulate_batch(&m, &rho, &g, NoiseSeed::new(5), 0, 3, &s).unwrap();
        let tail = simulate_batch(&m, &rho, &g, NoiseSeed::new(5), 3, 3, &s).unwrap();
        assert_eq!(full.sample_path(1).unwrap(), head.sample_path(1).unwrap());
        assert_eq!(full.sample_path(4).unwrap(), tail.sample_path(1).unwrap());
    }

    #[test]
    fn distinct_seeds_differ() {
        let g = small_grid();
        let m = InitialMeasure::dirac_origin();
        let rho = RhoSpec::pam(1.0);
        let s = qspec();
        let a = simulate(&m, &rho, &g, NoiseSeed::new(1), 1, &s).unwrap();
        let b = simulate(&m, &rho, &g, NoiseSeed::new(2), 1, &s).unwrap();
        assert_ne!(a.values, b.values);
    }

    #[test]
    fn pam_ensemble_mean_tracks_j0() {
        // Multiplicative noise has zero-mean martingale part: the ensemble
        // mean converges to the homogeneous solution.
        let g = GridSpec::new(1.0, 4.0, 80, 0.2, 128, 0.5)
            .unwrap()
            .with_snapshot_every(128)
            .unwrap();
        let m = InitialMeasure::dirac_origin();
        let rho = RhoSpec::pam(1.0);
        let reps = 4000;
        let ens = simulate(&m, &rho, &g, NoiseSeed::new(11), reps, &qspec()).unwrap();
        let ci = ens.col_index(0.0).unwrap();
        let last = ens.n_times() - 1;
        let vals: Vec<f64> = (0..reps).map(|r| ens.value(r, last, ci)).collect();
        let mean = vals.iter().sum::<f64>() / reps as f64;
        let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / reps as f64;
        let se = (var / reps as f64).sqrt();
        // Compare against the discrete heat evolution of the deposited
        // initial slice (the mean of the scheme), not the continuum J0.
        let oracle = discrete_second_moment(&m, 0.0, 0.0, &g, &[0.0], &qspec()).unwrap();
        let discrete_mean = oracle[0].sqrt();
        assert!(
            (mean - discrete_mean).abs() < 2.5 * se,
            "mean {mean} vs discrete {discrete_mean} (se {se})"
        );
    }

    #[test]
    fn atom_on_cell_boundary_goes_left() {
        let g = GridSpec::new(1.0, 4.0, 80, 0.2, 128, 1.0).unwrap();
        // dx = 0.1; boundary between nodes at 0.0 and 0.1 sits at 0.05.
        let m = InitialMeasure::dirac(0.05, 1.0).unwrap();
        let u0 = initial_slice(&m, &g);
        let j_left = ((0.0 + 4.0) / 0.1f64).round() as usize;
        assert_eq!(u0[j_left], 10.0);
        assert_eq!(u0[j_left + 1], 0.0);
    }

    #[test]
    fn discrete_oracle_matches_mc_for_pam_dirac() {
        let g = GridSpec::new(1.0, 4.0, 80, 0.25, 160, 0.5)
            .unwrap()
            .with_snapshot_every(160)
            .unwrap();
        let m = InitialMeasure::dirac_origin();
        let rho = RhoSpec::pam(1.0);
        let reps = 6000;
        let ens = simulate(&m, &rho, &g, NoiseSeed::new(21), reps, &qspec()).unwrap();
        let ci = ens.col_index(0.0).unwrap();
        let last = ens.n_times() - 1;
        let sq: Vec<f64> = (0..reps).map(|r| ens.value(r, last, ci).powi(2)).collect();
        let mean = sq.iter().sum::<f64>() / reps as f64;
        let var = sq.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / reps as f64;
        let se = (var / reps as f64).sqrt();
        let oracle = discrete_second_moment(&m, 1.0, 0.0, &g, &[0.0], &qspec()).unwrap()[0];
        assert!(
            (mean - oracle).abs() < 3.5 * se,
            "MC {mean} vs closure {oracle} (se {se})"
        );
    }
}
