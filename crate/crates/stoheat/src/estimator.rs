//! Empirical Holder-exponent estimation from simulated ensembles.
//!
//! The estimator inverts the Kolmogorov moment criterion: it tabulates the
//! structure function `E|X(z + lag) - X(z)|^p` over a window of anchor
//! points (replica-wise means first, then anchor averaging, so standard
//! errors rest on independent replicas), fits `log moment` against
//! `log lag` by weighted least squares, and reports `slope / p` as the
//! exponent.
//!
//! Two anchor policies are provided. `Window` uses every stored node in a
//! fixed space-time window — the interior regime. `NearZero` shrinks the
//! anchor set with the lag (times within one lag of the initial time,
//! locations within the diffusive range of the density's rough point), so
//! the fitted slope tracks the initial-time regularity rather than the
//! interior one.

use crate::error::{Error, Result};
use crate::measure::{classify, InitialMeasure};
use crate::moments::RhoSpec;
use crate::quad::{self, QuadratureSpec};
use crate::simulate::{simulate_batch, FieldEnsemble, GridSpec, NoiseSeed};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Anisotropic distance `sum_i |x_i - y_i|^(alpha_i)` with exponents in
/// (0, 1]; a metric, though not norm-induced unless every exponent is 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnisotropicMetric {
    alphas: Vec<f64>,
}

impl AnisotropicMetric {
    pub fn new(alphas: Vec<f64>) -> Result<Self> {
        if alphas.is_empty() || alphas.iter().any(|a| !(*a > 0.0 && *a <= 1.0)) {
            return Err(Error::domain(
                "AnisotropicMetric::new",
                "exponents must lie in (0, 1]",
            ));
        }
        Ok(AnisotropicMetric { alphas })
    }

    pub fn distance(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        if x.len() != self.alphas.len() || y.len() != self.alphas.len() {
            return Err(Error::domain(
                "AnisotropicMetric::distance",
                "dimension mismatch",
            ));
        }
        Ok(x.iter()
            .zip(y)
            .zip(&self.alphas)
            .map(|((a, b), alpha)| (a - b).abs().powf(*alpha))
            .sum())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Time,
    Space,
}

/// Which field the increments are taken on: the full solution `u` or the
/// stochastic convolution `I = u - J0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldKind {
    U,
    I,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub t_lo: f64,
    pub t_hi: f64,
    pub x_lo: f64,
    pub x_hi: f64,
}

impl Window {
    fn contains_t(&self, t: f64) -> bool {
        (self.t_lo - 1e-12..=self.t_hi + 1e-12).contains(&t)
    }
    fn contains_x(&self, x: f64) -> bool {
        (self.x_lo - 1e-12..=self.x_hi + 1e-12).contains(&x)
    }
}

/// Anchor policy; see the module docs.
///
/// `NearZero` implements windows that shrink onto the initial stored time
/// with a fixed *relative* stencil, so every lag samples the same set of
/// rescaled offsets and the structure-function prefactor is
/// scale-invariant (uniform-in-grid anchors would re-weight the rough
/// point differently at every lag and corrupt the slope):
///
/// * time lag `l`: anchors `t = t0 + (j/16) l`, `j = 0..15`, at the
///   origin column (lag must be a multiple of 16 stored strides);
/// * space lag `l`: anchors `x = x0 - (i/4) l`, `i = 0..4`, at rows
///   `t = t0 + j (l/4)^2 / nu * cfl`, `j = 0..7`, where the row spacing
///   follows the grid's own diffusive scaling (lag must be a multiple of
///   4 cells).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum AnchorMode {
    Window { window: Window },
    NearZero { space_origin: f64 },
}

const NEAR_ZERO_TIME_STENCIL: usize = 16;
const NEAR_ZERO_SPACE_STENCIL: usize = 4;
const NEAR_ZERO_SPACE_ROWS: usize = 8;

/// One structure-function row.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LagMoment {
    pub lag: f64,
    pub moment: f64,
    pub std_error: f64,
    pub replicas: usize,
    pub anchors: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IncrementTable {
    pub p: u32,
    pub direction: Direction,
    pub field: FieldKind,
    pub mode: AnchorMode,
    pub rows: Vec<LagMoment>,
}

fn nearest_col(xs: &[f64], x0: f64, dx: f64) -> Result<usize> {
    let rel = (x0 - xs[0]) / dx;
    let i = rel.round();
    if i < 0.0 || i as usize >= xs.len() || (rel - i).abs() > 1e-6 {
        return Err(Error::domain(
            "moment_increments",
            format!("origin {x0} is not a stored column"),
        ));
    }
    Ok(i as usize)
}

/// Welford accumulator with a running lag-1 cross-product over the
/// sequence of per-replica means.
#[derive(Debug, Clone, Default)]
struct ReplicaStats {
    count: usize,
    mean: f64,
    m2: f64,
    prev: Option<f64>,
    cross: f64,
}

impl ReplicaStats {
    fn push(&mut self, v: f64) {
        self.count += 1;
        let d = v - self.mean;
        self.mean += d / self.count as f64;
        self.m2 += d * (v - self.mean);
        if let Some(p) = self.prev {
            self.cross += p * v;
        }
        self.prev = Some(v);
    }

    /// Standard error of the mean over independent replicas, inflated by
    /// the effective-sample-size correction from the lag-1 autocorrelation
    /// of the replica-mean sequence (a guard that stays ~1 for honestly
    /// independent streams).
    fn std_error(&self) -> f64 {
        if self.count < 2 {
            return 0.0;
        }
        let n = self.count as f64;
        let var = self.m2 / (n - 1.0);
        let base = (var / n).sqrt();
        if var <= 0.0 {
            return 0.0;
        }
        let rho1 = ((self.cross / (n - 1.0)) - self.mean * self.mean) / var;
        let rho1 = rho1.clamp(-0.99, 0.99);
        if rho1 > 0.0 {
            base * ((1.0 + rho1) / (1.0 - rho1)).sqrt()
        } else {
            base
        }
    }
}

/// Streaming structure-function accumulator over ensemble batches.
///
/// Batches must share grid shape and stored axes; replica statistics are
/// merged in the order batches are pushed, which together with the global
/// replica indexing keeps results independent of the batch split.
pub struct IncrementAccumulator {
    p: u32,
    field: FieldKind,
    direction: Direction,
    mode: AnchorMode,
    lags: Vec<f64>,
    /// Per lag: (index pairs into the flattened replica slice, anchors).
    pairs: Option<Vec<Vec<(u32, u32)>>>,
    stats: Vec<ReplicaStats>,
    axes_fingerprint: Option<(usize, usize, f64, f64)>,
}

impl IncrementAccumulator {
    pub fn new(
        p: u32,
        field: FieldKind,
        direction: Direction,
        mode: AnchorMode,
        lags: Vec<f64>,
    ) -> Result<Self> {
        if p == 0 || p % 2 != 0 {
            return Err(Error::domain(
                "IncrementAccumulator::new",
                "p must be a positive even integer",
            ));
        }
        if lags.is_empty() {
            return Err(Error::domain("IncrementAccumulator::new", "no lags given"));
        }
        let mut sorted = lags.clone();
        sorted.sort_by(f64::total_cmp);
        if sorted.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::domain(
                "IncrementAccumulator::new",
                "lags must be strictly increasing",
            ));
        }
        Ok(IncrementAccumulator {
            p,
            field,
            direction,
            mode,
            lags: sorted,
            pairs: None,
            stats: Vec::new(),
            axes_fingerprint: None,
        })
    }

    fn build_pairs(&self, ens: &FieldEnsemble) -> Result<Vec<Vec<(u32, u32)>>> {
        let times = ens.stored_times();
        let xs = ens.stored_xs();
        let n_cols = xs.len();
        let stride = ens.grid().dt() * ens.grid().snapshot_every() as f64;
        let dx = ens.grid().dx();

        let mut all = Vec::with_capacity(self.lags.len());
        for &lag in &self.lags {
            let mut pairs = Vec::new();
            match (self.direction, self.mode) {
                (Direction::Time, AnchorMode::Window { window }) => {
                    let k = (lag / stride).round() as usize;
                    if k == 0 || ((lag - k as f64 * stride) / stride).abs() > 1e-6 {
                        return Err(Error::domain(
                            "moment_increments",
                            format!("time lag {lag} is not a multiple of the stored stride {stride}"),
                        ));
                    }
                    for ti in 0..times.len().saturating_sub(k) {
                        if !(window.contains_t(times[ti]) && window.contains_t(times[ti + k])) {
                            continue;
                        }
                        for (ci, &x) in xs.iter().enumerate() {
                            if window.contains_x(x) {
                                pairs.push((
                                    (ti * n_cols + ci) as u32,
                                    ((ti + k) * n_cols + ci) as u32,
                                ));
                            }
                        }
                    }
                }
                (Direction::Space, AnchorMode::Window { window }) => {
                    let k = (lag / dx).round() as usize;
                    if k == 0 || ((lag - k as f64 * dx) / dx).abs() > 1e-6 {
                        return Err(Error::domain(
                            "moment_increments",
                            format!("space lag {lag} is not a multiple of dx {dx}"),
                        ));
                    }
                    for (ti, &t) in times.iter().enumerate() {
                        if !window.contains_t(t) {
                            continue;
                        }
                        for ci in 0..n_cols.saturating_sub(k) {
                            if window.contains_x(xs[ci]) && window.contains_x(xs[ci + k]) {
                                pairs.push((
                                    (ti * n_cols + ci) as u32,
                                    (ti * n_cols + ci + k) as u32,
                                ));
                            }
                        }
                    }
                }
                (Direction::Time, AnchorMode::NearZero { space_origin }) => {
                    let k = (lag / stride).round() as usize;
                    if k == 0 || ((lag - k as f64 * stride) / stride).abs() > 1e-6 {
                        return Err(Error::domain(
                            "moment_increments",
                            format!("time lag {lag} is not a multiple of the stored stride {stride}"),
                        ));
                    }
                    if k % NEAR_ZERO_TIME_STENCIL != 0 {
                        return Err(Error::domain(
                            "moment_increments",
                            format!(
                                "near-zero time lag must cover {NEAR_ZERO_TIME_STENCIL} stored strides, got {k}"
                            ),
                        ));
                    }
                    let step = k / NEAR_ZERO_TIME_STENCIL;
                    let ci = nearest_col(xs, space_origin, dx)?;
                    for j in 0..NEAR_ZERO_TIME_STENCIL {
                        let ti = j * step;
                        if ti + k >= times.len() {
                            return Err(Error::domain(
                                "moment_increments",
                                format!("near-zero time lag {lag} exceeds the stored horizon"),
                            ));
                        }
                        pairs.push(((ti * n_cols + ci) as u32, ((ti + k) * n_cols + ci) as u32));
                    }
                }
                (Direction::Space, AnchorMode::NearZero { space_origin }) => {
                    let k = (lag / dx).round() as usize;
                    if k == 0 || ((lag - k as f64 * dx) / dx).abs() > 1e-6 {
                        return Err(Error::domain(
                            "moment_increments",
                            format!("space lag {lag} is not a multiple of dx {dx}"),
                        ));
                    }
                    if k % NEAR_ZERO_SPACE_STENCIL != 0 {
                        return Err(Error::domain(
                            "moment_increments",
                            format!(
                                "near-zero space lag must cover {NEAR_ZERO_SPACE_STENCIL} cells, got {k}"
                            ),
                        ));
                    }
                    let origin = nearest_col(xs, space_origin, dx)?;
                    let col_step = k / NEAR_ZERO_SPACE_STENCIL;
                    if origin < k {
                        return Err(Error::domain(
                            "moment_increments",
                            format!("near-zero space lag {lag} exceeds the stored window"),
                        ));
                    }
                    // Diffusive row spacing: (l/4)^2 in cell units means
                    // col_step^2 raw steps, i.e. the tau-fraction
                    // step^2 dt / (l^2/nu) = cfl/16 per row, a grid constant.
                    let raw_steps = col_step * col_step;
                    if raw_steps % ens.grid().snapshot_every() != 0 && raw_steps != 0 {
                        return Err(Error::domain(
                            "moment_increments",
                            format!(
                                "near-zero space lag {lag}: row spacing of {raw_steps} steps is not on the stored stride"
                            ),
                        ));
                    }
                    let row_step = raw_steps / ens.grid().snapshot_every();
                    for j in 0..NEAR_ZERO_SPACE_ROWS {
                        let ti = j * row_step;
                        if ti >= times.len() {
                            return Err(Error::domain(
                                "moment_increments",
                                format!("near-zero space rows for lag {lag} exceed the horizon"),
                            ));
                        }
                        for i in 0..=NEAR_ZERO_SPACE_STENCIL {
                            let ci = origin - i * col_step;
                            pairs.push(((ti * n_cols + ci) as u32, ((ti * n_cols) + ci + k) as u32));
                        }
                    }
                }
            }
            if pairs.is_empty() {
                return Err(Error::domain(
                    "moment_increments",
                    format!("no anchors available for lag {lag} (empty window or lag exceeds it)"),
                ));
            }
            all.push(pairs);
        }
        Ok(all)
    }

    pub fn push(&mut self, ens: &FieldEnsemble) -> Result<()> {
        let fp = (
            ens.n_times(),
            ens.n_cols(),
            ens.stored_times()[0],
            ens.stored_xs()[0],
        );
        if let Some(prev) = self.axes_fingerprint {
            if prev != fp {
                return Err(Error::domain(
                    "IncrementAccumulator::push",
                    "batch grid does not match earlier batches",
                ));
            }
        } else {
            self.axes_fingerprint = Some(fp);
            self.pairs = Some(self.build_pairs(ens)?);
            self.stats = vec![ReplicaStats::default(); self.lags.len()];
        }
        let pairs = self.pairs.as_ref().expect("initialized above");
        let half_p = (self.p / 2) as i32;
        // Per replica and lag: anchor mean of |increment|^p; replicas are
        // merged sequentially in global order.
        for r in 0..ens.replicas() {
            let slice = ens.sample_path(r)?;
            let means: Vec<f64> = pairs
                .par_iter()
                .map(|lag_pairs| {
                    let mut sum = 0.0;
                    match self.field {
                        FieldKind::U => {
                            for &(s, d) in lag_pairs {
                                let diff = slice[d as usize] - slice[s as usize];
                                sum += (diff * diff).powi(half_p);
                            }
                        }
                        FieldKind::I => {
                            for &(s, d) in lag_pairs {
                                let (s, d) = (s as usize, d as usize);
                                let a = slice[s] - ens.j0_at(s / ens.n_cols(), s % ens.n_cols());
                                let b = slice[d] - ens.j0_at(d / ens.n_cols(), d % ens.n_cols());
                                let diff = b - a;
                                sum += (diff * diff).powi(half_p);
                            }
                        }
                    }
                    sum / lag_pairs.len() as f64
                })
                .collect();
            for (stat, m) in self.stats.iter_mut().zip(means) {
                stat.push(m);
            }
        }
        Ok(())
    }

    pub fn finalize(&self) -> Result<IncrementTable> {
        let pairs = self
            .pairs
            .as_ref()
            .ok_or_else(|| Error::domain("IncrementAccumulator::finalize", "no batches pushed"))?;
        let rows = self
            .lags
            .iter()
            .zip(&self.stats)
            .zip(pairs)
            .map(|((&lag, st), lp)| LagMoment {
                lag,
                moment: st.mean,
                std_error: st.std_error(),
                replicas: st.count,
                anchors: lp.len(),
            })
            .collect();
        Ok(IncrementTable {
            p: self.p,
            direction: self.direction,
            field: self.field,
            mode: self.mode,
            rows,
        })
    }
}

/// Structure function of one ensemble; see [`IncrementAccumulator`] for
/// the batched variant.
pub fn moment_increments(
    ens: &FieldEnsemble,
    p: u32,
    field: FieldKind,
    direction: Direction,
    window: &Window,
    lags: &[f64],
) -> Result<IncrementTable> {
    let mut acc = IncrementAccumulator::new(
        p,
        field,
        direction,
        AnchorMode::Window { window: *window },
        lags.to_vec(),
    )?;
    acc.push(ens)?;
    acc.finalize()
}

/// A fitted Holder exponent.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HolderEstimate {
    pub exponent: f64,
    pub std_error: f64,
    pub p: u32,
    pub direction: Direction,
    pub field: FieldKind,
    pub lags: Vec<f64>,
    pub r_squared: f64,
    /// Rows excluded from the fit for non-positive moments.
    pub excluded: usize,
}

/// Weighted least squares of `log(moment)` on `log(lag)`; the exponent is
/// `slope / p`. Rows with non-positive moments are excluded and reported.
pub fn fit_exponent(table: &IncrementTable) -> Result<HolderEstimate> {
    let usable: Vec<&LagMoment> = table
        .rows
        .iter()
        .filter(|r| r.moment > 0.0 && r.moment.is_finite())
        .collect();
    let excluded = table.rows.len() - usable.len();
    if usable.len() < 4 {
        return Err(Error::FitFailure(format!(
            "need at least 4 usable lags, have {}",
            usable.len()
        )));
    }
    let span = usable.last().unwrap().lag / usable[0].lag;
    if span.log10() < 1.0 - 1e-9 {
        return Err(Error::FitFailure(format!(
            "lags span only {:.2} decades; need at least one",
            span.log10()
        )));
    }

    let pts: Vec<(f64, f64, f64)> = usable
        .iter()
        .map(|r| {
            let y = r.moment.ln();
            let sigma_y = if r.std_error > 0.0 {
                (r.std_error / r.moment).max(1e-12)
            } else {
                0.0
            };
            (r.lag.ln(), y, sigma_y)
        })
        .collect();
    let all_exact = pts.iter().all(|p| p.2 == 0.0);
    let weights: Vec<f64> = pts
        .iter()
        .map(|p| if all_exact { 1.0 } else { 1.0 / (p.2 * p.2).max(1e-24) })
        .collect();

    let sw: f64 = weights.iter().sum();
    let xw: f64 = pts.iter().zip(&weights).map(|(p, w)| w * p.0).sum::<f64>() / sw;
    let yw: f64 = pts.iter().zip(&weights).map(|(p, w)| w * p.1).sum::<f64>() / sw;
    let sxx: f64 = pts
        .iter()
        .zip(&weights)
        .map(|(p, w)| w * (p.0 - xw) * (p.0 - xw))
        .sum();
    let sxy: f64 = pts
        .iter()
        .zip(&weights)
        .map(|(p, w)| w * (p.0 - xw) * (p.1 - yw))
        .sum();
    if sxx <= 0.0 {
        return Err(Error::FitFailure("degenerate lag grid".into()));
    }
    let slope = sxy / sxx;
    let intercept = yw - slope * xw;

    let ss_res: f64 = pts
        .iter()
        .zip(&weights)
        .map(|(p, w)| w * (p.1 - intercept - slope * p.0).powi(2))
        .sum();
    let ss_tot: f64 = pts
        .iter()
        .zip(&weights)
        .map(|(p, w)| w * (p.1 - yw).powi(2))
        .sum();
    let r_squared = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };

    let dof = (pts.len() as f64 - 2.0).max(1.0);
    let var_scale = if all_exact {
        ss_res / dof
    } else {
        // Formal WLS variance, inflated when the fit is worse than the
        // error bars claim.
        (ss_res / dof).max(1.0)
    };
    let slope_se = (var_scale / sxx).sqrt();

    Ok(HolderEstimate {
        exponent: slope / table.p as f64,
        std_error: slope_se / table.p as f64,
        p: table.p,
        direction: table.direction,
        field: table.field,
        lags: usable.iter().map(|r| r.lag).collect(),
        r_squared,
        excluded,
    })
}

/// Batched driver: simulate `replicas` in batches of `batch`, accumulate
/// structure functions, and fit. Returns the lag table with the estimate.
#[allow(clippy::too_many_arguments)]
pub fn increment_study(
    measure: &InitialMeasure,
    rho: &RhoSpec,
    grid: &GridSpec,
    seed: NoiseSeed,
    replicas: usize,
    batch: usize,
    p: u32,
    field: FieldKind,
    direction: Direction,
    mode: AnchorMode,
    lags: &[f64],
    spec: &QuadratureSpec,
) -> Result<(IncrementTable, HolderEstimate)> {
    let mut acc = IncrementAccumulator::new(p, field, direction, mode, lags.to_vec())?;
    let batch = batch.max(1);
    let mut done = 0;
    while done < replicas {
        let take = batch.min(replicas - done);
        let ens = simulate_batch(measure, rho, grid, seed, done, take, spec)?;
        acc.push(&ens)?;
        done += take;
    }
    let table = acc.finalize()?;
    let est = fit_exponent(&table)?;
    Ok((table, est))
}

/// Near-initial-time exponent study; requires a Holder-classified density
/// and a warm-started grid so the stored axis begins at `t0 = dt`.
#[allow(clippy::too_many_arguments)]
pub fn near_zero_exponent(
    measure: &InitialMeasure,
    rho: &RhoSpec,
    grid: &GridSpec,
    seed: NoiseSeed,
    replicas: usize,
    batch: usize,
    p: u32,
    direction: Direction,
    lags: &[f64],
    spec: &QuadratureSpec,
) -> Result<(IncrementTable, HolderEstimate)> {
    if classify(measure).holder_alpha.is_none() {
        return Err(Error::domain(
            "near_zero_exponent",
            "measure has no Holder-classified density",
        ));
    }
    if !grid.warm_start() {
        return Err(Error::domain(
            "near_zero_exponent",
            "near-zero windows need a warm-started grid",
        ));
    }
    increment_study(
        measure,
        rho,
        grid,
        seed,
        replicas,
        batch,
        p,
        FieldKind::U,
        direction,
        AnchorMode::NearZero { space_origin: 0.0 },
        lags,
        spec,
    )
}

/// Smooth compactly supported test function: a bump
/// `height * exp(1 - 1/(1 - (x/radius)^2))` on `(-radius, radius)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BumpFunction {
    pub radius: f64,
    pub height: f64,
}

impl BumpFunction {
    pub fn eval(&self, x: f64) -> f64 {
        let u = x / self.radius;
        if u.abs() >= 1.0 {
            0.0
        } else {
            self.height * (1.0 - 1.0 / (1.0 - u * u)).exp()
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct WeakLimitPoint {
    pub t: f64,
    pub error_sq: f64,
    pub std_error: f64,
}

/// Estimates `E[(int u(t,x) phi(x) dx - int phi dmu)^2]` along a list of
/// times from a seeded ensemble. The spatial integral is the grid Riemann
/// sum over the observation window, which must cover the bump's support.
#[allow(clippy::too_many_arguments)]
pub fn weak_limit_error(
    measure: &InitialMeasure,
    rho: &RhoSpec,
    grid: &GridSpec,
    phi: &BumpFunction,
    t_list: &[f64],
    seed: NoiseSeed,
    replicas: usize,
    batch: usize,
    spec: &QuadratureSpec,
) -> Result<Vec<WeakLimitPoint>> {
    if grid.obs_half_width() < phi.radius {
        return Err(Error::domain(
            "weak_limit_error",
            "observation window does not cover the test function support",
        ));
    }
    // Target: integral of phi against the measure.
    let mut target = 0.0;
    for &(loc, w) in measure.atoms() {
        target += w * phi.eval(loc);
    }
    if let Some(d) = measure.density() {
        target += quad::integrate(
            |x| d.eval(x) * phi.eval(x),
            -phi.radius,
            phi.radius,
            spec,
        )?;
    }

    let mut stats: Vec<ReplicaStats> = vec![ReplicaStats::default(); t_list.len()];
    let dx = grid.dx();
    let batch = batch.max(1);
    let mut done = 0;
    let mut time_indices: Option<Vec<usize>> = None;
    while done < replicas {
        let take = batch.min(replicas - done);
        let ens = simulate_batch(measure, rho, grid, seed, done, take, spec)?;
        let idx = match &time_indices {
            Some(v) => v.clone(),
            None => {
                let v: Result<Vec<usize>> = t_list.iter().map(|&t| ens.time_index(t)).collect();
                let v = v?;
                time_indices = Some(v.clone());
                v
            }
        };
        let phi_row: Vec<f64> = ens.stored_xs().iter().map(|&x| phi.eval(x)).collect();
        for r in 0..take {
            for (k, &ti) in idx.iter().enumerate() {
                let mut s = 0.0;
                for ci in 0..ens.n_cols() {
                    s += ens.value(r, ti, ci) * phi_row[ci];
                }
                let err = s * dx - target;
                stats[k].push(err * err);
            }
        }
        done += take;
    }
    Ok(t_list
        .iter()
        .zip(&stats)
        .map(|(&t, st)| WeakLimitPoint {
            t,
            error_sq: st.mean,
            std_error: st.std_error(),
        })
        .collect())
}
