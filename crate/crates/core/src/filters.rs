//! Bootstrap particle filter on Brownian increments and the delta particle
//! filter on fine/coarse coupled increments.
//!
//! Both filters resample multinomially at every unit time and finish with a
//! grand selection of one trajectory at `t = T`. Each particle index owns a
//! counter-based random stream, so the increments a particle draws do not
//! depend on how propagation is scheduled; resampling draws come from the
//! caller's generator. Weight sums are reduced serially in particle order,
//! which keeps parallel and serial runs bitwise identical.

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::models::{log_g_ssm, log_kappa_sv, ModelKind, ModelParams, ObservationSeries};
use crate::rng::{ParticleStreams, StreamRng};
use crate::sve::{coarsen_slice, fill_increments, EulerScheme, EulerState, IncrementPath, Level};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FilterOptions {
    pub particles: usize,
    /// Propagate particles on the rayon pool.
    pub parallel: bool,
}

impl FilterOptions {
    pub fn serial(particles: usize) -> Self {
        FilterOptions { particles, parallel: false }
    }
}

/// Selected trajectory and normalizing-constant estimate of a single-level
/// filter run.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutput {
    pub path: IncrementPath,
    /// `V` at unit times `1..=T` along the selected path.
    pub skeleton: Vec<f64>,
    /// Per-unit-time log weights of the selected path.
    pub log_kappa: Vec<f64>,
    pub log_z: f64,
}

impl FilterOutput {
    pub fn z_hat(&self) -> f64 {
        self.log_z.exp()
    }
}

/// Output of the delta particle filter: one coupled pair, with the coarse
/// increments the pairwise sums of the fine ones.
#[derive(Debug, Clone, PartialEq)]
pub struct CoupledOutput {
    pub fine: IncrementPath,
    pub coarse: IncrementPath,
    pub fine_skeleton: Vec<f64>,
    pub coarse_skeleton: Vec<f64>,
    pub log_kappa_fine: Vec<f64>,
    pub log_kappa_coarse: Vec<f64>,
    pub log_z: f64,
}

impl CoupledOutput {
    pub fn z_hat(&self) -> f64 {
        self.log_z.exp()
    }
}

/// Indices of `n` independent categorical draws.
pub fn multinomial_indices<R: Rng + ?Sized>(weights: &[f64], n: usize, rng: &mut R) -> Result<Vec<usize>> {
    if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
        return Err(crate::error::domain("filters::multinomial_resample", "weights must be finite and non-negative"));
    }
    let total: f64 = weights.iter().sum();
    if total == 0.0 {
        return Err(Error::DegenerateWeights);
    }
    if (total - 1.0).abs() > 1e-9 {
        return Err(crate::error::domain(
            "filters::multinomial_resample",
            format!("weights sum to {total}, expected 1"),
        ));
    }
    let dist = WeightedIndex::new(weights).map_err(|_| Error::DegenerateWeights)?;
    Ok((0..n).map(|_| dist.sample(rng)).collect())
}

/// Sample `n` items with replacement using probabilities `weights`.
pub fn multinomial_resample<T: Clone, R: Rng + ?Sized>(
    weights: &[f64],
    items: &[T],
    n: usize,
    rng: &mut R,
) -> Result<Vec<T>> {
    if weights.len() != items.len() {
        return Err(crate::error::domain("filters::multinomial_resample", "weights and items differ in length"));
    }
    Ok(multinomial_indices(weights, n, rng)?.into_iter().map(|i| items[i].clone()).collect())
}

pub(crate) fn log_weight(
    theta: &ModelParams,
    y: &ObservationSeries,
    level: Level,
    t: usize,
    state: &EulerState,
) -> Result<f64> {
    let n = level.steps_per_unit();
    let lw = match theta.kind {
        ModelKind::StateSpace => log_g_ssm(theta, state.v[t * n], y.at(t))?,
        ModelKind::StochVol => {
            let seg = (t - 1) * n..t * n;
            log_kappa_sv(theta, level, t, &state.v[seg.clone()], &state.w[seg], y.prev(t), y.at(t))?
        }
    };
    Ok(if lw.is_nan() { f64::NEG_INFINITY } else { lw })
}

struct Context<'a> {
    theta: &'a ModelParams,
    y: &'a ObservationSeries,
    level: Level,
    fine: EulerScheme,
    coarse: Option<EulerScheme>,
}

trait Walker: Clone + Send + Sync {
    fn start(ctx: &Context<'_>) -> Self;
    fn extend(&mut self, ctx: &Context<'_>, block: &[f64]);
    fn weigh(&mut self, ctx: &Context<'_>, t: usize) -> Result<f64>;
}

#[derive(Clone)]
struct Single {
    state: EulerState,
    log_kappa: Vec<f64>,
}

impl Walker for Single {
    fn start(ctx: &Context<'_>) -> Self {
        let cap = ctx.level.grid_len(ctx.y.len());
        Single { state: EulerState::with_capacity(ctx.theta.vol.v0, cap), log_kappa: Vec::with_capacity(ctx.y.len()) }
    }

    fn extend(&mut self, ctx: &Context<'_>, block: &[f64]) {
        ctx.fine.extend(&mut self.state, block);
    }

    fn weigh(&mut self, ctx: &Context<'_>, t: usize) -> Result<f64> {
        let lw = log_weight(ctx.theta, ctx.y, ctx.level, t, &self.state)?;
        self.log_kappa.push(lw);
        Ok(lw)
    }
}

#[derive(Clone)]
struct Coupled {
    fine: EulerState,
    coarse: EulerState,
    log_kappa_fine: Vec<f64>,
    log_kappa_coarse: Vec<f64>,
}

impl Walker for Coupled {
    fn start(ctx: &Context<'_>) -> Self {
        let cap = ctx.level.grid_len(ctx.y.len());
        let v0 = ctx.theta.vol.v0;
        Coupled {
            fine: EulerState::with_capacity(v0, cap),
            coarse: EulerState::with_capacity(v0, cap / 2),
            log_kappa_fine: Vec::with_capacity(ctx.y.len()),
            log_kappa_coarse: Vec::with_capacity(ctx.y.len()),
        }
    }

    fn extend(&mut self, ctx: &Context<'_>, block: &[f64]) {
        ctx.fine.extend(&mut self.fine, block);
        let coarse = coarsen_slice(block);
        ctx.coarse.as_ref().expect("coupled context").extend(&mut self.coarse, &coarse);
    }

    fn weigh(&mut self, ctx: &Context<'_>, t: usize) -> Result<f64> {
        let lf = log_weight(ctx.theta, ctx.y, ctx.level, t, &self.fine)?;
        let lc = log_weight(ctx.theta, ctx.y, Level(ctx.level.0 - 1), t, &self.coarse)?;
        self.log_kappa_fine.push(lf);
        self.log_kappa_coarse.push(lc);
        Ok(lf.max(lc))
    }
}

/// Normalized weights and `log(mean(exp(lw)))`; `None` if every weight is zero.
pub(crate) fn normalize_log_weights(lw: &[f64]) -> Option<(Vec<f64>, f64)> {
    let max = lw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return None;
    }
    let mut u: Vec<f64> = lw.iter().map(|x| (x - max).exp()).collect();
    let s: f64 = u.iter().sum();
    u.iter_mut().for_each(|x| *x /= s);
    Some((u, max + (s / lw.len() as f64).ln()))
}

fn run<W: Walker, R: Rng + ?Sized>(
    ctx: &Context<'_>,
    opts: FilterOptions,
    op: &'static str,
    rng: &mut R,
) -> Result<(W, f64)> {
    let n = opts.particles;
    let horizon = ctx.y.len();
    if n == 0 {
        return Err(crate::error::domain(op, "need at least one particle"));
    }
    let block_len = ctx.level.steps_per_unit();
    let streams = ParticleStreams::from_rng(rng);
    let mut particles: Vec<(W, StreamRng)> = (0..n).map(|i| (W::start(ctx), streams.stream(i))).collect();
    let mut lw = vec![0.0; n];
    let mut log_z = 0.0;

    let propagate = |p: &mut (W, StreamRng), t: usize, block: &mut Vec<f64>| -> Result<f64> {
        block.resize(block_len, 0.0);
        fill_increments(ctx.level, block, &mut p.1);
        p.0.extend(ctx, block);
        p.0.weigh(ctx, t)
    };

    for t in 1..=horizon {
        // fresh increments over (t-1, t], then weights at t
        if opts.parallel {
            let res: Vec<Result<f64>> =
                particles.par_iter_mut().map_init(Vec::new, |buf, p| propagate(p, t, buf)).collect();
            for (slot, r) in lw.iter_mut().zip(res) {
                *slot = r?;
            }
        } else {
            let mut buf = Vec::with_capacity(block_len);
            for (slot, p) in lw.iter_mut().zip(particles.iter_mut()) {
                *slot = propagate(p, t, &mut buf)?;
            }
        }
        let (u, log_mean) = normalize_log_weights(&lw).ok_or(Error::FilterCollapse { op, t })?;
        log_z += log_mean;
        if t == horizon {
            // grand selection
            let k = multinomial_indices(&u, 1, rng).map_err(|_| Error::FilterCollapse { op, t })?[0];
            let chosen = particles.swap_remove(k).0;
            return Ok((chosen, log_z));
        }
        let idx = multinomial_indices(&u, n, rng).map_err(|_| Error::FilterCollapse { op, t })?;
        let ancestors: Vec<W> = particles.iter().map(|p| p.0.clone()).collect();
        for (p, &a) in particles.iter_mut().zip(&idx) {
            p.0.clone_from(&ancestors[a]);
        }
    }
    unreachable!("horizon is at least one")
}

fn check_inputs(op: &'static str, y: &ObservationSeries, theta: &ModelParams) -> Result<()> {
    if y.is_empty() {
        return Err(crate::error::domain(op, "need at least one observation"));
    }
    theta.validate_for_simulation().map_err(|e| crate::error::domain(op, e.to_string()))
}

fn skeleton(state: &EulerState, level: Level, horizon: usize) -> Vec<f64> {
    let n = level.steps_per_unit();
    (1..=horizon).map(|t| state.v[t * n]).collect()
}

/// Single-level particle filter with `n` particles.
pub fn particle_filter<R: Rng + ?Sized>(
    y: &ObservationSeries,
    level: Level,
    n: usize,
    theta: &ModelParams,
    rng: &mut R,
) -> Result<FilterOutput> {
    particle_filter_with(y, level, FilterOptions::serial(n), theta, rng)
}

pub fn particle_filter_with<R: Rng + ?Sized>(
    y: &ObservationSeries,
    level: Level,
    opts: FilterOptions,
    theta: &ModelParams,
    rng: &mut R,
) -> Result<FilterOutput> {
    const OP: &str = "particle_filter";
    check_inputs(OP, y, theta)?;
    let horizon = y.len();
    let ctx =
        Context { theta, y, level, fine: EulerScheme::new(theta.vol, &theta.kernel, level, horizon), coarse: None };
    let (w, log_z): (Single, f64) = run(&ctx, opts, OP, rng)?;
    Ok(FilterOutput {
        skeleton: skeleton(&w.state, level, horizon),
        path: IncrementPath { level, horizon, values: w.state.w },
        log_kappa: w.log_kappa,
        log_z,
    })
}

/// Delta particle filter at level `l ≥ 1`, coupling levels `l` and `l - 1`.
pub fn delta_particle_filter<R: Rng + ?Sized>(
    y: &ObservationSeries,
    level: Level,
    n: usize,
    theta: &ModelParams,
    rng: &mut R,
) -> Result<CoupledOutput> {
    delta_particle_filter_with(y, level, FilterOptions::serial(n), theta, rng)
}

pub fn delta_particle_filter_with<R: Rng + ?Sized>(
    y: &ObservationSeries,
    level: Level,
    opts: FilterOptions,
    theta: &ModelParams,
    rng: &mut R,
) -> Result<CoupledOutput> {
    const OP: &str = "delta_particle_filter";
    let coarse_level = level.coarser()?;
    check_inputs(OP, y, theta)?;
    let horizon = y.len();
    let ctx = Context {
        theta,
        y,
        level,
        fine: EulerScheme::new(theta.vol, &theta.kernel, level, horizon),
        coarse: Some(EulerScheme::new(theta.vol, &theta.kernel, coarse_level, horizon)),
    };
    let (w, log_z): (Coupled, f64) = run(&ctx, opts, OP, rng)?;
    Ok(CoupledOutput {
        fine_skeleton: skeleton(&w.fine, level, horizon),
        coarse_skeleton: skeleton(&w.coarse, coarse_level, horizon),
        fine: IncrementPath { level, horizon, values: w.fine.w },
        coarse: IncrementPath { level: coarse_level, horizon, values: w.coarse.w },
        log_kappa_fine: w.log_kappa_fine,
        log_kappa_coarse: w.log_kappa_coarse,
        log_z,
    })
}
