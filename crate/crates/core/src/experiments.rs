//! Synthetic data, the cost-versus-MSE rate study, return statistics and
//! posterior predictive summaries.

use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::filters::FilterOutput;
use crate::functional::Functional;
use crate::mcmc::{ChainRecord, Start};
use crate::models::{ModelKind, ModelParams, ObservationSeries};
use crate::multilevel::{
    choose_levels_with, h_log_weights, level_seed, ml_estimate, single_level_allocation, single_level_estimate,
    AllocationConfig, MultilevelRun, RunOptions,
};
use crate::rng::SeedNode;
use crate::sve::{coarsen, euler_volatility_path, sample_increments, IncrementPath, Level, VolatilityPath};

/// Simulated observations with the latent path that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub kind: ModelKind,
    pub true_theta: ModelParams,
    pub data_level: Level,
    pub y: ObservationSeries,
    pub latent: VolatilityPath,
}

impl SyntheticDataset {
    /// `exp(y_t)` for `t = 0..T`; meaningful for the stochastic volatility model.
    pub fn prices(&self) -> Vec<f64> {
        std::iter::once(self.y.y0).chain(self.y.y.iter().copied()).map(f64::exp).collect()
    }
}

fn check_simulation_params(theta: &ModelParams) -> Result<()> {
    let mut t = *theta;
    // zero observation noise is allowed when simulating
    if t.kind == ModelKind::StateSpace && t.sigma_obs == 0.0 {
        t.sigma_obs = 1.0;
    }
    t.validate_for_simulation()
}

/// Observations given the volatility grid `v`, its driving increments `w`
/// and one standard normal per unit time.
fn observe(theta: &ModelParams, level: Level, v: &[f64], w: &[f64], noise: &[f64]) -> Vec<f64> {
    let n = level.steps_per_unit();
    let mut y = Vec::with_capacity(noise.len());
    let mut prev = 0.0;
    for (t, xi) in (1..=noise.len()).zip(noise) {
        let next = match theta.kind {
            ModelKind::StateSpace => v[t * n] + theta.sigma_obs * xi,
            ModelKind::StochVol => {
                let (mut cross, mut quad) = (0.0, 0.0);
                for k in (t - 1) * n..t * n {
                    let a = v[k].abs();
                    cross += a.sqrt() * w[k];
                    quad += a;
                }
                let drift = if theta.include_drift { theta.r } else { 0.0 };
                let sd = ((1.0 - theta.rho * theta.rho) * level.step() * quad).sqrt();
                prev + drift + theta.rho * cross + sd * xi
            }
        };
        y.push(next);
        prev = next;
    }
    y
}

fn standard_normals<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Simulate `V` at `data_level` and observations at unit times `1..=T`
/// (`y_0 = 0`). Increments are drawn first, then the observation noise.
pub fn generate_synthetic<R: Rng + ?Sized>(
    theta: &ModelParams,
    horizon: usize,
    data_level: Level,
    rng: &mut R,
) -> Result<SyntheticDataset> {
    check_simulation_params(theta)?;
    let w = sample_increments(data_level, horizon, rng)?;
    let latent = euler_volatility_path(&theta.vol, &theta.kernel, &w);
    let noise = standard_normals(horizon, rng);
    let y = observe(theta, data_level, &latent.values, &w.values, &noise);
    Ok(SyntheticDataset {
        kind: theta.kind,
        true_theta: *theta,
        data_level,
        y: ObservationSeries::new(0.0, y)?,
        latent,
    })
}

/// Summary of a return series. Skewness and kurtosis are standardized
/// central moments (population form, kurtosis not excess); both are `None`
/// when the series has zero variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReturnStats {
    pub n: usize,
    pub mean: f64,
    /// Unbiased sample variance.
    pub variance: f64,
    pub skewness: Option<f64>,
    pub kurtosis: Option<f64>,
}

/// `log(p_i) - log(p_{i-1})`.
pub fn log_returns(prices: &[f64]) -> Result<Vec<f64>> {
    if let Some((i, p)) = prices.iter().enumerate().find(|(_, p)| !(**p > 0.0 && p.is_finite())) {
        return Err(domain("experiments::return_stats", format!("price {i} is not positive: {p}")));
    }
    Ok(prices.windows(2).map(|p| p[1].ln() - p[0].ln()).collect())
}

impl ReturnStats {
    pub fn from_returns(r: &[f64]) -> Result<Self> {
        if r.len() < 2 {
            return Err(domain("experiments::return_stats", format!("need at least 2 returns, got {}", r.len())));
        }
        let n = r.len() as f64;
        let mean = r.iter().sum::<f64>() / n;
        let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
        for x in r {
            let d = x - mean;
            let d2 = d * d;
            m2 += d2;
            m3 += d2 * d;
            m4 += d2 * d2;
        }
        let variance = m2 / (n - 1.0);
        let (skewness, kurtosis) = if m2 > 0.0 {
            let (p2, p3, p4) = (m2 / n, m3 / n, m4 / n);
            (Some(p3 / p2.powf(1.5)), Some(p4 / (p2 * p2)))
        } else {
            (None, None)
        };
        Ok(ReturnStats { n: r.len(), mean, variance, skewness, kurtosis })
    }

    pub fn from_prices(prices: &[f64]) -> Result<Self> {
        Self::from_returns(&log_returns(prices)?)
    }
}

/// Correlation at one lag; `None` where a window has zero variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LagCorrelation {
    pub lag: i64,
    pub corr: Option<f64>,
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx > 0.0 && syy > 0.0 {
        Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
    } else {
        None
    }
}

/// Pearson correlation of `|R_i|` with `R_{i-j}` over the overlapping window,
/// for `j = -max_lag..=max_lag`.
pub fn lagged_abs_correlation(returns: &[f64], max_lag: usize) -> Result<Vec<LagCorrelation>> {
    let n = returns.len();
    if max_lag == 0 || n <= max_lag + 1 {
        return Err(domain(
            "experiments::lagged_abs_correlation",
            format!("need max_lag ≥ 1 and more than max_lag + 1 returns, got {n} returns for max_lag {max_lag}"),
        ));
    }
    let m = max_lag as i64;
    Ok((-m..=m)
        .map(|j| {
            let (xs, ys): (Vec<f64>, Vec<f64>) = (0..n as i64)
                .filter(|i| (0..n as i64).contains(&(i - j)))
                .map(|i| (returns[i as usize].abs(), returns[(i - j) as usize]))
                .unzip();
            LagCorrelation { lag: j, corr: pearson(&xs, &ys) }
        })
        .collect())
}

/// Least-squares `(slope, intercept)` of `y` on `x`.
pub fn least_squares(x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(domain("experiments::fit_slope", "need at least two paired points"));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
    }
    if !(sxx > 0.0) {
        return Err(domain("experiments::fit_slope", "log MSE values are all equal"));
    }
    let slope = sxy / sxx;
    Ok((slope, my - slope * mx))
}

/// Slope of log cost against log MSE over points with positive finite
/// values; fewer than `min_points` such points is an error.
pub fn fit_slope(costs: &[f64], mses: &[f64], min_points: usize) -> Result<f64> {
    let (x, y): (Vec<f64>, Vec<f64>) = costs
        .iter()
        .zip(mses)
        .filter(|(c, m)| **c > 0.0 && **m > 0.0 && c.is_finite() && m.is_finite())
        .map(|(c, m)| (m.ln(), c.ln()))
        .unzip();
    if x.len() < min_points.max(2) {
        return Err(Error::InsufficientData { needed: min_points.max(2), got: x.len() });
    }
    Ok(least_squares(&x, &y)?.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Single,
    Multilevel,
}

impl Method {
    pub fn label(self) -> &'static str {
        match self {
            Method::Single => "PMCMC",
            Method::Multilevel => "MLPMCMC",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RateStudyConfig {
    pub epsilons: Vec<f64>,
    pub replicates: usize,
    pub allocation: AllocationConfig,
    /// The reference chain is this many times longer than the longest run.
    pub reference_factor: usize,
    pub min_points: usize,
    /// Start every replicate chain from a draw of the reference chain.
    pub warm_start: bool,
    pub methods: Vec<Method>,
}

impl Default for RateStudyConfig {
    fn default() -> Self {
        RateStudyConfig {
            epsilons: vec![0.4, 0.2, 0.1, 0.05],
            replicates: 20,
            allocation: AllocationConfig::default(),
            reference_factor: 20,
            min_points: 4,
            warm_start: true,
            methods: vec![Method::Single, Method::Multilevel],
        }
    }
}

/// Long single-level run defining the "truth" of a rate study.
#[derive(Debug, Clone)]
pub struct Reference {
    pub level: Level,
    pub m: usize,
    pub values: Vec<f64>,
    /// Post-burn-in parameter draws, used as warm starts.
    pub draws: Arc<Vec<ModelParams>>,
    pub acceptance_rate: f64,
}

pub fn reference_run(
    y: &ObservationSeries,
    level: Level,
    m: usize,
    opts: &RunOptions,
    phis: &[Functional],
    seed: u64,
) -> Result<Reference> {
    let run = single_level_estimate(y, level, m, opts, phis, seed)?;
    let draws = run.chain.after_burn_in(opts.burn_in).iter().map(|r| r.theta).collect();
    Ok(Reference { level, m, values: run.values, draws: Arc::new(draws), acceptance_rate: run.chain.acceptance_rate })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateRun {
    pub method: Method,
    pub epsilon: f64,
    pub replicate: usize,
    pub max_level: u32,
    pub cost: f64,
    pub estimates: Vec<f64>,
    pub sq_errors: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatePoint {
    pub method: Method,
    pub epsilon: f64,
    pub max_level: u32,
    pub cost: f64,
    pub replicates: usize,
    /// One entry per parameter.
    pub mse: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeRow {
    pub parameter: String,
    pub method: Method,
    pub slope: f64,
}

#[derive(Debug, Clone)]
pub struct RateStudyResult {
    pub parameters: Vec<String>,
    pub reference: Reference,
    pub runs: Vec<RateRun>,
    pub points: Vec<RatePoint>,
    pub slopes: Vec<SlopeRow>,
}

impl RateStudyResult {
    pub fn slope(&self, parameter: &str, method: Method) -> Option<f64> {
        self.slopes.iter().find(|s| s.parameter == parameter && s.method == method).map(|s| s.slope)
    }
}

/// Aggregate replicate runs into per-grid-point MSEs and fit one slope per
/// (parameter, method).
pub fn summarize_rate_runs(
    parameters: &[String],
    runs: &[RateRun],
    min_points: usize,
) -> Result<(Vec<RatePoint>, Vec<SlopeRow>)> {
    let mut keys: Vec<(Method, u64)> = runs.iter().map(|r| (r.method, r.epsilon.to_bits())).collect();
    keys.sort_by(|a, b| a.0.cmp(&b.0).then(f64::from_bits(b.1).total_cmp(&f64::from_bits(a.1))));
    keys.dedup();
    let points: Vec<RatePoint> = keys
        .iter()
        .map(|&(method, eps)| {
            let group: Vec<&RateRun> =
                runs.iter().filter(|r| r.method == method && r.epsilon.to_bits() == eps).collect();
            let n = group.len() as f64;
            let mse = (0..parameters.len()).map(|k| group.iter().map(|r| r.sq_errors[k]).sum::<f64>() / n).collect();
            RatePoint {
                method,
                epsilon: f64::from_bits(eps),
                max_level: group[0].max_level,
                cost: group[0].cost,
                replicates: group.len(),
                mse,
            }
        })
        .collect();
    let mut methods: Vec<Method> = points.iter().map(|p| p.method).collect();
    methods.dedup();
    let mut slopes = Vec::new();
    for (k, name) in parameters.iter().enumerate() {
        for &method in &methods {
            let (c, m): (Vec<f64>, Vec<f64>) =
                points.iter().filter(|p| p.method == method).map(|p| (p.cost, p.mse[k])).unzip();
            slopes.push(SlopeRow { parameter: name.clone(), method, slope: fit_slope(&c, &m, min_points)? });
        }
    }
    Ok((points, slopes))
}

/// Cost-versus-MSE study. For each method, tolerance and replicate, run the
/// estimator with its own derived seed, tally its cost and record squared
/// errors against a long reference run at the finest level on the grid.
pub fn rate_study(
    y: &ObservationSeries,
    opts: &RunOptions,
    cfg: &RateStudyConfig,
    phis: &[Functional],
    seed: u64,
) -> Result<RateStudyResult> {
    if cfg.epsilons.len() < cfg.min_points {
        return Err(Error::InsufficientData { needed: cfg.min_points, got: cfg.epsilons.len() });
    }
    if cfg.replicates == 0 {
        return Err(domain("experiments::rate_study", "need at least one replicate"));
    }
    let h = opts.mcmc.spec.h;
    let mut jobs = Vec::new();
    let (mut top, mut longest) = (Level(0), 0usize);
    for &method in &cfg.methods {
        for &eps in &cfg.epsilons {
            let (level, longest_m) = match method {
                Method::Single => single_level_allocation(eps, h, &cfg.allocation)?,
                Method::Multilevel => {
                    let a = choose_levels_with(eps, h, &cfg.allocation)?;
                    (Level(a.max_level), a.m.iter().copied().max().unwrap_or(0))
                }
            };
            top = top.max(level);
            longest = longest.max(longest_m);
            for rep in 0..cfg.replicates {
                jobs.push((method, eps, rep));
            }
        }
    }

    let root = SeedNode::root(seed);
    let reference =
        reference_run(y, top, longest * cfg.reference_factor.max(1), opts, phis, root.named("reference").0)?;
    log::info!(
        "rate study reference: level {}, {} records, acceptance {:.3}",
        reference.level.0,
        reference.m,
        reference.acceptance_rate
    );

    let mut run_opts = opts.clone();
    if cfg.warm_start {
        run_opts.mcmc.start = Start::Pool(Arc::clone(&reference.draws));
    }
    let method_index = |m: Method| cfg.methods.iter().position(|x| *x == m).unwrap_or(0) as u64;
    let run_one = |&(method, eps, rep): &(Method, f64, usize)| -> Result<RateRun> {
        let eps_index = cfg.epsilons.iter().position(|e| *e == eps).unwrap_or(0) as u64;
        let s = root.child("method", method_index(method)).child("epsilon", eps_index).child("replicate", rep as u64).0;
        let (estimates, cost, max_level) = match method {
            Method::Single => {
                let (level, m) = single_level_allocation(eps, h, &cfg.allocation)?;
                let run = single_level_estimate(y, level, m, &run_opts, phis, s)?;
                (run.values, run.cost, level.0)
            }
            Method::Multilevel => {
                let alloc = choose_levels_with(eps, h, &cfg.allocation)?;
                let run = ml_estimate(y, &alloc, &run_opts, phis, s)?;
                (run.estimates.iter().map(|e| e.value).collect::<Vec<_>>(), alloc.total_cost(), alloc.max_level)
            }
        };
        let sq_errors = estimates.iter().zip(&reference.values).map(|(e, r)| (e - r) * (e - r)).collect();
        Ok(RateRun { method, epsilon: eps, replicate: rep, max_level, cost, estimates, sq_errors })
    };
    let runs: Vec<RateRun> = if opts.parallel_levels {
        jobs.par_iter().map(run_one).collect::<Result<_>>()?
    } else {
        jobs.iter().map(run_one).collect::<Result<_>>()?
    };

    let parameters: Vec<String> = phis.iter().map(|p| p.name().to_string()).collect();
    let (points, slopes) = summarize_rate_runs(&parameters, &runs, cfg.min_points)?;
    Ok(RateStudyResult { parameters, reference, runs, points, slopes })
}

/// Settings of the posterior predictive summaries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictiveConfig {
    pub t_pred: usize,
    /// Draws per level, spread evenly over the post-burn-in records.
    pub n_draws: usize,
    pub max_lag: usize,
}

/// Predictive analogues of [`ReturnStats`] and the lag-correlation curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictiveSummary {
    pub mean: f64,
    pub variance: f64,
    pub skewness: f64,
    pub kurtosis: f64,
    /// `(lag, correlation)` for `lag = -max_lag..=max_lag`.
    pub correlations: Vec<(i64, f64)>,
    pub draws_per_level: Vec<usize>,
}

fn path_features(y: &[f64], max_lag: usize) -> Result<Vec<f64>> {
    let returns = ObservationSeries::new(0.0, y.to_vec())?.increments();
    let s = ReturnStats::from_returns(&returns)?;
    let mut f = vec![s.mean, s.variance, s.skewness.unwrap_or(f64::NAN), s.kurtosis.unwrap_or(f64::NAN)];
    f.extend(lagged_abs_correlation(&returns, max_lag)?.iter().map(|c| c.corr.unwrap_or(f64::NAN)));
    Ok(f)
}

fn thin(len: usize, n: usize) -> Vec<usize> {
    if n >= len {
        (0..len).collect()
    } else {
        (0..n).map(|k| k * len / n).collect()
    }
}

fn simulate_pair(
    theta: &ModelParams,
    level: Level,
    t_pred: usize,
    coupled: bool,
    rng: &mut impl Rng,
) -> Result<(Vec<f64>, Option<Vec<f64>>)> {
    let w = sample_increments(level, t_pred, rng)?;
    let noise = standard_normals(t_pred, rng);
    let fine = euler_volatility_path(&theta.vol, &theta.kernel, &w);
    let y = observe(theta, level, &fine.values, &w.values, &noise);
    if !coupled {
        return Ok((y, None));
    }
    let wc: IncrementPath = coarsen(&w)?;
    let coarse = euler_volatility_path(&theta.vol, &theta.kernel, &wc);
    Ok((y, Some(observe(theta, wc.level, &coarse.values, &wc.values, &noise))))
}

fn mean_features(rows: &[Vec<f64>]) -> Vec<f64> {
    let n = rows.len() as f64;
    (0..rows[0].len()).map(|k| rows.iter().map(|r| r[k]).sum::<f64>() / n).collect()
}

fn weighted_features(rows: &[Vec<f64>], log_w: &[f64]) -> Result<Vec<f64>> {
    let max = log_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(max > f64::NEG_INFINITY) {
        return Err(Error::DegenerateDenominator { which: "predictive" });
    }
    let w: Vec<f64> = log_w.iter().map(|l| (l - max).exp()).collect();
    let s: f64 = w.iter().sum();
    Ok((0..rows[0].len()).map(|k| rows.iter().zip(&w).map(|(r, w)| r[k] * w).sum::<f64>() / s).collect())
}

fn into_summary(f: Vec<f64>, max_lag: usize, draws_per_level: Vec<usize>) -> PredictiveSummary {
    let m = max_lag as i64;
    PredictiveSummary {
        mean: f[0],
        variance: f[1],
        skewness: f[2],
        kurtosis: f[3],
        correlations: (-m..=m).zip(f[4..].iter().copied()).collect(),
        draws_per_level,
    }
}

fn check_predictive(cfg: &PredictiveConfig) -> Result<()> {
    if cfg.n_draws == 0 || cfg.t_pred <= cfg.max_lag + 1 || cfg.max_lag == 0 {
        return Err(domain(
            "experiments::predictive_summaries",
            "need n_draws ≥ 1, max_lag ≥ 1 and t_pred > max_lag + 1",
        ));
    }
    Ok(())
}

fn draw_rng(root: SeedNode, level: Level, k: usize) -> crate::rng::StreamRng {
    level_seed(root.named("predict"), level).child("draw", k as u64).rng()
}

/// Predictive summaries from one single-level chain: plain averages over
/// `n_draws` simulated paths.
pub fn predictive_from_chain(
    records: &[ChainRecord<FilterOutput>],
    level: Level,
    cfg: &PredictiveConfig,
    seed: u64,
) -> Result<PredictiveSummary> {
    check_predictive(cfg)?;
    if records.is_empty() {
        return Err(Error::EmptySample { op: "experiments::predictive_summaries" });
    }
    let root = SeedNode::root(seed);
    let idx = thin(records.len(), cfg.n_draws);
    let rows = idx
        .iter()
        .enumerate()
        .map(|(k, &i)| {
            let (y, _) = simulate_pair(&records[i].theta, level, cfg.t_pred, false, &mut draw_rng(root, level, k))?;
            path_features(&y, cfg.max_lag)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(into_summary(mean_features(&rows), cfg.max_lag, vec![rows.len()]))
}

/// Multilevel predictive summaries: the base-level average plus, per level,
/// the `H1`-weighted fine average minus the `H2`-weighted coarse average of
/// the summaries of coupled predictive paths (fine increments, their coarsened
/// sums and shared observation noise).
pub fn predictive_summaries(run: &MultilevelRun, cfg: &PredictiveConfig, seed: u64) -> Result<PredictiveSummary> {
    let base_records = run.base_chain.after_burn_in(run.burn_in);
    let base = predictive_from_chain(base_records, run.base_chain.level, cfg, seed)?;
    let root = SeedNode::root(seed);
    let mut total = {
        let mut f = vec![base.mean, base.variance, base.skewness, base.kurtosis];
        f.extend(base.correlations.iter().map(|c| c.1));
        f
    };
    let mut draws = base.draws_per_level;
    for chain in &run.coupled_chains {
        let records = chain.after_burn_in(run.burn_in);
        if records.is_empty() {
            return Err(Error::EmptySample { op: "experiments::predictive_summaries" });
        }
        let level = chain.level;
        let idx = thin(records.len(), cfg.n_draws);
        let (mut fine, mut coarse, mut lh1, mut lh2) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for (k, &i) in idx.iter().enumerate() {
            let rec = &records[i];
            let (a, b) = h_log_weights(&rec.state.log_kappa_fine, &rec.state.log_kappa_coarse)?;
            let (yf, yc) = simulate_pair(&rec.theta, level, cfg.t_pred, true, &mut draw_rng(root, level, k))?;
            fine.push(path_features(&yf, cfg.max_lag)?);
            coarse.push(path_features(&yc.expect("coupled"), cfg.max_lag)?);
            lh1.push(a);
            lh2.push(b);
        }
        let f = weighted_features(&fine, &lh1)?;
        let c = weighted_features(&coarse, &lh2)?;
        for (t, (a, b)) in total.iter_mut().zip(f.iter().zip(&c)) {
            *t += a - b;
        }
        draws.push(idx.len());
    }
    Ok(into_summary(total, cfg.max_lag, draws))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mcmc::{pmcmc_chain, McmcConfig, ProposalConfig};
    use crate::models::ModelSpec;
    use crate::multilevel::LevelAllocation;
    use crate::sve::VolParams;
    use proptest::prelude::*;

    fn sv(v: VolParams, rho: f64, r: f64) -> ModelParams {
        ModelSpec::stoch_vol().params_with(v, rho, r)
    }

    #[test]
    fn default_synthetic_shape() {
        let th = ModelSpec::stoch_vol().template();
        let d = generate_synthetic(&th, 100, Level(6), &mut SeedNode::root(1).rng()).unwrap();
        assert_eq!(d.y.len(), 100);
        assert_eq!(d.latent.values.len(), 6401);
        assert_eq!(d.prices().len(), 101);
        let e = generate_synthetic(&th, 100, Level(6), &mut SeedNode::root(1).rng()).unwrap();
        assert_eq!(d, e);
    }

    #[test]
    fn noiseless_ssm_reads_the_skeleton() {
        let mut th = ModelSpec::state_space().template();
        th.sigma_obs = 0.0;
        let d = generate_synthetic(&th, 7, Level(3), &mut SeedNode::root(2).rng()).unwrap();
        assert_eq!(d.y.y, d.latent.skeleton());
    }

    #[test]
    fn constant_volatility_sv_returns() {
        let v0 = 0.36;
        let th = sv(VolParams { v0, kappa: 0.0, lambda: 0.0, nu: 0.0 }, 0.0, 0.05);
        let d = generate_synthetic(&th, 20_000, Level(0), &mut SeedNode::root(3).rng()).unwrap();
        let s = ReturnStats::from_returns(&d.y.increments()).unwrap();
        let n = 20_000f64;
        assert!((s.mean - 0.05).abs() < 4.0 * (v0 / n).sqrt(), "{}", s.mean);
        assert!((s.variance - v0).abs() < 4.0 * v0 * (2.0 / n).sqrt(), "{}", s.variance);
    }

    #[test]
    fn return_stats_examples() {
        let s = ReturnStats::from_returns(&[-1.0, 1.0]).unwrap();
        assert_eq!((s.mean, s.variance, s.skewness), (0.0, 2.0, Some(0.0)));
        let c = ReturnStats::from_prices(&[3.0; 6]).unwrap();
        assert_eq!((c.mean, c.variance, c.skewness, c.kurtosis), (0.0, 0.0, None, None));
        assert!(ReturnStats::from_prices(&[1.0, 0.0, 2.0]).is_err());
        assert!(ReturnStats::from_returns(&[1.0]).is_err());
        let e = std::f64::consts::E;
        let r = log_returns(&[1.0, e, e * e]).unwrap();
        assert!((r[0] - 1.0).abs() < 1e-15 && (r[1] - 1.0).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn stats_affine_behaviour(xs in prop::collection::vec(-1.0f64..1.0, 5..40), a in 0.1f64..10.0, b in -5.0f64..5.0) {
            let s = ReturnStats::from_returns(&xs).unwrap();
            prop_assume!(s.variance > 1e-6);
            let ys: Vec<f64> = xs.iter().map(|x| a * x + b).collect();
            let t = ReturnStats::from_returns(&ys).unwrap();
            prop_assert!((t.mean - (a * s.mean + b)).abs() < 1e-9);
            prop_assert!((t.skewness.unwrap() - s.skewness.unwrap()).abs() < 1e-7);
            prop_assert!((t.kurtosis.unwrap() - s.kurtosis.unwrap()).abs() < 1e-7);
        }

        #[test]
        fn correlations_bounded(xs in prop::collection::vec(-1.0f64..1.0, 8..40)) {
            for c in lagged_abs_correlation(&xs, 3).unwrap() {
                if let Some(v) = c.corr {
                    prop_assert!((-1.0..=1.0).contains(&v));
                }
            }
        }
    }

    #[test]
    fn lag_correlation_examples() {
        let pos: Vec<f64> = (1..30).map(|i| (i as f64 * 0.37).sin().abs() + 0.1).collect();
        let c = lagged_abs_correlation(&pos, 4).unwrap();
        assert_eq!(c.len(), 9);
        assert_eq!(c[4].lag, 0);
        assert!((c[4].corr.unwrap() - 1.0).abs() < 1e-12);
        assert!(lagged_abs_correlation(&pos[..5], 4).is_err());

        let mut rng = SeedNode::root(4).rng();
        let n = 100_000;
        let xs = standard_normals(n, &mut rng);
        for c in lagged_abs_correlation(&xs, 5).unwrap() {
            assert!(c.corr.unwrap().abs() < 3.0 / (n as f64).sqrt() * 1.5, "{c:?}");
        }
    }

    #[test]
    fn slope_fitting() {
        let mses = [0.1, 0.05, 0.02, 0.01, 0.003];
        let costs: Vec<f64> = mses.iter().map(|m: &f64| 7.0 * m.powf(-19.0 / 9.0)).collect();
        let s = fit_slope(&costs, &mses, 4).unwrap();
        assert!((s + 19.0 / 9.0).abs() < 1e-9);
        let scaled: Vec<f64> = costs.iter().map(|c| c * 123.0).collect();
        assert!((fit_slope(&scaled, &mses, 4).unwrap() - s).abs() < 1e-9);
        assert!(matches!(fit_slope(&costs[..3], &mses[..3], 4), Err(Error::InsufficientData { needed: 4, got: 3 })));
    }

    #[test]
    fn rate_study_small_and_deterministic() {
        let th = ModelSpec::state_space().template();
        let d = generate_synthetic(&th, 3, Level(4), &mut SeedNode::root(5).rng()).unwrap();
        let spec = ModelSpec::state_space();
        let mut opts = RunOptions::new(McmcConfig::new(spec, ProposalConfig::uniform(4, 0.3).unwrap(), 4));
        opts.parallel_levels = true;
        let cfg = RateStudyConfig {
            epsilons: vec![0.8, 0.6, 0.45],
            replicates: 2,
            allocation: AllocationConfig { c_m: 1.0, m_min: 3, ..Default::default() },
            reference_factor: 2,
            min_points: 3,
            ..Default::default()
        };
        let phis = Functional::parameter_defaults(&spec);
        let a = rate_study(&d.y, &opts, &cfg, &phis, 11).unwrap();
        let b = rate_study(&d.y, &opts, &cfg, &phis, 11).unwrap();
        assert_eq!(a.slopes, b.slopes);
        assert_eq!(a.slopes.len(), 8);
        assert_eq!(a.runs.len(), 12);
        assert!(a.slopes.iter().all(|s| s.slope.is_finite()));
        let too_few = RateStudyConfig { min_points: 4, ..cfg };
        assert!(matches!(rate_study(&d.y, &opts, &too_few, &phis, 11), Err(Error::InsufficientData { .. })));
    }

    #[test]
    fn predictive_single_draw_equals_its_path() {
        let spec = ModelSpec::stoch_vol();
        let th = sv(VolParams { v0: 0.5, kappa: 0.2, lambda: 0.4, nu: 0.3 }, -0.3, 0.0);
        let y = generate_synthetic(&th, 8, Level(2), &mut SeedNode::root(6).rng()).unwrap().y;
        let cfg = McmcConfig::new(spec, ProposalConfig::uniform(6, 0.1).unwrap(), 4).with_start(Start::Fixed(th));
        let chain = pmcmc_chain(&y, Level(1), 0, &cfg, &mut SeedNode::root(7).rng()).unwrap();
        let pc = PredictiveConfig { t_pred: 30, n_draws: 1, max_lag: 3 };
        let s = predictive_from_chain(&chain.records, Level(1), &pc, 8).unwrap();
        let (yy, _) = simulate_pair(&th, Level(1), 30, false, &mut draw_rng(SeedNode::root(8), Level(1), 0)).unwrap();
        let r = ObservationSeries::new(0.0, yy).unwrap().increments();
        let want = ReturnStats::from_returns(&r).unwrap();
        assert_eq!(s.mean, want.mean);
        assert_eq!(s.variance, want.variance);
        assert_eq!(s.correlations.len(), 7);
    }

    #[test]
    fn predictive_constant_volatility_variance() {
        let spec = ModelSpec::stoch_vol();
        let v0 = 0.25;
        // the prior lives on positive coefficients, so use negligible ones
        let th = sv(VolParams { v0, kappa: 1e-12, lambda: 1e-12, nu: 1e-12 }, 0.0, 0.0);
        let y = ObservationSeries::new(0.0, vec![0.1, -0.2]).unwrap();
        let cfg = McmcConfig::new(spec, ProposalConfig::uniform(6, 1e-9).unwrap(), 2).with_start(Start::Fixed(th));
        let chain = pmcmc_chain(&y, Level(0), 199, &cfg, &mut SeedNode::root(9).rng()).unwrap();
        let pc = PredictiveConfig { t_pred: 200, n_draws: 200, max_lag: 2 };
        let s = predictive_from_chain(&chain.records, Level(0), &pc, 10).unwrap();
        // 200 paths of 200 returns: variance of the averaged estimate ~ 2 v0² / 40000
        assert!((s.variance - v0).abs() < 5.0 * v0 * (2.0f64 / 40_000.0).sqrt(), "{}", s.variance);
        assert!(predictive_from_chain(&[], Level(0), &pc, 10).is_err());
    }

    #[test]
    fn predictive_multilevel_runs() {
        let spec = ModelSpec::stoch_vol();
        let th = sv(VolParams { v0: 0.5, kappa: 0.2, lambda: 0.4, nu: 0.3 }, -0.3, 0.0);
        let y = generate_synthetic(&th, 4, Level(3), &mut SeedNode::root(11).rng()).unwrap().y;
        let opts = RunOptions::new(
            McmcConfig::new(spec, ProposalConfig::uniform(6, 0.1).unwrap(), 4).with_start(Start::Fixed(th)),
        );
        let alloc = LevelAllocation::explicit(0, vec![10, 6, 4], 0.4).unwrap();
        let phis = Functional::parameter_defaults(&spec);
        let run = ml_estimate(&y, &alloc, &opts, &phis, 12).unwrap();
        let pc = PredictiveConfig { t_pred: 20, n_draws: 5, max_lag: 2 };
        let s = predictive_summaries(&run, &pc, 13).unwrap();
        assert_eq!(s.draws_per_level, vec![5, 5, 4]);
        assert!(s.variance.is_finite());
    }
}
