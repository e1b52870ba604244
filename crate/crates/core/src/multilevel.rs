//! Multilevel estimation: H-weights, the self-normalized level increment,
//! level/sample allocation and the telescoping estimator.
//!
//! A run with base level `l0` and top level `L` estimates
//! `E_{π^{l0}}[φ] + Σ_{l=l0+1}^{L} (E_{π^l}[φ] - E_{π^{l-1}}[φ])`. The base term
//! is an ergodic average over a single-level chain; each increment comes from
//! an independent coupled chain reweighted by `H1` (fine) and `H2` (coarse).

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::filters::{delta_particle_filter_with, log_weight, CoupledOutput, FilterOptions, FilterOutput};
use crate::functional::Functional;
use crate::mcmc::{coupled_chain, pmcmc_chain, Chain, ChainRecord, McmcConfig};
use crate::models::{ModelParams, ObservationSeries};
use crate::rng::SeedNode;
use crate::sve::{EulerScheme, IncrementPath, Level};

/// `(log H1, log H2)` from per-unit-time fine and coarse log densities.
pub fn h_log_weights(log_kappa_fine: &[f64], log_kappa_coarse: &[f64]) -> Result<(f64, f64)> {
    if log_kappa_fine.len() != log_kappa_coarse.len() {
        return Err(domain("multilevel::h_weights", "fine and coarse weights differ in length"));
    }
    let (mut h1, mut h2) = (0.0, 0.0);
    for (&a, &b) in log_kappa_fine.iter().zip(log_kappa_coarse) {
        if !(a > f64::NEG_INFINITY) || !(b > f64::NEG_INFINITY) {
            return Err(Error::DegenerateWeight { log_weight: a.min(b) });
        }
        let m = a.max(b);
        h1 += a - m;
        h2 += b - m;
    }
    Ok((h1, h2))
}

/// `H1 = Π_t κ_l / max(κ_l, κ_{l-1})` and `H2 = Π_t κ_{l-1} / max(κ_l, κ_{l-1})`
/// for a coupled pair, with the Euler paths rebuilt from the increments.
pub fn h_weights(
    theta: &ModelParams,
    fine: &IncrementPath,
    coarse: &IncrementPath,
    y: &ObservationSeries,
    level: Level,
) -> Result<(f64, f64)> {
    let coarser = level.coarser()?;
    if fine.level != level || coarse.level != coarser || fine.horizon != y.len() || coarse.horizon != y.len() {
        return Err(domain("multilevel::h_weights", "paths do not match the level and horizon"));
    }
    let per_t = |lvl: Level, path: &IncrementPath| -> Result<Vec<f64>> {
        let scheme = EulerScheme::new(theta.vol, &theta.kernel, lvl, y.len());
        let mut state = scheme.start();
        scheme.extend(&mut state, &path.values);
        (1..=y.len()).map(|t| log_weight(theta, y, lvl, t, &state)).collect()
    };
    let (lh1, lh2) = h_log_weights(&per_t(level, fine)?, &per_t(coarser, coarse)?)?;
    let floor = f64::MIN_POSITIVE.ln();
    for lh in [lh1, lh2] {
        if lh < floor {
            return Err(Error::DegenerateWeight { log_weight: lh });
        }
    }
    Ok((lh1.exp(), lh2.exp()))
}

fn weighted_mean_log(values: &[f64], log_w: &[f64], which: &'static str) -> Result<f64> {
    let max = log_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(max > f64::NEG_INFINITY) {
        return Err(Error::DegenerateDenominator { which });
    }
    let (mut num, mut den) = (0.0, 0.0);
    for (v, lw) in values.iter().zip(log_w) {
        let w = (lw - max).exp();
        num += v * w;
        den += w;
    }
    Ok(num / den)
}

/// `Σ φ_f H1 / Σ H1 − Σ φ_c H2 / Σ H2` with weights on the natural scale.
pub fn self_normalized_difference(phi_fine: &[f64], h1: &[f64], phi_coarse: &[f64], h2: &[f64]) -> Result<f64> {
    let n = phi_fine.len();
    if h1.len() != n || phi_coarse.len() != n || h2.len() != n {
        return Err(domain("multilevel::increment_estimator", "input lengths differ"));
    }
    if n == 0 {
        return Err(Error::EmptySample { op: "multilevel::increment_estimator" });
    }
    let ln = |w: &[f64]| w.iter().map(|x| x.ln()).collect::<Vec<_>>();
    Ok(weighted_mean_log(phi_fine, &ln(h1), "H1")? - weighted_mean_log(phi_coarse, &ln(h2), "H2")?)
}

/// Level increment estimates for each functional over coupled records
/// (burn-in already removed).
pub fn increment_estimates(records: &[ChainRecord<CoupledOutput>], phis: &[Functional]) -> Result<Vec<f64>> {
    let outputs: Vec<(&ModelParams, &CoupledOutput)> = records.iter().map(|r| (&r.theta, r.state.as_ref())).collect();
    increments_from_outputs(&outputs, phis)
}

fn increments_from_outputs(outputs: &[(&ModelParams, &CoupledOutput)], phis: &[Functional]) -> Result<Vec<f64>> {
    if outputs.is_empty() {
        return Err(Error::EmptySample { op: "multilevel::increment_estimator" });
    }
    let mut lh1 = Vec::with_capacity(outputs.len());
    let mut lh2 = Vec::with_capacity(outputs.len());
    for (_, out) in outputs {
        let (a, b) = h_log_weights(&out.log_kappa_fine, &out.log_kappa_coarse)?;
        lh1.push(a);
        lh2.push(b);
    }
    phis.iter()
        .map(|phi| {
            let f: Vec<f64> = outputs.iter().map(|(th, o)| phi.eval(th, &o.fine_skeleton)).collect();
            let c: Vec<f64> = outputs.iter().map(|(th, o)| phi.eval(th, &o.coarse_skeleton)).collect();
            Ok(weighted_mean_log(&f, &lh1, "H1")? - weighted_mean_log(&c, &lh2, "H2")?)
        })
        .collect()
}

/// Single-functional form of [`increment_estimates`].
pub fn increment_estimator(records: &[ChainRecord<CoupledOutput>], phi: &Functional) -> Result<f64> {
    Ok(increment_estimates(records, std::slice::from_ref(phi))?[0])
}

/// Ergodic averages of each functional over single-level records.
pub fn ergodic_averages(records: &[ChainRecord<FilterOutput>], phis: &[Functional]) -> Result<Vec<f64>> {
    if records.is_empty() {
        return Err(Error::EmptySample { op: "multilevel::ergodic_average" });
    }
    Ok(phis
        .iter()
        .map(|phi| records.iter().map(|r| phi.eval(&r.theta, &r.state.skeleton)).sum::<f64>() / records.len() as f64)
        .collect())
}

/// Increment estimate at fixed `θ`: `m` independent delta particle filter
/// runs stand in for the coupled chain. Used for variance-decay studies.
pub fn fixed_theta_increment<R: Rng + ?Sized>(
    y: &ObservationSeries,
    level: Level,
    theta: &ModelParams,
    filter: FilterOptions,
    m: usize,
    phis: &[Functional],
    rng: &mut R,
) -> Result<Vec<f64>> {
    let runs = (0..m).map(|_| delta_particle_filter_with(y, level, filter, theta, rng)).collect::<Result<Vec<_>>>()?;
    let outputs: Vec<_> = runs.iter().map(|o| (theta, o)).collect();
    increments_from_outputs(&outputs, phis)
}

/// Constants of the allocation rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AllocationConfig {
    pub c_m: f64,
    pub c_l: f64,
    pub m_min: usize,
    pub base_level: u32,
}

impl Default for AllocationConfig {
    fn default() -> Self {
        AllocationConfig { c_m: 1.0, c_l: 1.0, m_min: 50, base_level: 0 }
    }
}

impl AllocationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.c_m > 0.0 && self.c_m.is_finite()) || !(self.c_l > 0.0 && self.c_l.is_finite()) {
            return Err(Error::Config(format!("c_m and c_l must be positive, got {} and {}", self.c_m, self.c_l)));
        }
        if self.m_min == 0 {
            return Err(Error::Config("m_min must be at least 1".into()));
        }
        Level::new(self.base_level)?;
        Ok(())
    }
}

/// Levels `base_level..=max_level` with chain lengths `m[l - base_level]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelAllocation {
    pub epsilon: Option<f64>,
    #[serde(rename = "H")]
    pub h: f64,
    pub base_level: u32,
    pub max_level: u32,
    pub m: Vec<usize>,
}

impl LevelAllocation {
    /// Explicit chain lengths starting at `base_level`.
    pub fn explicit(base_level: u32, m: Vec<usize>, h: f64) -> Result<Self> {
        if m.is_empty() || m.contains(&0) {
            return Err(Error::Config("chain lengths must be positive and non-empty".into()));
        }
        let max_level = base_level + m.len() as u32 - 1;
        Level::new(max_level)?;
        Ok(LevelAllocation { epsilon: None, h, base_level, max_level, m })
    }

    pub fn levels(&self) -> impl Iterator<Item = Level> + '_ {
        (self.base_level..=self.max_level).map(Level)
    }

    pub fn m_at(&self, level: Level) -> usize {
        self.m[(level.0 - self.base_level) as usize]
    }

    /// Per-level cost `Δ_l^{-2} M_l`.
    pub fn costs(&self) -> Vec<f64> {
        self.levels().map(|l| level_cost(l, self.m_at(l))).collect()
    }

    pub fn total_cost(&self) -> f64 {
        self.costs().iter().sum()
    }
}

/// Cost of `m` iterations at level `l` in units of `Δ_l^{-2}`.
pub fn level_cost(level: Level, m: usize) -> f64 {
    let d = level.step();
    m as f64 / (d * d)
}

fn check_epsilon(epsilon: f64, h: f64) -> Result<()> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(domain("multilevel::choose_levels", format!("epsilon must lie in (0, 1), got {epsilon}")));
    }
    if !(0.0..0.5).contains(&h) {
        return Err(domain("multilevel::choose_levels", format!("H must lie in [0, 0.5), got {h}")));
    }
    Ok(())
}

fn top_level(epsilon: f64, h: f64, c_l: f64) -> u32 {
    let raw = (c_l * 2.0 * (1.0 / epsilon).log2() / (2.0 * h + 1.0)).ceil();
    (raw.max(1.0) as u32).min(Level::MAX)
}

/// `L = max(1, ⌈c_L · 2 log2(1/ε) / (2H+1)⌉)` and
/// `M_l = max(M_min, ⌈c_M ε^-2 Δ_l^{(2H+3)/2} Δ_L^{H-1/2}⌉)`.
pub fn choose_levels(epsilon: f64, h: f64, c_m: f64, c_l: f64) -> Result<LevelAllocation> {
    choose_levels_with(epsilon, h, &AllocationConfig { c_m, c_l, ..AllocationConfig::default() })
}

/// [`choose_levels`] with a floor and a base level; the top level is raised to
/// `base_level + 1` if needed.
pub fn choose_levels_with(epsilon: f64, h: f64, cfg: &AllocationConfig) -> Result<LevelAllocation> {
    check_epsilon(epsilon, h)?;
    cfg.validate()?;
    let l_top = top_level(epsilon, h, cfg.c_l).max(cfg.base_level + 1);
    let d_top = Level(l_top).step();
    let m = (cfg.base_level..=l_top)
        .map(|l| {
            let d = Level(l).step();
            let raw = cfg.c_m * epsilon.powi(-2) * d.powf((2.0 * h + 3.0) / 2.0) * d_top.powf(h - 0.5);
            (raw.ceil() as usize).max(cfg.m_min)
        })
        .collect();
    Ok(LevelAllocation { epsilon: Some(epsilon), h, base_level: cfg.base_level, max_level: l_top, m })
}

/// Single-level counterpart: same top level, `M = max(M_min, ⌈c_M ε^-2⌉)`.
pub fn single_level_allocation(epsilon: f64, h: f64, cfg: &AllocationConfig) -> Result<(Level, usize)> {
    check_epsilon(epsilon, h)?;
    cfg.validate()?;
    let l = top_level(epsilon, h, cfg.c_l);
    Ok((Level(l), ((cfg.c_m * epsilon.powi(-2)).ceil() as usize).max(cfg.m_min)))
}

/// Settings shared by every chain of a multilevel or single-level run.
#[derive(Debug, Clone)]
pub struct RunOptions {
    pub mcmc: McmcConfig,
    pub burn_in: f64,
    /// Run the per-level chains on the rayon pool.
    pub parallel_levels: bool,
}

impl RunOptions {
    pub fn new(mcmc: McmcConfig) -> Self {
        RunOptions { mcmc, burn_in: 0.1, parallel_levels: false }
    }
}

/// Estimate of one functional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlEstimate {
    pub functional: String,
    pub value: f64,
    /// Base-level average first, then the increments in level order.
    pub per_level: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct MultilevelRun {
    pub allocation: LevelAllocation,
    pub estimates: Vec<MlEstimate>,
    pub base_chain: Chain<FilterOutput>,
    pub coupled_chains: Vec<Chain<CoupledOutput>>,
    pub burn_in: f64,
    pub seed: u64,
}

/// Serializable summary of a multilevel run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MlReport {
    pub estimates: Vec<MlEstimate>,
    pub levels: Vec<u32>,
    pub costs: Vec<f64>,
    pub total_cost: f64,
    pub acceptance_rates: Vec<f64>,
    pub allocation: LevelAllocation,
    pub burn_in: f64,
    pub seed: u64,
    pub level_seeds: Vec<u64>,
}

impl MultilevelRun {
    pub fn report(&self) -> MlReport {
        let mut acceptance_rates = vec![self.base_chain.acceptance_rate];
        acceptance_rates.extend(self.coupled_chains.iter().map(|c| c.acceptance_rate));
        let root = SeedNode::root(self.seed);
        MlReport {
            estimates: self.estimates.clone(),
            levels: self.allocation.levels().map(|l| l.0).collect(),
            costs: self.allocation.costs(),
            total_cost: self.allocation.total_cost(),
            acceptance_rates,
            allocation: self.allocation.clone(),
            burn_in: self.burn_in,
            seed: self.seed,
            level_seeds: self.allocation.levels().map(|l| level_seed(root, l).0).collect(),
        }
    }
}

/// Seed of the chain at `level`; levels never share a stream.
pub fn level_seed(root: SeedNode, level: Level) -> SeedNode {
    root.child("level", level.0 as u64)
}

enum LevelChain {
    Base(Chain<FilterOutput>),
    Coupled(Chain<CoupledOutput>),
}

/// The multilevel estimator. Chain `l` has `M_l` records (`M_l - 1`
/// transitions after the initial state) and draws from `level_seed(seed, l)`.
pub fn ml_estimate(
    y: &ObservationSeries,
    alloc: &LevelAllocation,
    opts: &RunOptions,
    phis: &[Functional],
    seed: u64,
) -> Result<MultilevelRun> {
    if alloc.max_level <= alloc.base_level {
        return Err(domain("multilevel::ml_estimate", "need at least one level above the base"));
    }
    let root = SeedNode::root(seed);
    let run_level = |l: Level| -> Result<LevelChain> {
        let mut rng = level_seed(root, l).rng();
        let iters = alloc.m_at(l) - 1;
        let chain = if l.0 == alloc.base_level {
            pmcmc_chain(y, l, iters, &opts.mcmc, &mut rng).map(LevelChain::Base)
        } else {
            coupled_chain(y, l, iters, &opts.mcmc, &mut rng).map(LevelChain::Coupled)
        };
        chain.map_err(|e| Error::LevelFailed { level: l.0, source: Box::new(e) })
    };
    let levels: Vec<Level> = alloc.levels().collect();
    let chains: Vec<LevelChain> = if opts.parallel_levels {
        levels.par_iter().map(|&l| run_level(l)).collect::<Result<_>>()?
    } else {
        levels.iter().map(|&l| run_level(l)).collect::<Result<_>>()?
    };

    let mut chains = chains.into_iter();
    let base_chain = match chains.next() {
        Some(LevelChain::Base(c)) => c,
        _ => unreachable!("first level is the base"),
    };
    let coupled_chains: Vec<Chain<CoupledOutput>> = chains
        .map(|c| match c {
            LevelChain::Coupled(c) => c,
            LevelChain::Base(_) => unreachable!("only the first level is single"),
        })
        .collect();

    let mut columns = vec![ergodic_averages(base_chain.after_burn_in(opts.burn_in), phis)?];
    for chain in &coupled_chains {
        let inc = increment_estimates(chain.after_burn_in(opts.burn_in), phis)
            .map_err(|e| Error::LevelFailed { level: chain.level.0, source: Box::new(e) })?;
        columns.push(inc);
    }
    let estimates = phis
        .iter()
        .enumerate()
        .map(|(k, phi)| {
            let per_level: Vec<f64> = columns.iter().map(|c| c[k]).collect();
            MlEstimate { functional: phi.name().to_string(), value: per_level.iter().sum(), per_level }
        })
        .collect();
    Ok(MultilevelRun { allocation: alloc.clone(), estimates, base_chain, coupled_chains, burn_in: opts.burn_in, seed })
}

#[derive(Debug, Clone)]
pub struct SingleLevelRun {
    pub level: Level,
    pub values: Vec<f64>,
    pub cost: f64,
    pub chain: Chain<FilterOutput>,
}

/// Ergodic averages over a single chain of `m` records at `level`.
pub fn single_level_estimate(
    y: &ObservationSeries,
    level: Level,
    m: usize,
    opts: &RunOptions,
    phis: &[Functional],
    seed: u64,
) -> Result<SingleLevelRun> {
    if m == 0 {
        return Err(Error::EmptySample { op: "multilevel::single_level_estimate" });
    }
    let mut rng = level_seed(SeedNode::root(seed), level).rng();
    let chain = pmcmc_chain(y, level, m - 1, &opts.mcmc, &mut rng)?;
    let values = ergodic_averages(chain.after_burn_in(opts.burn_in), phis)?;
    Ok(SingleLevelRun { level, values, cost: level_cost(level, m), chain })
}
