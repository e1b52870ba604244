//! Pseudo-marginal Metropolis–Hastings driven by the particle filters.
//!
//! Proposals are Gaussian random walks in the unconstrained parameter space,
//! where the prior is a product of standard normals; the covariance is
//! diagonal or adapted from pilot runs. The proposal is symmetric, so the acceptance ratio reduces to
//! `ẑ' π(θ') / (ẑ π(θ))`, evaluated in log space.

use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{domain, Error, Result};
use crate::filters::{delta_particle_filter_with, particle_filter_with, CoupledOutput, FilterOptions, FilterOutput};
use crate::models::{
    prior_logpdf, prior_sample, transform, untransform, ModelParams, ModelSpec, ObservationSeries, UnconstrainedParams,
};
use crate::sve::Level;

/// Random-walk scales in the unconstrained space: diagonal by default, or a
/// full covariance given by its Cholesky factor.
#[derive(Debug, Clone, PartialEq)]
pub struct ProposalConfig {
    step_sizes: Vec<f64>,
    /// Lower-triangular factor, row-major; `step_sizes` are its row norms.
    chol: Option<Vec<f64>>,
}

impl ProposalConfig {
    pub fn new(step_sizes: Vec<f64>) -> Result<Self> {
        if step_sizes.is_empty() {
            return Err(domain("mcmc::ProposalConfig", "need at least one step size"));
        }
        if let Some(s) = step_sizes.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
            return Err(domain("mcmc::ProposalConfig", format!("step sizes must be positive, got {s}")));
        }
        Ok(ProposalConfig { step_sizes, chol: None })
    }

    pub fn uniform(dim: usize, step: f64) -> Result<Self> {
        Self::new(vec![step; dim])
    }

    /// Correlated proposal with covariance `cov` (row-major, `d × d`).
    pub fn from_covariance(cov: &[f64], dim: usize) -> Result<Self> {
        const OP: &str = "mcmc::ProposalConfig";
        if dim == 0 || cov.len() != dim * dim {
            return Err(domain(OP, format!("covariance must be {dim}×{dim}")));
        }
        let mut l = vec![0.0; dim * dim];
        for i in 0..dim {
            for j in 0..=i {
                let s: f64 = (0..j).map(|k| l[i * dim + k] * l[j * dim + k]).sum();
                let v = cov[i * dim + j] - s;
                if i == j {
                    if !(v > 0.0 && v.is_finite()) {
                        return Err(domain(OP, "covariance is not positive definite"));
                    }
                    l[i * dim + i] = v.sqrt();
                } else {
                    l[i * dim + j] = v / l[j * dim + j];
                }
            }
        }
        let step_sizes =
            (0..dim).map(|i| l[i * dim..(i + 1) * dim].iter().map(|x| x * x).sum::<f64>().sqrt()).collect();
        Ok(ProposalConfig { step_sizes, chol: Some(l) })
    }

    /// Marginal standard deviations of the increments.
    pub fn step_sizes(&self) -> &[f64] {
        &self.step_sizes
    }

    pub fn is_correlated(&self) -> bool {
        self.chol.is_some()
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        let mut p = Self::new(self.step_sizes.iter().map(|s| s * factor).collect())?;
        p.chol = self.chol.as_ref().map(|l| l.iter().map(|x| x * factor).collect());
        Ok(p)
    }

    fn dim(&self) -> usize {
        self.step_sizes.len()
    }
}

/// `z' = z + A ξ`, `ξ ~ N(0, I)`, with `A` the diagonal of step sizes or the
/// Cholesky factor.
pub fn rw_propose<R: Rng + ?Sized>(
    z: &UnconstrainedParams,
    cfg: &ProposalConfig,
    rng: &mut R,
) -> Result<UnconstrainedParams> {
    let d = cfg.dim();
    if z.0.len() != d {
        return Err(domain(
            "mcmc::rw_propose",
            format!("dimension mismatch: {} coordinates, {} step sizes", z.0.len(), d),
        ));
    }
    let xi: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
    Ok(UnconstrainedParams(match &cfg.chol {
        None => z.0.iter().zip(&cfg.step_sizes).zip(&xi).map(|((x, s), e)| x + s * e).collect(),
        Some(l) => (0..d).map(|i| z.0[i] + (0..=i).map(|j| l[i * d + j] * xi[j]).sum::<f64>()).collect(),
    }))
}

/// `log q(to | from)` for the random-walk kernel.
pub fn log_proposal_density(from: &UnconstrainedParams, to: &UnconstrainedParams, cfg: &ProposalConfig) -> f64 {
    let d = cfg.dim();
    let diff: Vec<f64> = from.0.iter().zip(&to.0).map(|(a, b)| b - a).collect();
    match &cfg.chol {
        None => diff
            .iter()
            .zip(&cfg.step_sizes)
            .map(|(x, s)| {
                let u = x / s;
                -crate::models::LN_SQRT_2PI - s.ln() - 0.5 * u * u
            })
            .sum(),
        Some(l) => {
            // forward substitution L u = diff
            let mut u = vec![0.0; d];
            let mut out = 0.0;
            for i in 0..d {
                let s: f64 = (0..i).map(|j| l[i * d + j] * u[j]).sum();
                u[i] = (diff[i] - s) / l[i * d + i];
                out += -crate::models::LN_SQRT_2PI - l[i * d + i].ln() - 0.5 * u[i] * u[i];
            }
            out
        }
    }
}

/// `min{1, exp(log_target_proposed - log_target_current)}`, with the target
/// being `log ẑ + log π` (proposal terms cancel).
pub fn acceptance_probability(log_target_proposed: f64, log_target_current: f64) -> f64 {
    let d = log_target_proposed - log_target_current;
    if d.is_nan() {
        if log_target_proposed == f64::NEG_INFINITY {
            0.0
        } else {
            // both +∞ / both -∞: treat as equal
            1.0
        }
    } else if d >= 0.0 {
        1.0
    } else {
        d.exp()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Start {
    /// Draw `θ_0` from the prior.
    Prior,
    /// Start from a given parameter value.
    Fixed(ModelParams),
    /// Draw `θ_0` uniformly from a pool, e.g. draws of a long reference chain.
    Pool(Arc<Vec<ModelParams>>),
}

#[derive(Debug, Clone)]
pub struct McmcConfig {
    pub spec: ModelSpec,
    pub proposal: ProposalConfig,
    pub filter: FilterOptions,
    pub start: Start,
    /// Prior redraws allowed when the initial filter run collapses.
    pub max_init_retries: usize,
}

impl McmcConfig {
    pub fn new(spec: ModelSpec, proposal: ProposalConfig, particles: usize) -> Self {
        McmcConfig {
            spec,
            proposal,
            filter: FilterOptions::serial(particles),
            start: Start::Prior,
            max_init_retries: 100,
        }
    }

    pub fn with_start(mut self, start: Start) -> Self {
        self.start = start;
        self
    }
}

/// One iterate of a chain.
#[derive(Debug)]
pub struct ChainRecord<S> {
    pub theta: ModelParams,
    pub z: UnconstrainedParams,
    pub state: Arc<S>,
    pub log_z: f64,
    pub log_prior: f64,
    pub accepted: bool,
}

// manual impl: cloning shares the filter state instead of requiring `S: Clone`
impl<S> Clone for ChainRecord<S> {
    fn clone(&self) -> Self {
        ChainRecord {
            theta: self.theta,
            z: self.z.clone(),
            state: Arc::clone(&self.state),
            log_z: self.log_z,
            log_prior: self.log_prior,
            accepted: self.accepted,
        }
    }
}

impl<S> ChainRecord<S> {
    pub fn z_hat(&self) -> f64 {
        self.log_z.exp()
    }
}

#[derive(Debug, Clone)]
pub struct Chain<S> {
    pub records: Vec<ChainRecord<S>>,
    pub level: Level,
    pub acceptance_rate: f64,
    /// Proposals rejected because their filter run collapsed.
    pub collapsed_proposals: usize,
}

impl<S> Chain<S> {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Records after discarding the first `floor(fraction · len)` of them.
    pub fn after_burn_in(&self, fraction: f64) -> &[ChainRecord<S>] {
        let skip = ((self.records.len() as f64) * fraction.clamp(0.0, 1.0)).floor() as usize;
        &self.records[skip.min(self.records.len())..]
    }

    pub fn last(&self) -> &ChainRecord<S> {
        self.records.last().expect("chains hold at least the initial state")
    }
}

fn is_collapse(e: &Error) -> bool {
    matches!(e, Error::FilterCollapse { .. })
}

fn run_chain<S, R, F>(
    op: &'static str,
    level: Level,
    m: usize,
    cfg: &McmcConfig,
    rng: &mut R,
    mut filter: F,
) -> Result<Chain<S>>
where
    R: Rng + ?Sized,
    F: FnMut(&ModelParams, &mut R) -> Result<(S, f64)>,
{
    let spec = &cfg.spec;
    if matches!(&cfg.start, Start::Pool(p) if p.is_empty()) {
        return Err(domain(op, "empty start pool"));
    }
    if cfg.proposal.step_sizes.len() != spec.dim() {
        return Err(domain(op, format!("{} step sizes for {} coordinates", cfg.proposal.step_sizes.len(), spec.dim())));
    }

    // initial state
    let mut tries = 0;
    let first = loop {
        let theta = match &cfg.start {
            Start::Prior => prior_sample(spec, rng),
            Start::Fixed(t) => *t,
            Start::Pool(pool) => pool[rng.gen_range(0..pool.len())],
        };
        let z = transform(&theta)?;
        let log_prior = prior_logpdf(&theta);
        match filter(&theta, rng) {
            Ok((state, log_z)) => {
                break ChainRecord { theta, z, state: Arc::new(state), log_z, log_prior, accepted: true };
            }
            Err(e) if is_collapse(&e) && !matches!(cfg.start, Start::Fixed(_)) && tries < cfg.max_init_retries => {
                log::debug!("{op}: initial draw collapsed ({e}); redrawing");
                tries += 1;
            }
            Err(e) if is_collapse(&e) => return Err(Error::InitialisationFailed { op, tries: tries + 1 }),
            Err(e) => return Err(e),
        }
    };

    let mut records = Vec::with_capacity(m + 1);
    records.push(first);
    let (mut accepted, mut collapsed) = (0usize, 0usize);
    for _ in 0..m {
        let cur = records.last().expect("non-empty");
        let z_prop = rw_propose(&cur.z, &cfg.proposal, rng)?;
        let theta_prop = untransform(&z_prop, spec)?;
        let lp_prop = prior_logpdf(&theta_prop);
        let mut next = None;
        if lp_prop > f64::NEG_INFINITY {
            match filter(&theta_prop, rng) {
                Ok((state, log_z)) => {
                    let alpha = acceptance_probability(log_z + lp_prop, cur.log_z + cur.log_prior);
                    let u: f64 = rng.gen();
                    if u < alpha {
                        next = Some(ChainRecord {
                            theta: theta_prop,
                            z: z_prop,
                            state: Arc::new(state),
                            log_z,
                            log_prior: lp_prop,
                            accepted: true,
                        });
                    }
                }
                Err(e) if is_collapse(&e) => {
                    log::debug!("{op}: proposal collapsed ({e}); rejecting");
                    collapsed += 1;
                }
                Err(e) => return Err(e),
            }
        }
        let rec = match next {
            Some(r) => {
                accepted += 1;
                r
            }
            None => ChainRecord { accepted: false, ..cur.clone() },
        };
        records.push(rec);
    }
    if collapsed > 0 {
        log::info!("{op}: {collapsed} of {m} proposals rejected after filter collapse");
    }
    let acceptance_rate = if m == 0 { 0.0 } else { accepted as f64 / m as f64 };
    Ok(Chain { records, level, acceptance_rate, collapsed_proposals: collapsed })
}

/// Particle MCMC at a single level: `m` Metropolis–Hastings transitions
/// after the initial state, so the chain holds `m + 1` records.
pub fn pmcmc_chain<R: Rng + ?Sized>(
    y: &ObservationSeries,
    level: Level,
    m: usize,
    cfg: &McmcConfig,
    rng: &mut R,
) -> Result<Chain<FilterOutput>> {
    run_chain("pmcmc_chain", level, m, cfg, rng, |theta, rng| {
        let out = particle_filter_with(y, level, cfg.filter, theta, rng)?;
        let lz = out.log_z;
        Ok((out, lz))
    })
}

/// Coupled MCMC at level `l ≥ 1`, driven by the delta particle filter.
pub fn coupled_chain<R: Rng + ?Sized>(
    y: &ObservationSeries,
    level: Level,
    m: usize,
    cfg: &McmcConfig,
    rng: &mut R,
) -> Result<Chain<CoupledOutput>> {
    level.coarser()?;
    run_chain("coupled_chain", level, m, cfg, rng, |theta, rng| {
        let out = delta_particle_filter_with(y, level, cfg.filter, theta, rng)?;
        let lz = out.log_z;
        Ok((out, lz))
    })
}

/// Pilot tuning aimed at a target acceptance rate. Each round runs
/// `pilot_iters` iterations from the end of the previous round and rescales
/// the proposal by `exp(3 (acc - target))`, clamped to `[1/4, 4]`. Once the
/// pooled pilot states after the first round hold at least `10 d` accepted
/// moves, the proposal takes their sample covariance, first scaled by
/// `2.38 / √d` and from then on by the running factor. Returns the tuned
/// proposal and the final state of the last pilot chain.
pub fn tune_proposal<R: Rng + ?Sized>(
    y: &ObservationSeries,
    level: Level,
    cfg: &McmcConfig,
    pilot_iters: usize,
    rounds: usize,
    target: f64,
    rng: &mut R,
) -> Result<(ProposalConfig, ModelParams)> {
    let mut cfg = cfg.clone();
    let d = cfg.spec.dim();
    let mut base = cfg.proposal.clone();
    let mut scale = 1.0;
    let mut pooled: Vec<Vec<f64>> = Vec::new();
    let mut accepted = 0;
    let mut theta = None;
    for round in 0..rounds {
        cfg.proposal = base.scaled(scale)?;
        let chain = pmcmc_chain(y, level, pilot_iters, &cfg, rng)?;
        let acc = chain.acceptance_rate;
        let factor = (3.0 * (acc - target)).exp().clamp(0.25, 4.0);
        log::debug!("tune round {round}: acceptance {acc:.3}, scale factor {factor:.3}");
        theta = Some(chain.last().theta);
        cfg.start = Start::Fixed(chain.last().theta);
        if round + 1 == rounds {
            break;
        }
        scale *= factor;
        if round > 0 {
            accepted += chain.records.iter().filter(|r| r.accepted).count();
            pooled.extend(chain.records.iter().map(|r| r.z.0.clone()));
        }
        if accepted >= 10 * d {
            if let Ok(p) = ProposalConfig::from_covariance(&sample_covariance(&pooled, d), d) {
                if !base.is_correlated() {
                    scale = 2.38 / (d as f64).sqrt();
                }
                base = p;
            }
        }
    }
    Ok((cfg.proposal, theta.unwrap_or_else(|| cfg.spec.template())))
}

fn sample_covariance(xs: &[Vec<f64>], d: usize) -> Vec<f64> {
    let n = xs.len() as f64;
    let mean: Vec<f64> = (0..d).map(|k| xs.iter().map(|x| x[k]).sum::<f64>() / n).collect();
    let mut cov = vec![0.0; d * d];
    for x in xs {
        for i in 0..d {
            for j in 0..d {
                cov[i * d + j] += (x[i] - mean[i]) * (x[j] - mean[j]) / (n - 1.0);
            }
        }
    }
    cov
}
