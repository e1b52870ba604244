//! Command-line front end. Each subcommand resolves a [`RunConfig`], writes
//! `resolved_config.toml` into the output directory and then its own
//! artifacts.
//!
//! Seeds derive from the root seed by label: `data` (synthetic data),
//! `tune` (pilot chains), `inference` (chains; level `l` uses
//! `child("level", l)`), `rate_study` and `predict`.

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::config::{parse_config, DataSource, RunConfig};
use crate::error::{Error, Result};
use crate::experiments::{
    generate_synthetic, lagged_abs_correlation, predictive_summaries, rate_study, ReturnStats, SyntheticDataset,
};
use crate::filters::FilterOptions;
use crate::functional::Functional;
use crate::io::{fmt_f64, fmt_opt, load_observations, load_price_series, write_json, CsvOut, Provenance};
use crate::mcmc::{tune_proposal, Chain, ChainRecord, McmcConfig, ProposalConfig, Start};
use crate::models::{ModelKind, ObservationSeries, ParamRecord};
use crate::multilevel::{
    choose_levels_with, ml_estimate, single_level_estimate, LevelAllocation, MultilevelRun, RunOptions,
};
use crate::rng::SeedNode;
use crate::sve::Level;

/// Prefix of the environment variables that stand in for the global flags.
pub const ENV_PREFIX: &str = "VMC_";

#[derive(Debug, Parser)]
#[command(
    name = "volterra-mlmc",
    version,
    about = "Particle and multilevel particle MCMC for stochastic Volterra models"
)]
pub struct Cli {
    /// TOML run configuration; defaults apply when absent.
    #[arg(long, global = true, env = "VMC_CONFIG")]
    pub config: Option<PathBuf>,
    /// Root seed (overrides seeds.root).
    #[arg(long, global = true, env = "VMC_SEED")]
    pub seed: Option<u64>,
    /// Worker threads (overrides runtime.threads).
    #[arg(long, global = true, env = "VMC_THREADS")]
    pub threads: Option<usize>,
    /// Run everything serially.
    #[arg(long, global = true, env = "VMC_EXACT")]
    pub exact: bool,
    /// Output directory (overrides output.dir).
    #[arg(long, global = true, env = "VMC_OUT")]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Simulate a synthetic dataset.
    Simulate,
    /// Single-level particle MCMC.
    Pmcmc,
    /// Multilevel particle MCMC.
    Mlpmcmc,
    /// Cost-versus-MSE study of both estimators.
    RateStudy,
    /// Summary statistics and lagged correlations of observed returns.
    AnalyzeReturns,
    /// Posterior predictive summaries from a multilevel run.
    Predict,
}

impl Cli {
    /// Config file (or defaults) with the flag overrides applied.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => parse_config(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seeds.root = s;
        }
        if let Some(t) = self.threads {
            cfg.runtime.threads = t;
        }
        if self.exact {
            cfg.runtime.exact = true;
        }
        if let Some(o) = &self.out {
            cfg.output.dir = o.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Files written by a command.
#[derive(Debug, Clone, Default)]
pub struct RunReport {
    pub files: Vec<PathBuf>,
}

/// Parse arguments and run.
pub fn main_with_args<I, T>(args: I) -> Result<RunReport>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| Error::Config(e.to_string()))?;
    let cfg = cli.resolve()?;
    run(cli.command, &cfg)
}

/// Run `command` under `cfg`, on a dedicated thread pool when
/// `runtime.threads > 0`.
pub fn run(command: Command, cfg: &RunConfig) -> Result<RunReport> {
    std::fs::create_dir_all(&cfg.output.dir)?;
    let mut ctx = Ctx {
        cfg,
        prov: Provenance { config_hash: cfg.hash(), seed: cfg.seeds.root },
        root: SeedNode::root(cfg.seeds.root),
        report: RunReport::default(),
    };
    let echo = ctx.path("resolved_config.toml");
    std::fs::write(&echo, cfg.to_toml())?;
    ctx.report.files.push(echo);

    let threads = if cfg.runtime.exact { 1 } else { cfg.runtime.threads };
    if threads > 0 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        pool.install(|| ctx.dispatch(command))?;
    } else {
        ctx.dispatch(command)?;
    }
    Ok(ctx.report)
}

struct Ctx<'a> {
    cfg: &'a RunConfig,
    prov: Provenance,
    root: SeedNode,
    report: RunReport,
}

#[derive(Serialize)]
struct Doc<'a, T: Serialize> {
    config_hash: &'a str,
    seed: u64,
    #[serde(flatten)]
    body: T,
}

#[derive(Serialize)]
struct NamedValue {
    functional: String,
    value: f64,
}

#[derive(Serialize)]
struct PmcmcSummary {
    level: u32,
    iterations: usize,
    burn_in: f64,
    acceptance_rate: f64,
    collapsed_proposals: usize,
    cost: f64,
    step_sizes: Vec<f64>,
    estimates: Vec<NamedValue>,
}

impl<'a> Ctx<'a> {
    fn path(&self, name: &str) -> PathBuf {
        self.cfg.output.dir.join(name)
    }

    fn csv(&mut self, name: &str, header: &[&str]) -> Result<CsvOut> {
        let p = self.path(name);
        self.report.files.push(p.clone());
        CsvOut::create(&p, &self.prov, header)
    }

    fn json<T: Serialize>(&mut self, name: &str, body: T) -> Result<()> {
        let p = self.path(name);
        write_json(&p, &Doc { config_hash: &self.prov.config_hash, seed: self.prov.seed, body })?;
        self.report.files.push(p);
        Ok(())
    }

    fn dispatch(&mut self, command: Command) -> Result<()> {
        match command {
            Command::Simulate => self.simulate(),
            Command::Pmcmc => self.pmcmc(),
            Command::Mlpmcmc => self.mlpmcmc().map(|_| ()),
            Command::RateStudy => self.rate_study(),
            Command::AnalyzeReturns => self.analyze_returns(),
            Command::Predict => self.predict(),
        }
    }

    fn synthetic(&self) -> Result<SyntheticDataset> {
        let d = &self.cfg.data;
        let theta = d.truth.params(&self.cfg.model);
        generate_synthetic(&theta, d.horizon, Level::new(d.data_level)?, &mut self.root.named("data").rng())
    }

    fn observations(&self) -> Result<ObservationSeries> {
        let d = &self.cfg.data;
        match d.source {
            DataSource::Synthetic => Ok(self.synthetic()?.y),
            DataSource::Observations => load_observations(d.path.as_deref().expect("validated")),
            DataSource::Prices => load_price_series(d.path.as_deref().expect("validated")),
        }
    }

    fn run_options(&self, y: &ObservationSeries, tune_level: Level) -> Result<RunOptions> {
        let cfg = self.cfg;
        let i = &cfg.inference;
        let parallel = !cfg.runtime.exact;
        let mut mcmc = McmcConfig::new(cfg.model, ProposalConfig::new(cfg.step_sizes())?, i.particles);
        mcmc.filter = FilterOptions { particles: i.particles, parallel };
        if i.pilot_tune {
            let (proposal, theta) = tune_proposal(
                y,
                tune_level,
                &mcmc,
                i.pilot_iterations,
                i.pilot_rounds,
                i.target_acceptance,
                &mut self.root.named("tune").rng(),
            )?;
            log::info!("tuned step sizes: {:?}", proposal.step_sizes());
            mcmc.proposal = proposal;
            mcmc.start = Start::Fixed(theta);
        }
        Ok(RunOptions { mcmc, burn_in: i.burn_in, parallel_levels: parallel })
    }

    fn allocation(&self) -> Result<LevelAllocation> {
        let i = &self.cfg.inference;
        match &i.m {
            Some(m) => LevelAllocation::explicit(i.allocation.base_level, m.clone(), self.cfg.model.h),
            None => choose_levels_with(i.epsilon, self.cfg.model.h, &i.allocation),
        }
    }

    fn write_chain<S>(&mut self, name: &str, chain: &Chain<S>) -> Result<()> {
        let mut header = vec!["iteration", "level"];
        header.extend(ParamRecord::NAMES);
        header.extend(["log_z_hat", "accepted"]);
        let mut w = self.csv(name, &header)?;
        for (k, r) in chain.records.iter().enumerate() {
            w.row(chain_row(k, chain.level, r))?;
        }
        w.finish()
    }

    fn simulate(&mut self) -> Result<()> {
        let d = self.synthetic()?;
        let skeleton = d.latent.skeleton();
        let mut w = self.csv("data.csv", &["t", "y", "V"])?;
        for (t, (y, v)) in d.y.y.iter().zip(&skeleton).enumerate() {
            w.row([(t + 1).to_string(), fmt_f64(*y), fmt_f64(*v)])?;
        }
        w.finish()?;
        let n = d.data_level.steps_per_unit();
        let mut w = self.csv("latent.csv", &["index", "time", "V"])?;
        for (j, v) in d.latent.values.iter().enumerate() {
            w.row([j.to_string(), fmt_f64(j as f64 / n as f64), fmt_f64(*v)])?;
        }
        w.finish()?;
        if d.kind == ModelKind::StochVol {
            let mut w = self.csv("prices.csv", &["t", "price"])?;
            for (t, p) in d.prices().iter().enumerate() {
                w.row([t.to_string(), fmt_f64(*p)])?;
            }
            w.finish()?;
        }
        Ok(())
    }

    fn pmcmc(&mut self) -> Result<()> {
        let y = self.observations()?;
        let i = &self.cfg.inference;
        let level = Level::new(i.level)?;
        let opts = self.run_options(&y, level)?;
        let phis = self.cfg.functionals()?;
        let run = single_level_estimate(&y, level, i.iterations, &opts, &phis, self.root.named("inference").0)?;
        if self.cfg.output.chains {
            self.write_chain(&format!("chain_level{}.csv", level.0), &run.chain)?;
        }
        let summary = PmcmcSummary {
            level: level.0,
            iterations: i.iterations,
            burn_in: i.burn_in,
            acceptance_rate: run.chain.acceptance_rate,
            collapsed_proposals: run.chain.collapsed_proposals,
            cost: run.cost,
            step_sizes: opts.mcmc.proposal.step_sizes().to_vec(),
            estimates: named(&phis, &run.values),
        };
        self.json("pmcmc_summary.json", summary)
    }

    fn mlpmcmc_on(&mut self, y: &ObservationSeries) -> Result<MultilevelRun> {
        let alloc = self.allocation()?;
        let opts = self.run_options(y, Level(alloc.base_level))?;
        let phis = self.cfg.functionals()?;
        let run = ml_estimate(y, &alloc, &opts, &phis, self.root.named("inference").0)?;
        if self.cfg.output.chains {
            self.write_chain(&format!("chain_level{}.csv", run.base_chain.level.0), &run.base_chain)?;
            for c in &run.coupled_chains {
                self.write_chain(&format!("chain_level{}.csv", c.level.0), c)?;
            }
        }
        self.json("mlpmcmc.json", run.report())?;
        Ok(run)
    }

    fn mlpmcmc(&mut self) -> Result<MultilevelRun> {
        let y = self.observations()?;
        self.mlpmcmc_on(&y)
    }

    fn rate_study(&mut self) -> Result<()> {
        let y = self.observations()?;
        let rs = &self.cfg.rate_study;
        let opts = self.run_options(&y, Level(rs.allocation.base_level))?;
        let phis = self.cfg.functionals()?;
        let res = rate_study(&y, &opts, rs, &phis, self.root.named("rate_study").0)?;

        let mut w = self.csv("rate_study.csv", &["parameter", "method", "slope"])?;
        for s in &res.slopes {
            w.row([s.parameter.clone(), s.method.label().to_string(), fmt_f64(s.slope)])?;
        }
        w.finish()?;

        let mut header =
            vec!["method".to_string(), "epsilon".into(), "max_level".into(), "cost".into(), "replicates".into()];
        header.extend(res.parameters.iter().map(|p| format!("mse[{p}]")));
        let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
        let mut w = self.csv("rate_points.csv", &header_refs)?;
        for p in &res.points {
            let mut row = vec![
                p.method.label().to_string(),
                fmt_f64(p.epsilon),
                p.max_level.to_string(),
                fmt_f64(p.cost),
                p.replicates.to_string(),
            ];
            row.extend(p.mse.iter().map(|m| fmt_f64(*m)));
            w.row(row)?;
        }
        w.finish()?;

        let mut w = self.csv(
            "rate_runs.csv",
            &["method", "epsilon", "replicate", "max_level", "cost", "parameter", "estimate", "sq_error"],
        )?;
        for r in &res.runs {
            for (k, name) in res.parameters.iter().enumerate() {
                w.row([
                    r.method.label().to_string(),
                    fmt_f64(r.epsilon),
                    r.replicate.to_string(),
                    r.max_level.to_string(),
                    fmt_f64(r.cost),
                    name.clone(),
                    fmt_f64(r.estimates[k]),
                    fmt_f64(r.sq_errors[k]),
                ])?;
            }
        }
        w.finish()?;

        #[derive(Serialize)]
        struct RefDoc {
            level: u32,
            records: usize,
            acceptance_rate: f64,
            estimates: Vec<NamedValue>,
        }
        let r = &res.reference;
        let doc = RefDoc {
            level: r.level.0,
            records: r.m,
            acceptance_rate: r.acceptance_rate,
            estimates: named(&phis, &r.values),
        };
        self.json("rate_reference.json", doc)
    }

    fn returns(&self) -> Result<Vec<f64>> {
        let d = &self.cfg.data;
        match d.source {
            DataSource::Prices => crate::io::load_returns(d.path.as_deref().expect("validated")),
            _ => Ok(self.observations()?.increments()),
        }
    }

    fn write_return_stats(&mut self, rows: &[(&str, ReturnStats)]) -> Result<()> {
        let mut w = self.csv("return_stats.csv", &["source", "n", "mean", "variance", "skewness", "kurtosis"])?;
        for (src, s) in rows {
            w.row([
                src.to_string(),
                s.n.to_string(),
                fmt_f64(s.mean),
                fmt_f64(s.variance),
                fmt_opt(s.skewness),
                fmt_opt(s.kurtosis),
            ])?;
        }
        w.finish()
    }

    fn analyze_returns(&mut self) -> Result<()> {
        let r = self.returns()?;
        let stats = ReturnStats::from_returns(&r)?;
        self.write_return_stats(&[("observed", stats)])?;
        let corr = lagged_abs_correlation(&r, self.cfg.analysis.max_lag)?;
        let mut w = self.csv("lag_correlation.csv", &["lag", "corr"])?;
        for c in corr {
            w.row([c.lag.to_string(), fmt_opt(c.corr)])?;
        }
        w.finish()
    }

    fn predict(&mut self) -> Result<()> {
        let (returns, y) = match self.cfg.data.source {
            DataSource::Prices => {
                let r = self.returns()?;
                let y = ObservationSeries::from_returns(&r)?;
                (r, y)
            }
            _ => {
                let y = self.observations()?;
                (y.increments(), y)
            }
        };
        let run = self.mlpmcmc_on(&y)?;
        let pc = self.cfg.predictive(returns.len());
        let pred = predictive_summaries(&run, &pc, self.root.named("predict").0)?;
        let observed = ReturnStats::from_returns(&returns)?;
        let predicted = ReturnStats {
            n: pc.t_pred,
            mean: pred.mean,
            variance: pred.variance,
            skewness: Some(pred.skewness),
            kurtosis: Some(pred.kurtosis),
        };
        self.write_return_stats(&[("observed", observed), ("predictive", predicted)])?;
        let obs_corr = lagged_abs_correlation(&returns, self.cfg.analysis.max_lag)?;
        let mut w = self.csv("predictive_correlation.csv", &["lag", "observed", "predictive"])?;
        for (o, p) in obs_corr.iter().zip(&pred.correlations) {
            w.row([o.lag.to_string(), fmt_opt(o.corr), fmt_f64(p.1)])?;
        }
        w.finish()
    }
}

fn named(phis: &[Functional], values: &[f64]) -> Vec<NamedValue> {
    phis.iter().zip(values).map(|(p, v)| NamedValue { functional: p.name().to_string(), value: *v }).collect()
}

fn chain_row<S>(k: usize, level: Level, r: &ChainRecord<S>) -> Vec<String> {
    let mut row = vec![k.to_string(), level.0.to_string()];
    row.extend(r.theta.record().values().iter().map(|v| fmt_f64(*v)));
    row.push(fmt_f64(r.log_z));
    row.push(u8::from(r.accepted).to_string());
    row
}
