//! Stochastic-volatility posterior predictive summaries from a multilevel
//! run, compared with the statistics of the observed returns.
//!
//! cargo run --release --example predictive_sv

use volterra_mlmc::experiments::{
    generate_synthetic, lagged_abs_correlation, predictive_summaries, PredictiveConfig, ReturnStats,
};
use volterra_mlmc::functional::Functional;
use volterra_mlmc::mcmc::{McmcConfig, ProposalConfig, Start};
use volterra_mlmc::models::ModelSpec;
use volterra_mlmc::multilevel::{ml_estimate, LevelAllocation, RunOptions};
use volterra_mlmc::rng::SeedNode;
use volterra_mlmc::sve::{Level, VolParams};

fn main() -> volterra_mlmc::Result<()> {
    let spec = ModelSpec::stoch_vol();
    let truth = spec.params_with(VolParams { v0: 0.04, kappa: 0.04, lambda: 1.0, nu: 0.3 }, -0.5, 0.0);
    let data = generate_synthetic(&truth, 40, Level(6), &mut SeedNode::root(1).rng())?;
    let returns = data.y.increments();

    let cfg = McmcConfig::new(spec, ProposalConfig::uniform(spec.dim(), 0.1)?, 30).with_start(Start::Fixed(truth));
    let opts = RunOptions::new(cfg);
    let alloc = LevelAllocation::explicit(2, vec![400, 100, 50], spec.h)?;
    let run = ml_estimate(&data.y, &alloc, &opts, &Functional::parameter_defaults(&spec), 2)?;

    let max_lag = 5;
    let pred = predictive_summaries(&run, &PredictiveConfig { t_pred: returns.len(), n_draws: 40, max_lag }, 3)?;
    let obs = ReturnStats::from_returns(&returns)?;
    println!("{:<10} {:>10} {:>10}", "", "observed", "predictive");
    println!("{:<10} {:>10.5} {:>10.5}", "mean", obs.mean, pred.mean);
    println!("{:<10} {:>10.5} {:>10.5}", "variance", obs.variance, pred.variance);
    println!("{:<10} {:>10.3} {:>10.3}", "skewness", obs.skewness.unwrap_or(f64::NAN), pred.skewness);
    println!("{:<10} {:>10.3} {:>10.3}", "kurtosis", obs.kurtosis.unwrap_or(f64::NAN), pred.kurtosis);
    for (o, (lag, p)) in lagged_abs_correlation(&returns, max_lag)?.iter().zip(&pred.correlations) {
        println!("lag {lag:>3} {:>10.3} {p:>10.3}", o.corr.unwrap_or(f64::NAN));
    }
    Ok(())
}
