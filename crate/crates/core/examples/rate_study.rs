//! A small cost-versus-MSE study: fitted slopes of log cost on log MSE for
//! the single-level and multilevel estimators.
//!
//! cargo run --release --example rate_study -- [replicates]

use volterra_mlmc::experiments::{generate_synthetic, rate_study, RateStudyConfig};
use volterra_mlmc::functional::Functional;
use volterra_mlmc::mcmc::{tune_proposal, McmcConfig, ProposalConfig};
use volterra_mlmc::models::ModelSpec;
use volterra_mlmc::multilevel::{AllocationConfig, RunOptions};
use volterra_mlmc::rng::SeedNode;
use volterra_mlmc::sve::{Level, VolParams};

fn main() -> volterra_mlmc::Result<()> {
    let replicates = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(8);
    let spec = ModelSpec::state_space();
    let truth = spec.params_with(VolParams { v0: 0.5, kappa: 0.5, lambda: 1.0, nu: 0.3 }, 0.0, 0.0);
    let data = generate_synthetic(&truth, 10, Level(6), &mut SeedNode::root(1).rng())?;

    let cfg = McmcConfig::new(spec, ProposalConfig::uniform(spec.dim(), 0.5)?, 20);
    let (proposal, _) = tune_proposal(&data.y, Level(0), &cfg, 200, 5, 0.23, &mut SeedNode::root(2).rng())?;
    let mut opts = RunOptions::new(McmcConfig { proposal, ..cfg });
    opts.parallel_levels = true;

    let study = RateStudyConfig {
        epsilons: vec![0.4, 0.2, 0.1],
        replicates,
        allocation: AllocationConfig { c_m: 20.0, base_level: 2, ..Default::default() },
        min_points: 3,
        ..Default::default()
    };
    let res = rate_study(&data.y, &opts, &study, &Functional::parameter_defaults(&spec), 3)?;
    println!("reference: level {}, {} records", res.reference.level.0, res.reference.m);
    for p in &res.points {
        let mse: Vec<String> = p.mse.iter().map(|m| format!("{m:.2e}")).collect();
        println!(
            "{:<7} eps {:<4} L {} cost {:>10.0}  mse {}",
            p.method.label(),
            p.epsilon,
            p.max_level,
            p.cost,
            mse.join(" ")
        );
    }
    println!("{:<22} {:<8} slope", "parameter", "method");
    for s in &res.slopes {
        println!("{:<22} {:<8} {:+.3}", s.parameter, s.method.label(), s.slope);
    }
    Ok(())
}
