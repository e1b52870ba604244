//! Multilevel particle MCMC for posterior means, next to a single-level run
//! at the same top level.
//!
//! cargo run --release --example multilevel_ssm

use volterra_mlmc::experiments::generate_synthetic;
use volterra_mlmc::functional::Functional;
use volterra_mlmc::mcmc::{tune_proposal, McmcConfig, ProposalConfig};
use volterra_mlmc::models::ModelSpec;
use volterra_mlmc::multilevel::{choose_levels_with, ml_estimate, single_level_estimate, AllocationConfig, RunOptions};
use volterra_mlmc::rng::SeedNode;
use volterra_mlmc::sve::{Level, VolParams};

fn main() -> volterra_mlmc::Result<()> {
    let spec = ModelSpec::state_space();
    let truth = spec.params_with(VolParams { v0: 0.5, kappa: 0.5, lambda: 1.0, nu: 0.3 }, 0.0, 0.0);
    let data = generate_synthetic(&truth, 10, Level(6), &mut SeedNode::root(1).rng())?;

    let cfg = McmcConfig::new(spec, ProposalConfig::uniform(spec.dim(), 0.5)?, 20);
    let (proposal, _) = tune_proposal(&data.y, Level(0), &cfg, 200, 5, 0.23, &mut SeedNode::root(2).rng())?;
    let opts = RunOptions::new(McmcConfig { proposal, ..cfg });

    let mut phis = Functional::parameter_defaults(&spec);
    phis.push(Functional::parse("V[T]")?);
    let alloc = choose_levels_with(0.1, spec.h, &AllocationConfig { c_m: 10.0, ..Default::default() })?;
    println!("levels {}..={}, chain lengths {:?}", alloc.base_level, alloc.max_level, alloc.m);

    let run = ml_estimate(&data.y, &alloc, &opts, &phis, 3)?;
    let m_single = alloc.m[0];
    let single = single_level_estimate(&data.y, Level(alloc.max_level), m_single, &opts, &phis, 4)?;
    println!("{:<22} {:>10} {:>10}  per-level terms", "functional", "multilevel", "single");
    for (e, s) in run.estimates.iter().zip(&single.values) {
        let terms: Vec<String> = e.per_level.iter().map(|v| format!("{v:+.4}")).collect();
        println!("{:<22} {:>10.4} {:>10.4}  {}", e.functional, e.value, s, terms.join(" "));
    }
    println!("cost: multilevel {:.0}, single {:.0}", alloc.total_cost(), single.cost);
    Ok(())
}
