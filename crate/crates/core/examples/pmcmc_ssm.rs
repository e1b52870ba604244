//! Particle marginal Metropolis-Hastings on the state-space model, with a
//! pilot phase that tunes the random-walk step sizes.
//!
//! cargo run --release --example pmcmc_ssm

use volterra_mlmc::experiments::generate_synthetic;
use volterra_mlmc::mcmc::{pmcmc_chain, tune_proposal, McmcConfig, ProposalConfig, Start};
use volterra_mlmc::models::ModelSpec;
use volterra_mlmc::rng::SeedNode;
use volterra_mlmc::sve::{Level, VolParams};

fn main() -> volterra_mlmc::Result<()> {
    let spec = ModelSpec::state_space();
    let truth = spec.params_with(VolParams { v0: 0.5, kappa: 0.5, lambda: 1.0, nu: 0.3 }, 0.0, 0.0);
    let data = generate_synthetic(&truth, 20, Level(6), &mut SeedNode::root(1).rng())?;
    let level = Level(3);

    let cfg = McmcConfig::new(spec, ProposalConfig::uniform(spec.dim(), 0.5)?, 50);
    let (proposal, start) = tune_proposal(&data.y, level, &cfg, 200, 5, 0.23, &mut SeedNode::root(2).rng())?;
    println!("tuned step sizes {:?}", proposal.step_sizes());

    let cfg = McmcConfig { proposal, ..cfg }.with_start(Start::Fixed(start));
    let chain = pmcmc_chain(&data.y, level, 3000, &cfg, &mut SeedNode::root(3).rng())?;
    println!("acceptance rate {:.3}", chain.acceptance_rate);

    let kept = chain.after_burn_in(0.1);
    for (i, c) in spec.coords().iter().enumerate() {
        let mean = kept.iter().map(|r| r.z.0[i]).sum::<f64>() / kept.len() as f64;
        let true_z = c.forward(truth.get(c.name()).expect("estimated coordinate")).expect("truth inside the support");
        println!("{:<22} posterior mean {mean:+.3}  (truth {true_z:+.3})", c.unconstrained_label());
    }
    Ok(())
}
