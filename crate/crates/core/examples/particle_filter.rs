//! Bootstrap particle filter on synthetic state-space data: the spread of
//! log-likelihood estimates shrinks with the particle count.
//!
//! cargo run --release --example particle_filter

use volterra_mlmc::experiments::generate_synthetic;
use volterra_mlmc::filters::{delta_particle_filter, particle_filter};
use volterra_mlmc::models::ModelSpec;
use volterra_mlmc::rng::SeedNode;
use volterra_mlmc::sve::{Level, VolParams};

fn main() -> volterra_mlmc::Result<()> {
    let spec = ModelSpec::state_space();
    let theta = spec.params_with(VolParams { v0: 0.5, kappa: 0.5, lambda: 1.0, nu: 0.3 }, 0.0, 0.0);
    let data = generate_synthetic(&theta, 20, Level(6), &mut SeedNode::root(1).rng())?;

    let mut rng = SeedNode::root(2).rng();
    println!("    N  level  mean log z    var log z");
    for n in [10, 100, 1000] {
        for level in [Level(0), Level(3)] {
            let lz = (0..100)
                .map(|_| particle_filter(&data.y, level, n, &theta, &mut rng).map(|o| o.log_z))
                .collect::<volterra_mlmc::Result<Vec<_>>>()?;
            let m = lz.iter().sum::<f64>() / lz.len() as f64;
            let v = lz.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (lz.len() - 1) as f64;
            println!("{n:>5}  {:>5}  {m:>10.4}  {v:>11.3e}", level.0);
        }
    }

    let pair = delta_particle_filter(&data.y, Level(3), 100, &theta, &mut rng)?;
    println!("coupled filter at level 3: log z {:.4}", pair.log_z);
    Ok(())
}
