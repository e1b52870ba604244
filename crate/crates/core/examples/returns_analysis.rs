//! Return statistics and the lagged |R|/R correlation curve of a price file.
//! Without an argument a synthetic stochastic-volatility price path is used.
//!
//! cargo run --release --example returns_analysis -- [prices.csv] [max_lag]

use std::path::PathBuf;

use volterra_mlmc::experiments::{generate_synthetic, lagged_abs_correlation, log_returns, ReturnStats};
use volterra_mlmc::io::load_returns;
use volterra_mlmc::models::ModelSpec;
use volterra_mlmc::rng::SeedNode;
use volterra_mlmc::sve::{Level, VolParams};

fn main() -> volterra_mlmc::Result<()> {
    let mut args = std::env::args().skip(1);
    let path = args.next().map(PathBuf::from);
    let max_lag = args.next().and_then(|a| a.parse().ok()).unwrap_or(10);

    let returns = match path {
        Some(p) => load_returns(&p)?,
        None => {
            let spec = ModelSpec::stoch_vol();
            let theta = spec.params_with(VolParams { v0: 0.04, kappa: 0.04, lambda: 1.0, nu: 0.3 }, -0.5, 0.0);
            let data = generate_synthetic(&theta, 250, Level(4), &mut SeedNode::root(1).rng())?;
            log_returns(&data.prices())?
        }
    };
    let s = ReturnStats::from_returns(&returns)?;
    println!("n {}  mean {:.5}  variance {:.5}", s.n, s.mean, s.variance);
    println!("skewness {:?}  kurtosis {:?}", s.skewness, s.kurtosis);
    for c in lagged_abs_correlation(&returns, max_lag)? {
        let bar = c.corr.map_or(String::new(), |r| "#".repeat((r.abs() * 40.0).round() as usize));
        println!("{:>4} {:>8} {bar}", c.lag, c.corr.map_or("NaN".into(), |r| format!("{r:+.3}")));
    }
    Ok(())
}
