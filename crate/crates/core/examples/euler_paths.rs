//! Euler paths of the Volterra volatility at successive levels, driven by the
//! same Brownian increments, and the strong error against the finest level.
//!
//! cargo run --release --example euler_paths

use volterra_mlmc::rng::SeedNode;
use volterra_mlmc::sve::{coarsen, euler_volatility_path, sample_increments, KernelParams, Level, VolParams};

fn main() -> volterra_mlmc::Result<()> {
    let vp = VolParams { v0: 0.5, kappa: 0.5, lambda: 1.0, nu: 0.3 };
    let kp = KernelParams::new(0.7, 0.4)?;
    let (finest, horizon, paths) = (8u32, 4usize, 200);

    let mut sq_err = vec![0.0; finest as usize];
    let mut rng = SeedNode::root(1).rng();
    for _ in 0..paths {
        let mut w = sample_increments(Level(finest), horizon, &mut rng)?;
        let reference = euler_volatility_path(&vp, &kp, &w).skeleton();
        for l in (0..finest).rev() {
            w = coarsen(&w)?;
            let v = euler_volatility_path(&vp, &kp, &w).skeleton();
            sq_err[l as usize] += v.iter().zip(&reference).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / horizon as f64;
        }
    }
    println!("level  mean squared error at unit times");
    for (l, e) in sq_err.iter().enumerate() {
        println!("{l:>5}  {:.3e}", e / paths as f64);
    }
    Ok(())
}
