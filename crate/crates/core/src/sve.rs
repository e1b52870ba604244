//! Dyadic time grids, the Volterra kernel, Brownian increments and the
//! Euler–Maruyama recursion for the volatility process
//!
//! ```text
//! V_t = V_0 + ∫_0^t K(t-s) { (κ - λ V_s) ds + ν sqrt(V_s) dW_s },   K(t) = C t^H.
//! ```
//!
//! Increments are indexed from 0: entry `k` of an [`IncrementPath`] is the
//! Brownian increment over `(kΔ, (k+1)Δ]`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};

/// Discretization level `l`, with step `Δ_l = 2^-l`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Level(pub u32);

impl Level {
    pub const MAX: u32 = 30;

    pub fn new(l: u32) -> Result<Self> {
        if l > Self::MAX {
            return Err(domain("sve_core::Level", format!("level {l} exceeds {}", Self::MAX)));
        }
        Ok(Level(l))
    }

    pub fn index(self) -> u32 {
        self.0
    }

    /// `Δ_l = 2^-l`, exact in binary floating point.
    pub fn step(self) -> f64 {
        (-(self.0 as f64)).exp2()
    }

    pub fn steps_per_unit(self) -> usize {
        1usize << self.0
    }

    /// The next coarser level, `l - 1`.
    pub fn coarser(self) -> Result<Level> {
        if self.0 == 0 {
            Err(Error::LevelUnderflow)
        } else {
            Ok(Level(self.0 - 1))
        }
    }

    pub fn grid_len(self, horizon: usize) -> usize {
        horizon * self.steps_per_unit()
    }
}

impl std::fmt::Display for Level {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Kernel `K(t) = C t^H`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub c: f64,
    pub h: f64,
}

impl KernelParams {
    pub fn new(c: f64, h: f64) -> Result<Self> {
        let kp = KernelParams { c, h };
        kp.validate()?;
        Ok(kp)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(domain("sve_core::KernelParams", format!("C must be positive, got {}", self.c)));
        }
        if !(0.0..0.5).contains(&self.h) {
            return Err(domain("sve_core::KernelParams", format!("H must lie in [0, 0.5), got {}", self.h)));
        }
        Ok(())
    }
}

/// Evaluate `K(t) = C t^H` for `t ≥ 0`.
pub fn kernel_eval(kp: &KernelParams, t: f64) -> Result<f64> {
    if !(t >= 0.0) {
        return Err(domain("sve_core::kernel_eval", format!("negative time {t}")));
    }
    Ok(kp.c * t.powf(kp.h))
}

/// Drift and diffusion parameters of the volatility equation.
///
/// Inference keeps all four strictly positive (see
/// [`crate::models::ModelParams::validate`]); the simulation routines accept
/// zeros so that degenerate closed forms can be checked.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VolParams {
    pub v0: f64,
    pub kappa: f64,
    pub lambda: f64,
    pub nu: f64,
}

impl VolParams {
    pub fn validate(&self) -> Result<()> {
        for (name, x) in [("V0", self.v0), ("kappa", self.kappa), ("lambda", self.lambda), ("nu", self.nu)] {
            if !(x > 0.0 && x.is_finite()) {
                return Err(domain("sve_core::VolParams", format!("{name} must be positive, got {x}")));
            }
        }
        Ok(())
    }
}

/// Brownian increments on the level-`l` grid over `[0, T]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncrementPath {
    pub level: Level,
    pub horizon: usize,
    pub values: Vec<f64>,
}

impl IncrementPath {
    pub fn new(level: Level, horizon: usize, values: Vec<f64>) -> Result<Self> {
        if horizon == 0 {
            return Err(domain("sve_core::IncrementPath", "horizon must be at least 1"));
        }
        if values.len() != level.grid_len(horizon) {
            return Err(domain(
                "sve_core::IncrementPath",
                format!("expected {} increments, got {}", level.grid_len(horizon), values.len()),
            ));
        }
        Ok(IncrementPath { level, horizon, values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Increments over the unit interval `(t-1, t]`, `t ≥ 1`.
    pub fn unit_block(&self, t: usize) -> &[f64] {
        let n = self.level.steps_per_unit();
        &self.values[(t - 1) * n..t * n]
    }
}

/// `V` on the grid `0, Δ, …, T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolatilityPath {
    pub level: Level,
    pub horizon: usize,
    pub values: Vec<f64>,
}

impl VolatilityPath {
    /// `V` at unit times `1..=T`.
    pub fn skeleton(&self) -> Vec<f64> {
        let n = self.level.steps_per_unit();
        (1..=self.horizon).map(|t| self.values[t * n]).collect()
    }
}

/// Draw `T·2^l` i.i.d. `N(0, Δ_l)` increments.
pub fn sample_increments<R: Rng + ?Sized>(level: Level, horizon: usize, rng: &mut R) -> Result<IncrementPath> {
    if horizon == 0 {
        return Err(domain("sve_core::sample_increments", "horizon must be at least 1"));
    }
    let mut values = vec![0.0; level.grid_len(horizon)];
    fill_increments(level, &mut values, rng);
    Ok(IncrementPath { level, horizon, values })
}

pub(crate) fn fill_increments<R: Rng + ?Sized>(level: Level, out: &mut [f64], rng: &mut R) {
    let sd = level.step().sqrt();
    for x in out.iter_mut() {
        let z: f64 = rng.sample(StandardNormal);
        *x = sd * z;
    }
}

/// Pairwise sums of adjacent increments: level `l` to level `l - 1`.
pub fn coarsen(fine: &IncrementPath) -> Result<IncrementPath> {
    let level = fine.level.coarser()?;
    let values = coarsen_slice(&fine.values);
    Ok(IncrementPath { level, horizon: fine.horizon, values })
}

pub(crate) fn coarsen_slice(fine: &[f64]) -> Vec<f64> {
    fine.chunks_exact(2).map(|p| p[0] + p[1]).collect()
}

/// `K(jΔ_l)` for `j = 0..=n`, shared by all particles at one level.
#[derive(Debug, Clone)]
pub struct KernelTable {
    level: Level,
    values: Vec<f64>,
}

impl KernelTable {
    pub fn new(kp: &KernelParams, level: Level, horizon: usize) -> Self {
        let dt = level.step();
        let n = level.grid_len(horizon);
        let values = (0..=n).map(|j| kp.c * (j as f64 * dt).powf(kp.h)).collect();
        KernelTable { level, values }
    }

    pub fn level(&self) -> Level {
        self.level
    }

    pub fn get(&self, j: usize) -> f64 {
        self.values[j]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Euler recursion for one parameter set at one level.
#[derive(Debug, Clone)]
pub struct EulerScheme {
    vol: VolParams,
    kernel: KernelTable,
    dt: f64,
}

impl EulerScheme {
    pub fn new(vol: VolParams, kp: &KernelParams, level: Level, horizon: usize) -> Self {
        EulerScheme { vol, kernel: KernelTable::new(kp, level, horizon), dt: level.step() }
    }

    pub fn level(&self) -> Level {
        self.kernel.level
    }

    pub fn vol(&self) -> &VolParams {
        &self.vol
    }

    pub fn start(&self) -> EulerState {
        EulerState::new(self.vol.v0)
    }

    /// Append increments to `state`, computing `V` at each new grid point by
    /// direct convolution over the whole stored history.
    pub fn extend(&self, state: &mut EulerState, increments: &[f64]) {
        let VolParams { v0, kappa, lambda, nu } = self.vol;
        let k = &self.kernel.values;
        for &w in increments {
            let j = state.w.len();
            let vj = state.v[j];
            let drive = (kappa - lambda * vj) * self.dt + nu * vj.abs().sqrt() * w;
            state.w.push(w);
            state.drive.push(drive);
            // V_{j+1} = V0 + Σ_{i=0}^{j} K((j+1-i)Δ) a_i
            let conv: f64 = state.drive.iter().zip(k[1..=j + 1].iter().rev()).map(|(a, kk)| a * kk).sum();
            state.v.push(v0 + conv);
        }
    }
}

/// Running Euler state of one path: increments, drive terms and `V`.
#[derive(Debug, Clone, PartialEq)]
pub struct EulerState {
    pub w: Vec<f64>,
    drive: Vec<f64>,
    /// `v[j]` is `V` at time `jΔ`; always one longer than `w`.
    pub v: Vec<f64>,
}

impl EulerState {
    fn new(v0: f64) -> Self {
        EulerState { w: Vec::new(), drive: Vec::new(), v: vec![v0] }
    }

    pub fn with_capacity(v0: f64, n: usize) -> Self {
        let mut s = EulerState { w: Vec::with_capacity(n), drive: Vec::with_capacity(n), v: Vec::with_capacity(n + 1) };
        s.v.push(v0);
        s
    }
}

/// Euler–Maruyama path of `V` driven by `w`.
pub fn euler_volatility_path(vp: &VolParams, kp: &KernelParams, w: &IncrementPath) -> VolatilityPath {
    let scheme = EulerScheme::new(*vp, kp, w.level, w.horizon);
    let mut state = EulerState::with_capacity(vp.v0, w.len());
    scheme.extend(&mut state, &w.values);
    VolatilityPath { level: w.level, horizon: w.horizon, values: state.v }
}

/// Multiply-adds spent by [`euler_volatility_path`] on a level-`l` grid over
/// `[0, T]`: `n(n+1)/2` with `n = T·2^l`.
pub fn euler_cost(level: Level, horizon: usize) -> u64 {
    let n = level.grid_len(horizon) as u64;
    n * (n + 1) / 2
}
