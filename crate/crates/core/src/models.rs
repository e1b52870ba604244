//! Parameter vectors, priors, the constrained/unconstrained parameter maps
//! and the per-unit-time observation densities for the state-space and the
//! stochastic-volatility models.
//!
//! Unconstrained coordinates, in order:
//!
//! | coordinate | map | models |
//! |---|---|---|
//! | `V0`, `kappa`, `lambda`, `nu` | `log x` | both |
//! | `rho` | `log((1+ρ)/(1-ρ))` | SV |
//! | `r` | identity | SV |
//! | `H` | `log(2H/(1-2H))` | when `H` is estimated |
//!
//! Every coordinate has an independent standard normal prior, so the prior
//! density in the unconstrained space is a product of `N(0, 1)` densities.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::sve::{KernelParams, Level, VolParams};

pub const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    StateSpace,
    StochVol,
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ModelKind::StateSpace => f.write_str("state_space"),
            ModelKind::StochVol => f.write_str("stoch_vol"),
        }
    }
}

/// Full parameter vector. Fields that are inactive for `kind` are carried
/// but never read by the likelihood.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    pub vol: VolParams,
    pub kernel: KernelParams,
    pub rho: f64,
    pub r: f64,
    pub sigma_obs: f64,
    pub kind: ModelKind,
    pub estimate_h: bool,
    /// Whether the SV observation mean includes the drift `r`.
    pub include_drift: bool,
}

impl ModelParams {
    pub fn validate(&self) -> Result<()> {
        self.vol.validate()?;
        self.kernel.validate()?;
        if !(self.rho.abs() <= 1.0) {
            return Err(domain("models::ModelParams", format!("rho must lie in [-1, 1], got {}", self.rho)));
        }
        if !self.r.is_finite() {
            return Err(domain("models::ModelParams", "r must be finite"));
        }
        if !(self.sigma_obs > 0.0 && self.sigma_obs.is_finite()) {
            return Err(domain("models::ModelParams", format!("sigma_obs must be positive, got {}", self.sigma_obs)));
        }
        Ok(())
    }

    /// Weaker check used by the simulators and filters: zero drift and
    /// diffusion coefficients are allowed.
    pub fn validate_for_simulation(&self) -> Result<()> {
        let v = &self.vol;
        if !(v.v0.is_finite() && v.kappa >= 0.0 && v.lambda >= 0.0 && v.nu >= 0.0)
            || ![v.kappa, v.lambda, v.nu].iter().all(|x| x.is_finite())
        {
            return Err(domain("models::ModelParams", "V0 must be finite and kappa, lambda, nu non-negative"));
        }
        self.kernel.validate()?;
        if !(self.rho.abs() <= 1.0) || !self.r.is_finite() {
            return Err(domain("models::ModelParams", format!("rho must lie in [-1, 1], got {}", self.rho)));
        }
        if self.kind == ModelKind::StateSpace && !(self.sigma_obs > 0.0 && self.sigma_obs.is_finite()) {
            return Err(domain("models::ModelParams", format!("sigma_obs must be positive, got {}", self.sigma_obs)));
        }
        Ok(())
    }

    pub fn coords(&self) -> Vec<Coord> {
        coords_for(self.kind, self.estimate_h)
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        Some(match name {
            "V0" => self.vol.v0,
            "kappa" => self.vol.kappa,
            "lambda" => self.vol.lambda,
            "nu" => self.vol.nu,
            "H" => self.kernel.h,
            "C" => self.kernel.c,
            "rho" => self.rho,
            "r" => self.r,
            "sigma_obs" => self.sigma_obs,
            _ => return None,
        })
    }

    pub fn record(&self) -> ParamRecord {
        ParamRecord {
            v0: self.vol.v0,
            kappa: self.vol.kappa,
            lambda: self.vol.lambda,
            nu: self.vol.nu,
            h: self.kernel.h,
            c: self.kernel.c,
            rho: self.rho,
            r: self.r,
            sigma_obs: self.sigma_obs,
        }
    }
}

/// Flat named-field form used in configuration and output files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamRecord {
    #[serde(rename = "V0")]
    pub v0: f64,
    pub kappa: f64,
    pub lambda: f64,
    pub nu: f64,
    #[serde(rename = "H")]
    pub h: f64,
    #[serde(rename = "C")]
    pub c: f64,
    pub rho: f64,
    pub r: f64,
    pub sigma_obs: f64,
}

impl ParamRecord {
    pub const NAMES: [&'static str; 9] = ["V0", "kappa", "lambda", "nu", "H", "C", "rho", "r", "sigma_obs"];

    pub fn values(&self) -> [f64; 9] {
        [self.v0, self.kappa, self.lambda, self.nu, self.h, self.c, self.rho, self.r, self.sigma_obs]
    }

    pub fn into_params(self, spec: &ModelSpec) -> ModelParams {
        ModelParams {
            vol: VolParams { v0: self.v0, kappa: self.kappa, lambda: self.lambda, nu: self.nu },
            kernel: KernelParams { c: self.c, h: self.h },
            rho: self.rho,
            r: self.r,
            sigma_obs: self.sigma_obs,
            kind: spec.kind,
            estimate_h: spec.estimate_h,
            include_drift: spec.include_drift,
        }
    }
}

/// One estimated coordinate and its map to the real line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Coord {
    V0,
    Kappa,
    Lambda,
    Nu,
    Rho,
    Drift,
    Hurst,
}

impl Coord {
    pub fn name(self) -> &'static str {
        match self {
            Coord::V0 => "V0",
            Coord::Kappa => "kappa",
            Coord::Lambda => "lambda",
            Coord::Nu => "nu",
            Coord::Rho => "rho",
            Coord::Drift => "r",
            Coord::Hurst => "H",
        }
    }

    /// Label of the unconstrained coordinate, written as an expression over
    /// the named parameters.
    pub fn unconstrained_label(self) -> &'static str {
        match self {
            Coord::V0 => "log(V0)",
            Coord::Kappa => "log(kappa)",
            Coord::Lambda => "log(lambda)",
            Coord::Nu => "log(nu)",
            Coord::Rho => "log((1+rho)/(1-rho))",
            Coord::Drift => "r",
            Coord::Hurst => "log(2*H/(1-2*H))",
        }
    }

    fn read(self, p: &ModelParams) -> f64 {
        match self {
            Coord::V0 => p.vol.v0,
            Coord::Kappa => p.vol.kappa,
            Coord::Lambda => p.vol.lambda,
            Coord::Nu => p.vol.nu,
            Coord::Rho => p.rho,
            Coord::Drift => p.r,
            Coord::Hurst => p.kernel.h,
        }
    }

    fn write(self, p: &mut ModelParams, x: f64) {
        match self {
            Coord::V0 => p.vol.v0 = x,
            Coord::Kappa => p.vol.kappa = x,
            Coord::Lambda => p.vol.lambda = x,
            Coord::Nu => p.vol.nu = x,
            Coord::Rho => p.rho = x,
            Coord::Drift => p.r = x,
            Coord::Hurst => p.kernel.h = x,
        }
    }

    /// Constrained to unconstrained; `None` outside the open support.
    pub fn forward(self, x: f64) -> Option<f64> {
        let z = match self {
            Coord::V0 | Coord::Kappa | Coord::Lambda | Coord::Nu => {
                if x > 0.0 {
                    x.ln()
                } else {
                    return None;
                }
            }
            Coord::Rho => {
                if x > -1.0 && x < 1.0 {
                    ((1.0 + x) / (1.0 - x)).ln()
                } else {
                    return None;
                }
            }
            Coord::Drift => x,
            Coord::Hurst => {
                if x > 0.0 && x < 0.5 {
                    (2.0 * x / (1.0 - 2.0 * x)).ln()
                } else {
                    return None;
                }
            }
        };
        z.is_finite().then_some(z)
    }

    pub fn inverse(self, z: f64) -> f64 {
        match self {
            Coord::V0 | Coord::Kappa | Coord::Lambda | Coord::Nu => z.exp(),
            Coord::Rho => (0.5 * z).tanh(),
            Coord::Drift => z,
            Coord::Hurst => 0.5 / (1.0 + (-z).exp()),
        }
    }
}

pub fn coords_for(kind: ModelKind, estimate_h: bool) -> Vec<Coord> {
    let mut c = vec![Coord::V0, Coord::Kappa, Coord::Lambda, Coord::Nu];
    if kind == ModelKind::StochVol {
        c.push(Coord::Rho);
        c.push(Coord::Drift);
    }
    if estimate_h {
        c.push(Coord::Hurst);
    }
    c
}

/// Fixed parts of the model: which parameters are estimated and the values
/// of those that are not.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub estimate_h: bool,
    /// Kernel scale `C`; never estimated.
    #[serde(rename = "C")]
    pub c: f64,
    /// Hurst value used when `estimate_h` is false.
    #[serde(rename = "H")]
    pub h: f64,
    /// Observation standard deviation of the state-space model (known).
    pub sigma_obs: f64,
    pub include_drift: bool,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            kind: ModelKind::StateSpace,
            estimate_h: false,
            c: 0.7,
            h: 0.4,
            sigma_obs: 0.8,
            include_drift: true,
        }
    }
}

impl ModelSpec {
    pub fn state_space() -> Self {
        ModelSpec::default()
    }

    pub fn stoch_vol() -> Self {
        ModelSpec { kind: ModelKind::StochVol, ..ModelSpec::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(Error::Config(format!("C must be positive, got {}", self.c)));
        }
        if !(0.0..0.5).contains(&self.h) {
            return Err(Error::Config(format!("H must lie in [0, 0.5), got {}", self.h)));
        }
        if !(self.sigma_obs > 0.0 && self.sigma_obs.is_finite()) {
            return Err(Error::Config(format!("sigma_obs must be positive, got {}", self.sigma_obs)));
        }
        Ok(())
    }

    pub fn coords(&self) -> Vec<Coord> {
        coords_for(self.kind, self.estimate_h)
    }

    pub fn dim(&self) -> usize {
        self.coords().len()
    }

    /// Parameters with every estimated coordinate at its prior median.
    pub fn template(&self) -> ModelParams {
        ModelParams {
            vol: VolParams { v0: 1.0, kappa: 1.0, lambda: 1.0, nu: 1.0 },
            kernel: KernelParams { c: self.c, h: self.h },
            rho: 0.0,
            r: 0.0,
            sigma_obs: self.sigma_obs,
            kind: self.kind,
            estimate_h: self.estimate_h,
            include_drift: self.include_drift,
        }
    }

    /// Build parameters from named values; unspecified estimated coordinates
    /// take their prior medians, fixed ones come from the spec.
    pub fn params_with(&self, vol: VolParams, rho: f64, r: f64) -> ModelParams {
        ModelParams { vol, rho, r, ..self.template() }
    }
}

/// Real vector with one coordinate per active parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct UnconstrainedParams(pub Vec<f64>);

impl UnconstrainedParams {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Map to the unconstrained space. Boundary values (ρ = ±1, H ∈ {0, ½},
/// non-positive scales) are rejected.
pub fn transform(theta: &ModelParams) -> Result<UnconstrainedParams> {
    theta
        .coords()
        .into_iter()
        .map(|c| {
            c.forward(c.read(theta)).ok_or_else(|| {
                domain(
                    "models::transform",
                    format!("{} = {} is on or outside the support boundary", c.name(), c.read(theta)),
                )
            })
        })
        .collect::<Result<Vec<_>>>()
        .map(UnconstrainedParams)
}

pub fn untransform(z: &UnconstrainedParams, spec: &ModelSpec) -> Result<ModelParams> {
    let coords = spec.coords();
    if z.0.len() != coords.len() {
        return Err(domain("models::untransform", format!("expected {} coordinates, got {}", coords.len(), z.0.len())));
    }
    let mut p = spec.template();
    for (c, &x) in coords.iter().zip(&z.0) {
        if !x.is_finite() {
            return Err(domain("models::untransform", format!("non-finite coordinate for {}", c.name())));
        }
        c.write(&mut p, c.inverse(x));
    }
    Ok(p)
}

/// Prior log density in the unconstrained parameterization; `-∞` outside
/// the support.
pub fn prior_logpdf(theta: &ModelParams) -> f64 {
    match transform(theta) {
        Ok(z) => log_prior_unconstrained(&z),
        Err(_) => f64::NEG_INFINITY,
    }
}

pub fn log_prior_unconstrained(z: &UnconstrainedParams) -> f64 {
    z.0.iter().map(|x| -LN_SQRT_2PI - 0.5 * x * x).sum()
}

pub fn prior_sample<R: Rng + ?Sized>(spec: &ModelSpec, rng: &mut R) -> ModelParams {
    let z: Vec<f64> = (0..spec.dim()).map(|_| rng.sample(StandardNormal)).collect();
    untransform(&UnconstrainedParams(z), spec).expect("standard normal draws are finite")
}

/// Observations `y_1..y_T` at unit times plus the given initial value `y_0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationSeries {
    pub y0: f64,
    pub y: Vec<f64>,
}

impl ObservationSeries {
    pub fn new(y0: f64, y: Vec<f64>) -> Result<Self> {
        if y.is_empty() {
            return Err(domain("models::ObservationSeries", "need at least one observation"));
        }
        if !y0.is_finite() || y.iter().any(|v| !v.is_finite()) {
            return Err(domain("models::ObservationSeries", "observations must be finite"));
        }
        Ok(ObservationSeries { y0, y })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// `y_{t-1}` for `t ≥ 1`.
    pub fn prev(&self, t: usize) -> f64 {
        if t == 1 {
            self.y0
        } else {
            self.y[t - 2]
        }
    }

    pub fn at(&self, t: usize) -> f64 {
        self.y[t - 1]
    }

    /// `y_t - y_{t-1}` for `t = 1..T`.
    pub fn increments(&self) -> Vec<f64> {
        (1..=self.len()).map(|t| self.at(t) - self.prev(t)).collect()
    }

    /// Cumulative sums of `returns` started at zero, so that the increments
    /// reproduce the returns.
    pub fn from_returns(returns: &[f64]) -> Result<Self> {
        let mut acc = 0.0;
        let y = returns
            .iter()
            .map(|r| {
                acc += r;
                acc
            })
            .collect();
        ObservationSeries::new(0.0, y)
    }
}

pub fn gaussian_logpdf(x: f64, mean: f64, var: f64) -> Result<f64> {
    if !(var > 0.0) {
        return Err(domain("models::gaussian_logpdf", format!("variance must be positive, got {var}")));
    }
    Ok(gaussian_logpdf_unchecked(x, mean, var))
}

#[inline]
pub(crate) fn gaussian_logpdf_unchecked(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    -0.5 * (2.0 * PI * var).ln() - 0.5 * d * d / var
}

/// `log κ_{t,l}`: log Gaussian density of `y_t` given the volatility and the
/// Brownian increments over `[t-1, t)`.
///
/// `v_seg[k]` is `V` at `t-1+kΔ` and `w_seg[k]` the increment that follows
/// it, `k = 0..2^l`.
pub fn log_kappa_sv(
    theta: &ModelParams,
    level: Level,
    t: usize,
    v_seg: &[f64],
    w_seg: &[f64],
    y_prev: f64,
    y_t: f64,
) -> Result<f64> {
    let n = level.steps_per_unit();
    if v_seg.len() != n || w_seg.len() != n {
        return Err(domain(
            "models::kappa_sv",
            format!("segments must hold {n} entries, got {} and {}", v_seg.len(), w_seg.len()),
        ));
    }
    let (mut cross, mut quad) = (0.0, 0.0);
    for (v, w) in v_seg.iter().zip(w_seg) {
        let a = v.abs();
        cross += a.sqrt() * w;
        quad += a;
    }
    let drift = if theta.include_drift { theta.r } else { 0.0 };
    let mean = y_prev + drift + theta.rho * cross;
    let var = (1.0 - theta.rho * theta.rho) * level.step() * quad;
    if !(var > 0.0) {
        return Err(Error::DegenerateVariance { t });
    }
    Ok(gaussian_logpdf_unchecked(y_t, mean, var))
}

pub fn kappa_sv(
    theta: &ModelParams,
    level: Level,
    t: usize,
    v_seg: &[f64],
    w_seg: &[f64],
    y_prev: f64,
    y_t: f64,
) -> Result<f64> {
    log_kappa_sv(theta, level, t, v_seg, w_seg, y_prev, y_t).map(f64::exp)
}

pub fn log_g_ssm(theta: &ModelParams, v_t: f64, y_t: f64) -> Result<f64> {
    let s = theta.sigma_obs;
    if !(s > 0.0) {
        return Err(domain("models::g_ssm", format!("sigma_obs must be positive, got {s}")));
    }
    Ok(gaussian_logpdf_unchecked(y_t, v_t, s * s))
}

/// Observation density of the state-space model: `N(y_t; v_t, σ_obs²)`.
pub fn g_ssm(theta: &ModelParams, v_t: f64, y_t: f64) -> Result<f64> {
    log_g_ssm(theta, v_t, y_t).map(f64::exp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedNode;
    use proptest::prelude::*;

    fn sv_theta(rho: f64, r: f64) -> ModelParams {
        ModelSpec::stoch_vol().params_with(VolParams { v0: 1.0, kappa: 1.0, lambda: 1.0, nu: 1.0 }, rho, r)
    }

    #[test]
    fn gaussian_values() {
        let a = gaussian_logpdf(0.0, 0.0, 1.0).unwrap();
        assert!((a + 0.918_938_533_204_672_7).abs() < 1e-15);
        let b = gaussian_logpdf(2.5, 2.5, 3.0).unwrap();
        assert!((b + 0.5 * (2.0 * PI * 3.0).ln()).abs() < 1e-15);
        let c = gaussian_logpdf(1.0, 0.0, 4.0).unwrap();
        assert!((c - (-1.737_085_713_764_618)).abs() < 1e-14, "{c}");
        assert!(gaussian_logpdf(0.0, 0.0, 0.0).is_err());
        assert!(gaussian_logpdf(0.0, 0.0, -1.0).is_err());
    }

    #[test]
    fn gaussian_integrates_to_one() {
        let (mean, var) = (0.3, 0.7f64);
        let sd: f64 = var.sqrt();
        let (a, b, n) = (mean - 12.0 * sd, mean + 12.0 * sd, 20_000);
        let h = (b - a) / n as f64;
        // composite Simpson
        let mut s = 0.0;
        for i in 0..=n {
            let x = a + i as f64 * h;
            let w = if i == 0 || i == n {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            s += w * gaussian_logpdf(x, mean, var).unwrap().exp();
        }
        assert!((s * h / 3.0 - 1.0).abs() < 1e-8);
    }

    #[test]
    fn g_ssm_values() {
        let mut th = ModelSpec::state_space().template();
        th.sigma_obs = 0.8;
        let a = g_ssm(&th, 0.0, 0.0).unwrap();
        assert!((a - 0.498_677_850_501_790_85).abs() < 1e-12);
        let b = g_ssm(&th, 1.0, -1.0).unwrap();
        assert!((b - 0.021_910_375_616_960_672).abs() / b < 1e-12);
        assert!(g_ssm(&th, 1.0, 1.0).unwrap() > g_ssm(&th, 1.0, 1.3).unwrap());
        assert!(g_ssm(&th, 1.0, 1.0).unwrap() > g_ssm(&th, 1.0, 0.9).unwrap());
    }

    #[test]
    fn kappa_constant_vol_reduces_to_gaussian() {
        let th = sv_theta(0.0, 0.0);
        let level = Level(3);
        let v = vec![0.6; 8];
        let w = vec![0.1, -0.2, 0.05, 0.0, 0.3, -0.1, 0.2, -0.4];
        let got = log_kappa_sv(&th, level, 1, &v, &w, 0.4, 0.9).unwrap();
        let want = gaussian_logpdf(0.9, 0.4, 0.6).unwrap();
        assert!((got - want).abs() < 1e-14);
    }

    #[test]
    fn kappa_hand_substitution() {
        let th = sv_theta(0.5, 0.01);
        let got = kappa_sv(&th, Level(1), 1, &[0.04, 0.09], &[0.1, -0.2], 0.0, 0.02).unwrap();
        // mean 0.01 + 0.5(0.2·0.1 + 0.3·(-0.2)) = -0.01, var 0.75·0.5·0.13 = 0.04875
        let want = 1.790_250_829_653_577;
        assert!((got - want).abs() / want < 1e-12, "{got}");
        let mut no_drift = th;
        no_drift.include_drift = false;
        let g2 = log_kappa_sv(&no_drift, Level(1), 1, &[0.04, 0.09], &[0.1, -0.2], 0.0, 0.02).unwrap();
        assert!((g2 - gaussian_logpdf(0.02, -0.02, 0.048_75).unwrap()).abs() < 1e-14);
    }

    #[test]
    fn kappa_degenerate_variance() {
        let th = sv_theta(1.0, 0.0);
        let e = log_kappa_sv(&th, Level(0), 4, &[0.5], &[0.1], 0.0, 0.0).unwrap_err();
        assert!(matches!(e, Error::DegenerateVariance { t: 4 }));
        let th0 = sv_theta(0.2, 0.0);
        assert!(log_kappa_sv(&th0, Level(1), 1, &[0.0, 0.0], &[0.1, 0.1], 0.0, 0.0).is_err());
        assert!(log_kappa_sv(&th0, Level(1), 1, &[0.1], &[0.1], 0.0, 0.0).is_err());
    }

    #[test]
    fn transform_examples() {
        let spec = ModelSpec::stoch_vol();
        let th = spec.template();
        let z = transform(&th).unwrap();
        assert!(z.0.iter().all(|&x| x == 0.0));
        let mut th2 = th;
        th2.rho = 0.5;
        let z2 = transform(&th2).unwrap();
        assert!((z2.0[4] - 3f64.ln()).abs() < 1e-15);
        let mut bad = th;
        bad.rho = 1.0;
        assert!(transform(&bad).is_err());
        assert_eq!(prior_logpdf(&bad), f64::NEG_INFINITY);
        let hspec = ModelSpec { estimate_h: true, ..spec };
        let mut hb = hspec.template();
        hb.kernel.h = 0.0;
        assert!(transform(&hb).is_err());
        hb.kernel.h = 0.5;
        assert!(transform(&hb).is_err());
    }

    #[test]
    fn zero_point_maps_to_medians() {
        let spec = ModelSpec { estimate_h: true, ..ModelSpec::stoch_vol() };
        let th = untransform(&UnconstrainedParams(vec![0.0; 7]), &spec).unwrap();
        assert_eq!((th.vol.v0, th.vol.kappa, th.vol.lambda, th.vol.nu), (1.0, 1.0, 1.0, 1.0));
        assert_eq!((th.rho, th.r, th.kernel.h), (0.0, 0.0, 0.25));
        let lp = prior_logpdf(&th);
        assert!((lp + 7.0 * 0.918_938_533_204_672_7).abs() < 1e-13);
    }

    #[test]
    fn prior_rho_median_and_support() {
        let spec = ModelSpec::stoch_vol();
        let mut rng = SeedNode::root(3).rng();
        let mut rhos: Vec<f64> = (0..100_000).map(|_| prior_sample(&spec, &mut rng).rho).collect();
        assert!(rhos.iter().all(|r| r.abs() < 1.0));
        rhos.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let med = rhos[rhos.len() / 2];
        assert!(med.abs() < 0.02, "median {med}");
    }

    #[test]
    fn prior_samples_are_valid() {
        let mut rng = SeedNode::root(4).rng();
        for spec in [ModelSpec::state_space(), ModelSpec { estimate_h: true, ..ModelSpec::stoch_vol() }] {
            for _ in 0..1000 {
                let th = prior_sample(&spec, &mut rng);
                th.validate().unwrap();
                assert!(prior_logpdf(&th).is_finite());
            }
        }
    }

    #[test]
    fn untransform_rejects_wrong_dimension() {
        assert!(untransform(&UnconstrainedParams(vec![0.0; 3]), &ModelSpec::state_space()).is_err());
    }

    #[test]
    fn round_trip_thousand_draws() {
        let spec = ModelSpec { estimate_h: true, ..ModelSpec::stoch_vol() };
        let mut rng = SeedNode::root(11).rng();
        let mut worst: f64 = 0.0;
        for _ in 0..1000 {
            let th = prior_sample(&spec, &mut rng);
            let back = untransform(&transform(&th).unwrap(), &spec).unwrap();
            for c in spec.coords() {
                let (a, b) = (c.read(&th), c.read(&back));
                worst = worst.max((a - b).abs() / a.abs().max(1e-300));
            }
        }
        assert!(worst < 1e-10, "{worst}");
    }

    proptest! {
        #[test]
        fn kappa_invariant_under_joint_permutation(
            pairs in prop::collection::vec((0.01f64..2.0, -0.5f64..0.5), 4),
            rot in 0usize..4, rho in -0.9f64..0.9,
        ) {
            let th = sv_theta(rho, 0.02);
            let (v, w): (Vec<f64>, Vec<f64>) = pairs.iter().cloned().unzip();
            let mut p2 = pairs.clone();
            p2.rotate_left(rot);
            p2.swap(0, 3);
            let (v2, w2): (Vec<f64>, Vec<f64>) = p2.into_iter().unzip();
            let a = log_kappa_sv(&th, Level(2), 1, &v, &w, 0.1, 0.3).unwrap();
            let b = log_kappa_sv(&th, Level(2), 1, &v2, &w2, 0.1, 0.3).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
            prop_assert!(a.exp() > 0.0 && a.is_finite());
        }

        #[test]
        fn untransform_inverts_transform(z in prop::collection::vec(-4.0f64..4.0, 6)) {
            let spec = ModelSpec::stoch_vol();
            let th = untransform(&UnconstrainedParams(z.clone()), &spec).unwrap();
            let back = transform(&th).unwrap();
            for (a, b) in z.iter().zip(&back.0) {
                prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
            }
        }
    }
}
