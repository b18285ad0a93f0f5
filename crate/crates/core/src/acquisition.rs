//! Expected-improvement acquisition: closed form, analytic gradient,
//! multi-start projected gradient ascent, and rounding onto the integer
//! configuration grid.

use rand::Rng;
use statrs::function::erf::erfc;

use crate::gp::{GpModel, PosteriorStats};
use crate::topology::{Configuration, OBSS_PD_RANGE, TX_PWR_RANGE};

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;
/// Below this posterior standard deviation the EI gradient is reported as zero.
pub const SIGMA_EPS: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct AcquisitionConfig {
    pub restarts: usize,
    /// Maximum ascent steps per restart.
    pub max_steps: usize,
    /// First trial step length, in normalized units.
    pub initial_step: f64,
    pub armijo: f64,
    pub shrink: f64,
    pub convergence_tol: f64,
}

impl Default for AcquisitionConfig {
    fn default() -> Self {
        AcquisitionConfig {
            restarts: 10,
            max_steps: 100,
            initial_step: 0.1,
            armijo: 1e-4,
            shrink: 0.5,
            convergence_tol: 1e-5,
        }
    }
}

/// A configuration before rounding, in dBm.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ContinuousConfig {
    pub obss_pd: f64,
    pub tx_pwr: f64,
}

impl ContinuousConfig {
    pub fn to_grid(self) -> Configuration {
        Configuration {
            obss_pd: round_toward_center(self.obss_pd, OBSS_PD_RANGE),
            tx_pwr: round_toward_center(self.tx_pwr, TX_PWR_RANGE),
        }
    }

    pub fn get(&self, dim: usize) -> f64 {
        match dim {
            0 => self.obss_pd,
            _ => self.tx_pwr,
        }
    }
}

impl From<Configuration> for ContinuousConfig {
    fn from(c: Configuration) -> Self {
        ContinuousConfig {
            obss_pd: c.obss_pd as f64,
            tx_pwr: c.tx_pwr as f64,
        }
    }
}

/// Raw-unit bounds of a neighborhood box with `aps` APs: (OBSS_PD, TX_PWR)
/// per AP.
pub fn neighborhood_bounds(aps: usize) -> Vec<(f64, f64)> {
    let obss = (OBSS_PD_RANGE.0 as f64, OBSS_PD_RANGE.1 as f64);
    let tx = (TX_PWR_RANGE.0 as f64, TX_PWR_RANGE.1 as f64);
    (0..aps).flat_map(|_| [obss, tx]).collect()
}

/// Nearest integer, exact halves going toward the middle of `range`, then
/// clamped to `range`.
fn round_toward_center(v: f64, range: (i32, i32)) -> i32 {
    let center = (range.0 + range.1) as f64 / 2.0;
    if v.is_nan() {
        return center.round() as i32;
    }
    let floor = v.floor();
    let frac = v - floor;
    let rounded = if frac > 0.5 || (frac == 0.5 && v < center) {
        floor + 1.0
    } else {
        floor
    };
    rounded.clamp(range.0 as f64, range.1 as f64) as i32
}

/// Round a flat `[obss_0, tx_0, obss_1, tx_1, ...]` vector onto C.
pub fn round_to_grid(x: &[f64]) -> Vec<Configuration> {
    x.chunks(2)
        .map(|c| {
            ContinuousConfig {
                obss_pd: c[0],
                tx_pwr: c.get(1).copied().unwrap_or(f64::NAN),
            }
            .to_grid()
        })
        .collect()
}

pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

pub fn normal_pdf(z: f64) -> f64 {
    FRAC_1_SQRT_2PI * (-0.5 * z * z).exp()
}

/// (μ − R*)Φ(Z) + σφ(Z), Z = (μ − R*)/σ; max(μ − R*, 0) when σ = 0.
pub fn expected_improvement(stats: &PosteriorStats, incumbent: f64) -> f64 {
    let sigma = stats.variance.max(0.0).sqrt();
    let gap = stats.mean - incumbent;
    if sigma <= 0.0 {
        return gap.max(0.0);
    }
    let z = gap / sigma;
    (gap * normal_cdf(z) + sigma * normal_pdf(z)).max(0.0)
}

fn incumbent_of(model: &GpModel) -> f64 {
    model.best_target().unwrap_or(f64::NEG_INFINITY)
}

/// EI at a normalized point against the model's best observed target.
pub fn ei_unit(model: &GpModel, u: &[f64]) -> f64 {
    expected_improvement(&model.posterior_unit(u), incumbent_of(model))
}

fn ei_with_gradient(model: &GpModel, u: &[f64], incumbent: f64) -> (f64, Vec<f64>) {
    let pg = model.posterior_gradient_unit(u);
    let value = expected_improvement(&pg.stats, incumbent);
    let sigma = pg.stats.variance.sqrt();
    if sigma <= SIGMA_EPS {
        return (value, vec![0.0; u.len()]);
    }
    let z = (pg.stats.mean - incumbent) / sigma;
    let (cdf, pdf) = (normal_cdf(z), normal_pdf(z));
    // dEI/dμ = Φ(Z), dEI/dσ = φ(Z), dσ = dσ² / 2σ
    let grad = pg
        .mean_grad
        .iter()
        .zip(&pg.variance_grad)
        .map(|(dm, dv)| cdf * dm + pdf * dv / (2.0 * sigma))
        .collect();
    (value, grad)
}

/// Analytic ∇EI at a normalized point.
pub fn ei_gradient(model: &GpModel, u: &[f64]) -> Vec<f64> {
    ei_with_gradient(model, u, incumbent_of(model)).1
}

#[derive(Clone, Debug, PartialEq)]
pub struct EiMaximum {
    /// Maximizer in raw units.
    pub point: Vec<f64>,
    /// Maximizer in normalized units.
    pub unit: Vec<f64>,
    pub value: f64,
}

/// Multi-start projected gradient ascent of EI over the model's box. Every
/// restart draws exactly `dim` uniforms from `rng`, so runs that share a
/// stream prefix share their first starts.
pub fn maximize_ei<R: Rng + ?Sized>(model: &GpModel, cfg: &AcquisitionConfig, rng: &mut R) -> EiMaximum {
    let d = model.dim();
    if model.is_empty() {
        let unit: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
        return EiMaximum {
            point: model.denormalize(&unit),
            unit,
            value: 0.0,
        };
    }
    let incumbent = incumbent_of(model);
    let mut best: Option<(Vec<f64>, f64)> = None;
    for _ in 0..cfg.restarts.max(1) {
        let start: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
        let (u, f) = ascend(model, start, incumbent, cfg);
        if best.as_ref().is_none_or(|(_, bf)| f > *bf) {
            best = Some((u, f));
        }
    }
    let (unit, value) = best.expect("at least one restart");
    EiMaximum {
        point: model.denormalize(&unit),
        unit,
        value,
    }
}

/// Longest trial step, in normalized units.
const MAX_STEP: f64 = 1.0;
/// An accepted step gaining less than this fraction of EI ends the restart;
/// prescriptions are rounded to whole dBm anyway.
const RELATIVE_GAIN_TOL: f64 = 1e-4;

/// Projected ascent along the unit gradient direction. The step doubles
/// after every accepted move and halves on every Armijo failure; the
/// restart ends once a trial move is shorter than the tolerance or a move
/// stops paying off.
fn ascend(model: &GpModel, mut u: Vec<f64>, incumbent: f64, cfg: &AcquisitionConfig) -> (Vec<f64>, f64) {
    let (mut f, mut g) = ei_with_gradient(model, &u, incumbent);
    let mut step = cfg.initial_step;
    let mut trial = vec![0.0; u.len()];
    for _ in 0..cfg.max_steps.max(1) {
        let norm = dot_self(&g).sqrt();
        if norm == 0.0 || !norm.is_finite() {
            break;
        }
        let accepted = loop {
            let mut moved2 = 0.0;
            let mut gain = 0.0;
            for q in 0..u.len() {
                trial[q] = (u[q] + step * g[q] / norm).clamp(0.0, 1.0);
                let delta = trial[q] - u[q];
                moved2 += delta * delta;
                gain += g[q] * delta;
            }
            if moved2.sqrt() < cfg.convergence_tol {
                break None;
            }
            let (ft, gt) = ei_with_gradient(model, &trial, incumbent);
            if ft >= f + cfg.armijo * gain {
                break Some((ft, gt));
            }
            step *= cfg.shrink;
        };
        let Some((ft, gt)) = accepted else {
            break;
        };
        let gain = ft - f;
        u.copy_from_slice(&trial);
        f = ft;
        g = gt;
        if gain <= RELATIVE_GAIN_TOL * f {
            break;
        }
        step = (step * 2.0).min(MAX_STEP);
    }
    (u, f)
}

fn dot_self(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}
