//! Gaussian-process regression with a Matérn-3/2 kernel.
//!
//! Inputs are normalized to the unit box before any distance is taken. The
//! Cholesky factor of the training covariance is extended by one row per
//! observation; once the moving window is full the oldest point is dropped
//! and the remaining factor is rebuilt by a rank-one update. Hyperparameters
//! are fitted by maximum marginal likelihood every few observations.

use std::f64::consts::PI;

use thiserror::Error;

const SQRT3: f64 = 1.732_050_807_568_877_2;

/// Noise variance never drops below this fraction of the signal variance.
pub const NOISE_FLOOR_RATIO: f64 = 1e-6;
pub const DEFAULT_WINDOW: usize = 200;
pub const DEFAULT_REOPTIMIZE_EVERY: usize = 10;
/// Hyperparameters are only fitted once the model holds this many points.
pub const MIN_POINTS_FOR_FIT: usize = 5;

const LENGTH_SCALE_BOUNDS: (f64, f64) = (0.01, 10.0);
const SIGNAL_BOUNDS: (f64, f64) = (1e-4, 1e4);
const NOISE_BOUNDS: (f64, f64) = (1e-6, 1.0);
const FIT_STEPS: usize = 30;
/// Log-likelihood gain (nats) below which the fit stops.
const FIT_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Error, PartialEq)]
pub enum GpError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("covariance matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("hyperparameter fit needs at least {MIN_POINTS_FOR_FIT} points, model has {0}")]
    TooFewPoints(usize),
    #[error("invalid kernel parameters: {0}")]
    InvalidParams(String),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KernelParams {
    /// s²
    pub signal_variance: f64,
    /// ρ, in normalized input units.
    pub length_scale: f64,
    pub noise_variance: f64,
}

impl KernelParams {
    /// Validates positivity and lifts the noise to its floor.
    pub fn new(signal_variance: f64, length_scale: f64, noise_variance: f64) -> Result<Self, GpError> {
        if !(signal_variance.is_finite() && signal_variance > 0.0) {
            return Err(GpError::InvalidParams(format!("signal variance {signal_variance}")));
        }
        if !(length_scale.is_finite() && length_scale > 0.0) {
            return Err(GpError::InvalidParams(format!("length scale {length_scale}")));
        }
        if !(noise_variance.is_finite() && noise_variance >= 0.0) {
            return Err(GpError::InvalidParams(format!("noise variance {noise_variance}")));
        }
        Ok(KernelParams {
            signal_variance,
            length_scale,
            noise_variance: noise_variance.max(NOISE_FLOOR_RATIO * signal_variance),
        })
    }
}

impl Default for KernelParams {
    fn default() -> Self {
        KernelParams {
            signal_variance: 1.0,
            length_scale: 0.5,
            noise_variance: 1e-4,
        }
    }
}

#[inline]
fn matern(r: f64, signal_variance: f64, length_scale: f64) -> f64 {
    let z = SQRT3 * r / length_scale;
    signal_variance * (1.0 + z) * (-z).exp()
}

#[inline]
fn squared_distance(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// s²(1 + √3 r/ρ) exp(-√3 r/ρ), r = ‖u − v‖₂.
pub fn kernel(u: &[f64], v: &[f64], params: &KernelParams) -> Result<f64, GpError> {
    if u.len() != v.len() {
        return Err(GpError::DimensionMismatch {
            expected: u.len(),
            got: v.len(),
        });
    }
    Ok(matern(
        squared_distance(u, v).sqrt(),
        params.signal_variance,
        params.length_scale,
    ))
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    // Four accumulators let the compiler vectorize the reduction.
    let mut acc = [0.0; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let k = 4 * c;
        acc[0] += a[k] * b[k];
        acc[1] += a[k + 1] * b[k + 1];
        acc[2] += a[k + 2] * b[k + 2];
        acc[3] += a[k + 3] * b[k + 3];
    }
    let mut tail = 0.0;
    for k in 4 * chunks..a.len() {
        tail += a[k] * b[k];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Lower-triangular factor in packed row-major storage.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CholeskyFactor {
    n: usize,
    data: Vec<f64>,
}

impl CholeskyFactor {
    #[inline]
    fn offset(i: usize) -> usize {
        i * (i + 1) / 2
    }

    #[inline]
    fn row(&self, i: usize) -> &[f64] {
        let o = Self::offset(i);
        &self.data[o..o + i + 1]
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if j > i {
            0.0
        } else {
            self.data[Self::offset(i) + j]
        }
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        (0..self.n)
            .map(|i| (0..self.n).map(|j| self.get(i, j)).collect())
            .collect()
    }

    /// Factor the symmetric matrix with lower entries `entry(i, j)`, j ≤ i.
    pub fn factorize(n: usize, entry: impl Fn(usize, usize) -> f64) -> Result<Self, GpError> {
        let mut f = CholeskyFactor {
            n: 0,
            data: Vec::with_capacity(Self::offset(n)),
        };
        let mut row = Vec::with_capacity(n);
        for i in 0..n {
            row.clear();
            row.extend((0..i).map(|j| entry(i, j)));
            f.push_row(&mut row, entry(i, i))?;
        }
        Ok(f)
    }

    /// Append one row given the new covariance column `cross` (overwritten by
    /// L⁻¹·cross) and the new diagonal entry.
    pub fn push_row(&mut self, cross: &mut [f64], diag: f64) -> Result<(), GpError> {
        debug_assert_eq!(cross.len(), self.n);
        self.solve_lower_in_place(cross);
        let d2 = diag - dot(cross, cross);
        if !(d2 > 0.0 && d2.is_finite()) {
            return Err(GpError::NotPositiveDefinite);
        }
        self.data.extend_from_slice(cross);
        self.data.push(d2.sqrt());
        self.n += 1;
        Ok(())
    }

    /// b ← L⁻¹ b
    pub fn solve_lower_in_place(&self, b: &mut [f64]) {
        for i in 0..self.n {
            let row = self.row(i);
            let s = dot(&row[..i], &b[..i]);
            b[i] = (b[i] - s) / row[i];
        }
    }

    /// b ← L⁻ᵀ b
    pub fn solve_upper_in_place(&self, b: &mut [f64]) {
        for i in (0..self.n).rev() {
            let row = self.row(i);
            b[i] /= row[i];
            let bi = b[i];
            for (bj, lij) in b[..i].iter_mut().zip(&row[..i]) {
                *bj -= lij * bi;
            }
        }
    }

    pub fn log_det(&self) -> f64 {
        2.0 * (0..self.n).map(|i| self.row(i)[i].ln()).sum::<f64>()
    }

    /// Lower triangle of (L Lᵀ)⁻¹, packed like the factor.
    pub fn inverse_packed(&self) -> Vec<f64> {
        let n = self.n;
        // columns of L⁻¹, column c stored from row c down
        let cols: Vec<Vec<f64>> = (0..n)
            .map(|c| {
                let mut x = Vec::with_capacity(n - c);
                x.push(1.0 / self.row(c)[c]);
                for i in c + 1..n {
                    let row = self.row(i);
                    x.push(-dot(&row[c..i], &x) / row[i]);
                }
                x
            })
            .collect();
        let mut out = vec![0.0; Self::offset(n)];
        for i in 0..n {
            for j in 0..=i {
                // (L⁻ᵀ L⁻¹)_ij = Σ_{k ≥ i} L⁻¹_ki L⁻¹_kj
                out[Self::offset(i) + j] = dot(&cols[i], &cols[j][i - j..]);
            }
        }
        out
    }

    /// Factor of the matrix with its first row and column deleted, via a
    /// rank-one update of the trailing block.
    pub fn remove_first(&mut self) {
        if self.n == 0 {
            return;
        }
        let m = self.n - 1;
        let mut x: Vec<f64> = (1..self.n).map(|i| self.row(i)[0]).collect();
        let mut data = Vec::with_capacity(Self::offset(m));
        for i in 1..self.n {
            data.extend_from_slice(&self.row(i)[1..]);
        }
        let at = |i: usize, j: usize| Self::offset(i) + j;
        for k in 0..m {
            let lkk = data[at(k, k)];
            let r = lkk.hypot(x[k]);
            let (c, s) = (r / lkk, x[k] / lkk);
            data[at(k, k)] = r;
            for i in k + 1..m {
                let lik = (data[at(i, k)] + s * x[i]) / c;
                data[at(i, k)] = lik;
                x[i] = c * x[i] - s * lik;
            }
        }
        self.n = m;
        self.data = data;
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PosteriorStats {
    pub mean: f64,
    pub variance: f64,
}

impl PosteriorStats {
    pub fn std_dev(&self) -> f64 {
        self.variance.sqrt()
    }
}

/// Posterior moments with their gradients in normalized input units.
#[derive(Clone, Debug)]
pub struct PosteriorGradient {
    pub stats: PosteriorStats,
    pub mean_grad: Vec<f64>,
    pub variance_grad: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct GpModel {
    bounds: Vec<(f64, f64)>,
    inputs: Vec<Vec<f64>>,
    targets: Vec<f64>,
    params: KernelParams,
    chol: CholeskyFactor,
    alpha: Vec<f64>,
    target_mean: f64,
    window: usize,
    reoptimize_every: usize,
    since_fit: usize,
    fitted: bool,
}

impl GpModel {
    /// Model over the box `bounds` (raw units, one pair per dimension).
    pub fn new(bounds: Vec<(f64, f64)>, params: KernelParams) -> Self {
        GpModel {
            bounds,
            inputs: Vec::new(),
            targets: Vec::new(),
            params,
            chol: CholeskyFactor::default(),
            alpha: Vec::new(),
            target_mean: 0.0,
            window: DEFAULT_WINDOW,
            reoptimize_every: DEFAULT_REOPTIMIZE_EVERY,
            since_fit: 0,
            fitted: false,
        }
    }

    /// Model whose raw inputs already live in the unit box.
    pub fn unit(dim: usize, params: KernelParams) -> Self {
        GpModel::new(vec![(0.0, 1.0); dim], params)
    }

    pub fn with_window(mut self, window: usize) -> Self {
        self.window = window.max(1);
        self
    }

    /// Refit hyperparameters every `every` observations; 0 disables fitting.
    pub fn with_reoptimize_every(mut self, every: usize) -> Self {
        self.reoptimize_every = every;
        self
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn params(&self) -> &KernelParams {
        &self.params
    }

    /// Normalized training inputs, oldest first.
    pub fn inputs(&self) -> &[Vec<f64>] {
        &self.inputs
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn target_mean(&self) -> f64 {
        self.target_mean
    }

    pub fn cholesky(&self) -> &CholeskyFactor {
        &self.chol
    }

    pub fn best_target(&self) -> Option<f64> {
        self.targets.iter().copied().reduce(f64::max)
    }

    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.bounds)
            .map(|(v, (lo, hi))| (v - lo) / (hi - lo))
            .collect()
    }

    pub fn denormalize(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .zip(&self.bounds)
            .map(|(v, (lo, hi))| lo + v * (hi - lo))
            .collect()
    }

    fn check_dim(&self, len: usize) -> Result<(), GpError> {
        if len != self.dim() {
            return Err(GpError::DimensionMismatch {
                expected: self.dim(),
                got: len,
            });
        }
        Ok(())
    }

    fn cross_covariance(&self, u: &[f64]) -> Vec<f64> {
        let KernelParams {
            signal_variance: s2,
            length_scale: rho,
            ..
        } = self.params;
        self.inputs
            .iter()
            .map(|xi| matern(squared_distance(u, xi).sqrt(), s2, rho))
            .collect()
    }

    fn refresh_alpha(&mut self) {
        let n = self.targets.len();
        self.target_mean = if n == 0 {
            0.0
        } else {
            self.targets.iter().sum::<f64>() / n as f64
        };
        let mut alpha: Vec<f64> = self.targets.iter().map(|y| y - self.target_mean).collect();
        self.chol.solve_lower_in_place(&mut alpha);
        self.chol.solve_upper_in_place(&mut alpha);
        self.alpha = alpha;
    }

    /// Add `(x, y)` with `x` in raw units. Extends the factor by one row,
    /// evicting the oldest point first when the window is full.
    pub fn add_observation(&mut self, x: &[f64], y: f64) -> Result<(), GpError> {
        self.check_dim(x.len())?;
        if !y.is_finite() {
            return Err(GpError::NonFinite("target"));
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(GpError::NonFinite("input"));
        }
        let u = self.normalize(x);
        if self.len() >= self.window {
            self.inputs.remove(0);
            self.targets.remove(0);
            self.chol.remove_first();
        }
        let mut cross = self.cross_covariance(&u);
        let diag = self.params.signal_variance + self.params.noise_variance;
        if self.chol.push_row(&mut cross, diag).is_err() {
            self.inputs.push(u);
            self.targets.push(y);
            self.refactorize()?;
        } else {
            self.inputs.push(u);
            self.targets.push(y);
        }
        self.refresh_alpha();
        self.since_fit += 1;
        if self.reoptimize_every > 0
            && self.len() >= MIN_POINTS_FOR_FIT
            && (!self.fitted || self.since_fit >= self.reoptimize_every)
        {
            self.optimize_hyperparams()?;
        }
        Ok(())
    }

    /// Rebuild the factor from scratch for the current inputs and params.
    pub fn refactorize(&mut self) -> Result<(), GpError> {
        let KernelParams {
            signal_variance: s2,
            length_scale: rho,
            noise_variance: noise,
        } = self.params;
        let inputs = &self.inputs;
        self.chol = CholeskyFactor::factorize(inputs.len(), |i, j| {
            if i == j {
                s2 + noise
            } else {
                matern(squared_distance(&inputs[i], &inputs[j]).sqrt(), s2, rho)
            }
        })?;
        self.refresh_alpha();
        Ok(())
    }

    pub fn set_params(&mut self, params: KernelParams) -> Result<(), GpError> {
        let old = self.params;
        self.params = params;
        if let Err(e) = self.refactorize() {
            self.params = old;
            self.refactorize()?;
            return Err(e);
        }
        Ok(())
    }

    /// Posterior at a raw-unit input.
    pub fn posterior(&self, x: &[f64]) -> Result<PosteriorStats, GpError> {
        self.check_dim(x.len())?;
        Ok(self.posterior_unit(&self.normalize(x)))
    }

    /// Posterior at a normalized input.
    pub fn posterior_unit(&self, u: &[f64]) -> PosteriorStats {
        let s2 = self.params.signal_variance;
        if self.is_empty() {
            return PosteriorStats {
                mean: self.target_mean,
                variance: s2,
            };
        }
        let mut v = self.cross_covariance(u);
        let mean = self.target_mean + dot(&v, &self.alpha);
        self.chol.solve_lower_in_place(&mut v);
        let variance = (s2 - dot(&v, &v)).clamp(0.0, s2);
        PosteriorStats { mean, variance }
    }

    /// Posterior moments and their gradients at a normalized input.
    pub fn posterior_gradient_unit(&self, u: &[f64]) -> PosteriorGradient {
        let d = self.dim();
        let KernelParams {
            signal_variance: s2,
            length_scale: rho,
            ..
        } = self.params;
        if self.is_empty() {
            return PosteriorGradient {
                stats: PosteriorStats {
                    mean: self.target_mean,
                    variance: s2,
                },
                mean_grad: vec![0.0; d],
                variance_grad: vec![0.0; d],
            };
        }
        let a = SQRT3 / rho;
        // dk/du = -s² a² exp(-a r) (u - x_j)
        let mut k = Vec::with_capacity(self.len());
        let mut slope = Vec::with_capacity(self.len());
        for xi in &self.inputs {
            let r = squared_distance(u, xi).sqrt();
            let e = (-a * r).exp();
            k.push(s2 * (1.0 + a * r) * e);
            slope.push(-s2 * a * a * e);
        }
        let mean = self.target_mean + dot(&k, &self.alpha);
        let mut w = k;
        self.chol.solve_lower_in_place(&mut w);
        let variance = (s2 - dot(&w, &w)).clamp(0.0, s2);
        self.chol.solve_upper_in_place(&mut w);

        let mut mean_grad = vec![0.0; d];
        let mut variance_grad = vec![0.0; d];
        for (j, xi) in self.inputs.iter().enumerate() {
            let cm = slope[j] * self.alpha[j];
            let cv = -2.0 * slope[j] * w[j];
            for q in 0..d {
                let diff = u[q] - xi[q];
                mean_grad[q] += cm * diff;
                variance_grad[q] += cv * diff;
            }
        }
        PosteriorGradient {
            stats: PosteriorStats { mean, variance },
            mean_grad,
            variance_grad,
        }
    }

    /// Gaussian log marginal likelihood of the centered targets under the
    /// current parameters.
    pub fn log_likelihood(&self) -> f64 {
        let centered: Vec<f64> = self.targets.iter().map(|y| y - self.target_mean).collect();
        -0.5 * dot(&centered, &self.alpha) - 0.5 * self.chol.log_det() - 0.5 * self.len() as f64 * (2.0 * PI).ln()
    }

    /// Log marginal likelihood under other parameters, without touching the
    /// model. `None` when the covariance is numerically singular.
    pub fn log_likelihood_at(&self, params: &KernelParams) -> Option<f64> {
        let problem = FitProblem::new(self);
        problem
            .evaluate(
                &[
                    params.signal_variance.ln(),
                    params.length_scale.ln(),
                    params.noise_variance.ln(),
                ],
                false,
            )
            .map(|(f, _)| f)
    }

    /// Fit s², ρ and the noise variance: score four starts by log marginal
    /// likelihood, run bounded BFGS ascent from the best, then refactorize.
    pub fn optimize_hyperparams(&mut self) -> Result<KernelParams, GpError> {
        let n = self.len();
        if n < MIN_POINTS_FOR_FIT {
            return Err(GpError::TooFewPoints(n));
        }
        self.fitted = true;
        self.since_fit = 0;
        let var = self.targets.iter().map(|y| (y - self.target_mean).powi(2)).sum::<f64>() / n as f64;
        if var <= 1e-14 * self.target_mean.abs().max(1.0).powi(2) {
            let s2 = var.max(1e-8);
            let params = KernelParams::new(s2, KernelParams::default().length_scale, NOISE_FLOOR_RATIO * s2)?;
            self.set_params(params)?;
            return Ok(params);
        }

        let problem = FitProblem::new(self);
        let lo = [
            (SIGNAL_BOUNDS.0 * var).ln(),
            LENGTH_SCALE_BOUNDS.0.ln(),
            (NOISE_BOUNDS.0 * var).ln(),
        ];
        let hi = [
            (SIGNAL_BOUNDS.1 * var).ln(),
            LENGTH_SCALE_BOUNDS.1.ln(),
            (NOISE_BOUNDS.1 * var).ln(),
        ];
        let current = [
            self.params.signal_variance.ln(),
            self.params.length_scale.ln(),
            self.params.noise_variance.ln(),
        ];
        let starts = [
            current,
            [var.ln(), 0.1f64.ln(), (1e-2 * var).ln()],
            [var.ln(), 0.5f64.ln(), (1e-2 * var).ln()],
            [var.ln(), 2.0f64.ln(), (1e-2 * var).ln()],
        ];
        // Score every start, then climb from the most likely one only.
        let mut best: Option<([f64; 3], f64)> = None;
        for start in starts {
            let start = clamp3(start, &lo, &hi);
            if let Some((f, _)) = problem.evaluate(&start, false) {
                if best.is_none_or(|(_, bf)| f > bf) {
                    best = Some((start, f));
                }
            }
        }
        let best = best.and_then(|(start, _)| problem.ascend(start, &lo, &hi));
        let Some((theta, _)) = best else {
            return Ok(self.params);
        };
        let params = KernelParams::new(theta[0].exp(), theta[1].exp(), theta[2].exp())?;
        log::debug!(
            "fit n={n} var={var:.3e}: s2={:.3e} rho={:.3} noise={:.3e}",
            params.signal_variance,
            params.length_scale,
            params.noise_variance
        );
        self.set_params(params)?;
        Ok(self.params)
    }
}

fn clamp3(x: [f64; 3], lo: &[f64; 3], hi: &[f64; 3]) -> [f64; 3] {
    [0, 1, 2].map(|k| x[k].clamp(lo[k], hi[k]))
}

struct FitPoint {
    ll: f64,
    s2: f64,
    noise: f64,
    a: f64,
    decay: Vec<f64>,
    chol: CholeskyFactor,
    alpha: Vec<f64>,
}

/// Marginal-likelihood fit over θ = (ln s², ln ρ, ln noise).
struct FitProblem {
    n: usize,
    /// Packed strictly-lower pairwise distances.
    dist: Vec<f64>,
    y: Vec<f64>,
}

impl FitProblem {
    fn new(model: &GpModel) -> Self {
        let n = model.len();
        let mut dist = Vec::with_capacity(n * n.saturating_sub(1) / 2);
        for i in 0..n {
            for j in 0..i {
                dist.push(squared_distance(&model.inputs[i], &model.inputs[j]).sqrt());
            }
        }
        FitProblem {
            n,
            dist,
            y: model.targets.iter().map(|y| y - model.target_mean).collect(),
        }
    }

    #[inline]
    fn pair(i: usize, j: usize) -> usize {
        i * (i - 1) / 2 + j
    }

    /// Log likelihood at θ, keeping what the gradient needs.
    fn likelihood(&self, theta: &[f64; 3]) -> Option<FitPoint> {
        let (s2, rho, noise) = (theta[0].exp(), theta[1].exp(), theta[2].exp());
        let noise = noise.max(NOISE_FLOOR_RATIO * s2);
        let n = self.n;
        let a = SQRT3 / rho;
        // exp(-a r) per pair, reused by the gradient
        let decay: Vec<f64> = self.dist.iter().map(|r| (-a * r).exp()).collect();
        let chol = CholeskyFactor::factorize(n, |i, j| {
            if i == j {
                s2 + noise
            } else {
                let p = Self::pair(i, j);
                s2 * (1.0 + a * self.dist[p]) * decay[p]
            }
        })
        .ok()?;
        let mut alpha = self.y.clone();
        chol.solve_lower_in_place(&mut alpha);
        let quad = dot(&alpha, &alpha);
        chol.solve_upper_in_place(&mut alpha);
        let ll = -0.5 * quad - 0.5 * chol.log_det() - 0.5 * n as f64 * (2.0 * PI).ln();
        ll.is_finite().then_some(FitPoint {
            ll,
            s2,
            noise,
            a,
            decay,
            chol,
            alpha,
        })
    }

    /// ∂ll/∂θ = ½ tr((ααᵀ − K⁻¹) ∂K/∂θ).
    fn gradient(&self, at: &FitPoint) -> [f64; 3] {
        let FitPoint {
            s2,
            noise,
            a,
            ref decay,
            ref chol,
            ref alpha,
            ..
        } = *at;
        let kinv = chol.inverse_packed();
        let (mut g_s, mut g_r, mut g_n) = (0.0, 0.0, 0.0);
        for i in 0..self.n {
            let w_ii = alpha[i] * alpha[i] - kinv[CholeskyFactor::offset(i) + i];
            g_s += w_ii * s2;
            g_n += w_ii * noise;
            for j in 0..i {
                let w_ij = 2.0 * (alpha[i] * alpha[j] - kinv[CholeskyFactor::offset(i) + j]);
                let p = Self::pair(i, j);
                let (r, e) = (self.dist[p], decay[p]);
                g_s += w_ij * s2 * (1.0 + a * r) * e;
                g_r += w_ij * s2 * a * a * r * r * e;
            }
        }
        [0.5 * g_s, 0.5 * g_r, 0.5 * g_n]
    }

    fn evaluate(&self, theta: &[f64; 3], with_grad: bool) -> Option<(f64, [f64; 3])> {
        let at = self.likelihood(theta)?;
        let g = if with_grad { self.gradient(&at) } else { [0.0; 3] };
        Some((at.ll, g))
    }

    /// Projected BFGS ascent inside the box [lo, hi].
    fn ascend(&self, start: [f64; 3], lo: &[f64; 3], hi: &[f64; 3]) -> Option<([f64; 3], f64)> {
        let (mut f, mut g) = self.evaluate(&start, true)?;
        let mut x = start;
        let mut h = identity3();
        for _ in 0..FIT_STEPS {
            let mut dir = mat_vec(&h, &g);
            if dot(&dir, &g) <= 0.0 {
                h = identity3();
                dir = g;
            }
            let mut step = 1.0;
            let mut accepted = None;
            while step > 1e-6 {
                let trial = clamp3([0, 1, 2].map(|k| x[k] + step * dir[k]), lo, hi);
                let delta = [0, 1, 2].map(|k| trial[k] - x[k]);
                let gain = dot(&g, &delta);
                if gain <= 0.0 {
                    break;
                }
                if let Some(at) = self.likelihood(&trial) {
                    if at.ll >= f + 1e-4 * gain {
                        accepted = Some((trial, at.ll, self.gradient(&at), delta));
                        break;
                    }
                }
                step *= 0.5;
            }
            let Some((xn, fn_, gn, s)) = accepted else {
                break;
            };
            // BFGS on the negated objective: y = -(gn - g).
            let yv = [0, 1, 2].map(|k| g[k] - gn[k]);
            let sy = dot(&s, &yv);
            if sy > 1e-12 {
                h = bfgs_update(&h, &s, &yv, sy);
            }
            let improvement = fn_ - f;
            x = xn;
            f = fn_;
            g = gn;
            if improvement < FIT_TOLERANCE {
                break;
            }
        }
        Some((x, f))
    }
}

type Mat3 = [[f64; 3]; 3];

fn identity3() -> Mat3 {
    [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
}

fn mat_vec(m: &Mat3, v: &[f64; 3]) -> [f64; 3] {
    [0, 1, 2].map(|i| dot(&m[i], v))
}

fn bfgs_update(h: &Mat3, s: &[f64; 3], y: &[f64; 3], sy: f64) -> Mat3 {
    let rho = 1.0 / sy;
    let hy = mat_vec(h, y);
    let yhy = dot(y, &hy);
    let mut out = *h;
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] += -rho * (hy[i] * s[j] + s[i] * hy[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_points(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| (0..d).map(|_| rng.random::<f64>()).collect()).collect()
    }

    fn fixed(params: KernelParams, d: usize) -> GpModel {
        GpModel::unit(d, params).with_reoptimize_every(0)
    }

    #[test]
    fn kernel_values() {
        let p = KernelParams::new(1.0, 3f64.sqrt(), 0.0).unwrap();
        assert_eq!(kernel(&[0.3, 0.4], &[0.3, 0.4], &p).unwrap(), 1.0);
        let v = kernel(&[0.0], &[1.0], &p).unwrap();
        assert!((v - 2.0 / std::f64::consts::E).abs() < 1e-12);
        assert!((v - 0.735759).abs() < 1e-6);
        assert!(kernel(&[0.0], &[1.0, 2.0], &p).is_err());
    }

    #[test]
    fn kernel_is_symmetric() {
        let p = KernelParams::default();
        let pts = random_points(40, 4, 3);
        for pair in pts.chunks(2) {
            assert_eq!(kernel(&pair[0], &pair[1], &p), kernel(&pair[1], &pair[0], &p));
        }
    }

    #[test]
    fn params_validation_and_noise_floor() {
        assert!(KernelParams::new(0.0, 1.0, 0.1).is_err());
        assert!(KernelParams::new(1.0, -1.0, 0.1).is_err());
        assert!(KernelParams::new(1.0, 1.0, f64::NAN).is_err());
        let p = KernelParams::new(2.0, 1.0, 0.0).unwrap();
        assert_eq!(p.noise_variance, 2e-6);
    }

    #[test]
    fn first_observation_gives_scalar_factor() {
        let p = KernelParams::new(2.0, 0.5, 0.25).unwrap();
        let mut m = fixed(p, 2);
        m.add_observation(&[0.1, 0.2], 1.0).unwrap();
        assert_eq!(m.cholesky().to_dense(), vec![vec![(2.25f64).sqrt()]]);
    }

    #[test]
    fn rejects_bad_observations() {
        let mut m = fixed(KernelParams::default(), 2);
        assert_eq!(
            m.add_observation(&[0.1], 1.0),
            Err(GpError::DimensionMismatch { expected: 2, got: 1 })
        );
        assert_eq!(
            m.add_observation(&[0.1, 0.1], f64::NAN),
            Err(GpError::NonFinite("target"))
        );
        assert!(m.is_empty());
    }

    #[test]
    fn window_cap_is_enforced() {
        let mut m = fixed(KernelParams::default(), 2).with_window(8);
        for (k, x) in random_points(20, 2, 5).iter().enumerate() {
            m.add_observation(x, k as f64).unwrap();
        }
        assert_eq!(m.len(), 8);
        assert_eq!(m.targets()[0], 12.0);
    }

    #[test]
    fn remove_first_matches_refactorization() {
        let p = KernelParams::new(1.3, 0.4, 1e-3).unwrap();
        let mut m = fixed(p, 3).with_window(10);
        for (k, x) in random_points(25, 3, 8).iter().enumerate() {
            m.add_observation(x, (k as f64).sin()).unwrap();
        }
        let incremental = m.cholesky().to_dense();
        m.refactorize().unwrap();
        let batch = m.cholesky().to_dense();
        let err: f64 = incremental
            .iter()
            .flatten()
            .zip(batch.iter().flatten())
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!(err < 1e-10, "{err}");
    }

    #[test]
    fn empty_model_returns_prior() {
        let m = fixed(KernelParams::new(3.0, 0.5, 0.1).unwrap(), 2);
        let s = m.posterior(&[0.5, 0.5]).unwrap();
        assert_eq!((s.mean, s.variance), (0.0, 3.0));
    }

    #[test]
    fn interpolates_noise_free_data() {
        let mut m = fixed(KernelParams::new(1.0, 0.3, 0.0).unwrap(), 2);
        m.add_observation(&[0.2, 0.7], 2.5).unwrap();
        m.add_observation(&[0.8, 0.1], -1.0).unwrap();
        let s = m.posterior(&[0.2, 0.7]).unwrap();
        assert!((s.mean - 2.5).abs() < 1e-4);
        assert!(s.variance < 1e-5);
    }

    #[test]
    fn far_query_reverts_to_prior() {
        let mut m =
            GpModel::new(vec![(0.0, 1.0)], KernelParams::new(2.0, 0.01, 1e-4).unwrap()).with_reoptimize_every(0);
        m.add_observation(&[0.0], 1.0).unwrap();
        m.add_observation(&[0.02], 3.0).unwrap();
        let s = m.posterior(&[1.0]).unwrap();
        assert!((s.mean - m.target_mean()).abs() < 1e-9);
        assert!((s.variance - 2.0).abs() < 1e-9);
    }

    #[test]
    fn raw_inputs_are_normalized() {
        let bounds = vec![(-82.0, -62.0), (1.0, 21.0)];
        let m = GpModel::new(bounds, KernelParams::default());
        assert_eq!(m.normalize(&[-72.0, 21.0]), vec![0.5, 1.0]);
        assert_eq!(m.denormalize(&[0.5, 1.0]), vec![-72.0, 21.0]);
    }

    #[test]
    fn constant_targets_take_degenerate_branch() {
        let mut m = fixed(KernelParams::default(), 2);
        for x in random_points(6, 2, 1) {
            m.add_observation(&x, 4.0).unwrap();
        }
        let p = m.optimize_hyperparams().unwrap();
        assert_eq!(p.signal_variance, 1e-8);
        assert_eq!(p.length_scale, KernelParams::default().length_scale);
    }

    #[test]
    fn fit_needs_five_points() {
        let mut m = fixed(KernelParams::default(), 1);
        m.add_observation(&[0.1], 1.0).unwrap();
        assert_eq!(m.optimize_hyperparams(), Err(GpError::TooFewPoints(1)));
    }

    #[test]
    fn likelihood_gradient_matches_finite_differences() {
        let mut m = fixed(KernelParams::default(), 2);
        for (k, x) in random_points(15, 2, 4).iter().enumerate() {
            m.add_observation(x, (3.0 * x[0]).sin() + 0.1 * k as f64).unwrap();
        }
        let problem = FitProblem::new(&m);
        let theta = [0.3, -1.0, -4.0];
        let (_, g) = problem.evaluate(&theta, true).unwrap();
        for k in 0..3 {
            let h = 1e-5;
            let mut up = theta;
            let mut dn = theta;
            up[k] += h;
            dn[k] -= h;
            let fd = (problem.evaluate(&up, false).unwrap().0 - problem.evaluate(&dn, false).unwrap().0) / (2.0 * h);
            assert!((fd - g[k]).abs() < 1e-5 * (1.0 + fd.abs()), "{k}: {fd} vs {}", g[k]);
        }
    }

    #[test]
    fn fitting_never_lowers_likelihood() {
        let mut m = fixed(KernelParams::default(), 3);
        for x in random_points(30, 3, 12) {
            m.add_observation(&x, (4.0 * x[0]).cos() + x[1] * x[2]).unwrap();
        }
        let before = m.log_likelihood();
        m.optimize_hyperparams().unwrap();
        assert!(m.log_likelihood() >= before - 1e-9);
        assert!((m.log_likelihood() - m.log_likelihood_at(m.params()).unwrap()).abs() < 1e-8);
    }

    #[test]
    fn automatic_refits_happen_on_schedule() {
        let mut m = GpModel::unit(1, KernelParams::default());
        let xs = random_points(5, 1, 2);
        for (k, x) in xs.iter().enumerate() {
            m.add_observation(x, k as f64 * 0.3).unwrap();
        }
        assert_ne!(*m.params(), KernelParams::default());
    }
}
