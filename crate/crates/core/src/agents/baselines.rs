//! DEFAULT, sensitivity adaptation (DSC) and Thompson-sampling baselines.
//! The last two are simplified re-implementations from one-line
//! descriptions, not faithful ports.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::topology::{Configuration, OBSS_PD_RANGE};

pub const DSC_MARGIN_DB: f64 = 1.0;

/// 5 x 5 arm grid over C.
pub const THOMPSON_ARMS: [Configuration; 25] = {
    let mut arms = [Configuration::DEFAULT; 25];
    let mut k = 0;
    while k < 25 {
        arms[k] = Configuration {
            obss_pd: -82 + 5 * (k / 5) as i32,
            tx_pwr: 1 + 5 * (k % 5) as i32,
        };
        k += 1;
    }
    arms
};

/// Keeps (−82, 20) dBm forever.
#[derive(Clone, Copy, Debug, Default)]
pub struct DefaultAgent;

impl DefaultAgent {
    pub fn step(&self) -> Configuration {
        Configuration::DEFAULT
    }
}

/// OBSS_PD just above the strongest neighbor: that neighbor no longer
/// triggers deferral. Rounded to the nearest dBm, then clamped.
pub fn dsc_step(strongest_neighbor_rssi: Option<f64>) -> Configuration {
    let obss_pd = match strongest_neighbor_rssi {
        Some(rssi) if rssi.is_finite() => (rssi + DSC_MARGIN_DB)
            .round()
            .clamp(OBSS_PD_RANGE.0 as f64, OBSS_PD_RANGE.1 as f64) as i32,
        _ => OBSS_PD_RANGE.0,
    };
    Configuration {
        obss_pd,
        tx_pwr: Configuration::DEFAULT.tx_pwr,
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct DscAgent;

impl DscAgent {
    pub fn step(&self, strongest_neighbor_rssi: Option<f64>) -> Configuration {
        dsc_step(strongest_neighbor_rssi)
    }
}

/// Conjugate Normal posterior of one arm's mean reward, known noise.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ArmStats {
    pub pulls: u64,
    pub reward_sum: f64,
}

impl ArmStats {
    pub fn posterior(&self, prior_variance: f64, noise_variance: f64) -> (f64, f64) {
        let precision = 1.0 / prior_variance + self.pulls as f64 / noise_variance;
        let mean = (self.reward_sum / noise_variance) / precision;
        (mean, 1.0 / precision)
    }
}

/// Independent Thompson sampler over [`THOMPSON_ARMS`], rewarded by the
/// normalized global reward.
#[derive(Clone, Debug)]
pub struct ThompsonAgent {
    arms: Vec<ArmStats>,
    rng: ChaCha8Rng,
    last: Option<usize>,
    prior_variance: f64,
    noise_variance: f64,
}

impl ThompsonAgent {
    pub const PRIOR_VARIANCE: f64 = 1e4;
    /// Rewards live in [0, 1]; a 0.1 standard deviation covers round-to-round
    /// fluctuation.
    pub const NOISE_VARIANCE: f64 = 0.01;

    pub fn new(seed: u64) -> Self {
        ThompsonAgent {
            arms: vec![
                ArmStats {
                    pulls: 0,
                    reward_sum: 0.0
                };
                THOMPSON_ARMS.len()
            ],
            rng: ChaCha8Rng::seed_from_u64(seed),
            last: None,
            prior_variance: Self::PRIOR_VARIANCE,
            noise_variance: Self::NOISE_VARIANCE,
        }
    }

    pub fn arms(&self) -> &[ArmStats] {
        &self.arms
    }

    pub fn posterior(&self, arm: usize) -> (f64, f64) {
        self.arms[arm].posterior(self.prior_variance, self.noise_variance)
    }

    /// Sample every arm's posterior and play the argmax.
    pub fn step(&mut self) -> Configuration {
        let mut best = (0, f64::NEG_INFINITY);
        for arm in 0..self.arms.len() {
            let (mean, var) = self.posterior(arm);
            let z: f64 = StandardNormal.sample(&mut self.rng);
            let draw = mean + var.sqrt() * z;
            if draw > best.1 {
                best = (arm, draw);
            }
        }
        self.last = Some(best.0);
        THOMPSON_ARMS[best.0]
    }

    /// Credit `reward` to the arm played last.
    pub fn observe(&mut self, reward: f64) {
        if let Some(arm) = self.last.take() {
            self.arms[arm].pulls += 1;
            self.arms[arm].reward_sum += reward;
        }
    }
}
