use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Phase, RoundMessage};
use crate::acquisition::{maximize_ei, neighborhood_bounds, AcquisitionConfig, ContinuousConfig};
use crate::consensus::Prescription;
use crate::gp::{GpModel, KernelParams, DEFAULT_REOPTIMIZE_EVERY, DEFAULT_WINDOW};
use crate::reward::local_reward;
use crate::topology::{OBSS_PD_RANGE, TX_PWR_RANGE};

#[derive(Clone, Debug, PartialEq)]
pub struct InspireSettings {
    /// Uniform-random prescriptions issued before EI takes over.
    pub bootstrap_rounds: usize,
    pub window: usize,
    pub reoptimize_every: usize,
    pub initial_kernel: KernelParams,
    pub acquisition: AcquisitionConfig,
}

impl Default for InspireSettings {
    fn default() -> Self {
        InspireSettings {
            bootstrap_rounds: 5,
            window: DEFAULT_WINDOW,
            reoptimize_every: DEFAULT_REOPTIMIZE_EVERY,
            initial_kernel: KernelParams::default(),
            acquisition: AcquisitionConfig::default(),
        }
    }
}

/// One AP running Bayesian optimization of its local reward over the joint
/// configuration of its neighborhood.
#[derive(Clone, Debug)]
pub struct InspireAgent {
    ap: usize,
    neighborhood: Vec<usize>,
    gp: GpModel,
    incumbent: Option<f64>,
    rng: ChaCha8Rng,
    bootstrap_remaining: usize,
    acquisition: AcquisitionConfig,
    invalid_rounds: usize,
}

impl InspireAgent {
    /// `neighborhood` must contain `ap`; it is sorted and deduplicated.
    pub fn new(ap: usize, mut neighborhood: Vec<usize>, seed: u64, settings: &InspireSettings) -> Self {
        neighborhood.sort_unstable();
        neighborhood.dedup();
        assert!(neighborhood.contains(&ap), "neighborhood of AP {ap} must contain it");
        let gp = GpModel::new(neighborhood_bounds(neighborhood.len()), settings.initial_kernel)
            .with_window(settings.window)
            .with_reoptimize_every(settings.reoptimize_every);
        InspireAgent {
            ap,
            neighborhood,
            gp,
            incumbent: None,
            rng: ChaCha8Rng::seed_from_u64(seed),
            bootstrap_remaining: settings.bootstrap_rounds,
            acquisition: settings.acquisition.clone(),
            invalid_rounds: 0,
        }
    }

    pub fn ap(&self) -> usize {
        self.ap
    }

    pub fn neighborhood(&self) -> &[usize] {
        &self.neighborhood
    }

    pub fn gp(&self) -> &GpModel {
        &self.gp
    }

    /// R*_{i,t}: best local reward among the observations in the window.
    pub fn incumbent(&self) -> Option<f64> {
        self.incumbent
    }

    pub fn bootstrap_remaining(&self) -> usize {
        self.bootstrap_remaining
    }

    pub fn invalid_rounds(&self) -> usize {
        self.invalid_rounds
    }

    /// Configuration for every AP of N_i: random while bootstrapping, then
    /// the EI maximizer.
    pub fn prescribe(&mut self) -> Prescription {
        let point = if self.bootstrap_remaining > 0 {
            self.bootstrap_remaining -= 1;
            let span = |r: (i32, i32), u: f64| r.0 as f64 + u * (r.1 - r.0) as f64;
            (0..self.neighborhood.len())
                .flat_map(|_| {
                    let a = span(OBSS_PD_RANGE, self.rng.random());
                    let b = span(TX_PWR_RANGE, self.rng.random());
                    [a, b]
                })
                .collect()
        } else {
            maximize_ei(&self.gp, &self.acquisition, &mut self.rng).point
        };
        Prescription {
            author: self.ap,
            targets: self
                .neighborhood
                .iter()
                .zip(point.chunks(2))
                .map(|(&j, c)| {
                    (
                        j,
                        ContinuousConfig {
                            obss_pd: c[0],
                            tx_pwr: c[1],
                        },
                    )
                })
                .collect(),
        }
    }

    /// Fold one round's REPORT messages into the model. Returns false and
    /// leaves the model untouched when a neighbor's report is missing.
    pub fn integrate(&mut self, reports: &[RoundMessage]) -> bool {
        let find = |j: usize| reports.iter().find(|m| m.sender == j && m.phase == Phase::Report);
        let reward = local_reward(
            &self.neighborhood,
            self.ap,
            |j| find(j).and_then(|m| m.selfish_reward),
            |j| find(j).and_then(|m| m.neighborhood_size),
        );
        let applied: Option<Vec<f64>> = self
            .neighborhood
            .iter()
            .map(|&j| find(j).and_then(|m| m.applied_config))
            .map(|c| c.map(|c| [c.obss_pd as f64, c.tx_pwr as f64]))
            .collect::<Option<Vec<_>>>()
            .map(|v| v.concat());
        let (reward, x) = match (reward, applied) {
            (Ok(r), Some(x)) => (r, x),
            (Err(e), _) => return self.invalidate(&e.to_string()),
            (_, None) => return self.invalidate("applied configuration missing"),
        };
        if let Err(e) = self.gp.add_observation(&x, reward) {
            return self.invalidate(&e.to_string());
        }
        self.incumbent = self.gp.best_target();
        true
    }

    fn invalidate(&mut self, why: &str) -> bool {
        self.invalid_rounds += 1;
        log::debug!("AP {} skips this round: {why}", self.ap);
        false
    }
}
